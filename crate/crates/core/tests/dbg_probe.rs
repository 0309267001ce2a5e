use ddmikit::pipeline::*;

#[test]
fn lr_decay_probe() {
    let ck = Checkpoint::load(std::path::Path::new("/tmp/smoke/run3/stage1.ckpt")).unwrap();
    let mut state = PipelineState::from_checkpoint(&ck).unwrap();
    let data = Dataset::from_config(&state.cfg).unwrap();
    let (_, holdout) = split_indices(&state.cfg, data.len());
    eprintln!("before: {:.2}", state.eval_reconstruction(&data, &holdout).unwrap());
    state.opt1.cfg.lr = 2e-5;
    state.train_stage1(&data, 1000, None).unwrap();
    eprintln!("after 1000 steps at lr 2e-5: {:.2}", state.eval_reconstruction(&data, &holdout).unwrap());
    state.opt1.cfg.lr = 5e-6;
    state.train_stage1(&data, 500, None).unwrap();
    eprintln!("after 500 more at lr 5e-6: {:.2}", state.eval_reconstruction(&data, &holdout).unwrap());
}
