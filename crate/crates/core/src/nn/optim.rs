//! AdamW: adaptive moments with decoupled weight decay.

use std::collections::HashMap;

use super::Params;
use crate::tensor::{Element, Gradients, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

pub struct AdamW<E: Element = f32> {
    pub cfg: AdamWConfig,
    step: u64,
    m: HashMap<String, Vec<E>>,
    v: HashMap<String, Vec<E>>,
}

impl<E: Element> AdamW<E> {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW { cfg, step: 0, m: HashMap::new(), v: HashMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update. Parameters without a gradient entry are left
    /// untouched (e.g. heads not exercised by this loss).
    pub fn step<P: Params<E>>(&mut self, params: &mut P, grads: &Gradients<E>) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = E::from_f64(self.cfg.beta1);
        let b2 = E::from_f64(self.cfg.beta2);
        let one_m_b1 = E::from_f64(1.0 - self.cfg.beta1);
        let one_m_b2 = E::from_f64(1.0 - self.cfg.beta2);
        let bias1 = E::from_f64(1.0 / (1.0 - self.cfg.beta1.powi(t)));
        let bias2 = E::from_f64(1.0 / (1.0 - self.cfg.beta2.powi(t)));
        let lr = E::from_f64(self.cfg.lr);
        let eps = E::from_f64(self.cfg.eps);
        let wd = E::from_f64(self.cfg.lr * self.cfg.weight_decay);

        let m = &mut self.m;
        let v = &mut self.v;
        params.visit_trainable(&mut |name, param| {
            let Some(g) = grads.wrt(param) else { return };
            let n = param.numel();
            let mbuf = m.entry(name.to_string()).or_insert_with(|| vec![E::ZERO; n]);
            let vbuf = v.entry(name.to_string()).or_insert_with(|| vec![E::ZERO; n]);
            let mut data = param.to_vec();
            for i in 0..n {
                mbuf[i] = b1 * mbuf[i] + one_m_b1 * g[i];
                vbuf[i] = b2 * vbuf[i] + one_m_b2 * g[i] * g[i];
                let mhat = mbuf[i] * bias1;
                let vhat = vbuf[i] * bias2;
                data[i] = data[i] - lr * mhat / (vhat.sqrt() + eps) - wd * data[i];
            }
            *param = Tensor::from_vec(data, param.shape()).expect("param shape").tracked();
        });
    }

    /// Moment buffers as named tensors, for checkpointing.
    pub fn export_state(&self) -> Vec<(String, Vec<E>)> {
        let mut out = Vec::new();
        let mut names: Vec<&String> = self.m.keys().collect();
        names.sort();
        for name in names {
            out.push((format!("{name}.m"), self.m[name].clone()));
            out.push((format!("{name}.v"), self.v[name].clone()));
        }
        out
    }

    pub fn import_state(&mut self, step: u64, entries: Vec<(String, Vec<E>)>) {
        self.step = step;
        self.m.clear();
        self.v.clear();
        for (name, data) in entries {
            if let Some(base) = name.strip_suffix(".m") {
                self.m.insert(base.to_string(), data);
            } else if let Some(base) = name.strip_suffix(".v") {
                self.v.insert(base.to_string(), data);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    struct OneParam {
        w: Tensor<f64>,
    }

    impl Params<f64> for OneParam {
        fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
            f("w", &mut self.w);
        }
    }

    #[test]
    fn quadratic_descends() {
        let mut p = OneParam { w: Tensor::from_vec(vec![3.0, -2.0], &[2]).unwrap().tracked() };
        let mut opt: AdamW<f64> =
            AdamW::new(AdamWConfig { lr: 0.05, weight_decay: 0.0, ..Default::default() });
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let loss = p.w.square().sum();
            let grads = loss.backward().unwrap();
            opt.step(&mut p, &grads);
            last = loss.item();
        }
        assert!(last < 1e-2, "loss after descent {last}");
    }

    #[test]
    fn state_round_trip_resumes_identically() {
        let mk = || OneParam { w: Tensor::from_vec(vec![1.0, 2.0, 3.0], &[3]).unwrap().tracked() };
        let run = |steps: usize, import: Option<(u64, Vec<(String, Vec<f64>)>)>, p: &mut OneParam| {
            let mut opt: AdamW<f64> = AdamW::new(AdamWConfig::default());
            if let Some((s, st)) = import {
                opt.import_state(s, st);
            }
            for _ in 0..steps {
                let loss = p.w.square().sum();
                let grads = loss.backward().unwrap();
                opt.step(p, &grads);
            }
            (opt.step_count(), opt.export_state())
        };

        // 10 straight steps
        let mut a = mk();
        run(10, None, &mut a);

        // 6 steps, export, resume for 4 more
        let mut b = mk();
        let (s, state) = run(6, None, &mut b);
        run(4, Some((s, state)), &mut b);

        assert_eq!(a.w.to_vec(), b.w.to_vec());
    }
}
