//! Exponential moving average of denoiser parameters.

use std::collections::HashMap;

use crate::error::{DdmiError, Result};
use crate::nn::Params;
use crate::tensor::{Element, Tensor};

/// Shadow copy of the denoiser weights, updated as
/// `shadow <- decay * shadow + (1 - decay) * live` per tensor.
pub struct EmaState<E: Element = f32> {
    pub decay: f64,
    shadow: HashMap<String, Vec<E>>,
}

impl<E: Element> EmaState<E> {
    pub fn from_params<P: Params<E>>(params: &mut P, decay: f64) -> Result<EmaState<E>> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(DdmiError::Config(format!("EMA decay must be in (0,1), got {decay}")));
        }
        let mut shadow = HashMap::new();
        params.visit_trainable(&mut |name, t| {
            shadow.insert(name.to_string(), t.to_vec());
        });
        Ok(EmaState { decay, shadow })
    }

    /// One averaging step; the live parameters are read, never written.
    pub fn update<P: Params<E>>(&mut self, live: &mut P) -> Result<()> {
        let d = E::from_f64(self.decay);
        let omd = E::from_f64(1.0 - self.decay);
        let mut missing: Option<String> = None;
        let shadow = &mut self.shadow;
        live.visit_trainable(&mut |name, t| {
            match shadow.get_mut(name) {
                Some(buf) => {
                    if buf.len() != t.numel() {
                        missing = Some(name.to_string());
                        return;
                    }
                    let live_data = t.data();
                    for i in 0..buf.len() {
                        buf[i] = d * buf[i] + omd * live_data[i];
                    }
                }
                None => missing = Some(name.to_string()),
            }
        });
        match missing {
            Some(name) => Err(DdmiError::ShapeMismatch { expected: vec![], got: vec![name.len()] }),
            None => Ok(()),
        }
    }

    /// Overwrite `target`'s parameters with the shadow values.
    pub fn write_into<P: Params<E>>(&self, target: &mut P) -> Result<()> {
        let shadow = &self.shadow;
        let mut err = false;
        target.visit_trainable(&mut |name, t| {
            if let Some(buf) = shadow.get(name) {
                if buf.len() == t.numel() {
                    *t = Tensor::from_vec(buf.clone(), t.shape()).expect("shadow shape").tracked();
                    return;
                }
            }
            err = true;
        });
        if err {
            return Err(DdmiError::Checkpoint("EMA shadow does not match target".into()));
        }
        Ok(())
    }

    pub fn export(&self) -> Vec<(String, Vec<E>)> {
        let mut names: Vec<&String> = self.shadow.keys().collect();
        names.sort();
        names.into_iter().map(|n| (n.clone(), self.shadow[n].clone())).collect()
    }

    pub fn import(decay: f64, entries: Vec<(String, Vec<E>)>) -> Result<EmaState<E>> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(DdmiError::Config(format!("EMA decay must be in (0,1), got {decay}")));
        }
        Ok(EmaState { decay, shadow: entries.into_iter().collect() })
    }
}
