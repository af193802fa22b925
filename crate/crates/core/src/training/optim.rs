//! AdamW over named parameter groups with per-group base learning rates,
//! decay exclusions and optional global-norm gradient clipping.

use candle_core::backprop::GradStore;
use candle_core::{DType, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Biases and normalization parameters are not decayed.
pub fn is_decayed(name: &str) -> bool {
    !(name.ends_with("bias") || name.split('.').any(|part| part.starts_with("norm")))
}

struct Group {
    base_lr: f64,
    vars: Vec<Var>,
    opt: AdamW,
}

pub struct GroupedAdamW {
    groups: Vec<Group>,
    clip_norm: Option<f64>,
}

impl std::fmt::Debug for GroupedAdamW {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GroupedAdamW")
            .field("groups", &self.groups.iter().map(|g| (g.base_lr, g.vars.len())).collect::<Vec<_>>())
            .field("clip_norm", &self.clip_norm)
            .finish()
    }
}

impl GroupedAdamW {
    /// `lr_for` maps a parameter name to its base learning rate; parameters
    /// sharing a rate and decay setting share one optimizer state.
    pub fn new(
        store: &ParamStore,
        lr_for: impl Fn(&str) -> f64,
        weight_decay: f64,
        clip_norm: Option<f64>,
    ) -> Result<Self> {
        let mut buckets: Vec<(f64, bool, Vec<Var>)> = Vec::new();
        for (name, var) in store.vars() {
            let lr = lr_for(&name);
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning rate {lr} for {name}")));
            }
            let decay = is_decayed(&name);
            match buckets.iter_mut().find(|(l, d, _)| *l == lr && *d == decay) {
                Some((_, _, v)) => v.push(var),
                None => buckets.push((lr, decay, vec![var])),
            }
        }
        let groups = buckets
            .into_iter()
            .map(|(lr, decay, vars)| {
                let params = ParamsAdamW {
                    lr,
                    weight_decay: if decay { weight_decay } else { 0.0 },
                    ..Default::default()
                };
                Ok(Group {
                    base_lr: lr,
                    opt: AdamW::new(vars.clone(), params)?,
                    vars,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { groups, clip_norm })
    }

    /// Scales every group's learning rate to `base · factor`.
    pub fn set_lr_factor(&mut self, factor: f64) {
        for g in &mut self.groups {
            g.opt.set_learning_rate(g.base_lr * factor);
        }
    }

    /// Global L2 norm of the gradients of this optimizer's parameters.
    pub fn grad_norm(&self, grads: &GradStore) -> Result<f64> {
        let mut sq = 0.0;
        for g in &self.groups {
            for v in &g.vars {
                if let Some(t) = grads.get(v.as_tensor()) {
                    sq += t.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
                }
            }
        }
        Ok(sq.sqrt())
    }

    /// Clips (if configured) and applies one update. Returns the pre-clip
    /// gradient norm.
    pub fn step(&mut self, grads: &mut GradStore) -> Result<f64> {
        let norm = self.grad_norm(grads)?;
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm {norm}")));
        }
        if let Some(max) = self.clip_norm {
            if norm > max {
                let scale = max / (norm + 1e-6);
                for g in &self.groups {
                    for v in &g.vars {
                        if let Some(t) = grads.remove(v.as_tensor()) {
                            grads.insert(v.as_tensor(), (t * scale)?);
                        }
                    }
                }
            }
        }
        for g in &mut self.groups {
            g.opt.step(grads)?;
        }
        Ok(norm)
    }
}
