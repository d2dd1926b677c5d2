//! Learning-rate schedule, gradient clipping, and the decoupled-weight-decay
//! Adam update.

use std::collections::BTreeMap;

use crate::error::{Result, TgError};
use crate::model::OptState;
use crate::tensor::ParamSet;

use super::TrainHyper;

/// Linear warm-up to lr_max at `warmup_steps`, then linear decay to zero at
/// `total_steps`.
pub fn lr_schedule(step: u64, hp: &TrainHyper) -> f64 {
    if hp.total_steps == 0 {
        return 0.0;
    }
    if step >= hp.total_steps {
        return 0.0;
    }
    if hp.warmup_steps > 0 && step < hp.warmup_steps {
        return hp.lr_max * step as f64 / hp.warmup_steps as f64;
    }
    if hp.total_steps == hp.warmup_steps {
        return hp.lr_max;
    }
    hp.lr_max * (hp.total_steps - step) as f64 / (hp.total_steps - hp.warmup_steps) as f64
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let sq: f64 = grads
        .values()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// One AdamW step over exactly the parameters named in `grads`.
///
/// Decay is decoupled: θ ← θ − lr·(m̂/(√v̂+ε)) − lr·wd·θ, with bias-corrected
/// moments. Frozen parameters must simply not appear in `grads`; a gradient
/// for a parameter without optimizer state is an error.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut OptState,
    hp: &TrainHyper,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(TgError::Diverged {
                step: state.t,
                detail: format!("gradient for {name} is {bad}"),
            });
        }
        if params.get(name)?.numel() != g.len() {
            return Err(TgError::Dim(format!(
                "adamw: gradient length {} vs parameter {name} with {} scalars",
                g.len(),
                params.get(name)?.numel()
            )));
        }
        if !state.m.contains_key(name) {
            return Err(TgError::Invalid(format!(
                "adamw: {name} has no optimizer state (frozen parameter?)"
            )));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);

    for (name, g) in grads {
        let m = state.m.get_mut(name).unwrap();
        let v = state.v.get_mut(name).unwrap();
        let theta = params.get_mut(name)?.data_mut();
        for i in 0..g.len() {
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let update = lr * m_hat / (v_hat.sqrt() + hp.eps_adam);
            let decay = lr * hp.weight_decay * theta[i];
            theta[i] -= update + decay;
        }
    }
    Ok(())
}
