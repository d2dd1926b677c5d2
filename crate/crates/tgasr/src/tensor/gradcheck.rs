//! Central finite-difference verification of reverse-mode gradients.

use std::collections::BTreeMap;

use crate::error::{Result, TgError};

use super::{NodeId, ParamSet, Tape};

/// A forward graph built for checking: the tape, its scalar loss node, and
/// the leaf node bound for each parameter name.
pub struct BuiltGraph {
    pub tape: Tape,
    pub loss: NodeId,
    pub bound: BTreeMap<String, NodeId>,
}

/// Outcome of a finite-difference sweep over a parameter set.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked_scalars: usize,
    pub tol: f64,
    pub pass: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "grad_check: {} over {} scalars, max rel err {:.3e} at {}[{}] (tol {:.1e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.checked_scalars,
            self.max_rel_err,
            self.worst_param,
            self.worst_index,
            self.tol
        )
    }
}

// Relative error floor: FD noise on O(1) losses sits near 1e-10, so
// differences against near-zero gradients are measured against this floor
// rather than reported as huge relative errors.
const REL_FLOOR: f64 = 1e-5;

/// Compare analytic gradients against central finite differences.
///
/// `build` must deterministically construct the forward graph from the given
/// parameters. Every scalar of every parameter in `names` is perturbed by
/// ±eps (two loss evaluations each); analytic gradients come from a single
/// backward pass at the base point. Non-determinism is detected by evaluating
/// the base point twice and requiring bit-identical losses.
pub fn grad_check<F>(
    params: &ParamSet,
    names: &[String],
    build: F,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<BuiltGraph>,
{
    let mut base = build(params)?;
    let base_loss = base.tape.value(base.loss).data()[0];
    let repeat = build(params)?;
    let repeat_loss = repeat.tape.value(repeat.loss).data()[0];
    if base_loss.to_bits() != repeat_loss.to_bits() {
        return Err(TgError::Graph(format!(
            "grad_check: non-deterministic function ({base_loss} vs {repeat_loss})"
        )));
    }

    base.tape.backward(base.loss)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked_scalars: 0,
        tol,
        pass: true,
    };

    for name in names {
        let node = *base.bound.get(name).ok_or_else(|| {
            TgError::Graph(format!("grad_check: {name} was not bound by the builder"))
        })?;
        let analytic = base
            .tape
            .grad(node)
            .ok_or_else(|| TgError::Graph(format!("grad_check: no gradient for {name}")))?
            .to_vec();

        let n = params.get(name)?.numel();
        debug_assert_eq!(analytic.len(), n);
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            plus.get_mut(name)?.data_mut()[i] += eps;
            let gp = build(&plus)?;
            let fp = gp.tape.value(gp.loss).data()[0];

            let mut minus = params.clone();
            minus.get_mut(name)?.data_mut()[i] -= eps;
            let gm = build(&minus)?;
            let fm = gm.tape.value(gm.loss).data()[0];

            let fd = (fp - fm) / (2.0 * eps);
            let denom = a.abs().max(fd.abs()).max(REL_FLOOR);
            let rel = (a - fd).abs() / denom;
            report.checked_scalars += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    report.pass = report.max_rel_err < tol;
    Ok(report)
}
