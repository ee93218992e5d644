//! Central-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Param;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries: usize,
}

/// Compares the analytic gradient of the scalar built by `f` against central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε`, entry by entry, over every listed
/// parameter. `f` must be deterministic; it is called on a fresh tape each
/// time.
pub fn grad_check<F>(f: F, params: &[(String, Param<f64>)], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::invalid(format!("grad_check eps {eps} outside [1e-6, 1e-4]")));
    }
    for (_, p) in params {
        p.zero_grad();
    }
    let mut tape = Tape::new();
    let loss = f(&mut tape)?;
    tape.backward(loss)?;
    drop(tape);

    let eval = || -> Result<f64> {
        let mut tape = Tape::inference();
        let v = f(&mut tape)?;
        Ok(tape.value(v).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
    };
    for (name, p) in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.read().numel()]);
        for (i, &a) in analytic.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite { param: name.clone(), index: i });
            }
            let orig = p.read().data()[i];
            p.write().data_mut()[i] = orig + eps;
            let up = eval();
            p.write().data_mut()[i] = orig - eps;
            let down = eval();
            p.write().data_mut()[i] = orig;
            let (up, down) = (up?, down?);
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite { param: name.clone(), index: i });
            }
            let numeric = (up - down) / (2.0 * eps);
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.entries += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
