//! Finite-difference gradient verification.
//!
//! [`check`] compares the tape's analytic gradients against central
//! differences computed with nothing but repeated forward evaluations, so it
//! cannot inherit a bug from the backward pass it is checking. Used by unit
//! tests for individual operations and by the acceptance suite for the full
//! model composition.

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct Report {
    /// Worst relative error among components outside the absolute fallback.
    pub max_rel_err: f64,
    /// Worst absolute error over all components.
    pub max_abs_err: f64,
    /// `(parameter index, component index)` of the worst relative error.
    pub worst: (usize, usize),
    /// Total number of components compared.
    pub checked: usize,
}

/// Default step size for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Absolute error below which a component passes regardless of relative
/// error; central differences bottom out around 1e-10 in `f64`, so demanding
/// relative accuracy of near-zero gradients would only measure noise.
pub const ABS_FALLBACK: f64 = 1e-6;

/// Compares analytic and numeric gradients of `build` w.r.t. `params`.
///
/// `build` receives a fresh tape plus one leaf per entry of `params` and
/// must return a scalar root. It is called once for the analytic pass and
/// twice per parameter component for the numeric pass, so keep the toy
/// problems small.
pub fn check<F>(params: &[Tensor], step: f64, build: F) -> Result<Report>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &vars)?;
        Ok(tape.scalar_value(root))
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = build(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    // Numeric gradients via central differences.
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = Report {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for pi in 0..params.len() {
        for ci in 0..params[pi].numel() {
            let original = work[pi].data()[ci];
            work[pi].data_mut()[ci] = original + step;
            let plus = eval(&work)?;
            work[pi].data_mut()[ci] = original - step;
            let minus = eval(&work)?;
            work[pi].data_mut()[ci] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi][ci];
            let abs = (a - numeric).abs();
            report.max_abs_err = report.max_abs_err.max(abs);
            report.checked += 1;
            if abs >= ABS_FALLBACK {
                let rel = abs / a.abs().max(numeric.abs());
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst = (pi, ci);
                }
            }
        }
    }
    Ok(report)
}
