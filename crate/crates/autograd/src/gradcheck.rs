//! Central finite-difference oracle for backward rules.

use crate::error::{AutogradError, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max of `|analytic - numeric| / max(|analytic|, |numeric|)` over every
    /// element whose analytic gradient is nonzero.
    pub max_relative_error: f64,
    /// Max `|numeric|` over elements whose analytic gradient is exactly zero.
    pub max_abs_error_at_zero: f64,
    /// `(input, flat element)` with the largest relative error.
    pub worst: Option<(usize, usize)>,
    pub elements: usize,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.max_relative_error < rel_tol && self.max_abs_error_at_zero < abs_tol
    }
}

fn evaluate<T: Real, F>(f: &F, inputs: &[Tensor<T>]) -> Result<f64>
where
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::<T>::new();
    let vars = inputs
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item()?.as_f64())
}

/// Compare the backward pass of `f` against `(f(x+h) - f(x-h)) / 2h` for
/// every element of every input.
///
/// The denominator uses the perturbation actually representable in `T`, so
/// the only remaining error sources are truncation and forward rounding.
/// Run with `T = f64` for tight tolerances.
pub fn finite_diff_check<T: Real, F>(f: F, inputs: &[Tensor<T>], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(AutogradError::InvalidArgument {
            op: "finite_diff_check",
            detail: format!("step {step} must be positive"),
        });
    }
    let mut g = Graph::<T>::new();
    let vars = inputs
        .iter()
        .map(|t| g.variable(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(AutogradError::NotScalar(g.shape(out).to_vec()));
    }
    g.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_abs_error_at_zero: 0.0,
        worst: None,
        elements: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let x = input.data()[j];
            let plus = x + T::lit(step);
            let minus = x - T::lit(step);
            probe[i].data_mut()[j] = plus;
            let fp = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = minus;
            let fm = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = x;
            let numeric = (fp - fm) / (plus - minus).as_f64();
            let a = analytic[i].data()[j].as_f64();
            report.elements += 1;
            if a == 0.0 {
                report.max_abs_error_at_zero = report.max_abs_error_at_zero.max(numeric.abs());
            } else {
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
                if rel > report.max_relative_error {
                    report.max_relative_error = rel;
                    report.worst = Some((i, j));
                }
            }
        }
    }
    Ok(report)
}
