use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of |analytic - numeric| / max(1, |analytic|)
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Compares the tape gradient of the scalar function `f` at `x` against
/// central differences with step `eps`, over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_coords(f, x, eps, &coords)
}

/// [`grad_check`] restricted to the listed coordinates.
pub fn grad_check_coords<F>(
    f: F,
    x: &Tensor<f64>,
    eps: f64,
    coords: &[usize],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid(format!("grad_check eps must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone(), true);
    let root = f(&mut tape, leaf)?;
    if tape.value(root).numel() != 1 {
        return Err(Error::invalid(format!(
            "grad_check needs a scalar function, got shape {:?}",
            tape.shape(root)
        )));
    }
    let analytic = tape.backward(root)?.get_or_zeros(leaf, x.numel());

    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(probe, false);
        let root = f(&mut tape, leaf)?;
        Ok(tape.value(root).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    for &i in coords {
        if i >= x.numel() {
            return Err(Error::invalid(format!("coordinate {i} out of range")));
        }
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(1.0);
        if err > report.max_rel_error || report.coords_checked == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
        report.coords_checked += 1;
    }
    Ok(report)
}
