//! Central finite-difference gradient checks at f64.

use super::graph::{Graph, Var};
use super::tape::Tape;
use super::tensor::Tensor;
use crate::Result;

/// Floor on the denominator of the relative error. Coordinates whose true
/// derivative is below it are judged by absolute error instead: a central
/// difference on an `O(1)` loss carries ~1e-10 of rounding noise, which
/// swamps derivatives of 1e-8 and smaller.
pub const REL_FLOOR: f64 = 1e-4;

/// Max relative error `|analytic - numeric| / max(|numeric|, REL_FLOOR)`
/// between the tape gradient of `f` and a central difference, over every
/// coordinate of `point`.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, Var) -> Result<Var>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        eps,
    )
}

/// [`grad_check`] over several inputs at once; `f` receives one leaf per point.
pub fn grad_check_many<F>(f: F, points: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> Result<Var>,
{
    assert!(eps > 0.0, "eps must be positive");

    let analytic: Vec<Tensor<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p)).collect();
        let out = f(&mut tape, &vars)?;
        let mut grads = tape.backward(out)?;
        vars.iter().map(|&v| grads.take(v)).collect()
    };

    let eval = |pts: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.leaf(p)).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut work: Vec<Tensor<f64>> = points.to_vec();
    let mut worst = 0.0f64;
    for p in 0..points.len() {
        for i in 0..points[p].len() {
            let x0 = points[p].data()[i];
            work[p].data_mut()[i] = x0 + eps;
            let up = eval(&work)?;
            work[p].data_mut()[i] = x0 - eps;
            let down = eval(&work)?;
            work[p].data_mut()[i] = x0;

            let numeric = (up - down) / (2.0 * eps);
            let err = (analytic[p].data()[i] - numeric).abs() / numeric.abs().max(REL_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
