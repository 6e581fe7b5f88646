//! Central finite-difference verification of tape gradients.
//!
//! Relative error per coordinate is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)`;
//! the floor keeps coordinates whose true gradient is ~0 from dividing noise by noise.

use super::param::ParameterSet;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn build(analytic: Vec<f64>, numeric: Vec<f64>, tolerance: f64) -> Self {
        let relative_errors: Vec<f64> = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| relative_error(*a, *n))
            .collect();
        let max_relative_error = relative_errors.iter().copied().fold(0.0, f64::max);
        GradCheckReport {
            passed: max_relative_error < tolerance && relative_errors.iter().all(|e| e.is_finite()),
            analytic,
            numeric,
            relative_errors,
            max_relative_error,
            tolerance,
        }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.numel() != 1 {
        return Err(Error::shape(
            "finite_difference_check",
            format!("function must return a scalar, got shape {:?}", t.shape()),
        ));
    }
    Ok(t.data()[0])
}

/// Compares the tape gradient of `f` at `at` with central differences
/// `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate.
pub fn finite_difference_check<F>(f: F, at: &Tensor, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if at.dtype() != DType::F64 {
        return Err(Error::invalid("finite_difference_check needs a float64 point"));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(at.clone());
    let y = f(&mut tape, x)?;
    scalar_of(&tape, y)?;
    let analytic = tape.gradients(y)?.get(x)?.into_data();

    let eval = |data: Vec<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let xv = t.leaf(Tensor::new(at.shape(), data, DType::F64)?);
        let yv = f(&mut t, xv)?;
        scalar_of(&t, yv)
    };
    let mut numeric = Vec::with_capacity(at.numel());
    for i in 0..at.numel() {
        let mut plus = at.data().to_vec();
        let mut minus = at.data().to_vec();
        plus[i] += step;
        minus[i] -= step;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * step));
    }
    Ok(GradCheckReport::build(analytic, numeric, tolerance))
}

/// Same check over the parameters of a model. `loss` builds the objective on a
/// fresh tape; `coords_per_param` limits how many (evenly spaced) coordinates of
/// each parameter are perturbed, 0 meaning all of them.
pub fn check_parameter_gradients<P, F>(
    model: &mut P,
    mut loss: F,
    step: f64,
    tolerance: f64,
    coords_per_param: usize,
) -> Result<GradCheckReport>
where
    P: ParameterSet,
    F: FnMut(&mut P, &mut Tape) -> Result<Var>,
{
    model.zero_grad();
    let mut tape = Tape::new();
    let y = loss(model, &mut tape)?;
    scalar_of(&tape, y)?;
    tape.backward(y, model)?;

    let mut targets: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    model.for_each_param(&mut |p| {
        if p.value().dtype() != DType::F64 {
            return;
        }
        let n = p.value().numel();
        let coords: Vec<usize> = if coords_per_param == 0 || coords_per_param >= n {
            (0..n).collect()
        } else {
            (0..coords_per_param).map(|j| j * n / coords_per_param).collect()
        };
        let grads = coords.iter().map(|&c| p.grad().data()[c]).collect();
        targets.push((p.name().to_string(), coords, grads));
    });
    if targets.is_empty() {
        return Err(Error::invalid("parameter gradient check needs float64 parameters"));
    }

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (name, coords, grads) in &targets {
        for (&c, &g) in coords.iter().zip(grads) {
            let original = coordinate(model, name, c);
            let mut values = [0.0; 2];
            for (slot, delta) in [step, -step].into_iter().enumerate() {
                set_coordinate(model, name, c, original + delta);
                let mut t = Tape::new();
                let yv = loss(model, &mut t);
                set_coordinate(model, name, c, original);
                let yv = yv?;
                values[slot] = scalar_of(&t, yv)?;
            }
            analytic.push(g);
            numeric.push((values[0] - values[1]) / (2.0 * step));
        }
    }
    model.zero_grad();
    Ok(GradCheckReport::build(analytic, numeric, tolerance))
}

fn coordinate<P: ParameterSet>(model: &P, name: &str, coord: usize) -> f64 {
    let mut out = 0.0;
    model.for_each_param(&mut |p| {
        if p.name() == name {
            out = p.value().data()[coord];
        }
    });
    out
}

fn set_coordinate<P: ParameterSet>(model: &mut P, name: &str, coord: usize, value: f64) {
    model.for_each_param_mut(&mut |p| {
        if p.name() == name {
            p.update(|i, v| if i == coord { value } else { v });
        }
    });
}
