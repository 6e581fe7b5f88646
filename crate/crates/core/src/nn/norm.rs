//! Batch and instance normalization layers.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel affine parameters plus running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub scale: Parameter,
    pub shift: Parameter,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(prefix: &str, channels: usize, dtype: DType) -> Self {
        BatchNormState {
            scale: Parameter::new(format!("{prefix}.scale"), Tensor::full(&[channels], 1.0, dtype)),
            shift: Parameter::new(format!("{prefix}.shift"), Tensor::zeros(&[channels], dtype)),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceNormParams {
    pub scale: Parameter,
    pub shift: Parameter,
    pub eps: f64,
}

impl InstanceNormParams {
    pub fn new(prefix: &str, channels: usize, dtype: DType) -> Self {
        InstanceNormParams {
            scale: Parameter::new(format!("{prefix}.scale"), Tensor::full(&[channels], 1.0, dtype)),
            shift: Parameter::new(format!("{prefix}.shift"), Tensor::zeros(&[channels], dtype)),
            eps: DEFAULT_EPS,
        }
    }
}

/// In train mode normalizes with batch statistics over (N, H, W) per channel
/// and folds them into the running estimates as
/// `run = (1 - momentum) * run + momentum * batch`. Eval mode uses only the
/// running estimates.
pub fn batch_norm_forward(tape: &mut Tape, x: Var, state: &mut BatchNormState, mode: Mode) -> Result<Var> {
    if state.eps <= 0.0 {
        return Err(Error::invalid("batch_norm: epsilon must be positive"));
    }
    let gamma = tape.param(&state.scale);
    let beta = tape.param(&state.shift);
    match mode {
        Mode::Train => {
            let (y, mean, var) = tape.batch_norm(x, gamma, beta, state.eps)?;
            let m = state.momentum;
            for (run, b) in state.running_mean.iter_mut().zip(&mean) {
                *run = (1.0 - m) * *run + m * b;
            }
            for (run, b) in state.running_var.iter_mut().zip(&var) {
                *run = (1.0 - m) * *run + m * b;
            }
            Ok(y)
        }
        Mode::Eval => tape.batch_norm_eval(x, gamma, beta, &state.running_mean, &state.running_var, state.eps),
    }
}

/// Standardizes each sample's channels with that sample's own spatial
/// statistics; no running state, identical in train and eval mode.
pub fn instance_norm_forward(tape: &mut Tape, x: Var, params: &InstanceNormParams) -> Result<Var> {
    let gamma = tape.param(&params.scale);
    let beta = tape.param(&params.shift);
    tape.instance_norm(x, gamma, beta, params.eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_bn(x: Tensor, state: &mut BatchNormState, mode: Mode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = batch_norm_forward(&mut tape, xv, state, mode)?;
        Ok(tape.value(y).clone())
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let mut st = BatchNormState::new("bn", 2, DType::F64);
        let y = run_bn(Tensor::full(&[3, 2, 2, 2], 4.2, DType::F64), &mut st, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let p = InstanceNormParams::new("in", 2, DType::F64);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[3, 2, 2, 2], -7.0, DType::F64));
        let y = instance_norm_forward(&mut tape, x, &p).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_two_values_become_plus_minus_one() {
        let mut st = BatchNormState::new("bn", 1, DType::F64);
        st.eps = 1e-300;
        let x = Tensor::new(&[2, 1], vec![0.0, 2.0], DType::F64).unwrap();
        let y = run_bn(x, &mut st, Mode::Train).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-12 && (y.data()[1] - 1.0).abs() < 1e-12);
        // running stats moved 10% toward mean 1, var 1
        assert!((st.running_mean[0] - 0.1).abs() < 1e-15);
        assert!((st.running_var[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eval_mode_affine_identity() {
        let mut st = BatchNormState::new("bn", 1, DType::F64);
        st.eps = 1e-300;
        st.scale.set_value(Tensor::full(&[1], 2.0, DType::F64)).unwrap();
        st.shift.set_value(Tensor::full(&[1], 3.0, DType::F64)).unwrap();
        let y = run_bn(Tensor::full(&[1, 1], 1.0, DType::F64), &mut st, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn single_sample_train_batch_is_an_error() {
        let mut st = BatchNormState::new("bn", 1, DType::F64);
        assert!(run_bn(Tensor::zeros(&[1, 1, 2, 2], DType::F64), &mut st, Mode::Train).is_err());
        st.eps = 0.0;
        assert!(run_bn(Tensor::zeros(&[2, 1, 2, 2], DType::F64), &mut st, Mode::Eval).is_err());
    }

    #[test]
    fn instance_pair_becomes_plus_minus_one() {
        let mut p = InstanceNormParams::new("in", 1, DType::F64);
        p.eps = 1e-300;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 1, 1, 2], vec![1.0, 3.0], DType::F64).unwrap());
        let y = instance_norm_forward(&mut tape, x, &p).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] + 1.0).abs() < 1e-12 && (d[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn instance_norm_needs_spatial_extent() {
        let p = InstanceNormParams::new("in", 1, DType::F64);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[4, 1, 1, 1], DType::F64));
        assert!(instance_norm_forward(&mut tape, x, &p).is_err());
    }
}
