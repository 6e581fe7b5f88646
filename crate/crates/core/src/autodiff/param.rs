use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape(), value.dtype());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn set_value(&mut self, value: Tensor) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::shape(
                "set_value",
                format!(
                    "parameter '{}' is {:?}, got {:?}",
                    self.name,
                    self.value.shape(),
                    value.shape()
                ),
            ));
        }
        self.value = value.to_dtype(self.value.dtype());
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = Tensor::zeros(self.value.shape(), self.value.dtype());
    }

    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.grad.numel() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("parameter '{}' has {} elements, gradient {}", self.name, self.grad.numel(), g.len()),
            ));
        }
        let summed = self.grad.data().iter().zip(g).map(|(a, b)| a + b).collect();
        self.grad = Tensor::new(self.value.shape(), summed, self.value.dtype())?;
        Ok(())
    }

    /// Applies an in-place update `value[i] = f(i, value[i])`.
    pub fn update(&mut self, f: impl Fn(usize, f64) -> f64) {
        let data = self.value.data().iter().enumerate().map(|(i, &v)| f(i, v)).collect();
        self.value = Tensor::from_parts(self.value.shape().to_vec(), data, self.value.dtype());
    }
}

/// Anything that owns a collection of parameters.
pub trait ParameterSet {
    fn for_each_param(&self, f: &mut dyn FnMut(&Parameter));
    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter));

    fn zero_grad(&mut self) {
        self.for_each_param_mut(&mut |p| p.zero_grad());
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each_param(&mut |p| names.push(p.name().to_string()));
        names
    }

    fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |p| n += p.value().numel());
        n
    }
}

impl ParameterSet for Parameter {
    fn for_each_param(&self, f: &mut dyn FnMut(&Parameter)) {
        f(self)
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(self)
    }
}

impl ParameterSet for [Parameter] {
    fn for_each_param(&self, f: &mut dyn FnMut(&Parameter)) {
        self.iter().for_each(f)
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.iter_mut().for_each(f)
    }
}

impl ParameterSet for Vec<Parameter> {
    fn for_each_param(&self, f: &mut dyn FnMut(&Parameter)) {
        self.as_slice().for_each_param(f)
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.as_mut_slice().for_each_param_mut(f)
    }
}
