use super::tensor::Tensor2D;
use crate::error::KernelError;

pub const ADAGRAD_EPS: f64 = 1e-8;

/// A trainable tensor with its gradient buffer and AdaGrad accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor2D,
    pub grad: Tensor2D,
    pub accum: Tensor2D,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor2D) -> Self {
        let (r, c) = value.shape();
        Parameter {
            name: name.into(),
            value,
            grad: Tensor2D::zeros(r, c),
            accum: Tensor2D::zeros(r, c),
            trainable: true,
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Parameter::new(name, Tensor2D::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// One AdaGrad update over every entry; the gradient is cleared afterwards.
    pub fn adagrad_step(&mut self, lr: f64, eps: f64) -> Result<(), KernelError> {
        if !self.trainable {
            return Err(KernelError::Frozen(self.name.clone()));
        }
        let value = self.value.data_mut();
        let grad = self.grad.data_mut();
        let accum = self.accum.data_mut();
        for ((v, g), a) in value.iter_mut().zip(grad.iter_mut()).zip(accum.iter_mut()) {
            adagrad_entry(v, g, a, lr, eps);
        }
        Ok(())
    }

    /// AdaGrad restricted to the listed rows. Rows not listed keep value, gradient and
    /// accumulator untouched.
    pub fn adagrad_step_rows(&mut self, rows: &[usize], lr: f64, eps: f64) -> Result<(), KernelError> {
        if !self.trainable {
            return Err(KernelError::Frozen(self.name.clone()));
        }
        let cols = self.value.cols();
        for &r in rows {
            let range = r * cols..(r + 1) * cols;
            let value = &mut self.value.data_mut()[range.clone()];
            let grad = &mut self.grad.data_mut()[range.clone()];
            let accum = &mut self.accum.data_mut()[range];
            for ((v, g), a) in value.iter_mut().zip(grad.iter_mut()).zip(accum.iter_mut()) {
                adagrad_entry(v, g, a, lr, eps);
            }
        }
        Ok(())
    }

    /// Rounds value and accumulator to single precision, the checkpoint storage width.
    pub fn round_to_f32(&mut self) {
        for x in self.value.data_mut().iter_mut().chain(self.accum.data_mut().iter_mut()) {
            *x = f64::from(*x as f32);
        }
    }

    pub fn check_finite(&self) -> Result<(), KernelError> {
        if let Some(index) = self.value.data().iter().position(|v| !v.is_finite()) {
            return Err(KernelError::NonFinite {
                name: self.name.clone(),
                index,
            });
        }
        Ok(())
    }
}

#[inline]
fn adagrad_entry(v: &mut f64, g: &mut f64, a: &mut f64, lr: f64, eps: f64) {
    let grad = *g;
    if grad != 0.0 {
        *a += grad * grad;
        *v -= lr * grad / (a.sqrt() + eps);
    }
    *g = 0.0;
}
