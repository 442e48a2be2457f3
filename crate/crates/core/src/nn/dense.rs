use rand::Rng;

use super::{check_len, init_uniform, Matrix, Parameterized};
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(T::zero()),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
        }
    }
}

/// `y = activation(W x + b)` with `W` shaped `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Dense {
            weight: Matrix::zeros(output, input),
            bias: vec![T::zero(); output],
            activation,
        }
    }

    pub fn new<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(input, output, activation);
        init_uniform(&mut layer.weight.data, input, rng);
        init_uniform(&mut layer.bias, input, rng);
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        check_len("dense input", self.input_dim(), x.len())?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[T]) -> Vec<T> {
        let mut y = self.bias.clone();
        self.weight.matvec_acc(x, &mut y);
        for v in &mut y {
            *v = self.activation.apply(*v);
        }
        y
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    /// `y` must be the output this layer produced for `x`.
    pub fn backward(&self, x: &[T], y: &[T], grad_y: &[T], grads: &mut Dense<T>) -> Vec<T> {
        let mut grad_x = vec![T::zero(); self.input_dim()];
        self.backward_into(x, y, grad_y, grads, Some(&mut grad_x));
        grad_x
    }

    pub(crate) fn backward_into(
        &self,
        x: &[T],
        y: &[T],
        grad_y: &[T],
        grads: &mut Dense<T>,
        grad_x: Option<&mut [T]>,
    ) {
        let delta: Vec<T> = grad_y
            .iter()
            .zip(y)
            .map(|(&g, &yv)| g * self.activation.derivative_from_output(yv))
            .collect();
        for (b, &d) in grads.bias.iter_mut().zip(&delta) {
            *b += d;
        }
        grads.weight.outer_acc(&delta, x);
        if let Some(gx) = grad_x {
            self.weight.matvec_t_acc(&delta, gx);
        }
    }

    pub fn cast<U: Scalar>(&self) -> Dense<U> {
        Dense {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            activation: self.activation,
        }
    }
}

impl<T: Scalar> Parameterized<T> for Dense<T> {
    fn params(&self) -> Vec<(String, &[T])> {
        vec![
            ("weight".to_string(), &self.weight.data[..]),
            ("bias".to_string(), &self.bias[..]),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.weight.data[..], &mut self.bias[..]]
    }
}
