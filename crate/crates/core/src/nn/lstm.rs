use rand::Rng;

use super::{check_len, init_uniform, Matrix, Parameterized};
use crate::error::Result;
use crate::scalar::Scalar;

/// Single LSTM cell. Every gate matrix is `hidden x (hidden + input)` and
/// acts on the concatenation `h_prev ++ x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell<T> {
    pub input_gate: Matrix<T>,
    pub forget_gate: Matrix<T>,
    pub output_gate: Matrix<T>,
    pub candidate: Matrix<T>,
    pub input_bias: Vec<T>,
    pub forget_bias: Vec<T>,
    pub output_bias: Vec<T>,
    pub candidate_bias: Vec<T>,
    pub hidden: usize,
    pub input_dim: usize,
}

/// Values from one forward step needed by the reverse pass.
#[derive(Debug, Clone)]
pub struct LstmStepCache<T> {
    z: Vec<T>,
    c_prev: Vec<T>,
    i: Vec<T>,
    f: Vec<T>,
    o: Vec<T>,
    g: Vec<T>,
    tanh_c: Vec<T>,
}

#[inline]
fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl<T: Scalar> LstmCell<T> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let m = || Matrix::zeros(hidden, hidden + input_dim);
        let b = || vec![T::zero(); hidden];
        LstmCell {
            input_gate: m(),
            forget_gate: m(),
            output_gate: m(),
            candidate: m(),
            input_bias: b(),
            forget_bias: b(),
            output_bias: b(),
            candidate_bias: b(),
            hidden,
            input_dim,
        }
    }

    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut cell = Self::zeros(input_dim, hidden);
        let fan_in = hidden + input_dim;
        for p in cell.params_mut() {
            init_uniform(p, fan_in, rng);
        }
        cell
    }

    /// One recurrence step, returning `(h, c)`.
    pub fn step(&self, x: &[T], h_prev: &[T], c_prev: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        check_len("lstm input", self.input_dim, x.len())?;
        check_len("lstm hidden state", self.hidden, h_prev.len())?;
        check_len("lstm cell state", self.hidden, c_prev.len())?;
        let (h, c, _) = self.step_cached(x, h_prev, c_prev);
        Ok((h, c))
    }

    pub(crate) fn step_cached(
        &self,
        x: &[T],
        h_prev: &[T],
        c_prev: &[T],
    ) -> (Vec<T>, Vec<T>, LstmStepCache<T>) {
        let mut z = Vec::with_capacity(self.hidden + self.input_dim);
        z.extend_from_slice(h_prev);
        z.extend_from_slice(x);
        let gate = |w: &Matrix<T>, b: &[T]| {
            let mut v = b.to_vec();
            w.matvec_acc(&z, &mut v);
            v
        };
        let i: Vec<T> = gate(&self.input_gate, &self.input_bias)
            .into_iter()
            .map(sigmoid)
            .collect();
        let f: Vec<T> = gate(&self.forget_gate, &self.forget_bias)
            .into_iter()
            .map(sigmoid)
            .collect();
        let o: Vec<T> = gate(&self.output_gate, &self.output_bias)
            .into_iter()
            .map(sigmoid)
            .collect();
        let g: Vec<T> = gate(&self.candidate, &self.candidate_bias)
            .into_iter()
            .map(T::tanh)
            .collect();
        let c: Vec<T> = (0..self.hidden)
            .map(|k| f[k] * c_prev[k] + i[k] * g[k])
            .collect();
        let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<T> = (0..self.hidden).map(|k| o[k] * tanh_c[k]).collect();
        let cache = LstmStepCache {
            z,
            c_prev: c_prev.to_vec(),
            i,
            f,
            o,
            g,
            tanh_c,
        };
        (h, c, cache)
    }

    /// Reverse pass of one step. Takes the gradients flowing into `h` and `c`,
    /// accumulates parameter gradients and returns `(dh_prev, dc_prev, dx)`.
    pub fn backward(
        &self,
        cache: &LstmStepCache<T>,
        grad_h: &[T],
        grad_c: &[T],
        grads: &mut LstmCell<T>,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let n = self.hidden;
        let one = T::one();
        let mut d_i = vec![T::zero(); n];
        let mut d_f = vec![T::zero(); n];
        let mut d_o = vec![T::zero(); n];
        let mut d_g = vec![T::zero(); n];
        let mut dc_prev = vec![T::zero(); n];
        for k in 0..n {
            let tc = cache.tanh_c[k];
            let dc = grad_c[k] + grad_h[k] * cache.o[k] * (one - tc * tc);
            let (i, f, o, g) = (cache.i[k], cache.f[k], cache.o[k], cache.g[k]);
            d_o[k] = grad_h[k] * tc * o * (one - o);
            d_i[k] = dc * g * i * (one - i);
            d_g[k] = dc * i * (one - g * g);
            d_f[k] = dc * cache.c_prev[k] * f * (one - f);
            dc_prev[k] = dc * f;
        }
        let mut dz = vec![T::zero(); n + self.input_dim];
        let parts: [(&Matrix<T>, &mut Matrix<T>, &mut Vec<T>, &[T]); 4] = [
            (&self.input_gate, &mut grads.input_gate, &mut grads.input_bias, &d_i),
            (&self.forget_gate, &mut grads.forget_gate, &mut grads.forget_bias, &d_f),
            (&self.output_gate, &mut grads.output_gate, &mut grads.output_bias, &d_o),
            (&self.candidate, &mut grads.candidate, &mut grads.candidate_bias, &d_g),
        ];
        for (w, gw, gb, delta) in parts {
            gw.outer_acc(delta, &cache.z);
            for (b, &d) in gb.iter_mut().zip(delta) {
                *b += d;
            }
            w.matvec_t_acc(delta, &mut dz);
        }
        let dx = dz.split_off(n);
        (dz, dc_prev, dx)
    }

    pub fn cast<U: Scalar>(&self) -> LstmCell<U> {
        let v = |b: &Vec<T>| b.iter().map(|x| U::lit(x.to_f64_lossy())).collect();
        LstmCell {
            input_gate: self.input_gate.cast(),
            forget_gate: self.forget_gate.cast(),
            output_gate: self.output_gate.cast(),
            candidate: self.candidate.cast(),
            input_bias: v(&self.input_bias),
            forget_bias: v(&self.forget_bias),
            output_bias: v(&self.output_bias),
            candidate_bias: v(&self.candidate_bias),
            hidden: self.hidden,
            input_dim: self.input_dim,
        }
    }
}

impl<T: Scalar> Parameterized<T> for LstmCell<T> {
    fn params(&self) -> Vec<(String, &[T])> {
        vec![
            ("input_gate".into(), &self.input_gate.data[..]),
            ("forget_gate".into(), &self.forget_gate.data[..]),
            ("output_gate".into(), &self.output_gate.data[..]),
            ("candidate".into(), &self.candidate.data[..]),
            ("input_bias".into(), &self.input_bias[..]),
            ("forget_bias".into(), &self.forget_bias[..]),
            ("output_bias".into(), &self.output_bias[..]),
            ("candidate_bias".into(), &self.candidate_bias[..]),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            &mut self.input_gate.data[..],
            &mut self.forget_gate.data[..],
            &mut self.output_gate.data[..],
            &mut self.candidate.data[..],
            &mut self.input_bias[..],
            &mut self.forget_bias[..],
            &mut self.output_bias[..],
            &mut self.candidate_bias[..],
        ]
    }
}
