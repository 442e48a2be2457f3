//! Minimal numeric core with hand-written reverse passes.
//!
//! Layers keep their parameters in flat row-major buffers. Gradients use the
//! same structs as the parameters they belong to (see [`Parameterized`]), so a
//! gradient accumulator is just a zeroed clone of the model.

mod dense;
mod gradcheck;
mod lstm;
mod ops;
mod optim;
mod tensor;

pub use dense::{Activation, Dense};
pub use gradcheck::{grad_check, GradCheckReport, FD_STEP};
pub use lstm::{LstmCell, LstmStepCache};
pub use ops::{
    cross_entropy, cross_entropy_floor, mse, soft_argmax_embed, soft_argmax_embed_backward,
    softmax, softmax_backward, CE_FLOOR,
};
pub use optim::{Algorithm, Optimizer, OptimizerConfig};
pub use tensor::Matrix;

use rand::Rng;

use crate::scalar::Scalar;

/// Anything that owns a fixed, ordered list of named parameter buffers.
pub trait Parameterized<T: Scalar> {
    fn params(&self) -> Vec<(String, &[T])>;
    fn params_mut(&mut self) -> Vec<&mut [T]>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    fn zero_params(&mut self) {
        for p in self.params_mut() {
            p.fill(T::zero());
        }
    }

    /// Concatenation of all parameters in declaration order.
    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, p) in self.params() {
            out.extend_from_slice(p);
        }
        out
    }

    fn assign_flat(&mut self, flat: &[T]) {
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// `self += other`, element-wise over matching parameter lists.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.params();
        for (dst, (_, s)) in self.params_mut().into_iter().zip(src) {
            for (d, &v) in dst.iter_mut().zip(s) {
                *d += v;
            }
        }
    }
}

/// Fills `buf` with `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_uniform<T: Scalar, R: Rng + ?Sized>(buf: &mut [T], fan_in: usize, rng: &mut R) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for v in buf {
        *v = T::lit(rng.gen_range(-bound..=bound));
    }
}

pub(crate) fn check_len(what: &str, expected: usize, found: usize) -> crate::Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(crate::Error::shape(format!(
            "{what}: expected length {expected}, found {found}"
        )))
    }
}
