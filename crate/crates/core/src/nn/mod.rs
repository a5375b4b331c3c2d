//! A small neural-network toolkit: dense layers, time embeddings, Adam and checkpoints.
//!
//! Everything is generic over the float type so that gradient checks can run in `f64`
//! while training runs in `f32`.

mod adam;
pub mod checkpoint;
mod embedding;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use embedding::TimeEmbedding;
pub use mlp::{Activation, Dense, Mlp, MlpSpec, Tape};

use crate::error::{Error, Result};

/// Float types the toolkit runs on.
pub trait Real: ndarray::NdFloat + std::iter::Sum {}

impl<T: ndarray::NdFloat + std::iter::Sum> Real for T {}

pub(crate) fn real<F: Real>(v: f64) -> F {
    F::from(v).expect("value representable in the float type")
}

/// Anything holding trainable tensors in a fixed order.
pub trait Parameters<F: Real> {
    fn tensors(&self) -> Vec<&[F]>;
    fn tensors_mut(&mut self) -> Vec<&mut [F]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn to_flat(&self) -> Vec<F> {
        self.tensors().concat()
    }

    fn load_flat(&mut self, flat: &[F]) -> Result<()> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: flat.len(),
            });
        }
        let mut rest = flat;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Adds `other` element-wise; both must share one architecture.
    fn add_assign(&mut self, other: &Self) -> Result<()> {
        let theirs = other.tensors();
        let mut mine = self.tensors_mut();
        if mine.len() != theirs.len() {
            return Err(Error::LengthMismatch {
                expected: mine.len(),
                actual: theirs.len(),
            });
        }
        for (a, b) in mine.iter_mut().zip(theirs) {
            if a.len() != b.len() {
                return Err(Error::LengthMismatch {
                    expected: a.len(),
                    actual: b.len(),
                });
            }
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}
