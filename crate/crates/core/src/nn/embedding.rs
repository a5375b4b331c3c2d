use ndarray::{Array2, ArrayView2};

use super::{real, Parameters, Real};
use crate::error::{Error, Result};

/// Learnable lookup table with one row per discrete timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbedding<F> {
    table: Array2<F>,
}

impl<F: Real> TimeEmbedding<F> {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            table: Array2::zeros((rows, dim)),
        }
    }

    /// Rows start as sinusoidal features of the row index, so neighbouring timesteps begin
    /// with similar embeddings; training is free to move them.
    pub fn sinusoidal(rows: usize, dim: usize) -> Self {
        let half = dim.div_ceil(2);
        let table = Array2::from_shape_fn((rows, dim), |(t, j)| {
            let k = j % half;
            let freq = (rows as f64).powf(-(k as f64) / half as f64) * std::f64::consts::PI;
            let phase = t as f64 * freq;
            real(if j < half { phase.sin() } else { phase.cos() })
        });
        Self { table }
    }

    pub fn rows(&self) -> usize {
        self.table.nrows()
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn table(&self) -> &Array2<F> {
        &self.table
    }

    pub fn lookup(&self, index: &[usize]) -> Result<Array2<F>> {
        let mut out = Array2::zeros((index.len(), self.dim()));
        for (r, &i) in index.iter().enumerate() {
            if i >= self.rows() {
                return Err(Error::InvalidParameter(format!(
                    "timestep index {i} outside 0..{}",
                    self.rows()
                )));
            }
            out.row_mut(r).assign(&self.table.row(i));
        }
        Ok(out)
    }

    /// Scatter-add per-example gradients into the rows that were looked up.
    pub fn accumulate(&mut self, index: &[usize], grad: ArrayView2<F>) {
        for (r, &i) in index.iter().enumerate() {
            let mut row = self.table.row_mut(i);
            row += &grad.row(r);
        }
    }

    pub fn cast<G: Real>(&self) -> TimeEmbedding<G> {
        TimeEmbedding {
            table: self.table.mapv(|v| G::from(v).expect("castable")),
        }
    }
}

impl<F: Real> Parameters<F> for TimeEmbedding<F> {
    fn tensors(&self) -> Vec<&[F]> {
        vec![self.table.as_slice().expect("standard layout")]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        vec![self.table.as_slice_mut().expect("standard layout")]
    }
}
