use super::{PdeError, Points, Result};
use crate::autodiff::Tensor;

fn check(k: usize, dt: f64) -> Result<()> {
    if k == 0 {
        return Err(PdeError::EmptySequence);
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(PdeError::InvalidStep(dt));
    }
    Ok(())
}

/// `[(x, t), (x, t + Δt), …, (x, t + (k−1)Δt)]`; time is the last coordinate.
pub fn pseudo_sequence(point: &[f64], k: usize, dt: f64) -> Result<Vec<Vec<f64>>> {
    check(k, dt)?;
    let last = point.len().checked_sub(1).ok_or(PdeError::Dimension { expected: 1, got: 0 })?;
    Ok((0..k)
        .map(|j| {
            let mut p = point.to_vec();
            p[last] += j as f64 * dt;
            p
        })
        .collect())
}

/// Pseudo-sequences of a point set, stored `[len, k, dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSet {
    len: usize,
    k: usize,
    dim: usize,
    data: Vec<f64>,
}

impl SequenceSet {
    pub fn from_points(points: &Points, k: usize, dt: f64) -> Result<Self> {
        check(k, dt)?;
        let dim = points.dim();
        let mut data = Vec::with_capacity(points.len() * k * dim);
        for p in points.iter() {
            for q in pseudo_sequence(p, k, dt)? {
                data.extend(q);
            }
        }
        Ok(Self {
            len: points.len(),
            k,
            dim,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, sequence: usize, position: usize) -> &[f64] {
        let start = (sequence * self.k + position) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Values of one coordinate as a `[len, k, 1]` tensor.
    pub fn coordinate(&self, axis: usize) -> Tensor {
        let values = self.data.iter().skip(axis).step_by(self.dim).copied().collect();
        Tensor::new(vec![self.len, self.k, 1], values).expect("extent product")
    }

    /// Sequences `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let stride = self.k * self.dim;
        Self {
            len: end - start,
            k: self.k,
            dim: self.dim,
            data: self.data[start * stride..end * stride].to_vec(),
        }
    }

    /// The sequences at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let stride = self.k * self.dim;
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        Self {
            len: indices.len(),
            k: self.k,
            dim: self.dim,
            data,
        }
    }

    /// Consecutive sub-sets of at most `size` sequences.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = Self> + '_ {
        let size = size.max(1);
        (0..self.len).step_by(size).map(move |s| self.slice(s, (s + size).min(self.len)))
    }
}
