//! Benchmark PDEs, collocation sampling, pseudo-sequences and residual
//! operators.
//!
//! Coordinates are ordered spatial first, time last: `(x, t)` for the 1-D
//! problems and `(x, y, t)` for Navier-Stokes.

mod residual;
mod sequence;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::nn::NnError;
pub use residual::{coordinate_leaves, derivative, model_output, normalized_input, predict, predict_flow, residual, velocity};
pub use sequence::{pseudo_sequence, SequenceSet};

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("unknown problem `{0}` (expected convection, reaction1d, wave1d or ns2d)")]
    UnknownProblem(String),
    #[error("coordinate {axis} = {value} lies outside [{lo}, {hi}]")]
    OutOfDomain { axis: usize, value: f64, lo: f64, hi: f64 },
    #[error("pseudo-sequence length must be at least 1")]
    EmptySequence,
    #[error("pseudo-sequence step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("expected {expected} coordinates, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("expected model output width {expected}, got {got}")]
    OutputWidth { expected: usize, got: usize },
    #[error("{0} has no closed-form solution")]
    NoAnalyticalSolution(&'static str),
    #[error("{0} must be at least 1")]
    InvalidCount(&'static str),
    #[error("invalid bounds [{0}, {1}]")]
    InvalidBounds(f64, f64),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, PdeError>;

/// Governing equation and its coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Equation {
    /// `u_t + β u_x = 0`, `u(x, 0) = sin x`, periodic in x.
    Convection { beta: f64 },
    /// `u_t − ρ u (1 − u) = 0`, Gaussian initial bump, periodic in x.
    Reaction { rho: f64 },
    /// `u_tt − c² u_xx = 0` with `u(x, 0) = sin(πx) + ½ sin(βπx)`,
    /// `u_t(x, 0) = 0` and zero Dirichlet ends.
    Wave { beta: f64, speed_squared: f64 },
    /// Incompressible momentum equations for the streamfunction/pressure pair.
    NavierStokes { lambda1: f64, lambda2: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// `u(x_min, t) = u(x_max, t)`.
    Periodic,
    /// `u(x_min, t) = u(x_max, t) = 0`.
    DirichletZero,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemName {
    #[serde(rename = "convection")]
    Convection,
    #[serde(rename = "reaction1d")]
    Reaction,
    #[serde(rename = "wave1d")]
    Wave,
    #[serde(rename = "ns2d")]
    NavierStokes,
}

impl ProblemName {
    pub const ALL: [ProblemName; 4] = [Self::Convection, Self::Reaction, Self::Wave, Self::NavierStokes];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Convection => "convection",
            Self::Reaction => "reaction1d",
            Self::Wave => "wave1d",
            Self::NavierStokes => "ns2d",
        }
    }
}

impl fmt::Display for ProblemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemName {
    type Err = PdeError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| PdeError::UnknownProblem(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdeProblem {
    pub name: ProblemName,
    pub equation: Equation,
    /// `(min, max)` per coordinate, time last.
    pub bounds: Vec<(f64, f64)>,
}

impl PdeProblem {
    pub fn convection() -> Self {
        Self {
            name: ProblemName::Convection,
            equation: Equation::Convection { beta: 50.0 },
            bounds: vec![(0.0, 2.0 * PI), (0.0, 1.0)],
        }
    }

    pub fn reaction() -> Self {
        Self {
            name: ProblemName::Reaction,
            equation: Equation::Reaction { rho: 5.0 },
            bounds: vec![(0.0, 2.0 * PI), (0.0, 1.0)],
        }
    }

    /// The closed-form solution `sin(πx)cos(2πt) + ½ sin(3πx)cos(6πt)` travels
    /// at speed 2, so the operator uses `c² = 4`; `β = 3` is the initial mode.
    pub fn wave() -> Self {
        Self {
            name: ProblemName::Wave,
            equation: Equation::Wave {
                beta: 3.0,
                speed_squared: 4.0,
            },
            bounds: vec![(0.0, 1.0), (0.0, 1.0)],
        }
    }

    /// Cylinder-wake domain; replace `bounds` with the dataset extents when training.
    pub fn navier_stokes() -> Self {
        Self {
            name: ProblemName::NavierStokes,
            equation: Equation::NavierStokes {
                lambda1: 1.0,
                lambda2: 0.01,
            },
            bounds: vec![(1.0, 8.0), (-2.0, 2.0), (0.0, 20.0)],
        }
    }

    pub fn by_name(name: ProblemName) -> Self {
        match name {
            ProblemName::Convection => Self::convection(),
            ProblemName::Reaction => Self::reaction(),
            ProblemName::Wave => Self::wave(),
            ProblemName::NavierStokes => Self::navier_stokes(),
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.len() != self.bounds.len() {
            return Err(PdeError::Dimension {
                expected: self.bounds.len(),
                got: bounds.len(),
            });
        }
        if let Some(&(lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(PdeError::InvalidBounds(lo, hi));
        }
        self.bounds = bounds;
        Ok(self)
    }

    /// Number of input coordinates, time included.
    pub fn d_in(&self) -> usize {
        self.bounds.len()
    }

    /// Model output width: `u`, or `(ψ, p)` for Navier-Stokes.
    pub fn d_out(&self) -> usize {
        match self.equation {
            Equation::NavierStokes { .. } => 2,
            _ => 1,
        }
    }

    pub fn time_axis(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn boundary(&self) -> Boundary {
        match self.equation {
            Equation::Convection { .. } | Equation::Reaction { .. } => Boundary::Periodic,
            Equation::Wave { .. } => Boundary::DirichletZero,
            Equation::NavierStokes { .. } => Boundary::None,
        }
    }

    pub fn has_initial_condition(&self) -> bool {
        !matches!(self.equation, Equation::NavierStokes { .. })
    }

    /// Whether the initial condition also pins `u_t(x, 0) = 0`.
    pub fn has_initial_velocity(&self) -> bool {
        matches!(self.equation, Equation::Wave { .. })
    }

    fn check_dim(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.d_in() {
            return Err(PdeError::Dimension {
                expected: self.d_in(),
                got: point.len(),
            });
        }
        Ok(())
    }

    /// Affine map of each coordinate onto `[0, 1]`.
    pub fn normalize(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(point)?;
        point
            .iter()
            .zip(&self.bounds)
            .enumerate()
            .map(|(axis, (&value, &(lo, hi)))| {
                if (lo..=hi).contains(&value) {
                    Ok((value - lo) / (hi - lo))
                } else {
                    Err(PdeError::OutOfDomain { axis, value, lo, hi })
                }
            })
            .collect()
    }

    pub fn denormalize(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(point)?;
        Ok(point.iter().zip(&self.bounds).map(|(z, (lo, hi))| lo + z * (hi - lo)).collect())
    }

    /// `u(x, 0)` for the 1-D problems.
    pub fn initial_value(&self, x: f64) -> Result<f64> {
        match self.equation {
            Equation::Convection { .. } => Ok(x.sin()),
            Equation::Reaction { .. } => Ok(reaction_profile(x)),
            Equation::Wave { beta, .. } => Ok((PI * x).sin() + 0.5 * (beta * PI * x).sin()),
            Equation::NavierStokes { .. } => Err(PdeError::NoAnalyticalSolution("ns2d")),
        }
    }

    /// Closed-form solution at `(x, t)`.
    pub fn analytical(&self, x: f64, t: f64) -> Result<f64> {
        match self.equation {
            Equation::Convection { beta } => Ok((x - beta * t).sin()),
            Equation::Reaction { rho } => {
                let h = reaction_profile(x);
                let g = h * (rho * t).exp();
                Ok(g / (g + 1.0 - h))
            }
            Equation::Wave { .. } => Ok((PI * x).sin() * (2.0 * PI * t).cos()
                + 0.5 * (3.0 * PI * x).sin() * (6.0 * PI * t).cos()),
            Equation::NavierStokes { .. } => Err(PdeError::NoAnalyticalSolution("ns2d")),
        }
    }

    /// Draws collocation points; see [`CollocationSet`].
    pub fn sample_collocation(&self, n_x: usize, n_t: usize, n_ic: usize, n_bc: usize, seed: u64) -> Result<CollocationSet> {
        for (name, n) in [("n_x", n_x), ("n_t", n_t), ("n_ic", n_ic), ("n_bc", n_bc)] {
            if n == 0 {
                return Err(PdeError::InvalidCount(name));
            }
        }
        if self.d_in() != 2 {
            return Err(PdeError::Dimension {
                expected: 2,
                got: self.d_in(),
            });
        }
        let (x_lo, x_hi) = self.bounds[0];
        let (t_lo, t_hi) = self.bounds[1];
        let mut residual = Points::new(2);
        for x in linspace(x_lo, x_hi, n_x) {
            for t in linspace(t_lo, t_hi, n_t) {
                residual.push(&[x, t]);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut initial = Points::new(2);
        for _ in 0..n_ic {
            initial.push(&[rng.gen_range(x_lo..=x_hi), t_lo]);
        }
        let mut boundary_lo = Points::new(2);
        let mut boundary_hi = Points::new(2);
        for _ in 0..n_bc {
            let t = rng.gen_range(t_lo..=t_hi);
            boundary_lo.push(&[x_lo, t]);
            boundary_hi.push(&[x_hi, t]);
        }
        Ok(CollocationSet {
            residual,
            initial,
            boundary_lo,
            boundary_hi,
        })
    }
}

/// `h(x) = exp(−(x − π)² / (2 (π/4)²))`.
pub fn reaction_profile(x: f64) -> f64 {
    let s = PI / 4.0;
    (-(x - PI).powi(2) / (2.0 * s * s)).exp()
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Row-major list of `dim`-dimensional points.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(PdeError::Dimension {
                expected: dim,
                got: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn push(&mut self, point: &[f64]) {
        assert_eq!(point.len(), self.dim, "point dimension");
        self.data.extend_from_slice(point);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1))
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }
}

/// Residual grid, initial points and matched boundary pairs.
///
/// The residual grid is the Cartesian product of `n_x` and `n_t` evenly
/// spaced values (x outer). Initial points have uniform random `x` at
/// `t_min`; boundary pair `j` is `(x_min, t_j)`, `(x_max, t_j)` with uniform
/// random `t_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct CollocationSet {
    pub residual: Points,
    pub initial: Points,
    pub boundary_lo: Points,
    pub boundary_hi: Points,
}

#[cfg(test)]
mod tests;
