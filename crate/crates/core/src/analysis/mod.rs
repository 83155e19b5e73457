//! Error metrics, the pressure-offset correction, and spectral band errors.

use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("length mismatch: prediction has {pred} values, truth has {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("prediction and truth grids have different coordinates")]
    CoordinateMismatch,
    #[error("grid has {values} values, expected {expected} from its axes")]
    GridShape { values: usize, expected: usize },
    #[error("truth has zero norm")]
    ZeroTruth,
    #[error("empty input")]
    Empty,
    #[error("spatial grid is not uniform (spacing {first} vs {other})")]
    NonUniformGrid { first: f64, other: f64 },
    #[error("band edges must increase strictly inside (0, 1): {0:?}")]
    InvalidBands(Vec<f64>),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Values on an `x × t` grid, stored time-major: `values[ti * xs.len() + xi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    pub values: Vec<f64>,
}

impl FieldGrid {
    pub fn new(xs: Vec<f64>, ts: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let expected = xs.len() * ts.len();
        if values.len() != expected {
            return Err(AnalysisError::GridShape {
                values: values.len(),
                expected,
            });
        }
        Ok(Self { xs, ts, values })
    }

    /// Samples `f(x, t)` on the grid.
    pub fn from_fn(xs: Vec<f64>, ts: Vec<f64>, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(xs.len() * ts.len());
        for &t in &ts {
            values.extend(xs.iter().map(|&x| f(x, t)));
        }
        Self { xs, ts, values }
    }

    pub fn at(&self, xi: usize, ti: usize) -> f64 {
        self.values[ti * self.xs.len() + xi]
    }

    /// The spatial profile at time index `ti`.
    pub fn slice(&self, ti: usize) -> &[f64] {
        let n = self.xs.len();
        &self.values[ti * n..(ti + 1) * n]
    }

    pub fn same_coordinates(&self, other: &FieldGrid) -> bool {
        self.xs == other.xs && self.ts == other.ts
    }

    /// `|self − other|` pointwise.
    pub fn abs_error(&self, other: &FieldGrid) -> Result<FieldGrid> {
        check_grids(self, other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).collect();
        Ok(FieldGrid {
            xs: self.xs.clone(),
            ts: self.ts.clone(),
            values,
        })
    }
}

fn check_grids(pred: &FieldGrid, truth: &FieldGrid) -> Result<()> {
    if !pred.same_coordinates(truth) {
        return Err(AnalysisError::CoordinateMismatch);
    }
    check_lengths(&pred.values, &truth.values)
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(AnalysisError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(AnalysisError::Empty);
    }
    Ok(())
}

/// `Σ|pred − truth| / Σ|truth|`.
pub fn rmae_values(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let den: f64 = truth.iter().map(|v| v.abs()).sum();
    if den == 0.0 {
        return Err(AnalysisError::ZeroTruth);
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / den)
}

/// `‖pred − truth‖₂ / ‖truth‖₂`.
pub fn rmse_values(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let den: f64 = truth.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(AnalysisError::ZeroTruth);
    }
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((num / den).sqrt())
}

pub fn rmae(pred: &FieldGrid, truth: &FieldGrid) -> Result<f64> {
    check_grids(pred, truth)?;
    rmae_values(&pred.values, &truth.values)
}

pub fn rmse(pred: &FieldGrid, truth: &FieldGrid) -> Result<f64> {
    check_grids(pred, truth)?;
    rmse_values(&pred.values, &truth.values)
}

/// Pressure is only determined up to a constant. Returns `p_pred + C` and
/// `C = mean(p_true − p_pred)`, the least-squares optimal shift.
pub fn pressure_offset(p_pred: &[f64], p_true: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_lengths(p_pred, p_true)?;
    let c = p_true.iter().zip(p_pred).map(|(t, p)| t - p).sum::<f64>() / p_pred.len() as f64;
    Ok((p_pred.iter().map(|p| p + c).collect(), c))
}

/// Band edges as fractions of the Nyquist frequency `f_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub edges: Vec<f64>,
}

impl Default for BandSpec {
    fn default() -> Self {
        Self {
            edges: vec![0.3, 0.5, 0.7, 0.9],
        }
    }
}

const DEFAULT_LABELS: [&str; 5] = ["very_low", "low", "mid", "high", "very_high"];

impl BandSpec {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        let ok = edges.iter().all(|e| *e > 0.0 && *e < 1.0) && edges.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(AnalysisError::InvalidBands(edges));
        }
        Ok(Self { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn label(&self, band: usize) -> String {
        if self.edges.len() == 4 {
            DEFAULT_LABELS[band].to_string()
        } else {
            format!("band{band}")
        }
    }

    /// `[lo, hi)` of a band in units of `f_n`; the last band is closed at 1.
    pub fn range(&self, band: usize) -> (f64, f64) {
        let lo = if band == 0 { 0.0 } else { self.edges[band - 1] };
        let hi = self.edges.get(band).copied().unwrap_or(1.0);
        (lo, hi)
    }

    /// Band of a relative frequency `f / f_n`.
    pub fn band_of(&self, relative: f64) -> usize {
        self.edges.iter().take_while(|e| relative >= **e).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    /// Mean over the band's bins; 0 for a band without bins.
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub bands: Vec<Band>,
    /// Relative frequency `f_j / f_n = 2j / N` of each non-negative bin.
    pub frequencies: Vec<f64>,
    /// `| |P_j| − |T_j| |` averaged over time slices.
    pub per_bin: Vec<f64>,
}

impl BandReport {
    pub fn get(&self, label: &str) -> Option<f64> {
        self.bands.iter().find(|b| b.label == label).map(|b| b.mae)
    }

    /// CSV with columns `band,f_lo,f_hi,bins,mae`, lowest band first.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["band", "f_lo", "f_hi", "bins", "mae"])?;
        for b in &self.bands {
            w.write_record([
                b.label.clone(),
                b.lo.to_string(),
                b.hi.to_string(),
                b.bins.to_string(),
                b.mae.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_uniform(xs: &[f64]) -> Result<()> {
    if xs.len() < 2 {
        return Err(AnalysisError::Empty);
    }
    let first = xs[1] - xs[0];
    for w in xs.windows(2) {
        let other = w[1] - w[0];
        if !(first > 0.0) || (other - first).abs() > 1e-9 * first.abs() {
            return Err(AnalysisError::NonUniformGrid { first, other });
        }
    }
    Ok(())
}

/// Normalized magnitude spectrum `|X_j| / N` for `j = 0..=N/2`.
pub fn magnitude_spectrum(signal: &[f64]) -> Vec<f64> {
    let fft = FftPlanner::new().plan_fft_forward(signal.len());
    magnitudes(fft.as_ref(), signal, &mut Vec::new())
}

fn magnitudes(fft: &dyn Fft<f64>, signal: &[f64], buf: &mut Vec<Complex<f64>>) -> Vec<f64> {
    let n = signal.len();
    buf.clear();
    buf.extend(signal.iter().map(|&v| Complex::new(v, 0.0)));
    fft.process(buf);
    buf[..=n / 2].iter().map(|c| c.norm() / n as f64).collect()
}

/// DFT of every time slice along `x`; the per-bin error is the difference
/// of magnitude spectra, averaged over slices, and each band reports the
/// mean over its bins.
pub fn band_errors(pred: &FieldGrid, truth: &FieldGrid, spec: &BandSpec) -> Result<BandReport> {
    check_grids(pred, truth)?;
    check_uniform(&pred.xs)?;
    let n = pred.xs.len();
    let bins = n / 2 + 1;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut per_bin = vec![0.0; bins];
    let mut buf = Vec::with_capacity(n);
    for ti in 0..pred.ts.len() {
        let p = magnitudes(fft.as_ref(), pred.slice(ti), &mut buf);
        let t = magnitudes(fft.as_ref(), truth.slice(ti), &mut buf);
        for (acc, (a, b)) in per_bin.iter_mut().zip(p.iter().zip(&t)) {
            *acc += (a - b).abs();
        }
    }
    let slices = pred.ts.len() as f64;
    per_bin.iter_mut().for_each(|v| *v /= slices);

    let frequencies: Vec<f64> = (0..bins).map(|j| 2.0 * j as f64 / n as f64).collect();
    let mut sums = vec![0.0; spec.len()];
    let mut counts = vec![0usize; spec.len()];
    for (f, e) in frequencies.iter().zip(&per_bin) {
        let b = spec.band_of(*f);
        sums[b] += e;
        counts[b] += 1;
    }
    let bands = (0..spec.len())
        .map(|b| {
            let (lo, hi) = spec.range(b);
            Band {
                label: spec.label(b),
                lo,
                hi,
                bins: counts[b],
                mae: if counts[b] == 0 { 0.0 } else { sums[b] / counts[b] as f64 },
            }
        })
        .collect();
    Ok(BandReport {
        bands,
        frequencies,
        per_bin,
    })
}
