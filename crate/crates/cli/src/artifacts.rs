//! Files written by a run and their readers. Floats are written in Rust's
//! shortest round-trip form, so every file parses back to identical values.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spformer::analysis::{Band, BandReport, FieldGrid};
use spformer::nn::{Architecture, ModelConfig};
use spformer::pde::ProblemName;
use spformer::training::{Component, LossWeights, TraceRow, TrainStatus};

use crate::config::{ResolvedCollocation, RunConfig};
use crate::{CliError, Result};

pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const FIELD_FILE: &str = "field.csv";
pub const FLOW_FILE: &str = "flow.csv";
pub const BANDS_FILE: &str = "bands.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
/// Last finite iterate of a run that aborted.
pub const FAILED_CHECKPOINT_FILE: &str = "checkpoint_failed.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Errors on the Navier-Stokes test slice; pressure after the offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NsMetrics {
    pub test_time: f64,
    pub points: usize,
    pub pressure_offset: f64,
    pub rmae_u: f64,
    pub rmse_u: f64,
    pub rmae_v: f64,
    pub rmse_v: f64,
    pub rmae_p: f64,
    pub rmse_p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub problem: ProblemName,
    pub architecture: Architecture,
    /// Field error on the test grid; pressure error for Navier-Stokes.
    pub rmae: f64,
    pub rmse: f64,
    pub parameter_count: usize,
    /// Multiply-accumulates of one forward pass over one pseudo-sequence.
    pub flop_estimate: u64,
    pub bands: Option<Vec<Band>>,
    pub navier_stokes: Option<NsMetrics>,
    pub status: TrainStatus,
    pub iterations: usize,
    pub evaluations: usize,
    pub fallback_steps: usize,
    pub final_loss: f64,
    pub final_components: Vec<(Component, f64)>,
    pub weights: LossWeights,
    pub config: RunConfig,
    pub model: ModelConfig,
    pub collocation: ResolvedCollocation,
    pub version: String,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::read(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("reports serialize");
        std::fs::write(path, json + "\n").map_err(|e| CliError::io(path, e))
    }

    /// The report with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_seconds: 0.0,
            ..self.clone()
        }
    }

    pub fn band(&self, label: &str) -> Option<f64> {
        self.bands.as_ref()?.iter().find(|b| b.label == label).map(|b| b.mae)
    }
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::io(path, source),
        other => CliError::read(path, format!("{other:?}")),
    }
}

/// One parsed row of `loss_trace.csv`. Components the problem does not
/// have are empty cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub total: f64,
    pub residual: Option<f64>,
    pub initial: Option<f64>,
    pub boundary: Option<f64>,
    pub data: Option<f64>,
    pub lambda_residual: f64,
    pub lambda_initial: f64,
    pub lambda_boundary: f64,
    pub lambda_data: f64,
    /// How the iteration's step was taken: wolfe, fallback, stationary or failed.
    pub step: Option<String>,
}

impl From<&TraceRow> for TraceRecord {
    fn from(row: &TraceRow) -> Self {
        let w = &row.weights;
        Self {
            iteration: row.iteration,
            total: row.loss.total,
            residual: row.loss.get(Component::Residual),
            initial: row.loss.get(Component::Initial),
            boundary: row.loss.get(Component::Boundary),
            data: row.loss.get(Component::Data),
            lambda_residual: w.residual,
            lambda_initial: w.initial,
            lambda_boundary: w.boundary,
            lambda_data: w.data,
            step: row
                .status
                .map(|s| serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()),
        }
    }
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = create(path)?;
    if rows.is_empty() {
        w.write_record([
            "iteration",
            "total",
            "residual",
            "initial",
            "boundary",
            "data",
            "lambda_residual",
            "lambda_initial",
            "lambda_boundary",
            "lambda_data",
            "step",
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    for row in rows {
        w.serialize(TraceRecord::from(row)).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    open(path)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldRecord {
    x: f64,
    t: f64,
    pred: f64,
    #[serde(rename = "true")]
    truth: f64,
    abs_error: f64,
}

/// Long-form `x,t,pred,true,abs_error`, time-major.
pub fn write_field(path: &Path, pred: &FieldGrid, truth: &FieldGrid) -> Result<()> {
    if !pred.same_coordinates(truth) || pred.values.len() != truth.values.len() {
        return Err(CliError::Usage("prediction and truth grids differ".into()));
    }
    let mut w = create(path)?;
    let nx = pred.xs.len();
    for (i, (p, t)) in pred.values.iter().zip(&truth.values).enumerate() {
        let record = FieldRecord {
            x: pred.xs[i % nx],
            t: pred.ts[i / nx],
            pred: *p,
            truth: *t,
            abs_error: (p - t).abs(),
        };
        w.serialize(record).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Prediction and truth grids from a field CSV. Rows must be time-major
/// on a full `x × t` grid.
pub fn read_field(path: &Path) -> Result<(FieldGrid, FieldGrid)> {
    let records: Vec<FieldRecord> = open(path)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))?;
    let first = records.first().ok_or_else(|| CliError::read(path, "no rows"))?;
    let xs: Vec<f64> = records.iter().take_while(|r| r.t == first.t).map(|r| r.x).collect();
    let nx = xs.len();
    if records.len() % nx != 0 {
        return Err(CliError::read(path, format!("{} rows do not fill a grid of width {nx}", records.len())));
    }
    let ts: Vec<f64> = records.iter().step_by(nx).map(|r| r.t).collect();
    for (i, r) in records.iter().enumerate() {
        if r.x != xs[i % nx] || r.t != ts[i / nx] {
            return Err(CliError::read(path, format!("row {} breaks the time-major grid order", i + 2)));
        }
    }
    let grid = |values: Vec<f64>| FieldGrid::new(xs.clone(), ts.clone(), values).map_err(|e| CliError::read(path, e));
    Ok((
        grid(records.iter().map(|r| r.pred).collect())?,
        grid(records.iter().map(|r| r.truth).collect())?,
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct BandRecord {
    band: String,
    f_lo: f64,
    f_hi: f64,
    bins: usize,
    mae: f64,
}

pub fn write_bands(path: &Path, report: &BandReport) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    report.write_csv(file).map_err(|e| CliError::read(path, e))
}

pub fn read_bands(path: &Path) -> Result<Vec<Band>> {
    let records: Vec<BandRecord> = open(path)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))?;
    Ok(records
        .into_iter()
        .map(|r| Band {
            label: r.band,
            lo: r.f_lo,
            hi: r.f_hi,
            bins: r.bins,
            mae: r.mae,
        })
        .collect())
}

/// Navier-Stokes test-slice predictions; `p_pred` includes the offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub x: f64,
    pub y: f64,
    pub u_pred: f64,
    pub u_true: f64,
    pub v_pred: f64,
    pub v_true: f64,
    pub p_pred: f64,
    pub p_true: f64,
}

pub fn write_flow(path: &Path, rows: &[FlowRecord]) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_flow(path: &Path) -> Result<Vec<FlowRecord>> {
    open(path)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))
}

/// One row of the comparison table, copied from a report without recomputation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub model: String,
    pub problem: String,
    pub rmae: f64,
    pub rmse: f64,
    pub params: usize,
    pub seconds: f64,
}

impl From<&RunReport> for CompareRow {
    fn from(r: &RunReport) -> Self {
        Self {
            model: r.architecture.to_string(),
            problem: r.problem.to_string(),
            rmae: r.rmae,
            rmse: r.rmse,
            params: r.parameter_count,
            seconds: r.wall_seconds,
        }
    }
}

/// Rows sorted by `(problem, model)`; the sort is stable for equal keys.
pub fn compare(reports: &[RunReport]) -> Vec<CompareRow> {
    let mut rows: Vec<CompareRow> = reports.iter().map(CompareRow::from).collect();
    rows.sort_by(|a, b| (&a.problem, &a.model).cmp(&(&b.problem, &b.model)));
    rows
}

pub fn write_compare<W: std::io::Write>(writer: W, rows: &[CompareRow]) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_compare(path: &Path) -> Result<Vec<CompareRow>> {
    open(path)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))
}
