//! A single training run: data, training, evaluation and artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use spformer::analysis::{self, band_errors, pressure_offset, rmae_values, rmse_values, BandSpec, FieldGrid};
use spformer::data::{sample_training_points, NsDataset};
use spformer::nn::{flop_estimate, parameter_count, Checkpoint, Model};
use spformer::pde::{linspace, predict, predict_flow, PdeProblem, Points, ProblemName, SequenceSet};
use spformer::training::{train_with, StepStatus, TrainError, TrainingSet};

use crate::artifacts::{self, FlowRecord, NsMetrics, RunReport};
use crate::config::{ResolvedCollocation, RunConfig};
use crate::{version, CliError, Result};

/// Side length of the evaluation grid for the 1-D problems.
pub const TEST_GRID: usize = 101;

/// Directory of a run under `root`.
pub fn run_dir(config: &RunConfig, root: &Path) -> PathBuf {
    root.join(config.output_dir.clone().unwrap_or_else(|| PathBuf::from(config.run_name())))
}

fn training_error(e: impl std::fmt::Display) -> CliError {
    CliError::Training(e.to_string())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Training points plus, for Navier-Stokes, the dataset they came from.
pub struct Setup {
    pub problem: PdeProblem,
    pub set: TrainingSet,
    pub dataset: Option<NsDataset>,
}

pub fn setup(config: &RunConfig) -> Result<Setup> {
    let c = config.collocation();
    if config.problem == ProblemName::NavierStokes {
        let path = config.navier_stokes.dataset.as_ref().expect("validated");
        let dataset = NsDataset::load(path).map_err(|e| CliError::read(path, e))?;
        let problem = PdeProblem::navier_stokes()
            .with_bounds(dataset.bounds())
            .map_err(|e| CliError::read(path, e))?;
        let grid = dataset.build_st_grid();
        let samples = sample_training_points(&grid, config.navier_stokes.n_train, config.seed)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let mut points = Points::new(3);
        let mut targets = Vec::with_capacity(2 * samples.len());
        for s in &samples {
            points.push(&[s.x, s.y, s.t]);
            targets.extend([s.u, s.v]);
        }
        let sequences = SequenceSet::from_points(&points, c.k, c.dt).map_err(training_error)?;
        let set = TrainingSet::with_observations(&problem, sequences, targets).map_err(training_error)?;
        Ok(Setup {
            problem,
            set,
            dataset: Some(dataset),
        })
    } else {
        let problem = PdeProblem::by_name(config.problem);
        let draw = problem
            .sample_collocation(c.n_x, c.n_t, c.n_ic, c.n_bc, config.seed)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let set = TrainingSet::from_collocation(&problem, &draw, c.k, c.dt).map_err(training_error)?;
        Ok(Setup {
            problem,
            set,
            dataset: None,
        })
    }
}

/// Prediction and closed-form truth on the `101 × 101` test grid.
pub fn evaluate_grid(problem: &PdeProblem, model: &Model, c: &ResolvedCollocation, chunk: usize) -> Result<(FieldGrid, FieldGrid)> {
    let (x_lo, x_hi) = problem.bounds[0];
    let (t_lo, t_hi) = problem.bounds[1];
    let xs = linspace(x_lo, x_hi, TEST_GRID);
    let ts = linspace(t_lo, t_hi, TEST_GRID);
    let mut points = Points::new(2);
    for &t in &ts {
        for &x in &xs {
            points.push(&[x, t]);
        }
    }
    let sequences = SequenceSet::from_points(&points, c.k, c.dt).map_err(training_error)?;
    let values = predict(problem, model, &sequences, chunk).map_err(training_error)?;
    let pred = FieldGrid::new(xs.clone(), ts.clone(), values).map_err(training_error)?;
    let mut truth_err = None;
    let truth = FieldGrid::from_fn(xs, ts, |x, t| {
        problem.analytical(x, t).unwrap_or_else(|e| {
            truth_err = Some(e);
            f64::NAN
        })
    });
    if let Some(e) = truth_err {
        return Err(training_error(e));
    }
    Ok((pred, truth))
}

/// Predictions on the dataset's test slice with the pressure offset applied.
pub fn evaluate_flow(
    problem: &PdeProblem,
    model: &Model,
    dataset: &NsDataset,
    test_time: Option<f64>,
    c: &ResolvedCollocation,
    chunk: usize,
) -> Result<(Vec<FlowRecord>, NsMetrics)> {
    let t = test_time.unwrap_or_else(|| *dataset.t.last().expect("validated dataset has times"));
    let slice = dataset.test_slice(t).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut points = Points::new(3);
    for (x, y) in slice.x.iter().zip(&slice.y) {
        points.push(&[*x, *y, slice.t]);
    }
    let sequences = SequenceSet::from_points(&points, c.k, c.dt).map_err(training_error)?;
    let flow = predict_flow(problem, model, &sequences, chunk).map_err(training_error)?;
    let u: Vec<f64> = flow.iter().map(|f| f[0]).collect();
    let v: Vec<f64> = flow.iter().map(|f| f[1]).collect();
    let p_raw: Vec<f64> = flow.iter().map(|f| f[2]).collect();
    let (p, offset) = pressure_offset(&p_raw, &slice.p).map_err(training_error)?;
    let metric = |f: fn(&[f64], &[f64]) -> analysis::Result<f64>, a: &[f64], b: &[f64]| f(a, b).map_err(training_error);
    let metrics = NsMetrics {
        test_time: slice.t,
        points: slice.x.len(),
        pressure_offset: offset,
        rmae_u: metric(rmae_values, &u, &slice.u)?,
        rmse_u: metric(rmse_values, &u, &slice.u)?,
        rmae_v: metric(rmae_values, &v, &slice.v)?,
        rmse_v: metric(rmse_values, &v, &slice.v)?,
        rmae_p: metric(rmae_values, &p, &slice.p)?,
        rmse_p: metric(rmse_values, &p, &slice.p)?,
    };
    let rows = (0..slice.x.len())
        .map(|i| FlowRecord {
            x: slice.x[i],
            y: slice.y[i],
            u_pred: u[i],
            u_true: slice.u[i],
            v_pred: v[i],
            v_true: slice.v[i],
            p_pred: p[i],
            p_true: slice.p[i],
        })
        .collect();
    Ok((rows, metrics))
}

/// Trains, evaluates and writes every artifact of `config` under
/// `run_dir(config, root)`.
pub fn execute(config: &RunConfig, root: &Path) -> Result<RunReport> {
    config.validate()?;
    let started = Instant::now();
    let Setup { problem, set, dataset } = setup(config)?;
    let model_config = config.model_config();
    let mut model = Model::new(model_config.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let colloc = config.collocation();
    let train_config = config.train_config();
    let dir = run_dir(config, root);
    create_dir(&dir)?;
    let config_path = dir.join(artifacts::CONFIG_FILE);
    std::fs::write(&config_path, config.to_toml()).map_err(|e| CliError::io(&config_path, e))?;

    info!(
        "{}: {} on {}, {} parameters, {} iterations",
        config.run_name(),
        config.architecture,
        config.problem,
        model.parameter_count(),
        config.iterations
    );
    let log_every = (config.iterations / 20).max(1);
    let outcome = train_with(&mut model, &set, &train_config, |row, _| {
        if row.iteration % log_every == 0 || row.iteration + 1 == config.iterations {
            info!("iteration {} loss {:e}", row.iteration, row.loss.total);
        }
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(TrainError::NonFinite {
            iteration,
            loss,
            snapshot,
            trace,
        }) => {
            artifacts::write_trace(&dir.join(artifacts::TRACE_FILE), &trace)?;
            model.set_trainable_values(&snapshot).map_err(training_error)?;
            let path = dir.join(artifacts::FAILED_CHECKPOINT_FILE);
            Checkpoint::from_model(&model, Some(problem.bounds.clone()))
                .save(&path)
                .map_err(|e| CliError::read(&path, e))?;
            return Err(CliError::Training(format!(
                "non-finite value {loss} at iteration {iteration}; partial trace and last finite parameters written to {}",
                dir.display()
            )));
        }
        Err(e) => return Err(training_error(e)),
    };

    let chunk = config.training.chunk_size;
    let (rmae, rmse, bands, navier_stokes) = match &dataset {
        Some(dataset) => {
            let (rows, metrics) = evaluate_flow(&problem, &model, dataset, config.navier_stokes.test_time, &colloc, chunk)?;
            artifacts::write_flow(&dir.join(artifacts::FLOW_FILE), &rows)?;
            (metrics.rmae_p, metrics.rmse_p, None, Some(metrics))
        }
        None => {
            let (pred, truth) = evaluate_grid(&problem, &model, &colloc, chunk)?;
            artifacts::write_field(&dir.join(artifacts::FIELD_FILE), &pred, &truth)?;
            let bands = if config.problem == ProblemName::Convection {
                let report = band_errors(&pred, &truth, &BandSpec::default()).map_err(training_error)?;
                artifacts::write_bands(&dir.join(artifacts::BANDS_FILE), &report)?;
                Some(report.bands)
            } else {
                None
            };
            let rmae = analysis::rmae(&pred, &truth).map_err(training_error)?;
            let rmse = analysis::rmse(&pred, &truth).map_err(training_error)?;
            (rmae, rmse, bands, None)
        }
    };

    artifacts::write_trace(&dir.join(artifacts::TRACE_FILE), &outcome.trace)?;
    let path = dir.join(artifacts::CHECKPOINT_FILE);
    Checkpoint::from_model(&model, Some(problem.bounds.clone()))
        .save(&path)
        .map_err(|e| CliError::read(&path, e))?;

    let fallback_steps = outcome.steps.iter().filter(|s| s.status == StepStatus::Fallback).count();
    if fallback_steps > 0 {
        warn!("{fallback_steps} steps fell back to steepest descent");
    }
    let report = RunReport {
        name: config.run_name(),
        problem: config.problem,
        architecture: config.architecture,
        rmae,
        rmse,
        parameter_count: parameter_count(&model_config),
        flop_estimate: flop_estimate(&model_config, colloc.k),
        bands,
        navier_stokes,
        status: outcome.status,
        iterations: outcome.trace.len(),
        evaluations: outcome.evaluations,
        fallback_steps,
        final_loss: outcome.final_loss.total,
        final_components: outcome.final_loss.components.clone(),
        weights: outcome.weights,
        config: config.clone(),
        model: model_config,
        collocation: colloc,
        version: version(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    report.save(&dir.join(artifacts::REPORT_FILE))?;
    info!("{}: rMAE {:.4e}, rMSE {:.4e}", report.name, report.rmae, report.rmse);
    Ok(report)
}

/// Rebuilds the trained model of a finished run together with its problem.
pub fn load_model(dir: &Path) -> Result<(Model, PdeProblem)> {
    let report = RunReport::load(&dir.join(artifacts::REPORT_FILE))?;
    let path = dir.join(artifacts::CHECKPOINT_FILE);
    let checkpoint = Checkpoint::load(&path).map_err(|e| CliError::read(&path, e))?;
    let model = checkpoint.to_model().map_err(|e| CliError::read(&path, e))?;
    let mut problem = PdeProblem::by_name(report.problem);
    if let Some(bounds) = checkpoint.input_bounds {
        problem = problem.with_bounds(bounds).map_err(|e| CliError::read(&path, e))?;
    }
    Ok((model, problem))
}
