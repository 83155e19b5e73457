//! Composite PINN loss, NTK-trace loss balancing, and the L-BFGS training loop.
//!
//! Loss and gradient are accumulated over chunks of sequences in a fixed
//! order, so an evaluation is bit-reproducible and its memory is bounded by
//! the chunk size.

mod lbfgs;
mod ntk;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::nn::{Model, NnError};
use crate::pde::{coordinate_leaves, derivative, model_output, residual, velocity, Boundary, PdeError, PdeProblem, SequenceSet};
pub use lbfgs::{Evaluation, Lbfgs, LbfgsConfig, StepReport, StepStatus, WolfeRecord};
pub use ntk::{ntk_traces, update_weights, NtkConfig, NtkState, NTK_EPSILON};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss component `{0}` has weight {1} but no points")]
    EmptyComponent(Component, f64),
    #[error("loss weight for `{0}` must be finite and non-negative, got {1}")]
    InvalidWeight(Component, f64),
    #[error("data targets: expected {expected} values, got {got}")]
    TargetLength { expected: usize, got: usize },
    #[error("non-finite loss or NTK trace ({loss}) at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        loss: f64,
        /// Trainable parameters of the last iterate with a finite loss.
        snapshot: Vec<f64>,
        trace: Vec<TraceRow>,
    },
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Loss terms. Navier-Stokes uses residual and data; the other problems
/// use residual, initial and boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Residual,
    Initial,
    Boundary,
    Data,
}

impl Component {
    pub const ALL: [Component; 4] = [Self::Residual, Self::Initial, Self::Boundary, Self::Data];

    pub fn name(self) -> &'static str {
        match self {
            Self::Residual => "residual",
            Self::Initial => "initial",
            Self::Boundary => "boundary",
            Self::Data => "data",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `λ` per component (residual, initial, boundary, and data for Navier-Stokes).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub residual: f64,
    pub initial: f64,
    pub boundary: f64,
    pub data: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl LossWeights {
    pub fn uniform(value: f64) -> Self {
        Self {
            residual: value,
            initial: value,
            boundary: value,
            data: value,
        }
    }

    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::Residual => self.residual,
            Component::Initial => self.initial,
            Component::Boundary => self.boundary,
            Component::Data => self.data,
        }
    }

    pub fn set(&mut self, c: Component, value: f64) {
        match c {
            Component::Residual => self.residual = value,
            Component::Initial => self.initial = value,
            Component::Boundary => self.boundary = value,
            Component::Data => self.data = value,
        }
    }
}

/// Pseudo-sequenced training points of one problem.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub problem: PdeProblem,
    pub residual: SequenceSet,
    pub initial: Option<SequenceSet>,
    /// Matched pairs: sequence `j` of the first set sits at `x_min`, of the second at `x_max`.
    pub boundary: Option<(SequenceSet, SequenceSet)>,
    /// Sequences with `(u, v)` targets at their first position, stored `[n, 2]`.
    pub data: Option<(SequenceSet, Vec<f64>)>,
}

impl TrainingSet {
    /// Residual, initial and boundary sets from a collocation draw.
    pub fn from_collocation(problem: &PdeProblem, set: &crate::pde::CollocationSet, k: usize, dt: f64) -> Result<Self> {
        let boundary = if problem.boundary() == Boundary::None {
            None
        } else {
            Some((
                SequenceSet::from_points(&set.boundary_lo, k, dt)?,
                SequenceSet::from_points(&set.boundary_hi, k, dt)?,
            ))
        };
        Ok(Self {
            problem: problem.clone(),
            residual: SequenceSet::from_points(&set.residual, k, dt)?,
            initial: if problem.has_initial_condition() {
                Some(SequenceSet::from_points(&set.initial, k, dt)?)
            } else {
                None
            },
            boundary,
            data: None,
        })
    }

    /// Navier-Stokes: residual and data terms share the sampled points.
    pub fn with_observations(problem: &PdeProblem, points: SequenceSet, targets: Vec<f64>) -> Result<Self> {
        if targets.len() != 2 * points.len() {
            return Err(TrainError::TargetLength {
                expected: 2 * points.len(),
                got: targets.len(),
            });
        }
        Ok(Self {
            problem: problem.clone(),
            residual: points.clone(),
            initial: None,
            boundary: None,
            data: Some((points, targets)),
        })
    }

    /// Components with at least one point, in canonical order.
    pub fn components(&self) -> Vec<Component> {
        let mut out = Vec::new();
        if !self.residual.is_empty() {
            out.push(Component::Residual);
        }
        if self.initial.as_ref().is_some_and(|s| !s.is_empty()) {
            out.push(Component::Initial);
        }
        if self.boundary.as_ref().is_some_and(|(s, _)| !s.is_empty()) {
            out.push(Component::Boundary);
        }
        if self.data.as_ref().is_some_and(|(s, _)| !s.is_empty()) {
            out.push(Component::Data);
        }
        out
    }

    fn size(&self, c: Component) -> usize {
        match c {
            Component::Residual => self.residual.len(),
            Component::Initial => self.initial.as_ref().map_or(0, |s| s.len()),
            Component::Boundary => self.boundary.as_ref().map_or(0, |(s, _)| s.len()),
            Component::Data => self.data.as_ref().map_or(0, |(s, _)| s.len()),
        }
    }
}

/// Unweighted component means and the weighted total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub components: Vec<(Component, f64)>,
}

impl LossBreakdown {
    pub fn get(&self, c: Component) -> Option<f64> {
        self.components.iter().find(|(k, _)| *k == c).map(|(_, v)| *v)
    }
}

fn first_position<'t>(v: Var<'t>) -> Result<Var<'t>> {
    Ok(v.slice(1, 0, 1)?)
}

/// Squared-error groups of one component on one chunk.
struct Terms<'t> {
    /// `(sum of squares, number of elements in the full component)`.
    parts: Vec<(Var<'t>, f64)>,
}

/// Squared-error groups of `component` on one chunk of the field
/// produced by `field` from the coordinate variables.
fn chunk_terms<'t>(
    tape: &'t Tape,
    field: &dyn Fn(&[Var<'t>]) -> Result<Var<'t>>,
    problem: &PdeProblem,
    component: Component,
    chunk: &Chunk,
) -> Result<Terms<'t>> {
    let k = chunk.sequences.k() as f64;
    let n = chunk.total as f64;
    let mut parts = Vec::new();
    match component {
        Component::Residual => {
            let coords = coordinate_leaves(tape, &chunk.sequences, true);
            let out = field(&coords)?;
            for r in residual(problem, &coords, out)? {
                parts.push((r.square().sum()?, n * k));
            }
        }
        Component::Initial => {
            let velocity_term = problem.has_initial_velocity();
            let coords = coordinate_leaves(tape, &chunk.sequences, velocity_term);
            let out = field(&coords)?;
            let u0 = first_position(out)?;
            let target = initial_targets(problem, &chunk.sequences)?;
            parts.push((u0.sub(&tape.constant(target))?.square().sum()?, n));
            if velocity_term {
                let u_t = first_position(derivative(out, coords[problem.time_axis()])?)?;
                parts.push((u_t.square().sum()?, n));
            }
        }
        Component::Boundary => {
            let hi = chunk.partner.as_ref().expect("boundary chunks carry their partner");
            let lo_coords = coordinate_leaves(tape, &chunk.sequences, false);
            let hi_coords = coordinate_leaves(tape, hi, false);
            let u_lo = field(&lo_coords)?;
            let u_hi = field(&hi_coords)?;
            match problem.boundary() {
                Boundary::Periodic => parts.push((u_lo.sub(&u_hi)?.square().sum()?, n * k)),
                Boundary::DirichletZero => {
                    parts.push((u_lo.square().sum()?, n * k));
                    parts.push((u_hi.square().sum()?, n * k));
                }
                Boundary::None => {}
            }
        }
        Component::Data => {
            let targets = chunk.targets.as_ref().expect("data chunks carry targets");
            let coords = coordinate_leaves(tape, &chunk.sequences, true);
            let out = field(&coords)?;
            let (u, v) = velocity(out, &coords)?;
            let len = chunk.sequences.len();
            let tu: Vec<f64> = targets.iter().step_by(2).copied().collect();
            let tv: Vec<f64> = targets.iter().skip(1).step_by(2).copied().collect();
            let tu = tape.constant(Tensor::new(vec![len, 1, 1], tu)?);
            let tv = tape.constant(Tensor::new(vec![len, 1, 1], tv)?);
            parts.push((first_position(u)?.sub(&tu)?.square().sum()?, n));
            parts.push((first_position(v)?.sub(&tv)?.square().sum()?, n));
        }
    }
    Ok(Terms { parts })
}

/// Pins a closure to the coordinate-to-field signature of one tape.
fn field_fn<'t, F: Fn(&[Var<'t>]) -> Result<Var<'t>>>(f: F) -> F {
    f
}

fn initial_targets(problem: &PdeProblem, sequences: &SequenceSet) -> Result<Tensor> {
    let values = (0..sequences.len())
        .map(|i| problem.initial_value(sequences.point(i, 0)[0]))
        .collect::<std::result::Result<Vec<f64>, _>>()?;
    Ok(Tensor::new(vec![sequences.len(), 1, 1], values)?)
}

struct Chunk {
    sequences: SequenceSet,
    partner: Option<SequenceSet>,
    targets: Option<Vec<f64>>,
    /// Size of the whole component.
    total: usize,
}

fn chunks(set: &TrainingSet, component: Component, size: usize) -> Vec<Chunk> {
    let size = size.max(1);
    let total = set.size(component);
    let mut out = Vec::new();
    for start in (0..total).step_by(size) {
        let end = (start + size).min(total);
        let chunk = match component {
            Component::Residual => Chunk {
                sequences: set.residual.slice(start, end),
                partner: None,
                targets: None,
                total,
            },
            Component::Initial => Chunk {
                sequences: set.initial.as_ref().expect("initial set").slice(start, end),
                partner: None,
                targets: None,
                total,
            },
            Component::Boundary => {
                let (lo, hi) = set.boundary.as_ref().expect("boundary set");
                Chunk {
                    sequences: lo.slice(start, end),
                    partner: Some(hi.slice(start, end)),
                    targets: None,
                    total,
                }
            }
            Component::Data => {
                let (s, t) = set.data.as_ref().expect("data set");
                Chunk {
                    sequences: s.slice(start, end),
                    partner: None,
                    targets: Some(t[2 * start..2 * end].to_vec()),
                    total,
                }
            }
        };
        out.push(chunk);
    }
    out
}

/// Default number of sequences per evaluation chunk.
pub const DEFAULT_CHUNK: usize = 256;

/// Weighted loss `Σ λ_c · L_c` with per-component breakdown, plus the
/// gradient with respect to the trainable parameters when `with_gradient`.
///
/// `L_c` is a mean of squared errors; a component made of several groups
/// (wave initial value and velocity, Dirichlet ends, Navier-Stokes
/// momentum pair or velocity pair) is the sum of the group means.
pub fn total_loss(
    model: &Model,
    set: &TrainingSet,
    weights: &LossWeights,
    chunk_size: usize,
    with_gradient: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    let present = set.components();
    for c in Component::ALL {
        let w = weights.get(c);
        if !w.is_finite() || w < 0.0 {
            return Err(TrainError::InvalidWeight(c, w));
        }
        if w != 0.0 && !present.contains(&c) && expected_component(&set.problem, c) {
            return Err(TrainError::EmptyComponent(c, w));
        }
    }
    let n_params = model.parameter_count();
    let mut gradient = with_gradient.then(|| vec![0.0; n_params]);
    let mut components = Vec::new();
    let mut total = 0.0;
    for &c in &present {
        let lambda = weights.get(c);
        let mut value = 0.0;
        for chunk in chunks(set, c, chunk_size) {
            let tape = Tape::new();
            let p = model.bind(&tape);
            let field = field_fn(|coords| Ok(model_output(&set.problem, model, &p, coords)?));
            let terms = chunk_terms(&tape, &field, &set.problem, c, &chunk)?;
            let mut chunk_loss: Option<Var<'_>> = None;
            for (sum_sq, count) in terms.parts {
                value += sum_sq.item()? / count;
                let scaled = sum_sq.scale(lambda / count);
                chunk_loss = Some(match chunk_loss {
                    None => scaled,
                    Some(acc) => acc.add(&scaled)?,
                });
            }
            if let (Some(g), Some(loss)) = (gradient.as_mut(), chunk_loss) {
                let leaves = p.trainable();
                let grads = tape.grad(loss, &leaves, false)?;
                let mut offset = 0;
                for v in grads.iter() {
                    let value = v.value();
                    for (gi, x) in g[offset..offset + value.numel()].iter_mut().zip(value.data()) {
                        *gi += x;
                    }
                    offset += value.numel();
                }
            }
        }
        total += lambda * value;
        components.push((c, value));
    }
    Ok((LossBreakdown { total, components }, gradient))
}

fn expected_component(problem: &PdeProblem, c: Component) -> bool {
    match c {
        Component::Residual => true,
        Component::Initial => problem.has_initial_condition(),
        Component::Boundary => problem.boundary() != Boundary::None,
        Component::Data => !problem.has_initial_condition(),
    }
}

/// One row of the loss trace: the objective at the start of an iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub weights: LossWeights,
    pub status: Option<StepStatus>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    /// NTK weight refresh period in iterations; `None` keeps `λ = 1`.
    pub ntk: Option<NtkConfig>,
    pub lbfgs: LbfgsConfig,
    pub chunk_size: usize,
    /// Seed for the NTK subsamples.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            ntk: Some(NtkConfig::default()),
            lbfgs: LbfgsConfig::default(),
            chunk_size: DEFAULT_CHUNK,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    /// All requested iterations ran.
    Completed,
    /// The gradient vanished before the budget was spent.
    Stationary,
    /// Neither line search could decrease the loss.
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trace: Vec<TraceRow>,
    pub final_loss: LossBreakdown,
    pub weights: LossWeights,
    pub status: TrainStatus,
    pub steps: Vec<StepReport>,
    /// `(iteration, K per component)` at each refresh.
    pub ntk_history: Vec<(usize, Vec<(Component, f64)>)>,
    pub evaluations: usize,
}

/// Full-batch L-BFGS training. The trace gets one row per completed
/// iteration; NTK weights refresh at iteration 0 and every `period`
/// iterations after.
pub fn train(model: &mut Model, set: &TrainingSet, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, set, config, |_, _| {})
}

/// [`train`], calling `observe` after every iteration with its trace row
/// and the parameters it produced.
pub fn train_with(
    model: &mut Model,
    set: &TrainingSet,
    config: &TrainConfig,
    mut observe: impl FnMut(&TraceRow, &[f64]),
) -> Result<TrainOutcome> {
    let mut weights = LossWeights::default();
    let mut ntk_state = config.ntk.clone().map(|c| NtkState::new(c, config.seed));
    let mut optimizer = Lbfgs::new(config.lbfgs.clone());
    let mut x = model.trainable_values();
    let mut trace = Vec::with_capacity(config.iterations);
    let mut steps = Vec::with_capacity(config.iterations);
    let mut ntk_history = Vec::new();
    let mut evaluations = 0;

    let mut probe = model.clone();
    let mut eval = |x: &[f64], weights: &LossWeights, evaluations: &mut usize| -> Result<(LossBreakdown, Vec<f64>)> {
        probe.set_trainable_values(x)?;
        *evaluations += 1;
        let (loss, g) = total_loss(&probe, set, weights, config.chunk_size, true)?;
        Ok((loss, g.expect("gradient requested")))
    };

    let mut current: Option<(LossBreakdown, Vec<f64>)> = None;
    let mut status = TrainStatus::Completed;
    for iteration in 0..config.iterations {
        if let Some(state) = ntk_state.as_mut() {
            if state.due(iteration) {
                model.set_trainable_values(&x)?;
                let traces = state.refresh(model, set, iteration)?;
                if let Some(&(_, k)) = traces.iter().find(|(_, k)| !k.is_finite()) {
                    return Err(TrainError::NonFinite {
                        iteration,
                        loss: k,
                        snapshot: x,
                        trace,
                    });
                }
                weights = update_weights(&traces);
                ntk_history.push((iteration, traces));
                current = None;
            }
        }
        let (loss, mut g) = match current.take() {
            Some(c) => c,
            None => eval(&x, &weights, &mut evaluations)?,
        };
        if !loss.total.is_finite() {
            return Err(TrainError::NonFinite {
                iteration,
                loss: loss.total,
                snapshot: x,
                trace,
            });
        }
        let row_index = trace.len();
        trace.push(TraceRow {
            iteration,
            loss: loss.clone(),
            weights,
            status: None,
        });

        let mut f = loss.total;
        let x_before = x.clone();
        let mut probed: Vec<LossBreakdown> = Vec::new();
        let report = optimizer.step(&mut x, &mut f, &mut g, |candidate| {
            let (b, g) = eval(candidate, &weights, &mut evaluations)?;
            let f = b.total;
            probed.push(b);
            Ok::<_, TrainError>((f, g))
        })?;
        trace[row_index].status = Some(report.status);
        observe(&trace[row_index], &x);
        let step_status = report.status;
        steps.push(report);
        match step_status {
            StepStatus::Wolfe | StepStatus::Fallback => {
                let accepted = probed
                    .into_iter()
                    .rev()
                    .find(|b| b.total.to_bits() == f.to_bits())
                    .expect("accepted point was evaluated");
                current = Some((accepted, g));
            }
            StepStatus::Stationary => {
                status = TrainStatus::Stationary;
                current = Some((loss, g));
                break;
            }
            StepStatus::Failed => {
                status = TrainStatus::LineSearchFailed;
                x = x_before;
                current = Some((loss, g));
                break;
            }
        }
    }
    model.set_trainable_values(&x)?;
    let final_loss = match current {
        Some((loss, _)) => loss,
        None => total_loss(model, set, &weights, config.chunk_size, false)?.0,
    };
    Ok(TrainOutcome {
        trace,
        final_loss,
        weights,
        status,
        steps,
        ntk_history,
        evaluations,
    })
}

#[cfg(test)]
mod tests;
