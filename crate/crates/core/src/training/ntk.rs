//! Loss balancing by neural-tangent-kernel traces: `K_i = Σ_r ‖∇_θ o_r‖²`
//! over the outputs `o_r` of component `i`, and `λ_i = Σ_j K_j / K_i`.

use log::warn;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{chunks, first_position, velocity, Component, LossWeights, Result, TrainingSet};
use crate::autodiff::{Tape, Var};
use crate::nn::Model;
use crate::pde::{coordinate_leaves, model_output, residual, Boundary};

/// Traces below this are clamped before inverting.
pub const NTK_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NtkConfig {
    /// Iterations between weight refreshes.
    pub period: usize,
    /// Sequences per component used for a trace; larger components are
    /// subsampled and the result scaled up by `size / cap`.
    pub cap: usize,
}

impl Default for NtkConfig {
    fn default() -> Self {
        Self { period: 50, cap: 256 }
    }
}

#[derive(Clone, Debug)]
pub struct NtkState {
    pub config: NtkConfig,
    rng: ChaCha8Rng,
    pub last_refresh: Option<usize>,
    pub traces: Vec<(Component, f64)>,
}

impl NtkState {
    pub fn new(config: NtkConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        Self {
            config,
            rng,
            last_refresh: None,
            traces: Vec::new(),
        }
    }

    pub fn due(&self, iteration: usize) -> bool {
        self.config.period > 0 && iteration % self.config.period == 0
    }

    pub fn refresh(&mut self, model: &Model, set: &TrainingSet, iteration: usize) -> Result<Vec<(Component, f64)>> {
        let traces = ntk_traces(model, set, self.config.cap, &mut self.rng)?;
        self.last_refresh = Some(iteration);
        self.traces = traces.clone();
        Ok(traces)
    }
}

/// `Σ_r ‖∂ outputs[r] / ∂ params‖²`, one backward pass per output element.
pub fn jacobian_trace<'t>(tape: &'t Tape, outputs: Var<'t>, params: &[Var<'t>]) -> Result<f64> {
    if params.is_empty() {
        return Ok(0.0);
    }
    let rows = tape.jacobian_rows(outputs, params)?;
    Ok(rows
        .iter()
        .flat_map(|row| row.iter())
        .flat_map(|t| t.data().iter())
        .map(|v| v * v)
        .sum())
}

/// Outputs whose Jacobian defines a component's trace: residual values for
/// the residual term, raw predictions for initial and boundary points, and
/// predicted velocities for Navier-Stokes data points.
fn component_outputs<'t>(
    tape: &'t Tape,
    model: &Model,
    set: &TrainingSet,
    component: Component,
    chunk: &super::Chunk,
) -> Result<(Vec<Var<'t>>, Vec<Var<'t>>)> {
    let problem = &set.problem;
    let p = model.bind(tape);
    let outputs = match component {
        Component::Residual => {
            let coords = coordinate_leaves(tape, &chunk.sequences, true);
            let out = model_output(problem, model, &p, &coords)?;
            residual(problem, &coords, out)?
        }
        Component::Initial => {
            let coords = coordinate_leaves(tape, &chunk.sequences, false);
            vec![first_position(model_output(problem, model, &p, &coords)?)?]
        }
        Component::Boundary => {
            let hi = chunk.partner.as_ref().expect("boundary chunks carry their partner");
            let lo_coords = coordinate_leaves(tape, &chunk.sequences, false);
            let hi_coords = coordinate_leaves(tape, hi, false);
            if problem.boundary() == Boundary::None {
                Vec::new()
            } else {
                vec![
                    model_output(problem, model, &p, &lo_coords)?,
                    model_output(problem, model, &p, &hi_coords)?,
                ]
            }
        }
        Component::Data => {
            let coords = coordinate_leaves(tape, &chunk.sequences, true);
            let out = model_output(problem, model, &p, &coords)?;
            let (u, v) = velocity(out, &coords)?;
            vec![first_position(u)?, first_position(v)?]
        }
    };
    Ok((outputs, p.trainable()))
}

/// NTK trace per present component. Components with more than `cap`
/// sequences are estimated from a subsample drawn from `rng`.
pub fn ntk_traces(model: &Model, set: &TrainingSet, cap: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(Component, f64)>> {
    let mut out = Vec::new();
    for component in set.components() {
        let all = chunks(set, component, 1);
        let n = all.len();
        let picked: Vec<usize> = if n <= cap {
            (0..n).collect()
        } else {
            let mut v = index::sample(rng, n, cap).into_vec();
            v.sort_unstable();
            v
        };
        let mut sum = 0.0;
        for &i in &picked {
            let tape = Tape::new();
            let (outputs, params) = component_outputs(&tape, model, set, component, &all[i])?;
            for o in outputs {
                sum += jacobian_trace(&tape, o, &params)?;
            }
        }
        out.push((component, sum * n as f64 / picked.len().max(1) as f64));
    }
    Ok(out)
}

/// `λ_i = Σ_j K_j / K_i`, with traces below [`NTK_EPSILON`] clamped (and a
/// warning logged). Components without a trace get weight 0.
pub fn update_weights(traces: &[(Component, f64)]) -> LossWeights {
    let clamped: Vec<(Component, f64)> = traces
        .iter()
        .map(|&(c, k)| {
            if k < NTK_EPSILON || k.is_nan() {
                warn!("NTK trace of the {c} term is {k:e}; clamped to {NTK_EPSILON:e}");
                (c, NTK_EPSILON)
            } else {
                (c, k)
            }
        })
        .collect();
    let total: f64 = clamped.iter().map(|(_, k)| k).sum();
    let mut weights = LossWeights::uniform(0.0);
    for (c, k) in clamped {
        weights.set(c, total / k);
    }
    weights
}
