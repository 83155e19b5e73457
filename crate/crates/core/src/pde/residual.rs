use super::{Equation, PdeError, PdeProblem, Result, SequenceSet};
use crate::autodiff::{Tape, Var};
use crate::nn::{Bound, Model};

/// One `[len, k, 1]` tape variable per coordinate. With `differentiable`
/// they are leaves, so residuals can take derivatives with respect to them.
pub fn coordinate_leaves<'t>(tape: &'t Tape, sequences: &SequenceSet, differentiable: bool) -> Vec<Var<'t>> {
    (0..sequences.dim())
        .map(|axis| {
            let values = sequences.coordinate(axis);
            if differentiable {
                tape.leaf(values)
            } else {
                tape.constant(values)
            }
        })
        .collect()
}

/// Normalized `[len, k, d_in]` model input built inside the graph, so
/// derivatives flow back to the physical coordinates.
pub fn normalized_input<'t>(problem: &PdeProblem, coords: &[Var<'t>]) -> Result<Var<'t>> {
    if coords.len() != problem.d_in() {
        return Err(PdeError::Dimension {
            expected: problem.d_in(),
            got: coords.len(),
        });
    }
    let parts: Vec<Var<'t>> = coords
        .iter()
        .zip(&problem.bounds)
        .map(|(c, &(lo, hi))| c.shift(-lo).scale(1.0 / (hi - lo)))
        .collect();
    let axis = parts[0].shape().len() - 1;
    Ok(coords[0].tape().concat(&parts, axis)?)
}

/// Model prediction `[len, k, d_out]` at raw coordinates.
pub fn model_output<'t>(problem: &PdeProblem, model: &Model, p: &Bound<'t>, coords: &[Var<'t>]) -> Result<Var<'t>> {
    let config = model.config();
    if config.d_in != problem.d_in() {
        return Err(PdeError::Dimension {
            expected: problem.d_in(),
            got: config.d_in,
        });
    }
    if config.d_out != problem.d_out() {
        return Err(PdeError::OutputWidth {
            expected: problem.d_out(),
            got: config.d_out,
        });
    }
    let z = normalized_input(problem, coords)?;
    Ok(model.forward(p, z)?)
}

/// `∂(Σ y)/∂x`, recorded so it can be differentiated again.
///
/// For a pointwise field this is the elementwise partial derivative. For a
/// sequence model it also collects the influence of `x` at one position on
/// the outputs at the other positions of the same sequence.
pub fn derivative<'t>(y: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
    let grads = y.tape().grad(y.sum()?, &[x], true)?;
    Ok(grads.into_vec()[0])
}

/// Velocity `(u, v) = (ψ_y, −ψ_x)` from a `(ψ, p)` output.
pub fn velocity<'t>(out: Var<'t>, coords: &[Var<'t>]) -> Result<(Var<'t>, Var<'t>)> {
    let axis = out.shape().len() - 1;
    let psi = out.slice(axis, 0, 1)?;
    let u = derivative(psi, coords[1])?;
    let v = derivative(psi, coords[0])?.neg();
    Ok((u, v))
}

/// Position-0 predictions, `[len, d_out]` row-major, evaluated `chunk`
/// sequences at a time.
pub fn predict(problem: &PdeProblem, model: &Model, sequences: &SequenceSet, chunk: usize) -> Result<Vec<f64>> {
    let k = sequences.k();
    let d_out = problem.d_out();
    let mut out = Vec::with_capacity(sequences.len() * d_out);
    for c in sequences.chunks(chunk.max(1)) {
        let tape = Tape::new();
        let p = model.bind(&tape);
        let coords = coordinate_leaves(&tape, &c, false);
        let y = model_output(problem, model, &p, &coords)?.value();
        for i in 0..c.len() {
            out.extend_from_slice(&y.data()[i * k * d_out..i * k * d_out + d_out]);
        }
    }
    Ok(out)
}

/// Navier-Stokes `(u, v, p)` at position 0 of every sequence.
pub fn predict_flow(problem: &PdeProblem, model: &Model, sequences: &SequenceSet, chunk: usize) -> Result<Vec<[f64; 3]>> {
    let k = sequences.k();
    let mut out = Vec::with_capacity(sequences.len());
    for c in sequences.chunks(chunk.max(1)) {
        let tape = Tape::new();
        let p = model.bind(&tape);
        let coords = coordinate_leaves(&tape, &c, true);
        let y = model_output(problem, model, &p, &coords)?;
        let (u, v) = velocity(y, &coords)?;
        let (u, v, y) = (u.value(), v.value(), y.value());
        for i in 0..c.len() {
            out.push([u.data()[i * k], v.data()[i * k], y.data()[i * k * 2 + 1]]);
        }
    }
    Ok(out)
}

/// PDE residuals at every sequence position: one tensor for the scalar
/// problems, the x- and y-momentum residuals for Navier-Stokes.
///
/// `coords` must be the leaves `out` was computed from.
pub fn residual<'t>(problem: &PdeProblem, coords: &[Var<'t>], out: Var<'t>) -> Result<Vec<Var<'t>>> {
    if coords.len() != problem.d_in() {
        return Err(PdeError::Dimension {
            expected: problem.d_in(),
            got: coords.len(),
        });
    }
    let shape = out.shape();
    let width = shape.last().copied().unwrap_or(0);
    if width != problem.d_out() {
        return Err(PdeError::OutputWidth {
            expected: problem.d_out(),
            got: width,
        });
    }
    let axis = shape.len() - 1;
    match problem.equation {
        Equation::Convection { beta } => {
            let (x, t) = (coords[0], coords[1]);
            let u_t = derivative(out, t)?;
            let u_x = derivative(out, x)?;
            Ok(vec![u_t.add(&u_x.scale(beta))?])
        }
        Equation::Reaction { rho } => {
            let u_t = derivative(out, coords[1])?;
            let logistic = out.sub(&out.square())?;
            Ok(vec![u_t.sub(&logistic.scale(rho))?])
        }
        Equation::Wave { speed_squared, .. } => {
            let (x, t) = (coords[0], coords[1]);
            let u_tt = derivative(derivative(out, t)?, t)?;
            let u_xx = derivative(derivative(out, x)?, x)?;
            Ok(vec![u_tt.sub(&u_xx.scale(speed_squared))?])
        }
        Equation::NavierStokes { lambda1, lambda2 } => {
            let (x, y, t) = (coords[0], coords[1], coords[2]);
            let (u, v) = velocity(out, coords)?;
            let p = out.slice(axis, 1, 2)?;
            let p_x = derivative(p, x)?;
            let p_y = derivative(p, y)?;
            let momentum = |w: Var<'t>, p_w: Var<'t>| -> Result<Var<'t>> {
                let w_t = derivative(w, t)?;
                let w_x = derivative(w, x)?;
                let w_y = derivative(w, y)?;
                let w_xx = derivative(w_x, x)?;
                let w_yy = derivative(w_y, y)?;
                let advection = u.mul(&w_x)?.add(&v.mul(&w_y)?)?;
                let diffusion = w_xx.add(&w_yy)?;
                Ok(w_t
                    .add(&advection.scale(lambda1))?
                    .add(&p_w)?
                    .sub(&diffusion.scale(lambda2))?)
            };
            Ok(vec![momentum(u, p_x)?, momentum(v, p_y)?])
        }
    }
}
