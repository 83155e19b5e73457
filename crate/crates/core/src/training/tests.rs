use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Tape, Tensor, Var};
use crate::nn::{Architecture, Model, ModelConfig};
use crate::pde::{model_output, PdeProblem, Points};

fn tiny(architecture: Architecture, problem: &PdeProblem) -> Model {
    let mut config = ModelConfig::baseline(architecture);
    config.d_in = problem.d_in();
    config.d_out = problem.d_out();
    config.d_emb = 4;
    config.d_hidden = 6;
    config.d_ff = 6;
    config.d_mapping = 4;
    if architecture == Architecture::Mlp {
        config.n_layers = 3;
    }
    Model::new(config).unwrap()
}

/// An MLP whose output is the constant `b` in every channel.
fn constant_model(problem: &PdeProblem, b: f64) -> Model {
    let mut model = tiny(Architecture::Mlp, problem);
    let last_bias = model
        .store()
        .params()
        .iter()
        .rposition(|p| p.name.ends_with(".bias"))
        .unwrap();
    for (i, p) in model.store_mut().params_mut().iter_mut().enumerate() {
        let fill = if i == last_bias { b } else { 0.0 };
        p.value.data_mut().iter_mut().for_each(|v| *v = fill);
    }
    model
}

fn grid_set(problem: &PdeProblem, k: usize, seed: u64) -> TrainingSet {
    let colloc = problem.sample_collocation(4, 3, 5, 4, seed).unwrap();
    TrainingSet::from_collocation(problem, &colloc, k, 1e-3).unwrap()
}

fn ns_set(k: usize) -> TrainingSet {
    let problem = PdeProblem::navier_stokes();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut points = Points::new(3);
    let mut targets = Vec::new();
    for _ in 0..6 {
        points.push(&[rng.gen_range(1.0..8.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.0..19.0)]);
        targets.push(rng.gen_range(-1.0..1.0));
        targets.push(rng.gen_range(-1.0..1.0));
    }
    let seqs = SequenceSet::from_points(&points, k, 1e-2).unwrap();
    TrainingSet::with_observations(&problem, seqs, targets).unwrap()
}

fn loss(model: &Model, set: &TrainingSet, weights: &LossWeights) -> LossBreakdown {
    total_loss(model, set, weights, DEFAULT_CHUNK, false).unwrap().0
}

fn mean_sq_ic(set: &TrainingSet, b: f64) -> f64 {
    let ic = set.initial.as_ref().unwrap();
    (0..ic.len())
        .map(|i| (b - set.problem.initial_value(ic.point(i, 0)[0]).unwrap()).powi(2))
        .sum::<f64>()
        / ic.len() as f64
}

// ---- loss against closed forms of a constant field u ≡ b ----

#[test]
fn constant_field_losses_match_closed_forms() {
    let b = 0.3;
    let reaction = grid_set(&PdeProblem::reaction(), 1, 0);
    let l = loss(&constant_model(&reaction.problem, b), &reaction, &LossWeights::default());
    let rho = 5.0;
    assert!((l.get(Component::Residual).unwrap() - (rho * b * (1.0 - b)).powi(2)).abs() < 1e-12);
    assert!((l.get(Component::Initial).unwrap() - mean_sq_ic(&reaction, b)).abs() < 1e-12);
    assert!(l.get(Component::Boundary).unwrap().abs() < 1e-14);
    let sum: f64 = l.components.iter().map(|(_, v)| v).sum();
    assert!((l.total - sum).abs() < 1e-12);

    let convection = grid_set(&PdeProblem::convection(), 1, 1);
    let l = loss(&constant_model(&convection.problem, b), &convection, &LossWeights::default());
    assert!(l.get(Component::Residual).unwrap().abs() < 1e-14);
    assert!((l.get(Component::Initial).unwrap() - mean_sq_ic(&convection, b)).abs() < 1e-12);

    let wave = grid_set(&PdeProblem::wave(), 1, 2);
    let l = loss(&constant_model(&wave.problem, b), &wave, &LossWeights::default());
    assert!(l.get(Component::Residual).unwrap().abs() < 1e-14);
    assert!((l.get(Component::Initial).unwrap() - mean_sq_ic(&wave, b)).abs() < 1e-12);
    assert!((l.get(Component::Boundary).unwrap() - 2.0 * b * b).abs() < 1e-12);

    let ns = ns_set(1);
    let l = loss(&constant_model(&ns.problem, b), &ns, &LossWeights::default());
    assert!(l.get(Component::Residual).unwrap().abs() < 1e-14);
    let t = &ns.data.as_ref().unwrap().1;
    let expected = t.iter().map(|v| v * v).sum::<f64>() / 6.0;
    assert!((l.get(Component::Data).unwrap() - expected).abs() < 1e-12);
    assert_eq!(l.get(Component::Initial), None);
}

fn hr<F: for<'t> Fn(&[Var<'t>]) -> Var<'t>>(f: F) -> F {
    f
}

/// Component means of a closed-form field, through the same term builder
/// as the model loss.
fn field_loss(set: &TrainingSet, field: &dyn for<'t> Fn(&[Var<'t>]) -> Var<'t>) -> Vec<(Component, f64)> {
    set.components()
        .into_iter()
        .map(|c| {
            let mut value = 0.0;
            for chunk in chunks(set, c, 7) {
                let tape = Tape::new();
                let f = field_fn(|coords| Ok(field(coords)));
                for (sum_sq, count) in chunk_terms(&tape, &f, &set.problem, c, &chunk).unwrap().parts {
                    value += sum_sq.item().unwrap() / count;
                }
            }
            (c, value)
        })
        .collect()
}

#[test]
fn exact_solutions_zero_every_loss_component() {
    let s = std::f64::consts::PI / 4.0;
    let reaction = hr(|c| {
        let h = c[0].shift(-std::f64::consts::PI).square().scale(-1.0 / (2.0 * s * s)).exp();
        let e = c[1].scale(5.0).exp();
        let num = h.mul(&e).unwrap();
        num.div(&num.add(&h.neg().shift(1.0)).unwrap()).unwrap()
    });
    let set = grid_set(&PdeProblem::reaction(), 5, 3);
    for (c, v) in field_loss(&set, &reaction) {
        assert!(v < 1e-10, "{c}: {v:e}");
    }
    let convection = hr(|c| c[0].sub(&c[1].scale(50.0)).unwrap().sin());
    let set = grid_set(&PdeProblem::convection(), 5, 3);
    for (c, v) in field_loss(&set, &convection) {
        assert!(v < 1e-10, "{c}: {v:e}");
    }
    let pi = std::f64::consts::PI;
    let wave = hr(|c| {
        let a = c[0].scale(pi).sin().mul(&c[1].scale(2.0 * pi).cos()).unwrap();
        let b = c[0].scale(3.0 * pi).sin().mul(&c[1].scale(6.0 * pi).cos()).unwrap();
        a.add(&b.scale(0.5)).unwrap()
    });
    let set = grid_set(&PdeProblem::wave(), 5, 3);
    for (c, v) in field_loss(&set, &wave) {
        assert!(v < 1e-10, "{c}: {v:e}");
    }
}

#[test]
fn reaction_fixed_point_leaves_only_the_initial_term() {
    // u ≡ 1 solves u_t = ρu(1−u) and is periodic in x
    let set = grid_set(&PdeProblem::reaction(), 5, 4);
    let l = loss(&constant_model(&set.problem, 1.0), &set, &LossWeights::default());
    assert!(l.get(Component::Residual).unwrap() < 1e-20);
    assert!(l.get(Component::Boundary).unwrap() < 1e-20);
    assert!((l.get(Component::Initial).unwrap() - mean_sq_ic(&set, 1.0)).abs() < 1e-12);
}

#[test]
fn weights_mask_and_scale_components() {
    let problem = PdeProblem::reaction();
    let set = grid_set(&problem, 3, 5);
    let model = tiny(Architecture::SPformer, &problem);
    let base = loss(&model, &set, &LossWeights::default());
    let r = base.get(Component::Residual).unwrap();
    let i = base.get(Component::Initial).unwrap();
    let b = base.get(Component::Boundary).unwrap();

    let mut only_residual = LossWeights::uniform(0.0);
    only_residual.residual = 1.0;
    let masked = loss(&model, &set, &only_residual);
    assert_eq!(masked.total, r);
    assert_eq!(masked.components, base.components);

    for a in [0.0, 0.5, 3.0, 100.0] {
        let mut w = LossWeights::default();
        w.initial = a;
        let l = loss(&model, &set, &w);
        assert!((l.total - (r + a * i + b)).abs() <= 1e-12 * l.total.max(1.0));
    }
}

#[test]
fn chunking_does_not_change_the_loss_or_gradient() {
    let problem = PdeProblem::wave();
    let set = grid_set(&problem, 3, 6);
    let model = tiny(Architecture::DoPformer, &problem);
    let w = LossWeights { residual: 1.0, initial: 2.0, boundary: 0.5, data: 0.0 };
    let (a, ga) = total_loss(&model, &set, &w, 1, true).unwrap();
    let (b, gb) = total_loss(&model, &set, &w, 1000, true).unwrap();
    assert!((a.total - b.total).abs() <= 1e-12 * a.total);
    for (x, y) in ga.unwrap().iter().zip(gb.unwrap()) {
        assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()));
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cases = [
        (PdeProblem::reaction(), Architecture::SPformer, grid_set(&PdeProblem::reaction(), 3, 7)),
        (PdeProblem::wave(), Architecture::Pformer, grid_set(&PdeProblem::wave(), 2, 8)),
        (PdeProblem::navier_stokes(), Architecture::DoPformer, ns_set(2)),
    ];
    let mut worst: f64 = 0.0;
    for (problem, arch, set) in cases {
        let mut model = tiny(arch, &problem);
        let w = LossWeights { residual: 1.0, initial: 1.5, boundary: 0.7, data: 1.3 };
        let w = if set.data.is_some() {
            LossWeights { initial: 0.0, boundary: 0.0, ..w }
        } else {
            LossWeights { data: 0.0, ..w }
        };
        let x0 = model.trainable_values();
        let (_, g) = total_loss(&model, &set, &w, DEFAULT_CHUNK, true).unwrap();
        let g = g.unwrap();
        for _ in 0..8 {
            let i = rng.gen_range(0..x0.len());
            let h = 1e-4;
            let mut at = |delta: f64| {
                let mut x = x0.clone();
                x[i] += delta;
                model.set_trainable_values(&x).unwrap();
                loss(&model, &set, &w).total
            };
            let fd = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
            let err = (fd - g[i]).abs() / (1.0 + g[i].abs());
            worst = worst.max(err);
        }
        model.set_trainable_values(&x0).unwrap();
    }
    println!("worst relative gradient error {worst:e}");
    assert!(worst < 1e-6);
}

#[test]
fn invalid_weights_and_missing_components_are_rejected() {
    let problem = PdeProblem::reaction();
    let mut set = grid_set(&problem, 1, 0);
    let model = tiny(Architecture::Mlp, &problem);
    let mut w = LossWeights::default();
    w.boundary = -1.0;
    assert!(matches!(
        total_loss(&model, &set, &w, 8, false),
        Err(TrainError::InvalidWeight(Component::Boundary, _))
    ));
    w.boundary = f64::NAN;
    assert!(total_loss(&model, &set, &w, 8, false).is_err());
    set.initial = None;
    assert!(matches!(
        total_loss(&model, &set, &LossWeights::default(), 8, false),
        Err(TrainError::EmptyComponent(Component::Initial, _))
    ));
    let mut w = LossWeights::default();
    w.initial = 0.0;
    assert!(total_loss(&model, &set, &w, 8, false).is_ok());
    let seqs = SequenceSet::from_points(&Points::from_flat(3, vec![2.0, 0.0, 1.0]).unwrap(), 1, 0.1).unwrap();
    assert!(matches!(
        TrainingSet::with_observations(&PdeProblem::navier_stokes(), seqs, vec![0.0]),
        Err(TrainError::TargetLength { expected: 2, got: 1 })
    ));
}

// ---- L-BFGS ----

fn rosenbrock(x: &[f64]) -> Evaluation {
    let (a, b) = (x[0], x[1]);
    let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
    let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
    (f, g)
}

#[test]
fn lbfgs_solves_rosenbrock_with_wolfe_steps() {
    let mut opt = Lbfgs::new(LbfgsConfig::default());
    let mut x = vec![-1.2, 1.0];
    let (mut f, mut g) = rosenbrock(&x);
    let mut iterations = 0;
    while f >= 1e-6 && iterations < 100 {
        let report = opt
            .step(&mut x, &mut f, &mut g, |x| Ok::<_, ()>(rosenbrock(x)))
            .unwrap();
        assert!(report.loss <= report.loss_before);
        if let Some(w) = report.wolfe {
            assert!(w.armijo(1e-4), "{w:?}");
            assert!(w.curvature(0.9), "{w:?}");
        } else {
            assert_eq!(report.status, StepStatus::Fallback);
        }
        iterations += 1;
    }
    println!("rosenbrock: f = {f:e} after {iterations} iterations");
    assert!(f < 1e-6);
}

#[test]
fn lbfgs_minimizes_a_quadratic_in_two_steps() {
    let quad = |x: &[f64]| -> Evaluation { (0.5 * (x[0] * x[0] + x[1] * x[1]), x.to_vec()) };
    let mut opt = Lbfgs::new(LbfgsConfig::default());
    let mut x = vec![3.0, 4.0];
    let (mut f, mut g) = quad(&x);
    for _ in 0..2 {
        let r = opt.step(&mut x, &mut f, &mut g, |x| Ok::<_, ()>(quad(x))).unwrap();
        assert_eq!(r.status, StepStatus::Wolfe);
    }
    assert!(x.iter().all(|v| v.abs() < 1e-12), "{x:?}");
    assert!(f < 1e-24);
}

#[test]
fn lbfgs_is_a_no_op_at_a_stationary_point() {
    let mut opt = Lbfgs::new(LbfgsConfig::default());
    let mut x = vec![1.0, -2.0];
    let mut f = 7.0;
    let mut g = vec![0.0, 0.0];
    let mut calls = 0;
    let r = opt
        .step(&mut x, &mut f, &mut g, |_| {
            calls += 1;
            Ok::<_, ()>((0.0, vec![0.0, 0.0]))
        })
        .unwrap();
    assert_eq!(r.status, StepStatus::Stationary);
    assert_eq!((x, f, calls, opt.history_len()), (vec![1.0, -2.0], 7.0, 0, 0));
}

#[test]
fn lbfgs_without_history_is_steepest_descent() {
    let opt = Lbfgs::new(LbfgsConfig::default());
    assert_eq!(opt.direction(&[1.5, -2.0, 0.0]), vec![-1.5, 2.0, -0.0]);
}

/// Dense inverse-BFGS recursion `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`
/// from `H₀ = γ I`.
fn dense_direction(pairs: &[(Vec<f64>, Vec<f64>)], g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (s_last, y_last) = pairs.last().unwrap();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let gamma = dot(s_last, y_last) / dot(y_last, y_last);
    let mut h = vec![vec![0.0; n]; n];
    for (i, row) in h.iter_mut().enumerate() {
        row[i] = gamma;
    }
    for (s, y) in pairs {
        let rho = 1.0 / dot(s, y);
        let v: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| f64::from(u8::from(i == j)) - rho * y[i] * s[j]).collect())
            .collect();
        let mut vt_h = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                vt_h[i][j] = (0..n).map(|l| v[l][i] * h[l][j]).sum();
            }
        }
        for i in 0..n {
            for j in 0..n {
                h[i][j] = (0..n).map(|l| vt_h[i][l] * v[l][j]).sum::<f64>() + rho * s[i] * s[j];
            }
        }
    }
    (0..n).map(|i| -dot(&h[i], g)).collect()
}

#[test]
fn two_loop_recursion_matches_dense_bfgs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 6;
    // SPD matrix A = MᵀM + I gives curvature pairs y = A s
    let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|l| m[l][i] * m[l][j]).sum::<f64>() + f64::from(u8::from(i == j)))
                .collect()
        })
        .collect();
    let mut opt = Lbfgs::new(LbfgsConfig { history: 4, ..LbfgsConfig::default() });
    let mut pairs = Vec::new();
    for _ in 0..6 {
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i][j] * s[j]).sum()).collect();
        opt.store_pair(s.clone(), y.clone());
        pairs.push((s, y));
    }
    assert_eq!(opt.history_len(), 4);
    let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let fast = opt.direction(&g);
    let dense = dense_direction(&pairs[2..], &g);
    for (x, y) in fast.iter().zip(&dense) {
        assert!((x - y).abs() < 1e-10, "{fast:?} vs {dense:?}");
    }
}

#[test]
fn cubic_interpolation_finds_the_minimizer_of_a_cubic() {
    // f(x) = (x − 1)³ − 3(x − 1) has its local minimum at x = 2
    let f = |x: f64| (x - 1.0).powi(3) - 3.0 * (x - 1.0);
    let df = |x: f64| 3.0 * (x - 1.0).powi(2) - 3.0;
    let t = lbfgs_cubic(1.0, f(1.0), df(1.0), 3.0, f(3.0), df(3.0));
    assert!((t - 2.0).abs() < 1e-12);
}

fn lbfgs_cubic(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64) -> f64 {
    super::lbfgs::cubic_interpolate(x1, f1, g1, x2, f2, g2)
}

// ---- NTK ----

#[test]
fn ntk_trace_of_a_linear_map() {
    let tape = Tape::new();
    let theta = tape.leaf(Tensor::scalar(0.7));
    let x = tape.constant(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let u = theta.mul(&x).unwrap();
    assert!((ntk::jacobian_trace(&tape, u, &[theta]).unwrap() - 5.0).abs() < 1e-14);
    assert_eq!(ntk::jacobian_trace(&tape, u, &[]).unwrap(), 0.0);
}

#[test]
fn frozen_model_has_zero_traces_and_equal_weights() {
    let problem = PdeProblem::reaction();
    let set = grid_set(&problem, 2, 0);
    let mut model = tiny(Architecture::SPformer, &problem);
    for p in model.store_mut().params_mut() {
        p.trainable = false;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let traces = ntk_traces(&model, &set, 256, &mut rng).unwrap();
    assert_eq!(traces.len(), 3);
    assert!(traces.iter().all(|(_, k)| *k == 0.0));
    let w = update_weights(&traces);
    assert_eq!((w.residual, w.initial, w.boundary, w.data), (3.0, 3.0, 3.0, 0.0));
}

#[test]
fn duplicated_points_double_the_trace() {
    let problem = PdeProblem::convection();
    let set = grid_set(&problem, 2, 1);
    let model = tiny(Architecture::DoPformer, &problem);
    let mut doubled = set.clone();
    let n = set.residual.len();
    let twice: Vec<usize> = (0..n).chain(0..n).collect();
    doubled.residual = set.residual.select(&twice);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = ntk_traces(&model, &set, 1000, &mut rng).unwrap();
    let b = ntk_traces(&model, &doubled, 1000, &mut rng).unwrap();
    assert!(a[0].1 > 0.0);
    assert!((b[0].1 - 2.0 * a[0].1).abs() < 1e-10 * a[0].1);
    assert_eq!(a[1..], b[1..]);
}

/// Outputs of one component as a plain vector, for finite differences.
fn component_values(model: &Model, set: &TrainingSet, component: Component) -> Vec<f64> {
    let tape = Tape::new();
    let p = model.bind(&tape);
    let problem = &set.problem;
    let mut out = Vec::new();
    let mut flatten = |v: Var<'_>| out.extend_from_slice(v.value().data());
    match component {
        Component::Residual => {
            let coords = coordinate_leaves(&tape, &set.residual, true);
            let y = model_output(problem, model, &p, &coords).unwrap();
            residual(problem, &coords, y).unwrap().into_iter().for_each(&mut flatten);
        }
        Component::Initial => {
            let coords = coordinate_leaves(&tape, set.initial.as_ref().unwrap(), false);
            flatten(first_position(model_output(problem, model, &p, &coords).unwrap()).unwrap());
        }
        Component::Boundary => {
            let (lo, hi) = set.boundary.as_ref().unwrap();
            for s in [lo, hi] {
                let coords = coordinate_leaves(&tape, s, false);
                flatten(model_output(problem, model, &p, &coords).unwrap());
            }
        }
        Component::Data => {
            let coords = coordinate_leaves(&tape, &set.data.as_ref().unwrap().0, true);
            let y = model_output(problem, model, &p, &coords).unwrap();
            let (u, v) = velocity(y, &coords).unwrap();
            flatten(first_position(u).unwrap());
            flatten(first_position(v).unwrap());
        }
    }
    out
}

#[test]
fn ntk_traces_match_finite_difference_jacobians() {
    let reaction = grid_set(&PdeProblem::reaction(), 2, 9);
    let ns = ns_set(2);
    for (set, arch) in [(reaction, Architecture::SPformer), (ns, Architecture::Mlp)] {
        let mut model = tiny(arch, &set.problem);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traces = ntk_traces(&model, &set, 1000, &mut rng).unwrap();
        let x0 = model.trainable_values();
        let h = 1e-4;
        let mut fd = vec![0.0; traces.len()];
        for i in 0..x0.len() {
            let mut at = |delta: f64| {
                let mut x = x0.clone();
                x[i] += delta;
                model.set_trainable_values(&x).unwrap();
                traces.iter().map(|(c, _)| component_values(&model, &set, *c)).collect::<Vec<_>>()
            };
            let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
            for c in 0..traces.len() {
                for r in 0..p1[c].len() {
                    let d = (-p2[c][r] + 8.0 * p1[c][r] - 8.0 * m1[c][r] + m2[c][r]) / (12.0 * h);
                    fd[c] += d * d;
                }
            }
        }
        for ((c, k), f) in traces.iter().zip(&fd) {
            println!("{c}: K = {k:e}, finite differences {f:e}");
            assert!((k - f).abs() < 1e-6 * k.max(1.0), "{c}: {k} vs {f}");
        }
    }
}

#[test]
fn subsampled_traces_are_scaled_to_the_full_size() {
    let problem = PdeProblem::reaction();
    let colloc = problem.sample_collocation(1, 1, 1, 1, 0).unwrap();
    let one = TrainingSet::from_collocation(&problem, &colloc, 1, 1e-3).unwrap();
    let mut many = one.clone();
    many.residual = one.residual.select(&[0; 40]);
    let model = tiny(Architecture::Mlp, &problem);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let single = ntk_traces(&model, &one, 8, &mut rng).unwrap()[0].1;
    let estimated = ntk_traces(&model, &many, 8, &mut rng).unwrap()[0].1;
    assert!((estimated - 40.0 * single).abs() < 1e-9 * estimated);
}

#[test]
fn weight_update_examples() {
    let traces = [(Component::Residual, 2.0), (Component::Initial, 1.0), (Component::Boundary, 1.0)];
    let w = update_weights(&traces);
    assert_eq!((w.residual, w.initial, w.boundary, w.data), (2.0, 4.0, 4.0, 0.0));
    let w = update_weights(&[(Component::Residual, 1.0), (Component::Data, 3.0)]);
    assert_eq!((w.residual, w.data, w.initial), (4.0, 4.0 / 3.0, 0.0));
}

proptest! {
    #[test]
    fn weighted_traces_equal_the_trace_sum(ks in prop::collection::vec(1e-6..1e6f64, 1..=4)) {
        let traces: Vec<(Component, f64)> = Component::ALL.iter().copied().zip(ks.iter().copied()).collect();
        let w = update_weights(&traces);
        let total: f64 = ks.iter().sum();
        for (c, k) in traces {
            prop_assert!((w.get(c) * k - total).abs() <= 1e-12 * total);
            prop_assert!(w.get(c) >= 1.0);
        }
    }
}

// ---- training loop ----

fn quick_config(iterations: usize, ntk: Option<NtkConfig>) -> TrainConfig {
    TrainConfig {
        iterations,
        ntk,
        chunk_size: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_iterations_leave_the_model_alone() {
    let problem = PdeProblem::reaction();
    let set = grid_set(&problem, 2, 0);
    let mut model = tiny(Architecture::SPformer, &problem);
    let before = model.clone();
    let out = train(&mut model, &set, &quick_config(0, Some(NtkConfig::default()))).unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(model.store(), before.store());
    assert_eq!(out.status, TrainStatus::Completed);
    let expected = total_loss(&before, &set, &LossWeights::default(), 8, false).unwrap().0;
    assert_eq!(out.final_loss, expected);
}

#[test]
fn training_decreases_the_loss_and_is_deterministic() {
    let problem = PdeProblem::reaction();
    let set = grid_set(&problem, 2, 0);
    let config = quick_config(6, Some(NtkConfig { period: 3, cap: 4 }));
    let mut a = tiny(Architecture::SPformer, &problem);
    let mut b = a.clone();
    let out_a = train(&mut a, &set, &config).unwrap();
    let out_b = train(&mut b, &set, &config).unwrap();
    assert_eq!(a.store(), b.store());
    assert_eq!(out_a.trace, out_b.trace);
    assert_eq!(out_a.trace.len(), 6);
    assert_eq!(out_a.ntk_history.iter().map(|(i, _)| *i).collect::<Vec<_>>(), vec![0, 3]);

    // objective is monotone between weight refreshes
    for pair in out_a.trace.windows(2) {
        if pair[1].iteration % 3 != 0 {
            assert!(pair[1].loss.total <= pair[0].loss.total);
        }
    }
    let last = out_a.trace.last().unwrap();
    assert!(out_a.final_loss.total <= last.loss.total);
    // the reported final loss is the objective at the final parameters
    let again = loss(&a, &set, &out_a.weights);
    assert!((again.total - out_a.final_loss.total).abs() <= 1e-12 * again.total);
    // weights in the trace are the NTK weights in force
    let first = &out_a.ntk_history[0].1;
    assert_eq!(out_a.trace[0].weights, update_weights(first));
}

#[test]
fn fixed_weights_without_ntk() {
    let problem = PdeProblem::convection();
    let set = grid_set(&problem, 1, 0);
    let mut model = tiny(Architecture::Mlp, &problem);
    let out = train(&mut model, &set, &quick_config(3, None)).unwrap();
    assert!(out.ntk_history.is_empty());
    assert!(out.trace.iter().all(|r| r.weights == LossWeights::default()));
    assert!(out.final_loss.total < out.trace[0].loss.total);
}

#[test]
fn non_finite_loss_aborts_with_a_snapshot() {
    let problem = PdeProblem::reaction();
    let set = grid_set(&problem, 1, 0);
    let mut model = constant_model(&problem, 1e200);
    let x0 = model.trainable_values();
    for ntk in [None, Some(NtkConfig::default())] {
        match train(&mut model, &set, &quick_config(5, ntk)) {
            Err(TrainError::NonFinite { iteration, loss, snapshot, trace }) => {
                assert_eq!(iteration, 0);
                assert!(!loss.is_finite());
                assert_eq!(snapshot, x0);
                assert!(trace.is_empty());
            }
            other => panic!("expected a non-finite abort, got {other:?}"),
        }
    }
}
