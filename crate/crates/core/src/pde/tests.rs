use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Tape, Tensor, Var};
use crate::nn::{Architecture, Model, ModelConfig};

#[test]
fn pseudo_sequence_examples() {
    let seq = pseudo_sequence(&[1.0, 0.5], 3, 0.1).unwrap();
    assert_eq!(seq, vec![vec![1.0, 0.5], vec![1.0, 0.6], vec![1.0, 0.7]]);
    assert_eq!(pseudo_sequence(&[0.3, 0.2], 1, 0.1).unwrap(), vec![vec![0.3, 0.2]]);
    let seq = pseudo_sequence(&[0.0, 0.0], 5, 1e-4).unwrap();
    assert_eq!(seq[4][1], 4e-4);
    assert_eq!(seq[0], vec![0.0, 0.0]);
    assert!(matches!(pseudo_sequence(&[0.0, 0.0], 0, 0.1), Err(PdeError::EmptySequence)));
    assert!(matches!(pseudo_sequence(&[0.0, 0.0], 2, 0.0), Err(PdeError::InvalidStep(_))));
    assert!(matches!(pseudo_sequence(&[0.0, 0.0], 2, f64::NAN), Err(PdeError::InvalidStep(_))));
}

proptest! {
    #[test]
    fn pseudo_sequences_keep_space_and_advance_time(
        x in -5.0..5.0f64, y in -5.0..5.0f64, t in 0.0..20.0f64, k in 1usize..9, dt in 1e-6..0.5f64,
    ) {
        let seq = pseudo_sequence(&[x, y, t], k, dt).unwrap();
        prop_assert_eq!(seq.len(), k);
        prop_assert_eq!(&seq[0], &vec![x, y, t]);
        for w in seq.windows(2) {
            prop_assert_eq!(w[1][0], x);
            prop_assert_eq!(w[1][1], y);
            prop_assert!(w[1][2] > w[0][2]);
            prop_assert!((w[1][2] - w[0][2] - dt).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_inverts_denormalize(a in 0.0..=1.0f64, b in 0.0..=1.0f64, c in 0.0..=1.0f64) {
        for problem in [PdeProblem::convection(), PdeProblem::wave()] {
            let raw = problem.denormalize(&[a, b]).unwrap();
            let back = problem.normalize(&raw).unwrap();
            prop_assert!((back[0] - a).abs() < 1e-12 && (back[1] - b).abs() < 1e-12);
        }
        let ns = PdeProblem::navier_stokes();
        let raw = ns.denormalize(&[a, b, c]).unwrap();
        let back = ns.normalize(&raw).unwrap();
        for (p, q) in back.iter().zip([a, b, c]) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn sequence_set_layout() {
    let mut points = Points::new(2);
    points.push(&[0.5, 0.25]);
    points.push(&[1.5, 0.75]);
    let set = SequenceSet::from_points(&points, 3, 0.125).unwrap();
    assert_eq!((set.len(), set.k(), set.dim()), (2, 3, 2));
    assert_eq!(set.point(1, 2), &[1.5, 1.0]);
    let t = set.coordinate(1);
    assert_eq!(t.shape(), &[2, 3, 1]);
    assert_eq!(t.data(), &[0.25, 0.375, 0.5, 0.75, 0.875, 1.0]);
    assert_eq!(set.coordinate(0).data(), &[0.5, 0.5, 0.5, 1.5, 1.5, 1.5]);
    assert_eq!(set.select(&[1, 0]).point(0, 0), &[1.5, 0.75]);
    let chunks: Vec<_> = set.chunks(1).collect();
    assert_eq!(chunks.len(), 2);
    assert_eq!(chunks[1], set.slice(1, 2));
}

#[test]
fn collocation_grid_endpoints() {
    let set = PdeProblem::wave().sample_collocation(2, 2, 3, 3, 0).unwrap();
    let grid: Vec<&[f64]> = set.residual.iter().collect();
    assert_eq!(grid, vec![&[0.0, 0.0][..], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]]);
}

#[test]
fn collocation_is_seeded() {
    let p = PdeProblem::convection();
    let a = p.sample_collocation(51, 51, 51, 51, 7).unwrap();
    assert_eq!(a, p.sample_collocation(51, 51, 51, 51, 7).unwrap());
    assert_ne!(a, p.sample_collocation(51, 51, 51, 51, 8).unwrap());
    assert_eq!(a.residual.len(), 2601);
    assert_eq!(a.initial.len(), 51);
    for x in a.initial.iter() {
        assert_eq!(x[1], 0.0);
        assert!((0.0..=2.0 * PI).contains(&x[0]));
    }
    for (lo, hi) in a.boundary_lo.iter().zip(a.boundary_hi.iter()) {
        assert_eq!((lo[0], hi[0]), (0.0, 2.0 * PI));
        assert_eq!(lo[1], hi[1]);
    }
    assert!(matches!(p.sample_collocation(0, 2, 2, 2, 0), Err(PdeError::InvalidCount("n_x"))));
}

#[test]
fn normalize_examples() {
    let c = PdeProblem::convection();
    assert_eq!(c.normalize(&[PI, 0.5]).unwrap(), vec![0.5, 0.5]);
    assert_eq!(c.normalize(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    assert_eq!(PdeProblem::wave().normalize(&[0.25, 1.0]).unwrap(), vec![0.25, 1.0]);
    assert!(matches!(c.normalize(&[7.0, 0.5]), Err(PdeError::OutOfDomain { axis: 0, .. })));
    assert!(matches!(c.normalize(&[1.0]), Err(PdeError::Dimension { .. })));
}

#[test]
fn analytical_values() {
    let r = PdeProblem::reaction();
    assert_eq!(r.analytical(PI, 0.0).unwrap(), 1.0);
    let expected = (-2f64).exp() * 5f64.exp() / ((-2f64).exp() * 5f64.exp() + 1.0 - (-2f64).exp());
    let got = r.analytical(PI / 2.0, 1.0).unwrap();
    assert!((got - expected).abs() < 1e-14);
    assert!((got - 0.9587).abs() < 5e-5);
    assert!((PdeProblem::wave().analytical(0.5, 0.0).unwrap() - 0.5).abs() < 1e-15);
    assert_eq!(PdeProblem::convection().analytical(1.0, 0.0).unwrap(), 1f64.sin());
    assert!(PdeProblem::navier_stokes().analytical(1.0, 0.0).is_err());
}

#[test]
fn initial_conditions_match_solutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for p in [PdeProblem::convection(), PdeProblem::reaction(), PdeProblem::wave()] {
        let (lo, hi) = p.bounds[0];
        for _ in 0..1000 {
            let x = rng.gen_range(lo..=hi);
            let diff = p.analytical(x, 0.0).unwrap() - p.initial_value(x).unwrap();
            assert!(diff.abs() < 1e-12, "{}", p.name);
        }
    }
}

#[test]
fn problem_names_round_trip() {
    for name in ProblemName::ALL {
        assert_eq!(name.as_str().parse::<ProblemName>().unwrap(), name);
        assert_eq!(PdeProblem::by_name(name).name, name);
    }
    assert!("heat".parse::<ProblemName>().is_err());
}

/// Closed-form solutions written with tape primitives, so the residual
/// operators can differentiate them.
fn closed_form<'t>(problem: &PdeProblem, c: &[Var<'t>]) -> Var<'t> {
    let (x, t) = (c[0], c[1]);
    match problem.equation {
        Equation::Convection { beta } => x.sub(&t.scale(beta)).unwrap().sin(),
        Equation::Reaction { rho } => {
            let s = PI / 4.0;
            let h = x.shift(-PI).square().scale(-1.0 / (2.0 * s * s)).exp();
            let g = h.mul(&t.scale(rho).exp()).unwrap();
            g.div(&g.add(&h.neg().shift(1.0)).unwrap()).unwrap()
        }
        Equation::Wave { .. } => {
            let a = x.scale(PI).sin().mul(&t.scale(2.0 * PI).cos()).unwrap();
            let b = x.scale(3.0 * PI).sin().mul(&t.scale(6.0 * PI).cos()).unwrap();
            a.add(&b.scale(0.5)).unwrap()
        }
        Equation::NavierStokes { .. } => unreachable!(),
    }
}

fn interior(problem: &PdeProblem, n: usize, k: usize, seed: u64) -> SequenceSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Points::new(problem.d_in());
    let margin = 1e-3 * k as f64;
    for _ in 0..n {
        let p: Vec<f64> = problem
            .bounds
            .iter()
            .enumerate()
            .map(|(axis, &(lo, hi))| {
                let top = if axis == problem.time_axis() { hi - margin } else { hi };
                rng.gen_range(lo..top)
            })
            .collect();
        points.push(&p);
    }
    SequenceSet::from_points(&points, k, 1e-4).unwrap()
}

#[test]
fn closed_forms_satisfy_their_residuals() {
    for (i, problem) in [PdeProblem::convection(), PdeProblem::reaction(), PdeProblem::wave()]
        .iter()
        .enumerate()
    {
        let set = interior(problem, 200, 5, i as u64);
        let tape = Tape::new();
        let coords = coordinate_leaves(&tape, &set, true);
        let u = closed_form(problem, &coords);
        for (j, value) in u.value().data().iter().enumerate() {
            let p = set.point(j / 5, j % 5);
            assert!((value - problem.analytical(p[0], p[1]).unwrap()).abs() < 1e-12);
        }
        let r = residual(problem, &coords, u).unwrap();
        assert_eq!(r.len(), 1);
        let worst = r[0].value().data().iter().fold(0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-8, "{}: {worst:e}", problem.name);
    }
}

#[test]
fn wave_solution_boundary_and_initial_velocity() {
    let problem = PdeProblem::wave();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let t = rng.gen_range(0.0..1.0);
        assert!(problem.analytical(0.0, t).unwrap().abs() < 1e-10);
        assert!(problem.analytical(1.0, t).unwrap().abs() < 1e-10);
    }
    let xs: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..1.0)).collect();
    let tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![200, 1, 1], xs).unwrap());
    let t = tape.leaf(Tensor::zeros(&[200, 1, 1]));
    let u = closed_form(&problem, &[x, t]);
    let u_t = derivative(u, t).unwrap();
    assert!(u_t.value().data().iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn constant_field_on_reaction() {
    let problem = PdeProblem::reaction();
    let set = interior(&problem, 10, 3, 0);
    for c in [0.0, 0.25, 1.0, 2.0] {
        let tape = Tape::new();
        let coords = coordinate_leaves(&tape, &set, true);
        let u = coords[0].scale(0.0).shift(c);
        let r = residual(&problem, &coords, u).unwrap();
        for v in r[0].value().data() {
            assert!((v + 5.0 * c * (1.0 - c)).abs() < 1e-14);
        }
    }
}

/// Taylor-Green vortex: `ψ = sin x sin y F`, `u = sin x cos y F`,
/// `v = −cos x sin y F`, `p = ¼(cos 2x + cos 2y) F²` with `F = exp(−2νt)`
/// solves the momentum equations exactly for unit density.
#[test]
fn taylor_green_vortex_satisfies_navier_stokes() {
    let problem = PdeProblem::navier_stokes();
    let Equation::NavierStokes { lambda2: nu, .. } = problem.equation else { unreachable!() };
    let set = interior(&problem, 1000, 1, 9);
    let tape = Tape::new();
    let c = coordinate_leaves(&tape, &set, true);
    let (x, y, t) = (c[0], c[1], c[2]);
    let f = t.scale(-2.0 * nu).exp();
    let psi = x.sin().mul(&y.sin()).unwrap().mul(&f).unwrap();
    let p = x
        .scale(2.0)
        .cos()
        .add(&y.scale(2.0).cos())
        .unwrap()
        .mul(&f.square())
        .unwrap()
        .scale(0.25);
    let out = tape.concat(&[psi, p], 2).unwrap();
    let r = residual(&problem, &c, out).unwrap();
    assert_eq!(r.len(), 2);
    for component in r {
        let worst = component.value().data().iter().fold(0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-8, "{worst:e}");
    }
    // a perturbed pressure must show up in the residual
    let out = tape.concat(&[psi, p.add(&x.scale(0.1)).unwrap()], 2).unwrap();
    let r = residual(&problem, &c, out).unwrap();
    assert!(r[0].value().data().iter().all(|v| (v - 0.1).abs() < 1e-8));
}

#[test]
fn model_derivatives_follow_the_normalization() {
    let problem = PdeProblem::convection();
    let config = ModelConfig {
        d_hidden: 8,
        n_layers: 3,
        ..ModelConfig::baseline(Architecture::Mlp)
    };
    let model = Model::new(config).unwrap();
    let set = interior(&problem, 20, 1, 4);
    let tape = Tape::new();
    let p = model.bind(&tape);
    let coords = coordinate_leaves(&tape, &set, true);
    let u = model_output(&problem, &model, &p, &coords).unwrap();
    let u_x = derivative(u, coords[0]).unwrap().value();
    let u_t = derivative(u, coords[1]).unwrap().value();
    let h = 1e-5;
    let eval = |x: f64, t: f64| {
        let tape = Tape::new();
        let p = model.bind(&tape);
        let c = [tape.constant(Tensor::full(&[1, 1, 1], x)), tape.constant(Tensor::full(&[1, 1, 1], t))];
        model_output(&problem, &model, &p, &c).unwrap().item().unwrap()
    };
    for i in 0..set.len() {
        let q = set.point(i, 0);
        let fx = (eval(q[0] + h, q[1]) - eval(q[0] - h, q[1])) / (2.0 * h);
        let ft = (eval(q[0], q[1] + h) - eval(q[0], q[1] - h)) / (2.0 * h);
        assert!((fx - u_x.data()[i]).abs() < 1e-7 * (1.0 + fx.abs()));
        assert!((ft - u_t.data()[i]).abs() < 1e-7 * (1.0 + ft.abs()));
    }
}

#[test]
fn dimension_mismatches_are_rejected() {
    let problem = PdeProblem::navier_stokes();
    let model = Model::new(ModelConfig {
        d_hidden: 4,
        ..ModelConfig::baseline(Architecture::Mlp)
    })
    .unwrap();
    let set = interior(&problem, 2, 1, 0);
    let tape = Tape::new();
    let p = model.bind(&tape);
    let coords = coordinate_leaves(&tape, &set, true);
    assert!(matches!(
        model_output(&problem, &model, &p, &coords),
        Err(PdeError::Dimension { expected: 3, got: 2 })
    ));
    let out = coords[0].scale(1.0);
    assert!(matches!(
        residual(&problem, &coords, out),
        Err(PdeError::OutputWidth { expected: 2, got: 1 })
    ));
    assert!(matches!(
        residual(&PdeProblem::wave(), &coords, out),
        Err(PdeError::Dimension { expected: 2, got: 3 })
    ));
}

#[test]
fn predictions_do_not_depend_on_chunking() {
    let problem = PdeProblem::convection();
    let mut config = ModelConfig::baseline(Architecture::SPformer);
    config.d_emb = 4;
    config.d_hidden = 6;
    config.d_ff = 6;
    config.d_mapping = 4;
    let model = Model::new(config).unwrap();
    let colloc = problem.sample_collocation(5, 4, 1, 1, 0).unwrap();
    let seqs = SequenceSet::from_points(&colloc.residual, 3, 1e-3).unwrap();
    let a = predict(&problem, &model, &seqs, 1).unwrap();
    let b = predict(&problem, &model, &seqs, 100).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 20);
    // position 0 of the full output
    let tape = Tape::new();
    let p = model.bind(&tape);
    let coords = coordinate_leaves(&tape, &seqs, false);
    let out = model_output(&problem, &model, &p, &coords).unwrap().value();
    for i in 0..20 {
        assert_eq!(a[i], out.data()[i * 3]);
    }
}

#[test]
fn predicted_velocity_matches_streamfunction_differences() {
    let problem = PdeProblem::navier_stokes();
    let mut config = ModelConfig::baseline(Architecture::Mlp);
    config.d_in = 3;
    config.d_out = 2;
    config.d_hidden = 8;
    config.n_layers = 3;
    let model = Model::new(config).unwrap();
    let (x, y, t, h) = (3.0, 0.5, 4.0, 1e-4);
    let mut points = Points::new(3);
    for q in [[x, y, t], [x + h, y, t], [x - h, y, t], [x, y + h, t], [x, y - h, t]] {
        points.push(&q);
    }
    let seqs = SequenceSet::from_points(&points, 1, 0.1).unwrap();
    let flow = predict_flow(&problem, &model, &seqs, 2).unwrap();
    let psi = predict(&problem, &model, &seqs, 8).unwrap();
    let u_fd = (psi[6] - psi[8]) / (2.0 * h);
    let v_fd = -(psi[2] - psi[4]) / (2.0 * h);
    assert!((flow[0][0] - u_fd).abs() < 1e-7, "{} vs {u_fd}", flow[0][0]);
    assert!((flow[0][1] - v_fd).abs() < 1e-7, "{} vs {v_fd}", flow[0][1]);
    assert_eq!(flow[0][2], psi[1]);
}
