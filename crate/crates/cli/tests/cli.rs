use std::path::Path;
use std::process::{Command, Output};

use spformer::analysis::{band_errors, BandSpec};
use spformer::nn::{Architecture, Checkpoint};
use spformer::pde::ProblemName;
use spformer_cli::artifacts::{
    compare, read_bands, read_compare, read_field, read_trace, write_compare, RunReport, BANDS_FILE, CHECKPOINT_FILE,
    CONFIG_FILE, FIELD_FILE, REPORT_FILE, TRACE_FILE,
};
use spformer_cli::config::{RunConfig, SweepConfig};
use spformer_cli::run::{execute, load_model, run_dir};
use spformer_cli::sweep::{select_best, sweep};
use spformer_cli::{CliError, OUTPUT_ROOT_ENV};

const TINY: &str = r#"
problem = "convection"
architecture = "s_pformer"
seed = 3
iterations = 3

[model]
d_emb = 4
d_hidden = 6
d_ff = 6
d_mapping = 4

[collocation]
n_x = 5
n_t = 4
n_ic = 5
n_bc = 4
k = 3
dt = 1e-3

[training]
chunk_size = 64
"#;

fn tiny() -> RunConfig {
    RunConfig::from_toml(TINY).unwrap()
}

fn cli(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spformer"))
        .args(args)
        .env(OUTPUT_ROOT_ENV, root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn defaults_follow_the_baseline() {
    let c = RunConfig::default();
    assert_eq!(c.iterations, 1000);
    let m = c.model_config();
    assert_eq!((m.d_hidden, m.d_emb, m.d_ff, m.d_mapping, m.n_heads, m.n_layers), (512, 32, 256, 64, 2, 1));
    let r = c.collocation();
    assert_eq!((r.n_x, r.n_t, r.n_ic, r.n_bc, r.k, r.dt), (51, 51, 51, 51, 5, 1e-4));
    let mlp = RunConfig {
        architecture: Architecture::Mlp,
        ..RunConfig::default()
    };
    let r = mlp.collocation();
    assert_eq!((r.n_x, r.n_t, r.n_ic, r.n_bc, r.k), (101, 101, 101, 101, 1));
    assert_eq!(c.navier_stokes.n_train, 2500);
    assert_eq!(c.train_config().ntk.unwrap().period, 50);
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let c = tiny();
    assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    assert!(matches!(RunConfig::from_toml("problme = \"convection\""), Err(CliError::Usage(_))));
    assert!(matches!(RunConfig::from_toml("problem = \"heat\""), Err(CliError::Usage(_))));
    let mut bad = tiny();
    bad.model.d_emb = Some(5);
    assert!(matches!(bad.validate(), Err(CliError::Usage(_))));
    let mut bad = tiny();
    bad.problem = ProblemName::NavierStokes;
    assert!(matches!(bad.validate(), Err(CliError::Usage(_))));
    let mut bad = tiny();
    bad.training.ntk_period = 0;
    assert!(bad.train_config().ntk.is_none());
}

fn sweep_over(key: &str, values: &str) -> SweepConfig {
    toml::from_str(&format!("[base]\n{}\n[grid]\n\"{key}\" = {values}\n", TINY.replace("\n[", "\n[base."))).unwrap()
}

#[test]
fn sweep_grid_expansion() {
    let s = sweep_over("model.d_mapping", "[32, 64]");
    let runs = s.expand().unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0].model.d_mapping, Some(32));
    assert_eq!(runs[1].model.d_mapping, Some(64));
    assert_ne!(runs[0].run_name(), runs[1].run_name());
    assert_eq!(runs[0].model.d_emb, Some(4));

    let mut two = s.clone();
    two.grid.insert("seed".into(), vec![toml::Value::Integer(1), toml::Value::Integer(2), toml::Value::Integer(3)]);
    let runs = two.expand().unwrap();
    assert_eq!(runs.len(), 6);
    // Keys expand in sorted order with the last varying fastest.
    let pairs: Vec<(Option<usize>, u64)> = runs.iter().map(|r| (r.model.d_mapping, r.seed)).collect();
    assert_eq!(pairs[..4], [(Some(32), 1), (Some(32), 2), (Some(32), 3), (Some(64), 1)]);

    let single = sweep_over("seed", "[3]").expand().unwrap();
    assert_eq!(single, vec![tiny()]);

    let mut empty = s.clone();
    empty.grid.clear();
    assert!(matches!(empty.expand(), Err(CliError::Usage(_))));
    assert!(matches!(sweep_over("seed", "[]").expand(), Err(CliError::Usage(_))));
    assert!(sweep_over("seed.inner", "[1]").expand().is_err());
}

fn report_with(problem: ProblemName, arch: Architecture, rmae: f64) -> RunReport {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny();
    c.iterations = 0;
    let mut r = execute(&c, dir.path()).unwrap();
    r.problem = problem;
    r.architecture = arch;
    r.rmae = rmae;
    r
}

#[test]
fn best_and_compare_ordering() {
    let a = report_with(ProblemName::Wave, Architecture::SPformer, 0.5);
    let b = report_with(ProblemName::Convection, Architecture::Pformer, 0.1 + 0.2);
    let c = report_with(ProblemName::Convection, Architecture::DoPformer, f64::NAN);
    let reports = vec![a, b, c];
    assert_eq!(select_best(&reports), Some(1));
    assert_eq!(select_best(&reports[..1]), Some(0));
    assert_eq!(select_best(&[]), None);

    let rows = compare(&reports);
    let keys: Vec<(&str, &str)> = rows.iter().map(|r| (r.problem.as_str(), r.model.as_str())).collect();
    assert_eq!(keys, [("convection", "do_pformer"), ("convection", "pformer"), ("wave1d", "s_pformer")]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.csv");
    write_compare(std::fs::File::create(&path).unwrap(), &rows).unwrap();
    let back = read_compare(&path).unwrap();
    assert_eq!(back.len(), 3);
    for (x, y) in back.iter().zip(&rows) {
        assert_eq!(x.rmse.to_bits(), y.rmse.to_bits());
        assert_eq!(x.seconds.to_bits(), y.seconds.to_bits());
        assert_eq!(x.params, y.params);
        assert!(x.rmae.to_bits() == y.rmae.to_bits() || (x.rmae.is_nan() && y.rmae.is_nan()));
    }
    assert_eq!(back[1].rmae, 0.1 + 0.2);
}

#[test]
fn run_writes_reparseable_artifacts() {
    let root = tempfile::tempdir().unwrap();
    let c = tiny();
    let report = execute(&c, root.path()).unwrap();
    let dir = run_dir(&c, root.path());
    for f in [REPORT_FILE, TRACE_FILE, FIELD_FILE, BANDS_FILE, CHECKPOINT_FILE, CONFIG_FILE] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    assert_eq!(RunReport::load(&dir.join(REPORT_FILE)).unwrap(), report);
    assert_eq!(RunConfig::load(&dir.join(CONFIG_FILE)).unwrap(), c);
    assert_eq!(report.iterations, 3);
    assert_eq!(report.config, c);

    let trace = read_trace(&dir.join(TRACE_FILE)).unwrap();
    assert_eq!(trace.len(), 3);
    assert!(trace.iter().all(|r| r.residual.is_some() && r.initial.is_some() && r.data.is_none()));
    assert_eq!(trace[0].iteration, 0);

    let (pred, truth) = read_field(&dir.join(FIELD_FILE)).unwrap();
    assert_eq!((pred.xs.len(), pred.ts.len()), (101, 101));
    assert_eq!(spformer::analysis::rmae(&pred, &truth).unwrap(), report.rmae);
    let bands = band_errors(&pred, &truth, &BandSpec::default()).unwrap();
    assert_eq!(read_bands(&dir.join(BANDS_FILE)).unwrap(), bands.bands);
    assert_eq!(report.bands.as_ref().unwrap(), &bands.bands);

    let checkpoint = Checkpoint::load(&dir.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(checkpoint.values.len(), checkpoint.to_model().unwrap().store().params().iter().map(|p| p.value.numel()).sum::<usize>());
    let (model, problem) = load_model(&dir).unwrap();
    assert_eq!(model.parameter_count(), report.parameter_count);
    assert_eq!(problem.name, ProblemName::Convection);
}

#[test]
fn run_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let c = tiny();
    let ra = execute(&c, a.path()).unwrap();
    let rb = execute(&c, b.path()).unwrap();
    assert_eq!(ra.without_timing(), rb.without_timing());
    for f in [TRACE_FILE, FIELD_FILE, BANDS_FILE, CHECKPOINT_FILE] {
        let fa = std::fs::read(run_dir(&c, a.path()).join(f)).unwrap();
        let fb = std::fs::read(run_dir(&c, b.path()).join(f)).unwrap();
        assert!(fa == fb, "{f} differs");
    }
}

#[test]
fn sweep_writes_every_run_and_the_best() {
    let root = tempfile::tempdir().unwrap();
    let s = sweep_over("seed", "[1, 2]");
    let outcome = sweep(&s, root.path()).unwrap();
    assert_eq!(outcome.reports.len(), 2);
    let min = outcome.reports.iter().map(|r| r.rmae).fold(f64::INFINITY, f64::min);
    assert_eq!(outcome.best().rmae, min);
    assert_eq!(RunReport::load(&root.path().join("best.json")).unwrap(), *outcome.best());
    assert_eq!(read_compare(&root.path().join("summary.csv")).unwrap().len(), 2);

    let single = tempfile::tempdir().unwrap();
    let plain = tempfile::tempdir().unwrap();
    let one = sweep(&sweep_over("seed", "[3]"), single.path()).unwrap();
    let direct = execute(&tiny(), plain.path()).unwrap();
    assert_eq!(one.best().without_timing(), direct.without_timing());
}

#[test]
fn binary_exit_codes() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    assert_eq!(cli(r, &[]).status.code(), Some(1));
    assert_eq!(cli(r, &["run", "--arch", "lstm"]).status.code(), Some(1));
    assert_eq!(cli(r, &["run", "--problem", "heat"]).status.code(), Some(1));
    assert_eq!(cli(r, &["run", "--problem", "ns2d"]).status.code(), Some(1));
    let missing = cli(r, &["compare", "/nonexistent/report.json"]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/report.json"));
    let garbage = r.join("garbage.json");
    std::fs::write(&garbage, "{").unwrap();
    let bad = cli(r, &["compare", garbage.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("garbage.json"));
    assert_eq!(cli(r, &["band-report", "/nonexistent/field.csv"]).status.code(), Some(3));
    assert_eq!(cli(r, &["--help"]).status.code(), Some(0));
    assert_eq!(CliError::Training("diverged".into()).exit_code(), 2);
}

#[test]
fn binary_run_then_compare_and_band_report() {
    let root = tempfile::tempdir().unwrap();
    let config = root.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let out = cli(root.path(), &["run", "--config", config.to_str().unwrap(), "--iterations", "0", "--name", "untrained"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = root.path().join("untrained");
    let report = RunReport::load(&dir.join(REPORT_FILE)).unwrap();
    assert_eq!(report.iterations, 0);
    assert!(report.rmae.is_finite() && report.rmae > 0.5, "untrained rMAE {}", report.rmae);
    assert!(stdout(&out).contains(&format!("rmae = {}", report.rmae)));

    let table = cli(root.path(), &["compare", dir.join(REPORT_FILE).to_str().unwrap()]);
    assert_eq!(table.status.code(), Some(0));
    let text = stdout(&table);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "model,problem,rmae,rmse,params,seconds");
    assert_eq!(lines.len(), 2);
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells[2].parse::<f64>().unwrap().to_bits(), report.rmae.to_bits());
    assert_eq!(cells[5].parse::<f64>().unwrap().to_bits(), report.wall_seconds.to_bits());

    let bands_path = root.path().join("bands_again.csv");
    let bands = cli(
        root.path(),
        &["band-report", dir.join(FIELD_FILE).to_str().unwrap(), "-o", bands_path.to_str().unwrap()],
    );
    assert_eq!(bands.status.code(), Some(0));
    assert_eq!(std::fs::read(&bands_path).unwrap(), std::fs::read(dir.join(BANDS_FILE)).unwrap());
    let custom = cli(root.path(), &["band-report", dir.join(FIELD_FILE).to_str().unwrap(), "--edges", "0.5"]);
    assert_eq!(stdout(&custom).lines().count(), 3);
    assert_eq!(cli(root.path(), &["band-report", dir.join(FIELD_FILE).to_str().unwrap(), "--edges", "0.5,0.2"]).status.code(), Some(1));
}

#[test]
fn binary_count_params_orders_models() {
    let root = tempfile::tempdir().unwrap();
    let out = cli(root.path(), &["count-params", "--problem", "convection"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let count = |arch: &str| -> usize {
        let line = text.lines().find(|l| l.starts_with(&format!("{arch},"))).unwrap();
        line.split(',').nth(2).unwrap().parse().unwrap()
    };
    assert!(count("pformer") > count("s_pformer"));
    assert!(count("s_pformer") > count("do_pformer"));
    let one = cli(root.path(), &["count-params", "--arch", "mlp"]);
    assert_eq!(stdout(&one).lines().count(), 2);
}

#[test]
fn output_root_env_is_respected() {
    let root = tempfile::tempdir().unwrap();
    let config = root.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let nested = root.path().join("elsewhere");
    let out = cli(&nested, &["run", "--config", config.to_str().unwrap(), "--iterations", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(nested.join(tiny().run_name()).join(REPORT_FILE).is_file());
}
