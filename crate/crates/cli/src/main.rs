use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spformer::analysis::{band_errors, BandSpec};
use spformer::nn::{flop_estimate, parameter_count, Architecture};
use spformer::pde::ProblemName;
use spformer_cli::artifacts::{compare, read_field, write_bands, write_compare, RunReport};
use spformer_cli::config::{RunConfig, SweepConfig};
use spformer_cli::run::{execute, run_dir};
use spformer_cli::sweep::sweep;
use spformer_cli::{output_root, CliError, Result, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "spformer", version, about = "Train and evaluate physics-informed networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its report and artifacts.
    Run(RunArgs),
    /// Run every combination of a sweep file and pick the lowest rMAE.
    Sweep {
        file: PathBuf,
        /// Directory for the sweep (default: <output root>/<file stem>).
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Tabulate run reports as CSV sorted by problem and model.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Print parameter counts and per-sequence FLOP estimates.
    CountParams(CountArgs),
    /// Spectral band errors of a field CSV written by `run`.
    BandReport {
        field: PathBuf,
        /// Band edges as fractions of the Nyquist frequency.
        #[arg(long, value_delimiter = ',')]
        edges: Option<Vec<f64>>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    name: Option<String>,
    /// Run directory, relative to the output root.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    d_hidden: Option<usize>,
    #[arg(long)]
    d_mapping: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Iterations between NTK refreshes; 0 disables balancing.
    #[arg(long)]
    ntk_period: Option<usize>,
    /// Navier-Stokes dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    /// Architectures to list (default: all).
    #[arg(long, value_delimiter = ',')]
    arch: Vec<String>,
}

fn parse_problem(s: &str) -> Result<ProblemName> {
    s.parse().map_err(|e: spformer::pde::PdeError| CliError::Usage(e.to_string()))
}

fn parse_arch(s: &str) -> Result<Architecture> {
    s.parse().map_err(|e: spformer::nn::NnError| CliError::Usage(e.to_string()))
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    path.map(|p| RunConfig::load(p)).transpose().map(Option::unwrap_or_default)
}

fn run_config(args: RunArgs) -> Result<RunConfig> {
    let mut c = load_config(args.config.as_ref())?;
    if let Some(p) = &args.problem {
        c.problem = parse_problem(p)?;
    }
    if let Some(a) = &args.arch {
        c.architecture = parse_arch(a)?;
    }
    c.iterations = args.iterations.unwrap_or(c.iterations);
    c.seed = args.seed.unwrap_or(c.seed);
    c.name = args.name.or(c.name);
    c.output_dir = args.output_dir.or(c.output_dir);
    c.model.d_hidden = args.d_hidden.or(c.model.d_hidden);
    c.model.d_mapping = args.d_mapping.or(c.model.d_mapping);
    c.collocation.k = args.k.or(c.collocation.k);
    c.training.ntk_period = args.ntk_period.unwrap_or(c.training.ntk_period);
    c.navier_stokes.dataset = args.dataset.or(c.navier_stokes.dataset);
    c.validate()?;
    Ok(c)
}

fn print_csv(rows: impl FnOnce(&mut dyn std::io::Write) -> std::result::Result<(), csv::Error>, output: Option<&PathBuf>) -> Result<()> {
    match output {
        Some(path) => {
            let mut file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
            rows(&mut file).map_err(|e| CliError::read(path, e))
        }
        None => rows(&mut std::io::stdout().lock()).map_err(|e| CliError::read(&PathBuf::from("<stdout>"), e)),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => {
            let config = run_config(args)?;
            let root = output_root();
            let report = execute(&config, &root)?;
            println!("rmae = {}", report.rmae);
            println!("rmse = {}", report.rmse);
            println!("report = {}", run_dir(&config, &root).join(spformer_cli::artifacts::REPORT_FILE).display());
        }
        Command::Sweep { file, output_dir } => {
            let config = SweepConfig::load(&file)?;
            let dir = output_root().join(output_dir.unwrap_or_else(|| {
                PathBuf::from(file.file_stem().map(|s| s.to_os_string()).unwrap_or_else(|| "sweep".into()))
            }));
            let outcome = sweep(&config, &dir)?;
            println!("runs = {}", outcome.reports.len());
            println!("best = {}", outcome.best().name);
            println!("best_rmae = {}", outcome.best().rmae);
        }
        Command::Compare { reports, output } => {
            let reports = reports.iter().map(|p| RunReport::load(p)).collect::<Result<Vec<_>>>()?;
            let rows = compare(&reports);
            print_csv(|w| write_compare(w, &rows), output.as_ref())?;
        }
        Command::CountParams(args) => {
            let mut base = load_config(args.config.as_ref())?;
            base.problem = args.problem.as_deref().map(parse_problem).transpose()?.unwrap_or(base.problem);
            let archs = if args.arch.is_empty() {
                Architecture::ALL.to_vec()
            } else {
                args.arch.iter().map(|a| parse_arch(a)).collect::<Result<_>>()?
            };
            let rows: Vec<(Architecture, usize, u64)> = archs
                .into_iter()
                .map(|a| {
                    let mut c = base.clone();
                    c.architecture = a;
                    c.validate()?;
                    let m = c.model_config();
                    Ok((a, parameter_count(&m), flop_estimate(&m, c.collocation().k)))
                })
                .collect::<Result<_>>()?;
            println!("architecture,problem,params,flops_per_sequence");
            for (a, params, flops) in rows {
                println!("{a},{},{params},{flops}", base.problem);
            }
        }
        Command::BandReport { field, edges, output } => {
            let spec = match edges {
                Some(e) => BandSpec::new(e).map_err(|e| CliError::Usage(e.to_string()))?,
                None => BandSpec::default(),
            };
            let (pred, truth) = read_field(&field)?;
            let report = band_errors(&pred, &truth, &spec).map_err(|e| CliError::read(&field, e))?;
            match output {
                Some(path) => write_bands(&path, &report)?,
                None => report
                    .write_csv(std::io::stdout().lock())
                    .map_err(|e| CliError::read(&PathBuf::from("<stdout>"), e))?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("(output root: ${OUTPUT_ROOT_ENV} or ./runs)");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
