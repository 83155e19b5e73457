//! Sequential grid sweeps.

use std::path::Path;

use crate::artifacts::{compare, write_compare, RunReport, REPORT_FILE};
use crate::config::SweepConfig;
use crate::run::execute;
use crate::{CliError, Result};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const BEST_FILE: &str = "best.json";

pub struct SweepOutcome {
    pub reports: Vec<RunReport>,
    /// Index of the lowest rMAE; the first one wins ties.
    pub best: usize,
}

impl SweepOutcome {
    pub fn best(&self) -> &RunReport {
        &self.reports[self.best]
    }
}

/// Index of the smallest rMAE, NaN counting as worst.
pub fn select_best(reports: &[RunReport]) -> Option<usize> {
    let key = |r: &RunReport| if r.rmae.is_nan() { f64::INFINITY } else { r.rmae };
    (0..reports.len()).reduce(|best, i| if key(&reports[i]) < key(&reports[best]) { i } else { best })
}

/// Runs every grid point in order under `dir`, then writes `summary.csv`
/// and a copy of the best report.
pub fn sweep(config: &SweepConfig, dir: &Path) -> Result<SweepOutcome> {
    let runs = config.expand()?;
    for run in &runs {
        run.validate()?;
    }
    let mut reports = Vec::with_capacity(runs.len());
    for run in &runs {
        reports.push(execute(run, dir)?);
    }
    let best = select_best(&reports).expect("grid is non-empty");
    let summary = dir.join(SUMMARY_FILE);
    let file = std::fs::File::create(&summary).map_err(|e| CliError::io(&summary, e))?;
    write_compare(file, &compare(&reports)).map_err(|e| CliError::read(&summary, e))?;
    reports[best].save(&dir.join(BEST_FILE))?;
    log::info!("best of {}: {} (rMAE {:e}), see {}", reports.len(), reports[best].name, reports[best].rmae, dir.join(&reports[best].name).join(REPORT_FILE).display());
    Ok(SweepOutcome { reports, best })
}
