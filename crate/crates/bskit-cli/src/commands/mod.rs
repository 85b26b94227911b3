use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ExperimentConfig, RunOptions};
use crate::report::Report;
use crate::{CliError, CliResult};

mod fk;
mod jointprob;
mod resolution;
mod sibori;
mod spectrum;

pub use fk::cmd_fk;
pub use jointprob::cmd_jointprob;
pub use resolution::cmd_resolution;
pub use sibori::cmd_sibori;
pub use spectrum::cmd_spectrum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Resolution,
    Spectrum,
    Sibori,
    Fk,
    Jointprob,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Resolution => "resolution",
            Subcommand::Spectrum => "spectrum",
            Subcommand::Sibori => "sibori",
            Subcommand::Fk => "fk",
            Subcommand::Jointprob => "jointprob",
        }
    }
}

/// Runs one subcommand, writing report.json and CSVs into the output directory.
pub fn run(sub: Subcommand, cfg: &ExperimentConfig, opts: &RunOptions) -> CliResult<Report> {
    let dir = output_dir(sub, cfg, opts);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let report = match sub {
        Subcommand::Resolution => cmd_resolution(cfg, &dir)?,
        Subcommand::Spectrum => cmd_spectrum(cfg, &dir)?,
        Subcommand::Sibori => cmd_sibori(cfg, opts, &dir)?,
        Subcommand::Fk => cmd_fk(cfg, opts, &dir)?,
        Subcommand::Jointprob => cmd_jointprob(cfg, opts, &dir)?,
    };
    report.write(&dir)?;
    Ok(report)
}

fn output_dir(sub: Subcommand, cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    opts.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("bskit-out").join(sub.name()))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn missing(section: &str) -> CliError {
    CliError::Config { path: "<config>".into(), message: format!("section [{section}] is required by this subcommand") }
}

/// Writes serializable rows as CSV under `dir`, returning the file name.
fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> CliResult<String> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(name.to_string())
}
