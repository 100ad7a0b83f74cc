//! Command-line driver for capacity experiments: reads a TOML config, runs
//! one pipeline, writes JSON and CSV artifacts atomically and records them in
//! a manifest.
//!
//! Exit codes: 0 success, 1 property violation, 2 bad config, 3 solver
//! non-convergence.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use pcap_core::io::{atomic_write, to_json, FORMAT_VERSION};

pub use config::{Experiment, ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};
pub use manifest::{ArtifactEntry, Header, Manifest};
pub use pipeline::{Command, Outcome, Property};

#[derive(Debug)]
pub struct RunSummary {
    pub exit_code: u8,
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
    pub messages: Vec<String>,
}

/// Loads the config, runs `command` on a pool of `jobs` threads and writes
/// every artifact followed by the manifest.
pub fn run(command: Command, config_path: &Path, overrides: &Overrides) -> CliResult<RunSummary> {
    let exp = Experiment::load(config_path, overrides)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(exp.config.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} worker threads: {e}", exp.config.jobs)))?;
    let outcome = pool.install(|| pipeline::execute(&exp, command))?;
    let exit_code = outcome.exit_code();
    let mut artifacts = Vec::with_capacity(outcome.artifacts.len());
    for a in &outcome.artifacts {
        atomic_write(&exp.out.join(&a.path), a.contents.as_bytes())?;
        artifacts.push(ArtifactEntry::new(&a.path, a.contents.as_bytes(), &a.description));
    }
    let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = Manifest {
        format: manifest::MANIFEST_FORMAT.into(),
        version: FORMAT_VERSION,
        header: Header {
            created_unix,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.label(),
            seed: exp.config.seed,
            config_sha256: manifest::sha256_hex(exp.config_text.as_bytes()),
            exit_code,
        },
        artifacts,
    };
    let manifest_path = exp.out.join(manifest::manifest_file(&manifest.header.command));
    atomic_write(&manifest_path, to_json(&manifest)?.as_bytes())?;
    Ok(RunSummary { exit_code, manifest_path, manifest, messages: outcome.messages })
}
