//! File emission with embedded provenance.

use std::path::Path;

use nvsense::experiments::SweepResult;
use nvsense::report::{sweep_csv, Provenance};
use serde::Serialize;

use crate::CliError;

/// JSON document wrapper; fields serialize in declaration order.
#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'a str,
    config_sha256: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Simulation(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, provenance: &Provenance, body: &T) -> Result<(), CliError> {
    let doc = Envelope {
        tool: "nvsense",
        version: &provenance.version,
        config_sha256: &provenance.config_hash,
        seed: provenance.seed,
        body,
    };
    let mut text = serde_json::to_string_pretty(&doc)
        .map_err(|e| CliError::Simulation(format!("cannot encode {name}: {e}")))?;
    text.push('\n');
    write(&dir.join(name), &text)
}

pub fn write_sweep(dir: &Path, name: &str, provenance: &Provenance, sweep: &SweepResult) -> Result<(), CliError> {
    write(&dir.join(name), &sweep_csv(sweep, provenance))
}

/// `multi:x` becomes `multi_x` for file names.
pub fn file_stem(mode: &str) -> String {
    mode.replace(':', "_")
}
