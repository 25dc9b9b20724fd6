//! CSV rendering of sweep results.

use std::fmt::Write as _;

use crate::experiments::SweepResult;

/// Identifies the tool and inputs that produced an output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub version: String,
    /// Hex SHA-256 of the canonical config.
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn comment_line(&self) -> String {
        format!(
            "# nvsense {} config_sha256={} seed={}",
            self.version, self.config_hash, self.seed
        )
    }
}

/// One row per point: independent variable, mean, std, counts. Numbers use
/// the shortest round-trip representation and `.` as decimal separator.
pub fn sweep_csv(sweep: &SweepResult, provenance: &Provenance) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} mode={}", provenance.comment_line(), sweep.mode);
    let _ = writeln!(out, "{},mean,std,counts", sweep.variable);
    for i in 0..sweep.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            sweep.grid[i], sweep.mean[i], sweep.std[i], sweep.counts[i]
        );
    }
    out
}
