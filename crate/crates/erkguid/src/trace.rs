//! Per-step trace records, CSV emission, and the run manifest.
//!
//! Trace CSVs share one fixed header across every mode; columns that a mode
//! never touches stay 0. Floats are written with Rust's shortest-roundtrip
//! `Display`, so identical runs produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::state::StateVector;

pub const TRACE_CSV_HEADER: &str =
    "traj,step,sigma_in,sigma_out,rho_hat,beta,correction_norm,nfe_cumulative,pair_colocated,halved,corrector_eps";

/// One integration step of one trajectory.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub traj: usize,
    pub step: usize,
    pub sigma_in: f64,
    pub sigma_out: f64,
    /// 0 when no estimate existed at this step (beta disambiguates).
    pub rho_hat: f64,
    /// Binary gate indicator.
    pub beta: f64,
    pub correction_norm: f64,
    pub nfe_cumulative: u64,
    pub pair_colocated: bool,
    /// Step was split in two by the adaptive baseline.
    pub halved: bool,
    /// Corrector step size used by the predictor-corrector baseline.
    pub corrector_eps: f64,
}

impl StepTrace {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.traj,
            self.step,
            self.sigma_in,
            self.sigma_out,
            self.rho_hat,
            self.beta,
            self.correction_norm,
            self.nfe_cumulative,
            self.pair_colocated as u8,
            self.halved as u8,
            self.corrector_eps,
        )
    }
}

pub fn write_trace_csv(path: &Path, rows: &[StepTrace]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.csv_row())?;
    }
    out.flush()?;
    Ok(())
}

/// Final states, one row per trajectory: traj,x0,..,x{d-1}.
pub fn write_endpoints_csv(path: &Path, endpoints: &[StateVector]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let dim = endpoints.first().map(|x| x.len()).unwrap_or(0);
    let mut header = String::from("traj");
    for i in 0..dim {
        header.push_str(&format!(",x{i}"));
    }
    writeln!(out, "{header}")?;
    for (t, x) in endpoints.iter().enumerate() {
        let mut row = t.to_string();
        for c in x.iter() {
            row.push_str(&format!(",{c}"));
        }
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}

/// Everything needed to reproduce a run byte-for-byte: rerunning with the
/// manifest's config (same binary) must yield identical outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// argv as invoked, for the record only (the config is authoritative).
    pub command: Vec<String>,
    pub config: RunConfig,
    /// Hash of the main field's description, guarding against silent field
    /// drift between a manifest and the binary replaying it.
    pub field_hash: u64,
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: RunConfig, field_hash: u64) -> Self {
        RunManifest {
            tool: "erkguid".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            config,
            field_hash,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
