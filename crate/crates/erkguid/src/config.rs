//! Run configuration: one plain struct shared by the CLI, the manifest, and
//! the test harnesses. Every field has a serde default so partial JSON
//! configs (and old manifests) keep loading.

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::ScalingKind;
use crate::solvers::SolverKind;

/// Which guidance is applied during sampling.
///
/// `Cfg`/`Ag` pick the pair of score fields being combined; `Erk` applies
/// the trajectory correction on the plain field; the combined modes do both;
/// `ErkProj` projects the drift-space guidance difference instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
pub enum GuideMode {
    #[default]
    #[value(name = "none")]
    #[serde(rename = "none")]
    None,
    #[value(name = "cfg")]
    #[serde(rename = "cfg")]
    Cfg,
    #[value(name = "ag")]
    #[serde(rename = "ag")]
    Ag,
    #[value(name = "erk")]
    #[serde(rename = "erk")]
    Erk,
    #[value(name = "cfg+erk")]
    #[serde(rename = "cfg+erk")]
    CfgErk,
    #[value(name = "ag+erk")]
    #[serde(rename = "ag+erk")]
    AgErk,
    #[value(name = "erk-proj")]
    #[serde(rename = "erk-proj")]
    ErkProj,
}

impl GuideMode {
    /// Whether the mode combines two score fields (any cfg/ag flavor).
    pub fn uses_field_pair(self) -> bool {
        matches!(
            self,
            GuideMode::Cfg | GuideMode::Ag | GuideMode::CfgErk | GuideMode::AgErk | GuideMode::ErkProj
        )
    }

    /// Whether the mode applies the trajectory correction.
    pub fn uses_correction(self) -> bool {
        matches!(self, GuideMode::Erk | GuideMode::CfgErk | GuideMode::AgErk)
    }

    /// Whether the degraded-field pairing (ag) is in play.
    pub fn uses_degraded(self) -> bool {
        matches!(self, GuideMode::Ag | GuideMode::AgErk)
    }
}

fn d_steps() -> usize { 32 }
fn d_sigma_min() -> f64 { 0.002 }
fn d_sigma_max() -> f64 { 80.0 }
fn d_rho_exp() -> f64 { 7.0 }
fn d_solver() -> SolverKind { SolverKind::Heun }
fn d_guide() -> GuideMode { GuideMode::None }
fn d_w() -> f64 { 2.0 }
fn d_w_stiff() -> f64 { 1.0 }
fn d_w_con() -> f64 { 0.5 }
fn d_scaling() -> ScalingKind { ScalingKind::Quadratic }
fn d_seed() -> u64 { 0 }
fn d_count() -> usize { 256 }
fn d_jobs() -> usize { 0 }
fn d_class() -> u32 { 0 }
fn d_degrade_jitter() -> f64 { 0.1 }
fn d_degrade_inflation() -> f64 { 1.5 }
fn d_degrade_seed() -> u64 { 7077 }
fn d_tree_branches() -> usize { 2 }
fn d_tree_modes() -> usize { 8 }
fn d_tree_mode_std() -> f64 { 0.05 }
fn d_tree_angle() -> f64 { 50.0 }

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Number of sampling levels N (the schedule appends a final 0).
    pub steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Schedule curvature exponent.
    pub rho_exp: f64,
    pub solver: SolverKind,
    pub guide: GuideMode,
    /// Field-combination weight for cfg/ag modes.
    pub w: f64,
    pub w_stiff: f64,
    pub w_con: f64,
    pub scaling: ScalingKind,
    pub seed: u64,
    /// Trajectories per run.
    pub count: usize,
    /// Worker threads; 0 defers to the library default.
    pub jobs: usize,
    /// Class id selecting the conditional sub-mixture in cfg modes.
    pub class: u32,
    pub degrade_jitter: f64,
    pub degrade_inflation: f64,
    pub degrade_seed: u64,
    pub tree_branches: usize,
    pub tree_modes: usize,
    pub tree_mode_std: f64,
    /// Half-spread of branch directions, degrees.
    pub tree_angle: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            steps: d_steps(),
            sigma_min: d_sigma_min(),
            sigma_max: d_sigma_max(),
            rho_exp: d_rho_exp(),
            solver: d_solver(),
            guide: d_guide(),
            w: d_w(),
            w_stiff: d_w_stiff(),
            w_con: d_w_con(),
            scaling: d_scaling(),
            seed: d_seed(),
            count: d_count(),
            jobs: d_jobs(),
            class: d_class(),
            degrade_jitter: d_degrade_jitter(),
            degrade_inflation: d_degrade_inflation(),
            degrade_seed: d_degrade_seed(),
            tree_branches: d_tree_branches(),
            tree_modes: d_tree_modes(),
            tree_mode_std: d_tree_mode_std(),
            tree_angle: d_tree_angle(),
        }
    }
}

// Keep the serde(default) story honest: the per-field defaults above are the
// same functions Default::default() uses, so a partial JSON fills in exactly
// the missing fields. (serde's container-level default would also work, but
// field-level functions keep each literal greppable in one place.)
impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::config("steps must be >= 2"));
        }
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min) {
            return Err(Error::config("need 0 < sigma_min < sigma_max"));
        }
        if !(self.rho_exp > 0.0) {
            return Err(Error::config("rho_exp must be positive"));
        }
        if self.count < 1 {
            return Err(Error::config("count must be >= 1"));
        }
        if !(self.w_con >= 0.0) {
            return Err(Error::config("w_con must be non-negative"));
        }
        if !(self.w_stiff >= 0.0) {
            return Err(Error::config("w_stiff must be non-negative"));
        }
        if !self.w.is_finite() {
            return Err(Error::config("w must be finite"));
        }
        if self.guide == GuideMode::ErkProj && self.solver != SolverKind::Heun {
            return Err(Error::config("erk-proj guidance requires the heun solver"));
        }
        if self.guide.uses_correction() && self.solver == SolverKind::Euler {
            return Err(Error::config(
                "erk guidance needs an embedded pair; the euler solver has none",
            ));
        }
        if self.tree_branches < 2 || self.tree_modes < 2 {
            return Err(Error::config("tree needs >= 2 branches and >= 2 modes per segment"));
        }
        if !(self.tree_mode_std > 0.0) {
            return Err(Error::config("tree_mode_std must be positive"));
        }
        Ok(())
    }
}

/// Load a config from JSON. Accepts either a bare `RunConfig` document or a
/// whole run manifest (any object with a `config` key).
pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let cfg_value = match value.get("config") {
        Some(inner) => inner.clone(),
        None => value,
    };
    let cfg: RunConfig = serde_json::from_value(cfg_value)?;
    cfg.validate()?;
    Ok(cfg)
}
