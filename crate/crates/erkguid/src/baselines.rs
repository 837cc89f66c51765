//! Cost and accuracy baselines on the Heun backbone: adaptive step halving
//! driven by the same pair estimate the guidance uses (but spending extra
//! evaluations instead of correcting), and a Langevin-style
//! predictor-corrector.

use rayon::prelude::*;

use crate::error::Result;
use crate::estimators::estimate_from_pair;
use crate::fields::ScoreField;
use crate::rng;
use crate::sampler::{with_jobs, TrajState, TrajectoryResult};
use crate::schedule::{edm_midpoint, Schedule};
use crate::solvers::{heun_step, PendingPair};
use crate::trace::StepTrace;

/// Adaptive halving: when the step-start estimate exceeds `tau` (same
/// eligibility as the guidance gate: a valid estimate, second-order step),
/// the interval is split once at the schedule-consistent midpoint and
/// integrated as two Heun steps, costing two extra evaluations.
pub fn adaptive_trajectory(
    field: &dyn ScoreField,
    schedule: &Schedule,
    tau: f64,
    rho_exp: f64,
    master_seed: u64,
    traj: usize,
) -> TrajectoryResult {
    let sigmas = &schedule.sigmas;
    let dim = field.dim();
    let mut run = TrajState::start(rng::init_noise(master_seed, traj as u64, dim, schedule.sigma_max()));
    let mut pending: Option<PendingPair> = None;
    for i in 0..sigmas.len() - 1 {
        let (si, sn) = (sigmas[i], sigmas[i + 1]);
        let f_i = field.drift(&run.x, si);
        run.nfe += 1;
        let completed = pending.take().map(|p| p.complete(f_i.clone()));
        let est = completed.as_ref().map(|p| estimate_from_pair(p, &f_i));
        let halve = sn > 0.0
            && est.as_ref().map(|e| e.valid && e.rho_hat > tau).unwrap_or(false);

        let x_next = if halve {
            let sm = edm_midpoint(si, sn, rho_exp);
            let first = heun_step(field, &run.x, si, sm, Some(f_i));
            run.nfe += u64::from(first.evals_used);
            let f_m = field.drift(&first.x_next, sm);
            run.nfe += 1;
            let second = heun_step(field, &first.x_next, sm, sn, Some(f_m));
            run.nfe += u64::from(second.evals_used);
            pending = second.pending;
            second.x_next
        } else {
            let res = heun_step(field, &run.x, si, sn, Some(f_i));
            run.nfe += u64::from(res.evals_used);
            pending = res.pending;
            res.x_next
        };
        run.trace.push(StepTrace {
            traj,
            step: i,
            sigma_in: si,
            sigma_out: sn,
            rho_hat: est.as_ref().map(|e| e.rho_hat).unwrap_or(0.0),
            beta: 0.0,
            correction_norm: 0.0,
            nfe_cumulative: run.nfe,
            pair_colocated: est.is_some(),
            halved: halve,
            corrector_eps: 0.0,
        });
        run.advance(x_next);
    }
    run.finish()
}

#[derive(Debug, Clone, Copy)]
pub struct PcConfig {
    /// Signal-to-noise style ratio; 0 disables the corrector entirely.
    pub r: f64,
    /// Langevin corrector (noise injected) vs. deterministic score ascent.
    pub stochastic: bool,
}

impl Default for PcConfig {
    fn default() -> Self {
        PcConfig { r: 0.1, stochastic: false }
    }
}

/// Heun predictor plus one corrector move at every reached level with
/// sigma > 0:
///
///   stochastic:    eps = 2 (r ||z|| / ||s||)^2,  x += eps s + sqrt(2 eps) z
///   deterministic: eps = 2 (r sqrt(d) / ||s||)^2, x += eps s
///
/// where s is the score at the reached state. r = 0 skips the corrector
/// without evaluating anything (bit-identical to plain Heun); a zero score
/// norm skips the move after the evaluation. Each applied corrector costs
/// one evaluation.
pub fn pc_trajectory(
    field: &dyn ScoreField,
    schedule: &Schedule,
    cfg: &PcConfig,
    master_seed: u64,
    traj: usize,
) -> TrajectoryResult {
    let sigmas = &schedule.sigmas;
    let dim = field.dim();
    let mut run = TrajState::start(rng::init_noise(master_seed, traj as u64, dim, schedule.sigma_max()));
    let mut pending: Option<PendingPair> = None;
    for i in 0..sigmas.len() - 1 {
        let (si, sn) = (sigmas[i], sigmas[i + 1]);
        let f_i = field.drift(&run.x, si);
        run.nfe += 1;
        let completed = pending.take().map(|p| p.complete(f_i.clone()));
        let est = completed.as_ref().map(|p| estimate_from_pair(p, &f_i));

        let res = heun_step(field, &run.x, si, sn, Some(f_i));
        run.nfe += u64::from(res.evals_used);
        let mut x_next = res.x_next;
        let mut eps = 0.0;
        if sn > 0.0 && cfg.r != 0.0 {
            let s = field.score(&x_next, sn);
            run.nfe += 1;
            let s_norm = s.norm();
            if s_norm > 0.0 {
                if cfg.stochastic {
                    let z = rng::corrector_noise(master_seed, traj as u64, i as u64, dim);
                    eps = 2.0 * (cfg.r * z.norm() / s_norm).powi(2);
                    x_next += &s * eps + &z * (2.0 * eps).sqrt();
                } else {
                    eps = 2.0 * (cfg.r * (dim as f64).sqrt() / s_norm).powi(2);
                    x_next += &s * eps;
                }
            }
        }
        // The corrected state is the trajectory state; the owed pair's high
        // branch must be what the next evaluation actually sees.
        pending = res.pending.map(|mut p| {
            p.x_high = x_next.clone();
            p
        });
        run.trace.push(StepTrace {
            traj,
            step: i,
            sigma_in: si,
            sigma_out: sn,
            rho_hat: est.as_ref().map(|e| e.rho_hat).unwrap_or(0.0),
            beta: 0.0,
            correction_norm: 0.0,
            nfe_cumulative: run.nfe,
            pair_colocated: est.is_some(),
            halved: false,
            corrector_eps: eps,
        });
        run.advance(x_next);
    }
    run.finish()
}

pub fn adaptive_batch(
    field: &dyn ScoreField,
    schedule: &Schedule,
    tau: f64,
    rho_exp: f64,
    master_seed: u64,
    count: usize,
    jobs: usize,
) -> Result<Vec<TrajectoryResult>> {
    with_jobs(jobs, || {
        (0..count)
            .into_par_iter()
            .map(|t| adaptive_trajectory(field, schedule, tau, rho_exp, master_seed, t))
            .collect()
    })
}

pub fn pc_batch(
    field: &dyn ScoreField,
    schedule: &Schedule,
    cfg: &PcConfig,
    master_seed: u64,
    count: usize,
    jobs: usize,
) -> Result<Vec<TrajectoryResult>> {
    with_jobs(jobs, || {
        (0..count)
            .into_par_iter()
            .map(|t| pc_trajectory(field, schedule, cfg, master_seed, t))
            .collect()
    })
}
