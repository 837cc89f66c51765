//! Trajectory sampling: solver loops with cost-free pair bookkeeping, the
//! guidance hook, drift-level model guidance, and parallel batches.
//!
//! Loop shape shared by every solver: the first drift evaluation of step i
//! completes whatever pair was owed (Heun) or pairs with history (the
//! multistep solver), the freshest complete pair is turned into a stiffness
//! estimate oriented by that same evaluation, the solver update runs, and —
//! when the update is second-order and guidance is on — the correction moves
//! the endpoint. Estimates are recorded in the trace even when nothing
//! consumes them; the correction itself never evaluates the field, so guided
//! and unguided runs report identical NFE.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{estimate_from_pair, StiffnessEstimate};
use crate::fields::ScoreField;
use crate::guidance::{
    combine_drift, erk_guid_correction_traced, erk_proj_drift, ERKProjConfig, GuidanceConfig,
};
use crate::rng;
use crate::schedule::Schedule;
use crate::solvers::{
    deis_ab2_step, dpm2s_step, euler_step, heun_step, ERKPair, PendingPair, PrevStep, SolverKind,
};
use crate::state::StateVector;
use crate::trace::StepTrace;

/// Two score fields blended at the drift level:
/// f^w = f_main + (w - 1)(f_main - f_guide). One call to `drift` is one
/// composite evaluation — the NFE unit for guided sampling. jvp, jacobian,
/// and score blend the same way, and w = 1 short-circuits to the main field
/// bit-for-bit throughout.
pub struct CombinedDrift<'a> {
    pub main: &'a dyn ScoreField,
    pub guide: &'a dyn ScoreField,
    pub w: f64,
}

impl ScoreField for CombinedDrift<'_> {
    fn dim(&self) -> usize {
        self.main.dim()
    }

    fn score(&self, x: &StateVector, sigma: f64) -> StateVector {
        combine_drift(&self.main.score(x, sigma), &self.guide.score(x, sigma), self.w)
    }

    fn jvp(&self, x: &StateVector, sigma: f64, v: &StateVector) -> StateVector {
        combine_drift(&self.main.jvp(x, sigma, v), &self.guide.jvp(x, sigma, v), self.w)
    }

    fn jacobian(&self, x: &StateVector, sigma: f64) -> Result<DMatrix<f64>> {
        let jm = self.main.jacobian(x, sigma)?;
        if self.w == 1.0 {
            return Ok(jm);
        }
        let jg = self.guide.jacobian(x, sigma)?;
        let diff = &jm - &jg;
        Ok(&jm + diff * (self.w - 1.0))
    }

    fn describe(&self) -> String {
        format!(
            "{{\"combined\":{{\"w\":{},\"main\":{},\"guide\":{}}}}}",
            self.w,
            self.main.describe(),
            self.guide.describe()
        )
    }

    fn drift(&self, x: &StateVector, sigma: f64) -> StateVector {
        combine_drift(&self.main.drift(x, sigma), &self.guide.drift(x, sigma), self.w)
    }
}

/// Everything a single trajectory needs besides its seed identity.
#[derive(Clone, Copy)]
pub struct SamplerPlan<'a> {
    /// Effective drift field: the plain field, or a [`CombinedDrift`].
    pub field: &'a dyn ScoreField,
    pub schedule: &'a Schedule,
    pub solver: SolverKind,
    /// `enabled = false` leaves estimates recorded but never applied.
    pub guidance: GuidanceConfig,
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    pub final_x: StateVector,
    pub nfe: u64,
    pub trace: Vec<StepTrace>,
    /// States at every level, x0 first, final state last.
    pub states: Vec<StateVector>,
}

/// Step-level view handed to an observer: the state entering the step, the
/// orienting drift, and the pair/estimate available at the step (if any).
pub struct StepObservation<'a> {
    pub traj: usize,
    pub step: usize,
    pub sigma_in: f64,
    pub sigma_out: f64,
    pub x_start: &'a StateVector,
    pub f_ref: &'a StateVector,
    pub pair: Option<&'a ERKPair>,
    pub estimate: Option<&'a StiffnessEstimate>,
}

pub(crate) struct TrajState {
    pub(crate) x: StateVector,
    pub(crate) nfe: u64,
    pub(crate) trace: Vec<StepTrace>,
    pub(crate) states: Vec<StateVector>,
}

impl TrajState {
    pub(crate) fn start(x0: StateVector) -> Self {
        TrajState { states: vec![x0.clone()], x: x0, nfe: 0, trace: Vec::new() }
    }

    fn record(
        &mut self,
        traj: usize,
        step: usize,
        sigma_in: f64,
        sigma_out: f64,
        est: Option<&StiffnessEstimate>,
        colocated: bool,
        beta: f64,
        correction_norm: f64,
    ) {
        self.trace.push(StepTrace {
            traj,
            step,
            sigma_in,
            sigma_out,
            rho_hat: est.map(|e| e.rho_hat).unwrap_or(0.0),
            beta,
            correction_norm,
            nfe_cumulative: self.nfe,
            pair_colocated: est.is_some() && colocated,
            halved: false,
            corrector_eps: 0.0,
        });
    }

    pub(crate) fn advance(&mut self, x_next: StateVector) {
        self.states.push(x_next.clone());
        self.x = x_next;
    }

    pub(crate) fn finish(self) -> TrajectoryResult {
        TrajectoryResult {
            final_x: self.x.clone(),
            nfe: self.nfe,
            trace: self.trace,
            states: self.states,
        }
    }
}

fn observe(
    obs: &mut dyn FnMut(StepObservation<'_>),
    traj: usize,
    step: usize,
    sigma_in: f64,
    sigma_out: f64,
    x_start: &StateVector,
    f_ref: &StateVector,
    pair: Option<&ERKPair>,
    estimate: Option<&StiffnessEstimate>,
) {
    obs(StepObservation { traj, step, sigma_in, sigma_out, x_start, f_ref, pair, estimate });
}

fn run_euler(
    plan: &SamplerPlan<'_>,
    master_seed: u64,
    traj: usize,
    obs: &mut dyn FnMut(StepObservation<'_>),
) -> TrajectoryResult {
    let sigmas = &plan.schedule.sigmas;
    let dim = plan.field.dim();
    let mut run = TrajState::start(rng::init_noise(master_seed, traj as u64, dim, plan.schedule.sigma_max()));
    for i in 0..sigmas.len() - 1 {
        let (si, sn) = (sigmas[i], sigmas[i + 1]);
        let res = euler_step(plan.field, &run.x, si, sn, None);
        run.nfe += u64::from(res.evals_used);
        observe(obs, traj, i, si, sn, &run.x, &res.f_start, None, None);
        run.record(traj, i, si, sn, None, false, 0.0, 0.0);
        run.advance(res.x_next);
    }
    run.finish()
}

fn run_heun(
    plan: &SamplerPlan<'_>,
    master_seed: u64,
    traj: usize,
    obs: &mut dyn FnMut(StepObservation<'_>),
) -> TrajectoryResult {
    let sigmas = &plan.schedule.sigmas;
    let dim = plan.field.dim();
    let mut run = TrajState::start(rng::init_noise(master_seed, traj as u64, dim, plan.schedule.sigma_max()));
    let mut pending: Option<PendingPair> = None;
    for i in 0..sigmas.len() - 1 {
        let (si, sn) = (sigmas[i], sigmas[i + 1]);
        // First evaluation of the step: settles the pair owed at sigma_i.
        let f_i = plan.field.drift(&run.x, si);
        run.nfe += 1;
        let completed: Option<ERKPair> = pending.take().map(|p| p.complete(f_i.clone()));
        let est = completed.as_ref().map(|p| estimate_from_pair(p, &f_i));
        observe(obs, traj, i, si, sn, &run.x, &f_i, completed.as_ref(), est.as_ref());

        let res = heun_step(plan.field, &run.x, si, sn, Some(f_i.clone()));
        run.nfe += u64::from(res.evals_used);

        let (x_next, beta, corr) = match (&est, sn > 0.0) {
            (Some(e), true) => {
                let out = erk_guid_correction_traced(&res.x_next, si - sn, e, &f_i, &plan.guidance);
                (out.x, out.beta, out.correction_norm)
            }
            _ => (res.x_next, 0.0, 0.0),
        };
        // The guided state is the trajectory state: the pair owed at
        // sigma_next carries it as its high branch.
        pending = res.pending.map(|mut p| {
            p.x_high = x_next.clone();
            p
        });
        run.record(traj, i, si, sn, est.as_ref(), true, beta, corr);
        run.advance(x_next);
    }
    run.finish()
}

fn run_dpm2s(
    plan: &SamplerPlan<'_>,
    master_seed: u64,
    traj: usize,
    obs: &mut dyn FnMut(StepObservation<'_>),
) -> TrajectoryResult {
    let sigmas = &plan.schedule.sigmas;
    let dim = plan.field.dim();
    let mut run = TrajState::start(rng::init_noise(master_seed, traj as u64, dim, plan.schedule.sigma_max()));
    // Pair returned by the previous step, consumed by this one.
    let mut held: Option<ERKPair> = None;
    for i in 0..sigmas.len() - 1 {
        let (si, sn) = (sigmas[i], sigmas[i + 1]);
        let res = if sn == 0.0 {
            euler_step(plan.field, &run.x, si, sn, None)
        } else {
            dpm2s_step(plan.field, &run.x, si, sn)
        };
        run.nfe += u64::from(res.evals_used);
        let consumed = held.take();
        let est = consumed.as_ref().map(|p| estimate_from_pair(p, &res.f_start));
        observe(obs, traj, i, si, sn, &run.x, &res.f_start, consumed.as_ref(), est.as_ref());

        let (x_next, beta, corr) = match (&est, sn > 0.0) {
            (Some(e), true) => {
                let out =
                    erk_guid_correction_traced(&res.x_next, si - sn, e, &res.f_start, &plan.guidance);
                (out.x, out.beta, out.correction_norm)
            }
            _ => (res.x_next, 0.0, 0.0),
        };
        held = res.pair;
        run.record(traj, i, si, sn, est.as_ref(), false, beta, corr);
        run.advance(x_next);
    }
    run.finish()
}

fn run_deis(
    plan: &SamplerPlan<'_>,
    master_seed: u64,
    traj: usize,
    obs: &mut dyn FnMut(StepObservation<'_>),
) -> TrajectoryResult {
    let sigmas = &plan.schedule.sigmas;
    let dim = plan.field.dim();
    let mut run = TrajState::start(rng::init_noise(master_seed, traj as u64, dim, plan.schedule.sigma_max()));
    let mut hist: Option<PrevStep> = None;
    for i in 0..sigmas.len() - 1 {
        let (si, sn) = (sigmas[i], sigmas[i + 1]);
        let res = deis_ab2_step(plan.field, &run.x, si, sn, hist.as_ref());
        run.nfe += u64::from(res.evals_used);
        // The bootstrap step's embedded Heun pair is dropped: the solver's
        // own pair construction is the cross-step one.
        let est = res.pair.as_ref().map(|p| estimate_from_pair(p, &res.f_start));
        observe(obs, traj, i, si, sn, &run.x, &res.f_start, res.pair.as_ref(), est.as_ref());

        let (x_next, beta, corr) = match (&est, sn > 0.0) {
            (Some(e), true) => {
                let out =
                    erk_guid_correction_traced(&res.x_next, si - sn, e, &res.f_start, &plan.guidance);
                (out.x, out.beta, out.correction_norm)
            }
            _ => (res.x_next, 0.0, 0.0),
        };
        hist = Some(PrevStep { sigma: si, x: run.x.clone(), f: res.f_start.clone(), h: si - sn });
        run.record(traj, i, si, sn, est.as_ref(), false, beta, corr);
        run.advance(x_next);
    }
    run.finish()
}

/// One trajectory with a step observer (analysis collectors hook in here).
pub fn sample_trajectory_observed(
    plan: &SamplerPlan<'_>,
    master_seed: u64,
    traj: usize,
    obs: &mut dyn FnMut(StepObservation<'_>),
) -> TrajectoryResult {
    match plan.solver {
        SolverKind::Euler => run_euler(plan, master_seed, traj, obs),
        SolverKind::Heun => run_heun(plan, master_seed, traj, obs),
        SolverKind::Dpm2s => run_dpm2s(plan, master_seed, traj, obs),
        SolverKind::DeisAb2 => run_deis(plan, master_seed, traj, obs),
    }
}

pub fn sample_trajectory(plan: &SamplerPlan<'_>, master_seed: u64, traj: usize) -> TrajectoryResult {
    sample_trajectory_observed(plan, master_seed, traj, &mut |_| {})
}

/// Drift-projected guidance (Heun only): the trajectory advances on the
/// projected combination while the pair bookkeeping sees the raw
/// combination, so the estimates match what a plain guided run would see.
/// The per-step estimate is frozen before the step's stages and shapes every
/// evaluation of that step, the final Euler one included.
pub struct ProjPlan<'a> {
    pub main: &'a dyn ScoreField,
    pub guide: &'a dyn ScoreField,
    pub schedule: &'a Schedule,
    pub cfg: ERKProjConfig,
}

pub fn sample_projected_trajectory(
    plan: &ProjPlan<'_>,
    master_seed: u64,
    traj: usize,
) -> TrajectoryResult {
    let sigmas = &plan.schedule.sigmas;
    let dim = plan.main.dim();
    let raw_w = plan.cfg.w;
    let mut run = TrajState::start(rng::init_noise(master_seed, traj as u64, dim, plan.schedule.sigma_max()));
    // Pair of raw combined drifts owed its completing evaluation.
    let mut pending: Option<PendingPair> = None;
    for i in 0..sigmas.len() - 1 {
        let (si, sn) = (sigmas[i], sigmas[i + 1]);
        let h = si - sn;
        // One composite evaluation yields both parts.
        let fm = plan.main.drift(&run.x, si);
        let fg = plan.guide.drift(&run.x, si);
        run.nfe += 1;
        let raw_i = combine_drift(&fm, &fg, raw_w);
        let completed = pending.take().map(|p| p.complete(raw_i.clone()));
        let est = completed.as_ref().map(|p| estimate_from_pair(p, &raw_i));
        // Frozen for all of this step's evaluations.
        let est_ref = est.as_ref().filter(|e| e.valid);
        let proj_i = erk_proj_drift(&fm, &fg, est_ref, &plan.cfg);

        let x_next = if sn == 0.0 {
            pending = None;
            &run.x - &proj_i * h
        } else {
            let x_low = &run.x - &proj_i * h;
            let fm2 = plan.main.drift(&x_low, sn);
            let fg2 = plan.guide.drift(&x_low, sn);
            run.nfe += 1;
            let raw_low = combine_drift(&fm2, &fg2, raw_w);
            let proj_low = erk_proj_drift(&fm2, &fg2, est_ref, &plan.cfg);
            let x_next = &run.x - (&proj_i + &proj_low) * (0.5 * h);
            pending = Some(PendingPair {
                sigma: sn,
                x_high: x_next.clone(),
                x_low,
                f_low: raw_low,
            });
            x_next
        };
        run.record(traj, i, si, sn, est.as_ref(), true, 0.0, 0.0);
        run.advance(x_next);
    }
    run.finish()
}

/// Install a rayon pool of the requested width and run `f` inside it;
/// `jobs = 0` keeps the library default pool.
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Trajectories 0..count, order-stable regardless of worker count: each
/// trajectory is keyed only by (master_seed, index).
pub fn sample_batch(
    plan: &SamplerPlan<'_>,
    master_seed: u64,
    count: usize,
    jobs: usize,
) -> Result<Vec<TrajectoryResult>> {
    with_jobs(jobs, || {
        (0..count)
            .into_par_iter()
            .map(|t| sample_trajectory(plan, master_seed, t))
            .collect()
    })
}

pub fn sample_projected_batch(
    plan: &ProjPlan<'_>,
    master_seed: u64,
    count: usize,
    jobs: usize,
) -> Result<Vec<TrajectoryResult>> {
    with_jobs(jobs, || {
        (0..count)
            .into_par_iter()
            .map(|t| sample_projected_trajectory(plan, master_seed, t))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{build_tree_gmm, conditional_field};
    use crate::schedule::build_edm_schedule;

    fn tree() -> crate::fields::GaussianMixture {
        build_tree_gmm(2, 8, 0.05, 50.0).unwrap()
    }

    fn plan<'a>(
        field: &'a dyn ScoreField,
        schedule: &'a Schedule,
        solver: SolverKind,
        enabled: bool,
    ) -> SamplerPlan<'a> {
        SamplerPlan {
            field,
            schedule,
            solver,
            guidance: GuidanceConfig { enabled, ..Default::default() },
        }
    }

    fn bits(x: &StateVector) -> Vec<u64> {
        x.iter().map(|c| c.to_bits()).collect()
    }

    #[test]
    fn nfe_accounting_per_solver() {
        let gm = tree();
        let sched = build_edm_schedule(8, 0.002, 80.0, 7.0).unwrap();
        let n = 8u64;
        for (solver, expect) in [
            (SolverKind::Euler, n),
            (SolverKind::Heun, 2 * (n - 1) + 1),
            (SolverKind::Dpm2s, 2 * (n - 1) + 1),
            (SolverKind::DeisAb2, n + 1),
        ] {
            let p = plan(&gm, &sched, solver, false);
            let res = sample_trajectory(&p, 0, 0);
            assert_eq!(res.nfe, expect, "{solver:?}");
            assert_eq!(res.trace.last().unwrap().nfe_cumulative, expect);
            assert_eq!(res.states.len(), sched.sigmas.len());
        }
    }

    #[test]
    fn first_step_never_guides_and_final_step_never_guides() {
        let gm = tree();
        let sched = build_edm_schedule(8, 0.002, 80.0, 7.0).unwrap();
        for solver in [SolverKind::Heun, SolverKind::Dpm2s, SolverKind::DeisAb2] {
            let p = plan(&gm, &sched, solver, true);
            let res = sample_trajectory(&p, 3, 1);
            assert_eq!(res.trace[0].beta, 0.0, "{solver:?}");
            assert_eq!(res.trace.last().unwrap().beta, 0.0, "{solver:?}");
        }
    }

    #[test]
    fn two_level_schedule_cannot_fire_guidance() {
        let gm = tree();
        let sched = build_edm_schedule(2, 0.002, 80.0, 7.0).unwrap();
        for solver in [SolverKind::Heun, SolverKind::Dpm2s, SolverKind::DeisAb2] {
            let p = plan(&gm, &sched, solver, true);
            let res = sample_trajectory(&p, 0, 5);
            assert!(res.trace.iter().all(|r| r.beta == 0.0), "{solver:?}");
            assert!(res.trace.iter().all(|r| r.correction_norm == 0.0));
        }
    }

    #[test]
    fn disabled_guidance_still_records_estimates() {
        let gm = tree();
        let sched = build_edm_schedule(16, 0.002, 80.0, 7.0).unwrap();
        let p = plan(&gm, &sched, SolverKind::Heun, false);
        let res = sample_trajectory(&p, 0, 0);
        assert!(res.trace.iter().skip(1).any(|r| r.rho_hat > 0.0));
        assert!(res.trace.iter().all(|r| r.beta == 0.0));
        // Heun pairs are co-located from step 1 on.
        assert!(!res.trace[0].pair_colocated);
        assert!(res.trace[1].pair_colocated);
    }

    #[test]
    fn zero_strength_guidance_is_bit_identical_to_unguided() {
        let gm = tree();
        let sched = build_edm_schedule(12, 0.002, 80.0, 7.0).unwrap();
        for solver in [SolverKind::Heun, SolverKind::Dpm2s, SolverKind::DeisAb2] {
            let off = plan(&gm, &sched, solver, false);
            let mut on = plan(&gm, &sched, solver, true);
            on.guidance.w_stiff = 0.0;
            for traj in 0..4 {
                let a = sample_trajectory(&off, 9, traj);
                let b = sample_trajectory(&on, 9, traj);
                assert_eq!(a.nfe, b.nfe);
                for (xa, xb) in a.states.iter().zip(&b.states) {
                    assert_eq!(bits(xa), bits(xb), "{solver:?}");
                }
            }
        }
    }

    #[test]
    fn guidance_changes_states_when_strength_is_nonzero() {
        let gm = tree();
        let sched = build_edm_schedule(16, 0.002, 80.0, 7.0).unwrap();
        let off = plan(&gm, &sched, SolverKind::Heun, false);
        let on = plan(&gm, &sched, SolverKind::Heun, true);
        let mut diff = 0;
        for traj in 0..8 {
            let a = sample_trajectory(&off, 0, traj);
            let b = sample_trajectory(&on, 0, traj);
            assert_eq!(a.nfe, b.nfe);
            if bits(&a.final_x) != bits(&b.final_x) {
                diff += 1;
            }
        }
        assert!(diff > 0, "guidance never fired across 8 trajectories");
    }

    #[test]
    fn trajectories_are_reproducible_and_distinct() {
        let gm = tree();
        let sched = build_edm_schedule(8, 0.002, 80.0, 7.0).unwrap();
        let p = plan(&gm, &sched, SolverKind::Heun, false);
        let a = sample_trajectory(&p, 0, 0);
        let b = sample_trajectory(&p, 0, 0);
        assert_eq!(bits(&a.final_x), bits(&b.final_x));
        let c = sample_trajectory(&p, 0, 1);
        assert_ne!(bits(&a.final_x), bits(&c.final_x));
        let d = sample_trajectory(&p, 1, 0);
        assert_ne!(bits(&a.final_x), bits(&d.final_x));
    }

    #[test]
    fn batch_is_order_stable_across_job_counts() {
        let gm = tree();
        let sched = build_edm_schedule(8, 0.002, 80.0, 7.0).unwrap();
        let p = plan(&gm, &sched, SolverKind::Heun, false);
        let serial = sample_batch(&p, 0, 6, 1).unwrap();
        let parallel = sample_batch(&p, 0, 6, 3).unwrap();
        for (a, b) in serial.iter().zip(&parallel) {
            assert_eq!(bits(&a.final_x), bits(&b.final_x));
            assert_eq!(a.nfe, b.nfe);
        }
    }

    #[test]
    fn combined_drift_unit_weight_is_main_field_bitwise() {
        let gm = tree();
        let cond = conditional_field(&gm, 0).unwrap();
        let combined = CombinedDrift { main: &cond, guide: &gm, w: 1.0 };
        let x = StateVector::from_column_slice(&[0.3, 0.8]);
        let a = combined.drift(&x, 0.5);
        let b = cond.drift(&x, 0.5);
        assert_eq!(bits(&a), bits(&b));
        let sched = build_edm_schedule(8, 0.002, 80.0, 7.0).unwrap();
        let pc = plan(&combined, &sched, SolverKind::Heun, false);
        let pm = plan(&cond as &dyn ScoreField, &sched, SolverKind::Heun, false);
        let ra = sample_trajectory(&pc, 0, 2);
        let rb = sample_trajectory(&pm, 0, 2);
        for (xa, xb) in ra.states.iter().zip(&rb.states) {
            assert_eq!(bits(xa), bits(xb));
        }
    }

    #[test]
    fn projection_with_zero_sharpness_matches_plain_combination_bitwise() {
        let gm = tree();
        let cond = conditional_field(&gm, 0).unwrap();
        let sched = build_edm_schedule(12, 0.002, 80.0, 7.0).unwrap();
        let combined = CombinedDrift { main: &cond, guide: &gm, w: 2.0 };
        let base_plan = plan(&combined, &sched, SolverKind::Heun, false);
        let proj_plan = ProjPlan {
            main: &cond,
            guide: &gm,
            schedule: &sched,
            cfg: ERKProjConfig { w: 2.0, w_stiff: 0.0 },
        };
        for traj in 0..4 {
            let a = sample_trajectory(&base_plan, 0, traj);
            let b = sample_projected_trajectory(&proj_plan, 0, traj);
            assert_eq!(a.nfe, b.nfe);
            for (xa, xb) in a.states.iter().zip(&b.states) {
                assert_eq!(bits(xa), bits(xb));
            }
        }
    }

    #[test]
    fn projection_unit_weight_estimates_match_unguided_bitwise() {
        let gm = tree();
        let cond = conditional_field(&gm, 0).unwrap();
        let sched = build_edm_schedule(12, 0.002, 80.0, 7.0).unwrap();
        let plain = plan(&cond as &dyn ScoreField, &sched, SolverKind::Heun, false);
        let proj_plan = ProjPlan {
            main: &cond,
            guide: &gm,
            schedule: &sched,
            cfg: ERKProjConfig { w: 1.0, w_stiff: 1.0 },
        };
        let a = sample_trajectory(&plain, 0, 1);
        let b = sample_projected_trajectory(&proj_plan, 0, 1);
        for (ra, rb) in a.trace.iter().zip(&b.trace) {
            assert_eq!(ra.rho_hat.to_bits(), rb.rho_hat.to_bits());
        }
        for (xa, xb) in a.states.iter().zip(&b.states) {
            assert_eq!(bits(xa), bits(xb));
        }
    }

    #[test]
    fn projection_with_sharpness_diverges_from_plain_combination() {
        let gm = tree();
        let cond = conditional_field(&gm, 0).unwrap();
        let sched = build_edm_schedule(16, 0.002, 80.0, 7.0).unwrap();
        let combined = CombinedDrift { main: &cond, guide: &gm, w: 2.0 };
        let base_plan = plan(&combined, &sched, SolverKind::Heun, false);
        let proj_plan = ProjPlan {
            main: &cond,
            guide: &gm,
            schedule: &sched,
            cfg: ERKProjConfig { w: 2.0, w_stiff: 1.0 },
        };
        let mut diff = 0;
        for traj in 0..8 {
            let a = sample_trajectory(&base_plan, 0, traj);
            let b = sample_projected_trajectory(&proj_plan, 0, traj);
            if bits(&a.final_x) != bits(&b.final_x) {
                diff += 1;
            }
        }
        assert!(diff > 0);
    }

    #[test]
    fn observer_sees_pairs_from_step_one_on() {
        let gm = tree();
        let sched = build_edm_schedule(8, 0.002, 80.0, 7.0).unwrap();
        let p = plan(&gm, &sched, SolverKind::Heun, false);
        let mut seen = Vec::new();
        sample_trajectory_observed(&p, 0, 0, &mut |o| {
            seen.push((o.step, o.pair.is_some(), o.estimate.is_some()));
        });
        assert_eq!(seen.len(), sched.sigmas.len() - 1);
        assert_eq!(seen[0], (0, false, false));
        assert!(seen.iter().skip(1).all(|&(_, p, e)| p && e));
    }
}
