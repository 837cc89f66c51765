//! Evidence harness: local-error measurement, eigenbasis projections,
//! alignment-vs-stiffness statistics, stiffness heatmaps, convergence-order
//! fits, and the endpoint-error sweep.
//!
//! Everything here is an offline pure function of (field, schedule, seed);
//! grid cells and per-seed studies parallelize with deterministic ordered
//! assembly.

use rayon::prelude::*;
use std::io::Write as _;

use crate::error::{Error, Result};
use crate::estimators::{dense_dominant_eigenpair, dense_spectrum, rho_oracle};
use crate::fields::{GaussianMixture, ScoreField};
use crate::guidance::GuidanceConfig;
use crate::rng;
use crate::sampler::{
    sample_batch, sample_trajectory_observed, with_jobs, SamplerPlan, StepObservation,
};
use crate::schedule::Schedule;
use crate::solvers::{
    deis_ab2_step, dpm2s_step, euler_step, heun_step, reference_solve, reference_trajectory,
    PrevStep, SolverKind,
};
use crate::state::{cosine, StateVector};

/// Substep factor of the ground-truth proxy used for local errors and
/// per-seed reference endpoints.
pub const REFERENCE_SUBSTEPS: usize = 100;
/// Errors below this are treated as exact and dropped from order fits.
pub const ORDER_FIT_ERROR_FLOOR: f64 = 1e-13;
/// A stiffness bin reporting fewer samples than this is flagged.
pub const MIN_BIN_SAMPLES: usize = 10;

/// Median of a sample (average of the two middle order statistics for even
/// length). Panics on empty input.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty sample");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // Tied block [i, j] shares the average rank (1-based).
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

fn one_solver_step<F: ScoreField + ?Sized>(
    field: &F,
    x: &StateVector,
    sigma_i: f64,
    sigma_next: f64,
    solver: SolverKind,
) -> StateVector {
    match solver {
        SolverKind::Euler => euler_step(field, x, sigma_i, sigma_next, None).x_next,
        SolverKind::Heun => heun_step(field, x, sigma_i, sigma_next, None).x_next,
        SolverKind::Dpm2s => {
            if sigma_next == 0.0 {
                euler_step(field, x, sigma_i, sigma_next, None).x_next
            } else {
                dpm2s_step(field, x, sigma_i, sigma_next).x_next
            }
        }
        // No history here: the bootstrap step is the solver's own rule for a
        // cold start.
        SolverKind::DeisAb2 => deis_ab2_step(field, x, sigma_i, sigma_next, None).x_next,
    }
}

/// Actual local error of one solver step: fine reference endpoint minus the
/// solver endpoint, both launched from the same x.
pub fn compute_lte<F: ScoreField + ?Sized>(
    field: &F,
    x: &StateVector,
    sigma_i: f64,
    sigma_next: f64,
    solver: SolverKind,
) -> Result<StateVector> {
    let reference = reference_solve(field, x, sigma_i, sigma_next, REFERENCE_SUBSTEPS)?;
    let stepped = one_solver_step(field, x, sigma_i, sigma_next, solver);
    Ok(reference - stepped)
}

/// Coefficients of `vec` in the drift Jacobian's eigenbasis at (x, sigma),
/// as (lambda_k, <vec, v_k>) sorted by |lambda| descending. The basis is
/// orthonormal, so the coefficients satisfy Parseval's identity.
pub fn project_onto_eigenbasis<F: ScoreField + ?Sized>(
    field: &F,
    x: &StateVector,
    sigma: f64,
    vec: &StateVector,
) -> Result<Vec<(f64, f64)>> {
    Ok(dense_spectrum(field, x, sigma)?
        .into_iter()
        .map(|(l, v)| (l, vec.dot(&v)))
        .collect())
}

/// Per-bin medians of cosine values, binned by oracle stiffness.
#[derive(Debug, Clone)]
pub struct BinSummary {
    /// Half-open [lo, hi) except the last bin, which is closed above.
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub median_cos: f64,
    /// False when the bin holds fewer than [`MIN_BIN_SAMPLES`] samples.
    pub sufficient: bool,
}

/// Bin (rho_oracle, cos) samples by stiffness and take the median cosine in
/// each bin. With `edges = None` the bins are the sample quartiles
/// (equal-count by rank), the default presentation.
pub fn alignment_by_stiffness_bins(
    samples: &[(f64, f64)],
    edges: Option<&[f64]>,
) -> Vec<BinSummary> {
    if samples.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].0.partial_cmp(&samples[b].0).unwrap());
    let groups: Vec<(f64, f64, Vec<f64>)> = match edges {
        Some(edges) => {
            let mut bounds = Vec::with_capacity(edges.len() + 1);
            let lo = samples[order[0]].0;
            let hi = samples[order[order.len() - 1]].0;
            bounds.push(lo.min(edges.first().copied().unwrap_or(lo)));
            bounds.extend_from_slice(edges);
            bounds.push(hi.max(*bounds.last().unwrap()));
            bounds
                .windows(2)
                .map(|w| {
                    let vals: Vec<f64> = samples
                        .iter()
                        .filter(|(r, _)| {
                            *r >= w[0] && (*r < w[1] || (w[1] == *bounds.last().unwrap() && *r <= w[1]))
                        })
                        .map(|(_, c)| *c)
                        .collect();
                    (w[0], w[1], vals)
                })
                .collect()
        }
        None => {
            // Quartiles by rank: equal-count bins regardless of ties.
            let n = order.len();
            (0..4)
                .map(|q| {
                    let a = q * n / 4;
                    let b = (q + 1) * n / 4;
                    let vals: Vec<f64> = order[a..b].iter().map(|&i| samples[i].1).collect();
                    let lo = samples[order[a.min(n - 1)]].0;
                    let hi = samples[order[b.saturating_sub(1).min(n - 1)]].0;
                    (lo, hi, vals)
                })
                .collect()
        }
    };
    groups
        .into_iter()
        .map(|(lo, hi, vals)| BinSummary {
            lo,
            hi,
            count: vals.len(),
            median_cos: if vals.is_empty() { f64::NAN } else { median(&vals) },
            sufficient: vals.len() >= MIN_BIN_SAMPLES,
        })
        .collect()
}

/// How concentrated an eigenbasis expansion is on its dominant direction:
/// |c_1| over the largest remaining |c_k|. Infinite when everything sits in
/// the dominant direction.
pub fn concentration_ratio(coeffs: &[(f64, f64)]) -> f64 {
    assert!(coeffs.len() >= 2, "concentration needs at least 2 coefficients");
    let dom = coeffs[0].1.abs();
    let sub = coeffs[1..].iter().map(|(_, c)| c.abs()).fold(0.0_f64, f64::max);
    dom / sub
}

/// Rectangular evaluation window for 2-d field maps.
#[derive(Debug, Clone, Copy)]
pub struct GridWindow {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Bounding box of the mixture's mode centers, padded by `margin` on every
/// side — the default heatmap window.
pub fn mode_bounding_window(gm: &GaussianMixture, margin: f64) -> Result<GridWindow> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for c in &gm.components {
        if c.mean.len() != 2 {
            return Err(Error::capability("mode window needs a 2-d mixture"));
        }
        xs.push(c.mean[0]);
        ys.push(c.mean[1]);
    }
    let fold = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (x_lo, x_hi) = fold(&xs);
    let (y_lo, y_hi) = fold(&ys);
    Ok(GridWindow {
        x_min: x_lo - margin,
        x_max: x_hi + margin,
        y_min: y_lo - margin,
        y_max: y_hi + margin,
    })
}

/// Geometry-derived probe strips of the two-branch tree mixture.
#[derive(Debug, Clone, Copy)]
pub struct TreeStrips {
    /// Upper half of the low-density gap between the two diverging branches
    /// — the stiff region.
    pub gap: GridWindow,
    /// One-std corridor around the trunk centerline — smooth dynamics.
    pub trunk_core: GridWindow,
}

/// Probe strips computed from the tree builder's own parameters. The gap
/// strip keeps two mode widths of horizontal clearance from each branch
/// centerline, so it covers gap interior only.
pub fn tree_probe_strips(
    branch_count: usize,
    modes_per_branch: usize,
    mode_std: f64,
    branch_angle_deg: f64,
) -> Result<TreeStrips> {
    if branch_count != 2 {
        return Err(Error::capability("probe strips assume the two-branch tree"));
    }
    let m = modes_per_branch as f64;
    let t_min = 0.5 / m;
    let t_max = (m - 0.5) / m;
    let a = branch_angle_deg.to_radians();
    let y_lo = 1.0 + 0.5 * t_max * a.cos();
    let y_hi = 1.0 + t_max * a.cos();
    let x_half = (y_lo - 1.0) * a.tan() - 2.0 * mode_std;
    if !(x_half > 0.0) {
        return Err(Error::Degenerate("branch gap narrower than the mode width".into()));
    }
    Ok(TreeStrips {
        gap: GridWindow { x_min: -x_half, x_max: x_half, y_min: y_lo, y_max: y_hi },
        trunk_core: GridWindow {
            x_min: -mode_std,
            x_max: mode_std,
            y_min: t_min,
            y_max: t_max,
        },
    })
}

/// Dense-oracle stiffness map over a 2-d window: the dominant eigenvalue
/// magnitude of the drift Jacobian at each cell center. Rows scan y from max
/// to min (image order), columns x from min to max.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub window: GridWindow,
    pub sigma: f64,
    pub nx: usize,
    pub ny: usize,
    /// Cell-center coordinates, xs ascending, ys descending.
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major: values[row * nx + col] at (xs[col], ys[row]).
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.nx + col]
    }

    /// Location and value of the stiffest cell (first in row-major order on
    /// exact ties).
    pub fn argmax(&self) -> (usize, usize, StateVector, f64) {
        let mut best = (0usize, 0usize, f64::NEG_INFINITY);
        for r in 0..self.ny {
            for c in 0..self.nx {
                let v = self.value(r, c);
                if v > best.2 {
                    best = (r, c, v);
                }
            }
        }
        let point = StateVector::from_column_slice(&[self.xs[best.1], self.ys[best.0]]);
        (best.0, best.1, point, best.2)
    }

    /// CSV: header `y,x{0}..x{nx-1}` with cell-center x values, then one row
    /// per y (max to min).
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = String::from("y");
        for x in &self.xs {
            header.push_str(&format!(",{x}"));
        }
        writeln!(out, "{header}")?;
        for r in 0..self.ny {
            let mut row = format!("{}", self.ys[r]);
            for c in 0..self.nx {
                row.push_str(&format!(",{}", self.value(r, c)));
            }
            writeln!(out, "{row}")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Minimal static SVG raster (log-scaled single-hue ramp, argmax
    /// crosshair). A quick-look artifact, not a plotting surface.
    pub fn write_svg(&self, path: &std::path::Path) -> Result<()> {
        let cell = 8usize;
        let wpx = self.nx * cell;
        let hpx = self.ny * cell;
        let lo = self.values.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
        let hi = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scale = |v: f64| -> f64 {
            if hi <= lo {
                return 0.0;
            }
            ((1.0 + (v - lo)).ln() / (1.0 + (hi - lo)).ln()).clamp(0.0, 1.0)
        };
        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{wpx}\" height=\"{hpx}\" \
             viewBox=\"0 0 {wpx} {hpx}\">\n"
        ));
        svg.push_str(&format!(
            "<title>stiffness at sigma={} over [{}, {}] x [{}, {}]</title>\n",
            self.sigma, self.window.x_min, self.window.x_max, self.window.y_min, self.window.y_max
        ));
        for r in 0..self.ny {
            for c in 0..self.nx {
                let t = scale(self.value(r, c));
                let red = (255.0 * t).round() as u8;
                let blue = (255.0 * (1.0 - t)).round() as u8;
                let green = (64.0 * (1.0 - t)).round() as u8;
                svg.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({red},{green},{blue})\"/>\n",
                    c * cell,
                    r * cell,
                ));
            }
        }
        let (r, c, _, _) = self.argmax();
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"none\" stroke=\"white\" stroke-width=\"2\"/>\n",
            c * cell,
            r * cell,
        ));
        svg.push_str("</svg>\n");
        std::fs::write(path, svg)?;
        Ok(())
    }
}

/// Evaluate the stiffness map (parallel over rows, ordered assembly).
pub fn stiffness_heatmap<F: ScoreField + ?Sized>(
    field: &F,
    sigma: f64,
    window: GridWindow,
    nx: usize,
    ny: usize,
) -> Result<Heatmap> {
    if field.dim() != 2 {
        return Err(Error::capability("stiffness heatmap needs a 2-d field"));
    }
    if nx < 2 || ny < 2 {
        return Err(Error::config("heatmap needs at least 2x2 cells"));
    }
    let xs: Vec<f64> = (0..nx)
        .map(|c| window.x_min + (c as f64 + 0.5) * (window.x_max - window.x_min) / nx as f64)
        .collect();
    let ys: Vec<f64> = (0..ny)
        .map(|r| window.y_max - (r as f64 + 0.5) * (window.y_max - window.y_min) / ny as f64)
        .collect();
    let values: Vec<f64> = ys
        .par_iter()
        .map(|&y| -> Result<Vec<f64>> {
            let mut row = Vec::with_capacity(nx);
            for &x in &xs {
                let p = StateVector::from_column_slice(&[x, y]);
                let (l, _) = dense_dominant_eigenpair(field, &p, sigma)?;
                row.push(l.abs());
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(Heatmap { window, sigma, nx, ny, xs, ys, values })
}

/// One point of a convergence study.
#[derive(Debug, Clone, Copy)]
pub struct OrderPoint {
    pub n_steps: usize,
    pub h: f64,
    pub error: f64,
}

/// Least-squares slope of log(error) against log(h). Points with errors at
/// or below [`ORDER_FIT_ERROR_FLOOR`] are dropped; at least 3 must survive.
pub fn fit_loglog_slope(points: &[OrderPoint]) -> Result<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.error > ORDER_FIT_ERROR_FLOOR)
        .map(|p| (p.h.ln(), p.error.ln()))
        .collect();
    if usable.len() < 3 {
        return Err(Error::Degenerate(
            "order fit needs at least 3 points above the error floor".into(),
        ));
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in &usable {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        return Err(Error::Degenerate("order fit needs distinct step sizes".into()));
    }
    Ok(num / den)
}

/// Integrate a fixed initial state over explicit levels with one solver (no
/// noise, no guidance) — the convergence-study driver.
pub fn integrate_levels<F: ScoreField + ?Sized>(
    field: &F,
    x0: &StateVector,
    sigmas: &[f64],
    solver: SolverKind,
) -> StateVector {
    let mut x = x0.clone();
    let mut hist: Option<PrevStep> = None;
    for w in sigmas.windows(2) {
        let (si, sn) = (w[0], w[1]);
        match solver {
            SolverKind::Euler => x = euler_step(field, &x, si, sn, None).x_next,
            SolverKind::Heun => x = heun_step(field, &x, si, sn, None).x_next,
            SolverKind::Dpm2s => {
                x = if sn == 0.0 {
                    euler_step(field, &x, si, sn, None).x_next
                } else {
                    dpm2s_step(field, &x, si, sn).x_next
                }
            }
            SolverKind::DeisAb2 => {
                let res = deis_ab2_step(field, &x, si, sn, hist.as_ref());
                hist = Some(PrevStep { sigma: si, x: x.clone(), f: res.f_start.clone(), h: si - sn });
                x = res.x_next;
            }
        }
    }
    x
}

/// Endpoint error of `solver` against a much finer Heun reference on the
/// interval [sigma_from, sigma_to], for each grid size in `steps_list`
/// (uniform grids; each entry should double the previous). Returns the
/// per-grid errors and the fitted order.
pub fn estimate_convergence_order<F: ScoreField + ?Sized>(
    field: &F,
    solver: SolverKind,
    x0: &StateVector,
    sigma_from: f64,
    sigma_to: f64,
    steps_list: &[usize],
    reference_factor: usize,
) -> Result<(Vec<OrderPoint>, f64)> {
    if steps_list.len() < 3 {
        return Err(Error::config("convergence study needs >= 3 grid sizes"));
    }
    let finest = *steps_list.iter().max().unwrap();
    let reference = reference_solve(field, x0, sigma_from, sigma_to, finest * reference_factor)?;
    let points: Vec<OrderPoint> = steps_list
        .iter()
        .map(|&n| -> Result<OrderPoint> {
            let sched = crate::schedule::uniform_schedule(sigma_from, sigma_to, n)?;
            let end = integrate_levels(field, x0, &sched.sigmas, solver);
            Ok(OrderPoint {
                n_steps: n,
                h: (sigma_from - sigma_to) / n as f64,
                error: (&end - &reference).norm(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let slope = fit_loglog_slope(&points)?;
    Ok((points, slope))
}

/// Pair-estimator quality sample at one step of one trajectory: the cheap
/// estimates next to their dense oracles at the pair's own location.
#[derive(Debug, Clone, Copy)]
pub struct PairSample {
    pub traj: usize,
    pub sigma_index: usize,
    pub rho_hat: f64,
    pub rho_oracle: f64,
    /// Signed cosine: v_hat against the dominant eigenvector, both oriented
    /// by the same reference drift.
    pub cos_vhat_oracle: f64,
    /// |cos| of the raw solution difference against the dominant eigenvector.
    pub cos_dx_oracle: f64,
}

/// Run unguided trajectories and collect one [`PairSample`] per step that
/// completes a valid pair. Parallel over trajectories, ordered output.
pub fn collect_pair_samples(
    field: &dyn ScoreField,
    schedule: &Schedule,
    solver: SolverKind,
    master_seed: u64,
    trajs: usize,
    jobs: usize,
) -> Result<Vec<PairSample>> {
    let plan = SamplerPlan {
        field,
        schedule,
        solver,
        guidance: GuidanceConfig { enabled: false, ..Default::default() },
    };
    let nested: Vec<Vec<PairSample>> = with_jobs(jobs, || {
        (0..trajs)
            .into_par_iter()
            .map(|t| {
                let mut out = Vec::new();
                sample_trajectory_observed(&plan, master_seed, t, &mut |o: StepObservation<'_>| {
                    let (Some(pair), Some(est)) = (o.pair, o.estimate) else { return };
                    if !est.valid {
                        return;
                    }
                    let Some(rho_o) = rho_oracle(field, pair) else { return };
                    let Ok((_, mut v_o)) =
                        dense_dominant_eigenpair(field, &pair.x_high, pair.sigma_high)
                    else {
                        return;
                    };
                    // Same orientation rule as the estimator, so the cosine
                    // is meaningfully signed.
                    if o.f_ref.dot(&v_o) < 0.0 {
                        v_o = -v_o;
                    }
                    let v_hat = est.v_hat.as_ref().expect("valid estimate");
                    out.push(PairSample {
                        traj: t,
                        sigma_index: o.step,
                        rho_hat: est.rho_hat,
                        rho_oracle: rho_o,
                        cos_vhat_oracle: cosine(v_hat, &v_o),
                        cos_dx_oracle: cosine(&pair.dx(), &v_o).abs(),
                    });
                });
                out
            })
            .collect()
    })?;
    Ok(nested.into_iter().flatten().collect())
}

/// Step-level alignment sample: how well the actual local error and the
/// pair's solution difference line up with the dominant eigenvector at the
/// step's launch point.
#[derive(Debug, Clone, Copy)]
pub struct LteSample {
    pub rho_oracle: f64,
    pub cos_lte: f64,
    pub cos_dx: f64,
}

/// Collect LTE alignment samples over unguided Heun trajectories: one sample
/// per second-order step holding a valid pair. Expensive (each sample runs
/// the fine reference), parallel over trajectories.
pub fn collect_lte_samples(
    field: &dyn ScoreField,
    schedule: &Schedule,
    master_seed: u64,
    trajs: usize,
    jobs: usize,
) -> Result<Vec<LteSample>> {
    let plan = SamplerPlan {
        field,
        schedule,
        solver: SolverKind::Heun,
        guidance: GuidanceConfig { enabled: false, ..Default::default() },
    };
    let nested: Vec<Vec<LteSample>> = with_jobs(jobs, || {
        (0..trajs)
            .into_par_iter()
            .map(|t| {
                let mut out = Vec::new();
                sample_trajectory_observed(&plan, master_seed, t, &mut |o: StepObservation<'_>| {
                    if o.sigma_out == 0.0 {
                        return;
                    }
                    let (Some(pair), Some(est)) = (o.pair, o.estimate) else { return };
                    if !est.valid {
                        return;
                    }
                    let Some(rho_o) = rho_oracle(field, pair) else { return };
                    let Ok(lte) = compute_lte(field, o.x_start, o.sigma_in, o.sigma_out, SolverKind::Heun)
                    else {
                        return;
                    };
                    let Ok((_, v_o)) = dense_dominant_eigenpair(field, o.x_start, o.sigma_in) else {
                        return;
                    };
                    out.push(LteSample {
                        rho_oracle: rho_o,
                        cos_lte: cosine(&lte, &v_o).abs(),
                        cos_dx: cosine(&pair.dx(), &v_o).abs(),
                    });
                });
                out
            })
            .collect()
    })?;
    Ok(nested.into_iter().flatten().collect())
}

/// Per-seed reference endpoints: the fine-substep trajectory launched from
/// the same initial noise the sampler uses.
pub fn reference_endpoints(
    field: &dyn ScoreField,
    schedule: &Schedule,
    master_seed: u64,
    count: usize,
    substeps: usize,
    jobs: usize,
) -> Result<Vec<StateVector>> {
    let dim = field.dim();
    with_jobs(jobs, || {
        (0..count)
            .into_par_iter()
            .map(|t| {
                let x0 = rng::init_noise(master_seed, t as u64, dim, schedule.sigma_max());
                reference_trajectory(field, &x0, &schedule.sigmas, substeps)
            })
            .collect()
    })?
}

/// One row of the guidance sweep table.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub w_stiff: f64,
    pub w_con: f64,
    pub median_error: f64,
    /// Per-trajectory evaluation count (identical across a configuration).
    pub nfe: u64,
}

/// Median endpoint error (against per-seed references) and cost for each
/// (w_stiff, w_con) configuration of the trajectory correction.
pub fn endpoint_error_study(
    field: &dyn ScoreField,
    schedule: &Schedule,
    solver: SolverKind,
    base: &GuidanceConfig,
    sweep: &[(f64, f64)],
    master_seed: u64,
    count: usize,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let refs = reference_endpoints(field, schedule, master_seed, count, REFERENCE_SUBSTEPS, jobs)?;
    let mut rows = Vec::with_capacity(sweep.len());
    for &(w_stiff, w_con) in sweep {
        let plan = SamplerPlan {
            field,
            schedule,
            solver,
            guidance: GuidanceConfig { w_stiff, w_con, enabled: true, ..*base },
        };
        let results = sample_batch(&plan, master_seed, count, jobs)?;
        let errors: Vec<f64> = results
            .iter()
            .zip(&refs)
            .map(|(r, xr)| (&r.final_x - xr).norm())
            .collect();
        rows.push(SweepRow {
            w_stiff,
            w_con,
            median_error: median(&errors),
            nfe: results.first().map(|r| r.nfe).unwrap_or(0),
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &std::path::Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "w_stiff,w_con,median_error,nfe")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.w_stiff, r.w_con, r.median_error, r.nfe)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_pair_samples_csv(path: &std::path::Path, rows: &[PairSample]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "sigma_index,rho_hat,rho_oracle,cos_vhat_oracle,cos_dx_oracle")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.sigma_index, r.rho_hat, r.rho_oracle, r.cos_vhat_oracle, r.cos_dx_oracle
        )?;
    }
    out.flush()?;
    Ok(())
}
