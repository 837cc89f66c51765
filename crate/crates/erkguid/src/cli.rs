//! Command-line front end: parses flags, resolves them against an optional
//! JSON config file and the built-in defaults, runs the requested study, and
//! writes a self-describing run directory.
//!
//! Every run directory carries manifest.json with the resolved configuration
//! and the invoking arguments; feeding that manifest back through `--config`
//! (or re-running the recorded arguments) reproduces the data artifacts
//! byte-identically.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    alignment_by_stiffness_bins, collect_lte_samples, collect_pair_samples, compute_lte,
    concentration_ratio, endpoint_error_study, estimate_convergence_order, mode_bounding_window,
    project_onto_eigenbasis, stiffness_heatmap, tree_probe_strips, write_pair_samples_csv,
    write_sweep_csv, BinSummary, SweepRow,
};
use crate::config::{load_config, GuideMode, RunConfig};
use crate::error::{Error, Result};
use crate::fields::{
    build_degraded_field, build_tree_gmm, conditional_field, field_hash, GaussianMixture,
    MixtureComponent, ScoreField,
};
use crate::guidance::{ERKProjConfig, GuidanceConfig, ScalingKind};
use crate::sampler::{
    sample_batch, sample_projected_batch, CombinedDrift, ProjPlan, SamplerPlan, TrajectoryResult,
};
use crate::schedule::{build_edm_schedule, Schedule};
use crate::solvers::{heun_step, SolverKind};
use crate::state::StateVector;
use crate::trace::{write_endpoints_csv, write_trace_csv, RunManifest, StepTrace};

#[derive(Debug, Parser)]
#[command(
    name = "erkguid",
    version,
    about = "Stiffness-aware guidance studies on analytic probability-flow ODEs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Batch sampling under any solver and guidance configuration.
    Sample(SampleArgs),
    /// Estimator-fidelity and error-alignment CSVs.
    Align(AlignArgs),
    /// Stiffness heatmap over the mode region (CSV + SVG raster).
    Heatmap(HeatmapArgs),
    /// Eigenbasis concentration of the local error at the stiffest grid point.
    LteTable(LteTableArgs),
    /// Endpoint-error grid over (w_stiff, w_con).
    Sweep(SweepArgs),
    /// Convergence-order slopes against a fine reference.
    Converge(ConvergeArgs),
    /// Adaptive-halving and predictor-corrector baselines.
    Baseline(BaselineArgs),
    /// Endpoint-error comparison across the scaling variants.
    AblateScaling(AblateArgs),
}

/// Flags shared by every subcommand. Each is optional: unset flags fall back
/// to the `--config` file (when given), then to built-in defaults.
#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// Number of sampling steps N (the schedule has N+1 levels plus zero).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    sigma_min: Option<f64>,
    #[arg(long)]
    sigma_max: Option<f64>,
    /// Schedule warp exponent.
    #[arg(long)]
    rho_exp: Option<f64>,
    #[arg(long, value_enum)]
    solver: Option<SolverKind>,
    #[arg(long, value_enum)]
    guide: Option<GuideMode>,
    /// Model-guidance weight for cfg/ag style field combination.
    #[arg(long)]
    w: Option<f64>,
    /// Stiffness-guidance strength.
    #[arg(long)]
    w_stiff: Option<f64>,
    /// Confidence gate threshold on the stiffness estimate.
    #[arg(long)]
    w_con: Option<f64>,
    #[arg(long, value_enum)]
    scaling: Option<ScalingKind>,
    /// Master seed; all randomness derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trajectories.
    #[arg(long)]
    count: Option<usize>,
    /// Worker threads (0 = library default); results never depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Class label selecting the conditional sub-mixture for cfg modes.
    #[arg(long)]
    class: Option<u32>,
    #[arg(long)]
    degrade_jitter: Option<f64>,
    #[arg(long)]
    degrade_inflation: Option<f64>,
    #[arg(long)]
    degrade_seed: Option<u64>,
    #[arg(long)]
    tree_branches: Option<usize>,
    #[arg(long)]
    tree_modes: Option<usize>,
    #[arg(long)]
    tree_mode_std: Option<f64>,
    /// Branching half-angle of the tree mixture, degrees.
    #[arg(long)]
    tree_angle: Option<f64>,
    /// Output directory (created if missing; files are overwritten).
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON config file; a previous run's manifest.json also works.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl CommonArgs {
    /// Resolve flags > config file > defaults into a validated [`RunConfig`]
    /// plus the output directory.
    pub fn resolve(&self, subcommand: &str) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig::default(),
        };
        macro_rules! overlay {
            ($($field:ident),* $(,)?) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        overlay!(
            steps, sigma_min, sigma_max, rho_exp, solver, guide, w, w_stiff, w_con, scaling,
            seed, count, jobs, class, degrade_jitter, degrade_inflation, degrade_seed,
            tree_branches, tree_modes, tree_mode_std, tree_angle,
        );
        cfg.validate()?;
        let out = self
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(subcommand));
        Ok((cfg, out))
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trajectories to harvest pairs from.
    #[arg(long, default_value_t = 64)]
    trajs: usize,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Schedule index anchoring the noise level.
    #[arg(long, default_value_t = 29)]
    sigma_index: usize,
    /// Cells per axis.
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    /// Padding around the mode bounding box.
    #[arg(long, default_value_t = 0.15)]
    margin: f64,
}

#[derive(Debug, Args)]
pub struct LteTableArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Schedule index of the measured step.
    #[arg(long, default_value_t = 29)]
    sigma_index: usize,
    /// Detection grid resolution over the branch-gap strip.
    #[arg(long, default_value_t = 48)]
    resolution: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated w_stiff values.
    #[arg(long, value_delimiter = ',')]
    w_stiff_list: Option<Vec<f64>>,
    /// Comma-separated w_con values.
    #[arg(long, value_delimiter = ',')]
    w_con_list: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated uniform grid sizes (each should double the last).
    #[arg(long, value_delimiter = ',')]
    grids: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineMode {
    Adaptive,
    Pc,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum, default_value_t = BaselineMode::Adaptive)]
    mode: BaselineMode,
    /// Stiffness threshold triggering step halving (adaptive mode).
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Corrector signal-to-noise ratio (pc mode); 0 disables correction.
    #[arg(long, default_value_t = 0.1)]
    r: f64,
    /// Langevin-style stochastic corrector instead of the deterministic one.
    #[arg(long)]
    stochastic: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_delimiter = ',')]
    w_stiff_list: Option<Vec<f64>>,
}

const DEFAULT_W_STIFF_LIST: [f64; 5] = [0.0, 0.5, 0.75, 1.0, 1.5];

fn scaling_name(s: ScalingKind) -> &'static str {
    match s {
        ScalingKind::Alpha => "alpha",
        ScalingKind::Quadratic => "quad",
        ScalingKind::Abs => "abs",
    }
}

/// Entry point: parse `argv`, run, and map the outcome to an exit status.
/// Errors are a single line on standard error.
pub fn run(argv: &[String]) -> ExitCode {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let line = rendered
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            eprintln!("{line}");
            return ExitCode::from(2);
        }
    };
    let recorded: Vec<String> = argv.iter().skip(1).cloned().collect();
    match dispatch(&cli.command, &recorded) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: &Command, argv: &[String]) -> Result<()> {
    match cmd {
        Command::Sample(a) => cmd_sample(a, argv),
        Command::Align(a) => cmd_align(a, argv),
        Command::Heatmap(a) => cmd_heatmap(a, argv),
        Command::LteTable(a) => cmd_lte_table(a, argv),
        Command::Sweep(a) => cmd_sweep(a, argv),
        Command::Converge(a) => cmd_converge(a, argv),
        Command::Baseline(a) => cmd_baseline(a, argv),
        Command::AblateScaling(a) => cmd_ablate(a, argv),
    }
}

fn build_field(cfg: &RunConfig) -> Result<GaussianMixture> {
    build_tree_gmm(cfg.tree_branches, cfg.tree_modes, cfg.tree_mode_std, cfg.tree_angle)
}

fn build_schedule(cfg: &RunConfig) -> Result<Schedule> {
    build_edm_schedule(cfg.steps, cfg.sigma_min, cfg.sigma_max, cfg.rho_exp)
}

/// The (main, guiding) field pairing behind cfg/ag style modes.
fn field_pairing(cfg: &RunConfig, tree: &GaussianMixture) -> Result<(GaussianMixture, GaussianMixture)> {
    if cfg.guide.uses_degraded() {
        let degraded = build_degraded_field(
            tree,
            cfg.degrade_jitter,
            cfg.degrade_inflation,
            cfg.degrade_seed,
        )?;
        Ok((tree.clone(), degraded))
    } else {
        Ok((conditional_field(tree, cfg.class)?, tree.clone()))
    }
}

fn guidance_of(cfg: &RunConfig) -> GuidanceConfig {
    GuidanceConfig {
        w_stiff: cfg.w_stiff,
        w_con: cfg.w_con,
        scaling: cfg.scaling,
        enabled: cfg.guide.uses_correction(),
    }
}

/// Run a batch exactly as the resolved config describes; returns the results
/// plus the hash of the integrated field.
fn run_configured_batch(
    cfg: &RunConfig,
    tree: &GaussianMixture,
    schedule: &Schedule,
) -> Result<(Vec<TrajectoryResult>, u64)> {
    if !cfg.guide.uses_field_pair() {
        let plan = SamplerPlan {
            field: tree,
            schedule,
            solver: cfg.solver,
            guidance: guidance_of(cfg),
        };
        let results = sample_batch(&plan, cfg.seed, cfg.count, cfg.jobs)?;
        return Ok((results, field_hash(tree)));
    }
    let (main, guide) = field_pairing(cfg, tree)?;
    let combined = CombinedDrift { main: &main, guide: &guide, w: cfg.w };
    let hash = field_hash(&combined);
    let results = if cfg.guide == GuideMode::ErkProj {
        let plan = ProjPlan {
            main: &main,
            guide: &guide,
            schedule,
            cfg: ERKProjConfig { w: cfg.w, w_stiff: cfg.w_stiff },
        };
        sample_projected_batch(&plan, cfg.seed, cfg.count, cfg.jobs)?
    } else {
        let plan = SamplerPlan {
            field: &combined,
            schedule,
            solver: cfg.solver,
            guidance: guidance_of(cfg),
        };
        sample_batch(&plan, cfg.seed, cfg.count, cfg.jobs)?
    };
    Ok((results, hash))
}

fn write_manifest(out: &Path, argv: &[String], cfg: &RunConfig, hash: u64) -> Result<()> {
    RunManifest::new(argv.to_vec(), cfg.clone(), hash).write(&out.join("manifest.json"))
}

fn write_batch_artifacts(out: &Path, results: &[TrajectoryResult]) -> Result<()> {
    let rows: Vec<StepTrace> = results.iter().flat_map(|r| r.trace.iter().cloned()).collect();
    write_trace_csv(&out.join("trace.csv"), &rows)?;
    let endpoints: Vec<StateVector> = results.iter().map(|r| r.final_x.clone()).collect();
    write_endpoints_csv(&out.join("endpoints.csv"), &endpoints)
}

fn cmd_sample(args: &SampleArgs, argv: &[String]) -> Result<()> {
    let (cfg, out) = args.common.resolve("sample")?;
    std::fs::create_dir_all(&out)?;
    let tree = build_field(&cfg)?;
    let schedule = build_schedule(&cfg)?;
    let (results, hash) = run_configured_batch(&cfg, &tree, &schedule)?;
    write_batch_artifacts(&out, &results)?;
    write_manifest(&out, argv, &cfg, hash)?;
    println!(
        "sample: {} trajectories, {} evaluations each -> {}",
        results.len(),
        results.first().map(|r| r.nfe).unwrap_or(0),
        out.display()
    );
    Ok(())
}

fn write_bins_csv(path: &Path, sections: &[(&str, &[BinSummary])]) -> Result<()> {
    use std::io::Write as _;
    let mut outf = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(outf, "quantity,lo,hi,count,median_cos,sufficient")?;
    for (name, bins) in sections {
        for b in *bins {
            writeln!(
                outf,
                "{},{},{},{},{},{}",
                name, b.lo, b.hi, b.count, b.median_cos, b.sufficient as u8
            )?;
        }
    }
    outf.flush()?;
    Ok(())
}

fn cmd_align(args: &AlignArgs, argv: &[String]) -> Result<()> {
    let (cfg, out) = args.common.resolve("align")?;
    std::fs::create_dir_all(&out)?;
    let tree = build_field(&cfg)?;
    let schedule = build_schedule(&cfg)?;
    let pairs = collect_pair_samples(&tree, &schedule, cfg.solver, cfg.seed, args.trajs, cfg.jobs)?;
    write_pair_samples_csv(&out.join("pairs.csv"), &pairs)?;
    let vhat: Vec<(f64, f64)> = pairs.iter().map(|p| (p.rho_oracle, p.cos_vhat_oracle)).collect();
    let dx: Vec<(f64, f64)> = pairs.iter().map(|p| (p.rho_oracle, p.cos_dx_oracle)).collect();
    write_bins_csv(
        &out.join("pair_bins.csv"),
        &[
            ("cos_vhat_oracle", &alignment_by_stiffness_bins(&vhat, None)),
            ("cos_dx_oracle", &alignment_by_stiffness_bins(&dx, None)),
        ],
    )?;
    // Local-error alignment is defined on the embedded Heun pair.
    let ltes = collect_lte_samples(&tree, &schedule, cfg.seed, args.trajs, cfg.jobs)?;
    let lte_cos: Vec<(f64, f64)> = ltes.iter().map(|s| (s.rho_oracle, s.cos_lte)).collect();
    let dx_cos: Vec<(f64, f64)> = ltes.iter().map(|s| (s.rho_oracle, s.cos_dx)).collect();
    write_bins_csv(
        &out.join("lte_bins.csv"),
        &[
            ("cos_lte_oracle", &alignment_by_stiffness_bins(&lte_cos, None)),
            ("cos_dx_oracle", &alignment_by_stiffness_bins(&dx_cos, None)),
        ],
    )?;
    write_manifest(&out, argv, &cfg, field_hash(&tree))?;
    println!(
        "align: {} pair samples, {} error samples -> {}",
        pairs.len(),
        ltes.len(),
        out.display()
    );
    Ok(())
}

fn anchored_sigma(schedule: &Schedule, index: usize) -> Result<f64> {
    schedule
        .sigmas
        .get(index)
        .copied()
        .ok_or_else(|| Error::config(format!("sigma index {index} outside the schedule")))
}

fn cmd_heatmap(args: &HeatmapArgs, argv: &[String]) -> Result<()> {
    let (cfg, out) = args.common.resolve("heatmap")?;
    std::fs::create_dir_all(&out)?;
    let tree = build_field(&cfg)?;
    let schedule = build_schedule(&cfg)?;
    let sigma = anchored_sigma(&schedule, args.sigma_index)?;
    let window = mode_bounding_window(&tree, args.margin)?;
    let map = stiffness_heatmap(&tree, sigma, window, args.resolution, args.resolution)?;
    map.write_csv(&out.join("heatmap.csv"))?;
    map.write_svg(&out.join("heatmap.svg"))?;
    write_manifest(&out, argv, &cfg, field_hash(&tree))?;
    let (_, _, point, value) = map.argmax();
    println!(
        "heatmap: sigma={sigma} stiffest cell ({}, {}) value {value} -> {}",
        point[0],
        point[1],
        out.display()
    );
    Ok(())
}

fn cmd_lte_table(args: &LteTableArgs, argv: &[String]) -> Result<()> {
    use std::io::Write as _;
    let (cfg, out) = args.common.resolve("lte-table")?;
    std::fs::create_dir_all(&out)?;
    let tree = build_field(&cfg)?;
    let schedule = build_schedule(&cfg)?;
    let sigma_i = anchored_sigma(&schedule, args.sigma_index)?;
    let sigma_next = anchored_sigma(&schedule, args.sigma_index + 1)?;
    // Probe the drift the config describes: the plain mixture, or the
    // model-guided combination for cfg/ag style modes.
    let pairing = if cfg.guide.uses_field_pair() { Some(field_pairing(&cfg, &tree)?) } else { None };
    let combined = pairing
        .as_ref()
        .map(|(main, guide)| CombinedDrift { main, guide, w: cfg.w });
    let field: &dyn ScoreField = match &combined {
        Some(c) => c,
        None => &tree,
    };
    // The probe point is detected inside the stiff region — the low-density
    // gap between the diverging branches — not over the full map, whose
    // maxima sit on far-field basin boundaries with vanishing density.
    let strips = tree_probe_strips(
        cfg.tree_branches,
        cfg.tree_modes,
        cfg.tree_mode_std,
        cfg.tree_angle,
    )?;
    let map = stiffness_heatmap(field, sigma_i, strips.gap, args.resolution, args.resolution)?;
    let (_, _, x_star, _) = map.argmax();

    let lte = compute_lte(field, &x_star, sigma_i, sigma_next, SolverKind::Heun)?;
    let step = heun_step(field, &x_star, sigma_i, sigma_next, None);
    let pending = step.pending.expect("non-terminal step leaves a pending pair");
    let dx = &pending.x_high - &pending.x_low;

    let mut outf = std::io::BufWriter::new(std::fs::File::create(out.join("lte_table.csv"))?);
    writeln!(outf, "quantity,lambda_dominant,coeff_dominant,coeff_subdominant,ratio")?;
    let mut ratios = Vec::new();
    for (name, vec) in [("lte", &lte), ("dx", &dx)] {
        let coeffs = project_onto_eigenbasis(field, &x_star, sigma_i, vec)?;
        let dom = coeffs[0].1.abs();
        let sub = coeffs[1..].iter().map(|(_, c)| c.abs()).fold(0.0_f64, f64::max);
        let ratio = concentration_ratio(&coeffs);
        writeln!(outf, "{},{},{},{},{}", name, coeffs[0].0, dom, sub, ratio)?;
        ratios.push((name, ratio));
    }
    outf.flush()?;
    drop(outf);
    write_manifest(&out, argv, &cfg, field_hash(field))?;
    println!(
        "lte-table: at ({}, {}) sigma {sigma_i}->{sigma_next}: {} -> {}",
        x_star[0],
        x_star[1],
        ratios
            .iter()
            .map(|(n, r)| format!("{n} ratio {r:.2}"))
            .collect::<Vec<_>>()
            .join(", "),
        out.display()
    );
    Ok(())
}

fn sweep_grid(args_w_stiff: &Option<Vec<f64>>, args_w_con: &Option<Vec<f64>>, cfg: &RunConfig) -> Vec<(f64, f64)> {
    let ws = args_w_stiff.clone().unwrap_or_else(|| DEFAULT_W_STIFF_LIST.to_vec());
    let wc = args_w_con.clone().unwrap_or_else(|| vec![cfg.w_con]);
    let mut grid = Vec::with_capacity(ws.len() * wc.len());
    for &c in &wc {
        for &s in &ws {
            grid.push((s, c));
        }
    }
    grid
}

fn cmd_sweep(args: &SweepArgs, argv: &[String]) -> Result<()> {
    let (cfg, out) = args.common.resolve("sweep")?;
    std::fs::create_dir_all(&out)?;
    let tree = build_field(&cfg)?;
    let schedule = build_schedule(&cfg)?;
    let grid = sweep_grid(&args.w_stiff_list, &args.w_con_list, &cfg);
    let base = GuidanceConfig { scaling: cfg.scaling, ..Default::default() };
    let rows = endpoint_error_study(
        &tree, &schedule, cfg.solver, &base, &grid, cfg.seed, cfg.count, cfg.jobs,
    )?;
    write_sweep_csv(&out.join("sweep.csv"), &rows)?;
    write_manifest(&out, argv, &cfg, field_hash(&tree))?;
    let best = rows
        .iter()
        .min_by(|a, b| a.median_error.partial_cmp(&b.median_error).unwrap())
        .expect("non-empty sweep");
    println!(
        "sweep: {} configurations, best median error {} at w_stiff={} w_con={} -> {}",
        rows.len(),
        best.median_error,
        best.w_stiff,
        best.w_con,
        out.display()
    );
    Ok(())
}

fn convergence_fixture() -> Result<(GaussianMixture, StateVector)> {
    let gm = GaussianMixture::new(vec![MixtureComponent {
        weight: 1.0,
        mean: vec![0.0, 0.0],
        std: 1.0,
        label: None,
    }])?;
    Ok((gm, StateVector::from_column_slice(&[1.5, 0.5])))
}

fn cmd_converge(args: &ConvergeArgs, argv: &[String]) -> Result<()> {
    use std::io::Write as _;
    let (cfg, out) = args.common.resolve("converge")?;
    std::fs::create_dir_all(&out)?;
    let grids = args.grids.clone().unwrap_or_else(|| vec![8, 16, 32, 64]);
    let (gm, x0) = convergence_fixture()?;
    let (points, slope) =
        estimate_convergence_order(&gm, cfg.solver, &x0, 3.0, 1.0, &grids, 50)?;
    let mut outf = std::io::BufWriter::new(std::fs::File::create(out.join("converge.csv"))?);
    writeln!(outf, "n_steps,h,error")?;
    for p in &points {
        writeln!(outf, "{},{},{}", p.n_steps, p.h, p.error)?;
    }
    outf.flush()?;
    drop(outf);
    let mut orderf = std::io::BufWriter::new(std::fs::File::create(out.join("order.csv"))?);
    writeln!(orderf, "solver,slope")?;
    writeln!(orderf, "{:?},{}", cfg.solver, slope)?;
    orderf.flush()?;
    drop(orderf);
    write_manifest(&out, argv, &cfg, field_hash(&gm))?;
    println!("converge: {:?} slope {slope} -> {}", cfg.solver, out.display());
    Ok(())
}

fn cmd_baseline(args: &BaselineArgs, argv: &[String]) -> Result<()> {
    let (cfg, out) = args.common.resolve("baseline")?;
    if cfg.solver != SolverKind::Heun {
        return Err(Error::config("baselines are built on the heun solver"));
    }
    std::fs::create_dir_all(&out)?;
    let tree = build_field(&cfg)?;
    let schedule = build_schedule(&cfg)?;
    let results = match args.mode {
        BaselineMode::Adaptive => crate::baselines::adaptive_batch(
            &tree, &schedule, args.tau, cfg.rho_exp, cfg.seed, cfg.count, cfg.jobs,
        )?,
        BaselineMode::Pc => {
            let pc = crate::baselines::PcConfig { r: args.r, stochastic: args.stochastic };
            crate::baselines::pc_batch(&tree, &schedule, &pc, cfg.seed, cfg.count, cfg.jobs)?
        }
    };
    write_batch_artifacts(&out, &results)?;
    write_manifest(&out, argv, &cfg, field_hash(&tree))?;
    let total_nfe: u64 = results.iter().map(|r| r.nfe).sum();
    println!(
        "baseline: {} trajectories, {} total evaluations -> {}",
        results.len(),
        total_nfe,
        out.display()
    );
    Ok(())
}

fn cmd_ablate(args: &AblateArgs, argv: &[String]) -> Result<()> {
    use std::io::Write as _;
    let (cfg, out) = args.common.resolve("ablate-scaling")?;
    std::fs::create_dir_all(&out)?;
    let tree = build_field(&cfg)?;
    let schedule = build_schedule(&cfg)?;
    let ws = args
        .w_stiff_list
        .clone()
        .unwrap_or_else(|| DEFAULT_W_STIFF_LIST.to_vec());
    let grid: Vec<(f64, f64)> = ws.iter().map(|&s| (s, cfg.w_con)).collect();
    let mut all: Vec<(ScalingKind, SweepRow)> = Vec::new();
    for scaling in [ScalingKind::Alpha, ScalingKind::Quadratic, ScalingKind::Abs] {
        let base = GuidanceConfig { scaling, ..Default::default() };
        let rows = endpoint_error_study(
            &tree, &schedule, cfg.solver, &base, &grid, cfg.seed, cfg.count, cfg.jobs,
        )?;
        all.extend(rows.into_iter().map(|r| (scaling, r)));
    }
    let mut outf = std::io::BufWriter::new(std::fs::File::create(out.join("ablate.csv"))?);
    writeln!(outf, "scaling,w_stiff,w_con,median_error,nfe")?;
    for (scaling, r) in &all {
        writeln!(
            outf,
            "{},{},{},{},{}",
            scaling_name(*scaling),
            r.w_stiff,
            r.w_con,
            r.median_error,
            r.nfe
        )?;
    }
    outf.flush()?;
    drop(outf);
    write_manifest(&out, argv, &cfg, field_hash(&tree))?;
    println!("ablate-scaling: {} rows -> {}", all.len(), out.display());
    Ok(())
}
