//! `rigcal` command line: simulate, refine, evaluate and ablate.
//!
//! Every command reads an optional JSON run config; flags given on the command
//! line override the file. Exit codes: 0 success, 2 usage/config/data error,
//! 3 degenerate optimization.

use crate::dataset::{self, CameraRig, DatasetError, EstimateFile};
use crate::geom::RigidTransform;
use crate::metrics::{self, CalibrationReport, MetricsError, Variant};
use crate::optimizer::{self, OptError, OptimizerConfig};
use crate::residuals::{ObjectiveConfig, ResidualError};
use crate::sim::{self, SimConfig, SimError};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;

/// Configuration shared by all commands, as read from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub objective: ObjectiveConfig,
    pub optimizer: OptimizerConfig,
}

impl RunConfig {
    /// Defaults when `path` is absent.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Degenerate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Degenerate(_) => EXIT_DEGENERATE,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ResidualError> for CliError {
    fn from(e: ResidualError) -> Self {
        match e {
            ResidualError::DegenerateProblem => CliError::Degenerate(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<OptError> for CliError {
    fn from(e: OptError) -> Self {
        match e {
            OptError::Residual(r) => r.into(),
            OptError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            OptError::SingularNormalEquations { .. } => CliError::Degenerate(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "rigcal",
    version,
    about = "Extrinsic refinement for multi-camera depth rigs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic rig with ground truth into a dataset directory.
    Simulate(SimulateArgs),
    /// Refine the dataset's initial extrinsics and write an estimate file.
    Refine(RefineArgs),
    /// Score an estimate (or the initial extrinsics) against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the original / no_rc / no_mc / full variants over several trials.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of depth noise and initial-extrinsic perturbation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of cameras in the circular layout.
    #[arg(long)]
    pub cameras: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the correspondence and cycle-point sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the cycle term (default 1.0).
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub max_inner: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output estimate JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Disable the reprojection (depth) consistency term.
    #[arg(long)]
    pub no_rc: bool,
    /// Disable the cycle consistency term.
    #[arg(long)]
    pub no_mc: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Estimate JSON; the dataset's initial extrinsics are scored when absent.
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
}

/// Parses `args` (program name first) and runs the command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = stdout.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command, writing its human-readable output to `out`.
pub fn execute(command: Command, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a, out),
        Command::Refine(a) => cmd_refine(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Ablate(a) => cmd_ablate(&a, out),
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Usage(format!("cannot write output: {e}"))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn emit(report: Option<&Path>, csv: &str, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match report {
        Some(p) => write_file(p, csv),
        None => out.write_all(csv.as_bytes()).map_err(io_err),
    }
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.config.as_deref())?.sim;
    if let Some(seed) = a.seed {
        cfg.noise.seed = seed;
    }
    if let Some(n) = a.cameras {
        cfg.layout.n_cameras = n;
    }
    let rig = sim::generate_dataset(&cfg.layout, &cfg.scene, &cfg.noise)?;
    dataset::save_rig(&rig, &a.out)?;
    let k = rig.intrinsics(0);
    let n = &cfg.noise;
    writeln!(
        out,
        "wrote {}\ncameras: {}\nresolution: {}x{}\ndepth_sigma_rel: {} (correlation {} px)\n\
         dropout_rate: {}\ninit perturbation: {} deg, {} m per axis\nseed: {}",
        a.out.display(),
        rig.len(),
        k.width,
        k.height,
        n.depth_sigma_rel,
        n.depth_noise_corr_px,
        n.dropout_rate,
        n.rot_perturb_deg,
        n.trans_perturb_m,
        n.seed
    )
    .map_err(io_err)
}

fn apply_solver_flags(cfg: &mut RunConfig, s: &SolverArgs) {
    if let Some(seed) = s.seed {
        cfg.objective.seed = seed;
    }
    if let Some(l) = s.lambda {
        cfg.objective.lambda = l;
    }
    if let Some(m) = s.max_outer {
        cfg.optimizer.max_outer_iters = m;
    }
    if let Some(m) = s.max_inner {
        cfg.optimizer.max_inner_iters = m;
    }
}

/// The objective and optimizer settings recorded in an estimate file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConfigEcho {
    objective: ObjectiveConfig,
    optimizer: OptimizerConfig,
}

fn losses_line(label: &str, l: &optimizer::Losses) -> String {
    format!(
        "{label}: L_geo={} L_cycle={} L={}",
        dataset::format_g17(l.l_geo),
        dataset::format_g17(l.l_cycle),
        dataset::format_g17(l.total)
    )
}

fn cmd_refine(a: &RefineArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.solver.config.as_deref())?;
    apply_solver_flags(&mut cfg, &a.solver);
    if a.no_rc {
        cfg.objective.enable_rc = false;
    }
    if a.no_mc {
        cfg.objective.enable_mc = false;
    }
    let rig = dataset::load_rig(&a.dataset)?;
    cfg.objective.validate(rig.len())?;
    let res = optimizer::refine(
        &rig,
        &rig.initial_extrinsics(),
        &cfg.objective,
        &cfg.optimizer,
    )?;
    let echo = ConfigEcho {
        objective: cfg.objective,
        optimizer: cfg.optimizer,
    };
    let est = EstimateFile {
        extrinsics: res.extrinsics.clone(),
        l_geo: res.final_losses.l_geo,
        l_cycle: res.final_losses.l_cycle,
        iterations: res.iterations,
        termination: res.termination.as_str().to_string(),
        config: serde_json::to_value(&echo).map_err(|e| CliError::Usage(e.to_string()))?,
    };
    dataset::save_estimate(&est, &a.out)?;
    writeln!(
        out,
        "{}\n{}\niterations: {} ({} outer)\ntermination: {}\nvalid blocks: geo {} cycle {}\nwrote {}",
        losses_line("initial", &res.initial),
        losses_line("final", &res.final_losses),
        res.iterations,
        res.outer_iterations,
        res.termination.as_str(),
        res.valid_blocks.0,
        res.valid_blocks.1,
        a.out.display()
    )
    .map_err(io_err)
}

fn ground_truth(rig: &CameraRig, dir: &Path) -> Result<Vec<RigidTransform>, CliError> {
    rig.ground_truth().ok_or_else(|| {
        CliError::Usage(format!(
            "dataset {} has no gt_extrinsic for every camera; without ground truth only loss values can be evaluated",
            dir.display()
        ))
    })
}

fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let rig = dataset::load_rig(&a.dataset)?;
    let gt = ground_truth(&rig, &a.dataset)?;
    let gauge = 0;
    let report = match &a.estimate {
        None => CalibrationReport::new(
            Variant::Original,
            0,
            &rig.initial_extrinsics(),
            &gt,
            gauge,
            (0.0, 0.0),
        )?,
        Some(p) => {
            let est = dataset::load_estimate(p)?;
            est.check_camera_count(rig.len())?;
            let echo: Option<ConfigEcho> = serde_json::from_value(est.config.clone()).ok();
            let (variant, seed, gauge) = match &echo {
                Some(c) => (
                    Variant::from_toggles(c.objective.enable_rc, c.objective.enable_mc),
                    c.objective.seed,
                    c.optimizer.gauge_camera,
                ),
                None => (Variant::Full, 0, gauge),
            };
            CalibrationReport::new(
                variant,
                seed,
                &est.extrinsics,
                &gt,
                gauge,
                (est.l_geo, est.l_cycle),
            )?
        }
    };
    emit(a.report.as_deref(), &report.to_csv(), out)
}

fn cmd_ablate(a: &AblateArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    if a.trials == 0 {
        return Err(CliError::Usage("--trials must be >= 1".into()));
    }
    let mut cfg = RunConfig::load(a.solver.config.as_deref())?;
    apply_solver_flags(&mut cfg, &a.solver);
    let rig = dataset::load_rig(&a.dataset)?;
    let gt = ground_truth(&rig, &a.dataset)?;
    let gauge = cfg.optimizer.gauge_camera;
    let base_seed = cfg.objective.seed;
    let mut reports = Vec::new();
    for t in 0..a.trials as u64 {
        let seed = base_seed.wrapping_add(t);
        let noise = sim::NoiseModel {
            seed,
            ..cfg.sim.noise
        };
        let init = sim::perturb_extrinsics(&gt, &noise);
        let trial_rig = rig.with_initial_extrinsics(&init)?;
        reports.push(CalibrationReport::new(
            Variant::Original,
            seed,
            &init,
            &gt,
            gauge,
            (0.0, 0.0),
        )?);
        for variant in [Variant::NoRc, Variant::NoMc, Variant::Full] {
            let objective = ObjectiveConfig {
                enable_rc: variant != Variant::NoRc,
                enable_mc: variant != Variant::NoMc,
                seed,
                ..cfg.objective.clone()
            };
            let res = optimizer::refine(&trial_rig, &init, &objective, &cfg.optimizer)?;
            let losses = (res.final_losses.l_geo, res.final_losses.l_cycle);
            reports.push(CalibrationReport::new(
                variant,
                seed,
                &res.extrinsics,
                &gt,
                gauge,
                losses,
            )?);
        }
    }
    let summary = metrics::ablation_summary(&reports, &Variant::ALL)?;
    for s in &summary {
        eprintln!(
            "{}: mean rot {} deg, mean trans {} mm over {} trials",
            s.variant.label(),
            s.mean_rot_deg,
            s.mean_trans_mm,
            s.reports
        );
    }
    emit(
        a.report.as_deref(),
        &metrics::ablation_csv(&reports, &summary),
        out,
    )
}
