use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use splat_budget::allocator::{self, make_allocation_plan, Budget};
use splat_budget::compactor::{
    compact_scene, evaluate_against_full, summarize_metrics, CompactionConfig, CompactionMode,
    ScoreStrategy, ViewMetrics,
};
use splat_budget::importance::{build_importance_selection, ImportanceConfig, QuantileMode};
use splat_budget::io::{self, ply, Layout, SyntheticSpec};
use splat_budget::quality::{psnr, ssim, SSIM_WINDOW};
use splat_budget::renderer::rasterize;
use splat_budget::schedule::{rows_to_csv, schedule_rows, ScheduleConfig};
use splat_budget::Camera;

const THREADS_ENV: &str = "SPLAT_BUDGET_THREADS";

#[derive(Parser, Debug)]
#[command(name = "splat-budget", version, about = "Budgeted compaction of pixel-aligned Gaussian splatting scenes")]
#[command(args_override_self = true)]
struct Cli {
    /// key=value file supplying default flag values; explicit flags win
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene
    Synth(SynthArgs),
    /// Split a budget across views
    Allocate(AllocateArgs),
    /// Select a budgeted primitive set and write it as PLY
    Compact(CompactArgs),
    /// Render a PLY from one camera
    Render(RenderArgs),
    /// Compare rendered PNGs against ground truth by file name
    Eval(EvalArgs),
    /// Write per-view importance masks
    Mask(MaskArgs),
    /// Emit the budget sampling schedule as CSV
    Schedule(ScheduleArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    views: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "plane")]
    layout: Layout,
}

#[derive(Args, Debug)]
#[group(id = "budget_spec", required = true, multiple = false)]
struct BudgetArgs {
    /// Absolute primitive count K
    #[arg(long, allow_negative_numbers = true, group = "budget_spec")]
    budget: Option<i64>,
    /// Fraction of N*H*W, converted with floor
    #[arg(long, allow_negative_numbers = true, group = "budget_spec")]
    ratio: Option<f64>,
}

impl BudgetArgs {
    fn budget(&self) -> Budget {
        match (self.budget, self.ratio) {
            (Some(k), _) => Budget::Count(k),
            (None, Some(r)) => Budget::Ratio(r),
            (None, None) => unreachable!("clap enforces the budget group"),
        }
    }
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(long)]
    scene: PathBuf,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long, default_value_t = allocator::DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, default_value_t = allocator::DEFAULT_LOWFREQ_SIDE)]
    lowfreq_side: usize,
    /// Give every view the same importance
    #[arg(long)]
    uniform_rho: bool,
}

#[derive(Args, Debug)]
struct ImportanceArgs {
    #[arg(long, default_value = "literal")]
    quantile_mode: QuantileMode,
    #[arg(long, default_value_t = splat_budget::importance::DEFAULT_PATCH_SIZE)]
    patch_size: usize,
}

impl ImportanceArgs {
    fn config(&self) -> ImportanceConfig {
        ImportanceConfig {
            patch_size: self.patch_size,
            quantile_mode: self.quantile_mode,
        }
    }
}

#[derive(Args, Debug)]
struct AllocateArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// Write JSON here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompactArgs {
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    importance: ImportanceArgs,
    #[arg(long, default_value = "variation_x_opacity")]
    strategy: ScoreStrategy,
    /// Accepted for reproducible scripts; selection itself is deterministic
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    global_topk: bool,
    /// Replace the weakest selections with merged low-variation Gaussians
    #[arg(long)]
    merge: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Skip rendering-based metrics
    #[arg(long)]
    no_metrics: bool,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    ply: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Background as r,g,b in [0, 1]
    #[arg(long, default_value = "0,0,0")]
    background: Background,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    rendered: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MaskArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    ratio: f64,
    #[command(flatten)]
    importance: ImportanceArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    /// Take N*H*W from this scene
    #[arg(long, conflicts_with = "pool", required_unless_present = "pool")]
    scene: Option<PathBuf>,
    /// Explicit N*H*W
    #[arg(long)]
    pool: Option<u64>,
    #[arg(long, default_value_t = 16_000)]
    t_max: u64,
    #[arg(long, default_value_t = 0.05)]
    decay: f64,
    #[arg(long, default_value_t = 1000)]
    interval: u64,
    #[arg(long, default_value_t = 0.85)]
    k_start: f64,
    #[arg(long, default_value_t = 0.05)]
    k_floor: f64,
    #[arg(long, default_value_t = 0.95)]
    k_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug)]
struct Background([f64; 3]);

impl std::str::FromStr for Background {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
            .collect::<Result<_, _>>()?;
        match parts.as_slice() {
            [r, g, b] if parts.iter().all(|v| (0.0..=1.0).contains(v)) => Ok(Background([*r, *g, *b])),
            _ => Err(format!("expected r,g,b in [0, 1], got '{s}'")),
        }
    }
}

#[derive(Debug)]
enum CliError {
    Invalid(String),
    Internal(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Internal(m) => f.write_str(&m.replace('\n', " ")),
        }
    }
}

impl From<splat_budget::Error> for CliError {
    fn from(e: splat_budget::Error) -> Self {
        if e.is_invalid_input() {
            CliError::Invalid(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

fn internal(context: &str, e: impl fmt::Display) -> CliError {
    CliError::Internal(format!("{context}: {e}"))
}

type CliResult<T = ()> = Result<T, CliError>;

/// Splices `--key value` pairs from the config file right after the
/// subcommand, so explicit flags later on the line override them.
fn expand_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut path = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" {
            path = args.get(i + 1).cloned();
            break;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(OsString::from(p));
            break;
        }
        i += 1;
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", Path::new(&path).display())))?;
    let mut injected = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Invalid(format!("{}:{}: expected key=value", Path::new(&path).display(), n + 1))
        })?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        match value.trim() {
            "true" => injected.push(OsString::from(flag)),
            "false" => {}
            v => {
                injected.push(OsString::from(flag));
                injected.push(OsString::from(v));
            }
        }
    }
    let sub = args
        .iter()
        .enumerate()
        .skip(1)
        .position(|(_, a)| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 1);
    let Some(sub) = sub else { return Ok(args) };
    let mut out = args[..=sub].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[sub + 1..]);
    Ok(out)
}

fn emit(text: &str, out: Option<&Path>) -> CliResult {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| internal(&p.display().to_string(), e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| internal("stdout", e))
        }
    }
}

fn to_json(value: &impl serde::Serialize) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| internal("serializing JSON", e))
}

fn cmd_synth(a: &SynthArgs) -> CliResult {
    let spec = SyntheticSpec {
        views: a.views,
        height: a.height,
        width: a.width,
        seed: a.seed,
        layout: a.layout,
    };
    let manifest = io::generate_synthetic_scene(&spec, &a.out)?;
    log::info!("wrote {}", manifest.display());
    Ok(())
}

fn load_plan(p: &PlanArgs) -> CliResult<(splat_budget::Scene, splat_budget::AllocationPlan)> {
    let scene = io::read_scene(&p.scene)?;
    let plan = make_allocation_plan(&scene, p.budget.budget(), p.temperature, p.lowfreq_side, p.uniform_rho)?;
    Ok((scene, plan))
}

fn cmd_allocate(a: &AllocateArgs) -> CliResult {
    let (_, plan) = load_plan(&a.plan)?;
    emit(&to_json(&plan.report())?, a.out.as_deref())
}

fn cmd_compact(a: &CompactArgs) -> CliResult {
    let start = Instant::now();
    let (scene, plan) = load_plan(&a.plan)?;
    let config = CompactionConfig {
        strategy: a.strategy,
        mode: if a.merge { CompactionMode::SelectMerge } else { CompactionMode::Select },
        importance: a.importance.config(),
        global_topk: a.global_topk,
    };
    let mut out = compact_scene(&scene, &plan, &config)?;
    let degree = scene.views.iter().map(|v| v.gaussians.max_sh_degree()).max().unwrap_or(0);
    ply::write_gaussian_ply(&out.gaussians, &a.out, degree)?;
    if !a.no_metrics {
        let cameras: Vec<Camera> = scene.views.iter().map(|v| v.camera.clone()).collect();
        out.report.metrics = Some(evaluate_against_full(&scene.pooled_gaussians(), &out.gaussians, &cameras)?);
    }
    out.report.wall_time_s = start.elapsed().as_secs_f64();
    emit(&to_json(&out.report)?, Some(&a.report))
}

fn cmd_render(a: &RenderArgs) -> CliResult {
    let set = ply::read_gaussian_ply(&a.ply)?;
    let camera = io::read_camera(&a.camera)?;
    io::write_png(&rasterize(&set, &camera, a.background.0), &a.out)?;
    Ok(())
}

fn png_names(dir: &Path) -> CliResult<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Invalid(format!("{}: {e}", dir.display())))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| internal(&dir.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn cmd_eval(a: &EvalArgs) -> CliResult {
    let names = png_names(&a.rendered)?;
    if names.is_empty() {
        return Err(CliError::Invalid(format!("no PNG files in {}", a.rendered.display())));
    }
    let mut per_view = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let gt_path = a.gt.join(name);
        if !gt_path.is_file() {
            return Err(CliError::Invalid(format!("{} has no counterpart {}", name, gt_path.display())));
        }
        let test = io::read_png(a.rendered.join(name))?;
        let gt = io::read_png(&gt_path)?;
        let small = test.width < SSIM_WINDOW || test.height < SSIM_WINDOW;
        per_view.push(ViewMetrics {
            view_id: i,
            psnr_db: psnr(&test, &gt)?,
            ssim: if small { None } else { Some(ssim(&test, &gt)?) },
        });
    }
    let metrics = summarize_metrics(per_view);
    let value = json!({ "files": names, "metrics": metrics });
    emit(&to_json(&value)?, a.out.as_deref())
}

fn cmd_mask(a: &MaskArgs) -> CliResult {
    let scene = io::read_scene(&a.scene)?;
    if !(a.ratio > 0.0 && a.ratio <= 1.0) {
        return Err(CliError::Invalid(format!("mask ratio {} outside (0, 1]", a.ratio)));
    }
    fs::create_dir_all(&a.out).map_err(|e| internal(&a.out.display().to_string(), e))?;
    let config = a.importance.config();
    let masks = {
        use rayon::prelude::*;
        scene
            .views
            .par_iter()
            .map(|v| build_importance_selection(v, a.ratio, &config).map(|s| s.mask))
            .collect::<Result<Vec<_>, _>>()?
    };
    for (i, mask) in masks.iter().enumerate() {
        io::write_mask_png(mask, a.out.join(format!("mask_{i:03}.png")))?;
    }
    Ok(())
}

fn cmd_schedule(a: &ScheduleArgs) -> CliResult {
    let pool = match (&a.scene, a.pool) {
        (Some(path), _) => io::read_scene(path)?.total_pool()?,
        (None, Some(p)) => p,
        (None, None) => unreachable!("clap requires scene or pool"),
    };
    let cfg = ScheduleConfig {
        total_pool: pool,
        k_max_frac: a.k_max,
        k_start_frac: a.k_start,
        k_floor_frac: a.k_floor,
        decay: a.decay,
        interval: a.interval,
        seed: a.seed,
    };
    let rows = schedule_rows(&cfg, a.t_max)?;
    emit(&rows_to_csv(&rows), a.out.as_deref())
}

fn configure_threads() -> CliResult {
    let Ok(value) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let threads: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::Invalid(format!("{THREADS_ENV}={value} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| internal("thread pool", e))
}

fn run(cli: Cli) -> CliResult {
    configure_threads()?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Allocate(a) => cmd_allocate(a),
        Command::Compact(a) => cmd_compact(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Mask(a) => cmd_mask(a),
        Command::Schedule(a) => cmd_schedule(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Invalid(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e @ CliError::Internal(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
