//! Command-line front end: each subcommand drives one verifiable claim of
//! the model (simulation, Monte Carlo campaigns, flow integration,
//! pseudotrajectory gaps, spectra, derivative-sign scans, appendix
//! inequality verification) and emits seeded, reproducible CSV/JSONL
//! reports.
//!
//! Exit codes: 0 = all checks passed, 1 = checks ran and found violations
//! (reports are still written), 2 = usage or configuration error.

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reinforced_walk::flow::{self, FlowConfig};
use reinforced_walk::interp::{self, InterpolatedPath};
use reinforced_walk::model::{joint_support, Params, ProductPoint};
use reinforced_walk::oracles::{self, GridSpec};
use reinforced_walk::spectra;
use reinforced_walk::walk::{self, RunOptions};
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "reinforced-walk", version, about = "Two-particle vertex-repelling walk: simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Flat key=value configuration file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for all report files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (also REINFORCE_WALK_WORKERS). Never changes any
    /// emitted numeric value.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Vertex count of the complete graph.
    #[arg(long, global = true)]
    d: Option<usize>,

    /// Reinforcement exponent.
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Weight floor (0 < delta < 1/d).
    #[arg(long, global = true)]
    delta: Option<f64>,

    /// Occupation-measure normalization offset (defaults to d).
    #[arg(long, global = true)]
    n0: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run one chain and dump the trajectory plus a summary row.
    Simulate(SimulateArgs),
    /// Monte Carlo campaign over seeds: trapping and near-uniform rates.
    Mc(McArgs),
    /// Integrate the mean-field flow and estimate omega-limit points.
    Flow(FlowArgs),
    /// Pseudotrajectory gaps against the flow at selected steps.
    Gap(GapArgs),
    /// Spectrum of the linearization at the uniform pair and of the
    /// appendix Hessian matrices.
    Spectrum(SpectrumArgs),
    /// Deterministic product-lattice scan of dH/dt.
    LyapunovScan(LyapunovScanArgs),
    /// Brute-force verification of the appendix inequalities.
    VerifyAppendix(VerifyAppendixArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Record every k-th step (step 0 and the final step always).
    #[arg(long)]
    thinning: Option<u64>,
    #[arg(long)]
    tail_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct McArgs {
    #[arg(long)]
    runs: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Base seed; run k uses base_seed + k.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    thinning: Option<u64>,
    #[arg(long)]
    tail_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct FlowArgs {
    /// Number of random interior starts (seeded); the first trajectory is
    /// dumped.
    #[arg(long)]
    starts: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    flow_step: Option<f64>,
    #[arg(long)]
    flow_time: Option<f64>,
    #[arg(long)]
    tail_fraction: Option<f64>,
    /// Start from the uniform pair instead of random points.
    #[arg(long)]
    from_uniform: bool,
}

#[derive(Args, Debug)]
struct GapArgs {
    /// Steps at which the gap is measured, e.g. --at 1000,10000.
    #[arg(long, value_delimiter = ',')]
    at: Option<Vec<u64>>,
    /// Gap horizon T (the noise window uses T+1).
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Chain length; computed from the largest --at when omitted.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    flow_step: Option<f64>,
}

#[derive(Args, Debug)]
struct SpectrumArgs {}

#[derive(Args, Debug)]
struct LyapunovScanArgs {
    #[arg(long)]
    resolution: Option<u32>,
    #[arg(long)]
    grid_floor: Option<f64>,
    /// Scan the whole lattice instead of {H >= (3/2) d^(1/(a+1)) delta}.
    #[arg(long)]
    no_threshold: bool,
}

#[derive(Args, Debug)]
struct VerifyAppendixArgs {
    #[arg(long)]
    resolution: Option<u32>,
    #[arg(long)]
    grid_floor: Option<f64>,
    /// Far-from-uniform regime parameter (0 < kappa < 1).
    #[arg(long)]
    kappa: Option<f64>,
    /// Random samples per sampling sweep.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also dump every (u, v, margin) row of the master-inequality scan.
    #[arg(long)]
    dump_margins: bool,
}

/// Post-parse failures that must map to exit code 2.
#[derive(Debug)]
struct ConfigError(String);

/// Runtime failures and violations map to exit code 1.
#[derive(Debug)]
struct RunError(String);

impl From<reinforced_walk::Error> for RunError {
    fn from(e: reinforced_walk::Error) -> Self {
        RunError(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError(format!("i/o failure: {e}"))
    }
}

const CONFIG_KEYS: &[&str] = &[
    "d",
    "alpha",
    "delta",
    "n0",
    "out",
    "workers",
    "steps",
    "seed",
    "thinning",
    "tail_fraction",
    "runs",
    "starts",
    "flow_step",
    "flow_time",
    "from_uniform",
    "at",
    "horizon",
    "resolution",
    "grid_floor",
    "no_threshold",
    "kappa",
    "samples",
    "dump_margins",
];

fn load_config_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {}: expected key=value", lineno + 1)))?;
        let key = key.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(ConfigError(format!("line {}: unknown key '{key}'", lineno + 1)));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

struct Resolver {
    file: BTreeMap<String, String>,
}

impl Resolver {
    fn get<T: std::str::FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, ConfigError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|_| ConfigError(format!("config key '{key}': cannot parse '{raw}'"))),
            None => Ok(default),
        }
    }

    fn get_opt<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, ConfigError> {
        if let Some(v) = flag {
            return Ok(Some(v));
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| ConfigError(format!("config key '{key}': cannot parse '{raw}'"))),
            None => Ok(None),
        }
    }

    fn get_flag(&self, flag: bool, key: &str) -> Result<bool, ConfigError> {
        if flag {
            return Ok(true);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse::<bool>()
                .map_err(|_| ConfigError(format!("config key '{key}': cannot parse '{raw}'"))),
            None => Ok(false),
        }
    }
}

/// 17 significant digits; round-trips exactly.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

struct OutputContext {
    dir: PathBuf,
    header: Value,
}

impl OutputContext {
    fn new(dir: PathBuf, command: &str, seed: Option<u64>, config: Value) -> Result<Self, RunError> {
        std::fs::create_dir_all(&dir)?;
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let header = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "timestamp": timestamp,
            "config": config,
        });
        Ok(Self { dir, header })
    }

    fn write_csv(&self, name: &str, column_header: &str, rows: &[String]) -> Result<PathBuf, RunError> {
        let mut text = format!("# {}\n{column_header}\n", self.header);
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        let path = self.dir.join(name);
        write_atomic(&path, &text)?;
        Ok(path)
    }

    fn write_jsonl(&self, name: &str, lines: &[String]) -> Result<PathBuf, RunError> {
        let mut text = format!("{}\n", self.header);
        for l in lines {
            text.push_str(l);
            text.push('\n');
        }
        let path = self.dir.join(name);
        write_atomic(&path, &text)?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf, RunError> {
        let doc = json!({
            "header": self.header,
            "report": body,
        });
        let path = self.dir.join(name);
        write_atomic(&path, &serde_json::to_string_pretty(&doc).expect("serializable report"))?;
        Ok(path)
    }
}

fn summary_csv_row(s: &walk::RunSummary) -> String {
    format!(
        "{},{},{},{},{},{}",
        s.seed,
        s.n_steps,
        fmt_f64(s.final_h),
        s.trapped,
        fmt_f64(s.dist_to_uniform),
        fmt_opt(s.martingale_sup_tail)
    )
}

const SUMMARY_COLUMNS: &str = "seed,n_steps,final_H,trapped,dist_to_uniform,martingale_sup_tail";

fn trajectory_jsonl(t: &walk::Trajectory) -> Vec<String> {
    t.samples
        .iter()
        .map(|s| {
            json!({
                "n": s.n,
                "x": s.z.x().coords(),
                "y": s.z.y().coords(),
                "H": s.h,
                "in_s_delta": s.in_s_delta,
            })
            .to_string()
        })
        .collect()
}

fn cmd_simulate(params: Params, args: &SimulateArgs, r: &Resolver, out: PathBuf) -> Result<ExitCode, RunError> {
    let steps = r.get(args.steps, "steps", 100_000).map_err(cfg_to_run)?;
    let seed = r.get(args.seed, "seed", 0).map_err(cfg_to_run)?;
    let thinning = r.get(args.thinning, "thinning", 100).map_err(cfg_to_run)?;
    let tail_fraction = r.get(args.tail_fraction, "tail_fraction", 0.1).map_err(cfg_to_run)?;
    let opts = RunOptions {
        thinning,
        tail_fraction,
        ..RunOptions::default()
    };
    let (traj, summary) = walk::run(&params, steps, seed, &opts)?;
    let ctx = OutputContext::new(
        out,
        "simulate",
        Some(seed),
        json!({
            "params": params, "steps": steps, "seed": seed,
            "thinning": thinning, "tail_fraction": tail_fraction,
        }),
    )?;
    let p1 = ctx.write_jsonl("trajectory.jsonl", &trajectory_jsonl(&traj))?;
    let p2 = ctx.write_csv("summary.csv", SUMMARY_COLUMNS, &[summary_csv_row(&summary)])?;
    eprintln!("wrote {} and {}", p1.display(), p2.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_mc(params: Params, args: &McArgs, r: &Resolver, out: PathBuf) -> Result<ExitCode, RunError> {
    let runs = r.get(args.runs, "runs", 200).map_err(cfg_to_run)?;
    let steps = r.get(args.steps, "steps", 1_000_000).map_err(cfg_to_run)?;
    let seed = r.get(args.seed, "seed", 0).map_err(cfg_to_run)?;
    let thinning = r.get(args.thinning, "thinning", 1000).map_err(cfg_to_run)?;
    let tail_fraction = r.get(args.tail_fraction, "tail_fraction", 0.1).map_err(cfg_to_run)?;
    let opts = RunOptions {
        thinning,
        tail_fraction,
        ..RunOptions::default()
    };
    let rep = walk::monte_carlo(&params, runs, steps, seed, &opts)?;
    let ctx = OutputContext::new(
        out,
        "mc",
        Some(seed),
        json!({
            "params": params, "runs": runs, "steps": steps, "seed": seed,
            "thinning": thinning, "tail_fraction": tail_fraction,
        }),
    )?;
    let agg = format!(
        "{},{},{},{},{},{},{},{}",
        rep.runs,
        rep.n_steps,
        rep.base_seed,
        rep.trapped_count,
        fmt_f64(rep.trapped_rate),
        fmt_f64(rep.mean_final_h),
        rep.near_uniform_count,
        fmt_f64(rep.near_uniform_rate)
    );
    ctx.write_csv(
        "mc_summary.csv",
        "runs,n_steps,base_seed,trapped_count,trapped_rate,mean_final_H,near_uniform_count,near_uniform_rate",
        &[agg],
    )?;
    let rows: Vec<String> = rep.summaries.iter().map(summary_csv_row).collect();
    ctx.write_csv("mc_runs.csv", SUMMARY_COLUMNS, &rows)?;
    eprintln!(
        "mc: trapped {}/{} ({}), near-uniform rate {}",
        rep.trapped_count, rep.runs, rep.trapped_rate, rep.near_uniform_rate
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_flow(params: Params, args: &FlowArgs, r: &Resolver, out: PathBuf) -> Result<ExitCode, RunError> {
    let starts = r.get(args.starts, "starts", 1).map_err(cfg_to_run)?;
    let seed = r.get(args.seed, "seed", 0).map_err(cfg_to_run)?;
    let step = r.get(args.flow_step, "flow_step", 1e-3).map_err(cfg_to_run)?;
    let max_time = r.get(args.flow_time, "flow_time", 50.0).map_err(cfg_to_run)?;
    let tail_fraction = r.get(args.tail_fraction, "tail_fraction", 0.1).map_err(cfg_to_run)?;
    let from_uniform = r.get_flag(args.from_uniform, "from_uniform").map_err(cfg_to_run)?;
    if starts == 0 {
        return Err(RunError("starts must be >= 1".into()));
    }
    let cfg = FlowConfig {
        step,
        max_time,
        renormalize: true,
    };
    let d = params.d();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let ctx = OutputContext::new(
        out,
        "flow",
        Some(seed),
        json!({
            "params": params, "starts": starts, "seed": seed, "flow_step": step,
            "flow_time": max_time, "tail_fraction": tail_fraction, "from_uniform": from_uniform,
        }),
    )?;

    #[derive(Serialize)]
    struct OmegaOut {
        start_index: u64,
        start: ProductPoint,
        estimate: flow::OmegaEstimate,
    }
    let mut omegas = Vec::new();
    let mut dump_lines = Vec::new();
    for k in 0..starts {
        let z0 = if from_uniform {
            ProductPoint::uniform(d)
        } else {
            ProductPoint::new(
                oracles::sample_simplex(&mut rng, d),
                oracles::sample_simplex(&mut rng, d),
            )
            .expect("sampled start")
        };
        if k == 0 {
            let path = flow::trace(&z0, max_time, &cfg, &params)?;
            let stride = (path.len() / 2000).max(1);
            for (i, (t, z)) in path.iter().enumerate() {
                if i % stride == 0 || i + 1 == path.len() {
                    dump_lines.push(
                        json!({
                            "t": t,
                            "x": z.x().coords(),
                            "y": z.y().coords(),
                            "H": joint_support(z),
                        })
                        .to_string(),
                    );
                }
            }
        }
        let estimate = flow::omega_limit_estimate(&z0, &cfg, &params, tail_fraction)?;
        omegas.push(OmegaOut {
            start_index: k,
            start: z0,
            estimate,
        });
    }
    ctx.write_jsonl("flow_trajectory.jsonl", &dump_lines)?;
    ctx.write_json("omega.json", &omegas)?;
    eprintln!("flow: {starts} start(s) integrated to t={max_time}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_gap(params: Params, args: &GapArgs, r: &Resolver, out: PathBuf) -> Result<ExitCode, RunError> {
    let at = match (&args.at, r.file.get("at")) {
        (Some(v), _) => v.clone(),
        (None, Some(raw)) => raw
            .split(',')
            .map(|s| s.trim().parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| RunError(format!("config key 'at': cannot parse '{raw}'")))?,
        (None, None) => vec![1_000, 10_000],
    };
    if at.is_empty() || at.contains(&0) {
        return Err(RunError("--at needs positive step indices".into()));
    }
    let horizon = r.get(args.horizon, "horizon", 1.0).map_err(cfg_to_run)?;
    let seed = r.get(args.seed, "seed", 0).map_err(cfg_to_run)?;
    let flow_step = r.get(args.flow_step, "flow_step", 1e-3).map_err(cfg_to_run)?;
    let max_at = *at.iter().max().expect("nonempty");
    let window_hi = |n: u64| ((n + params.n0() + 1) as f64 * (horizon + 1.0).exp()).ceil() as u64 + 2;
    let auto_steps = window_hi(max_at);
    let steps = r.get(args.steps, "steps", auto_steps).map_err(cfg_to_run)?;
    if steps < auto_steps {
        return Err(RunError(format!(
            "steps = {steps} too short: the largest window needs {auto_steps}"
        )));
    }
    let opts = RunOptions {
        thinning: steps.max(2),
        windows: at.iter().map(|&n| (n, window_hi(n))).collect(),
        ..RunOptions::default()
    };
    let (traj, _) = walk::run(&params, steps, seed, &opts)?;
    let path = InterpolatedPath::new(&traj)?;
    let cfg = FlowConfig {
        step: flow_step,
        ..FlowConfig::default()
    };
    let mut rows = Vec::new();
    let mut all_bounds_hold = true;
    for &n in &at {
        let t = path.grid().tau(n)?;
        let rep = interp::gap_with_bound(&path, &cfg, t, horizon)?;
        all_bounds_hold &= rep.bound_holds;
        rows.push(format!(
            "{},{},{},{},{},{},{},{},{}",
            n,
            fmt_f64(rep.t),
            fmt_f64(rep.horizon),
            fmt_f64(rep.gap),
            fmt_f64(rep.eps_sup),
            fmt_f64(rep.lipschitz),
            fmt_f64(rep.sigma_end),
            fmt_f64(rep.bound),
            rep.bound_holds
        ));
    }
    let ctx = OutputContext::new(
        out,
        "gap",
        Some(seed),
        json!({
            "params": params, "at": at, "horizon": horizon, "seed": seed,
            "steps": steps, "flow_step": flow_step,
        }),
    )?;
    ctx.write_csv(
        "gap.csv",
        "n,t,horizon,gap,eps_sup,lipschitz,sigma_end,bound,bound_holds",
        &rows,
    )?;
    eprintln!("gap: measured at {} step(s)", at.len());
    Ok(if all_bounds_hold {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_spectrum(params: Params, _args: &SpectrumArgs, out: PathBuf) -> Result<ExitCode, RunError> {
    let jacobian = spectra::jacobian_spectrum(&params)?;
    let stability = spectra::classify_equilibrium(&params)?;
    let appendix = spectra::appendix_matrices(params.d(), params.alpha())?;
    #[derive(Serialize)]
    struct SpectrumOut {
        jacobian: spectra::SpectrumReport,
        stability: spectra::Stability,
        appendix_m: spectra::SpectrumReport,
        appendix_n: spectra::SpectrumReport,
        scaled_m_row_sum_max: f64,
    }
    let body = SpectrumOut {
        jacobian: jacobian.clone(),
        stability,
        appendix_m: appendix.m_spectrum.clone(),
        appendix_n: appendix.n_spectrum.clone(),
        scaled_m_row_sum_max: appendix.scaled_m_row_sum_max,
    };
    let ctx = OutputContext::new(out, "spectrum", None, json!({ "params": params }))?;
    ctx.write_json("spectrum.json", &body)?;
    let worst = jacobian
        .max_discrepancy
        .max(appendix.m_spectrum.max_discrepancy)
        .max(appendix.n_spectrum.max_discrepancy);
    eprintln!("spectrum: worst closed-form discrepancy {worst:e}");
    Ok(if worst <= 1e-10 && appendix.scaled_m_row_sum_max == 0.0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_lyapunov_scan(params: Params, args: &LyapunovScanArgs, r: &Resolver, out: PathBuf) -> Result<ExitCode, RunError> {
    let resolution = r.get(args.resolution, "resolution", 25).map_err(cfg_to_run)?;
    let grid_floor = r.get(args.grid_floor, "grid_floor", 0.005).map_err(cfg_to_run)?;
    let no_threshold = r.get_flag(args.no_threshold, "no_threshold").map_err(cfg_to_run)?;
    let grid = GridSpec::new(resolution, grid_floor)?;
    let threshold = if no_threshold { Some(0.0) } else { None };
    let rep = flow::lyapunov_scan(&params, &grid, threshold, false)?;
    let ctx = OutputContext::new(
        out,
        "lyapunov-scan",
        None,
        json!({
            "params": params, "resolution": resolution, "grid_floor": grid_floor,
            "no_threshold": no_threshold,
        }),
    )?;
    const ROW_DUMP_CAP: u64 = 1_000_000;
    if rep.pairs_in_region <= ROW_DUMP_CAP {
        let d = params.d();
        let mut cols = String::new();
        for i in 1..=d {
            write!(cols, "u_{i},").unwrap();
        }
        for i in 1..=d {
            write!(cols, "v_{i},").unwrap();
        }
        cols.push_str("H,dH_dt,case");
        let mut rows: Vec<String> = Vec::with_capacity(rep.pairs_in_region as usize);
        flow::lyapunov_scan_rows(&params, &grid, threshold, |row| {
            let mut line = String::new();
            for c in row.u.coords() {
                write!(line, "{},", fmt_f64(*c)).unwrap();
            }
            for c in row.v.coords() {
                write!(line, "{},", fmt_f64(*c)).unwrap();
            }
            write!(
                line,
                "{},{},{}",
                fmt_f64(row.h),
                fmt_f64(row.dh_dt),
                row.region.label()
            )
            .unwrap();
            rows.push(line);
        })?;
        ctx.write_csv("lyapunov_scan.csv", &cols, &rows)?;
    } else {
        eprintln!(
            "lyapunov-scan: {} rows exceed the dump cap of {ROW_DUMP_CAP}; writing the summary only",
            rep.pairs_in_region
        );
    }
    #[derive(Serialize)]
    struct ScanSummary<'a> {
        threshold: f64,
        lattice_points: usize,
        pairs_total: u64,
        pairs_in_region: u64,
        max_dh_dt: f64,
        min_neg_dh_dt: f64,
        argmax: &'a flow::ScanRow,
        argmax_l1_to_uniform: f64,
        lattice_min_l1_to_uniform: f64,
        argmax_is_nearest_uniform: bool,
        violation_count: u64,
        violations: &'a [flow::ScanRow],
    }
    ctx.write_json(
        "lyapunov_summary.json",
        &ScanSummary {
            threshold: rep.threshold,
            lattice_points: rep.lattice_points,
            pairs_total: rep.pairs_total,
            pairs_in_region: rep.pairs_in_region,
            max_dh_dt: rep.max_dh_dt,
            min_neg_dh_dt: -rep.max_dh_dt,
            argmax: &rep.argmax,
            argmax_l1_to_uniform: rep.argmax_l1_to_uniform,
            lattice_min_l1_to_uniform: rep.lattice_min_l1_to_uniform,
            argmax_is_nearest_uniform: rep.argmax_is_nearest_uniform,
            violation_count: rep.violation_count,
            violations: &rep.violations,
        },
    )?;
    eprintln!(
        "lyapunov-scan: {} pairs in region, max dH/dt = {:e}, {} violation(s)",
        rep.pairs_in_region, rep.max_dh_dt, rep.violation_count
    );
    Ok(if rep.violation_count == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

#[derive(Serialize)]
struct SweepSummary {
    samples: usize,
    violations: usize,
    worst_margin: f64,
}

fn cmd_verify_appendix(params: Params, args: &VerifyAppendixArgs, r: &Resolver, out: PathBuf) -> Result<ExitCode, RunError> {
    let resolution = r.get(args.resolution, "resolution", 25).map_err(cfg_to_run)?;
    let grid_floor = r.get(args.grid_floor, "grid_floor", 0.01).map_err(cfg_to_run)?;
    let kappa = r.get(args.kappa, "kappa", 0.9).map_err(cfg_to_run)?;
    let samples = r.get(args.samples, "samples", 100_000).map_err(cfg_to_run)?;
    let seed = r.get(args.seed, "seed", 0).map_err(cfg_to_run)?;
    let dump_margins = r.get_flag(args.dump_margins, "dump_margins").map_err(cfg_to_run)?;
    let d = params.d();
    let alpha = params.alpha();
    let grid = GridSpec::new(resolution, grid_floor)?;

    let prop_a1 = oracles::verify_prop_a1_grid(d, alpha, &grid)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::Rng;

    // generalized-mean bound sweep
    let mut mean_bound = SweepSummary {
        samples,
        violations: 0,
        worst_margin: f64::INFINITY,
    };
    for _ in 0..samples {
        let a: Vec<f64> = (0..d - 1)
            .map(|_| rng.random::<f64>().max(1e-12))
            .collect();
        let (f, b) = oracles::mean_bound_check(&a, alpha)?;
        let margin = b - f;
        mean_bound.worst_margin = mean_bound.worst_margin.min(margin);
        if margin <= 0.0 {
            mean_bound.violations += 1;
        }
    }

    // rearrangement bound sweep
    let mut rearrangement = SweepSummary {
        samples,
        violations: 0,
        worst_margin: f64::INFINITY,
    };
    for _ in 0..samples {
        let u = oracles::sample_simplex(&mut rng, d);
        let v = oracles::sample_simplex(&mut rng, d);
        let (lhs, rhs) = oracles::rearrangement_bound(&u, &v);
        let margin = lhs - rhs;
        rearrangement.worst_margin = rearrangement.worst_margin.min(margin);
        if margin < -1e-12 {
            rearrangement.violations += 1;
        }
    }

    // ratio monotonicity in alpha
    let mut monotonicity = SweepSummary {
        samples,
        violations: 0,
        worst_margin: f64::INFINITY,
    };
    let alphas = [alpha, alpha * 2.0, alpha * 5.0];
    for _ in 0..samples {
        let u = oracles::sample_simplex(&mut rng, d);
        if u.min_coord() < 1e-9 {
            continue;
        }
        let r0 = oracles::ratio(&u, alphas[0])?;
        let r1 = oracles::ratio(&u, alphas[1])?;
        let r2 = oracles::ratio(&u, alphas[2])?;
        let margin = (r0 - r1).min(r1 - r2);
        monotonicity.worst_margin = monotonicity.worst_margin.min(margin);
        if margin < -1e-12 {
            monotonicity.violations += 1;
        }
    }

    // near-uniform local minimum of g (the positivity claim applies only
    // above the Hessian threshold alpha > d-2)
    let g_applicable = alpha > d as f64 - 2.0;
    let local_min = oracles::local_min_probe(alpha, d, 0.05, samples.min(20_000), seed)?;

    // far-from-uniform regime sweep over points with a small coordinate
    let mut far_checked = 0usize;
    let mut far_not_applicable = 0usize;
    let mut far_violations = 0usize;
    let mut far_worst = f64::INFINITY;
    for _ in 0..samples {
        let mut coords = oracles::sample_simplex(&mut rng, d).coords().to_vec();
        let j = rng.random_range(0..d);
        coords[j] *= rng.random::<f64>() * kappa / d as f64;
        let s: f64 = coords.iter().sum();
        for c in coords.iter_mut() {
            *c /= s;
        }
        if coords.iter().any(|c| *c <= 0.0) {
            continue;
        }
        let u = reinforced_walk::SimplexPoint::new(coords).expect("normalized");
        match oracles::far_from_uniform_check(&u, alpha, kappa)? {
            oracles::FarFromUniformCheck::NotApplicable { .. } => far_not_applicable += 1,
            oracles::FarFromUniformCheck::Checked {
                main_margin,
                main_holds,
                intermediate_holds,
                ..
            } => {
                far_checked += 1;
                far_worst = far_worst.min(main_margin);
                if !main_holds || !intermediate_holds {
                    far_violations += 1;
                }
            }
        }
    }

    #[derive(Serialize)]
    struct AppendixReport {
        prop_a1: oracles::InequalityReport,
        mean_bound: SweepSummary,
        rearrangement: SweepSummary,
        ratio_alpha_monotonicity: SweepSummary,
        g_positivity_applicable: bool,
        g_local_min: oracles::LocalMinReport,
        far_from_uniform_checked: usize,
        far_from_uniform_not_applicable: usize,
        far_from_uniform_violations: usize,
        far_from_uniform_worst_margin: f64,
        violations_total: u64,
    }

    let g_violations = if g_applicable {
        local_min.negative_count as u64
    } else {
        0
    };
    let violations_total = prop_a1.violation_count
        + mean_bound.violations as u64
        + rearrangement.violations as u64
        + monotonicity.violations as u64
        + g_violations
        + far_violations as u64;

    let report = AppendixReport {
        prop_a1,
        mean_bound,
        rearrangement,
        ratio_alpha_monotonicity: monotonicity,
        g_positivity_applicable: g_applicable,
        g_local_min: local_min,
        far_from_uniform_checked: far_checked,
        far_from_uniform_not_applicable: far_not_applicable,
        far_from_uniform_violations: far_violations,
        far_from_uniform_worst_margin: far_worst,
        violations_total,
    };

    let ctx = OutputContext::new(
        out,
        "verify-appendix",
        Some(seed),
        json!({
            "params": params, "resolution": resolution, "grid_floor": grid_floor,
            "kappa": kappa, "samples": samples, "seed": seed, "dump_margins": dump_margins,
        }),
    )?;
    ctx.write_json("appendix_report.json", &report)?;
    if dump_margins {
        let mut rows = Vec::new();
        oracles::prop_a1_margin_rows(d, alpha, &grid, |u, v, margin| {
            let mut line = String::new();
            for c in u.coords() {
                write!(line, "{},", fmt_f64(*c)).unwrap();
            }
            for c in v.coords() {
                write!(line, "{},", fmt_f64(*c)).unwrap();
            }
            write!(line, "{}", fmt_f64(margin)).unwrap();
            rows.push(line);
        })?;
        let mut cols = String::new();
        for i in 1..=d {
            write!(cols, "u_{i},").unwrap();
        }
        for i in 1..=d {
            write!(cols, "v_{i},").unwrap();
        }
        cols.push_str("margin");
        ctx.write_csv("prop_a1_margins.csv", &cols, &rows)?;
    }
    eprintln!("verify-appendix: {violations_total} violation(s) across all checks");
    Ok(if violations_total == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cfg_to_run(e: ConfigError) -> RunError {
    RunError(e.0)
}

fn build_params(cli: &Cli, r: &Resolver) -> Result<Params, ConfigError> {
    let d = r.get(cli.d, "d", 3)?;
    let alpha = r.get(cli.alpha, "alpha", 10.0)?;
    let delta = r.get(cli.delta, "delta", 0.05)?;
    let n0 = r.get_opt(cli.n0, "n0")?;
    let params = match n0 {
        Some(n0) => Params::with_n0(d, alpha, delta, n0),
        None => Params::new(d, alpha, delta),
    };
    params.map_err(|e| ConfigError(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let file = match &cli.config {
        Some(path) => match load_config_file(path) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("config error: {}", e.0);
                return ExitCode::from(2);
            }
        },
        None => BTreeMap::new(),
    };
    let resolver = Resolver { file };

    // worker pool: flag > env > config file > rayon default
    let workers = match resolver.get_opt(cli.workers, "workers") {
        Ok(w) => w,
        Err(e) => {
            eprintln!("config error: {}", e.0);
            return ExitCode::from(2);
        }
    };
    let workers = workers.or_else(|| {
        std::env::var("REINFORCE_WALK_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(w) = workers {
        if w == 0 {
            eprintln!("config error: workers must be >= 1");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }

    let params = match build_params(&cli, &resolver) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("config error: {}", e.0);
            return ExitCode::from(2);
        }
    };
    let out = match resolver.get(cli.out.clone(), "out", PathBuf::from("./out")) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("config error: {}", e.0);
            return ExitCode::from(2);
        }
    };

    // validate plain-count knobs that must be positive before any work
    let validation: Result<(), ConfigError> = (|| {
        match &cli.command {
            Cmd::Simulate(a) => {
                if resolver.get(a.steps, "steps", 100_000)? == 0 {
                    return Err(ConfigError("steps must be >= 1".into()));
                }
            }
            Cmd::Mc(a) => {
                if resolver.get(a.steps, "steps", 1_000_000)? == 0 {
                    return Err(ConfigError("steps must be >= 1".into()));
                }
                if resolver.get(a.runs, "runs", 200)? == 0 {
                    return Err(ConfigError("runs must be >= 1".into()));
                }
            }
            _ => {}
        }
        Ok(())
    })();
    if let Err(e) = validation {
        eprintln!("config error: {}", e.0);
        return ExitCode::from(2);
    }

    let result = match &cli.command {
        Cmd::Simulate(a) => cmd_simulate(params, a, &resolver, out),
        Cmd::Mc(a) => cmd_mc(params, a, &resolver, out),
        Cmd::Flow(a) => cmd_flow(params, a, &resolver, out),
        Cmd::Gap(a) => cmd_gap(params, a, &resolver, out),
        Cmd::Spectrum(a) => cmd_spectrum(params, a, out),
        Cmd::LyapunovScan(a) => cmd_lyapunov_scan(params, a, &resolver, out),
        Cmd::VerifyAppendix(a) => cmd_verify_appendix(params, a, &resolver, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.0);
            ExitCode::from(1)
        }
    }
}
