//! Command-line interface.
//!
//! Exit codes: `0` on completed inference (reject or not), `2` for parse and
//! validation errors, `3` when the hypothesis is untestable or the statistic
//! does not apply, `4` for anything else.

pub mod input;
pub mod manifest;
pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::calibration::{calibrate, CalibrationCache};
use crate::error::Error;
use crate::family::GlmFamily;
use crate::inference::{self, ConfidenceRegion, Lattice, McConfig};
use crate::sim::{self, ExperimentConfig, Method, PowerRow};
use crate::stats::{Partition, PreparedStatistic, StatKind, StatisticSpec};

use input::{parse_grid, read_data, Dataset, ParsedHypothesis};
use manifest::{manifest_path_for, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "threshtest", version, about = "Thresholding tests for linear hypotheses")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test H0: Aβ = c on a dataset.
    Test(TestArgs),
    /// Simulate and store the null distribution of a statistic.
    Calibrate(CalibrateArgs),
    /// Confidence region for Aβ by test inversion (R ≤ 2).
    Region(RegionArgs),
    /// Power study over a (s, θ) grid.
    Power(ExperimentArgs),
    /// Level study at θ = 0.
    Level(LevelArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Hypothesis document (JSON).
    #[arg(long)]
    pub hypothesis: PathBuf,
    /// Name of the response column.
    #[arg(long, default_value = "y")]
    pub response: String,
    /// Prepend an all-ones column to X.
    #[arg(long)]
    pub intercept: bool,
}

#[derive(Debug, Args)]
pub struct StatArgs {
    /// Statistic name, or `composite`.
    #[arg(long, default_value = "sqrt_affine_lasso")]
    pub stat: String,
    /// Response family for GLM score statistics.
    #[arg(long, default_value = "gaussian")]
    pub family: GlmFamily,
    /// Known noise level, required by the non-square-root affine statistics.
    #[arg(long)]
    pub noise_sd: Option<f64>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Monte-Carlo null draws.
    #[arg(long, default_value_t = 999)]
    pub mc: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub stat: StatArgs,
    #[command(flatten)]
    pub mc: McArgs,
    /// Result record (JSON); printed to stdout as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub stat: StatArgs,
    #[command(flatten)]
    pub mc: McArgs,
    /// Calibration table (CSV with a metadata header).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub stat: StatArgs,
    #[command(flatten)]
    pub mc: McArgs,
    /// Lattice axis `lo:hi:n`; give one per row of A.
    #[arg(long, required = true, allow_hyphen_values = true)]
    pub grid: Vec<String>,
    /// Membership table (CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write an SVG next to the table.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment config (JSON): one config, or `{"scenarios": [...]}`.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated tests overriding the config's list.
    #[arg(long, value_delimiter = ',')]
    pub stat: Option<Vec<String>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub mc: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write SVG power curves.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct LevelArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Expand the config into one scenario per family...
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<GlmFamily>>,
    /// ...and per dimension.
    #[arg(long, value_delimiter = ',')]
    pub p_values: Option<Vec<usize>>,
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            code: 4,
            message: message.into(),
        }
    }
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::DimensionMismatch(_)
        | Error::InvalidSpec(_)
        | Error::InsufficientDraws { .. }
        | Error::StatisticMismatch { .. }
        | Error::DomainError(_)
        | Error::UnsupportedDimension(_) => 2,
        Error::Untestable { .. } | Error::NotApplicable(_) | Error::RankDeficient(_) | Error::Degenerate(_) => 3,
        _ => 4,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::internal(format!("creating {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::internal(format!("writing {}: {e}", path.display())))
}

struct Clock {
    started: u128,
    t0: Instant,
}

impl Clock {
    fn start() -> Self {
        Self {
            started: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
            t0: Instant::now(),
        }
    }

    fn manifest(&self, command: &str, config: Value, seed: u64, outputs: &[&Path]) -> RunManifest {
        RunManifest::new(
            command,
            config,
            seed,
            self.started,
            self.t0.elapsed().as_millis(),
            outputs.iter().map(|p| p.display().to_string()).collect(),
        )
    }
}

fn write_manifest(m: &RunManifest, path: &Path) -> CliResult<()> {
    m.write(path).map_err(|e| CliError::internal(format!("writing {}: {e}", path.display())))
}

enum StatChoice {
    Single(StatisticSpec),
    Composite(StatisticSpec, StatisticSpec),
}

fn stat_choice(args: &StatArgs, hyp: &ParsedHypothesis) -> CliResult<StatChoice> {
    if args.stat == "composite" {
        let (a, mut b) = inference::default_composite_pair();
        if hyp.has_groups {
            b = b.with_partition(Partition::Hypothesis);
        }
        return Ok(StatChoice::Composite(a, b));
    }
    let kind: StatKind = args.stat.parse()?;
    let mut spec = StatisticSpec::new(kind);
    if kind.is_group() {
        spec = spec.with_partition(if hyp.has_groups { Partition::Hypothesis } else { Partition::Whole });
    }
    if kind.is_glm() {
        spec = spec.with_family(args.family);
    }
    Ok(StatChoice::Single(spec))
}

fn load(data: &DataArgs) -> CliResult<(Dataset, ParsedHypothesis, Value)> {
    let ds = read_data(&data.data, &data.response, data.intercept)?;
    let hyp_text = fs::read_to_string(&data.hypothesis)
        .map_err(|e| CliError::input(format!("reading {}: {e}", data.hypothesis.display())))?;
    let hyp = input::parse_hypothesis(&hyp_text, ds.x.ncols())?;
    let data_text = fs::read(&data.data).map_err(|e| CliError::input(format!("reading {}: {e}", data.data.display())))?;
    let hyp_value: Value = serde_json::from_str(&hyp_text).map_err(|e| CliError::input(e.to_string()))?;
    let config = json!({
        "data_sha256": manifest::config_digest(&Value::String(hex::encode(&data_text))),
        "hypothesis": hyp_value,
        "response": data.response,
        "intercept": data.intercept,
    });
    Ok((ds, hyp, config))
}

fn mc_config(mc: &McArgs, stat: &StatArgs) -> McConfig {
    let cfg = McConfig::new(mc.mc, mc.seed).with_cache(Arc::new(CalibrationCache::from_env()));
    match stat.noise_sd {
        Some(sd) => cfg.with_noise_sd(sd),
        None => cfg,
    }
}

fn run_config(base: Value, stat: &StatArgs, mc: &McArgs) -> Value {
    let mut v = base;
    v["stat"] = json!(stat.stat);
    v["family"] = json!(stat.family);
    v["noise_sd"] = json!(stat.noise_sd);
    v["alpha"] = json!(mc.alpha);
    v["mc"] = json!(mc.mc);
    v["seed"] = json!(mc.seed);
    v
}

fn cmd_test(args: &TestArgs) -> CliResult<()> {
    let clock = Clock::start();
    let (ds, hyp, base) = load(&args.data)?;
    let cfg = mc_config(&args.mc, &args.stat);
    let h = &hyp.hypothesis;
    let result = match stat_choice(&args.stat, &hyp)? {
        StatChoice::Single(spec) => inference::run_test(&ds.y, &ds.x, h, &spec, args.mc.alpha, &cfg)?,
        StatChoice::Composite(a, b) => inference::run_composite(&ds.y, &ds.x, h, &a, &b, args.mc.alpha, &cfg)?,
    };
    let mut record = serde_json::to_string(&result).map_err(|e| CliError::internal(e.to_string()))?;
    record.push('\n');
    print!("{record}");
    if let Some(out) = &args.out {
        write_file(out, record.as_bytes())?;
        let m = clock.manifest("test", run_config(base, &args.stat, &args.mc), args.mc.seed, &[out]);
        write_manifest(&m, &manifest_path_for(out))?;
    }
    Ok(())
}

fn cmd_calibrate(args: &CalibrateArgs) -> CliResult<()> {
    let clock = Clock::start();
    let (ds, hyp, base) = load(&args.data)?;
    let spec = match stat_choice(&args.stat, &hyp)? {
        StatChoice::Single(spec) => spec,
        StatChoice::Composite(..) => {
            return Err(CliError::input("calibrate stores single-statistic tables; choose a component statistic"))
        }
    };
    let stat = PreparedStatistic::new(&spec, &ds.x, &hyp.hypothesis)?;
    let model = inference::null_model_for(&stat, &hyp.hypothesis, &ds.y, args.stat.noise_sd)?;
    let cal = calibrate(&stat, &model, args.mc.mc, args.mc.alpha, args.mc.seed)?;
    let mut buf = Vec::new();
    cal.write_to(&mut buf).map_err(|e| CliError::internal(e.to_string()))?;
    write_file(&args.out, &buf)?;
    println!("lambda_alpha = {}", cal.lambda_alpha);
    let m = clock.manifest("calibrate", run_config(base, &args.stat, &args.mc), args.mc.seed, &[&args.out]);
    write_manifest(&m, &manifest_path_for(&args.out))
}

fn cmd_region(args: &RegionArgs) -> CliResult<()> {
    let clock = Clock::start();
    let (ds, hyp, base) = load(&args.data)?;
    let r = hyp.hypothesis.r();
    if r > 2 {
        return Err(Error::UnsupportedDimension(r).into());
    }
    if args.grid.len() != r {
        return Err(CliError::input(format!("A has {r} row(s) but {} --grid value(s) were given", args.grid.len())));
    }
    let axes = args.grid.iter().map(|g| parse_grid(g)).collect::<crate::Result<Vec<_>>>()?;
    let lattice = match axes.as_slice() {
        [a] => Lattice::Line(a.clone()),
        [a, b] => Lattice::Plane(a.clone(), b.clone()),
        _ => unreachable!("R is 1 or 2"),
    };
    let spec = match stat_choice(&args.stat, &hyp)? {
        StatChoice::Single(spec) => spec,
        StatChoice::Composite(..) => return Err(CliError::from(Error::NotApplicable("regions use a single pivotal statistic".into()))),
    };
    let cfg = mc_config(&args.mc, &args.stat);
    let region = ConfidenceRegion::calibrated(&ds.y, &ds.x, &hyp.hypothesis, &spec, args.mc.alpha, &cfg)?;
    let scan = region.scan(&lattice)?;

    let mut table = String::from(if r == 1 { "c,member\n" } else { "c1,c2,member\n" });
    for (p, m) in scan.points.iter().zip(&scan.member) {
        let coords: Vec<String> = p.iter().map(f64::to_string).collect();
        table.push_str(&format!("{},{}\n", coords.join(","), u8::from(*m)));
    }
    write_file(&args.out, table.as_bytes())?;
    let mut outputs = vec![args.out.clone()];
    if args.plot {
        let svg_path = args.out.with_extension("svg");
        write_file(&svg_path, svg::region_scan(&scan).as_bytes())?;
        outputs.push(svg_path);
    }
    println!("lambda_alpha = {}", region.lambda_alpha());
    if let Some((lo, hi)) = scan.interval {
        println!("interval = [{lo}, {hi}]");
    }
    let mut config = run_config(base, &args.stat, &args.mc);
    config["grid"] = json!(args.grid);
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    let m = clock.manifest("region", config, args.mc.seed, &refs);
    write_manifest(&m, &manifest_path_for(&args.out))
}

fn read_experiments(args: &ExperimentArgs) -> CliResult<(Vec<ExperimentConfig>, bool)> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::input(format!("reading {}: {e}", args.config.display())))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::input(format!("config: {e}")))?;
    let parse = |v: &Value| -> CliResult<ExperimentConfig> {
        serde_json::from_value(v.clone()).map_err(|e| CliError::input(format!("config: {e}")))
    };
    let (mut cfgs, many) = match doc.get("scenarios") {
        Some(Value::Array(items)) => (items.iter().map(parse).collect::<CliResult<Vec<_>>>()?, true),
        Some(_) => return Err(CliError::input("config: `scenarios` must be a list")),
        None => (vec![parse(&doc)?], false),
    };
    let methods = match &args.stat {
        Some(names) => Some(names.iter().map(|s| s.parse::<Method>()).collect::<crate::Result<Vec<_>>>()?),
        None => None,
    };
    for c in &mut cfgs {
        if let Some(m) = &methods {
            c.statistics = m.clone();
        }
        if let Some(a) = args.alpha {
            c.alpha = a;
        }
        if let Some(m) = args.mc {
            c.m_calib = m;
        }
        if let Some(s) = args.seed {
            c.seed = s;
        }
        c.validate()?;
    }
    Ok((cfgs, many))
}

fn scenario_name(c: &ExperimentConfig) -> String {
    format!("{}_p{}", c.family, c.p)
}

fn run_experiments(
    command: &str,
    args: &ExperimentArgs,
    cfgs: Vec<ExperimentConfig>,
    many: bool,
    run: impl Fn(&ExperimentConfig, &Arc<CalibrationCache>) -> crate::Result<Vec<PowerRow>>,
) -> CliResult<()> {
    let clock = Clock::start();
    let cache = Arc::new(CalibrationCache::from_env());
    fs::create_dir_all(&args.out).map_err(|e| CliError::internal(format!("creating {}: {e}", args.out.display())))?;
    let mut outputs = Vec::new();
    let mut all_rows: Vec<(usize, PowerRow)> = Vec::new();
    let mut used = std::collections::HashSet::new();
    for (i, c) in cfgs.iter().enumerate() {
        let rows = run(c, &cache)?;
        for w in sim::monotonicity_warnings(&rows) {
            eprintln!("warning: {w}");
        }
        let mut name = if many { scenario_name(c) } else { command.to_string() };
        if !used.insert(name.clone()) {
            name = format!("{name}_{i}");
            used.insert(name.clone());
        }
        let path = args.out.join(format!("{name}.csv"));
        let mut buf = Vec::new();
        sim::write_power_csv(&rows, &mut buf)?;
        write_file(&path, &buf)?;
        outputs.push(path);
        all_rows.extend(rows.into_iter().map(|r| (c.p, r)));
    }
    if args.plot {
        if command == "level" {
            let path = args.out.join("level.svg");
            write_file(&path, svg::level_chart(&all_rows).as_bytes())?;
            outputs.push(path);
        } else {
            let mut ps: Vec<usize> = all_rows.iter().map(|(p, _)| *p).collect();
            ps.sort_unstable();
            ps.dedup();
            for p in ps {
                let rows: Vec<PowerRow> = all_rows.iter().filter(|(q, _)| *q == p).map(|(_, r)| r.clone()).collect();
                let path = args.out.join(format!("power_p{p}.svg"));
                write_file(&path, svg::power_curves(&rows).as_bytes())?;
                outputs.push(path);
            }
        }
    }
    let config = if many {
        json!({ "scenarios": cfgs })
    } else {
        serde_json::to_value(&cfgs[0]).map_err(|e| CliError::internal(e.to_string()))?
    };
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    let m = clock.manifest(command, config, cfgs[0].seed, &refs);
    write_manifest(&m, &args.out.join("manifest.json"))?;
    for o in &outputs {
        println!("{}", o.display());
    }
    Ok(())
}

fn cmd_power(args: &ExperimentArgs) -> CliResult<()> {
    let (cfgs, many) = read_experiments(args)?;
    run_experiments("power", args, cfgs, many, sim::estimate_power_with_cache)
}

fn cmd_level(args: &LevelArgs) -> CliResult<()> {
    let (mut cfgs, mut many) = read_experiments(&args.experiment)?;
    if args.families.is_some() || args.p_values.is_some() {
        let base = cfgs[0].clone();
        let families = args.families.clone().unwrap_or(vec![base.family]);
        let ps = args.p_values.clone().unwrap_or(vec![base.p]);
        cfgs = sim::level_scenarios(&base, &families, &ps);
        if let Some(names) = &args.experiment.stat {
            let methods = names.iter().map(|s| s.parse::<Method>()).collect::<crate::Result<Vec<_>>>()?;
            cfgs.iter_mut().for_each(|c| c.statistics = methods.clone());
        }
        for c in &cfgs {
            c.validate()?;
        }
        many = true;
    }
    run_experiments("level", &args.experiment, cfgs, many, sim::estimate_level_with_cache)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    let go = || match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Region(a) => cmd_region(a),
        Command::Power(a) => cmd_power(a),
        Command::Level(a) => cmd_level(a),
    };
    match cli.threads {
        Some(0) => Err(CliError::input("--threads must be positive")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::internal(e.to_string()))?
            .install(go),
        None => go(),
    }
}

pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
