//! Command-line front end: config loading, sweeps and output files.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

pub use config::RunConfig;

use crate::error::{config_err, Error, FieldError, Result};
use crate::perfmodel::{report_diff, run_config, RunReport, SystemKind};
use crate::primitives::derive_seed;

pub const OUT_DIR_ENV: &str = "KVEDRAM_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "kvedram-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    System,
    NPrime,
    Prefill,
    Decode,
    Batch,
    Skew,
    /// GB/s.
    EdramBw,
    /// Uniform refresh interval in microseconds.
    RefreshUs,
}

impl Axis {
    pub const ALL: [Axis; 8] = [
        Axis::System,
        Axis::NPrime,
        Axis::Prefill,
        Axis::Decode,
        Axis::Batch,
        Axis::Skew,
        Axis::EdramBw,
        Axis::RefreshUs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::System => "system",
            Axis::NPrime => "nprime",
            Axis::Prefill => "prefill",
            Axis::Decode => "decode",
            Axis::Batch => "batch",
            Axis::Skew => "skew",
            Axis::EdramBw => "edram_bw",
            Axis::RefreshUs => "refresh_us",
        }
    }

    fn field(self) -> &'static str {
        match self {
            Axis::System => "system.name",
            Axis::NPrime => "aerp.n_prime",
            Axis::Prefill => "workload.prefill",
            Axis::Decode => "workload.decode",
            Axis::Batch => "workload.batch",
            Axis::Skew => "workload.skew",
            Axis::EdramBw => "tech.edram.bandwidth_bytes_per_s",
            Axis::RefreshUs => "refresh.interval_s",
        }
    }

    /// Write one value of this axis into `cfg`.
    pub fn apply(self, cfg: &mut RunConfig, value: &str) -> Result<()> {
        let bad = |msg: String| Error::InvalidConfig(vec![FieldError::new(self.field(), msg)]);
        let int = || value.parse::<usize>().map_err(|e| bad(format!("{value:?}: {e}")));
        let float = || {
            value
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad(format!("{value:?} is not a finite number")))
        };
        match self {
            Axis::System => {
                SystemKind::parse(value).map_err(|e| bad(e.to_string()))?;
                cfg.system.name = Some(value.to_string());
            }
            Axis::NPrime => cfg.aerp.n_prime = Some(int()?),
            Axis::Prefill => cfg.workload.prefill = Some(int()?),
            Axis::Decode => cfg.workload.decode = Some(int()?),
            Axis::Batch => cfg.workload.batch = Some(int()?),
            Axis::Skew => cfg.workload.skew = Some(float()?),
            Axis::EdramBw => cfg.tech.edram.bandwidth_bytes_per_s = float()? * 1e9,
            Axis::RefreshUs => {
                cfg.refresh = Some(config::RefreshSection {
                    kind: Some("uniform".into()),
                    interval_s: Some(float()? * 1e-6),
                    intervals_s: None,
                })
            }
        }
        Ok(())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Axis::ALL.iter().map(|a| a.name()).collect();
            config_err(format!("unknown sweep axis {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

/// `AXIS=V1,V2,...`. `system=all` expands to the four-step system ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub axis: Axis,
    pub values: Vec<String>,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, values) = s
            .split_once('=')
            .ok_or_else(|| config_err(format!("sweep {s:?} is not of the form AXIS=VALUES")))?;
        let axis: Axis = name.trim().parse()?;
        let mut values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if axis == Axis::System && values.len() == 1 && values[0] == "all" {
            values = SystemKind::LADDER.iter().map(|k| k.name().to_string()).collect();
        }
        if values.is_empty() {
            return Err(config_err(format!("sweep axis {name} has no values")));
        }
        Ok(Self { axis, values })
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub index: usize,
    /// `(axis name, value)` in axis order.
    pub coords: Vec<(String, String)>,
    pub config: RunConfig,
}

/// Cartesian product of the axes, first axis varying slowest. Each cell's run
/// seed is derived from the master seed and the cell index.
pub fn expand(base: &RunConfig, axes: &[SweepAxis], master_seed: u64) -> Result<Vec<Cell>> {
    let mut cells = vec![(Vec::new(), base.clone())];
    for ax in axes {
        let mut next = Vec::with_capacity(cells.len() * ax.values.len());
        for (coords, cfg) in &cells {
            for v in &ax.values {
                let mut cfg = cfg.clone();
                ax.axis.apply(&mut cfg, v)?;
                let mut coords = coords.clone();
                coords.push((ax.axis.name().to_string(), v.clone()));
                next.push((coords, cfg));
            }
        }
        cells = next;
    }
    Ok(cells
        .into_iter()
        .enumerate()
        .map(|(index, (coords, mut config))| {
            config.run.seed = Some(derive_seed(master_seed, index as u64));
            Cell { index, coords, config }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub report: RunReport,
    /// Original+SRAM on the same workload.
    pub baseline: RunReport,
}

impl CellResult {
    pub fn relative_efficiency(&self) -> f64 {
        self.baseline.energy.total / self.report.energy.total
    }

    pub fn speedup(&self) -> f64 {
        self.baseline.latency.total / self.report.latency.total
    }
}

fn baseline_config(cfg: &RunConfig) -> RunConfig {
    let mut b = cfg.clone();
    b.system.name = Some(SystemKind::OriginalSram.name().to_string());
    b.run.seed = Some(0);
    b
}

/// Run every cell, plus one Original+SRAM reference per distinct workload.
/// Cells are independent and run in parallel; results come back in cell order.
pub fn run_cells(cells: Vec<Cell>) -> Result<Vec<CellResult>> {
    let mut errs = Vec::new();
    let mut scenarios = Vec::with_capacity(cells.len());
    let mut baselines = BTreeMap::new();
    for c in &cells {
        let prefix = |e: Vec<FieldError>| {
            e.into_iter()
                .map(|f| FieldError::new(format!("cell {}: {}", c.index, f.field), f.message))
                .collect::<Vec<_>>()
        };
        match (c.config.scenario(), baseline_config(&c.config).scenario()) {
            (Ok(s), Ok(b)) => {
                let h = b.config_hash()?;
                baselines.entry(h.clone()).or_insert(b);
                scenarios.push((s, h));
            }
            (Err(Error::InvalidConfig(e)), _) | (_, Err(Error::InvalidConfig(e))) => errs.extend(prefix(e)),
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    if !errs.is_empty() {
        return Err(Error::InvalidConfig(errs));
    }
    let base_reports: BTreeMap<String, RunReport> = baselines
        .into_par_iter()
        .map(|(h, s)| run_config(&s).map(|r| (h, r)))
        .collect::<Result<_>>()?;
    let reports: Vec<RunReport> = scenarios.par_iter().map(|(s, _)| run_config(s)).collect::<Result<_>>()?;
    Ok(cells
        .into_iter()
        .zip(reports)
        .zip(scenarios)
        .map(|((cell, report), (_, h))| CellResult {
            cell,
            baseline: base_reports[&h].clone(),
            report,
        })
        .collect())
}

const METRIC_COLUMNS: [&str; 17] = [
    "system",
    "seed",
    "energy_j",
    "latency_s",
    "relative_efficiency",
    "speedup",
    "compute_j",
    "weights_j",
    "kv_cache_j",
    "refresh_j",
    "leakage_j",
    "dram_j",
    "refresh_share_on_chip",
    "evictions",
    "recomputations",
    "flips_total",
    "config_hash",
];

fn metric_row(r: &CellResult) -> Vec<String> {
    let rep = &r.report;
    let e = &rep.energy;
    vec![
        rep.system.clone(),
        rep.seed.to_string(),
        e.total.to_string(),
        rep.latency.total.to_string(),
        r.relative_efficiency().to_string(),
        r.speedup().to_string(),
        e.compute.to_string(),
        e.weights.to_string(),
        e.kv_cache.to_string(),
        e.refresh.to_string(),
        e.leakage.to_string(),
        e.dram.to_string(),
        rep.refresh_share_on_chip.to_string(),
        rep.counters.evictions.to_string(),
        rep.counters.recomputations.to_string(),
        rep.counters.flips_total.to_string(),
        rep.config_hash.clone(),
    ]
}

/// One row per result. Sweep axes become leading columns.
pub fn results_csv(results: &[CellResult]) -> Result<String> {
    let axes: Vec<String> = results
        .first()
        .map(|r| r.cell.coords.iter().map(|(a, _)| a.clone()).collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["cell".to_string()];
    header.extend(axes.iter().map(|a| format!("axis_{a}")));
    header.extend(METRIC_COLUMNS.iter().map(|s| s.to_string()));
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(io)?;
    for r in results {
        let mut row = vec![r.cell.index.to_string()];
        row.extend(r.cell.coords.iter().map(|(_, v)| v.clone()));
        row.extend(metric_row(r));
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Files written for a plain run: `report.json` and `summary.csv`. With sweep
/// axes: `sweep.csv` and one report per cell under `reports/`.
pub fn write_results(out: &Path, results: &[CellResult], sweep: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    if sweep {
        let dir = out.join("reports");
        fs::create_dir_all(&dir)?;
        for r in results {
            let p = dir.join(format!("{:04}-{}.json", r.cell.index, r.report.system));
            fs::write(&p, r.report.to_json()?)?;
            written.push(p);
        }
        let p = out.join("sweep.csv");
        fs::write(&p, results_csv(results)?)?;
        written.push(p);
    } else {
        let p = out.join("report.json");
        fs::write(&p, results[0].report.to_json()?)?;
        written.push(p);
        let p = out.join("summary.csv");
        fs::write(&p, results_csv(results)?)?;
        written.push(p);
    }
    Ok(written)
}

#[derive(Debug, Parser)]
#[command(name = "kvedram", version, about = "Edge LLM KV-cache and eDRAM simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration, or a sweep when --sweep is given.
    Run(RunArgs),
    /// Run a parameter sweep. Requires at least one --sweep.
    Sweep(RunArgs),
    /// Compare two report.json files category by category.
    Diff {
        a: PathBuf,
        b: PathBuf,
        /// Also write the comparison as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration and print the resolved scenario.
    Validate(ConfigArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// la, tq, qa or pg19.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// AXIS=V1,V2,... Axes: system (or system=all), nprime, prefill, decode,
    /// batch, skew, edram_bw (GB/s), refresh_us.
    #[arg(long = "sweep", value_name = "AXIS=VALUES")]
    pub sweep: Vec<String>,
    #[arg(long, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::InvalidConfig(vec![FieldError::new("config", format!("{}: {e}", p.display()))]))?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(p) = &self.preset {
            cfg.workload.preset = Some(p.clone());
        }
        if let Some(s) = &self.system {
            cfg.system.name = Some(s.clone());
        }
        if let Some(s) = self.seed {
            cfg.run.seed = Some(s);
        }
        Ok(cfg)
    }
}

fn out_dir(args: &RunArgs, cfg: &RunConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.run.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn run_command(args: &RunArgs, require_sweep: bool) -> Result<()> {
    let cfg = args.config.load()?;
    let axes = args.sweep.iter().map(|s| s.parse()).collect::<Result<Vec<SweepAxis>>>()?;
    if require_sweep && axes.is_empty() {
        return Err(config_err("sweep needs at least one --sweep AXIS=VALUES"));
    }
    let out = out_dir(args, &cfg);
    let seed = cfg.run.seed.unwrap_or(0);
    let results = if axes.is_empty() {
        run_cells(vec![Cell {
            index: 0,
            coords: Vec::new(),
            config: cfg,
        }])?
    } else {
        run_cells(expand(&cfg, &axes, seed)?)?
    };
    for r in &results {
        let coords: Vec<String> = r.cell.coords.iter().map(|(a, v)| format!("{a}={v}")).collect();
        println!(
            "{:<15} {:<24} energy {:.6e} J  latency {:.6e} s  efficiency x{:.3}  speedup x{:.3}",
            r.report.system,
            coords.join(" "),
            r.report.energy.total,
            r.report.latency.total,
            r.relative_efficiency(),
            r.speedup()
        );
    }
    for p in write_results(&out, &results, !axes.is_empty())? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn diff_command(a: &Path, b: &Path, out: Option<&Path>) -> Result<()> {
    let ra = RunReport::from_json(&fs::read_to_string(a)?)?;
    let rb = RunReport::from_json(&fs::read_to_string(b)?)?;
    let d = report_diff(&ra, &rb)?;
    println!("{} vs {}", d.a_system, d.b_system);
    for (section, map) in [("energy", &d.energy), ("latency", &d.latency), ("counters", &d.counters)] {
        for (k, c) in map {
            let ratio = c.ratio.map_or("-".to_string(), |r| format!("{r:.4}"));
            println!("{section:<9} {k:<24} {:>14.6e} {:>14.6e} {:>10}", c.a, c.b, ratio);
        }
    }
    if let Some(p) = out {
        fs::write(p, serde_json::to_string_pretty(&d)?)?;
    }
    Ok(())
}

fn validate_command(args: &ConfigArgs) -> Result<()> {
    let sc = args.load()?.scenario()?;
    println!("{}", serde_json::to_string_pretty(&sc)?);
    println!("config_hash {}", sc.config_hash()?);
    Ok(())
}

/// Exit status: 0 on success, 2 for an invalid configuration, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::Config(_) => 2,
        _ => 1,
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(a) => run_command(a, false),
        Command::Sweep(a) => run_command(a, true),
        Command::Diff { a, b, out } => diff_command(a, b, out.as_deref()),
        Command::Validate(a) => validate_command(a),
    }
}

pub fn main() -> i32 {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("kvedram: {e}");
            exit_code(&e)
        }
    }
}
