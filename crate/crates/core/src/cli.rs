//! The `distacc` command-line front end.
//!
//! Exit codes: 0 success, 2 input error, 3 infeasible parameters, 4 internal
//! consistency failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::allocation::{
    allocate_consensus, allocate_equal_incremental, allocate_numeric_penalized,
    consensus_uniform_split, rates_for_profile, solve_consensus_numeric, Profile, RateAllocation,
    DEFAULT_TOL,
};
use crate::bounds::{
    bounds_report, consensus_bounds_report, consensus_derive, derive_distortions,
    equal_split_profile, gap_report, line_gap_asymptote, BoundsReport,
};
use crate::error::{Error, Result};
use crate::network::{node_map_to_links, parse_tree, DirectedEdge, Mode, NodeId, TreeNetwork};
use crate::simulator::{
    analytic_mmse_check, simulate_aggregation, simulate_consensus, simulate_dithered_baseline,
    AnalyticModel, Scheme, SimulationConfig, SimulationResult,
};

pub const DEFAULT_BLOCKLENGTH: usize = 1000;
pub const DEFAULT_TRIALS: usize = 100;

#[derive(Debug, Parser)]
#[command(
    name = "distacc",
    version,
    about = "Rate and distortion planning for in-network linear computation on Gaussian trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Outer, cut-set and inner bounds for data aggregation
    Bounds(Opts),
    /// Rate allocation for data aggregation
    Allocate(Opts),
    /// Monte-Carlo simulation of a coding scheme
    Simulate(Opts),
    /// Gap between outer and cut-set bounds on equal-weight line networks
    GapSweep(SweepOpts),
    /// Outer, cut-set and inner bounds for consensus
    ConsensusBounds(Opts),
    /// Rate allocation for consensus
    ConsensusAllocate(Opts),
    /// Monte-Carlo simulation of the consensus scheme
    ConsensusSimulate(Opts),
    /// Check the accumulation identities with the exact Gaussian oracle
    Validate(Opts),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum AllocMethod {
    Equal,
    Numeric,
}

#[derive(Debug, Clone, Args)]
struct Output {
    /// Write to this file instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
struct Opts {
    /// Tree document (JSON)
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Target total distortion
    #[arg(long = "D", allow_hyphen_values = true)]
    d: Option<f64>,
    /// Per-link incremental distortions (JSON object)
    #[arg(long = "d-per-link")]
    d_per_link: Option<PathBuf>,
    /// agg or consensus
    #[arg(long)]
    mode: Option<Mode>,
    /// testchannel or dither
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Blocklength
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Allocation method for `allocate`
    #[arg(long, value_enum)]
    method: Option<AllocMethod>,
    /// Convergence tolerance of the numerical allocator, in bits
    #[arg(long)]
    tol: Option<f64>,
    /// JSON file supplying defaults for the flags above
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Clone, Args)]
struct SweepOpts {
    /// Inclusive range of line lengths, e.g. 2..8
    #[arg(long = "line-n")]
    line_n: String,
    /// Comma-separated target distortions
    #[arg(long = "D", allow_hyphen_values = true)]
    d: String,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    tree: Option<PathBuf>,
    #[serde(rename = "D")]
    d: Option<f64>,
    d_per_link: Option<PathBuf>,
    mode: Option<String>,
    scheme: Option<String>,
    #[serde(rename = "N")]
    n: Option<usize>,
    trials: Option<usize>,
    seed: Option<u64>,
    method: Option<AllocMethod>,
    tol: Option<f64>,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Diagnostics go to stderr as a single line.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Bounds(o) => {
            let o = o.resolve()?;
            let net = o.tree()?;
            let profile = match o.distortion_source()? {
                Source::Total(d) => equal_split_profile(&net, d)?,
                Source::File(path) => derive_distortions(&net, &read_node_map(&path)?)?,
            };
            let report = bounds_report(&net, &profile)?;
            emit(&o.output, Format::Json, to_value(&report), || bounds_csv(&report))
        }
        Command::ConsensusBounds(o) => {
            let o = o.resolve()?;
            let net = o.tree()?;
            let profile = match o.distortion_source()? {
                Source::Total(d) => match allocate_consensus(&net, d)?.profile {
                    Profile::Consensus(p) => p,
                    Profile::Aggregation(_) => unreachable!("consensus allocation"),
                },
                Source::File(path) => consensus_derive(&net, &read_edge_map(&path)?)?,
            };
            let report = consensus_bounds_report(&net, &profile)?;
            emit(&o.output, Format::Json, to_value(&report), || bounds_csv(&report))
        }
        Command::Allocate(o) => {
            let o = o.resolve()?;
            let net = o.tree()?;
            let d = o.total()?;
            let alloc = match o.method.unwrap_or(AllocMethod::Equal) {
                AllocMethod::Equal => allocate_equal_incremental(&net, d)?,
                AllocMethod::Numeric => {
                    allocate_numeric_penalized(&net, d, o.tol.unwrap_or(DEFAULT_TOL))?
                }
            };
            emit(&o.output, Format::Json, to_value(&alloc), || allocation_csv(&alloc))
        }
        Command::ConsensusAllocate(o) => {
            let o = o.resolve()?;
            let net = o.tree()?;
            let d = o.total()?;
            let alloc = allocate_consensus(&net, d)?;
            let numeric = solve_consensus_numeric(&net, d)?;
            let uniform = consensus_uniform_split(&net, d)?;
            let mut value = to_value(&alloc);
            value["numeric_sum_rate_bits"] = json!(numeric.sum_rate_bits);
            value["numeric_iterations"] = json!(numeric.iterations);
            value["uniform_split"] = to_value(&uniform);
            emit(&o.output, Format::Json, value, || allocation_csv(&alloc))
        }
        Command::Simulate(o) => {
            let o = o.resolve()?;
            let mode = o.mode.unwrap_or(Mode::Aggregation);
            simulate(o, mode)
        }
        Command::ConsensusSimulate(o) => {
            let o = o.resolve()?;
            if o.mode == Some(Mode::Aggregation) {
                return Err(Error::InvalidArgument(
                    "consensus-simulate runs in consensus mode only".into(),
                ));
            }
            simulate(o, Mode::Consensus)
        }
        Command::GapSweep(s) => {
            let rows = gap_sweep(parse_range(&s.line_n)?, &parse_list(&s.d)?)?;
            let value = Value::Array(
                rows.iter()
                    .map(|r| {
                        json!({
                            "n": r.n,
                            "D": r.d,
                            "delta_r": r.delta_r,
                            "asymptote": r.asymptote,
                            "delta_minus_asymptote": r.delta_r - r.asymptote,
                        })
                    })
                    .collect(),
            );
            emit(&s.output, Format::Csv, value, || sweep_csv(&rows))
        }
        Command::Validate(o) => {
            let o = o.resolve()?;
            let net = o.tree()?;
            let models = validate(&net, &o)?;
            let value = json!({
                "status": "ok",
                "checks": models.iter().map(to_value).collect::<Vec<_>>(),
            });
            emit(&o.output, Format::Json, value, || validate_csv(&models))
        }
    }
}

impl Opts {
    /// Fills unset flags from `--config`; flags win.
    fn resolve(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let cfg: ConfigFile = serde_json::from_str(&read(&path)?)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
        self.tree = self.tree.or(cfg.tree);
        self.d = self.d.or(cfg.d);
        self.d_per_link = self.d_per_link.or(cfg.d_per_link);
        if self.mode.is_none() {
            self.mode = cfg.mode.as_deref().map(str::parse).transpose()?;
        }
        if self.scheme.is_none() {
            self.scheme = cfg.scheme.as_deref().map(str::parse).transpose()?;
        }
        self.n = self.n.or(cfg.n);
        self.trials = self.trials.or(cfg.trials);
        self.seed = self.seed.or(cfg.seed);
        self.method = self.method.or(cfg.method);
        self.tol = self.tol.or(cfg.tol);
        Ok(self)
    }

    fn tree(&self) -> Result<TreeNetwork> {
        let path = self
            .tree
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("--tree is required".into()))?;
        parse_tree(&read(path)?)
    }

    fn total(&self) -> Result<f64> {
        self.d
            .ok_or_else(|| Error::InvalidArgument("--D is required".into()))
    }

    fn distortion_source(&self) -> Result<Source> {
        match (self.d, &self.d_per_link) {
            (Some(d), None) => Ok(Source::Total(d)),
            (None, Some(p)) => Ok(Source::File(p.clone())),
            (Some(_), Some(_)) => Err(Error::InvalidArgument(
                "--D and --d-per-link are mutually exclusive".into(),
            )),
            (None, None) => Err(Error::InvalidArgument(
                "one of --D or --d-per-link is required".into(),
            )),
        }
    }

    fn sim_config(&self, mode: Mode, scheme: Scheme) -> SimulationConfig {
        SimulationConfig::new(
            self.n.unwrap_or(DEFAULT_BLOCKLENGTH),
            self.trials.unwrap_or(DEFAULT_TRIALS),
            self.seed.unwrap_or(0),
        )
        .with_mode(mode)
        .with_scheme(scheme)
    }
}

enum Source {
    Total(f64),
    File(PathBuf),
}

fn simulate(o: Opts, mode: Mode) -> Result<()> {
    let net = o.tree()?;
    let scheme = o.scheme.unwrap_or(Scheme::TestChannel);
    let cfg = o.sim_config(mode, scheme);
    let source = o.distortion_source()?;
    let result = match (mode, scheme) {
        (Mode::Aggregation, Scheme::TestChannel) => {
            let d = match source {
                Source::Total(d) => equal_split_profile(&net, d)?.inc,
                Source::File(p) => read_node_map(&p)?,
            };
            simulate_aggregation(&net, &d, cfg)?
        }
        (Mode::Consensus, Scheme::TestChannel) => {
            let d = match source {
                Source::Total(d) => allocate_consensus(&net, d)?.profile_inc(),
                Source::File(p) => read_edge_map(&p)?,
            };
            simulate_consensus(&net, &d, cfg)?
        }
        (_, Scheme::DitheredQuantizer) => {
            let rates = match (mode, source) {
                (Mode::Aggregation, Source::Total(d)) => allocate_equal_incremental(&net, d)?,
                (Mode::Consensus, Source::Total(d)) => allocate_consensus(&net, d)?,
                (Mode::Aggregation, Source::File(p)) => rates_for_profile(
                    &net,
                    &Profile::Aggregation(derive_distortions(&net, &read_node_map(&p)?)?),
                )?,
                (Mode::Consensus, Source::File(p)) => rates_for_profile(
                    &net,
                    &Profile::Consensus(consensus_derive(&net, &read_edge_map(&p)?)?),
                )?,
            };
            simulate_dithered_baseline(&net, &rates, cfg)?
        }
    };
    emit(&o.output, Format::Json, to_value(&result), || simulation_csv(&result))
}

trait ProfileInc {
    fn profile_inc(&self) -> BTreeMap<DirectedEdge, f64>;
}

impl ProfileInc for RateAllocation {
    fn profile_inc(&self) -> BTreeMap<DirectedEdge, f64> {
        self.links
            .iter()
            .map(|l| (DirectedEdge::new(l.from, l.to), l.inc))
            .collect()
    }
}

fn validate(net: &TreeNetwork, o: &Opts) -> Result<Vec<AnalyticModel>> {
    let modes = match o.mode {
        Some(m) => vec![m],
        None if net.require_all_weighted().is_ok() => vec![Mode::Aggregation, Mode::Consensus],
        None => vec![Mode::Aggregation],
    };
    let mut out = Vec::new();
    for mode in modes {
        let d = match (mode, &o.d_per_link) {
            (Mode::Aggregation, Some(p)) => node_map_to_links(net, &read_node_map(p)?)?,
            (Mode::Consensus, Some(p)) => read_edge_map(p)?,
            (Mode::Aggregation, None) => {
                let total = o.d.unwrap_or_else(|| default_validation_target(net));
                node_map_to_links(net, &equal_split_profile(net, total)?.inc)?
            }
            (Mode::Consensus, None) => {
                let total = o.d.unwrap_or_else(|| default_validation_target(net));
                allocate_consensus(net, total)?.profile_inc()
            }
        };
        out.push(analytic_mmse_check(net, &d, mode)?);
    }
    Ok(out)
}

/// One percent of the smallest squared weight.
fn default_validation_target(net: &TreeNetwork) -> f64 {
    let min_w2 = net
        .nodes()
        .filter_map(|v| net.weight(v))
        .map(|w| w * w)
        .fold(f64::INFINITY, f64::min);
    0.01 * min_w2
}

/// One row of a gap sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub d: f64,
    pub delta_r: f64,
    pub asymptote: f64,
}

/// `Δ_R` of the equal split on unit-weight lines of `n` links against
/// `½ log₂ n!`, one row per `(n, D)` in ascending order.
pub fn gap_sweep(ns: std::ops::RangeInclusive<usize>, ds: &[f64]) -> Result<Vec<SweepRow>> {
    let mut ds = ds.to_vec();
    ds.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    for n in ns {
        let net = TreeNetwork::line(&vec![1.0; n])?;
        for &d in &ds {
            let profile = equal_split_profile(&net, d)?;
            rows.push(SweepRow {
                n,
                d,
                delta_r: gap_report(&net, &profile)?.delta_r_bits,
                asymptote: line_gap_asymptote(n),
            });
        }
    }
    Ok(rows)
}

fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<usize>> {
    let bad = || Error::InvalidArgument(format!("bad range `{s}`, expected A..B"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let range = match s.split_once("..") {
        Some((a, b)) => num(a)?..=num(b.trim_start_matches('='))?,
        None => num(s)?..=num(s)?,
    };
    if range.is_empty() || *range.start() == 0 {
        return Err(bad());
    }
    Ok(range)
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad number `{t}`")))
        })
        .collect()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn read_raw_map(path: &Path) -> Result<BTreeMap<String, f64>> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

/// Aggregation distortions keyed by sending node (`"3"`) or by link
/// (`"3->1"`).
fn read_node_map(path: &Path) -> Result<BTreeMap<NodeId, f64>> {
    read_raw_map(path)?
        .into_iter()
        .map(|(k, v)| {
            let node = if k.contains("->") {
                k.parse::<DirectedEdge>()?.from
            } else {
                NodeId(k.trim().parse().map_err(|_| {
                    Error::InvalidArgument(format!("bad node id `{k}`"))
                })?)
            };
            Ok((node, v))
        })
        .collect()
}

fn read_edge_map(path: &Path) -> Result<BTreeMap<DirectedEdge, f64>> {
    read_raw_map(path)?
        .into_iter()
        .map(|(k, v)| Ok((k.parse()?, v)))
        .collect()
}

// ---------------------------------------------------------------------------
// Output

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

/// Rounds every float in `v` to 12 significant digits.
fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            let r: f64 = format!("{x:.11e}").parse().expect("formatted float");
            json!(r + 0.0)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, x)| (k, round_json(x))).collect()),
        other => other,
    }
}

/// Six significant digits, positional inside `[1e-4, 1e6)`.
pub fn fmt_csv(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}").to_lowercase();
    }
    if x == 0.0 {
        return "0".into();
    }
    let a = x.abs();
    if (1e-4..1e6).contains(&a) {
        let decimals = (5 - a.log10().floor() as i32).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{x:.5e}");
        let (mantissa, exp) = s.split_once('e').expect("exponent form");
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}e{exp}")
    }
}

fn opt_csv(x: Option<f64>) -> String {
    x.map(fmt_csv).unwrap_or_default()
}

fn emit(out: &Output, default: Format, json: Value, csv: impl FnOnce() -> String) -> Result<()> {
    let text = match out.format.unwrap_or(default) {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&round_json(json)).expect("json value");
            s.push('\n');
            s
        }
        Format::Csv => csv(),
    };
    match &out.out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn bounds_csv(r: &BoundsReport) -> String {
    let mut s = String::from(
        "link,from,to,inc,tx,rx,rate_bits,outer_incremental_bits,cutset_bits,delta_r_bits\n",
    );
    for l in &r.per_link {
        s += &format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            l.link,
            l.from,
            l.to,
            fmt_csv(l.inc),
            fmt_csv(l.tx),
            fmt_csv(l.rx),
            fmt_csv(l.rate_bits),
            fmt_csv(l.outer_incremental_bits),
            fmt_csv(l.cutset_bits),
            fmt_csv(l.delta_r_bits)
        );
    }
    s += &format!(
        "total,,,{},,,{},{},{},{}\n",
        fmt_csv(r.total_distortion),
        fmt_csv(r.inner_bits),
        fmt_csv(r.outer_incremental_bits),
        fmt_csv(r.cutset_bits),
        fmt_csv(r.delta_r_bits)
    );
    s
}

fn allocation_csv(a: &RateAllocation) -> String {
    let mut s = String::from("link,from,to,inc,rate_bits\n");
    for l in &a.links {
        s += &format!(
            "{}->{},{},{},{},{}\n",
            l.from,
            l.to,
            l.from,
            l.to,
            fmt_csv(l.inc),
            fmt_csv(l.rate_bits)
        );
    }
    s += &format!(
        "total,,,{},{}\n",
        fmt_csv(a.total_distortion),
        fmt_csv(a.sum_rate_bits)
    );
    s
}

fn simulation_csv(r: &SimulationResult) -> String {
    let mut s = String::from("link_from,link_to,empirical_inc,ci,reference_inc\n");
    for l in &r.links {
        s += &format!(
            "{},{},{},{},{}\n",
            l.from,
            l.to,
            fmt_csv(l.empirical_inc),
            opt_csv(l.inc_ci),
            fmt_csv(l.reference_inc)
        );
    }
    s += &format!(
        "total,,{},{},{}\n",
        fmt_csv(r.empirical_total),
        opt_csv(r.total_ci),
        fmt_csv(r.reference_total)
    );
    s
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("n,D,delta_r,asymptote,delta_minus_asymptote\n");
    for r in rows {
        s += &format!(
            "{},{},{},{},{}\n",
            r.n,
            fmt_csv(r.d),
            fmt_csv(r.delta_r),
            fmt_csv(r.asymptote),
            fmt_csv(r.delta_r - r.asymptote)
        );
    }
    s
}

fn validate_csv(models: &[AnalyticModel]) -> String {
    let mut s = String::from("mode,from,to,d,tx,rx,inc,pythagoras_residual\n");
    for m in models {
        let mode = match m.mode {
            Mode::Aggregation => "aggregation",
            Mode::Consensus => "consensus",
        };
        for l in &m.links {
            s += &format!(
                "{mode},{},{},{},{},{},{},{}\n",
                l.from,
                l.to,
                fmt_csv(l.d),
                fmt_csv(l.tx),
                fmt_csv(l.rx),
                fmt_csv(l.inc),
                fmt_csv(l.pythagoras_residual)
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_number_format() {
        assert_eq!(fmt_csv(0.0), "0");
        assert_eq!(fmt_csv(0.25), "0.25");
        assert_eq!(fmt_csv(7.14385618977), "7.14386");
        assert_eq!(fmt_csv(123456.7), "123457");
        assert_eq!(fmt_csv(1e-6), "1e-6");
        assert_eq!(fmt_csv(-2.5e7), "-2.5e7");
        assert_eq!(fmt_csv(0.000123456789), "0.000123457");
    }

    #[test]
    fn json_rounding() {
        let v = round_json(json!({"a": 0.1 + 0.2, "b": [1.0 / 3.0], "c": 7}));
        assert_eq!(v["a"], json!(0.3));
        assert_eq!(v["b"][0], json!(0.333333333333));
        assert_eq!(v["c"], json!(7));
    }

    #[test]
    fn ranges_and_lists() {
        assert_eq!(parse_range("2..8").unwrap(), 2..=8);
        assert_eq!(parse_range("2..=4").unwrap(), 2..=4);
        assert_eq!(parse_range("3").unwrap(), 3..=3);
        assert!(parse_range("0..2").is_err());
        assert!(parse_range("5..2").is_err());
        assert_eq!(parse_list("1e-2, 1e-4").unwrap(), vec![1e-2, 1e-4]);
    }

    #[test]
    fn sweep_examples() {
        let rows = gap_sweep(1..=1, &[1e-2]).unwrap();
        assert_eq!(rows[0].delta_r, 0.0);
        assert_eq!(rows[0].asymptote, 0.0);

        let rows = gap_sweep(4..=4, &[1e-6]).unwrap();
        assert!((rows[0].delta_r - 2.2925).abs() <= 0.05);

        let rows = gap_sweep(8..=8, &[1e-6, 1e-2, 1e-4]).unwrap();
        assert_eq!(rows.iter().map(|r| r.d).collect::<Vec<_>>(), vec![1e-6, 1e-4, 1e-2]);
        let err: Vec<f64> = rows.iter().map(|r| (r.delta_r - r.asymptote).abs()).collect();
        assert!(err[0] < err[1] && err[1] < err[2]);
    }
}
