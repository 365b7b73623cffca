//! Command-line front end. Every command prints one JSON report.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use num_rational::Ratio;
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::belltest::{calibrate_c1, run_test2, CalibrationMode, TEST2_SCHEMA};
use crate::certify::{incorrect_accept_bound, povm_bound, state_error_bound};
use crate::delegation::{
    run_delegation, transcript_jsonl, AdversaryRegistry, Scenario, ScenarioConfig,
    DELEGATION_SCHEMA, SCENARIO_SCHEMA,
};
use crate::device::{DeviceRegistry, Target};
use crate::error::{Error, Result};
use crate::extraction::{power_norm, spectral_norm};
use crate::graphs::{path_graph, triangular_lattice, ColoredGraph};
use crate::graphtest::{run_test4, site_table_csv, stabilizer_failure_probability, TEST4_SCHEMA};
use crate::hilbert::{Matrix, C64};
use crate::seed::SeedTree;
use crate::stats::{hypergeom_pmf_exact, hypergeom_variance_exact};

pub const REPORT_SCHEMA: &str = "mbqc-selftest/cli-report/1";
pub const THREADS_ENV: &str = "MBQC_SELFTEST_THREADS";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "mbqc-selftest",
    version,
    about = "Self-tests for measurement-based quantum computation devices"
)]
pub struct Cli {
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Leave the wall-clock timestamp out of the report.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eight-group Bell-pair self-test.
    BellTest(BellArgs),
    /// Graph-state self-test.
    GraphTest(GraphTestArgs),
    /// Two-prover delegation run.
    Delegate(DelegateArgs),
    /// Size the acceptance constant c1.
    Calibrate(CalibrateArgs),
    /// Evaluate the certification bound formulas.
    Bounds(BoundsArgs),
    /// Brute-force cross-checks.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct AcceptArgs {
    #[arg(long, default_value_t = 1000)]
    pub m: u64,
    /// Acceptance constant; calibrated from --beta when absent.
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BellArgs {
    #[command(flatten)]
    pub accept: AcceptArgs,
    /// Device preset, `name` or `name:param`.
    #[arg(long, default_value = "honest")]
    pub device: String,
    /// Shorthand for `--device honest`.
    #[arg(long, conflicts_with = "device")]
    pub honest: bool,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Graph file (JSON).
    #[arg(long, conflicts_with_all = ["lattice", "path"])]
    pub graph: Option<PathBuf>,
    /// Triangular lattice `ROWSxCOLS`.
    #[arg(long, conflicts_with = "path")]
    pub lattice: Option<String>,
    /// Path graph on N vertices.
    #[arg(long)]
    pub path: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GraphTestArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub accept: AcceptArgs,
    #[arg(long, default_value = "honest")]
    pub device: String,
    /// Also write the per-site table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DelegateArgs {
    /// Scenario file; its fields replace the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long, default_value = "trusting")]
    pub scenario: String,
    #[arg(long, default_value = "honest")]
    pub prover1: String,
    #[arg(long, default_value = "honest")]
    pub prover2: String,
    #[command(flatten)]
    pub accept: AcceptArgs,
    /// Write the JSON-lines transcript here.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, default_value_t = 0.9)]
    pub beta: f64,
    /// `single`, `joint:<tests>` or `union:<sites>`.
    #[arg(long, default_value = "joint:1")]
    pub mode: String,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub m: f64,
    /// Observables per site entering the measurement bound.
    #[arg(long, default_value_t = 4.0)]
    pub s: f64,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(subcommand)]
    pub kind: OracleKind,
}

#[derive(Debug, Subcommand)]
pub enum OracleKind {
    /// Hypergeometric pmf and variance against subset enumeration.
    Hypergeom {
        #[arg(long, default_value_t = 10)]
        population: u64,
    },
    /// Exact honest and Z-corrupted stabilizer rejection.
    Stabilizer {
        #[command(flatten)]
        graph: GraphArgs,
    },
    /// SVD norm against power iteration and the Gram eigenvalue.
    Norm {
        #[arg(long, default_value_t = 6)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Exit code plus captured streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

#[derive(Debug, Serialize)]
struct Parameters {
    m: Option<u64>,
    c1: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Report {
    schema: &'static str,
    command: &'static str,
    parameters: Parameters,
    seed: Option<u64>,
    versions: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<u64>,
    pass: bool,
    result: Value,
}

fn versions() -> Value {
    json!({
        "crate": env!("CARGO_PKG_VERSION"),
        "test2": TEST2_SCHEMA,
        "test4": TEST4_SCHEMA,
        "delegation": DELEGATION_SCHEMA,
        "scenario": SCENARIO_SCHEMA,
    })
}

struct Outcome {
    command: &'static str,
    parameters: Parameters,
    seed: Option<u64>,
    pass: bool,
    result: Value,
}

fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("{v} is not in (0, 1)")))
    }
}

fn resolve_c1(a: &AcceptArgs, mode: CalibrationMode) -> Result<(f64, Option<Value>)> {
    check_unit("alpha", a.alpha)?;
    check_unit("beta", a.beta)?;
    match a.c1 {
        Some(c) if c.is_finite() && c >= 0.0 => Ok((c, None)),
        Some(c) => Err(Error::param(
            "c1",
            format!("{c} is not a non-negative number"),
        )),
        None => {
            let cal = calibrate_c1(a.beta, mode)?;
            Ok((cal.c1, Some(serde_json::to_value(cal)?)))
        }
    }
}

fn parameters(a: &AcceptArgs, c1: f64) -> Parameters {
    Parameters {
        m: Some(a.m),
        c1: Some(c1),
        alpha: Some(a.alpha),
        beta: Some(a.beta),
    }
}

fn load_graph(g: &GraphArgs) -> Result<ColoredGraph> {
    if let Some(p) = &g.graph {
        return ColoredGraph::load(p);
    }
    if let Some(spec) = &g.lattice {
        let (r, c) = spec
            .split_once('x')
            .ok_or_else(|| Error::param("lattice", format!("`{spec}` is not ROWSxCOLS")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::param("lattice", format!("`{spec}` is not ROWSxCOLS")))
        };
        return triangular_lattice(parse(r)?, parse(c)?);
    }
    if let Some(n) = g.path {
        return path_graph(n);
    }
    Err(Error::param("graph", "give --graph, --lattice or --path"))
}

fn target_of(g: &ColoredGraph) -> Target {
    Target {
        n: g.n(),
        edges: g.edges().to_vec(),
    }
}

fn parse_mode(s: &str) -> Result<CalibrationMode> {
    let bad = || {
        Error::param(
            "mode",
            format!("`{s}` is not single, joint:<tests> or union:<sites>"),
        )
    };
    match s.split_once(':') {
        None if s == "single" => Ok(CalibrationMode::SingleInequality),
        Some(("joint", t)) => Ok(CalibrationMode::Joint {
            tests: t.parse().map_err(|_| bad())?,
        }),
        Some(("union", n)) => Ok(CalibrationMode::Union {
            sites: n.parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

fn bell_test(a: &BellArgs) -> Result<Outcome> {
    let spec = if a.honest {
        "honest"
    } else {
        a.device.as_str()
    };
    let device = DeviceRegistry::default().build(spec, &Target::bell())?;
    let (c1, calibration) = resolve_c1(&a.accept, CalibrationMode::Joint { tests: 1 })?;
    let report = run_test2(&device, a.accept.m, c1, a.accept.seed)?;
    Ok(Outcome {
        command: "bell-test",
        parameters: parameters(&a.accept, c1),
        seed: Some(a.accept.seed),
        pass: report.pass,
        result: json!({ "calibration": calibration, "report": report }),
    })
}

fn graph_test(a: &GraphTestArgs) -> Result<Outcome> {
    let graph = load_graph(&a.graph)?;
    let device = DeviceRegistry::default().build(&a.device, &target_of(&graph))?;
    let tests = u32::try_from(graph.n()).map_err(|_| Error::param("graph", "too many vertices"))?;
    let (c1, calibration) = resolve_c1(&a.accept, CalibrationMode::Joint { tests })?;
    let report = run_test4(&device, &graph, a.accept.m, c1, a.accept.seed)?;
    if let Some(p) = &a.csv {
        std::fs::write(p, site_table_csv(&report)?)?;
    }
    Ok(Outcome {
        command: "graph-test",
        parameters: parameters(&a.accept, c1),
        seed: Some(a.accept.seed),
        pass: report.pass,
        result: json!({ "calibration": calibration, "report": report }),
    })
}

fn delegate(a: &DelegateArgs) -> Result<Outcome> {
    let (graph, scenario, p1, p2, m, c1, seed) = match &a.config {
        Some(path) => {
            let cfg: ScenarioConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            if cfg.schema != SCENARIO_SCHEMA {
                return Err(Error::param(
                    "config",
                    format!("unsupported schema `{}`", cfg.schema),
                ));
            }
            let base = path.parent().unwrap_or(Path::new("."));
            let graph = ColoredGraph::load(&base.join(&cfg.graph))?;
            (
                graph,
                cfg.scenario,
                cfg.prover1,
                cfg.prover2,
                cfg.m,
                cfg.c1,
                cfg.seed,
            )
        }
        None => {
            let graph = load_graph(&a.graph)?;
            let tests =
                u32::try_from(graph.n()).map_err(|_| Error::param("graph", "too many vertices"))?;
            let (c1, _) = resolve_c1(&a.accept, CalibrationMode::Joint { tests })?;
            (
                graph,
                a.scenario.parse::<Scenario>()?,
                a.prover1.clone(),
                a.prover2.clone(),
                a.accept.m,
                c1,
                a.accept.seed,
            )
        }
    };
    let reg = AdversaryRegistry::default();
    let t = target_of(&graph);
    let prover1 = reg.build_prover1(&p1, &t)?;
    let prover2 = reg.build_prover2(&p2, &t)?;
    let run = run_delegation(
        &graph,
        m,
        c1,
        scenario,
        prover1.as_ref(),
        prover2.as_ref(),
        seed,
    )?;
    if let Some(p) = &a.transcript {
        std::fs::write(p, transcript_jsonl(&run)?)?;
    }
    Ok(Outcome {
        command: "delegate",
        parameters: Parameters {
            m: Some(m),
            c1: Some(c1),
            alpha: Some(run.report.test4.alpha),
            beta: None,
        },
        seed: Some(seed),
        pass: run.report.pass,
        result: serde_json::to_value(&run.report)?,
    })
}

fn calibrate(a: &CalibrateArgs) -> Result<Outcome> {
    let cal = calibrate_c1(a.beta, parse_mode(&a.mode)?)?;
    Ok(Outcome {
        command: "calibrate",
        parameters: Parameters {
            m: None,
            c1: Some(cal.c1),
            alpha: None,
            beta: Some(a.beta),
        },
        seed: None,
        pass: true,
        result: serde_json::to_value(cal)?,
    })
}

fn bounds(a: &BoundsArgs) -> Result<Outcome> {
    check_unit("alpha", a.alpha)?;
    if !(a.delta >= 0.0) || !(a.m > 0.0) {
        return Err(Error::param("delta/m", "need delta >= 0 and m > 0"));
    }
    Ok(Outcome {
        command: "bounds",
        parameters: Parameters {
            m: None,
            c1: None,
            alpha: Some(a.alpha),
            beta: None,
        },
        seed: None,
        pass: true,
        result: json!({
            "n": a.n,
            "delta": a.delta,
            "m": a.m,
            "s": a.s,
            "measurement": povm_bound(a.n, a.delta, a.s),
            "state": state_error_bound(a.n, a.delta, a.alpha, a.m),
            "accept": incorrect_accept_bound(a.n, a.delta, a.alpha, a.m),
        }),
    })
}

fn hypergeom_oracle(population: u64) -> Result<Value> {
    if population > 16 {
        return Err(Error::param("population", "enumeration is limited to 16"));
    }
    let n = population as u32;
    let mut mismatches = Vec::new();
    let mut cases = 0u64;
    for k in 0..=n {
        let marked = (1u32 << k) - 1;
        for m in 0..=n {
            let mut counts = vec![0u128; (m.min(k) + 1) as usize];
            let mut total = 0u128;
            for mask in 0u32..(1u32 << n) {
                if mask.count_ones() == m {
                    counts[(mask & marked).count_ones() as usize] += 1;
                    total += 1;
                }
            }
            let mut mean = Ratio::from_integer(0u128);
            let mut second = Ratio::from_integer(0u128);
            for (x, &cnt) in counts.iter().enumerate() {
                cases += 1;
                let want = Ratio::new(cnt, total);
                let got = hypergeom_pmf_exact(population, u64::from(m), u64::from(k), x as u64)?;
                if want != got {
                    mismatches.push(json!({"n": population, "m": m, "k": k, "x": x}));
                }
                mean += want * (x as u128);
                second += want * ((x * x) as u128);
            }
            let var = second - mean * mean;
            if var != hypergeom_variance_exact(population, u64::from(m), u64::from(k))? {
                mismatches.push(json!({"n": population, "m": m, "k": k, "variance": true}));
            }
        }
    }
    Ok(json!({ "population": population, "cases": cases, "mismatches": mismatches }))
}

fn stabilizer_oracle(g: &GraphArgs) -> Result<Value> {
    let graph = load_graph(g)?;
    let reg = DeviceRegistry::default();
    let t = target_of(&graph);
    let honest = reg.build("honest", &t)?;
    let honest_rejection = (0..graph.num_colors())
        .map(|c| stabilizer_failure_probability(&honest, &graph, c))
        .collect::<Result<Vec<_>>>()?;
    let mut corrupted = Vec::new();
    for v in 0..graph.n() {
        let d = reg.build(&format!("zflip:{v}"), &t)?;
        corrupted.push(stabilizer_failure_probability(&d, &graph, graph.color(v))?);
    }
    let ok = honest_rejection.iter().all(|&r| r < 1e-12)
        && corrupted.iter().all(|&r| (r - 1.0).abs() < 1e-12);
    Ok(json!({
        "n": graph.n(),
        "honest_rejection": honest_rejection,
        "zflip_rejection": corrupted,
        "mismatches": if ok { Vec::<Value>::new() } else { vec![json!("stabilizer rejection off target")] },
    }))
}

fn norm_oracle(dim: usize, trials: u64, seed: u64) -> Result<Value> {
    if dim == 0 || dim > 256 {
        return Err(Error::param("dim", "must be in 1..=256"));
    }
    let tree = SeedTree::new(seed);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let mut rng = tree.stream(&[], t);
        let a = Matrix::from_fn(dim, dim, |_, _| {
            C64::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            )
        });
        let svd = spectral_norm(&a);
        let power = power_norm(&a);
        let gram = nalgebra::SymmetricEigen::new(a.adjoint() * &a)
            .eigenvalues
            .iter()
            .fold(0.0f64, |x, &y| x.max(y))
            .sqrt();
        worst = worst
            .max((svd - power).abs() / svd)
            .max((svd - gram).abs() / svd);
    }
    let ok = worst < 1e-6;
    Ok(json!({
        "dim": dim,
        "trials": trials,
        "worst_relative_gap": worst,
        "mismatches": if ok { Vec::<Value>::new() } else { vec![json!("norms disagree")] },
    }))
}

fn oracle(a: &OracleArgs) -> Result<Outcome> {
    let (seed, result) = match &a.kind {
        OracleKind::Hypergeom { population } => (None, hypergeom_oracle(*population)?),
        OracleKind::Stabilizer { graph } => (None, stabilizer_oracle(graph)?),
        OracleKind::Norm { dim, trials, seed } => (Some(*seed), norm_oracle(*dim, *trials, *seed)?),
    };
    let pass = result["mismatches"].as_array().is_some_and(Vec::is_empty);
    Ok(Outcome {
        command: "oracle",
        parameters: Parameters {
            m: None,
            c1: None,
            alpha: None,
            beta: None,
        },
        seed,
        pass,
        result,
    })
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::BellTest(a) => bell_test(a),
        Command::GraphTest(a) => graph_test(a),
        Command::Delegate(a) => delegate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Bounds(a) => bounds(a),
        Command::Oracle(a) => oracle(a),
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidParameter { .. } => "invalid-parameter",
        Error::InvalidGraph(_) => "invalid-graph",
        Error::UnknownStrategy { .. } => "unknown-strategy",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::InsufficientCopies { .. } => "insufficient-copies",
        Error::DimensionLimit { .. } | Error::Dimension(_) => "dimension",
        Error::Protocol(_) => "protocol",
        _ => "runtime",
    }
}

fn diagnostic(kind: &str, message: &str) -> String {
    let mut s = json!({ "error": kind, "message": message }).to_string();
    s.push('\n');
    s
}

fn configure_threads() {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if threads > 0 {
        // a second call fails once the pool exists; the first setting stands
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

/// Parses `argv` (program name first), runs the command and captures output.
pub fn execute<I, T>(argv: I) -> Execution
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_PASS,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            return if code == EXIT_PASS {
                Execution {
                    code,
                    stdout: text,
                    stderr: String::new(),
                }
            } else {
                Execution {
                    code,
                    stdout: String::new(),
                    stderr: diagnostic("usage", text.trim()),
                }
            };
        }
    };
    configure_threads();
    let outcome = match dispatch(&cli) {
        Ok(o) => o,
        Err(e) => {
            return Execution {
                code: EXIT_USAGE,
                stdout: String::new(),
                stderr: diagnostic(error_kind(&e), &e.to_string()),
            }
        }
    };
    let timestamp = (!cli.no_timestamp).then(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let report = Report {
        schema: REPORT_SCHEMA,
        command: outcome.command,
        parameters: outcome.parameters,
        seed: outcome.seed,
        versions: versions(),
        timestamp,
        pass: outcome.pass,
        result: outcome.result,
    };
    let mut text = match serde_json::to_string_pretty(&report) {
        Ok(t) => t,
        Err(e) => {
            return Execution {
                code: EXIT_USAGE,
                stdout: String::new(),
                stderr: diagnostic("json", &e.to_string()),
            }
        }
    };
    text.push('\n');
    let code = if report.pass { EXIT_PASS } else { EXIT_FAIL };
    match &cli.out {
        Some(p) => match std::fs::write(p, &text) {
            Ok(()) => Execution {
                code,
                stdout: String::new(),
                stderr: String::new(),
            },
            Err(e) => Execution {
                code: EXIT_USAGE,
                stdout: String::new(),
                stderr: diagnostic("io", &e.to_string()),
            },
        },
        None => Execution {
            code,
            stdout: text,
            stderr: String::new(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> Execution {
        execute(std::iter::once("mbqc-selftest").chain(args.iter().copied()))
    }

    #[test]
    fn bounds_example() {
        let e = run(&[
            "bounds",
            "--n",
            "4",
            "--delta",
            "0.01",
            "--alpha",
            "0.05",
            "--m",
            "100",
            "--no-timestamp",
        ]);
        assert_eq!(e.code, EXIT_PASS, "{}", e.stderr);
        let v: Value = serde_json::from_str(&e.stdout).unwrap();
        assert!((v["result"]["measurement"].as_f64().unwrap() - 0.32).abs() < 1e-12);
        assert!((v["result"]["state"].as_f64().unwrap() - 0.2415).abs() < 1e-12);
        assert!((v["result"]["accept"].as_f64().unwrap() - 0.5615).abs() < 1e-12);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(&["bell-test", "--m"]).code, EXIT_USAGE);
        assert_eq!(run(&["nonsense"]).code, EXIT_USAGE);
        let e = run(&["bell-test", "--beta", "1.5"]);
        assert_eq!(e.code, EXIT_USAGE);
        let v: Value = serde_json::from_str(e.stderr.trim()).unwrap();
        assert_eq!(v["error"], "invalid-parameter");
        assert_eq!(run(&["graph-test", "--lattice", "2by2"]).code, EXIT_USAGE);
    }

    #[test]
    fn honest_bell_test_passes() {
        let e = run(&[
            "bell-test",
            "--honest",
            "--m",
            "1000",
            "--seed",
            "7",
            "--no-timestamp",
        ]);
        assert_eq!(e.code, EXIT_PASS, "{}", e.stdout);
        let v: Value = serde_json::from_str(&e.stdout).unwrap();
        assert_eq!(v["seed"], 7);
        assert_eq!(v["parameters"]["m"], 1000);
        assert!(v["timestamp"].is_null());
    }

    #[test]
    fn corrupted_graph_test_exits_one() {
        let e = run(&[
            "graph-test",
            "--path",
            "3",
            "--device",
            "zflip:1",
            "--m",
            "20",
            "--seed",
            "1",
            "--no-timestamp",
        ]);
        assert_eq!(e.code, EXIT_FAIL);
    }

    #[test]
    fn reports_are_byte_identical() {
        let args = [
            "graph-test",
            "--lattice",
            "2x2",
            "--m",
            "10",
            "--seed",
            "4",
            "--no-timestamp",
        ];
        assert_eq!(run(&args), run(&args));
    }

    #[test]
    fn oracles_pass() {
        assert_eq!(
            run(&["oracle", "hypergeom", "--population", "8"]).code,
            EXIT_PASS
        );
        assert_eq!(
            run(&["oracle", "stabilizer", "--lattice", "3x3"]).code,
            EXIT_PASS
        );
        assert_eq!(run(&["oracle", "norm", "--dim", "5"]).code, EXIT_PASS);
    }

    #[test]
    fn calibrate_modes() {
        assert_eq!(run(&["calibrate", "--mode", "single"]).code, EXIT_PASS);
        assert_eq!(run(&["calibrate", "--mode", "union:9"]).code, EXIT_PASS);
        assert_eq!(run(&["calibrate", "--mode", "joint:x"]).code, EXIT_USAGE);
    }

    #[test]
    fn delegate_writes_transcript() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("t.jsonl");
        let e = run(&[
            "delegate",
            "--path",
            "3",
            "--scenario",
            "teleport",
            "--m",
            "3",
            "--c1",
            "3",
            "--transcript",
            t.to_str().unwrap(),
            "--no-timestamp",
        ]);
        assert_eq!(e.code, EXIT_PASS, "{}{}", e.stdout, e.stderr);
        let text = std::fs::read_to_string(&t).unwrap();
        let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["schema"], crate::delegation::TRANSCRIPT_SCHEMA);
    }
}
