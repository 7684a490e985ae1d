use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dpgraph::estimator::{fit, MomentTargets, SolveOptions};
use dpgraph::graph::{degrees, parse_edge_list};
use dpgraph::privacy::{privatize, NoisyBiDegree};
use dpgraph::simulation::{
    qq_export, read_stats_dump, run_experiment, write_qq_csv, EpsSpec, ExperimentConfig, LSpec,
    DEFAULT_REPS, FULL_REPS,
};
use dpgraph::{Error, Model, StatKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EXIT_NONEXISTENT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_USAGE: u8 = 64;

const EXIT_CODES: &str = "\
Exit codes:
  0   success
  1   I/O or input format error
  2   the estimate does not exist (reason on stderr)
  3   numerical failure
  64  usage error

Environment:
  DPGRAPH_THREADS  worker threads for `simulate` (0 or unset = all cores)";

#[derive(Parser)]
#[command(name = "dpgraph", version, about = "Edge-private bi-degree release and estimation for directed graphs", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Privatize(PrivatizeArgs),
    Estimate(EstimateArgs),
    Simulate(SimulateArgs),
    Qq(QqArgs),
}

/// Release the bi-degree sequence of an edge list with discrete Laplace noise.
#[derive(Args)]
#[command(after_help = "\
Input: one `<src> <dst>` edge per line, 1-based ids; `#` lines are comments;
an optional first line `n=<count>` declares the node count.

Output JSON: {\"n\": int, \"epsilon\": float, \"z_out\": [int], \"z_in\": [int], \"seed\": uint}")]
struct PrivatizeArgs {
    /// Edge-list file.
    #[arg(short, long)]
    input: PathBuf,
    /// Privacy budget, > 0.
    #[arg(short, long, value_parser = parse_epsilon)]
    epsilon: f64,
    #[arg(short, long, default_value_t = 0)]
    seed: u64,
    /// Output file (stdout if omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Fit node parameters to raw or privatized degrees.
#[derive(Args)]
#[command(after_help = "\
Input is an edge list with --raw, a privatized-degree JSON with --private, and
detected from its first character otherwise.

Output JSON: {\"n\", \"model\", \"epsilon\" (null for raw degrees), \"alpha\" [n],
\"beta\" [n, last pinned to 0], \"se_alpha\", \"se_beta\" (empty when no estimate
exists), \"converged\", \"exists\", \"iterations\", \"residual_norm\"}")]
struct EstimateArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// probit or logit.
    #[arg(short, long, default_value = "probit", value_parser = parse_model)]
    model: Model,
    /// Treat the input as an edge list and fit its exact degrees.
    #[arg(long, conflicts_with = "private")]
    raw: bool,
    /// Treat the input as privatized degrees; standard errors include the noise term.
    #[arg(long)]
    private: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Monte-Carlo coverage study.
#[derive(Args)]
#[command(after_help = "\
Output CSV columns: n, L_spec, eps_spec, pair_i, pair_j, stat_kind, coverage,
ci_length_full, ci_length_half, nonexist_freq, reps. Coverage and lengths are
over replications where the estimate exists.

--dump-stats CSV columns: rep, pair_i, pair_j, stat_kind, value")]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    /// zero, loglogn or sqrtlogn.
    #[arg(long = "L", default_value = "zero", value_parser = parse_l)]
    l: LSpec,
    /// fixed:<v>, logn_n14 (ln n / n^(1/4)) or logn_n12 (ln n / n^(1/2)).
    #[arg(long, default_value = "fixed:2", value_parser = parse_eps)]
    eps: EpsSpec,
    #[arg(long, default_value_t = DEFAULT_REPS, conflicts_with = "full_paper_reps")]
    reps: usize,
    /// Use 10000 replications.
    #[arg(long, visible_alias = "full-reps")]
    full_paper_reps: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pair `i,j` (1-based); repeat or separate with `;`. Defaults to
    /// (1,2), (n/2,n/2+1), (n-1,n).
    #[arg(long, value_delimiter = ';', value_parser = parse_pair)]
    pairs: Vec<(usize, usize)>,
    /// Comma-separated subset of xi, zeta, eta.
    #[arg(long, value_delimiter = ',', default_value = "xi", value_parser = parse_stat)]
    stats: Vec<StatKind>,
    #[arg(long, default_value = "probit", value_parser = parse_model)]
    model: Model,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write every standardized statistic to this CSV.
    #[arg(long)]
    dump_stats: Option<PathBuf>,
}

/// Quantile-quantile table of dumped statistics against N(0, 1).
#[derive(Args)]
#[command(after_help = "\
Input: a --dump-stats CSV from `simulate`.
Output CSV columns: rank, empirical, theoretical, where theoretical is the
standard normal quantile at (rank - 0.5) / R.")]
struct QqArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Keep only this pair `i,j`.
    #[arg(long, value_parser = parse_pair)]
    pair: Option<(usize, usize)>,
    /// Keep only this statistic.
    #[arg(long, value_parser = parse_stat)]
    stat: Option<StatKind>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_epsilon(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("epsilon must be finite and > 0, got {s}"))
    }
}

fn parse_model(s: &str) -> Result<Model, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_l(s: &str) -> Result<LSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_eps(s: &str) -> Result<EpsSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_stat(s: &str) -> Result<StatKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("pair '{s}' must look like i,j"))?;
    let num = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| format!("pair '{s}' must hold two positive integers"))
    };
    Ok((num(a)?, num(b)?))
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn cmd_privatize(args: PrivatizeArgs) -> anyhow::Result<()> {
    let parsed = parse_edge_list(&read(&args.input)?)
        .with_context(|| format!("in {}", args.input.display()))?;
    if parsed.duplicates > 0 {
        eprintln!("warning: {} duplicate edge line(s) ignored", parsed.duplicates);
    }
    let d = degrees(&parsed.graph);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut z = privatize(&d, args.epsilon, &mut rng)?;
    z.seed = Some(args.seed);
    let mut json = z.to_json()?;
    json.push('\n');
    emit(args.output.as_deref(), json.as_bytes())?;
    eprintln!(
        "n={} edges={} epsilon={} lambda={:.6}",
        d.n(),
        d.edge_count(),
        z.params.epsilon,
        z.params.lambda
    );
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> anyhow::Result<()> {
    let bytes = read(&args.input)?;
    let private = if args.raw || args.private {
        args.private
    } else {
        bytes.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'{')
    };
    let opts = SolveOptions::default();
    let res = if private {
        let text = String::from_utf8(bytes).context("input is not UTF-8")?;
        let z = NoisyBiDegree::from_json(&text).with_context(|| format!("in {}", args.input.display()))?;
        fit(&MomentTargets::from(&z), &args.model, Some(&z.params), &opts)?
    } else {
        let parsed = parse_edge_list(&bytes).with_context(|| format!("in {}", args.input.display()))?;
        let d = degrees(&parsed.graph);
        fit(&MomentTargets::from(&d), &args.model, None, &opts)?
    };
    let mut json = res.to_json()?;
    json.push('\n');
    emit(args.output.as_deref(), json.as_bytes())?;
    res.into_existing()?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::new(args.n, args.l, args.eps);
    cfg.reps = if args.full_paper_reps { FULL_REPS } else { args.reps };
    cfg.seed = args.seed;
    if !args.pairs.is_empty() {
        cfg.pairs = args.pairs;
    }
    cfg.stat_kinds = args.stats;
    cfg.model = args.model;
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let res = run_experiment(&cfg)?;
    let mut csv = Vec::new();
    res.report.write_csv(&mut csv)?;
    emit(args.output.as_deref(), &csv)?;
    if let Some(path) = args.dump_stats.as_deref() {
        let mut dump = Vec::new();
        res.write_stats_dump(&mut dump)?;
        emit(Some(path), &dump)?;
    }
    eprintln!(
        "n={} epsilon={:.5} reps={} nonexist={:.4} runtime={:.2}s",
        cfg.n,
        res.report.epsilon,
        res.report.reps,
        res.report.nonexist_freq,
        res.report.runtime_secs
    );
    Ok(())
}

fn cmd_qq(args: QqArgs) -> anyhow::Result<()> {
    let rows = read_stats_dump(read(&args.input)?.as_slice())
        .with_context(|| format!("in {}", args.input.display()))?;
    let values: Vec<f64> = rows
        .iter()
        .filter(|r| args.pair.is_none_or(|p| p == (r.pair_i, r.pair_j)))
        .filter(|r| args.stat.is_none_or(|k| k == r.stat_kind))
        .map(|r| r.value)
        .collect();
    if values.is_empty() {
        bail!(Error::Contract(format!(
            "{} holds no statistics matching the filters",
            args.input.display()
        )));
    }
    let points = qq_export(&values)?;
    let mut csv = Vec::new();
    write_qq_csv(&points, &mut csv)?;
    emit(args.output.as_deref(), &csv)
}

/// An argument combination that parses but is rejected by validation.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::NonExistent { .. }) => EXIT_NONEXISTENT,
        Some(Error::NumericalFailure(_)) => EXIT_NUMERICAL,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Privatize(a) => cmd_privatize(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Qq(a) => cmd_qq(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
