//! Monte-Carlo harness: sample a graph at known parameters, privatize its
//! degrees, estimate, and tabulate interval coverage, interval length and
//! the frequency with which no estimate exists.
//!
//! Each replication owns an RNG stream derived from `(seed, rep_index)` by
//! [`rep_seed`], so results do not depend on how replications are scheduled
//! across threads.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, domain, Error, NonExistence, Result};
use crate::estimator::{
    contrast_interval, fit, standardized_stats_with, MomentTargets, SolveOptions, StatKind,
    VarianceMode,
};
use crate::graph::{degrees, expected_degrees, sample_graph, ParameterVector};
use crate::model::Model;
use crate::privacy::{deviation_bound, max_deviation, privatize};
use crate::stats::normal_quantile;

pub const DEFAULT_REPS: usize = 1000;
pub const FULL_REPS: usize = 10_000;
/// Environment variable capping harness worker threads (0 or unset = auto).
pub const THREADS_ENV: &str = "DPGRAPH_THREADS";

/// Magnitude `L` of the linear parameter design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LSpec {
    Zero,
    LogLogN,
    SqrtLogN,
}

impl LSpec {
    pub const ALL: [LSpec; 3] = [LSpec::Zero, LSpec::LogLogN, LSpec::SqrtLogN];

    pub fn value(self, n: usize) -> f64 {
        let ln = (n as f64).ln();
        match self {
            LSpec::Zero => 0.0,
            LSpec::LogLogN => ln.ln(),
            LSpec::SqrtLogN => ln.sqrt(),
        }
    }
}

impl fmt::Display for LSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LSpec::Zero => "zero",
            LSpec::LogLogN => "loglogn",
            LSpec::SqrtLogN => "sqrtlogn",
        })
    }
}

impl FromStr for LSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zero" | "0" => Ok(LSpec::Zero),
            "loglogn" => Ok(LSpec::LogLogN),
            "sqrtlogn" => Ok(LSpec::SqrtLogN),
            other => Err(domain(format!(
                "unknown L spec '{other}' (allowed: zero, loglogn, sqrtlogn)"
            ))),
        }
    }
}

/// Privacy budget schedule as a function of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EpsSpec {
    Fixed(f64),
    /// `ln n / n^{1/4}`.
    LogNOverN14,
    /// `ln n / n^{1/2}`.
    LogNOverN12,
}

impl EpsSpec {
    pub fn value(self, n: usize) -> f64 {
        let nf = n as f64;
        match self {
            EpsSpec::Fixed(v) => v,
            EpsSpec::LogNOverN14 => nf.ln() / nf.powf(0.25),
            EpsSpec::LogNOverN12 => nf.ln() / nf.sqrt(),
        }
    }
}

impl fmt::Display for EpsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsSpec::Fixed(v) => write!(f, "fixed:{v}"),
            EpsSpec::LogNOverN14 => f.write_str("logn_n14"),
            EpsSpec::LogNOverN12 => f.write_str("logn_n12"),
        }
    }
}

impl FromStr for EpsSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let bad = || {
            domain(format!(
                "unknown epsilon spec '{s}' (allowed: fixed:<v>, logn_n14, logn_n12)"
            ))
        };
        match lower.as_str() {
            "logn_n14" | "logn_over_n14" => Ok(EpsSpec::LogNOverN14),
            "logn_n12" | "logn_over_n12" => Ok(EpsSpec::LogNOverN12),
            _ => {
                let v: f64 = lower
                    .strip_prefix("fixed:")
                    .ok_or_else(bad)?
                    .parse()
                    .map_err(|_| bad())?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(domain(format!("fixed epsilon must be finite and > 0, got {v}")));
                }
                Ok(EpsSpec::Fixed(v))
            }
        }
    }
}

/// `(1, 2)`, `(n/2, n/2 + 1)`, `(n - 1, n)`, 1-based.
pub fn default_pairs(n: usize) -> Vec<(usize, usize)> {
    vec![(1, 2), (n / 2, n / 2 + 1), (n - 1, n)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    pub l_spec: LSpec,
    pub eps_spec: EpsSpec,
    pub reps: usize,
    pub seed: u64,
    /// 1-based pairs.
    pub pairs: Vec<(usize, usize)>,
    pub model: Model,
    pub stat_kinds: Vec<StatKind>,
    pub level: f64,
    pub variance_mode: VarianceMode,
    pub solve: SolveOptions,
}

impl ExperimentConfig {
    /// Defaults: 1000 reps, seed 0, the three standard pairs, `xi` only,
    /// probit, 95% intervals.
    pub fn new(n: usize, l_spec: LSpec, eps_spec: EpsSpec) -> Self {
        Self {
            n,
            l_spec,
            eps_spec,
            reps: DEFAULT_REPS,
            seed: 0,
            pairs: default_pairs(n),
            model: Model::Probit,
            stat_kinds: vec![StatKind::Xi],
            level: 0.95,
            variance_mode: VarianceMode::DiagonalOnly,
            solve: SolveOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(domain(format!("n must be >= 4, got {}", self.n)));
        }
        if self.reps == 0 {
            return Err(domain("reps must be >= 1"));
        }
        if self.pairs.is_empty() || self.stat_kinds.is_empty() {
            return Err(domain("need at least one pair and one statistic"));
        }
        for &(i, j) in &self.pairs {
            if i == 0 || j == 0 || i > self.n || j > self.n || i == j {
                return Err(domain(format!("pair ({i},{j}) invalid for n = {}", self.n)));
            }
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(domain(format!("level must be in (0, 1), got {}", self.level)));
        }
        let eps = self.epsilon();
        if !(eps.is_finite() && eps > 0.0) {
            return Err(domain(format!("scheduled epsilon {eps} is not positive")));
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        self.eps_spec.value(self.n)
    }

    /// `(pair, kind)` combinations that are evaluated. Pairs touching the
    /// pinned `beta_n` are skipped for `zeta` and `eta`.
    pub fn plan(&self) -> Vec<((usize, usize), StatKind)> {
        let mut out = Vec::new();
        for &kind in &self.stat_kinds {
            for &pair in &self.pairs {
                if kind.accepts(self.n, pair) {
                    out.push((pair, kind));
                }
            }
        }
        out
    }
}

/// `alpha*_{i+1} = (n - 1 - i) L / (n - 1)`, `beta*_i = alpha*_i` for
/// `i < n`, `beta*_n = 0`.
pub fn make_true_params(n: usize, l_spec: LSpec) -> Result<ParameterVector> {
    if n < 2 {
        return Err(domain(format!("need n >= 2, got {n}")));
    }
    let l = l_spec.value(n);
    let alpha: Vec<f64> = (0..n)
        .map(|i| (n - 1 - i) as f64 * l / (n - 1) as f64)
        .collect();
    let beta = alpha[..n - 1].to_vec();
    ParameterVector::new(alpha, beta)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `rep_index`: `splitmix64(seed ^ splitmix64(rep_index))`.
pub fn rep_seed(seed: u64, rep_index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(rep_index))
}

/// ChaCha8 stream for one replication.
pub fn rep_rng(seed: u64, rep_index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(rep_seed(seed, rep_index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStat {
    pub pair: (usize, usize),
    pub kind: StatKind,
    pub value: f64,
    pub covered: bool,
    pub ci_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep_index: usize,
    pub epsilon: f64,
    pub exists: bool,
    pub failure: Option<NonExistence>,
    pub iterations: usize,
    /// `|theta_hat - theta*|_inf` when the estimate exists.
    pub theta_error: Option<f64>,
    /// `max |z - E z|` over all noisy degrees.
    pub deviation: f64,
    pub deviation_bound: f64,
    pub stats: Vec<PairStat>,
}

impl ReplicationRecord {
    pub fn deviation_ok(&self) -> bool {
        self.deviation <= self.deviation_bound
    }
}

/// Sample, privatize, estimate and test one replication.
pub fn run_replication(cfg: &ExperimentConfig, rep_index: usize) -> Result<ReplicationRecord> {
    cfg.validate()?;
    let truth = make_true_params(cfg.n, cfg.l_spec)?;
    replicate(cfg, &truth, &cfg.plan(), rep_index)
}

fn replicate(
    cfg: &ExperimentConfig,
    truth: &ParameterVector,
    plan: &[((usize, usize), StatKind)],
    rep_index: usize,
) -> Result<ReplicationRecord> {
    let eps = cfg.epsilon();
    let mut rng = rep_rng(cfg.seed, rep_index as u64);
    let g = sample_graph(truth, &cfg.model, &mut rng);
    let mut noisy = privatize(&degrees(&g), eps, &mut rng)?;
    noisy.seed = Some(rep_seed(cfg.seed, rep_index as u64));

    let (exp_out, exp_in) = expected_degrees(truth, &cfg.model);
    let deviation = max_deviation(&noisy, &exp_out, &exp_in);

    let z = MomentTargets::from(&noisy);
    let res = fit(&z, &cfg.model, Some(&noisy.params), &cfg.solve)?;
    let mut stats = Vec::new();
    let mut theta_error = None;
    if res.exists {
        theta_error = Some(
            res.theta_hat
                .to_free()
                .iter()
                .zip(truth.to_free())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())),
        );
        let truth_free = truth.to_free();
        for &(pair, kind) in plan {
            let value = standardized_stats_with(&res, truth, &[pair], kind, cfg.variance_mode)?[0];
            let ci = contrast_interval(&res, kind, pair, cfg.level, cfg.variance_mode)?;
            let target = contrast_value(&truth_free, cfg.n, pair, kind);
            stats.push(PairStat {
                pair,
                kind,
                value,
                covered: ci.contains(target),
                ci_length: ci.length,
            });
        }
    }
    Ok(ReplicationRecord {
        rep_index,
        epsilon: eps,
        exists: res.exists,
        failure: res.failure,
        iterations: res.iterations,
        theta_error,
        deviation,
        deviation_bound: deviation_bound(cfg.n, eps)?,
        stats,
    })
}

fn contrast_value(free: &[f64], n: usize, (i, j): (usize, usize), kind: StatKind) -> f64 {
    match kind {
        StatKind::Xi => free[i - 1] - free[j - 1],
        StatKind::Zeta => free[i - 1] + free[n + j - 1],
        StatKind::Eta => free[n + i - 1] - free[n + j - 1],
    }
}

/// Harness worker count from [`THREADS_ENV`]; `0` means the rayon default.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub pair: (usize, usize),
    pub kind: StatKind,
    /// Over replications where the estimate exists; NaN if none does.
    pub coverage: f64,
    pub ci_length_full: f64,
    pub ci_length_half: f64,
    pub nonexist_freq: f64,
    pub reps_used: usize,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n: usize,
    pub l_spec: LSpec,
    pub eps_spec: EpsSpec,
    pub epsilon: f64,
    pub reps: usize,
    pub nonexist_freq: f64,
    /// Fraction of replications within the deviation bound.
    pub deviation_ok_freq: f64,
    pub rows: Vec<CoverageRow>,
    pub runtime_secs: f64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    n: usize,
    #[serde(rename = "L_spec")]
    l_spec: String,
    eps_spec: String,
    pair_i: usize,
    pair_j: usize,
    stat_kind: &'a str,
    coverage: f64,
    ci_length_full: f64,
    ci_length_half: f64,
    nonexist_freq: f64,
    reps: usize,
}

impl CoverageReport {
    pub fn row(&self, pair: (usize, usize), kind: StatKind) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.pair == pair && r.kind == kind)
    }

    /// Columns `n, L_spec, eps_spec, pair_i, pair_j, stat_kind, coverage,
    /// ci_length_full, ci_length_half, nonexist_freq, reps`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wtr.serialize(CsvRow {
                n: self.n,
                l_spec: self.l_spec.to_string(),
                eps_spec: self.eps_spec.to_string(),
                pair_i: r.pair.0,
                pair_j: r.pair.1,
                stat_kind: r.kind.name(),
                coverage: r.coverage,
                ci_length_full: r.ci_length_full,
                ci_length_half: r.ci_length_half,
                nonexist_freq: r.nonexist_freq,
                reps: r.reps,
            })?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<ReplicationRecord>,
    pub report: CoverageReport,
}

impl ExperimentResult {
    /// Standardized statistics of one `(pair, kind)` in replication order.
    pub fn statistics(&self, pair: (usize, usize), kind: StatKind) -> Vec<f64> {
        self.records
            .iter()
            .flat_map(|r| r.stats.iter())
            .filter(|s| s.pair == pair && s.kind == kind)
            .map(|s| s.value)
            .collect()
    }

    /// Columns `rep, pair_i, pair_j, stat_kind, value`.
    pub fn write_stats_dump<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.records {
            for s in &r.stats {
                wtr.serialize(StatRow {
                    rep: r.rep_index,
                    pair_i: s.pair.0,
                    pair_j: s.pair.1,
                    stat_kind: s.kind,
                    value: s.value,
                })?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// One line of the statistics dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub rep: usize,
    pub pair_i: usize,
    pub pair_j: usize,
    pub stat_kind: StatKind,
    pub value: f64,
}

pub fn read_stats_dump<R: Read>(r: R) -> Result<Vec<StatRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (k, row) in rdr.deserialize().enumerate() {
        let row: StatRow = row.map_err(|e| Error::Parse {
            line: k + 2,
            msg: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(out)
}

/// Run all replications, in parallel, and aggregate them. Records are
/// returned in replication order, so output does not depend on the number
/// of worker threads.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with_threads(cfg, threads_from_env())
}

pub fn run_experiment_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let truth = make_true_params(cfg.n, cfg.l_spec)?;
    let plan = cfg.plan();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| contract(format!("cannot build thread pool: {e}")))?;
    let records: Vec<ReplicationRecord> = pool.install(|| {
        (0..cfg.reps)
            .into_par_iter()
            .map(|k| replicate(cfg, &truth, &plan, k))
            .collect::<Result<_>>()
    })?;
    let report = aggregate(cfg, &plan, &records, start.elapsed().as_secs_f64());
    Ok(ExperimentResult {
        config: cfg.clone(),
        records,
        report,
    })
}

fn aggregate(
    cfg: &ExperimentConfig,
    plan: &[((usize, usize), StatKind)],
    records: &[ReplicationRecord],
    runtime_secs: f64,
) -> CoverageReport {
    let reps = records.len();
    let existing = records.iter().filter(|r| r.exists).count();
    let nonexist_freq = (reps - existing) as f64 / reps as f64;
    let rows = plan
        .iter()
        .map(|&(pair, kind)| {
            let mut covered = 0usize;
            let mut length = 0.0;
            let mut used = 0usize;
            for s in records
                .iter()
                .flat_map(|r| r.stats.iter())
                .filter(|s| s.pair == pair && s.kind == kind)
            {
                used += 1;
                covered += s.covered as usize;
                length += s.ci_length;
            }
            let (coverage, full) = if used == 0 {
                (f64::NAN, f64::NAN)
            } else {
                (covered as f64 / used as f64, length / used as f64)
            };
            CoverageRow {
                pair,
                kind,
                coverage,
                ci_length_full: full,
                ci_length_half: full / 2.0,
                nonexist_freq,
                reps_used: used,
                reps,
            }
        })
        .collect();
    CoverageReport {
        n: cfg.n,
        l_spec: cfg.l_spec,
        eps_spec: cfg.eps_spec,
        epsilon: cfg.epsilon(),
        reps,
        nonexist_freq,
        deviation_ok_freq: records.iter().filter(|r| r.deviation_ok()).count() as f64 / reps as f64,
        rows,
        runtime_secs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqPoint {
    pub rank: usize,
    pub empirical: f64,
    pub theoretical: f64,
}

/// Sorted sample against `Phi^{-1}((k - 0.5) / R)`, `k = 1..R`.
pub fn qq_export(values: &[f64]) -> Result<Vec<QqPoint>> {
    if values.len() < 2 {
        return Err(contract(format!("need at least 2 statistics, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(contract("statistics must be finite"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let r = v.len() as f64;
    v.into_iter()
        .enumerate()
        .map(|(k, empirical)| {
            Ok(QqPoint {
                rank: k + 1,
                empirical,
                theoretical: normal_quantile((k as f64 + 0.5) / r)?,
            })
        })
        .collect()
}

/// Columns `rank, empirical, theoretical`.
pub fn write_qq_csv<W: Write>(points: &[QqPoint], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for p in points {
        wtr.serialize(p)?;
    }
    wtr.flush()?;
    Ok(())
}
