//! Experiment orchestration: the `simulate`, `analyze`, `optimize` and
//! `validate` commands and the codebook optimizer.
//!
//! Every command writes its CSV files atomically (temporary file in the output
//! directory, then rename), so a reader never sees a half-written file.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use itertools::Itertools;
use thiserror::Error;

use crate::analysis::{AnalysisError, Analyzer, BoundKind, Estimate};
use crate::config::{ConfigError, ExperimentConfig};
use crate::modem::{bits_per_word, hamming, ModemError, TxWord};
use crate::montecarlo::{normal_quantile, simulate_ber, wilson_interval, write_ber_csv, BerCurve, BerPoint, MonteCarloError};
use crate::patterns::Codebook;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    MonteCarlo(#[from] MonteCarloError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Modem(#[from] ModemError),
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// The four CLI subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Analyze,
    Optimize,
    Validate,
}

impl Command {
    pub const ALL: [Self; 4] = [Self::Simulate, Self::Analyze, Self::Optimize, Self::Validate];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Analyze => "analyze",
            Self::Optimize => "optimize",
            Self::Validate => "validate",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown command {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Also write the per-pair APEP table (`analyze` only).
    pub pair_dump: bool,
}

/// Outcome of one validation check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub snr_db: f64,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

/// What a command produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub checks: Vec<Check>,
    /// Non-fatal notes, e.g. quadrature estimates that missed `rel_tol`.
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Runs `cmd` and writes its artifacts into `out_dir` (created if missing).
pub fn run(cmd: Command, cfg: &ExperimentConfig, out_dir: &Path, opts: RunOptions) -> Result<RunReport, ExperimentError> {
    fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    match cmd {
        Command::Simulate => run_simulate(cfg, out_dir),
        Command::Analyze => run_analyze(cfg, out_dir, opts),
        Command::Optimize => run_optimize(cfg, out_dir),
        Command::Validate => run_validate(cfg, out_dir),
    }
}

fn io_error(path: &Path, e: impl fmt::Display) -> ExperimentError {
    ExperimentError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_error(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_error(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_error(path, e))?;
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| ExperimentError::Io { path: "<buffer>".into(), message: e.to_string() })
}

fn rho(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0)
}

fn note_convergence(report: &mut RunReport, what: impl fmt::Display, e: &Estimate) {
    if !e.converged {
        report.warnings.push(format!("{what}: quadrature error estimate {:.3e} exceeds rel_tol", e.error));
    }
}

fn simulate(cfg: &ExperimentConfig, codebook: Codebook) -> Result<BerCurve, ExperimentError> {
    Ok(simulate_ber(&cfg.sm_config(codebook))?)
}

fn run_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport, ExperimentError> {
    let curve = simulate(cfg, cfg.load_pool()?)?;
    let path = out_dir.join("ber.csv");
    let mut buf = Vec::new();
    write_ber_csv(&curve, &mut buf)?;
    write_atomic(&path, &buf)?;
    Ok(RunReport { files: vec![path], ..RunReport::default() })
}

fn run_analyze(cfg: &ExperimentConfig, out_dir: &Path, opts: RunOptions) -> Result<RunReport, ExperimentError> {
    let codebook = cfg.load_pool()?;
    let channel = cfg.channel_model();
    let c = cfg.constellation();
    bits_per_word(codebook.len(), &c)?;
    let analyzer = Analyzer::new(&codebook, &channel, cfg.analysis)?;
    let mut report = RunReport::default();
    let mut rows = Vec::new();
    let mut pair_rows = Vec::new();
    let mut failure = None;
    'outer: for &snr in &cfg.snr_grid_db {
        for &kind in &cfg.kinds {
            let pairs = match analyzer.pair_apeps(kind, &c, cfg.n_r, rho(snr)) {
                Ok(p) => p,
                Err(e) => {
                    failure = Some(e);
                    break 'outer;
                }
            };
            let abep = crate::analysis::union_bound(&pairs, codebook.len() * c.len());
            note_convergence(&mut report, format_args!("{} bound at {snr} dB", kind.as_str()), &abep);
            rows.push(vec![snr.to_string(), kind.as_str().to_string(), abep.value.to_string()]);
            if opts.pair_dump {
                for pr in &pairs {
                    pair_rows.push(vec![
                        snr.to_string(),
                        kind.as_str().to_string(),
                        pr.from.p.to_string(),
                        pr.from.m.to_string(),
                        pr.to.p.to_string(),
                        pr.to.m.to_string(),
                        pr.hamming.to_string(),
                        // Bounds above 1/2 carry no information about a probability.
                        pr.apep.value.min(0.5).to_string(),
                    ]);
                }
            }
        }
    }
    // Whatever was computed is flushed even when a later point fails.
    let path = out_dir.join("bounds.csv");
    write_atomic(&path, &csv_bytes(&["snr_db", "bound_kind", "abep"], &rows)?)?;
    report.files.push(path);
    if opts.pair_dump {
        let path = out_dir.join("pairs.csv");
        let header = ["snr_db", "bound_kind", "p", "m", "q", "n", "hamming", "apep"];
        write_atomic(&path, &csv_bytes(&header, &pair_rows)?)?;
        report.files.push(path);
    }
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(report),
    }
}

/// One scored subset of the pattern pool.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSubset {
    /// Pool indices, ascending.
    pub subset: Vec<usize>,
    /// Union bound at the ranking SNR; infinite when two hypotheses in the
    /// subset cannot be told apart.
    pub abep: f64,
}

/// All `choose`-subsets of the pool, best first. Ties are broken by
/// lexicographic subset order.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookRanking {
    pub entries: Vec<RankedSubset>,
}

impl CodebookRanking {
    pub fn best(&self) -> &RankedSubset {
        &self.entries[0]
    }

    pub fn worst(&self) -> &RankedSubset {
        self.entries.last().expect("ranking is never empty")
    }
}

/// Ranks every `cfg.choose`-subset of the configured pool by its union bound
/// (`cfg.ranking_kind` at `cfg.ranking_snr_db`).
pub fn rank_codebooks(cfg: &ExperimentConfig) -> Result<CodebookRanking, ExperimentError> {
    rank_pool(cfg, &cfg.load_pool()?)
}

/// [`rank_codebooks`] on an already loaded pool.
pub fn rank_pool(cfg: &ExperimentConfig, pool: &Codebook) -> Result<CodebookRanking, ExperimentError> {
    let c = cfg.constellation();
    let k = cfg.choose;
    let n_words = k * c.len();
    bits_per_word(k, &c)?;
    if n_words < 2 {
        return Err(AnalysisError::InvalidQuery("a subset needs at least two hypotheses".into()).into());
    }
    let channel = cfg.channel_model();
    let analyzer = Analyzer::new(pool, &channel, cfg.analysis)?;
    let rho = rho(cfg.ranking_snr_db);
    let m = c.len();
    let pool_words = pool.len() * m;
    // apep[i * W + j] for pool words i < j, where word i is (i / M, i % M).
    let mut apep = vec![f64::NAN; pool_words * pool_words];
    for i in 0..pool_words {
        for j in i + 1..pool_words {
            let (p, q) = (i / m, j / m);
            let (xm, xn) = (c.point(i % m), c.point(j % m));
            let v = if analyzer.is_degenerate(p, q, xm, xn)? {
                f64::INFINITY
            } else {
                match analyzer.apep(cfg.ranking_kind, cfg.n_r, rho, p, q, xm, xn) {
                    Ok(e) => e.value,
                    Err(AnalysisError::DegenerateHypothesis { .. } | AnalysisError::DegenerateArray(_)) => f64::INFINITY,
                    Err(e) => return Err(e.into()),
                }
            };
            apep[i * pool_words + j] = v;
        }
    }
    let scale = 2.0 / (n_words as f64 * (n_words as f64).log2());
    let mut entries: Vec<RankedSubset> = (0..pool.len())
        .combinations(k)
        .map(|subset| {
            let mut sum = 0.0;
            for a in 0..n_words {
                for b in a + 1..n_words {
                    let (wa, wb) = (TxWord { p: a / m, m: a % m }, TxWord { p: b / m, m: b % m });
                    let i = subset[wa.p] * m + wa.m;
                    let j = subset[wb.p] * m + wb.m;
                    sum += hamming(wa, wb, &c) as f64 * apep[i.min(j) * pool_words + i.max(j)];
                }
            }
            RankedSubset { subset, abep: sum * scale }
        })
        .collect();
    entries.sort_by(|x, y| x.abep.total_cmp(&y.abep).then_with(|| x.subset.cmp(&y.subset)));
    Ok(CodebookRanking { entries })
}

fn run_optimize(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport, ExperimentError> {
    let pool = cfg.load_pool()?;
    let ranking = rank_pool(cfg, &pool)?;
    let rows: Vec<Vec<String>> = ranking
        .entries
        .iter()
        .enumerate()
        .map(|(r, e)| {
            vec![
                (r + 1).to_string(),
                e.subset.iter().join(" "),
                e.subset.iter().map(|&i| pool.patterns()[i].label()).join(" | "),
                e.abep.to_string(),
            ]
        })
        .collect();
    let path = out_dir.join("ranking.csv");
    write_atomic(&path, &csv_bytes(&["rank", "subset", "patterns", "abep"], &rows)?)?;
    Ok(RunReport { files: vec![path], ..RunReport::default() })
}

/// The analytical kind the simulation is checked against: the exact finite-K
/// bound when available, otherwise the asymptotic one.
pub fn validation_kind(n_r: usize) -> BoundKind {
    if n_r == 1 {
        BoundKind::Exact
    } else {
        BoundKind::Asymptotic
    }
}

/// Union-bound ceiling above which the bound check is skipped.
pub const BOUND_CHECK_CEILING: f64 = 0.1;

/// Simulated points compared against their bound and their neighbours.
///
/// * `bound`: where the bound is at most [`BOUND_CHECK_CEILING`], the lower
///   end of the simulated interval must not exceed it. With `m` such points
///   each interval is a Wilson interval at level `1 − 0.05/m`, so the family
///   of checks holds with 95% confidence.
/// * `monotone`: each BER may exceed its predecessor by at most twice the
///   summed 95% interval half-widths.
pub fn validation_checks(points: &[BerPoint], bounds: &[f64], bits_per_word: usize) -> Vec<Check> {
    let mut checks = Vec::new();
    let checked = bounds.iter().take(points.len()).filter(|&&b| b <= BOUND_CHECK_CEILING).count();
    if checked > 0 {
        let z = normal_quantile(1.0 - 0.025 / checked as f64);
        for (pt, &b) in points.iter().zip(bounds) {
            if b <= BOUND_CHECK_CEILING {
                let (lo, _) = wilson_interval(pt.bit_errors, pt.trials * bits_per_word as u64, z);
                checks.push(Check { name: "bound", snr_db: pt.snr_db, value: lo, limit: b, pass: lo <= b });
            }
        }
    }
    for w in points.windows(2) {
        let hw = |p: &BerPoint| 0.5 * (p.ci_hi - p.ci_lo);
        let limit = w[0].ber + 2.0 * (hw(&w[0]) + hw(&w[1]));
        checks.push(Check { name: "monotone", snr_db: w[1].snr_db, value: w[1].ber, limit, pass: w[1].ber <= limit });
    }
    checks
}

fn run_validate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport, ExperimentError> {
    let codebook = cfg.load_pool()?;
    let channel = cfg.channel_model();
    let c = cfg.constellation();
    let curve = simulate(cfg, codebook.clone())?;
    let analyzer = Analyzer::new(&codebook, &channel, cfg.analysis)?;
    let check_kind = validation_kind(cfg.n_r);
    let mut kinds = cfg.kinds.clone();
    if !kinds.contains(&check_kind) {
        kinds.push(check_kind);
    }
    let mut report = RunReport::default();
    let mut rows = Vec::new();
    let mut check_bounds = Vec::new();
    for pt in &curve.points {
        let mut row = vec![
            pt.snr_db.to_string(),
            pt.trials.to_string(),
            pt.bit_errors.to_string(),
            pt.ber.to_string(),
            pt.ci_lo.to_string(),
            pt.ci_hi.to_string(),
        ];
        for &kind in &kinds {
            let e = analyzer.abep(kind, &c, cfg.n_r, rho(pt.snr_db))?;
            note_convergence(&mut report, format_args!("{} bound at {} dB", kind.as_str(), pt.snr_db), &e);
            if kind == check_kind {
                check_bounds.push(e.value);
            }
            row.push(e.value.to_string());
        }
        rows.push(row);
    }
    let mut header = vec!["snr_db", "trials", "bit_errors", "ber", "ci_lo", "ci_hi"];
    header.extend(kinds.iter().map(|k| k.as_str()));
    let path = out_dir.join("validate.csv");
    write_atomic(&path, &csv_bytes(&header, &rows)?)?;
    report.files.push(path);

    report.checks = validation_checks(&curve.points, &check_bounds, curve.bits_per_word);
    let check_rows: Vec<Vec<String>> = report
        .checks
        .iter()
        .map(|ck| {
            vec![
                ck.name.to_string(),
                ck.snr_db.to_string(),
                ck.value.to_string(),
                ck.limit.to_string(),
                if ck.pass { "pass" } else { "fail" }.to_string(),
            ]
        })
        .collect();
    let path = out_dir.join("checks.csv");
    write_atomic(&path, &csv_bytes(&["check", "snr_db", "value", "limit", "result"], &check_rows)?)?;
    report.files.push(path);
    Ok(report)
}
