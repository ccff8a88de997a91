//! Random scenarios and Monte-Carlo comparison of the three schemes.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leader::{
    optimal_bonus_only, optimal_price_salary_only, optimal_spb_suboptimal, MnoSolution,
    SalaryOnlyOptions, SuboptimalSearchOptions,
};
use crate::model::{ApProfile, MnoParams, Offer, Scheme};

pub const DEFAULT_GAINS: [f64; 5] = [10.0, 20.0, 30.0, 40.0, 50.0];
pub const DEFAULT_RUNS: usize = 100;
pub const MAX_CAPACITY: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostRegime {
    /// Costs in `(0, 1]`.
    Low,
    /// Costs in `[1, 10]`.
    High,
}

impl CostRegime {
    pub const ALL: [CostRegime; 2] = [CostRegime::Low, CostRegime::High];

    pub fn name(self) -> &'static str {
        match self {
            CostRegime::Low => "low",
            CostRegime::High => "high",
        }
    }

    fn index(self) -> u64 {
        match self {
            CostRegime::Low => 0,
            CostRegime::High => 1,
        }
    }
}

impl fmt::Display for CostRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CostRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(CostRegime::Low),
            "high" => Ok(CostRegime::High),
            other => Err(Error::InvalidOption(format!(
                "unknown cost regime `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub profiles: Vec<ApProfile>,
    pub params: MnoParams,
    pub seed: u64,
    pub cost_regime: CostRegime,
}

impl Scenario {
    pub fn with_gain(mut self, gain_coefficient: f64) -> Result<Self> {
        self.params = MnoParams::new(gain_coefficient)?;
        Ok(self)
    }
}

/// Uniform draw on `(0, hi]`: draw on `[0, hi]` and reject exact zeros.
fn positive_uniform(rng: &mut impl Rng, hi: f64) -> f64 {
    loop {
        let x = rng.gen_range(0.0..=hi);
        if x > 0.0 {
            return x;
        }
    }
}

/// Draws `n` APs: `T ~ U(0, 5]`, `w ~ U(0, 1]`, cost by regime, penalty `1/T`.
///
/// The gain coefficient is set to the first default sweep value; override it with
/// [`Scenario::with_gain`].
pub fn generate_scenario(n: usize, cost_regime: CostRegime, seed: u64) -> Result<Scenario> {
    if n < 2 {
        return Err(Error::TooFewAps {
            what: "a scenario",
            needed: 2,
            got: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles = (0..n)
        .map(|id| {
            let capacity = positive_uniform(&mut rng, MAX_CAPACITY);
            let quality = positive_uniform(&mut rng, 1.0);
            let cost = match cost_regime {
                CostRegime::Low => positive_uniform(&mut rng, 1.0),
                CostRegime::High => rng.gen_range(1.0..=10.0),
            };
            ApProfile::new(id, cost, quality, capacity)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario {
        profiles,
        params: MnoParams::new(DEFAULT_GAINS[0])?,
        seed,
        cost_regime,
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of run `run` in `regime`: `splitmix64(splitmix64(master ⊕ regime) ⊕ run)`.
///
/// The gain coefficient is deliberately left out, so every gain value is evaluated on the
/// same scenarios.
pub fn run_seed(master_seed: u64, regime: CostRegime, run: u64) -> u64 {
    splitmix64(splitmix64(master_seed ^ regime.index()) ^ run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonOptions {
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    pub spb: SuboptimalSearchOptions,
    /// Keep one record per (run, scheme, gain) for the JSON-lines trace.
    pub keep_runs: bool,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        ComparisonOptions {
            threads: None,
            spb: SuboptimalSearchOptions::default(),
            keep_runs: false,
        }
    }
}

/// One aggregated cell; also the CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scheme: Scheme,
    pub cost_regime: CostRegime,
    pub gain_coefficient: f64,
    pub mean_active_aps: f64,
    pub mean_mno_utility: f64,
    pub mean_offloaded_data: f64,
    pub ci_halfwidth_utility: f64,
    pub runs_ok: usize,
    pub runs_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub run: usize,
    pub cost_regime: CostRegime,
    pub gain_coefficient: f64,
    pub scheme: Scheme,
    pub offer: Option<Offer>,
    pub active_set: Vec<usize>,
    pub utility: Option<f64>,
    pub offloaded: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n: usize,
    pub runs: usize,
    pub master_seed: u64,
    pub regimes: Vec<CostRegime>,
    pub gain_values: Vec<f64>,
    pub rows: Vec<ComparisonRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<RunRecord>,
}

impl ComparisonReport {
    pub fn row(&self, scheme: Scheme, regime: CostRegime, gain: f64) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme && r.cost_regime == regime && r.gain_coefficient == gain)
    }
}

/// Solves one scheme's leader problem on a scenario.
pub fn solve_scheme(
    scheme: Scheme,
    profiles: &[ApProfile],
    params: MnoParams,
    spb: SuboptimalSearchOptions,
) -> Result<MnoSolution> {
    match scheme {
        Scheme::SalaryOnly => {
            optimal_price_salary_only(profiles, params, SalaryOnlyOptions::default())
        }
        Scheme::BonusOnly => optimal_bonus_only(profiles, params),
        Scheme::SalaryPlusBonus => optimal_spb_suboptimal(profiles, params, spb),
    }
}

/// Monte-Carlo comparison over cost regimes and gain coefficients.
///
/// Each run draws one scenario per regime, shared by all gain values, and solves the
/// three leader problems on it. Results do not depend on the thread count.
pub fn run_comparison(
    n: usize,
    regimes: &[CostRegime],
    gain_values: &[f64],
    runs: usize,
    master_seed: u64,
    opts: &ComparisonOptions,
) -> Result<ComparisonReport> {
    if runs == 0 {
        return Err(Error::InvalidOption("runs must be >= 1".into()));
    }
    if gain_values.is_empty() {
        return Err(Error::InvalidOption(
            "at least one gain coefficient is needed".into(),
        ));
    }
    for &gain in gain_values {
        MnoParams::new(gain)?;
    }
    if n < 2 {
        return Err(Error::TooFewAps {
            what: "a comparison",
            needed: 2,
            got: n,
        });
    }

    let jobs: Vec<(CostRegime, usize)> = regimes
        .iter()
        .flat_map(|&r| (0..runs).map(move |run| (r, run)))
        .collect();
    let work = || -> Vec<Vec<RunRecord>> {
        jobs.par_iter()
            .map(|&(regime, run)| simulate_run(n, regime, run, gain_values, master_seed, opts.spb))
            .collect()
    };
    let per_job = match opts.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidOption(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let records: Vec<RunRecord> = per_job.into_iter().flatten().collect();

    let mut rows = Vec::new();
    for &regime in regimes {
        for &gain in gain_values {
            for scheme in Scheme::ALL {
                let cell: Vec<&RunRecord> = records
                    .iter()
                    .filter(|r| {
                        r.cost_regime == regime && r.gain_coefficient == gain && r.scheme == scheme
                    })
                    .collect();
                rows.push(aggregate(scheme, regime, gain, &cell));
            }
        }
    }
    Ok(ComparisonReport {
        n,
        runs,
        master_seed,
        regimes: regimes.to_vec(),
        gain_values: gain_values.to_vec(),
        rows,
        records: if opts.keep_runs { records } else { Vec::new() },
    })
}

fn simulate_run(
    n: usize,
    regime: CostRegime,
    run: usize,
    gain_values: &[f64],
    master_seed: u64,
    spb: SuboptimalSearchOptions,
) -> Vec<RunRecord> {
    let seed = run_seed(master_seed, regime, run as u64);
    let scenario = generate_scenario(n, regime, seed);
    let mut out = Vec::with_capacity(gain_values.len() * Scheme::ALL.len());
    for &gain in gain_values {
        for scheme in Scheme::ALL {
            let solved = scenario.as_ref().map_err(|e| e.to_string()).and_then(|s| {
                let params = MnoParams::new(gain).map_err(|e| e.to_string())?;
                solve_scheme(scheme, &s.profiles, params, spb).map_err(|e| e.to_string())
            });
            let base = RunRecord {
                seed,
                run,
                cost_regime: regime,
                gain_coefficient: gain,
                scheme,
                offer: None,
                active_set: Vec::new(),
                utility: None,
                offloaded: None,
                error: None,
            };
            out.push(match solved {
                Ok(sol) => RunRecord {
                    offer: Some(sol.offer),
                    active_set: sol.follower_report.active_set.clone(),
                    utility: Some(sol.utility),
                    offloaded: Some(sol.follower_report.allocation.total()),
                    ..base
                },
                Err(error) => {
                    log::warn!("run {run} ({regime}, gain {gain}, {scheme}) failed: {error}");
                    RunRecord {
                        error: Some(error),
                        ..base
                    }
                }
            });
        }
    }
    out
}

fn aggregate(scheme: Scheme, regime: CostRegime, gain: f64, cell: &[&RunRecord]) -> ComparisonRow {
    let ok: Vec<&RunRecord> = cell.iter().copied().filter(|r| r.error.is_none()).collect();
    let active: Vec<f64> = ok.iter().map(|r| r.active_set.len() as f64).collect();
    let utility: Vec<f64> = ok.iter().map(|r| r.utility.unwrap_or(f64::NAN)).collect();
    let offloaded: Vec<f64> = ok.iter().map(|r| r.offloaded.unwrap_or(f64::NAN)).collect();
    ComparisonRow {
        scheme,
        cost_regime: regime,
        gain_coefficient: gain,
        mean_active_aps: mean(&active),
        mean_mno_utility: mean(&utility),
        mean_offloaded_data: mean(&offloaded),
        ci_halfwidth_utility: ci_halfwidth(&utility),
        runs_ok: ok.len(),
        runs_skipped: cell.len() - ok.len(),
    }
}

/// Pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (left, right) = xs.split_at(xs.len() / 2);
    pairwise_sum(left) + pairwise_sum(right)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Normal-approximation 95% half-width, `1.96 s/√n`.
fn ci_halfwidth(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let squares: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    let var = pairwise_sum(&squares) / (xs.len() - 1) as f64;
    1.96 * (var / xs.len() as f64).sqrt()
}

pub const CSV_COLUMNS: [&str; 9] = [
    "scheme",
    "cost_regime",
    "gain_coefficient",
    "mean_active_aps",
    "mean_mno_utility",
    "mean_offloaded_data",
    "ci_halfwidth_utility",
    "runs_ok",
    "runs_skipped",
];

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes one row per (scheme, regime, gain) with a header row.
pub fn export_csv(report: &ComparisonReport, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_error(path))?;
    writer.write_record(CSV_COLUMNS).map_err(csv_error(path))?;
    for row in &report.rows {
        writer.serialize(row).map_err(csv_error(path))?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv(path: &Path) -> Result<Vec<ComparisonRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error(path))?;
    reader
        .deserialize()
        .map(|row| row.map_err(csv_error(path)))
        .collect()
}

/// Writes the kept per-run records, one JSON object per line.
pub fn export_trace(report: &ComparisonReport, path: &Path) -> Result<()> {
    let io_error = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_error)?);
    for record in &report.records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n").map_err(io_error)?;
    }
    out.flush().map_err(io_error)
}
