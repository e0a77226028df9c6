//! Self-contained verification suites, each reporting measured against
//! required values.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::run::{run_experiment, RunSummary};
use super::{worker_count, HarnessError};
use crate::ellipsoid::{Ellipsoid, Half};
use crate::market::{LinearMarket, NoiseSpec};
use crate::oracle::{argmax_plateau, egft, egft_mc, three_bump_fixture};
use crate::policy::onebit::collection_profit_mc;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    /// Human-readable requirement, e.g. `≤ 4`.
    pub required: String,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self { name: name.into(), measured, required: format!("<= {bound:.6e}"), pass: measured <= bound }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self { name: name.into(), measured, required: format!(">= {bound:.6e}"), pass: measured >= bound }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: measured {:.6e}, required {}", self.name, self.measured, self.required)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyKind {
    OracleMc,
    Ellipsoid,
    LemmaProfit,
    AppendixE,
    BudgetBalance,
}

impl VerifyKind {
    pub const ALL: [VerifyKind; 5] =
        [VerifyKind::OracleMc, VerifyKind::Ellipsoid, VerifyKind::LemmaProfit, VerifyKind::AppendixE, VerifyKind::BudgetBalance];

    pub fn as_str(self) -> &'static str {
        match self {
            VerifyKind::OracleMc => "oracle-mc",
            VerifyKind::Ellipsoid => "ellipsoid",
            VerifyKind::LemmaProfit => "lemma-profit",
            VerifyKind::AppendixE => "appendix-e",
            VerifyKind::BudgetBalance => "budget-balance",
        }
    }

    /// Runs the suite at its full size.
    pub fn run(self) -> Result<Vec<Check>, HarnessError> {
        match self {
            VerifyKind::OracleMc => oracle_mc(200, 1_000_000, 11),
            VerifyKind::Ellipsoid => ellipsoid_cuts(1000, 40, 12),
            VerifyKind::LemmaProfit => Ok(lemma_profit(1_000_000, 13)),
            VerifyKind::AppendixE => appendix_e(1e-4),
            VerifyKind::BudgetBalance => budget_balance(100, ACTIVE_HORIZON),
        }
    }
}

impl FromStr for VerifyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        VerifyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown suite `{s}`; expected one of oracle-mc, ellipsoid, lemma-profit, appendix-e, budget-balance"))
    }
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    let g = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let n = g.norm();
    g / n
}

/// Closed-form expected gain against a Monte-Carlo mean of `draws`
/// valuation pairs on `cases` random markets, contexts and prices; each
/// discrepancy is measured in standard errors.
pub fn oracle_mc(cases: usize, draws: usize, seed: u64) -> Result<Vec<Check>, HarnessError> {
    let mut rng = stream(seed, Stream::Market);
    let mut setups = Vec::with_capacity(cases);
    for i in 0..cases {
        let d = rng.gen_range(1..=5);
        let c = rng.gen_range(0.05..1.0);
        let noise = if i % 2 == 0 { NoiseSpec::uniform(c)? } else { NoiseSpec::triangular(c)? };
        let market = LinearMarket::random(d, 1.0, 1.0, noise.clone(), noise, &mut rng)?;
        let x = random_unit(&mut rng, d) * rng.gen_range(0.0..=1.0f64);
        let lo = (market.seller_mean(&x) - c).max(-market.price_bound());
        let hi = (market.buyer_mean(&x) + c).min(market.price_bound());
        let p = if lo < hi { rng.gen_range(lo..hi) } else { rng.gen_range(-market.price_bound()..market.price_bound()) };
        setups.push((market, x, p));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(worker_count()).build().expect("worker pool");
    let results: Vec<Result<(f64, f64), HarnessError>> = pool.install(|| {
        setups
            .par_iter()
            .enumerate()
            .map(|(i, (market, x, p))| {
                let exact = egft(market, x, *p)?;
                let mc = egft_mc(market, x, *p, draws, &mut stream(seed.wrapping_add(i as u64), Stream::MonteCarlo))?;
                let diff = (exact - mc.mean).abs();
                // a sample without a single trade has zero spread; one trade moves the mean by at most 2P/n
                let se = mc.std_error.max(2.0 * market.price_bound() / draws as f64);
                let z = diff / se;
                Ok((z, diff))
            })
            .collect()
    });
    let mut worst = 0.0f64;
    let mut failures = 0usize;
    for r in results {
        let (z, _) = r?;
        worst = worst.max(z);
        failures += usize::from(z > 4.0);
    }
    Ok(vec![
        Check::at_most(format!("oracle-mc: largest |closed form - MC| in standard errors over {cases} cases"), worst, 4.0),
        Check::at_most("oracle-mc: cases beyond 4 standard errors", failures as f64, 0.0),
    ])
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let m = &g * g.transpose() + DMatrix::identity(d, d) * 0.1;
    (&m + m.transpose()) * 0.5
}

/// Uniform point of `E(M, c)` through the Cholesky factor of `M`.
fn sample_in(rng: &mut ChaCha8Rng, e: &Ellipsoid) -> DVector<f64> {
    let d = e.dim();
    let u = random_unit(rng, d) * rng.gen::<f64>().powf(1.0 / d as f64);
    let l = e.shape().clone().cholesky().expect("shape is positive definite").l();
    e.center() + l * u
}

/// `cuts` random central cuts on random ellipsoids for each `d ∈ {2, 5, 10}`:
/// volume ratio against `e^{−1/(2d)}` and containment of sampled points of
/// the kept half.
pub fn ellipsoid_cuts(cuts: usize, points: usize, seed: u64) -> Result<Vec<Check>, HarnessError> {
    let mut rng = stream(seed, Stream::MonteCarlo);
    let mut checks = Vec::new();
    for d in [2usize, 5, 10] {
        let mut worst_excess = f64::NEG_INFINITY;
        let mut escaped = 0usize;
        for _ in 0..cuts {
            let center = random_unit(&mut rng, d) * rng.gen_range(0.0..2.0);
            let e = Ellipsoid::new(center, random_spd(&mut rng, d))?;
            let a = random_unit(&mut rng, d);
            let keep = if rng.gen::<bool>() { Half::Lower } else { Half::Upper };
            let cut = e.central_cut(&a, keep)?;
            let shrink = cut.log_volume()? - e.log_volume()?;
            worst_excess = worst_excess.max(shrink + 1.0 / (2.0 * d as f64));
            let mut kept = 0;
            while kept < points {
                let y = sample_in(&mut rng, &e);
                let side = a.dot(&(&y - e.center()));
                let in_half = match keep {
                    Half::Lower => side <= 0.0,
                    Half::Upper => side >= 0.0,
                };
                if !in_half {
                    continue;
                }
                kept += 1;
                escaped += usize::from(cut.mahalanobis_sq(&y)? > 1.0 + 1e-9);
            }
        }
        checks.push(Check::at_most(format!("ellipsoid d={d}: log volume ratio + 1/(2d), worst of {cuts} cuts"), worst_excess, 1e-9));
        checks.push(Check::at_most(format!("ellipsoid d={d}: kept points outside the cut ellipsoid"), escaped as f64, 0.0));
    }
    Ok(checks)
}

/// Collection-round profit at `(s, b) = (0.25, 0.75)`, `P = 1`, `T = 10⁴`
/// against `(b − s)²/(8P·log T) − 2/T`, with a four-standard-error margin.
pub fn lemma_profit(draws: usize, seed: u64) -> Vec<Check> {
    let (s, b, p, t) = (0.25, 0.75, 1.0, 10_000usize);
    let (mean, se) = collection_profit_mc(s, b, p, t, draws, &mut stream(seed, Stream::MonteCarlo));
    let bound = (b - s) * (b - s) / (8.0 * p * (t as f64).ln()) - 2.0 / t as f64;
    vec![Check::at_least(format!("lemma-profit: mean - 4 se over {draws} draws (mean {mean:.4e})"), mean - 4.0 * se, bound)]
}

/// Optimal increments of the three-bump fixture at `Δ ∈ {0, 1, 1.5}`: the
/// distance from each reported value to the grid argmax set.
pub fn appendix_e(step: f64) -> Result<Vec<Check>, HarnessError> {
    let x = DVector::from_element(1, 1.0);
    let mut checks = Vec::new();
    for (gap, reported) in [(0.0, 10.0), (1.0, 2.5), (1.5, 0.01)] {
        let m = three_bump_fixture(gap)?;
        let (lo, hi, _) = argmax_plateau(&m, &x, step, 1e-12)?;
        let dist = (lo - reported).max(reported - hi).max(0.0);
        checks.push(Check::at_most(
            format!("appendix-e Δ={gap}: distance from {reported} to argmax [{lo:.4}, {hi:.4}]"),
            dist,
            1e-3,
        ));
    }
    Ok(checks)
}

pub const ACTIVE_HORIZON: usize = 3_000_000;

/// Active market for one-bit runs: every context has `xᵀ(θᵇ − θˢ) = 0.56`
/// and the noise keeps `b ≥ s`. Contexts cycle through the three axes, so a
/// two-bit round split over consecutive contexts still reaches every
/// direction on both sides.
pub fn active_market_config(algorithm: &str, horizon: usize, seed: u64) -> ExperimentConfig {
    let text = format!(
        "T = {horizon}\nd = 3\nalgorithm = {algorithm}\nseed = {seed}\n\
         market.A = 0.5\nmarket.B = 1\nmarket.noise = uniform\nmarket.C = 0.25\n\
         market.theta_s = -0.28, -0.28, -0.28\nmarket.theta_b = 0.28, 0.28, 0.28\n\
         context.generator = cyclic\n\
         schedule.eps = 0.05\nschedule.mu = 0.04\nschedule.t_int = 1000\nschedule.t_fd = 40\n\
         onebit.alpha = 0.25\nonebit.budget = explicit\nonebit.t_e = 11000\n"
    );
    ExperimentConfig::parse(&text, Path::new(".")).expect("built-in configuration parses")
}

struct PairedRun {
    profit: f64,
    halted: bool,
    alpha: f64,
    wrapped_commit: Option<f64>,
    plain_commit: Option<f64>,
}

fn commit_rate(s: &RunSummary) -> Option<f64> {
    (s.commit_rounds > 0).then(|| s.commit_regret / s.commit_rounds as f64)
}

/// One-bit explore-or-commit on the active market over `runs` seeds, each
/// paired with the two-bit learner on the same seed. Profit never ends
/// negative outside halted runs, few runs halt, and the wrapped learner's
/// mean commit regret per round stays within twice the two-bit one.
pub fn budget_balance(runs: usize, horizon: usize) -> Result<Vec<Check>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(worker_count()).build().expect("worker pool");
    let results: Vec<Result<PairedRun, HarnessError>> = pool.install(|| {
        (0..runs)
            .into_par_iter()
            .map(|seed| {
                let wrapped = run_experiment(&active_market_config("onebit-eoc", horizon, seed as u64))?.summary;
                let plain = run_experiment(&active_market_config("eoc", horizon, seed as u64))?.summary;
                Ok(PairedRun {
                    profit: wrapped.final_profit,
                    halted: wrapped.halted == Some(true),
                    alpha: wrapped.alpha_min,
                    wrapped_commit: commit_rate(&wrapped),
                    plain_commit: commit_rate(&plain),
                })
            })
            .collect()
    });
    let mut worst_profit = f64::INFINITY;
    let mut halted = 0usize;
    let mut worst_alpha = f64::INFINITY;
    let (mut wrapped_sum, mut plain_sum, mut paired, mut within) = (0.0, 0.0, 0usize, 0usize);
    let mut missing_commit = 0usize;
    for r in results {
        let r = r?;
        halted += usize::from(r.halted);
        worst_alpha = worst_alpha.min(r.alpha);
        if !r.halted {
            worst_profit = worst_profit.min(r.profit);
        }
        match (r.wrapped_commit, r.plain_commit) {
            (Some(w), Some(p)) if !r.halted => {
                wrapped_sum += w;
                plain_sum += p;
                paired += 1;
                within += usize::from(w <= 2.0 * p);
            }
            (None, _) | (_, None) if !r.halted => missing_commit += 1,
            _ => {}
        }
    }
    let ratio = if paired == 0 || missing_commit > 0 {
        f64::INFINITY
    } else if plain_sum == 0.0 {
        if wrapped_sum == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        wrapped_sum / plain_sum
    };
    Ok(vec![
        Check::at_least("budget-balance: market activity α over all runs", worst_alpha, 0.25),
        Check::at_least(format!("budget-balance: smallest final profit over non-halted runs of {runs}"), worst_profit, 0.0),
        Check::at_most("budget-balance: halted runs", halted as f64, (runs as f64 * 0.05).floor()),
        Check::at_most(
            format!(
                "budget-balance: wrapped/two-bit mean commit regret per round over {paired} paired seeds \
                 ({within} individually within 2x, {missing_commit} never committed)"
            ),
            ratio,
            2.0,
        ),
    ])
}
