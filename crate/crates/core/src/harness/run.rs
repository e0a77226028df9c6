//! One seeded run: market, contexts, policy, oracle accounting and trace.
//!
//! Contexts, valuations, ground truth and policy randomness come from
//! separate streams of the master seed, so every algorithm run on one seed
//! faces the same contexts and valuations.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{Algorithm, ExperimentConfig};
use super::trace::{TraceRow, TraceWriter};
use super::{write_atomic, HarnessError};
use crate::error::Result as TradeResult;
use crate::market::{ContextStream, LinearMarket};
use crate::oracle::{benchmark, egft_two, optimal_price};
use crate::policy::{
    Eoc, EpBt, Feedback, Need, OneBit, OneBitConfig, Phase, Policy, PolicyDecision, Sbip, Schedule,
};
use crate::rng::{stream, Stream};

/// Posts the grid-optimal equal price; zero regret up to the grid step.
#[derive(Debug, Clone)]
pub struct OracleFollower {
    market: LinearMarket,
    step: f64,
}

impl OracleFollower {
    pub fn new(market: LinearMarket, step: f64) -> Self {
        Self { market, step }
    }

    fn price(&self, x: &DVector<f64>) -> f64 {
        if self.market.is_noiseless() {
            0.5 * (self.market.seller_mean(x) + self.market.buyer_mean(x))
        } else {
            optimal_price(&self.market, x, self.step).map_or(0.0, |(p, _)| p)
        }
    }
}

impl Policy for OracleFollower {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn decide(&mut self, x: &DVector<f64>, _rng: &mut ChaCha8Rng) -> TradeResult<PolicyDecision> {
        Ok(PolicyDecision::equal(self.price(x), Need::NoLearning, Phase::Commit))
    }

    fn observe(&mut self, decision: &PolicyDecision, feedback: &Feedback) -> TradeResult<()> {
        feedback.check(decision.need)
    }

    fn greedy_price(&self, x: &DVector<f64>) -> f64 {
        self.price(x)
    }

    fn exploration_bound(&self) -> f64 {
        0.0
    }
}

/// Posts one constant price.
#[derive(Debug, Clone)]
pub struct FixedPrice(pub f64);

impl Policy for FixedPrice {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn decide(&mut self, _x: &DVector<f64>, _rng: &mut ChaCha8Rng) -> TradeResult<PolicyDecision> {
        Ok(PolicyDecision::equal(self.0, Need::NoLearning, Phase::Commit))
    }

    fn observe(&mut self, decision: &PolicyDecision, feedback: &Feedback) -> TradeResult<()> {
        feedback.check(decision.need)
    }

    fn greedy_price(&self, _x: &DVector<f64>) -> f64 {
        self.0
    }

    fn exploration_bound(&self) -> f64 {
        0.0
    }
}

/// Ground truth for a configuration: explicit parameters or a draw from the
/// market stream.
pub fn build_market(cfg: &ExperimentConfig) -> Result<LinearMarket, HarnessError> {
    let m = &cfg.market;
    let noise = m.noise_spec()?;
    let market = match (&m.theta_s, &m.theta_b) {
        (Some(s), Some(b)) => LinearMarket::new(
            DVector::from_column_slice(s),
            DVector::from_column_slice(b),
            noise.clone(),
            noise,
            m.a_bound,
            m.b_bound,
        ),
        _ => LinearMarket::random(cfg.d, m.a_bound, m.b_bound, noise.clone(), noise, &mut stream(cfg.seed, Stream::Market)),
    };
    market.map_err(|e| HarnessError::config(format!("market: {e}")))
}

enum Driver {
    Two(Box<dyn Policy>),
    One(OneBit<Box<dyn Policy>>),
}

impl Driver {
    fn decide(&mut self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> TradeResult<PolicyDecision> {
        match self {
            Driver::Two(p) => p.decide(x, rng),
            Driver::One(w) => w.decide(x, rng),
        }
    }

    fn observe(&mut self, dec: &PolicyDecision, x: &DVector<f64>, bit_s: bool, bit_b: bool) -> TradeResult<()> {
        match self {
            Driver::Two(p) => p.observe(dec, &Feedback::two_bit(x, dec.p, dec.q, bit_s, bit_b).restricted(dec.need)),
            Driver::One(w) => w.observe(dec, bit_s && bit_b),
        }
    }

    fn policy(&self) -> &dyn Policy {
        match self {
            Driver::Two(p) => p.as_ref(),
            Driver::One(w) => w.inner().as_ref(),
        }
    }

    fn diagnostics(&self) -> Vec<(String, f64)> {
        match self {
            Driver::Two(p) => p.diagnostics(),
            Driver::One(w) => w.diagnostics(),
        }
    }

    fn remaining(&self) -> Option<f64> {
        match self {
            Driver::Two(_) => None,
            Driver::One(w) => Some(w.ledger().remaining()),
        }
    }
}

struct Built {
    driver: Driver,
    warnings: Vec<String>,
    /// Accuracy target of the parameter estimates, for learners that have one.
    event_eps: Option<f64>,
}

fn build_policy(cfg: &ExperimentConfig, market: &LinearMarket) -> Result<Built, HarnessError> {
    let (d, t) = (cfg.d, cfg.horizon);
    let (a, b, p) = (cfg.market.a_bound, cfg.market.b_bound, market.price_bound());
    let mut warnings = Vec::new();
    let mut event_eps = None;
    let mut learner = |alg: Algorithm| -> Result<Box<dyn Policy>, HarnessError> {
        Ok(match alg {
            Algorithm::EpBt | Algorithm::OneBitEpBt => {
                let eps = cfg.epbt_eps.unwrap_or_else(|| EpBt::default_eps(d, a, b, t));
                Box::new(EpBt::new(d, a, b, eps)?)
            }
            Algorithm::Eoc | Algorithm::OneBitEoc => {
                let (s, w) = Schedule::eoc(t, d, p, a, b, &cfg.schedule)?;
                warnings.extend(w);
                event_eps = Some(s.eps);
                Box::new(Eoc::new(d, s))
            }
            Algorithm::Sbip => {
                let (s, w) = Schedule::sbip(t, d, p, a, b, market.density_bound(), &cfg.schedule)?;
                if !s.eps_tilde.is_finite() {
                    return Err(HarnessError::config("sbip needs a noisy market or `schedule.eps_tilde`"));
                }
                warnings.extend(w);
                event_eps = Some(s.eps);
                Box::new(Sbip::new(d, s))
            }
            Algorithm::Oracle => Box::new(OracleFollower::new(market.clone(), cfg.oracle_step * p)),
            Algorithm::Fixed => Box::new(FixedPrice(cfg.fixed_price)),
        })
    };
    let driver = match cfg.algorithm {
        Algorithm::OneBitEoc | Algorithm::OneBitEpBt => {
            let inner = learner(cfg.algorithm)?;
            let ob = OneBitConfig {
                horizon: t,
                p_bound: p,
                alpha: cfg.onebit.alpha,
                t_e: cfg.onebit.t_e,
                mode: cfg.onebit.mode,
                i_base: cfg.onebit.i_base,
            };
            Driver::One(OneBit::new(inner, ob)?)
        }
        alg => Driver::Two(learner(alg)?),
    };
    Ok(Built { driver, warnings, event_eps })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub seed: u64,
    pub horizon: usize,
    pub d: usize,
    /// `P = C + A·B`
    pub price_bound: f64,
    pub config: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    pub final_regret: f64,
    pub final_profit: f64,
    pub total_gft: f64,
    pub min_cum_profit: f64,
    pub clamps: usize,
    pub fallbacks: usize,
    pub phase_rounds: BTreeMap<String, usize>,
    pub commit_rounds: usize,
    pub commit_regret: f64,
    /// Rounds after the parameter and integral warm-up, and how many of them
    /// had both `|xᵀ(θ̂ − θ)| ≤ ε`.
    pub event_rounds: usize,
    pub event_hits: usize,
    pub exploration_bound: f64,
    /// `min_{t′ ≥ log T} Σ_{t ≤ t′}(b_t − s_t)/t′`
    pub alpha_min: f64,
    pub halted: Option<bool>,
    pub budget_target: Option<f64>,
    pub diagnostics: BTreeMap<String, f64>,
    pub trace_rows: usize,
    pub trace_stride: usize,
    pub trace_sha256: String,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub trace: String,
}

/// Cache of per-context benchmarks; only repeated contexts benefit.
struct BenchCache {
    map: HashMap<Vec<u64>, f64>,
    step: f64,
}

const BENCH_CACHE_LIMIT: usize = 4096;

impl BenchCache {
    fn get(&mut self, market: &LinearMarket, x: &DVector<f64>) -> TradeResult<f64> {
        if market.is_noiseless() {
            return benchmark(market, x, self.step);
        }
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(&v) = self.map.get(&key) {
            return Ok(v);
        }
        let v = benchmark(market, x, self.step)?;
        if self.map.len() < BENCH_CACHE_LIMIT {
            self.map.insert(key, v);
        }
        Ok(v)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let market = build_market(cfg)?;
    if cfg.market.b_bound < cfg.context.radius {
        return Err(HarnessError::config("`context.radius` exceeds `market.B`"));
    }
    let mut ctx = ContextStream::new(cfg.context_generator()?, cfg.d, cfg.market.b_bound, cfg.seed)?;
    let Built { mut driver, warnings, event_eps } = build_policy(cfg, &market)?;
    let mut noise_rng = stream(cfg.seed, Stream::Noise);
    let mut policy_rng = stream(cfg.seed, Stream::Policy);
    let mut cache = BenchCache { map: HashMap::new(), step: cfg.oracle_step * market.price_bound() };
    let mut trace = TraceWriter::new(cfg.horizon, cfg.trace_max_rows);

    let mut phase_rounds: BTreeMap<String, usize> = Phase::ALL.iter().map(|p| (p.as_str().to_string(), 0)).collect();
    let (mut cum_regret, mut cum_profit, mut total_gft, mut welfare) = (0.0, 0.0, 0.0, 0.0);
    let mut min_cum_profit = 0.0f64;
    let (mut clamps, mut fallbacks, mut commit_rounds, mut commit_regret) = (0, 0, 0, 0.0);
    let (mut event_rounds, mut event_hits) = (0, 0);
    let alpha_from = ((cfg.horizon as f64).ln().ceil() as usize).max(1);
    let mut alpha_min = f64::INFINITY;

    for t in 1..=cfg.horizon {
        let x = ctx.next_context()?;
        let (s, b) = market.sample_valuations(&x, &mut noise_rng)?;
        let dec = driver.decide(&x, &mut policy_rng)?;
        let (bit_s, bit_b) = (s <= dec.p, dec.q <= b);
        let traded = bit_s && bit_b;
        driver.observe(&dec, &x, bit_s, bit_b)?;

        let gft = if traded { b - s } else { 0.0 };
        let profit = if traded { dec.q - dec.p } else { 0.0 };
        let egft_posted = egft_two(&market, &x, dec.p, dec.q);
        let egft_opt = cache.get(&market, &x)?;
        let regret_inc = egft_opt - egft_posted;
        cum_regret += regret_inc;
        cum_profit += profit;
        total_gft += gft;
        min_cum_profit = min_cum_profit.min(cum_profit);
        welfare += b - s;
        if t >= alpha_from {
            alpha_min = alpha_min.min(welfare / t as f64);
        }

        *phase_rounds.get_mut(dec.phase.as_str()).expect("every phase listed") += 1;
        clamps += usize::from(dec.clamped);
        match dec.phase {
            Phase::Fallback => fallbacks += 1,
            Phase::Commit => {
                commit_rounds += 1;
                commit_regret += regret_inc;
            }
            _ => {}
        }
        if let Some(eps) = event_eps {
            if !matches!(dec.phase, Phase::ParamExplore | Phase::IntExplore | Phase::BudgetCollect) {
                if let Some((ts, tb)) = driver.policy().estimates() {
                    event_rounds += 1;
                    let es = x.dot(&(&ts - market.theta_s())).abs();
                    let eb = x.dot(&(&tb - market.theta_b())).abs();
                    event_hits += usize::from(es <= eps && eb <= eps);
                }
            }
        }

        if trace.keep(t, dec.phase) {
            trace.push(&TraceRow {
                t,
                phase: dec.phase,
                k: dec.k,
                k_prime: dec.k_prime,
                p: dec.p,
                q: dec.q,
                s,
                b,
                bit_s,
                bit_b,
                traded,
                gft,
                egft_posted,
                egft_opt,
                regret_inc,
                cum_regret,
                profit,
                cum_profit,
                budget_remaining: driver.remaining(),
            });
        }
    }

    let (trace_rows, trace_stride) = (trace.rows(), trace.stride());
    let trace = trace.into_string();
    let digest = Sha256::digest(trace.as_bytes());
    let (halted, budget_target) = match &driver {
        Driver::One(w) => (
            Some(w.ledger().phase == crate::policy::LedgerPhase::FallbackHalted),
            Some(w.ledger().target),
        ),
        Driver::Two(_) => (None, None),
    };
    let summary = RunSummary {
        algorithm: cfg.algorithm.as_str().into(),
        seed: cfg.seed,
        horizon: cfg.horizon,
        d: cfg.d,
        price_bound: market.price_bound(),
        config: cfg.echo.clone(),
        warnings,
        final_regret: cum_regret,
        final_profit: cum_profit,
        total_gft,
        min_cum_profit,
        clamps,
        fallbacks,
        phase_rounds,
        commit_rounds,
        commit_regret,
        event_rounds,
        event_hits,
        exploration_bound: driver.policy().exploration_bound(),
        alpha_min,
        halted,
        budget_target,
        diagnostics: driver.diagnostics().into_iter().collect(),
        trace_rows,
        trace_stride,
        trace_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
    };
    Ok(RunOutput { summary, trace })
}

/// Writes `trace.csv` and `summary.json` into `dir`.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<(), HarnessError> {
    write_atomic(&dir.join("trace.csv"), out.trace.as_bytes())?;
    write_summary(dir, &out.summary)
}

pub fn write_summary(dir: &Path, summary: &RunSummary) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    write_atomic(&dir.join("summary.json"), json.as_bytes())
}
