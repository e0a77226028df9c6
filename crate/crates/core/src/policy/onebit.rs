//! Two-bit learners run on one-bit feedback.
//!
//! The wrapper first collects profit by posting `(p, p + 2^{−i})` at random,
//! then spends it on simulated rounds: `(p, −P)` always satisfies the buyer, so
//! the trade bit is the seller bit, and `(P, p)` symmetrically isolates the
//! buyer bit. A request for both bits takes two rounds, the buyer half at the
//! next context. Once the balance cannot cover a worst-case simulated round the
//! wrapper stops learning and posts the inner policy's greedy price.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Feedback, Need, Phase, Policy, PolicyDecision, SideObs};
use crate::error::{Result, TradeError};

/// `(p, q)` with `p ~ U[−P, P]`, `q = p + base^{−i}`, `i` uniform on
/// `{0, …, ⌈log₂T⌉ − 1}`. `q` is not clamped.
pub fn budget_collection_price(p_bound: f64, horizon: usize, base: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let levels = collection_levels(horizon);
    let p = rng.gen_range(-p_bound..=p_bound);
    let i = rng.gen_range(0..levels);
    (p, p + base.powi(-(i as i32)))
}

/// `⌈log₂T⌉`, at least one.
pub fn collection_levels(horizon: usize) -> usize {
    (horizon.max(2) as f64).log2().ceil().max(1.0) as usize
}

/// `max{2048·P⁴·α⁻²·log³T, 2P·T_e}`
pub fn compute_budget(alpha: f64, p_bound: f64, horizon: f64, t_e: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(TradeError::InvalidArgument(format!("α must lie in (0, 1], got {alpha}")));
    }
    if t_e < 0.0 {
        return Err(TradeError::InvalidArgument(format!("T_e must be non-negative, got {t_e}")));
    }
    let first = 2048.0 * p_bound.powi(4) * horizon.ln().powi(3) / (alpha * alpha);
    Ok(first.max(2.0 * p_bound * t_e))
}

/// Mean profit of collection rounds against fixed valuations, with its
/// standard error.
pub fn collection_profit_mc(
    s: f64,
    b: f64,
    p_bound: f64,
    horizon: usize,
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for n in 1..=draws {
        let (p, q) = budget_collection_price(p_bound, horizon, 2.0, rng);
        let v = if s <= p && q <= b { q - p } else { 0.0 };
        let delta = v - mean;
        mean += delta / n as f64;
        m2 += delta * (v - mean);
    }
    let var = if draws > 1 { m2 / (draws - 1) as f64 } else { 0.0 };
    (mean, (var / draws as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetMode {
    /// `max{2048P⁴α⁻²log³T, 2P·T_e}`
    Theorem,
    /// `2P·T_e`
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LedgerPhase {
    Collecting,
    Exploring,
    Committed,
    FallbackHalted,
}

impl LedgerPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            LedgerPhase::Collecting => "collecting",
            LedgerPhase::Exploring => "exploring",
            LedgerPhase::Committed => "committed",
            LedgerPhase::FallbackHalted => "fallback_halted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetLedger {
    pub target: f64,
    /// Total realized profit, collection included.
    pub cum_profit: f64,
    /// Total loss of simulated rounds, as a positive number.
    pub spent: f64,
    pub phase: LedgerPhase,
    /// Round at which collection ended.
    pub tau: Option<usize>,
}

impl BudgetLedger {
    pub fn new(target: f64) -> Self {
        Self { target, cum_profit: 0.0, spent: 0.0, phase: LedgerPhase::Collecting, tau: None }
    }

    /// Balance available to simulated rounds.
    pub fn remaining(&self) -> f64 {
        self.cum_profit
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneBitConfig {
    pub horizon: usize,
    pub p_bound: f64,
    pub alpha: f64,
    /// Exploration length the budget must fund; defaults to the inner
    /// policy's bound.
    pub t_e: Option<f64>,
    pub mode: BudgetMode,
    pub i_base: f64,
}

impl OneBitConfig {
    pub fn new(horizon: usize, p_bound: f64) -> Self {
        Self { horizon, p_bound, alpha: 1.0, t_e: None, mode: BudgetMode::Explicit, i_base: 2.0 }
    }
}

#[derive(Debug, Clone)]
enum Pending {
    Collect,
    Seller { inner: PolicyDecision, x: DVector<f64>, p: f64 },
    Buyer { inner: PolicyDecision, x: DVector<f64>, q: f64 },
    BothFirst { inner: PolicyDecision, x: DVector<f64>, p: f64 },
    BothSecond { inner: PolicyDecision, first: SideObs, x: DVector<f64>, q: f64 },
    Pass { inner: PolicyDecision },
    Halted,
}

#[derive(Debug)]
pub struct OneBit<P: Policy> {
    inner: P,
    config: OneBitConfig,
    ledger: BudgetLedger,
    t_e: f64,
    round: usize,
    pending: Option<Pending>,
    awaiting_buyer: Option<(PolicyDecision, SideObs)>,
    collect_rounds: usize,
    simulated_rounds: usize,
    pass_rounds: usize,
    halted_rounds: usize,
}

impl<P: Policy> OneBit<P> {
    pub fn new(inner: P, config: OneBitConfig) -> Result<Self> {
        let t_e = config.t_e.unwrap_or_else(|| inner.exploration_bound()).ceil();
        if !(t_e.is_finite() && t_e >= 0.0) {
            return Err(TradeError::InvalidArgument(format!("T_e must be finite and non-negative, got {t_e}")));
        }
        if !(config.i_base > 1.0) {
            return Err(TradeError::InvalidArgument(format!("collection base must exceed 1, got {}", config.i_base)));
        }
        let target = match config.mode {
            BudgetMode::Theorem => compute_budget(config.alpha, config.p_bound, config.horizon as f64, t_e)?,
            BudgetMode::Explicit => 2.0 * config.p_bound * t_e,
        };
        Ok(Self {
            inner,
            config,
            ledger: BudgetLedger::new(target),
            t_e,
            round: 0,
            pending: None,
            awaiting_buyer: None,
            collect_rounds: 0,
            simulated_rounds: 0,
            pass_rounds: 0,
            halted_rounds: 0,
        })
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn ledger(&self) -> &BudgetLedger {
        &self.ledger
    }

    pub fn t_e(&self) -> f64 {
        self.t_e
    }

    fn halt(&mut self, x: &DVector<f64>) -> PolicyDecision {
        self.ledger.phase = LedgerPhase::FallbackHalted;
        self.awaiting_buyer = None;
        self.pending = Some(Pending::Halted);
        PolicyDecision::equal(self.inner.greedy_price(x), Need::NoLearning, Phase::Fallback)
    }

    pub fn decide(&mut self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<PolicyDecision> {
        if self.pending.is_some() {
            return Err(TradeError::Contract("decide twice without observe".into()));
        }
        let p_bound = self.config.p_bound;
        if self.ledger.phase == LedgerPhase::Collecting && self.ledger.cum_profit >= self.ledger.target {
            self.ledger.phase = LedgerPhase::Exploring;
            self.ledger.tau = Some(self.round);
        }
        match self.ledger.phase {
            LedgerPhase::Collecting => {
                let (p, q) = budget_collection_price(p_bound, self.config.horizon, self.config.i_base, rng);
                self.pending = Some(Pending::Collect);
                return Ok(PolicyDecision { q, ..PolicyDecision::equal(p, Need::NoLearning, Phase::BudgetCollect) });
            }
            LedgerPhase::FallbackHalted => return Ok(self.halt(x)),
            _ => {}
        }
        if let Some((inner, first)) = self.awaiting_buyer.take() {
            if self.ledger.remaining() < 2.0 * p_bound {
                return Ok(self.halt(x));
            }
            let q = self.inner.buyer_followup(x, rng)?;
            self.pending = Some(Pending::BothSecond { inner, first, x: x.clone(), q });
            return Ok(PolicyDecision { p: p_bound, q, ..inner_labels(&inner, Phase::SimulatedExplore) });
        }
        let inner = self.inner.decide(x, rng)?;
        let reserve = match inner.need {
            Need::NoLearning => 0.0,
            Need::SellerBit | Need::BuyerBit => 2.0 * p_bound,
            Need::BothBits => 4.0 * p_bound,
        };
        if self.ledger.remaining() < reserve {
            return Ok(self.halt(x));
        }
        let (p, q, pending) = match inner.need {
            Need::NoLearning => (inner.p, inner.q, Pending::Pass { inner }),
            Need::SellerBit => (inner.p, -p_bound, Pending::Seller { inner, x: x.clone(), p: inner.p }),
            Need::BuyerBit => (p_bound, inner.p, Pending::Buyer { inner, x: x.clone(), q: inner.p }),
            Need::BothBits => (inner.p, -p_bound, Pending::BothFirst { inner, x: x.clone(), p: inner.p }),
        };
        self.ledger.phase = if inner.need == Need::NoLearning { LedgerPhase::Committed } else { LedgerPhase::Exploring };
        let phase = if inner.need == Need::NoLearning { inner.phase } else { Phase::SimulatedExplore };
        self.pending = Some(pending);
        Ok(PolicyDecision { p, q, ..inner_labels(&inner, phase) })
    }

    /// Consumes the single trade bit of the round decided last.
    pub fn observe(&mut self, decision: &PolicyDecision, traded: bool) -> Result<()> {
        let pending = self.pending.take().ok_or_else(|| TradeError::Contract("observe without decide".into()))?;
        let profit = if traded { decision.q - decision.p } else { 0.0 };
        self.ledger.cum_profit += profit;
        self.round += 1;
        match pending {
            Pending::Collect => self.collect_rounds += 1,
            Pending::Halted => self.halted_rounds += 1,
            Pending::Pass { inner } => {
                self.pass_rounds += 1;
                self.inner.observe(&inner, &Feedback::none())?;
            }
            Pending::Seller { inner, x, p } => {
                self.simulated(profit);
                let fb = Feedback { seller: Some(SideObs { x, price: p, accepted: traded }), buyer: None };
                self.inner.observe(&inner, &fb)?;
            }
            Pending::Buyer { inner, x, q } => {
                self.simulated(profit);
                let fb = Feedback { seller: None, buyer: Some(SideObs { x, price: q, accepted: traded }) };
                self.inner.observe(&inner, &fb)?;
            }
            Pending::BothFirst { inner, x, p } => {
                self.simulated(profit);
                self.awaiting_buyer = Some((inner, SideObs { x, price: p, accepted: traded }));
            }
            Pending::BothSecond { inner, first, x, q } => {
                self.simulated(profit);
                let fb = Feedback { seller: Some(first), buyer: Some(SideObs { x, price: q, accepted: traded }) };
                self.inner.observe(&inner, &fb)?;
            }
        }
        Ok(())
    }

    fn simulated(&mut self, profit: f64) {
        self.simulated_rounds += 1;
        if profit < 0.0 {
            self.ledger.spent -= profit;
        }
    }

    pub fn diagnostics(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("onebit.budget_target".into(), self.ledger.target),
            ("onebit.T_e".into(), self.t_e),
            ("onebit.tau".into(), self.ledger.tau.map_or(-1.0, |t| t as f64)),
            ("onebit.spent".into(), self.ledger.spent),
            ("onebit.collect_rounds".into(), self.collect_rounds as f64),
            ("onebit.simulated_rounds".into(), self.simulated_rounds as f64),
            ("onebit.pass_rounds".into(), self.pass_rounds as f64),
            ("onebit.halted_rounds".into(), self.halted_rounds as f64),
            ("onebit.halted".into(), f64::from(u8::from(self.ledger.phase == LedgerPhase::FallbackHalted))),
        ];
        out.extend(self.inner.diagnostics());
        out
    }
}

fn inner_labels(inner: &PolicyDecision, phase: Phase) -> PolicyDecision {
    PolicyDecision { phase, ..*inner }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::EpBt;
    use crate::rng::{stream, Stream};
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    #[test]
    fn two_round_horizon_always_adds_one() {
        let mut rng = stream(0, Stream::Policy);
        for _ in 0..1000 {
            let (p, q) = budget_collection_price(1.0, 2, 2.0, &mut rng);
            assert!((-1.0..=1.0).contains(&p));
            assert_eq!(q - p, 1.0);
        }
    }

    #[test]
    fn collection_spread_range() {
        let mut rng = stream(1, Stream::Policy);
        let t = 10_000;
        let lo = 2f64.powi(-(collection_levels(t) as i32) + 1);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..20_000 {
            let (p, q) = budget_collection_price(1.0, t, 2.0, &mut rng);
            let gap = q - p;
            assert!(gap >= lo * (1.0 - 1e-12) && gap <= 1.0 + 1e-12);
            seen.insert((-gap.log2()).round() as i64);
        }
        assert_eq!(seen.len(), collection_levels(t));
    }

    #[test]
    fn budget_formula() {
        assert_relative_eq!(compute_budget(1.0, 1.0, std::f64::consts::E, 0.0).unwrap(), 2048.0, max_relative = 1e-12);
        assert_relative_eq!(compute_budget(1.0, 1.0, std::f64::consts::E, 1e9).unwrap(), 2e9);
        let full = compute_budget(1.0, 1.0, 100.0, 0.0).unwrap();
        let half = compute_budget(0.5, 1.0, 100.0, 0.0).unwrap();
        assert_relative_eq!(half, 4.0 * full, max_relative = 1e-12);
        assert!(compute_budget(0.0, 1.0, 100.0, 0.0).is_err());
    }

    #[test]
    fn seller_simulation_example() {
        let inner = EpBt::new(1, 1.0, 1.0, 1e-3).unwrap();
        let cfg = OneBitConfig { t_e: Some(1.0), ..OneBitConfig::new(100, 2.0) };
        let mut w = OneBit::new(inner, cfg).unwrap();
        // pre-fund to skip collection
        w.ledger.cum_profit = w.ledger.target;
        let mut rng = stream(0, Stream::Policy);
        let x = dvector![0.5];
        let dec = w.decide(&x, &mut rng).unwrap();
        assert_eq!(dec.phase, Phase::SimulatedExplore);
        assert_eq!(dec.need, Need::SellerBit);
        assert_eq!(dec.p, 0.0);
        assert_eq!(dec.q, -2.0);
        let before = w.ledger().cum_profit;
        let s = -0.1;
        w.observe(&dec, s <= dec.p).unwrap();
        assert_relative_eq!(w.ledger().cum_profit - before, -2.0 - 0.0);
        assert_relative_eq!(w.ledger().spent, 2.0);
    }

    #[test]
    fn seller_simulation_at_half() {
        // a seller-bit round posted at 0.5 with P = 1 and s = 0.4 trades at a loss of P + 0.5
        let dec = PolicyDecision { q: -1.0, ..PolicyDecision::equal(0.5, Need::SellerBit, Phase::SimulatedExplore) };
        let (s, b) = (0.4, -0.9);
        let traded = s <= dec.p && dec.q <= b;
        assert!(traded);
        assert_relative_eq!(dec.q - dec.p, -1.5);
    }

    #[test]
    fn halts_when_budget_short() {
        let inner = EpBt::new(1, 1.0, 1.0, 1e-3).unwrap();
        let cfg = OneBitConfig { t_e: Some(0.0), ..OneBitConfig::new(100, 2.0) };
        let mut w = OneBit::new(inner, cfg).unwrap();
        let mut rng = stream(0, Stream::Policy);
        let x = dvector![0.5];
        let dec = w.decide(&x, &mut rng).unwrap();
        // zero target: collection ends at once, and zero balance cannot fund a simulated round
        assert_eq!(w.ledger().tau, Some(0));
        assert_eq!(dec.phase, Phase::Fallback);
        assert_eq!(dec.p, dec.q);
        w.observe(&dec, true).unwrap();
        assert_eq!(w.ledger().phase, LedgerPhase::FallbackHalted);
    }

    #[test]
    fn collection_profit_positive_between_valuations() {
        let mut rng = stream(7, Stream::MonteCarlo);
        let (m, se) = collection_profit_mc(0.25, 0.75, 1.0, 10_000, 200_000, &mut rng);
        let bound = 0.25 / (8.0 * (10_000f64).ln()) - 2e-4;
        assert!(m - 3.0 * se >= bound, "{m} ± {se} vs {bound}");
    }
}
