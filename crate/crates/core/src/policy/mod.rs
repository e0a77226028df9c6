//! Pricing policies behind one interface.
//!
//! A policy proposes prices and declares, through [`Need`], which feedback
//! bits it will consume. Feeding it a bit it did not ask for is a contract
//! violation. The one-bit wrapper relies on this to simulate two-bit
//! feedback.

pub mod eoc;
pub mod epbt;
pub mod estimators;
pub mod onebit;
pub mod sbip;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TradeError};

pub use eoc::Eoc;
pub use epbt::EpBt;
pub use estimators::{EstimatorTables, Schedule, ScheduleOverrides};
pub use onebit::{BudgetLedger, BudgetMode, LedgerPhase, OneBit, OneBitConfig};
pub use sbip::Sbip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Need {
    SellerBit,
    BuyerBit,
    BothBits,
    NoLearning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    ParamExplore,
    IntExplore,
    FExplore,
    DExplore,
    Commit,
    BudgetCollect,
    SimulatedExplore,
    Fallback,
}

impl Phase {
    pub const ALL: [Phase; 8] = [
        Phase::ParamExplore,
        Phase::IntExplore,
        Phase::FExplore,
        Phase::DExplore,
        Phase::Commit,
        Phase::BudgetCollect,
        Phase::SimulatedExplore,
        Phase::Fallback,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::ParamExplore => "param_explore",
            Phase::IntExplore => "int_explore",
            Phase::FExplore => "f_explore",
            Phase::DExplore => "d_explore",
            Phase::Commit => "commit",
            Phase::BudgetCollect => "budget_collect",
            Phase::SimulatedExplore => "simulated_explore",
            Phase::Fallback => "fallback",
        }
    }

    /// Rounds whose price is set from the current parameter estimates.
    pub fn uses_estimates(self) -> bool {
        !matches!(self, Phase::ParamExplore | Phase::IntExplore | Phase::BudgetCollect)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyDecision {
    pub p: f64,
    pub q: f64,
    pub need: Need,
    pub phase: Phase,
    pub k: Option<i64>,
    pub k_prime: Option<i64>,
    /// The proposed price left `[−P, P]` and was clamped.
    pub clamped: bool,
}

impl PolicyDecision {
    pub fn equal(p: f64, need: Need, phase: Phase) -> Self {
        Self { p, q: p, need, phase, k: None, k_prime: None, clamped: false }
    }
}

/// One side's observation: the context and price it was taken at and
/// whether that agent accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct SideObs {
    pub x: DVector<f64>,
    pub price: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Feedback {
    pub seller: Option<SideObs>,
    pub buyer: Option<SideObs>,
}

impl Feedback {
    pub fn none() -> Self {
        Self::default()
    }

    /// Both bits from one two-bit round.
    pub fn two_bit(x: &DVector<f64>, p: f64, q: f64, seller: bool, buyer: bool) -> Self {
        Self {
            seller: Some(SideObs { x: x.clone(), price: p, accepted: seller }),
            buyer: Some(SideObs { x: x.clone(), price: q, accepted: buyer }),
        }
    }

    /// Restricts two-bit feedback to what `need` declares.
    pub fn restricted(self, need: Need) -> Self {
        match need {
            Need::BothBits => self,
            Need::SellerBit => Self { seller: self.seller, buyer: None },
            Need::BuyerBit => Self { seller: None, buyer: self.buyer },
            Need::NoLearning => Self::none(),
        }
    }

    /// Errors when a bit is present that `need` did not declare, or missing
    /// when it did.
    pub fn check(&self, need: Need) -> Result<()> {
        let (want_s, want_b) = match need {
            Need::SellerBit => (true, false),
            Need::BuyerBit => (false, true),
            Need::BothBits => (true, true),
            Need::NoLearning => (false, false),
        };
        if self.seller.is_some() != want_s || self.buyer.is_some() != want_b {
            return Err(TradeError::Contract(format!(
                "declared {need:?}, got seller={} buyer={}",
                self.seller.is_some(),
                self.buyer.is_some()
            )));
        }
        Ok(())
    }
}

pub trait Policy: Send {
    fn name(&self) -> &'static str;

    fn decide(&mut self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<PolicyDecision>;

    /// Consumes the feedback for the last decision; must match its `need`.
    fn observe(&mut self, decision: &PolicyDecision, feedback: &Feedback) -> Result<()>;

    /// Buyer-side price for the second half of a split `BothBits` round,
    /// taken at a fresh context.
    fn buyer_followup(&mut self, _x: &DVector<f64>, _rng: &mut ChaCha8Rng) -> Result<f64> {
        Err(TradeError::Contract(format!("{} never requests both bits", self.name())))
    }

    /// Strongly budget-balanced price that consumes no feedback.
    fn greedy_price(&self, x: &DVector<f64>) -> f64;

    /// Current `(θ̂ˢ, θ̂ᵇ)`, for learners that estimate parameters.
    fn estimates(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        None
    }

    /// Phase-length table and other diagnostics for the run summary.
    fn diagnostics(&self) -> Vec<(String, f64)> {
        Vec::new()
    }

    /// Upper bound on the number of rounds this policy spends exploring,
    /// counting each two-bit exploration round as two one-bit rounds.
    fn exploration_bound(&self) -> f64;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> &'static str {
        (**self).name()
    }

    fn decide(&mut self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<PolicyDecision> {
        (**self).decide(x, rng)
    }

    fn observe(&mut self, decision: &PolicyDecision, feedback: &Feedback) -> Result<()> {
        (**self).observe(decision, feedback)
    }

    fn buyer_followup(&mut self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<f64> {
        (**self).buyer_followup(x, rng)
    }

    fn greedy_price(&self, x: &DVector<f64>) -> f64 {
        (**self).greedy_price(x)
    }

    fn estimates(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        (**self).estimates()
    }

    fn diagnostics(&self) -> Vec<(String, f64)> {
        (**self).diagnostics()
    }

    fn exploration_bound(&self) -> f64 {
        (**self).exploration_bound()
    }
}

pub(crate) fn clamp_price(p: f64, p_bound: f64) -> (f64, bool) {
    if p > p_bound {
        (p_bound, true)
    } else if p < -p_bound {
        (-p_bound, true)
    } else {
        (p, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn feedback_contract() {
        let x = dvector![1.0];
        let fb = Feedback::two_bit(&x, 0.1, 0.1, true, false);
        assert!(fb.check(Need::BothBits).is_ok());
        assert!(fb.check(Need::SellerBit).is_err());
        let s = fb.clone().restricted(Need::SellerBit);
        assert!(s.check(Need::SellerBit).is_ok());
        assert!(Feedback::none().check(Need::NoLearning).is_ok());
        assert!(Feedback::none().check(Need::BuyerBit).is_err());
    }

    #[test]
    fn clamping() {
        assert_eq!(clamp_price(1.5, 1.0), (1.0, true));
        assert_eq!(clamp_price(-1.5, 1.0), (-1.0, true));
        assert_eq!(clamp_price(0.5, 1.0), (0.5, false));
    }
}
