//! Ellipsoid pricing for noiseless valuations.
//!
//! One ellipsoid per side holds every parameter consistent with the bits seen
//! so far. Each round posts a single price `p = q`:
//!
//! 1. seller interval entirely below buyer interval: post between them;
//! 2. seller interval wider than `ε`: bisect it and cut `E_s`;
//! 3. buyer interval wider than `ε`: bisect it and cut `E_b`;
//! 4. otherwise post `(s̄ + b̲)/2`.

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use super::{Feedback, Need, Phase, Policy, PolicyDecision};
use crate::ellipsoid::{Ellipsoid, Half};
use crate::error::{Result, TradeError};

#[derive(Debug, Clone)]
pub struct EpBt {
    e_s: Ellipsoid,
    e_b: Ellipsoid,
    eps: f64,
    a_bound: f64,
    b_bound: f64,
    pending: Option<DVector<f64>>,
    seller_cuts: usize,
    buyer_cuts: usize,
    commits: usize,
    fallbacks: usize,
}

impl EpBt {
    pub fn new(d: usize, a_bound: f64, b_bound: f64, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(TradeError::InvalidArgument(format!("ε must be positive, got {eps}")));
        }
        let radius = a_bound.max(f64::MIN_POSITIVE);
        Ok(Self {
            e_s: Ellipsoid::ball(d, radius)?,
            e_b: Ellipsoid::ball(d, radius)?,
            eps,
            a_bound,
            b_bound,
            pending: None,
            seller_cuts: 0,
            buyer_cuts: 0,
            commits: 0,
            fallbacks: 0,
        })
    }

    /// `ε = A·B·d²/T`
    pub fn default_eps(d: usize, a_bound: f64, b_bound: f64, horizon: usize) -> f64 {
        a_bound * b_bound * (d * d) as f64 / horizon as f64
    }

    /// `4d²·log(20A(d+1)B/ε)`
    pub fn exploration_limit(d: usize, a_bound: f64, b_bound: f64, eps: f64) -> f64 {
        let d_f = d as f64;
        4.0 * d_f * d_f * (20.0 * a_bound * (d_f + 1.0) * b_bound / eps).ln()
    }

    pub fn seller_set(&self) -> &Ellipsoid {
        &self.e_s
    }

    pub fn buyer_set(&self) -> &Ellipsoid {
        &self.e_b
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Rounds that cut an ellipsoid so far.
    pub fn exploration_rounds(&self) -> usize {
        self.seller_cuts + self.buyer_cuts
    }
}

impl Policy for EpBt {
    fn name(&self) -> &'static str {
        "epbt"
    }

    fn decide(&mut self, x: &DVector<f64>, _rng: &mut ChaCha8Rng) -> Result<PolicyDecision> {
        let (s_lo, s_hi) = self.e_s.support_interval(x);
        let (b_lo, b_hi) = self.e_b.support_interval(x);
        self.pending = Some(x.clone());
        let decision = if s_hi < b_lo {
            PolicyDecision::equal(0.5 * (s_hi + b_lo), Need::NoLearning, Phase::Commit)
        } else if s_hi - s_lo >= self.eps {
            PolicyDecision::equal(0.5 * (s_hi + s_lo), Need::SellerBit, Phase::ParamExplore)
        } else if b_hi - b_lo >= self.eps {
            PolicyDecision::equal(0.5 * (b_hi + b_lo), Need::BuyerBit, Phase::ParamExplore)
        } else {
            PolicyDecision::equal(0.5 * (s_hi + b_lo), Need::NoLearning, Phase::Fallback)
        };
        Ok(decision)
    }

    fn observe(&mut self, decision: &PolicyDecision, feedback: &Feedback) -> Result<()> {
        feedback.check(decision.need)?;
        let x = self.pending.take().ok_or_else(|| TradeError::Contract("observe without decide".into()))?;
        match decision.need {
            Need::SellerBit => {
                let obs = feedback.seller.as_ref().expect("checked");
                // accepted ⇔ xᵀθˢ ≤ p = xᵀc
                let keep = if obs.accepted { Half::Lower } else { Half::Upper };
                self.e_s = self.e_s.central_cut(&x, keep)?;
                self.seller_cuts += 1;
            }
            Need::BuyerBit => {
                let obs = feedback.buyer.as_ref().expect("checked");
                // accepted ⇔ xᵀθᵇ ≥ p = xᵀc
                let keep = if obs.accepted { Half::Upper } else { Half::Lower };
                self.e_b = self.e_b.central_cut(&x, keep)?;
                self.buyer_cuts += 1;
            }
            Need::NoLearning => {
                if decision.phase == Phase::Commit {
                    self.commits += 1;
                } else {
                    self.fallbacks += 1;
                }
            }
            Need::BothBits => unreachable!("never requested"),
        }
        Ok(())
    }

    fn greedy_price(&self, x: &DVector<f64>) -> f64 {
        let (_, s_hi) = self.e_s.support_interval(x);
        let (b_lo, _) = self.e_b.support_interval(x);
        0.5 * (s_hi + b_lo)
    }

    fn estimates(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        Some((self.e_s.center().clone(), self.e_b.center().clone()))
    }

    fn diagnostics(&self) -> Vec<(String, f64)> {
        vec![
            ("epbt.eps".into(), self.eps),
            ("epbt.seller_cuts".into(), self.seller_cuts as f64),
            ("epbt.buyer_cuts".into(), self.buyer_cuts as f64),
            ("epbt.commit_rounds".into(), self.commits as f64),
            ("epbt.fallback_rounds".into(), self.fallbacks as f64),
            ("epbt.exploration_limit".into(), self.exploration_bound()),
        ]
    }

    fn exploration_bound(&self) -> f64 {
        Self::exploration_limit(self.e_s.dim(), self.a_bound, self.b_bound, self.eps)
    }
}
