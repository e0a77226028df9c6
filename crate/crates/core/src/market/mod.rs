//! Ground-truth market: linear valuations with additive noise, gain from
//! trade, profit, and the two feedback channels.

pub mod context;
pub mod noise;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TradeError};

pub use context::{ContextGenerator, ContextStream};
pub use noise::{NoiseSpec, PiecewiseUniform};

/// Slack on `‖x‖ ≤ B` that absorbs rounding in generated contexts.
const NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMarket {
    theta_s: DVector<f64>,
    theta_b: DVector<f64>,
    noise_s: NoiseSpec,
    noise_b: NoiseSpec,
    a_bound: f64,
    b_bound: f64,
}

impl LinearMarket {
    pub fn new(
        theta_s: DVector<f64>,
        theta_b: DVector<f64>,
        noise_s: NoiseSpec,
        noise_b: NoiseSpec,
        a_bound: f64,
        b_bound: f64,
    ) -> Result<Self> {
        if theta_s.len() != theta_b.len() {
            return Err(TradeError::Dimension { expected: theta_s.len(), got: theta_b.len() });
        }
        if theta_s.is_empty() {
            return Err(TradeError::InvalidArgument("dimension must be >= 1".into()));
        }
        if !(a_bound >= 0.0 && b_bound >= 0.0) {
            return Err(TradeError::InvalidArgument("A and B must be non-negative".into()));
        }
        for theta in [&theta_s, &theta_b] {
            let norm = theta.norm();
            if norm > a_bound {
                return Err(TradeError::ParameterNorm { norm, bound: a_bound });
            }
        }
        if noise_s.is_noiseless() != noise_b.is_noiseless() {
            return Err(TradeError::Noise("seller and buyer must both be noisy or both noiseless".into()));
        }
        Ok(Self { theta_s, theta_b, noise_s, noise_b, a_bound, b_bound })
    }

    /// Parameters drawn uniformly from the ball of radius `a_bound`.
    pub fn random<R: Rng + ?Sized>(
        d: usize,
        a_bound: f64,
        b_bound: f64,
        noise_s: NoiseSpec,
        noise_b: NoiseSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let mut draw = || {
            let g = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let r = a_bound * rng.gen::<f64>().powf(1.0 / d as f64);
            let n = g.norm().max(1e-300);
            let theta = g * (r / n);
            let m = theta.norm();
            if m > a_bound {
                theta * (a_bound / m)
            } else {
                theta
            }
        };
        let theta_s = draw();
        let theta_b = draw();
        Self::new(theta_s, theta_b, noise_s, noise_b, a_bound, b_bound)
    }

    /// Rejects noise that learners must not see (non-centered fixtures).
    pub fn validate_for_learning(&self) -> Result<()> {
        if !self.noise_s.is_centered() || !self.noise_b.is_centered() {
            return Err(TradeError::Noise("non-centered noise is admitted by the oracle only".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.theta_s.len()
    }

    pub fn theta_s(&self) -> &DVector<f64> {
        &self.theta_s
    }

    pub fn theta_b(&self) -> &DVector<f64> {
        &self.theta_b
    }

    pub fn noise_s(&self) -> &NoiseSpec {
        &self.noise_s
    }

    pub fn noise_b(&self) -> &NoiseSpec {
        &self.noise_b
    }

    pub fn a_bound(&self) -> f64 {
        self.a_bound
    }

    pub fn b_bound(&self) -> f64 {
        self.b_bound
    }

    /// Common noise support bound `C` (largest of the two sides).
    pub fn noise_bound(&self) -> f64 {
        self.noise_s.support_bound().max(self.noise_b.support_bound())
    }

    /// Common density bound `L`.
    pub fn density_bound(&self) -> f64 {
        self.noise_s.density_bound().max(self.noise_b.density_bound())
    }

    /// Price range half-width `P = C + A·B`.
    pub fn price_bound(&self) -> f64 {
        self.noise_bound() + self.a_bound * self.b_bound
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise_s.is_noiseless()
    }

    /// `xᵀθˢ`
    pub fn seller_mean(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.theta_s)
    }

    /// `xᵀθᵇ`
    pub fn buyer_mean(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.theta_b)
    }

    /// `Δ = xᵀ(θᵇ - θˢ)`
    pub fn mean_gap(&self, x: &DVector<f64>) -> f64 {
        self.buyer_mean(x) - self.seller_mean(x)
    }

    pub fn check_context(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(TradeError::Dimension { expected: self.dim(), got: x.len() });
        }
        let norm = x.norm();
        if norm > self.b_bound + NORM_SLACK {
            return Err(TradeError::ContextNorm { norm, bound: self.b_bound });
        }
        Ok(())
    }

    /// Draws `(s, b)`; consumes one seller draw then one buyer draw.
    pub fn sample_valuations<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> Result<(f64, f64)> {
        self.check_context(x)?;
        let s = self.seller_mean(x) + self.noise_s.sample(rng);
        let b = self.buyer_mean(x) + self.noise_b.sample(rng);
        Ok((s, b))
    }
}

/// `1{s ≤ p}·1{q ≤ b}·(b - s)`
pub fn gain_from_trade(s: f64, b: f64, p: f64, q: f64) -> f64 {
    if s <= p && q <= b {
        b - s
    } else {
        0.0
    }
}

/// `1{s ≤ p}·1{q ≤ b}·(q - p)`
pub fn profit(s: f64, b: f64, p: f64, q: f64) -> f64 {
    if s <= p && q <= b {
        q - p
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackMode {
    TwoBit,
    OneBit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bits {
    Two { seller: bool, buyer: bool },
    One(bool),
}

pub fn feedback(s: f64, b: f64, p: f64, q: f64, mode: FeedbackMode) -> Bits {
    let seller = s <= p;
    let buyer = q <= b;
    match mode {
        FeedbackMode::TwoBit => Bits::Two { seller, buyer },
        FeedbackMode::OneBit => Bits::One(seller && buyer),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundOutcome {
    pub s: f64,
    pub b: f64,
    pub p: f64,
    pub q: f64,
    pub seller_accepts: bool,
    pub buyer_accepts: bool,
    pub traded: bool,
    pub gft: f64,
    pub profit: f64,
}

impl RoundOutcome {
    pub fn evaluate(s: f64, b: f64, p: f64, q: f64) -> Self {
        let seller_accepts = s <= p;
        let buyer_accepts = q <= b;
        let traded = seller_accepts && buyer_accepts;
        Self {
            s,
            b,
            p,
            q,
            seller_accepts,
            buyer_accepts,
            traded,
            gft: gain_from_trade(s, b, p, q),
            profit: profit(s, b, p, q),
        }
    }
}
