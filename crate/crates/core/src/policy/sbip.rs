//! Successive-elimination learner over `(k, k')` price pairs.
//!
//! Parameter and integral rounds run as in explore-or-commit. After that every
//! round builds the admissible pairs for the context, keeps those whose upper
//! bound reaches the best lower bound, and posts the surviving pair with the
//! least observed arm.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::estimators::{EstimatorTables, Schedule};
use super::{clamp_price, Feedback, Need, Phase, Policy, PolicyDecision};
use crate::error::{Result, TradeError};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Par,
    Int,
    Pair(i64, i64),
    Greedy,
}

#[derive(Debug, Clone)]
pub struct Sbip {
    schedule: Schedule,
    d: usize,
    tables: EstimatorTables,
    f_sum: Vec<u64>,
    n_s: Vec<u64>,
    d_sum: Vec<u64>,
    n_b: Vec<u64>,
    se_s: Vec<u64>,
    se_b: Vec<u64>,
    active: Vec<(i64, i64)>,
    pending: Option<Kind>,
    par_rounds: usize,
    se_rounds: usize,
    fallback_rounds: usize,
    empty_sets: usize,
    clamps: usize,
}

impl Sbip {
    pub fn new(d: usize, schedule: Schedule) -> Self {
        let n = schedule.grid_len();
        Self {
            tables: EstimatorTables::from_schedule(d, &schedule),
            schedule,
            d,
            f_sum: vec![0; n],
            n_s: vec![0; n],
            d_sum: vec![0; n],
            n_b: vec![0; n],
            se_s: vec![0; n],
            se_b: vec![0; n],
            active: Vec::new(),
            pending: None,
            par_rounds: 0,
            se_rounds: 0,
            fallback_rounds: 0,
            empty_sets: 0,
            clamps: 0,
        }
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn tables(&self) -> &EstimatorTables {
        &self.tables
    }

    fn idx(&self, k: i64) -> usize {
        (k + self.schedule.k) as usize
    }

    pub fn f_hat(&self, k: i64) -> f64 {
        let i = self.idx(k);
        if self.n_s[i] == 0 {
            0.0
        } else {
            self.f_sum[i] as f64 / self.n_s[i] as f64
        }
    }

    pub fn d_hat(&self, k: i64) -> f64 {
        let i = self.idx(k);
        if self.n_b[i] == 0 {
            0.0
        } else {
            self.d_sum[i] as f64 / self.n_b[i] as f64
        }
    }

    /// Observations of the seller arm `k`.
    pub fn seller_count(&self, k: i64) -> u64 {
        self.n_s[self.idx(k)]
    }

    /// Observations of the buyer arm `k'`.
    pub fn buyer_count(&self, k: i64) -> u64 {
        self.n_b[self.idx(k)]
    }

    /// Rounds selected because seller arm `k` was the least observed.
    pub fn seller_selections(&self, k: i64) -> u64 {
        self.se_s[self.idx(k)]
    }

    /// Rounds selected because buyer arm `k'` was the least observed.
    pub fn buyer_selections(&self, k: i64) -> u64 {
        self.se_b[self.idx(k)]
    }

    /// Surviving pairs from the most recent elimination round.
    pub fn last_active(&self) -> &[(i64, i64)] {
        &self.active
    }

    fn point_value(&self, k: i64, kp: i64) -> f64 {
        self.tables.i_hat(kp) * self.f_hat(k) + self.tables.j_hat(k) * self.d_hat(kp)
    }

    fn width(&self, k: i64, kp: i64) -> f64 {
        let s = &self.schedule;
        s.eps_tilde + 2.0 * s.p_bound * (s.beta(self.n_s[self.idx(k)]) + s.beta(self.n_b[self.idx(kp)]))
    }

    /// Fills `self.active` and returns the pair to post, if any.
    fn eliminate(&mut self, x: &DVector<f64>) -> Option<(i64, i64, bool)> {
        let pairs = self.tables.candidate_pairs(x);
        self.active.clear();
        if pairs.is_empty() {
            return None;
        }
        let bounds: Vec<(i64, i64, f64, f64)> = pairs
            .iter()
            .map(|(k, kp)| {
                let v = self.point_value(k, kp);
                let w = self.width(k, kp);
                (k, kp, v + w, v - w)
            })
            .collect();
        let best_lcb = bounds.iter().map(|b| b.3).fold(f64::NEG_INFINITY, f64::max);
        self.active.extend(bounds.iter().filter(|b| b.2 >= best_lcb).map(|b| (b.0, b.1)));
        // the best-LCB pair always survives, unless every bound is infinite
        if self.active.is_empty() {
            self.active.extend(bounds.iter().map(|b| (b.0, b.1)));
        }
        let &(k, kp) = self
            .active
            .iter()
            .min_by_key(|&&(k, kp)| (self.n_s[self.idx(k)].min(self.n_b[self.idx(kp)]), k, kp))
            .expect("non-empty");
        Some((k, kp, self.n_s[self.idx(k)] <= self.n_b[self.idx(kp)]))
    }

    fn greedy_decision(&self, x: &DVector<f64>) -> PolicyDecision {
        let p_bound = self.schedule.p_bound;
        let ms = x.dot(self.tables.theta_s());
        if self.tables.is_finalized() {
            let mut best: Option<(i64, i64, f64)> = None;
            for (k, kp) in self.tables.candidate_pairs(x).iter() {
                let v = self.point_value(k, kp);
                if best.is_none_or(|(_, _, bv)| v > bv) {
                    best = Some((k, kp, v));
                }
            }
            if let Some((k, kp, _)) = best {
                let (p, clamped) = clamp_price(ms + k as f64 * self.schedule.eps, p_bound);
                return PolicyDecision { k: Some(k), k_prime: Some(kp), clamped, ..PolicyDecision::equal(p, Need::NoLearning, Phase::Commit) };
            }
        }
        let (p, clamped) = clamp_price(ms, p_bound);
        PolicyDecision { clamped, ..PolicyDecision::equal(p, Need::NoLearning, Phase::Fallback) }
    }
}

impl Policy for Sbip {
    fn name(&self) -> &'static str {
        "sbip"
    }

    fn decide(&mut self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<PolicyDecision> {
        if x.len() != self.d {
            return Err(TradeError::Dimension { expected: self.d, got: x.len() });
        }
        let p_bound = self.schedule.p_bound;
        let (kind, decision) = if self.tables.needs_param(x, self.schedule.mu) {
            let p = rng.gen_range(-p_bound..=p_bound);
            (Kind::Par, PolicyDecision::equal(p, Need::BothBits, Phase::ParamExplore))
        } else if self.tables.int_pending() {
            let p = rng.gen_range(-p_bound..=p_bound);
            (Kind::Int, PolicyDecision::equal(p, Need::BothBits, Phase::IntExplore))
        } else if let Some((k, kp, seller_side)) = self.eliminate(x) {
            let i = if seller_side { self.idx(k) } else { self.idx(kp) };
            if seller_side {
                self.se_s[i] += 1;
            } else {
                self.se_b[i] += 1;
            }
            let ms = x.dot(self.tables.theta_s());
            let (p, clamped) = clamp_price(ms + k as f64 * self.schedule.eps, p_bound);
            let dec = PolicyDecision {
                k: Some(k),
                k_prime: Some(kp),
                clamped,
                ..PolicyDecision::equal(p, Need::BothBits, Phase::Commit)
            };
            (Kind::Pair(k, kp), dec)
        } else {
            self.empty_sets += 1;
            let ms = x.dot(self.tables.theta_s());
            let (p, clamped) = clamp_price(ms, p_bound);
            (Kind::Greedy, PolicyDecision { clamped, ..PolicyDecision::equal(p, Need::NoLearning, Phase::Fallback) })
        };
        if decision.clamped {
            self.clamps += 1;
        }
        self.pending = Some(kind);
        Ok(decision)
    }

    fn observe(&mut self, decision: &PolicyDecision, feedback: &Feedback) -> Result<()> {
        feedback.check(decision.need)?;
        let kind = self.pending.take().ok_or_else(|| TradeError::Contract("observe without decide".into()))?;
        match kind {
            Kind::Par => {
                let (s, b) = (feedback.seller.as_ref().expect("checked"), feedback.buyer.as_ref().expect("checked"));
                self.tables.est_par_seller(&s.x, s.accepted);
                self.tables.est_par_buyer(&b.x, b.accepted);
                self.par_rounds += 1;
            }
            Kind::Int => {
                let (s, b) = (feedback.seller.as_ref().expect("checked"), feedback.buyer.as_ref().expect("checked"));
                self.tables.log_int_seller(&s.x, s.price, s.accepted);
                self.tables.log_int_buyer(&b.x, b.price, b.accepted);
                if !self.tables.int_pending() {
                    self.tables.est_int_finalize()?;
                }
            }
            Kind::Pair(k, kp) => {
                let (s, b) = (feedback.seller.as_ref().expect("checked"), feedback.buyer.as_ref().expect("checked"));
                let (i, j) = (self.idx(k), self.idx(kp));
                self.f_sum[i] += u64::from(s.accepted);
                self.n_s[i] += 1;
                self.d_sum[j] += u64::from(b.accepted);
                self.n_b[j] += 1;
                self.se_rounds += 1;
            }
            Kind::Greedy => self.fallback_rounds += 1,
        }
        Ok(())
    }

    fn buyer_followup(&mut self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<f64> {
        let p_bound = self.schedule.p_bound;
        match self.pending {
            Some(Kind::Par | Kind::Int) => Ok(rng.gen_range(-p_bound..=p_bound)),
            // the buyer arm k' is read at the follow-up context
            Some(Kind::Pair(k, _)) => {
                Ok(clamp_price(x.dot(self.tables.theta_s()) + k as f64 * self.schedule.eps, p_bound).0)
            }
            _ => Err(TradeError::Contract("buyer follow-up outside a two-bit round".into())),
        }
    }

    fn greedy_price(&self, x: &DVector<f64>) -> f64 {
        self.greedy_decision(x).p
    }

    fn estimates(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        Some((self.tables.theta_s().clone(), self.tables.theta_b().clone()))
    }

    fn diagnostics(&self) -> Vec<(String, f64)> {
        let s = &self.schedule;
        vec![
            ("sbip.eps".into(), s.eps),
            ("sbip.eps_tilde".into(), s.eps_tilde),
            ("sbip.delta".into(), s.delta),
            ("sbip.mu".into(), s.mu),
            ("sbip.T_int".into(), s.t_int as f64),
            ("sbip.K".into(), s.k as f64),
            ("sbip.param_rounds".into(), self.par_rounds as f64),
            ("sbip.int_rounds".into(), self.tables.int_rounds() as f64),
            ("sbip.se_rounds".into(), self.se_rounds as f64),
            ("sbip.se_seller_selected".into(), self.se_s.iter().sum::<u64>() as f64),
            ("sbip.se_buyer_selected".into(), self.se_b.iter().sum::<u64>() as f64),
            ("sbip.last_active".into(), self.active.len() as f64),
            ("sbip.empty_sets".into(), self.empty_sets as f64),
            ("sbip.fallback_rounds".into(), self.fallback_rounds as f64),
            ("sbip.clamps".into(), self.clamps as f64),
        ]
    }

    /// Every elimination round learns, so only the warm-up is bounded; the
    /// elimination rounds are counted on top of it.
    fn exploration_bound(&self) -> f64 {
        let s = &self.schedule;
        2.0 * (s.param_round_bound(self.d) + s.t_int as f64)
    }
}
