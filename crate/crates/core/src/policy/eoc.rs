//! Explore-or-commit learner for noisy valuations with two-bit feedback.
//!
//! Each round takes the first branch that applies:
//!
//! 1. `‖x‖_{V⁻¹} > μ`: parameter round at a uniform price;
//! 2. fewer than `T_int` integral rounds: integral round at a uniform price;
//! 3. some `F̂^k` under-sampled: post `xᵀθ̂ˢ + kε`, read the seller bit;
//! 4. some `D̂^k` under-sampled: post `xᵀθ̂ᵇ + kε`, read the buyer bit;
//! 5. commit to the pair maximizing `F̂^k·Î^{k'} + D̂^{k'}·Ĵ^k`.

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
    F(i64),
    D(i64),
    Greedy,
}

#[derive(Debug, Clone)]
pub struct Eoc {
    schedule: Schedule,
    d: usize,
    tables: EstimatorTables,
    f_sum: Vec<u64>,
    f_n: Vec<u64>,
    d_sum: Vec<u64>,
    d_n: Vec<u64>,
    f_done: usize,
    d_done: usize,
    pending: Option<Kind>,
    par_rounds: usize,
    commit_rounds: usize,
    fallback_rounds: usize,
    clamps: usize,
}

impl Eoc {
    pub fn new(d: usize, schedule: Schedule) -> Self {
        let n = schedule.grid_len();
        Self {
            tables: EstimatorTables::from_schedule(d, &schedule),
            schedule,
            d,
            f_sum: vec![0; n],
            f_n: vec![0; n],
            d_sum: vec![0; n],
            d_n: vec![0; n],
            f_done: 0,
            d_done: 0,
            pending: None,
            par_rounds: 0,
            commit_rounds: 0,
            fallback_rounds: 0,
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

    /// `F̂^k`, the fraction of seller acceptances at increment `kε`.
    pub fn f_hat(&self, k: i64) -> f64 {
        let i = self.idx(k);
        if self.f_n[i] == 0 {
            0.0
        } else {
            self.f_sum[i] as f64 / self.f_n[i] as f64
        }
    }

    /// `D̂^k`, the fraction of buyer acceptances at increment `kε`.
    pub fn d_hat(&self, k: i64) -> f64 {
        let i = self.idx(k);
        if self.d_n[i] == 0 {
            0.0
        } else {
            self.d_sum[i] as f64 / self.d_n[i] as f64
        }
    }

    fn grid_total(&self) -> usize {
        self.schedule.grid_len() * self.schedule.t_fd
    }

    /// Grid index visited next; cycling keeps every count within one of the
    /// minimum, so this is the least-sampled `k` with ties to the smallest.
    fn cycle_k(&self, done: usize) -> i64 {
        (done % self.schedule.grid_len()) as i64 - self.schedule.k
    }

    /// Best pair under the current estimates, or `None` when no pair is
    /// admissible.
    fn best_pair(&self, x: &DVector<f64>) -> Option<(i64, i64, f64)> {
        let pairs = self.tables.candidate_pairs(x);
        let mut best: Option<(i64, i64, f64)> = None;
        for (k, kp) in pairs.iter() {
            let v = self.f_hat(k) * self.tables.i_hat(kp) + self.d_hat(kp) * self.tables.j_hat(k);
            if best.is_none_or(|(_, _, bv)| v > bv) {
                best = Some((k, kp, v));
            }
        }
        best
    }

    fn greedy_decision(&self, x: &DVector<f64>) -> PolicyDecision {
        let p_bound = self.schedule.p_bound;
        let ms = x.dot(self.tables.theta_s());
        if self.tables.is_finalized() {
            if let Some((k, kp, _)) = self.best_pair(x) {
                let (p, clamped) = clamp_price(ms + k as f64 * self.schedule.eps, p_bound);
                return PolicyDecision { k: Some(k), k_prime: Some(kp), clamped, ..PolicyDecision::equal(p, Need::NoLearning, Phase::Commit) };
            }
        }
        let (p, clamped) = clamp_price(ms, p_bound);
        PolicyDecision { clamped, ..PolicyDecision::equal(p, Need::NoLearning, Phase::Fallback) }
    }
}

impl Policy for Eoc {
    fn name(&self) -> &'static str {
        "eoc"
    }

    fn decide(&mut self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<PolicyDecision> {
        if x.len() != self.d {
            return Err(TradeError::Dimension { expected: self.d, got: x.len() });
        }
        let p_bound = self.schedule.p_bound;
        let eps = self.schedule.eps;
        let (kind, decision) = if self.tables.needs_param(x, self.schedule.mu) {
            let p = rng.gen_range(-p_bound..=p_bound);
            (Kind::Par, PolicyDecision::equal(p, Need::BothBits, Phase::ParamExplore))
        } else if self.tables.int_pending() {
            let p = rng.gen_range(-p_bound..=p_bound);
            (Kind::Int, PolicyDecision::equal(p, Need::BothBits, Phase::IntExplore))
        } else if self.f_done < self.grid_total() {
            let k = self.cycle_k(self.f_done);
            let (p, clamped) = clamp_price(x.dot(self.tables.theta_s()) + k as f64 * eps, p_bound);
            (Kind::F(k), PolicyDecision { k: Some(k), clamped, ..PolicyDecision::equal(p, Need::SellerBit, Phase::FExplore) })
        } else if self.d_done < self.grid_total() {
            let k = self.cycle_k(self.d_done);
            let (p, clamped) = clamp_price(x.dot(self.tables.theta_b()) + k as f64 * eps, p_bound);
            (Kind::D(k), PolicyDecision { k_prime: Some(k), clamped, ..PolicyDecision::equal(p, Need::BuyerBit, Phase::DExplore) })
        } else {
            (Kind::Greedy, self.greedy_decision(x))
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
            Kind::F(k) => {
                let i = self.idx(k);
                self.f_sum[i] += u64::from(feedback.seller.as_ref().expect("checked").accepted);
                self.f_n[i] += 1;
                self.f_done += 1;
            }
            Kind::D(k) => {
                let i = self.idx(k);
                self.d_sum[i] += u64::from(feedback.buyer.as_ref().expect("checked").accepted);
                self.d_n[i] += 1;
                self.d_done += 1;
            }
            Kind::Greedy => {
                if decision.phase == Phase::Commit {
                    self.commit_rounds += 1;
                } else {
                    self.fallback_rounds += 1;
                }
            }
        }
        Ok(())
    }

    fn buyer_followup(&mut self, _x: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<f64> {
        match self.pending {
            Some(Kind::Par | Kind::Int) => {
                let p_bound = self.schedule.p_bound;
                Ok(rng.gen_range(-p_bound..=p_bound))
            }
            _ => Err(TradeError::Contract("buyer follow-up outside a two-bit exploration round".into())),
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
            ("eoc.eps".into(), s.eps),
            ("eoc.delta".into(), s.delta),
            ("eoc.mu".into(), s.mu),
            ("eoc.T_int".into(), s.t_int as f64),
            ("eoc.T_FD".into(), s.t_fd as f64),
            ("eoc.K".into(), s.k as f64),
            ("eoc.param_rounds".into(), self.par_rounds as f64),
            ("eoc.int_rounds".into(), self.tables.int_rounds() as f64),
            ("eoc.f_rounds".into(), self.f_done as f64),
            ("eoc.d_rounds".into(), self.d_done as f64),
            ("eoc.commit_rounds".into(), self.commit_rounds as f64),
            ("eoc.fallback_rounds".into(), self.fallback_rounds as f64),
            ("eoc.clamps".into(), self.clamps as f64),
        ]
    }

    fn exploration_bound(&self) -> f64 {
        let s = &self.schedule;
        2.0 * (s.param_round_bound(self.d) + s.t_int as f64) + 2.0 * self.grid_total() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{LinearMarket, NoiseSpec};
    use crate::policy::ScheduleOverrides;
    use crate::rng::{stream, Stream};
    use nalgebra::dvector;

    fn small_schedule() -> Schedule {
        let ov = ScheduleOverrides { eps: Some(0.25), mu: Some(0.5), t_int: Some(50), t_fd: Some(4), ..Default::default() };
        Schedule::eoc(10_000, 1, 1.25, 1.0, 1.0, &ov).unwrap().0
    }

    fn drive(pol: &mut Eoc, market: &LinearMarket, rounds: usize, seed: u64) -> Vec<PolicyDecision> {
        let mut prng = stream(seed, Stream::Policy);
        let mut nrng = stream(seed, Stream::Noise);
        let x = dvector![1.0];
        (0..rounds)
            .map(|_| {
                let dec = pol.decide(&x, &mut prng).unwrap();
                let (s, b) = market.sample_valuations(&x, &mut nrng).unwrap();
                let fb = Feedback::two_bit(&x, dec.p, dec.q, s <= dec.p, dec.q <= b).restricted(dec.need);
                pol.observe(&dec, &fb).unwrap();
                dec
            })
            .collect()
    }

    #[test]
    fn grid_rounds_precede_commit_and_total_exactly() {
        let market = LinearMarket::new(
            dvector![0.1],
            dvector![0.3],
            NoiseSpec::uniform(0.25).unwrap(),
            NoiseSpec::uniform(0.25).unwrap(),
            1.0,
            1.0,
        )
        .unwrap();
        let mut pol = Eoc::new(1, small_schedule());
        let decisions = drive(&mut pol, &market, 3_000, 4);
        let first_commit = decisions.iter().position(|d| d.phase == Phase::Commit).expect("commits");
        let grid = decisions[..first_commit]
            .iter()
            .filter(|d| matches!(d.phase, Phase::FExplore | Phase::DExplore))
            .count();
        let s = pol.schedule();
        assert_eq!(grid, 2 * s.grid_len() * s.t_fd);
        assert!(decisions.iter().all(|d| d.p == d.q));
        assert!(decisions[first_commit..].iter().all(|d| !matches!(d.phase, Phase::FExplore | Phase::DExplore)));
    }

    #[test]
    fn follow_up_only_inside_two_bit_rounds() {
        let mut pol = Eoc::new(1, small_schedule());
        let mut rng = stream(1, Stream::Policy);
        let x = dvector![1.0];
        assert!(pol.buyer_followup(&x, &mut rng).is_err());
        let dec = pol.decide(&x, &mut rng).unwrap();
        assert_eq!(dec.need, Need::BothBits);
        let p2 = pol.buyer_followup(&x, &mut rng).unwrap();
        assert!(p2.abs() <= 1.25);
    }

    #[test]
    fn estimates_track_truth_after_warmup() {
        let market = LinearMarket::new(
            dvector![0.3],
            dvector![-0.2],
            NoiseSpec::uniform(0.25).unwrap(),
            NoiseSpec::uniform(0.25).unwrap(),
            1.0,
            1.0,
        )
        .unwrap();
        let ov = ScheduleOverrides { eps: Some(0.1), mu: Some(0.01), t_int: Some(10), t_fd: Some(1), ..Default::default() };
        let sched = Schedule::eoc(20_000, 1, market.price_bound(), 1.0, 1.0, &ov).unwrap().0;
        let mut pol = Eoc::new(1, sched);
        drive(&mut pol, &market, 12_000, 9);
        let (ts, tb) = pol.estimates().unwrap();
        assert!((ts[0] - 0.3).abs() < 0.05, "{ts}");
        assert!((tb[0] + 0.2).abs() < 0.05, "{tb}");
    }
}
