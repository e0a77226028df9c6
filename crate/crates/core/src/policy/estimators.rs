//! Estimation building blocks shared by the noisy learners: parameter
//! schedules, the ridge-style parameter estimates, and the integral tables.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, TradeError};

/// Learning constants for the explore-or-commit and scouting learners.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub horizon: usize,
    pub eps: f64,
    pub delta: f64,
    pub mu: f64,
    pub t_int: usize,
    /// Samples per grid point for the c.d.f./demand estimates (EOC only).
    pub t_fd: usize,
    pub k: i64,
    /// Discretization slack in the confidence bounds (SBIP only).
    pub eps_tilde: f64,
    pub p_bound: f64,
}

/// Per-constant overrides. A fixed value wins over the formula; a scale
/// multiplies the formula value. Constants downstream of an override are
/// recomputed from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOverrides {
    pub eps: Option<f64>,
    pub eps_scale: f64,
    pub delta: Option<f64>,
    pub mu: Option<f64>,
    pub mu_scale: f64,
    pub t_int: Option<usize>,
    pub t_int_scale: f64,
    pub t_fd: Option<usize>,
    pub t_fd_scale: f64,
    pub k: Option<i64>,
    pub eps_tilde: Option<f64>,
    /// Replaces `12PL + 7` in `ε̃ = (12PL + 7)·ε`.
    pub eps_tilde_factor: Option<f64>,
}

impl Default for ScheduleOverrides {
    fn default() -> Self {
        Self {
            eps: None,
            eps_scale: 1.0,
            delta: None,
            mu: None,
            mu_scale: 1.0,
            t_int: None,
            t_int_scale: 1.0,
            t_fd: None,
            t_fd_scale: 1.0,
            k: None,
            eps_tilde: None,
            eps_tilde_factor: None,
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(TradeError::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
    }
}

fn scaled_count(base: f64, scale: f64) -> usize {
    (base * scale).ceil().max(1.0) as usize
}

struct Common {
    horizon: usize,
    d: usize,
    p_bound: f64,
    a_bound: f64,
    b_bound: f64,
}

impl Common {
    fn finish(&self, eps: f64, delta: f64, eps_tilde_factor: f64, ov: &ScheduleOverrides) -> Result<(Schedule, Vec<String>)> {
        check_positive("eps", eps)?;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(TradeError::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
        }
        let (t, p) = (self.horizon as f64, self.p_bound);
        let log_inv_delta = (1.0 / delta).ln();
        let mu = match ov.mu {
            Some(mu) => mu,
            None => {
                let radius = p * (self.d as f64 * ((1.0 + self.b_bound * self.b_bound * t) / delta).ln()).sqrt() + self.a_bound;
                ov.mu_scale * eps / radius
            }
        };
        check_positive("mu", mu)?;
        let t_int = ov.t_int.unwrap_or_else(|| scaled_count((8.0 * p * p * log_inv_delta / (eps * eps)).ceil(), ov.t_int_scale));
        let t_fd = ov.t_fd.unwrap_or_else(|| scaled_count((2.0 * log_inv_delta / (eps * eps)).ceil(), ov.t_fd_scale));
        let k = ov.k.unwrap_or_else(|| (2.0 * p / eps).ceil() as i64 + 3);
        if k < 0 {
            return Err(TradeError::InvalidArgument(format!("K must be non-negative, got {k}")));
        }
        let eps_tilde = ov.eps_tilde.unwrap_or(eps_tilde_factor * eps);
        let mut warnings = Vec::new();
        if t_int >= self.horizon {
            warnings.push(format!("T_int = {t_int} >= T = {}: the run is pure exploration", self.horizon));
        }
        Ok((
            Schedule { horizon: self.horizon, eps, delta, mu, t_int, t_fd, k, eps_tilde, p_bound: p },
            warnings,
        ))
    }
}

impl Schedule {
    /// Explore-or-commit constants:
    /// `ε = (log T / T)^{1/4}`, `δ = 1/(T(74 + 32P/ε))`,
    /// `μ = ε/(P√(d log((1 + B²T)/δ)) + A)`, `T_int = ⌈8P² log(1/δ)/ε²⌉`,
    /// `T_FD = ⌈2 log(1/δ)/ε²⌉`, `K = ⌈2P/ε⌉ + 3`.
    pub fn eoc(
        horizon: usize,
        d: usize,
        p_bound: f64,
        a_bound: f64,
        b_bound: f64,
        ov: &ScheduleOverrides,
    ) -> Result<(Self, Vec<String>)> {
        if horizon < 2 {
            return Err(TradeError::InvalidArgument("T must be >= 2".into()));
        }
        let t = horizon as f64;
        let eps = ov.eps.unwrap_or_else(|| ov.eps_scale * (t.ln() / t).powf(0.25));
        check_positive("eps", eps)?;
        let delta = ov.delta.unwrap_or_else(|| 1.0 / (t * (74.0 + 32.0 * p_bound / eps)));
        let c = Common { horizon, d, p_bound, a_bound, b_bound };
        c.finish(eps, delta, ov.eps_tilde_factor.unwrap_or(0.0), ov)
    }

    /// Scouting constants:
    /// `ε = (d² log(T)²/T)^{1/3}`, `δ = 1/((38 + 16P/ε)(T + 1)²)`, `μ` and
    /// `T_int` as for explore-or-commit, `ε̃ = (12PL + 7)ε`.
    #[allow(clippy::too_many_arguments)]
    pub fn sbip(
        horizon: usize,
        d: usize,
        p_bound: f64,
        a_bound: f64,
        b_bound: f64,
        density_bound: f64,
        ov: &ScheduleOverrides,
    ) -> Result<(Self, Vec<String>)> {
        if horizon < 2 {
            return Err(TradeError::InvalidArgument("T must be >= 2".into()));
        }
        let t = horizon as f64;
        let d_f = d as f64;
        let eps = ov.eps.unwrap_or_else(|| ov.eps_scale * (d_f * d_f * t.ln().powi(2) / t).powf(1.0 / 3.0));
        check_positive("eps", eps)?;
        let delta = ov.delta.unwrap_or_else(|| 1.0 / ((38.0 + 16.0 * p_bound / eps) * (t + 1.0).powi(2)));
        let factor = ov.eps_tilde_factor.unwrap_or(12.0 * p_bound * density_bound + 7.0);
        let c = Common { horizon, d, p_bound, a_bound, b_bound };
        c.finish(eps, delta, factor, ov)
    }

    pub fn grid_len(&self) -> usize {
        (2 * self.k + 1) as usize
    }

    /// `β(n) = √(2 log(1/δ)/n)`, infinite at zero.
    pub fn beta(&self, n: u64) -> f64 {
        if n == 0 {
            f64::INFINITY
        } else {
            (2.0 * (1.0 / self.delta).ln() / n as f64).sqrt()
        }
    }

    /// Almost-sure bound `d log((T + d)/d)/μ²` on parameter-estimation rounds.
    pub fn param_round_bound(&self, d: usize) -> f64 {
        let d_f = d as f64;
        d_f * ((self.horizon as f64 + d_f) / d_f).ln() / (self.mu * self.mu)
    }
}

/// Linear estimate of one side's parameter from uniformly priced rounds:
/// `θ̂ = 2P·V⁻¹·Σ(1{p ≤ v} − ½)x` with `V = I + Σ xxᵀ`.
#[derive(Debug, Clone)]
pub struct SideEstimator {
    chol: Cholesky<f64, Dyn>,
    sum: DVector<f64>,
    theta: DVector<f64>,
    count: usize,
    p_bound: f64,
}

impl SideEstimator {
    pub fn new(d: usize, p_bound: f64) -> Self {
        let chol = Cholesky::new(DMatrix::identity(d, d)).expect("identity is positive definite");
        Self { chol, sum: DVector::zeros(d), theta: DVector::zeros(d), count: 0, p_bound }
    }

    /// Adds one round; `above` is `1{p ≤ v}` for the valuation `v`.
    pub fn update(&mut self, x: &DVector<f64>, above: bool) {
        self.chol.rank_one_update(x, 1.0);
        let sign = if above { 0.5 } else { -0.5 };
        self.sum.axpy(sign, x, 1.0);
        self.theta = self.chol.solve(&self.sum) * (2.0 * self.p_bound);
        self.count += 1;
    }

    /// `‖x‖_{V⁻¹}`
    pub fn norm_inv(&self, x: &DVector<f64>) -> f64 {
        self.chol.solve(x).dot(x).max(0.0).sqrt()
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }
}

#[derive(Debug, Clone)]
struct LogEntry {
    x: DVector<f64>,
    p: f64,
    accepted: bool,
}

/// Parameter estimates for both sides plus the integral tables `Î`, `Ĵ`
/// over increments `kε`, `k ∈ ⟦−K, K⟧`.
#[derive(Debug, Clone)]
pub struct EstimatorTables {
    pub seller: SideEstimator,
    pub buyer: SideEstimator,
    seller_log: Vec<LogEntry>,
    buyer_log: Vec<LogEntry>,
    i_hat: Vec<f64>,
    j_hat: Vec<f64>,
    finalized: bool,
    eps: f64,
    k: i64,
    t_int: usize,
    p_bound: f64,
}

impl EstimatorTables {
    pub fn new(d: usize, p_bound: f64, eps: f64, k: i64, t_int: usize) -> Self {
        let n = (2 * k + 1) as usize;
        Self {
            seller: SideEstimator::new(d, p_bound),
            buyer: SideEstimator::new(d, p_bound),
            seller_log: Vec::new(),
            buyer_log: Vec::new(),
            i_hat: vec![0.0; n],
            j_hat: vec![0.0; n],
            finalized: false,
            eps,
            k,
            t_int,
            p_bound,
        }
    }

    pub fn from_schedule(d: usize, s: &Schedule) -> Self {
        Self::new(d, s.p_bound, s.eps, s.k, s.t_int)
    }

    /// `max(‖x‖_{V_s⁻¹}, ‖x‖_{V_b⁻¹}) > μ`; both Gram matrices coincide under
    /// two-bit feedback.
    pub fn needs_param(&self, x: &DVector<f64>, mu: f64) -> bool {
        self.seller.norm_inv(x).max(self.buyer.norm_inv(x)) > mu
    }

    /// Two-bit parameter round at a uniform price `p` with acceptance bits.
    pub fn est_par_update(&mut self, x: &DVector<f64>, seller_accepts: bool, buyer_accepts: bool) {
        self.est_par_seller(x, seller_accepts);
        self.est_par_buyer(x, buyer_accepts);
    }

    /// `1{p ≤ s}` is the seller's rejection.
    pub fn est_par_seller(&mut self, x: &DVector<f64>, accepted: bool) {
        self.seller.update(x, !accepted);
    }

    /// `1{p ≤ b}` is the buyer's acceptance.
    pub fn est_par_buyer(&mut self, x: &DVector<f64>, accepted: bool) {
        self.buyer.update(x, accepted);
    }

    pub fn log_int_seller(&mut self, x: &DVector<f64>, p: f64, accepted: bool) {
        self.seller_log.push(LogEntry { x: x.clone(), p, accepted });
    }

    pub fn log_int_buyer(&mut self, x: &DVector<f64>, p: f64, accepted: bool) {
        self.buyer_log.push(LogEntry { x: x.clone(), p, accepted });
    }

    /// Completed integral-estimation rounds.
    pub fn int_rounds(&self) -> usize {
        self.seller_log.len().min(self.buyer_log.len())
    }

    pub fn t_int(&self) -> usize {
        self.t_int
    }

    pub fn int_pending(&self) -> bool {
        self.int_rounds() < self.t_int
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Fills `Î^k = (2P/T_int)·Σ 1{kε + xᵀθ̂ᵇ ≤ p ≤ b}` and
    /// `Ĵ^k = (2P/T_int)·Σ 1{s ≤ p ≤ kε + xᵀθ̂ˢ}` with the current estimates.
    pub fn est_int_finalize(&mut self) -> Result<()> {
        if self.int_rounds() < self.t_int {
            return Err(TradeError::NotReady(format!(
                "{} of {} integral rounds collected",
                self.int_rounds(),
                self.t_int
            )));
        }
        let k = self.k;
        let n = (2 * k + 1) as usize;
        let eps = self.eps;
        let scale = 2.0 * self.p_bound / self.t_int as f64;

        // Ĵ: fires for k ≥ k0 with k0 the least k such that kε + m ≥ p
        let mut from = vec![0u64; n + 1];
        for e in self.seller_log.iter().take(self.t_int).filter(|e| e.accepted) {
            let m = e.x.dot(self.seller.theta());
            let mut k0 = ((e.p - m) / eps).ceil().clamp(-(k as f64) - 2.0, k as f64 + 2.0) as i64;
            while (k0 - 1) as f64 * eps + m >= e.p && k0 > -k - 2 {
                k0 -= 1;
            }
            while (k0 as f64) * eps + m < e.p && k0 < k + 2 {
                k0 += 1;
            }
            if k0 <= k {
                from[(k0.max(-k) + k) as usize] += 1;
            }
        }
        let mut acc = 0u64;
        for (idx, slot) in self.j_hat.iter_mut().enumerate() {
            acc += from[idx];
            *slot = scale * acc as f64;
        }

        // Î: fires for k ≤ k1 with k1 the greatest k such that kε + m ≤ p
        let mut upto = vec![0u64; n + 1];
        for e in self.buyer_log.iter().take(self.t_int).filter(|e| e.accepted) {
            let m = e.x.dot(self.buyer.theta());
            let mut k1 = ((e.p - m) / eps).floor().clamp(-(k as f64) - 2.0, k as f64 + 2.0) as i64;
            while ((k1 + 1) as f64) * eps + m <= e.p && k1 < k + 2 {
                k1 += 1;
            }
            while (k1 as f64) * eps + m > e.p && k1 > -k - 2 {
                k1 -= 1;
            }
            if k1 >= -k {
                upto[(k1.min(k) + k) as usize] += 1;
            }
        }
        let mut acc = 0u64;
        for idx in (0..n).rev() {
            acc += upto[idx];
            self.i_hat[idx] = scale * acc as f64;
        }
        self.finalized = true;
        Ok(())
    }

    fn index(&self, k: i64) -> usize {
        debug_assert!(k.abs() <= self.k);
        (k + self.k) as usize
    }

    pub fn i_hat(&self, k: i64) -> f64 {
        self.i_hat[self.index(k)]
    }

    pub fn j_hat(&self, k: i64) -> f64 {
        self.j_hat[self.index(k)]
    }

    pub fn theta_s(&self) -> &DVector<f64> {
        self.seller.theta()
    }

    pub fn theta_b(&self) -> &DVector<f64> {
        self.buyer.theta()
    }

    pub fn k_max(&self) -> i64 {
        self.k
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn p_bound(&self) -> f64 {
        self.p_bound
    }

    /// Commit-phase pairs `(k, k')` with `k' = ⌊(kε + xᵀ(θ̂ˢ − θ̂ᵇ))/ε⌋`, both
    /// indices in `⟦−K, K⟧` and the price `xᵀθ̂ˢ + kε` inside `[−P, P]`.
    ///
    /// `k' − k = ⌊xᵀ(θ̂ˢ − θ̂ᵇ)/ε⌋` is computed once so every pair shares the
    /// same shift.
    pub fn candidate_pairs(&self, x: &DVector<f64>) -> CandidatePairs {
        let ms = x.dot(self.theta_s());
        let mb = x.dot(self.theta_b());
        let shift = ((ms - mb) / self.eps).floor();
        let k = self.k as f64;
        let shift = shift.clamp(-3.0 * k - 3.0, 3.0 * k + 3.0) as i64;
        let lo_price = ((-self.p_bound - ms) / self.eps).ceil();
        let hi_price = ((self.p_bound - ms) / self.eps).floor();
        let lo = (-self.k).max(-self.k - shift).max(lo_price.clamp(-k - 1.0, k + 1.0) as i64);
        let hi = self.k.min(self.k - shift).min(hi_price.clamp(-k - 1.0, k + 1.0) as i64);
        CandidatePairs { lo, hi, shift, seller_mean: ms }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePairs {
    pub lo: i64,
    pub hi: i64,
    /// `k' − k`
    pub shift: i64,
    /// `xᵀθ̂ˢ`
    pub seller_mean: f64,
}

impl CandidatePairs {
    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        (self.lo..=self.hi).map(move |k| (k, k + self.shift))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use rand::Rng;

    use crate::market::NoiseSpec;
    use crate::rng::{stream, Stream};

    #[test]
    fn single_update_example() {
        let mut t = EstimatorTables::new(2, 1.0, 0.1, 23, 10);
        assert_eq!(t.theta_s(), &dvector![0.0, 0.0]);
        // seller rejects: 1{p ≤ s} = 1
        t.est_par_seller(&dvector![1.0, 0.0], false);
        assert_relative_eq!(t.theta_s()[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(t.theta_s()[1], 0.0);
        let v = t.seller.gram();
        assert_relative_eq!(v[(0, 0)], 2.0, epsilon = 1e-14);
        assert_relative_eq!(v[(1, 1)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn norm_at_identity_is_euclidean() {
        let t = EstimatorTables::new(3, 1.0, 0.1, 23, 10);
        let x = dvector![0.3, -0.4, 1.2];
        assert_relative_eq!(t.seller.norm_inv(&x), x.norm(), epsilon = 1e-15);
    }

    #[test]
    fn uniform_price_bit_is_unbiased() {
        let mut rng = stream(21, Stream::Policy);
        let s = 0.5;
        let n = 1_000_000;
        let mean = (0..n)
            .map(|_| {
                let p: f64 = rng.gen_range(-1.0..=1.0);
                2.0 * (if p <= s { 1.0 } else { 0.0 } - 0.5)
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 4e-3, "{mean}");
    }

    #[test]
    fn schedule_examples() {
        let ov = ScheduleOverrides::default();
        let (eoc, _) = Schedule::eoc(10_000, 2, 1.0, 1.0, 1.0, &ov).unwrap();
        assert!((eoc.eps - 0.1742).abs() < 1e-4, "{}", eoc.eps);
        assert_eq!(eoc.k, (2.0 / eoc.eps).ceil() as i64 + 3);
        let (sbip, _) = Schedule::sbip(10_000, 2, 1.0, 1.0, 1.0, 0.5, &ov).unwrap();
        // direct evaluation gives 0.32375
        assert!((sbip.eps - 0.3237).abs() < 1e-4, "{}", sbip.eps);
        assert_relative_eq!(sbip.eps_tilde, (12.0 * 0.5 + 7.0) * sbip.eps);
    }

    #[test]
    fn eps_override_propagates() {
        let base = Schedule::eoc(10_000, 2, 1.0, 1.0, 1.0, &ScheduleOverrides::default()).unwrap().0;
        let ov = ScheduleOverrides { eps: Some(0.3), ..Default::default() };
        let s = Schedule::eoc(10_000, 2, 1.0, 1.0, 1.0, &ov).unwrap().0;
        assert_eq!(s.eps, 0.3);
        assert_relative_eq!(s.delta, 1.0 / (1e4 * (74.0 + 32.0 / 0.3)));
        assert_eq!(s.k, (2.0f64 / 0.3).ceil() as i64 + 3);
        assert_eq!(s.t_int, (8.0 * (1.0 / s.delta).ln() / 0.09).ceil() as usize);
        assert_ne!(s.mu, base.mu);
        assert_ne!(s.t_fd, base.t_fd);
    }

    #[test]
    fn warns_when_integral_phase_fills_horizon() {
        let (_, w) = Schedule::eoc(1_000, 2, 1.0, 1.0, 1.0, &ScheduleOverrides::default()).unwrap();
        assert!(!w.is_empty());
        let ov = ScheduleOverrides { t_int: Some(100), ..Default::default() };
        let (_, w) = Schedule::eoc(1_000, 2, 1.0, 1.0, 1.0, &ov).unwrap();
        assert!(w.is_empty());
    }

    #[test]
    fn pair_shift_example() {
        // ε = 0.1, xᵀ(θ̂ˢ − θ̂ᵇ) = 0.25, k = 3 → k' = 5
        let mut t = EstimatorTables::new(1, 10.0, 0.1, 203, 1);
        // drive θ̂ˢ − θ̂ᵇ to 0.25 through the estimator update rules
        t.seller.theta = dvector![0.25];
        let pairs = t.candidate_pairs(&dvector![1.0]);
        assert_eq!(pairs.shift, 2);
        assert!(pairs.iter().any(|pair| pair == (3, 5)));
    }

    fn brute_force(t: &EstimatorTables) -> (Vec<f64>, Vec<f64>) {
        let scale = 2.0 * t.p_bound / t.t_int as f64;
        let mut i_hat = Vec::new();
        let mut j_hat = Vec::new();
        for k in -t.k..=t.k {
            let ke = k as f64 * t.eps;
            let j = t
                .seller_log
                .iter()
                .filter(|e| e.accepted && e.p <= ke + e.x.dot(t.theta_s()))
                .count();
            let i = t
                .buyer_log
                .iter()
                .filter(|e| e.accepted && ke + e.x.dot(t.theta_b()) <= e.p)
                .count();
            j_hat.push(scale * j as f64);
            i_hat.push(scale * i as f64);
        }
        (i_hat, j_hat)
    }

    #[test]
    fn integral_tables_match_brute_force_and_converge() {
        let noise = NoiseSpec::uniform(1.0).unwrap();
        let p_bound: f64 = 1.0;
        let eps = 0.05;
        let k = (2.0 * p_bound / eps).ceil() as i64 + 3;
        let t_int = 1_000_000;
        let mut t = EstimatorTables::new(1, p_bound, eps, k, t_int);
        let mut rng = stream(8, Stream::Noise);
        let x = dvector![1.0];
        for _ in 0..t_int {
            let p: f64 = rng.gen_range(-p_bound..=p_bound);
            let s = noise.sample(&mut rng);
            let b = noise.sample(&mut rng);
            t.log_int_seller(&x, p, s <= p);
            t.log_int_buyer(&x, p, p <= b);
        }
        t.est_int_finalize().unwrap();
        let (i_bf, j_bf) = brute_force(&t);
        for idx in 0..(2 * k + 1) as usize {
            assert_eq!(t.i_hat[idx], i_bf[idx]);
            assert_eq!(t.j_hat[idx], j_bf[idx]);
        }
        // θ̂ = 0, so Î^0 → I(0) = 0.25
        assert!((t.i_hat(0) - 0.25).abs() < 3.0 * 2.0 * p_bound * 1e-3, "{}", t.i_hat(0));
        assert_eq!(t.i_hat(k), 0.0);
    }

    #[test]
    fn finalize_before_collection_fails() {
        let mut t = EstimatorTables::new(1, 1.0, 0.1, 23, 5);
        assert!(matches!(t.est_int_finalize(), Err(TradeError::NotReady(_))));
    }

    #[test]
    fn all_buyer_rejections_give_zero_table() {
        let mut t = EstimatorTables::new(1, 1.0, 0.1, 23, 3);
        for p in [-0.5, 0.0, 0.5] {
            t.log_int_seller(&dvector![1.0], p, false);
            t.log_int_buyer(&dvector![1.0], p, false);
        }
        t.est_int_finalize().unwrap();
        assert!((-23..=23).all(|k| t.i_hat(k) == 0.0 && t.j_hat(k) == 0.0));
    }
}
