//! Bounded, bounded-density valuation noise with closed-form c.d.f., demand
//! and the two integrated tails used by the gain-from-trade decomposition.

use rand::Rng;

use crate::error::{Result, TradeError};

/// Mixture of uniform densities on disjoint sorted intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseUniform {
    intervals: Vec<(f64, f64)>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    centered: bool,
}

impl PiecewiseUniform {
    /// `centered = true` asserts a zero mean (to 1e-12); `centered = false`
    /// admits the distribution for oracle evaluation only.
    pub fn new(intervals: Vec<(f64, f64)>, weights: Vec<f64>, centered: bool) -> Result<Self> {
        if intervals.is_empty() || intervals.len() != weights.len() {
            return Err(TradeError::Noise("need one weight per interval".into()));
        }
        for &(lo, hi) in &intervals {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(TradeError::Noise(format!("bad interval [{lo}, {hi}]")));
            }
        }
        for pair in intervals.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(TradeError::Noise("intervals must be sorted and disjoint".into()));
            }
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(TradeError::Noise("weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(TradeError::Noise(format!("weights sum to {total}, not 1")));
        }
        let cumulative = weights
            .iter()
            .scan(0.0, |acc, &w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        let pw = Self { intervals, weights, cumulative, centered };
        if centered && pw.mean().abs() > 1e-12 {
            return Err(TradeError::Noise(format!("declared centered but mean is {}", pw.mean())));
        }
        Ok(pw)
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn mean(&self) -> f64 {
        self.pieces().map(|(lo, hi, w)| w * 0.5 * (lo + hi)).sum()
    }

    fn pieces(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.intervals.iter().zip(&self.weights).map(|(&(lo, hi), &w)| (lo, hi, w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    /// Deterministic valuations.
    None,
    /// Uniform on `[-c, c]`; density bound `1/(2c)`.
    Uniform { c: f64 },
    /// Symmetric triangle on `[-c, c]`, `f(u) = (c - |u|)/c²`; density bound `1/c`.
    Triangular { c: f64 },
    PiecewiseUniform(PiecewiseUniform),
}

impl NoiseSpec {
    pub fn uniform(c: f64) -> Result<Self> {
        check_width(c)?;
        Ok(NoiseSpec::Uniform { c })
    }

    pub fn triangular(c: f64) -> Result<Self> {
        check_width(c)?;
        Ok(NoiseSpec::Triangular { c })
    }

    pub fn is_noiseless(&self) -> bool {
        matches!(self, NoiseSpec::None)
    }

    /// Whether learners may run against this noise (mean zero by construction
    /// or by a checked declaration).
    pub fn is_centered(&self) -> bool {
        match self {
            NoiseSpec::PiecewiseUniform(pw) => pw.is_centered(),
            _ => true,
        }
    }

    /// Smallest `C` with support inside `[-C, C]`.
    pub fn support_bound(&self) -> f64 {
        match self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Uniform { c } | NoiseSpec::Triangular { c } => *c,
            NoiseSpec::PiecewiseUniform(pw) => pw
                .intervals
                .iter()
                .fold(0.0f64, |m, &(lo, hi)| m.max(lo.abs()).max(hi.abs())),
        }
    }

    /// Density bound `L` (infinite for deterministic valuations).
    pub fn density_bound(&self) -> f64 {
        match self {
            NoiseSpec::None => f64::INFINITY,
            NoiseSpec::Uniform { c } => 1.0 / (2.0 * c),
            NoiseSpec::Triangular { c } => 1.0 / c,
            NoiseSpec::PiecewiseUniform(pw) => {
                pw.pieces().map(|(lo, hi, w)| w / (hi - lo)).fold(0.0, f64::max)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            NoiseSpec::PiecewiseUniform(pw) => pw.mean(),
            _ => 0.0,
        }
    }

    /// One draw by inversion; always consumes exactly one uniform variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        self.quantile(u)
    }

    /// Inverse c.d.f. for `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Uniform { c } => -c + 2.0 * c * u,
            NoiseSpec::Triangular { c } => {
                if u < 0.5 {
                    -c + c * (2.0 * u).sqrt()
                } else {
                    c - c * (2.0 * (1.0 - u)).sqrt()
                }
            }
            NoiseSpec::PiecewiseUniform(pw) => {
                let last = pw.intervals.len() - 1;
                let i = pw.cumulative.iter().position(|&cw| u < cw).unwrap_or(last);
                let below = if i == 0 { 0.0 } else { pw.cumulative[i - 1] };
                let w = pw.weights[i];
                let (lo, hi) = pw.intervals[i];
                let local = if w > 0.0 { ((u - below) / w).clamp(0.0, 1.0) } else { 0.0 };
                lo + local * (hi - lo)
            }
        }
    }

    /// `F(u) = P(ξ ≤ u)`.
    pub fn cdf(&self, u: f64) -> f64 {
        match self {
            NoiseSpec::None => {
                if u >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            NoiseSpec::Uniform { c } => ((u + c) / (2.0 * c)).clamp(0.0, 1.0),
            NoiseSpec::Triangular { c } => {
                if u <= -c {
                    0.0
                } else if u <= 0.0 {
                    (u + c).powi(2) / (2.0 * c * c)
                } else if u < *c {
                    1.0 - (c - u).powi(2) / (2.0 * c * c)
                } else {
                    1.0
                }
            }
            NoiseSpec::PiecewiseUniform(pw) => pw
                .pieces()
                .map(|(lo, hi, w)| w * ((u - lo) / (hi - lo)).clamp(0.0, 1.0))
                .sum::<f64>()
                .min(1.0),
        }
    }

    /// Demand `D(u) = P(ξ ≥ u)`.
    pub fn demand(&self, u: f64) -> f64 {
        match self {
            NoiseSpec::None => {
                if u <= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            _ => 1.0 - self.cdf(u),
        }
    }

    /// `J(δ) = ∫_{-C}^{δ} F(u) du = E[(δ - ξ)⁺]`.
    ///
    /// Beyond the support the integrand is 0 (below) or 1 (above), so the
    /// integral continues linearly above `C` instead of saturating.
    pub fn integral_cdf(&self, delta: f64) -> f64 {
        match self {
            NoiseSpec::None => delta.max(0.0),
            NoiseSpec::Uniform { c } => {
                if delta <= -c {
                    0.0
                } else if delta < *c {
                    (delta + c).powi(2) / (4.0 * c)
                } else {
                    delta
                }
            }
            NoiseSpec::Triangular { c } => triangular_j(*c, delta),
            NoiseSpec::PiecewiseUniform(pw) => pw
                .pieces()
                .map(|(lo, hi, w)| {
                    let g = if delta <= lo {
                        0.0
                    } else if delta < hi {
                        (delta - lo).powi(2) / (2.0 * (hi - lo))
                    } else {
                        0.5 * (hi - lo) + (delta - hi)
                    };
                    w * g
                })
                .sum(),
        }
    }

    /// `I(δ) = ∫_{δ}^{C} D(u) du = E[(ξ - δ)⁺]`, continued linearly below `-C`.
    pub fn integral_demand(&self, delta: f64) -> f64 {
        match self {
            NoiseSpec::None => (-delta).max(0.0),
            // symmetric about zero: D(u) = F(-u)
            NoiseSpec::Uniform { .. } | NoiseSpec::Triangular { .. } => self.integral_cdf(-delta),
            NoiseSpec::PiecewiseUniform(pw) => pw
                .pieces()
                .map(|(lo, hi, w)| {
                    let h = if delta <= lo {
                        0.5 * (lo + hi) - delta
                    } else if delta < hi {
                        (hi - delta).powi(2) / (2.0 * (hi - lo))
                    } else {
                        0.0
                    };
                    w * h
                })
                .sum(),
        }
    }
}

fn triangular_j(c: f64, delta: f64) -> f64 {
    let c2 = c * c;
    if delta <= -c {
        0.0
    } else if delta <= 0.0 {
        (delta + c).powi(3) / (6.0 * c2)
    } else if delta < c {
        c / 6.0 + delta - (c.powi(3) - (c - delta).powi(3)) / (6.0 * c2)
    } else {
        delta
    }
}

fn check_width(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(TradeError::Noise(format!("support half-width must be positive, got {c}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Adaptive Simpson, local to the tests so the closed forms are checked
    /// against plain numerical integration of the c.d.f.
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        // fixed panels first so kinks cannot fool the first error estimate
        let panels = 64;
        let h = (b - a) / f64::from(panels);
        (0..panels)
            .map(|i| {
                let lo = a + h * f64::from(i);
                let hi = lo + h;
                let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
                rec(f, lo, hi, fa, fm, fb, h / 6.0 * (fa + 4.0 * fm + fb), tol / f64::from(panels), 50)
            })
            .sum()
    }

    fn specs() -> Vec<NoiseSpec> {
        vec![
            NoiseSpec::uniform(1.0).unwrap(),
            NoiseSpec::uniform(0.25).unwrap(),
            NoiseSpec::triangular(1.0).unwrap(),
            NoiseSpec::triangular(0.4).unwrap(),
            NoiseSpec::PiecewiseUniform(
                PiecewiseUniform::new(vec![(-0.5, -0.1), (0.1, 0.5)], vec![0.5, 0.5], true).unwrap(),
            ),
        ]
    }

    #[test]
    fn cdf_examples() {
        let u = NoiseSpec::uniform(1.0).unwrap();
        assert_eq!(u.cdf(0.0), 0.5);
        assert_eq!(u.demand(0.0), 0.5);
        assert_eq!(u.cdf(0.5), 0.75);
        let t = NoiseSpec::triangular(1.0).unwrap();
        assert_eq!(t.cdf(0.0), 0.5);
        assert_eq!(t.cdf(1.0), 1.0);
    }

    #[test]
    fn integral_examples() {
        let u = NoiseSpec::uniform(1.0).unwrap();
        assert_relative_eq!(u.integral_demand(0.0), 0.25);
        assert_relative_eq!(u.integral_cdf(0.0), 0.25);
        for s in specs() {
            let c = s.support_bound();
            assert!(s.integral_demand(c).abs() < 1e-15);
            assert!(s.integral_cdf(-c).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for s in specs() {
            let c = s.support_bound();
            for i in 0..=40 {
                let delta = -c + 2.0 * c * f64::from(i) / 40.0;
                let j = simpson(&|u| s.cdf(u), -c, delta, 1e-12);
                let i_q = simpson(&|u| s.demand(u), delta, c, 1e-12);
                assert!((s.integral_cdf(delta) - j).abs() < 1e-9, "{s:?} J({delta})");
                assert!((s.integral_demand(delta) - i_q).abs() < 1e-9, "{s:?} I({delta})");
            }
        }
    }

    #[test]
    fn tails_continue_outside_support() {
        // E[(δ - ξ)⁺] = δ - E[ξ] once δ ≥ C
        let u = NoiseSpec::uniform(0.25).unwrap();
        assert_relative_eq!(u.integral_cdf(1.0), 1.0);
        assert_relative_eq!(u.integral_demand(-1.0), 1.0);
        let t = NoiseSpec::triangular(0.5).unwrap();
        assert_relative_eq!(t.integral_cdf(2.0), 2.0);
    }

    #[test]
    fn density_bounds() {
        assert_relative_eq!(NoiseSpec::uniform(1.0).unwrap().density_bound(), 0.5);
        assert_relative_eq!(NoiseSpec::triangular(0.5).unwrap().density_bound(), 2.0);
        assert!(NoiseSpec::None.density_bound().is_infinite());
    }

    #[test]
    fn piecewise_validation() {
        assert!(PiecewiseUniform::new(vec![(0.0, 1.0)], vec![1.0], true).is_err());
        assert!(PiecewiseUniform::new(vec![(0.0, 1.0)], vec![1.0], false).is_ok());
        assert!(PiecewiseUniform::new(vec![(0.0, 1.0), (0.5, 2.0)], vec![0.5, 0.5], false).is_err());
        assert!(PiecewiseUniform::new(vec![(0.0, 1.0)], vec![0.9], false).is_err());
        assert!(PiecewiseUniform::new(vec![(1.0, 1.0)], vec![1.0], false).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for s in specs() {
            for i in 1..100 {
                let u = f64::from(i) / 100.0;
                assert!((s.cdf(s.quantile(u)) - u).abs() < 1e-12, "{s:?} at {u}");
            }
        }
    }
}
