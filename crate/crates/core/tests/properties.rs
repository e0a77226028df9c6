use std::path::Path;

use bilateral_trade::harness::trace::parse_trace;
use bilateral_trade::harness::{run_experiment, ExperimentConfig};
use bilateral_trade::market::context::{ContextGenerator, ContextStream};
use bilateral_trade::market::{LinearMarket, NoiseSpec};
use bilateral_trade::policy::{EpBt, Feedback, Need, Policy};
use bilateral_trade::rng::{stream, Stream};
use nalgebra::DVector;
use proptest::prelude::*;

fn unit_ball(d: usize) -> impl Strategy<Value = DVector<f64>> {
    proptest::collection::vec(-1.0f64..1.0, d).prop_map(move |v| {
        let v = DVector::from_vec(v);
        let n = v.norm();
        if n > 0.95 { v * (0.95 / n) } else { v }
    })
}

fn market_and_dim() -> impl Strategy<Value = (LinearMarket, u64)> {
    (1usize..=4).prop_flat_map(|d| (unit_ball(d), unit_ball(d), any::<u64>())).prop_map(|(ts, tb, seed)| {
        (LinearMarket::new(ts, tb, NoiseSpec::None, NoiseSpec::None, 1.0, 1.0).unwrap(), seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn epbt_sets_always_contain_the_truth((market, seed) in market_and_dim()) {
        let d = market.dim();
        let mut pol = EpBt::new(d, 1.0, 1.0, EpBt::default_eps(d, 1.0, 1.0, 2000)).unwrap();
        let mut ctx = ContextStream::new(ContextGenerator::Mixed { radius: 1.0 }, d, 1.0, seed).unwrap();
        let mut rng = stream(seed, Stream::Policy);
        for _ in 0..400 {
            let x = ctx.next_context().unwrap();
            let dec = pol.decide(&x, &mut rng).unwrap();
            let (s, b) = (market.seller_mean(&x), market.buyer_mean(&x));
            let fb = Feedback::two_bit(&x, dec.p, dec.q, s <= dec.p, dec.q <= b).restricted(dec.need);
            pol.observe(&dec, &fb).unwrap();
            prop_assert!(pol.seller_set().mahalanobis_sq(market.theta_s()).unwrap() <= 1.0 + 1e-7);
            prop_assert!(pol.buyer_set().mahalanobis_sq(market.theta_b()).unwrap() <= 1.0 + 1e-7);
            if dec.need == Need::NoLearning && s <= b {
                // committed prices never block a trade the sets already guarantee
                prop_assert!(dec.phase != bilateral_trade::policy::Phase::Commit || (s <= dec.p && dec.p <= b));
            }
        }
        prop_assert!(pol.exploration_rounds() as f64 <= EpBt::exploration_limit(d, 1.0, 1.0, pol.eps()));
    }
}

fn two_bit_config(algorithm: &str, seed: u64, c: f64) -> ExperimentConfig {
    let text = format!(
        "T = 600\nd = 2\nalgorithm = {algorithm}\nseed = {seed}\nmarket.noise = uniform\nmarket.C = {c}\n\
         schedule.eps = 0.25\nschedule.mu = 1\nschedule.t_int = 40\nschedule.t_fd = 2\n"
    );
    ExperimentConfig::parse(&text, Path::new(".")).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn two_bit_learners_are_strongly_budget_balanced(
        seed in any::<u64>(),
        c in 0.05f64..0.5,
        algorithm in prop::sample::select(vec!["eoc", "sbip"]),
    ) {
        let out = run_experiment(&two_bit_config(algorithm, seed, c)).unwrap();
        for r in parse_trace(&out.trace) {
            prop_assert_eq!(r.real("p"), r.real("q"));
            prop_assert_eq!(r.real("profit"), 0.0);
        }
        prop_assert_eq!(out.summary.final_profit, 0.0);
    }

    #[test]
    fn one_bit_wrapper_never_owes_money(seed in any::<u64>(), t_e in 10.0f64..400.0, alpha in 0.05f64..1.0) {
        let text = format!(
            "T = 4000\nd = 2\nalgorithm = onebit-eoc\nseed = {seed}\nmarket.noise = uniform\nmarket.C = 0.25\n\
             schedule.eps = 0.25\nschedule.mu = 1\nschedule.t_int = 30\nschedule.t_fd = 2\n\
             onebit.alpha = {alpha}\nonebit.t_e = {t_e}\n"
        );
        let out = run_experiment(&ExperimentConfig::parse(&text, Path::new(".")).unwrap()).unwrap();
        prop_assert!(out.summary.min_cum_profit >= -1e-9, "min cumulative profit {}", out.summary.min_cum_profit);
        prop_assert!(out.summary.final_profit >= -1e-9);
    }
}
