mod common;

use causal_ceo::model::{steady_state_mmse, stationary_variance, ChannelSet, ExtVariance, JointMode, SourceModel};
use causal_ceo::rdf::{
    allocation_conversions, ceo_rdf, direct_rdf, loss_bound, rdf_record, remote_rdf, remote_rdf_alt, waterfilling,
    RdfQuery,
};
use causal_ceo::tracking_sim::scheme_rate;
use proptest::prelude::*;

fn query() -> impl Strategy<Value = RdfQuery> {
    any::<u64>().prop_map(|seed| common::random_query(&mut common::rng(seed), 4))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn riccati_closed_form_matches_iteration(a in -1.5f64..1.5, v in 0.05f64..5.0, c in 0.01f64..10.0) {
        let m = SourceModel::new(a, v).unwrap();
        let ev = steady_state_mmse(&m, c).unwrap();
        let (p, q) = common::riccati_oracle(a, v, c, 10_000);
        prop_assert!((ev.filtered - p).abs() <= 1e-10 * p);
        prop_assert!((ev.predicted - q).abs() <= 1e-10 * q);
    }

    #[test]
    fn ext_variance_round_trips(v in 1e-6f64..1e6) {
        prop_assert_eq!(ExtVariance::from_variance(v).unwrap().variance(), v);
        prop_assert_eq!(ExtVariance::from_precision(v).unwrap().precision(), v);
        let back = ExtVariance::from_precision(ExtVariance::from_variance(v).unwrap().precision()).unwrap();
        prop_assert!((back.variance() - v).abs() <= 4.0 * f64::EPSILON * v);
    }

    #[test]
    fn rates_are_ordered(q in query()) {
        let d = direct_rdf(&q).unwrap();
        let r = remote_rdf(&q).unwrap();
        let (c, _) = ceo_rdf(&q).unwrap();
        let (w, _) = waterfilling(&q).unwrap();
        prop_assert!(d <= r + 1e-9, "direct {d} > remote {r}");
        prop_assert!(r <= c + 1e-9, "remote {r} > ceo {c}");
        prop_assert!(c <= w + 1e-9, "ceo {c} > waterfilling {w}");
    }

    #[test]
    fn remote_forms_agree(q in query()) {
        let r = remote_rdf(&q).unwrap();
        let alt = remote_rdf_alt(&q).unwrap();
        prop_assert!((r - alt).abs() <= 1e-12 * r.abs().max(1e-300) + 1e-15);
    }

    #[test]
    fn allocation_is_consistent(q in query()) {
        let ss = q.steady_state().unwrap();
        let (rate, alloc) = ceo_rdf(&q).unwrap();
        prop_assert!(alloc.constraint_slack(ss.s_joint_riccati) >= -1e-9 * (1.0 / alloc.d));
        let conv = allocation_conversions(&alloc, &ss).unwrap();
        for (x, y) in conv.rho_k.iter().zip(&alloc.rho_k) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-12));
        }
        if alloc.rho_k.iter().all(|r| *r > 0.0) {
            let s = scheme_rate(&alloc, &q.model).unwrap();
            prop_assert!((s.total - rate).abs() <= 1e-10 * rate.max(1.0));
        }
    }

    #[test]
    fn symmetric_ceo_equals_waterfilling(a in -0.95f64..0.95, v in 0.2f64..3.0, w in 0.1f64..4.0, k in 1usize..5, t in 0.02f64..0.98) {
        let q = RdfQuery::new(SourceModel::new(a, v).unwrap(), ChannelSet::symmetric(w, k).unwrap(), 1.0);
        let ss = q.steady_state().unwrap();
        let d = ss.s_joint_riccati + t * (ss.sigma_x2.variance() - ss.s_joint_riccati);
        let q = q.with_d(d);
        let (c, _) = ceo_rdf(&q).unwrap();
        let (wf, _) = waterfilling(&q).unwrap();
        prop_assert!((c - wf).abs() <= 1e-6);
    }

    #[test]
    fn fusion_is_exact_without_memory(v in 0.2f64..3.0, w in proptest::collection::vec(0.1f64..4.0, 1..5)) {
        let m = SourceModel::new(0.0, v).unwrap();
        let ss = causal_ceo::model::steady_state(&m, &ChannelSet::new(w).unwrap()).unwrap();
        prop_assert!((ss.s_joint_riccati - ss.s_joint_fusion).abs() <= 1e-12);
    }
}

#[test]
fn solver_matches_grid_oracle() {
    let mut r = common::rng(11);
    for _ in 0..12 {
        let q = common::random_query(&mut r, 3);
        let (c, _) = ceo_rdf(&q).unwrap();
        let o = common::ceo_grid_oracle(q.model.a(), q.model.sigma_v2(), q.channels.sigma_w2(), q.d);
        // the oracle can only overshoot the minimum
        assert!(c <= o + 1e-9, "solver {c} above oracle {o} for {q:?}");
        assert!(o - c <= 1e-4, "solver {c} oracle {o} for {q:?}");
    }
}

#[test]
fn stationary_variance_limits() {
    let m = SourceModel::new(0.5, 3.0).unwrap();
    assert!((stationary_variance(&m).variance() - 4.0).abs() < 1e-15);
    assert!(!stationary_variance(&SourceModel::new(1.0, 1.0).unwrap()).is_finite());
}

#[test]
fn single_observer_ceo_is_remote() {
    let mut r = common::rng(5);
    for _ in 0..20 {
        let q = common::random_query(&mut r, 1);
        let (c, _) = ceo_rdf(&q).unwrap();
        let rem = remote_rdf(&q).unwrap();
        assert!((c - rem).abs() <= 1e-9 * rem.max(1.0), "{c} vs {rem}");
    }
}

#[test]
fn fusion_mode_is_accepted_everywhere() {
    let q = RdfQuery::new(SourceModel::new(0.5, 1.0).unwrap(), ChannelSet::symmetric(1.0, 2).unwrap(), 0.8)
        .with_mode(JointMode::Fusion);
    let rec = rdf_record(&q).unwrap();
    assert!(rec.r_direct <= rec.r_remote && rec.r_remote <= rec.r_ceo && rec.r_ceo <= rec.r_wf + 1e-12);
    let loss = loss_bound(&q).unwrap();
    assert!(loss.lhs.is_finite() && loss.rhs.is_finite());
}
