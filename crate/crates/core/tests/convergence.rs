use proptest::prelude::*;
use uavfml_core::convergence::*;
use uavfml_core::fml::{run_federated_training, TrainMode};
use uavfml_core::scenario::ScenarioConfig;

fn inputs() -> impl Strategy<Value = BoundInputs> {
    (
        (0.01f64..10.0, 0.01f64..10.0, 0.01f64..10.0, 1usize..256, 1usize..64, 1usize..40),
        (1usize..500, 1e-4f64..0.5, 1usize..5, proptest::collection::vec(0.01f64..10.0, 4), 0.01f64..5.0),
    )
        .prop_map(|((l, s, c1, b, u, j), (k, eta, m, gaps, lam))| BoundInputs {
            smoothness: l,
            sigma: s,
            c1,
            batch: b,
            uavs: u,
            local_iters: j,
            rounds: k,
            step: eta,
            modalities: m,
            gaps: gaps[..m].to_vec(),
            pl_constant: 1.0,
            lambda: lam,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn bound_monotonicity(r in inputs()) {
        prop_assert!(r.validate().is_ok());
        let base = theorem1_bound(&r);
        let later = theorem1_bound(&BoundInputs { rounds: r.rounds + 1, ..r.clone() });
        let noisier = theorem1_bound(&BoundInputs { sigma: r.sigma * 1.5, ..r.clone() });
        let mut bigger = r.gaps.clone();
        bigger[0] *= 1.5;
        let wider = theorem1_bound(&BoundInputs { gaps: bigger, ..r.clone() });
        let mut more = r.gaps.clone();
        more.push(r.gaps[0]);
        let extra = theorem1_bound(&BoundInputs { modalities: r.modalities + 1, gaps: more, ..r.clone() });
        prop_assert!(later < base);
        prop_assert!(noisier > base && wider > base && extra > base);
        let t = r.terms();
        let u = BoundInputs { uavs: r.uavs + 1, ..r.clone() }.terms();
        prop_assert!(u[1] < t[1] && u[2] < t[2]);
        prop_assert_eq!(u[0], t[0]);
    }

    #[test]
    fn stepsize_condition_is_downward_closed(r in inputs(), shrink in 0.0f64..1.0) {
        if stepsize_condition(&r).satisfied {
            let smaller = BoundInputs { step: r.step * shrink.max(1e-6), ..r.clone() };
            let check = stepsize_condition(&smaller);
            prop_assert!(check.satisfied);
        }
    }

    #[test]
    fn lambda_is_at_least_one_over_u(grads in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..12)) {
        if let Ok(lam) = estimate_lambda(&[grads.clone()]) {
            prop_assert!(lam >= 1.0 / grads.len() as f64 * (1.0 - 1e-12));
        }
    }
}

#[test]
fn training_snapshots_feed_the_estimates() {
    let mut cfg = ScenarioConfig::default();
    cfg.num_rounds = 3;
    let run = run_federated_training(&cfg, TrainMode::Multimodal, 7).unwrap();
    let per_modality: Vec<Vec<Vec<f64>>> = run.snapshots.iter().flat_map(|s| s.iter().cloned()).collect();
    let lam = estimate_lambda(&per_modality).unwrap();
    assert!(lam >= 1.0 / 10.0 && lam.is_finite());
    let grad_sq: Vec<f64> = run.rounds.iter().map(|r| r.grad_sq).collect();
    let report = bound_vs_empirical(&grad_sq, f64::INFINITY);
    assert!(report.empirical_mean_grad_sq > 0.0 && !report.violated);
}
