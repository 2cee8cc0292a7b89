use zic_core::daezic::{DaeZicModel, TrainConfig};
use zic_core::eval::{sweep_alpha, sweep_snr, EvalConfig, ModelSet, Scheme, DEFAULT_ROTATION_STEPS};
use zic_core::ZicError;

fn cfg(seed: u64) -> EvalConfig {
    EvalConfig {
        n_channel_draws: 200,
        symbols_per_draw: 250,
        seed,
        ..EvalConfig::default()
    }
}

#[test]
fn baseline1_peaks_near_unit_interference() {
    let grid = EvalConfig {
        alpha_grid: vec![0.5, 1.0, 1.5],
        ..cfg(21)
    };
    let r = sweep_alpha(&Scheme::Baseline1, &grid, 10.0).unwrap();
    let recs = &r.records;
    let se = |i: usize, j: usize| 2.0 * recs[i].stderr.hypot(recs[j].stderr);
    assert!(recs[1].ber_worst - recs[0].ber_worst > se(0, 1), "{recs:?}");
    assert!(recs[1].ber_worst - recs[2].ber_worst > se(1, 2), "{recs:?}");
}

#[test]
fn baseline2_improves_with_snr() {
    let grid = EvalConfig {
        snr_grid_db: vec![0.0, 4.0, 8.0, 12.0, 16.0],
        ..cfg(22)
    };
    let scheme = Scheme::Baseline2 {
        rotation_steps: DEFAULT_ROTATION_STEPS,
    };
    let r = sweep_snr(&scheme, &grid, 1.0).unwrap();
    for pair in r.records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        assert!(
            b.ber_worst <= a.ber_worst + 2.0 * a.stderr.hypot(b.stderr),
            "{a:?} then {b:?}"
        );
    }
}

#[test]
fn baselines_agree_without_interference() {
    let c = EvalConfig {
        alpha_grid: vec![0.0],
        ..cfg(23)
    };
    let b1 = sweep_alpha(&Scheme::Baseline1, &c, 6.0).unwrap();
    let b2 = sweep_alpha(
        &Scheme::Baseline2 {
            rotation_steps: DEFAULT_ROTATION_STEPS,
        },
        &c,
        6.0,
    )
    .unwrap();
    assert_eq!(b1.records[0].ber_worst, b2.records[0].ber_worst);
}

#[test]
fn dae_rejects_gains_without_a_model() {
    let tc = TrainConfig::default();
    let set = ModelSet::single((0.0, 3.0), DaeZicModel::for_config(&tc));
    let c = EvalConfig {
        alpha_grid: vec![3.5],
        n_channel_draws: 1,
        symbols_per_draw: 10,
        ..EvalConfig::default()
    };
    match sweep_alpha(&Scheme::Dae(set), &c, 10.0) {
        Err(ZicError::NoModel { .. }) => {}
        other => panic!("expected a missing-model error, got {other:?}"),
    }
}
