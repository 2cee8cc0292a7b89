use proptest::prelude::*;

use zic_core::channel::{
    accept_channel, apply_channel_with_noise, equivalent_noise, estimate, estimate_with_errors, make_feedback,
    normalize_imperfect, normalize_perfect, transmit_original, ChannelDistribution, ChannelRealization, Complex,
    EstimationConfig, FeedbackMessage, Quantizer,
};
use zic_core::daezic::{AblationFlags, Architecture, Transmitter};
use zic_core::eval::{run_point, EvalConfig, Scheme};
use zic_core::modem::{best_rotation, standard_qam, Constellation};
use zic_core::nn::{BatchPowerNorm, PowerNormLayer, Tensor2};
use zic_core::rng::{random_bit, stream};

fn complex(max: f64) -> impl Strategy<Value = Complex> {
    (-max..max, -max..max).prop_map(|(re, im)| Complex::new(re, im))
}

fn direct_gain() -> impl Strategy<Value = Complex> {
    (0.05f64..3.0, -3.2f64..3.2).prop_map(|(r, t)| Complex::from_polar(r, t))
}

fn realization() -> impl Strategy<Value = ChannelRealization> {
    (direct_gain(), complex(2.0), direct_gain()).prop_map(|(h11, h21, h22)| ChannelRealization { h11, h21, h22 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn original_and_equivalent_models_agree(
        ch in realization(),
        x1 in complex(2.0),
        x2 in complex(2.0),
        n1 in complex(1.0),
        n2 in complex(1.0),
    ) {
        let eq = normalize_perfect(&ch, 0.1).unwrap();
        let (a1, a2) = transmit_original(&ch, x1, x2, n1, n2);
        let (m1, m2) = equivalent_noise(&ch, n1, n2);
        let (b1, b2) = apply_channel_with_noise(&eq, x1, x2, m1, m2);
        let scale = 1.0 + a1.norm().max(a2.norm());
        prop_assert!((a1 - b1).norm() <= 1e-10 * scale);
        prop_assert!((a2 - b2).norm() <= 1e-10 * scale);
    }

    #[test]
    fn exact_estimate_with_unquantized_feedback_is_perfect(ch in realization(), noise_var in 1e-3f64..10.0) {
        let zero = Complex::new(0.0, 0.0);
        let est = estimate_with_errors(&ch, [zero; 3]);
        let fb = FeedbackMessage::exact(&est);
        let a = normalize_imperfect(&est, &fb, &ch, noise_var).unwrap();
        let b = normalize_perfect(&ch, noise_var).unwrap();
        prop_assert_eq!(a.hbar11, b.hbar11);
        prop_assert_eq!(a.hbar22, b.hbar22);
        prop_assert_eq!(a.hbar21, b.hbar21);
        prop_assert_eq!(a.sqrt_alpha, b.sqrt_alpha);
        prop_assert_eq!(a.noise_var_rx1, b.noise_var_rx1);
        prop_assert_eq!(a.noise_var_rx2, b.noise_var_rx2);
    }

    #[test]
    fn quantize_is_idempotent(n in 1u32..=16, lo in -10.0f64..0.0, width in 0.1f64..20.0, v in -30.0f64..30.0) {
        let q = Quantizer::new(n, lo, lo + width).unwrap();
        let y = q.quantize(v);
        prop_assert_eq!(q.quantize(y), y);
        prop_assert!(y > lo && y < lo + width);
    }

    #[test]
    fn error_free_estimates_are_always_accepted(ch in realization(), threshold in 1e-3f64..10.0, seed in any::<u64>()) {
        let cfg = EstimationConfig::new(0.0, threshold).unwrap();
        let est = estimate(&ch, &cfg, &mut stream(seed, &[]));
        prop_assert!(accept_channel(&est, &cfg));
    }

    #[test]
    fn accepted_channels_have_direct_gains_near_one(
        ch in realization(),
        seed in any::<u64>(),
        sigma_e2 in 0.0f64..0.5,
        n_q in 1u32..10,
    ) {
        let cfg = EstimationConfig::new(sigma_e2, 1.0).unwrap();
        let est = estimate(&ch, &cfg, &mut stream(seed, &[]));
        prop_assume!(accept_channel(&est, &cfg));
        let fb = make_feedback(&est, &Quantizer::for_alpha(n_q).unwrap(), &Quantizer::for_angle(n_q).unwrap());
        let eq = normalize_imperfect(&est, &fb, &ch, 0.1).unwrap();
        prop_assert!((eq.hbar11 - 1.0).norm() < 1.0);
        prop_assert!((eq.hbar22 - 1.0).norm() < 1.0);
    }

    #[test]
    fn best_rotation_ignores_labels(shift1 in 0usize..4, shift2 in 0usize..4, sqrt_alpha in 0.2f64..1.7) {
        let q = standard_qam(2, 1.0).unwrap();
        let relabel = |shift: usize| {
            let mut pts = q.points().to_vec();
            pts.rotate_left(shift);
            Constellation::from_points(pts, 2).unwrap()
        };
        prop_assert_eq!(
            best_rotation(&q, &q, sqrt_alpha, 90).unwrap(),
            best_rotation(&relabel(shift1), &relabel(shift2), sqrt_alpha, 90).unwrap()
        );
    }

    #[test]
    fn power_split_meets_the_budget(p_t in 1e-3f64..1e3, a in -1e3f64..1e3, b in -1e3f64..1e3) {
        prop_assume!(a.hypot(b) > 1e-9);
        let g = PowerNormLayer::new(p_t).infer(&Tensor2::new(1, 2, vec![a, b]).unwrap());
        let gg = g.get(0, 0).powi(2) + g.get(0, 1).powi(2);
        prop_assert!((gg - p_t).abs() <= 1e-12 * p_t.max(1.0));
    }

    #[test]
    fn batch_power_norm_gives_unit_columns(
        data in prop::collection::vec(-50.0f64..50.0, 4..200),
    ) {
        let rows = data.len() / 2;
        let x = Tensor2::new(rows, 2, data[..rows * 2].to_vec()).unwrap();
        prop_assume!(x.col_mean_square(0) > 1e-6 && x.col_mean_square(1) > 1e-6);
        let y = BatchPowerNorm::new(2, 1.0, 0.99).forward(&x, true).unwrap();
        prop_assert!((y.col_mean_square(0) - 1.0).abs() <= 1e-10);
        prop_assert!((y.col_mean_square(1) - 1.0).abs() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn transmitters_meet_the_power_budget(
        seed in any::<u64>(),
        rows in 2usize..64,
        n_bits in 1usize..5,
        p_t in 0.1f64..10.0,
        sqrt_alpha in 0.0f64..1.8,
        variant in 0usize..=6,
    ) {
        let mut rng = stream(seed, &[]);
        let arch = Architecture { hidden: 8, blocks: 1, subnet2_hidden: 4 };
        let flags = AblationFlags::experiment(variant).unwrap();
        let mut tx = Transmitter::new(n_bits, p_t, &arch, flags, &mut rng);
        let bits = Tensor2::from_fn(rows, n_bits, |_, _| random_bit(&mut rng));
        let x = tx.forward(&bits, sqrt_alpha).unwrap();
        let p = x.col_mean_square(0) + x.col_mean_square(1);
        prop_assert!((p - p_t).abs() <= 1e-9 * p_t.max(1.0));
    }

    #[test]
    fn worst_case_is_the_larger_user_ber(seed in any::<u64>(), alpha in 0.0f64..3.0, snr in -5.0f64..20.0) {
        let cfg = EvalConfig {
            n_channel_draws: 4,
            symbols_per_draw: 50,
            max_bits: 400,
            seed,
            channel: ChannelDistribution::default(),
            ..EvalConfig::default()
        };
        let r = run_point(&Scheme::Baseline1, &cfg, snr, alpha).unwrap();
        prop_assert_eq!(r.ber_worst, r.ber1.max(r.ber2));
        prop_assert!((0.0..=1.0).contains(&r.ber1) && (0.0..=1.0).contains(&r.ber2));
        prop_assert_eq!(r, run_point(&Scheme::Baseline1, &cfg, snr, alpha).unwrap());
    }
}
