//! Fast property checks runnable from an installed binary.

use std::f64::consts::PI;

use rand::Rng;

use zic_core::channel::{
    apply_channel_with_noise, draw_channel, draw_interference, equivalent_noise, normalize_perfect, transmit_original,
    ChannelDistribution, Complex, Quantizer,
};
use zic_core::daezic::{AblationFlags, Architecture, Batch, DaeZicModel, FixedBatchObjective, Transmitter};
use zic_core::eval::{evaluate, EvalConfig, Scheme};
use zic_core::nn::{check_gradients, Tensor2};
use zic_core::rng::{complex_gaussian, random_bit, stream};

use crate::{failure, CmdResult};

/// Gray-QPSK bit error rate at 10 dB, `Q(sqrt(10))`.
const QPSK_BER_10DB: f64 = 7.827_011_290_012_748e-4;

fn quantizer() -> Result<(), String> {
    let mut rng = stream(1, &[]);
    for n in 1..=8 {
        let q = Quantizer::for_angle(n).map_err(|e| e.to_string())?;
        let w = 2.0 * PI / (1u64 << n) as f64;
        for _ in 0..10_000 {
            let x = rng.random_range(-PI..PI);
            let y = q.quantize(x);
            if q.quantize(y) != y {
                return Err(format!("not idempotent at {x} (n={n})"));
            }
            if (x - y).abs() > w / 2.0 + 1e-12 {
                return Err(format!("error {} exceeds half a segment (n={n})", (x - y).abs()));
            }
            let k = q.segment(x) as f64;
            if (y - (-PI + (k + 0.5) * w)).abs() > 1e-12 {
                return Err(format!("{y} is not the segment midpoint (n={n})"));
            }
        }
    }
    Ok(())
}

fn power() -> Result<(), String> {
    let mut rng = stream(2, &[]);
    let mut tx = Transmitter::new(2, 1.0, &Architecture::default(), AblationFlags::proposed(), &mut rng);
    for _ in 0..100 {
        let bits = Tensor2::from_fn(64, 2, |_, _| random_bit(&mut rng));
        let x = tx
            .forward(&bits, rng.random_range(0.0..3f64.sqrt()))
            .map_err(|e| e.to_string())?;
        let p = x.col_mean_square(0) + x.col_mean_square(1);
        if (p - 1.0).abs() > 1e-9 {
            return Err(format!("batch power {p}"));
        }
    }
    Ok(())
}

fn equivalence() -> Result<(), String> {
    let mut rng = stream(3, &[]);
    let dist = ChannelDistribution::default();
    let zero = Complex::new(0.0, 0.0);
    for _ in 0..1000 {
        let mut ch = draw_channel(&dist, &mut rng);
        ch.h21 = draw_interference(rng.random_range(0.0..3.0), &mut rng).map_err(|e| e.to_string())?;
        let eq = normalize_perfect(&ch, 0.1).map_err(|e| e.to_string())?;
        let x1 = complex_gaussian(&mut rng, zero, 1.0);
        let x2 = complex_gaussian(&mut rng, zero, 1.0);
        let n1 = complex_gaussian(&mut rng, zero, 0.1);
        let n2 = complex_gaussian(&mut rng, zero, 0.1);
        let (a1, a2) = transmit_original(&ch, x1, x2, n1, n2);
        let (m1, m2) = equivalent_noise(&ch, n1, n2);
        let (b1, b2) = apply_channel_with_noise(&eq, x1, x2, m1, m2);
        if (a1 - b1).norm() > 1e-10 || (a2 - b2).norm() > 1e-10 {
            return Err(format!("models disagree by {}", (a1 - b1).norm().max((a2 - b2).norm())));
        }
    }
    Ok(())
}

fn gradients() -> Result<(), String> {
    let mut rng = stream(4, &[]);
    let arch = Architecture {
        hidden: 6,
        blocks: 2,
        subnet2_hidden: 4,
    };
    let model = DaeZicModel::new(2, 1.0, arch, AblationFlags::proposed(), true, &mut rng);
    let link = zic_core::channel::prepare_perfect(&ChannelDistribution::default(), 0.9, 0.1, &mut rng)
        .map_err(|e| e.to_string())?;
    let batch = Batch::random(12, 2, &link, &mut rng).noiseless();
    let report = check_gradients(
        &mut FixedBatchObjective {
            model,
            batch,
            link,
            noise_var: 0.1,
        },
        1e-5,
    );
    if report.max_rel_error < 1e-4 {
        Ok(())
    } else {
        Err(format!("max relative error {:e}", report.max_rel_error))
    }
}

fn awgn() -> Result<(), String> {
    let cfg = EvalConfig {
        alpha_grid: vec![0.0],
        snr_grid_db: vec![10.0],
        channel: ChannelDistribution::fixed_unit(),
        n_channel_draws: 10,
        symbols_per_draw: 10_000,
        min_errors: 200,
        ..EvalConfig::default()
    };
    let r = evaluate(&Scheme::Baseline1, &cfg).map_err(|e| e.to_string())?;
    let r = &r.records[0];
    let se = (QPSK_BER_10DB * (1.0 - QPSK_BER_10DB) / r.n_bits as f64).sqrt();
    if (r.ber1 - QPSK_BER_10DB).abs() <= 3.0 * se {
        Ok(())
    } else {
        Err(format!("BER {} vs {QPSK_BER_10DB} (3 SE = {})", r.ber1, 3.0 * se))
    }
}

pub fn run() -> CmdResult {
    let checks: [(&str, fn() -> Result<(), String>); 5] = [
        ("quantizer midpoint, idempotence and error bound", quantizer),
        ("transmit power constraint", power),
        ("original and equivalent channel models agree", equivalence),
        ("end-to-end gradients match finite differences", gradients),
        ("Gray-QPSK AWGN bit error rate", awgn),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("PASS {name}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e}");
            }
        }
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(failure(format!("{failed} self-test check(s) failed")))
    }
}
