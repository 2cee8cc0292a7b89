//! Monte Carlo bit-error-rate evaluation.
//!
//! Each grid point averages over random channel draws. A fixed number of draws
//! is always simulated; after that, draws continue until the worse user has
//! collected `min_errors` bit errors or `max_bits` bits per user were sent.
//! Random streams depend on the seed, the interference gain and the draw
//! index only, so different SNR points and schemes see matched channels, bits
//! and noise shapes.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::channel::{
    apply_channel, prepare_channel, ChannelDistribution, Complex, CsiMode, PreparedChannel, ResidualAngle,
};
use crate::daezic::{noise_var_for_snr, DaeZicModel};
use crate::error::{Result, ZicError};
use crate::modem::{best_rotation, bit_errors, rotate, standard_qam, Constellation, JointDetector, NearestDetector};
use crate::nn::Tensor2;
use crate::rng::stream;

/// Upper end of the supported interference gains.
pub const ALPHA_MAX: f64 = 3.0;

/// The six standard training sub-intervals of `[0, 3]`.
pub fn standard_intervals() -> Vec<(f64, f64)> {
    (0..6).map(|k| (k as f64 * 0.5, (k + 1) as f64 * 0.5)).collect()
}

fn interval_label(alpha: f64) -> String {
    if !(0.0..=ALPHA_MAX).contains(&alpha) {
        return format!("outside [0, {ALPHA_MAX}]");
    }
    let k = ((alpha / 0.5).floor() as usize).min(5);
    let (lo, hi) = standard_intervals()[k];
    if k == 5 {
        format!("[{lo}, {hi}]")
    } else {
        format!("[{lo}, {hi})")
    }
}

/// Trained models, each responsible for an interval of interference gains.
#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    entries: Vec<((f64, f64), DaeZicModel)>,
}

impl ModelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(interval: (f64, f64), model: DaeZicModel) -> Self {
        let mut s = Self::new();
        s.insert(interval, model);
        s
    }

    pub fn insert(&mut self, interval: (f64, f64), model: DaeZicModel) {
        self.entries.push((interval, model));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Model whose interval contains `alpha`; intervals are closed, and the
    /// first inserted match wins.
    pub fn route(&self, alpha: f64) -> Result<&DaeZicModel> {
        if (0.0..=ALPHA_MAX).contains(&alpha) {
            if let Some((_, m)) = self.entries.iter().find(|((lo, hi), _)| *lo <= alpha && alpha <= *hi) {
                return Ok(m);
            }
        }
        Err(ZicError::NoModel {
            alpha,
            gap: interval_label(alpha),
        })
    }
}

/// Transmission scheme under test.
#[derive(Debug, Clone)]
pub enum Scheme {
    /// Gray QAM at both transmitters.
    Baseline1,
    /// Gray QAM with Tx2's constellation rotated to maximize the composite
    /// minimum distance, searched over `rotation_steps` angles.
    Baseline2 { rotation_steps: usize },
    /// Learned transceivers.
    Dae(ModelSet),
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Baseline1 => "baseline1",
            Scheme::Baseline2 { .. } => "baseline2",
            Scheme::Dae(_) => "dae",
        }
    }
}

/// Default number of rotation angles searched by Baseline-2.
pub const DEFAULT_ROTATION_STEPS: usize = 90;

/// Parameters of a BER sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub snr_grid_db: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub n_channel_draws: usize,
    pub symbols_per_draw: usize,
    pub min_errors: u64,
    pub max_bits: u64,
    pub seed: u64,
    pub csi: CsiMode,
    pub channel: ChannelDistribution,
    pub total_power: f64,
    /// Bits per symbol of the baseline constellations.
    pub n_bits: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            snr_grid_db: vec![10.0],
            alpha_grid: vec![1.0],
            n_channel_draws: 500,
            symbols_per_draw: 100,
            min_errors: 100,
            max_bits: 10_000_000,
            seed: 0,
            csi: CsiMode::Perfect,
            channel: ChannelDistribution::default(),
            total_power: 1.0,
            n_bits: 2,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ZicError::Config(m.to_string()));
        if self.snr_grid_db.is_empty() || self.alpha_grid.is_empty() {
            return bad("snr and alpha grids must be non-empty");
        }
        if self.snr_grid_db.iter().chain(&self.alpha_grid).any(|v| !v.is_finite()) {
            return bad("grid values must be finite");
        }
        if self.alpha_grid.iter().any(|&a| a < 0.0) {
            return bad("interference gains must be >= 0");
        }
        if self.n_channel_draws == 0 || self.symbols_per_draw == 0 || self.max_bits == 0 {
            return bad("draw, symbol and bit counts must be positive");
        }
        if !(self.total_power > 0.0) {
            return bad("total_power must be positive");
        }
        if !(1..=16).contains(&self.n_bits) {
            return bad("n_bits must be in 1..=16");
        }
        Ok(())
    }
}

/// Error counts accumulated at one grid point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub errors1: u64,
    pub errors2: u64,
    /// Bits sent per user.
    pub bits: u64,
}

impl ErrorCounts {
    fn add(&mut self, o: ErrorCounts) {
        self.errors1 += o.errors1;
        self.errors2 += o.errors2;
        self.bits += o.bits;
    }

    fn worst_errors(&self) -> u64 {
        self.errors1.max(self.errors2)
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct BerRecord {
    pub scheme: String,
    pub snr_db: f64,
    pub alpha: f64,
    pub ber1: f64,
    pub ber2: f64,
    pub ber_worst: f64,
    /// Monte Carlo standard error of `ber_worst`.
    pub stderr: f64,
    pub n_bits: u64,
    pub errors1: u64,
    pub errors2: u64,
}

impl BerRecord {
    fn from_counts(scheme: &str, snr_db: f64, alpha: f64, c: ErrorCounts) -> Self {
        let n = c.bits.max(1) as f64;
        let ber1 = c.errors1 as f64 / n;
        let ber2 = c.errors2 as f64 / n;
        let ber_worst = ber1.max(ber2);
        Self {
            scheme: scheme.to_string(),
            snr_db,
            alpha,
            ber1,
            ber2,
            ber_worst,
            stderr: standard_error(ber_worst, c.bits),
            n_bits: c.bits,
            errors1: c.errors1,
            errors2: c.errors2,
        }
    }
}

/// `sqrt(p (1 - p) / n)`.
pub fn standard_error(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n.max(1) as f64).sqrt()
}

/// Records of a sweep, in grid order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BerResult {
    pub records: Vec<BerRecord>,
}

pub const CSV_HEADER: &str = "scheme,snr_db,alpha,ber1,ber2,ber_worst,stderr,n_bits";

impl BerResult {
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(w, "{CSV_HEADER}")?;
        }
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.scheme, r.snr_db, r.alpha, r.ber1, r.ber2, r.ber_worst, r.stderr, r.n_bits
            )?;
        }
        Ok(())
    }

    pub fn mean_worst(&self) -> f64 {
        self.records.iter().map(|r| r.ber_worst).sum::<f64>() / self.records.len().max(1) as f64
    }
}

/// Percentage by which `a`'s mean worst-case BER is below `b`'s over a common
/// grid.
pub fn compare_reduction(a: &BerResult, b: &BerResult) -> Result<f64> {
    if a.records.len() != b.records.len()
        || a.records
            .iter()
            .zip(&b.records)
            .any(|(x, y)| x.snr_db != y.snr_db || x.alpha != y.alpha)
    {
        return Err(ZicError::GridMismatch(format!(
            "{} records vs {} records on different (snr, alpha) points",
            a.records.len(),
            b.records.len()
        )));
    }
    if a.records.is_empty() {
        return Err(ZicError::GridMismatch("empty results".into()));
    }
    let (ma, mb) = (a.mean_worst(), b.mean_worst());
    if mb == 0.0 {
        return Ok(if ma == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(100.0 * (mb - ma) / mb)
}

/// Transmitter alphabets and detectors for one prepared channel.
enum Link<'a> {
    Baseline {
        c1: Constellation,
        c2: Constellation,
        rx1: JointDetector,
        rx2: NearestDetector,
    },
    Dae {
        c1: Constellation,
        c2: Constellation,
        model: &'a DaeZicModel,
        sides: (crate::daezic::RxSideInput, crate::daezic::RxSideInput),
    },
}

/// Per-point cache of Baseline-2 rotations keyed by the fed-back gain.
type RotationCache = HashMap<u64, Constellation>;

fn build_link<'a>(
    scheme: &'a Scheme,
    cfg: &EvalConfig,
    alpha: f64,
    link: &PreparedChannel,
    noise_var: f64,
    rotations: &mut RotationCache,
) -> Result<Link<'a>> {
    let side = &link.side;
    match scheme {
        Scheme::Baseline1 | Scheme::Baseline2 { .. } => {
            let c1 = standard_qam(cfg.n_bits, cfg.total_power)?;
            let c2 = match scheme {
                Scheme::Baseline2 { rotation_steps } => {
                    let key = side.sqrt_alpha_fb.to_bits();
                    match rotations.get(&key) {
                        Some(c) => c.clone(),
                        None => {
                            let theta = best_rotation(&c1, &c1, side.sqrt_alpha_fb, *rotation_steps)?;
                            let c = rotate(&c1, theta);
                            rotations.insert(key, c.clone());
                            c
                        }
                    }
                }
                _ => c1.clone(),
            };
            let one = Complex::new(1.0, 0.0);
            let rx1 = JointDetector::new(&c1, &c2, one, side.rx1_cross_gain());
            let rx2 = NearestDetector::new(&c2, one);
            Ok(Link::Baseline { c1, c2, rx1, rx2 })
        }
        Scheme::Dae(set) => {
            let model = set.route(alpha)?;
            let (c1, c2) = model.encode_constellation(side.sqrt_alpha_fb)?;
            let sides = model.rx_inputs(link, noise_var);
            Ok(Link::Dae { c1, c2, model, sides })
        }
    }
}

const DAE_BLOCK: usize = 4096;

fn hard_labels(p: &Tensor2) -> Vec<usize> {
    (0..p.rows())
        .map(|r| {
            p.row(r)
                .iter()
                .fold(0usize, |acc, &v| (acc << 1) | usize::from(v > 0.5))
        })
        .collect()
}

/// Sends `n_symbols` random symbols per user over one prepared channel.
fn run_link<R: Rng + ?Sized>(
    l: &Link<'_>,
    prepared: &PreparedChannel,
    n_symbols: usize,
    rng: &mut R,
) -> Result<ErrorCounts> {
    let eq = &prepared.equivalent;
    let (c1, c2) = match l {
        Link::Baseline { c1, c2, .. } | Link::Dae { c1, c2, .. } => (c1, c2),
    };
    let (m1, m2) = (c1.len(), c2.len());
    let mut counts = ErrorCounts::default();
    let mut done = 0;
    while done < n_symbols {
        let n = DAE_BLOCK.min(n_symbols - done);
        let l1: Vec<usize> = (0..n).map(|_| rng.random_range(0..m1)).collect();
        let l2: Vec<usize> = (0..n).map(|_| rng.random_range(0..m2)).collect();
        let ys: Vec<(Complex, Complex)> = l1
            .iter()
            .zip(&l2)
            .map(|(&a, &b)| apply_channel(eq, c1.point(a), c2.point(b), rng))
            .collect();
        let (d1, d2): (Vec<usize>, Vec<usize>) = match l {
            Link::Baseline { rx1, rx2, .. } => ys.iter().map(|(y1, y2)| (rx1.detect(*y1), rx2.detect(*y2))).unzip(),
            Link::Dae { model, sides, .. } => {
                let y1 = Tensor2::from_fn(n, 2, |r, c| if c == 0 { ys[r].0.re } else { ys[r].0.im });
                let y2 = Tensor2::from_fn(n, 2, |r, c| if c == 0 { ys[r].1.re } else { ys[r].1.im });
                let p1 = model.rx1.infer(&y1, &sides.0)?;
                let p2 = model.rx2.infer(&y2, &sides.1)?;
                (hard_labels(&p1), hard_labels(&p2))
            }
        };
        for k in 0..n {
            counts.errors1 += u64::from(bit_errors(l1[k], d1[k]));
            counts.errors2 += u64::from(bit_errors(l2[k], d2[k]));
        }
        counts.bits += n as u64 * c1.n_bits() as u64;
        done += n;
    }
    Ok(counts)
}

/// Simulates one (SNR, alpha) grid point with the adaptive stopping rule.
pub fn run_point(scheme: &Scheme, cfg: &EvalConfig, snr_db: f64, alpha: f64) -> Result<BerRecord> {
    if let Scheme::Dae(set) = scheme {
        set.route(alpha)?;
    }
    let noise_var = noise_var_for_snr(cfg.total_power, snr_db);
    let mut total = ErrorCounts::default();
    let mut rotations = RotationCache::new();
    let mut draw: u64 = 0;
    loop {
        let enough_draws = draw >= cfg.n_channel_draws as u64;
        if enough_draws && (total.worst_errors() >= cfg.min_errors || total.bits >= cfg.max_bits) {
            break;
        }
        let mut rng = stream(cfg.seed, &[alpha.to_bits(), draw]);
        let prepared = prepare_channel(
            &cfg.csi,
            &cfg.channel,
            alpha,
            ResidualAngle::Quantized,
            noise_var,
            &mut rng,
        )?;
        let link = build_link(scheme, cfg, alpha, &prepared, noise_var, &mut rotations)?;
        total.add(run_link(&link, &prepared, cfg.symbols_per_draw, &mut rng)?);
        draw += 1;
    }
    Ok(BerRecord::from_counts(scheme.name(), snr_db, alpha, total))
}

fn run_points(scheme: &Scheme, cfg: &EvalConfig, points: Vec<(f64, f64)>) -> Result<BerResult> {
    cfg.validate()?;
    let records = points
        .into_par_iter()
        .map(|(snr, alpha)| run_point(scheme, cfg, snr, alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok(BerResult { records })
}

/// Every (SNR, alpha) combination of the configured grids, SNR-major.
pub fn evaluate(scheme: &Scheme, cfg: &EvalConfig) -> Result<BerResult> {
    let points = cfg
        .snr_grid_db
        .iter()
        .flat_map(|&s| cfg.alpha_grid.iter().map(move |&a| (s, a)))
        .collect();
    run_points(scheme, cfg, points)
}

/// BER against SNR at a fixed interference gain.
pub fn sweep_snr(scheme: &Scheme, cfg: &EvalConfig, alpha: f64) -> Result<BerResult> {
    run_points(scheme, cfg, cfg.snr_grid_db.iter().map(|&s| (s, alpha)).collect())
}

/// BER against interference gain at a fixed SNR.
pub fn sweep_alpha(scheme: &Scheme, cfg: &EvalConfig, snr_db: f64) -> Result<BerResult> {
    run_points(scheme, cfg, cfg.alpha_grid.iter().map(|&a| (snr_db, a)).collect())
}
