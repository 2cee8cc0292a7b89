//! Z-interference channel: raw realizations, CSI estimation and feedback, and
//! the normalized equivalent channel every transceiver is simulated against.
//!
//! Only receiver 1 sees interference (from transmitter 2). With channel
//! knowledge, transmitter 2 pre-rotates its symbols so the cross link lines up
//! with the direct link, and both receivers divide by their direct gain. The
//! result is the equivalent model
//!
//! ```text
//! y1 = hbar11 x1 + hbar21 x2 + n1'
//! y2 = hbar22 x2 + n2'
//! ```
//!
//! with `hbar11 = hbar22 = 1` and `hbar21 = sqrt(alpha)` under perfect CSI.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Result, ZicError};
use crate::rng::complex_gaussian;

pub type Complex = Complex64;

/// Number of rejection-sampling attempts before channel preparation gives up.
pub const MAX_REJECTION_ATTEMPTS: usize = 1_000_000;

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Distribution CN(mu_h, sigma_h2) of the direct channel gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDistribution {
    pub mu_h: Complex,
    pub sigma_h2: f64,
}

impl ChannelDistribution {
    pub fn new(mu_h: Complex, sigma_h2: f64) -> Result<Self> {
        if !(sigma_h2 >= 0.0 && sigma_h2.is_finite()) || !mu_h.re.is_finite() || !mu_h.im.is_finite() {
            return Err(ZicError::InvalidArgument(format!(
                "channel variance must be finite and >= 0, got {sigma_h2}"
            )));
        }
        Ok(Self { mu_h, sigma_h2 })
    }

    /// Unit gains with no fading.
    pub fn fixed_unit() -> Self {
        Self {
            mu_h: Complex::new(1.0, 0.0),
            sigma_h2: 0.0,
        }
    }
}

impl Default for ChannelDistribution {
    /// CN(1, 0.1), the direct-gain distribution used in the evaluation protocol.
    fn default() -> Self {
        Self {
            mu_h: Complex::new(1.0, 0.0),
            sigma_h2: 0.1,
        }
    }
}

/// Raw complex gains `h_ij` from transmitter i to receiver j.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRealization {
    pub h11: Complex,
    pub h21: Complex,
    pub h22: Complex,
}

/// Normalized channel seen by the transceivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalentChannel {
    pub hbar11: Complex,
    pub hbar21: Complex,
    pub hbar22: Complex,
    pub sqrt_alpha: f64,
    pub noise_var_rx1: f64,
    pub noise_var_rx2: f64,
}

impl EquivalentChannel {
    /// Perfect-CSI equivalent channel with the given interference gain and
    /// per-receiver noise variances.
    pub fn perfect(sqrt_alpha: f64, noise_var_rx1: f64, noise_var_rx2: f64) -> Self {
        Self {
            hbar11: Complex::new(1.0, 0.0),
            hbar21: Complex::new(sqrt_alpha, 0.0),
            hbar22: Complex::new(1.0, 0.0),
            sqrt_alpha,
            noise_var_rx1,
            noise_var_rx2,
        }
    }
}

/// Draws `h11` and `h22` from `dist`. `h21` is left at zero; see
/// [`draw_interference`].
pub fn draw_channel<R: Rng + ?Sized>(dist: &ChannelDistribution, rng: &mut R) -> ChannelRealization {
    let h11 = complex_gaussian(rng, dist.mu_h, dist.sigma_h2);
    let h22 = complex_gaussian(rng, dist.mu_h, dist.sigma_h2);
    ChannelRealization {
        h11,
        h21: Complex::new(0.0, 0.0),
        h22,
    }
}

/// Cross gain `sqrt(alpha) * e^{j theta}` with `theta` uniform on `[0, 2 pi)`.
pub fn draw_interference<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<Complex> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(ZicError::InvalidArgument(format!(
            "interference gain must be finite and >= 0, got {alpha}"
        )));
    }
    let theta = rng.random::<f64>() * TAU;
    Ok(Complex::from_polar(alpha.sqrt(), theta))
}

/// Perfect-CSI normalization: pre-rotation at Tx2, division by the direct gain
/// at each receiver.
pub fn normalize_perfect(ch: &ChannelRealization, noise_var: f64) -> Result<EquivalentChannel> {
    let r11 = ch.h11.norm();
    let r22 = ch.h22.norm();
    if r11 == 0.0 {
        return Err(ZicError::DegenerateChannel("h11"));
    }
    if r22 == 0.0 {
        return Err(ZicError::DegenerateChannel("h22"));
    }
    let sqrt_alpha = ch.h21.norm() / r11;
    Ok(EquivalentChannel::perfect(
        sqrt_alpha,
        noise_var / (r11 * r11),
        noise_var / (r22 * r22),
    ))
}

/// Rotation Tx2 applies before transmission so the cross link phase matches
/// the direct link phase: `theta11 - theta21`.
pub fn prerotation_angle(ch: &ChannelRealization) -> f64 {
    ch.h11.arg() - ch.h21.arg()
}

/// Simulates the original (un-normalized) model with explicit pre-rotation at
/// Tx2 and post-processing at both receivers, given raw noise samples.
pub fn transmit_original(
    ch: &ChannelRealization,
    x1: Complex,
    x2: Complex,
    n1: Complex,
    n2: Complex,
) -> (Complex, Complex) {
    let rot = Complex::from_polar(1.0, prerotation_angle(ch));
    let x2_tx = rot * x2;
    let y1 = ch.h11 * x1 + ch.h21 * x2_tx + n1;
    let y2 = ch.h22 * x2_tx + n2;
    (y1 / ch.h11, y2 * rot.conj() / ch.h22)
}

/// Maps raw receiver noise to the equivalent-model noise terms produced by
/// the same post-processing as [`transmit_original`].
pub fn equivalent_noise(ch: &ChannelRealization, n1: Complex, n2: Complex) -> (Complex, Complex) {
    let rot = Complex::from_polar(1.0, prerotation_angle(ch));
    (n1 / ch.h11, n2 * rot.conj() / ch.h22)
}

/// Draws the equivalent-model noise pair for `eq`.
pub fn draw_equivalent_noise<R: Rng + ?Sized>(eq: &EquivalentChannel, rng: &mut R) -> (Complex, Complex) {
    let zero = Complex::new(0.0, 0.0);
    let n1 = complex_gaussian(rng, zero, eq.noise_var_rx1);
    let n2 = complex_gaussian(rng, zero, eq.noise_var_rx2);
    (n1, n2)
}

/// Equivalent-model channel use with explicit noise.
pub fn apply_channel_with_noise(
    eq: &EquivalentChannel,
    x1: Complex,
    x2: Complex,
    n1: Complex,
    n2: Complex,
) -> (Complex, Complex) {
    (eq.hbar11 * x1 + eq.hbar21 * x2 + n1, eq.hbar22 * x2 + n2)
}

/// One use of the equivalent channel with freshly drawn noise.
pub fn apply_channel<R: Rng + ?Sized>(
    eq: &EquivalentChannel,
    x1: Complex,
    x2: Complex,
    rng: &mut R,
) -> (Complex, Complex) {
    let (n1, n2) = draw_equivalent_noise(eq, rng);
    apply_channel_with_noise(eq, x1, x2, n1, n2)
}

/// Channel-estimation error model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationConfig {
    pub sigma_e2: f64,
    pub threshold: f64,
}

impl EstimationConfig {
    pub fn new(sigma_e2: f64, threshold: f64) -> Result<Self> {
        if !(sigma_e2 >= 0.0 && sigma_e2.is_finite()) {
            return Err(ZicError::InvalidArgument(format!(
                "estimation error variance must be >= 0, got {sigma_e2}"
            )));
        }
        if !(threshold > 0.0) {
            return Err(ZicError::InvalidArgument(format!(
                "acceptance threshold must be > 0, got {threshold}"
            )));
        }
        Ok(Self { sigma_e2, threshold })
    }
}

/// Receiver-side channel estimates `hhat = h - eps` together with the errors
/// that produced them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatedChannel {
    pub hhat11: Complex,
    pub hhat21: Complex,
    pub hhat22: Complex,
    pub eps11: Complex,
    pub eps21: Complex,
    pub eps22: Complex,
    pub alpha_hat: f64,
    pub theta_hat: f64,
}

/// Builds the estimate from explicit errors `[eps11, eps21, eps22]`.
pub fn estimate_with_errors(ch: &ChannelRealization, eps: [Complex; 3]) -> EstimatedChannel {
    let [eps11, eps21, eps22] = eps;
    let hhat11 = ch.h11 - eps11;
    let hhat21 = ch.h21 - eps21;
    let hhat22 = ch.h22 - eps22;
    let ratio = hhat21.norm() / hhat11.norm();
    EstimatedChannel {
        hhat11,
        hhat21,
        hhat22,
        eps11,
        eps21,
        eps22,
        alpha_hat: ratio * ratio,
        theta_hat: wrap_angle(hhat11.arg() - hhat21.arg()),
    }
}

/// Corrupts each gain with an independent CN(0, sigma_e2) estimation error.
pub fn estimate<R: Rng + ?Sized>(ch: &ChannelRealization, cfg: &EstimationConfig, rng: &mut R) -> EstimatedChannel {
    let zero = Complex::new(0.0, 0.0);
    let eps11 = complex_gaussian(rng, zero, cfg.sigma_e2);
    let eps21 = complex_gaussian(rng, zero, cfg.sigma_e2);
    let eps22 = complex_gaussian(rng, zero, cfg.sigma_e2);
    estimate_with_errors(ch, [eps11, eps21, eps22])
}

/// Keeps a channel only when no estimation error dominates its estimate:
/// `max(|eps11/hhat11|, |eps22/hhat22|, |eps21/hhat11|) < T`.
pub fn accept_channel(est: &EstimatedChannel, cfg: &EstimationConfig) -> bool {
    let worst = (est.eps11 / est.hhat11)
        .norm()
        .max((est.eps22 / est.hhat22).norm())
        .max((est.eps21 / est.hhat11).norm());
    // NaN (zero estimate with zero error) compares false and is rejected.
    worst < cfg.threshold
}

/// Uniform scalar quantizer on `[lo, hi]` with `2^n_bits` segments.
///
/// Segments are half-open, `[lo + k w, lo + (k + 1) w)`, except the last which
/// also contains `hi`. Inputs outside the range land in the nearest end
/// segment. The output is always a segment midpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    n_bits: u32,
    lo: f64,
    hi: f64,
}

impl Quantizer {
    pub fn new(n_bits: u32, lo: f64, hi: f64) -> Result<Self> {
        if n_bits == 0 || n_bits > 52 {
            return Err(ZicError::InvalidArgument(format!(
                "quantizer bits must be in 1..=52, got {n_bits}"
            )));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(ZicError::InvalidArgument(format!(
                "quantizer range must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { n_bits, lo, hi })
    }

    /// Interference-gain quantizer on `[0, 3]`.
    pub fn for_alpha(n_bits: u32) -> Result<Self> {
        Self::new(n_bits, 0.0, 3.0)
    }

    /// Angle quantizer on `[-pi, pi]`.
    pub fn for_angle(n_bits: u32) -> Result<Self> {
        Self::new(n_bits, -PI, PI)
    }

    pub fn n_bits(&self) -> u32 {
        self.n_bits
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn levels(&self) -> u64 {
        1u64 << self.n_bits
    }

    pub fn segment_width(&self) -> f64 {
        (self.hi - self.lo) / self.levels() as f64
    }

    /// Index of the segment containing `value` after clamping.
    pub fn segment(&self, value: f64) -> u64 {
        let levels = self.levels();
        let pos = (value - self.lo) / (self.hi - self.lo) * levels as f64;
        if pos.is_nan() || pos < 0.0 {
            0
        } else if pos >= levels as f64 {
            levels - 1
        } else {
            pos.floor() as u64
        }
    }

    pub fn quantize(&self, value: f64) -> f64 {
        let k = self.segment(value);
        self.lo + (k as f64 + 0.5) * self.segment_width()
    }
}

/// Parameters Rx1 feeds back to both transmitters and Rx2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackMessage {
    pub alpha_q: f64,
    pub theta_q: f64,
    /// Residual `theta_q - theta_hat`; known only at Rx1.
    pub theta_delta: f64,
}

impl FeedbackMessage {
    /// Unquantized feedback (infinite-precision limit).
    pub fn exact(est: &EstimatedChannel) -> Self {
        Self {
            alpha_q: est.alpha_hat,
            theta_q: est.theta_hat,
            theta_delta: 0.0,
        }
    }
}

/// Quantizes the estimated interference gain and phase difference.
pub fn make_feedback(est: &EstimatedChannel, q_alpha: &Quantizer, q_theta: &Quantizer) -> FeedbackMessage {
    let theta_q = q_theta.quantize(est.theta_hat);
    FeedbackMessage {
        alpha_q: q_alpha.quantize(est.alpha_hat),
        theta_q,
        theta_delta: theta_q - est.theta_hat,
    }
}

/// Equivalent channel under estimation error and quantized feedback.
///
/// `hbar_ii = 1 + eps_ii / hhat_ii`,
/// `hbar21 = (rhat21 / rhat11) e^{j theta_delta} + eps21 / hhat11`, and the
/// noise at receiver i is scaled by `|hhat_ii|^-2`. `sqrt_alpha` records the
/// gain Rx1 believes in, `rhat21 / rhat11`.
pub fn normalize_imperfect(
    est: &EstimatedChannel,
    fb: &FeedbackMessage,
    true_ch: &ChannelRealization,
    noise_var: f64,
) -> Result<EquivalentChannel> {
    let r11 = est.hhat11.norm();
    let r22 = est.hhat22.norm();
    if r11 == 0.0 {
        return Err(ZicError::DegenerateChannel("hhat11"));
    }
    if r22 == 0.0 {
        return Err(ZicError::DegenerateChannel("hhat22"));
    }
    debug_assert!(
        ((est.hhat11 + est.eps11) - true_ch.h11).norm() <= 1e-9 * (1.0 + true_ch.h11.norm())
            && ((est.hhat22 + est.eps22) - true_ch.h22).norm() <= 1e-9 * (1.0 + true_ch.h22.norm())
            && ((est.hhat21 + est.eps21) - true_ch.h21).norm() <= 1e-9 * (1.0 + true_ch.h21.norm()),
        "estimate does not belong to the supplied channel"
    );
    let ratio = est.hhat21.norm() / r11;
    let one = Complex::new(1.0, 0.0);
    Ok(EquivalentChannel {
        hbar11: one + est.eps11 / est.hhat11,
        hbar21: Complex::from_polar(ratio, fb.theta_delta) + est.eps21 / est.hhat11,
        hbar22: one + est.eps22 / est.hhat22,
        sqrt_alpha: ratio,
        noise_var_rx1: noise_var / (r11 * r11),
        noise_var_rx2: noise_var / (r22 * r22),
    })
}

/// Imperfect-CSI parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImperfectCsi {
    pub estimation: EstimationConfig,
    /// Feedback quantizer accuracy; `None` is unquantized feedback.
    pub n_q: Option<u32>,
}

/// Channel-knowledge regime of a simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CsiMode {
    Perfect,
    Imperfect(ImperfectCsi),
}

/// How the residual feedback angle is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualAngle {
    /// Run the real angle quantizer on the estimated phase (evaluation).
    Quantized,
    /// Draw the residual uniformly over one segment, `2^-Nq [-pi, pi]`
    /// (training-time channel preparation).
    Simulated,
}

/// What each node knows about the channel after estimation and feedback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideInfo {
    /// Interference gain known at Tx1, Tx2 and Rx2 (quantized under imperfect CSI).
    pub sqrt_alpha_fb: f64,
    /// Interference gain known at Rx1 (unquantized estimate).
    pub sqrt_alpha_rx1: f64,
    /// Residual feedback angle, known at Rx1 only; `None` under perfect CSI.
    pub theta_delta: Option<f64>,
}

impl SideInfo {
    pub fn perfect(sqrt_alpha: f64) -> Self {
        Self {
            sqrt_alpha_fb: sqrt_alpha,
            sqrt_alpha_rx1: sqrt_alpha,
            theta_delta: None,
        }
    }

    /// Cross gain Rx1 assumes when detecting: `sqrt(alpha_hat) e^{j theta_delta}`.
    pub fn rx1_cross_gain(&self) -> Complex {
        Complex::from_polar(self.sqrt_alpha_rx1, self.theta_delta.unwrap_or(0.0))
    }
}

/// A fully prepared channel: the equivalent channel to simulate plus the side
/// information available at each node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparedChannel {
    pub equivalent: EquivalentChannel,
    pub side: SideInfo,
    /// Candidates drawn before one passed the acceptance test.
    pub attempts: usize,
}

/// Perfect-CSI preparation: random direct gains normalized away, cross gain
/// set to `sqrt(alpha)`.
pub fn prepare_perfect<R: Rng + ?Sized>(
    dist: &ChannelDistribution,
    alpha: f64,
    noise_var: f64,
    rng: &mut R,
) -> Result<PreparedChannel> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(ZicError::InvalidArgument(format!(
            "interference gain must be finite and >= 0, got {alpha}"
        )));
    }
    let ch = draw_channel(dist, rng);
    let mut eq = normalize_perfect(&ch, noise_var)?;
    eq.sqrt_alpha = alpha.sqrt();
    eq.hbar21 = Complex::new(eq.sqrt_alpha, 0.0);
    Ok(PreparedChannel {
        equivalent: eq,
        side: SideInfo::perfect(eq.sqrt_alpha),
        attempts: 1,
    })
}

/// Imperfect-CSI preparation: rejection-sample channels and estimation errors
/// until the acceptance test passes, form the feedback, and normalize.
pub fn prepare_imperfect<R: Rng + ?Sized>(
    dist: &ChannelDistribution,
    alpha: f64,
    csi: &ImperfectCsi,
    residual: ResidualAngle,
    noise_var: f64,
    rng: &mut R,
) -> Result<PreparedChannel> {
    for attempt in 1..=MAX_REJECTION_ATTEMPTS {
        let mut ch = draw_channel(dist, rng);
        ch.h21 = draw_interference(alpha, rng)?;
        let est = estimate(&ch, &csi.estimation, rng);
        if !accept_channel(&est, &csi.estimation) {
            continue;
        }
        let fb = match (csi.n_q, residual) {
            (None, _) => FeedbackMessage::exact(&est),
            (Some(n_q), ResidualAngle::Quantized) => {
                make_feedback(&est, &Quantizer::for_alpha(n_q)?, &Quantizer::for_angle(n_q)?)
            }
            (Some(n_q), ResidualAngle::Simulated) => {
                let half = PI / (1u64 << n_q) as f64;
                let theta_delta = rng.random_range(-half..=half);
                FeedbackMessage {
                    alpha_q: Quantizer::for_alpha(n_q)?.quantize(est.alpha_hat),
                    theta_q: est.theta_hat + theta_delta,
                    theta_delta,
                }
            }
        };
        let eq = normalize_imperfect(&est, &fb, &ch, noise_var)?;
        return Ok(PreparedChannel {
            equivalent: eq,
            side: SideInfo {
                sqrt_alpha_fb: fb.alpha_q.max(0.0).sqrt(),
                sqrt_alpha_rx1: est.alpha_hat.sqrt(),
                theta_delta: Some(fb.theta_delta),
            },
            attempts: attempt,
        });
    }
    Err(ZicError::InvalidArgument(format!(
        "no channel passed the acceptance test in {MAX_REJECTION_ATTEMPTS} attempts"
    )))
}

/// Prepares one channel for the given CSI mode.
pub fn prepare_channel<R: Rng + ?Sized>(
    csi: &CsiMode,
    dist: &ChannelDistribution,
    alpha: f64,
    residual: ResidualAngle,
    noise_var: f64,
    rng: &mut R,
) -> Result<PreparedChannel> {
    match csi {
        CsiMode::Perfect => prepare_perfect(dist, alpha, noise_var, rng),
        CsiMode::Imperfect(imp) => prepare_imperfect(dist, alpha, imp, residual, noise_var, rng),
    }
}
