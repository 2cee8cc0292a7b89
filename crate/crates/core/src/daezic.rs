//! The learned transceiver: two transmitter/receiver autoencoder pairs joined
//! by differentiable channel layers, and the training loop that fits them.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{prepare_channel, ChannelDistribution, CsiMode, PreparedChannel, ResidualAngle};
use crate::error::{Result, ZicError};
use crate::modem::Constellation;
use crate::nn::norm::DEFAULT_MOMENTUM;
use crate::nn::{
    add_gaussian_noise, bce_grad, bce_loss, Activation, Adam, AdamConfig, BatchPowerNorm, GradCheck, Mlp, ParamSlot,
    Parameterized, PowerNormLayer, Tensor2,
};
use crate::rng::{random_bit, stream, SimRng};

const STREAM_INIT: u64 = 0;
const STREAM_CHANNEL: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_CALIBRATION: u64 = 3;

/// Forward-only batches used to re-estimate the normalization statistics at
/// the final weights.
pub const CALIBRATION_BATCHES: usize = 50;

/// Mean square of each received column after receiver normalization, so that
/// a received complex sample has unit average power.
const RX_COLUMN_POWER: f64 = 0.5;

/// Hidden-layer sizes shared by all four networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub hidden: usize,
    pub blocks: usize,
    pub subnet2_hidden: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: 64,
            blocks: 2,
            subnet2_hidden: 16,
        }
    }
}

/// Switches for the ablation variants. All `true` is the proposed model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationFlags {
    pub use_shortcuts: bool,
    pub alpha_to_subnet1: bool,
    pub alpha_to_subnet2: bool,
    pub alpha_to_rx: bool,
    pub use_subnet2: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::proposed()
    }
}

impl AblationFlags {
    pub fn proposed() -> Self {
        Self {
            use_shortcuts: true,
            alpha_to_subnet1: true,
            alpha_to_subnet2: true,
            alpha_to_rx: true,
            use_subnet2: true,
        }
    }

    /// Ablation experiment `k` in 1..=6; 0 is the proposed model.
    pub fn experiment(k: usize) -> Result<Self> {
        let p = Self::proposed();
        Ok(match k {
            0 => p,
            1 => Self {
                use_shortcuts: false,
                ..p
            },
            2 => Self {
                alpha_to_subnet1: false,
                ..p
            },
            3 => Self {
                alpha_to_subnet2: false,
                ..p
            },
            4 => Self {
                alpha_to_subnet1: false,
                alpha_to_subnet2: false,
                ..p
            },
            5 => Self {
                alpha_to_rx: false,
                ..p
            },
            6 => Self {
                alpha_to_subnet2: false,
                use_subnet2: false,
                ..p
            },
            _ => {
                return Err(ZicError::InvalidArgument(format!(
                    "ablation experiment must be in 0..=6, got {k}"
                )))
            }
        })
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_bits: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub total_power: f64,
    pub train_snr_db: f64,
    pub n_channels: usize,
    pub epochs_per_channel: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub seed: u64,
    pub csi: CsiMode,
    pub channel: ChannelDistribution,
    pub architecture: Architecture,
    pub flags: AblationFlags,
}

impl Default for TrainConfig {
    /// Desk-scale run around `alpha = 1`.
    fn default() -> Self {
        Self {
            n_bits: 2,
            alpha_min: 0.9,
            alpha_max: 1.1,
            total_power: 1.0,
            train_snr_db: 10.0,
            n_channels: 500,
            epochs_per_channel: 10,
            batch: 1000,
            learning_rate: 1e-2,
            decay: 0.95,
            decay_every: 200,
            seed: 0,
            csi: CsiMode::Perfect,
            channel: ChannelDistribution::default(),
            architecture: Architecture::default(),
            flags: AblationFlags::proposed(),
        }
    }
}

impl TrainConfig {
    /// Full-scale schedule: 30000 channels, batches of 10^4.
    pub fn full_scale() -> Self {
        Self {
            n_channels: 30_000,
            batch: 10_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ZicError::Config(m));
        if !(1..=16).contains(&self.n_bits) {
            return bad(format!("n_bits must be in 1..=16, got {}", self.n_bits));
        }
        if !(self.alpha_min >= 0.0 && self.alpha_min < self.alpha_max && self.alpha_max.is_finite()) {
            return bad(format!(
                "need 0 <= alpha_min < alpha_max, got [{}, {}]",
                self.alpha_min, self.alpha_max
            ));
        }
        if !(self.total_power > 0.0 && self.total_power.is_finite()) {
            return bad(format!("total_power must be positive, got {}", self.total_power));
        }
        if !self.train_snr_db.is_finite() {
            return bad("train_snr_db must be finite".into());
        }
        if self.epochs_per_channel == 0 || self.decay_every == 0 {
            return bad("epochs_per_channel and decay_every must be positive".into());
        }
        if self.batch < 2 {
            return bad(format!("batch must be at least 2, got {}", self.batch));
        }
        if !(self.learning_rate > 0.0 && self.decay > 0.0 && self.decay <= 1.0) {
            return bad("learning_rate must be positive and decay in (0, 1]".into());
        }
        let a = self.architecture;
        if a.hidden == 0 || a.subnet2_hidden == 0 {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }

    /// Nominal noise power `P_t / 10^(snr/10)` at the training SNR.
    pub fn noise_var(&self) -> f64 {
        noise_var_for_snr(self.total_power, self.train_snr_db)
    }
}

/// Complex noise power for a given transmit power and SNR in dB.
pub fn noise_var_for_snr(total_power: f64, snr_db: f64) -> f64 {
    total_power / 10f64.powf(snr_db / 10.0)
}

/// Receiver input scaling `sqrt(1 + P_D / sigma_N^2)`.
pub fn eta(desired_power: f64, noise_var: f64) -> f64 {
    (1.0 + desired_power / noise_var).sqrt()
}

fn shape_error(op: &'static str, expected: String, got: String) -> ZicError {
    ZicError::ShapeMismatch { op, expected, got }
}

/// Encoder: sub-network 1 shapes the constellation, sub-network 2 splits the
/// power between I and Q.
#[derive(Debug, Clone)]
pub struct Transmitter {
    subnet1: Mlp,
    bpn: BatchPowerNorm,
    subnet2: Option<Mlp>,
    power_norm: PowerNormLayer,
    n_bits: usize,
    flags: AblationFlags,
    cache: Option<(Tensor2, [f64; 2])>,
}

impl Transmitter {
    pub fn new<R: Rng + ?Sized>(
        n_bits: usize,
        total_power: f64,
        arch: &Architecture,
        flags: AblationFlags,
        rng: &mut R,
    ) -> Self {
        let inputs = n_bits + usize::from(flags.alpha_to_subnet1);
        let subnet1 = Mlp::new(
            inputs,
            arch.hidden,
            arch.blocks,
            2,
            Activation::Linear,
            flags.use_shortcuts,
            rng,
        );
        let subnet2 = flags
            .use_subnet2
            .then(|| Mlp::new(1, arch.subnet2_hidden, 0, 2, Activation::Linear, false, rng));
        Self {
            subnet1,
            bpn: BatchPowerNorm::new(2, 1.0, DEFAULT_MOMENTUM),
            subnet2,
            power_norm: PowerNormLayer::new(total_power),
            n_bits,
            flags,
            cache: None,
        }
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    fn subnet1_input(&self, bits: &Tensor2, sqrt_alpha: f64) -> Result<Tensor2> {
        if bits.cols() != self.n_bits {
            return Err(shape_error(
                "tx_forward",
                format!("{} bit columns", self.n_bits),
                bits.cols().to_string(),
            ));
        }
        Ok(if self.flags.alpha_to_subnet1 {
            bits.with_constant_columns(&[sqrt_alpha])
        } else {
            bits.clone()
        })
    }

    fn subnet2_input(&self, sqrt_alpha: f64) -> Tensor2 {
        let v = if self.flags.alpha_to_subnet2 { sqrt_alpha } else { 1.0 };
        Tensor2::from_fn(1, 1, |_, _| v)
    }

    fn fixed_gamma(&self) -> [f64; 2] {
        let g = (self.power_norm.total_power() / 2.0).sqrt();
        [g, g]
    }

    /// I/Q amplitude factors; their squares sum to the transmit power.
    pub fn gamma(&self, sqrt_alpha: f64) -> Result<[f64; 2]> {
        match &self.subnet2 {
            None => Ok(self.fixed_gamma()),
            Some(net) => {
                let g0 = net.infer(&self.subnet2_input(sqrt_alpha))?;
                let g = self.power_norm.infer(&g0);
                Ok([g.get(0, 0), g.get(0, 1)])
            }
        }
    }

    fn scale(xb: &Tensor2, gamma: [f64; 2]) -> Tensor2 {
        Tensor2::from_fn(xb.rows(), 2, |r, c| xb.get(r, c) * gamma[c])
    }

    /// Inference-mode encoding with frozen normalization statistics.
    pub fn infer(&self, bits: &Tensor2, sqrt_alpha: f64) -> Result<Tensor2> {
        let f = self.subnet1.infer(&self.subnet1_input(bits, sqrt_alpha)?)?;
        let xb = self.bpn.infer(&f)?;
        Ok(Self::scale(&xb, self.gamma(sqrt_alpha)?))
    }

    /// Training-mode encoding; batch statistics normalize the output.
    pub fn forward(&mut self, bits: &Tensor2, sqrt_alpha: f64) -> Result<Tensor2> {
        let input = self.subnet1_input(bits, sqrt_alpha)?;
        let f = self.subnet1.forward(&input)?;
        let xb = self.bpn.forward(&f, true)?;
        let g_in = self.subnet2_input(sqrt_alpha);
        let gamma = match &mut self.subnet2 {
            None => self.fixed_gamma(),
            Some(net) => {
                let g0 = net.forward(&g_in)?;
                let g = self.power_norm.forward(&g0);
                [g.get(0, 0), g.get(0, 1)]
            }
        };
        let x = Self::scale(&xb, gamma);
        self.cache = Some((xb, gamma));
        Ok(x)
    }

    pub fn backward(&mut self, grad_out: &Tensor2) {
        let (xb, gamma) = self.cache.take().expect("transmitter backward without forward");
        let mut g_gamma = [0.0; 2];
        for r in 0..xb.rows() {
            for (c, gg) in g_gamma.iter_mut().enumerate() {
                *gg += grad_out.get(r, c) * xb.get(r, c);
            }
        }
        if let Some(net) = &mut self.subnet2 {
            let g = Tensor2::from_fn(1, 2, |_, c| g_gamma[c]);
            let g0 = self.power_norm.backward(&g);
            net.backward(&g0);
        }
        let gxb = Self::scale(grad_out, gamma);
        let gf = self.bpn.backward(&gxb);
        self.subnet1.backward(&gf);
    }
}

impl Parameterized for Transmitter {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamSlot<'_>)) {
        self.subnet1.visit_params(f);
        self.bpn.visit_params(f);
        if let Some(net) = &mut self.subnet2 {
            net.visit_params(f);
        }
    }
}

/// Side inputs a receiver appends after the scaled received sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxSideInput {
    pub sqrt_alpha: f64,
    pub theta_delta: f64,
    pub eta: f64,
}

/// Decoder: normalizes the received sample, scales it by eta and maps it,
/// with the side inputs, to per-bit probabilities.
#[derive(Debug, Clone)]
pub struct Receiver {
    bpn: BatchPowerNorm,
    net: Mlp,
    alpha_input: bool,
    theta_input: bool,
    cache: Option<f64>,
}

impl Receiver {
    pub fn new<R: Rng + ?Sized>(
        n_bits: usize,
        arch: &Architecture,
        flags: AblationFlags,
        theta_input: bool,
        rng: &mut R,
    ) -> Self {
        let inputs = 2 + usize::from(flags.alpha_to_rx) + usize::from(theta_input);
        Self {
            bpn: BatchPowerNorm::new(2, RX_COLUMN_POWER, DEFAULT_MOMENTUM),
            net: Mlp::new(
                inputs,
                arch.hidden,
                arch.blocks,
                n_bits,
                Activation::Sigmoid,
                flags.use_shortcuts,
                rng,
            ),
            alpha_input: flags.alpha_to_rx,
            theta_input,
            cache: None,
        }
    }

    pub fn input_width(&self) -> usize {
        self.net.inputs()
    }

    fn assemble(&self, yb: &Tensor2, side: &RxSideInput) -> Tensor2 {
        let mut extra = Vec::with_capacity(2);
        if self.alpha_input {
            extra.push(side.sqrt_alpha);
        }
        if self.theta_input {
            extra.push(side.theta_delta);
        }
        yb.map(|v| v * side.eta).with_constant_columns(&extra)
    }

    pub fn infer(&self, y: &Tensor2, side: &RxSideInput) -> Result<Tensor2> {
        let yb = self.bpn.infer(y)?;
        self.net.infer(&self.assemble(&yb, side))
    }

    pub fn forward(&mut self, y: &Tensor2, side: &RxSideInput) -> Result<Tensor2> {
        let yb = self.bpn.forward(y, true)?;
        let input = self.assemble(&yb, side);
        self.cache = Some(side.eta);
        self.net.forward(&input)
    }

    /// Returns the gradient wrt the received samples.
    pub fn backward(&mut self, grad_out: &Tensor2) -> Tensor2 {
        let eta = self.cache.take().expect("receiver backward without forward");
        let g_in = self.net.backward(grad_out);
        let g_yb = g_in.columns(0, 2).map(|v| v * eta);
        self.bpn.backward(&g_yb)
    }
}

impl Parameterized for Receiver {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamSlot<'_>)) {
        self.bpn.visit_params(f);
        self.net.visit_params(f);
    }
}

/// `x h^T` for complex `h` acting on rows `[re, im]`.
fn complex_gain(x: &Tensor2, h: Complex64) -> Tensor2 {
    Tensor2::from_fn(x.rows(), 2, |r, c| {
        let (re, im) = (x.get(r, 0), x.get(r, 1));
        if c == 0 {
            h.re * re - h.im * im
        } else {
            h.im * re + h.re * im
        }
    })
}

fn add(a: &Tensor2, b: &Tensor2) -> Tensor2 {
    Tensor2::from_fn(a.rows(), a.cols(), |r, c| a.get(r, c) + b.get(r, c))
}

/// One training or evaluation block: bits for both users and the real-form
/// noise added at each receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub bits1: Tensor2,
    pub bits2: Tensor2,
    pub noise1: Tensor2,
    pub noise2: Tensor2,
}

impl Batch {
    /// Uniform random bits and noise matched to `link`.
    pub fn random<R: Rng + ?Sized>(rows: usize, n_bits: usize, link: &PreparedChannel, rng: &mut R) -> Self {
        let bits1 = Tensor2::from_fn(rows, n_bits, |_, _| random_bit(rng));
        let bits2 = Tensor2::from_fn(rows, n_bits, |_, _| random_bit(rng));
        let eq = &link.equivalent;
        let noise1 = add_gaussian_noise(&Tensor2::zeros(rows, 2), eq.noise_var_rx1 / 2.0, rng);
        let noise2 = add_gaussian_noise(&Tensor2::zeros(rows, 2), eq.noise_var_rx2 / 2.0, rng);
        Self {
            bits1,
            bits2,
            noise1,
            noise2,
        }
    }

    /// The same bits with the noise removed.
    pub fn noiseless(&self) -> Self {
        let rows = self.bits1.rows();
        Self {
            noise1: Tensor2::zeros(rows, 2),
            noise2: Tensor2::zeros(rows, 2),
            ..self.clone()
        }
    }
}

/// Per-user losses of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub rx1: f64,
    pub rx2: f64,
}

impl Losses {
    pub fn total(&self) -> f64 {
        self.rx1 + self.rx2
    }
}

/// Both transceiver pairs of the interference channel.
#[derive(Debug, Clone)]
pub struct DaeZicModel {
    pub tx1: Transmitter,
    pub tx2: Transmitter,
    pub rx1: Receiver,
    pub rx2: Receiver,
    n_bits: usize,
    total_power: f64,
    architecture: Architecture,
    flags: AblationFlags,
    theta_input: bool,
}

impl DaeZicModel {
    pub fn new<R: Rng + ?Sized>(
        n_bits: usize,
        total_power: f64,
        architecture: Architecture,
        flags: AblationFlags,
        theta_input: bool,
        rng: &mut R,
    ) -> Self {
        let arch = &architecture;
        Self {
            tx1: Transmitter::new(n_bits, total_power, arch, flags, rng),
            tx2: Transmitter::new(n_bits, total_power, arch, flags, rng),
            rx1: Receiver::new(n_bits, arch, flags, theta_input, rng),
            rx2: Receiver::new(n_bits, arch, flags, false, rng),
            n_bits,
            total_power,
            architecture,
            flags,
            theta_input,
        }
    }

    /// Freshly initialized model for a training configuration.
    pub fn for_config(cfg: &TrainConfig) -> Self {
        let mut rng = stream(cfg.seed, &[STREAM_INIT]);
        let theta_input = matches!(cfg.csi, CsiMode::Imperfect(_));
        Self::new(
            cfg.n_bits,
            cfg.total_power,
            cfg.architecture,
            cfg.flags,
            theta_input,
            &mut rng,
        )
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn total_power(&self) -> f64 {
        self.total_power
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn flags(&self) -> AblationFlags {
        self.flags
    }

    /// Whether Rx1 takes the residual feedback angle as an input.
    pub fn theta_input(&self) -> bool {
        self.theta_input
    }

    /// Side inputs of both receivers for a prepared link at noise power
    /// `noise_var`.
    pub fn rx_inputs(&self, link: &PreparedChannel, noise_var: f64) -> (RxSideInput, RxSideInput) {
        let side = &link.side;
        let p = self.total_power;
        let rx1 = RxSideInput {
            sqrt_alpha: side.sqrt_alpha_rx1,
            theta_delta: side.theta_delta.unwrap_or(0.0),
            eta: eta((1.0 + side.sqrt_alpha_rx1.powi(2)) * p, noise_var),
        };
        let rx2 = RxSideInput {
            sqrt_alpha: side.sqrt_alpha_fb,
            theta_delta: 0.0,
            eta: eta(p, noise_var),
        };
        (rx1, rx2)
    }

    /// Training-mode pass through both chains; returns the bit probabilities
    /// at Rx1 and Rx2.
    pub fn forward(&mut self, batch: &Batch, link: &PreparedChannel, noise_var: f64) -> Result<(Tensor2, Tensor2)> {
        let sa = link.side.sqrt_alpha_fb;
        let eq = &link.equivalent;
        let x1 = self.tx1.forward(&batch.bits1, sa)?;
        let x2 = self.tx2.forward(&batch.bits2, sa)?;
        let y1 = add(
            &add(&complex_gain(&x1, eq.hbar11), &complex_gain(&x2, eq.hbar21)),
            &batch.noise1,
        );
        let y2 = add(&complex_gain(&x2, eq.hbar22), &batch.noise2);
        let (s1, s2) = self.rx_inputs(link, noise_var);
        let p1 = self.rx1.forward(&y1, &s1)?;
        let p2 = self.rx2.forward(&y2, &s2)?;
        Ok((p1, p2))
    }

    fn normalizers(&mut self) -> [&mut BatchPowerNorm; 4] {
        [
            &mut self.tx1.bpn,
            &mut self.tx2.bpn,
            &mut self.rx1.bpn,
            &mut self.rx2.bpn,
        ]
    }

    /// Recomputes every running mean square as the average over training-mode
    /// passes on `batches`. Weights are left untouched.
    pub fn calibrate(&mut self, batches: &[(Batch, PreparedChannel)], noise_var: f64) -> Result<()> {
        self.normalizers()
            .into_iter()
            .for_each(BatchPowerNorm::begin_calibration);
        let run = batches
            .iter()
            .try_for_each(|(b, link)| self.forward(b, link, noise_var).map(|_| ()));
        self.normalizers().into_iter().for_each(BatchPowerNorm::end_calibration);
        run
    }

    /// Training-mode losses without touching gradients.
    pub fn losses(&mut self, batch: &Batch, link: &PreparedChannel, noise_var: f64) -> Result<Losses> {
        let (p1, p2) = self.forward(batch, link, noise_var)?;
        Ok(Losses {
            rx1: bce_loss(&p1, &batch.bits1)?,
            rx2: bce_loss(&p2, &batch.bits2)?,
        })
    }

    /// Forward pass, losses, and gradients of `L1 + L2` left in the buffers
    /// (previous gradients are cleared first).
    pub fn backprop(&mut self, batch: &Batch, link: &PreparedChannel, noise_var: f64) -> Result<Losses> {
        self.zero_grads();
        let (p1, p2) = self.forward(batch, link, noise_var)?;
        let losses = Losses {
            rx1: bce_loss(&p1, &batch.bits1)?,
            rx2: bce_loss(&p2, &batch.bits2)?,
        };
        let gy1 = self.rx1.backward(&bce_grad(&p1, &batch.bits1)?);
        let gy2 = self.rx2.backward(&bce_grad(&p2, &batch.bits2)?);
        let eq = &link.equivalent;
        let gx1 = complex_gain(&gy1, eq.hbar11.conj());
        let gx2 = add(
            &complex_gain(&gy1, eq.hbar21.conj()),
            &complex_gain(&gy2, eq.hbar22.conj()),
        );
        self.tx1.backward(&gx1);
        self.tx2.backward(&gx2);
        Ok(losses)
    }

    /// Both learned constellations at `sqrt_alpha`, indexed by bit label
    /// (first bit most significant).
    pub fn encode_constellation(&self, sqrt_alpha: f64) -> Result<(Constellation, Constellation)> {
        let m = 1usize << self.n_bits;
        let bits = Tensor2::from_fn(m, self.n_bits, |r, c| ((r >> (self.n_bits - 1 - c)) & 1) as f64);
        let to_points = |x: Tensor2| -> Vec<Complex64> {
            (0..x.rows())
                .map(|r| Complex64::new(x.get(r, 0), x.get(r, 1)))
                .collect()
        };
        let c1 = Constellation::from_points(to_points(self.tx1.infer(&bits, sqrt_alpha)?), self.n_bits)?;
        let c2 = Constellation::from_points(to_points(self.tx2.infer(&bits, sqrt_alpha)?), self.n_bits)?;
        Ok((c1, c2))
    }
}

impl Parameterized for DaeZicModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamSlot<'_>)) {
        self.tx1.visit_params(f);
        self.tx2.visit_params(f);
        self.rx1.visit_params(f);
        self.rx2.visit_params(f);
    }
}

/// Total loss of a model on one fixed batch and channel, for gradient checks.
#[derive(Debug, Clone)]
pub struct FixedBatchObjective {
    pub model: DaeZicModel,
    pub batch: Batch,
    pub link: PreparedChannel,
    pub noise_var: f64,
}

impl Parameterized for FixedBatchObjective {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamSlot<'_>)) {
        self.model.visit_params(f);
    }
}

impl GradCheck for FixedBatchObjective {
    fn loss(&mut self) -> f64 {
        self.model
            .losses(&self.batch, &self.link, self.noise_var)
            .map_or(f64::NAN, |l| l.total())
    }

    fn loss_and_grads(&mut self) -> f64 {
        self.model
            .backprop(&self.batch, &self.link, self.noise_var)
            .map_or(f64::NAN, |l| l.total())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogEntry {
    pub channel: usize,
    pub alpha: f64,
    pub mean_loss: f64,
    pub learning_rate: f64,
}

/// Trains a model from scratch; see [`train_with`].
pub fn train(cfg: &TrainConfig) -> Result<(DaeZicModel, Vec<TrainLogEntry>)> {
    train_with(cfg, &mut |_| {})
}

/// Trains a model, reporting each channel's log entry as it completes.
///
/// For each of `n_channels` channels an interference gain is drawn uniformly
/// from `[alpha_min, alpha_max]`, a channel is prepared for the CSI mode, and
/// `epochs_per_channel` Adam steps are taken on fresh random batches. The
/// learning rate decays by `decay` after every `decay_every` channels.
/// Finally the normalization statistics are re-estimated on
/// [`CALIBRATION_BATCHES`] fresh batches, so inference-mode outputs reflect
/// the final weights rather than a moving average over earlier ones.
pub fn train_with(
    cfg: &TrainConfig,
    on_channel: &mut dyn FnMut(&TrainLogEntry),
) -> Result<(DaeZicModel, Vec<TrainLogEntry>)> {
    cfg.validate()?;
    let mut model = DaeZicModel::for_config(cfg);
    let mut adam = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let noise_var = cfg.noise_var();
    let mut log = Vec::with_capacity(cfg.n_channels);
    for i in 0..cfg.n_channels {
        let mut rng: SimRng = stream(cfg.seed, &[STREAM_CHANNEL, i as u64]);
        let alpha = rng.random_range(cfg.alpha_min..=cfg.alpha_max);
        let link = prepare_channel(
            &cfg.csi,
            &cfg.channel,
            alpha,
            ResidualAngle::Simulated,
            noise_var,
            &mut rng,
        )?;
        let mut total = 0.0;
        for e in 0..cfg.epochs_per_channel {
            let mut brng = stream(cfg.seed, &[STREAM_BATCH, i as u64, e as u64]);
            let batch = Batch::random(cfg.batch, cfg.n_bits, &link, &mut brng);
            let loss = model.backprop(&batch, &link, noise_var)?.total();
            if !loss.is_finite() {
                return Err(ZicError::NonFiniteLoss {
                    loss,
                    channel: i,
                    epoch: e,
                });
            }
            adam.step(&mut model);
            total += loss;
        }
        let entry = TrainLogEntry {
            channel: i,
            alpha,
            mean_loss: total / cfg.epochs_per_channel as f64,
            learning_rate: adam.learning_rate(),
        };
        on_channel(&entry);
        log.push(entry);
        if (i + 1) % cfg.decay_every == 0 {
            adam.decay_learning_rate(cfg.decay);
        }
    }
    if cfg.n_channels > 0 {
        let batches = (0..CALIBRATION_BATCHES)
            .map(|k| {
                let mut rng: SimRng = stream(cfg.seed, &[STREAM_CALIBRATION, k as u64]);
                let alpha = rng.random_range(cfg.alpha_min..=cfg.alpha_max);
                let link = prepare_channel(
                    &cfg.csi,
                    &cfg.channel,
                    alpha,
                    ResidualAngle::Simulated,
                    noise_var,
                    &mut rng,
                )?;
                Ok((Batch::random(cfg.batch, cfg.n_bits, &link, &mut rng), link))
            })
            .collect::<Result<Vec<_>>>()?;
        model.calibrate(&batches, noise_var)?;
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::EquivalentChannel;
    use crate::channel::SideInfo;
    use crate::nn::gradcheck::check_gradients;

    fn tiny() -> Architecture {
        Architecture {
            hidden: 6,
            blocks: 2,
            subnet2_hidden: 4,
        }
    }

    fn perfect_link(alpha: f64, noise_var: f64) -> PreparedChannel {
        PreparedChannel {
            equivalent: EquivalentChannel::perfect(alpha.sqrt(), noise_var, noise_var),
            side: SideInfo::perfect(alpha.sqrt()),
            attempts: 1,
        }
    }

    fn params(model: &mut DaeZicModel) -> Vec<f64> {
        let mut out = Vec::new();
        model.visit_params(&mut |s| out.extend_from_slice(s.values));
        out
    }

    #[test]
    fn eta_examples() {
        assert!((eta(2.0, 0.1) - 21f64.sqrt()).abs() < 1e-12);
        assert!((eta(2.0, 1e12) - 1.0).abs() < 1e-9);
        assert!((noise_var_for_snr(1.0, 10.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn ablation_presets() {
        assert_eq!(AblationFlags::experiment(0).unwrap(), AblationFlags::proposed());
        assert!(!AblationFlags::experiment(1).unwrap().use_shortcuts);
        let e4 = AblationFlags::experiment(4).unwrap();
        assert!(!e4.alpha_to_subnet1 && !e4.alpha_to_subnet2 && e4.alpha_to_rx);
        assert!(!AblationFlags::experiment(5).unwrap().alpha_to_rx);
        assert!(!AblationFlags::experiment(6).unwrap().use_subnet2);
        assert!(AblationFlags::experiment(7).is_err());
    }

    #[test]
    fn receiver_input_widths() {
        let mut rng = stream(1, &[]);
        let m = DaeZicModel::new(2, 1.0, tiny(), AblationFlags::proposed(), true, &mut rng);
        assert_eq!(m.rx1.input_width(), 4);
        assert_eq!(m.rx2.input_width(), 3);
        let m = DaeZicModel::new(2, 1.0, tiny(), AblationFlags::proposed(), false, &mut rng);
        assert_eq!(m.rx1.input_width(), 3);
    }

    #[test]
    fn transmit_power_is_exact_in_training_mode() {
        let mut rng = stream(2, &[]);
        for flags in [AblationFlags::proposed(), AblationFlags::experiment(6).unwrap()] {
            let mut tx = Transmitter::new(3, 1.7, &tiny(), flags, &mut rng);
            for _ in 0..20 {
                let bits = Tensor2::from_fn(32, 3, |_, _| random_bit(&mut rng));
                let x = tx.forward(&bits, 0.8).unwrap();
                let power = x.col_mean_square(0) + x.col_mean_square(1);
                assert!((power - 1.7).abs() < 1e-9, "{power}");
            }
        }
    }

    #[test]
    fn without_subnet2_power_splits_evenly() {
        let mut rng = stream(3, &[]);
        let mut tx = Transmitter::new(2, 1.0, &tiny(), AblationFlags::experiment(6).unwrap(), &mut rng);
        let bits = Tensor2::from_fn(64, 2, |_, _| random_bit(&mut rng));
        let x = tx.forward(&bits, 1.0).unwrap();
        assert!((x.col_mean_square(0) - 0.5).abs() < 1e-12);
        assert!((x.col_mean_square(1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn encoder_is_deterministic() {
        let mut rng = stream(4, &[]);
        let m = DaeZicModel::new(2, 1.0, tiny(), AblationFlags::proposed(), false, &mut rng);
        let (a1, a2) = m.encode_constellation(1.0).unwrap();
        let (b1, b2) = m.encode_constellation(1.0).unwrap();
        assert_eq!(a1, b1);
        assert_eq!(a2, b2);
        assert_eq!(a1.len(), 4);
    }

    #[test]
    fn subnet2_adds_parameters() {
        let mut rng = stream(5, &[]);
        let mut full = DaeZicModel::new(
            2,
            1.0,
            Architecture::default(),
            AblationFlags::proposed(),
            false,
            &mut rng,
        );
        let mut no2 = DaeZicModel::new(
            2,
            1.0,
            Architecture::default(),
            AblationFlags::experiment(6).unwrap(),
            false,
            &mut rng,
        );
        assert!(full.trainable_count() > no2.trainable_count());
    }

    #[test]
    fn joint_loss_is_the_sum_of_per_user_losses() {
        let mut rng = stream(6, &[]);
        let mut m = DaeZicModel::new(2, 1.0, tiny(), AblationFlags::proposed(), false, &mut rng);
        let link = perfect_link(1.0, 0.1);
        let batch = Batch::random(16, 2, &link, &mut rng);
        let joint = m.backprop(&batch, &link, 0.1).unwrap();
        let (p1, p2) = m.forward(&batch, &link, 0.1).unwrap();
        let l1 = bce_loss(&p1, &batch.bits1).unwrap();
        let l2 = bce_loss(&p2, &batch.bits2).unwrap();
        assert!((joint.total() - (l1 + l2)).abs() < 1e-12);
    }

    #[test]
    fn receivers_output_probabilities() {
        let mut rng = stream(7, &[]);
        let mut m = DaeZicModel::new(3, 1.0, tiny(), AblationFlags::proposed(), true, &mut rng);
        let link = perfect_link(2.0, 0.5);
        let batch = Batch::random(50, 3, &link, &mut rng);
        let (p1, p2) = m.forward(&batch, &link, 0.5).unwrap();
        for p in [p1, p2] {
            assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn tx1_never_reaches_rx2_but_tx2_reaches_both() {
        let mut rng = stream(8, &[]);
        let mut m = DaeZicModel::new(2, 1.0, tiny(), AblationFlags::proposed(), false, &mut rng);
        let link = perfect_link(0.7, 0.1);
        let batch = Batch::random(16, 2, &link, &mut rng);
        let (a1, a2) = m.forward(&batch, &link, 0.1).unwrap();

        let mut perturbed = m.clone();
        perturbed.tx1.visit_params(&mut |s| {
            if s.grads.is_some() {
                s.values.iter_mut().for_each(|v| *v += 0.05);
            }
        });
        let (b1, b2) = perturbed.forward(&batch, &link, 0.1).unwrap();
        assert_eq!(a2, b2);
        assert_ne!(a1, b1);

        let mut perturbed = m.clone();
        perturbed.tx2.visit_params(&mut |s| {
            if s.grads.is_some() {
                s.values.iter_mut().for_each(|v| *v += 0.05);
            }
        });
        let (c1, c2) = perturbed.forward(&batch, &link, 0.1).unwrap();
        assert_ne!(a1, c1);
        assert_ne!(a2, c2);
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let mut rng = stream(9, &[]);
        for (flags, theta) in [
            (AblationFlags::proposed(), true),
            (AblationFlags::experiment(1).unwrap(), false),
            (AblationFlags::experiment(6).unwrap(), false),
        ] {
            let model = DaeZicModel::new(2, 1.0, tiny(), flags, theta, &mut rng);
            let mut link = perfect_link(0.8, 0.1);
            link.equivalent.hbar21 = Complex64::from_polar(0.9, 0.3);
            link.equivalent.hbar11 = Complex64::new(1.1, -0.2);
            link.side.theta_delta = Some(0.1);
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
            assert!(report.max_rel_error < 1e-4, "{flags:?}: {report:?}");
        }
    }

    fn mini_config(seed: u64) -> TrainConfig {
        TrainConfig {
            n_channels: 20,
            batch: 256,
            seed,
            architecture: Architecture {
                hidden: 16,
                blocks: 2,
                subnet2_hidden: 8,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_channels_gives_initial_model() {
        let cfg = TrainConfig {
            n_channels: 0,
            ..mini_config(1)
        };
        let (mut trained, log) = train(&cfg).unwrap();
        assert!(log.is_empty());
        assert_eq!(params(&mut trained), params(&mut DaeZicModel::for_config(&cfg)));
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            n_channels: 3,
            ..mini_config(11)
        };
        let (mut a, la) = train(&cfg).unwrap();
        let (mut b, lb) = train(&cfg).unwrap();
        assert_eq!(la, lb);
        let (pa, pb) = (params(&mut a), params(&mut b));
        assert!(pa.iter().zip(&pb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn learning_rate_decays_on_schedule() {
        let cfg = TrainConfig {
            n_channels: 5,
            epochs_per_channel: 1,
            decay_every: 2,
            decay: 0.5,
            learning_rate: 0.01,
            ..mini_config(2)
        };
        let (_, log) = train(&cfg).unwrap();
        let lrs: Vec<f64> = log.iter().map(|e| e.learning_rate).collect();
        assert_eq!(lrs, vec![0.01, 0.01, 0.005, 0.005, 0.0025]);
        assert!(log.iter().all(|e| (0.9..=1.1).contains(&e.alpha)));
    }

    #[test]
    fn miniature_runs_reduce_the_loss() {
        let mut improved = 0;
        for seed in 0..10 {
            let (_, log) = train(&mini_config(seed)).unwrap();
            let head: f64 = log[..5].iter().map(|e| e.mean_loss).sum();
            let tail: f64 = log[log.len() - 5..].iter().map(|e| e.mean_loss).sum();
            if tail < head {
                improved += 1;
            }
        }
        assert!(improved >= 9, "loss fell in only {improved} of 10 runs");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = TrainConfig::default();
        for cfg in [
            TrainConfig {
                alpha_min: 1.0,
                alpha_max: 1.0,
                ..base.clone()
            },
            TrainConfig {
                batch: 1,
                ..base.clone()
            },
            TrainConfig {
                n_bits: 0,
                ..base.clone()
            },
            TrainConfig {
                epochs_per_channel: 0,
                ..base.clone()
            },
        ] {
            assert!(matches!(train(&cfg), Err(ZicError::Config(_))));
        }
    }
}
