//! The two power normalizations of the transmitter, plus the receiver-side
//! use of the batch variant.

use super::param::{ParamSlot, Parameterized};
use super::tensor::Tensor2;
use crate::error::{Result, ZicError};

/// Floor on both normalization denominators.
pub const NORM_EPS: f64 = 1e-12;

/// Default momentum of the running mean-square estimate.
pub const DEFAULT_MOMENTUM: f64 = 0.99;

/// Multiplicative batch power normalization, one factor per column.
///
/// In training mode column `c` is scaled by `sqrt(target / ms_c)`, where
/// `ms_c` is its mean square over the batch, so every output column has mean
/// square `target`. There is no centering and no learned affine part. In
/// inference mode the running mean square stands in for the batch statistic.
#[derive(Debug, Clone)]
pub struct BatchPowerNorm {
    momentum: f64,
    target: f64,
    running_ms: Vec<f64>,
    initialized: bool,
    calibration: Option<(Vec<f64>, usize)>,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    x: Tensor2,
    scale: Vec<f64>,
    ms: Vec<f64>,
    floored: Vec<bool>,
}

impl BatchPowerNorm {
    pub fn new(cols: usize, target: f64, momentum: f64) -> Self {
        assert!(momentum > 0.0 && momentum < 1.0, "momentum must lie in (0, 1)");
        assert!(target > 0.0);
        Self {
            momentum,
            target,
            running_ms: vec![1.0; cols],
            initialized: false,
            calibration: None,
            cache: None,
        }
    }

    /// Starts re-estimating the running statistics: until
    /// [`end_calibration`](Self::end_calibration), training-mode passes
    /// accumulate their batch mean squares instead of updating the moving
    /// average.
    pub fn begin_calibration(&mut self) {
        self.calibration = Some((vec![0.0; self.running_ms.len()], 0));
    }

    /// Replaces the running statistics by the mean over the calibration
    /// passes, if there were any.
    pub fn end_calibration(&mut self) {
        if let Some((sum, n)) = self.calibration.take() {
            if n > 0 {
                self.running_ms = sum.iter().map(|s| s / n as f64).collect();
                self.initialized = true;
            }
        }
    }

    pub fn running_mean_square(&self) -> &[f64] {
        &self.running_ms
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    fn check(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.running_ms.len() {
            return Err(ZicError::ShapeMismatch {
                op: "batch_power_norm",
                expected: format!("{} columns", self.running_ms.len()),
                got: format!("{}", x.cols()),
            });
        }
        Ok(())
    }

    fn scaled(x: &Tensor2, scale: &[f64]) -> Tensor2 {
        Tensor2::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) * scale[c])
    }

    /// Inference-mode pass using the running statistics.
    pub fn infer(&self, x: &Tensor2) -> Result<Tensor2> {
        self.check(x)?;
        let scale: Vec<f64> = self
            .running_ms
            .iter()
            .map(|&ms| (self.target / ms.max(NORM_EPS)).sqrt())
            .collect();
        Ok(Self::scaled(x, &scale))
    }

    pub fn forward(&mut self, x: &Tensor2, training: bool) -> Result<Tensor2> {
        if !training {
            return self.infer(x);
        }
        self.check(x)?;
        if x.rows() < 2 {
            return Err(ZicError::InvalidArgument(
                "batch power normalization needs at least 2 rows in training mode".into(),
            ));
        }
        let cols = x.cols();
        let ms: Vec<f64> = (0..cols).map(|c| x.col_mean_square(c)).collect();
        let floored: Vec<bool> = ms.iter().map(|&m| m < NORM_EPS).collect();
        let scale: Vec<f64> = ms.iter().map(|&m| (self.target / m.max(NORM_EPS)).sqrt()).collect();
        if let Some((sum, n)) = &mut self.calibration {
            for (acc, m) in sum.iter_mut().zip(&ms) {
                *acc += m;
            }
            *n += 1;
        } else {
            self.update_running(&ms);
        }
        let y = Self::scaled(x, &scale);
        self.cache = Some(Cache {
            x: x.clone(),
            scale,
            ms,
            floored,
        });
        Ok(y)
    }

    fn update_running(&mut self, ms: &[f64]) {
        for c in 0..ms.len() {
            self.running_ms[c] = if self.initialized {
                self.momentum * self.running_ms[c] + (1.0 - self.momentum) * ms[c]
            } else {
                ms[c]
            };
        }
        self.initialized = true;
    }

    /// Backward pass of a training-mode forward, including the dependence of
    /// each scale factor on the whole batch:
    /// `dx_k = s (g_k - x_k sum_n(g_n x_n) / (N ms))`.
    pub fn backward(&mut self, grad_out: &Tensor2) -> Tensor2 {
        let cache = self.cache.take().expect("batch power norm backward without forward");
        let n = cache.x.rows() as f64;
        let cols = cache.x.cols();
        let mut gx = Tensor2::zeros(cache.x.rows(), cols);
        for c in 0..cols {
            let s = cache.scale[c];
            let dot: f64 = (0..cache.x.rows())
                .map(|r| grad_out.get(r, c) * cache.x.get(r, c))
                .sum();
            let k = if cache.floored[c] { 0.0 } else { dot / (n * cache.ms[c]) };
            for r in 0..cache.x.rows() {
                gx.set(r, c, s * (grad_out.get(r, c) - cache.x.get(r, c) * k));
            }
        }
        gx
    }
}

impl Parameterized for BatchPowerNorm {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamSlot<'_>)) {
        let cols = self.running_ms.len();
        f(ParamSlot {
            name: "running_mean_square",
            shape: (1, cols),
            values: &mut self.running_ms,
            grads: None,
        });
    }
}

/// Scales each row to squared norm `total_power`: `g = sqrt(P) g0 / |g0|`.
#[derive(Debug, Clone)]
pub struct PowerNormLayer {
    total_power: f64,
    cache: Option<(Tensor2, Vec<f64>)>,
}

impl PowerNormLayer {
    pub fn new(total_power: f64) -> Self {
        assert!(total_power > 0.0, "total power must be positive");
        Self {
            total_power,
            cache: None,
        }
    }

    pub fn total_power(&self) -> f64 {
        self.total_power
    }

    fn norms(g0: &Tensor2) -> Vec<f64> {
        (0..g0.rows())
            .map(|r| g0.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS))
            .collect()
    }

    pub fn infer(&self, g0: &Tensor2) -> Tensor2 {
        let norms = Self::norms(g0);
        let root = self.total_power.sqrt();
        Tensor2::from_fn(g0.rows(), g0.cols(), |r, c| root * g0.get(r, c) / norms[r])
    }

    pub fn forward(&mut self, g0: &Tensor2) -> Tensor2 {
        let y = self.infer(g0);
        self.cache = Some((g0.clone(), Self::norms(g0)));
        y
    }

    /// `dg0 = sqrt(P)/|g0| (g - u (u . g))` with `u = g0 / |g0|`.
    pub fn backward(&mut self, grad_out: &Tensor2) -> Tensor2 {
        let (g0, norms) = self.cache.take().expect("power norm backward without forward");
        let root = self.total_power.sqrt();
        let mut gx = Tensor2::zeros(g0.rows(), g0.cols());
        for r in 0..g0.rows() {
            let nrm = norms[r];
            let floored = nrm <= NORM_EPS;
            let dot: f64 = (0..g0.cols()).map(|c| g0.get(r, c) / nrm * grad_out.get(r, c)).sum();
            for c in 0..g0.cols() {
                let u = g0.get(r, c) / nrm;
                let proj = if floored { 0.0 } else { u * dot };
                gx.set(r, c, root / nrm * (grad_out.get(r, c) - proj));
            }
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{relative_error, REL_ERROR_FLOOR};
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn scales_column_with_mean_square_four() {
        let mut bn = BatchPowerNorm::new(2, 1.0, DEFAULT_MOMENTUM);
        let x = Tensor2::new(2, 2, vec![2.0, 1.0, -2.0, -1.0]).unwrap();
        let y = bn.forward(&x, true).unwrap();
        assert_eq!(y.get(0, 0), 1.0);
        assert_eq!(y.get(1, 0), -1.0);
        assert_eq!(y, Tensor2::new(2, 2, vec![1.0, 1.0, -1.0, -1.0]).unwrap());
        assert_eq!(bn.running_mean_square(), &[4.0, 1.0]);
    }

    #[test]
    fn unit_power_input_passes_through() {
        let mut bn = BatchPowerNorm::new(2, 1.0, DEFAULT_MOMENTUM);
        let x = Tensor2::new(4, 2, vec![1.0, -1.0, -1.0, 1.0, 1.0, 1.0, -1.0, -1.0]).unwrap();
        let y = bn.forward(&x, true).unwrap();
        assert!(y.data().iter().zip(x.data()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn training_output_has_unit_mean_square() {
        let mut rng = stream(1, &[]);
        let mut bn = BatchPowerNorm::new(2, 1.0, DEFAULT_MOMENTUM);
        for _ in 0..50 {
            let s: f64 = rng.random_range(0.01..100.0);
            let x = Tensor2::from_fn(33, 2, |_, _| s * rng.random_range(-1.0..1.0));
            let y = bn.forward(&x, true).unwrap();
            for c in 0..2 {
                assert!((y.col_mean_square(c) - 1.0).abs() < 1e-10);
            }
        }
        assert!(bn.running_mean_square().iter().all(|&m| m > 0.0));
    }

    #[test]
    fn zero_power_column_is_floored() {
        let mut bn = BatchPowerNorm::new(2, 1.0, DEFAULT_MOMENTUM);
        let x = Tensor2::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = bn.forward(&x, true).unwrap();
        assert!(y.is_finite());
        assert_eq!(y.get(0, 0), 0.0);
        let g = bn.backward(&Tensor2::new(2, 2, vec![1.0; 4]).unwrap());
        assert!(g.is_finite());
    }

    #[test]
    fn inference_uses_running_statistics() {
        let mut bn = BatchPowerNorm::new(1, 1.0, 0.5);
        bn.forward(&Tensor2::new(2, 1, vec![2.0, 2.0]).unwrap(), true).unwrap();
        bn.forward(&Tensor2::new(2, 1, vec![4.0, 4.0]).unwrap(), true).unwrap();
        // running = 0.5 * 4 + 0.5 * 16 = 10
        assert_eq!(bn.running_mean_square(), &[10.0]);
        let y = bn.infer(&Tensor2::new(1, 1, vec![10f64.sqrt()]).unwrap()).unwrap();
        assert!((y.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn calibration_replaces_the_moving_average() {
        let mut bn = BatchPowerNorm::new(1, 1.0, 0.9);
        bn.forward(&Tensor2::new(2, 1, vec![1.0, 1.0]).unwrap(), true).unwrap();
        bn.begin_calibration();
        bn.forward(&Tensor2::new(2, 1, vec![2.0, 2.0]).unwrap(), true).unwrap();
        bn.forward(&Tensor2::new(2, 1, vec![4.0, 4.0]).unwrap(), true).unwrap();
        assert_eq!(bn.running_mean_square(), &[1.0]);
        bn.end_calibration();
        assert_eq!(bn.running_mean_square(), &[10.0]);
        bn.begin_calibration();
        bn.end_calibration();
        assert_eq!(bn.running_mean_square(), &[10.0]);
    }

    fn probe_weights(rows: usize, cols: usize) -> Tensor2 {
        Tensor2::from_fn(rows, cols, |i, j| ((i * 5 + j * 3) % 7) as f64 * 0.25 - 0.7)
    }

    fn probe_loss(y: &Tensor2, w: &Tensor2) -> f64 {
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn batch_norm_gradient_includes_batch_statistics() {
        let mut rng = stream(2, &[]);
        let x = Tensor2::from_fn(6, 2, |_, _| rng.random_range(-2.0..2.0));
        let w = probe_weights(6, 2);
        let mut bn = BatchPowerNorm::new(2, 0.5, DEFAULT_MOMENTUM);
        bn.forward(&x, true).unwrap();
        let g = bn.backward(&w);
        let h = 1e-5;
        for k in 0..x.data().len() {
            let mut up = x.clone();
            up.data_mut()[k] += h;
            let mut down = x.clone();
            down.data_mut()[k] -= h;
            let lu = probe_loss(&bn.forward(&up, true).unwrap(), &w);
            let ld = probe_loss(&bn.forward(&down, true).unwrap(), &w);
            let numeric = (lu - ld) / (2.0 * h);
            assert!(relative_error(g.data()[k], numeric) < 1e-4, "k={k}");
        }
    }

    #[test]
    fn power_norm_examples() {
        let pn = PowerNormLayer::new(1.0);
        let y = pn.infer(&Tensor2::new(1, 2, vec![3.0, 4.0]).unwrap());
        assert!((y.get(0, 0) - 0.6).abs() < 1e-15 && (y.get(0, 1) - 0.8).abs() < 1e-15);
        let pn = PowerNormLayer::new(2.5);
        let y = pn.infer(&Tensor2::new(1, 2, vec![1.0, 0.0]).unwrap());
        assert_eq!(y.get(0, 0), 2.5f64.sqrt());
        assert_eq!(y.get(0, 1), 0.0);
        let y = pn.infer(&Tensor2::zeros(1, 2));
        assert!(y.is_finite());
    }

    #[test]
    fn power_norm_gradient() {
        let mut rng = stream(3, &[]);
        let mut pn = PowerNormLayer::new(1.7);
        let x = Tensor2::from_fn(3, 2, |_, _| rng.random_range(-2.0..2.0));
        let w = probe_weights(3, 2);
        pn.forward(&x);
        let g = pn.backward(&w);
        let h = 1e-5;
        for k in 0..x.data().len() {
            let mut up = x.clone();
            up.data_mut()[k] += h;
            let mut down = x.clone();
            down.data_mut()[k] -= h;
            let numeric = (probe_loss(&pn.infer(&up), &w) - probe_loss(&pn.infer(&down), &w)) / (2.0 * h);
            assert!(relative_error(g.data()[k], numeric) < 1e-5, "k={k}");
        }
        let _ = REL_ERROR_FLOOR;
    }
}
