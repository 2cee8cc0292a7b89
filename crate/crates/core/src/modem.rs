//! Finite-alphabet baselines: Gray-mapped QAM at both transmitters
//! (Baseline-1) and QAM with a rotation-optimized constellation at Tx2
//! (Baseline-2), detected with joint minimum-distance decoding at Rx1.
//!
//! Labels are bit patterns read as binary numbers, most significant bit first.
//! Every detector breaks ties in favour of the lowest index.

use std::f64::consts::FRAC_PI_2;
use std::io::{self, Write};

use crate::channel::Complex;
use crate::error::{Result, ZicError};

/// Bit pattern carried by one symbol, most significant bit first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitVector(pub Vec<u8>);

impl BitVector {
    pub fn from_label(label: usize, n_bits: usize) -> Self {
        Self((0..n_bits).map(|i| ((label >> (n_bits - 1 - i)) & 1) as u8).collect())
    }

    pub fn label(&self) -> usize {
        self.0.iter().fold(0, |acc, &b| (acc << 1) | usize::from(b))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::fmt::Display for BitVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Number of differing bits between two labels.
pub fn bit_errors(a: usize, b: usize) -> u32 {
    (a ^ b).count_ones()
}

/// Symbol alphabet indexed by bit-pattern label.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex>,
    n_bits: usize,
    avg_power: f64,
}

impl Constellation {
    /// Wraps an explicit point list; `points.len()` must be `2^n_bits`.
    pub fn from_points(points: Vec<Complex>, n_bits: usize) -> Result<Self> {
        if n_bits == 0 || points.len() != 1 << n_bits {
            return Err(ZicError::InvalidArgument(format!(
                "constellation with {} points does not match {n_bits} bits",
                points.len()
            )));
        }
        let avg_power = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len() as f64;
        Ok(Self {
            points,
            n_bits,
            avg_power,
        })
    }

    pub fn points(&self) -> &[Complex] {
        &self.points
    }

    pub fn point(&self, label: usize) -> Complex {
        self.points[label]
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn avg_power(&self) -> f64 {
        self.avg_power
    }

    /// Writes `bits,re,im` rows, one per label.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bits,re,im")?;
        for (label, p) in self.points.iter().enumerate() {
            writeln!(w, "{},{},{}", BitVector::from_label(label, self.n_bits), p.re, p.im)?;
        }
        Ok(())
    }
}

fn gray(m: usize) -> usize {
    m ^ (m >> 1)
}

/// Gray-mapped rectangular QAM with `ceil(n/2)` bits on I and `floor(n/2)` on
/// Q, scaled to mean power `power`. Two bits give QPSK, three give the 4x2
/// rectangular 8-QAM.
pub fn standard_qam(n_bits: usize, power: f64) -> Result<Constellation> {
    if n_bits < 1 || n_bits > 16 {
        return Err(ZicError::InvalidArgument(format!(
            "QAM needs 1..=16 bits per symbol, got {n_bits}"
        )));
    }
    if !(power > 0.0) {
        return Err(ZicError::InvalidArgument(format!("QAM power must be > 0, got {power}")));
    }
    let bits_q = n_bits / 2;
    let bits_i = n_bits - bits_q;
    let levels_i = 1usize << bits_i;
    let levels_q = 1usize << bits_q;
    let pam = |m: usize, levels: usize| (2 * m) as f64 - (levels - 1) as f64;

    let mut points = vec![Complex::new(0.0, 0.0); 1 << n_bits];
    for mi in 0..levels_i {
        for mq in 0..levels_q {
            let label = (gray(mi) << bits_q) | gray(mq);
            points[label] = Complex::new(pam(mi, levels_i), pam(mq, levels_q));
        }
    }
    let raw_power = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len() as f64;
    let scale = (power / raw_power).sqrt();
    Constellation::from_points(points.into_iter().map(|p| p * scale).collect(), n_bits)
}

/// Multiplies every point by `e^{j theta}`.
pub fn rotate(c: &Constellation, theta: f64) -> Constellation {
    let r = Complex::from_polar(1.0, theta);
    Constellation {
        points: c.points.iter().map(|p| p * r).collect(),
        n_bits: c.n_bits,
        avg_power: c.avg_power,
    }
}

/// Minimum distance between composite points `p1 + cross * p2` whose Tx1
/// labels differ.
pub fn composite_min_distance(c1: &Constellation, c2: &Constellation, cross: Complex) -> f64 {
    let composite: Vec<(usize, Complex)> = c1
        .points
        .iter()
        .enumerate()
        .flat_map(|(l1, &p1)| c2.points.iter().map(move |&p2| (l1, p1 + cross * p2)))
        .collect();
    let mut best = f64::INFINITY;
    for (i, &(la, a)) in composite.iter().enumerate() {
        for &(lb, b) in &composite[i + 1..] {
            if la != lb {
                best = best.min((a - b).norm_sqr());
            }
        }
    }
    best.sqrt()
}

/// Rotation of Tx2's constellation that maximizes [`composite_min_distance`]
/// over the grid `k * (pi/2) / grid_steps`, `k = 0..grid_steps`. Ties go to the
/// smallest angle.
pub fn best_rotation(c1: &Constellation, c2: &Constellation, sqrt_alpha: f64, grid_steps: usize) -> Result<f64> {
    if grid_steps < 2 {
        return Err(ZicError::InvalidArgument(format!(
            "rotation search needs at least 2 grid steps, got {grid_steps}"
        )));
    }
    let mut best_theta = 0.0;
    let mut best_obj = f64::NEG_INFINITY;
    for k in 0..grid_steps {
        let theta = k as f64 * FRAC_PI_2 / grid_steps as f64;
        let obj = composite_min_distance(c1, c2, Complex::from_polar(sqrt_alpha, theta));
        if obj > best_obj {
            best_obj = obj;
            best_theta = theta;
        }
    }
    Ok(best_theta)
}

/// Joint minimum-distance detector for the interfered receiver. Hypotheses
/// are the composite points `gain11 * p1 + cross * p2`, enumerated with the
/// Tx1 label as the outer index.
#[derive(Debug, Clone)]
pub struct JointDetector {
    composite: Vec<Complex>,
    m2: usize,
}

impl JointDetector {
    pub fn new(c1: &Constellation, c2: &Constellation, gain11: Complex, cross: Complex) -> Self {
        // Sums are formed once so identical composite points compare exactly
        // equal and the lowest-index rule decides between them.
        let composite = c1
            .points
            .iter()
            .flat_map(|&p1| c2.points.iter().map(move |&p2| gain11 * p1 + cross * p2))
            .collect();
        Self {
            composite,
            m2: c2.len(),
        }
    }

    /// Index of the nearest composite point.
    pub fn detect_joint(&self, y: Complex) -> usize {
        nearest(&self.composite, y)
    }

    /// Tx1 label of the nearest composite point.
    pub fn detect(&self, y: Complex) -> usize {
        self.detect_joint(y) / self.m2
    }
}

/// Nearest-neighbour detector `argmin |y - gain * p|`.
#[derive(Debug, Clone)]
pub struct NearestDetector {
    hypotheses: Vec<Complex>,
}

impl NearestDetector {
    pub fn new(c: &Constellation, gain: Complex) -> Self {
        Self {
            hypotheses: c.points.iter().map(|&p| gain * p).collect(),
        }
    }

    pub fn detect(&self, y: Complex) -> usize {
        nearest(&self.hypotheses, y)
    }
}

fn nearest(points: &[Complex], y: Complex) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, p) in points.iter().enumerate() {
        let d = (y - p).norm_sqr();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Joint detection at Rx1 with unit direct gain, reporting only Tx1's bits.
pub fn detect_rx1(y: Complex, c1: &Constellation, c2: &Constellation, hbar21: Complex) -> BitVector {
    let label = JointDetector::new(c1, c2, Complex::new(1.0, 0.0), hbar21).detect(y);
    BitVector::from_label(label, c1.n_bits)
}

/// Nearest-neighbour detection at Rx2 against `hbar22 * p`.
pub fn detect_rx2(y: Complex, c2: &Constellation, hbar22: Complex) -> BitVector {
    BitVector::from_label(NearestDetector::new(c2, hbar22).detect(y), c2.n_bits)
}
