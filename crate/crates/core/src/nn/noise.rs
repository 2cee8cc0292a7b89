use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor2;

/// Adds i.i.d. Gaussian noise of the given variance to every entry.
pub fn add_gaussian_noise<R: Rng + ?Sized>(x: &Tensor2, variance: f64, rng: &mut R) -> Tensor2 {
    let sd = variance.max(0.0).sqrt();
    let mut y = x.clone();
    for v in y.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sd * z;
    }
    y
}
