//! Additive and replacement noise.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::filters::Buf;

/// Gaussian noise standard deviation, as a fraction of full scale.
pub const GAUSSIAN_SIGMA: [f32; 5] = [0.04, 0.06, 0.09, 0.13, 0.18];
/// Photon count at full scale; fewer photons means more shot noise.
pub const SHOT_PHOTONS: [f32; 5] = [200.0, 100.0, 50.0, 25.0, 12.0];
/// Fraction of pixels replaced by salt or pepper.
pub const IMPULSE_AMOUNT: [f32; 5] = [0.01, 0.02, 0.04, 0.07, 0.10];

pub(crate) fn gaussian<R: Rng + ?Sized>(buf: &mut Buf, sigma: f32, rng: &mut R) {
    for v in &mut buf.data {
        let n: f32 = StandardNormal.sample(rng);
        *v += n * sigma * 255.0;
    }
}

pub(crate) fn shot<R: Rng + ?Sized>(buf: &mut Buf, photons: f32, rng: &mut R) {
    for v in &mut buf.data {
        let lambda = (*v / 255.0 * photons) as f64;
        let count = if lambda > 0.0 {
            Poisson::new(lambda).expect("positive rate").sample(rng) as f32
        } else {
            0.0
        };
        *v = count / photons * 255.0;
    }
}

pub(crate) fn impulse<R: Rng + ?Sized>(buf: &mut Buf, amount: f32, rng: &mut R) {
    for v in &mut buf.data {
        if rng.random::<f32>() < amount {
            *v = if rng.random::<bool>() { 255.0 } else { 0.0 };
        }
    }
}
