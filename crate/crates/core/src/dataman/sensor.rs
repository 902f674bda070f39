use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::record::Sensor;
use crate::preproc::GrayImage;

pub const SENSOR_B_GAIN: f32 = 1.15;
pub const SENSOR_B_NOISE: f64 = 0.02;

/// Simulated capture device: sensor A is the identity, sensor B brightens,
/// blurs and adds Gaussian noise.
pub fn apply_sensor_model(image: &GrayImage, sensor: Sensor, seed: u64) -> GrayImage {
    apply_sensor_model_with(image, sensor, SENSOR_B_NOISE, seed)
}

pub fn apply_sensor_model_with(image: &GrayImage, sensor: Sensor, noise_sigma: f64, seed: u64) -> GrayImage {
    if sensor == Sensor::SensorA {
        return image.clone();
    }
    let (w, h) = (image.width(), image.height());
    let at = |x: isize, y: isize| {
        image.get(x.clamp(0, w as isize - 1) as usize, y.clamp(0, h as isize - 1) as usize) * SENSOR_B_GAIN
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    GrayImage::from_fn(w, h, |x, y| {
        let mut s = 0.0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                s += at(x as isize + dx, y as isize + dy);
            }
        }
        let n = if noise_sigma > 0.0 { noise.sample(&mut rng) as f32 } else { 0.0 };
        s / 9.0 + n
    })
}
