use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::filter::{gaussian_blur, separable};
use super::image::GrayImage;
use super::PreprocError;

/// Randomized training-time transforms, applied in the order flip, affine,
/// blur, sharpness, autocontrast.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub flip_prob: f64,
    pub affine_prob: f64,
    /// Degrees, sampled uniformly in `[-max, max]`.
    pub max_rotation: f64,
    /// Fraction of the image size, per axis.
    pub max_translate: f64,
    pub scale_range: (f64, f64),
    pub blur_prob: f64,
    pub blur_sigma: f64,
    pub sharpness_prob: f64,
    /// Blend factor range; 1 is identity, 0 fully smoothed, 2 doubly sharpened.
    pub sharpness_range: (f64, f64),
    pub autocontrast_prob: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            affine_prob: 0.5,
            max_rotation: 5.0,
            max_translate: 0.03,
            scale_range: (0.98, 1.02),
            blur_prob: 0.2,
            blur_sigma: 1.0,
            sharpness_prob: 0.2,
            sharpness_range: (0.5, 2.0),
            autocontrast_prob: 0.2,
        }
    }
}

impl AugmentPolicy {
    /// A policy that never changes its input.
    pub fn identity() -> Self {
        Self {
            flip_prob: 0.0,
            affine_prob: 0.0,
            blur_prob: 0.0,
            sharpness_prob: 0.0,
            autocontrast_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PreprocError> {
        let probs = [
            ("flip_prob", self.flip_prob),
            ("affine_prob", self.affine_prob),
            ("blur_prob", self.blur_prob),
            ("sharpness_prob", self.sharpness_prob),
            ("autocontrast_prob", self.autocontrast_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(PreprocError::InvalidPolicy(format!("{name} = {p} outside [0, 1]")));
            }
        }
        let ranges = [("scale_range", self.scale_range), ("sharpness_range", self.sharpness_range)];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(PreprocError::InvalidPolicy(format!("{name} = ({lo}, {hi})")));
            }
        }
        if self.scale_range.0 <= 0.0 {
            return Err(PreprocError::InvalidPolicy("scale must be positive".into()));
        }
        if self.max_rotation < 0.0 || self.max_translate < 0.0 || self.blur_sigma < 0.0 {
            return Err(PreprocError::InvalidPolicy("magnitudes must be non-negative".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

pub fn augment(image: &GrayImage, policy: &AugmentPolicy, seed: u64) -> Result<GrayImage, PreprocError> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = image.clone();
    if rng.random_bool(policy.flip_prob) {
        img = img.flip_horizontal();
    }
    if rng.random_bool(policy.affine_prob) {
        let angle = uniform(&mut rng, -policy.max_rotation, policy.max_rotation).to_radians();
        let tx = uniform(&mut rng, -policy.max_translate, policy.max_translate) * img.width() as f64;
        let ty = uniform(&mut rng, -policy.max_translate, policy.max_translate) * img.height() as f64;
        let scale = uniform(&mut rng, policy.scale_range.0, policy.scale_range.1);
        img = affine(&img, angle, scale, (tx, ty));
    }
    if rng.random_bool(policy.blur_prob) {
        img = gaussian_blur(&img, policy.blur_sigma);
    }
    if rng.random_bool(policy.sharpness_prob) {
        let factor = uniform(&mut rng, policy.sharpness_range.0, policy.sharpness_range.1);
        img = sharpness(&img, factor);
    }
    if rng.random_bool(policy.autocontrast_prob) {
        img = autocontrast(&img);
    }
    Ok(img)
}

/// Strip variant: only the blur transform is applied.
pub fn augment_strip(strip: &GrayImage, policy: &AugmentPolicy, seed: u64) -> Result<GrayImage, PreprocError> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(if rng.random_bool(policy.blur_prob) {
        gaussian_blur(strip, policy.blur_sigma)
    } else {
        strip.clone()
    })
}

/// Rotation by `angle` radians and isotropic `scale` about the image centre,
/// followed by a translation. Bilinear resampling with edge padding.
pub fn affine(image: &GrayImage, angle: f64, scale: f64, translate: (f64, f64)) -> GrayImage {
    let cx = (image.width() as f64 - 1.0) / 2.0;
    let cy = (image.height() as f64 - 1.0) / 2.0;
    let (s, c) = angle.sin_cos();
    GrayImage::from_fn(image.width(), image.height(), |x, y| {
        let dx = x as f64 - cx - translate.0;
        let dy = y as f64 - cy - translate.1;
        let u = (c * dx + s * dy) / scale + cx;
        let v = (-s * dx + c * dy) / scale + cy;
        image.sample_clamped(u, v) as f32
    })
}

/// Blends the image with its 3x3 smoothed version: `smooth + f * (img - smooth)`.
pub fn sharpness(image: &GrayImage, factor: f64) -> GrayImage {
    let k = [1.0 / 4.0, 1.0 / 2.0, 1.0 / 4.0];
    let smooth = separable(image, &k);
    let f = factor as f32;
    GrayImage::from_fn(image.width(), image.height(), |x, y| {
        let s = smooth.get(x, y);
        s + f * (image.get(x, y) - s)
    })
}

/// Linear rescale of `[min, max]` to `[0, 1]`; flat images are returned as is.
pub fn autocontrast(image: &GrayImage) -> GrayImage {
    let (lo, hi) = image
        .pixels()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo <= 1e-6 {
        return image.clone();
    }
    image.map(|v| (v - lo) / (hi - lo))
}
