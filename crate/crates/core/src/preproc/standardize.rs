use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use super::rubber_sheet::{NormalizedIris, STRIP_ANGULAR, STRIP_RADIAL};
use super::PreprocError;
use crate::nnet::Tensor;

/// Global intensity mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub const EYE: NormStats = NormStats {
        mean: 0.5187,
        std: 0.2505,
    };
    pub const IRIS: NormStats = NormStats {
        mean: 0.2103,
        std: 0.0879,
    };

    pub fn check(&self) -> Result<(), PreprocError> {
        if self.std > 0.0 && self.std.is_finite() && self.mean.is_finite() {
            Ok(())
        } else {
            Err(PreprocError::ZeroStd)
        }
    }
}

pub fn compute_dataset_stats<I>(images: I) -> Result<NormStats, PreprocError>
where
    I: IntoIterator,
    I::Item: Borrow<GrayImage>,
{
    let mut n = 0u64;
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for img in images {
        let img = img.borrow();
        for &v in img.pixels() {
            let v = f64::from(v);
            sum += v;
            sum_sq += v * v;
        }
        n += img.pixels().len() as u64;
    }
    if n == 0 {
        return Err(PreprocError::EmptyDataset);
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    Ok(NormStats { mean, std: var.sqrt() })
}

/// `(x - mean) / std` as a `[1, H, W]` tensor.
pub fn standardize(image: &GrayImage, stats: NormStats) -> Result<Tensor, PreprocError> {
    stats.check()?;
    let data = image
        .pixels()
        .iter()
        .map(|&v| ((f64::from(v) - stats.mean) / stats.std) as f32)
        .collect();
    Ok(Tensor::new(vec![1, image.height(), image.width()], data).expect("pixel count matches"))
}

/// Two-channel `[2, 32, 256]` tensor: standardized strip, then the raw mask.
pub fn standardize_iris(iris: &NormalizedIris, stats: NormStats) -> Result<Tensor, PreprocError> {
    let strip = standardize(&iris.strip, stats)?;
    let mut data = strip.into_data();
    data.extend(iris.mask.iter().map(|&m| f32::from(m)));
    Ok(Tensor::new(vec![2, STRIP_RADIAL, STRIP_ANGULAR], data).expect("strip and mask sizes match"))
}

/// Inverse of [`standardize`] on raw values.
pub fn unstandardize(values: &[f32], stats: NormStats) -> Result<Vec<f64>, PreprocError> {
    stats.check()?;
    Ok(values.iter().map(|&z| f64::from(z) * stats.std + stats.mean).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_constant_image() {
        let s = compute_dataset_stats([&GrayImage::filled(4, 4, 0.5)]).unwrap();
        assert_eq!((s.mean, s.std), (0.5, 0.0));
    }

    #[test]
    fn stats_of_black_and_white() {
        let a = GrayImage::filled(3, 3, 0.0);
        let b = GrayImage::filled(3, 3, 1.0);
        let s = compute_dataset_stats([&a, &b]).unwrap();
        assert_eq!((s.mean, s.std), (0.5, 0.5));
    }

    #[test]
    fn empty_dataset() {
        assert_eq!(compute_dataset_stats(Vec::<GrayImage>::new()), Err(PreprocError::EmptyDataset));
    }

    #[test]
    fn eye_preset_mean_maps_to_zero() {
        let img = GrayImage::filled(1, 1, 0.5187);
        let t = standardize(&img, NormStats::EYE).unwrap();
        assert!(t.data()[0].abs() < 1e-6);
        let img = GrayImage::filled(1, 1, (0.5187 + 0.2505) as f32);
        assert!((standardize(&img, NormStats::EYE).unwrap().data()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_std_rejected() {
        let img = GrayImage::filled(1, 1, 0.5);
        let s = NormStats { mean: 0.5, std: 0.0 };
        assert_eq!(standardize(&img, s), Err(PreprocError::ZeroStd));
    }

    #[test]
    fn mask_channel_is_raw() {
        let iris = NormalizedIris {
            strip: GrayImage::filled(STRIP_ANGULAR, STRIP_RADIAL, 0.3),
            mask: vec![1; STRIP_ANGULAR * STRIP_RADIAL],
        };
        let t = standardize_iris(&iris, NormStats::IRIS).unwrap();
        assert_eq!(t.shape(), &[2, 32, 256]);
        assert!(t.data()[STRIP_ANGULAR * STRIP_RADIAL..].iter().all(|&v| v == 1.0));
    }
}
