use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use super::boundary::IrisAnnulus;
use super::image::GrayImage;
use super::PreprocError;

pub const STRIP_ANGULAR: usize = 256;
pub const STRIP_RADIAL: usize = 32;

/// Rubber-sheet unwrapped iris: `width = 256` angular samples by
/// `height = 32` radial samples, with a matching validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedIris {
    pub strip: GrayImage,
    /// 1 where the sample lies on visible iris inside the image, else 0.
    pub mask: Vec<u8>,
}

impl NormalizedIris {
    pub fn mask_at(&self, angular: usize, radial: usize) -> u8 {
        self.mask[radial * STRIP_ANGULAR + angular]
    }

    pub fn mask_image(&self) -> GrayImage {
        GrayImage::from_fn(STRIP_ANGULAR, STRIP_RADIAL, |x, y| f32::from(self.mask_at(x, y)))
    }

    pub fn valid_fraction(&self) -> f64 {
        self.mask.iter().map(|&m| f64::from(m)).sum::<f64>() / self.mask.len() as f64
    }
}

/// Image coordinate sampled for angular index `i` and radial index `j`.
#[inline]
pub fn sample_point(a: &IrisAnnulus, i: usize, j: usize) -> (f64, f64) {
    let theta = 2.0 * PI * i as f64 / STRIP_ANGULAR as f64;
    let rho = (j as f64 + 0.5) / STRIP_RADIAL as f64;
    let (c, s) = (theta.cos(), theta.sin());
    let px = a.pupil_center.0 + a.pupil_radius * c;
    let py = a.pupil_center.1 + a.pupil_radius * s;
    let ix = a.iris_center.0 + a.iris_radius * c;
    let iy = a.iris_center.1 + a.iris_radius * s;
    ((1.0 - rho) * px + rho * ix, (1.0 - rho) * py + rho * iy)
}

/// Unwraps the annulus between the pupil and limbus circles.
pub fn rubber_sheet(image: &GrayImage, annulus: &IrisAnnulus) -> NormalizedIris {
    let mut strip = Vec::with_capacity(STRIP_ANGULAR * STRIP_RADIAL);
    let mut mask = Vec::with_capacity(STRIP_ANGULAR * STRIP_RADIAL);
    for j in 0..STRIP_RADIAL {
        for i in 0..STRIP_ANGULAR {
            let (x, y) = sample_point(annulus, i, j);
            match image.sample(x, y) {
                Some(v) => {
                    strip.push(v as f32);
                    let occluded = y < annulus.upper_lid_y || y > annulus.lower_lid_y;
                    mask.push(u8::from(!occluded));
                }
                None => {
                    strip.push(0.0);
                    mask.push(0);
                }
            }
        }
    }
    NormalizedIris {
        strip: GrayImage::new(STRIP_ANGULAR, STRIP_RADIAL, strip).expect("sampled values lie in [0, 1]"),
        mask,
    }
}

fn strip_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}_strip.png")), dir.join(format!("{id}_mask.png")))
}

/// Writes `<id>_strip.png` and `<id>_mask.png` (mask stored as 0/255).
pub fn save_strip(dir: &Path, id: &str, iris: &NormalizedIris) -> Result<(), PreprocError> {
    let (s, m) = strip_paths(dir, id);
    iris.strip.save_png(&s)?;
    iris.mask_image().save_png(&m)
}

pub fn load_strip(dir: &Path, id: &str) -> Result<NormalizedIris, PreprocError> {
    let (s, m) = strip_paths(dir, id);
    let strip = GrayImage::load_png(&s)?;
    let mask_img = GrayImage::load_png(&m)?;
    let expected = (STRIP_ANGULAR, STRIP_RADIAL);
    if (strip.width(), strip.height()) != expected || (mask_img.width(), mask_img.height()) != expected {
        return Err(PreprocError::BadImage(format!("{id}: cached strip is not 256x32")));
    }
    let mask = mask_img.pixels().iter().map(|&v| u8::from(v >= 0.5)).collect();
    Ok(NormalizedIris { strip, mask })
}
