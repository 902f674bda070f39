//! Iris and pupil localization by exhaustive circle search on the
//! integro-differential response, plus horizontal eyelid chords.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::filter::{gaussian_blur, gaussian_kernel};
use super::image::GrayImage;
use super::PreprocError;

/// Located pupil and limbus circles with eyelid chords, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrisAnnulus {
    pub pupil_center: (f64, f64),
    pub pupil_radius: f64,
    pub iris_center: (f64, f64),
    pub iris_radius: f64,
    pub upper_lid_y: f64,
    pub lower_lid_y: f64,
}

impl IrisAnnulus {
    /// Checks the geometric invariants against an image of the given size.
    pub fn validate(&self, width: usize, height: usize) -> Result<(), PreprocError> {
        let inside = |(cx, cy): (f64, f64), r: f64| {
            cx - r >= 0.0 && cy - r >= 0.0 && cx + r <= (width - 1) as f64 && cy + r <= (height - 1) as f64
        };
        if !(self.pupil_radius > 0.0 && self.pupil_radius < self.iris_radius) {
            return Err(PreprocError::SegmentationFailure(format!(
                "pupil radius {:.1} not inside iris radius {:.1}",
                self.pupil_radius, self.iris_radius
            )));
        }
        if !inside(self.pupil_center, self.pupil_radius) || !inside(self.iris_center, self.iris_radius) {
            return Err(PreprocError::SegmentationFailure("boundary circle leaves the image".into()));
        }
        if self.upper_lid_y >= self.lower_lid_y {
            return Err(PreprocError::SegmentationFailure("eyelid chords cross".into()));
        }
        Ok(())
    }
}

/// Search ranges and acceptance thresholds, in pixels of the analysed image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationConfig {
    pub pupil_radius_min: f64,
    pub pupil_radius_max: f64,
    pub iris_radius_max: f64,
    /// Maximum offset between the pupil and iris centres.
    pub center_tolerance: f64,
    /// Half-width in degrees of the lateral arcs used for the limbus.
    pub lateral_arc_deg: f64,
    pub coarse_step: usize,
    /// Minimum smoothed radial derivative (intensity per pixel) at the pupil.
    pub pupil_min_response: f64,
    pub iris_min_response: f64,
    /// Candidates for the pupil centre must be within this much of the darkest
    /// blurred intensity.
    pub dark_margin: f64,
    /// The ring just inside the pupil boundary must be within this much of
    /// the darkest blurred intensity.
    pub pupil_inner_margin: f64,
    pub smoothing_sigma: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            pupil_radius_min: 8.0,
            pupil_radius_max: 50.0,
            iris_radius_max: 100.0,
            center_tolerance: 10.0,
            lateral_arc_deg: 35.0,
            coarse_step: 4,
            pupil_min_response: 0.04,
            iris_min_response: 0.02,
            dark_margin: 0.08,
            pupil_inner_margin: 0.15,
            smoothing_sigma: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct CircleFit {
    cx: f64,
    cy: f64,
    r: f64,
    response: f64,
}

/// Unit direction vectors evenly spread over angular arcs.
fn directions(arcs: &[(f64, f64)], samples: usize) -> Vec<(f64, f64)> {
    arcs.iter()
        .flat_map(|&(a0, a1)| {
            (0..samples).map(move |k| {
                let t = a0 + (a1 - a0) * (k as f64 + 0.5) / samples as f64;
                (t.cos(), t.sin())
            })
        })
        .collect()
}

fn ring_mean(img: &GrayImage, cx: f64, cy: f64, r: f64, dirs: &[(f64, f64)]) -> f64 {
    dirs.iter()
        .map(|&(c, s)| img.sample_clamped(cx + r * c, cy + r * s))
        .sum::<f64>()
        / dirs.len() as f64
}

/// Best Gaussian-smoothed positive radial derivative of the ring mean for one
/// centre over `radii`. When `inner_max` is set, radii whose inner ring is
/// brighter than it are skipped.
fn best_radius(
    img: &GrayImage,
    (cx, cy): (f64, f64),
    radii: &[f64],
    dirs: &[(f64, f64)],
    smooth: &[f64],
    inner_max: Option<f64>,
) -> Option<(f64, f64)> {
    if radii.len() < 3 {
        return None;
    }
    let means: Vec<f64> = radii.iter().map(|&r| ring_mean(img, cx, cy, r, dirs)).collect();
    let step = radii[1] - radii[0];
    let deriv: Vec<f64> = (1..means.len() - 1)
        .map(|k| (means[k + 1] - means[k - 1]) / (2.0 * step))
        .collect();
    let half = (smooth.len() / 2) as isize;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..deriv.len() {
        if inner_max.is_some_and(|m| means[k] > m) {
            continue;
        }
        let v: f64 = smooth
            .iter()
            .enumerate()
            .map(|(j, &w)| {
                let idx = (k as isize + j as isize - half).clamp(0, deriv.len() as isize - 1) as usize;
                w * deriv[idx]
            })
            .sum();
        if best.is_none_or(|(b, _)| v > b) {
            best = Some((v, radii[k + 1]));
        }
    }
    best
}

fn radii(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).floor() as usize + 1;
    (0..n).map(|i| lo + i as f64 * step).collect()
}

fn search(
    img: &GrayImage,
    centers: &[(f64, f64)],
    radius_for: &dyn Fn(f64, f64) -> Vec<f64>,
    dirs: &[(f64, f64)],
    smooth: &[f64],
    inner_max: Option<f64>,
) -> Option<CircleFit> {
    let mut best: Option<CircleFit> = None;
    for &(cx, cy) in centers {
        let rs = radius_for(cx, cy);
        if let Some((response, r)) = best_radius(img, (cx, cy), &rs, dirs, smooth, inner_max) {
            if best.is_none_or(|b| response > b.response) {
                best = Some(CircleFit { cx, cy, r, response });
            }
        }
    }
    best
}

fn grid(cx: f64, cy: f64, half: f64, step: f64) -> Vec<(f64, f64)> {
    let n = (half / step).floor() as isize;
    let mut v = Vec::new();
    for dy in -n..=n {
        for dx in -n..=n {
            v.push((cx + dx as f64 * step, cy + dy as f64 * step));
        }
    }
    v
}

pub fn locate_boundaries(image: &GrayImage) -> Result<IrisAnnulus, PreprocError> {
    locate_boundaries_with(image, &SegmentationConfig::default())
}

pub fn locate_boundaries_with(image: &GrayImage, cfg: &SegmentationConfig) -> Result<IrisAnnulus, PreprocError> {
    let (w, h) = (image.width(), image.height());
    let img = gaussian_blur(image, cfg.smoothing_sigma);
    let smooth = gaussian_kernel(1.0);
    let full = [(0.0, 2.0 * PI)];
    let ring48 = directions(&full, 48);
    let ring96 = directions(&full, 96);

    // Pupil: coarse candidates restricted to the darkest blurred region.
    let dark = gaussian_blur(image, 3.0);
    let margin = cfg.pupil_radius_min.ceil() as usize + 2;
    let step = cfg.coarse_step.max(1);
    let mut darkest = f32::INFINITY;
    for y in (margin..h.saturating_sub(margin)).step_by(step) {
        for x in (margin..w.saturating_sub(margin)).step_by(step) {
            darkest = darkest.min(dark.get(x, y));
        }
    }
    let mut centers = Vec::new();
    for y in (margin..h.saturating_sub(margin)).step_by(step) {
        for x in (margin..w.saturating_sub(margin)).step_by(step) {
            if f64::from(dark.get(x, y)) <= f64::from(darkest) + cfg.dark_margin {
                centers.push((x as f64, y as f64));
            }
        }
    }
    if centers.is_empty() {
        return Err(PreprocError::SegmentationFailure("no pupil candidates".into()));
    }
    let pupil_radii = |cx: f64, cy: f64| {
        let room = cx.min(cy).min((w - 1) as f64 - cx).min((h - 1) as f64 - cy) - 1.0;
        radii(cfg.pupil_radius_min, cfg.pupil_radius_max.min(room), 1.0)
    };
    let inner_max = Some(f64::from(darkest) + cfg.pupil_inner_margin);
    let coarse = search(&img, &centers, &pupil_radii, &ring48, &smooth, inner_max)
        .ok_or_else(|| PreprocError::SegmentationFailure("pupil search found no circle".into()))?;
    let fine_radii = |cx: f64, cy: f64| {
        let room = cx.min(cy).min((w - 1) as f64 - cx).min((h - 1) as f64 - cy) - 1.0;
        radii((coarse.r - 4.0).max(cfg.pupil_radius_min), (coarse.r + 4.0).min(room), 0.5)
    };
    let pupil = search(
        &img,
        &grid(coarse.cx, coarse.cy, step as f64, 1.0),
        &fine_radii,
        &ring96,
        &smooth,
        inner_max,
    )
    .unwrap_or(coarse);
    if pupil.response < cfg.pupil_min_response {
        return Err(PreprocError::SegmentationFailure(format!(
            "pupil response {:.4} below threshold {:.4}",
            pupil.response, cfg.pupil_min_response
        )));
    }

    // Limbus: lateral arcs only, centre near the pupil centre.
    let a = cfg.lateral_arc_deg.to_radians();
    let lateral = [(-a, a), (PI - a, PI + a)];
    let arcs32 = directions(&lateral, 32);
    let arcs64 = directions(&lateral, 64);
    let iris_lo = (pupil.r * 1.25).max(pupil.r + 4.0);
    let iris_radii = |cx: f64, _cy: f64| {
        let room = cx.min((w - 1) as f64 - cx) - 1.0;
        radii(iris_lo, cfg.iris_radius_max.min(room), 1.0)
    };
    let coarse_iris = search(
        &img,
        &grid(pupil.cx, pupil.cy, cfg.center_tolerance, 2.0),
        &iris_radii,
        &arcs32,
        &smooth,
        None,
    )
    .ok_or_else(|| PreprocError::SegmentationFailure("iris search found no circle".into()))?;
    let fine_iris_radii = |cx: f64, _cy: f64| {
        let room = cx.min((w - 1) as f64 - cx) - 1.0;
        radii((coarse_iris.r - 3.0).max(iris_lo), (coarse_iris.r + 3.0).min(room), 0.5)
    };
    let near: Vec<(f64, f64)> = grid(coarse_iris.cx, coarse_iris.cy, 2.0, 1.0)
        .into_iter()
        .filter(|&(x, y)| (x - pupil.cx).abs() <= cfg.center_tolerance && (y - pupil.cy).abs() <= cfg.center_tolerance)
        .collect();
    let iris = search(&img, &near, &fine_iris_radii, &arcs64, &smooth, None).unwrap_or(coarse_iris);
    if iris.response < cfg.iris_min_response {
        return Err(PreprocError::SegmentationFailure(format!(
            "iris response {:.4} below threshold {:.4}",
            iris.response, cfg.iris_min_response
        )));
    }

    let (upper, lower) = eyelid_chords(&img, &pupil, &iris);
    let annulus = IrisAnnulus {
        pupil_center: (pupil.cx, pupil.cy),
        pupil_radius: pupil.r,
        iris_center: (iris.cx, iris.cy),
        iris_radius: iris.r,
        upper_lid_y: upper,
        lower_lid_y: lower,
    };
    annulus.validate(w, h)?;
    Ok(annulus)
}

/// Rows of steepest vertical intensity change across the central iris column
/// band: bright-to-dark above the pupil and dark-to-bright below it.
fn eyelid_chords(img: &GrayImage, pupil: &CircleFit, iris: &CircleFit) -> (f64, f64) {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let x0 = ((iris.cx - iris.r / 2.0).round() as isize).clamp(0, w - 1);
    let x1 = ((iris.cx + iris.r / 2.0).round() as isize).clamp(0, w - 1);
    let row_mean = |y: isize| -> f64 {
        let y = y.clamp(0, h - 1) as usize;
        (x0..=x1).map(|x| f64::from(img.get(x as usize, y))).sum::<f64>() / (x1 - x0 + 1) as f64
    };
    let grad = |y: isize| row_mean(y + 1) - row_mean(y - 1);

    let top = ((iris.cy - iris.r).floor() as isize - 3).max(1);
    let above_pupil = (pupil.cy - pupil.r).floor() as isize - 3;
    let upper = (top..=above_pupil.max(top))
        .min_by(|&a, &b| grad(a).total_cmp(&grad(b)))
        .unwrap_or(top);

    let below_pupil = (pupil.cy + pupil.r).ceil() as isize + 3;
    let bottom = ((iris.cy + iris.r).ceil() as isize + 3).min(h - 2);
    let lower = (below_pupil.min(bottom)..=bottom)
        .max_by(|&a, &b| grad(a).total_cmp(&grad(b)).then(b.cmp(&a)))
        .unwrap_or(bottom);
    (upper as f64, lower as f64)
}
