//! Procedural NIR eye renderer with age-dependent anatomy.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::age::{MAX_AGE, MIN_AGE};
use super::record::{EyeSide, Modality, SampleRecord, Sensor};
use super::DataError;
use crate::par;
use crate::preproc::GrayImage;

/// Reference width that all anatomical constants are expressed in.
const REF_WIDTH: f64 = 640.0;
const PUPIL_LEVEL: f64 = 0.06;
const SCLERA_LEVEL: f64 = 0.75;
const NOISE_SIGMA: f64 = 0.01;
const TEXTURE_HARMONICS: [f64; 4] = [1.0, 1.45, 1.9, 2.6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub subject_count: usize,
    pub sessions_per_subject: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub age_range: (u32, u32),
    /// 0 removes every age cue; 1 gives the full anatomical trend.
    pub cue_strength: f64,
    pub seed: u64,
    /// Render left and right eyes per session, otherwise left only.
    pub both_eyes: bool,
    /// Probability that a session is captured with sensor B.
    pub sensor_b_fraction: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            subject_count: 120,
            sessions_per_subject: 8,
            image_width: 640,
            image_height: 480,
            age_range: (MIN_AGE, MAX_AGE),
            cue_strength: 1.0,
            seed: 42,
            both_eyes: true,
            sensor_b_fraction: 0.25,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidParams(m.into()));
        if self.subject_count < 1 {
            return bad("subject_count must be at least 1");
        }
        if self.sessions_per_subject < 1 {
            return bad("sessions_per_subject must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.cue_strength) {
            return bad("cue_strength must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.sensor_b_fraction) {
            return bad("sensor_b_fraction must lie in [0, 1]");
        }
        let (lo, hi) = self.age_range;
        if lo < MIN_AGE || hi > MAX_AGE || lo > hi {
            return bad("age_range must lie within 4..=16");
        }
        if self.image_width < 64 || self.image_height < 48 {
            return bad("image must be at least 64x48");
        }
        Ok(())
    }

    pub fn images_per_session(&self) -> usize {
        if self.both_eyes {
            2
        } else {
            1
        }
    }
}

/// Ground-truth boundaries of a rendered eye, in image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EyeGeometry {
    pub pupil_center: (f64, f64),
    pub pupil_radius: f64,
    pub iris_center: (f64, f64),
    pub iris_radius: f64,
    pub upper_lid_y: f64,
    pub lower_lid_y: f64,
}

impl EyeGeometry {
    /// Geometry after resizing the image by `factor` with pixel-centre alignment.
    pub fn scaled(&self, factor: f64) -> Self {
        let p = |v: f64| (v + 0.5) * factor - 0.5;
        Self {
            pupil_center: (p(self.pupil_center.0), p(self.pupil_center.1)),
            pupil_radius: self.pupil_radius * factor,
            iris_center: (p(self.iris_center.0), p(self.iris_center.1)),
            iris_radius: self.iris_radius * factor,
            upper_lid_y: p(self.upper_lid_y),
            lower_lid_y: p(self.lower_lid_y),
        }
    }
}

/// Everything needed to render one image; rendering itself is deterministic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EyeSpec {
    pub record: SampleRecord,
    pub geometry: EyeGeometry,
    pub width: usize,
    pub height: usize,
    /// Eyelid parabolas `y = apex + curvature * (x - lid_x)^2`.
    pub lid_x: f64,
    pub upper_apex: f64,
    pub upper_curvature: f64,
    pub lower_apex: f64,
    pub lower_curvature: f64,
    pub skin: f64,
    pub texture_base: f64,
    pub texture_amp: f64,
    pub frequencies: [f64; 4],
    pub phases: [f64; 4],
    pub weights: [f64; 4],
    pub radial_freq: [f64; 4],
    pub radial_phase: [f64; 4],
    pub noise_seed: u64,
}

struct EyeTraits {
    offset: (f64, f64),
    lid_shift: f64,
    phases: [f64; 4],
    weights: [f64; 4],
    radial_freq: [f64; 4],
    radial_phase: [f64; 4],
}

fn draw_eye_traits(rng: &mut ChaCha8Rng) -> EyeTraits {
    let n20 = Normal::new(0.0, 20.0).expect("sigma");
    let n12 = Normal::new(0.0, 12.0).expect("sigma");
    EyeTraits {
        offset: (n20.sample(rng), n12.sample(rng)),
        lid_shift: rng.random_range(-8.0..8.0),
        phases: std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI)),
        weights: std::array::from_fn(|_| rng.random_range(0.6..1.0)),
        radial_freq: std::array::from_fn(|_| rng.random_range(1.0..3.0)),
        radial_phase: std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI)),
    }
}

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    Normal::new(0.0, sigma).expect("sigma").sample(rng)
}

/// Decides the metadata and anatomy of every image without rendering.
pub fn plan(params: &SynthParams) -> Result<Vec<EyeSpec>, DataError> {
    params.validate()?;
    let k = params.image_width as f64 / REF_WIDTH;
    let (w, h) = (params.image_width as f64, params.image_height as f64);
    let (lo, hi) = params.age_range;
    let c = params.cue_strength;
    let sessions = params.sessions_per_subject;
    let span = (sessions as u32 - 1).min(hi - lo);
    let sides: &[EyeSide] = if params.both_eyes {
        &[EyeSide::Left, EyeSide::Right]
    } else {
        &[EyeSide::Left]
    };

    let mut specs = Vec::with_capacity(params.subject_count * sessions * sides.len());
    for subj in 0..params.subject_count {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(subj as u64 + 1);
        let subject_id = format!("S{subj:04}");
        let start = rng.random_range(lo..=hi - span);
        let first_year = 2012 + rng.random_range(0..4);
        let birth_year = first_year - start as i32;
        let radius_jitter = normal(&mut rng, 4.0);
        let aperture_jitter = normal(&mut rng, 0.03);
        let freq_jitter = normal(&mut rng, 2.5);
        let skin = rng.random_range(0.50..0.58);
        let texture_base = rng.random_range(0.30..0.36);
        let texture_amp = rng.random_range(0.08..0.12);
        let traits: Vec<EyeTraits> = sides.iter().map(|_| draw_eye_traits(&mut rng)).collect();

        for s in 0..sessions {
            let age = start
                + if sessions > 1 {
                    (s as u32 * span) / (sessions as u32 - 1)
                } else {
                    0
                };
            let t = f64::from(age - MIN_AGE) / f64::from(MAX_AGE - MIN_AGE);
            let sensor = if rng.random_bool(params.sensor_b_fraction) {
                Sensor::SensorB
            } else {
                Sensor::SensorA
            };
            let dilation = rng.random_range(0.30..0.45);
            let session_scale = normal(&mut rng, 1.5);
            let session_aperture = normal(&mut rng, 0.02);
            let gaze = (normal(&mut rng, 4.0), normal(&mut rng, 3.0));

            for (side, tr) in sides.iter().zip(&traits) {
                let iris_r = k * (110.0 + c * (t - 0.5) * 40.0 + radius_jitter + session_scale);
                let pupil_r = dilation * iris_r;
                let margin = iris_r + 30.0 * k;
                let cx = (w / 2.0 + k * (tr.offset.0 + gaze.0)).clamp(margin, w - margin);
                let cy = (h / 2.0 + k * (tr.offset.1 + gaze.1)).clamp(margin, h - margin);
                let icx = cx + k * normal(&mut rng, 1.5).clamp(-4.0, 4.0);
                let icy = cy + k * normal(&mut rng, 1.5).clamp(-4.0, 4.0);

                let aperture = 0.78 + c * (t - 0.5) * 0.3 + aperture_jitter + session_aperture;
                let lower_open = 0.9 + c * (t - 0.5) * 0.15 + aperture_jitter / 2.0;
                let side_sign = if *side == EyeSide::Left { 1.0 } else { -1.0 };
                let lid_x = icx + side_sign * k * tr.lid_shift;
                let corner = 2.3 * iris_r;
                let upper_apex = icy - aperture * iris_r;
                let lower_apex = icy + lower_open * iris_r;
                let corner_y = icy + 0.1 * iris_r;
                let upper_curvature = (corner_y - upper_apex) / (corner * corner);
                let lower_curvature = (corner_y - lower_apex) / (corner * corner);
                let lid = |apex: f64, curv: f64| apex + curv * (icx - lid_x).powi(2);

                let f0 = 10.0 + c * t * 16.0 + freq_jitter;
                let record = SampleRecord::new(
                    subject_id.clone(),
                    birth_year,
                    birth_year + age as i32,
                    sensor,
                    *side,
                    Modality::Eye,
                    format!("images/{subject_id}_{s:02}_{}.png", side.code()),
                )
                .expect("planned ages lie in the study range");
                specs.push(EyeSpec {
                    record,
                    geometry: EyeGeometry {
                        pupil_center: (cx, cy),
                        pupil_radius: pupil_r,
                        iris_center: (icx, icy),
                        iris_radius: iris_r,
                        upper_lid_y: lid(upper_apex, upper_curvature),
                        lower_lid_y: lid(lower_apex, lower_curvature),
                    },
                    width: params.image_width,
                    height: params.image_height,
                    lid_x,
                    upper_apex,
                    upper_curvature,
                    lower_apex,
                    lower_curvature,
                    skin,
                    texture_base,
                    texture_amp,
                    frequencies: TEXTURE_HARMONICS.map(|m| (f0 * m).round().max(1.0)),
                    phases: tr.phases,
                    weights: tr.weights,
                    radial_freq: tr.radial_freq,
                    radial_phase: tr.radial_phase,
                    noise_seed: rng.random(),
                });
            }
        }
    }
    Ok(specs)
}

fn coverage(v: f64) -> f64 {
    (v + 0.5).clamp(0.0, 1.0)
}

pub fn render(spec: &EyeSpec) -> GrayImage {
    let g = &spec.geometry;
    let (w, h) = (spec.width, spec.height);
    let corner = 2.3 * g.iris_radius;
    let weight_sum: f64 = spec.weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("sigma");
    GrayImage::from_fn(w, h, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let skin = spec.skin + 0.04 * (yf / h as f64 - 0.5);
        let dx_lid = xf - spec.lid_x;
        let upper = spec.upper_apex + spec.upper_curvature * dx_lid * dx_lid;
        let lower = spec.lower_apex + spec.lower_curvature * dx_lid * dx_lid;
        let open = coverage(yf - upper).min(coverage(lower - yf));

        let mut v = skin;
        if open > 0.0 {
            let mut inner = SCLERA_LEVEL * (1.0 - 0.15 * (dx_lid / corner).powi(2).min(1.0));
            let (ix, iy) = (xf - g.iris_center.0, yf - g.iris_center.1);
            let di = (ix * ix + iy * iy).sqrt();
            let cov_iris = coverage(g.iris_radius - di);
            if cov_iris > 0.0 {
                let theta = iy.atan2(ix);
                let rho = ((di - g.pupil_radius) / (g.iris_radius - g.pupil_radius)).clamp(0.0, 1.0);
                let mut tex = 0.0;
                for k in 0..4 {
                    let radial = 0.6 + 0.4 * (2.0 * PI * spec.radial_freq[k] * rho + spec.radial_phase[k]).cos();
                    tex += spec.weights[k] * (spec.frequencies[k] * theta + spec.phases[k]).sin() * radial;
                }
                let iris = spec.texture_base * (1.0 - 0.12 * rho) + spec.texture_amp * tex / weight_sum;
                inner += (iris - inner) * cov_iris;
            }
            let (px, py) = (xf - g.pupil_center.0, yf - g.pupil_center.1);
            let cov_pupil = coverage(g.pupil_radius - (px * px + py * py).sqrt());
            if cov_pupil > 0.0 {
                inner += (PUPIL_LEVEL - inner) * cov_pupil;
            }
            v += (inner - v) * open;
        }
        (v + noise.sample(&mut rng)) as f32
    })
}

/// Renders every planned image. Holds all images in memory; large datasets
/// should iterate over [`plan`] and [`render`] instead.
pub fn synth_generate(params: &SynthParams) -> Result<(Vec<GrayImage>, Vec<SampleRecord>), DataError> {
    let specs = plan(params)?;
    let images = par::map_slice(&specs, render);
    Ok((images, specs.into_iter().map(|s| s.record).collect()))
}
