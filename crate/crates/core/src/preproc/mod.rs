//! Image preparation: resizing, boundary localization, rubber-sheet
//! normalization, augmentation and standardization.

pub mod augment;
pub mod boundary;
pub mod filter;
pub mod image;
pub mod rubber_sheet;
pub mod standardize;

pub use augment::{augment, augment_strip, AugmentPolicy};
pub use boundary::{locate_boundaries, locate_boundaries_with, IrisAnnulus, SegmentationConfig};
pub use image::{resize, GrayImage};
pub use rubber_sheet::{load_strip, rubber_sheet, sample_point, save_strip, NormalizedIris, STRIP_ANGULAR, STRIP_RADIAL};
pub use standardize::{compute_dataset_stats, standardize, standardize_iris, unstandardize, NormStats};

/// Working resolution of eye images.
pub const EYE_WIDTH: usize = 320;
pub const EYE_HEIGHT: usize = 240;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PreprocError {
    #[error("bad image: {0}")]
    BadImage(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("segmentation failure: {0}")]
    SegmentationFailure(String),
    #[error("dataset statistics need at least one image")]
    EmptyDataset,
    #[error("standard deviation must be positive")]
    ZeroStd,
    #[error("invalid augmentation policy: {0}")]
    InvalidPolicy(String),
}

/// Brings a captured frame to the working eye resolution.
pub fn prepare_eye(frame: &GrayImage) -> GrayImage {
    resize(frame, EYE_WIDTH, EYE_HEIGHT)
}

/// Localizes the iris in a working-resolution eye image and unwraps it.
pub fn prepare_iris(eye: &GrayImage, cfg: &SegmentationConfig) -> Result<NormalizedIris, PreprocError> {
    let annulus = locate_boundaries_with(eye, cfg)?;
    Ok(rubber_sheet(eye, &annulus))
}
