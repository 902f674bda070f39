use crate::dataman::{AgeGroup, Modality, SampleRecord, Sensor};
use crate::nnet::Tensor;
use crate::par;
use crate::preproc::{
    augment, augment_strip, compute_dataset_stats, standardize, standardize_iris, AugmentPolicy, GrayImage,
    NormStats, NormalizedIris, PreprocError, EYE_HEIGHT, EYE_WIDTH, STRIP_ANGULAR, STRIP_RADIAL,
};

/// One preprocessed sample held as 8-bit intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub subject_id: String,
    pub age: u32,
    pub sensor: Sensor,
    pub pixels: Vec<u8>,
    /// Strip validity mask, iris examples only.
    pub mask: Option<Vec<u8>>,
}

impl Example {
    pub fn from_eye(record: &SampleRecord, image: &GrayImage) -> Self {
        Self {
            id: record.id(),
            subject_id: record.subject_id.clone(),
            age: record.age,
            sensor: record.sensor,
            pixels: image.to_u8(),
            mask: None,
        }
    }

    pub fn from_iris(record: &SampleRecord, iris: &NormalizedIris) -> Self {
        Self {
            mask: Some(iris.mask.clone()),
            ..Self::from_eye(record, &iris.strip)
        }
    }

    pub fn group(&self) -> AgeGroup {
        crate::dataman::assign_age_group(self.age).expect("examples carry in-range ages")
    }
}

/// In-memory examples of a single modality.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub modality: Modality,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(modality: Modality) -> Self {
        Self {
            modality,
            examples: Vec::new(),
        }
    }

    /// `(width, height)` of the stored rasters.
    pub fn raster_size(&self) -> (usize, usize) {
        match self.modality {
            Modality::Eye => (EYE_WIDTH, EYE_HEIGHT),
            Modality::Iris => (STRIP_ANGULAR, STRIP_RADIAL),
        }
    }

    /// Network input shape `[channels, height, width]`.
    pub fn input_shape(&self) -> [usize; 3] {
        let (w, h) = self.raster_size();
        match self.modality {
            Modality::Eye => [1, h, w],
            Modality::Iris => [2, h, w],
        }
    }

    pub fn push(&mut self, example: Example) -> Result<(), PreprocError> {
        let (w, h) = self.raster_size();
        let mask_ok = match (&example.mask, self.modality) {
            (None, Modality::Eye) => true,
            (Some(m), Modality::Iris) => m.len() == w * h,
            _ => false,
        };
        if example.pixels.len() != w * h || !mask_ok {
            return Err(PreprocError::BadImage(format!(
                "{}: example does not match a {w}x{h} {:?} raster",
                example.id, self.modality
            )));
        }
        crate::dataman::assign_age_group(example.age)
            .map_err(|e| PreprocError::BadImage(format!("{}: {e}", example.id)))?;
        self.examples.push(example);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn image(&self, i: usize) -> GrayImage {
        let (w, h) = self.raster_size();
        GrayImage::from_u8(w, h, &self.examples[i].pixels).expect("size checked on push")
    }

    pub fn groups(&self) -> Vec<AgeGroup> {
        self.examples.iter().map(Example::group).collect()
    }

    pub fn ages(&self) -> Vec<f64> {
        self.examples.iter().map(|e| f64::from(e.age)).collect()
    }

    pub fn filter(&self, keep: impl Fn(&Example) -> bool) -> Dataset {
        Dataset {
            modality: self.modality,
            examples: self.examples.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    /// Global intensity statistics over every stored raster.
    pub fn compute_stats(&self) -> Result<NormStats, PreprocError> {
        compute_dataset_stats((0..self.len()).map(|i| self.image(i)))
    }

    /// Standardized `[N, C, H, W]` batch. With `augment`, example `k` of the
    /// batch is augmented with seed `seeds[k]`; iris strips only get blur.
    pub fn batch(
        &self,
        indices: &[usize],
        stats: NormStats,
        augment_with: Option<(&AugmentPolicy, &[u64])>,
    ) -> Result<Tensor, PreprocError> {
        let items = par::map_indices(indices.len(), |k| -> Result<Tensor, PreprocError> {
            let i = indices[k];
            let mut img = self.image(i);
            if let Some((policy, seeds)) = augment_with {
                img = match self.modality {
                    Modality::Eye => augment(&img, policy, seeds[k])?,
                    Modality::Iris => augment_strip(&img, policy, seeds[k])?,
                };
            }
            match &self.examples[i].mask {
                Some(mask) => standardize_iris(
                    &NormalizedIris {
                        strip: img,
                        mask: mask.clone(),
                    },
                    stats,
                ),
                None => standardize(&img, stats),
            }
        });
        let items = items.into_iter().collect::<Result<Vec<_>, _>>()?;
        Tensor::stack(&items).map_err(|e| PreprocError::BadImage(e.to_string()))
    }
}
