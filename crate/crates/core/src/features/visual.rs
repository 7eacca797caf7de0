use std::path::Path;

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::dataset::{CameraId, ImageRef};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualFeature {
    pub camera: CameraId,
    pub vector: Vec<f32>,
}

/// An image backbone. Implementations must be pure: the same image always
/// yields the same vector, and no state is shared between calls.
pub trait VisualExtractor: Send + Sync {
    /// Identity recorded in feature stores.
    fn id(&self) -> String;
    /// Declared output length.
    fn dim(&self) -> usize;
    fn extract_image(&self, image: &DynamicImage) -> Vec<f32>;
}

/// Desk-scale stand-in for a pretrained backbone: the mean of each RGB
/// channel in `[0, 1]`, tiled to the declared dimension.
#[derive(Debug, Clone, Copy)]
pub struct MeanPixelExtractor {
    pub dim: usize,
}

impl VisualExtractor for MeanPixelExtractor {
    fn id(&self) -> String {
        format!("mean-pixel-{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn extract_image(&self, image: &DynamicImage) -> Vec<f32> {
        let rgb = image.to_rgb8();
        let n = (rgb.width() as f64 * rgb.height() as f64).max(1.0);
        let mut sums = [0f64; 3];
        for px in rgb.pixels() {
            for (s, v) in sums.iter_mut().zip(px.0) {
                *s += v as f64;
            }
        }
        let means = sums.map(|s| (s / n / 255.0) as f32);
        (0..self.dim).map(|i| means[i % 3]).collect()
    }
}

/// Decodes the referenced image and runs the extractor on it.
pub fn extract_visual(
    image: &ImageRef,
    base: &Path,
    camera: CameraId,
    extractor: &dyn VisualExtractor,
) -> Result<VisualFeature> {
    let path = image.resolve(base);
    let decoded = image::open(&path).map_err(|e| Error::Extraction {
        reference: image.to_string(),
        message: e.to_string(),
    })?;
    let vector = extractor.extract_image(&decoded);
    if vector.len() != extractor.dim() || vector.iter().any(|v| !v.is_finite()) {
        return Err(Error::Extraction {
            reference: image.to_string(),
            message: format!("extractor {} returned an invalid vector", extractor.id()),
        });
    }
    Ok(VisualFeature { camera, vector })
}
