//! Deterministic reference encoder: cell-wise gradient-orientation
//! histograms followed by a seeded ±1 random projection.
//!
//! This stands in for a learned network so that the whole pipeline can run
//! end to end. Embeddings produced elsewhere enter through the embedding
//! store instead.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{apply_transform_with, GrayscaleImage, TransformParams, TransformTag};
use crate::minutiae::MinutiaeTemplate;
use crate::types::{Embedding, ModelSubset, ModelTag, DEFAULT_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub dim: usize,
    /// Cells per side.
    pub grid: usize,
    /// Orientation bins over `[0, 180)`.
    pub bins: usize,
    pub projection_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM, grid: 8, bins: 12, projection_seed: 42 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.grid < 1 || self.bins < 2 {
            return Err(Error::InvalidParams(format!(
                "encoder needs dim >= 2, grid >= 1, bins >= 2 (got {}, {}, {})",
                self.dim, self.grid, self.bins
            )));
        }
        if self.dim > u16::MAX as usize {
            return Err(Error::InvalidParams(format!("dim {} exceeds {}", self.dim, u16::MAX)));
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        self.grid * self.grid * self.bins
    }
}

/// Magnitude-weighted orientation histograms, `grid x grid` cells of `bins`
/// each, laid out cell-row-major.
///
/// Gradients are central differences with edge replication; orientation is
/// `atan2(gy, gx)` folded into `[0, 180)` degrees.
pub fn orientation_histogram(img: &GrayscaleImage, cfg: &EncoderConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    if w < cfg.grid || h < cfg.grid {
        return Err(Error::ImageTooSmall { width: w as u32, height: h as u32, grid: cfg.grid });
    }
    let bin_width = 180.0 / cfg.bins as f64;
    let mut hist = vec![0.0f64; cfg.feature_len()];
    for r in 0..h {
        let cell_r = r * cfg.grid / h;
        for c in 0..w {
            let (ri, ci) = (r as isize, c as isize);
            let gx = img.get_clamped(ri, ci + 1) as f64 - img.get_clamped(ri, ci - 1) as f64;
            let gy = img.get_clamped(ri + 1, ci) as f64 - img.get_clamped(ri - 1, ci) as f64;
            let magnitude = (gx * gx + gy * gy).sqrt();
            if magnitude == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx).to_degrees();
            if theta < 0.0 {
                theta += 180.0;
            }
            if theta >= 180.0 {
                theta -= 180.0;
            }
            let bin = ((theta / bin_width) as usize).min(cfg.bins - 1);
            let cell = cell_r * cfg.grid + c * cfg.grid / w;
            hist[cell * cfg.bins + bin] += magnitude;
        }
    }
    Ok(hist)
}

/// Encoder bound to one configuration. The projection matrix is built on
/// first use and shared by every later call, including concurrent ones.
#[derive(Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    projection: OnceLock<Vec<i8>>,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, projection: OnceLock::new() })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Row-major `dim x feature_len` matrix of ±1.
    fn projection(&self) -> &[i8] {
        self.projection.get_or_init(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.projection_seed);
            (0..self.cfg.dim * self.cfg.feature_len()).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()
        })
    }

    pub fn encode(&self, img: &GrayscaleImage) -> Result<Embedding> {
        let hist = orientation_histogram(img, &self.cfg)?;
        if hist.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateImage);
        }
        let projected: Vec<f64> = self
            .projection()
            .chunks_exact(hist.len())
            .map(|row| row.iter().zip(&hist).map(|(&s, &v)| s as f64 * v).sum())
            .collect();
        Embedding::normalize(&projected).map_err(|e| match e {
            Error::ZeroVector => Error::DegenerateImage,
            other => other,
        })
    }

    /// Encodes the view of `img` seen by each model in `subset`.
    pub fn encode_ensemble(
        &self,
        img: &GrayscaleImage,
        minutiae: Option<&MinutiaeTemplate>,
        subset: ModelSubset,
        params: &TransformParams,
    ) -> Result<BTreeMap<ModelTag, Embedding>> {
        if subset.contains(ModelTag::M) && minutiae.is_none() {
            return Err(Error::MissingMinutiae);
        }
        subset
            .iter()
            .map(|tag| {
                let view = apply_transform_with(img, TransformTag::from(tag), minutiae, params)?;
                Ok((tag, self.encode(&view)?))
            })
            .collect()
    }
}

/// One-shot encode; prefer [`Encoder`] when encoding many images.
pub fn encode(img: &GrayscaleImage, cfg: &EncoderConfig) -> Result<Embedding> {
    Encoder::new(*cfg)?.encode(img)
}

pub fn encode_ensemble(
    img: &GrayscaleImage,
    minutiae: Option<&MinutiaeTemplate>,
    subset: ModelSubset,
    cfg: &EncoderConfig,
) -> Result<BTreeMap<ModelTag, Embedding>> {
    Encoder::new(*cfg)?.encode_ensemble(img, minutiae, subset, &TransformParams::default())
}
