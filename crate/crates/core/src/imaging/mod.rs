//! Grayscale rasters and the input transformations that produce the views
//! each ensemble member is trained and probed on.

pub mod pgm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minutiae::MinutiaeTemplate;
use crate::types::ModelTag;

/// Side length of the sharp square kept around each minutia.
pub const MINUTIA_PATCH: usize = 64;

/// Row-major 8-bit intensity raster.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayscaleImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl fmt::Debug for GrayscaleImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrayscaleImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayscaleImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("zero dimension {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!("{} pixels for a {width}x{height} image", pixels.len())));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Pixel at row `r`, column `c`.
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.pixels[r * self.width + c]
    }

    /// Pixel with coordinates clamped into the raster (edge replication).
    #[inline]
    pub fn get_clamped(&self, r: isize, c: isize) -> u8 {
        let r = r.clamp(0, self.height as isize - 1) as usize;
        let c = c.clamp(0, self.width as isize - 1) as usize;
        self.get(r, c)
    }
}

/// Gaussian smoothing parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurParams {
    pub kernel_size: usize,
    pub sigma: f64,
}

impl BlurParams {
    pub const DEFAULT_KERNEL: usize = 11;

    pub fn new(kernel_size: usize, sigma: f64) -> Result<Self> {
        let p = Self { kernel_size, sigma };
        p.validate()?;
        Ok(p)
    }

    /// Kernel of size `k` with the conventional size-derived sigma,
    /// `0.3 * ((k - 1) / 2 - 1) + 0.8`.
    pub fn for_kernel(kernel_size: usize) -> Result<Self> {
        let sigma = 0.3 * ((kernel_size as f64 - 1.0) / 2.0 - 1.0) + 0.8;
        Self::new(kernel_size, sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!(
                "blur kernel size must be odd and positive, got {}",
                self.kernel_size
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParams(format!("blur sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Normalized 1-D kernel weights, centre at index `kernel_size / 2`.
    pub fn kernel(&self) -> Vec<f64> {
        let half = (self.kernel_size / 2) as f64;
        let denom = 2.0 * self.sigma * self.sigma;
        let raw: Vec<f64> = (0..self.kernel_size)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / denom).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

impl Default for BlurParams {
    fn default() -> Self {
        Self::for_kernel(Self::DEFAULT_KERNEL).expect("default kernel is valid")
    }
}

/// Adaptive local-mean binarization parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeParams {
    pub block: usize,
    pub offset: f64,
}

impl RidgeParams {
    pub fn new(block: usize, offset: f64) -> Result<Self> {
        let p = Self { block, offset };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.block < 3 || self.block.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!(
                "binarization block must be odd and at least 3, got {}",
                self.block
            )));
        }
        if !self.offset.is_finite() {
            return Err(Error::InvalidParams("binarization offset must be finite".into()));
        }
        Ok(())
    }
}

impl Default for RidgeParams {
    fn default() -> Self {
        Self { block: 15, offset: 2.0 }
    }
}

/// Vertical reflection: row `r` of the output is row `height - 1 - r` of the input.
pub fn flip_x(img: &GrayscaleImage) -> GrayscaleImage {
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for row in img.pixels.chunks_exact(img.width).rev() {
        pixels.extend_from_slice(row);
    }
    GrayscaleImage { pixels, ..*img }
}

/// Horizontal reflection: column `c` of the output is column `width - 1 - c`.
pub fn flip_y(img: &GrayscaleImage) -> GrayscaleImage {
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for row in img.pixels.chunks_exact(img.width) {
        pixels.extend(row.iter().rev());
    }
    GrayscaleImage { pixels, ..*img }
}

/// Separable Gaussian convolution with edge replication, rounded half away
/// from zero back to 8 bits.
pub fn gaussian_blur(img: &GrayscaleImage, p: &BlurParams) -> GrayscaleImage {
    let kernel = p.kernel();
    let half = (kernel.len() / 2) as isize;
    let (w, h) = (img.width, img.height);

    let mut horizontal = vec![0.0f64; w * h];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * img.get_clamped(r as isize, c as isize + i as isize - half) as f64;
            }
            horizontal[r * w + c] = acc;
        }
    }

    let mut pixels = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let rr = (r as isize + i as isize - half).clamp(0, h as isize - 1) as usize;
                acc += k * horizontal[rr * w + c];
            }
            pixels.push(acc.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayscaleImage { pixels, ..*img }
}

/// Marks dark-relative-to-neighbourhood pixels as ridge (0), the rest as
/// background (255). A pixel exactly at its threshold is background.
pub fn ridge_binarize(img: &GrayscaleImage, p: &RidgeParams) -> GrayscaleImage {
    let half = p.block / 2;
    let (w, h) = (img.width, img.height);
    let (pw, ph) = (w + 2 * half, h + 2 * half);

    // Summed-area table over the edge-replicated padding, one extra zero row/column.
    let mut integral = vec![0u64; (pw + 1) * (ph + 1)];
    for r in 0..ph {
        let mut row_sum = 0u64;
        for c in 0..pw {
            row_sum += img.get_clamped(r as isize - half as isize, c as isize - half as isize) as u64;
            integral[(r + 1) * (pw + 1) + c + 1] = integral[r * (pw + 1) + c + 1] + row_sum;
        }
    }

    let area = (p.block * p.block) as f64;
    let mut pixels = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            // Padded window for output (r, c) spans rows r..r+block, cols c..c+block.
            let (r1, c1) = (r + p.block, c + p.block);
            let sum = integral[r1 * (pw + 1) + c1] + integral[r * (pw + 1) + c]
                - integral[r * (pw + 1) + c1]
                - integral[r1 * (pw + 1) + c];
            let value = img.get(r, c) as f64 * area;
            pixels.push(if value < sum as f64 - p.offset * area { 0 } else { 255 });
        }
    }
    GrayscaleImage { pixels, ..*img }
}

/// Union of the 64x64 patches centred on each minutia, clipped to the image.
/// A patch centred at `(x, y)` covers columns `x-32 .. x+32` (half-open) and
/// likewise for rows.
pub fn minutiae_patch_mask(width: usize, height: usize, minutiae: &MinutiaeTemplate) -> Vec<bool> {
    let half = MINUTIA_PATCH / 2;
    let mut mask = vec![false; width * height];
    for m in minutiae.points() {
        let (x, y) = (m.x as usize, m.y as usize);
        let (c0, c1) = (x.saturating_sub(half), (x + half).min(width));
        let (r0, r1) = (y.saturating_sub(half), (y + half).min(height));
        for r in r0..r1 {
            mask[r * width + c0..r * width + c1].fill(true);
        }
    }
    mask
}

/// Keeps the image sharp inside the minutia patches and blurred everywhere else.
pub fn minutiae_soft_gate(img: &GrayscaleImage, minutiae: &MinutiaeTemplate, p: &BlurParams) -> Result<GrayscaleImage> {
    for m in minutiae.points() {
        if m.x as usize >= img.width || m.y as usize >= img.height {
            return Err(Error::MinutiaOutOfBounds {
                x: m.x,
                y: m.y,
                width: img.width as u32,
                height: img.height as u32,
            });
        }
    }
    let mask = minutiae_patch_mask(img.width, img.height, minutiae);
    let mut out = gaussian_blur(img, p);
    for ((dst, &src), keep) in out.pixels.iter_mut().zip(&img.pixels).zip(mask) {
        if keep {
            *dst = src;
        }
    }
    Ok(out)
}

/// One of the five input views.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformTag {
    Identity,
    FlipX,
    FlipY,
    Ridge,
    MinuGate,
}

impl TransformTag {
    pub fn model(self) -> ModelTag {
        match self {
            TransformTag::Identity => ModelTag::O,
            TransformTag::FlipY => ModelTag::Y,
            TransformTag::FlipX => ModelTag::X,
            TransformTag::Ridge => ModelTag::R,
            TransformTag::MinuGate => ModelTag::M,
        }
    }
}

impl From<ModelTag> for TransformTag {
    fn from(tag: ModelTag) -> Self {
        match tag {
            ModelTag::O => TransformTag::Identity,
            ModelTag::Y => TransformTag::FlipY,
            ModelTag::X => TransformTag::FlipX,
            ModelTag::R => TransformTag::Ridge,
            ModelTag::M => TransformTag::MinuGate,
        }
    }
}

impl FromStr for TransformTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "o" => Ok(TransformTag::Identity),
            "flipx" | "flip-x" | "x" => Ok(TransformTag::FlipX),
            "flipy" | "flip-y" | "y" => Ok(TransformTag::FlipY),
            "ridge" | "r" => Ok(TransformTag::Ridge),
            "minugate" | "minu" | "m" => Ok(TransformTag::MinuGate),
            _ => Err(Error::UnknownTag(s.to_string())),
        }
    }
}

/// Parameters shared by the parametrized transforms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformParams {
    pub blur: BlurParams,
    pub ridge: RidgeParams,
}

/// Applies `t` with default parameters.
pub fn apply_transform(
    img: &GrayscaleImage,
    t: TransformTag,
    minutiae: Option<&MinutiaeTemplate>,
) -> Result<GrayscaleImage> {
    apply_transform_with(img, t, minutiae, &TransformParams::default())
}

pub fn apply_transform_with(
    img: &GrayscaleImage,
    t: TransformTag,
    minutiae: Option<&MinutiaeTemplate>,
    params: &TransformParams,
) -> Result<GrayscaleImage> {
    match t {
        TransformTag::Identity => Ok(img.clone()),
        TransformTag::FlipX => Ok(flip_x(img)),
        TransformTag::FlipY => Ok(flip_y(img)),
        TransformTag::Ridge => Ok(ridge_binarize(img, &params.ridge)),
        TransformTag::MinuGate => {
            let minutiae = minutiae.ok_or(Error::MissingMinutiae)?;
            minutiae_soft_gate(img, minutiae, &params.blur)
        }
    }
}
