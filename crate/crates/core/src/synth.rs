//! Seeded synthetic fingerprint-like data: per-subject ridge patterns with
//! impression-level translation and additive noise.
//!
//! Each subject gets a sinusoidal ridge field with its own period, dominant
//! orientation and a smooth phase warp, so that impressions of one subject
//! share structure the encoders can pick up while different subjects do not.

use std::f64::consts::PI;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::imaging::GrayscaleImage;
use crate::minutiae::{MinutiaKind, MinutiaPoint, MinutiaeTemplate};
use crate::types::SubjectId;

const WARP_TERMS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub impressions_per_subject: usize,
    pub image_size: usize,
    /// Standard deviation of the additive noise as a fraction of 128 grey levels.
    pub noise_level: f64,
    pub minutiae_per_subject: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_subjects: 100,
            impressions_per_subject: 4,
            image_size: 64,
            noise_level: 0.4,
            minutiae_per_subject: 12,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.impressions_per_subject == 0 {
            return Err(Error::InvalidParams("subject and impression counts must be positive".into()));
        }
        if self.image_size < 16 {
            return Err(Error::InvalidParams(format!("image size {} below 16", self.image_size)));
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return Err(Error::InvalidParams(format!("noise level {} outside [0, 1)", self.noise_level)));
        }
        Ok(())
    }

    /// Largest translation applied to an impression, in pixels.
    pub fn max_shift(&self) -> i64 {
        (self.image_size / 32).max(1) as i64
    }
}

/// Parameters of one subject's ridge field.
#[derive(Clone, Debug)]
struct RidgeField {
    cos_t: f64,
    sin_t: f64,
    period: f64,
    /// (amplitude, fx, fy, phase) of each warp term; frequencies in cycles per pixel.
    warp: [(f64, f64, f64, f64); WARP_TERMS],
}

impl RidgeField {
    fn sample(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let theta = rng.random_range(0.0..PI);
        let mut warp = [(0.0, 0.0, 0.0, 0.0); WARP_TERMS];
        for term in &mut warp {
            *term = (
                rng.random_range(1.5..4.0),
                rng.random_range(-2.0..2.0) / size as f64,
                rng.random_range(-2.0..2.0) / size as f64,
                rng.random_range(0.0..2.0 * PI),
            );
        }
        Self { cos_t: theta.cos(), sin_t: theta.sin(), period: rng.random_range(7.0..11.0), warp }
    }

    /// Intensity at integer position `(x, y)` in pattern coordinates.
    fn at(&self, x: i64, y: i64) -> f64 {
        let (x, y) = (x as f64, y as f64);
        let u = x * self.cos_t + y * self.sin_t;
        let phase: f64 = self.warp.iter().map(|&(a, fx, fy, p)| a * (2.0 * PI * (fx * x + fy * y) + p).sin()).sum();
        128.0 + 100.0 * (2.0 * PI * u / self.period + phase).cos()
    }
}

pub fn subject_name(index: usize) -> SubjectId {
    SubjectId::new(format!("s{index:04}")).expect("non-empty")
}

/// Builds the dataset in memory. Identical specs give identical datasets.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let size = spec.image_size;
    let noise = if spec.noise_level > 0.0 {
        Some(Normal::new(0.0, spec.noise_level * 128.0).map_err(|e| Error::InvalidParams(e.to_string()))?)
    } else {
        None
    };
    let shift = spec.max_shift();
    let mut samples = Vec::with_capacity(spec.n_subjects * spec.impressions_per_subject);
    for subject in 0..spec.n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(subject as u64);
        let field = RidgeField::sample(&mut rng, size);
        let points = (0..spec.minutiae_per_subject)
            .map(|_| MinutiaPoint {
                x: rng.random_range(0..size as u32),
                y: rng.random_range(0..size as u32),
                angle: rng.random_range(0..3600) as f64 / 10.0,
                kind: [MinutiaKind::Ending, MinutiaKind::Bifurcation][rng.random_range(0..2)],
                quality: rng.random_range(40..=100),
            })
            .collect();
        let minutiae = MinutiaeTemplate::new(size as u32, size as u32, points)?;
        let id = subject_name(subject);

        for impression in 0..spec.impressions_per_subject {
            let dx = rng.random_range(-shift..=shift);
            let dy = rng.random_range(-shift..=shift);
            let mut pixels = Vec::with_capacity(size * size);
            for r in 0..size as i64 {
                for c in 0..size as i64 {
                    let mut v = field.at(c + dx, r + dy);
                    if let Some(n) = &noise {
                        v += n.sample(&mut rng);
                    }
                    pixels.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
            samples.push(Sample {
                subject: id.clone(),
                impression,
                image: GrayscaleImage::new(size, size, pixels)?,
                minutiae: Some(minutiae.clone()),
            });
        }
    }
    Ok(Dataset { samples })
}

/// Generates the dataset and writes it under `dir` (see [`Dataset::save`]).
pub fn write_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<Dataset> {
    let dataset = generate_synthetic(spec)?;
    dataset.save(dir)?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Manifest, MANIFEST};
    use std::collections::BTreeMap;
    use std::fs;

    fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                    out.insert(rel, fs::read(&p).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn written_trees_are_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_synthetic(&small(0.4), a.path()).unwrap();
        write_synthetic(&small(0.4), b.path()).unwrap();
        assert_eq!(tree(a.path()), tree(b.path()));
    }

    #[test]
    fn fifty_by_four_layout() {
        let spec =
            SyntheticSpec { n_subjects: 50, impressions_per_subject: 4, image_size: 32, ..SyntheticSpec::default() };
        let dir = tempfile::tempdir().unwrap();
        let generated = write_synthetic(&spec, dir.path()).unwrap();
        let files = tree(dir.path());
        let pgm = files.keys().filter(|k| k.ends_with(".pgm")).count();
        let minu = files.keys().filter(|k| k.ends_with(".minu")).count();
        assert_eq!((pgm, minu), (200, 50));

        let manifest: Manifest = serde_json::from_slice(&files[MANIFEST]).unwrap();
        assert_eq!(manifest.samples.len(), 200);
        let mut per_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for e in &manifest.samples {
            assert!(files.contains_key(&e.image));
            assert!(files.contains_key(e.minutiae.as_ref().unwrap()));
            assert_eq!(e.minutiae.as_deref(), Some(format!("minutiae/{}.minu", e.subject).as_str()));
            per_subject.entry(e.subject.as_str()).or_default().push(e.impression);
        }
        assert_eq!(per_subject.len(), 50);
        assert!(per_subject.values().all(|v| v == &[0, 1, 2, 3]));

        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!(loaded, generated);
    }

    fn small(noise: f64) -> SyntheticSpec {
        SyntheticSpec {
            n_subjects: 3,
            impressions_per_subject: 3,
            image_size: 48,
            noise_level: noise,
            minutiae_per_subject: 5,
            seed: 9,
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_synthetic(&small(0.3)).unwrap(), generate_synthetic(&small(0.3)).unwrap());
        let other = SyntheticSpec { seed: 10, ..small(0.3) };
        assert_ne!(generate_synthetic(&small(0.3)).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn noiseless_impressions_differ_by_translation() {
        let spec = small(0.0);
        let d = generate_synthetic(&spec).unwrap();
        let s = spec.max_shift();
        for subject in d.samples.chunks(3) {
            let (a, b) = (&subject[0].image, &subject[1].image);
            let found = (-2 * s..=2 * s).any(|oy| {
                (-2 * s..=2 * s).any(|ox| {
                    (0..48i64).all(|r| {
                        (0..48i64).all(|c| {
                            let (rr, cc) = (r + oy, c + ox);
                            !(0..48).contains(&rr)
                                || !(0..48).contains(&cc)
                                || a.get(rr as usize, cc as usize) == b.get(r as usize, c as usize)
                        })
                    })
                })
            });
            assert!(found, "no translation maps impression 0 onto impression 1");
        }
    }

    #[test]
    fn minutiae_shared_within_subject() {
        let d = generate_synthetic(&small(0.2)).unwrap();
        for subject in d.samples.chunks(3) {
            assert!(subject.iter().all(|s| s.minutiae == subject[0].minutiae));
            assert_eq!(subject[0].minutiae.as_ref().unwrap().len(), 5);
        }
        assert_ne!(d.samples[0].minutiae, d.samples[3].minutiae);
    }

    #[test]
    fn spec_validation() {
        assert!(generate_synthetic(&SyntheticSpec { noise_level: 1.0, ..small(0.0) }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { n_subjects: 0, ..small(0.0) }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { image_size: 8, ..small(0.0) }).is_err());
    }
}
