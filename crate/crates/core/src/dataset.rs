//! Labelled image sets on disk: a `labels.json` manifest next to PGM images
//! and optional per-image minutiae files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::pgm::{decode_pgm, encode_pgm};
use crate::imaging::GrayscaleImage;
use crate::minutiae::{parse_minutiae_text, serialize_minutiae_text, MinutiaeTemplate};
use crate::types::SubjectId;

pub const MANIFEST: &str = "labels.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub subject: SubjectId,
    pub impression: usize,
    pub image: GrayscaleImage,
    pub minutiae: Option<MinutiaeTemplate>,
}

impl Sample {
    /// `"<subject>/<impression>"`, unique within a dataset.
    pub fn sample_id(&self) -> SubjectId {
        SubjectId::new(format!("{}/{}", self.subject, self.impression)).expect("non-empty id")
    }
}

/// Subject part of a `"<subject>/<impression>"` sample id.
pub fn subject_of(sample_id: &SubjectId) -> SubjectId {
    match sample_id.as_str().rsplit_once('/') {
        Some((subject, _)) if !subject.is_empty() => SubjectId::new(subject).expect("non-empty"),
        _ => sample_id.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: String,
    pub subject: SubjectId,
    pub impression: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minutiae: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub samples: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Impression numbers of each subject, in sample order.
    pub fn subject_impressions(&self) -> BTreeMap<SubjectId, Vec<usize>> {
        let mut map: BTreeMap<SubjectId, Vec<usize>> = BTreeMap::new();
        for s in &self.samples {
            map.entry(s.subject.clone()).or_default().push(s.impression);
        }
        map
    }

    pub fn find(&self, subject: &SubjectId, impression: usize) -> Option<&Sample> {
        self.samples.iter().find(|s| &s.subject == subject && s.impression == impression)
    }

    /// Writes images, minutiae (one file per subject when shared) and the
    /// manifest under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("images"))?;
        let mut entries = Vec::with_capacity(self.samples.len());
        let mut shared: BTreeMap<&SubjectId, &MinutiaeTemplate> = BTreeMap::new();
        let mut written = std::collections::BTreeSet::new();
        for s in &self.samples {
            let image = format!("images/{}_{}.pgm", s.subject, s.impression);
            write_atomic(&dir.join(&image), &encode_pgm(&s.image))?;
            let minutiae = match &s.minutiae {
                None => None,
                Some(t) => {
                    let first = *shared.entry(&s.subject).or_insert(t);
                    let name = if first == t {
                        format!("minutiae/{}.minu", s.subject)
                    } else {
                        format!("minutiae/{}_{}.minu", s.subject, s.impression)
                    };
                    if written.insert(name.clone()) {
                        fs::create_dir_all(dir.join("minutiae"))?;
                        write_atomic(&dir.join(&name), &serialize_minutiae_text(t))?;
                    }
                    Some(name)
                }
            };
            entries.push(ManifestEntry { image, subject: s.subject.clone(), impression: s.impression, minutiae });
        }
        let manifest = serde_json::to_string_pretty(&Manifest { samples: entries })?;
        write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
        let mut cache: BTreeMap<String, MinutiaeTemplate> = BTreeMap::new();
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for e in manifest.samples {
            let image = decode_pgm(&fs::read(dir.join(&e.image))?)
                .map_err(|err| Error::InvalidImage(format!("{}: {err}", e.image)))?;
            let minutiae = match e.minutiae {
                None => None,
                Some(name) => {
                    if !cache.contains_key(&name) {
                        let t = parse_minutiae_text(&fs::read(dir.join(&name))?)?;
                        cache.insert(name.clone(), t);
                    }
                    Some(cache[&name].clone())
                }
            };
            samples.push(Sample { subject: e.subject, impression: e.impression, image, minutiae });
        }
        Ok(Self { samples })
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Io(std::io::Error::other(format!("not a file path: {}", path.display()))))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minutiae::{MinutiaKind, MinutiaPoint};

    fn id(s: &str) -> SubjectId {
        SubjectId::new(s).unwrap()
    }

    #[test]
    fn subject_of_splits_on_last_slash() {
        assert_eq!(subject_of(&id("s0001/3")), id("s0001"));
        assert_eq!(subject_of(&id("a/b/2")), id("a/b"));
        assert_eq!(subject_of(&id("plain")), id("plain"));
        assert_eq!(subject_of(&id("/1")), id("/1"));
    }

    #[test]
    fn per_impression_minutiae_round_trip() {
        let img = GrayscaleImage::from_fn(8, 6, |r, c| (r * 8 + c) as u8).unwrap();
        let t = |x| {
            MinutiaeTemplate::new(
                8,
                6,
                vec![MinutiaPoint { x, y: 1, angle: 12.5, kind: MinutiaKind::Ending, quality: 70 }],
            )
            .unwrap()
        };
        let d = Dataset {
            samples: vec![
                Sample { subject: id("a"), impression: 0, image: img.clone(), minutiae: Some(t(1)) },
                Sample { subject: id("a"), impression: 1, image: img.clone(), minutiae: Some(t(2)) },
                Sample { subject: id("b"), impression: 0, image: img, minutiae: None },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        assert!(dir.path().join("minutiae/a.minu").exists());
        assert!(dir.path().join("minutiae/a_1.minu").exists());
        assert_eq!(Dataset::load(dir.path()).unwrap(), d);
        assert_eq!(d.subject_impressions()[&id("a")], vec![0, 1]);
        assert!(d.find(&id("b"), 0).is_some());
        assert!(d.find(&id("b"), 1).is_none());
    }
}
