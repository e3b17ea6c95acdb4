//! Loading, grouping and writing the files the subcommands exchange.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use fpens_core::dataset::{write_atomic, Dataset};
use fpens_core::encoder::Encoder;
use fpens_core::fusion::{feature_fuse_centroid, FusionWeights};
use fpens_core::gallery::{EmbeddingStore, Gallery};
use fpens_core::imaging::TransformParams;
use fpens_core::{Embedding, ModelSubset, ModelTag, SubjectId};

pub type Views = BTreeMap<ModelTag, Embedding>;

/// Embeddings grouped by id, in order of first appearance.
#[derive(Clone, Debug)]
pub struct Encodings {
    pub dim: usize,
    pub entries: Vec<(SubjectId, Views)>,
    index: HashMap<SubjectId, usize>,
}

impl Encodings {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, id: SubjectId, tag: ModelTag, e: Embedding) -> Result<()> {
        let slot = match self.index.get(&id) {
            Some(&i) => i,
            None => {
                self.index.insert(id.clone(), self.entries.len());
                self.entries.push((id.clone(), Views::new()));
                self.entries.len() - 1
            }
        };
        if self.entries[slot].1.insert(tag, e).is_some() {
            return Err(fpens_core::Error::DuplicateId(format!("{id} has two {tag} embeddings")).into());
        }
        Ok(())
    }

    pub fn from_store(store: EmbeddingStore) -> Result<Self> {
        let mut out = Self::new(store.dim());
        for r in store.into_records() {
            out.insert(r.id, r.tag, r.embedding)?;
        }
        Ok(out)
    }

    pub fn to_store(&self) -> Result<EmbeddingStore> {
        let mut store = EmbeddingStore::new(self.dim)?;
        for (id, views) in &self.entries {
            for (&tag, e) in views {
                store.push(tag, id.clone(), e.clone())?;
            }
        }
        Ok(store)
    }

    pub fn get(&self, id: &SubjectId) -> Option<&Views> {
        self.index.get(id).map(|&i| &self.entries[i].1)
    }

    /// Tags present on every entry.
    pub fn common_tags(&self) -> Vec<ModelTag> {
        ModelTag::ALL.into_iter().filter(|t| self.entries.iter().all(|(_, v)| v.contains_key(t))).collect()
    }

    /// Impressions per subject, parsed from `"<subject>/<impression>"` ids.
    pub fn subject_impressions(&self) -> Result<BTreeMap<SubjectId, Vec<usize>>> {
        let mut map: BTreeMap<SubjectId, Vec<usize>> = BTreeMap::new();
        for (id, _) in &self.entries {
            let (subject, imp) =
                split_sample_id(id).with_context(|| format!("id {id} is not of the form <subject>/<impression>"))?;
            map.entry(subject).or_default().push(imp);
        }
        Ok(map)
    }

    /// One centroid-fused embedding per entry.
    pub fn fused(&self, w: &FusionWeights) -> Result<Vec<Embedding>> {
        self.entries
            .par_iter()
            .map(|(id, views)| feature_fuse_centroid(views, w).with_context(|| format!("fusing {id}")))
            .collect()
    }

    /// A gallery enrolling every entry under its own id.
    pub fn to_gallery(&self) -> Result<Gallery> {
        let mut g = Gallery::new(self.dim)?;
        for (id, views) in &self.entries {
            g.enroll(id.clone(), views)?;
        }
        Ok(g)
    }
}

pub fn split_sample_id(id: &SubjectId) -> Option<(SubjectId, usize)> {
    let (subject, imp) = id.as_str().rsplit_once('/')?;
    Some((SubjectId::new(subject).ok()?, imp.parse().ok()?))
}

pub fn sample_id(subject: &SubjectId, impression: usize) -> SubjectId {
    SubjectId::new(format!("{subject}/{impression}")).expect("non-empty id")
}

/// Encodes every sample of `data` with every model in `subset`.
pub fn encode_dataset(
    data: &Dataset,
    encoder: &Encoder,
    subset: ModelSubset,
    params: &TransformParams,
) -> Result<Encodings> {
    let encoded: Vec<Views> = data
        .samples
        .par_iter()
        .map(|s| {
            encoder
                .encode_ensemble(&s.image, s.minutiae.as_ref(), subset, params)
                .with_context(|| format!("encoding {}", s.sample_id()))
        })
        .collect::<Result<_>>()?;
    let mut out = Encodings::new(encoder.config().dim);
    for (s, views) in data.samples.iter().zip(encoded) {
        for (tag, e) in views {
            out.insert(s.sample_id(), tag, e)?;
        }
    }
    Ok(out)
}

/// Reads an embedding store, or encodes a dataset directory on the fly.
pub fn load_encodings(path: &Path, encoder: &Encoder, subset: ModelSubset) -> Result<Encodings> {
    if path.is_dir() {
        let data = Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))?;
        log::info!("encoding {} samples from {}", data.samples.len(), path.display());
        encode_dataset(&data, encoder, subset, &TransformParams::default())
    } else {
        let store = EmbeddingStore::read(path).with_context(|| format!("reading store {}", path.display()))?;
        Encodings::from_store(store)
    }
}

pub fn read_store(path: &Path) -> Result<Encodings> {
    let store = EmbeddingStore::read(path).with_context(|| format!("reading store {}", path.display()))?;
    Encodings::from_store(store)
}

/// Pretty JSON to `out`, or to stdout when no path is given.
pub fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))?,
        None => print_stdout(&text)?,
    }
    Ok(())
}

/// Writes to stdout; a closed pipe downstream is not an error.
pub fn print_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

pub fn require_out(out: Option<&Path>) -> Result<&Path> {
    match out {
        Some(p) => Ok(p),
        None => bail!(crate::UsageError("--out is required for this subcommand".into())),
    }
}
