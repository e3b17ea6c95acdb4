//! Identity-indexed embedding gallery with exact 1:N search.
//!
//! Each model tag owns a dense column: embeddings are stored back to back in
//! one `Vec<f32>` so a search is a linear scan of contiguous memory. Ties in
//! score are broken by enrollment order, earlier first.

pub mod store;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::{score_fuse, ScoreRule};
use crate::types::{dot, Embedding, ModelTag, SubjectId};

pub use store::{EmbeddingStore, StoreRecord};

/// Depth above which search scores everything and sorts instead of keeping
/// a bounded insertion list.
const INSERTION_TOPK_LIMIT: usize = 64;

#[derive(Clone, Debug, Default)]
struct Column {
    /// Subject index (into `Gallery::subjects`) of each row.
    rows: Vec<u32>,
    data: Vec<f32>,
}

/// Per-model embedding columns over a shared subject registry.
#[derive(Clone, Debug)]
pub struct Gallery {
    dim: usize,
    subjects: Vec<SubjectId>,
    index: HashMap<SubjectId, u32>,
    /// Bit `tag.code()` is set once the subject has a row in that column.
    enrolled_tags: Vec<u8>,
    columns: BTreeMap<ModelTag, Column>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Hit {
    pub id: SubjectId,
    pub score: f64,
}

/// Ranked candidates, best first.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchResult {
    pub ranked: Vec<Hit>,
    pub k: usize,
    /// Number of entries that were searched.
    pub gallery_size: usize,
}

impl SearchResult {
    pub fn top(&self) -> Option<&Hit> {
        self.ranked.first()
    }

    /// 1-based rank of `id`, if it appears.
    pub fn rank_of(&self, id: &SubjectId) -> Option<usize> {
        self.ranked.iter().position(|h| &h.id == id).map(|p| p + 1)
    }

    /// True when the ranking covers the whole gallery.
    pub fn is_full(&self) -> bool {
        self.ranked.len() == self.gallery_size
    }
}

/// `(score, row)` ordered best first: higher score, then lower row.
#[derive(Clone, Copy, Debug)]
struct Scored {
    score: f32,
    row: usize,
}

fn better(a: &Scored, b: &Scored) -> Ordering {
    b.score.total_cmp(&a.score).then(a.row.cmp(&b.row))
}

/// Bounded best-first list; rows must be pushed in increasing order.
struct TopK {
    k: usize,
    items: Vec<Scored>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { k, items: Vec::with_capacity(k + 1) }
    }

    #[inline]
    fn push(&mut self, s: Scored) {
        if self.items.len() == self.k {
            // equal scores never displace: the incumbent enrolled earlier
            if s.score <= self.items[self.k - 1].score {
                return;
            }
            self.items.pop();
        }
        let at = self.items.partition_point(|x| x.score >= s.score);
        self.items.insert(at, s);
    }
}

fn top_rows(mut all: Vec<Scored>, k: usize) -> Vec<Scored> {
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, better);
        all.truncate(k);
    }
    all.sort_unstable_by(better);
    all
}

/// Exact top-k over rows `range` of a column.
fn scan_topk(data: &[f32], dim: usize, probe: &[f32], k: usize, range: std::ops::Range<usize>) -> Vec<Scored> {
    let rows = data[range.start * dim..range.end * dim].chunks_exact(dim);
    if k >= INSERTION_TOPK_LIMIT {
        let all = rows
            .enumerate()
            .map(|(i, v)| Scored { score: dot(probe, v).clamp(-1.0, 1.0), row: range.start + i })
            .collect();
        return top_rows(all, k);
    }
    let mut top = TopK::new(k);
    for (i, v) in rows.enumerate() {
        top.push(Scored { score: dot(probe, v).clamp(-1.0, 1.0), row: range.start + i });
    }
    top.items
}

/// All scores of a column, in row order.
fn scan_all(data: &[f32], dim: usize, probe: &[f32], out: &mut Vec<f32>) {
    out.clear();
    out.extend(data.chunks_exact(dim).map(|v| dot(probe, v).clamp(-1.0, 1.0)));
}

impl Gallery {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        Ok(Self {
            dim,
            subjects: Vec::new(),
            index: HashMap::new(),
            enrolled_tags: Vec::new(),
            columns: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entries in the column for `tag`.
    pub fn len(&self, tag: ModelTag) -> usize {
        self.columns.get(&tag).map_or(0, |c| c.rows.len())
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn subject_count(&self) -> usize {
        self.subjects.len()
    }

    pub fn tags(&self) -> impl Iterator<Item = ModelTag> + '_ {
        self.columns.keys().copied()
    }

    /// Subject ids of the column for `tag`, in enrollment order.
    pub fn ids(&self, tag: ModelTag) -> impl Iterator<Item = &SubjectId> + '_ {
        self.columns.get(&tag).into_iter().flat_map(|c| c.rows.iter().map(|&s| &self.subjects[s as usize]))
    }

    pub fn contains(&self, tag: ModelTag, id: &SubjectId) -> bool {
        self.index.get(id).is_some_and(|&s| self.enrolled_tags[s as usize] & (1 << tag.code()) != 0)
    }

    /// Enrolls `id` into every column in `embeddings`. Either all columns
    /// receive the subject or, on error, none do.
    pub fn enroll(&mut self, id: SubjectId, embeddings: &BTreeMap<ModelTag, Embedding>) -> Result<()> {
        if embeddings.is_empty() {
            return Err(Error::InvalidParams("no embeddings to enroll".into()));
        }
        for (&tag, e) in embeddings {
            if e.dim() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, found: e.dim() });
            }
            if self.contains(tag, &id) {
                return Err(Error::DuplicateId(id.to_string()));
            }
        }
        for (&tag, e) in embeddings {
            self.append_unchecked(tag, &id, e);
        }
        Ok(())
    }

    /// Adds one embedding to one column.
    pub fn append(&mut self, tag: ModelTag, id: &SubjectId, embedding: &Embedding) -> Result<()> {
        self.enroll(id.clone(), &BTreeMap::from([(tag, embedding.clone())]))
    }

    fn append_unchecked(&mut self, tag: ModelTag, id: &SubjectId, e: &Embedding) {
        let subject = match self.index.get(id) {
            Some(&s) => s,
            None => {
                let s = u32::try_from(self.subjects.len()).expect("gallery exceeds u32::MAX subjects");
                self.subjects.push(id.clone());
                self.index.insert(id.clone(), s);
                self.enrolled_tags.push(0);
                s
            }
        };
        self.enrolled_tags[subject as usize] |= 1 << tag.code();
        let column = self.columns.entry(tag).or_default();
        column.rows.push(subject);
        column.data.extend_from_slice(e.as_slice());
    }

    fn column(&self, tag: ModelTag) -> Result<&Column> {
        self.columns.get(&tag).filter(|c| !c.rows.is_empty()).ok_or(Error::EmptyGallery)
    }

    fn check_probe(&self, probe: &Embedding) -> Result<()> {
        if probe.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: probe.dim() });
        }
        Ok(())
    }

    fn result_from(&self, column: &Column, scored: Vec<Scored>, k: usize) -> SearchResult {
        SearchResult {
            ranked: scored
                .into_iter()
                .map(|s| Hit { id: self.subjects[column.rows[s.row] as usize].clone(), score: s.score as f64 })
                .collect(),
            k,
            gallery_size: column.rows.len(),
        }
    }

    /// Exact top-`k` of the `tag` column by cosine similarity.
    pub fn search_topk(&self, tag: ModelTag, probe: &Embedding, k: usize) -> Result<SearchResult> {
        self.search_topk_threads(tag, probe, k, 1)
    }

    /// [`Gallery::search_topk`] split over `threads` disjoint row ranges.
    /// The merged result is identical for every thread count.
    pub fn search_topk_threads(
        &self,
        tag: ModelTag,
        probe: &Embedding,
        k: usize,
        threads: usize,
    ) -> Result<SearchResult> {
        if k == 0 {
            return Err(Error::InvalidParams("k must be positive".into()));
        }
        self.check_probe(probe)?;
        let column = self.column(tag)?;
        let n = column.rows.len();
        let k_eff = k.min(n);
        let threads = threads.clamp(1, n);
        let scored = if threads == 1 {
            scan_topk(&column.data, self.dim, probe.as_slice(), k_eff, 0..n)
        } else {
            let chunk = n.div_ceil(threads);
            let partials: Vec<Vec<Scored>> = std::thread::scope(|s| {
                let handles: Vec<_> = (0..n)
                    .step_by(chunk)
                    .map(|start| {
                        let range = start..(start + chunk).min(n);
                        let data = &column.data;
                        s.spawn(move || scan_topk(data, self.dim, probe.as_slice(), k_eff, range))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("search worker panicked")).collect()
            });
            top_rows(partials.into_iter().flatten().collect(), k_eff)
        };
        Ok(self.result_from(column, scored, k))
    }

    /// True when at least one model ranks `true_id` first for its probe.
    pub fn ensemble_rank1_or(&self, probes: &BTreeMap<ModelTag, Embedding>, true_id: &SubjectId) -> Result<bool> {
        if probes.is_empty() {
            return Err(Error::InvalidParams("no probe embeddings".into()));
        }
        let mut hit = false;
        for (&tag, probe) in probes {
            let top = self.search_topk(tag, probe, 1)?;
            hit |= top.top().is_some_and(|h| &h.id == true_id);
        }
        Ok(hit)
    }

    /// Ranks subjects by the fused per-model scores of same-model comparisons.
    pub fn ensemble_search_scorefuse(
        &self,
        probes: &BTreeMap<ModelTag, Embedding>,
        rule: ScoreRule,
        k: usize,
    ) -> Result<SearchResult> {
        if k == 0 {
            return Err(Error::InvalidParams("k must be positive".into()));
        }
        let mut tags = probes.keys();
        let first = *tags.next().ok_or_else(|| Error::InvalidParams("no probe embeddings".into()))?;
        let reference = self.column(first)?;
        for &tag in tags {
            if self.column(tag)?.rows != reference.rows {
                return Err(Error::MisalignedGallery(format!(
                    "columns {first} and {tag} hold different subject sequences"
                )));
            }
        }
        for probe in probes.values() {
            self.check_probe(probe)?;
        }

        let n = reference.rows.len();
        let mut per_tag: Vec<Vec<f32>> = Vec::with_capacity(probes.len());
        for (&tag, probe) in probes {
            let mut scores = Vec::with_capacity(n);
            scan_all(&self.columns[&tag].data, self.dim, probe.as_slice(), &mut scores);
            per_tag.push(scores);
        }
        let mut buf = Vec::with_capacity(per_tag.len());
        let mut fused = Vec::with_capacity(n);
        for row in 0..n {
            buf.clear();
            buf.extend(per_tag.iter().map(|s| s[row] as f64));
            fused.push((score_fuse(&buf, rule)?, row));
        }
        let k_eff = k.min(n);
        let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if k_eff < n {
            fused.select_nth_unstable_by(k_eff - 1, order);
            fused.truncate(k_eff);
        }
        fused.sort_unstable_by(order);
        Ok(SearchResult {
            ranked: fused
                .into_iter()
                .map(|(score, row)| Hit { id: self.subjects[reference.rows[row] as usize].clone(), score })
                .collect(),
            k,
            gallery_size: n,
        })
    }

    /// Dumps every column, in tag then enrollment order.
    pub fn to_store(&self) -> EmbeddingStore {
        let mut store = EmbeddingStore::new(self.dim).expect("gallery dim fits the store");
        for (&tag, column) in &self.columns {
            for (i, &s) in column.rows.iter().enumerate() {
                let values = column.data[i * self.dim..(i + 1) * self.dim].to_vec();
                let e = Embedding::from_unit_with_tolerance(values, f64::INFINITY).expect("finite");
                store.push(tag, self.subjects[s as usize].clone(), e).expect("dims match");
            }
        }
        store
    }

    /// Builds a gallery from store records in file order.
    pub fn from_store(store: &EmbeddingStore) -> Result<Self> {
        let mut g = Self::new(store.dim())?;
        for r in store.records() {
            g.append(r.tag, &r.id, &r.embedding)?;
        }
        Ok(g)
    }

    /// Embedding bytes plus bookkeeping, excluding id string contents.
    pub fn payload_and_overhead_bytes(&self) -> (usize, usize) {
        let payload: usize = self.columns.values().map(|c| c.data.len() * 4).sum();
        let entries: usize = self.columns.values().map(|c| c.rows.len()).sum();
        let per_subject = std::mem::size_of::<SubjectId>() * 2 + 4 + 1 + 8;
        (payload, entries * 4 + self.subjects.len() * per_subject)
    }
}
