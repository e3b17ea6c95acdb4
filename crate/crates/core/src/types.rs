//! Shared domain types: embeddings, ensemble model tags, subject ids and the
//! similarity primitive every other module scores with.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Embedding length produced by the reference pipeline.
pub const DEFAULT_DIM: usize = 192;

/// Maximum deviation of a stored embedding's L2 norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

/// A fixed-length, unit-norm, finite feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// Normalizes a raw feature vector to unit length.
    ///
    /// The norm is accumulated in f64 so that very small or very large raw
    /// vectors still land within [`UNIT_NORM_TOLERANCE`].
    pub fn normalize(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::ZeroDimension);
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(Self { values: raw.iter().map(|v| (v / norm) as f32).collect() })
    }

    /// Same as [`Embedding::normalize`] for single-precision input.
    pub fn normalize_f32(raw: &[f32]) -> Result<Self> {
        let wide: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
        Self::normalize(&wide)
    }

    /// Wraps values that are already unit-norm, keeping them bit-for-bit.
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        Self::from_unit_with_tolerance(values, UNIT_NORM_TOLERANCE)
    }

    pub(crate) fn from_unit_with_tolerance(values: Vec<f32>, tolerance: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::ZeroDimension);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > tolerance {
            return Err(Error::NotUnitNorm { norm });
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

/// Member of the five-model ensemble. `O` is the unperturbed pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelTag {
    O,
    Y,
    X,
    R,
    M,
}

impl ModelTag {
    pub const ALL: [ModelTag; 5] = [ModelTag::O, ModelTag::Y, ModelTag::X, ModelTag::R, ModelTag::M];

    /// Byte code used by the embedding-store format.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn letter(self) -> char {
        match self {
            ModelTag::O => 'O',
            ModelTag::Y => 'Y',
            ModelTag::X => 'X',
            ModelTag::R => 'R',
            ModelTag::M => 'M',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'O' => Some(ModelTag::O),
            'Y' => Some(ModelTag::Y),
            'X' => Some(ModelTag::X),
            'R' => Some(ModelTag::R),
            'M' => Some(ModelTag::M),
            _ => None,
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for ModelTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::from_letter(c).ok_or_else(|| Error::UnknownTag(s.to_string())),
            _ => Err(Error::UnknownTag(s.to_string())),
        }
    }
}

/// A non-empty set of ensemble members, iterated in canonical O, Y, X, R, M order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelSubset {
    mask: u8,
}

impl ModelSubset {
    pub fn new<I: IntoIterator<Item = ModelTag>>(tags: I) -> Result<Self> {
        let mut mask = 0u8;
        for tag in tags {
            let bit = 1 << tag.code();
            if mask & bit != 0 {
                return Err(Error::InvalidParams(format!("duplicate model tag {tag}")));
            }
            mask |= bit;
        }
        if mask == 0 {
            return Err(Error::EmptySubset);
        }
        Ok(Self { mask })
    }

    pub fn single(tag: ModelTag) -> Self {
        Self { mask: 1 << tag.code() }
    }

    pub fn all() -> Self {
        Self { mask: 0b1_1111 }
    }

    pub fn contains(&self, tag: ModelTag) -> bool {
        self.mask & (1 << tag.code()) != 0
    }

    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = ModelTag> + '_ {
        ModelTag::ALL.into_iter().filter(|t| self.contains(*t))
    }
}

impl fmt::Display for ModelSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for tag in self.iter() {
            write!(f, "{tag}")?;
        }
        Ok(())
    }
}

/// Parses `"ORM"`, `"O,R,M"` or `"o r m"`.
impl FromStr for ModelSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tags = s
            .chars()
            .filter(|c| !matches!(c, ',' | ' '))
            .map(|c| ModelTag::from_letter(c).ok_or_else(|| Error::UnknownTag(c.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(tags)
    }
}

impl Serialize for ModelSubset {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ModelSubset {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let tags = Vec::<ModelTag>::deserialize(deserializer)?;
        ModelSubset::new(tags).map_err(serde::de::Error::custom)
    }
}

/// Identity label of an enrolled subject; 1 to 4096 bytes of UTF-8.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct SubjectId(String);

impl SubjectId {
    pub const MAX_LEN: usize = 4096;

    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.len() > Self::MAX_LEN {
            return Err(Error::InvalidSubjectId(format!("length {} outside 1..={}", id.len(), Self::MAX_LEN)));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl<'de> Deserialize<'de> for SubjectId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        SubjectId::new(String::deserialize(deserializer)?).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for SubjectId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s)
    }
}

/// Inner product over eight independent lanes.
///
/// Lane partials are summed in a fixed order, so the result depends only on
/// the inputs and never on how a caller partitions work across threads.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let a_chunks = a.chunks_exact(8);
    let b_chunks = b.chunks_exact(8);
    let (a_tail, b_tail) = (a_chunks.remainder(), b_chunks.remainder());
    for (x, y) in a_chunks.zip(b_chunks) {
        for lane in 0..8 {
            acc[lane] += x[lane] * y[lane];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in a_tail.iter().zip(b_tail) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Cosine similarity of two unit embeddings, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f32> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(dot(a.as_slice(), b.as_slice()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
        let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Embedding::normalize(&raw).unwrap()
    }

    fn basis(dim: usize, i: usize) -> Embedding {
        let mut v = vec![0.0f32; dim];
        v[i] = 1.0;
        Embedding::from_unit(v).unwrap()
    }

    #[test]
    fn self_similarity_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let v = random_unit(&mut rng, DEFAULT_DIM);
            let s = cosine_similarity(&v, &v).unwrap();
            assert!((s - 1.0).abs() < 1e-6, "{s}");
        }
    }

    #[test]
    fn orthogonal_basis_vectors() {
        assert_eq!(cosine_similarity(&basis(192, 0), &basis(192, 1)).unwrap(), 0.0);
    }

    #[test]
    fn matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = random_unit(&mut rng, DEFAULT_DIM);
            let b = random_unit(&mut rng, DEFAULT_DIM);
            let mut oracle = 0.0f64;
            for i in 0..a.dim() {
                oracle += a.as_slice()[i] as f64 * b.as_slice()[i] as f64;
            }
            let s = cosine_similarity(&a, &b).unwrap() as f64;
            assert!((s - oracle).abs() < 1e-6, "{s} vs {oracle}");
        }
    }

    #[test]
    fn dimension_mismatch() {
        let err = cosine_similarity(&basis(4, 0), &basis(5, 0)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 4, found: 5 }));
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(matches!(Embedding::normalize(&[0.0; 8]), Err(Error::ZeroVector)));
        assert!(matches!(Embedding::normalize(&[1.0, f64::NAN]), Err(Error::NonFinite)));
        assert!(matches!(Embedding::normalize(&[]), Err(Error::ZeroDimension)));
    }

    #[test]
    fn from_unit_rejects_unnormalized() {
        assert!(matches!(Embedding::from_unit(vec![1.0, 1.0]), Err(Error::NotUnitNorm { .. })));
    }

    #[test]
    fn subset_parsing() {
        let s: ModelSubset = "O,R,M".parse().unwrap();
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![ModelTag::O, ModelTag::R, ModelTag::M]);
        assert_eq!(s.to_string(), "ORM");
        assert!("".parse::<ModelSubset>().is_err());
        assert!("OO".parse::<ModelSubset>().is_err());
        assert!("OQ".parse::<ModelSubset>().is_err());
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"["O","R","M"]"#);
    }

    #[test]
    fn subject_id_bounds() {
        assert!(SubjectId::new("").is_err());
        assert!(SubjectId::new("a".repeat(4096)).is_ok());
        assert!(SubjectId::new("a".repeat(4097)).is_err());
    }

    #[test]
    fn tag_codes_round_trip() {
        for tag in ModelTag::ALL {
            assert_eq!(ModelTag::from_code(tag.code()), Some(tag));
            assert_eq!(tag.to_string().parse::<ModelTag>().unwrap(), tag);
        }
        assert_eq!(ModelTag::from_code(5), None);
    }

    proptest! {
        #[test]
        fn similarity_symmetric_and_clamped(seed in any::<u64>(), dim in 1usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_unit(&mut rng, dim);
            let b = random_unit(&mut rng, dim);
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert!((a.norm() - 1.0).abs() < UNIT_NORM_TOLERANCE);
        }
    }
}
