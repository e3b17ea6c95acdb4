use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::SubjectId;

/// How comparison pairs are drawn from a labelled set of impressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingProtocol {
    /// Every within-subject pair is genuine, every cross-subject pair impostor.
    FullCross,
    /// Every within-subject pair is genuine; impostors pair only the first
    /// impression of each subject.
    FvcStyle,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SampleRef {
    pub subject: SubjectId,
    pub impression: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PairSet {
    pub genuine: Vec<(SampleRef, SampleRef)>,
    pub impostor: Vec<(SampleRef, SampleRef)>,
}

fn sample(subject: &SubjectId, impression: usize) -> SampleRef {
    SampleRef { subject: subject.clone(), impression }
}

/// Unordered comparison pairs, subjects in map order and impressions in
/// sequence order.
pub fn build_pairs(
    subject_impressions: &BTreeMap<SubjectId, Vec<usize>>,
    protocol: PairingProtocol,
) -> Result<PairSet> {
    if subject_impressions.len() < 2 {
        return Err(Error::InsufficientData(format!("{} subjects; at least 2 are needed", subject_impressions.len())));
    }
    if let Some((id, _)) = subject_impressions.iter().find(|(_, imps)| imps.is_empty()) {
        return Err(Error::InsufficientData(format!("subject {id} has no impressions")));
    }

    let mut pairs = PairSet::default();
    for (id, imps) in subject_impressions {
        for (i, &a) in imps.iter().enumerate() {
            for &b in &imps[i + 1..] {
                pairs.genuine.push((sample(id, a), sample(id, b)));
            }
        }
    }
    let subjects: Vec<(&SubjectId, &Vec<usize>)> = subject_impressions.iter().collect();
    for (i, (id_a, imps_a)) in subjects.iter().enumerate() {
        for (id_b, imps_b) in &subjects[i + 1..] {
            match protocol {
                PairingProtocol::FvcStyle => {
                    pairs.impostor.push((sample(id_a, imps_a[0]), sample(id_b, imps_b[0])));
                }
                PairingProtocol::FullCross => {
                    for &a in imps_a.iter() {
                        for &b in imps_b.iter() {
                            pairs.impostor.push((sample(id_a, a), sample(id_b, b)));
                        }
                    }
                }
            }
        }
    }
    Ok(pairs)
}
