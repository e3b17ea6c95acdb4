use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gallery::Gallery;
use crate::types::{Embedding, ModelTag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub tag: ModelTag,
    pub gallery_size: usize,
    pub dim: usize,
    pub threads: usize,
    pub scans: u64,
    pub comparisons: u64,
    pub elapsed_seconds: f64,
    pub comparisons_per_second: f64,
    /// Folded top-1 scores; keeps the searches observable.
    pub checksum: u64,
}

/// Repeats full top-1 scans of the `tag` column, cycling through `probes`,
/// until at least `seconds` of wall time have elapsed.
pub fn throughput_bench(
    g: &Gallery,
    tag: ModelTag,
    probes: &[Embedding],
    seconds: f64,
    threads: usize,
) -> Result<BenchReport> {
    if probes.is_empty() {
        return Err(Error::InvalidParams("no probes to benchmark".into()));
    }
    if !(seconds.is_finite() && seconds > 0.0) {
        return Err(Error::InvalidParams(format!("benchmark window {seconds} must be positive")));
    }
    let n = g.len(tag);
    if n == 0 {
        return Err(Error::EmptyGallery);
    }
    let threads = threads.max(1);
    let mut checksum = 0u64;
    let mut scans = 0u64;
    let start = Instant::now();
    let elapsed = loop {
        for probe in probes {
            let result = g.search_topk_threads(tag, black_box(probe), 1, threads)?;
            let top = &result.ranked[0];
            checksum = checksum.rotate_left(7) ^ top.score.to_bits() ^ top.id.as_str().len() as u64;
            scans += 1;
        }
        let elapsed = start.elapsed().as_secs_f64();
        if elapsed >= seconds {
            break elapsed;
        }
    };
    let comparisons = scans * n as u64;
    Ok(BenchReport {
        tag,
        gallery_size: n,
        dim: g.dim(),
        threads,
        scans,
        comparisons,
        elapsed_seconds: elapsed,
        comparisons_per_second: comparisons as f64 / elapsed,
        checksum: black_box(checksum),
    })
}
