//! Verification, closed-set and open-set identification metrics, pairing
//! protocols, the throughput benchmark and significance testing.

pub mod bench;
pub mod identification;
pub mod pairs;
pub mod report;
pub mod stats;
pub mod verification;

pub use bench::{throughput_bench, BenchReport};
pub use identification::{cmc, fpir_at_fnir, CmcCurve, MatedTop, OpenSetOutcome, OpenSetPoint};
pub use pairs::{build_pairs, PairSet, PairingProtocol, SampleRef};
pub use report::{DecisionPoint, EvalReport, ScoreHistogram};
pub use stats::{two_sample_t_test, TTestResult};
pub use verification::{operating_point, tar_at_fmr, OperatingPoint, ScoreSample};
