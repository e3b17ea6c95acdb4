mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fpens_core::config::RunConfig;
use fpens_core::evaluation::PairingProtocol;
use fpens_core::{ModelSubset, ModelTag};

/// Bad flag combinations found after parsing; reported like clap's own
/// usage errors.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "fpens",
    version,
    about = "Fingerprint embedding ensembles: transforms, fusion, search and evaluation"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core. `bench` defaults to 1.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// One model, chosen with --tag.
    Single,
    /// Weighted centroid of each sample's embeddings.
    Centroid,
    /// Mean of same-model scores.
    Mean,
    /// Median of same-model scores.
    Median,
    /// OR rule over per-model decisions.
    Or,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    FullCross,
    FvcStyle,
}

impl From<Protocol> for PairingProtocol {
    fn from(p: Protocol) -> Self {
        match p {
            Protocol::FullCross => PairingProtocol::FullCross,
            Protocol::FvcStyle => PairingProtocol::FvcStyle,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FuseRule {
    Centroid,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seeded synthetic dataset (PGM images, minutiae, labels.json).
    GenSynth {
        #[arg(long, default_value_t = 100)]
        subjects: usize,
        #[arg(long, default_value_t = 4)]
        impressions: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0.4)]
        noise: f64,
        #[arg(long, default_value_t = 12)]
        minutiae: usize,
    },
    /// Apply one input-view transform to an image or a whole dataset.
    Transform {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        tag: ModelTag,
        /// Minutiae file for the M view of a single image.
        #[arg(long)]
        minutiae: Option<PathBuf>,
    },
    /// Encode an image or dataset into an embedding store.
    Encode {
        #[arg(long)]
        input: PathBuf,
        /// Models to encode, e.g. "O,R,M"; defaults to the configured transforms.
        #[arg(long)]
        models: Option<ModelSubset>,
        /// Record id for a single image; defaults to the file stem.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        minutiae: Option<PathBuf>,
    },
    /// Build a gallery store from one impression per subject.
    Enroll {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        impression: usize,
        /// Also write the remaining records here, for use as probes.
        #[arg(long)]
        probes_out: Option<PathBuf>,
    },
    /// Top-k search of every probe in a store against a gallery.
    Search {
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        probes: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Method::Single)]
        method: Method,
        #[arg(long, default_value = "O")]
        tag: ModelTag,
    },
    /// Verification evaluation: TAR at the target FMRs over labelled pairs.
    VerifyEval {
        /// Embedding store or dataset directory.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Protocol::FvcStyle)]
        protocol: Protocol,
        #[arg(long, value_enum, default_value_t = Method::Single)]
        method: Method,
        #[arg(long, default_value = "O")]
        tag: ModelTag,
        /// Repeatable; defaults to the configured target.
        #[arg(long = "target-fmr")]
        target_fmr: Vec<f64>,
        /// Threshold table from `calibrate`, required by --method or.
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Closed-set identification: CMC of probes against a gallery.
    IdentifyEval {
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        probes: PathBuf,
        #[arg(long, default_value_t = 20)]
        max_rank: usize,
        #[arg(long, value_enum, default_value_t = Method::Single)]
        method: Method,
        #[arg(long, default_value = "O")]
        tag: ModelTag,
    },
    /// Open-set identification: FPIR at a target FNIR.
    OpensetEval {
        /// Embedding store or dataset directory.
        #[arg(long)]
        input: PathBuf,
        /// Fraction of subjects enrolled; the rest supply non-mated probes.
        #[arg(long, default_value_t = 0.5)]
        mate_fraction: f64,
        #[arg(long, default_value_t = 0.003)]
        target_fnir: f64,
        #[arg(long, value_enum, default_value_t = Method::Single)]
        method: Method,
        #[arg(long, default_value = "O")]
        tag: ModelTag,
    },
    /// Per-model thresholds at the target FMR from impostor pairs.
    Calibrate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Protocol::FvcStyle)]
        protocol: Protocol,
        #[arg(long = "target-fmr")]
        target_fmr: Option<f64>,
    },
    /// Fuse each id's embeddings into one.
    Fuse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FuseRule::Centroid)]
        rule: FuseRule,
        /// Tag the fused records are stored under.
        #[arg(long, default_value = "O")]
        tag: ModelTag,
    },
    /// Single-model search throughput.
    Bench {
        /// Gallery store; a seeded random gallery is used when omitted.
        #[arg(long)]
        gallery: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        size: usize,
        #[arg(long, default_value_t = 192)]
        dim: usize,
        #[arg(long, default_value_t = 16)]
        probes: usize,
        #[arg(long, default_value_t = 3.0)]
        seconds: f64,
        #[arg(long, default_value = "O")]
        tag: ModelTag,
    },
}

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                anyhow::Error::new(fpens_core::Error::Io(e)).context(format!("reading {}", path.display()))
            })?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<fpens_core::Error>() {
            return e.kind();
        }
        if cause.is::<std::io::Error>() {
            return "IoError";
        }
        if cause.is::<serde_json::Error>() {
            return "JsonError";
        }
    }
    "DataError"
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    if let Some(n) = cli.common.threads.filter(|_| !matches!(cli.command, Command::Bench { .. })) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }

    let result = load_config(&cli.common).and_then(|cfg| commands::run(&cli.command, &cli.common, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if let Some(usage) = err.downcast_ref::<UsageError>() {
                eprintln!("error: {usage}");
                return ExitCode::from(2);
            }
            let line = serde_json::json!({ "error": error_kind(&err), "message": format!("{err:#}") });
            eprintln!("{line}");
            ExitCode::from(1)
        }
    }
}
