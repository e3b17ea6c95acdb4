use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use fpens_core::config::RunConfig;
use fpens_core::dataset::{write_atomic, Dataset, Sample};
use fpens_core::encoder::Encoder;
use fpens_core::evaluation::{
    build_pairs, cmc, fpir_at_fnir, operating_point, throughput_bench, DecisionPoint, EvalReport, OpenSetOutcome,
    SampleRef, ScoreSample,
};
use fpens_core::fusion::{decision_fuse_or, score_fuse, ScoreRule, ThresholdTable};
use fpens_core::gallery::{EmbeddingStore, Gallery, Hit, SearchResult};
use fpens_core::imaging::pgm::{encode_pgm, read_pgm};
use fpens_core::imaging::{apply_transform_with, TransformParams, TransformTag};
use fpens_core::minutiae::read_minutiae;
use fpens_core::synth::{write_synthetic, SyntheticSpec};
use fpens_core::{cosine_similarity, Embedding, Error, ModelTag, SubjectId};

use crate::data::{
    emit_json, encode_dataset, load_encodings, print_stdout, read_store, require_out, sample_id, split_sample_id,
    Encodings, Views,
};
use crate::{Command, Common, Method, UsageError};

pub fn run(cmd: &Command, common: &Common, cfg: &RunConfig) -> Result<()> {
    let out = common.out.as_deref();
    match cmd {
        Command::GenSynth { subjects, impressions, size, noise, minutiae } => {
            let spec = SyntheticSpec {
                n_subjects: *subjects,
                impressions_per_subject: *impressions,
                image_size: *size,
                noise_level: *noise,
                minutiae_per_subject: *minutiae,
                seed: cfg.seed,
            };
            gen_synth(&spec, require_out(out)?)
        }
        Command::Transform { input, tag, minutiae } => transform(input, *tag, minutiae.as_deref(), require_out(out)?),
        Command::Encode { input, models, id, minutiae } => {
            encode(cfg, input, models.unwrap_or(cfg.transforms), id.as_deref(), minutiae.as_deref(), require_out(out)?)
        }
        Command::Enroll { input, impression, probes_out } => {
            enroll(input, *impression, require_out(out)?, probes_out.as_deref())
        }
        Command::Search { gallery, probes, k, method, tag } => search(cfg, gallery, probes, *k, *method, *tag, out),
        Command::VerifyEval { input, protocol, method, tag, target_fmr, thresholds } => {
            let targets = if target_fmr.is_empty() { vec![cfg.target_fmr] } else { target_fmr.clone() };
            verify_eval(cfg, input, (*protocol).into(), *method, *tag, &targets, thresholds.as_deref(), out)
        }
        Command::IdentifyEval { gallery, probes, max_rank, method, tag } => {
            identify_eval(cfg, gallery, probes, *max_rank, *method, *tag, out)
        }
        Command::OpensetEval { input, mate_fraction, target_fnir, method, tag } => {
            openset_eval(cfg, input, *mate_fraction, *target_fnir, *method, *tag, out)
        }
        Command::Calibrate { input, protocol, target_fmr } => {
            calibrate(cfg, input, (*protocol).into(), target_fmr.unwrap_or(cfg.target_fmr), out)
        }
        Command::Fuse { input, rule: _, tag } => fuse(cfg, input, *tag, require_out(out)?),
        Command::Bench { gallery, size, dim, probes, seconds, tag } => {
            let threads = match common.threads {
                None => 1,
                Some(0) => std::thread::available_parallelism().map_or(1, |n| n.get()),
                Some(n) => n,
            };
            bench(cfg, gallery.as_deref(), *size, *dim, *probes, *seconds, *tag, threads, out)
        }
    }
}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn timestamp() -> Option<String> {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).ok()?.as_secs();
    Some(format!("unix:{secs}"))
}

fn method_label(method: Method, tag: ModelTag) -> String {
    match method {
        Method::Single => format!("single:{tag}"),
        Method::Centroid => "centroid".into(),
        Method::Mean => "mean".into(),
        Method::Median => "median".into(),
        Method::Or => "or".into(),
    }
}

fn encoder(cfg: &RunConfig) -> Result<Encoder> {
    Ok(Encoder::new(cfg.encoder)?)
}

fn gen_synth(spec: &SyntheticSpec, dir: &Path) -> Result<()> {
    let data = write_synthetic(spec, dir).with_context(|| format!("writing dataset to {}", dir.display()))?;
    log::info!("wrote {} samples to {}", data.samples.len(), dir.display());
    emit_json(None, &serde_json::json!({ "spec": spec, "samples": data.samples.len(), "out": dir }))
}

fn transform(input: &Path, tag: ModelTag, minutiae: Option<&Path>, out: &Path) -> Result<()> {
    let params = TransformParams::default();
    let t = TransformTag::from(tag);
    if input.is_dir() {
        let data = Dataset::load(input)?;
        let samples = data
            .samples
            .par_iter()
            .map(|s| {
                let image = apply_transform_with(&s.image, t, s.minutiae.as_ref(), &params)
                    .with_context(|| format!("transforming {}", s.sample_id()))?;
                Ok(Sample { image, ..s.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset { samples }.save(out)?;
    } else {
        let img = read_pgm(input).with_context(|| format!("reading {}", input.display()))?;
        let template = minutiae.map(read_minutiae).transpose()?;
        if t == TransformTag::MinuGate && template.is_none() {
            return Err(usage("--minutiae is required for the M view of a single image"));
        }
        let view = apply_transform_with(&img, t, template.as_ref(), &params)?;
        write_atomic(out, &encode_pgm(&view))?;
    }
    Ok(())
}

fn encode(
    cfg: &RunConfig,
    input: &Path,
    subset: fpens_core::ModelSubset,
    id: Option<&str>,
    minutiae: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let enc = encoder(cfg)?;
    let encodings = if input.is_dir() {
        let data = Dataset::load(input)?;
        encode_dataset(&data, &enc, subset, &TransformParams::default())?
    } else {
        let img = read_pgm(input).with_context(|| format!("reading {}", input.display()))?;
        let template = minutiae.map(read_minutiae).transpose()?;
        if subset.contains(ModelTag::M) && template.is_none() {
            return Err(usage("model M needs --minutiae; pass --models without M otherwise"));
        }
        let name = match id {
            Some(s) => s.to_string(),
            None => input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        };
        let id = SubjectId::new(name)?;
        let mut e = Encodings::new(cfg.encoder.dim);
        for (tag, emb) in enc.encode_ensemble(&img, template.as_ref(), subset, &TransformParams::default())? {
            e.insert(id.clone(), tag, emb)?;
        }
        e
    };
    log::info!("encoded {} samples with models {subset}", encodings.entries.len());
    write_atomic(out, &encodings.to_store()?.to_bytes())?;
    Ok(())
}

fn enroll(input: &Path, impression: usize, out: &Path, probes_out: Option<&Path>) -> Result<()> {
    let all = read_store(input)?;
    let mut gallery = Encodings::new(all.dim);
    let mut rest = Encodings::new(all.dim);
    for (id, views) in &all.entries {
        let (target, key) = match split_sample_id(id) {
            Some((subject, imp)) if imp == impression => (&mut gallery, subject),
            Some(_) => (&mut rest, id.clone()),
            None => (&mut gallery, id.clone()),
        };
        for (&tag, e) in views {
            target.insert(key.clone(), tag, e.clone())?;
        }
    }
    if gallery.entries.is_empty() {
        return Err(Error::EmptyGallery).context(format!("no records with impression {impression}"));
    }
    let g = gallery.to_gallery()?;
    write_atomic(out, &g.to_store().to_bytes())?;
    if let Some(path) = probes_out {
        write_atomic(path, &rest.to_store()?.to_bytes())?;
    }
    log::info!("enrolled {} subjects, {} other records", g.subject_count(), rest.entries.len());
    Ok(())
}

/// Restricts or fuses gallery and probe embeddings as the method needs.
fn identification_inputs(
    cfg: &RunConfig,
    gallery: &Encodings,
    probes: Vec<(SubjectId, Views)>,
    method: Method,
    tag: ModelTag,
) -> Result<(Gallery, Vec<(SubjectId, Views)>)> {
    match method {
        Method::Centroid => {
            let fused = gallery.fused(&cfg.fusion_weights)?;
            let mut g = Gallery::new(gallery.dim)?;
            for ((id, _), e) in gallery.entries.iter().zip(&fused) {
                g.append(ModelTag::O, id, e)?;
            }
            let probes = probes
                .into_par_iter()
                .map(|(id, views)| {
                    let e = fpens_core::fusion::feature_fuse_centroid(&views, &cfg.fusion_weights)
                        .with_context(|| format!("fusing {id}"))?;
                    Ok((id, Views::from([(ModelTag::O, e)])))
                })
                .collect::<Result<_>>()?;
            Ok((g, probes))
        }
        Method::Single => {
            let mut g = Gallery::new(gallery.dim)?;
            for (id, views) in &gallery.entries {
                let e = views.get(&tag).with_context(|| format!("gallery entry {id} has no {tag} embedding"))?;
                g.append(tag, id, e)?;
            }
            let probes = probes
                .into_iter()
                .map(|(id, mut views)| match views.remove(&tag) {
                    Some(e) => Ok((id, Views::from([(tag, e)]))),
                    None => bail!(Error::InsufficientData(format!("probe {id} has no {tag} embedding"))),
                })
                .collect::<Result<_>>()?;
            Ok((g, probes))
        }
        Method::Mean | Method::Median | Method::Or => Ok((gallery.to_gallery()?, probes)),
    }
}

fn rank(g: &Gallery, views: &Views, method: Method, k: usize) -> Result<SearchResult> {
    Ok(match method {
        Method::Single | Method::Centroid => {
            let (&tag, e) = views.iter().next().expect("one view after restriction");
            g.search_topk(tag, e, k)?
        }
        Method::Mean => g.ensemble_search_scorefuse(views, ScoreRule::Mean, k)?,
        Method::Median => g.ensemble_search_scorefuse(views, ScoreRule::Median, k)?,
        Method::Or => unreachable!("the OR rule does not rank"),
    })
}

#[derive(Serialize)]
struct ProbeHits {
    probe: SubjectId,
    ranked: Vec<Hit>,
}

#[derive(Serialize)]
struct SearchReport {
    kind: &'static str,
    method: String,
    k: usize,
    gallery_size: usize,
    results: Vec<ProbeHits>,
}

fn search(
    cfg: &RunConfig,
    gallery: &Path,
    probes: &Path,
    k: usize,
    method: Method,
    tag: ModelTag,
    out: Option<&Path>,
) -> Result<()> {
    if method == Method::Or {
        return Err(usage("the OR rule yields decisions, not rankings; use identify-eval for OR rank-1"));
    }
    let gal = read_store(gallery)?;
    let pr = read_store(probes)?;
    let (g, probe_views) = identification_inputs(cfg, &gal, pr.entries, method, tag)?;
    let results = probe_views
        .par_iter()
        .map(|(id, views)| Ok(ProbeHits { probe: id.clone(), ranked: rank(&g, views, method, k)?.ranked }))
        .collect::<Result<Vec<_>>>()?;
    let report =
        SearchReport { kind: "search", method: method_label(method, tag), k, gallery_size: g.subject_count(), results };
    emit_json(out, &report)
}

fn views_of<'a>(enc: &'a Encodings, r: &SampleRef) -> Result<&'a Views> {
    let id = sample_id(&r.subject, r.impression);
    enc.get(&id).with_context(|| format!("no embeddings for {id}"))
}

fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    Ok(cosine_similarity(a, b)? as f64)
}

/// Same-model scores over the tags both samples carry.
fn per_model_scores(a: &Views, b: &Views) -> Result<BTreeMap<ModelTag, f64>> {
    a.iter().filter_map(|(tag, ea)| b.get(tag).map(|eb| Ok((*tag, cosine(ea, eb)?)))).collect()
}

#[allow(clippy::too_many_arguments)]
fn verify_eval(
    cfg: &RunConfig,
    input: &Path,
    protocol: fpens_core::evaluation::PairingProtocol,
    method: Method,
    tag: ModelTag,
    targets: &[f64],
    thresholds: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let table = match (method, thresholds) {
        (Method::Or, Some(p)) => Some(ThresholdTable::from_json(
            &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?),
        (Method::Or, None) => return Err(usage("--method or needs --thresholds from `calibrate`")),
        _ => None,
    };
    let enc = load_encodings(input, &encoder(cfg)?, cfg.transforms)?;
    let pairs = build_pairs(&enc.subject_impressions()?, protocol)?;
    let mut report = EvalReport::new("verification");
    report.method = Some(method_label(method, tag));

    if let Some(table) = table {
        let accept_rate = |list: &[(SampleRef, SampleRef)]| -> Result<f64> {
            let accepted = list
                .par_iter()
                .map(|(a, b)| {
                    let mut scores = per_model_scores(views_of(&enc, a)?, views_of(&enc, b)?)?;
                    scores.retain(|t, _| table.thresholds.contains_key(t));
                    Ok(decision_fuse_or(&scores, &table)?)
                })
                .collect::<Result<Vec<bool>>>()?;
            Ok(accepted.iter().filter(|&&x| x).count() as f64 / accepted.len().max(1) as f64)
        };
        report.genuine_count = Some(pairs.genuine.len());
        report.impostor_count = Some(pairs.impostor.len());
        report.decision = Some(DecisionPoint {
            target_fmr: table.target_fmr,
            tar: accept_rate(&pairs.genuine)?,
            fmr: accept_rate(&pairs.impostor)?,
        });
    } else {
        let fused: Option<BTreeMap<&SubjectId, Embedding>> = match method {
            Method::Centroid => {
                let f = enc.fused(&cfg.fusion_weights)?;
                Some(enc.entries.iter().map(|(id, _)| id).zip(f).collect())
            }
            _ => None,
        };
        let score = |a: &SampleRef, b: &SampleRef| -> Result<f64> {
            let (va, vb) = (views_of(&enc, a)?, views_of(&enc, b)?);
            match method {
                Method::Single => {
                    let pick = |v: &'_ Views, r: &SampleRef| {
                        v.get(&tag)
                            .cloned()
                            .with_context(|| format!("{} has no {tag} embedding", sample_id(&r.subject, r.impression)))
                    };
                    cosine(&pick(va, a)?, &pick(vb, b)?)
                }
                Method::Centroid => {
                    let f = fused.as_ref().expect("computed above");
                    cosine(&f[&sample_id(&a.subject, a.impression)], &f[&sample_id(&b.subject, b.impression)])
                }
                Method::Mean | Method::Median => {
                    let rule = if method == Method::Mean { ScoreRule::Mean } else { ScoreRule::Median };
                    let scores: Vec<f64> = per_model_scores(va, vb)?.into_values().collect();
                    Ok(score_fuse(&scores, rule)?)
                }
                Method::Or => unreachable!("handled above"),
            }
        };
        let scored = |list: &[(SampleRef, SampleRef)]| -> Result<Vec<f64>> {
            list.par_iter().map(|(a, b)| score(a, b)).collect()
        };
        let sample = ScoreSample { genuine: scored(&pairs.genuine)?, impostor: scored(&pairs.impostor)? };
        report = report.with_scores(&sample);
        for &target in targets {
            let point = operating_point(&sample, target)?;
            if point.under_resolved {
                report.flag(format!(
                    "{} impostor scores cannot resolve FMR {target}; threshold is above every impostor score",
                    sample.impostor.len()
                ));
            }
            report.tar_at_fmr.push(point);
        }
    }
    log::info!("scored {} genuine and {} impostor pairs", pairs.genuine.len(), pairs.impostor.len());
    report.timestamp = timestamp();
    emit_json(out, &report)
}

fn truth_of(id: &SubjectId) -> SubjectId {
    split_sample_id(id).map_or_else(|| id.clone(), |(subject, _)| subject)
}

fn identify_eval(
    cfg: &RunConfig,
    gallery: &Path,
    probes: &Path,
    max_rank: usize,
    method: Method,
    tag: ModelTag,
    out: Option<&Path>,
) -> Result<()> {
    let gal = read_store(gallery)?;
    let pr = read_store(probes)?;
    let total = pr.entries.len();
    let mated: Vec<(SubjectId, Views)> =
        pr.entries.into_iter().filter(|(id, _)| gal.get(&truth_of(id)).is_some()).collect();
    let mut report = EvalReport::new("identification");
    report.method = Some(method_label(method, tag));
    if mated.len() < total {
        report.flag(format!("{} probes have no enrolled mate and were skipped", total - mated.len()));
    }
    if mated.is_empty() {
        return Err(Error::EmptyScores).context("no probe has an enrolled mate");
    }
    let (g, probe_views) = identification_inputs(cfg, &gal, mated, method, tag)?;
    if method == Method::Or {
        let hits = probe_views
            .par_iter()
            .map(|(id, views)| Ok(g.ensemble_rank1_or(views, &truth_of(id))?))
            .collect::<Result<Vec<bool>>>()?;
        report.cmc = Some(vec![hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64]);
        report.flag("the OR rule consolidates rank-1 decisions only; the curve has one point");
    } else {
        let results = probe_views
            .par_iter()
            .map(|(id, views)| Ok((rank(&g, views, method, max_rank)?, truth_of(id))))
            .collect::<Result<Vec<_>>>()?;
        report.cmc = Some(cmc(&results, max_rank)?.hits_at_rank);
    }
    report.timestamp = timestamp();
    emit_json(out, &report)
}

fn openset_eval(
    cfg: &RunConfig,
    input: &Path,
    mate_fraction: f64,
    target_fnir: f64,
    method: Method,
    tag: ModelTag,
    out: Option<&Path>,
) -> Result<()> {
    if method == Method::Or {
        return Err(usage("the OR rule has no open-set form; use single, centroid, mean or median"));
    }
    if !(mate_fraction > 0.0 && mate_fraction < 1.0) {
        return Err(usage(format!("--mate-fraction {mate_fraction} must lie in (0, 1)")));
    }
    let enc = load_encodings(input, &encoder(cfg)?, cfg.transforms)?;
    let subjects = enc.subject_impressions()?;
    if subjects.len() < 2 {
        bail!(Error::InsufficientData("open-set evaluation needs at least 2 subjects".into()));
    }
    let mut names: Vec<&SubjectId> = subjects.keys().collect();
    names.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_enrolled = ((mate_fraction * names.len() as f64).round() as usize).clamp(1, names.len() - 1);
    let enrolled: BTreeSet<&SubjectId> = names[..n_enrolled].iter().copied().collect();

    let mut gallery = Encodings::new(enc.dim);
    let (mut mated, mut nonmated) = (Vec::new(), Vec::new());
    for (id, views) in &enc.entries {
        let (subject, imp) = split_sample_id(id).expect("checked by subject_impressions");
        let first = subjects[&subject].iter().min() == Some(&imp);
        match (enrolled.contains(&subject), first) {
            (true, true) => {
                for (&t, e) in views {
                    gallery.insert(subject.clone(), t, e.clone())?;
                }
            }
            (true, false) => mated.push((id.clone(), views.clone())),
            (false, _) => nonmated.push((id.clone(), views.clone())),
        }
    }
    if mated.is_empty() {
        bail!(Error::InsufficientData("enrolled subjects have no further impressions to probe with".into()));
    }
    let n_mated = mated.len();
    let mut all = mated;
    all.extend(nonmated);
    let (g, probe_views) = identification_inputs(cfg, &gallery, all, method, tag)?;
    let results = probe_views
        .par_iter()
        .map(|(id, views)| Ok((rank(&g, views, method, 1)?, truth_of(id))))
        .collect::<Result<Vec<_>>>()?;
    let (m, n) = results.split_at(n_mated);
    let nonmated_results: Vec<SearchResult> = n.iter().map(|(r, _)| r.clone()).collect();
    let outcome = OpenSetOutcome::from_results(m, &nonmated_results)?;
    let point = fpir_at_fnir(&outcome, target_fnir)?;

    let mut report = EvalReport::new("open-set");
    report.method = Some(method_label(method, tag));
    report.genuine_count = Some(m.len());
    report.impostor_count = Some(n.len());
    if point.flagged {
        report.flag(format!(
            "identification errors exceed FNIR {target_fnir} at every threshold; reporting FNIR {}",
            point.fnir
        ));
    }
    report.open_set = Some(point);
    report.timestamp = timestamp();
    emit_json(out, &report)
}

fn calibrate(
    cfg: &RunConfig,
    input: &Path,
    protocol: fpens_core::evaluation::PairingProtocol,
    target_fmr: f64,
    out: Option<&Path>,
) -> Result<()> {
    let enc = load_encodings(input, &encoder(cfg)?, cfg.transforms)?;
    let pairs = build_pairs(&enc.subject_impressions()?, protocol)?;
    let tags = enc.common_tags();
    if tags.is_empty() {
        bail!(Error::InsufficientData("no model is present on every sample".into()));
    }
    let per_pair = pairs
        .impostor
        .par_iter()
        .map(|(a, b)| {
            let (va, vb) = (views_of(&enc, a)?, views_of(&enc, b)?);
            tags.iter().map(|t| cosine(&va[t], &vb[t])).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let columns: Vec<Vec<f64>> = (0..tags.len()).map(|k| per_pair.iter().map(|s| s[k]).collect()).collect();
    let table = ThresholdTable::calibrate(target_fmr, tags.iter().copied().zip(columns.iter().map(Vec::as_slice)))?;
    let mut text = table.to_json()?;
    text.push('\n');
    match out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print_stdout(&text)?,
    }
    Ok(())
}

fn fuse(cfg: &RunConfig, input: &Path, tag: ModelTag, out: &Path) -> Result<()> {
    let enc = read_store(input)?;
    let fused = enc.fused(&cfg.fusion_weights)?;
    let mut result = Encodings::new(enc.dim);
    for ((id, _), e) in enc.entries.iter().zip(fused) {
        result.insert(id.clone(), tag, e)?;
    }
    write_atomic(out, &result.to_store()?.to_bytes())?;
    Ok(())
}

fn random_embedding(rng: &mut ChaCha8Rng, dim: usize) -> Result<Embedding> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok(Embedding::normalize(&v)?)
}

#[allow(clippy::too_many_arguments)]
fn bench(
    cfg: &RunConfig,
    gallery: Option<&Path>,
    size: usize,
    dim: usize,
    n_probes: usize,
    seconds: f64,
    tag: ModelTag,
    threads: usize,
    out: Option<&Path>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let g = match gallery {
        Some(p) => Gallery::from_store(&EmbeddingStore::read(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => {
            if size == 0 {
                return Err(usage("--size must be positive"));
            }
            let mut g = Gallery::new(dim)?;
            for i in 0..size {
                g.append(tag, &SubjectId::new(format!("b{i:07}"))?, &random_embedding(&mut rng, dim)?)?;
            }
            g
        }
    };
    let probes = (0..n_probes.max(1)).map(|_| random_embedding(&mut rng, g.dim())).collect::<Result<Vec<_>>>()?;
    let result = throughput_bench(&g, tag, &probes, seconds, threads)?;
    log::info!("{:.3e} comparisons/s", result.comparisons_per_second);
    let mut report = EvalReport::new("bench");
    report.throughput = Some(result);
    report.timestamp = timestamp();
    emit_json(out, &report)
}
