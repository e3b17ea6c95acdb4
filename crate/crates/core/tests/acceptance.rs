//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use fpens_core::encoder::{Encoder, EncoderConfig};
use fpens_core::evaluation::bench::throughput_bench;
use fpens_core::evaluation::identification::{cmc, fpir_at_fnir, MatedTop, OpenSetOutcome};
use fpens_core::evaluation::pairs::{build_pairs, PairingProtocol};
use fpens_core::evaluation::stats::two_sample_t_test;
use fpens_core::evaluation::verification::{operating_point, ScoreSample};
use fpens_core::fusion::{
    calibrate_threshold, decision_fuse_or, feature_fuse_centroid, rate_at_or_above, supervision_loss,
    weighted_centroid, FusionWeights, ThresholdTable,
};
use fpens_core::gallery::{EmbeddingStore, Gallery};
use fpens_core::imaging::pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};
use fpens_core::imaging::{
    flip_x, flip_y, gaussian_blur, minutiae_soft_gate, ridge_binarize, BlurParams, GrayscaleImage, RidgeParams,
    TransformParams, MINUTIA_PATCH,
};
use fpens_core::minutiae::{parse_minutiae_text, serialize_minutiae_text, MinutiaKind, MinutiaPoint, MinutiaeTemplate};
use fpens_core::synth::{generate_synthetic, SyntheticSpec};
use fpens_core::{Embedding, ModelSubset, ModelTag, SubjectId};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_embedding(r: &mut ChaCha8Rng, dim: usize) -> Embedding {
    let v: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
    Embedding::normalize(&v).unwrap()
}

fn random_image(r: &mut ChaCha8Rng, max_side: usize) -> GrayscaleImage {
    let (w, h) = (r.random_range(1..=max_side), r.random_range(1..=max_side));
    let pixels = (0..w * h).map(|_| r.random()).collect();
    GrayscaleImage::new(w, h, pixels).unwrap()
}

fn id(i: usize) -> SubjectId {
    SubjectId::new(format!("id{i:06}")).unwrap()
}

fn throughput() -> Outcome {
    const N: usize = 100_000;
    const TARGET: f64 = 1.0e6;
    const FLOOR: f64 = 5.0e5;
    let mut r = rng(1);
    let mut g = Gallery::new(192).unwrap();
    for i in 0..N {
        g.append(ModelTag::O, &id(i), &random_embedding(&mut r, 192)).unwrap();
    }
    let probes: Vec<Embedding> = (0..16).map(|_| random_embedding(&mut r, 192)).collect();
    let report = throughput_bench(&g, ModelTag::O, &probes, 3.0, 1).unwrap();
    let rate = report.comparisons_per_second;
    let target = if rate >= TARGET { "1e6 target met" } else { "1e6 target not met" };
    check(rate >= FLOOR, format!("{rate:.3e} comparisons/s single-threaded on {N}x192 ({target}, floor 5e5)"))
}

fn exact_search_oracle() -> Outcome {
    const N: usize = 10_000;
    let mut r = rng(2);
    let mut g = Gallery::new(192).unwrap();
    let entries: Vec<Embedding> = (0..N).map(|_| random_embedding(&mut r, 192)).collect();
    for (i, e) in entries.iter().enumerate() {
        g.append(ModelTag::O, &id(i), e).unwrap();
    }
    let mut worst = 0.0f64;
    for p in 0..100 {
        let probe = random_embedding(&mut r, 192);
        let mut naive: Vec<(f64, usize)> = entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let mut s = 0.0f64;
                for (a, b) in probe.as_slice().iter().zip(e.as_slice()) {
                    s += *a as f64 * *b as f64;
                }
                (s, i)
            })
            .collect();
        naive.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let got = g.search_topk(ModelTag::O, &probe, 10).unwrap();
        if got.ranked.len() != 10 {
            return Err(format!("probe {p}: {} results", got.ranked.len()));
        }
        for (hit, &(score, i)) in got.ranked.iter().zip(&naive) {
            if hit.id != id(i) {
                return Err(format!("probe {p}: got {} where oracle has {}", hit.id, id(i)));
            }
            worst = worst.max((hit.score - score).abs());
        }
    }
    check(worst <= 1e-5, format!("100 probes x {N}: top-10 ids and order match, max score error {worst:.2e}"))
}

fn centroid_minimizer() -> Outcome {
    let mut r = rng(3);
    let delta = 1e-3;
    let mut checks = 0;
    for set in 0..50 {
        let dim = r.random_range(2..=192);
        let mut tags = ModelTag::ALL.to_vec();
        tags.shuffle(&mut r);
        tags.truncate(r.random_range(2..=5));
        let mut weights: BTreeMap<ModelTag, f64> = tags.iter().map(|&t| (t, r.random::<f64>())).collect();
        weights.insert(tags[0], 0.05 + r.random::<f64>());
        let w = FusionWeights::new(weights).unwrap();
        let sup: BTreeMap<ModelTag, Embedding> = tags.iter().map(|&t| (t, random_embedding(&mut r, dim))).collect();
        let c = weighted_centroid(&sup, &w).unwrap();
        let base = supervision_loss(&c, &sup, &w).unwrap();
        for _ in 0..20 {
            let u = random_embedding(&mut r, dim);
            let moved: Vec<f64> = c.iter().zip(u.as_slice()).map(|(a, &b)| a + delta * b as f64).collect();
            let loss = supervision_loss(&moved, &sup, &w).unwrap();
            if base > loss {
                return Err(format!("set {set}: loss {base} at centroid exceeds {loss} after a step"));
            }
            checks += 1;
        }
    }
    check(true, format!("{checks} perturbations over 50 supervisor sets, none lowered the loss"))
}

fn or_fusion() -> Outcome {
    const N_IMP: usize = 100_000;
    const N_GEN: usize = 20_000;
    let tags = [ModelTag::O, ModelTag::R, ModelTag::M];
    let mut r = rng(4);
    let noise = Normal::new(0.0, 0.1).unwrap();
    // Correlated per-model scores: shared component plus model-specific noise.
    let mut draw = |mean: f64, n: usize| -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| {
                let shared: f64 = noise.sample(&mut r);
                [0, 1, 2].map(|k| mean - 0.05 * k as f64 + shared + noise.sample(&mut r))
            })
            .collect()
    };
    let impostor = draw(0.0, N_IMP);
    let genuine = draw(0.45, N_GEN);
    let column = |rows: &[[f64; 3]], k: usize| rows.iter().map(|s| s[k]).collect::<Vec<f64>>();
    let imp_cols: Vec<Vec<f64>> = (0..3).map(|k| column(&impostor, k)).collect();
    let table = ThresholdTable::calibrate(1e-3, tags.iter().zip(&imp_cols).map(|(&t, c)| (t, c.as_slice()))).unwrap();

    let fused_rate = |rows: &[[f64; 3]]| {
        let hits = rows
            .iter()
            .filter(|s| {
                let m: BTreeMap<ModelTag, f64> = tags.iter().zip(s.iter()).map(|(&t, &v)| (t, v)).collect();
                decision_fuse_or(&m, &table).unwrap()
            })
            .count();
        hits as f64 / rows.len() as f64
    };
    let per_model_tar: Vec<f64> =
        (0..3).map(|k| rate_at_or_above(&column(&genuine, k), table.get(tags[k]).unwrap())).collect();
    let per_model_fmr: Vec<f64> = (0..3).map(|k| rate_at_or_above(&imp_cols[k], table.get(tags[k]).unwrap())).collect();
    let (tar, fmr) = (fused_rate(&genuine), fused_rate(&impostor));
    let max_tar = per_model_tar.iter().copied().fold(0.0, f64::max);
    // Compare counts so the union bound is checked without rounding.
    let fused_fp = (fmr * N_IMP as f64).round() as usize;
    let sum_fp: usize = per_model_fmr.iter().map(|f| (f * N_IMP as f64).round() as usize).sum();
    check(
        tar >= max_tar && fused_fp <= sum_fp,
        format!("fused TAR {tar:.4} >= max per-model {max_tar:.4}; fused false matches {fused_fp} <= sum {sum_fp}"),
    )
}

fn fusion_benefit() -> Outcome {
    let subset: ModelSubset = "O,R,M".parse().unwrap();
    let weights = FusionWeights::for_subset(subset);
    let encoder = Encoder::new(EncoderConfig::default()).unwrap();
    let params = TransformParams::default();
    let (mut o_only, mut fused) = (Vec::new(), Vec::new());
    for seed in 0..20u64 {
        let spec = SyntheticSpec {
            n_subjects: 100,
            impressions_per_subject: 4,
            noise_level: 0.4,
            seed,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let mut g = Gallery::new(192).unwrap();
        let mut probes = Vec::new();
        for s in &data.samples {
            let ens = encoder.encode_ensemble(&s.image, s.minutiae.as_ref(), subset, &params).unwrap();
            // The fused embedding is stored in the otherwise unused X column.
            let views = BTreeMap::from([
                (ModelTag::O, ens[&ModelTag::O].clone()),
                (ModelTag::X, feature_fuse_centroid(&ens, &weights).unwrap()),
            ]);
            if s.impression == 0 {
                g.enroll(s.subject.clone(), &views).unwrap();
            } else {
                probes.push((s.subject.clone(), views));
            }
        }
        let rank1 = |tag| {
            let hits = probes
                .iter()
                .filter(|(truth, v)| g.search_topk(tag, &v[&tag], 1).unwrap().top().unwrap().id == *truth)
                .count();
            hits as f64 / probes.len() as f64
        };
        o_only.push(rank1(ModelTag::O));
        fused.push(rank1(ModelTag::X));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mf, mo) = (mean(&fused), mean(&o_only));
    let t = two_sample_t_test(&fused, &o_only, 0.05).unwrap();
    check(
        mf >= mo && t.t >= 0.0,
        format!(
            "mean rank-1 fused {mf:.4} vs O-only {mo:.4}; Welch t = {:.3}, df = {:.1}, significant at 0.05: {}",
            t.t, t.df, t.significant
        ),
    )
}

fn fvc_counts() -> Outcome {
    let subjects: BTreeMap<SubjectId, Vec<usize>> = (0..100).map(|i| (id(i), (0..8).collect())).collect();
    let p = build_pairs(&subjects, PairingProtocol::FvcStyle).unwrap();
    check(
        p.genuine.len() == 2800 && p.impostor.len() == 4950,
        format!("{} genuine, {} impostor pairs", p.genuine.len(), p.impostor.len()),
    )
}

fn monotonicity() -> Outcome {
    let rates = [1e-3, 2e-3, 5e-3, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0];
    for seed in 0..10u64 {
        let mut r = rng(700 + seed);
        let imp = Normal::new(0.0, 0.15).unwrap();
        let gen = Normal::new(0.4, 0.2).unwrap();
        let s = ScoreSample {
            genuine: (0..1000).map(|_| gen.sample(&mut r)).collect(),
            impostor: (0..1000).map(|_| imp.sample(&mut r)).collect(),
        };
        let tars: Vec<f64> = rates.iter().map(|&f| operating_point(&s, f).unwrap().tar).collect();
        if tars.windows(2).any(|w| w[1] < w[0]) {
            return Err(format!("seed {seed}: TAR decreases with FMR: {tars:?}"));
        }

        let mut g = Gallery::new(32).unwrap();
        let centers: Vec<Embedding> = (0..100).map(|_| random_embedding(&mut r, 32)).collect();
        for (i, c) in centers.iter().enumerate() {
            g.append(ModelTag::O, &id(i), c).unwrap();
        }
        let results: Vec<_> = (0..1000)
            .map(|_| {
                let truth = r.random_range(0..100);
                let v: Vec<f64> = centers[truth]
                    .as_slice()
                    .iter()
                    .map(|&x| x as f64 + 0.3 * r.sample::<f64, _>(StandardNormal))
                    .collect();
                (g.search_topk(ModelTag::O, &Embedding::normalize(&v).unwrap(), 20).unwrap(), id(truth))
            })
            .collect();
        let curve = cmc(&results, 20).unwrap();
        if curve.hits_at_rank.windows(2).any(|w| w[1] < w[0]) {
            return Err(format!("seed {seed}: CMC decreases with rank"));
        }

        let outcome = OpenSetOutcome {
            mated: s
                .genuine
                .iter()
                .map(|&score| {
                    let truth = id(0);
                    let retrieved = if r.random::<f64>() < 0.02 { id(1) } else { truth.clone() };
                    MatedTop { retrieved, score, truth }
                })
                .collect(),
            nonmated: s.impostor.clone(),
        };
        let mut thresholds: Vec<f64> = s.impostor.iter().chain(&s.genuine).copied().collect();
        thresholds.sort_by(f64::total_cmp);
        let fpir: Vec<f64> = thresholds.iter().map(|&t| rate_at_or_above(&outcome.nonmated, t)).collect();
        if fpir.windows(2).any(|w| w[1] > w[0]) {
            return Err(format!("seed {seed}: FPIR increases with threshold"));
        }
        let points: Vec<_> = [0.05, 0.1, 0.2, 0.4, 0.8].iter().map(|&f| fpir_at_fnir(&outcome, f).unwrap()).collect();
        if points.windows(2).any(|w| w[1].threshold < w[0].threshold || w[1].fpir > w[0].fpir) {
            return Err(format!("seed {seed}: FPIR at FNIR not monotone"));
        }
    }
    check(true, "TAR(FMR), CMC(rank) and FPIR(threshold) monotone on 10 seeds x 1000 samples".into())
}

fn transform_invariants() -> Outcome {
    const N: usize = 200;
    let mut r = rng(8);
    for i in 0..N {
        let img = random_image(&mut r, 48);
        if flip_x(&flip_x(&img)) != img || flip_y(&flip_y(&img)) != img {
            return Err(format!("image {i}: flip is not an involution"));
        }
        if flip_x(&flip_y(&img)) != flip_y(&flip_x(&img)) {
            return Err(format!("image {i}: flips do not commute"));
        }

        let (w, h) = (img.width(), img.height());
        let value: u8 = r.random();
        let k = 2 * r.random_range(0..8) + 1;
        let p = BlurParams::new(k, r.random_range(0.3..6.0)).unwrap();
        let flat = GrayscaleImage::filled(w, h, value).unwrap();
        if gaussian_blur(&flat, &p) != flat {
            return Err(format!("image {i}: blur changed a constant {value} image (k = {k})"));
        }

        let bin =
            ridge_binarize(&img, &RidgeParams::new(2 * r.random_range(1..10) + 1, r.random_range(0.0..10.0)).unwrap());
        if bin.pixels().iter().any(|&v| v != 0 && v != 255) {
            return Err(format!("image {i}: binarization produced a third value"));
        }

        let big = random_image(&mut r, 160);
        let (bw, bh) = (big.width() as u32, big.height() as u32);
        let points: Vec<MinutiaPoint> = (0..r.random_range(0..4))
            .map(|_| MinutiaPoint {
                x: r.random_range(0..bw),
                y: r.random_range(0..bh),
                angle: 0.0,
                kind: MinutiaKind::Ending,
                quality: 50,
            })
            .collect();
        let t = MinutiaeTemplate::new(bw, bh, points.clone()).unwrap();
        let blur = BlurParams::default();
        let gated = minutiae_soft_gate(&big, &t, &blur).unwrap();
        let blurred = gaussian_blur(&big, &blur);
        let half = (MINUTIA_PATCH / 2) as i64;
        for row in 0..big.height() {
            for col in 0..big.width() {
                let inside = points.iter().any(|m| {
                    let (dx, dy) = (col as i64 - m.x as i64, row as i64 - m.y as i64);
                    (-half..half).contains(&dx) && (-half..half).contains(&dy)
                });
                let want = if inside { big.get(row, col) } else { blurred.get(row, col) };
                if gated.get(row, col) != want {
                    return Err(format!("image {i}: soft gate wrong at ({row}, {col})"));
                }
            }
        }
    }
    check(true, format!("{N} random images: flips, blur of constants, binarization, soft gate"))
}

fn format_round_trips() -> Outcome {
    const N: usize = 200;
    let mut r = rng(9);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for i in 0..N {
        let img = random_image(&mut r, 64);
        let bytes = encode_pgm(&img);
        let path = dir.path().join(format!("{i}.pgm"));
        write_pgm(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap();
        if back != img || encode_pgm(&back) != bytes || decode_pgm(&bytes).unwrap() != img {
            return Err(format!("PGM {i} did not round-trip"));
        }
    }
    for i in 0..N {
        let dim = r.random_range(1..=256);
        let mut store = EmbeddingStore::new(dim).unwrap();
        for j in 0..r.random_range(0..20) {
            let tag = ModelTag::ALL[r.random_range(0..5)];
            let name = SubjectId::new(format!("s{i}-{j}-{}", "x".repeat(r.random_range(0..40)))).unwrap();
            store.push(tag, name, random_embedding(&mut r, dim)).unwrap();
        }
        let path = dir.path().join(format!("{i}.fpes"));
        store.write(&path).unwrap();
        let back = EmbeddingStore::read(&path).unwrap();
        if back != store || back.to_bytes() != std::fs::read(&path).unwrap() {
            return Err(format!("store {i} did not round-trip"));
        }
    }
    for i in 0..N {
        let (w, h) = (r.random_range(1..=1000), r.random_range(1..=1000));
        let kinds = [MinutiaKind::Ending, MinutiaKind::Bifurcation, MinutiaKind::Other];
        let points: Vec<MinutiaPoint> = (0..r.random_range(0..30))
            .map(|_| MinutiaPoint {
                x: r.random_range(0..w),
                y: r.random_range(0..h),
                angle: r.random_range(0.0..360.0),
                kind: kinds[r.random_range(0..3)],
                quality: r.random_range(0..=100),
            })
            .collect();
        let t = MinutiaeTemplate::new(w, h, points).unwrap();
        let back = parse_minutiae_text(&serialize_minutiae_text(&t)).unwrap();
        let same = back.width() == w
            && back.height() == h
            && back.len() == t.len()
            && t.points().iter().zip(back.points()).all(|(a, b)| {
                let d = (a.angle - b.angle).rem_euclid(360.0);
                a.x == b.x && a.y == b.y && a.kind == b.kind && a.quality == b.quality && d.min(360.0 - d) <= 0.05
            });
        if !same {
            return Err(format!("minutiae template {i} did not round-trip"));
        }
    }
    check(true, format!("{N} PGM images, {N} stores and {N} minutiae templates round-trip"))
}

fn calibration_exactness() -> Outcome {
    let mut r = rng(10);
    for i in 0..1000 {
        let n = r.random_range(1..=400);
        // Coarse quantization in some samples produces ties.
        let step = [0.0, 0.01, 0.1][r.random_range(0..3)];
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = r.random_range(-1.0..1.0);
                if step > 0.0 {
                    (v / step).round() * step
                } else {
                    v
                }
            })
            .collect();
        let target = [r.random_range(1e-4..1.0), 1.0 / n as f64, 1e-3, 0.5][r.random_range(0..4)];
        let t = calibrate_threshold(&scores, target).unwrap();
        let fmr = rate_at_or_above(&scores, t);
        if fmr > target {
            return Err(format!("sample {i}: FMR {fmr} above target {target}"));
        }
        let best = scores.iter().map(|&c| rate_at_or_above(&scores, c)).filter(|&f| f <= target).fold(0.0, f64::max);
        if fmr != best {
            return Err(format!("sample {i}: FMR {fmr} but {best} is achievable within {target}"));
        }
    }
    check(true, "1000 random impostor samples: FMR within target and maximal".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("throughput", throughput),
        ("exact search oracle", exact_search_oracle),
        ("centroid minimizes loss", centroid_minimizer),
        ("OR fusion dominance and union bound", or_fusion),
        ("fusion benefit", fusion_benefit),
        ("FVC pair counts", fvc_counts),
        ("metric monotonicity", monotonicity),
        ("transform invariants", transform_invariants),
        ("format round-trips", format_round_trips),
        ("calibration exactness", calibration_exactness),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {status} {name}: {detail} [{secs:.1}s]", n + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
