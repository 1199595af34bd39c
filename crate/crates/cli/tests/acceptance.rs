//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on
//! any failure. Quantities are checked against oracles written here,
//! independently of the library code under test.

use std::collections::VecDeque;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use aerial_parse::fusion::{fuse_probabilities, DEFAULT_SCALE_WEIGHTS};
use aerial_parse::metrics::{
    accumulate_cm, average_accuracy, kappa, mean_average_precision, miou, multilabel_metrics, overall_accuracy,
    ConfusionMatrix, MetricReport,
};
use aerial_parse::model::{
    attention_fuse, evaluate_tiles, image_to_tensor, load_checkpoint, save_checkpoint, train, AttentionWeights,
    BackboneConfig, Checkpoint, MscConfig, Network, TaskHead, Target, TileSet, TrainOptions,
};
use aerial_parse::parser::{
    interior_mask, parse_image, parse_with_regions, ModelClassifier, OracleClassifier, ParseConfig,
};
use aerial_parse::raster::{decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, write_ppm, LabelMap, Plane, RgbImage};
use aerial_parse::segmentation::{graph_segment, graph_segment_smoothed, RegionMap};
use aerial_parse::synthdata::{
    desk_palette, generate_scene_raster, generate_tiles, texture_family, Layout, SceneSpec, TextureClass,
    TileDatasetSpec,
};
use aerial_parse::tensor::{check_gradients, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = fn(&mut Ctx) -> Outcome;

struct Ctx {
    dir: tempfile::TempDir,
    desk: Option<Checkpoint>,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("{what} took {t:.1?}, limit {limit:?}"))
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- gradients

fn gradient_integrity(_: &mut Ctx) -> Outcome {
    let names = |n: usize| (0..n).map(|i| format!("c{i}")).collect::<Vec<_>>();
    let cfg = BackboneConfig::desk(vec![
        TaskHead::multi_class("g", &names(5)),
        TaskHead::multi_class("m", &names(8)),
    ]);
    ensure(cfg.input_size == 32 && cfg.stage_channels == [8, 16, 32], || "not desk shapes".into())?;
    let net = Network::init(cfg, 21).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let image = Tensor::from_fn(&[3, 32, 32], |_| rng.gen_range(-1.0..1.0));
    let targets = [Target::Class(3), Target::Class(6)];
    let msc = MscConfig::default();
    let start = Instant::now();
    let e = check_gradients(net.params(), 1e-5, |g, p| net.graph_objective(g, p, &image, &targets, &msc))
        .map_err(err)?;
    ensure(e <= 1e-4, || format!("max relative error {e:.3e} > 1e-4"))?;
    within(start, Duration::from_secs(120), "gradient check")?;
    Ok(format!(
        "max rel err {e:.2e} over {} params in {:.1?}",
        net.param_count(),
        start.elapsed()
    ))
}

// ---------------------------------------------------------------- attention

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `SF · (1 + σ(conv1x1(nearest_up(DF))))`, element by element.
fn attention_oracle(sf: &Tensor, df: &Tensor, w: &AttentionWeights) -> Vec<f64> {
    let (cs, h, wd) = sf.dims3().unwrap();
    let (cd, dh, _) = df.dims3().unwrap();
    let f = h / dh;
    let mut out = Vec::with_capacity(cs * h * wd);
    for c in 0..cs {
        for y in 0..h {
            for x in 0..wd {
                let mut z = w.bias.data()[c];
                for k in 0..cd {
                    z += w.kernel.data()[c * cd + k] * df.at3(k, y / f, x / f);
                }
                out.push(sf.at3(c, y, x) * (1.0 + sigmoid(z)));
            }
        }
    }
    out
}

fn attention_algebra(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for (cs, cd, side, f) in [(8, 16, 16, 2), (16, 32, 8, 2), (3, 5, 12, 3), (4, 4, 4, 4)] {
        let sf = Tensor::from_fn(&[cs, side, side], |_| rng.gen_range(-2.0..2.0));
        let df = Tensor::from_fn(&[cd, side / f, side / f], |_| rng.gen_range(-2.0..2.0));
        let zero = attention_fuse(&sf, &df, &AttentionWeights::zeros(cs, cd)).map_err(err)?;
        for (a, s) in zero.data().iter().zip(sf.data()) {
            ensure(*a == 1.5 * s, || format!("zero weights: {a} != 1.5 * {s}"))?;
        }
        let w = AttentionWeights {
            kernel: Tensor::from_fn(&[cs, cd, 1, 1], |_| rng.gen_range(-1.0..1.0)),
            bias: Tensor::from_fn(&[cs], |_| rng.gen_range(-1.0..1.0)),
        };
        let got = attention_fuse(&sf, &df, &w).map_err(err)?;
        for (a, b) in got.data().iter().zip(attention_oracle(&sf, &df, &w)) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("random weights: max deviation {worst:.3e}"))?;
    Ok(format!("zero weights exact 1.5·SF; random max dev {worst:.1e}"))
}

// ---------------------------------------------------------------- fusion

fn fusion_exactness(_: &mut Ctx) -> Outcome {
    let w = DEFAULT_SCALE_WEIGHTS.to_vec();
    let p = fuse_probabilities(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], &w).map_err(err)?;
    ensure(
        (p.probs[0] - 0.42857).abs() <= 1e-5 && (p.probs[1] - 0.57142).abs() <= 1e-5 && p.label == 1,
        || format!("unit example gave {:?}", p.probs),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let classes = rng.gen_range(2..12);
        let scales = rng.gen_range(1..5);
        let probs: Vec<Vec<f64>> = (0..scales)
            .map(|_| {
                let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.0..1.0f64).powi(3)).collect();
                let s: f64 = raw.iter().sum::<f64>().max(1e-300);
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let weights: Vec<f64> = (0..scales).map(|_| rng.gen_range(0.01..2.0)).collect();
        let fused = fuse_probabilities(&probs, &weights).map_err(err)?;
        worst = worst.max((fused.probs.iter().sum::<f64>() - 1.0).abs());
        let c: f64 = rng.gen_range(1e-3..1e3);
        let scaled: Vec<f64> = weights.iter().map(|w| w * c).collect();
        let again = fuse_probabilities(&probs, &scaled).map_err(err)?;
        ensure(again.label == fused.label, || {
            format!("argmax changed under rescaling by {c}: {} vs {}", again.label, fused.label)
        })?;
    }
    ensure(worst <= 1e-9, || format!("sum deviates by {worst:.3e}"))?;
    Ok(format!(
        "p = ({:.5}, {:.5}); 10^4 sums within {worst:.1e}; argmax scale-invariant",
        p.probs[0], p.probs[1]
    ))
}

// ---------------------------------------------------------------- metrics

struct PixelOracle {
    oa: f64,
    aa: f64,
    kappa: f64,
    miou: f64,
}

/// Direct counting over label pairs, no confusion matrix.
fn pixel_oracle(preds: &[usize], truths: &[usize], classes: usize) -> PixelOracle {
    let n = preds.len() as f64;
    let agree = preds.iter().zip(truths).filter(|(p, t)| p == t).count() as f64;
    let mut accs = Vec::new();
    let mut ious = Vec::new();
    let mut chance = 0.0;
    for c in 0..classes {
        let in_truth = truths.iter().filter(|&&t| t == c).count();
        let in_pred = preds.iter().filter(|&&p| p == c).count();
        let both = preds.iter().zip(truths).filter(|(&p, &t)| p == c && t == c).count();
        if in_truth > 0 {
            accs.push(both as f64 / in_truth as f64);
        }
        if in_truth + in_pred > 0 {
            ious.push(both as f64 / (in_truth + in_pred - both) as f64);
        }
        chance += (in_truth as f64 / n) * (in_pred as f64 / n);
    }
    let po = agree / n;
    PixelOracle {
        oa: po,
        aa: accs.iter().sum::<f64>() / accs.len() as f64,
        kappa: if chance == 1.0 { f64::from(po == 1.0) } else { (po - chance) / (1.0 - chance) },
        miou: ious.iter().sum::<f64>() / ious.len() as f64,
    }
}

struct MultiOracle {
    cp: f64,
    cr: f64,
    cf1: f64,
    op: f64,
    or: f64,
    of1: f64,
    map: f64,
    per_class_recall: Vec<Option<f64>>,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Set-based precision/recall and rank-counting average precision.
fn multilabel_oracle(scores: &[Vec<f64>], truths: &[Vec<usize>], tau: f64) -> MultiOracle {
    let labels = scores[0].len();
    let has = |i: usize, c: usize| truths[i].contains(&c);
    let (mut tp_all, mut pred_all, mut pos_all) = (0usize, 0usize, 0usize);
    let (mut ps, mut rs, mut aps) = (Vec::new(), Vec::new(), Vec::new());
    let mut per_class_recall = Vec::new();
    for c in 0..labels {
        let predicted: Vec<usize> = (0..scores.len()).filter(|&i| scores[i][c] > tau).collect();
        let positive: Vec<usize> = (0..scores.len()).filter(|&i| has(i, c)).collect();
        let tp = predicted.iter().filter(|i| positive.contains(i)).count();
        tp_all += tp;
        pred_all += predicted.len();
        pos_all += positive.len();
        if positive.is_empty() {
            per_class_recall.push(None);
            continue;
        }
        let p = if predicted.is_empty() { 0.0 } else { tp as f64 / predicted.len() as f64 };
        let r = tp as f64 / positive.len() as f64;
        ps.push(p);
        rs.push(r);
        per_class_recall.push(Some(r));
        // rank of i = items scored higher, or equal and earlier
        let ap: f64 = positive
            .iter()
            .map(|&i| {
                let ahead = |j: usize| scores[j][c] > scores[i][c] || (scores[j][c] == scores[i][c] && j <= i);
                let rank = (0..scores.len()).filter(|&j| ahead(j)).count();
                let hits = positive.iter().filter(|&&j| ahead(j)).count();
                hits as f64 / rank as f64
            })
            .sum::<f64>()
            / positive.len() as f64;
        aps.push(ap);
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (cp, cr) = (mean(&ps), mean(&rs));
    let (op, or) = (ratio(tp_all, pred_all), ratio(tp_all, pos_all));
    MultiOracle {
        cp,
        cr,
        cf1: harmonic(cp, cr),
        op,
        or,
        of1: harmonic(op, or),
        map: mean(&aps),
        per_class_recall,
    }
}

fn random_multilabel(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let n = rng.gen_range(1..40);
    let labels = rng.gen_range(1..10);
    let quantized = rng.gen_bool(0.3);
    let scores = (0..n)
        .map(|_| {
            (0..labels)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.0..1.0);
                    if quantized {
                        (v * 8.0).round() / 8.0
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    let mut truths: Vec<Vec<usize>> = (0..n)
        .map(|_| (0..labels).filter(|_| rng.gen_bool(0.35)).collect())
        .collect();
    if truths.iter().all(Vec::is_empty) {
        truths[0].push(0);
    }
    (scores, truths)
}

fn metrics_oracle(_: &mut Ctx) -> Outcome {
    let cm = ConfusionMatrix::from_rows(&[vec![2, 1], vec![1, 2]]).map_err(err)?;
    let k = kappa(&cm).map_err(err)?;
    ensure((k - 0.3333).abs() <= 1e-4, || format!("kappa example {k}"))?;
    let ap = mean_average_precision(&[vec![0.9], vec![0.8], vec![0.7]], &[vec![0], vec![], vec![0]]).map_err(err)?;
    ensure((ap - 0.8333).abs() <= 1e-4, || format!("AP example {ap}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut track = |name: &str, a: f64, b: f64| -> Result<(), String> {
        let d = (a - b).abs();
        worst = worst.max(d);
        ensure(d <= 1e-10, || format!("{name}: library {a} vs oracle {b}"))
    };
    for _ in 0..1000 {
        let classes = rng.gen_range(1..7);
        let n = rng.gen_range(1..200);
        let skew: f64 = rng.gen_range(0.0..1.0);
        let truths: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let preds: Vec<usize> = truths
            .iter()
            .map(|&t| if rng.gen_bool(skew) { t } else { rng.gen_range(0..classes) })
            .collect();
        let cm = accumulate_cm(&preds, &truths, classes, None).map_err(err)?;
        let o = pixel_oracle(&preds, &truths, classes);
        track("OA", overall_accuracy(&cm).map_err(err)?, o.oa)?;
        track("AA", average_accuracy(&cm).map_err(err)?.value, o.aa)?;
        track("kappa", kappa(&cm).map_err(err)?, o.kappa)?;
        track("mIoU", miou(&cm).map_err(err)?, o.miou)?;

        let (scores, sets) = random_multilabel(&mut rng);
        let tau = [0.3, 0.5, 0.75][rng.gen_range(0..3)];
        let m = multilabel_metrics(&scores, &sets, tau).map_err(err)?;
        let o = multilabel_oracle(&scores, &sets, tau);
        for (name, a, b) in [
            ("CP", m.cp, o.cp),
            ("CR", m.cr, o.cr),
            ("CF1", m.cf1, o.cf1),
            ("OP", m.op, o.op),
            ("OR", m.or, o.or),
            ("OF1", m.of1, o.of1),
        ] {
            track(name, a, b)?;
        }
        track("mAP", mean_average_precision(&scores, &sets).map_err(err)?, o.map)?;
    }
    Ok(format!("kappa {k:.4}, AP {ap:.4}; 1000 instances, max dev {worst:.1e}"))
}

fn recall_monotonicity(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..100 {
        let (scores, sets) = random_multilabel(&mut rng);
        let lo = multilabel_metrics(&scores, &sets, 0.5).map_err(err)?;
        let hi = multilabel_metrics(&scores, &sets, 0.75).map_err(err)?;
        ensure(hi.or <= lo.or, || format!("case {case}: OR {} > {}", hi.or, lo.or))?;
        for (c, (a, b)) in hi.per_class.iter().zip(&lo.per_class).enumerate() {
            ensure(a.recall <= b.recall, || format!("case {case} class {c}: recall {} > {}", a.recall, b.recall))?;
        }
        let (ohi, olo) = (
            multilabel_oracle(&scores, &sets, 0.75),
            multilabel_oracle(&scores, &sets, 0.5),
        );
        for (a, b) in ohi.per_class_recall.iter().zip(&olo.per_class_recall) {
            ensure(a <= b, || format!("case {case}: oracle recall rose"))?;
        }
    }
    Ok("OR and per-class recall at 0.75 <= at 0.5 on 100 score sets".into())
}

// ---------------------------------------------------------------- pipeline

fn scene(classes: Vec<TextureClass>, points: usize, seed: u64) -> Result<(RgbImage, LabelMap), String> {
    let spec = SceneSpec {
        classes,
        layout: Layout::random_voronoi(points, 512, 512, seed),
        width: 512,
        height: 512,
    };
    generate_scene_raster(&spec, seed).map_err(err)
}

fn masked_accuracy(pred: &LabelMap, truth: &LabelMap, mask: &[bool]) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for ((p, t), &m) in pred.as_slice().iter().zip(truth.as_slice()).zip(mask) {
        if m {
            n += 1;
            hit += usize::from(p == t);
        }
    }
    hit as f64 / n as f64
}

fn oracle_pipeline(_: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let cfg = ParseConfig::desk();
    let band = cfg.effective_stride();
    let mut accs = Vec::new();
    for seed in [0, 1, 2] {
        let (img, truth) = scene(desk_palette().into_iter().take(4).collect(), 12, seed)?;
        let oracle = OracleClassifier::new(truth.clone(), 4).map_err(err)?;
        let regions = RegionMap::from_components(&truth).map_err(err)?;
        let exact = parse_with_regions(&img, &oracle, &cfg, regions).map_err(err)?;
        ensure(exact.labels == truth, || format!("seed {seed}: ground-truth regions not exact"))?;
        let seg = parse_image(&img, &oracle, &cfg).map_err(err)?;
        let acc = masked_accuracy(&seg.labels, &truth, &interior_mask(&truth, band));
        ensure(acc >= 0.99, || format!("seed {seed}: interior accuracy {acc:.4} < 0.99"))?;
        accs.push(format!("{acc:.4}"));
    }
    within(start, Duration::from_secs(60), "oracle pipeline")?;
    Ok(format!(
        "GT regions 100%; segmented interior (band {band}) {} in {:.1?}",
        accs.join("/"),
        start.elapsed()
    ))
}

fn tile_set(classes: &[TextureClass], per_class: usize, seed: u64, offset: usize) -> Result<(TileSet, Vec<usize>), String> {
    let spec = TileDatasetSpec {
        classes: classes.to_vec(),
        counts: vec![per_class; classes.len()],
        tile_size: 32,
        source_sizes: vec![32, 64, 128],
    };
    let mut set = TileSet::default();
    let mut labels = Vec::new();
    for (img, c) in generate_tiles(&spec, seed).map_err(err)? {
        set.push(image_to_tensor(&img), Target::Class(c + offset));
        labels.push(c + offset);
    }
    Ok((set, labels))
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

fn desk_options(epochs: usize, seed: u64, msc: MscConfig) -> TrainOptions {
    TrainOptions {
        epochs,
        seed,
        msc,
        ..TrainOptions::default()
    }
}

fn desk_learning(ctx: &mut Ctx) -> Outcome {
    let palette = desk_palette();
    let names: Vec<&str> = palette.iter().map(|c| c.name.as_str()).collect();
    let config = BackboneConfig::desk(vec![TaskHead::multi_class("scene", &names)]);
    let (train_set, _) = tile_set(&palette, 200, 1, 0)?;
    let (test_set, test_labels) = tile_set(&palette, 50, 2, 0)?;
    let opts = desk_options(20, 7, MscConfig::default());
    let start = Instant::now();
    let first = train(config.clone(), std::slice::from_ref(&train_set), &opts).map_err(err)?;
    let elapsed = start.elapsed();
    let pred = evaluate_tiles(&first.checkpoint.network, &test_set.images, 0, &DEFAULT_SCALE_WEIGHTS).map_err(err)?;
    let oa = accuracy(&pred, &test_labels);
    let second = train(config, std::slice::from_ref(&train_set), &opts).map_err(err)?;
    let identical = first.checkpoint.to_bytes() == second.checkpoint.to_bytes();
    ctx.desk = Some(first.checkpoint);
    ensure(oa >= 0.95, || format!("held-out OA {oa:.4} < 0.95"))?;
    ensure(identical, || "repeat run produced a different checkpoint".into())?;
    ensure(elapsed < Duration::from_secs(300), || format!("training took {elapsed:.1?}"))?;
    Ok(format!(
        "held-out OA {oa:.4} (400 tiles); repeat bit-identical; trained in {elapsed:.1?}"
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn msc_direction(_: &mut Ctx) -> Outcome {
    let family = texture_family("t", 8, 3);
    let main_classes = &family[..5];
    let names = |cs: &[TextureClass]| cs.iter().map(|c| c.name.clone()).collect::<Vec<_>>();
    let config = BackboneConfig::desk(vec![
        TaskHead::multi_class("main", &names(main_classes)),
        TaskHead::multi_class("aux", &names(&family)),
    ]);
    let (test_set, test_labels) = tile_set(main_classes, 60, 99, 0)?;
    let mut results = Vec::new();
    for mu in [0.5, 0.1] {
        let mut oas = Vec::new();
        for s in 0..5u64 {
            let (main, _) = tile_set(main_classes, 40, 10 + s, 0)?;
            let (aux, _) = tile_set(&family, 40, 20 + s, 0)?;
            let t = train(config.clone(), &[main, aux], &desk_options(10, s, MscConfig::with_mu_g(mu))).map_err(err)?;
            let pred = evaluate_tiles(&t.checkpoint.network, &test_set.images, 0, &DEFAULT_SCALE_WEIGHTS).map_err(err)?;
            oas.push(accuracy(&pred, &test_labels));
        }
        results.push((mu, median(oas.clone()), oas));
    }
    let (hi, lo) = (results[0].1, results[1].1);
    let detail = format!(
        "median main OA {hi:.4} at mu_g 0.5 {:?} vs {lo:.4} at mu_g 0.1 {:?}",
        results[0].2.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
        results[1].2.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
    );
    ensure(hi > lo, || detail.clone())?;
    Ok(detail)
}

fn end_to_end(ctx: &mut Ctx) -> Outcome {
    let ckpt = ctx.desk.clone().ok_or("no desk checkpoint (desk learning did not train)")?;
    let (img, truth) = scene(desk_palette(), 16, 100)?;
    let start = Instant::now();
    let classifier = ModelClassifier::new(ckpt.network, "scene", DEFAULT_SCALE_WEIGHTS.to_vec()).map_err(err)?;
    let out = parse_image(&img, &classifier, &ParseConfig::desk()).map_err(err)?;
    let elapsed = start.elapsed();
    let p: Vec<usize> = out.labels.as_slice().iter().map(|&l| l as usize).collect();
    let t: Vec<usize> = truth.as_slice().iter().map(|&l| l as usize).collect();
    let cm = accumulate_cm(&p, &t, 8, None).map_err(err)?;
    let report = MetricReport::from_confusion("pixel", &cm, true).map_err(err)?;
    for line in report.to_table().lines() {
        println!("        {line}");
    }
    let m = report.miou.unwrap_or(0.0);
    ensure(report.kappa >= 0.8 && m >= 0.7, || {
        format!("kappa {:.4} (>= 0.8), mIoU {m:.4} (>= 0.7)", report.kappa)
    })?;
    within(start, Duration::from_secs(180), "parse")?;
    Ok(format!(
        "kappa {:.4}, mIoU {m:.4}, OA {:.4}, {} regions, parsed in {elapsed:.1?}",
        report.kappa,
        report.oa,
        out.regions.region_count()
    ))
}

// ---------------------------------------------------------------- segmentation

/// Checks partition, 4-connectivity and minimum size by flood fill.
fn check_region_map(rm: &RegionMap, min_size: usize) -> Result<(), String> {
    let (w, h) = (rm.width(), rm.height());
    let n = rm.region_count();
    let mut size = vec![0usize; n];
    for y in 0..h {
        for x in 0..w {
            let id = rm.get(x, y);
            ensure(id < n, || format!("id {id} >= count {n}"))?;
            size[id] += 1;
        }
    }
    ensure(size.iter().all(|&s| s > 0), || "unused region id".into())?;
    let mut seen = vec![false; w * h];
    let mut visited_ids = vec![false; n];
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        let id = rm.get(start % w, start / w);
        ensure(!visited_ids[id], || format!("region {id} is not 4-connected"))?;
        visited_ids[id] = true;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 0;
        while let Some(i) = queue.pop_front() {
            count += 1;
            let (x, y) = (i % w, i / w);
            let mut push = |nx: usize, ny: usize| {
                let j = ny * w + nx;
                if !seen[j] && rm.get(nx, ny) == id {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                push(x - 1, y);
            }
            if x + 1 < w {
                push(x + 1, y);
            }
            if y > 0 {
                push(x, y - 1);
            }
            if y + 1 < h {
                push(x, y + 1);
            }
        }
        ensure(count == size[id], || format!("region {id} is not 4-connected"))?;
    }
    if n > 1 {
        ensure(size.iter().all(|&s| s >= min_size), || format!("region below min_size {min_size}"))?;
    }
    Ok(())
}

fn random_image(rng: &mut ChaCha8Rng) -> RgbImage {
    let (w, h) = (rng.gen_range(4..64), rng.gen_range(4..64));
    if rng.gen_bool(0.5) {
        let data = (0..3 * w * h).map(|_| rng.gen()).collect();
        return RgbImage::from_raw(w, h, data).unwrap();
    }
    let k = rng.gen_range(2..8);
    let sites: Vec<(usize, usize, [u8; 3])> = (0..k)
        .map(|_| (rng.gen_range(0..w), rng.gen_range(0..h), rng.gen()))
        .collect();
    let noise = rng.gen_range(0.0..40.0);
    let mut img = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let d = |s: &(usize, usize, [u8; 3])| x.abs_diff(s.0).pow(2) + y.abs_diff(s.1).pow(2);
            let base = sites.iter().min_by_key(|s| d(s)).unwrap().2;
            let px = base.map(|v| (f64::from(v) + rng.gen_range(-noise..=noise)).clamp(0.0, 255.0) as u8);
            img.set(x, y, px);
        }
    }
    img
}

fn segmentation_properties(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let ks = [1.0, 10.0, 50.0, 150.0, 300.0, 1000.0, 5000.0];
    let mut maps = 0;
    for case in 0..100 {
        let img = random_image(&mut rng);
        let min_size = rng.gen_range(1..40);
        let sigma = if rng.gen_bool(0.5) { 0.0 } else { 0.8 };
        let mut prev = usize::MAX;
        for &k in &ks {
            let rm = if sigma == 0.0 {
                graph_segment(&img, k, min_size)
            } else {
                graph_segment_smoothed(&img, k, min_size, sigma)
            }
            .map_err(err)?;
            check_region_map(&rm, min_size).map_err(|e| format!("case {case} k {k}: {e}"))?;
            ensure(rm.region_count() <= prev, || {
                format!("case {case}: count rose to {} at k {k} from {prev}", rm.region_count())
            })?;
            prev = rm.region_count();
            maps += 1;
        }
    }
    Ok(format!("100 images, {maps} region maps valid; counts monotone over k"))
}

// ---------------------------------------------------------------- formats

fn format_round_trips(ctx: &mut Ctx) -> Outcome {
    let dir = ctx.dir.path();
    let ckpt = ctx.desk.clone().ok_or("no desk checkpoint (desk learning did not train)")?;
    let path = dir.join("desk.ckpt");
    save_checkpoint(&ckpt, &path).map_err(err)?;
    let back = load_checkpoint(&path).map_err(err)?;
    for (a, b) in ckpt.network.params().iter().zip(back.network.params()) {
        ensure(a.shape() == b.shape(), || "parameter shape changed".into())?;
        for (x, y) in a.data().iter().zip(b.data()) {
            ensure((*x as f32).to_bits() == (*y as f32).to_bits(), || format!("{x} reloaded as {y}"))?;
        }
    }
    ensure(back.to_bytes() == fs::read(&path).map_err(err)?, || "re-encoded checkpoint differs".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let (w, h) = (rng.gen_range(1..50), rng.gen_range(1..50));
        let img = RgbImage::from_raw(w, h, (0..3 * w * h).map(|_| rng.gen()).collect()).map_err(err)?;
        let bytes = encode_ppm(&img);
        let dec = decode_ppm(&bytes).map_err(err)?;
        ensure(dec == img && encode_ppm(&dec) == bytes, || "P6 round trip".into())?;
        for maxval in [255u16, 65535] {
            let plane = Plane::from_fn(w, h, |_, _| rng.gen_range(0..=maxval));
            let bytes = encode_pgm(&plane, maxval).map_err(err)?;
            let (dec, mv) = decode_pgm(&bytes).map_err(err)?;
            ensure(dec == plane && mv == maxval && encode_pgm(&dec, mv).map_err(err)? == bytes, || {
                format!("P5 round trip at maxval {maxval}")
            })?;
        }
    }

    let (img, _) = scene(desk_palette(), 16, 100)?;
    let small = img.crop(0, 0, 256, 256);
    let input = dir.join("scene.ppm");
    write_ppm(&input, &small).map_err(err)?;
    let cfg = dir.join("parse.toml");
    fs::write(
        &cfg,
        "[paths]\ncheckpoint = \"desk.ckpt\"\n[model]\ninput_size = 32\n[parse]\nwindows = [32, 64, 128]\ncanonical_input = 32\n",
    )
    .map_err(err)?;
    let run = |out: &Path, workers: &str| -> Result<Vec<u8>, String> {
        let status = Command::new(env!("CARGO_BIN_EXE_aerial-parse"))
            .args(["parse", "-c"])
            .arg(&cfg)
            .arg("-i")
            .arg(&input)
            .arg("-o")
            .arg(out)
            .args(["--workers", workers])
            .output()
            .map_err(err)?;
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        fs::read(out).map_err(err)
    };
    let a = run(&dir.join("a.pgm"), "1")?;
    let b = run(&dir.join("b.pgm"), "2")?;
    ensure(a == b, || "parse reruns differ".into())?;
    let (labels, _) = read_pgm(dir.join("a.pgm")).map_err(err)?;
    ensure((labels.width(), labels.height()) == (256, 256), || "output extent".into())?;
    Ok("checkpoint f32-exact; P6 and P5 (8/16-bit) byte-exact; parse reruns identical".into())
}

fn main() {
    let mut ctx = Ctx {
        dir: tempfile::tempdir().expect("temp dir"),
        desk: None,
    };
    let criteria: [(&str, Criterion); 11] = [
        ("gradient integrity", gradient_integrity),
        ("attention algebra", attention_algebra),
        ("fusion exactness", fusion_exactness),
        ("metrics oracle equivalence", metrics_oracle),
        ("recall monotonicity", recall_monotonicity),
        ("oracle pipeline", oracle_pipeline),
        ("desk-scale learning", desk_learning),
        ("MSC direction", msc_direction),
        ("end-to-end trained pipeline", end_to_end),
        ("segmentation properties", segmentation_properties),
        ("format round-trips", format_round_trips),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&mut ctx)))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>())));
        let t = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<28} {detail} [{t:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<28} {why} [{t:.1}s]");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
