use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aerial_parse::metrics::{accumulate_cm, MetricReport, MultiLabelReport};
use aerial_parse::model::{
    fine_tune, load_checkpoint, save_checkpoint, train as train_model, BackboneConfig, Checkpoint, TaskHead,
    TaskKind, TileSet,
};
use aerial_parse::parser::{
    parse_image, parse_with_regions, write_grid_map, Classifier, ModelClassifier, OracleClassifier,
};
use aerial_parse::raster::{read_pgm, read_ppm, write_label_map, write_ppm, LabelMap};
use aerial_parse::segmentation::{segment as segment_image, write_region_map, RegionMap};
use aerial_parse::synthdata::{
    desk_palette, generate_scene_raster, generate_tile_dataset, long_tail_counts, texture_family, Layout,
    SceneSpec, TextureClass, TileDatasetSpec,
};
use aerial_parse::taxonomy::{DatasetManifest, LabelTaxonomy};
use log::info;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::{
    ClassSelection, ClassifyArgs, EvalArgs, EvalMode, ParseArgs, ReportFormat, SegmentArgs, SynthSceneArgs,
    SynthTilesArgs,
};

/// Runs `f` on a single worker thread.
fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Internal {
            stage: "threads",
            message: e.to_string(),
        })?;
    Ok(pool.install(f))
}

fn write_file(stage: &'static str, path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))
}

fn read_text(stage: &'static str, path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))
}

fn print_header(cfg: &PipelineConfig, command: &str) {
    println!("aerial-parse {} {command}", env!("CARGO_PKG_VERSION"));
    print!("{}", cfg.header(command));
}

/// A manifest and its class table: `taxonomy` if given, else the
/// manifest's `#taxonomy=` reference relative to its directory.
fn load_dataset(manifest: &Path, taxonomy: Option<&Path>) -> CliResult<(DatasetManifest, LabelTaxonomy)> {
    let m = DatasetManifest::parse(&read_text("manifest", manifest)?)
        .map_err(|e| CliError::data("manifest", format!("{}: {e}", manifest.display())))?;
    let tax_path = match taxonomy {
        Some(p) => p.to_path_buf(),
        None if m.taxonomy_ref.is_empty() => {
            return Err(CliError::Config(format!(
                "paths.taxonomy is required: {} has no taxonomy reference",
                manifest.display()
            )))
        }
        None => base_dir(manifest).join(&m.taxonomy_ref),
    };
    let tax = LabelTaxonomy::parse(&read_text("taxonomy", &tax_path)?)
        .map_err(|e| CliError::data("taxonomy", format!("{}: {e}", tax_path.display())))?;
    m.validate(&tax)
        .map_err(|e| CliError::data("manifest", format!("{}: {e}", manifest.display())))?;
    Ok((m, tax))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn node_names(tax: &LabelTaxonomy) -> Vec<String> {
    tax.nodes().iter().map(|n| n.name.clone()).collect()
}

fn task_labels(tax: &LabelTaxonomy, kind: TaskKind) -> Vec<String> {
    match kind {
        TaskKind::MultiClass => tax.leaf_names(),
        TaskKind::MultiLabel => node_names(tax),
    }
}

fn load_tiles(manifest: &Path, m: &DatasetManifest, tax: &LabelTaxonomy, kind: TaskKind, size: usize) -> CliResult<TileSet> {
    TileSet::from_manifest(m, &base_dir(manifest), tax, kind, size).map_err(|e| CliError::from_model("load", e))
}

fn load_ckpt(path: &Path) -> CliResult<Checkpoint> {
    load_checkpoint(path).map_err(|e| CliError::from_model("checkpoint", e))
}

pub fn train(config: &Path, fine: bool) -> CliResult<()> {
    let stage = if fine { "finetune" } else { "train" };
    let cfg = PipelineConfig::load(Some(config))?;
    print_header(&cfg, stage);
    let manifest_path = cfg.require("paths.train_manifest", &cfg.paths.train_manifest)?;
    let ckpt_path = cfg.require("paths.checkpoint", &cfg.paths.checkpoint)?;
    let base = if fine {
        Some(load_ckpt(cfg.require("paths.base_checkpoint", &cfg.paths.base_checkpoint)?)?)
    } else {
        None
    };
    let m = &cfg.model;
    let (manifest, tax) = load_dataset(manifest_path, cfg.paths.taxonomy.as_deref())?;
    let mut tasks = vec![TaskHead::multi_class(&m.task, &tax.leaf_names())];
    let mut sets = vec![load_tiles(manifest_path, &manifest, &tax, TaskKind::MultiClass, m.input_size)?];
    if let Some(aux_path) = &cfg.paths.aux_manifest {
        let (aux, aux_tax) = load_dataset(aux_path, cfg.paths.aux_taxonomy.as_deref())?;
        let mut head = TaskHead::multi_class(&m.aux_task, &task_labels(&aux_tax, m.aux_kind));
        head.kind = m.aux_kind;
        tasks.push(head);
        sets.push(load_tiles(aux_path, &aux, &aux_tax, m.aux_kind, m.input_size)?);
    }
    let backbone = BackboneConfig {
        input_size: m.input_size,
        stage_channels: m.stage_channels,
        stage_strides: m.stage_strides,
        tasks,
        attention: m.attention,
    };
    backbone.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
    let opts = cfg.train_options(fine);
    info!("{stage}: {} main tiles, {} task(s)", sets[0].len(), sets.len());
    let start = Instant::now();
    let trained = single_threaded(|| match &base {
        Some(b) => fine_tune(b, backbone, &sets, &opts),
        None => train_model(backbone, &sets, &opts),
    })?
    .map_err(|e| CliError::from_model(stage, e))?;
    for e in &trained.trace {
        println!("epoch {:>3}  lr {:<8} loss {:.6}", e.epoch, e.lr, e.mean_loss);
    }
    save_checkpoint(&trained.checkpoint, ckpt_path).map_err(|e| CliError::from_model("checkpoint", e))?;
    let trace_path = cfg.trace_path(ckpt_path);
    let trace = serde_json::to_string_pretty(&trained.trace).expect("trace is serializable");
    write_file(stage, &trace_path, trace.as_bytes())?;
    println!(
        "wrote {} and {} in {:.1}s",
        ckpt_path.display(),
        trace_path.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn model_classifier(cfg: &PipelineConfig, canonical_input: usize) -> CliResult<ModelClassifier> {
    let ckpt = load_ckpt(cfg.require("paths.checkpoint", &cfg.paths.checkpoint)?)?;
    let net_cfg = ckpt.network.config();
    if net_cfg.input_size != canonical_input {
        return Err(CliError::mismatch(
            "parse",
            format!(
                "checkpoint input size {} differs from parse.canonical_input {canonical_input}",
                net_cfg.input_size
            ),
        ));
    }
    let c = ModelClassifier::new(ckpt.network, &cfg.model.task, cfg.fusion.stream_weights.clone())
        .map_err(|e| CliError::mismatch("parse", e))?;
    if let Some(tax_path) = &cfg.paths.taxonomy {
        let tax = LabelTaxonomy::parse(&read_text("taxonomy", tax_path)?)?;
        check_labels(c.labels(), &tax.leaf_names())?;
    }
    Ok(c)
}

fn check_labels(checkpoint: &[String], table: &[String]) -> CliResult<()> {
    if checkpoint != table {
        return Err(CliError::mismatch(
            "checkpoint",
            format!(
                "class table differs: checkpoint has {} labels {:?}, table has {} labels {:?}",
                checkpoint.len(),
                checkpoint,
                table.len(),
                table
            ),
        ));
    }
    Ok(())
}

fn read_labels(stage: &'static str, path: &Path) -> CliResult<LabelMap> {
    read_pgm(path)
        .map(|(p, _)| p)
        .map_err(|e| CliError::data(stage, e))
}

fn label_count(maps: &[&LabelMap]) -> usize {
    maps.iter()
        .flat_map(|m| m.as_slice().iter().copied())
        .max()
        .map_or(1, |m| m as usize + 1)
}

pub fn parse(args: &ParseArgs) -> CliResult<()> {
    let mut cfg = PipelineConfig::load(args.config.as_deref())?;
    if args.workers.is_some() {
        cfg.workers = args.workers;
        cfg.validate()?;
    }
    print_header(&cfg, "parse");
    let raster = read_ppm(&args.input)?;
    let pc = cfg.parse_config();
    let mut regions = None;
    let classifier: Box<dyn Classifier> = match &args.oracle {
        Some(truth_path) => {
            let truth = read_labels("oracle", truth_path)?;
            if (truth.width(), truth.height()) != (raster.width(), raster.height()) {
                return Err(CliError::data(
                    "oracle",
                    format!(
                        "extent mismatch: truth {}x{}, raster {}x{}",
                        truth.width(),
                        truth.height(),
                        raster.width(),
                        raster.height()
                    ),
                ));
            }
            if args.true_regions {
                regions = Some(RegionMap::from_components(&truth).map_err(CliError::from_segment)?);
            }
            let classes = args.classes.unwrap_or_else(|| label_count(&[&truth]));
            Box::new(OracleClassifier::new(truth, classes).map_err(|e| CliError::data("oracle", e))?)
        }
        None => Box::new(model_classifier(&cfg, pc.windows.canonical_input)?),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count())
        .build()
        .map_err(|e| CliError::Internal {
            stage: "threads",
            message: e.to_string(),
        })?;
    let start = Instant::now();
    let out = pool
        .install(|| match regions {
            Some(r) => parse_with_regions(&raster, classifier.as_ref(), &pc, r),
            None => parse_image(&raster, classifier.as_ref(), &pc),
        })
        .map_err(CliError::from_parse)?;
    write_label_map(&args.output, &out.labels)?;
    if let Some(p) = &args.grid {
        write_grid_map(p, &out.grid).map_err(CliError::from_parse)?;
    }
    if let Some(p) = &args.regions {
        write_region_map(p, &out.regions).map_err(CliError::from_segment)?;
    }
    println!(
        "parsed {}x{}: {}x{} grid, {} regions in {:.2}s -> {}",
        raster.width(),
        raster.height(),
        out.grid.cols(),
        out.grid.rows(),
        out.regions.region_count(),
        start.elapsed().as_secs_f64(),
        args.output.display()
    );
    Ok(())
}

pub fn segment(args: &SegmentArgs) -> CliResult<()> {
    let mut cfg = PipelineConfig::load(args.config.as_deref())?;
    let s = &mut cfg.segmentation;
    s.k = args.k.unwrap_or(s.k);
    s.min_size = args.min_size.unwrap_or(s.min_size);
    s.sigma = args.sigma.unwrap_or(s.sigma);
    s.target_count = args.target_count.or(s.target_count);
    print_header(&cfg, "segment");
    let raster = read_ppm(&args.input)?;
    let rm = single_threaded(|| segment_image(&raster, &cfg.segmentation))?.map_err(CliError::from_segment)?;
    write_region_map(&args.output, &rm).map_err(CliError::from_segment)?;
    println!("{} regions -> {}", rm.region_count(), args.output.display());
    Ok(())
}

pub fn classify(args: &ClassifyArgs) -> CliResult<()> {
    let cfg = PipelineConfig::load(Some(&args.config))?;
    print_header(&cfg, "classify");
    let ckpt = load_ckpt(cfg.require("paths.checkpoint", &cfg.paths.checkpoint)?)?;
    let net = &ckpt.network;
    let task_name = args.task.as_deref().unwrap_or(&cfg.model.task);
    let t = net
        .task_index(task_name)
        .ok_or_else(|| CliError::mismatch("classify", format!("checkpoint has no task {task_name:?}")))?;
    let head = &net.config().tasks[t];
    let (manifest, tax) = load_dataset(&args.manifest, cfg.paths.taxonomy.as_deref())?;
    check_labels(&head.labels, &task_labels(&tax, head.kind))?;
    let tiles = load_tiles(&args.manifest, &manifest, &tax, head.kind, net.config().input_size)?;
    let w = &cfg.fusion.stream_weights;
    let lines = single_threaded(|| {
        manifest
            .samples
            .iter()
            .zip(&tiles.images)
            .map(|(s, img)| match head.kind {
                TaskKind::MultiClass => net
                    .classify(img, t, w)
                    .map(|p| format!("{}\t{}\t{}\n", s.sample_id, p.label, head.labels[p.label])),
                TaskKind::MultiLabel => net.multilabel_forward(img, t, w).map(|scores| {
                    let mut line = s.sample_id.clone();
                    for v in scores {
                        let _ = write!(line, "\t{v}");
                    }
                    line.push('\n');
                    line
                }),
            })
            .collect::<Result<String, _>>()
    })?
    .map_err(|e| CliError::from_model("classify", e))?;
    write_file("classify", &args.output, lines.as_bytes())?;
    println!("{} predictions -> {}", manifest.len(), args.output.display());
    Ok(())
}

/// Rows of a predictions TSV keyed by sample id.
fn read_predictions(path: &Path) -> CliResult<HashMap<String, Vec<String>>> {
    let text = read_text("eval", path)?;
    let mut rows = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut fields = line.split('\t').map(str::to_string);
        let id = fields.next().unwrap_or_default();
        if rows.insert(id.clone(), fields.collect()).is_some() {
            return Err(CliError::data(
                "eval",
                format!("{}:{}: duplicate sample {id:?}", path.display(), i + 1),
            ));
        }
    }
    Ok(rows)
}

fn prediction<'a>(rows: &'a HashMap<String, Vec<String>>, id: &str, path: &Path) -> CliResult<&'a [String]> {
    rows.get(id)
        .map(Vec::as_slice)
        .ok_or_else(|| CliError::data("eval", format!("{}: no prediction for sample {id:?}", path.display())))
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let cfg = PipelineConfig::load(args.config.as_deref())?;
    let tau = args.tau.unwrap_or(cfg.eval.tau);
    if !(tau.is_finite() && (0.0..=1.0).contains(&tau)) {
        return Err(CliError::Config(format!("tau: must lie in [0, 1], got {tau}")));
    }
    let report = match args.mode {
        EvalMode::Pixel => {
            let pred = read_labels("eval", &args.pred)?;
            let truth = read_labels("eval", &args.truth)?;
            if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
                return Err(CliError::data(
                    "eval",
                    format!(
                        "extent mismatch: prediction {}x{}, truth {}x{}",
                        pred.width(),
                        pred.height(),
                        truth.width(),
                        truth.height()
                    ),
                ));
            }
            let classes = args.classes.unwrap_or_else(|| label_count(&[&pred, &truth]));
            let p: Vec<usize> = pred.as_slice().iter().map(|&l| l as usize).collect();
            let t: Vec<usize> = truth.as_slice().iter().map(|&l| l as usize).collect();
            let cm = accumulate_cm(&p, &t, classes, args.void.or(cfg.eval.void))?;
            MetricReport::from_confusion("pixel", &cm, true)?
        }
        EvalMode::Tile | EvalMode::Multilabel => {
            let taxonomy = args.taxonomy.as_deref().or(cfg.paths.taxonomy.as_deref());
            let (manifest, tax) = load_dataset(&args.truth, taxonomy)?;
            let rows = read_predictions(&args.pred)?;
            let leaves = tax.leaf_names().len();
            let mut preds = Vec::with_capacity(manifest.len());
            let mut truths = Vec::with_capacity(manifest.len());
            let mut scores = Vec::new();
            let mut label_sets = Vec::new();
            for s in &manifest.samples {
                let row = prediction(&rows, &s.sample_id, &args.pred)?;
                let bad = |what: &str| CliError::data("eval", format!("sample {:?}: {what}", s.sample_id));
                truths.push(tax.leaf_index(s.fine_label).ok_or_else(|| bad("truth label is not a leaf"))?);
                if args.mode == EvalMode::Tile {
                    let label = row
                        .first()
                        .and_then(|v| v.parse::<usize>().ok())
                        .filter(|&l| l < leaves)
                        .ok_or_else(|| bad("prediction is not a class index"))?;
                    preds.push(label);
                } else {
                    let v: Vec<f64> = row
                        .iter()
                        .map(|x| x.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("scores must be numbers"))?;
                    if v.len() != tax.len() {
                        return Err(bad(&format!("{} scores for {} labels", v.len(), tax.len())));
                    }
                    let leaf_scores: Vec<f64> = (0..leaves)
                        .map(|i| v[tax.leaf_at(i).expect("leaf index in range")])
                        .collect();
                    preds.push(argmax(&leaf_scores));
                    label_sets.push(tax.expand_labels(s.fine_label)?);
                    scores.push(v);
                }
            }
            let cm = accumulate_cm(&preds, &truths, leaves, None)?;
            if args.mode == EvalMode::Tile {
                MetricReport::from_confusion("tile", &cm, false)?
            } else {
                let mut r = MetricReport::from_confusion("multilabel", &cm, false)?;
                r.multilabel = Some(MultiLabelReport::compute(&scores, &label_sets, tau)?);
                r
            }
        }
    };
    match args.format {
        ReportFormat::Table => print!("{}", report.to_table()),
        ReportFormat::Json => println!("{}", report.to_json()),
    }
    if let Some(p) = &args.report {
        write_file("eval", p, report.to_json().as_bytes())?;
    }
    Ok(())
}

fn select_classes(sel: &ClassSelection) -> CliResult<Vec<TextureClass>> {
    if sel.classes == 0 {
        return Err(CliError::Config("classes: must be at least 1".into()));
    }
    match sel.family_seed {
        Some(seed) => Ok(texture_family("t", sel.classes, seed)),
        None => {
            let palette = desk_palette();
            if sel.classes > palette.len() {
                return Err(CliError::Config(format!(
                    "classes: the built-in palette has {} classes, use --family-seed for more",
                    palette.len()
                )));
            }
            Ok(palette.into_iter().take(sel.classes).collect())
        }
    }
}

pub fn synth_tiles(args: &SynthTilesArgs) -> CliResult<()> {
    let classes = select_classes(&args.classes)?;
    let n = classes.len();
    let counts = match args.long_tail {
        Some(exp) => long_tail_counts(n, args.per_class * n, exp).map_err(CliError::from_synth)?,
        None => vec![args.per_class; n],
    };
    let spec = TileDatasetSpec {
        classes,
        counts,
        tile_size: args.tile_size,
        source_sizes: args.sources.clone(),
    };
    let manifest = single_threaded(|| generate_tile_dataset(&spec, &args.out, args.seed))?
        .map_err(CliError::from_synth)?;
    println!(
        "{} tiles over {n} classes (counts {:?}) -> {}",
        manifest.len(),
        spec.counts,
        args.out.display()
    );
    Ok(())
}

pub fn synth_scene(args: &SynthSceneArgs) -> CliResult<()> {
    let spec = SceneSpec {
        classes: select_classes(&args.classes)?,
        layout: Layout::random_voronoi(args.points, args.width, args.height, args.seed),
        width: args.width,
        height: args.height,
    };
    let (img, truth) = single_threaded(|| generate_scene_raster(&spec, args.seed))?.map_err(CliError::from_synth)?;
    write_ppm(&args.raster, &img)?;
    write_label_map(&args.truth, &truth)?;
    println!(
        "{}x{} scene with {} classes -> {}, {}",
        args.width,
        args.height,
        spec.classes.len(),
        args.raster.display(),
        args.truth.display()
    );
    Ok(())
}
