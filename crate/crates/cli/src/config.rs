//! Pipeline configuration file (TOML).
//!
//! Every section and field is optional; omitted values take the defaults
//! printed in the run header. Relative paths resolve against the directory
//! of the configuration file. Only paths and the worker count can be
//! overridden from the environment:
//!
//! | variable                      | field                  |
//! |-------------------------------|------------------------|
//! | `AERIAL_PARSE_TAXONOMY`       | `paths.taxonomy`       |
//! | `AERIAL_PARSE_TRAIN_MANIFEST` | `paths.train_manifest` |
//! | `AERIAL_PARSE_AUX_MANIFEST`   | `paths.aux_manifest`   |
//! | `AERIAL_PARSE_AUX_TAXONOMY`   | `paths.aux_taxonomy`   |
//! | `AERIAL_PARSE_CHECKPOINT`     | `paths.checkpoint`     |
//! | `AERIAL_PARSE_BASE_CHECKPOINT`| `paths.base_checkpoint`|
//! | `AERIAL_PARSE_TRACE`          | `paths.trace`          |
//! | `AERIAL_PARSE_WORKERS`        | `workers`              |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aerial_parse::fusion::DEFAULT_SCALE_WEIGHTS;
use aerial_parse::model::{MscConfig, TaskKind, TrainOptions, DEFAULT_FINE_TUNE_LR};
use aerial_parse::parser::{ContextWindowSpec, ParseConfig, DEFAULT_CONTEXT_WEIGHTS};
use aerial_parse::segmentation::SegmentParams;
use aerial_parse::tensor::SgdConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Class table of the main task; defaults to the manifest's own reference.
    pub taxonomy: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub aux_manifest: Option<PathBuf>,
    pub aux_taxonomy: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub base_checkpoint: Option<PathBuf>,
    /// Loss trace JSON; defaults to `<checkpoint>.trace.json`.
    pub trace: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub input_size: usize,
    pub stage_channels: [usize; 3],
    pub stage_strides: [usize; 3],
    pub attention: bool,
    pub task: String,
    pub aux_task: String,
    pub aux_kind: TaskKind,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            input_size: 56,
            stage_channels: [8, 16, 32],
            stage_strides: [2, 2, 2],
            attention: true,
            task: "scene".into(),
            aux_task: "aux".into(),
            aux_kind: TaskKind::MultiClass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub finetune_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `(epoch, divisor)` pairs.
    pub schedule: Vec<(usize, f64)>,
    pub augment: bool,
    pub mu_g: f64,
    pub mu_m: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        let msc = MscConfig::default();
        Self {
            epochs: 50,
            finetune_epochs: 30,
            batch_size: 32,
            lr: sgd.lr,
            finetune_lr: DEFAULT_FINE_TUNE_LR,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            schedule: sgd.schedule,
            augment: true,
            mu_g: msc.mu_g,
            mu_m: msc.mu_m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    /// Stream weights `w_1..w_3`, shallow to deep.
    pub stream_weights: Vec<f64>,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            stream_weights: DEFAULT_SCALE_WEIGHTS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParseSection {
    pub windows: Vec<usize>,
    pub canonical_input: usize,
    /// One weight per window, in window order.
    pub context_weights: Vec<f64>,
    /// Half the smallest window when unset.
    pub stride: Option<usize>,
    pub keep_probabilities: bool,
}

impl Default for ParseSection {
    fn default() -> Self {
        let w = ContextWindowSpec::default();
        Self {
            windows: w.sizes,
            canonical_input: w.canonical_input,
            context_weights: DEFAULT_CONTEXT_WEIGHTS.to_vec(),
            stride: None,
            keep_probabilities: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub tau: f64,
    /// Truth label excluded from pixel metrics.
    pub void: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { tau: 0.5, void: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Parse-stage threads; all available cores when unset.
    pub workers: Option<usize>,
    pub paths: PathsConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub fusion: FusionSection,
    pub parse: ParseSection,
    pub segmentation: SegmentParams,
    pub eval: EvalSection,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl PipelineConfig {
    pub fn parse_str(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    /// Reads `path` (defaults when `None`), resolves relative paths and
    /// applies environment overrides.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let (mut cfg, base) = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let cfg = Self::parse_str(&text).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    e => e,
                })?;
                (cfg, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (Self::default(), PathBuf::new()),
        };
        let paths = &mut cfg.paths;
        for p in [
            &mut paths.taxonomy,
            &mut paths.train_manifest,
            &mut paths.aux_manifest,
            &mut paths.aux_taxonomy,
            &mut paths.checkpoint,
            &mut paths.base_checkpoint,
            &mut paths.trace,
        ] {
            resolve(&base, p);
        }
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> CliResult<()> {
        let p = &mut self.paths;
        for (var, field) in [
            ("AERIAL_PARSE_TAXONOMY", &mut p.taxonomy),
            ("AERIAL_PARSE_TRAIN_MANIFEST", &mut p.train_manifest),
            ("AERIAL_PARSE_AUX_MANIFEST", &mut p.aux_manifest),
            ("AERIAL_PARSE_AUX_TAXONOMY", &mut p.aux_taxonomy),
            ("AERIAL_PARSE_CHECKPOINT", &mut p.checkpoint),
            ("AERIAL_PARSE_BASE_CHECKPOINT", &mut p.base_checkpoint),
            ("AERIAL_PARSE_TRACE", &mut p.trace),
        ] {
            if let Some(v) = get(var) {
                *field = Some(PathBuf::from(v));
            }
        }
        if let Some(v) = get("AERIAL_PARSE_WORKERS") {
            let n = v
                .parse()
                .map_err(|_| CliError::Config(format!("AERIAL_PARSE_WORKERS: invalid count {v:?}")))?;
            self.workers = Some(n);
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        if self.workers == Some(0) {
            return bad("workers", "must be at least 1".into());
        }
        if let Err(e) = self.train_options(false).validate() {
            return bad("train", e.to_string());
        }
        if !(self.eval.tau.is_finite() && (0.0..=1.0).contains(&self.eval.tau)) {
            return bad("eval.tau", format!("must lie in [0, 1], got {}", self.eval.tau));
        }
        if self.fusion.stream_weights.len() != 3 {
            return bad("fusion.stream_weights", "exactly 3 weights required".into());
        }
        if let Err(e) = self.parse_config().validate() {
            return bad("parse", e.to_string());
        }
        Ok(())
    }

    pub fn require<'a>(&self, field: &str, value: &'a Option<PathBuf>) -> CliResult<&'a PathBuf> {
        value
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("{field} is required but not set")))
    }

    pub fn worker_count(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn train_options(&self, fine_tune: bool) -> TrainOptions {
        let t = &self.train;
        TrainOptions {
            epochs: if fine_tune { t.finetune_epochs } else { t.epochs },
            batch_size: t.batch_size,
            sgd: SgdConfig {
                lr: if fine_tune { t.finetune_lr } else { t.lr },
                momentum: t.momentum,
                weight_decay: t.weight_decay,
                schedule: t.schedule.clone(),
            },
            seed: self.seed,
            augment: t.augment,
            msc: MscConfig {
                stream_weights: self.fusion.stream_weights.clone(),
                mu_g: t.mu_g,
                mu_m: t.mu_m,
            },
        }
    }

    pub fn parse_config(&self) -> ParseConfig {
        ParseConfig {
            windows: ContextWindowSpec {
                sizes: self.parse.windows.clone(),
                canonical_input: self.parse.canonical_input,
                ..ContextWindowSpec::default()
            },
            stride: self.parse.stride,
            fusion_weights: self.parse.context_weights.clone(),
            segmentation: self.segmentation.clone(),
            keep_probabilities: self.parse.keep_probabilities,
        }
    }

    pub fn trace_path(&self, checkpoint: &Path) -> PathBuf {
        self.paths.trace.clone().unwrap_or_else(|| {
            let mut s = checkpoint.as_os_str().to_owned();
            s.push(".trace.json");
            PathBuf::from(s)
        })
    }

    /// Effective hyperparameters of a command, one `key value` per line.
    pub fn header(&self, command: &str) -> String {
        let t = &self.train;
        let p = &self.parse;
        let s = &self.segmentation;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "  {k:<16} {v}");
        };
        line("command", command.to_string());
        line("seed", self.seed.to_string());
        line("workers", self.worker_count().to_string());
        line("epochs", format!("{} (fine-tune {})", t.epochs, t.finetune_epochs));
        line("lr", format!("{} (fine-tune {})", t.lr, t.finetune_lr));
        line("schedule", format!("{:?}", t.schedule));
        line("momentum", t.momentum.to_string());
        line("weight_decay", t.weight_decay.to_string());
        line("batch_size", t.batch_size.to_string());
        line("augment", t.augment.to_string());
        line("w", format!("{:?}", self.fusion.stream_weights));
        line("mu", format!("({}, {})", t.mu_g, t.mu_m));
        line("input_size", self.model.input_size.to_string());
        line("channels", format!("{:?}", self.model.stage_channels));
        line("windows", format!("{:?} -> {}", p.windows, p.canonical_input));
        line("context_weights", format!("{:?}", p.context_weights));
        line("stride", self.parse_config().effective_stride().to_string());
        line(
            "segmentation",
            format!(
                "k {} min_size {} sigma {} target_count {}",
                s.k,
                s.min_size,
                s.sigma,
                s.target_count.map_or("none".into(), |c| c.to_string())
            ),
        );
        line("tau", self.eval.tau.to_string());
        out
    }
}
