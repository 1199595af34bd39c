use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, TrainingRecord};
use super::input::{augment, image_to_tensor, Augmentation};
use super::loss::{stream_loss, Target};
use super::{BackboneConfig, ModelError, MscConfig, Network, TaskKind};
use crate::raster::read_ppm;
use crate::taxonomy::{DatasetManifest, LabelTaxonomy};
use crate::tensor::{Graph, SgdConfig, OptimizerState, Result as TensorResult, Tensor};

pub const DEFAULT_FINE_TUNE_LR: f64 = 0.001;

/// Images and targets of one task, in manifest order.
#[derive(Clone, Debug, Default)]
pub struct TileSet {
    pub images: Vec<Tensor>,
    pub targets: Vec<Target>,
}

impl TileSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn push(&mut self, image: Tensor, target: Target) {
        self.images.push(image);
        self.targets.push(target);
    }

    /// Class indices of a multi-class set.
    pub fn class_labels(&self) -> Option<Vec<usize>> {
        self.targets
            .iter()
            .map(|t| match t {
                Target::Class(c) => Some(*c),
                Target::MultiHot(_) => None,
            })
            .collect()
    }

    /// Reads every tile of `manifest` relative to `base`, resizing to `size`.
    /// Multi-class targets are leaf indices; multi-label targets are the
    /// expanded ancestor chains over all taxonomy nodes.
    pub fn from_manifest(
        manifest: &DatasetManifest,
        base: &Path,
        taxonomy: &LabelTaxonomy,
        kind: TaskKind,
        size: usize,
    ) -> Result<Self, ModelError> {
        let loaded: Result<Vec<(Tensor, Target)>, ModelError> = manifest
            .samples
            .par_iter()
            .map(|s| {
                let path = base.join(&s.raster_path);
                let img = read_ppm(&path)
                    .map_err(|e| ModelError::Data(format!("sample {}: {e}", s.sample_id)))?;
                let img = if img.width() == size && img.height() == size {
                    img
                } else {
                    img.resize_nearest(size, size)
                };
                let unknown = |e: &dyn std::fmt::Display| ModelError::Data(format!("sample {}: {e}", s.sample_id));
                let target = match kind {
                    TaskKind::MultiClass => Target::Class(
                        taxonomy
                            .leaf_index(s.fine_label)
                            .ok_or_else(|| unknown(&format!("label {} is not a leaf", s.fine_label)))?,
                    ),
                    TaskKind::MultiLabel => Target::MultiHot(Tensor::from_vec(
                        taxonomy.multi_hot(s.fine_label).map_err(|e| unknown(&e))?,
                    )),
                };
                Ok((image_to_tensor(&img), target))
            })
            .collect();
        let (images, targets) = loaded?.into_iter().unzip();
        Ok(Self { images, targets })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
    pub augment: bool,
    pub msc: MscConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            sgd: SgdConfig::default(),
            seed: 0,
            augment: true,
            msc: MscConfig::default(),
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        let s = &self.sgd;
        if !(s.lr.is_finite() && s.lr >= 0.0) {
            return bad(format!("learning rate must be finite and non-negative, got {}", s.lr));
        }
        if !(0.0..1.0).contains(&s.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", s.momentum));
        }
        if !(s.weight_decay.is_finite() && s.weight_decay >= 0.0) {
            return bad(format!("weight decay must be non-negative, got {}", s.weight_decay));
        }
        if let Some((e, d)) = s.schedule.iter().find(|(_, d)| !(d.is_finite() && *d > 0.0)) {
            return bad(format!("schedule divisor at epoch {e} must be positive, got {d}"));
        }
        self.msc.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub trace: Vec<EpochStats>,
}

struct Job<'a> {
    image: &'a Tensor,
    target: &'a Target,
    task: usize,
    aug: Augmentation,
    /// Multiplier of this sample's loss in the step objective.
    coef: f64,
}

fn sample_gradients(net: &Network, job: &Job, weights: &[f64]) -> TensorResult<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let p = net.bind(&mut g, true);
    let image = augment(job.image, job.aug);
    let x = g.constant(image);
    let logits = net.graph_logits(&mut g, &p, x, &[job.task])?;
    let loss = stream_loss(&mut g, &logits[0], job.target, weights)?;
    let scaled = g.scale(loss, job.coef)?;
    let mut grads = g.backward(scaled)?;
    Ok((g.value(loss).item(), p.into_iter().map(|v| grads.take(v)).collect()))
}

fn check_sets(net: &Network, sets: &[TileSet]) -> Result<(), ModelError> {
    let tasks = &net.config().tasks;
    if sets.len() != tasks.len() {
        return Err(ModelError::Config(format!(
            "{} training sets for {} task heads",
            sets.len(),
            tasks.len()
        )));
    }
    if sets.len() > 2 {
        return Err(ModelError::Config("at most two tasks (main and auxiliary) are supported".into()));
    }
    for (set, task) in sets.iter().zip(tasks) {
        if set.is_empty() {
            return Err(ModelError::Data(format!("training set for task {:?} is empty", task.name)));
        }
        for t in &set.targets {
            let ok = match (t, task.kind) {
                (Target::Class(c), TaskKind::MultiClass) => *c < task.classes(),
                (Target::MultiHot(v), TaskKind::MultiLabel) => v.len() == task.classes(),
                _ => false,
            };
            if !ok {
                return Err(ModelError::Data(format!("target {t:?} does not fit task {:?}", task.name)));
            }
        }
    }
    Ok(())
}

/// Trains `net` in place. An epoch is one pass over the main task (first
/// set); each step draws one batch from every task and minimizes
/// `μ_g · mean L^g + μ_m · mean L^m`.
pub fn train_network(net: &mut Network, sets: &[TileSet], opts: &TrainOptions) -> Result<Vec<EpochStats>, ModelError> {
    opts.validate()?;
    check_sets(net, sets)?;
    let mu: Vec<f64> = if sets.len() == 1 {
        vec![1.0]
    } else {
        vec![opts.msc.mu_g, opts.msc.mu_m]
    };
    let weights = &opts.msc.stream_weights;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(1);
    let mut optimizer = OptimizerState::new(opts.sgd.clone(), net.params());
    let mut orders: Vec<Vec<usize>> = sets.iter().map(|s| (0..s.len()).collect()).collect();
    let mut trace = Vec::with_capacity(opts.epochs);

    for epoch in 0..opts.epochs {
        let lr = opts.sgd.lr_at(epoch);
        for order in &mut orders {
            order.shuffle(&mut rng);
        }
        let steps = sets[0].len().div_ceil(opts.batch_size);
        let mut epoch_loss = 0.0;
        for step in 0..steps {
            let mut jobs = Vec::new();
            let mut spans = Vec::new();
            for (task, (set, order)) in sets.iter().zip(&orders).enumerate() {
                let idx: Vec<usize> = if task == 0 {
                    order[step * opts.batch_size..((step + 1) * opts.batch_size).min(set.len())].to_vec()
                } else {
                    (0..opts.batch_size)
                        .map(|i| order[(step * opts.batch_size + i) % set.len()])
                        .collect()
                };
                let coef = mu[task] / idx.len() as f64;
                let start = jobs.len();
                for i in idx {
                    let aug = if opts.augment {
                        Augmentation::ALL[rng.gen_range(0..Augmentation::ALL.len())]
                    } else {
                        Augmentation::Identity
                    };
                    jobs.push(Job {
                        image: &set.images[i],
                        target: &set.targets[i],
                        task,
                        aug,
                        coef,
                    });
                }
                spans.push((start, jobs.len(), coef));
            }

            let results: Vec<(f64, Vec<Tensor>)> = jobs
                .par_iter()
                .map(|j| sample_gradients(net, j, weights))
                .collect::<TensorResult<_>>()?;

            let mut step_loss = 0.0;
            for &(a, b, coef) in &spans {
                step_loss += coef * results[a..b].iter().map(|r| r.0).sum::<f64>();
            }
            if !step_loss.is_finite() {
                return Err(ModelError::Numeric {
                    epoch,
                    step,
                    what: format!("loss is {step_loss}"),
                });
            }
            let mut results = results.into_iter();
            let mut total = results.next().expect("batch is non-empty").1;
            for (_, grads) in results {
                for (t, g) in total.iter_mut().zip(&grads) {
                    t.add_assign(g);
                }
            }
            optimizer.step(net.params_mut(), &total, lr)?;
            if let Some(i) = net.params().iter().position(|p| !p.is_finite()) {
                return Err(ModelError::Numeric {
                    epoch,
                    step,
                    what: format!("parameter tensor {i} is not finite"),
                });
            }
            epoch_loss += step_loss;
        }
        let mean_loss = epoch_loss / steps as f64;
        debug!("epoch {epoch}: lr {lr}, mean loss {mean_loss:.6}");
        trace.push(EpochStats { epoch, lr, mean_loss });
    }
    if let Some(last) = trace.last() {
        info!("trained {} epochs, final mean loss {:.6}", trace.len(), last.mean_loss);
    }
    Ok(trace)
}

fn record(opts: &TrainOptions, trace: &[EpochStats], fine_tune_lr: Option<f64>) -> TrainingRecord {
    TrainingRecord {
        epochs: opts.epochs,
        batch_size: opts.batch_size,
        sgd: opts.sgd.clone(),
        seed: opts.seed,
        augment: opts.augment,
        msc: opts.msc.clone(),
        fine_tune_lr,
        loss_trace: trace.iter().map(|e| e.mean_loss).collect(),
    }
}

/// Initializes a network from `opts.seed` and trains it.
pub fn train(config: BackboneConfig, sets: &[TileSet], opts: &TrainOptions) -> Result<Trained, ModelError> {
    let mut net = Network::init(config, opts.seed)?;
    let trace = train_network(&mut net, sets, opts)?;
    Ok(Trained {
        checkpoint: Checkpoint {
            record: Some(record(opts, &trace, None)),
            network: net,
        },
        trace,
    })
}

/// Copies the backbone and attention weights of `base` into a network with
/// new heads, then trains at `opts.sgd.lr`.
pub fn fine_tune(
    base: &Checkpoint,
    config: BackboneConfig,
    sets: &[TileSet],
    opts: &TrainOptions,
) -> Result<Trained, ModelError> {
    let old = base.network.config();
    let mismatch = [
        ("input_size", old.input_size != config.input_size),
        ("stage_channels", old.stage_channels != config.stage_channels),
        ("stage_strides", old.stage_strides != config.stage_strides),
        ("attention", old.attention != config.attention),
    ];
    if let Some((field, _)) = mismatch.iter().find(|(_, differs)| *differs) {
        return Err(ModelError::IncompatibleCheckpoint(format!("{field} differs from the base checkpoint")));
    }
    let mut net = Network::init(config, opts.seed)?;
    let trunk = net.trunk_len();
    net.params_mut()[..trunk].clone_from_slice(&base.network.params()[..trunk]);
    let trace = train_network(&mut net, sets, opts)?;
    Ok(Trained {
        checkpoint: Checkpoint {
            record: Some(record(opts, &trace, Some(opts.sgd.lr))),
            network: net,
        },
        trace,
    })
}

/// Fused predictions of a multi-class task for every image of `set`.
pub fn evaluate_tiles(net: &Network, images: &[Tensor], task: usize, weights: &[f64]) -> Result<Vec<usize>, ModelError> {
    images
        .par_iter()
        .map(|img| Ok(net.classify(img, task, weights)?.label))
        .collect()
}
