use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{msc_loss, stream_loss, Target};
use super::{BackboneConfig, ModelError, MscConfig, TaskKind};
use crate::fusion::{fuse_probabilities, FusedPrediction};
use crate::tensor::ops::{sigmoid_scalar, softmax_last};
use crate::tensor::{Graph, Result as TensorResult, Tensor, TensorError, Var};

/// Name and shape of one parameter tensor, in storage order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// The 1×1 convolution that turns a deep feature into a shallow attention map.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    /// `[C_shallow, C_deep, 1, 1]`.
    pub kernel: Tensor,
    /// `[C_shallow]`.
    pub bias: Tensor,
}

impl AttentionWeights {
    pub fn zeros(shallow: usize, deep: usize) -> Self {
        Self {
            kernel: Tensor::zeros(&[shallow, deep, 1, 1]),
            bias: Tensor::zeros(&[shallow]),
        }
    }
}

/// Attention weights for both deep-to-shallow transmissions.
#[derive(Clone, Debug, PartialEq)]
pub struct HanWeights {
    /// Fuses `AF3` into `F2`.
    pub middle: AttentionWeights,
    /// Fuses `AF2` into `F1`.
    pub shallow: AttentionWeights,
}

/// Backbone outputs, shallow to deep.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub f1: Tensor,
    pub f2: Tensor,
    pub f3: Tensor,
}

/// Spatial upsampling factor from `df` to `sf`.
fn upsample_factor(sf: &Tensor, df: &Tensor) -> TensorResult<usize> {
    let (_, sh, sw) = sf.dims3()?;
    let (_, dh, dw) = df.dims3()?;
    if dh == 0 || dw == 0 || sh % dh != 0 || sw % dw != 0 || sh / dh != sw / dw {
        return Err(TensorError::Shape(format!(
            "deep feature {dh}x{dw} does not evenly divide shallow feature {sh}x{sw}"
        )));
    }
    Ok(sh / dh)
}

/// `AF = SF + SF ⊙ σ(conv1x1(upsample(DF)))` recorded on `g`.
pub(crate) fn graph_attention_fuse(
    g: &mut Graph,
    sf: Var,
    df: Var,
    kernel: Var,
    bias: Var,
) -> TensorResult<Var> {
    let factor = upsample_factor(g.value(sf), g.value(df))?;
    let up = g.upsample_nearest(df, factor)?;
    let reduced = g.conv2d(up, kernel, Some(bias), 1, 0)?;
    let sam = g.sigmoid(reduced);
    let laf = g.mul(sf, sam)?;
    g.add(sf, laf)
}

pub fn attention_fuse(sf: &Tensor, df: &Tensor, w: &AttentionWeights) -> TensorResult<Tensor> {
    let (cs, _, _) = sf.dims3()?;
    if w.kernel.shape().first() != Some(&cs) {
        return Err(TensorError::Shape(format!(
            "attention kernel {:?} does not produce {cs} channels",
            w.kernel.shape()
        )));
    }
    let mut g = Graph::new();
    let (s, d) = (g.constant(sf.clone()), g.constant(df.clone()));
    let (k, b) = (g.constant(w.kernel.clone()), g.constant(w.bias.clone()));
    let af = graph_attention_fuse(&mut g, s, d, k, b)?;
    Ok(g.value(af).clone())
}

/// `[AF1, AF2, AF3]` with `AF3 = F3`.
pub fn han_forward(p: &FeaturePyramid, w: &HanWeights) -> TensorResult<[Tensor; 3]> {
    let af2 = attention_fuse(&p.f2, &p.f3, &w.middle)?;
    let af1 = attention_fuse(&p.f1, &af2, &w.shallow)?;
    Ok([af1, af2, p.f3.clone()])
}

/// Parameter index layout derived from a config.
#[derive(Clone, Debug)]
struct Layout {
    attention_base: Option<usize>,
    head_base: usize,
}

impl Layout {
    fn new(cfg: &BackboneConfig) -> Self {
        let attention_base = cfg.attention.then_some(12);
        Self {
            attention_base,
            head_base: if cfg.attention { 16 } else { 12 },
        }
    }

    /// `(weight, bias)` of conv `j` (0 = first, 1 = strided) in stage `k`.
    fn conv(&self, k: usize, j: usize) -> (usize, usize) {
        let w = 4 * k + 2 * j;
        (w, w + 1)
    }

    /// `(weight, bias)` of the reduce conv fusing into stage `k` (0 or 1).
    fn attention(&self, k: usize) -> Option<(usize, usize)> {
        // middle (into F2) is stored first
        self.attention_base.map(|b| {
            let w = b + 2 * (1 - k);
            (w, w + 1)
        })
    }

    fn head(&self, task: usize, stream: usize) -> (usize, usize) {
        let w = self.head_base + 2 * (3 * task + stream);
        (w, w + 1)
    }
}

/// Backbone, attention and head parameters plus their configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: BackboneConfig,
    params: Vec<Tensor>,
}

impl Network {
    /// Parameter names and shapes in storage order.
    pub fn param_specs(cfg: &BackboneConfig) -> Vec<ParamSpec> {
        let spec = |name: String, shape: Vec<usize>| ParamSpec { name, shape };
        let c = cfg.stage_channels;
        let mut out = Vec::new();
        let mut cin = 3;
        for (k, &cout) in c.iter().enumerate() {
            for (j, name) in ["conv_a", "conv_b"].iter().enumerate() {
                let fan_in = if j == 0 { cin } else { cout };
                out.push(spec(format!("stage{}.{name}.weight", k + 1), vec![cout, fan_in, 3, 3]));
                out.push(spec(format!("stage{}.{name}.bias", k + 1), vec![cout]));
            }
            cin = cout;
        }
        if cfg.attention {
            out.push(spec("attention2.reduce.weight".into(), vec![c[1], c[2], 1, 1]));
            out.push(spec("attention2.reduce.bias".into(), vec![c[1]]));
            out.push(spec("attention1.reduce.weight".into(), vec![c[0], c[1], 1, 1]));
            out.push(spec("attention1.reduce.bias".into(), vec![c[0]]));
        }
        for task in &cfg.tasks {
            for (s, &cs) in c.iter().enumerate() {
                let n = task.classes();
                out.push(spec(format!("head.{}.stream{}.weight", task.name, s + 1), vec![n, cs]));
                out.push(spec(format!("head.{}.stream{}.bias", task.name, s + 1), vec![n]));
            }
        }
        out
    }

    /// Seeded fan-in scaled uniform initialization with zero biases.
    pub fn init(config: BackboneConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Self::param_specs(&config)
            .into_iter()
            .map(|p| {
                if p.shape.len() == 1 {
                    return Tensor::zeros(&p.shape);
                }
                let fan_in: usize = p.shape[1..].iter().product();
                // ReLU layers get the He gain; gates and heads do not.
                let gain = if p.name.starts_with("stage") { 6.0 } else { 3.0 };
                let bound = (gain / fan_in as f64).sqrt();
                Tensor::from_fn(&p.shape, |_| rng.gen_range(-bound..bound))
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Network with every parameter zero.
    pub fn zeros(config: BackboneConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let params = Self::param_specs(&config)
            .iter()
            .map(|p| Tensor::zeros(&p.shape))
            .collect();
        Ok(Self { config, params })
    }

    pub fn from_params(config: BackboneConfig, params: Vec<Tensor>) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = Self::param_specs(&config);
        if specs.len() != params.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.shape != p.shape() {
                return Err(ModelError::Config(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name,
                    p.shape(),
                    s.shape
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Number of tensors shared by all tasks (backbone and attention).
    pub fn trunk_len(&self) -> usize {
        Layout::new(&self.config).head_base
    }

    pub fn attention_weights(&self) -> Option<HanWeights> {
        let layout = Layout::new(&self.config);
        let get = |k| {
            layout.attention(k).map(|(w, b)| AttentionWeights {
                kernel: self.params[w].clone(),
                bias: self.params[b].clone(),
            })
        };
        Some(HanWeights {
            middle: get(1)?,
            shallow: get(0)?,
        })
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.config.tasks.iter().position(|t| t.name == name)
    }

    /// Records every parameter on `g`, trainable or constant.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { g.param(p.clone()) } else { g.constant(p.clone()) })
            .collect()
    }

    fn check_image(&self, image: &Tensor) -> TensorResult<()> {
        let n = self.config.input_size;
        if image.shape() != [3, n, n] {
            return Err(TensorError::Shape(format!(
                "image has shape {:?}, network expects [3, {n}, {n}]",
                image.shape()
            )));
        }
        Ok(())
    }

    pub(crate) fn graph_pyramid(&self, g: &mut Graph, p: &[Var], image: Var) -> TensorResult<[Var; 3]> {
        self.check_image(g.value(image))?;
        let layout = Layout::new(&self.config);
        let mut x = image;
        let mut feats = [image; 3];
        for (k, feat) in feats.iter_mut().enumerate() {
            let (wa, ba) = layout.conv(k, 0);
            let a = g.conv2d(x, p[wa], Some(p[ba]), 1, 1)?;
            let a = g.relu(a);
            let (wb, bb) = layout.conv(k, 1);
            let b = g.conv2d(a, p[wb], Some(p[bb]), self.config.stage_strides[k], 1)?;
            x = g.relu(b);
            *feat = x;
        }
        Ok(feats)
    }

    /// `[AF1, AF2, AF3]`; the pyramid itself when attention is disabled.
    pub(crate) fn graph_streams(&self, g: &mut Graph, p: &[Var], image: Var) -> TensorResult<[Var; 3]> {
        let [f1, f2, f3] = self.graph_pyramid(g, p, image)?;
        let layout = Layout::new(&self.config);
        let (Some((wm, bm)), Some((ws, bs))) = (layout.attention(1), layout.attention(0)) else {
            return Ok([f1, f2, f3]);
        };
        let af2 = graph_attention_fuse(g, f2, f3, p[wm], p[bm])?;
        let af1 = graph_attention_fuse(g, f1, af2, p[ws], p[bs])?;
        Ok([af1, af2, f3])
    }

    /// Per-stream logits of the selected tasks.
    pub(crate) fn graph_logits(
        &self,
        g: &mut Graph,
        p: &[Var],
        image: Var,
        tasks: &[usize],
    ) -> TensorResult<Vec<[Var; 3]>> {
        let streams = self.graph_streams(g, p, image)?;
        let mut pooled = [image; 3];
        for (s, af) in streams.iter().enumerate() {
            pooled[s] = g.global_avg_pool(*af)?;
        }
        let layout = Layout::new(&self.config);
        tasks
            .iter()
            .map(|&t| {
                let mut out = [image; 3];
                for (s, z) in out.iter_mut().enumerate() {
                    let (w, b) = layout.head(t, s);
                    *z = g.linear(pooled[s], p[w], p[b])?;
                }
                Ok(out)
            })
            .collect()
    }

    /// Multi-task loss of one sample over every task, with parameters bound
    /// to `p`. Two tasks are weighted by `μ_g, μ_m`; a single task by 1.
    pub fn graph_objective(
        &self,
        g: &mut Graph,
        p: &[Var],
        image: &Tensor,
        targets: &[Target],
        msc: &MscConfig,
    ) -> TensorResult<Var> {
        let tasks = self.config.tasks.len();
        if targets.len() != tasks || tasks > 2 {
            return Err(TensorError::Shape(format!("{} targets for {tasks} tasks", targets.len())));
        }
        let x = g.constant(image.clone());
        let all: Vec<usize> = (0..tasks).collect();
        let logits = self.graph_logits(g, p, x, &all)?;
        if tasks == 1 {
            return stream_loss(g, &logits[0], &targets[0], &msc.stream_weights);
        }
        msc_loss(g, &logits[0], &targets[0], &logits[1], &targets[1], msc)
    }

    pub fn backbone_forward(&self, image: &Tensor) -> TensorResult<FeaturePyramid> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(image.clone());
        let [f1, f2, f3] = self.graph_pyramid(&mut g, &p, x)?;
        Ok(FeaturePyramid {
            f1: g.value(f1).clone(),
            f2: g.value(f2).clone(),
            f3: g.value(f3).clone(),
        })
    }

    /// Logits for every task (outer) and stream (inner).
    pub fn msc_forward(&self, image: &Tensor) -> TensorResult<Vec<[Tensor; 3]>> {
        let tasks: Vec<usize> = (0..self.config.tasks.len()).collect();
        self.task_logits(image, &tasks)
    }

    fn task_logits(&self, image: &Tensor, tasks: &[usize]) -> TensorResult<Vec<[Tensor; 3]>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(image.clone());
        let logits = self.graph_logits(&mut g, &p, x, tasks)?;
        Ok(logits
            .iter()
            .map(|zs| zs.map(|z| g.value(z).clone()))
            .collect())
    }

    fn single_task_logits(&self, image: &Tensor, task: usize) -> TensorResult<[Tensor; 3]> {
        if task >= self.config.tasks.len() {
            return Err(TensorError::Index {
                index: task,
                len: self.config.tasks.len(),
            });
        }
        Ok(self.task_logits(image, &[task])?.remove(0))
    }

    /// Hierarchically fused softmax prediction of a multi-class task.
    pub fn classify(&self, image: &Tensor, task: usize, weights: &[f64]) -> Result<FusedPrediction, ModelError> {
        let logits = self.single_task_logits(image, task)?;
        let probs: Vec<Vec<f64>> = logits.iter().map(|z| softmax_last(z).into_data()).collect();
        Ok(fuse_probabilities(&probs, weights)?)
    }

    /// Per-label sigmoid confidences of a multi-label task, averaged over
    /// streams with `weights`.
    pub fn multilabel_forward(&self, image: &Tensor, task: usize, weights: &[f64]) -> Result<Vec<f64>, ModelError> {
        if let Some(t) = self.config.tasks.get(task) {
            if t.kind != TaskKind::MultiLabel {
                return Err(ModelError::Config(format!("task {:?} is not multi-label", t.name)));
            }
        }
        let logits = self.single_task_logits(image, task)?;
        let probs: Vec<Vec<f64>> = logits
            .iter()
            .map(|z| z.data().iter().map(|&v| sigmoid_scalar(v)).collect())
            .collect();
        Ok(fuse_probabilities(&probs, weights)?.probs)
    }
}
