use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::fusion::DEFAULT_SCALE_WEIGHTS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Single label per image, softmax cross-entropy.
    MultiClass,
    /// Independent sigmoid per label, binary cross-entropy.
    MultiLabel,
}

/// One classification task: a head on each of the three streams.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskHead {
    pub name: String,
    pub kind: TaskKind,
    pub labels: Vec<String>,
}

impl TaskHead {
    pub fn multi_class<S: AsRef<str>>(name: &str, labels: &[S]) -> Self {
        Self {
            name: name.to_string(),
            kind: TaskKind::MultiClass,
            labels: labels.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    pub fn multi_label<S: AsRef<str>>(name: &str, labels: &[S]) -> Self {
        Self {
            kind: TaskKind::MultiLabel,
            ..Self::multi_class(name, labels)
        }
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }
}

/// Three-stage convolutional backbone plus its task heads.
///
/// Stage `k` is `conv3x3 → relu → conv3x3/stride s_k → relu` and emits
/// feature map `F_k` with `stage_channels[k]` channels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_size: usize,
    pub stage_channels: [usize; 3],
    pub stage_strides: [usize; 3],
    pub tasks: Vec<TaskHead>,
    /// Deep-to-shallow attention between stages; off gives plain features.
    #[serde(default = "default_true")]
    pub attention: bool,
}

fn default_true() -> bool {
    true
}

impl BackboneConfig {
    pub fn desk(tasks: Vec<TaskHead>) -> Self {
        Self {
            input_size: 32,
            stage_channels: [8, 16, 32],
            stage_strides: [2, 2, 2],
            tasks,
            attention: true,
        }
    }

    pub fn num_classes_per_task(&self) -> Vec<usize> {
        self.tasks.iter().map(TaskHead::classes).collect()
    }

    /// Spatial side of `F_1..F_3`.
    pub fn feature_sizes(&self) -> [usize; 3] {
        let mut side = self.input_size;
        self.stage_strides.map(|s| {
            side /= s;
            side
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.input_size == 0 {
            return bad("input_size must be positive".into());
        }
        if self.stage_channels.contains(&0) {
            return bad(format!("stage channels must be positive: {:?}", self.stage_channels));
        }
        if self.stage_strides[0] == 0 || self.stage_strides[1..].iter().any(|&s| s < 2) {
            return bad(format!(
                "stage strides must be >= 1 for the first stage and >= 2 after: {:?}",
                self.stage_strides
            ));
        }
        let total: usize = self.stage_strides.iter().product();
        if !self.input_size.is_multiple_of(total) {
            return bad(format!(
                "input_size {} not divisible by cumulative stride {total}",
                self.input_size
            ));
        }
        if self.tasks.is_empty() {
            return bad("at least one task head is required".into());
        }
        if let Some(t) = self.tasks.iter().find(|t| t.labels.is_empty()) {
            return bad(format!("task {:?} has no labels", t.name));
        }
        Ok(())
    }
}

/// Stream and task weighting of the multi-task loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MscConfig {
    pub stream_weights: Vec<f64>,
    pub mu_g: f64,
    pub mu_m: f64,
}

impl Default for MscConfig {
    fn default() -> Self {
        Self {
            stream_weights: DEFAULT_SCALE_WEIGHTS.to_vec(),
            mu_g: 0.5,
            mu_m: 0.5,
        }
    }
}

impl MscConfig {
    pub fn with_mu_g(mu_g: f64) -> Self {
        Self {
            mu_g,
            mu_m: 1.0 - mu_g,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.stream_weights.is_empty()
            || self.stream_weights.iter().any(|w| !(w.is_finite() && *w > 0.0))
        {
            return Err(ModelError::Config(format!(
                "stream weights must be positive: {:?}",
                self.stream_weights
            )));
        }
        if self.mu_g < 0.0 || self.mu_m < 0.0 || (self.mu_g + self.mu_m - 1.0).abs() > 1e-9 {
            return Err(ModelError::Config(format!(
                "task weights must be non-negative and sum to 1, got {} + {}",
                self.mu_g, self.mu_m
            )));
        }
        Ok(())
    }
}
