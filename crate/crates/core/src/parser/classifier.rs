use thiserror::Error;

use crate::model::{image_to_tensor, Network, TaskKind};
use crate::raster::{LabelMap, RgbImage};

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ClassifierError(pub String);

/// Where a patch was taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchContext {
    pub center: (usize, usize),
    /// Window side before resizing.
    pub window: usize,
}

/// Maps a canonical patch to a probability vector over `num_classes`.
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;

    /// Patch side the classifier requires, if any.
    fn input_size(&self) -> Option<usize> {
        None
    }

    fn probabilities(&self, patch: &RgbImage, ctx: PatchContext) -> Result<Vec<f64>, ClassifierError>;
}

/// One-hot of the ground-truth label at the patch centre.
pub struct OracleClassifier {
    truth: LabelMap,
    num_classes: usize,
}

impl OracleClassifier {
    pub fn new(truth: LabelMap, num_classes: usize) -> Result<Self, ClassifierError> {
        if let Some(&bad) = truth.as_slice().iter().find(|&&l| l as usize >= num_classes) {
            return Err(ClassifierError(format!("truth label {bad} outside {num_classes} classes")));
        }
        Ok(Self { truth, num_classes })
    }
}

impl Classifier for OracleClassifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn probabilities(&self, _patch: &RgbImage, ctx: PatchContext) -> Result<Vec<f64>, ClassifierError> {
        let (x, y) = ctx.center;
        if x >= self.truth.width() || y >= self.truth.height() {
            return Err(ClassifierError(format!("centre ({x}, {y}) outside the truth raster")));
        }
        let mut p = vec![0.0; self.num_classes];
        p[self.truth.get(x, y) as usize] = 1.0;
        Ok(p)
    }
}

/// Stream-fused softmax of one multi-class task of a trained network.
pub struct ModelClassifier {
    network: Network,
    task: usize,
    weights: Vec<f64>,
}

impl ModelClassifier {
    pub fn new(network: Network, task: &str, weights: Vec<f64>) -> Result<Self, ClassifierError> {
        let cfg = network.config();
        let index = cfg
            .tasks
            .iter()
            .position(|t| t.name == task)
            .ok_or_else(|| ClassifierError(format!("network has no task {task:?}")))?;
        if cfg.tasks[index].kind != TaskKind::MultiClass {
            return Err(ClassifierError(format!("task {task:?} is not multi-class")));
        }
        if weights.len() != 3 {
            return Err(ClassifierError(format!("3 stream weights required, got {}", weights.len())));
        }
        Ok(Self {
            network,
            task: index,
            weights,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn labels(&self) -> &[String] {
        &self.network.config().tasks[self.task].labels
    }
}

impl Classifier for ModelClassifier {
    fn num_classes(&self) -> usize {
        self.labels().len()
    }

    fn input_size(&self) -> Option<usize> {
        Some(self.network.config().input_size)
    }

    fn probabilities(&self, patch: &RgbImage, _ctx: PatchContext) -> Result<Vec<f64>, ClassifierError> {
        let pred = self
            .network
            .classify(&image_to_tensor(patch), self.task, &self.weights)
            .map_err(|e| ClassifierError(e.to_string()))?;
        Ok(pred.probs)
    }
}
