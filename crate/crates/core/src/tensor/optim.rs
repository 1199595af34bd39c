use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

/// SGD hyper-parameters. `schedule` holds `(epoch, divisor)` milestones: from
/// `epoch` on, the learning rate is additionally divided by `divisor`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub schedule: Vec<(usize, f64)>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.005,
            schedule: vec![(20, 10.0), (40, 10.0)],
        }
    }
}

impl SgdConfig {
    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|(e, _)| epoch >= *e)
            .fold(self.lr, |lr, (_, d)| lr / d)
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: SgdConfig,
    velocity: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(config: SgdConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// One momentum step at learning rate `lr`:
    /// `g' = g + wd·p; v' = m·v + g'; p' = p − lr·v'`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(TensorError::Shape(format!(
                "{} params, {} grads, {} velocity buffers",
                params.len(),
                grads.len(),
                self.velocity.len()
            )));
        }
        let (m, wd) = (self.config.momentum, self.config.weight_decay);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            p.expect_same_shape(g)?;
            p.expect_same_shape(v)?;
            for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = m * *vv + (gv + wd * *pv);
                *pv -= lr * *vv;
            }
        }
        Ok(())
    }
}
