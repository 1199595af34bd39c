use crate::tensor::{Graph, Result, Tensor, TensorError, Var};

use super::MscConfig;

/// Training target of one sample for one task.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    /// Multi-hot vector over the task's labels.
    MultiHot(Tensor),
}

fn check_streams(streams: usize, weights: &[f64]) -> Result<()> {
    if streams != weights.len() || streams == 0 {
        return Err(TensorError::Shape(format!(
            "{streams} streams but {} stream weights",
            weights.len()
        )));
    }
    Ok(())
}

/// `Σ_s w_s · L_s` where `L_s` is cross-entropy (or binary cross-entropy for
/// multi-hot targets) of stream `s`.
pub fn stream_loss(g: &mut Graph, logits: &[Var], target: &Target, weights: &[f64]) -> Result<Var> {
    check_streams(logits.len(), weights)?;
    let mut terms = Vec::with_capacity(logits.len());
    for (&z, &w) in logits.iter().zip(weights) {
        let l = match target {
            Target::Class(c) => g.cross_entropy(z, *c)?,
            Target::MultiHot(t) => g.binary_cross_entropy(z, t.clone())?,
        };
        terms.push((l, w));
    }
    g.weighted_sum(&terms)
}

/// `μ_g · Σ_s w_s·CE_s^g + μ_m · Σ_s w_s·CE_s^m`.
pub fn msc_loss(
    g: &mut Graph,
    logits_g: &[Var],
    target_g: &Target,
    logits_m: &[Var],
    target_m: &Target,
    cfg: &MscConfig,
) -> Result<Var> {
    let lg = stream_loss(g, logits_g, target_g, &cfg.stream_weights)?;
    let lm = stream_loss(g, logits_m, target_m, &cfg.stream_weights)?;
    g.weighted_sum(&[(lg, cfg.mu_g), (lm, cfg.mu_m)])
}

/// `Σ_s w_s · l_s` for already evaluated per-stream losses.
pub fn weighted_stream_sum(losses: &[f64], weights: &[f64]) -> Result<f64> {
    check_streams(losses.len(), weights)?;
    Ok(losses.iter().zip(weights).map(|(l, w)| l * w).sum())
}

/// `μ_g · loss_g + μ_m · loss_m`.
pub fn combine_task_losses(loss_g: f64, loss_m: f64, cfg: &MscConfig) -> f64 {
    cfg.mu_g * loss_g + cfg.mu_m * loss_m
}
