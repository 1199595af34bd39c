//! Weighted fusion of per-scale class probabilities.
//!
//! Each scale `s` contributes a softmax vector `p_s` with weight `w_s`; the
//! fused vector is `Σ_s w_s·p_s / Σ_s w_s` and the label is its argmax, ties
//! resolved toward the lowest class index.

use thiserror::Error;

use crate::tensor::{ops, Tensor};

/// Default per-scale weights, shallow to deep (or small to large context).
pub const DEFAULT_SCALE_WEIGHTS: [f64; 3] = [0.25, 0.5, 1.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("nothing to fuse")]
    EmptyInput,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("scale weights must be positive and finite, got {0:?}")]
    Weight(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalePrediction {
    pub probs: Vec<f64>,
    pub weight: f64,
    pub scale: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedPrediction {
    pub probs: Vec<f64>,
    pub label: usize,
}

/// Softmax of each scale's logits, tagged with that scale's weight.
pub fn scale_probabilities(
    logits: &[Tensor],
    weights: &[f64],
) -> Result<Vec<ScalePrediction>, FusionError> {
    if logits.len() != weights.len() {
        return Err(FusionError::Shape(format!(
            "{} logit vectors but {} weights",
            logits.len(),
            weights.len()
        )));
    }
    check_weights(weights)?;
    let n = logits.first().map_or(0, Tensor::len);
    logits
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(scale, (z, &weight))| {
            if z.len() != n || z.shape().len() != 1 {
                return Err(FusionError::Shape(format!(
                    "scale {scale} has logits of shape {:?}, expected [{n}]",
                    z.shape()
                )));
            }
            Ok(ScalePrediction {
                probs: ops::softmax_last(z).into_data(),
                weight,
                scale,
            })
        })
        .collect()
}

fn check_weights(weights: &[f64]) -> Result<(), FusionError> {
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(FusionError::Weight(weights.to_vec()));
    }
    Ok(())
}

pub fn fuse(preds: &[ScalePrediction]) -> Result<FusedPrediction, FusionError> {
    let first = preds.first().ok_or(FusionError::EmptyInput)?;
    let n = first.probs.len();
    if n == 0 {
        return Err(FusionError::Shape("empty probability vector".into()));
    }
    if let Some(bad) = preds.iter().find(|p| p.probs.len() != n) {
        return Err(FusionError::Shape(format!(
            "scale {} has {} classes, expected {n}",
            bad.scale,
            bad.probs.len()
        )));
    }
    let weights: Vec<f64> = preds.iter().map(|p| p.weight).collect();
    check_weights(&weights)?;
    let total: f64 = weights.iter().sum();

    // p_1 + Σ (w_s/W)(p_s − p_1): algebraically the weighted mean, and exact
    // when a single scale is given or all scales agree.
    let mut probs = first.probs.clone();
    for p in &preds[1..] {
        let a = p.weight / total;
        for (out, (&ps, &p1)) in probs.iter_mut().zip(p.probs.iter().zip(&first.probs)) {
            *out += a * (ps - p1);
        }
    }
    let label = predict_label(&probs);
    Ok(FusedPrediction { probs, label })
}

/// Fuses raw probability vectors under `weights`.
pub fn fuse_probabilities(probs: &[Vec<f64>], weights: &[f64]) -> Result<FusedPrediction, FusionError> {
    if probs.len() != weights.len() {
        return Err(FusionError::Shape(format!(
            "{} probability vectors but {} weights",
            probs.len(),
            weights.len()
        )));
    }
    let preds: Vec<ScalePrediction> = probs
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(scale, (p, &weight))| ScalePrediction {
            probs: p.clone(),
            weight,
            scale,
        })
        .collect();
    fuse(&preds)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn predict_label(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(probs: Vec<f64>, weight: f64, scale: usize) -> ScalePrediction {
        ScalePrediction {
            probs,
            weight,
            scale,
        }
    }

    #[test]
    fn equal_logits_give_uniform() {
        let p = scale_probabilities(&[Tensor::from_vec(vec![0.7; 4])], &[1.0]).unwrap();
        assert_eq!(p.len(), 1);
        assert!(p[0].probs.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn scale_probabilities_match_softmax() {
        let z = vec![0.3, -1.1, 2.4];
        let p = scale_probabilities(
            &[Tensor::from_vec(z.clone()), Tensor::from_vec(vec![0.0; 3])],
            &[0.25, 0.5],
        )
        .unwrap();
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        for (got, zv) in p[0].probs.iter().zip(&z) {
            assert!((got - zv.exp() / denom).abs() < 1e-15);
        }
        assert_eq!(p[1].weight, 0.5);
        assert_eq!(p[1].scale, 1);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        assert!(scale_probabilities(
            &[Tensor::from_vec(vec![0.0; 3]), Tensor::from_vec(vec![0.0; 2])],
            &[1.0, 1.0]
        )
        .is_err());
        assert_eq!(fuse(&[]), Err(FusionError::EmptyInput));
        assert!(fuse(&[pred(vec![1.0], 1.0, 0), pred(vec![0.5, 0.5], 1.0, 1)]).is_err());
        assert!(fuse(&[pred(vec![1.0], 0.0, 0)]).is_err());
    }

    #[test]
    fn single_scale_is_identity() {
        let p = vec![0.1, 0.6, 0.3];
        let f = fuse(&[pred(p.clone(), 0.37, 0)]).unwrap();
        assert_eq!(f.probs, p);
        assert_eq!(f.label, 1);
    }

    #[test]
    fn equal_weights_average() {
        let f = fuse(&[pred(vec![1.0, 0.0], 1.0, 0), pred(vec![0.0, 1.0], 1.0, 1)]).unwrap();
        assert_eq!(f.probs, vec![0.5, 0.5]);
        assert_eq!(f.label, 0);
    }

    #[test]
    fn default_weights_example() {
        let f = fuse_probabilities(
            &[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            &DEFAULT_SCALE_WEIGHTS,
        )
        .unwrap();
        assert!((f.probs[0] - 0.75 / 1.75).abs() < 1e-12);
        assert!((f.probs[1] - 1.0 / 1.75).abs() < 1e-12);
        assert_eq!(f.label, 1);
    }

    #[test]
    fn argmax_ties_and_degenerate() {
        assert_eq!(predict_label(&[0.42857, 0.57142]), 1);
        assert_eq!(predict_label(&[1.0]), 0);
        assert_eq!(predict_label(&[0.5, 0.5]), 0);
        assert_eq!(predict_label(&[0.2, 0.4, 0.4]), 1);
    }

    fn simplex(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn fused_vector_is_convex_combination(
            raw in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 5), 1..4),
            weights in proptest::collection::vec(0.05f64..2.0, 3),
        ) {
            let probs: Vec<Vec<f64>> = raw.iter().map(|r| simplex(r)).collect();
            let w = &weights[..probs.len()];
            let f = fuse_probabilities(&probs, w).unwrap();
            prop_assert!((f.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for n in 0..5 {
                let lo = probs.iter().map(|p| p[n]).fold(f64::INFINITY, f64::min);
                let hi = probs.iter().map(|p| p[n]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(f.probs[n] >= lo - 1e-12 && f.probs[n] <= hi + 1e-12);
            }
            prop_assert_eq!(f.label, predict_label(&f.probs));
        }

        #[test]
        fn identical_predictions_fuse_exactly(raw in proptest::collection::vec(0.01f64..1.0, 4), w in proptest::collection::vec(0.1f64..3.0, 3)) {
            let p = simplex(&raw);
            let f = fuse_probabilities(&[p.clone(), p.clone(), p.clone()], &w).unwrap();
            prop_assert_eq!(f.probs, p);
        }
    }
}
