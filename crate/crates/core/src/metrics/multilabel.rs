use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPr {
    pub precision: f64,
    pub recall: f64,
    /// Ground-truth positives of this class.
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelMetrics {
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub op: f64,
    pub or: f64,
    pub of1: f64,
    pub per_class: Vec<ClassPr>,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_shapes(scores: &[Vec<f64>], truths: &[Vec<usize>]) -> Result<usize, MetricsError> {
    if scores.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            preds: scores.len(),
            truths: truths.len(),
        });
    }
    let labels = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|s| s.len() != labels) {
        return Err(MetricsError::Shape("score vectors differ in length".into()));
    }
    for t in truths.iter().flatten() {
        if *t >= labels {
            return Err(MetricsError::LabelRange {
                label: *t,
                classes: labels,
            });
        }
    }
    Ok(labels)
}

fn truth_matrix(truths: &[Vec<usize>], labels: usize) -> Vec<Vec<bool>> {
    truths
        .iter()
        .map(|t| {
            let mut row = vec![false; labels];
            for &l in t {
                row[l] = true;
            }
            row
        })
        .collect()
}

/// Thresholded multi-label precision/recall. A label is predicted when its
/// score is strictly greater than `tau`. Per-class figures are averaged over
/// classes with at least one ground-truth positive; overall figures are
/// micro-averaged over every (image, label) pair.
pub fn multilabel_metrics(
    scores: &[Vec<f64>],
    truths: &[Vec<usize>],
    tau: f64,
) -> Result<MultiLabelMetrics, MetricsError> {
    let labels = check_shapes(scores, truths)?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(MetricsError::Shape(format!("threshold {tau} outside (0,1)")));
    }
    let truth = truth_matrix(truths, labels);
    let mut tp = vec![0usize; labels];
    let mut predicted = vec![0usize; labels];
    let mut positives = vec![0usize; labels];
    for (s, t) in scores.iter().zip(&truth) {
        for c in 0..labels {
            let pred = s[c] > tau;
            predicted[c] += pred as usize;
            positives[c] += t[c] as usize;
            tp[c] += (pred && t[c]) as usize;
        }
    }
    let per_class: Vec<ClassPr> = (0..labels)
        .map(|c| ClassPr {
            precision: ratio(tp[c], predicted[c]),
            recall: ratio(tp[c], positives[c]),
            support: positives[c],
        })
        .collect();
    let counted: Vec<&ClassPr> = per_class.iter().filter(|c| c.support > 0).collect();
    let mean = |f: fn(&ClassPr) -> f64| {
        if counted.is_empty() {
            0.0
        } else {
            counted.iter().map(|c| f(c)).sum::<f64>() / counted.len() as f64
        }
    };
    let cp = mean(|c| c.precision);
    let cr = mean(|c| c.recall);
    let total_tp: usize = tp.iter().sum();
    let op = ratio(total_tp, predicted.iter().sum());
    let or = ratio(total_tp, positives.iter().sum());
    Ok(MultiLabelMetrics {
        cp,
        cr,
        cf1: f1(cp, cr),
        op,
        or,
        of1: f1(op, or),
        per_class,
    })
}

/// Mean over classes with positives of the all-points average precision.
/// Images are ranked by descending score; equal scores keep image order.
pub fn mean_average_precision(scores: &[Vec<f64>], truths: &[Vec<usize>]) -> Result<f64, MetricsError> {
    let labels = check_shapes(scores, truths)?;
    let truth = truth_matrix(truths, labels);
    let mut aps = Vec::new();
    for c in 0..labels {
        let positives = truth.iter().filter(|t| t[c]).count();
        if positives == 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b][c].total_cmp(&scores[a][c]).then(a.cmp(&b)));
        let (mut hits, mut sum) = (0usize, 0.0);
        for (rank, &img) in order.iter().enumerate() {
            if truth[img][c] {
                hits += 1;
                sum += hits as f64 / (rank + 1) as f64;
            }
        }
        aps.push(sum / positives as f64);
    }
    if aps.is_empty() {
        return Err(MetricsError::Empty("no class has a positive"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_scores() {
        let truths = vec![vec![0, 2], vec![1]];
        let scores = vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]];
        let m = multilabel_metrics(&scores, &truths, 0.5).unwrap();
        for v in [m.cp, m.cr, m.cf1, m.op, m.or, m.of1] {
            assert_eq!(v, 1.0);
        }
        assert_eq!(mean_average_precision(&scores, &truths).unwrap(), 1.0);
    }

    #[test]
    fn micro_counts_example() {
        let truths = vec![vec![1, 2], vec![2]];
        let scores = vec![vec![0.0, 0.9, 0.1, 0.2], vec![0.0, 0.3, 0.8, 0.7]];
        let m = multilabel_metrics(&scores, &truths, 0.5).unwrap();
        assert!((m.op - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.or - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.of1 - 2.0 / 3.0).abs() < 1e-15);
        // classes with positives: 1 (P=1, R=1) and 2 (P=1, R=1/2)
        assert!((m.cp - 1.0).abs() < 1e-15);
        assert!((m.cr - 0.75).abs() < 1e-15);
    }

    #[test]
    fn threshold_is_strict() {
        let m = multilabel_metrics(&[vec![0.5]], &[vec![0]], 0.5).unwrap();
        assert_eq!(m.or, 0.0);
        assert_eq!(m.of1, 0.0);
    }

    #[test]
    fn ranked_ap_example() {
        let scores = vec![vec![0.9], vec![0.8], vec![0.7]];
        let truths = vec![vec![0], vec![], vec![0]];
        let ap = mean_average_precision(&scores, &truths).unwrap();
        assert!((ap - 0.8333).abs() < 1e-4);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ap_ties_rank_by_image_index() {
        let scores = vec![vec![0.5], vec![0.5]];
        let truths = vec![vec![], vec![0]];
        assert_eq!(mean_average_precision(&scores, &truths).unwrap(), 0.5);
    }

    #[test]
    fn class_without_positives_is_excluded() {
        let scores = vec![vec![0.9, 0.8], vec![0.1, 0.7]];
        let truths = vec![vec![0], vec![0]];
        assert_eq!(mean_average_precision(&scores, &truths).unwrap(), 1.0);
        assert!(mean_average_precision(&scores, &[vec![], vec![]]).is_err());
    }

    #[test]
    fn shape_errors() {
        assert!(multilabel_metrics(&[vec![0.1, 0.2]], &[vec![2]], 0.5).is_err());
        assert!(multilabel_metrics(&[vec![0.1], vec![0.1, 0.2]], &[vec![], vec![]], 0.5).is_err());
        assert!(multilabel_metrics(&[vec![0.1]], &[], 0.5).is_err());
        assert!(multilabel_metrics(&[vec![0.1]], &[vec![]], 1.0).is_err());
    }
}
