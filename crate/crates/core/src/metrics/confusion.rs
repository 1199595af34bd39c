use serde::{Deserialize, Serialize};

use super::MetricsError;

/// `counts[pred][truth]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds from row-major `rows[pred][truth]`.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, MetricsError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(MetricsError::Shape("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes: n,
            counts: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, pred: usize, truth: usize) -> u64 {
        self.counts[pred * self.classes + truth]
    }

    pub fn add(&mut self, pred: usize, truth: usize) {
        self.counts[pred * self.classes + truth] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    /// Predicted-class totals.
    pub fn row_sum(&self, i: usize) -> u64 {
        (0..self.classes).map(|j| self.get(i, j)).sum()
    }

    /// Actual-class totals.
    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, j)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    /// Adds another shard's counts.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.classes != self.classes {
            return Err(MetricsError::Shape(format!(
                "cannot merge {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Counts `(pred, truth)` pairs; pairs whose truth equals `void` are skipped.
pub fn accumulate_cm(
    preds: &[usize],
    truths: &[usize],
    classes: usize,
    void: Option<usize>,
) -> Result<ConfusionMatrix, MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &t) in preds.iter().zip(truths) {
        if Some(t) == void {
            continue;
        }
        for label in [p, t] {
            if label >= classes {
                return Err(MetricsError::LabelRange { label, classes });
            }
        }
        cm.add(p, t);
    }
    Ok(cm)
}

fn nonempty(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    match cm.total() {
        0 => Err(MetricsError::Empty("confusion matrix has no entries")),
        t => Ok(t as f64),
    }
}

pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    Ok(cm.trace() as f64 / nonempty(cm)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageAccuracy {
    pub value: f64,
    /// Accuracy per class; `None` where the class has no actual instances.
    pub per_class: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
}

pub fn average_accuracy(cm: &ConfusionMatrix) -> Result<AverageAccuracy, MetricsError> {
    nonempty(cm)?;
    let per_class: Vec<Option<f64>> = (0..cm.classes())
        .map(|i| match cm.col_sum(i) {
            0 => None,
            col => Some(cm.get(i, i) as f64 / col as f64),
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let excluded = (0..cm.classes()).filter(|&i| per_class[i].is_none()).collect();
    Ok(AverageAccuracy {
        value: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
        excluded,
    })
}

/// Cohen's kappa from the matrix marginals.
pub fn kappa(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = nonempty(cm)?;
    let po = cm.trace() as f64 / total;
    let pe = (0..cm.classes())
        .map(|i| cm.row_sum(i) as f64 * cm.col_sum(i) as f64)
        .sum::<f64>()
        / (total * total);
    if pe == 1.0 {
        return Ok(if po == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((po - pe) / (1.0 - pe))
}

/// Mean intersection-over-union over classes present in truth or prediction.
pub fn miou(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    nonempty(cm)?;
    let ious: Vec<f64> = (0..cm.classes())
        .filter_map(|i| {
            let inter = cm.get(i, i);
            let union = cm.row_sum(i) + cm.col_sum(i) - inter;
            (union > 0).then(|| inter as f64 / union as f64)
        })
        .collect();
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}
