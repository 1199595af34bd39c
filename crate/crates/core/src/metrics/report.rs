use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    average_accuracy, kappa, mean_average_precision, miou, multilabel_metrics, overall_accuracy,
    ConfusionMatrix, MetricsError,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelReport {
    pub tau: f64,
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub op: f64,
    pub or: f64,
    pub of1: f64,
    pub map: f64,
}

impl MultiLabelReport {
    pub fn compute(scores: &[Vec<f64>], truths: &[Vec<usize>], tau: f64) -> Result<Self, MetricsError> {
        let m = multilabel_metrics(scores, truths, tau)?;
        Ok(Self {
            tau,
            cp: m.cp,
            cr: m.cr,
            cf1: m.cf1,
            op: m.op,
            or: m.or,
            of1: m.of1,
            map: mean_average_precision(scores, truths)?,
        })
    }
}

/// Machine-readable evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: String,
    pub total: u64,
    pub oa: f64,
    pub aa: f64,
    /// Classes without actual instances, left out of `aa`.
    pub aa_excluded: Vec<usize>,
    pub kappa: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multilabel: Option<MultiLabelReport>,
    /// `confusion[pred][truth]`.
    pub confusion: Vec<Vec<u64>>,
}

impl MetricReport {
    pub fn from_confusion(mode: &str, cm: &ConfusionMatrix, with_miou: bool) -> Result<Self, MetricsError> {
        let aa = average_accuracy(cm)?;
        Ok(Self {
            mode: mode.to_string(),
            total: cm.total(),
            oa: overall_accuracy(cm)?,
            aa: aa.value,
            aa_excluded: aa.excluded,
            kappa: kappa(cm)?,
            miou: if with_miou { Some(miou(cm)?) } else { None },
            multilabel: None,
            confusion: cm.rows(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(&str, String)> = vec![
            ("mode", self.mode.clone()),
            ("samples", self.total.to_string()),
            ("OA", format!("{:.4}", self.oa)),
            ("AA", format!("{:.4}", self.aa)),
            ("Kappa", format!("{:.4}", self.kappa)),
        ];
        if let Some(m) = self.miou {
            rows.push(("mIoU", format!("{m:.4}")));
        }
        if !self.aa_excluded.is_empty() {
            rows.push(("AA excludes", format!("{:?}", self.aa_excluded)));
        }
        if let Some(ml) = &self.multilabel {
            rows.extend([
                ("tau", format!("{:.2}", ml.tau)),
                ("CP", format!("{:.4}", ml.cp)),
                ("CR", format!("{:.4}", ml.cr)),
                ("CF1", format!("{:.4}", ml.cf1)),
                ("OP", format!("{:.4}", ml.op)),
                ("OR", format!("{:.4}", ml.or)),
                ("OF1", format!("{:.4}", ml.of1)),
                ("mAP", format!("{:.4}", ml.map)),
            ]);
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }
}
