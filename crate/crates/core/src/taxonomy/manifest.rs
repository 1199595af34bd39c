//! Dataset manifests: one record per scene sample.
//!
//! Text form:
//!
//! ```text
//! #taxonomy=<reference>
//! <sample_id>\t<raster_path>\t<fine_label>\t<lon or ->\t<lat or ->
//! ```
//!
//! Other `#` lines and blank lines are ignored.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LabelId, LabelTaxonomy, TaxonomyError};

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub sample_id: String,
    pub raster_path: String,
    pub fine_label: LabelId,
    pub lon_lat: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub samples: Vec<SceneSample>,
    pub taxonomy_ref: String,
}

impl DatasetManifest {
    pub fn new(taxonomy_ref: impl Into<String>, samples: Vec<SceneSample>) -> Result<Self, TaxonomyError> {
        let m = Self {
            samples,
            taxonomy_ref: taxonomy_ref.into(),
        };
        m.check_unique()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn check_unique(&self) -> Result<(), TaxonomyError> {
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(TaxonomyError::DuplicateSample(s.sample_id.clone()));
            }
        }
        Ok(())
    }

    /// Every fine label must be a leaf of `tax`.
    pub fn validate(&self, tax: &LabelTaxonomy) -> Result<(), TaxonomyError> {
        match self.samples.iter().find(|s| !tax.is_leaf(s.fine_label)) {
            Some(s) => Err(TaxonomyError::UnknownLabel(s.fine_label)),
            None => Ok(()),
        }
    }

    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let mut taxonomy_ref = String::new();
        let mut samples = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let raw = raw.trim_end_matches('\r');
            if let Some(r) = raw.strip_prefix("#taxonomy=") {
                taxonomy_ref = r.trim().to_string();
                continue;
            }
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 5 {
                return Err(TaxonomyError::Parse {
                    line,
                    msg: format!("expected 5 tab-separated fields, got {}", fields.len()),
                });
            }
            let bad = |what: &str, s: &str| TaxonomyError::Parse {
                line,
                msg: format!("invalid {what} {s:?}"),
            };
            let fine_label = fields[2]
                .trim()
                .parse()
                .map_err(|_| bad("label", fields[2]))?;
            let lon_lat = match (fields[3].trim(), fields[4].trim()) {
                ("-", "-") => None,
                (lon, lat) => Some((
                    lon.parse().map_err(|_| bad("longitude", lon))?,
                    lat.parse().map_err(|_| bad("latitude", lat))?,
                )),
            };
            samples.push(SceneSample {
                sample_id: fields[0].to_string(),
                raster_path: fields[1].to_string(),
                fine_label,
                lon_lat,
            });
        }
        Self::new(taxonomy_ref, samples)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#taxonomy={}\n", self.taxonomy_ref);
        for s in &self.samples {
            let (lon, lat) = match s.lon_lat {
                Some((lon, lat)) => (lon.to_string(), lat.to_string()),
                None => ("-".into(), "-".into()),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                s.sample_id, s.raster_path, s.fine_label, lon, lat
            );
        }
        out
    }
}

/// Random train/test partition. Both halves keep the manifest's record order.
pub fn split_manifest(
    m: &DatasetManifest,
    train_count: usize,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest), TaxonomyError> {
    if train_count > m.len() {
        return Err(TaxonomyError::Count {
            requested: train_count,
            available: m.len(),
        });
    }
    let mut order: Vec<usize> = (0..m.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; m.len()];
    for &i in &order[..train_count] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(train_count), Vec::new());
    for (s, &t) in m.samples.iter().zip(&in_train) {
        if t {
            train.push(s.clone());
        } else {
            test.push(s.clone());
        }
    }
    let part = |samples| DatasetManifest {
        samples,
        taxonomy_ref: m.taxonomy_ref.clone(),
    };
    Ok((part(train), part(test)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassHistogram {
    /// Fine-label counts indexed by label id; non-leaves are zero.
    pub fine: Vec<usize>,
    /// Counts after expanding each sample to its ancestor chain.
    pub expanded: Vec<usize>,
}

pub fn class_histogram(
    m: &DatasetManifest,
    tax: &LabelTaxonomy,
) -> Result<ClassHistogram, TaxonomyError> {
    let mut fine = vec![0; tax.len()];
    let mut expanded = vec![0; tax.len()];
    for s in &m.samples {
        let chain = tax.expand_labels(s.fine_label)?;
        fine[s.fine_label] += 1;
        for id in chain {
            expanded[id] += 1;
        }
    }
    Ok(ClassHistogram { fine, expanded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn synthetic(n: usize, leaves: &[LabelId]) -> DatasetManifest {
        let samples = (0..n)
            .map(|i| SceneSample {
                sample_id: format!("s{i:07}"),
                raster_path: format!("tiles/{i}.ppm"),
                fine_label: leaves[i % leaves.len()],
                lon_lat: None,
            })
            .collect();
        DatasetManifest::new("million_aid", samples).unwrap()
    }

    #[test]
    fn text_roundtrip() {
        let m = DatasetManifest::new(
            "flat8",
            vec![
                SceneSample {
                    sample_id: "a".into(),
                    raster_path: "a.ppm".into(),
                    fine_label: 3,
                    lon_lat: Some((114.25, 30.5)),
                },
                SceneSample {
                    sample_id: "b".into(),
                    raster_path: "b.ppm".into(),
                    fine_label: 0,
                    lon_lat: None,
                },
            ],
        )
        .unwrap();
        let text = m.to_text();
        assert_eq!(
            text,
            "#taxonomy=flat8\na\ta.ppm\t3\t114.25\t30.5\nb\tb.ppm\t0\t-\t-\n"
        );
        assert_eq!(DatasetManifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = DatasetManifest::parse("x\tp\t0\t-\t-\nx\tq\t1\t-\t-\n").unwrap_err();
        assert_eq!(err, TaxonomyError::DuplicateSample("x".into()));
    }

    #[test]
    fn zero_train_count() {
        let m = synthetic(10, &[0]);
        let (train, test) = split_manifest(&m, 0, 1).unwrap();
        assert!(train.is_empty());
        assert_eq!(test, m);
    }

    #[test]
    fn too_many_requested() {
        let m = synthetic(3, &[0]);
        assert_eq!(
            split_manifest(&m, 4, 0),
            Err(TaxonomyError::Count {
                requested: 4,
                available: 3
            })
        );
    }

    #[test]
    fn million_scale_partition() {
        let tax = LabelTaxonomy::million_aid();
        let leaves: Vec<_> = tax.leaf_ids().iter().copied().collect();
        let m = synthetic(1_000_848, &leaves);
        let (train, test) = split_manifest(&m, 10_000, 2022).unwrap();
        assert_eq!(train.len(), 10_000);
        assert_eq!(test.len(), 990_848);
    }

    #[test]
    fn split_is_seed_deterministic() {
        let m = synthetic(200, &[0, 1]);
        let a = split_manifest(&m, 50, 9).unwrap();
        let b = split_manifest(&m, 50, 9).unwrap();
        assert_eq!(a, b);
        let c = split_manifest(&m, 50, 10).unwrap();
        assert_ne!(a.0, c.0);
        assert_eq!(c.0.len(), 50);
    }

    #[test]
    fn histogram_empty_and_single_leaf() {
        let tax = LabelTaxonomy::million_aid();
        let empty = DatasetManifest::default();
        let h = class_histogram(&empty, &tax).unwrap();
        assert!(h.fine.iter().chain(&h.expanded).all(|&c| c == 0));

        let leaf = *tax.leaf_ids().iter().find(|&&l| tax.node(l).unwrap().level == 3).unwrap();
        let m = synthetic(3, &[leaf]);
        let h = class_histogram(&m, &tax).unwrap();
        assert_eq!(h.fine[leaf], 3);
        for id in tax.expand_labels(leaf).unwrap() {
            assert_eq!(h.expanded[id], 3);
        }
        assert_eq!(h.expanded.iter().sum::<usize>(), 9);
    }

    #[test]
    fn histogram_rejects_unknown_label() {
        let tax = LabelTaxonomy::flat(&["a", "b"]);
        let m = synthetic(2, &[5]);
        assert_eq!(class_histogram(&m, &tax), Err(TaxonomyError::UnknownLabel(5)));
        assert_eq!(m.validate(&tax), Err(TaxonomyError::UnknownLabel(5)));
    }

    proptest! {
        #[test]
        fn split_partitions(n in 0usize..300, frac in 0.0f64..=1.0, seed in any::<u64>()) {
            let m = synthetic(n, &[0]);
            let k = (n as f64 * frac) as usize;
            let (train, test) = split_manifest(&m, k, seed).unwrap();
            prop_assert_eq!(train.len(), k);
            prop_assert_eq!(train.len() + test.len(), n);
            let mut ids: Vec<_> = train.samples.iter().chain(&test.samples).map(|s| s.sample_id.clone()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }

        #[test]
        fn histogram_matches_naive_recount(labels in proptest::collection::vec(0usize..51, 0..200)) {
            let tax = LabelTaxonomy::million_aid();
            let leaves: Vec<_> = tax.leaf_ids().iter().copied().collect();
            let samples = labels.iter().enumerate().map(|(i, &l)| SceneSample {
                sample_id: i.to_string(),
                raster_path: String::new(),
                fine_label: leaves[l],
                lon_lat: None,
            }).collect();
            let m = DatasetManifest::new("t", samples).unwrap();
            let h = class_histogram(&m, &tax).unwrap();
            for id in 0..tax.len() {
                let fine = m.samples.iter().filter(|s| s.fine_label == id).count();
                let mut expanded = 0;
                for s in &m.samples {
                    let mut cur = Some(s.fine_label);
                    while let Some(c) = cur {
                        if c == id { expanded += 1; }
                        cur = tax.nodes()[c].parent;
                    }
                }
                prop_assert_eq!(h.fine[id], fine);
                prop_assert_eq!(h.expanded[id], expanded);
            }
            prop_assert_eq!(h.fine.iter().sum::<usize>(), m.len());
        }
    }
}
