//! Hierarchical scene label system.
//!
//! A taxonomy is a rooted forest of labels, each tagged with its level
//! (1 = major class). Leaves are the nodes without children; a sample's fine
//! label is always a leaf, and multi-label targets are obtained by expanding
//! a leaf to its full root-to-leaf chain.
//!
//! The text form is one tab-separated record per node:
//!
//! ```text
//! <id>\t<name>\t<level>\t<parent id or ->
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Ids must be dense and
//! appear in file order, so ids are stable across runs.

mod manifest;

pub use manifest::{class_histogram, split_manifest, ClassHistogram, DatasetManifest, SceneSample};

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

/// Bundled three-level land-use schema (8 / 28 / 37 nodes per level).
pub const MILLION_AID_SCHEMA: &str = include_str!("../../data/million_aid.tsv");

pub type LabelId = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("label {id} is part of a parent cycle")]
    Cycle { id: LabelId },
    #[error("label {id} references missing parent {parent}")]
    DanglingParent { id: LabelId, parent: LabelId },
    #[error("unknown label {0}")]
    UnknownLabel(LabelId),
    #[error("duplicate sample id {0:?}")]
    DuplicateSample(String),
    #[error("train count {requested} exceeds manifest size {available}")]
    Count { requested: usize, available: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelNode {
    pub id: LabelId,
    pub name: String,
    pub level: u8,
    pub parent: Option<LabelId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelTaxonomy {
    nodes: Vec<LabelNode>,
    children: Vec<Vec<LabelId>>,
    leaf_ids: BTreeSet<LabelId>,
}

impl LabelTaxonomy {
    /// Builds and validates a taxonomy from nodes whose ids equal their index.
    pub fn from_nodes(nodes: Vec<LabelNode>) -> Result<Self, TaxonomyError> {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(TaxonomyError::Parse {
                    line: i + 1,
                    msg: format!("id {} out of order, expected {i}", node.id),
                });
            }
            if let Some(p) = node.parent {
                if p >= n {
                    return Err(TaxonomyError::DanglingParent { id: i, parent: p });
                }
            }
        }

        // parent walks longer than n steps must revisit a node
        for start in 0..n {
            let mut cur = nodes[start].parent;
            let mut steps = 0;
            while let Some(p) = cur {
                steps += 1;
                if p == start || steps > n {
                    return Err(TaxonomyError::Cycle { id: start });
                }
                cur = nodes[p].parent;
            }
        }

        for node in &nodes {
            let ok = match node.parent {
                None => node.level == 1,
                Some(p) => node.level > 1 && nodes[p].level + 1 == node.level,
            };
            if !ok {
                return Err(TaxonomyError::Parse {
                    line: node.id + 1,
                    msg: format!(
                        "label {} ({:?}) has level {} inconsistent with its parent",
                        node.id, node.name, node.level
                    ),
                });
            }
        }

        let mut children = vec![Vec::new(); n];
        for node in &nodes {
            if let Some(p) = node.parent {
                children[p].push(node.id);
            }
        }
        let leaf_ids = (0..n).filter(|&i| children[i].is_empty()).collect();
        Ok(Self {
            nodes,
            children,
            leaf_ids,
        })
    }

    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let mut nodes = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 4 {
                return Err(TaxonomyError::Parse {
                    line,
                    msg: format!("expected 4 tab-separated fields, got {}", fields.len()),
                });
            }
            let num = |s: &str, what: &str| {
                s.trim().parse::<usize>().map_err(|_| TaxonomyError::Parse {
                    line,
                    msg: format!("invalid {what} {s:?}"),
                })
            };
            let id = num(fields[0], "id")?;
            let name = fields[1].trim();
            if name.is_empty() {
                return Err(TaxonomyError::Parse {
                    line,
                    msg: "empty label name".into(),
                });
            }
            let level = num(fields[2], "level")?;
            if !(1..=3).contains(&level) {
                return Err(TaxonomyError::Parse {
                    line,
                    msg: format!("level {level} outside 1..=3"),
                });
            }
            let parent = match fields[3].trim() {
                "-" => None,
                p => Some(num(p, "parent")?),
            };
            if id != nodes.len() {
                return Err(TaxonomyError::Parse {
                    line,
                    msg: format!("id {id} out of order, expected {}", nodes.len()),
                });
            }
            nodes.push(LabelNode {
                id,
                name: name.to_string(),
                level: level as u8,
                parent,
            });
        }
        Self::from_nodes(nodes)
    }

    pub fn million_aid() -> Self {
        Self::parse(MILLION_AID_SCHEMA).expect("bundled schema is valid")
    }

    /// Single-level taxonomy where every label is a root and a leaf.
    pub fn flat<S: AsRef<str>>(names: &[S]) -> Self {
        let nodes = names
            .iter()
            .enumerate()
            .map(|(id, name)| LabelNode {
                id,
                name: name.as_ref().to_string(),
                level: 1,
                parent: None,
            })
            .collect();
        Self::from_nodes(nodes).expect("flat taxonomy is valid")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let parent = n.parent.map_or("-".to_string(), |p| p.to_string());
            let _ = writeln!(out, "{}\t{}\t{}\t{}", n.id, n.name, n.level, parent);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[LabelNode] {
        &self.nodes
    }

    pub fn node(&self, id: LabelId) -> Option<&LabelNode> {
        self.nodes.get(id)
    }

    pub fn children(&self, id: LabelId) -> &[LabelId] {
        &self.children[id]
    }

    pub fn leaf_ids(&self) -> &BTreeSet<LabelId> {
        &self.leaf_ids
    }

    pub fn is_leaf(&self, id: LabelId) -> bool {
        self.leaf_ids.contains(&id)
    }

    pub fn roots(&self) -> impl Iterator<Item = LabelId> + '_ {
        self.nodes.iter().filter(|n| n.parent.is_none()).map(|n| n.id)
    }

    pub fn count_at_level(&self, level: u8) -> usize {
        self.nodes.iter().filter(|n| n.level == level).count()
    }

    /// Position of a leaf among the sorted leaf ids; this is the class index
    /// used by single-label classifiers.
    pub fn leaf_index(&self, id: LabelId) -> Option<usize> {
        if !self.is_leaf(id) {
            return None;
        }
        Some(self.leaf_ids.range(..id).count())
    }

    pub fn leaf_at(&self, index: usize) -> Option<LabelId> {
        self.leaf_ids.iter().nth(index).copied()
    }

    pub fn leaf_names(&self) -> Vec<String> {
        self.leaf_ids
            .iter()
            .map(|&i| self.nodes[i].name.clone())
            .collect()
    }

    /// Ancestor chain of a leaf, ordered root to leaf.
    pub fn expand_labels(&self, fine: LabelId) -> Result<Vec<LabelId>, TaxonomyError> {
        if !self.is_leaf(fine) {
            return Err(TaxonomyError::UnknownLabel(fine));
        }
        let mut chain = vec![fine];
        let mut cur = self.nodes[fine].parent;
        while let Some(p) = cur {
            chain.push(p);
            cur = self.nodes[p].parent;
        }
        chain.reverse();
        Ok(chain)
    }

    /// Multi-hot target over all nodes for a leaf's expanded chain.
    pub fn multi_hot(&self, fine: LabelId) -> Result<Vec<f64>, TaxonomyError> {
        let mut v = vec![0.0; self.len()];
        for id in self.expand_labels(fine)? {
            v[id] = 1.0;
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bundled_schema_counts() {
        let t = LabelTaxonomy::million_aid();
        assert_eq!(t.count_at_level(1), 8);
        assert_eq!(t.count_at_level(2), 28);
        assert_eq!(t.leaf_ids().len(), 51);
        assert_eq!(t.len(), 73);
        assert_eq!(t.roots().count(), 8);
    }

    #[test]
    fn bundled_schema_roundtrips_through_text() {
        let t = LabelTaxonomy::million_aid();
        assert_eq!(LabelTaxonomy::parse(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn single_root_leaf() {
        let t = LabelTaxonomy::parse("0\tforest\t1\t-\n").unwrap();
        assert_eq!(t.roots().count(), 1);
        assert_eq!(t.leaf_ids().len(), 1);
        assert_eq!(t.expand_labels(0).unwrap(), vec![0]);
    }

    #[test]
    fn dangling_parent() {
        let err = LabelTaxonomy::parse("0\ta\t1\t-\n1\tb\t2\t7\n").unwrap_err();
        assert_eq!(err, TaxonomyError::DanglingParent { id: 1, parent: 7 });
    }

    #[test]
    fn cycle_detected() {
        let err = LabelTaxonomy::parse("0\ta\t2\t1\n1\tb\t2\t0\n").unwrap_err();
        assert!(matches!(err, TaxonomyError::Cycle { .. }));
        let err = LabelTaxonomy::parse("0\ta\t2\t0\n").unwrap_err();
        assert!(matches!(err, TaxonomyError::Cycle { id: 0 }));
    }

    #[test]
    fn malformed_records() {
        assert!(matches!(
            LabelTaxonomy::parse("0\ta\t1\n"),
            Err(TaxonomyError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            LabelTaxonomy::parse("# c\n\n1\ta\t1\t-\n"),
            Err(TaxonomyError::Parse { line: 3, .. })
        ));
        // level-1 node with a parent
        assert!(matches!(
            LabelTaxonomy::parse("0\ta\t1\t-\n1\tb\t1\t0\n"),
            Err(TaxonomyError::Parse { .. })
        ));
        assert!(matches!(
            LabelTaxonomy::parse("0\ta\t4\t-\n"),
            Err(TaxonomyError::Parse { .. })
        ));
    }

    #[test]
    fn expand_level_three_leaf() {
        let t = LabelTaxonomy::million_aid();
        let leaf = t
            .nodes()
            .iter()
            .find(|n| n.name == "dry field")
            .unwrap()
            .id;
        let chain = t.expand_labels(leaf).unwrap();
        assert_eq!(chain.len(), 3);
        assert_eq!(t.node(chain[0]).unwrap().name, "agriculture land");
        assert_eq!(*chain.last().unwrap(), leaf);
    }

    #[test]
    fn expand_rejects_non_leaf_and_unknown() {
        let t = LabelTaxonomy::million_aid();
        assert_eq!(t.expand_labels(0), Err(TaxonomyError::UnknownLabel(0)));
        assert_eq!(t.expand_labels(999), Err(TaxonomyError::UnknownLabel(999)));
    }

    #[test]
    fn leaf_index_is_rank_among_leaves() {
        let t = LabelTaxonomy::million_aid();
        for (i, &leaf) in t.leaf_ids().iter().enumerate() {
            assert_eq!(t.leaf_index(leaf), Some(i));
            assert_eq!(t.leaf_at(i), Some(leaf));
        }
        assert_eq!(t.leaf_index(0), None);
    }

    /// Random forest where node i (i > 0) either starts a new root or hangs
    /// under an earlier node of level < 3.
    fn random_taxonomy(choices: &[u8]) -> LabelTaxonomy {
        let mut nodes: Vec<LabelNode> = Vec::new();
        for (i, &c) in choices.iter().enumerate() {
            let candidates: Vec<usize> = nodes
                .iter()
                .filter(|n| n.level < 3)
                .map(|n| n.id)
                .collect();
            let parent = if i == 0 || c % 4 == 0 || candidates.is_empty() {
                None
            } else {
                Some(candidates[c as usize % candidates.len()])
            };
            let level = parent.map_or(1, |p| nodes[p].level + 1);
            nodes.push(LabelNode {
                id: i,
                name: format!("n{i}"),
                level,
                parent,
            });
        }
        LabelTaxonomy::from_nodes(nodes).unwrap()
    }

    proptest! {
        #[test]
        fn expansion_matches_parent_walk(choices in proptest::collection::vec(any::<u8>(), 1..60)) {
            let t = random_taxonomy(&choices);
            for &leaf in t.leaf_ids() {
                // oracle: walk parent pointers directly from the node list
                let mut path = Vec::new();
                let mut cur = Some(leaf);
                while let Some(id) = cur {
                    path.insert(0, id);
                    cur = t.nodes()[id].parent;
                }
                let chain = t.expand_labels(leaf).unwrap();
                prop_assert_eq!(&chain, &path);
                prop_assert_eq!(chain.len(), t.node(leaf).unwrap().level as usize);
                prop_assert!(t.node(chain[0]).unwrap().parent.is_none());
            }
        }
    }
}
