//! Random forest for display-segment classification.
//!
//! 100 CART trees of depth ≤ 10, each grown on a bootstrap resample with
//! Gini impurity and ⌊√d⌋ candidate features per split. Splits test
//! `x ≤ v` against observed sample values, which makes predictions exactly
//! invariant under strictly monotone per-feature transforms. Every source
//! of randomness derives from one master seed (per-tree ChaCha streams),
//! so retraining writes byte-identical model files.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MODEL_VERSION: u32 = 1;
/// Stamped into model files so a model is never applied to a feature
/// layout it was not trained on.
pub const FEATURE_ORDER: &str = "rgb_mean3,rgb_var3,lab_hist24,hog3d_bow100,\
area_ratio,convexity,rectangleness,aspect_ratio,edge_count,centroid2,bbox4";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        positive_fraction: f64,
        samples: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> bool {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf {
                    positive_fraction, ..
                } => return *positive_fraction > 0.5,
            }
        }
    }

    fn max_depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize, depth: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => depth,
                Node::Split { left, right, .. } => {
                    walk(nodes, *left, depth + 1).max(walk(nodes, *right, depth + 1))
                }
            }
        }
        walk(&self.nodes, 0, 0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ForestModel {
    pub version: u32,
    pub feature_dim: usize,
    pub feature_order: String,
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Manifest(format!("model serialization: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let model: Self = serde_json::from_str(&text).map_err(|e| Error::ModelFormat {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if model.version != MODEL_VERSION {
            return Err(Error::ModelFormat {
                path: path.to_path_buf(),
                detail: format!("model version {} unsupported", model.version),
            });
        }
        Ok(model)
    }

    /// Verify the structural invariants (used by tests and on load).
    pub fn check_structure(&self) -> Result<()> {
        for tree in &self.trees {
            if tree.max_depth() > self.max_depth {
                return Err(Error::Config(format!(
                    "tree exceeds depth bound {}",
                    self.max_depth
                )));
            }
            for node in &tree.nodes {
                if let Node::Split { feature, .. } = node {
                    if *feature >= self.feature_dim {
                        return Err(Error::Config(format!(
                            "split feature {feature} outside 0..{}",
                            self.feature_dim
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a> {
    features: &'a [Vec<f64>],
    labels: &'a [bool],
    max_depth: usize,
    n_candidates: usize,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf(&mut self, indices: &[usize]) -> usize {
        let pos = indices.iter().filter(|&&i| self.labels[i]).count();
        self.nodes.push(Node::Leaf {
            positive_fraction: pos as f64 / indices.len() as f64,
            samples: indices.len(),
        });
        self.nodes.len() - 1
    }

    fn grow(&mut self, indices: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let pos = indices.iter().filter(|&&i| self.labels[i]).count();
        if depth >= self.max_depth || indices.len() < 2 || pos == 0 || pos == indices.len() {
            return self.leaf(&indices);
        }

        let dim = self.features[0].len();
        let candidates = rand::seq::index::sample(rng, dim, self.n_candidates.min(dim));

        let mut best: Option<(f64, usize, f64)> = None; // (impurity, feature, threshold)
        for feature in candidates.iter() {
            let mut values: Vec<f64> =
                indices.iter().map(|&i| self.features[i][feature]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            // Splitting at the largest value would leave the right side
            // empty; every smaller observed value is a candidate.
            for &v in &values[..values.len() - 1] {
                let (mut lp, mut ln, mut rp, mut rn) = (0usize, 0usize, 0usize, 0usize);
                for &i in &indices {
                    let positive = self.labels[i];
                    if self.features[i][feature] <= v {
                        lp += positive as usize;
                        ln += 1;
                    } else {
                        rp += positive as usize;
                        rn += 1;
                    }
                }
                let impurity = (ln as f64 * gini(lp, ln) + rn as f64 * gini(rp, rn))
                    / indices.len() as f64;
                if best.map_or(true, |(b, _, _)| impurity < b) {
                    best = Some((impurity, feature, v));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            // All candidate features constant on this node.
            return self.leaf(&indices);
        };

        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .copied()
            .partition(|&i| self.features[i][feature] <= threshold);

        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            positive_fraction: 0.0,
            samples: 0,
        }); // placeholder
        let left = self.grow(left_idx, depth + 1, rng);
        let right = self.grow(right_idx, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

/// Train a forest. Errors when only one class is present or fewer than
/// two samples are given; feature rows must share one dimension.
pub fn train_forest(
    features: &[Vec<f64>],
    labels: &[bool],
    n_trees: usize,
    max_depth: usize,
    seed: u64,
) -> Result<ForestModel> {
    assert_eq!(features.len(), labels.len());
    if features.len() < 2 {
        return Err(Error::TooFewSamples {
            found: features.len(),
        });
    }
    let dim = features[0].len();
    for row in features {
        if row.len() != dim {
            return Err(Error::FeatureDimMismatch {
                got: row.len(),
                want: dim,
            });
        }
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::SingleClassTraining);
    }

    let n_candidates = (dim as f64).sqrt().floor() as usize;
    let n_candidates = n_candidates.max(1);
    let n = features.len();

    // Trees are independent: each derives its own ChaCha stream from the
    // master seed, so parallel training stays deterministic.
    let trees: Vec<Tree> = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64 + 1);
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut builder = TreeBuilder {
                features,
                labels,
                max_depth,
                n_candidates,
                nodes: Vec::new(),
            };
            builder.grow(bootstrap, 0, &mut rng);
            Tree {
                nodes: builder.nodes,
            }
        })
        .collect();

    Ok(ForestModel {
        version: MODEL_VERSION,
        feature_dim: dim,
        feature_order: FEATURE_ORDER.to_string(),
        n_trees,
        max_depth,
        seed,
        trees,
    })
}

/// Majority vote over the trees. `label = vote_fraction > 0.5`; an exact
/// tie is negative.
pub fn classify(model: &ForestModel, features: &[f64]) -> Result<(bool, f64)> {
    if features.len() != model.feature_dim {
        return Err(Error::FeatureDimMismatch {
            got: features.len(),
            want: model.feature_dim,
        });
    }
    let positive = model.trees.iter().filter(|t| t.predict(features)).count();
    let fraction = positive as f64 / model.trees.len() as f64;
    Ok((fraction > 0.5, fraction))
}
