//! Seeded k-means (k-means++ initialization + Lloyd iterations) for the
//! HoG3D bag-of-words codebook.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CODEBOOK_VERSION: u32 = 1;

/// A trained bag-of-words codebook.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hog3dCodebook {
    pub version: u32,
    pub descriptor_dim: usize,
    pub seed: u64,
    pub centers: Vec<Vec<f64>>,
    /// Sum of squared distances to the nearest center after every Lloyd
    /// iteration; non-increasing by construction.
    pub objective_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Hog3dCodebook {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// Nearest-center index; ties go to the smallest index.
    pub fn assign(&self, v: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centers.iter().enumerate() {
            let d = sq_dist(v, c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Manifest(format!("codebook serialization: {e}")))?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let book: Self = serde_json::from_str(&text).map_err(|e| Error::ModelFormat {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if book.version != CODEBOOK_VERSION {
            return Err(Error::ModelFormat {
                path: path.to_path_buf(),
                detail: format!("codebook version {} unsupported", book.version),
            });
        }
        if book.centers.iter().any(|c| c.len() != book.descriptor_dim) {
            return Err(Error::ModelFormat {
                path: path.to_path_buf(),
                detail: "center dimension disagrees with descriptor_dim".into(),
            });
        }
        Ok(book)
    }
}

/// k-means++ choice of initial centers (D²-weighted sampling).
fn seed_centers(descriptors: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = descriptors.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(descriptors[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = descriptors
        .iter()
        .map(|v| sq_dist(v, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            // All points coincide with chosen centers; cannot happen when
            // the input has ≥ k distinct descriptors.
            unreachable!("distinct-descriptor precondition violated");
        };
        centers.push(descriptors[next].clone());
        for (i, v) in descriptors.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(v, centers.last().unwrap()));
        }
    }
    centers
}

/// Train a `k`-word codebook; identical seeds yield identical centers.
pub fn train_codebook(descriptors: &[Vec<f64>], k: usize, seed: u64) -> Result<Hog3dCodebook> {
    assert!(k >= 1);
    let distinct: BTreeSet<Vec<u64>> = descriptors
        .iter()
        .map(|v| v.iter().map(|x| x.to_bits()).collect())
        .collect();
    if distinct.len() < k {
        return Err(Error::TooFewDescriptors {
            k,
            distinct: distinct.len(),
        });
    }
    let dim = descriptors[0].len();
    debug_assert!(descriptors.iter().all(|d| d.len() == dim));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_centers(descriptors, k, &mut rng);
    let mut assignment = vec![usize::MAX; descriptors.len()];
    let mut trace = Vec::new();

    for _ in 0..100 {
        // Assignment step (ties to the smallest center index).
        let mut changed = false;
        for (i, v) in descriptors.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(v, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }

        // Update step.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, v) in descriptors.iter().enumerate() {
            counts[assignment[i]] += 1;
            for (s, x) in sums[assignment[i]].iter_mut().zip(v) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for s in sums[c].iter_mut() {
                    *s /= counts[c] as f64;
                }
                centers[c] = std::mem::take(&mut sums[c]);
            } else {
                // Re-seed an empty cluster to the point farthest from its
                // current center (deterministic: smallest index on ties).
                let far = descriptors
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (i, sq_dist(v, &centers[assignment[i]])))
                    .fold((0usize, f64::NEG_INFINITY), |acc, (i, d)| {
                        if d > acc.1 {
                            (i, d)
                        } else {
                            acc
                        }
                    });
                centers[c] = descriptors[far.0].clone();
            }
        }

        let objective: f64 = descriptors
            .iter()
            .map(|v| {
                centers
                    .iter()
                    .map(|c| sq_dist(v, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        trace.push(objective);

        if !changed {
            break;
        }
    }

    Ok(Hog3dCodebook {
        version: CODEBOOK_VERSION,
        descriptor_dim: dim,
        seed,
        centers,
        objective_trace: trace,
    })
}
