//! Comparison detectors: uniform sampling, dictionary-filtered sampling and
//! the k-means cluster nearest to the embedding centroid.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedstore::{EmbeddingMatrix, TokenId, Vocabulary};
use crate::taxonomy::WordList;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("sampling fraction {0} not in (0, 1]")]
    InvalidFraction(f64),
    #[error("k-means needs n >= k (n={n}, k={k})")]
    DegenerateInput { n: usize, k: usize },
}

fn check_fraction(fraction: f64) -> Result<(), BaselineError> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(BaselineError::InvalidFraction(fraction))
    }
}

/// `floor(fraction * n)` distinct ids drawn uniformly.
pub fn random_sampling(n: usize, fraction: f64, seed: u64) -> Result<BTreeSet<TokenId>, BaselineError> {
    check_fraction(fraction)?;
    let count = ((fraction * n as f64).floor() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, n, count)
        .into_iter()
        .map(|i| i as TokenId)
        .collect())
}

/// Random sampling, then drops tokens whose trimmed, lowercased string is a
/// dictionary word.
pub fn rule_based_sampling(
    vocab: &Vocabulary,
    words: &WordList,
    fraction: f64,
    seed: u64,
) -> Result<BTreeSet<TokenId>, BaselineError> {
    let mut drawn = random_sampling(vocab.len(), fraction, seed)?;
    drawn.retain(|&id| {
        let s = vocab.get(id).unwrap_or_default();
        !words.contains(&s.trim().to_lowercase())
    });
    Ok(drawn)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seeding {
    #[default]
    PlusPlus,
    /// k distinct rows chosen uniformly.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seeding: Seeding,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 50,
            max_iters: 100,
            seeding: Seeding::PlusPlus,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOutcome {
    pub members: BTreeSet<TokenId>,
    pub chosen: usize,
    pub assignment: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Within-cluster sum of squares before and after each assignment step.
    pub wcss_trace: Vec<(f64, f64)>,
    pub iterations: usize,
}

fn sq_dist(row: &[f32], center: &[f64]) -> f64 {
    row.iter()
        .zip(center)
        .map(|(&a, &b)| {
            let d = f64::from(a) - b;
            d * d
        })
        .sum()
}

fn nearest(row: &[f32], centers: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(row, center);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

fn wcss(matrix: &EmbeddingMatrix, assignment: &[usize], centers: &[Vec<f64>]) -> f64 {
    (0..matrix.rows())
        .into_par_iter()
        .map(|i| sq_dist(matrix.row(i), &centers[assignment[i]]))
        .sum()
}

fn to_f64(row: &[f32]) -> Vec<f64> {
    row.iter().map(|&x| f64::from(x)).collect()
}

fn seed_centers(matrix: &EmbeddingMatrix, k: usize, seeding: Seeding, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = matrix.rows();
    match seeding {
        Seeding::Random => index::sample(rng, n, k)
            .into_iter()
            .map(|i| to_f64(matrix.row(i)))
            .collect(),
        Seeding::PlusPlus => {
            let mut centers = vec![to_f64(matrix.row(rng.random_range(0..n)))];
            let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(matrix.row(i), &centers[0])).collect();
            while centers.len() < k {
                let next = match WeightedIndex::new(&d2) {
                    Ok(dist) => dist.sample(rng),
                    // all remaining mass is zero (duplicate rows)
                    Err(_) => rng.random_range(0..n),
                };
                let c = to_f64(matrix.row(next));
                d2.par_iter_mut()
                    .enumerate()
                    .for_each(|(i, d)| *d = d.min(sq_dist(matrix.row(i), &c)));
                centers.push(c);
            }
            centers
        }
    }
}

/// Lloyd's k-means; returns the members of the cluster whose center lies
/// nearest to the mean of all rows (lower index on ties).
pub fn kmeans_centroid_cluster(
    matrix: &EmbeddingMatrix,
    cfg: &KMeansConfig,
    seed: u64,
) -> Result<KMeansOutcome, BaselineError> {
    let (n, m, k) = (matrix.rows(), matrix.dim(), cfg.k);
    if k == 0 || n < k {
        return Err(BaselineError::DegenerateInput { n, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_centers(matrix, k, cfg.seeding, &mut rng);
    let mut assignment: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|i| nearest(matrix.row(i), &centers))
        .collect();
    let mut wcss_trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        // update step; empty clusters keep their previous center
        let mut sums = vec![vec![0.0; m]; k];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, &x) in sums[c].iter_mut().zip(matrix.row(i)) {
                *s += f64::from(x);
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let before = wcss(matrix, &assignment, &centers);
        let next: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| nearest(matrix.row(i), &centers))
            .collect();
        let changed = next != assignment;
        assignment = next;
        wcss_trace.push((before, wcss(matrix, &assignment, &centers)));
        if !changed {
            break;
        }
    }

    let mut mean = vec![0.0; m];
    for i in 0..n {
        for (s, &x) in mean.iter_mut().zip(matrix.row(i)) {
            *s += f64::from(x);
        }
    }
    mean.iter_mut().for_each(|s| *s /= n as f64);
    let chosen = (0..k)
        .map(|c| {
            let d: f64 = centers[c].iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, c)
        })
        .fold((f64::INFINITY, 0), |best, cur| if cur.0 < best.0 { cur } else { best })
        .1;
    let members = (0..n)
        .filter(|&i| assignment[i] == chosen)
        .map(|i| i as TokenId)
        .collect();
    Ok(KMeansOutcome {
        members,
        chosen,
        assignment,
        centers,
        wcss_trace,
        iterations,
    })
}
