//! Token embedding graph: exact K-NN over the embedding rows, per-node
//! smoothing parameters and symmetrized exponential edge weights.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedstore::EmbeddingMatrix;

pub const SIGMA_MIN: f64 = 1e-8;
pub const SIGMA_MAX: f64 = 1e6;
pub const SIGMA_ITERATIONS: usize = 64;
pub const SIGMA_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum TegError {
    #[error("embedding matrix has no rows")]
    EmptyMatrix,
    #[error("neighbor list is empty")]
    EmptyNeighbors,
    #[error("graph needs at least two nodes, got {0}")]
    TooFewNodes(usize),
    #[error("k must be positive")]
    ZeroK,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub dist: f64,
}

/// Nearest neighbors of one node, ascending by `(distance, id)`, self excluded.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborList {
    pub neighbors: Vec<Neighbor>,
}

impl NeighborList {
    pub fn from_distances(dists: &[f64]) -> Self {
        Self {
            neighbors: dists
                .iter()
                .enumerate()
                .map(|(id, &dist)| Neighbor { id, dist })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.neighbors.iter().map(|n| n.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothParams {
    pub rho: f64,
    pub sigma: f64,
    /// `|f(sigma) - log2(k)|` at the returned sigma.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    /// Smallest neighbor distance, zero included.
    #[default]
    Inclusive,
    /// Smallest strictly positive neighbor distance (0 if none).
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingGraph {
    pub node_count: usize,
    /// Undirected edges with `u < v`, sorted by `(u, v)`.
    pub edges: Vec<Edge>,
    pub neighbors: Vec<NeighborList>,
    pub params: Vec<SmoothParams>,
}

impl TokenEmbeddingGraph {
    /// Graph from explicit edges, without neighbor data. Self-loops and zero
    /// weights are dropped, duplicates have their weights summed.
    pub fn from_edges(node_count: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut list: Vec<Edge> = edges
            .into_iter()
            .filter(|&(u, v, w)| u != v && w > 0.0)
            .map(|(u, v, w)| Edge {
                u: u.min(v),
                v: u.max(v),
                w,
            })
            .collect();
        list.sort_by_key(|e| (e.u, e.v));
        let mut merged: Vec<Edge> = Vec::with_capacity(list.len());
        for e in list {
            match merged.last_mut() {
                Some(last) if last.u == e.u && last.v == e.v => last.w += e.w,
                _ => merged.push(e),
            }
        }
        Self {
            node_count,
            edges: merged,
            neighbors: Vec::new(),
            params: Vec::new(),
        }
    }

    /// Writes the edge list as JSON lines `{"u":..,"v":..,"w":..}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.edges {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn cmp_neighbor(a: &Neighbor, b: &Neighbor) -> std::cmp::Ordering {
    a.dist.total_cmp(&b.dist).then(a.id.cmp(&b.id))
}

/// Exact K-NN by a parallel brute-force scan. Uses `min(k, n - 1)` neighbors.
pub fn knn(matrix: &EmbeddingMatrix, k: usize) -> Result<Vec<NeighborList>, TegError> {
    let n = matrix.rows();
    if n == 0 {
        return Err(TegError::EmptyMatrix);
    }
    if k == 0 {
        return Err(TegError::ZeroK);
    }
    let k = k.min(n - 1);
    let lists = (0..n)
        .into_par_iter()
        .map(|i| {
            if k == 0 {
                return NeighborList::default();
            }
            let mut cand: Vec<Neighbor> = (0..n)
                .filter(|&j| j != i)
                .map(|j| Neighbor {
                    id: j,
                    dist: matrix.distance(i, j),
                })
                .collect();
            if cand.len() > k {
                cand.select_nth_unstable_by(k - 1, cmp_neighbor);
                cand.truncate(k);
            }
            cand.sort_unstable_by(cmp_neighbor);
            NeighborList { neighbors: cand }
        })
        .collect();
    Ok(lists)
}

fn rho_of(list: &NeighborList, mode: RhoMode) -> f64 {
    match mode {
        RhoMode::Inclusive => list.neighbors[0].dist,
        RhoMode::Strict => list
            .neighbors
            .iter()
            .map(|n| n.dist)
            .find(|&d| d > 0.0)
            .unwrap_or(0.0),
    }
}

fn membership_sum(list: &NeighborList, rho: f64, sigma: f64) -> f64 {
    list.neighbors
        .iter()
        .map(|n| (-(n.dist - rho).max(0.0) / sigma).exp())
        .sum()
}

/// Solves `sum_j exp(-max(0, d_j - rho) / sigma) = log2(k)` for sigma by
/// bisection (geometric midpoints) over `[SIGMA_MIN, SIGMA_MAX]`.
pub fn smooth_params(list: &NeighborList, k: usize) -> Result<SmoothParams, TegError> {
    smooth_params_with(list, k, RhoMode::Inclusive)
}

pub fn smooth_params_with(
    list: &NeighborList,
    k: usize,
    mode: RhoMode,
) -> Result<SmoothParams, TegError> {
    if list.is_empty() {
        return Err(TegError::EmptyNeighbors);
    }
    if k == 0 {
        return Err(TegError::ZeroK);
    }
    let rho = rho_of(list, mode);
    let target = (k as f64).log2();
    let f = |sigma: f64| membership_sum(list, rho, sigma);

    let f_lo = f(SIGMA_MIN);
    if f_lo >= target {
        // Unsolvable (or solved exactly) at the lower bound.
        return Ok(SmoothParams {
            rho,
            sigma: SIGMA_MIN,
            residual: (f_lo - target).abs(),
        });
    }
    let f_hi = f(SIGMA_MAX);
    if f_hi <= target {
        return Ok(SmoothParams {
            rho,
            sigma: SIGMA_MAX,
            residual: (target - f_hi).abs(),
        });
    }

    let (mut lo, mut hi) = (SIGMA_MIN, SIGMA_MAX);
    let mut sigma = (lo * hi).sqrt();
    let mut value = f(sigma);
    for _ in 0..SIGMA_ITERATIONS {
        if (value - target).abs() <= SIGMA_TOLERANCE {
            break;
        }
        if value > target {
            hi = sigma;
        } else {
            lo = sigma;
        }
        sigma = (lo * hi).sqrt();
        value = f(sigma);
    }
    Ok(SmoothParams {
        rho,
        sigma,
        residual: (value - target).abs(),
    })
}

/// Directional membership weight, floored at the smallest positive normal
/// `f64` so that every K-NN edge keeps a weight in `(0, 1]`.
pub fn directional_weight(dist: f64, params: &SmoothParams) -> f64 {
    (-(dist - params.rho).max(0.0) / params.sigma)
        .exp()
        .max(f64::MIN_POSITIVE)
}

/// Probabilistic t-conorm `a + b - ab`, evaluated as `1 - (1-a)(1-b)` so a
/// unit operand gives exactly 1. Never below either operand.
pub fn fuzzy_union(a: f64, b: f64) -> f64 {
    (1.0 - (1.0 - a) * (1.0 - b)).max(a.max(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TegConfig {
    pub k: usize,
    pub rho_mode: RhoMode,
}

pub fn build_teg(matrix: &EmbeddingMatrix, k: usize) -> Result<TokenEmbeddingGraph, TegError> {
    build_teg_with(
        matrix,
        &TegConfig {
            k,
            rho_mode: RhoMode::Inclusive,
        },
    )
}

pub fn build_teg_with(
    matrix: &EmbeddingMatrix,
    cfg: &TegConfig,
) -> Result<TokenEmbeddingGraph, TegError> {
    let n = matrix.rows();
    if n < 2 {
        return Err(TegError::TooFewNodes(n));
    }
    let neighbors = knn(matrix, cfg.k)?;
    let k_eff = cfg.k.min(n - 1);
    let params = neighbors
        .par_iter()
        .map(|list| smooth_params_with(list, k_eff, cfg.rho_mode))
        .collect::<Result<Vec<_>, _>>()?;

    let mut directed: Vec<(usize, usize, f64)> = Vec::with_capacity(n * k_eff);
    for (i, list) in neighbors.iter().enumerate() {
        for nb in &list.neighbors {
            let w = directional_weight(nb.dist, &params[i]);
            directed.push((i.min(nb.id), i.max(nb.id), w));
        }
    }
    directed.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let mut edges = Vec::with_capacity(directed.len());
    let mut idx = 0;
    while idx < directed.len() {
        let (u, v, w) = directed[idx];
        if idx + 1 < directed.len() && directed[idx + 1].0 == u && directed[idx + 1].1 == v {
            edges.push(Edge {
                u,
                v,
                w: fuzzy_union(w, directed[idx + 1].2),
            });
            idx += 2;
        } else {
            edges.push(Edge { u, v, w });
            idx += 1;
        }
    }

    Ok(TokenEmbeddingGraph {
        node_count: n,
        edges,
        neighbors,
        params,
    })
}
