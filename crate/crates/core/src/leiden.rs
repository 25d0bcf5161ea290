//! Leiden community detection (local moving, refinement, aggregation) on a
//! weighted undirected graph, with a constant Potts model objective by
//! default and a resolution-scaled modularity objective as an alternative.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::teg::TokenEmbeddingGraph;

const EPS: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum LeidenError {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("resolution must be positive and finite, got {0}")]
    InvalidResolution(f64),
    #[error("graph has no nodes")]
    EmptyGraph,
}

/// Clustering resolution. Larger values yield more, smaller communities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Resolution(f64);

impl Resolution {
    pub fn new(value: f64) -> Result<Self, LeidenError> {
        if value > 0.0 && value.is_finite() {
            Ok(Self(value))
        } else {
            Err(LeidenError::InvalidResolution(value))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Resolution {
    type Error = LeidenError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Resolution> for f64 {
    fn from(r: Resolution) -> f64 {
        r.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `sum_c [w_in(c) - res * n_c (n_c - 1) / 2]`
    #[default]
    Cpm,
    /// `(1/m) sum_c [w_in(c) - res * K_c^2 / 4m]`
    Modularity,
}

/// Node id to dense community id `0..count`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Partition {
    assignment: Vec<usize>,
    count: usize,
}

impl Partition {
    pub fn singletons(n: usize) -> Self {
        Self {
            assignment: (0..n).collect(),
            count: n,
        }
    }

    /// Validates that ids are dense and every community is non-empty.
    pub fn new(assignment: Vec<usize>) -> Result<Self, LeidenError> {
        let count = assignment.iter().max().map_or(0, |&m| m + 1);
        let mut seen = vec![false; count];
        for &c in &assignment {
            seen[c] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(LeidenError::InvalidPartition(format!(
                "community {missing} is empty"
            )));
        }
        Ok(Self { assignment, count })
    }

    /// Renumbers arbitrary labels densely in order of first appearance.
    pub fn from_labels(labels: &[usize]) -> Self {
        let (assignment, count) = renumber(labels);
        Self { assignment, count }
    }

    pub fn community_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn community_count(&self) -> usize {
        self.count
    }

    pub fn node_count(&self) -> usize {
        self.assignment.len()
    }

    /// Member lists per community, members ascending.
    pub fn communities(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (v, &c) in self.assignment.iter().enumerate() {
            out[c].push(v);
        }
        out
    }
}

impl TryFrom<Vec<usize>> for Partition {
    type Error = LeidenError;
    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<Partition> for Vec<usize> {
    fn from(p: Partition) -> Vec<usize> {
        p.assignment
    }
}

fn renumber(labels: &[usize]) -> (Vec<usize>, usize) {
    let max = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut map = vec![usize::MAX; max];
    let mut next = 0;
    let out = labels
        .iter()
        .map(|&l| {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
            map[l]
        })
        .collect();
    (out, next)
}

fn check_partition(graph: &TokenEmbeddingGraph, p: &Partition) -> Result<(), LeidenError> {
    if p.node_count() != graph.node_count {
        return Err(LeidenError::InvalidPartition(format!(
            "partition covers {} nodes, graph has {}",
            p.node_count(),
            graph.node_count
        )));
    }
    Ok(())
}

fn internal_weights(graph: &TokenEmbeddingGraph, p: &Partition) -> Vec<f64> {
    let mut w_in = vec![0.0; p.community_count()];
    for e in &graph.edges {
        let c = p.community_of(e.u);
        if c == p.community_of(e.v) {
            w_in[c] += e.w;
        }
    }
    w_in
}

/// Constant Potts model quality of `p`.
pub fn cpm_quality(
    graph: &TokenEmbeddingGraph,
    p: &Partition,
    resolution: Resolution,
) -> Result<f64, LeidenError> {
    check_partition(graph, p)?;
    let w_in = internal_weights(graph, p);
    let mut sizes = vec![0usize; p.community_count()];
    for &c in p.assignment() {
        sizes[c] += 1;
    }
    Ok(w_in
        .iter()
        .zip(&sizes)
        .map(|(&w, &s)| w - resolution.get() * (s * s.saturating_sub(1)) as f64 / 2.0)
        .sum())
}

/// Resolution-scaled modularity of `p` (0 for an edgeless graph).
pub fn modularity_quality(
    graph: &TokenEmbeddingGraph,
    p: &Partition,
    resolution: Resolution,
) -> Result<f64, LeidenError> {
    check_partition(graph, p)?;
    let total: f64 = graph.edges.iter().map(|e| e.w).sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let w_in = internal_weights(graph, p);
    let mut deg = vec![0.0; p.community_count()];
    for e in &graph.edges {
        deg[p.community_of(e.u)] += e.w;
        deg[p.community_of(e.v)] += e.w;
    }
    Ok(w_in
        .iter()
        .zip(&deg)
        .map(|(&w, &k)| w - resolution.get() * k * k / (4.0 * total))
        .sum::<f64>()
        / total)
}

pub fn quality(
    graph: &TokenEmbeddingGraph,
    p: &Partition,
    resolution: Resolution,
    objective: Objective,
) -> Result<f64, LeidenError> {
    match objective {
        Objective::Cpm => cpm_quality(graph, p, resolution),
        Objective::Modularity => modularity_quality(graph, p, resolution),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeidenConfig {
    pub resolution: Resolution,
    pub objective: Objective,
    /// Randomness of refinement merges.
    pub theta: f64,
    /// Cap on move/refine/aggregate passes per run.
    pub max_passes: usize,
    /// Cap on repeated runs seeded with the previous result.
    pub max_runs: usize,
    /// Independent attempts from singletons; the best one is returned.
    pub restarts: usize,
}

impl LeidenConfig {
    pub fn new(resolution: Resolution) -> Self {
        Self {
            resolution,
            objective: Objective::Cpm,
            theta: 0.01,
            max_passes: 100,
            max_runs: 10,
            restarts: 8,
        }
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }
}

#[derive(Debug, Clone)]
pub struct LeidenOutcome {
    pub partition: Partition,
    pub quality: f64,
    /// Quality of the flattened partition after every pass, in order.
    pub pass_quality: Vec<f64>,
}

/// CPM Leiden with default settings.
pub fn leiden(graph: &TokenEmbeddingGraph, resolution: Resolution, seed: u64) -> Partition {
    leiden_with(graph, &LeidenConfig::new(resolution), seed).partition
}

pub fn leiden_with(graph: &TokenEmbeddingGraph, cfg: &LeidenConfig, seed: u64) -> LeidenOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Network::from_graph(graph, cfg.objective);
    let scale = match cfg.objective {
        Objective::Cpm => cfg.resolution.get(),
        Objective::Modularity => {
            let two_m: f64 = base.node_w.iter().sum();
            if two_m > 0.0 {
                cfg.resolution.get() / two_m
            } else {
                0.0
            }
        }
    };
    let q = |labels: &[usize]| {
        quality(graph, &Partition::from_labels(labels), cfg.resolution, cfg.objective)
            .expect("partition sized to graph")
    };

    let mut best: Option<(Vec<usize>, f64, Vec<f64>)> = None;
    for _ in 0..cfg.restarts.max(1) {
        let mut attempt_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut labels: Vec<usize> = (0..graph.node_count).collect();
        let mut best_q = q(&labels);
        let mut pass_quality = vec![best_q];
        for _ in 0..cfg.max_runs.max(1) {
            let next = run_once(&base, &labels, scale, cfg, &mut attempt_rng, &mut pass_quality, &q);
            let next_q = q(&next);
            let improved = next_q > best_q + EPS * (1.0 + best_q.abs());
            if next_q >= best_q {
                labels = next;
                best_q = next_q;
            }
            if !improved {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| best_q > b.1 + EPS * (1.0 + b.1.abs())) {
            best = Some((labels, best_q, pass_quality));
        }
    }
    let (labels, _, pass_quality) = best.expect("at least one attempt");

    let split = split_disconnected(&base, &labels);
    let partition = Partition::from_labels(&split);
    let quality = q(partition.assignment());
    LeidenOutcome {
        partition,
        quality,
        pass_quality,
    }
}

#[derive(Debug, Clone)]
struct Network {
    start: Vec<usize>,
    adj: Vec<(usize, f64)>,
    node_w: Vec<f64>,
}

impl Network {
    fn from_graph(graph: &TokenEmbeddingGraph, objective: Objective) -> Self {
        let n = graph.node_count;
        let mut triples = Vec::with_capacity(graph.edges.len() * 2);
        for e in &graph.edges {
            triples.push((e.u, e.v, e.w));
            triples.push((e.v, e.u, e.w));
        }
        let net = Self::from_triples(n, triples, vec![0.0; n]);
        let node_w = match objective {
            Objective::Cpm => vec![1.0; n],
            Objective::Modularity => (0..n)
                .map(|v| net.neighbors(v).iter().map(|&(_, w)| w).sum())
                .collect(),
        };
        Self { node_w, ..net }
    }

    /// Builds CSR adjacency from directed triples; duplicates are summed.
    fn from_triples(n: usize, mut triples: Vec<(usize, usize, f64)>, node_w: Vec<f64>) -> Self {
        triples.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut start = vec![0usize; n + 1];
        let mut adj: Vec<(usize, f64)> = Vec::with_capacity(triples.len());
        let mut last: Option<(usize, usize)> = None;
        for (a, b, w) in triples {
            if last == Some((a, b)) {
                adj.last_mut().expect("previous entry").1 += w;
                continue;
            }
            last = Some((a, b));
            adj.push((b, w));
            start[a + 1] += 1;
        }
        for i in 0..n {
            start[i + 1] += start[i];
        }
        Self { start, adj, node_w }
    }

    fn len(&self) -> usize {
        self.node_w.len()
    }

    fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[self.start[v]..self.start[v + 1]]
    }
}

/// Sparse accumulator keyed by cluster id.
struct Links {
    weight: Vec<f64>,
    seen: Vec<bool>,
    touched: Vec<usize>,
}

impl Links {
    fn new(n: usize) -> Self {
        Self {
            weight: vec![0.0; n],
            seen: vec![false; n],
            touched: Vec::new(),
        }
    }

    fn add(&mut self, c: usize, w: f64) {
        if !self.seen[c] {
            self.seen[c] = true;
            self.touched.push(c);
        }
        self.weight[c] += w;
    }

    fn clear(&mut self) {
        for &c in &self.touched {
            self.weight[c] = 0.0;
            self.seen[c] = false;
        }
        self.touched.clear();
    }
}

fn run_once(
    base: &Network,
    initial: &[usize],
    scale: f64,
    cfg: &LeidenConfig,
    rng: &mut ChaCha8Rng,
    pass_quality: &mut Vec<f64>,
    q: &dyn Fn(&[usize]) -> f64,
) -> Vec<usize> {
    let mut net = base.clone();
    let (mut clusters, _) = renumber(initial);
    let mut node_of: Vec<usize> = (0..base.len()).collect();

    for _ in 0..cfg.max_passes.max(1) {
        move_nodes_fast(&net, &mut clusters, scale, rng);
        let flat: Vec<usize> = node_of.iter().map(|&a| clusters[a]).collect();
        pass_quality.push(q(&flat));

        let (dense, count) = renumber(&clusters);
        clusters = dense;
        if count == net.len() {
            break;
        }
        let refined = refine(&net, &clusters, scale, cfg.theta, rng);
        let (refined, refined_count) = renumber(&refined);
        if refined_count == net.len() {
            break;
        }
        let (agg, agg_clusters) = aggregate(&net, &refined, refined_count, &clusters);
        for a in node_of.iter_mut() {
            *a = refined[*a];
        }
        net = agg;
        clusters = agg_clusters;
    }
    node_of.iter().map(|&a| clusters[a]).collect()
}

fn move_nodes_fast(net: &Network, clusters: &mut [usize], scale: f64, rng: &mut ChaCha8Rng) -> bool {
    let n = net.len();
    let mut total = vec![0.0; n];
    let mut members = vec![0usize; n];
    for v in 0..n {
        total[clusters[v]] += net.node_w[v];
        members[clusters[v]] += 1;
    }
    let mut empty: Vec<usize> = (0..n).rev().filter(|&c| members[c] == 0).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: VecDeque<usize> = order.into();
    let mut queued = vec![true; n];
    let mut links = Links::new(n);
    let mut moved = false;

    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let old = clusters[v];
        let a_v = net.node_w[v];
        for &(u, w) in net.neighbors(v) {
            if u != v {
                links.add(clusters[u], w);
            }
        }
        total[old] -= a_v;
        members[old] -= 1;

        let value = |c: usize, link: f64| link - scale * a_v * total[c];
        let mut best = old;
        let mut best_val = value(old, links.weight[old]);
        for &c in &links.touched {
            if c == old {
                continue;
            }
            let val = value(c, links.weight[c]);
            if val > best_val + EPS {
                best = c;
                best_val = val;
            }
        }
        if members[old] > 0 && 0.0 > best_val + EPS {
            best = empty.pop().expect("an unused cluster id exists");
        }
        links.clear();

        total[best] += a_v;
        members[best] += 1;
        clusters[v] = best;
        if best != old {
            moved = true;
            if members[old] == 0 {
                empty.push(old);
            }
            for &(u, _) in net.neighbors(v) {
                if !queued[u] && clusters[u] != best {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    moved
}

/// Merges singletons within each cluster of `clusters` into well-connected
/// sub-clusters, choosing among non-negative merges at random with weights
/// `exp(gain / theta)`.
fn refine(net: &Network, clusters: &[usize], scale: f64, theta: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = net.len();
    let mut refined: Vec<usize> = (0..n).collect();
    let mut ref_total = net.node_w.clone();
    let mut ref_members = vec![1usize; n];
    let mut cluster_total = vec![0.0; n];
    for v in 0..n {
        cluster_total[clusters[v]] += net.node_w[v];
    }
    // Weight from each refined cluster to the rest of its enclosing cluster.
    let mut external: Vec<f64> = (0..n)
        .map(|v| {
            net.neighbors(v)
                .iter()
                .filter(|&&(u, _)| u != v && clusters[u] == clusters[v])
                .map(|&(_, w)| w)
                .sum()
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut links = Links::new(n);
    let mut choices: Vec<(usize, f64)> = Vec::new();

    for v in order {
        let own = refined[v];
        if ref_members[own] != 1 {
            continue;
        }
        let s = clusters[v];
        let a_v = net.node_w[v];
        if external[own] + EPS < scale * a_v * (cluster_total[s] - a_v) {
            continue;
        }
        for &(u, w) in net.neighbors(v) {
            if u != v && clusters[u] == s {
                links.add(refined[u], w);
            }
        }
        choices.clear();
        choices.push((own, 0.0));
        for &c in &links.touched {
            if c == own {
                continue;
            }
            let connected =
                external[c] + EPS >= scale * ref_total[c] * (cluster_total[s] - ref_total[c]);
            let gain = links.weight[c] - scale * a_v * ref_total[c];
            if connected && gain >= 0.0 {
                choices.push((c, gain));
            }
        }
        let target = if choices.len() == 1 {
            own
        } else {
            let top = choices.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = choices
                .iter()
                .map(|&(_, g)| ((g - top) / theta).exp())
                .collect();
            let sum: f64 = weights.iter().sum();
            let mut r = rng.random::<f64>() * sum;
            let mut pick = choices[choices.len() - 1].0;
            for (&(c, _), &w) in choices.iter().zip(&weights) {
                if r < w {
                    pick = c;
                    break;
                }
                r -= w;
            }
            pick
        };
        if target != own {
            external[target] += external[own] - 2.0 * links.weight[target];
            ref_total[target] += a_v;
            ref_members[target] += 1;
            ref_members[own] = 0;
            refined[v] = target;
        }
        links.clear();
    }
    refined
}

/// Collapses each refined cluster to a node. Returns the aggregate network
/// and the initial clustering of its nodes, inherited from `clusters`.
fn aggregate(
    net: &Network,
    refined: &[usize],
    count: usize,
    clusters: &[usize],
) -> (Network, Vec<usize>) {
    let mut node_w = vec![0.0; count];
    let mut agg_clusters = vec![0usize; count];
    let mut triples = Vec::new();
    for v in 0..net.len() {
        let a = refined[v];
        node_w[a] += net.node_w[v];
        agg_clusters[a] = clusters[v];
        for &(u, w) in net.neighbors(v) {
            let b = refined[u];
            if a != b {
                triples.push((a, b, w));
            }
        }
    }
    (Network::from_triples(count, triples, node_w), agg_clusters)
}

/// Splits any cluster whose members are not connected into its components.
fn split_disconnected(net: &Network, labels: &[usize]) -> Vec<usize> {
    let n = net.len();
    let mut out = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if out[s] != usize::MAX {
            continue;
        }
        out[s] = next;
        stack.push(s);
        while let Some(v) = stack.pop() {
            for &(u, _) in net.neighbors(v) {
                if out[u] == usize::MAX && labels[u] == labels[s] {
                    out[u] = next;
                    stack.push(u);
                }
            }
        }
        next += 1;
    }
    out
}

/// Whether every community of `p` induces a connected subgraph.
pub fn communities_connected(graph: &TokenEmbeddingGraph, p: &Partition) -> bool {
    let net = Network::from_graph(graph, Objective::Cpm);
    let split = split_disconnected(&net, p.assignment());
    Partition::from_labels(&split).community_count() == p.community_count()
}
