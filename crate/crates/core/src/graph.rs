//! Random-graph generators, connectivity diagnostics and the sparsification
//! bound calculator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::FlowNetwork;

/// Undirected graph on `0..n` with optional positive edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    weights: Option<Vec<f64>>,
}

impl SparseGraph {
    /// Validates endpoints, self-loops, duplicates and weights. Edges are
    /// stored with the smaller endpoint first.
    pub fn new(n: usize, edges: Vec<(usize, usize)>, weights: Option<Vec<f64>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        let mut normalised = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Domain(format!("edge ({a},{b}) outside 0..{n}")));
            }
            if a == b {
                return Err(Error::Domain(format!("self-loop at {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::Domain(format!("duplicate edge {e:?}")));
            }
            normalised.push(e);
        }
        if let Some(w) = &weights {
            if w.len() != normalised.len() {
                return Err(Error::Domain("weight count differs from edge count".into()));
            }
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::Domain("edge weights must be positive".into()));
            }
        }
        Ok(Self {
            n,
            edges: normalised,
            weights,
        })
    }

    fn from_trusted(n: usize, edges: Vec<(usize, usize)>, weights: Option<Vec<f64>>) -> Self {
        Self { n, edges, weights }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn weight(&self, edge: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[edge])
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0,1]")));
    }
    Ok(())
}

/// Erdős–Rényi `G(n, p)`.
///
/// Uses geometric skipping over the pair sequence, so the cost is linear in
/// the number of generated edges rather than in `n^2`.
pub fn gen_gnp(n: usize, p: f64, seed: u64) -> Result<SparseGraph> {
    check_probability(p)?;
    if n == 0 {
        return Err(Error::Domain("graph needs at least one node".into()));
    }
    let mut edges = Vec::new();
    if p == 0.0 {
        return Ok(SparseGraph::from_trusted(n, edges, None));
    }
    if p == 1.0 {
        for j in 1..n {
            for i in 0..j {
                edges.push((i, j));
            }
        }
        return Ok(SparseGraph::from_trusted(n, edges, None));
    }
    let mut rng = rng_for(seed);
    let log_q = (1.0 - p).ln();
    let (mut v, mut w) = (1usize, -1i64);
    while v < n {
        let r: f64 = rng.random();
        w += 1 + ((1.0 - r).ln() / log_q).floor() as i64;
        while w >= v as i64 && v < n {
            w -= v as i64;
            v += 1;
        }
        if v < n {
            edges.push((w as usize, v));
        }
    }
    Ok(SparseGraph::from_trusted(n, edges, None))
}

/// Maps a linear index to the pair it denotes in the order (0,1), (0,2), (1,2), (0,3), ...
fn pair_from_index(k: u64) -> (usize, usize) {
    let mut j = ((1.0 + (1.0 + 8.0 * k as f64).sqrt()) / 2.0).floor() as u64;
    while j * (j - 1) / 2 > k {
        j -= 1;
    }
    while (j + 1) * j / 2 <= k {
        j += 1;
    }
    let i = k - j * (j - 1) / 2;
    (i as usize, j as usize)
}

/// Erdős–Rényi `G(n, m)`: exactly `m` distinct edges, uniform over edge sets.
pub fn gen_gnm(n: usize, m: usize, seed: u64) -> Result<SparseGraph> {
    if n == 0 {
        return Err(Error::Domain("graph needs at least one node".into()));
    }
    let total = (n as u64) * (n as u64 - 1) / 2;
    if m as u64 > total {
        return Err(Error::Domain(format!(
            "{m} edges requested but only {total} pairs exist"
        )));
    }
    let mut rng = rng_for(seed);
    let mut edges: Vec<(usize, usize)> = rand::seq::index::sample(&mut rng, total as usize, m)
        .into_iter()
        .map(|k| pair_from_index(k as u64))
        .collect();
    edges.sort_unstable_by_key(|&(i, j)| (j, i));
    Ok(SparseGraph::from_trusted(n, edges, None))
}

/// Kovalenko's `G(n, p_ij)`: pair `(i, j)` is kept with its own probability.
pub fn gen_gnpij(n: usize, p: impl Fn(usize, usize) -> f64, seed: u64) -> Result<SparseGraph> {
    if n == 0 {
        return Err(Error::Domain("graph needs at least one node".into()));
    }
    let mut rng = rng_for(seed);
    let mut edges = Vec::new();
    for j in 1..n {
        for i in 0..j {
            let pij = p(i, j);
            check_probability(pij)?;
            // `random()` is in [0, 1), so p = 0 never fires and p = 1 always does
            if rng.random::<f64>() < pij {
                edges.push((i, j));
            }
        }
    }
    Ok(SparseGraph::from_trusted(n, edges, None))
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }
}

/// Connected components, each sorted, ordered by smallest member.
pub fn connected_components(g: &SparseGraph) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(g.n);
    for &(a, b) in &g.edges {
        uf.union(a, b);
    }
    let mut slot = vec![usize::MAX; g.n];
    let mut out: Vec<Vec<usize>> = Vec::new();
    for v in 0..g.n {
        let r = uf.find(v);
        if slot[r] == usize::MAX {
            slot[r] = out.len();
            out.push(Vec::new());
        }
        out[slot[r]].push(v);
    }
    out
}

pub fn largest_component_size(g: &SparseGraph) -> usize {
    let mut uf = UnionFind::new(g.n);
    for &(a, b) in &g.edges {
        uf.union(a, b);
    }
    (0..g.n)
        .map(|v| {
            let r = uf.find(v);
            uf.size[r]
        })
        .max()
        .unwrap_or(0)
}

pub fn is_connected(g: &SparseGraph) -> bool {
    largest_component_size(g) == g.n
}

/// Connectedness and cut-preservation probability bounds (natural log).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SparsificationBounds {
    pub n: usize,
    pub epsilon: f64,
    /// `ln(n) / n`: minimum pair probability for an almost surely connected graph.
    pub p_lower: f64,
    /// `ln(n) / (n eps^2)`: sampling probability that keeps cuts within `1 +- eps`.
    pub p_upper: f64,
    /// Expected neighbours per node at `p_lower`.
    pub degree_lower: f64,
    /// `n ln(n) / eps^2`.
    pub max_edges: f64,
}

impl SparsificationBounds {
    /// `key = value` lines as printed by the command line.
    pub fn render(&self) -> String {
        format!(
            "n = {}\nepsilon = {}\np_lower = {:.4e}\ndegree_lower = {:.2} ({} neighbours)\np_upper = {:.4e} ({:.4})\nmax_edges = {:.4e}\n",
            self.n,
            self.epsilon,
            self.p_lower,
            self.degree_lower,
            self.degree_lower.round(),
            self.p_upper,
            self.p_upper,
            self.max_edges
        )
    }
}

pub fn sparsification_bounds(n: usize, epsilon: f64) -> Result<SparsificationBounds> {
    if n < 2 {
        return Err(Error::Domain(format!("bounds need n >= 2, got {n}")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside (0,1]")));
    }
    let nf = n as f64;
    let ln_n = nf.ln();
    let eps2 = epsilon * epsilon;
    Ok(SparsificationBounds {
        n,
        epsilon,
        p_lower: ln_n / nf,
        p_upper: ln_n / (nf * eps2),
        degree_lower: ln_n,
        max_edges: nf * ln_n / eps2,
    })
}

/// Monte-Carlo summary of `G(n, p)` over consecutive seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeSummary {
    pub n: usize,
    pub p: f64,
    pub trials: usize,
    pub fraction_connected: f64,
    pub mean_largest_component: f64,
}

pub fn regime_summary(n: usize, p: f64, trials: usize, seed: u64) -> Result<RegimeSummary> {
    check_probability(p)?;
    let results: Vec<(bool, usize)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let g = gen_gnp(n, p, seed.wrapping_add(t))?;
            let largest = largest_component_size(&g);
            Ok((largest == n, largest))
        })
        .collect::<Result<_>>()?;
    let connected = results.iter().filter(|r| r.0).count();
    let mean_largest = results.iter().map(|r| r.1 as f64).sum::<f64>() / trials.max(1) as f64;
    Ok(RegimeSummary {
        n,
        p,
        trials,
        fraction_connected: connected as f64 / trials.max(1) as f64,
        mean_largest_component: mean_largest,
    })
}

/// Complete weighted graph with two planted clusters: nodes `0..n/2` and
/// `n/2..n`. Intra-cluster weights are drawn from `intra`, inter-cluster
/// weights from `inter`.
pub fn planted_two_cluster(n: usize, intra: (f64, f64), inter: (f64, f64), seed: u64) -> Result<SparseGraph> {
    if n < 2 {
        return Err(Error::Domain("planted graph needs n >= 2".into()));
    }
    let mut rng = rng_for(seed);
    let half = n / 2;
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    let mut weights = Vec::with_capacity(n * (n - 1) / 2);
    for j in 1..n {
        for i in 0..j {
            let (lo, hi) = if (i < half) == (j < half) { intra } else { inter };
            edges.push((i, j));
            weights.push(rng.random_range(lo..=hi));
        }
    }
    SparseGraph::new(n, edges, Some(weights))
}

/// Keeps each edge independently with probability `p`; with `reweight` the
/// surviving weights are scaled by `1/p` so every cut is unbiased.
pub fn sample_edges(g: &SparseGraph, p: f64, reweight: bool, seed: u64) -> Result<SparseGraph> {
    check_probability(p)?;
    let mut rng = rng_for(seed);
    let scale = if reweight && p > 0.0 { 1.0 / p } else { 1.0 };
    let mut edges = Vec::new();
    let mut weights = Vec::new();
    for (k, &e) in g.edges.iter().enumerate() {
        if rng.random::<f64>() < p {
            edges.push(e);
            weights.push(g.weight(k) * scale);
        }
    }
    Ok(SparseGraph::from_trusted(g.n, edges, Some(weights)))
}

/// Minimum s-t cut value of an undirected weighted graph.
pub fn st_min_cut(g: &SparseGraph, s: usize, t: usize) -> Result<f64> {
    if s >= g.n || t >= g.n || s == t {
        return Err(Error::Domain(format!("invalid terminals {s}, {t}")));
    }
    // Inner nodes are the graph nodes; s and t are tied to the terminals with
    // capacities larger than any cut.
    let total: f64 = (0..g.edge_count()).map(|k| g.weight(k)).sum();
    let big = total + 1.0;
    let mut net = FlowNetwork::new(g.n);
    net.add_terminal_caps(s, big, 0.0)?;
    net.add_terminal_caps(t, 0.0, big)?;
    for (k, &(a, b)) in g.edges.iter().enumerate() {
        let w = g.weight(k);
        net.add_edge(a, b, w, w)?;
    }
    Ok(net.max_flow().flow)
}
