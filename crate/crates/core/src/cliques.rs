//! Stochastic long-range cliques.
//!
//! Nodes are grouped into `q` clusters over their joint (statistics,
//! position) features. The connectivity between a node and every member of a
//! cluster is approximated by the connectivity between the node and the
//! cluster centroid, so a full pass costs `n * q` divergence evaluations
//! instead of `n^2`. A pair `(i, j)` becomes an active clique when its
//! connectivity `F` beats `gamma * U(0, 1)`, i.e. with probability
//! `min(F / gamma, 1)`; `gamma` is calibrated so the expected number of
//! long-range cliques per node hits a target degree.

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Binomial;
use rayon::prelude::*;
use serde::Serialize;

use crate::divergence::{sq_dist, Divergence, DivergenceKind};
use crate::error::{Error, Result};
use crate::field::{are_lattice_neighbors, ImageGrid, StatsField, StatsKind, StatsRef};
use crate::graph::{sparsification_bounds, SparsificationBounds};

pub const MAX_CLUSTER_ITERATIONS: usize = 50;

/// Node positions `(row, col)` scaled to `[0, 1]`.
pub fn positions(img: &ImageGrid) -> Vec<[f64; 2]> {
    (0..img.len()).map(|i| img.position(i)).collect()
}

/// Partition of the nodes into groups of similar statistics and nearby positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub q: usize,
    pub kind: StatsKind,
    pub channels: usize,
    pub dim: usize,
    pub assignment: Vec<u32>,
    /// `q * dim` centroid statistics, flat.
    pub centroid_stats: Vec<f64>,
    pub centroid_pos: Vec<[f64; 2]>,
    /// Members of each cluster in ascending node order.
    pub members: Vec<Vec<u32>>,
    /// Clustering objective after every accepted iteration; the last entry is final.
    pub objective_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn node_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&0.0)
    }

    pub fn iterations(&self) -> usize {
        self.objective_trace.len()
    }

    #[inline]
    pub fn centroid_slice(&self, c: usize) -> &[f64] {
        &self.centroid_stats[c * self.dim..(c + 1) * self.dim]
    }

    pub fn centroid(&self, c: usize) -> StatsRef<'_> {
        StatsRef {
            kind: self.kind,
            channels: self.channels,
            values: self.centroid_slice(c),
        }
    }

    pub fn cluster_of(&self, node: usize) -> usize {
        self.assignment[node] as usize
    }

    pub fn non_empty_clusters(&self) -> usize {
        self.members.iter().filter(|m| !m.is_empty()).count()
    }
}

#[inline]
fn pos_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Joint-feature distance: `||S - mu_S|| + ||p - mu_p||`.
#[inline]
fn feature_dist(s: &[f64], p: [f64; 2], cs: &[f64], cp: [f64; 2]) -> f64 {
    sq_dist(s, cs).sqrt() + pos_dist(p, cp)
}

/// Sum over nodes of the joint-feature distance to their cluster centroid.
pub fn cluster_objective(stats: &StatsField, positions: &[[f64; 2]], model: &ClusterModel) -> f64 {
    (0..stats.len())
        .map(|i| {
            let c = model.cluster_of(i);
            feature_dist(
                stats.slice(i),
                positions[i],
                model.centroid_slice(c),
                model.centroid_pos[c],
            )
        })
        .sum()
}

struct Centroids {
    stats: Vec<f64>,
    pos: Vec<[f64; 2]>,
}

fn members_of(assignment: &[u32], q: usize) -> Vec<Vec<u32>> {
    let mut members = vec![Vec::new(); q];
    for (i, &c) in assignment.iter().enumerate() {
        members[c as usize].push(i as u32);
    }
    members
}

/// Means of each cluster; empty clusters keep their previous centroid.
fn update_centroids(stats: &StatsField, positions: &[[f64; 2]], members: &[Vec<u32>], prev: &Centroids) -> Centroids {
    let dim = stats.dim;
    let per_cluster: Vec<(Vec<f64>, [f64; 2])> = members
        .par_iter()
        .enumerate()
        .map(|(c, m)| {
            if m.is_empty() {
                return (prev.stats[c * dim..(c + 1) * dim].to_vec(), prev.pos[c]);
            }
            let mut s = vec![0.0; dim];
            let mut p = [0.0; 2];
            for &i in m {
                let i = i as usize;
                for (acc, v) in s.iter_mut().zip(stats.slice(i)) {
                    *acc += v;
                }
                p[0] += positions[i][0];
                p[1] += positions[i][1];
            }
            let k = m.len() as f64;
            s.iter_mut().for_each(|v| *v /= k);
            (s, [p[0] / k, p[1] / k])
        })
        .collect();
    let mut out = Centroids {
        stats: Vec::with_capacity(members.len() * dim),
        pos: Vec::with_capacity(members.len()),
    };
    for (s, p) in per_cluster {
        out.stats.extend(s);
        out.pos.push(p);
    }
    out
}

/// Nearest-centre distances after adding centre `c`; the position term alone
/// bounds the joint distance from below, which skips most updates.
fn tightened(stats: &StatsField, positions: &[[f64; 2]], nearest: &[f64], c: usize) -> Vec<f64> {
    let (cs, cp) = (stats.slice(c), positions[c]);
    nearest
        .par_iter()
        .enumerate()
        .map(|(i, &d)| {
            if d == 0.0 || pos_dist(positions[i], cp) >= d {
                d
            } else {
                d.min(feature_dist(stats.slice(i), positions[i], cs, cp))
            }
        })
        .collect()
}

/// Greedy k-means++ seeding: each step draws a few candidates with
/// probability proportional to the (unsquared) joint-feature distance,
/// matching the objective's norm, and keeps the one that lowers the total
/// distance most.
fn seed_centers(stats: &StatsField, positions: &[[f64; 2]], q: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = stats.len();
    let trials = 2 + (q as f64).ln().floor() as usize;
    let mut chosen = Vec::with_capacity(q);
    let first = rng.random_range(0..n);
    chosen.push(first);
    let mut nearest = tightened(stats, positions, &vec![f64::INFINITY; n], first);
    nearest[first] = 0.0;
    let mut cumulative = vec![0.0; n];
    while chosen.len() < q {
        let mut acc = 0.0;
        for (c, &d) in cumulative.iter_mut().zip(&nearest) {
            acc += d;
            *c = acc;
        }
        if !(acc > 0.0) {
            // every remaining node coincides with a centre
            let pick = (0..n).find(|i| !chosen.contains(i)).expect("q <= n");
            chosen.push(pick);
            continue;
        }
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let target = rng.random::<f64>() * acc;
            let mut cand = cumulative.partition_point(|&c| c <= target).min(n - 1);
            while nearest[cand] == 0.0 && cand > 0 {
                cand -= 1;
            }
            if nearest[cand] == 0.0 {
                cand = nearest.iter().position(|&d| d > 0.0).expect("positive total");
            }
            let next = tightened(stats, positions, &nearest, cand);
            let total: f64 = next.iter().sum::<f64>() - next[cand];
            if best.as_ref().is_none_or(|b| total < b.0) {
                best = Some((total, cand, next));
            }
        }
        let (_, pick, mut next) = best.expect("at least one trial");
        next[pick] = 0.0;
        nearest = next;
        chosen.push(pick);
    }
    chosen
}

/// Lloyd-style clustering of the joint (statistics, position) features.
///
/// Each step reassigns nodes to their nearest centroid and recomputes the
/// centroids as member means. A step is kept only if the objective does not
/// increase, so the returned centroids are always the means of the returned
/// assignment and [`ClusterModel::objective_trace`] is non-increasing.
pub fn cluster_nodes(stats: &StatsField, positions: &[[f64; 2]], q: usize, seed: u64) -> Result<ClusterModel> {
    cluster_nodes_with(stats, positions, q, seed, MAX_CLUSTER_ITERATIONS)
}

pub fn cluster_nodes_with(
    stats: &StatsField,
    positions: &[[f64; 2]],
    q: usize,
    seed: u64,
    max_iterations: usize,
) -> Result<ClusterModel> {
    let n = stats.len();
    if positions.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} positions for {n} nodes",
            positions.len()
        )));
    }
    if q == 0 || q > n {
        return Err(Error::Domain(format!("cluster count {q} outside 1..={n}")));
    }
    let dim = stats.dim;
    // small problems get several seedings and keep the best
    let work = n * q * (dim + 2);
    let restarts = (RESTART_BUDGET / work.max(1)).clamp(1, MAX_RESTARTS);
    let mut best: Option<ClusterModel> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let m = lloyd(stats, positions, q, &mut rng, max_iterations);
        if best.as_ref().is_none_or(|b| m.objective() < b.objective()) {
            best = Some(m);
        }
    }
    Ok(best.expect("at least one restart"))
}

const RESTART_BUDGET: usize = 4_000_000;
const MAX_RESTARTS: usize = 10;

fn lloyd(
    stats: &StatsField,
    positions: &[[f64; 2]],
    q: usize,
    rng: &mut ChaCha8Rng,
    max_iterations: usize,
) -> ClusterModel {
    let n = stats.len();
    let dim = stats.dim;
    let centers = seed_centers(stats, positions, q, rng);
    let mut cent = Centroids {
        stats: centers.iter().flat_map(|&i| stats.slice(i).to_vec()).collect(),
        pos: centers.iter().map(|&i| positions[i]).collect(),
    };

    // Hamerly bounds: `upper` bounds the distance to the assigned centroid,
    // `lower` bounds the distance to every other centroid.
    let mut assignment = vec![0u32; n];
    let mut upper = vec![f64::INFINITY; n];
    let mut lower = vec![0.0f64; n];
    let half_gap = vec![0.0; q];
    assign(
        stats,
        positions,
        &cent,
        &half_gap,
        &mut assignment,
        &mut upper,
        &mut lower,
        true,
    );

    let mut members = members_of(&assignment, q);
    cent = update_centroids(stats, positions, &members, &cent);
    let mut objective = exact_upper(stats, positions, &cent, &assignment, &mut upper);
    let mut trace = vec![objective];

    for _ in 1..max_iterations {
        let half_gap = half_centroid_gaps(&cent, dim);
        let prev_assignment = assignment.clone();
        assign(
            stats,
            positions,
            &cent,
            &half_gap,
            &mut assignment,
            &mut upper,
            &mut lower,
            false,
        );
        if assignment == prev_assignment {
            break;
        }
        let new_members = members_of(&assignment, q);
        let new_cent = update_centroids(stats, positions, &new_members, &cent);
        let drift: Vec<f64> = (0..q)
            .map(|c| {
                feature_dist(
                    &cent.stats[c * dim..(c + 1) * dim],
                    cent.pos[c],
                    &new_cent.stats[c * dim..(c + 1) * dim],
                    new_cent.pos[c],
                )
            })
            .collect();
        let mut new_upper = upper.clone();
        let new_objective = exact_upper(stats, positions, &new_cent, &assignment, &mut new_upper);
        if new_objective > objective {
            assignment = prev_assignment;
            break;
        }
        let (top, second, top_c) = top_two(&drift);
        lower.par_iter_mut().zip(&assignment).for_each(|(l, &a)| {
            let shift = if a as usize == top_c { second } else { top };
            *l = (*l - shift).max(0.0);
        });
        upper = new_upper;
        cent = new_cent;
        members = new_members;
        objective = new_objective;
        trace.push(objective);
    }

    ClusterModel {
        q,
        kind: stats.kind,
        channels: stats.channels,
        dim,
        assignment,
        centroid_stats: cent.stats,
        centroid_pos: cent.pos,
        members,
        objective_trace: trace,
    }
}

fn top_two(v: &[f64]) -> (f64, f64, usize) {
    let (mut top, mut second, mut top_c) = (0.0, 0.0, usize::MAX);
    for (c, &d) in v.iter().enumerate() {
        if d > top {
            second = top;
            top = d;
            top_c = c;
        } else if d > second {
            second = d;
        }
    }
    (top, second, top_c)
}

/// Half the distance from each centroid to its nearest other centroid.
fn half_centroid_gaps(cent: &Centroids, dim: usize) -> Vec<f64> {
    let q = cent.pos.len();
    (0..q)
        .into_par_iter()
        .map(|c| {
            let cs = &cent.stats[c * dim..(c + 1) * dim];
            let mut best = f64::INFINITY;
            for o in 0..q {
                if o == c {
                    continue;
                }
                let dp = pos_dist(cent.pos[c], cent.pos[o]);
                if dp >= best {
                    continue;
                }
                best = best.min(dp + sq_dist(cs, &cent.stats[o * dim..(o + 1) * dim]).sqrt());
            }
            if best.is_finite() {
                0.5 * best
            } else {
                0.0
            }
        })
        .collect()
}

/// Sets `upper` to the exact distance to the assigned centroid and returns the objective.
fn exact_upper(
    stats: &StatsField,
    positions: &[[f64; 2]],
    cent: &Centroids,
    assignment: &[u32],
    upper: &mut [f64],
) -> f64 {
    let dim = stats.dim;
    upper.par_iter_mut().enumerate().for_each(|(i, u)| {
        let c = assignment[i] as usize;
        *u = feature_dist(
            stats.slice(i),
            positions[i],
            &cent.stats[c * dim..(c + 1) * dim],
            cent.pos[c],
        );
    });
    upper.iter().sum()
}

#[allow(clippy::too_many_arguments)]
fn assign(
    stats: &StatsField,
    positions: &[[f64; 2]],
    cent: &Centroids,
    half_gap: &[f64],
    assignment: &mut [u32],
    upper: &mut [f64],
    lower: &mut [f64],
    full: bool,
) {
    let dim = stats.dim;
    let q = cent.pos.len();
    assignment
        .par_iter_mut()
        .zip(upper.par_iter_mut())
        .zip(lower.par_iter_mut())
        .enumerate()
        .for_each(|(i, ((a, u), l))| {
            let s = stats.slice(i);
            let p = positions[i];
            if !full {
                let bound = half_gap[*a as usize].max(*l);
                if *u <= bound {
                    return;
                }
                let c = *a as usize;
                *u = feature_dist(s, p, &cent.stats[c * dim..(c + 1) * dim], cent.pos[c]);
                if *u <= bound {
                    return;
                }
            }
            // full scan; the position term alone prunes clusters that cannot
            // beat the current second best
            let (mut best, mut best_c, mut second) = (f64::INFINITY, 0usize, f64::INFINITY);
            for c in 0..q {
                let dp = pos_dist(p, cent.pos[c]);
                if dp >= second {
                    continue;
                }
                let d = dp + sq_dist(s, &cent.stats[c * dim..(c + 1) * dim]).sqrt();
                if d < best {
                    second = best;
                    best = d;
                    best_c = c;
                } else if d < second {
                    second = d;
                }
            }
            *a = best_c as u32;
            *u = best;
            *l = second;
        });
}

/// A pair of nodes connected by a sampled long-range clique; `f` is the
/// (abstracted) connectivity that drove the draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LongRangeClique {
    pub i: usize,
    pub j: usize,
    pub f: f64,
}

/// The sampled active clique set, excluding the always-present 4-neighbourhood.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliqueSet {
    pub long_range: Vec<LongRangeClique>,
    pub gamma: f64,
    pub seed: u64,
    pub expected_degree_target: f64,
}

impl CliqueSet {
    pub fn empty(gamma: f64, seed: u64) -> Self {
        Self {
            long_range: Vec::new(),
            gamma,
            seed,
            expected_degree_target: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.long_range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.long_range.is_empty()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.long_range.iter().map(|c| (c.i, c.j)).collect()
    }

    /// `i,j,F` rows with a header line.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "i,j,f")?;
        for c in &self.long_range {
            writeln!(w, "{},{},{}", c.i, c.j, c.f)?;
        }
        Ok(())
    }
}

const PROFILE_LN_LO: f64 = -69.07755278982137; // ln(1e-30)
const PROFILE_LN_HI: f64 = 69.07755278982137;
const PROFILE_BINS: usize = 1 << 16;
const FRAC_SCALE: f64 = 4294967296.0; // 2^32

/// Distribution of connectivity values weighted by how many pairs they
/// govern, from which the expected degree at any `gamma` follows.
///
/// Values are accumulated into log-spaced bins with integer sums, so the
/// profile is identical however the pass is split across threads. The
/// expected degree is exact at bin edges; inside a bin the relative error is
/// bounded by the bin ratio (about 0.2%).
#[derive(Debug, Clone)]
pub struct GammaProfile {
    n: usize,
    weight: Vec<u64>,
    frac: Vec<u128>,
    tiny_weight: u64,
    huge_weight: u64,
    min_positive: f64,
    max_value: f64,
}

impl GammaProfile {
    fn empty(n: usize) -> Self {
        Self {
            n,
            weight: vec![0; PROFILE_BINS],
            frac: vec![0; PROFILE_BINS],
            tiny_weight: 0,
            huge_weight: 0,
            min_positive: f64::INFINITY,
            max_value: 0.0,
        }
    }

    #[inline]
    fn step() -> f64 {
        (PROFILE_LN_HI - PROFILE_LN_LO) / PROFILE_BINS as f64
    }

    #[inline]
    fn edge(k: usize) -> f64 {
        (PROFILE_LN_LO + k as f64 * Self::step()).exp()
    }

    /// Records `w` pairs whose connectivity is `f`.
    pub fn add(&mut self, f: f64, w: u64) {
        if w == 0 {
            return;
        }
        if f > 0.0 {
            self.min_positive = self.min_positive.min(f);
        }
        self.max_value = self.max_value.max(f);
        match Self::slot(f) {
            Slot::Zero => {}
            Slot::Tiny => self.tiny_weight += w,
            Slot::Huge => self.huge_weight += w,
            Slot::Bin(k, frac) => {
                self.weight[k] += w;
                self.frac[k] += w as u128 * frac;
            }
        }
    }

    /// Takes back pairs recorded with [`GammaProfile::add`] under the same `f`.
    fn remove(&mut self, f: f64, w: u64) {
        match Self::slot(f) {
            Slot::Zero => {}
            Slot::Tiny => self.tiny_weight -= w,
            Slot::Huge => self.huge_weight -= w,
            Slot::Bin(k, frac) => {
                self.weight[k] -= w;
                self.frac[k] -= w as u128 * frac;
            }
        }
    }

    fn slot(f: f64) -> Slot {
        if !(f > 0.0) {
            return Slot::Zero;
        }
        let lf = f.ln();
        if !(lf >= PROFILE_LN_LO) {
            return Slot::Tiny;
        }
        if lf >= PROFILE_LN_HI {
            return Slot::Huge;
        }
        let k = (((lf - PROFILE_LN_LO) / Self::step()) as usize).min(PROFILE_BINS - 1);
        let (lo, hi) = (Self::edge(k), Self::edge(k + 1));
        let frac = ((f - lo) / (hi - lo)).clamp(0.0, 1.0);
        Slot::Bin(k, (frac * FRAC_SCALE).round() as u128)
    }

    fn merge(mut self, other: Self) -> Self {
        for k in 0..PROFILE_BINS {
            self.weight[k] += other.weight[k];
            self.frac[k] += other.frac[k];
        }
        self.tiny_weight += other.tiny_weight;
        self.huge_weight += other.huge_weight;
        self.min_positive = self.min_positive.min(other.min_positive);
        self.max_value = self.max_value.max(other.max_value);
        self
    }

    /// Sum of `w * f` in bin `k`.
    fn weighted_value(&self, k: usize) -> f64 {
        let (lo, hi) = (Self::edge(k), Self::edge(k + 1));
        lo * self.weight[k] as f64 + (hi - lo) * self.frac[k] as f64 / FRAC_SCALE
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn min_positive(&self) -> Option<f64> {
        self.min_positive.is_finite().then_some(self.min_positive)
    }

    /// Expected number of sampled cliques per node at sparsity factor `gamma`.
    pub fn expected_degree(&self, gamma: f64) -> f64 {
        let lg = gamma.ln();
        let k = if lg < PROFILE_LN_LO {
            0
        } else {
            (((lg - PROFILE_LN_LO) / Self::step()) as usize).min(PROFILE_BINS - 1)
        };
        let mut pairs = self.huge_weight as f64;
        let mut below = 0.0;
        for b in 0..k {
            below += self.weighted_value(b);
        }
        for b in (k + 1)..PROFILE_BINS {
            pairs += self.weight[b] as f64;
        }
        if self.weight[k] > 0 {
            let mean = self.weighted_value(k) / self.weight[k] as f64;
            pairs += self.weight[k] as f64 * (mean / gamma).min(1.0);
        }
        pairs += below / gamma;
        2.0 * pairs / self.n as f64
    }

    /// Largest expected degree, reached once every positive connectivity saturates.
    pub fn saturated_degree(&self) -> f64 {
        let pairs = self.tiny_weight + self.huge_weight + self.weight.iter().sum::<u64>();
        2.0 * pairs as f64 / self.n as f64
    }

    /// Bisection on `ln gamma` for the target expected degree.
    pub fn solve(&self, target_degree: f64) -> Result<f64> {
        if !(target_degree > 0.0) || target_degree > (self.n.saturating_sub(1)) as f64 {
            return Err(Error::Domain(format!(
                "target degree {target_degree} outside (0, {}]",
                self.n.saturating_sub(1)
            )));
        }
        let max_degree = self.saturated_degree();
        if max_degree <= 0.0 {
            return Err(Error::Calibration("every connectivity is zero".into()));
        }
        if target_degree >= max_degree * (1.0 - 1e-12) {
            if target_degree > 1.01 * max_degree {
                return Err(Error::Calibration(format!(
                    "target degree {target_degree} unreachable, at most {max_degree:.3}"
                )));
            }
            return Ok(self.min_positive);
        }
        let (mut lo, mut hi) = (self.min_positive.ln(), PROFILE_LN_HI.max(self.max_value.ln()) + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.expected_degree(mid.exp()) > target_degree {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((0.5 * (lo + hi)).exp())
    }
}

enum Slot {
    Zero,
    Tiny,
    Huge,
    Bin(usize, u128),
}

const OWNER_CHUNK: usize = 256;

/// Per-centroid forms that make a (node, cluster) divergence a single pass
/// over the bins.
enum Prepared {
    Raw,
    Log(Vec<f64>),
    Sqrt(Vec<f64>),
}

/// Evaluates abstracted connectivities and draws clique sets for one
/// clustering of one image.
pub struct CliqueSampler<'a> {
    stats: &'a StatsField,
    model: &'a ClusterModel,
    div: Divergence,
    lattice_width: Option<usize>,
    prepared: Prepared,
}

impl<'a> CliqueSampler<'a> {
    pub fn new(stats: &'a StatsField, model: &'a ClusterModel, div: Divergence) -> Result<Self> {
        if model.node_count() != stats.len() || model.dim != stats.dim || model.kind != stats.kind {
            return Err(Error::IncompatibleStats(
                "cluster model was built from different statistics".into(),
            ));
        }
        let prepared = match div.kind {
            DivergenceKind::BregmanSqNorm => Prepared::Raw,
            DivergenceKind::Kl | DivergenceKind::Hellinger => {
                if stats.kind != StatsKind::Histogram {
                    return Err(Error::IncompatibleStats(format!(
                        "{} needs histogram statistics",
                        div.kind
                    )));
                }
                if div.kind == DivergenceKind::Kl {
                    if stats.values.iter().any(|&v| v <= 0.0) {
                        return Err(Error::Domain("non-positive histogram bin".into()));
                    }
                    Prepared::Log(model.centroid_stats.iter().map(|v| v.ln()).collect())
                } else {
                    Prepared::Sqrt(model.centroid_stats.iter().map(|v| v.sqrt()).collect())
                }
            }
        };
        Ok(Self {
            stats,
            model,
            div,
            lattice_width: None,
            prepared,
        })
    }

    /// Drops sampled pairs that are already 4-neighbours on a lattice of this width.
    pub fn with_lattice(mut self, width: usize) -> Self {
        self.lattice_width = Some(width);
        self
    }

    pub fn divergence(&self) -> Divergence {
        self.div
    }

    /// Abstracted connectivity of node `l` to every cluster.
    pub fn fhat_row(&self, l: usize, out: &mut [f64]) {
        let dim = self.model.dim;
        let s = self.stats.slice(l);
        match &self.prepared {
            Prepared::Raw => {
                for (c, o) in out.iter_mut().enumerate() {
                    *o = self.div.transform(sq_dist(s, self.model.centroid_slice(c)));
                }
            }
            Prepared::Log(log_c) => {
                let log_s: Vec<f64> = s.iter().map(|v| v.ln()).collect();
                for (c, o) in out.iter_mut().enumerate() {
                    let lc = &log_c[c * dim..(c + 1) * dim];
                    let d: f64 = s.iter().zip(&log_s).zip(lc).map(|((a, la), lb)| a * (la - lb)).sum();
                    *o = self.div.transform(d.max(0.0));
                }
            }
            Prepared::Sqrt(sqrt_c) => {
                let sqrt_s: Vec<f64> = s.iter().map(|v| v.sqrt()).collect();
                for (c, o) in out.iter_mut().enumerate() {
                    let sc = &sqrt_c[c * dim..(c + 1) * dim];
                    let d: f64 = sqrt_s.iter().zip(sc).map(|(a, b)| (b - a) * (b - a)).sum();
                    *o = self.div.transform(d * std::f64::consts::FRAC_1_SQRT_2);
                }
            }
        }
    }

    pub fn fhat(&self, l: usize, c: usize) -> f64 {
        let mut row = vec![0.0; self.model.q];
        self.fhat_row(l, &mut row);
        row[c]
    }

    /// Cluster counts of nodes after each owner chunk, so chunks can be
    /// processed independently while knowing how many members of each
    /// cluster have a larger index.
    fn suffix_counts(&self) -> Vec<Vec<u32>> {
        let n = self.model.node_count();
        let chunks = n.div_ceil(OWNER_CHUNK);
        let mut counts = vec![0u32; self.model.q];
        let mut snaps = vec![Vec::new(); chunks];
        for k in (0..chunks).rev() {
            snaps[k] = counts.clone();
            for node in k * OWNER_CHUNK..((k + 1) * OWNER_CHUNK).min(n) {
                counts[self.model.assignment[node] as usize] += 1;
            }
        }
        snaps
    }

    /// Visits each owner `l` (descending within a chunk) with its connectivity
    /// row and the per-cluster count of members above `l`.
    fn for_owners<T: Send>(
        &self,
        init: impl Fn() -> T + Sync + Send,
        visit: impl Fn(&mut T, usize, &[f64], &[u32]) + Sync + Send,
    ) -> Vec<T> {
        let n = self.model.node_count();
        let q = self.model.q;
        let snaps = self.suffix_counts();
        snaps
            .into_par_iter()
            .enumerate()
            .map(|(k, mut above)| {
                let mut acc = init();
                let mut row = vec![0.0; q];
                for l in (k * OWNER_CHUNK..((k + 1) * OWNER_CHUNK).min(n)).rev() {
                    self.fhat_row(l, &mut row);
                    visit(&mut acc, l, &row, &above);
                    above[self.model.assignment[l] as usize] += 1;
                }
                acc
            })
            .collect()
    }

    pub fn gamma_profile(&self) -> GammaProfile {
        let n = self.model.node_count();
        self.for_owners(
            || GammaProfile::empty(n),
            |p, l, row, above| {
                for (&f, &w) in row.iter().zip(above) {
                    p.add(f, w as u64);
                }
                for j in self.lattice_above(l) {
                    p.remove(row[self.model.cluster_of(j)], 1);
                }
            },
        )
        .into_iter()
        .fold(GammaProfile::empty(n), GammaProfile::merge)
    }

    /// `gamma` whose expected long-range degree is `target_degree`.
    pub fn calibrate_gamma(&self, target_degree: f64) -> Result<f64> {
        self.gamma_profile().solve(target_degree)
    }

    /// Exact expected degree at `gamma` from a full pass (no binning).
    pub fn expected_degree_exact(&self, gamma: f64) -> f64 {
        let n = self.model.node_count();
        let partial = self.for_owners(
            || 0.0f64,
            |acc, l, row, above| {
                for (&f, &w) in row.iter().zip(above) {
                    *acc += w as f64 * (f / gamma).min(1.0);
                }
                for j in self.lattice_above(l) {
                    *acc -= (row[self.model.cluster_of(j)] / gamma).min(1.0);
                }
            },
        );
        2.0 * partial.iter().sum::<f64>() / n as f64
    }

    /// Lattice neighbours of `l` with a larger index, when sampling drops them.
    fn lattice_above(&self, l: usize) -> impl Iterator<Item = usize> {
        let n = self.model.node_count();
        let (right, down) = match self.lattice_width {
            Some(w) => (
                (l % w + 1 < w && l + 1 < n).then_some(l + 1),
                (l + w < n).then_some(l + w),
            ),
            None => (None, None),
        };
        right.into_iter().chain(down)
    }

    fn owner_rng(seed: u64, owner: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(owner as u64);
        rng
    }

    fn keep(&self, i: usize, j: usize) -> bool {
        self.lattice_width.is_none_or(|w| !are_lattice_neighbors(i, j, w))
    }

    /// Draws the active long-range cliques.
    ///
    /// For each owner `l` and cluster `c`, the number of active pairs with
    /// members of `c` above `l` is Binomial(count, min(F/gamma, 1)), and that
    /// many members are picked uniformly without replacement. This has the
    /// same distribution as independent per-pair draws sharing the cluster's
    /// connectivity. Each owner has its own random stream, so the result does
    /// not depend on the thread count.
    pub fn sample(&self, gamma: f64, seed: u64) -> Result<CliqueSet> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("gamma must be > 0, got {gamma}")));
        }
        let members = &self.model.members;
        let chunks = self.for_owners(Vec::new, |out: &mut Vec<LongRangeClique>, l, row, above| {
            let mut rng = Self::owner_rng(seed, l);
            for (c, (&f, &count)) in row.iter().zip(above).enumerate() {
                let p = (f / gamma).min(1.0);
                if count == 0 || !(p > 0.0) {
                    continue;
                }
                let count = count as usize;
                let candidates = &members[c][members[c].len() - count..];
                let k = if p >= 1.0 {
                    count
                } else {
                    Binomial::new(count as u64, p).expect("valid binomial").sample(&mut rng) as usize
                };
                if k == 0 {
                    continue;
                }
                if k == count {
                    for &j in candidates {
                        let j = j as usize;
                        if self.keep(l, j) {
                            out.push(LongRangeClique { i: l, j, f });
                        }
                    }
                } else {
                    for idx in rand::seq::index::sample(&mut rng, count, k) {
                        let j = candidates[idx] as usize;
                        if self.keep(l, j) {
                            out.push(LongRangeClique { i: l, j, f });
                        }
                    }
                }
            }
        });
        let mut long_range: Vec<LongRangeClique> = chunks.into_iter().flatten().collect();
        long_range.par_sort_unstable_by_key(|c| (c.i, c.j));
        Ok(CliqueSet {
            long_range,
            gamma,
            seed,
            expected_degree_target: 0.0,
        })
    }

    /// Reference sampler: one Bernoulli draw per pair. Quadratic; for tests.
    pub fn sample_per_pair(&self, gamma: f64, seed: u64) -> Result<CliqueSet> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("gamma must be > 0, got {gamma}")));
        }
        let n = self.model.node_count();
        let mut long_range = Vec::new();
        let mut row = vec![0.0; self.model.q];
        for l in 0..n {
            self.fhat_row(l, &mut row);
            let mut rng = Self::owner_rng(seed, l);
            for j in (l + 1)..n {
                let f = row[self.model.cluster_of(j)];
                // U(0,1) is almost surely positive, so F = 0 never connects
                let u: f64 = rng.random();
                if f >= gamma * u && f > 0.0 && self.keep(l, j) {
                    long_range.push(LongRangeClique { i: l, j, f });
                }
            }
        }
        Ok(CliqueSet {
            long_range,
            gamma,
            seed,
            expected_degree_target: 0.0,
        })
    }
}

/// Connectivity between node `l` and the centroid of cluster `c`.
pub fn cluster_connectivity(
    stats: &StatsField,
    model: &ClusterModel,
    l: usize,
    c: usize,
    div: &Divergence,
) -> Result<f64> {
    div.connectivity(stats.get(l), model.centroid(c))
}

/// Mean of the exact pairwise connectivity between `l` and each member of `c`.
pub fn cluster_connectivity_exact(
    stats: &StatsField,
    model: &ClusterModel,
    l: usize,
    c: usize,
    div: &Divergence,
) -> Result<f64> {
    let members = &model.members[c];
    if members.is_empty() {
        return Err(Error::Domain(format!("cluster {c} is empty")));
    }
    let mut sum = 0.0;
    for &j in members {
        sum += div.connectivity(stats.get(l), stats.get(j as usize))?;
    }
    Ok(sum / members.len() as f64)
}

/// Degree statistics of a clique set and where its implied pair probability
/// falls relative to the connectedness and cut-preservation bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegreeReport {
    pub nodes: usize,
    pub edges: usize,
    pub mean_degree: f64,
    pub min_degree: usize,
    pub max_degree: usize,
    pub implied_p: f64,
    pub bounds: SparsificationBounds,
    /// Implied probability is under `ln(n)/n`.
    pub below_connectedness: bool,
    /// Implied probability is over `ln(n)/(n eps^2)`.
    pub above_cut_bound: bool,
}

/// Bound flags for a mean degree on `n` nodes.
pub fn bound_flags(mean_degree: f64, n: usize, epsilon: f64) -> Result<(f64, SparsificationBounds, bool, bool)> {
    let bounds = sparsification_bounds(n, epsilon)?;
    let implied_p = mean_degree / (n - 1) as f64;
    Ok((
        implied_p,
        bounds,
        implied_p < bounds.p_lower,
        implied_p > bounds.p_upper,
    ))
}

pub fn degree_report(cs: &CliqueSet, n: usize, epsilon: f64) -> Result<DegreeReport> {
    let mut deg = vec![0usize; n];
    for c in &cs.long_range {
        if c.i >= n || c.j >= n {
            return Err(Error::Domain(format!("clique ({}, {}) outside 0..{n}", c.i, c.j)));
        }
        deg[c.i] += 1;
        deg[c.j] += 1;
    }
    let mean = 2.0 * cs.len() as f64 / n as f64;
    let (implied_p, bounds, below, above) = bound_flags(mean, n, epsilon)?;
    Ok(DegreeReport {
        nodes: n,
        edges: cs.len(),
        mean_degree: mean,
        min_degree: deg.iter().copied().min().unwrap_or(0),
        max_degree: deg.iter().copied().max().unwrap_or(0),
        implied_p,
        bounds,
        below_connectedness: below,
        above_cut_bound: above,
    })
}
