//! Exact s-t min-cut inference.
//!
//! [`FlowNetwork`] runs the Boykov–Kolmogorov augmenting-path algorithm: two
//! search trees grow from the terminals and are repaired after each
//! augmentation instead of being rebuilt. Capacities are `f64`; every
//! augmentation subtracts the bottleneck from the arc that produced it, so
//! that arc reaches exactly zero and the loop terminates.

use std::collections::VecDeque;

use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::field::SegmentationMask;

const NONE: u32 = u32::MAX;
const TERMINAL: u32 = u32::MAX - 1;
const ORPHAN: u32 = u32::MAX - 2;
const INF_DIST: u32 = u32::MAX;

/// Directed capacitated network over `n` inner nodes plus source and sink.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    // per node
    first: Vec<u32>,
    parent: Vec<u32>,
    is_sink: Vec<bool>,
    active: Vec<bool>,
    ts: Vec<u64>,
    dist: Vec<u32>,
    tr_cap: Vec<f64>,
    source_cap: Vec<f64>,
    sink_cap: Vec<f64>,
    // per arc; arcs come in pairs, the sister of `a` is `a ^ 1`
    head: Vec<u32>,
    next: Vec<u32>,
    r_cap: Vec<f64>,
    cap: Vec<f64>,

    offset: f64,
    flow: f64,
    solved: Option<MaxFlowResult>,

    queue: VecDeque<u32>,
    orphans: VecDeque<u32>,
    time: u64,
}

/// Outcome of [`FlowNetwork::max_flow`].
#[derive(Debug, Clone, PartialEq)]
pub struct MaxFlowResult {
    pub flow: f64,
    /// Capacity of the returned cut, recomputed from the original capacities.
    pub cut: f64,
    /// `true` for nodes on the source side of the cut.
    pub source_side: Vec<bool>,
}

impl FlowNetwork {
    pub fn new(n: usize) -> Self {
        Self {
            first: vec![NONE; n],
            parent: vec![NONE; n],
            is_sink: vec![false; n],
            active: vec![false; n],
            ts: vec![0; n],
            dist: vec![0; n],
            tr_cap: vec![0.0; n],
            source_cap: vec![0.0; n],
            sink_cap: vec![0.0; n],
            head: Vec::new(),
            next: Vec::new(),
            r_cap: Vec::new(),
            cap: Vec::new(),
            offset: 0.0,
            flow: 0.0,
            solved: None,
            queue: VecDeque::new(),
            orphans: VecDeque::new(),
            time: 0,
        }
    }

    pub fn node_count(&self) -> usize {
        self.first.len()
    }

    pub fn arc_count(&self) -> usize {
        self.head.len()
    }

    /// Constant added to every cut value to recover the energy.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn add_offset(&mut self, c: f64) {
        self.offset += c;
    }

    fn check_cap(c: f64) -> Result<()> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Network(format!("capacity {c} must be finite and >= 0")));
        }
        Ok(())
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i >= self.node_count() {
            return Err(Error::Network(format!("node {i} out of range")));
        }
        Ok(())
    }

    /// Adds capacity on `s -> i` and `i -> t`.
    pub fn add_terminal_caps(&mut self, i: usize, to_source: f64, to_sink: f64) -> Result<()> {
        self.check_node(i)?;
        Self::check_cap(to_source)?;
        Self::check_cap(to_sink)?;
        self.source_cap[i] += to_source;
        self.sink_cap[i] += to_sink;
        self.solved = None;
        Ok(())
    }

    /// Adds the arc pair `i -> j` (capacity `cap_ij`) and `j -> i` (`cap_ji`).
    pub fn add_edge(&mut self, i: usize, j: usize, cap_ij: f64, cap_ji: f64) -> Result<()> {
        self.check_node(i)?;
        self.check_node(j)?;
        if i == j {
            return Err(Error::Network(format!("self-loop at {i}")));
        }
        Self::check_cap(cap_ij)?;
        Self::check_cap(cap_ji)?;
        let a = self.head.len() as u32;
        self.head.push(j as u32);
        self.next.push(self.first[i]);
        self.first[i] = a;
        self.cap.push(cap_ij);
        self.head.push(i as u32);
        self.next.push(self.first[j]);
        self.first[j] = a + 1;
        self.cap.push(cap_ji);
        self.solved = None;
        Ok(())
    }

    /// Capacity of the cut where `source_side[i]` places node `i` with the source.
    pub fn cut_value(&self, source_side: &[bool]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.node_count() {
            total += if source_side[i] {
                self.sink_cap[i]
            } else {
                self.source_cap[i]
            };
        }
        for a in 0..self.head.len() {
            let from = self.head[a ^ 1] as usize;
            let to = self.head[a] as usize;
            if source_side[from] && !source_side[to] {
                total += self.cap[a];
            }
        }
        total
    }

    /// Largest flow imbalance over inner nodes after [`max_flow`](Self::max_flow).
    pub fn conservation_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.node_count() {
            let terminal_in = self.source_cap[i] - self.sink_cap[i] - self.tr_cap[i];
            let mut out = 0.0;
            let mut a = self.first[i];
            while a != NONE {
                out += self.cap[a as usize] - self.r_cap[a as usize];
                a = self.next[a as usize];
            }
            worst = worst.max((terminal_in - out).abs());
        }
        worst
    }

    fn reset(&mut self) {
        let n = self.node_count();
        self.r_cap = self.cap.clone();
        self.flow = 0.0;
        self.queue.clear();
        self.orphans.clear();
        self.time = 0;
        for i in 0..n {
            self.ts[i] = 0;
            self.active[i] = false;
            let (s, t) = (self.source_cap[i], self.sink_cap[i]);
            self.flow += s.min(t);
            self.tr_cap[i] = s - t;
            if self.tr_cap[i] > 0.0 {
                self.is_sink[i] = false;
                self.parent[i] = TERMINAL;
                self.dist[i] = 1;
                self.activate(i as u32);
            } else if self.tr_cap[i] < 0.0 {
                self.is_sink[i] = true;
                self.parent[i] = TERMINAL;
                self.dist[i] = 1;
                self.activate(i as u32);
            } else {
                self.parent[i] = NONE;
            }
        }
    }

    #[inline]
    fn activate(&mut self, i: u32) {
        if !self.active[i as usize] {
            self.active[i as usize] = true;
            self.queue.push_back(i);
        }
    }

    fn next_active(&mut self) -> Option<u32> {
        while let Some(i) = self.queue.pop_front() {
            self.active[i as usize] = false;
            if self.parent[i as usize] != NONE {
                return Some(i);
            }
        }
        None
    }

    #[inline]
    fn orphan_front(&mut self, i: u32) {
        self.parent[i as usize] = ORPHAN;
        self.orphans.push_front(i);
    }

    #[inline]
    fn orphan_rear(&mut self, i: u32) {
        self.parent[i as usize] = ORPHAN;
        self.orphans.push_back(i);
    }

    /// Computes the maximum flow and a minimum cut. Nodes that can still reach
    /// the sink through residual arcs go to the sink side; every other node,
    /// including ones with no residual path to either terminal, goes to the
    /// source side.
    pub fn max_flow(&mut self) -> MaxFlowResult {
        if let Some(r) = &self.solved {
            return r.clone();
        }
        self.reset();
        let mut current: Option<u32> = None;
        loop {
            let i = match current {
                Some(i) if self.parent[i as usize] != NONE => i,
                _ => {
                    if let Some(i) = current {
                        self.active[i as usize] = false;
                    }
                    match self.next_active() {
                        Some(i) => i,
                        None => break,
                    }
                }
            };
            let iu = i as usize;
            let mut middle = NONE;
            let mut a = self.first[iu];
            if !self.is_sink[iu] {
                while a != NONE {
                    let au = a as usize;
                    if self.r_cap[au] > 0.0 {
                        let j = self.head[au] as usize;
                        if self.parent[j] == NONE {
                            self.is_sink[j] = false;
                            self.parent[j] = a ^ 1;
                            self.ts[j] = self.ts[iu];
                            self.dist[j] = self.dist[iu] + 1;
                            self.activate(j as u32);
                        } else if self.is_sink[j] {
                            middle = a;
                            break;
                        } else if self.ts[j] <= self.ts[iu] && self.dist[j] > self.dist[iu] {
                            self.parent[j] = a ^ 1;
                            self.ts[j] = self.ts[iu];
                            self.dist[j] = self.dist[iu] + 1;
                        }
                    }
                    a = self.next[au];
                }
            } else {
                while a != NONE {
                    let au = a as usize;
                    if self.r_cap[au ^ 1] > 0.0 {
                        let j = self.head[au] as usize;
                        if self.parent[j] == NONE {
                            self.is_sink[j] = true;
                            self.parent[j] = a ^ 1;
                            self.ts[j] = self.ts[iu];
                            self.dist[j] = self.dist[iu] + 1;
                            self.activate(j as u32);
                        } else if !self.is_sink[j] {
                            middle = a ^ 1;
                            break;
                        } else if self.ts[j] <= self.ts[iu] && self.dist[j] > self.dist[iu] {
                            self.parent[j] = a ^ 1;
                            self.ts[j] = self.ts[iu];
                            self.dist[j] = self.dist[iu] + 1;
                        }
                    }
                    a = self.next[au];
                }
            }
            self.time += 1;
            if middle != NONE {
                // keep growing from the same node next round
                self.active[iu] = true;
                current = Some(i);
                self.augment(middle as usize);
                while let Some(o) = self.orphans.pop_front() {
                    if self.is_sink[o as usize] {
                        self.adopt_sink_orphan(o as usize);
                    } else {
                        self.adopt_source_orphan(o as usize);
                    }
                }
            } else {
                self.active[iu] = false;
                current = None;
            }
        }
        let source_side = self.sink_unreachable();
        let cut = self.cut_value(&source_side);
        let result = MaxFlowResult {
            flow: self.flow,
            cut,
            source_side,
        };
        self.solved = Some(result.clone());
        result
    }

    fn augment(&mut self, middle: usize) {
        let mut bottleneck = self.r_cap[middle];
        let mut i = self.head[middle ^ 1] as usize;
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.r_cap[a as usize ^ 1]);
            i = self.head[a as usize] as usize;
        }
        bottleneck = bottleneck.min(self.tr_cap[i]);
        let mut i = self.head[middle] as usize;
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.r_cap[a as usize]);
            i = self.head[a as usize] as usize;
        }
        bottleneck = bottleneck.min(-self.tr_cap[i]);

        self.r_cap[middle ^ 1] += bottleneck;
        self.r_cap[middle] -= bottleneck;

        let mut i = self.head[middle ^ 1] as usize;
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                self.tr_cap[i] -= bottleneck;
                if self.tr_cap[i] == 0.0 {
                    self.orphan_front(i as u32);
                }
                break;
            }
            let au = a as usize;
            self.r_cap[au] += bottleneck;
            self.r_cap[au ^ 1] -= bottleneck;
            if self.r_cap[au ^ 1] == 0.0 {
                self.orphan_front(i as u32);
            }
            i = self.head[au] as usize;
        }
        let mut i = self.head[middle] as usize;
        loop {
            let a = self.parent[i];
            if a == TERMINAL {
                self.tr_cap[i] += bottleneck;
                if self.tr_cap[i] == 0.0 {
                    self.orphan_front(i as u32);
                }
                break;
            }
            let au = a as usize;
            self.r_cap[au ^ 1] += bottleneck;
            self.r_cap[au] -= bottleneck;
            if self.r_cap[au] == 0.0 {
                self.orphan_front(i as u32);
            }
            i = self.head[au] as usize;
        }
        self.flow += bottleneck;
    }

    /// Distance from `j` to its tree root, or `INF_DIST` if the path meets an orphan.
    fn root_distance(&mut self, j: usize) -> u32 {
        let mut d: u32 = 0;
        let mut k = j;
        loop {
            if self.ts[k] == self.time {
                return d + self.dist[k];
            }
            let a = self.parent[k];
            d += 1;
            if a == TERMINAL {
                self.ts[k] = self.time;
                self.dist[k] = 1;
                return d;
            }
            if a == ORPHAN {
                return INF_DIST;
            }
            k = self.head[a as usize] as usize;
        }
    }

    fn mark_path(&mut self, j: usize, mut d: u32) {
        let mut k = j;
        while self.ts[k] != self.time {
            self.ts[k] = self.time;
            self.dist[k] = d;
            d -= 1;
            k = self.head[self.parent[k] as usize] as usize;
        }
    }

    fn adopt_source_orphan(&mut self, i: usize) {
        let mut best = NONE;
        let mut best_d = INF_DIST;
        let mut a0 = self.first[i];
        while a0 != NONE {
            let au = a0 as usize;
            if self.r_cap[au ^ 1] > 0.0 {
                let j = self.head[au] as usize;
                if !self.is_sink[j] && self.parent[j] != NONE {
                    let d = self.root_distance(j);
                    if d < INF_DIST {
                        if d < best_d {
                            best = a0;
                            best_d = d;
                        }
                        self.mark_path(j, d);
                    }
                }
            }
            a0 = self.next[au];
        }
        if best != NONE {
            self.parent[i] = best;
            self.ts[i] = self.time;
            self.dist[i] = best_d + 1;
            return;
        }
        let mut a0 = self.first[i];
        while a0 != NONE {
            let au = a0 as usize;
            let j = self.head[au] as usize;
            if !self.is_sink[j] && self.parent[j] != NONE {
                if self.r_cap[au ^ 1] > 0.0 {
                    self.activate(j as u32);
                }
                let a = self.parent[j];
                if a != TERMINAL && a != ORPHAN && self.head[a as usize] as usize == i {
                    self.orphan_rear(j as u32);
                }
            }
            a0 = self.next[au];
        }
        self.parent[i] = NONE;
    }

    fn adopt_sink_orphan(&mut self, i: usize) {
        let mut best = NONE;
        let mut best_d = INF_DIST;
        let mut a0 = self.first[i];
        while a0 != NONE {
            let au = a0 as usize;
            if self.r_cap[au] > 0.0 {
                let j = self.head[au] as usize;
                if self.is_sink[j] && self.parent[j] != NONE {
                    let d = self.root_distance(j);
                    if d < INF_DIST {
                        if d < best_d {
                            best = a0;
                            best_d = d;
                        }
                        self.mark_path(j, d);
                    }
                }
            }
            a0 = self.next[au];
        }
        if best != NONE {
            self.parent[i] = best;
            self.ts[i] = self.time;
            self.dist[i] = best_d + 1;
            return;
        }
        let mut a0 = self.first[i];
        while a0 != NONE {
            let au = a0 as usize;
            let j = self.head[au] as usize;
            if self.is_sink[j] && self.parent[j] != NONE {
                if self.r_cap[au] > 0.0 {
                    self.activate(j as u32);
                }
                let a = self.parent[j];
                if a != TERMINAL && a != ORPHAN && self.head[a as usize] as usize == i {
                    self.orphan_rear(j as u32);
                }
            }
            a0 = self.next[au];
        }
        self.parent[i] = NONE;
    }

    /// Marks nodes that cannot reach the sink in the residual network.
    fn sink_unreachable(&self) -> Vec<bool> {
        let n = self.node_count();
        let mut reaches_sink = vec![false; n];
        let mut stack: Vec<usize> = Vec::new();
        for i in 0..n {
            if self.tr_cap[i] < 0.0 {
                reaches_sink[i] = true;
                stack.push(i);
            }
        }
        while let Some(v) = stack.pop() {
            let mut a = self.first[v];
            while a != NONE {
                let au = a as usize;
                // arc u -> v is the sister of v -> u
                let u = self.head[au] as usize;
                if !reaches_sink[u] && self.r_cap[au ^ 1] > 0.0 {
                    reaches_sink[u] = true;
                    stack.push(u);
                }
                a = self.next[au];
            }
        }
        reaches_sink.into_iter().map(|r| !r).collect()
    }
}

/// Builds the network whose cut values equal the energy of the corresponding
/// labeling minus [`FlowNetwork::offset`]. Source side is label 1.
pub fn build_st_graph(em: &EnergyModel) -> Result<FlowNetwork> {
    let n = em.node_count();
    let mut net = FlowNetwork::new(n);
    for (i, &[c0, c1]) in em.unary().iter().enumerate() {
        if !(c0.is_finite() && c1.is_finite()) {
            return Err(Error::Network(format!("non-finite unary at node {i}")));
        }
        let m = c0.min(c1);
        // label 0 (sink side) pays c0 through s -> i; label 1 pays c1 through i -> t
        net.add_terminal_caps(i, c0 - m, c1 - m)?;
        net.add_offset(m);
    }
    for (terms, lambda) in [
        (em.local_terms(), em.lambda_local()),
        (em.long_terms(), em.lambda_long()),
    ] {
        for t in terms {
            let w = lambda * t.theta;
            if w < 0.0 {
                return Err(Error::Network(format!(
                    "negative pairwise capacity {w} on ({}, {})",
                    t.i, t.j
                )));
            }
            if w > 0.0 {
                net.add_edge(t.i, t.j, w, w)?;
            }
        }
    }
    Ok(net)
}

/// Mask from a cut: source side is foreground.
pub fn extract_labels(result: &MaxFlowResult, width: usize, height: usize) -> Result<SegmentationMask> {
    SegmentationMask::new(width, height, result.source_side.iter().map(|&s| s as u8).collect())
}

/// Minimum energy and labeling found by a min-cut.
pub fn min_cut_labeling(em: &EnergyModel) -> Result<(f64, Vec<u8>)> {
    let mut net = build_st_graph(em)?;
    let r = net.max_flow();
    Ok((r.cut + net.offset(), r.source_side.iter().map(|&s| s as u8).collect()))
}

pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Exhaustive minimum over all labelings. Ties go to the lexicographically
/// smallest labeling (node 0 most significant, 0 before 1).
pub fn brute_force_min_energy(em: &EnergyModel) -> Result<(f64, Vec<u8>)> {
    let n = em.node_count();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(n));
    }
    let mut labels = vec![0u8; n];
    let mut best = (f64::INFINITY, vec![0u8; n]);
    for code in 0u32..(1u32 << n) {
        for (k, l) in labels.iter_mut().enumerate() {
            *l = ((code >> (n - 1 - k)) & 1) as u8;
        }
        let e = em.energy(&labels);
        if e < best.0 {
            best = (e, labels.clone());
        }
    }
    Ok(best)
}
