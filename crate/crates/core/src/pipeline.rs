//! End-to-end segmentation: statistics, clustering, clique sampling, energy
//! and min-cut.
//!
//! [`prepare`] holds everything that depends only on the image, so
//! interactive callers can reuse it while scribbles change.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cliques::{bound_flags, cluster_nodes, positions, CliqueSampler, CliqueSet, ClusterModel};
use crate::config::RunConfig;
use crate::energy::{build_energy, fit_appearance_model};
use crate::error::Result;
use crate::field::{
    compute_encoded_stats, local_pairs, ImageGrid, MaskMeta, ScribbleMask, SegmentationMask, StatsField, StatsKind,
};
use crate::inference::min_cut_labeling;

/// Clustering is seeded independently of the run seed so one clustering per
/// image serves every run.
pub const CLUSTER_SEED: u64 = 0x5eed;

/// Settings that determine the cached image-level data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrepKey {
    pub window: usize,
    pub bins: usize,
    pub kind: StatsKind,
    pub q: usize,
}

impl PrepKey {
    pub fn of(cfg: &RunConfig, nodes: usize) -> Self {
        Self {
            window: cfg.window,
            bins: cfg.bins,
            kind: cfg.stats_kind(),
            q: cfg.effective_q(nodes),
        }
    }
}

/// Image-level data reusable across scribble updates and run seeds.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub key: PrepKey,
    pub stats: StatsField,
    pub clusters: ClusterModel,
    pub stats_ms: f64,
    pub cluster_ms: f64,
}

impl Prepared {
    pub fn matches(&self, cfg: &RunConfig) -> bool {
        self.key == PrepKey::of(cfg, self.stats.len())
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn prepare(img: &ImageGrid, cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let key = PrepKey::of(cfg, img.len());
    let t = Instant::now();
    let stats = compute_encoded_stats(img, key.window, key.kind, key.bins)?;
    let stats_ms = ms_since(t);
    let t = Instant::now();
    let clusters = cluster_nodes(&stats, &positions(img), key.q, CLUSTER_SEED)?;
    Ok(Prepared {
        key,
        stats,
        clusters,
        stats_ms,
        cluster_ms: ms_since(t),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub stats_ms: f64,
    pub cluster_ms: f64,
    pub calibrate_ms: f64,
    pub sample_ms: f64,
    pub energy_ms: f64,
    pub inference_ms: f64,
    pub total_ms: f64,
    /// Whether stats and clustering came from a cache.
    pub cached: bool,
}

/// What a run did, alongside its mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub divergence: String,
    pub mode: String,
    pub energy: f64,
    pub foreground_pixels: usize,
    /// Long-range cliques sampled.
    pub edges: usize,
    pub local_edges: usize,
    pub gamma: Option<f64>,
    pub target_degree: f64,
    pub degree_mean: f64,
    pub degree_min: usize,
    pub degree_max: usize,
    pub clusters: usize,
    pub cluster_objective: f64,
    pub implied_p: f64,
    pub p_lower: f64,
    pub p_upper: f64,
    pub epsilon: f64,
    pub below_connectedness: bool,
    pub above_cut_bound: bool,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
pub struct SegmentOutput {
    pub mask: SegmentationMask,
    pub cliques: CliqueSet,
    pub report: RunReport,
}

/// Samples the long-range cliques for a run; empty when the degree is 0.
pub fn sample_cliques(img: &ImageGrid, prep: &Prepared, cfg: &RunConfig) -> Result<(CliqueSet, f64, f64)> {
    if cfg.degree <= 0.0 {
        return Ok((CliqueSet::empty(0.0, cfg.seed), 0.0, 0.0));
    }
    let sampler = CliqueSampler::new(&prep.stats, &prep.clusters, cfg.divergence()?)?.with_lattice(img.width());
    let t = Instant::now();
    let profile = sampler.gamma_profile();
    // small images cannot reach the default degree; saturate instead
    let saturated = profile.saturated_degree();
    let target = if saturated > 0.0 {
        cfg.degree.min(saturated)
    } else {
        cfg.degree
    };
    let gamma = profile.solve(target)?;
    let calibrate_ms = ms_since(t);
    let t = Instant::now();
    let mut cs = sampler.sample(gamma, cfg.seed)?;
    cs.expected_degree_target = target;
    Ok((cs, calibrate_ms, ms_since(t)))
}

/// Runs one segmentation against prepared image data. If `prep` was built
/// with different statistics settings it is rebuilt for this call.
pub fn segment(img: &ImageGrid, prep: &Prepared, scribbles: &ScribbleMask, cfg: &RunConfig) -> Result<SegmentOutput> {
    let start = Instant::now();
    cfg.validate()?;
    scribbles.check_dims(img)?;
    scribbles.require_both_classes()?;
    let rebuilt;
    let (prep, cached) = if prep.matches(cfg) {
        (prep, true)
    } else {
        rebuilt = prepare(img, cfg)?;
        (&rebuilt, false)
    };

    let (cs, calibrate_ms, sample_ms) = sample_cliques(img, prep, cfg)?;

    let t = Instant::now();
    let appearance = fit_appearance_model(img, scribbles, cfg.bins)?;
    let local = local_pairs(img);
    let em = build_energy(img, scribbles, &appearance, &local, &cs.pairs(), &cfg.potentials())?;
    let energy_ms = ms_since(t);

    let t = Instant::now();
    let (energy, labels) = min_cut_labeling(&em)?;
    let inference_ms = ms_since(t);

    let mut mask = SegmentationMask::new(img.width(), img.height(), labels)?;
    mask.meta = MaskMeta {
        seed: cfg.seed,
        gamma: cs.gamma,
        divergence: cfg.divergence.name().to_string(),
        expected_degree: cs.expected_degree_target,
    };

    let n = img.len();
    let mut deg = vec![0usize; n];
    for c in &cs.long_range {
        deg[c.i] += 1;
        deg[c.j] += 1;
    }
    let degree_mean = 2.0 * cs.len() as f64 / n as f64;
    let (implied_p, bounds, below, above) = bound_flags(degree_mean, n.max(2), cfg.epsilon)?;
    let report = RunReport {
        width: img.width(),
        height: img.height(),
        seed: cfg.seed,
        divergence: cfg.divergence.name().to_string(),
        mode: format!("{:?}", cfg.mode).to_lowercase(),
        energy,
        foreground_pixels: mask.foreground_count(),
        edges: cs.len(),
        local_edges: local.len(),
        gamma: (cfg.degree > 0.0).then_some(cs.gamma),
        target_degree: cs.expected_degree_target,
        degree_mean,
        degree_min: deg.iter().copied().min().unwrap_or(0),
        degree_max: deg.iter().copied().max().unwrap_or(0),
        clusters: prep.clusters.q,
        cluster_objective: prep.clusters.objective(),
        implied_p,
        p_lower: bounds.p_lower,
        p_upper: bounds.p_upper,
        epsilon: cfg.epsilon,
        below_connectedness: below,
        above_cut_bound: above,
        timings: StageTimings {
            stats_ms: if cached { 0.0 } else { prep.stats_ms },
            cluster_ms: if cached { 0.0 } else { prep.cluster_ms },
            calibrate_ms,
            sample_ms,
            energy_ms,
            inference_ms,
            total_ms: ms_since(start),
            cached,
        },
    };
    Ok(SegmentOutput {
        mask,
        cliques: cs,
        report,
    })
}

/// [`prepare`] followed by [`segment`]; timings report the preparation cost.
pub fn run(img: &ImageGrid, scribbles: &ScribbleMask, cfg: &RunConfig) -> Result<SegmentOutput> {
    scribbles.check_dims(img)?;
    scribbles.require_both_classes()?;
    let start = Instant::now();
    let prep = prepare(img, cfg)?;
    let mut out = segment(img, &prep, scribbles, cfg)?;
    out.report.timings.stats_ms = prep.stats_ms;
    out.report.timings.cluster_ms = prep.cluster_ms;
    out.report.timings.cached = false;
    out.report.timings.total_ms = ms_since(start);
    Ok(out)
}
