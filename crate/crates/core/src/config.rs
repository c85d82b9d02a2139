//! Run configuration shared by the CLI and the session service.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::divergence::{ConnectivityMode, Divergence, DivergenceKind};
use crate::energy::{LocalPotential, PotentialParams};
use crate::error::{Error, Result};
use crate::field::StatsKind;

/// Every knob of a segmentation run. Missing keys in a config file take
/// the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub divergence: DivergenceKind,
    pub tau: f64,
    pub mode: ConnectivityMode,
    /// Statistics window side (odd).
    pub window: usize,
    /// Histogram bins per channel, for both neighbourhood statistics and the
    /// appearance model.
    pub bins: usize,
    /// Statistics kind; defaults to the divergence's natural one.
    pub stats: Option<StatsKind>,
    /// Cluster count, clamped to the node count.
    pub q: usize,
    /// Target number of long-range cliques per node; 0 disables them.
    pub degree: f64,
    pub sigma: f64,
    pub beta: f64,
    pub lambda_local: f64,
    pub lambda_long: f64,
    pub local_variant: LocalPotential,
    /// Tolerance used for the cut-preservation bound in reports.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            divergence: DivergenceKind::Kl,
            tau: 0.02,
            mode: ConnectivityMode::Similarity,
            window: 5,
            bins: 16,
            stats: None,
            q: 500,
            degree: 30.0,
            sigma: 1.0,
            beta: -5.0,
            lambda_local: 1.0,
            lambda_long: 1.0,
            local_variant: LocalPotential::AsTypeset,
            epsilon: 0.1,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if self.window == 0 || self.window.is_multiple_of(2) {
            return bad(format!("window must be odd and positive, got {}", self.window));
        }
        if self.bins < 2 {
            return bad(format!("bins must be >= 2, got {}", self.bins));
        }
        if self.q == 0 {
            return bad("q must be >= 1".into());
        }
        if !(self.degree >= 0.0 && self.degree.is_finite()) {
            return bad(format!("degree must be >= 0, got {}", self.degree));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be > 0, got {}", self.sigma));
        }
        if !self.beta.is_finite() {
            return bad(format!("beta must be finite, got {}", self.beta));
        }
        for (name, v) in [("lambda_local", self.lambda_local), ("lambda_long", self.lambda_long)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad(format!("epsilon must be in (0, 1], got {}", self.epsilon));
        }
        let kind = self.stats_kind();
        if kind == StatsKind::Dirac && self.divergence != DivergenceKind::BregmanSqNorm {
            return bad(format!("{} needs histogram statistics", self.divergence));
        }
        Ok(())
    }

    pub fn stats_kind(&self) -> StatsKind {
        self.stats.unwrap_or_else(|| self.divergence.natural_stats())
    }

    pub fn divergence(&self) -> Result<Divergence> {
        Divergence::new(self.divergence, self.tau, self.mode)
    }

    pub fn potentials(&self) -> PotentialParams {
        PotentialParams {
            sigma: self.sigma,
            beta: self.beta,
            lambda_local: self.lambda_local,
            lambda_long: self.lambda_long,
            local_variant: self.local_variant,
        }
    }

    pub fn effective_q(&self, nodes: usize) -> usize {
        self.q.min(nodes).max(1)
    }
}
