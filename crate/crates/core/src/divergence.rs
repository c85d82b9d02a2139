//! Divergences between encoded statistics and the divergence-to-connectivity map.
//!
//! Multi-channel histograms are stored channel after channel, so summing a
//! per-bin term over the whole vector is the same as computing the divergence
//! per channel and adding the results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{StatsKind, StatsRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DivergenceKind {
    /// Bregman divergence generated by the squared norm.
    #[serde(rename = "bregman")]
    BregmanSqNorm,
    #[serde(rename = "kl")]
    Kl,
    #[serde(rename = "hellinger")]
    Hellinger,
}

impl DivergenceKind {
    pub fn name(self) -> &'static str {
        match self {
            DivergenceKind::BregmanSqNorm => "bregman",
            DivergenceKind::Kl => "kl",
            DivergenceKind::Hellinger => "hellinger",
        }
    }

    /// Statistics each divergence is defined on by default.
    pub fn natural_stats(self) -> StatsKind {
        match self {
            DivergenceKind::BregmanSqNorm => StatsKind::Dirac,
            DivergenceKind::Kl | DivergenceKind::Hellinger => StatsKind::Histogram,
        }
    }
}

impl std::str::FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bregman" | "bd" => Ok(DivergenceKind::BregmanSqNorm),
            "kl" | "kld" => Ok(DivergenceKind::Kl),
            "hellinger" | "hd" => Ok(DivergenceKind::Hellinger),
            other => Err(Error::Config(format!("unknown divergence '{other}'"))),
        }
    }
}

impl std::fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectivityMode {
    /// `exp(-D / tau)`: similar nodes connect more often.
    #[default]
    Similarity,
    /// The divergence itself is the connectivity.
    Literal,
}

impl std::str::FromStr for ConnectivityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "similarity" => Ok(ConnectivityMode::Similarity),
            "literal" => Ok(ConnectivityMode::Literal),
            other => Err(Error::Config(format!("unknown connectivity mode '{other}'"))),
        }
    }
}

/// A divergence together with the parameters of its connectivity transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub kind: DivergenceKind,
    pub tau: f64,
    pub mode: ConnectivityMode,
}

impl Divergence {
    pub fn new(kind: DivergenceKind, tau: f64, mode: ConnectivityMode) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Domain(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { kind, tau, mode })
    }

    pub fn divergence(&self, a: StatsRef<'_>, b: StatsRef<'_>) -> Result<f64> {
        match self.kind {
            DivergenceKind::BregmanSqNorm => bregman_sqnorm(a, b),
            DivergenceKind::Kl => kl(a, b),
            DivergenceKind::Hellinger => hellinger(a, b),
        }
    }

    pub fn connectivity(&self, a: StatsRef<'_>, b: StatsRef<'_>) -> Result<f64> {
        Ok(connectivity(self.divergence(a, b)?, self.tau, self.mode))
    }

    /// Connectivity of an already computed divergence value.
    #[inline]
    pub fn transform(&self, d: f64) -> f64 {
        connectivity(d, self.tau, self.mode)
    }
}

fn check_same_shape(a: StatsRef<'_>, b: StatsRef<'_>) -> Result<()> {
    if a.kind != b.kind || a.values.len() != b.values.len() {
        return Err(Error::IncompatibleStats(format!(
            "{:?}[{}] vs {:?}[{}]",
            a.kind,
            a.values.len(),
            b.kind,
            b.values.len()
        )));
    }
    Ok(())
}

fn check_histograms(a: StatsRef<'_>, b: StatsRef<'_>) -> Result<()> {
    check_same_shape(a, b)?;
    if a.kind != StatsKind::Histogram {
        return Err(Error::IncompatibleStats("histogram statistics required".into()));
    }
    Ok(())
}

/// Squared Euclidean distance, the Bregman divergence of `||v||^2`.
pub fn bregman_sqnorm(a: StatsRef<'_>, b: StatsRef<'_>) -> Result<f64> {
    check_same_shape(a, b)?;
    Ok(sq_dist(a.values, b.values))
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `sum_l a_l ln(a_l / b_l)` over all bins of all channels.
pub fn kl(a: StatsRef<'_>, b: StatsRef<'_>) -> Result<f64> {
    check_histograms(a, b)?;
    if let Some(v) = a.values.iter().chain(b.values).find(|&&v| v <= 0.0) {
        return Err(Error::Domain(format!(
            "non-positive histogram bin {v}; statistics must be smoothed"
        )));
    }
    Ok(kl_unchecked(a.values, b.values))
}

#[inline]
pub fn kl_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * (p / q).ln()).sum::<f64>().max(0.0)
}

/// `(1/sqrt 2) sum_l (sqrt b_l - sqrt a_l)^2`, with no outer square root.
pub fn hellinger(a: StatsRef<'_>, b: StatsRef<'_>) -> Result<f64> {
    check_histograms(a, b)?;
    if let Some(v) = a.values.iter().chain(b.values).find(|&&v| v < 0.0) {
        return Err(Error::Domain(format!("negative histogram bin {v}")));
    }
    Ok(hellinger_unchecked(a.values, b.values))
}

#[inline]
pub fn hellinger_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| {
            let d = q.sqrt() - p.sqrt();
            d * d
        })
        .sum();
    s * std::f64::consts::FRAC_1_SQRT_2
}

/// Maps a divergence to a connectivity value.
#[inline]
pub fn connectivity(d: f64, tau: f64, mode: ConnectivityMode) -> f64 {
    match mode {
        ConnectivityMode::Similarity => (-d / tau).exp(),
        ConnectivityMode::Literal => d,
    }
}
