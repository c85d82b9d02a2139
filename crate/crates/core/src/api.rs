//! Request and response bodies of the session service, shared by the server
//! and its client, plus server-side stroke rasterisation.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::divergence::{ConnectivityMode, DivergenceKind};
use crate::error::{Error, Result};
use crate::field::{ScribbleLabel, ScribbleMask};
use crate::pipeline::{RunReport, StageTimings};

/// What a stroke paints. The eraser resets pixels to unmarked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrokeClass {
    #[serde(alias = "fg")]
    Foreground,
    #[serde(alias = "bg")]
    Background,
    #[serde(alias = "unmarked")]
    Eraser,
}

impl StrokeClass {
    pub fn label(self) -> ScribbleLabel {
        match self {
            StrokeClass::Foreground => ScribbleLabel::Foreground,
            StrokeClass::Background => ScribbleLabel::Background,
            StrokeClass::Eraser => ScribbleLabel::Unmarked,
        }
    }
}

/// A polyline in pixel coordinates. A pixel is painted when its centre lies
/// within `radius` of the polyline, so radius 0 paints exactly the pixels
/// the segments pass through at integer coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub class: StrokeClass,
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub radius: f64,
}

impl Stroke {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Domain("stroke has no points".into()));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("stroke coordinates must be finite".into()));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::Domain(format!("brush radius must be >= 0, got {}", self.radius)));
        }
        Ok(())
    }

    /// Paints this stroke over `mask`, overwriting whatever was there.
    pub fn rasterize(&self, mask: &mut ScribbleMask) -> Result<()> {
        self.validate()?;
        let (w, h) = (mask.width(), mask.height());
        let label = self.class.label();
        let r = self.radius;
        // tiny slack so integer-exact segments are not lost to rounding
        let r2 = r * r + 1e-9;
        let segments: Vec<([f64; 2], [f64; 2])> = if self.points.len() == 1 {
            vec![(self.points[0], self.points[0])]
        } else {
            self.points.windows(2).map(|s| (s[0], s[1])).collect()
        };
        for (a, b) in segments {
            let x_lo = (a[0].min(b[0]) - r).floor().max(0.0);
            let x_hi = (a[0].max(b[0]) + r).ceil().min(w as f64 - 1.0);
            let y_lo = (a[1].min(b[1]) - r).floor().max(0.0);
            let y_hi = (a[1].max(b[1]) + r).ceil().min(h as f64 - 1.0);
            if x_lo > x_hi || y_lo > y_hi {
                continue;
            }
            for y in y_lo as usize..=y_hi as usize {
                for x in x_lo as usize..=x_hi as usize {
                    if dist2_to_segment([x as f64, y as f64], a, b) <= r2 {
                        mask.set(x, y, label);
                    }
                }
            }
        }
        Ok(())
    }
}

fn dist2_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
    q[0] * q[0] + q[1] * q[1]
}

/// Strokes applied in order; a later stroke wins where they overlap.
pub fn rasterize_strokes(mask: &mut ScribbleMask, strokes: &[Stroke]) -> Result<()> {
    // validate everything first so a bad request leaves the mask untouched
    for s in strokes {
        s.validate()?;
    }
    for s in strokes {
        s.rasterize(mask)?;
    }
    Ok(())
}

/// Encodes a scribble mask as radius-0 horizontal runs, which rasterise back
/// to exactly the same mask.
pub fn strokes_from_mask(mask: &ScribbleMask) -> Vec<Stroke> {
    let w = mask.width();
    let mut out = Vec::new();
    for y in 0..mask.height() {
        let row = &mask.labels()[y * w..(y + 1) * w];
        let mut x = 0;
        while x < w {
            let l = row[x];
            let start = x;
            while x < w && row[x] == l {
                x += 1;
            }
            let class = match l {
                ScribbleLabel::Foreground => StrokeClass::Foreground,
                ScribbleLabel::Background => StrokeClass::Background,
                ScribbleLabel::Unmarked => continue,
            };
            out.push(Stroke {
                class,
                points: vec![[start as f64, y as f64], [(x - 1) as f64, y as f64]],
                radius: 0.0,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScribbleUpdate {
    pub strokes: Vec<Stroke>,
    /// Clear existing scribbles before painting.
    #[serde(default)]
    pub clear: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub clusters: usize,
    pub cluster_objective: f64,
    pub config: RunConfig,
}

/// Per-request overrides of the session configuration. Settings that
/// change statistics or clustering are not accepted here; they are fixed
/// when the session is created.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentRequest {
    pub seed: Option<u64>,
    pub divergence: Option<DivergenceKind>,
    pub mode: Option<ConnectivityMode>,
    pub tau: Option<f64>,
    pub degree: Option<f64>,
    pub sigma: Option<f64>,
    pub beta: Option<f64>,
    pub lambda_local: Option<f64>,
    pub lambda_long: Option<f64>,
    pub epsilon: Option<f64>,
    /// Draw a fresh clique set instead of reusing the session's pinned seed.
    pub resample: bool,
}

impl SegmentRequest {
    /// `cfg` with every given override applied.
    pub fn apply(&self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.divergence {
            c.divergence = v;
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.tau {
            c.tau = v;
        }
        if let Some(v) = self.degree {
            c.degree = v;
        }
        if let Some(v) = self.sigma {
            c.sigma = v;
        }
        if let Some(v) = self.beta {
            c.beta = v;
        }
        if let Some(v) = self.lambda_local {
            c.lambda_local = v;
        }
        if let Some(v) = self.lambda_long {
            c.lambda_long = v;
        }
        if let Some(v) = self.epsilon {
            c.epsilon = v;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub mask_png_base64: String,
    pub energy: f64,
    pub degree_mean: f64,
    pub edges: usize,
    pub timings: StageTimings,
    pub report: RunReport,
    /// The configuration the run actually used.
    pub config: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCount {
    pub sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
