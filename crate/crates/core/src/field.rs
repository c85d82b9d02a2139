//! Pixel lattice types and per-node neighbourhood statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major pixel lattice, intensities normalised to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("empty lattice".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("{channels} channels, expected 1 or 3")));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "{} samples for {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("intensity {v} outside [0,1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a grid by evaluating `f(x, y, channel)`; values are clamped to `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn pixel(&self, node: usize) -> &[f64] {
        &self.data[node * self.channels..(node + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_at(&self, x: usize, y: usize) -> &[f64] {
        self.pixel(self.index(x, y))
    }

    /// Node position `(row, col)` scaled to `[0, 1]`.
    pub fn position(&self, node: usize) -> [f64; 2] {
        let row = (node / self.width) as f64;
        let col = (node % self.width) as f64;
        let rs = (self.height.max(2) - 1) as f64;
        let cs = (self.width.max(2) - 1) as f64;
        [row / rs, col / cs]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScribbleLabel {
    #[default]
    Unmarked,
    Foreground,
    Background,
}

/// User seeds painted over an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScribbleMask {
    width: usize,
    height: usize,
    labels: Vec<ScribbleLabel>,
}

impl ScribbleMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![ScribbleLabel::Unmarked; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<ScribbleLabel>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} scribble labels for {width}x{height}",
                labels.len()
            )));
        }
        Ok(Self { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[ScribbleLabel] {
        &self.labels
    }

    pub fn get(&self, node: usize) -> ScribbleLabel {
        self.labels[node]
    }

    pub fn set(&mut self, x: usize, y: usize, label: ScribbleLabel) {
        self.labels[y * self.width + x] = label;
    }

    pub fn count(&self, label: ScribbleLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn check_dims(&self, img: &ImageGrid) -> Result<()> {
        if self.width != img.width() || self.height != img.height() {
            return Err(Error::DimensionMismatch(format!(
                "scribbles {}x{} vs image {}x{}",
                self.width,
                self.height,
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }

    /// Both classes must be seeded before inference.
    pub fn require_both_classes(&self) -> Result<()> {
        if !self.labels.contains(&ScribbleLabel::Foreground) {
            return Err(Error::MissingSeeds("foreground"));
        }
        if !self.labels.contains(&ScribbleLabel::Background) {
            return Err(Error::MissingSeeds("background"));
        }
        Ok(())
    }
}

/// Provenance attached to a produced mask.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskMeta {
    pub seed: u64,
    pub gamma: f64,
    pub divergence: String,
    pub expected_degree: f64,
}

/// Binary label field; 1 is foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
    pub meta: MaskMeta,
}

impl SegmentationMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {width}x{height}",
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Domain("mask labels must be 0 or 1".into()));
        }
        Ok(Self {
            width,
            height,
            labels,
            meta: MaskMeta::default(),
        })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        Self {
            width,
            height,
            labels: vec![label.min(1); width * height],
            meta: MaskMeta::default(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn inverted(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            labels: self.labels.iter().map(|&l| 1 - l).collect(),
            meta: self.meta.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatsKind {
    /// Per-channel normalised histogram of the window.
    Histogram,
    /// The centre pixel's channel values.
    Dirac,
}

/// Owned neighbourhood statistic of one node (or one cluster centroid).
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedStats {
    pub kind: StatsKind,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl EncodedStats {
    pub fn histogram(channels: usize, values: Vec<f64>) -> Self {
        Self {
            kind: StatsKind::Histogram,
            channels,
            values,
        }
    }

    pub fn dirac(values: Vec<f64>) -> Self {
        Self {
            kind: StatsKind::Dirac,
            channels: values.len(),
            values,
        }
    }

    pub fn as_ref(&self) -> StatsRef<'_> {
        StatsRef {
            kind: self.kind,
            channels: self.channels,
            values: &self.values,
        }
    }
}

/// Borrowed view of an [`EncodedStats`], as handed out by [`StatsField`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsRef<'a> {
    pub kind: StatsKind,
    pub channels: usize,
    pub values: &'a [f64],
}

impl StatsRef<'_> {
    pub fn to_owned(&self) -> EncodedStats {
        EncodedStats {
            kind: self.kind,
            channels: self.channels,
            values: self.values.to_vec(),
        }
    }
}

/// Statistics for every node, stored flat with a fixed stride.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsField {
    pub kind: StatsKind,
    pub channels: usize,
    /// Values per node: `channels * bins` for histograms, `channels` for Dirac.
    pub dim: usize,
    pub values: Vec<f64>,
}

impl StatsField {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn slice(&self, node: usize) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }

    #[inline]
    pub fn get(&self, node: usize) -> StatsRef<'_> {
        StatsRef {
            kind: self.kind,
            channels: self.channels,
            values: self.slice(node),
        }
    }
}

/// Histogram bin of an intensity in `[0, 1]` for `bins` equal-width bins.
#[inline]
pub fn bin_index(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

/// Computes one [`EncodedStats`] per pixel.
///
/// Histograms use a `window x window` neighbourhood with replicate padding,
/// one pseudo-count per bin and per-channel normalisation.
pub fn compute_encoded_stats(img: &ImageGrid, window: usize, kind: StatsKind, bins: usize) -> Result<StatsField> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    if window == 0 || window.is_multiple_of(2) || window > 2 * w.min(h) + 1 {
        return Err(Error::InvalidWindow {
            window,
            width: w,
            height: h,
        });
    }
    match kind {
        StatsKind::Dirac => Ok(StatsField {
            kind,
            channels: ch,
            dim: ch,
            values: img.data().to_vec(),
        }),
        StatsKind::Histogram => {
            if bins < 2 {
                return Err(Error::Domain(format!("histogram needs >= 2 bins, got {bins}")));
            }
            let dim = ch * bins;
            let half = (window / 2) as isize;
            let total = (window * window + bins) as f64;
            let mut values = vec![0.0; w * h * dim];
            values.par_chunks_mut(w * dim).enumerate().for_each(|(y, row)| {
                for x in 0..w {
                    let hist = &mut row[x * dim..(x + 1) * dim];
                    hist.fill(1.0);
                    for dy in -half..=half {
                        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        for dx in -half..=half {
                            let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                            for (c, &v) in img.pixel_at(xx, yy).iter().enumerate() {
                                hist[c * bins + bin_index(v, bins)] += 1.0;
                            }
                        }
                    }
                    for v in hist.iter_mut() {
                        *v /= total;
                    }
                }
            });
            Ok(StatsField {
                kind,
                channels: ch,
                dim,
                values,
            })
        }
    }
}

/// All horizontally and vertically adjacent pairs `(i, j)` with `i < j`.
pub fn local_pairs(img: &ImageGrid) -> Vec<(usize, usize)> {
    lattice_pairs(img.width(), img.height())
}

pub fn lattice_pairs(width: usize, height: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(width * height.saturating_sub(1) + height * width.saturating_sub(1));
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if x + 1 < width {
                pairs.push((i, i + 1));
            }
            if y + 1 < height {
                pairs.push((i, i + width));
            }
        }
    }
    pairs
}

/// Whether two nodes are 4-neighbours on a lattice of the given width.
#[inline]
pub fn are_lattice_neighbors(a: usize, b: usize, width: usize) -> bool {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    (hi - lo == 1 && hi % width != 0) || hi - lo == width
}
