//! CRF energy: scribble-driven unary costs plus local and long-range pairwise terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{bin_index, ImageGrid, ScribbleLabel, ScribbleMask, SegmentationMask};

/// Cost charged for contradicting a scribble. Large but finite so flow
/// arithmetic stays in range.
pub const HARD_CONSTRAINT: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    pub i: usize,
    pub j: usize,
    pub theta: f64,
}

/// Binary pairwise energy, label 1 = foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    /// `[cost of label 0, cost of label 1]` per node.
    unary: Vec<[f64; 2]>,
    local: Vec<PairTerm>,
    long: Vec<PairTerm>,
    lambda_local: f64,
    lambda_long: f64,
}

impl EnergyModel {
    /// Rejects negative or non-finite weights so every term stays submodular.
    pub fn new(
        unary: Vec<[f64; 2]>,
        local: Vec<PairTerm>,
        long: Vec<PairTerm>,
        lambda_local: f64,
        lambda_long: f64,
    ) -> Result<Self> {
        let n = unary.len();
        for (name, l) in [("lambda_local", lambda_local), ("lambda_long", lambda_long)] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Domain(format!("{name} must be >= 0, got {l}")));
            }
        }
        if let Some(u) = unary.iter().flatten().find(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("non-finite unary cost {u}")));
        }
        for t in local.iter().chain(&long) {
            if t.i >= n || t.j >= n || t.i == t.j {
                return Err(Error::Domain(format!("bad pair ({}, {})", t.i, t.j)));
            }
            if !(t.theta >= 0.0 && t.theta.is_finite()) {
                return Err(Error::Domain(format!(
                    "pairwise weight {} on ({}, {}) must be >= 0",
                    t.theta, t.i, t.j
                )));
            }
        }
        Ok(Self {
            unary,
            local,
            long,
            lambda_local,
            lambda_long,
        })
    }

    pub fn node_count(&self) -> usize {
        self.unary.len()
    }

    pub fn unary(&self) -> &[[f64; 2]] {
        &self.unary
    }

    pub fn local_terms(&self) -> &[PairTerm] {
        &self.local
    }

    pub fn long_terms(&self) -> &[PairTerm] {
        &self.long
    }

    pub fn lambda_local(&self) -> f64 {
        self.lambda_local
    }

    pub fn lambda_long(&self) -> f64 {
        self.lambda_long
    }

    /// Energy of a labeling given as one 0/1 value per node.
    pub fn energy(&self, labels: &[u8]) -> f64 {
        let unary: f64 = self.unary.iter().zip(labels).map(|(c, &l)| c[l as usize]).sum();
        let cut = |terms: &[PairTerm]| -> f64 {
            terms
                .iter()
                .filter(|t| labels[t.i] != labels[t.j])
                .map(|t| t.theta)
                .sum()
        };
        unary + self.lambda_local * cut(&self.local) + self.lambda_long * cut(&self.long)
    }
}

pub fn total_energy(em: &EnergyModel, y: &SegmentationMask) -> Result<f64> {
    if y.labels.len() != em.node_count() {
        return Err(Error::DimensionMismatch(format!(
            "mask has {} pixels, model has {} nodes",
            y.labels.len(),
            em.node_count()
        )));
    }
    Ok(em.energy(&y.labels))
}

/// Per-channel colour histograms of the scribbled foreground and background.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceModel {
    pub bins: usize,
    pub channels: usize,
    pub foreground: Vec<f64>,
    pub background: Vec<f64>,
}

impl AppearanceModel {
    /// Product of per-channel bin probabilities of `pixel` under one class.
    pub fn likelihood(&self, foreground: bool, pixel: &[f64]) -> f64 {
        let hist = if foreground { &self.foreground } else { &self.background };
        pixel
            .iter()
            .enumerate()
            .map(|(c, &v)| hist[c * self.bins + bin_index(v, self.bins)])
            .product()
    }

    fn neg_log_likelihood(&self, foreground: bool, pixel: &[f64]) -> f64 {
        let hist = if foreground { &self.foreground } else { &self.background };
        pixel
            .iter()
            .enumerate()
            .map(|(c, &v)| -hist[c * self.bins + bin_index(v, self.bins)].ln())
            .sum()
    }
}

/// Add-one smoothed, per-channel normalised histograms over each class's scribbles.
pub fn fit_appearance_model(img: &ImageGrid, scribbles: &ScribbleMask, bins: usize) -> Result<AppearanceModel> {
    scribbles.check_dims(img)?;
    scribbles.require_both_classes()?;
    if bins < 2 {
        return Err(Error::Domain(format!("appearance model needs >= 2 bins, got {bins}")));
    }
    let ch = img.channels();
    let mut fg = vec![1.0; ch * bins];
    let mut bg = vec![1.0; ch * bins];
    let (mut n_fg, mut n_bg) = (0usize, 0usize);
    for node in 0..img.len() {
        let hist = match scribbles.get(node) {
            ScribbleLabel::Foreground => {
                n_fg += 1;
                &mut fg
            }
            ScribbleLabel::Background => {
                n_bg += 1;
                &mut bg
            }
            ScribbleLabel::Unmarked => continue,
        };
        for (c, &v) in img.pixel(node).iter().enumerate() {
            hist[c * bins + bin_index(v, bins)] += 1.0;
        }
    }
    let norm = |h: &mut Vec<f64>, count: usize| {
        let total = (count + bins) as f64;
        h.iter_mut().for_each(|v| *v /= total);
    };
    norm(&mut fg, n_fg);
    norm(&mut bg, n_bg);
    Ok(AppearanceModel {
        bins,
        channels: ch,
        foreground: fg,
        background: bg,
    })
}

/// `[cost(background), cost(foreground)]` per pixel: negative log-likelihoods,
/// with scribbled pixels pinned to their class.
pub fn unary_potentials(img: &ImageGrid, model: &AppearanceModel, scribbles: &ScribbleMask) -> Vec<[f64; 2]> {
    (0..img.len())
        .map(|node| match scribbles.get(node) {
            ScribbleLabel::Foreground => [HARD_CONSTRAINT, 0.0],
            ScribbleLabel::Background => [0.0, HARD_CONSTRAINT],
            ScribbleLabel::Unmarked => {
                let px = img.pixel(node);
                [model.neg_log_likelihood(false, px), model.neg_log_likelihood(true, px)]
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalPotential {
    /// `0.05 + 0.95 exp(-0.5 d^2) / sigma`
    #[default]
    AsTypeset,
    /// `0.05 + 0.95 exp(-0.5 d^2 / sigma)`
    SigmaInExponent,
}

#[inline]
fn distance(xi: &[f64], xj: &[f64]) -> f64 {
    crate::divergence::sq_dist(xi, xj).sqrt()
}

/// Weight of a 4-connected clique.
pub fn theta_local(xi: &[f64], xj: &[f64], sigma: f64, variant: LocalPotential) -> f64 {
    let d2 = crate::divergence::sq_dist(xi, xj);
    match variant {
        LocalPotential::AsTypeset => 0.05 + 0.95 * (-0.5 * d2).exp() / sigma,
        LocalPotential::SigmaInExponent => 0.05 + 0.95 * (-0.5 * d2 / sigma).exp(),
    }
}

/// Weight of a long-range clique: logistic of `beta * |xi - xj|`.
pub fn theta_long(xi: &[f64], xj: &[f64], beta: f64) -> f64 {
    1.0 / (1.0 + (-beta * distance(xi, xj)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialParams {
    pub sigma: f64,
    pub beta: f64,
    pub lambda_local: f64,
    pub lambda_long: f64,
    pub local_variant: LocalPotential,
}

impl Default for PotentialParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            beta: 1.0,
            lambda_local: 1.0,
            lambda_long: 1.0,
            local_variant: LocalPotential::AsTypeset,
        }
    }
}

/// Assembles the full energy for an image.
pub fn build_energy(
    img: &ImageGrid,
    scribbles: &ScribbleMask,
    appearance: &AppearanceModel,
    local_pairs: &[(usize, usize)],
    long_pairs: &[(usize, usize)],
    params: &PotentialParams,
) -> Result<EnergyModel> {
    if !(params.sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be > 0, got {}", params.sigma)));
    }
    scribbles.check_dims(img)?;
    let unary = unary_potentials(img, appearance, scribbles);
    let local = local_pairs
        .iter()
        .map(|&(i, j)| PairTerm {
            i,
            j,
            theta: theta_local(img.pixel(i), img.pixel(j), params.sigma, params.local_variant),
        })
        .collect();
    let long = long_pairs
        .iter()
        .map(|&(i, j)| PairTerm {
            i,
            j,
            theta: theta_long(img.pixel(i), img.pixel(j), params.beta),
        })
        .collect();
    EnergyModel::new(unary, local, long, params.lambda_local, params.lambda_long)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(w: usize, h: usize, v: &[f64]) -> ImageGrid {
        ImageGrid::new(w, h, 1, v.to_vec()).unwrap()
    }

    #[test]
    fn theta_local_points() {
        let v = LocalPotential::AsTypeset;
        assert_eq!(theta_local(&[0.4], &[0.4], 1.0, v), 1.0);
        assert!((theta_local(&[0.0], &[1.0], 1.0, v) - 0.62620).abs() < 1e-5);
        assert!((theta_local(&[0.0], &[1e3], 1.0, v) - 0.05).abs() < 1e-12);
        // sigma divides the exponential term
        assert!((theta_local(&[0.2], &[0.2], 2.0, v) - 0.525).abs() < 1e-12);
        assert!((theta_local(&[0.2], &[0.2], 2.0, LocalPotential::SigmaInExponent) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn theta_long_points() {
        assert_eq!(theta_long(&[0.3, 0.1], &[0.3, 0.1], 5.0), 0.5);
        assert_eq!(theta_long(&[0.3], &[0.3], -5.0), 0.5);
        assert!((theta_long(&[0.0], &[1.0], 2.0) - 0.88080).abs() < 1e-5);
        assert!((theta_long(&[0.0], &[1e3], 2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn appearance_model_smoothing() {
        // 2x2: two black fg pixels, two white bg pixels
        let img = gray(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let mut s = ScribbleMask::new(2, 2);
        s.set(0, 0, ScribbleLabel::Foreground);
        s.set(1, 0, ScribbleLabel::Foreground);
        s.set(0, 1, ScribbleLabel::Background);
        s.set(1, 1, ScribbleLabel::Background);
        let m = fit_appearance_model(&img, &s, 2).unwrap();
        assert!((m.foreground[0] - 3.0 / 4.0).abs() < 1e-15);
        assert!((m.background[1] - 3.0 / 4.0).abs() < 1e-15);
        let kl = crate::divergence::kl_unchecked(&m.foreground, &m.background);
        assert!(kl > 0.0);
    }

    #[test]
    fn identical_scribble_sets_give_identical_histograms() {
        let img = gray(2, 1, &[0.3, 0.3]);
        let mut s = ScribbleMask::new(2, 1);
        s.set(0, 0, ScribbleLabel::Foreground);
        s.set(1, 0, ScribbleLabel::Background);
        let m = fit_appearance_model(&img, &s, 4).unwrap();
        assert_eq!(m.foreground, m.background);
        let u = unary_potentials(&img, &m, &ScribbleMask::new(2, 1));
        assert_eq!(u[0][0], u[0][1]);
    }

    #[test]
    fn appearance_requires_both_classes() {
        let img = gray(2, 1, &[0.3, 0.3]);
        let mut s = ScribbleMask::new(2, 1);
        s.set(0, 0, ScribbleLabel::Foreground);
        assert!(matches!(
            fit_appearance_model(&img, &s, 4),
            Err(Error::MissingSeeds("background"))
        ));
    }

    #[test]
    fn unary_log_ratio_and_hard_constraints() {
        let m = AppearanceModel {
            bins: 2,
            channels: 1,
            foreground: vec![0.2, 0.8],
            background: vec![0.8, 0.2],
        };
        let img = gray(3, 1, &[0.9, 0.9, 0.9]);
        let mut s = ScribbleMask::new(3, 1);
        s.set(1, 0, ScribbleLabel::Foreground);
        s.set(2, 0, ScribbleLabel::Background);
        let u = unary_potentials(&img, &m, &s);
        assert!((u[0][0] - u[0][1] - 4f64.ln()).abs() < 1e-12);
        assert_eq!(u[1], [HARD_CONSTRAINT, 0.0]);
        assert_eq!(u[2], [0.0, HARD_CONSTRAINT]);
    }

    #[test]
    fn energy_points() {
        let em = EnergyModel::new(
            vec![[0.0, 0.0]; 2],
            vec![PairTerm { i: 0, j: 1, theta: 0.7 }],
            vec![],
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(em.energy(&[1, 1]), 0.0);
        assert_eq!(em.energy(&[0, 0]), 0.0);
        assert_eq!(em.energy(&[0, 1]), 0.7);
        assert!(EnergyModel::new(
            vec![[0.0, 0.0]; 2],
            vec![PairTerm {
                i: 0,
                j: 1,
                theta: -0.1
            }],
            vec![],
            1.0,
            1.0
        )
        .is_err());
        assert!(EnergyModel::new(
            vec![[0.0, 0.0]; 2],
            vec![],
            vec![PairTerm { i: 0, j: 2, theta: 0.1 }],
            1.0,
            1.0
        )
        .is_err());
    }

    #[test]
    fn three_by_three_fixture_energy() {
        // unary columns: label 0 cost, label 1 cost
        let unary = vec![
            [0.0, 2.0],
            [0.5, 1.0],
            [1.0, 0.0],
            [0.2, 0.4],
            [0.6, 0.3],
            [2.0, 0.0],
            [0.0, 1.5],
            [0.1, 0.9],
            [0.7, 0.2],
        ];
        let local: Vec<PairTerm> = crate::field::lattice_pairs(3, 3)
            .into_iter()
            .map(|(i, j)| PairTerm { i, j, theta: 0.25 })
            .collect();
        let long = vec![PairTerm { i: 0, j: 8, theta: 0.6 }, PairTerm { i: 2, j: 6, theta: 0.4 }];
        let em = EnergyModel::new(unary, local, long, 1.0, 2.0).unwrap();
        let y = SegmentationMask::new(3, 3, vec![0, 1, 1, 0, 1, 1, 0, 0, 1]).unwrap();
        // unary: 0 + 1.0 + 0 + 0.2 + 0.3 + 0 + 0 + 0.1 + 0.2 = 1.8
        // local cuts: horizontal (0,1) (3,4) (7,8), vertical (4,7) -> 4 * 0.25 = 1.0
        // long: (0,8) cut 0.6, (2,6) cut 0.4 -> 1.0 * lambda 2 = 2.0
        assert!((total_energy(&em, &y).unwrap() - 4.8).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn energy_invariant_to_term_order(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng, seq::SliceRandom};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 8;
            let unary: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
            let mut long: Vec<PairTerm> = (0..12).filter_map(|_| {
                let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
                (i != j).then(|| PairTerm { i, j, theta: rng.random() })
            }).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let a = EnergyModel::new(unary.clone(), vec![], long.clone(), 1.0, 1.3).unwrap().energy(&labels);
            long.shuffle(&mut rng);
            let b = EnergyModel::new(unary, vec![], long, 1.0, 1.3).unwrap().energy(&labels);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn single_flip_delta_matches_incident_terms(seed in any::<u64>(), node in 0usize..9) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 9;
            let unary: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
            let local: Vec<PairTerm> = crate::field::lattice_pairs(3, 3).into_iter()
                .map(|(i, j)| PairTerm { i, j, theta: rng.random() }).collect();
            let long = vec![PairTerm { i: 0, j: 8, theta: rng.random() }, PairTerm { i: 4, j: 2, theta: rng.random() }];
            let (ll, lg) = (0.7, 1.9);
            let em = EnergyModel::new(unary.clone(), local.clone(), long.clone(), ll, lg).unwrap();
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let mut flipped = labels.clone();
            flipped[node] = 1 - flipped[node];
            let mut expected = unary[node][flipped[node] as usize] - unary[node][labels[node] as usize];
            for (terms, lambda) in [(&local, ll), (&long, lg)] {
                for t in terms.iter().filter(|t| t.i == node || t.j == node) {
                    let before = (labels[t.i] != labels[t.j]) as u8 as f64;
                    let after = (flipped[t.i] != flipped[t.j]) as u8 as f64;
                    expected += lambda * t.theta * (after - before);
                }
            }
            prop_assert!((em.energy(&flipped) - em.energy(&labels) - expected).abs() < 1e-12);
        }
    }
}
