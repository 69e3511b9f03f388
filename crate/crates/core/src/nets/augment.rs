//! Asymmetric input augmentation for students and teachers.
//!
//! 2D: random crop window, square cutouts, bounded additive noise on the
//! signal channels (a stand-in for blur/AugMix on abstract feature channels).
//! 3D: rotation about the vertical axis, isotropic scale, mirror flip, and
//! clipped Gaussian jitter, all in world meters about the scene center.
//!
//! Every augmented element records the original element it came from, so
//! student and teacher outputs can be aligned pixel-for-pixel or
//! point-for-point.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::worldgen::SIGNAL_CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutout {
    pub size: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Augment2d {
    /// Crop window side as a fraction of the image side (1 = no crop).
    pub crop_fraction: f64,
    pub cutouts: Vec<Cutout>,
    /// Amplitude of uniform noise added to the signal channels.
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augment3d {
    /// Maximum absolute rotation about the vertical axis, radians.
    pub rotation: f64,
    pub rotation_probability: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip_probability: f64,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    None,
    Weak,
    Strong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub two_d: Augment2d,
    pub three_d: Augment3d,
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self {
            two_d: Augment2d { crop_fraction: 1.0, cutouts: Vec::new(), noise: 0.0 },
            three_d: Augment3d {
                rotation: 0.0,
                rotation_probability: 0.0,
                scale_min: 1.0,
                scale_max: 1.0,
                flip_probability: 0.0,
                jitter_sigma: 0.0,
                jitter_clip: 0.0,
            },
        }
    }

    /// Geometric augmentations shared by both networks.
    pub fn weak() -> Self {
        Self {
            two_d: Augment2d { crop_fraction: 1.0, cutouts: Vec::new(), noise: 0.1 },
            three_d: Augment3d {
                rotation: 1.0,
                rotation_probability: 0.5,
                scale_min: 0.9,
                scale_max: 1.1,
                flip_probability: 0.5,
                jitter_sigma: 0.0,
                jitter_clip: 0.0,
            },
        }
    }

    /// Weak tier plus student-only crop, cutout, noise and jitter.
    pub fn strong() -> Self {
        let weak = Self::weak();
        Self {
            two_d: Augment2d {
                crop_fraction: 0.85,
                cutouts: vec![Cutout { size: 7, probability: 1.0 }, Cutout { size: 7, probability: 0.5 }],
                noise: 0.5,
            },
            three_d: Augment3d { jitter_sigma: 0.005, jitter_clip: 0.02, ..weak.three_d },
        }
    }

    pub fn tier(tier: Tier) -> Self {
        match tier {
            Tier::None => Self::identity(),
            Tier::Weak => Self::weak(),
            Tier::Strong => Self::strong(),
        }
    }

    /// True when every augmentation magnitude of `self` is at least that of
    /// `other`.
    pub fn dominates(&self, other: &Self) -> bool {
        let (a, b) = (&self.two_d, &other.two_d);
        let cutouts_ok = a.cutouts.len() >= b.cutouts.len()
            && b.cutouts.iter().zip(&a.cutouts).all(|(w, s)| s.size >= w.size && s.probability >= w.probability);
        let (p, q) = (&self.three_d, &other.three_d);
        a.crop_fraction <= b.crop_fraction
            && cutouts_ok
            && a.noise >= b.noise
            && p.rotation >= q.rotation
            && p.rotation_probability >= q.rotation_probability
            && p.scale_min <= q.scale_min
            && p.scale_max >= q.scale_max
            && p.flip_probability >= q.flip_probability
            && p.jitter_sigma >= q.jitter_sigma
            && p.jitter_clip >= q.jitter_clip
    }
}

/// Augmented view: one row per pixel of the crop window.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented2d {
    /// `(window pixels, channels)`.
    pub rows: Array2<f64>,
    /// Original pixel index for every row.
    pub origin: Vec<usize>,
    /// Row was blanked by a cutout.
    pub excluded: Vec<bool>,
    /// Row index for every original pixel, `None` when cropped away or cut out.
    pub row_of: Vec<Option<usize>>,
}

impl Augmented2d {
    pub fn excluded_count(&self) -> usize {
        self.excluded.iter().filter(|&&e| e).count()
    }
}

pub fn augment_2d(features: &Array3<f64>, spec: &Augment2d, seed: u64) -> Augmented2d {
    let (h, w, f) = features.dim();
    let mut rng = stream(seed, "augment-2d", &[]);
    let frac = spec.crop_fraction.clamp(0.0, 1.0);
    let ch = ((h as f64 * frac).round() as usize).clamp(1, h);
    let cw = ((w as f64 * frac).round() as usize).clamp(1, w);
    let r0 = rng.random_range(0..=h - ch);
    let c0 = rng.random_range(0..=w - cw);
    let mut excluded = vec![false; ch * cw];
    for cut in &spec.cutouts {
        let draw: f64 = rng.random();
        let s = cut.size.min(ch).min(cw);
        let (cr, cc) = (rng.random_range(0..=ch - s), rng.random_range(0..=cw - s));
        if s == 0 || draw >= cut.probability {
            continue;
        }
        for r in cr..cr + s {
            for c in cc..cc + s {
                excluded[r * cw + c] = true;
            }
        }
    }
    let mut rows = Array2::zeros((ch * cw, f));
    let mut origin = Vec::with_capacity(ch * cw);
    let mut row_of = vec![None; h * w];
    for r in 0..ch {
        for c in 0..cw {
            let k = r * cw + c;
            let orig = (r0 + r) * w + (c0 + c);
            origin.push(orig);
            if excluded[k] {
                continue;
            }
            row_of[orig] = Some(k);
            for ch_i in 0..f {
                let mut x = features[[r0 + r, c0 + c, ch_i]];
                if ch_i < SIGNAL_CHANNELS && spec.noise > 0.0 {
                    x += rng.random_range(-spec.noise..=spec.noise);
                }
                rows[[k, ch_i]] = x;
            }
        }
    }
    Augmented2d { rows, origin, excluded, row_of }
}

/// Augmented point positions; point order is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented3d {
    pub positions: Vec<[f64; 3]>,
    pub origin: Vec<usize>,
}

pub fn augment_3d(positions: &[[f64; 3]], spec: &Augment3d, seed: u64) -> Augmented3d {
    let mut rng = stream(seed, "augment-3d", &[]);
    let rotate: f64 = rng.random();
    let angle = rng.random_range(-1.0..=1.0) * spec.rotation;
    let angle = if rotate < spec.rotation_probability { angle } else { 0.0 };
    let scale = if spec.scale_max > spec.scale_min { rng.random_range(spec.scale_min..=spec.scale_max) } else { spec.scale_min };
    let flip = rng.random::<f64>() < spec.flip_probability;
    let (s, c) = angle.sin_cos();
    let out = positions
        .iter()
        .map(|p| {
            let (mut x, y) = (c * p[0] - s * p[1], s * p[0] + c * p[1]);
            if flip {
                x = -x;
            }
            let mut q = [x * scale, y * scale, p[2] * scale];
            if spec.jitter_sigma > 0.0 {
                for v in q.iter_mut() {
                    let j: f64 = rng.sample::<f64, _>(StandardNormal) * spec.jitter_sigma;
                    *v += j.clamp(-spec.jitter_clip, spec.jitter_clip);
                }
            }
            q
        })
        .collect();
    Augmented3d { positions: out, origin: (0..positions.len()).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_features(h: usize, w: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Array3::from_shape_fn((h, w, 8), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_is_identity() {
        let f = random_features(6, 5);
        let a = augment_2d(&f, &AugmentationSpec::identity().two_d, 3);
        assert_eq!(a.origin, (0..30).collect::<Vec<_>>());
        assert_eq!(a.row_of, (0..30).map(Some).collect::<Vec<_>>());
        assert_eq!(a.rows, f.to_shape((30, 8)).unwrap().to_owned());
        let pts = vec![[1.0, 2.0, 3.0], [-0.5, 0.0, 0.25]];
        let b = augment_3d(&pts, &AugmentationSpec::identity().three_d, 3);
        assert_eq!(b.positions, pts);
    }

    #[test]
    fn cutout_excludes_square() {
        let f = random_features(20, 20);
        for seed in 0..10 {
            let spec = Augment2d { crop_fraction: 1.0, cutouts: vec![Cutout { size: 6, probability: 1.0 }], noise: 0.0 };
            let a = augment_2d(&f, &spec, seed);
            assert_eq!(a.excluded_count(), 36);
            assert_eq!(a.row_of.iter().filter(|r| r.is_none()).count(), 36);
        }
    }

    #[test]
    fn index_maps_compose_to_identity() {
        let f = random_features(16, 12);
        for seed in 0..20 {
            let a = augment_2d(&f, &AugmentationSpec::strong().two_d, seed);
            for (k, &o) in a.origin.iter().enumerate() {
                if !a.excluded[k] {
                    assert_eq!(a.row_of[o], Some(k));
                    assert_eq!(a.rows[[k, 7]], f[[o / 12, o % 12, 7]]);
                }
            }
            for (o, r) in a.row_of.iter().enumerate() {
                if let Some(k) = r {
                    assert_eq!(a.origin[*k], o);
                }
            }
        }
    }

    #[test]
    fn jitter_is_clipped() {
        let pts: Vec<[f64; 3]> = (0..5000).map(|i| [i as f64 * 1e-3, 1.0, -2.0]).collect();
        let spec = Augment3d { jitter_sigma: 0.005, jitter_clip: 0.02, ..AugmentationSpec::identity().three_d };
        for seed in 0..5 {
            let a = augment_3d(&pts, &spec, seed);
            for (p, q) in pts.iter().zip(&a.positions) {
                for k in 0..3 {
                    assert!((p[k] - q[k]).abs() <= 0.02 + 1e-12);
                }
            }
        }
        // heavy jitter actually hits the clip
        let wild = Augment3d { jitter_sigma: 1.0, jitter_clip: 0.02, ..spec };
        let a = augment_3d(&pts, &wild, 1);
        let d: Vec<f64> = pts.iter().zip(&a.positions).flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs())).collect();
        assert!(d.iter().all(|&x| x <= 0.02 + 1e-12));
        assert!(d.iter().filter(|&&x| x > 0.02 - 1e-9).count() > 1000);
    }

    #[test]
    fn rotation_preserves_height_and_radius() {
        let pts = vec![[1.0, 2.0, 0.7], [-3.0, 0.5, 1.2]];
        let spec = Augment3d { rotation: 1.0, rotation_probability: 1.0, flip_probability: 1.0, ..AugmentationSpec::identity().three_d };
        let a = augment_3d(&pts, &spec, 4);
        for (p, q) in pts.iter().zip(&a.positions) {
            assert_eq!(p[2], q[2]);
            assert!(((p[0].hypot(p[1])) - q[0].hypot(q[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let f = random_features(10, 10);
        let s = AugmentationSpec::strong();
        assert_eq!(augment_2d(&f, &s.two_d, 8), augment_2d(&f, &s.two_d, 8));
        assert_ne!(augment_2d(&f, &s.two_d, 8).rows, augment_2d(&f, &s.two_d, 9).rows);
    }

    #[test]
    fn strong_dominates_weak_dominates_identity() {
        let (i, w, s) = (AugmentationSpec::identity(), AugmentationSpec::weak(), AugmentationSpec::strong());
        assert!(s.dominates(&w));
        assert!(w.dominates(&i));
        assert!(s.dominates(&i));
        assert!(!w.dominates(&s));
        assert!(!i.dominates(&w));
    }
}
