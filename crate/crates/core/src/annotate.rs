//! Sparse 2D annotations and their transfer onto reconstructed points.
//!
//! All generators read the ground-truth raster, so every labeled pixel carries
//! its true class. The unlabeled sentinel is `class_count`, the same id the
//! renderer uses for void pixels.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::worldgen::{CameraView, ScenePointCloud};
use crate::{ClassId, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotationKind {
    Points,
    Scribbles { length_scale: f64, thickness: usize },
    Coarse { erosion_radius: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseLabelMap {
    pub labels: Array2<ClassId>,
    pub kind: AnnotationKind,
    pub unlabeled: ClassId,
}

impl SparseLabelMap {
    pub fn empty(height: usize, width: usize, kind: AnnotationKind, unlabeled: ClassId) -> Self {
        Self { labels: Array2::from_elem((height, width), unlabeled), kind, unlabeled }
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != self.unlabeled).count()
    }

    /// Labeled pixels divided by image area.
    pub fn coverage(&self) -> f64 {
        self.labeled_count() as f64 / self.labels.len() as f64
    }

    pub fn is_labeled(&self, row: usize, col: usize) -> bool {
        self.labels[[row, col]] != self.unlabeled
    }
}

/// One uniformly chosen pixel per non-void class present in the view.
pub fn gen_point_labels(view: &CameraView, class_count: usize, seed: u64) -> Result<SparseLabelMap> {
    let void = class_count as ClassId;
    let (h, w) = view.gt_labels.dim();
    let mut pixels: Vec<Vec<(usize, usize)>> = vec![Vec::new(); class_count];
    for ((r, c), &l) in view.gt_labels.indexed_iter() {
        if l < void {
            pixels[l as usize].push((r, c));
        }
    }
    if pixels.iter().all(Vec::is_empty) {
        return Err(Error::Domain(format!("view {} has no labeled-class pixels", view.view_id)));
    }
    let mut map = SparseLabelMap::empty(h, w, AnnotationKind::Points, void);
    for (class, region) in pixels.iter().enumerate() {
        if region.is_empty() {
            continue;
        }
        let mut rng = stream(seed, "point-label", &[view.view_id as u64, class as u64]);
        let (r, c) = region[rng.random_range(0..region.len())];
        map.labels[[r, c]] = class as ClassId;
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScribbleParams {
    /// Stroke length as a fraction of the region diameter, in (0, 1].
    pub length_scale: f64,
    pub thickness: usize,
    /// Regions smaller than this many pixels receive no stroke.
    pub min_area: usize,
}

impl Default for ScribbleParams {
    fn default() -> Self {
        Self { length_scale: 0.5, thickness: 1, min_area: 16 }
    }
}

const NEIGHBORS8: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)];

/// 4-connected components of non-void pixels, in row-major discovery order.
pub fn class_regions(labels: &Array2<ClassId>, void: ClassId) -> Vec<(ClassId, Vec<(usize, usize)>)> {
    let (h, w) = labels.dim();
    let mut seen = Array2::from_elem((h, w), false);
    let mut regions = Vec::new();
    for r0 in 0..h {
        for c0 in 0..w {
            let class = labels[[r0, c0]];
            if class == void || seen[[r0, c0]] {
                continue;
            }
            let mut stack = vec![(r0, c0)];
            seen[[r0, c0]] = true;
            let mut pixels = Vec::new();
            while let Some((r, c)) = stack.pop() {
                pixels.push((r, c));
                for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let (nr, nc) = (nr as usize, nc as usize);
                    if !seen[[nr, nc]] && labels[[nr, nc]] == class {
                        seen[[nr, nc]] = true;
                        stack.push((nr, nc));
                    }
                }
            }
            pixels.sort_unstable();
            regions.push((class, pixels));
        }
    }
    regions
}

/// Random-walk scribbles, one per sufficiently large region.
///
/// The walk for a region depends only on the seed and the region index, and a
/// longer `length_scale` only extends it, so coverage never shrinks as the
/// length grows.
pub fn gen_scribble_labels(view: &CameraView, class_count: usize, params: &ScribbleParams, seed: u64) -> Result<SparseLabelMap> {
    if !(params.length_scale > 0.0 && params.length_scale <= 1.0) {
        return Err(Error::Config(format!("length_scale {} outside (0, 1]", params.length_scale)));
    }
    if params.thickness == 0 {
        return Err(Error::Config("scribble thickness must be >= 1".into()));
    }
    let void = class_count as ClassId;
    let (h, w) = view.gt_labels.dim();
    let kind = AnnotationKind::Scribbles { length_scale: params.length_scale, thickness: params.thickness };
    let mut map = SparseLabelMap::empty(h, w, kind, void);
    let erosion = (params.thickness / 2).max(1) as isize;
    let brush = ((params.thickness - 1) / 2) as isize;
    let mut region_id = Array2::from_elem((h, w), usize::MAX);
    let regions = class_regions(&view.gt_labels, void);
    for (idx, (_, px)) in regions.iter().enumerate() {
        for &(r, c) in px {
            region_id[[r, c]] = idx;
        }
    }
    let inside = |r: isize, c: isize, idx: usize| r >= 0 && c >= 0 && r < h as isize && c < w as isize && region_id[[r as usize, c as usize]] == idx;

    for (idx, (class, pixels)) in regions.iter().enumerate() {
        if pixels.len() < params.min_area {
            continue;
        }
        let interior: Vec<(usize, usize)> = pixels
            .iter()
            .copied()
            .filter(|&(r, c)| {
                (-erosion..=erosion).all(|dr| (-erosion..=erosion).all(|dc| inside(r as isize + dr, c as isize + dc, idx)))
            })
            .collect();
        if interior.is_empty() {
            continue;
        }
        let in_interior = |r: isize, c: isize| {
            inside(r, c, idx) && (-erosion..=erosion).all(|dr| (-erosion..=erosion).all(|dc| inside(r + dr, c + dc, idx)))
        };
        let (rmin, rmax) = pixels.iter().fold((usize::MAX, 0), |(a, b), &(r, _)| (a.min(r), b.max(r)));
        let (cmin, cmax) = pixels.iter().fold((usize::MAX, 0), |(a, b), &(_, c)| (a.min(c), b.max(c)));
        let diameter = (((rmax - rmin + 1) as f64).powi(2) + ((cmax - cmin + 1) as f64).powi(2)).sqrt();
        let steps = (params.length_scale * diameter).round().max(1.0) as usize;

        let mut rng = stream(seed, "scribble", &[view.view_id as u64, idx as u64]);
        let (mut r, mut c) = interior[rng.random_range(0..interior.len())];
        let mut dir = rng.random_range(0..8usize);
        let mut path = vec![(r, c)];
        for _ in 1..steps {
            let momentum: f64 = rng.random();
            let turn = rng.random_range(0..8usize);
            let valid: Vec<usize> = (0..8)
                .filter(|&d| in_interior(r as isize + NEIGHBORS8[d].0, c as isize + NEIGHBORS8[d].1))
                .collect();
            if valid.is_empty() {
                break;
            }
            if momentum >= 0.75 || !valid.contains(&dir) {
                // gentle turns are preferred over reversals
                let preferred: Vec<usize> = valid.iter().copied().filter(|&d| (d + 8 - dir) % 8 <= 1 || (dir + 8 - d) % 8 <= 1).collect();
                let pool = if preferred.is_empty() { &valid } else { &preferred };
                dir = pool[turn % pool.len()];
            }
            r = (r as isize + NEIGHBORS8[dir].0) as usize;
            c = (c as isize + NEIGHBORS8[dir].1) as usize;
            path.push((r, c));
        }
        for &(pr, pc) in &path {
            for dr in -brush..=brush {
                for dc in -brush..=brush {
                    let (qr, qc) = (pr as isize + dr, pc as isize + dc);
                    if inside(qr, qc, idx) {
                        map.labels[[qr as usize, qc as usize]] = *class;
                    }
                }
            }
        }
    }
    Ok(map)
}

/// Squared Euclidean distance transform in one dimension (lower envelope of
/// parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let mut first = None;
    for (q, &fq) in f.iter().enumerate() {
        if fq.is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(q0) = first else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = q0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in q0 + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared distance from every pixel to the nearest `true` pixel of `seeds`.
fn squared_distance_to(seeds: &Array2<bool>) -> Array2<f64> {
    let (h, w) = seeds.dim();
    let mut tmp = Array2::from_elem((h, w), f64::INFINITY);
    let mut col_in = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            col_in[r] = if seeds[[r, c]] { 0.0 } else { f64::INFINITY };
        }
        edt_1d(&col_in, &mut col_out);
        for r in 0..h {
            tmp[[r, c]] = col_out[r];
        }
    }
    let mut out = Array2::zeros((h, w));
    let mut row_out = vec![0.0; w];
    for r in 0..h {
        let row: Vec<f64> = tmp.row(r).to_vec();
        edt_1d(&row, &mut row_out);
        for c in 0..w {
            out[[r, c]] = row_out[c];
        }
    }
    out
}

/// Each class region eroded by a disk of `erosion_radius`; the boundary band
/// becomes unlabeled. Pixels outside the image do not erode.
pub fn gen_coarse_labels(view: &CameraView, class_count: usize, erosion_radius: usize) -> Result<SparseLabelMap> {
    if erosion_radius == 0 {
        return Err(Error::Config("erosion_radius must be >= 1".into()));
    }
    let void = class_count as ClassId;
    let (h, w) = view.gt_labels.dim();
    let mut map = SparseLabelMap::empty(h, w, AnnotationKind::Coarse { erosion_radius }, void);
    let r2 = (erosion_radius * erosion_radius) as f64;
    for class in view.present_classes(void) {
        let foreign = view.gt_labels.mapv(|l| l != class);
        let dist = squared_distance_to(&foreign);
        for ((r, c), &l) in view.gt_labels.indexed_iter() {
            if l == class && dist[[r, c]] > r2 {
                map.labels[[r, c]] = class;
            }
        }
    }
    Ok(map)
}

/// Copies each point's source-pixel label onto the point.
///
/// `maps[v]` must be the label map of view `v` for every source view in the
/// cloud. Positions, confidences and point count are untouched.
pub fn transfer_labels_to_3d(cloud: &ScenePointCloud, maps: &[SparseLabelMap]) -> Result<ScenePointCloud> {
    let unlabeled = cloud.unlabeled_id();
    let mut labels = Vec::with_capacity(cloud.len());
    for s in &cloud.source {
        let map = maps.get(s.view_id).ok_or_else(|| Error::Config(format!("no label map for view {}", s.view_id)))?;
        if map.unlabeled != unlabeled {
            return Err(Error::Config("label map sentinel differs from cloud sentinel".into()));
        }
        let l = *map
            .labels
            .get([s.row, s.col])
            .ok_or_else(|| Error::Config(format!("label map for view {} smaller than its source pixels", s.view_id)))?;
        labels.push(l);
    }
    cloud.with_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, CameraPose};
    use ndarray::Array3;

    pub(crate) fn view_from_labels(labels: Array2<ClassId>) -> CameraView {
        let (h, w) = labels.dim();
        CameraView {
            view_id: 0,
            intrinsics: CameraIntrinsics::centered(10.0, w, h).unwrap(),
            pose: CameraPose::identity(),
            features: Array3::zeros((h, w, crate::worldgen::FEATURE_CHANNELS)),
            gt_depth: labels.mapv(|_| 1.0),
            gt_labels: labels,
        }
    }

    #[test]
    fn points_one_per_present_class() {
        let mut l = Array2::from_elem((8, 8), 5u16);
        l.slice_mut(ndarray::s![0..4, ..]).fill(0);
        l.slice_mut(ndarray::s![5..8, 2..6]).fill(3);
        let map = gen_point_labels(&view_from_labels(l.clone()), 5, 1).unwrap();
        assert_eq!(map.labeled_count(), 2);
        let mut classes: Vec<_> = map.labels.iter().copied().filter(|&x| x != 5).collect();
        classes.sort();
        assert_eq!(classes, vec![0, 3]);
        for ((r, c), &x) in map.labels.indexed_iter() {
            if x != 5 {
                assert_eq!(x, l[[r, c]]);
            }
        }
    }

    #[test]
    fn points_single_class_and_all_void() {
        let map = gen_point_labels(&view_from_labels(Array2::from_elem((4, 4), 1u16)), 3, 0).unwrap();
        assert_eq!(map.labeled_count(), 1);
        let err = gen_point_labels(&view_from_labels(Array2::from_elem((4, 4), 3u16)), 3, 0);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn coarse_erosion_arithmetic() {
        let mut l = Array2::from_elem((20, 20), 0u16);
        l.slice_mut(ndarray::s![5..15, 5..15]).fill(1);
        let map = gen_coarse_labels(&view_from_labels(l), 2, 1).unwrap();
        let inner = map.labels.indexed_iter().filter(|(_, &x)| x == 1).count();
        assert_eq!(inner, 64);
        assert!(map.labels.indexed_iter().filter(|(_, &x)| x == 1).all(|((r, c), _)| (6..14).contains(&r) && (6..14).contains(&c)));
    }

    #[test]
    fn coarse_large_radius_clears_everything() {
        let mut l = Array2::from_elem((12, 12), 0u16);
        l.slice_mut(ndarray::s![.., 6..]).fill(1);
        let map = gen_coarse_labels(&view_from_labels(l), 2, 13).unwrap();
        assert_eq!(map.labeled_count(), 0);
        assert!(gen_coarse_labels(&view_from_labels(Array2::from_elem((4, 4), 0u16)), 2, 0).is_err());
    }

    #[test]
    fn scribble_thin_stroke_is_connected_and_confined() {
        let mut l = Array2::from_elem((30, 30), 2u16);
        l.slice_mut(ndarray::s![4..26, 5..25]).fill(1);
        let view = view_from_labels(l.clone());
        for seed in 0..20 {
            let params = ScribbleParams { length_scale: 0.8, thickness: 1, min_area: 16 };
            let map = gen_scribble_labels(&view, 2, &params, seed).unwrap();
            let px: Vec<(usize, usize)> = map.labels.indexed_iter().filter(|(_, &x)| x == 1).map(|(p, _)| p).collect();
            assert!(!px.is_empty());
            assert!(px.iter().all(|&(r, c)| l[[r, c]] == 1));
            // 8-connectivity by flood fill
            let mut seen = vec![px[0]];
            let mut stack = vec![px[0]];
            while let Some((r, c)) = stack.pop() {
                for &q in &px {
                    if !seen.contains(&q) && (q.0 as isize - r as isize).abs() <= 1 && (q.1 as isize - c as isize).abs() <= 1 {
                        seen.push(q);
                        stack.push(q);
                    }
                }
            }
            assert_eq!(seen.len(), px.len());
        }
    }

    #[test]
    fn scribble_rejects_bad_length() {
        let view = view_from_labels(Array2::from_elem((8, 8), 0u16));
        for ls in [0.0, 1.5, -0.1] {
            let p = ScribbleParams { length_scale: ls, ..ScribbleParams::default() };
            assert!(gen_scribble_labels(&view, 2, &p, 0).is_err());
        }
    }

    #[test]
    fn edt_matches_brute_force() {
        let mut seeds = Array2::from_elem((9, 13), false);
        seeds[[2, 3]] = true;
        seeds[[7, 11]] = true;
        seeds[[4, 0]] = true;
        let d = squared_distance_to(&seeds);
        for ((r, c), &v) in d.indexed_iter() {
            let best = seeds
                .indexed_iter()
                .filter(|(_, &s)| s)
                .map(|((sr, sc), _)| (r as f64 - sr as f64).powi(2) + (c as f64 - sc as f64).powi(2))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(v, best);
        }
    }
}
