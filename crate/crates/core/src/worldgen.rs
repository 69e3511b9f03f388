//! Procedural scenes, ray-cast views and a simulated reconstructor.
//!
//! The world is z-up. Class 0 is the ground plane; when walls are enabled the
//! last class is a perimeter wall; the classes in between are boxes whose
//! height band grows with the class id. The void id equals `class_count` and
//! marks pixels where no primitive was hit (their depth is stored as 0).
//!
//! The reconstruction confidence produced here, `exp(-|e| / (sigma * depth))`,
//! is a stand-in for the opaque confidence of a learned reconstructor: it is
//! correlated with the true depth error by construction.

use nalgebra::Vector3;
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{pixel_ray, unproject, CameraIntrinsics, CameraPose, PixelCoord};
use crate::rng::stream;
use crate::{ClassId, Error, Result};

/// Number of feature channels per pixel / point.
pub const FEATURE_CHANNELS: usize = 8;
/// Channels carrying the class-conditional signal; the last two are `(u, v)` cues.
pub const SIGNAL_CHANNELS: usize = 6;

const RAY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned solid box.
    Box { min: [f64; 3], max: [f64; 3] },
    /// Axis-aligned two-sided plane `x[axis] = offset`, optionally bounded to
    /// `|x[other]| <= extent` on the remaining axes.
    Plane { axis: usize, offset: f64, extent: Option<f64> },
}

impl Shape {
    /// Distance along a unit ray to the first hit with `t > RAY_EPS`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Shape::Box { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for a in 0..3 {
                    if dir[a].abs() < 1e-15 {
                        if origin[a] < min[a] || origin[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / dir[a];
                    let (mut ta, mut tb) = ((min[a] - origin[a]) * inv, (max[a] - origin[a]) * inv);
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    t0 = t0.max(ta);
                    t1 = t1.min(tb);
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > RAY_EPS {
                    Some(t0)
                } else if t1 > RAY_EPS {
                    Some(t1)
                } else {
                    None
                }
            }
            Shape::Plane { axis, offset, extent } => {
                if dir[axis].abs() < 1e-15 {
                    return None;
                }
                let t = (offset - origin[axis]) / dir[axis];
                if t <= RAY_EPS {
                    return None;
                }
                if let Some(e) = extent {
                    let p = origin + dir * t;
                    if (0..3).any(|a| a != axis && p[a].abs() > e) {
                        return None;
                    }
                }
                Some(t)
            }
        }
    }

    /// Euclidean distance from `p` to the surface of the shape.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Shape::Box { min, max } => {
                let mut outside = 0.0;
                let mut inside = f64::INFINITY;
                for a in 0..3 {
                    let d = (min[a] - p[a]).max(p[a] - max[a]);
                    if d > 0.0 {
                        outside += d * d;
                    }
                    inside = inside.min((p[a] - min[a]).min(max[a] - p[a]));
                }
                if outside > 0.0 {
                    outside.sqrt()
                } else {
                    inside.max(0.0)
                }
            }
            Shape::Plane { axis, offset, extent } => {
                let normal = p[axis] - offset;
                let lateral = match extent {
                    None => 0.0,
                    Some(e) => (0..3)
                        .filter(|&a| a != axis)
                        .map(|a| (p[a].abs() - e).max(0.0).powi(2))
                        .sum::<f64>(),
                };
                (normal * normal + lateral).sqrt()
            }
        }
    }

    /// True when `p` is strictly inside a solid.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match *self {
            Shape::Box { min, max } => (0..3).all(|a| p[a] > min[a] && p[a] < max[a]),
            Shape::Plane { .. } => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub class_id: ClassId,
}

/// Per-pixel appearance model shared by every view of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    /// Norm of the class-mean vectors; larger is easier.
    pub separation: f64,
    /// Standard deviation of the isotropic per-pixel noise.
    pub noise: f64,
    /// Distance over which the class signal fades toward the sky appearance
    /// (`exp(-depth / haze)`).
    pub haze_distance: f64,
    /// Scale of the normalized `(u, v)` cue channels.
    pub cue_scale: f64,
    /// Norm scale of a per-primitive offset added to its class mean, so
    /// objects of one class differ in appearance.
    pub instance_spread: f64,
}

impl Default for Appearance {
    fn default() -> Self {
        Self { separation: 1.6, noise: 0.6, haze_distance: 8.0, cue_scale: 1.0, instance_spread: 1.0 }
    }
}

impl Appearance {
    /// Appearance where a scalar `difficulty` rescales class separation.
    pub fn with_difficulty(difficulty: f64) -> Self {
        Self { separation: 1.6 / difficulty.max(1e-6), ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub class_count: usize,
    pub boxes_per_class: usize,
    pub ground: bool,
    pub walls: bool,
    pub scene_scale: f64,
    /// Boxes are placed with their centers inside this radius.
    pub object_radius: f64,
    /// Range of box half-widths as fractions of the scene scale.
    pub box_half_width: [f64; 2],
    pub appearance: Appearance,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            class_count: 5,
            boxes_per_class: 2,
            ground: true,
            walls: true,
            scene_scale: 5.0,
            object_radius: 2.4,
            box_half_width: [0.05, 0.1],
            appearance: Appearance::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Config("class_count must be >= 2".into()));
        }
        if self.class_count >= ClassId::MAX as usize {
            return Err(Error::Config("class_count too large".into()));
        }
        if !(self.scene_scale > 0.0) || !(self.object_radius > 0.0) {
            return Err(Error::Config("scene_scale and object_radius must be positive".into()));
        }
        let [lo, hi] = self.box_half_width;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::Config(format!("box_half_width must satisfy 0 < min < max, got [{lo}, {hi}]")));
        }
        if self.walls && self.class_count < 3 {
            return Err(Error::Config("walls need class_count >= 3".into()));
        }
        let prims = usize::from(self.ground) + usize::from(self.walls) * 4 + self.box_classes().len() * self.boxes_per_class;
        if prims == 0 {
            return Err(Error::Config("scene needs at least one primitive".into()));
        }
        Ok(())
    }

    /// Class ids rendered as boxes.
    pub fn box_classes(&self) -> Vec<ClassId> {
        let first = usize::from(self.ground);
        let end = self.class_count - usize::from(self.walls);
        (first..end).map(|c| c as ClassId).collect()
    }

    pub fn wall_class(&self) -> Option<ClassId> {
        self.walls.then(|| (self.class_count - 1) as ClassId)
    }

    /// Half side of the walled area; walls sit just inside the scene scale.
    pub fn wall_half_extent(&self) -> f64 {
        0.9 * self.scene_scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub class_count: usize,
    pub scene_scale: f64,
    pub seed: u64,
    pub appearance: Appearance,
}

impl SyntheticScene {
    pub fn new(primitives: Vec<Primitive>, class_count: usize, scene_scale: f64, seed: u64, appearance: Appearance) -> Result<Self> {
        if primitives.is_empty() {
            return Err(Error::Config("scene needs at least one primitive".into()));
        }
        if !(scene_scale > 0.0) {
            return Err(Error::Config("scene_scale must be positive".into()));
        }
        if let Some(p) = primitives.iter().find(|p| p.class_id as usize >= class_count) {
            return Err(Error::Config(format!("primitive class {} out of range", p.class_id)));
        }
        Ok(Self { primitives, class_count, scene_scale, seed, appearance })
    }

    pub fn void_id(&self) -> ClassId {
        self.class_count as ClassId
    }

    /// Nearest primitive hit along a unit ray: `(distance, class)`.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, ClassId)> {
        self.cast_primitive(origin, dir).map(|(t, i)| (t, self.primitives[i].class_id))
    }

    /// Nearest primitive hit along a unit ray: `(distance, primitive index)`.
    pub fn cast_primitive(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some(t) = p.shape.intersect(origin, dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    /// Class of the primitive whose surface is closest to `p`; ties go to the
    /// earlier primitive.
    pub fn nearest_class(&self, p: &Vector3<f64>) -> ClassId {
        let mut best = (f64::INFINITY, self.void_id());
        for prim in &self.primitives {
            let d = prim.shape.surface_distance(p);
            if d < best.0 {
                best = (d, prim.class_id);
            }
        }
        best.1
    }

    pub fn inside_solid(&self, p: &Vector3<f64>) -> bool {
        self.primitives.iter().any(|prim| prim.shape.contains(p))
    }

    /// Class-mean vectors for classes `0..=class_count` (the last is void).
    pub fn class_means(&self) -> Vec<[f64; SIGNAL_CHANNELS]> {
        class_means(self.class_count, self.appearance.separation)
    }

    /// Appearance offset of each primitive, with expected norm
    /// `instance_spread`.
    pub fn instance_tints(&self) -> Vec<[f64; SIGNAL_CHANNELS]> {
        let scale = self.appearance.instance_spread / (SIGNAL_CHANNELS as f64).sqrt();
        (0..self.primitives.len())
            .map(|i| {
                let mut rng = stream(self.seed, "tint", &[i as u64]);
                [(); SIGNAL_CHANNELS].map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            })
            .collect()
    }
}

/// Fixed class-mean directions. They depend only on the class count so every
/// scene of a benchmark shares one appearance per class.
pub fn class_means(class_count: usize, separation: f64) -> Vec<[f64; SIGNAL_CHANNELS]> {
    let mut rng = stream(0x00C1_A55E, "class-means", &[class_count as u64]);
    (0..=class_count)
        .map(|_| {
            let mut v = [0.0; SIGNAL_CHANNELS];
            for x in v.iter_mut() {
                *x = rng.sample::<f64, _>(StandardNormal);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.map(|x| x / n * separation)
        })
        .collect()
}

/// Builds a scene: ground plane, optional perimeter walls, and boxes whose
/// height band is set by their class.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<SyntheticScene> {
    config.validate()?;
    let mut rng = stream(seed, "scene", &[]);
    let mut primitives = Vec::new();
    if config.ground {
        let extent = config.scene_scale;
        primitives.push(Primitive { shape: Shape::Plane { axis: 2, offset: 0.0, extent: Some(extent) }, class_id: 0 });
    }
    if let Some(wall) = config.wall_class() {
        let l = config.wall_half_extent();
        let thick = 0.05;
        let h = 0.5 * config.scene_scale;
        let walls = [
            ([-l - thick, -l, 0.0], [-l, l, h]),
            ([l, -l, 0.0], [l + thick, l, h]),
            ([-l, -l - thick, 0.0], [l, -l, h]),
            ([-l, l, 0.0], [l, l + thick, h]),
        ];
        for (min, max) in walls {
            primitives.push(Primitive { shape: Shape::Box { min, max }, class_id: wall });
        }
    }
    let box_classes = config.box_classes();
    let n_box = box_classes.len().max(1) as f64;
    let mut footprints: Vec<(f64, f64, f64)> = Vec::new();
    for (rank, &class) in box_classes.iter().enumerate() {
        for _ in 0..config.boxes_per_class {
            // height band for this class
            let band = (rank as f64 + 1.0) / n_box;
            let height = config.scene_scale * (0.08 + 0.28 * band) * rng.random_range(0.85..1.15);
            let half = config.scene_scale * rng.random_range(config.box_half_width[0]..config.box_half_width[1]);
            let mut placed = None;
            for _ in 0..200 {
                let r = config.object_radius * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let (x, y) = (r * a.cos(), r * a.sin());
                let clear = footprints.iter().all(|&(fx, fy, fh)| {
                    let gap = 0.02 * config.scene_scale;
                    (x - fx).abs() > half + fh + gap || (y - fy).abs() > half + fh + gap
                });
                if clear {
                    placed = Some((x, y));
                    break;
                }
            }
            let (x, y) = placed.ok_or_else(|| Error::Config("could not place all boxes; lower boxes_per_class".into()))?;
            footprints.push((x, y, half));
            primitives.push(Primitive {
                shape: Shape::Box { min: [x - half, y - half, 0.0], max: [x + half, y + half, height] },
                class_id: class,
            });
        }
    }
    SyntheticScene::new(primitives, config.class_count, config.scene_scale, seed, config.appearance)
}

/// One rendered camera view.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub view_id: usize,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    /// `(height, width, FEATURE_CHANNELS)`.
    pub features: Array3<f64>,
    pub gt_labels: Array2<ClassId>,
    /// Camera-space depth; 0 where nothing was hit.
    pub gt_depth: Array2<f64>,
}

impl CameraView {
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn pixel_count(&self) -> usize {
        self.intrinsics.pixel_count()
    }

    /// Class ids (excluding `void`) present in the view, ascending.
    pub fn present_classes(&self, void: ClassId) -> Vec<ClassId> {
        let mut seen = vec![false; void as usize];
        for &l in self.gt_labels.iter() {
            if l < void {
                seen[l as usize] = true;
            }
        }
        (0..void).filter(|&c| seen[c as usize]).collect()
    }

    /// Features flattened to `(pixels, channels)` in row-major pixel order.
    pub fn feature_rows(&self) -> Array2<f64> {
        let (h, w, f) = self.features.dim();
        self.features.to_shape((h * w, f)).expect("contiguous features").to_owned()
    }
}

/// Ray casts every pixel. Feature noise comes from a stream keyed by the scene
/// seed and `view_id`, so a view renders identically in any order.
pub fn render_view(scene: &SyntheticScene, k: &CameraIntrinsics, pose: &CameraPose, view_id: usize) -> CameraView {
    let (h, w) = (k.height, k.width);
    let void = scene.void_id();
    let mut labels = Array2::from_elem((h, w), void);
    let mut depth = Array2::zeros((h, w));
    let mut hit_prim = Array2::from_elem((h, w), usize::MAX);
    let origin = pose.center();
    for row in 0..h {
        for col in 0..w {
            let dir = pixel_ray(col as f64, row as f64, pose, k);
            if let Some((t, prim)) = scene.cast_primitive(&origin, &dir) {
                let hit = origin + dir * t;
                labels[[row, col]] = scene.primitives[prim].class_id;
                depth[[row, col]] = pose.to_camera(&hit).z;
                hit_prim[[row, col]] = prim;
            }
        }
    }
    let features = synthesize_features(scene, &labels, &depth, &hit_prim, view_id);
    CameraView { view_id, intrinsics: *k, pose: *pose, features, gt_labels: labels, gt_depth: depth }
}

fn synthesize_features(scene: &SyntheticScene, labels: &Array2<ClassId>, depth: &Array2<f64>, prims: &Array2<usize>, view_id: usize) -> Array3<f64> {
    let (h, w) = labels.dim();
    let app = scene.appearance;
    let means = scene.class_means();
    // distant surfaces blend toward the sky (void) appearance
    let void = scene.void_id() as usize;
    let tints = scene.instance_tints();
    let mut rng = stream(scene.seed, "features", &[view_id as u64]);
    let mut out = Array3::zeros((h, w, FEATURE_CHANNELS));
    for row in 0..h {
        for col in 0..w {
            let class = labels[[row, col]] as usize;
            let d = depth[[row, col]];
            let fade = if d > 0.0 { (-d / app.haze_distance).exp() } else { 1.0 };
            let tint = tints.get(prims[[row, col]]);
            for c in 0..SIGNAL_CHANNELS {
                let noise: f64 = rng.sample(StandardNormal);
                let surface = means[class][c] + tint.map_or(0.0, |t| t[c]);
                out[[row, col, c]] = surface * fade + means[void][c] * (1.0 - fade) + app.noise * noise;
            }
            out[[row, col, SIGNAL_CHANNELS]] = app.cue_scale * (2.0 * col as f64 / w as f64 - 1.0);
            out[[row, col, SIGNAL_CHANNELS + 1]] = app.cue_scale * (2.0 * row as f64 / h as f64 - 1.0);
        }
    }
    out
}

/// Orbiting camera rig around the scene center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Orbit radius as a fraction of the scene scale.
    pub orbit: f64,
    /// Camera height as a fraction of the scene scale.
    pub elevation: f64,
    /// Azimuth jitter in radians.
    pub jitter: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self { views: 12, width: 48, height: 48, focal: 40.0, orbit: 0.72, elevation: 0.3, jitter: 0.15 }
    }
}

pub fn rig_poses(scene: &SyntheticScene, rig: &CameraRig) -> Result<Vec<CameraPose>> {
    let s = scene.scene_scale;
    (0..rig.views)
        .map(|i| {
            let mut rng = stream(scene.seed, "rig", &[i as u64]);
            let az = std::f64::consts::TAU * i as f64 / rig.views as f64 + rig.jitter * rng.random_range(-1.0..1.0);
            let eye = Vector3::new(rig.orbit * s * az.cos(), rig.orbit * s * az.sin(), rig.elevation * s);
            let target = Vector3::new(0.0, 0.0, 0.06 * s);
            if scene.inside_solid(&eye) {
                return Err(Error::Config("camera placed inside a solid".into()));
            }
            CameraPose::look_at(eye, target, Vector3::z())
        })
        .collect()
}

pub fn render_rig(scene: &SyntheticScene, rig: &CameraRig) -> Result<Vec<CameraView>> {
    let k = CameraIntrinsics::centered(rig.focal, rig.width, rig.height)?;
    Ok(rig_poses(scene, rig)?
        .iter()
        .enumerate()
        .map(|(i, pose)| render_view(scene, &k, pose, i))
        .collect())
}

/// Point density of the simulated reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    /// One point per valid pixel.
    #[default]
    Full,
    /// Every `stride`-th row and column, mimicking a sparse LiDAR scan.
    SingleScan { stride: usize },
}

impl Density {
    pub const DEFAULT_SCAN_STRIDE: usize = 4;

    pub fn single_scan() -> Self {
        Density::SingleScan { stride: Self::DEFAULT_SCAN_STRIDE }
    }

    fn keeps(&self, row: usize, col: usize) -> bool {
        match *self {
            Density::Full => true,
            Density::SingleScan { stride } => row.is_multiple_of(stride) && col.is_multiple_of(stride),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointSource {
    pub view_id: usize,
    pub row: usize,
    pub col: usize,
}

/// Reconstructed points with per-point confidence and pixel provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePointCloud {
    pub positions: Vec<[f64; 3]>,
    pub rec_confidence: Vec<f64>,
    pub source: Vec<PointSource>,
    /// `(points, FEATURE_CHANNELS)`.
    pub features: Array2<f64>,
    /// Class id per point, `class_count` when unlabeled.
    pub sparse_labels: Vec<ClassId>,
    pub class_count: usize,
    by_view: Vec<Vec<usize>>,
}

impl ScenePointCloud {
    pub fn new(
        positions: Vec<[f64; 3]>,
        rec_confidence: Vec<f64>,
        source: Vec<PointSource>,
        features: Array2<f64>,
        sparse_labels: Vec<ClassId>,
        class_count: usize,
    ) -> Result<Self> {
        let n = positions.len();
        if rec_confidence.len() != n || source.len() != n || features.nrows() != n || sparse_labels.len() != n {
            return Err(Error::Contract("point cloud arrays differ in length".into()));
        }
        if let Some(c) = rec_confidence.iter().find(|c| !(**c > 0.0 && **c <= 1.0)) {
            return Err(Error::Contract(format!("reconstruction confidence {c} outside (0, 1]")));
        }
        let views = source.iter().map(|s| s.view_id + 1).max().unwrap_or(0);
        let mut by_view = vec![Vec::new(); views];
        for (i, s) in source.iter().enumerate() {
            by_view[s.view_id].push(i);
        }
        Ok(Self { positions, rec_confidence, source, features, sparse_labels, class_count, by_view })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn unlabeled_id(&self) -> ClassId {
        self.class_count as ClassId
    }

    pub fn position(&self, i: usize) -> Option<Vector3<f64>> {
        self.positions.get(i).map(|p| Vector3::new(p[0], p[1], p[2]))
    }

    /// Indices of points reconstructed from `view_id`, ascending.
    pub fn points_from_view(&self, view_id: usize) -> impl Iterator<Item = usize> + '_ {
        self.view_points(view_id).iter().copied()
    }

    pub fn view_points(&self, view_id: usize) -> &[usize] {
        self.by_view.get(view_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn view_count(&self) -> usize {
        self.by_view.len()
    }

    pub fn labeled_count(&self) -> usize {
        let u = self.unlabeled_id();
        self.sparse_labels.iter().filter(|&&l| l != u).count()
    }

    /// Same cloud with new per-point labels.
    pub fn with_labels(&self, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Contract("label count differs from point count".into()));
        }
        Ok(Self { sparse_labels: labels, ..self.clone() })
    }
}

/// Simulates a feed-forward reconstructor over `views`.
///
/// Each kept valid pixel becomes one point at `unproject(pixel, depth + e)`
/// with `e ~ Normal(0, noise_sigma * depth)`.
pub fn simulate_reconstruction(
    views: &[CameraView],
    noise_sigma: f64,
    density: Density,
    class_count: usize,
    seed: u64,
) -> Result<ScenePointCloud> {
    if views.is_empty() {
        return Err(Error::Config("reconstruction needs at least one view".into()));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::Config("noise_sigma must be >= 0".into()));
    }
    if let Density::SingleScan { stride: 0 } = density {
        return Err(Error::Config("scan stride must be >= 1".into()));
    }
    let void = class_count as ClassId;
    let mut positions = Vec::new();
    let mut conf = Vec::new();
    let mut source = Vec::new();
    let mut feats: Vec<f64> = Vec::new();
    for view in views {
        let mut rng = stream(seed, "reconstruction", &[view.view_id as u64]);
        for row in 0..view.height() {
            for col in 0..view.width() {
                let d = view.gt_depth[[row, col]];
                if view.gt_labels[[row, col]] == void || d <= 0.0 || !density.keeps(row, col) {
                    continue;
                }
                let sd = noise_sigma * d;
                let eps = if sd > 0.0 { Normal::new(0.0, sd).expect("finite sigma").sample(&mut rng) } else { 0.0 };
                let noisy = (d + eps).max(1e-3 * d);
                let px = PixelCoord { u: col as f64, v: row as f64, view_id: view.view_id };
                let p = unproject(&px, noisy, &view.pose, &view.intrinsics)?;
                positions.push([p.x, p.y, p.z]);
                conf.push(rec_confidence(eps, sd));
                source.push(PointSource { view_id: view.view_id, row, col });
                feats.extend(view.features.slice(ndarray::s![row, col, ..]).iter());
            }
        }
    }
    let n = positions.len();
    let features = Array2::from_shape_vec((n, FEATURE_CHANNELS), feats).expect("feature rows");
    ScenePointCloud::new(positions, conf, source, features, vec![void; n], class_count)
}

/// Confidence for a depth error `eps` drawn with standard deviation `sd`.
pub fn rec_confidence(eps: f64, sd: f64) -> f64 {
    (-eps.abs() / (sd + 1e-12)).exp().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class_config() -> SceneConfig {
        SceneConfig { class_count: 2, boxes_per_class: 1, walls: false, ..SceneConfig::default() }
    }

    #[test]
    fn scene_is_deterministic() {
        let a = generate_scene(&SceneConfig::default(), 7).unwrap();
        let b = generate_scene(&SceneConfig::default(), 7).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&SceneConfig::default(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn two_class_scene_renders_two_classes_and_void() {
        let scene = generate_scene(&two_class_config(), 3).unwrap();
        assert_eq!(scene.primitives.len(), 2);
        let views = render_rig(&scene, &CameraRig::default()).unwrap();
        let mut seen = [false; 3];
        for v in &views {
            for &l in v.gt_labels.iter() {
                seen[l as usize] = true;
            }
        }
        assert_eq!(seen, [true, true, true]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_scene(&SceneConfig { class_count: 1, walls: false, ..SceneConfig::default() }, 0).is_err());
        assert!(generate_scene(&SceneConfig { scene_scale: 0.0, ..SceneConfig::default() }, 0).is_err());
    }

    #[test]
    fn infinite_ground_plane_fills_bottom_rows_only() {
        let scene = SyntheticScene::new(
            vec![Primitive { shape: Shape::Plane { axis: 2, offset: 0.0, extent: None }, class_id: 0 }],
            2,
            5.0,
            0,
            Appearance::default(),
        )
        .unwrap();
        let k = CameraIntrinsics::centered(20.0, 32, 32).unwrap();
        // horizontal camera at height 1.5 looking along +x
        let pose = CameraPose::look_at(Vector3::new(0.0, 0.0, 1.5), Vector3::new(1.0, 0.0, 1.5), Vector3::z()).unwrap();
        let v = render_view(&scene, &k, &pose, 0);
        assert!(v.gt_labels.row(31).iter().all(|&l| l == 0));
        assert!(v.gt_labels.row(0).iter().all(|&l| l == scene.void_id()));
        assert!(v.gt_depth.row(0).iter().all(|&d| d == 0.0));
    }

    #[test]
    fn fronto_parallel_plane_depth_at_principal_point() {
        let scene = SyntheticScene::new(
            vec![Primitive { shape: Shape::Plane { axis: 0, offset: 3.25, extent: None }, class_id: 1 }],
            2,
            5.0,
            0,
            Appearance::default(),
        )
        .unwrap();
        let k = CameraIntrinsics::centered(20.0, 32, 32).unwrap();
        let pose = CameraPose::look_at(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::z()).unwrap();
        let v = render_view(&scene, &k, &pose, 0);
        assert!((v.gt_depth[[16, 16]] - 3.25).abs() < 1e-12);
        // every pixel of a fronto-parallel plane has the same z depth
        assert!(v.gt_depth.iter().all(|d| (d - 3.25).abs() < 1e-9));
    }

    #[test]
    fn noiseless_reconstruction_is_exact_and_confident() {
        let scene = generate_scene(&SceneConfig::default(), 11).unwrap();
        let views = render_rig(&scene, &CameraRig { views: 3, ..CameraRig::default() }).unwrap();
        let cloud = simulate_reconstruction(&views, 0.0, Density::Full, scene.class_count, 1).unwrap();
        assert!(cloud.rec_confidence.iter().all(|&c| c == 1.0));
        for i in (0..cloud.len()).step_by(37) {
            let p = cloud.position(i).unwrap();
            assert!(scene.primitives.iter().map(|pr| pr.shape.surface_distance(&p)).fold(f64::INFINITY, f64::min) < 1e-9);
        }
    }

    #[test]
    fn full_density_one_point_per_valid_pixel() {
        let scene = SyntheticScene::new(
            vec![Primitive { shape: Shape::Plane { axis: 0, offset: 2.0, extent: None }, class_id: 0 }],
            2,
            5.0,
            0,
            Appearance::default(),
        )
        .unwrap();
        let k = CameraIntrinsics::centered(20.0, 32, 32).unwrap();
        let pose = CameraPose::look_at(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::z()).unwrap();
        let v = render_view(&scene, &k, &pose, 0);
        let cloud = simulate_reconstruction(std::slice::from_ref(&v), 0.01, Density::Full, 2, 0).unwrap();
        assert_eq!(cloud.len(), 1024);
        let sparse = simulate_reconstruction(&[v], 0.01, Density::single_scan(), 2, 0).unwrap();
        assert_eq!(sparse.len(), 64);
    }

    #[test]
    fn empty_view_list_is_config_error() {
        assert!(matches!(simulate_reconstruction(&[], 0.0, Density::Full, 2, 0), Err(Error::Config(_))));
    }

    #[test]
    fn confidence_decreases_with_error() {
        let sd = 0.2;
        let mut last = 2.0;
        for i in 0..50 {
            let c = rec_confidence(i as f64 * 0.01, sd);
            assert!(c < last && c > 0.0 && c <= 1.0);
            last = c;
        }
        assert_eq!(rec_confidence(0.03, sd), rec_confidence(-0.03, sd));
    }

    #[test]
    fn box_surface_distance() {
        let s = Shape::Box { min: [0.0; 3], max: [1.0; 3] };
        assert!((s.surface_distance(&Vector3::new(0.5, 0.5, 0.9)) - 0.1).abs() < 1e-12);
        assert!((s.surface_distance(&Vector3::new(2.0, 0.5, 0.5)) - 1.0).abs() < 1e-12);
        let o = Vector3::new(-1.0, 0.5, 0.5);
        assert_eq!(s.intersect(&o, &Vector3::x()), Some(1.0));
        assert_eq!(s.intersect(&o, &-Vector3::x()), None);
    }
}
