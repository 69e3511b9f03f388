//! The synthetic benchmark: train and eval scenes with rendered views, sparse
//! annotations and a labeled reconstructed cloud per scene.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::annotate::{gen_coarse_labels, gen_point_labels, gen_scribble_labels, transfer_labels_to_3d, AnnotationKind, ScribbleParams, SparseLabelMap};
use crate::container::Container;
use crate::geometry::{CameraIntrinsics, CameraPose};
use crate::rng::derive_seed;
use crate::worldgen::{
    generate_scene, render_rig, simulate_reconstruction, CameraRig, CameraView, Density, PointSource, SceneConfig, ScenePointCloud, SyntheticScene,
    FEATURE_CHANNELS,
};
use crate::{ClassId, Error, Result};

/// How the point cloud of a scene is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reconstruction {
    /// One reconstruction over all views of the scene.
    #[default]
    MultiView,
    /// Each view is reconstructed on its own: no cross-view context and
    /// noisier depth.
    SingleFrame,
}

/// Depth-noise multiplier applied to single-frame reconstructions.
pub const SINGLE_FRAME_NOISE_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    pub rig: CameraRig,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub annotation: AnnotationKind,
    /// Scribble regions smaller than this receive no stroke.
    pub min_region_area: usize,
    /// Depth-noise standard deviation per meter of depth.
    pub noise_sigma: f64,
    pub density: Density,
    pub reconstruction: Reconstruction,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            rig: CameraRig::default(),
            train_scenes: 8,
            eval_scenes: 2,
            annotation: AnnotationKind::Scribbles { length_scale: 0.5, thickness: 1 },
            min_region_area: 16,
            noise_sigma: 0.03,
            density: Density::Full,
            reconstruction: Reconstruction::MultiView,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.train_scenes == 0 {
            return Err(Error::Config("need at least one training scene".into()));
        }
        if self.rig.views == 0 || self.rig.width == 0 || self.rig.height == 0 {
            return Err(Error::Config("camera rig needs views and a non-empty image".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        match self.annotation {
            AnnotationKind::Scribbles { length_scale, .. } if !(length_scale > 0.0 && length_scale <= 1.0) => {
                Err(Error::Config(format!("scribble length_scale {length_scale} outside (0, 1]")))
            }
            AnnotationKind::Coarse { erosion_radius: 0 } => Err(Error::Config("erosion_radius must be >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn class_count(&self) -> usize {
        self.scene.class_count
    }
}

/// One scene with its views, per-view label maps and labeled cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub scene: SyntheticScene,
    pub views: Vec<CameraView>,
    pub label_maps: Vec<SparseLabelMap>,
    pub cloud: ScenePointCloud,
}

impl SceneData {
    pub fn scene_scale(&self) -> f64 {
        self.scene.scene_scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub seed: u64,
    pub train: Vec<SceneData>,
    pub eval: Vec<SceneData>,
}

fn annotate_view(view: &CameraView, config: &DatasetConfig, seed: u64) -> Result<SparseLabelMap> {
    let c = config.class_count();
    match config.annotation {
        AnnotationKind::Points => gen_point_labels(view, c, seed),
        AnnotationKind::Scribbles { length_scale, thickness } => {
            gen_scribble_labels(view, c, &ScribbleParams { length_scale, thickness, min_area: config.min_region_area }, seed)
        }
        AnnotationKind::Coarse { erosion_radius } => gen_coarse_labels(view, c, erosion_radius),
    }
}

/// Builds one scene. Scene layout, rendering and reconstruction noise depend
/// only on `(seed, index)`, never on the annotation settings, so datasets that
/// differ only in annotation share geometry and features exactly.
pub fn build_scene(config: &DatasetConfig, seed: u64, index: u64) -> Result<SceneData> {
    let scene_seed = derive_seed(seed, "scene", &[index]);
    let scene = generate_scene(&config.scene, scene_seed)?;
    let views = render_rig(&scene, &config.rig)?;
    let label_maps = views
        .iter()
        .map(|v| annotate_view(v, config, derive_seed(scene_seed, "annotation", &[v.view_id as u64])))
        .collect::<Result<Vec<_>>>()?;
    let recon_seed = derive_seed(scene_seed, "reconstruction", &[]);
    let c = config.class_count();
    let cloud = match config.reconstruction {
        Reconstruction::MultiView => simulate_reconstruction(&views, config.noise_sigma, config.density, c, recon_seed)?,
        Reconstruction::SingleFrame => {
            simulate_reconstruction(&views, config.noise_sigma * SINGLE_FRAME_NOISE_FACTOR, config.density, c, recon_seed)?
        }
    };
    let cloud = transfer_labels_to_3d(&cloud, &label_maps)?;
    Ok(SceneData { scene, views, label_maps, cloud })
}

impl Dataset {
    pub fn generate(config: &DatasetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let train = (0..config.train_scenes as u64).map(|i| build_scene(config, seed, i)).collect::<Result<Vec<_>>>()?;
        // eval scenes use indices past the training range
        let eval = (0..config.eval_scenes as u64)
            .map(|i| build_scene(config, seed, 1_000_000 + i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config: *config, seed, train, eval })
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count()
    }

    /// Mean labeled-pixel fraction over all training views.
    pub fn train_coverage(&self) -> f64 {
        let maps: Vec<&SparseLabelMap> = self.train.iter().flat_map(|s| &s.label_maps).collect();
        maps.iter().map(|m| m.coverage()).sum::<f64>() / maps.len().max(1) as f64
    }

    /// Writes `dataset.json` plus one container per scene under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let index = serde_json::json!({
            "config": self.config,
            "seed": self.seed,
            "train": self.train.len(),
            "eval": self.eval.len(),
        });
        crate::container::write_atomic(&dir.join("dataset.json"), serde_json::to_string_pretty(&index)?.as_bytes())?;
        for (split, scenes) in [("train", &self.train), ("eval", &self.eval)] {
            for (i, s) in scenes.iter().enumerate() {
                let (c, meta) = encode_scene(s)?;
                c.write(&dir.join(format!("{split}_{i:03}.bin")), &meta)?;
            }
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let index: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("dataset.json"))?)?;
        let config: DatasetConfig = serde_json::from_value(index["config"].clone())?;
        let seed = index["seed"].as_u64().ok_or_else(|| Error::Format("dataset.json lacks a seed".into()))?;
        let count = |k: &str| index[k].as_u64().ok_or_else(|| Error::Format(format!("dataset.json lacks `{k}`")));
        let mut splits = Vec::new();
        for split in ["train", "eval"] {
            let scenes = (0..count(split)?)
                .map(|i| {
                    let (c, meta) = Container::read(&dir.join(format!("{split}_{i:03}.bin")))?;
                    decode_scene(&c, &meta, &config)
                })
                .collect::<Result<Vec<_>>>()?;
            splits.push(scenes);
        }
        let eval = splits.pop().expect("two splits");
        let train = splits.pop().expect("two splits");
        Ok(Self { config, seed, train, eval })
    }
}

fn encode_scene(s: &SceneData) -> Result<(Container, serde_json::Value)> {
    let mut c = Container::new();
    let views = &s.views;
    let (h, w) = (s.views[0].height(), s.views[0].width());
    let n = views.len();
    c.push_f64("views.features", &[n, h, w, FEATURE_CHANNELS], views.iter().flat_map(|v| v.features.iter().copied()).collect())?;
    c.push_u16("views.gt_labels", &[n, h, w], views.iter().flat_map(|v| v.gt_labels.iter().copied()).collect())?;
    c.push_f64("views.gt_depth", &[n, h, w], views.iter().flat_map(|v| v.gt_depth.iter().copied()).collect())?;
    c.push_f64(
        "views.pose",
        &[n, 12],
        views.iter().flat_map(|v| v.pose.rotation.transpose().iter().copied().chain(v.pose.translation.iter().copied()).collect::<Vec<_>>()).collect(),
    )?;
    c.push_u16("labels", &[n, h, w], s.label_maps.iter().flat_map(|m| m.labels.iter().copied()).collect())?;
    let cloud = &s.cloud;
    let p = cloud.len();
    c.push_f64("cloud.positions", &[p, 3], cloud.positions.iter().flat_map(|x| x.iter().copied()).collect())?;
    c.push_f64("cloud.rec_confidence", &[p], cloud.rec_confidence.clone())?;
    c.push_u64("cloud.source", &[p, 3], cloud.source.iter().flat_map(|s| [s.view_id as u64, s.row as u64, s.col as u64]).collect())?;
    c.push_f64("cloud.features", &[p, FEATURE_CHANNELS], cloud.features.iter().copied().collect())?;
    c.push_u16("cloud.sparse_labels", &[p], cloud.sparse_labels.clone())?;
    let meta = serde_json::json!({
        "scene": s.scene,
        "intrinsics": s.views[0].intrinsics,
        "view_ids": views.iter().map(|v| v.view_id).collect::<Vec<_>>(),
        "annotation": s.label_maps.first().map(|m| m.kind),
        "unlabeled": s.cloud.unlabeled_id(),
    });
    Ok((c, meta))
}

fn decode_scene(c: &Container, meta: &serde_json::Value, config: &DatasetConfig) -> Result<SceneData> {
    let scene: SyntheticScene = serde_json::from_value(meta["scene"].clone())?;
    let k: CameraIntrinsics = serde_json::from_value(meta["intrinsics"].clone())?;
    let view_ids: Vec<usize> = serde_json::from_value(meta["view_ids"].clone())?;
    let bad = |what: &str| Error::Format(format!("scene container: bad {what}"));
    let (dims, feats) = c.f64("views.features")?;
    let [n, h, w, f] = dims.try_into().map_err(|_| bad("feature dims"))?;
    if n != view_ids.len() || h != k.height || w != k.width || f != FEATURE_CHANNELS {
        return Err(bad("feature dims"));
    }
    let (_, labels) = c.u16("views.gt_labels")?;
    let (_, depth) = c.f64("views.gt_depth")?;
    let (_, poses) = c.f64("views.pose")?;
    let (_, sparse) = c.u16("labels")?;
    let px = h * w;
    if labels.len() != n * px || depth.len() != n * px || poses.len() != n * 12 || sparse.len() != n * px {
        return Err(bad("view tensors"));
    }
    let kind = serde_json::from_value(meta["annotation"].clone()).unwrap_or(config.annotation);
    let unlabeled = config.class_count() as ClassId;
    let mut views = Vec::with_capacity(n);
    let mut label_maps = Vec::with_capacity(n);
    for (i, &view_id) in view_ids.iter().enumerate() {
        let pose = &poses[i * 12..(i + 1) * 12];
        let rotation = Matrix3::from_row_slice(&pose[..9]);
        let translation = Vector3::new(pose[9], pose[10], pose[11]);
        views.push(CameraView {
            view_id,
            intrinsics: k,
            pose: CameraPose::new(rotation, translation)?,
            features: Array3::from_shape_vec((h, w, f), feats[i * px * f..(i + 1) * px * f].to_vec()).map_err(|_| bad("features"))?,
            gt_labels: Array2::from_shape_vec((h, w), labels[i * px..(i + 1) * px].to_vec()).map_err(|_| bad("labels"))?,
            gt_depth: Array2::from_shape_vec((h, w), depth[i * px..(i + 1) * px].to_vec()).map_err(|_| bad("depth"))?,
        });
        label_maps.push(SparseLabelMap {
            labels: Array2::from_shape_vec((h, w), sparse[i * px..(i + 1) * px].to_vec()).map_err(|_| bad("label map"))?,
            kind,
            unlabeled,
        });
    }
    let (_, pos) = c.f64("cloud.positions")?;
    let (_, conf) = c.f64("cloud.rec_confidence")?;
    let (_, src) = c.u64("cloud.source")?;
    let (_, cf) = c.f64("cloud.features")?;
    let (_, cl) = c.u16("cloud.sparse_labels")?;
    let p = conf.len();
    if pos.len() != 3 * p || src.len() != 3 * p || cf.len() != FEATURE_CHANNELS * p || cl.len() != p {
        return Err(bad("cloud tensors"));
    }
    let cloud = ScenePointCloud::new(
        pos.chunks(3).map(|x| [x[0], x[1], x[2]]).collect(),
        conf.to_vec(),
        src.chunks(3).map(|s| PointSource { view_id: s[0] as usize, row: s[1] as usize, col: s[2] as usize }).collect(),
        Array2::from_shape_vec((p, FEATURE_CHANNELS), cf.to_vec()).map_err(|_| bad("cloud features"))?,
        cl.to_vec(),
        config.class_count(),
    )?;
    Ok(SceneData { scene, views, label_maps, cloud })
}
