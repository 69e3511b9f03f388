//! Segmentation heads for both modalities, their optimizer, and augmentation.

pub mod augment;
pub mod mlp;
pub mod optim;

use ndarray::{Array2, Array3};

pub use augment::{augment_2d, augment_3d, Augment2d, Augment3d, AugmentationSpec, Augmented2d, Augmented3d, Cutout, Tier};
pub use mlp::{Activation, ForwardPass, MicroNet};
pub use optim::{AdamW, BranchState, Modality};

use crate::sampling::ViewSample;
use crate::worldgen::{ScenePointCloud, FEATURE_CHANNELS};
use crate::{Error, Result};

/// Input width of the 3D head: normalized position plus point features.
pub const POINT_INPUTS: usize = 3 + FEATURE_CHANNELS;

/// Per-pixel logits for a `(height, width, channels)` feature map, in
/// row-major pixel order.
pub fn forward_2d(net: &MicroNet, features: &Array3<f64>) -> Result<Array2<f64>> {
    let (h, w, f) = features.dim();
    if f != net.input {
        return Err(Error::Contract(format!("2D net expects {} channels, view has {f}", net.input)));
    }
    let rows = features.to_shape((h * w, f)).map_err(|e| Error::Contract(e.to_string()))?;
    net.predict(rows.view())
}

/// Rows of `[position / scene_scale, features]` for the given points.
pub fn point_inputs(positions: &[[f64; 3]], features: &Array2<f64>, indices: &[usize], scene_scale: f64) -> Array2<f64> {
    debug_assert_eq!(positions.len(), indices.len());
    let f = features.ncols();
    let mut out = Array2::zeros((indices.len(), 3 + f));
    for (row, (p, &i)) in positions.iter().zip(indices).enumerate() {
        for k in 0..3 {
            out[[row, k]] = p[k] / scene_scale;
        }
        for c in 0..f {
            out[[row, 3 + c]] = features[[i, c]];
        }
    }
    out
}

/// Per-point logits for the points of a view sample.
pub fn forward_3d(net: &MicroNet, sample: &ViewSample, cloud: &ScenePointCloud, scene_scale: f64) -> Result<Array2<f64>> {
    if net.input != 3 + cloud.features.ncols() {
        return Err(Error::Contract(format!("3D net expects {} inputs, cloud provides {}", net.input, 3 + cloud.features.ncols())));
    }
    if let Some(&bad) = sample.point_indices.iter().find(|&&i| i >= cloud.len()) {
        return Err(Error::Contract(format!("sample index {bad} out of range")));
    }
    let positions: Vec<[f64; 3]> = sample.point_indices.iter().map(|&i| cloud.positions[i]).collect();
    let x = point_inputs(&positions, &cloud.features, &sample.point_indices, scene_scale);
    net.predict(x.view())
}
