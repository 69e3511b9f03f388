//! Confusion matrices, mIoU and the supervision-gap ratio.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::nets::{forward_2d, point_inputs, MicroNet};
use crate::worldgen::{CameraView, ScenePointCloud, SyntheticScene};
use crate::{ClassId, Error, Result};

/// Rows are ground truth, columns are predictions. Ground-truth ids outside
/// `[0, classes)` (void, unlabeled) are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn add(&mut self, gt: ClassId, pred: ClassId) -> Result<()> {
        let (g, p) = (gt as usize, pred as usize);
        if g >= self.classes {
            return Ok(());
        }
        if p >= self.classes {
            return Err(Error::Contract(format!("prediction {pred} out of range for {} classes", self.classes)));
        }
        self.counts[g * self.classes + p] += 1;
        Ok(())
    }

    pub fn accumulate(&mut self, gt: &[ClassId], pred: &[ClassId]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::Contract(format!("{} ground-truth vs {} predicted labels", gt.len(), pred.len())));
        }
        gt.iter().zip(pred).try_for_each(|(&g, &p)| self.add(g, p))
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Contract("confusion matrices differ in class count".into()));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouResult {
    /// IoU in `[0, 1]` per class; `None` when the class is absent from both
    /// ground truth and predictions.
    pub per_class: Vec<Option<f64>>,
    /// Mean IoU in percent over the present classes.
    pub mean: f64,
}

pub fn miou(cm: &ConfusionMatrix) -> Result<MiouResult> {
    let c = cm.classes;
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let tp = cm.get(k, k);
        let fn_: u64 = (0..c).map(|p| cm.get(k, p)).sum::<u64>() - tp;
        let fp: u64 = (0..c).map(|g| cm.get(g, k)).sum::<u64>() - tp;
        let denom = tp + fp + fn_;
        per_class.push((denom > 0).then(|| tp as f64 / denom as f64));
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Domain("confusion matrix is empty".into()));
    }
    let mean = 100.0 * present.iter().sum::<f64>() / present.len() as f64;
    Ok(MiouResult { per_class, mean })
}

/// Weak-supervision mIoU as a percentage of the fully-supervised mIoU.
pub fn supervision_gap(weak_miou: f64, full_miou: f64) -> Result<f64> {
    if full_miou <= 0.0 {
        return Err(Error::Domain(format!("fully-supervised mIoU must be positive, got {full_miou}")));
    }
    Ok(100.0 * weak_miou / full_miou)
}

pub fn argmax_rows(logits: &Array2<f64>) -> Vec<ClassId> {
    logits
        .rows()
        .into_iter()
        .map(|row| row.iter().enumerate().fold(0usize, |b, (k, &v)| if v > row[b] { k } else { b }) as ClassId)
        .collect()
}

/// Confusion of the 2D net over every non-void pixel of `views`.
pub fn confusion_2d(net: &MicroNet, views: &[CameraView], classes: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    for view in views {
        let pred = argmax_rows(&forward_2d(net, &view.features)?);
        let gt: Vec<ClassId> = view.gt_labels.iter().copied().collect();
        cm.accumulate(&gt, &pred)?;
    }
    Ok(cm)
}

/// Reference labels for scoring 3D predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference3d {
    /// Class of the scene surface nearest to the (noisy) point.
    TrueLabels,
    /// Dense ground-truth label of the pixel the point was lifted from.
    Unprojected2d,
}

pub fn reference_labels(cloud: &ScenePointCloud, scene: &SyntheticScene, views: &[CameraView], reference: Reference3d) -> Result<Vec<ClassId>> {
    match reference {
        Reference3d::TrueLabels => Ok((0..cloud.len()).map(|i| scene.nearest_class(&cloud.position(i).expect("index in range"))).collect()),
        Reference3d::Unprojected2d => cloud
            .source
            .iter()
            .map(|s| {
                views
                    .iter()
                    .find(|v| v.view_id == s.view_id)
                    .map(|v| v.gt_labels[[s.row, s.col]])
                    .ok_or_else(|| Error::Config(format!("no view {} for unprojected labels", s.view_id)))
            })
            .collect(),
    }
}

/// Confusion of the 3D net over every cloud point with a reference label.
pub fn confusion_3d(net: &MicroNet, cloud: &ScenePointCloud, reference: &[ClassId], scene_scale: f64, classes: usize) -> Result<ConfusionMatrix> {
    if reference.len() != cloud.len() {
        return Err(Error::Contract(format!("{} reference labels for {} points", reference.len(), cloud.len())));
    }
    if !reference.iter().any(|&r| (r as usize) < classes) {
        return Err(Error::Domain("no reference labels to evaluate against".into()));
    }
    let indices: Vec<usize> = (0..cloud.len()).collect();
    let x = point_inputs(&cloud.positions, &cloud.features, &indices, scene_scale);
    let pred = argmax_rows(&net.predict(x.view())?);
    let mut cm = ConfusionMatrix::new(classes);
    cm.accumulate(reference, &pred)?;
    Ok(cm)
}

pub fn eval_3d(net: &MicroNet, cloud: &ScenePointCloud, reference: &[ClassId], scene_scale: f64, classes: usize) -> Result<MiouResult> {
    miou(&confusion_3d(net, cloud, reference, scene_scale, classes)?)
}
