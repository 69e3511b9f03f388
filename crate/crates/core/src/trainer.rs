//! Dual student-teacher training with cross-modal consistency.
//!
//! Each step draws a batch of training views. The 2D branch sees the view
//! features; the 3D branch sees a per-view point sample. Students receive the
//! strong augmentation tier and teachers the weak one. Both branch objectives
//! are always optimized; once the lambda ramp starts, each teacher also
//! supervises the other modality's student on the correspondence points.
//! Update order per step: student gradients, optimizer, then EMA.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::{write_atomic, Container};
use crate::dataset::{Dataset, DatasetConfig, Reconstruction, SceneData};
use crate::eval::{confusion_2d, confusion_3d, miou, reference_labels, ConfusionMatrix, Reference3d};
use crate::losses::{cmc_loss, confidence_weight, consistency_kl, supervised_ce, total_objective, BranchTerms, CmcOptions, LossReport, TotalForm};
use crate::nets::{augment_2d, augment_3d, point_inputs, Activation, AdamW, AugmentationSpec, BranchState, ForwardPass, MicroNet, Modality, Tier};
use crate::rng::{derive_seed, stream};
use crate::sampling::{SamplingConfig, SamplingStrategy, ViewSample};
use crate::worldgen::FEATURE_CHANNELS;
use crate::{deterministic_mode, ClassId, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub base_epochs: usize,
    pub ramp_epochs: usize,
    pub total_epochs: usize,
    pub lambda_max_2d: f64,
    pub lambda_max_3d: f64,
    pub lr_2d: f64,
    pub lr_3d: f64,
    pub batch_size: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            base_epochs: 12,
            ramp_epochs: 5,
            total_epochs: 40,
            lambda_max_2d: 0.1,
            lambda_max_3d: 0.1,
            lr_2d: 0.002,
            lr_3d: 0.04,
            batch_size: 4,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.base_epochs + self.ramp_epochs > self.total_epochs {
            return Err(Error::Config(format!(
                "base ({}) + ramp ({}) epochs exceed total ({})",
                self.base_epochs, self.ramp_epochs, self.total_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if ![self.lambda_max_2d, self.lambda_max_3d, self.lr_2d, self.lr_3d].into_iter().all(finite_nonneg) {
            return Err(Error::Config("learning rates and lambda maxima must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Cross-modal weights at a (possibly fractional) epoch: zero during base
/// training, then a linear ramp to the maxima over `ramp_epochs`.
pub fn lambda_at(epoch: f64, schedule: &Schedule) -> (f64, f64) {
    let base = schedule.base_epochs as f64;
    let frac = if epoch < base {
        0.0
    } else if schedule.ramp_epochs == 0 {
        1.0
    } else {
        ((epoch - base) / schedule.ramp_epochs as f64).clamp(0.0, 1.0)
    };
    (frac * schedule.lambda_max_2d, frac * schedule.lambda_max_3d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub schedule: Schedule,
    pub hidden: usize,
    pub weight_decay_2d: f64,
    pub weight_decay_3d: f64,
    /// EMA decay of the teachers.
    pub alpha: f64,
    /// Confidence threshold of the consistency weight.
    pub tau: f64,
    /// Share of the consistency term in each branch objective.
    pub beta: f64,
    pub cmc: CmcOptions,
    pub total_form: TotalForm,
    pub sampling: SamplingConfig,
    pub student_augmentation: Tier,
    pub teacher_augmentation: Tier,
    /// Train the 3D branch. Without it no cross-modal term exists.
    pub enable_3d: bool,
    /// Evaluate every this many epochs (0 = only before and after training).
    pub eval_every: usize,
    /// Checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "ours".into(),
            seed: 0,
            dataset: DatasetConfig::default(),
            schedule: Schedule::default(),
            hidden: 16,
            weight_decay_2d: 1e-8,
            weight_decay_3d: 0.005,
            alpha: 0.99,
            tau: 0.8,
            beta: 0.5,
            cmc: CmcOptions::default(),
            total_form: TotalForm::BranchWeighted,
            sampling: SamplingConfig::default(),
            student_augmentation: Tier::Strong,
            teacher_augmentation: Tier::Weak,
            enable_3d: true,
            eval_every: 0,
            checkpoint_every: 0,
        }
    }
}

impl ExperimentConfig {
    /// Plain mean teacher on the 2D branch: no 3D branch, no cross-modal term.
    pub fn ema_baseline() -> Self {
        let mut c = Self { name: "ema".into(), enable_3d: false, ..Self::default() };
        c.schedule.lambda_max_2d = 0.0;
        c.schedule.lambda_max_3d = 0.0;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.schedule.validate()?;
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau {} outside (0, 1)", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta {} outside [0, 1]", self.beta)));
        }
        if self.sampling.budget == 0 || !(0.0..=1.0).contains(&self.sampling.view_fraction) {
            return Err(Error::Config("sampling budget must be >= 1 and view_fraction in [0, 1]".into()));
        }
        if !(self.weight_decay_2d >= 0.0 && self.weight_decay_3d >= 0.0) {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        Ok(())
    }

    /// Canonical JSON: keys sorted, no whitespace.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&serde_json::to_value(self)?)?)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.canonical_json()?.as_bytes()))
    }

    /// Sampling actually used: single-frame reconstructions have no
    /// cross-view context, so only target-view points are available.
    pub fn effective_sampling(&self) -> SamplingConfig {
        match self.dataset.reconstruction {
            Reconstruction::MultiView => self.sampling,
            Reconstruction::SingleFrame => SamplingConfig { strategy: SamplingStrategy::CorrespondencesOnly, ..self.sampling },
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Both branches of a run; the 3D branch is absent when disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct Branches {
    pub two_d: BranchState,
    pub three_d: Option<BranchState>,
}

impl Branches {
    pub fn init(config: &ExperimentConfig) -> Self {
        let c = config.dataset.class_count();
        let mut rng2 = stream(config.seed, "init", &[0]);
        let two_d = BranchState::new(Modality::TwoD, MicroNet::init(FEATURE_CHANNELS, config.hidden, c, Activation::Tanh, &mut rng2));
        let three_d = config.enable_3d.then(|| {
            let mut rng3 = stream(config.seed, "init", &[1]);
            BranchState::new(Modality::ThreeD, MicroNet::init(3 + FEATURE_CHANNELS, config.hidden, c, Activation::Tanh, &mut rng3))
        });
        Self { two_d, three_d }
    }

    /// Hash of the initial 2D parameters, shared by every run of a seed.
    pub fn init_hash(&self) -> String {
        let bytes: Vec<u8> = self.two_d.student.params.iter().flat_map(|p| p.to_le_bytes()).collect();
        sha256_hex(&bytes)
    }

    fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        for b in std::iter::once(&self.two_d).chain(self.three_d.as_ref()) {
            let m = b.modality.to_string();
            let n = b.student.len();
            c.push_f64(format!("{m}.student"), &[n], b.student.params.clone())?;
            c.push_f64(format!("{m}.teacher"), &[n], b.teacher.params.clone())?;
            c.push_f64(format!("{m}.first_moment"), &[n], b.first_moment.clone())?;
            c.push_f64(format!("{m}.second_moment"), &[n], b.second_moment.clone())?;
            c.push_u64(format!("{m}.step"), &[1], vec![b.step])?;
        }
        Ok(c)
    }

    pub fn load(&mut self, c: &Container) -> Result<()> {
        for b in std::iter::once(&mut self.two_d).chain(self.three_d.as_mut()) {
            let m = b.modality.to_string();
            let get = |name: &str| -> Result<Vec<f64>> {
                let (_, v) = c.f64(&format!("{m}.{name}"))?;
                if v.len() != b.student.len() {
                    return Err(Error::Format(format!("checkpoint tensor {m}.{name} has the wrong length")));
                }
                Ok(v.to_vec())
            };
            let (student, teacher, m1, m2) = (get("student")?, get("teacher")?, get("first_moment")?, get("second_moment")?);
            b.student.params = student;
            b.teacher.params = teacher;
            b.first_moment = m1;
            b.second_moment = m2;
            b.step = c.u64(&format!("{m}.step"))?.1.first().copied().ok_or_else(|| Error::Format("empty step tensor".into()))?;
        }
        Ok(())
    }
}

/// One training view of a batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub scene: &'a SceneData,
    pub view: usize,
}

/// Position of a step in the run; all per-step randomness derives from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub epoch: usize,
    pub step: u64,
    pub lambda_2d: f64,
    pub lambda_3d: f64,
}

struct View2d {
    pass: ForwardPass,
    /// Teacher logits aligned to the student rows.
    teacher: Array2<f64>,
    /// Raw teacher rows, indexed through `teacher_row`.
    teacher_logits: Array2<f64>,
    labels: Vec<ClassId>,
    unlabeled: Vec<bool>,
    student_row: Vec<Option<usize>>,
    teacher_row: Vec<Option<usize>>,
    width: usize,
}

struct View3d {
    pass: ForwardPass,
    teacher: Array2<f64>,
    labels: Vec<ClassId>,
    unlabeled: Vec<bool>,
    sample: ViewSample,
}

fn forward_view_2d(branch: &BranchState, item: &BatchItem<'_>, config: &ExperimentConfig, ctx: &StepContext, slot: u64) -> Result<View2d> {
    let view = &item.scene.views[item.view];
    let map = &item.scene.label_maps[item.view];
    let student_spec = AugmentationSpec::tier(config.student_augmentation);
    let teacher_spec = AugmentationSpec::tier(config.teacher_augmentation);
    let stu = augment_2d(&view.features, &student_spec.two_d, derive_seed(config.seed, "aug-2d-student", &[ctx.step, slot]));
    let tea = augment_2d(&view.features, &teacher_spec.two_d, derive_seed(config.seed, "aug-2d-teacher", &[ctx.step, slot]));
    let pass = branch.student.forward(stu.rows.view())?;
    let teacher_logits = branch.teacher.predict(tea.rows.view())?;
    let c = branch.student.output;
    let unlabeled_id = map.unlabeled;
    let flat_labels: Vec<ClassId> = map.labels.iter().copied().collect();
    let n = stu.origin.len();
    let mut teacher = Array2::zeros((n, c));
    let mut labels = vec![unlabeled_id; n];
    let mut unlabeled = vec![false; n];
    for (k, &o) in stu.origin.iter().enumerate() {
        if stu.excluded[k] {
            continue;
        }
        labels[k] = flat_labels[o];
        if let Some(t) = tea.row_of[o] {
            teacher.row_mut(k).assign(&teacher_logits.row(t));
            unlabeled[k] = flat_labels[o] == unlabeled_id;
        }
    }
    Ok(View2d {
        pass,
        teacher,
        teacher_logits,
        labels,
        unlabeled,
        student_row: stu.row_of,
        teacher_row: tea.row_of,
        width: view.width(),
    })
}

fn forward_view_3d(branch: &BranchState, item: &BatchItem<'_>, config: &ExperimentConfig, ctx: &StepContext, slot: u64) -> Result<View3d> {
    let scene = item.scene;
    let cloud = &scene.cloud;
    let view = &scene.views[item.view];
    let sample = config.effective_sampling().sample(cloud, view, scene.scene_scale(), derive_seed(config.seed, "sample", &[ctx.step, slot]))?;
    let positions: Vec<[f64; 3]> = sample.point_indices.iter().map(|&i| cloud.positions[i]).collect();
    let student_spec = AugmentationSpec::tier(config.student_augmentation);
    let teacher_spec = AugmentationSpec::tier(config.teacher_augmentation);
    let stu = augment_3d(&positions, &student_spec.three_d, derive_seed(config.seed, "aug-3d-student", &[ctx.step, slot]));
    let tea = augment_3d(&positions, &teacher_spec.three_d, derive_seed(config.seed, "aug-3d-teacher", &[ctx.step, slot]));
    let scale = scene.scene_scale();
    let xs = point_inputs(&stu.positions, &cloud.features, &sample.point_indices, scale);
    let xt = point_inputs(&tea.positions, &cloud.features, &sample.point_indices, scale);
    let pass = branch.student.forward(xs.view())?;
    let teacher = branch.teacher.predict(xt.view())?;
    let unlabeled_id = cloud.unlabeled_id();
    let labels: Vec<ClassId> = sample.point_indices.iter().map(|&i| cloud.sparse_labels[i]).collect();
    let unlabeled = labels.iter().map(|&l| l == unlabeled_id).collect();
    Ok(View3d { pass, teacher, labels, unlabeled, sample })
}

fn stack(parts: &[&Array2<f64>], cols: usize) -> Array2<f64> {
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = Array2::zeros((rows, cols));
    let mut at = 0;
    for p in parts {
        out.slice_mut(s![at..at + p.nrows(), ..]).assign(p);
        at += p.nrows();
    }
    out
}

fn maybe_par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(usize, &T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
    if deterministic_mode() {
        items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
    } else {
        items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
}

/// Branch terms plus the upstream gradient of the batch logits.
fn branch_terms(
    student: &Array2<f64>,
    teacher: &Array2<f64>,
    labels: &[ClassId],
    unlabeled: &[bool],
    config: &ExperimentConfig,
) -> Result<(BranchTerms, Array2<f64>)> {
    let (ls, g_s) = supervised_ce(student.view(), labels)?;
    let (lu, g_u) = consistency_kl(student.view(), teacher.view(), unlabeled)?;
    let w = confidence_weight(teacher.view(), unlabeled, config.tau)?;
    let c = student.ncols();
    let terms = BranchTerms {
        supervised: ls,
        consistency: lu,
        weight: w,
        labeled: labels.iter().filter(|&&l| (l as usize) < c).count(),
        unlabeled: unlabeled.iter().filter(|&&u| u).count(),
    };
    let (a, b) = match config.total_form {
        TotalForm::BranchWeighted => (1.0 - config.beta, config.beta * w),
        TotalForm::Plain => (1.0, 1.0),
    };
    Ok((terms, g_s * a + g_u * b))
}

/// One optimization step over `batch`. Deterministic in `(config, ctx)`.
pub fn train_step(branches: &mut Branches, batch: &[BatchItem<'_>], config: &ExperimentConfig, ctx: &StepContext) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let c = branches.two_d.student.output;
    let views2d = maybe_par_map(batch, |i, item| forward_view_2d(&branches.two_d, item, config, ctx, i as u64))?;
    let views3d = match &branches.three_d {
        Some(b3) => Some(maybe_par_map(batch, |i, item| forward_view_3d(b3, item, config, ctx, i as u64))?),
        None => None,
    };

    // 2D branch over the whole batch
    let s2 = stack(&views2d.iter().map(|v| &v.pass.logits).collect::<Vec<_>>(), c);
    let t2 = stack(&views2d.iter().map(|v| &v.teacher).collect::<Vec<_>>(), c);
    let labels2: Vec<ClassId> = views2d.iter().flat_map(|v| v.labels.iter().copied()).collect();
    let mask2: Vec<bool> = views2d.iter().flat_map(|v| v.unlabeled.iter().copied()).collect();
    let (terms2, mut up2) = branch_terms(&s2, &t2, &labels2, &mask2, config)?;
    let offsets2: Vec<usize> = views2d.iter().scan(0, |acc, v| { let o = *acc; *acc += v.pass.logits.nrows(); Some(o) }).collect();

    let mut terms3 = BranchTerms::default();
    let (mut lc2, mut lc3, mut correspondences) = (0.0, 0.0, 0);
    let mut up3 = None;
    if let Some(views3d) = &views3d {
        let s3 = stack(&views3d.iter().map(|v| &v.pass.logits).collect::<Vec<_>>(), c);
        let t3 = stack(&views3d.iter().map(|v| &v.teacher).collect::<Vec<_>>(), c);
        let labels3: Vec<ClassId> = views3d.iter().flat_map(|v| v.labels.iter().copied()).collect();
        let mask3: Vec<bool> = views3d.iter().flat_map(|v| v.unlabeled.iter().copied()).collect();
        let (t, mut g3) = branch_terms(&s3, &t3, &labels3, &mask3, config)?;
        terms3 = t;
        let offsets3: Vec<usize> = views3d.iter().scan(0, |acc, v| { let o = *acc; *acc += v.pass.logits.nrows(); Some(o) }).collect();

        // correspondences: (row in s2 or None, teacher-2D logits, row in s3, rec confidence)
        let mut to2d_student = Vec::new(); // (s2 row, s3 row, rec)
        let mut to3d_student = Vec::new(); // (s3 row, 2D teacher logits row index in t2pix, rec)
        let mut teacher2_rows: Vec<Array2<f64>> = Vec::new();
        for (vi, (v2, v3)) in views2d.iter().zip(views3d).enumerate() {
            let cloud = &batch[vi].scene.cloud;
            // 2D teacher logits per original pixel of this view
            let mut pix_teacher = Vec::new();
            for slot in v3.sample.correspondence_slots() {
                correspondences += 1;
                let p = v3.sample.point_indices[slot];
                let src = cloud.source[p];
                let pixel = src.row * v2.width + src.col;
                let rec = cloud.rec_confidence[p];
                if let Some(k) = v2.student_row[pixel] {
                    to2d_student.push((offsets2[vi] + k, offsets3[vi] + slot, rec));
                }
                if let Some(t) = v2.teacher_row[pixel] {
                    pix_teacher.push((offsets3[vi] + slot, t, rec));
                }
            }
            let mut rows = Array2::zeros((pix_teacher.len(), c));
            for (j, &(s3row, t, rec)) in pix_teacher.iter().enumerate() {
                rows.row_mut(j).assign(&v2.teacher_logits.row(t));
                to3d_student.push((s3row, rec));
            }
            teacher2_rows.push(rows);
        }
        let t2_for_3d = stack(&teacher2_rows.iter().collect::<Vec<_>>(), c);

        // 2D student <- 3D teacher
        let stu = Array2::from_shape_fn((to2d_student.len(), c), |(j, k)| s2[[to2d_student[j].0, k]]);
        let tea = Array2::from_shape_fn((to2d_student.len(), c), |(j, k)| t3[[to2d_student[j].1, k]]);
        let rec: Vec<f64> = to2d_student.iter().map(|x| x.2).collect();
        let (l, g) = cmc_loss(stu.view(), tea.view(), &rec, &config.cmc)?;
        lc2 = l;
        if ctx.lambda_2d > 0.0 {
            for (j, &(row, _, _)) in to2d_student.iter().enumerate() {
                let mut r = up2.row_mut(row);
                r.scaled_add(ctx.lambda_2d, &g.row(j));
            }
        }

        // 3D student <- 2D teacher
        let stu = Array2::from_shape_fn((to3d_student.len(), c), |(j, k)| s3[[to3d_student[j].0, k]]);
        let rec: Vec<f64> = to3d_student.iter().map(|x| x.1).collect();
        let (l, g) = cmc_loss(stu.view(), t2_for_3d.view(), &rec, &config.cmc)?;
        lc3 = l;
        if ctx.lambda_3d > 0.0 {
            for (j, &(row, _)) in to3d_student.iter().enumerate() {
                let mut r = g3.row_mut(row);
                r.scaled_add(ctx.lambda_3d, &g.row(j));
            }
        }
        up3 = Some((g3, offsets3));
    }

    let report = total_objective(&terms2, &terms3, lc2, lc3, correspondences, config.beta, ctx.lambda_2d, ctx.lambda_3d, config.total_form);
    if !report.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite total loss at epoch {} step {}", ctx.epoch, ctx.step)));
    }

    // backward per view, summed in batch order
    let grad2 = backward_sum(&branches.two_d.student, views2d.iter().map(|v| &v.pass), &mut up2, &offsets2)?;
    let grad3 = match (&branches.three_d, &views3d, &mut up3) {
        (Some(b3), Some(v3), Some((g3, offs))) => Some(backward_sum(&b3.student, v3.iter().map(|v| &v.pass), g3, offs)?),
        _ => None,
    };

    let s = &config.schedule;
    branches.two_d.optimizer_step(&grad2, &AdamW::new(s.lr_2d, config.weight_decay_2d))?;
    branches.two_d.ema_update(config.alpha)?;
    if let (Some(b3), Some(g)) = (branches.three_d.as_mut(), grad3) {
        b3.optimizer_step(&g, &AdamW::new(s.lr_3d, config.weight_decay_3d))?;
        b3.ema_update(config.alpha)?;
    }
    Ok(report)
}

fn backward_sum<'p>(net: &MicroNet, passes: impl Iterator<Item = &'p ForwardPass>, upstream: &mut Array2<f64>, offsets: &[usize]) -> Result<Vec<f64>> {
    let mut total = vec![0.0; net.len()];
    for (pass, &o) in passes.zip(offsets) {
        let n = pass.logits.nrows();
        let g = net.backward(pass, upstream.slice(s![o..o + n, ..]))?;
        total.iter_mut().zip(g).for_each(|(t, v)| *t += v);
    }
    Ok(total)
}

/// Metrics after `epoch` completed epochs. 3D entries are `None` when the 3D
/// branch is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub miou_2d_teacher: f64,
    pub miou_2d_student: f64,
    pub miou_3d_true: Option<f64>,
    pub miou_3d_unprojected: Option<f64>,
}

impl MetricRow {
    pub const HEADER: [&'static str; 5] = ["epoch", "miou_2d_teacher", "miou_2d_student", "miou_3d_true", "miou_3d_unprojected"];

    fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        vec![
            self.epoch.to_string(),
            format!("{:?}", self.miou_2d_teacher),
            format!("{:?}", self.miou_2d_student),
            opt(self.miou_3d_true),
            opt(self.miou_3d_unprojected),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub step: u64,
    pub report: LossReport,
}

/// Precomputed evaluation references.
pub struct Evaluator<'a> {
    dataset: &'a Dataset,
    references: Vec<(Vec<ClassId>, Vec<ClassId>)>,
}

impl<'a> Evaluator<'a> {
    /// Scores on the eval scenes, or on the training scenes when there are
    /// none.
    pub fn new(dataset: &'a Dataset) -> Result<Self> {
        let references = Self::scenes(dataset)
            .iter()
            .map(|s| {
                Ok((
                    reference_labels(&s.cloud, &s.scene, &s.views, Reference3d::TrueLabels)?,
                    reference_labels(&s.cloud, &s.scene, &s.views, Reference3d::Unprojected2d)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dataset, references })
    }

    fn scenes(dataset: &Dataset) -> &[SceneData] {
        if dataset.eval.is_empty() {
            &dataset.train
        } else {
            &dataset.eval
        }
    }

    pub fn evaluate(&self, branches: &Branches, epoch: usize) -> Result<MetricRow> {
        let c = self.dataset.class_count();
        let scenes = Self::scenes(self.dataset);
        let mut teacher = ConfusionMatrix::new(c);
        let mut student = ConfusionMatrix::new(c);
        for s in scenes {
            teacher.merge(&confusion_2d(&branches.two_d.teacher, &s.views, c)?)?;
            student.merge(&confusion_2d(&branches.two_d.student, &s.views, c)?)?;
        }
        let (mut m3_true, mut m3_unproj) = (None, None);
        if let Some(b3) = &branches.three_d {
            let mut t = ConfusionMatrix::new(c);
            let mut u = ConfusionMatrix::new(c);
            for (s, (rt, ru)) in scenes.iter().zip(&self.references) {
                t.merge(&confusion_3d(&b3.teacher, &s.cloud, rt, s.scene_scale(), c)?)?;
                u.merge(&confusion_3d(&b3.teacher, &s.cloud, ru, s.scene_scale(), c)?)?;
            }
            m3_true = Some(miou(&t)?.mean);
            m3_unproj = Some(miou(&u)?.mean);
        }
        Ok(MetricRow {
            epoch,
            miou_2d_teacher: miou(&teacher)?.mean,
            miou_2d_student: miou(&student)?.mean,
            miou_3d_true: m3_true,
            miou_3d_unprojected: m3_unproj,
        })
    }
}

/// Where and how a run persists its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Run directory; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    /// Stop after this many completed epochs (for interrupted runs).
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config_hash: String,
    pub init_hash: String,
    pub losses: Vec<LossRow>,
    pub metrics: Vec<MetricRow>,
    pub branches: Branches,
    pub last_checkpoint: Option<PathBuf>,
}

impl RunSummary {
    pub fn final_metrics(&self) -> &MetricRow {
        self.metrics.last().expect("initial evaluation always present")
    }
}

/// Training views `(scene, view)` of one epoch in shuffled order.
pub fn epoch_order(dataset: &Dataset, seed: u64, epoch: usize) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = dataset.train.iter().enumerate().flat_map(|(s, d)| (0..d.views.len()).map(move |v| (s, v))).collect();
    order.shuffle(&mut stream(seed, "epoch-order", &[epoch as u64]));
    order
}

pub fn steps_per_epoch(dataset: &Dataset, batch_size: usize) -> usize {
    let views: usize = dataset.train.iter().map(|d| d.views.len()).sum();
    views.div_ceil(batch_size)
}

/// Trains for the configured schedule, evaluating before training, every
/// `eval_every` epochs and at the end.
pub fn run_experiment(config: &ExperimentConfig, dataset: &Dataset, options: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    if dataset.config != config.dataset || dataset.seed != config.seed {
        return Err(Error::Config("dataset was generated from a different config or seed".into()));
    }
    let created = match &options.out_dir {
        Some(dir) if !dir.exists() => {
            fs::create_dir_all(dir)?;
            true
        }
        _ => false,
    };
    let result = run_inner(config, dataset, options);
    if let (Err(Error::Io(_) | Error::Csv(_)), Some(dir), true) = (&result, &options.out_dir, created) {
        let _ = fs::remove_dir_all(dir);
    }
    result
}

fn run_inner(config: &ExperimentConfig, dataset: &Dataset, options: &RunOptions) -> Result<RunSummary> {
    let hash = config.hash()?;
    let mut branches = Branches::init(config);
    let init_hash = branches.init_hash();
    let evaluator = Evaluator::new(dataset)?;
    let mut start = 0;
    if let Some(path) = &options.resume {
        let (c, meta) = Container::read(path)?;
        if meta["config_hash"].as_str() != Some(hash.as_str()) {
            return Err(Error::Config(format!("checkpoint {} belongs to a different config", path.display())));
        }
        branches.load(&c)?;
        start = meta["epoch"].as_u64().ok_or_else(|| Error::Format("checkpoint lacks an epoch".into()))? as usize;
    }
    let ckpt_dir = options.out_dir.as_ref().map(|d| d.join("checkpoints"));
    if let Some(d) = &ckpt_dir {
        fs::create_dir_all(d)?;
        write_atomic(&d.parent().expect("run dir").join("config.json"), config_file(config, &hash)?.as_bytes())?;
    }
    let mut summary = RunSummary { config_hash: hash.clone(), init_hash, losses: Vec::new(), metrics: Vec::new(), branches: branches.clone(), last_checkpoint: None };
    if start == 0 {
        summary.metrics.push(evaluator.evaluate(&branches, 0)?);
    }
    let s = &config.schedule;
    let per_epoch = steps_per_epoch(dataset, s.batch_size);
    let end = options.stop_after.map_or(s.total_epochs, |e| e.min(s.total_epochs));
    for epoch in start..end {
        let (l2, l3) = lambda_at(epoch as f64, s);
        let order = epoch_order(dataset, config.seed, epoch);
        for (i, chunk) in order.chunks(s.batch_size).enumerate() {
            let batch: Vec<BatchItem<'_>> = chunk.iter().map(|&(sc, v)| BatchItem { scene: &dataset.train[sc], view: v }).collect();
            let step = (epoch * per_epoch + i) as u64;
            let ctx = StepContext { epoch, step, lambda_2d: l2, lambda_3d: l3 };
            let report = train_step(&mut branches, &batch, config, &ctx).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!(
                    "{msg}; last good checkpoint: {}",
                    summary.last_checkpoint.as_ref().map_or("none".into(), |p| p.display().to_string())
                )),
                other => other,
            })?;
            summary.losses.push(LossRow { epoch, step, report });
        }
        let done = epoch + 1;
        if done == end || (config.eval_every > 0 && done % config.eval_every == 0) {
            summary.metrics.push(evaluator.evaluate(&branches, done)?);
        }
        if let Some(d) = &ckpt_dir {
            if done == end || (config.checkpoint_every > 0 && done % config.checkpoint_every == 0) {
                let path = d.join(format!("epoch_{done:03}.bin"));
                let meta = serde_json::json!({ "epoch": done, "config_hash": hash, "step": branches.two_d.step });
                branches.to_container()?.write(&path, &meta)?;
                summary.last_checkpoint = Some(path);
                write_logs(options.out_dir.as_ref().expect("run dir"), &hash, &summary)?;
            }
        }
    }
    if let Some(dir) = &options.out_dir {
        write_logs(dir, &hash, &summary)?;
        write_manifest(dir, &hash)?;
    }
    summary.branches = branches;
    Ok(summary)
}

fn config_file(config: &ExperimentConfig, hash: &str) -> Result<String> {
    let mut v = serde_json::to_value(config)?;
    v["config_hash"] = serde_json::Value::String(hash.to_string());
    Ok(serde_json::to_string_pretty(&v)?)
}

fn csv_bytes(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Loss log bytes: `config_hash, epoch, step` followed by the report columns.
pub fn losses_csv(hash: &str, rows: &[LossRow]) -> Result<Vec<u8>> {
    let header = ["config_hash", "epoch", "step"].iter().chain(LossReport::HEADER.iter()).map(|s| s.to_string()).collect();
    csv_bytes(
        header,
        rows.iter().map(|r| [hash.to_string(), r.epoch.to_string(), r.step.to_string()].into_iter().chain(r.report.record()).collect()),
    )
}

pub fn metrics_csv(hash: &str, rows: &[MetricRow]) -> Result<Vec<u8>> {
    let header = std::iter::once("config_hash").chain(MetricRow::HEADER).map(|s| s.to_string()).collect();
    csv_bytes(header, rows.iter().map(|r| std::iter::once(hash.to_string()).chain(r.record()).collect()))
}

fn write_logs(dir: &Path, hash: &str, summary: &RunSummary) -> Result<()> {
    write_atomic(&dir.join("losses.csv"), &losses_csv(hash, &summary.losses)?)?;
    write_atomic(&dir.join("metrics.csv"), &metrics_csv(hash, &summary.metrics)?)
}

/// `MANIFEST`: the config hash, then `sha256  relative/path` per artifact.
fn write_manifest(dir: &Path, hash: &str) -> Result<()> {
    let mut files = vec!["config.json".to_string(), "losses.csv".into(), "metrics.csv".into()];
    let ckpt = dir.join("checkpoints");
    let mut names: Vec<String> = fs::read_dir(&ckpt)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| !n.starts_with('.'))
        .collect();
    names.sort();
    files.extend(names.into_iter().map(|n| format!("checkpoints/{n}")));
    let mut out = format!("config_hash {hash}\n");
    for f in files {
        out.push_str(&format!("{}  {f}\n", sha256_hex(&fs::read(dir.join(&f))?)));
    }
    write_atomic(&dir.join("MANIFEST"), out.as_bytes())
}

/// Re-hashes every file listed in a run's MANIFEST.
pub fn verify_manifest(dir: &Path) -> Result<()> {
    let text = fs::read_to_string(dir.join("MANIFEST"))?;
    for line in text.lines().skip(1) {
        let (digest, file) = line.split_once("  ").ok_or_else(|| Error::Format(format!("bad MANIFEST line `{line}`")))?;
        if sha256_hex(&fs::read(dir.join(file))?) != digest {
            return Err(Error::Format(format!("{file} does not match its MANIFEST hash")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::CameraRig;

    /// Small but complete configuration: 2 train scenes, 4 views, 16x16.
    pub(crate) fn tiny_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.dataset.rig = CameraRig { views: 4, width: 16, height: 16, focal: 14.0, ..CameraRig::default() };
        c.dataset.train_scenes = 2;
        c.dataset.eval_scenes = 1;
        c.schedule = Schedule { base_epochs: 1, ramp_epochs: 1, total_epochs: 3, ..Schedule::default() };
        c.sampling.budget = 120;
        c.hidden = 6;
        c
    }

    fn batch(d: &Dataset) -> Vec<BatchItem<'_>> {
        vec![BatchItem { scene: &d.train[0], view: 0 }, BatchItem { scene: &d.train[1], view: 2 }]
    }

    #[test]
    fn lambda_schedule() {
        let s = Schedule::default();
        assert_eq!(lambda_at(0.0, &s), (0.0, 0.0));
        assert_eq!(lambda_at(11.9, &s), (0.0, 0.0));
        assert_eq!(lambda_at(17.0, &s), (0.1, 0.1));
        assert_eq!(lambda_at(39.0, &s), (0.1, 0.1));
        let (a, b) = lambda_at(14.5, &s);
        assert!((a - 0.05).abs() < 1e-15 && (b - 0.05).abs() < 1e-15);
        assert!(Schedule { base_epochs: 30, ramp_epochs: 20, ..s }.validate().is_err());
    }

    #[test]
    fn zero_lambda_decouples_branches() {
        let cfg = tiny_config();
        let d = Dataset::generate(&cfg.dataset, cfg.seed).unwrap();
        let mut with3d = Branches::init(&cfg);
        let solo_cfg = ExperimentConfig { enable_3d: false, ..cfg.clone() };
        let mut solo = Branches::init(&solo_cfg);
        let ctx = StepContext { epoch: 0, step: 0, lambda_2d: 0.0, lambda_3d: 0.0 };
        for step in 0..3 {
            let ctx = StepContext { step, ..ctx };
            train_step(&mut with3d, &batch(&d), &cfg, &ctx).unwrap();
            train_step(&mut solo, &batch(&d), &solo_cfg, &ctx).unwrap();
        }
        assert_eq!(with3d.two_d, solo.two_d);
        assert!(solo.three_d.is_none());
    }

    #[test]
    fn zero_learning_rate_still_applies_ema() {
        let mut cfg = tiny_config();
        cfg.schedule.lr_2d = 0.0;
        cfg.schedule.lr_3d = 0.0;
        let d = Dataset::generate(&cfg.dataset, cfg.seed).unwrap();
        let mut b = Branches::init(&cfg);
        b.two_d.teacher.params.iter_mut().for_each(|p| *p += 1.0);
        let before = b.clone();
        let ctx = StepContext { epoch: 0, step: 0, lambda_2d: 0.1, lambda_3d: 0.1 };
        train_step(&mut b, &batch(&d), &cfg, &ctx).unwrap();
        assert_eq!(b.two_d.student, before.two_d.student);
        assert_eq!(b.three_d.as_ref().unwrap().student, before.three_d.as_ref().unwrap().student);
        for (t, (t0, s)) in b.two_d.teacher.params.iter().zip(before.two_d.teacher.params.iter().zip(&before.two_d.student.params)) {
            assert!((t - (0.99 * t0 + 0.01 * s)).abs() < 1e-15);
        }
    }

    #[test]
    fn alpha_zero_teacher_equals_post_step_student() {
        let cfg = ExperimentConfig { alpha: 0.0, ..tiny_config() };
        let d = Dataset::generate(&cfg.dataset, cfg.seed).unwrap();
        let mut b = Branches::init(&cfg);
        let ctx = StepContext { epoch: 0, step: 0, lambda_2d: 0.1, lambda_3d: 0.1 };
        let before = b.clone();
        train_step(&mut b, &batch(&d), &cfg, &ctx).unwrap();
        assert_ne!(b.two_d.student, before.two_d.student);
        assert_eq!(b.two_d.teacher.params, b.two_d.student.params);
        let b3 = b.three_d.unwrap();
        assert_eq!(b3.teacher.params, b3.student.params);
    }

    #[test]
    fn report_total_is_the_combination_of_its_terms() {
        let cfg = tiny_config();
        let d = Dataset::generate(&cfg.dataset, cfg.seed).unwrap();
        let mut b = Branches::init(&cfg);
        let ctx = StepContext { epoch: 2, step: 5, lambda_2d: 0.1, lambda_3d: 0.05 };
        let r = train_step(&mut b, &batch(&d), &cfg, &ctx).unwrap();
        let beta = cfg.beta;
        let expected = (1.0 - beta) * r.ls_2d + beta * r.wt_2d * r.lu_2d + (1.0 - beta) * r.ls_3d + beta * r.wt_3d * r.lu_3d + 0.1 * r.lc_2d + 0.05 * r.lc_3d;
        assert!((r.total - expected).abs() < 1e-12);
        assert!(r.correspondences > 0 && r.lc_2d > 0.0 && r.lc_3d > 0.0);
        assert!((0.0..=1.0).contains(&r.wt_2d) && (0.0..=1.0).contains(&r.wt_3d));
    }

    #[test]
    fn zero_epochs_only_initial_evaluation() {
        let mut cfg = tiny_config();
        cfg.schedule = Schedule { base_epochs: 0, ramp_epochs: 0, total_epochs: 0, ..cfg.schedule };
        let d = Dataset::generate(&cfg.dataset, cfg.seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run");
        let s = run_experiment(&cfg, &d, &RunOptions { out_dir: Some(run.clone()), ..RunOptions::default() }).unwrap();
        assert!(s.losses.is_empty());
        assert_eq!(s.metrics.len(), 1);
        assert_eq!(s.metrics[0].epoch, 0);
        verify_manifest(&run).unwrap();
    }

    #[test]
    fn resume_matches_unbroken_run() {
        let cfg = ExperimentConfig { checkpoint_every: 1, ..tiny_config() };
        let d = Dataset::generate(&cfg.dataset, cfg.seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let full = run_experiment(&cfg, &d, &RunOptions { out_dir: Some(dir.path().join("full")), ..RunOptions::default() }).unwrap();
        let part = run_experiment(&cfg, &d, &RunOptions { out_dir: Some(dir.path().join("part")), stop_after: Some(1), ..RunOptions::default() }).unwrap();
        let ckpt = part.last_checkpoint.unwrap();
        let resumed = run_experiment(&cfg, &d, &RunOptions { out_dir: Some(dir.path().join("resumed")), resume: Some(ckpt), ..RunOptions::default() }).unwrap();
        let tail: Vec<LossRow> = full.losses.iter().filter(|r| r.epoch >= 1).copied().collect();
        assert_eq!(resumed.losses, tail);
        assert_eq!(resumed.branches, full.branches);
        assert_eq!(resumed.final_metrics(), full.final_metrics());
    }

    #[test]
    fn config_hash_is_in_every_artifact() {
        let cfg = tiny_config();
        let d = Dataset::generate(&cfg.dataset, cfg.seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let s = run_experiment(&cfg, &d, &RunOptions { out_dir: Some(dir.path().to_path_buf()), ..RunOptions::default() }).unwrap();
        for f in ["config.json", "losses.csv", "metrics.csv", "MANIFEST", "checkpoints/epoch_003.json"] {
            assert!(fs::read_to_string(dir.path().join(f)).unwrap().contains(&s.config_hash), "{f}");
        }
        verify_manifest(dir.path()).unwrap();
        fs::write(dir.path().join("metrics.csv"), "tampered").unwrap();
        assert!(verify_manifest(dir.path()).is_err());
    }

    #[test]
    fn mismatched_dataset_is_config_error() {
        let cfg = tiny_config();
        let d = Dataset::generate(&cfg.dataset, 99).unwrap();
        assert!(matches!(run_experiment(&cfg, &d, &RunOptions::default()), Err(Error::Config(_))));
    }
}
