//! Per-image point subsamples for the 3D branch and the cross-modal loss.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::rng::stream;
use crate::worldgen::{CameraView, ScenePointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSample {
    pub target_view: usize,
    pub point_indices: Vec<usize>,
    /// `true` where the point was reconstructed from `target_view`.
    pub correspondence_mask: Vec<bool>,
    pub budget: usize,
    pub view_fraction: f64,
    pub context_radius: f64,
}

impl ViewSample {
    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }

    pub fn correspondence_count(&self) -> usize {
        self.correspondence_mask.iter().filter(|&&m| m).count()
    }

    /// Positions within the sample that are correspondences.
    pub fn correspondence_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.correspondence_mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }
}

/// How per-view subsamples are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    #[default]
    ViewAware,
    Random,
    CorrespondencesOnly,
}

fn draw(pool: &[usize], k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    let k = k.min(pool.len());
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    picked
}

fn check(cloud: &ScenePointCloud, budget: usize) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::Domain("cannot sample an empty cloud".into()));
    }
    if budget == 0 {
        return Err(Error::Config("sampling budget must be >= 1".into()));
    }
    Ok(())
}

fn sample_mixed(
    cloud: &ScenePointCloud,
    target: &CameraView,
    budget: usize,
    view_fraction: f64,
    context_radius: f64,
    refill: bool,
    seed: u64,
) -> Result<ViewSample> {
    check(cloud, budget)?;
    if !(0.0..=1.0).contains(&view_fraction) {
        return Err(Error::Config(format!("view_fraction {view_fraction} outside [0, 1]")));
    }
    let mut rng = stream(seed, "view-sample", &[target.view_id as u64]);
    let quota = (budget as f64 * view_fraction).round() as usize;
    let view_points = draw(cloud.view_points(target.view_id), quota, &mut rng);
    let mut point_indices = view_points.clone();
    let mut correspondence_mask = vec![true; view_points.len()];
    if refill {
        let center = target.pose.center();
        let r2 = context_radius * context_radius;
        let context_pool: Vec<usize> = (0..cloud.len())
            .filter(|&i| cloud.source[i].view_id != target.view_id)
            .filter(|&i| {
                let p = cloud.positions[i];
                let d2 = (p[0] - center.x).powi(2) + (p[1] - center.y).powi(2) + (p[2] - center.z).powi(2);
                d2 <= r2
            })
            .collect();
        let context = draw(&context_pool, budget - view_points.len(), &mut rng);
        correspondence_mask.extend(std::iter::repeat_n(false, context.len()));
        point_indices.extend(context);
    }
    Ok(ViewSample { target_view: target.view_id, point_indices, correspondence_mask, budget, view_fraction, context_radius })
}

/// Mixes `round(budget * view_fraction)` points reconstructed from the target
/// view with context points within `context_radius` of its camera center.
///
/// A short view pool is taken whole and the shortfall is refilled from the
/// context pool. Context points never come from the target view, so the
/// correspondence count stays within the quota.
pub fn view_aware_sample(
    cloud: &ScenePointCloud,
    target: &CameraView,
    budget: usize,
    view_fraction: f64,
    context_radius: f64,
    seed: u64,
) -> Result<ViewSample> {
    sample_mixed(cloud, target, budget, view_fraction, context_radius, true, seed)
}

/// Only points from the target view, without context refill.
pub fn correspondences_only_sample(cloud: &ScenePointCloud, target: &CameraView, budget: usize, seed: u64) -> Result<ViewSample> {
    sample_mixed(cloud, target, budget, 1.0, 0.0, false, seed)
}

/// Uniform global subsample; correspondences are whatever happens to come
/// from the target view.
pub fn random_sample(cloud: &ScenePointCloud, target: &CameraView, budget: usize, seed: u64) -> Result<ViewSample> {
    check(cloud, budget)?;
    let mut rng = stream(seed, "random-sample", &[target.view_id as u64]);
    let all: Vec<usize> = (0..cloud.len()).collect();
    let point_indices = draw(&all, budget, &mut rng);
    let correspondence_mask = point_indices.iter().map(|&i| cloud.source[i].view_id == target.view_id).collect();
    Ok(ViewSample {
        target_view: target.view_id,
        point_indices,
        correspondence_mask,
        budget,
        view_fraction: 0.0,
        context_radius: f64::INFINITY,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub strategy: SamplingStrategy,
    pub budget: usize,
    pub view_fraction: f64,
    /// Context radius as a multiple of the scene scale.
    pub context_radius_factor: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { strategy: SamplingStrategy::ViewAware, budget: 1200, view_fraction: 0.6, context_radius_factor: 0.5 }
    }
}

impl SamplingConfig {
    pub fn sample(&self, cloud: &ScenePointCloud, target: &CameraView, scene_scale: f64, seed: u64) -> Result<ViewSample> {
        match self.strategy {
            SamplingStrategy::ViewAware => {
                view_aware_sample(cloud, target, self.budget, self.view_fraction, self.context_radius_factor * scene_scale, seed)
            }
            SamplingStrategy::Random => random_sample(cloud, target, self.budget, seed),
            SamplingStrategy::CorrespondencesOnly => correspondences_only_sample(cloud, target, self.budget, seed),
        }
    }
}
