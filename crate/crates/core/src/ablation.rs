//! Paired multi-seed ablation suites and their trend statistics.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::AnnotationKind;
use crate::dataset::{Dataset, DatasetConfig, Reconstruction};
use crate::losses::ConfidenceMode;
use crate::sampling::SamplingStrategy;
use crate::trainer::{run_experiment, sha256_hex, ExperimentConfig, MetricRow, RunOptions};
use crate::worldgen::Density;
use crate::{deterministic_mode, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Mean teacher without cross-modal supervision vs the full method.
    Main,
    Confidence,
    Sampling,
    ReconQuality,
    ScribbleLength,
    SimulatedLidar,
}

impl Suite {
    pub const ALL: [Suite; 6] = [Suite::Main, Suite::Confidence, Suite::Sampling, Suite::ReconQuality, Suite::ScribbleLength, Suite::SimulatedLidar];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Main => "main",
            Suite::Confidence => "confidence",
            Suite::Sampling => "sampling",
            Suite::ReconQuality => "recon_quality",
            Suite::ScribbleLength => "scribble_length",
            Suite::SimulatedLidar => "simulated_lidar",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            Error::Config(format!("unknown suite `{s}` (expected one of {})", Self::ALL.map(|x| x.name()).join(", ")))
        })
    }
}

/// Which score a comparison uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Miou2d,
    Miou3d,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Miou2d => "miou_2d",
            Metric::Miou3d => "miou_3d",
        }
    }

    pub fn of(self, row: &MetricRow) -> f64 {
        match self {
            Metric::Miou2d => row.miou_2d_teacher,
            Metric::Miou3d => row.miou_3d_true.unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: ExperimentConfig,
}

/// `variant` is compared against `baseline` on `metric`.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub variant: String,
    pub baseline: String,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSpec {
    pub suite: Suite,
    pub variants: Vec<Variant>,
    pub comparisons: Vec<Comparison>,
}

/// Scribble lengths of the length sweep.
pub const SCRIBBLE_SWEEP: [f64; 4] = [0.1, 0.25, 0.5, 1.0];

fn variant(name: impl Into<String>, base: &ExperimentConfig, edit: impl FnOnce(&mut ExperimentConfig)) -> Variant {
    let mut config = base.clone();
    let name = name.into();
    config.name = name.clone();
    edit(&mut config);
    Variant { name, config }
}

fn no_cmc(c: &mut ExperimentConfig) {
    c.schedule.lambda_max_2d = 0.0;
    c.schedule.lambda_max_3d = 0.0;
}

fn cmp(variant: &str, baseline: &str, metric: Metric) -> Comparison {
    Comparison { variant: variant.into(), baseline: baseline.into(), metric }
}

fn scribble_length(c: &mut ExperimentConfig, length_scale: f64) {
    let thickness = match c.dataset.annotation {
        AnnotationKind::Scribbles { thickness, .. } => thickness,
        _ => 1,
    };
    c.dataset.annotation = AnnotationKind::Scribbles { length_scale, thickness };
}

/// Variants of `suite` derived from the `base` configuration.
pub fn suite_spec(suite: Suite, base: &ExperimentConfig) -> SuiteSpec {
    use Metric::*;
    let (variants, comparisons) = match suite {
        Suite::Main => (
            vec![variant("ema", base, no_cmc), variant("ours", base, |_| {})],
            vec![cmp("ours", "ema", Miou2d), cmp("ours", "ema", Miou3d)],
        ),
        Suite::Confidence => {
            let modes = [
                ("no_filtering", ConfidenceMode::None),
                ("prediction", ConfidenceMode::Prediction),
                ("reconstruction", ConfidenceMode::Reconstruction),
                ("both", ConfidenceMode::Both),
            ];
            (
                modes.iter().map(|&(n, m)| variant(n, base, |c| c.cmc.confidence = m)).collect(),
                modes[1..].iter().map(|&(n, _)| cmp(n, "no_filtering", Miou2d)).collect(),
            )
        }
        Suite::Sampling => (
            vec![
                variant("random", base, |c| c.sampling.strategy = SamplingStrategy::Random),
                variant("correspondences_only", base, |c| c.sampling.strategy = SamplingStrategy::CorrespondencesOnly),
                variant("view_aware", base, |c| c.sampling.strategy = SamplingStrategy::ViewAware),
            ],
            vec![cmp("view_aware", "random", Miou2d), cmp("view_aware", "correspondences_only", Miou3d)],
        ),
        Suite::ReconQuality => (
            vec![
                variant("single_frame", base, |c| c.dataset.reconstruction = Reconstruction::SingleFrame),
                variant("multi_view", base, |c| c.dataset.reconstruction = Reconstruction::MultiView),
            ],
            vec![cmp("multi_view", "single_frame", Miou2d)],
        ),
        Suite::ScribbleLength => {
            let mut vs = Vec::new();
            let mut cs = Vec::new();
            for l in SCRIBBLE_SWEEP {
                let (e, o) = (format!("ema@{l}"), format!("ours@{l}"));
                vs.push(variant(e.clone(), base, |c| {
                    scribble_length(c, l);
                    no_cmc(c)
                }));
                vs.push(variant(o.clone(), base, |c| scribble_length(c, l)));
                cs.push(cmp(&o, &e, Miou2d));
            }
            (vs, cs)
        }
        Suite::SimulatedLidar => (
            vec![
                variant("simulated_lidar", base, |c| {
                    c.dataset.density = Density::single_scan();
                    c.cmc.confidence = ConfidenceMode::Prediction;
                }),
                variant("dense_dual", base, |c| {
                    c.dataset.density = Density::Full;
                    c.cmc.confidence = ConfidenceMode::Both;
                }),
            ],
            vec![cmp("dense_dual", "simulated_lidar", Miou2d)],
        ),
    };
    SuiteSpec { suite, variants, comparisons }
}

/// One-sided sign test: probability of at least `wins` successes among the
/// non-tied pairs under a fair coin. Ties are dropped.
pub fn sign_test(diffs: &[f64]) -> f64 {
    let n = diffs.iter().filter(|d| **d != 0.0).count();
    let wins = diffs.iter().filter(|d| **d > 0.0).count();
    if n == 0 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in wins..=n {
        p += binomial(n, k);
    }
    p / 2f64.powi(n as i32)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Average ranks (1-based), ties sharing the mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendResult {
    pub suite: Suite,
    pub variant: String,
    pub baseline: String,
    pub metric: Metric,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<f64>,
    pub baseline_per_seed: Vec<f64>,
    pub mean: f64,
    pub baseline_mean: f64,
    pub mean_improvement: f64,
    pub wins: usize,
    pub p_value: f64,
    /// Largest per-seed drop below the baseline (0 if none).
    pub worst_regression: f64,
}

impl TrendResult {
    pub fn new(suite: Suite, comparison: &Comparison, seeds: &[u64], per_seed: Vec<f64>, baseline_per_seed: Vec<f64>) -> Self {
        let diffs: Vec<f64> = per_seed.iter().zip(&baseline_per_seed).map(|(a, b)| a - b).collect();
        let n = seeds.len().max(1) as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let baseline_mean = baseline_per_seed.iter().sum::<f64>() / n;
        Self {
            suite,
            variant: comparison.variant.clone(),
            baseline: comparison.baseline.clone(),
            metric: comparison.metric,
            seeds: seeds.to_vec(),
            mean,
            baseline_mean,
            mean_improvement: diffs.iter().sum::<f64>() / n,
            wins: diffs.iter().filter(|d| **d > 0.0).count(),
            p_value: sign_test(&diffs),
            worst_regression: diffs.iter().fold(0.0f64, |w, d| w.max(-d)),
            per_seed,
            baseline_per_seed,
        }
    }

    /// Significant improvement at `p <= 0.05`.
    pub fn significant(&self) -> bool {
        self.mean_improvement > 0.0 && self.p_value <= 0.05
    }

    /// Significant, or no worse on average with no seed losing more than
    /// `max_drop` points.
    pub fn at_least_as_good(&self, max_drop: f64) -> bool {
        self.significant() || (self.mean_improvement >= 0.0 && self.worst_regression <= max_drop)
    }
}

/// One trained run of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub suite: Suite,
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub data_hash: String,
    pub init_hash: String,
    pub metrics: MetricRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub suite: Suite,
    pub runs: Vec<RunRecord>,
    pub trends: Vec<TrendResult>,
}

impl SuiteResult {
    pub fn trend(&self, variant: &str, baseline: &str, metric: Metric) -> Option<&TrendResult> {
        self.trends.iter().find(|t| t.variant == variant && t.baseline == baseline && t.metric == metric)
    }

    /// Mean improvement for each scribble length, in sweep order.
    pub fn sweep_gains(&self) -> Vec<(f64, f64)> {
        SCRIBBLE_SWEEP
            .iter()
            .filter_map(|&l| self.trend(&format!("ours@{l}"), &format!("ema@{l}"), Metric::Miou2d).map(|t| (l, t.mean_improvement)))
            .collect()
    }
}

/// Hash of the data a run trains on.
pub fn data_hash(config: &DatasetConfig, seed: u64) -> Result<String> {
    Ok(sha256_hex(format!("{}|{seed}", serde_json::to_string(&serde_json::to_value(config)?)?).as_bytes()))
}

type Shared<T> = Arc<Mutex<HashMap<String, T>>>;

/// Run and dataset cache shared between suites, keyed by content hash.
#[derive(Default, Clone)]
pub struct RunCache {
    runs: Shared<(String, MetricRow)>,
    datasets: Shared<Arc<Dataset>>,
}

impl RunCache {
    fn dataset(&self, config: &DatasetConfig, seed: u64) -> Result<Arc<Dataset>> {
        let key = data_hash(config, seed)?;
        if let Some(d) = self.datasets.lock().expect("cache lock").get(&key) {
            return Ok(d.clone());
        }
        let d = Arc::new(Dataset::generate(config, seed)?);
        Ok(self.datasets.lock().expect("cache lock").entry(key).or_insert(d).clone())
    }

    /// Trains `config` unless an identical run is cached; returns
    /// `(config hash, init hash, final metrics)`.
    pub fn run(&self, config: &ExperimentConfig) -> Result<(String, String, MetricRow)> {
        // the variant name does not influence training
        let key = ExperimentConfig { name: String::new(), ..config.clone() }.hash()?;
        if let Some((init, m)) = self.runs.lock().expect("cache lock").get(&key) {
            return Ok((config.hash()?, init.clone(), *m));
        }
        let data = self.dataset(&config.dataset, config.seed)?;
        let summary = run_experiment(config, &data, &RunOptions::default())?;
        let m = *summary.final_metrics();
        self.runs.lock().expect("cache lock").insert(key, (summary.init_hash.clone(), m));
        Ok((summary.config_hash, summary.init_hash, m))
    }
}

/// Runs every variant of `suite` on every seed and computes the paired trends.
pub fn run_ablation_suite(suite: Suite, base: &ExperimentConfig, seeds: &[u64], cache: &RunCache) -> Result<SuiteResult> {
    let spec = suite_spec(suite, base);
    run_spec(&spec, seeds, cache)
}

pub fn run_spec(spec: &SuiteSpec, seeds: &[u64], cache: &RunCache) -> Result<SuiteResult> {
    if spec.variants.len() < 2 {
        return Err(Error::Config("an ablation needs at least two variants".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("an ablation needs at least one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..spec.variants.len()).flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    let work = |&(v, seed): &(usize, u64)| -> Result<RunRecord> {
        let variant = &spec.variants[v];
        let config = ExperimentConfig { seed, ..variant.config.clone() };
        let (config_hash, init_hash, metrics) = cache.run(&config)?;
        Ok(RunRecord {
            suite: spec.suite,
            variant: variant.name.clone(),
            seed,
            config_hash,
            data_hash: data_hash(&config.dataset, seed)?,
            init_hash,
            metrics,
        })
    };
    let runs: Vec<RunRecord> = if deterministic_mode() {
        jobs.iter().map(work).collect::<Result<_>>()?
    } else {
        jobs.par_iter().map(work).collect::<Result<_>>()?
    };
    // paired runs must share initialization per seed
    for &seed in seeds {
        let mut inits = runs.iter().filter(|r| r.seed == seed).map(|r| &r.init_hash);
        let first = inits.next().expect("at least one run per seed");
        if inits.any(|h| h != first) {
            return Err(Error::Contract(format!("variants of seed {seed} start from different initializations")));
        }
    }
    let scores = |name: &str, metric: Metric| -> Result<Vec<f64>> {
        seeds
            .iter()
            .map(|&s| {
                runs.iter()
                    .find(|r| r.variant == name && r.seed == s)
                    .map(|r| metric.of(&r.metrics))
                    .ok_or_else(|| Error::Config(format!("comparison names unknown variant `{name}`")))
            })
            .collect()
    };
    let trends = spec
        .comparisons
        .iter()
        .map(|c| Ok(TrendResult::new(spec.suite, c, seeds, scores(&c.variant, c.metric)?, scores(&c.baseline, c.metric)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteResult { suite: spec.suite, runs, trends })
}

pub const TREND_HEADER: [&str; 12] =
    ["suite", "variant", "baseline", "metric", "seeds", "mean", "baseline_mean", "mean_improvement", "wins", "p_value", "worst_regression", "per_seed"];

pub fn trends_csv(trends: &[TrendResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TREND_HEADER)?;
    for t in trends {
        let per_seed = t.per_seed.iter().zip(&t.baseline_per_seed).map(|(a, b)| format!("{a:.3}/{b:.3}")).collect::<Vec<_>>().join(";");
        w.write_record([
            t.suite.name().to_string(),
            t.variant.clone(),
            t.baseline.clone(),
            t.metric.name().to_string(),
            t.seeds.len().to_string(),
            format!("{:.4}", t.mean),
            format!("{:.4}", t.baseline_mean),
            format!("{:.4}", t.mean_improvement),
            t.wins.to_string(),
            format!("{:.5}", t.p_value),
            format!("{:.4}", t.worst_regression),
            per_seed,
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub const RUN_HEADER: [&str; 9] = ["suite", "variant", "seed", "miou_2d", "miou_2d_student", "miou_3d_true", "miou_3d_unprojected", "config_hash", "init_hash"];

pub fn runs_csv(runs: &[RunRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RUN_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for r in runs {
        w.write_record([
            r.suite.name().to_string(),
            r.variant.clone(),
            r.seed.to_string(),
            format!("{:.4}", r.metrics.miou_2d_teacher),
            format!("{:.4}", r.metrics.miou_2d_student),
            opt(r.metrics.miou_3d_true),
            opt(r.metrics.miou_3d_unprojected),
            r.config_hash.clone(),
            r.init_hash.clone(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Renders CSV text as a column-aligned table.
pub fn align_table(csv_text: &str) -> Result<String> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(csv_text.as_bytes());
    let rows: Vec<Vec<String>> = r.records().map(|rec| rec.map(|x| x.iter().map(str::to_string).collect())).collect::<std::result::Result<_, _>>()?;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row.iter().enumerate().map(|(c, s)| format!("{s:<w$}", w = widths[c])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
            out.push('\n');
        }
    }
    Ok(out)
}

/// Plot-ready rows `(suite, variant, baseline, metric, mean, baseline_mean,
/// mean_improvement)` from a trends CSV, plus the scribble sweep as
/// `length_scale` columns when present.
pub fn plot_csv(trends_csv_text: &str) -> Result<Vec<u8>> {
    let mut r = csv::Reader::from_reader(trends_csv_text.as_bytes());
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| Error::Format(format!("trends CSV lacks `{name}`")));
    let (variant, baseline, mean, base_mean, gain) = (col("variant")?, col("baseline")?, col("mean")?, col("baseline_mean")?, col("mean_improvement")?);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["series", "x", "variant_mean", "baseline_mean", "gain"])?;
    for rec in r.records() {
        let rec = rec?;
        let v = &rec[variant];
        let (series, x) = match v.split_once('@') {
            Some((s, x)) => (format!("{s}_vs_{}", rec[baseline].split('@').next().unwrap_or("")), x.to_string()),
            None => (format!("{v}_vs_{}", &rec[baseline]), String::new()),
        };
        w.write_record([series, x, rec[mean].to_string(), rec[base_mean].to_string(), rec[gain].to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Schedule;
    use crate::worldgen::CameraRig;

    #[test]
    fn sign_test_values() {
        assert!((sign_test(&[1.0; 5]) - 1.0 / 32.0).abs() < 1e-15);
        assert!((sign_test(&[1.0, 1.0, 1.0, 1.0, -1.0]) - 6.0 / 32.0).abs() < 1e-15);
        assert_eq!(sign_test(&[0.0, 0.0]), 1.0);
        // ties are dropped: 4 of 4 non-tied wins
        assert!((sign_test(&[1.0, 2.0, 0.0, 3.0, 4.0]) - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn spearman_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn confidence_suite_has_four_variants() {
        let spec = suite_spec(Suite::Confidence, &ExperimentConfig::default());
        let names: Vec<&str> = spec.variants.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["no_filtering", "prediction", "reconstruction", "both"]);
        let modes: Vec<ConfidenceMode> = spec.variants.iter().map(|v| v.config.cmc.confidence).collect();
        assert_eq!(modes, [ConfidenceMode::None, ConfidenceMode::Prediction, ConfidenceMode::Reconstruction, ConfidenceMode::Both]);
    }

    #[test]
    fn lidar_suite_mirrors_sparse_single_confidence() {
        let spec = suite_spec(Suite::SimulatedLidar, &ExperimentConfig::default());
        let lidar = &spec.variants[0].config;
        assert_eq!(lidar.dataset.density, Density::single_scan());
        assert_eq!(lidar.cmc.confidence, ConfidenceMode::Prediction);
        let dense = &spec.variants[1].config;
        assert_eq!(dense.dataset.density, Density::Full);
        assert_eq!(dense.cmc.confidence, ConfidenceMode::Both);
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse(s.name()).unwrap(), s);
        }
        assert!(Suite::parse("nope").is_err());
    }

    #[test]
    fn single_variant_is_rejected() {
        let mut spec = suite_spec(Suite::Main, &ExperimentConfig::default());
        spec.variants.truncate(1);
        assert!(matches!(run_spec(&spec, &[0], &RunCache::default()), Err(Error::Config(_))));
    }

    #[test]
    fn zero_epochs_give_identical_initial_scores() {
        let mut base = ExperimentConfig::default();
        base.dataset.rig = CameraRig { views: 3, width: 16, height: 16, focal: 14.0, ..CameraRig::default() };
        base.dataset.train_scenes = 1;
        base.dataset.eval_scenes = 1;
        base.schedule = Schedule { base_epochs: 0, ramp_epochs: 0, total_epochs: 0, ..Schedule::default() };
        let cache = RunCache::default();
        for suite in [Suite::Confidence, Suite::ScribbleLength, Suite::SimulatedLidar] {
            let r = run_ablation_suite(suite, &base, &[3, 4], &cache).unwrap();
            for seed in [3, 4] {
                let scores: Vec<f64> = r.runs.iter().filter(|x| x.seed == seed).map(|x| x.metrics.miou_2d_teacher).collect();
                assert!(scores.windows(2).all(|w| w[0] == w[1]), "{suite:?}");
            }
        }
    }

    #[test]
    fn table_alignment() {
        let t = align_table("a,bb\nccc,d\n").unwrap();
        assert_eq!(t, "a    bb\n---  --\nccc  d\n");
    }
}
