//! Loss terms with analytic gradients with respect to logits.
//!
//! Every function treats teacher logits as constants: gradients are returned
//! for the student side only.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{ClassId, Error, Result};

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - m).exp());
        let s = row.sum();
        row.mapv_inplace(|e| e / s);
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|z| z - lse);
    }
    out
}

/// First index of the row maximum and the maximum softmax probability.
pub fn argmax_confidence(logits: ArrayView2<'_, f64>) -> Vec<(usize, f64)> {
    softmax(logits)
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = (0, row[0]);
            for (k, &p) in row.iter().enumerate().skip(1) {
                if p > best.1 {
                    best = (k, p);
                }
            }
            best
        })
        .collect()
}

/// Mean cross-entropy over labeled rows. `labels[i] == C` (the number of
/// logit columns) marks an unlabeled row.
pub fn supervised_ce(logits: ArrayView2<'_, f64>, labels: &[ClassId]) -> Result<(f64, Array2<f64>)> {
    let (n, c) = logits.dim();
    if labels.len() != n {
        return Err(Error::Contract(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y as usize > c) {
        return Err(Error::Contract(format!("label {bad} out of range for {c} classes")));
    }
    let mut grad = Array2::zeros((n, c));
    let labeled = labels.iter().filter(|&&y| (y as usize) < c).count();
    if labeled == 0 {
        return Ok((0.0, grad));
    }
    let logp = log_softmax(logits);
    let scale = 1.0 / labeled as f64;
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let y = y as usize;
        if y == c {
            continue;
        }
        loss -= logp[[i, y]];
        for k in 0..c {
            grad[[i, k]] = scale * (logp[[i, k]].exp() - if k == y { 1.0 } else { 0.0 });
        }
    }
    Ok((loss * scale, grad))
}

fn check_pair(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, mask_len: usize) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!("student logits {:?} vs teacher logits {:?}", a.dim(), b.dim())));
    }
    if mask_len != a.nrows() {
        return Err(Error::Contract(format!("mask of {mask_len} entries for {} rows", a.nrows())));
    }
    Ok(())
}

/// Mean over masked rows of `KL(softmax(teacher) || softmax(student))`.
pub fn consistency_kl(student: ArrayView2<'_, f64>, teacher: ArrayView2<'_, f64>, mask: &[bool]) -> Result<(f64, Array2<f64>)> {
    check_pair(student, teacher, mask.len())?;
    let (n, c) = student.dim();
    let mut grad = Array2::zeros((n, c));
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Ok((0.0, grad));
    }
    let ls = log_softmax(student);
    let lt = log_softmax(teacher);
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    for i in (0..n).filter(|&i| mask[i]) {
        let mut kl = 0.0;
        for k in 0..c {
            let pt = lt[[i, k]].exp();
            if pt > 0.0 {
                kl += pt * (lt[[i, k]] - ls[[i, k]]);
            }
            grad[[i, k]] = scale * (ls[[i, k]].exp() - pt);
        }
        // guards the tiny negative values rounding can produce
        loss += kl.max(0.0);
    }
    Ok((loss * scale, grad))
}

/// Fraction of masked rows whose teacher max-softmax probability is at least
/// `tau`; 0 for an empty mask.
pub fn confidence_weight(teacher: ArrayView2<'_, f64>, mask: &[bool], tau: f64) -> Result<f64> {
    if mask.len() != teacher.nrows() {
        return Err(Error::Contract(format!("mask of {} entries for {} rows", mask.len(), teacher.nrows())));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("confidence threshold {tau} outside (0, 1)")));
    }
    let conf = argmax_confidence(teacher);
    let total = mask.iter().filter(|&&m| m).count();
    if total == 0 {
        return Ok(0.0);
    }
    let hits = conf.iter().zip(mask).filter(|((_, p), &m)| m && *p >= tau).count();
    Ok(hits as f64 / total as f64)
}

/// `(1 - beta) * l_s + beta * w_t * l_u`.
pub fn branch_objective(l_s: f64, l_u: f64, w_t: f64, beta: f64) -> f64 {
    (1.0 - beta) * l_s + beta * w_t * l_u
}

/// Which confidence factors enter the cross-modal weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    /// Every correspondence weighs 1.
    None,
    Prediction,
    Reconstruction,
    #[default]
    Both,
}

impl ConfidenceMode {
    pub fn weight(self, prediction: f64, reconstruction: f64) -> f64 {
        match self {
            ConfidenceMode::None => 1.0,
            ConfidenceMode::Prediction => prediction,
            ConfidenceMode::Reconstruction => reconstruction,
            ConfidenceMode::Both => prediction * reconstruction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmcOptions {
    pub confidence: ConfidenceMode,
    /// Divide by the total weight (default) instead of returning the raw sum.
    pub normalize: bool,
}

impl Default for CmcOptions {
    fn default() -> Self {
        Self { confidence: ConfidenceMode::Both, normalize: true }
    }
}

/// Weighted cross-entropy of the student against the other modality's
/// teacher hard labels. Row `i` of both logit matrices and `rec_confidence[i]`
/// describe correspondence `i`.
pub fn cmc_loss(
    student: ArrayView2<'_, f64>,
    teacher: ArrayView2<'_, f64>,
    rec_confidence: &[f64],
    options: &CmcOptions,
) -> Result<(f64, Array2<f64>)> {
    check_pair(student, teacher, rec_confidence.len())?;
    let (n, c) = student.dim();
    let mut grad = Array2::zeros((n, c));
    if n == 0 {
        return Ok((0.0, grad));
    }
    let targets = argmax_confidence(teacher);
    let weights: Vec<f64> = targets.iter().zip(rec_confidence).map(|(&(_, p), &r)| options.confidence.weight(p, r)).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Ok((0.0, grad));
    }
    let norm = if options.normalize { total } else { 1.0 };
    let ls = log_softmax(student);
    let mut loss = 0.0;
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let y = targets[i].0;
        loss -= w * ls[[i, y]];
        for k in 0..c {
            grad[[i, k]] = w / norm * (ls[[i, k]].exp() - if k == y { 1.0 } else { 0.0 });
        }
    }
    Ok((loss / norm, grad))
}

/// How each modality's supervised and consistency terms enter the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TotalForm {
    /// `(1 - beta) L_S + beta w_t L_U` per modality.
    #[default]
    BranchWeighted,
    /// Plain `L_S + L_U` per modality.
    Plain,
}

/// Loss terms for one modality on one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BranchTerms {
    pub supervised: f64,
    pub consistency: f64,
    pub weight: f64,
    pub labeled: usize,
    pub unlabeled: usize,
}

impl BranchTerms {
    pub fn objective(&self, beta: f64, form: TotalForm) -> f64 {
        match form {
            TotalForm::BranchWeighted => branch_objective(self.supervised, self.consistency, self.weight, beta),
            TotalForm::Plain => self.supervised + self.consistency,
        }
    }
}

/// All loss components of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub ls_2d: f64,
    pub lu_2d: f64,
    pub ls_3d: f64,
    pub lu_3d: f64,
    pub lc_2d: f64,
    pub lc_3d: f64,
    pub wt_2d: f64,
    pub wt_3d: f64,
    pub lambda_2d: f64,
    pub lambda_3d: f64,
    pub total: f64,
    pub labeled_2d: usize,
    pub unlabeled_2d: usize,
    pub labeled_3d: usize,
    pub unlabeled_3d: usize,
    pub correspondences: usize,
}

impl LossReport {
    pub const HEADER: [&'static str; 16] = [
        "ls_2d",
        "lu_2d",
        "ls_3d",
        "lu_3d",
        "lc_2d",
        "lc_3d",
        "wt_2d",
        "wt_3d",
        "lambda_2d",
        "lambda_3d",
        "total",
        "labeled_2d",
        "unlabeled_2d",
        "labeled_3d",
        "unlabeled_3d",
        "correspondences",
    ];

    /// Values in [`LossReport::HEADER`] order; reals use the shortest
    /// round-trip representation so logs compare bit-for-bit.
    pub fn record(&self) -> Vec<String> {
        let reals = [
            self.ls_2d,
            self.lu_2d,
            self.ls_3d,
            self.lu_3d,
            self.lc_2d,
            self.lc_3d,
            self.wt_2d,
            self.wt_3d,
            self.lambda_2d,
            self.lambda_3d,
            self.total,
        ];
        let counts = [self.labeled_2d, self.unlabeled_2d, self.labeled_3d, self.unlabeled_3d, self.correspondences];
        reals.iter().map(|v| format!("{v:?}")).chain(counts.iter().map(|c| c.to_string())).collect()
    }
}

/// Sum of both branch objectives plus the lambda-weighted cross-modal terms.
#[allow(clippy::too_many_arguments)]
pub fn total_objective(
    two_d: &BranchTerms,
    three_d: &BranchTerms,
    lc_2d: f64,
    lc_3d: f64,
    correspondences: usize,
    beta: f64,
    lambda_2d: f64,
    lambda_3d: f64,
    form: TotalForm,
) -> LossReport {
    let total = two_d.objective(beta, form) + three_d.objective(beta, form) + lambda_2d * lc_2d + lambda_3d * lc_3d;
    LossReport {
        ls_2d: two_d.supervised,
        lu_2d: two_d.consistency,
        ls_3d: three_d.supervised,
        lu_3d: three_d.consistency,
        lc_2d,
        lc_3d,
        wt_2d: two_d.weight,
        wt_3d: three_d.weight,
        lambda_2d,
        lambda_3d,
        total,
        labeled_2d: two_d.labeled,
        unlabeled_2d: two_d.unlabeled,
        labeled_3d: three_d.labeled,
        unlabeled_3d: three_d.unlabeled,
        correspondences,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_logits(rng: &mut ChaCha8Rng, n: usize, c: usize, spread: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, c), |_| rng.random_range(-spread..spread))
    }

    /// Central differences of `f` with respect to every entry of `z`.
    fn numeric_grad(z: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
        let h = 1e-5;
        let mut g = Array2::zeros(z.dim());
        for idx in 0..z.len() {
            let (i, k) = (idx / z.ncols(), idx % z.ncols());
            let mut zp = z.clone();
            zp[[i, k]] += h;
            let mut zm = z.clone();
            zm[[i, k]] -= h;
            g[[i, k]] = (f(&zp) - f(&zm)) / (2.0 * h);
        }
        g
    }

    fn max_rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / (x.abs().max(y.abs()).max(1e-6))).fold(0.0, f64::max)
    }

    #[test]
    fn uniform_logits_ce_is_ln_c() {
        let (l, _) = supervised_ce(Array2::zeros((3, 4)).view(), &[0, 2, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_without_labels_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = random_logits(&mut rng, 5, 3, 2.0);
        let (l, g) = supervised_ce(z.view(), &[3; 5]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(matches!(supervised_ce(z.view(), &[4, 0, 0, 0, 0]), Err(Error::Contract(_))));
    }

    #[test]
    fn ce_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let z = random_logits(&mut rng, 7, 4, 3.0);
            let labels: Vec<ClassId> = (0..7).map(|_| rng.random_range(0..=4)).collect();
            let (l, g) = supervised_ce(z.view(), &labels).unwrap();
            let mut naive = 0.0;
            let mut n = 0;
            for (i, &y) in labels.iter().enumerate() {
                if y == 4 {
                    continue;
                }
                let denom: f64 = (0..4).map(|k| z[[i, k]].exp()).sum();
                naive += -(z[[i, y as usize]].exp() / denom).ln();
                n += 1;
            }
            let naive = if n == 0 { 0.0 } else { naive / n as f64 };
            assert!((l - naive).abs() < 1e-12);
            let fd = numeric_grad(&z, |z| supervised_ce(z.view(), &labels).unwrap().0);
            assert!(max_rel_err(&g, &fd) < 1e-4);
        }
    }

    #[test]
    fn kl_identity_and_one_hot_limit() {
        let z = array![[0.3, -1.2, 2.0]];
        assert!(consistency_kl(z.view(), z.view(), &[true]).unwrap().0.abs() < 1e-15);
        let (l, _) = consistency_kl(array![[0.0, 0.0]].view(), array![[20.0, -20.0]].view(), &[true]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn kl_matches_double_loop_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let s = random_logits(&mut rng, 6, 5, 3.0);
            let t = random_logits(&mut rng, 6, 5, 3.0);
            let mask: Vec<bool> = (0..6).map(|_| rng.random_bool(0.7)).collect();
            let (l, g) = consistency_kl(s.view(), t.view(), &mask).unwrap();
            let mut naive = 0.0;
            let mut n = 0;
            for i in 0..6 {
                if !mask[i] {
                    continue;
                }
                let zs: f64 = (0..5).map(|k| s[[i, k]].exp()).sum();
                let zt: f64 = (0..5).map(|k| t[[i, k]].exp()).sum();
                for k in 0..5 {
                    let pt = t[[i, k]].exp() / zt;
                    let ps = s[[i, k]].exp() / zs;
                    naive += pt * (pt / ps).ln();
                }
                n += 1;
            }
            let naive = if n == 0 { 0.0 } else { naive / n as f64 };
            assert!((l - naive).abs() < 1e-12);
            let fd = numeric_grad(&s, |s| consistency_kl(s.view(), t.view(), &mask).unwrap().0);
            assert!(max_rel_err(&g, &fd) < 1e-4);
        }
    }

    #[test]
    fn confidence_weight_counts() {
        // softmax max-probs 0.9, 0.4, 0.6 for C = 2 would need 0.4 >= 0.5;
        // use three classes to realize a max-prob of 0.4
        let rows = [[0.9f64, 0.1, 0.0], [0.4, 0.3, 0.3], [0.6, 0.4, 0.0]];
        let z = Array2::from_shape_fn((3, 3), |(i, k)| rows[i][k].max(1e-300).ln());
        assert!((confidence_weight(z.view(), &[true; 3], 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(confidence_weight(z.view(), &[true; 3], 0.3).unwrap(), 1.0);
        assert_eq!(confidence_weight(z.view(), &[false; 3], 0.3).unwrap(), 0.0);
        assert!(confidence_weight(z.view(), &[true; 3], 1.0).is_err());
    }

    #[test]
    fn branch_objective_arithmetic() {
        assert_eq!(branch_objective(2.0, 4.0, 0.5, 0.0), 2.0);
        assert_eq!(branch_objective(2.0, 4.0, 0.0, 1.0), 0.0);
        assert_eq!(branch_objective(2.0, 4.0, 0.5, 0.5), 2.0);
    }

    #[test]
    fn cmc_single_correspondence_is_ln2() {
        // teacher is certain about class 1, student splits 1 and 0 evenly
        let student = array![[0.0, 0.0, -1e9]];
        let teacher = array![[-50.0, 50.0, -50.0]];
        let (l, _) = cmc_loss(student.view(), teacher.view(), &[1.0], &CmcOptions::default()).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cmc_zero_reconstruction_confidence_annihilates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_logits(&mut rng, 4, 3, 2.0);
        let t = random_logits(&mut rng, 4, 3, 2.0);
        let (l, g) = cmc_loss(s.view(), t.view(), &[0.0; 4], &CmcOptions::default()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        let (l, _) = cmc_loss(Array2::zeros((0, 3)).view(), Array2::zeros((0, 3)).view(), &[], &CmcOptions::default()).unwrap();
        assert_eq!(l, 0.0);
        assert!(cmc_loss(s.view(), t.view(), &[1.0; 3], &CmcOptions::default()).is_err());
    }

    #[test]
    fn cmc_matches_weighted_mean_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..20 {
            let s = random_logits(&mut rng, 8, 4, 3.0);
            let t = random_logits(&mut rng, 8, 4, 3.0);
            let rec: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
            let options = CmcOptions { confidence: ConfidenceMode::Both, normalize: trial % 2 == 0 };
            let (l, g) = cmc_loss(s.view(), t.view(), &rec, &options).unwrap();
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..8 {
                let zt: f64 = (0..4).map(|k| t[[i, k]].exp()).sum();
                let (mut y, mut best) = (0, f64::MIN);
                for k in 0..4 {
                    if t[[i, k]] > best {
                        best = t[[i, k]];
                        y = k;
                    }
                }
                let w = best.exp() / zt * rec[i];
                let zs: f64 = (0..4).map(|k| s[[i, k]].exp()).sum();
                num += w * -(s[[i, y]].exp() / zs).ln();
                den += w;
            }
            let naive = if options.normalize { num / den } else { num };
            assert!((l - naive).abs() < 1e-10 * naive.max(1.0));
            let fd = numeric_grad(&s, |s| cmc_loss(s.view(), t.view(), &rec, &options).unwrap().0);
            assert!(max_rel_err(&g, &fd) < 1e-4);
        }
    }

    #[test]
    fn cmc_weight_modes() {
        assert_eq!(ConfidenceMode::None.weight(0.3, 0.2), 1.0);
        assert_eq!(ConfidenceMode::Prediction.weight(0.3, 0.2), 0.3);
        assert_eq!(ConfidenceMode::Reconstruction.weight(0.3, 0.2), 0.2);
        assert!((ConfidenceMode::Both.weight(0.3, 0.2) - 0.06).abs() < 1e-15);
    }

    #[test]
    fn total_matches_hand_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut terms = || BranchTerms {
                supervised: rng.random_range(0.0..3.0),
                consistency: rng.random_range(0.0..1.0),
                weight: rng.random_range(0.0..1.0),
                labeled: 1,
                unlabeled: 2,
            };
            let (a, b) = (terms(), terms());
            let (lc2, lc3, beta, l2, l3) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), 0.5, 0.1, 0.07);
            let r = total_objective(&a, &b, lc2, lc3, 9, beta, l2, l3, TotalForm::BranchWeighted);
            let hand = 0.5 * a.supervised + 0.5 * a.weight * a.consistency + 0.5 * b.supervised + 0.5 * b.weight * b.consistency + l2 * lc2 + l3 * lc3;
            assert!((r.total - hand).abs() < 1e-12);
            let p = total_objective(&a, &b, lc2, lc3, 9, beta, 0.0, 0.0, TotalForm::Plain);
            assert!((p.total - (a.supervised + a.consistency + b.supervised + b.consistency)).abs() < 1e-12);
        }
        assert_eq!(total_objective(&BranchTerms::default(), &BranchTerms::default(), 0.0, 0.0, 0, 0.5, 0.1, 0.1, TotalForm::BranchWeighted).total, 0.0);
    }

    #[test]
    fn record_has_header_width() {
        assert_eq!(LossReport::default().record().len(), LossReport::HEADER.len());
    }

    proptest! {
        #[test]
        fn losses_are_non_negative(seed in 0u64..10_000, n in 1usize..6, c in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_logits(&mut rng, n, c, 8.0);
            let t = random_logits(&mut rng, n, c, 8.0);
            let labels: Vec<ClassId> = (0..n).map(|_| rng.random_range(0..=c as ClassId)).collect();
            let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let rec: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
            prop_assert!(supervised_ce(s.view(), &labels).unwrap().0 >= 0.0);
            prop_assert!(consistency_kl(s.view(), t.view(), &mask).unwrap().0 >= 0.0);
            prop_assert!(cmc_loss(s.view(), t.view(), &rec, &CmcOptions::default()).unwrap().0 >= 0.0);
        }

        #[test]
        fn weight_is_non_increasing_in_tau(seed in 0u64..10_000, t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_logits(&mut rng, 12, 4, 4.0);
            let mask = vec![true; 12];
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(confidence_weight(t.view(), &mask, hi).unwrap() <= confidence_weight(t.view(), &mask, lo).unwrap());
        }

        #[test]
        fn zero_weight_rows_get_zero_gradient(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_logits(&mut rng, 6, 3, 3.0);
            let t = random_logits(&mut rng, 6, 3, 3.0);
            let rec: Vec<f64> = (0..6).map(|i| if i % 2 == 0 { 0.0 } else { rng.random_range(0.1..1.0) }).collect();
            let (_, g) = cmc_loss(s.view(), t.view(), &rec, &CmcOptions::default()).unwrap();
            for i in (0..6).step_by(2) {
                prop_assert!(g.row(i).iter().all(|&v| v == 0.0));
            }
        }

        #[test]
        fn hard_label_invariance(seed in 0u64..10_000, shift in -5.0f64..5.0) {
            // permuting the non-maximal teacher logits keeps argmax and max-softmax
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_logits(&mut rng, 5, 4, 3.0);
            let t = random_logits(&mut rng, 5, 4, 3.0);
            let mut t2 = t.clone();
            for mut row in t2.rows_mut() {
                let y = row.iter().enumerate().fold(0, |b, (k, &v)| if v > row[b] { k } else { b });
                let others: Vec<usize> = (0..4).filter(|&k| k != y).collect();
                let vals: Vec<f64> = others.iter().map(|&k| row[k]).collect();
                for (j, &k) in others.iter().enumerate() {
                    row[k] = vals[(j + 1) % vals.len()];
                }
                row.mapv_inplace(|v| v + shift);
            }
            let rec = vec![0.7; 5];
            let (a, ga) = cmc_loss(s.view(), t.view(), &rec, &CmcOptions::default()).unwrap();
            let (b, gb) = cmc_loss(s.view(), t2.view(), &rec, &CmcOptions::default()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(ga.iter().zip(gb.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }
}
