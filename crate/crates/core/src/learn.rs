//! Standardization, L2-regularized logistic regression, subject-wise
//! cross-validation and ROC/PR metrics with bootstrap intervals.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleKey {
    pub sample_id: String,
    pub subject_id: String,
    pub label: bool,
}

fn check_matrix(x: &[Vec<f64>]) -> Result<usize> {
    let d = x
        .first()
        .map(|r| r.len())
        .ok_or_else(|| Error::InvalidArgument("empty feature matrix".into()))?;
    for (i, r) in x.iter().enumerate() {
        if r.len() != d {
            return Err(Error::DimensionMismatch(format!("row {i} has {} features, expected {d}", r.len())));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("row {i} has a non-finite feature")));
        }
    }
    Ok(d)
}

fn check_classes(y: &[bool]) -> Result<(usize, usize)> {
    let pos = y.iter().filter(|&&v| v).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(format!("{pos} positive and {neg} negative samples")));
    }
    Ok((pos, neg))
}

// ---------------------------------------------------------------- standardizer

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Columns with zero training variance; their std is stored as 1.
    pub constant: Vec<bool>,
}

impl Standardizer {
    /// Column means and population standard deviations.
    pub fn fit(x: &[Vec<f64>]) -> Result<Self> {
        let d = check_matrix(x)?;
        if x.len() < 2 {
            return Err(Error::InvalidArgument("standardizer needs at least 2 samples".into()));
        }
        let n = x.len() as f64;
        let mut means = vec![0.0; d];
        for r in x {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; d];
        for r in x {
            for j in 0..d {
                vars[j] += (r[j] - means[j]).powi(2);
            }
        }
        let mut constant = vec![false; d];
        let stds = vars
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let s = (v / n).sqrt();
                // relative floor keeps round-off in a constant column from
                // being blown up to unit variance
                if s <= 1e-12 * (1.0 + means[j].abs()) {
                    constant[j] = true;
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Standardizer { means, stds, constant })
    }

    pub fn width(&self) -> usize {
        self.means.len()
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.width() {
            return Err(Error::DimensionMismatch(format!(
                "row has {} features, standardizer {}",
                row.len(),
                self.width()
            )));
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, v)| if self.constant[j] { 0.0 } else { (v - self.means[j]) / self.stds[j] })
            .collect())
    }

    pub fn apply(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        x.iter().map(|r| self.apply_row(r)).collect()
    }
}

// ---------------------------------------------------------------- logistic regression

pub const GRAD_TOL: f64 = 1e-6;
pub const MAX_ITERS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub converged: bool,
    pub n_iters: usize,
    /// Objective value before each solver step and at the end.
    #[serde(skip)]
    pub loss_trace: Vec<f64>,
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss plus `lambda / (2n) * |w|^2` and its gradient; the
/// gradient's last entry is the (unpenalized) bias component.
pub fn logistic_objective(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, lambda: f64) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let d = w.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for (r, &yi) in x.iter().zip(y) {
        let z = r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
        let t = yi as u8 as f64;
        loss += softplus(z) - t * z;
        let e = sigmoid(z) - t;
        for j in 0..d {
            grad[j] += e * r[j];
        }
        grad[d] += e;
    }
    let wsq: f64 = w.iter().map(|v| v * v).sum();
    loss = loss / n + lambda / (2.0 * n) * wsq;
    for j in 0..d {
        grad[j] = grad[j] / n + lambda / n * w[j];
    }
    grad[d] /= n;
    (loss, grad)
}

struct Problem {
    /// n x (d + 1) with a trailing column of ones
    x: DMatrix<f64>,
    t: DVector<f64>,
    lambda: f64,
}

impl Problem {
    fn n(&self) -> f64 {
        self.x.nrows() as f64
    }

    fn d(&self) -> usize {
        self.x.ncols() - 1
    }

    fn loss(&self, theta: &DVector<f64>) -> f64 {
        let z = &self.x * theta;
        let data: f64 = z.iter().zip(self.t.iter()).map(|(&z, &t)| softplus(z) - t * z).sum();
        let wsq: f64 = theta.rows(0, self.d()).norm_squared();
        data / self.n() + self.lambda / (2.0 * self.n()) * wsq
    }

    fn grad_hess(&self, theta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = self.n();
        let d = self.d();
        let z = &self.x * theta;
        let mut loss = 0.0;
        let mut e = DVector::zeros(z.len());
        let mut sx = self.x.clone();
        for i in 0..z.len() {
            let (zi, ti) = (z[i], self.t[i]);
            loss += softplus(zi) - ti * zi;
            let p = sigmoid(zi);
            e[i] = p - ti;
            let s = (p * (1.0 - p)).sqrt();
            sx.row_mut(i).scale_mut(s);
        }
        let wsq: f64 = theta.rows(0, d).norm_squared();
        loss = loss / n + self.lambda / (2.0 * n) * wsq;
        let mut g = self.x.tr_mul(&e) / n;
        let mut h = sx.tr_mul(&sx) / n;
        for j in 0..d {
            g[j] += self.lambda / n * theta[j];
            h[(j, j)] += self.lambda / n;
        }
        (loss, g, h)
    }
}

/// Damped Newton iteration from zero with Armijo backtracking, so the loss
/// trace never increases. Stops when the gradient max-norm reaches
/// [`GRAD_TOL`] or after [`MAX_ITERS`] steps.
pub fn logreg_fit(x: &[Vec<f64>], y: &[bool], lambda: f64) -> Result<LogRegModel> {
    let d = check_matrix(x)?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} rows but {} labels", x.len(), y.len())));
    }
    check_classes(y)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    let n = x.len();
    let prob = Problem {
        x: DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[i][j] } else { 1.0 }),
        t: DVector::from_fn(n, |i, _| y[i] as u8 as f64),
        lambda,
    };
    let mut theta = DVector::zeros(d + 1);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    while iters < MAX_ITERS {
        let (loss, g, mut h) = prob.grad_hess(&theta);
        trace.push(loss);
        if g.amax() <= GRAD_TOL {
            converged = true;
            break;
        }
        // bias direction is unpenalized; a tiny ridge keeps the Hessian
        // positive definite on saturated or separable data
        let mut jitter = 1e-12;
        let step = loop {
            if let Some(ch) = h.clone().cholesky() {
                break ch.solve(&(-&g));
            }
            for j in 0..=d {
                h[(j, j)] += jitter;
            }
            jitter *= 10.0;
            if jitter > 1e6 {
                break -g.clone();
            }
        };
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &theta + &step * t;
            let l = prob.loss(&cand);
            if l <= loss + 1e-4 * t * slope {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        iters += 1;
        match accepted {
            Some(c) => theta = c,
            None => {
                log::debug!("line search stalled at gradient {:.3e}", g.amax());
                break;
            }
        }
    }
    if !converged {
        let (loss, g, _) = prob.grad_hess(&theta);
        if trace.last() != Some(&loss) {
            trace.push(loss);
        }
        converged = g.amax() <= GRAD_TOL;
        if !converged {
            log::warn!("logistic regression stopped after {iters} steps, gradient {:.3e}", g.amax());
        }
    }
    let weights: Vec<f64> = theta.rows(0, d).iter().copied().collect();
    if weights.iter().any(|w| !w.is_finite()) || !theta[d].is_finite() {
        return Err(Error::Degenerate("logistic regression diverged".into()));
    }
    Ok(LogRegModel {
        weights,
        bias: theta[d],
        lambda,
        converged,
        n_iters: iters,
        loss_trace: trace,
    })
}

impl LogRegModel {
    pub fn decision(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "row has {} features, model {}",
                row.len(),
                self.weights.len()
            )));
        }
        Ok(row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.bias)
    }

    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        x.iter().map(|r| self.decision(r).map(sigmoid)).collect()
    }
}

/// Standardizer plus model fitted on the standardized training data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub standardizer: Standardizer,
    pub model: LogRegModel,
}

impl TrainedModel {
    /// Constant training columns are left out of the solve and get weight 0.
    pub fn fit(x: &[Vec<f64>], y: &[bool], lambda: f64) -> Result<Self> {
        let standardizer = Standardizer::fit(x)?;
        let keep: Vec<usize> = (0..standardizer.width()).filter(|&j| !standardizer.constant[j]).collect();
        let z = standardizer.apply(x)?;
        let reduced: Vec<Vec<f64>> = z.iter().map(|r| keep.iter().map(|&j| r[j]).collect()).collect();
        let fitted = if keep.is_empty() {
            // intercept only
            let ones: Vec<Vec<f64>> = vec![vec![0.0]; x.len()];
            let mut m = logreg_fit(&ones, y, lambda)?;
            m.weights.clear();
            m
        } else {
            logreg_fit(&reduced, y, lambda)?
        };
        let mut weights = vec![0.0; standardizer.width()];
        for (k, &j) in keep.iter().enumerate() {
            weights[j] = fitted.weights[k];
        }
        Ok(TrainedModel {
            standardizer,
            model: LogRegModel { weights, ..fitted },
        })
    }

    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.model.predict_proba(&self.standardizer.apply(x)?)
    }

    /// Weights and bias acting directly on raw features.
    pub fn absorbed(&self) -> (Vec<f64>, f64) {
        let s = &self.standardizer;
        let mut bias = self.model.bias;
        let weights = (0..s.width())
            .map(|j| {
                if s.constant[j] {
                    0.0
                } else {
                    let w = self.model.weights[j] / s.stds[j];
                    bias -= w * s.means[j];
                    w
                }
            })
            .collect();
        (weights, bias)
    }

    pub fn to_file(&self, descriptor: &str, roi_tag: &str) -> ModelFile {
        ModelFile {
            weights: self.model.weights.clone(),
            bias: self.model.bias,
            lambda: self.model.lambda,
            means: self.standardizer.means.clone(),
            stds: self.standardizer.stds.clone(),
            descriptor: descriptor.to_string(),
            roi_tag: roi_tag.to_string(),
        }
    }
}

/// Persisted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub descriptor: String,
    pub roi_tag: String,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn into_trained(self) -> Result<TrainedModel> {
        let d = self.weights.len();
        if self.means.len() != d || self.stds.len() != d {
            return Err(Error::DimensionMismatch("model vectors differ in length".into()));
        }
        let constant = self.weights.iter().zip(&self.stds).map(|(&w, &s)| w == 0.0 && s == 1.0).collect();
        Ok(TrainedModel {
            standardizer: Standardizer {
                means: self.means,
                stds: self.stds,
                constant,
            },
            model: LogRegModel {
                weights: self.weights,
                bias: self.bias,
                lambda: self.lambda,
                converged: true,
                n_iters: 0,
                loss_trace: Vec::new(),
            },
        })
    }
}

// ---------------------------------------------------------------- metrics

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    check_classes(labels)
}

/// Indices sorted by descending score, ties broken by index.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Runs of equal scores in `order` as `(positives, negatives)` counts.
fn tie_groups(scores: &[f64], labels: &[bool], order: &[usize]) -> Vec<(u64, u64)> {
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut prev: Option<f64> = None;
    for &i in order {
        if prev != Some(scores[i]) {
            groups.push((0, 0));
            prev = Some(scores[i]);
        }
        let g = groups.last_mut().expect("group pushed");
        if labels[i] {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Mann-Whitney AUC, ties counted 1/2, computed from integer pair counts.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_scores(scores, labels)?;
    let order = descending(scores);
    let mut twice_wins: u128 = 0;
    let mut neg_below = neg as u128;
    for (p, n) in tie_groups(scores, labels, &order) {
        neg_below -= n as u128;
        twice_wins += p as u128 * (2 * neg_below + n as u128);
    }
    Ok(twice_wins as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Step-sum average precision over descending distinct thresholds.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_scores(scores, labels)?;
    let order = descending(scores);
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, n) in tie_groups(scores, labels, &order) {
        tp += p;
        fp += n;
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / (tp + fp) as f64);
        prev_recall = recall;
    }
    Ok(ap)
}

/// `(fpr, tpr)` points from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check_scores(scores, labels)?;
    let order = descending(scores);
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (p, n) in tie_groups(scores, labels, &order) {
        tp += p;
        fp += n;
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(pts)
}

/// `(recall, precision)` points, one per distinct threshold, starting at
/// recall 0 with precision 1.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, _) = check_scores(scores, labels)?;
    let order = descending(scores);
    let mut pts = vec![(0.0, 1.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for (p, n) in tie_groups(scores, labels, &order) {
        tp += p;
        fp += n;
        pts.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
    }
    Ok(pts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Auc,
    Ap,
}

impl Metric {
    pub fn compute(self, scores: &[f64], labels: &[bool]) -> Result<f64> {
        match self {
            Metric::Auc => roc_auc(scores, labels),
            Metric::Ap => average_precision(scores, labels),
        }
    }
}

/// Linear-interpolated percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn stratified_resample(
    rng: &mut ChaCha8Rng,
    pos: &[usize],
    neg: &[usize],
    scores: &[f64],
    s: &mut Vec<f64>,
    l: &mut Vec<bool>,
) {
    s.clear();
    l.clear();
    for (group, label) in [(pos, true), (neg, false)] {
        for _ in 0..group.len() {
            s.push(scores[group[rng.random_range(0..group.len())]]);
            l.push(label);
        }
    }
}

fn split_classes(labels: &[bool]) -> (Vec<usize>, Vec<usize>) {
    (0..labels.len()).partition(|&i| labels[i])
}

fn interval(mut stats: Vec<f64>, point: f64) -> (f64, f64) {
    stats.sort_by(f64::total_cmp);
    let lo = percentile(&stats, 0.025);
    let hi = percentile(&stats, 0.975);
    (lo.min(point), hi.max(point))
}

/// 95% percentile interval over `n_boot` per-class resamples with
/// replacement. The interval is widened, if necessary, to contain the point
/// estimate.
pub fn bootstrap_ci(scores: &[f64], labels: &[bool], metric: Metric, n_boot: usize, seed: u64) -> Result<(f64, f64)> {
    let point = metric.compute(scores, labels)?;
    if n_boot == 0 {
        return Ok((point, point));
    }
    let (pos, neg) = split_classes(labels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut l) = (Vec::new(), Vec::new());
    let mut stats = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        stratified_resample(&mut rng, &pos, &neg, scores, &mut s, &mut l);
        stats.push(metric.compute(&s, &l)?);
    }
    Ok(interval(stats, point))
}

/// Interval for the mean of per-fold AUCs: each replicate resamples every
/// fold's held-out set per class and averages the fold AUCs.
pub fn bootstrap_mean_fold_auc(folds: &[(Vec<f64>, Vec<bool>)], n_boot: usize, seed: u64) -> Result<(f64, f64)> {
    if folds.is_empty() {
        return Err(Error::InvalidArgument("no folds to bootstrap".into()));
    }
    let mut point = 0.0;
    for (s, l) in folds {
        point += roc_auc(s, l)? / folds.len() as f64;
    }
    if n_boot == 0 {
        return Ok((point, point));
    }
    let classes: Vec<_> = folds.iter().map(|(_, l)| split_classes(l)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut l) = (Vec::new(), Vec::new());
    let mut stats = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let mut mean = 0.0;
        for ((scores, _), (pos, neg)) in folds.iter().zip(&classes) {
            stratified_resample(&mut rng, pos, neg, scores, &mut s, &mut l);
            mean += roc_auc(&s, &l)?;
        }
        stats.push(mean / folds.len() as f64);
    }
    Ok(interval(stats, point))
}

// ---------------------------------------------------------------- cross-validation

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKey {
    #[default]
    Subject,
    /// Every sample is its own group. Leaks across knees of one subject;
    /// only meant for demonstrating that leak.
    Record,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub k_folds: usize,
    pub seed: u64,
    pub split: SplitKey,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k_folds: 5,
            seed: 0,
            split: SplitKey::Subject,
        }
    }
}

/// Fold index per sample. Subjects (labelled positive if any of their
/// samples is) are shuffled per stratum and dealt round-robin, the deal
/// continuing across strata so total fold sizes stay balanced too.
pub fn subjectwise_kfold(keys: &[SampleKey], cfg: &CvConfig) -> Result<Vec<usize>> {
    let k = cfg.k_folds;
    if k < 2 {
        return Err(Error::Config(format!("k_folds must be at least 2, got {k}")));
    }
    let group_of = |i: usize| match cfg.split {
        SplitKey::Subject => keys[i].subject_id.clone(),
        SplitKey::Record => keys[i].sample_id.clone(),
    };
    let mut groups: BTreeMap<String, bool> = BTreeMap::new();
    for (i, key) in keys.iter().enumerate() {
        *groups.entry(group_of(i)).or_insert(false) |= key.label;
    }
    if groups.len() < k {
        return Err(Error::InvalidArgument(format!("{} subjects for {k} folds", groups.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fold_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut next = 0;
    for stratum in [true, false] {
        let mut members: Vec<&str> = groups.iter().filter(|(_, &l)| l == stratum).map(|(s, _)| s.as_str()).collect();
        members.shuffle(&mut rng);
        for s in members {
            fold_of.insert(s, next % k);
            next += 1;
        }
    }
    Ok((0..keys.len()).map(|i| fold_of[group_of(i).as_str()]).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// `None` when the fold was skipped or its test split holds one class.
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub skipped: bool,
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub per_fold: Vec<FoldResult>,
    /// Held-out probability per sample; `None` for samples in skipped folds.
    pub scores: Vec<Option<f64>>,
    pub folds: Vec<usize>,
}

impl CvResult {
    /// Held-out (scores, labels) of every fold whose test split has both
    /// classes.
    pub fn fold_score_sets(&self, labels: &[bool]) -> Vec<(Vec<f64>, Vec<bool>)> {
        self.per_fold
            .iter()
            .filter(|f| f.auc.is_some())
            .map(|f| {
                let idx = (0..labels.len()).filter(|&i| self.folds[i] == f.fold);
                idx.filter_map(|i| self.scores[i].map(|s| (s, labels[i]))).unzip()
            })
            .collect()
    }

    /// Pooled held-out scores and labels over non-skipped folds.
    pub fn pooled(&self, labels: &[bool]) -> (Vec<f64>, Vec<bool>) {
        self.scores
            .iter()
            .zip(labels)
            .filter_map(|(s, &l)| s.map(|s| (s, l)))
            .unzip()
    }
}

/// Fits a standardizer and model on each training split and scores the
/// held-out split. Folds whose training split holds one class are skipped
/// with a warning. Folds run in parallel; results are ordered by fold.
pub fn cross_validate(x: &[Vec<f64>], y: &[bool], folds: &[usize], k: usize, lambda: f64) -> Result<CvResult> {
    check_matrix(x)?;
    if x.len() != y.len() || x.len() != folds.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows, {} labels, {} fold ids",
            x.len(),
            y.len(),
            folds.len()
        )));
    }
    if let Some(&f) = folds.iter().find(|&&f| f >= k) {
        return Err(Error::InvalidArgument(format!("fold id {f} out of range for {k} folds")));
    }
    let outcomes: Vec<(FoldResult, Vec<(usize, f64)>)> = (0..k)
        .into_par_iter()
        .map(|fold| -> Result<_> {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..x.len()).partition(|&i| folds[i] == fold);
            let train_x: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let train_y: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            let mut result = FoldResult {
                fold,
                n_train: train.len(),
                n_test: test.len(),
                auc: None,
                ap: None,
                skipped: true,
            };
            if test.is_empty() || train.len() < 2 || check_classes(&train_y).is_err() {
                log::warn!("fold {fold}: training split lacks a class or test split is empty; skipped");
                return Ok((result, Vec::new()));
            }
            let model = TrainedModel::fit(&train_x, &train_y, lambda)?;
            let test_x: Vec<Vec<f64>> = test.iter().map(|&i| x[i].clone()).collect();
            let test_y: Vec<bool> = test.iter().map(|&i| y[i]).collect();
            let p = model.predict_proba(&test_x)?;
            result.skipped = false;
            if check_classes(&test_y).is_ok() {
                result.auc = Some(roc_auc(&p, &test_y)?);
                result.ap = Some(average_precision(&p, &test_y)?);
            }
            Ok((result, test.into_iter().zip(p).collect()))
        })
        .collect::<Result<_>>()?;
    let mut scores = vec![None; x.len()];
    let mut per_fold = Vec::with_capacity(k);
    for (r, s) in outcomes {
        for (i, p) in s {
            scores[i] = Some(p);
        }
        per_fold.push(r);
    }
    Ok(CvResult {
        per_fold,
        scores,
        folds: folds.to_vec(),
    })
}

// ---------------------------------------------------------------- reports

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub cv: CvConfig,
    pub lambda: f64,
    pub n_boot: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cv: CvConfig::default(),
            lambda: 1.0,
            n_boot: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// "cv" or "external"
    pub mode: String,
    pub n_samples: usize,
    pub auc: f64,
    pub ap: f64,
    pub auc_ci: (f64, f64),
    pub ap_ci: (f64, f64),
    pub roc_curve: Vec<(f64, f64)>,
    pub pr_curve: Vec<(f64, f64)>,
    pub per_fold: Vec<FoldResult>,
}

fn report_from_scores(mode: &str, scores: &[f64], labels: &[bool], per_fold: Vec<FoldResult>, cfg: &EvalConfig) -> Result<EvalReport> {
    Ok(EvalReport {
        mode: mode.to_string(),
        n_samples: scores.len(),
        auc: roc_auc(scores, labels)?,
        ap: average_precision(scores, labels)?,
        auc_ci: bootstrap_ci(scores, labels, Metric::Auc, cfg.n_boot, cfg.cv.seed)?,
        ap_ci: bootstrap_ci(scores, labels, Metric::Ap, cfg.n_boot, cfg.cv.seed.wrapping_add(1))?,
        roc_curve: roc_curve(scores, labels)?,
        pr_curve: pr_curve(scores, labels)?,
        per_fold,
    })
}

/// K-fold cross-validated evaluation; headline metrics use pooled held-out
/// scores.
pub fn evaluate(x: &[Vec<f64>], keys: &[SampleKey], cfg: &EvalConfig) -> Result<EvalReport> {
    let labels: Vec<bool> = keys.iter().map(|k| k.label).collect();
    check_classes(&labels)?;
    let folds = subjectwise_kfold(keys, &cfg.cv)?;
    let cv = cross_validate(x, &labels, &folds, cfg.cv.k_folds, cfg.lambda)?;
    let (scores, pooled_labels) = cv.pooled(&labels);
    report_from_scores("cv", &scores, &pooled_labels, cv.per_fold, cfg)
}

pub fn train_full(x: &[Vec<f64>], keys: &[SampleKey], lambda: f64) -> Result<TrainedModel> {
    let labels: Vec<bool> = keys.iter().map(|k| k.label).collect();
    TrainedModel::fit(x, &labels, lambda)
}

/// Fits once on the training corpus and scores the external corpus.
pub fn test_external(
    train_x: &[Vec<f64>],
    train_keys: &[SampleKey],
    test_x: &[Vec<f64>],
    test_keys: &[SampleKey],
    cfg: &EvalConfig,
) -> Result<(EvalReport, TrainedModel)> {
    let train_subjects: BTreeSet<&str> = train_keys.iter().map(|k| k.subject_id.as_str()).collect();
    let shared = test_keys.iter().filter(|k| train_subjects.contains(k.subject_id.as_str())).count();
    if shared > 0 {
        log::warn!("{shared} external test samples share a subject with the training corpus");
    }
    let model = train_full(train_x, train_keys, cfg.lambda)?;
    let scores = model.predict_proba(test_x)?;
    let labels: Vec<bool> = test_keys.iter().map(|k| k.label).collect();
    let report = report_from_scores("external", &scores, &labels, Vec::new(), cfg)?;
    Ok((report, model))
}

impl EvalReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// One row per metric with its interval, then one row per fold.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["scope", "metric", "value", "ci_lo", "ci_hi"])?;
        let fmt = |v: f64| v.to_string();
        w.write_record(["pooled", "auc", &fmt(self.auc), &fmt(self.auc_ci.0), &fmt(self.auc_ci.1)])?;
        w.write_record(["pooled", "ap", &fmt(self.ap), &fmt(self.ap_ci.0), &fmt(self.ap_ci.1)])?;
        for f in &self.per_fold {
            let scope = format!("fold{}", f.fold);
            let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
            w.write_record([scope.as_str(), "auc", &opt(f.auc), "", ""])?;
            w.write_record([scope.as_str(), "ap", &opt(f.ap), "", ""])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Standalone SVG line plot of a curve on the unit square.
pub fn curve_svg(points: &[(f64, f64)], title: &str, x_label: &str, y_label: &str, diagonal: bool) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 50.0;
    let px = |x: f64| PAD + x * SIZE;
    let py = |y: f64| PAD + (1.0 - y) * SIZE;
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.4},{:.4}", px(x), py(y))).collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{w}\" viewBox=\"0 0 {w} {w}\">\n",
        w = SIZE + 2.0 * PAD
    );
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += &format!(
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"none\" stroke=\"black\"/>\n"
    );
    if diagonal {
        svg += &format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n",
            px(0.0),
            py(0.0),
            px(1.0),
            py(1.0)
        );
    }
    svg += &format!(
        "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>\n",
        path.join(" ")
    );
    svg += &format!("<text x=\"{}\" y=\"30\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n", PAD + SIZE / 2.0);
    svg += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">{x_label}</text>\n",
        PAD + SIZE / 2.0,
        SIZE + PAD + 35.0
    );
    svg += &format!(
        "<text x=\"15\" y=\"{y}\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 15 {y})\">{y_label}</text>\n",
        y = PAD + SIZE / 2.0
    );
    svg += "</svg>\n";
    svg
}
