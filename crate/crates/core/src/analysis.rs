//! Adversary-strength metrics: correlation, nearest-neighbour and linear
//! SVM user identification, and the interception-probability diagnostic.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("vectors differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("correlation needs at least two points")]
    TooShort,
    #[error("correlation is undefined for a constant vector")]
    ConstantInput,
    #[error("training set is empty")]
    EmptyTrain,
    #[error("k = {k} must be odd and at most the training size {train}")]
    InvalidK { k: usize, train: usize },
    #[error("linear SVM needs exactly two classes, found {0}")]
    NotTwoClasses(usize),
}

/// Sample Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(AnalysisError::TooShort);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(AnalysisError::ConstantInput);
    }
    Ok((sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledVector {
    pub features: Vec<f64>,
    pub label: String,
}

impl LabeledVector {
    pub fn new(features: Vec<f64>, label: impl Into<String>) -> Self {
        Self {
            features,
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub predicted: Vec<String>,
    pub accuracy: f64,
}

fn classification(predicted: Vec<String>, test: &[LabeledVector]) -> Classification {
    let correct = predicted.iter().zip(test).filter(|(p, t)| **p == t.label).count();
    let accuracy = if test.is_empty() {
        0.0
    } else {
        correct as f64 / test.len() as f64
    };
    Classification { predicted, accuracy }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority vote among the `k` nearest training vectors by Euclidean
/// distance. Vote ties go to the label with the smaller summed distance,
/// then to the lexicographically smaller label.
pub fn knn_classify(
    train: &[LabeledVector],
    test: &[LabeledVector],
    k: usize,
) -> Result<Classification, AnalysisError> {
    if train.is_empty() {
        return Err(AnalysisError::EmptyTrain);
    }
    if k == 0 || k.is_multiple_of(2) || k > train.len() {
        return Err(AnalysisError::InvalidK { k, train: train.len() });
    }
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(train.len());
    let predicted = test
        .iter()
        .map(|t| {
            dist.clear();
            dist.extend(
                train
                    .iter()
                    .enumerate()
                    .map(|(i, x)| (squared_distance(&x.features, &t.features), i)),
            );
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
            for &(d, i) in &dist[..k] {
                let v = votes.entry(train[i].label.as_str()).or_default();
                v.0 += 1;
                v.1 += libm::sqrt(d);
            }
            let best = votes
                .into_iter()
                .min_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.total_cmp(&b.1 .1)).then(a.0.cmp(b.0)))
                .expect("k >= 1");
            String::from(best.0)
        })
        .collect();
    Ok(classification(predicted, test))
}

/// Per-dimension z-score transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, 1 for constant dimensions.
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fits on weighted points.
    fn fit_weighted(points: &[(&[f64], f64)]) -> Self {
        let dim = points.first().map_or(0, |p| p.0.len());
        let total: f64 = points.iter().map(|p| p.1).sum();
        let mut mean = vec![0.0; dim];
        for (x, w) in points {
            for (m, v) in mean.iter_mut().zip(x.iter()) {
                *m += w * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        let mut var = vec![0.0; dim];
        for (x, w) in points {
            for ((s, v), m) in var.iter_mut().zip(x.iter()).zip(&mean) {
                *s += w * (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = libm::sqrt(s / total);
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn fit(train: &[LabeledVector]) -> Self {
        let pts: Vec<(&[f64], f64)> = train.iter().map(|v| (v.features.as_slice(), 1.0)).collect();
        Self::fit_weighted(&pts)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            epochs: 200,
            seed: 0,
        }
    }
}

/// Linear two-class separator over standardized features. The bias is the
/// weight of a constant extra feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub scaler: Standardizer,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Labels for negative and positive decisions.
    pub labels: [String; 2],
}

/// Hinge loss with L2 regularization, minimized by stochastic subgradient
/// steps of size `1 / (lambda * t)`. Identical training points are merged
/// into one weighted point, so duplicating the whole set changes nothing.
pub fn svm_train(train: &[LabeledVector], params: &SvmParams) -> Result<LinearSvm, AnalysisError> {
    if train.is_empty() {
        return Err(AnalysisError::EmptyTrain);
    }
    let mut labels: Vec<&str> = train.iter().map(|v| v.label.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() != 2 {
        return Err(AnalysisError::NotTwoClasses(labels.len()));
    }

    let mut sorted: Vec<&LabeledVector> = train.iter().collect();
    sorted.sort_by(|a, b| canonical(a, b));
    let mut distinct: Vec<(&LabeledVector, f64)> = Vec::new();
    for v in sorted {
        match distinct.last_mut() {
            Some((last, w)) if canonical(last, v) == Ordering::Equal => *w += 1.0,
            _ => distinct.push((v, 1.0)),
        }
    }
    let total: f64 = distinct.iter().map(|d| d.1).sum();
    let pts: Vec<(&[f64], f64)> = distinct.iter().map(|(v, w)| (v.features.as_slice(), *w)).collect();
    let scaler = Standardizer::fit_weighted(&pts);
    let samples: Vec<(Vec<f64>, f64, f64)> = distinct
        .iter()
        .map(|(v, w)| {
            let mut x = scaler.apply(&v.features);
            x.push(1.0);
            let y = if v.label == labels[0] { -1.0 } else { 1.0 };
            (x, y, w * distinct.len() as f64 / total)
        })
        .collect();

    let dim = samples[0].0.len();
    let mut w = vec![0.0; dim];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut t = 0u64;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &j in &order {
            t += 1;
            let eta = 1.0 / (params.lambda * t as f64);
            let (x, y, c) = &samples[j];
            let margin = y * dot(&w, x);
            let decay = 1.0 - eta * params.lambda;
            w.iter_mut().for_each(|wi| *wi *= decay);
            if margin < 1.0 {
                for (wi, xi) in w.iter_mut().zip(x) {
                    *wi += eta * c * y * xi;
                }
            }
        }
    }
    let bias = w.pop().expect("augmented dimension");
    Ok(LinearSvm {
        scaler,
        weights: w,
        bias,
        labels: [labels[0].into(), labels[1].into()],
    })
}

fn canonical(a: &LabeledVector, b: &LabeledVector) -> Ordering {
    a.label.cmp(&b.label).then_with(|| {
        a.features
            .iter()
            .zip(&b.features)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(a.features.len().cmp(&b.features.len()))
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearSvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, &self.scaler.apply(x)) + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> &str {
        if self.decision(x) >= 0.0 {
            &self.labels[1]
        } else {
            &self.labels[0]
        }
    }

    pub fn classify(&self, test: &[LabeledVector]) -> Classification {
        let predicted = test.iter().map(|t| String::from(self.predict(&t.features))).collect();
        classification(predicted, test)
    }
}

/// Seeded split that keeps each label's share: `round(fraction * count)`
/// vectors of every label go to training, at least one and, when the label
/// has two or more vectors, at most all but one.
pub fn stratified_split(
    set: &[LabeledVector],
    train_fraction: f64,
    seed: u64,
) -> (Vec<LabeledVector>, Vec<LabeledVector>) {
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, v) in set.iter().enumerate() {
        by_label.entry(&v.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_label {
        idx.shuffle(&mut rng);
        let count = idx.len();
        let mut cut = libm::round(train_fraction * count as f64) as usize;
        cut = cut.clamp(1, count.saturating_sub(1).max(1));
        for (pos, i) in idx.into_iter().enumerate() {
            if pos < cut {
                train.push(set[i].clone());
            } else {
                test.push(set[i].clone());
            }
        }
    }
    (train, test)
}

/// Estimated per-bucket pass-through probability `f_i / u_i`, clamped to
/// [0, 1], 0 where `u_i` is 0.
pub fn interception_vector(u: &[f64], f: &[f64]) -> Vec<f64> {
    u.iter()
        .zip(f)
        .map(|(u, f)| if *u > 0.0 { (f / u).clamp(0.0, 1.0) } else { 0.0 })
        .collect()
}

/// Element-wise mean of equal-length vectors.
pub fn mean_vector<'a, I: IntoIterator<Item = &'a [f64]>>(vectors: I) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for v in vectors {
        if sum.is_empty() {
            sum = vec![0.0; v.len()];
        }
        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        count += 1;
    }
    if count > 0 {
        sum.iter_mut().for_each(|s| *s /= count as f64);
    }
    sum
}
