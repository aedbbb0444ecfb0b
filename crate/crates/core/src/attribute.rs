//! Adverse-task harness: softmax linear classifiers over histogram features
//! for demographic attributes, and their chance levels.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Task;
use crate::embedding::FeatureVector;
use crate::seed::rng_from_seed;

#[derive(Debug, Error, PartialEq)]
pub enum AttributeError {
    #[error("training labels contain fewer than two distinct classes")]
    SingleClass,
    #[error("evaluation set is empty")]
    Empty,
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite loss at epoch {0}")]
    Diverged(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChanceKind {
    /// `1/C`
    Uniform,
    /// Frequency of the most common label.
    Majority,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

/// `C×F` weights plus `C` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeClassifier {
    pub task: Task,
    pub classes: usize,
    pub feature_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AttributeClassifier {
    /// Small uniform initialisation in `±0.01`.
    pub fn init(task: Task, classes: usize, feature_dim: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        Self {
            task,
            classes,
            feature_dim,
            weights: (0..classes * feature_dim).map(|_| rng.gen_range(-0.01..0.01)).collect(),
            bias: vec![0.0; classes],
        }
    }

    fn check(&self, x: &FeatureVector) -> Result<(), AttributeError> {
        if x.len() != self.feature_dim {
            return Err(AttributeError::DimensionMismatch {
                expected: self.feature_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &FeatureVector) -> Result<Vec<f64>, AttributeError> {
        self.check(x)?;
        Ok(self
            .weights
            .chunks_exact(self.feature_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x.values()).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect())
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, x: &FeatureVector) -> Result<usize, AttributeError> {
        let logits = self.logits(x)?;
        let mut best = 0;
        for (k, &v) in logits.iter().enumerate().skip(1) {
            if v > logits[best] {
                best = k;
            }
        }
        Ok(best)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_labels(labels: &[usize], classes: usize) -> Result<(), AttributeError> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(AttributeError::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

/// Mean softmax cross-entropy and its gradients `(loss, ∂W, ∂b)`.
pub fn cross_entropy_with_grads(
    clf: &AttributeClassifier,
    features: &[FeatureVector],
    labels: &[usize],
) -> Result<(f64, Vec<f64>, Vec<f64>), AttributeError> {
    if features.is_empty() {
        return Err(AttributeError::Empty);
    }
    if features.len() != labels.len() {
        return Err(AttributeError::DimensionMismatch {
            expected: features.len(),
            actual: labels.len(),
        });
    }
    check_labels(labels, clf.classes)?;
    let f = clf.feature_dim;
    let mut gw = vec![0.0; clf.weights.len()];
    let mut gb = vec![0.0; clf.classes];
    let mut loss = 0.0;
    let n = features.len() as f64;
    for (x, &y) in features.iter().zip(labels) {
        let logits = clf.logits(x)?;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += log_z - logits[y];
        for (k, p) in softmax(&logits).into_iter().enumerate() {
            let d = (p - if k == y { 1.0 } else { 0.0 }) / n;
            gb[k] += d;
            gw[k * f..(k + 1) * f]
                .iter_mut()
                .zip(x.values())
                .for_each(|(g, v)| *g += d * v);
        }
    }
    Ok((loss / n, gw, gb))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierOutcome {
    pub classifier: AttributeClassifier,
    /// Training loss before each update.
    pub loss_trace: Vec<f64>,
}

/// Full-batch gradient descent on mean cross-entropy.
pub fn train_classifier(
    features: &[FeatureVector],
    labels: &[usize],
    task: Task,
    classes: usize,
    config: &ClassifierConfig,
) -> Result<ClassifierOutcome, AttributeError> {
    let feature_dim = features.first().ok_or(AttributeError::Empty)?.len();
    check_labels(labels, classes)?;
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(AttributeError::SingleClass);
    }
    let mut clf = AttributeClassifier::init(task, classes, feature_dim, config.seed);
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, gw, gb) = cross_entropy_with_grads(&clf, features, labels)?;
        if !loss.is_finite() {
            return Err(AttributeError::Diverged(epoch));
        }
        loss_trace.push(loss);
        clf.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= config.learning_rate * g);
        clf.bias.iter_mut().zip(&gb).for_each(|(b, g)| *b -= config.learning_rate * g);
    }
    Ok(ClassifierOutcome {
        classifier: clf,
        loss_trace,
    })
}

/// Percentage of argmax-correct predictions.
pub fn accuracy(clf: &AttributeClassifier, features: &[FeatureVector], labels: &[usize]) -> Result<f64, AttributeError> {
    if features.is_empty() {
        return Err(AttributeError::Empty);
    }
    let mut correct = 0usize;
    for (x, &y) in features.iter().zip(labels) {
        if clf.predict(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / features.len() as f64 * 100.0)
}

/// Chance accuracy in percent.
pub fn chance_level(labels: &[usize], classes: usize, kind: ChanceKind) -> Result<f64, AttributeError> {
    if labels.is_empty() {
        return Err(AttributeError::Empty);
    }
    check_labels(labels, classes)?;
    Ok(match kind {
        ChanceKind::Uniform => 100.0 / classes as f64,
        ChanceKind::Majority => {
            let mut counts = vec![0usize; classes];
            labels.iter().for_each(|&l| counts[l] += 1);
            *counts.iter().max().expect("classes > 0") as f64 / labels.len() as f64 * 100.0
        }
    })
}
