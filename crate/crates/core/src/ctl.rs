//! Class centroids, the centroid triplet loss and its training loop.
//!
//! For an anchor embedding `a`, positive centroid `c_P` and negative
//! centroid `c_N`:
//!
//! ```text
//! L = [ ‖a − c_P‖² − ‖a − c_N‖² + α ]₊
//! ```
//!
//! Centroids are plain means of their support embeddings, so a gradient
//! with respect to a centroid reaches each support member scaled by
//! `1/|S|`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingVector, FeatureVector, LinearEmbedder};
use crate::seed::{rng_from_seed, Rng};

#[derive(Debug, Error, PartialEq)]
pub enum CtlError {
    #[error("centroid of an empty support set")]
    EmptySupport,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least {needed} classes for a batch, found {found}")]
    TooFewClasses { needed: usize, found: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}; try a smaller learning rate")]
    Diverged { epoch: usize, batch: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Centroid {
    pub values: Vec<f64>,
    pub class_id: u32,
    pub support_count: usize,
}

/// Componentwise mean of `embeddings`.
pub fn centroid(embeddings: &[EmbeddingVector], class_id: u32) -> Result<Centroid, CtlError> {
    let first = embeddings.first().ok_or(CtlError::EmptySupport)?;
    let dim = first.dim();
    let mut sum = vec![0.0; dim];
    for e in embeddings {
        if e.dim() != dim {
            return Err(CtlError::DimensionMismatch(dim, e.dim()));
        }
        sum.iter_mut().zip(e.values()).for_each(|(s, v)| *s += v);
    }
    let n = embeddings.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(Centroid {
        values: sum,
        class_id,
        support_count: embeddings.len(),
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(anchor: &[f64], pos: &[f64], neg: &[f64]) -> Result<(), CtlError> {
    if anchor.len() != pos.len() {
        return Err(CtlError::DimensionMismatch(anchor.len(), pos.len()));
    }
    if anchor.len() != neg.len() {
        return Err(CtlError::DimensionMismatch(anchor.len(), neg.len()));
    }
    Ok(())
}

/// Hinge argument before clamping; positive means the loss is active.
fn hinge_argument(anchor: &[f64], pos: &[f64], neg: &[f64], margin: f64) -> f64 {
    squared_distance(anchor, pos) - squared_distance(anchor, neg) + margin
}

pub fn ctl_loss(anchor: &EmbeddingVector, pos: &Centroid, neg: &Centroid, margin: f64) -> Result<f64, CtlError> {
    check_dims(anchor.values(), &pos.values, &neg.values)?;
    Ok(hinge_argument(anchor.values(), &pos.values, &neg.values, margin).max(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CtlGradients {
    pub anchor: Vec<f64>,
    /// Gradient with respect to each member of the positive support.
    pub positive_support: Vec<f64>,
    /// Gradient with respect to each member of the negative support.
    pub negative_support: Vec<f64>,
}

/// Analytic gradients of [`ctl_loss`]. At the hinge kink (argument exactly
/// zero) the zero subgradient is used.
pub fn ctl_gradients(
    anchor: &EmbeddingVector,
    pos: &Centroid,
    neg: &Centroid,
    margin: f64,
) -> Result<CtlGradients, CtlError> {
    let a = anchor.values();
    check_dims(a, &pos.values, &neg.values)?;
    if pos.support_count == 0 || neg.support_count == 0 {
        return Err(CtlError::EmptySupport);
    }
    let dim = a.len();
    if hinge_argument(a, &pos.values, &neg.values, margin) <= 0.0 {
        return Ok(CtlGradients {
            anchor: vec![0.0; dim],
            positive_support: vec![0.0; dim],
            negative_support: vec![0.0; dim],
        });
    }
    let sp = pos.support_count as f64;
    let sn = neg.support_count as f64;
    let mut grads = CtlGradients {
        anchor: Vec::with_capacity(dim),
        positive_support: Vec::with_capacity(dim),
        negative_support: Vec::with_capacity(dim),
    };
    for ((&ai, &pi), &ni) in a.iter().zip(&pos.values).zip(&neg.values) {
        let to_pos = ai - pi;
        let to_neg = ai - ni;
        grads.anchor.push(2.0 * to_pos - 2.0 * to_neg);
        grads.positive_support.push(-2.0 * to_pos / sp);
        grads.negative_support.push(2.0 * to_neg / sn);
    }
    Ok(grads)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeSelection {
    /// Nearest other-class centroid in the batch.
    #[default]
    Hardest,
    /// Uniformly chosen other class in the batch.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CtlConfig {
    pub margin: f64,
    /// Classes per batch `P`.
    pub classes_per_batch: usize,
    /// Instances per class `K`.
    pub instances_per_class: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub negative: NegativeSelection,
}

impl Default for CtlConfig {
    fn default() -> Self {
        Self {
            margin: 0.3,
            classes_per_batch: 8,
            instances_per_class: 4,
            learning_rate: 0.05,
            epochs: 60,
            seed: 0,
            negative: NegativeSelection::Hardest,
        }
    }
}

impl CtlConfig {
    pub fn validate(&self) -> Result<(), CtlError> {
        if self.classes_per_batch < 2 || self.instances_per_class < 2 {
            return Err(CtlError::InvalidConfig(format!(
                "P = {} and K = {} must both be at least 2",
                self.classes_per_batch, self.instances_per_class
            )));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(CtlError::InvalidConfig(format!("margin {} must be non-negative", self.margin)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(CtlError::InvalidConfig(format!(
                "learning rate {} must be non-negative",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One mini-batch: `P` groups of `K` sample indices, one group per class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub groups: Vec<(u32, Vec<usize>)>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.groups.iter().map(|(_, g)| g.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn group_by_class(labels: &[u32]) -> BTreeMap<u32, Vec<usize>> {
    let mut classes: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        classes.entry(label).or_default().push(i);
    }
    classes
}

fn draw_instances(members: &[usize], k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut picked = members.to_vec();
    picked.shuffle(rng);
    picked.truncate(k);
    // classes smaller than K are topped up with replacement
    while picked.len() < k {
        picked.push(members[rng.gen_range(0..members.len())]);
    }
    picked
}

/// One epoch of `P×K` batches. Classes are visited in a shuffled order so
/// every class appears at least once; a short final batch is padded with
/// other randomly chosen classes.
pub fn sample_batches(labels: &[u32], p: usize, k: usize, rng: &mut Rng) -> Result<Vec<Batch>, CtlError> {
    if p == 0 || k == 0 {
        return Err(CtlError::InvalidConfig("P and K must be positive".into()));
    }
    let classes = group_by_class(labels);
    if classes.len() < p {
        return Err(CtlError::TooFewClasses {
            needed: p,
            found: classes.len(),
        });
    }
    let mut order: Vec<u32> = classes.keys().copied().collect();
    order.shuffle(rng);
    let mut batches = Vec::with_capacity(order.len().div_ceil(p));
    for chunk in order.chunks(p) {
        let mut chosen = chunk.to_vec();
        if chosen.len() < p {
            let mut pool: Vec<u32> = classes.keys().copied().filter(|c| !chunk.contains(c)).collect();
            pool.shuffle(rng);
            chosen.extend(pool.into_iter().take(p - chunk.len()));
        }
        let groups = chosen
            .into_iter()
            .map(|class| (class, draw_instances(&classes[&class], k, rng)))
            .collect();
        batches.push(Batch { groups });
    }
    Ok(batches)
}

/// Seeded convenience wrapper around [`sample_batches`].
pub fn sample_batches_seeded(labels: &[u32], p: usize, k: usize, seed: u64) -> Result<Vec<Batch>, CtlError> {
    sample_batches(labels, p, k, &mut rng_from_seed(seed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub embedder: LinearEmbedder,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Per-instance gradients grouped like the batch embeddings.
pub type BatchGradients = Vec<Vec<Vec<f64>>>;

/// Loss and gradient of the mean CTL over one batch with respect to the
/// batch embeddings. `embeddings[g][j]` is instance `j` of group `g`.
/// Returns `(loss, grads)` with `grads` shaped like `embeddings`.
pub fn batch_loss_and_grads(
    embeddings: &[Vec<EmbeddingVector>],
    margin: f64,
    negative: NegativeSelection,
    rng: &mut Rng,
) -> Result<(f64, BatchGradients), CtlError> {
    let dim = embeddings
        .first()
        .and_then(|g| g.first())
        .map(EmbeddingVector::dim)
        .ok_or(CtlError::EmptySupport)?;
    let full: Vec<Centroid> = embeddings
        .iter()
        .enumerate()
        .map(|(g, members)| centroid(members, g as u32))
        .collect::<Result<_, _>>()?;
    let mut grads: BatchGradients = embeddings.iter().map(|g| vec![vec![0.0; dim]; g.len()]).collect();
    let n_anchors: usize = embeddings.iter().map(Vec::len).sum();
    let scale = 1.0 / n_anchors as f64;
    let mut total = 0.0;
    for (g, members) in embeddings.iter().enumerate() {
        if members.len() < 2 {
            return Err(CtlError::InvalidConfig("each class needs at least 2 instances per batch".into()));
        }
        for (j, anchor) in members.iter().enumerate() {
            // positive centroid over batch-mates, anchor excluded
            let n = members.len() as f64;
            let values = full[g]
                .values
                .iter()
                .zip(anchor.values())
                .map(|(c, a)| (c * n - a) / (n - 1.0))
                .collect();
            let pos = Centroid {
                values,
                class_id: g as u32,
                support_count: members.len() - 1,
            };
            let neg_group = match negative {
                NegativeSelection::Hardest => (0..full.len())
                    .filter(|&o| o != g)
                    .min_by(|&x, &y| {
                        squared_distance(anchor.values(), &full[x].values)
                            .total_cmp(&squared_distance(anchor.values(), &full[y].values))
                    })
                    .expect("at least two groups"),
                NegativeSelection::Random => {
                    let o = rng.gen_range(0..full.len() - 1);
                    if o >= g {
                        o + 1
                    } else {
                        o
                    }
                }
            };
            let neg = &full[neg_group];
            total += ctl_loss(anchor, &pos, neg, margin)?;
            let step = ctl_gradients(anchor, &pos, neg, margin)?;
            let add = |dst: &mut Vec<f64>, src: &[f64]| {
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s * scale);
            };
            add(&mut grads[g][j], &step.anchor);
            for (m, slot) in grads[g].iter_mut().enumerate() {
                if m != j {
                    add(slot, &step.positive_support);
                }
            }
            for slot in grads[neg_group].iter_mut() {
                add(slot, &step.negative_support);
            }
        }
    }
    Ok((total * scale, grads))
}

/// Plain gradient descent on the mean batch CTL.
pub fn train(
    embedder: &LinearEmbedder,
    features: &[FeatureVector],
    labels: &[u32],
    config: &CtlConfig,
) -> Result<TrainOutcome, CtlError> {
    config.validate()?;
    if features.len() != labels.len() {
        return Err(CtlError::DimensionMismatch(features.len(), labels.len()));
    }
    let mut embedder = embedder.clone();
    let mut rng = rng_from_seed(config.seed);
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let f = embedder.feature_dim();
    for epoch in 0..config.epochs {
        let batches = sample_batches(labels, config.classes_per_batch, config.instances_per_class, &mut rng)?;
        let mut epoch_loss = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let embeddings: Vec<Vec<EmbeddingVector>> = batch
                .groups
                .iter()
                .map(|(_, idx)| {
                    idx.iter()
                        .map(|&i| embedder.embed_features(&features[i]))
                        .collect::<Result<_, _>>()
                })
                .collect::<Result<_, _>>()
                .map_err(|_| CtlError::DimensionMismatch(f, features[0].len()))?;
            let (loss, grads) = batch_loss_and_grads(&embeddings, config.margin, config.negative, &mut rng)?;
            if !loss.is_finite() {
                return Err(CtlError::Diverged { epoch, batch: b });
            }
            epoch_loss += loss;
            if config.learning_rate == 0.0 {
                continue;
            }
            let weights = embedder.weights_mut();
            for ((_, idx), group_grads) in batch.groups.iter().zip(&grads) {
                for (&i, g) in idx.iter().zip(group_grads) {
                    let x = features[i].values();
                    for (row, &gd) in weights.chunks_exact_mut(f).zip(g) {
                        if gd == 0.0 {
                            continue;
                        }
                        let step = config.learning_rate * gd;
                        row.iter_mut().zip(x).for_each(|(w, xv)| *w -= step * xv);
                    }
                }
            }
        }
        let mean = epoch_loss / batches.len() as f64;
        if !mean.is_finite() || embedder.weights().iter().any(|w| !w.is_finite()) {
            return Err(CtlError::Diverged {
                epoch,
                batch: batches.len().saturating_sub(1),
            });
        }
        loss_trace.push(mean);
    }
    Ok(TrainOutcome { embedder, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector(v.to_vec())
    }

    fn point_centroid(v: &[f64]) -> Centroid {
        Centroid {
            values: v.to_vec(),
            class_id: 0,
            support_count: 1,
        }
    }

    #[test]
    fn centroid_basics() {
        assert_eq!(centroid(&[ev(&[1.5, -2.0])], 3).unwrap().values, vec![1.5, -2.0]);
        let c = centroid(&[ev(&[0.0, 0.0]), ev(&[2.0, 4.0])], 0).unwrap();
        assert_eq!(c.values, vec![1.0, 2.0]);
        assert_eq!(c.support_count, 2);
        assert_eq!(centroid(&[], 0), Err(CtlError::EmptySupport));
        assert!(matches!(
            centroid(&[ev(&[1.0]), ev(&[1.0, 2.0])], 0),
            Err(CtlError::DimensionMismatch(1, 2))
        ));
    }

    #[test]
    fn loss_hand_cases() {
        let a = ev(&[0.0, 0.0]);
        let inactive = ctl_loss(&a, &point_centroid(&[1.0, 0.0]), &point_centroid(&[0.0, 2.0]), 0.3).unwrap();
        assert_eq!(inactive, 0.0);
        let active = ctl_loss(&a, &point_centroid(&[3.0, 0.0]), &point_centroid(&[1.0, 0.0]), 0.5).unwrap();
        assert_eq!(active, 8.5);
        let same = point_centroid(&[0.7, -1.1]);
        assert!((ctl_loss(&ev(&[2.0, 3.0]), &same, &same, 0.3).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn gradient_hand_cases() {
        let a = ev(&[0.0, 0.0]);
        let g = ctl_gradients(&a, &point_centroid(&[1.0, 0.0]), &point_centroid(&[0.0, 2.0]), 0.3).unwrap();
        assert!(g.anchor.iter().chain(&g.positive_support).chain(&g.negative_support).all(|&v| v == 0.0));
        let g = ctl_gradients(&a, &point_centroid(&[3.0, 0.0]), &point_centroid(&[1.0, 0.0]), 0.5).unwrap();
        assert_eq!(g.anchor, vec![-4.0, 0.0]);
        assert_eq!(g.positive_support, vec![6.0, 0.0]);
        assert_eq!(g.negative_support, vec![-2.0, 0.0]);
    }

    #[test]
    fn support_gradient_scales_with_count() {
        let a = ev(&[0.0]);
        let pos = Centroid {
            values: vec![3.0],
            class_id: 0,
            support_count: 3,
        };
        let neg = Centroid {
            values: vec![1.0],
            class_id: 1,
            support_count: 2,
        };
        let g = ctl_gradients(&a, &pos, &neg, 0.5).unwrap();
        assert_eq!(g.positive_support, vec![2.0]);
        assert_eq!(g.negative_support, vec![-1.0]);
    }

    #[test]
    fn batches_have_p_by_k_shape_and_cover_classes() {
        let labels: Vec<u32> = (0..4).flat_map(|c| std::iter::repeat_n(c, 3)).collect();
        let batches = sample_batches_seeded(&labels, 2, 2, 1).unwrap();
        let mut seen = std::collections::HashSet::new();
        for b in &batches {
            assert_eq!(b.len(), 4);
            assert_eq!(b.groups.len(), 2);
            for (class, idx) in &b.groups {
                assert_eq!(idx.len(), 2);
                assert!(idx.iter().all(|&i| labels[i] == *class));
                seen.insert(*class);
            }
        }
        assert_eq!(seen.len(), 4);
        assert_eq!(batches, sample_batches_seeded(&labels, 2, 2, 1).unwrap());
    }

    #[test]
    fn small_classes_sample_with_replacement() {
        let labels = vec![0, 1, 1, 1, 2];
        let batches = sample_batches_seeded(&labels, 3, 4, 5).unwrap();
        assert_eq!(batches.len(), 1);
        let (_, idx) = batches[0].groups.iter().find(|(c, _)| *c == 0).unwrap();
        assert_eq!(idx, &vec![0, 0, 0, 0]);
    }

    #[test]
    fn padding_final_batch() {
        let labels: Vec<u32> = (0..5).flat_map(|c| [c, c]).collect();
        let batches = sample_batches_seeded(&labels, 2, 2, 9).unwrap();
        assert_eq!(batches.len(), 3);
        for b in &batches {
            let classes: Vec<u32> = b.groups.iter().map(|(c, _)| *c).collect();
            assert_eq!(classes.len(), 2);
            assert_ne!(classes[0], classes[1]);
        }
    }

    #[test]
    fn too_few_classes() {
        assert_eq!(
            sample_batches_seeded(&[0, 0, 1], 3, 2, 0),
            Err(CtlError::TooFewClasses { needed: 3, found: 2 })
        );
    }

    #[test]
    fn config_validation() {
        let bad = CtlConfig {
            instances_per_class: 1,
            ..CtlConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = CtlConfig {
            margin: -0.1,
            ..CtlConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(CtlConfig::default().validate().is_ok());
    }
}
