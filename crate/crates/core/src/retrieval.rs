//! Query-versus-gallery ranking, Market1501-style filtering and mAP/CMC.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingVector;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("average precision needs at least one relevant item")]
    NoRelevant,
    #[error("no query has a valid relevant gallery match")]
    NoValidQueries,
    #[error("query or gallery set is empty")]
    EmptySet,
    #[error("{0} labels for {1} embeddings")]
    LabelCount(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Regular,
    Centroid,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Regular => "regular",
            Mode::Centroid => "centroid",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "regular" => Ok(Mode::Regular),
            "centroid" => Ok(Mode::Centroid),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Identity and camera labels of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Identity {
    pub person_id: u32,
    pub camera_id: u32,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Row `i`, column `j` is the Euclidean distance from query `i` to gallery item `j`.
pub fn distance_matrix(
    queries: &[EmbeddingVector],
    gallery: &[EmbeddingVector],
) -> Result<Vec<Vec<f64>>, RetrievalError> {
    let dim = queries.first().or(gallery.first()).map_or(0, EmbeddingVector::dim);
    for e in queries.iter().chain(gallery) {
        if e.dim() != dim {
            return Err(RetrievalError::DimensionMismatch(dim, e.dim()));
        }
    }
    Ok(queries
        .iter()
        .map(|q| gallery.iter().map(|g| euclidean(q.values(), g.values())).collect())
        .collect())
}

/// Which gallery items take part in ranking for one query, and which of
/// those count as correct matches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GalleryMask {
    pub valid: Vec<bool>,
    pub relevant: Vec<bool>,
}

impl GalleryMask {
    pub fn has_relevant(&self) -> bool {
        self.relevant.iter().any(|&r| r)
    }
}

/// Same identity on the same camera is dropped; same identity on another
/// camera is relevant.
pub fn market_filter(query: Identity, gallery: &[Identity]) -> GalleryMask {
    let valid = gallery
        .iter()
        .map(|g| !(g.person_id == query.person_id && g.camera_id == query.camera_id))
        .collect::<Vec<_>>();
    let relevant = gallery
        .iter()
        .zip(&valid)
        .map(|(g, &v)| v && g.person_id == query.person_id)
        .collect();
    GalleryMask { valid, relevant }
}

/// Mean over relevant ranks `k` of precision@k.
pub fn average_precision(ranked_relevance: &[bool]) -> Result<f64, RetrievalError> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &rel) in ranked_relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(RetrievalError::NoRelevant);
    }
    Ok(sum / hits as f64)
}

/// Indices of `candidates` sorted by distance, ties by original position.
fn stable_rank(distances: &[f64], candidates: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut order: Vec<usize> = candidates.collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    order
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub query: usize,
    /// Gallery indices (regular mode) or person ids of centroids (centroid mode).
    pub order: Vec<u32>,
    pub relevance: Vec<bool>,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    /// Percent.
    pub map: f64,
    /// CMC rank-1, percent.
    pub top1: f64,
    pub valid_queries: usize,
    pub skipped_queries: usize,
    pub rankings: Vec<RankingResult>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub mode: Mode,
    /// Centroid mode only: build each identity's centroid from gallery
    /// samples not taken by the query's camera.
    pub camera_aware: bool,
}

impl EvalOptions {
    pub fn regular() -> Self {
        Self {
            mode: Mode::Regular,
            camera_aware: true,
        }
    }

    pub fn centroid() -> Self {
        Self {
            mode: Mode::Centroid,
            camera_aware: true,
        }
    }
}

fn check_set(embeddings: &[EmbeddingVector], labels: &[Identity]) -> Result<(), RetrievalError> {
    if embeddings.is_empty() {
        return Err(RetrievalError::EmptySet);
    }
    if embeddings.len() != labels.len() {
        return Err(RetrievalError::LabelCount(labels.len(), embeddings.len()));
    }
    Ok(())
}

/// Ranks every query against the gallery and aggregates mAP and Top-1 over
/// queries that have at least one relevant match.
pub fn evaluate(
    queries: &[EmbeddingVector],
    query_labels: &[Identity],
    gallery: &[EmbeddingVector],
    gallery_labels: &[Identity],
    options: EvalOptions,
) -> Result<Metrics, RetrievalError> {
    check_set(queries, query_labels)?;
    check_set(gallery, gallery_labels)?;
    let rankings = match options.mode {
        Mode::Regular => rank_regular(queries, query_labels, gallery, gallery_labels)?,
        Mode::Centroid => rank_centroids(queries, query_labels, gallery, gallery_labels, options.camera_aware)?,
    };
    let skipped_queries = queries.len() - rankings.len();
    if rankings.is_empty() {
        return Err(RetrievalError::NoValidQueries);
    }
    let n = rankings.len() as f64;
    let map = rankings.iter().map(|r| r.ap).sum::<f64>() / n * 100.0;
    let top1 = rankings.iter().filter(|r| r.relevance.first() == Some(&true)).count() as f64 / n * 100.0;
    Ok(Metrics {
        map,
        top1,
        valid_queries: rankings.len(),
        skipped_queries,
        rankings,
    })
}

fn rank_regular(
    queries: &[EmbeddingVector],
    query_labels: &[Identity],
    gallery: &[EmbeddingVector],
    gallery_labels: &[Identity],
) -> Result<Vec<RankingResult>, RetrievalError> {
    let dist = distance_matrix(queries, gallery)?;
    let mut out = Vec::new();
    for (qi, (row, &q)) in dist.iter().zip(query_labels).enumerate() {
        let mask = market_filter(q, gallery_labels);
        if !mask.has_relevant() {
            continue;
        }
        let order = stable_rank(row, (0..gallery.len()).filter(|&j| mask.valid[j]));
        let relevance: Vec<bool> = order.iter().map(|&j| mask.relevant[j]).collect();
        let ap = average_precision(&relevance)?;
        out.push(RankingResult {
            query: qi,
            order: order.into_iter().map(|j| j as u32).collect(),
            relevance,
            ap,
        });
    }
    Ok(out)
}

fn rank_centroids(
    queries: &[EmbeddingVector],
    query_labels: &[Identity],
    gallery: &[EmbeddingVector],
    gallery_labels: &[Identity],
    camera_aware: bool,
) -> Result<Vec<RankingResult>, RetrievalError> {
    let dim = gallery[0].dim();
    for q in queries {
        if q.dim() != dim {
            return Err(RetrievalError::DimensionMismatch(dim, q.dim()));
        }
    }
    let mut by_identity: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (j, (g, label)) in gallery.iter().zip(gallery_labels).enumerate() {
        if g.dim() != dim {
            return Err(RetrievalError::DimensionMismatch(dim, g.dim()));
        }
        by_identity.entry(label.person_id).or_default().push(j);
    }
    let mut out = Vec::new();
    for (qi, (q, label)) in queries.iter().zip(query_labels).enumerate() {
        let mut ids = Vec::new();
        let mut dists = Vec::new();
        for (&pid, members) in &by_identity {
            let support: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&j| !camera_aware || gallery_labels[j].camera_id != label.camera_id)
                .collect();
            if support.is_empty() {
                continue;
            }
            let mut c = vec![0.0; dim];
            for &j in &support {
                c.iter_mut().zip(gallery[j].values()).for_each(|(s, v)| *s += v);
            }
            c.iter_mut().for_each(|s| *s /= support.len() as f64);
            ids.push(pid);
            dists.push(euclidean(q.values(), &c));
        }
        if !ids.contains(&label.person_id) {
            continue;
        }
        let order: Vec<u32> = stable_rank(&dists, 0..ids.len()).into_iter().map(|k| ids[k]).collect();
        let relevance: Vec<bool> = order.iter().map(|&pid| pid == label.person_id).collect();
        let ap = average_precision(&relevance)?;
        out.push(RankingResult {
            query: qi,
            order,
            relevance,
            ap,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector(v.to_vec())
    }

    fn id(person_id: u32, camera_id: u32) -> Identity {
        Identity { person_id, camera_id }
    }

    #[test]
    fn distances() {
        assert_eq!(distance_matrix(&[ev(&[1.0, 2.0])], &[ev(&[1.0, 2.0])]).unwrap(), vec![vec![0.0]]);
        assert_eq!(distance_matrix(&[ev(&[0.0, 0.0])], &[ev(&[3.0, 4.0])]).unwrap(), vec![vec![5.0]]);
        assert!(distance_matrix(&[ev(&[0.0])], &[ev(&[3.0, 4.0])]).is_err());
    }

    #[test]
    fn market_filter_rule() {
        let mask = market_filter(id(5, 1), &[id(5, 1), id(5, 2), id(7, 1)]);
        assert_eq!(mask.valid, vec![false, true, true]);
        assert_eq!(mask.relevant, vec![false, true, false]);
        assert!(!market_filter(id(5, 1), &[id(5, 1), id(7, 2)]).has_relevant());
        assert!(!market_filter(id(1, 1), &[id(2, 1), id(3, 2)]).has_relevant());
    }

    #[test]
    fn ap_hand_values() {
        assert_eq!(average_precision(&[true]).unwrap(), 1.0);
        assert!((average_precision(&[true, false, true]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[false, false]), Err(RetrievalError::NoRelevant));
    }

    #[test]
    fn queries_without_match_are_skipped() {
        let q = [ev(&[0.0]), ev(&[1.0])];
        let ql = [id(1, 1), id(9, 1)];
        let g = [ev(&[0.1]), ev(&[5.0])];
        let gl = [id(1, 2), id(2, 2)];
        let m = evaluate(&q, &ql, &g, &gl, EvalOptions::regular()).unwrap();
        assert_eq!(m.valid_queries, 1);
        assert_eq!(m.skipped_queries, 1);
        assert_eq!(m.map, 100.0);
        let none = evaluate(&q[1..], &ql[1..], &g, &gl, EvalOptions::regular());
        assert_eq!(none, Err(RetrievalError::NoValidQueries));
    }

    #[test]
    fn perfect_duplicates_both_modes() {
        let q = [ev(&[0.0, 0.0]), ev(&[10.0, 0.0]), ev(&[0.0, 10.0])];
        let ql = [id(1, 1), id(2, 1), id(3, 2)];
        let g = q.clone();
        let gl = [id(1, 2), id(2, 3), id(3, 1)];
        for opts in [EvalOptions::regular(), EvalOptions::centroid()] {
            let m = evaluate(&q, &ql, &g, &gl, opts).unwrap();
            assert_eq!((m.map, m.top1), (100.0, 100.0));
        }
    }

    #[test]
    fn centroid_hand_case() {
        // query at 0; id 1 gallery at {3, 5} -> centroid 4; id 2 at {1} -> 1
        let q = [ev(&[0.0])];
        let ql = [id(1, 1)];
        let g = [ev(&[3.0]), ev(&[5.0]), ev(&[1.0])];
        let gl = [id(1, 2), id(1, 2), id(2, 2)];
        let m = evaluate(&q, &ql, &g, &gl, EvalOptions::centroid()).unwrap();
        assert_eq!(m.rankings[0].order, vec![2, 1]);
        assert_eq!(m.map, 50.0);
        assert_eq!(m.top1, 0.0);
    }

    #[test]
    fn camera_aware_centroids_drop_query_camera() {
        // id 2 has a same-camera sample right on top of the query
        let q = [ev(&[0.0])];
        let ql = [id(1, 1)];
        let g = [ev(&[2.0]), ev(&[0.0]), ev(&[3.0])];
        let gl = [id(1, 2), id(2, 1), id(2, 3)];
        let aware = evaluate(&q, &ql, &g, &gl, EvalOptions::centroid()).unwrap();
        assert_eq!(aware.rankings[0].order, vec![1, 2]);
        let all = EvalOptions {
            mode: Mode::Centroid,
            camera_aware: false,
        };
        // id 2 centroid over all samples is 1.5, ahead of id 1 at 2
        let m = evaluate(&q, &ql, &g, &gl, all).unwrap();
        assert_eq!(m.rankings[0].order, vec![2, 1]);
    }

    #[test]
    fn ties_keep_gallery_order() {
        let q = [ev(&[0.0])];
        let ql = [id(1, 1)];
        let g = [ev(&[1.0]), ev(&[-1.0]), ev(&[1.0])];
        let gl = [id(2, 2), id(1, 2), id(3, 2)];
        let m = evaluate(&q, &ql, &g, &gl, EvalOptions::regular()).unwrap();
        assert_eq!(m.rankings[0].order, vec![0, 1, 2]);
        assert!((m.map - 50.0).abs() < 1e-12);
    }
}
