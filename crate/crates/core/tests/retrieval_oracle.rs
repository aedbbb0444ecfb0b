//! Retrieval metrics against a brute-force recomputation from the
//! definitions of precision, AP and CMC rank-1.

use epsimage::embedding::EmbeddingVector;
use epsimage::retrieval::{evaluate, EvalOptions, Identity, Mode};
use epsimage::seed::{rng_from_seed, Rng};
use rand::Rng as _;

const TOL: f64 = 1e-10;

struct Instance {
    queries: Vec<EmbeddingVector>,
    query_labels: Vec<Identity>,
    gallery: Vec<EmbeddingVector>,
    gallery_labels: Vec<Identity>,
}

fn instance(seed: u64) -> Instance {
    let mut rng = rng_from_seed(seed);
    let ids = rng.gen_range(2..6);
    let dim = rng.gen_range(1..5);
    // a coarse lattice makes exact distance ties common
    let point = |rng: &mut Rng| {
        EmbeddingVector((0..dim).map(|_| f64::from(rng.gen_range(-2i32..=2))).collect())
    };
    let label = |rng: &mut Rng| Identity {
        person_id: rng.gen_range(0..ids),
        camera_id: rng.gen_range(0..3),
    };
    let ng = rng.gen_range(5..=20);
    let nq = rng.gen_range(3..10);
    Instance {
        gallery: (0..ng).map(|_| point(&mut rng)).collect(),
        gallery_labels: (0..ng).map(|_| label(&mut rng)).collect(),
        queries: (0..nq).map(|_| point(&mut rng)).collect(),
        query_labels: (0..nq).map(|_| label(&mut rng)).collect(),
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    s.sqrt()
}

/// Ranked relevance lists, one per query that has a relevant candidate.
fn ranked(inst: &Instance, mode: Mode, camera_aware: bool) -> Vec<Vec<bool>> {
    let mut out = Vec::new();
    for (q, ql) in inst.queries.iter().zip(&inst.query_labels) {
        // candidates: (distance, tie index, relevant)
        let mut cands: Vec<(f64, usize, bool)> = Vec::new();
        match mode {
            Mode::Regular => {
                for (j, (g, gl)) in inst.gallery.iter().zip(&inst.gallery_labels).enumerate() {
                    if gl.person_id == ql.person_id && gl.camera_id == ql.camera_id {
                        continue;
                    }
                    cands.push((dist(q.values(), g.values()), j, gl.person_id == ql.person_id));
                }
            }
            Mode::Centroid => {
                let mut pids: Vec<u32> = inst.gallery_labels.iter().map(|l| l.person_id).collect();
                pids.sort_unstable();
                pids.dedup();
                for (k, pid) in pids.into_iter().enumerate() {
                    let members: Vec<&EmbeddingVector> = inst
                        .gallery
                        .iter()
                        .zip(&inst.gallery_labels)
                        .filter(|(_, l)| l.person_id == pid && (!camera_aware || l.camera_id != ql.camera_id))
                        .map(|(g, _)| g)
                        .collect();
                    if members.is_empty() {
                        continue;
                    }
                    let dim = q.dim();
                    let mut c = vec![0.0; dim];
                    for m in &members {
                        for (acc, v) in c.iter_mut().zip(m.values()) {
                            *acc += v;
                        }
                    }
                    for v in c.iter_mut() {
                        *v /= members.len() as f64;
                    }
                    cands.push((dist(q.values(), &c), k, pid == ql.person_id));
                }
            }
        }
        if !cands.iter().any(|c| c.2) {
            continue;
        }
        cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        out.push(cands.into_iter().map(|c| c.2).collect());
    }
    out
}

fn oracle_metrics(lists: &[Vec<bool>]) -> (f64, f64) {
    let mut ap_sum = 0.0;
    let mut top1 = 0.0;
    for rel in lists {
        let total = rel.iter().filter(|&&r| r).count() as f64;
        let mut ap = 0.0;
        for k in 0..rel.len() {
            if rel[k] {
                let precision = rel[..=k].iter().filter(|&&r| r).count() as f64 / (k + 1) as f64;
                ap += precision / total;
            }
        }
        ap_sum += ap;
        if rel[0] {
            top1 += 1.0;
        }
    }
    let n = lists.len() as f64;
    (100.0 * ap_sum / n, 100.0 * top1 / n)
}

#[test]
fn pipeline_matches_brute_force() {
    let mut checked = 0;
    for seed in 0..40 {
        let inst = instance(seed);
        for (mode, camera_aware) in [(Mode::Regular, true), (Mode::Centroid, true), (Mode::Centroid, false)] {
            let lists = ranked(&inst, mode, camera_aware);
            let metrics = evaluate(
                &inst.queries,
                &inst.query_labels,
                &inst.gallery,
                &inst.gallery_labels,
                EvalOptions { mode, camera_aware },
            );
            if lists.is_empty() {
                assert!(metrics.is_err(), "seed {seed}: expected no valid queries");
                continue;
            }
            let metrics = metrics.unwrap();
            let (map, top1) = oracle_metrics(&lists);
            assert_eq!(metrics.valid_queries, lists.len());
            assert!((metrics.map - map).abs() < TOL, "seed {seed} {mode}: {} vs {map}", metrics.map);
            assert!((metrics.top1 - top1).abs() < TOL, "seed {seed} {mode}");
            checked += 1;
        }
    }
    assert!(checked >= 30);
}
