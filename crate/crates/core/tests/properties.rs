use epsimage::attribute::{accuracy, cross_entropy_with_grads, AttributeClassifier};
use epsimage::ctl::centroid;
use epsimage::dataset::Task;
use epsimage::dp::{
    cell_representation, dp_log_ratio_bound, log_density_ratio, obfuscate, Epsilon, PrivacyParams, QuantiseMode,
};
use epsimage::embedding::{EmbeddingVector, FeatureVector};
use epsimage::raster::{load_ppm, save_ppm, ImageF64, ImageRgb};
use epsimage::retrieval::{average_precision, evaluate, EvalOptions, Identity};
use epsimage::seed::rng_from_seed;
use proptest::prelude::*;
use rand::Rng as _;

fn image_strategy(max_side: usize) -> impl Strategy<Value = ImageRgb> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), w * h * 3).prop_map(move |data| ImageRgb::new(w, h, data).unwrap())
    })
}

fn bin_width() -> impl Strategy<Value = u32> {
    (0u32..8).prop_map(|k| 1 << k)
}

fn epsilon() -> impl Strategy<Value = Epsilon> {
    prop_oneof![
        Just(Epsilon::Disabled),
        (-3.0f64..7.0).prop_map(|e| Epsilon::Value(10f64.powf(e))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ppm_round_trip(img in image_strategy(12)) {
        prop_assert_eq!(load_ppm(&save_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn clamp_round_inverts_to_float(img in image_strategy(12)) {
        prop_assert_eq!(img.to_float().clamp_round().unwrap(), img);
    }

    #[test]
    fn obfuscate_keeps_shape_and_cell_constancy(
        img in image_strategy(16),
        block in 1usize..6,
        bin in bin_width(),
        eps in epsilon(),
        seed in any::<u64>(),
    ) {
        let block = block.min(img.width()).min(img.height());
        let params = PrivacyParams::new(eps, block, bin).unwrap();
        let out = obfuscate(&img, &params, &mut rng_from_seed(seed)).unwrap();
        prop_assert_eq!((out.width(), out.height()), (img.width(), img.height()));
        for y in 0..out.height() {
            for x in 0..out.width() {
                let anchor = out.pixel(x - x % block, y - y % block);
                prop_assert_eq!(out.pixel(x, y), anchor);
            }
        }
    }

    #[test]
    fn noise_free_obfuscation_is_idempotent(
        img in image_strategy(16),
        block in 1usize..6,
        bin in bin_width(),
        midpoint in any::<bool>(),
    ) {
        let block = block.min(img.width()).min(img.height());
        let mode = if midpoint { QuantiseMode::Midpoint } else { QuantiseMode::Floor };
        let params = PrivacyParams::new(Epsilon::Disabled, block, bin).unwrap().with_quantise_mode(mode);
        let mut rng = rng_from_seed(0);
        let once = obfuscate(&img, &params, &mut rng).unwrap();
        let twice = obfuscate(&once, &params, &mut rng).unwrap();
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn centroid_is_permutation_and_translation_equivariant(
        points in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 1..8),
        shift in proptest::collection::vec(-5.0f64..5.0, 4),
        rotate in 0usize..8,
    ) {
        let evs: Vec<EmbeddingVector> = points.iter().cloned().map(EmbeddingVector).collect();
        let base = centroid(&evs, 0).unwrap();
        let mut permuted = evs.clone();
        let r = rotate % permuted.len();
        permuted.rotate_left(r);
        permuted.reverse();
        let c = centroid(&permuted, 0).unwrap();
        for (a, b) in base.values.iter().zip(&c.values) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let shifted: Vec<EmbeddingVector> = evs
            .iter()
            .map(|e| EmbeddingVector(e.values().iter().zip(&shift).map(|(v, s)| v + s).collect()))
            .collect();
        let cs = centroid(&shifted, 0).unwrap();
        for ((a, b), s) in base.values.iter().zip(&cs.values).zip(&shift) {
            prop_assert!((a + s - b).abs() < 1e-12);
        }
    }

    #[test]
    fn promoting_a_relevant_item_never_lowers_ap(
        relevance in proptest::collection::vec(any::<bool>(), 2..30),
        pick in any::<prop::sample::Index>(),
    ) {
        prop_assume!(relevance.iter().any(|&r| r));
        let ap = average_precision(&relevance).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        // swap one relevant item with the irrelevant item directly above it
        let candidates: Vec<usize> = (1..relevance.len()).filter(|&i| relevance[i] && !relevance[i - 1]).collect();
        if !candidates.is_empty() {
            let i = candidates[pick.index(candidates.len())];
            let mut better = relevance.clone();
            better.swap(i, i - 1);
            prop_assert!(average_precision(&better).unwrap() > ap);
        }
    }

    #[test]
    fn retrieval_is_invariant_under_isometries(seed in any::<u64>(), angle in 0.0f64..std::f64::consts::TAU) {
        let mut rng = rng_from_seed(seed);
        let mut point = || EmbeddingVector(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        let queries: Vec<EmbeddingVector> = (0..4).map(|_| point()).collect();
        let gallery: Vec<EmbeddingVector> = (0..12).map(|_| point()).collect();
        let ql: Vec<Identity> = (0..4).map(|i| Identity { person_id: i, camera_id: 0 }).collect();
        let gl: Vec<Identity> = (0..12).map(|j| Identity { person_id: j % 4, camera_id: 1 + j / 4 }).collect();
        let (s, c) = angle.sin_cos();
        let iso = |e: &EmbeddingVector| {
            let v = e.values();
            EmbeddingVector(vec![c * v[0] - s * v[1] + 3.0, s * v[0] + c * v[1] - 7.0])
        };
        let tq: Vec<EmbeddingVector> = queries.iter().map(iso).collect();
        let tg: Vec<EmbeddingVector> = gallery.iter().map(iso).collect();
        for options in [EvalOptions::regular(), EvalOptions::centroid()] {
            let a = evaluate(&queries, &ql, &gallery, &gl, options).unwrap();
            let b = evaluate(&tq, &ql, &tg, &gl, options).unwrap();
            prop_assert!((a.map - b.map).abs() < 1e-9);
            prop_assert!((a.top1 - b.top1).abs() < 1e-9);
        }
    }

    #[test]
    fn classifier_is_symmetric_under_class_relabelling(seed in any::<u64>(), shift in 1usize..4) {
        let (classes, dim, n) = (4, 5, 30);
        let mut rng = rng_from_seed(seed);
        let weights: Vec<f64> = (0..classes * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..classes).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let feats: Vec<FeatureVector> =
            (0..n).map(|_| FeatureVector((0..dim).map(|_| rng.gen_range(0.0..1.0)).collect())).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let clf = AttributeClassifier { task: Task::Age, classes, feature_dim: dim, weights, bias };
        // class k becomes class (k + shift) mod C in both the labels and the rows
        let relabel = |k: usize| (k + shift) % classes;
        let mut moved = clf.clone();
        for k in 0..classes {
            let to = relabel(k);
            moved.weights[to * dim..(to + 1) * dim].copy_from_slice(&clf.weights[k * dim..(k + 1) * dim]);
            moved.bias[to] = clf.bias[k];
        }
        let moved_labels: Vec<usize> = labels.iter().map(|&l| relabel(l)).collect();
        let (la, _, _) = cross_entropy_with_grads(&clf, &feats, &labels).unwrap();
        let (lb, _, _) = cross_entropy_with_grads(&moved, &feats, &moved_labels).unwrap();
        prop_assert!((la - lb).abs() < 1e-12);
        prop_assert_eq!(accuracy(&clf, &feats, &labels).unwrap(), accuracy(&moved, &feats, &moved_labels).unwrap());
    }
}

/// Random image pairs whose cell representations differ by at most Δf in L1.
/// The Laplace density ratio at any output must then stay within `e^ε`.
#[test]
fn density_ratio_bounded_by_epsilon() {
    const PAIRS: usize = 200;
    const TOL: f64 = 1e-9;
    let mut rng = rng_from_seed(2024);
    for eps in [1e-3, 1.0, 1e3] {
        let mut accepted = 0;
        while accepted < PAIRS {
            let (w, h) = (rng.gen_range(4..=16), rng.gen_range(4..=16));
            let block = rng.gen_range(1..=4usize);
            let bin = 1u32 << rng.gen_range(0..8);
            let params = PrivacyParams::new(Epsilon::Value(eps), block, bin).unwrap();
            let sens = params.sensitivity(w, h).unwrap();
            let scale = params.noise_scale(w, h).unwrap().unwrap().get();
            let a = ImageRgb::new(w, h, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap();
            // neighbour: a random subset of channel values redrawn
            let changed = rng.gen_range(1..=w * h * 3);
            let mut data = a.data().to_vec();
            for _ in 0..changed {
                let i = rng.gen_range(0..data.len());
                data[i] = rng.gen();
            }
            let b = ImageRgb::new(w, h, data).unwrap();
            let u = cell_representation(&a, &params).unwrap();
            let v = cell_representation(&b, &params).unwrap();
            let l1: f64 = u.data().iter().zip(v.data()).map(|(x, y)| (x - y).abs()).sum();
            if l1 > sens.delta_f {
                continue;
            }
            accepted += 1;
            let bound = dp_log_ratio_bound(&u, &v, scale).unwrap();
            assert!(bound <= eps + TOL, "ε={eps}: bound {bound} with L1 {l1}");
            // the bound dominates the realised log ratio at a noised output
            let y = ImageF64::new(
                u.width(),
                u.height(),
                u.data().iter().map(|x| x + rng.gen_range(-3.0 * scale..3.0 * scale)).collect(),
            )
            .unwrap();
            let realised = log_density_ratio(&y, &u, &v, scale).unwrap();
            assert!(realised.abs() <= bound + TOL);
        }
    }
}
