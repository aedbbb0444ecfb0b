use std::collections::HashSet;

use epsimage::ctl::{self, sample_batches_seeded, CtlConfig};
use epsimage::dataset::{synth_generate, Split, SynthConfig, Task};
use epsimage::embedding::{hist_features, FeatureConfig, FeatureVector, LinearEmbedder};
use epsimage::experiment::{self, AttrConfig, Cell, LoadedDataset, PipelineFlags, ReidConfig};
use epsimage::dp::Epsilon;

fn loaded(config: &SynthConfig) -> LoadedDataset {
    let synth = synth_generate(config).unwrap();
    LoadedDataset::new(synth.manifest, synth.images).unwrap()
}

fn train_features(data: &LoadedDataset, features: FeatureConfig) -> (Vec<FeatureVector>, Vec<u32>) {
    data.manifest
        .persons_in(Split::Train)
        .map(|r| (hist_features(data.image(&r.image_path).unwrap(), features), r.person_id))
        .unzip()
}

#[test]
fn every_class_appears_each_epoch() {
    let labels: Vec<u32> = (0..50).map(|i| i % 13).collect();
    for seed in 0..10 {
        let batches = sample_batches_seeded(&labels, 4, 3, seed).unwrap();
        assert_eq!(batches.len(), 4);
        let seen: HashSet<u32> = batches.iter().flat_map(|b| b.groups.iter().map(|(c, _)| *c)).collect();
        assert_eq!(seen.len(), 13);
        for b in &batches {
            assert_eq!(b.groups.len(), 4);
            let classes: HashSet<u32> = b.groups.iter().map(|(c, _)| *c).collect();
            assert_eq!(classes.len(), 4, "classes within a batch are distinct");
            for (class, idx) in &b.groups {
                assert_eq!(idx.len(), 3);
                assert!(idx.iter().all(|&i| labels[i] == *class));
            }
        }
    }
}

#[test]
fn two_identities_loss_decreases() {
    let data = loaded(&SynthConfig {
        n_ids: 2,
        n_cameras: 2,
        imgs_per_pair: 4,
        train_fraction: 1.0,
        seed: 3,
        ..SynthConfig::default()
    });
    let features = FeatureConfig::default();
    let (x, y) = train_features(&data, features);
    let config = CtlConfig {
        classes_per_batch: 2,
        instances_per_class: 4,
        epochs: 5,
        ..CtlConfig::default()
    };
    let out = ctl::train(&LinearEmbedder::random(features, 8, 1), &x, &y, &config).unwrap();
    assert_eq!(out.loss_trace.len(), 5);
    assert!(out.loss_trace.last().unwrap() < out.loss_trace.first().unwrap(), "{:?}", out.loss_trace);
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let data = loaded(&SynthConfig {
        n_ids: 8,
        imgs_per_pair: 2,
        train_fraction: 1.0,
        ..SynthConfig::default()
    });
    let features = FeatureConfig::default();
    let (x, y) = train_features(&data, features);
    let start = LinearEmbedder::random(features, 16, 4);
    let config = CtlConfig {
        learning_rate: 0.0,
        epochs: 3,
        ..CtlConfig::default()
    };
    let out = ctl::train(&start, &x, &y, &config).unwrap();
    assert_eq!(out.embedder, start);
    assert_eq!(out.loss_trace.len(), 3);
}

#[test]
fn identical_instances_with_zero_margin_reach_zero_loss() {
    // every instance of a class has the same features, so positives sit on
    // the anchor and the hinge is never active
    let features = FeatureConfig::new(1, 2).unwrap();
    let x: Vec<FeatureVector> = (0..24)
        .map(|i| {
            let class = (i % 8) as f64;
            FeatureVector(vec![class / 8.0, 1.0 - class / 8.0, 0.5, 0.5, 0.25, 0.75])
        })
        .collect();
    let y: Vec<u32> = (0..24).map(|i| i % 8).collect();
    let config = CtlConfig {
        margin: 0.0,
        epochs: 4,
        ..CtlConfig::default()
    };
    let out = ctl::train(&LinearEmbedder::random(features, 4, 9), &x, &y, &config).unwrap();
    assert_eq!(*out.loss_trace.last().unwrap(), 0.0);
}

#[test]
fn clean_synthetic_gender_is_learnable() {
    let data = loaded(&SynthConfig {
        n_ids: 20,
        seed: 5,
        ..SynthConfig::default()
    });
    let config = AttrConfig {
        tasks: vec![Task::Gender],
        ..AttrConfig::default()
    };
    let results = experiment::evaluate_attributes(&data, &config, 5).unwrap();
    assert_eq!(results[0].task, Task::Gender);
    assert!(results[0].accuracy >= 90.0, "accuracy {}", results[0].accuracy);
    assert_eq!(results[0].chance_uniform, 50.0);
}

#[test]
fn cell_results_depend_only_on_the_cell_seed() {
    let data = loaded(&SynthConfig {
        n_ids: 16,
        imgs_per_pair: 3,
        seed: 1,
        ..SynthConfig::default()
    });
    let reid = ReidConfig {
        ctl: CtlConfig {
            epochs: 4,
            ..CtlConfig::default()
        },
        ..ReidConfig::default()
    };
    let attr = AttrConfig {
        classifier: epsimage::attribute::ClassifierConfig {
            epochs: 20,
            ..Default::default()
        },
        ..AttrConfig::default()
    };
    let flags = PipelineFlags::default();
    let cells = [
        Cell {
            block: 2,
            bin: 32,
            epsilon: Epsilon::Value(1e3),
        },
        Cell {
            block: 4,
            bin: 16,
            epsilon: Epsilon::Disabled,
        },
    ];
    let forward: Vec<_> = cells
        .iter()
        .map(|c| experiment::run_cell(&data, *c, c.seed(42), &reid, &attr, &flags).unwrap())
        .collect();
    let backward: Vec<_> = cells
        .iter()
        .rev()
        .map(|c| experiment::run_cell(&data, *c, c.seed(42), &reid, &attr, &flags).unwrap())
        .collect();
    assert_eq!(forward[0], backward[1]);
    assert_eq!(forward[1], backward[0]);
    assert_eq!(forward[0].reid.len(), 2);
    assert_eq!(forward[0].attributes.len(), 3);
}
