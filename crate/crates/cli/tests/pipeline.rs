// Oracles index explicitly; configs are built by mutating defaults.
#![allow(clippy::needless_range_loop, clippy::field_reassign_with_default)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use valleyscope::datasets::{label_spins, save_patterns, PatternRecord, PIXEL_UNITS};
use valleyscope::rng::stream_rng;
use valleyscope::valleys::{attribute, state_index, Landscape};
use valleyscope::{RbmParams, Spin};
use valleyscope_cli::commands::{
    cmd_classify, cmd_compare, cmd_generate, cmd_reconstruct, cmd_sweep_scale, cmd_train,
};
use valleyscope_cli::config::DatasetConfig;
use valleyscope_cli::pipeline::{
    classify, compare, generate, read_label, reconstruct, sweep_scale_table, Dataset, LabelStatus,
    Layout,
};
use valleyscope_cli::ExperimentConfig;

/// Class patterns of the toy model: 4 pixels followed by a 2-unit label.
/// Over the masked pixels (2, 3) and the labels both patterns have one +1
/// and one -1, so an all -1 start in those units favours neither class.
const TOY: [[Spin; 6]; 2] = [[1, 1, 1, -1, 1, -1], [-1, -1, -1, 1, -1, 1]];

/// One hidden unit per stored pattern with weights `gamma` times the pattern.
/// The patterns are negatives of each other, so with zero biases they are the
/// two ground states.
fn memorizing_model(gamma: f64) -> RbmParams {
    let mut p = RbmParams::zeros(6, 2);
    for (i, pattern) in TOY.iter().enumerate() {
        for (j, &s) in pattern.iter().enumerate() {
            *p.weight_mut(i, j) = gamma * f64::from(s);
        }
    }
    p.with_labels(vec![4, 5]).unwrap()
}

fn toy_records(n: usize) -> Vec<PatternRecord> {
    (0..n)
        .map(|k| PatternRecord {
            visible: TOY[k % 2].to_vec(),
            class: (k % 2) as u8,
        })
        .collect()
}

fn toy_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.embedding.rows = 2;
    cfg.embedding.cols = 2;
    cfg.embedding.scales = vec![1.0, 2.0, 3.0];
    cfg.backend.schedule.sweeps = 200;
    cfg.task_reads = 20;
    cfg.sampling_reads = 200;
    cfg.compare.max_characterized = Some(2);
    cfg.compare.escape.trials = 5;
    cfg.compare.escape.max_jumps = 20_000;
    cfg.compare.width_traces = 2;
    cfg.seed = 11;
    cfg
}

#[test]
fn memorized_patterns_classify_and_reconstruct_exactly() {
    let params = memorizing_model(3.0);
    let mut cfg = toy_config();
    // Couplers must stay within [-1, 1].
    cfg.embedding.scale = 3.0;
    let tests = toy_records(10);
    for path in classify(&cfg, &params, &tests).unwrap() {
        assert_eq!(path.total, 10);
        assert_eq!((path.errors, path.invalid), (0, 0), "{}", path.path);
        assert_eq!(path.error_rate, 0.0);
    }
    for r in reconstruct(&cfg, &params, &tests).unwrap() {
        assert_eq!(r.mask, vec![2, 3], "second half of the pixels");
        assert_eq!(r.pixel_error, 0.0, "{}", r.path);
        for (row, t) in r.rows.iter().zip(&tests) {
            assert_eq!(&row.visible[..4], &t.visible[..4]);
        }
    }
}

#[test]
fn zero_model_classification_is_well_formed() {
    let params = RbmParams::zeros(6, 2).with_labels(vec![4, 5]).unwrap();
    let cfg = toy_config();
    let tests = toy_records(12);
    let paths = classify(&cfg, &params, &tests).unwrap();
    assert_eq!(
        paths.iter().map(|p| p.path.as_str()).collect::<Vec<_>>(),
        ["annealer", "mcmc"]
    );
    for p in &paths {
        assert_eq!(p.total, 12);
        assert_eq!(p.rows.len(), 12);
        assert!(p.invalid <= p.errors && p.errors <= p.total);
        assert_eq!(p.error_rate, p.errors as f64 / 12.0);
        for row in &p.rows {
            assert_eq!(row.correct, row.predicted == Some(row.class));
            assert_eq!(row.status == LabelStatus::Unique, row.predicted.is_some());
        }
    }
}

#[test]
fn ambiguous_labels_are_flagged_not_guessed() {
    let params = memorizing_model(1.0);
    let layout = Layout::of(&params);
    let both = [1, 1, 1, -1, 1, 1];
    let none = [1, 1, 1, -1, -1, -1];
    let r = read_label(&params, &layout, &both, false).unwrap();
    assert_eq!((r.predicted, r.status), (None, LabelStatus::MultipleLabels));
    let r = read_label(&params, &layout, &none, false).unwrap();
    assert_eq!((r.predicted, r.status), (None, LabelStatus::NoLabel));
    let r = read_label(&params, &layout, &none, true).unwrap();
    assert_eq!(
        (r.predicted, r.fallback_used),
        (Some(0), true),
        "pixels match class 0"
    );
}

#[test]
fn empty_mask_has_zero_error() {
    let params = RbmParams::zeros(6, 2).with_labels(vec![4, 5]).unwrap();
    let mut cfg = toy_config();
    cfg.reconstruct.mask = Some(Vec::new());
    for r in reconstruct(&cfg, &params, &toy_records(4)).unwrap() {
        assert_eq!(r.pixel_error, 0.0);
    }
}

#[test]
fn full_mask_on_zero_model_is_chance() {
    let params = RbmParams::zeros(10, 2).with_labels(vec![8, 9]).unwrap();
    let mut cfg = toy_config();
    cfg.embedding.cols = 3;
    cfg.task_reads = 1;
    cfg.reconstruct.mask = Some((0..8).collect());
    let tests: Vec<PatternRecord> = (0..200)
        .map(|k| PatternRecord {
            visible: (0..10)
                .map(|j| if (k + j) % 3 == 0 { 1 } else { -1 })
                .collect(),
            class: 0,
        })
        .collect();
    for r in reconstruct(&cfg, &params, &tests).unwrap() {
        // 1600 fair coin flips: four standard deviations is 0.05.
        assert!(
            (r.pixel_error - 0.5).abs() < 0.05,
            "{}: {}",
            r.path,
            r.pixel_error
        );
    }
}

#[test]
fn generation_is_sorted_distinct_and_respects_k() {
    let params = memorizing_model(1.0);
    let mut cfg = toy_config();
    assert!(generate(&cfg, &params, &[0, 1], 0).unwrap().is_empty());
    cfg.task_reads = 200;
    let images = generate(&cfg, &params, &[0, 1], 3).unwrap();
    for class in 0..2 {
        let mine: Vec<_> = images.iter().filter(|g| g.class == class).collect();
        assert!(!mine.is_empty() && mine.len() <= 3);
        assert!(mine.windows(2).all(|w| w[0].energy <= w[1].energy));
        assert_eq!(
            mine.iter().map(|g| g.rank).collect::<Vec<_>>(),
            (0..mine.len()).collect::<Vec<_>>()
        );
        let distinct: BTreeSet<_> = mine.iter().map(|g| g.visible[..4].to_vec()).collect();
        assert_eq!(distinct.len(), mine.len());
        assert_eq!(
            &mine[0].visible[..],
            &TOY[class][..],
            "the stored pattern is the ground state"
        );
        for g in &mine {
            assert_eq!(&g.visible[4..], &TOY[class][4..], "label stays clamped");
        }
    }
    assert!(generate(&cfg, &params, &[2], 1).is_err());
}

#[test]
fn gibbs_sample_of_a_memorizing_model_finds_the_training_valleys() {
    let params = memorizing_model(3.0);
    let mut cfg = toy_config();
    cfg.backend.name = "gibbs-as-annealer".into();
    let data = Dataset::new(toy_records(8), Vec::new(), vec![4, 5]).unwrap();
    let out = compare(&cfg, &params, &data).unwrap();
    let o = &out.summary.overlap;
    assert_eq!((o.n_a, o.shared), (2, 2));
    assert!(o.missed_by_b_fraction == 0.0);
    assert!(o.missed_by_a_fraction <= 0.1, "{o:?}");
    assert_eq!(out.summary.broken_chain_reads, 0);
    assert_eq!(
        out.training.records().map(|r| r.total_hits()).sum::<u64>(),
        8
    );
}

#[test]
fn compare_registries_match_the_landscape_oracle() {
    let params = RbmParams::random_uniform(8, 6, 0.8, &mut stream_rng(21, 0))
        .with_labels(vec![6, 7])
        .unwrap();
    let land = Landscape::enumerate(&params, 16).unwrap();
    let reach = land.reach_sets().unwrap();
    let mut cfg = toy_config();
    cfg.embedding.cols = 2;
    cfg.compare.pre_steps = 0;
    cfg.compare.max_characterized = Some(0);
    let train: Vec<PatternRecord> = (0..40)
        .map(|k| PatternRecord {
            visible: (0..8)
                .map(|j| if (k * 7 + j * 3) % 5 < 2 { 1 } else { -1 })
                .collect(),
            class: 0,
        })
        .collect();
    let data = Dataset::new(train.clone(), Vec::new(), vec![6, 7]).unwrap();
    let out = compare(&cfg, &params, &data).unwrap();

    // Independent attribution: each pattern must land in a minimum reachable
    // by descent from its lowest-energy hidden completion.
    let mut forced: BTreeSet<usize> = BTreeSet::new();
    for (k, p) in train.iter().enumerate() {
        let id = attribute(&params, &p.visible, 0, &mut stream_rng(0, k as u64)).unwrap();
        let idx = state_index(&id);
        assert!(land.is_minimum(idx));
        let h: Vec<Spin> = (0..6)
            .map(|i| {
                let f: f64 = params.c[i]
                    + (0..8)
                        .map(|j| params.weight(i, j) * f64::from(p.visible[j]))
                        .sum::<f64>();
                if f >= 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect();
        let start = state_index(&valleyscope::SpinState::new(p.visible.clone(), h));
        assert!(reach[start].contains(&(idx as u32)), "pattern {k}");
        if reach[start].len() == 1 {
            forced.insert(idx);
        }
    }
    let got: BTreeMap<usize, u64> = out
        .training
        .records()
        .map(|r| (state_index(&r.id), r.total_hits()))
        .collect();
    let reachable: BTreeSet<u32> = train
        .iter()
        .flat_map(|p| (0..1usize << 6).map(move |hi| (p, hi)))
        .flat_map(|(p, hi)| {
            let h: Vec<Spin> = (0..6)
                .map(|i| if hi >> i & 1 == 1 { 1 } else { -1 })
                .collect();
            reach[state_index(&valleyscope::SpinState::new(p.visible.clone(), h))].clone()
        })
        .collect();
    assert!(got.keys().all(|&k| reachable.contains(&(k as u32))));
    assert!(
        forced.iter().all(|k| got.contains_key(k)),
        "descent with a single target must find it"
    );
    assert_eq!(got.values().sum::<u64>(), 40);
    for r in out.training.records() {
        assert_eq!(r.min_energy, land.energies[state_index(&r.id)]);
    }
    // The summary and histograms agree with the registries.
    assert_eq!(out.summary.training_valleys, got.len());
    assert_eq!(
        out.summary.training_valleys_normalized,
        got.len() as f64 / 40.0
    );
    let shared = out
        .training
        .records()
        .filter(|r| out.sample.contains(&r.id))
        .count();
    assert_eq!(out.summary.overlap.shared, shared);
    assert_eq!(out.training_energy.total(), got.len() as u64);
    assert_eq!(
        out.training_energy
            .bins
            .iter()
            .map(|b| b.shared)
            .sum::<u64>(),
        shared as u64
    );
    assert_eq!(out.sample_energy.total(), out.sample.len() as u64);
}

#[test]
fn scale_sweep_has_one_row_per_scale_and_reports_the_argmin() {
    let params = memorizing_model(0.4);
    let cfg = toy_config();
    let table = sweep_scale_table(&cfg, &params, &toy_records(6)).unwrap();
    assert_eq!(
        table.rows.iter().map(|r| r.scale).collect::<Vec<_>>(),
        cfg.embedding.scales
    );
    let best = table
        .rows
        .iter()
        .fold(None::<(f64, f64)>, |acc, r| match acc {
            Some((_, e)) if e <= r.classification_error => acc,
            _ => Some((r.scale, r.classification_error)),
        })
        .unwrap();
    assert_eq!(table.best_scale, best.0);
    for r in &table.rows {
        assert!((0.0..=1.0).contains(&r.classification_error));
        assert!((0.0..=1.0).contains(&r.reconstruction_error));
    }
}

fn digit_like_patterns(n: usize, seed: u64) -> Vec<PatternRecord> {
    use rand::Rng;
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|k| {
            let class = (k % 8) as u8;
            let mut visible: Vec<Spin> = (0..PIXEL_UNITS)
                .map(|j| {
                    if (j + usize::from(class)) % 8 < 3 || rng.random_bool(0.05) {
                        1
                    } else {
                        -1
                    }
                })
                .collect();
            visible.extend(label_spins(class));
            PatternRecord { visible, class }
        })
        .collect()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

/// A 64-unit pattern dataset on a single cell row: cheap enough for the
/// full command sequence.
fn command_config(dir: &Path) -> ExperimentConfig {
    let train = dir.join("train.txt");
    let test = dir.join("test.txt");
    save_patterns(&train, &digit_like_patterns(32, 1)).unwrap();
    save_patterns(&test, &digit_like_patterns(8, 2)).unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.dataset = DatasetConfig::Patterns {
        train_path: train,
        test_path: Some(test),
    };
    cfg.model.hidden_units = 4;
    cfg.train.epochs = 3;
    cfg.train.batch_size = Some(8);
    cfg.checkpoint_every = Some(1);
    cfg.embedding.rows = 1;
    cfg.embedding.cols = 16;
    cfg.embedding.scales = vec![1.0, 2.0];
    cfg.backend.schedule.sweeps = 50;
    cfg.task_reads = 4;
    cfg.sampling_reads = 40;
    cfg.mcmc.sweeps = 10;
    cfg.generate.k = 2;
    cfg.generate.classes = Some(vec![0, 3]);
    cfg.compare.max_characterized = Some(1);
    cfg.compare.escape.trials = 3;
    cfg.compare.escape.max_jumps = 5_000;
    cfg.compare.width_traces = 2;
    cfg.seed = 5;
    cfg.out_dir = dir.join("out");
    cfg
}

fn run_all(cfg: &ExperimentConfig) {
    cmd_train(cfg).unwrap();
    let model = cfg.out_dir.join("train/model.json");
    cmd_classify(cfg, std::slice::from_ref(&model)).unwrap();
    cmd_reconstruct(cfg, &model).unwrap();
    cmd_generate(cfg, &model).unwrap();
    cmd_compare(cfg, &model).unwrap();
    cmd_sweep_scale(cfg, &model).unwrap();
}

#[test]
fn commands_are_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = command_config(dir.path());
    run_all(&cfg);
    let first = snapshot(&cfg.out_dir);
    for expected in [
        "manifest.json",
        "train/model.json",
        "train/metrics.csv",
        "train/checkpoints/model_epoch_000002.json",
        "classify/summary.csv",
        "reconstruct/reconstruct.json",
        "generate/generated.csv",
        "compare/valleys.csv",
        "compare/energy_training.csv",
        "sweep-scale/scale.csv",
    ] {
        assert!(
            first.contains_key(expected),
            "missing {expected}: {:?}",
            first.keys().collect::<Vec<_>>()
        );
    }
    std::fs::remove_dir_all(&cfg.out_dir).unwrap();
    run_all(&cfg);
    let second = snapshot(&cfg.out_dir);
    assert_eq!(
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>()
    );
    for (name, bytes) in &first {
        assert!(bytes == &second[name], "{name} differs between runs");
    }
}

#[test]
fn a_different_seed_changes_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = command_config(dir.path());
    cmd_train(&cfg).unwrap();
    let a = std::fs::read(cfg.out_dir.join("train/model.json")).unwrap();
    cfg.seed += 1;
    cmd_train(&cfg).unwrap();
    let b = std::fs::read(cfg.out_dir.join("train/model.json")).unwrap();
    assert_ne!(a, b);
}
