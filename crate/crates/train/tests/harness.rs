use arcal_core::geometry::{box_from_corners, yaw_error_mod_pi, DEFAULT_HEIGHT_THRESHOLD};
use arcal_core::AugmentConfig;
use arcal_detector::{Kind, NetworkConfig};
use arcal_train::*;

fn tiny_spec() -> SceneSpec {
    SceneSpec {
        floor_points: 120,
        robot_points: 80,
        clutter_points: 20,
        clutter: 2,
        ..SceneSpec::default()
    }
}

fn tiny_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        base_lr: 0.01,
        lr_milestones: vec![(2, 0.5), (4, 0.5)],
        subsample_n: 64,
        seed: 3,
        checkpoint_every: 3,
        ..TrainConfig::default()
    }
}

fn corpus() -> (Vec<arcal_core::LabeledCloud>, DatasetSplit) {
    let data = synth_corpus(&tiny_spec(), 6, 40).unwrap();
    let ids: Vec<String> = data.iter().map(|d| d.cloud_id.clone()).collect();
    let split = split_dataset(&ids, 4, 1).unwrap();
    (data, split)
}

#[test]
fn recipe_schedule_values() {
    let c = TrainConfig::default();
    assert_eq!((c.epochs, c.batch_size, c.subsample_n), (480, 8, 25_000));
    for (e, lr) in [(0, 1e-3), (199, 1e-3), (200, 1e-4), (399, 1e-4), (400, 1e-5), (479, 1e-5)] {
        assert!((c.lr_at(e) - lr).abs() < 1e-15, "epoch {e}: {}", c.lr_at(e));
    }
}

#[test]
fn batches_carry_exactly_the_subsample_size() {
    let spec = SceneSpec {
        floor_points: 20_000,
        robot_points: 3_000,
        clutter_points: 400,
        ..SceneSpec::default()
    };
    let small = synth_scene(&SceneSpec { floor_points: 500, ..spec.clone() }, 8).unwrap().labeled;
    let big = synth_scene(&spec, 9).unwrap().labeled;
    let cfg = TrainConfig::default();
    let batches = epoch_batches(&[&small, &big], &cfg, 0).unwrap();
    assert_eq!(batches.len(), 1);
    for s in &batches[0] {
        assert_eq!(s.cloud.len(), 25_000);
    }
}

#[test]
fn paper_split_sizes() {
    let ids: Vec<String> = (0..597).map(|i| format!("c{i:03}")).collect();
    let s = split_dataset(&ids, default_train_count(597), 5).unwrap();
    assert_eq!((s.train_ids.len(), s.test_ids.len()), (537, 60));
    let mut all: Vec<_> = s.train_ids.iter().chain(&s.test_ids).cloned().collect();
    all.sort();
    assert_eq!(all, {
        let mut v = ids.clone();
        v.sort();
        v
    });
}

#[test]
fn history_has_one_entry_per_epoch() {
    let (data, split) = corpus();
    let run = train(&data, &split, NetworkConfig::tiny(), &tiny_cfg(3), &RunOptions::default()).unwrap();
    let h = run.history();
    assert_eq!(h.len(), 3);
    assert!(h.iter().enumerate().all(|(i, s)| s.epoch == i && s.loss.total.is_finite()));
    assert_eq!(run.state.detector.epoch, 3);
}

#[test]
fn resume_reproduces_an_uninterrupted_run() {
    let (data, split) = corpus();
    let dir = tempfile::tempdir().unwrap();
    let straight = train(&data, &split, NetworkConfig::tiny(), &tiny_cfg(6), &RunOptions::default()).unwrap();

    let opts = RunOptions {
        run_dir: Some(dir.path().to_path_buf()),
    };
    let first = train(&data, &split, NetworkConfig::tiny(), &tiny_cfg(3), &opts).unwrap();
    let ckpt = dir.path().join("resume.ckpt");
    first.state.save(&tiny_cfg(3), &ckpt).unwrap();
    let (state, saved_cfg) = TrainState::load(&ckpt).unwrap();
    assert_eq!(saved_cfg, tiny_cfg(3));
    assert_eq!(state, first.state);
    let resumed = resume(&data, &split, state, &tiny_cfg(6), &RunOptions::default()).unwrap();

    assert_eq!(resumed.history(), straight.history());
    assert_eq!(resumed.state.detector, straight.state.detector);
    assert_eq!(resumed.state.adam, straight.state.adam);
    assert!(dir.path().join("history.json").exists());
    assert!(dir.path().join("epoch-0003.ckpt").exists());
}

#[test]
fn divergence_stops_with_a_checkpoint() {
    let (data, split) = corpus();
    let dir = tempfile::tempdir().unwrap();
    let mut state = TrainState::fresh(NetworkConfig::tiny(), &tiny_cfg(2)).unwrap();
    for (_, w) in state.detector.weights.tensors_mut(Kind::Trainable) {
        w.fill(f64::NAN);
    }
    let opts = RunOptions {
        run_dir: Some(dir.path().to_path_buf()),
    };
    match resume(&data, &split, state, &tiny_cfg(2), &opts) {
        Err(Error::Diverged { epoch: 0, checkpoint: Some(p) }) => {
            assert!(p.exists());
            assert!(TrainState::load(&p).is_ok());
        }
        other => panic!("expected divergence, got {:?}", other.map(|r| r.history().len())),
    }
}

#[test]
fn evaluation_leaves_the_model_untouched() {
    let (data, split) = corpus();
    let run = train(&data, &split, NetworkConfig::tiny(), &tiny_cfg(2), &RunOptions::default()).unwrap();
    let before = run.state.detector.clone();
    let refs: Vec<_> = data.iter().collect();
    let a = evaluate(&run.state.detector, &refs).unwrap();
    let b = evaluate(&run.state.detector, &refs).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.batch_size, 1);
    assert_eq!(run.state.detector, before);
}

#[test]
fn augmentation_is_part_of_the_sample_stream() {
    let (data, _) = corpus();
    let refs: Vec<_> = data.iter().collect();
    let plain = TrainConfig {
        augment: AugmentConfig::disabled(),
        ..tiny_cfg(1)
    };
    let a = epoch_batches(&refs, &tiny_cfg(1), 0).unwrap();
    let b = epoch_batches(&refs, &plain, 0).unwrap();
    assert_eq!(a.len(), b.len());
    assert_ne!(a, b);
    assert_eq!(epoch_batches(&refs, &tiny_cfg(1), 0).unwrap(), a);
    assert_ne!(epoch_batches(&refs, &tiny_cfg(1), 1).unwrap(), a);
}

#[test]
fn annotation_recovers_synthetic_boxes() {
    let spec = SceneSpec::default();
    for seed in 0..100 {
        let s = synth_scene(&spec, 1000 + seed).unwrap();
        let truth = s.truth.unwrap();
        let got = box_from_corners(&s.labeled.cloud, &base_corners(&truth), DEFAULT_HEIGHT_THRESHOLD).unwrap();
        let size = truth.size();
        let d = got.center() - truth.center();
        for k in 0..3 {
            assert!(d[k].abs() <= 1e-3 * size[k], "seed {seed}: axis {k} off by {}", d[k]);
        }
        assert!(yaw_error_mod_pi(got.yaw(), truth.yaw()) <= 1e-3, "seed {seed}");
    }
}

#[test]
fn dataset_directory_round_trip() {
    let mut data = synth_corpus(&tiny_spec(), 3, 7).unwrap();
    data.push(synth_scene(&SceneSpec { has_object: false, ..tiny_spec() }, 99).unwrap().labeled);
    let dir = tempfile::tempdir().unwrap();
    save_dir(dir.path(), &data).unwrap();
    std::fs::write(dir.path().join("unlabeled.ply"), arcal_core::ply::to_ply_string(&data[0].cloud)).unwrap();
    let back = load_dir(dir.path()).unwrap();
    assert_eq!(back.len(), data.len());
    for (a, b) in back.iter().zip(&data) {
        assert_eq!(a.cloud_id, b.cloud_id);
        assert_eq!(a.label.is_some(), b.label.is_some());
        assert_eq!(a.cloud.len(), b.cloud.len());
    }
}
