use bamlab::auxvar::run_stage1;
use bamlab::config::{Criterion, ExperimentConfig, Stage2Mode};
use bamlab::data::SplitDataset;
use bamlab::model::ModelParams;
use bamlab::pipeline::{
    build_error_set, evaluate, run_experiment, run_experiment_detailed, select_epoch, stage2_from, train_erm,
    upsample, PreparedData, SgdSettings, SplitKind,
};
use bamlab::rng::{stream, Stream};

fn small(seed: u64) -> (ExperimentConfig, SplitDataset) {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.n_total = 600;
    cfg.dataset.seed = seed;
    cfg.run.seed = seed;
    cfg.run.stage1_epochs = 3;
    cfg.run.stage2_epochs = 4;
    cfg.run.hidden_dims = vec![16, 8];
    let split = SplitDataset::generate(&cfg.dataset).unwrap();
    (cfg, split)
}

#[test]
fn identical_inputs_give_identical_summaries() {
    let (cfg, split) = small(1);
    let a = run_experiment(&cfg, &split).unwrap();
    let b = run_experiment(&cfg, &split).unwrap();
    assert_eq!(a.render(), b.render());
    assert!(a.record(SplitKind::Validation, a.selected_epoch).is_some());
}

#[test]
fn stage2_from_checkpoint_matches_in_memory_handoff() {
    let (cfg, split) = small(2);
    let out = run_experiment_detailed(&cfg, &split).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stage1.ckpt");
    out.biased_model.save_checkpoint(&path).unwrap();
    let loaded = ModelParams::load_checkpoint(&path).unwrap();
    assert_eq!(loaded, out.biased_model);

    let data = PreparedData::new(&split).unwrap();
    let (s2, sel) = stage2_from(&loaded, &out.error_set, &cfg.run, &data).unwrap();
    assert_eq!(s2.records, out.summary.trajectory);
    assert_eq!(s2.train_losses, out.summary.stage2_losses);
    assert_eq!(sel.epoch, out.summary.selected_epoch);
    assert_eq!(s2.model, out.final_model);
}

#[test]
fn one_m_epoch_zero_is_the_biased_model() {
    let (cfg, split) = small(3);
    let out = run_experiment_detailed(&cfg, &split).unwrap();
    let data = PreparedData::new(&split).unwrap();
    let direct = evaluate(&out.biased_model, &data.validation, 0).unwrap();
    assert_eq!(out.summary.record(SplitKind::Validation, 0), Some(&direct));
}

#[test]
fn mu_one_lambda_zero_two_m_is_plain_erm() {
    let (cfg, split) = small(4);
    let mut degenerate = cfg.clone();
    degenerate.run.lambda = 0.0;
    degenerate.run.mu = 1;
    degenerate.run.mode = Stage2Mode::TwoM;
    let mut erm = cfg.clone();
    erm.run = cfg.run.erm();
    let a = run_experiment(&degenerate, &split).unwrap();
    let b = run_experiment(&erm, &split).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.stage2_losses, b.stage2_losses);
}

#[test]
fn jtt_is_lambda_zero_two_m() {
    let (cfg, _) = small(5);
    let j = cfg.run.jtt();
    assert_eq!((j.lambda, j.mode), (0.0, Stage2Mode::TwoM));
    assert_eq!((j.stage1_epochs, j.mu), (cfg.run.stage1_epochs, cfg.run.mu));
}

#[test]
fn stage1_with_lambda_zero_is_the_erm_path() {
    let (cfg, split) = small(6);
    let data = split.train_data().unwrap();
    let mut run = cfg.run.clone();
    run.lambda = 0.0;
    let dims = run.layer_dims(data.feature_dim(), data.num_classes());
    let init = ModelParams::init_with_rng(&dims, run.seed, &mut stream(run.seed, Stream::Init)).unwrap();

    let s1 = run_stage1(init.clone(), &data, &run).unwrap();
    let mut erm_model = init;
    let identity: Vec<usize> = (0..data.len()).collect();
    let losses = train_erm(
        &mut erm_model,
        &data,
        &identity,
        run.stage1_epochs,
        SgdSettings {
            learning_rate: run.learning_rate,
            momentum: run.momentum,
            weight_decay: run.weight_decay_stage1,
            batch_size: run.batch_size,
        },
        &mut stream(run.seed, Stream::Stage1Shuffle),
    )
    .unwrap();
    assert_eq!(s1.epoch_losses, losses);
    assert_eq!(s1.model, erm_model);
    assert!(s1.aux.values().values().iter().all(|&b| b == 0.0));
}

#[test]
fn selection_ignores_test_records() {
    let (cfg, split) = small(7);
    let summary = run_experiment(&cfg, &split).unwrap();
    let mut tampered: Vec<_> = summary.trajectory.iter().filter(|r| r.epoch > 0).cloned().collect();
    for r in tampered.iter_mut().filter(|r| r.split == SplitKind::Test) {
        r.class_diff = 1.0 - r.class_diff;
        r.worst_group_accuracy = r.worst_group_accuracy.map(|w| 1.0 - w);
    }
    for c in [Criterion::WorstGroupVal, Criterion::ClassDiff] {
        let honest: Vec<_> = summary.trajectory.iter().filter(|r| r.epoch > 0).cloned().collect();
        assert_eq!(
            select_epoch(&honest, c, 0.1).unwrap(),
            select_epoch(&tampered, c, 0.1).unwrap()
        );
    }
}

#[test]
fn worst_group_selection_is_an_argmax() {
    let (cfg, split) = small(8);
    let s = run_experiment(&cfg, &split).unwrap();
    let best = s.record(SplitKind::Validation, s.selected_epoch).unwrap().worst_group_accuracy.unwrap();
    for r in s.records(SplitKind::Validation).filter(|r| r.epoch > 0) {
        assert!(r.worst_group_accuracy.unwrap() <= best);
    }
    assert!(s.selected_epoch >= 1);
}

#[test]
fn error_set_feeds_upsampling() {
    let (cfg, split) = small(9);
    let data = split.train_data().unwrap();
    let dims = cfg.run.layer_dims(data.feature_dim(), data.num_classes());
    let model = ModelParams::init(&dims, 0).unwrap();
    let e = build_error_set(&model, &data).unwrap();
    let m = upsample(data.len(), &e, 5).unwrap();
    assert_eq!(m.len(), data.len() - e.len() + 5 * e.len());
}

#[test]
fn class_diff_needs_no_validation_groups() {
    let (mut cfg, mut split) = small(10);
    split.withhold_validation_groups();
    cfg.run.criterion = Criterion::ClassDiff;
    let s = run_experiment(&cfg, &split).unwrap();
    assert!(s.records(SplitKind::Validation).all(|r| r.worst_group_accuracy.is_none()));
    assert!(s.test_worst_group_accuracy().is_some());

    cfg.run.criterion = Criterion::WorstGroupVal;
    let err = run_experiment(&cfg, &split).unwrap_err();
    assert!(err.is_usage());
}
