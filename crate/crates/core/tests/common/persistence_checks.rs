use std::collections::HashMap;

use cbce::data::{layout, load_manifest, write_manifest, Dataset};
use cbce::metrics::{MetricOptions, MetricReport};
use cbce::tensor::DType;
use cbce::train::{
    epoch_checkpoint, evaluate, load_checkpoint, save_checkpoint, train, StepLog, TrainOptions,
    FINAL_CHECKPOINT, LOG_FILE,
};
use cbce::Error;

pub fn same_seed_same_trace_and_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let (data, mut cfg) = super::tiny_experiment(dir.path(), 16);
    cfg.max_steps = Some(20);
    let (m1, r1) = train(&cfg, &data, TrainOptions::default()).unwrap();
    let (m2, r2) = train(&cfg, &data, TrainOptions::default()).unwrap();
    assert_eq!(r1.losses(), r2.losses());
    assert_eq!(m1.params, m2.params);
    cfg.seed += 1;
    let (_, r3) = train(&cfg, &data, TrainOptions::default()).unwrap();
    assert_ne!(r1.losses(), r3.losses());
}

pub fn two_step_run_writes_two_log_lines_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (data, mut cfg) = super::tiny_experiment(&dir.path().join("data"), 16);
    cfg.max_steps = Some(2);
    let out = dir.path().join("run");
    let opts = TrainOptions {
        out_dir: Some(out.clone()),
        ..Default::default()
    };
    let (_, rep) = train(&cfg, &data, opts).unwrap();
    let text = std::fs::read_to_string(out.join(LOG_FILE)).unwrap();
    let lines: Vec<StepLog> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines, rep.log);
    assert_eq!(lines.len(), 2);
    assert!(out.join(FINAL_CHECKPOINT).exists());
    assert!(out.join(epoch_checkpoint(1)).exists());
}

pub fn resuming_at_an_epoch_boundary_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = super::tiny_experiment(&dir.path().join("data"), 12);
    let n = data.len();
    let full_dir = dir.path().join("full");
    let (full_model, full) = train(
        &cfg,
        &data,
        TrainOptions {
            out_dir: Some(full_dir.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(full.log.len(), 2 * n);

    let resumed_dir = dir.path().join("resumed");
    let opts = TrainOptions {
        out_dir: Some(resumed_dir.clone()),
        resume: Some(full_dir.join(epoch_checkpoint(1))),
        ..Default::default()
    };
    let (model, rest) = train(&cfg, &data, opts).unwrap();
    assert_eq!(rest.log.as_slice(), &full.log[n..]);
    assert_eq!(model.params, full_model.params);

    let mut other = cfg.clone();
    other.seed = 99;
    let opts = TrainOptions {
        resume: Some(full_dir.join(epoch_checkpoint(1))),
        ..Default::default()
    };
    assert!(matches!(
        train(&other, &data, opts),
        Err(Error::Validation(_))
    ));
}

pub fn checkpoint_roundtrip_gives_bit_identical_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let (data, mut cfg) = super::tiny_experiment(dir.path(), 10);
    cfg.max_steps = Some(5);
    let (model, _) = train(&cfg, &data, TrainOptions::default()).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &model, None).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert!(back.train.is_none());
    assert_eq!(back.model.params, model.params);
    assert_eq!(back.model.config, model.config);
    let img = data.image(0).unwrap();
    let phrases = &data.records[0].phrases;
    for dtype in [DType::F64, DType::F32] {
        let a = model.predict(&img, phrases, dtype).unwrap();
        let b = back.model.predict(&img, phrases, dtype).unwrap();
        assert_eq!(a.data(), b.data());
    }
}

pub fn manifest_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    super::tiny_experiment(dir.path(), 8);
    let recs = load_manifest(&dir.path().join(layout::MANIFEST)).unwrap();
    assert_eq!(recs.len(), 8);
    let copy = dir.path().join("copy.jsonl");
    write_manifest(&copy, &recs).unwrap();
    assert_eq!(load_manifest(&copy).unwrap(), recs);
    assert_eq!(
        std::fs::read(&copy).unwrap(),
        std::fs::read(dir.path().join(layout::MANIFEST)).unwrap()
    );
}

pub fn report_roundtrips_through_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = super::tiny_experiment(dir.path(), 12);
    let test = Dataset::open(dir.path(), layout::TEST).unwrap();
    let model = cbce::model::Model::init(cfg.model.clone(), test.vocab.clone(), 0).unwrap();
    let rep = evaluate(
        &model,
        &test,
        Some(2),
        &MetricOptions::default(),
        DType::F64,
    )
    .unwrap();
    assert_eq!(rep.per_image.len(), test.len());

    let json = dir.path().join("r.json");
    rep.write_json(&json).unwrap();
    assert_eq!(MetricReport::load_json(&json).unwrap(), rep);

    let csv = dir.path().join("r.csv");
    rep.write_csv(&csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with(cbce::metrics::CSV_HEADER));
    let rows = MetricReport::parse_csv(&text).unwrap();
    assert_eq!(rows.len(), rep.per_image.len());
    for (a, b) in rows.iter().zip(&rep.per_image) {
        assert_eq!((&a.sample, &a.affordance), (&b.sample, &b.affordance));
        assert!((a.values.iou - b.values.iou).abs() < 1e-12);
        assert!((a.values.mae - b.values.mae).abs() < 1e-12);
    }
}

pub fn evaluating_ground_truth_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    super::tiny_experiment(dir.path(), 10);
    let test = Dataset::open(dir.path(), layout::TEST).unwrap();
    let preds: HashMap<String, Vec<f64>> = test
        .records
        .iter()
        .map(|r| (r.id.clone(), test.mask_of(r).unwrap().into_data()))
        .collect();
    let rep = cbce::metrics::evaluate_dataset(
        &preds,
        &test.records,
        |r| Ok(test.mask_of(r)?.into_data()),
        &MetricOptions::default(),
    )
    .unwrap();
    assert_eq!(rep.overall.iou, 1.0);
    assert_eq!(rep.overall.mae, 0.0);
}

pub fn divergence_reports_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let (data, mut cfg) = super::tiny_experiment(dir.path(), 10);
    cfg.base_lr = 1e150;
    cfg.max_steps = Some(10);
    match train(&cfg, &data, TrainOptions::default()) {
        Err(e @ Error::Diverged { .. }) => assert!(e.is_numeric()),
        other => panic!(
            "expected divergence, got {:?}",
            other.map(|(_, r)| r.losses())
        ),
    }
}
