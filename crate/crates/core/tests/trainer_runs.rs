mod common;

use std::collections::BTreeMap;

use common::*;
use langshift_core::bpe::Vocab;
use langshift_core::corpus::SplitSizes;
use langshift_core::trainer::{
    fresh_checkpoint, load_checkpoint, open_stage_stream, run_plan, run_stage, save_checkpoint, ExperimentPlan,
    StageContext,
};
use langshift_core::Error;

const SEQ: usize = 16;

fn setup() -> (langshift_core::trainer::ExperimentData, ExperimentPlan) {
    let corpora = languages(&[small_spec("a", "abcdefgh", 120), small_spec("b", "ijklmnop", 120)], 5);
    let vocab = Vocab::bytes_only();
    let data = experiment_data(
        &corpora,
        &vocab,
        SEQ,
        SplitSizes {
            train: 100,
            val: 10,
            test: 10,
        },
        1,
    );
    let model = tiny_model(vocab.len(), SEQ);
    let plan = ExperimentPlan::sequential(
        "a-b",
        vec![stage("a", 30, 4, 3e-3), stage("b", 30, 4, 3e-3)],
        model,
        11,
        vec!["a".into(), "b".into()],
    );
    (data, plan)
}

fn ctx<'a>(
    plan: &'a ExperimentPlan,
    data: &'a langshift_core::trainer::ExperimentData,
    testsets: &'a BTreeMap<String, Vec<Vec<u32>>>,
    stop_after: Option<u64>,
) -> StageContext<'a> {
    StageContext {
        plan_id: &plan.id,
        tokenizer_hash: &data.tokenizer_hash,
        testsets,
        eval_languages: &plan.eval_languages,
        val: &data.languages["a"].val,
        options: &plan.train,
        stage_dir: None,
        stop_after,
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (data, mut plan) = setup();
    plan.stages[0].steps = 100;
    let testsets = data.testsets();
    let start = fresh_checkpoint(&plan, &data.tokenizer_hash).unwrap();

    let mut s = open_stage_stream(&plan, 0, &data, None).unwrap();
    let mut full_start = start.clone();
    full_start.rng = s.rng().state();
    let full = run_stage(
        full_start.clone(),
        &plan.stages[0],
        &mut s,
        &ctx(&plan, &data, &testsets, None),
    )
    .unwrap();

    let mut s = open_stage_stream(&plan, 0, &data, None).unwrap();
    let half = run_stage(
        full_start,
        &plan.stages[0],
        &mut s,
        &ctx(&plan, &data, &testsets, Some(50)),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    save_checkpoint(&half.checkpoint, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert!(loaded.bitwise_eq(&half.checkpoint));
    let mut s = open_stage_stream(&plan, 0, &data, Some(&loaded)).unwrap();
    let rest = run_stage(loaded, &plan.stages[0], &mut s, &ctx(&plan, &data, &testsets, None)).unwrap();

    let a: Vec<u32> = full.curve.iter().map(|p| p.train_loss.to_bits()).collect();
    let b: Vec<u32> = half
        .curve
        .iter()
        .chain(&rest.curve)
        .map(|p| p.train_loss.to_bits())
        .collect();
    assert_eq!(a.len(), 100);
    assert_eq!(a, b);
    assert!(full.checkpoint.bitwise_eq(&rest.checkpoint));
}

#[test]
fn zero_step_stage_is_identity() {
    let (data, mut plan) = setup();
    plan.stages[0].steps = 0;
    plan.stages[0].schedule.warmup_steps = 0;
    plan.stages[0].schedule.tail_steps = 0;
    let testsets = data.testsets();
    let start = fresh_checkpoint(&plan, &data.tokenizer_hash).unwrap();
    let mut s = open_stage_stream(&plan, 0, &data, None).unwrap();
    let out = run_stage(
        start.clone(),
        &plan.stages[0],
        &mut s,
        &ctx(&plan, &data, &testsets, None),
    )
    .unwrap();
    assert!(out.checkpoint.bitwise_eq(&start));
    assert!(out.curve.is_empty());
    let before =
        langshift_core::trainer::evaluate_record(&start, "a-b", "a", &testsets, &plan.eval_languages, 16).unwrap();
    assert_eq!(out.record, before);
}

#[test]
fn two_stage_run_is_deterministic_and_writes_outputs() {
    let (data, plan) = setup();
    let dir = tempfile::tempdir().unwrap();
    let a = run_plan(&plan, &data, Some(dir.path()), None).unwrap();
    let b = run_plan(&plan, &data, None, None).unwrap();
    assert_eq!(a.records.len(), 2);
    assert_eq!(a.records, b.records);
    for r in &a.records {
        assert_eq!(r.losses.len(), 2);
        assert!(r.losses.values().all(|l| l.is_finite() && *l > 0.0));
    }
    for (x, y) in a.checkpoints.iter().zip(&b.checkpoints) {
        assert!(x.bitwise_eq(y));
    }
    assert_eq!(a.checkpoints[1].adam_t, 30);
    assert_eq!(a.checkpoints[1].global_step, 60);
    let stage_dir = dir.path().join("stage01-b");
    assert!(stage_dir.join("checkpoint.ckpt").exists());
    let csv = std::fs::read_to_string(stage_dir.join("loss_curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 31);
    let recs = langshift_core::trainer::read_records(&dir.path().join("records.jsonl")).unwrap();
    assert_eq!(recs, a.records);

    // Resuming from the end of stage 0 reproduces stage 1 exactly.
    let stage0 = load_checkpoint(&dir.path().join("stage00-a/checkpoint.ckpt")).unwrap();
    let resumed = run_plan(&plan, &data, Some(dir.path()), Some(stage0)).unwrap();
    assert_eq!(resumed.records, a.records);
}

#[test]
fn integrity_and_config_errors() {
    let (data, plan) = setup();
    let testsets = data.testsets();
    let mut start = fresh_checkpoint(&plan, "other-tokenizer").unwrap();
    let mut s = open_stage_stream(&plan, 0, &data, None).unwrap();
    start.rng = s.rng().state();
    let r = run_stage(start, &plan.stages[0], &mut s, &ctx(&plan, &data, &testsets, None));
    assert!(matches!(r, Err(Error::Integrity(_))));

    let mut missing = plan.clone();
    missing.stages[1].language = "zz".into();
    assert!(matches!(run_plan(&missing, &data, None, None), Err(Error::Config(_))));

    let mut wrong = fresh_checkpoint(&plan, &data.tokenizer_hash).unwrap();
    wrong.plan_fingerprint = "x".into();
    assert!(matches!(
        run_plan(&plan, &data, None, Some(wrong)),
        Err(Error::Integrity(_))
    ));
}

#[test]
fn non_finite_loss_aborts_keeping_last_good_state() {
    let (data, mut plan) = setup();
    plan.stages[0].schedule.max_lr = 1e30;
    plan.stages[0].schedule.min_lr = 1e30;
    plan.train.grad_clip = None;
    let testsets = data.testsets();
    let dir = tempfile::tempdir().unwrap();
    let start = fresh_checkpoint(&plan, &data.tokenizer_hash).unwrap();
    let mut s = open_stage_stream(&plan, 0, &data, None).unwrap();
    let mut c = ctx(&plan, &data, &testsets, None);
    c.stage_dir = Some(dir.path());
    match run_stage(start, &plan.stages[0], &mut s, &c) {
        Ok(out) => {
            assert!(out.aborted.is_some());
            assert!(out.checkpoint.params.params.iter().all(|p| p.value.all_finite()));
            let kept = load_checkpoint(&dir.path().join("last_good.ckpt")).unwrap();
            assert!(kept.bitwise_eq(&out.checkpoint));
        }
        // The aborted state may itself evaluate to a non-finite test loss.
        Err(Error::NonFinite(_)) => assert!(dir.path().join("last_good.ckpt").exists()),
        Err(e) => panic!("{e}"),
    }
    assert!(matches!(run_plan(&plan, &data, None, None), Err(Error::NonFinite(_))));
}
