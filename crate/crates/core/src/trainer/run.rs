use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::plan::{ExperimentPlan, PlanMode, TrainOptions};
use super::schedule::{lr_at, StageSpec};
use crate::analysis::eval_loss;
use crate::corpus::{EncodedCorpus, PackedStream};
use crate::error::{Error, Result};
use crate::model::{init_model, loss_and_grads};
use crate::numerics::{adam_step, clip_grad_norm, DetRng};

/// Test losses of one model state on every experiment language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub plan_id: String,
    pub stage_index: usize,
    /// Language trained in this stage.
    pub language: String,
    pub losses: BTreeMap<String, f64>,
}

/// One optimizer step of a loss curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub train_loss: f32,
    pub lr: f64,
}

/// Training, validation and test material of one language.
#[derive(Clone, Debug)]
pub struct LanguageData {
    pub train: EncodedCorpus,
    /// Packed validation sequences; may be empty.
    pub val: Vec<Vec<u32>>,
    /// Packed test sequences.
    pub test: Vec<Vec<u32>>,
}

/// Everything a plan reads besides the plan itself.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub tokenizer_hash: String,
    pub eod: u32,
    pub languages: BTreeMap<String, LanguageData>,
}

impl ExperimentData {
    pub fn testsets(&self) -> BTreeMap<String, Vec<Vec<u32>>> {
        self.languages
            .iter()
            .map(|(k, v)| (k.clone(), v.test.clone()))
            .collect()
    }
}

/// Per-stage inputs that are not the model state or the data stream.
pub struct StageContext<'a> {
    pub plan_id: &'a str,
    pub tokenizer_hash: &'a str,
    pub testsets: &'a BTreeMap<String, Vec<Vec<u32>>>,
    pub eval_languages: &'a [String],
    /// Validation sequences of the trained language.
    pub val: &'a [Vec<u32>],
    pub options: &'a TrainOptions,
    /// Where checkpoints and curves are written, if anywhere.
    pub stage_dir: Option<&'a Path>,
    /// Stop after this many completed stage steps (for interrupted runs).
    pub stop_after: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<CurvePoint>,
    /// `(completed steps, validation loss)` pairs.
    pub validation: Vec<(u64, f64)>,
    pub record: TransferRecord,
    /// Reason training stopped early; the checkpoint is then the last good one.
    pub aborted: Option<String>,
}

/// Evaluates `checkpoint` on every language in `languages`.
pub fn evaluate_record(
    checkpoint: &Checkpoint,
    plan_id: &str,
    language: &str,
    testsets: &BTreeMap<String, Vec<Vec<u32>>>,
    languages: &[String],
    eval_batch: usize,
) -> Result<TransferRecord> {
    let mut losses = BTreeMap::new();
    for l in languages {
        let seqs = testsets
            .get(l)
            .ok_or_else(|| Error::Config(format!("no test set for language {l}")))?;
        losses.insert(l.clone(), eval_loss(&checkpoint.params, seqs, eval_batch)?);
    }
    Ok(TransferRecord {
        plan_id: plan_id.into(),
        stage_index: checkpoint.stage_index,
        language: language.into(),
        losses,
    })
}

/// Trains `start` for the rest of `stage`, reading batches from `stream`,
/// which must be positioned at `start.stage_step` batches into the stage.
pub fn run_stage(
    start: Checkpoint,
    stage: &StageSpec,
    stream: &mut PackedStream,
    ctx: &StageContext,
) -> Result<StageOutcome> {
    stage.validate()?;
    if start.tokenizer_hash != ctx.tokenizer_hash {
        return Err(Error::Integrity(format!(
            "checkpoint tokenizer {} does not match data tokenizer {}",
            start.tokenizer_hash, ctx.tokenizer_hash
        )));
    }
    if stream.seq_len() != start.config().seq_len {
        return Err(Error::Config(format!(
            "stream packs {} tokens, model expects {}",
            stream.seq_len(),
            start.config().seq_len
        )));
    }
    let eval_every = ctx.options.eval_every.unwrap_or((stage.steps / 10).max(1));
    let end = ctx.stop_after.map_or(stage.steps, |s| s.min(stage.steps));
    let mut ck = start;
    let mut curve = Vec::new();
    let mut validation = Vec::new();
    let mut aborted = None;

    while ck.stage_step < end {
        let step = ck.stage_step;
        let lr = lr_at(step, stage)?;
        let batch = stream.next_batch(stage.batch_size);
        let outcome = loss_and_grads(&ck.params, &batch).and_then(|(loss, grads)| {
            let mut params = ck.params.params.clone();
            for (p, g) in params.iter_mut().zip(grads) {
                p.grad = g;
            }
            if let Some(max) = ctx.options.grad_clip {
                clip_grad_norm(&mut params, max);
            }
            adam_step(&mut params, &ctx.options.optimizer, lr, ck.adam_t + 1)?;
            Ok((loss, params))
        });
        let (loss, params) = match outcome {
            Ok(v) => v,
            Err(Error::NonFinite(msg)) => {
                aborted = Some(format!("step {step}: {msg}"));
                if let Some(dir) = ctx.stage_dir {
                    save_checkpoint(&ck, &dir.join("last_good.ckpt"))?;
                }
                break;
            }
            Err(e) => return Err(e),
        };
        ck.params.params = params;
        for p in &mut ck.params.params {
            p.grad.data_mut().fill(0.0);
        }
        ck.adam_t += 1;
        ck.stage_step += 1;
        ck.global_step += 1;
        ck.rng = stream.rng().state();
        curve.push(CurvePoint {
            step,
            train_loss: loss,
            lr,
        });
        if !ctx.val.is_empty() && ck.stage_step.is_multiple_of(eval_every) {
            validation.push((ck.stage_step, eval_loss(&ck.params, ctx.val, ctx.options.eval_batch)?));
        }
        if let (Some(every), Some(dir)) = (ctx.options.checkpoint_every, ctx.stage_dir) {
            if ck.stage_step.is_multiple_of(every) {
                save_checkpoint(&ck, &dir.join("checkpoint.ckpt"))?;
            }
        }
    }
    if let Some(dir) = ctx.stage_dir {
        save_checkpoint(&ck, &dir.join("checkpoint.ckpt"))?;
        std::fs::write(dir.join("loss_curve.csv"), curve_csv(&curve)).map_err(|e| Error::io(dir, e))?;
        let mut v = String::from("step,val_loss\n");
        for (s, l) in &validation {
            writeln!(v, "{s},{l}").unwrap();
        }
        std::fs::write(dir.join("val_curve.csv"), v).map_err(|e| Error::io(dir, e))?;
    }
    let record = evaluate_record(
        &ck,
        ctx.plan_id,
        &stage.language,
        ctx.testsets,
        ctx.eval_languages,
        ctx.options.eval_batch,
    )?;
    Ok(StageOutcome {
        checkpoint: ck,
        curve,
        validation,
        record,
        aborted,
    })
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("step,train_loss,lr\n");
    for p in curve {
        writeln!(s, "{},{},{}", p.step, p.train_loss, p.lr).unwrap();
    }
    s
}

/// Random-init checkpoint for `plan`, before its first stage.
pub fn fresh_checkpoint(plan: &ExperimentPlan, tokenizer_hash: &str) -> Result<Checkpoint> {
    let params = init_model(&plan.model, &mut DetRng::derive(plan.seed, "init"))?;
    Ok(Checkpoint {
        params,
        adam_t: 0,
        stage_index: 0,
        stage_step: 0,
        global_step: 0,
        rng: DetRng::new(0).state(),
        tokenizer_hash: tokenizer_hash.into(),
        plan_fingerprint: plan.fingerprint(),
    })
}

/// Data stream of stage `index`, advanced past the `stage_step` batches
/// already consumed by `checkpoint` (when it belongs to that stage).
///
/// Sequential stages draw from a stream keyed by (seed, language), so a
/// language sees the same data regardless of its position in the order.
pub fn open_stage_stream(
    plan: &ExperimentPlan,
    index: usize,
    data: &ExperimentData,
    checkpoint: Option<&Checkpoint>,
) -> Result<PackedStream> {
    let stage = &plan.stages[index];
    let seq_len = plan.model.seq_len;
    let corpus = |l: &str| -> Result<&EncodedCorpus> {
        data.languages
            .get(l)
            .map(|d| &d.train)
            .ok_or_else(|| Error::Config(format!("no training corpus for language {l}")))
    };
    let mut stream = match plan.mode {
        PlanMode::Sequential => PackedStream::mixture(
            &[(corpus(&stage.language)?, 1.0)],
            seq_len,
            data.eod,
            DetRng::derive(plan.seed, &format!("data/{}", stage.language)),
        )?,
        PlanMode::Joint => {
            let langs = &plan.joint_languages;
            let w = 1.0 / langs.len() as f64;
            let parts = langs.iter().map(|l| Ok((corpus(l)?, w))).collect::<Result<Vec<_>>>()?;
            PackedStream::mixture(&parts, seq_len, data.eod, DetRng::derive(plan.seed, "data/joint"))?
        }
    };
    if let Some(ck) = checkpoint.filter(|c| c.stage_index == index && c.stage_step > 0) {
        stream.skip_sequences(ck.stage_step * stage.batch_size as u64);
        if stream.rng().state() != ck.rng {
            return Err(Error::Integrity(format!(
                "replayed data stream is at {:?}, checkpoint recorded {:?}",
                stream.rng().state(),
                ck.rng
            )));
        }
    }
    Ok(stream)
}

#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub records: Vec<TransferRecord>,
    /// Final checkpoint of each stage.
    pub checkpoints: Vec<Checkpoint>,
    pub curves: Vec<Vec<CurvePoint>>,
}

pub fn stage_dir_name(index: usize, language: &str) -> String {
    format!("stage{index:02}-{language}")
}

fn check_inputs(plan: &ExperimentPlan, data: &ExperimentData) -> Result<()> {
    plan.validate()?;
    for l in plan.training_languages() {
        let d = data
            .languages
            .get(&l)
            .ok_or_else(|| Error::Config(format!("plan {} trains on {l}, which has no corpus", plan.id)))?;
        if d.train.num_tokens() == 0 {
            return Err(Error::Config(format!("training corpus for {l} is empty")));
        }
    }
    for l in &plan.eval_languages {
        match data.languages.get(l) {
            Some(d) if !d.test.is_empty() => {}
            _ => {
                return Err(Error::Config(format!(
                    "plan {} evaluates {l}, which has no test set",
                    plan.id
                )))
            }
        }
    }
    Ok(())
}

/// Runs every stage of `plan`, handing each stage's final weights to the
/// next. With `resume`, training continues from that checkpoint; records of
/// earlier stages are recomputed from their saved checkpoints in `out_dir`.
pub fn run_plan(
    plan: &ExperimentPlan,
    data: &ExperimentData,
    out_dir: Option<&Path>,
    resume: Option<Checkpoint>,
) -> Result<PlanOutcome> {
    check_inputs(plan, data)?;
    let testsets = data.testsets();
    let fingerprint = plan.fingerprint();
    let mut outcome = PlanOutcome {
        records: Vec::new(),
        checkpoints: Vec::new(),
        curves: Vec::new(),
    };
    let stage_dir =
        |i: usize| -> Option<PathBuf> { out_dir.map(|d| d.join(stage_dir_name(i, &plan.stages[i].language))) };

    let (mut ck, first) = match resume {
        None => (fresh_checkpoint(plan, &data.tokenizer_hash)?, 0),
        Some(ck) => {
            if ck.plan_fingerprint != fingerprint {
                return Err(Error::Integrity("checkpoint belongs to a different plan".into()));
            }
            if ck.tokenizer_hash != data.tokenizer_hash {
                return Err(Error::Integrity(format!(
                    "checkpoint tokenizer {} does not match data tokenizer {}",
                    ck.tokenizer_hash, data.tokenizer_hash
                )));
            }
            if ck.stage_index >= plan.stages.len() {
                return Err(Error::Integrity(format!(
                    "checkpoint stage {} is beyond the plan",
                    ck.stage_index
                )));
            }
            for i in 0..ck.stage_index {
                let dir = stage_dir(i)
                    .ok_or_else(|| Error::Config("resuming a later stage needs the run directory".into()))?;
                let prev = load_checkpoint(&dir.join("checkpoint.ckpt"))?;
                outcome.records.push(evaluate_record(
                    &prev,
                    &plan.id,
                    &plan.stages[i].language,
                    &testsets,
                    &plan.eval_languages,
                    plan.train.eval_batch,
                )?);
                outcome.checkpoints.push(prev);
                outcome.curves.push(Vec::new());
            }
            let first = ck.stage_index;
            (ck, first)
        }
    };

    for (i, stage) in plan.stages.iter().enumerate().skip(first) {
        let resumed_here = i == ck.stage_index && ck.stage_step > 0;
        if !resumed_here && !(i == 0 && ck.global_step == 0) && plan.train.reset_optimizer {
            ck.params.reset_moments();
            ck.adam_t = 0;
        }
        if !resumed_here {
            ck.stage_index = i;
            ck.stage_step = 0;
        }
        let mut stream = open_stage_stream(plan, i, data, Some(&ck))?;
        if !resumed_here {
            ck.rng = stream.rng().state();
        }
        let dir = stage_dir(i);
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let val = data
            .languages
            .get(&stage.language)
            .map(|d| d.val.as_slice())
            .unwrap_or(&[]);
        let ctx = StageContext {
            plan_id: &plan.id,
            tokenizer_hash: &data.tokenizer_hash,
            testsets: &testsets,
            eval_languages: &plan.eval_languages,
            val,
            options: &plan.train,
            stage_dir: dir.as_deref(),
            stop_after: None,
        };
        let out = run_stage(ck, stage, &mut stream, &ctx)?;
        if let Some(reason) = out.aborted {
            return Err(Error::NonFinite(format!(
                "plan {} stage {i} ({}) stopped at {reason}; last good state kept",
                plan.id, stage.language
            )));
        }
        ck = out.checkpoint.clone();
        outcome.records.push(out.record);
        outcome.checkpoints.push(out.checkpoint);
        outcome.curves.push(out.curve);
        if let Some(d) = out_dir {
            write_records(&d.join("records.jsonl"), &outcome.records)?;
        }
    }
    Ok(outcome)
}

pub fn write_records(path: &Path, records: &[TransferRecord]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<TransferRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}
