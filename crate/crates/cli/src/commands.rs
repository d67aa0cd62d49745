use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use langshift_core::analysis::{
    build_report, emit_report, eval_loss, reference_models, reference_records, Coverage, FactorTable,
};
use langshift_core::bpe::{load_vocab, save_vocab, train_bpe, Vocab};
use langshift_core::corpus::{read_jsonl, write_jsonl, write_truth_jsonl, LanguageCorpus};
use langshift_core::shiftmetrics::{
    contamination_matrix, load_feature_distances, shipped_language_similarity, tds, train_langid, ContaminationMatrix,
    LangIdConfig, LangIdModel, SampleUnit,
};
use langshift_core::trainer::{
    enumerate_orders, load_checkpoint, read_records, run_plan, stage_dir_name, Checkpoint, ExperimentPlan,
    TransferRecord,
};

use crate::manifest::{invalid, parse_manifest, Manifest};
use crate::pipeline::{
    build_data, load_languages, manifest_plans, out_root, progress, split_language, train_tokenizer,
};

#[derive(Debug, Parser)]
#[command(
    name = "langshift",
    version,
    about = "Continual language-model pre-training under language shift"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Train a BPE tokenizer from a manifest or from JSONL files.
    TokenizerTrain(TokenizerTrainArgs),
    /// Write the manifest's synthetic languages as JSONL corpora.
    SynthGen(ManifestOut),
    /// Train the manifest's plans.
    Run(RunArgs),
    /// Test loss of a checkpoint on the manifest's test sets.
    Eval(EvalArgs),
    /// Token distribution similarity between two corpora, or across a manifest.
    Tds(TdsArgs),
    /// Train the character n-gram language identifier.
    LangidTrain(LangIdTrainArgs),
    /// Percentage of each corpus classified as each language.
    Contamination(ContaminationArgs),
    /// Transfer tables, figures and correlations from training records.
    Report(ReportArgs),
    /// Print the training orders that start with one language.
    Enumerate(EnumerateArgs),
}

#[derive(Debug, Args)]
struct ManifestOut {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory; defaults to the manifest's output root.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TokenizerTrainArgs {
    #[arg(long, conflicts_with = "input")]
    manifest: Option<PathBuf>,
    /// JSONL corpora (instead of a manifest).
    #[arg(long, num_args = 1.., requires = "vocab_size")]
    input: Vec<PathBuf>,
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Vocabulary file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Plan ids to run; all manifest plans when absent.
    #[arg(long = "plan")]
    plans: Vec<String>,
    /// Worker processes for independent plans.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Continue from the latest checkpoint of each plan.
    #[arg(long)]
    resume: bool,
    /// Use this tokenizer instead of training one.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Tokenizer the checkpoint was trained with; defaults to the run's.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Languages to evaluate; all when absent.
    #[arg(long = "language")]
    languages: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TdsArgs {
    #[arg(long, conflicts_with_all = ["a", "b"])]
    manifest: Option<PathBuf>,
    #[arg(long, requires = "b")]
    a: Option<PathBuf>,
    #[arg(long, requires = "a")]
    b: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    /// Sample packed sequences of this length instead of documents.
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LangIdTrainArgs {
    #[arg(long, conflicts_with = "input")]
    manifest: Option<PathBuf>,
    /// Labeled corpora as LANG=PATH.
    #[arg(long, num_args = 1..)]
    input: Vec<String>,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ContaminationArgs {
    #[arg(long, conflicts_with = "input")]
    manifest: Option<PathBuf>,
    /// Corpora to measure as NAME=PATH.
    #[arg(long, num_args = 1.., requires = "model")]
    input: Vec<String>,
    /// Language identifier; trained from the manifest when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    /// CSV to write; printed to standard output as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, conflicts_with_all = ["reference", "records"])]
    manifest: Option<PathBuf>,
    /// Render a shipped reference table (gpt-126m, gpt-356m or gpt-1.3b).
    #[arg(long, conflicts_with = "records")]
    reference: Option<String>,
    /// records.jsonl files to combine.
    #[arg(long, num_args = 1..)]
    records: Vec<PathBuf>,
    /// Languages of the matrix columns, in order.
    #[arg(long, value_delimiter = ',')]
    languages: Vec<String>,
    /// Digits in the transfer matrix; 2 for reference tables, 4 otherwise.
    #[arg(long)]
    decimals: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EnumerateArgs {
    #[arg(long)]
    first: String,
    #[arg(long, value_delimiter = ',', required = true)]
    others: Vec<String>,
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::TokenizerTrain(a) => tokenizer_train(a),
        Cmd::SynthGen(a) => synth_gen(a),
        Cmd::Run(a) => run(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Tds(a) => tds_cmd(a),
        Cmd::LangidTrain(a) => langid_train(a),
        Cmd::Contamination(a) => contamination(a),
        Cmd::Report(a) => report(a),
        Cmd::Enumerate(a) => enumerate(a),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(invalid(what, format!("{} does not exist", path.display())).into());
    }
    Ok(())
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    let m = parse_manifest(path)?;
    progress(
        "manifest",
        &[
            ("path", path.display().to_string()),
            ("languages", m.languages.len().to_string()),
        ],
    );
    Ok(m)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            create_dir(dir)?;
        }
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    progress("wrote", &[("path", path.display().to_string())]);
    Ok(())
}

/// Splits `NAME=PATH`, checking that the file exists.
fn labeled(arg: &str) -> Result<(String, PathBuf)> {
    let (name, path) = arg
        .split_once('=')
        .ok_or_else(|| invalid("--input", format!("expected NAME=PATH, got {arg:?}")))?;
    let path = PathBuf::from(path);
    require_file(&path, "--input")?;
    Ok((name.to_string(), path))
}

fn tokenizer_train(a: TokenizerTrainArgs) -> Result<()> {
    let (vocab, dest) = if let Some(mp) = &a.manifest {
        let m = load_manifest(mp)?;
        let langs = load_languages(&m)?;
        let vocab = train_tokenizer(&m, &langs)?;
        let dest = a
            .out
            .clone()
            .unwrap_or_else(|| out_root(&m, None).join("tokenizer.vocab"));
        (vocab, dest)
    } else {
        if a.input.is_empty() {
            return Err(invalid("", "give --manifest or --input with --vocab-size").into());
        }
        let mut texts = Vec::new();
        for p in &a.input {
            require_file(p, "--input")?;
            texts.extend(read_jsonl(p, "", "")?.into_iter().map(|d| d.text));
        }
        let size = a.vocab_size.expect("required by clap");
        let vocab = train_bpe(&texts, size)?;
        let dest = a
            .out
            .clone()
            .ok_or_else(|| invalid("--out", "required without a manifest"))?;
        (vocab, dest)
    };
    if let Some(dir) = dest.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_vocab(&vocab, &dest)?;
    progress(
        "wrote",
        &[("path", dest.display().to_string()), ("hash", vocab.fingerprint())],
    );
    println!("{}", vocab.fingerprint());
    Ok(())
}

fn synth_gen(a: ManifestOut) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    let dir = a.out.clone().unwrap_or_else(|| out_root(&m, None).join("corpora"));
    create_dir(&dir)?;
    let langs = load_languages(&m)?;
    let mut written = 0;
    for l in &langs {
        if let Some(s) = &l.synthetic {
            write_jsonl(&dir.join(format!("{}.jsonl", l.name)), &s.documents)?;
            write_truth_jsonl(&dir.join(format!("{}.truth.jsonl", l.name)), &s.truth)?;
            progress(
                "wrote",
                &[
                    ("language", l.name.clone()),
                    ("documents", s.documents.len().to_string()),
                ],
            );
            written += 1;
        }
    }
    if written == 0 {
        return Err(invalid("languages", "the manifest has no synthetic languages").into());
    }
    Ok(())
}

/// The run's tokenizer: `--vocab`, else `<root>/tokenizer.vocab` when
/// `reuse` is set and it exists, else freshly trained and saved there.
fn run_vocab(
    m: &Manifest,
    root: &Path,
    flag: Option<&Path>,
    reuse: bool,
    langs: &[crate::pipeline::LoadedLanguage],
) -> Result<(Vocab, PathBuf)> {
    if let Some(p) = flag {
        require_file(p, "--vocab")?;
        return Ok((load_vocab(p)?, p.to_path_buf()));
    }
    let path = root.join("tokenizer.vocab");
    if reuse && path.is_file() {
        return Ok((load_vocab(&path)?, path));
    }
    let vocab = train_tokenizer(m, langs)?;
    create_dir(root)?;
    save_vocab(&vocab, &path)?;
    Ok((vocab, path))
}

/// Latest saved state of `plan` under `dir`, if any.
fn latest_checkpoint(plan: &ExperimentPlan, dir: &Path) -> Result<Option<Checkpoint>> {
    for (i, st) in plan.stages.iter().enumerate().rev() {
        let p = dir.join(stage_dir_name(i, &st.language)).join("checkpoint.ckpt");
        if p.is_file() {
            return Ok(Some(load_checkpoint(&p)?));
        }
    }
    Ok(None)
}

fn run(a: RunArgs) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    if a.jobs == 0 {
        return Err(invalid("--jobs", "must be at least 1").into());
    }
    let root = out_root(&m, a.out.as_deref());
    let all = manifest_plans(&m)?;
    let selected: Vec<ExperimentPlan> = if a.plans.is_empty() {
        all
    } else {
        let mut out = Vec::new();
        for id in &a.plans {
            let p = all.iter().find(|p| &p.id == id).ok_or_else(|| {
                let ids: Vec<&str> = all.iter().map(|p| p.id.as_str()).collect();
                invalid(
                    "--plan",
                    format!("unknown plan {id:?}; the manifest defines {}", ids.join(", ")),
                )
            })?;
            out.push(p.clone());
        }
        out
    };
    let langs = load_languages(&m)?;
    let (vocab, vocab_path) = run_vocab(&m, &root, a.vocab.as_deref(), a.resume, &langs)?;

    if a.jobs > 1 && selected.len() > 1 {
        return run_workers(&a, &root, &vocab_path, &selected);
    }
    let data = build_data(&m, &langs, &vocab)?;
    for plan in &selected {
        let dir = root.join("plans").join(&plan.id);
        create_dir(&dir)?;
        write_file(&dir.join("plan.json"), &(serde_json::to_string_pretty(plan)? + "\n"))?;
        let resume = if a.resume { latest_checkpoint(plan, &dir)? } else { None };
        progress(
            "plan_start",
            &[
                ("plan", plan.id.clone()),
                ("stages", plan.stages.len().to_string()),
                (
                    "resume_from",
                    resume
                        .as_ref()
                        .map_or("-".into(), |c| format!("{}:{}", c.stage_index, c.stage_step)),
                ),
            ],
        );
        let out = run_plan(plan, &data, Some(&dir), resume).with_context(|| format!("plan {}", plan.id))?;
        for r in &out.records {
            let losses: Vec<String> = r.losses.iter().map(|(l, v)| format!("{l}:{v:.4}")).collect();
            progress(
                "stage_done",
                &[
                    ("plan", plan.id.clone()),
                    ("stage", r.stage_index.to_string()),
                    ("language", r.language.clone()),
                    ("test_loss", losses.join(",")),
                ],
            );
        }
        progress(
            "plan_done",
            &[("plan", plan.id.clone()), ("dir", dir.display().to_string())],
        );
    }
    Ok(())
}

/// Runs each plan in its own `langshift run` process, at most `jobs` at a time.
fn run_workers(a: &RunArgs, root: &Path, vocab: &Path, plans: &[ExperimentPlan]) -> Result<()> {
    let exe = std::env::current_exe().context("locating the langshift executable")?;
    let mut pending: Vec<&ExperimentPlan> = plans.iter().rev().collect();
    let mut running: Vec<(String, std::process::Child)> = Vec::new();
    let mut failed = Vec::new();
    while !pending.is_empty() || !running.is_empty() {
        while running.len() < a.jobs {
            let Some(plan) = pending.pop() else { break };
            let mut cmd = Command::new(&exe);
            cmd.arg("run")
                .arg("--manifest")
                .arg(&a.manifest)
                .arg("--plan")
                .arg(&plan.id)
                .arg("--vocab")
                .arg(vocab)
                .arg("--out")
                .arg(root);
            if a.resume {
                cmd.arg("--resume");
            }
            let child = cmd
                .spawn()
                .with_context(|| format!("starting worker for plan {}", plan.id))?;
            progress(
                "worker_start",
                &[("plan", plan.id.clone()), ("pid", child.id().to_string())],
            );
            running.push((plan.id.clone(), child));
        }
        // Wait on the oldest worker; plans are independent so order does not matter.
        let (id, mut child) = running.remove(0);
        let status = child.wait().with_context(|| format!("waiting for plan {id}"))?;
        progress(
            "worker_done",
            &[
                ("plan", id.clone()),
                ("status", status.code().map_or("signal".into(), |c| c.to_string())),
            ],
        );
        if !status.success() {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        bail!("plans failed: {}", failed.join(", "));
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    require_file(&a.checkpoint, "--checkpoint")?;
    let root = out_root(&m, a.out.as_deref());
    let langs = load_languages(&m)?;
    let vocab_path = a.vocab.clone().unwrap_or_else(|| root.join("tokenizer.vocab"));
    require_file(&vocab_path, "--vocab")?;
    let vocab = load_vocab(&vocab_path)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    if ck.tokenizer_hash != vocab.fingerprint() {
        return Err(invalid("--vocab", "the checkpoint was trained with a different tokenizer").into());
    }
    if ck.config().seq_len != m.model.seq_len {
        return Err(invalid("model.seq_len", "differs from the checkpoint's model").into());
    }
    let data = build_data(&m, &langs, &vocab)?;
    let wanted = if a.languages.is_empty() {
        m.language_names()
    } else {
        a.languages.clone()
    };
    let mut losses = BTreeMap::new();
    for l in &wanted {
        let d = data
            .languages
            .get(l)
            .ok_or_else(|| invalid("--language", format!("unknown language {l:?}")))?;
        losses.insert(l.clone(), eval_loss(&ck.params, &d.test, m.train.eval_batch)?);
    }
    let out = serde_json::json!({
        "checkpoint": a.checkpoint.display().to_string(),
        "global_step": ck.global_step,
        "losses": losses,
    });
    println!("{out}");
    Ok(())
}

fn tds_cmd(a: TdsArgs) -> Result<()> {
    if let Some(mp) = &a.manifest {
        let m = load_manifest(mp)?;
        let root = out_root(&m, a.out.as_deref());
        let langs = load_languages(&m)?;
        let (vocab, _) = run_vocab(&m, &root, a.vocab.as_deref(), true, &langs)?;
        let n = a.samples.unwrap_or(m.metrics.tds_samples);
        let unit = m.tds_unit();
        let mut csv = String::from("lang_a,lang_b,tds\n");
        for (i, x) in langs.iter().enumerate() {
            for y in &langs[i + 1..] {
                let v = tds(&x.corpus, &y.corpus, &vocab, n, unit, m.seed)?;
                progress(
                    "tds",
                    &[
                        ("a", x.name.clone()),
                        ("b", y.name.clone()),
                        ("value", format!("{v:.6}")),
                    ],
                );
                csv.push_str(&format!("{},{},{v}\n", x.name, y.name));
            }
        }
        print!("{csv}");
        return write_file(&root.join("tds.csv"), &csv);
    }
    let (Some(pa), Some(pb)) = (&a.a, &a.b) else {
        return Err(invalid("", "give --manifest or both --a and --b").into());
    };
    require_file(pa, "--a")?;
    require_file(pb, "--b")?;
    let vp = a
        .vocab
        .as_ref()
        .ok_or_else(|| invalid("--vocab", "required with --a/--b"))?;
    require_file(vp, "--vocab")?;
    let vocab = load_vocab(vp)?;
    // Sampling streams are keyed by corpus name, so the same file samples identically.
    let corpus = |p: &Path| -> Result<LanguageCorpus> {
        let name = p.display().to_string();
        Ok(LanguageCorpus::single(&name, &name, read_jsonl(p, &name, &name)?))
    };
    let (ca, cb) = (corpus(pa)?, corpus(pb)?);
    let unit = a
        .seq_len
        .map_or(SampleUnit::Documents, |seq_len| SampleUnit::Sequences { seq_len });
    let v = tds(&ca, &cb, &vocab, a.samples.unwrap_or(1000), unit, a.seed)?;
    println!("{v}");
    Ok(())
}

fn langid_config(base: LangIdConfig, epochs: Option<usize>, seed: Option<u64>) -> LangIdConfig {
    LangIdConfig {
        epochs: epochs.unwrap_or(base.epochs),
        seed: seed.unwrap_or(base.seed),
        ..base
    }
}

/// Identifier trained on the training splits of every manifest language.
fn manifest_langid(m: &Manifest, langs: &[crate::pipeline::LoadedLanguage], cfg: &LangIdConfig) -> Result<LangIdModel> {
    let mut labeled = Vec::new();
    for l in langs {
        let splits = split_language(m, l)?;
        labeled.push((
            l.name.clone(),
            splits.train.documents().map(|d| d.text.clone()).collect::<Vec<_>>(),
        ));
    }
    let model = train_langid(&labeled, cfg)?;
    progress(
        "langid_trained",
        &[
            ("languages", model.languages.join(",")),
            (
                "heldout_accuracy",
                model.heldout_accuracy.map_or("-".into(), |a| format!("{a:.4}")),
            ),
        ],
    );
    Ok(model)
}

fn langid_train(a: LangIdTrainArgs) -> Result<()> {
    let (model, dest) = if let Some(mp) = &a.manifest {
        let m = load_manifest(mp)?;
        let langs = load_languages(&m)?;
        let cfg = langid_config(m.metrics.langid.clone(), a.epochs, a.seed);
        let dest = a.out.clone().unwrap_or_else(|| out_root(&m, None).join("langid.model"));
        (manifest_langid(&m, &langs, &cfg)?, dest)
    } else {
        if a.input.len() < 2 {
            return Err(invalid("--input", "give a manifest or at least two LANG=PATH corpora").into());
        }
        let mut corpora = Vec::new();
        for arg in &a.input {
            let (lang, path) = labeled(arg)?;
            corpora.push((
                lang.clone(),
                read_jsonl(&path, &lang, "")?
                    .into_iter()
                    .map(|d| d.text)
                    .collect::<Vec<_>>(),
            ));
        }
        let cfg = langid_config(LangIdConfig::default(), a.epochs, a.seed);
        let model = train_langid(&corpora, &cfg)?;
        let dest = a
            .out
            .clone()
            .ok_or_else(|| invalid("--out", "required without a manifest"))?;
        (model, dest)
    };
    if let Some(dir) = dest.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    model.save(&dest)?;
    progress("wrote", &[("path", dest.display().to_string())]);
    if let Some(acc) = model.heldout_accuracy {
        println!("heldout_accuracy {acc}");
    }
    Ok(())
}

fn contamination(a: ContaminationArgs) -> Result<()> {
    let (matrix, dest): (ContaminationMatrix, Option<PathBuf>) = if let Some(mp) = &a.manifest {
        let m = load_manifest(mp)?;
        let langs = load_languages(&m)?;
        let model = match &a.model {
            Some(p) => {
                require_file(p, "--model")?;
                LangIdModel::load(p)?
            }
            None => manifest_langid(&m, &langs, &m.metrics.langid)?,
        };
        let corpora: Vec<(String, Vec<String>)> = langs
            .iter()
            .map(|l| (l.name.clone(), l.corpus.documents().map(|d| d.text.clone()).collect()))
            .collect();
        let dest = a
            .out
            .clone()
            .unwrap_or_else(|| out_root(&m, None).join("contamination.csv"));
        (contamination_matrix(&corpora, &model)?, Some(dest))
    } else {
        if a.input.is_empty() {
            return Err(invalid("", "give --manifest or --input with --model").into());
        }
        let mp = a.model.as_ref().expect("required by clap");
        require_file(mp, "--model")?;
        let model = LangIdModel::load(mp)?;
        let mut corpora = Vec::new();
        for arg in &a.input {
            let (name, path) = labeled(arg)?;
            corpora.push((
                name.clone(),
                read_jsonl(&path, &name, "")?
                    .into_iter()
                    .map(|d| d.text)
                    .collect::<Vec<_>>(),
            ));
        }
        (contamination_matrix(&corpora, &model)?, a.out.clone())
    };
    let csv = matrix.to_csv();
    print!("{csv}");
    if let Some(d) = dest {
        write_file(&d, &csv)?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let (records, languages, factors_from, out, contamination_path): (
        Vec<TransferRecord>,
        Vec<String>,
        Option<Manifest>,
        PathBuf,
        Option<PathBuf>,
    ) = if let Some(mp) = &a.manifest {
        let m = load_manifest(mp)?;
        let root = out_root(&m, a.out.as_deref());
        let plans_dir = root.join("plans");
        if !plans_dir.is_dir() {
            return Err(invalid(
                "",
                format!("no runs under {}; run the manifest first", plans_dir.display()),
            )
            .into());
        }
        let mut records = Vec::new();
        for plan in manifest_plans(&m)? {
            let p = plans_dir.join(&plan.id).join("records.jsonl");
            if p.is_file() {
                records.extend(read_records(&p)?);
            }
        }
        let languages = if a.languages.is_empty() {
            m.plan_languages()
        } else {
            a.languages.clone()
        };
        let cont = root.join("contamination.csv");
        (
            records,
            languages,
            Some(m),
            root.join("report"),
            cont.is_file().then_some(cont),
        )
    } else if let Some(model) = &a.reference {
        if !reference_models().contains(model) {
            return Err(invalid(
                "--reference",
                format!("unknown model {model:?}; have {}", reference_models().join(", ")),
            )
            .into());
        }
        let languages = if a.languages.is_empty() {
            langshift_core::analysis::REFERENCE_LANGUAGES
                .iter()
                .map(|s| s.to_string())
                .collect()
        } else {
            a.languages.clone()
        };
        let out = a
            .out
            .clone()
            .ok_or_else(|| invalid("--out", "required with --reference"))?;
        (reference_records(model), languages, None, out, None)
    } else {
        if a.records.is_empty() {
            return Err(invalid("", "give --manifest, --reference or --records").into());
        }
        let mut records = Vec::new();
        for p in &a.records {
            require_file(p, "--records")?;
            records.extend(read_records(p)?);
        }
        if a.languages.is_empty() {
            return Err(invalid("--languages", "required with --records").into());
        }
        let out = a
            .out
            .clone()
            .ok_or_else(|| invalid("--out", "required with --records"))?;
        (records, a.languages.clone(), None, out, None)
    };
    if records.is_empty() {
        return Err(invalid("", "no training records found").into());
    }
    let similarity = match factors_from.as_ref().and_then(|m| m.metrics.distances.clone()) {
        Some(p) => load_feature_distances(&p)?,
        None => shipped_language_similarity(),
    };
    let contamination = match &contamination_path {
        Some(p) => Some(ContaminationMatrix::from_csv(
            &std::fs::read_to_string(p).with_context(|| p.display().to_string())?,
            p,
        )?),
        None => None,
    };
    let mut pairs = Vec::new();
    for x in &languages {
        for y in &languages {
            if x != y {
                pairs.push((x.clone(), y.clone()));
            }
        }
    }
    let factors = FactorTable::from_sources(&similarity, contamination.as_ref(), &pairs);
    let coverage = if factors_from.is_some() {
        Coverage::Complete
    } else {
        Coverage::Partial
    };
    let mut rep = build_report(&records, &languages, coverage, Some(&factors))?;
    rep.contamination = contamination;
    rep.matrix_decimals = Some(a.decimals.unwrap_or(if a.reference.is_some() { 2 } else { 4 }));
    create_dir(&out)?;
    let files = emit_report(&rep, &out)?;
    for f in &files {
        progress("wrote", &[("path", out.join(f).display().to_string())]);
    }
    println!("{}", out.display());
    Ok(())
}

fn enumerate(a: EnumerateArgs) -> Result<()> {
    for order in enumerate_orders(&a.first, &a.others)? {
        println!("{}", order.join("-"));
    }
    Ok(())
}
