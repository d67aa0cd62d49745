//! Shared steps: corpora, tokenizer, splits and plans derived from a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use langshift_core::bpe::{train_bpe, Vocab};
use langshift_core::corpus::{
    encode_corpus, gen_synthetic_language, load_corpus, make_splits, pack_sequential, LanguageCorpus, SplitSizes,
    Splits, SyntheticCorpus, SyntheticLanguage,
};
use langshift_core::numerics::{derive_seed, DetRng};
use langshift_core::trainer::{enumerate_plans, ExperimentData, ExperimentPlan, LanguageData};

use crate::manifest::{invalid, LanguageSource, Manifest, PlanModeSpec};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "LANGSHIFT_OUT";

/// Writes one `key=value` progress line to standard error.
pub fn progress(event: &str, fields: &[(&str, String)]) {
    let mut line = format!("langshift event={event}");
    for (k, v) in fields {
        if v.contains(char::is_whitespace) || v.is_empty() {
            line.push_str(&format!(" {k}={v:?}"));
        } else {
            line.push_str(&format!(" {k}={v}"));
        }
    }
    eprintln!("{line}");
}

/// `--out`, then the manifest's `out_dir`, then `$LANGSHIFT_OUT/<manifest
/// stem>`, then `langshift-out/<manifest stem>`.
pub fn out_root(manifest: &Manifest, flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &manifest.out_dir {
        return p.clone();
    }
    let stem = manifest
        .path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let root = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("langshift-out"));
    root.join(stem)
}

pub struct LoadedLanguage {
    pub name: String,
    pub corpus: LanguageCorpus,
    pub synthetic: Option<SyntheticCorpus>,
}

/// Generates or reads every manifest language in manifest order.
pub fn load_languages(manifest: &Manifest) -> Result<Vec<LoadedLanguage>> {
    let mut registry: BTreeMap<String, SyntheticLanguage> = BTreeMap::new();
    let mut out = Vec::new();
    for entry in &manifest.languages {
        let loaded = match &entry.source {
            LanguageSource::Synthetic(spec) => {
                let seed = derive_seed(manifest.seed, &format!("synthetic/{}", entry.name));
                let (lang, corpus) = gen_synthetic_language(spec, &registry, seed)?;
                registry.insert(entry.name.clone(), lang);
                LoadedLanguage {
                    name: entry.name.clone(),
                    corpus: corpus.to_language_corpus(),
                    synthetic: Some(corpus),
                }
            }
            LanguageSource::Datasets(datasets) => {
                let spec = langshift_core::corpus::CorpusSpec {
                    language: entry.name.clone(),
                    datasets: datasets.clone(),
                };
                let loaded = load_corpus(&spec)?;
                LoadedLanguage {
                    name: entry.name.clone(),
                    corpus: loaded.corpus,
                    synthetic: None,
                }
            }
        };
        progress(
            "language_loaded",
            &[
                ("language", entry.name.clone()),
                ("documents", loaded.corpus.num_documents().to_string()),
            ],
        );
        out.push(loaded);
    }
    Ok(out)
}

/// Train/val/test split of one language; the train split takes whatever the
/// held-out sets leave.
pub fn split_language(manifest: &Manifest, lang: &LoadedLanguage) -> Result<Splits> {
    let total = lang.corpus.num_documents();
    let held = manifest.splits.val_documents + manifest.splits.test_documents;
    if held >= total {
        return Err(invalid(
            "splits",
            format!(
                "{} has {total} documents, fewer than the {held} held out plus one for training",
                lang.name
            ),
        )
        .into());
    }
    let sizes = SplitSizes {
        train: total - held,
        val: manifest.splits.val_documents,
        test: manifest.splits.test_documents,
    };
    let mut rng = DetRng::derive(manifest.seed, &format!("splits/{}", lang.name));
    Ok(make_splits(&lang.corpus, &mut rng, sizes)?)
}

/// BPE over the training splits of the tokenizer languages.
pub fn train_tokenizer(manifest: &Manifest, languages: &[LoadedLanguage]) -> Result<Vocab> {
    let wanted = manifest
        .tokenizer
        .languages
        .clone()
        .unwrap_or_else(|| manifest.language_names());
    let mut texts: Vec<String> = Vec::new();
    for lang in languages.iter().filter(|l| wanted.contains(&l.name)) {
        let splits = split_language(manifest, lang)?;
        let cap = manifest.tokenizer.max_documents.unwrap_or(usize::MAX);
        texts.extend(splits.train.documents().take(cap).map(|d| d.text.clone()));
    }
    let vocab = train_bpe(&texts, manifest.tokenizer.vocab_size)?;
    progress(
        "tokenizer_trained",
        &[
            ("vocab_size", vocab.len().to_string()),
            ("documents", texts.len().to_string()),
            ("hash", vocab.fingerprint()),
        ],
    );
    Ok(vocab)
}

/// Encoded train splits and packed val/test sets for every language.
pub fn build_data(manifest: &Manifest, languages: &[LoadedLanguage], vocab: &Vocab) -> Result<ExperimentData> {
    let seq_len = manifest.model.seq_len;
    let mut out = BTreeMap::new();
    for lang in languages {
        let splits = split_language(manifest, lang)?;
        let pack = |c: &LanguageCorpus| {
            let docs: Vec<Vec<u32>> = c.documents().map(|d| vocab.encode(&d.text)).collect();
            pack_sequential(&docs, seq_len, vocab.eod())
        };
        let data = LanguageData {
            train: encode_corpus(&splits.train, vocab)?,
            val: pack(&splits.val),
            test: pack(&splits.test),
        };
        if data.test.is_empty() {
            return Err(invalid(
                "splits.test_documents",
                format!(
                    "the test split of {} is shorter than one {seq_len}-token sequence",
                    lang.name
                ),
            )
            .into());
        }
        out.insert(lang.name.clone(), data);
    }
    Ok(ExperimentData {
        tokenizer_hash: vocab.fingerprint(),
        eod: vocab.eod(),
        languages: out,
    })
}

/// Every plan the manifest describes, baselines first.
pub fn manifest_plans(manifest: &Manifest) -> Result<Vec<ExperimentPlan>> {
    let langs = manifest.plan_languages();
    let seed = manifest.seed;
    let model = &manifest.model;
    let mono =
        |l: &String| ExperimentPlan::sequential(l, vec![manifest.stage_for(l)], model.clone(), seed, langs.clone());
    let mut plans = Vec::new();
    let p = &manifest.plan;
    if p.monolingual_baselines {
        plans.extend(langs.iter().map(mono));
    }
    match p.mode {
        PlanModeSpec::Enumerate => {
            let first = p.first.as_deref().expect("validated");
            plans.extend(enumerate_plans(
                first,
                &p.others,
                &manifest.stage_for(first),
                model,
                seed,
            )?);
        }
        PlanModeSpec::Explicit => {
            for s in &p.sequences {
                let stages = s.split('-').map(|l| manifest.stage_for(l)).collect();
                plans.push(ExperimentPlan::sequential(
                    s,
                    stages,
                    model.clone(),
                    seed,
                    langs.clone(),
                ));
            }
        }
        PlanModeSpec::Joint => {}
    }
    if (p.joint_baseline || p.mode == PlanModeSpec::Joint) && langs.len() > 1 {
        let id = langs.join("+");
        plans.push(ExperimentPlan::joint(
            &id,
            &langs,
            &manifest.stage_for(&langs[0]),
            model.clone(),
            seed,
        ));
    }
    let mut seen = std::collections::BTreeSet::new();
    plans.retain(|pl| seen.insert(pl.id.clone()));
    for pl in &mut plans {
        pl.train = manifest.train.clone();
        pl.validate().with_context(|| format!("plan {}", pl.id))?;
    }
    Ok(plans)
}
