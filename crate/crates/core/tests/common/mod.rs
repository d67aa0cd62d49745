#![allow(dead_code)]

use std::collections::BTreeMap;

use langshift_core::bpe::Vocab;
use langshift_core::corpus::{
    encode_corpus, gen_synthetic_language, make_splits, pack_sequential, SplitSizes, SyntheticCorpus,
    SyntheticLanguage, SyntheticLanguageSpec,
};
use langshift_core::model::ModelConfig;
use langshift_core::numerics::DetRng;
use langshift_core::trainer::{ExperimentData, LanguageData, LrSchedule, StageSpec};

pub fn tiny_model(vocab_size: usize, seq_len: usize) -> ModelConfig {
    ModelConfig {
        preset: "tiny".into(),
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        seq_len,
        vocab_size,
        tie_embeddings: false,
    }
}

pub fn stage(language: &str, steps: u64, batch_size: usize, max_lr: f64) -> StageSpec {
    StageSpec {
        language: language.into(),
        steps,
        batch_size,
        schedule: LrSchedule {
            max_lr,
            min_lr: max_lr / 10.0,
            warmup_steps: steps / 10,
            tail_steps: steps / 10,
        },
    }
}

/// Builds languages in order; later specs may refer to earlier ones.
pub fn languages(specs: &[SyntheticLanguageSpec], seed: u64) -> Vec<SyntheticCorpus> {
    let mut registry: BTreeMap<String, SyntheticLanguage> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, s) in specs.iter().enumerate() {
        let (lang, corpus) = gen_synthetic_language(s, &registry, seed.wrapping_add(i as u64 * 7919)).unwrap();
        registry.insert(s.name.clone(), lang);
        out.push(corpus);
    }
    out
}

/// Splits each corpus, encodes with `vocab`, and packs val/test sequences.
pub fn experiment_data(
    corpora: &[SyntheticCorpus],
    vocab: &Vocab,
    seq_len: usize,
    sizes: SplitSizes,
    seed: u64,
) -> ExperimentData {
    let mut languages = BTreeMap::new();
    for c in corpora {
        let splits = make_splits(&c.to_language_corpus(), &mut DetRng::derive(seed, &c.language), sizes).unwrap();
        let train = encode_corpus(&splits.train, vocab).unwrap();
        let pack = |lc: &langshift_core::corpus::LanguageCorpus| {
            let docs: Vec<Vec<u32>> = lc.documents().map(|d| vocab.encode(&d.text)).collect();
            pack_sequential(&docs, seq_len, vocab.eod())
        };
        languages.insert(
            c.language.clone(),
            LanguageData {
                train,
                val: pack(&splits.val),
                test: pack(&splits.test),
            },
        );
    }
    ExperimentData {
        tokenizer_hash: vocab.fingerprint(),
        eod: vocab.eod(),
        languages,
    }
}

pub fn small_spec(name: &str, alphabet: &str, documents: usize) -> SyntheticLanguageSpec {
    let mut s = SyntheticLanguageSpec::simple(name, 200, documents);
    s.alphabet = alphabet.into();
    s.word_len_min = 2;
    s.word_len_max = 5;
    s.doc_words_min = 8;
    s.doc_words_max = 20;
    s
}
