use std::collections::{BTreeMap, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Document, LanguageCorpus};
use crate::error::{Error, Result};
use crate::numerics::DetRng;

pub const DEFAULT_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz";

fn default_alphabet() -> String {
    DEFAULT_ALPHABET.into()
}
fn default_word_len_min() -> usize {
    2
}
fn default_word_len_max() -> usize {
    8
}
fn default_clusters() -> usize {
    16
}
fn default_sentence_len() -> usize {
    10
}

/// Parameters of a synthetic language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticLanguageSpec {
    pub name: String,
    /// Characters fresh words are spelled with.
    #[serde(default = "default_alphabet")]
    pub alphabet: String,
    /// Lexicon size in words.
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    #[serde(default)]
    pub parent: Option<String>,
    /// Fraction of lexicon ranks whose word is copied from the parent.
    #[serde(default)]
    pub lexical_overlap: f64,
    #[serde(default)]
    pub contaminant: Option<String>,
    /// Fraction of documents replaced by contaminant-language documents.
    #[serde(default)]
    pub contamination_rate: f64,
    /// Higher values weaken the word-to-word dependence; 0 keeps each
    /// transition inside the current word's cluster.
    pub bigram_temperature: f64,
    pub documents: usize,
    pub doc_words_min: usize,
    pub doc_words_max: usize,
    #[serde(default = "default_word_len_min")]
    pub word_len_min: usize,
    #[serde(default = "default_word_len_max")]
    pub word_len_max: usize,
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_sentence_len")]
    pub sentence_len: usize,
}

impl SyntheticLanguageSpec {
    /// A small spec with defaults for everything but the name.
    pub fn simple(name: &str, vocab_size: usize, documents: usize) -> Self {
        Self {
            name: name.into(),
            alphabet: default_alphabet(),
            vocab_size,
            zipf_exponent: 1.0,
            parent: None,
            lexical_overlap: 0.0,
            contaminant: None,
            contamination_rate: 0.0,
            bigram_temperature: 1.0,
            documents,
            doc_words_min: 20,
            doc_words_max: 60,
            word_len_min: default_word_len_min(),
            word_len_max: default_word_len_max(),
            clusters: default_clusters(),
            sentence_len: default_sentence_len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic language {}: {m}", self.name)));
        if self.name.is_empty() {
            return Err(Error::Config("synthetic language needs a name".into()));
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if !(self.zipf_exponent >= 0.0) || !self.zipf_exponent.is_finite() {
            return bad(format!(
                "zipf_exponent must be finite and >= 0, got {}",
                self.zipf_exponent
            ));
        }
        if !(0.0..=1.0).contains(&self.lexical_overlap) {
            return bad(format!(
                "lexical_overlap must lie in [0, 1], got {}",
                self.lexical_overlap
            ));
        }
        if !(0.0..1.0).contains(&self.contamination_rate) {
            return bad(format!(
                "contamination_rate must lie in [0, 1), got {}",
                self.contamination_rate
            ));
        }
        if self.lexical_overlap > 0.0 && self.parent.is_none() {
            return bad("lexical_overlap > 0 needs a parent language".into());
        }
        if self.contamination_rate > 0.0 && self.contaminant.is_none() {
            return bad("contamination_rate > 0 needs a contaminant language".into());
        }
        if !(self.bigram_temperature >= 0.0) || !self.bigram_temperature.is_finite() {
            return bad(format!(
                "bigram_temperature must be finite and >= 0, got {}",
                self.bigram_temperature
            ));
        }
        if self.doc_words_min == 0 || self.doc_words_min > self.doc_words_max {
            return bad("need 0 < doc_words_min <= doc_words_max".into());
        }
        if self.word_len_min == 0 || self.word_len_min > self.word_len_max {
            return bad("need 0 < word_len_min <= word_len_max".into());
        }
        if self.alphabet.chars().any(|c| c.is_whitespace() || c == '.') || self.alphabet.is_empty() {
            return bad("alphabet must be non-empty without whitespace or '.'".into());
        }
        if self.clusters == 0 || self.sentence_len == 0 {
            return bad("clusters and sentence_len must be positive".into());
        }
        Ok(())
    }
}

/// The generative model behind a synthetic language.
///
/// Words are ranked; rank `r` has stationary probability proportional to
/// `(r + 1)^-s`. Ranks are partitioned into clusters, and the next word is
/// drawn from the full Zipf distribution with probability `1 - lambda` or from
/// the current word's cluster (Zipf-restricted) with probability
/// `lambda = 1 / (1 + temperature)`. Both components leave the Zipf
/// distribution stationary.
#[derive(Clone, Debug)]
pub struct SyntheticLanguage {
    pub spec: SyntheticLanguageSpec,
    pub lexicon: Vec<String>,
    seed: u64,
    cluster_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    unigram: WeightedIndex<f64>,
    cluster_samplers: Vec<WeightedIndex<f64>>,
    lambda: f64,
}

/// Generated documents and their true language, index-aligned.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub language: String,
    pub documents: Vec<Document>,
    pub truth: Vec<String>,
}

impl SyntheticCorpus {
    pub fn to_language_corpus(&self) -> LanguageCorpus {
        LanguageCorpus::single(&self.language, "synthetic", self.documents.clone())
    }

    pub fn texts(&self) -> Vec<&str> {
        self.documents.iter().map(|d| d.text.as_str()).collect()
    }
}

fn fresh_word(alphabet: &[char], spec: &SyntheticLanguageSpec, rng: &mut DetRng) -> String {
    let len = spec.word_len_min + rng.below(spec.word_len_max - spec.word_len_min + 1);
    (0..len).map(|_| alphabet[rng.below(alphabet.len())]).collect()
}

impl SyntheticLanguage {
    /// Builds the lexicon and transition structure. `registry` supplies the
    /// parent and contaminant languages by name.
    pub fn build(
        spec: &SyntheticLanguageSpec,
        registry: &BTreeMap<String, SyntheticLanguage>,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let lookup = |name: &Option<String>, role: &str| -> Result<Option<&SyntheticLanguage>> {
            match name {
                None => Ok(None),
                Some(n) => registry
                    .get(n)
                    .map(Some)
                    .ok_or_else(|| Error::Config(format!("{role} language {n} of {} is not defined", spec.name))),
            }
        };
        let parent = lookup(&spec.parent, "parent")?;
        lookup(&spec.contaminant, "contaminant")?;

        let n = spec.vocab_size;
        let alphabet: Vec<char> = spec.alphabet.chars().collect();
        let mut lex_rng = DetRng::derive(seed, "synthetic/lexicon");
        let mut lexicon: Vec<Option<String>> = vec![None; n];
        let mut taken: HashSet<String> = HashSet::new();
        let mut reserved: HashSet<&str> = HashSet::new();
        if let Some(p) = parent {
            let mut ranks: Vec<usize> = (0..n).collect();
            ranks.shuffle(&mut lex_rng);
            let copies = (spec.lexical_overlap * n as f64).round() as usize;
            for &r in ranks.iter().take(copies) {
                if let Some(w) = p.lexicon.get(r) {
                    lexicon[r] = Some(w.clone());
                    taken.insert(w.clone());
                }
            }
            reserved.extend(p.lexicon.iter().map(String::as_str));
        }
        for slot in lexicon.iter_mut().filter(|s| s.is_none()) {
            let mut attempts = 0;
            let word = loop {
                let w = fresh_word(&alphabet, spec, &mut lex_rng);
                if !taken.contains(&w) && !reserved.contains(w.as_str()) {
                    break w;
                }
                attempts += 1;
                if attempts > 10_000 {
                    return Err(Error::Config(format!(
                        "synthetic language {}: alphabet and word lengths cannot supply {n} distinct words",
                        spec.name
                    )));
                }
            };
            taken.insert(word.clone());
            *slot = Some(word);
        }
        let lexicon: Vec<String> = lexicon.into_iter().map(|w| w.expect("every rank filled")).collect();

        let weights: Vec<f64> = (0..n).map(|r| (r as f64 + 1.0).powf(-spec.zipf_exponent)).collect();
        let mut chain_rng = DetRng::derive(seed, "synthetic/chain");
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut chain_rng);
        let k = spec.clusters.min(n);
        let mut cluster_of = vec![0; n];
        let mut members = vec![Vec::new(); k];
        for (i, &r) in order.iter().enumerate() {
            cluster_of[r] = i % k;
        }
        for r in 0..n {
            members[cluster_of[r]].push(r);
        }
        let cluster_samplers = members
            .iter()
            .map(|m| WeightedIndex::new(m.iter().map(|&r| weights[r])).expect("non-empty cluster"))
            .collect();
        Ok(Self {
            spec: spec.clone(),
            lexicon,
            seed,
            cluster_of,
            members,
            unigram: WeightedIndex::new(&weights).expect("positive weights"),
            cluster_samplers,
            lambda: 1.0 / (1.0 + spec.bigram_temperature),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stationary probability of each rank.
    pub fn unigram_probabilities(&self) -> Vec<f64> {
        let w: Vec<f64> = (0..self.lexicon.len())
            .map(|r| (r as f64 + 1.0).powf(-self.spec.zipf_exponent))
            .collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }

    fn next_rank(&self, prev: usize, rng: &mut DetRng) -> usize {
        if rng.uniform() < self.lambda {
            let c = self.cluster_of[prev];
            self.members[c][self.cluster_samplers[c].sample(rng)]
        } else {
            self.unigram.sample(rng)
        }
    }

    /// One document of `doc_words_min..=doc_words_max` words.
    pub fn sample_document(&self, rng: &mut DetRng) -> String {
        let s = &self.spec;
        let words = s.doc_words_min + rng.below(s.doc_words_max - s.doc_words_min + 1);
        let mut text = String::new();
        let mut r = self.unigram.sample(rng);
        for i in 0..words {
            if i > 0 {
                r = self.next_rank(r, rng);
                text.push(' ');
            }
            text.push_str(&self.lexicon[r]);
            if (i + 1) % s.sentence_len == 0 || i + 1 == words {
                text.push('.');
            }
        }
        text
    }
}

/// Builds the language described by `spec` and samples its corpus.
///
/// Own documents come from the `seed`-derived document stream; a random
/// `round(c * documents)` of them are then replaced wholesale by documents of
/// the contaminant language, and `truth` records each document's real source.
pub fn gen_synthetic_language(
    spec: &SyntheticLanguageSpec,
    registry: &BTreeMap<String, SyntheticLanguage>,
    seed: u64,
) -> Result<(SyntheticLanguage, SyntheticCorpus)> {
    let lang = SyntheticLanguage::build(spec, registry, seed)?;
    let mut doc_rng = DetRng::derive(seed, "synthetic/documents");
    let mut texts: Vec<String> = (0..spec.documents)
        .map(|_| lang.sample_document(&mut doc_rng))
        .collect();
    let mut truth = vec![spec.name.clone(); spec.documents];
    if let Some(cname) = spec.contaminant.as_ref().filter(|_| spec.contamination_rate > 0.0) {
        let contaminant = &registry[cname];
        let mut crng = DetRng::derive(seed, "synthetic/contamination");
        let count = (spec.contamination_rate * spec.documents as f64).round() as usize;
        let mut idx: Vec<usize> = (0..spec.documents).collect();
        idx.shuffle(&mut crng);
        let mut chosen = idx[..count].to_vec();
        chosen.sort_unstable();
        for i in chosen {
            texts[i] = contaminant.sample_document(&mut crng);
            truth[i] = cname.clone();
        }
    }
    let documents = texts
        .into_iter()
        .map(|text| Document {
            text,
            lang: spec.name.clone(),
            source: "synthetic".into(),
        })
        .collect();
    Ok((
        lang,
        SyntheticCorpus {
            language: spec.name.clone(),
            documents,
            truth,
        },
    ))
}
