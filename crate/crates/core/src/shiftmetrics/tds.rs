use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::bpe::Vocab;
use crate::corpus::{encode_corpus, pack_stream, Document, LanguageCorpus};
use crate::error::{Error, Result};
use crate::numerics::DetRng;

/// Dense token counts indexed by vocabulary id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenFrequencyVector {
    counts: Vec<u64>,
    total: u64,
}

impl TokenFrequencyVector {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            counts: vec![0; vocab_size],
            total: 0,
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn add(&mut self, tokens: &[u32], multiplicity: u64) -> Result<()> {
        let v = self.counts.len();
        for &t in tokens {
            let slot = self
                .counts
                .get_mut(t as usize)
                .ok_or_else(|| Error::Index(format!("token {t} outside vocabulary of {v}")))?;
            *slot += multiplicity;
        }
        self.total += tokens.len() as u64 * multiplicity;
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// What one TDS sample is: a whole document, or a packed training sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "unit")]
pub enum SampleUnit {
    Documents,
    Sequences { seq_len: usize },
}

/// Document indices `(dataset, document)` drawn by dataset probability, then
/// uniformly within the dataset, with replacement.
pub fn sample_documents(corpus: &LanguageCorpus, n_samples: usize, rng: &mut DetRng) -> Result<Vec<(usize, usize)>> {
    if n_samples == 0 {
        return Err(Error::Input("n_samples must be at least 1".into()));
    }
    let p = corpus.distribution()?;
    let w: Vec<f64> = p
        .iter()
        .zip(&corpus.datasets)
        .map(|(p, d)| if d.documents.is_empty() { 0.0 } else { *p })
        .collect();
    let pick =
        WeightedIndex::new(&w).map_err(|_| Error::Input(format!("corpus {} has no documents", corpus.language)))?;
    Ok((0..n_samples)
        .map(|_| {
            let d = pick.sample(rng);
            (d, rng.below(corpus.datasets[d].documents.len()))
        })
        .collect())
}

/// Counts tokens over a weighted sample of `corpus`.
pub fn token_frequency_vector(
    corpus: &LanguageCorpus,
    vocab: &Vocab,
    n_samples: usize,
    unit: SampleUnit,
    rng: &mut DetRng,
) -> Result<TokenFrequencyVector> {
    let mut tfv = TokenFrequencyVector::new(vocab.len());
    match unit {
        SampleUnit::Documents => {
            let mut multiplicity: BTreeMap<(usize, usize), u64> = BTreeMap::new();
            for key in sample_documents(corpus, n_samples, rng)? {
                *multiplicity.entry(key).or_default() += 1;
            }
            for ((d, i), m) in multiplicity {
                tfv.add(&vocab.encode(&corpus.datasets[d].documents[i].text), m)?;
            }
        }
        SampleUnit::Sequences { seq_len } => {
            if n_samples == 0 {
                return Err(Error::Input("n_samples must be at least 1".into()));
            }
            let encoded = encode_corpus(corpus, vocab)?;
            let mut stream = pack_stream(&encoded, seq_len, vocab.eod(), rng.clone())?;
            for _ in 0..n_samples {
                tfv.add(&stream.next_sequence(), 1)?;
            }
            *rng = stream.rng().clone();
        }
    }
    if tfv.total == 0 {
        return Err(Error::Input(format!(
            "sample of corpus {} contains no tokens",
            corpus.language
        )));
    }
    Ok(tfv)
}

/// `dot(u, v) / (|u| |v|)`, clamped to `[0, 1]`.
pub fn cosine_similarity(u: &TokenFrequencyVector, v: &TokenFrequencyVector) -> Result<f64> {
    if u.counts.len() != v.counts.len() {
        return Err(Error::dim(
            "cosine_similarity",
            format!("{} vs {}", u.counts.len(), v.counts.len()),
        ));
    }
    if u.total == 0 || v.total == 0 {
        return Err(Error::Input("cosine similarity of a zero vector".into()));
    }
    let (mut dot, mut uu, mut vv) = (0f64, 0f64, 0f64);
    for (&a, &b) in u.counts.iter().zip(&v.counts) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    Ok((dot / (uu.sqrt() * vv.sqrt())).clamp(0.0, 1.0))
}

/// Sampling stream of a corpus for TDS, keyed by the corpus language so the
/// measure is symmetric in its arguments.
pub fn tds_rng(seed: u64, corpus: &LanguageCorpus) -> DetRng {
    DetRng::derive(seed, &format!("tds/{}", corpus.language))
}

/// Token distribution similarity of two corpora.
pub fn tds(
    a: &LanguageCorpus,
    b: &LanguageCorpus,
    vocab: &Vocab,
    n_samples: usize,
    unit: SampleUnit,
    seed: u64,
) -> Result<f64> {
    let u = token_frequency_vector(a, vocab, n_samples, unit, &mut tds_rng(seed, a))?;
    let v = token_frequency_vector(b, vocab, n_samples, unit, &mut tds_rng(seed, b))?;
    cosine_similarity(&u, &v)
}

/// Documents of `corpus` selected by [`sample_documents`].
pub fn sampled<'a>(corpus: &'a LanguageCorpus, picks: &[(usize, usize)]) -> Vec<&'a Document> {
    picks.iter().map(|&(d, i)| &corpus.datasets[d].documents[i]).collect()
}
