use std::collections::VecDeque;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;

use super::LanguageCorpus;
use crate::bpe::Vocab;
use crate::error::{Error, Result};
use crate::numerics::DetRng;

/// Token ids of one dataset's documents, shared between streams.
#[derive(Clone, Debug)]
pub struct EncodedDataset {
    pub name: String,
    pub docs: Arc<Vec<Vec<u32>>>,
}

impl EncodedDataset {
    pub fn num_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }
}

/// An encoded language corpus with its dataset sampling distribution.
#[derive(Clone, Debug)]
pub struct EncodedCorpus {
    pub language: String,
    pub datasets: Vec<EncodedDataset>,
    pub distribution: Vec<f64>,
}

impl EncodedCorpus {
    pub fn num_tokens(&self) -> usize {
        self.datasets.iter().map(EncodedDataset::num_tokens).sum()
    }

    /// All documents in dataset order.
    pub fn all_docs(&self) -> Vec<&[u32]> {
        self.datasets
            .iter()
            .flat_map(|d| d.docs.iter().map(Vec::as_slice))
            .collect()
    }

    /// Caps the training material at `budget` tokens, giving each dataset
    /// its share `budget * p_i` and keeping whole documents in order.
    pub fn with_token_budget(&self, budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::Parameter("token budget must be positive".into()));
        }
        let datasets = self
            .datasets
            .iter()
            .zip(&self.distribution)
            .map(|(ds, &p)| {
                let share = (budget as f64 * p).round() as usize;
                let mut kept = Vec::new();
                let mut total = 0;
                for doc in ds.docs.iter() {
                    if total >= share {
                        break;
                    }
                    let take = doc.len().min(share - total);
                    kept.push(doc[..take].to_vec());
                    total += take;
                }
                EncodedDataset {
                    name: ds.name.clone(),
                    docs: Arc::new(kept),
                }
            })
            .collect();
        Ok(Self {
            language: self.language.clone(),
            datasets,
            distribution: self.distribution.clone(),
        })
    }
}

/// Encodes every document of `corpus` with `vocab`.
pub fn encode_corpus(corpus: &LanguageCorpus, vocab: &Vocab) -> Result<EncodedCorpus> {
    let distribution = corpus.distribution()?;
    let datasets = corpus
        .datasets
        .iter()
        .map(|d| EncodedDataset {
            name: d.name.clone(),
            docs: Arc::new(d.documents.iter().map(|doc| vocab.encode(&doc.text)).collect()),
        })
        .collect();
    Ok(EncodedCorpus {
        language: corpus.language.clone(),
        datasets,
        distribution,
    })
}

struct Source {
    docs: Arc<Vec<Vec<u32>>>,
    order: Vec<usize>,
    cursor: usize,
}

/// Endless stream of fixed-length token sequences.
///
/// Each refill picks a dataset by its probability, then the next document of
/// that dataset's current shuffled pass (reshuffled when exhausted). Documents
/// are appended with a trailing end-of-document token and the buffer is cut
/// into sequences of exactly `seq_len` tokens; leftovers carry over.
pub struct PackedStream {
    sources: Vec<Source>,
    sampler: WeightedIndex<f64>,
    rng: DetRng,
    buffer: VecDeque<u32>,
    seq_len: usize,
    eod: u32,
    draws: Vec<u64>,
    emitted: u64,
}

impl PackedStream {
    /// Stream over `(documents, probability)` pairs. Sources with no tokens are
    /// dropped and the remaining mass renormalized.
    pub fn new(sources: Vec<(Arc<Vec<Vec<u32>>>, f64)>, seq_len: usize, eod: u32, rng: DetRng) -> Result<Self> {
        if seq_len < 2 {
            return Err(Error::Parameter(format!("seq_len must be at least 2, got {seq_len}")));
        }
        let weights: Vec<f64> = sources
            .iter()
            .map(|(docs, p)| if docs.iter().all(Vec::is_empty) { 0.0 } else { *p })
            .collect();
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::Data("no dataset with documents and positive probability".into()));
        }
        let sampler = WeightedIndex::new(&weights).map_err(|e| Error::Input(e.to_string()))?;
        let sources = sources
            .into_iter()
            .map(|(docs, _)| Source {
                order: (0..docs.len()).collect(),
                cursor: docs.len(),
                docs,
            })
            .collect::<Vec<_>>();
        let n = sources.len();
        Ok(Self {
            sources,
            sampler,
            rng,
            buffer: VecDeque::new(),
            seq_len,
            eod,
            draws: vec![0; n],
            emitted: 0,
        })
    }

    /// Weighted mixture over several encoded corpora, e.g. for joint training.
    pub fn mixture(corpora: &[(&EncodedCorpus, f64)], seq_len: usize, eod: u32, rng: DetRng) -> Result<Self> {
        let mut sources = Vec::new();
        for (corpus, w) in corpora {
            for (ds, p) in corpus.datasets.iter().zip(&corpus.distribution) {
                sources.push((ds.docs.clone(), w * p));
            }
        }
        Self::new(sources, seq_len, eod, rng)
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// How many documents were drawn from each source so far.
    pub fn draws(&self) -> &[u64] {
        &self.draws
    }

    pub fn sequences_emitted(&self) -> u64 {
        self.emitted
    }

    pub fn rng(&self) -> &DetRng {
        &self.rng
    }

    /// Index of the next source drawn, advancing the stream's sampling state.
    /// Used by the packer itself; exposed for frequency checks.
    pub fn draw_source(&mut self) -> usize {
        let i = self.sampler.sample(&mut self.rng);
        self.draws[i] += 1;
        i
    }

    fn next_doc(&mut self) -> usize {
        let i = self.draw_source();
        let src = &mut self.sources[i];
        if src.cursor >= src.order.len() {
            src.order.shuffle(&mut self.rng);
            src.cursor = 0;
        }
        let d = src.order[src.cursor];
        src.cursor += 1;
        let doc = &src.docs[d];
        self.buffer.extend(doc.iter().copied());
        self.buffer.push_back(self.eod);
        i
    }

    pub fn next_sequence(&mut self) -> Vec<u32> {
        while self.buffer.len() < self.seq_len {
            self.next_doc();
        }
        self.emitted += 1;
        self.buffer.drain(..self.seq_len).collect()
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Vec<Vec<u32>> {
        (0..batch_size).map(|_| self.next_sequence()).collect()
    }

    /// Advances past `n` sequences without returning them.
    pub fn skip_sequences(&mut self, n: u64) {
        for _ in 0..n {
            while self.buffer.len() < self.seq_len {
                self.next_doc();
            }
            self.buffer.drain(..self.seq_len);
            self.emitted += 1;
        }
    }
}

impl Iterator for PackedStream {
    type Item = Vec<u32>;

    fn next(&mut self) -> Option<Vec<u32>> {
        Some(self.next_sequence())
    }
}

/// Packed training stream over one encoded language corpus.
pub fn pack_stream(corpus: &EncodedCorpus, seq_len: usize, eod: u32, rng: DetRng) -> Result<PackedStream> {
    PackedStream::mixture(&[(corpus, 1.0)], seq_len, eod, rng)
}

/// Deterministic packing for evaluation: documents in order, each followed by
/// the end-of-document token, cut into full `seq_len` sequences. A trailing
/// partial sequence is dropped.
pub fn pack_sequential<D: AsRef<[u32]>>(docs: &[D], seq_len: usize, eod: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(seq_len);
    for doc in docs {
        for &t in doc.as_ref().iter().chain(std::iter::once(&eod)) {
            cur.push(t);
            if cur.len() == seq_len {
                out.push(std::mem::replace(&mut cur, Vec::with_capacity(seq_len)));
            }
        }
    }
    out
}
