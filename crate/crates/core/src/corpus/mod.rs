//! Language corpora: ingestion, dataset weighting, splits, sequence packing
//! and synthetic languages.

mod jsonl;
mod pack;
mod splits;
mod synth;
mod weights;

use serde::{Deserialize, Serialize};

pub use jsonl::{load_corpus, read_jsonl, write_jsonl, write_truth_jsonl, DocumentReader, LoadedCorpus};
pub use pack::{encode_corpus, pack_sequential, pack_stream, EncodedCorpus, EncodedDataset, PackedStream};
pub use splits::{make_splits, SplitSizes, Splits};
pub use synth::{gen_synthetic_language, SyntheticCorpus, SyntheticLanguage, SyntheticLanguageSpec};
pub use weights::normalize_weights;

/// One raw text example. The labels are provenance only.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub text: String,
    pub lang: String,
    pub source: String,
}

/// Per-language corpus description: one entry per source dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub language: String,
    pub datasets: Vec<DatasetSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub path: std::path::PathBuf,
    #[serde(default)]
    pub category: String,
    pub weight: f64,
    /// Dataset size in bytes or a byte estimate; only ratios matter.
    pub size: f64,
}

/// Documents of one dataset, with the weighting inputs kept alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub weight: f64,
    pub size: f64,
    pub documents: Vec<Document>,
}

/// All documents of one language, grouped by dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageCorpus {
    pub language: String,
    pub datasets: Vec<Dataset>,
}

impl LanguageCorpus {
    /// Single-dataset corpus, size taken as the total text bytes.
    pub fn single(language: &str, source: &str, documents: Vec<Document>) -> Self {
        let size = documents.iter().map(|d| d.text.len()).sum::<usize>() as f64;
        Self {
            language: language.into(),
            datasets: vec![Dataset {
                name: source.into(),
                weight: 1.0,
                size,
                documents,
            }],
        }
    }

    pub fn num_documents(&self) -> usize {
        self.datasets.iter().map(|d| d.documents.len()).sum()
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.datasets.iter().flat_map(|d| d.documents.iter())
    }

    /// Dataset sampling probabilities from `weight * size`.
    pub fn distribution(&self) -> crate::Result<Vec<f64>> {
        let pairs: Vec<(f64, f64)> = self.datasets.iter().map(|d| (d.weight, d.size)).collect();
        normalize_weights(&pairs)
    }
}
