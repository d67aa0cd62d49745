//! Inputs shared by the benchmarks.

use std::collections::BTreeMap;

use langshift_core::corpus::{gen_synthetic_language, SyntheticLanguageSpec};

/// Texts of a small synthetic language.
pub fn sample_texts(documents: usize, seed: u64) -> Vec<String> {
    let spec = SyntheticLanguageSpec::simple("bench", 400, documents);
    let (_, corpus) = gen_synthetic_language(&spec, &BTreeMap::new(), seed).expect("valid spec");
    corpus.documents.into_iter().map(|d| d.text).collect()
}
