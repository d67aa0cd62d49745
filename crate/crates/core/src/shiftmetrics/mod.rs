//! Corpus similarity (TDS), language identification, contamination tables
//! and packaged typological similarities.

mod contamination;
mod distances;
mod langid;
mod tds;

pub use contamination::{contamination_matrix, format_percent, reference_contamination, ContaminationMatrix};
pub use distances::{
    load_feature_distances, parse_feature_distances, shipped_language_similarity, SimilarityTable, METRICS,
};
pub use langid::{extract_features, train_langid, Features, LangIdConfig, LangIdModel};
pub use tds::{
    cosine_similarity, sample_documents, sampled, tds, tds_rng, token_frequency_vector, SampleUnit,
    TokenFrequencyVector,
};
