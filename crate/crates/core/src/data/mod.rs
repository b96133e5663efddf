//! Transcript, embedding, price and source ingestion; labels and splits;
//! the synthetic corpus generator.

mod embeddings;
pub(crate) mod hash_embed;
mod labels;
mod split;
mod synth;
mod transcript;

pub use embeddings::{EmbeddingFile, EMBEDDING_MAGIC, EMBEDDING_VERSION};
pub use hash_embed::{hash_embed, hash_embed_or_zero, token_vector};
pub use labels::{compute_labels, label_from_prices, log_volatility, percentile, PriceTable, Thresholds};
pub use split::{chronological_split, Split};
pub use synth::{read_ground_truth, synth_generate, write_ground_truth, GroundTruth, SyntheticCorpus, SyntheticSpec};
pub use transcript::{
    read_sources, read_transcripts, sentence_id, write_sources, write_transcripts, Session, SourceSentence, TranscriptRecord,
};
