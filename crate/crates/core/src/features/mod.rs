//! Feature schema, embedding tables, dataset files and the synthetic stream.

mod embedding;
mod io;
mod record;
mod schema;
mod split;
mod synth;

use thiserror::Error;

pub use embedding::{embed_concat, EmbeddingTable, EMBEDDING_INIT_RANGE};
pub use io::{
    header, period_file, read_dataset, read_dataset_dir, write_dataset, write_dataset_dir, PeriodData, SCHEMA_FILE,
};
pub use record::{Domain, FieldRef, Record, RecordLayout};
pub use schema::{FeatureSchema, FieldSpec, ITEM_FIELD, USER_FIELD};
pub use split::{eval_len, split_prequential, PeriodSplit, PrequentialSplit};
pub use synth::{synth_generate, SynthConfig, SyntheticData, SyntheticWorld, CATEGORY_FIELD, SEGMENT_FIELD};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
