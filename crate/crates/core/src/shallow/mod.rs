//! Part-of-speech tags and phrase chunks used as relation features.

mod chunk;
mod pos;

pub use chunk::{chunk, ChunkTag};
pub use pos::{
    read_tagged, rule_tag, tag_corpus_with_rules, train_pos, write_tagged, PosConfig, PosModel,
    TaggedSentence, POS_FORMAT_VERSION, TAGSET,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShallowError {
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("argument error: {0}")]
    Argument(String),
    #[error("model error: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
