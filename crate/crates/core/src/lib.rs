//! Extraction of numerical attributes and their values from clinical free text.
//!
//! The pipeline has two trained stages: a linear-chain CRF that tags attribute
//! and value mentions, and a linear max-margin classifier that decides which
//! attribute each value belongs to.

pub mod corpus;
pub mod ner;
pub mod tokenizer;
pub mod shallow;
pub mod relation;
pub mod eval;
pub mod pipeline;
pub mod cli;
