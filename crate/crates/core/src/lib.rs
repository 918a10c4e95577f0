//! Corpus-driven evaluation of whether masked language models of code
//! learn syntax: mask tokens per AST node type, score predictions by AST
//! traversal similarity, and estimate the causal effect of syntax-guided
//! masking with propensity-score adjustment.

pub mod ast;
pub mod backend;
pub mod causal;
pub mod corpus;
pub mod error;
pub mod masking;
pub mod metrics;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
