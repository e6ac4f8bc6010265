//! Query-less reranker fine-tuning: synthetic queries from seed passages,
//! LLM-judged hard negatives, and contrastive training of a cross-encoder.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod exec;
pub mod experiment;
mod http_client;
pub mod jsonl;
pub mod llm;
pub mod metrics;
pub mod mining;
pub mod querygen;
pub mod retrieval;
pub mod synthetic;
pub mod text;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use exec::Exec;
pub use http_client::{HttpConfig, TOKEN_ENV};
