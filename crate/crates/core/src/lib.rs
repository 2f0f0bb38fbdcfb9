//! Temporal expression normalization with in-context learning.
pub mod backend;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod prompting;
pub mod rules;
pub mod selection;

pub use error::{CorpusError, EmbeddingError, PipelineError, PromptError, SelectionError};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/prompts.md")]
    mod prompts {}
    #[doc = include_str!("../../../book/src/backends.md")]
    mod backends {}
    #[doc = include_str!("../../../book/src/rules.md")]
    mod rules {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
