//! Harness for source-and-target belief prediction with LLMs.
//!
//! Sentences are prompted in a single pass (unified) or with externally
//! supplied events (hybrid); model output is parsed into
//! (source, event, label) triples, optionally source-normalized, and scored
//! with exact-match micro F1 over all, author-scope and nested-scope triples.

pub mod analysis;
pub mod corpus;
pub mod events;
pub mod gateway;
pub mod model;
pub mod normalize;
pub mod parse;
pub mod pipeline;
pub mod prompt;
pub mod score;

mod pool;
