//! Case-based reasoning question answering over a knowledge graph.
//!
//! A question is answered by retrieving similar solved questions from a case
//! memory, composing a logical form from the relations and structure of those
//! cases, and revising relations that do not execute against the KB.

pub mod error;
pub mod experiments;
pub mod kb;
pub mod lf;
pub mod linker;
pub mod memory;
pub mod pipeline;
pub mod retriever;
pub mod reuse;
pub mod revise;
pub mod text;
pub mod worldgen;

pub use error::{Error, Result};
