//! Timestamped entity-state tracking over procedural text.
//!
//! A procedure is encoded once per (entity, step): the question
//! `where is <entity> ?` is prepended to the paragraph and every token is
//! tagged as question, past, current or future relative to the step. A small
//! transformer encodes the query; heads predict the entity's status and a
//! location span. Predictions are repaired with two consistency rules,
//! tabulated, and scored at sentence and document level.

pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod heads;
pub mod inference;
pub mod input;
pub mod model;
pub mod predict;
pub mod state_table;
pub mod tokenizer;
pub mod train;
pub mod types;

pub use error::{ErrorKind, Result, TslmError};
pub use types::{Location, StatusClass};
