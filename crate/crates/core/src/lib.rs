//! Causality-aware rotary positional encodings.
//!
//! The pipeline learns a weighted DAG over tabular features
//! ([`discovery`]), embeds it on the hyperboloid ([`embed`], [`manifold`]),
//! maps the embeddings into the Poincaré ball and turns them into rotary
//! angles that modulate query/key attention scores ([`rotary`],
//! [`attnlayer`]). [`propbench`] checks the attention properties numerically
//! and [`cli`] wires the stages together.

pub mod numerics;
pub mod synthgen;
pub mod discovery;
pub mod manifold;
pub mod embed;
pub mod rotary;
pub mod attnlayer;
pub mod propbench;
pub mod cli;
