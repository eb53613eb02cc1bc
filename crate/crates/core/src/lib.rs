//! Element nomination over DOM trees.
//!
//! This crate holds the pure algorithmic core: the DOM-tree data model and
//! featurization, a small reverse-mode autodiff engine with Adam, eight node
//! embedders with a shared classification head, the basic and hard-example
//! training procedures, nomination metrics, and a synthetic page generator.
//!
//! It is `no_std` and only needs `alloc`. File formats, HTML ingestion,
//! parallel execution and the command-line tool live in the `nominator` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dom;
pub mod embedders;
pub mod eval;
pub mod exec;
pub mod features;
pub mod graph;
pub mod synth;
pub mod tensor;
pub mod training;

mod rng;

pub use dom::{ClassId, DomNode, DomTree, Label};
pub use embedders::{EmbedderConfig, EmbedderKind, Model};
pub use features::{FeatureConfig, FeatureVector};
pub use graph::{Page, PageGraph};
pub use tensor::{Tape, Tensor, Var};
