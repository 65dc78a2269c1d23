//! Hierarchical explanations for black-box text classifiers.
//!
//! Words are grouped bottom-up into clusters by repeatedly merging the pair
//! of clusters whose attributions influence each other the most. Clusters
//! need not be contiguous spans. Each cluster carries its own attribution
//! score (leave-one-out or LIME), and the [`evaluation`] module measures how
//! faithful the resulting explanations are.

pub mod attribution;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod hierarchy;
pub mod interaction;
pub mod par;
pub mod predictor;
pub mod report;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
