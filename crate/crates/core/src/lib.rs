//! Glycemic-impact estimation pipeline for cooking recipes.
//!
//! The crate covers the whole offline workflow: loading and validating a
//! recipe corpus, choosing recipes for crowd annotation, aggregating crowd
//! judgments into labels, traffic-light healthiness scoring, the statistics
//! used to relate the two, feature extraction (bag-of-words, NB-weighted
//! bag-of-words, averaged word embeddings, nutritional vectors), an
//! L2-regularized logistic regression and a nested cross-validation harness.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.
//! Results are identical in both modes.

pub mod classifier;
pub mod corpus;
pub mod crowd;
mod error;
pub mod eval;
pub mod features;
pub mod healthiness;
pub mod par;
pub mod rng;
pub mod stats;
pub mod synthetic;
pub mod textprep;

pub use error::{Error, Result};

pub(crate) mod csvio {
    use std::io::Write;

    /// CSV writer with a header row convention and LF line endings.
    pub fn writer<W: Write>(inner: W) -> csv::Writer<W> {
        csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(inner)
    }
}
