//! Margin-based active domain adaptation on fixed feature vectors.
//!
//! The crate is `no_std` (it needs `alloc`) and carries everything that is pure
//! computation:
//!
//! * [`classifier`]: bias-free linear classifier, softmax readout, top-2 search.
//! * [`losses`]: margin, dynamic margin and cross-entropy objectives with
//!   hand-derived gradients w.r.t. logits, features and weights.
//! * [`query`]: margin / entropy / confidence / random scores, the
//!   gradient-consistency score and top-B selection with operation counters.
//! * [`theory`]: the binary linear model used to check how one gradient step
//!   moves the margin query, and the source margin fraction diagnostic.
//! * [`data`]: domain datasets, the synthetic shifted-Gaussian generator and
//!   the oracle annotator.
//! * [`learner`]: minibatch SGD and the budgeted active learning loop.
//! * [`gradcheck`]: finite-difference suites for every analytic gradient.
//!
//! File formats, timing and the command line live in the companion `sdm` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod classifier;
pub mod counters;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod learner;
pub mod losses;
mod math;
pub mod query;
pub mod theory;

pub use classifier::{softmax, top2, FeatureVector, LinearClassifier, Logits, ProbVector};
pub use counters::OpCounters;
pub use data::{DomainDataset, LabeledSample, SyntheticConfig};
pub use error::{Error, Result};
pub use learner::{active_learning_loop, ExperimentConfig, RoundMetrics};
pub use losses::{Margin, MarginVariant, Objective};
pub use query::{QueryConfig, QueryScore, Strategy};
