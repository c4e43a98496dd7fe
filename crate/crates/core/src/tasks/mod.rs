//! Packaged tasks built on the lattice framework.

pub mod ngram;
pub mod pp;
pub mod sync;
pub mod synth;

/// Out-of-vocabulary placeholder; scored purely by back-off mass.
pub const UNK: &str = "<unk>";

pub use ngram::{perplexity, Perplexity};
pub use pp::{classify_pp, collins_brooks_baseline, evaluate_pp, PpRecord, PpReport};
pub use sync::{evaluate_sync, sync_dependency_prob, DependencyPair, SyncReport};
