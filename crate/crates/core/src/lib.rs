//! mavenrec: a group recommendation engine built around opinion-leader
//! ("maven") mining.
//!
//! Groups rarely behave like the average of their members — often one
//! member effectively decides. This crate learns who, per target item, by
//! combining three pieces:
//!
//! * an attention network that scores each member against the target item
//!   and produces per-member influence weights,
//! * a permutation-invariant self-attention encoder that summarizes the
//!   group independently of any particular item,
//! * a shared feed-forward prediction stack scoring (profile, item) pairs
//!   for both individual users and whole groups.
//!
//! Everything is trained jointly from implicit-feedback interactions with a
//! pairwise ranking objective. The crate also ships a synthetic data
//! generator with planted opinion leaders (so influence recovery can be
//! measured against ground truth), a leave-one-out evaluator with ranking
//! metrics, and a CLI wiring the pieces together. All computation is `f64`
//! and every random decision flows from one seed: identical runs are
//! bit-identical.

#![forbid(unsafe_code)]

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod seeds;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
