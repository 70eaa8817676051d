//! Relation classification between entity pairs in scientific abstracts.
//!
//! The pipeline reduces each entity to its syntactic head, takes the
//! dependency subtree spanning the two heads, encodes every node as a word
//! embedding optionally augmented with dependency-label, POS, entity-length
//! and height features, and runs a child-sum tree-LSTM whose root state is
//! classified into one of six relation types.

pub mod checkpoint;
pub mod conll;
pub mod corpus;
pub mod embed;
pub mod evalcli;
pub mod features;
pub mod label;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod toy;
pub mod train;
pub mod tree;

pub use label::{RelationLabel, NUM_LABELS};
