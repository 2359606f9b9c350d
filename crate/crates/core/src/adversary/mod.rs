//! Executable versions of the lower-bound arguments, run against concrete
//! protocols at small sizes.

pub mod clone;
pub mod covering;
pub mod fixtures;

pub use clone::{
    build_glued, clone_lockstep, find_glue_family, register_sequence, CloneWorld, GlueOutcome,
    GlueStage,
};
pub use covering::{
    build_covering, fragment_search, splice_and_refute, Covering, CoveringOutcome, CoveringState,
    FragmentOutcome, SpliceOutcome, SplicedGroup,
};
