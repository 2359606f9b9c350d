//! The guide under `book/src`, one module per chapter, so that
//! `cargo test --doc -p setspace-book` runs every listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/memory.md")]
pub mod memory {}
#[doc = include_str!("../../../book/src/protocols.md")]
pub mod protocols {}
#[doc = include_str!("../../../book/src/schedules.md")]
pub mod schedules {}
#[doc = include_str!("../../../book/src/checkers.md")]
pub mod checkers {}
#[doc = include_str!("../../../book/src/bounds.md")]
pub mod bounds {}
#[doc = include_str!("../../../book/src/covering.md")]
pub mod covering {}
#[doc = include_str!("../../../book/src/cloning.md")]
pub mod cloning {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
