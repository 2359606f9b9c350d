pub mod adversary;
pub mod bounds;
pub mod error;
pub mod memory;
pub mod protocol;
pub mod schedule;
pub mod search;
pub mod trace;
pub mod verify;
