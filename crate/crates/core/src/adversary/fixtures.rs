//! Parameter sets for the constructions: deliberately undersized protocols
//! that must be refuted, and full-size ones that must resist.

use crate::protocol::{ProtocolKind, ProtocolParams};

/// Instances available to the repeated fixtures.
pub const FIXTURE_INSTANCES: u32 = 4;

/// Repeated consensus for two processes on a single component.
pub fn single_register_consensus() -> ProtocolParams {
    ProtocolParams::new(ProtocolKind::Repeated, 2, 1, 1)
        .and_then(|p| p.with_components(1))
        .and_then(|p| p.with_instances(FIXTURE_INSTANCES))
        .expect("valid fixture")
}

/// The repeated protocol at its intended size.
pub fn full_repeated(n: usize, m: usize, k: usize) -> ProtocolParams {
    ProtocolParams::new(ProtocolKind::Repeated, n, m, k)
        .and_then(|p| p.with_instances(FIXTURE_INSTANCES))
        .expect("valid fixture")
}

/// One-shot anonymous consensus for four processes on two components and
/// no history register.
pub fn footprint_anonymous() -> ProtocolParams {
    ProtocolParams::new(ProtocolKind::Anonymous, 4, 1, 1)
        .and_then(|p| p.with_components(2))
        .and_then(|p| p.with_history_register(false))
        .expect("valid fixture")
}

/// The anonymous protocol at its intended size, history register included.
pub fn full_anonymous(n: usize, m: usize, k: usize) -> ProtocolParams {
    ProtocolParams::new(ProtocolKind::Anonymous, n, m, k).expect("valid fixture")
}
