//! Register usage measured by running the protocols.

use serde::Serialize;
use setspace::error::Result;
use setspace::memory::Pid;
use setspace::protocol::ProtocolParams;
use setspace::schedule::{pid_inputs, Activation, Configuration};
use setspace::trace::{Step, Trace};
use setspace::verify::registers_touched;

/// Steps a single solo run may take before it is abandoned.
const SOLO_CAP: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Measurement {
    /// Distinct physical registers written.
    pub touched: usize,
    /// Registers the memory layout provides.
    pub budget: usize,
    pub steps: usize,
    /// Whether every solo run finished within its cap.
    pub complete: bool,
}

/// Runs every process solo to completion, one after another from the
/// configuration the previous one left, and counts the registers written.
pub fn sequential_solo(params: &ProtocolParams) -> Result<(Measurement, Trace)> {
    let config = Configuration::initial(params, &pid_inputs(params))?;
    let mut trace = Trace::new(params.clone(), config.clone());
    let mut config = config;
    let mut complete = true;
    for pid in 0..params.n {
        complete &= solo(params, &mut config, &mut trace, pid)?;
    }
    trace.truncated = !complete;
    let m = Measurement {
        touched: registers_touched(&trace).len(),
        budget: params.register_budget(),
        steps: trace.steps.len(),
        complete,
    };
    Ok((m, trace))
}

fn solo(
    params: &ProtocolParams,
    config: &mut Configuration,
    trace: &mut Trace,
    pid: Pid,
) -> Result<bool> {
    for _ in 0..SOLO_CAP {
        if config.machine(pid).is_halted() {
            return Ok(true);
        }
        let a = Activation::t1(pid);
        let effect = config.apply(params, a)?;
        let index = trace.steps.len();
        trace.push(Step::from_effect(index, a.pid, a.thread, effect));
    }
    Ok(config.machine(pid).is_halted())
}

#[cfg(test)]
mod tests {
    use super::*;
    use setspace::protocol::ProtocolKind;

    #[test]
    fn consensus_touches_every_register() {
        let p = ProtocolParams::new(ProtocolKind::OneShot, 3, 1, 1).unwrap();
        let (m, _) = sequential_solo(&p).unwrap();
        assert!(m.complete);
        assert_eq!((m.touched, m.budget), (3, 3));
    }
}
