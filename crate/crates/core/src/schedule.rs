//! Schedules and the execution engine.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{Memory, Pid, Value};
use crate::protocol::{Effect, ProcessMachine, ProtocolParams, Thread};
use crate::trace::{Step, Trace};

pub const DEFAULT_STEP_CAP: usize = 100_000;
/// First-thread activations per second-thread activation.
pub const DEFAULT_THREAD_BIAS: u32 = 7;

/// Shared memory plus every process's local state.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration {
    pub memory: Memory,
    pub machines: Vec<ProcessMachine>,
}

impl Configuration {
    pub fn initial(params: &ProtocolParams, inputs: &[Vec<Value>]) -> Result<Self> {
        if inputs.len() != params.n {
            return Err(Error::InvalidParams(format!(
                "{} input sequences for n={}",
                inputs.len(),
                params.n
            )));
        }
        let machines = inputs
            .iter()
            .enumerate()
            .map(|(pid, seq)| ProcessMachine::make(params, pid, seq.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            memory: Arc::new(params.memory_model()).initial_memory(),
            machines,
        })
    }

    /// Reattaches the memory layout after deserialization.
    pub fn with_model(mut self, model: Arc<crate::memory::MemoryModel>) -> Self {
        self.memory = self.memory.with_model(model);
        self
    }

    pub fn machine(&self, pid: Pid) -> &ProcessMachine {
        &self.machines[pid]
    }

    /// Applies one activation in place. Halted processes yield an empty
    /// effect so that activation and step indices stay aligned.
    pub fn apply(&mut self, params: &ProtocolParams, a: Activation) -> Result<Effect> {
        let machine = self.machines.get_mut(a.pid).ok_or_else(|| {
            Error::InvalidParams(format!("pid {} out of range for n={}", a.pid, params.n))
        })?;
        machine.activate(&mut self.memory, params, a.thread)
    }

    pub fn all_halted(&self) -> bool {
        self.machines.iter().all(ProcessMachine::is_halted)
    }

    /// Equality on memory and on every machine not in `masked`.
    pub fn agrees_outside(&self, other: &Configuration, masked: &[Pid]) -> bool {
        self.memory == other.memory
            && self.machines.len() == other.machines.len()
            && self
                .machines
                .iter()
                .zip(&other.machines)
                .all(|(a, b)| masked.contains(&a.pid) || a == b)
    }
}

/// One step from `config` by `pid`, leaving `config` untouched.
pub fn step_once(
    params: &ProtocolParams,
    config: &Configuration,
    pid: Pid,
    thread: Thread,
) -> Result<(Configuration, Effect)> {
    if config
        .machines
        .get(pid)
        .is_some_and(ProcessMachine::is_halted)
    {
        return Err(Error::Halted { pid });
    }
    let mut next = config.clone();
    let effect = next.apply(params, Activation { pid, thread })?;
    Ok((next, effect))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Activation {
    pub pid: Pid,
    #[serde(default)]
    pub thread: Thread,
}

impl Activation {
    pub fn t1(pid: Pid) -> Self {
        Self {
            pid,
            thread: Thread::T1,
        }
    }

    pub fn t2(pid: Pid) -> Self {
        Self {
            pid,
            thread: Thread::T2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Scripted {
        activations: Vec<Activation>,
    },
    RoundRobin,
    SeededRandom {
        seed: u64,
    },
    /// Random activations for `prefix_len` steps, then only `survivors`.
    EventuallyMBounded {
        seed: u64,
        prefix_len: usize,
        survivors: Vec<Pid>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    #[serde(flatten)]
    pub kind: ScheduleKind,
    #[serde(default = "default_cap")]
    pub step_cap: usize,
    #[serde(default = "default_bias")]
    pub thread_bias: u32,
}

fn default_cap() -> usize {
    DEFAULT_STEP_CAP
}

fn default_bias() -> u32 {
    DEFAULT_THREAD_BIAS
}

impl Schedule {
    pub fn new(kind: ScheduleKind) -> Self {
        Self {
            kind,
            step_cap: DEFAULT_STEP_CAP,
            thread_bias: DEFAULT_THREAD_BIAS,
        }
    }

    pub fn scripted(activations: Vec<Activation>) -> Self {
        Self::new(ScheduleKind::Scripted { activations })
    }

    /// Scripted first-thread activations of the given pids.
    pub fn pids(pids: &[Pid]) -> Self {
        Self::scripted(pids.iter().copied().map(Activation::t1).collect())
    }

    pub fn round_robin() -> Self {
        Self::new(ScheduleKind::RoundRobin)
    }

    pub fn seeded_random(seed: u64) -> Self {
        Self::new(ScheduleKind::SeededRandom { seed })
    }

    pub fn eventually_m_bounded(seed: u64, prefix_len: usize, survivors: Vec<Pid>) -> Self {
        Self::new(ScheduleKind::EventuallyMBounded {
            seed,
            prefix_len,
            survivors,
        })
    }

    pub fn with_cap(mut self, step_cap: usize) -> Self {
        self.step_cap = step_cap;
        self
    }

    pub fn survivors(&self) -> Option<&[Pid]> {
        match &self.kind {
            ScheduleKind::EventuallyMBounded { survivors, .. } => Some(survivors),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match &self.kind {
            ScheduleKind::Scripted { activations } => format!("scripted({})", activations.len()),
            ScheduleKind::RoundRobin => "round_robin".into(),
            ScheduleKind::SeededRandom { seed } => format!("random({seed})"),
            ScheduleKind::EventuallyMBounded {
                seed,
                prefix_len,
                survivors,
            } => format!("m_bounded({seed},{prefix_len},{survivors:?})"),
        }
    }
}

/// Produces activations lazily. Generated kinds only pick processes that
/// have not halted, and stop once none is left to pick.
pub struct Scheduler<'a> {
    schedule: &'a Schedule,
    two_threads: bool,
    position: usize,
    cursor: usize,
    rng: ChaCha8Rng,
    counters: Vec<u32>,
}

impl<'a> Scheduler<'a> {
    pub fn new(schedule: &'a Schedule, params: &ProtocolParams) -> Self {
        let seed = match &schedule.kind {
            ScheduleKind::SeededRandom { seed } | ScheduleKind::EventuallyMBounded { seed, .. } => {
                *seed
            }
            _ => 0,
        };
        Self {
            schedule,
            two_threads: params.two_threads(),
            position: 0,
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            counters: vec![0; params.n],
        }
    }

    fn eligible(&self, config: &Configuration) -> Vec<Pid> {
        let live = |p: &Pid| !config.machines[*p].is_halted();
        match &self.schedule.kind {
            ScheduleKind::EventuallyMBounded {
                prefix_len,
                survivors,
                ..
            } if self.position >= *prefix_len => survivors.iter().copied().filter(live).collect(),
            _ => (0..config.machines.len()).filter(live).collect(),
        }
    }

    /// Whether the schedule has nothing left to do in `config`.
    pub fn is_done(&self, config: &Configuration) -> bool {
        match &self.schedule.kind {
            ScheduleKind::Scripted { activations } => self.position >= activations.len(),
            _ => self.eligible(config).is_empty(),
        }
    }

    fn thread_for(&mut self, pid: Pid) -> Thread {
        let c = self.counters[pid];
        self.counters[pid] += 1;
        let period = self.schedule.thread_bias + 1;
        if self.two_threads && c % period == period - 1 {
            Thread::T2
        } else {
            Thread::T1
        }
    }

    pub fn next(&mut self, config: &Configuration) -> Option<Activation> {
        if self.is_done(config) {
            return None;
        }
        let a = match &self.schedule.kind {
            ScheduleKind::Scripted { activations } => activations[self.position],
            ScheduleKind::RoundRobin => {
                let n = config.machines.len();
                let pid = (0..n)
                    .map(|d| (self.cursor + d) % n)
                    .find(|p| !config.machines[*p].is_halted())?;
                self.cursor = (pid + 1) % n;
                Activation {
                    pid,
                    thread: self.thread_for(pid),
                }
            }
            ScheduleKind::SeededRandom { .. } | ScheduleKind::EventuallyMBounded { .. } => {
                let pool = self.eligible(config);
                let pid = *pool.choose(&mut self.rng)?;
                Activation {
                    pid,
                    thread: self.thread_for(pid),
                }
            }
        };
        self.position += 1;
        Some(a)
    }
}

pub fn run(params: &ProtocolParams, inputs: &[Vec<Value>], schedule: &Schedule) -> Result<Trace> {
    run_from(params, Configuration::initial(params, inputs)?, schedule)
}

/// Runs `schedule` from an arbitrary starting configuration.
pub fn run_from(
    params: &ProtocolParams,
    initial: Configuration,
    schedule: &Schedule,
) -> Result<Trace> {
    let mut config = initial.clone();
    let mut trace = Trace::new(params.clone(), initial);
    let mut scheduler = Scheduler::new(schedule, params);
    while trace.steps.len() < schedule.step_cap {
        let Some(a) = scheduler.next(&config) else {
            break;
        };
        let effect = config.apply(params, a)?;
        let index = trace.steps.len();
        trace.push(Step::from_effect(index, a.pid, a.thread, effect));
    }
    trace.truncated = !scheduler.is_done(&config);
    Ok(trace)
}

/// Replays a trace's activations and returns the configuration it ends in.
pub fn final_configuration(trace: &Trace) -> Result<Configuration> {
    let mut config = trace.initial.clone();
    for step in &trace.steps {
        config.apply(&trace.params, step.activation())?;
    }
    Ok(config)
}

/// `count` schedules that are eventually confined to at most `m` survivors,
/// with varied survivor sets and chaotic prefixes.
pub fn gen_m_bounded_suite(params: &ProtocolParams, count: usize, seed: u64) -> Vec<Schedule> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pids: Vec<Pid> = (0..params.n).collect();
    (0..count)
        .map(|_| {
            let size = rng.gen_range(1..=params.m.min(params.n - 1));
            let mut survivors: Vec<Pid> = pids.choose_multiple(&mut rng, size).copied().collect();
            survivors.sort_unstable();
            let prefix_len = rng.gen_range(0..=40 * params.n);
            Schedule::eventually_m_bounded(rng.gen(), prefix_len, survivors)
        })
        .collect()
}

/// Even slots eventually `m`-bounded, odd slots round-robin.
pub fn gen_mixed_suite(params: &ProtocolParams, count: usize, seed: u64) -> Vec<Schedule> {
    let bounded = gen_m_bounded_suite(params, count.div_ceil(2), seed);
    let mut bounded = bounded.into_iter();
    (0..count)
        .map(|i| {
            if i % 2 == 0 {
                bounded.next().expect("enough bounded schedules")
            } else {
                Schedule::round_robin()
            }
        })
        .collect()
}

/// Uniform inputs from the parameter domain, one per process and instance.
pub fn random_inputs(params: &ProtocolParams, seed: u64) -> Vec<Vec<Value>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..params.n)
        .map(|_| {
            (0..params.s_instances)
                .map(|_| rng.gen_range(0..params.domain))
                .collect()
        })
        .collect()
}

/// Every process proposes its own pid in every instance.
pub fn pid_inputs(params: &ProtocolParams) -> Vec<Vec<Value>> {
    (0..params.n)
        .map(|p| vec![p as Value % params.domain; params.s_instances as usize])
        .collect()
}
