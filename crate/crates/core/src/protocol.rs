//! Per-process step machines for the one-shot, repeated and anonymous
//! agreement protocols.
//!
//! A machine is a plain value. [`ProcessMachine::activate`] applies one
//! scheduler activation: it invokes the next instance if the machine is
//! between operations, then performs exactly one shared-memory primitive and
//! all local computation up to the next one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{
    CollectStatus, Collector, History, Loc, Memory, MemoryModel, Pid, Realization, RegisterValue,
    SnapshotMode, Value,
};

/// Index of the snapshot object `A` in every protocol layout.
pub const SNAPSHOT: usize = 0;
/// Index of the anonymous protocol's `H` register, when present.
pub const HISTORY_REGISTER: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// Pairs `(pref, id)`; one instance per process.
    OneShot,
    /// Tuples `(pref, id, t, history)`; instances run back to back.
    Repeated,
    /// Tuples `(pref, t, history)` with no identifiers, plus the `H` register.
    Anonymous,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::OneShot => "one_shot",
            ProtocolKind::Repeated => "repeated",
            ProtocolKind::Anonymous => "anonymous",
        }
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_shot" | "one-shot" | "oneshot" => Ok(ProtocolKind::OneShot),
            "repeated" => Ok(ProtocolKind::Repeated),
            "anonymous" => Ok(ProtocolKind::Anonymous),
            other => Err(Error::InvalidParams(format!("unknown protocol `{other}`"))),
        }
    }
}

/// Problem and layout parameters shared by every machine of a run.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub kind: ProtocolKind,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// Components of the snapshot object `A`.
    pub components: usize,
    pub s_instances: u32,
    /// Inputs are drawn from `0..domain`.
    pub domain: u32,
    pub snapshot: SnapshotMode,
    /// Whether the anonymous protocol keeps its `H` register.
    pub history_register: bool,
}

impl ProtocolParams {
    /// Parameters with the protocol's own component count, one instance,
    /// atomic snapshots and domain `max(n, k+1)`.
    pub fn new(kind: ProtocolKind, n: usize, m: usize, k: usize) -> Result<Self> {
        if !(1 <= m && m <= k && k < n) {
            return Err(Error::InvalidParams(format!(
                "need 1 <= m <= k < n, got n={n} m={m} k={k}"
            )));
        }
        let components = match kind {
            ProtocolKind::OneShot | ProtocolKind::Repeated => n + 2 * m - k,
            ProtocolKind::Anonymous => (m + 1) * (n - k) + m * m,
        };
        Ok(Self {
            kind,
            n,
            m,
            k,
            components,
            s_instances: 1,
            domain: n.max(k + 1) as u32,
            snapshot: SnapshotMode::Atomic,
            history_register: kind == ProtocolKind::Anonymous,
        })
    }

    /// Overrides the component count. Used for under-provisioned fixtures.
    pub fn with_components(mut self, components: usize) -> Result<Self> {
        if components == 0 {
            return Err(Error::InvalidParams(
                "a snapshot needs at least one component".into(),
            ));
        }
        self.components = components;
        Ok(self)
    }

    pub fn with_instances(mut self, s: u32) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidParams("s_instances must be positive".into()));
        }
        if self.kind == ProtocolKind::OneShot && s != 1 {
            return Err(Error::InvalidParams(
                "the one-shot protocol runs one instance".into(),
            ));
        }
        self.s_instances = s;
        Ok(self)
    }

    pub fn with_domain(mut self, domain: u32) -> Result<Self> {
        if (domain as usize) <= self.k {
            return Err(Error::InvalidParams(format!(
                "domain size {domain} must exceed k={}",
                self.k
            )));
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn with_snapshot(mut self, mode: SnapshotMode) -> Self {
        self.snapshot = mode;
        self
    }

    pub fn with_history_register(mut self, on: bool) -> Result<Self> {
        if on && self.kind != ProtocolKind::Anonymous {
            return Err(Error::InvalidParams(
                "only the anonymous protocol uses H".into(),
            ));
        }
        self.history_register = on;
        Ok(self)
    }

    /// `n + m - k`: processes that may decide freely before the rest are
    /// confined to `m` values.
    pub fn ell(&self) -> usize {
        self.n + self.m - self.k
    }

    /// `⌈(k+1)/m⌉`.
    pub fn c(&self) -> usize {
        (self.k + 1).div_ceil(self.m)
    }

    pub fn two_threads(&self) -> bool {
        self.kind == ProtocolKind::Anonymous && self.history_register
    }

    pub fn memory_model(&self) -> MemoryModel {
        let realization = match self.kind {
            ProtocolKind::OneShot | ProtocolKind::Repeated if self.components > self.n => {
                Realization::SingleWriter { processes: self.n }
            }
            _ => Realization::PerComponent,
        };
        let model =
            MemoryModel::new().with_snapshot("A", self.components, self.snapshot, realization);
        if self.two_threads() {
            model.with_register("H", RegisterValue::Seq { values: vec![] })
        } else {
            model
        }
    }

    pub fn register_budget(&self) -> usize {
        self.memory_model().register_budget()
    }
}

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum Thread {
    #[default]
    T1,
    T2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    /// Never invoked.
    Idle,
    Active,
    /// Finished an instance and has inputs left.
    Decided {
        value: Value,
    },
    /// Finished its last instance.
    Halted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    /// Output from the "at most m distinct entries" branch.
    TDeciding,
    /// Output copied from a history found in memory or already held locally.
    HistoryAdopted,
    /// Output read from `H` by the second thread.
    HAdopted,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Invoke {
        instance: u32,
        input: Value,
    },
    Decide {
        instance: u32,
        value: Value,
        kind: DecisionKind,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "at", rename_all = "snake_case")]
pub enum Pc {
    /// Anonymous invocation: write `history` into `H`.
    WriteHistory,
    Update,
    /// Atomic scan, or a double collect in progress.
    Scan {
        collector: Option<Collector>,
    },
}

/// One shared-memory primitive, as poised or as performed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Primitive {
    Update {
        index: usize,
        value: RegisterValue,
    },
    Scan,
    ReadComponent {
        index: usize,
    },
    Write {
        register: usize,
        value: RegisterValue,
    },
    Read {
        register: usize,
    },
    /// An activation that touches no shared memory.
    Noop,
}

impl Primitive {
    pub fn loc(&self) -> Option<Loc> {
        match self {
            Primitive::Update { index, .. } | Primitive::ReadComponent { index } => {
                Some(Loc::Component {
                    object: SNAPSHOT,
                    index: *index,
                })
            }
            Primitive::Write { register, .. } | Primitive::Read { register } => {
                Some(Loc::Register {
                    register: *register,
                })
            }
            Primitive::Scan | Primitive::Noop => None,
        }
    }

    pub fn is_write(&self) -> bool {
        matches!(self, Primitive::Update { .. } | Primitive::Write { .. })
    }

    pub fn written(&self) -> Option<&RegisterValue> {
        match self {
            Primitive::Update { value, .. } | Primitive::Write { value, .. } => Some(value),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Update { .. } => "update",
            Primitive::Scan => "scan",
            Primitive::ReadComponent { .. } => "read_component",
            Primitive::Write { .. } => "write",
            Primitive::Read { .. } => "read",
            Primitive::Noop => "noop",
        }
    }
}

/// What one activation did.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Effect {
    pub primitive: Option<Primitive>,
    pub scan_result: Option<Vec<RegisterValue>>,
    pub read_result: Option<RegisterValue>,
    pub events: Vec<Event>,
}

impl Effect {
    pub fn primitive(&self) -> &Primitive {
        self.primitive.as_ref().unwrap_or(&Primitive::Noop)
    }

    pub fn decision(&self) -> Option<(u32, Value, DecisionKind)> {
        self.events.iter().find_map(|e| match e {
            Event::Decide {
                instance,
                value,
                kind,
            } => Some((*instance, *value, *kind)),
            _ => None,
        })
    }
}

/// Everything a machine remembers. Anonymous machines are compared on this
/// alone; the pid lives outside it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocalState {
    pub status: Status,
    pub pc: Pc,
    pub pref: Value,
    pub i: usize,
    pub t: u32,
    pub history: History,
    /// Input for instance `t` is `inputs[t-1]`.
    pub inputs: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProcessMachine {
    pub pid: Pid,
    pub local: LocalState,
}

impl ProcessMachine {
    pub fn new(pid: Pid, inputs: Vec<Value>) -> Self {
        Self {
            pid,
            local: LocalState {
                status: Status::Idle,
                pc: Pc::Update,
                pref: inputs.first().copied().unwrap_or(0),
                i: 0,
                t: 0,
                history: Vec::new(),
                inputs,
            },
        }
    }

    /// Builds a machine after checking that its input sequence fits `params`.
    pub fn make(params: &ProtocolParams, pid: Pid, inputs: Vec<Value>) -> Result<Self> {
        if pid >= params.n {
            return Err(Error::InvalidParams(format!(
                "pid {pid} out of range for n={}",
                params.n
            )));
        }
        if inputs.len() < params.s_instances as usize {
            return Err(Error::MissingInput {
                pid,
                instance: inputs.len() as u32 + 1,
            });
        }
        if let Some(v) = inputs.iter().find(|v| **v >= params.domain) {
            return Err(Error::InvalidParams(format!(
                "input {v} of p{pid} outside domain 0..{}",
                params.domain
            )));
        }
        Ok(Self::new(pid, inputs))
    }

    pub fn status(&self) -> Status {
        self.local.status
    }

    pub fn is_halted(&self) -> bool {
        self.local.status == Status::Halted
    }

    pub fn is_active(&self) -> bool {
        self.local.status == Status::Active
    }

    /// Between operations with an input left for the next instance.
    pub fn is_invocable(&self) -> bool {
        matches!(self.local.status, Status::Idle | Status::Decided { .. })
            && (self.local.t as usize) < self.local.inputs.len()
    }

    /// Number of instances this machine has finished.
    pub fn completed(&self) -> u32 {
        match self.local.status {
            Status::Active => self.local.t - 1,
            _ => self.local.t,
        }
    }

    /// Output of instance `t`, once that instance is finished.
    pub fn output(&self, t: u32) -> Option<Value> {
        if t == 0 || t > self.completed() {
            return None;
        }
        self.local.history.get(t as usize - 1).copied()
    }

    /// Starts the next instance. The repeated protocol may finish it on the
    /// spot from its history; the anonymous protocol first writes `H`.
    pub fn invoke(&mut self, params: &ProtocolParams) -> Result<Vec<Event>> {
        match self.local.status {
            Status::Active => return Err(Error::NotIdle { pid: self.pid }),
            Status::Halted if params.kind == ProtocolKind::OneShot => {
                return Err(Error::OneShot { pid: self.pid })
            }
            Status::Halted => return Err(Error::Halted { pid: self.pid }),
            Status::Idle | Status::Decided { .. } => {}
        }
        let l = &mut self.local;
        let instance = l.t + 1;
        let input = *l.inputs.get(l.t as usize).ok_or(Error::MissingInput {
            pid: self.pid,
            instance,
        })?;
        l.t = instance;
        l.status = Status::Active;
        let mut events = vec![Event::Invoke { instance, input }];
        match params.kind {
            ProtocolKind::OneShot => {
                l.pref = input;
                l.i = 0;
                l.pc = Pc::Update;
            }
            ProtocolKind::Repeated => {
                if l.history.len() >= instance as usize {
                    let w = l.history[instance as usize - 1];
                    events.push(self.finish(w, DecisionKind::HistoryAdopted, params));
                } else {
                    l.pref = input;
                    l.pc = Pc::Update;
                }
            }
            ProtocolKind::Anonymous => {
                l.pref = input;
                l.pc = if params.history_register {
                    Pc::WriteHistory
                } else {
                    Pc::Update
                };
                if !params.history_register {
                    self.check_history(&mut events, params);
                }
            }
        }
        Ok(events)
    }

    /// The primitive the next activation of `thread` would perform.
    pub fn poised(&self, params: &ProtocolParams, thread: Thread) -> Primitive {
        match self.local.status {
            Status::Halted => Primitive::Noop,
            Status::Idle | Status::Decided { .. } => {
                let mut probe = self.clone();
                match probe.invoke(params) {
                    Ok(_) if probe.is_active() => probe.poised(params, thread),
                    _ => Primitive::Noop,
                }
            }
            Status::Active => {
                let l = &self.local;
                if thread == Thread::T2 && params.two_threads() && l.pc != Pc::WriteHistory {
                    return Primitive::Read {
                        register: HISTORY_REGISTER,
                    };
                }
                match &l.pc {
                    Pc::WriteHistory => Primitive::Write {
                        register: HISTORY_REGISTER,
                        value: RegisterValue::Seq {
                            values: l.history.clone(),
                        },
                    },
                    Pc::Update => Primitive::Update {
                        index: l.i,
                        value: self.entry(params),
                    },
                    Pc::Scan { collector } => match params.snapshot {
                        SnapshotMode::Atomic => Primitive::Scan,
                        SnapshotMode::DoubleCollect => Primitive::ReadComponent {
                            index: collector.as_ref().map_or(0, Collector::next_index),
                        },
                    },
                }
            }
        }
    }

    /// One scheduler activation: invokes if between operations, then takes
    /// a step if still active. A halted machine yields an empty effect.
    pub fn activate(
        &mut self,
        memory: &mut Memory,
        params: &ProtocolParams,
        thread: Thread,
    ) -> Result<Effect> {
        if thread == Thread::T2 && params.kind != ProtocolKind::Anonymous {
            return Err(Error::SingleThreaded { pid: self.pid });
        }
        if self.is_halted() {
            return Ok(Effect::default());
        }
        let mut events = Vec::new();
        if !self.is_active() {
            events = self.invoke(params)?;
            if !self.is_active() {
                return Ok(Effect {
                    primitive: Some(Primitive::Noop),
                    events,
                    ..Effect::default()
                });
            }
        }
        let mut effect = self.step(memory, params, thread)?;
        events.append(&mut effect.events);
        effect.events = events;
        Ok(effect)
    }

    /// One step of an active machine.
    pub fn step(
        &mut self,
        memory: &mut Memory,
        params: &ProtocolParams,
        thread: Thread,
    ) -> Result<Effect> {
        match self.local.status {
            Status::Active => {}
            Status::Halted => return Err(Error::Halted { pid: self.pid }),
            _ => return Err(Error::Precondition(format!("p{} is not active", self.pid))),
        }
        if thread == Thread::T2 {
            if params.kind != ProtocolKind::Anonymous {
                return Err(Error::SingleThreaded { pid: self.pid });
            }
            if params.history_register && self.local.pc != Pc::WriteHistory {
                return self.read_h(memory, params);
            }
        }
        let mut effect = Effect::default();
        match self.local.pc.clone() {
            Pc::WriteHistory => {
                let value = RegisterValue::Seq {
                    values: self.local.history.clone(),
                };
                memory.write_in_place(HISTORY_REGISTER, value.clone())?;
                effect.primitive = Some(Primitive::Write {
                    register: HISTORY_REGISTER,
                    value,
                });
                self.local.pc = Pc::Update;
                self.check_history(&mut effect.events, params);
            }
            Pc::Update => {
                let value = self.entry(params);
                let index = self.local.i;
                memory.update_in_place(SNAPSHOT, index, value.clone())?;
                effect.primitive = Some(Primitive::Update { index, value });
                self.local.pc = Pc::Scan { collector: None };
            }
            Pc::Scan { collector } => match params.snapshot {
                SnapshotMode::Atomic => {
                    let s = memory.scan_at(SNAPSHOT)?;
                    effect.primitive = Some(Primitive::Scan);
                    effect.scan_result = Some(s.clone());
                    self.local.pc = Pc::Update;
                    self.on_scan(s, params, &mut effect.events);
                }
                SnapshotMode::DoubleCollect => {
                    let mut c = collector.unwrap_or_else(|| Collector::new(SNAPSHOT));
                    let index = c.next_index();
                    let (value, version) = memory.read_component(SNAPSHOT, index)?;
                    effect.primitive = Some(Primitive::ReadComponent { index });
                    effect.read_result = Some(value.clone());
                    match c.absorb((value, version), params.components) {
                        CollectStatus::InProgress => {
                            self.local.pc = Pc::Scan { collector: Some(c) };
                        }
                        CollectStatus::Done(s) => {
                            effect.scan_result = Some(s.clone());
                            self.local.pc = Pc::Update;
                            self.on_scan(s, params, &mut effect.events);
                        }
                    }
                }
            },
        }
        Ok(effect)
    }

    /// The entry this machine writes into `A`.
    fn entry(&self, params: &ProtocolParams) -> RegisterValue {
        let l = &self.local;
        match params.kind {
            ProtocolKind::OneShot => RegisterValue::Pair {
                value: l.pref,
                id: self.pid,
            },
            ProtocolKind::Repeated => RegisterValue::Tuple {
                value: l.pref,
                id: self.pid,
                instance: l.t,
                history: l.history.clone(),
            },
            ProtocolKind::Anonymous => RegisterValue::Anon {
                value: l.pref,
                instance: l.t,
                history: l.history.clone(),
            },
        }
    }

    fn finish(&mut self, value: Value, kind: DecisionKind, params: &ProtocolParams) -> Event {
        let l = &mut self.local;
        let more = params.kind != ProtocolKind::OneShot && (l.t as usize) < l.inputs.len();
        l.status = if more {
            Status::Decided { value }
        } else {
            Status::Halted
        };
        l.pc = Pc::Update;
        Event::Decide {
            instance: l.t,
            value,
            kind,
        }
    }

    fn check_history(&mut self, events: &mut Vec<Event>, params: &ProtocolParams) {
        let t = self.local.t as usize;
        if self.local.history.len() >= t {
            let w = self.local.history[t - 1];
            events.push(self.finish(w, DecisionKind::HistoryAdopted, params));
        }
    }

    fn read_h(&mut self, memory: &Memory, params: &ProtocolParams) -> Result<Effect> {
        let h = memory.read_at(HISTORY_REGISTER)?;
        let mut effect = Effect {
            primitive: Some(Primitive::Read {
                register: HISTORY_REGISTER,
            }),
            read_result: Some(h.clone()),
            ..Effect::default()
        };
        let t = self.local.t as usize;
        if let Some(&w) = h.history().and_then(|values| values.get(t - 1)) {
            self.local.history.push(w);
            effect
                .events
                .push(self.finish(w, DecisionKind::HAdopted, params));
        }
        Ok(effect)
    }

    fn on_scan(&mut self, s: Vec<RegisterValue>, params: &ProtocolParams, events: &mut Vec<Event>) {
        match params.kind {
            ProtocolKind::OneShot => self.on_scan_one_shot(&s, params, events),
            ProtocolKind::Repeated => self.on_scan_repeated(&s, params, events),
            ProtocolKind::Anonymous => self.on_scan_anonymous(&s, params, events),
        }
    }

    fn on_scan_one_shot(
        &mut self,
        s: &[RegisterValue],
        params: &ProtocolParams,
        events: &mut Vec<Event>,
    ) {
        let r = s.len();
        if s.iter().all(|x| !x.is_bot()) && distinct(s) <= params.m {
            let j1 = first_duplicate(s, |_| true).unwrap_or(0);
            let w = s[j1].value().expect("non-bot entry");
            self.local.history.push(w);
            events.push(self.finish(w, DecisionKind::TDeciding, params));
            return;
        }
        let own = self.entry(params);
        let i = self.local.i;
        let others_ok = (0..r)
            .filter(|&j| j != i)
            .all(|j| !s[j].is_bot() && s[j] != own);
        if others_ok {
            // The index stays put only when the preference actually changes;
            // re-adopting the current value would rewrite one slot forever.
            let w = first_duplicate(s, |_| true).and_then(|j1| s[j1].value());
            if let Some(w) = w.filter(|&w| w != self.local.pref) {
                self.local.pref = w;
                return;
            }
        }
        self.local.i = (i + 1) % r;
    }

    fn on_scan_repeated(
        &mut self,
        s: &[RegisterValue],
        params: &ProtocolParams,
        events: &mut Vec<Event>,
    ) {
        let r = s.len();
        let t = self.local.t;
        let ahead = s.iter().find_map(|x| match x {
            RegisterValue::Tuple {
                instance, history, ..
            } if *instance > t => Some(history.clone()),
            _ => None,
        });
        if let Some(his) = ahead {
            let w = his[t as usize - 1];
            self.local.history = his;
            events.push(self.finish(w, DecisionKind::HistoryAdopted, params));
            return;
        }
        let current = |x: &RegisterValue| x.instance() == Some(t);
        if s.iter().all(current) && distinct(s) <= params.m {
            let j1 = first_duplicate(s, |_| true).unwrap_or(0);
            let w = s[j1].value().expect("tuple");
            self.local.history.push(w);
            events.push(self.finish(w, DecisionKind::TDeciding, params));
            return;
        }
        // Lower-instance entries count as ⊥ here.
        let own = self.entry(params);
        let i = self.local.i;
        let others_ok = (0..r)
            .filter(|&j| j != i)
            .all(|j| current(&s[j]) && s[j] != own);
        if others_ok {
            let w = first_duplicate(s, current).and_then(|j1| s[j1].value());
            if let Some(w) = w.filter(|&w| w != self.local.pref) {
                self.local.pref = w;
                return;
            }
        }
        self.local.i = (i + 1) % r;
    }

    fn on_scan_anonymous(
        &mut self,
        s: &[RegisterValue],
        params: &ProtocolParams,
        events: &mut Vec<Event>,
    ) {
        let r = s.len();
        let t = self.local.t;
        let ahead = s.iter().find_map(|x| match x {
            RegisterValue::Anon {
                instance, history, ..
            } if *instance > t => Some(history.clone()),
            _ => None,
        });
        if let Some(his) = ahead {
            let w = his[t as usize - 1];
            self.local.history = his;
            events.push(self.finish(w, DecisionKind::HistoryAdopted, params));
            return;
        }
        let mut counts: BTreeMap<Value, usize> = BTreeMap::new();
        for x in s {
            if x.instance() == Some(t) {
                *counts.entry(x.value().expect("tuple")).or_default() += 1;
            }
        }
        let all_current = s.iter().all(|x| x.instance() == Some(t));
        if all_current && distinct(s) <= params.m {
            let w = most_frequent(&counts, 0).expect("non-empty scan");
            self.local.history.push(w);
            events.push(self.finish(w, DecisionKind::TDeciding, params));
            return;
        }
        let ell = params.ell();
        let own = counts.get(&self.local.pref).copied().unwrap_or(0);
        if own < ell {
            if let Some(new) = most_frequent(&counts, ell) {
                self.local.pref = new;
            }
        }
        self.local.i = (self.local.i + 1) % r;
    }
}

/// Number of distinct entries in a scan.
pub fn distinct(s: &[RegisterValue]) -> usize {
    let mut seen: Vec<&RegisterValue> = Vec::with_capacity(s.len());
    for x in s {
        if !seen.contains(&x) {
            seen.push(x);
        }
    }
    seen.len()
}

/// Smallest `j1` such that some later `j2` holds an equal entry, among
/// entries accepted by `keep`.
pub fn first_duplicate(
    s: &[RegisterValue],
    keep: impl Fn(&RegisterValue) -> bool,
) -> Option<usize> {
    (0..s.len()).find(|&j1| keep(&s[j1]) && s[j1 + 1..].contains(&s[j1]))
}

/// Value with the highest count, at least `floor`; ties go to the smaller
/// value.
fn most_frequent(counts: &BTreeMap<Value, usize>, floor: usize) -> Option<Value> {
    let mut best: Option<(Value, usize)> = None;
    for (&v, &c) in counts {
        if c >= floor && best.is_none_or(|(_, bc)| c > bc) {
            best = Some((v, c));
        }
    }
    best.map(|(v, _)| v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn setup(params: &ProtocolParams) -> Memory {
        Arc::new(params.memory_model()).initial_memory()
    }

    fn pair(value: Value, id: Pid) -> RegisterValue {
        RegisterValue::Pair { value, id }
    }

    #[test]
    fn component_counts() {
        let p = ProtocolParams::new(ProtocolKind::OneShot, 5, 1, 3).unwrap();
        assert_eq!(p.components, 4);
        assert_eq!(p.register_budget(), 4);
        let p = ProtocolParams::new(ProtocolKind::OneShot, 6, 2, 3).unwrap();
        assert_eq!(p.components, 7);
        assert_eq!(p.register_budget(), 6);
        let p = ProtocolParams::new(ProtocolKind::Anonymous, 4, 1, 2).unwrap();
        assert_eq!(p.components, 5);
        assert_eq!(p.register_budget(), 6);
        assert!(ProtocolParams::new(ProtocolKind::OneShot, 3, 2, 1).is_err());
        assert!(ProtocolParams::new(ProtocolKind::OneShot, 3, 1, 3).is_err());
        assert!(ProtocolParams::new(ProtocolKind::OneShot, 3, 0, 1).is_err());
    }

    #[test]
    fn two_process_solo_run() {
        let params = ProtocolParams::new(ProtocolKind::OneShot, 2, 1, 1)
            .unwrap()
            .with_components(2)
            .unwrap();
        let mut mem = setup(&params);
        let mut p = ProcessMachine::make(&params, 1, vec![0]).unwrap();
        let e = p.activate(&mut mem, &params, Thread::T1).unwrap();
        assert_eq!(
            e.primitive(),
            &Primitive::Update {
                index: 0,
                value: pair(0, 1)
            }
        );
        let e = p.activate(&mut mem, &params, Thread::T1).unwrap();
        assert_eq!(e.scan_result, Some(vec![pair(0, 1), RegisterValue::Bot]));
        assert!(e.decision().is_none());
        let e = p.activate(&mut mem, &params, Thread::T1).unwrap();
        assert_eq!(
            e.primitive(),
            &Primitive::Update {
                index: 1,
                value: pair(0, 1)
            }
        );
        let e = p.activate(&mut mem, &params, Thread::T1).unwrap();
        assert_eq!(e.scan_result, Some(vec![pair(0, 1), pair(0, 1)]));
        assert_eq!(e.decision(), Some((1, 0, DecisionKind::TDeciding)));
        assert!(p.is_halted());
        assert_eq!(p.output(1), Some(0));
    }

    #[test]
    fn one_shot_adopts_duplicated_pair() {
        let params = ProtocolParams::new(ProtocolKind::OneShot, 3, 1, 2).unwrap();
        assert_eq!(params.components, 3);
        let mut p = ProcessMachine::make(&params, 1, vec![0]).unwrap();
        let mut mem = setup(&params);
        p.activate(&mut mem, &params, Thread::T1).unwrap();
        let mut events = Vec::new();
        p.on_scan(
            vec![pair(0, 1), pair(1, 2), pair(1, 2)],
            &params,
            &mut events,
        );
        // two distinct pairs exceed m=1, so no decision
        assert!(events.is_empty());
        assert_eq!(p.local.pref, 1);
        assert_eq!(p.local.i, 0);
    }

    #[test]
    fn one_shot_advances_when_own_pair_seen_elsewhere() {
        let params = ProtocolParams::new(ProtocolKind::OneShot, 3, 1, 2).unwrap();
        let mut p = ProcessMachine::make(&params, 1, vec![0]).unwrap();
        let mut mem = setup(&params);
        p.activate(&mut mem, &params, Thread::T1).unwrap();
        let mut events = Vec::new();
        p.on_scan(
            vec![pair(0, 1), pair(0, 1), pair(1, 2)],
            &params,
            &mut events,
        );
        assert_eq!(p.local.pref, 0);
        assert_eq!(p.local.i, 1);
    }

    #[test]
    fn readopting_own_value_still_advances() {
        let params = ProtocolParams::new(ProtocolKind::OneShot, 4, 1, 1).unwrap();
        assert_eq!(params.components, 5);
        let mut mem = setup(&params);
        for (j, x) in [
            pair(0, 2),
            pair(0, 2),
            pair(0, 1),
            RegisterValue::Bot,
            pair(0, 2),
        ]
        .into_iter()
        .enumerate()
        {
            mem.update_in_place(SNAPSHOT, j, x).unwrap();
        }
        let mut p = ProcessMachine::make(&params, 0, vec![0]).unwrap();
        p.invoke(&params).unwrap();
        p.local.i = 3;
        // alone, p must finish: the duplicated pair carries its own value
        for _ in 0..4 * params.components {
            if p.is_halted() {
                break;
            }
            p.activate(&mut mem, &params, Thread::T1).unwrap();
        }
        assert_eq!(p.output(1), Some(0));
    }

    #[test]
    fn one_shot_cannot_be_invoked_twice() {
        let params = ProtocolParams::new(ProtocolKind::OneShot, 2, 1, 1).unwrap();
        let mut mem = setup(&params);
        let mut p = ProcessMachine::make(&params, 0, vec![1]).unwrap();
        while !p.is_halted() {
            p.activate(&mut mem, &params, Thread::T1).unwrap();
        }
        assert_eq!(p.invoke(&params), Err(Error::OneShot { pid: 0 }));
        assert_eq!(
            p.step(&mut mem, &params, Thread::T1),
            Err(Error::Halted { pid: 0 })
        );
    }

    #[test]
    fn repeated_invoke_reuses_history() {
        let params = ProtocolParams::new(ProtocolKind::Repeated, 2, 1, 1)
            .unwrap()
            .with_instances(2)
            .unwrap();
        let mut p = ProcessMachine::make(&params, 0, vec![0, 0]).unwrap();
        p.local.history = vec![1, 1];
        let events = p.invoke(&params).unwrap();
        assert_eq!(
            events[1],
            Event::Decide {
                instance: 1,
                value: 1,
                kind: DecisionKind::HistoryAdopted
            }
        );
        assert_eq!(p.status(), Status::Decided { value: 1 });
    }

    #[test]
    fn repeated_adopts_history_of_later_instance() {
        let params = ProtocolParams::new(ProtocolKind::Repeated, 3, 1, 1)
            .unwrap()
            .with_instances(3)
            .unwrap();
        let mut mem = setup(&params);
        let mut p = ProcessMachine::make(&params, 0, vec![0, 0, 0]).unwrap();
        p.activate(&mut mem, &params, Thread::T1).unwrap();
        let ahead = RegisterValue::Tuple {
            value: 2,
            id: 2,
            instance: 3,
            history: vec![2, 1],
        };
        let mut events = Vec::new();
        p.on_scan(
            vec![RegisterValue::Bot, ahead.clone(), RegisterValue::Bot],
            &params,
            &mut events,
        );
        assert_eq!(
            events,
            vec![Event::Decide {
                instance: 1,
                value: 2,
                kind: DecisionKind::HistoryAdopted
            }]
        );
        assert_eq!(p.local.history, vec![2, 1]);
        // instance 2 completes without touching memory
        let e = p.activate(&mut mem, &params, Thread::T1).unwrap();
        assert_eq!(e.primitive(), &Primitive::Noop);
        assert_eq!(e.decision(), Some((2, 1, DecisionKind::HistoryAdopted)));
    }

    #[test]
    fn repeated_treats_older_instances_as_bot() {
        let params = ProtocolParams::new(ProtocolKind::Repeated, 3, 1, 2)
            .unwrap()
            .with_instances(2)
            .unwrap();
        let mut p = ProcessMachine::make(&params, 0, vec![0, 0]).unwrap();
        p.local.t = 2;
        p.local.history = vec![0];
        p.local.status = Status::Active;
        let old = RegisterValue::Tuple {
            value: 1,
            id: 1,
            instance: 1,
            history: vec![],
        };
        let cur = RegisterValue::Tuple {
            value: 2,
            id: 2,
            instance: 2,
            history: vec![0],
        };
        let mut events = Vec::new();
        p.on_scan(
            vec![cur.clone(), old.clone(), cur.clone()],
            &params,
            &mut events,
        );
        assert!(events.is_empty());
        assert_eq!(p.local.pref, 0);
        assert_eq!(p.local.i, 1);
    }

    #[test]
    fn anonymous_invoke_writes_history_first() {
        let params = ProtocolParams::new(ProtocolKind::Anonymous, 4, 1, 2).unwrap();
        let mut mem = setup(&params);
        let mut p = ProcessMachine::make(&params, 3, vec![1]).unwrap();
        let e = p.activate(&mut mem, &params, Thread::T1).unwrap();
        assert_eq!(
            e.primitive(),
            &Primitive::Write {
                register: HISTORY_REGISTER,
                value: RegisterValue::Seq { values: vec![] }
            }
        );
        assert_eq!(
            e.events,
            vec![Event::Invoke {
                instance: 1,
                input: 1
            }]
        );
        assert_eq!(
            p.poised(&params, Thread::T2),
            Primitive::Read { register: 0 }
        );
    }

    #[test]
    fn anonymous_tie_goes_to_smaller_value() {
        let params = ProtocolParams::new(ProtocolKind::Anonymous, 4, 2, 2).unwrap();
        assert_eq!(params.components, 10);
        let mut p = ProcessMachine::make(&params, 0, vec![3]).unwrap();
        p.local.t = 1;
        p.local.status = Status::Active;
        let s: Vec<_> = (0..10)
            .map(|j| RegisterValue::Anon {
                value: if j < 5 { 4 } else { 2 },
                instance: 1,
                history: vec![],
            })
            .collect();
        let mut events = Vec::new();
        p.on_scan(s, &params, &mut events);
        assert_eq!(
            events,
            vec![Event::Decide {
                instance: 1,
                value: 2,
                kind: DecisionKind::TDeciding
            }]
        );
    }

    #[test]
    fn anonymous_second_thread_reads_h() {
        let params = ProtocolParams::new(ProtocolKind::Anonymous, 3, 1, 1)
            .unwrap()
            .with_instances(2)
            .unwrap();
        let mut mem = setup(&params);
        let mut p = ProcessMachine::make(&params, 1, vec![0, 0]).unwrap();
        p.activate(&mut mem, &params, Thread::T1).unwrap();
        let e = p.activate(&mut mem, &params, Thread::T2).unwrap();
        assert_eq!(e.read_result, Some(RegisterValue::Seq { values: vec![] }));
        assert!(e.decision().is_none());
        mem.write_in_place(HISTORY_REGISTER, RegisterValue::Seq { values: vec![2, 0] })
            .unwrap();
        let e = p.activate(&mut mem, &params, Thread::T2).unwrap();
        assert_eq!(e.decision(), Some((1, 2, DecisionKind::HAdopted)));
        assert_eq!(p.local.history, vec![2]);
    }

    #[test]
    fn single_threaded_protocols_reject_t2() {
        let params = ProtocolParams::new(ProtocolKind::Repeated, 2, 1, 1).unwrap();
        let mut mem = setup(&params);
        let mut p = ProcessMachine::make(&params, 0, vec![0]).unwrap();
        assert_eq!(
            p.activate(&mut mem, &params, Thread::T2),
            Err(Error::SingleThreaded { pid: 0 })
        );
    }

    #[test]
    fn poised_matches_performed_primitive() {
        let params = ProtocolParams::new(ProtocolKind::Repeated, 3, 1, 1)
            .unwrap()
            .with_instances(2)
            .unwrap();
        let mut mem = setup(&params);
        let mut p = ProcessMachine::make(&params, 2, vec![1, 2]).unwrap();
        for _ in 0..20 {
            if p.is_halted() {
                break;
            }
            let expected = p.poised(&params, Thread::T1);
            let e = p.activate(&mut mem, &params, Thread::T1).unwrap();
            assert_eq!(e.primitive(), &expected);
        }
    }
}
