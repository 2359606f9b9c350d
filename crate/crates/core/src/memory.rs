//! Shared memory: multi-writer registers and `r`-component snapshot objects.
//!
//! Every operation here is a pure function of the memory it is given. The
//! `_in_place` variants exist for the execution engine, which owns its
//! configuration and would otherwise clone it on every step.
//!
//! A snapshot object comes in two flavours. [`SnapshotMode::Atomic`] objects
//! support a single-step [`Memory::scan`]. [`SnapshotMode::DoubleCollect`]
//! objects only expose per-component reads; a scan is assembled from them by a
//! [`Collector`], which keeps reading until two consecutive collects agree.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An input or output value of set agreement. Domains are small ordered sets
/// `0..domain`.
pub type Value = u32;

/// Process index, `0..n`.
pub type Pid = usize;

/// Sequence of values output in completed instances.
pub type History = Vec<Value>;

/// Contents of one register or snapshot component.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegisterValue {
    /// Initial contents of every snapshot component.
    Bot,
    /// `(pref, id)` written by the one-shot protocol.
    Pair { value: Value, id: Pid },
    /// `(pref, id, t, history)` written by the repeated protocol.
    Tuple {
        value: Value,
        id: Pid,
        instance: u32,
        history: History,
    },
    /// `(pref, t, history)` written by the anonymous protocol.
    Anon {
        value: Value,
        instance: u32,
        history: History,
    },
    /// A bare value sequence, as stored in the anonymous protocol's `H`.
    Seq { values: History },
}

impl RegisterValue {
    pub fn is_bot(&self) -> bool {
        matches!(self, RegisterValue::Bot)
    }

    /// The proposed value carried by a pair or tuple.
    pub fn value(&self) -> Option<Value> {
        match self {
            RegisterValue::Pair { value, .. }
            | RegisterValue::Tuple { value, .. }
            | RegisterValue::Anon { value, .. } => Some(*value),
            _ => None,
        }
    }

    /// Writer identifier, if the value carries one.
    pub fn id(&self) -> Option<Pid> {
        match self {
            RegisterValue::Pair { id, .. } | RegisterValue::Tuple { id, .. } => Some(*id),
            _ => None,
        }
    }

    /// Instance tag of a repeated-protocol tuple.
    pub fn instance(&self) -> Option<u32> {
        match self {
            RegisterValue::Tuple { instance, .. } | RegisterValue::Anon { instance, .. } => {
                Some(*instance)
            }
            _ => None,
        }
    }

    pub fn history(&self) -> Option<&[Value]> {
        match self {
            RegisterValue::Tuple { history, .. } | RegisterValue::Anon { history, .. } => {
                Some(history)
            }
            RegisterValue::Seq { values } => Some(values),
            _ => None,
        }
    }
}

impl fmt::Display for RegisterValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegisterValue::Bot => write!(f, "⊥"),
            RegisterValue::Pair { value, id } => write!(f, "({value},p{id})"),
            RegisterValue::Tuple {
                value,
                id,
                instance,
                history,
            } => write!(f, "({value},p{id},{instance},{history:?})"),
            RegisterValue::Anon {
                value,
                instance,
                history,
            } => write!(f, "({value},{instance},{history:?})"),
            RegisterValue::Seq { values } => write!(f, "{values:?}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotMode {
    #[default]
    Atomic,
    DoubleCollect,
}

/// How a snapshot object is charged against the register budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Realization {
    /// One multi-writer register per component.
    PerComponent,
    /// One single-writer register per process, each holding its owner's
    /// latest updates. Used when the object has more components than there
    /// are processes.
    SingleWriter { processes: usize },
}

impl Realization {
    fn registers(self, components: usize) -> usize {
        match self {
            Realization::PerComponent => components,
            Realization::SingleWriter { processes } => processes,
        }
    }
}

/// A shared memory location: one snapshot component or one plain register.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "loc", rename_all = "snake_case")]
pub enum Loc {
    Component { object: usize, index: usize },
    Register { register: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SnapshotSpec {
    pub name: String,
    pub components: usize,
    pub mode: SnapshotMode,
    pub realization: Realization,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegisterSpec {
    pub name: String,
    pub initial: RegisterValue,
}

/// Static layout of shared memory: which objects exist, their sizes and
/// their initial contents.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct MemoryModel {
    pub snapshots: Vec<SnapshotSpec>,
    pub registers: Vec<RegisterSpec>,
}

impl MemoryModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_snapshot(
        mut self,
        name: &str,
        components: usize,
        mode: SnapshotMode,
        realization: Realization,
    ) -> Self {
        self.snapshots.push(SnapshotSpec {
            name: name.to_string(),
            components,
            mode,
            realization,
        });
        self
    }

    pub fn with_register(mut self, name: &str, initial: RegisterValue) -> Self {
        self.registers.push(RegisterSpec {
            name: name.to_string(),
            initial,
        });
        self
    }

    /// Number of registers the layout is charged for: the realized register
    /// count of every snapshot object plus every plain register.
    pub fn register_budget(&self) -> usize {
        self.snapshot_registers() + self.registers.len()
    }

    pub fn snapshot_registers(&self) -> usize {
        self.snapshots
            .iter()
            .map(|s| s.realization.registers(s.components))
            .sum()
    }

    pub fn snapshot_index(&self, name: &str) -> Result<usize> {
        self.snapshots
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownObject(name.to_string()))
    }

    pub fn register_index(&self, name: &str) -> Result<usize> {
        self.registers
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::UnknownRegister(name.to_string()))
    }

    /// Physical register a write to `loc` by `writer` lands in, numbered
    /// `0..register_budget()`.
    pub fn register_of(&self, loc: Loc, writer: Pid) -> usize {
        match loc {
            Loc::Component { object, index } => {
                let base: usize = self.snapshots[..object]
                    .iter()
                    .map(|s| s.realization.registers(s.components))
                    .sum();
                match self.snapshots[object].realization {
                    Realization::PerComponent => base + index,
                    Realization::SingleWriter { .. } => base + writer,
                }
            }
            Loc::Register { register } => self.snapshot_registers() + register,
        }
    }

    pub fn loc_name(&self, loc: Loc) -> String {
        match loc {
            Loc::Component { object, index } => {
                format!("{}[{index}]", self.snapshots[object].name)
            }
            Loc::Register { register } => self.registers[register].name.clone(),
        }
    }

    /// All locations in layout order.
    pub fn locations(&self) -> Vec<Loc> {
        let mut out = Vec::new();
        for (object, s) in self.snapshots.iter().enumerate() {
            out.extend((0..s.components).map(|index| Loc::Component { object, index }));
        }
        out.extend((0..self.registers.len()).map(|register| Loc::Register { register }));
        out
    }

    pub fn initial_memory(self: &Arc<Self>) -> Memory {
        Memory {
            model: Arc::clone(self),
            snapshots: self
                .snapshots
                .iter()
                .map(|s| SnapshotObject::new(s.mode, s.components))
                .collect(),
            registers: self.registers.iter().map(|r| r.initial.clone()).collect(),
        }
    }
}

/// A fixed-length vector of components. Double-collect objects additionally
/// keep a per-component write counter so that two collects can be compared
/// without being fooled by a value being rewritten in between.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SnapshotObject {
    mode: SnapshotMode,
    components: Vec<RegisterValue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    versions: Vec<u64>,
}

impl SnapshotObject {
    pub fn new(mode: SnapshotMode, components: usize) -> Self {
        let versions = match mode {
            SnapshotMode::Atomic => Vec::new(),
            SnapshotMode::DoubleCollect => vec![0; components],
        };
        Self {
            mode,
            components: vec![RegisterValue::Bot; components],
            versions,
        }
    }

    pub fn mode(&self) -> SnapshotMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[RegisterValue] {
        &self.components
    }

    fn version(&self, index: usize) -> u64 {
        self.versions.get(index).copied().unwrap_or(0)
    }
}

/// The shared part of a configuration.
#[derive(Clone, Serialize, Deserialize)]
pub struct Memory {
    #[serde(skip, default)]
    model: Arc<MemoryModel>,
    snapshots: Vec<SnapshotObject>,
    registers: Vec<RegisterValue>,
}

impl PartialEq for Memory {
    fn eq(&self, other: &Self) -> bool {
        self.snapshots == other.snapshots && self.registers == other.registers
    }
}

impl Eq for Memory {}

impl std::hash::Hash for Memory {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.snapshots.hash(state);
        self.registers.hash(state);
    }
}

impl fmt::Debug for Memory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_map();
        for (spec, obj) in self.model.snapshots.iter().zip(&self.snapshots) {
            d.entry(&spec.name, &obj.components);
        }
        for (spec, v) in self.model.registers.iter().zip(&self.registers) {
            d.entry(&spec.name, v);
        }
        d.finish()
    }
}

impl Memory {
    pub fn model(&self) -> &Arc<MemoryModel> {
        &self.model
    }

    /// Reattaches the layout after deserialization.
    pub fn with_model(mut self, model: Arc<MemoryModel>) -> Self {
        self.model = model;
        self
    }

    pub fn snapshot(&self, object: usize) -> &SnapshotObject {
        &self.snapshots[object]
    }

    pub fn register(&self, register: usize) -> &RegisterValue {
        &self.registers[register]
    }

    /// Current contents of a location.
    pub fn get(&self, loc: Loc) -> &RegisterValue {
        match loc {
            Loc::Component { object, index } => &self.snapshots[object].components[index],
            Loc::Register { register } => &self.registers[register],
        }
    }

    fn object_name(&self, object: usize) -> String {
        self.model
            .snapshots
            .get(object)
            .map(|s| s.name.clone())
            .unwrap_or_else(|| format!("#{object}"))
    }

    /// Writes `value` to component `index`.
    pub fn update_in_place(
        &mut self,
        object: usize,
        index: usize,
        value: RegisterValue,
    ) -> Result<()> {
        let name = self.object_name(object);
        let obj = self
            .snapshots
            .get_mut(object)
            .ok_or_else(|| Error::UnknownObject(name.clone()))?;
        if index >= obj.components.len() {
            return Err(Error::ComponentOutOfRange {
                object: name,
                index,
                len: obj.components.len(),
            });
        }
        obj.components[index] = value;
        if obj.mode == SnapshotMode::DoubleCollect {
            obj.versions[index] += 1;
        }
        Ok(())
    }

    /// Atomic scan by index.
    pub fn scan_at(&self, object: usize) -> Result<Vec<RegisterValue>> {
        let obj = self
            .snapshots
            .get(object)
            .ok_or_else(|| Error::UnknownObject(self.object_name(object)))?;
        if obj.mode != SnapshotMode::Atomic {
            return Err(Error::NotAtomic(self.object_name(object)));
        }
        Ok(obj.components.clone())
    }

    /// One atomic read of one component, with its write counter.
    pub fn read_component(&self, object: usize, index: usize) -> Result<(RegisterValue, u64)> {
        let obj = self
            .snapshots
            .get(object)
            .ok_or_else(|| Error::UnknownObject(self.object_name(object)))?;
        let value = obj
            .components
            .get(index)
            .ok_or_else(|| Error::ComponentOutOfRange {
                object: self.object_name(object),
                index,
                len: obj.components.len(),
            })?;
        Ok((value.clone(), obj.version(index)))
    }

    pub fn write_in_place(&mut self, register: usize, value: RegisterValue) -> Result<()> {
        match self.registers.get_mut(register) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(Error::UnknownRegister(format!("#{register}"))),
        }
    }

    pub fn read_at(&self, register: usize) -> Result<RegisterValue> {
        self.registers
            .get(register)
            .cloned()
            .ok_or_else(|| Error::UnknownRegister(format!("#{register}")))
    }

    /// `update(i, v)` on the named snapshot object. The receiver is left
    /// untouched.
    pub fn update(&self, object: &str, index: usize, value: RegisterValue) -> Result<Memory> {
        let object = self.model.snapshot_index(object)?;
        let mut next = self.clone();
        next.update_in_place(object, index, value)?;
        Ok(next)
    }

    /// `scan()` on the named atomic snapshot object.
    pub fn scan(&self, object: &str) -> Result<Vec<RegisterValue>> {
        self.scan_at(self.model.snapshot_index(object)?)
    }

    pub fn write_register(&self, name: &str, value: RegisterValue) -> Result<Memory> {
        let register = self.model.register_index(name)?;
        let mut next = self.clone();
        next.write_in_place(register, value)?;
        Ok(next)
    }

    pub fn read_register(&self, name: &str) -> Result<RegisterValue> {
        self.read_at(self.model.register_index(name)?)
    }
}

/// Progress of a scan assembled from single-component reads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CollectStatus {
    InProgress,
    Done(Vec<RegisterValue>),
}

/// Non-blocking scan over a double-collect snapshot object.
///
/// Each [`Collector::step`] performs exactly one component read. Once two
/// consecutive complete collects are identical (values and write counters)
/// the scan returns; otherwise the newer collect becomes the reference and
/// collecting continues. Writers that keep updating between collects can
/// starve the collector forever.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Collector {
    object: usize,
    previous: Option<Vec<(RegisterValue, u64)>>,
    current: Vec<(RegisterValue, u64)>,
}

impl Collector {
    pub fn new(object: usize) -> Self {
        Self {
            object,
            previous: None,
            current: Vec::new(),
        }
    }

    pub fn object(&self) -> usize {
        self.object
    }

    /// Component the next read will touch.
    pub fn next_index(&self) -> usize {
        self.current.len()
    }

    /// Applies the result of reading [`Collector::next_index`].
    pub fn absorb(&mut self, read: (RegisterValue, u64), len: usize) -> CollectStatus {
        self.current.push(read);
        if self.current.len() < len {
            return CollectStatus::InProgress;
        }
        let collected = std::mem::take(&mut self.current);
        if self.previous.as_ref() == Some(&collected) {
            self.previous = None;
            CollectStatus::Done(collected.into_iter().map(|(v, _)| v).collect())
        } else {
            self.previous = Some(collected);
            CollectStatus::InProgress
        }
    }

    /// Performs one component read against `memory`.
    pub fn step(&mut self, memory: &Memory) -> Result<CollectStatus> {
        let len = memory.snapshot(self.object).len();
        let read = memory.read_component(self.object, self.next_index())?;
        Ok(self.absorb(read, len))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(r: usize, mode: SnapshotMode) -> Arc<MemoryModel> {
        Arc::new(
            MemoryModel::new()
                .with_snapshot("A", r, mode, Realization::PerComponent)
                .with_register("H", RegisterValue::Seq { values: vec![] }),
        )
    }

    fn pair(value: Value, id: Pid) -> RegisterValue {
        RegisterValue::Pair { value, id }
    }

    #[test]
    fn update_touches_one_component() {
        let mem = model(3, SnapshotMode::Atomic).initial_memory();
        let next = mem.update("A", 1, pair(5, 2)).unwrap();
        assert_eq!(
            next.scan("A").unwrap(),
            vec![RegisterValue::Bot, pair(5, 2), RegisterValue::Bot]
        );
        // the input is untouched
        assert_eq!(mem.scan("A").unwrap(), vec![RegisterValue::Bot; 3]);
    }

    #[test]
    fn last_update_wins() {
        let mem = model(3, SnapshotMode::Atomic).initial_memory();
        let mem = mem.update("A", 2, pair(1, 0)).unwrap();
        let mem = mem.update("A", 2, pair(4, 1)).unwrap();
        assert_eq!(mem.scan("A").unwrap()[2], pair(4, 1));
    }

    #[test]
    fn update_out_of_range_is_an_error() {
        let mem = model(3, SnapshotMode::Atomic).initial_memory();
        let err = mem.update("A", 3, pair(1, 0)).unwrap_err();
        assert!(matches!(
            err,
            Error::ComponentOutOfRange {
                index: 3,
                len: 3,
                ..
            }
        ));
        assert!(matches!(
            mem.update("B", 0, pair(1, 0)),
            Err(Error::UnknownObject(_))
        ));
    }

    #[test]
    fn scans_are_deterministic() {
        let mem = model(2, SnapshotMode::Atomic).initial_memory();
        assert_eq!(mem.scan("A").unwrap(), vec![RegisterValue::Bot; 2]);
        let mem = mem.update("A", 1, pair(3, 1)).unwrap();
        assert_eq!(mem.scan("A").unwrap(), mem.scan("A").unwrap());
        assert_eq!(mem.scan("A").unwrap()[0], RegisterValue::Bot);
    }

    #[test]
    fn double_collect_object_refuses_atomic_scan() {
        let mem = model(2, SnapshotMode::DoubleCollect).initial_memory();
        assert!(matches!(mem.scan("A"), Err(Error::NotAtomic(_))));
    }

    #[test]
    fn register_semantics() {
        let mem = model(1, SnapshotMode::Atomic).initial_memory();
        assert_eq!(
            mem.read_register("H").unwrap(),
            RegisterValue::Seq { values: vec![] }
        );
        let mem = mem
            .write_register("H", RegisterValue::Seq { values: vec![7] })
            .unwrap();
        assert_eq!(
            mem.read_register("H").unwrap(),
            RegisterValue::Seq { values: vec![7] }
        );
        let mem = mem
            .write_register("H", RegisterValue::Seq { values: vec![7, 8] })
            .unwrap();
        assert_eq!(
            mem.read_register("H").unwrap(),
            RegisterValue::Seq { values: vec![7, 8] }
        );
        assert!(matches!(
            mem.read_register("G"),
            Err(Error::UnknownRegister(_))
        ));
    }

    #[test]
    fn bot_only_equals_bot() {
        assert_eq!(RegisterValue::Bot, RegisterValue::Bot);
        assert_ne!(RegisterValue::Bot, pair(0, 0));
        assert_ne!(RegisterValue::Bot, RegisterValue::Seq { values: vec![] });
    }

    #[test]
    fn budget_counts_realized_registers() {
        let m = MemoryModel::new()
            .with_snapshot(
                "A",
                7,
                SnapshotMode::Atomic,
                Realization::SingleWriter { processes: 6 },
            )
            .with_register("H", RegisterValue::Seq { values: vec![] });
        assert_eq!(m.register_budget(), 7);
        assert_eq!(
            m.register_of(
                Loc::Component {
                    object: 0,
                    index: 6
                },
                2
            ),
            2
        );
        assert_eq!(m.register_of(Loc::Register { register: 0 }, 2), 6);
        let m = model(5, SnapshotMode::Atomic);
        assert_eq!(m.register_budget(), 6);
        assert_eq!(
            m.register_of(
                Loc::Component {
                    object: 0,
                    index: 4
                },
                0
            ),
            4
        );
    }

    #[test]
    fn quiet_double_collect_takes_two_collects() {
        let mem = model(2, SnapshotMode::DoubleCollect).initial_memory();
        let mut c = Collector::new(0);
        let mut reads = 0;
        let view = loop {
            reads += 1;
            if let CollectStatus::Done(v) = c.step(&mem).unwrap() {
                break v;
            }
        };
        assert_eq!(reads, 4);
        assert_eq!(view, vec![RegisterValue::Bot; 2]);
    }

    #[test]
    fn interfering_writer_starves_collector() {
        let mut mem = model(2, SnapshotMode::DoubleCollect).initial_memory();
        let mut c = Collector::new(0);
        for round in 0..1000u32 {
            // same value rewritten each time; only the write counter moves
            mem.update_in_place(0, (round % 2) as usize, pair(1, 1))
                .unwrap();
            assert_eq!(c.step(&mem).unwrap(), CollectStatus::InProgress);
        }
    }
}
