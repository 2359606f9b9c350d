//! Checkers over recorded traces.
//!
//! Every checker returns a [`PropertyReport`]. A failing report names the
//! earliest step at which the property is observably broken.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{Loc, Pid, RegisterValue, Value};
use crate::protocol::{DecisionKind, ProtocolKind, ProtocolParams, SNAPSHOT};
use crate::schedule::{run, Activation, Configuration, Schedule};
use crate::search::{iddfs, Goal, Limits, SearchOutcome};
use crate::trace::{Step, Trace};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail {
        step_index: usize,
        explanation: String,
    },
    Inconclusive {
        reason: String,
    },
}

/// Inputs and outputs seen for one instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSets {
    pub instance: u32,
    pub inputs: BTreeSet<Value>,
    pub outputs: BTreeSet<Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: String,
    #[serde(flatten)]
    pub verdict: Verdict,
    pub instances: Vec<InstanceSets>,
}

impl PropertyReport {
    fn new(property: &str, trace: &Trace, verdict: Verdict) -> Self {
        Self {
            property: property.to_string(),
            verdict,
            instances: instance_sets(trace),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn failed(&self) -> bool {
        matches!(self.verdict, Verdict::Fail { .. })
    }
}

fn fail(step_index: usize, explanation: String) -> Verdict {
    Verdict::Fail {
        step_index,
        explanation,
    }
}

/// In_t collects the inputs of invoked instances; Out_t the decided values.
pub fn instance_sets(trace: &Trace) -> Vec<InstanceSets> {
    let mut sets: BTreeMap<u32, InstanceSets> = BTreeMap::new();
    for step in &trace.steps {
        for (t, input) in step.invocations() {
            sets.entry(t)
                .or_insert_with(|| empty_sets(t))
                .inputs
                .insert(input);
        }
    }
    for d in &trace.decisions {
        sets.entry(d.instance)
            .or_insert_with(|| empty_sets(d.instance))
            .outputs
            .insert(d.value);
    }
    sets.into_values().collect()
}

fn empty_sets(instance: u32) -> InstanceSets {
    InstanceSets {
        instance,
        inputs: BTreeSet::new(),
        outputs: BTreeSet::new(),
    }
}

/// Every decided value of instance `t` was proposed for instance `t` by a
/// process that invoked it before the decision.
pub fn check_validity(trace: &Trace) -> PropertyReport {
    let mut invoked: BTreeMap<u32, BTreeSet<Value>> = BTreeMap::new();
    let mut verdict = Verdict::Pass;
    'steps: for step in &trace.steps {
        for (t, input) in step.invocations() {
            invoked.entry(t).or_default().insert(input);
        }
        for d in step.decisions() {
            let ok = invoked
                .get(&d.instance)
                .is_some_and(|s| s.contains(&d.value));
            if !ok {
                verdict = fail(
                    step.step_index,
                    format!(
                        "p{} decided {} for instance {} which no invoked process proposed",
                        d.pid, d.value, d.instance
                    ),
                );
                break 'steps;
            }
        }
    }
    PropertyReport::new("validity", trace, verdict)
}

/// At most `k` distinct values are decided per instance.
pub fn check_k_agreement(trace: &Trace, k: usize) -> PropertyReport {
    let mut outs: BTreeMap<u32, BTreeSet<Value>> = BTreeMap::new();
    let mut verdict = Verdict::Pass;
    for d in &trace.decisions {
        let set = outs.entry(d.instance).or_default();
        set.insert(d.value);
        if set.len() > k {
            verdict = fail(
                d.step_index,
                format!(
                    "instance {} has {} distinct outputs {:?} with k={k}",
                    d.instance,
                    set.len(),
                    set
                ),
            );
            break;
        }
    }
    PropertyReport::new("k_agreement", trace, verdict)
}

/// Every survivor of an eventually bounded schedule completes every
/// operation it invokes and every instance it has an input for.
pub fn check_m_of_termination(trace: &Trace, schedule: &Schedule) -> PropertyReport {
    let name = "m_obstruction_freedom";
    let Some(survivors) = schedule.survivors() else {
        return PropertyReport::new(
            name,
            trace,
            Verdict::Inconclusive {
                reason: "schedule is not eventually bounded".into(),
            },
        );
    };
    if survivors.len() > trace.params.m {
        return PropertyReport::new(
            name,
            trace,
            Verdict::Inconclusive {
                reason: format!("{} survivors exceed m={}", survivors.len(), trace.params.m),
            },
        );
    }
    if trace.truncated {
        return PropertyReport::new(
            name,
            trace,
            Verdict::Inconclusive {
                reason: format!("truncated after {} steps", trace.steps.len()),
            },
        );
    }
    let last = trace.steps.len().saturating_sub(1);
    let mut verdict = Verdict::Pass;
    for &p in survivors {
        let decided = trace.decisions.iter().filter(|d| d.pid == p).count() as u32;
        let wanted = trace.initial.machine(p).local.inputs.len() as u32;
        if decided < wanted {
            verdict = fail(
                last,
                format!("survivor p{p} completed {decided} of {wanted} instances"),
            );
            break;
        }
    }
    PropertyReport::new(name, trace, verdict)
}

/// Every output that was not produced by the deciding branch copies an
/// earlier deciding output of the same instance.
pub fn check_adoption(trace: &Trace) -> PropertyReport {
    let mut rooted: HashSet<(u32, Value)> = HashSet::new();
    let mut verdict = Verdict::Pass;
    for d in &trace.decisions {
        if d.kind == DecisionKind::TDeciding {
            rooted.insert((d.instance, d.value));
        } else if !rooted.contains(&(d.instance, d.value)) {
            verdict = fail(
                d.step_index,
                format!(
                    "p{} adopted {} for instance {} before anyone decided it directly",
                    d.pid, d.value, d.instance
                ),
            );
            break;
        }
    }
    PropertyReport::new("adoption", trace, verdict)
}

/// Snapshot component contents after each step, starting from the initial
/// configuration. Yields `(step_index, components)` after every write.
struct ComponentTracker {
    components: Vec<RegisterValue>,
}

impl ComponentTracker {
    fn new(trace: &Trace) -> Self {
        Self {
            components: trace
                .initial
                .memory
                .snapshot(SNAPSHOT)
                .components()
                .to_vec(),
        }
    }

    fn apply(&mut self, step: &Step) -> bool {
        match (step.written_loc(), &step.value_written) {
            (Some(Loc::Component { index, .. }), Some(v)) if index < self.components.len() => {
                self.components[index] = v.clone();
                true
            }
            _ => false,
        }
    }
}

/// Two entries with the same identifier but different values.
pub fn pair_conflict(components: &[RegisterValue]) -> Option<String> {
    let mut by_id: BTreeMap<Pid, (usize, Value)> = BTreeMap::new();
    for (j, c) in components.iter().enumerate() {
        if let RegisterValue::Pair { value, id } = c {
            match by_id.get(id) {
                Some(&(i, v)) if v != *value => {
                    return Some(format!(
                        "components {i} and {j} hold ({v},{id}) and ({value},{id})"
                    ))
                }
                Some(_) => {}
                None => {
                    by_id.insert(*id, (j, *value));
                }
            }
        }
    }
    None
}

/// Two tuples with the same identifier and instance that differ.
pub fn tuple_conflict(components: &[RegisterValue]) -> Option<String> {
    let mut by_key: BTreeMap<(Pid, u32), usize> = BTreeMap::new();
    for (j, c) in components.iter().enumerate() {
        if let RegisterValue::Tuple { id, instance, .. } = c {
            match by_key.get(&(*id, *instance)) {
                Some(&i) if components[i] != *c => return Some(format!(
                    "components {i} and {j} hold different tuples for id {id}, instance {instance}"
                )),
                Some(_) => {}
                None => {
                    by_key.insert((*id, *instance), j);
                }
            }
        }
    }
    None
}

fn monitor_components(
    name: &str,
    trace: &Trace,
    conflict: impl Fn(&[RegisterValue]) -> Option<String>,
) -> PropertyReport {
    let mut tracker = ComponentTracker::new(trace);
    let mut verdict = match conflict(&tracker.components) {
        Some(why) => fail(0, format!("initial configuration: {why}")),
        None => Verdict::Pass,
    };
    if verdict == Verdict::Pass {
        for step in &trace.steps {
            if tracker.apply(step) {
                if let Some(why) = conflict(&tracker.components) {
                    verdict = fail(step.step_index, why);
                    break;
                }
            }
        }
    }
    PropertyReport::new(name, trace, verdict)
}

/// In every configuration, pairs with the same identifier carry the same value.
pub fn monitor_pair_uniqueness(trace: &Trace) -> PropertyReport {
    monitor_components("pair_uniqueness", trace, pair_conflict)
}

/// In every configuration, tuples with the same identifier and instance are
/// identical. Tuples of different instances may differ.
pub fn monitor_tuple_uniqueness(trace: &Trace) -> PropertyReport {
    monitor_components("tuple_uniqueness", trace, tuple_conflict)
}

/// Once `k - m + 1` processes have decided, only values seen by the last of
/// them in its final scan may occupy two components, and that decider and
/// every later one output such a value.
pub fn monitor_confinement(trace: &Trace) -> PropertyReport {
    let name = "confinement";
    let p = &trace.params;
    let position = p.k - p.m;
    let mut deciders: Vec<&crate::trace::DecisionEvent> = Vec::new();
    for d in trace.decisions.iter().filter(|d| d.instance == 1) {
        if !deciders.iter().any(|e| e.pid == d.pid) {
            deciders.push(d);
        }
    }
    let Some(q0) = deciders.get(position).copied() else {
        return PropertyReport::new(
            name,
            trace,
            Verdict::Inconclusive {
                reason: format!("{} deciders, need {}", deciders.len(), position + 1),
            },
        );
    };
    let step = &trace.steps[q0.step_index];
    let Some(scan) = &step.scan_result else {
        return PropertyReport::new(
            name,
            trace,
            Verdict::Inconclusive {
                reason: format!("decision of p{} carries no scan", q0.pid),
            },
        );
    };
    let v: BTreeSet<Value> = scan.iter().filter_map(RegisterValue::value).collect();
    if v.len() > p.m {
        let verdict = fail(
            q0.step_index,
            format!("final scan of p{} holds {} > m values", q0.pid, v.len()),
        );
        return PropertyReport::new(name, trace, verdict);
    }
    // the same pair twice; equal values under different ids are fine
    let outside_twice = |components: &[RegisterValue]| -> Option<String> {
        let mut seen: HashSet<&RegisterValue> = HashSet::new();
        components
            .iter()
            .filter(|x| x.value().is_some_and(|x| !v.contains(&x)))
            .find(|x| !seen.insert(*x))
            .map(|x| x.to_string())
    };
    let mut tracker = ComponentTracker::new(trace);
    let mut verdict = Verdict::Pass;
    for s in &trace.steps {
        let wrote = tracker.apply(s);
        if s.step_index < q0.step_index {
            continue;
        }
        if s.step_index == q0.step_index || wrote {
            if let Some(x) = outside_twice(&tracker.components) {
                verdict = fail(
                    s.step_index,
                    format!("pair {x} with a value outside {v:?} occupies two components"),
                );
                break;
            }
        }
    }
    if verdict == Verdict::Pass {
        if let Some(d) = deciders[position..].iter().find(|d| !v.contains(&d.value)) {
            verdict = fail(
                d.step_index,
                format!("p{} decided {} outside {v:?}", d.pid, d.value),
            );
        }
    }
    PropertyReport::new(name, trace, verdict)
}

/// Re-executes the recorded activations from the initial configuration and
/// compares every recorded observation.
pub fn replay(trace: &Trace) -> PropertyReport {
    let mut config = trace.initial.clone();
    let mut verdict = Verdict::Pass;
    let mut decisions = Vec::new();
    for (index, step) in trace.steps.iter().enumerate() {
        if step.step_index != index {
            verdict = fail(index, format!("step record numbered {}", step.step_index));
            break;
        }
        let effect = match config.apply(&trace.params, step.activation()) {
            Ok(e) => e,
            Err(e) => {
                verdict = fail(index, format!("activation rejected: {e}"));
                break;
            }
        };
        let redo = Step::from_effect(index, step.pid, step.thread, effect);
        if redo != *step {
            verdict = fail(index, describe_mismatch(step, &redo));
            break;
        }
        decisions.extend(redo.decisions());
    }
    if verdict == Verdict::Pass && decisions != trace.decisions {
        let at = trace.steps.len().saturating_sub(1);
        verdict = fail(
            at,
            "recorded decisions differ from the replayed ones".into(),
        );
    }
    PropertyReport::new("replay", trace, verdict)
}

fn describe_mismatch(recorded: &Step, replayed: &Step) -> String {
    if recorded.scan_result != replayed.scan_result {
        "scan result differs".into()
    } else if recorded.value_written != replayed.value_written {
        "written value differs".into()
    } else if recorded.read_result != replayed.read_result {
        "read result differs".into()
    } else if recorded.events != replayed.events {
        "events differ".into()
    } else {
        format!(
            "recorded {} on {:?}, replayed {} on {:?}",
            recorded.primitive, recorded.component, replayed.primitive, replayed.component
        )
    }
}

/// Completed double-collect scans return a vector the components actually
/// held at some point between the collect's first read and its last.
pub fn check_collect_consistency(trace: &Trace) -> PropertyReport {
    let mut tracker = ComponentTracker::new(trace);
    let mut states: Vec<Vec<RegisterValue>> = vec![tracker.components.clone()];
    let mut open: BTreeMap<Pid, usize> = BTreeMap::new();
    let mut verdict = Verdict::Pass;
    for step in &trace.steps {
        let is_read = step.primitive == "read_component";
        if is_read {
            // state index before this read
            open.entry(step.pid).or_insert(states.len() - 1);
        }
        tracker.apply(step);
        states.push(tracker.components.clone());
        if let (true, Some(result)) = (is_read, &step.scan_result) {
            let from = open.remove(&step.pid).unwrap_or(0);
            if !states[from..].iter().any(|s| s == result) {
                verdict = fail(
                    step.step_index,
                    format!(
                        "p{} returned a vector never held during its collect",
                        step.pid
                    ),
                );
                break;
            }
        }
    }
    PropertyReport::new("collect_consistency", trace, verdict)
}

/// Physical registers written in the trace, with the budget's accounting.
pub fn registers_touched(trace: &Trace) -> BTreeSet<usize> {
    let model = trace.initial.memory.model();
    trace
        .steps
        .iter()
        .filter_map(|s| s.written_loc().map(|loc| model.register_of(loc, s.pid)))
        .collect()
}

/// Outcome of the bounded search for an execution in which a set of `m`
/// processes output `m` distinct values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WitnessOutcome {
    Witness(Box<Trace>),
    NotFound { depth_cap: usize, exhausted: bool },
}

/// Searches schedules of the processes in `q` alone, each proposing its own
/// element of `v`, for an execution in which every value of `v` is output
/// for instance 1.
pub fn find_m_value_witness(
    params: &ProtocolParams,
    q: &[Pid],
    v: &[Value],
    depth_cap: usize,
) -> Result<WitnessOutcome> {
    if q.len() != params.m || v.len() != params.m {
        return Err(Error::Precondition(format!(
            "need |Q| = |V| = m = {}, got {} and {}",
            params.m,
            q.len(),
            v.len()
        )));
    }
    let distinct = |xs: &[usize]| xs.iter().collect::<BTreeSet<_>>().len() == xs.len();
    let vs: Vec<usize> = v.iter().map(|&x| x as usize).collect();
    if !distinct(q) || !distinct(&vs) {
        return Err(Error::Precondition("Q and V must not repeat".into()));
    }
    if let Some(&p) = q.iter().find(|&&p| p >= params.n) {
        return Err(Error::Precondition(format!("pid {p} out of range")));
    }
    let s = params.s_instances as usize;
    let mut inputs = vec![vec![v[0]; s]; params.n];
    for (&p, &x) in q.iter().zip(v) {
        inputs[p] = vec![x; s];
    }
    let start = Configuration::initial(params, &inputs)?;
    let mut movers: Vec<Activation> = q.iter().map(|&p| Activation::t1(p)).collect();
    if params.two_threads() {
        movers.extend(q.iter().map(|&p| Activation::t2(p)));
    }
    let goal = |c: &Configuration| {
        let outs: Vec<Option<Value>> = q.iter().map(|&p| c.machine(p).output(1)).collect();
        let decided: Vec<Value> = outs.iter().flatten().copied().collect();
        if decided.iter().collect::<BTreeSet<_>>().len() < decided.len() {
            Goal::Prune
        } else if decided.len() == q.len() {
            Goal::Reached
        } else {
            Goal::Continue
        }
    };
    if depth_cap == 0 {
        return Ok(WitnessOutcome::NotFound {
            depth_cap,
            exhausted: false,
        });
    }
    match iddfs(params, &start, &movers, Limits::depth(depth_cap), goal) {
        SearchOutcome::Found(path) => {
            let schedule = Schedule::scripted(path);
            Ok(WitnessOutcome::Witness(Box::new(run(
                params, &inputs, &schedule,
            )?)))
        }
        SearchOutcome::Exhausted => Ok(WitnessOutcome::NotFound {
            depth_cap,
            exhausted: true,
        }),
        SearchOutcome::CapReached => Ok(WitnessOutcome::NotFound {
            depth_cap,
            exhausted: false,
        }),
    }
}

/// Runs every safety checker that applies to the trace's protocol.
pub fn safety_reports(trace: &Trace) -> Vec<PropertyReport> {
    let mut out = vec![
        check_validity(trace),
        check_k_agreement(trace, trace.params.k),
        check_adoption(trace),
    ];
    match trace.params.kind {
        ProtocolKind::OneShot => {
            out.push(monitor_pair_uniqueness(trace));
            out.push(monitor_confinement(trace));
        }
        ProtocolKind::Repeated => out.push(monitor_tuple_uniqueness(trace)),
        ProtocolKind::Anonymous => {}
    }
    out
}
