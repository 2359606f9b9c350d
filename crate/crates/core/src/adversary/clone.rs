//! Clones of anonymous processes, and gluing solo-ish executions together.
//!
//! A clone has its original's input and repeats each of its steps right
//! after it. Paused just before one of the original's writes, a clone can
//! later redo that write and restore the register's earlier contents.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{Loc, Pid, Value};
use crate::protocol::{Effect, Primitive, ProtocolKind, ProtocolParams};
use crate::schedule::{run, Activation, Configuration, Schedule};
use crate::trace::{Step, Trace};
use crate::verify::{check_k_agreement, find_m_value_witness, WitnessOutcome};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PausedClone {
    pub clone: Pid,
    /// Index, in the base trace, of the original's write the clone skipped.
    pub step_index: usize,
    pub pending: Primitive,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct CloneWorld {
    pub params: ProtocolParams,
    pub original: Pid,
    pub clone: Pid,
    /// Base activations with the clone's copies interleaved.
    pub activations: Vec<Activation>,
    pub paused: Option<PausedClone>,
    pub config: Configuration,
    /// Number of original/clone step pairs compared.
    pub pairs: usize,
}

impl CloneWorld {
    /// Lets a paused clone perform its pending write.
    pub fn resume(&mut self) -> Result<Effect> {
        let paused = self
            .paused
            .take()
            .ok_or_else(|| Error::Precondition("clone is not paused".into()))?;
        self.activations.push(paused.activation);
        self.config.apply(&self.params, paused.activation)
    }
}

fn divergence(original: Pid, clone: Pid, step_index: usize, detail: String) -> Error {
    Error::LockstepDivergence {
        original,
        clone,
        step_index,
        detail,
    }
}

/// Replays `trace` with `clone_pid` copying every step of `pid`, pausing the
/// clone before the first write of `pid` at or after `pause_at`.
pub fn clone_lockstep(
    trace: &Trace,
    pid: Pid,
    clone_pid: Pid,
    pause_at: Option<usize>,
) -> Result<CloneWorld> {
    let params = &trace.params;
    if params.kind != ProtocolKind::Anonymous {
        return Err(Error::Precondition(
            "clones need an anonymous protocol".into(),
        ));
    }
    if pid == clone_pid || pid >= params.n || clone_pid >= params.n {
        return Err(Error::Precondition(format!(
            "cannot clone p{pid} as p{clone_pid} among {} processes",
            params.n
        )));
    }
    if trace.initial.machine(pid).local != trace.initial.machine(clone_pid).local {
        return Err(Error::Precondition(format!(
            "p{clone_pid} does not start in p{pid}'s state (inputs differ)"
        )));
    }
    if trace.steps.iter().any(|s| s.pid == clone_pid) {
        return Err(Error::Precondition(format!(
            "p{clone_pid} already takes steps in the trace"
        )));
    }
    let pause = pause_at.and_then(|from| {
        trace
            .steps
            .iter()
            .find(|s| s.step_index >= from && s.pid == pid && s.is_write())
            .map(|s| s.step_index)
    });
    let mut config = trace.initial.clone();
    let mut activations = Vec::with_capacity(trace.steps.len() * 2);
    let mut paused = None;
    let mut pairs = 0;
    for step in &trace.steps {
        let act = step.activation();
        if step.pid == pid && pause == Some(step.step_index) {
            let pending = config.machine(clone_pid).poised(params, act.thread);
            let own = config.machine(pid).poised(params, act.thread);
            if pending != own {
                return Err(divergence(
                    pid,
                    clone_pid,
                    step.step_index,
                    format!("paused clone poised on {pending:?}, original on {own:?}"),
                ));
            }
            paused = Some(PausedClone {
                clone: clone_pid,
                step_index: step.step_index,
                pending,
                activation: Activation {
                    pid: clone_pid,
                    thread: act.thread,
                },
            });
        }
        let effect = config.apply(params, act)?;
        activations.push(act);
        let redo = Step::from_effect(step.step_index, step.pid, step.thread, effect.clone());
        if redo != *step {
            return Err(divergence(
                pid,
                clone_pid,
                step.step_index,
                format!("p{} no longer repeats its recorded step", step.pid),
            ));
        }
        if step.pid == pid && paused.is_none() {
            let copy = Activation {
                pid: clone_pid,
                thread: act.thread,
            };
            let twin = config.apply(params, copy)?;
            activations.push(copy);
            pairs += 1;
            if twin != effect {
                return Err(divergence(
                    pid,
                    clone_pid,
                    step.step_index,
                    format!("original did {:?}, clone did {:?}", effect, twin),
                ));
            }
            if config.machine(pid).local != config.machine(clone_pid).local {
                return Err(divergence(
                    pid,
                    clone_pid,
                    step.step_index,
                    "local states differ after the paired step".into(),
                ));
            }
        }
    }
    Ok(CloneWorld {
        params: params.clone(),
        original: pid,
        clone: clone_pid,
        activations,
        paused,
        config,
        pairs,
    })
}

/// Distinct locations written in the trace, in order of first write.
pub fn register_sequence(steps: &[Step]) -> Vec<Loc> {
    let mut seq = Vec::new();
    for loc in steps.iter().filter_map(Step::written_loc) {
        if !seq.contains(&loc) {
            seq.push(loc);
        }
    }
    seq
}

/// An execution in which `m` processes output every value of a set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValueRun {
    pub values: Vec<Value>,
    pub steps: Vec<Step>,
    pub registers: Vec<Loc>,
}

impl ValueRun {
    /// Index of the step that first writes `loc`.
    fn first_write(&self, loc: Loc) -> Option<usize> {
        self.steps.iter().position(|s| s.written_loc() == Some(loc))
    }

    /// Steps processes `pids` take, with pid `i` of the run relabelled `pids[i]`.
    fn relabelled(&self, pids: &[Pid]) -> Vec<Step> {
        self.steps
            .iter()
            .map(|s| Step {
                pid: pids[s.pid],
                ..s.clone()
            })
            .collect()
    }
}

/// Runs the witness search with processes `0..m` proposing `values`.
pub fn value_run(
    params: &ProtocolParams,
    values: &[Value],
    depth_cap: usize,
) -> Result<Option<ValueRun>> {
    let q: Vec<Pid> = (0..params.m).collect();
    match find_m_value_witness(params, &q, values, depth_cap)? {
        WitnessOutcome::Witness(trace) => Ok(Some(ValueRun {
            values: values.to_vec(),
            registers: register_sequence(&trace.steps),
            steps: trace.steps,
        })),
        WitnessOutcome::NotFound { .. } => Ok(None),
    }
}

/// Property checks for one glued execution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlueStage {
    pub j: usize,
    pub beta: Vec<Activation>,
    /// Processes outside the groups that take steps.
    pub outsiders: usize,
    pub outsiders_ok: bool,
    pub writes_exist: bool,
    pub writes_contained: bool,
    pub indistinguishable: bool,
}

impl GlueStage {
    pub fn holds(&self) -> bool {
        self.outsiders_ok && self.writes_exist && self.writes_contained && self.indistinguishable
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GlueOutcome {
    BetaChain {
        registers: Vec<Loc>,
        stages: Vec<GlueStage>,
        trace: Box<Trace>,
        outputs: Vec<Value>,
    },
    Blocked {
        j: usize,
        reason: String,
    },
}

struct Glue<'a> {
    params: &'a ProtocolParams,
    runs: Vec<ValueRun>,
    groups: Vec<Vec<Pid>>,
    registers: Vec<Loc>,
    /// `(clone, original)` for every clone added so far.
    clones: Vec<(Pid, Pid)>,
}

impl Glue<'_> {
    fn inputs(&self) -> Vec<Vec<Value>> {
        let s = self.params.s_instances as usize;
        let mut inputs = vec![vec![self.runs[0].values[0]; s]; self.params.n];
        for (run, group) in self.runs.iter().zip(&self.groups) {
            for (&p, &v) in group.iter().zip(&run.values) {
                inputs[p] = vec![v; s];
            }
        }
        for &(clone, original) in &self.clones {
            inputs[clone] = inputs[original].clone();
        }
        inputs
    }

    /// Number of steps of run `l` belonging to stage `j`.
    fn stop(&self, l: usize, j: usize) -> usize {
        let run = &self.runs[l];
        match self.registers.get(j) {
            Some(&next) if j < self.registers.len() => {
                run.first_write(next).unwrap_or(run.steps.len())
            }
            _ => run.steps.len(),
        }
    }

    fn group_of(&self, pid: Pid) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&pid))
    }

    fn check(&self, j: usize, beta: &[Activation], trace: &Trace) -> GlueStage {
        let outsiders: BTreeSet<Pid> = beta
            .iter()
            .map(|a| a.pid)
            .filter(|&p| self.group_of(p).is_none())
            .collect();
        let c = self.groups.len();
        let allowed = &self.registers[..j];
        let writes_exist = (0..c).all(|l| {
            allowed.iter().all(|&r| {
                trace
                    .steps
                    .iter()
                    .any(|s| self.groups[l].contains(&s.pid) && s.written_loc() == Some(r))
            })
        });
        let writes_contained = trace
            .steps
            .iter()
            .filter_map(Step::written_loc)
            .all(|loc| allowed.contains(&loc));
        let indistinguishable = (0..c).all(|l| {
            let expected = &self.runs[l].relabelled(&self.groups[l])[..self.stop(l, j)];
            let seen: Vec<&Step> = trace
                .steps
                .iter()
                .filter(|s| self.groups[l].contains(&s.pid))
                .collect();
            seen.len() == expected.len()
                && seen
                    .iter()
                    .zip(expected)
                    .all(|(a, b)| same_observation(a, b))
        });
        GlueStage {
            j,
            beta: beta.to_vec(),
            outsiders: outsiders.len(),
            outsiders_ok: outsiders.len() == c * j * j.saturating_sub(1) / 2,
            writes_exist,
            writes_contained,
            indistinguishable,
        }
    }
}

fn same_observation(a: &Step, b: &Step) -> bool {
    Step {
        step_index: 0,
        ..a.clone()
    } == Step {
        step_index: 0,
        ..b.clone()
    }
}

/// Glues together executions for the disjoint value sets `value_sets`, one
/// per group of `m` processes, adding clones whose block writes hide each
/// group's writes from the others.
pub fn build_glued(
    params: &ProtocolParams,
    value_sets: &[Vec<Value>],
    depth_cap: usize,
) -> Result<GlueOutcome> {
    if params.kind != ProtocolKind::Anonymous {
        return Err(Error::Precondition(
            "gluing needs an anonymous protocol".into(),
        ));
    }
    let c = params.c();
    if value_sets.len() != c || value_sets.iter().any(|v| v.len() != params.m) {
        return Err(Error::Precondition(format!(
            "need {c} value sets of size m={}",
            params.m
        )));
    }
    let all: BTreeSet<Value> = value_sets.iter().flatten().copied().collect();
    if all.len() != c * params.m {
        return Err(Error::Precondition("value sets must be disjoint".into()));
    }
    let mut runs = Vec::new();
    for v in value_sets {
        match value_run(params, v, depth_cap)? {
            Some(r) => runs.push(r),
            None => {
                return Ok(GlueOutcome::Blocked {
                    j: 0,
                    reason: format!("no execution outputs all of {v:?} within depth {depth_cap}"),
                })
            }
        }
    }
    let registers = runs[0].registers.clone();
    if let Some(r) = runs.iter().find(|r| r.registers != registers) {
        return Ok(GlueOutcome::Blocked {
            j: 0,
            reason: format!(
                "register sequences differ: {:?} vs {:?}",
                registers, r.registers
            ),
        });
    }
    let top = registers.len();
    let needed = c * params.m + c * top * top.saturating_sub(1) / 2;
    if needed > params.n {
        return Ok(GlueOutcome::Blocked {
            j: 0,
            reason: format!(
                "{top} registers need {needed} processes including clones, n = {}",
                params.n
            ),
        });
    }
    let groups: Vec<Vec<Pid>> = (0..c)
        .map(|l| (l * params.m..(l + 1) * params.m).collect())
        .collect();
    let mut glue = Glue {
        params,
        runs,
        groups,
        registers,
        clones: Vec::new(),
    };
    let mut next_clone = c * params.m;
    let mut stages: Vec<GlueStage> = Vec::new();
    let mut beta: Vec<Activation> = Vec::new();
    let mut prev: Option<Trace> = None;
    let mut pos = vec![0usize; c];
    for j in 0..=top {
        // clones of this stage, paused before the last group write to each
        // of the first j-1 registers
        let mut fresh: Vec<Vec<(Pid, Pid, usize, Activation)>> = vec![Vec::new(); c];
        if let Some(prev) = &prev {
            for (l, group) in glue.groups.iter().enumerate() {
                for &r in &glue.registers[..j - 1] {
                    let Some(last) = prev
                        .steps
                        .iter()
                        .rev()
                        .find(|s| group.contains(&s.pid) && s.written_loc() == Some(r))
                    else {
                        return Ok(GlueOutcome::Blocked {
                            j,
                            reason: format!("group {l} never wrote {r:?}"),
                        });
                    };
                    fresh[l].push((next_clone, last.pid, last.step_index, last.activation()));
                    next_clone += 1;
                }
            }
        }
        let mut extended = Vec::new();
        for (idx, &act) in beta.iter().enumerate() {
            extended.push(act);
            for &(clone, original, pause, _) in fresh.iter().flatten() {
                if original == act.pid && idx < pause {
                    extended.push(Activation {
                        pid: clone,
                        thread: act.thread,
                    });
                }
            }
        }
        glue.clones.extend(
            fresh
                .iter()
                .flatten()
                .map(|&(clone, original, _, _)| (clone, original)),
        );
        for l in 0..c {
            for &(clone, _, _, write) in &fresh[l] {
                extended.push(Activation {
                    pid: clone,
                    thread: write.thread,
                });
            }
            let stop = glue.stop(l, j);
            for s in &glue.runs[l].steps[pos[l]..stop] {
                extended.push(Activation {
                    pid: glue.groups[l][s.pid],
                    thread: s.thread,
                });
            }
            pos[l] = stop;
        }
        beta = extended;
        let trace = run(params, &glue.inputs(), &Schedule::scripted(beta.clone()))?;
        let stage = glue.check(j, &beta, &trace);
        let holds = stage.holds();
        stages.push(stage);
        if !holds {
            let st = stages.last().expect("just pushed");
            return Ok(GlueOutcome::Blocked {
                j,
                reason: format!(
                    "stage properties: outsiders {} ({}), writes exist {}, contained {}, \
                     indistinguishable {}",
                    st.outsiders,
                    st.outsiders_ok,
                    st.writes_exist,
                    st.writes_contained,
                    st.indistinguishable
                ),
            });
        }
        prev = Some(trace);
    }
    let trace = prev.expect("at least one stage");
    let outputs = trace.outputs(1);
    if !check_k_agreement(&trace, params.k).failed() {
        return Ok(GlueOutcome::Blocked {
            j: top,
            reason: format!("glued execution output only {outputs:?}"),
        });
    }
    Ok(GlueOutcome::BetaChain {
        registers: glue.registers,
        stages,
        trace: Box::new(trace),
        outputs,
    })
}

/// Looks for `c` disjoint value sets whose executions share one register
/// sequence, then glues them.
pub fn find_glue_family(params: &ProtocolParams, depth_cap: usize) -> Result<GlueOutcome> {
    let c = params.c();
    let sets = value_sets(params.domain, params.m, 64);
    let mut runs: Vec<ValueRun> = Vec::new();
    for v in sets {
        if let Some(r) = value_run(params, &v, depth_cap)? {
            runs.push(r);
        }
    }
    let mut sequences: Vec<&Vec<Loc>> = runs.iter().map(|r| &r.registers).collect();
    sequences.sort();
    sequences.dedup();
    for seq in sequences {
        let mut chosen: Vec<Vec<Value>> = Vec::new();
        for r in runs.iter().filter(|r| &r.registers == seq) {
            if chosen.iter().flatten().all(|x| !r.values.contains(x)) {
                chosen.push(r.values.clone());
            }
            if chosen.len() == c {
                return build_glued(params, &chosen, depth_cap);
            }
        }
    }
    Ok(GlueOutcome::Blocked {
        j: 0,
        reason: format!("no {c} disjoint value sets share a register sequence"),
    })
}

/// Up to `limit` sets of `m` values from `0..domain`, in lexicographic order.
fn value_sets(domain: Value, m: usize, limit: usize) -> Vec<Vec<Value>> {
    let mut out = Vec::new();
    let mut cur: Vec<Value> = (0..m as Value).collect();
    if m as Value > domain {
        return out;
    }
    loop {
        out.push(cur.clone());
        if out.len() >= limit {
            return out;
        }
        // advance to the next combination
        let mut i = m;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < domain - (m - i) as Value {
                break;
            }
        }
        cur[i] += 1;
        for t in i + 1..m {
            cur[t] = cur[t - 1] + 1;
        }
    }
}
