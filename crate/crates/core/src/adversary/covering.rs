//! Covering executions and fragment splicing against repeated agreement.
//!
//! The builder grows, stage by stage, a set `Q` of processes whose every
//! possible continuation writes only to registers that a block write by `P`
//! is poised to overwrite. Fragments run by `Q` can then be spliced in
//! without leaving a trace. Each snapshot component and each plain register
//! counts as one register here.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{Loc, Pid, Value};
use crate::protocol::{ProtocolKind, ProtocolParams, Thread};
use crate::schedule::{pid_inputs, run, Activation, Configuration, Schedule};
use crate::search::{bfs, iddfs, Goal, Limits, SearchOutcome};
use crate::trace::Trace;
use crate::verify::check_k_agreement;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum FragmentOutcome {
    /// No `Q`-only continuation writes outside `A`. `exhaustive` is false
    /// when the verdict only holds up to the depth cap.
    Covered { exhaustive: bool },
    /// After `fragment`, `pid` is poised to write `register`, outside `A`.
    Escape {
        fragment: Vec<Activation>,
        register: Loc,
        pid: Pid,
    },
}

fn movers(params: &ProtocolParams, q: &[Pid]) -> Vec<Activation> {
    let mut out: Vec<Activation> = q.iter().map(|&p| Activation::t1(p)).collect();
    if params.two_threads() {
        out.extend(q.iter().map(|&p| Activation::t2(p)));
    }
    out
}

/// First process of `q` (in order) poised to write outside `a`.
fn escaping(
    params: &ProtocolParams,
    c: &Configuration,
    q: &[Pid],
    a: &BTreeSet<Loc>,
) -> Option<(Pid, Loc)> {
    q.iter().find_map(|&p| {
        let prim = c.machine(p).poised(params, Thread::T1);
        match prim.loc() {
            Some(loc) if prim.is_write() && !a.contains(&loc) => Some((p, loc)),
            _ => None,
        }
    })
}

/// Shortest `Q`-only fragment from `d` leaving some process of `q` poised to
/// write a register outside `a`.
pub fn fragment_search(
    params: &ProtocolParams,
    d: &Configuration,
    q: &[Pid],
    a: &BTreeSet<Loc>,
    depth_cap: usize,
) -> FragmentOutcome {
    let goal = |c: &Configuration| {
        if escaping(params, c, q, a).is_some() {
            Goal::Reached
        } else {
            Goal::Continue
        }
    };
    match bfs(
        params,
        d,
        &movers(params, q),
        Limits::depth(depth_cap),
        goal,
    ) {
        SearchOutcome::Found(fragment) => {
            let mut end = d.clone();
            for &act in &fragment {
                end.apply(params, act)
                    .expect("search produced a legal fragment");
            }
            let (pid, register) = escaping(params, &end, q, a).expect("goal holds at the end");
            FragmentOutcome::Escape {
                fragment,
                register,
                pid,
            }
        }
        SearchOutcome::Exhausted => FragmentOutcome::Covered { exhaustive: true },
        SearchOutcome::CapReached => FragmentOutcome::Covered { exhaustive: false },
    }
}

/// One finished stage of the construction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoveringState {
    pub j: usize,
    pub alpha: Vec<Activation>,
    /// Configuration after `alpha`, right before the block write.
    pub d: Configuration,
    pub p: Vec<Pid>,
    pub q: Vec<Pid>,
    pub a: Vec<Loc>,
    /// The block write: one step by each process of `p`.
    pub beta: Vec<Activation>,
    /// `|A|` after each loop iteration.
    pub growth: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CoveringOutcome {
    Built(Covering),
    Stuck { stage: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Covering {
    pub inputs: Vec<Vec<Value>>,
    pub stages: Vec<CoveringState>,
    /// Configuration after the last block write.
    pub end: Configuration,
}

impl Covering {
    pub fn execution(&self) -> Vec<Activation> {
        self.stages
            .iter()
            .flat_map(|s| s.alpha.iter().chain(&s.beta).copied())
            .collect()
    }
}

fn lowest_outside(n: usize, count: usize, excluded: &BTreeSet<Pid>) -> Option<Vec<Pid>> {
    let picked: Vec<Pid> = (0..n)
        .filter(|p| !excluded.contains(p))
        .take(count)
        .collect();
    (picked.len() == count).then_some(picked)
}

/// Builds stages `1..c` with `c = ceil((k+1)/m)`. Processes propose their
/// own pid in every instance.
pub fn build_covering(params: &ProtocolParams, depth_cap: usize) -> Result<CoveringOutcome> {
    if params.kind == ProtocolKind::OneShot {
        return Err(Error::Precondition(
            "covering needs a repeated agreement protocol".into(),
        ));
    }
    let inputs = pid_inputs(params);
    let mut config = Configuration::initial(params, &inputs)?;
    let c = params.c();
    let mut used: BTreeSet<Pid> = BTreeSet::new();
    let mut stages = Vec::new();
    for j in 1..c {
        let size = if j > 1 {
            params.m
        } else {
            params.k + 1 - (c - 1) * params.m
        };
        let Some(mut q) = lowest_outside(params.n, size, &used) else {
            return Ok(CoveringOutcome::Stuck {
                stage: j,
                reason: format!(
                    "{} processes left outside earlier groups, {size} needed",
                    params.n - used.len()
                ),
            });
        };
        let mut d = config.clone();
        let mut alpha = Vec::new();
        let mut p: Vec<Pid> = Vec::new();
        let mut a: BTreeSet<Loc> = BTreeSet::new();
        let mut growth = Vec::new();
        loop {
            let (fragment, register, pid) = match fragment_search(params, &d, &q, &a, depth_cap) {
                FragmentOutcome::Covered { exhaustive: true } => break,
                FragmentOutcome::Covered { exhaustive: false } => {
                    return Ok(CoveringOutcome::Stuck {
                        stage: j,
                        reason: format!("fragment search hit depth cap {depth_cap}"),
                    })
                }
                FragmentOutcome::Escape {
                    fragment,
                    register,
                    pid,
                } => (fragment, register, pid),
            };
            for &act in &fragment {
                d.apply(params, act)?;
            }
            alpha.extend(fragment);
            let mut taken: BTreeSet<Pid> = used.iter().chain(&q).chain(&p).copied().collect();
            taken.insert(pid);
            let Some(fresh) = lowest_outside(params.n, 1, &taken) else {
                return Ok(CoveringOutcome::Stuck {
                    stage: j,
                    reason: format!(
                        "no replacement for p{pid}: all {} processes are in the groups or \
                         the block write after |A| reached {}",
                        params.n,
                        a.len()
                    ),
                });
            };
            a.insert(register);
            p.push(pid);
            q.retain(|&x| x != pid);
            q.push(fresh[0]);
            growth.push(a.len());
            debug_assert_eq!(p.len(), a.len());
            debug_assert_eq!(q.len(), size);
        }
        let beta: Vec<Activation> = p.iter().map(|&x| Activation::t1(x)).collect();
        let mut after = d.clone();
        for &act in &beta {
            after.apply(params, act)?;
        }
        used.extend(&q);
        stages.push(CoveringState {
            j,
            alpha,
            d,
            p,
            q,
            a: a.into_iter().collect(),
            beta,
            growth,
        });
        config = after;
    }
    Ok(CoveringOutcome::Built(Covering {
        inputs,
        stages,
        end: config,
    }))
}

/// Result of inserting one group's fragment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplicedGroup {
    pub q: Vec<Pid>,
    pub gamma: Vec<Activation>,
    /// Whether the configuration after the block write is the same with and
    /// without `gamma`, apart from the local states of `q`. Always true for
    /// the final group, which has no block write after it.
    pub obliterated: bool,
    /// Registers `gamma` wrote.
    pub written: Vec<Loc>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SpliceOutcome {
    Refuted {
        trace: Box<Trace>,
        instance: u32,
        outputs: Vec<Value>,
        groups: Vec<SplicedGroup>,
    },
    NotFound {
        reason: String,
        groups: Vec<SplicedGroup>,
    },
}

/// Runs the processes of `q` one at a time until each finished `s`
/// instances, then searches for a schedule in which they output distinct
/// values for instance `s + 1`.
pub fn group_fragment(
    params: &ProtocolParams,
    start: &Configuration,
    q: &[Pid],
    s: u32,
    depth_cap: usize,
) -> Result<Option<Vec<Activation>>> {
    let mut config = start.clone();
    let mut gamma = Vec::new();
    for &p in q {
        while config.machine(p).completed() < s {
            if gamma.len() >= depth_cap {
                return Ok(None);
            }
            let act = Activation::t1(p);
            config.apply(params, act)?;
            gamma.push(act);
        }
    }
    let target = s + 1;
    let goal = |c: &Configuration| {
        let outs: Vec<Value> = q
            .iter()
            .filter_map(|&p| c.machine(p).output(target))
            .collect();
        if outs.iter().collect::<BTreeSet<_>>().len() < outs.len() {
            Goal::Prune
        } else if outs.len() == q.len() {
            Goal::Reached
        } else {
            Goal::Continue
        }
    };
    match iddfs(
        params,
        &config,
        &movers(params, q),
        Limits::depth(depth_cap),
        goal,
    ) {
        SearchOutcome::Found(path) => {
            gamma.extend(path);
            Ok(Some(gamma))
        }
        _ => Ok(None),
    }
}

fn written_locs(
    params: &ProtocolParams,
    start: &Configuration,
    acts: &[Activation],
) -> Result<(Configuration, Vec<Loc>)> {
    let mut c = start.clone();
    let mut locs = BTreeSet::new();
    for &act in acts {
        let effect = c.apply(params, act)?;
        if let (true, Some(loc)) = (effect.primitive().is_write(), effect.primitive().loc()) {
            locs.insert(loc);
        }
    }
    Ok((c, locs.into_iter().collect()))
}

/// Inserts a fresh-instance fragment for every group at its stage and one
/// more group at the end, replays the result and asks the agreement checker
/// whether `k + 1` values were output for that instance.
pub fn splice_and_refute(
    params: &ProtocolParams,
    covering: &Covering,
    depth_cap: usize,
) -> Result<SpliceOutcome> {
    if covering.stages.is_empty() {
        return Err(Error::Precondition(
            "a covering needs at least one stage".into(),
        ));
    }
    let s = covering
        .end
        .machines
        .iter()
        .map(|m| m.local.t)
        .max()
        .unwrap_or(0);
    let mut groups = Vec::new();
    if s >= params.s_instances {
        return Ok(SpliceOutcome::NotFound {
            reason: format!(
                "instance {} is beyond the {} inputs per process",
                s + 1,
                params.s_instances
            ),
            groups,
        });
    }
    let used: BTreeSet<Pid> = covering.stages.iter().flat_map(|st| st.q.clone()).collect();
    let Some(last_group) = lowest_outside(params.n, params.m, &used) else {
        return Ok(SpliceOutcome::NotFound {
            reason: "no processes left for the final group".into(),
            groups,
        });
    };
    let mut config = Configuration::initial(params, &covering.inputs)?;
    let mut execution = Vec::new();
    for stage in &covering.stages {
        for &act in &stage.alpha {
            config.apply(params, act)?;
        }
        execution.extend(&stage.alpha);
        let Some(gamma) = group_fragment(params, &config, &stage.q, s, depth_cap)? else {
            return Ok(SpliceOutcome::NotFound {
                reason: format!("no distinct-output fragment for stage {}", stage.j),
                groups,
            });
        };
        let (with_gamma, written) = written_locs(params, &config, &gamma)?;
        let (without, _) = written_locs(params, &config, &stage.beta)?;
        let (with, _) = written_locs(params, &with_gamma, &stage.beta)?;
        groups.push(SplicedGroup {
            q: stage.q.clone(),
            gamma: gamma.clone(),
            obliterated: with.agrees_outside(&without, &stage.q),
            written,
        });
        execution.extend(&gamma);
        execution.extend(&stage.beta);
        config = with;
    }
    let Some(gamma) = group_fragment(params, &config, &last_group, s, depth_cap)? else {
        return Ok(SpliceOutcome::NotFound {
            reason: "no distinct-output fragment for the final group".into(),
            groups,
        });
    };
    let (_, written) = written_locs(params, &config, &gamma)?;
    groups.push(SplicedGroup {
        q: last_group,
        gamma: gamma.clone(),
        obliterated: true,
        written,
    });
    execution.extend(gamma);
    let trace = run(params, &covering.inputs, &Schedule::scripted(execution))?;
    let instance = s + 1;
    let outputs = trace.outputs(instance);
    let report = check_k_agreement(&trace, params.k);
    if report.failed() && outputs.len() > params.k {
        Ok(SpliceOutcome::Refuted {
            trace: Box::new(trace),
            instance,
            outputs,
            groups,
        })
    } else {
        Ok(SpliceOutcome::NotFound {
            reason: format!(
                "instance {instance} produced {} distinct outputs",
                outputs.len()
            ),
            groups,
        })
    }
}
