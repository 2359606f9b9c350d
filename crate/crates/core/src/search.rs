//! Bounded exploration of activation sequences from a configuration.
//!
//! Configurations are deduplicated by a 64-bit hash. Both searches report
//! whether the reachable space was exhausted or a cap cut them short, so
//! callers can tell "nothing exists" from "nothing found within bounds".

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet, VecDeque};
use std::hash::{Hash, Hasher};

use crate::protocol::ProtocolParams;
use crate::schedule::{Activation, Configuration};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Goal {
    Reached,
    Continue,
    /// Stop exploring below this configuration.
    Prune,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SearchOutcome {
    Found(Vec<Activation>),
    /// Every configuration reachable within the caps was visited.
    Exhausted,
    /// The depth or node cap cut the search short.
    CapReached,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Limits {
    pub depth_cap: usize,
    pub node_cap: usize,
}

impl Limits {
    pub fn depth(depth_cap: usize) -> Self {
        Self {
            depth_cap,
            node_cap: 2_000_000,
        }
    }
}

pub fn config_hash(c: &Configuration) -> u64 {
    let mut h = DefaultHasher::new();
    c.hash(&mut h);
    h.finish()
}

fn expand(params: &ProtocolParams, config: &Configuration, a: Activation) -> Option<Configuration> {
    if config.machines.get(a.pid)?.is_halted() {
        return None;
    }
    let mut next = config.clone();
    next.apply(params, a).ok()?;
    Some(next)
}

/// Breadth-first: returns a shortest activation sequence reaching the goal.
pub fn bfs(
    params: &ProtocolParams,
    start: &Configuration,
    movers: &[Activation],
    limits: Limits,
    goal: impl Fn(&Configuration) -> Goal,
) -> SearchOutcome {
    match goal(start) {
        Goal::Reached => return SearchOutcome::Found(Vec::new()),
        Goal::Prune => return SearchOutcome::Exhausted,
        Goal::Continue => {}
    }
    // (parent, activation) per discovered node; node 0 is the start.
    let mut tree: Vec<(usize, Activation)> = vec![(usize::MAX, Activation::t1(0))];
    let mut seen = HashSet::from([config_hash(start)]);
    let mut frontier = VecDeque::from([(start.clone(), 0usize, 0usize)]);
    let mut capped = false;
    while let Some((config, node, depth)) = frontier.pop_front() {
        if depth >= limits.depth_cap {
            capped = true;
            continue;
        }
        for &a in movers {
            let Some(next) = expand(params, &config, a) else {
                continue;
            };
            if !seen.insert(config_hash(&next)) {
                continue;
            }
            tree.push((node, a));
            let id = tree.len() - 1;
            match goal(&next) {
                Goal::Reached => return SearchOutcome::Found(path_to(&tree, id)),
                Goal::Prune => continue,
                Goal::Continue => {}
            }
            if tree.len() >= limits.node_cap {
                return SearchOutcome::CapReached;
            }
            frontier.push_back((next, id, depth + 1));
        }
    }
    if capped {
        SearchOutcome::CapReached
    } else {
        SearchOutcome::Exhausted
    }
}

fn path_to(tree: &[(usize, Activation)], mut id: usize) -> Vec<Activation> {
    let mut path = Vec::new();
    while id != 0 {
        let (parent, a) = tree[id];
        path.push(a);
        id = parent;
    }
    path.reverse();
    path
}

struct Frame {
    config: Configuration,
    remaining: usize,
    order: Vec<Activation>,
    next_child: usize,
    cut: bool,
    hash: u64,
}

/// Iterative deepening with doubling limits. Children are tried starting
/// with the process that moved last, so solo-heavy runs come first.
pub fn iddfs(
    params: &ProtocolParams,
    start: &Configuration,
    movers: &[Activation],
    limits: Limits,
    goal: impl Fn(&Configuration) -> Goal,
) -> SearchOutcome {
    match goal(start) {
        Goal::Reached => return SearchOutcome::Found(Vec::new()),
        Goal::Prune => return SearchOutcome::Exhausted,
        Goal::Continue => {}
    }
    if limits.depth_cap == 0 || movers.is_empty() {
        return if movers.is_empty() {
            SearchOutcome::Exhausted
        } else {
            SearchOutcome::CapReached
        };
    }
    let mut nodes = 0usize;
    let mut limit = limits.depth_cap.min(16);
    loop {
        // hash -> (remaining budget when explored, whether that exploration was cut)
        let mut table: HashMap<u64, (usize, bool)> = HashMap::new();
        let mut path: Vec<Activation> = Vec::new();
        let mut stack = vec![Frame {
            config: start.clone(),
            remaining: limit,
            order: movers.to_vec(),
            next_child: 0,
            cut: false,
            hash: config_hash(start),
        }];
        let mut root_cut = false;
        while let Some(top) = stack.last_mut() {
            if top.remaining == 0 {
                top.cut = true;
            }
            if top.remaining == 0 || top.next_child >= top.order.len() {
                let done = stack.pop().expect("non-empty");
                table.insert(done.hash, (done.remaining, done.cut));
                match stack.last_mut() {
                    Some(parent) => {
                        parent.cut |= done.cut;
                        path.pop();
                    }
                    None => root_cut = done.cut,
                }
                continue;
            }
            let a = top.order[top.next_child];
            top.next_child += 1;
            let Some(next) = expand(params, &top.config, a) else {
                continue;
            };
            nodes += 1;
            if nodes > limits.node_cap {
                return SearchOutcome::CapReached;
            }
            match goal(&next) {
                Goal::Reached => {
                    path.push(a);
                    return SearchOutcome::Found(path);
                }
                Goal::Prune => continue,
                Goal::Continue => {}
            }
            let remaining = top.remaining - 1;
            let hash = config_hash(&next);
            if let Some(&(seen_remaining, seen_cut)) = table.get(&hash) {
                if seen_remaining >= remaining {
                    top.cut |= seen_cut;
                    continue;
                }
            }
            if stack.iter().any(|f| f.hash == hash) {
                // a cycle on the current path
                continue;
            }
            let mut order = movers.to_vec();
            if let Some(pos) = order.iter().position(|m| *m == a) {
                order.rotate_left(pos);
            }
            path.push(a);
            stack.push(Frame {
                config: next,
                remaining,
                order,
                next_child: 0,
                cut: false,
                hash,
            });
        }
        if !root_cut {
            return SearchOutcome::Exhausted;
        }
        if limit >= limits.depth_cap {
            return SearchOutcome::CapReached;
        }
        limit = (limit * 2).min(limits.depth_cap);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ProtocolKind, ProtocolParams};

    fn setup() -> (ProtocolParams, Configuration) {
        let params = ProtocolParams::new(ProtocolKind::OneShot, 2, 1, 1)
            .unwrap()
            .with_components(2)
            .unwrap();
        let c = Configuration::initial(&params, &[vec![0], vec![1]]).unwrap();
        (params, c)
    }

    fn decided(c: &Configuration, pid: usize) -> Goal {
        if c.machine(pid).output(1).is_some() {
            Goal::Reached
        } else {
            Goal::Continue
        }
    }

    #[test]
    fn bfs_finds_shortest_solo_decision() {
        let (params, c) = setup();
        let movers = [Activation::t1(0), Activation::t1(1)];
        let out = bfs(&params, &c, &movers, Limits::depth(20), |c| decided(c, 1));
        assert_eq!(out, SearchOutcome::Found(vec![Activation::t1(1); 4]));
    }

    #[test]
    fn iddfs_agrees_with_bfs_on_reachability() {
        let (params, c) = setup();
        let movers = [Activation::t1(0), Activation::t1(1)];
        let SearchOutcome::Found(path) =
            iddfs(&params, &c, &movers, Limits::depth(64), |c| decided(c, 0))
        else {
            panic!("expected a path");
        };
        let mut end = c.clone();
        for a in path {
            end.apply(&params, a).unwrap();
        }
        assert!(end.machine(0).output(1).is_some());
    }

    #[test]
    fn zero_depth_finds_nothing() {
        let (params, c) = setup();
        let movers = [Activation::t1(0)];
        assert_eq!(
            iddfs(&params, &c, &movers, Limits::depth(0), |c| decided(c, 0)),
            SearchOutcome::CapReached
        );
    }

    #[test]
    fn exhausts_finite_space() {
        let (params, c) = setup();
        // p0 alone can never make p1 decide
        let movers = [Activation::t1(0)];
        assert_eq!(
            bfs(&params, &c, &movers, Limits::depth(100), |c| decided(c, 1)),
            SearchOutcome::Exhausted
        );
        assert_eq!(
            iddfs(&params, &c, &movers, Limits::depth(100), |c| decided(c, 1)),
            SearchOutcome::Exhausted
        );
    }
}
