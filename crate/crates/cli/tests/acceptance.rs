//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setspace::adversary::fixtures::{full_repeated, single_register_consensus};
use setspace::adversary::{
    build_covering, clone_lockstep, splice_and_refute, Covering, CoveringOutcome, SpliceOutcome,
    SplicedGroup,
};
use setspace::memory::{Pid, SnapshotMode};
use setspace::protocol::{DecisionKind, Event, Primitive, ProtocolKind, ProtocolParams, Thread};
use setspace::schedule::{random_inputs, run, Activation, Configuration, Schedule};
use setspace::trace::{Step, Trace};
use setspace::verify::{check_k_agreement, find_m_value_witness, WitnessOutcome};
use setspace_cli::config::{CheckKind, ExperimentConfig, SuiteKind};
use setspace_cli::measure::sequential_solo;
use setspace_cli::run_suite;

const CAP: usize = 100_000;

type Outcome = (bool, String);

fn points() -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for n in 3..=6 {
        for k in 1..n {
            for m in 1..=k {
                out.push((n, m, k));
            }
        }
    }
    out
}

/// Totals over suites at every grid point.
#[derive(Default)]
struct Tally {
    traces: usize,
    rows: usize,
    fails: usize,
    inconclusive: usize,
    /// Confinement runs whose trigger never happened: too few deciders.
    vacuous: usize,
    first_problem: Option<String>,
}

impl Tally {
    fn add(&mut self, config: &ExperimentConfig) -> ExperimentConfig {
        let summary = run_suite(config, false).expect("valid suite");
        self.traces += config.suite.count;
        self.rows += summary.rows.len();
        for row in &summary.rows {
            if row.verdict == "inconclusive" && row.check == "confinement" {
                self.vacuous += 1;
                continue;
            }
            if row.verdict != "pass" {
                if row.verdict == "fail" {
                    self.fails += 1;
                } else {
                    self.inconclusive += 1;
                }
                self.first_problem.get_or_insert_with(|| {
                    format!(
                        "{} n={} m={} k={} trace {} {}: {} {}",
                        row.protocol,
                        row.n,
                        row.m,
                        row.k,
                        row.trace,
                        row.check,
                        row.verdict,
                        row.detail
                    )
                });
            }
        }
        config.clone()
    }

    fn outcome(&self, what: &str) -> Outcome {
        let ok = self.fails == 0 && self.inconclusive == 0 && self.rows > 0;
        let mut msg = format!(
            "{what}: {} traces, {} checks, {} fail, {} inconclusive",
            self.traces, self.rows, self.fails, self.inconclusive
        );
        if self.vacuous > 0 {
            msg.push_str(&format!(
                ", {} confinement runs with too few deciders",
                self.vacuous
            ));
        }
        if let Some(p) = &self.first_problem {
            msg.push_str(&format!(" (first: {p})"));
        }
        (ok, msg)
    }
}

fn suite(
    kind: ProtocolKind,
    (n, m, k): (usize, usize, usize),
    s: u32,
    suite_kind: SuiteKind,
    count: usize,
    checks: &[CheckKind],
) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind, n, m, k);
    c.s_instances = s;
    c.suite.kind = suite_kind;
    c.suite.count = count;
    c.suite.seed = (n * 100 + m * 10 + k) as u64;
    c.suite.step_cap = CAP;
    c.checks = checks.to_vec();
    c
}

fn criterion_1() -> Outcome {
    use CheckKind::*;
    let mut t = Tally::default();
    for p in points() {
        t.add(&suite(
            ProtocolKind::OneShot,
            p,
            1,
            SuiteKind::Mixed,
            500,
            &[Validity, KAgreement, PairUniqueness, Confinement],
        ));
    }
    t.outcome("one-shot safety over n=3..6, 500 mixed schedules per point")
}

fn criterion_2() -> Outcome {
    let mut t = Tally::default();
    for p in points() {
        for (kind, s) in [(ProtocolKind::OneShot, 1), (ProtocolKind::Repeated, 5)] {
            t.add(&suite(
                kind,
                p,
                s,
                SuiteKind::MBounded,
                200,
                &[CheckKind::Termination],
            ));
        }
    }
    t.outcome("termination of one-shot and repeated (5 instances), 200 eventually-bounded schedules per point")
}

fn criterion_3() -> Outcome {
    use CheckKind::*;
    let mut t = Tally::default();
    let mut all_five = 0;
    for p in points() {
        let c = suite(
            ProtocolKind::Repeated,
            p,
            5,
            SuiteKind::Mixed,
            200,
            &[Validity, KAgreement, Adoption, TupleUniqueness],
        );
        t.add(&c);
        // instance coverage: every process of a round-robin run finishes all five
        let params = c.params().unwrap();
        let trace = run(
            &params,
            &random_inputs(&params, 1),
            &Schedule::round_robin(),
        )
        .unwrap();
        if (1..=5).all(|i| trace.decisions.iter().filter(|d| d.instance == i).count() == params.n) {
            all_five += 1;
        }
    }
    let (ok, msg) =
        t.outcome("repeated agreement and adoption, 5 instances, 200 mixed schedules per point");
    let n = points().len();
    (
        ok && all_five == n,
        format!("{msg}; {all_five}/{n} points decide all 5 instances"),
    )
}

fn criterion_4() -> Outcome {
    use CheckKind::*;
    let mut t = Tally::default();
    for p in points() {
        t.add(&suite(
            ProtocolKind::Anonymous,
            p,
            5,
            SuiteKind::Mixed,
            500,
            &[Validity, KAgreement, Adoption],
        ));
        t.add(&suite(
            ProtocolKind::Anonymous,
            p,
            5,
            SuiteKind::MBounded,
            200,
            &[Termination],
        ));
    }
    let (ok, msg) = t.outcome("anonymous with atomic snapshots");
    let (starved_ok, starved_msg) = starvation();
    (ok && starved_ok, format!("{msg}; {starved_msg}"))
}

/// p1 reads `A` component by component while p0 updates, before each of
/// p1's reads, the component p1 is about to read. No collect of p1 can
/// succeed, so p1 only finishes through `H`.
fn starvation() -> Outcome {
    const S: u32 = 10;
    const WINDOW: usize = 10_000;
    let params = ProtocolParams::new(ProtocolKind::Anonymous, 2, 1, 1)
        .unwrap()
        .with_instances(S)
        .unwrap()
        .with_snapshot(SnapshotMode::DoubleCollect);
    let inputs = vec![vec![0; S as usize], vec![1; S as usize]];
    let mut config = Configuration::initial(&params, &inputs).unwrap();
    let mut trace = Trace::new(params.clone(), config.clone());
    let step = |config: &mut Configuration, trace: &mut Trace, a: Activation| -> Step {
        let effect = config.apply(&params, a).unwrap();
        let s = Step::from_effect(trace.steps.len(), a.pid, a.thread, effect);
        trace.push(s.clone());
        s
    };
    let mut turns = 0usize;
    let mut invoked_at = Vec::new();
    while !config.machine(1).is_halted() && trace.steps.len() < 400_000 {
        if config.machine(0).is_halted() {
            break;
        }
        if let Primitive::ReadComponent { index } = config.machine(1).poised(&params, Thread::T1) {
            let mut guard = 0;
            loop {
                let s = step(&mut config, &mut trace, Activation::t1(0));
                if s.primitive == "update" && s.component == Some(index) {
                    break;
                }
                guard += 1;
                if guard > WINDOW || config.machine(0).is_halted() {
                    break;
                }
            }
        }
        turns += 1;
        let thread = if turns.is_multiple_of(2) {
            Thread::T2
        } else {
            Thread::T1
        };
        let s = step(&mut config, &mut trace, Activation { pid: 1, thread });
        for e in &s.events {
            if let Event::Invoke { .. } = e {
                invoked_at.push(s.step_index);
            }
        }
    }
    let p1: Vec<_> = trace.decisions.iter().filter(|d| d.pid == 1).collect();
    let collects = trace
        .steps
        .iter()
        .filter(|s| s.pid == 1 && s.scan_result.is_some())
        .count();
    let via_h = p1
        .iter()
        .filter(|d| d.kind == DecisionKind::HAdopted)
        .count();
    let slowest = p1
        .iter()
        .map(|d| d.step_index - invoked_at[d.instance as usize - 1])
        .max()
        .unwrap_or(usize::MAX);
    let p0_done = trace.decisions.iter().filter(|d| d.pid == 0).count();
    // p1 needs p0 to have started instance t+1 before `H` holds its t-th value
    let needed = S as usize - 1;
    let ok = collects == 0 && via_h >= needed && via_h == p1.len() && slowest <= WINDOW;
    (
        ok,
        format!(
            "double-collect starvation: p0 finished {p0_done} instances, p1 decided {} through H with {collects} completed collects, slowest decision {slowest} steps after invocation",
            via_h
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut searched = 0;
    let mut missing = Vec::new();
    let mut longest = 0;
    for (n, m, k) in points().into_iter().filter(|p| p.0 <= 4) {
        let params = ProtocolParams::new(ProtocolKind::OneShot, n, m, k).unwrap();
        let domain: Vec<u32> = (0..params.domain).collect();
        let pids: Vec<Pid> = (0..n).collect();
        for q in subsets(&pids, m) {
            for vset in subsets(&domain, m) {
                for v in permutations(&vset) {
                    searched += 1;
                    match find_m_value_witness(&params, &q, &v, 10_000).unwrap() {
                        WitnessOutcome::Witness(trace) => {
                            let got: BTreeSet<u32> = trace.outputs(1).into_iter().collect();
                            let want: BTreeSet<u32> = v.iter().copied().collect();
                            let movers = trace.steps.iter().all(|s| q.contains(&s.pid));
                            if got != want || !movers {
                                missing
                                    .push(format!("n={n} m={m} k={k} Q={q:?} V={v:?} bad witness"));
                            }
                            longest = longest.max(trace.steps.len());
                        }
                        WitnessOutcome::NotFound { .. } => {
                            missing.push(format!("n={n} m={m} k={k} Q={q:?} V={v:?}"));
                        }
                    }
                }
            }
        }
    }
    (
        missing.is_empty(),
        format!(
            "m-value witnesses for n in {{3,4}}: {searched} (Q, V) assignments, {} not found, longest witness {longest} steps{}",
            missing.len(),
            missing.first().map(|s| format!(" (first: {s})")).unwrap_or_default()
        ),
    )
}

fn subsets<T: Copy>(items: &[T], size: usize) -> Vec<Vec<T>> {
    if size == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for (i, &x) in items.iter().enumerate() {
        for mut rest in subsets(&items[i + 1..], size - 1) {
            rest.insert(0, x);
            out.push(rest);
        }
    }
    out
}

fn permutations<T: Copy>(items: &[T]) -> Vec<Vec<T>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

fn criterion_6() -> Outcome {
    let mut checked = 0;
    let mut wrong = Vec::new();
    for (n, m, k) in points() {
        let named = (n + 2 * m - k).min(n);
        let anonymous = (m + 1) * (n - k) + m * m + 1;
        for (kind, s, expected) in [
            (ProtocolKind::OneShot, 1, named),
            (ProtocolKind::Repeated, 3, named),
            (ProtocolKind::Anonymous, 3, anonymous),
        ] {
            let params = ProtocolParams::new(kind, n, m, k)
                .unwrap()
                .with_instances(s)
                .unwrap();
            let (measured, _) = sequential_solo(&params).unwrap();
            checked += 1;
            if !measured.complete || measured.touched != expected || measured.budget != expected {
                wrong.push(format!(
                    "{} n={n} m={m} k={k}: touched {} budget {} expected {expected}",
                    kind.name(),
                    measured.touched,
                    measured.budget
                ));
            }
        }
    }
    (
        wrong.is_empty(),
        format!(
            "register accounting: {checked} (protocol, point) pairs, {} mismatches{}",
            wrong.len(),
            wrong
                .first()
                .map(|s| format!(" (first: {s})"))
                .unwrap_or_default()
        ),
    )
}

/// The toy covering, shared by the refutation and obliteration criteria.
fn toy_covering() -> (Covering, SpliceOutcome, Duration) {
    let started = Instant::now();
    let params = single_register_consensus();
    let CoveringOutcome::Built(covering) = build_covering(&params, 10_000).unwrap() else {
        panic!("toy covering did not build");
    };
    let splice = splice_and_refute(&params, &covering, 10_000).unwrap();
    (covering, splice, started.elapsed())
}

fn criterion_7(covering: &SpliceOutcome, elapsed: Duration) -> Outcome {
    let params = single_register_consensus();
    let toy = match covering {
        SpliceOutcome::Refuted {
            trace, instance, ..
        } => {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("refutation.jsonl");
            trace
                .write_jsonl(std::fs::File::create(&path).unwrap())
                .unwrap();
            let saved =
                Trace::read_jsonl(std::io::BufReader::new(std::fs::File::open(&path).unwrap()))
                    .unwrap();
            let outputs: BTreeSet<u32> = saved.outputs(*instance).into_iter().collect();
            let failed = check_k_agreement(&saved, params.k).failed();
            let ok = outputs.len() == 2 && failed && elapsed < Duration::from_secs(60);
            (
                ok,
                format!(
                    "toy refuted in {:.3}s, instance {instance} outputs {outputs:?}",
                    elapsed.as_secs_f64()
                ),
            )
        }
        SpliceOutcome::NotFound { reason, .. } => (false, format!("toy not refuted: {reason}")),
    };
    let full = full_repeated(2, 1, 1);
    let resisted = match build_covering(&full, 10_000).unwrap() {
        CoveringOutcome::Stuck { stage, .. } => (true, format!("full size stuck at stage {stage}")),
        CoveringOutcome::Built(c) => match splice_and_refute(&full, &c, 10_000).unwrap() {
            SpliceOutcome::NotFound { reason, .. } => {
                (true, format!("full size not refuted: {reason}"))
            }
            SpliceOutcome::Refuted { .. } => (false, "full size refuted".into()),
        },
    };
    (toy.0 && resisted.0, format!("{}; {}", toy.1, resisted.1))
}

/// Replays the spliced execution and compares, for every stage, the
/// configuration after the block write with and without the group's fragment.
fn criterion_8(covering: &Covering, splice: &SpliceOutcome) -> Outcome {
    let params = single_register_consensus();
    let groups: &[SplicedGroup] = match splice {
        SpliceOutcome::Refuted { groups, .. } | SpliceOutcome::NotFound { groups, .. } => groups,
    };
    let mut config = Configuration::initial(&params, &covering.inputs).unwrap();
    let apply = |c: &Configuration, acts: &[Activation]| {
        let mut c = c.clone();
        for &a in acts {
            c.apply(&params, a).unwrap();
        }
        c
    };
    let mut equal = 0;
    for (stage, group) in covering.stages.iter().zip(groups) {
        config = apply(&config, &stage.alpha);
        let without = apply(&config, &stage.beta);
        let spliced = apply(&config, &group.gamma);
        let with = apply(&spliced, &stage.beta);
        let same_memory = with.memory == without.memory;
        let same_others = (0..params.n)
            .filter(|p| !stage.q.contains(p))
            .all(|p| with.machine(p) == without.machine(p));
        if same_memory && same_others && group.obliterated {
            equal += 1;
        }
        config = with;
    }
    let stages = covering.stages.len();
    (
        stages > 0 && equal == stages && groups.len() == stages + 1,
        format!(
            "obliteration: {equal}/{stages} stages equal with and without the spliced fragment"
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut diverged = Vec::new();
    let mut paused = 0;
    let mut pairs = 0;
    for run_no in 0..100 {
        let n = rng.gen_range(3..=6);
        let k = rng.gen_range(1..n);
        let m = rng.gen_range(1..=k);
        let mode = if rng.gen() {
            SnapshotMode::DoubleCollect
        } else {
            SnapshotMode::Atomic
        };
        let params = ProtocolParams::new(ProtocolKind::Anonymous, n, m, k)
            .unwrap()
            .with_instances(rng.gen_range(1..=3))
            .unwrap()
            .with_snapshot(mode);
        let clone = n - 1;
        let original = rng.gen_range(0..clone);
        let mut inputs = random_inputs(&params, rng.gen());
        inputs[clone] = inputs[original].clone();
        let movers: Vec<Pid> = (0..clone).collect();
        let len = rng.gen_range(20..400);
        let acts: Vec<Activation> = (0..len)
            .map(|_| {
                let pid = *movers.choose(&mut rng).unwrap();
                if rng.gen_ratio(1, 5) {
                    Activation::t2(pid)
                } else {
                    Activation::t1(pid)
                }
            })
            .collect();
        let trace = run(&params, &inputs, &Schedule::scripted(acts)).unwrap();
        let pause = rng.gen_range(0..len);
        match clone_lockstep(&trace, original, clone, Some(pause)) {
            Ok(mut world) => {
                pairs += world.pairs;
                if world.paused.is_some() {
                    paused += 1;
                    if let Err(e) = world.resume() {
                        diverged.push(format!("run {run_no}: resume failed: {e}"));
                    }
                }
            }
            Err(e) => diverged.push(format!("run {run_no}: {e}")),
        }
    }
    (
        diverged.is_empty(),
        format!(
            "clone lockstep: 100 runs, {pairs} step pairs compared, {paused} paused clones, {} divergences{}",
            diverged.len(),
            diverged.first().map(|s| format!(" (first: {s})")).unwrap_or_default()
        ),
    )
}

fn main() {
    let (covering, splice, elapsed) = toy_covering();
    let criteria: Vec<(usize, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, Box::new(criterion_1)),
        (2, Box::new(criterion_2)),
        (3, Box::new(criterion_3)),
        (4, Box::new(criterion_4)),
        (5, Box::new(criterion_5)),
        (6, Box::new(criterion_6)),
        (7, Box::new(|| criterion_7(&splice, elapsed))),
        (8, Box::new(|| criterion_8(&covering, &splice))),
        (9, Box::new(criterion_9)),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (no, f) in criteria {
        if only.is_some_and(|o| o != no) {
            continue;
        }
        let started = Instant::now();
        let (ok, msg) = f();
        if !ok {
            failed += 1;
        }
        println!(
            "{} criterion {no}: {msg} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
