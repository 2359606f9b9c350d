//! Schedule suites and their CSV summaries.
//!
//! One row per (trace, check), columns in [`COLUMNS`] order. Rows carry no
//! timings or paths, so equal configs give byte-identical files.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use setspace::protocol::{ProtocolKind, ProtocolParams};
use setspace::schedule::{
    gen_m_bounded_suite, gen_mixed_suite, pid_inputs, random_inputs, run, Schedule,
};
use setspace::trace::Trace;
use setspace::verify::{
    check_adoption, check_collect_consistency, check_k_agreement, check_m_of_termination,
    check_validity, monitor_confinement, monitor_pair_uniqueness, monitor_tuple_uniqueness, replay,
    PropertyReport, Verdict,
};

use crate::config::{CheckKind, ExperimentConfig, InputMode, SuiteKind};
use crate::CliError;

pub const COLUMNS: [&str; 12] = [
    "trace",
    "protocol",
    "n",
    "m",
    "k",
    "schedule",
    "steps",
    "truncated",
    "check",
    "verdict",
    "step_index",
    "detail",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SuiteRow {
    pub trace: usize,
    pub protocol: String,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub schedule: String,
    pub steps: usize,
    pub truncated: bool,
    pub check: String,
    /// `pass`, `fail` or `inconclusive`.
    pub verdict: String,
    pub step_index: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct SuiteSummary {
    pub rows: Vec<SuiteRow>,
    /// Full traces, kept only when asked for.
    pub traces: Vec<Trace>,
    pub safety_failures: usize,
    pub liveness_failures: usize,
    pub inconclusive: usize,
}

impl SuiteSummary {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CliError> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(COLUMNS)?;
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Writes `summary.csv` and, if traces were kept, `traces/trace_NNNN.jsonl`.
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("summary.csv"))?)?;
        if !self.traces.is_empty() {
            let tdir = dir.join("traces");
            std::fs::create_dir_all(&tdir)?;
            for (i, t) in self.traces.iter().enumerate() {
                let f = std::fs::File::create(tdir.join(format!("trace_{i:04}.jsonl")))?;
                t.write_jsonl(std::io::BufWriter::new(f))?;
            }
        }
        Ok(())
    }
}

pub fn schedules(config: &ExperimentConfig, params: &ProtocolParams) -> Vec<Schedule> {
    let s = &config.suite;
    let list = match s.kind {
        SuiteKind::Mixed => gen_mixed_suite(params, s.count, s.seed),
        SuiteKind::MBounded => gen_m_bounded_suite(params, s.count, s.seed),
        SuiteKind::RoundRobin => vec![Schedule::round_robin(); s.count],
        SuiteKind::SeededRandom => (0..s.count as u64)
            .map(|i| Schedule::seeded_random(s.seed.wrapping_add(i)))
            .collect(),
    };
    list.into_iter().map(|x| x.with_cap(s.step_cap)).collect()
}

/// Inputs for the `i`-th trace of a suite.
pub fn trace_inputs(config: &ExperimentConfig, params: &ProtocolParams, i: usize) -> Vec<Vec<u32>> {
    match config.inputs {
        InputMode::Pids => pid_inputs(params),
        InputMode::Random => {
            let seed = config.suite.seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            random_inputs(params, seed)
        }
    }
}

/// Runs one check, or `None` when it does not apply to the protocol.
pub fn run_check(check: CheckKind, trace: &Trace, schedule: &Schedule) -> Option<PropertyReport> {
    let kind = trace.params.kind;
    Some(match check {
        CheckKind::Validity => check_validity(trace),
        CheckKind::KAgreement => check_k_agreement(trace, trace.params.k),
        CheckKind::Adoption => check_adoption(trace),
        CheckKind::PairUniqueness if kind == ProtocolKind::OneShot => {
            monitor_pair_uniqueness(trace)
        }
        CheckKind::TupleUniqueness if kind == ProtocolKind::Repeated => {
            monitor_tuple_uniqueness(trace)
        }
        CheckKind::Confinement if kind == ProtocolKind::OneShot => monitor_confinement(trace),
        CheckKind::Termination => check_m_of_termination(trace, schedule),
        CheckKind::Replay => replay(trace),
        CheckKind::CollectConsistency => check_collect_consistency(trace),
        _ => return None,
    })
}

pub fn run_suite(config: &ExperimentConfig, keep_traces: bool) -> Result<SuiteSummary, CliError> {
    let params = config.params()?;
    let mut summary = SuiteSummary::default();
    for (i, schedule) in schedules(config, &params).iter().enumerate() {
        let inputs = trace_inputs(config, &params, i);
        let trace = run(&params, &inputs, schedule)?;
        for &check in &config.checks {
            let Some(report) = run_check(check, &trace, schedule) else {
                continue;
            };
            let (verdict, step_index, detail) = match report.verdict {
                Verdict::Pass => ("pass", None, String::new()),
                Verdict::Fail {
                    step_index,
                    explanation,
                } => {
                    if check.is_safety() {
                        summary.safety_failures += 1;
                    } else {
                        summary.liveness_failures += 1;
                    }
                    ("fail", Some(step_index), explanation)
                }
                Verdict::Inconclusive { reason } => {
                    summary.inconclusive += 1;
                    ("inconclusive", None, reason)
                }
            };
            summary.rows.push(SuiteRow {
                trace: i,
                protocol: params.kind.name().into(),
                n: params.n,
                m: params.m,
                k: params.k,
                schedule: schedule.label(),
                steps: trace.steps.len(),
                truncated: trace.truncated,
                check: report.property,
                verdict: verdict.into(),
                step_index,
                detail,
            });
        }
        if keep_traces {
            summary.traces.push(trace);
        }
    }
    Ok(summary)
}
