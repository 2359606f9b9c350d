//! Execution records and their JSON-lines encoding.
//!
//! A trace file holds one `initial` record (parameters and starting
//! configuration), one `step` record per activation and a closing `summary`
//! record with the decisions and the truncation flag.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{Loc, Pid, RegisterValue, Value};
use crate::protocol::{DecisionKind, Effect, Event, Primitive, ProtocolParams, Thread};
use crate::schedule::{Activation, Configuration};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionEvent {
    pub pid: Pid,
    pub instance: u32,
    pub value: Value,
    pub step_index: usize,
    pub kind: DecisionKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub step_index: usize,
    pub pid: Pid,
    pub thread: Thread,
    pub primitive: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_written: Option<RegisterValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_result: Option<Vec<RegisterValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub read_result: Option<RegisterValue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Event>,
}

impl Step {
    pub fn from_effect(step_index: usize, pid: Pid, thread: Thread, effect: Effect) -> Self {
        let primitive = effect.primitive();
        let (object, component) = match primitive.loc() {
            Some(Loc::Component { index, .. }) => (Some("A".to_string()), Some(index)),
            Some(Loc::Register { .. }) => (Some("H".to_string()), None),
            None if *primitive == Primitive::Scan => (Some("A".to_string()), None),
            None => (None, None),
        };
        Self {
            step_index,
            pid,
            thread,
            primitive: primitive.name().to_string(),
            object,
            component,
            value_written: primitive.written().cloned(),
            scan_result: effect.scan_result,
            read_result: effect.read_result,
            events: effect.events,
        }
    }

    pub fn activation(&self) -> Activation {
        Activation {
            pid: self.pid,
            thread: self.thread,
        }
    }

    /// Location written by this step.
    pub fn written_loc(&self) -> Option<Loc> {
        self.value_written.as_ref()?;
        match (self.object.as_deref(), self.component) {
            (Some("A"), Some(index)) => Some(Loc::Component { object: 0, index }),
            (Some("H"), None) => Some(Loc::Register { register: 0 }),
            _ => None,
        }
    }

    pub fn is_write(&self) -> bool {
        self.value_written.is_some()
    }

    pub fn decisions(&self) -> impl Iterator<Item = DecisionEvent> + '_ {
        self.events.iter().filter_map(move |e| match e {
            Event::Decide {
                instance,
                value,
                kind,
            } => Some(DecisionEvent {
                pid: self.pid,
                instance: *instance,
                value: *value,
                step_index: self.step_index,
                kind: *kind,
            }),
            _ => None,
        })
    }

    pub fn invocations(&self) -> impl Iterator<Item = (u32, Value)> + '_ {
        self.events.iter().filter_map(|e| match e {
            Event::Invoke { instance, input } => Some((*instance, *input)),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub params: ProtocolParams,
    pub initial: Configuration,
    pub steps: Vec<Step>,
    pub decisions: Vec<DecisionEvent>,
    pub truncated: bool,
}

impl Trace {
    pub fn new(params: ProtocolParams, initial: Configuration) -> Self {
        Self {
            params,
            initial,
            steps: Vec::new(),
            decisions: Vec::new(),
            truncated: false,
        }
    }

    pub fn push(&mut self, step: Step) {
        self.decisions.extend(step.decisions());
        self.steps.push(step);
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.steps.iter().map(Step::activation).collect()
    }

    /// Distinct outputs of `instance`, in order of first appearance.
    pub fn outputs(&self, instance: u32) -> Vec<Value> {
        let mut out = Vec::new();
        for d in self.decisions.iter().filter(|d| d.instance == instance) {
            if !out.contains(&d.value) {
                out.push(d.value);
            }
        }
        out
    }

    pub fn max_instance(&self) -> u32 {
        self.decisions.iter().map(|d| d.instance).max().unwrap_or(0)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let line = |w: &mut W, rec: &Record| -> std::io::Result<()> {
            serde_json::to_writer(&mut *w, rec)?;
            w.write_all(b"\n")
        };
        line(
            &mut w,
            &Record::Initial {
                params: self.params.clone(),
                initial: self.initial.clone(),
            },
        )?;
        for step in &self.steps {
            line(&mut w, &Record::Step(step.clone()))?;
        }
        line(
            &mut w,
            &Record::Summary {
                decisions: self.decisions.clone(),
                truncated: self.truncated,
            },
        )
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace> {
        let mut trace: Option<Trace> = None;
        let mut summary = None;
        for (no, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::MalformedTrace(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| Error::MalformedTrace(format!("line {}: {e}", no + 1)))?;
            match (rec, trace.as_mut()) {
                (Record::Initial { params, initial }, None) => {
                    let model = Arc::new(params.memory_model());
                    let initial = initial.with_model(model);
                    trace = Some(Trace::new(params, initial));
                }
                (Record::Step(step), Some(t)) if summary.is_none() => t.steps.push(step),
                (
                    Record::Summary {
                        decisions,
                        truncated,
                    },
                    Some(_),
                ) if summary.is_none() => {
                    summary = Some((decisions, truncated));
                }
                _ => {
                    return Err(Error::MalformedTrace(format!(
                        "line {}: record out of order",
                        no + 1
                    )))
                }
            }
        }
        let mut trace = trace.ok_or_else(|| Error::MalformedTrace("no initial record".into()))?;
        let (decisions, truncated) =
            summary.ok_or_else(|| Error::MalformedTrace("no summary record".into()))?;
        trace.decisions = decisions;
        trace.truncated = truncated;
        Ok(trace)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Initial {
        params: ProtocolParams,
        initial: Configuration,
    },
    Step(Step),
    Summary {
        decisions: Vec<DecisionEvent>,
        truncated: bool,
    },
}
