//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use setspace::memory::SnapshotMode;
use setspace::protocol::{ProtocolKind, ProtocolParams};
use setspace::schedule::DEFAULT_STEP_CAP;

use crate::CliError;

/// Version written in the `schema` field of every config this build reads.
pub const SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub protocol: ProtocolKind,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    #[serde(default = "one")]
    pub s_instances: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<u32>,
    /// Overrides the protocol's own component count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    #[serde(default)]
    pub snapshot: SnapshotMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_register: Option<bool>,
    #[serde(default)]
    pub inputs: InputMode,
    #[serde(default)]
    pub suite: SuiteSpec,
    #[serde(default = "CheckKind::all")]
    pub checks: Vec<CheckKind>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Uniform draws from the domain, seeded per trace.
    #[default]
    Random,
    /// Every process proposes its own pid.
    Pids,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    /// Alternating eventually-bounded and round-robin schedules.
    #[default]
    Mixed,
    MBounded,
    RoundRobin,
    SeededRandom,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    #[serde(default)]
    pub kind: SuiteKind,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub step_cap: usize,
}

fn default_count() -> usize {
    10
}

fn default_cap() -> usize {
    DEFAULT_STEP_CAP
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            kind: SuiteKind::default(),
            count: default_count(),
            seed: 0,
            step_cap: default_cap(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Validity,
    KAgreement,
    Adoption,
    PairUniqueness,
    TupleUniqueness,
    Confinement,
    Termination,
    Replay,
    CollectConsistency,
}

impl CheckKind {
    pub fn all() -> Vec<CheckKind> {
        use CheckKind::*;
        vec![
            Validity,
            KAgreement,
            Adoption,
            PairUniqueness,
            TupleUniqueness,
            Confinement,
            Termination,
            Replay,
            CollectConsistency,
        ]
    }

    /// Whether a failure of this check counts as a safety violation.
    pub fn is_safety(self) -> bool {
        self != CheckKind::Termination
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub traces: bool,
}

impl ExperimentConfig {
    pub fn new(protocol: ProtocolKind, n: usize, m: usize, k: usize) -> Self {
        Self {
            schema: SCHEMA,
            protocol,
            n,
            m,
            k,
            s_instances: 1,
            domain: None,
            components: None,
            snapshot: SnapshotMode::Atomic,
            history_register: None,
            inputs: InputMode::Random,
            suite: SuiteSpec::default(),
            checks: CheckKind::all(),
            output: OutputSpec::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.params()?;
        Ok(config)
    }

    /// Validated protocol parameters.
    pub fn params(&self) -> Result<ProtocolParams, CliError> {
        if self.schema != SCHEMA {
            return Err(CliError::Config(format!(
                "schema {} is not supported (expected {SCHEMA})",
                self.schema
            )));
        }
        let bad = |e: setspace::error::Error| CliError::Config(e.to_string());
        let mut p = ProtocolParams::new(self.protocol, self.n, self.m, self.k)
            .map_err(bad)?
            .with_instances(self.s_instances)
            .map_err(bad)?
            .with_snapshot(self.snapshot);
        if let Some(d) = self.domain {
            p = p.with_domain(d).map_err(bad)?;
        }
        if let Some(c) = self.components {
            p = p.with_components(c).map_err(bad)?;
        }
        if let Some(h) = self.history_register {
            if h != p.history_register {
                p = p.with_history_register(h).map_err(bad)?;
            }
        }
        if self.suite.count > 0 && self.suite.step_cap == 0 {
            return Err(CliError::Config("step_cap must be positive".into()));
        }
        Ok(p)
    }
}
