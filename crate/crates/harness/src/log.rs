//! Episode logs as JSON lines: one header, one record per tick, one summary.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use svo_agents::SvoMode;
use svo_sim::{AgentId, FailureCause, RewardBreakdown, VehicleState};

use crate::error::{io_err, HarnessError, Result};

pub const LOG_FORMAT: &str = "svo-episode-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub config_digest: String,
    pub episode: u64,
    pub seed: u64,
    pub mode: SvoMode,
    pub horizon: u64,
    pub dt: f64,
    pub initial: Vec<VehicleState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentAction {
    pub agent_id: AgentId,
    pub action: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentReward {
    pub agent_id: AgentId,
    #[serde(flatten)]
    pub reward: RewardBreakdown,
}

/// Estimates one observer holds about its neighbors, with the truths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Estimates {
    pub observer: AgentId,
    pub neighbors: Vec<AgentId>,
    pub estimates: Vec<f64>,
    pub truths: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Failure {
    pub agent_id: AgentId,
    pub cause: FailureCause,
}

/// State after the transition of `tick` (the tick counter after stepping).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TickRecord {
    pub tick: u64,
    pub vehicles: Vec<VehicleState>,
    /// Agents that acted on this transition.
    pub actions: Vec<AgentAction>,
    pub rewards: Vec<AgentReward>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimates: Vec<Estimates>,
    pub failures: Vec<Failure>,
    pub successes: Vec<AgentId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Success { tick: u64 },
    Crash { tick: u64, cause: FailureCause },
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub agent_id: AgentId,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub ticks: u64,
    pub outcomes: Vec<AgentOutcome>,
}

/// One line of a log file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogLine {
    Header(LogHeader),
    Tick(TickRecord),
    Summary(Summary),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub ticks: Vec<TickRecord>,
    pub summary: Summary,
}

impl EpisodeLog {
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        let mut put = |l: LogLine| {
            out.push_str(&serde_json::to_string(&l).expect("log line serializes"));
            out.push('\n');
        };
        put(LogLine::Header(self.header.clone()));
        for t in &self.ticks {
            put(LogLine::Tick(t.clone()));
        }
        put(LogLine::Summary(self.summary.clone()));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = None;
        let mut ticks = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let log_err = |detail: String| HarnessError::Log { line: i + 1, detail };
            match parse_log_line(line).map_err(|e| log_err(e.to_string()))? {
                LogLine::Header(h) if header.is_none() && i == 0 => header = Some(h),
                LogLine::Tick(t) if header.is_some() && summary.is_none() => ticks.push(t),
                LogLine::Summary(s) if header.is_some() && summary.is_none() => summary = Some(s),
                _ => return Err(log_err("record out of order".into())),
            }
        }
        let header = header.ok_or_else(|| HarnessError::Log {
            line: 1,
            detail: "missing header".into(),
        })?;
        let summary = summary.ok_or_else(|| HarnessError::Log {
            line: ticks.len() + 2,
            detail: "missing summary".into(),
        })?;
        let log = Self { header, ticks, summary };
        log.validate().map_err(|detail| HarnessError::Log { line: 0, detail })?;
        Ok(log)
    }

    /// Structural invariants: tick count within the horizon, one outcome
    /// per agent, at most one failure per agent.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.ticks.len() as u64 > self.header.horizon || self.summary.ticks != self.ticks.len() as u64 {
            return Err(format!(
                "{} tick records for horizon {} (summary says {})",
                self.ticks.len(),
                self.header.horizon,
                self.summary.ticks
            ));
        }
        let ids: Vec<AgentId> = self.header.initial.iter().map(|v| v.agent_id).collect();
        let outcome_ids: Vec<AgentId> = self.summary.outcomes.iter().map(|o| o.agent_id).collect();
        if ids != outcome_ids {
            return Err("summary outcomes do not match the agents".into());
        }
        let mut failed: BTreeMap<AgentId, usize> = BTreeMap::new();
        for t in &self.ticks {
            for f in &t.failures {
                *failed.entry(f.agent_id).or_default() += 1;
            }
        }
        for o in &self.summary.outcomes {
            let n = failed.get(&o.agent_id).copied().unwrap_or(0);
            let crashed = matches!(o.outcome, Outcome::Crash { .. });
            if n > 1 || (n == 1) != crashed {
                return Err(format!(
                    "agent {} has {n} failures and outcome {:?}",
                    o.agent_id, o.outcome
                ));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::config::write_text(path, &self.to_lines())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }
}

pub fn parse_log_line(line: &str) -> std::result::Result<LogLine, serde_json::Error> {
    serde_json::from_str(line)
}
