//! Episode traces: typed protocol messages, per-action turn records and the
//! line-delimited JSON file format.
//!
//! A trace file is one JSON object per line. The first line is the header,
//! the last the terminal record; everything between is a turn record.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::Phase;
use crate::engine::{advance_clock, SimConfig};
use crate::explorer::{ExplorationMode, ExplorationReport};
use crate::geometry::{normalize_angle, Point2, Pose};
use crate::perception::QueryRecord;
use crate::world::AgentClass;

pub const TRACE_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MessageBody {
    AssignWaypoint { waypoint: Point2, target: String },
    ExplorationReport(Box<ExplorationReport>),
    MoveExecuted { before: Pose, after: Pose },
    EpisodeEnd { result: EpisodeResult },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMessage {
    pub sender: AgentClass,
    pub turn: usize,
    pub body: MessageBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanKind {
    Full360,
    HalfAngle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    /// Coordinator path evaluation; carries no motion.
    Evaluate,
    Move,
    SelectMode {
        mode: ExplorationMode,
    },
    /// One heading of a rotational scan.
    Scan {
        scan: usize,
        kind: ScanKind,
        index: usize,
        looking_for: String,
        visible: Vec<String>,
    },
    Report,
    Operator {
        command: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: usize,
    pub time: f64,
    pub agent: AgentClass,
    pub action: Action,
    pub pose_before: Pose,
    pub pose_after: Pose,
    pub displacement: f64,
    pub rotation: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub queries: Vec<QueryRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub messages: Vec<ProtocolMessage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phase_changes: Vec<[Phase; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Budget,
    NoCandidates,
    DelegationCap,
    OperatorEnded,
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FailureReason::Budget => "budget",
            FailureReason::NoCandidates => "no_candidates",
            FailureReason::DelegationCap => "delegation_cap",
            FailureReason::OperatorEnded => "operator_ended",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EpisodeResult {
    Success,
    Failure { reason: FailureReason },
    Aborted { error: String },
}

impl EpisodeResult {
    pub fn is_success(&self) -> bool {
        matches!(self, EpisodeResult::Success)
    }
}

impl std::fmt::Display for EpisodeResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EpisodeResult::Success => f.write_str("success"),
            EpisodeResult::Failure { reason } => write!(f, "failure({reason})"),
            EpisodeResult::Aborted { error } => write!(f, "aborted({error})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: u32,
    pub scene: String,
    pub oracle: String,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalRecord {
    pub turn: usize,
    pub time: f64,
    pub result: EpisodeResult,
    pub d_dt: f64,
    pub humanoid: Pose,
    pub quadruped: Pose,
    /// Queries answered after the last turn record, e.g. before an abort.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub queries: Vec<QueryRecord>,
    pub message: ProtocolMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceLine {
    Header(TraceHeader),
    Turn(TurnRecord),
    Terminal(TerminalRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub records: Vec<TurnRecord>,
    pub terminal: TerminalRecord,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn malformed(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::Malformed {
        line,
        message: message.into(),
    }
}

impl EpisodeTrace {
    pub fn result(&self) -> &EpisodeResult {
        &self.terminal.result
    }

    pub fn records_of(&self, agent: AgentClass) -> impl Iterator<Item = &TurnRecord> {
        self.records.iter().filter(move |r| r.agent == agent)
    }

    pub fn messages(&self) -> impl Iterator<Item = &ProtocolMessage> {
        self.records
            .iter()
            .flat_map(|r| r.messages.iter())
            .chain(std::iter::once(&self.terminal.message))
    }

    pub fn reports(&self) -> impl Iterator<Item = &ExplorationReport> {
        self.messages().filter_map(|m| match &m.body {
            MessageBody::ExplorationReport(r) => Some(r.as_ref()),
            _ => None,
        })
    }

    pub fn assignments(&self) -> impl Iterator<Item = Point2> + '_ {
        self.messages().filter_map(|m| match &m.body {
            MessageBody::AssignWaypoint { waypoint, .. } => Some(*waypoint),
            _ => None,
        })
    }

    /// Every answered query, in the order it was asked.
    pub fn queries(&self) -> impl Iterator<Item = &QueryRecord> {
        self.records
            .iter()
            .flat_map(|r| r.queries.iter())
            .chain(self.terminal.queries.iter())
    }

    /// Positions of one agent, starting pose included, one per record.
    pub fn positions(&self, agent: AgentClass) -> Vec<Point2> {
        let mut out = Vec::new();
        for r in self.records_of(agent) {
            if out.is_empty() {
                out.push(r.pose_before.position);
            }
            out.push(r.pose_after.position);
        }
        out
    }

    pub fn poses(&self) -> Vec<(AgentClass, Pose)> {
        self.records.iter().map(|r| (r.agent, r.pose_after)).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut line = |l: &TraceLine| -> io::Result<()> {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n")
        };
        line(&TraceLine::Header(self.header.clone()))?;
        for r in &self.records {
            line(&TraceLine::Turn(r.clone()))?;
        }
        line(&TraceLine::Terminal(self.terminal.clone()))
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn save(&self, path: &std::path::Path) -> io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush()
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TraceError> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(io::BufReader::new(file))
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, TraceError> {
        Self::read_jsonl(text.as_bytes())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, TraceError> {
        let mut header = None;
        let mut records = Vec::new();
        let mut terminal: Option<(usize, TerminalRecord)> = None;
        let mut last_line = 0;
        for (i, text) in r.lines().enumerate() {
            let n = i + 1;
            last_line = n;
            let text = text?;
            if text.trim().is_empty() {
                continue;
            }
            if let Some((at, _)) = &terminal {
                return Err(malformed(n, format!("content after terminal record on line {at}")));
            }
            let parsed: TraceLine = serde_json::from_str(&text).map_err(|e| malformed(n, e.to_string()))?;
            match parsed {
                TraceLine::Header(h) if header.is_none() && records.is_empty() => {
                    if h.format != TRACE_FORMAT {
                        return Err(malformed(n, format!("unsupported trace format {}", h.format)));
                    }
                    header = Some(h);
                }
                TraceLine::Header(_) => return Err(malformed(n, "unexpected header")),
                _ if header.is_none() => return Err(malformed(n, "first line must be the header")),
                TraceLine::Turn(t) => {
                    if let Some(prev) = records.last().map(|p: &TurnRecord| p.time) {
                        if t.time < prev {
                            return Err(malformed(n, "simulated time decreases"));
                        }
                    }
                    records.push(t);
                }
                TraceLine::Terminal(t) => terminal = Some((n, t)),
            }
        }
        let header = header.ok_or_else(|| malformed(1, "empty trace"))?;
        let (_, terminal) = terminal.ok_or_else(|| malformed(last_line, "missing terminal record"))?;
        Ok(Self {
            header,
            records,
            terminal,
        })
    }
}

/// Accumulates turn records and owns the simulated clock.
#[derive(Debug, Clone, Default)]
pub struct Recorder {
    pub records: Vec<TurnRecord>,
    pub clock: f64,
}

impl Recorder {
    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        config: &SimConfig,
        turn: usize,
        agent: AgentClass,
        action: Action,
        before: Pose,
        after: Pose,
        queries: Vec<QueryRecord>,
        messages: Vec<ProtocolMessage>,
        phase_changes: Vec<[Phase; 2]>,
    ) -> &TurnRecord {
        let displacement = before.position.distance(after.position);
        let rotation = normalize_angle(after.heading - before.heading);
        self.clock = advance_clock(self.clock, displacement, rotation.abs(), queries.len(), agent, config);
        self.records.push(TurnRecord {
            turn,
            time: self.clock,
            agent,
            action,
            pose_before: before,
            pose_after: after,
            displacement,
            rotation,
            queries,
            messages,
            phase_changes,
        });
        self.records.last().expect("just pushed")
    }
}
