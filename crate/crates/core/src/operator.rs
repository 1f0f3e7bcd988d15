//! Human operator sessions: the same episode machinery as autonomous runs,
//! driven one command at a time from JSON text frames.
//!
//! Client frames are single-key objects, optionally with an `agent` field
//! (`"humanoid"` or `"quadruped"`, human-both role only):
//!
//! ```json
//! {"rotate": 0.5}
//! {"move": 1.2}
//! {"assign_waypoint": {"x": 1.0, "y": 0.5}}
//! {"scan": null, "agent": "quadruped"}
//! {"end": null}
//! ```
//!
//! `"scan"` and `"end"` may also be sent as bare JSON strings.
//!
//! The server answers with frames tagged by `type`: `session`,
//! `observation`, `applied`, `rejected`, `report`, `error` and `result`.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tungstenite::{Message, WebSocket};

use crate::coordinator::{check_done, Phase, CLIP_MARGIN, HUMANOID_FOV};
use crate::engine::{EngineError, Session, SimConfig};
use crate::explorer::{explore, scan_fov, scan_headings, ExplorationReport, ScanArc};
use crate::geometry::{normalize_angle, Point2, Pose};
use crate::perception::{observe, Observation, OracleError, PerceptionOracle};
use crate::trace::{Action, EpisodeResult, EpisodeTrace, FailureReason, MessageBody, ProtocolMessage, ScanKind};
use crate::world::{clip_motion, AgentClass, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    /// The human drives the humanoid and may dispatch the autonomous quadruped.
    HumanHumanoid,
    /// The human drives both agents; nothing runs autonomously.
    HumanBoth,
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "human-humanoid" => Ok(Role::HumanHumanoid),
            "human-both" => Ok(Role::HumanBoth),
            other => Err(format!("unknown role '{other}' (expected human-humanoid or human-both)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Rotate(f64),
    Move(f64),
    AssignWaypoint { x: f64, y: f64 },
    Scan,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandFrame {
    #[serde(flatten)]
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentClass>,
}

impl CommandFrame {
    pub fn new(command: Command) -> Self {
        Self { command, agent: None }
    }

    pub fn for_agent(command: Command, agent: AgentClass) -> Self {
        Self {
            command,
            agent: Some(agent),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    Session {
        role: Role,
        target: String,
        controlled: Vec<AgentClass>,
        d_max: f64,
        r_max: f64,
        turn_budget: usize,
    },
    Observation {
        agent: AgentClass,
        turn: usize,
        time: f64,
        phase: Phase,
        observation: Observation,
    },
    Applied {
        agent: AgentClass,
        command: Command,
    },
    Rejected {
        command: Command,
        clamped: Option<Command>,
        reason: String,
    },
    Report {
        report: Box<ExplorationReport>,
    },
    Error {
        message: String,
    },
    Result {
        result: EpisodeResult,
        turn: usize,
        time: f64,
    },
}

/// One operator-driven episode. Commands are applied in arrival order, at
/// most one per turn; rejected commands leave the state untouched.
pub struct OperatorSession<'a> {
    sess: Session<'a>,
    role: Role,
    humanoid: Pose,
    quadruped: Pose,
    result: Option<EpisodeResult>,
}

impl<'a> OperatorSession<'a> {
    pub fn new(
        scene: &'a Scene,
        config: &'a SimConfig,
        oracle: &'a mut dyn PerceptionOracle,
        role: Role,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        scene.validate()?;
        Ok(Self {
            sess: Session::new(scene, config, oracle),
            role,
            humanoid: scene.humanoid_start,
            quadruped: scene.quadruped_start,
            result: None,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn humanoid(&self) -> Pose {
        self.humanoid
    }

    pub fn quadruped(&self) -> Pose {
        self.quadruped
    }

    pub fn result(&self) -> Option<&EpisodeResult> {
        self.result.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.result.is_some()
    }

    fn controlled(&self) -> Vec<AgentClass> {
        match self.role {
            Role::HumanHumanoid => vec![AgentClass::Humanoid],
            Role::HumanBoth => vec![AgentClass::Humanoid, AgentClass::Quadruped],
        }
    }

    fn phase(&self) -> Phase {
        match &self.result {
            None => Phase::Evaluating,
            Some(EpisodeResult::Success) => Phase::Done,
            Some(_) => Phase::Failed,
        }
    }

    fn pose(&self, agent: AgentClass) -> Pose {
        match agent {
            AgentClass::Humanoid => self.humanoid,
            AgentClass::Quadruped => self.quadruped,
        }
    }

    fn set_pose(&mut self, agent: AgentClass, pose: Pose) {
        match agent {
            AgentClass::Humanoid => self.humanoid = pose,
            AgentClass::Quadruped => self.quadruped = pose,
        }
    }

    /// Forward field of view of one agent's sensor.
    fn fov(&self, agent: AgentClass) -> f64 {
        match agent {
            AgentClass::Humanoid => HUMANOID_FOV,
            AgentClass::Quadruped => scan_fov(self.sess.config.step_angle),
        }
    }

    fn view(&self, agent: AgentClass, pose: Pose) -> Result<Observation, OracleError> {
        let cfg = self.sess.config;
        observe(pose, agent, self.sess.scene, self.fov(agent), cfg.perception.max_range, &cfg.perception)
            .map_err(|e| OracleError::Protocol(e.to_string()))
    }

    fn observation_frame(&self, agent: AgentClass, observation: Observation) -> ServerFrame {
        ServerFrame::Observation {
            agent,
            turn: self.sess.turn,
            time: self.sess.recorder.clock,
            phase: self.phase(),
            observation,
        }
    }

    /// Session header followed by the first view of every controlled agent.
    pub fn greeting(&self) -> Vec<ServerFrame> {
        let cfg = self.sess.config;
        let mut frames = vec![ServerFrame::Session {
            role: self.role,
            target: self.sess.scene.target_name().to_string(),
            controlled: self.controlled(),
            d_max: cfg.d_max,
            r_max: cfg.r_max,
            turn_budget: cfg.turn_budget,
        }];
        for agent in self.controlled() {
            if let Ok(obs) = self.view(agent, self.pose(agent)) {
                frames.push(self.observation_frame(agent, obs));
            }
        }
        frames
    }

    /// Parses and applies one text frame.
    pub fn handle_text(&mut self, text: &str) -> Vec<ServerFrame> {
        let parsed = match serde_json::from_str::<serde_json::Value>(text) {
            // A bare string names a unit command.
            Ok(serde_json::Value::String(name)) => serde_json::from_value::<CommandFrame>(serde_json::json!({ name: null })),
            Ok(v) => serde_json::from_value::<CommandFrame>(v),
            Err(e) => Err(e),
        };
        match parsed {
            Ok(frame) => self.apply(frame),
            Err(e) => vec![ServerFrame::Error {
                message: format!("malformed command: {e}"),
            }],
        }
    }

    fn reject(command: Command, clamped: Option<Command>, reason: impl Into<String>) -> Vec<ServerFrame> {
        vec![ServerFrame::Rejected {
            command,
            clamped,
            reason: reason.into(),
        }]
    }

    pub fn apply(&mut self, frame: CommandFrame) -> Vec<ServerFrame> {
        let command = frame.command;
        if self.is_finished() {
            return vec![ServerFrame::Error {
                message: "episode already ended".into(),
            }];
        }
        let agent = frame.agent.unwrap_or(AgentClass::Humanoid);
        if !self.controlled().contains(&agent) {
            return Self::reject(command, None, format!("{agent:?} is not under operator control in this role"));
        }
        let cfg = self.sess.config;
        match command {
            Command::Rotate(a) if a.abs() > cfg.r_max + 1e-9 => {
                return Self::reject(command, Some(Command::Rotate(a.clamp(-cfg.r_max, cfg.r_max))), "rotation exceeds r_max");
            }
            Command::Move(d) if !(0.0..=cfg.d_max + 1e-9).contains(&d) => {
                let reason = if d < 0.0 { "move must be non-negative" } else { "move exceeds d_max" };
                return Self::reject(command, Some(Command::Move(d.clamp(0.0, cfg.d_max))), reason);
            }
            Command::AssignWaypoint { .. } if self.role != Role::HumanHumanoid => {
                return Self::reject(command, None, "assign_waypoint is only available in the human-humanoid role");
            }
            Command::AssignWaypoint { .. } if agent != AgentClass::Humanoid => {
                return Self::reject(command, None, "waypoints are assigned by the humanoid");
            }
            Command::AssignWaypoint { x, y } if !self.sess.scene.bounds.contains(Point2::new(x, y)) => {
                return Self::reject(command, None, "waypoint outside the scene bounds");
            }
            _ => {}
        }

        let label = serde_json::to_string(&frame).unwrap_or_default();
        let outcome = match command {
            Command::Rotate(a) => self.rotate(agent, a, label),
            Command::Move(d) => self.step(agent, d, label),
            Command::Scan => self.scan(agent),
            Command::AssignWaypoint { x, y } => self.dispatch(Point2::new(x, y), label),
            Command::End => {
                let result = if check_done(self.humanoid, self.sess.scene, cfg.d_achieve) {
                    EpisodeResult::Success
                } else {
                    EpisodeResult::Failure {
                        reason: FailureReason::OperatorEnded,
                    }
                };
                self.result = Some(result);
                Ok(vec![ServerFrame::Applied { agent, command }])
            }
        };
        let mut frames = match outcome {
            Ok(frames) => frames,
            Err(e) => {
                self.result = Some(EpisodeResult::Aborted { error: e.to_string() });
                vec![ServerFrame::Error { message: e.to_string() }]
            }
        };
        if self.result.is_none() {
            self.sess.turn += 1;
            if check_done(self.humanoid, self.sess.scene, cfg.d_achieve) {
                self.result = Some(EpisodeResult::Success);
            } else if self.sess.turn >= cfg.turn_budget {
                self.result = Some(EpisodeResult::Failure {
                    reason: FailureReason::Budget,
                });
            }
        }
        if let Some(result) = &self.result {
            frames.push(ServerFrame::Result {
                result: result.clone(),
                turn: self.sess.turn,
                time: self.sess.recorder.clock,
            });
        }
        frames
    }

    fn moved(&mut self, agent: AgentClass, before: Pose, after: Pose, label: String) -> Result<Observation, OracleError> {
        self.set_pose(agent, after);
        let messages = match agent {
            AgentClass::Humanoid => vec![ProtocolMessage {
                sender: AgentClass::Humanoid,
                turn: self.sess.turn,
                body: MessageBody::MoveExecuted { before, after },
            }],
            AgentClass::Quadruped => Vec::new(),
        };
        self.sess.record(agent, Action::Operator { command: label }, before, after, messages);
        self.view(agent, after)
    }

    fn rotate(&mut self, agent: AgentClass, angle: f64, label: String) -> Result<Vec<ServerFrame>, OracleError> {
        let before = self.pose(agent);
        let after = Pose::new(before.position, normalize_angle(before.heading + angle));
        let obs = self.moved(agent, before, after, label)?;
        Ok(vec![
            ServerFrame::Applied {
                agent,
                command: Command::Rotate(angle),
            },
            self.observation_frame(agent, obs),
        ])
    }

    fn step(&mut self, agent: AgentClass, dist: f64, label: String) -> Result<Vec<ServerFrame>, OracleError> {
        let before = self.pose(agent);
        let end = before.position.offset(before.heading, dist);
        let reached = clip_motion(before.position, end, self.sess.scene, agent, CLIP_MARGIN);
        let after = Pose::new(reached, before.heading);
        let obs = self.moved(agent, before, after, label)?;
        Ok(vec![
            ServerFrame::Applied {
                agent,
                command: Command::Move(before.position.distance(reached)),
            },
            self.observation_frame(agent, obs),
        ])
    }

    /// Full rotational scan at the agent's snapshot width, one frame per
    /// heading; the agent ends facing its last heading.
    fn scan(&mut self, agent: AgentClass) -> Result<Vec<ServerFrame>, OracleError> {
        let step = 2.0 * self.fov(agent);
        let start = self.pose(agent);
        let r_max = self.sess.config.r_max;
        let target = self.sess.scene.target_name().to_string();
        let scan = self.sess.next_scan_id();
        let mut frames = vec![ServerFrame::Applied {
            agent,
            command: Command::Scan,
        }];
        let mut pose = start;
        for (index, heading) in scan_headings(start.heading, ScanArc::Full360, step).into_iter().enumerate() {
            let mut remaining = normalize_angle(heading - pose.heading);
            while remaining.abs() > r_max + 1e-12 {
                let hop = remaining.clamp(-r_max, r_max);
                let next = Pose::new(pose.position, normalize_angle(pose.heading + hop));
                self.sess.record(agent, Action::Move, pose, next, Vec::new());
                pose = next;
                remaining = normalize_angle(heading - pose.heading);
            }
            let next = Pose::new(pose.position, heading);
            let obs = self.view(agent, next)?;
            let action = Action::Scan {
                scan,
                kind: ScanKind::Full360,
                index,
                looking_for: target.clone(),
                visible: obs.visible_names(),
            };
            self.sess.record(agent, action, pose, next, Vec::new());
            pose = next;
            frames.push(self.observation_frame(agent, obs));
        }
        self.set_pose(agent, pose);
        Ok(frames)
    }

    fn dispatch(&mut self, waypoint: Point2, label: String) -> Result<Vec<ServerFrame>, OracleError> {
        let target = self.sess.scene.target_name().to_string();
        let assign = ProtocolMessage {
            sender: AgentClass::Humanoid,
            turn: self.sess.turn,
            body: MessageBody::AssignWaypoint {
                waypoint,
                target: target.clone(),
            },
        };
        let h = self.humanoid;
        self.sess.record(AgentClass::Humanoid, Action::Operator { command: label }, h, h, vec![assign]);
        let (report, pose) = explore(&mut self.sess, waypoint, &target, self.quadruped)?;
        self.quadruped = pose;
        Ok(vec![
            ServerFrame::Applied {
                agent: AgentClass::Humanoid,
                command: Command::AssignWaypoint {
                    x: waypoint.x,
                    y: waypoint.y,
                },
            },
            ServerFrame::Report {
                report: Box::new(report),
            },
        ])
    }

    /// Marks the episode aborted after the client went away.
    pub fn disconnect(&mut self) {
        if self.result.is_none() {
            self.result = Some(EpisodeResult::Aborted {
                error: "operator disconnected".into(),
            });
        }
    }

    pub fn into_trace(mut self, oracle_name: &str) -> EpisodeTrace {
        self.disconnect();
        let result = self.result.clone().unwrap_or(EpisodeResult::Success);
        self.sess.finish(oracle_name, result, self.humanoid, self.quadruped)
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("websocket handshake failed: {0}")]
    Handshake(String),
    #[error("websocket error: {0}")]
    Socket(#[from] tungstenite::Error),
}

fn send<S: Read + Write>(ws: &mut WebSocket<S>, frames: &[ServerFrame]) -> Result<(), tungstenite::Error> {
    for f in frames {
        let text = serde_json::to_string(f).expect("server frames serialize");
        ws.send(Message::text(text))?;
    }
    Ok(())
}

/// Runs a session over an accepted stream until the episode ends or the
/// client leaves. The session holds whatever state was reached either way.
pub fn serve_stream<S: Read + Write>(stream: S, op: &mut OperatorSession) -> Result<(), ServeError> {
    let mut ws = tungstenite::accept(stream).map_err(|e| ServeError::Handshake(e.to_string()))?;
    if let Err(e) = send(&mut ws, &op.greeting()) {
        op.disconnect();
        return Err(e.into());
    }
    while !op.is_finished() {
        let frames = match ws.read() {
            Ok(Message::Text(t)) => op.handle_text(t.as_str()),
            Ok(Message::Binary(b)) => match std::str::from_utf8(&b) {
                Ok(t) => op.handle_text(t),
                Err(_) => vec![ServerFrame::Error {
                    message: "binary frames must hold UTF-8 JSON".into(),
                }],
            },
            Ok(Message::Close(_)) => {
                op.disconnect();
                break;
            }
            Ok(_) => continue,
            Err(e) => {
                op.disconnect();
                return Err(e.into());
            }
        };
        if let Err(e) = send(&mut ws, &frames) {
            op.disconnect();
            return Err(e.into());
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(())
}
