//! Turn-based episode executor.
//!
//! One budgeted turn is one coordinator round: an evaluation, a delegated
//! mission (all of whose explorer records share the round's index) or one
//! executed move.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_8};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::{check_done, CoordinatorError, CoordinatorState, Decision, Phase, HUMANOID_FOV};
use crate::explorer::{explore, ExplorationMode, ExplorationReport, Outcome, Reason};
use crate::geometry::Pose;
use crate::perception::{observe, LoggingOracle, Observation, OracleError, PerceptionOracle, PerceptionParams, QueryRecord};
use crate::trace::{
    Action, EpisodeResult, EpisodeTrace, FailureReason, MessageBody, ProtocolMessage, Recorder,
    TerminalRecord, TraceHeader, TRACE_FORMAT,
};
use crate::world::{AgentClass, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agents {
    #[default]
    G1Go2,
    G1Only,
}

impl std::str::FromStr for Agents {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "g1-go2" => Ok(Agents::G1Go2),
            "g1-only" => Ok(Agents::G1Only),
            other => Err(format!("unknown agents '{other}', expected g1-go2 or g1-only")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub d_max: f64,
    pub r_max: f64,
    pub d_achieve: f64,
    pub r_scan: f64,
    pub humanoid_speed: f64,
    pub quadruped_speed: f64,
    pub angular_speed: f64,
    pub oracle_latency: f64,
    pub turn_budget: usize,
    pub seed: u64,
    pub mode_override: Option<ExplorationMode>,
    pub agents: Agents,
    pub disable_mode_x: bool,
    pub disable_mode_y: bool,
    pub step_angle: f64,
    pub delegation_cap: Option<usize>,
    pub candidates_k: usize,
    pub mission_turn_cap: usize,
    pub stall_limit: usize,
    pub perception: PerceptionParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            d_max: 2.0,
            r_max: FRAC_PI_2,
            d_achieve: 0.5,
            r_scan: FRAC_PI_2,
            humanoid_speed: 0.5,
            quadruped_speed: 1.0,
            angular_speed: 1.0,
            oracle_latency: 0.0,
            turn_budget: 60,
            seed: 0,
            mode_override: None,
            agents: Agents::G1Go2,
            disable_mode_x: false,
            disable_mode_y: false,
            step_angle: FRAC_PI_8,
            delegation_cap: None,
            candidates_k: 8,
            mission_turn_cap: 30,
            stall_limit: 3,
            perception: PerceptionParams::default(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("disable_mode_x and disable_mode_y are mutually exclusive")]
    BothModesDisabled,
    #[error("mode_override conflicts with a disabled mode")]
    OverrideConflict,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let dims = [
            ("d_max", self.d_max),
            ("r_max", self.r_max),
            ("d_achieve", self.d_achieve),
            ("r_scan", self.r_scan),
            ("humanoid_speed", self.humanoid_speed),
            ("quadruped_speed", self.quadruped_speed),
            ("angular_speed", self.angular_speed),
            ("step_angle", self.step_angle),
            ("max_range", self.perception.max_range),
        ];
        for (name, v) in dims {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if !(self.oracle_latency.is_finite() && self.oracle_latency >= 0.0) {
            return Err(ConfigError::NonPositive("oracle_latency"));
        }
        if self.turn_budget == 0 {
            return Err(ConfigError::NonPositive("turn_budget"));
        }
        if self.disable_mode_x && self.disable_mode_y {
            return Err(ConfigError::BothModesDisabled);
        }
        match (self.mode_override, self.disable_mode_x, self.disable_mode_y) {
            (Some(ExplorationMode::X), true, _) | (Some(ExplorationMode::Y), _, true) => {
                Err(ConfigError::OverrideConflict)
            }
            _ => Ok(()),
        }
    }

    /// Mode the explorer must use regardless of its own assessment.
    pub fn forced_mode(&self) -> Option<ExplorationMode> {
        if self.disable_mode_x {
            Some(ExplorationMode::Y)
        } else if self.disable_mode_y {
            Some(ExplorationMode::X)
        } else {
            self.mode_override
        }
    }

    pub fn speed(&self, agent: AgentClass) -> f64 {
        match agent {
            AgentClass::Humanoid => self.humanoid_speed,
            AgentClass::Quadruped => self.quadruped_speed,
        }
    }

    /// Short name of the ablation configuration.
    pub fn label(&self) -> &'static str {
        match (self.agents, self.disable_mode_x, self.disable_mode_y) {
            (Agents::G1Only, _, _) => "g1-only",
            (_, true, _) => "-X",
            (_, _, true) => "-Y",
            _ => "full",
        }
    }
}

pub fn advance_clock(
    prev: f64,
    displacement: f64,
    rotation: f64,
    queries: usize,
    agent: AgentClass,
    config: &SimConfig,
) -> f64 {
    prev + displacement / config.speed(agent)
        + rotation / config.angular_speed
        + queries as f64 * config.oracle_latency
}

/// Shared state of a running episode: the scene, the configuration, the
/// query-logging oracle and the trace under construction.
pub struct Session<'a> {
    pub scene: &'a Scene,
    pub config: &'a SimConfig,
    oracle: LoggingOracle<'a>,
    pub recorder: Recorder,
    pub turn: usize,
    scans: usize,
}

impl<'a> Session<'a> {
    pub fn new(scene: &'a Scene, config: &'a SimConfig, oracle: &'a mut dyn PerceptionOracle) -> Self {
        Self {
            scene,
            config,
            oracle: LoggingOracle::new(oracle),
            recorder: Recorder::default(),
            turn: 0,
            scans: 0,
        }
    }

    pub fn oracle(&mut self) -> &mut dyn PerceptionOracle {
        &mut self.oracle
    }

    pub fn next_scan_id(&mut self) -> usize {
        self.scans += 1;
        self.scans - 1
    }

    pub fn record(&mut self, agent: AgentClass, action: Action, before: Pose, after: Pose, messages: Vec<ProtocolMessage>) {
        self.record_phases(agent, action, before, after, messages, Vec::new());
    }

    pub fn record_phases(
        &mut self,
        agent: AgentClass,
        action: Action,
        before: Pose,
        after: Pose,
        messages: Vec<ProtocolMessage>,
        phases: Vec<[Phase; 2]>,
    ) {
        let queries = self.oracle.take_log();
        self.recorder
            .push(self.config, self.turn, agent, action, before, after, queries, messages, phases);
    }

    pub fn pending_queries(&mut self) -> Vec<QueryRecord> {
        self.oracle.take_log()
    }

    pub fn humanoid_view(&self, pose: Pose) -> Result<Observation, OracleError> {
        observe(
            pose,
            AgentClass::Humanoid,
            self.scene,
            HUMANOID_FOV,
            self.config.perception.max_range,
            &self.config.perception,
        )
        .map_err(|e| OracleError::Protocol(e.to_string()))
    }

    /// Closes the episode and assembles the trace.
    pub fn finish(
        mut self,
        oracle_name: &str,
        result: EpisodeResult,
        humanoid: Pose,
        quadruped: Pose,
    ) -> EpisodeTrace {
        let turn = self.recorder.records.last().map_or(0, |r| r.turn + 1).max(self.turn);
        let queries = self.oracle.take_log();
        let d_dt = humanoid.position.distance(self.scene.target_position());
        EpisodeTrace {
            header: TraceHeader {
                format: TRACE_FORMAT,
                scene: self.scene.name.clone(),
                oracle: oracle_name.to_string(),
                config: self.config.clone(),
            },
            records: self.recorder.records,
            terminal: TerminalRecord {
                turn,
                time: self.recorder.clock,
                result: result.clone(),
                d_dt,
                humanoid,
                quadruped,
                queries,
                message: ProtocolMessage {
                    sender: AgentClass::Humanoid,
                    turn,
                    body: MessageBody::EpisodeEnd { result },
                },
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid scene: {0}")]
    Scene(#[from] crate::world::SceneError),
}

enum Stop {
    Oracle(OracleError),
    Protocol(CoordinatorError),
}

impl From<OracleError> for Stop {
    fn from(e: OracleError) -> Self {
        Stop::Oracle(e)
    }
}

impl From<CoordinatorError> for Stop {
    fn from(e: CoordinatorError) -> Self {
        match e {
            CoordinatorError::Oracle(o) => Stop::Oracle(o),
            other => Stop::Protocol(other),
        }
    }
}

/// Runs one episode to its terminal record. Oracle and protocol errors end
/// the episode as `Aborted`; only invalid inputs are returned as errors.
pub fn run_episode(
    scene: &Scene,
    config: &SimConfig,
    oracle: &mut dyn PerceptionOracle,
    oracle_name: &str,
) -> Result<EpisodeTrace, EngineError> {
    config.validate()?;
    scene.validate()?;
    let mut sess = Session::new(scene, config, oracle);
    let mut coord = CoordinatorState::new(scene, config.d_max, config.r_max, config.d_achieve);
    coord.delegation_cap = config.delegation_cap;
    coord.candidates_k = config.candidates_k;
    let mut humanoid = scene.humanoid_start;
    let mut quadruped = scene.quadruped_start;

    let outcome = drive(&mut sess, &mut coord, &mut humanoid, &mut quadruped);
    let result = match outcome {
        Ok(()) if coord.phase == Phase::Done => EpisodeResult::Success,
        Ok(()) if check_done(humanoid, scene, config.d_achieve) => EpisodeResult::Success,
        Ok(()) if coord.phase == Phase::Failed => EpisodeResult::Failure {
            reason: if coord.cap_reached() {
                FailureReason::DelegationCap
            } else {
                FailureReason::NoCandidates
            },
        },
        Ok(()) => EpisodeResult::Failure {
            reason: FailureReason::Budget,
        },
        Err(Stop::Oracle(e)) => EpisodeResult::Aborted { error: e.to_string() },
        Err(Stop::Protocol(e)) => EpisodeResult::Aborted { error: e.to_string() },
    };
    Ok(sess.finish(oracle_name, result, humanoid, quadruped))
}

fn drive(
    sess: &mut Session,
    coord: &mut CoordinatorState,
    humanoid: &mut Pose,
    quadruped: &mut Pose,
) -> Result<(), Stop> {
    let config = sess.config;
    let scene = sess.scene;
    if check_done(*humanoid, scene, config.d_achieve) {
        return Ok(());
    }
    for round in 0..config.turn_budget {
        sess.turn = round;
        match coord.phase {
            Phase::Evaluating => {
                let obs = sess.humanoid_view(*humanoid)?;
                let decision = coord.evaluate_path(round, &obs, sess.oracle(), scene)?;
                let mut messages = Vec::new();
                if let (Decision::Delegate(w), Agents::G1Go2) = (&decision, config.agents) {
                    messages.push(ProtocolMessage {
                        sender: AgentClass::Humanoid,
                        turn: round,
                        body: MessageBody::AssignWaypoint {
                            waypoint: *w,
                            target: coord.target.clone(),
                        },
                    });
                }
                let phases = coord.take_transitions();
                sess.record_phases(AgentClass::Humanoid, Action::Evaluate, *humanoid, *humanoid, messages, phases);
                if let Decision::Delegate(w) = decision {
                    let report = match config.agents {
                        Agents::G1Go2 => {
                            let (report, pose) = explore(sess, w, &coord.target.clone(), *quadruped)?;
                            *quadruped = pose;
                            report
                        }
                        Agents::G1Only => unassisted(w, obs, *humanoid),
                    };
                    coord.integrate_feedback(round, &report)?;
                    let phases = coord.take_transitions();
                    // The report is folded in at the end of the round; the
                    // phase change is attached to a zero-motion humanoid record.
                    sess.record_phases(AgentClass::Humanoid, Action::Evaluate, *humanoid, *humanoid, vec![], phases);
                }
            }
            Phase::Executing => {
                let cmd = coord.step_execute(*humanoid, scene)?;
                let heading = humanoid.heading + cmd.rotation;
                let after = Pose::new(humanoid.position.offset(heading, cmd.displacement), heading);
                let before = *humanoid;
                *humanoid = after;
                let obs = sess.humanoid_view(after)?;
                coord.after_move(after, &obs, sess.oracle(), scene)?;
                let message = ProtocolMessage {
                    sender: AgentClass::Humanoid,
                    turn: round,
                    body: MessageBody::MoveExecuted { before, after },
                };
                let phases = coord.take_transitions();
                sess.record_phases(AgentClass::Humanoid, Action::Move, before, after, vec![message], phases);
            }
            Phase::AwaitingExploration => unreachable!("missions complete within their round"),
            Phase::Done | Phase::Failed => return Ok(()),
        }
        if coord.phase.is_terminal() {
            return Ok(());
        }
    }
    Ok(())
}

/// Without an explorer every delegation fails on the spot.
fn unassisted(w: crate::geometry::Point2, obs: Observation, humanoid: Pose) -> ExplorationReport {
    ExplorationReport {
        waypoint: w,
        outcome: Outcome::Failure,
        reason: Reason::Unreachable,
        mode: ExplorationMode::X,
        reached: false,
        target_estimate: None,
        final_obs: obs,
        quadruped_path: vec![humanoid.position],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::GeometricOracle;
    use crate::world::test_scenes::*;
    use std::f64::consts::PI;

    #[test]
    fn clock_arithmetic() {
        let c = SimConfig::default();
        assert_eq!(advance_clock(0.0, 2.0, 0.0, 0, AgentClass::Humanoid, &c), 4.0);
        assert_eq!(advance_clock(0.0, 0.0, PI, 0, AgentClass::Quadruped, &c), PI);
        let slow = SimConfig {
            oracle_latency: 0.5,
            ..c
        };
        let t = advance_clock(0.0, 1.0, FRAC_PI_2, 2, AgentClass::Humanoid, &slow);
        assert!((t - (2.0 + FRAC_PI_2 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn defaults_and_validation() {
        let c = SimConfig::default();
        assert_eq!((c.d_max, c.r_max, c.d_achieve, c.r_scan), (2.0, FRAC_PI_2, 0.5, FRAC_PI_2));
        assert!(c.validate().is_ok());
        let both = SimConfig {
            disable_mode_x: true,
            disable_mode_y: true,
            ..SimConfig::default()
        };
        assert_eq!(both.validate(), Err(ConfigError::BothModesDisabled));
        let neg = SimConfig {
            d_max: -1.0,
            ..SimConfig::default()
        };
        assert_eq!(neg.validate(), Err(ConfigError::NonPositive("d_max")));
    }

    #[test]
    fn visible_target_needs_no_delegation() {
        let s = open_scene(vec![], vec![landmark("sofa", 3.0, 0.0)]);
        let config = SimConfig {
            agents: Agents::G1Only,
            ..SimConfig::default()
        };
        let trace = run_episode(&s, &config, &mut GeometricOracle::default(), "geometric").unwrap();
        assert!(trace.result().is_success());
        assert_eq!(trace.assignments().count(), 0);
        assert!(trace.terminal.d_dt <= 0.5);
    }
}
