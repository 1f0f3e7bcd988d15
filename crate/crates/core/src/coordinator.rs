//! Humanoid coordinator: path evaluation, delegation of pilot exploration
//! and execution of the accepted plan.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explorer::{ExplorationReport, Outcome, Reason};
use crate::geometry::{normalize_angle, Point2, Pose};
use crate::perception::{Observation, OracleError, PerceptionOracle};
use crate::world::{clip_motion, AgentClass, Scene};

/// Humanoid forward field of view used for every path evaluation.
pub const HUMANOID_FOV: f64 = FRAC_PI_4;
/// Waypoints closer than this are treated as the same waypoint.
pub const WAYPOINT_MATCH_RADIUS: f64 = 0.25;
pub const CLIP_MARGIN: f64 = 0.1;
const MIN_PROGRESS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Evaluating,
    AwaitingExploration,
    Executing,
    Done,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Failed)
    }
}

pub const TRANSITIONS: [(Phase, Phase); 7] = [
    (Phase::Evaluating, Phase::Executing),
    (Phase::Evaluating, Phase::AwaitingExploration),
    (Phase::Evaluating, Phase::Failed),
    (Phase::AwaitingExploration, Phase::Executing),
    (Phase::AwaitingExploration, Phase::Evaluating),
    (Phase::Executing, Phase::Done),
    (Phase::Executing, Phase::Evaluating),
];

pub fn transition_allowed(from: Phase, to: Phase) -> bool {
    TRANSITIONS.contains(&(from, to))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoordinatorError {
    #[error("illegal phase transition {from:?} -> {to:?}")]
    IllegalTransition { from: Phase, to: Phase },
    #[error("operation requires phase {expected:?}, coordinator is {actual:?}")]
    WrongPhase { expected: Phase, actual: Phase },
    #[error("protocol violation: report for {got:?} while awaiting {expected:?}")]
    WaypointMismatch { expected: Option<Point2>, got: Point2 },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub turn: usize,
    pub summary: String,
    pub verdict: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionContext {
    pub history: Vec<HistoryEntry>,
    pub rejected_waypoints: Vec<Point2>,
    pub informative_waypoints: Vec<Point2>,
}

impl InteractionContext {
    pub fn is_rejected(&self, p: Point2) -> bool {
        self.rejected_waypoints
            .iter()
            .any(|r| r.distance(p) <= WAYPOINT_MATCH_RADIUS)
    }
}

/// A point of the execution plan. `face` asks the humanoid to turn to an
/// absolute heading once there, before the point counts as reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanPoint {
    pub position: Point2,
    pub face: Option<f64>,
    pub is_target: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    ProceedDirect,
    Delegate(Point2),
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveCommand {
    pub rotation: f64,
    pub displacement: f64,
    pub toward: Point2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinatorState {
    pub phase: Phase,
    pub current_plan: Vec<PlanPoint>,
    pub pending_waypoint: Option<Point2>,
    pub d_dt: f64,
    pub context: InteractionContext,
    pub delegations: usize,
    /// Optional bound on missions; the turn budget bounds them anyway.
    pub delegation_cap: Option<usize>,
    pub candidates_k: usize,
    pub d_max: f64,
    pub r_max: f64,
    pub d_achieve: f64,
    /// Best current estimate of the target position.
    pub belief: Option<Point2>,
    pub target: String,
    target_position: Point2,
    transitions: Vec<[Phase; 2]>,
}

impl CoordinatorState {
    pub fn new(scene: &Scene, d_max: f64, r_max: f64, d_achieve: f64) -> Self {
        let target_position = scene.target_position();
        Self {
            phase: Phase::Evaluating,
            current_plan: Vec::new(),
            pending_waypoint: None,
            d_dt: scene.humanoid_start.position.distance(target_position),
            context: InteractionContext::default(),
            delegations: 0,
            delegation_cap: None,
            candidates_k: 8,
            d_max,
            r_max,
            d_achieve,
            belief: None,
            target: scene.target_name().to_string(),
            target_position,
            transitions: Vec::new(),
        }
    }

    pub fn cap_reached(&self) -> bool {
        self.delegation_cap.is_some_and(|c| self.delegations >= c)
    }

    pub fn set_phase(&mut self, to: Phase) -> Result<(), CoordinatorError> {
        if to == self.phase {
            return Ok(());
        }
        if !transition_allowed(self.phase, to) {
            return Err(CoordinatorError::IllegalTransition { from: self.phase, to });
        }
        self.transitions.push([self.phase, to]);
        self.phase = to;
        Ok(())
    }

    pub fn take_transitions(&mut self) -> Vec<[Phase; 2]> {
        std::mem::take(&mut self.transitions)
    }

    fn expect(&self, expected: Phase) -> Result<(), CoordinatorError> {
        if self.phase != expected {
            return Err(CoordinatorError::WrongPhase {
                expected,
                actual: self.phase,
            });
        }
        Ok(())
    }

    fn note(&mut self, turn: usize, summary: String, verdict: Option<bool>) {
        self.context.history.push(HistoryEntry { turn, summary, verdict });
    }

    /// Folds a target sighting from a humanoid observation into the belief.
    pub fn observe_target(&mut self, obs: &Observation) {
        if let Some(p) = obs.locate(&self.target) {
            self.belief = Some(p);
        }
    }

    pub fn evaluate_path(
        &mut self,
        turn: usize,
        obs: &Observation,
        oracle: &mut dyn PerceptionOracle,
        scene: &Scene,
    ) -> Result<Decision, CoordinatorError> {
        self.expect(Phase::Evaluating)?;
        self.observe_target(obs);
        let target = self.target.clone();
        let direct = oracle.path_ideal(&target, obs, scene)?;
        if direct.answer {
            self.current_plan = vec![PlanPoint {
                position: self.target_position,
                face: None,
                is_target: true,
            }];
            self.note(turn, "direct path to target".into(), Some(true));
            self.set_phase(Phase::Executing)?;
            return Ok(Decision::ProceedDirect);
        }
        if self.cap_reached() {
            self.note(turn, "delegation budget exhausted".into(), Some(false));
            self.set_phase(Phase::Failed)?;
            return Ok(Decision::Fail);
        }
        let candidates = oracle.suggest_waypoints(obs, &target, self.belief, self.candidates_k)?;
        let pick = candidates.into_iter().map(|c| c.point).find(|p| !self.context.is_rejected(*p));
        match pick {
            Some(w) => {
                self.pending_waypoint = Some(w);
                self.delegations += 1;
                self.note(turn, format!("delegate waypoint ({:.3}, {:.3})", w.x, w.y), Some(false));
                self.set_phase(Phase::AwaitingExploration)?;
                Ok(Decision::Delegate(w))
            }
            None => {
                self.note(turn, "no unexplored candidates".into(), Some(false));
                self.set_phase(Phase::Failed)?;
                Ok(Decision::Fail)
            }
        }
    }

    pub fn integrate_feedback(&mut self, turn: usize, report: &ExplorationReport) -> Result<(), CoordinatorError> {
        self.expect(Phase::AwaitingExploration)?;
        if self.pending_waypoint != Some(report.waypoint) {
            return Err(CoordinatorError::WaypointMismatch {
                expected: self.pending_waypoint,
                got: report.waypoint,
            });
        }
        if let Some(p) = report.target_estimate {
            self.belief = Some(p);
        }
        let w = report.waypoint;
        self.pending_waypoint = None;
        let summary = format!("report {:?} for ({:.3}, {:.3})", report.reason, w.x, w.y);
        match report.outcome {
            Outcome::Success => {
                self.context.informative_waypoints.push(w);
                let face = (report.reason == Reason::PassageFound).then_some(report.final_obs.pose.heading);
                self.current_plan = vec![PlanPoint {
                    position: w,
                    face,
                    is_target: false,
                }];
                if report.reason == Reason::TargetVisiblePathIdeal {
                    let target = report
                        .final_obs
                        .locate(&self.target)
                        .unwrap_or(self.target_position);
                    self.current_plan.push(PlanPoint {
                        position: target,
                        face: None,
                        is_target: true,
                    });
                }
                self.note(turn, summary, Some(true));
                self.set_phase(Phase::Executing)
            }
            Outcome::Failure => {
                self.context.rejected_waypoints.push(w);
                self.note(turn, summary, Some(false));
                self.set_phase(Phase::Evaluating)
            }
        }
    }

    /// Next motion toward the first unreached plan point, clamped to the
    /// per-turn limits and clipped to the humanoid's free space.
    pub fn step_execute(&mut self, pose: Pose, scene: &Scene) -> Result<MoveCommand, CoordinatorError> {
        self.expect(Phase::Executing)?;
        let point = *self.current_plan.first().ok_or(CoordinatorError::WrongPhase {
            expected: Phase::Executing,
            actual: self.phase,
        })?;
        let dist = pose.position.distance(point.position);
        if dist <= self.d_achieve {
            let heading = point.face.unwrap_or(pose.heading);
            let rotation = normalize_angle(heading - pose.heading).clamp(-self.r_max, self.r_max);
            return Ok(MoveCommand {
                rotation,
                displacement: 0.0,
                toward: point.position,
            });
        }
        let needed = pose.bearing_to(point.position);
        let rotation = needed.clamp(-self.r_max, self.r_max);
        if (needed - rotation).abs() > 1e-12 {
            return Ok(MoveCommand {
                rotation,
                displacement: 0.0,
                toward: point.position,
            });
        }
        let heading = pose.heading + rotation;
        let wanted = dist.min(self.d_max);
        let end = pose.position.offset(heading, wanted);
        let reached = clip_motion(pose.position, end, scene, AgentClass::Humanoid, CLIP_MARGIN);
        let displacement = pose.position.distance(reached);
        if displacement < MIN_PROGRESS && wanted >= MIN_PROGRESS {
            self.current_plan.clear();
            self.set_phase(Phase::Evaluating)?;
        }
        Ok(MoveCommand {
            rotation,
            displacement,
            toward: point.position,
        })
    }

    /// Updates the plan after the engine applied a command; `obs` is the
    /// humanoid's forward view at the new pose.
    pub fn after_move(
        &mut self,
        pose: Pose,
        obs: &Observation,
        oracle: &mut dyn PerceptionOracle,
        scene: &Scene,
    ) -> Result<(), CoordinatorError> {
        self.d_dt = pose.position.distance(self.target_position);
        self.observe_target(obs);
        if check_done(pose, scene, self.d_achieve) {
            if self.phase == Phase::Executing {
                self.current_plan.clear();
                self.set_phase(Phase::Done)?;
            }
            return Ok(());
        }
        if self.phase != Phase::Executing {
            return Ok(());
        }
        while let Some(p) = self.current_plan.first() {
            let aligned = p
                .face
                .is_none_or(|h| normalize_angle(h - pose.heading).abs() < 1e-9);
            if pose.position.distance(p.position) <= self.d_achieve && aligned && !p.is_target {
                self.current_plan.remove(0);
            } else {
                break;
            }
        }
        if self.current_plan.is_empty() {
            return self.set_phase(Phase::Evaluating);
        }
        // Feasibility can only be judged once the target is in the forward view.
        let only_target = self.current_plan.len() == 1 && self.current_plan[0].is_target;
        if only_target && pose.bearing_to(self.current_plan[0].position).abs() <= obs.fov_half_angle {
            let target = self.target.clone();
            if !oracle.path_ideal(&target, obs, scene)?.answer {
                self.current_plan.clear();
                self.set_phase(Phase::Evaluating)?;
            }
        }
        Ok(())
    }
}

/// Inclusive achievement test against the scene's target.
pub fn check_done(pose: Pose, scene: &Scene, d_achieve: f64) -> bool {
    pose.position.distance(scene.target_position()) <= d_achieve
}
