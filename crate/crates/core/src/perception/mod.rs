//! Egocentric observations and the semantic queries asked about them.
//!
//! Both agents reason only through a [`PerceptionOracle`]. The geometric
//! oracle answers from the symbolic observation; the remote oracle forwards
//! the same payload over HTTP; the replay oracle answers from a recorded trace.

mod geometric;
mod observation;
mod remote;
mod replay;

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geometric::GeometricOracle;
pub use observation::{
    observe, observe_with_markers, Gap, Observation, ObstacleArc, VisibleEntity,
};
pub use remote::{RemoteOracle, WireObservation, WireRequest, WireResponse, DEFAULT_TIMEOUT, ORACLE_URL_ENV};
pub use replay::ReplayOracle;

use crate::geometry::Point2;
use crate::world::Scene;

pub const PASSAGE_LABEL: &str = "passage";
pub const WAYPOINT_LABEL: &str = "waypoint";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("agent out of bounds")]
    OutOfBounds,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle timeout")]
    Timeout,
    #[error("oracle protocol error: {0}")]
    Protocol(String),
    #[error("oracle transport error: {0}")]
    Transport(String),
    #[error("unknown target label '{0}'")]
    UnknownTarget(String),
    #[error("oracle not configured: {0}")]
    NotConfigured(String),
}

/// Tunables of the geometric perception model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionParams {
    pub fov_half_angle: f64,
    pub max_range: f64,
    pub gap_min_angle: f64,
    pub corridor_probe_range: f64,
    pub blocking_radius: f64,
    pub blocked_fraction_max: f64,
    pub ray_step: f64,
    /// Depth change between adjacent rays that splits an arc.
    pub arc_depth_jump: f64,
    /// Narrowest gap that yields a waypoint candidate.
    pub candidate_gap_min: f64,
    /// Stand-off from a barrier for boundary candidates.
    pub candidate_margin: f64,
    /// Farthest gap candidate; matches the per-turn displacement limit.
    pub candidate_reach: f64,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        Self {
            fov_half_angle: FRAC_PI_4,
            max_range: 8.0,
            gap_min_angle: 15f64.to_radians(),
            corridor_probe_range: 4.0,
            blocking_radius: 3.0,
            blocked_fraction_max: 0.25,
            ray_step: 1f64.to_radians(),
            arc_depth_jump: 0.5,
            candidate_gap_min: 3f64.to_radians(),
            candidate_margin: 0.5,
            candidate_reach: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub answer: bool,
    pub confidence: f64,
    #[serde(default)]
    pub rationale: String,
}

impl OracleVerdict {
    pub fn certain(answer: bool) -> Self {
        Self {
            answer,
            confidence: 1.0,
            rationale: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointCandidate {
    #[serde(flatten)]
    pub point: Point2,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    InspectFor,
    PathIdeal,
    EnvAllReachable,
    SuggestWaypoints,
}

/// The four semantic queries the agents issue.
pub trait PerceptionOracle {
    fn inspect_for(&mut self, target: &str, obs: &Observation) -> Result<OracleVerdict, OracleError>;

    /// Whether the humanoid has a direct, unobstructed route to `target` from the observer.
    fn path_ideal(
        &mut self,
        target: &str,
        obs: &Observation,
        scene: &Scene,
    ) -> Result<OracleVerdict, OracleError>;

    fn env_all_reachable(&mut self, obs: &Observation) -> Result<OracleVerdict, OracleError>;

    /// Ranked exploration waypoints; `belief` is the observer's current
    /// estimate of where the target is, if it has one.
    fn suggest_waypoints(
        &mut self,
        obs: &Observation,
        target: &str,
        belief: Option<Point2>,
        k: usize,
    ) -> Result<Vec<WaypointCandidate>, OracleError>;
}

/// One answered query as it appears in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub kind: QueryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<OracleVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<WaypointCandidate>>,
}

/// Wraps an oracle and keeps every answered query until drained.
pub struct LoggingOracle<'a> {
    inner: &'a mut dyn PerceptionOracle,
    log: Vec<QueryRecord>,
}

impl<'a> LoggingOracle<'a> {
    pub fn new(inner: &'a mut dyn PerceptionOracle) -> Self {
        Self {
            inner,
            log: Vec::new(),
        }
    }

    pub fn take_log(&mut self) -> Vec<QueryRecord> {
        std::mem::take(&mut self.log)
    }

    fn verdict(&mut self, kind: QueryKind, target: Option<&str>, v: &OracleVerdict) {
        self.log.push(QueryRecord {
            kind,
            target: target.map(str::to_string),
            verdict: Some(v.clone()),
            candidates: None,
        });
    }
}

impl PerceptionOracle for LoggingOracle<'_> {
    fn inspect_for(&mut self, target: &str, obs: &Observation) -> Result<OracleVerdict, OracleError> {
        let v = self.inner.inspect_for(target, obs)?;
        self.verdict(QueryKind::InspectFor, Some(target), &v);
        Ok(v)
    }

    fn path_ideal(
        &mut self,
        target: &str,
        obs: &Observation,
        scene: &Scene,
    ) -> Result<OracleVerdict, OracleError> {
        let v = self.inner.path_ideal(target, obs, scene)?;
        self.verdict(QueryKind::PathIdeal, Some(target), &v);
        Ok(v)
    }

    fn env_all_reachable(&mut self, obs: &Observation) -> Result<OracleVerdict, OracleError> {
        let v = self.inner.env_all_reachable(obs)?;
        self.verdict(QueryKind::EnvAllReachable, None, &v);
        Ok(v)
    }

    fn suggest_waypoints(
        &mut self,
        obs: &Observation,
        target: &str,
        belief: Option<Point2>,
        k: usize,
    ) -> Result<Vec<WaypointCandidate>, OracleError> {
        let c = self.inner.suggest_waypoints(obs, target, belief, k)?;
        self.log.push(QueryRecord {
            kind: QueryKind::SuggestWaypoints,
            target: Some(target.to_string()),
            verdict: None,
            candidates: Some(c.clone()),
        });
        Ok(c)
    }
}
