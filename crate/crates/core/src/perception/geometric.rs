use std::cmp::Ordering;

use super::{
    Observation, OracleError, OracleVerdict, PerceptionOracle, PerceptionParams, WaypointCandidate,
    PASSAGE_LABEL,
};
use crate::geometry::{project_to_segment, Point2};
use crate::world::{segment_clear, AgentClass, Scene};

/// Answers every query from the observation geometry alone. Pure: the same
/// inputs always give the same verdicts, with confidence 1.
#[derive(Debug, Clone, Default)]
pub struct GeometricOracle {
    pub params: PerceptionParams,
}

impl GeometricOracle {
    pub fn new(params: PerceptionParams) -> Self {
        Self { params }
    }

    pub fn passage_visible(&self, obs: &Observation) -> bool {
        obs.gaps(self.params.corridor_probe_range)
            .iter()
            .any(|g| g.width() >= self.params.gap_min_angle - 1e-9)
    }

    pub fn environment_open(&self, obs: &Observation) -> bool {
        let field = 2.0 * obs.fov_half_angle;
        if field <= 0.0 {
            return true;
        }
        obs.blocked_width(self.params.blocking_radius) / field <= self.params.blocked_fraction_max
    }

    /// Candidate waypoints: one per gap left by barriers within reach, at the
    /// gap midpoint, plus the visible-region boundary in the believed target
    /// direction.
    pub fn candidates(&self, obs: &Observation, belief: Option<Point2>, k: usize) -> Vec<WaypointCandidate> {
        let p = &self.params;
        let pose = obs.pose;
        let reach = p.candidate_reach.min(obs.max_range);
        let mut ranked: Vec<(Point2, f64)> = obs
            .gaps(reach + p.candidate_margin)
            .into_iter()
            .filter(|g| g.width() >= p.candidate_gap_min - 1e-9)
            .map(|g| (pose.locate(g.midpoint(), reach), g.width()))
            .collect();

        let fov = obs.fov_half_angle;
        let line_bearing = belief.map(|b| pose.bearing_to(b)).unwrap_or(0.0);
        let believed = line_bearing.clamp(-fov, fov);
        let depth = obs
            .obstacle_arcs
            .iter()
            .filter(|a| a.covers(believed))
            .map(|a| a.min_distance - p.candidate_margin)
            .fold(obs.max_range, f64::min);
        if depth >= p.candidate_margin {
            let boundary = pose.locate(believed, depth);
            if ranked.iter().all(|(c, _)| c.distance(boundary) > 0.25) {
                ranked.push((boundary, 0.0));
            }
        }

        // Distance to the straight line from the observer toward the target.
        let line_end = pose.locate(line_bearing, 4.0 * obs.max_range.max(1.0));
        let score = |c: Point2| -c.distance(project_to_segment(c, pose.position, line_end).0);
        let mut scored: Vec<(WaypointCandidate, f64)> = ranked
            .into_iter()
            .map(|(c, width)| {
                (
                    WaypointCandidate {
                        point: c,
                        score: score(c),
                    },
                    width,
                )
            })
            .collect();
        scored.sort_by(|a, b| match b.0.score.total_cmp(&a.0.score) {
            Ordering::Equal => b.1.total_cmp(&a.1),
            o => o,
        });
        scored.into_iter().take(k).map(|(c, _)| c).collect()
    }
}

impl PerceptionOracle for GeometricOracle {
    fn inspect_for(&mut self, target: &str, obs: &Observation) -> Result<OracleVerdict, OracleError> {
        let answer = if target.eq_ignore_ascii_case(PASSAGE_LABEL) {
            self.passage_visible(obs)
        } else {
            obs.sees(target)
        };
        Ok(OracleVerdict::certain(answer))
    }

    fn path_ideal(
        &mut self,
        target: &str,
        obs: &Observation,
        scene: &Scene,
    ) -> Result<OracleVerdict, OracleError> {
        let landmark = scene
            .landmark_by_label(target)
            .ok_or_else(|| OracleError::UnknownTarget(target.to_string()))?;
        let answer = obs.sees(&landmark.name)
            && segment_clear(obs.pose.position, landmark.position, scene, AgentClass::Humanoid);
        Ok(OracleVerdict::certain(answer))
    }

    fn env_all_reachable(&mut self, obs: &Observation) -> Result<OracleVerdict, OracleError> {
        Ok(OracleVerdict::certain(self.environment_open(obs)))
    }

    fn suggest_waypoints(
        &mut self,
        obs: &Observation,
        _target: &str,
        belief: Option<Point2>,
        k: usize,
    ) -> Result<Vec<WaypointCandidate>, OracleError> {
        Ok(self.candidates(obs, belief, k))
    }
}
