use std::collections::VecDeque;

use super::{
    Observation, OracleError, OracleVerdict, PerceptionOracle, QueryKind, QueryRecord,
    WaypointCandidate,
};
use crate::geometry::Point2;
use crate::world::Scene;

/// Answers queries from a recorded sequence, in order. Any query that does
/// not match the next recorded one in kind is a divergence.
#[derive(Debug, Clone, Default)]
pub struct ReplayOracle {
    queue: VecDeque<QueryRecord>,
}

impl ReplayOracle {
    pub fn new(records: impl IntoIterator<Item = QueryRecord>) -> Self {
        Self {
            queue: records.into_iter().collect(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }

    fn next(&mut self, kind: QueryKind) -> Result<QueryRecord, OracleError> {
        match self.queue.pop_front() {
            Some(r) if r.kind == kind => Ok(r),
            Some(r) => Err(OracleError::Protocol(format!(
                "replay diverged: expected {:?}, asked {:?}",
                r.kind, kind
            ))),
            None => Err(OracleError::Protocol("replay diverged: no recorded answer left".into())),
        }
    }

    fn verdict(&mut self, kind: QueryKind) -> Result<OracleVerdict, OracleError> {
        self.next(kind)?
            .verdict
            .ok_or_else(|| OracleError::Protocol("replay record has no verdict".into()))
    }
}

impl PerceptionOracle for ReplayOracle {
    fn inspect_for(&mut self, _target: &str, _obs: &Observation) -> Result<OracleVerdict, OracleError> {
        self.verdict(QueryKind::InspectFor)
    }

    fn path_ideal(
        &mut self,
        _target: &str,
        _obs: &Observation,
        _scene: &Scene,
    ) -> Result<OracleVerdict, OracleError> {
        self.verdict(QueryKind::PathIdeal)
    }

    fn env_all_reachable(&mut self, _obs: &Observation) -> Result<OracleVerdict, OracleError> {
        self.verdict(QueryKind::EnvAllReachable)
    }

    fn suggest_waypoints(
        &mut self,
        _obs: &Observation,
        _target: &str,
        _belief: Option<Point2>,
        _k: usize,
    ) -> Result<Vec<WaypointCandidate>, OracleError> {
        self.next(QueryKind::SuggestWaypoints)?
            .candidates
            .ok_or_else(|| OracleError::Protocol("replay record has no candidates".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::observe;
    use crate::world::test_scenes::*;
    use crate::world::AgentClass;

    #[test]
    fn replays_in_order_and_detects_divergence() {
        let s = open_scene(vec![], vec![]);
        let obs = observe(s.humanoid_start, AgentClass::Humanoid, &s, 0.7, 8.0, &Default::default()).unwrap();
        let rec = |kind, answer| QueryRecord {
            kind,
            target: None,
            verdict: Some(OracleVerdict::certain(answer)),
            candidates: None,
        };
        let mut o = ReplayOracle::new([rec(QueryKind::InspectFor, true), rec(QueryKind::EnvAllReachable, false)]);
        assert!(o.inspect_for("x", &obs).unwrap().answer);
        assert!(matches!(o.inspect_for("x", &obs), Err(OracleError::Protocol(m)) if m.contains("diverged")));
        assert_eq!(o.remaining(), 0);
        assert!(o.env_all_reachable(&obs).is_err());
    }
}
