//! Quadruped pilot exploration: mode selection, rotational scans, greedy
//! motion to the waypoint and the target/passage checks at the waypoint.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::engine::Session;
use crate::geometry::{normalize_angle, Point2, Pose};
use crate::perception::{observe_with_markers, Observation, OracleError, PASSAGE_LABEL, WAYPOINT_LABEL};
use crate::trace::{Action, MessageBody, ProtocolMessage, ScanKind};
use crate::world::{clip_motion, AgentClass, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExplorationMode {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    TargetVisiblePathIdeal,
    PassageFound,
    WaypointNotVisible,
    TargetNotFound,
    Unreachable,
}

impl Reason {
    pub fn outcome(self) -> Outcome {
        match self {
            Reason::TargetVisiblePathIdeal | Reason::PassageFound => Outcome::Success,
            _ => Outcome::Failure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationReport {
    pub waypoint: Point2,
    pub outcome: Outcome,
    pub reason: Reason,
    pub mode: ExplorationMode,
    /// Whether the quadruped got within the achievement radius of the waypoint.
    pub reached: bool,
    /// Last sighting of the target during the mission, occluded or not.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_estimate: Option<Point2>,
    pub final_obs: Observation,
    pub quadruped_path: Vec<Point2>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScanArc {
    Full360,
    /// Headings within `half_angle` of `center` (absolute).
    HalfAngle { center: f64, half_angle: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    /// Heading of the first positive verdict, relative to the scan's start heading.
    pub bearing: Option<f64>,
    pub pose: Pose,
    /// Observation at the positive heading, or at the last heading scanned.
    pub obs: Observation,
}

/// Narrow snapshot taken at each scan heading; adjacent snapshots tile the circle.
pub fn scan_fov(step_angle: f64) -> f64 {
    0.5 * step_angle
}

pub fn scan_headings(start: f64, arc: ScanArc, step_angle: f64) -> Vec<f64> {
    match arc {
        ScanArc::Full360 => {
            let n = (TAU / step_angle - 1e-9).ceil() as usize;
            (0..n).map(|i| normalize_angle(start + i as f64 * step_angle)).collect()
        }
        ScanArc::HalfAngle { center, half_angle } => {
            let m = (half_angle / step_angle + 1e-9).floor() as i64;
            (-m..=m)
                .map(|i| normalize_angle(center + i as f64 * step_angle))
                .collect()
        }
    }
}

fn quadruped_obs(
    sess: &Session,
    pose: Pose,
    fov: f64,
    waypoint: Option<Point2>,
) -> Result<Observation, OracleError> {
    let markers: Vec<(&str, Point2)> = waypoint.map(|w| (WAYPOINT_LABEL, w)).into_iter().collect();
    let cfg = sess.config;
    observe_with_markers(
        pose,
        AgentClass::Quadruped,
        sess.scene,
        fov,
        cfg.perception.max_range,
        &markers,
        &cfg.perception,
    )
    .map_err(|e| OracleError::Protocol(e.to_string()))
}

/// Mode X iff the panoramic view at `pose` is judged open.
pub fn select_mode(sess: &mut Session, pose: Pose) -> Result<ExplorationMode, OracleError> {
    let obs = quadruped_obs(sess, pose, PI, None)?;
    let open = sess.oracle().env_all_reachable(&obs)?.answer;
    let mode = match sess.config.forced_mode() {
        Some(m) => m,
        None if open => ExplorationMode::X,
        None => ExplorationMode::Y,
    };
    sess.record(AgentClass::Quadruped, Action::SelectMode { mode }, pose, pose, vec![]);
    Ok(mode)
}

/// Rotates through `arc` in `step_angle` increments, counterclockwise,
/// asking `inspect_for(target)` at each heading. Stops at the first yes.
pub fn scan_for(
    sess: &mut Session,
    target: &str,
    pose: Pose,
    arc: ScanArc,
    waypoint: Option<Point2>,
) -> Result<ScanResult, OracleError> {
    let step = sess.config.step_angle;
    let fov = scan_fov(step);
    let scan = sess.next_scan_id();
    let kind = match arc {
        ScanArc::Full360 => ScanKind::Full360,
        ScanArc::HalfAngle { .. } => ScanKind::HalfAngle,
    };
    let start = pose.heading;
    let mut current = pose;
    let mut last = None;
    for (index, heading) in scan_headings(start, arc, step).into_iter().enumerate() {
        let turned = Pose::new(current.position, heading);
        // Reaching the first heading of a half-angle sweep may exceed one turn's rotation.
        let mut hops = rotation_hops(current, heading, sess.config.r_max);
        hops.pop();
        for hop in hops {
            sess.record(AgentClass::Quadruped, Action::Move, current, hop, vec![]);
            current = hop;
        }
        let obs = quadruped_obs(sess, turned, fov, waypoint)?;
        let verdict = sess.oracle().inspect_for(target, &obs)?;
        let visible = obs
            .visible_names()
            .into_iter()
            .filter(|n| n != WAYPOINT_LABEL)
            .collect();
        sess.record(
            AgentClass::Quadruped,
            Action::Scan {
                scan,
                kind,
                index,
                looking_for: target.to_string(),
                visible,
            },
            current,
            turned,
            vec![],
        );
        current = turned;
        if verdict.answer {
            return Ok(ScanResult {
                bearing: Some(normalize_angle(heading - start)),
                pose: turned,
                obs,
            });
        }
        last = Some(obs);
    }
    Ok(ScanResult {
        bearing: None,
        pose: current,
        obs: match last {
            Some(o) => o,
            None => quadruped_obs(sess, current, fov, waypoint)?,
        },
    })
}

/// Intermediate poses that turn `from` to `heading` in steps of at most `r_max`.
fn rotation_hops(from: Pose, heading: f64, r_max: f64) -> Vec<Pose> {
    let mut out = Vec::new();
    let mut cur = from;
    loop {
        let delta = normalize_angle(heading - cur.heading);
        let turn = delta.clamp(-r_max, r_max);
        cur = cur.rotated(turn);
        out.push(cur);
        if (delta - turn).abs() < 1e-12 {
            return out;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoveResult {
    pub poses: Vec<Pose>,
    pub reached: bool,
}

/// Greedy per-turn motion toward `waypoint`. When the straight step is not
/// clear, the heading deflects in 5 degree increments toward the nearest
/// free direction that still closes the distance.
pub fn plan_move_turn(pose: Pose, waypoint: Point2, scene: &Scene, class: AgentClass, d_max: f64, r_max: f64) -> Pose {
    let margin = 0.1;
    let step = pose.position.distance(waypoint).min(d_max);
    let direct = (waypoint - pose.position).angle();
    let mut chosen = None;
    for k in 0..=36 {
        let offsets: &[f64] = if k == 0 { &[0.0] } else { &[1.0, -1.0] };
        for s in offsets {
            let angle = direct + s * (k as f64 * 5f64.to_radians());
            let end = pose.position.offset(angle, step);
            let reached = clip_motion(pose.position, end, scene, class, margin);
            let progress = pose.position.distance(waypoint) - end.distance(waypoint);
            if reached.distance(end) < 1e-9 && progress > 0.05 {
                chosen = Some(angle);
                break;
            }
        }
        if chosen.is_some() {
            break;
        }
    }
    let angle = chosen.unwrap_or(direct);
    let delta = normalize_angle(angle - pose.heading);
    let turn = delta.clamp(-r_max, r_max);
    let rotated = pose.rotated(turn);
    if (delta - turn).abs() > 1e-12 {
        return rotated;
    }
    let end = pose.position.offset(rotated.heading, step);
    let to = clip_motion(pose.position, end, scene, class, margin);
    Pose::new(to, rotated.heading)
}

pub fn move_to(sess: &mut Session, waypoint: Point2, pose: Pose) -> MoveResult {
    let cfg = sess.config;
    let mut poses = vec![pose];
    let mut current = pose;
    let mut stalled = 0;
    for _ in 0..cfg.mission_turn_cap {
        if current.position.distance(waypoint) <= cfg.d_achieve {
            return MoveResult { poses, reached: true };
        }
        let next = plan_move_turn(current, waypoint, sess.scene, AgentClass::Quadruped, cfg.d_max, cfg.r_max);
        sess.record(AgentClass::Quadruped, Action::Move, current, next, vec![]);
        if next.position.distance(current.position) <= 0.05 {
            stalled += 1;
        } else {
            stalled = 0;
        }
        current = next;
        poses.push(current);
        if stalled >= cfg.stall_limit {
            break;
        }
    }
    let reached = current.position.distance(waypoint) <= cfg.d_achieve;
    MoveResult { poses, reached }
}

fn sighting(obs: &Observation, target: &str, estimate: &mut Option<Point2>) {
    if let Some(p) = obs.locate(target) {
        *estimate = Some(p);
    }
}

/// The full pilot mission: returns the report and the quadruped's final pose.
pub fn run_mission(
    sess: &mut Session,
    waypoint: Point2,
    target: &str,
    start: Pose,
) -> Result<(ExplorationReport, Pose), OracleError> {
    let mode = select_mode(sess, start)?;
    let mut estimate = None;
    let mut path = vec![start.position];

    let seen = scan_for(sess, WAYPOINT_LABEL, start, ScanArc::Full360, Some(waypoint))?;
    sighting(&seen.obs, target, &mut estimate);
    if seen.bearing.is_none() {
        let report = finish(waypoint, Reason::WaypointNotVisible, mode, false, estimate, seen.obs, path);
        return Ok((report, seen.pose));
    }

    let travel = seen.pose.position;
    let moved = move_to(sess, waypoint, seen.pose);
    path.extend(moved.poses.iter().skip(1).map(|p| p.position));
    let mut pose = *moved.poses.last().expect("move_to keeps the start pose");
    if !moved.reached {
        let fov = scan_fov(sess.config.step_angle);
        let obs = quadruped_obs(sess, pose, fov, None)?;
        let report = finish(waypoint, Reason::Unreachable, mode, false, estimate, obs, path);
        return Ok((report, pose));
    }

    let look = scan_for(sess, target, pose, ScanArc::Full360, None)?;
    sighting(&look.obs, target, &mut estimate);
    pose = look.pose;
    if look.bearing.is_some() {
        let scene = sess.scene;
        let ideal = sess.oracle().path_ideal(target, &look.obs, scene)?.answer;
        if ideal {
            let report = finish(waypoint, Reason::TargetVisiblePathIdeal, mode, true, estimate, look.obs, path);
            return Ok((report, pose));
        }
    }
    let mut final_obs = look.obs;
    if mode == ExplorationMode::Y {
        let center = if travel.distance(pose.position) > 1e-9 {
            (pose.position - travel).angle()
        } else {
            start.heading
        };
        let arc = ScanArc::HalfAngle {
            center,
            half_angle: sess.config.r_scan,
        };
        let probe = scan_for(sess, PASSAGE_LABEL, pose, arc, None)?;
        sighting(&probe.obs, target, &mut estimate);
        pose = probe.pose;
        if probe.bearing.is_some() {
            let report = finish(waypoint, Reason::PassageFound, mode, true, estimate, probe.obs, path);
            return Ok((report, pose));
        }
        final_obs = probe.obs;
    }
    let report = finish(waypoint, Reason::TargetNotFound, mode, true, estimate, final_obs, path);
    Ok((report, pose))
}

fn finish(
    waypoint: Point2,
    reason: Reason,
    mode: ExplorationMode,
    reached: bool,
    target_estimate: Option<Point2>,
    final_obs: Observation,
    quadruped_path: Vec<Point2>,
) -> ExplorationReport {
    ExplorationReport {
        waypoint,
        outcome: reason.outcome(),
        reason,
        mode,
        reached,
        target_estimate,
        final_obs,
        quadruped_path,
    }
}

/// Runs a mission and records the report message on a final explorer record.
pub fn explore(
    sess: &mut Session,
    waypoint: Point2,
    target: &str,
    start: Pose,
) -> Result<(ExplorationReport, Pose), OracleError> {
    let (report, pose) = run_mission(sess, waypoint, target, start)?;
    let message = ProtocolMessage {
        sender: AgentClass::Quadruped,
        turn: sess.turn,
        body: MessageBody::ExplorationReport(Box::new(report.clone())),
    };
    sess.record(AgentClass::Quadruped, Action::Report, pose, pose, vec![message]);
    Ok((report, pose))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::SimConfig;
    use crate::geometry::rectangle;
    use crate::perception::{GeometricOracle, QueryKind};
    use crate::world::test_scenes::*;
    use crate::world::Obstacle;
    use std::f64::consts::FRAC_PI_2;

    fn with_session<T>(scene: &Scene, f: impl FnOnce(&mut Session) -> T) -> T {
        let config = SimConfig::default();
        let mut oracle = GeometricOracle::new(config.perception.clone());
        let mut sess = Session::new(scene, &config, &mut oracle);
        f(&mut sess)
    }

    #[test]
    fn full_scan_finds_target_behind() {
        let s = open_scene(vec![], vec![landmark("sofa", -3.0, 0.0)]);
        let r = with_session(&s, |sess| {
            scan_for(sess, "sofa", s.humanoid_start, ScanArc::Full360, None).unwrap()
        });
        let b = r.bearing.unwrap();
        assert!((b.abs() - PI).abs() <= PI / 16.0 + 1e-9, "{b}");
    }

    #[test]
    fn scan_without_target_asks_every_heading() {
        let s = open_scene(vec![], vec![]);
        let (r, log) = with_session(&s, |sess| {
            let r = scan_for(sess, "sofa", s.humanoid_start, ScanArc::Full360, None).unwrap();
            (r, sess.recorder.records.clone())
        });
        assert_eq!(r.bearing, None);
        let asked: usize = log
            .iter()
            .flat_map(|rec| rec.queries.iter())
            .filter(|q| q.kind == QueryKind::InspectFor)
            .count();
        assert_eq!(asked, 16);
    }

    #[test]
    fn half_angle_scan_misses_target_outside_arc() {
        let s = open_scene(vec![], vec![]);
        let mut s = s;
        s.landmarks.push(landmark("sofa", 3.0 * 2.0f64.cos(), 3.0 * 2.0f64.sin()));
        let arc = ScanArc::HalfAngle {
            center: 0.0,
            half_angle: FRAC_PI_2,
        };
        let r = with_session(&s, |sess| scan_for(sess, "sofa", s.humanoid_start, arc, None).unwrap());
        assert_eq!(r.bearing, None);
        assert_eq!(scan_headings(0.0, arc, PI / 8.0).len(), 9);
    }

    #[test]
    fn straight_move_takes_clamped_turns() {
        let s = open_scene(vec![], vec![]);
        let r = with_session(&s, |sess| move_to(sess, Point2::new(3.0, 0.0), s.humanoid_start));
        assert!(r.reached);
        assert_eq!(r.poses.len(), 3);
        assert!((r.poses[1].position.x - 2.0).abs() < 1e-12);
        assert!((r.poses[2].position.x - 3.0).abs() < 1e-12);
    }

    #[test]
    fn quadruped_crosses_steps() {
        let mut steps = Obstacle::solid("steps", rectangle(Point2::new(1.0, -1.0), Point2::new(1.5, 1.0)));
        steps.blocks_vision = false;
        steps.traversable_by.insert(AgentClass::Quadruped);
        let s = open_scene(vec![steps], vec![]);
        let r = with_session(&s, |sess| move_to(sess, Point2::new(3.0, 0.0), s.humanoid_start));
        assert!(r.reached);
        assert!(r.poses.iter().all(|p| p.position.y.abs() < 1e-12));
    }

    #[test]
    fn boxed_in_waypoint_is_unreachable() {
        let walls = vec![
            Obstacle::solid("n", rectangle(Point2::new(2.0, 1.0), Point2::new(6.0, 1.2))),
            Obstacle::solid("s", rectangle(Point2::new(2.0, -1.2), Point2::new(6.0, -1.0))),
            Obstacle::solid("w", rectangle(Point2::new(2.0, -1.0), Point2::new(2.2, 1.0))),
            Obstacle::solid("e", rectangle(Point2::new(5.8, -1.0), Point2::new(6.0, 1.0))),
        ];
        let s = open_scene(walls, vec![]);
        let r = with_session(&s, |sess| move_to(sess, Point2::new(4.0, 0.0), s.humanoid_start));
        assert!(!r.reached);
        let tail = &r.poses[r.poses.len() - 4..];
        assert!(tail.windows(2).all(|w| w[0].position.distance(w[1].position) <= 0.05));
    }

    #[test]
    fn mission_happy_path() {
        let s = open_scene(vec![], vec![landmark("sofa", 5.0, 0.0)]);
        let (report, _) = with_session(&s, |sess| {
            run_mission(sess, Point2::new(2.0, 0.0), "sofa", s.quadruped_start).unwrap()
        });
        assert_eq!(report.reason, Reason::TargetVisiblePathIdeal);
        assert_eq!(report.outcome, Outcome::Success);
        assert!(report.reached);
    }

    #[test]
    fn invisible_waypoint_fails_without_moving() {
        let wall = Obstacle::solid("wall", rectangle(Point2::new(1.0, -3.0), Point2::new(1.2, 3.0)));
        let s = open_scene(vec![wall], vec![landmark("sofa", 5.0, 0.0)]);
        let (report, recs) = with_session(&s, |sess| {
            let r = run_mission(sess, Point2::new(3.0, 0.0), "sofa", s.quadruped_start).unwrap();
            (r.0, sess.recorder.records.clone())
        });
        assert_eq!(report.reason, Reason::WaypointNotVisible);
        assert_eq!(report.quadruped_path.len(), 1);
        assert!(recs.iter().all(|r| r.displacement == 0.0));
    }

    #[test]
    fn mode_y_finds_passage_beside_blocking_wall() {
        // Enclosed room: the target sits behind a wall, with a free opening to the left.
        let walls = vec![
            Obstacle::solid("front", rectangle(Point2::new(4.0, -3.0), Point2::new(4.3, 1.0))),
            Obstacle::solid("back", rectangle(Point2::new(-3.0, -3.5), Point2::new(4.3, -3.0))),
            Obstacle::solid("left", rectangle(Point2::new(-3.0, -3.0), Point2::new(-2.7, 3.0))),
            Obstacle::solid("top", rectangle(Point2::new(-3.0, 3.0), Point2::new(1.0, 3.3))),
        ];
        let s = open_scene(walls, vec![landmark("sofa", 7.0, 0.0)]);
        let config = SimConfig::default();
        let mut oracle = GeometricOracle::new(config.perception.clone());
        let mut sess = Session::new(&s, &config, &mut oracle);
        let (report, _) = run_mission(&mut sess, Point2::new(2.0, 0.0), "sofa", s.quadruped_start).unwrap();
        assert_eq!(report.mode, ExplorationMode::Y);
        assert_eq!(report.reason, Reason::PassageFound);
        assert_eq!(report.target_estimate.map(|p| p.distance(Point2::new(7.0, 0.0)) < 1e-9), Some(true));
    }

    #[test]
    fn mode_x_never_probes_for_passage() {
        let wall = Obstacle::solid("wall", rectangle(Point2::new(5.0, -0.5), Point2::new(5.2, 0.5)));
        let s = open_scene(vec![wall], vec![landmark("sofa", 7.0, 0.0)]);
        let config = SimConfig::default();
        let mut oracle = GeometricOracle::new(config.perception.clone());
        let mut sess = Session::new(&s, &config, &mut oracle);
        let (report, _) = run_mission(&mut sess, Point2::new(2.0, 0.0), "sofa", s.quadruped_start).unwrap();
        assert_eq!(report.mode, ExplorationMode::X);
        assert_eq!(report.reason, Reason::TargetNotFound);
        let passage = sess
            .recorder
            .records
            .iter()
            .flat_map(|r| r.queries.iter())
            .any(|q| q.target.as_deref() == Some(PASSAGE_LABEL));
        assert!(!passage);
    }
}
