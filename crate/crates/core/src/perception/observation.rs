use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{PerceptionError, PerceptionParams};
use crate::geometry::{normalize_angle, Point2, Pose};
use crate::world::{cast_ray, line_of_sight, AgentClass, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleEntity {
    pub name: String,
    /// Relative to the observer heading, counterclockwise positive.
    pub bearing: f64,
    pub distance: f64,
    pub occluded: bool,
}

/// Angular interval subtended by a barrier, relative to the observer heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleArc {
    pub start_bearing: f64,
    pub end_bearing: f64,
    pub min_distance: f64,
}

impl ObstacleArc {
    pub fn width(&self) -> f64 {
        self.end_bearing - self.start_bearing
    }

    pub fn covers(&self, bearing: f64) -> bool {
        bearing >= self.start_bearing && bearing <= self.end_bearing
    }
}

/// Obstacle-free angular interval. `end` may exceed π for a gap wrapping
/// through the back of a panoramic view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    pub start: f64,
    pub end: f64,
}

impl Gap {
    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    pub fn midpoint(&self) -> f64 {
        normalize_angle(0.5 * (self.start + self.end))
    }
}

/// Egocentric snapshot of one agent: landmarks in its field of view plus the
/// angular footprint of nearby barriers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub observer: AgentClass,
    pub pose: Pose,
    pub fov_half_angle: f64,
    pub max_range: f64,
    pub entities: Vec<VisibleEntity>,
    pub obstacle_arcs: Vec<ObstacleArc>,
}

impl Observation {
    pub fn is_panoramic(&self) -> bool {
        self.fov_half_angle >= PI - 1e-9
    }

    pub fn entity(&self, label: &str) -> Option<&VisibleEntity> {
        let folded = label.to_lowercase();
        self.entities.iter().find(|e| e.name.to_lowercase() == folded)
    }

    pub fn sees(&self, label: &str) -> bool {
        let folded = label.to_lowercase();
        self.entities
            .iter()
            .any(|e| !e.occluded && e.name.to_lowercase() == folded)
    }

    /// World position of an entity, occluded or not.
    pub fn locate(&self, label: &str) -> Option<Point2> {
        self.entity(label).map(|e| self.pose.locate(e.bearing, e.distance))
    }

    pub fn visible_names(&self) -> Vec<String> {
        self.entities
            .iter()
            .filter(|e| !e.occluded)
            .map(|e| e.name.clone())
            .collect()
    }

    /// Free intervals left by arcs closer than `within` meters.
    pub fn gaps(&self, within: f64) -> Vec<Gap> {
        let fov = self.fov_half_angle;
        let mut arcs: Vec<_> = self
            .obstacle_arcs
            .iter()
            .filter(|a| a.min_distance < within)
            .collect();
        arcs.sort_by(|a, b| a.start_bearing.total_cmp(&b.start_bearing));
        let mut gaps = Vec::new();
        let mut cursor = -fov;
        for a in arcs {
            if a.start_bearing > cursor + 1e-9 {
                gaps.push(Gap {
                    start: cursor,
                    end: a.start_bearing,
                });
            }
            cursor = cursor.max(a.end_bearing);
        }
        if cursor < fov - 1e-9 {
            gaps.push(Gap { start: cursor, end: fov });
        }
        if self.is_panoramic() && gaps.len() >= 2 {
            let first = gaps[0];
            let last = gaps[gaps.len() - 1];
            if first.start <= -fov + 1e-9 && last.end >= fov - 1e-9 {
                gaps.pop();
                gaps[0] = Gap {
                    start: last.start,
                    end: first.end + 2.0 * PI,
                };
            }
        }
        gaps
    }

    /// Total width of arcs closer than `within` meters.
    pub fn blocked_width(&self, within: f64) -> f64 {
        self.obstacle_arcs
            .iter()
            .filter(|a| a.min_distance < within)
            .map(ObstacleArc::width)
            .sum()
    }
}

/// Ray bearings for a field of view: integer multiples of `step`, symmetric
/// about the heading. A panoramic field drops the duplicate ray at +π.
pub(crate) fn ray_bearings(fov_half_angle: f64, step: f64) -> Vec<f64> {
    let m = (fov_half_angle / step + 1e-9).floor() as i64;
    let panoramic = fov_half_angle >= PI - 1e-9;
    let top = if panoramic { m - 1 } else { m };
    (-m..=top).map(|i| i as f64 * step).collect()
}

/// Builds an observation, adding `markers` (transient labelled points, such
/// as an assigned waypoint) to the scene landmarks.
pub fn observe_with_markers(
    pose: Pose,
    observer: AgentClass,
    scene: &Scene,
    fov_half_angle: f64,
    max_range: f64,
    markers: &[(&str, Point2)],
    params: &PerceptionParams,
) -> Result<Observation, PerceptionError> {
    if !pose.position.is_finite() || !scene.bounds.contains(pose.position) {
        return Err(PerceptionError::OutOfBounds);
    }
    let origin = pose.position;
    let fov = fov_half_angle.min(PI);
    let mut entities = Vec::new();
    let labelled = scene
        .landmarks
        .iter()
        .map(|l| (l.name.as_str(), l.position))
        .chain(markers.iter().copied());
    for (name, position) in labelled {
        let distance = origin.distance(position);
        let bearing = pose.bearing_to(position);
        if distance <= max_range && bearing.abs() <= fov + 1e-12 {
            entities.push(VisibleEntity {
                name: name.to_string(),
                bearing,
                distance,
                occluded: !line_of_sight(origin, position, scene),
            });
        }
    }

    let step = params.ray_step;
    let mut arcs: Vec<ObstacleArc> = Vec::new();
    // Runs of rays on the same obstacle; a depth jump starts a new arc.
    let mut current: Option<(usize, f64, ObstacleArc)> = None;
    for bearing in ray_bearings(fov, step) {
        let hit = cast_ray(origin, pose.heading + bearing, max_range, scene, |o| o.is_barrier());
        let lo = (bearing - 0.5 * step).max(-fov);
        let hi = (bearing + 0.5 * step).min(fov);
        match (hit, current.as_mut()) {
            (Some(h), Some((idx, last, arc)))
                if *idx == h.obstacle && (h.distance - *last).abs() <= params.arc_depth_jump =>
            {
                arc.end_bearing = hi;
                arc.min_distance = arc.min_distance.min(h.distance);
                *last = h.distance;
            }
            (Some(h), _) => {
                if let Some((_, _, arc)) = current.take() {
                    arcs.push(arc);
                }
                current = Some((
                    h.obstacle,
                    h.distance,
                    ObstacleArc {
                        start_bearing: lo,
                        end_bearing: hi,
                        min_distance: h.distance,
                    },
                ));
            }
            (None, _) => {
                if let Some((_, _, arc)) = current.take() {
                    arcs.push(arc);
                }
            }
        }
    }
    if let Some((_, _, arc)) = current.take() {
        arcs.push(arc);
    }

    Ok(Observation {
        observer,
        pose,
        fov_half_angle: fov,
        max_range,
        entities,
        obstacle_arcs: arcs,
    })
}

pub fn observe(
    pose: Pose,
    observer: AgentClass,
    scene: &Scene,
    fov_half_angle: f64,
    max_range: f64,
    params: &PerceptionParams,
) -> Result<Observation, PerceptionError> {
    observe_with_markers(pose, observer, scene, fov_half_angle, max_range, &[], params)
}
