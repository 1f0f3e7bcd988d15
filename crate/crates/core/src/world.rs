//! Static scene model and the clearance / visibility predicates over it.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    self, first_boundary_contact, nearest_boundary_point, open_segment_meets_polygon,
    point_in_polygon, polygon_is_simple, ray_polygon_distance, GeometryError, Point2, Pose,
};

/// Labels the perception layer reserves for its own queries.
pub const RESERVED_LABELS: [&str; 2] = ["waypoint", "passage"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    Humanoid,
    Quadruped,
}

impl AgentClass {
    pub const ALL: [AgentClass; 2] = [AgentClass::Humanoid, AgentClass::Quadruped];
}

impl fmt::Display for AgentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentClass::Humanoid => "humanoid",
            AgentClass::Quadruped => "quadruped",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: String,
    pub boundary: Vec<Point2>,
    pub blocks_vision: bool,
    /// Agent classes that can cross this obstacle. Empty blocks everyone.
    pub traversable_by: BTreeSet<AgentClass>,
}

impl Obstacle {
    pub fn solid(id: impl Into<String>, boundary: Vec<Point2>) -> Self {
        Self {
            id: id.into(),
            boundary,
            blocks_vision: true,
            traversable_by: BTreeSet::new(),
        }
    }

    pub fn blocks(&self, class: AgentClass) -> bool {
        !self.traversable_by.contains(&class)
    }

    /// Perceived as a barrier: occludes, or stops at least one agent class.
    pub fn is_barrier(&self) -> bool {
        self.blocks_vision || AgentClass::ALL.iter().any(|c| self.blocks(*c))
    }

    pub fn contains_strictly(&self, p: Point2) -> bool {
        point_in_polygon(p, &self.boundary)
            && geometry::distance_to_boundary(p, &self.boundary) > 1e-9
    }

    /// Closest point on the obstacle surface to `p`.
    pub fn nearest_point(&self, p: Point2) -> Result<Point2, GeometryError> {
        nearest_obstacle_point(p, self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: String,
    pub name: String,
    pub position: Point2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point2,
    pub max: Point2,
}

impl Bounds {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Largest `t ∈ [0, 1]` such that `a + t (b - a)` stays inside, assuming `a` is inside.
    pub fn clip_parameter(&self, a: Point2, b: Point2) -> f64 {
        let d = b - a;
        let mut t: f64 = 1.0;
        for (pos, delta, lo, hi) in [
            (a.x, d.x, self.min.x, self.max.x),
            (a.y, d.y, self.min.y, self.max.y),
        ] {
            if delta > 0.0 {
                t = t.min((hi - pos) / delta);
            } else if delta < 0.0 {
                t = t.min((lo - pos) / delta);
            }
        }
        t.max(0.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("obstacle '{id}': {reason}")]
    Obstacle { id: String, reason: String },
    #[error("landmark '{id}': {reason}")]
    Landmark { id: String, reason: String },
    #[error("{what}: {reason}")]
    Scene { what: String, reason: String },
}

impl SceneError {
    /// Id of the entity the error is about, if any.
    pub fn entity_id(&self) -> Option<&str> {
        match self {
            SceneError::Obstacle { id, .. } | SceneError::Landmark { id, .. } => Some(id),
            SceneError::Scene { .. } => None,
        }
    }

    fn scene(what: &str, reason: impl Into<String>) -> Self {
        SceneError::Scene {
            what: what.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub name: String,
    pub obstacles: Vec<Obstacle>,
    pub landmarks: Vec<Landmark>,
    pub bounds: Bounds,
    pub humanoid_start: Pose,
    pub quadruped_start: Pose,
    /// Landmark id of the task target.
    pub target: String,
    /// Optimal humanoid route; only metrics read it.
    pub reference_path: Vec<Point2>,
    /// Avoidance arc length of the optimal route around `avoidance_obstacle`.
    pub optimal_avoidance_arc: Option<f64>,
    pub avoidance_obstacle: Option<String>,
    pub landmark_sparse_hint: bool,
}

impl Scene {
    pub fn target_landmark(&self) -> Option<&Landmark> {
        self.landmarks.iter().find(|l| l.id == self.target)
    }

    /// Target position; only valid on a validated scene.
    pub fn target_position(&self) -> Point2 {
        self.target_landmark()
            .map(|l| l.position)
            .expect("validated scene has its target landmark")
    }

    pub fn target_name(&self) -> &str {
        self.target_landmark().map(|l| l.name.as_str()).unwrap_or(&self.target)
    }

    /// Landmark by display name (case-insensitive) or id.
    pub fn landmark_by_label(&self, label: &str) -> Option<&Landmark> {
        let folded = label.to_lowercase();
        self.landmarks
            .iter()
            .find(|l| l.name.to_lowercase() == folded)
            .or_else(|| self.landmarks.iter().find(|l| l.id == label))
    }

    pub fn obstacle(&self, id: &str) -> Option<&Obstacle> {
        self.obstacles.iter().find(|o| o.id == id)
    }

    pub fn reference_length(&self) -> f64 {
        geometry::arc_length(&self.reference_path)
    }

    fn blocked_for(&self, p: Point2, class: AgentClass) -> Option<&Obstacle> {
        self.obstacles
            .iter()
            .find(|o| o.blocks(class) && point_in_polygon(p, &o.boundary))
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let b = self.bounds;
        if !(b.min.is_finite() && b.max.is_finite()) || b.min.x >= b.max.x || b.min.y >= b.max.y {
            return Err(SceneError::scene("bounds", "must be a non-empty finite rectangle"));
        }
        let mut ids = HashSet::new();
        for o in &self.obstacles {
            if !ids.insert(o.id.as_str()) {
                return Err(SceneError::Obstacle {
                    id: o.id.clone(),
                    reason: "duplicate obstacle id".into(),
                });
            }
            if !polygon_is_simple(&o.boundary) {
                return Err(SceneError::Obstacle {
                    id: o.id.clone(),
                    reason: "polygon must be simple with at least 3 vertices and non-zero area".into(),
                });
            }
        }
        let mut names = HashSet::new();
        let mut lids = HashSet::new();
        for l in &self.landmarks {
            let err = |reason: &str| SceneError::Landmark {
                id: l.id.clone(),
                reason: reason.to_string(),
            };
            if !lids.insert(l.id.as_str()) {
                return Err(err("duplicate landmark id"));
            }
            if !names.insert(l.name.to_lowercase()) {
                return Err(err("landmark names must be unique"));
            }
            if RESERVED_LABELS.contains(&l.name.to_lowercase().as_str()) {
                return Err(err("name is reserved for perception queries"));
            }
            if !l.position.is_finite() || !b.contains(l.position) {
                return Err(err("position outside scene bounds"));
            }
            if let Some(o) = self.obstacles.iter().find(|o| {
                o.traversable_by.is_empty() && point_in_polygon(l.position, &o.boundary)
            }) {
                return Err(err(&format!("inside non-traversable obstacle '{}'", o.id)));
            }
        }
        if self.target_landmark().is_none() {
            return Err(SceneError::scene(
                "target",
                format!("'{}' is not a landmark id", self.target),
            ));
        }
        for (what, pose, class) in [
            ("humanoid_start", self.humanoid_start, AgentClass::Humanoid),
            ("quadruped_start", self.quadruped_start, AgentClass::Quadruped),
        ] {
            if !pose.position.is_finite() || !pose.heading.is_finite() || !b.contains(pose.position) {
                return Err(SceneError::scene(what, "outside scene bounds"));
            }
            if let Some(o) = self.blocked_for(pose.position, class) {
                return Err(SceneError::scene(what, format!("inside obstacle '{}'", o.id)));
            }
        }
        if self.reference_path.len() < 2 || self.reference_path.iter().any(|p| !p.is_finite()) {
            return Err(SceneError::scene("reference_path", "needs at least two finite vertices"));
        }
        let first = self.reference_path[0];
        let last = *self.reference_path.last().unwrap();
        if first.distance(self.humanoid_start.position) > 1e-6 {
            return Err(SceneError::scene("reference_path", "must start at humanoid_start"));
        }
        if last.distance(self.target_position()) > 1e-6 {
            return Err(SceneError::scene("reference_path", "must end at the target landmark"));
        }
        match (&self.optimal_avoidance_arc, &self.avoidance_obstacle) {
            (Some(arc), Some(id)) => {
                if !(arc.is_finite() && *arc > 0.0) {
                    return Err(SceneError::scene("optimal_avoidance_arc", "must be positive"));
                }
                if self.obstacle(id).is_none() {
                    return Err(SceneError::scene(
                        "avoidance_obstacle",
                        format!("'{id}' is not an obstacle id"),
                    ));
                }
            }
            (None, None) => {}
            _ => {
                return Err(SceneError::scene(
                    "optimal_avoidance_arc",
                    "must be set together with avoidance_obstacle",
                ))
            }
        }
        Ok(())
    }
}

/// True iff the open segment `(a, b)` meets no obstacle that blocks `class`.
pub fn segment_clear(a: Point2, b: Point2, scene: &Scene, class: AgentClass) -> bool {
    scene
        .obstacles
        .iter()
        .filter(|o| o.blocks(class))
        .all(|o| !open_segment_meets_polygon(a, b, &o.boundary))
}

/// True iff the open segment meets no vision-blocking obstacle.
pub fn line_of_sight(from: Point2, to: Point2, scene: &Scene) -> bool {
    scene
        .obstacles
        .iter()
        .filter(|o| o.blocks_vision)
        .all(|o| !open_segment_meets_polygon(from, to, &o.boundary))
}

/// Closest point on an obstacle's boundary.
pub fn nearest_obstacle_point(p: Point2, obstacle: &Obstacle) -> Result<Point2, GeometryError> {
    if obstacle.contains_strictly(p) {
        return Err(GeometryError::PointInsideObstacle);
    }
    nearest_boundary_point(p, &obstacle.boundary)
        .map(|(q, _, _)| q)
        .ok_or(GeometryError::EmptyPolygon)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    pub obstacle: usize,
}

/// Nearest barrier along a ray, within `max_range`. Ties go to the lowest obstacle index.
pub fn cast_ray(
    origin: Point2,
    angle: f64,
    max_range: f64,
    scene: &Scene,
    filter: impl Fn(&Obstacle) -> bool,
) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    for (i, o) in scene.obstacles.iter().enumerate() {
        if !filter(o) {
            continue;
        }
        if let Some(d) = ray_polygon_distance(origin, angle, &o.boundary) {
            if d <= max_range && best.is_none_or(|b| d < b.distance) {
                best = Some(RayHit {
                    distance: d,
                    obstacle: i,
                });
            }
        }
    }
    best
}

/// Longest prefix of the straight move `from → to` that stays clear for
/// `class` and inside the bounds, keeping `margin` meters from first contact.
pub fn clip_motion(from: Point2, to: Point2, scene: &Scene, class: AgentClass, margin: f64) -> Point2 {
    let len = from.distance(to);
    if len == 0.0 {
        return from;
    }
    let mut t = scene.bounds.clip_parameter(from, to);
    let mut contact = false;
    for o in scene.obstacles.iter().filter(|o| o.blocks(class)) {
        if let Some(c) = first_boundary_contact(from, to, &o.boundary) {
            if c < t || (c == t && !contact) {
                t = c;
                contact = true;
            }
        }
    }
    if contact {
        t = ((t * len - margin) / len).max(0.0);
    }
    let end = from.lerp(to, t);
    if t < 1.0 && !segment_clear(from, end, scene, class) {
        return from;
    }
    end
}

#[cfg(test)]
pub(crate) mod test_scenes {
    use super::*;
    use crate::geometry::rectangle;

    pub fn open_scene(obstacles: Vec<Obstacle>, landmarks: Vec<Landmark>) -> Scene {
        let (target, end) = landmarks
            .first()
            .map(|l| (l.id.clone(), l.position))
            .unwrap_or_else(|| ("none".into(), Point2::new(1.0, 0.0)));
        Scene {
            name: "test".into(),
            obstacles,
            landmarks,
            bounds: Bounds {
                min: Point2::new(-20.0, -20.0),
                max: Point2::new(20.0, 20.0),
            },
            humanoid_start: Pose::new(Point2::new(0.0, 0.0), 0.0),
            quadruped_start: Pose::new(Point2::new(0.0, 0.0), 0.0),
            target,
            reference_path: vec![Point2::new(0.0, 0.0), end],
            optimal_avoidance_arc: None,
            avoidance_obstacle: None,
            landmark_sparse_hint: false,
        }
    }

    pub fn unit_square_at(id: &str, c: Point2) -> Obstacle {
        Obstacle::solid(
            id,
            rectangle(Point2::new(c.x - 0.5, c.y - 0.5), Point2::new(c.x + 0.5, c.y + 0.5)),
        )
    }

    pub fn landmark(name: &str, x: f64, y: f64) -> Landmark {
        Landmark {
            id: name.into(),
            name: name.into(),
            position: Point2::new(x, y),
        }
    }
}
