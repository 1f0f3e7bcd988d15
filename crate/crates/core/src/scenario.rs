//! Scene files and the built-in evaluation scenes.
//!
//! Scene files are TOML (`.tzpp-scene`), lengths in meters, angles in radians:
//!
//! ```toml
//! format = 1
//! name = "demo"
//! target = "sofa"
//! reference_path = [[0.0, 0.0], [3.0, 0.0]]
//!
//! [bounds]
//! min = [-5.0, -5.0]
//! max = [5.0, 5.0]
//!
//! [humanoid_start]
//! x = 0.0
//! y = 0.0
//! heading = 0.0
//!
//! [quadruped_start]
//! x = 0.0
//! y = 0.0
//! heading = 0.0
//!
//! [[landmark]]
//! id = "sofa"
//! name = "sofa"
//! x = 3.0
//! y = 0.0
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rectangle, Point2, Pose};
use crate::world::{AgentClass, Bounds, Landmark, Obstacle, Scene, SceneError};

pub const SCENE_FORMAT: u32 = 1;
pub const SCENE_EXTENSION: &str = "tzpp-scene";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{}{error}", .line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid { line: Option<usize>, error: SceneError },
    #[error("unsupported scene format {0}")]
    Format(u32),
    #[error("unknown built-in scene '{0}' (expected 1-5)")]
    UnknownBuiltin(String),
    #[error("{path}: {error}")]
    Io { path: String, error: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StartPose {
    x: f64,
    y: f64,
    heading: f64,
}

impl From<Pose> for StartPose {
    fn from(p: Pose) -> Self {
        Self {
            x: p.position.x,
            y: p.position.y,
            heading: p.heading,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BoundsBlock {
    min: [f64; 2],
    max: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ObstacleBlock {
    id: String,
    vertices: Vec<[f64; 2]>,
    #[serde(default = "yes")]
    blocks_vision: bool,
    #[serde(default)]
    traversable_by: Vec<AgentClass>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LandmarkBlock {
    id: String,
    name: String,
    x: f64,
    y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SceneFile {
    format: u32,
    name: String,
    target: String,
    #[serde(default)]
    landmark_sparse_hint: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimal_avoidance_arc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    avoidance_obstacle: Option<String>,
    reference_path: Vec<[f64; 2]>,
    bounds: BoundsBlock,
    humanoid_start: StartPose,
    quadruped_start: StartPose,
    #[serde(default, rename = "obstacle")]
    obstacles: Vec<ObstacleBlock>,
    #[serde(default, rename = "landmark")]
    landmarks: Vec<LandmarkBlock>,
}

fn pt(p: [f64; 2]) -> Point2 {
    Point2::new(p[0], p[1])
}

fn arr(p: Point2) -> [f64; 2] {
    [p.x, p.y]
}

impl SceneFile {
    fn into_scene(self) -> Scene {
        let pose = |s: StartPose| Pose {
            position: Point2::new(s.x, s.y),
            heading: s.heading,
        };
        Scene {
            name: self.name,
            obstacles: self
                .obstacles
                .into_iter()
                .map(|o| Obstacle {
                    id: o.id,
                    boundary: o.vertices.into_iter().map(pt).collect(),
                    blocks_vision: o.blocks_vision,
                    traversable_by: o.traversable_by.into_iter().collect(),
                })
                .collect(),
            landmarks: self
                .landmarks
                .into_iter()
                .map(|l| Landmark {
                    id: l.id,
                    name: l.name,
                    position: Point2::new(l.x, l.y),
                })
                .collect(),
            bounds: Bounds {
                min: pt(self.bounds.min),
                max: pt(self.bounds.max),
            },
            humanoid_start: pose(self.humanoid_start),
            quadruped_start: pose(self.quadruped_start),
            target: self.target,
            reference_path: self.reference_path.into_iter().map(pt).collect(),
            optimal_avoidance_arc: self.optimal_avoidance_arc,
            avoidance_obstacle: self.avoidance_obstacle,
            landmark_sparse_hint: self.landmark_sparse_hint,
        }
    }

    fn from_scene(scene: &Scene) -> Self {
        Self {
            format: SCENE_FORMAT,
            name: scene.name.clone(),
            target: scene.target.clone(),
            landmark_sparse_hint: scene.landmark_sparse_hint,
            optimal_avoidance_arc: scene.optimal_avoidance_arc,
            avoidance_obstacle: scene.avoidance_obstacle.clone(),
            reference_path: scene.reference_path.iter().copied().map(arr).collect(),
            bounds: BoundsBlock {
                min: arr(scene.bounds.min),
                max: arr(scene.bounds.max),
            },
            humanoid_start: scene.humanoid_start.into(),
            quadruped_start: scene.quadruped_start.into(),
            obstacles: scene
                .obstacles
                .iter()
                .map(|o| ObstacleBlock {
                    id: o.id.clone(),
                    vertices: o.boundary.iter().copied().map(arr).collect(),
                    blocks_vision: o.blocks_vision,
                    traversable_by: o.traversable_by.iter().copied().collect(),
                })
                .collect(),
            landmarks: scene
                .landmarks
                .iter()
                .map(|l| LandmarkBlock {
                    id: l.id.clone(),
                    name: l.name.clone(),
                    x: l.position.x,
                    y: l.position.y,
                })
                .collect(),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Line declaring `id = "<id>"`, used to locate invariant violations.
fn line_of_id(text: &str, id: &str) -> Option<usize> {
    let exact = format!("\"{id}\"");
    text.lines()
        .position(|l| {
            let t = l.trim_start();
            t.starts_with("id") && t.contains(&exact)
        })
        .map(|i| i + 1)
}

pub fn parse_scene(text: &str) -> Result<Scene, ScenarioError> {
    let file: SceneFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ScenarioError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    if file.format != SCENE_FORMAT {
        return Err(ScenarioError::Format(file.format));
    }
    let scene = file.into_scene();
    scene.validate().map_err(|error| ScenarioError::Invalid {
        line: error.entity_id().and_then(|id| line_of_id(text, id)),
        error,
    })?;
    Ok(scene)
}

pub fn load_scene(path: &Path) -> Result<Scene, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|error| ScenarioError::Io {
        path: path.display().to_string(),
        error,
    })?;
    parse_scene(&text)
}

pub fn scene_to_string(scene: &Scene) -> String {
    toml::to_string(&SceneFile::from_scene(scene)).expect("scene serializes")
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<(), ScenarioError> {
    std::fs::write(path, scene_to_string(scene)).map_err(|error| ScenarioError::Io {
        path: path.display().to_string(),
        error,
    })
}

/// `builtin:N` or a file path.
pub fn resolve_scene(spec: &str) -> Result<Scene, ScenarioError> {
    match spec.strip_prefix("builtin:") {
        Some(n) => builtin_scene(n),
        None => load_scene(Path::new(spec)),
    }
}

pub fn builtin_scene(n: &str) -> Result<Scene, ScenarioError> {
    let i: usize = n.trim().parse().map_err(|_| ScenarioError::UnknownBuiltin(n.to_string()))?;
    builtin_scenes()
        .into_iter()
        .nth(i.wrapping_sub(1))
        .ok_or_else(|| ScenarioError::UnknownBuiltin(n.to_string()))
}

fn wall(id: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> Obstacle {
    Obstacle::solid(id, rectangle(Point2::new(x0, y0), Point2::new(x1, y1)))
}

fn mark(id: &str, name: &str, x: f64, y: f64) -> Landmark {
    Landmark {
        id: id.into(),
        name: name.into(),
        position: Point2::new(x, y),
    }
}

fn path(points: &[(f64, f64)]) -> Vec<Point2> {
    points.iter().map(|&(x, y)| Point2::new(x, y)).collect()
}

/// Four walls of thickness `t` just inside `min..max`.
fn perimeter(min: (f64, f64), max: (f64, f64), t: f64) -> Vec<Obstacle> {
    let (x0, y0) = min;
    let (x1, y1) = max;
    vec![
        wall("wall_south", x0, y0, x1, y0 + t),
        wall("wall_north", x0, y1 - t, x1, y1),
        wall("wall_west", x0, y0 + t, x0 + t, y1 - t),
        wall("wall_east", x1 - t, y0 + t, x1, y1 - t),
    ]
}

fn base(name: &str, bounds: ((f64, f64), (f64, f64)), start: Pose, target: &str) -> Scene {
    let ((x0, y0), (x1, y1)) = bounds;
    Scene {
        name: name.into(),
        obstacles: perimeter((x0, y0), (x1, y1), 0.2),
        landmarks: Vec::new(),
        bounds: Bounds {
            min: Point2::new(x0 - 0.5, y0 - 0.5),
            max: Point2::new(x1 + 0.5, y1 + 0.5),
        },
        humanoid_start: start,
        quadruped_start: Pose::new(start.position + Point2::new(0.0, -0.3).rotate(start.heading), start.heading),
        target: target.into(),
        reference_path: Vec::new(),
        optimal_avoidance_arc: None,
        avoidance_obstacle: None,
        landmark_sparse_hint: false,
    }
}

/// The five evaluation scenes.
pub fn builtin_scenes() -> Vec<Scene> {
    vec![scene_l_turn(), scene_narrow_pillar(), scene_open_pillar(), scene_z_turn(), scene_steps()]
}

/// L-shaped corridor; the sofa waits around the left turn.
fn scene_l_turn() -> Scene {
    let start = Pose::new(Point2::new(0.0, 0.0), 0.0);
    let mut s = base("scene1-l-turn-sofa", ((-1.0, -1.0), (3.0, 5.0)), start, "sofa");
    s.obstacles.extend([
        wall("corridor_top", -0.8, 0.8, 1.0, 4.8),
        wall("corridor_right", 2.6, -0.8, 2.8, 4.8),
    ]);
    s.landmarks = vec![mark("sofa", "sofa", 1.8, 2.6), mark("lamp", "lamp", 2.3, -0.5)];
    s.reference_path = path(&[(0.0, 0.0), (1.8, 0.0), (1.8, 2.6)]);
    s
}

/// Narrow pillar fused to a divider on its right; only the left side passes.
fn scene_narrow_pillar() -> Scene {
    let start = Pose::new(Point2::new(0.0, 0.0), 0.0);
    let mut s = base("scene2-narrow-pillar", ((-1.0, -1.8), (4.0, 2.2)), start, "cabinet");
    s.obstacles.extend([
        wall("pillar", 0.9, -0.5, 1.2, 0.5),
        wall("divider", 0.9, -1.6, 1.2, -0.5),
    ]);
    s.landmarks = vec![mark("cabinet", "cabinet", 2.0, 0.0), mark("plant", "plant", -0.5, 1.6)];
    s.reference_path = path(&[(0.0, 0.0), (1.05, 0.8), (2.0, 0.0)]);
    s
}

/// Free-standing pillar with room on both sides, in a bare hall.
fn scene_open_pillar() -> Scene {
    let start = Pose::new(Point2::new(0.0, 0.0), 0.0);
    let mut s = base("scene3-open-pillar", ((-3.5, -4.0), (8.0, 4.0)), start, "chair");
    s.obstacles.extend([wall("pillar", 1.6, -0.6, 2.2, 0.6), wall("crate", 3.4, 0.3, 3.6, 1.2)]);
    s.landmarks = vec![mark("chair", "chair", 4.4, 0.0)];
    s.reference_path = path(&[(0.0, 0.0), (1.9, -0.95), (4.4, 0.0)]);
    s.landmark_sparse_hint = true;
    s
}

/// Two opposite turns; the extinguisher hangs at the far end.
fn scene_z_turn() -> Scene {
    let start = Pose::new(Point2::new(0.0, 0.0), 0.0);
    let mut s = base("scene4-z-turn-extinguisher", ((-1.0, -1.0), (5.0, 4.8)), start, "fire_extinguisher");
    s.obstacles.extend([
        wall("upper_left", -0.8, 0.8, 1.2, 4.6),
        wall("lower_right", 2.8, -0.8, 4.8, 2.4),
    ]);
    s.landmarks = vec![
        mark("fire_extinguisher", "fire extinguisher", 4.2, 3.5),
        mark("bin", "bin", 2.5, -0.5),
    ];
    s.reference_path = path(&[(0.0, 0.0), (1.5, 0.6), (2.5, 2.6), (4.2, 3.5)]);
    s
}

/// A band of steps the humanoid cannot climb, with a ramp alongside; a
/// cabinet hides the desk from the start.
fn scene_steps() -> Scene {
    let start = Pose::new(Point2::new(0.0, 0.0), 0.0);
    let mut s = base("scene5-steps-ramp", ((-1.0, -4.0), (11.0, 4.0)), start, "desk");
    let mut steps = wall("steps", 2.0, -3.8, 3.0, 0.8);
    steps.blocks_vision = false;
    steps.traversable_by = BTreeSet::from([AgentClass::Quadruped]);
    let mut ramp = wall("ramp", 2.0, 0.8, 3.0, 3.8);
    ramp.blocks_vision = false;
    ramp.traversable_by = BTreeSet::from(AgentClass::ALL);
    s.obstacles.extend([steps, ramp, wall("cabinet", 5.8, -2.4, 6.2, -1.2)]);
    s.landmarks = vec![mark("desk", "desk", 10.0, -3.0)];
    s.reference_path = path(&[(0.0, 0.0), (1.9, 1.2), (3.1, 1.2), (10.0, -3.0)]);
    s.avoidance_obstacle = Some("steps".into());
    s.optimal_avoidance_arc = Some(5.6);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{line_of_sight, segment_clear};

    #[test]
    fn builtins_are_valid_and_round_trip() {
        for s in builtin_scenes() {
            s.validate().unwrap_or_else(|e| panic!("{}: {e}", s.name));
            let text = scene_to_string(&s);
            let back = parse_scene(&text).unwrap();
            assert_eq!(back, s, "{}", s.name);
            assert_eq!(parse_scene(&scene_to_string(&back)).unwrap(), back);
        }
    }

    #[test]
    fn builtin_targets_are_out_of_sight() {
        for s in builtin_scenes() {
            assert!(
                !line_of_sight(s.humanoid_start.position, s.target_position(), &s),
                "{}",
                s.name
            );
        }
    }

    #[test]
    fn reference_paths_are_clear_for_the_humanoid() {
        for s in builtin_scenes() {
            for w in s.reference_path.windows(2) {
                assert!(segment_clear(w[0], w[1], &s, AgentClass::Humanoid), "{} {:?}", s.name, w);
            }
        }
    }

    #[test]
    fn scene_one_targets_the_sofa() {
        assert_eq!(builtin_scene("1").unwrap().target_name(), "sofa");
        assert!(builtin_scene("6").is_err());
        assert!(resolve_scene("builtin:x").is_err());
    }

    #[test]
    fn scene_five_traversability_differs_by_class() {
        let s = builtin_scene("5").unwrap();
        let a = Point2::new(1.0, -1.0);
        let b = Point2::new(4.0, -1.0);
        assert!(!segment_clear(a, b, &s, AgentClass::Humanoid));
        assert!(segment_clear(a, b, &s, AgentClass::Quadruped));
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = parse_scene("format = 1\nname = \"x\"\ntarget = 3\n").unwrap_err();
        match err {
            ScenarioError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn invariant_errors_locate_the_entity() {
        let mut s = builtin_scene("2").unwrap();
        s.obstacles[4].boundary = path(&[(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]);
        let text = scene_to_string(&s);
        match parse_scene(&text).unwrap_err() {
            ScenarioError::Invalid { line: Some(line), .. } => {
                assert!(text.lines().nth(line - 1).unwrap().contains("pillar"));
            }
            other => panic!("{other}"),
        }
    }
}
