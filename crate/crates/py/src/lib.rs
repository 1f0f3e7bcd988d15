//! Python bindings for the tzpp simulator.
//!
//! ```python
//! import tzpp_py
//! scene = tzpp_py.Scene.load("builtin:3")
//! trace = tzpp_py.run_episode(scene, agents="g1-go2", seed=7)
//! print(trace.result, tzpp_py.report(trace, scene)["PS"])
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use tzpp::engine::{self, Agents, SimConfig};
use tzpp::geometry::{self, Point2};
use tzpp::harness::{format_suite, make_oracle, run_suite, OracleChoice, ReportFormat, SuiteArgs};
use tzpp::metrics::{self, MetricsReport};
use tzpp::scenario::{builtin_scenes, resolve_scene, scene_to_string};
use tzpp::trace::EpisodeTrace;
use tzpp::world::AgentClass;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn points(raw: Vec<(f64, f64)>) -> Vec<Point2> {
    raw.into_iter().map(|(x, y)| Point2::new(x, y)).collect()
}

fn agent_name(a: AgentClass) -> &'static str {
    match a {
        AgentClass::Humanoid => "humanoid",
        AgentClass::Quadruped => "quadruped",
    }
}

/// A static world: obstacles, landmarks, start poses and the target.
#[pyclass(name = "Scene", frozen)]
struct PyScene {
    inner: tzpp::world::Scene,
}

#[pymethods]
impl PyScene {
    /// `builtin:N` or a path to a scene file.
    #[staticmethod]
    fn load(spec: &str) -> PyResult<Self> {
        resolve_scene(spec).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn builtins() -> Vec<Self> {
        builtin_scenes().into_iter().map(|inner| Self { inner }).collect()
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn target(&self) -> &str {
        self.inner.target_name()
    }

    #[getter]
    fn target_position(&self) -> (f64, f64) {
        let p = self.inner.target_position();
        (p.x, p.y)
    }

    #[getter]
    fn reference_path(&self) -> Vec<(f64, f64)> {
        self.inner.reference_path.iter().map(|p| (p.x, p.y)).collect()
    }

    #[getter]
    fn reference_length(&self) -> f64 {
        self.inner.reference_length()
    }

    #[getter]
    fn obstacle_ids(&self) -> Vec<String> {
        self.inner.obstacles.iter().map(|o| o.id.clone()).collect()
    }

    fn to_toml(&self) -> String {
        scene_to_string(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Scene({:?}, target={:?})", self.inner.name, self.inner.target_name())
    }
}

/// A recorded episode.
#[pyclass(name = "Trace", frozen)]
struct PyTrace {
    inner: EpisodeTrace,
}

#[pymethods]
impl PyTrace {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        EpisodeTrace::load(&path).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        EpisodeTrace::parse_jsonl(text).map(|inner| Self { inner }).map_err(value_err)
    }

    #[getter]
    fn result(&self) -> String {
        self.inner.result().to_string()
    }

    #[getter]
    fn success(&self) -> bool {
        self.inner.result().is_success()
    }

    #[getter]
    fn scene(&self) -> &str {
        &self.inner.header.scene
    }

    #[getter]
    fn turns(&self) -> usize {
        self.inner.terminal.turn
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.terminal.time
    }

    #[getter]
    fn final_distance(&self) -> f64 {
        self.inner.terminal.d_dt
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }

    /// `(agent, x, y, heading)` after every record.
    fn poses(&self) -> Vec<(&'static str, f64, f64, f64)> {
        self.inner
            .poses()
            .into_iter()
            .map(|(a, p)| (agent_name(a), p.position.x, p.position.y, p.heading))
            .collect()
    }

    fn positions(&self, agent: &str) -> PyResult<Vec<(f64, f64)>> {
        let class = match agent {
            "humanoid" => AgentClass::Humanoid,
            "quadruped" => AgentClass::Quadruped,
            other => return Err(value_err(format!("unknown agent '{other}'"))),
        };
        Ok(self.inner.positions(class).into_iter().map(|p| (p.x, p.y)).collect())
    }

    fn to_jsonl(&self) -> String {
        self.inner.to_jsonl()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Trace({:?}, {}, {} records)", self.inner.header.scene, self.inner.result(), self.inner.records.len())
    }
}

fn report_dict(r: &MetricsReport) -> BTreeMap<&'static str, Option<f64>> {
    MetricsReport::COLUMNS.iter().copied().zip(r.values()).collect()
}

/// Runs one episode and returns its trace.
#[pyfunction]
#[pyo3(signature = (scene, agents = "g1-go2", seed = 0, disable_mode_x = false, disable_mode_y = false, turn_budget = 60, oracle = "geometric", oracle_url = None))]
#[allow(clippy::too_many_arguments)]
fn run_episode(
    py: Python<'_>,
    scene: &PyScene,
    agents: &str,
    seed: u64,
    disable_mode_x: bool,
    disable_mode_y: bool,
    turn_budget: usize,
    oracle: &str,
    oracle_url: Option<&str>,
) -> PyResult<PyTrace> {
    let choice: OracleChoice = oracle.parse().map_err(value_err)?;
    let config = SimConfig {
        agents: agents.parse::<Agents>().map_err(value_err)?,
        seed,
        disable_mode_x,
        disable_mode_y,
        turn_budget,
        ..SimConfig::default()
    };
    let scene = &scene.inner;
    let trace = py
        .detach(|| -> anyhow::Result<EpisodeTrace> {
            let (mut oracle, name) = make_oracle(&choice, oracle_url, &config)?;
            Ok(engine::run_episode(scene, &config, oracle.as_mut(), &name)?)
        })
        .map_err(|e| value_err(format!("{e:#}")))?;
    Ok(PyTrace { inner: trace })
}

/// All metrics of a trace; `None` marks a metric that does not apply.
#[pyfunction]
fn report(trace: &PyTrace, scene: &PyScene) -> PyResult<BTreeMap<&'static str, Option<f64>>> {
    metrics::compute_report(&trace.inner, &scene.inner)
        .map(|r| report_dict(&r))
        .map_err(value_err)
}

/// The ablation table over every built-in scene.
#[pyfunction]
#[pyo3(signature = (seed = 0, repeat = 3, csv = false))]
fn suite(py: Python<'_>, seed: u64, repeat: usize, csv: bool) -> PyResult<String> {
    let args = SuiteArgs {
        seed,
        repeat,
        report: if csv { ReportFormat::Csv } else { ReportFormat::Table },
    };
    let rows = py.detach(|| run_suite(&args)).map_err(value_err)?;
    Ok(format_suite(&rows, args.report))
}

#[pyfunction]
fn path_score(optimal: f64, actual: f64) -> PyResult<f64> {
    metrics::path_score(optimal, actual).map_err(value_err)
}

#[pyfunction]
fn path_rmse(trajectory: Vec<(f64, f64)>, reference: Vec<(f64, f64)>) -> PyResult<f64> {
    metrics::path_rmse(&points(trajectory), &points(reference)).map_err(value_err)
}

#[pyfunction]
fn arc_length(path: Vec<(f64, f64)>) -> f64 {
    geometry::arc_length(&points(path))
}

/// Avoidance coefficient of a trajectory against a polygonal obstacle.
#[pyfunction]
#[pyo3(signature = (trajectory, polygon, optimal_arc, spacing = metrics::AVOIDANCE_SPACING))]
fn avoidance_coefficient(
    trajectory: Vec<(f64, f64)>,
    polygon: Vec<(f64, f64)>,
    optimal_arc: f64,
    spacing: f64,
) -> PyResult<f64> {
    let obstacle = tzpp::world::Obstacle::solid("obstacle", points(polygon));
    metrics::avoidance_coefficient(&points(trajectory), &obstacle, optimal_arc, spacing).map_err(value_err)
}

#[pyfunction]
fn project_to_polyline(p: (f64, f64), path: Vec<(f64, f64)>) -> PyResult<((f64, f64), f64)> {
    let (q, d) = geometry::project_to_polyline(Point2::new(p.0, p.1), &points(path)).map_err(value_err)?;
    Ok(((q.x, q.y), d))
}

#[pyfunction]
fn regular_polygon(center: (f64, f64), radius: f64, n: usize) -> Vec<(f64, f64)> {
    geometry::regular_polygon(Point2::new(center.0, center.1), radius, n)
        .into_iter()
        .map(|p| (p.x, p.y))
        .collect()
}

#[pymodule]
fn tzpp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScene>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(suite, m)?)?;
    m.add_function(wrap_pyfunction!(path_score, m)?)?;
    m.add_function(wrap_pyfunction!(path_rmse, m)?)?;
    m.add_function(wrap_pyfunction!(arc_length, m)?)?;
    m.add_function(wrap_pyfunction!(avoidance_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(project_to_polyline, m)?)?;
    m.add_function(wrap_pyfunction!(regular_polygon, m)?)?;
    Ok(())
}
