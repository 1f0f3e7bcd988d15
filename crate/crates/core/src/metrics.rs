//! Evaluation metrics computed from an episode trace.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{arc_length, project_to_polyline, resample, GeometryError, Point2};
use crate::trace::{Action, EpisodeTrace, MessageBody, ScanKind};
use crate::world::{nearest_obstacle_point, AgentClass, Obstacle, Scene};

pub const AVOIDANCE_SPACING: f64 = 0.05;
pub const REVISIT_CELL: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("path lengths must be positive (optimal {optimal}, actual {actual})")]
    NonPositiveLength { optimal: f64, actual: f64 },
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("optimal avoidance arc must be positive")]
    NonPositiveArc,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("malformed trace: {0}")]
    Trace(String),
}

/// `100 · L_optimal / L_actual`.
pub fn path_score(optimal: f64, actual: f64) -> Result<f64, MetricsError> {
    if !(optimal > 0.0 && actual > 0.0) {
        return Err(MetricsError::NonPositiveLength { optimal, actual });
    }
    Ok(100.0 * optimal / actual)
}

/// Root mean square of the perpendicular distances from each trajectory
/// point to the reference polyline.
pub fn path_rmse(trajectory: &[Point2], reference: &[Point2]) -> Result<f64, MetricsError> {
    if trajectory.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let mut sum = 0.0;
    for &p in trajectory {
        let (_, d) = project_to_polyline(p, reference)?;
        sum += d * d;
    }
    Ok((sum / trajectory.len() as f64).sqrt())
}

/// Length of the path traced by the nearest obstacle point while walking the
/// trajectory, resampled at `spacing`.
pub fn avoidance_length(trajectory: &[Point2], obstacle: &Obstacle, spacing: f64) -> Result<f64, MetricsError> {
    if trajectory.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let q = resample(trajectory, spacing)
        .into_iter()
        .map(|p| nearest_obstacle_point(p, obstacle))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(arc_length(&q))
}

pub fn avoidance_coefficient(
    trajectory: &[Point2],
    obstacle: &Obstacle,
    optimal_arc: f64,
    spacing: f64,
) -> Result<f64, MetricsError> {
    if optimal_arc.is_nan() || optimal_arc <= 0.0 {
        return Err(MetricsError::NonPositiveArc);
    }
    Ok(avoidance_length(trajectory, obstacle, spacing)? / optimal_arc)
}

/// Number of times a position sequence re-enters a grid cell it left earlier.
pub fn revisits(positions: &[Point2], cell: f64) -> usize {
    let key = |p: Point2| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
    let mut seen = HashSet::new();
    let mut current = None;
    let mut count = 0;
    for &p in positions {
        let k = key(p);
        if current == Some(k) {
            continue;
        }
        if !seen.insert(k) {
            count += 1;
        }
        current = Some(k);
    }
    count
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "TIME")]
    pub time: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "CR")]
    pub cr: f64,
    #[serde(rename = "PS")]
    pub ps: Option<f64>,
    #[serde(rename = "RMSE")]
    pub rmse: Option<f64>,
    #[serde(rename = "N_K")]
    pub n_k: f64,
    #[serde(rename = "EER")]
    pub eer: Option<f64>,
    #[serde(rename = "N_E")]
    pub n_e: f64,
    #[serde(rename = "N_move")]
    pub n_move: f64,
    #[serde(rename = "V_GE")]
    pub v_ge: Option<f64>,
    #[serde(rename = "CCR_q")]
    pub ccr_q: Option<f64>,
    #[serde(rename = "N_rev_h")]
    pub n_rev_h: f64,
    #[serde(rename = "N_rev_q")]
    pub n_rev_q: f64,
    #[serde(rename = "N_rot_q")]
    pub n_rot_q: f64,
    #[serde(rename = "V_avoid")]
    pub v_avoid: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 16] = [
        "TIME", "D", "R", "CR", "PS", "RMSE", "N_K", "EER", "N_E", "N_move", "V_GE", "CCR_q", "N_rev_h",
        "N_rev_q", "N_rot_q", "V_avoid",
    ];

    /// Values in column order; `None` is not applicable.
    pub fn values(&self) -> [Option<f64>; 16] {
        [
            Some(self.time),
            Some(self.d),
            Some(self.r),
            Some(self.cr),
            self.ps,
            self.rmse,
            Some(self.n_k),
            self.eer,
            Some(self.n_e),
            Some(self.n_move),
            self.v_ge,
            self.ccr_q,
            Some(self.n_rev_h),
            Some(self.n_rev_q),
            Some(self.n_rot_q),
            self.v_avoid,
        ]
    }

    pub fn value(&self, column: &str) -> Option<f64> {
        Self::COLUMNS
            .iter()
            .position(|c| *c == column)
            .and_then(|i| self.values()[i])
    }

    /// Mean over repeated runs. Optional fields average over the runs where
    /// they are defined; CR becomes the success fraction.
    pub fn aggregate(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let opt = |f: fn(&MetricsReport) -> Option<f64>| {
            let v: Vec<f64> = reports.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let mut notes: Vec<String> = reports.iter().flat_map(|r| r.notes.iter().cloned()).collect();
        notes.sort();
        notes.dedup();
        Some(MetricsReport {
            time: mean(|r| r.time),
            d: mean(|r| r.d),
            r: mean(|r| r.r),
            cr: mean(|r| r.cr),
            ps: opt(|r| r.ps),
            rmse: opt(|r| r.rmse),
            n_k: mean(|r| r.n_k),
            eer: opt(|r| r.eer),
            n_e: mean(|r| r.n_e),
            n_move: mean(|r| r.n_move),
            v_ge: opt(|r| r.v_ge),
            ccr_q: opt(|r| r.ccr_q),
            n_rev_h: mean(|r| r.n_rev_h),
            n_rev_q: mean(|r| r.n_rev_q),
            n_rot_q: mean(|r| r.n_rot_q),
            v_avoid: opt(|r| r.v_avoid),
            notes,
        })
    }
}

fn dedup_consecutive(points: Vec<Point2>) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::with_capacity(points.len());
    for p in points {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    out
}

/// Full scans whose visible landmarks add nothing to what the same mission
/// had already seen.
fn redundant_scans(trace: &EpisodeTrace) -> usize {
    let mut count = 0;
    let mut mission_turn = None;
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut scan: Option<(usize, ScanKind, BTreeSet<String>)> = None;
    let close = |scan: &mut Option<(usize, ScanKind, BTreeSet<String>)>, seen: &mut BTreeSet<String>, count: &mut usize| {
        if let Some((_, kind, names)) = scan.take() {
            let new = names.iter().any(|n| !seen.contains(n));
            if kind == ScanKind::Full360 && !new {
                *count += 1;
            }
            seen.extend(names);
        }
    };
    for r in trace.records_of(AgentClass::Quadruped) {
        if mission_turn != Some(r.turn) {
            close(&mut scan, &mut seen, &mut count);
            seen.clear();
            mission_turn = Some(r.turn);
        }
        if let Action::Scan { scan: id, kind, visible, .. } = &r.action {
            if scan.as_ref().map(|s| s.0) != Some(*id) {
                close(&mut scan, &mut seen, &mut count);
                scan = Some((*id, *kind, BTreeSet::new()));
            }
            if let Some(s) = scan.as_mut() {
                s.2.extend(visible.iter().cloned());
            }
        }
    }
    close(&mut scan, &mut seen, &mut count);
    count
}

pub fn compute_report(trace: &EpisodeTrace, scene: &Scene) -> Result<MetricsReport, MetricsError> {
    if trace.header.scene != scene.name {
        return Err(MetricsError::Trace(format!(
            "line 1: trace is for scene '{}', not '{}'",
            trace.header.scene, scene.name
        )));
    }
    let mut notes = Vec::new();
    let humanoid: Vec<_> = trace.records_of(AgentClass::Humanoid).collect();
    let d: f64 = humanoid.iter().map(|r| r.displacement).fold(0.0, |a, b| a + b);
    let r: f64 = humanoid.iter().map(|r| r.rotation.abs()).fold(0.0, |a, b| a + b);
    let d_q: f64 = trace.records_of(AgentClass::Quadruped).map(|r| r.displacement).fold(0.0, |a, b| a + b);
    let success = trace.result().is_success();

    let mut h_path = trace.positions(AgentClass::Humanoid);
    if h_path.is_empty() {
        h_path.push(trace.terminal.humanoid.position);
    }
    let h_path = dedup_consecutive(h_path);

    let ps = if success {
        let optimal = scene.reference_length();
        if d <= 0.0 {
            notes.push("PS undefined: humanoid did not move".to_string());
            None
        } else if d < optimal - 1e-9 {
            notes.push(format!("PS clamped: actual length {d:.3} below reference {optimal:.3}"));
            Some(100.0)
        } else {
            Some(path_score(optimal, d)?)
        }
    } else {
        None
    };
    let rmse = Some(path_rmse(&h_path, &scene.reference_path)?);

    let reports: Vec<_> = trace.reports().collect();
    let n_k = reports.iter().filter(|r| r.outcome == crate::explorer::Outcome::Success).count();
    let reached = reports.iter().filter(|r| r.reached).count();
    let n_e = trace.assignments().count();
    if reports.len() != n_e {
        return Err(MetricsError::Trace(format!(
            "{n_e} waypoint assignments but {} exploration reports",
            reports.len()
        )));
    }
    let eer = (reached > 0).then(|| n_k as f64 / reached as f64);
    let ccr_q = (n_e > 0).then(|| reached as f64 / n_e as f64);
    let n_move = trace
        .records_of(AgentClass::Humanoid)
        .filter(|r| r.displacement > 0.0)
        .filter(|r| r.messages.iter().any(|m| matches!(m.body, MessageBody::MoveExecuted { .. })))
        .count();
    let v_ge = (d_q > 0.0).then(|| d / d_q);

    let v_avoid = match (scene.optimal_avoidance_arc, scene.avoidance_obstacle.as_deref()) {
        (Some(arc), Some(id)) => {
            let obstacle = scene
                .obstacle(id)
                .ok_or_else(|| MetricsError::Trace(format!("unknown avoidance obstacle '{id}'")))?;
            Some(avoidance_coefficient(&h_path, obstacle, arc, AVOIDANCE_SPACING)?)
        }
        _ => None,
    };

    Ok(MetricsReport {
        time: trace.terminal.time,
        d,
        r,
        cr: if success { 1.0 } else { 0.0 },
        ps,
        rmse,
        n_k: n_k as f64,
        eer,
        n_e: n_e as f64,
        n_move: n_move as f64,
        v_ge,
        ccr_q,
        n_rev_h: revisits(&trace.positions(AgentClass::Humanoid), REVISIT_CELL) as f64,
        n_rev_q: revisits(&trace.positions(AgentClass::Quadruped), REVISIT_CELL) as f64,
        n_rot_q: redundant_scans(trace) as f64,
        v_avoid,
        notes,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

/// Aligned text table; one row per labelled report.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let mut header = vec!["run".to_string()];
    header.extend(MetricsReport::COLUMNS.iter().map(|c| c.to_string()));
    let mut body: Vec<Vec<String>> = rows
        .iter()
        .map(|(label, r)| {
            let mut row = vec![label.clone()];
            row.extend(r.values().into_iter().map(cell));
            row
        })
        .collect();
    body.insert(0, header);
    let widths: Vec<usize> = (0..body[0].len())
        .map(|i| body.iter().map(|row| row[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &body {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

pub fn format_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = format!("run,{}\n", MetricsReport::COLUMNS.join(","));
    for (label, r) in rows {
        let cells: Vec<String> = r
            .values()
            .into_iter()
            .map(|v| v.map_or_else(|| "n/a".to_string(), |x| format!("{x}")))
            .collect();
        let _ = writeln!(out, "{label},{}", cells.join(","));
    }
    out
}
