use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use tzpp::engine::{run_episode, Agents, SimConfig};
use tzpp::explorer::{ExplorationMode, Reason};
use tzpp::geometry::{regular_polygon, Point2};
use tzpp::metrics::{avoidance_coefficient, compute_report, path_rmse, path_score};
use tzpp::perception::{
    GeometricOracle, Observation, OracleError, OracleVerdict, PerceptionOracle, PerceptionParams, QueryKind,
    ReplayOracle, WaypointCandidate, PASSAGE_LABEL, WAYPOINT_LABEL,
};
use tzpp::scenario::{builtin_scene, builtin_scenes};
use tzpp::trace::{EpisodeResult, EpisodeTrace, FailureReason, MessageBody};
use tzpp::world::{AgentClass, Obstacle, Scene};

const KINEMATIC_EPS: f64 = 1e-9;

fn verdict(name: &str, ok: bool, detail: String) {
    let line = format!("{} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    // Written past the harness capture so the line shows in every run.
    match std::fs::OpenOptions::new().append(true).open("/dev/stdout") {
        Ok(mut out) => {
            let _ = out.write_all(line.as_bytes());
        }
        Err(_) => print!("{line}"),
    }
}

fn geometric() -> GeometricOracle {
    GeometricOracle::new(PerceptionParams::default())
}

fn run(scene: &Scene, config: &SimConfig) -> EpisodeTrace {
    run_episode(scene, config, &mut geometric(), "geometric").expect("valid inputs")
}

fn config(agents: Agents, seed: u64) -> SimConfig {
    SimConfig {
        agents,
        seed,
        ..SimConfig::default()
    }
}

/// Kinematic violations of one trace, as readable strings.
fn kinematic_violations(trace: &EpisodeTrace, d_achieve: f64) -> Vec<String> {
    let mut bad = Vec::new();
    for r in &trace.records {
        if r.displacement > 2.0 + KINEMATIC_EPS {
            bad.push(format!("{} turn {} moved {:.6}", trace.header.scene, r.turn, r.displacement));
        }
        if r.rotation.abs() > FRAC_PI_2 + KINEMATIC_EPS {
            bad.push(format!("{} turn {} rotated {:.6}", trace.header.scene, r.turn, r.rotation));
        }
    }
    if trace.result().is_success() != (trace.terminal.d_dt <= d_achieve) {
        bad.push(format!(
            "{}: result {} with final d_dt {:.4}",
            trace.header.scene,
            trace.result(),
            trace.terminal.d_dt
        ));
    }
    bad
}

/// Quadruped records grouped by round, one group per mission.
fn missions(trace: &EpisodeTrace) -> Vec<Vec<&tzpp::trace::TurnRecord>> {
    let mut by_turn: BTreeMap<usize, Vec<_>> = BTreeMap::new();
    for r in trace.records_of(AgentClass::Quadruped) {
        by_turn.entry(r.turn).or_default().push(r);
    }
    by_turn.into_values().collect()
}

fn mission_report(records: &[&tzpp::trace::TurnRecord]) -> Option<tzpp::explorer::ExplorationReport> {
    records.iter().flat_map(|r| &r.messages).find_map(|m| match &m.body {
        MessageBody::ExplorationReport(rep) => Some((**rep).clone()),
        _ => None,
    })
}

fn alternation_ok(trace: &EpisodeTrace) -> bool {
    let mut pending = false;
    for m in trace.messages() {
        match m.body {
            MessageBody::AssignWaypoint { .. } if pending => return false,
            MessageBody::AssignWaypoint { .. } => pending = true,
            MessageBody::ExplorationReport(_) if !pending => return false,
            MessageBody::ExplorationReport(_) => pending = false,
            _ => {}
        }
    }
    !pending
}

/// Representative traces from every configuration the suite exercises.
fn corpus() -> Vec<(SimConfig, EpisodeTrace)> {
    let mut out = Vec::new();
    for scene in builtin_scenes() {
        let variants = [
            config(Agents::G1Go2, 0),
            SimConfig {
                disable_mode_x: true,
                ..SimConfig::default()
            },
            SimConfig {
                disable_mode_y: true,
                ..SimConfig::default()
            },
            config(Agents::G1Only, 0),
        ];
        for c in variants {
            let t = run(&scene, &c);
            out.push((c, t));
        }
    }
    out
}

/// Distance from `p` to the polyline by sampling each segment densely, with
/// a finer resampling around the best coarse sample.
fn sampled_distance(p: Point2, path: &[Point2]) -> f64 {
    const COARSE: f64 = 1e-3;
    const FINE: f64 = 1e-6;
    let mut best = f64::INFINITY;
    for w in path.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = a.distance(b);
        let at = |s: f64| {
            let t = if len > 0.0 { (s / len).clamp(0.0, 1.0) } else { 0.0 };
            a.lerp(b, t).distance(p)
        };
        let n = (len / COARSE).ceil() as usize;
        let mut s_best = 0.0;
        let mut d_best = at(0.0);
        for i in 1..=n {
            let s = (i as f64 * COARSE).min(len);
            let d = at(s);
            if d < d_best {
                d_best = d;
                s_best = s;
            }
        }
        let m = (2.0 * COARSE / FINE) as usize;
        for i in 0..=m {
            let s = s_best - COARSE + i as f64 * FINE;
            d_best = d_best.min(at(s));
        }
        best = best.min(d_best);
    }
    best
}

fn sampled_rmse(traj: &[Point2], path: &[Point2]) -> f64 {
    let sum: f64 = traj.iter().map(|&p| sampled_distance(p, path).powi(2)).sum();
    (sum / traj.len() as f64).sqrt()
}

fn point() -> impl Strategy<Value = Point2> {
    (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y)| Point2::new(x, y))
}

#[test]
fn acceptance_1_metric_formula_oracles() {
    let start = Instant::now();
    let mut runner = TestRunner::new(Config {
        cases: 200,
        failure_persistence: None,
        ..Config::default()
    });
    let worst = std::cell::Cell::new(0.0f64);
    let strategy = (
        prop::collection::vec(point(), 1..12),
        prop::collection::vec(point(), 2..6),
    );
    let rmse_result = runner.run(&strategy, |(traj, reference)| {
        let got = path_rmse(&traj, &reference).unwrap();
        let want = sampled_rmse(&traj, &reference);
        worst.set(worst.get().max((got - want).abs()));
        prop_assert!((got - want).abs() <= 1e-6, "rmse {got} vs sampled {want}");
        Ok(())
    });

    let identity = [0.5, 1.0, 4.4, 11.52, 1e3].iter().all(|&l| path_score(l, l).unwrap() == 100.0);
    let inversions: Vec<(f64, f64)> = [98.08, 95.5, 72.0, 50.0]
        .iter()
        .map(|&ps| (ps, path_score(4.4, 4.4 / (ps / 100.0)).unwrap()))
        .collect();
    let inversion_ok = inversions.iter().all(|(want, got)| (want - got).abs() <= 1e-9);
    let elapsed = start.elapsed();

    let ok = rmse_result.is_ok() && identity && inversion_ok && elapsed < Duration::from_secs(10);
    verdict(
        "acceptance 1 metric formula oracles",
        ok,
        format!(
            "200 rmse instances worst |err| {:.2e} (tol 1e-6), PS(L,L)=100 {identity}, PS inversion {:.6} (want 98.08), {:.2?} (limit 10s)",
            worst.get(), inversions[0].1, elapsed
        ),
    );
    assert!(rmse_result.is_ok(), "{rmse_result:?}");
    assert!(identity && inversion_ok, "{inversions:?}");
    assert!(elapsed < Duration::from_secs(10));
}

#[test]
fn acceptance_2_avoidance_analytic_case() {
    let start = Instant::now();
    let disk = Obstacle::solid("disk", regular_polygon(Point2::new(0.0, 0.0), 1.0, 64));
    let traj: Vec<Point2> = (0..=2000)
        .map(|i| {
            let a = -FRAC_PI_2 + PI * i as f64 / 2000.0;
            Point2::new(2.0 * a.cos(), 2.0 * a.sin())
        })
        .collect();
    let coarse = avoidance_coefficient(&traj, &disk, PI, 0.05).unwrap();
    let fine = avoidance_coefficient(&traj, &disk, PI, 0.01).unwrap();
    let (e_coarse, e_fine) = ((coarse - 1.0).abs(), (fine - 1.0).abs());
    let elapsed = start.elapsed();
    let ok = e_coarse <= 1e-2 && e_fine < e_coarse && elapsed < Duration::from_secs(5);
    verdict(
        "acceptance 2 avoidance analytic case",
        ok,
        format!("V_avoid {coarse:.5} at 0.05 m, {fine:.5} at 0.01 m (tol 1e-2, finer must be closer), {elapsed:.2?} (limit 5s)"),
    );
    assert!(e_coarse <= 1e-2, "coarse {coarse}");
    assert!(e_fine < e_coarse, "fine {fine} coarse {coarse}");
    assert!(elapsed < Duration::from_secs(5));
}

#[test]
fn acceptance_3_full_system_completion() {
    let start = Instant::now();
    let cfg = SimConfig::default();
    let mut rows = Vec::new();
    let mut all = true;
    for scene in builtin_scenes() {
        let t = run(&scene, &cfg);
        let ok = t.result().is_success();
        all &= ok;
        rows.push(format!("{} {} in {} rounds", scene.name, t.result(), t.terminal.turn));
    }
    let elapsed = start.elapsed();
    let ok = all && elapsed < Duration::from_secs(10);
    verdict(
        "acceptance 3 full system completion",
        ok,
        format!("CR {} on 5 scenes, budget {}, [{}], {elapsed:.2?} (limit 10s)", if all { "100%" } else { "<100%" }, cfg.turn_budget, rows.join("; ")),
    );
    assert!(all, "{rows:?}");
    assert!(elapsed < Duration::from_secs(10));
}

#[test]
fn acceptance_4_humanoid_only_ablation() {
    let mut details = Vec::new();
    let mut ok = true;
    for n in ["3", "4"] {
        let scene = builtin_scene(n).unwrap();
        let solo = (0..3).filter(|&s| run(&scene, &config(Agents::G1Only, s)).result().is_success()).count();
        let pair = (0..3).filter(|&s| run(&scene, &config(Agents::G1Go2, s)).result().is_success()).count();
        ok &= solo < 3 && pair == 3;
        details.push(format!("scene {n}: g1-only CR {solo}/3, g1-go2 CR {pair}/3"));
    }
    verdict("acceptance 4 humanoid-only ablation", ok, details.join("; "));
    assert!(ok, "{details:?}");
}

#[test]
fn acceptance_5_mode_x_ablation() {
    let scene = builtin_scenes()
        .into_iter()
        .find(|s| s.landmark_sparse_hint)
        .expect("a landmark-sparse built-in");
    let full = compute_report(&run(&scene, &SimConfig::default()), &scene).unwrap();
    let no_x_cfg = SimConfig {
        disable_mode_x: true,
        ..SimConfig::default()
    };
    let no_x = compute_report(&run(&scene, &no_x_cfg), &scene).unwrap();
    let ok = no_x.n_rot_q > full.n_rot_q && no_x.n_rev_h >= full.n_rev_h;
    verdict(
        "acceptance 5 mode-x ablation",
        ok,
        format!(
            "{}: N_rot_q {} vs full {} (must be greater), N_rev_h {} vs full {} (must be >=)",
            scene.name, no_x.n_rot_q, full.n_rot_q, no_x.n_rev_h, full.n_rev_h
        ),
    );
    assert!(ok);
}

#[test]
fn acceptance_6_mode_y_ablation() {
    let scene = builtin_scene("5").unwrap();
    let full_t = run(&scene, &SimConfig::default());
    let full = compute_report(&full_t, &scene).unwrap();
    let no_y_cfg = SimConfig {
        disable_mode_y: true,
        ..SimConfig::default()
    };
    let no_y_t = run(&scene, &no_y_cfg);
    let no_y = compute_report(&no_y_t, &scene).unwrap();
    let full_ok = full_t.result().is_success() && full.v_avoid.is_some_and(|v| v >= 0.9);
    let ablated_ok = !no_y_t.result().is_success() || no_y.v_avoid.is_some_and(|v| v < 0.5);
    let ok = full_ok && ablated_ok;
    verdict(
        "acceptance 6 mode-y ablation",
        ok,
        format!(
            "full {} V_avoid {:?} (>= 0.9), disable-mode-y {} V_avoid {:?} (failure or < 0.5)",
            full_t.result(),
            full.v_avoid,
            no_y_t.result(),
            no_y.v_avoid
        ),
    );
    assert!(ok);
}

#[test]
fn acceptance_7_kinematic_invariants() {
    let corpus = corpus();
    let records: usize = corpus.iter().map(|(_, t)| t.records.len()).sum();
    let bad: Vec<String> = corpus.iter().flat_map(|(c, t)| kinematic_violations(t, c.d_achieve)).collect();
    verdict(
        "acceptance 7 kinematic invariants",
        bad.is_empty(),
        format!(
            "{} runs, {records} records, displacement <= 2+1e-9, |rotation| <= pi/2+1e-9, success iff d_dt <= 0.5; {} violations",
            corpus.len(),
            bad.len()
        ),
    );
    assert!(bad.is_empty(), "{bad:?}");
}

/// Geometric answers, except that the quadruped never recognises a waypoint.
struct BlindToWaypoints(GeometricOracle);

impl PerceptionOracle for BlindToWaypoints {
    fn inspect_for(&mut self, target: &str, obs: &Observation) -> Result<OracleVerdict, OracleError> {
        if target == WAYPOINT_LABEL {
            return Ok(OracleVerdict::certain(false));
        }
        self.0.inspect_for(target, obs)
    }
    fn path_ideal(&mut self, target: &str, obs: &Observation, scene: &Scene) -> Result<OracleVerdict, OracleError> {
        self.0.path_ideal(target, obs, scene)
    }
    fn env_all_reachable(&mut self, obs: &Observation) -> Result<OracleVerdict, OracleError> {
        self.0.env_all_reachable(obs)
    }
    fn suggest_waypoints(
        &mut self,
        obs: &Observation,
        target: &str,
        belief: Option<Point2>,
        k: usize,
    ) -> Result<Vec<WaypointCandidate>, OracleError> {
        self.0.suggest_waypoints(obs, target, belief, k)
    }
}

/// Answers no to everything but keeps proposing new nearby waypoints.
struct Adversary {
    calls: usize,
}

impl PerceptionOracle for Adversary {
    fn inspect_for(&mut self, _: &str, _: &Observation) -> Result<OracleVerdict, OracleError> {
        Ok(OracleVerdict::certain(false))
    }
    fn path_ideal(&mut self, _: &str, _: &Observation, _: &Scene) -> Result<OracleVerdict, OracleError> {
        Ok(OracleVerdict::certain(false))
    }
    fn env_all_reachable(&mut self, _: &Observation) -> Result<OracleVerdict, OracleError> {
        Ok(OracleVerdict::certain(false))
    }
    fn suggest_waypoints(
        &mut self,
        obs: &Observation,
        _: &str,
        _: Option<Point2>,
        k: usize,
    ) -> Result<Vec<WaypointCandidate>, OracleError> {
        let out = (0..k.max(1))
            .map(|i| {
                self.calls += 1;
                let n = self.calls as f64;
                WaypointCandidate {
                    point: obs.pose.position.offset(n * 2.399_963, 0.4 * n.sqrt()),
                    score: 1.0 / (1.0 + i as f64),
                }
            })
            .collect();
        Ok(out)
    }
}

#[test]
fn acceptance_8_protocol_invariants() {
    let corpus = corpus();
    let mut problems = Vec::new();
    let mut x_missions = 0;
    let mut passage_queries_in_x = 0;
    for (_, t) in &corpus {
        if !alternation_ok(t) {
            problems.push(format!("{}: assignments and reports do not alternate", t.header.scene));
        }
        for m in missions(t) {
            let Some(report) = mission_report(&m) else { continue };
            if report.mode == ExplorationMode::X {
                x_missions += 1;
                passage_queries_in_x += m
                    .iter()
                    .flat_map(|r| &r.queries)
                    .filter(|q| q.kind == QueryKind::InspectFor && q.target.as_deref() == Some(PASSAGE_LABEL))
                    .count();
            }
        }
    }

    let scene = builtin_scene("3").unwrap();
    let cfg = SimConfig::default();
    let blind = run_episode(&scene, &cfg, &mut BlindToWaypoints(geometric()), "blind").unwrap();
    let mut not_visible = 0;
    for m in missions(&blind) {
        let report = mission_report(&m).expect("every mission reports");
        if report.reason == Reason::WaypointNotVisible {
            not_visible += 1;
            let moved: f64 = m.iter().map(|r| r.displacement).sum();
            if moved != 0.0 {
                problems.push(format!("waypoint-not-visible mission moved {moved}"));
            }
        }
    }
    if not_visible == 0 {
        problems.push("no waypoint-not-visible mission was produced".into());
    }
    if !alternation_ok(&blind) {
        problems.push("blind run: assignments and reports do not alternate".into());
    }

    let start = Instant::now();
    let adversarial = run_episode(&builtin_scene("2").unwrap(), &cfg, &mut Adversary { calls: 0 }, "adversary").unwrap();
    let adversarial_elapsed = start.elapsed();
    let budget_ok = *adversarial.result() == (EpisodeResult::Failure { reason: FailureReason::Budget });
    if !budget_ok {
        problems.push(format!("adversarial oracle ended with {}", adversarial.result()));
    }
    if passage_queries_in_x > 0 {
        problems.push(format!("{passage_queries_in_x} passage queries in mode-x missions"));
    }
    if x_missions == 0 {
        problems.push("no mode-x mission in the corpus".into());
    }

    verdict(
        "acceptance 8 protocol invariants",
        problems.is_empty(),
        format!(
            "alternation over {} runs, {x_missions} mode-x missions with {passage_queries_in_x} passage queries, {not_visible} waypoint-not-visible missions, adversarial oracle {} after {} rounds in {adversarial_elapsed:.2?}{}",
            corpus.len() + 1,
            adversarial.result(),
            adversarial.terminal.turn,
            if problems.is_empty() { String::new() } else { format!("; problems: {problems:?}") }
        ),
    );
    assert!(problems.is_empty(), "{problems:?}");
}

#[test]
fn acceptance_9_determinism_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();
    let mut runs = 0;
    for scene in builtin_scenes() {
        for agents in [Agents::G1Go2, Agents::G1Only] {
            let cfg = config(agents, 7);
            let a = run(&scene, &cfg);
            let b = run(&scene, &cfg);
            let pa = dir.path().join(format!("{}-{runs}-a.jsonl", scene.name));
            let pb = dir.path().join(format!("{}-{runs}-b.jsonl", scene.name));
            a.save(&pa).unwrap();
            b.save(&pb).unwrap();
            if std::fs::read(&pa).unwrap() != std::fs::read(&pb).unwrap() {
                problems.push(format!("{} {agents:?}: trace files differ", scene.name));
            }

            let loaded = EpisodeTrace::load(&pa).unwrap();
            let mut replay = ReplayOracle::new(loaded.queries().cloned());
            let again = run_episode(&scene, &loaded.header.config, &mut replay, "replay").unwrap();
            if again.poses() != a.poses() || again.result() != a.result() {
                problems.push(format!("{} {agents:?}: replay diverged", scene.name));
            }
            runs += 1;
        }
    }
    verdict(
        "acceptance 9 determinism and replay",
        problems.is_empty(),
        format!("{runs} scene/config pairs: byte-identical trace files and exact replay pose sequences; {problems:?}"),
    );
    assert!(problems.is_empty(), "{problems:?}");
}
