//! HTTP client for an external perception service.
//!
//! Each query is one `POST` whose JSON body carries the query kind, the
//! target label, the serialized observation and a free-text context line.
//! The service answers either a verdict or a ranked candidate list.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    Observation, ObstacleArc, OracleError, OracleVerdict, PerceptionOracle, QueryKind,
    VisibleEntity, WaypointCandidate,
};
use crate::geometry::{Point2, Pose};
use crate::world::Scene;

/// Overrides any configured endpoint.
pub const ORACLE_URL_ENV: &str = "TZPP_ORACLE_URL";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireObservation {
    pub pose: Pose,
    pub fov_half_angle: f64,
    pub max_range: f64,
    pub entities: Vec<VisibleEntity>,
    pub obstacle_arcs: Vec<ObstacleArc>,
}

impl From<&Observation> for WireObservation {
    fn from(obs: &Observation) -> Self {
        Self {
            pose: obs.pose,
            fov_half_angle: obs.fov_half_angle,
            max_range: obs.max_range,
            entities: obs.entities.clone(),
            obstacle_arcs: obs.obstacle_arcs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub query_kind: QueryKind,
    pub target_label: String,
    pub observation: WireObservation,
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireResponse {
    Verdict {
        answer: bool,
        confidence: f64,
        #[serde(default)]
        rationale: String,
    },
    Candidates {
        candidates: Vec<WaypointCandidate>,
    },
}

pub struct RemoteOracle {
    url: String,
    agent: ureq::Agent,
}

impl RemoteOracle {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
        }
    }

    /// Endpoint from `TZPP_ORACLE_URL` if set, else `configured`.
    pub fn from_env_or(configured: Option<&str>, timeout: Duration) -> Result<Self, OracleError> {
        let url = std::env::var(ORACLE_URL_ENV)
            .ok()
            .filter(|u| !u.is_empty())
            .or_else(|| configured.map(str::to_string))
            .ok_or_else(|| {
                OracleError::NotConfigured(format!("set {ORACLE_URL_ENV} or pass an endpoint"))
            })?;
        Ok(Self::new(url, timeout))
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn exchange(&self, request: &WireRequest) -> Result<WireResponse, OracleError> {
        let body = serde_json::to_string(request).map_err(|e| OracleError::Protocol(e.to_string()))?;
        let response = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(map_transport)?;
        let status = response.status();
        if !status.is_success() {
            return Err(OracleError::Protocol(format!("HTTP status {status}")));
        }
        let text = response.into_body().read_to_string().map_err(map_transport)?;
        serde_json::from_str(&text).map_err(|e| OracleError::Protocol(e.to_string()))
    }

    fn ask_verdict(&self, request: WireRequest) -> Result<OracleVerdict, OracleError> {
        match self.exchange(&request)? {
            WireResponse::Verdict {
                answer,
                confidence,
                rationale,
            } => {
                if !(0.0..=1.0).contains(&confidence) {
                    return Err(OracleError::Protocol(format!("confidence {confidence} outside [0, 1]")));
                }
                Ok(OracleVerdict {
                    answer,
                    confidence,
                    rationale,
                })
            }
            WireResponse::Candidates { .. } => {
                Err(OracleError::Protocol("expected a verdict, got candidates".into()))
            }
        }
    }
}

fn map_transport(e: ureq::Error) -> OracleError {
    match e {
        ureq::Error::Timeout(_) => OracleError::Timeout,
        ureq::Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
            OracleError::Timeout
        }
        other => OracleError::Transport(other.to_string()),
    }
}

fn request(kind: QueryKind, target: &str, obs: &Observation, context: String) -> WireRequest {
    WireRequest {
        query_kind: kind,
        target_label: target.to_string(),
        observation: obs.into(),
        context,
    }
}

impl PerceptionOracle for RemoteOracle {
    fn inspect_for(&mut self, target: &str, obs: &Observation) -> Result<OracleVerdict, OracleError> {
        self.ask_verdict(request(QueryKind::InspectFor, target, obs, format!("observer={}", obs.observer)))
    }

    fn path_ideal(
        &mut self,
        target: &str,
        obs: &Observation,
        _scene: &Scene,
    ) -> Result<OracleVerdict, OracleError> {
        let context = format!("observer={}; path_for=humanoid", obs.observer);
        self.ask_verdict(request(QueryKind::PathIdeal, target, obs, context))
    }

    fn env_all_reachable(&mut self, obs: &Observation) -> Result<OracleVerdict, OracleError> {
        self.ask_verdict(request(QueryKind::EnvAllReachable, "", obs, format!("observer={}", obs.observer)))
    }

    fn suggest_waypoints(
        &mut self,
        obs: &Observation,
        target: &str,
        belief: Option<Point2>,
        k: usize,
    ) -> Result<Vec<WaypointCandidate>, OracleError> {
        let mut context = format!("observer={}; k={k}", obs.observer);
        if let Some(b) = belief {
            context.push_str(&format!("; believed_target={},{}", b.x, b.y));
        }
        match self.exchange(&request(QueryKind::SuggestWaypoints, target, obs, context))? {
            WireResponse::Candidates { mut candidates } => {
                if candidates.iter().any(|c| !c.point.is_finite() || !c.score.is_finite()) {
                    return Err(OracleError::Protocol("non-finite candidate".into()));
                }
                candidates.truncate(k);
                Ok(candidates)
            }
            WireResponse::Verdict { .. } => {
                Err(OracleError::Protocol("expected candidates, got a verdict".into()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::observe;
    use crate::world::test_scenes::*;
    use crate::world::AgentClass;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    /// Serves `n` requests with a fixed body after `delay`, forwarding each
    /// request body to the returned channel.
    fn stub(body: &'static str, delay: Duration, n: usize) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for stream in listener.incoming().take(n) {
                let mut stream = stream.unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap() == 0 {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; length];
                reader.read_exact(&mut buf).unwrap();
                let _ = tx.send(String::from_utf8(buf).unwrap());
                thread::sleep(delay);
                let reply = format!(
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                    body.len(),
                    body
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        (format!("http://{addr}/query"), rx)
    }

    fn sample_obs() -> Observation {
        let s = open_scene(vec![], vec![landmark("sofa", 2.0, 0.0)]);
        observe(s.humanoid_start, AgentClass::Quadruped, &s, 0.7, 8.0, &Default::default()).unwrap()
    }

    #[test]
    fn always_true_service() {
        let (url, rx) = stub(r#"{"answer": true, "confidence": 0.8, "rationale": "ok"}"#, Duration::ZERO, 1);
        let mut o = RemoteOracle::new(url, Duration::from_secs(5));
        let v = o.inspect_for("sofa", &sample_obs()).unwrap();
        assert!(v.answer);
        assert_eq!(v.confidence, 0.8);
        let sent: WireRequest = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(sent.query_kind, QueryKind::InspectFor);
        assert_eq!(sent.target_label, "sofa");
        assert_eq!(sent.observation.entities.len(), 1);
    }

    #[test]
    fn candidates_are_truncated_to_k() {
        let (url, _rx) = stub(
            r#"{"candidates": [{"x": 1, "y": 0, "score": 1}, {"x": 2, "y": 0, "score": 0.5}]}"#,
            Duration::ZERO,
            1,
        );
        let mut o = RemoteOracle::new(url, Duration::from_secs(5));
        let c = o.suggest_waypoints(&sample_obs(), "sofa", None, 1).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].point, Point2::new(1.0, 0.0));
    }

    #[test]
    fn slow_service_times_out() {
        let (url, _rx) = stub(r#"{"answer": true, "confidence": 1}"#, Duration::from_millis(800), 1);
        let mut o = RemoteOracle::new(url, Duration::from_millis(150));
        assert_eq!(o.inspect_for("sofa", &sample_obs()), Err(OracleError::Timeout));
    }

    #[test]
    fn malformed_reply_is_a_protocol_error() {
        let (url, _rx) = stub(r#"{"answer": "maybe"}"#, Duration::ZERO, 2);
        let mut o = RemoteOracle::new(url, Duration::from_secs(5));
        assert!(matches!(o.inspect_for("sofa", &sample_obs()), Err(OracleError::Protocol(_))));
        assert!(matches!(
            o.suggest_waypoints(&sample_obs(), "sofa", None, 3),
            Err(OracleError::Protocol(_))
        ));
    }

    #[test]
    fn unreachable_service_is_a_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut o = RemoteOracle::new(format!("http://127.0.0.1:{port}/"), Duration::from_secs(2));
        assert!(matches!(o.env_all_reachable(&sample_obs()), Err(OracleError::Transport(_))));
    }
}
