//! JSON-over-HTTP annealer protocol, its client, and a bundled mock server.
//!
//! The wire speaks the hardware sign convention `E = sum h s + sum J s s`,
//! so `h` and `J` are negated at the boundary; energies are unchanged.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use super::{solve_sa, AnnealRead, AnnealSchedule, Annealer, Compiled, SampleSet};
use crate::chimera::{embedded_energy, parse_pair, IsingProblem};
use crate::error::{Error, Result};
use crate::rbm::Spin;

pub const DEFAULT_MAX_QUBITS: usize = 4096;
/// Retries after the first attempt on transport failure.
pub const RETRIES: usize = 3;
/// Overrides the endpoint of `remote:` backends when set.
pub const ENDPOINT_ENV: &str = "VALLEYSCOPE_ANNEAL_ENDPOINT";

const WIRE_ENERGY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub h: BTreeMap<String, f64>,
    #[serde(rename = "J")]
    pub j: BTreeMap<String, f64>,
    pub num_reads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<AnnealSchedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRead {
    /// Spins of the problem's variables in ascending qubit order.
    pub spins: Vec<Spin>,
    pub energy: f64,
    pub num: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub reads: Vec<WireRead>,
}

impl WireRequest {
    pub fn from_problem(
        problem: &IsingProblem,
        num_reads: usize,
        seed: u64,
        schedule: Option<AnnealSchedule>,
    ) -> Self {
        Self {
            h: problem.h.iter().map(|(q, v)| (q.to_string(), -v)).collect(),
            j: problem
                .j
                .iter()
                .map(|((a, b), v)| (format!("{a},{b}"), -v))
                .collect(),
            num_reads,
            seed: Some(seed),
            schedule,
        }
    }

    /// Internal-convention problem spanning qubits `0..=max index`.
    pub fn to_problem(&self) -> Result<IsingProblem> {
        let mut h = BTreeMap::new();
        for (k, v) in &self.h {
            let q: usize = k
                .trim()
                .parse()
                .map_err(|_| Error::Domain(format!("bad qubit index {k:?}")))?;
            h.insert(q, -v);
        }
        let mut j = BTreeMap::new();
        for (k, v) in &self.j {
            let (a, b) = parse_pair(k)?;
            j.insert((a.min(b), a.max(b)), -v);
        }
        let top = h
            .keys()
            .copied()
            .chain(j.keys().map(|&(_, b)| b))
            .max()
            .map_or(0, |m| m + 1);
        let mut problem = IsingProblem::new(top);
        problem.h = h;
        problem.j = j;
        problem.validate(None)?;
        Ok(problem)
    }
}

/// Explicit endpoint unless the override variable is set and nonempty.
pub fn resolve_endpoint(explicit: &str) -> String {
    match std::env::var(ENDPOINT_ENV) {
        Ok(v) if !v.trim().is_empty() => v.trim().to_string(),
        _ => explicit.to_string(),
    }
}

fn solve_url(endpoint: &str) -> String {
    format!("{}/v1/solve", endpoint.trim_end_matches('/'))
}

/// Posts `problem` to `endpoint`, converts the reads back, and verifies
/// every energy locally. Nothing partial is returned on error.
pub fn remote_solve(
    endpoint: &str,
    problem: &IsingProblem,
    num_reads: usize,
    seed: u64,
    timeout: Duration,
    schedule: Option<AnnealSchedule>,
) -> Result<SampleSet> {
    if num_reads == 0 {
        return Err(Error::Domain("num_reads must be at least 1".into()));
    }
    let body = serde_json::to_string(&WireRequest::from_problem(
        problem, num_reads, seed, schedule,
    ))?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let url = solve_url(endpoint);
    let mut last = String::new();
    for attempt in 0..=RETRIES {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(50 * attempt as u64));
        }
        let mut response = match agent
            .post(&url)
            .header("content-type", "application/json")
            .send(body.as_str())
        {
            Ok(r) => r,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        if status >= 500 {
            last = format!("HTTP {status}: {text}");
            continue;
        }
        if status != 200 {
            return Err(Error::Protocol(format!("HTTP {status}: {text}")));
        }
        return ingest(
            &text,
            problem,
            num_reads,
            seed,
            schedule.unwrap_or_default(),
            endpoint,
        );
    }
    Err(Error::Transport(format!(
        "{url} failed after {} attempts: {last}",
        RETRIES + 1
    )))
}

fn ingest(
    text: &str,
    problem: &IsingProblem,
    num_reads: usize,
    seed: u64,
    schedule: AnnealSchedule,
    endpoint: &str,
) -> Result<SampleSet> {
    let wire: WireResponse = serde_json::from_str(text)
        .map_err(|e| Error::Protocol(format!("malformed response: {e}")))?;
    let compiled = Compiled::new(problem);
    let n = compiled.vars.len();
    let mut reads = Vec::with_capacity(wire.reads.len());
    for (k, r) in wire.reads.iter().enumerate() {
        if r.spins.len() != n {
            return Err(Error::Protocol(format!(
                "read {k} has {} spins, expected {n}",
                r.spins.len()
            )));
        }
        if r.spins.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Protocol(format!(
                "read {k} contains a non-spin value"
            )));
        }
        if r.num == 0 {
            return Err(Error::Protocol(format!("read {k} has zero multiplicity")));
        }
        let spins = compiled.expand(problem.num_qubits, &r.spins);
        let energy = embedded_energy(problem, &spins)?;
        if !((energy - r.energy).abs() <= WIRE_ENERGY_TOLERANCE) {
            return Err(Error::Protocol(format!(
                "read {k} reports energy {} but spins give {energy}",
                r.energy
            )));
        }
        reads.push(AnnealRead {
            spins,
            energy,
            num: r.num,
        });
    }
    let total: u64 = reads.iter().map(|r| r.num).sum();
    if total != num_reads as u64 {
        return Err(Error::Protocol(format!(
            "multiplicities sum to {total}, requested {num_reads}"
        )));
    }
    reads.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    Ok(SampleSet {
        reads,
        num_reads,
        backend: format!("remote:{endpoint}"),
        seed,
        schedule,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteAnnealer {
    pub endpoint: String,
    pub timeout: Duration,
    pub schedule: Option<AnnealSchedule>,
}

impl Annealer for RemoteAnnealer {
    fn id(&self) -> String {
        format!("remote:{}", self.endpoint)
    }

    fn solve(&self, problem: &IsingProblem, num_reads: usize, seed: u64) -> Result<SampleSet> {
        remote_solve(
            &self.endpoint,
            problem,
            num_reads,
            seed,
            self.timeout,
            self.schedule,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockConfig {
    /// Seed used when a request carries none.
    pub seed: u64,
    pub max_qubits: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_qubits: DEFAULT_MAX_QUBITS,
        }
    }
}

/// A running mock annealer; shuts down on drop.
pub struct MockService {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl MockService {
    /// Binds `addr` (port 0 picks a free port) and serves on a background
    /// thread. Solving is `solve_sa` behind the wire.
    pub fn start(addr: &str, config: MockConfig) -> Result<Self> {
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = Router::new()
            .route(
                "/v1/health",
                get(|| async { Json(serde_json::json!({ "ok": true })) }),
            )
            .route("/v1/solve", post(solve_handler))
            .with_state(config);
        let thread = std::thread::spawn(move || {
            let runtime = tokio::runtime::Builder::new_current_thread()
                .enable_io()
                .build()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                axum::serve(listener, app)
                    .with_graceful_shutdown(async move {
                        let _ = rx.await;
                    })
                    .await
            })
        });
        Ok(Self {
            addr: local,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server has stopped.
    pub fn wait(mut self) -> Result<()> {
        match self.thread.take() {
            Some(t) => t
                .join()
                .map_err(|_| Error::Transport("mock service thread panicked".into()))?
                .map_err(Error::from),
            None => Ok(()),
        }
    }

    pub fn shutdown(mut self) -> Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.wait()
    }
}

impl Drop for MockService {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

type Reply = (StatusCode, Json<serde_json::Value>);

fn bad_request(msg: String) -> Reply {
    (
        StatusCode::BAD_REQUEST,
        Json(serde_json::json!({ "error": msg })),
    )
}

async fn solve_handler(State(config): State<MockConfig>, body: Bytes) -> Reply {
    let request: WireRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(format!("invalid request: {e}")),
    };
    let outcome = tokio::task::spawn_blocking(move || serve_request(&request, &config)).await;
    match outcome {
        Ok(Ok(response)) => (
            StatusCode::OK,
            Json(serde_json::to_value(response).unwrap_or_default()),
        ),
        Ok(Err(e)) => bad_request(e.to_string()),
        Err(e) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(serde_json::json!({ "error": e.to_string() })),
        ),
    }
}

fn serve_request(request: &WireRequest, config: &MockConfig) -> Result<WireResponse> {
    let problem = request.to_problem()?;
    if problem.num_qubits > config.max_qubits {
        return Err(Error::Range(format!(
            "problem uses qubit {} but the limit is {} qubits",
            problem.num_qubits - 1,
            config.max_qubits
        )));
    }
    let schedule = request.schedule.unwrap_or_default();
    let sample = solve_sa(
        &problem,
        request.num_reads,
        &schedule,
        request.seed.unwrap_or(config.seed),
    )?;
    let vars = problem.variables();
    Ok(WireResponse {
        reads: sample
            .reads
            .into_iter()
            .map(|r| WireRead {
                spins: vars.iter().map(|&q| r.spins[q]).collect(),
                energy: r.energy,
                num: r.num,
            })
            .collect(),
    })
}
