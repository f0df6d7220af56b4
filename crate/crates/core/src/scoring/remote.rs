//! Newline-delimited JSON client for the scorer service.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use super::{check_response, Scorer, ScorerOutput, ScorerRequest, ScorerResponse};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};

pub const ENDPOINT_ENV: &str = "WHYMINE_SCORER_ENDPOINT";

/// Pipelines requests over one TCP connection, at most `max_in_flight`
/// unanswered at a time. Responses are matched by id. Connection failures
/// are retried with exponential backoff; protocol and server errors are not.
#[derive(Debug)]
pub struct RemoteScorer {
    addr: String,
    timeout: Duration,
    retries: u32,
    backoff: Duration,
    max_in_flight: usize,
    next_id: AtomicU64,
}

enum Failure {
    Transient(String),
    Fatal(Error),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Transient(e.to_string())
    }
}

impl RemoteScorer {
    /// Accepts `host:port` or `tcp://host:port`.
    pub fn new(endpoint: &str) -> Result<Self> {
        let addr = endpoint.trim().trim_start_matches("tcp://").trim_end_matches('/').to_string();
        if addr.is_empty() || !addr.contains(':') {
            return Err(Error::Config(format!("scorer endpoint {endpoint:?} is not host:port")));
        }
        let d = PipelineConfig::default();
        Ok(RemoteScorer {
            addr,
            timeout: Duration::from_millis(d.scorer_timeout_ms),
            retries: d.scorer_retries,
            backoff: Duration::from_millis(d.scorer_backoff_ms),
            max_in_flight: d.scorer_max_in_flight,
            next_id: AtomicU64::new(1),
        })
    }

    pub fn from_env() -> Result<Option<Self>> {
        match std::env::var(ENDPOINT_ENV) {
            Ok(v) if !v.trim().is_empty() => Self::new(&v).map(Some),
            _ => Ok(None),
        }
    }

    pub fn with_config(mut self, cfg: &PipelineConfig) -> Self {
        self.timeout = Duration::from_millis(cfg.scorer_timeout_ms);
        self.retries = cfg.scorer_retries;
        self.backoff = Duration::from_millis(cfg.scorer_backoff_ms);
        self.max_in_flight = cfg.scorer_max_in_flight.max(1);
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.addr
    }

    fn connect(&self) -> std::result::Result<TcpStream, Failure> {
        let addrs: Vec<_> = self
            .addr
            .to_socket_addrs()
            .map_err(|e| Failure::Transient(format!("resolve {}: {e}", self.addr)))?
            .collect();
        let mut last = format!("no address for {}", self.addr);
        for a in addrs {
            match TcpStream::connect_timeout(&a, self.timeout) {
                Ok(s) => {
                    s.set_read_timeout(Some(self.timeout))?;
                    s.set_write_timeout(Some(self.timeout))?;
                    s.set_nodelay(true)?;
                    return Ok(s);
                }
                Err(e) => last = format!("connect {a}: {e}"),
            }
        }
        Err(Failure::Transient(last))
    }

    fn session(
        &self,
        reqs: &[ScorerRequest],
        results: &mut [Option<ScorerOutput>],
    ) -> std::result::Result<(), Failure> {
        let stream = self.connect()?;
        let mut writer = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        let todo: Vec<usize> = (0..reqs.len()).filter(|&i| results[i].is_none()).collect();
        let mut queue = todo.into_iter();
        let mut in_flight: HashMap<u64, usize> = HashMap::new();
        let mut queue_done = false;
        let mut line = String::new();
        loop {
            while !queue_done && in_flight.len() < self.max_in_flight {
                match queue.next() {
                    Some(i) => {
                        let mut msg = serde_json::to_string(&reqs[i])
                            .map_err(|e| Failure::Fatal(Error::Protocol(e.to_string())))?;
                        msg.push('\n');
                        writer.write_all(msg.as_bytes())?;
                        in_flight.insert(reqs[i].id, i);
                    }
                    None => queue_done = true,
                }
            }
            writer.flush()?;
            if in_flight.is_empty() {
                return Ok(());
            }
            line.clear();
            match reader.read_line(&mut line) {
                Ok(0) => return Err(Failure::Transient("connection closed by scorer".into())),
                Ok(_) => {}
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(Failure::Transient(format!("timed out after {:?}", self.timeout)))
                }
                Err(e) => return Err(e.into()),
            }
            let resp: ScorerResponse = serde_json::from_str(line.trim_end())
                .map_err(|e| Failure::Fatal(Error::Protocol(format!("malformed response: {e}"))))?;
            let i = in_flight
                .remove(&resp.id)
                .ok_or_else(|| Failure::Fatal(Error::Protocol(format!("response for unknown id {}", resp.id))))?;
            results[i] = Some(check_response(&reqs[i], resp).map_err(Failure::Fatal)?);
        }
    }
}

impl Scorer for RemoteScorer {
    fn call_many(&self, requests: &[ScorerRequest]) -> Result<Vec<ScorerOutput>> {
        let reqs: Vec<ScorerRequest> = requests
            .iter()
            .map(|r| ScorerRequest { id: self.next_id.fetch_add(1, Ordering::Relaxed), ..r.clone() })
            .collect();
        for r in &reqs {
            r.validate()?;
        }
        let mut results: Vec<Option<ScorerOutput>> = vec![None; reqs.len()];
        let mut attempt = 0u32;
        loop {
            match self.session(&reqs, &mut results) {
                Ok(()) => return Ok(results.into_iter().map(|r| r.expect("session answered every request")).collect()),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(msg)) => {
                    if attempt >= self.retries {
                        return Err(Error::Transport(format!("{}: {msg} (after {} attempts)", self.addr, attempt + 1)));
                    }
                    thread::sleep(self.backoff.saturating_mul(1u32 << attempt.min(16)));
                    attempt += 1;
                }
            }
        }
    }
}
