//! A deterministic in-process scorer speaking the wire protocol. Scores are
//! derived from SHA-256 of the request text, so any test can recompute them.

use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{RequestKind, ScorerRequest, ScorerResponse};
use crate::error::{Error, Result};
use crate::taxonomy::normalized;

pub const STUB_DIM: usize = 8;

/// Uniform value in [0, 1) from the first 8 bytes of SHA-256 over the
/// parts joined with 0x1f.
pub fn hash_unit(parts: &[&str]) -> f64 {
    let mut h = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.update([0x1f]);
        }
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    (u64::from_be_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

pub fn nli_score(premise: &str, hypothesis: &str) -> f64 {
    hash_unit(&["nli", premise, hypothesis])
}

/// Log-likelihood in (-10, 0].
pub fn fitb_score(prompt: &str, candidate: &str) -> f64 {
    -10.0 * hash_unit(&["fitb", prompt, candidate])
}

pub fn embed_vector(text: &str) -> Vec<f64> {
    let raw: Vec<f64> = (0..STUB_DIM).map(|i| 2.0 * hash_unit(&["embed", text, &i.to_string()]) - 1.0).collect();
    normalized(&raw)
}

#[derive(Debug, Clone, Default)]
pub struct StubOptions {
    /// Accept and immediately drop this many connections.
    pub fail_first: usize,
    /// Answer with an error when any request text contains this string.
    pub error_marker: Option<String>,
    /// Answer every request with a line that is not JSON.
    pub malformed: bool,
}

pub fn respond(req: &ScorerRequest, opts: &StubOptions) -> ScorerResponse {
    let mut resp = ScorerResponse { id: req.id, scores: None, vectors: None, error: None };
    let texts: Vec<&String> = [&req.texts, &req.hypotheses, &req.candidates]
        .into_iter()
        .flatten()
        .flatten()
        .chain([&req.premise, &req.prompt].into_iter().flatten())
        .collect();
    if let Some(m) = &opts.error_marker {
        if texts.iter().any(|t| t.contains(m.as_str())) {
            resp.error = Some(format!("stub refused text containing {m:?}"));
            return resp;
        }
    }
    match req.kind {
        RequestKind::Embed => {
            resp.vectors = Some(req.texts.iter().flatten().map(|t| embed_vector(t)).collect());
        }
        RequestKind::Nli => {
            let p = req.premise.as_deref().unwrap_or("");
            resp.scores = Some(req.hypotheses.iter().flatten().map(|h| nli_score(p, h)).collect());
        }
        RequestKind::Fitb => {
            let p = req.prompt.as_deref().unwrap_or("");
            resp.scores = Some(req.candidates.iter().flatten().map(|c| fitb_score(p, c)).collect());
        }
    }
    resp
}

/// Background TCP server. Each request is answered from its own thread after
/// a short hash-derived delay, so replies come back out of order.
pub struct StubServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(opts: StubOptions) -> Result<Self> {
        Self::bind("127.0.0.1:0", opts)
    }

    pub fn bind(addr: &str, opts: StubOptions) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(|e| Error::Transport(format!("bind {addr}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| Error::Transport(e.to_string()))?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop2 = Arc::clone(&stop);
        let opts = Arc::new(opts);
        let handle = thread::spawn(move || {
            let seen = AtomicUsize::new(0);
            for conn in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                if seen.fetch_add(1, Ordering::SeqCst) < opts.fail_first {
                    let _ = conn.shutdown(Shutdown::Both);
                    continue;
                }
                let opts = Arc::clone(&opts);
                thread::spawn(move || serve_conn(conn, &opts));
            }
        });
        Ok(StubServer { addr, stop, handle: Some(handle) })
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    /// Blocks until the server is stopped from another thread or process exit.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve_conn(conn: TcpStream, opts: &Arc<StubOptions>) {
    let Ok(write_half) = conn.try_clone() else { return };
    let writer = Arc::new(Mutex::new(write_half));
    let mut workers = Vec::new();
    for line in BufReader::new(conn).lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let writer = Arc::clone(&writer);
        let opts = Arc::clone(opts);
        workers.push(thread::spawn(move || {
            let out = if opts.malformed {
                "not json".to_string()
            } else {
                match serde_json::from_str::<ScorerRequest>(&line) {
                    Ok(req) => {
                        let delay = (hash_unit(&["delay", &req.id.to_string()]) * 4.0) as u64;
                        thread::sleep(Duration::from_millis(delay));
                        serde_json::to_string(&respond(&req, &opts)).unwrap_or_default()
                    }
                    Err(e) => {
                        let id = serde_json::from_str::<serde_json::Value>(&line)
                            .ok()
                            .and_then(|v| v.get("id").and_then(|i| i.as_u64()))
                            .unwrap_or(0);
                        serde_json::json!({"id": id, "error": format!("bad request: {e}")}).to_string()
                    }
                }
            };
            if let Ok(mut w) = writer.lock() {
                let _ = w.write_all(format!("{out}\n").as_bytes());
                let _ = w.flush();
            }
        }));
    }
    for w in workers {
        let _ = w.join();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_unit_is_stable_and_bounded() {
        let a = hash_unit(&["x", "y"]);
        assert_eq!(a, hash_unit(&["x", "y"]));
        assert_ne!(a, hash_unit(&["xy"]));
        assert!((0.0..1.0).contains(&a));
        let v = embed_vector("hello");
        assert_eq!(v.len(), STUB_DIM);
        assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
