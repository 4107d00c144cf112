//! Pluggable non-blocking point-to-point message layer: post receives early,
//! initiate sends, poll completion. Two backends: in-process simulated ranks
//! and TCP over a host list.

mod in_process;
mod tcp;
pub mod wire;

pub use in_process::{InProcEndpoint, InProcHub};
pub use tcp::TcpEndpoint;

use std::sync::{Arc, Condvar, Mutex};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    InProcess,
    Tcp,
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "in_process" => Ok(BackendKind::InProcess),
            "tcp" => Ok(BackendKind::Tcp),
            other => Err(format!("unknown backend `{other}` (expected in_process|tcp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReqDirection {
    Send,
    Recv,
}

#[derive(Debug)]
enum ReqState {
    Pending,
    Complete,
    Failed(String),
}

#[derive(Debug)]
struct ReqBody {
    state: ReqState,
    /// Recv: posted buffer, replaced by the payload on delivery.
    buffer: Option<Vec<u8>>,
    /// Actual payload length on completion.
    delivered: usize,
}

/// Single-owner handle for one posted send or receive.
pub struct RequestHandle {
    pub request_id: u64,
    pub direction: ReqDirection,
    pub peer: usize,
    pub tag: u64,
    pub byte_len: usize,
    body: Arc<(Mutex<ReqBody>, Condvar)>,
}

impl RequestHandle {
    fn new(
        request_id: u64,
        direction: ReqDirection,
        peer: usize,
        tag: u64,
        byte_len: usize,
        buffer: Option<Vec<u8>>,
    ) -> Self {
        RequestHandle {
            request_id,
            direction,
            peer,
            tag,
            byte_len,
            body: Arc::new((
                Mutex::new(ReqBody { state: ReqState::Pending, buffer, delivered: 0 }),
                Condvar::new(),
            )),
        }
    }

    fn shared(&self) -> Arc<(Mutex<ReqBody>, Condvar)> {
        self.body.clone()
    }

    fn is_done(&self) -> bool {
        !matches!(self.body.0.lock().unwrap().state, ReqState::Pending)
    }

    /// Error message if the request failed (e.g. truncation on the recv side).
    pub fn failure(&self) -> Option<String> {
        match &self.body.0.lock().unwrap().state {
            ReqState::Failed(msg) => Some(msg.clone()),
            _ => None,
        }
    }

    /// Takes the delivered buffer out of a completed receive, or reclaims a
    /// completed send's staging buffer once the transport is done with it.
    pub fn take_buffer(&self) -> Result<Vec<u8>> {
        let mut body = self.body.0.lock().unwrap();
        match &body.state {
            ReqState::Complete => {
                let mut buf = body
                    .buffer
                    .take()
                    .ok_or_else(|| Error::InvalidConfig("buffer not yet reclaimable".into()))?;
                if self.direction == ReqDirection::Recv {
                    let n = body.delivered;
                    buf.truncate(n);
                }
                Ok(buf)
            }
            ReqState::Failed(msg) => Err(Error::InvalidConfig(msg.clone())),
            ReqState::Pending => Err(Error::InvalidConfig("request still pending".into())),
        }
    }
}

fn complete_into(body: &Arc<(Mutex<ReqBody>, Condvar)>, payload: &[u8]) {
    let mut b = body.0.lock().unwrap();
    match &mut b.buffer {
        Some(buf) => {
            if payload.len() > buf.len() {
                b.state = ReqState::Failed(format!(
                    "message truncated: {} bytes into a {}-byte buffer",
                    payload.len(),
                    buf.len()
                ));
            } else {
                buf[..payload.len()].copy_from_slice(payload);
                b.delivered = payload.len();
                b.state = ReqState::Complete;
            }
        }
        None => {
            b.delivered = payload.len();
            b.state = ReqState::Complete;
        }
    }
    body.1.notify_all();
}

fn complete_send(body: &Arc<(Mutex<ReqBody>, Condvar)>) {
    let mut b = body.0.lock().unwrap();
    b.state = ReqState::Complete;
    body.1.notify_all();
}

/// Tag namespaces: redistribution tags carry (phase_id, src_chunk_id) in the
/// low 63 bits; control-plane tags use the reserved high ranges below.
pub mod tags {
    pub const BARRIER: u64 = 1 << 62;
    pub const GATHER: u64 = 1 << 61;
    pub const CALIBRATE: u64 = 1 << 60;

    pub fn redist(phase_id: u32, src_chunk_id: usize) -> u64 {
        ((phase_id as u64) << 32) | src_chunk_id as u64
    }
}

/// Wildcard tag for delay injection: matches any message on the channel.
pub const ANY_TAG: u64 = u64::MAX;

/// Non-blocking point-to-point endpoint for one rank.
pub trait Endpoint: Send + Sync {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;
    fn backend(&self) -> BackendKind;

    /// Posts a receive; completion delivers a matching (peer, tag) message
    /// into `buffer`.
    fn irecv(&self, peer: usize, tag: u64, buffer: Vec<u8>) -> Result<RequestHandle>;

    /// Initiates a send; `data` is owned by the transport until completion.
    fn isend(&self, peer: usize, tag: u64, data: Vec<u8>) -> Result<RequestHandle>;

    /// Non-blocking completion poll; drives transport progress.
    fn test(&self, handle: &RequestHandle) -> bool;

    /// Defers delivery of the next matching message (in-process backend only).
    fn inject_delay(&self, peer: usize, tag: u64, delay_s: f64) -> Result<()>;
}

pub(crate) fn check_peer(peer: usize, size: usize) -> Result<()> {
    if peer >= size {
        return Err(Error::PeerOutOfRange { peer, size });
    }
    Ok(())
}

/// Blocks until `handle` completes, polling the endpoint.
pub fn wait(ep: &dyn Endpoint, handle: &RequestHandle) -> Result<()> {
    let mut spins = 0u32;
    while !ep.test(handle) {
        spins += 1;
        if spins % 64 == 0 {
            std::thread::sleep(std::time::Duration::from_micros(20));
        } else {
            std::thread::yield_now();
        }
    }
    if let Some(msg) = handle.failure() {
        return Err(Error::InvalidConfig(msg));
    }
    Ok(())
}

/// Message-based full barrier; `generation` must advance identically on all
/// ranks between calls.
pub fn barrier(ep: &dyn Endpoint, generation: u64) -> Result<()> {
    let tag = tags::BARRIER | generation;
    if ep.size() == 1 {
        return Ok(());
    }
    if ep.rank() == 0 {
        let recvs: Vec<_> = (1..ep.size())
            .map(|p| ep.irecv(p, tag, vec![0u8; 1]))
            .collect::<Result<_>>()?;
        for h in &recvs {
            wait(ep, h)?;
        }
        let sends: Vec<_> = (1..ep.size())
            .map(|p| ep.isend(p, tag, vec![1u8]))
            .collect::<Result<_>>()?;
        for h in &sends {
            wait(ep, h)?;
        }
    } else {
        let r = ep.irecv(0, tag, vec![0u8; 1])?;
        let s = ep.isend(0, tag, vec![1u8])?;
        wait(ep, &s)?;
        wait(ep, &r)?;
    }
    Ok(())
}
