//! In-process backend: every rank is a logical worker group inside one
//! process; delivery runs on whichever side polls. Supports injected delivery
//! delays for overlap experiments.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::{
    check_peer, complete_into, complete_send, BackendKind, Endpoint, ReqBody, ReqDirection,
    RequestHandle, ANY_TAG,
};
use crate::error::{Error, Result};

type Channel = (usize, usize, u64); // (src, dst, tag)
type Shared = Arc<(Mutex<ReqBody>, std::sync::Condvar)>;

struct InFlight {
    payload: Vec<u8>,
    release_at: Instant,
    send_body: Shared,
    send_done: bool,
}

#[derive(Default)]
struct HubState {
    msgs: HashMap<Channel, VecDeque<InFlight>>,
    recvs: HashMap<Channel, VecDeque<Shared>>,
    delays: HashMap<Channel, VecDeque<Duration>>,
}

/// Shared mailbox for all simulated ranks of one process.
pub struct InProcHub {
    size: usize,
    next_req: AtomicU64,
    state: Mutex<HubState>,
}

impl InProcHub {
    /// Builds the hub and one endpoint per rank.
    pub fn create(size: usize) -> Vec<InProcEndpoint> {
        let hub = Arc::new(InProcHub {
            size,
            next_req: AtomicU64::new(1),
            state: Mutex::new(HubState::default()),
        });
        (0..size).map(|rank| InProcEndpoint { rank, hub: hub.clone() }).collect()
    }

    fn next_id(&self) -> u64 {
        self.next_req.fetch_add(1, Ordering::Relaxed)
    }

    /// Delivers every released message that has a matching posted receive.
    fn progress(&self) {
        let now = Instant::now();
        let mut st = self.state.lock().unwrap();
        let channels: Vec<Channel> = st.msgs.keys().copied().collect();
        for ch in channels {
            loop {
                let ready = match st.msgs.get_mut(&ch) {
                    Some(q) => match q.front_mut() {
                        Some(m) => {
                            if m.release_at > now {
                                false
                            } else {
                                if !m.send_done {
                                    // handed to the delivery queue: send completes
                                    complete_send(&m.send_body);
                                    m.send_done = true;
                                }
                                st.recvs.get(&ch).map_or(false, |r| !r.is_empty())
                            }
                        }
                        None => false,
                    },
                    None => false,
                };
                if !ready {
                    break;
                }
                let msg = st.msgs.get_mut(&ch).unwrap().pop_front().unwrap();
                let recv = st.recvs.get_mut(&ch).unwrap().pop_front().unwrap();
                complete_into(&recv, &msg.payload);
                // hand the staging buffer back to the sender for reuse
                msg.send_body.0.lock().unwrap().buffer = Some(msg.payload);
            }
        }
    }
}

#[derive(Clone)]
pub struct InProcEndpoint {
    rank: usize,
    hub: Arc<InProcHub>,
}

impl Endpoint for InProcEndpoint {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.hub.size
    }

    fn backend(&self) -> BackendKind {
        BackendKind::InProcess
    }

    fn irecv(&self, peer: usize, tag: u64, buffer: Vec<u8>) -> Result<RequestHandle> {
        check_peer(peer, self.hub.size)?;
        let len = buffer.len();
        let handle = RequestHandle::new(
            self.hub.next_id(),
            ReqDirection::Recv,
            peer,
            tag,
            len,
            Some(buffer),
        );
        {
            let mut st = self.hub.state.lock().unwrap();
            st.recvs.entry((peer, self.rank, tag)).or_default().push_back(handle.shared());
        }
        self.hub.progress();
        Ok(handle)
    }

    fn isend(&self, peer: usize, tag: u64, data: Vec<u8>) -> Result<RequestHandle> {
        check_peer(peer, self.hub.size)?;
        let handle = RequestHandle::new(
            self.hub.next_id(),
            ReqDirection::Send,
            peer,
            tag,
            data.len(),
            None,
        );
        let ch = (self.rank, peer, tag);
        {
            let mut st = self.hub.state.lock().unwrap();
            let delay = st
                .delays
                .get_mut(&ch)
                .and_then(|q| q.pop_front())
                .or_else(|| {
                    st.delays
                        .get_mut(&(self.rank, peer, ANY_TAG))
                        .and_then(|q| q.pop_front())
                })
                .unwrap_or(Duration::ZERO);
            st.msgs.entry(ch).or_default().push_back(InFlight {
                payload: data,
                release_at: Instant::now() + delay,
                send_body: handle.shared(),
                send_done: false,
            });
        }
        self.hub.progress();
        Ok(handle)
    }

    fn test(&self, handle: &RequestHandle) -> bool {
        self.hub.progress();
        handle.is_done()
    }

    fn inject_delay(&self, peer: usize, tag: u64, delay_s: f64) -> Result<()> {
        check_peer(peer, self.hub.size)?;
        if delay_s < 0.0 {
            return Err(Error::NegativeDelay);
        }
        let mut st = self.hub.state.lock().unwrap();
        st.delays
            .entry((self.rank, peer, tag))
            .or_default()
            .push_back(Duration::from_secs_f64(delay_s));
        Ok(())
    }
}
