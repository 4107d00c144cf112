//! TCP backend: full mesh over a host:port list, one duplex stream per pair,
//! reader thread per connection. Sends complete when fully written to the
//! socket; receives match queued frames by (peer, tag) in FIFO order.

use std::collections::{HashMap, VecDeque};
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::wire::{decode_header, encode_header, Header, HEADER_LEN};
use super::{
    check_peer, complete_into, complete_send, BackendKind, Endpoint, ReqDirection, RequestHandle,
};
use crate::error::{Error, Result};

type Channel = (usize, u64); // (src rank, tag)
type Shared = Arc<(Mutex<super::ReqBody>, std::sync::Condvar)>;

#[derive(Default)]
struct Inbox {
    msgs: HashMap<Channel, VecDeque<Vec<u8>>>,
    recvs: HashMap<Channel, VecDeque<Shared>>,
}

pub struct TcpEndpoint {
    rank: usize,
    size: usize,
    next_req: AtomicU64,
    inbox: Arc<Mutex<Inbox>>,
    /// Write half per peer; None for self.
    writers: Vec<Option<Mutex<TcpStream>>>,
}

impl TcpEndpoint {
    /// Establishes the mesh. `hosts[i]` is rank i's listen address; every
    /// rank must call this with the same list.
    pub fn connect(rank: usize, hosts: &[String]) -> Result<Self> {
        let size = hosts.len();
        if rank >= size {
            return Err(Error::PeerOutOfRange { peer: rank, size });
        }
        let inbox = Arc::new(Mutex::new(Inbox::default()));
        let mut writers: Vec<Option<Mutex<TcpStream>>> = (0..size).map(|_| None).collect();

        let listener = TcpListener::bind(&hosts[rank])
            .map_err(|e| Error::InvalidConfig(format!("bind {}: {e}", hosts[rank])))?;

        // Lower rank dials higher rank; higher rank accepts. A 4-byte LE rank
        // id handshake identifies the dialer.
        let n_accept = rank; // ranks below me dial in
        let accept_handle = {
            let listener = listener.try_clone()?;
            std::thread::spawn(move || -> std::io::Result<Vec<(usize, TcpStream)>> {
                let mut conns = Vec::new();
                for _ in 0..n_accept {
                    let (mut stream, _) = listener.accept()?;
                    let mut id = [0u8; 4];
                    stream.read_exact(&mut id)?;
                    conns.push((u32::from_le_bytes(id) as usize, stream));
                }
                Ok(conns)
            })
        };

        for peer in rank + 1..size {
            let stream = dial(&hosts[peer])?;
            let mut stream = stream;
            stream.write_all(&(rank as u32).to_le_bytes())?;
            stream.set_nodelay(true).ok();
            spawn_reader(peer, stream.try_clone()?, inbox.clone());
            writers[peer] = Some(Mutex::new(stream));
        }
        for (peer, stream) in accept_handle.join().expect("accept thread panicked")? {
            stream.set_nodelay(true).ok();
            spawn_reader(peer, stream.try_clone()?, inbox.clone());
            writers[peer] = Some(Mutex::new(stream));
        }

        Ok(TcpEndpoint { rank, size, next_req: AtomicU64::new(1), inbox, writers })
    }

    fn progress(&self) {
        let mut inbox = self.inbox.lock().unwrap();
        let channels: Vec<Channel> = inbox.msgs.keys().copied().collect();
        for ch in channels {
            loop {
                let has_pair = inbox.msgs.get(&ch).map_or(false, |q| !q.is_empty())
                    && inbox.recvs.get(&ch).map_or(false, |q| !q.is_empty());
                if !has_pair {
                    break;
                }
                let payload = inbox.msgs.get_mut(&ch).unwrap().pop_front().unwrap();
                let recv = inbox.recvs.get_mut(&ch).unwrap().pop_front().unwrap();
                complete_into(&recv, &payload);
            }
        }
    }
}

fn dial(addr: &str) -> Result<TcpStream> {
    // The peer's listener may not be up yet; retry for a bounded window.
    let deadline = std::time::Instant::now() + Duration::from_secs(20);
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) => {
                if std::time::Instant::now() > deadline {
                    return Err(Error::InvalidConfig(format!("connect {addr}: {e}")));
                }
                std::thread::sleep(Duration::from_millis(20));
            }
        }
    }
}

fn spawn_reader(peer: usize, mut stream: TcpStream, inbox: Arc<Mutex<Inbox>>) {
    std::thread::spawn(move || {
        loop {
            let mut hdr = [0u8; HEADER_LEN];
            if stream.read_exact(&mut hdr).is_err() {
                return; // peer closed
            }
            let header = match decode_header(&hdr) {
                Ok(h) => h,
                Err(_) => return,
            };
            debug_assert_eq!(header.src as usize, peer, "stream handshake/header disagree");
            let mut payload = vec![0u8; header.byte_len as usize];
            if stream.read_exact(&mut payload).is_err() {
                return;
            }
            inbox
                .lock()
                .unwrap()
                .msgs
                .entry((header.src as usize, header.tag))
                .or_default()
                .push_back(payload);
        }
    });
}

impl Endpoint for TcpEndpoint {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.size
    }

    fn backend(&self) -> BackendKind {
        BackendKind::Tcp
    }

    fn irecv(&self, peer: usize, tag: u64, buffer: Vec<u8>) -> Result<RequestHandle> {
        check_peer(peer, self.size)?;
        let len = buffer.len();
        let handle = RequestHandle::new(
            self.next_req.fetch_add(1, Ordering::Relaxed),
            ReqDirection::Recv,
            peer,
            tag,
            len,
            Some(buffer),
        );
        self.inbox
            .lock()
            .unwrap()
            .recvs
            .entry((peer, tag))
            .or_default()
            .push_back(handle.shared());
        self.progress();
        Ok(handle)
    }

    fn isend(&self, peer: usize, tag: u64, data: Vec<u8>) -> Result<RequestHandle> {
        check_peer(peer, self.size)?;
        let handle = RequestHandle::new(
            self.next_req.fetch_add(1, Ordering::Relaxed),
            ReqDirection::Send,
            peer,
            tag,
            data.len(),
            None,
        );
        if peer == self.rank {
            // loopback: no socket, straight into the inbox
            self.inbox
                .lock()
                .unwrap()
                .msgs
                .entry((peer, tag))
                .or_default()
                .push_back(data);
            complete_send(&handle.shared());
            self.progress();
            return Ok(handle);
        }
        let header = Header {
            src: self.rank as u32,
            dst: peer as u32,
            tag,
            byte_len: data.len() as u64,
        };
        {
            let writer = self.writers[peer].as_ref().expect("no stream for peer");
            let mut stream = writer.lock().unwrap();
            stream.write_all(&encode_header(&header))?;
            stream.write_all(&data)?;
        }
        let shared = handle.shared();
        complete_send(&shared);
        // bytes are on the wire; the staging buffer is reclaimable
        shared.0.lock().unwrap().buffer = Some(data);
        Ok(handle)
    }

    fn test(&self, handle: &RequestHandle) -> bool {
        self.progress();
        handle.is_done()
    }

    fn inject_delay(&self, _peer: usize, _tag: u64, _delay_s: f64) -> Result<()> {
        Err(Error::UnsupportedBackend("inject_delay requires the in_process backend".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::wait;

    fn local_hosts(n: usize, base: u16) -> Vec<String> {
        (0..n).map(|i| format!("127.0.0.1:{}", base + i as u16)).collect()
    }

    #[test]
    fn tcp_mesh_exchange() {
        let hosts = local_hosts(3, 39210);
        let handles: Vec<_> = (0..3)
            .map(|r| {
                let hosts = hosts.clone();
                std::thread::spawn(move || {
                    let ep = TcpEndpoint::connect(r, &hosts).unwrap();
                    // everyone sends its rank byte to everyone (incl. self)
                    let recvs: Vec<_> =
                        (0..3).map(|p| ep.irecv(p, 1, vec![0u8; 1]).unwrap()).collect();
                    let sends: Vec<_> =
                        (0..3).map(|p| ep.isend(p, 1, vec![r as u8]).unwrap()).collect();
                    for (p, h) in recvs.iter().enumerate() {
                        wait(&ep, h).unwrap();
                        assert_eq!(h.take_buffer().unwrap(), vec![p as u8]);
                    }
                    for h in &sends {
                        assert!(wait(&ep, h).is_ok());
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
    }

    #[test]
    fn tcp_rejects_delay_injection() {
        let hosts = local_hosts(1, 39310);
        let ep = TcpEndpoint::connect(0, &hosts).unwrap();
        assert!(matches!(
            ep.inject_delay(0, 0, 0.0),
            Err(Error::UnsupportedBackend(_))
        ));
    }
}
