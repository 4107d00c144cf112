//! Asynchronous all-to-all redistribution between stage layouts: receives
//! posted first, one coalesced message per peer per direction, local copies
//! while messages are in flight, progressive unpack as messages land.

use std::time::Instant;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::events::EventLog;
use crate::grid::{ChunkId, DistributedArray, Layout};
use crate::real::{complex_to_le_bytes, FftReal};
use crate::transport::{tags, Endpoint, RequestHandle};

/// One rectangular block copied from a source chunk into a destination
/// chunk. Offsets are chunk-local; the box is the intersection of the two
/// chunks' global regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPattern {
    pub src_chunk: ChunkId,
    pub dst_chunk: ChunkId,
    pub src_offset: (usize, usize, usize),
    pub dst_offset: (usize, usize, usize),
    pub extent: (usize, usize, usize),
}

impl BlockPattern {
    pub fn volume(&self) -> usize {
        self.extent.0 * self.extent.1 * self.extent.2
    }
}

/// All blocks exchanged with one peer, in a deterministic order shared by
/// packer and unpacker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerTransfer {
    pub peer: usize,
    pub patterns: Vec<BlockPattern>,
}

impl PeerTransfer {
    pub fn elems(&self) -> usize {
        self.patterns.iter().map(BlockPattern::volume).sum()
    }
}

/// Send/receive/local schedule for one rank's part of a layout change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransposePlan {
    pub rank: usize,
    pub sends: Vec<PeerTransfer>,
    pub recvs: Vec<PeerTransfer>,
    pub local: Vec<BlockPattern>,
}

fn intersect_1d(a0: usize, an: usize, b0: usize, bn: usize) -> Option<(usize, usize)> {
    let lo = a0.max(b0);
    let hi = (a0 + an).min(b0 + bn);
    (lo < hi).then(|| (lo, hi - lo))
}

/// Intersection of two chunk boxes as a copy pattern, if nonempty.
fn intersection(
    src: &crate::grid::ChunkDescriptor,
    dst: &crate::grid::ChunkDescriptor,
) -> Option<BlockPattern> {
    let (x0, ex) = intersect_1d(src.global_offset.0, src.extent.0, dst.global_offset.0, dst.extent.0)?;
    let (y0, ey) = intersect_1d(src.global_offset.1, src.extent.1, dst.global_offset.1, dst.extent.1)?;
    let (z0, ez) = intersect_1d(src.global_offset.2, src.extent.2, dst.global_offset.2, dst.extent.2)?;
    Some(BlockPattern {
        src_chunk: src.chunk_id,
        dst_chunk: dst.chunk_id,
        src_offset: (x0 - src.global_offset.0, y0 - src.global_offset.1, z0 - src.global_offset.2),
        dst_offset: (x0 - dst.global_offset.0, y0 - dst.global_offset.1, z0 - dst.global_offset.2),
        extent: (ex, ey, ez),
    })
}

fn sort_patterns(dst_layout: &Layout, patterns: &mut [BlockPattern]) {
    patterns.sort_by_key(|p| {
        let d = dst_layout.chunk_by_id(p.dst_chunk).expect("pattern references unknown chunk");
        let g = (
            d.global_offset.0 + p.dst_offset.0,
            d.global_offset.1 + p.dst_offset.1,
            d.global_offset.2 + p.dst_offset.2,
        );
        (p.dst_chunk, g.2, g.1, g.0)
    });
}

/// Builds the transfer schedule for `rank` moving data from `src` to `dst`
/// layout. Every source element lands in exactly one pattern.
pub fn build_transpose_plan(src: &Layout, dst: &Layout, rank: usize) -> Result<TransposePlan> {
    if src.num_ranks() != dst.num_ranks() {
        return Err(Error::LayoutMismatch(format!(
            "source has {} ranks, destination {}",
            src.num_ranks(),
            dst.num_ranks()
        )));
    }
    let nranks = src.num_ranks();
    let my_src = src.chunk_of(rank)?;
    let my_dst = dst.chunk_of(rank)?;

    let mut sends = Vec::new();
    let mut recvs = Vec::new();
    let mut local = Vec::new();
    for peer in 0..nranks {
        if peer == rank {
            if let Some(p) = intersection(my_src, my_dst) {
                local.push(p);
            }
            continue;
        }
        if let Some(p) = intersection(my_src, dst.chunk_of(peer)?) {
            let mut patterns = vec![p];
            sort_patterns(dst, &mut patterns);
            sends.push(PeerTransfer { peer, patterns });
        }
        if let Some(p) = intersection(src.chunk_of(peer)?, my_dst) {
            let mut patterns = vec![p];
            sort_patterns(dst, &mut patterns);
            recvs.push(PeerTransfer { peer, patterns });
        }
    }
    sort_patterns(dst, &mut local);
    Ok(TransposePlan { rank, sends, recvs, local })
}

fn copy_block<T: Copy>(
    src: &[T],
    src_extent: (usize, usize, usize),
    src_off: (usize, usize, usize),
    dst: &mut [T],
    dst_extent: (usize, usize, usize),
    dst_off: (usize, usize, usize),
    extent: (usize, usize, usize),
) {
    let (ex, ey, ez) = extent;
    for z in 0..ez {
        for y in 0..ey {
            let si = (src_off.0)
                + src_extent.0 * ((src_off.1 + y) + src_extent.1 * (src_off.2 + z));
            let di = (dst_off.0)
                + dst_extent.0 * ((dst_off.1 + y) + dst_extent.1 * (dst_off.2 + z));
            dst[di..di + ex].copy_from_slice(&src[si..si + ex]);
        }
    }
}

/// Serializes `patterns` out of the source array into one coalesced buffer.
pub fn pack_blocks<T: FftReal>(
    patterns: &[BlockPattern],
    src: &DistributedArray<T>,
    out: &mut Vec<u8>,
) -> Result<()> {
    out.clear();
    let mut row: Vec<Complex<T>> = Vec::new();
    for p in patterns {
        let desc = src
            .layout
            .chunk_by_id(p.src_chunk)
            .ok_or(Error::UnknownChunk(p.src_chunk))?;
        let buf = src.chunk(p.src_chunk)?.lock().unwrap();
        let (ex, ey, ez) = p.extent;
        row.resize(ex, Complex::new(T::zero(), T::zero()));
        for z in 0..ez {
            for y in 0..ey {
                let si = p.src_offset.0
                    + desc.extent.0 * ((p.src_offset.1 + y) + desc.extent.1 * (p.src_offset.2 + z));
                complex_to_le_bytes(&buf[si..si + ex], out);
            }
        }
    }
    Ok(())
}

/// Scatters a coalesced buffer into the destination array; the pattern order
/// must match the packer's.
pub fn unpack_blocks<T: FftReal>(
    patterns: &[BlockPattern],
    bytes: &[u8],
    dst: &DistributedArray<T>,
) -> Result<()> {
    let w = T::PRECISION.bytes_per_complex();
    let expected: usize = patterns.iter().map(BlockPattern::volume).sum::<usize>() * w;
    if bytes.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "coalesced buffer holds {} bytes, patterns expect {expected}",
            bytes.len()
        )));
    }
    let mut cursor = 0usize;
    for p in patterns {
        let desc = dst
            .layout
            .chunk_by_id(p.dst_chunk)
            .ok_or(Error::UnknownChunk(p.dst_chunk))?;
        let mut buf = dst.chunk(p.dst_chunk)?.lock().unwrap();
        let (ex, ey, ez) = p.extent;
        for z in 0..ez {
            for y in 0..ey {
                let di = p.dst_offset.0
                    + desc.extent.0 * ((p.dst_offset.1 + y) + desc.extent.1 * (p.dst_offset.2 + z));
                let row = crate::real::complex_from_le_bytes::<T>(&bytes[cursor..cursor + ex * w]);
                buf[di..di + ex].copy_from_slice(&row);
                cursor += ex * w;
            }
        }
    }
    Ok(())
}

/// Reusable staging buffers for send packing. The allocation counter only
/// advances when a request cannot be served from the pool.
pub struct RedistWorkspace {
    pool: Vec<Vec<u8>>,
    in_flight: Vec<RequestHandle>,
    allocations: u64,
}

impl Default for RedistWorkspace {
    fn default() -> Self {
        Self::new()
    }
}

impl RedistWorkspace {
    pub fn new() -> Self {
        RedistWorkspace { pool: Vec::new(), in_flight: Vec::new(), allocations: 0 }
    }

    pub fn allocation_count(&self) -> u64 {
        self.allocations
    }

    /// Blocks until every outstanding send buffer has been handed back by
    /// the transport, returning them to the pool.
    pub fn reclaim(&mut self, ep: &dyn Endpoint) -> Result<()> {
        for h in self.in_flight.drain(..) {
            crate::transport::wait(ep, &h)?;
            let mut spins = 0u32;
            loop {
                match h.take_buffer() {
                    Ok(buf) => {
                        self.pool.push(buf);
                        break;
                    }
                    Err(_) => {
                        ep.test(&h);
                        spins += 1;
                        if spins % 256 == 0 {
                            std::thread::sleep(std::time::Duration::from_micros(20));
                        } else {
                            std::hint::spin_loop();
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn acquire(&mut self, bytes: usize) -> Vec<u8> {
        // smallest pooled buffer whose capacity suffices
        let best = self
            .pool
            .iter()
            .enumerate()
            .filter(|(_, b)| b.capacity() >= bytes)
            .min_by_key(|(_, b)| b.capacity())
            .map(|(i, _)| i);
        match best {
            Some(i) => {
                let mut b = self.pool.swap_remove(i);
                b.clear();
                b
            }
            None => {
                self.allocations += 1;
                Vec::with_capacity(bytes)
            }
        }
    }
}

/// Wall-clock attribution for one redistribution.
#[derive(Debug, Clone, Copy, Default)]
pub struct RedistTimings {
    pub t_total: f64,
    pub t_pack: f64,
    pub t_local: f64,
    pub t_unpack: f64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

/// Moves `src` into `dst` per `plan`. Five phases: reclaim staging buffers,
/// post receives, pack-and-send, local copies, progressive unpack. The
/// `poll_hook` runs while waiting so callers can overlap useful work.
pub fn redistribute<T: FftReal>(
    plan: &TransposePlan,
    src: &DistributedArray<T>,
    dst: &DistributedArray<T>,
    ep: &dyn Endpoint,
    ws: &mut RedistWorkspace,
    log: &EventLog,
    phase_id: u32,
    mut poll_hook: impl FnMut(),
) -> Result<RedistTimings> {
    let rank = plan.rank;
    let w = T::PRECISION.bytes_per_complex();
    let phase = format!("{phase_id}");
    let t_start = Instant::now();
    let mut timings = RedistTimings::default();

    // phase 1: settle previous staging buffers
    ws.reclaim(ep)?;

    // phase 2: post every receive up front
    let my_src_chunk = src.layout.chunk_of(rank)?.chunk_id;
    let mut pending_recvs = Vec::with_capacity(plan.recvs.len());
    for tr in &plan.recvs {
        let bytes = tr.elems() * w;
        let peer_src_chunk = src.layout.chunk_of(tr.peer)?.chunk_id;
        let handle = ep.irecv(tr.peer, tags::redist(phase_id, peer_src_chunk), vec![0u8; bytes])?;
        log.record(rank, 0, "recv_posted", None, Some(tr.peer), Some(&phase), Some(bytes as u64));
        pending_recvs.push((tr, handle));
    }

    // phase 3: pack per peer and send
    let mut pending_sends = Vec::with_capacity(plan.sends.len());
    for tr in &plan.sends {
        let bytes = tr.elems() * w;
        log.record(rank, 0, "pack_start", None, Some(tr.peer), Some(&phase), Some(bytes as u64));
        let t0 = Instant::now();
        let mut buf = ws.acquire(bytes);
        pack_blocks(&tr.patterns, src, &mut buf)?;
        timings.t_pack += t0.elapsed().as_secs_f64();
        log.record(rank, 0, "pack_complete", None, Some(tr.peer), Some(&phase), Some(bytes as u64));
        log.record(rank, 0, "send_start", None, Some(tr.peer), Some(&phase), Some(bytes as u64));
        let handle = ep.isend(tr.peer, tags::redist(phase_id, my_src_chunk), buf)?;
        timings.bytes_sent += bytes as u64;
        pending_sends.push((tr.peer, handle, false));
    }

    // phase 4: local copies overlap with message flight
    {
        let t0 = Instant::now();
        for p in &plan.local {
            let sdesc = src.layout.chunk_by_id(p.src_chunk).ok_or(Error::UnknownChunk(p.src_chunk))?;
            let ddesc = dst.layout.chunk_by_id(p.dst_chunk).ok_or(Error::UnknownChunk(p.dst_chunk))?;
            let sbuf = src.chunk(p.src_chunk)?.lock().unwrap();
            let mut dbuf = dst.chunk(p.dst_chunk)?.lock().unwrap();
            copy_block(
                &sbuf,
                sdesc.extent,
                p.src_offset,
                &mut dbuf,
                ddesc.extent,
                p.dst_offset,
                p.extent,
            );
        }
        timings.t_local = t0.elapsed().as_secs_f64();
        if !plan.local.is_empty() {
            let vol: usize = plan.local.iter().map(BlockPattern::volume).sum();
            log.record(rank, 0, "local_copy", None, None, Some(&phase), Some((vol * w) as u64));
        }
    }

    // phase 5: progressive unpack; sends are drained in the same loop
    let t_wait0 = Instant::now();
    let mut spins = 0u32;
    while !pending_recvs.is_empty() || pending_sends.iter().any(|s| !s.2) {
        let mut progressed = false;
        for s in pending_sends.iter_mut() {
            if !s.2 && ep.test(&s.1) {
                if let Some(msg) = s.1.failure() {
                    return Err(Error::InvalidConfig(msg));
                }
                log.record(rank, 0, "send_complete", None, Some(s.0), Some(&phase), None);
                s.2 = true;
                progressed = true;
            }
        }
        let mut i = 0;
        while i < pending_recvs.len() {
            if ep.test(&pending_recvs[i].1) {
                let (tr, handle) = pending_recvs.swap_remove(i);
                if let Some(msg) = handle.failure() {
                    return Err(Error::InvalidConfig(msg));
                }
                let bytes = handle.take_buffer()?;
                log.record(
                    rank,
                    0,
                    "unpack_start",
                    None,
                    Some(tr.peer),
                    Some(&phase),
                    Some(bytes.len() as u64),
                );
                let t0 = Instant::now();
                unpack_blocks(&tr.patterns, &bytes, dst)?;
                timings.t_unpack += t0.elapsed().as_secs_f64();
                timings.bytes_received += bytes.len() as u64;
                log.record(rank, 0, "unpack_complete", None, Some(tr.peer), Some(&phase), None);
                progressed = true;
            } else {
                i += 1;
            }
        }
        if !progressed {
            poll_hook();
            spins += 1;
            if spins % 64 == 0 {
                std::thread::sleep(std::time::Duration::from_micros(20));
            } else {
                std::hint::spin_loop();
            }
        }
    }
    let _ = t_wait0;
    // keep completed send handles so their staging buffers can be pooled
    ws.in_flight.extend(pending_sends.into_iter().map(|s| s.1));

    timings.t_total = t_start.elapsed().as_secs_f64();
    Ok(timings)
}
