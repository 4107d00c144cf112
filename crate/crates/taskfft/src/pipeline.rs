//! End-to-end 3D FFT over distributed chunks: per-stage task batches on the
//! scheduler, layout changes through the asynchronous redistribution, and an
//! optional barrier-synchronous baseline for comparison.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use num_complex::Complex;

use crate::cost::CommCostParams;
use crate::error::{Error, Result};
use crate::events::EventLog;
use crate::fft::{
    apply_fft_2d, gather_line, num_lines, scatter_line, Direction, FftPlan, PlanCache, PlanKey,
};
use crate::grid::{
    make_decomposition, Axis, ChunkDescriptor, DecompositionPlan, DistributedArray, GridSpec,
    Layout, StageTag, Strategy,
};
use crate::real::{complex_from_le_bytes, complex_to_le_bytes, FftReal};
use crate::redist::{build_transpose_plan, redistribute, RedistTimings, RedistWorkspace};
use crate::sched::{ExecutionReport, Scheduler, SchedulerConfig, TaskKind, TaskMeta, TaskRecord};
use crate::transport::{barrier, tags, wait, Endpoint, InProcEndpoint, InProcHub};

/// Task-asynchronous execution or the barrier-synchronous baseline that
/// fences after every stage and layout change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    TaskAsync,
    BarrierSync,
}

impl std::fmt::Display for ExecMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExecMode::TaskAsync => write!(f, "task"),
            ExecMode::BarrierSync => write!(f, "barrier"),
        }
    }
}

impl std::str::FromStr for ExecMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "task" => Ok(ExecMode::TaskAsync),
            "barrier" => Ok(ExecMode::BarrierSync),
            other => Err(format!("unknown mode `{other}` (expected task|barrier)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub strategy: Strategy,
    pub mode: ExecMode,
    pub workers_per_rank: usize,
    pub stealing: bool,
    pub params: CommCostParams,
    /// Each stage chunk is split into up to this many line-range tasks.
    pub tasks_per_chunk: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            strategy: Strategy::Pencil,
            mode: ExecMode::TaskAsync,
            workers_per_rank: 1,
            stealing: false,
            params: CommCostParams::default(),
            tasks_per_chunk: 4,
        }
    }
}

/// Per-rank wall-clock attribution and scheduler counters for one transform.
#[derive(Debug, Clone, Default)]
pub struct RankStats {
    pub t_total: f64,
    pub t_fft: f64,
    pub t_redist: f64,
    pub busy_time: f64,
    pub executed_tasks: usize,
    pub steals: usize,
    pub worker_busy: Vec<f64>,
    pub redist: Vec<RedistTimings>,
}

impl RankStats {
    pub fn t_overhead(&self) -> f64 {
        (self.t_total - self.t_fft - self.t_redist).max(0.0)
    }

    fn absorb_stage(&mut self, report: &ExecutionReport, wall: f64) {
        self.t_fft += wall;
        if self.worker_busy.len() < report.workers.len() {
            self.worker_busy.resize(report.workers.len(), 0.0);
        }
        for w in &report.workers {
            self.worker_busy[w.worker_id] += w.busy_time;
            self.busy_time += w.busy_time;
            self.executed_tasks += w.executed_count;
        }
        self.steals += report.steals.len();
    }
}

// rough per-element butterfly cost used only for relative load estimates
fn stage_cost_estimate(volume: usize, len: usize) -> f64 {
    volume as f64 * (len.max(2) as f64).log2() * 5e-9
}

/// Runs one local transform stage as a batch of line-range tasks. Each task
/// owns a disjoint range, so the chunk lock is only held for line copies.
fn run_stage<T: FftReal>(
    cfg: &PipelineConfig,
    rank: usize,
    chunk: &Arc<Mutex<Vec<Complex<T>>>>,
    extent: (usize, usize, usize),
    dims: &[Axis],
    direction: Direction,
    cache: &PlanCache<T>,
    log: &EventLog,
) -> Result<ExecutionReport> {
    let plan: Arc<FftPlan<T>> = match dims.len() {
        1 => cache.get_or_create_plan(&PlanKey::c2c(T::PRECISION, extent, direction, dims))?,
        2 => {
            let plane = (extent.0, extent.1, 1);
            cache.get_or_create_plan(&PlanKey::c2c(T::PRECISION, plane, direction, dims))?
        }
        n => return Err(Error::InvalidConfig(format!("{n}-dim stage transform"))),
    };
    // 1D stages split their line set; 2D slab stages split the z planes
    let total_units = match dims.len() {
        1 => num_lines(extent, dims[0]),
        _ => extent.2,
    };
    let ntasks = cfg.tasks_per_chunk.max(1).min(total_units.max(1));
    let nworkers = cfg.workers_per_rank.max(1);
    let chunk_owner: HashMap<usize, usize> = (0..ntasks).map(|t| (t, t % nworkers)).collect();
    let sched = Scheduler::new(
        SchedulerConfig {
            workers: nworkers,
            stealing: cfg.stealing,
            params: cfg.params,
            rebalance_threshold: None,
            threaded: nworkers > 1,
            rank,
        },
        chunk_owner,
        log.clone(),
    );
    let (ex, ey, _) = extent;
    let unit_volume = if dims.len() == 1 {
        plan.kernel(0).len
    } else {
        ex * ey
    };
    let kind = if dims.len() == 1 { TaskKind::Fft1d } else { TaskKind::Fft2d };
    for t in 0..ntasks {
        let lo = t * total_units / ntasks;
        let hi = (t + 1) * total_units / ntasks;
        let volume = (hi - lo) * unit_volume;
        let meta = TaskMeta {
            id: 0,
            kind,
            reads: vec![],
            writes: vec![t],
            in_place: false,
            affinity_chunk: t,
            cost_estimate: stage_cost_estimate(volume, plan.kernel(0).len),
            bytes: (volume * T::PRECISION.bytes_per_complex()) as u64,
        };
        let chunk = chunk.clone();
        let plan = plan.clone();
        let dims = dims.to_vec();
        sched.submit(TaskRecord::new(meta, move || {
            if dims.len() == 1 {
                let axis = dims[0];
                let kern = plan.kernel(0);
                let mut line = vec![Complex::new(T::zero(), T::zero()); kern.len];
                let mut scratch = vec![Complex::new(T::zero(), T::zero()); kern.scratch_len()];
                for l in lo..hi {
                    {
                        let buf = chunk.lock().unwrap();
                        gather_line(&buf, extent, axis, l, &mut line);
                    }
                    kern.process(&mut line, &mut scratch);
                    let mut buf = chunk.lock().unwrap();
                    scatter_line(&mut buf, extent, axis, l, &line);
                }
            } else {
                let plane_len = ex * ey;
                let mut plane = vec![Complex::new(T::zero(), T::zero()); plane_len];
                for z in lo..hi {
                    {
                        let buf = chunk.lock().unwrap();
                        plane.copy_from_slice(&buf[z * plane_len..(z + 1) * plane_len]);
                    }
                    apply_fft_2d(&plan, &mut plane, (ex, ey, 1), (dims[0], dims[1]))
                        .expect("plane transform");
                    let mut buf = chunk.lock().unwrap();
                    buf[z * plane_len..(z + 1) * plane_len].copy_from_slice(&plane);
                }
            }
        }))?;
    }
    sched.run_to_completion()
}

fn single_rank_array<T: FftReal>(
    grid: GridSpec,
    layout: &Layout,
    stage: StageTag,
    rank: usize,
) -> Result<DistributedArray<T>> {
    DistributedArray::allocate(grid, Arc::new(layout.clone()), stage, &[rank])
}

/// Computes this rank's share of a full 3D transform. `input` is the rank's
/// chunk in the first layout of the chosen direction; the returned vector is
/// its chunk in the last. `phase_base` namespaces message tags so iterations
/// never collide.
#[allow(clippy::too_many_arguments)]
pub fn fft3d_rank<T: FftReal>(
    cfg: &PipelineConfig,
    plan: &DecompositionPlan,
    ep: &dyn Endpoint,
    cache: &PlanCache<T>,
    ws: &mut RedistWorkspace,
    log: &EventLog,
    input: Vec<Complex<T>>,
    direction: Direction,
    phase_base: u32,
) -> Result<(Vec<Complex<T>>, RankStats)> {
    let rank = ep.rank();
    let grid = plan.grid;
    let mut stats = RankStats::default();
    let t_run0 = Instant::now();
    let mut gen = (phase_base as u64) << 3;
    let mut fence = |ep: &dyn Endpoint| -> Result<()> {
        if cfg.mode == ExecMode::BarrierSync {
            barrier(ep, gen)?;
        }
        gen += 1;
        Ok(())
    };

    // (layout index, dims) per local stage, in execution order
    let stages: Vec<(usize, Vec<Axis>)> = match (cfg.strategy, direction) {
        (Strategy::Pencil, Direction::Forward) => {
            vec![(0, vec![Axis::X]), (1, vec![Axis::Y]), (2, vec![Axis::Z])]
        }
        (Strategy::Pencil, Direction::Inverse) => {
            vec![(2, vec![Axis::Z]), (1, vec![Axis::Y]), (0, vec![Axis::X])]
        }
        (Strategy::Slab, Direction::Forward) => {
            vec![(1, vec![Axis::X, Axis::Y]), (2, vec![Axis::Z])]
        }
        (Strategy::Slab, Direction::Inverse) => {
            vec![(2, vec![Axis::Z]), (1, vec![Axis::X, Axis::Y])]
        }
    };

    let stage_tag = |idx: usize| match idx {
        0 => StageTag::A,
        1 => StageTag::B,
        _ => StageTag::C,
    };

    // allocate the entry array and drop the input into it
    let first_layout = &plan.layouts[stages[0].0];
    let desc = first_layout.chunk_of(rank)?;
    if input.len() != desc.volume() {
        return Err(Error::ShapeMismatch(format!(
            "input holds {} elements, chunk needs {}",
            input.len(),
            desc.volume()
        )));
    }
    let mut arr = single_rank_array::<T>(grid, first_layout, stage_tag(stages[0].0), rank)?;
    *arr.chunk(desc.chunk_id)?.lock().unwrap() = input;

    let mut phase_id = phase_base;
    for (i, (lidx, dims)) in stages.iter().enumerate() {
        let layout = &plan.layouts[*lidx];
        let desc = layout.chunk_of(rank)?;
        let t0 = Instant::now();
        let report = run_stage(
            cfg,
            rank,
            arr.chunk(desc.chunk_id)?,
            desc.extent,
            dims,
            direction,
            cache,
            log,
        )?;
        stats.absorb_stage(&report, t0.elapsed().as_secs_f64());
        fence(ep)?;

        if let Some((next_lidx, _)) = stages.get(i + 1) {
            let next_layout = &plan.layouts[*next_lidx];
            let next =
                single_rank_array::<T>(grid, next_layout, stage_tag(*next_lidx), rank)?;
            let tp = build_transpose_plan(layout, next_layout, rank)?;
            let timings =
                redistribute(&tp, &arr, &next, ep, ws, log, phase_id, || {})?;
            stats.t_redist += timings.t_total;
            stats.redist.push(timings);
            phase_id += 1;
            fence(ep)?;
            arr = next;
        }
    }

    let last_layout = &plan.layouts[stages.last().unwrap().0];
    let out_desc = last_layout.chunk_of(rank)?;
    let out = arr.chunk(out_desc.chunk_id)?.lock().unwrap().clone();
    stats.t_total = t_run0.elapsed().as_secs_f64();
    Ok((out, stats))
}

/// Copies one chunk's box out of a full x-fastest global array.
pub fn extract_chunk<T: FftReal>(
    global: &[Complex<T>],
    grid: GridSpec,
    desc: &ChunkDescriptor,
) -> Vec<Complex<T>> {
    let (ex, ey, ez) = desc.extent;
    let mut out = Vec::with_capacity(desc.volume());
    for z in 0..ez {
        for y in 0..ey {
            let g = desc.global_offset.0
                + grid.nx * ((desc.global_offset.1 + y) + grid.ny * (desc.global_offset.2 + z));
            out.extend_from_slice(&global[g..g + ex]);
        }
    }
    out
}

/// Writes one chunk's data back into a full global array.
pub fn insert_chunk<T: FftReal>(
    global: &mut [Complex<T>],
    grid: GridSpec,
    desc: &ChunkDescriptor,
    data: &[Complex<T>],
) {
    let (ex, ey, ez) = desc.extent;
    for z in 0..ez {
        for y in 0..ey {
            let g = desc.global_offset.0
                + grid.nx * ((desc.global_offset.1 + y) + grid.ny * (desc.global_offset.2 + z));
            let l = ex * (y + ey * z);
            global[g..g + ex].copy_from_slice(&data[l..l + ex]);
        }
    }
}

/// Collects every rank's final chunk at rank 0 over the transport. Returns
/// the assembled global array at rank 0, `None` elsewhere.
pub fn gather_chunks<T: FftReal>(
    ep: &dyn Endpoint,
    grid: GridSpec,
    layout: &Layout,
    mine: &[Complex<T>],
) -> Result<Option<Vec<Complex<T>>>> {
    let rank = ep.rank();
    if rank != 0 {
        let mut bytes = Vec::with_capacity(mine.len() * T::PRECISION.bytes_per_complex());
        complex_to_le_bytes(mine, &mut bytes);
        let h = ep.isend(0, tags::GATHER | rank as u64, bytes)?;
        wait(ep, &h)?;
        return Ok(None);
    }
    let total = grid.nx * grid.ny * grid.nz;
    let mut global = vec![Complex::new(T::zero(), T::zero()); total];
    insert_chunk(&mut global, grid, layout.chunk_of(0)?, mine);
    let w = T::PRECISION.bytes_per_complex();
    let handles: Vec<_> = (1..layout.num_ranks())
        .map(|peer| {
            let vol = layout.chunk_of(peer).unwrap().volume();
            ep.irecv(peer, tags::GATHER | peer as u64, vec![0u8; vol * w])
        })
        .collect::<Result<_>>()?;
    for (peer, h) in (1..layout.num_ranks()).zip(&handles) {
        wait(ep, h)?;
        let data = complex_from_le_bytes::<T>(&h.take_buffer()?);
        insert_chunk(&mut global, grid, layout.chunk_of(peer)?, &data);
    }
    Ok(Some(global))
}

/// Multi-rank in-process harness: one thread per simulated rank, shared
/// mailbox, persistent plan caches and staging workspaces across calls.
pub struct InProcRunner<T: FftReal> {
    pub plan: Arc<DecompositionPlan>,
    pub cfg: PipelineConfig,
    caches: Vec<Arc<PlanCache<T>>>,
    workspaces: Vec<Mutex<RedistWorkspace>>,
    next_phase_base: std::sync::atomic::AtomicU32,
}

impl<T: FftReal> InProcRunner<T> {
    pub fn new(
        grid: GridSpec,
        strategy: Strategy,
        process_grid: (usize, usize),
        mut cfg: PipelineConfig,
    ) -> Result<Self> {
        cfg.strategy = strategy;
        let plan = make_decomposition(grid, strategy, process_grid)?;
        let nranks = plan.layouts[0].num_ranks();
        Ok(InProcRunner {
            plan: Arc::new(plan),
            cfg,
            caches: (0..nranks).map(|_| Arc::new(PlanCache::new())).collect(),
            workspaces: (0..nranks).map(|_| Mutex::new(RedistWorkspace::new())).collect(),
            next_phase_base: std::sync::atomic::AtomicU32::new(1),
        })
    }

    pub fn num_ranks(&self) -> usize {
        self.plan.layouts[0].num_ranks()
    }

    pub fn plan_cache(&self, rank: usize) -> &Arc<PlanCache<T>> {
        &self.caches[rank]
    }

    fn layouts_for(&self, direction: Direction) -> (&Layout, &Layout) {
        let (first, last) = match (self.cfg.strategy, direction) {
            (Strategy::Pencil, Direction::Forward) => (0, 2),
            (Strategy::Pencil, Direction::Inverse) => (2, 0),
            (Strategy::Slab, Direction::Forward) => (1, 2),
            (Strategy::Slab, Direction::Inverse) => (2, 1),
        };
        (&self.plan.layouts[first], &self.plan.layouts[last])
    }

    /// Transforms a full global array. `setup` sees the endpoints before the
    /// rank threads start (e.g. to inject delivery delays).
    pub fn run(
        &self,
        input: &[Complex<T>],
        direction: Direction,
        log: &EventLog,
        setup: impl FnOnce(&[InProcEndpoint]),
    ) -> Result<(Vec<Complex<T>>, Vec<RankStats>)> {
        let grid = self.plan.grid;
        let total = grid.nx * grid.ny * grid.nz;
        if input.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "global input holds {} elements, grid needs {total}",
                input.len()
            )));
        }
        let (first_layout, last_layout) = self.layouts_for(direction);
        let phase_base = self
            .next_phase_base
            .fetch_add(4, std::sync::atomic::Ordering::Relaxed);
        let eps = InProcHub::create(self.num_ranks());
        setup(&eps);
        let results: Vec<Result<(Vec<Complex<T>>, RankStats)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = eps
                .iter()
                .enumerate()
                .map(|(rank, ep)| {
                    let chunk_in = extract_chunk(input, grid, first_layout.chunk_of(rank).unwrap());
                    let cache = self.caches[rank].clone();
                    let log = log.clone();
                    let plan = self.plan.clone();
                    let cfg = self.cfg.clone();
                    let ws = &self.workspaces[rank];
                    scope.spawn(move || {
                        let mut ws = ws.lock().unwrap();
                        let out = fft3d_rank(
                            &cfg, &plan, ep, &cache, &mut ws, &log, chunk_in, direction,
                            phase_base,
                        );
                        // settle staging buffers while peers are still alive
                        let _ = ws.reclaim(ep);
                        out
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("rank thread panicked")).collect()
        });
        let mut global = vec![Complex::new(T::zero(), T::zero()); total];
        let mut stats = Vec::with_capacity(results.len());
        for (rank, r) in results.into_iter().enumerate() {
            let (chunk, s) = r?;
            insert_chunk(&mut global, grid, last_layout.chunk_of(rank)?, &chunk);
            stats.push(s);
        }
        Ok((global, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::Precision;
    use rand::{Rng, SeedableRng};

    fn random_global(grid: GridSpec, seed: u64) -> Vec<Complex<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..grid.nx * grid.ny * grid.nz)
            .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn oracle_fft3d(
        grid: GridSpec,
        input: &[Complex<f64>],
        direction: Direction,
    ) -> Vec<Complex<f64>> {
        crate::fft::reference_fft3d((grid.nx, grid.ny, grid.nz), input, direction)
    }

    fn max_err(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    fn tol(grid: GridSpec, input: &[Complex<f64>]) -> f64 {
        let n = (grid.nx * grid.ny * grid.nz) as f64;
        let amax = input.iter().map(|c| c.norm()).fold(0.0, f64::max);
        1e-12 * n * amax.max(1.0)
    }

    #[test]
    fn extract_insert_roundtrip() {
        let grid = GridSpec::new(6, 4, 5, Precision::F64).unwrap();
        let plan = make_decomposition(grid, Strategy::Pencil, (2, 1)).unwrap();
        let global = random_global(grid, 3);
        let mut rebuilt = vec![Complex::new(0.0, 0.0); global.len()];
        for desc in &plan.layouts[1].chunks {
            let chunk = extract_chunk(&global, grid, desc);
            insert_chunk(&mut rebuilt, grid, desc, &chunk);
        }
        assert_eq!(global, rebuilt);
    }

    #[test]
    fn pencil_forward_matches_oracle() {
        let grid = GridSpec::new(8, 8, 8, Precision::F64).unwrap();
        let runner = InProcRunner::<f64>::new(
            grid,
            Strategy::Pencil,
            (2, 2),
            PipelineConfig::default(),
        )
        .unwrap();
        let input = random_global(grid, 11);
        let log = EventLog::new();
        let (out, stats) = runner.run(&input, Direction::Forward, &log, |_| {}).unwrap();
        let want = oracle_fft3d(grid, &input, Direction::Forward);
        assert!(max_err(&out, &want) < tol(grid, &input));
        assert_eq!(stats.len(), 4);
        assert!(stats.iter().all(|s| s.executed_tasks > 0));
    }

    #[test]
    fn slab_forward_matches_oracle() {
        let grid = GridSpec::new(8, 6, 10, Precision::F64).unwrap();
        let runner = InProcRunner::<f64>::new(
            grid,
            Strategy::Slab,
            (3, 1),
            PipelineConfig { strategy: Strategy::Slab, ..Default::default() },
        )
        .unwrap();
        let input = random_global(grid, 12);
        let log = EventLog::new();
        let (out, _) = runner.run(&input, Direction::Forward, &log, |_| {}).unwrap();
        let want = oracle_fft3d(grid, &input, Direction::Forward);
        assert!(max_err(&out, &want) < tol(grid, &input));
    }

    #[test]
    fn forward_inverse_roundtrip() {
        for (strategy, pg) in [(Strategy::Pencil, (2, 2)), (Strategy::Slab, (4, 1))] {
            let grid = GridSpec::new(8, 8, 8, Precision::F64).unwrap();
            let runner = InProcRunner::<f64>::new(
                grid,
                strategy,
                pg,
                PipelineConfig { strategy, ..Default::default() },
            )
            .unwrap();
            let input = random_global(grid, 13);
            let log = EventLog::new();
            let (freq, _) = runner.run(&input, Direction::Forward, &log, |_| {}).unwrap();
            let (back, _) = runner.run(&freq, Direction::Inverse, &log, |_| {}).unwrap();
            assert!(max_err(&back, &input) < tol(grid, &input), "{strategy} roundtrip");
        }
    }

    #[test]
    fn barrier_mode_same_result() {
        let grid = GridSpec::new(8, 8, 8, Precision::F64).unwrap();
        let input = random_global(grid, 14);
        let log = EventLog::new();
        let task = InProcRunner::<f64>::new(grid, Strategy::Pencil, (2, 2), PipelineConfig::default())
            .unwrap();
        let sync = InProcRunner::<f64>::new(
            grid,
            Strategy::Pencil,
            (2, 2),
            PipelineConfig { mode: ExecMode::BarrierSync, ..Default::default() },
        )
        .unwrap();
        let (a, _) = task.run(&input, Direction::Forward, &log, |_| {}).unwrap();
        let (b, _) = sync.run(&input, Direction::Forward, &log, |_| {}).unwrap();
        let err = max_err(&a, &b);
        assert!(err < 1e-12, "modes diverge by {err}");
    }

    #[test]
    fn multi_worker_matches_single_worker() {
        let grid = GridSpec::new(16, 8, 8, Precision::F64).unwrap();
        let input = random_global(grid, 15);
        let log = EventLog::new();
        let one = InProcRunner::<f64>::new(grid, Strategy::Pencil, (2, 2), PipelineConfig::default())
            .unwrap();
        let four = InProcRunner::<f64>::new(
            grid,
            Strategy::Pencil,
            (2, 2),
            PipelineConfig { workers_per_rank: 4, stealing: true, tasks_per_chunk: 8, ..Default::default() },
        )
        .unwrap();
        let (a, _) = one.run(&input, Direction::Forward, &log, |_| {}).unwrap();
        let (b, _) = four.run(&input, Direction::Forward, &log, |_| {}).unwrap();
        assert!(max_err(&a, &b) < 1e-12);
    }

    #[test]
    fn single_rank_pipeline() {
        let grid = GridSpec::new(4, 6, 8, Precision::F64).unwrap();
        let runner =
            InProcRunner::<f64>::new(grid, Strategy::Pencil, (1, 1), PipelineConfig::default())
                .unwrap();
        let input = random_global(grid, 16);
        let log = EventLog::new();
        let (out, _) = runner.run(&input, Direction::Forward, &log, |_| {}).unwrap();
        let want = oracle_fft3d(grid, &input, Direction::Forward);
        assert!(max_err(&out, &want) < tol(grid, &input));
    }

    #[test]
    fn f32_precision_within_tolerance() {
        let grid = GridSpec::new(8, 8, 8, Precision::F32).unwrap();
        let runner =
            InProcRunner::<f32>::new(grid, Strategy::Pencil, (2, 2), PipelineConfig::default())
                .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let input32: Vec<Complex<f32>> = (0..512)
            .map(|_| Complex::new(rng.gen_range(-1.0f32..1.0), rng.gen_range(-1.0f32..1.0)))
            .collect();
        let input64: Vec<Complex<f64>> =
            input32.iter().map(|c| Complex::new(c.re as f64, c.im as f64)).collect();
        let log = EventLog::new();
        let (out, _) = runner.run(&input32, Direction::Forward, &log, |_| {}).unwrap();
        let grid64 = GridSpec::new(8, 8, 8, Precision::F64).unwrap();
        let want = oracle_fft3d(grid64, &input64, Direction::Forward);
        let n = 512.0;
        let amax = input64.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let tol32 = 1e-4 * n * amax.max(1.0);
        for (a, b) in out.iter().zip(&want) {
            let d = (Complex::new(a.re as f64, a.im as f64) - b).norm();
            assert!(d < tol32, "f32 error {d} exceeds {tol32}");
        }
    }

    #[test]
    fn gather_over_transport() {
        let grid = GridSpec::new(4, 4, 4, Precision::F64).unwrap();
        let plan = make_decomposition(grid, Strategy::Pencil, (2, 2)).unwrap();
        let global = random_global(grid, 18);
        let eps = InProcHub::create(4);
        let layout = &plan.layouts[0];
        let got = std::thread::scope(|scope| {
            let handles: Vec<_> = eps
                .iter()
                .enumerate()
                .map(|(rank, ep)| {
                    let mine = extract_chunk(&global, grid, layout.chunk_of(rank).unwrap());
                    scope.spawn(move || gather_chunks(ep, grid, layout, &mine).unwrap())
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect::<Vec<_>>()
        });
        assert_eq!(got[0].as_ref().unwrap(), &global);
        assert!(got[1..].iter().all(Option::is_none));
    }
}
