//! Command implementations behind the CLI: oracle verification, timed
//! benchmark rows, the synthetic-imbalance experiment, overlap traces, and
//! runtime breakdown attribution.

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{OutputFormat, RunConfig};
use crate::cost::CommCostParams;
use crate::error::{Error, Result};
use crate::events::{Event, EventLog};
use crate::fft::{reference_fft3d, Direction};
use crate::grid::Strategy;
use crate::pipeline::{InProcRunner, PipelineConfig, RankStats};
use crate::real::FftReal;
use crate::sched::{Scheduler, SchedulerConfig, TaskId, TaskKind, TaskMeta, TaskRecord};
use crate::transport::{tags, wait, BackendKind, Endpoint, InProcHub, ANY_TAG};

/// Oracle guard: above this element count the quadratic reference transform
/// is refused without --force-oracle.
pub const ORACLE_GUARD_ELEMS: usize = 1 << 16;

fn pipeline_cfg(cfg: &RunConfig, strategy: Strategy) -> PipelineConfig {
    PipelineConfig {
        strategy,
        mode: cfg.mode,
        workers_per_rank: cfg.workers_per_rank,
        stealing: cfg.stealing,
        params: cfg.params,
        tasks_per_chunk: cfg.tasks_per_chunk,
    }
}

pub fn random_input<T: FftReal>(n: usize, seed: u64) -> Vec<Complex<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            Complex::new(
                T::of_f64(rng.gen_range(-1.0..1.0)),
                T::of_f64(rng.gen_range(-1.0..1.0)),
            )
        })
        .collect()
}

fn widen<T: FftReal>(v: &[Complex<T>]) -> Vec<Complex<f64>> {
    v.iter().map(|c| Complex::new(c.re.to_f64(), c.im.to_f64())).collect()
}

fn max_err(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Acceptance tolerance: eps_scale · N · ‖x‖∞ with eps_scale per precision.
pub fn check_tolerance(precision: crate::real::Precision, n: usize, inf_norm: f64) -> f64 {
    let scale = match precision {
        crate::real::Precision::F64 => 1e-10,
        crate::real::Precision::F32 => 1e-4,
    };
    scale * n as f64 * inf_norm.max(1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub grid: String,
    pub strategy: String,
    pub ranks: usize,
    pub precision: String,
    pub err_forward: f64,
    pub err_roundtrip: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub seed: u64,
    pub rows: Vec<CheckRow>,
    pub pass: bool,
}

fn grid_label(g: (usize, usize, usize)) -> String {
    format!("{}x{}x{}", g.0, g.1, g.2)
}

fn check_one<T: FftReal>(cfg: &RunConfig, strategy: Strategy) -> Result<CheckRow> {
    let grid = cfg.grid_spec()?;
    let n = cfg.total_elements();
    let input: Vec<Complex<T>> = random_input(n, cfg.seed);
    let input64 = widen(&input);
    let inf_norm = input64.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let tolerance = check_tolerance(cfg.precision, n, inf_norm);

    let runner =
        InProcRunner::<T>::new(grid, strategy, cfg.process_grid(strategy), pipeline_cfg(cfg, strategy))?;
    let log = EventLog::new();
    let (forward, _) = runner.run(&input, Direction::Forward, &log, |_| {})?;
    let (back, _) = runner.run(&forward, Direction::Inverse, &log, |_| {})?;

    let want = reference_fft3d(cfg.grid, &input64, Direction::Forward);
    let err_forward = max_err(&widen(&forward), &want);
    let err_roundtrip = max_err(&widen(&back), &input64);
    let pass = err_forward <= tolerance && err_roundtrip <= tolerance;
    Ok(CheckRow {
        grid: grid_label(cfg.grid),
        strategy: strategy.to_string(),
        ranks: cfg.ranks,
        precision: cfg.precision.to_string(),
        err_forward,
        err_roundtrip,
        tolerance,
        pass,
    })
}

/// Forward + inverse against the quadratic reference, per selected strategy.
pub fn cmd_check(cfg: &RunConfig) -> Result<CheckReport> {
    cfg.validate()?;
    if cfg.total_elements() > ORACLE_GUARD_ELEMS && !cfg.force_oracle {
        return Err(Error::InvalidConfig(format!(
            "{} elements exceed the {} reference-transform guard; pass --force-oracle to proceed",
            cfg.total_elements(),
            ORACLE_GUARD_ELEMS
        )));
    }
    if cfg.backend == BackendKind::Tcp {
        return Err(Error::UnsupportedBackend(
            "check runs on the in_process backend".into(),
        ));
    }
    let mut rows = Vec::new();
    for strategy in cfg.strategy.strategies() {
        let row = match cfg.precision {
            crate::real::Precision::F64 => check_one::<f64>(cfg, strategy)?,
            crate::real::Precision::F32 => check_one::<f32>(cfg, strategy)?,
        };
        rows.push(row);
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(CheckReport { seed: cfg.seed, rows, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub grid: String,
    pub strategy: String,
    pub ranks: usize,
    pub workers: usize,
    pub precision: String,
    pub mode: String,
    pub iter_mean_s: f64,
    pub iter_std_s: f64,
    pub t_fft_s: f64,
    pub t_redist_s: f64,
    pub t_overhead_s: f64,
}

struct Measurement {
    iter_mean_s: f64,
    iter_std_s: f64,
    t_fft_s: f64,
    t_redist_s: f64,
    t_overhead_s: f64,
}

fn rank_mean(stats: &[RankStats], f: impl Fn(&RankStats) -> f64) -> f64 {
    stats.iter().map(f).sum::<f64>() / stats.len() as f64
}

fn measure<T: FftReal>(cfg: &RunConfig, strategy: Strategy) -> Result<Measurement> {
    let grid = cfg.grid_spec()?;
    let runner =
        InProcRunner::<T>::new(grid, strategy, cfg.process_grid(strategy), pipeline_cfg(cfg, strategy))?;
    let input: Vec<Complex<T>> = random_input(cfg.total_elements(), cfg.seed);
    let log = EventLog::new();
    // one warm-up transform, excluded from all statistics
    runner.run(&input, Direction::Forward, &log, |_| {})?;
    let mut walls = Vec::with_capacity(cfg.iters);
    let (mut fft, mut redist) = (0.0, 0.0);
    for _ in 0..cfg.iters {
        let t0 = Instant::now();
        let (_, stats) = runner.run(&input, Direction::Forward, &log, |_| {})?;
        walls.push(t0.elapsed().as_secs_f64());
        fft += rank_mean(&stats, |s| s.t_fft);
        redist += rank_mean(&stats, |s| s.t_redist);
    }
    let iters = cfg.iters as f64;
    let mean = walls.iter().sum::<f64>() / iters;
    let var = walls.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / iters;
    let t_fft_s = fft / iters;
    let t_redist_s = redist / iters;
    Ok(Measurement {
        iter_mean_s: mean,
        iter_std_s: var.sqrt(),
        t_fft_s,
        t_redist_s,
        t_overhead_s: (mean - t_fft_s - t_redist_s).max(0.0),
    })
}

/// Timed rows, one per selected strategy; a warm-up iteration is excluded.
pub fn cmd_bench(cfg: &RunConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    if cfg.backend == BackendKind::Tcp {
        return Err(Error::UnsupportedBackend(
            "bench runs on the in_process backend".into(),
        ));
    }
    let mut rows = Vec::new();
    for strategy in cfg.strategy.strategies() {
        let m = match cfg.precision {
            crate::real::Precision::F64 => measure::<f64>(cfg, strategy)?,
            crate::real::Precision::F32 => measure::<f32>(cfg, strategy)?,
        };
        rows.push(BenchRow {
            grid: grid_label(cfg.grid),
            strategy: strategy.to_string(),
            ranks: cfg.ranks,
            workers: cfg.workers_per_rank,
            precision: cfg.precision.to_string(),
            mode: cfg.mode.to_string(),
            iter_mean_s: m.iter_mean_s,
            iter_std_s: m.iter_std_s,
            t_fft_s: m.t_fft_s,
            t_redist_s: m.t_redist_s,
            t_overhead_s: m.t_overhead_s,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub stealing: bool,
    pub total_s: f64,
    pub imbalance_pct: f64,
    pub max_busy_s: f64,
    pub min_busy_s: f64,
    pub avg_tasks_per_worker: f64,
    pub steal_count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImbalanceReport {
    pub workers: usize,
    pub heavy_factor: f64,
    pub off: RunSummary,
    pub on: RunSummary,
}

/// One synthetic-imbalance execution: `tasks_per_worker` tasks pinned per
/// worker; the first two workers' tasks carry `heavy_factor`× the volume
/// (payload duration). Cost estimates are deliberately uniform — the skew is
/// only discoverable at execution time, which is what stealing corrects.
pub fn run_imbalance_once(
    workers: usize,
    tasks_per_worker: usize,
    heavy_factor: f64,
    base_s: f64,
    stealing: bool,
    params: CommCostParams,
    log: &EventLog,
) -> Result<RunSummary> {
    if workers < 2 {
        return Err(Error::InvalidConfig("imbalance experiment needs >= 2 workers".into()));
    }
    let ntasks = workers * tasks_per_worker;
    let log_mark = log.snapshot().len();
    let chunk_owner: HashMap<usize, usize> = (0..ntasks).map(|t| (t, t / tasks_per_worker)).collect();
    let sched = Scheduler::new(
        SchedulerConfig {
            workers,
            stealing,
            params,
            rebalance_threshold: None,
            threaded: true,
            rank: 0,
        },
        chunk_owner,
        log.clone(),
    );
    let mut durs: HashMap<TaskId, f64> = HashMap::new();
    for t in 0..ntasks {
        let owner = t / tasks_per_worker;
        let heavy = owner < 2;
        let dur = if heavy { base_s * heavy_factor } else { base_s };
        let id = sched.submit(TaskRecord::new(
            TaskMeta {
                id: 0,
                kind: TaskKind::Generic,
                reads: vec![],
                writes: vec![t],
                in_place: false,
                affinity_chunk: t,
                cost_estimate: 1.0, // uniform: the imbalance is not declared
                bytes: 8192,
            },
            move || {
                // volume stand-in: occupy the worker for the chunk's share.
                // sleep, not spin: spinning makes co-scheduled workers
                // progress in lockstep when cores are oversubscribed and no
                // backlog ever builds up to steal
                std::thread::sleep(std::time::Duration::from_secs_f64(dur));
            },
        ))?;
        durs.insert(id, dur);
    }
    let t0 = Instant::now();
    let report = sched.run_to_completion()?;
    let total_s = t0.elapsed().as_secs_f64();
    // Attribute each task's intended duration to the worker that ran it.
    // Wall-clock busy intervals are worthless under CPU oversubscription
    // (a spinning worker's interval absorbs its neighbours' timeslices),
    // so the balance metric is over CPU-seconds of assigned work.
    let mut busy = vec![0.0f64; workers];
    for e in &log.snapshot()[log_mark..] {
        if e.event == "start" {
            if let Some(d) = e.task.and_then(|t| durs.get(&t)) {
                busy[e.worker] += d;
            }
        }
    }
    let mean = busy.iter().sum::<f64>() / workers as f64;
    let max = busy.iter().cloned().fold(0.0, f64::max);
    let var = busy.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / workers as f64;
    Ok(RunSummary {
        stealing,
        total_s,
        imbalance_pct: if mean > 0.0 { var.sqrt() / mean * 100.0 } else { 0.0 },
        max_busy_s: max,
        min_busy_s: busy.iter().cloned().fold(f64::INFINITY, f64::min),
        avg_tasks_per_worker: report.total_tasks as f64 / workers as f64,
        steal_count: report.steal_count(),
    })
}

/// Stealing OFF then ON on the same synthetic workload.
pub fn cmd_imbalance(cfg: &RunConfig) -> Result<ImbalanceReport> {
    let workers = cfg.workers_per_rank;
    if workers < 2 {
        return Err(Error::InvalidConfig("imbalance experiment needs >= 2 workers".into()));
    }
    let base_s = 0.002;
    let log = EventLog::new();
    let off = run_imbalance_once(workers, 4, cfg.heavy_factor, base_s, false, cfg.params, &log)?;
    let on = run_imbalance_once(workers, 4, cfg.heavy_factor, base_s, true, cfg.params, &log)?;
    Ok(ImbalanceReport { workers, heavy_factor: cfg.heavy_factor, off, on })
}

/// PASS iff some unpack completion precedes the globally last send
/// completion — i.e. the exchange did not degenerate into a barrier.
pub fn overlap_verdict(events: &[Event]) -> bool {
    let first_unpack = events
        .iter()
        .filter(|e| e.event == "unpack_complete")
        .map(|e| e.t)
        .fold(f64::INFINITY, f64::min);
    let last_send = events
        .iter()
        .filter(|e| e.event == "send_complete")
        .map(|e| e.t)
        .fold(f64::NEG_INFINITY, f64::max);
    first_unpack.is_finite() && last_send.is_finite() && first_unpack < last_send
}

/// Every rank posts all receives of a redistribution phase before its first
/// send of that phase.
pub fn recv_before_send(events: &[Event]) -> bool {
    let mut last_post: HashMap<(usize, String), f64> = HashMap::new();
    let mut first_send: HashMap<(usize, String), f64> = HashMap::new();
    for e in events {
        let Some(phase) = &e.phase else { continue };
        let key = (e.rank, phase.clone());
        match e.event.as_str() {
            "recv_posted" => {
                let v = last_post.entry(key).or_insert(f64::NEG_INFINITY);
                *v = v.max(e.t);
            }
            "send_start" => {
                let v = first_send.entry(key).or_insert(f64::INFINITY);
                *v = v.min(e.t);
            }
            _ => {}
        }
    }
    first_send.iter().all(|(key, &send)| match last_post.get(key) {
        Some(&post) => post < send,
        None => true, // nothing to receive in this phase
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceReport {
    pub events: usize,
    pub overlap_pass: bool,
    pub recv_before_send_pass: bool,
    pub delays_ms: Vec<f64>,
    pub out: Option<String>,
}

/// One transform with per-rank injected delivery delays; emits the event
/// trace and the overlap verdict. In-process backend only.
pub fn cmd_trace(cfg: &RunConfig) -> Result<(TraceReport, Vec<Event>)> {
    cfg.validate()?;
    if cfg.backend != BackendKind::InProcess {
        return Err(Error::UnsupportedBackend(
            "delay injection requires the in_process backend".into(),
        ));
    }
    let strategy = cfg.strategy.strategies()[0];
    let grid = cfg.grid_spec()?;
    let runner = InProcRunner::<f64>::new(
        grid,
        strategy,
        cfg.process_grid(strategy),
        pipeline_cfg(cfg, strategy),
    )?;
    let input: Vec<Complex<f64>> = random_input(cfg.total_elements(), cfg.seed);
    let log = EventLog::new();
    let delays = cfg.delays_ms.clone();
    runner.run(&input, Direction::Forward, &log, |eps| {
        for (rank, d) in delays.iter().enumerate() {
            if *d <= 0.0 || rank >= eps.len() {
                continue;
            }
            for dst in 0..eps.len() {
                if dst != rank {
                    // defers this rank's next message to each destination
                    eps[rank].inject_delay(dst, ANY_TAG, d / 1e3).unwrap();
                }
            }
        }
    })?;
    let events = log.snapshot();
    let report = TraceReport {
        events: events.len(),
        overlap_pass: overlap_verdict(&events),
        recv_before_send_pass: recv_before_send(&events),
        delays_ms: cfg.delays_ms.clone(),
        out: cfg.out.as_ref().map(|p| p.display().to_string()),
    };
    Ok((report, events))
}

#[derive(Debug, Clone, Serialize)]
pub struct BreakdownReport {
    pub total_s: f64,
    pub t_fft_s: f64,
    pub t_redist_s: f64,
    pub t_overhead_s: f64,
    pub pct_fft: f64,
    pub pct_redistribution: f64,
    pub pct_overhead: f64,
}

impl BreakdownReport {
    fn from_parts(fft: f64, redist: f64, overhead: f64) -> Self {
        let total = fft + redist + overhead;
        let pct = |x: f64| if total > 0.0 { x / total * 100.0 } else { 0.0 };
        BreakdownReport {
            total_s: total,
            t_fft_s: fft,
            t_redist_s: redist,
            t_overhead_s: overhead,
            pct_fft: pct(fft),
            pct_redistribution: pct(redist),
            pct_overhead: pct(overhead),
        }
    }
}

/// Attributes mean iteration wall time to FFT execution, redistribution, and
/// residual scheduling overhead.
pub fn cmd_breakdown(cfg: &RunConfig) -> Result<BreakdownReport> {
    cfg.validate()?;
    if cfg.backend == BackendKind::Tcp {
        return Err(Error::UnsupportedBackend(
            "breakdown runs on the in_process backend".into(),
        ));
    }
    let strategy = cfg.strategy.strategies()[0];
    let m = match cfg.precision {
        crate::real::Precision::F64 => measure::<f64>(cfg, strategy)?,
        crate::real::Precision::F32 => measure::<f32>(cfg, strategy)?,
    };
    Ok(BreakdownReport::from_parts(m.t_fft_s, m.t_redist_s, m.t_overhead_s))
}

/// Measures latency and inverse bandwidth with a two-rank in-process
/// ping/echo and installs them as alpha/beta (and latency/bandwidth).
pub fn calibrate_params(params: &mut CommCostParams) -> Result<()> {
    const ROUNDS: usize = 64;
    const SMALL: usize = 8;
    const LARGE: usize = 1 << 20;
    let eps = InProcHub::create(2);
    let (e0, e1) = (eps[0].clone(), eps[1].clone());
    let echo = std::thread::spawn(move || -> Result<()> {
        for i in 0..(2 * ROUNDS) as u64 {
            let size = if i < ROUNDS as u64 { SMALL } else { LARGE };
            let r = e1.irecv(0, tags::CALIBRATE | i, vec![0u8; size])?;
            wait(&e1, &r)?;
            let s = e1.isend(0, tags::CALIBRATE | i, r.take_buffer()?)?;
            wait(&e1, &s)?;
        }
        Ok(())
    });
    let mut rtt = [0.0f64; 2];
    for (half, size) in [(0, SMALL), (1, LARGE)] {
        let t0 = Instant::now();
        for i in 0..ROUNDS as u64 {
            let tag = tags::CALIBRATE | (half as u64 * ROUNDS as u64 + i);
            let r = e0.irecv(1, tag, vec![0u8; size])?;
            let s = e0.isend(1, tag, vec![0u8; size])?;
            wait(&e0, &s)?;
            wait(&e0, &r)?;
        }
        rtt[half] = t0.elapsed().as_secs_f64() / ROUNDS as f64;
    }
    echo.join().expect("echo thread panicked")?;
    let alpha = (rtt[0] / 2.0).max(1e-9);
    let beta = ((rtt[1] - rtt[0]) / 2.0 / (LARGE - SMALL) as f64).max(1e-13);
    params.alpha = alpha;
    params.beta = beta;
    params.latency = alpha;
    params.bandwidth = 1.0 / beta;
    Ok(())
}

/// Serializes rows as CSV (RFC-4180, header from field names) or a JSON
/// array, to the writer.
pub fn write_rows<S: Serialize>(
    rows: &[S],
    format: OutputFormat,
    mut out: impl Write,
) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            for r in rows {
                w.serialize(r).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            }
            w.flush()?;
        }
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut out, rows)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            writeln!(out)?;
        }
    }
    Ok(())
}
