//! Benchmark and verification harness for the distributed 3D FFT engine.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use taskfft::bench::{
    calibrate_params, cmd_bench, cmd_breakdown, cmd_check, cmd_imbalance, cmd_trace, write_rows,
};
use taskfft::config::{grid_from_str, on_off_from_str, OutputFormat, RunConfig, StrategyChoice};
use taskfft::pipeline::ExecMode;
use taskfft::real::Precision;
use taskfft::transport::BackendKind;

#[derive(Parser)]
#[command(name = "taskfft", about = "Task-scheduled distributed 3D FFT benchmark harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Verify forward/inverse transforms against the quadratic reference
    Check(CommonOpts),
    /// Timed transform runs; emits CSV or JSON rows
    Bench(CommonOpts),
    /// Synthetic-imbalance experiment, stealing off vs on
    Imbalance(CommonOpts),
    /// One traced run with injected delivery delays; overlap verdict
    Trace(CommonOpts),
    /// FFT / redistribution / overhead runtime attribution
    Breakdown(CommonOpts),
}

#[derive(Args)]
struct CommonOpts {
    /// Flat key=value config file; CLI flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid extents NX,NY,NZ
    #[arg(long, value_parser = grid_from_str)]
    grid: Option<(usize, usize, usize)>,
    /// slab | pencil | both
    #[arg(long)]
    strategy: Option<StrategyChoice>,
    /// Number of (simulated) ranks
    #[arg(long)]
    ranks: Option<usize>,
    #[arg(long = "workers-per-rank")]
    workers_per_rank: Option<usize>,
    /// f32 | f64
    #[arg(long)]
    precision: Option<Precision>,
    /// task | barrier
    #[arg(long)]
    mode: Option<ExecMode>,
    /// Timed iterations (one extra warm-up is always run)
    #[arg(long)]
    iters: Option<usize>,
    /// on | off
    #[arg(long, value_parser = on_off_from_str)]
    stealing: Option<bool>,
    /// in_process | tcp
    #[arg(long)]
    backend: Option<BackendKind>,
    /// host:port list file for the tcp backend, one entry per rank
    #[arg(long)]
    hosts: Option<PathBuf>,
    /// Per-message fixed cost (s)
    #[arg(long)]
    alpha: Option<f64>,
    /// Per-byte cost (s/B)
    #[arg(long)]
    beta: Option<f64>,
    /// Network latency (s)
    #[arg(long)]
    latency: Option<f64>,
    /// Network bandwidth (B/s)
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Fixed steal bookkeeping cost (s)
    #[arg(long = "steal-overhead")]
    steal_overhead: Option<f64>,
    /// Split each chunk's stage work into this many tasks
    #[arg(long = "tasks-per-chunk")]
    tasks_per_chunk: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// csv | json
    #[arg(long)]
    output: Option<OutputFormat>,
    /// Output file (default: stdout; trace default: trace.jsonl)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Measure alpha/beta via transport ping/echo before running
    #[arg(long)]
    calibrate: bool,
    /// Allow the quadratic reference on grids above the element guard
    #[arg(long = "force-oracle")]
    force_oracle: bool,
    /// Injected delivery delays in ms, one per rank (trace command)
    #[arg(long = "delay-ms", value_delimiter = ',')]
    delay_ms: Option<Vec<f64>>,
    /// Volume multiplier for the heavy chunks (imbalance command)
    #[arg(long = "heavy-factor")]
    heavy_factor: Option<f64>,
}

impl CommonOpts {
    fn build(&self) -> taskfft::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        set!(grid, strategy, ranks, workers_per_rank, precision, mode, iters, stealing, backend,
             tasks_per_chunk, seed, output, heavy_factor);
        if let Some(v) = &self.hosts {
            cfg.hosts = Some(v.clone());
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        if let Some(v) = self.alpha {
            cfg.params.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.params.beta = v;
        }
        if let Some(v) = self.latency {
            cfg.params.latency = v;
        }
        if let Some(v) = self.bandwidth {
            cfg.params.bandwidth = v;
        }
        if let Some(v) = self.steal_overhead {
            cfg.params.steal_overhead = v;
        }
        if let Some(v) = &self.delay_ms {
            cfg.delays_ms = v.clone();
        }
        cfg.calibrate |= self.calibrate;
        cfg.force_oracle |= self.force_oracle;
        if cfg.calibrate {
            calibrate_params(&mut cfg.params)?;
            eprintln!(
                "calibrated: alpha={:.3e} s, beta={:.3e} s/B",
                cfg.params.alpha, cfg.params.beta
            );
        }
        Ok(cfg)
    }
}

fn out_writer(cfg: &RunConfig) -> taskfft::Result<Box<dyn std::io::Write>> {
    Ok(match &cfg.out {
        Some(path) => Box::new(std::fs::File::create(path)?),
        None => Box::new(std::io::stdout()),
    })
}

fn run() -> taskfft::Result<bool> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Check(opts) => {
            let cfg = opts.build()?;
            let report = cmd_check(&cfg)?;
            println!("seed {}", report.seed);
            for r in &report.rows {
                println!(
                    "{} {} ranks={} {}: forward {:.3e}, roundtrip {:.3e} (tol {:.3e}) [{}]",
                    r.grid,
                    r.strategy,
                    r.ranks,
                    r.precision,
                    r.err_forward,
                    r.err_roundtrip,
                    r.tolerance,
                    if r.pass { "PASS" } else { "FAIL" }
                );
            }
            println!("check: {}", if report.pass { "PASS" } else { "FAIL" });
            Ok(report.pass)
        }
        Cmd::Bench(opts) => {
            let cfg = opts.build()?;
            let rows = cmd_bench(&cfg)?;
            eprintln!("seed {}", cfg.seed);
            write_rows(&rows, cfg.output, out_writer(&cfg)?)?;
            Ok(true)
        }
        Cmd::Imbalance(opts) => {
            let cfg = opts.build()?;
            let report = cmd_imbalance(&cfg)?;
            match cfg.output {
                OutputFormat::Json => {
                    serde_json::to_writer_pretty(out_writer(&cfg)?, &report)
                        .map_err(|e| taskfft::Error::InvalidConfig(e.to_string()))?;
                    println!();
                }
                OutputFormat::Csv => {
                    let mut w = out_writer(&cfg)?;
                    for s in [&report.off, &report.on] {
                        writeln!(
                            w,
                            "stealing={}: total {:.4}s, imbalance {:.1}%, busy max/min {:.4}/{:.4}s, \
                             avg tasks/worker {:.1}, steals {}",
                            if s.stealing { "on" } else { "off" },
                            s.total_s,
                            s.imbalance_pct,
                            s.max_busy_s,
                            s.min_busy_s,
                            s.avg_tasks_per_worker,
                            s.steal_count
                        )?;
                    }
                }
            }
            Ok(true)
        }
        Cmd::Trace(opts) => {
            let cfg = opts.build()?;
            let (report, events) = cmd_trace(&cfg)?;
            let path = cfg
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("trace.jsonl"));
            let mut file = std::fs::File::create(&path)?;
            for e in &events {
                serde_json::to_writer(&mut file, e)
                    .map_err(|err| taskfft::Error::InvalidConfig(err.to_string()))?;
                writeln!(file)?;
            }
            println!(
                "trace: {} events -> {} | overlap {} | recv-before-send {}",
                report.events,
                path.display(),
                if report.overlap_pass { "PASS" } else { "FAIL" },
                if report.recv_before_send_pass { "PASS" } else { "FAIL" }
            );
            Ok(report.overlap_pass && report.recv_before_send_pass)
        }
        Cmd::Breakdown(opts) => {
            let cfg = opts.build()?;
            let report = cmd_breakdown(&cfg)?;
            match cfg.output {
                OutputFormat::Json => {
                    serde_json::to_writer_pretty(out_writer(&cfg)?, &report)
                        .map_err(|e| taskfft::Error::InvalidConfig(e.to_string()))?;
                    println!();
                }
                OutputFormat::Csv => {
                    println!(
                        "total {:.4}s | fft {:.4}s ({:.1}%) | redistribution {:.4}s ({:.1}%) | \
                         overhead {:.4}s ({:.1}%)",
                        report.total_s,
                        report.t_fft_s,
                        report.pct_fft,
                        report.t_redist_s,
                        report.pct_redistribution,
                        report.t_overhead_s,
                        report.pct_overhead
                    );
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
