//! Run configuration shared by every CLI command: defaults, a flat
//! key=value config file, and validation against decomposition feasibility.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cost::CommCostParams;
use crate::error::{Error, Result};
use crate::grid::{make_decomposition, GridSpec, Strategy};
use crate::pipeline::ExecMode;
use crate::real::Precision;
use crate::transport::BackendKind;

/// `--strategy` accepts the two decompositions or `both` for side-by-side
/// rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyChoice {
    Slab,
    Pencil,
    Both,
}

impl StrategyChoice {
    pub fn strategies(self) -> Vec<Strategy> {
        match self {
            StrategyChoice::Slab => vec![Strategy::Slab],
            StrategyChoice::Pencil => vec![Strategy::Pencil],
            StrategyChoice::Both => vec![Strategy::Pencil, Strategy::Slab],
        }
    }
}

impl FromStr for StrategyChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "slab" => Ok(StrategyChoice::Slab),
            "pencil" => Ok(StrategyChoice::Pencil),
            "both" => Ok(StrategyChoice::Both),
            other => Err(format!("unknown strategy `{other}` (expected slab|pencil|both)")),
        }
    }
}

impl std::fmt::Display for StrategyChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StrategyChoice::Slab => write!(f, "slab"),
            StrategyChoice::Pencil => write!(f, "pencil"),
            StrategyChoice::Both => write!(f, "both"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown output format `{other}` (expected csv|json)")),
        }
    }
}

pub fn on_off_from_str(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(format!("expected on|off, got `{other}`")),
    }
}

/// One benchmark/verification run, fully describing inputs and environment.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: (usize, usize, usize),
    pub strategy: StrategyChoice,
    pub ranks: usize,
    pub workers_per_rank: usize,
    pub precision: Precision,
    pub mode: ExecMode,
    pub iters: usize,
    pub stealing: bool,
    pub backend: BackendKind,
    pub hosts: Option<PathBuf>,
    pub params: CommCostParams,
    pub tasks_per_chunk: usize,
    pub seed: u64,
    pub output: OutputFormat,
    pub out: Option<PathBuf>,
    pub calibrate: bool,
    pub force_oracle: bool,
    /// Per-rank delivery delays (ms) for trace runs; index = rank.
    pub delays_ms: Vec<f64>,
    /// Synthetic-imbalance knob: heavy chunks carry this volume multiple.
    pub heavy_factor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: (8, 8, 8),
            strategy: StrategyChoice::Pencil,
            ranks: 4,
            workers_per_rank: 1,
            precision: Precision::F64,
            mode: ExecMode::TaskAsync,
            iters: 3,
            stealing: false,
            backend: BackendKind::InProcess,
            hosts: None,
            params: CommCostParams::default(),
            tasks_per_chunk: 4,
            seed: 42,
            output: OutputFormat::Csv,
            out: None,
            calibrate: false,
            force_oracle: false,
            delays_ms: vec![0.0, 50.0],
            heavy_factor: 4.0,
        }
    }
}

pub fn grid_from_str(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split([',', 'x']).collect();
    if parts.len() != 3 {
        return Err(format!("grid `{s}` must be NX,NY,NZ"));
    }
    let mut v = [0usize; 3];
    for (i, p) in parts.iter().enumerate() {
        v[i] = p.trim().parse().map_err(|e| format!("grid `{s}`: {e}"))?;
    }
    Ok((v[0], v[1], v[2]))
}

impl RunConfig {
    pub fn total_elements(&self) -> usize {
        self.grid.0 * self.grid.1 * self.grid.2
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.0, self.grid.1, self.grid.2, self.precision)
    }

    /// Near-square process grid for pencil; (R,1) for slab.
    pub fn process_grid(&self, strategy: Strategy) -> (usize, usize) {
        match strategy {
            Strategy::Slab => (self.ranks, 1),
            Strategy::Pencil => {
                let r = self.ranks;
                let mut p1 = 1;
                for d in 1..=r {
                    if r % d == 0 && d * d <= r {
                        p1 = d;
                    }
                }
                (p1, r / p1)
            }
        }
    }

    /// Checks the run is executable: positive sizes and a feasible
    /// decomposition for every selected strategy.
    pub fn validate(&self) -> Result<()> {
        if self.ranks == 0 || self.workers_per_rank == 0 || self.iters == 0 {
            return Err(Error::InvalidConfig(
                "ranks, workers-per-rank and iters must be positive".into(),
            ));
        }
        if self.tasks_per_chunk == 0 {
            return Err(Error::InvalidConfig("tasks-per-chunk must be positive".into()));
        }
        self.params.validate().map_err(Error::InvalidConfig)?;
        let grid = self.grid_spec()?;
        for strategy in self.strategy.strategies() {
            make_decomposition(grid, strategy, self.process_grid(strategy))?;
        }
        if self.backend == BackendKind::Tcp && self.hosts.is_none() {
            return Err(Error::InvalidConfig("tcp backend requires --hosts FILE".into()));
        }
        Ok(())
    }

    /// Applies one `key=value` pair; keys mirror the CLI flag names.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: String| Error::InvalidConfig(format!("{key}: {e}"));
        match key {
            "grid" => self.grid = grid_from_str(value).map_err(bad)?,
            "strategy" => self.strategy = value.parse().map_err(bad)?,
            "ranks" => self.ranks = value.parse().map_err(|e| bad(format!("{e}")))?,
            "workers-per-rank" | "workers_per_rank" => {
                self.workers_per_rank = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "precision" => self.precision = value.parse().map_err(bad)?,
            "mode" => self.mode = value.parse().map_err(bad)?,
            "iters" => self.iters = value.parse().map_err(|e| bad(format!("{e}")))?,
            "stealing" => self.stealing = on_off_from_str(value).map_err(bad)?,
            "backend" => self.backend = value.parse().map_err(bad)?,
            "hosts" => self.hosts = Some(PathBuf::from(value)),
            "alpha" => self.params.alpha = value.parse().map_err(|e| bad(format!("{e}")))?,
            "beta" => self.params.beta = value.parse().map_err(|e| bad(format!("{e}")))?,
            "latency" => self.params.latency = value.parse().map_err(|e| bad(format!("{e}")))?,
            "bandwidth" => {
                self.params.bandwidth = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "steal-overhead" | "steal_overhead" => {
                self.params.steal_overhead = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "tasks-per-chunk" | "tasks_per_chunk" => {
                self.tasks_per_chunk = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "seed" => self.seed = value.parse().map_err(|e| bad(format!("{e}")))?,
            "output" => self.output = value.parse().map_err(bad)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "calibrate" => self.calibrate = on_off_from_str(value).map_err(bad)?,
            "force-oracle" | "force_oracle" => {
                self.force_oracle = on_off_from_str(value).map_err(bad)?
            }
            "delays-ms" | "delays_ms" => {
                self.delays_ms = value
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(format!("{e}")))?
            }
            "heavy-factor" | "heavy_factor" => {
                self.heavy_factor = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            other => return Err(Error::InvalidConfig(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Loads a flat key=value file; `#` starts a comment, blank lines are
    /// skipped. CLI flags applied afterwards override these values.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{}:{}: expected key=value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(grid_from_str("8,8,8").unwrap(), (8, 8, 8));
        assert_eq!(grid_from_str("4x8x16").unwrap(), (4, 8, 16));
        assert!(grid_from_str("8,8").is_err());
        assert!(grid_from_str("a,b,c").is_err());
    }

    #[test]
    fn process_grid_selection() {
        let mut cfg = RunConfig::default();
        cfg.ranks = 4;
        assert_eq!(cfg.process_grid(Strategy::Pencil), (2, 2));
        assert_eq!(cfg.process_grid(Strategy::Slab), (4, 1));
        cfg.ranks = 8;
        assert_eq!(cfg.process_grid(Strategy::Pencil), (2, 4));
        cfg.ranks = 1;
        assert_eq!(cfg.process_grid(Strategy::Pencil), (1, 1));
    }

    #[test]
    fn infeasible_configs_rejected() {
        let mut cfg = RunConfig::default();
        cfg.grid = (8, 2, 2);
        cfg.ranks = 9; // pencil (3,3) needs ny >= 3 on both splits
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.ranks = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_file_roundtrip_and_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# sample\ngrid = 4,8,16\nstrategy=both\nstealing = on\nseed=7\nalpha=2e-6\n",
        )
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.load_file(&path).unwrap();
        assert_eq!(cfg.grid, (4, 8, 16));
        assert_eq!(cfg.strategy, StrategyChoice::Both);
        assert!(cfg.stealing);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.params.alpha, 2e-6);
        // CLI override wins by being applied later
        cfg.apply_kv("seed", "99").unwrap();
        assert_eq!(cfg.seed, 99);
        // unknown key is an error
        assert!(cfg.apply_kv("bogus", "1").is_err());
    }
}
