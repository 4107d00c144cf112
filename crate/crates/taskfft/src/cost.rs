//! Latency–bandwidth cost model used by the scheduler and the analytical
//! reporting mode: redistribution cost, overlap lower bound, placement and
//! steal costs, the steal condition, and the per-phase runtime estimate.

use serde::{Deserialize, Serialize};

/// Flat network parameters. `steal_overhead` is the queue-management and
/// serialization overhead added to every remote steal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommCostParams {
    /// Seconds per message startup.
    pub alpha: f64,
    /// Seconds per byte (inverse bandwidth).
    pub beta: f64,
    /// One-way latency, seconds.
    pub latency: f64,
    /// Bytes per second.
    pub bandwidth: f64,
    /// Steal overhead, seconds.
    pub steal_overhead: f64,
}

impl Default for CommCostParams {
    /// Representative commodity-interconnect defaults.
    fn default() -> Self {
        CommCostParams {
            alpha: 1e-6,
            beta: 1e-10,
            latency: 1e-6,
            bandwidth: 1e10,
            steal_overhead: 1e-6,
        }
    }
}

impl CommCostParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.alpha < 0.0
            || self.beta < 0.0
            || self.latency < 0.0
            || self.steal_overhead < 0.0
        {
            return Err("cost parameters must be non-negative".into());
        }
        if self.bandwidth <= 0.0 {
            return Err("bandwidth must be positive".into());
        }
        Ok(())
    }
}

/// Measured pack / transfer / unpack spans of one redistribution.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PhaseTimings {
    pub t_pack: f64,
    pub t_mpi: f64,
    pub t_unpack: f64,
}

/// Inputs to the per-phase runtime estimate.
#[derive(Debug, Clone, Copy)]
pub struct PhaseEstimate {
    pub t_comp: f64,
    pub t_comm: f64,
    /// Tasks per worker.
    pub tasks_per_worker: f64,
    /// Per-task scheduling cost, seconds.
    pub tau_s: f64,
    /// Fraction of overhead hidden by parallelism, in [0, 1].
    pub rho: f64,
}

/// Message cost of one redistribution phase: alpha * |S| + beta * m.
pub fn comm_cost(params: &CommCostParams, peers: usize, bytes: u64) -> f64 {
    params.alpha * peers as f64 + params.beta * bytes as f64
}

/// Perfect-overlap lower bound: max of pack, transfer and unpack spans.
pub fn effective_lower_bound(t: &PhaseTimings) -> f64 {
    t.t_pack.max(t.t_mpi).max(t.t_unpack)
}

/// Placement cost of a task: estimated compute time plus the latency–bandwidth
/// term for `bytes_remote` non-local input bytes. Data-local placement
/// (`bytes_remote == 0`) costs exactly the compute estimate.
pub fn placement_cost(compute_est: f64, params: &CommCostParams, bytes_remote: u64) -> f64 {
    if bytes_remote == 0 {
        compute_est
    } else {
        compute_est + params.latency + bytes_remote as f64 / params.bandwidth
    }
}

/// Cost of stealing a task whose payload is `bytes`: L + V/B + sigma.
pub fn steal_cost(params: &CommCostParams, bytes: u64) -> f64 {
    params.latency + bytes as f64 / params.bandwidth + params.steal_overhead
}

/// Steal condition: strict `idle_estimate > steal_cost`.
pub fn steal_worthwhile(idle_estimate: f64, params: &CommCostParams, bytes: u64) -> bool {
    idle_estimate > steal_cost(params, bytes)
}

/// Per-phase runtime estimate: max(T_comp, T_comm) + (1 - rho) * k * tau_s.
pub fn phase_estimate(e: &PhaseEstimate) -> f64 {
    e.t_comp.max(e.t_comm) + (1.0 - e.rho) * e.tasks_per_worker * e.tau_s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn params(alpha: f64, beta: f64, latency: f64, bandwidth: f64, sigma: f64) -> CommCostParams {
        CommCostParams { alpha, beta, latency, bandwidth, steal_overhead: sigma }
    }

    #[test]
    fn comm_cost_examples() {
        let p = params(2e-6, 1e-9, 0.0, 1.0, 0.0);
        assert_eq!(comm_cost(&p, 4, 1_000_000), 1.008e-3);
        assert_eq!(comm_cost(&p, 0, 0), 0.0);
        let p = params(0.0, 1.0, 0.0, 1.0, 0.0);
        assert_eq!(comm_cost(&p, 9, 5), 5.0);
    }

    #[test]
    fn lower_bound_examples() {
        assert_eq!(effective_lower_bound(&PhaseTimings { t_pack: 1.0, t_mpi: 2.0, t_unpack: 3.0 }), 3.0);
        assert_eq!(effective_lower_bound(&PhaseTimings { t_pack: 5.0, t_mpi: 5.0, t_unpack: 5.0 }), 5.0);
        assert_eq!(effective_lower_bound(&PhaseTimings::default()), 0.0);
    }

    #[test]
    fn placement_cost_examples() {
        let p = params(0.0, 0.0, 1e-6, 1e9, 0.0);
        assert_eq!(placement_cost(1e-3, &p, 0), 1e-3);
        assert_eq!(placement_cost(0.0, &p, 1_000_000), 1.001e-3);
        let p = params(0.0, 0.0, 1.0, 1e6, 0.0);
        assert_eq!(placement_cost(2.0, &p, 1_000_000), 4.0);
    }

    #[test]
    fn steal_cost_examples() {
        let p = params(0.0, 0.0, 1e-3, 1e6, 5e-4);
        assert_eq!(steal_cost(&p, 2000), 3.5e-3);
        let p = params(0.0, 0.0, 0.0, 1.0, 0.0);
        assert_eq!(steal_cost(&p, 0), 0.0);
        let p = params(0.0, 0.0, 0.0, 1.0, 7.0);
        assert_eq!(steal_cost(&p, 0), 7.0);
    }

    #[test]
    fn steal_condition_strict() {
        let p = params(0.0, 0.0, 1e-3, 1e6, 5e-4);
        assert!(steal_worthwhile(10e-3, &p, 2000));
        assert!(!steal_worthwhile(3.5e-3, &p, 2000)); // boundary: strict
        let z = params(0.0, 0.0, 0.0, 1.0, 0.0);
        assert!(!steal_worthwhile(0.0, &z, 0));
    }

    #[test]
    fn phase_estimate_examples() {
        let e = PhaseEstimate { t_comp: 4.0, t_comm: 3.0, tasks_per_worker: 10.0, tau_s: 0.1, rho: 1.0 };
        assert_eq!(phase_estimate(&e), 4.0);
        let e = PhaseEstimate { rho: 0.0, ..e };
        assert_eq!(phase_estimate(&e), 5.0);
        let e = PhaseEstimate { t_comp: 0.0, t_comm: 0.0, tasks_per_worker: 6.0, tau_s: 0.25, rho: 0.5 };
        assert_eq!(phase_estimate(&e), 0.5 * 6.0 * 0.25);
    }

    #[test]
    fn comm_cost_additivity_property() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = params(
                rng.gen_range(0.0..1e-3),
                rng.gen_range(0.0..1e-6),
                0.0,
                1.0,
                0.0,
            );
            let s1 = rng.gen_range(0..100usize);
            let s2 = rng.gen_range(0..100usize);
            let m1 = rng.gen_range(0..1_000_000u64);
            let m2 = rng.gen_range(0..1_000_000u64);
            let lhs = comm_cost(&p, s1 + s2, m1 + m2);
            let rhs = comm_cost(&p, s1, m1) + comm_cost(&p, s2, m2);
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn phase_estimate_monotonicity_property() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let base = PhaseEstimate {
                t_comp: rng.gen_range(0.0..10.0),
                t_comm: rng.gen_range(0.0..10.0),
                tasks_per_worker: rng.gen_range(0.0..100.0),
                tau_s: rng.gen_range(0.0..0.1),
                rho: rng.gen_range(0.0..1.0),
            };
            let v = phase_estimate(&base);
            let bump = rng.gen_range(0.0..5.0);
            assert!(phase_estimate(&PhaseEstimate { t_comp: base.t_comp + bump, ..base }) >= v);
            assert!(phase_estimate(&PhaseEstimate { t_comm: base.t_comm + bump, ..base }) >= v);
            assert!(
                phase_estimate(&PhaseEstimate {
                    tasks_per_worker: base.tasks_per_worker + bump,
                    ..base
                }) >= v
            );
            assert!(phase_estimate(&PhaseEstimate { tau_s: base.tau_s + bump, ..base }) >= v);
            let rho2 = (base.rho + rng.gen_range(0.0..1.0)).min(1.0);
            assert!(phase_estimate(&PhaseEstimate { rho: rho2, ..base }) <= v);
        }
    }

    #[test]
    fn steal_worthwhile_monotone_in_idle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = params(
                0.0,
                0.0,
                rng.gen_range(0.0..1e-3),
                rng.gen_range(1.0..1e9),
                rng.gen_range(0.0..1e-3),
            );
            let bytes = rng.gen_range(0..1_000_000u64);
            let i = rng.gen_range(0.0..1e-2);
            if steal_worthwhile(i, &p, bytes) {
                assert!(steal_worthwhile(i + rng.gen_range(0.0..1.0), &p, bytes));
            }
        }
    }
}
