//! Oracles and statistics over finished runs: MIS validity, residual-graph
//! decay, energy aggregation, scaling fits, the lower-bound experiment, and
//! the trace audit.

pub mod audit;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::NodeStatus;
use crate::stats::{linear_fit, LinearFit};
use crate::topology::{generate_matching_lower_bound, Graph, TopologyError};
use crate::trace::Trace;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("status vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("scaling fits need at least 4 distinct n values, got {0}")]
    TooFewPoints(usize),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Validity report for a final status assignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MisReport {
    pub valid: bool,
    /// Edges with both endpoints in the MIS.
    pub independence_violations: Vec<(u32, u32)>,
    /// Nodes neither in the MIS nor adjacent to an MIS node.
    pub coverage_violations: Vec<u32>,
    /// Nodes that never decided.
    pub undecided_nodes: Vec<u32>,
}

/// Check that the in-MIS set is independent, every node is covered, and
/// every node decided.
pub fn check_mis(g: &Graph, statuses: &[NodeStatus]) -> Result<MisReport, VerifyError> {
    let n = g.node_count() as usize;
    if statuses.len() != n {
        return Err(VerifyError::LengthMismatch {
            expected: n,
            got: statuses.len(),
        });
    }
    let in_mis = |v: u32| statuses[v as usize] == NodeStatus::InMis;
    let independence_violations: Vec<(u32, u32)> = g
        .edges()
        .iter()
        .copied()
        .filter(|&(u, v)| in_mis(u) && in_mis(v))
        .collect();
    let coverage_violations: Vec<u32> = (0..g.node_count())
        .filter(|&v| !in_mis(v) && !g.neighbors(v).iter().any(|&u| in_mis(u)))
        .collect();
    let undecided_nodes: Vec<u32> = (0..g.node_count())
        .filter(|&v| !statuses[v as usize].decided())
        .collect();
    Ok(MisReport {
        valid: independence_violations.is_empty()
            && coverage_violations.is_empty()
            && undecided_nodes.is_empty(),
        independence_violations,
        coverage_violations,
        undecided_nodes,
    })
}

/// Which residual-graph definition to use: the CD analysis keeps only
/// undecided nodes; the no-CD analysis keeps everything not out-MIS.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualKind {
    CdUndecided,
    NoCdNotOut,
}

impl ResidualKind {
    fn keeps(self, status: NodeStatus) -> bool {
        match self {
            ResidualKind::CdUndecided => !status.decided(),
            ResidualKind::NoCdNotOut => status != NodeStatus::OutMis,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseStat {
    pub index: u32,
    pub residual_nodes: u32,
    pub residual_edges: u64,
    pub winners: u32,
    pub committed: u32,
    /// |E_i| / |E_{i-1}|; `None` when the previous residual had no edges.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseStats {
    pub initial_edges: u64,
    pub phases: Vec<PhaseStat>,
}

/// Residual-graph sizes at every phase boundary, recomputed from the trace's
/// status events.
pub fn phase_stats(trace: &Trace, kind: ResidualKind) -> Result<PhaseStats, VerifyError> {
    let g = trace.graph()?;
    let n = g.node_count() as usize;
    let mut statuses = vec![NodeStatus::Undecided; n];
    let mut events = trace.status_events.iter().peekable();
    let initial_edges = g.edge_count() as u64;
    let mut prev_edges = initial_edges;
    let mut phases = Vec::with_capacity(trace.phases.len());
    for phase in &trace.phases {
        while let Some(ev) = events.peek() {
            if ev.round < phase.end {
                statuses[ev.node as usize] = ev.status;
                events.next();
            } else {
                break;
            }
        }
        let residual_nodes = (0..n).filter(|&v| kind.keeps(statuses[v])).count() as u32;
        let residual_edges = g
            .edges()
            .iter()
            .filter(|&&(u, v)| kind.keeps(statuses[u as usize]) && kind.keeps(statuses[v as usize]))
            .count() as u64;
        let ratio = if prev_edges == 0 {
            None
        } else {
            Some(residual_edges as f64 / prev_edges as f64)
        };
        phases.push(PhaseStat {
            index: phase.index,
            residual_nodes,
            residual_edges,
            winners: phase.winners.len() as u32,
            committed: phase.committed.len() as u32,
            ratio,
        });
        prev_edges = residual_edges;
    }
    Ok(PhaseStats {
        initial_edges,
        phases,
    })
}

/// Aggregate energy figures over a set of traces.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyStats {
    pub runs: usize,
    /// Worst per-node energy over all runs (the energy complexity).
    pub max: u64,
    /// Mean of the per-run maxima.
    pub mean_max: f64,
    /// Mean per-node energy over all nodes of all runs.
    pub mean: f64,
    pub per_run_max: Vec<u64>,
    pub capped_nodes: u64,
}

pub fn energy_stats<'a>(traces: impl IntoIterator<Item = &'a Trace>) -> EnergyStats {
    let mut per_run_max = Vec::new();
    let mut total = 0u128;
    let mut count = 0u64;
    let mut capped = 0u64;
    for t in traces {
        per_run_max.push(t.max_energy());
        total += t.energy.iter().map(|&e| u128::from(e)).sum::<u128>();
        count += t.energy.len() as u64;
        capped += t.capped.len() as u64;
    }
    let max = per_run_max.iter().copied().max().unwrap_or(0);
    let mean_max = if per_run_max.is_empty() {
        0.0
    } else {
        per_run_max.iter().map(|&m| m as f64).sum::<f64>() / per_run_max.len() as f64
    };
    let mean = if count == 0 {
        0.0
    } else {
        total as f64 / count as f64
    };
    EnergyStats {
        runs: per_run_max.len(),
        max,
        mean_max,
        mean,
        per_run_max,
        capped_nodes: capped,
    }
}

/// Regressor shapes for scaling fits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingModel {
    /// a * log2(n)
    LogN,
    /// a * log2(n)^2
    LogSquared,
    /// a * log2(n)^2 * log2(log2(n))
    LogSquaredLogLog,
}

impl ScalingModel {
    pub fn regressor(self, n: f64) -> f64 {
        let l = n.log2();
        match self {
            ScalingModel::LogN => l,
            ScalingModel::LogSquared => l * l,
            ScalingModel::LogSquaredLogLog => l * l * l.log2(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalingModel::LogN => "log2(n)",
            ScalingModel::LogSquared => "log2(n)^2",
            ScalingModel::LogSquaredLogLog => "log2(n)^2*log2(log2(n))",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalingFit {
    pub model: ScalingModel,
    pub coefficient: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `value` against the model's regressor of `n`.
pub fn scaling_fit(points: &[(u32, f64)], model: ScalingModel) -> Result<ScalingFit, VerifyError> {
    let distinct: std::collections::BTreeSet<u32> = points.iter().map(|p| p.0).collect();
    if distinct.len() < 4 {
        return Err(VerifyError::TooFewPoints(distinct.len()));
    }
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|&(n, v)| (model.regressor(f64::from(n)), v))
        .collect();
    let LinearFit {
        slope,
        intercept,
        r_squared,
    } = linear_fit(&xy);
    Ok(ScalingFit {
        model,
        coefficient: slope,
        intercept,
        r_squared,
    })
}

/// Outcome of the matching-graph lower-bound experiment at one cap value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LowerBoundOutcome {
    pub n: u32,
    pub cap: u64,
    pub trials: u32,
    pub failures: u32,
}

impl LowerBoundOutcome {
    pub fn failure_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            f64::from(self.failures) / f64::from(self.trials)
        }
    }
}

/// Run an MIS protocol on the matching lower-bound graph under a per-node
/// energy cap `b` and count the runs whose output is not a valid MIS. The
/// `runner` closure executes one seeded run under the given engine options.
pub fn lower_bound_experiment<F>(
    n: u32,
    cap: u64,
    trials: u32,
    seed0: u64,
    mut runner: F,
) -> Result<LowerBoundOutcome, VerifyError>
where
    F: FnMut(&Graph, u64, &crate::engine::EngineOptions) -> Trace,
{
    let g = generate_matching_lower_bound(n)?;
    let opts = crate::engine::EngineOptions {
        cap: Some(cap),
        ..Default::default()
    };
    let mut failures = 0u32;
    for t in 0..trials {
        let trace = runner(&g, seed0.wrapping_add(u64::from(t)), &opts);
        if !check_mis(&g, &trace.final_statuses)?.valid {
            failures += 1;
        }
    }
    Ok(LowerBoundOutcome {
        n,
        cap,
        trials,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_protocol, EngineOptions};
    use crate::mis_cd::{CdConfig, CdProtocol};
    use crate::topology::generate_path;

    #[test]
    fn check_mis_basic_examples() {
        let single = Graph::new(1, vec![]).unwrap();
        let r = check_mis(&single, &[NodeStatus::InMis]).unwrap();
        assert!(r.valid);

        let edge = Graph::new(2, vec![(0, 1)]).unwrap();
        let r = check_mis(&edge, &[NodeStatus::InMis, NodeStatus::InMis]).unwrap();
        assert!(!r.valid);
        assert_eq!(r.independence_violations, vec![(0, 1)]);

        // 3-path has exactly two valid MIS sets: {b} and {a, c}.
        let path = generate_path(3).unwrap();
        let mid = [NodeStatus::OutMis, NodeStatus::InMis, NodeStatus::OutMis];
        assert!(check_mis(&path, &mid).unwrap().valid);
        let ends = [NodeStatus::InMis, NodeStatus::OutMis, NodeStatus::InMis];
        assert!(check_mis(&path, &ends).unwrap().valid);
        // Statuses leaving node 2 uncovered are invalid.
        let bad = [NodeStatus::InMis, NodeStatus::OutMis, NodeStatus::OutMis];
        let r = check_mis(&path, &bad).unwrap();
        assert!(!r.valid);
        assert_eq!(r.coverage_violations, vec![2]);

        let undecided = [NodeStatus::InMis, NodeStatus::OutMis, NodeStatus::Undecided];
        let r = check_mis(&path, &undecided).unwrap();
        assert!(!r.valid);
        assert_eq!(r.undecided_nodes, vec![2]);

        assert!(check_mis(&path, &[NodeStatus::InMis]).is_err());
    }

    /// Brute-force MIS validator sharing no code with `check_mis`: builds an
    /// adjacency matrix from the raw edge list and scans it directly.
    fn brute_force_valid(n: u32, edges: &[(u32, u32)], statuses: &[NodeStatus]) -> bool {
        let n = n as usize;
        let mut adj = vec![vec![false; n]; n];
        for &(u, v) in edges {
            adj[u as usize][v as usize] = true;
            adj[v as usize][u as usize] = true;
        }
        let in_mis: Vec<bool> = statuses.iter().map(|&s| s == NodeStatus::InMis).collect();
        for u in 0..n {
            if !statuses[u].decided() {
                return false;
            }
            for v in 0..n {
                if adj[u][v] && in_mis[u] && in_mis[v] {
                    return false;
                }
            }
            if !in_mis[u] && !(0..n).any(|v| adj[u][v] && in_mis[v]) {
                return false;
            }
        }
        true
    }

    #[test]
    fn check_mis_agrees_with_brute_force_on_random_pairs() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..10_000 {
            let n: u32 = rng.random_range(1..=12);
            let p: f64 = rng.random_range(0.0..0.6);
            let g = crate::topology::generate_gnp(n, p, rng.random()).unwrap();
            let statuses: Vec<NodeStatus> = (0..n)
                .map(|_| match rng.random_range(0..4u8) {
                    0 => NodeStatus::InMis,
                    1 => NodeStatus::OutMis,
                    2 => NodeStatus::Undecided,
                    _ => NodeStatus::InMis,
                })
                .collect();
            let report = check_mis(&g, &statuses).unwrap();
            let expected = brute_force_valid(n, g.edges(), &statuses);
            assert_eq!(report.valid, expected, "n={n} statuses={statuses:?}");
        }
    }

    #[test]
    fn scaling_fit_examples() {
        let exact: Vec<(u32, f64)> = [64u32, 128, 256, 512, 1024]
            .iter()
            .map(|&n| (n, 7.0 * f64::from(n).log2()))
            .collect();
        let fit = scaling_fit(&exact, ScalingModel::LogN).unwrap();
        assert!((fit.coefficient - 7.0).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-9);

        let constant: Vec<(u32, f64)> = [64u32, 128, 256, 512].iter().map(|&n| (n, 3.0)).collect();
        let fit = scaling_fit(&constant, ScalingModel::LogN).unwrap();
        assert!(fit.r_squared.abs() < 1e-9);

        assert!(matches!(
            scaling_fit(&[(64, 1.0), (128, 2.0), (256, 3.0)], ScalingModel::LogN),
            Err(VerifyError::TooFewPoints(3))
        ));
    }

    #[test]
    fn phase_stats_all_decided_in_phase_one_empties_residual() {
        let g = Graph::new(2, vec![(0, 1)]).unwrap();
        let protocol = CdProtocol::new(CdConfig::new(16)).unwrap();
        // Find a seed where both nodes decide in phase 1 (overwhelmingly common).
        for seed in 0..20 {
            let trace = run_protocol(&g, &protocol, seed, &EngineOptions::default()).unwrap();
            if trace.phases.len() == 1 {
                let stats = phase_stats(&trace, ResidualKind::CdUndecided).unwrap();
                assert_eq!(stats.initial_edges, 1);
                assert_eq!(stats.phases[0].residual_edges, 0);
                assert_eq!(stats.phases[0].ratio, Some(0.0));
                return;
            }
        }
        panic!("no single-phase run found in 20 seeds");
    }

    #[test]
    fn energy_stats_aggregates_runs() {
        let g = crate::topology::generate_gnp(32, 0.2, 3).unwrap();
        let protocol = CdProtocol::new(CdConfig::new(32)).unwrap();
        let traces: Vec<Trace> = (0..4)
            .map(|seed| run_protocol(&g, &protocol, seed, &EngineOptions::default()).unwrap())
            .collect();
        let stats = energy_stats(&traces);
        assert_eq!(stats.runs, 4);
        assert_eq!(stats.per_run_max.len(), 4);
        assert_eq!(
            stats.max,
            traces.iter().map(Trace::max_energy).max().unwrap()
        );
        let expect_mean_max = traces.iter().map(|t| t.max_energy() as f64).sum::<f64>() / 4.0;
        assert!((stats.mean_max - expect_mean_max).abs() < 1e-9);
        assert!(stats.mean > 0.0 && stats.mean <= stats.max as f64);
        assert_eq!(stats.capped_nodes, 0);

        // A capped run contributes flagged nodes.
        let opts = EngineOptions {
            cap: Some(1),
            ..Default::default()
        };
        let capped = run_protocol(&g, &protocol, 0, &opts).unwrap();
        let stats = energy_stats(&[capped]);
        assert!(stats.capped_nodes > 0);
        assert_eq!(stats.max, 1);
    }

    #[test]
    fn lower_bound_cap_zero_always_fails() {
        let runner = |g: &Graph, seed: u64, opts: &EngineOptions| {
            let protocol = CdProtocol::new(CdConfig::new(g.node_count())).unwrap();
            run_protocol(g, &protocol, seed, opts).unwrap()
        };
        let out = lower_bound_experiment(64, 0, 50, 1, runner).unwrap();
        assert_eq!(out.failures, 50);
        assert_eq!(out.failure_rate(), 1.0);
    }

    #[test]
    fn lower_bound_large_cap_mostly_succeeds() {
        let runner = |g: &Graph, seed: u64, opts: &EngineOptions| {
            let protocol = CdProtocol::new(CdConfig::new(g.node_count())).unwrap();
            run_protocol(g, &protocol, seed, opts).unwrap()
        };
        // Cap far above the protocol's own budget: equals uncapped behavior.
        let out = lower_bound_experiment(256, 100_000, 200, 3, runner).unwrap();
        assert!(out.failure_rate() <= 0.01, "rate={}", out.failure_rate());
    }

    #[test]
    fn lower_bound_at_half_log_is_strictly_positive() {
        let runner = |g: &Graph, seed: u64, opts: &EngineOptions| {
            let protocol = CdProtocol::new(CdConfig::new(g.node_count())).unwrap();
            run_protocol(g, &protocol, seed, opts).unwrap()
        };
        for n in [64u32, 256] {
            let b = u64::from(crate::engine::ceil_log2(u64::from(n))) / 2;
            let out = lower_bound_experiment(n, b, 100, 5, runner).unwrap();
            assert!(out.failures > 0, "n={n} b={b}");
        }
    }
}
