//! Trace audit: replay and re-derive everything a trace claims.
//!
//! The audit recomputes listener observations from the recorded actions,
//! recounts the energy ledger, validates status-transition legality, and
//! checks the protocol-specific structural invariants that are assertable
//! from a trace alone: the CD sleep schedule and round budget, winners being
//! a superset of rank local maxima, the no-CD schedule lockstep, committed
//! nodes deciding within their phase, and the commit-degree bound.

use std::collections::HashMap;

use crate::engine::{
    ceil_mul_log2, listener_observation, ChannelModel, NodeStatus, Observation, RoundAction,
};
use crate::mis_cd;
use crate::mis_nocd::{NoCdConfig, Schedule};
use crate::topology::Graph;
use crate::trace::{Rank, Trace};

/// Result of auditing one trace.
#[derive(Clone, Debug, Default)]
pub struct AuditReport {
    pub failures: Vec<String>,
    /// no-CD only: rank local maxima that lost their competition. A local
    /// maximum can legitimately end committed instead of winning (a
    /// committed lower-rank neighbor keeps transmitting its 1-bits and may
    /// set the maximum's heard flag), but losing requires an actual
    /// receiver-backoff miss, so losses are counted rather than failed.
    pub local_max_misses: u32,
    /// no-CD only: rank local maxima examined.
    pub local_max_total: u32,
    /// no-CD only: listen rounds whose transmitting-neighbor count exceeded
    /// the listener's degree estimate at that point (the precondition of the
    /// repeated-backoff detection bound). Diagnostic, not a failure.
    pub estimate_violations: u32,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

struct PerNodeEvents {
    /// (round, status) sorted by round.
    events: Vec<(u64, NodeStatus)>,
}

impl PerNodeEvents {
    fn status_before(&self, round: u64) -> NodeStatus {
        match self.events.partition_point(|e| e.0 < round) {
            0 => NodeStatus::Undecided,
            i => self.events[i - 1].1,
        }
    }

    fn final_status(&self) -> NodeStatus {
        self.events.last().map_or(NodeStatus::Undecided, |e| e.1)
    }
}

/// Audit a trace; `report.passed()` iff every re-derived fact matches.
pub fn audit_trace(trace: &Trace) -> AuditReport {
    let mut report = AuditReport::default();
    let fail = |report: &mut AuditReport, msg: String| report.failures.push(msg);

    let g = match trace.graph() {
        Ok(g) => g,
        Err(e) => {
            fail(&mut report, format!("embedded graph is invalid: {e}"));
            return report;
        }
    };
    let n = g.node_count() as usize;
    if trace.energy.len() != n || trace.final_statuses.len() != n {
        fail(
            &mut report,
            "energy or final status vector length mismatch".into(),
        );
        return report;
    }

    check_records(trace, &g, &mut report);
    check_energy(trace, &mut report);
    let per_node = check_status_events(trace, &mut report);
    check_protocol_structure(trace, &g, &per_node, &mut report);
    if trace.config.protocol == "nocd" && report.passed() {
        if let Some(sched) = nocd_schedule(trace) {
            report.estimate_violations = count_estimate_violations(trace, &g, &sched, &per_node);
        }
    }
    report
}

/// Count listen rounds where the number of transmitting neighbors exceeded
/// the listener's effective degree estimate: the full bound Δ everywhere,
/// except the shrunken `min(Δ, ceil(κ log2 n))` for committed nodes during
/// the competition and for every low-degree-subroutine participant.
fn count_estimate_violations(
    trace: &Trace,
    g: &Graph,
    sched: &Schedule,
    per_node: &[PerNodeEvents],
) -> u32 {
    let delta = trace.config.delta.unwrap_or(u32::MAX);
    let mut violations = 0u32;
    let mut counts = vec![0u32; g.node_count() as usize];
    let mut touched: Vec<u32> = Vec::new();
    let records = &trace.rounds;
    let mut i = 0usize;
    while i < records.len() {
        let round = records[i].round;
        let mut j = i;
        while j < records.len() && records[j].round == round {
            j += 1;
        }
        let group = &records[i..j];
        for rec in group {
            if rec.action == RoundAction::Transmit {
                for &nb in g.neighbors(rec.node) {
                    if counts[nb as usize] == 0 {
                        touched.push(nb);
                    }
                    counts[nb as usize] += 1;
                }
            }
        }
        let offset = round % sched.t_l;
        let in_competition = offset < sched.t_c;
        let in_low_degree = (sched.low_degree_offset()..sched.shallow_offset()).contains(&offset);
        for rec in group {
            if rec.action != RoundAction::Listen {
                continue;
            }
            let senders = counts[rec.node as usize];
            let estimate = if in_low_degree
                || (in_competition
                    && per_node[rec.node as usize].status_before(round) == NodeStatus::Commit)
            {
                sched.delta_small
            } else {
                delta
            };
            if senders > estimate {
                violations += 1;
            }
        }
        for &node in &touched {
            counts[node as usize] = 0;
        }
        touched.clear();
        i = j;
    }
    violations
}

/// Re-derive every listener observation and check observation legality.
fn check_records(trace: &Trace, g: &Graph, report: &mut AuditReport) {
    let n = g.node_count();
    let model = trace.config.channel;
    let mut counts = vec![0u32; n as usize];
    let mut touched: Vec<u32> = Vec::new();
    let mut i = 0usize;
    let mut last_round = 0u64;
    let records = &trace.rounds;
    while i < records.len() {
        let round = records[i].round;
        if round < last_round {
            report
                .failures
                .push(format!("records out of order at round {round}"));
            return;
        }
        last_round = round;
        if round >= trace.rounds_executed {
            report.failures.push(format!(
                "record at round {round} beyond executed {}",
                trace.rounds_executed
            ));
            return;
        }
        let mut j = i;
        while j < records.len() && records[j].round == round {
            j += 1;
        }
        let group = &records[i..j];
        for w in group.windows(2) {
            if w[0].node >= w[1].node {
                report.failures.push(format!(
                    "round {round}: node records not strictly increasing ({} then {})",
                    w[0].node, w[1].node
                ));
                return;
            }
        }
        for rec in group {
            if rec.node >= n {
                report
                    .failures
                    .push(format!("round {round}: node {} out of range", rec.node));
                return;
            }
            if rec.action == RoundAction::Sleep {
                report.failures.push(format!(
                    "round {round}: node {} recorded a sleep action",
                    rec.node
                ));
            }
            if rec.action == RoundAction::Transmit {
                for &nb in g.neighbors(rec.node) {
                    if counts[nb as usize] == 0 {
                        touched.push(nb);
                    }
                    counts[nb as usize] += 1;
                }
            }
        }
        for rec in group {
            let expected = match rec.action {
                RoundAction::Listen => listener_observation(counts[rec.node as usize], model),
                _ => Observation::Nothing,
            };
            if rec.obs != expected {
                report.failures.push(format!(
                    "round {round}: node {} observed {:?}, semantics give {:?}",
                    rec.node, rec.obs, expected
                ));
            }
            let legal = match (model, rec.obs) {
                (_, Observation::Collision) => model == ChannelModel::Cd,
                (_, Observation::BeepHeard) => model == ChannelModel::Beep,
                _ => true,
            };
            if !legal {
                report.failures.push(format!(
                    "round {round}: observation {:?} is impossible under {:?}",
                    rec.obs, model
                ));
            }
        }
        for &node in &touched {
            counts[node as usize] = 0;
        }
        touched.clear();
        i = j;
    }
}

/// Energy conservation: the ledger equals the count of awake records; the
/// cap is never exceeded and capped nodes sit exactly at it.
fn check_energy(trace: &Trace, report: &mut AuditReport) {
    let mut recount = vec![0u64; trace.energy.len()];
    for rec in &trace.rounds {
        recount[rec.node as usize] += 1;
    }
    for (v, (&claimed, &actual)) in trace.energy.iter().zip(&recount).enumerate() {
        if claimed != actual {
            report.failures.push(format!(
                "node {v}: ledger claims {claimed} awake rounds, records show {actual}"
            ));
        }
    }
    if let Some(cap) = trace.config.cap {
        for (v, &e) in trace.energy.iter().enumerate() {
            if e > cap {
                report
                    .failures
                    .push(format!("node {v}: energy {e} exceeds cap {cap}"));
            }
        }
        for c in &trace.capped {
            if trace.energy[c.node as usize] != cap {
                report.failures.push(format!(
                    "capped node {} has energy {} != cap {cap}",
                    c.node, trace.energy[c.node as usize]
                ));
            }
        }
    } else if !trace.capped.is_empty() {
        report
            .failures
            .push("capped nodes recorded without a cap".into());
    }
}

/// Status machine legality plus final-status consistency.
fn check_status_events(trace: &Trace, report: &mut AuditReport) -> Vec<PerNodeEvents> {
    let n = trace.node_count() as usize;
    let mut per_node: Vec<PerNodeEvents> = (0..n)
        .map(|_| PerNodeEvents { events: Vec::new() })
        .collect();
    let capped: HashMap<u32, u64> = trace.capped.iter().map(|c| (c.node, c.round)).collect();
    let protocol = trace.config.protocol.as_str();
    let mut last_round = 0u64;
    for ev in &trace.status_events {
        if ev.round < last_round {
            report
                .failures
                .push(format!("status events out of order at round {}", ev.round));
            return per_node;
        }
        last_round = ev.round;
        if ev.node as usize >= n {
            report
                .failures
                .push(format!("status event for out-of-range node {}", ev.node));
            return per_node;
        }
        let node_events = &mut per_node[ev.node as usize];
        let from = node_events.final_status();
        let cap_join = capped.get(&ev.node) == Some(&ev.round) && ev.status == NodeStatus::InMis;
        let legal = cap_join
            || match protocol {
                "cd" | "beep" | "nocd-naive" => {
                    from == NodeStatus::Undecided && ev.status.decided()
                }
                "nocd" => matches!(
                    (from, ev.status),
                    (NodeStatus::Undecided, NodeStatus::Win)
                        | (NodeStatus::Undecided, NodeStatus::Lose)
                        | (NodeStatus::Undecided, NodeStatus::Commit)
                        | (NodeStatus::Undecided, NodeStatus::InMis)
                        | (NodeStatus::Undecided, NodeStatus::OutMis)
                        | (NodeStatus::Win, NodeStatus::InMis)
                        | (NodeStatus::Win, NodeStatus::OutMis)
                        | (NodeStatus::Commit, NodeStatus::Win)
                        | (NodeStatus::Commit, NodeStatus::Undecided)
                        | (NodeStatus::Commit, NodeStatus::OutMis)
                        | (NodeStatus::Lose, NodeStatus::Undecided)
                        | (NodeStatus::Lose, NodeStatus::OutMis)
                ),
                // Harness statuses are free-form outcome markers.
                _ => true,
            };
        if !legal {
            report.failures.push(format!(
                "node {} illegal status transition {from:?} -> {:?} at round {}",
                ev.node, ev.status, ev.round
            ));
        }
        if from.decided() && !cap_join {
            report.failures.push(format!(
                "node {} changed status after deciding at round {}",
                ev.node, ev.round
            ));
        }
        node_events.events.push((ev.round, ev.status));
    }
    for (v, node_events) in per_node.iter().enumerate() {
        if node_events.final_status() != trace.final_statuses[v] {
            report.failures.push(format!(
                "node {v}: final status {:?} does not match events ({:?})",
                trace.final_statuses[v],
                node_events.final_status()
            ));
        }
    }
    per_node
}

fn check_protocol_structure(
    trace: &Trace,
    g: &Graph,
    per_node: &[PerNodeEvents],
    report: &mut AuditReport,
) {
    match trace.config.protocol.as_str() {
        "cd" | "beep" => {
            for f in mis_cd::phase_budget_failures(trace) {
                report.failures.push(f);
            }
            check_winners_cover_local_maxima(trace, g, true, report);
        }
        "nocd" => {
            let Some(sched) = nocd_schedule(trace) else {
                report
                    .failures
                    .push("trace config is missing no-CD constants".into());
                return;
            };
            check_nocd_lockstep(trace, &sched, per_node, report);
            check_must_decide(trace, &sched, per_node, report);
            check_commit_degree(trace, g, &sched, per_node, report);
            check_lose_resolution(trace, &sched, per_node, report);
            check_winners_cover_local_maxima(trace, g, false, report);
        }
        "nocd-naive" => {
            if let Some(sched) = nocd_schedule(trace) {
                check_naive_event_offsets(trace, &sched, report);
            }
        }
        _ => {}
    }
}

fn nocd_schedule(trace: &Trace) -> Option<Schedule> {
    let cfg = NoCdConfig {
        n: trace.config.n,
        delta: trace.config.delta?,
        beta: trace.config.beta?,
        kappa: trace.config.kappa?,
        c: trace.config.c?,
        c_prime: trace.config.c_prime?,
        low_degree: Default::default(),
    };
    cfg.validate().ok()?;
    Some(cfg.schedule())
}

fn capped_round(trace: &Trace, node: u32) -> Option<u64> {
    trace
        .capped
        .iter()
        .find(|c| c.node == node)
        .map(|c| c.round)
}

/// Every phase's winners must include all rank local maxima among that
/// phase's participants. Deterministic under CD. Under no-CD a local
/// maximum may legally end committed instead (see [`AuditReport`]), so only
/// maxima that end in status `lose` count as misses.
fn check_winners_cover_local_maxima(
    trace: &Trace,
    g: &Graph,
    hard: bool,
    report: &mut AuditReport,
) {
    for phase in &trace.phases {
        // Only complete phases can be judged.
        if phase.end != phase.start + trace.config.phase_length {
            continue;
        }
        let ranks: HashMap<u32, &Rank> = phase.ranks.iter().map(|r| (r.node, &r.rank)).collect();
        let winners: std::collections::HashSet<u32> = phase.winners.iter().copied().collect();
        let losers: std::collections::HashSet<u32> = trace
            .status_events
            .iter()
            .filter(|e| {
                e.status == NodeStatus::Lose && e.round >= phase.start && e.round < phase.end
            })
            .map(|e| e.node)
            .collect();
        for entry in &phase.ranks {
            let v = entry.node;
            if capped_round(trace, v).is_some_and(|r| r < phase.end) {
                continue;
            }
            let is_local_max = g.neighbors(v).iter().all(|u| match ranks.get(u) {
                Some(other) => **other < entry.rank,
                None => true,
            });
            if !is_local_max {
                continue;
            }
            if hard {
                if !winners.contains(&v) {
                    report.failures.push(format!(
                        "phase {}: local maximum {v} is not among the winners",
                        phase.index
                    ));
                }
            } else {
                report.local_max_total += 1;
                if losers.contains(&v) {
                    report.local_max_misses += 1;
                }
            }
        }
    }
}

/// Status events and awake records must land in the block windows the no-CD
/// schedule assigns them.
fn check_nocd_lockstep(
    trace: &Trace,
    s: &Schedule,
    _per_node: &[PerNodeEvents],
    report: &mut AuditReport,
) {
    let t_l = s.t_l;
    let capped: HashMap<u32, u64> = trace.capped.iter().map(|c| (c.node, c.round)).collect();
    for ev in &trace.status_events {
        if capped.get(&ev.node) == Some(&ev.round) {
            continue;
        }
        let off = ev.round % t_l;
        let ok = match ev.status {
            NodeStatus::Win | NodeStatus::Lose | NodeStatus::Commit => off < s.t_c,
            NodeStatus::InMis => {
                (s.deep1_offset()..s.deep2_offset()).contains(&off)
                    || (s.low_degree_offset()..s.shallow_offset()).contains(&off)
            }
            NodeStatus::OutMis => off >= s.deep1_offset(),
            NodeStatus::Undecided => {
                (s.deep2_offset()..s.low_degree_offset()).contains(&off)
                    || off >= s.shallow_offset()
            }
        };
        if !ok {
            report.failures.push(format!(
                "node {}: {:?} event at phase offset {off} violates the block schedule",
                ev.node, ev.status
            ));
        }
    }
    // Only committed survivors of the same phase may be awake in the
    // low-degree span.
    let mut inner_participants: HashMap<u64, std::collections::HashSet<u32>> = HashMap::new();
    for ev in &trace.status_events {
        if ev.status == NodeStatus::Undecided {
            let off = ev.round % t_l;
            if (s.deep2_offset()..s.low_degree_offset()).contains(&off) {
                inner_participants
                    .entry(ev.round / t_l)
                    .or_default()
                    .insert(ev.node);
            }
        }
    }
    for rec in &trace.rounds {
        let off = rec.round % t_l;
        if (s.low_degree_offset()..s.shallow_offset()).contains(&off) {
            let phase = rec.round / t_l;
            let is_participant = inner_participants
                .get(&phase)
                .is_some_and(|p| p.contains(&rec.node));
            if !is_participant {
                report.failures.push(format!(
                    "node {} awake in the low-degree span of phase {phase} without committing",
                    rec.node
                ));
            }
        }
    }
}

/// Any node that entered `W_i` or `C_i` is decided by the end of phase `i`.
fn check_must_decide(
    trace: &Trace,
    s: &Schedule,
    per_node: &[PerNodeEvents],
    report: &mut AuditReport,
) {
    for ev in &trace.status_events {
        if !matches!(ev.status, NodeStatus::Win | NodeStatus::Commit) {
            continue;
        }
        let phase = ev.round / s.t_l;
        let phase_end = (phase + 1) * s.t_l;
        if phase_end > trace.rounds_executed {
            continue; // truncated phase
        }
        if capped_round(trace, ev.node).is_some_and(|r| r <= phase_end) {
            continue;
        }
        let decided_in_time = per_node[ev.node as usize]
            .events
            .iter()
            .any(|&(r, st)| st.decided() && r >= ev.round && r < phase_end);
        if !decided_in_time {
            report.failures.push(format!(
                "node {} entered W/C in phase {phase} but did not decide by its end",
                ev.node
            ));
        }
    }
}

/// Committed nodes have at most `ceil(kappa log2 n)` competition-participant
/// neighbors that are not in status `lose` at the start of the commit Bitty
/// phase.
fn check_commit_degree(
    trace: &Trace,
    g: &Graph,
    s: &Schedule,
    per_node: &[PerNodeEvents],
    report: &mut AuditReport,
) {
    let bound = ceil_mul_log2(trace.config.kappa.unwrap_or(5), u64::from(trace.config.n)).max(1);
    let t_b_k = s.t_b(s.k);
    for phase in &trace.phases {
        if phase.committed.is_empty() {
            continue;
        }
        let participants: std::collections::HashSet<u32> =
            phase.ranks.iter().map(|r| r.node).collect();
        for ev in &trace.status_events {
            if ev.status != NodeStatus::Commit
                || ev.round < phase.start
                || ev.round >= phase.start + s.t_c
            {
                continue;
            }
            let bitty = (ev.round - phase.start) / t_b_k;
            let bitty_start = phase.start + bitty * t_b_k;
            let live = g
                .neighbors(ev.node)
                .iter()
                .filter(|&&u| {
                    participants.contains(&u)
                        && per_node[u as usize].status_before(bitty_start) != NodeStatus::Lose
                })
                .count() as u32;
            if live > bound {
                report.failures.push(format!(
                    "node {} committed in phase {} with {live} live neighbors (bound {bound})",
                    ev.node, phase.index
                ));
            }
        }
    }
}

/// Losers resolve to undecided or out-MIS by the end of their phase.
fn check_lose_resolution(
    trace: &Trace,
    s: &Schedule,
    per_node: &[PerNodeEvents],
    report: &mut AuditReport,
) {
    for ev in &trace.status_events {
        if ev.status != NodeStatus::Lose {
            continue;
        }
        let phase = ev.round / s.t_l;
        let phase_end = (phase + 1) * s.t_l;
        if phase_end > trace.rounds_executed {
            continue;
        }
        if capped_round(trace, ev.node).is_some_and(|r| r <= phase_end) {
            continue;
        }
        let resolved = per_node[ev.node as usize].events.iter().any(|&(r, st)| {
            r > ev.round
                && r < phase_end
                && matches!(st, NodeStatus::Undecided | NodeStatus::OutMis)
        });
        if !resolved {
            report.failures.push(format!(
                "node {} lost in phase {phase} but never resolved by the phase end",
                ev.node
            ));
        }
    }
}

/// Baseline decisions happen only in the final virtual CD round of a phase.
fn check_naive_event_offsets(trace: &Trace, s: &Schedule, report: &mut AuditReport) {
    let span = s.t_b(s.k);
    let phase_len = (u64::from(s.rank_len) + 1) * span;
    let capped: HashMap<u32, u64> = trace.capped.iter().map(|c| (c.node, c.round)).collect();
    for ev in &trace.status_events {
        if capped.get(&ev.node) == Some(&ev.round) {
            continue;
        }
        let off = ev.round % phase_len;
        if off < u64::from(s.rank_len) * span {
            report.failures.push(format!(
                "baseline node {} decided outside the final check span (offset {off})",
                ev.node
            ));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_protocol, EngineOptions};
    use crate::mis_cd::{CdConfig, CdProtocol};
    use crate::mis_nocd::{NoCdConfig, NoCdProtocol};
    use crate::topology::generate_gnp;

    #[test]
    fn fresh_cd_trace_passes_audit() {
        let g = generate_gnp(48, 0.15, 4).unwrap();
        let protocol = CdProtocol::new(CdConfig::new(48)).unwrap();
        let trace = run_protocol(&g, &protocol, 9, &EngineOptions::default()).unwrap();
        let report = audit_trace(&trace);
        assert!(report.passed(), "{:?}", report.failures);
    }

    #[test]
    fn fresh_nocd_trace_passes_audit() {
        let g = generate_gnp(32, 0.15, 4).unwrap();
        let cfg = NoCdConfig::new(32, g.max_degree().max(1));
        let protocol = NoCdProtocol::new(cfg).unwrap();
        let trace = run_protocol(&g, &protocol, 9, &EngineOptions::default()).unwrap();
        let report = audit_trace(&trace);
        assert!(report.passed(), "{:?}", report.failures);
        assert_eq!(report.estimate_violations, 0);
    }

    #[test]
    fn tampered_energy_fails_audit() {
        let g = generate_gnp(32, 0.2, 1).unwrap();
        let protocol = CdProtocol::new(CdConfig::new(32)).unwrap();
        let mut trace = run_protocol(&g, &protocol, 2, &EngineOptions::default()).unwrap();
        trace.energy[0] += 1;
        assert!(!audit_trace(&trace).passed());
    }

    #[test]
    fn tampered_observation_fails_audit() {
        let g = generate_gnp(32, 0.2, 1).unwrap();
        let cfg = NoCdConfig::new(32, g.max_degree().max(1));
        let protocol = NoCdProtocol::new(cfg).unwrap();
        let mut trace = run_protocol(&g, &protocol, 3, &EngineOptions::default()).unwrap();
        // A collision observation is impossible under no-CD.
        let idx = trace
            .rounds
            .iter()
            .position(|r| r.action == RoundAction::Listen)
            .expect("some listen record");
        trace.rounds[idx].obs = Observation::Collision;
        assert!(!audit_trace(&trace).passed());
    }
}
