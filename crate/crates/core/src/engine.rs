//! Round-driven simulation engine.
//!
//! The engine advances a global round clock over per-node state machines.
//! Nodes are only touched in rounds where they are awake: a machine returns
//! the round of its next wake-up, and the engine keeps a priority queue of
//! pending wake-ups, so long all-asleep stretches cost nothing. Energy is
//! charged per awake round (transmit or listen); sleeping is free. All nodes
//! wake up simultaneously at round 0.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{node_rng, NodeRng};
use crate::topology::Graph;
use crate::trace::{
    AwakeRecord, CappedRecord, ConfigSnapshot, PhaseRecord, Rank, RankRecord, StatusEvent, Trace,
    TRACE_FORMAT_VERSION,
};

/// Channel semantics for resolving simultaneous transmissions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelModel {
    /// Listeners distinguish silence, a single message, and a collision.
    Cd,
    /// Listeners cannot distinguish silence from collisions.
    NoCd,
    /// Listeners hear a beep iff at least one neighbor transmits.
    Beep,
}

/// What a node does in one round. Exactly one action per round; transmitting
/// and listening are mutually exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundAction {
    /// Send the unary symbol "1". Messages carry no payload.
    Transmit,
    Listen,
    Sleep,
}

/// What a node perceives at the end of a round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observation {
    Silence,
    Message,
    Collision,
    #[serde(rename = "beep")]
    BeepHeard,
    /// Transmitting and sleeping nodes observe nothing.
    Nothing,
}

/// Protocol status of a node. `Win`, `Lose`, and `Commit` are intra-phase
/// states of the no-CD protocol; final decisions are `InMis` / `OutMis`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeStatus {
    Undecided,
    Win,
    Lose,
    Commit,
    InMis,
    OutMis,
}

impl NodeStatus {
    /// A decided node has irrevocably committed to being in or out of the MIS.
    pub fn decided(self) -> bool {
        matches!(self, NodeStatus::InMis | NodeStatus::OutMis)
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("action vector has length {got}, expected {expected}")]
    ActionVectorLength { expected: usize, got: usize },
    #[error("node {node} violated the schedule at round {round}: {message}")]
    ScheduleViolation {
        node: u32,
        round: u64,
        message: String,
    },
}

/// Observation of a listener with `transmitting_neighbors` transmitting
/// neighbors under the given channel model.
#[inline]
pub fn listener_observation(transmitting_neighbors: u32, model: ChannelModel) -> Observation {
    match model {
        ChannelModel::Cd => match transmitting_neighbors {
            0 => Observation::Silence,
            1 => Observation::Message,
            _ => Observation::Collision,
        },
        ChannelModel::NoCd => match transmitting_neighbors {
            1 => Observation::Message,
            _ => Observation::Silence,
        },
        ChannelModel::Beep => match transmitting_neighbors {
            0 => Observation::Silence,
            _ => Observation::BeepHeard,
        },
    }
}

/// Resolve one synchronous round: per-node observations given per-node
/// actions. Listeners observe according to the channel model; transmitting
/// and sleeping nodes observe [`Observation::Nothing`].
pub fn resolve_round(
    g: &Graph,
    actions: &[RoundAction],
    model: ChannelModel,
) -> Result<Vec<Observation>, EngineError> {
    let n = g.node_count() as usize;
    if actions.len() != n {
        return Err(EngineError::ActionVectorLength {
            expected: n,
            got: actions.len(),
        });
    }
    let mut counts = vec![0u32; n];
    for (node, action) in actions.iter().enumerate() {
        if *action == RoundAction::Transmit {
            for &nb in g.neighbors(node as u32) {
                counts[nb as usize] += 1;
            }
        }
    }
    Ok(actions
        .iter()
        .enumerate()
        .map(|(node, action)| match action {
            RoundAction::Listen => listener_observation(counts[node], model),
            _ => Observation::Nothing,
        })
        .collect())
}

/// Per-node awake-round counter with an optional engine-enforced cap.
#[derive(Clone, Debug)]
pub struct EnergyLedger {
    counts: Vec<u64>,
    cap: Option<u64>,
}

impl EnergyLedger {
    pub fn new(node_count: u32, cap: Option<u64>) -> Self {
        EnergyLedger {
            counts: vec![0; node_count as usize],
            cap,
        }
    }

    pub fn charge(&mut self, node: u32) {
        self.counts[node as usize] += 1;
    }

    pub fn get(&self, node: u32) -> u64 {
        self.counts[node as usize]
    }

    pub fn cap(&self) -> Option<u64> {
        self.cap
    }

    /// True once the node has spent its whole budget and must sleep forever.
    pub fn exhausted(&self, node: u32) -> bool {
        self.cap
            .is_some_and(|cap| self.counts[node as usize] >= cap)
    }

    pub fn into_counts(self) -> Vec<u64> {
        self.counts
    }
}

/// Action chosen by a machine at one of its scheduled wake-up rounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WakeStep {
    Transmit,
    Listen,
    /// Stay asleep after all; reschedule (or halt forever).
    Sleep(NextWake),
}

/// When the node wants to be woken next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NextWake {
    At(u64),
    /// Sleep forever; the machine will never act again.
    Never,
}

/// Per-node protocol state machine, driven by the engine's round clock.
pub trait NodeMachine {
    /// Called at a round the machine asked to be woken at. Returning an
    /// awake action means the node acts this round and will receive the
    /// round's observation via [`NodeMachine::on_observe`].
    fn on_wake(&mut self, round: u64, ctx: &mut NodeCtx<'_>) -> WakeStep;

    /// Observation delivered for a round in which the node was awake.
    /// Returns the next wake-up round (strictly in the future).
    fn on_observe(&mut self, round: u64, obs: Observation, ctx: &mut NodeCtx<'_>) -> NextWake;
}

/// A runnable protocol: a factory of per-node machines plus schedule facts.
pub trait ProtocolSpec {
    type Node: NodeMachine;

    fn make_node(&self, node: u32) -> Self::Node;

    /// Hard bound on the number of rounds; wake-ups past it are dropped.
    fn round_budget(&self) -> u64;

    /// Length of one Luby phase in rounds (1 for unphased protocols).
    fn phase_length(&self) -> u64;

    fn snapshot(&self) -> ConfigSnapshot;

    /// Whether per-phase winner sets are identified by `Win` status events
    /// (no-CD competition) rather than `InMis` events.
    fn uses_win_status(&self) -> bool {
        false
    }
}

/// Engine knobs independent of the protocol.
#[derive(Clone, Copy, Debug)]
pub struct EngineOptions {
    /// Energy cap `b`: a node that has spent `b` awake rounds is forced to
    /// sleep forever; if still undecided it joins the MIS and is flagged.
    pub cap: Option<u64>,
    /// Stop as soon as every node is decided (omniscient early exit used by
    /// experiment mode). Strict mode disables this and runs the full budget.
    pub stop_on_global_decision: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            cap: None,
            stop_on_global_decision: true,
        }
    }
}

/// State shared between the engine and node callbacks.
struct RunState {
    statuses: Vec<NodeStatus>,
    events: Vec<StatusEvent>,
    ranks: Vec<(u32, u32, Rank)>,
    undecided: u32,
    phase_length: u64,
}

/// Handle through which a machine reads and updates its own protocol state.
pub struct NodeCtx<'a> {
    pub rng: &'a mut NodeRng,
    node: u32,
    round: u64,
    state: &'a mut RunState,
}

impl NodeCtx<'_> {
    pub fn node(&self) -> u32 {
        self.node
    }

    pub fn status(&self) -> NodeStatus {
        self.state.statuses[self.node as usize]
    }

    /// Transition to `status`, recording a trace event. No-op if unchanged.
    /// Decisions are irrevocable: decided nodes never change status again.
    pub fn set_status(&mut self, status: NodeStatus) {
        let current = &mut self.state.statuses[self.node as usize];
        if *current == status {
            return;
        }
        debug_assert!(
            !current.decided(),
            "decided node {} changed status",
            self.node
        );
        if !current.decided() && status.decided() {
            self.state.undecided -= 1;
        }
        *current = status;
        self.state.events.push(StatusEvent {
            round: self.round,
            node: self.node,
            status,
        });
    }

    /// Record the rank drawn for the current Luby phase.
    pub fn record_rank(&mut self, rank: Rank) {
        let phase = (self.round / self.state.phase_length) as u32;
        self.state.ranks.push((phase, self.node, rank));
    }
}

/// Run a protocol on a graph under one channel model, producing a full trace.
/// The run is a pure function of `(g, protocol, seed, opts)`.
pub fn run_protocol<P: ProtocolSpec>(
    g: &Graph,
    protocol: &P,
    seed: u64,
    opts: &EngineOptions,
) -> Result<Trace, EngineError> {
    let n = g.node_count();
    let snapshot = {
        let mut s = protocol.snapshot();
        s.cap = opts.cap;
        s
    };
    let channel = snapshot.channel;
    let budget = protocol.round_budget();
    let phase_length = protocol.phase_length().max(1);

    let mut machines: Vec<P::Node> = (0..n).map(|v| protocol.make_node(v)).collect();
    let mut rngs: Vec<NodeRng> = (0..n).map(|v| node_rng(seed, v)).collect();
    let mut state = RunState {
        statuses: vec![NodeStatus::Undecided; n as usize],
        events: Vec::new(),
        ranks: Vec::new(),
        undecided: n,
        phase_length,
    };
    let mut ledger = EnergyLedger::new(n, opts.cap);
    let mut terminated = vec![false; n as usize];
    let mut capped: Vec<CappedRecord> = Vec::new();

    let mut wake: BinaryHeap<Reverse<(u64, u32)>> = (0..n).map(|v| Reverse((0, v))).collect();
    let mut records: Vec<AwakeRecord> = Vec::new();
    // Scratch buffers reused across rounds.
    let mut awake: Vec<(u32, RoundAction)> = Vec::new();
    let mut counts = vec![0u32; n as usize];
    let mut touched: Vec<u32> = Vec::new();

    let mut rounds_executed = 0u64;

    while let Some(&Reverse((round, _))) = wake.peek() {
        if round >= budget {
            break;
        }
        awake.clear();
        let mut transmitters = 0usize;
        while let Some(&Reverse((r, node))) = wake.peek() {
            if r != round {
                break;
            }
            wake.pop();
            if terminated[node as usize] {
                continue;
            }
            if ledger.exhausted(node) {
                // Forced asleep for the rest of the run; an undecided node
                // defaults to joining the MIS (a silent history is
                // indistinguishable from being isolated).
                terminated[node as usize] = true;
                capped.push(CappedRecord { node, round });
                let mut ctx = NodeCtx {
                    rng: &mut rngs[node as usize],
                    node,
                    round,
                    state: &mut state,
                };
                if !ctx.status().decided() {
                    ctx.set_status(NodeStatus::InMis);
                }
                continue;
            }
            let mut ctx = NodeCtx {
                rng: &mut rngs[node as usize],
                node,
                round,
                state: &mut state,
            };
            match machines[node as usize].on_wake(round, &mut ctx) {
                WakeStep::Transmit => {
                    transmitters += 1;
                    awake.push((node, RoundAction::Transmit));
                }
                WakeStep::Listen => awake.push((node, RoundAction::Listen)),
                WakeStep::Sleep(NextWake::At(next)) => {
                    if next <= round {
                        return Err(EngineError::ScheduleViolation {
                            node,
                            round,
                            message: format!("rescheduled wake-up at {next} is not in the future"),
                        });
                    }
                    if next < budget {
                        wake.push(Reverse((next, node)));
                    }
                }
                WakeStep::Sleep(NextWake::Never) => {}
            }
        }
        rounds_executed = round + 1;

        if !awake.is_empty() {
            if transmitters > 0 {
                for &(node, action) in &awake {
                    if action == RoundAction::Transmit {
                        for &nb in g.neighbors(node) {
                            if counts[nb as usize] == 0 {
                                touched.push(nb);
                            }
                            counts[nb as usize] += 1;
                        }
                    }
                }
            }
            for &(node, action) in &awake {
                let obs = match action {
                    RoundAction::Listen => listener_observation(counts[node as usize], channel),
                    _ => Observation::Nothing,
                };
                ledger.charge(node);
                records.push(AwakeRecord {
                    round,
                    node,
                    action,
                    obs,
                });
                let mut ctx = NodeCtx {
                    rng: &mut rngs[node as usize],
                    node,
                    round,
                    state: &mut state,
                };
                match machines[node as usize].on_observe(round, obs, &mut ctx) {
                    NextWake::At(next) => {
                        if next <= round {
                            return Err(EngineError::ScheduleViolation {
                                node,
                                round,
                                message: format!(
                                    "next wake-up at {next} is not after round {round}"
                                ),
                            });
                        }
                        if next < budget {
                            wake.push(Reverse((next, node)));
                        }
                    }
                    NextWake::Never => terminated[node as usize] = true,
                }
            }
            for &node in &touched {
                counts[node as usize] = 0;
            }
            touched.clear();
        }

        if opts.stop_on_global_decision && state.undecided == 0 {
            break;
        }
    }

    let phases = build_phase_records(
        &state.events,
        &state.ranks,
        rounds_executed,
        phase_length,
        protocol.uses_win_status(),
    );

    Ok(Trace {
        format_version: TRACE_FORMAT_VERSION,
        seed,
        config: snapshot,
        graph_ref: g.clone().into(),
        round_budget: budget,
        rounds_executed,
        rounds: records,
        status_events: state.events,
        phases,
        final_statuses: state.statuses,
        energy: ledger.into_counts(),
        capped,
    })
}

fn build_phase_records(
    events: &[StatusEvent],
    ranks: &[(u32, u32, Rank)],
    rounds_executed: u64,
    phase_length: u64,
    use_win: bool,
) -> Vec<PhaseRecord> {
    let phase_count = rounds_executed.div_ceil(phase_length) as u32;
    let mut phases: Vec<PhaseRecord> = (0..phase_count)
        .map(|i| PhaseRecord {
            index: i,
            start: u64::from(i) * phase_length,
            end: ((u64::from(i) + 1) * phase_length).min(rounds_executed),
            ranks: Vec::new(),
            winners: Vec::new(),
            committed: Vec::new(),
        })
        .collect();
    for &(phase, node, ref rank) in ranks {
        if let Some(p) = phases.get_mut(phase as usize) {
            p.ranks.push(RankRecord {
                node,
                rank: rank.clone(),
            });
        }
    }
    let winner_status = if use_win {
        NodeStatus::Win
    } else {
        NodeStatus::InMis
    };
    for ev in events {
        let phase = (ev.round / phase_length) as usize;
        let Some(p) = phases.get_mut(phase) else {
            continue;
        };
        if ev.status == winner_status {
            p.winners.push(ev.node);
        }
        if ev.status == NodeStatus::Commit {
            p.committed.push(ev.node);
        }
    }
    phases
}

/// Integer `ceil(log2(x))` for `x >= 1`.
pub fn ceil_log2(x: u64) -> u32 {
    debug_assert!(x >= 1);
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// `ceil(mult * log2(n))` for `n >= 1`. Exact for powers of two.
pub fn ceil_mul_log2(mult: u32, n: u64) -> u32 {
    debug_assert!(n >= 1);
    if n <= 1 {
        return 0;
    }
    if n.is_power_of_two() {
        return mult * n.trailing_zeros();
    }
    (f64::from(mult) * (n as f64).log2()).ceil() as u32
}
