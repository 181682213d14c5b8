//! Energy-efficient k-repeated backoff procedures.
//!
//! A backoff spans `k` iterations of a `w = max(1, ceil(log2 Δ))`-round
//! window. In each iteration a sender draws `x ~ Geometric(1/2)` (support
//! 1, 2, 3, ...), clamps `x` to `w`, and transmits only in round `x` of the
//! window — so a sender is awake for exactly `k` rounds. A receiver listens
//! in the first `w_est = max(1, ceil(log2 Δ_est))` rounds of each window
//! until it hears a message, then sleeps for the rest of the whole span.
//! Both roles occupy exactly `k * w` rounds regardless of outcomes, so
//! concurrent callers stay synchronized.
//!
//! These are composable sub-state-machines: protocol machines embed them and
//! forward engine wake-ups/observations. [`BackoffHarness`] wraps them into a
//! standalone protocol for measurement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    ceil_log2, ChannelModel, NextWake, NodeCtx, NodeMachine, NodeStatus, Observation, ProtocolSpec,
    WakeStep,
};
use crate::rng::NodeRng;
use crate::trace::ConfigSnapshot;

#[derive(Debug, Error, PartialEq)]
pub enum BackoffError {
    #[error("iteration count k must be positive")]
    ZeroIterations,
    #[error("degree bounds must satisfy 1 <= delta_est ({delta_est}) <= delta ({delta})")]
    BadDegreeBounds { delta: u32, delta_est: u32 },
}

/// Parameters of one k-repeated backoff call.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackoffParams {
    /// Iteration count.
    pub k: u32,
    /// Global degree bound Δ; sets the window length.
    pub delta: u32,
    /// Receiver's degree estimate Δ_est <= Δ; sets the listen window.
    pub delta_est: u32,
}

impl BackoffParams {
    pub fn new(k: u32, delta: u32) -> Result<Self, BackoffError> {
        Self::with_estimate(k, delta, delta)
    }

    pub fn with_estimate(k: u32, delta: u32, delta_est: u32) -> Result<Self, BackoffError> {
        if k == 0 {
            return Err(BackoffError::ZeroIterations);
        }
        if delta_est == 0 || delta_est > delta {
            return Err(BackoffError::BadDegreeBounds { delta, delta_est });
        }
        Ok(BackoffParams {
            k,
            delta,
            delta_est,
        })
    }

    /// Window length `w = max(1, ceil(log2 delta))`; the clamp keeps Δ = 1
    /// from producing a zero-length window.
    pub fn window(&self) -> u32 {
        backoff_window(self.delta)
    }

    /// Listen window `w_est <= w`.
    pub fn listen_window(&self) -> u32 {
        backoff_window(self.delta_est)
    }

    /// Round span `T_B(k) = k * w` occupied by the procedure.
    pub fn span(&self) -> u64 {
        u64::from(self.k) * u64::from(self.window())
    }
}

/// Window length for a degree bound: `ceil(log2 delta)`, floored at 1 for
/// `delta = 1` and at 2 for `delta >= 2`. The second floor keeps the
/// geometric staggering meaningful: a 1-round window would make two
/// concurrent senders collide in every round, so a listener between them
/// could never hear either.
pub fn backoff_window(delta: u32) -> u32 {
    if delta <= 1 {
        1
    } else {
        ceil_log2(u64::from(delta)).max(2)
    }
}

/// Draw from Geometric(1/2) on {1, 2, ...} and clamp to `w`; the last window
/// round absorbs the tail mass.
pub fn geometric_clamped(rng: &mut NodeRng, w: u32) -> u32 {
    use rand::RngCore;
    let draw = rng.next_u64();
    let x = draw.trailing_zeros() + 1; // all-zeros word maps to 65
    x.min(w)
}

/// Sender side: transmits once per iteration, in the geometrically chosen
/// round; awake for exactly `k` rounds over the `k * w` span.
#[derive(Clone, Debug)]
pub struct SendBackoff {
    base: u64,
    k: u32,
    w: u32,
    iter: u32,
    next_tx: u64,
}

impl SendBackoff {
    pub fn new(base: u64, k: u32, w: u32, rng: &mut NodeRng) -> Self {
        debug_assert!(k >= 1 && w >= 1);
        let x = geometric_clamped(rng, w);
        SendBackoff {
            base,
            k,
            w,
            iter: 0,
            next_tx: base + u64::from(x) - 1,
        }
    }

    /// Round of the next transmission.
    pub fn next_transmit(&self) -> u64 {
        self.next_tx
    }

    /// Advance past the transmission just performed. Returns the next
    /// transmit round, or `None` once all `k` iterations are done.
    pub fn after_transmit(&mut self, rng: &mut NodeRng) -> Option<u64> {
        self.iter += 1;
        if self.iter >= self.k {
            return None;
        }
        let x = geometric_clamped(rng, self.w);
        self.next_tx = self.base + u64::from(self.iter) * u64::from(self.w) + u64::from(x) - 1;
        Some(self.next_tx)
    }

    pub fn span_end(&self) -> u64 {
        self.base + u64::from(self.k) * u64::from(self.w)
    }
}

/// Receiver side: listens through the first `w_est` rounds of each window
/// until a message arrives, then sleeps for the rest of the span.
#[derive(Clone, Debug)]
pub struct RecvBackoff {
    base: u64,
    k: u32,
    w: u32,
    w_est: u32,
    iter: u32,
    pos: u32,
}

/// Next step of a receiver backoff after a listen round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecvStep {
    ListenAt(u64),
    Done { heard: bool },
}

impl RecvBackoff {
    pub fn new(base: u64, k: u32, w: u32, w_est: u32) -> Self {
        debug_assert!(k >= 1 && w >= 1 && (1..=w).contains(&w_est));
        RecvBackoff {
            base,
            k,
            w,
            w_est,
            iter: 0,
            pos: 0,
        }
    }

    /// Round of the first listen (the span base).
    pub fn first_listen(&self) -> u64 {
        self.base
    }

    /// Feed the result of the listen round just performed: `got_message` is
    /// whether a message (exactly one transmitting neighbor) was heard.
    pub fn on_listen_result(&mut self, got_message: bool) -> RecvStep {
        if got_message {
            return RecvStep::Done { heard: true };
        }
        self.pos += 1;
        if self.pos < self.w_est {
            let next = self.base + u64::from(self.iter) * u64::from(self.w) + u64::from(self.pos);
            return RecvStep::ListenAt(next);
        }
        self.pos = 0;
        self.iter += 1;
        if self.iter < self.k {
            RecvStep::ListenAt(self.base + u64::from(self.iter) * u64::from(self.w))
        } else {
            RecvStep::Done { heard: false }
        }
    }

    pub fn span_end(&self) -> u64 {
        self.base + u64::from(self.k) * u64::from(self.w)
    }
}

/// Role a node plays in a [`BackoffHarness`] run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackoffRole {
    Sender,
    Receiver,
    Idle,
}

/// Standalone protocol wrapping one backoff call per node, for measuring the
/// primitives in isolation: receivers end with status `Win` if they heard a
/// message and `Lose` otherwise; senders stay `Undecided`.
#[derive(Clone, Debug)]
pub struct BackoffHarness {
    pub roles: Vec<BackoffRole>,
    pub params: BackoffParams,
    pub channel: ChannelModel,
}

impl BackoffHarness {
    pub fn new(roles: Vec<BackoffRole>, params: BackoffParams) -> Self {
        BackoffHarness {
            roles,
            params,
            channel: ChannelModel::NoCd,
        }
    }
}

pub enum HarnessNode {
    Sender(Option<SendBackoff>, BackoffParams),
    Receiver(Option<RecvBackoff>, BackoffParams),
    Idle,
}

impl NodeMachine for HarnessNode {
    fn on_wake(&mut self, round: u64, ctx: &mut NodeCtx<'_>) -> WakeStep {
        match self {
            HarnessNode::Sender(sub, params) => {
                let sub = sub
                    .get_or_insert_with(|| SendBackoff::new(0, params.k, params.window(), ctx.rng));
                if round == sub.next_transmit() {
                    WakeStep::Transmit
                } else {
                    WakeStep::Sleep(NextWake::At(sub.next_transmit()))
                }
            }
            HarnessNode::Receiver(sub, params) => {
                let _ = sub.get_or_insert_with(|| {
                    RecvBackoff::new(0, params.k, params.window(), params.listen_window())
                });
                WakeStep::Listen
            }
            HarnessNode::Idle => WakeStep::Sleep(NextWake::Never),
        }
    }

    fn on_observe(&mut self, _round: u64, obs: Observation, ctx: &mut NodeCtx<'_>) -> NextWake {
        match self {
            HarnessNode::Sender(sub, _) => match sub.as_mut().unwrap().after_transmit(ctx.rng) {
                Some(next) => NextWake::At(next),
                None => NextWake::Never,
            },
            HarnessNode::Receiver(sub, _) => {
                match sub
                    .as_mut()
                    .unwrap()
                    .on_listen_result(obs == Observation::Message)
                {
                    RecvStep::ListenAt(next) => NextWake::At(next),
                    RecvStep::Done { heard } => {
                        ctx.set_status(if heard {
                            NodeStatus::Win
                        } else {
                            NodeStatus::Lose
                        });
                        NextWake::Never
                    }
                }
            }
            HarnessNode::Idle => unreachable!("idle nodes never act"),
        }
    }
}

impl ProtocolSpec for BackoffHarness {
    type Node = HarnessNode;

    fn make_node(&self, node: u32) -> HarnessNode {
        match self.roles[node as usize] {
            BackoffRole::Sender => HarnessNode::Sender(None, self.params),
            BackoffRole::Receiver => HarnessNode::Receiver(None, self.params),
            BackoffRole::Idle => HarnessNode::Idle,
        }
    }

    fn round_budget(&self) -> u64 {
        self.params.span()
    }

    fn phase_length(&self) -> u64 {
        self.params.span()
    }

    fn snapshot(&self) -> ConfigSnapshot {
        ConfigSnapshot {
            protocol: "backoff-harness".into(),
            channel: self.channel,
            n: self.roles.len() as u32,
            delta: Some(self.params.delta),
            c: None,
            beta: None,
            kappa: None,
            c_prime: Some(self.params.k),
            low_degree: None,
            phase_length: self.params.span(),
            cap: None,
            mode: None,
            graph_spec: None,
        }
    }
}
