//! Replayable run records.
//!
//! A [`Trace`] captures everything needed to audit a run without re-executing
//! it: the per-round actions and observations of every awake node (sleeping
//! rounds are implicit), status-transition events, per-phase rank draws and
//! winner/commit sets, the energy ledger, and the effective configuration.
//! Serialization is plain JSON with a stable field order, so re-serializing a
//! deserialized trace is byte-identical.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{ChannelModel, NodeStatus, Observation, RoundAction};
use crate::rng::NodeRng;
use crate::topology::{Graph, GraphDoc};

pub const TRACE_FORMAT_VERSION: u32 = 1;

/// Random rank drawn by a node for one Luby phase, most significant bit first.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Rank {
    words: Vec<u64>,
    len: u32,
}

impl Rank {
    /// Draw `len` fair bits.
    pub fn draw(len: u32, rng: &mut NodeRng) -> Rank {
        use rand::RngCore;
        let n_words = len.div_ceil(64) as usize;
        let mut words: Vec<u64> = (0..n_words).map(|_| rng.next_u64()).collect();
        let rem = len % 64;
        if rem != 0 {
            if let Some(last) = words.last_mut() {
                *last &= !0u64 << (64 - rem);
            }
        }
        Rank { words, len }
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Bit at position `j` (0-based from the most significant end).
    pub fn bit(&self, j: u32) -> bool {
        debug_assert!(j < self.len);
        (self.words[(j / 64) as usize] >> (63 - (j % 64))) & 1 == 1
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.len)
            .map(|j| if self.bit(j) { '1' } else { '0' })
            .collect()
    }

    pub fn from_bit_string(s: &str) -> Option<Rank> {
        let len = s.len() as u32;
        let mut words = vec![0u64; len.div_ceil(64) as usize];
        for (j, c) in s.chars().enumerate() {
            match c {
                '1' => words[j / 64] |= 1u64 << (63 - (j % 64)),
                '0' => {}
                _ => return None,
            }
        }
        Some(Rank { words, len })
    }
}

impl Serialize for Rank {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_bit_string())
    }
}

impl<'de> Deserialize<'de> for Rank {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Rank::from_bit_string(&s).ok_or_else(|| serde::de::Error::custom("invalid rank bit string"))
    }
}

/// One awake node-round: what the node did and what it observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AwakeRecord {
    pub round: u64,
    pub node: u32,
    pub action: RoundAction,
    pub obs: Observation,
}

/// A node changing protocol status at a given round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusEvent {
    pub round: u64,
    pub node: u32,
    pub status: NodeStatus,
}

/// A node that hit the energy cap and was forced asleep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CappedRecord {
    pub node: u32,
    pub round: u64,
}

/// Rank drawn by `node` for the phase this record belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRecord {
    pub node: u32,
    pub rank: Rank,
}

/// Per-Luby-phase bookkeeping: phase span, rank draws, winner set `W_i`, and
/// committed set `C_i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub index: u32,
    pub start: u64,
    pub end: u64,
    pub ranks: Vec<RankRecord>,
    pub winners: Vec<u32>,
    pub committed: Vec<u32>,
}

/// Effective configuration embedded in every trace. Field meaning depends on
/// the protocol; unused knobs are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub protocol: String,
    pub channel: ChannelModel,
    /// Shared size estimate the protocol was configured with (not necessarily
    /// the node count of the graph).
    pub n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_prime: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low_degree: Option<String>,
    pub phase_length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_spec: Option<String>,
}

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("trace parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported trace format version {0}")]
    Version(u32),
}

/// Full record of one protocol run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub format_version: u32,
    pub seed: u64,
    pub config: ConfigSnapshot,
    pub graph_ref: GraphDoc,
    pub round_budget: u64,
    pub rounds_executed: u64,
    /// Sparse per-round records: only awake (transmit/listen) node-rounds.
    pub rounds: Vec<AwakeRecord>,
    pub status_events: Vec<StatusEvent>,
    pub phases: Vec<PhaseRecord>,
    #[serde(rename = "final")]
    pub final_statuses: Vec<NodeStatus>,
    pub energy: Vec<u64>,
    pub capped: Vec<CappedRecord>,
}

impl Trace {
    pub fn node_count(&self) -> u32 {
        self.graph_ref.node_count
    }

    pub fn graph(&self) -> Result<Graph, crate::topology::TopologyError> {
        Graph::try_from(self.graph_ref.clone())
    }

    pub fn max_energy(&self) -> u64 {
        self.energy.iter().copied().max().unwrap_or(0)
    }

    /// Number of Luby phases the run touched.
    pub fn phases_used(&self) -> u32 {
        self.phases.len() as u32
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Trace, TraceIoError> {
        let trace: Trace = serde_json::from_str(text)?;
        if trace.format_version != TRACE_FORMAT_VERSION {
            return Err(TraceIoError::Version(trace.format_version));
        }
        Ok(trace)
    }
}
