//! Staged client/server state machines for masked aggregation.
//!
//! Two variants run over the same machinery: plain four-round secure
//! aggregation (semi-honest), and the six-stage integration that adds
//! excess-noise enforcement plus, in malicious mode, a consistency check and
//! dropout-outcome verification. Survivor sets nest `U1 ⊇ U2 ⊇ ... ⊇ U6`,
//! each gated on the threshold `t`.

pub mod client;
pub mod messages;
pub mod round;
pub mod server;
pub mod wire;

pub use client::{ClientCounters, ClientSession};
pub use messages::{RoundMessage, RosterEntry, SharePayload, Stage};
pub use round::{
    run_round, DeliveryOrder, DropStage, RoundInput, RoundOptions, RoundResult, ServerAdversary,
    SurvivorSets,
};
pub use server::{SeedLossPolicy, ServerSession};

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::FixedPointCodec;
use crate::crypto::{sig_gen, NoiseDistribution, SigKeyPair, SigPublicKey};
use crate::field::Field;
use crate::noise::NoisePlan;

/// Client identifier; doubles as the Shamir evaluation index, so it is
/// always nonzero.
pub type ClientId = u64;
/// Training round index, bound into every signature.
pub type RoundIndex = u64;

/// Adversary model the session enforces checks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreatMode {
    SemiHonest,
    Malicious,
}

/// Which protocol runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolVariant {
    /// Four-round masked aggregation without noise enforcement.
    SecaggPlain,
    /// Masked aggregation with add-then-remove noise enforcement.
    SecaggXnoise,
}

/// Everything both sides agree on before a round starts.
#[derive(Debug, Clone)]
pub struct ProtocolParams {
    pub variant: ProtocolVariant,
    pub mode: ThreatMode,
    /// The sampled client set `U`.
    pub sampled: BTreeSet<ClientId>,
    /// Threshold `t`: minimum survivors at every gate.
    pub threshold: u32,
    /// Update length `d`.
    pub vector_len: usize,
    pub codec: FixedPointCodec,
    pub field: Field,
    /// Noise plan; required for the noise-enforcing variant.
    pub noise: Option<NoisePlan>,
    pub noise_distribution: NoiseDistribution,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), AbortReason> {
        if self.sampled.is_empty() || self.sampled.contains(&0) {
            return Err(AbortReason::InvalidParams(
                "sampled set must be non-empty with nonzero ids".into(),
            ));
        }
        if self.threshold == 0 || self.threshold as usize > self.sampled.len() {
            return Err(AbortReason::InvalidParams(format!(
                "threshold {} outside [1, {}]",
                self.threshold,
                self.sampled.len()
            )));
        }
        match (self.variant, &self.noise) {
            (ProtocolVariant::SecaggXnoise, None) => {
                return Err(AbortReason::InvalidParams(
                    "noise plan required for the noise-enforcing variant".into(),
                ))
            }
            (ProtocolVariant::SecaggXnoise, Some(plan)) => {
                if plan.u_size as usize != self.sampled.len() || plan.threshold != self.threshold {
                    return Err(AbortReason::InvalidParams(
                        "noise plan does not match sampled set or threshold".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Dropout tolerance `T`; zero for the plain variant.
    pub fn dropout_tolerance(&self) -> u32 {
        self.noise.map(|p| p.dropout_tolerance).unwrap_or(0)
    }
}

/// Why a session stopped. Aborts are terminal for the session that raises
/// them.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum AbortReason {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("stage {stage:?} collected {got} messages, need {need}")]
    InsufficientParticipants { stage: String, got: usize, need: u32 },
    #[error("{dropped} dropouts exceed tolerance {tolerance}; aborting instead of under-noising")]
    ToleranceExceeded { dropped: u32, tolerance: u32 },
    #[error("key roster rejected: {0}")]
    RosterInvalid(String),
    #[error("dropout outcome rejected: {0}")]
    DropoutOutcomeInvalid(String),
    #[error("consistency check failed: {0}")]
    ConsistencyFailure(String),
    #[error("ciphertext from {from} failed to authenticate")]
    DecryptionFailure { from: ClientId },
    #[error("secure-aggregation safety rule violated: {0}")]
    SafetyRule(String),
    #[error("unmask request rejected: {0}")]
    UnmaskRequestInvalid(String),
    #[error("seed-share request rejected: {0}")]
    SeedRequestInvalid(String),
    #[error("noise seed reconstruction failed: {0}")]
    SeedReconstruction(String),
    #[error("session already {state}, cannot run {requested}")]
    StageOrder { state: String, requested: String },
    #[error("protocol internals: {0}")]
    Internal(String),
}

/// The simulated PKI: every participant's signature verification key.
#[derive(Debug, Clone, Default)]
pub struct SigDirectory {
    keys: BTreeMap<ClientId, SigPublicKey>,
}

impl SigDirectory {
    pub fn lookup(&self, id: ClientId) -> Option<&SigPublicKey> {
        self.keys.get(&id)
    }

    /// Generates persistent signing keys for a client population and the
    /// directory distributing their public halves.
    pub fn generate<R: Rng>(
        ids: &BTreeSet<ClientId>,
        rng: &mut R,
    ) -> (BTreeMap<ClientId, SigKeyPair>, SigDirectory) {
        let mut signing = BTreeMap::new();
        let mut keys = BTreeMap::new();
        for &id in ids {
            let pair = sig_gen(rng);
            keys.insert(id, pair.public());
            signing.insert(id, pair);
        }
        (signing, SigDirectory { keys })
    }
}
