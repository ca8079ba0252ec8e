//! Simulated network: per-stage message delivery with deterministic
//! ordering, optional seeded permutation, per-message delay accounting, and
//! loss only through explicit dropout. Every payload round-trips through the
//! canonical wire encoding, so the byte format is exercised on every
//! delivery.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::field::Field;
use crate::protocol::wire::{Reader, WireError, Writer};
use crate::protocol::{ClientId, RoundIndex, RoundMessage, Stage};

/// Order in which one stage's messages reach their recipient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryOrder {
    /// Ascending sender id: the reproducibility reference.
    #[default]
    BySender,
    /// Seeded random permutation within the stage.
    Permuted,
}

/// An addressed message: every delivery carries sender, receiver, round,
/// and stage alongside the payload. Receiver 0 denotes the server.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub round: RoundIndex,
    pub stage: Stage,
    pub sender: ClientId,
    pub receiver: ClientId,
    pub message: RoundMessage,
}

impl Envelope {
    /// Canonical envelope bytes: round, stage, sender, receiver, then the
    /// length-prefixed message encoding.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u64(self.round);
        w.put_u8(self.stage as u8);
        w.put_u64(self.sender);
        w.put_u64(self.receiver);
        w.put_bytes(&self.message.encode());
        w.finish()
    }

    pub fn decode(bytes: &[u8], field: &Field) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let round = r.take_u64()?;
        let stage = Stage::from_wire(r.take_u8()?)?;
        let sender = r.take_u64()?;
        let receiver = r.take_u64()?;
        let message = RoundMessage::decode(r.take_bytes()?, field)?;
        r.finish()?;
        Ok(Envelope {
            round,
            stage,
            sender,
            receiver,
            message,
        })
    }
}

/// The server's address on the simulated network.
pub const SERVER: ClientId = 0;

/// A lossless, ordered, simulated network.
pub struct SimNetwork {
    order: DeliveryOrder,
    rng: ChaCha20Rng,
    delay_per_message: f64,
    field: Field,
    dropped: BTreeSet<ClientId>,
    elapsed: f64,
}

impl SimNetwork {
    pub fn new(order: DeliveryOrder, seed: u64, delay_per_message: f64, field: Field) -> Self {
        SimNetwork {
            order,
            rng: ChaCha20Rng::seed_from_u64(seed),
            delay_per_message,
            field,
            dropped: BTreeSet::new(),
            elapsed: 0.0,
        }
    }

    /// Marks a client dropped: none of its messages are delivered from now
    /// on. Messages are never corrupted or silently lost otherwise.
    pub fn drop_client(&mut self, id: ClientId) {
        self.dropped.insert(id);
    }

    pub fn is_dropped(&self, id: ClientId) -> bool {
        self.dropped.contains(&id)
    }

    /// Simulated seconds spent in delivery so far.
    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    /// Delivers one stage's batch: filters dropped senders, serializes each
    /// envelope through the canonical encoding, and hands back the batch in
    /// the configured order.
    pub fn deliver_stage(&mut self, mut batch: Vec<Envelope>) -> Vec<Envelope> {
        batch.retain(|e| !self.dropped.contains(&e.sender));
        batch.sort_by_key(|e| (e.sender, e.receiver));
        if self.order == DeliveryOrder::Permuted {
            batch.shuffle(&mut self.rng);
        }
        if !batch.is_empty() && self.delay_per_message > 0.0 {
            // deliveries within a stage run in parallel; the stage costs one
            // delay, and the batch is complete by the stage deadline
            self.elapsed += self.delay_per_message;
        }
        batch
            .into_iter()
            .map(|e| {
                let bytes = e.encode();
                Envelope::decode(&bytes, &self.field).expect("canonical encoding round-trips")
            })
            .collect()
    }
}
