//! Server-side session: collects each stage's messages, gates every
//! survivor set on the threshold, unmasks the aggregate, and removes
//! excess noise from disclosed or reconstructed seeds.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::crypto::{ka_agree, prg_expand, prg_sample_noise, KaSecretKey, PrgSeed, Signature};
use crate::field::FieldElement;
use crate::shamir::{reconstruct, SecretShare};

use super::messages::{RosterEntry, RoundMessage};
use super::{AbortReason, ClientId, ProtocolParams, ProtocolVariant, RoundIndex, ThreatMode};

/// What to do when stage-5 collection falls below the threshold and the
/// excess noise cannot be fully removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedLossPolicy {
    /// Abort the round; no aggregate is released.
    Abort,
    /// Release the under-removed aggregate but flag it as privacy-overspent.
    FlagOverspend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ServerState {
    AwaitingAdvertisements,
    AwaitingShares,
    AwaitingMasked,
    AwaitingConsistency,
    AwaitingUnmask,
    AwaitingSeedShares,
    Done,
    Aborted,
}

/// The nested survivor sets of one round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurvivorSetsInner {
    pub u1: Vec<ClientId>,
    pub u2: Vec<ClientId>,
    pub u3: Vec<ClientId>,
    pub u4: Vec<ClientId>,
    pub u5: Vec<ClientId>,
    pub u6: Vec<ClientId>,
}

/// The server's view of a round.
pub struct ServerSession {
    round: RoundIndex,
    params: ProtocolParams,
    policy: SeedLossPolicy,
    state: ServerState,
    roster: BTreeMap<ClientId, RosterEntry>,
    u1: BTreeSet<ClientId>,
    u2: BTreeSet<ClientId>,
    u3: BTreeSet<ClientId>,
    u4: BTreeSet<ClientId>,
    u5: BTreeSet<ClientId>,
    u6: BTreeSet<ClientId>,
    masked_inputs: BTreeMap<ClientId, Vec<u64>>,
    round_signatures: BTreeMap<ClientId, Signature>,
    consistency_signatures: BTreeMap<ClientId, Signature>,
    /// Per dropped client: shares of its masking secret key, by holder.
    key_share_box: BTreeMap<ClientId, Vec<SecretShare>>,
    /// Per survivor: shares of its self-mask seed, by holder.
    mask_share_box: BTreeMap<ClientId, Vec<SecretShare>>,
    /// Seeds disclosed directly in unmask responses.
    direct_seeds: BTreeMap<ClientId, BTreeMap<u32, FieldElement>>,
    /// Shares of missing clients' seeds, keyed by (subject, component).
    seed_share_box: BTreeMap<(ClientId, u32), Vec<SecretShare>>,
    unmasked: Option<Vec<u64>>,
    aggregate: Option<Vec<u64>>,
    overspent: bool,
}

impl ServerSession {
    pub fn new(
        round: RoundIndex,
        params: ProtocolParams,
        policy: SeedLossPolicy,
    ) -> Result<Self, AbortReason> {
        params.validate()?;
        Ok(ServerSession {
            round,
            params,
            policy,
            state: ServerState::AwaitingAdvertisements,
            roster: BTreeMap::new(),
            u1: BTreeSet::new(),
            u2: BTreeSet::new(),
            u3: BTreeSet::new(),
            u4: BTreeSet::new(),
            u5: BTreeSet::new(),
            u6: BTreeSet::new(),
            masked_inputs: BTreeMap::new(),
            round_signatures: BTreeMap::new(),
            consistency_signatures: BTreeMap::new(),
            key_share_box: BTreeMap::new(),
            mask_share_box: BTreeMap::new(),
            direct_seeds: BTreeMap::new(),
            seed_share_box: BTreeMap::new(),
            unmasked: None,
            aggregate: None,
            overspent: false,
        })
    }

    pub fn round(&self) -> RoundIndex {
        self.round
    }

    pub fn survivor_sets(&self) -> SurvivorSetsInner {
        SurvivorSetsInner {
            u1: self.u1.iter().copied().collect(),
            u2: self.u2.iter().copied().collect(),
            u3: self.u3.iter().copied().collect(),
            u4: self.u4.iter().copied().collect(),
            u5: self.u5.iter().copied().collect(),
            u6: self.u6.iter().copied().collect(),
        }
    }

    /// Final aggregate (post noise removal for the enforcing variant).
    pub fn aggregate(&self) -> Option<&Vec<u64>> {
        self.aggregate.as_ref()
    }

    /// Aggregate right after unmasking, before any noise removal. Equals
    /// the modular sum of the survivors' perturbed updates.
    pub fn unmasked_aggregate(&self) -> Option<&Vec<u64>> {
        self.unmasked.as_ref()
    }

    pub fn overspent(&self) -> bool {
        self.overspent
    }

    fn expect(&self, state: ServerState, requested: &str) -> Result<(), AbortReason> {
        if self.state == state {
            Ok(())
        } else {
            Err(AbortReason::StageOrder {
                state: format!("{:?}", self.state),
                requested: requested.to_string(),
            })
        }
    }

    fn gate(&mut self, stage: &str, got: usize) -> Result<(), AbortReason> {
        if got < self.params.threshold as usize {
            self.state = ServerState::Aborted;
            Err(AbortReason::InsufficientParticipants {
                stage: stage.into(),
                got,
                need: self.params.threshold,
            })
        } else {
            Ok(())
        }
    }

    /// Stage 0: fix `U1` and build the key roster broadcast.
    pub fn collect_advertisements(
        &mut self,
        msgs: BTreeMap<ClientId, RoundMessage>,
    ) -> Result<RoundMessage, AbortReason> {
        self.expect(ServerState::AwaitingAdvertisements, "collect_advertisements")?;
        self.gate("advertise", msgs.len())?;
        let mut entries = Vec::with_capacity(msgs.len());
        for (id, msg) in msgs {
            let RoundMessage::AdvertiseKeys {
                encryption_key,
                masking_key,
                signature,
            } = msg
            else {
                self.state = ServerState::Aborted;
                return Err(AbortReason::Internal(format!(
                    "client {id} sent a non-advertisement in stage 0"
                )));
            };
            entries.push(RosterEntry {
                id,
                encryption_key,
                masking_key,
                signature,
            });
        }
        self.u1 = entries.iter().map(|e| e.id).collect();
        self.roster = entries.iter().map(|e| (e.id, e.clone())).collect();
        self.state = ServerState::AwaitingShares;
        Ok(RoundMessage::KeyRoster { entries })
    }

    /// Stage 1: fix `U2` and route each ciphertext to its addressee.
    pub fn collect_shares(
        &mut self,
        msgs: BTreeMap<ClientId, RoundMessage>,
    ) -> Result<BTreeMap<ClientId, RoundMessage>, AbortReason> {
        self.expect(ServerState::AwaitingShares, "collect_shares")?;
        self.gate("share_keys", msgs.len())?;
        let senders: BTreeSet<ClientId> = msgs.keys().copied().collect();
        let mut outbox: BTreeMap<ClientId, Vec<(ClientId, crate::crypto::Ciphertext)>> =
            senders.iter().map(|&id| (id, Vec::new())).collect();
        for (id, msg) in msgs {
            let RoundMessage::EncryptedShares { ciphertexts } = msg else {
                self.state = ServerState::Aborted;
                return Err(AbortReason::Internal(format!(
                    "client {id} sent a non-share message in stage 1"
                )));
            };
            for (receiver, ct) in ciphertexts {
                if ct.sender != id {
                    self.state = ServerState::Aborted;
                    return Err(AbortReason::Internal(format!(
                        "client {id} forged sender metadata"
                    )));
                }
                // only route among the stage-1 survivors
                if let Some(box_) = outbox.get_mut(&receiver) {
                    box_.push((id, ct));
                }
            }
        }
        self.u2 = senders;
        self.state = ServerState::AwaitingMasked;
        Ok(outbox
            .into_iter()
            .map(|(id, ciphertexts)| (id, RoundMessage::ShareDelivery { ciphertexts }))
            .collect())
    }

    /// Stage 2: fix `U3`, check the dropout tolerance, and announce the
    /// outcome (with every received round signature in malicious mode).
    pub fn collect_masked(
        &mut self,
        msgs: BTreeMap<ClientId, RoundMessage>,
    ) -> Result<RoundMessage, AbortReason> {
        self.expect(ServerState::AwaitingMasked, "collect_masked")?;
        self.gate("masked_input", msgs.len())?;
        for (id, msg) in msgs {
            let RoundMessage::MaskedInput {
                masked,
                round_signature,
            } = msg
            else {
                self.state = ServerState::Aborted;
                return Err(AbortReason::Internal(format!(
                    "client {id} sent a non-input message in stage 2"
                )));
            };
            if masked.len() != self.params.vector_len {
                self.state = ServerState::Aborted;
                return Err(AbortReason::Internal(format!(
                    "client {id} sent a vector of length {}",
                    masked.len()
                )));
            }
            if let Some(sig) = round_signature {
                self.round_signatures.insert(id, sig);
            }
            self.masked_inputs.insert(id, masked);
        }
        self.u3 = self.masked_inputs.keys().copied().collect();
        if self.params.variant == ProtocolVariant::SecaggXnoise {
            let dropped = (self.params.sampled.len() - self.u3.len()) as u32;
            let tolerance = self.params.dropout_tolerance();
            if dropped > tolerance {
                self.state = ServerState::Aborted;
                return Err(AbortReason::ToleranceExceeded { dropped, tolerance });
            }
        }
        let survivors: Vec<ClientId> = self.u3.iter().copied().collect();
        let dropped: Vec<ClientId> = self
            .params
            .sampled
            .difference(&self.u3)
            .copied()
            .collect();
        let round_signatures = if self.params.mode == ThreatMode::Malicious {
            Some(
                self.round_signatures
                    .iter()
                    .map(|(&id, &sig)| (id, sig))
                    .collect(),
            )
        } else {
            None
        };
        self.state = if self.params.mode == ThreatMode::Malicious {
            ServerState::AwaitingConsistency
        } else {
            ServerState::AwaitingUnmask
        };
        Ok(RoundMessage::SurvivorAnnouncement {
            survivors,
            dropped,
            round_signatures,
        })
    }

    /// Stage 3 (malicious mode): fix `U4` from the consistency
    /// acknowledgements and build the unmask request carrying them.
    pub fn collect_consistency(
        &mut self,
        msgs: BTreeMap<ClientId, RoundMessage>,
    ) -> Result<RoundMessage, AbortReason> {
        self.expect(ServerState::AwaitingConsistency, "collect_consistency")?;
        self.gate("consistency", msgs.len())?;
        for (id, msg) in msgs {
            let RoundMessage::ConsistencyAck { signature } = msg else {
                self.state = ServerState::Aborted;
                return Err(AbortReason::Internal(format!(
                    "client {id} sent a non-acknowledgement in stage 3"
                )));
            };
            self.consistency_signatures.insert(id, signature);
        }
        self.u4 = self.consistency_signatures.keys().copied().collect();
        self.state = ServerState::AwaitingUnmask;
        Ok(RoundMessage::UnmaskRequest {
            participants: self.u4.iter().copied().collect(),
            consistency_signatures: Some(
                self.consistency_signatures
                    .iter()
                    .map(|(&id, &sig)| (id, sig))
                    .collect(),
            ),
        })
    }

    /// Semi-honest path: no consistency round, `U4 = U3`.
    pub fn unmask_request(&mut self) -> Result<RoundMessage, AbortReason> {
        self.expect(ServerState::AwaitingUnmask, "unmask_request")?;
        if self.params.mode == ThreatMode::Malicious {
            return Err(AbortReason::Internal(
                "malicious mode builds the unmask request from consistency acks".into(),
            ));
        }
        self.u4 = self.u3.clone();
        Ok(RoundMessage::UnmaskRequest {
            participants: self.u4.iter().copied().collect(),
            consistency_signatures: None,
        })
    }

    /// Stage 4: fix `U5`, reconstruct dropped clients' masking keys and
    /// survivors' self-mask seeds, and unmask the sum. Never reconstructs
    /// both for the same client. Returns the seed-share request when some
    /// survivor vanished before disclosing its seeds.
    pub fn collect_unmask(
        &mut self,
        msgs: BTreeMap<ClientId, RoundMessage>,
    ) -> Result<Option<RoundMessage>, AbortReason> {
        self.expect(ServerState::AwaitingUnmask, "collect_unmask")?;
        if self.params.mode == ThreatMode::Malicious && self.u4.is_empty() {
            self.state = ServerState::Aborted;
            return Err(AbortReason::Internal("unmask before consistency".into()));
        }
        self.gate("unmask", msgs.len())?;
        let responders: BTreeSet<ClientId> = msgs.keys().copied().collect();
        let expected_seed_range: Vec<u32> = if self.params.variant == ProtocolVariant::SecaggXnoise
        {
            let dropped = (self.params.sampled.len() - self.u3.len()) as u32;
            crate::noise::removal_indices(dropped, self.params.dropout_tolerance()).collect()
        } else {
            Vec::new()
        };
        for (id, msg) in msgs {
            let RoundMessage::UnmaskResponse {
                key_shares,
                mask_shares,
                noise_seeds,
            } = msg
            else {
                self.state = ServerState::Aborted;
                return Err(AbortReason::Internal(format!(
                    "client {id} sent a non-unmask message in stage 4"
                )));
            };
            let key_subjects: BTreeSet<ClientId> = key_shares.iter().map(|(s, _)| *s).collect();
            let mask_subjects: BTreeSet<ClientId> = mask_shares.iter().map(|(s, _)| *s).collect();
            // a client's self-mask seed and masking key must never both be
            // reconstructed
            if !key_subjects.is_disjoint(&mask_subjects) {
                self.state = ServerState::Aborted;
                return Err(AbortReason::SafetyRule(format!(
                    "response from {id} offers both key and mask shares for one client"
                )));
            }
            if !key_subjects.is_subset(&self.u2)
                || key_subjects.intersection(&self.u3).next().is_some()
            {
                self.state = ServerState::Aborted;
                return Err(AbortReason::SafetyRule(format!(
                    "response from {id} offers key shares for a surviving client"
                )));
            }
            if !mask_subjects.is_subset(&self.u3) {
                self.state = ServerState::Aborted;
                return Err(AbortReason::SafetyRule(format!(
                    "response from {id} offers mask shares outside the survivor set"
                )));
            }
            for (subject, value) in key_shares {
                self.key_share_box.entry(subject).or_default().push(SecretShare {
                    holder_index: id,
                    value,
                });
            }
            for (subject, value) in mask_shares {
                self.mask_share_box.entry(subject).or_default().push(SecretShare {
                    holder_index: id,
                    value,
                });
            }
            let seed_keys: Vec<u32> = noise_seeds.iter().map(|(k, _)| *k).collect();
            if seed_keys != expected_seed_range {
                self.state = ServerState::Aborted;
                return Err(AbortReason::Internal(format!(
                    "client {id} disclosed seeds {seed_keys:?}, expected {expected_seed_range:?}"
                )));
            }
            self.direct_seeds
                .insert(id, noise_seeds.into_iter().collect());
        }
        self.u5 = responders;
        if let Err(e) = self.unmask_sum() {
            self.state = ServerState::Aborted;
            return Err(e);
        }
        if self.params.variant == ProtocolVariant::SecaggPlain {
            self.aggregate = self.unmasked.clone();
            self.state = ServerState::Done;
            return Ok(None);
        }
        let missing: Vec<ClientId> = self.u3.difference(&self.u5).copied().collect();
        if missing.is_empty() {
            if let Err(e) = self.remove_noise(&BTreeMap::new()) {
                self.state = ServerState::Aborted;
                return Err(e);
            }
            self.state = ServerState::Done;
            Ok(None)
        } else {
            self.state = ServerState::AwaitingSeedShares;
            Ok(Some(RoundMessage::SeedShareRequest {
                responders: self.u5.iter().copied().collect(),
            }))
        }
    }

    fn unmask_sum(&mut self) -> Result<(), AbortReason> {
        let codec = self.params.codec;
        let d = self.params.vector_len;
        let modulus = codec.modulus();
        let field = self.params.field;
        let t = self.params.threshold;
        let mut sum = vec![0u64; d];
        for masked in self.masked_inputs.values() {
            codec.add_vec_mod(&mut sum, masked);
        }
        let survivors: Vec<ClientId> = self.u3.iter().copied().collect();
        // pairwise residues of clients that shared keys but never submitted
        let vanished: Vec<ClientId> = self.u2.difference(&self.u3).copied().collect();
        for dropped in vanished {
            let shares = self.key_share_box.get(&dropped).cloned().unwrap_or_default();
            let secret = reconstruct(&field, &shares, t)
                .map_err(|e| AbortReason::Internal(format!("key reconstruction: {e}")))?;
            let masking_secret = KaSecretKey::from_field_element(secret);
            for &survivor in &survivors {
                let peer = &self.roster[&survivor];
                let pairwise = ka_agree(&masking_secret, &peer.masking_key)
                    .map_err(|e| AbortReason::Internal(format!("key agreement: {e}")))?;
                let mask = prg_expand(&PrgSeed::from_bytes(pairwise.as_bytes()), d, modulus)
                    .map_err(|e| AbortReason::Internal(format!("mask expansion: {e}")))?;
                if dropped > survivor {
                    codec.add_vec_mod(&mut sum, &mask);
                } else {
                    codec.sub_vec_mod(&mut sum, &mask);
                }
            }
        }
        // self masks of submitting survivors
        for &survivor in &survivors {
            let shares = self.mask_share_box.get(&survivor).cloned().unwrap_or_default();
            let seed = reconstruct(&field, &shares, t)
                .map_err(|e| AbortReason::Internal(format!("seed reconstruction: {e}")))?;
            let mask = prg_expand(&PrgSeed::from_field(seed), d, modulus)
                .map_err(|e| AbortReason::Internal(format!("mask expansion: {e}")))?;
            codec.sub_vec_mod(&mut sum, &mask);
        }
        self.unmasked = Some(sum);
        Ok(())
    }

    /// Stage 5: reconstruct the missing survivors' seeds from shares and
    /// finish the removal. With too few responders, either aborts or
    /// releases the under-removed aggregate flagged as overspent.
    pub fn collect_seed_shares(
        &mut self,
        msgs: BTreeMap<ClientId, RoundMessage>,
    ) -> Result<(), AbortReason> {
        self.expect(ServerState::AwaitingSeedShares, "collect_seed_shares")?;
        for (id, msg) in msgs {
            let RoundMessage::SeedShareResponse { seed_shares } = msg else {
                self.state = ServerState::Aborted;
                return Err(AbortReason::Internal(format!(
                    "client {id} sent a non-seed message in stage 5"
                )));
            };
            self.u6.insert(id);
            for (subject, k, value) in seed_shares {
                self.seed_share_box
                    .entry((subject, k))
                    .or_default()
                    .push(SecretShare {
                        holder_index: id,
                        value,
                    });
            }
        }
        if self.u6.len() < self.params.threshold as usize {
            match self.policy {
                SeedLossPolicy::Abort => {
                    self.state = ServerState::Aborted;
                    return Err(AbortReason::SeedReconstruction(format!(
                        "only {} seed-share responses, need {}",
                        self.u6.len(),
                        self.params.threshold
                    )));
                }
                SeedLossPolicy::FlagOverspend => {
                    // remove what the direct seeds cover and flag the rest
                    self.overspent = true;
                    if let Err(e) = self.remove_noise_partial() {
                        self.state = ServerState::Aborted;
                        return Err(e);
                    }
                    self.state = ServerState::Done;
                    return Ok(());
                }
            }
        }
        let field = self.params.field;
        let t = self.params.threshold;
        let dropped = (self.params.sampled.len() - self.u3.len()) as u32;
        let range = crate::noise::removal_indices(dropped, self.params.dropout_tolerance());
        let missing: Vec<ClientId> = self.u3.difference(&self.u5).copied().collect();
        let mut reconstructed: BTreeMap<ClientId, BTreeMap<u32, FieldElement>> = BTreeMap::new();
        for subject in missing {
            for k in range.clone() {
                let shares = self
                    .seed_share_box
                    .get(&(subject, k))
                    .cloned()
                    .unwrap_or_default();
                let seed = reconstruct(&field, &shares, t).map_err(|e| {
                    AbortReason::SeedReconstruction(format!("seed ({subject}, {k}): {e}"))
                });
                match seed {
                    Ok(seed) => {
                        reconstructed.entry(subject).or_default().insert(k, seed);
                    }
                    Err(e) => {
                        self.state = ServerState::Aborted;
                        return Err(e);
                    }
                }
            }
        }
        if let Err(e) = self.remove_noise(&reconstructed) {
            self.state = ServerState::Aborted;
            return Err(e);
        }
        self.state = ServerState::Done;
        Ok(())
    }

    /// Subtracts every removable component of every survivor, taking seeds
    /// from direct disclosure or reconstruction.
    fn remove_noise(
        &mut self,
        reconstructed: &BTreeMap<ClientId, BTreeMap<u32, FieldElement>>,
    ) -> Result<(), AbortReason> {
        let plan = self.params.noise.expect("noise-enforcing variant");
        let variances = plan.component_variances();
        let dropped = (self.params.sampled.len() - self.u3.len()) as u32;
        let mut aggregate = self.unmasked.clone().expect("unmasked before removal");
        for &survivor in &self.u3 {
            for k in crate::noise::removal_indices(dropped, plan.dropout_tolerance) {
                let seed = self
                    .direct_seeds
                    .get(&survivor)
                    .and_then(|m| m.get(&k))
                    .or_else(|| reconstructed.get(&survivor).and_then(|m| m.get(&k)))
                    .copied()
                    .ok_or_else(|| {
                        AbortReason::SeedReconstruction(format!(
                            "no seed for survivor {survivor} component {k}"
                        ))
                    })?;
                self.subtract_component(&mut aggregate, seed, variances.0[k as usize])?;
            }
        }
        self.aggregate = Some(aggregate);
        Ok(())
    }

    /// Overspend path: only the directly-disclosed seeds are removable.
    fn remove_noise_partial(&mut self) -> Result<(), AbortReason> {
        let plan = self.params.noise.expect("noise-enforcing variant");
        let variances = plan.component_variances();
        let dropped = (self.params.sampled.len() - self.u3.len()) as u32;
        let mut aggregate = self.unmasked.clone().expect("unmasked before removal");
        let disclosed = self.direct_seeds.clone();
        for (survivor, seeds) in disclosed {
            if !self.u3.contains(&survivor) {
                continue;
            }
            for k in crate::noise::removal_indices(dropped, plan.dropout_tolerance) {
                if let Some(&seed) = seeds.get(&k) {
                    self.subtract_component(&mut aggregate, seed, variances.0[k as usize])?;
                }
            }
        }
        self.aggregate = Some(aggregate);
        Ok(())
    }

    fn subtract_component(
        &self,
        aggregate: &mut [u64],
        seed: FieldElement,
        variance: f64,
    ) -> Result<(), AbortReason> {
        let noise = prg_sample_noise(
            &PrgSeed::from_field(seed),
            variance,
            self.params.vector_len,
            self.params.noise_distribution,
        )
        .map_err(|e| AbortReason::Internal(e.to_string()))?;
        let encoded = self.params.codec.encode_vec(&noise);
        self.params.codec.sub_vec_mod(aggregate, &encoded);
        Ok(())
    }
}
