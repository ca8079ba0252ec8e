//! Client-side session: a staged state machine advancing strictly forward
//! from key advertisement to seed-share release, aborting terminally on any
//! failed check.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::crypto::{
    ae_decrypt, ae_encrypt, ka_agree, ka_gen, prg_expand, prg_sample_noise, sig_sign, sig_verify,
    KaKeyPair, PrgSeed, SigKeyPair,
};
use crate::field::FieldElement;
use crate::shamir::{share, SharingPolicy};

use super::messages::{
    advertise_payload, consistency_payload, round_payload, RosterEntry, RoundMessage, SharePayload,
};
use super::{AbortReason, ClientId, ProtocolParams, ProtocolVariant, RoundIndex, SigDirectory, ThreatMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClientState {
    Fresh,
    Advertised,
    SharedKeys,
    Masked,
    Announced,
    Unmasked,
    Done,
    Aborted,
}

/// Work counters, asserted against the protocol's stated per-client costs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientCounters {
    /// Secret sharings generated (key, self-mask seed, then one per
    /// removable noise component).
    pub sharings_created: u32,
    /// Total Shamir shares produced across those sharings.
    pub shares_created: u64,
    /// Noise components added to the update.
    pub noise_components: u32,
}

/// One client's view of a round.
pub struct ClientSession {
    id: ClientId,
    round: RoundIndex,
    params: ProtocolParams,
    rng: ChaCha20Rng,
    state: ClientState,
    signing: Option<SigKeyPair>,
    directory: Option<SigDirectory>,

    /// Raw integer update, kept for test oracles.
    input: Vec<i64>,
    /// Encoded update with all noise components already added.
    perturbed: Vec<u64>,
    /// Noise seeds `g_{u,0..=T}` (empty for the plain variant).
    noise_seeds: Vec<FieldElement>,

    encryption_keys: Option<KaKeyPair>,
    masking_keys: Option<KaKeyPair>,
    mask_seed: Option<FieldElement>,
    roster: BTreeMap<ClientId, RosterEntry>,
    u1: BTreeSet<ClientId>,
    u2: BTreeSet<ClientId>,
    u3: BTreeSet<ClientId>,
    stored_ciphertexts: BTreeMap<ClientId, crate::crypto::Ciphertext>,
    decrypted: BTreeMap<ClientId, SharePayload>,

    counters: ClientCounters,
}

impl ClientSession {
    /// Builds a session, sampling noise seeds and perturbing the update for
    /// the noise-enforcing variant (the protocol's setup step).
    pub fn new(
        id: ClientId,
        round: RoundIndex,
        params: ProtocolParams,
        input: Vec<i64>,
        seed: [u8; 32],
        signing: Option<SigKeyPair>,
        directory: Option<SigDirectory>,
    ) -> Result<Self, AbortReason> {
        params.validate()?;
        if !params.sampled.contains(&id) {
            return Err(AbortReason::InvalidParams(format!(
                "client {id} not in the sampled set"
            )));
        }
        if input.len() != params.vector_len {
            return Err(AbortReason::InvalidParams(format!(
                "input length {} does not match d = {}",
                input.len(),
                params.vector_len
            )));
        }
        if params.mode == ThreatMode::Malicious && (signing.is_none() || directory.is_none()) {
            return Err(AbortReason::InvalidParams(
                "malicious mode requires signing keys and a directory".into(),
            ));
        }
        let mut rng = ChaCha20Rng::from_seed(seed);
        let mut perturbed = params.codec.encode_ints(&input);
        let mut noise_seeds = Vec::new();
        let mut counters = ClientCounters::default();
        if params.variant == ProtocolVariant::SecaggXnoise {
            let plan = params.noise.expect("validated");
            let variances = plan.component_variances();
            for &variance in &variances.0 {
                let g = params.field.random_elem(&mut rng);
                let component = prg_sample_noise(
                    &PrgSeed::from_field(g),
                    variance,
                    params.vector_len,
                    params.noise_distribution,
                )
                .map_err(|e| AbortReason::Internal(e.to_string()))?;
                let encoded = params.codec.encode_vec(&component);
                params.codec.add_vec_mod(&mut perturbed, &encoded);
                noise_seeds.push(g);
            }
            counters.noise_components = noise_seeds.len() as u32;
        }
        Ok(ClientSession {
            id,
            round,
            params,
            rng,
            state: ClientState::Fresh,
            signing,
            directory,
            input,
            perturbed,
            noise_seeds,
            encryption_keys: None,
            masking_keys: None,
            mask_seed: None,
            roster: BTreeMap::new(),
            u1: BTreeSet::new(),
            u2: BTreeSet::new(),
            u3: BTreeSet::new(),
            stored_ciphertexts: BTreeMap::new(),
            decrypted: BTreeMap::new(),
            counters,
        })
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn counters(&self) -> ClientCounters {
        self.counters
    }

    /// The encoded update plus noise, as it enters the masked sum. Test
    /// oracles compare the server output against the modular sum of these.
    pub fn perturbed_update(&self) -> &[u64] {
        &self.perturbed
    }

    pub fn raw_input(&self) -> &[i64] {
        &self.input
    }

    pub fn has_aborted(&self) -> bool {
        self.state == ClientState::Aborted
    }

    fn expect(&self, state: ClientState, requested: &str) -> Result<(), AbortReason> {
        if self.state == state {
            Ok(())
        } else {
            Err(AbortReason::StageOrder {
                state: format!("{:?}", self.state),
                requested: requested.to_string(),
            })
        }
    }

    fn malicious(&self) -> bool {
        self.params.mode == ThreatMode::Malicious
    }

    fn verify_peer_signature(
        &self,
        peer: ClientId,
        payload: &[u8],
        signature: &Option<crate::crypto::Signature>,
    ) -> bool {
        let Some(directory) = &self.directory else {
            return false;
        };
        let (Some(key), Some(sig)) = (directory.lookup(peer), signature) else {
            return false;
        };
        sig_verify(key, payload, sig)
    }

    /// Stage 0: generate both key pairs and advertise the public halves.
    pub fn advertise_keys(&mut self) -> Result<RoundMessage, AbortReason> {
        self.expect(ClientState::Fresh, "advertise_keys")?;
        let encryption = ka_gen(&mut self.rng);
        let masking = ka_gen(&mut self.rng);
        let signature = if self.malicious() {
            let payload = advertise_payload(&encryption.public, &masking.public);
            Some(sig_sign(self.signing.as_ref().expect("validated"), &payload))
        } else {
            None
        };
        let msg = RoundMessage::AdvertiseKeys {
            encryption_key: encryption.public,
            masking_key: masking.public,
            signature,
        };
        self.encryption_keys = Some(encryption);
        self.masking_keys = Some(masking);
        self.state = ClientState::Advertised;
        Ok(msg)
    }

    /// Stage 1: validate the roster, draw the self-mask seed, share the
    /// masking secret key, the seed, and (noise-enforcing variant) every
    /// removable noise seed, encrypting each peer's bundle.
    pub fn share_keys(&mut self, roster: &[RosterEntry]) -> Result<RoundMessage, AbortReason> {
        self.expect(ClientState::Advertised, "share_keys")?;
        match self.share_keys_inner(roster) {
            Ok(msg) => {
                self.state = ClientState::SharedKeys;
                Ok(msg)
            }
            Err(e) => {
                self.state = ClientState::Aborted;
                Err(e)
            }
        }
    }

    fn share_keys_inner(&mut self, roster: &[RosterEntry]) -> Result<RoundMessage, AbortReason> {
        let ids: BTreeSet<ClientId> = roster.iter().map(|e| e.id).collect();
        if ids.len() != roster.len() {
            return Err(AbortReason::RosterInvalid("duplicate roster ids".into()));
        }
        if !ids.contains(&self.id) {
            return Err(AbortReason::RosterInvalid("own id missing from roster".into()));
        }
        if ids.len() < self.params.threshold as usize {
            return Err(AbortReason::InsufficientParticipants {
                stage: "share_keys".into(),
                got: ids.len(),
                need: self.params.threshold,
            });
        }
        if !ids.is_subset(&self.params.sampled) {
            return Err(AbortReason::RosterInvalid("roster lists unsampled clients".into()));
        }
        // all advertised keys must be pairwise distinct
        let mut seen = BTreeSet::new();
        for e in roster {
            if !seen.insert(e.encryption_key.0) || !seen.insert(e.masking_key.0) {
                return Err(AbortReason::RosterInvalid("repeated public key".into()));
            }
        }
        if self.malicious() {
            for e in roster {
                let payload = advertise_payload(&e.encryption_key, &e.masking_key);
                if !self.verify_peer_signature(e.id, &payload, &e.signature) {
                    return Err(AbortReason::RosterInvalid(format!(
                        "bad key signature from client {}",
                        e.id
                    )));
                }
            }
        }
        self.roster = roster.iter().map(|e| (e.id, e.clone())).collect();
        self.u1 = ids.clone();

        let field = self.params.field;
        let mask_seed = field.random_elem(&mut self.rng);
        self.mask_seed = Some(mask_seed);

        let policy = SharingPolicy::new(self.params.threshold, ids.clone())
            .map_err(|e| AbortReason::Internal(e.to_string()))?;
        let masking_secret = self
            .masking_keys
            .as_ref()
            .expect("advertised")
            .secret
            .as_field_element(&field);
        let key_shares = share(&field, masking_secret, &policy, &mut self.rng);
        let mask_shares = share(&field, mask_seed, &policy, &mut self.rng);
        self.counters.sharings_created += 2;
        self.counters.shares_created += (key_shares.len() + mask_shares.len()) as u64;
        // component 0 is never removed, so only seeds 1..=T get shared
        let mut seed_shares = Vec::new();
        for g in self.noise_seeds.iter().skip(1) {
            let shares = share(&field, *g, &policy, &mut self.rng);
            self.counters.sharings_created += 1;
            self.counters.shares_created += shares.len() as u64;
            seed_shares.push(shares);
        }

        let by_holder = |shares: &[crate::shamir::SecretShare], holder: ClientId| {
            shares
                .iter()
                .find(|s| s.holder_index == holder)
                .expect("policy covers roster")
                .value
        };
        let mut ciphertexts = Vec::new();
        for &v in &ids {
            let payload = SharePayload {
                sender: self.id,
                receiver: v,
                key_share: by_holder(&key_shares, v),
                mask_share: by_holder(&mask_shares, v),
                seed_shares: seed_shares.iter().map(|s| by_holder(s, v)).collect(),
            };
            if v == self.id {
                // own bundle stays local
                self.decrypted.insert(v, payload);
                continue;
            }
            let peer = &self.roster[&v];
            let key = ka_agree(
                &self.encryption_keys.as_ref().expect("advertised").secret,
                &peer.encryption_key,
            )
            .map_err(|e| AbortReason::Internal(e.to_string()))?;
            ciphertexts.push((
                v,
                ae_encrypt(&key, self.id, v, &payload.encode(), &mut self.rng),
            ));
        }
        Ok(RoundMessage::EncryptedShares { ciphertexts })
    }

    /// Stage 2: infer `U2` from the delivered ciphertexts, mask the
    /// perturbed update with the self mask and pairwise masks, and submit.
    pub fn masked_input(
        &mut self,
        ciphertexts: &[(ClientId, crate::crypto::Ciphertext)],
    ) -> Result<RoundMessage, AbortReason> {
        self.expect(ClientState::SharedKeys, "masked_input")?;
        match self.masked_input_inner(ciphertexts) {
            Ok(msg) => {
                self.state = ClientState::Masked;
                Ok(msg)
            }
            Err(e) => {
                self.state = ClientState::Aborted;
                Err(e)
            }
        }
    }

    fn masked_input_inner(
        &mut self,
        ciphertexts: &[(ClientId, crate::crypto::Ciphertext)],
    ) -> Result<RoundMessage, AbortReason> {
        let mut u2: BTreeSet<ClientId> = ciphertexts.iter().map(|(v, _)| *v).collect();
        u2.insert(self.id);
        if u2.len() < self.params.threshold as usize {
            return Err(AbortReason::InsufficientParticipants {
                stage: "masked_input".into(),
                got: u2.len(),
                need: self.params.threshold,
            });
        }
        if !u2.is_subset(&self.u1) {
            return Err(AbortReason::Internal("U2 not contained in U1".into()));
        }
        for (v, ct) in ciphertexts {
            if ct.sender != *v || ct.receiver != self.id {
                return Err(AbortReason::Internal("misrouted ciphertext".into()));
            }
            self.stored_ciphertexts.insert(*v, ct.clone());
        }
        self.u2 = u2.clone();

        let codec = self.params.codec;
        let modulus = codec.modulus();
        let d = self.params.vector_len;
        let mut masked = self.perturbed.clone();
        // self mask
        let self_mask = prg_expand(
            &PrgSeed::from_field(self.mask_seed.expect("shared")),
            d,
            modulus,
        )
        .map_err(|e| AbortReason::Internal(e.to_string()))?;
        codec.add_vec_mod(&mut masked, &self_mask);
        // pairwise masks: +PRG(s_uv) when u > v, -PRG(s_uv) when u < v
        let own_masking_secret = &self.masking_keys.as_ref().expect("advertised").secret;
        for &v in u2.iter().filter(|&&v| v != self.id) {
            let peer_key = &self.roster[&v].masking_key;
            let secret = ka_agree(own_masking_secret, peer_key)
                .map_err(|e| AbortReason::Internal(e.to_string()))?;
            let pairwise = prg_expand(&PrgSeed::from_bytes(secret.as_bytes()), d, modulus)
                .map_err(|e| AbortReason::Internal(e.to_string()))?;
            if self.id > v {
                codec.add_vec_mod(&mut masked, &pairwise);
            } else {
                codec.sub_vec_mod(&mut masked, &pairwise);
            }
        }
        let round_signature = if self.malicious() {
            Some(sig_sign(
                self.signing.as_ref().expect("validated"),
                &round_payload(self.round),
            ))
        } else {
            None
        };
        Ok(RoundMessage::MaskedInput {
            masked,
            round_signature,
        })
    }

    /// Dropout-outcome verification plus, in malicious mode, the
    /// consistency acknowledgement. Checks the announced partition of the
    /// sampled set, its own membership, the threshold, the dropout
    /// tolerance, and each claimed survivor's round signature.
    pub fn process_announcement(
        &mut self,
        survivors: &[ClientId],
        dropped: &[ClientId],
        round_signatures: &Option<Vec<(ClientId, crate::crypto::Signature)>>,
    ) -> Result<Option<RoundMessage>, AbortReason> {
        self.expect(ClientState::Masked, "process_announcement")?;
        match self.process_announcement_inner(survivors, dropped, round_signatures) {
            Ok(ack) => {
                self.state = ClientState::Announced;
                Ok(ack)
            }
            Err(e) => {
                self.state = ClientState::Aborted;
                Err(e)
            }
        }
    }

    fn process_announcement_inner(
        &mut self,
        survivors: &[ClientId],
        dropped: &[ClientId],
        round_signatures: &Option<Vec<(ClientId, crate::crypto::Signature)>>,
    ) -> Result<Option<RoundMessage>, AbortReason> {
        let u3: BTreeSet<ClientId> = survivors.iter().copied().collect();
        let dropped_set: BTreeSet<ClientId> = dropped.iter().copied().collect();
        if u3.len() != survivors.len() || dropped_set.len() != dropped.len() {
            return Err(AbortReason::DropoutOutcomeInvalid("duplicate ids".into()));
        }
        // the claimed survivors and dropouts must partition the sampled set
        if !u3.is_disjoint(&dropped_set)
            || u3.union(&dropped_set).copied().collect::<BTreeSet<_>>() != self.params.sampled
        {
            return Err(AbortReason::DropoutOutcomeInvalid(
                "survivors and dropouts do not partition the sampled set".into(),
            ));
        }
        if !u3.contains(&self.id) {
            return Err(AbortReason::DropoutOutcomeInvalid(
                "own id claimed dropped while still alive".into(),
            ));
        }
        if !u3.is_subset(&self.u2) {
            return Err(AbortReason::DropoutOutcomeInvalid(
                "claimed survivor never distributed shares".into(),
            ));
        }
        if u3.len() < self.params.threshold as usize {
            return Err(AbortReason::InsufficientParticipants {
                stage: "announcement".into(),
                got: u3.len(),
                need: self.params.threshold,
            });
        }
        if self.params.variant == ProtocolVariant::SecaggXnoise {
            let tolerance = self.params.dropout_tolerance();
            let dropped_count = dropped_set.len() as u32;
            if dropped_count > tolerance {
                return Err(AbortReason::ToleranceExceeded {
                    dropped: dropped_count,
                    tolerance,
                });
            }
        }
        if self.malicious() {
            let Some(signatures) = round_signatures else {
                return Err(AbortReason::DropoutOutcomeInvalid(
                    "missing round signatures".into(),
                ));
            };
            let signed: BTreeSet<ClientId> = signatures.iter().map(|(id, _)| *id).collect();
            if signed != u3 {
                return Err(AbortReason::DropoutOutcomeInvalid(
                    "signature set disagrees with claimed survivors".into(),
                ));
            }
            let payload = round_payload(self.round);
            for (id, sig) in signatures {
                if !self.verify_peer_signature(*id, &payload, &Some(*sig)) {
                    return Err(AbortReason::DropoutOutcomeInvalid(format!(
                        "invalid round signature for claimed survivor {id}"
                    )));
                }
            }
        }
        self.u3 = u3;
        if self.malicious() {
            let payload = consistency_payload(self.round, survivors);
            let signature = sig_sign(self.signing.as_ref().expect("validated"), &payload);
            Ok(Some(RoundMessage::ConsistencyAck { signature }))
        } else {
            Ok(None)
        }
    }

    /// Stage 4: verify the unmask request (and in malicious mode that at
    /// least `t` peers signed the same survivor list this client saw),
    /// decrypt every stored bundle, and release key shares for dropped
    /// clients, mask shares for survivors, and its own removable seeds.
    pub fn unmask(
        &mut self,
        participants: &[ClientId],
        consistency_signatures: &Option<Vec<(ClientId, crate::crypto::Signature)>>,
    ) -> Result<RoundMessage, AbortReason> {
        self.expect(ClientState::Announced, "unmask")?;
        match self.unmask_inner(participants, consistency_signatures) {
            Ok(msg) => {
                self.state = ClientState::Unmasked;
                Ok(msg)
            }
            Err(e) => {
                self.state = ClientState::Aborted;
                Err(e)
            }
        }
    }

    fn unmask_inner(
        &mut self,
        participants: &[ClientId],
        consistency_signatures: &Option<Vec<(ClientId, crate::crypto::Signature)>>,
    ) -> Result<RoundMessage, AbortReason> {
        let u4: BTreeSet<ClientId> = participants.iter().copied().collect();
        if !u4.is_subset(&self.u3) {
            return Err(AbortReason::UnmaskRequestInvalid(
                "participants not a subset of the announced survivors".into(),
            ));
        }
        if u4.len() < self.params.threshold as usize {
            return Err(AbortReason::InsufficientParticipants {
                stage: "unmask".into(),
                got: u4.len(),
                need: self.params.threshold,
            });
        }
        if !u4.contains(&self.id) {
            return Err(AbortReason::UnmaskRequestInvalid(
                "own id missing from unmask request".into(),
            ));
        }
        if self.malicious() {
            let Some(signatures) = consistency_signatures else {
                return Err(AbortReason::ConsistencyFailure(
                    "missing consistency signatures".into(),
                ));
            };
            let signed: BTreeSet<ClientId> = signatures.iter().map(|(id, _)| *id).collect();
            if signed != u4 {
                return Err(AbortReason::ConsistencyFailure(
                    "signature set disagrees with participants".into(),
                ));
            }
            // every signature must cover the survivor list THIS client saw
            let u3_sorted: Vec<ClientId> = self.u3.iter().copied().collect();
            let payload = consistency_payload(self.round, &u3_sorted);
            for (id, sig) in signatures {
                if !self.verify_peer_signature(*id, &payload, &Some(*sig)) {
                    return Err(AbortReason::ConsistencyFailure(format!(
                        "client {id} signed a different survivor list"
                    )));
                }
            }
        }
        // decrypt every bundle received in stage 1 (own bundle is already
        // plaintext)
        let own_encryption_secret = self
            .encryption_keys
            .as_ref()
            .expect("advertised")
            .secret;
        for (&v, ct) in &self.stored_ciphertexts {
            let peer_key = &self.roster[&v].encryption_key;
            let key = ka_agree(&own_encryption_secret, peer_key)
                .map_err(|e| AbortReason::Internal(e.to_string()))?;
            let plaintext =
                ae_decrypt(&key, ct).map_err(|_| AbortReason::DecryptionFailure { from: v })?;
            let payload = SharePayload::decode(&plaintext, &self.params.field)
                .map_err(|_| AbortReason::DecryptionFailure { from: v })?;
            if payload.sender != v || payload.receiver != self.id {
                return Err(AbortReason::DecryptionFailure { from: v });
            }
            self.decrypted.insert(v, payload);
        }
        // key shares for dropped clients, mask shares for survivors; the
        // two sets are disjoint by construction
        let mut key_shares = Vec::new();
        let mut mask_shares = Vec::new();
        for (&v, payload) in &self.decrypted {
            if self.u3.contains(&v) {
                mask_shares.push((v, payload.mask_share));
            } else if self.u2.contains(&v) {
                key_shares.push((v, payload.key_share));
            }
        }
        // own removable noise seeds, disclosed directly
        let mut noise_seeds = Vec::new();
        if self.params.variant == ProtocolVariant::SecaggXnoise {
            let dropped_count = (self.params.sampled.len() - self.u3.len()) as u32;
            let tolerance = self.params.dropout_tolerance();
            for k in crate::noise::removal_indices(dropped_count, tolerance) {
                noise_seeds.push((k, self.noise_seeds[k as usize]));
            }
        }
        Ok(RoundMessage::UnmaskResponse {
            key_shares,
            mask_shares,
            noise_seeds,
        })
    }

    /// Stage 5: hand over shares of the noise seeds belonging to survivors
    /// that vanished after unmasking, so the server can reconstruct them.
    pub fn seed_shares(
        &mut self,
        responders: &[ClientId],
    ) -> Result<RoundMessage, AbortReason> {
        self.expect(ClientState::Unmasked, "seed_shares")?;
        match self.seed_shares_inner(responders) {
            Ok(msg) => {
                self.state = ClientState::Done;
                Ok(msg)
            }
            Err(e) => {
                self.state = ClientState::Aborted;
                Err(e)
            }
        }
    }

    fn seed_shares_inner(&mut self, responders: &[ClientId]) -> Result<RoundMessage, AbortReason> {
        if self.params.variant != ProtocolVariant::SecaggXnoise {
            return Err(AbortReason::SeedRequestInvalid(
                "seed shares only exist in the noise-enforcing variant".into(),
            ));
        }
        let u5: BTreeSet<ClientId> = responders.iter().copied().collect();
        if !u5.is_subset(&self.u3) {
            return Err(AbortReason::SeedRequestInvalid(
                "responders not a subset of the survivors".into(),
            ));
        }
        if u5.len() < self.params.threshold as usize {
            return Err(AbortReason::InsufficientParticipants {
                stage: "seed_shares".into(),
                got: u5.len(),
                need: self.params.threshold,
            });
        }
        if !u5.contains(&self.id) {
            return Err(AbortReason::SeedRequestInvalid(
                "own id missing from seed-share request".into(),
            ));
        }
        let dropped_count = (self.params.sampled.len() - self.u3.len()) as u32;
        let tolerance = self.params.dropout_tolerance();
        let mut seed_shares = Vec::new();
        for &v in self.u3.difference(&u5) {
            let Some(payload) = self.decrypted.get(&v) else {
                continue;
            };
            for k in crate::noise::removal_indices(dropped_count, tolerance) {
                // bundle stores seeds for components 1..=T in order
                seed_shares.push((v, k, payload.seed_shares[(k - 1) as usize]));
            }
        }
        Ok(RoundMessage::SeedShareResponse { seed_shares })
    }
}
