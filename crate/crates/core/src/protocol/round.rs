//! End-to-end round execution over the simulated network.
//!
//! The runner drives every client session and the server session through
//! the stages in lockstep, injects dropouts at the configured points,
//! applies an optional adversarial server's tampering to broadcasts, and
//! returns the aggregate alongside the oracle data tests compare against.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crypto::SigKeyPair;
use crate::net::{Envelope, SimNetwork, SERVER};
pub use crate::net::DeliveryOrder;

use super::client::{ClientCounters, ClientSession};
use super::messages::{RoundMessage, Stage};
use super::server::{SeedLossPolicy, ServerSession, SurvivorSetsInner};
use super::{AbortReason, ClientId, ProtocolParams, RoundIndex, SigDirectory};

/// Where in the round a client vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropStage {
    /// After sharing keys, before submitting the masked update (the primary
    /// dropout model).
    BeforeMaskedInput,
    /// After submitting, before answering the unmask request.
    BeforeUnmask,
    /// After unmasking, before answering the seed-share request.
    BeforeSeedShares,
}

/// One client's contribution to a round.
#[derive(Debug, Clone)]
pub struct RoundInput {
    pub id: ClientId,
    pub update: Vec<i64>,
}

/// Everything the runner needs besides the inputs.
#[derive(Debug, Clone)]
pub struct RoundOptions {
    pub params: ProtocolParams,
    pub round: RoundIndex,
    /// Seed for everything inside the round (client randomness, network
    /// permutation).
    pub seed: u64,
    pub dropouts: BTreeMap<ClientId, DropStage>,
    pub delivery: DeliveryOrder,
    pub delay_per_message: f64,
    pub seed_loss_policy: SeedLossPolicy,
    /// Advance client sessions on a thread pool; results are identical to
    /// the sequential reference.
    pub parallel_clients: bool,
}

/// Nested survivor sets recorded for metrics and invariants.
pub type SurvivorSets = SurvivorSetsInner;

/// Outcome of one round, with the plaintext-equivalent oracle data.
#[derive(Debug, Clone)]
pub struct RoundResult {
    /// Final aggregate (noise removed for the enforcing variant).
    pub aggregate: Option<Vec<u64>>,
    /// Aggregate straight after unmasking.
    pub unmasked_aggregate: Option<Vec<u64>>,
    pub survivors: SurvivorSets,
    pub server_abort: Option<AbortReason>,
    pub client_aborts: BTreeMap<ClientId, AbortReason>,
    /// True when stage-5 losses forced an under-removed release.
    pub overspent: bool,
    /// Modular sum of the final survivors' perturbed encoded updates.
    pub expected_masked_sum: Vec<u64>,
    /// Plain integer sum of the final survivors' raw inputs.
    pub input_sum: Vec<i64>,
    pub counters: BTreeMap<ClientId, ClientCounters>,
    pub simulated_seconds: f64,
}

/// Hooks a test adversary controlling the server can use to tamper with
/// per-recipient broadcasts. The default implementation is the honest
/// passthrough.
pub trait ServerAdversary {
    fn tamper_announcement(&mut self, _recipient: ClientId, msg: RoundMessage) -> RoundMessage {
        msg
    }

    fn tamper_unmask_request(&mut self, _recipient: ClientId, msg: RoundMessage) -> RoundMessage {
        msg
    }
}

/// The honest server: no tampering.
pub struct HonestServer;

impl ServerAdversary for HonestServer {}

fn derive_seed(seed: u64, round: RoundIndex, label: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"round-derive");
    h.update(seed.to_le_bytes());
    h.update(round.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

struct Runner<'a> {
    options: &'a RoundOptions,
    network: SimNetwork,
    sessions: BTreeMap<ClientId, ClientSession>,
    alive: BTreeSet<ClientId>,
    client_aborts: BTreeMap<ClientId, AbortReason>,
}

impl<'a> Runner<'a> {
    /// Advances every targeted, alive client with `step`, records aborts,
    /// and delivers the surviving messages to the server.
    fn clients_to_server<F>(
        &mut self,
        stage: Stage,
        targets: &BTreeSet<ClientId>,
        step: F,
    ) -> BTreeMap<ClientId, RoundMessage>
    where
        F: Fn(&mut ClientSession) -> Result<RoundMessage, AbortReason> + Sync,
    {
        let produce = |(&id, session): (&ClientId, &mut ClientSession)| {
            if !targets.contains(&id) {
                return None;
            }
            Some((id, step(session)))
        };
        let alive = self.alive.clone();
        let outputs: Vec<(ClientId, Result<RoundMessage, AbortReason>)> =
            if self.options.parallel_clients {
                self.sessions
                    .par_iter_mut()
                    .filter(|(id, _)| alive.contains(id))
                    .filter_map(produce)
                    .collect()
            } else {
                self.sessions
                    .iter_mut()
                    .filter(|(id, _)| alive.contains(id))
                    .filter_map(produce)
                    .collect()
            };
        let mut batch = Vec::new();
        for (id, outcome) in outputs {
            match outcome {
                Ok(message) => batch.push(Envelope {
                    round: self.options.round,
                    stage,
                    sender: id,
                    receiver: SERVER,
                    message,
                }),
                Err(reason) => {
                    self.client_aborts.insert(id, reason);
                    self.alive.remove(&id);
                    self.network.drop_client(id);
                }
            }
        }
        self.network
            .deliver_stage(batch)
            .into_iter()
            .map(|e| (e.sender, e.message))
            .collect()
    }

    /// Delivers one server message to each targeted, alive client, applying
    /// the adversary's per-recipient tampering.
    fn broadcast(
        &mut self,
        stage: Stage,
        targets: &BTreeSet<ClientId>,
        message: &RoundMessage,
        adversary: &mut dyn ServerAdversary,
        tamper: fn(&mut dyn ServerAdversary, ClientId, RoundMessage) -> RoundMessage,
    ) -> BTreeMap<ClientId, RoundMessage> {
        let batch: Vec<Envelope> = targets
            .iter()
            .filter(|id| self.alive.contains(id))
            .map(|&id| Envelope {
                round: self.options.round,
                stage,
                sender: SERVER,
                receiver: id,
                message: tamper(adversary, id, message.clone()),
            })
            .collect();
        self.network
            .deliver_stage(batch)
            .into_iter()
            .map(|e| (e.receiver, e.message))
            .collect()
    }

    /// Delivers per-recipient server messages (each addressee gets its own
    /// payload).
    fn distribute(
        &mut self,
        stage: Stage,
        messages: BTreeMap<ClientId, RoundMessage>,
    ) -> BTreeMap<ClientId, RoundMessage> {
        let batch: Vec<Envelope> = messages
            .into_iter()
            .filter(|(id, _)| self.alive.contains(id))
            .map(|(id, message)| Envelope {
                round: self.options.round,
                stage,
                sender: SERVER,
                receiver: id,
                message,
            })
            .collect();
        self.network
            .deliver_stage(batch)
            .into_iter()
            .map(|e| (e.receiver, e.message))
            .collect()
    }

    fn apply_dropouts(&mut self, stage: DropStage) {
        for (&id, &s) in &self.options.dropouts {
            if s == stage {
                self.alive.remove(&id);
                self.network.drop_client(id);
            }
        }
    }
}

/// Runs one full round. `signing_keys` and `directory` are required in
/// malicious mode and ignored otherwise; `adversary` defaults to the honest
/// passthrough server.
pub fn run_round(
    options: &RoundOptions,
    inputs: &[RoundInput],
    signing_keys: Option<&BTreeMap<ClientId, SigKeyPair>>,
    directory: Option<&SigDirectory>,
    adversary: Option<&mut dyn ServerAdversary>,
) -> RoundResult {
    let mut honest = HonestServer;
    let adversary = adversary.unwrap_or(&mut honest);
    let params = &options.params;
    let mut result = RoundResult {
        aggregate: None,
        unmasked_aggregate: None,
        survivors: SurvivorSets::default(),
        server_abort: None,
        client_aborts: BTreeMap::new(),
        overspent: false,
        expected_masked_sum: Vec::new(),
        input_sum: Vec::new(),
        counters: BTreeMap::new(),
        simulated_seconds: 0.0,
    };
    if let Err(e) = params.validate() {
        result.server_abort = Some(e);
        return result;
    }

    // session setup (the protocol's setup phase: noise seeds, perturbation)
    let build = |input: &RoundInput| {
        let seed = derive_seed(options.seed, options.round, "client", input.id);
        ClientSession::new(
            input.id,
            options.round,
            params.clone(),
            input.update.clone(),
            seed,
            signing_keys.and_then(|m| m.get(&input.id)).cloned(),
            directory.cloned(),
        )
        .map(|s| (input.id, s))
        .map_err(|e| (input.id, e))
    };
    let built: Vec<Result<(ClientId, ClientSession), (ClientId, AbortReason)>> =
        if options.parallel_clients {
            inputs.par_iter().map(build).collect()
        } else {
            inputs.iter().map(build).collect()
        };
    let mut sessions = BTreeMap::new();
    for item in built {
        match item {
            Ok((id, session)) => {
                sessions.insert(id, session);
            }
            Err((id, reason)) => {
                result.client_aborts.insert(id, reason);
            }
        }
    }

    let network_seed = u64::from_le_bytes(
        derive_seed(options.seed, options.round, "network", 0)[..8]
            .try_into()
            .unwrap(),
    );
    let alive: BTreeSet<ClientId> = sessions.keys().copied().collect();
    let mut runner = Runner {
        options,
        network: SimNetwork::new(
            options.delivery,
            network_seed,
            options.delay_per_message,
            params.field,
        ),
        sessions,
        alive,
        client_aborts: std::mem::take(&mut result.client_aborts),
    };
    let mut server = match ServerSession::new(options.round, params.clone(), options.seed_loss_policy) {
        Ok(s) => s,
        Err(e) => {
            result.server_abort = Some(e);
            return result;
        }
    };

    let finish = |runner: Runner, server: ServerSession, mut result: RoundResult| {
        result.survivors = server.survivor_sets();
        result.aggregate = server.aggregate().cloned();
        result.unmasked_aggregate = server.unmasked_aggregate().cloned();
        result.overspent = server.overspent();
        result.client_aborts = runner.client_aborts;
        result.simulated_seconds = runner.network.elapsed();
        let codec = params.codec;
        let mut masked_sum = vec![0u64; params.vector_len];
        let mut input_sum = vec![0i64; params.vector_len];
        for id in &result.survivors.u3 {
            if let Some(session) = runner.sessions.get(id) {
                codec.add_vec_mod(&mut masked_sum, session.perturbed_update());
                for (acc, &x) in input_sum.iter_mut().zip(session.raw_input()) {
                    *acc += x;
                }
            }
        }
        result.expected_masked_sum = masked_sum;
        result.input_sum = input_sum;
        result.counters = runner
            .sessions
            .iter()
            .map(|(&id, s)| (id, s.counters()))
            .collect();
        result
    };

    macro_rules! server_step {
        ($expr:expr) => {
            match $expr {
                Ok(v) => v,
                Err(e) => {
                    result.server_abort = Some(e);
                    return finish(runner, server, result);
                }
            }
        };
    }

    // stage 0: advertise keys
    let sampled = params.sampled.clone();
    let advertisements =
        runner.clients_to_server(Stage::AdvertiseKeys, &sampled, |s| s.advertise_keys());
    let roster_msg = server_step!(server.collect_advertisements(advertisements));
    let RoundMessage::KeyRoster { entries } = &roster_msg else {
        unreachable!("stage 0 produces a roster");
    };
    let u1: BTreeSet<ClientId> = entries.iter().map(|e| e.id).collect();

    // stage 1: share keys
    let roster_deliveries =
        runner.broadcast(Stage::AdvertiseKeys, &u1, &roster_msg, adversary, |_, _, m| m);
    let share_msgs = runner.clients_to_server(Stage::ShareKeys, &u1, |s| {
        let RoundMessage::KeyRoster { entries } = roster_deliveries
            .get(&s.id())
            .expect("roster delivered to every stage-1 participant")
        else {
            unreachable!()
        };
        s.share_keys(entries)
    });
    let deliveries = server_step!(server.collect_shares(share_msgs));
    let deliveries = runner.distribute(Stage::ShareKeys, deliveries);
    let u2: BTreeSet<ClientId> = deliveries.keys().copied().collect();

    // stage 2: masked input
    runner.apply_dropouts(DropStage::BeforeMaskedInput);
    let masked_msgs = runner.clients_to_server(Stage::MaskedInput, &u2, |s| {
        let Some(RoundMessage::ShareDelivery { ciphertexts }) = deliveries.get(&s.id()) else {
            unreachable!("delivery exists for every stage-2 participant")
        };
        s.masked_input(ciphertexts)
    });
    let announcement = server_step!(server.collect_masked(masked_msgs));
    let u3: BTreeSet<ClientId> = server.survivor_sets().u3.iter().copied().collect();

    // dropout-outcome verification, and the consistency check in malicious
    // mode
    let announcements = runner.broadcast(
        Stage::MaskedInput,
        &u3,
        &announcement,
        adversary,
        |a, id, m| a.tamper_announcement(id, m),
    );
    let mut acks: BTreeMap<ClientId, RoundMessage> = BTreeMap::new();
    {
        let ids: Vec<ClientId> = announcements.keys().copied().collect();
        for id in ids {
            if !runner.alive.contains(&id) {
                continue;
            }
            let Some(RoundMessage::SurvivorAnnouncement {
                survivors,
                dropped,
                round_signatures,
            }) = announcements.get(&id)
            else {
                continue;
            };
            let session = runner.sessions.get_mut(&id).expect("session exists");
            match session.process_announcement(survivors, dropped, round_signatures) {
                Ok(Some(ack)) => {
                    acks.insert(id, ack);
                }
                Ok(None) => {}
                Err(reason) => {
                    runner.client_aborts.insert(id, reason);
                    runner.alive.remove(&id);
                    runner.network.drop_client(id);
                }
            }
        }
    }
    let unmask_request = if params.mode == super::ThreatMode::Malicious {
        let round = options.round;
        let acks = runner
            .network
            .deliver_stage(
                acks.into_iter()
                    .map(|(id, message)| Envelope {
                        round,
                        stage: Stage::ConsistencyCheck,
                        sender: id,
                        receiver: SERVER,
                        message,
                    })
                    .collect(),
            )
            .into_iter()
            .map(|e| (e.sender, e.message))
            .collect();
        server_step!(server.collect_consistency(acks))
    } else {
        server_step!(server.unmask_request())
    };
    let RoundMessage::UnmaskRequest { participants, .. } = &unmask_request else {
        unreachable!("unmask stage produces a request");
    };
    let u4: BTreeSet<ClientId> = participants.iter().copied().collect();

    // stage 4: unmasking
    runner.apply_dropouts(DropStage::BeforeUnmask);
    let requests = runner.broadcast(Stage::Unmask, &u4, &unmask_request, adversary, |a, id, m| {
        a.tamper_unmask_request(id, m)
    });
    let unmask_msgs = runner.clients_to_server(Stage::Unmask, &u4, |s| {
        let Some(RoundMessage::UnmaskRequest {
            participants,
            consistency_signatures,
        }) = requests.get(&s.id())
        else {
            unreachable!("request delivered to every stage-4 participant")
        };
        s.unmask(participants, consistency_signatures)
    });
    let seed_request = server_step!(server.collect_unmask(unmask_msgs));

    // stage 5: excess-noise seed recovery, only when someone vanished
    if let Some(request) = seed_request {
        let RoundMessage::SeedShareRequest { responders } = &request else {
            unreachable!("stage 5 request");
        };
        let u5: BTreeSet<ClientId> = responders.iter().copied().collect();
        runner.apply_dropouts(DropStage::BeforeSeedShares);
        let requests = runner.broadcast(Stage::NoiseRemoval, &u5, &request, adversary, |_, _, m| m);
        let seed_msgs = runner.clients_to_server(Stage::NoiseRemoval, &u5, |s| {
            let Some(RoundMessage::SeedShareRequest { responders }) = requests.get(&s.id()) else {
                unreachable!("request delivered to every stage-5 participant")
            };
            s.seed_shares(responders)
        });
        server_step!(server.collect_seed_shares(seed_msgs));
    }

    finish(runner, server, result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::FixedPointCodec;
    use crate::crypto::NoiseDistribution;
    use crate::field::Field;
    use crate::noise::NoisePlan;
    use crate::protocol::{ProtocolVariant, ThreatMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn plain_params(n: u64, t: u32, d: usize) -> ProtocolParams {
        ProtocolParams {
            variant: ProtocolVariant::SecaggPlain,
            mode: ThreatMode::SemiHonest,
            sampled: (1..=n).collect(),
            threshold: t,
            vector_len: d,
            codec: FixedPointCodec::new(32, 8).unwrap(),
            field: Field::default(),
            noise: None,
            noise_distribution: NoiseDistribution::Gaussian,
        }
    }

    fn xnoise_params(n: u64, t: u32, tolerance: u32, d: usize, sigma_sq: f64) -> ProtocolParams {
        ProtocolParams {
            variant: ProtocolVariant::SecaggXnoise,
            mode: ThreatMode::SemiHonest,
            sampled: (1..=n).collect(),
            threshold: t,
            vector_len: d,
            codec: FixedPointCodec::new(40, 12).unwrap(),
            field: Field::default(),
            noise: Some(NoisePlan::new(sigma_sq, n as u32, tolerance, 0, t, false).unwrap()),
            noise_distribution: NoiseDistribution::Gaussian,
        }
    }

    fn options(params: ProtocolParams, seed: u64) -> RoundOptions {
        RoundOptions {
            params,
            round: 1,
            seed,
            dropouts: BTreeMap::new(),
            delivery: DeliveryOrder::BySender,
            delay_per_message: 0.0,
            seed_loss_policy: SeedLossPolicy::Abort,
            parallel_clients: false,
        }
    }

    fn random_inputs(n: u64, d: usize, seed: u64) -> Vec<RoundInput> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (1..=n)
            .map(|id| RoundInput {
                id,
                update: (0..d).map(|_| rng.random_range(-8i64..=8)).collect(),
            })
            .collect()
    }

    #[test]
    fn single_client_no_neighbors() {
        let opts = options(plain_params(1, 1, 4), 11);
        let inputs = vec![RoundInput {
            id: 1,
            update: vec![3, -2, 0, 7],
        }];
        let result = run_round(&opts, &inputs, None, None, None);
        assert!(result.server_abort.is_none(), "{:?}", result.server_abort);
        assert_eq!(result.aggregate.as_ref().unwrap(), &result.expected_masked_sum);
        let decoded = opts.params.codec.decode_vec(result.aggregate.as_ref().unwrap());
        assert_eq!(decoded, vec![3.0, -2.0, 0.0, 7.0]);
    }

    #[test]
    fn two_clients_pairwise_masks_cancel() {
        let opts = options(plain_params(2, 2, 6), 12);
        let inputs = random_inputs(2, 6, 120);
        let result = run_round(&opts, &inputs, None, None, None);
        assert!(result.server_abort.is_none());
        assert_eq!(result.aggregate.as_ref().unwrap(), &result.expected_masked_sum);
        let decoded = opts.params.codec.decode_vec(result.aggregate.as_ref().unwrap());
        let expected: Vec<f64> = result.input_sum.iter().map(|&x| x as f64).collect();
        assert_eq!(decoded, expected);
    }

    #[test]
    fn four_clients_full_sum() {
        let opts = options(plain_params(4, 3, 8), 13);
        let inputs = random_inputs(4, 8, 130);
        let result = run_round(&opts, &inputs, None, None, None);
        assert!(result.server_abort.is_none());
        assert_eq!(result.aggregate.as_ref().unwrap(), &result.expected_masked_sum);
    }

    #[test]
    fn dropout_before_masked_input_recovers_pairwise_residue() {
        let params = plain_params(5, 3, 16);
        let mut opts = options(params, 14);
        opts.dropouts.insert(4, DropStage::BeforeMaskedInput);
        let inputs = random_inputs(5, 16, 140);
        let result = run_round(&opts, &inputs, None, None, None);
        assert!(result.server_abort.is_none(), "{:?}", result.server_abort);
        assert_eq!(result.survivors.u3, vec![1, 2, 3, 5]);
        // the dropped client's masks cancel; the sum covers the survivors
        assert_eq!(result.aggregate.as_ref().unwrap(), &result.expected_masked_sum);
        let decoded = opts.params.codec.decode_vec(result.aggregate.as_ref().unwrap());
        let expected: Vec<f64> = result.input_sum.iter().map(|&x| x as f64).collect();
        assert_eq!(decoded, expected);
    }

    #[test]
    fn dropout_below_threshold_aborts() {
        let params = plain_params(4, 4, 4);
        let mut opts = options(params, 15);
        opts.dropouts.insert(2, DropStage::BeforeMaskedInput);
        let inputs = random_inputs(4, 4, 150);
        let result = run_round(&opts, &inputs, None, None, None);
        assert!(matches!(
            result.server_abort,
            Some(AbortReason::InsufficientParticipants { .. })
        ));
        assert!(result.aggregate.is_none());
    }

    #[test]
    fn xnoise_no_dropout_masked_sum_matches() {
        let opts = options(xnoise_params(4, 3, 2, 32, 1.0), 16);
        let inputs = random_inputs(4, 32, 160);
        let result = run_round(&opts, &inputs, None, None, None);
        assert!(result.server_abort.is_none(), "{:?}", result.server_abort);
        // before removal the aggregate is exactly the sum of perturbed
        // updates
        assert_eq!(
            result.unmasked_aggregate.as_ref().unwrap(),
            &result.expected_masked_sum
        );
        // nothing dropped, so components 1..=T were removed and the
        // residual noise is small but nonzero
        assert_ne!(result.aggregate, result.unmasked_aggregate);
    }

    #[test]
    fn xnoise_worst_case_dropout_removes_nothing() {
        let params = xnoise_params(5, 3, 2, 8, 1.0);
        let mut opts = options(params, 17);
        opts.dropouts.insert(2, DropStage::BeforeMaskedInput);
        opts.dropouts.insert(4, DropStage::BeforeMaskedInput);
        let inputs = random_inputs(5, 8, 170);
        let result = run_round(&opts, &inputs, None, None, None);
        assert!(result.server_abort.is_none(), "{:?}", result.server_abort);
        // |D| = T: the removal index set is empty
        assert_eq!(result.aggregate, result.unmasked_aggregate);
        assert_eq!(result.aggregate.as_ref().unwrap(), &result.expected_masked_sum);
    }

    #[test]
    fn xnoise_tolerance_exceeded_aborts() {
        let params = xnoise_params(5, 2, 1, 8, 1.0);
        let mut opts = options(params, 18);
        opts.dropouts.insert(2, DropStage::BeforeMaskedInput);
        opts.dropouts.insert(4, DropStage::BeforeMaskedInput);
        let inputs = random_inputs(5, 8, 180);
        let result = run_round(&opts, &inputs, None, None, None);
        assert!(matches!(
            result.server_abort,
            Some(AbortReason::ToleranceExceeded { dropped: 2, tolerance: 1 })
        ));
    }

    #[test]
    fn staged_dropout_reconstruction_is_exact() {
        // same seed, same survivor set; run A reconstructs client 3's seeds
        // from shares, run B gets them directly. Bit-identical aggregates
        // prove reconstruction-based removal is exact.
        let params = xnoise_params(6, 3, 3, 24, 2.0);
        let inputs = random_inputs(6, 24, 190);
        let mut a = options(params.clone(), 19);
        a.dropouts.insert(3, DropStage::BeforeUnmask);
        let ra = run_round(&a, &inputs, None, None, None);
        assert!(ra.server_abort.is_none(), "{:?}", ra.server_abort);
        let mut b = options(params, 19);
        b.dropouts.insert(3, DropStage::BeforeSeedShares);
        let rb = run_round(&b, &inputs, None, None, None);
        assert!(rb.server_abort.is_none(), "{:?}", rb.server_abort);
        assert_eq!(ra.survivors.u3, rb.survivors.u3);
        assert_eq!(ra.aggregate, rb.aggregate);
        // and the stage-5 path was actually exercised in run A
        assert!(ra.survivors.u6.len() >= 3);
        assert!(rb.survivors.u6.is_empty());
    }

    #[test]
    fn permuted_delivery_does_not_change_output() {
        let params = xnoise_params(5, 3, 2, 16, 1.0);
        let inputs = random_inputs(5, 16, 200);
        let mut a = options(params.clone(), 20);
        a.dropouts.insert(5, DropStage::BeforeMaskedInput);
        let mut b = a.clone();
        b.delivery = DeliveryOrder::Permuted;
        let ra = run_round(&a, &inputs, None, None, None);
        let rb = run_round(&b, &inputs, None, None, None);
        assert_eq!(ra.aggregate, rb.aggregate);
        assert_eq!(ra.survivors.u3, rb.survivors.u3);
    }

    #[test]
    fn parallel_mode_matches_sequential() {
        let params = xnoise_params(6, 4, 2, 64, 1.5);
        let inputs = random_inputs(6, 64, 210);
        let mut a = options(params, 21);
        a.dropouts.insert(2, DropStage::BeforeMaskedInput);
        let mut b = a.clone();
        b.parallel_clients = true;
        let ra = run_round(&a, &inputs, None, None, None);
        let rb = run_round(&b, &inputs, None, None, None);
        assert_eq!(ra.aggregate, rb.aggregate);
        assert_eq!(ra.expected_masked_sum, rb.expected_masked_sum);
    }

    #[test]
    fn malicious_mode_honest_run_passes() {
        let mut params = xnoise_params(5, 3, 2, 8, 1.0);
        params.mode = ThreatMode::Malicious;
        let sampled = params.sampled.clone();
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let (signing, directory) = SigDirectory::generate(&sampled, &mut rng);
        let mut opts = options(params, 22);
        opts.dropouts.insert(2, DropStage::BeforeMaskedInput);
        let inputs = random_inputs(5, 8, 220);
        let result = run_round(&opts, &inputs, Some(&signing), Some(&directory), None);
        assert!(result.server_abort.is_none(), "{:?}", result.server_abort);
        assert!(result.client_aborts.is_empty(), "{:?}", result.client_aborts);
        assert_eq!(
            result.unmasked_aggregate.as_ref().unwrap(),
            &result.expected_masked_sum
        );
        assert_eq!(result.survivors.u4.len(), 4);
    }

    #[test]
    fn understatement_attack_aborts_all_honest_clients() {
        // the server claims the dropped client survived; it has no round
        // signature for it, so every honest client rejects the outcome
        struct Understate;
        impl ServerAdversary for Understate {
            fn tamper_announcement(&mut self, _: ClientId, msg: RoundMessage) -> RoundMessage {
                let RoundMessage::SurvivorAnnouncement {
                    mut survivors,
                    mut dropped,
                    round_signatures,
                } = msg
                else {
                    return msg;
                };
                survivors.append(&mut dropped);
                survivors.sort_unstable();
                RoundMessage::SurvivorAnnouncement {
                    survivors,
                    dropped: Vec::new(),
                    round_signatures,
                }
            }
        }
        let mut params = xnoise_params(5, 3, 2, 8, 1.0);
        params.mode = ThreatMode::Malicious;
        let sampled = params.sampled.clone();
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let (signing, directory) = SigDirectory::generate(&sampled, &mut rng);
        let mut opts = options(params, 23);
        opts.dropouts.insert(4, DropStage::BeforeMaskedInput);
        let inputs = random_inputs(5, 8, 230);
        let mut adversary = Understate;
        let result = run_round(
            &opts,
            &inputs,
            Some(&signing),
            Some(&directory),
            Some(&mut adversary),
        );
        // every surviving honest client aborted before releasing shares
        assert_eq!(result.client_aborts.len(), 4);
        for reason in result.client_aborts.values() {
            assert!(matches!(reason, AbortReason::DropoutOutcomeInvalid(_)));
        }
        assert!(result.aggregate.is_none());
        assert!(matches!(
            result.server_abort,
            Some(AbortReason::InsufficientParticipants { .. })
        ));
    }

    #[test]
    fn survivor_set_substitution_aborts_all_honest_clients() {
        // the server shows client 1 a different survivor list; consistency
        // signatures then fail on both sides of the split
        struct SplitView;
        impl ServerAdversary for SplitView {
            fn tamper_announcement(&mut self, recipient: ClientId, msg: RoundMessage) -> RoundMessage {
                if recipient != 1 {
                    return msg;
                }
                let RoundMessage::SurvivorAnnouncement {
                    survivors,
                    mut dropped,
                    round_signatures,
                } = msg
                else {
                    return msg;
                };
                // move the highest-id survivor into the dropped set for the
                // victim's copy, pruning its signature to stay consistent
                let mut survivors: Vec<ClientId> = survivors;
                let moved = survivors.pop().unwrap();
                dropped.push(moved);
                dropped.sort_unstable();
                let round_signatures = round_signatures.map(|sigs| {
                    sigs.into_iter().filter(|(id, _)| *id != moved).collect()
                });
                RoundMessage::SurvivorAnnouncement {
                    survivors,
                    dropped,
                    round_signatures,
                }
            }
        }
        let mut params = xnoise_params(5, 3, 2, 8, 1.0);
        params.mode = ThreatMode::Malicious;
        let sampled = params.sampled.clone();
        let mut rng = ChaCha20Rng::seed_from_u64(24);
        let (signing, directory) = SigDirectory::generate(&sampled, &mut rng);
        let opts = options(params, 24);
        let inputs = random_inputs(5, 8, 240);
        let mut adversary = SplitView;
        let result = run_round(
            &opts,
            &inputs,
            Some(&signing),
            Some(&directory),
            Some(&mut adversary),
        );
        // every honest client aborts: the victim and the rest disagree on
        // the survivor list, so no consistency signature set verifies
        assert_eq!(result.client_aborts.len(), 5, "{:?}", result.client_aborts);
        assert!(result.aggregate.is_none());
    }

    #[test]
    fn replayed_round_signature_aborts() {
        // round r-1 runs honestly while the adversary records signatures;
        // in round r it replays the dropped client's old signature
        #[derive(Default)]
        struct Replay {
            recorded: BTreeMap<ClientId, crate::crypto::Signature>,
            active: bool,
        }
        impl ServerAdversary for Replay {
            fn tamper_announcement(&mut self, _: ClientId, msg: RoundMessage) -> RoundMessage {
                let RoundMessage::SurvivorAnnouncement {
                    mut survivors,
                    dropped,
                    round_signatures,
                } = msg
                else {
                    return msg;
                };
                if !self.active {
                    if let Some(sigs) = &round_signatures {
                        self.recorded = sigs.iter().cloned().collect();
                    }
                    return RoundMessage::SurvivorAnnouncement {
                        survivors,
                        dropped,
                        round_signatures,
                    };
                }
                let mut sigs = round_signatures.unwrap_or_default();
                for id in &dropped {
                    if let Some(old) = self.recorded.get(id) {
                        survivors.push(*id);
                        sigs.push((*id, *old));
                    }
                }
                survivors.sort_unstable();
                sigs.sort_by_key(|(id, _)| *id);
                RoundMessage::SurvivorAnnouncement {
                    survivors,
                    dropped: Vec::new(),
                    round_signatures: Some(sigs),
                }
            }
        }
        let mut params = xnoise_params(5, 3, 2, 8, 1.0);
        params.mode = ThreatMode::Malicious;
        let sampled = params.sampled.clone();
        let mut rng = ChaCha20Rng::seed_from_u64(25);
        let (signing, directory) = SigDirectory::generate(&sampled, &mut rng);
        let inputs = random_inputs(5, 8, 250);
        let mut adversary = Replay::default();

        let mut first = options(params.clone(), 25);
        first.round = 1;
        let r1 = run_round(
            &first,
            &inputs,
            Some(&signing),
            Some(&directory),
            Some(&mut adversary),
        );
        assert!(r1.server_abort.is_none());

        adversary.active = true;
        let mut second = options(params, 26);
        second.round = 2;
        second.dropouts.insert(4, DropStage::BeforeMaskedInput);
        let r2 = run_round(
            &second,
            &inputs,
            Some(&signing),
            Some(&directory),
            Some(&mut adversary),
        );
        assert_eq!(r2.client_aborts.len(), 4, "{:?}", r2.client_aborts);
        for reason in r2.client_aborts.values() {
            assert!(matches!(reason, AbortReason::DropoutOutcomeInvalid(_)));
        }
        assert!(r2.aggregate.is_none());
    }

    #[test]
    fn thirty_two_clients_cancel_exactly() {
        let params = xnoise_params(32, 20, 6, 64, 1.0);
        let mut opts = options(params, 30);
        for victim in [5u64, 11, 23] {
            opts.dropouts.insert(victim, DropStage::BeforeMaskedInput);
        }
        let inputs = random_inputs(32, 64, 300);
        let result = run_round(&opts, &inputs, None, None, None);
        assert!(result.server_abort.is_none(), "{:?}", result.server_abort);
        assert_eq!(result.survivors.u3.len(), 29);
        assert_eq!(
            result.unmasked_aggregate.as_ref().unwrap(),
            &result.expected_masked_sum
        );
    }

    #[test]
    fn survivor_sets_nest() {
        let params = xnoise_params(8, 4, 3, 8, 1.0);
        let mut opts = options(params, 27);
        opts.dropouts.insert(2, DropStage::BeforeMaskedInput);
        opts.dropouts.insert(5, DropStage::BeforeUnmask);
        opts.dropouts.insert(7, DropStage::BeforeSeedShares);
        let inputs = random_inputs(8, 8, 270);
        let result = run_round(&opts, &inputs, None, None, None);
        assert!(result.server_abort.is_none(), "{:?}", result.server_abort);
        let sets = [
            &result.survivors.u1,
            &result.survivors.u2,
            &result.survivors.u3,
            &result.survivors.u4,
            &result.survivors.u5,
            &result.survivors.u6,
        ];
        for w in sets.windows(2) {
            let outer: BTreeSet<_> = w[0].iter().collect();
            let inner: BTreeSet<_> = w[1].iter().collect();
            assert!(inner.is_subset(&outer), "{sets:?}");
        }
    }

    #[test]
    fn omitted_survivor_detected_by_set_equality() {
        // the server claims a genuine survivor dropped but forgets to prune
        // its round signature: the signature set no longer equals the
        // claimed survivor set, so every honest client aborts
        struct OmitSurvivor;
        impl ServerAdversary for OmitSurvivor {
            fn tamper_announcement(&mut self, _: ClientId, msg: RoundMessage) -> RoundMessage {
                let RoundMessage::SurvivorAnnouncement {
                    mut survivors,
                    mut dropped,
                    round_signatures,
                } = msg
                else {
                    return msg;
                };
                let moved = survivors.pop().unwrap();
                dropped.push(moved);
                dropped.sort_unstable();
                RoundMessage::SurvivorAnnouncement {
                    survivors,
                    dropped,
                    round_signatures,
                }
            }
        }
        let mut params = xnoise_params(5, 3, 2, 8, 1.0);
        params.mode = ThreatMode::Malicious;
        let sampled = params.sampled.clone();
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let (signing, directory) = SigDirectory::generate(&sampled, &mut rng);
        let opts = options(params, 31);
        let inputs = random_inputs(5, 8, 310);
        let mut adversary = OmitSurvivor;
        let result = run_round(
            &opts,
            &inputs,
            Some(&signing),
            Some(&directory),
            Some(&mut adversary),
        );
        assert_eq!(result.client_aborts.len(), 5, "{:?}", result.client_aborts);
        for reason in result.client_aborts.values() {
            assert!(matches!(reason, AbortReason::DropoutOutcomeInvalid(_)));
        }
        assert!(result.aggregate.is_none());
    }

    #[test]
    fn seed_loss_policies() {
        // client 3 vanishes before unmasking, so stage 5 must reconstruct
        // its seeds; two more clients vanish before answering, leaving the
        // collection below threshold
        let params = xnoise_params(5, 3, 2, 8, 1.0);
        let inputs = random_inputs(5, 8, 290);
        let mut opts = options(params, 29);
        opts.dropouts.insert(3, DropStage::BeforeUnmask);
        opts.dropouts.insert(1, DropStage::BeforeSeedShares);
        opts.dropouts.insert(2, DropStage::BeforeSeedShares);

        let aborted = run_round(&opts, &inputs, None, None, None);
        assert!(matches!(
            aborted.server_abort,
            Some(AbortReason::SeedReconstruction(_))
        ));
        assert!(aborted.aggregate.is_none());

        let mut flagged_opts = opts.clone();
        flagged_opts.seed_loss_policy = SeedLossPolicy::FlagOverspend;
        let flagged = run_round(&flagged_opts, &inputs, None, None, None);
        assert!(flagged.server_abort.is_none(), "{:?}", flagged.server_abort);
        assert!(flagged.overspent);
        // the under-removed aggregate is released and still covers the
        // survivors' perturbed updates minus only the disclosed components
        assert!(flagged.aggregate.is_some());
        assert_eq!(
            flagged.unmasked_aggregate.as_ref().unwrap(),
            &flagged.expected_masked_sum
        );
    }

    #[test]
    fn determinism_same_seed_same_result() {
        let params = xnoise_params(6, 3, 2, 32, 1.0);
        let mut opts = options(params, 28);
        opts.dropouts.insert(3, DropStage::BeforeMaskedInput);
        let inputs = random_inputs(6, 32, 280);
        let ra = run_round(&opts, &inputs, None, None, None);
        let rb = run_round(&opts, &inputs, None, None, None);
        assert_eq!(ra.aggregate, rb.aggregate);
        assert_eq!(ra.expected_masked_sum, rb.expected_masked_sum);
        assert_eq!(ra.survivors.u6, rb.survivors.u6);
    }
}
