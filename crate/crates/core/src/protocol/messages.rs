//! Protocol message types and their canonical encodings.
//!
//! Client-to-server messages cover key advertisement, encrypted share
//! distribution, masked inputs, consistency acknowledgements, unmask
//! responses, and seed-share responses; server-to-client messages carry the
//! key roster, routed ciphertexts, the dropout outcome, the unmask request,
//! and the seed-share request. Every message carries sender, receiver,
//! round, and stage in its envelope.

use crate::crypto::{Ciphertext, KaPublicKey, Signature};
use crate::field::FieldElement;

use super::wire::{Reader, WireError, Writer};
use super::{ClientId, RoundIndex};

/// Protocol stages in wire order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    AdvertiseKeys = 0,
    ShareKeys = 1,
    MaskedInput = 2,
    ConsistencyCheck = 3,
    Unmask = 4,
    NoiseRemoval = 5,
}

impl Stage {
    pub fn from_wire(tag: u8) -> Result<Self, WireError> {
        Ok(match tag {
            0 => Stage::AdvertiseKeys,
            1 => Stage::ShareKeys,
            2 => Stage::MaskedInput,
            3 => Stage::ConsistencyCheck,
            4 => Stage::Unmask,
            5 => Stage::NoiseRemoval,
            _ => return Err(WireError::Malformed("stage tag")),
        })
    }
}

/// One roster row: a client's advertised public keys and, in malicious
/// mode, its signature over them.
#[derive(Debug, Clone, PartialEq)]
pub struct RosterEntry {
    pub id: ClientId,
    pub encryption_key: KaPublicKey,
    pub masking_key: KaPublicKey,
    pub signature: Option<Signature>,
}

/// All protocol messages.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundMessage {
    /// Client -> server, stage 0.
    AdvertiseKeys {
        encryption_key: KaPublicKey,
        masking_key: KaPublicKey,
        signature: Option<Signature>,
    },
    /// Server -> client, end of stage 0.
    KeyRoster { entries: Vec<RosterEntry> },
    /// Client -> server, stage 1: ciphertexts addressed to each peer.
    EncryptedShares {
        ciphertexts: Vec<(ClientId, Ciphertext)>,
    },
    /// Server -> client, end of stage 1: ciphertexts addressed to it.
    ShareDelivery {
        ciphertexts: Vec<(ClientId, Ciphertext)>,
    },
    /// Client -> server, stage 2. `round_signature` signs the round index
    /// (malicious mode) so the dropout outcome can be verified later.
    MaskedInput {
        masked: Vec<u64>,
        round_signature: Option<Signature>,
    },
    /// Server -> client, end of stage 2: the dropout outcome. In malicious
    /// mode `round_signatures` carries every signature the server received.
    SurvivorAnnouncement {
        survivors: Vec<ClientId>,
        dropped: Vec<ClientId>,
        round_signatures: Option<Vec<(ClientId, Signature)>>,
    },
    /// Client -> server, stage 3 (malicious mode): signature over the
    /// round index and survivor list.
    ConsistencyAck { signature: Signature },
    /// Server -> client, stage 4 request.
    UnmaskRequest {
        participants: Vec<ClientId>,
        consistency_signatures: Option<Vec<(ClientId, Signature)>>,
    },
    /// Client -> server, stage 4: key shares for dropped clients, self-mask
    /// shares for survivors, and the sender's own removable noise seeds.
    UnmaskResponse {
        key_shares: Vec<(ClientId, FieldElement)>,
        mask_shares: Vec<(ClientId, FieldElement)>,
        noise_seeds: Vec<(u32, FieldElement)>,
    },
    /// Server -> client, stage 5 request.
    SeedShareRequest { responders: Vec<ClientId> },
    /// Client -> server, stage 5: shares of missing clients' noise seeds.
    SeedShareResponse {
        seed_shares: Vec<(ClientId, u32, FieldElement)>,
    },
}

const TAG_ADVERTISE: u8 = 1;
const TAG_ROSTER: u8 = 2;
const TAG_ENC_SHARES: u8 = 3;
const TAG_DELIVERY: u8 = 4;
const TAG_MASKED: u8 = 5;
const TAG_ANNOUNCE: u8 = 6;
const TAG_CONSISTENCY: u8 = 7;
const TAG_UNMASK_REQ: u8 = 8;
const TAG_UNMASK_RESP: u8 = 9;
const TAG_SEED_REQ: u8 = 10;
const TAG_SEED_RESP: u8 = 11;

fn put_opt_signature(w: &mut Writer, sig: &Option<Signature>) {
    match sig {
        None => w.put_u8(0),
        Some(s) => {
            w.put_u8(1);
            w.put_fixed(&s.to_bytes());
        }
    }
}

fn take_opt_signature(r: &mut Reader) -> Result<Option<Signature>, WireError> {
    match r.take_u8()? {
        0 => Ok(None),
        1 => {
            let raw: [u8; 64] = r
                .take_fixed(64)?
                .try_into()
                .map_err(|_| WireError::Malformed("signature length"))?;
            Ok(Some(Signature::from_bytes(&raw)))
        }
        _ => Err(WireError::Malformed("option flag")),
    }
}

fn put_signature_list(w: &mut Writer, sigs: &Option<Vec<(ClientId, Signature)>>) {
    match sigs {
        None => w.put_u8(0),
        Some(list) => {
            w.put_u8(1);
            w.put_u64(list.len() as u64);
            for (id, sig) in list {
                w.put_u64(*id);
                w.put_fixed(&sig.to_bytes());
            }
        }
    }
}

fn take_signature_list(r: &mut Reader) -> Result<Option<Vec<(ClientId, Signature)>>, WireError> {
    match r.take_u8()? {
        0 => Ok(None),
        1 => {
            let len = r.take_u64()? as usize;
            let mut out = Vec::with_capacity(len.min(1 << 16));
            for _ in 0..len {
                let id = r.take_u64()?;
                let raw: [u8; 64] = r
                    .take_fixed(64)?
                    .try_into()
                    .map_err(|_| WireError::Malformed("signature length"))?;
                out.push((id, Signature::from_bytes(&raw)));
            }
            Ok(Some(out))
        }
        _ => Err(WireError::Malformed("option flag")),
    }
}

fn put_ciphertext(w: &mut Writer, ct: &Ciphertext) {
    w.put_u64(ct.sender);
    w.put_u64(ct.receiver);
    w.put_fixed(&ct.nonce);
    w.put_bytes(&ct.body);
    w.put_fixed(&ct.tag);
}

fn take_ciphertext(r: &mut Reader) -> Result<Ciphertext, WireError> {
    let sender = r.take_u64()?;
    let receiver = r.take_u64()?;
    let nonce: [u8; 16] = r.take_fixed(16)?.try_into().unwrap();
    let body = r.take_bytes()?.to_vec();
    let tag: [u8; 32] = r.take_fixed(32)?.try_into().unwrap();
    Ok(Ciphertext {
        sender,
        receiver,
        nonce,
        body,
        tag,
    })
}

fn put_ciphertext_list(w: &mut Writer, list: &[(ClientId, Ciphertext)]) {
    w.put_u64(list.len() as u64);
    for (id, ct) in list {
        w.put_u64(*id);
        put_ciphertext(w, ct);
    }
}

fn take_ciphertext_list(r: &mut Reader) -> Result<Vec<(ClientId, Ciphertext)>, WireError> {
    let len = r.take_u64()? as usize;
    let mut out = Vec::with_capacity(len.min(1 << 16));
    for _ in 0..len {
        let id = r.take_u64()?;
        out.push((id, take_ciphertext(r)?));
    }
    Ok(out)
}

impl RoundMessage {
    /// Canonical byte encoding: tag byte, then fields in declaration order.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            RoundMessage::AdvertiseKeys {
                encryption_key,
                masking_key,
                signature,
            } => {
                w.put_u8(TAG_ADVERTISE);
                w.put_u64(encryption_key.0);
                w.put_u64(masking_key.0);
                put_opt_signature(&mut w, signature);
            }
            RoundMessage::KeyRoster { entries } => {
                w.put_u8(TAG_ROSTER);
                w.put_u64(entries.len() as u64);
                for e in entries {
                    w.put_u64(e.id);
                    w.put_u64(e.encryption_key.0);
                    w.put_u64(e.masking_key.0);
                    put_opt_signature(&mut w, &e.signature);
                }
            }
            RoundMessage::EncryptedShares { ciphertexts } => {
                w.put_u8(TAG_ENC_SHARES);
                put_ciphertext_list(&mut w, ciphertexts);
            }
            RoundMessage::ShareDelivery { ciphertexts } => {
                w.put_u8(TAG_DELIVERY);
                put_ciphertext_list(&mut w, ciphertexts);
            }
            RoundMessage::MaskedInput {
                masked,
                round_signature,
            } => {
                w.put_u8(TAG_MASKED);
                w.put_u64_list(masked);
                put_opt_signature(&mut w, round_signature);
            }
            RoundMessage::SurvivorAnnouncement {
                survivors,
                dropped,
                round_signatures,
            } => {
                w.put_u8(TAG_ANNOUNCE);
                w.put_u64_list(survivors);
                w.put_u64_list(dropped);
                put_signature_list(&mut w, round_signatures);
            }
            RoundMessage::ConsistencyAck { signature } => {
                w.put_u8(TAG_CONSISTENCY);
                w.put_fixed(&signature.to_bytes());
            }
            RoundMessage::UnmaskRequest {
                participants,
                consistency_signatures,
            } => {
                w.put_u8(TAG_UNMASK_REQ);
                w.put_u64_list(participants);
                put_signature_list(&mut w, consistency_signatures);
            }
            RoundMessage::UnmaskResponse {
                key_shares,
                mask_shares,
                noise_seeds,
            } => {
                w.put_u8(TAG_UNMASK_RESP);
                w.put_u64(key_shares.len() as u64);
                for (id, v) in key_shares {
                    w.put_u64(*id);
                    w.put_u64(v.value());
                }
                w.put_u64(mask_shares.len() as u64);
                for (id, v) in mask_shares {
                    w.put_u64(*id);
                    w.put_u64(v.value());
                }
                w.put_u64(noise_seeds.len() as u64);
                for (k, v) in noise_seeds {
                    w.put_u32(*k);
                    w.put_u64(v.value());
                }
            }
            RoundMessage::SeedShareRequest { responders } => {
                w.put_u8(TAG_SEED_REQ);
                w.put_u64_list(responders);
            }
            RoundMessage::SeedShareResponse { seed_shares } => {
                w.put_u8(TAG_SEED_RESP);
                w.put_u64(seed_shares.len() as u64);
                for (id, k, v) in seed_shares {
                    w.put_u64(*id);
                    w.put_u32(*k);
                    w.put_u64(v.value());
                }
            }
        }
        w.finish()
    }

    /// Decodes a canonical encoding; rejects trailing bytes.
    pub fn decode(bytes: &[u8], field: &crate::field::Field) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let msg = Self::decode_inner(&mut r, field)?;
        r.finish()?;
        Ok(msg)
    }

    fn decode_inner(r: &mut Reader, field: &crate::field::Field) -> Result<Self, WireError> {
        let elem = |v: u64| field.elem(v);
        match r.take_u8()? {
            TAG_ADVERTISE => Ok(RoundMessage::AdvertiseKeys {
                encryption_key: KaPublicKey(r.take_u64()?),
                masking_key: KaPublicKey(r.take_u64()?),
                signature: take_opt_signature(r)?,
            }),
            TAG_ROSTER => {
                let len = r.take_u64()? as usize;
                let mut entries = Vec::with_capacity(len.min(1 << 16));
                for _ in 0..len {
                    entries.push(RosterEntry {
                        id: r.take_u64()?,
                        encryption_key: KaPublicKey(r.take_u64()?),
                        masking_key: KaPublicKey(r.take_u64()?),
                        signature: take_opt_signature(r)?,
                    });
                }
                Ok(RoundMessage::KeyRoster { entries })
            }
            TAG_ENC_SHARES => Ok(RoundMessage::EncryptedShares {
                ciphertexts: take_ciphertext_list(r)?,
            }),
            TAG_DELIVERY => Ok(RoundMessage::ShareDelivery {
                ciphertexts: take_ciphertext_list(r)?,
            }),
            TAG_MASKED => Ok(RoundMessage::MaskedInput {
                masked: r.take_u64_list()?,
                round_signature: take_opt_signature(r)?,
            }),
            TAG_ANNOUNCE => Ok(RoundMessage::SurvivorAnnouncement {
                survivors: r.take_u64_list()?,
                dropped: r.take_u64_list()?,
                round_signatures: take_signature_list(r)?,
            }),
            TAG_CONSISTENCY => {
                let raw: [u8; 64] = r
                    .take_fixed(64)?
                    .try_into()
                    .map_err(|_| WireError::Malformed("signature length"))?;
                Ok(RoundMessage::ConsistencyAck {
                    signature: Signature::from_bytes(&raw),
                })
            }
            TAG_UNMASK_REQ => Ok(RoundMessage::UnmaskRequest {
                participants: r.take_u64_list()?,
                consistency_signatures: take_signature_list(r)?,
            }),
            TAG_UNMASK_RESP => {
                let n = r.take_u64()? as usize;
                let mut key_shares = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    let id = r.take_u64()?;
                    key_shares.push((id, elem(r.take_u64()?)));
                }
                let n = r.take_u64()? as usize;
                let mut mask_shares = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    let id = r.take_u64()?;
                    mask_shares.push((id, elem(r.take_u64()?)));
                }
                let n = r.take_u64()? as usize;
                let mut noise_seeds = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    let k = r.take_u32()?;
                    noise_seeds.push((k, elem(r.take_u64()?)));
                }
                Ok(RoundMessage::UnmaskResponse {
                    key_shares,
                    mask_shares,
                    noise_seeds,
                })
            }
            TAG_SEED_REQ => Ok(RoundMessage::SeedShareRequest {
                responders: r.take_u64_list()?,
            }),
            TAG_SEED_RESP => {
                let n = r.take_u64()? as usize;
                let mut seed_shares = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    let id = r.take_u64()?;
                    let k = r.take_u32()?;
                    seed_shares.push((id, k, elem(r.take_u64()?)));
                }
                Ok(RoundMessage::SeedShareResponse { seed_shares })
            }
            tag => Err(WireError::BadTag(tag)),
        }
    }
}

/// Canonical bytes a client signs over its advertised keys.
pub fn advertise_payload(encryption_key: &KaPublicKey, masking_key: &KaPublicKey) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_bytes(b"advertise");
    w.put_u64(encryption_key.0);
    w.put_u64(masking_key.0);
    w.finish()
}

/// Canonical bytes a client signs to attest it reached masked-input
/// submission in this round.
pub fn round_payload(round: RoundIndex) -> Vec<u8> {
    let mut w = Writer::new();
    w.put_bytes(b"round");
    w.put_u64(round);
    w.finish()
}

/// Canonical bytes of the consistency check: round index and the survivor
/// list in ascending order.
pub fn consistency_payload(round: RoundIndex, survivors: &[ClientId]) -> Vec<u8> {
    let mut sorted = survivors.to_vec();
    sorted.sort_unstable();
    let mut w = Writer::new();
    w.put_bytes(b"consistency");
    w.put_u64(round);
    w.put_u64_list(&sorted);
    w.finish()
}

/// Plaintext body of an encrypted share bundle from `sender` to
/// `receiver`: addressing, key share, self-mask share, then any noise-seed
/// shares in component order.
#[derive(Debug, Clone, PartialEq)]
pub struct SharePayload {
    pub sender: ClientId,
    pub receiver: ClientId,
    pub key_share: FieldElement,
    pub mask_share: FieldElement,
    pub seed_shares: Vec<FieldElement>,
}

impl SharePayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put_u64(self.sender);
        w.put_u64(self.receiver);
        w.put_u64(self.key_share.value());
        w.put_u64(self.mask_share.value());
        w.put_u64_list(&self.seed_shares.iter().map(|s| s.value()).collect::<Vec<_>>());
        w.finish()
    }

    pub fn decode(bytes: &[u8], field: &crate::field::Field) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let payload = SharePayload {
            sender: r.take_u64()?,
            receiver: r.take_u64()?,
            key_share: field.elem(r.take_u64()?),
            mask_share: field.elem(r.take_u64()?),
            seed_shares: r
                .take_u64_list()?
                .into_iter()
                .map(|v| field.elem(v))
                .collect(),
        };
        r.finish()?;
        Ok(payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;

    #[test]
    fn roundtrip_every_variant() {
        let field = Field::default();
        let ct = Ciphertext {
            sender: 1,
            receiver: 2,
            nonce: [7; 16],
            body: vec![1, 2, 3],
            tag: [9; 32],
        };
        let sig = Signature::from_bytes(&[5u8; 64]);
        let msgs = vec![
            RoundMessage::AdvertiseKeys {
                encryption_key: KaPublicKey(11),
                masking_key: KaPublicKey(22),
                signature: Some(sig),
            },
            RoundMessage::KeyRoster {
                entries: vec![RosterEntry {
                    id: 3,
                    encryption_key: KaPublicKey(1),
                    masking_key: KaPublicKey(2),
                    signature: None,
                }],
            },
            RoundMessage::EncryptedShares {
                ciphertexts: vec![(2, ct.clone())],
            },
            RoundMessage::ShareDelivery {
                ciphertexts: vec![(1, ct)],
            },
            RoundMessage::MaskedInput {
                masked: vec![0, 1, u64::MAX],
                round_signature: None,
            },
            RoundMessage::SurvivorAnnouncement {
                survivors: vec![1, 2],
                dropped: vec![3],
                round_signatures: Some(vec![(1, sig), (2, sig)]),
            },
            RoundMessage::ConsistencyAck { signature: sig },
            RoundMessage::UnmaskRequest {
                participants: vec![1, 2],
                consistency_signatures: None,
            },
            RoundMessage::UnmaskResponse {
                key_shares: vec![(3, field.elem(77))],
                mask_shares: vec![(1, field.elem(88)), (2, field.elem(99))],
                noise_seeds: vec![(1, field.elem(123))],
            },
            RoundMessage::SeedShareRequest {
                responders: vec![1, 2, 4],
            },
            RoundMessage::SeedShareResponse {
                seed_shares: vec![(2, 1, field.elem(5)), (2, 2, field.elem(6))],
            },
        ];
        for msg in msgs {
            let bytes = msg.encode();
            let back = RoundMessage::decode(&bytes, &field).unwrap();
            assert_eq!(back, msg);
        }
    }

    #[test]
    fn encoding_is_byte_stable() {
        // frozen golden bytes: the wire layout must not drift
        let msg = RoundMessage::MaskedInput {
            masked: vec![1, 2],
            round_signature: None,
        };
        assert_eq!(
            hex::encode(msg.encode()),
            "0502000000000000000100000000000000020000000000000000"
        );
        let msg = RoundMessage::SeedShareRequest {
            responders: vec![7],
        };
        assert_eq!(
            hex::encode(msg.encode()),
            "0a01000000000000000700000000000000"
        );
    }

    #[test]
    fn trailing_bytes_rejected() {
        let field = Field::default();
        let mut bytes = RoundMessage::SeedShareRequest { responders: vec![] }.encode();
        bytes.push(0);
        assert_eq!(
            RoundMessage::decode(&bytes, &field),
            Err(WireError::TrailingBytes)
        );
        assert_eq!(
            RoundMessage::decode(&[42], &field),
            Err(WireError::BadTag(42))
        );
    }

    #[test]
    fn share_payload_roundtrip() {
        let field = Field::default();
        let p = SharePayload {
            sender: 4,
            receiver: 9,
            key_share: field.elem(100),
            mask_share: field.elem(200),
            seed_shares: vec![field.elem(1), field.elem(2), field.elem(3)],
        };
        assert_eq!(SharePayload::decode(&p.encode(), &field).unwrap(), p);
    }

    #[test]
    fn consistency_payload_sorts_survivors() {
        assert_eq!(
            consistency_payload(3, &[5, 1, 9]),
            consistency_payload(3, &[9, 5, 1])
        );
        assert_ne!(consistency_payload(3, &[1]), consistency_payload(4, &[1]));
    }
}
