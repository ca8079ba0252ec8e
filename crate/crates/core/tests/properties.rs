//! Property tests for the structural invariants: canonical wire round-trip,
//! chunking identity, sharing round-trip, and field arithmetic.

use proptest::prelude::*;

use dpagg_core::crypto::Signature;
use dpagg_core::field::Field;
use dpagg_core::pipeline::{chunk_vector, concat_chunks};
use dpagg_core::protocol::RoundMessage;
use dpagg_core::shamir::{reconstruct, share, SharingPolicy};

fn signature_strategy() -> impl Strategy<Value = Signature> {
    prop::array::uniform32(any::<u8>()).prop_map(|half| {
        let mut raw = [0u8; 64];
        raw[..32].copy_from_slice(&half);
        raw[32..].copy_from_slice(&half);
        Signature::from_bytes(&raw)
    })
}

fn masked_input_strategy() -> impl Strategy<Value = RoundMessage> {
    (
        prop::collection::vec(any::<u64>(), 0..200),
        prop::option::of(signature_strategy()),
    )
        .prop_map(|(masked, round_signature)| RoundMessage::MaskedInput {
            masked,
            round_signature,
        })
}

fn announcement_strategy() -> impl Strategy<Value = RoundMessage> {
    (
        prop::collection::vec(1..1000u64, 0..20),
        prop::collection::vec(1..1000u64, 0..20),
        prop::option::of(prop::collection::vec((1..1000u64, signature_strategy()), 0..20)),
    )
        .prop_map(|(survivors, dropped, round_signatures)| {
            RoundMessage::SurvivorAnnouncement {
                survivors,
                dropped,
                round_signatures,
            }
        })
}

fn unmask_response_strategy() -> impl Strategy<Value = RoundMessage> {
    let field = Field::default();
    (
        prop::collection::vec((1..100u64, any::<u64>()), 0..20),
        prop::collection::vec((1..100u64, any::<u64>()), 0..20),
        prop::collection::vec((0..16u32, any::<u64>()), 0..8),
    )
        .prop_map(move |(keys, masks, seeds)| RoundMessage::UnmaskResponse {
            key_shares: keys.into_iter().map(|(id, v)| (id, field.elem(v))).collect(),
            mask_shares: masks.into_iter().map(|(id, v)| (id, field.elem(v))).collect(),
            noise_seeds: seeds.into_iter().map(|(k, v)| (k, field.elem(v))).collect(),
        })
}

proptest! {
    #[test]
    fn wire_roundtrip_masked_input(msg in masked_input_strategy()) {
        let bytes = msg.encode();
        prop_assert_eq!(RoundMessage::decode(&bytes, &Field::default()).unwrap(), msg);
    }

    #[test]
    fn wire_roundtrip_announcement(msg in announcement_strategy()) {
        let bytes = msg.encode();
        prop_assert_eq!(RoundMessage::decode(&bytes, &Field::default()).unwrap(), msg);
    }

    #[test]
    fn wire_roundtrip_unmask_response(msg in unmask_response_strategy()) {
        let bytes = msg.encode();
        prop_assert_eq!(RoundMessage::decode(&bytes, &Field::default()).unwrap(), msg);
    }

    #[test]
    fn wire_rejects_truncation(msg in masked_input_strategy()) {
        let bytes = msg.encode();
        if bytes.len() > 1 {
            prop_assert!(RoundMessage::decode(&bytes[..bytes.len() - 1], &Field::default()).is_err());
        }
    }

    #[test]
    fn chunking_is_lossless(values in prop::collection::vec(any::<u64>(), 0..500), m in 1..20u32) {
        let chunks = chunk_vector(&values, m);
        prop_assert_eq!(chunks.len(), m as usize);
        // sizes differ by at most one, longer chunks first
        let sizes: Vec<usize> = chunks.iter().map(Vec::len).collect();
        for w in sizes.windows(2) {
            prop_assert!(w[0] >= w[1] && w[0] - w[1] <= 1);
        }
        prop_assert_eq!(concat_chunks(&chunks), values);
    }

    #[test]
    fn sharing_roundtrip(secret in any::<u64>(), n in 1..8u64, seed in any::<u64>()) {
        use rand::SeedableRng;
        let field = Field::default();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        for t in 1..=n as u32 {
            let policy = SharingPolicy::new(t, (1..=n).collect()).unwrap();
            let shares = share(&field, field.elem(secret), &policy, &mut rng);
            let got = reconstruct(&field, &shares[..t as usize], t).unwrap();
            prop_assert_eq!(got, field.elem(secret));
        }
    }

    #[test]
    fn field_arithmetic_inverts(a in any::<u64>(), b in any::<u64>()) {
        let field = Field::default();
        let (a, b) = (field.elem(a), field.elem(b));
        prop_assert_eq!(field.sub(field.add(a, b), b), a);
        if b.value() != 0 {
            let prod = field.mul(a, b);
            prop_assert_eq!(field.mul(prod, field.inv(b).unwrap()), a);
        }
    }
}
