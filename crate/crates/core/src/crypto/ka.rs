//! Diffie-Hellman key agreement over a fixed 61-bit prime group, composed
//! with SHA-256 to derive the shared secret bytes.
//!
//! Secret keys are exponents below the group modulus, so they fit in the
//! default sharing field and can be Shamir-shared directly for dropout
//! recovery.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CryptoError;
use crate::field::{Field, FieldElement};

/// Group modulus: the default sharing-field prime (2^61 + 15).
const GROUP_PRIME: u64 = Field::DEFAULT_PRIME;
/// Generator of the full multiplicative group mod `GROUP_PRIME`.
const GENERATOR: u64 = 5;

fn mul_mod(a: u64, b: u64) -> u64 {
    ((a as u128 * b as u128) % GROUP_PRIME as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1u64;
    base %= GROUP_PRIME;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base);
        }
        base = mul_mod(base, base);
        exp >>= 1;
    }
    acc
}

/// Public half of a key pair: a group element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KaPublicKey(pub u64);

/// Secret exponent. Kept out of Debug output on purpose.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct KaSecretKey(u64);

impl std::fmt::Debug for KaSecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("KaSecretKey(..)")
    }
}

impl KaSecretKey {
    /// View as an element of `field` for secret sharing. The exponent is
    /// below the group modulus, so any field at least that large keeps it
    /// intact.
    pub fn as_field_element(&self, field: &Field) -> FieldElement {
        field.elem(self.0)
    }

    /// Rebuilds a secret key from a reconstructed field element.
    pub fn from_field_element(elem: FieldElement) -> Self {
        KaSecretKey(elem.value())
    }
}

/// A key-agreement key pair.
#[derive(Debug, Clone, Copy)]
pub struct KaKeyPair {
    pub public: KaPublicKey,
    pub secret: KaSecretKey,
}

/// 32-byte shared secret, used as an AE key or a pairwise PRG seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SharedSecret(pub [u8; 32]);

impl SharedSecret {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// Generates a fresh key pair from the caller's generator.
pub fn ka_gen<R: Rng>(rng: &mut R) -> KaKeyPair {
    let sk = rng.random_range(1..GROUP_PRIME - 1);
    KaKeyPair {
        public: KaPublicKey(pow_mod(GENERATOR, sk)),
        secret: KaSecretKey(sk),
    }
}

/// Derives the shared secret for `(sk, pk)`. Symmetric by construction:
/// `agree(sk_u, pk_v) = agree(sk_v, pk_u) = H(g^{sk_u * sk_v})`.
pub fn ka_agree(sk: &KaSecretKey, pk: &KaPublicKey) -> Result<SharedSecret, CryptoError> {
    if pk.0 == 0 || pk.0 >= GROUP_PRIME {
        return Err(CryptoError::MalformedKey(format!(
            "public key {} outside group",
            pk.0
        )));
    }
    let shared = pow_mod(pk.0, sk.0);
    let mut h = Sha256::new();
    h.update(b"ka-agree");
    h.update(shared.to_le_bytes());
    Ok(SharedSecret(h.finalize().into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn agreement_is_symmetric() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        for _ in 0..50 {
            let a = ka_gen(&mut rng);
            let b = ka_gen(&mut rng);
            assert_eq!(
                ka_agree(&a.secret, &b.public).unwrap(),
                ka_agree(&b.secret, &a.public).unwrap()
            );
        }
    }

    #[test]
    fn self_agreement_is_well_defined() {
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let a = ka_gen(&mut rng);
        let s1 = ka_agree(&a.secret, &a.public).unwrap();
        let s2 = ka_agree(&a.secret, &a.public).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn distinct_pairs_yield_distinct_secrets() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let keys: Vec<_> = (0..46).map(|_| ka_gen(&mut rng)).collect();
        let mut seen = std::collections::BTreeSet::new();
        let mut pairs = 0;
        for i in 0..keys.len() {
            for j in (i + 1)..keys.len() {
                let s = ka_agree(&keys[i].secret, &keys[j].public).unwrap();
                assert!(seen.insert(s.0), "collision between pairs");
                pairs += 1;
            }
        }
        assert!(pairs >= 1000);
    }

    #[test]
    fn malformed_key_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(24);
        let a = ka_gen(&mut rng);
        assert!(ka_agree(&a.secret, &KaPublicKey(0)).is_err());
        assert!(ka_agree(&a.secret, &KaPublicKey(GROUP_PRIME)).is_err());
    }

    #[test]
    fn secret_survives_field_roundtrip() {
        let mut rng = ChaCha20Rng::seed_from_u64(25);
        let field = Field::default();
        let a = ka_gen(&mut rng);
        let elem = a.secret.as_field_element(&field);
        let back = KaSecretKey::from_field_element(elem);
        assert_eq!(back, a.secret);
        // the restored key agrees exactly like the original
        let b = ka_gen(&mut rng);
        assert_eq!(
            ka_agree(&back, &b.public).unwrap(),
            ka_agree(&a.secret, &b.public).unwrap()
        );
    }
}
