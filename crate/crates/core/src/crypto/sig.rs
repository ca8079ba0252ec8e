//! Signatures over canonical message bytes, backed by Ed25519.
//!
//! Key generation is seeded through the caller's RNG so experiment replays
//! produce identical signatures (Ed25519 signing itself is deterministic).

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::Rng;
/// Verification key, distributed through the simulated PKI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SigPublicKey(VerifyingKey);

impl SigPublicKey {
    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }
}

/// A detached signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Signature(ed25519_dalek::Signature);

impl Signature {
    pub fn to_bytes(&self) -> [u8; 64] {
        self.0.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8; 64]) -> Self {
        Signature(ed25519_dalek::Signature::from_bytes(bytes))
    }
}

/// Signing key pair.
#[derive(Clone)]
pub struct SigKeyPair {
    signing: SigningKey,
    public: SigPublicKey,
}

impl std::fmt::Debug for SigKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SigKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl SigKeyPair {
    pub fn public(&self) -> SigPublicKey {
        self.public
    }
}

/// Generates a signing key pair from the caller's RNG.
pub fn sig_gen<R: Rng>(rng: &mut R) -> SigKeyPair {
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);
    let signing = SigningKey::from_bytes(&seed);
    let public = SigPublicKey(signing.verifying_key());
    SigKeyPair { signing, public }
}

/// Signs the exact message bytes.
pub fn sig_sign(keys: &SigKeyPair, message: &[u8]) -> Signature {
    Signature(keys.signing.sign(message))
}

/// True only for the signer's key on the exact message.
pub fn sig_verify(public: &SigPublicKey, message: &[u8], signature: &Signature) -> bool {
    public.0.verify(message, &signature.0).is_ok()
}
