//! Simulator-grade cryptographic primitives.
//!
//! These honor the semantic contracts the aggregation protocol relies on
//! (key-agreement symmetry, authenticated-encryption integrity, signature
//! unforgeability against the simulated adversaries, PRG determinism) while
//! staying fully deterministic under seeded randomness, so protocol runs
//! replay bit for bit. They are not hardened against real attackers.

mod ae;
mod ka;
mod prg;
mod sig;

pub use ae::{ae_decrypt, ae_encrypt, Ciphertext};
pub use ka::{ka_agree, ka_gen, KaKeyPair, KaPublicKey, KaSecretKey, SharedSecret};
pub use prg::{prg_expand, prg_sample_noise, NoiseDistribution, PrgSeed};
pub use sig::{sig_gen, sig_sign, sig_verify, SigKeyPair, SigPublicKey, Signature};

use thiserror::Error;

/// Errors raised by the primitive shims.
#[derive(Debug, Error, PartialEq)]
pub enum CryptoError {
    /// Public key outside the group, or otherwise unusable.
    #[error("malformed key: {0}")]
    MalformedKey(String),
    /// Ciphertext failed authentication (wrong key or tampered payload).
    #[error("authentication failure on ciphertext from {sender} to {receiver}")]
    AuthFailure { sender: u64, receiver: u64 },
    /// PRG expansion modulus below 2.
    #[error("PRG modulus {0} must be at least 2")]
    BadModulus(u64),
    /// Negative variance requested from the noise sampler.
    #[error("noise variance must be non-negative, got {0}")]
    NegativeVariance(f64),
}
