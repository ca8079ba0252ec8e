//! Seeded pseudorandom expansion and noise sampling.
//!
//! Both the mask expander and the noise sampler are driven by a ChaCha20
//! stream keyed from a SHA-256 digest of the seed material plus a domain
//! tag. Identical inputs give identical outputs on every call site, which is
//! what lets the server regenerate client-side masks and noise exactly.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CryptoError;
use crate::field::FieldElement;

/// Seed material for the PRG. Construction fixes the byte encoding so both
/// ends of the protocol derive the same stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrgSeed(Vec<u8>);

impl PrgSeed {
    pub fn from_bytes(bytes: &[u8]) -> Self {
        PrgSeed(bytes.to_vec())
    }

    /// Field elements (self-mask seeds `b_u`, noise seeds `g_{u,k}`) seed
    /// the PRG through their little-endian encoding.
    pub fn from_field(elem: FieldElement) -> Self {
        PrgSeed(elem.to_le_bytes().to_vec())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    fn stream(&self, domain: &[u8]) -> ChaCha20Rng {
        let mut h = Sha256::new();
        h.update(domain);
        h.update((self.0.len() as u64).to_le_bytes());
        h.update(&self.0);
        ChaCha20Rng::from_seed(h.finalize().into())
    }
}

/// Expands a seed into `len` integers uniform over `Z_R`.
pub fn prg_expand(seed: &PrgSeed, len: usize, modulus: u64) -> Result<Vec<u64>, CryptoError> {
    if modulus < 2 {
        return Err(CryptoError::BadModulus(modulus));
    }
    let mut rng = seed.stream(b"prg-expand");
    Ok((0..len).map(|_| rng.random_range(0..modulus)).collect())
}

/// The noise family χ. Both variants are closed under the summation rules
/// the enforcement scheme needs (the rounded variant only approximately,
/// which masking-time discretization absorbs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    Gaussian,
    /// Gaussian rounded to the nearest integer.
    RoundedGaussian,
}

/// Draws `len` i.i.d. samples from χ(variance), deterministically per seed.
///
/// Gaussian draws use Box-Muller over the PRG's uniform output, so client
/// and server reproduce each other's vectors exactly.
pub fn prg_sample_noise(
    seed: &PrgSeed,
    variance: f64,
    len: usize,
    distribution: NoiseDistribution,
) -> Result<Vec<f64>, CryptoError> {
    if !(variance >= 0.0) {
        return Err(CryptoError::NegativeVariance(variance));
    }
    if variance == 0.0 {
        return Ok(vec![0.0; len]);
    }
    let mut rng = seed.stream(b"prg-noise");
    let sd = variance.sqrt();
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        // u1 in (0, 1], u2 in [0, 1)
        let u1 = ((rng.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64;
        let u2 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(sd * r * theta.cos());
        if out.len() < len {
            out.push(sd * r * theta.sin());
        }
    }
    if distribution == NoiseDistribution::RoundedGaussian {
        for v in &mut out {
            *v = v.round();
        }
    }
    Ok(out)
}
