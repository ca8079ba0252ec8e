//! Fixed-point encoding of real-valued updates into `Z_R`.
//!
//! Values are scaled by `2^frac_bits`, rounded, and reduced modulo
//! `R = 2^modulus_bits`. Decoding centers a residue into
//! `[-R/2, R/2)` before unscaling, so aggregates decode correctly as long
//! as they stay inside that window. Clipping inputs into range is the
//! caller's job.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("modulus bit-width {0} must lie in [2, 62]")]
    BadModulusBits(u32),
    #[error("fractional bits {frac} must be below modulus bits {modulus}")]
    BadFracBits { frac: u32, modulus: u32 },
}

/// Encoder/decoder between reals and residues mod `2^modulus_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    modulus_bits: u32,
    frac_bits: u32,
}

impl FixedPointCodec {
    pub fn new(modulus_bits: u32, frac_bits: u32) -> Result<Self, CodecError> {
        if !(2..=62).contains(&modulus_bits) {
            return Err(CodecError::BadModulusBits(modulus_bits));
        }
        if frac_bits >= modulus_bits {
            return Err(CodecError::BadFracBits {
                frac: frac_bits,
                modulus: modulus_bits,
            });
        }
        Ok(FixedPointCodec {
            modulus_bits,
            frac_bits,
        })
    }

    pub fn modulus(&self) -> u64 {
        1u64 << self.modulus_bits
    }

    pub fn modulus_bits(&self) -> u32 {
        self.modulus_bits
    }

    pub fn scale(&self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    /// Scales, rounds, and wraps one value.
    pub fn encode(&self, x: f64) -> u64 {
        let scaled = (x * self.scale()).round() as i128;
        scaled.rem_euclid(self.modulus() as i128) as u64
    }

    pub fn encode_vec(&self, xs: &[f64]) -> Vec<u64> {
        xs.iter().map(|&x| self.encode(x)).collect()
    }

    pub fn encode_ints(&self, xs: &[i64]) -> Vec<u64> {
        xs.iter()
            .map(|&x| ((x as i128) << self.frac_bits).rem_euclid(self.modulus() as i128) as u64)
            .collect()
    }

    /// Centers a residue into `[-R/2, R/2)` and unscales.
    pub fn decode(&self, v: u64) -> f64 {
        let half = self.modulus() / 2;
        let centered = if v >= half {
            v as i128 - self.modulus() as i128
        } else {
            v as i128
        };
        centered as f64 / self.scale()
    }

    pub fn decode_vec(&self, vs: &[u64]) -> Vec<f64> {
        vs.iter().map(|&v| self.decode(v)).collect()
    }

    pub fn add_mod(&self, a: u64, b: u64) -> u64 {
        (a + b) & (self.modulus() - 1)
    }

    pub fn sub_mod(&self, a: u64, b: u64) -> u64 {
        (a + self.modulus() - b) & (self.modulus() - 1)
    }

    pub fn add_vec_mod(&self, acc: &mut [u64], rhs: &[u64]) {
        for (a, &b) in acc.iter_mut().zip(rhs) {
            *a = self.add_mod(*a, b);
        }
    }

    pub fn sub_vec_mod(&self, acc: &mut [u64], rhs: &[u64]) {
        for (a, &b) in acc.iter_mut().zip(rhs) {
            *a = self.sub_mod(*a, b);
        }
    }
}
