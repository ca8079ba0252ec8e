//! Prime-field arithmetic used for secret sharing and seed bookkeeping.
//!
//! All values live in `[0, p)` for a configurable prime modulus `p`. The
//! default modulus is the smallest prime above 2^61, which leaves headroom
//! for 61-bit payloads (key-agreement secrets, PRG seeds) while keeping
//! products inside `u128`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by field construction and arithmetic.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FieldError {
    /// The requested modulus is not a prime number.
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    /// The requested modulus is too small to be useful.
    #[error("modulus {0} is smaller than 2")]
    TooSmall(u64),
    /// Division by the additive identity.
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
}

/// A single field value. Always lives in `[0, p)` for the [`Field`] that
/// produced it; arithmetic goes through the field context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FieldElement(u64);

impl FieldElement {
    /// Raw residue in `[0, p)`.
    pub fn value(self) -> u64 {
        self.0
    }

    /// Little-endian byte encoding, used when a field element seeds a PRG.
    pub fn to_le_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }
}

/// A prime field `GF(p)` with `p < 2^62`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    prime: u64,
}

impl Default for Field {
    fn default() -> Self {
        Field {
            prime: Self::DEFAULT_PRIME,
        }
    }
}

impl Field {
    /// Smallest prime above 2^61 (= 2^61 + 15).
    pub const DEFAULT_PRIME: u64 = 2_305_843_009_213_693_967;

    /// Builds a field over `prime`, verifying primality.
    pub fn new(prime: u64) -> Result<Self, FieldError> {
        if prime < 2 {
            return Err(FieldError::TooSmall(prime));
        }
        if !is_prime_u64(prime) {
            return Err(FieldError::NotPrime(prime));
        }
        Ok(Field { prime })
    }

    /// The modulus.
    pub fn prime(&self) -> u64 {
        self.prime
    }

    /// Reduces an arbitrary integer into the field.
    pub fn elem(&self, value: u64) -> FieldElement {
        FieldElement(value % self.prime)
    }

    /// Additive identity.
    pub fn zero(&self) -> FieldElement {
        FieldElement(0)
    }

    /// Multiplicative identity.
    pub fn one(&self) -> FieldElement {
        FieldElement(1 % self.prime)
    }

    pub fn add(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        let s = a.0 as u128 + b.0 as u128;
        FieldElement((s % self.prime as u128) as u64)
    }

    pub fn sub(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        let s = a.0 as u128 + (self.prime - b.0) as u128;
        FieldElement((s % self.prime as u128) as u64)
    }

    pub fn neg(&self, a: FieldElement) -> FieldElement {
        if a.0 == 0 {
            a
        } else {
            FieldElement(self.prime - a.0)
        }
    }

    pub fn mul(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        let p = a.0 as u128 * b.0 as u128;
        FieldElement((p % self.prime as u128) as u64)
    }

    /// Modular exponentiation by squaring.
    pub fn pow(&self, base: FieldElement, mut exp: u64) -> FieldElement {
        let mut acc = self.one();
        let mut base = base;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat's little theorem.
    pub fn inv(&self, a: FieldElement) -> Result<FieldElement, FieldError> {
        if a.0 == 0 {
            return Err(FieldError::ZeroInverse);
        }
        Ok(self.pow(a, self.prime - 2))
    }

    /// Uniform random element from the given generator.
    pub fn random_elem<R: rand::Rng>(&self, rng: &mut R) -> FieldElement {
        FieldElement(rng.random_range(0..self.prime))
    }
}

/// Deterministic Miller-Rabin, exact for all `u64` inputs.
fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == p {
            return true;
        }
        if n % p == 0 {
            return false;
        }
    }
    let mut d = n - 1;
    let mut r = 0;
    while d % 2 == 0 {
        d /= 2;
        r += 1;
    }
    let mul = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut base: u64, mut exp: u64| {
        let mut acc = 1u64;
        base %= n;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = mul(acc, base);
            }
            base = mul(base, base);
            exp >>= 1;
        }
        acc
    };
    'outer: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 0..r - 1 {
            x = mul(x, x);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}
