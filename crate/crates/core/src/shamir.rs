//! Shamir t-out-of-n secret sharing over a prime field.
//!
//! Shares are evaluations of a random degree `t-1` polynomial whose constant
//! term is the secret; the evaluation points are the participant ids, which
//! are never zero (zero is reserved for the secret itself).

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, FieldElement};

/// Errors raised while sharing or reconstructing secrets.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShareError {
    /// Threshold of zero, or larger than the participant count.
    #[error("invalid policy: threshold {threshold} with {participants} participants")]
    InvalidPolicy { threshold: u32, participants: usize },
    /// Participant id 0 would collide with the secret's evaluation point.
    #[error("participant id 0 is reserved for the secret")]
    ZeroParticipant,
    /// Fewer shares than the reconstruction threshold.
    #[error("got {got} shares, need at least {need}")]
    InsufficientShares { got: usize, need: u32 },
    /// Two shares claim the same evaluation point.
    #[error("duplicate share index {0}")]
    DuplicateIndex(u64),
}

/// Who receives shares and how many of them reconstruct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingPolicy {
    threshold: u32,
    participant_ids: BTreeSet<u64>,
}

impl SharingPolicy {
    /// Validates `1 <= threshold <= |ids|` and that no id is zero.
    pub fn new(threshold: u32, participant_ids: BTreeSet<u64>) -> Result<Self, ShareError> {
        if threshold == 0 || threshold as usize > participant_ids.len() {
            return Err(ShareError::InvalidPolicy {
                threshold,
                participants: participant_ids.len(),
            });
        }
        if participant_ids.contains(&0) {
            return Err(ShareError::ZeroParticipant);
        }
        Ok(SharingPolicy {
            threshold,
            participant_ids,
        })
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn participant_ids(&self) -> &BTreeSet<u64> {
        &self.participant_ids
    }
}

/// One participant's piece of a shared secret.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretShare {
    pub holder_index: u64,
    pub value: FieldElement,
}

/// Splits `secret` into one share per participant; any `threshold` of them
/// reconstruct it.
pub fn share<R: Rng>(
    field: &Field,
    secret: FieldElement,
    policy: &SharingPolicy,
    rng: &mut R,
) -> Vec<SecretShare> {
    // coefficients[0] is the secret; the rest are uniform.
    let mut coefficients = Vec::with_capacity(policy.threshold as usize);
    coefficients.push(secret);
    for _ in 1..policy.threshold {
        coefficients.push(field.random_elem(rng));
    }
    policy
        .participant_ids
        .iter()
        .map(|&id| {
            let x = field.elem(id);
            // Horner evaluation.
            let mut acc = field.zero();
            for &c in coefficients.iter().rev() {
                acc = field.add(field.mul(acc, x), c);
            }
            SecretShare {
                holder_index: id,
                value: acc,
            }
        })
        .collect()
}

/// Recovers the secret from at least `threshold` shares with distinct
/// indices, by Lagrange interpolation at zero.
pub fn reconstruct(
    field: &Field,
    shares: &[SecretShare],
    threshold: u32,
) -> Result<FieldElement, ShareError> {
    if shares.len() < threshold as usize {
        return Err(ShareError::InsufficientShares {
            got: shares.len(),
            need: threshold,
        });
    }
    let mut seen = BTreeSet::new();
    for s in shares {
        if s.holder_index == 0 {
            return Err(ShareError::ZeroParticipant);
        }
        if !seen.insert(s.holder_index) {
            return Err(ShareError::DuplicateIndex(s.holder_index));
        }
    }
    // Only the first `threshold` shares are needed; extras must be consistent
    // by construction and are ignored.
    let used = &shares[..threshold as usize];
    let mut acc = field.zero();
    for (i, si) in used.iter().enumerate() {
        let xi = field.elem(si.holder_index);
        let mut num = field.one();
        let mut den = field.one();
        for (j, sj) in used.iter().enumerate() {
            if i == j {
                continue;
            }
            let xj = field.elem(sj.holder_index);
            num = field.mul(num, field.neg(xj));
            den = field.mul(den, field.sub(xi, xj));
        }
        let weight = field.mul(num, field.inv(den).expect("distinct indices"));
        acc = field.add(acc, field.mul(si.value, weight));
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn ids(range: std::ops::RangeInclusive<u64>) -> BTreeSet<u64> {
        range.collect()
    }

    /// Test-only oracle: evaluates the unique polynomial through `points` at
    /// `x` via Lagrange interpolation, independent of `share`/`reconstruct`.
    fn lagrange_eval(field: &Field, points: &[(FieldElement, FieldElement)], x: FieldElement) -> FieldElement {
        let mut acc = field.zero();
        for (i, (xi, yi)) in points.iter().enumerate() {
            let mut num = field.one();
            let mut den = field.one();
            for (j, (xj, _)) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                num = field.mul(num, field.sub(x, *xj));
                den = field.mul(den, field.sub(*xi, *xj));
            }
            acc = field.add(acc, field.mul(*yi, field.mul(num, field.inv(den).unwrap())));
        }
        acc
    }

    #[test]
    fn degree_zero_share_equals_secret() {
        let f = Field::default();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let policy = SharingPolicy::new(1, ids(1..=1)).unwrap();
        let s = f.elem(424242);
        let shares = share(&f, s, &policy, &mut rng);
        assert_eq!(shares.len(), 1);
        assert_eq!(shares[0].value, s);
    }

    #[test]
    fn roundtrip_random_secrets_any_t_subset() {
        let f = Field::default();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let policy = SharingPolicy::new(3, ids(1..=5)).unwrap();
        for _ in 0..100 {
            let s = f.random_elem(&mut rng);
            let shares = share(&f, s, &policy, &mut rng);
            // a few random 3-subsets
            for skip in 0..3 {
                let subset: Vec<_> = shares
                    .iter()
                    .cloned()
                    .cycle()
                    .skip(skip)
                    .take(3)
                    .collect();
                assert_eq!(reconstruct(&f, &subset, 3).unwrap(), s);
            }
        }
    }

    #[test]
    fn roundtrip_exhaustive_small_n() {
        let f = Field::default();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for n in 1..=6u64 {
            for t in 1..=n as u32 {
                let policy = SharingPolicy::new(t, ids(1..=n)).unwrap();
                let s = f.random_elem(&mut rng);
                let shares = share(&f, s, &policy, &mut rng);
                // every t-subset via bitmask enumeration
                for mask in 0u32..(1 << n) {
                    if mask.count_ones() != t {
                        continue;
                    }
                    let subset: Vec<_> = shares
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << i) != 0)
                        .map(|(_, s)| *s)
                        .collect();
                    assert_eq!(reconstruct(&f, &subset, t).unwrap(), s, "n={n} t={t}");
                }
            }
        }
    }

    #[test]
    fn zero_secret_reconstructs_from_any_pair() {
        let f = Field::default();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let policy = SharingPolicy::new(2, ids(1..=3)).unwrap();
        let shares = share(&f, f.zero(), &policy, &mut rng);
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let subset = vec![shares[i], shares[j]];
                assert_eq!(reconstruct(&f, &subset, 2).unwrap(), f.zero());
            }
        }
    }

    #[test]
    fn threshold_boundary_errors() {
        let f = Field::default();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let policy = SharingPolicy::new(3, ids(1..=5)).unwrap();
        let shares = share(&f, f.elem(9), &policy, &mut rng);
        assert_eq!(
            reconstruct(&f, &shares[..2], 3),
            Err(ShareError::InsufficientShares { got: 2, need: 3 })
        );
        let dup = vec![shares[0], shares[0], shares[1]];
        assert_eq!(
            reconstruct(&f, &dup, 3),
            Err(ShareError::DuplicateIndex(shares[0].holder_index))
        );
    }

    #[test]
    fn invalid_policies_rejected() {
        assert!(SharingPolicy::new(0, ids(1..=3)).is_err());
        assert!(SharingPolicy::new(4, ids(1..=3)).is_err());
        assert!(SharingPolicy::new(1, [0u64].into_iter().collect()).is_err());
    }

    /// Hiding below threshold: any t-1 shares are consistent with every
    /// candidate secret, exhibited by solving for a completing t-th share.
    #[test]
    fn perfect_hiding_completion_exists() {
        let f = Field::default();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let policy = SharingPolicy::new(3, ids(1..=5)).unwrap();
        let real_secret = f.elem(777);
        let shares = share(&f, real_secret, &policy, &mut rng);
        let fixed = &shares[..2]; // t-1 shares
        for _ in 0..50 {
            let candidate = f.random_elem(&mut rng);
            // Interpolate through (0, candidate) plus the fixed shares, then
            // read off a consistent third share at index 5.
            let pts: Vec<_> = std::iter::once((f.zero(), candidate))
                .chain(fixed.iter().map(|s| (f.elem(s.holder_index), s.value)))
                .collect();
            let completion = SecretShare {
                holder_index: 5,
                value: lagrange_eval(&f, &pts, f.elem(5)),
            };
            let mut set = fixed.to_vec();
            set.push(completion);
            assert_eq!(reconstruct(&f, &set, 3).unwrap(), candidate);
        }
    }
}
