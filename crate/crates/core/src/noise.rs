//! Add-then-remove noise arithmetic.
//!
//! Each sampled client adds `T + 1` noise components; after the dropout
//! outcome is known, components indexed above the dropout count are removed
//! so the aggregate lands exactly on the target variance. The component
//! variances telescope: `v_0 = s/|U|` and `v_k = s/((|U|-k+1)(|U|-k))`
//! decompose the per-client level `s/(|U|-T)` (`s` is the target variance,
//! inflated by `t/(t-T_C)` when collusion handling is on).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by noise planning.
#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("invalid noise plan: {0}")]
    InvalidPlan(String),
    /// More clients dropped than the plan tolerates; the round must abort
    /// rather than proceed under-noised.
    #[error("{dropped} dropouts exceed tolerance {tolerance}")]
    ToleranceExceeded { dropped: u32, tolerance: u32 },
}

/// Target variance and tolerance parameters for one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    /// Target aggregate variance, in squared model-update units.
    pub sigma_sq_star: f64,
    /// Number of sampled clients `|U|`.
    pub u_size: u32,
    /// Dropout tolerance `T`.
    pub dropout_tolerance: u32,
    /// Collusion tolerance `T_C`.
    pub collusion_tolerance: u32,
    /// Secure-aggregation threshold `t`.
    pub threshold: u32,
    /// Whether the collusion inflation factor `t/(t-T_C)` applies.
    pub handle_collusion: bool,
}

/// Per-component variances `v_0 ..= v_T`, one per noise component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentVariances(pub Vec<f64>);

impl ComponentVariances {
    pub fn count(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Component indices a survivor must help remove when `dropped` clients
/// dropped: `{dropped+1, ..., tolerance}`, empty at worst-case dropout.
pub fn removal_indices(dropped: u32, tolerance: u32) -> std::ops::RangeInclusive<u32> {
    dropped + 1..=tolerance
}

impl NoisePlan {
    pub fn new(
        sigma_sq_star: f64,
        u_size: u32,
        dropout_tolerance: u32,
        collusion_tolerance: u32,
        threshold: u32,
        handle_collusion: bool,
    ) -> Result<Self, NoiseError> {
        if !(sigma_sq_star >= 0.0) {
            return Err(NoiseError::InvalidPlan(format!(
                "target variance must be non-negative, got {sigma_sq_star}"
            )));
        }
        if dropout_tolerance >= u_size {
            return Err(NoiseError::InvalidPlan(format!(
                "dropout tolerance {dropout_tolerance} must be below |U| = {u_size}"
            )));
        }
        if threshold == 0 || threshold > u_size {
            return Err(NoiseError::InvalidPlan(format!(
                "threshold {threshold} must lie in [1, {u_size}]"
            )));
        }
        if collusion_tolerance >= threshold {
            return Err(NoiseError::InvalidPlan(format!(
                "collusion tolerance {collusion_tolerance} must be below threshold {threshold}"
            )));
        }
        Ok(NoisePlan {
            sigma_sq_star,
            u_size,
            dropout_tolerance,
            collusion_tolerance,
            threshold,
            handle_collusion,
        })
    }

    /// Collusion inflation factor `t/(t-T_C)`; 1 when collusion handling is
    /// off.
    pub fn inflation(&self) -> f64 {
        if self.handle_collusion {
            self.threshold as f64 / (self.threshold - self.collusion_tolerance) as f64
        } else {
            1.0
        }
    }

    /// Total per-client noise level `inflation * s / (|U| - T)`.
    pub fn per_client_level(&self) -> f64 {
        self.inflation() * self.sigma_sq_star / (self.u_size - self.dropout_tolerance) as f64
    }

    /// The `T + 1` component variances each client samples from.
    pub fn component_variances(&self) -> ComponentVariances {
        let u = self.u_size as f64;
        let infl = self.inflation();
        let mut v = Vec::with_capacity(self.dropout_tolerance as usize + 1);
        v.push(infl * self.sigma_sq_star / u);
        for k in 1..=self.dropout_tolerance {
            let k = k as f64;
            v.push(infl * self.sigma_sq_star / ((u - k + 1.0) * (u - k)));
        }
        ComponentVariances(v)
    }

    /// Aggregate excess level `(T - |D|)/(|U| - T) * s * inflation` the
    /// server must remove after observing `dropped` dropouts.
    pub fn excess_level(&self, dropped: u32) -> Result<f64, NoiseError> {
        self.check_dropped(dropped)?;
        Ok(self.inflation() * self.sigma_sq_star * (self.dropout_tolerance - dropped) as f64
            / (self.u_size - self.dropout_tolerance) as f64)
    }

    /// Each survivor's share of the removal task,
    /// `s * inflation * (1/(|U|-T) - 1/(|U|-|D|))`.
    pub fn per_survivor_excess(&self, dropped: u32) -> Result<f64, NoiseError> {
        self.check_dropped(dropped)?;
        let u = self.u_size as f64;
        Ok(self.inflation()
            * self.sigma_sq_star
            * (1.0 / (u - self.dropout_tolerance as f64) - 1.0 / (u - dropped as f64)))
    }

    /// Removal index set for this plan at the given dropout count.
    pub fn removal_indices(&self, dropped: u32) -> Result<std::ops::RangeInclusive<u32>, NoiseError> {
        self.check_dropped(dropped)?;
        Ok(removal_indices(dropped, self.dropout_tolerance))
    }

    /// Post-removal aggregate variance, computed symbolically by summing the
    /// component variances that remain: `survivors * (sum v_k - sum of
    /// removed v_k)`. Equals `inflation * sigma_sq_star` for every valid
    /// dropout count.
    pub fn post_removal_variance(&self, dropped: u32) -> Result<f64, NoiseError> {
        self.check_dropped(dropped)?;
        let survivors = (self.u_size - dropped) as f64;
        let v = self.component_variances();
        let total: f64 = v.0.iter().sum();
        let removed: f64 = self
            .removal_indices(dropped)?
            .map(|k| v.0[k as usize])
            .sum();
        Ok(survivors * (total - removed))
    }

    /// Noise level left in the adversary's best view when it observes the
    /// sum over `honest_survivors` honest clients plus `colluders_in_u`
    /// colluding clients whose contributions it can strip, and removes every
    /// component whose seed that view reveals. Stays at or above the target
    /// whenever `honest_survivors >= t - colluders` and the collusion
    /// tolerance covers the colluders.
    pub fn adversary_view_variance(&self, honest_survivors: u32, colluders_in_u: u32) -> f64 {
        let v = self.component_variances();
        // Components the adversary keeps: indices 0 ..= k_keep where seeds
        // for k > k_keep are revealed; the revealed range starts at
        // |U \ L| + 1 - |C ∩ U| and never reaches index 0.
        let dropped_from_view = self.u_size - honest_survivors;
        let k_keep = dropped_from_view.saturating_sub(colluders_in_u);
        let kept: f64 = v
            .0
            .iter()
            .take(k_keep.min(self.dropout_tolerance) as usize + 1)
            .sum();
        honest_survivors as f64 * kept
    }

    fn check_dropped(&self, dropped: u32) -> Result<(), NoiseError> {
        if dropped > self.dropout_tolerance {
            return Err(NoiseError::ToleranceExceeded {
                dropped,
                tolerance: self.dropout_tolerance,
            });
        }
        Ok(())
    }
}
