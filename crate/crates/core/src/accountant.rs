//! Rényi-DP accounting under heterogeneous Poisson sampling.
//!
//! The per-round loss of a sampled mechanism with curve ε(α) is bounded, for
//! integer α >= 2 and sampling bound γ < 1, by
//!
//! ```text
//! F(γ) = 1/(α-1) · log{ (1-γ)^(α-1)·(αγ-γ+1)
//!                      + C(α,2)·γ²·(1-γ)^(α-2)·e^{ε(2)}
//!                      + 3·Σ_{l=3}^{α} C(α,l)·(1-γ)^(α-l)·γ^l·e^{(l-1)ε(l)} }
//! ```
//!
//! evaluated here in log space (log-Γ binomials, log-sum-exp) so the grid
//! stays finite up to α = 256 and beyond. Rounds compose additively and
//! translate to (ε, δ)-DP by minimizing ε(α) + log(1/δ)/(α-1) over the grid.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

/// Errors raised by the accountant.
#[derive(Debug, Error, PartialEq)]
pub enum AccountantError {
    #[error("sampling bound gamma must lie in [0, 1), got {0}")]
    BadGamma(f64),
    #[error("Renyi order alpha must be an integer >= 2, got {0}")]
    BadAlpha(u32),
    #[error("delta must lie in (0, 1], got {0}")]
    BadDelta(f64),
    #[error("alpha grid must be non-empty")]
    EmptyGrid,
    #[error("privacy budget unreachable: {0}")]
    Infeasible(String),
}

/// A mechanism's Rényi-DP curve α → ε(α).
pub trait RdpCurve {
    /// ε(α) for real α >= 2 (integer orders are what the sampling bound
    /// consumes; the translation step may interrogate the same grid).
    fn epsilon(&self, alpha: f64) -> f64;
}

/// The Gaussian mechanism: ε(α) = α·Δ²/(2σ²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianCurve {
    /// Noise standard deviation σ.
    pub sigma: f64,
    /// L2 sensitivity Δ.
    pub sensitivity: f64,
}

impl GaussianCurve {
    pub fn new(sigma: f64, sensitivity: f64) -> Self {
        GaussianCurve { sigma, sensitivity }
    }

    /// Curve for a mechanism whose noise variance is `variance`.
    pub fn from_variance(variance: f64, sensitivity: f64) -> Self {
        GaussianCurve {
            sigma: variance.sqrt(),
            sensitivity,
        }
    }
}

impl RdpCurve for GaussianCurve {
    fn epsilon(&self, alpha: f64) -> f64 {
        alpha * self.sensitivity * self.sensitivity / (2.0 * self.sigma * self.sigma)
    }
}

/// Accounting configuration: sampling bound, horizon, global budget, grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantConfig {
    pub gamma: f64,
    pub rounds: u32,
    pub epsilon_g: f64,
    pub delta_g: f64,
    /// Integer Rényi orders; defaults to 2..=256.
    pub alpha_grid: Vec<u32>,
}

impl AccountantConfig {
    pub fn new(gamma: f64, rounds: u32, epsilon_g: f64, delta_g: f64) -> Result<Self, AccountantError> {
        let cfg = AccountantConfig {
            gamma,
            rounds,
            epsilon_g,
            delta_g,
            alpha_grid: default_alpha_grid(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), AccountantError> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(AccountantError::BadGamma(self.gamma));
        }
        if !(self.delta_g > 0.0 && self.delta_g <= 1.0) {
            return Err(AccountantError::BadDelta(self.delta_g));
        }
        if self.alpha_grid.is_empty() {
            return Err(AccountantError::EmptyGrid);
        }
        if let Some(&a) = self.alpha_grid.iter().find(|&&a| a < 2) {
            return Err(AccountantError::BadAlpha(a));
        }
        Ok(())
    }
}

/// Default integer order grid 2..=256.
pub fn default_alpha_grid() -> Vec<u32> {
    (2..=256).collect()
}

/// Accumulated loss: per-round RDP vector over a grid plus its composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpend {
    pub alpha_grid: Vec<u32>,
    pub per_round: Vec<f64>,
    pub rounds: u32,
    pub cumulative: Vec<f64>,
}

impl PrivacySpend {
    /// One round's spend.
    pub fn single_round(alpha_grid: Vec<u32>, per_round: Vec<f64>) -> Self {
        let cumulative = per_round.clone();
        PrivacySpend {
            alpha_grid,
            per_round,
            rounds: 1,
            cumulative,
        }
    }

    /// Translated ε at the given δ.
    pub fn epsilon(&self, delta: f64) -> Result<f64, AccountantError> {
        rdp_to_dp(&self.alpha_grid, &self.cumulative, delta)
    }
}

fn ln_binomial(n: u32, k: u32) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// The sampled-mechanism bound F(γ) at integer order `alpha`.
pub fn hetero_poisson_bound(
    alpha: u32,
    gamma: f64,
    curve: &dyn RdpCurve,
) -> Result<f64, AccountantError> {
    if alpha < 2 {
        return Err(AccountantError::BadAlpha(alpha));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(AccountantError::BadGamma(gamma));
    }
    if gamma == 0.0 {
        // the bracket collapses to (1-0)^(α-1)·1 = 1
        return Ok(0.0);
    }
    let a = alpha as f64;
    let ln_g = gamma.ln();
    let ln_1mg = (1.0 - gamma).ln();
    let mut terms = Vec::with_capacity(alpha as usize);
    // (1-γ)^(α-1) · (αγ - γ + 1)
    terms.push((a - 1.0) * ln_1mg + (a * gamma - gamma + 1.0).ln());
    // C(α,2) · γ² · (1-γ)^(α-2) · e^{ε(2)}
    terms.push(ln_binomial(alpha, 2) + 2.0 * ln_g + (a - 2.0) * ln_1mg + curve.epsilon(2.0));
    // 3 · Σ_{l=3}^{α} C(α,l) · (1-γ)^(α-l) · γ^l · e^{(l-1)·ε(l)}
    for l in 3..=alpha {
        let lf = l as f64;
        terms.push(
            3f64.ln()
                + ln_binomial(alpha, l)
                + (a - lf) * ln_1mg
                + lf * ln_g
                + (lf - 1.0) * curve.epsilon(lf),
        );
    }
    Ok(log_sum_exp(&terms) / (a - 1.0))
}

/// Per-round RDP vector of the sampled mechanism over the grid.
pub fn per_round_rdp(
    alpha_grid: &[u32],
    gamma: f64,
    curve: &dyn RdpCurve,
) -> Result<Vec<f64>, AccountantError> {
    alpha_grid
        .iter()
        .map(|&a| hetero_poisson_bound(a, gamma, curve))
        .collect()
}

/// Additive composition over `rounds` identical rounds.
pub fn compose(per_round: &PrivacySpend, rounds: u32) -> PrivacySpend {
    PrivacySpend {
        alpha_grid: per_round.alpha_grid.clone(),
        per_round: per_round.per_round.clone(),
        rounds,
        cumulative: per_round
            .per_round
            .iter()
            .map(|&x| x * rounds as f64)
            .collect(),
    }
}

/// RDP → (ε, δ)-DP translation: min over the grid of RDP(α) + log(1/δ)/(α-1).
pub fn rdp_to_dp(alpha_grid: &[u32], rdp: &[f64], delta: f64) -> Result<f64, AccountantError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(AccountantError::BadDelta(delta));
    }
    if alpha_grid.is_empty() || alpha_grid.len() != rdp.len() {
        return Err(AccountantError::EmptyGrid);
    }
    let log_inv_delta = (1.0 / delta).ln();
    Ok(alpha_grid
        .iter()
        .zip(rdp.iter())
        .map(|(&a, &r)| r + log_inv_delta / (a as f64 - 1.0))
        .fold(f64::INFINITY, f64::min))
}

/// Search bounds and budget for offline noise planning.
const SIGMA_LO: f64 = 1e-2;
const SIGMA_HI: f64 = 1e4;
const MAX_BISECTIONS: u32 = 200;

/// Translated ε after `rounds` rounds of the sampled mechanism built by
/// `family` at noise variance `sigma_sq`.
pub fn budget_epsilon<C, F>(
    config: &AccountantConfig,
    sigma_sq: f64,
    family: F,
) -> Result<f64, AccountantError>
where
    C: RdpCurve,
    F: Fn(f64) -> C,
{
    let curve = family(sigma_sq);
    let per_round = per_round_rdp(&config.alpha_grid, config.gamma, &curve)?;
    let spend = compose(
        &PrivacySpend::single_round(config.alpha_grid.clone(), per_round),
        config.rounds,
    );
    spend.epsilon(config.delta_g)
}

/// Offline noise planning: the minimum noise variance that keeps the
/// composed, translated loss within the global budget. Exploits that ε is
/// nonincreasing in σ and bisects σ in [1e-2, 1e4].
pub fn plan_noise<C, F>(config: &AccountantConfig, family: F) -> Result<f64, AccountantError>
where
    C: RdpCurve,
    F: Fn(f64) -> C,
{
    config.validate()?;
    let eps_at = |sigma: f64| budget_epsilon(config, sigma * sigma, &family);
    if eps_at(SIGMA_LO)? <= config.epsilon_g {
        // unconstrained (e.g. γ = 0 or a huge budget): lower search bound
        return Ok(SIGMA_LO * SIGMA_LO);
    }
    if eps_at(SIGMA_HI)? > config.epsilon_g {
        return Err(AccountantError::Infeasible(format!(
            "epsilon {} still above budget {} at sigma = {SIGMA_HI}",
            eps_at(SIGMA_HI)?,
            config.epsilon_g
        )));
    }
    let (mut lo, mut hi) = (SIGMA_LO, SIGMA_HI);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if eps_at(mid)? <= config.epsilon_g {
            hi = mid;
        } else {
            lo = mid;
        }
        if (hi - lo) / hi < 1e-14 {
            break;
        }
    }
    Ok(hi * hi)
}

/// Budget-consumption trace. `round_variance_fractions[r]` is the fraction
/// of the planned noise variance actually present in round `r` (1.0 when
/// enforcement holds; below 1.0 when dropouts silently removed noise).
/// Returns the cumulative translated ε after each round.
pub fn spend_trace<C, F>(
    config: &AccountantConfig,
    sigma_sq_star: f64,
    round_variance_fractions: &[f64],
    family: F,
) -> Result<Vec<f64>, AccountantError>
where
    C: RdpCurve,
    F: Fn(f64) -> C,
{
    config.validate()?;
    let mut cumulative = vec![0.0; config.alpha_grid.len()];
    let mut out = Vec::with_capacity(round_variance_fractions.len());
    for &fraction in round_variance_fractions {
        let curve = family(sigma_sq_star * fraction);
        let per_round = per_round_rdp(&config.alpha_grid, config.gamma, &curve)?;
        for (c, p) in cumulative.iter_mut().zip(per_round) {
            *c += p;
        }
        out.push(rdp_to_dp(&config.alpha_grid, &cumulative, config.delta_g)?);
    }
    Ok(out)
}
