//! Experiment configuration: a TOML file with nested sections. Every field
//! of the simulation is addressable here; unknown keys are rejected.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::FixedPointCodec;
use crate::crypto::NoiseDistribution;
use crate::field::Field;
use crate::noise::NoisePlan;
use crate::pipeline::{Resource, StageSpec, Workflow};
use crate::protocol::{
    DropStage, ProtocolParams, ProtocolVariant, SeedLossPolicy, ThreatMode,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_modulus_bits() -> u32 {
    20
}

fn default_frac_bits() -> u32 {
    12
}

fn default_m_max() -> u32 {
    20
}

fn default_magnitude() -> i64 {
    8
}

fn default_sensitivity() -> f64 {
    1.0
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Master seed; every round, client, and network decision derives from
    /// it.
    pub seed: u64,
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub dropout: DropoutSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub inputs: InputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub variant: ProtocolVariant,
    pub threat_mode: ThreatMode,
    /// Sampled clients per round, `|U|`.
    pub n_sampled: u64,
    /// Dropout tolerance `T` (noise-enforcing variant).
    #[serde(default)]
    pub dropout_tolerance: u32,
    /// Collusion tolerance `T_C`.
    #[serde(default)]
    pub collusion_tolerance: u32,
    /// Secure-aggregation threshold `t`.
    pub threshold: u32,
    /// Update length `d`.
    pub vector_len: usize,
    /// Modulus bit-width `b` for the masked-input space `Z_{2^b}`.
    #[serde(default = "default_modulus_bits")]
    pub modulus_bits: u32,
    #[serde(default = "default_frac_bits")]
    pub frac_bits: u32,
    pub rounds: u32,
    #[serde(default = "default_seed_loss_policy")]
    pub seed_loss_policy: SeedLossPolicy,
    #[serde(default)]
    pub delay_per_message: f64,
}

fn default_seed_loss_policy() -> SeedLossPolicy {
    SeedLossPolicy::Abort
}

/// Exactly one of `sigma_sq_star` and `budget` must be set for the
/// noise-enforcing variant; the budget path derives the target variance by
/// offline noise planning.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub sigma_sq_star: Option<f64>,
    #[serde(default)]
    pub budget: Option<BudgetSection>,
    #[serde(default = "default_distribution")]
    pub distribution: NoiseDistribution,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            sigma_sq_star: None,
            budget: None,
            distribution: default_distribution(),
        }
    }
}

fn default_distribution() -> NoiseDistribution {
    NoiseDistribution::Gaussian
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub epsilon: f64,
    pub delta: f64,
    /// Sampling-probability bound used by the accountant.
    pub gamma: f64,
    /// Planning horizon; defaults to the protocol round count.
    #[serde(default)]
    pub rounds: Option<u32>,
    #[serde(default = "default_sensitivity")]
    pub sensitivity: f64,
}

/// Dropouts come either from per-stage rates or from a fixed trace, never
/// both.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutSection {
    #[serde(default)]
    pub rates: BTreeMap<DropStage, f64>,
    #[serde(default)]
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub round: u32,
    pub client: u64,
    pub stage: DropStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    #[default]
    Off,
    /// Use the configured chunk count.
    Fixed,
    /// Enumerate chunk counts up to `m_max` and take the fastest.
    Auto,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    #[serde(default)]
    pub mode: PipelineMode,
    #[serde(default)]
    pub chunks: Option<u32>,
    #[serde(default = "default_m_max")]
    pub m_max: u32,
    #[serde(default)]
    pub stages: Vec<StageConfig>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub resource: Resource,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    /// Synthetic integer updates are uniform in `[-magnitude, magnitude]`.
    pub magnitude: i64,
}

impl Default for InputSection {
    fn default() -> Self {
        InputSection {
            magnitude: default_magnitude(),
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: SimConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.protocol;
        if p.n_sampled == 0 {
            return Err(ConfigError::Invalid("n_sampled must be positive".into()));
        }
        if p.rounds == 0 {
            return Err(ConfigError::Invalid("rounds must be positive".into()));
        }
        FixedPointCodec::new(p.modulus_bits, p.frac_bits)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match p.variant {
            ProtocolVariant::SecaggXnoise => {
                match (self.noise.sigma_sq_star, &self.noise.budget) {
                    (Some(_), None) | (None, Some(_)) => {}
                    (Some(_), Some(_)) => {
                        return Err(ConfigError::Invalid(
                            "specify exactly one of noise.sigma_sq_star and noise.budget, not both"
                                .into(),
                        ))
                    }
                    (None, None) => {
                        return Err(ConfigError::Invalid(
                            "the noise-enforcing variant needs noise.sigma_sq_star or noise.budget"
                                .into(),
                        ))
                    }
                }
                // the plan constructor re-checks the tolerance relations
                NoisePlan::new(
                    self.noise.sigma_sq_star.unwrap_or(1.0),
                    p.n_sampled as u32,
                    p.dropout_tolerance,
                    p.collusion_tolerance,
                    p.threshold,
                    p.collusion_tolerance > 0,
                )
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
            ProtocolVariant::SecaggPlain => {
                if self.noise.sigma_sq_star.is_some() && self.noise.budget.is_some() {
                    return Err(ConfigError::Invalid(
                        "specify at most one of noise.sigma_sq_star and noise.budget".into(),
                    ));
                }
            }
        }
        if !self.dropout.rates.is_empty() && !self.dropout.trace.is_empty() {
            return Err(ConfigError::Invalid(
                "dropout.rates and dropout.trace are mutually exclusive".into(),
            ));
        }
        for (&stage, &rate) in &self.dropout.rates {
            if !(0.0..=1.0).contains(&rate) {
                return Err(ConfigError::Invalid(format!(
                    "dropout rate {rate} for {stage:?} outside [0, 1]"
                )));
            }
        }
        for entry in &self.dropout.trace {
            if entry.client == 0 || entry.client > p.n_sampled {
                return Err(ConfigError::Invalid(format!(
                    "trace entry names client {} outside 1..={}",
                    entry.client, p.n_sampled
                )));
            }
        }
        match self.pipeline.mode {
            PipelineMode::Off => {}
            PipelineMode::Fixed => {
                if self.pipeline.chunks.unwrap_or(0) == 0 {
                    return Err(ConfigError::Invalid(
                        "pipeline.mode = \"fixed\" needs pipeline.chunks >= 1".into(),
                    ));
                }
                self.workflow()?;
            }
            PipelineMode::Auto => {
                self.workflow()?;
            }
        }
        if self.inputs.magnitude < 0 {
            return Err(ConfigError::Invalid("inputs.magnitude must be >= 0".into()));
        }
        Ok(())
    }

    /// The pipeline workflow, when one is configured.
    pub fn workflow(&self) -> Result<Workflow, ConfigError> {
        let stages: Result<Vec<StageSpec>, _> = self
            .pipeline
            .stages
            .iter()
            .map(|s| StageSpec::new(s.resource, s.beta1, s.beta2, s.beta3))
            .collect();
        Workflow::new(stages.map_err(|e| ConfigError::Invalid(e.to_string()))?)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn codec(&self) -> FixedPointCodec {
        FixedPointCodec::new(self.protocol.modulus_bits, self.protocol.frac_bits)
            .expect("validated")
    }

    /// Assembles protocol parameters once the target variance is known.
    pub fn protocol_params(&self, sigma_sq_star: Option<f64>) -> Result<ProtocolParams, ConfigError> {
        let p = &self.protocol;
        let noise = match p.variant {
            ProtocolVariant::SecaggXnoise => Some(
                NoisePlan::new(
                    sigma_sq_star.ok_or_else(|| {
                        ConfigError::Invalid("missing target variance".into())
                    })?,
                    p.n_sampled as u32,
                    p.dropout_tolerance,
                    p.collusion_tolerance,
                    p.threshold,
                    p.collusion_tolerance > 0,
                )
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            ),
            ProtocolVariant::SecaggPlain => None,
        };
        Ok(ProtocolParams {
            variant: p.variant,
            mode: p.threat_mode,
            sampled: (1..=p.n_sampled).collect(),
            threshold: p.threshold,
            vector_len: p.vector_len,
            codec: self.codec(),
            field: Field::default(),
            noise,
            noise_distribution: self.noise.distribution,
        })
    }

}
