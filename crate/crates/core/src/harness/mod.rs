//! Deterministic experiment orchestrator: wires clients, server, dropout
//! injection, the privacy accountant, and the pipeline planner into
//! end-to-end runs emitting one JSON record per round.

pub mod config;
pub mod metrics;

pub use config::{ConfigError, PipelineMode, SimConfig};
pub use metrics::{export_csv, ExperimentSummary, MetricsRecord, PipelineSummary, RoundMetrics};

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::accountant::{
    default_alpha_grid, per_round_rdp, plan_noise, rdp_to_dp, AccountantConfig, AccountantError,
    GaussianCurve,
};
use crate::pipeline::{optimal_chunks, schedule, PipelinePlan};
use crate::protocol::{
    run_round, DeliveryOrder, DropStage, ProtocolVariant, RoundInput, RoundOptions, RoundResult,
    SigDirectory, ThreatMode,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("accountant: {0}")]
    Accountant(#[from] AccountantError),
    #[error("pipeline: {0}")]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn experiment_seed(master: u64, label: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"experiment-derive");
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

fn synth_inputs(config: &SimConfig, round: u32) -> Vec<RoundInput> {
    let mut rng = ChaCha20Rng::from_seed(experiment_seed(config.seed, "inputs", round as u64));
    let magnitude = config.inputs.magnitude;
    (1..=config.protocol.n_sampled)
        .map(|id| RoundInput {
            id,
            update: (0..config.protocol.vector_len)
                .map(|_| rng.random_range(-magnitude..=magnitude))
                .collect(),
        })
        .collect()
}

fn sample_dropouts(config: &SimConfig, round: u32) -> BTreeMap<u64, DropStage> {
    let mut out = BTreeMap::new();
    if !config.dropout.trace.is_empty() {
        for entry in &config.dropout.trace {
            if entry.round == round {
                out.insert(entry.client, entry.stage);
            }
        }
        return out;
    }
    if config.dropout.rates.is_empty() {
        return out;
    }
    let mut rng = ChaCha20Rng::from_seed(experiment_seed(config.seed, "dropout", round as u64));
    let stages = [
        DropStage::BeforeMaskedInput,
        DropStage::BeforeUnmask,
        DropStage::BeforeSeedShares,
    ];
    for id in 1..=config.protocol.n_sampled {
        for stage in stages {
            let rate = config.dropout.rates.get(&stage).copied().unwrap_or(0.0);
            if rate > 0.0 && rng.random::<f64>() < rate {
                out.insert(id, stage);
                break;
            }
        }
    }
    out
}

fn checksum(aggregate: &[u64]) -> String {
    let mut h = Sha256::new();
    for v in aggregate {
        h.update(v.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

struct EpsilonTracker {
    accountant: AccountantConfig,
    sensitivity: f64,
    sigma_sq: f64,
    cumulative: Vec<f64>,
}

impl EpsilonTracker {
    fn spend(&mut self, variance_fraction: f64) -> Result<f64, AccountantError> {
        let curve = GaussianCurve::from_variance(self.sigma_sq * variance_fraction, self.sensitivity);
        let per_round = per_round_rdp(&self.accountant.alpha_grid, self.accountant.gamma, &curve)?;
        for (acc, p) in self.cumulative.iter_mut().zip(per_round) {
            *acc += p;
        }
        self.current()
    }

    fn current(&self) -> Result<f64, AccountantError> {
        rdp_to_dp(
            &self.accountant.alpha_grid,
            &self.cumulative,
            self.accountant.delta_g,
        )
    }
}

/// Runs the configured experiment, writing one JSON line per round plus a
/// final summary line, and returns the summary.
pub fn run_experiment<W: Write>(
    config: &SimConfig,
    parallel: bool,
    writer: &mut W,
) -> Result<ExperimentSummary, HarnessError> {
    config.validate()?;

    // resolve the target variance: configured directly, or planned from the
    // privacy budget
    let (sigma_sq_star, mut tracker) = match (&config.noise.budget, config.noise.sigma_sq_star) {
        (Some(budget), None) => {
            let accountant = AccountantConfig {
                gamma: budget.gamma,
                rounds: budget.rounds.unwrap_or(config.protocol.rounds),
                epsilon_g: budget.epsilon,
                delta_g: budget.delta,
                alpha_grid: default_alpha_grid(),
            };
            accountant.validate()?;
            let sensitivity = budget.sensitivity;
            let sigma_sq = plan_noise(&accountant, |v| GaussianCurve::from_variance(v, sensitivity))?;
            let tracker = EpsilonTracker {
                cumulative: vec![0.0; accountant.alpha_grid.len()],
                accountant,
                sensitivity,
                sigma_sq,
            };
            (Some(sigma_sq), Some(tracker))
        }
        (None, sigma) => (sigma, None),
        (Some(_), Some(_)) => unreachable!("validated"),
    };

    let params = config.protocol_params(sigma_sq_star)?;
    let enforcing = params.variant == ProtocolVariant::SecaggXnoise;

    // pipeline plan is static across rounds: the latency model depends only
    // on d and m
    let pipeline_plan: Option<(PipelinePlan, f64)> = match config.pipeline.mode {
        PipelineMode::Off => None,
        PipelineMode::Fixed => {
            let workflow = config.workflow()?;
            let m = config.pipeline.chunks.expect("validated");
            let plan = schedule(&workflow, config.protocol.vector_len as u64, m)?;
            let single = schedule(&workflow, config.protocol.vector_len as u64, 1)?;
            Some((plan, single.completion))
        }
        PipelineMode::Auto => {
            let workflow = config.workflow()?;
            let (_, plan) = optimal_chunks(
                &workflow,
                config.protocol.vector_len as u64,
                config.pipeline.m_max,
            )?;
            let single = schedule(&workflow, config.protocol.vector_len as u64, 1)?;
            Some((plan, single.completion))
        }
    };

    // persistent signing keys for malicious mode
    let (signing_keys, directory) = if config.protocol.threat_mode == ThreatMode::Malicious {
        let mut rng = ChaCha20Rng::from_seed(experiment_seed(config.seed, "signing", 0));
        let (keys, dir) = SigDirectory::generate(&params.sampled, &mut rng);
        (Some(keys), Some(dir))
    } else {
        (None, None)
    };

    let mut completed = 0u32;
    let mut aborted = 0u32;
    let mut band_passes = 0u32;
    let mut band_checks = 0u32;
    let mut terminal_epsilon = None;

    for round in 1..=config.protocol.rounds {
        let inputs = synth_inputs(config, round);
        let dropouts = sample_dropouts(config, round);
        let injected = dropouts.len();
        let options = RoundOptions {
            params: params.clone(),
            round: round as u64,
            seed: config.seed,
            dropouts,
            delivery: DeliveryOrder::BySender,
            delay_per_message: config.protocol.delay_per_message,
            seed_loss_policy: config.protocol.seed_loss_policy,
            parallel_clients: parallel,
        };
        let result: RoundResult = run_round(
            &options,
            &inputs,
            signing_keys.as_ref(),
            directory.as_ref(),
            None,
        );

        let n = config.protocol.n_sampled as usize;
        let dropped = if result.survivors.u3.is_empty() {
            injected
        } else {
            n - result.survivors.u3.len()
        };
        let released = result.aggregate.is_some();
        if released {
            completed += 1;
        } else {
            aborted += 1;
        }

        let mut analytic_variance = None;
        let mut empirical_variance = None;
        if released && enforcing && !result.overspent {
            let plan = params.noise.expect("enforcing variant");
            if let Ok(v) = plan.post_removal_variance(dropped as u32) {
                analytic_variance = Some(v);
            }
            let aggregate = result.aggregate.as_ref().expect("released");
            let decoded = params.codec.decode_vec(aggregate);
            let residual: Vec<f64> = decoded
                .iter()
                .zip(result.input_sum.iter())
                .map(|(a, &b)| a - b as f64)
                .collect();
            if residual.len() >= 2 {
                let emp = sample_variance(&residual);
                empirical_variance = Some(emp);
                if let Some(target) = analytic_variance {
                    band_checks += 1;
                    let band = 5.0 * target * (2.0 / (residual.len() as f64 - 1.0)).sqrt();
                    if (emp - target).abs() <= band {
                        band_passes += 1;
                    }
                }
            }
        }

        let cumulative_epsilon = match (&mut tracker, released) {
            (Some(tracker), true) => {
                // enforcement holds the target; without it the realized
                // level degrades with the surviving fraction
                let fraction = if enforcing {
                    1.0
                } else {
                    result.survivors.u3.len() as f64 / n as f64
                };
                let eps = tracker.spend(fraction)?;
                terminal_epsilon = Some(eps);
                Some(eps)
            }
            (Some(tracker), false) => {
                // aborted rounds release nothing and spend nothing
                let eps = tracker.current()?;
                terminal_epsilon = Some(eps);
                Some(eps)
            }
            (None, _) => None,
        };

        let record = RoundMetrics {
            round,
            dropped,
            survivor_counts: [
                result.survivors.u1.len(),
                result.survivors.u2.len(),
                result.survivors.u3.len(),
                result.survivors.u4.len(),
                result.survivors.u5.len(),
                result.survivors.u6.len(),
            ],
            abort: result.server_abort.as_ref().map(|a| a.to_string()),
            client_aborts: result.client_aborts.len(),
            aggregate_checksum: result.aggregate.as_deref().map(checksum),
            analytic_variance,
            empirical_variance,
            cumulative_epsilon,
            overspent: result.overspent,
            simulated_seconds: result.simulated_seconds,
            pipeline_completion: pipeline_plan.as_ref().map(|(p, _)| p.completion),
        };
        MetricsRecord::Round(record).write_line(writer)?;
    }

    let summary = ExperimentSummary {
        rounds_completed: completed,
        rounds_aborted: aborted,
        sigma_sq_star,
        terminal_epsilon,
        variance_band_passes: band_passes,
        variance_band_checks: band_checks,
        variance_verified: if band_checks > 0 {
            Some(band_passes == band_checks)
        } else {
            None
        },
        pipeline: pipeline_plan.map(|(plan, single)| PipelineSummary {
            chunks: plan.chunk_count,
            completion: plan.completion,
            completion_single_chunk: single,
            speedup: single / plan.completion,
        }),
    };
    MetricsRecord::Summary(summary.clone()).write_line(writer)?;
    Ok(summary)
}
