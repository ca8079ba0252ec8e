//! Command-line front end: run experiments, plan noise against a privacy
//! budget, plan pipeline schedules, fit latency-model coefficients, and
//! export metrics to CSV.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use dpagg_core::accountant::{
    budget_epsilon, default_alpha_grid, plan_noise, AccountantConfig, GaussianCurve,
};
use dpagg_core::harness::{export_csv, run_experiment, SimConfig};
use dpagg_core::pipeline::{
    fit_betas, optimal_chunks, schedule, ProfileSample, Resource, StageSpec, Workflow,
};

#[derive(Parser)]
#[command(name = "dpagg", version, about = "Dropout-resilient distributed-DP aggregation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExecutionMode {
    Sequential,
    Parallel,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file, emitting JSON-lines metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Metrics destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sequential")]
        mode: ExecutionMode,
    },
    /// Find the minimum noise variance meeting a privacy budget.
    PlanNoise {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        /// Client sampling-probability bound.
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        rounds: u32,
        #[arg(long, default_value_t = 1.0)]
        sensitivity: f64,
    },
    /// Compute the fastest chunked schedule for a staged workflow.
    PlanPipeline {
        /// TOML file with a [[stages]] array (resource, beta1, beta2, beta3).
        #[arg(long)]
        stages: PathBuf,
        /// Update length in elements.
        #[arg(long)]
        d: u64,
        #[arg(long, default_value_t = 20)]
        m_max: u32,
        /// Render a text timeline instead of JSON.
        #[arg(long)]
        timeline: bool,
    },
    /// Fit latency-model coefficients from profile samples (CSV: d,m,latency).
    FitBetas {
        #[arg(long)]
        samples: PathBuf,
    },
    /// Flatten a JSON-lines metrics stream into CSV.
    ExportCsv {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Deserialize)]
struct StageFile {
    stages: Vec<StageFileEntry>,
}

#[derive(Deserialize)]
struct StageFileEntry {
    resource: Resource,
    beta1: f64,
    beta2: f64,
    beta3: f64,
}

fn load_workflow(path: &PathBuf) -> Result<Workflow, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let file: StageFile = toml::from_str(&text).map_err(|e| e.to_string())?;
    let stages: Result<Vec<StageSpec>, _> = file
        .stages
        .iter()
        .map(|s| StageSpec::new(s.resource, s.beta1, s.beta2, s.beta3))
        .collect();
    Workflow::new(stages.map_err(|e| e.to_string())?).map_err(|e| e.to_string())
}

fn resource_label(r: Resource) -> &'static str {
    match r {
        Resource::ClientCompute => "c-comp",
        Resource::Communication => "comm",
        Resource::ServerCompute => "s-comp",
    }
}

fn render_timeline(plan: &dpagg_core::pipeline::PipelinePlan) -> String {
    let mut out = String::new();
    let width = 64usize;
    let scale = width as f64 / plan.completion.max(f64::MIN_POSITIVE);
    out.push_str(&format!(
        "m = {} chunks, completion = {:.6}s\n",
        plan.chunk_count, plan.completion
    ));
    for e in &plan.entries {
        let start = ((e.begin * scale).round() as usize).min(width);
        let len = (((e.finish - e.begin) * scale).round() as usize).max(1);
        let mut bar = " ".repeat(start);
        bar.push_str(&"#".repeat(len.min(width + 1 - start)));
        out.push_str(&format!(
            "stage {} chunk {} [{:>6}] |{bar}\n",
            e.stage,
            e.chunk,
            resource_label(e.resource)
        ));
    }
    out
}

fn run() -> Result<(), (u8, String)> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            mode,
        } => {
            let text = fs::read_to_string(&config)
                .map_err(|e| (2, format!("{}: {e}", config.display())))?;
            let mut sim = SimConfig::from_toml(&text).map_err(|e| (2, e.to_string()))?;
            if let Some(seed) = seed {
                sim.seed = seed;
            }
            let parallel = mode == ExecutionMode::Parallel;
            let started = std::time::Instant::now();
            let summary = match out {
                Some(path) => {
                    let file = fs::File::create(&path)
                        .map_err(|e| (1, format!("{}: {e}", path.display())))?;
                    let mut writer = BufWriter::new(file);
                    let summary = run_experiment(&sim, parallel, &mut writer)
                        .map_err(|e| (1, e.to_string()))?;
                    writer.flush().map_err(|e| (1, e.to_string()))?;
                    summary
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut writer = BufWriter::new(stdout.lock());
                    let summary = run_experiment(&sim, parallel, &mut writer)
                        .map_err(|e| (1, e.to_string()))?;
                    writer.flush().map_err(|e| (1, e.to_string()))?;
                    summary
                }
            };
            eprintln!(
                "completed {} rounds ({} aborted) in {:.2?} wall time",
                summary.rounds_completed + summary.rounds_aborted,
                summary.rounds_aborted,
                started.elapsed()
            );
            Ok(())
        }
        Command::PlanNoise {
            epsilon,
            delta,
            gamma,
            rounds,
            sensitivity,
        } => {
            let config = AccountantConfig {
                gamma,
                rounds,
                epsilon_g: epsilon,
                delta_g: delta,
                alpha_grid: default_alpha_grid(),
            };
            config.validate().map_err(|e| (2, e.to_string()))?;
            let sigma_sq = plan_noise(&config, |v| GaussianCurve::from_variance(v, sensitivity))
                .map_err(|e| (1, e.to_string()))?;
            let achieved = budget_epsilon(&config, sigma_sq, |v| {
                GaussianCurve::from_variance(v, sensitivity)
            })
            .map_err(|e| (1, e.to_string()))?;
            println!(
                "{}",
                serde_json::json!({
                    "sigma_sq_star": sigma_sq,
                    "sigma_star": sigma_sq.sqrt(),
                    "epsilon_achieved": achieved,
                    "epsilon_budget": epsilon,
                })
            );
            Ok(())
        }
        Command::PlanPipeline {
            stages,
            d,
            m_max,
            timeline,
        } => {
            let workflow = load_workflow(&stages).map_err(|e| (2, e))?;
            let (m, plan) = optimal_chunks(&workflow, d, m_max).map_err(|e| (1, e.to_string()))?;
            let single = schedule(&workflow, d, 1).map_err(|e| (1, e.to_string()))?;
            if timeline {
                print!("{}", render_timeline(&plan));
            } else {
                let entries: Vec<_> = plan
                    .entries
                    .iter()
                    .map(|e| {
                        serde_json::json!({
                            "stage": e.stage,
                            "chunk": e.chunk,
                            "resource": resource_label(e.resource),
                            "begin": e.begin,
                            "finish": e.finish,
                        })
                    })
                    .collect();
                println!(
                    "{}",
                    serde_json::json!({
                        "chunks": m,
                        "completion": plan.completion,
                        "completion_single_chunk": single.completion,
                        "speedup": single.completion / plan.completion,
                        "entries": entries,
                    })
                );
            }
            Ok(())
        }
        Command::FitBetas { samples } => {
            let file = fs::File::open(&samples)
                .map_err(|e| (2, format!("{}: {e}", samples.display())))?;
            let mut reader = csv::Reader::from_reader(BufReader::new(file));
            let mut parsed = Vec::new();
            for record in reader.deserialize() {
                let (d, m, latency): (u64, u32, f64) = record.map_err(|e| (2, e.to_string()))?;
                parsed.push(ProfileSample { d, m, latency });
            }
            let (b1, b2, b3) = fit_betas(&parsed).map_err(|e| (1, e.to_string()))?;
            println!(
                "{}",
                serde_json::json!({ "beta1": b1, "beta2": b2, "beta3": b3, "samples": parsed.len() })
            );
            Ok(())
        }
        Command::ExportCsv { input, out } => {
            let file =
                fs::File::open(&input).map_err(|e| (2, format!("{}: {e}", input.display())))?;
            let out_file =
                fs::File::create(&out).map_err(|e| (1, format!("{}: {e}", out.display())))?;
            export_csv(BufReader::new(file), BufWriter::new(out_file))
                .map_err(|e| (1, e.to_string()))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
