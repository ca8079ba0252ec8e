//! Chunked pipeline scheduling for the staged aggregation workflow.
//!
//! A workflow is a sequence of resource-labeled stages; the model update is
//! split into `m` chunks that flow through the stages in order while each
//! resource serves one chunk at a time. Per-chunk stage latency follows
//! `tau = beta1 * ceil(d/m) + beta2 * m + beta3`, where the middle term
//! models cross-task intervention on constrained devices. The schedule is
//! the closed-form recurrence; enumeration over a small range of `m` picks
//! the chunk count with the shortest completion time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by workflow construction and profiling.
#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("workflow needs at least one stage")]
    EmptyWorkflow,
    #[error("stages {0} and {1} are adjacent but share a resource")]
    AdjacentSameResource(usize, usize),
    #[error("chunk count must be at least 1")]
    ZeroChunks,
    #[error("beta coefficients must be non-negative and finite")]
    BadBetas,
    #[error("singular fit: profile samples do not span the regressor space")]
    SingularFit,
    #[error("need at least {need} profile samples, got {got}")]
    NotEnoughSamples { need: usize, got: usize },
}

/// The dominant system resource of a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Resource {
    /// Client-side compute.
    #[serde(rename = "c-comp")]
    ClientCompute,
    /// Server-client communication.
    #[serde(rename = "comm")]
    Communication,
    /// Server-side compute.
    #[serde(rename = "s-comp")]
    ServerCompute,
}

/// One stage: a resource label plus the three profiled latency coefficients
/// (seconds per element, seconds per chunk of pipeline depth, constant
/// seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub resource: Resource,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl StageSpec {
    pub fn new(resource: Resource, beta1: f64, beta2: f64, beta3: f64) -> Result<Self, PipelineError> {
        for b in [beta1, beta2, beta3] {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(PipelineError::BadBetas);
            }
        }
        Ok(StageSpec {
            resource,
            beta1,
            beta2,
            beta3,
        })
    }
}

/// A validated stage sequence: nonempty, adjacent stages on distinct
/// resources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workflow {
    stages: Vec<StageSpec>,
}

impl Workflow {
    pub fn new(stages: Vec<StageSpec>) -> Result<Self, PipelineError> {
        if stages.is_empty() {
            return Err(PipelineError::EmptyWorkflow);
        }
        for i in 1..stages.len() {
            if stages[i - 1].resource == stages[i].resource {
                return Err(PipelineError::AdjacentSameResource(i - 1, i));
            }
        }
        Ok(Workflow { stages })
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }
}

/// Elements in the widest chunk when `d` elements split into `m` chunks.
pub fn chunk_elements(d: u64, m: u32) -> u64 {
    d.div_ceil(m as u64)
}

/// Latency of one stage for one chunk: `beta1 * ceil(d/m) + beta2 * m +
/// beta3`. The widest chunk sets the element count, keeping the model
/// conservative when the split is uneven.
pub fn stage_latency(stage: &StageSpec, d: u64, m: u32) -> f64 {
    stage.beta1 * chunk_elements(d, m) as f64 + stage.beta2 * m as f64 + stage.beta3
}

/// One scheduled unit of work.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub stage: usize,
    pub chunk: usize,
    pub resource: Resource,
    pub begin: f64,
    pub finish: f64,
}

/// A complete schedule for `m` chunks through a workflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub chunk_count: u32,
    pub update_len: u64,
    pub entries: Vec<ScheduleEntry>,
    pub completion: f64,
}

/// Builds the deterministic schedule from the recurrence: a chunk enters
/// stage `s` once it left stage `s-1` (chunk order) and once the stage's
/// resource is free: for chunk 0 that means the latest earlier stage on
/// the same resource has drained all chunks; later chunks queue behind
/// their predecessor in the same stage.
pub fn schedule(workflow: &Workflow, d: u64, m: u32) -> Result<PipelinePlan, PipelineError> {
    if m == 0 {
        return Err(PipelineError::ZeroChunks);
    }
    let stages = workflow.stages();
    let a = stages.len();
    let mc = m as usize;
    let tau: Vec<f64> = stages.iter().map(|s| stage_latency(s, d, m)).collect();
    let mut finish = vec![vec![0.0f64; mc]; a];
    let mut entries = Vec::with_capacity(a * mc);
    for s in 0..a {
        // latest earlier stage sharing this stage's resource, if any
        let q = (0..s).rev().find(|&i| stages[i].resource == stages[s].resource);
        for c in 0..mc {
            let order_bound = if s == 0 { 0.0 } else { finish[s - 1][c] };
            let resource_bound = if c == 0 {
                match q {
                    Some(q) => finish[q][mc - 1],
                    None => 0.0,
                }
            } else {
                finish[s][c - 1]
            };
            let begin = order_bound.max(resource_bound);
            finish[s][c] = begin + tau[s];
            entries.push(ScheduleEntry {
                stage: s,
                chunk: c,
                resource: stages[s].resource,
                begin,
                finish: finish[s][c],
            });
        }
    }
    Ok(PipelinePlan {
        chunk_count: m,
        update_len: d,
        entries,
        completion: finish[a - 1][mc - 1],
    })
}

/// Checks a plan against the two scheduling constraints without re-running
/// the recurrence: per-chunk stage order, and per-resource mutual exclusion.
pub fn validate_plan(plan: &PipelinePlan, workflow: &Workflow) -> Result<(), String> {
    let a = workflow.stages().len();
    let mc = plan.chunk_count as usize;
    if plan.entries.len() != a * mc {
        return Err(format!("expected {} entries, got {}", a * mc, plan.entries.len()));
    }
    let lookup = |s: usize, c: usize| {
        plan.entries
            .iter()
            .find(|e| e.stage == s && e.chunk == c)
            .ok_or_else(|| format!("missing entry for stage {s} chunk {c}"))
    };
    let mut max_finish = 0.0f64;
    for c in 0..mc {
        for s in 1..a {
            let prev = lookup(s - 1, c)?;
            let cur = lookup(s, c)?;
            if cur.begin + 1e-9 < prev.finish {
                return Err(format!("chunk {c} enters stage {s} before leaving {}", s - 1));
            }
        }
    }
    for e in &plan.entries {
        max_finish = max_finish.max(e.finish);
        if e.finish < e.begin {
            return Err(format!("entry {e:?} finishes before it begins"));
        }
    }
    // resource exclusivity: no two entries on one resource overlap
    let mut by_resource: std::collections::BTreeMap<Resource, Vec<(f64, f64)>> = Default::default();
    for e in &plan.entries {
        by_resource.entry(e.resource).or_default().push((e.begin, e.finish));
    }
    for (res, mut intervals) in by_resource {
        intervals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in intervals.windows(2) {
            if w[1].0 + 1e-9 < w[0].1 {
                return Err(format!("overlap on {res:?}: {w:?}"));
            }
        }
    }
    if (max_finish - plan.completion).abs() > 1e-9 {
        return Err(format!(
            "completion {} does not match max finish {max_finish}",
            plan.completion
        ));
    }
    Ok(())
}

/// Enumerates `m` in `[1, m_max]` and returns the chunk count with the
/// shortest completion, breaking ties toward fewer chunks.
pub fn optimal_chunks(
    workflow: &Workflow,
    d: u64,
    m_max: u32,
) -> Result<(u32, PipelinePlan), PipelineError> {
    let mut best: Option<(u32, PipelinePlan)> = None;
    for m in 1..=m_max.max(1) {
        let plan = schedule(workflow, d, m)?;
        match &best {
            Some((_, b)) if plan.completion >= b.completion => {}
            _ => best = Some((m, plan)),
        }
    }
    Ok(best.expect("at least m = 1 was tried"))
}

/// One micro-benchmark observation for beta profiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub d: u64,
    pub m: u32,
    pub latency: f64,
}

/// Least-squares fit of `(beta1, beta2, beta3)` from profile samples, with
/// regressors `(ceil(d/m), m, 1)` matching the latency model.
pub fn fit_betas(samples: &[ProfileSample]) -> Result<(f64, f64, f64), PipelineError> {
    if samples.len() < 3 {
        return Err(PipelineError::NotEnoughSamples {
            need: 3,
            got: samples.len(),
        });
    }
    let rows = samples.len();
    let mut design = nalgebra::DMatrix::zeros(rows, 3);
    let mut rhs = nalgebra::DVector::zeros(rows);
    for (i, s) in samples.iter().enumerate() {
        design[(i, 0)] = chunk_elements(s.d, s.m) as f64;
        design[(i, 1)] = s.m as f64;
        design[(i, 2)] = 1.0;
        rhs[i] = s.latency;
    }
    let svd = design.svd(true, true);
    let max_sv = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&sv| sv > max_sv * 1e-10)
        .count();
    if rank < 3 {
        return Err(PipelineError::SingularFit);
    }
    let solution = svd
        .solve(&rhs, max_sv * 1e-12)
        .map_err(|_| PipelineError::SingularFit)?;
    Ok((solution[0], solution[1], solution[2]))
}

/// Splits a vector into `m` nearly-even chunks (the first `d mod m` chunks
/// are one element longer).
pub fn chunk_vector<T: Clone>(update: &[T], m: u32) -> Vec<Vec<T>> {
    let d = update.len();
    let mc = m.max(1) as usize;
    let base = d / mc;
    let rem = d % mc;
    let mut out = Vec::with_capacity(mc);
    let mut offset = 0;
    for i in 0..mc {
        let len = base + usize::from(i < rem);
        out.push(update[offset..offset + len].to_vec());
        offset += len;
    }
    out
}

/// Concatenates per-chunk results back into one vector.
pub fn concat_chunks<T: Clone>(chunks: &[Vec<T>]) -> Vec<T> {
    chunks.iter().flatten().cloned().collect()
}
