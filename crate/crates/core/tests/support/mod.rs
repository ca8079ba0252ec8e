//! Independent test oracles. These deliberately avoid the implementation
//! paths they check: the scheduler oracle is an event-driven simulation of
//! the two scheduling constraints, and the accounting oracle evaluates the
//! sampled-mechanism bound with exact big-integer binomials instead of
//! log-space special functions.

use dpagg_core::accountant::RdpCurve;
use dpagg_core::pipeline::{stage_latency, StageSpec};
use num_bigint::BigUint;

/// Event-driven completion time for `m` chunks through `stages`, honoring:
/// each chunk passes stages in order; each resource serves one task at a
/// time; a resource never starts a later stage while an earlier stage on
/// the same resource still has unfinished chunks. Ready tasks are served in
/// (stage, chunk) order.
pub fn des_completion(stages: &[StageSpec], d: u64, m: u32) -> f64 {
    let a = stages.len();
    let mc = m as usize;
    let tau: Vec<f64> = stages.iter().map(|s| stage_latency(s, d, m)).collect();
    #[derive(Clone, Copy, PartialEq)]
    enum TaskState {
        Waiting,
        Running { until: f64 },
        Done { at: f64 },
    }
    let mut state = vec![vec![TaskState::Waiting; mc]; a];
    let mut now = 0.0f64;
    let mut completion = 0.0f64;
    loop {
        // settle finishes at the current time
        for s in 0..a {
            for c in 0..mc {
                if let TaskState::Running { until } = state[s][c] {
                    if until <= now + 1e-12 {
                        state[s][c] = TaskState::Done { at: until };
                        completion = completion.max(until);
                    }
                }
            }
        }
        if state
            .iter()
            .all(|row| row.iter().all(|t| matches!(t, TaskState::Done { .. })))
        {
            return completion;
        }
        // start every startable task at the current time
        let mut started = true;
        while started {
            started = false;
            for s in 0..a {
                for c in 0..mc {
                    if state[s][c] != TaskState::Waiting {
                        continue;
                    }
                    // chunk order across stages
                    let pred_done = s == 0
                        || matches!(state[s - 1][c], TaskState::Done { .. });
                    if !pred_done {
                        continue;
                    }
                    // resource free right now
                    let resource = stages[s].resource;
                    let resource_busy = (0..a).any(|q| {
                        stages[q].resource == resource
                            && state[q].iter().any(|t| matches!(t, TaskState::Running { .. }))
                    });
                    if resource_busy {
                        continue;
                    }
                    // an earlier stage on the same resource with unfinished
                    // chunks suspends this stage
                    let suspended = (0..s).any(|q| {
                        stages[q].resource == resource
                            && state[q].iter().any(|t| !matches!(t, TaskState::Done { .. }))
                    });
                    if suspended {
                        continue;
                    }
                    state[s][c] = TaskState::Running { until: now + tau[s] };
                    started = true;
                }
            }
        }
        // advance to the next finish event
        let next = state
            .iter()
            .flatten()
            .filter_map(|t| match t {
                TaskState::Running { until } => Some(*until),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min);
        if !next.is_finite() {
            // nothing runs and nothing finished: the model is total, so
            // this cannot happen on a valid workflow
            panic!("deadlocked schedule");
        }
        now = next;
    }
}

/// Direct evaluation of the sampled-mechanism privacy bound with exact
/// binomial coefficients:
/// `F = log{ (1-g)^(a-1)(ag-g+1) + C(a,2)g^2(1-g)^(a-2)e^{eps(2)}
///           + 3 sum_{l=3}^{a} C(a,l)(1-g)^(a-l)g^l e^{(l-1)eps(l)} } / (a-1)`
pub fn rational_hetero_poisson_bound(alpha: u32, gamma: f64, curve: &dyn RdpCurve) -> f64 {
    assert!(alpha >= 2);
    let a = alpha as f64;
    let binom = |n: u32, k: u32| -> f64 {
        let mut acc = BigUint::from(1u32);
        for i in 0..k {
            acc = acc * BigUint::from((n - i) as u64) / BigUint::from((i + 1) as u64);
        }
        let digits = acc.to_string();
        digits.parse::<f64>().expect("binomial fits in f64")
    };
    let mut bracket = (1.0 - gamma).powf(a - 1.0) * (a * gamma - gamma + 1.0);
    bracket += binom(alpha, 2)
        * gamma.powi(2)
        * (1.0 - gamma).powf(a - 2.0)
        * curve.epsilon(2.0).exp();
    for l in 3..=alpha {
        let lf = l as f64;
        bracket += 3.0
            * binom(alpha, l)
            * (1.0 - gamma).powf(a - lf)
            * gamma.powf(lf)
            * ((lf - 1.0) * curve.epsilon(lf)).exp();
    }
    bracket.ln() / (a - 1.0)
}
