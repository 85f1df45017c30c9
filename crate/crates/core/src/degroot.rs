//! Deterministic trust-averaging dynamics with a stubborn agent.
//!
//! Each step replaces every opinion with the trust-weighted average of its
//! neighbors' opinions, `x[n+1] = T x[n]`. With a stubborn agent present the
//! ordinary block contracts toward the closed-form limit
//! `(I - Q)^{-1} r * x_0[0]`, which equals the stubborn opinion at every
//! coordinate because appending `r` to `Q` restores row-stochasticity. One
//! ordinary agent with positive trust in the stubborn agent is enough.

use nalgebra::DVector;
use thiserror::Error;

use crate::graph::{partition, GraphError, PartitionedTrust, TrustMatrix};
use crate::spectral::{neumann_limit, SpectralError};

/// Default convergence tolerance on the ordinary-block error.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Slack added to the spectral radius when checking the empirical rate.
pub const RATE_SLACK: f64 = 0.05;

/// Record every step up to this index, every 10th afterwards.
const RECORD_FULL: u64 = 100_000;

#[derive(Debug, Error)]
pub enum DegrootError {
    #[error("state has {got} entries, trust matrix expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("horizon {horizon} reached with error {err_inf:e} still above tolerance")]
    HorizonExceeded { horizon: u64, err_inf: f64 },
    #[error("empirical contraction rate {estimate} exceeds bound {bound}")]
    RateExceeded { estimate: f64, bound: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Opinion vector at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct OpinionState {
    pub values: DVector<f64>,
    pub time: u64,
}

impl OpinionState {
    pub fn new(values: DVector<f64>) -> Self {
        Self { values, time: 0 }
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self::new(DVector::from_row_slice(values))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }
}

/// One synchronous averaging step `T x`.
pub fn degroot_step(t: &TrustMatrix, x: &OpinionState) -> Result<OpinionState, DegrootError> {
    if x.len() != t.size() {
        return Err(DegrootError::DimensionMismatch {
            expected: t.size(),
            got: x.len(),
        });
    }
    Ok(OpinionState {
        values: t.weights() * &x.values,
        time: x.time + 1,
    })
}

/// Closed-form ordinary-block limit `(I - Q)^{-1} r * x1_0`.
pub fn degroot_limit(p: &PartitionedTrust, x1_0: f64) -> Result<DVector<f64>, SpectralError> {
    Ok(neumann_limit(&p.q, &p.r)?.x * x1_0)
}

/// Iterated run with its convergence trace.
#[derive(Debug, Clone)]
pub struct DegrootRun {
    /// `(n, err_inf)` at recorded steps; every step up to 1e5, then every
    /// 10th, and always the terminal step.
    pub trace: Vec<(u64, f64)>,
    /// Ordinary-block opinions at the recorded steps, aligned with `trace`.
    pub opinions: Vec<DVector<f64>>,
    pub final_state: OpinionState,
    pub y_limit: DVector<f64>,
    pub steps: u64,
    /// Geometric rate fitted on the tail of the positive-error trace.
    pub rate_estimate: Option<f64>,
    pub rate_bound: f64,
    pub rho: f64,
}

/// Iterate until the ordinary block is within `tol` of the closed-form limit
/// (infinity norm) or the horizon is exhausted. The empirical contraction
/// rate is checked against `rho + RATE_SLACK`.
pub fn degroot_run(
    t: &TrustMatrix,
    x0: &OpinionState,
    horizon: u64,
    tol: f64,
) -> Result<DegrootRun, DegrootError> {
    let p = partition(t)?;
    if x0.len() != t.size() {
        return Err(DegrootError::DimensionMismatch {
            expected: t.size(),
            got: x0.len(),
        });
    }
    let y_limit = degroot_limit(&p, x0.values[0])?;
    let m = y_limit.len();

    let mut state = x0.clone();
    let mut trace = Vec::new();
    let mut opinions = Vec::new();
    loop {
        let n = state.time;
        let y = state.values.rows(1, m);
        let err = (y - &y_limit).amax();
        if n <= RECORD_FULL || n.is_multiple_of(10) || err <= tol {
            trace.push((n, err));
            opinions.push(y.into_owned());
        }
        if err <= tol {
            break;
        }
        if n >= horizon {
            return Err(DegrootError::HorizonExceeded {
                horizon,
                err_inf: err,
            });
        }
        state = degroot_step(t, &state)?;
    }

    let rate_estimate = fit_tail_rate(&trace);
    let rate_bound = p.lambda + RATE_SLACK;
    if let Some(estimate) = rate_estimate {
        if estimate > rate_bound {
            return Err(DegrootError::RateExceeded {
                estimate,
                bound: rate_bound,
            });
        }
    }
    Ok(DegrootRun {
        steps: state.time,
        trace,
        opinions,
        final_state: state,
        y_limit,
        rate_estimate,
        rate_bound,
        rho: p.lambda,
    })
}

/// Horizon suggestion from the known geometric rate: twice the step count at
/// which `rho^n` crosses `tol`.
pub fn default_horizon(rho: f64, tol: f64) -> u64 {
    if !(0.0..1.0).contains(&rho) || tol.is_nan() || tol <= 0.0 || tol >= 1.0 {
        return 1;
    }
    if rho == 0.0 {
        return 2;
    }
    ((tol.ln() / rho.ln()).ceil() as u64 * 2).max(1)
}

/// Geometric mean of the per-step error decay over the last half of the
/// positive-error trace; `None` when fewer than two positive entries exist.
fn fit_tail_rate(trace: &[(u64, f64)]) -> Option<f64> {
    let positive: Vec<(u64, f64)> = trace.iter().copied().filter(|&(_, e)| e > 0.0).collect();
    if positive.len() < 2 {
        return None;
    }
    let (n1, e1) = *positive.last().unwrap();
    let (n0, e0) = positive[positive.len() / 2];
    if n1 == n0 {
        return None;
    }
    Some((e1 / e0).powf(1.0 / (n1 - n0) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn beta_chain() -> TrustMatrix {
        TrustMatrix::from_rows(&[vec![1.0, 0.0], vec![0.3, 0.7]], Some(0), false).unwrap()
    }

    #[test]
    fn identity_step_is_noop() {
        let t = TrustMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], None, false).unwrap();
        let x = OpinionState::from_slice(&[0.2, 0.9]);
        let next = degroot_step(&t, &x).unwrap();
        assert_eq!(next.values, x.values);
        assert_eq!(next.time, 1);
    }

    #[test]
    fn single_step_direct_evaluation() {
        let x = OpinionState::from_slice(&[1.0, 0.0]);
        let next = degroot_step(&beta_chain(), &x).unwrap();
        assert_eq!(next.values[0], 1.0);
        assert_abs_diff_eq!(next.values[1], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn consensus_is_a_fixed_point() {
        let rows = vec![
            vec![0.2, 0.5, 0.3],
            vec![0.4, 0.4, 0.2],
            vec![0.1, 0.1, 0.8],
        ];
        let t = TrustMatrix::from_rows(&rows, None, false).unwrap();
        let x = OpinionState::from_slice(&[0.6, 0.6, 0.6]);
        let next = degroot_step(&t, &x).unwrap();
        for v in next.values.iter() {
            assert_abs_diff_eq!(*v, 0.6, epsilon = 1e-15);
        }
    }

    #[test]
    fn limit_scalar_chain() {
        let p = partition(&beta_chain()).unwrap();
        let y = degroot_limit(&p, 0.8).unwrap();
        assert_abs_diff_eq!(y[0], 0.8, epsilon = 1e-14);
    }

    #[test]
    fn limit_is_zero_for_zero_stubborn_opinion() {
        let p = partition(&beta_chain()).unwrap();
        let y = degroot_limit(&p, 0.0).unwrap();
        assert_eq!(y[0], 0.0);
    }

    #[test]
    fn limit_three_agents_row_stochastic_completion() {
        let rows = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.2, 0.0, 0.8],
            vec![0.0, 0.8, 0.2],
        ];
        let t = TrustMatrix::from_rows(&rows, Some(0), false).unwrap();
        let p = partition(&t).unwrap();
        let y = degroot_limit(&p, 1.0).unwrap();
        assert_abs_diff_eq!(y[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn chain_error_is_exact_geometric() {
        // y[n+1] = 0.7 y[n] + 0.3 with y[0] = 0 has solution 1 - 0.7^n,
        // so the error against the limit is exactly 0.7^n
        let x0 = OpinionState::from_slice(&[1.0, 0.0]);
        let run = degroot_run(&beta_chain(), &x0, 1000, 1e-10).unwrap();
        for &(n, err) in &run.trace {
            assert_abs_diff_eq!(err, 0.7f64.powi(n as i32), epsilon = 1e-12);
        }
        let rate = run.rate_estimate.unwrap();
        assert_abs_diff_eq!(rate, 0.7, epsilon = 1e-6);
        assert!(rate <= run.rate_bound);
    }

    #[test]
    fn consensus_start_converges_immediately() {
        let x0 = OpinionState::from_slice(&[0.4, 0.4]);
        let run = degroot_run(&beta_chain(), &x0, 10, 1e-10).unwrap();
        assert_eq!(run.steps, 0);
        assert_eq!(run.trace.len(), 1);
        assert!(run.rate_estimate.is_none());
    }

    #[test]
    fn horizon_exceeded_reports_error_norm() {
        let x0 = OpinionState::from_slice(&[1.0, 0.0]);
        let err = degroot_run(&beta_chain(), &x0, 3, 1e-10).unwrap_err();
        match err {
            DegrootError::HorizonExceeded { horizon, err_inf } => {
                assert_eq!(horizon, 3);
                assert_abs_diff_eq!(err_inf, 0.7f64.powi(3), epsilon = 1e-12);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn default_horizon_covers_chain() {
        let h = default_horizon(0.7, 1e-10);
        // need n with 0.7^n <= 1e-10, i.e. n >= 65
        assert!(h >= 65 * 2 - 2);
        let x0 = OpinionState::from_slice(&[1.0, 0.0]);
        assert!(degroot_run(&beta_chain(), &x0, h, 1e-10).is_ok());
    }

    proptest! {
        // Opinions stay inside the convex hull of the initial opinions, the
        // stubborn coordinate never moves, and the error never increases.
        #[test]
        fn hull_containment_and_monotone_error(
            y0 in prop::collection::vec(0.0f64..1.0, 3),
            x1 in 0.0f64..1.0,
        ) {
            let rows = vec![
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.5, 0.2, 0.3, 0.0],
                vec![0.0, 0.4, 0.2, 0.4],
                vec![0.0, 0.0, 0.6, 0.4],
            ];
            let t = TrustMatrix::from_rows(&rows, Some(0), false).unwrap();
            let p = partition(&t).unwrap();
            let limit = degroot_limit(&p, x1).unwrap();

            let mut vals = vec![x1];
            vals.extend_from_slice(&y0);
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

            let mut state = OpinionState::from_slice(&vals);
            let mut prev_err = f64::INFINITY;
            for _ in 0..50 {
                let err = (state.values.rows(1, 3) - &limit).amax();
                prop_assert!(err <= prev_err + 1e-14);
                prev_err = err;
                prop_assert_eq!(state.values[0], x1);
                for v in state.values.iter() {
                    prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
                }
                state = degroot_step(&t, &state).unwrap();
            }
        }
    }
}
