//! Stochastic random-actions dynamics with reproducible seeded replicas.
//!
//! Each agent `k` plays a Bernoulli action `A_k[n] ~ Bernoulli(X_k[n])` and
//! the action probabilities relax toward the trust-weighted average of the
//! played actions:
//!
//! ```text
//!     X[n+1] = (1 - alpha) X[n] + alpha T A[n],   alpha in (0, 1).
//! ```
//!
//! Agent 0 may be given a special role: *stubborn* (always plays 0, its
//! probability pinned at 0) or *drifting* (plays 1 with a deterministic
//! probability `f[n]` that decays to 0, its probability coordinate pinned at
//! `f[n]`). Every replica owns a counter-keyed ChaCha stream derived from
//! `(seed, replica_id)` and consumes exactly one draw per agent per step, so
//! results are independent of scheduling, worker count, and replica order,
//! and a drifting run with `f == 0` is bit-identical to a stubborn run.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{partition, GraphError, TrustMatrix, TAU_STOCH};

/// Record every step up to this index, geometric checkpoints afterwards.
const RECORD_FULL: u64 = 10_000;
const RECORD_GROWTH: f64 = 1.1;

/// Default threshold for the tail statistics `P(X_k > eps)`.
pub const DEFAULT_EPS: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("alpha must lie strictly inside (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("eps must lie in (0, 0.5), got {0}")]
    InvalidEps(f64),
    #[error("replicas must be >= 1")]
    NoReplicas,
    #[error("invalid drift law: {0}")]
    InvalidDriftLaw(String),
    #[error("role agent must be the canonical index 0, got {0}")]
    RoleAgentNotCanonical(usize),
    #[error("a {0} role requires a designated stubborn agent in the trust matrix")]
    RoleRequiresStubborn(&'static str),
    #[error("initial probabilities must lie in [0, 1], got {0}")]
    InvalidInit(f64),
    #[error("initial vector has {got} entries, expected {expected}")]
    InitLength { expected: usize, got: usize },
    #[error("dimension mismatch: state has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("state left [0, 1] at step {step}, agent {agent}: value {value}")]
    Containment { step: u64, agent: usize, value: f64 },
    #[error("replica {id} failed: {source}")]
    Replica {
        id: u64,
        #[source]
        source: Box<SimError>,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Deterministic decay law for a drifting agent's action probability.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftLaw {
    /// `f[n] = min(1, c / (n + 1)^p)`, `p > 0`.
    Power { c: f64, p: f64 },
    /// `f[n] = min(1, c * gamma^n)`, `gamma` in (0, 1).
    Exp { c: f64, gamma: f64 },
}

impl DriftLaw {
    pub fn validate(&self) -> Result<(), SimError> {
        let coefficient_ok = |c: f64| c.is_finite() && c >= 0.0;
        match *self {
            DriftLaw::Power { c, p } => {
                if !coefficient_ok(c) || p.is_nan() || p <= 0.0 {
                    return Err(SimError::InvalidDriftLaw(format!(
                        "power law needs c >= 0 and p > 0, got c={c}, p={p}"
                    )));
                }
            }
            DriftLaw::Exp { c, gamma } => {
                if !coefficient_ok(c) || !(gamma > 0.0 && gamma < 1.0) {
                    return Err(SimError::InvalidDriftLaw(format!(
                        "exponential law needs c >= 0 and gamma in (0, 1), got c={c}, gamma={gamma}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `f[n]`, clamped into [0, 1]; decays to 0 for every valid law.
    pub fn eval(&self, n: u64) -> f64 {
        let raw = match *self {
            DriftLaw::Power { c, p } => c / ((n + 1) as f64).powf(p),
            DriftLaw::Exp { c, gamma } => c * gamma.powf(n as f64),
        };
        raw.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoleKind {
    /// No special agent; the original dynamics on all coordinates.
    None,
    /// Agent 0 always plays action 0 and its probability stays 0.
    Stubborn,
    /// Agent 0 plays 1 with probability `f[n]`; its coordinate reads `f[n]`.
    Drifting(DriftLaw),
}

/// Role assignment; the role agent is canonically index 0 (the trust matrix
/// relabels on load).
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRoleSpec {
    pub kind: RoleKind,
    pub agent: usize,
}

impl AgentRoleSpec {
    pub fn none() -> Self {
        Self {
            kind: RoleKind::None,
            agent: 0,
        }
    }

    pub fn stubborn() -> Self {
        Self {
            kind: RoleKind::Stubborn,
            agent: 0,
        }
    }

    pub fn drifting(law: DriftLaw) -> Self {
        Self {
            kind: RoleKind::Drifting(law),
            agent: 0,
        }
    }

    pub fn has_role_agent(&self) -> bool {
        !matches!(self.kind, RoleKind::None)
    }
}

/// Initial action probabilities for the agents without a pinned role.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Constant(f64),
    UniformRandom,
    Explicit(Vec<f64>),
}

/// Full description of a simulation batch.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub alpha: f64,
    pub horizon: u64,
    pub replicas: u64,
    pub seed: u64,
    pub role: AgentRoleSpec,
    pub init: InitSpec,
    /// Tail threshold used by the batch statistics.
    pub eps: f64,
}

impl SimConfig {
    pub fn validate(&self, t: &TrustMatrix) -> Result<(), SimError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SimError::InvalidAlpha(self.alpha));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(SimError::InvalidEps(self.eps));
        }
        if self.role.agent != 0 {
            return Err(SimError::RoleAgentNotCanonical(self.role.agent));
        }
        match &self.role.kind {
            RoleKind::None => {}
            RoleKind::Stubborn => {
                if t.stubborn().is_none() {
                    return Err(SimError::RoleRequiresStubborn("stubborn"));
                }
            }
            RoleKind::Drifting(law) => {
                law.validate()?;
                if t.stubborn().is_none() {
                    return Err(SimError::RoleRequiresStubborn("drifting"));
                }
            }
        }
        let expected = if self.role.has_role_agent() {
            t.size() - 1
        } else {
            t.size()
        };
        match &self.init {
            InitSpec::Constant(v) => {
                if !(0.0..=1.0).contains(v) {
                    return Err(SimError::InvalidInit(*v));
                }
            }
            InitSpec::UniformRandom => {}
            InitSpec::Explicit(values) => {
                if values.len() != expected {
                    return Err(SimError::InitLength {
                        expected,
                        got: values.len(),
                    });
                }
                for &v in values {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(SimError::InvalidInit(v));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-replica record: state snapshots at the recorded steps plus the
/// weighted ordinary-block average `S[n] = psi^T Y[n]` and its one-step
/// increments when a role agent (hence a partition) exists.
#[derive(Debug, Clone)]
pub struct ReplicaTrace {
    pub replica_id: u64,
    /// Recorded step indices; always includes 0 and the horizon.
    pub steps: Vec<u64>,
    /// `X[n]` at each recorded step.
    pub states: Vec<DVector<f64>>,
    /// `S[n]` at each recorded step; empty when no role agent exists.
    pub s: Vec<f64>,
    /// `S[n] - S[n-1]` at each recorded step (0.0 at step 0).
    pub ds: Vec<f64>,
}

/// The ChaCha stream owned by one replica: seeded by the batch seed, stream
/// index = replica id.
pub fn replica_rng(seed: u64, replica_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica_id);
    rng
}

/// One relaxation step `(1 - alpha) x + alpha T a`.
///
/// A convex combination of points in the unit cube, so the result stays in
/// `[0, 1]^K` up to the row-sum tolerance of `T`.
pub fn ra_step(
    t: &TrustMatrix,
    x: &DVector<f64>,
    alpha: f64,
    actions: &DVector<f64>,
) -> Result<DVector<f64>, SimError> {
    let k = t.size();
    if x.len() != k {
        return Err(SimError::DimensionMismatch {
            expected: k,
            got: x.len(),
        });
    }
    if actions.len() != k {
        return Err(SimError::DimensionMismatch {
            expected: k,
            got: actions.len(),
        });
    }
    Ok(x * (1.0 - alpha) + (t.weights() * actions) * alpha)
}

/// Draw one action per agent: coordinate `k` is Bernoulli(`x_k`), except the
/// role agent, which plays 0 (stubborn) or Bernoulli(`f[n]`) (drifting).
/// Exactly one uniform draw is consumed per agent regardless of role, so the
/// stream position is a pure function of `(step, agent)`.
pub fn draw_actions(
    x: &DVector<f64>,
    role: &AgentRoleSpec,
    n: u64,
    rng: &mut impl Rng,
) -> DVector<f64> {
    DVector::from_fn(x.len(), |k, _| {
        let u: f64 = rng.random();
        let p = if k == role.agent {
            match &role.kind {
                RoleKind::None => x[k],
                RoleKind::Stubborn => 0.0,
                RoleKind::Drifting(law) => law.eval(n),
            }
        } else {
            x[k]
        };
        if u < p {
            1.0
        } else {
            0.0
        }
    })
}

fn initial_state(
    k: usize,
    role: &AgentRoleSpec,
    init: &InitSpec,
    rng: &mut impl Rng,
) -> DVector<f64> {
    let mut x = match init {
        InitSpec::Constant(v) => DVector::from_element(k, *v),
        // fixed consumption: one draw per agent, role agent's overridden below
        InitSpec::UniformRandom => DVector::from_fn(k, |_, _| rng.random::<f64>()),
        InitSpec::Explicit(values) => {
            if role.has_role_agent() {
                let mut full = DVector::zeros(k);
                for (i, &v) in values.iter().enumerate() {
                    full[i + 1] = v;
                }
                full
            } else {
                DVector::from_row_slice(values)
            }
        }
    };
    match &role.kind {
        RoleKind::None => {}
        RoleKind::Stubborn => x[role.agent] = 0.0,
        RoleKind::Drifting(law) => x[role.agent] = law.eval(0),
    }
    x
}

fn recorded_steps(horizon: u64) -> Vec<u64> {
    if horizon <= RECORD_FULL {
        return (0..=horizon).collect();
    }
    let mut steps: Vec<u64> = (0..=RECORD_FULL).collect();
    let mut next = RECORD_FULL as f64;
    loop {
        next *= RECORD_GROWTH;
        let n = next.ceil() as u64;
        if n >= horizon {
            break;
        }
        steps.push(n);
    }
    steps.push(horizon);
    steps
}

/// Run a single replica; the trace is a pure function of
/// `(T, cfg, replica_id)`.
pub fn run_replica(
    t: &TrustMatrix,
    cfg: &SimConfig,
    replica_id: u64,
) -> Result<ReplicaTrace, SimError> {
    cfg.validate(t)?;
    let psi = if cfg.role.has_role_agent() {
        Some(partition(t)?.psi)
    } else {
        None
    };
    run_replica_with(t, psi.as_ref(), cfg, replica_id)
}

/// Replica runner with the left Perron vector supplied by the caller, so a
/// batch computes the partition once.
pub fn run_replica_with(
    t: &TrustMatrix,
    psi: Option<&DVector<f64>>,
    cfg: &SimConfig,
    replica_id: u64,
) -> Result<ReplicaTrace, SimError> {
    let k = t.size();
    let mut rng = replica_rng(cfg.seed, replica_id);
    let mut x = initial_state(k, &cfg.role, &cfg.init, &mut rng);

    let schedule = recorded_steps(cfg.horizon);
    let mut steps = Vec::with_capacity(schedule.len());
    let mut states = Vec::with_capacity(schedule.len());
    let mut s_series = Vec::new();
    let mut ds_series = Vec::new();
    let mut cursor = 0;

    let weighted = |x: &DVector<f64>, psi: &DVector<f64>| x.rows(1, k - 1).dot(psi);
    let mut s_prev = psi.map(|p| weighted(&x, p));

    steps.push(0);
    states.push(x.clone());
    if let Some(s) = s_prev {
        s_series.push(s);
        ds_series.push(0.0);
    }
    cursor += 1;

    for n in 0..cfg.horizon {
        let actions = draw_actions(&x, &cfg.role, n, &mut rng);
        x = ra_step(t, &x, cfg.alpha, &actions)?;
        match &cfg.role.kind {
            RoleKind::None => {}
            RoleKind::Stubborn => x[cfg.role.agent] = 0.0,
            RoleKind::Drifting(law) => x[cfg.role.agent] = law.eval(n + 1),
        }
        for (agent, &value) in x.iter().enumerate() {
            if !(-TAU_STOCH..=1.0 + TAU_STOCH).contains(&value) {
                return Err(SimError::Containment {
                    step: n + 1,
                    agent,
                    value,
                });
            }
        }
        let s_cur = psi.map(|p| weighted(&x, p));
        let ds = match (s_cur, s_prev) {
            (Some(cur), Some(prev)) => cur - prev,
            _ => 0.0,
        };
        s_prev = s_cur;
        if cursor < schedule.len() && schedule[cursor] == n + 1 {
            steps.push(n + 1);
            states.push(x.clone());
            if let Some(s) = s_cur {
                s_series.push(s);
                ds_series.push(ds);
            }
            cursor += 1;
        }
    }

    Ok(ReplicaTrace {
        replica_id,
        steps,
        states,
        s: s_series,
        ds: ds_series,
    })
}

/// Cross-replica aggregates at each recorded step.
#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub replicas: u64,
    pub alpha: f64,
    pub eps: f64,
    /// Index of the role agent, if one exists.
    pub role_agent: Option<usize>,
    pub k: usize,
    pub steps: Vec<u64>,
    /// `[step][agent]` empirical `P(X_k[n] > eps)`.
    pub tail_gt: Vec<Vec<f64>>,
    /// `[step][agent]` empirical `P(eps < X_k[n] < 1 - eps)`.
    pub middle: Vec<Vec<f64>>,
    /// `[step][agent]` mean of `(X_k (1 - X_k))^2`.
    pub prod_sq: Vec<Vec<f64>>,
    /// `[step][agent]` mean of `X_k`.
    pub mean_x: Vec<Vec<f64>>,
    /// Mean of `S[n]` (empty without a role agent).
    pub s_mean: Vec<f64>,
    /// Mean of `S[n] - S[n-1]` across replicas.
    pub ds_mean: Vec<f64>,
    /// Unbiased cross-replica variance of the increment.
    pub ds_var: Vec<f64>,
    /// Mean of `|dS|^2`.
    pub ds_m2: Vec<f64>,
    /// Mean of `|dS|^4`.
    pub ds_m4: Vec<f64>,
}

/// Run all replicas (in parallel) and keep the traces alongside the summary.
pub fn run_batch_traces(
    t: &TrustMatrix,
    cfg: &SimConfig,
) -> Result<(BatchSummary, Vec<ReplicaTrace>), SimError> {
    cfg.validate(t)?;
    if cfg.replicas == 0 {
        return Err(SimError::NoReplicas);
    }
    let psi = if cfg.role.has_role_agent() {
        Some(partition(t)?.psi)
    } else {
        None
    };
    let results: Vec<Result<ReplicaTrace, SimError>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|rid| run_replica_with(t, psi.as_ref(), cfg, rid))
        .collect();
    let mut traces = Vec::with_capacity(results.len());
    for (rid, result) in results.into_iter().enumerate() {
        match result {
            Ok(trace) => traces.push(trace),
            Err(e) => {
                return Err(SimError::Replica {
                    id: rid as u64,
                    source: Box::new(e),
                })
            }
        }
    }
    let summary = aggregate(t, cfg, &traces);
    Ok((summary, traces))
}

/// Run all replicas and aggregate.
pub fn run_batch(t: &TrustMatrix, cfg: &SimConfig) -> Result<BatchSummary, SimError> {
    run_batch_traces(t, cfg).map(|(summary, _)| summary)
}

fn aggregate(t: &TrustMatrix, cfg: &SimConfig, traces: &[ReplicaTrace]) -> BatchSummary {
    let k = t.size();
    let steps = traces[0].steps.clone();
    let n_steps = steps.len();
    let reps = traces.len() as f64;
    let eps = cfg.eps;
    let with_s = cfg.role.has_role_agent();

    let mut tail_gt = vec![vec![0.0; k]; n_steps];
    let mut middle = vec![vec![0.0; k]; n_steps];
    let mut prod_sq = vec![vec![0.0; k]; n_steps];
    let mut mean_x = vec![vec![0.0; k]; n_steps];
    let mut s_mean = vec![0.0; if with_s { n_steps } else { 0 }];
    let mut ds_mean = vec![0.0; if with_s { n_steps } else { 0 }];
    let mut ds_m2 = vec![0.0; if with_s { n_steps } else { 0 }];
    let mut ds_m4 = vec![0.0; if with_s { n_steps } else { 0 }];

    for trace in traces {
        for (si, state) in trace.states.iter().enumerate() {
            for (agent, &value) in state.iter().enumerate() {
                if value > eps {
                    tail_gt[si][agent] += 1.0;
                }
                if value > eps && value < 1.0 - eps {
                    middle[si][agent] += 1.0;
                }
                let prod = value * (1.0 - value);
                prod_sq[si][agent] += prod * prod;
                mean_x[si][agent] += value;
            }
            if with_s {
                s_mean[si] += trace.s[si];
                let ds = trace.ds[si];
                ds_mean[si] += ds;
                ds_m2[si] += ds * ds;
                ds_m4[si] += ds.powi(4);
            }
        }
    }
    for si in 0..n_steps {
        for agent in 0..k {
            tail_gt[si][agent] /= reps;
            middle[si][agent] /= reps;
            prod_sq[si][agent] /= reps;
            mean_x[si][agent] /= reps;
        }
        if with_s {
            s_mean[si] /= reps;
            ds_mean[si] /= reps;
            ds_m2[si] /= reps;
            ds_m4[si] /= reps;
        }
    }
    let ds_var = if with_s {
        (0..n_steps)
            .map(|si| {
                if traces.len() < 2 {
                    return 0.0;
                }
                let mean = ds_mean[si];
                let ss: f64 = traces.iter().map(|tr| (tr.ds[si] - mean).powi(2)).sum();
                ss / (reps - 1.0)
            })
            .collect()
    } else {
        Vec::new()
    };

    BatchSummary {
        replicas: traces.len() as u64,
        alpha: cfg.alpha,
        eps,
        role_agent: if with_s { Some(cfg.role.agent) } else { None },
        k,
        steps,
        tail_gt,
        middle,
        prod_sq,
        mean_x,
        s_mean,
        ds_mean,
        ds_var,
        ds_m2,
        ds_m4,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn beta_chain() -> TrustMatrix {
        TrustMatrix::from_rows(&[vec![1.0, 0.0], vec![0.3, 0.7]], Some(0), false).unwrap()
    }

    fn chain_config(role: AgentRoleSpec) -> SimConfig {
        SimConfig {
            alpha: 0.5,
            horizon: 200,
            replicas: 1,
            seed: 17,
            role,
            init: InitSpec::Constant(1.0),
            eps: DEFAULT_EPS,
        }
    }

    #[test]
    fn step_direct_evaluation() {
        let t = TrustMatrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]], Some(0), false).unwrap();
        let x = DVector::from_vec(vec![0.0, 0.5]);
        let a = DVector::from_vec(vec![0.0, 1.0]);
        let next = ra_step(&t, &x, 0.5, &a).unwrap();
        assert_eq!(next[0], 0.0);
        assert_abs_diff_eq!(next[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn extreme_probabilities_draw_surely() {
        let mut rng = replica_rng(1, 0);
        let role = AgentRoleSpec::none();
        let ones = DVector::from_element(4, 1.0);
        let zeros = DVector::zeros(4);
        for n in 0..100 {
            assert_eq!(draw_actions(&ones, &role, n, &mut rng).sum(), 4.0);
            assert_eq!(draw_actions(&zeros, &role, n, &mut rng).sum(), 0.0);
        }
    }

    #[test]
    fn bernoulli_frequency_matches_binomial_bound() {
        let mut rng = replica_rng(5, 0);
        let role = AgentRoleSpec::none();
        let x = DVector::from_element(2, 0.5);
        let n_draws = 100_000;
        let mut count = 0.0;
        for n in 0..n_draws {
            count += draw_actions(&x, &role, n, &mut rng)[0];
        }
        let freq = count / n_draws as f64;
        let bound = 3.0 * (0.25f64 / n_draws as f64).sqrt();
        assert!((freq - 0.5).abs() <= bound, "freq {freq}");
    }

    #[test]
    fn drifting_frequency_matches_law() {
        let law = DriftLaw::Power { c: 1.0, p: 1.0 };
        let role = AgentRoleSpec::drifting(law.clone());
        let x = DVector::from_element(2, 0.9);
        let n = 3; // f[3] = 0.25
        let f = law.eval(n);
        let n_draws = 100_000;
        let mut rng = replica_rng(6, 0);
        let mut count = 0.0;
        for _ in 0..n_draws {
            count += draw_actions(&x, &role, n, &mut rng)[0];
        }
        let freq = count / n_draws as f64;
        let bound = 3.0 * (f * (1.0 - f) / n_draws as f64).sqrt();
        assert!((freq - f).abs() <= bound, "freq {freq} vs f {f}");
    }

    #[test]
    fn replicas_are_bit_identical_for_same_stream() {
        let t = beta_chain();
        let cfg = chain_config(AgentRoleSpec::stubborn());
        let a = run_replica(&t, &cfg, 3).unwrap();
        let b = run_replica(&t, &cfg, 3).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.s, b.s);
        let c = run_replica(&t, &cfg, 4).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn stubborn_coordinate_pinned_at_zero() {
        let t = beta_chain();
        let cfg = chain_config(AgentRoleSpec::stubborn());
        let trace = run_replica(&t, &cfg, 0).unwrap();
        assert!(trace.states.iter().all(|x| x[0] == 0.0));
    }

    #[test]
    fn drifting_with_zero_law_matches_stubborn() {
        let t = beta_chain();
        let stubborn = run_replica(&t, &chain_config(AgentRoleSpec::stubborn()), 2).unwrap();
        let zero_law = DriftLaw::Exp {
            c: 0.0,
            gamma: 0.5,
        };
        let drifting =
            run_replica(&t, &chain_config(AgentRoleSpec::drifting(zero_law)), 2).unwrap();
        assert_eq!(stubborn.states, drifting.states);
        assert_eq!(stubborn.s, drifting.s);
    }

    #[test]
    fn consensus_states_are_absorbing() {
        let rows = vec![vec![0.4, 0.6], vec![0.3, 0.7]];
        let t = TrustMatrix::from_rows(&rows, None, false).unwrap();
        let mut cfg = chain_config(AgentRoleSpec::none());
        cfg.init = InitSpec::Explicit(vec![1.0, 1.0]);
        cfg.horizon = 50;
        let trace = run_replica(&t, &cfg, 0).unwrap();
        assert!(trace.states.iter().all(|x| x[0] == 1.0 && x[1] == 1.0));
        cfg.init = InitSpec::Explicit(vec![0.0, 0.0]);
        let trace = run_replica(&t, &cfg, 0).unwrap();
        assert!(trace.states.iter().all(|x| x[0] == 0.0 && x[1] == 0.0));
    }

    #[test]
    fn states_stay_in_unit_interval() {
        let rows = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.2, 0.1, 0.7],
            vec![0.0, 0.9, 0.1],
        ];
        let t = TrustMatrix::from_rows(&rows, Some(0), false).unwrap();
        let mut cfg = chain_config(AgentRoleSpec::stubborn());
        cfg.init = InitSpec::UniformRandom;
        cfg.horizon = 500;
        let trace = run_replica(&t, &cfg, 9).unwrap();
        for state in &trace.states {
            for &v in state.iter() {
                assert!((0.0..=1.0 + TAU_STOCH).contains(&v));
            }
        }
    }

    #[test]
    fn chain_mean_matches_expectation_recursion() {
        // E[Y[n+1]] = (1 - alpha) E[Y[n]] + alpha q E[Y[n]] with q = 0.7,
        // i.e. a geometric decay at rate 1 - alpha (1 - q) = 0.85
        let t = beta_chain();
        let cfg = SimConfig {
            alpha: 0.5,
            horizon: 30,
            replicas: 4000,
            seed: 99,
            role: AgentRoleSpec::stubborn(),
            init: InitSpec::Constant(1.0),
            eps: DEFAULT_EPS,
        };
        let (summary, traces) = run_batch_traces(&t, &cfg).unwrap();
        for (si, &n) in summary.steps.iter().enumerate() {
            let expected = 0.85f64.powi(n as i32);
            let mean = summary.mean_x[si][1];
            let sd: f64 = {
                let ss: f64 = traces
                    .iter()
                    .map(|tr| (tr.states[si][1] - mean).powi(2))
                    .sum();
                (ss / (traces.len() as f64 - 1.0)).sqrt()
            };
            let se = sd / (traces.len() as f64).sqrt();
            assert!(
                (mean - expected).abs() <= 3.0 * se + 1e-12,
                "step {n}: mean {mean} vs {expected} (se {se})"
            );
        }
    }

    #[test]
    fn batch_with_single_replica_equals_trace_stats() {
        let t = beta_chain();
        let cfg = chain_config(AgentRoleSpec::stubborn());
        let (summary, traces) = run_batch_traces(&t, &cfg).unwrap();
        assert_eq!(summary.replicas, 1);
        let trace = &traces[0];
        for (si, state) in trace.states.iter().enumerate() {
            assert_eq!(summary.mean_x[si][1], state[1]);
            assert_eq!(summary.s_mean[si], trace.s[si]);
        }
    }

    #[test]
    fn recorded_steps_cover_horizon() {
        let steps = recorded_steps(50);
        assert_eq!(steps.len(), 51);
        let steps = recorded_steps(1_000_000);
        assert_eq!(steps[0], 0);
        assert_eq!(*steps.last().unwrap(), 1_000_000);
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
        assert!(steps.len() < 11_000);
    }

    #[test]
    fn config_rejects_bad_alpha_and_eps() {
        let t = beta_chain();
        let mut cfg = chain_config(AgentRoleSpec::stubborn());
        cfg.alpha = 1.0;
        assert!(matches!(cfg.validate(&t), Err(SimError::InvalidAlpha(_))));
        let mut cfg = chain_config(AgentRoleSpec::stubborn());
        cfg.eps = 0.5;
        assert!(matches!(cfg.validate(&t), Err(SimError::InvalidEps(_))));
    }

    #[test]
    fn config_rejects_wrong_init_length() {
        let t = beta_chain();
        let mut cfg = chain_config(AgentRoleSpec::stubborn());
        cfg.init = InitSpec::Explicit(vec![0.5, 0.5]);
        assert!(matches!(
            cfg.validate(&t),
            Err(SimError::InitLength {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn batch_summary_serializes_to_json() {
        let t = beta_chain();
        let cfg = chain_config(AgentRoleSpec::stubborn());
        let summary = run_batch(&t, &cfg).unwrap();
        let value = serde_json::to_value(&summary).unwrap();
        assert_eq!(value["replicas"], 1);
        assert_eq!(value["steps"][0], 0);
        assert!(value["tail_gt"].is_array());
    }

    #[test]
    fn drift_laws_decay_to_zero() {
        let power = DriftLaw::Power { c: 2.0, p: 0.5 };
        let exp = DriftLaw::Exp {
            c: 1.0,
            gamma: 0.9,
        };
        assert_eq!(power.eval(0), 1.0); // clamped
        assert!(power.eval(10_000) < 0.03);
        assert!(exp.eval(200) < 1e-9);
        assert!(DriftLaw::Power { c: 1.0, p: 0.0 }.validate().is_err());
        assert!(DriftLaw::Exp { c: 1.0, gamma: 1.0 }.validate().is_err());
    }
}
