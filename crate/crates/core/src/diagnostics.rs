//! Executable checks for the convergence machinery of the random-actions
//! model.
//!
//! The central object is the weighted ordinary-block average
//! `S[n] = psi^T Y[n]`, built from the left Perron vector `psi` of the
//! ordinary trust block `Q`. Conditioned on the current state it contracts
//! in expectation by the exact factor `1 - alpha (1 - lambda)`, its increment
//! has conditional variance `alpha^2 lambda^2 sum_k psi_k^2 Y_k (1 - Y_k)`,
//! and those two facts drive every statistic checked here: increment-moment
//! decay, concentration of each agent's probability near {0, 1}, and layer-by-
//! layer herding toward the stubborn agent's action.
//!
//! Two checks are exact algebra (residuals at machine scale); the statistical
//! ones compare Monte Carlo estimates against closed forms at 4 standard
//! errors for equalities and 6 for rejections.

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{PartitionedTrust, TrustMatrix};
use crate::ra_sim::{BatchSummary, ReplicaTrace};

/// Residual bound for the exact conditional-expectation identity.
pub const TOL_IDENTITY: f64 = 1e-12;
/// Default terminal-window threshold for tail statistics.
pub const DELTA_TAIL: f64 = 0.05;
/// Terminal and initial windows cover this fraction of the recorded steps.
pub const WINDOW_FRAC: f64 = 0.05;
/// Standard-error multiple for equality-style statistical checks.
pub const Z_EQUALITY: f64 = 4.0;
/// Standard-error multiple required to reject a formula as wrong.
pub const Z_REJECT: f64 = 6.0;

/// Ignore strict-decrease checks below this floor; the identity residual
/// dominates the contraction gap there.
const S_FLOOR: f64 = 1e-9;

/// Sample variances below this are indistinguishable from zero: squared
/// accumulation roundoff of f64 dot products over 1e5-scale sample sets.
const VAR_NOISE_FLOOR: f64 = 1e-24;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("conditional-expectation identity violated at step {step}: residual {residual:e}")]
    IdentityViolation { step: u64, residual: f64 },
    #[error("expected strict decrease of the conditional expectation at step {step}")]
    DecreaseViolation { step: u64 },
    #[error(
        "sampled statistic {observed} disagrees with formula value {expected} \
         by {z:.1} standard errors (se {std_err:e})"
    )]
    StatisticalMismatch {
        expected: f64,
        observed: f64,
        std_err: f64,
        z: f64,
    },
    #[error("trust layers do not exhaust the ordinary agents")]
    ExhaustionFailure,
    #[error("precondition violated: {0}")]
    Precondition(String),
}

fn require(cond: bool, msg: impl Into<String>) -> Result<(), DiagnosticsError> {
    if cond {
        Ok(())
    } else {
        Err(DiagnosticsError::Precondition(msg.into()))
    }
}

/// Unbiased sample variance and the standard error of that estimator, from
/// the fourth central moment (no normality assumption).
fn variance_with_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let m2 = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let m4 = samples.iter().map(|s| (s - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    let var_of_var = ((m4 - var * var * (n - 3.0) / (n - 1.0)) / n).max(0.0);
    (var, var_of_var.sqrt())
}

fn z_score(gap: f64, se: f64) -> f64 {
    if se > 0.0 {
        gap / se
    } else if gap == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn window_len(steps: usize) -> usize {
    ((steps as f64 * WINDOW_FRAC).ceil() as usize).clamp(1, steps)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

// ---------------------------------------------------------------------------
// Conditional-expectation identity
// ---------------------------------------------------------------------------

/// Per-step record of the exact contraction identity
/// `E[S[n+1] | Y[n]] = (1 - alpha (1 - lambda)) S[n]`.
#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub contraction: f64,
    pub steps: Vec<u64>,
    pub s: Vec<f64>,
    /// Analytic conditional expectation `psi^T ((1-alpha) Y + alpha Q Y)`.
    pub cond_exp: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Conditional variance of the next increment given the recorded state,
    /// `alpha^2 lambda^2 sum_k psi_k^2 Y_k (1 - Y_k)`.
    pub cond_var_formula: Vec<f64>,
    pub max_residual: f64,
    pub strict_decrease: bool,
}

/// Check the contraction identity at every recorded step of a trace. The
/// identity is left-eigenvector algebra, independent of the randomness, so
/// the residual must sit at machine scale regardless of the realized path.
pub fn check_supermartingale(
    p: &PartitionedTrust,
    trace: &ReplicaTrace,
    alpha: f64,
) -> Result<MartingaleReport, DiagnosticsError> {
    let m = p.ordinary_count();
    require(alpha > 0.0 && alpha < 1.0, format!("alpha {alpha} outside (0, 1)"))?;
    require(
        trace.states.first().is_some_and(|x| x.len() == m + 1),
        "trace dimension does not match the partition",
    )?;
    require(
        !trace.s.is_empty(),
        "trace was not produced under a stubborn or drifting role",
    )?;

    let contraction = 1.0 - alpha * (1.0 - p.lambda);
    let var_scale = (alpha * p.lambda).powi(2);
    let mut s_series = Vec::with_capacity(trace.steps.len());
    let mut cond_exp = Vec::with_capacity(trace.steps.len());
    let mut residuals = Vec::with_capacity(trace.steps.len());
    let mut cond_var = Vec::with_capacity(trace.steps.len());
    let mut max_residual: f64 = 0.0;
    let mut strict = true;

    for (i, state) in trace.states.iter().enumerate() {
        let step = trace.steps[i];
        let y = state.rows(1, m).into_owned();
        let s = p.psi.dot(&y);
        let e = (1.0 - alpha) * s + alpha * p.psi.dot(&(&p.q * &y));
        let residual = (e - contraction * s).abs();
        if residual > TOL_IDENTITY {
            return Err(DiagnosticsError::IdentityViolation { step, residual });
        }
        if s > S_FLOOR {
            if e >= s {
                return Err(DiagnosticsError::DecreaseViolation { step });
            }
        } else if e > s {
            strict = false;
        }
        max_residual = max_residual.max(residual);
        s_series.push(s);
        cond_exp.push(e);
        residuals.push(residual);
        cond_var.push(
            var_scale
                * (0..m)
                    .map(|k| p.psi[k] * p.psi[k] * y[k] * (1.0 - y[k]))
                    .sum::<f64>(),
        );
    }

    Ok(MartingaleReport {
        contraction,
        steps: trace.steps.clone(),
        s: s_series,
        cond_exp,
        residuals,
        cond_var_formula: cond_var,
        max_residual,
        strict_decrease: strict,
    })
}

// ---------------------------------------------------------------------------
// Conditional variance of the increment
// ---------------------------------------------------------------------------

/// Monte Carlo check of the increment's conditional variance against the
/// closed form `alpha^2 lambda^2 sum_k psi_k^2 y_k (1 - y_k)`.
#[derive(Debug, Clone, Serialize)]
pub struct CondVarReport {
    pub formula: f64,
    pub sample_var: f64,
    pub std_err: f64,
    pub z: f64,
    pub samples: u64,
}

/// Hold `Y[n] = y` fixed, draw independent Bernoulli action vectors, and
/// compare the sampled variance of `S[n+1] - S[n]` with the formula value at
/// [`Z_EQUALITY`] standard errors of the variance estimator.
pub fn check_conditional_variance(
    p: &PartitionedTrust,
    y: &DVector<f64>,
    alpha: f64,
    samples: u64,
    rng: &mut impl Rng,
) -> Result<CondVarReport, DiagnosticsError> {
    let m = p.ordinary_count();
    require(y.len() == m, "state length does not match the partition")?;
    require(alpha > 0.0 && alpha < 1.0, format!("alpha {alpha} outside (0, 1)"))?;
    require(
        y.iter().all(|&v| (0.0..=1.0).contains(&v)),
        "state probabilities must lie in [0, 1]",
    )?;
    require(samples >= 1000, "need at least 1000 samples")?;

    let formula = alpha * alpha
        * p.lambda
        * p.lambda
        * (0..m)
            .map(|k| p.psi[k] * p.psi[k] * y[k] * (1.0 - y[k]))
            .sum::<f64>();

    let s0 = p.psi.dot(y);
    let mut increments = Vec::with_capacity(samples as usize);
    for _ in 0..samples {
        let b = DVector::from_fn(m, |k, _| {
            if rng.random::<f64>() < y[k] {
                1.0
            } else {
                0.0
            }
        });
        let next = y * (1.0 - alpha) + (&p.q * b) * alpha;
        increments.push(p.psi.dot(&next) - s0);
    }
    let (sample_var, std_err) = variance_with_se(&increments);
    let gap = (sample_var - formula).abs();
    let z = z_score(gap, std_err);
    if gap > VAR_NOISE_FLOOR && z > Z_EQUALITY {
        return Err(DiagnosticsError::StatisticalMismatch {
            expected: formula,
            observed: sample_var,
            std_err,
            z,
        });
    }
    Ok(CondVarReport {
        formula,
        sample_var,
        std_err,
        z,
        samples,
    })
}

// ---------------------------------------------------------------------------
// Increment moment decay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MomentOrder {
    Two,
    Four,
}

impl MomentOrder {
    pub fn exponent(self) -> u32 {
        match self {
            MomentOrder::Two => 2,
            MomentOrder::Four => 4,
        }
    }
}

/// Windowed decay report for `E[|S[n] - S[n-1]|^m]`.
#[derive(Debug, Clone, Serialize)]
pub struct MomentDecayReport {
    pub order: u32,
    pub steps: Vec<u64>,
    pub series: Vec<f64>,
    pub initial_window_mean: f64,
    pub terminal_window_mean: f64,
    pub threshold: f64,
    pub below_threshold: bool,
    pub decayed: bool,
}

/// Report the empirical `E[|dS|^m]` sequence and whether its terminal window
/// sits below both the configured threshold and the initial window. Decay
/// only; no limit claim.
pub fn check_increment_moment_decay(
    batch: &BatchSummary,
    order: MomentOrder,
    threshold: f64,
) -> Result<MomentDecayReport, DiagnosticsError> {
    require(
        batch.role_agent.is_some(),
        "batch lacks increment statistics (no role agent)",
    )?;
    let source = match order {
        MomentOrder::Two => &batch.ds_m2,
        MomentOrder::Four => &batch.ds_m4,
    };
    // the increment at step 0 is identically zero by construction; drop it
    let steps: Vec<u64> = batch.steps[1..].to_vec();
    let series: Vec<f64> = source[1..].to_vec();
    require(!series.is_empty(), "batch recorded no steps past 0")?;

    let w = window_len(series.len());
    let initial = mean(&series[..w]);
    let terminal = mean(&series[series.len() - w..]);
    Ok(MomentDecayReport {
        order: order.exponent(),
        steps,
        series,
        initial_window_mean: initial,
        terminal_window_mean: terminal,
        threshold,
        below_threshold: terminal < threshold,
        decayed: terminal < initial,
    })
}

// ---------------------------------------------------------------------------
// Tail concentration (probability mass leaves the middle of [0, 1])
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct AgentTailStats {
    pub agent: usize,
    pub prod_sq_initial: f64,
    pub prod_sq_terminal: f64,
    /// The mean-square product statistic decayed below the proxy bound.
    pub hypothesis_met: bool,
    pub middle_terminal: f64,
    /// Terminal middle mass below the tail threshold; only asserted when the
    /// hypothesis held.
    pub conclusion: Option<bool>,
}

/// Per-agent check that `E[(X_k (1 - X_k))^2]` decays and, given that, that
/// the terminal probability mass in `(eps, 1 - eps)` is below
/// [`DELTA_TAIL`]. The proxy bound `DELTA_TAIL * (eps (1 - eps))^2` is the
/// Markov-inequality level at which the product statistic forces the middle
/// mass below the threshold.
#[derive(Debug, Clone, Serialize)]
pub struct TailConcentrationReport {
    pub eps: f64,
    pub delta_tail: f64,
    pub proxy_bound: f64,
    pub agents: Vec<AgentTailStats>,
    pub pass: bool,
}

pub fn check_tail_concentration(
    batch: &BatchSummary,
    eps: f64,
) -> Result<TailConcentrationReport, DiagnosticsError> {
    require(eps > 0.0 && eps < 0.5, format!("eps {eps} outside (0, 0.5)"))?;
    require(
        (eps - batch.eps).abs() <= 1e-12,
        format!(
            "batch statistics were aggregated at eps {}, requested {eps}",
            batch.eps
        ),
    )?;
    let n_steps = batch.steps.len();
    let w = window_len(n_steps);
    let proxy_bound = DELTA_TAIL * (eps * (1.0 - eps)).powi(2);

    let mut agents = Vec::new();
    let mut pass = true;
    for agent in 0..batch.k {
        if batch.role_agent == Some(agent) {
            continue;
        }
        let prod: Vec<f64> = batch.prod_sq.iter().map(|row| row[agent]).collect();
        let middle: Vec<f64> = batch.middle.iter().map(|row| row[agent]).collect();
        let initial = mean(&prod[..w]);
        let terminal = mean(&prod[n_steps - w..]);
        let hypothesis_met = terminal <= proxy_bound && terminal <= initial;
        let middle_terminal = mean(&middle[n_steps - w..]);
        let conclusion = hypothesis_met.then_some(middle_terminal < DELTA_TAIL);
        pass &= conclusion == Some(true);
        agents.push(AgentTailStats {
            agent,
            prod_sq_initial: initial,
            prod_sq_terminal: terminal,
            hypothesis_met,
            middle_terminal,
            conclusion,
        });
    }
    Ok(TailConcentrationReport {
        eps,
        delta_tail: DELTA_TAIL,
        proxy_bound,
        agents,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Trust layers and layered herding
// ---------------------------------------------------------------------------

/// Ordinary agents grouped by trust-distance from the stubborn agent: layer 0
/// holds the agents trusting it directly, layer p+1 the agents outside
/// earlier layers trusting someone in layer p. Irreducibility of `Q`
/// guarantees the layers partition the ordinary agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrustLayers {
    /// Global agent indices (the stubborn agent is 0 and excluded).
    pub layers: Vec<Vec<usize>>,
}

pub fn compute_trust_layers(p: &PartitionedTrust) -> Result<TrustLayers, DiagnosticsError> {
    let m = p.ordinary_count();
    let mut assigned = vec![false; m];
    let mut layers: Vec<Vec<usize>> = Vec::new();

    let first: Vec<usize> = (0..m).filter(|&i| p.r[i] > 0.0).collect();
    let mut frontier = first;
    while !frontier.is_empty() {
        for &i in &frontier {
            assigned[i] = true;
        }
        layers.push(frontier.iter().map(|&i| i + 1).collect());
        let previous = frontier;
        frontier = (0..m)
            .filter(|&i| !assigned[i] && previous.iter().any(|&j| p.q[(i, j)] > 0.0))
            .collect();
    }
    if assigned.iter().any(|&a| !a) {
        return Err(DiagnosticsError::ExhaustionFailure);
    }
    Ok(TrustLayers { layers })
}

/// Terminal tail statistics per ordinary agent plus, per layer, the first
/// recorded step at which every agent in the layer dropped below the tail
/// threshold. The passage steps are expected to grow with the layer index;
/// that trend is reported, not asserted.
#[derive(Debug, Clone, Serialize)]
pub struct LayerHerdingReport {
    pub eps: f64,
    pub delta_tail: f64,
    /// `(agent, terminal-window mean of P(X_k > eps))`.
    pub agent_tail_terminal: Vec<(usize, f64)>,
    pub all_below: bool,
    pub layer_first_passage: Vec<Option<u64>>,
    pub passage_non_decreasing: bool,
}

pub fn check_layer_herding(
    batch: &BatchSummary,
    layers: &TrustLayers,
    eps: f64,
) -> Result<LayerHerdingReport, DiagnosticsError> {
    require(
        batch.role_agent.is_some(),
        "layered herding requires a stubborn or drifting run",
    )?;
    require(
        (eps - batch.eps).abs() <= 1e-12,
        format!(
            "batch statistics were aggregated at eps {}, requested {eps}",
            batch.eps
        ),
    )?;
    let n_steps = batch.steps.len();
    let w = window_len(n_steps);

    let terminal_tail = |agent: usize| -> f64 {
        let tail: Vec<f64> = batch.tail_gt.iter().map(|row| row[agent]).collect();
        mean(&tail[n_steps - w..])
    };
    let first_passage = |agent: usize| -> Option<u64> {
        (0..n_steps)
            .find(|&si| batch.tail_gt[si][agent] < DELTA_TAIL)
            .map(|si| batch.steps[si])
    };

    let mut agent_tail_terminal = Vec::new();
    let mut all_below = true;
    for agent in 1..batch.k {
        let t = terminal_tail(agent);
        all_below &= t < DELTA_TAIL;
        agent_tail_terminal.push((agent, t));
    }

    let layer_first_passage: Vec<Option<u64>> = layers
        .layers
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|&agent| first_passage(agent))
                .collect::<Option<Vec<u64>>>()
                .map(|v| v.into_iter().max().unwrap_or(0))
        })
        .collect();
    let passage_non_decreasing = layer_first_passage
        .windows(2)
        .all(|pair| matches!((pair[0], pair[1]), (Some(a), Some(b)) if a <= b));

    Ok(LayerHerdingReport {
        eps,
        delta_tail: DELTA_TAIL,
        agent_tail_terminal,
        all_below,
        layer_first_passage,
        passage_non_decreasing,
    })
}

// ---------------------------------------------------------------------------
// Oscillating counterexample
// ---------------------------------------------------------------------------

/// The alternating sequence 0, 1, 0, 1, ...: its product `x (1 - x)` is
/// identically zero, yet the sequence has no limit in any mode. It documents
/// that mean-square decay of the product statistic locates the probability
/// mass near {0, 1} without forcing each trajectory to settle on one side.
#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleTrace {
    pub values: Vec<f64>,
    pub products: Vec<f64>,
}

impl CounterexampleTrace {
    pub fn max_product(&self) -> f64 {
        self.products.iter().cloned().fold(0.0, f64::max)
    }

    /// `limsup - liminf` over the emitted window.
    pub fn spread(&self) -> f64 {
        let max = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    }
}

pub fn oscillating_counterexample(horizon: u64) -> CounterexampleTrace {
    assert!(horizon >= 2, "need at least two steps to oscillate");
    let values: Vec<f64> = (0..horizon)
        .map(|n| if n % 2 == 1 { 1.0 } else { 0.0 })
        .collect();
    let products = values.iter().map(|x| x * (1.0 - x)).collect();
    CounterexampleTrace { values, products }
}

// ---------------------------------------------------------------------------
// Increment variance for the role-free model
// ---------------------------------------------------------------------------

/// Conditional-variance check for the model without a stubborn agent, where
/// the conserved statistic is `pi^T X[n]` with `pi` the positive left unit
/// eigenvector of the full trust matrix. Conditioning must be on the full
/// previous state and the formula must read the pre-step probabilities:
/// `Var = alpha^2 sum_k pi_k^2 x_k (1 - x_k)`. The report also carries the
/// time-unshifted variant (same sum over the post-step state), which is not
/// an identity — the sampler exposes the gap.
#[derive(Debug, Clone, Serialize)]
pub struct IncrementVarianceReport {
    pub formula: f64,
    pub sample_var: f64,
    pub std_err: f64,
    pub z: f64,
    /// Monte Carlo mean of the same formula evaluated on the post-step state.
    pub unshifted_formula_mean: f64,
    /// Distance between the sampled variance and the unshifted variant.
    pub unshifted_z: f64,
    pub samples: u64,
}

pub fn check_martingale_increment_variance(
    t: &TrustMatrix,
    pi: &DVector<f64>,
    x: &DVector<f64>,
    alpha: f64,
    samples: u64,
    rng: &mut impl Rng,
) -> Result<IncrementVarianceReport, DiagnosticsError> {
    let k = t.size();
    require(
        t.stubborn().is_none(),
        "increment-variance check applies to the model without a stubborn agent",
    )?;
    require(pi.len() == k && x.len() == k, "dimension mismatch")?;
    require(alpha > 0.0 && alpha < 1.0, format!("alpha {alpha} outside (0, 1)"))?;
    require(samples >= 1000, "need at least 1000 samples")?;
    require(
        x.iter().all(|&v| (0.0..=1.0).contains(&v)),
        "state probabilities must lie in [0, 1]",
    )?;
    require(pi.iter().all(|&v| v > 0.0), "pi must be strictly positive")?;
    require((pi.sum() - 1.0).abs() <= 1e-9, "pi must sum to 1")?;
    let eig_residual = (t.weights().transpose() * pi - pi).amax();
    require(
        eig_residual <= 1e-9,
        format!("pi is not a left unit eigenvector (residual {eig_residual:e})"),
    )?;

    let formula = alpha * alpha
        * (0..k)
            .map(|i| pi[i] * pi[i] * x[i] * (1.0 - x[i]))
            .sum::<f64>();

    let q0 = pi.dot(x);
    let mut increments = Vec::with_capacity(samples as usize);
    let mut unshifted_sum = 0.0;
    for _ in 0..samples {
        let a = DVector::from_fn(k, |i, _| {
            if rng.random::<f64>() < x[i] {
                1.0
            } else {
                0.0
            }
        });
        let next = x * (1.0 - alpha) + (t.weights() * a) * alpha;
        increments.push(pi.dot(&next) - q0);
        unshifted_sum += alpha * alpha
            * (0..k)
                .map(|i| pi[i] * pi[i] * next[i] * (1.0 - next[i]))
                .sum::<f64>();
    }
    let (sample_var, std_err) = variance_with_se(&increments);
    let gap = (sample_var - formula).abs();
    let z = z_score(gap, std_err);
    let unshifted_mean = unshifted_sum / samples as f64;
    let unshifted_z = z_score((sample_var - unshifted_mean).abs(), std_err);
    if gap > VAR_NOISE_FLOOR && z > Z_EQUALITY {
        return Err(DiagnosticsError::StatisticalMismatch {
            expected: formula,
            observed: sample_var,
            std_err,
            z,
        });
    }
    Ok(IncrementVarianceReport {
        formula,
        sample_var,
        std_err,
        z,
        unshifted_formula_mean: unshifted_mean,
        unshifted_z,
        samples,
    })
}
