//! Spectral radii, left Perron eigenvectors, and resolvent limits of
//! nonnegative matrices.
//!
//! The engine is a shifted power iteration: for a nonnegative irreducible
//! `A` we iterate on `A^T + I`. The shift moves every eigenvalue by exactly
//! 1 and keeps the eigenvectors, so the Perron root of the shifted matrix is
//! strictly dominant even when `A` itself is periodic (a bare cycle matrix
//! makes plain power iteration oscillate forever). Iteration starts from the
//! uniform positive vector, so results are bit-reproducible run to run.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::graph::{check_irreducible, TAU_STOCH};

/// Residual bound guaranteed by [`spectral_radius_perron`] on success.
pub const TAU_EIG: f64 = 1e-12;

/// The iteration aims well below [`TAU_EIG`] so that downstream exact-algebra
/// identities built on `psi` hold at the 1e-12 level with room to spare.
const TARGET_RESIDUAL: f64 = 1e-14;
const MAX_ITERATIONS: usize = 1_000_000;
const SHIFT: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("matrix must be square and non-empty, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("entry at ({row}, {col}) is {value}; expected a finite nonnegative matrix")]
    BadEntry { row: usize, col: usize, value: f64 },
    #[error(
        "power iteration stalled at residual {residual:e} after {iterations} iterations \
         (required {TAU_EIG:e}); the spectrum is near-degenerate"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("I - Q is numerically singular; the spectral radius of Q is not below 1")]
    SingularSystem,
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Result of a converged Perron computation.
#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Spectral radius estimate.
    pub rho: f64,
    /// Left Perron eigenvector, strictly positive for irreducible input,
    /// renormalized so its entries sum to 1.
    pub left_vector: DVector<f64>,
    /// Iterations used.
    pub iterations: usize,
    /// Final residual `max_i |(A^T psi - rho psi)_i|`.
    pub residual: f64,
}

fn validate_nonnegative(a: &DMatrix<f64>) -> Result<(), SpectralError> {
    let (rows, cols) = a.shape();
    if rows == 0 || rows != cols {
        return Err(SpectralError::NotSquare { rows, cols });
    }
    for i in 0..rows {
        for j in 0..cols {
            let v = a[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(SpectralError::BadEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

/// Spectral radius and left Perron eigenvector of a nonnegative irreducible
/// matrix.
pub fn spectral_radius_perron(a: &DMatrix<f64>) -> Result<SpectralData, SpectralError> {
    validate_nonnegative(a)?;
    let m = a.nrows();
    let shifted = a.transpose() + DMatrix::identity(m, m) * SHIFT;

    let mut w = DVector::from_element(m, 1.0 / m as f64);
    let mut best: Option<(f64, f64, DVector<f64>, usize)> = None;

    for iter in 1..=MAX_ITERATIONS {
        let v = &shifted * &w;
        // w > 0 and diag(shifted) >= SHIFT keep the sum positive
        let s = v.sum();
        // residual of the eigenpair (s, w) for the shifted matrix; identical
        // to the residual of (s - SHIFT, w) for A^T since the shift cancels
        let residual = (0..m).map(|i| (v[i] - s * w[i]).abs()).fold(0.0, f64::max);
        let rho = s - SHIFT;
        if best.as_ref().is_none_or(|b| residual < b.1) {
            best = Some((rho, residual, w.clone(), iter));
        }
        if residual <= TARGET_RESIDUAL {
            break;
        }
        w = v / s;
    }

    let (rho, residual, psi, iterations) = best.expect("at least one iteration ran");
    if residual > TAU_EIG {
        return Err(SpectralError::NoConvergence {
            iterations,
            residual,
        });
    }
    let psi = &psi / psi.sum();
    Ok(SpectralData {
        rho,
        left_vector: psi,
        iterations,
        residual,
    })
}

/// Row-sum contraction report for an irreducible sub-stochastic matrix with
/// at least one deficient row: tracks the row sums of `A^n` for `n = 1..=M`
/// and the spectral radius. For such matrices the row sums are non-increasing
/// in `n`, every row sum of `A^M` is strictly below 1, and the spectral
/// radius is strictly below 1.
#[derive(Debug, Clone, Serialize)]
pub struct RowSumReport {
    pub dim: usize,
    /// `row_sums[n-1]` holds the row sums of `A^n`.
    pub row_sums: Vec<Vec<f64>>,
    /// Every row sum non-increasing in the power index.
    pub monotone_non_increasing: bool,
    /// Every row sum of `A^M` strictly below 1.
    pub all_below_one_at_full_power: bool,
    pub rho: f64,
    /// `rho < 1 - TAU_EIG`.
    pub rho_below_one: bool,
}

impl RowSumReport {
    pub fn all_pass(&self) -> bool {
        self.monotone_non_increasing && self.all_below_one_at_full_power && self.rho_below_one
    }
}

pub fn verify_rowsum_contraction(a: &DMatrix<f64>) -> Result<RowSumReport, SpectralError> {
    validate_nonnegative(a)?;
    let m = a.nrows();
    let sums: Vec<f64> = (0..m).map(|i| a.row(i).sum()).collect();
    if sums.iter().any(|&s| s > 1.0 + TAU_STOCH) {
        return Err(SpectralError::Precondition(
            "matrix is not sub-stochastic (a row sums above 1)".into(),
        ));
    }
    if sums.iter().all(|&s| s >= 1.0 - TAU_STOCH) {
        return Err(SpectralError::Precondition(
            "no deficient row (all row sums equal 1)".into(),
        ));
    }
    if !check_irreducible(a) {
        return Err(SpectralError::Precondition(
            "matrix is not irreducible".into(),
        ));
    }

    let mut row_sums = Vec::with_capacity(m);
    let mut power = a.clone();
    row_sums.push((0..m).map(|i| power.row(i).sum()).collect::<Vec<f64>>());
    for _ in 1..m {
        power = &power * a;
        row_sums.push((0..m).map(|i| power.row(i).sum()).collect());
    }

    // exact in real arithmetic; allow a whisker of accumulated roundoff
    let slack = 1e-12;
    let monotone = row_sums.windows(2).all(|pair| {
        pair[0]
            .iter()
            .zip(pair[1].iter())
            .all(|(prev, next)| *next <= *prev + slack)
    });
    let final_below = row_sums[m - 1].iter().all(|&s| s < 1.0);
    let eig = spectral_radius_perron(a)?;

    Ok(RowSumReport {
        dim: m,
        row_sums,
        monotone_non_increasing: monotone,
        all_below_one_at_full_power: final_below,
        rho: eig.rho,
        rho_below_one: eig.rho < 1.0 - TAU_EIG,
    })
}

/// Solution of `(I - Q) x = r` by direct LU solve, the limit of the series
/// `sum_k Q^k r` when the spectral radius of `Q` is below 1.
#[derive(Debug, Clone)]
pub struct NeumannSolution {
    pub x: DVector<f64>,
    /// `max_i |((I - Q) x - r)_i|`, reported rather than bounded a priori
    /// because conditioning degrades as the spectral radius approaches 1.
    pub residual: f64,
}

pub fn neumann_limit(q: &DMatrix<f64>, r: &DVector<f64>) -> Result<NeumannSolution, SpectralError> {
    let m = q.nrows();
    if m == 0 || q.ncols() != m {
        return Err(SpectralError::NotSquare {
            rows: m,
            cols: q.ncols(),
        });
    }
    if r.len() != m {
        return Err(SpectralError::Precondition(format!(
            "vector length {} does not match matrix dimension {m}",
            r.len()
        )));
    }
    let lhs = DMatrix::identity(m, m) - q;
    let x = lhs
        .clone()
        .lu()
        .solve(r)
        .ok_or(SpectralError::SingularSystem)?;
    let residual = (&lhs * &x - r).amax();
    Ok(NeumannSolution { x, residual })
}

/// Truncated series `sum_{k < terms} Q^k r`, kept as a cross-check on the
/// direct solve.
pub fn neumann_truncated(q: &DMatrix<f64>, r: &DVector<f64>, terms: usize) -> DVector<f64> {
    let mut acc = DVector::zeros(r.len());
    let mut term = r.clone();
    for _ in 0..terms {
        acc += &term;
        term = q * term;
    }
    acc
}

/// Worst-case infinity-norm gap between the truncated series and the limit:
/// `rho^terms / (1 - rho)` for `rho < 1` and a unit-bounded `r`.
pub fn geometric_tail_bound(rho: f64, terms: usize) -> f64 {
    rho.powi(terms as i32) / (1.0 - rho)
}
