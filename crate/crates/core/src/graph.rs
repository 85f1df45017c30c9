//! Trust-network construction, validation, and block partitioning.
//!
//! A trust network is a dense row-stochastic matrix `T` where entry `(i, j)`
//! is the trust agent `i` puts in agent `j`. One agent may be designated
//! *stubborn*: its row is the unit row, so its opinion never moves. With the
//! stubborn agent relabeled to index 0 the matrix takes the block form
//!
//! ```text
//!     T = [ 1   0 ]
//!         [ r   Q ]
//! ```
//!
//! where `r` holds the ordinary agents' trust in the stubborn agent and `Q`
//! the trust between ordinary agents. All downstream analysis requires `Q`
//! irreducible and `r` nonzero; [`partition`] enforces both.
//!
//! Edge convention: an input line `i j w` means agent `i` puts trust `w` in
//! agent `j` (`t_ij = w`). In graph terms that is an edge from `j` to `i` —
//! influence flows along the transpose of the usual adjacency-list reading.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::spectral::{spectral_radius_perron, SpectralError};

/// Absolute tolerance on row sums when checking (sub-)stochasticity.
pub const TAU_STOCH: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("matrix must be square and non-empty, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("weight at ({row}, {col}) is {value}; weights must be finite and >= 0")]
    BadWeight { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}; expected 1 within {TAU_STOCH:e} (set normalize to rescale)")]
    RowSumInvalid { row: usize, sum: f64 },
    #[error("row {row} sums to zero and cannot be normalized")]
    ZeroRow { row: usize },
    #[error("stubborn row {row} must be the unit row: 1 on the diagonal, 0 elsewhere")]
    StubbornRowNotUnit { row: usize },
    #[error("agent index {index} out of range for {size} agents")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("no stubborn agent designated")]
    NoStubbornAgent,
    #[error("network has no ordinary agents")]
    NoOrdinaryAgents,
    #[error("ordinary block is not irreducible (its directed graph is not strongly connected)")]
    NotIrreducible,
    #[error("no ordinary agent puts positive trust in the stubborn agent")]
    NoStubbornLink,
    #[error("ordinary block has spectral radius {rho}, expected strictly below 1")]
    NotContracting { rho: f64 },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// A validated K x K row-stochastic trust matrix.
///
/// If a stubborn agent was designated it is relabeled to index 0 on
/// construction (rows and columns swapped), so the block form above holds
/// verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustMatrix {
    weights: DMatrix<f64>,
    stubborn: Option<usize>,
    relabeled_from: Option<usize>,
}

impl TrustMatrix {
    /// Validate a dense weight matrix. `stubborn` is the index in the
    /// *source* labeling; rows are rescaled to sum 1 only when `normalize`
    /// is set, otherwise a row sum off by more than [`TAU_STOCH`] is an error.
    pub fn from_matrix(
        mut weights: DMatrix<f64>,
        stubborn: Option<usize>,
        normalize: bool,
    ) -> Result<Self, GraphError> {
        let (rows, cols) = weights.shape();
        if rows == 0 || rows != cols {
            return Err(GraphError::NotSquare { rows, cols });
        }
        for i in 0..rows {
            for j in 0..cols {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(GraphError::BadWeight {
                        row: i,
                        col: j,
                        value: w,
                    });
                }
            }
        }
        let mut relabeled_from = None;
        if let Some(s) = stubborn {
            if s >= rows {
                return Err(GraphError::IndexOutOfRange {
                    index: s,
                    size: rows,
                });
            }
            if s != 0 {
                weights.swap_rows(0, s);
                weights.swap_columns(0, s);
                relabeled_from = Some(s);
            }
        }
        if normalize {
            for i in 0..rows {
                let sum: f64 = weights.row(i).sum();
                if sum <= 0.0 {
                    return Err(GraphError::ZeroRow { row: i });
                }
                for j in 0..cols {
                    weights[(i, j)] /= sum;
                }
            }
        }
        for i in 0..rows {
            let sum: f64 = weights.row(i).sum();
            if (sum - 1.0).abs() > TAU_STOCH {
                return Err(GraphError::RowSumInvalid { row: i, sum });
            }
        }
        if stubborn.is_some() {
            let unit = weights[(0, 0)] == 1.0 && (1..cols).all(|j| weights[(0, j)] == 0.0);
            if !unit {
                return Err(GraphError::StubbornRowNotUnit {
                    row: relabeled_from.unwrap_or(0),
                });
            }
        }
        Ok(Self {
            weights,
            stubborn: stubborn.map(|_| 0),
            relabeled_from,
        })
    }

    /// Validate a matrix given as nested rows.
    pub fn from_rows(
        rows: &[Vec<f64>],
        stubborn: Option<usize>,
        normalize: bool,
    ) -> Result<Self, GraphError> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(GraphError::NotSquare {
                rows: n,
                cols: rows.first().map_or(0, Vec::len),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_matrix(DMatrix::from_row_slice(n, n, &flat), stubborn, normalize)
    }

    /// Parse the edge-list text format: one `i j w` triple per line
    /// (agent `i` trusts agent `j` with weight `w`), `#` comments, and the
    /// header directives `K=<int>`, `stubborn=<int>`, `normalize=<bool>`.
    /// `K` is inferred from the largest index when absent.
    pub fn parse_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut size: Option<usize> = None;
        let mut stubborn: Option<usize> = None;
        let mut normalize = false;
        let mut triples: Vec<(usize, usize, f64, usize)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                let (key, value) = (key.trim(), value.trim());
                let parse_err = |msg: String| GraphError::Parse {
                    line: line_no,
                    msg,
                };
                match key {
                    "K" => {
                        size = Some(value.parse().map_err(|_| {
                            parse_err(format!("invalid K directive '{value}'"))
                        })?)
                    }
                    "stubborn" => {
                        stubborn = Some(value.parse().map_err(|_| {
                            parse_err(format!("invalid stubborn directive '{value}'"))
                        })?)
                    }
                    "normalize" => {
                        normalize = value.parse().map_err(|_| {
                            parse_err(format!("invalid normalize directive '{value}'"))
                        })?
                    }
                    other => return Err(parse_err(format!("unknown directive '{other}'"))),
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(GraphError::Parse {
                    line: line_no,
                    msg: format!("expected 'i j w', got '{line}'"),
                });
            }
            let i: usize = fields[0].parse().map_err(|_| GraphError::Parse {
                line: line_no,
                msg: format!("invalid agent index '{}'", fields[0]),
            })?;
            let j: usize = fields[1].parse().map_err(|_| GraphError::Parse {
                line: line_no,
                msg: format!("invalid agent index '{}'", fields[1]),
            })?;
            let w: f64 = fields[2].parse().map_err(|_| GraphError::Parse {
                line: line_no,
                msg: format!("invalid weight '{}'", fields[2]),
            })?;
            triples.push((i, j, w, line_no));
        }

        let inferred = triples
            .iter()
            .map(|&(i, j, _, _)| i.max(j) + 1)
            .max()
            .unwrap_or(0);
        let k = size.unwrap_or(inferred);
        if k == 0 {
            return Err(GraphError::Parse {
                line: 0,
                msg: "no edges and no K directive".into(),
            });
        }
        let mut weights = DMatrix::zeros(k, k);
        let mut seen = vec![false; k * k];
        for (i, j, w, line_no) in triples {
            if i >= k || j >= k {
                return Err(GraphError::IndexOutOfRange {
                    index: i.max(j),
                    size: k,
                });
            }
            if seen[i * k + j] {
                return Err(GraphError::Parse {
                    line: line_no,
                    msg: format!("duplicate edge ({i}, {j})"),
                });
            }
            seen[i * k + j] = true;
            weights[(i, j)] = w;
        }
        Self::from_matrix(weights, stubborn, normalize)
    }

    /// Reassemble a full trust matrix from an `(r, Q)` block pair, with the
    /// stubborn agent at index 0. Inverse of [`partition`] on valid inputs.
    pub fn from_partition(r: &DVector<f64>, q: &DMatrix<f64>) -> Result<Self, GraphError> {
        let m = r.len();
        if q.nrows() != m || q.ncols() != m {
            return Err(GraphError::NotSquare {
                rows: q.nrows(),
                cols: q.ncols(),
            });
        }
        let k = m + 1;
        let mut weights = DMatrix::zeros(k, k);
        weights[(0, 0)] = 1.0;
        for i in 0..m {
            weights[(i + 1, 0)] = r[i];
            for j in 0..m {
                weights[(i + 1, j + 1)] = q[(i, j)];
            }
        }
        Self::from_matrix(weights, Some(0), false)
    }

    pub fn size(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Trust agent `i` puts in agent `j`.
    pub fn trust(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Index of the stubborn agent (always 0 after relabeling), if any.
    pub fn stubborn(&self) -> Option<usize> {
        self.stubborn
    }

    /// Original label of the stubborn agent if it was moved to index 0.
    pub fn relabeled_from(&self) -> Option<usize> {
        self.relabeled_from
    }
}

/// The `(r, Q)` block decomposition of a trust matrix with a stubborn agent,
/// together with the spectral data of `Q`: its spectral radius `lambda` and
/// the left Perron eigenvector `psi` normalized so its entries sum to 1.
#[derive(Debug, Clone)]
pub struct PartitionedTrust {
    /// Ordinary agents' trust in the stubborn agent, length K-1.
    pub r: DVector<f64>,
    /// Trust between ordinary agents, (K-1) x (K-1), irreducible.
    pub q: DMatrix<f64>,
    /// Spectral radius of `q`; strictly below 1.
    pub lambda: f64,
    /// Left Perron eigenvector of `q`, strictly positive, sums to 1.
    pub psi: DVector<f64>,
    /// Final eigenpair residual reported by the power iteration.
    pub eig_residual: f64,
}

impl PartitionedTrust {
    pub fn ordinary_count(&self) -> usize {
        self.r.len()
    }
}

/// Decompose a trust matrix with a designated stubborn agent into its
/// `(r, Q)` blocks and compute the spectral data of `Q`.
///
/// Errors if `Q` is not irreducible or if no ordinary agent puts positive
/// trust in the stubborn agent (either breaks the convergence guarantees).
pub fn partition(t: &TrustMatrix) -> Result<PartitionedTrust, GraphError> {
    if t.stubborn().is_none() {
        return Err(GraphError::NoStubbornAgent);
    }
    let k = t.size();
    if k < 2 {
        return Err(GraphError::NoOrdinaryAgents);
    }
    let m = k - 1;
    let r = DVector::from_fn(m, |i, _| t.weights[(i + 1, 0)]);
    let q = t.weights.view((1, 1), (m, m)).into_owned();
    if r.max() <= 0.0 {
        return Err(GraphError::NoStubbornLink);
    }
    if !check_irreducible(&q) {
        return Err(GraphError::NotIrreducible);
    }
    let eig = spectral_radius_perron(&q)?;
    if eig.rho >= 1.0 {
        return Err(GraphError::NotContracting { rho: eig.rho });
    }
    Ok(PartitionedTrust {
        r,
        q,
        lambda: eig.rho,
        psi: eig.left_vector,
        eig_residual: eig.residual,
    })
}

/// True iff the directed graph induced by the nonzero pattern of `q` is
/// strongly connected. Strong connectivity is invariant under reversing
/// every edge, so either reading of the trust convention gives the same
/// answer; we test reachability of all nodes from node 0 in the graph and
/// in its transpose.
pub fn check_irreducible(q: &DMatrix<f64>) -> bool {
    let n = q.nrows();
    if n == 0 || q.ncols() != n {
        return false;
    }
    let forward = |i: usize, j: usize| q[(i, j)] > 0.0;
    let backward = |i: usize, j: usize| q[(j, i)] > 0.0;
    full_reach(n, forward) && full_reach(n, backward)
}

fn full_reach(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        for (j, visited) in seen.iter_mut().enumerate() {
            if !*visited && edge(i, j) {
                *visited = true;
                count += 1;
                stack.push(j);
            }
        }
    }
    count == n
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn identity_matrix_is_valid() {
        let t = TrustMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], None, false).unwrap();
        assert_eq!(t.size(), 2);
        assert_eq!(t.stubborn(), None);
    }

    #[test]
    fn stubborn_unit_row_accepted() {
        let t = TrustMatrix::from_rows(&[vec![1.0, 0.0], vec![0.3, 0.7]], Some(0), false).unwrap();
        assert_eq!(t.stubborn(), Some(0));
        assert_eq!(t.trust(1, 0), 0.3);
    }

    #[test]
    fn row_sum_violation_rejected_without_normalize() {
        let err = TrustMatrix::from_rows(&[vec![0.5, 0.6], vec![0.3, 0.7]], None, false)
            .unwrap_err();
        assert!(matches!(err, GraphError::RowSumInvalid { row: 0, .. }));
    }

    #[test]
    fn normalize_rescales_rows() {
        let t = TrustMatrix::from_rows(&[vec![0.5, 0.6], vec![0.3, 0.7]], None, true).unwrap();
        assert_abs_diff_eq!(t.trust(0, 0), 0.5 / 1.1, epsilon = 1e-15);
        assert_abs_diff_eq!(t.row_sum(0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn stubborn_row_must_be_unit() {
        let err = TrustMatrix::from_rows(&[vec![0.9, 0.1], vec![0.3, 0.7]], Some(0), false)
            .unwrap_err();
        assert!(matches!(err, GraphError::StubbornRowNotUnit { .. }));
    }

    #[test]
    fn negative_weight_rejected() {
        let err =
            TrustMatrix::from_rows(&[vec![1.5, -0.5], vec![0.0, 1.0]], None, false).unwrap_err();
        assert!(matches!(err, GraphError::BadWeight { row: 0, col: 1, .. }));
    }

    #[test]
    fn stubborn_agent_relabeled_to_zero() {
        // stubborn agent enters as index 2
        let rows = vec![
            vec![0.5, 0.3, 0.2],
            vec![0.1, 0.9, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let t = TrustMatrix::from_rows(&rows, Some(2), false).unwrap();
        assert_eq!(t.stubborn(), Some(0));
        assert_eq!(t.relabeled_from(), Some(2));
        assert_eq!(t.trust(0, 0), 1.0);
        // old row 0 is now row 2 with its stubborn-trust in column 0
        assert_eq!(t.trust(2, 0), 0.2);
        assert_eq!(t.trust(2, 2), 0.5);
        assert_eq!(t.trust(2, 1), 0.3);
    }

    #[test]
    fn parse_edge_list_with_directives() {
        let text = "\
# beta chain
K=2
stubborn=0
0 0 1.0
1 0 0.3
1 1 0.7
";
        let t = TrustMatrix::parse_edge_list(text).unwrap();
        assert_eq!(t.size(), 2);
        assert_eq!(t.trust(1, 0), 0.3);
    }

    #[test]
    fn parse_rejects_duplicate_edges() {
        let text = "K=2\n0 0 1.0\n0 0 0.5\n1 1 1.0\n";
        let err = TrustMatrix::parse_edge_list(text).unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 3, .. }));
    }

    #[test]
    fn parse_rejects_out_of_range_index() {
        let text = "K=2\n0 5 1.0\n";
        let err = TrustMatrix::parse_edge_list(text).unwrap_err();
        assert!(matches!(err, GraphError::IndexOutOfRange { index: 5, size: 2 }));
    }

    #[test]
    fn partition_beta_chain() {
        let t = TrustMatrix::from_rows(&[vec![1.0, 0.0], vec![0.3, 0.7]], Some(0), false).unwrap();
        let p = partition(&t).unwrap();
        assert_eq!(p.r.as_slice(), &[0.3]);
        assert_eq!(p.q[(0, 0)], 0.7);
        assert_abs_diff_eq!(p.lambda, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(p.psi[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn partition_k3_quadratic_oracle() {
        // 2x2 ordinary block; the dominant root of x^2 - 0.2x - 0.64
        // is (0.2 + sqrt(2.6)) / 2.
        let rows = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.2, 0.0, 0.8],
            vec![0.0, 0.8, 0.2],
        ];
        let t = TrustMatrix::from_rows(&rows, Some(0), false).unwrap();
        let p = partition(&t).unwrap();
        assert_eq!(p.r.as_slice(), &[0.2, 0.0]);
        assert_eq!(p.q[(0, 1)], 0.8);
        let expected = (0.2 + 2.6f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(p.lambda, expected, epsilon = 1e-12);
        assert!(p.psi.iter().all(|&v| v > 0.0));
        assert_abs_diff_eq!(p.psi.sum(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn partition_accepts_fully_trusting_single_agent() {
        // the lone ordinary agent routes everything to the stubborn agent;
        // the 1x1 ordinary block is zero, the boundary case lambda = 0
        let t = TrustMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]], Some(0), false).unwrap();
        let p = partition(&t).unwrap();
        assert_eq!(p.r.as_slice(), &[1.0]);
        assert_eq!(p.lambda, 0.0);
        assert_eq!(p.psi[0], 1.0);
    }

    #[test]
    fn partition_rejects_split_ordinary_block() {
        // two strongly connected halves with no cross edges
        let rows = vec![
            vec![1.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.2, 0.0, 0.8, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 1.0, 0.0],
        ];
        let t = TrustMatrix::from_rows(&rows, Some(0), false).unwrap();
        assert!(matches!(partition(&t), Err(GraphError::NotIrreducible)));
    }

    #[test]
    fn partition_requires_stubborn_link() {
        let rows = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
        ];
        let t = TrustMatrix::from_rows(&rows, Some(0), false).unwrap();
        assert!(matches!(partition(&t), Err(GraphError::NoStubbornLink)));
    }

    #[test]
    fn irreducible_two_cycle() {
        let q = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(check_irreducible(&q));
    }

    #[test]
    fn reducible_triangular() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        assert!(!check_irreducible(&q));
    }

    #[test]
    fn single_node_is_strongly_connected() {
        assert!(check_irreducible(&DMatrix::from_row_slice(1, 1, &[0.0])));
    }

    // Brute-force oracle: transitive closure by repeated squaring of the
    // boolean adjacency pattern.
    fn closure_oracle(pattern: &[Vec<bool>]) -> bool {
        let n = pattern.len();
        let mut reach = pattern.to_vec();
        for _ in 0..n {
            let prev = reach.clone();
            for i in 0..n {
                for j in 0..n {
                    if !reach[i][j] {
                        reach[i][j] = (0..n).any(|k| prev[i][k] && prev[k][j]);
                    }
                }
            }
        }
        (0..n).all(|i| (0..n).all(|j| i == j || reach[i][j]))
    }

    proptest! {
        #[test]
        fn irreducibility_matches_closure_oracle(
            n in 1usize..=6,
            bits in prop::collection::vec(prop::bool::ANY, 36),
        ) {
            let pattern: Vec<Vec<bool>> =
                (0..n).map(|i| (0..n).map(|j| bits[i * 6 + j]).collect()).collect();
            let q = DMatrix::from_fn(n, n, |i, j| if pattern[i][j] { 0.5 } else { 0.0 });
            prop_assert_eq!(check_irreducible(&q), closure_oracle(&pattern));
        }

        #[test]
        fn partition_after_assemble_is_identity(
            m in 1usize..=5,
            seed_weights in prop::collection::vec(0.05f64..1.0, 30),
            trusting in 0usize..5,
        ) {
            // cycle on the ordinary agents guarantees irreducibility; one
            // agent routes part of its trust to the stubborn agent
            let trusting = trusting % m;
            let mut q = DMatrix::zeros(m, m);
            let mut r = DVector::zeros(m);
            for i in 0..m {
                let w = seed_weights[i];
                if i == trusting {
                    r[i] = 0.4;
                    q[(i, (i + 1) % m)] = 0.6;
                } else {
                    q[(i, (i + 1) % m)] = 1.0 - w / 2.0;
                    q[(i, i)] = w / 2.0;
                }
            }
            // m == 1 cycle is a self-loop; fold it into the diagonal
            let t = TrustMatrix::from_partition(&r, &q).unwrap();
            let p = partition(&t).unwrap();
            prop_assert_eq!(p.r, r);
            prop_assert_eq!(p.q, q);
        }
    }

    impl TrustMatrix {
        fn row_sum(&self, i: usize) -> f64 {
            self.weights.row(i).sum()
        }
    }
}
