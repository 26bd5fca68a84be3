//! Sensor-network topology: a validated symmetric, doubly stochastic weight matrix.
//!
//! Besides the weights themselves the topology carries the two graph quantities the
//! convergence analysis depends on: the diameter `D_G` of the support graph and
//! `a_min`, the smallest entry of the weight matrix raised to the power `D_G`.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

/// Absolute tolerance on each row sum.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Absolute tolerance on `|a_ij - a_ji|`.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("weight matrix is empty")]
    Empty,
    #[error("weight matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("weight ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("weight ({row}, {col}) is negative")]
    NegativeEntry { row: usize, col: usize },
    #[error("weights ({row}, {col}) and ({col}, {row}) differ")]
    NotSymmetric { row: usize, col: usize },
    #[error("row {row} sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("node {node} is unreachable from node 0")]
    Disconnected { node: usize },
    #[error("entry ({row}, {col}) of the weight matrix to the power {power} is not positive")]
    NotPrimitive { power: usize, row: usize, col: usize },
    #[error("node index {index} out of range for {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("failed to read topology csv: {0}")]
    Csv(String),
}

/// Validated weighted adjacency matrix of an undirected, connected sensor network.
///
/// Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    weights: DMatrix<f64>,
    diameter: usize,
    a_min: f64,
}

impl NetworkTopology {
    /// Validates `raw_weights` and computes the diameter and `a_min`.
    ///
    /// Self-loops (`a_ii > 0`) are allowed. Connectivity is decided on the off-diagonal
    /// support. A single node is its own network with diameter 1.
    pub fn new(raw_weights: DMatrix<f64>) -> Result<Self, GraphError> {
        let n = raw_weights.nrows();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if raw_weights.ncols() != n {
            return Err(GraphError::NotSquare {
                rows: n,
                cols: raw_weights.ncols(),
            });
        }
        for row in 0..n {
            for col in 0..n {
                let w = raw_weights[(row, col)];
                if !w.is_finite() {
                    return Err(GraphError::NonFinite { row, col });
                }
                if w < 0.0 {
                    return Err(GraphError::NegativeEntry { row, col });
                }
            }
        }
        let mut weights = raw_weights;
        for row in 0..n {
            for col in (row + 1)..n {
                let (a, b) = (weights[(row, col)], weights[(col, row)]);
                if (a - b).abs() > SYMMETRY_TOL {
                    return Err(GraphError::NotSymmetric { row, col });
                }
                if a != b {
                    let avg = 0.5 * (a + b);
                    weights[(row, col)] = avg;
                    weights[(col, row)] = avg;
                }
            }
        }
        for row in 0..n {
            let sum: f64 = weights.row(row).iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(GraphError::NotStochastic { row, sum });
            }
        }

        let diameter = support_diameter(&weights)?;
        let power = matrix_power(&weights, diameter);
        let mut a_min = f64::INFINITY;
        for row in 0..n {
            for col in 0..n {
                let v = power[(row, col)];
                if v <= 0.0 {
                    return Err(GraphError::NotPrimitive {
                        power: diameter,
                        row,
                        col,
                    });
                }
                a_min = a_min.min(v);
            }
        }
        Ok(Self {
            weights,
            diameter,
            a_min,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GraphError> {
        let n = rows.len();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        for r in rows {
            if r.len() != n {
                return Err(GraphError::NotSquare {
                    rows: n,
                    cols: r.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    /// Reads `n` rows of `n` comma-separated decimals, no header.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path.as_ref())
            .map_err(|e| GraphError::Csv(e.to_string()))?;
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| GraphError::Csv(e.to_string()))?;
            let row = record
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| GraphError::Csv(format!("{s:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn identity(n: usize) -> Result<Self, GraphError> {
        Self::new(DMatrix::identity(n, n))
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[(row, col)]
    }

    pub fn diameter(&self) -> usize {
        self.diameter
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }

    /// `{ j : a_ji > 0 }` in ascending order, including `i` itself when `a_ii > 0`.
    pub fn neighbors(&self, i: usize) -> Result<Vec<usize>, GraphError> {
        let n = self.n();
        if i >= n {
            return Err(GraphError::IndexOutOfRange { index: i, n });
        }
        Ok((0..n).filter(|&j| self.weights[(j, i)] > 0.0).collect())
    }

    /// `weights^k` by repeated multiplication.
    pub fn power(&self, k: usize) -> DMatrix<f64> {
        matrix_power(&self.weights, k)
    }

    pub fn is_identity(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..n).all(|j| self.weights[(i, j)] == if i == j { 1.0 } else { 0.0 }))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| self.weights.row(i).iter().copied().collect())
            .collect()
    }
}

fn matrix_power(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut acc = DMatrix::identity(n, n);
    for _ in 0..k {
        acc = &acc * m;
    }
    acc
}

/// Longest shortest path over the off-diagonal support, by BFS from every node.
fn support_diameter(weights: &DMatrix<f64>) -> Result<usize, GraphError> {
    let n = weights.nrows();
    if n == 1 {
        return Ok(1);
    }
    let adjacency: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && weights[(i, j)] > 0.0).collect())
        .collect();
    let mut diameter = 0;
    for source in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &v in &adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if let Some(node) = dist.iter().position(|&d| d == usize::MAX) {
            return Err(GraphError::Disconnected { node });
        }
        diameter = diameter.max(*dist.iter().max().unwrap_or(&0));
    }
    Ok(diameter)
}

/// Metropolis weights for an undirected adjacency pattern:
/// `a_ij = 1 / (1 + max(d_i, d_j))` on edges, remainder on the diagonal.
pub fn metropolis_weights(adjacency: &[Vec<bool>]) -> DMatrix<f64> {
    let n = adjacency.len();
    let degree: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && adjacency[i][j]).count())
        .collect();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && adjacency[i][j] {
                w[(i, j)] = 1.0 / (1.0 + degree[i].max(degree[j]) as f64);
            }
        }
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

/// The three-node weight matrix used by the cooperative ARX scenario.
pub fn three_node_weights() -> Vec<Vec<f64>> {
    vec![
        vec![2.0 / 3.0, 1.0 / 3.0, 0.0],
        vec![1.0 / 3.0, 1.0 / 2.0, 1.0 / 6.0],
        vec![0.0, 1.0 / 6.0, 5.0 / 6.0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn three() -> NetworkTopology {
        NetworkTopology::from_rows(&three_node_weights()).unwrap()
    }

    #[test]
    fn single_node_identity() {
        let t = NetworkTopology::identity(1).unwrap();
        assert_eq!(t.diameter(), 1);
        assert_eq!(t.a_min(), 1.0);
        assert_eq!(t.neighbors(0).unwrap(), vec![0]);
    }

    #[test]
    fn three_node_matrix() {
        let t = three();
        assert_eq!(t.diameter(), 2);
        // (1,3) entry of the squared matrix is (1/3)(1/6); every other entry is larger
        assert_abs_diff_eq!(t.a_min(), 1.0 / 18.0, epsilon = 1e-15);
        assert_eq!(t.neighbors(0).unwrap(), vec![0, 1]);
        assert_eq!(t.neighbors(1).unwrap(), vec![0, 1, 2]);
        assert_eq!(t.neighbors(2).unwrap(), vec![1, 2]);
        assert_eq!(
            t.neighbors(3),
            Err(GraphError::IndexOutOfRange { index: 3, n: 3 })
        );
    }

    #[test]
    fn rejects_disconnected() {
        assert_eq!(
            NetworkTopology::identity(2),
            Err(GraphError::Disconnected { node: 1 })
        );
    }

    #[test]
    fn rejects_row_stochastic_only() {
        let rows = vec![vec![0.5, 0.5], vec![0.25, 0.75]];
        assert_eq!(
            NetworkTopology::from_rows(&rows),
            Err(GraphError::NotSymmetric { row: 0, col: 1 })
        );
    }

    #[test]
    fn rejects_bad_row_sum_and_negative() {
        let rows = vec![vec![0.5, 0.4], vec![0.4, 0.6]];
        assert!(matches!(
            NetworkTopology::from_rows(&rows),
            Err(GraphError::NotStochastic { row: 0, .. })
        ));
        let rows = vec![vec![1.5, -0.5], vec![-0.5, 1.5]];
        assert_eq!(
            NetworkTopology::from_rows(&rows),
            Err(GraphError::NegativeEntry { row: 0, col: 1 })
        );
    }

    #[test]
    fn rejects_periodic_support() {
        // bipartite two-node swap: connected but no power is entrywise positive
        let rows = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(
            NetworkTopology::from_rows(&rows),
            Err(GraphError::NotPrimitive {
                power: 1,
                row: 0,
                col: 0
            })
        );
    }

    #[test]
    fn non_square_rejected() {
        let rows = vec![vec![1.0, 0.0], vec![1.0]];
        assert!(matches!(
            NetworkTopology::from_rows(&rows),
            Err(GraphError::NotSquare { .. })
        ));
    }

    #[test]
    fn powers_stay_above_a_min() {
        let t = three();
        let d = t.diameter();
        for k in d..=4 * d {
            let p = t.power(k);
            let tol = if k == d { 1e-14 } else { 1e-10 };
            assert!(p.min() >= t.a_min() - tol, "k = {k}");
        }
        // some entry of the power below the diameter is zero
        assert_eq!(t.power(d - 1).min(), 0.0);
    }

    #[test]
    fn largest_eigenvalue_is_one() {
        let t = three();
        let eig = nalgebra::SymmetricEigen::new(t.weights().clone());
        assert_abs_diff_eq!(eig.eigenvalues.max(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn metropolis_on_path_is_valid() {
        let adj = vec![
            vec![false, true, false, false],
            vec![true, false, true, false],
            vec![false, true, false, true],
            vec![false, false, true, false],
        ];
        let t = NetworkTopology::new(metropolis_weights(&adj)).unwrap();
        assert_eq!(t.diameter(), 3);
        assert!(t.a_min() > 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        std::fs::write(&path, "0.5, 0.5\n0.5, 0.5\n").unwrap();
        let t = NetworkTopology::from_csv_path(&path).unwrap();
        assert_eq!(t.diameter(), 1);
        assert_eq!(t.a_min(), 0.5);
    }

    #[test]
    fn build_is_deterministic() {
        let a = three();
        let b = three();
        assert_eq!(a, b);
        assert_eq!(a.a_min().to_bits(), b.a_min().to_bits());
    }
}
