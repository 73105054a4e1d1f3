//! Communication graphs, gossip weights and the spectral gap.
//!
//! A mixing matrix `W` is symmetric and doubly stochastic. Its spectral gap
//! `rho` is `1 - ||U^T W U||_2`, where `U U^T = I - 11^T/n` projects out the
//! consensus direction. Because `W` is symmetric and fixes `1`, this equals
//! `1 - ||W - 11^T/n||_2`, which is what [`spectral_gap`] computes.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Residual tolerance for the doubly-stochastic check.
pub const STOCHASTIC_TOL: f64 = 1e-10;
/// A gap at or below this is treated as no mixing at all.
pub const NO_MIXING_TOL: f64 = 1e-12;

/// Undirected graph on agents `0..n`. Self loops are implicit and never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn new(n: usize) -> Self {
        Self { n, edges: BTreeSet::new() }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut g = Self::new(n);
        for (i, j) in edges {
            g.add_edge(i, j)?;
        }
        Ok(g)
    }

    /// Adds the undirected edge `{i, j}` (0-based). Self loops are ignored and
    /// repeated edges are rejected.
    pub fn add_edge(&mut self, i: usize, j: usize) -> Result<()> {
        if i >= self.n || j >= self.n {
            return Err(Error::InvalidTopology(format!(
                "edge ({}, {}) references an agent outside 1..={}",
                i + 1,
                j + 1,
                self.n
            )));
        }
        if i == j {
            return Ok(());
        }
        let key = (i.min(j), i.max(j));
        if !self.edges.insert(key) {
            return Err(Error::InvalidTopology(format!("duplicate edge ({}, {})", i + 1, j + 1)));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Number of non-self neighbours of every agent.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        let adj = self.neighbors();
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }

    /// Parses an edge list: first line `n`, then one `i j` pair per line,
    /// 1-based. Blank lines and `#` comments are skipped.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Parse("edge list is empty".into()))?;
        let n: usize = first
            .parse()
            .map_err(|_| Error::Parse(format!("bad agent count `{first}`")))?;
        let mut g = Self::new(n);
        for (lineno, line) in lines {
            let mut parts = line.split_whitespace();
            let mut next = || -> Result<usize> {
                let tok = parts
                    .next()
                    .ok_or_else(|| Error::Parse(format!("line {lineno}: expected `i j`")))?;
                tok.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("line {lineno}: bad index `{tok}`")))
            };
            let (i, j) = (next()?, next()?);
            if i == 0 || j == 0 {
                return Err(Error::InvalidTopology(format!("line {lineno}: indices are 1-based")));
            }
            g.add_edge(i - 1, j - 1)?;
        }
        Ok(g)
    }

    pub fn read_edge_list(path: &Path) -> Result<Self> {
        Self::parse_edge_list(&std::fs::read_to_string(path)?)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.n);
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{} {}", i + 1, j + 1);
        }
        out
    }
}

/// Dense gossip weights. Constructors guarantee the mixing invariants;
/// [`MixingMatrix::from_weights`] does not and should be followed by
/// [`validate_mixing`].
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    weights: DMatrix<f64>,
}

impl MixingMatrix {
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() || weights.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "mixing matrix must be square and non-empty, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        Ok(Self { weights })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn identity(n: usize) -> Self {
        Self { weights: DMatrix::identity(n, n) }
    }

    /// Rows of comma-separated values, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.weights.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Parse(format!("bad matrix entry `{}`", c.trim())))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch("matrix CSV is not square".into()));
        }
        Self::from_weights(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

/// Validation residuals (max-norm) and the spectral quantities of `W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralReport {
    pub rho: f64,
    /// `||U^T W U||_2 = 1 - rho`.
    pub second_modulus: f64,
    pub row_sum_residual: f64,
    pub col_sum_residual: f64,
    pub asymmetry: f64,
    /// Magnitude of the most negative entry, 0 when all entries are nonnegative.
    pub negativity: f64,
}

fn check_self_weight(self_weight: f64) -> Result<()> {
    if !(self_weight > 0.0 && self_weight < 1.0) {
        return Err(Error::InvalidWeight(self_weight));
    }
    Ok(())
}

pub fn build_ring(n: usize, self_weight: f64) -> Result<MixingMatrix> {
    if n < 3 {
        return Err(Error::InvalidTopology(format!("ring needs n >= 3, got {n}")));
    }
    check_self_weight(self_weight)?;
    let side = (1.0 - self_weight) / 2.0;
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        w[(i, i)] = self_weight;
        w[(i, (i + 1) % n)] = side;
        w[(i, (i + n - 1) % n)] = side;
    }
    Ok(MixingMatrix { weights: w })
}

/// Agent `(r, c)` has index `r * cols + c` and shares `(1 - self_weight)/4`
/// with each of its four wrap-around neighbours.
pub fn build_torus_2d(rows: usize, cols: usize, self_weight: f64) -> Result<MixingMatrix> {
    if rows < 3 || cols < 3 {
        return Err(Error::InvalidTopology(format!(
            "torus needs both dimensions >= 3, got {rows}x{cols}"
        )));
    }
    check_self_weight(self_weight)?;
    let n = rows * cols;
    let side = (1.0 - self_weight) / 4.0;
    let idx = |r: usize, c: usize| r * cols + c;
    let mut w = DMatrix::zeros(n, n);
    for r in 0..rows {
        for c in 0..cols {
            let i = idx(r, c);
            w[(i, i)] = self_weight;
            w[(i, idx((r + 1) % rows, c))] = side;
            w[(i, idx((r + rows - 1) % rows, c))] = side;
            w[(i, idx(r, (c + 1) % cols))] = side;
            w[(i, idx(r, (c + cols - 1) % cols))] = side;
        }
    }
    Ok(MixingMatrix { weights: w })
}

pub fn build_complete(n: usize) -> Result<MixingMatrix> {
    if n < 2 {
        return Err(Error::InvalidTopology(format!("complete graph needs n >= 2, got {n}")));
    }
    Ok(MixingMatrix { weights: DMatrix::from_element(n, n, 1.0 / n as f64) })
}

/// Metropolis-Hastings weights `W_ij = 1 / (1 + max(deg_i, deg_j))` on edges,
/// with the remaining mass on the diagonal.
pub fn build_metropolis_hastings(graph: &Graph) -> Result<MixingMatrix> {
    let n = graph.n();
    if n == 0 {
        return Err(Error::InvalidTopology("graph has no agents".into()));
    }
    if !graph.is_connected() {
        return Err(Error::DisconnectedGraph);
    }
    let deg = graph.degrees();
    let mut w = DMatrix::zeros(n, n);
    for (i, j) in graph.edges() {
        let v = 1.0 / (1 + deg[i].max(deg[j])) as f64;
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    Ok(MixingMatrix { weights: w })
}

fn residuals(w: &DMatrix<f64>) -> (f64, f64, f64, f64) {
    let n = w.nrows();
    let mut row = 0.0f64;
    let mut col = 0.0f64;
    let mut asym = 0.0f64;
    let mut neg = 0.0f64;
    for i in 0..n {
        let rs: f64 = w.row(i).iter().sum();
        let cs: f64 = w.column(i).iter().sum();
        row = row.max((rs - 1.0).abs());
        col = col.max((cs - 1.0).abs());
        for j in 0..n {
            asym = asym.max((w[(i, j)] - w[(j, i)]).abs());
            neg = neg.max(-w[(i, j)]);
        }
    }
    (row, col, asym, neg)
}

/// Largest |eigenvalue| of `W` restricted to the complement of `1`.
fn consensus_deflated_modulus(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    if n == 1 {
        return 0.0;
    }
    let avg = 1.0 / n as f64;
    let deflated = DMatrix::from_fn(n, n, |i, j| 0.5 * (w[(i, j)] + w[(j, i)]) - avg);
    SymmetricEigen::new(deflated)
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Checks symmetry, nonnegativity and unit row/column sums, then computes the
/// spectral quantities. Fails with the first residual above [`STOCHASTIC_TOL`].
pub fn validate_mixing(w: &MixingMatrix) -> Result<SpectralReport> {
    let (row, col, asym, neg) = residuals(&w.weights);
    for (kind, value) in [("asymmetry", asym), ("negativity", neg), ("row-sum", row), ("column-sum", col)] {
        if !(value <= STOCHASTIC_TOL) {
            return Err(Error::NotDoublyStochastic { kind, value });
        }
    }
    let second_modulus = consensus_deflated_modulus(&w.weights);
    Ok(SpectralReport {
        rho: 1.0 - second_modulus,
        second_modulus,
        row_sum_residual: row,
        col_sum_residual: col,
        asymmetry: asym,
        negativity: neg,
    })
}

/// Spectral gap of a validated mixing matrix.
pub fn spectral_gap(w: &MixingMatrix) -> Result<SpectralReport> {
    let report = validate_mixing(w)?;
    if report.rho <= NO_MIXING_TOL {
        return Err(Error::NoMixing { rho: report.rho });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ring_gap_closed_form(n: usize, s: f64) -> f64 {
        let top = (1..n)
            .map(|k| (s + (1.0 - s) * (2.0 * PI * k as f64 / n as f64).cos()).abs())
            .fold(0.0f64, f64::max);
        1.0 - top
    }

    #[test]
    fn ring_weights_match_setup() {
        let w = build_ring(12, 0.9).unwrap();
        let m = w.weights();
        assert_eq!(m[(0, 0)], 0.9);
        assert!((m[(0, 1)] - 0.05).abs() < 1e-15);
        assert!((m[(0, 11)] - 0.05).abs() < 1e-15);
        assert_eq!(m[(0, 2)], 0.0);
        let r = validate_mixing(&w).unwrap();
        assert!(r.row_sum_residual <= 1e-15 && r.col_sum_residual <= 1e-15);
        assert_eq!(r.asymmetry, 0.0);
    }

    #[test]
    fn ring_of_three_is_uniform() {
        let w = build_ring(3, 1.0 / 3.0).unwrap();
        for v in w.weights().iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ring_of_four_eigenvalues() {
        let w = build_ring(4, 0.5).unwrap();
        let mut ev: Vec<f64> = SymmetricEigen::new(w.weights().clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut expected: Vec<f64> = (0..4).map(|k| 0.5 + 0.5 * (2.0 * PI * k as f64 / 4.0).cos()).collect();
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (a, b) in ev.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{ev:?} vs {expected:?}");
        }
        assert!((expected[0] - 1.0).abs() < 1e-15 && expected[3].abs() < 1e-15);
    }

    #[test]
    fn ring_gap_matches_circulant_form() {
        let r = spectral_gap(&build_ring(12, 0.9).unwrap()).unwrap();
        let expected = 1.0 - (0.9 + 0.1 * (PI / 6.0).cos());
        assert!((r.rho - expected).abs() < 1e-10);
        assert!((r.rho - 0.0133975).abs() < 1e-7);
        for n in [3, 5, 8, 20, 33] {
            for s in [0.2, 0.5, 0.9] {
                let r = spectral_gap(&build_ring(n, s).unwrap()).unwrap();
                assert!((r.rho - ring_gap_closed_form(n, s)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ring_rejects_bad_input() {
        assert!(matches!(build_ring(2, 0.5), Err(Error::InvalidTopology(_))));
        assert!(matches!(build_ring(5, 1.0), Err(Error::InvalidWeight(_))));
        assert!(matches!(build_ring(5, 0.0), Err(Error::InvalidWeight(_))));
    }

    #[test]
    fn torus_weights_and_gap() {
        let w = build_torus_2d(3, 3, 0.2).unwrap();
        let m = w.weights();
        assert_eq!(m[(0, 0)], 0.2);
        for j in [1, 2, 3, 6] {
            assert!((m[(0, j)] - 0.2).abs() < 1e-15);
        }
        validate_mixing(&w).unwrap();

        let r = spectral_gap(&build_torus_2d(4, 4, 0.5).unwrap()).unwrap();
        let mut top = 0.0f64;
        for p in 0..4 {
            for q in 0..4 {
                if (p, q) == (0, 0) {
                    continue;
                }
                let lam = 0.5
                    + 0.125 * 2.0 * ((2.0 * PI * p as f64 / 4.0).cos() + (2.0 * PI * q as f64 / 4.0).cos());
                top = top.max(lam.abs());
            }
        }
        assert!((r.rho - (1.0 - top)).abs() < 1e-10);
        assert!(matches!(build_torus_2d(2, 4, 0.5), Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn complete_graph() {
        let w = build_complete(4).unwrap();
        assert!(w.weights().iter().all(|&v| v == 0.25));
        assert_eq!(spectral_gap(&w).unwrap().rho, 1.0);
        assert!(matches!(build_complete(1), Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn metropolis_hastings_path_and_triangle() {
        let path = Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        let w = build_metropolis_hastings(&path).unwrap();
        let m = w.weights();
        let third = 1.0 / 3.0;
        assert!((m[(0, 1)] - third).abs() < 1e-15);
        assert!((m[(1, 2)] - third).abs() < 1e-15);
        assert!((m[(0, 0)] - 2.0 * third).abs() < 1e-15);
        assert!((m[(2, 2)] - 2.0 * third).abs() < 1e-15);
        assert!((m[(1, 1)] - third).abs() < 1e-15);
        assert_eq!(m[(0, 2)], 0.0);

        let tri = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let w = build_metropolis_hastings(&tri).unwrap();
        assert!(w.weights().iter().all(|v| (v - third).abs() < 1e-15));

        let split = Graph::from_edges(4, [(0, 1), (2, 3)]).unwrap();
        assert!(matches!(build_metropolis_hastings(&split), Err(Error::DisconnectedGraph)));
    }

    #[test]
    fn identity_has_no_mixing() {
        assert!(matches!(spectral_gap(&MixingMatrix::identity(5)), Err(Error::NoMixing { .. })));
    }

    #[test]
    fn validation_catches_defects() {
        let mut m = build_ring(6, 0.5).unwrap().weights().clone();
        for j in 0..6 {
            m[(2, j)] *= 1.01;
        }
        let scaled = MixingMatrix::from_weights(m).unwrap();
        assert!(matches!(validate_mixing(&scaled), Err(Error::NotDoublyStochastic { .. })));

        let mut m = build_ring(6, 0.5).unwrap().weights().clone();
        m[(0, 1)] += 1e-3;
        m[(0, 0)] -= 1e-3;
        let skew = MixingMatrix::from_weights(m).unwrap();
        assert!(matches!(
            validate_mixing(&skew),
            Err(Error::NotDoublyStochastic { kind: "asymmetry", .. })
        ));
    }

    #[test]
    fn edge_list_round_trip() {
        let text = "# a path\n4\n1 2\n2 3\n\n3 4\n";
        let g = Graph::parse_edge_list(text).unwrap();
        assert_eq!(g.n(), 4);
        assert_eq!(g.edge_count(), 3);
        assert_eq!(Graph::parse_edge_list(&g.to_edge_list()).unwrap(), g);
        assert!(Graph::parse_edge_list("3\n1 4\n").is_err());
        assert!(Graph::parse_edge_list("3\n1 2\n2 1\n").is_err());
    }

    #[test]
    fn matrix_csv_round_trip_is_exact() {
        let w = build_metropolis_hastings(&Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 3)]).unwrap())
            .unwrap();
        let back = MixingMatrix::parse_csv(&w.to_csv()).unwrap();
        assert_eq!(back, w);
    }
}
