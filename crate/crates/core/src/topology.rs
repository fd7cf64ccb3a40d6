//! Gossip matrices: construction, validation, spectral quantities, and the
//! averaging rounds that implement the communication phase.
//!
//! All builders emit Metropolis-Hastings weights on an undirected graph
//! (`W_kl = 1 / (1 + max(deg_k, deg_l))` on edges, self-weight absorbs the
//! remainder), which yields a symmetric doubly stochastic matrix on any
//! connected topology. The fully connected builder is the exact uniform
//! averaging matrix `J / m`.

use std::sync::OnceLock;

use thiserror::Error;

use crate::linalg::{self, symmetric_eigenvalues};
use crate::Scalar;

/// Entry-wise symmetry tolerance.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Row/column sum tolerance around 1.
pub const STOCHASTIC_TOL: f64 = 1e-10;
/// Slack on the `[0, 1]` entry range (absorbs decimal parsing round-off).
pub const ENTRY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("agent count must be at least 1")]
    ZeroAgents,
    #[error("torus dimensions {rows}x{cols} do not match agent count {m}")]
    TorusDims { rows: usize, cols: usize, m: usize },
    #[error("matrix is {rows}x{cols}, expected square of size {expected}")]
    Shape {
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("gossip matrix invariants violated: {0}")]
    InvalidMatrix(String),
    #[error("parameter block has {got} rows, expected {expected}")]
    AgentCountMismatch { expected: usize, got: usize },
    #[error("parameter rows have unequal dimensions ({first} vs {other})")]
    RaggedParams { first: usize, other: usize },
    #[error("matrix CSV parse error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// Which named topology to build.
#[derive(Debug, Clone, PartialEq)]
pub enum TopologyKind<F: Scalar> {
    Ring,
    Torus { rows: usize, cols: usize },
    FullyConnected,
    ExponentialGraph,
    Custom(Vec<Vec<F>>),
}

impl<F: Scalar> TopologyKind<F> {
    pub fn name(&self) -> &'static str {
        match self {
            TopologyKind::Ring => "ring",
            TopologyKind::Torus { .. } => "torus",
            TopologyKind::FullyConnected => "fully_connected",
            TopologyKind::ExponentialGraph => "exponential_graph",
            TopologyKind::Custom(_) => "custom",
        }
    }
}

/// Spectral quantities of a gossip matrix used by the bound evaluators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralReport<F: Scalar> {
    /// Second-largest eigenvalue magnitude `rho = |lambda_2(W)|`.
    pub rho: F,
    /// Spectral gap `delta = 1 - rho`.
    pub delta: F,
    /// Largest eigenvalue of `I - W`, in `[0, 2]`.
    pub lambda_max_i_minus_w: F,
}

/// A validated symmetric doubly stochastic averaging matrix.
#[derive(Debug, Clone)]
pub struct GossipMatrix<F: Scalar> {
    m: usize,
    w: Vec<F>, // row-major m x m
    spectral: OnceLock<SpectralReport<F>>,
}

/// One invariant check of [`validate_gossip_matrix`].
#[derive(Debug, Clone)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub pass: bool,
    /// Measured violation magnitude (0 when the invariant holds exactly).
    pub violation: f64,
}

/// Diagnostics report for an arbitrary candidate matrix.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub m: usize,
    pub checks: Vec<InvariantCheck>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> String {
        self.checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{} (violation {:e})", c.name, c.violation))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Check every gossip-matrix invariant on a candidate square matrix.
///
/// Always returns a report; nothing is rejected here.
pub fn validate_gossip_matrix<F: Scalar>(rows: &[Vec<F>]) -> ValidationReport {
    let m = rows.len();
    let mut checks = Vec::new();

    let square_ok = m > 0 && rows.iter().all(|r| r.len() == m);
    checks.push(InvariantCheck {
        name: "square",
        pass: square_ok,
        violation: if square_ok { 0.0 } else { 1.0 },
    });
    if !square_ok {
        return ValidationReport { m, checks };
    }

    let f = |v: F| v.to_f64().unwrap_or(f64::NAN);

    let mut sym = 0.0f64;
    for k in 0..m {
        for l in (k + 1)..m {
            sym = sym.max((f(rows[k][l]) - f(rows[l][k])).abs());
        }
    }
    checks.push(InvariantCheck {
        name: "symmetric",
        pass: sym <= SYMMETRY_TOL,
        violation: sym,
    });

    let mut range = 0.0f64;
    for r in rows {
        for &v in r {
            let v = f(v);
            range = range.max((-v).max(v - 1.0)).max(0.0);
            if !v.is_finite() {
                range = f64::INFINITY;
            }
        }
    }
    checks.push(InvariantCheck {
        name: "entries_in_unit_interval",
        pass: range <= ENTRY_TOL,
        violation: range,
    });

    let mut row_dev = 0.0f64;
    let mut col_dev = 0.0f64;
    for k in 0..m {
        let rs: f64 = rows[k].iter().map(|&v| f(v)).sum();
        let cs: f64 = rows.iter().map(|r| f(r[k])).sum();
        row_dev = row_dev.max((rs - 1.0).abs());
        col_dev = col_dev.max((cs - 1.0).abs());
    }
    checks.push(InvariantCheck {
        name: "row_stochastic",
        pass: row_dev <= STOCHASTIC_TOL,
        violation: row_dev,
    });
    checks.push(InvariantCheck {
        name: "column_stochastic",
        pass: col_dev <= STOCHASTIC_TOL,
        violation: col_dev,
    });

    ValidationReport { m, checks }
}

impl<F: Scalar> GossipMatrix<F> {
    /// Wrap a candidate matrix, rejecting anything that fails the invariants.
    pub fn from_rows(rows: Vec<Vec<F>>) -> Result<Self, TopologyError> {
        let report = validate_gossip_matrix(&rows);
        if !report.all_pass() {
            return Err(TopologyError::InvalidMatrix(report.failures()));
        }
        let m = rows.len();
        let mut w = Vec::with_capacity(m * m);
        for r in rows {
            w.extend(r);
        }
        Ok(GossipMatrix {
            m,
            w,
            spectral: OnceLock::new(),
        })
    }

    pub fn agents(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn weight(&self, k: usize, l: usize) -> F {
        self.w[k * self.m + l]
    }

    pub fn rows(&self) -> Vec<Vec<F>> {
        (0..self.m)
            .map(|k| self.w[k * self.m..(k + 1) * self.m].to_vec())
            .collect()
    }

    /// Spectral quantities, computed once by full symmetric decomposition.
    pub fn spectral(&self) -> &SpectralReport<F> {
        self.spectral.get_or_init(|| {
            if self.m == 1 {
                // Single agent: W = [1] by convention.
                return SpectralReport {
                    rho: F::zero(),
                    delta: F::one(),
                    lambda_max_i_minus_w: F::zero(),
                };
            }
            let ev = symmetric_eigenvalues(&self.w, self.m);
            // Eigenvalues sorted descending; the Perron root is ev[0] = 1.
            let second = ev[1].abs();
            let last = ev[self.m - 1].abs();
            let rho = second.max(last).min(F::one()).max(F::zero());
            let lam = (F::one() - ev[self.m - 1])
                .max(F::zero())
                .min(F::lit(2.0));
            SpectralReport {
                rho,
                delta: F::one() - rho,
                lambda_max_i_minus_w: lam,
            }
        })
    }

    /// One gossip averaging round: `out[k] = sum_l W_kl params[l]`.
    ///
    /// Preserves the mean across agents (doubly stochastic weights).
    pub fn gossip_round(&self, params: &[Vec<F>]) -> Result<Vec<Vec<F>>, TopologyError> {
        if params.len() != self.m {
            return Err(TopologyError::AgentCountMismatch {
                expected: self.m,
                got: params.len(),
            });
        }
        let d = params.first().map_or(0, |p| p.len());
        for p in params {
            if p.len() != d {
                return Err(TopologyError::RaggedParams {
                    first: d,
                    other: p.len(),
                });
            }
        }
        let mut out = vec![vec![F::zero(); d]; self.m];
        for k in 0..self.m {
            let row = &self.w[k * self.m..(k + 1) * self.m];
            let acc = &mut out[k];
            for (l, p) in params.iter().enumerate() {
                let wkl = row[l];
                if wkl != F::zero() {
                    linalg::axpy(acc, wkl, p);
                }
            }
        }
        Ok(out)
    }

    /// `q` successive gossip rounds (`q = 0` leaves the input unchanged).
    pub fn multi_gossip(&self, params: &[Vec<F>], q: usize) -> Result<Vec<Vec<F>>, TopologyError> {
        let mut cur = params.to_vec();
        for _ in 0..q {
            cur = self.gossip_round(&cur)?;
        }
        Ok(cur)
    }

    /// Plain CSV: one row per line, comma-separated decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for k in 0..self.m {
            let row: Vec<String> = (0..self.m).map(|l| format!("{}", self.weight(k, l))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Parse a matrix from plain CSV text (used by the CLI `validate` command).
pub fn matrix_from_csv<F: Scalar>(text: &str) -> Result<Vec<Vec<F>>, TopologyError> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| TopologyError::Csv {
                line: idx + 1,
                msg: format!("not a number: {:?}", field.trim()),
            })?;
            row.push(F::lit(v));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(TopologyError::Csv {
            line: 0,
            msg: "no rows".into(),
        });
    }
    Ok(rows)
}

/// Build a gossip matrix for `m` agents on the requested topology.
pub fn build_topology<F: Scalar>(
    kind: &TopologyKind<F>,
    m: usize,
) -> Result<GossipMatrix<F>, TopologyError> {
    if m == 0 {
        return Err(TopologyError::ZeroAgents);
    }
    match kind {
        TopologyKind::Custom(rows) => {
            if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                return Err(TopologyError::Shape {
                    rows: rows.len(),
                    cols: rows.first().map_or(0, |r| r.len()),
                    expected: m,
                });
            }
            GossipMatrix::from_rows(rows.clone())
        }
        TopologyKind::FullyConnected => {
            let inv = F::one() / F::from_usize(m).unwrap();
            GossipMatrix::from_rows(vec![vec![inv; m]; m])
        }
        TopologyKind::Ring => metropolis_from_adjacency(ring_adjacency(m)),
        TopologyKind::Torus { rows, cols } => {
            if rows * cols != m {
                return Err(TopologyError::TorusDims {
                    rows: *rows,
                    cols: *cols,
                    m,
                });
            }
            metropolis_from_adjacency(torus_adjacency(*rows, *cols))
        }
        TopologyKind::ExponentialGraph => metropolis_from_adjacency(exponential_adjacency(m)),
    }
}

fn ring_adjacency(m: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); m];
    if m == 2 {
        // The ring degenerates to the single edge.
        adj[0].push(1);
        adj[1].push(0);
    } else if m > 2 {
        for k in 0..m {
            adj[k].push((k + 1) % m);
            adj[k].push((k + m - 1) % m);
        }
    }
    adj
}

fn torus_adjacency(rows: usize, cols: usize) -> Vec<Vec<usize>> {
    let m = rows * cols;
    let idx = |r: usize, c: usize| r * cols + c;
    let mut adj = vec![Vec::new(); m];
    for r in 0..rows {
        for c in 0..cols {
            let k = idx(r, c);
            let mut nbrs = vec![
                idx((r + 1) % rows, c),
                idx((r + rows - 1) % rows, c),
                idx(r, (c + 1) % cols),
                idx(r, (c + cols - 1) % cols),
            ];
            nbrs.sort_unstable();
            nbrs.dedup();
            adj[k] = nbrs.into_iter().filter(|&l| l != k).collect();
        }
    }
    adj
}

fn exponential_adjacency(m: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); m];
    if m < 2 {
        return adj;
    }
    let mut offsets = Vec::new();
    let mut hop = 1usize;
    while hop < m {
        offsets.push(hop);
        hop *= 2;
    }
    for k in 0..m {
        let mut nbrs = Vec::new();
        for &o in &offsets {
            nbrs.push((k + o) % m);
            nbrs.push((k + m - o) % m);
        }
        nbrs.sort_unstable();
        nbrs.dedup();
        adj[k] = nbrs.into_iter().filter(|&l| l != k).collect();
    }
    adj
}

/// Metropolis-Hastings weights on an undirected adjacency structure.
fn metropolis_from_adjacency<F: Scalar>(
    adj: Vec<Vec<usize>>,
) -> Result<GossipMatrix<F>, TopologyError> {
    let m = adj.len();
    let deg: Vec<usize> = adj.iter().map(|n| n.len()).collect();
    let mut rows = vec![vec![F::zero(); m]; m];
    for k in 0..m {
        let mut off_sum = F::zero();
        for &l in &adj[k] {
            let w = F::one() / F::from_usize(1 + deg[k].max(deg[l])).unwrap();
            rows[k][l] = w;
            off_sum += w;
        }
        rows[k][k] = F::one() - off_sum;
    }
    GossipMatrix::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::consensus_error;
    use crate::rng::Stream;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn fully_connected_is_uniform() {
        let w: GossipMatrix<f64> = build_topology(&TopologyKind::FullyConnected, 4).unwrap();
        for k in 0..4 {
            for l in 0..4 {
                assert_eq!(w.weight(k, l), 0.25);
            }
        }
    }

    #[test]
    fn ring_m4_is_circulant_third() {
        let w: GossipMatrix<f64> = build_topology(&TopologyKind::Ring, 4).unwrap();
        let third = 1.0 / 3.0;
        let expected = [
            [third, third, 0.0, third],
            [third, third, third, 0.0],
            [0.0, third, third, third],
            [third, 0.0, third, third],
        ];
        for k in 0..4 {
            for l in 0..4 {
                assert!(close(w.weight(k, l), expected[k][l], 1e-15));
            }
        }
    }

    #[test]
    fn ring_m2_degenerates_to_single_edge() {
        let w: GossipMatrix<f64> = build_topology(&TopologyKind::Ring, 2).unwrap();
        for k in 0..2 {
            for l in 0..2 {
                assert!(close(w.weight(k, l), 0.5, 1e-15));
            }
        }
    }

    #[test]
    fn spectral_fully_connected() {
        let w: GossipMatrix<f64> = build_topology(&TopologyKind::FullyConnected, 4).unwrap();
        let s = w.spectral();
        assert!(close(s.rho, 0.0, 1e-12));
        assert!(close(s.delta, 1.0, 1e-12));
    }

    #[test]
    fn spectral_ring_m4_closed_form() {
        // Circulant eigenvalues are 1/3 + (2/3) cos(2 pi j / 4).
        let w: GossipMatrix<f64> = build_topology(&TopologyKind::Ring, 4).unwrap();
        let s = w.spectral();
        assert!(close(s.rho, 1.0 / 3.0, 1e-9));
        assert!(close(s.delta, 2.0 / 3.0, 1e-9));
        assert!(close(s.rho + s.delta, 1.0, 1e-12));
        // lambda_max(I - W) = 1 - min eigenvalue = 1 - (-1/3).
        assert!(close(s.lambda_max_i_minus_w, 4.0 / 3.0, 1e-9));
    }

    #[test]
    fn spectral_single_agent_convention() {
        let w: GossipMatrix<f64> = build_topology(&TopologyKind::Ring, 1).unwrap();
        let s = w.spectral();
        assert_eq!(s.rho, 0.0);
        assert_eq!(s.delta, 1.0);
        assert_eq!(s.lambda_max_i_minus_w, 0.0);
    }

    #[test]
    fn gossip_round_fully_connected_reaches_mean() {
        let w: GossipMatrix<f64> = build_topology(&TopologyKind::FullyConnected, 4).unwrap();
        let params = vec![vec![4.0, 0.0], vec![0.0, 2.0], vec![2.0, 2.0], vec![6.0, 4.0]];
        let out = w.gossip_round(&params).unwrap();
        for row in &out {
            assert!(close(row[0], 3.0, 1e-14));
            assert!(close(row[1], 2.0, 1e-14));
        }
    }

    #[test]
    fn gossip_round_ring_m4_matvec() {
        let w: GossipMatrix<f64> = build_topology(&TopologyKind::Ring, 4).unwrap();
        let params = vec![vec![1.0], vec![0.0], vec![0.0], vec![0.0]];
        let out = w.gossip_round(&params).unwrap();
        let third = 1.0 / 3.0;
        let expected = [third, third, 0.0, third];
        for (row, &e) in out.iter().zip(&expected) {
            assert!(close(row[0], e, 1e-15));
        }
    }

    #[test]
    fn gossip_round_identity_is_noop() {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let w = GossipMatrix::from_rows(id).unwrap();
        let params = vec![vec![3.0, -1.0], vec![0.5, 2.0]];
        let out = w.gossip_round(&params).unwrap();
        assert_eq!(out, params);
    }

    #[test]
    fn gossip_round_rejects_bad_shapes() {
        let w: GossipMatrix<f64> = build_topology(&TopologyKind::Ring, 4).unwrap();
        assert!(w.gossip_round(&vec![vec![1.0]; 3]).is_err());
        let ragged = vec![vec![1.0], vec![1.0, 2.0], vec![1.0], vec![1.0]];
        assert!(matches!(
            w.gossip_round(&ragged),
            Err(TopologyError::RaggedParams { .. })
        ));
    }

    #[test]
    fn multi_gossip_zero_steps_is_identity() {
        let w: GossipMatrix<f64> = build_topology(&TopologyKind::Ring, 5).unwrap();
        let params = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0], vec![5.0]];
        assert_eq!(w.multi_gossip(&params, 0).unwrap(), params);
    }

    #[test]
    fn multi_gossip_matches_repeated_matvec_and_contracts() {
        let w: GossipMatrix<f64> = build_topology(&TopologyKind::Ring, 4).unwrap();
        let mut s = Stream::keyed(&[55]);
        let params: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| s.normal()).collect()).collect();
        let q = 10;
        let fast = w.multi_gossip(&params, q).unwrap();

        // Oracle: explicit repeated matrix-vector products.
        let mut slow = params.clone();
        for _ in 0..q {
            let mut next = vec![vec![0.0; 3]; 4];
            for k in 0..4 {
                for l in 0..4 {
                    for j in 0..3 {
                        next[k][j] += w.weight(k, l) * slow[l][j];
                    }
                }
            }
            slow = next;
        }
        for (a, b) in fast.iter().zip(&slow) {
            for (x, y) in a.iter().zip(b) {
                assert!(close(*x, *y, 1e-13));
            }
        }

        let rho = w.spectral().rho;
        let before = consensus_error(&params);
        let after = consensus_error(&fast);
        assert!(after <= rho.powi(2 * q as i32) * before + 1e-10);
    }

    #[test]
    fn validate_reports_violations() {
        // Asymmetric, and stochastic in one direction only.
        let bad = vec![vec![0.6, 0.5], vec![0.4, 0.5]];
        let report = validate_gossip_matrix(&bad);
        assert!(!report.all_pass());
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name)
            .collect();
        assert!(failed.contains(&"symmetric"));
        assert!(failed.contains(&"row_stochastic"));
        // Columns of this matrix do sum to one.
        assert!(!failed.contains(&"column_stochastic"));
        let sym = report
            .checks
            .iter()
            .find(|c| c.name == "symmetric")
            .unwrap();
        assert!((sym.violation - 0.1).abs() < 1e-15);
    }

    #[test]
    fn builders_pass_validation() {
        for m in 1..=12usize {
            let kinds: Vec<TopologyKind<f64>> = vec![
                TopologyKind::Ring,
                TopologyKind::FullyConnected,
                TopologyKind::ExponentialGraph,
            ];
            for kind in kinds {
                let w = build_topology(&kind, m).unwrap();
                assert!(validate_gossip_matrix(&w.rows()).all_pass(), "{kind:?} m={m}");
                if m > 1 {
                    assert!(w.spectral().rho < 1.0, "{kind:?} m={m} should be connected");
                }
            }
        }
        let t: GossipMatrix<f64> =
            build_topology(&TopologyKind::Torus { rows: 3, cols: 4 }, 12).unwrap();
        assert!(validate_gossip_matrix(&t.rows()).all_pass());
        assert!(t.spectral().rho < 1.0);
    }

    #[test]
    fn torus_dimension_mismatch_is_rejected() {
        let r: Result<GossipMatrix<f64>, _> =
            build_topology(&TopologyKind::Torus { rows: 3, cols: 3 }, 12);
        assert!(matches!(r, Err(TopologyError::TorusDims { .. })));
    }

    #[test]
    fn custom_matrix_failing_invariants_is_rejected() {
        let bad = vec![vec![0.6, 0.5], vec![0.4, 0.5]];
        let r = GossipMatrix::from_rows(bad);
        match r {
            Err(TopologyError::InvalidMatrix(msg)) => {
                assert!(msg.contains("symmetric"), "message: {msg}");
            }
            other => panic!("expected invalid-matrix error, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let w: GossipMatrix<f64> = build_topology(&TopologyKind::Ring, 5).unwrap();
        let text = w.to_csv();
        let rows: Vec<Vec<f64>> = matrix_from_csv(&text).unwrap();
        let again = GossipMatrix::from_rows(rows).unwrap();
        for k in 0..5 {
            for l in 0..5 {
                assert_eq!(w.weight(k, l), again.weight(k, l));
            }
        }
    }

    #[test]
    fn csv_parse_error_names_line() {
        let r: Result<Vec<Vec<f64>>, _> = matrix_from_csv("0.5,0.5\n0.5,oops\n");
        match r {
            Err(TopologyError::Csv { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected CSV error, got {other:?}"),
        }
    }
}
