//! Network topologies and gossip weight matrices.
//!
//! A [`Graph`] is an undirected communication topology; [`metropolis_weights`]
//! turns one into a symmetric doubly-stochastic [`WeightMatrix`] whose mixing
//! rate is summarized by `rho`, the second-largest eigenvalue magnitude.
//! [`Mixing`] wraps either a fixed matrix or a per-iteration random matching
//! so steppers can consume both uniformly.

use std::borrow::Cow;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::jacobi_eigen;
use crate::rng::{permutation, StreamTag};

/// Eigenvalue magnitudes below this are reported as exactly zero by
/// [`spectral_rho`]. Any connected topology this crate can build has a
/// genuinely nonzero rho many orders of magnitude above roundoff, so the
/// snap only fires for projector-like matrices (complete graphs).
pub const RHO_SNAP_TOL: f64 = 1e-12;

/// Eigenvalues within this of zero are treated as zero by [`matrix_sqrt`];
/// anything below `-TOL_PD` makes the square root undefined, and
/// [`matrix_inv_sqrt`] requires the smallest eigenvalue to exceed `+TOL_PD`.
pub const TOL_PD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    Ring,
    Mesh,
    SymmetricExponential,
    BipartiteRandomMatch,
    FullyConnected,
}

impl TopologyKind {
    pub fn label(self) -> &'static str {
        match self {
            TopologyKind::Ring => "ring",
            TopologyKind::Mesh => "mesh",
            TopologyKind::SymmetricExponential => "sym-exp",
            TopologyKind::BipartiteRandomMatch => "bipartite",
            TopologyKind::FullyConnected => "full",
        }
    }

    /// Smallest node count the construction supports.
    pub fn min_nodes(self) -> usize {
        match self {
            TopologyKind::Mesh => 4,
            _ => 2,
        }
    }

    /// True if a fresh graph must be drawn each iteration.
    pub fn is_time_varying(self) -> bool {
        matches!(self, TopologyKind::BipartiteRandomMatch)
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ring" => Ok(TopologyKind::Ring),
            "mesh" => Ok(TopologyKind::Mesh),
            "sym-exp" => Ok(TopologyKind::SymmetricExponential),
            "bipartite" => Ok(TopologyKind::BipartiteRandomMatch),
            "full" => Ok(TopologyKind::FullyConnected),
            other => Err(format!(
                "unknown topology kind {other:?} (expected ring, mesh, sym-exp, bipartite, or full)"
            )),
        }
    }
}

/// Undirected communication graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    pub n: usize,
    pub kind: TopologyKind,
    /// Edges as `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Per-node neighbor lists, each sorted ascending.
    pub neighbors: Vec<Vec<usize>>,
    /// True for topologies redrawn every iteration (random matchings).
    pub time_varying: bool,
}

impl Graph {
    fn from_edge_set(n: usize, kind: TopologyKind, set: BTreeSet<(usize, usize)>) -> Graph {
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Graph {
            n,
            kind,
            edges,
            neighbors,
            time_varying: kind.is_time_varying(),
        }
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// `(degree, node count)` pairs, ascending by degree.
    pub fn degree_histogram(&self) -> Vec<(usize, usize)> {
        let mut counts = std::collections::BTreeMap::new();
        for i in 0..self.n {
            *counts.entry(self.degree(i)).or_insert(0usize) += 1;
        }
        counts.into_iter().collect()
    }

    /// Number of nodes reachable from node 0.
    pub fn reachable_from_zero(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.reachable_from_zero() == self.n
    }

    /// True when every pair of nodes shares an edge.
    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.n * (self.n - 1) / 2
    }
}

/// Builds the communication graph for a topology kind.
///
/// `seed` and `iteration` are consumed only by `BipartiteRandomMatch`, which
/// draws a fresh uniform matching per `(seed, iteration)`; all other kinds
/// are deterministic in `n` alone.
pub fn build_topology(
    kind: TopologyKind,
    n: usize,
    seed: u64,
    iteration: u64,
) -> Result<Graph> {
    if n < kind.min_nodes() {
        return Err(Error::InvalidNodeCount {
            kind: kind.label(),
            min: kind.min_nodes(),
            min_is_exact: true,
            n,
        });
    }
    let mut set = BTreeSet::new();
    match kind {
        TopologyKind::Ring => {
            for i in 0..n {
                let j = (i + 1) % n;
                set.insert((i.min(j), i.max(j)));
            }
        }
        TopologyKind::Mesh => {
            // r x c grid, row-major, last row possibly short; 4-neighborhood,
            // no wraparound.
            let r = (n as f64).sqrt().floor() as usize;
            let c = n.div_ceil(r);
            for idx in 0..n {
                let row = idx / c;
                let col = idx % c;
                if col + 1 < c && idx + 1 < n {
                    set.insert((idx, idx + 1));
                }
                if row + 1 < r.max(n.div_ceil(c)) && idx + c < n {
                    set.insert((idx, idx + c));
                }
            }
        }
        TopologyKind::SymmetricExponential => {
            // Hop distances 1, 2, 4, ... up to the largest power of two
            // below n, symmetrized.
            let max_j = (n - 1).ilog2();
            for j in 0..=max_j {
                let offset = 1usize << j;
                for i in 0..n {
                    let k = (i + offset) % n;
                    if i != k {
                        set.insert((i.min(k), i.max(k)));
                    }
                }
            }
        }
        TopologyKind::BipartiteRandomMatch => {
            let perm = permutation(seed, StreamTag::Matching, 0, iteration, n);
            for pair in perm.chunks_exact(2) {
                let (i, j) = (pair[0], pair[1]);
                set.insert((i.min(j), i.max(j)));
            }
        }
        TopologyKind::FullyConnected => {
            for i in 0..n {
                for j in (i + 1)..n {
                    set.insert((i, j));
                }
            }
        }
    }
    Ok(Graph::from_edge_set(n, kind, set))
}

/// Symmetric doubly-stochastic gossip matrix with its spectral summary.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    pub w: Array2<f64>,
    /// Second-largest eigenvalue magnitude, `max(|lambda_2|, |lambda_n|)`.
    pub rho: f64,
    /// All eigenvalues, sorted descending.
    pub eigenvalues: Vec<f64>,
    /// The graph the weights were built on.
    pub graph: Graph,
}

impl WeightMatrix {
    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    /// The lazy version `(I + W) / 2`, positive definite whenever `W` has
    /// eigenvalues above −1 (always true for Metropolis weights).
    pub fn lazy(&self) -> Result<WeightMatrix> {
        let n = self.n();
        let mut w = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                w[[i, j]] = 0.5 * self.w[[i, j]] + if i == j { 0.5 } else { 0.0 };
            }
        }
        let eig = jacobi_eigen(&w)?;
        let rho = rho_from_sorted(&eig.values);
        Ok(WeightMatrix {
            w,
            rho,
            eigenvalues: eig.values,
            graph: self.graph.clone(),
        })
    }
}

/// Metropolis–Hastings weights for a graph: `w[i][j] = 1/(1 + max(deg i, deg j))`
/// on edges, self-weight set to the row deficiency so rows sum to one exactly.
pub fn metropolis_weights(g: &Graph) -> Result<WeightMatrix> {
    if !g.time_varying && !g.is_connected() {
        return Err(Error::Disconnected {
            reachable: g.reachable_from_zero(),
            n: g.n,
        });
    }
    let n = g.n;
    let mut w = Array2::<f64>::zeros((n, n));
    for &(i, j) in &g.edges {
        let wij = 1.0 / (1.0 + g.degree(i).max(g.degree(j)) as f64);
        w[[i, j]] = wij;
        w[[j, i]] = wij;
    }
    for i in 0..n {
        let off: f64 = g.neighbors[i].iter().map(|&j| w[[i, j]]).sum();
        w[[i, i]] = 1.0 - off;
    }
    let eig = jacobi_eigen(&w)?;
    let rho = rho_from_sorted(&eig.values);
    Ok(WeightMatrix {
        w,
        rho,
        eigenvalues: eig.values,
        graph: g.clone(),
    })
}

fn rho_from_sorted(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let raw = values[1].abs().max(values[n - 1].abs());
    if raw < RHO_SNAP_TOL {
        0.0
    } else {
        raw
    }
}

/// Second-largest eigenvalue magnitude of a symmetric stochastic matrix.
///
/// Magnitudes within [`RHO_SNAP_TOL`] of zero are reported as exactly zero,
/// so projector-like matrices (complete graph averaging) give `rho = 0`.
pub fn spectral_rho(w: &Array2<f64>) -> Result<f64> {
    let eig = jacobi_eigen(w)?;
    Ok(rho_from_sorted(&eig.values))
}

/// One invariant check inside a [`ValidationReport`].
#[derive(Debug, Clone)]
pub struct ValidationCheck {
    pub name: &'static str,
    pub pass: bool,
    /// Largest violation observed (0 when the check passes cleanly).
    pub violation: f64,
}

/// Pass/fail breakdown of the weight-matrix invariants.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
    pub pass: bool,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {} (max violation {:.3e})",
                if c.pass { "pass" } else { "FAIL" },
                c.name,
                c.violation
            )?;
        }
        write!(f, "overall: {}", if self.pass { "pass" } else { "FAIL" })
    }
}

/// Checks symmetry, row sums, the sparsity pattern, the spectral invariants,
/// and the consistency of the cached `rho`, each against `tol`.
pub fn validate_weight_matrix(wm: &WeightMatrix, tol: f64) -> ValidationReport {
    let n = wm.n();
    let w = &wm.w;
    let mut checks = Vec::new();

    let mut sym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            sym = sym.max((w[[i, j]] - w[[j, i]]).abs());
        }
    }
    checks.push(ValidationCheck {
        name: "symmetry",
        pass: sym <= tol,
        violation: sym,
    });

    let mut row = 0.0f64;
    for i in 0..n {
        let s: f64 = (0..n).map(|j| w[[i, j]]).sum();
        row = row.max((s - 1.0).abs());
    }
    checks.push(ValidationCheck {
        name: "row sums equal one",
        pass: row <= tol,
        violation: row,
    });

    // Entries must be strictly positive exactly on the adjacency pattern
    // plus the diagonal, and exactly zero elsewhere.
    let mut pattern = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let on_pattern = i == j || wm.graph.neighbors[i].binary_search(&j).is_ok();
            if on_pattern {
                if w[[i, j]] <= 0.0 {
                    pattern = pattern.max((w[[i, j]] - f64::MIN_POSITIVE).abs().max(1.0));
                }
            } else if w[[i, j]] != 0.0 {
                pattern = pattern.max(w[[i, j]].abs());
            }
        }
    }
    checks.push(ValidationCheck {
        name: "sparsity pattern matches graph",
        pass: pattern == 0.0,
        violation: pattern,
    });

    let lead = (wm.eigenvalues[0] - 1.0).abs();
    checks.push(ValidationCheck {
        name: "leading eigenvalue is one",
        pass: lead <= tol.max(1e-10),
        violation: lead,
    });

    let mut mag = 0.0f64;
    for &v in &wm.eigenvalues {
        mag = mag.max((v.abs() - 1.0).max(0.0));
    }
    checks.push(ValidationCheck {
        name: "eigenvalue magnitudes at most one",
        pass: mag <= tol,
        violation: mag,
    });

    let recomputed = rho_from_sorted(&wm.eigenvalues);
    let rho_err = (recomputed - wm.rho).abs();
    checks.push(ValidationCheck {
        name: "cached rho matches eigenvalues",
        pass: rho_err <= tol,
        violation: rho_err,
    });

    if !wm.graph.time_varying {
        let in_range = if wm.graph.is_complete() {
            wm.rho == 0.0
        } else {
            wm.rho > 0.0 && wm.rho < 1.0
        };
        checks.push(ValidationCheck {
            name: "rho in valid range for the topology",
            pass: in_range,
            violation: if in_range { 0.0 } else { wm.rho },
        });
    }

    let pass = checks.iter().all(|c| c.pass);
    ValidationReport { checks, pass }
}

/// Symmetric square root `U diag(sqrt(lambda)) U^T`.
///
/// Eigenvalues within [`TOL_PD`] of zero are treated as exactly zero, so
/// positive-semidefinite projectors are accepted; eigenvalues below
/// `-TOL_PD` mean no real square root exists and produce an error.
pub fn matrix_sqrt(w: &Array2<f64>) -> Result<Array2<f64>> {
    sqrt_impl(w, false)
}

/// Symmetric inverse square root `U diag(1/sqrt(lambda)) U^T`.
///
/// Requires the matrix to be strictly positive definite
/// (`lambda_min > TOL_PD`).
pub fn matrix_inv_sqrt(w: &Array2<f64>) -> Result<Array2<f64>> {
    sqrt_impl(w, true)
}

fn sqrt_impl(w: &Array2<f64>, invert: bool) -> Result<Array2<f64>> {
    let n = w.nrows();
    let eig = jacobi_eigen(w)?;
    let lambda_min = eig.values[n - 1];
    if (invert && lambda_min <= TOL_PD) || (!invert && lambda_min < -TOL_PD) {
        return Err(Error::NotPositiveDefinite {
            lambda_min,
            tol: TOL_PD,
        });
    }
    let roots: Vec<f64> = eig
        .values
        .iter()
        .map(|&v| {
            let v = if v.abs() <= TOL_PD { 0.0 } else { v };
            if invert {
                1.0 / v.sqrt()
            } else {
                v.sqrt()
            }
        })
        .collect();
    // Build the upper triangle and mirror it so the result is symmetric by
    // construction, not merely up to rounding.
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v: f64 = (0..n)
                .map(|k| eig.vectors[[i, k]] * roots[k] * eig.vectors[[j, k]])
                .sum();
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

/// A weight-matrix source indexed by iteration: either one fixed matrix or
/// a random matching redrawn per iteration.
#[derive(Debug, Clone)]
pub enum Mixing {
    Static(WeightMatrix),
    TimeVarying {
        kind: TopologyKind,
        n: usize,
        seed: u64,
    },
}

impl Mixing {
    /// Builds the mixing source for a topology kind.
    pub fn new(kind: TopologyKind, n: usize, seed: u64) -> Result<Mixing> {
        if kind.is_time_varying() {
            // Validate the construction once up front.
            let g = build_topology(kind, n, seed, 0)?;
            metropolis_weights(&g)?;
            Ok(Mixing::TimeVarying { kind, n, seed })
        } else {
            let g = build_topology(kind, n, seed, 0)?;
            Ok(Mixing::Static(metropolis_weights(&g)?))
        }
    }

    /// The weight matrix in force at iteration `k`.
    pub fn at(&self, k: u64) -> Cow<'_, WeightMatrix> {
        match self {
            Mixing::Static(wm) => Cow::Borrowed(wm),
            Mixing::TimeVarying { kind, n, seed } => {
                let g = build_topology(*kind, *n, *seed, k)
                    .expect("validated at construction");
                Cow::Owned(metropolis_weights(&g).expect("matchings are always valid"))
            }
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Mixing::Static(wm) => wm.n(),
            Mixing::TimeVarying { n, .. } => *n,
        }
    }

    /// Rho of the static matrix; matchings have no single rho.
    pub fn static_rho(&self) -> Option<f64> {
        match self {
            Mixing::Static(wm) => Some(wm.rho),
            Mixing::TimeVarying { .. } => None,
        }
    }
}
