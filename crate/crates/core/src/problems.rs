//! Synthetic least-squares problems with controllable heterogeneity.
//!
//! Each node `i` owns the local objective `f_i(x) = 0.5 * ||A_i x - b_i||^2`;
//! the global objective is their average. Targets are generated as
//! `b_i = A_i (x_ref + hetero * u_i) + noise_mag * s_i` with the per-node
//! shifts `u_i` centered to sum to zero, so `hetero` directly controls how
//! far the local minimizers spread around the global one — the quantity that
//! drives decentralized algorithms' inconsistency bias.
//!
//! The exact minimizer `x_star`, the gradient heterogeneity
//! `b_sq = (1/n) sum_i ||grad f_i(x_star)||^2`, the smoothness constant `L`,
//! and the strong-convexity constant `mu` are computed at construction and
//! stored, so downstream bias measurements have a high-accuracy ground truth.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, spd_solve};
use crate::rng::{normal_vec, sample_without_replacement, StreamTag};

/// Condition-estimate cap above which the normal equations are rejected.
const COND_CAP: f64 = 1e12;

/// How a gradient sample is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradKind {
    /// Exact local gradient.
    FullBatch,
    /// Exact gradient plus isotropic Gaussian noise with
    /// `E||z||^2 = sigma_sq / batch_size`.
    AdditiveNoise,
    /// Rescaled gradient over a uniform row subset of size `batch_size`.
    Minibatch,
}

/// Gradient mode plus its batch size, as configured for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradMode {
    pub kind: GradKind,
    /// Ignored by `FullBatch`; divides the noise variance for
    /// `AdditiveNoise`; row count for `Minibatch`.
    pub batch_size: usize,
}

impl GradMode {
    pub const FULL: GradMode = GradMode {
        kind: GradKind::FullBatch,
        batch_size: 1,
    };

    pub fn additive(batch_size: usize) -> GradMode {
        GradMode {
            kind: GradKind::AdditiveNoise,
            batch_size,
        }
    }

    pub fn minibatch(batch_size: usize) -> GradMode {
        GradMode {
            kind: GradKind::Minibatch,
            batch_size,
        }
    }
}

/// One stochastic gradient evaluation.
#[derive(Debug, Clone)]
pub struct GradientSample {
    pub node: usize,
    pub value: Array1<f64>,
    pub kind: GradKind,
    pub batch_size: usize,
}

/// A distributed least-squares instance.
#[derive(Debug, Clone)]
pub struct Problem {
    pub n: usize,
    pub d: usize,
    /// Per-node design matrices, `m_i x d`.
    pub a: Vec<Array2<f64>>,
    /// Per-node targets, length `m_i`.
    pub b: Vec<Array1<f64>>,
    /// Global minimizer of `(1/n) sum_i f_i`.
    pub x_star: Array1<f64>,
    /// Gradient heterogeneity `(1/n) sum_i ||grad f_i(x_star)||^2`.
    pub b_sq: f64,
    /// Gradient-noise variance available to `AdditiveNoise` sampling.
    pub sigma_sq: f64,
    /// Smoothness constant `max_i lambda_max(A_i^T A_i)`.
    pub l_smooth: f64,
    /// Strong-convexity constant `lambda_min((1/n) sum_i A_i^T A_i)`.
    pub mu: f64,
    // Generation parameters, kept for serialization headers.
    pub m: usize,
    pub hetero: f64,
    pub noise_mag: f64,
    pub seed: u64,
}

/// Generates the standard synthetic instance: `A_i` i.i.d. standard normal,
/// targets spread around a shared reference point by `hetero` and perturbed
/// by white noise of size `noise_mag`.
pub fn generate_regression(
    n: usize,
    d: usize,
    m: usize,
    hetero: f64,
    noise_mag: f64,
    seed: u64,
) -> Result<Problem> {
    assert!(n >= 1 && d >= 1 && m >= 1, "empty problem");
    let x_ref = Array1::from_vec(normal_vec(seed, StreamTag::ReferencePoint, 0, 0, d));

    // Centered per-node shifts: u_i - mean(u).
    let mut shifts: Vec<Array1<f64>> = (0..n)
        .map(|i| Array1::from_vec(normal_vec(seed, StreamTag::HeteroShift, i as u64, 0, d)))
        .collect();
    let mean = shifts
        .iter()
        .fold(Array1::<f64>::zeros(d), |acc, u| acc + u)
        / n as f64;
    for u in &mut shifts {
        *u -= &mean;
    }

    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for i in 0..n {
        let ai = Array2::from_shape_vec(
            (m, d),
            normal_vec(seed, StreamTag::DataMatrix, i as u64, 0, m * d),
        )
        .expect("shape matches draw count");
        let si = Array1::from_vec(normal_vec(seed, StreamTag::TargetNoise, i as u64, 0, m));
        let local_ref = &x_ref + &(hetero * &shifts[i]);
        let bi = ai.dot(&local_ref) + noise_mag * &si;
        a.push(ai);
        b.push(bi);
    }

    let mut p = Problem::from_data(a, b, 0.0)?;
    p.m = m;
    p.hetero = hetero;
    p.noise_mag = noise_mag;
    p.seed = seed;
    Ok(p)
}

impl Problem {
    /// Builds a problem from explicit data, solving the normal equations for
    /// the reference minimizer and computing the spectral constants.
    pub fn from_data(a: Vec<Array2<f64>>, b: Vec<Array1<f64>>, sigma_sq: f64) -> Result<Problem> {
        let n = a.len();
        assert!(n >= 1 && n == b.len(), "need matching A and b blocks");
        let d = a[0].ncols();
        for (i, ai) in a.iter().enumerate() {
            if ai.ncols() != d {
                return Err(Error::DimensionMismatch {
                    context: "design matrix columns",
                    expected: d,
                    got: ai.ncols(),
                });
            }
            if b[i].len() != ai.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "target length vs design rows",
                    expected: ai.nrows(),
                    got: b[i].len(),
                });
            }
        }

        // Normal equations (sum_i A_i^T A_i) x = sum_i A_i^T b_i.
        let mut gram = Array2::<f64>::zeros((d, d));
        let mut rhs = Array1::<f64>::zeros(d);
        for i in 0..n {
            gram = gram + a[i].t().dot(&a[i]);
            rhs = rhs + a[i].t().dot(&b[i]);
        }
        let (x_star, cond) = spd_solve(&gram, &rhs)?;
        if cond > COND_CAP {
            return Err(Error::SingularNormalEquations { cond });
        }

        // Spectral constants: per-node smoothness max, average-Hessian minimum.
        let mut l_smooth = 0.0f64;
        for ai in &a {
            let local = ai.t().dot(ai);
            let eig = jacobi_eigen(&local)?;
            l_smooth = l_smooth.max(eig.values[0]);
        }
        let avg_hessian = gram / n as f64;
        let mu = jacobi_eigen(&avg_hessian)?.values[d - 1];

        let mut p = Problem {
            n,
            d,
            a,
            b,
            x_star,
            b_sq: 0.0,
            sigma_sq,
            l_smooth,
            mu,
            m: 0,
            hetero: 0.0,
            noise_mag: 0.0,
            seed: 0,
        };
        p.m = p.a.iter().map(|ai| ai.nrows()).max().unwrap_or(0);
        p.b_sq = p.compute_b_sq();
        debug_assert!(
            p.optimality_residual() <= 1e-9 * (1.0 + p.x_star.dot(&p.x_star).sqrt()),
            "stored minimizer violates first-order optimality"
        );
        Ok(p)
    }

    /// `(1/n) sum_i ||grad f_i(x_star)||^2`, recomputed from data.
    pub fn compute_b_sq(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let g = self.full_gradient(i, &self.x_star);
                g.dot(&g)
            })
            .sum::<f64>()
            / self.n as f64
    }

    /// Norm of the averaged gradient at the stored minimizer.
    pub fn optimality_residual(&self) -> f64 {
        let g = self.grad_mean(&self.x_star);
        g.dot(&g).sqrt()
    }

    /// Exact local gradient `A_i^T (A_i x - b_i)`.
    pub fn full_gradient(&self, node: usize, x: &Array1<f64>) -> Array1<f64> {
        debug_assert!(node < self.n);
        debug_assert_eq!(x.len(), self.d);
        let resid = self.a[node].dot(x) - &self.b[node];
        self.a[node].t().dot(&resid)
    }

    /// Local loss `0.5 * ||A_i x - b_i||^2`.
    pub fn local_loss(&self, node: usize, x: &Array1<f64>) -> f64 {
        let resid = self.a[node].dot(x) - &self.b[node];
        0.5 * resid.dot(&resid)
    }

    /// Global loss `(1/n) sum_i f_i(x)`.
    pub fn loss(&self, x: &Array1<f64>) -> f64 {
        (0..self.n).map(|i| self.local_loss(i, x)).sum::<f64>() / self.n as f64
    }

    /// Averaged gradient `(1/n) sum_i grad f_i(x)` (ascending node order).
    pub fn grad_mean(&self, x: &Array1<f64>) -> Array1<f64> {
        let mut acc = Array1::<f64>::zeros(self.d);
        for i in 0..self.n {
            acc += &self.full_gradient(i, x);
        }
        acc / self.n as f64
    }

    /// Stochastic gradient for `(seed, node, iteration)`; a pure function of
    /// its arguments, identical across call orders and thread counts.
    pub fn stochastic_gradient(
        &self,
        node: usize,
        x: &Array1<f64>,
        kind: GradKind,
        batch_size: usize,
        seed: u64,
        iteration: u64,
    ) -> Result<GradientSample> {
        let value = match kind {
            GradKind::FullBatch => self.full_gradient(node, x),
            GradKind::AdditiveNoise => {
                if batch_size == 0 {
                    return Err(Error::BadBatchSize {
                        batch: 0,
                        rows: self.a[node].nrows(),
                    });
                }
                let mut g = self.full_gradient(node, x);
                // Per-coordinate std sqrt(sigma^2 / (B d)) makes
                // E||z||^2 = sigma^2 / B.
                let scale = (self.sigma_sq / (batch_size as f64 * self.d as f64)).sqrt();
                let z = normal_vec(seed, StreamTag::GradNoise, node as u64, iteration, self.d);
                for (gi, zi) in g.iter_mut().zip(z.iter()) {
                    *gi += scale * zi;
                }
                g
            }
            GradKind::Minibatch => {
                let rows = self.a[node].nrows();
                if batch_size == 0 || batch_size > rows {
                    return Err(Error::BadBatchSize {
                        batch: batch_size,
                        rows,
                    });
                }
                let picked = sample_without_replacement(
                    seed,
                    StreamTag::Minibatch,
                    node as u64,
                    iteration,
                    rows,
                    batch_size,
                );
                let mut sub_a = Array2::<f64>::zeros((batch_size, self.d));
                let mut sub_b = Array1::<f64>::zeros(batch_size);
                for (t, &r) in picked.iter().enumerate() {
                    sub_a.row_mut(t).assign(&self.a[node].row(r));
                    sub_b[t] = self.b[node][r];
                }
                let resid = sub_a.dot(x) - &sub_b;
                let scale = rows as f64 / batch_size as f64;
                scale * sub_a.t().dot(&resid)
            }
        };
        Ok(GradientSample {
            node,
            value,
            kind,
            batch_size,
        })
    }

    /// Serializes to the plain-text problem format (17 significant digits,
    /// bit-exact round trip).
    pub fn save_string(&self) -> String {
        let mut out = String::new();
        out.push_str("problem v1\n");
        let _ = writeln!(out, "n {}", self.n);
        let _ = writeln!(out, "d {}", self.d);
        let _ = writeln!(out, "m {}", self.m);
        let _ = writeln!(out, "hetero {:.16e}", self.hetero);
        let _ = writeln!(out, "noise_mag {:.16e}", self.noise_mag);
        let _ = writeln!(out, "sigma_sq {:.16e}", self.sigma_sq);
        let _ = writeln!(out, "seed {}", self.seed);
        for i in 0..self.n {
            let rows = self.a[i].nrows();
            let _ = writeln!(out, "A {} {} {}", i, rows, self.d);
            for r in 0..rows {
                let line: Vec<String> = (0..self.d)
                    .map(|c| format!("{:.16e}", self.a[i][[r, c]]))
                    .collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
            let _ = writeln!(out, "b {} {}", i, rows);
            let line: Vec<String> = (0..rows).map(|r| format!("{:.16e}", self.b[i][r])).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    /// Parses the text format written by [`Problem::save_string`], then
    /// recomputes `x_star`, `b_sq`, `L`, and `mu` from the restored data.
    pub fn load_str(text: &str) -> Result<Problem> {
        let mut lines = text.lines().enumerate();
        let fail = |line: usize, message: &str| Error::ProblemParse {
            line: line + 1,
            message: message.to_string(),
        };

        let (ln, header) = lines.next().ok_or_else(|| fail(0, "empty file"))?;
        if header.trim() != "problem v1" {
            return Err(fail(ln, "expected header `problem v1`"));
        }

        fn scalar<'a>(
            lines: &mut impl Iterator<Item = (usize, &'a str)>,
            key: &str,
        ) -> Result<(usize, String)> {
            let (ln, line) = lines.next().ok_or_else(|| Error::ProblemParse {
                line: 0,
                message: format!("missing field {key}"),
            })?;
            let mut parts = line.split_whitespace();
            let k = parts.next().unwrap_or("");
            let v = parts.next().unwrap_or("");
            if k != key || v.is_empty() {
                return Err(Error::ProblemParse {
                    line: ln + 1,
                    message: format!("expected `{key} <value>`, got {line:?}"),
                });
            }
            Ok((ln, v.to_string()))
        }

        let n: usize = {
            let (ln, v) = scalar(&mut lines, "n")?;
            v.parse().map_err(|_| fail(ln, "bad n"))?
        };
        let d: usize = {
            let (ln, v) = scalar(&mut lines, "d")?;
            v.parse().map_err(|_| fail(ln, "bad d"))?
        };
        let m: usize = {
            let (ln, v) = scalar(&mut lines, "m")?;
            v.parse().map_err(|_| fail(ln, "bad m"))?
        };
        let hetero: f64 = {
            let (ln, v) = scalar(&mut lines, "hetero")?;
            v.parse().map_err(|_| fail(ln, "bad hetero"))?
        };
        let noise_mag: f64 = {
            let (ln, v) = scalar(&mut lines, "noise_mag")?;
            v.parse().map_err(|_| fail(ln, "bad noise_mag"))?
        };
        let sigma_sq: f64 = {
            let (ln, v) = scalar(&mut lines, "sigma_sq")?;
            v.parse().map_err(|_| fail(ln, "bad sigma_sq"))?
        };
        let seed: u64 = {
            let (ln, v) = scalar(&mut lines, "seed")?;
            v.parse().map_err(|_| fail(ln, "bad seed"))?
        };

        let mut a: Vec<Array2<f64>> = Vec::with_capacity(n);
        let mut b: Vec<Array1<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| fail(usize::MAX - 1, "unexpected end of file"))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "A" {
                return Err(fail(ln, "expected `A <node> <rows> <cols>`"));
            }
            let rows: usize = parts[2].parse().map_err(|_| fail(ln, "bad row count"))?;
            let cols: usize = parts[3].parse().map_err(|_| fail(ln, "bad col count"))?;
            if parts[1].parse::<usize>().map_err(|_| fail(ln, "bad node"))? != i || cols != d {
                return Err(fail(ln, "block out of order or wrong width"));
            }
            let mut ai = Array2::<f64>::zeros((rows, cols));
            for r in 0..rows {
                let (ln, line) = lines.next().ok_or_else(|| fail(usize::MAX - 1, "truncated A block"))?;
                let vals: Vec<&str> = line.split_whitespace().collect();
                if vals.len() != cols {
                    return Err(fail(ln, "wrong number of values in A row"));
                }
                for (c, v) in vals.iter().enumerate() {
                    ai[[r, c]] = v.parse().map_err(|_| fail(ln, "bad float in A"))?;
                }
            }
            let (ln, line) = lines.next().ok_or_else(|| fail(usize::MAX - 1, "missing b block"))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 || parts[0] != "b" {
                return Err(fail(ln, "expected `b <node> <rows>`"));
            }
            let (ln, line) = lines.next().ok_or_else(|| fail(usize::MAX - 1, "truncated b block"))?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != rows {
                return Err(fail(ln, "wrong number of values in b"));
            }
            let mut bi = Array1::<f64>::zeros(rows);
            for (r, v) in vals.iter().enumerate() {
                bi[r] = v.parse().map_err(|_| fail(ln, "bad float in b"))?;
            }
            a.push(ai);
            b.push(bi);
        }

        let mut p = Problem::from_data(a, b, sigma_sq)?;
        p.m = m;
        p.hetero = hetero;
        p.noise_mag = noise_mag;
        p.seed = seed;
        Ok(p)
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.save_string())?;
        Ok(())
    }

    pub fn load_file(path: &Path) -> Result<Problem> {
        let text = std::fs::read_to_string(path)?;
        Problem::load_str(&text)
    }
}

/// Returns `(b_sq, b_hat_sq_at_x)`: the stored-minimizer heterogeneity and
/// the pointwise gradient spread `(1/n) sum_i ||grad f_i(x) - grad f(x)||^2`.
pub fn heterogeneity_metrics(p: &Problem, x: &Array1<f64>) -> (f64, f64) {
    let grads: Vec<Array1<f64>> = (0..p.n).map(|i| p.full_gradient(i, x)).collect();
    let mut mean = Array1::<f64>::zeros(p.d);
    for g in &grads {
        mean += g;
    }
    mean /= p.n as f64;
    let spread = grads
        .iter()
        .map(|g| {
            let diff = g - &mean;
            diff.dot(&diff)
        })
        .sum::<f64>()
        / p.n as f64;
    (p.b_sq, spread)
}
