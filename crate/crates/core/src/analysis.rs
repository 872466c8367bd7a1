//! Convergence metrics, limiting-bias estimation, and scaling-law fits.
//!
//! The central quantity is the *limiting bias*: run an algorithm with exact
//! gradients until the iterate stops moving, then measure how far the fixed
//! point sits from the true minimizer. For gossip algorithms on heterogeneous
//! data this bias is nonzero, scales like `gamma^2`, and — for DmSGD — is
//! amplified by `1/(1-beta)^2`, while DecentLaM's fixed point coincides with
//! plain DSGD's. [`fit_bias_scaling`] measures those exponents from batches
//! of [`BiasEstimate`]s.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, mix_multiply};
use crate::optimizers::{step, Algorithm, OptimizerState, SDomainState};
use crate::problems::{GradMode, Problem};
use crate::topology::WeightMatrix;

/// Relative error above which a run is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Default relative iterate-displacement tolerance for fixed-point detection.
pub const DEFAULT_FIXED_POINT_TOL: f64 = 1e-13;

/// Metrics of one stacked iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord {
    /// Iteration index; filled in by the caller that owns the loop.
    pub k: u64,
    /// `(1/n) sum_i ||x_i - x_star||^2 / ||x_star||^2`.
    pub relative_error: f64,
    /// `(1/n) sum_i ||x_i - x_bar||^2`.
    pub consensus_error: f64,
    /// `f(x_bar)`.
    pub loss: f64,
    /// `||grad f(x_bar)||^2`.
    pub grad_norm_sq: f64,
}

/// One recorded run of one algorithm.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub algo: String,
    pub records: Vec<MetricRecord>,
    /// Compact human-readable snapshot of the run settings.
    pub config: String,
}

/// Outcome of a full-batch fixed-point run.
#[derive(Debug, Clone)]
pub struct BiasEstimate {
    pub algo: String,
    pub gamma: f64,
    pub beta: f64,
    pub rho: f64,
    pub b_sq: f64,
    /// Relative error at the detected fixed point (or at the last iterate
    /// when not converged).
    pub limiting_bias: f64,
    /// Norm of the algorithm's fixed-point equation at the final iterate,
    /// scaled by `1/(1 + ||x||_F)`.
    pub fixed_point_residual: f64,
    pub converged: bool,
}

/// Axis of a scaling fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingAxis {
    Gamma,
    OneOverOneMinusBeta,
    OneOverOneMinusRho,
}

impl ScalingAxis {
    pub fn label(self) -> &'static str {
        match self {
            ScalingAxis::Gamma => "gamma",
            ScalingAxis::OneOverOneMinusBeta => "1/(1-beta)",
            ScalingAxis::OneOverOneMinusRho => "1/(1-rho)",
        }
    }

    fn abscissa(self, e: &BiasEstimate) -> f64 {
        match self {
            ScalingAxis::Gamma => e.gamma,
            ScalingAxis::OneOverOneMinusBeta => 1.0 / (1.0 - e.beta),
            ScalingAxis::OneOverOneMinusRho => 1.0 / (1.0 - e.rho),
        }
    }
}

/// Log–log least-squares fit of bias against one axis.
#[derive(Debug, Clone)]
pub struct ScalingFit {
    pub axis: ScalingAxis,
    /// `(abscissa, bias)` pairs the fit was computed from.
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub r_sq: f64,
}

/// Computes all trajectory metrics for a stacked iterate.
pub fn metrics_snapshot(x: &Array2<f64>, p: &Problem) -> MetricRecord {
    let n = x.nrows();
    let star_norm_sq = p.x_star.dot(&p.x_star);

    let mut x_bar = Array1::<f64>::zeros(p.d);
    for i in 0..n {
        x_bar += &x.row(i);
    }
    x_bar /= n as f64;

    let mut rel = 0.0;
    let mut cons = 0.0;
    for i in 0..n {
        let row = x.row(i);
        let mut dstar = 0.0;
        let mut dbar = 0.0;
        for c in 0..p.d {
            let a = row[c] - p.x_star[c];
            let b = row[c] - x_bar[c];
            dstar += a * a;
            dbar += b * b;
        }
        rel += dstar;
        cons += dbar;
    }
    rel /= n as f64 * star_norm_sq;
    cons /= n as f64;

    let g = p.grad_mean(&x_bar);
    MetricRecord {
        k: 0,
        relative_error: rel,
        consensus_error: cons,
        loss: p.loss(&x_bar),
        grad_norm_sq: g.dot(&g),
    }
}

/// Frobenius norm of the residual of the algorithm's own fixed-point
/// equation at `x`, scaled by `1/(1 + ||x||_F)`.
///
/// Fixed-point equations (full batch, `F` the stacked local gradients):
///
/// * DSGD / DecentLaM (all forms): `(I - W) x + gamma W F(x) = 0`
/// * DmSGD (both forms):           `(1-beta)(I - W) x + gamma W F(x) = 0`
/// * DA-DmSGD:  `(I - W) x + gamma W (I - beta W)^{-1} W F(x) = 0`
/// * AWC-DmSGD: `(I - W) x + gamma F(x) / (1-beta) = 0`
/// * PmSGD:     `gamma * grad f(x_bar) = 0` (stationarity of the average)
pub fn fixed_point_residual(
    algo: Algorithm,
    x: &Array2<f64>,
    p: &Problem,
    w: &WeightMatrix,
    gamma: f64,
    beta: f64,
) -> f64 {
    let n = x.nrows();
    let mut grads = Array2::<f64>::zeros((n, p.d));
    for i in 0..n {
        grads
            .row_mut(i)
            .assign(&p.full_gradient(i, &x.row(i).to_owned()));
    }
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = 1.0 + x_norm;

    let residual: Array2<f64> = match algo {
        Algorithm::PmSgd => {
            let mut x_bar = Array1::<f64>::zeros(p.d);
            for i in 0..n {
                x_bar += &x.row(i);
            }
            x_bar /= n as f64;
            let g = p.grad_mean(&x_bar);
            let mut r = Array2::<f64>::zeros((n, p.d));
            for i in 0..n {
                r.row_mut(i).assign(&(gamma * &g));
            }
            r
        }
        Algorithm::Dsgd
        | Algorithm::DecentLam
        | Algorithm::DecentLamReformulated
        | Algorithm::DecentLamSDomain => {
            let drift = x - &mix_multiply(&w.w, x);
            drift + gamma * &mix_multiply(&w.w, &grads)
        }
        Algorithm::DmSgd | Algorithm::DmSgdReformulated => {
            let drift = x - &mix_multiply(&w.w, x);
            (1.0 - beta) * &drift + gamma * &mix_multiply(&w.w, &grads)
        }
        Algorithm::DaDmSgd => {
            // m* = (I - beta W)^{-1} W F(x), via the eigenbasis of W.
            let eig = jacobi_eigen(&w.w).expect("weight matrices decompose");
            let wg = mix_multiply(&w.w, &grads);
            // U^T wg
            let mut ut_wg = Array2::<f64>::zeros((n, p.d));
            for r in 0..n {
                for c in 0..p.d {
                    ut_wg[[r, c]] = (0..n).map(|i| eig.vectors[[i, r]] * wg[[i, c]]).sum();
                }
            }
            for r in 0..n {
                let damp = 1.0 / (1.0 - beta * eig.values[r]);
                for c in 0..p.d {
                    ut_wg[[r, c]] *= damp;
                }
            }
            let mut m_star = Array2::<f64>::zeros((n, p.d));
            for i in 0..n {
                for c in 0..p.d {
                    m_star[[i, c]] = (0..n).map(|r| eig.vectors[[i, r]] * ut_wg[[r, c]]).sum();
                }
            }
            let drift = x - &mix_multiply(&w.w, x);
            drift + gamma * &mix_multiply(&w.w, &m_star)
        }
        Algorithm::AwcDmSgd => {
            let drift = x - &mix_multiply(&w.w, x);
            drift + (gamma / (1.0 - beta)) * &grads
        }
    };
    let r_norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
    r_norm / scale
}

/// Runs `algo` with exact gradients from the all-zero start until the
/// iterate displacement `||x' - x||_F / max(1, ||x||_F)` drops below `tol`
/// or `max_iters` is exhausted, then reports the limiting relative error and
/// the fixed-point residual. The step size is held constant.
///
/// Divergence (relative error above [`DIVERGENCE_THRESHOLD`]) is an error;
/// running out of iterations is not — it returns `converged = false`.
pub fn estimate_limiting_bias(
    algo: Algorithm,
    p: &Problem,
    w: &WeightMatrix,
    gamma: f64,
    beta: f64,
    max_iters: u64,
    tol: f64,
) -> Result<BiasEstimate> {
    let mode = GradMode::FULL;
    let n = p.n;
    let make = |x: &Array2<f64>, converged: bool| -> BiasEstimate {
        BiasEstimate {
            algo: algo.label().to_string(),
            gamma,
            beta,
            rho: w.rho,
            b_sq: p.b_sq,
            limiting_bias: metrics_snapshot(x, p).relative_error,
            fixed_point_residual: fixed_point_residual(algo, x, p, w, gamma, beta),
            converged,
        }
    };

    let displacement = |new: &Array2<f64>, old: &Array2<f64>| -> f64 {
        let mut diff = 0.0;
        let mut norm = 0.0;
        for (a, b) in new.iter().zip(old.iter()) {
            diff += (a - b) * (a - b);
            norm += b * b;
        }
        diff.sqrt() / norm.sqrt().max(1.0)
    };

    if algo.is_s_domain() {
        let mut state = SDomainState::from_x0(&Array2::zeros((n, p.d)), w, gamma, beta)?;
        let mut x = state.x();
        for k in 0..max_iters {
            state = state.step(p, mode, 0)?;
            let x_new = state.x();
            let rel = metrics_snapshot(&x_new, p).relative_error;
            if !rel.is_finite() || rel > DIVERGENCE_THRESHOLD {
                return Err(Error::Divergence {
                    iter: k,
                    value: rel,
                    threshold: DIVERGENCE_THRESHOLD,
                });
            }
            let moved = displacement(&x_new, &x);
            x = x_new;
            if moved < tol {
                return Ok(make(&x, true));
            }
        }
        return Ok(make(&x, false));
    }

    let mut state = OptimizerState::zeros(n, p.d, gamma, beta);
    for k in 0..max_iters {
        let next = step(algo, &state, p, w, mode, 0)?;
        let rel = metrics_snapshot(&next.x, p).relative_error;
        if !rel.is_finite() || rel > DIVERGENCE_THRESHOLD {
            return Err(Error::Divergence {
                iter: k,
                value: rel,
                threshold: DIVERGENCE_THRESHOLD,
            });
        }
        let moved = displacement(&next.x, &state.x);
        state = next;
        if moved < tol {
            return Ok(make(&state.x, true));
        }
    }
    Ok(make(&state.x, false))
}

/// Least-squares fit of `ln(bias)` against `ln(abscissa)`.
///
/// Requires at least three estimates, all converged, with positive biases
/// and abscissas. A constant bias across distinct abscissas fits slope 0
/// with `r_sq = 1`.
pub fn fit_bias_scaling(estimates: &[BiasEstimate], axis: ScalingAxis) -> Result<ScalingFit> {
    if estimates.len() < 3 {
        return Err(Error::InsufficientPoints {
            min: 3,
            got: estimates.len(),
        });
    }
    for (i, e) in estimates.iter().enumerate() {
        if !e.converged {
            return Err(Error::NonConvergedInput { index: i });
        }
    }
    let mut points = Vec::with_capacity(estimates.len());
    for (i, e) in estimates.iter().enumerate() {
        let a = axis.abscissa(e);
        if !(a > 0.0) {
            return Err(Error::NonPositiveFitValue {
                context: "abscissa",
                index: i,
                value: a,
            });
        }
        if !(e.limiting_bias > 0.0) {
            return Err(Error::NonPositiveFitValue {
                context: "limiting bias",
                index: i,
                value: e.limiting_bias,
            });
        }
        points.push((a, e.limiting_bias));
    }

    let logs: Vec<(f64, f64)> = points.iter().map(|&(a, y)| (a.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)).sum();
    if sxx <= 0.0 {
        return Err(Error::NonPositiveFitValue {
            context: "abscissa spread (all points share one abscissa)",
            index: 0,
            value: sxx,
        });
    }
    let slope = sxy / sxx;
    let ss_res: f64 = logs
        .iter()
        .map(|p| {
            let fit = mean_y + slope * (p.0 - mean_x);
            (p.1 - fit) * (p.1 - fit)
        })
        .sum();
    let r_sq = if syy <= 1e-30 {
        1.0 // constant data fitted exactly by the constant model
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(ScalingFit {
        axis,
        points,
        slope,
        r_sq,
    })
}

/// One advisory step-size or momentum condition.
#[derive(Debug, Clone)]
pub struct ConditionCheck {
    pub name: &'static str,
    /// The quantity being constrained.
    pub value: f64,
    /// The bound it must stay at or below.
    pub bound: f64,
    pub satisfied: bool,
}

/// Advisory report on the analysis-only step-size restrictions. These are
/// sufficient conditions from the convergence theory, far more conservative
/// than what works in practice; nothing in the crate enforces them.
#[derive(Debug, Clone)]
pub struct TheoremReport {
    pub checks: Vec<ConditionCheck>,
    pub all_satisfied: bool,
}

impl std::fmt::Display for TheoremReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {}: value {:.6e} vs bound {:.6e}",
                if c.satisfied { "ok " } else { "VIOLATED" },
                c.name,
                c.value,
                c.bound
            )?;
        }
        write!(
            f,
            "overall: {}",
            if self.all_satisfied { "all satisfied" } else { "some violated" }
        )
    }
}

/// Evaluates the theoretical step-size bounds (general and, when `mu` is
/// given, strongly-convex) plus the momentum condition
/// `beta + 16 beta^2 / ((1-beta)(1-rho)^2) <= (3+rho)/4`.
pub fn theorem_constant_check(
    gamma: f64,
    beta: f64,
    rho: f64,
    l_smooth: f64,
    mu: Option<f64>,
) -> TheoremReport {
    let mut checks = Vec::new();
    let omb = 1.0 - beta;

    let mut general = omb * omb / ((5.0 - beta + 2.0 * beta * beta) * l_smooth);
    if beta > 0.0 {
        general = general
            .min(omb * omb / (5.0 * (beta + beta * beta).sqrt() * l_smooth))
            .min(omb * omb / (12.0 * l_smooth * beta * beta));
    }
    if rho > 0.0 {
        general = general.min((1.0 - rho) / (20.0 * rho.sqrt() * l_smooth));
    }
    checks.push(ConditionCheck {
        name: "general step-size bound",
        value: gamma,
        bound: general,
        satisfied: gamma <= general,
    });

    let momentum_lhs = beta + 16.0 * beta * beta / (omb * (1.0 - rho) * (1.0 - rho));
    let momentum_rhs = (3.0 + rho) / 4.0;
    checks.push(ConditionCheck {
        name: "momentum condition",
        value: momentum_lhs,
        bound: momentum_rhs,
        satisfied: momentum_lhs <= momentum_rhs,
    });

    if let Some(mu) = mu {
        let kappa = l_smooth / mu;
        let strongly = (omb * omb / (27.0 * l_smooth))
            .min((1.0 - rho) * omb * (kappa + 1.0) / (5.0 * l_smooth))
            .min((1.0 - rho) / (1728.0 * (kappa + 1.0)).sqrt());
        checks.push(ConditionCheck {
            name: "strongly-convex step-size bound",
            value: gamma,
            bound: strongly,
            satisfied: gamma <= strongly,
        });
    }

    let all_satisfied = checks.iter().all(|c| c.satisfied);
    TheoremReport {
        checks,
        all_satisfied,
    }
}
