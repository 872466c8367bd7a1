//! Single-iteration step functions for the algorithm family.
//!
//! All algorithms operate on stacked state: `x` is `n x d` with row `i`
//! holding node `i`'s model. A step is a pure function from old state to new
//! state; gradient draws are keyed by `(seed, node, k)`, so every algorithm
//! sees the same stochastic gradients at the same iteration and comparisons
//! across algorithms are variance-matched.
//!
//! The family, in update order per iteration:
//!
//! * `PmSGD` — centralized momentum SGD on the averaged gradient.
//! * `DSGD` — gossip step `x <- W (x - gamma G)`.
//! * `DmSGD` — momentum then gossip: `m <- beta m + G`, `x <- W (x - gamma m)`.
//! * `DmSGD-reform` — the equivalent history form
//!   `x <- W(x - gamma G) + beta (x - W x_prev)`.
//! * `DecentLaM` — momentum on the bias-corrected gradient
//!   `g = (1/gamma) x - (1/gamma) W (x - gamma G)`, then `x <- x - gamma m`.
//! * `DecentLaM-reform` — the equivalent history form
//!   `x <- W(x - gamma G) + beta (x - x_prev)`.
//! * `DecentLaM-s` — the same algorithm expressed as plain momentum SGD in
//!   the variable `s` with `x = W^{1/2} s` (requires positive-definite `W`).
//! * `DA-DmSGD` — DmSGD with the momentum gossiped as well.
//! * `AWC-DmSGD` — gossip on the model only: `x <- W x - gamma m`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::mix_multiply;
use crate::problems::{GradMode, Problem};
use crate::topology::{matrix_inv_sqrt, matrix_sqrt, WeightMatrix};

pub use crate::problems::GradKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    PmSgd,
    Dsgd,
    DmSgd,
    DmSgdReformulated,
    DecentLam,
    DecentLamReformulated,
    DecentLamSDomain,
    DaDmSgd,
    AwcDmSgd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::PmSgd,
        Algorithm::Dsgd,
        Algorithm::DmSgd,
        Algorithm::DmSgdReformulated,
        Algorithm::DecentLam,
        Algorithm::DecentLamReformulated,
        Algorithm::DecentLamSDomain,
        Algorithm::DaDmSgd,
        Algorithm::AwcDmSgd,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::PmSgd => "PmSGD",
            Algorithm::Dsgd => "DSGD",
            Algorithm::DmSgd => "DmSGD",
            Algorithm::DmSgdReformulated => "DmSGD-reform",
            Algorithm::DecentLam => "DecentLaM",
            Algorithm::DecentLamReformulated => "DecentLaM-reform",
            Algorithm::DecentLamSDomain => "DecentLaM-s",
            Algorithm::DaDmSgd => "DA-DmSGD",
            Algorithm::AwcDmSgd => "AWC-DmSGD",
        }
    }

    /// True for the variant that steps in the `s`-domain and needs a
    /// positive-definite weight matrix.
    pub fn is_s_domain(self) -> bool {
        matches!(self, Algorithm::DecentLamSDomain)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let lower = s.to_ascii_lowercase();
        for algo in Algorithm::ALL {
            if algo.label().to_ascii_lowercase() == lower {
                return Ok(algo);
            }
        }
        Err(format!(
            "unknown algorithm {s:?} (expected one of {})",
            Algorithm::ALL.map(|a| a.label()).join(", ")
        ))
    }
}

/// Stacked optimizer state shared by all x-domain algorithms.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    /// `n x d`, row `i` is node `i`'s model.
    pub x: Array2<f64>,
    /// `n x d` stacked momenta; all zeros at `k = 0` and for momentum-free
    /// algorithms.
    pub m: Array2<f64>,
    /// Previous iterate, maintained only by the reformulated variants.
    pub x_prev: Option<Array2<f64>>,
    pub k: u64,
    /// Step size used by the next step (runners overwrite it per iteration
    /// when a schedule is active).
    pub gamma: f64,
    pub beta: f64,
}

impl OptimizerState {
    pub fn new(x0: Array2<f64>, gamma: f64, beta: f64) -> OptimizerState {
        assert!(gamma > 0.0, "gamma must be positive");
        assert!((0.0..1.0).contains(&beta), "beta must lie in [0, 1)");
        let shape = (x0.nrows(), x0.ncols());
        OptimizerState {
            x: x0,
            m: Array2::zeros(shape),
            x_prev: None,
            k: 0,
            gamma,
            beta,
        }
    }

    /// All-zero start, the default initialization for every experiment.
    pub fn zeros(n: usize, d: usize, gamma: f64, beta: f64) -> OptimizerState {
        OptimizerState::new(Array2::zeros((n, d)), gamma, beta)
    }
}

/// Stacked per-node stochastic gradients at iteration `k`: row `i` is the
/// draw for node `i` at its own iterate.
pub fn stacked_gradients(
    p: &Problem,
    x: &Array2<f64>,
    mode: GradMode,
    seed: u64,
    k: u64,
) -> Result<Array2<f64>> {
    let mut g = Array2::<f64>::zeros((p.n, p.d));
    for i in 0..p.n {
        let xi = x.row(i).to_owned();
        let sample = p.stochastic_gradient(i, &xi, mode.kind, mode.batch_size, seed, k)?;
        g.row_mut(i).assign(&sample.value);
    }
    Ok(g)
}

/// Centralized momentum SGD: every node holds the shared model.
pub fn step_psgd_momentum(
    state: &OptimizerState,
    p: &Problem,
    _w: &WeightMatrix,
    mode: GradMode,
    seed: u64,
) -> Result<OptimizerState> {
    let g = stacked_gradients(p, &state.x, mode, seed, state.k)?;
    // Average the per-node draws in ascending node order.
    let mut g_mean = Array1::<f64>::zeros(p.d);
    for i in 0..p.n {
        g_mean += &g.row(i);
    }
    g_mean /= p.n as f64;

    let m_shared = state.beta * &state.m.row(0).to_owned() + &g_mean;
    let x_shared = &state.x.row(0).to_owned() - &(state.gamma * &m_shared);

    let mut m = Array2::<f64>::zeros((p.n, p.d));
    let mut x = Array2::<f64>::zeros((p.n, p.d));
    for i in 0..p.n {
        m.row_mut(i).assign(&m_shared);
        x.row_mut(i).assign(&x_shared);
    }
    Ok(OptimizerState {
        x,
        m,
        x_prev: None,
        k: state.k + 1,
        gamma: state.gamma,
        beta: state.beta,
    })
}

/// `x <- W (x - gamma G)`.
pub fn step_dsgd(
    state: &OptimizerState,
    p: &Problem,
    w: &WeightMatrix,
    mode: GradMode,
    seed: u64,
) -> Result<OptimizerState> {
    let g = stacked_gradients(p, &state.x, mode, seed, state.k)?;
    let half = &state.x - &(state.gamma * &g);
    Ok(OptimizerState {
        x: mix_multiply(&w.w, &half),
        m: state.m.clone(),
        x_prev: None,
        k: state.k + 1,
        gamma: state.gamma,
        beta: state.beta,
    })
}

/// `m <- beta m + G`, then `x <- W (x - gamma m)`.
pub fn step_dmsgd(
    state: &OptimizerState,
    p: &Problem,
    w: &WeightMatrix,
    mode: GradMode,
    seed: u64,
) -> Result<OptimizerState> {
    let g = stacked_gradients(p, &state.x, mode, seed, state.k)?;
    let m = state.beta * &state.m + &g;
    let half = &state.x - &(state.gamma * &m);
    Ok(OptimizerState {
        x: mix_multiply(&w.w, &half),
        m,
        x_prev: None,
        k: state.k + 1,
        gamma: state.gamma,
        beta: state.beta,
    })
}

/// History form of DmSGD: `x <- W(x - gamma G) + beta (x - W x_prev)`.
///
/// The first step (no history yet) is the plain gossip step, which is what
/// the momentum form also produces from zero momentum.
pub fn step_dmsgd_reformulated(
    state: &OptimizerState,
    p: &Problem,
    w: &WeightMatrix,
    mode: GradMode,
    seed: u64,
) -> Result<OptimizerState> {
    let g = stacked_gradients(p, &state.x, mode, seed, state.k)?;
    let gossip = mix_multiply(&w.w, &(&state.x - &(state.gamma * &g)));
    let x_new = match &state.x_prev {
        None => gossip,
        Some(prev) => {
            let w_prev = mix_multiply(&w.w, prev);
            gossip + state.beta * &(&state.x - &w_prev)
        }
    };
    Ok(OptimizerState {
        x: x_new,
        m: state.m.clone(),
        x_prev: Some(state.x.clone()),
        k: state.k + 1,
        gamma: state.gamma,
        beta: state.beta,
    })
}

/// Momentum on the bias-corrected gradient:
/// `g = (1/gamma) x - (1/gamma) W (x - gamma G)`, `m <- beta m + g`,
/// `x <- x - gamma m`.
pub fn step_decentlam(
    state: &OptimizerState,
    p: &Problem,
    w: &WeightMatrix,
    mode: GradMode,
    seed: u64,
) -> Result<OptimizerState> {
    let g = stacked_gradients(p, &state.x, mode, seed, state.k)?;
    let gossip = mix_multiply(&w.w, &(&state.x - &(state.gamma * &g)));
    let corrected = (1.0 / state.gamma) * &(&state.x - &gossip);
    let m = state.beta * &state.m + &corrected;
    Ok(OptimizerState {
        x: &state.x - &(state.gamma * &m),
        m,
        x_prev: None,
        k: state.k + 1,
        gamma: state.gamma,
        beta: state.beta,
    })
}

/// History form of DecentLaM: `x <- W(x - gamma G) + beta (x - x_prev)`.
pub fn step_decentlam_reformulated(
    state: &OptimizerState,
    p: &Problem,
    w: &WeightMatrix,
    mode: GradMode,
    seed: u64,
) -> Result<OptimizerState> {
    let g = stacked_gradients(p, &state.x, mode, seed, state.k)?;
    let gossip = mix_multiply(&w.w, &(&state.x - &(state.gamma * &g)));
    let x_new = match &state.x_prev {
        None => gossip,
        Some(prev) => gossip + state.beta * &(&state.x - prev),
    };
    Ok(OptimizerState {
        x: x_new,
        m: state.m.clone(),
        x_prev: Some(state.x.clone()),
        k: state.k + 1,
        gamma: state.gamma,
        beta: state.beta,
    })
}

/// DmSGD with the freshly updated momentum gossiped before the model step:
/// `m <- W (beta m + G)`, `x <- W (x - gamma m)`.
pub fn step_da_dmsgd(
    state: &OptimizerState,
    p: &Problem,
    w: &WeightMatrix,
    mode: GradMode,
    seed: u64,
) -> Result<OptimizerState> {
    let g = stacked_gradients(p, &state.x, mode, seed, state.k)?;
    let m = mix_multiply(&w.w, &(state.beta * &state.m + &g));
    let half = &state.x - &(state.gamma * &m);
    Ok(OptimizerState {
        x: mix_multiply(&w.w, &half),
        m,
        x_prev: None,
        k: state.k + 1,
        gamma: state.gamma,
        beta: state.beta,
    })
}

/// Adapt-with-combination variant: `m <- beta m + G`, `x <- W x - gamma m`.
pub fn step_awc_dmsgd(
    state: &OptimizerState,
    p: &Problem,
    w: &WeightMatrix,
    mode: GradMode,
    seed: u64,
) -> Result<OptimizerState> {
    let g = stacked_gradients(p, &state.x, mode, seed, state.k)?;
    let m = state.beta * &state.m + &g;
    let x_new = mix_multiply(&w.w, &state.x) - state.gamma * &m;
    Ok(OptimizerState {
        x: x_new,
        m,
        x_prev: None,
        k: state.k + 1,
        gamma: state.gamma,
        beta: state.beta,
    })
}

/// Dispatch on the x-domain algorithms. `DecentLaM-s` has its own state type
/// and is stepped through [`SDomainState::step`].
pub fn step(
    algo: Algorithm,
    state: &OptimizerState,
    p: &Problem,
    w: &WeightMatrix,
    mode: GradMode,
    seed: u64,
) -> Result<OptimizerState> {
    match algo {
        Algorithm::PmSgd => step_psgd_momentum(state, p, w, mode, seed),
        Algorithm::Dsgd => step_dsgd(state, p, w, mode, seed),
        Algorithm::DmSgd => step_dmsgd(state, p, w, mode, seed),
        Algorithm::DmSgdReformulated => step_dmsgd_reformulated(state, p, w, mode, seed),
        Algorithm::DecentLam => step_decentlam(state, p, w, mode, seed),
        Algorithm::DecentLamReformulated => step_decentlam_reformulated(state, p, w, mode, seed),
        Algorithm::DaDmSgd => step_da_dmsgd(state, p, w, mode, seed),
        Algorithm::AwcDmSgd => step_awc_dmsgd(state, p, w, mode, seed),
        Algorithm::DecentLamSDomain => panic!("DecentLaM-s steps through SDomainState"),
    }
}

/// State for DecentLaM expressed as plain momentum SGD in `s`, where
/// `x = W^{1/2} s`. Valid only for positive-definite `W`.
#[derive(Debug, Clone)]
pub struct SDomainState {
    pub s: Array2<f64>,
    pub m_s: Array2<f64>,
    /// Cached `W^{1/2}`.
    pub w_half: Array2<f64>,
    /// Cached `W` itself (for the penalty term `(1/gamma)(I - W) s`).
    pub w: Array2<f64>,
    pub k: u64,
    pub gamma: f64,
    pub beta: f64,
}

impl SDomainState {
    /// Starts from the x-domain iterate `x0`, setting `s0 = W^{-1/2} x0`.
    pub fn from_x0(
        x0: &Array2<f64>,
        w: &WeightMatrix,
        gamma: f64,
        beta: f64,
    ) -> Result<SDomainState> {
        assert!(gamma > 0.0, "gamma must be positive");
        assert!((0.0..1.0).contains(&beta), "beta must lie in [0, 1)");
        let w_half = matrix_sqrt(&w.w)?;
        let w_inv_half = matrix_inv_sqrt(&w.w)?;
        let s = mix_multiply(&w_inv_half, x0);
        let shape = (x0.nrows(), x0.ncols());
        Ok(SDomainState {
            s,
            m_s: Array2::zeros(shape),
            w_half,
            w: w.w.clone(),
            k: 0,
            gamma,
            beta,
        })
    }

    /// The x-domain iterate `W^{1/2} s`.
    pub fn x(&self) -> Array2<f64> {
        mix_multiply(&self.w_half, &self.s)
    }

    /// One iteration of momentum SGD on the penalized objective:
    /// `g_s = W^{1/2} grad F(W^{1/2} s) + (1/gamma)(I - W) s`,
    /// `m_s <- beta m_s + g_s`, `s <- s - gamma m_s`.
    pub fn step(&self, p: &Problem, mode: GradMode, seed: u64) -> Result<SDomainState> {
        let x = self.x();
        let g = stacked_gradients(p, &x, mode, seed, self.k)?;
        let grad_term = mix_multiply(&self.w_half, &g);
        let penalty = (1.0 / self.gamma) * &(&self.s - &mix_multiply(&self.w, &self.s));
        let g_s = grad_term + penalty;
        let m_s = self.beta * &self.m_s + &g_s;
        Ok(SDomainState {
            s: &self.s - &(self.gamma * &m_s),
            m_s,
            w_half: self.w_half.clone(),
            w: self.w.clone(),
            k: self.k + 1,
            gamma: self.gamma,
            beta: self.beta,
        })
    }
}

/// Step-size schedule `k -> gamma_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant { gamma0: f64 },
    /// `gamma0 / (1 + k / k0)`.
    InverseTime { gamma0: f64, k0: f64 },
    /// `gamma0 * factor^(k / period)` with integer division.
    StepDecay { gamma0: f64, factor: f64, period: u64 },
}

impl Schedule {
    pub fn constant(gamma0: f64) -> Result<Schedule> {
        if gamma0 <= 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "gamma0 must be positive, got {gamma0}"
            )));
        }
        Ok(Schedule::Constant { gamma0 })
    }

    pub fn inverse_time(gamma0: f64, k0: f64) -> Result<Schedule> {
        if gamma0 <= 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "gamma0 must be positive, got {gamma0}"
            )));
        }
        if !(k0 > 0.0) {
            return Err(Error::InvalidSchedule(format!(
                "inverse-time k0 must be positive, got {k0}"
            )));
        }
        Ok(Schedule::InverseTime { gamma0, k0 })
    }

    pub fn step_decay(gamma0: f64, factor: f64, period: u64) -> Result<Schedule> {
        if gamma0 <= 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "gamma0 must be positive, got {gamma0}"
            )));
        }
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "step-decay factor must lie in (0, 1), got {factor}"
            )));
        }
        if period == 0 {
            return Err(Error::InvalidSchedule("step-decay period must be at least 1".into()));
        }
        Ok(Schedule::StepDecay { gamma0, factor, period })
    }

    /// Step size at iteration `k`.
    pub fn at(&self, k: u64) -> f64 {
        match *self {
            Schedule::Constant { gamma0 } => gamma0,
            Schedule::InverseTime { gamma0, k0 } => gamma0 / (1.0 + k as f64 / k0),
            Schedule::StepDecay { gamma0, factor, period } => {
                gamma0 * factor.powi((k / period) as i32)
            }
        }
    }

    pub fn gamma0(&self) -> f64 {
        match *self {
            Schedule::Constant { gamma0 }
            | Schedule::InverseTime { gamma0, .. }
            | Schedule::StepDecay { gamma0, .. } => gamma0,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Schedule::Constant { .. })
    }
}
