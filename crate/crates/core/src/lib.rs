//! Deterministic simulator for decentralized momentum SGD.
//!
//! The crate implements a family of gossip-based first-order methods —
//! DSGD, DmSGD (and variants), and DecentLaM — on configurable network
//! topologies, together with the measurement tools needed to study their
//! *inconsistency bias*: the gap between each algorithm's limiting iterate
//! and the true minimizer that persists even with exact (full-batch)
//! gradients.
//!
//! Everything is deterministic: all randomness (data generation, gradient
//! noise, minibatch sampling, time-varying matchings) is derived from
//! counter-based streams keyed by `(seed, purpose, node, iteration)`, so
//! results are bit-identical across runs, call orders, and thread counts.
//!
//! Module map:
//!
//! * [`topology`] — graphs, Metropolis–Hastings weight matrices, spectral
//!   quantities, symmetric matrix square roots.
//! * [`problems`] — synthetic least-squares instances with controllable
//!   heterogeneity, plus full/stochastic gradient oracles.
//! * [`optimizers`] — one-iteration step functions for every algorithm and
//!   step-size schedules.
//! * [`analysis`] — trajectory metrics, limiting-bias estimation, log–log
//!   scaling fits, and advisory step-size bound checks.
//! * [`harness`] — experiment configs, the runner, parameter sweeps, and
//!   CSV emission.
//! * [`verify`] — self-contained property checks exposed through the CLI.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod optimizers;
pub mod problems;
pub mod rng;
pub mod topology;
pub mod verify;

pub use analysis::{
    estimate_limiting_bias, fit_bias_scaling, fixed_point_residual, metrics_snapshot,
    theorem_constant_check, BiasEstimate, ConditionCheck, MetricRecord, ScalingAxis, ScalingFit,
    TheoremReport, Trajectory,
};
pub use error::{Error, Result};
pub use harness::{
    bias_csv, emit_bias_csv, emit_trajectory_csv, parse_config, run_experiment, run_sweep,
    scaling_csv, serialize_config, trajectory_csv, AlgoSpec, ExperimentConfig, RunOutput,
    SweepSpec,
};
pub use optimizers::{step, Algorithm, OptimizerState, SDomainState, Schedule};
pub use problems::{generate_regression, heterogeneity_metrics, GradKind, GradMode, Problem};
pub use topology::{
    build_topology, matrix_sqrt, metropolis_weights, spectral_rho, validate_weight_matrix,
    Graph, Mixing, TopologyKind, WeightMatrix,
};
