//! Experiment configuration, the runner, parameter sweeps, and CSV output.
//!
//! Configs are flat sectioned `key = value` text ([`parse_config`] /
//! [`serialize_config`]): a `[problem]` section, a `[topology]` section, one
//! `[algo.NAME]` section per algorithm, and a `[run]` section. Full-line `#`
//! comments and blank lines are ignored. Parsing reports *every* violation,
//! not just the first.
//!
//! [`run_experiment`] produces one [`Trajectory`] per algorithm (plus
//! [`BiasEstimate`]s when `bias_mode` is on); [`run_sweep`] executes a
//! parameter grid. Both may run cells/algorithms on multiple threads, but
//! outputs are collected in deterministic order and all randomness is
//! counter-keyed, so results are byte-identical for any worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::analysis::{
    estimate_limiting_bias, metrics_snapshot, BiasEstimate, ScalingFit, Trajectory,
    DIVERGENCE_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::optimizers::{step, Algorithm, OptimizerState, SDomainState, Schedule};
use crate::problems::{generate_regression, GradKind, GradMode, Problem};
use crate::topology::{Mixing, TopologyKind};

/// Default relative displacement tolerance for bias-mode fixed points.
const DEFAULT_TOL: f64 = 1e-13;

/// One algorithm entry of a config.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoSpec {
    pub algo: Algorithm,
    pub schedule: Schedule,
    pub beta: f64,
    pub grad: GradKind,
    /// Noise divisor for additive noise; row count for minibatches.
    pub batch_size: usize,
}

impl AlgoSpec {
    /// Constant-step full-batch entry, the common case.
    pub fn constant(algo: Algorithm, gamma: f64, beta: f64) -> Result<AlgoSpec> {
        Ok(AlgoSpec {
            algo,
            schedule: Schedule::constant(gamma)?,
            beta,
            grad: GradKind::FullBatch,
            batch_size: 1,
        })
    }

    pub fn grad_mode(&self) -> GradMode {
        GradMode {
            kind: self.grad,
            batch_size: self.batch_size,
        }
    }

    /// One-line settings snapshot stored on trajectories.
    fn summary(&self) -> String {
        let mut s = format!(
            "algo={} beta={} grad={} batch_size={}",
            self.algo.label(),
            self.beta,
            grad_label(self.grad),
            self.batch_size
        );
        match self.schedule {
            Schedule::Constant { gamma0 } => {
                let _ = write!(s, " gamma={gamma0}");
            }
            Schedule::InverseTime { gamma0, k0 } => {
                let _ = write!(s, " gamma={gamma0} schedule=inverse-time k0={k0}");
            }
            Schedule::StepDecay {
                gamma0,
                factor,
                period,
            } => {
                let _ = write!(
                    s,
                    " gamma={gamma0} schedule=step-decay factor={factor} period={period}"
                );
            }
        }
        s
    }
}

/// A fully specified experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // [problem]
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub hetero: f64,
    pub noise_mag: f64,
    pub sigma_sq: f64,
    pub seed: u64,
    // [topology]
    pub topology: TopologyKind,
    pub topology_seed: u64,
    // [algo.NAME] sections, in file order
    pub algos: Vec<AlgoSpec>,
    // [run]
    pub max_iters: u64,
    pub metric_every: u64,
    pub bias_mode: bool,
    pub fixed_point_tol: f64,
    pub out: Option<String>,
}

/// Everything produced by one [`run_experiment`] call.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectories: Vec<Trajectory>,
    /// One per algorithm when `bias_mode` is set, otherwise empty.
    pub biases: Vec<BiasEstimate>,
}

fn grad_label(g: GradKind) -> &'static str {
    match g {
        GradKind::FullBatch => "full",
        GradKind::AdditiveNoise => "additive",
        GradKind::Minibatch => "minibatch",
    }
}

fn parse_grad(s: &str) -> std::result::Result<GradKind, String> {
    match s {
        "full" => Ok(GradKind::FullBatch),
        "additive" => Ok(GradKind::AdditiveNoise),
        "minibatch" => Ok(GradKind::Minibatch),
        other => Err(format!(
            "unknown gradient mode {other:?} (expected full, additive, or minibatch)"
        )),
    }
}

/// Raw key/value with its source line, before typing.
#[derive(Debug, Clone)]
struct RawValue {
    value: String,
    line: usize,
}

#[derive(Debug, Default)]
struct RawSection {
    entries: BTreeMap<String, RawValue>,
    order: Vec<String>,
}

impl RawSection {
    fn insert(&mut self, key: &str, value: &str, line: usize, issues: &mut Vec<String>) {
        if self.entries.contains_key(key) {
            issues.push(format!("line {line}: duplicate key {key:?}"));
            return;
        }
        self.entries.insert(
            key.to_string(),
            RawValue {
                value: value.to_string(),
                line,
            },
        );
        self.order.push(key.to_string());
    }

    fn take<T: FromStr>(&mut self, key: &str, issues: &mut Vec<String>) -> Option<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.entries.remove(key)?;
        match raw.value.parse::<T>() {
            Ok(v) => Some(v),
            Err(e) => {
                issues.push(format!(
                    "line {}: bad value {:?} for {}: {}",
                    raw.line, raw.value, key, e
                ));
                None
            }
        }
    }

    fn take_string(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|r| r.value)
    }

    /// Flags everything not consumed by a `take_*` call.
    fn reject_leftovers(&self, section: &str, issues: &mut Vec<String>) {
        for key in &self.order {
            if let Some(raw) = self.entries.get(key) {
                issues.push(format!(
                    "line {}: unknown key {:?} in [{}]",
                    raw.line, key, section
                ));
            }
        }
    }
}

/// Parses and validates a config document, reporting every violation.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut issues: Vec<String> = Vec::new();

    let mut problem = RawSection::default();
    let mut topology = RawSection::default();
    let mut run = RawSection::default();
    // (section header line, algorithm name, entries)
    let mut algos_raw: Vec<(usize, String, RawSection)> = Vec::new();

    #[derive(Clone, Copy, PartialEq)]
    enum Section {
        None,
        Problem,
        Topology,
        Run,
        Algo(usize),
        Unknown,
    }
    let mut current = Section::None;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                issues.push(format!("line {line_no}: unterminated section header {line:?}"));
                current = Section::Unknown;
                continue;
            };
            current = match name {
                "problem" => Section::Problem,
                "topology" => Section::Topology,
                "run" => Section::Run,
                _ => {
                    if let Some(algo_name) = name.strip_prefix("algo.") {
                        for (_, existing, _) in &algos_raw {
                            if existing.eq_ignore_ascii_case(algo_name) {
                                issues.push(format!(
                                    "line {line_no}: duplicate section [algo.{algo_name}]"
                                ));
                            }
                        }
                        algos_raw.push((line_no, algo_name.to_string(), RawSection::default()));
                        Section::Algo(algos_raw.len() - 1)
                    } else {
                        issues.push(format!("line {line_no}: unknown section [{name}]"));
                        Section::Unknown
                    }
                }
            };
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            issues.push(format!("line {line_no}: expected `key = value`, got {line:?}"));
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        match current {
            Section::None => {
                issues.push(format!("line {line_no}: key {key:?} appears before any section"));
            }
            Section::Unknown => {} // already reported the section itself
            Section::Problem => problem.insert(key, value, line_no, &mut issues),
            Section::Topology => topology.insert(key, value, line_no, &mut issues),
            Section::Run => run.insert(key, value, line_no, &mut issues),
            Section::Algo(i) => algos_raw[i].2.insert(key, value, line_no, &mut issues),
        }
    }

    // [problem]
    let n = problem.take::<usize>("n", &mut issues);
    let d = problem.take::<usize>("d", &mut issues);
    let m = problem.take::<usize>("m", &mut issues);
    let hetero = problem.take::<f64>("hetero", &mut issues);
    let noise_mag = problem.take::<f64>("noise_mag", &mut issues).unwrap_or(0.0);
    let sigma_sq = problem.take::<f64>("sigma_sq", &mut issues).unwrap_or(0.0);
    let seed = problem.take::<u64>("seed", &mut issues);
    problem.reject_leftovers("problem", &mut issues);
    for (name, val) in [("n", n), ("d", d), ("m", m)] {
        if val.is_none() && !issues.iter().any(|i| i.contains(&format!("for {name}:"))) {
            issues.push(format!("problem.{name} is required"));
        }
    }
    if hetero.is_none() && !issues.iter().any(|i| i.contains("for hetero:")) {
        issues.push("problem.hetero is required".to_string());
    }
    if seed.is_none() && !issues.iter().any(|i| i.contains("for seed:")) {
        issues.push("problem.seed is required".to_string());
    }

    // [topology]
    let kind = match topology.take_string("kind") {
        Some(raw) => match raw.parse::<TopologyKind>() {
            Ok(k) => Some(k),
            Err(e) => {
                issues.push(format!("topology.kind: {e}"));
                None
            }
        },
        None => {
            issues.push("topology.kind is required".to_string());
            None
        }
    };
    let topology_seed = topology.take::<u64>("seed", &mut issues).unwrap_or(0);
    topology.reject_leftovers("topology", &mut issues);

    // [algo.*]
    let mut algos: Vec<AlgoSpec> = Vec::new();
    if algos_raw.is_empty() {
        issues.push("at least one [algo.NAME] section is required".to_string());
    }
    for (header_line, name, mut section) in algos_raw {
        let algo = match name.parse::<Algorithm>() {
            Ok(a) => Some(a),
            Err(e) => {
                issues.push(format!("line {header_line}: {e}"));
                None
            }
        };
        let gamma = section.take::<f64>("gamma", &mut issues);
        let beta = section.take::<f64>("beta", &mut issues).unwrap_or(0.0);
        let grad = match section.take_string("grad") {
            Some(raw) => match parse_grad(&raw) {
                Ok(g) => g,
                Err(e) => {
                    issues.push(format!("[algo.{name}]: {e}"));
                    GradKind::FullBatch
                }
            },
            None => GradKind::FullBatch,
        };
        let batch_size = section.take::<usize>("batch_size", &mut issues).unwrap_or(1);
        let schedule_kind = section
            .take_string("schedule")
            .unwrap_or_else(|| "constant".to_string());
        let k0 = section.take::<f64>("k0", &mut issues);
        let factor = section.take::<f64>("factor", &mut issues);
        let period = section.take::<u64>("period", &mut issues);
        section.reject_leftovers(&format!("algo.{name}"), &mut issues);

        let gamma = match gamma {
            Some(g) => g,
            None => {
                if !issues.iter().any(|i| i.contains("for gamma:")) {
                    issues.push(format!("[algo.{name}]: gamma is required"));
                }
                continue;
            }
        };
        // Shapes only; value ranges are checked by `validate_config` so all
        // semantic violations are reported in one pass.
        let schedule = match schedule_kind.as_str() {
            "constant" => {
                for (key, present) in
                    [("k0", k0.is_some()), ("factor", factor.is_some()), ("period", period.is_some())]
                {
                    if present {
                        issues.push(format!(
                            "[algo.{name}]: {key} does not apply to the constant schedule"
                        ));
                    }
                }
                Schedule::Constant { gamma0: gamma }
            }
            "inverse-time" => {
                for (key, present) in [("factor", factor.is_some()), ("period", period.is_some())] {
                    if present {
                        issues.push(format!(
                            "[algo.{name}]: {key} does not apply to the inverse-time schedule"
                        ));
                    }
                }
                match k0 {
                    Some(k0) => Schedule::InverseTime { gamma0: gamma, k0 },
                    None => {
                        issues.push(format!(
                            "[algo.{name}]: the inverse-time schedule requires k0"
                        ));
                        continue;
                    }
                }
            }
            "step-decay" => {
                if k0.is_some() {
                    issues.push(format!(
                        "[algo.{name}]: k0 does not apply to the step-decay schedule"
                    ));
                }
                match (factor, period) {
                    (Some(factor), Some(period)) => Schedule::StepDecay {
                        gamma0: gamma,
                        factor,
                        period,
                    },
                    _ => {
                        issues.push(format!(
                            "[algo.{name}]: the step-decay schedule requires factor and period"
                        ));
                        continue;
                    }
                }
            }
            other => {
                issues.push(format!(
                    "[algo.{name}]: unknown schedule {other:?} (expected constant, inverse-time, or step-decay)"
                ));
                continue;
            }
        };
        if let Some(algo) = algo {
            algos.push(AlgoSpec {
                algo,
                schedule,
                beta,
                grad,
                batch_size,
            });
        }
    }

    // [run]
    let max_iters = run.take::<u64>("max_iters", &mut issues);
    let metric_every = run.take::<u64>("metric_every", &mut issues).unwrap_or(1);
    let bias_mode = run.take::<bool>("bias_mode", &mut issues).unwrap_or(false);
    let fixed_point_tol = run
        .take::<f64>("fixed_point_tol", &mut issues)
        .unwrap_or(DEFAULT_TOL);
    let out = run.take_string("out");
    run.reject_leftovers("run", &mut issues);
    if max_iters.is_none() && !issues.iter().any(|i| i.contains("for max_iters:")) {
        issues.push("run.max_iters is required".to_string());
    }

    let cfg = ExperimentConfig {
        n: n.unwrap_or(2),
        d: d.unwrap_or(1),
        m: m.unwrap_or(1),
        hetero: hetero.unwrap_or(0.0),
        noise_mag,
        sigma_sq,
        seed: seed.unwrap_or(0),
        topology: kind.unwrap_or(TopologyKind::Ring),
        topology_seed,
        algos,
        max_iters: max_iters.unwrap_or(0),
        metric_every,
        bias_mode,
        fixed_point_tol,
        out,
    };
    // Semantic checks only make sense on fields that parsed; when the
    // structure itself is broken the issues above already fail the parse.
    if issues.is_empty() {
        issues.extend(validate_config(&cfg));
    }
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::config(issues))
    }
}

/// Semantic validation shared by [`parse_config`] and sweep cells. Returns
/// one message per violation; empty means valid.
pub fn validate_config(cfg: &ExperimentConfig) -> Vec<String> {
    let mut issues = Vec::new();
    let min = cfg.topology.min_nodes();
    if cfg.n < min {
        issues.push(format!(
            "problem.n = {} is below the minimum {} for topology {}",
            cfg.n, min, cfg.topology
        ));
    }
    if cfg.d == 0 {
        issues.push("problem.d must be >= 1".to_string());
    }
    if cfg.m == 0 {
        issues.push("problem.m must be >= 1".to_string());
    }
    if !(cfg.hetero >= 0.0 && cfg.hetero.is_finite()) {
        issues.push(format!("problem.hetero must be finite and >= 0, got {}", cfg.hetero));
    }
    if !(cfg.noise_mag >= 0.0 && cfg.noise_mag.is_finite()) {
        issues.push(format!(
            "problem.noise_mag must be finite and >= 0, got {}",
            cfg.noise_mag
        ));
    }
    if !(cfg.sigma_sq >= 0.0 && cfg.sigma_sq.is_finite()) {
        issues.push(format!(
            "problem.sigma_sq must be finite and >= 0, got {}",
            cfg.sigma_sq
        ));
    }
    if cfg.metric_every == 0 {
        issues.push("run.metric_every must be >= 1".to_string());
    }
    if !(cfg.fixed_point_tol > 0.0 && cfg.fixed_point_tol.is_finite()) {
        issues.push(format!(
            "run.fixed_point_tol must be finite and positive, got {}",
            cfg.fixed_point_tol
        ));
    }
    if cfg.bias_mode && cfg.topology.is_time_varying() {
        issues.push(
            "bias_mode requires a static topology; time-varying matchings have no fixed point"
                .to_string(),
        );
    }
    for spec in &cfg.algos {
        let name = spec.algo.label();
        if spec.beta >= 1.0 {
            issues.push(format!("[algo.{name}]: beta must be < 1, got {}", spec.beta));
        } else if !(spec.beta >= 0.0) {
            issues.push(format!("[algo.{name}]: beta must be >= 0, got {}", spec.beta));
        }
        let gamma = spec.schedule.gamma0();
        if !(gamma > 0.0 && gamma.is_finite()) {
            issues.push(format!("[algo.{name}]: gamma must be finite and positive, got {gamma}"));
        }
        match spec.schedule {
            Schedule::Constant { .. } => {}
            Schedule::InverseTime { k0, .. } => {
                if !(k0 > 0.0 && k0.is_finite()) {
                    issues.push(format!("[algo.{name}]: k0 must be finite and positive, got {k0}"));
                }
            }
            Schedule::StepDecay { factor, period, .. } => {
                if !(factor > 0.0 && factor < 1.0) {
                    issues.push(format!(
                        "[algo.{name}]: factor must lie in (0, 1), got {factor}"
                    ));
                }
                if period == 0 {
                    issues.push(format!("[algo.{name}]: period must be >= 1"));
                }
            }
        }
        if spec.batch_size == 0 {
            issues.push(format!("[algo.{name}]: batch_size must be >= 1"));
        } else if spec.grad == GradKind::Minibatch && spec.batch_size > cfg.m {
            issues.push(format!(
                "[algo.{name}]: batch_size {} exceeds the {} rows per node",
                spec.batch_size, cfg.m
            ));
        }
        if spec.algo.is_s_domain() {
            if cfg.topology.is_time_varying() {
                issues.push(format!(
                    "[algo.{name}]: the s-domain variant requires a static topology"
                ));
            }
            if !spec.schedule.is_constant() {
                issues.push(format!(
                    "[algo.{name}]: the s-domain variant supports only the constant schedule"
                ));
            }
        }
    }
    issues
}

/// Canonical text form; `parse_config(serialize_config(cfg))` reproduces
/// `cfg` exactly for any valid config.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[problem]");
    let _ = writeln!(s, "n = {}", cfg.n);
    let _ = writeln!(s, "d = {}", cfg.d);
    let _ = writeln!(s, "m = {}", cfg.m);
    let _ = writeln!(s, "hetero = {}", cfg.hetero);
    let _ = writeln!(s, "noise_mag = {}", cfg.noise_mag);
    let _ = writeln!(s, "sigma_sq = {}", cfg.sigma_sq);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "\n[topology]");
    let _ = writeln!(s, "kind = {}", cfg.topology);
    let _ = writeln!(s, "seed = {}", cfg.topology_seed);
    for spec in &cfg.algos {
        let _ = writeln!(s, "\n[algo.{}]", spec.algo.label());
        match spec.schedule {
            Schedule::Constant { gamma0 } => {
                let _ = writeln!(s, "gamma = {gamma0}");
            }
            Schedule::InverseTime { gamma0, k0 } => {
                let _ = writeln!(s, "gamma = {gamma0}");
                let _ = writeln!(s, "schedule = inverse-time");
                let _ = writeln!(s, "k0 = {k0}");
            }
            Schedule::StepDecay {
                gamma0,
                factor,
                period,
            } => {
                let _ = writeln!(s, "gamma = {gamma0}");
                let _ = writeln!(s, "schedule = step-decay");
                let _ = writeln!(s, "factor = {factor}");
                let _ = writeln!(s, "period = {period}");
            }
        }
        let _ = writeln!(s, "beta = {}", spec.beta);
        let _ = writeln!(s, "grad = {}", grad_label(spec.grad));
        let _ = writeln!(s, "batch_size = {}", spec.batch_size);
    }
    let _ = writeln!(s, "\n[run]");
    let _ = writeln!(s, "max_iters = {}", cfg.max_iters);
    let _ = writeln!(s, "metric_every = {}", cfg.metric_every);
    let _ = writeln!(s, "bias_mode = {}", cfg.bias_mode);
    let _ = writeln!(s, "fixed_point_tol = {}", cfg.fixed_point_tol);
    if let Some(out) = &cfg.out {
        let _ = writeln!(s, "out = {out}");
    }
    s
}

/// Builds the synthetic problem a config describes.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let mut p = generate_regression(cfg.n, cfg.d, cfg.m, cfg.hetero, cfg.noise_mag, cfg.seed)?;
    p.sigma_sq = cfg.sigma_sq;
    Ok(p)
}

/// Runs one algorithm's trajectory: all-zero start, metrics at `k = 0`,
/// every `metric_every`-th iteration, and the final iteration.
fn run_single(
    spec: &AlgoSpec,
    p: &Problem,
    mixing: &Mixing,
    cfg: &ExperimentConfig,
) -> Result<Trajectory> {
    let mode = spec.grad_mode();
    let mut records = Vec::new();
    let mut push = |x: &ndarray::Array2<f64>, k: u64| {
        let mut rec = metrics_snapshot(x, p);
        rec.k = k;
        records.push(rec);
    };
    let zeros = ndarray::Array2::<f64>::zeros((p.n, p.d));
    push(&zeros, 0);

    let check = |rel: f64, k: u64| -> Result<()> {
        if !rel.is_finite() || rel > DIVERGENCE_THRESHOLD {
            return Err(Error::Divergence {
                iter: k,
                value: rel,
                threshold: DIVERGENCE_THRESHOLD,
            });
        }
        Ok(())
    };

    // Cheap per-iteration divergence probe; full metrics only at samples.
    let rel_err = |x: &ndarray::Array2<f64>| -> f64 {
        let star_sq = p.x_star.dot(&p.x_star);
        let mut rel = 0.0;
        for i in 0..p.n {
            for c in 0..p.d {
                let dv = x[[i, c]] - p.x_star[c];
                rel += dv * dv;
            }
        }
        rel / (p.n as f64 * star_sq)
    };

    if spec.algo.is_s_domain() {
        let Mixing::Static(wm) = mixing else {
            unreachable!("validated: s-domain runs use static topologies");
        };
        let mut st = SDomainState::from_x0(&zeros, wm, spec.schedule.gamma0(), spec.beta)?;
        for k in 1..=cfg.max_iters {
            st = st.step(p, mode, cfg.seed)?;
            let x = st.x();
            check(rel_err(&x), k)?;
            if k % cfg.metric_every == 0 || k == cfg.max_iters {
                push(&x, k);
            }
        }
    } else {
        let mut st = OptimizerState::zeros(p.n, p.d, spec.schedule.at(0), spec.beta);
        for k in 1..=cfg.max_iters {
            st.gamma = spec.schedule.at(k - 1);
            let w = mixing.at(k - 1);
            st = step(spec.algo, &st, p, &w, mode, cfg.seed)?;
            check(rel_err(&st.x), k)?;
            if k % cfg.metric_every == 0 || k == cfg.max_iters {
                push(&st.x, k);
            }
        }
    }

    Ok(Trajectory {
        algo: spec.algo.label().to_string(),
        records,
        config: format!(
            "{} topology={} n={} seed={}",
            spec.summary(),
            cfg.topology,
            cfg.n,
            cfg.seed
        ),
    })
}

/// Runs every algorithm in the config. Algorithms execute in parallel but
/// results are collected in config order; outputs are byte-identical for
/// any worker count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let issues = validate_config(cfg);
    if !issues.is_empty() {
        return Err(Error::config(issues));
    }
    let p = build_problem(cfg)?;
    let mixing = Mixing::new(cfg.topology, cfg.n, cfg.topology_seed)?;

    let results: Result<Vec<(Trajectory, Option<BiasEstimate>)>> = cfg
        .algos
        .par_iter()
        .map(|spec| {
            let traj = run_single(spec, &p, &mixing, cfg)?;
            let bias = if cfg.bias_mode {
                let Mixing::Static(wm) = &mixing else {
                    unreachable!("validated: bias_mode requires a static topology");
                };
                Some(estimate_limiting_bias(
                    spec.algo,
                    &p,
                    wm,
                    spec.schedule.gamma0(),
                    spec.beta,
                    cfg.max_iters,
                    cfg.fixed_point_tol,
                )?)
            } else {
                None
            };
            Ok((traj, bias))
        })
        .collect();

    let mut trajectories = Vec::with_capacity(cfg.algos.len());
    let mut biases = Vec::new();
    for (traj, bias) in results? {
        trajectories.push(traj);
        biases.extend(bias);
    }
    Ok(RunOutput {
        trajectories,
        biases,
    })
}

/// A parameter grid over a base config.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    /// `(parameter path, values)`; values are parsed per-field. Paths:
    /// `problem.*`, `topology.*`, `run.*`, `algo.NAME.*`, or `algo.*.*`
    /// to hit every algorithm.
    pub axes: Vec<(String, Vec<String>)>,
    /// Cross product when true; zipped (all axes equal length) when false.
    pub cross_product: bool,
}

/// Sets one scalar field addressed by `path`.
fn apply_path(cfg: &mut ExperimentConfig, path: &str, value: &str) -> std::result::Result<(), String> {
    fn parse<T: FromStr>(path: &str, value: &str) -> std::result::Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        value
            .parse::<T>()
            .map_err(|e| format!("{path}: bad value {value:?}: {e}"))
    }

    let parts: Vec<&str> = path.split('.').collect();
    match parts.as_slice() {
        ["problem", key] => match *key {
            "n" => cfg.n = parse(path, value)?,
            "d" => cfg.d = parse(path, value)?,
            "m" => cfg.m = parse(path, value)?,
            "hetero" => cfg.hetero = parse(path, value)?,
            "noise_mag" => cfg.noise_mag = parse(path, value)?,
            "sigma_sq" => cfg.sigma_sq = parse(path, value)?,
            "seed" => cfg.seed = parse(path, value)?,
            _ => return Err(format!("unknown sweep path {path:?}")),
        },
        ["topology", key] => match *key {
            "kind" => cfg.topology = parse(path, value)?,
            "seed" => cfg.topology_seed = parse(path, value)?,
            _ => return Err(format!("unknown sweep path {path:?}")),
        },
        ["run", key] => match *key {
            "max_iters" => cfg.max_iters = parse(path, value)?,
            "metric_every" => cfg.metric_every = parse(path, value)?,
            "fixed_point_tol" => cfg.fixed_point_tol = parse(path, value)?,
            _ => return Err(format!("unknown sweep path {path:?}")),
        },
        ["algo", name, key] => {
            let mut touched = false;
            for spec in cfg.algos.iter_mut() {
                if *name != "*" && !spec.algo.label().eq_ignore_ascii_case(name) {
                    continue;
                }
                touched = true;
                match *key {
                    "gamma" => {
                        let g: f64 = parse(path, value)?;
                        spec.schedule = match spec.schedule {
                            Schedule::Constant { .. } => Schedule::Constant { gamma0: g },
                            Schedule::InverseTime { k0, .. } => {
                                Schedule::InverseTime { gamma0: g, k0 }
                            }
                            Schedule::StepDecay { factor, period, .. } => Schedule::StepDecay {
                                gamma0: g,
                                factor,
                                period,
                            },
                        };
                    }
                    "beta" => spec.beta = parse(path, value)?,
                    "batch_size" => spec.batch_size = parse(path, value)?,
                    "grad" => spec.grad = parse_grad(value).map_err(|e| format!("{path}: {e}"))?,
                    _ => return Err(format!("unknown sweep path {path:?}")),
                }
            }
            if !touched {
                return Err(format!("{path}: no algorithm section matches {name:?}"));
            }
        }
        _ => return Err(format!("unknown sweep path {path:?}")),
    }
    Ok(())
}

/// Expands the grid in deterministic order: the first axis is outermost.
fn grid_cells(spec: &SweepSpec) -> Result<Vec<ExperimentConfig>> {
    let mut issues = Vec::new();
    for (path, values) in &spec.axes {
        if values.is_empty() {
            issues.push(format!("axis {path:?} has no values"));
            continue;
        }
        // Resolve the path and parse every value once, against a scratch
        // copy, so bad axes fail the whole sweep up front.
        let mut scratch = spec.base.clone();
        for value in values {
            if let Err(e) = apply_path(&mut scratch, path, value) {
                issues.push(e);
            }
        }
    }
    if !spec.cross_product {
        let lens: Vec<usize> = spec.axes.iter().map(|(_, v)| v.len()).collect();
        if lens.windows(2).any(|w| w[0] != w[1]) {
            issues.push(format!("zipped sweep axes must share one length, got {lens:?}"));
        }
    }
    if !issues.is_empty() {
        return Err(Error::config(issues));
    }

    if spec.axes.is_empty() {
        return Ok(vec![spec.base.clone()]);
    }
    let mut cells = Vec::new();
    if spec.cross_product {
        let total: usize = spec.axes.iter().map(|(_, v)| v.len()).product();
        for mut idx in 0..total {
            let mut cfg = spec.base.clone();
            // Mixed-radix decomposition, last axis fastest.
            for (path, values) in spec.axes.iter().rev() {
                let v = &values[idx % values.len()];
                idx /= values.len();
                apply_path(&mut cfg, path, v).expect("axes validated above");
            }
            cells.push(cfg);
        }
    } else {
        let len = spec.axes[0].1.len();
        for i in 0..len {
            let mut cfg = spec.base.clone();
            for (path, values) in &spec.axes {
                apply_path(&mut cfg, path, &values[i]).expect("axes validated above");
            }
            cells.push(cfg);
        }
    }
    Ok(cells)
}

/// Placeholder rows for a cell that failed before (or during) estimation.
fn error_rows(cell: &ExperimentConfig, rho: f64, b_sq: f64) -> Vec<BiasEstimate> {
    cell.algos
        .iter()
        .map(|spec| BiasEstimate {
            algo: spec.algo.label().to_string(),
            gamma: spec.schedule.gamma0(),
            beta: spec.beta,
            rho,
            b_sq,
            limiting_bias: f64::NAN,
            fixed_point_residual: f64::NAN,
            converged: false,
        })
        .collect()
}

/// Executes the grid, one limiting-bias row per `(cell, algorithm)`.
/// Cells run in parallel; rows keep deterministic grid order. A cell that
/// fails (bad derived config, divergence) contributes `converged = false`
/// rows with NaN biases instead of aborting its siblings.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<BiasEstimate>> {
    let cells = grid_cells(spec)?;
    let per_cell: Vec<Vec<BiasEstimate>> = cells
        .par_iter()
        .map(|cell| {
            if !validate_config(cell).is_empty() || cell.topology.is_time_varying() {
                return error_rows(cell, f64::NAN, f64::NAN);
            }
            let Ok(p) = build_problem(cell) else {
                return error_rows(cell, f64::NAN, f64::NAN);
            };
            let Ok(mixing) = Mixing::new(cell.topology, cell.n, cell.topology_seed) else {
                return error_rows(cell, f64::NAN, p.b_sq);
            };
            let Mixing::Static(wm) = &mixing else {
                return error_rows(cell, f64::NAN, p.b_sq);
            };
            cell.algos
                .iter()
                .map(|a| {
                    estimate_limiting_bias(
                        a.algo,
                        &p,
                        wm,
                        a.schedule.gamma0(),
                        a.beta,
                        cell.max_iters,
                        cell.fixed_point_tol,
                    )
                    .unwrap_or_else(|_| BiasEstimate {
                        algo: a.algo.label().to_string(),
                        gamma: a.schedule.gamma0(),
                        beta: a.beta,
                        rho: wm.rho,
                        b_sq: p.b_sq,
                        limiting_bias: f64::NAN,
                        fixed_point_residual: f64::NAN,
                        converged: false,
                    })
                })
                .collect()
        })
        .collect();
    Ok(per_cell.into_iter().flatten().collect())
}

/// Renders trajectories as CSV text with LF line endings.
pub fn trajectory_csv(trajectories: &[Trajectory]) -> String {
    let mut s = String::from("algo,iter,relative_error,consensus_error,loss,grad_norm_sq\n");
    for t in trajectories {
        for r in &t.records {
            // `{:?}` is the shortest decimal that round-trips, switching to
            // exponent form for extreme magnitudes; `{}` would render 1e-300
            // as three hundred positional digits.
            let _ = writeln!(
                s,
                "{},{},{:?},{:?},{:?},{:?}",
                t.algo, r.k, r.relative_error, r.consensus_error, r.loss, r.grad_norm_sq
            );
        }
    }
    s
}

/// Renders bias estimates as CSV text with LF line endings.
pub fn bias_csv(estimates: &[BiasEstimate]) -> String {
    let mut s = String::from("algo,gamma,beta,rho,b_sq,limiting_bias,residual,converged\n");
    for e in estimates {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            e.algo,
            e.gamma,
            e.beta,
            e.rho,
            e.b_sq,
            e.limiting_bias,
            e.fixed_point_residual,
            e.converged
        );
    }
    s
}

/// Renders a scaling fit as CSV text: one row per fitted point, with the
/// shared slope and goodness-of-fit repeated so every row is self-contained.
pub fn scaling_csv(fit: &ScalingFit) -> String {
    let mut s = String::from("axis,abscissa,limiting_bias,slope,r_sq\n");
    for &(a, b) in &fit.points {
        let _ = writeln!(s, "{},{:?},{:?},{:?},{:?}", fit.axis.label(), a, b, fit.slope, fit.r_sq);
    }
    s
}

pub fn emit_trajectory_csv(trajectories: &[Trajectory], path: &Path) -> Result<()> {
    std::fs::write(path, trajectory_csv(trajectories))?;
    Ok(())
}

pub fn emit_bias_csv(estimates: &[BiasEstimate], path: &Path) -> Result<()> {
    std::fs::write(path, bias_csv(estimates))?;
    Ok(())
}
