//! End-to-end acceptance suite: one test per advertised guarantee, each
//! printing a PASS line with the measured values (visible with
//! `cargo test --test acceptance -- --nocapture`).
//!
//! All runs are deterministic, so every threshold below is checked against
//! values that cannot drift between invocations.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use decentlam::{
    build_topology, estimate_limiting_bias, fit_bias_scaling, generate_regression,
    metropolis_weights, metrics_snapshot, parse_config, run_experiment, step,
    validate_weight_matrix, Algorithm, AlgoSpec, ExperimentConfig, GradKind, GradMode, Graph,
    OptimizerState, SDomainState, ScalingAxis, Schedule, TopologyKind, Trajectory, WeightMatrix,
};
use ndarray::{Array1, Array2};

fn config_path(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn load_config(name: &str) -> ExperimentConfig {
    let text = std::fs::read_to_string(config_path(name)).expect("shipped config must exist");
    parse_config(&text).expect("shipped config must parse")
}

/// The 8-node mesh least-squares instance used by the shipped configs.
fn mesh_instance() -> (decentlam::Problem, WeightMatrix) {
    let p = generate_regression(8, 30, 50, 0.01, 0.01, 42).unwrap();
    let g = build_topology(TopologyKind::Mesh, 8, 0, 0).unwrap();
    (p, metropolis_weights(&g).unwrap())
}

/// First recorded iteration whose relative error is at or below `thresh`.
fn crossing(t: &Trajectory, thresh: f64) -> Option<u64> {
    t.records.iter().find(|r| r.relative_error <= thresh).map(|r| r.k)
}

fn trajectory_of<'a>(out: &'a decentlam::RunOutput, algo: &str) -> &'a Trajectory {
    out.trajectories.iter().find(|t| t.algo == algo).unwrap()
}

fn bias_of(out: &decentlam::RunOutput, algo: &str) -> f64 {
    let e = out.biases.iter().find(|b| b.algo == algo).unwrap();
    assert!(e.converged, "{algo} bias estimate must converge");
    e.limiting_bias
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

#[test]
fn c01_momentum_inflates_the_limit_but_speeds_up_convergence() {
    let start = Instant::now();
    let mut cfg = load_config("fig2.cfg");
    cfg.metric_every = 1; // sharp crossing iterations
    let out = run_experiment(&cfg).unwrap();

    let dsgd_limit = bias_of(&out, "DSGD");
    let dmsgd_limit = bias_of(&out, "DmSGD");
    assert!(
        dmsgd_limit >= 2.0 * dsgd_limit,
        "momentum must inflate the limiting error at least 2x: DmSGD {dmsgd_limit:e} vs DSGD {dsgd_limit:e}"
    );

    let thresh = 10.0 * dsgd_limit;
    let k_dsgd = crossing(trajectory_of(&out, "DSGD"), thresh).unwrap();
    let k_dmsgd = crossing(trajectory_of(&out, "DmSGD"), thresh).unwrap();
    assert!(
        k_dmsgd < k_dsgd,
        "momentum must reach 10x the plain-gossip limit first: DmSGD at {k_dmsgd}, DSGD at {k_dsgd}"
    );
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 30.0, "budget exceeded: {secs:.1}s");
    println!(
        "PASS c01: DmSGD limit {dmsgd_limit:.3e} = {:.2}x DSGD {dsgd_limit:.3e}; \
         10x-limit crossings DmSGD {k_dmsgd} < DSGD {k_dsgd} ({secs:.1}s)",
        dmsgd_limit / dsgd_limit
    );
}

#[test]
fn c02_bias_corrected_momentum_keeps_the_plain_limit_and_the_speed() {
    let start = Instant::now();
    let mut cfg = load_config("fig3.cfg");
    cfg.metric_every = 1;
    let out = run_experiment(&cfg).unwrap();

    let dsgd_limit = bias_of(&out, "DSGD");
    let dl_limit = bias_of(&out, "DecentLaM");
    let rel_gap = (dl_limit - dsgd_limit).abs() / dsgd_limit;
    assert!(
        rel_gap <= 1e-6,
        "corrected momentum must share the plain-gossip limit: gap {rel_gap:e}"
    );

    let thresh = 2.0 * dsgd_limit;
    let k_dsgd = crossing(trajectory_of(&out, "DSGD"), thresh).unwrap();
    let k_dl = crossing(trajectory_of(&out, "DecentLaM"), thresh).unwrap();
    assert!(
        k_dl < k_dsgd,
        "corrected momentum must reach 2x the limit strictly first: DecentLaM {k_dl}, DSGD {k_dsgd}"
    );
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 30.0, "budget exceeded: {secs:.1}s");
    println!(
        "PASS c02: limits agree to {rel_gap:.1e} rel; 2x-limit crossings DecentLaM {k_dl} < DSGD {k_dsgd} ({secs:.1}s)"
    );
}

#[test]
fn c03_converged_iterates_satisfy_their_fixed_point_equations() {
    let start = Instant::now();
    let (p, w) = mesh_instance();
    let gamma = 0.001;
    let mut worst: f64 = 0.0;

    let est = estimate_limiting_bias(Algorithm::Dsgd, &p, &w, gamma, 0.0, 1_000_000, 1e-13).unwrap();
    assert!(est.converged);
    worst = worst.max(est.fixed_point_residual);
    for beta in [0.5, 0.8, 0.9] {
        for algo in [Algorithm::DmSgd, Algorithm::DecentLam] {
            let est = estimate_limiting_bias(algo, &p, &w, gamma, beta, 1_000_000, 1e-13).unwrap();
            assert!(est.converged, "{algo:?} at beta={beta} must converge");
            assert!(
                est.fixed_point_residual < 1e-8,
                "{algo:?} at beta={beta}: scaled residual {:e} >= 1e-8",
                est.fixed_point_residual
            );
            worst = worst.max(est.fixed_point_residual);
        }
    }
    assert!(worst < 1e-8);
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "budget exceeded: {secs:.1}s");
    println!("PASS c03: worst scaled fixed-point residual {worst:.2e} over betas 0.5/0.8/0.9 ({secs:.1}s)");
}

#[test]
fn c04_momentum_bias_grows_quadratically_in_one_over_one_minus_beta() {
    let start = Instant::now();
    let (p, w) = mesh_instance();
    let gamma = 0.002 / p.l_smooth;
    let ests: Vec<_> = [0.0, 0.5, 0.8, 0.9]
        .iter()
        .map(|&beta| {
            estimate_limiting_bias(Algorithm::DmSgd, &p, &w, gamma, beta, 2_000_000, 1e-13).unwrap()
        })
        .collect();
    let fit = fit_bias_scaling(&ests, ScalingAxis::OneOverOneMinusBeta).unwrap();
    assert!(
        (1.8..=2.2).contains(&fit.slope),
        "log-log slope {} outside [1.8, 2.2]",
        fit.slope
    );
    assert!(fit.r_sq >= 0.99, "r^2 {} below 0.99", fit.r_sq);
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 120.0, "budget exceeded: {secs:.1}s");
    println!(
        "PASS c04: DmSGD bias vs 1/(1-beta) slope {:.4}, r^2 {:.6} ({secs:.1}s)",
        fit.slope, fit.r_sq
    );
}

#[test]
fn c05_corrected_momentum_limit_is_independent_of_beta() {
    let start = Instant::now();
    let (p, w) = mesh_instance();
    let gamma = 0.002 / p.l_smooth;
    let ests: Vec<_> = [0.0, 0.5, 0.8, 0.9]
        .iter()
        .map(|&beta| {
            estimate_limiting_bias(Algorithm::DecentLam, &p, &w, gamma, beta, 2_000_000, 1e-13)
                .unwrap()
        })
        .collect();
    let fit = fit_bias_scaling(&ests, ScalingAxis::OneOverOneMinusBeta).unwrap();
    assert!(
        fit.slope.abs() <= 0.1,
        "DecentLaM limit must be flat in beta, got slope {}",
        fit.slope
    );
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 120.0, "budget exceeded: {secs:.1}s");
    println!("PASS c05: DecentLaM bias vs 1/(1-beta) slope {:.5} ({secs:.1}s)", fit.slope);
}

#[test]
fn c06_limiting_bias_scales_with_the_square_of_the_step_size() {
    let start = Instant::now();
    let (p, w) = mesh_instance();
    let gamma = 0.002 / p.l_smooth;
    for (algo, beta) in [
        (Algorithm::Dsgd, 0.0),
        (Algorithm::DmSgd, 0.8),
        (Algorithm::DecentLam, 0.8),
    ] {
        let hi = estimate_limiting_bias(algo, &p, &w, gamma, beta, 2_000_000, 1e-13).unwrap();
        let lo = estimate_limiting_bias(algo, &p, &w, gamma / 2.0, beta, 4_000_000, 1e-13).unwrap();
        assert!(hi.converged && lo.converged);
        let ratio = hi.limiting_bias / lo.limiting_bias;
        assert!(
            (3.6..=4.4).contains(&ratio),
            "{algo:?}: halving gamma must quarter the bias, got ratio {ratio}"
        );
        println!("PASS c06[{}]: bias(gamma)/bias(gamma/2) = {ratio:.4}", hi.algo);
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 120.0, "budget exceeded: {secs:.1}s");
    println!("PASS c06: all three step-size ratios inside [3.6, 4.4] ({secs:.1}s)");
}

#[test]
fn c07_single_variable_reformulations_match_the_two_variable_forms() {
    let start = Instant::now();
    let (p, w) = mesh_instance();
    let gamma = 0.001;
    let beta = 0.8;
    let mut worst: f64 = 0.0;
    for mode in [GradMode::FULL, GradMode::minibatch(4)] {
        let mut a = OptimizerState::zeros(8, 30, gamma, beta);
        let mut b = a.clone();
        let mut c = a.clone();
        let mut d = a.clone();
        for k in 0..1000 {
            a = step(Algorithm::DmSgd, &a, &p, &w, mode, 7).unwrap();
            b = step(Algorithm::DmSgdReformulated, &b, &p, &w, mode, 7).unwrap();
            c = step(Algorithm::DecentLam, &c, &p, &w, mode, 7).unwrap();
            d = step(Algorithm::DecentLamReformulated, &d, &p, &w, mode, 7).unwrap();
            let diff = max_abs_diff(&a.x, &b.x).max(max_abs_diff(&c.x, &d.x));
            worst = worst.max(diff);
            assert!(diff <= 1e-10, "forms diverged at k={k} ({:?}): {diff:e}", mode.kind);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "budget exceeded: {secs:.1}s");
    println!("PASS c07: max per-iterate gap {worst:.2e} over 1000 iterations, full + minibatch ({secs:.1}s)");
}

#[test]
fn c08_penalized_objective_momentum_reproduces_the_gossip_iterates() {
    let start = Instant::now();
    let (p, w) = mesh_instance();
    // Positive-definite mixing so the square-root change of variables exists.
    let lazy = w.lazy().unwrap();
    let gamma = 0.001;
    let beta = 0.8;
    let mut x_dom = OptimizerState::zeros(8, 30, gamma, beta);
    let mut s_dom = SDomainState::from_x0(&x_dom.x, &lazy, gamma, beta).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        x_dom = step(Algorithm::DecentLam, &x_dom, &p, &lazy, GradMode::FULL, 7).unwrap();
        s_dom = s_dom.step(&p, GradMode::FULL, 7).unwrap();
        let diff = max_abs_diff(&x_dom.x, &s_dom.x());
        worst = worst.max(diff);
        assert!(diff <= 1e-8, "trajectories diverged at k={k}: {diff:e}");
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "budget exceeded: {secs:.1}s");
    println!("PASS c08: max |x-domain - mapped s-domain| = {worst:.2e} over 1000 iterations ({secs:.1}s)");
}

#[test]
fn c09_degenerate_topologies_collapse_to_centralized_algorithms() {
    let start = Instant::now();

    // Complete graph: gossip SGD is exact parallel SGD.
    let (p, _) = mesh_instance();
    let g = build_topology(TopologyKind::FullyConnected, 8, 0, 0).unwrap();
    let w_full = metropolis_weights(&g).unwrap();
    let gamma = 0.001;
    let mut dsgd = OptimizerState::zeros(8, 30, gamma, 0.0);
    let mut psgd = dsgd.clone();
    let mut worst_full: f64 = 0.0;
    for _ in 0..100 {
        dsgd = step(Algorithm::Dsgd, &dsgd, &p, &w_full, GradMode::FULL, 3).unwrap();
        psgd = step(Algorithm::PmSgd, &psgd, &p, &w_full, GradMode::FULL, 3).unwrap();
        worst_full = worst_full.max(max_abs_diff(&dsgd.x, &psgd.x));
    }
    assert!(worst_full <= 1e-12, "complete-graph gossip drifted from parallel SGD: {worst_full:e}");

    // Single node: every algorithm is plain (momentum) SGD.
    let p1 = generate_regression(1, 10, 20, 0.3, 0.01, 11).unwrap();
    let w1 = WeightMatrix {
        w: Array2::from_elem((1, 1), 1.0),
        rho: 0.0,
        eigenvalues: vec![1.0],
        graph: Graph {
            n: 1,
            kind: TopologyKind::FullyConnected,
            edges: vec![],
            neighbors: vec![vec![]],
            time_varying: false,
        },
    };
    let gamma1 = 0.02 / p1.l_smooth;
    let beta = 0.8;
    let momentum_algos = [
        Algorithm::PmSgd,
        Algorithm::DmSgd,
        Algorithm::DmSgdReformulated,
        Algorithm::DecentLam,
        Algorithm::DecentLamReformulated,
        Algorithm::DaDmSgd,
        Algorithm::AwcDmSgd,
    ];
    let mut states: Vec<OptimizerState> = momentum_algos
        .iter()
        .map(|_| OptimizerState::zeros(1, 10, gamma1, beta))
        .collect();
    let mut plain = OptimizerState::zeros(1, 10, gamma1, 0.0);
    let mut x_ref = Array1::<f64>::zeros(10);
    let mut m_ref = Array1::<f64>::zeros(10);
    let mut x_gd = Array1::<f64>::zeros(10);
    let mut worst_single: f64 = 0.0;
    for _ in 0..100 {
        // Hand-rolled momentum SGD and gradient descent references.
        let g_ref = p1.full_gradient(0, &x_ref);
        m_ref = beta * &m_ref + &g_ref;
        x_ref = &x_ref - &(gamma1 * &m_ref);
        let g_gd = p1.full_gradient(0, &x_gd);
        x_gd = &x_gd - &(gamma1 * &g_gd);

        for (algo, st) in momentum_algos.iter().zip(states.iter_mut()) {
            *st = step(*algo, st, &p1, &w1, GradMode::FULL, 3).unwrap();
            let diff = (&st.x.row(0).to_owned() - &x_ref)
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            worst_single = worst_single.max(diff);
            assert!(diff <= 1e-12, "{algo:?} deviates from momentum SGD on one node: {diff:e}");
        }
        plain = step(Algorithm::Dsgd, &plain, &p1, &w1, GradMode::FULL, 3).unwrap();
        let diff = (&plain.x.row(0).to_owned() - &x_gd)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        worst_single = worst_single.max(diff);
        assert!(diff <= 1e-12, "single-node gossip SGD deviates from gradient descent: {diff:e}");
    }

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 5.0, "budget exceeded: {secs:.1}s");
    println!(
        "PASS c09: complete-graph gap {worst_full:.2e}; single-node gap {worst_single:.2e} over 100 iterations ({secs:.1}s)"
    );
}

#[test]
fn c10_weight_matrices_validate_and_match_spectral_goldens() {
    let start = Instant::now();
    let sizes = [4usize, 5, 8, 9, 16];
    let static_kinds = [
        TopologyKind::Ring,
        TopologyKind::Mesh,
        TopologyKind::SymmetricExponential,
        TopologyKind::FullyConnected,
    ];
    let mut validated = 0usize;
    for &n in &sizes {
        for &kind in &static_kinds {
            let g = build_topology(kind, n, 0, 0).unwrap();
            let w = metropolis_weights(&g).unwrap();
            let report = validate_weight_matrix(&w, 1e-12);
            assert!(report.pass, "{kind:?} n={n} failed validation:\n{report}");
            validated += 1;
        }
        // Random matchings are redrawn per iteration; check a few draws.
        for iter in [0u64, 1, 5] {
            let g = build_topology(TopologyKind::BipartiteRandomMatch, n, 9, iter).unwrap();
            let w = metropolis_weights(&g).unwrap();
            let report = validate_weight_matrix(&w, 1e-12);
            assert!(report.pass, "bipartite n={n} iter={iter} failed validation:\n{report}");
            validated += 1;
        }
    }

    for &n in &sizes {
        let g = build_topology(TopologyKind::FullyConnected, n, 0, 0).unwrap();
        let w = metropolis_weights(&g).unwrap();
        assert_eq!(w.rho, 0.0, "complete graph must average exactly (n={n})");
    }

    // Ring of 8: second-largest eigenvalue modulus is (1 + sqrt(2)) / 3.
    let golden = 0.804_737_854_124_365_1_f64;
    let g = build_topology(TopologyKind::Ring, 8, 0, 0).unwrap();
    let w = metropolis_weights(&g).unwrap();
    let err = (w.rho - golden).abs();
    assert!(err <= 1e-10, "ring-8 rho {} vs golden {golden}: |diff| = {err:e}", w.rho);

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 5.0, "budget exceeded: {secs:.1}s");
    println!(
        "PASS c10: {validated} topology/weight pairs validated at 1e-12; rho(full) = 0 exactly; \
         ring-8 rho within {err:.1e} of the closed form ({secs:.1}s)"
    );
}

#[test]
fn c11_noise_plateau_decreases_with_batch_size_toward_the_full_batch_limit() {
    let start = Instant::now();
    let gamma = 3e-5;

    let (p, w) = mesh_instance();
    let full_batch =
        estimate_limiting_bias(Algorithm::Dsgd, &p, &w, gamma, 0.0, 2_000_000, 1e-13).unwrap();
    assert!(full_batch.converged);
    let floor = full_batch.limiting_bias;

    let mut plateaus = Vec::new();
    for batch in [1usize, 4, 16, 64] {
        let cfg = ExperimentConfig {
            n: 8,
            d: 30,
            m: 50,
            hetero: 0.01,
            noise_mag: 0.01,
            sigma_sq: 1.0,
            seed: 42,
            topology: TopologyKind::Mesh,
            topology_seed: 0,
            algos: vec![AlgoSpec {
                algo: Algorithm::Dsgd,
                schedule: Schedule::constant(gamma).unwrap(),
                beta: 0.0,
                grad: GradKind::AdditiveNoise,
                batch_size: batch,
            }],
            max_iters: 100_000,
            metric_every: 2,
            bias_mode: false,
            fixed_point_tol: 1e-13,
            out: None,
        };
        let out = run_experiment(&cfg).unwrap();
        let tail: Vec<f64> = out.trajectories[0]
            .records
            .iter()
            .filter(|r| r.k >= 50_000)
            .map(|r| r.relative_error)
            .collect();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        plateaus.push((batch, mean));
    }

    for pair in plateaus.windows(2) {
        assert!(
            pair[0].1 > pair[1].1,
            "plateau must fall with batch size: B={} gives {:e}, B={} gives {:e}",
            pair[0].0,
            pair[0].1,
            pair[1].0,
            pair[1].1
        );
    }
    for &(batch, v) in &plateaus {
        assert!(v > floor, "plateau at B={batch} fell below the noiseless limit");
    }
    assert!(
        plateaus[0].1 >= 1.4 * floor,
        "B=1 plateau should sit well above the noiseless limit"
    );
    assert!(
        plateaus[3].1 <= 1.1 * floor,
        "B=64 plateau should approach the noiseless limit, got {:e} vs {floor:e}",
        plateaus[3].1
    );
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 120.0, "budget exceeded: {secs:.1}s");
    let shown: Vec<String> = plateaus.iter().map(|(b, v)| format!("B={b}: {v:.3e}")).collect();
    println!(
        "PASS c11: plateaus [{}] fall monotonically toward the noiseless limit {floor:.3e} ({secs:.1}s)",
        shown.join(", ")
    );
}

#[test]
fn c12_decaying_step_sizes_drive_the_error_to_zero() {
    let start = Instant::now();
    let (p, w) = mesh_instance();
    let schedule = Schedule::inverse_time(0.001, 500.0).unwrap();
    let beta = 0.8;
    let mut st = OptimizerState::zeros(8, 30, schedule.at(0), beta);
    let mut hit: Option<u64> = None;
    for k in 1u64..=1_000_000 {
        st.gamma = schedule.at(k - 1);
        st = step(Algorithm::DecentLam, &st, &p, &w, GradMode::FULL, 42).unwrap();
        if k % 500 == 0 {
            let rec = metrics_snapshot(&st.x, &p);
            if rec.relative_error < 1e-10 {
                hit = Some(k);
                break;
            }
        }
    }
    let k = hit.expect("relative error must fall below 1e-10 within 1e6 iterations");
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 300.0, "budget exceeded: {secs:.1}s");
    println!("PASS c12: DecentLaM + inverse-time schedule reached 1e-10 at iteration {k} ({secs:.1}s)");
}

#[test]
fn c13_runs_are_byte_identical_across_invocations_and_worker_counts() {
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_decentlam");
    let cfg = config_path("fig2.cfg");
    let base = std::env::temp_dir().join(format!("decentlam-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&base);

    let run = |tag: &str, workers: &str| -> (Vec<u8>, Vec<u8>) {
        let out_dir = base.join(tag);
        let status = Command::new(bin)
            .args(["run", "--config", &cfg, "--seed", "42", "--workers", workers])
            .arg("--out")
            .arg(&out_dir)
            .status()
            .expect("binary must spawn");
        assert!(status.success(), "run {tag} exited with {status}");
        let read = |f: &str| std::fs::read(out_dir.join(f)).expect("output file must exist");
        (read("trajectory.csv"), read("bias.csv"))
    };

    let first = run("first", "1");
    let second = run("second", "1");
    let wide = run("wide", "8");
    assert!(first == second, "two identical invocations differed");
    assert!(first == wide, "worker counts 1 and 8 produced different bytes");
    let _ = std::fs::remove_dir_all(&base);

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "budget exceeded: {secs:.1}s");
    println!(
        "PASS c13: trajectory.csv ({} bytes) and bias.csv ({} bytes) byte-identical across \
         repeat invocations and worker counts 1 vs 8 ({secs:.1}s)",
        first.0.len(),
        first.1.len()
    );
}
