//! Command-line driver for the decentralized momentum SGD simulator.
//!
//! Subcommands: `topo` (inspect a topology's weight matrix), `run` (execute
//! a config, writing trajectory/bias CSVs), `sweep` (parameter grids), and
//! `verify` (the built-in property suite).
//!
//! Exit codes: 0 success, 1 validation error (bad flags/config), 2 runtime
//! failure (divergence, non-convergence, failed properties), 3 I/O error.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use decentlam::harness::{bias_csv, trajectory_csv};
use decentlam::topology::validate_weight_matrix;
use decentlam::verify::run_verification;
use decentlam::{
    build_topology, metropolis_weights, parse_config, run_experiment, run_sweep, Error, Result,
    SweepSpec, TopologyKind,
};

#[derive(Parser)]
#[command(
    name = "decentlam",
    version,
    about = "Deterministic simulator for decentralized momentum SGD"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a topology, report its weight matrix and spectral quantities.
    Topo {
        /// ring | mesh | sym-exp | bipartite | full
        #[arg(long)]
        kind: String,
        /// Number of nodes.
        #[arg(long)]
        n: usize,
        /// Seed for randomized (time-varying) topologies.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the weight matrix as CSV to this path.
        #[arg(long = "emit-w")]
        emit_w: Option<PathBuf>,
    },
    /// Execute one experiment config and write its CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the config's `out`, else `.`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the problem seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores). Output is identical for
        /// any value.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run a parameter grid over a base config and write the bias table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Axis as `path=v1,v2,...` (e.g. `algo.*.beta=0,0.5,0.9`);
        /// repeatable.
        #[arg(long = "axis")]
        axes: Vec<String>,
        /// Pair axes elementwise instead of taking the cross product.
        #[arg(long)]
        zip: bool,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in property suite and print pass/fail per property.
    Verify {
        /// Small instances and shorter runs.
        #[arg(long)]
        quick: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors are validation failures; --help/--version are not.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 3,
        Error::Divergence { .. }
        | Error::EigenNoConvergence { .. }
        | Error::NotPositiveDefinite { .. }
        | Error::SingularNormalEquations { .. }
        | Error::InsufficientPoints { .. }
        | Error::NonConvergedInput { .. }
        | Error::NonPositiveFitValue { .. } => 2,
        _ => 1,
    }
}

fn dispatch(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Topo {
            kind,
            n,
            seed,
            emit_w,
        } => cmd_topo(&kind, n, seed, emit_w),
        Cmd::Run {
            config,
            out,
            seed,
            workers,
        } => cmd_run(&config, out, seed, workers),
        Cmd::Sweep {
            config,
            axes,
            zip,
            workers,
            out,
        } => cmd_sweep(&config, &axes, zip, workers, &out),
        Cmd::Verify { quick } => cmd_verify(quick),
    }
}

/// Runs `f` on a dedicated pool when a worker count is given.
fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        None => f(),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .expect("thread pool construction cannot fail for sane counts")
            .install(f),
    }
}

fn cmd_topo(kind: &str, n: usize, seed: u64, emit_w: Option<PathBuf>) -> Result<ExitCode> {
    let kind: TopologyKind = kind
        .parse()
        .map_err(|e: String| Error::config(vec![e]))?;
    let g = build_topology(kind, n, seed, 0)?;
    let wm = metropolis_weights(&g)?;
    let report = validate_weight_matrix(&wm, 1e-12);

    println!(
        "kind: {}{}",
        kind,
        if kind.is_time_varying() {
            " (time-varying; showing the iteration-0 matching)"
        } else {
            ""
        }
    );
    println!("nodes: {}", g.n);
    println!("edges: {}", g.edges.len());
    let hist = g
        .degree_histogram()
        .into_iter()
        .map(|(d, c)| format!("{d}x{c}"))
        .collect::<Vec<_>>()
        .join(", ");
    println!("degree histogram (degree x count): {hist}");
    println!("rho: {}", wm.rho);
    if wm.n() >= 2 {
        println!(
            "lambda_2: {}  lambda_n: {}",
            wm.eigenvalues[1],
            wm.eigenvalues.last().expect("n >= 1")
        );
    }
    println!("{report}");

    if let Some(path) = emit_w {
        let mut text = String::new();
        for i in 0..wm.n() {
            for j in 0..wm.n() {
                if j > 0 {
                    text.push(',');
                }
                // 17 significant digits: enough to reconstruct every f64
                // bit-exactly from decimal text.
                let _ = write!(text, "{:.16e}", wm.w[[i, j]]);
            }
            text.push('\n');
        }
        std::fs::write(&path, text)?;
        println!("wrote {}", path.display());
    }
    Ok(if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_run(
    config: &PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> Result<ExitCode> {
    let text = std::fs::read_to_string(config)?;
    let mut cfg = parse_config(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out_dir = out
        .or_else(|| cfg.out.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;

    let output = with_pool(workers, || run_experiment(&cfg))?;

    let traj_path = out_dir.join("trajectory.csv");
    std::fs::write(&traj_path, trajectory_csv(&output.trajectories))?;
    println!("wrote {}", traj_path.display());
    if cfg.bias_mode {
        let bias_path = out_dir.join("bias.csv");
        std::fs::write(&bias_path, bias_csv(&output.biases))?;
        println!("wrote {}", bias_path.display());
    }
    for t in &output.trajectories {
        let last = t.records.last().expect("the k = 0 record always exists");
        println!(
            "{}: relative_error {} at iteration {}",
            t.algo, last.relative_error, last.k
        );
    }
    Ok(ExitCode::SUCCESS)
}

/// Splits `path=v1,v2,...` axis flags, reporting every malformed one.
fn parse_axes(raw: &[String]) -> Result<Vec<(String, Vec<String>)>> {
    let mut axes = Vec::new();
    let mut issues = Vec::new();
    for r in raw {
        let Some((path, values)) = r.split_once('=') else {
            issues.push(format!("--axis {r:?}: expected path=v1,v2,..."));
            continue;
        };
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            issues.push(format!("--axis {r:?}: no values given"));
            continue;
        }
        axes.push((path.trim().to_string(), values));
    }
    if issues.is_empty() {
        Ok(axes)
    } else {
        Err(Error::config(issues))
    }
}

fn cmd_sweep(
    config: &PathBuf,
    axes: &[String],
    zip: bool,
    workers: Option<usize>,
    out: &PathBuf,
) -> Result<ExitCode> {
    let text = std::fs::read_to_string(config)?;
    let base = parse_config(&text)?;
    let spec = SweepSpec {
        base,
        axes: parse_axes(axes)?,
        cross_product: !zip,
    };
    let rows = with_pool(workers, || run_sweep(&spec))?;
    std::fs::create_dir_all(out)?;
    let path = out.join("sweep.csv");
    std::fs::write(&path, bias_csv(&rows))?;
    let converged = rows.iter().filter(|r| r.converged).count();
    println!(
        "wrote {} ({} rows, {} converged)",
        path.display(),
        rows.len(),
        converged
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(quick: bool) -> Result<ExitCode> {
    let results = run_verification(quick);
    let mut passed = 0;
    for r in &results {
        println!(
            "{} {} — {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        passed += usize::from(r.passed);
    }
    println!("{passed}/{} properties passed", results.len());
    Ok(if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}
