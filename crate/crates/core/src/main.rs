use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aci_consensus::config::{ConfigError, ConfigFile};
use aci_consensus::io::{save_summary, save_trace, RunSummary};
use aci_consensus::oracle;
use aci_consensus::sim::{run_simulation, SimError, SimTrace};

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_BREACH: u8 = 4;

#[derive(Parser)]
#[command(name = "aci-consensus", version, about = "Actor-critic-identifier consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a configuration and write the trace CSV and summary JSON.
    Run {
        config: PathBuf,
        /// Override a config entry, e.g. `sim.T=1` or `agents.0.gains.eta_a=0.5`.
        #[arg(long = "set", value_name = "PATH=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Trace path; defaults to `output.trace_path` or `<config stem>_trace.csv`.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Summary path; defaults to `output.summary_path` or `<config stem>_summary.json`.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Print the topology and consensus gain; fails without a spanning tree.
    Check { config: PathBuf },
    /// Scalar Riccati oracle.
    OracleLqr {
        /// Use the true model instead of the identifier in the Bellman error.
        #[arg(long)]
        exact_model: bool,
        #[arg(long = "set", value_name = "PATH=VALUE")]
        set: Vec<String>,
    },
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Run { config, mut set, seed, trace, summary } => {
            if let Some(s) = seed {
                set.push(format!("sim.seed={s}"));
            }
            cmd_run(&config, &set, trace, summary)
        }
        Command::Check { config } => cmd_check(&config),
        Command::OracleLqr { exact_model, set } => cmd_oracle(exact_model, &set),
    };
    ExitCode::from(code)
}

fn config_error(e: &ConfigError) -> u8 {
    eprintln!("error: {e}");
    EXIT_CONFIG
}

fn sim_exit(e: &SimError) -> u8 {
    eprintln!("error: {e}");
    match e {
        SimError::ConfigInvalid(_) => EXIT_CONFIG,
        SimError::GammaNotPd { .. } => EXIT_BREACH,
        _ => EXIT_DIVERGED,
    }
}

fn default_output(config: &Path, suffix: &str) -> PathBuf {
    let stem = config.file_stem().map_or("run".into(), |s| s.to_string_lossy());
    PathBuf::from(format!("{stem}_{suffix}"))
}

fn write_outputs(trace: &SimTrace, trace_path: &Path, summary_path: &Path) -> Result<(), u8> {
    let summary = RunSummary::from_trace(trace);
    save_trace(trace, trace_path)
        .and_then(|_| save_summary(&summary, summary_path))
        .map_err(|e| {
            eprintln!("error: {e}");
            EXIT_FAIL
        })?;
    println!("trace: {}", trace_path.display());
    println!("summary: {}", summary_path.display());
    for a in &summary.agents {
        println!(
            "agent {}: |x(0)| = {:.4e}  |x(T)| = {:.4e}  |xtilde(T)| = {:.4e}  min eig gamma = {:.4e}",
            a.agent, a.x_norm_initial, a.x_norm_final, a.xtilde_norm_final, a.gamma_min_min
        );
    }
    println!("audit: {}", if summary.audit.pass { "PASS" } else { "FAIL" });
    Ok(())
}

fn cmd_run(path: &Path, set: &[String], trace: Option<PathBuf>, summary: Option<PathBuf>) -> u8 {
    let file = match ConfigFile::load(path, set) {
        Ok(f) => f,
        Err(e) => return config_error(&e),
    };
    let config = match file.resolve() {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    if !config.topology.has_spanning_tree() {
        eprintln!("warning: some agents are not reachable from the leader; consensus is not expected");
    }
    let trace_path = trace
        .or_else(|| file.output.trace_path.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| default_output(path, "trace.csv"));
    let summary_path = summary
        .or_else(|| file.output.summary_path.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| default_output(path, "summary.json"));

    match run_simulation(config) {
        Ok(trace) => {
            if let Err(code) = write_outputs(&trace, &trace_path, &summary_path) {
                return code;
            }
            let breaches = trace.monitors.breach_count;
            if breaches > 0 {
                eprintln!("error: {breaches} monitor breaches; first: {:?}", trace.monitors.breaches.first());
                return EXIT_BREACH;
            }
            0
        }
        Err(e) => {
            if let SimError::NumericalDivergence { partial, .. } = &e {
                let _ = write_outputs(partial, &trace_path, &summary_path);
            }
            sim_exit(&e)
        }
    }
}

fn cmd_check(path: &Path) -> u8 {
    let file = match ConfigFile::load(path, &[]) {
        Ok(f) => f,
        Err(e) => return config_error(&e),
    };
    let topology = match file.topology() {
        Ok(t) => t,
        Err(e) => return config_error(&e),
    };
    println!("N = {}", topology.n_agents());
    println!("edges (from -> to, weight):");
    for e in topology.edges() {
        println!("  {} -> {}  {}", e.from + 1, e.to + 1, e.weight);
    }
    for i in 0..topology.n_agents() {
        if topology.pinning(i) > 0.0 {
            println!("  leader -> {}  {}", i + 1, topology.pinning(i));
        }
    }
    let tree = topology.has_spanning_tree();
    println!("spanning tree: {}", if tree { "YES" } else { "NO" });
    if let Ok(s) = topology.consensus_gain() {
        println!("s = {s}");
    }
    match file.resolve() {
        Ok(cfg) => {
            let sizes: Vec<String> =
                cfg.agents.iter().enumerate().map(|(i, a)| format!("M_{} = {}", i + 1, a.basis.len())).collect();
            println!("basis sizes: {}", sizes.join(", "));
        }
        Err(e) => return config_error(&e),
    }
    if tree {
        0
    } else {
        EXIT_FAIL
    }
}

fn cmd_oracle(exact_model: bool, set: &[String]) -> u8 {
    let outcome = match oracle::run(exact_model, set) {
        Ok(o) => o,
        Err(oracle::OracleError::Config(e)) => return config_error(&e),
        Err(oracle::OracleError::Sim(e)) => return sim_exit(&e),
    };
    println!("Wc(T) = {}", outcome.wc);
    println!("Wa(T) = {}", outcome.wa);
    println!("p = {}", outcome.p);
    println!("error = {:e} (tolerance {})", outcome.critic_error(), outcome.tolerance);
    if outcome.pass() {
        println!("PASS");
        0
    } else {
        println!("FAIL");
        EXIT_FAIL
    }
}
