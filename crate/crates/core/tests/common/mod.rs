#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::DVector;
use rand::Rng;

use aci_consensus::config::ConfigFile;
use aci_consensus::oracle;
use aci_consensus::graph::{Edge, StackedVector, Topology};
use aci_consensus::sim::{run_simulation, SimError, SimTrace};

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load(name: &str, overrides: &[&str]) -> ConfigFile {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ConfigFile::load(&config_path(name), &overrides).expect("shipped config loads")
}

/// Runs to completion or returns the partial trace of a diverged run.
pub fn run_any(file: &ConfigFile) -> (SimTrace, Option<SimError>) {
    match run_simulation(file.resolve().expect("config resolves")) {
        Ok(t) => (t, None),
        Err(SimError::NumericalDivergence { t, agent, field, partial }) => {
            let trace = (*partial).clone();
            (trace, Some(SimError::NumericalDivergence { t, agent, field, partial }))
        }
        Err(e) => panic!("simulation failed: {e}"),
    }
}

/// Random digraph without self-loops; every edge and pinning gain is drawn
/// with probability `p`.
pub fn random_topology<R: Rng>(rng: &mut R, n: usize, state_dim: usize, p: f64) -> Topology {
    let mut edges = Vec::new();
    for to in 0..n {
        for from in 0..n {
            if from != to && rng.gen_bool(p) {
                edges.push(Edge::new(from, to, rng.gen_range(0.1..2.0)));
            }
        }
    }
    let mut pinning = Vec::new();
    for i in 0..n {
        if rng.gen_bool(p) {
            pinning.push((i, rng.gen_range(0.1..2.0)));
        }
    }
    Topology::build(n, state_dim, &edges, &pinning).expect("generated topology is valid")
}

pub fn random_stacked<R: Rng>(rng: &mut R, n: usize, state_dim: usize) -> StackedVector {
    let blocks: Vec<DVector<f64>> =
        (0..n).map(|_| DVector::from_fn(state_dim, |_, _| rng.gen_range(-5.0..5.0))).collect();
    StackedVector::from_blocks(&blocks)
}

/// Adds one edge or pinning link that is not yet present, if any is left.
pub fn with_extra_link<R: Rng>(rng: &mut R, t: &Topology) -> Option<Topology> {
    let n = t.n_agents();
    let mut candidates: Vec<(usize, Option<usize>)> = Vec::new();
    for to in 0..n {
        if t.pinning(to) == 0.0 {
            candidates.push((to, None));
        }
        for from in 0..n {
            if from != to && t.weight(to, from) == 0.0 {
                candidates.push((to, Some(from)));
            }
        }
    }
    if candidates.is_empty() {
        return None;
    }
    let (to, from) = candidates[rng.gen_range(0..candidates.len())];
    let mut edges = t.edges();
    let mut pinning: Vec<(usize, f64)> = (0..n).map(|i| (i, t.pinning(i))).collect();
    match from {
        Some(from) => edges.push(Edge::new(from, to, rng.gen_range(0.1..2.0))),
        None => pinning[to].1 = rng.gen_range(0.1..2.0),
    }
    Some(Topology::build(n, t.state_dim(), &edges, &pinning).expect("augmented topology is valid"))
}

/// Checks the structural graph properties on `cases` random topologies and
/// the consensus bound on `vectors` random stacks per spanning-tree case.
/// Returns the number of spanning-tree cases checked.
pub fn graph_suite<R: Rng>(rng: &mut R, cases: usize, vectors: usize) -> Result<usize, String> {
    let mut with_tree = 0;
    for case in 0..cases {
        let n = rng.gen_range(1..=8);
        let dim = rng.gen_range(1..=3);
        let p = rng.gen_range(0.15..0.6);
        let t = random_topology(rng, n, dim, p);

        let l = t.laplacian();
        for i in 0..n {
            let sum: f64 = l.row(i).iter().sum();
            if sum.abs() > 1e-12 {
                return Err(format!("case {case}: Laplacian row {i} sums to {sum:e}"));
            }
        }

        for _ in 0..10 {
            let x = random_stacked(rng, n, dim);
            let a = t.stacked_error(&x).map_err(|e| e.to_string())?;
            let b = t.stacked_error_kron(&x).map_err(|e| e.to_string())?;
            let diff = (a.as_vector() - b.as_vector()).amax();
            if diff > 1e-12 {
                return Err(format!("case {case}: Kronecker and per-agent errors differ by {diff:e}"));
            }
        }

        let sigma_min = t.pinned_laplacian().singular_values().min();
        let tree = t.has_spanning_tree();
        if tree != (sigma_min > 1e-10) {
            return Err(format!("case {case}: spanning tree {tree} but sigma_min(L + A0) = {sigma_min:e}"));
        }

        if tree {
            with_tree += 1;
            let s = t.consensus_gain().map_err(|e| e.to_string())?;
            for _ in 0..vectors {
                let x = random_stacked(rng, n, dim);
                let e = t.stacked_error(&x).map_err(|e| e.to_string())?;
                if x.norm() > e.norm() / s * (1.0 + 1e-9) {
                    return Err(format!("case {case}: |X| = {} exceeds |E|/s = {}", x.norm(), e.norm() / s));
                }
            }
            if let Some(bigger) = with_extra_link(rng, &t) {
                if !bigger.has_spanning_tree() {
                    return Err(format!("case {case}: adding a link destroyed the spanning tree"));
                }
            }
        }
    }
    Ok(with_tree)
}

/// Every continuous state after stepping `file` to its horizon, flattened.
pub fn final_state(file: &ConfigFile) -> Vec<f64> {
    let config = file.resolve().expect("config resolves");
    let steps = config.steps();
    let mut sim = aci_consensus::sim::Simulation::new(config).expect("simulation builds");
    for _ in 0..steps {
        sim.step().expect("step succeeds");
    }
    let mut out = Vec::new();
    for a in sim.agents() {
        for v in [a.x.as_slice(), a.ident.xhat.as_slice(), a.ident.wf.as_slice(), a.ident.vf.as_slice()] {
            out.extend_from_slice(v);
        }
        out.extend_from_slice(a.ident.v.as_slice());
        out.extend_from_slice(a.info.p.as_slice());
        out.extend_from_slice(a.info.zeta.as_slice());
        out.extend_from_slice(a.actor.wa.as_slice());
    }
    out
}

/// Observed order `log2(|y_h − y_{h/2}| / |y_{h/2} − y_{h/4}|)` in the max
/// norm over every continuous state; `make` builds the config from overrides.
pub fn richardson_order_with<F>(make: F, h: f64, horizon: f64) -> f64
where
    F: Fn(&[String]) -> ConfigFile,
{
    let run = |step: f64| {
        let steps = (horizon / step).round() as usize;
        let o = [format!("sim.h={step}"), format!("sim.T={horizon}"), format!("sim.log_every={steps}")];
        final_state(&make(&o))
    };
    let (a, b, c) = (run(h), run(h / 2.0), run(h / 4.0));
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    (diff(&a, &b) / diff(&b, &c)).log2()
}

pub fn richardson_order(name: &str, overrides: &[&str], h: f64, horizon: f64) -> f64 {
    let make = |extra: &[String]| {
        let mut o: Vec<&str> = overrides.to_vec();
        o.extend(extra.iter().map(String::as_str));
        load(name, &o)
    };
    richardson_order_with(make, h, horizon)
}

pub fn smooth_sign_overrides(n_agents: usize) -> Vec<String> {
    (0..n_agents).map(|i| format!("agents.{i}.sign_mode=smooth")).collect()
}

/// Semi-Lagrangian value iteration for `min ∫ q e² + r u² dt` under
/// `ė = a e + b u` on a grid over [−2, 2]; returns the least-squares fit of
/// `V(e) = p e²` over |e| ≤ 1.
pub fn value_iteration_p(dt: f64) -> f64 {
    let n = 401;
    let grid: Vec<f64> = (0..n).map(|k| -2.0 + 4.0 * k as f64 / (n - 1) as f64).collect();
    let controls: Vec<f64> = (0..=300).map(|k| -1.5 + 0.01 * k as f64).collect();
    let step = grid[1] - grid[0];
    let interp = |v: &[f64], e: f64| {
        let s = ((e.clamp(-2.0, 2.0) + 2.0) / step).min((n - 1) as f64 - 1e-12);
        let k = s.floor() as usize;
        let w = s - k as f64;
        v[k] * (1.0 - w) + v[k + 1] * w
    };
    let mut v = vec![0.0; n];
    for _ in 0..20_000 {
        let next: Vec<f64> = grid
            .iter()
            .map(|&e| {
                controls
                    .iter()
                    .map(|&u| (oracle::Q * e * e + oracle::R * u * u) * dt + interp(&v, e + (oracle::A * e + oracle::B * u) * dt))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if change < 1e-12 {
            break;
        }
    }
    let (num, den) = grid
        .iter()
        .zip(&v)
        .filter(|(e, _)| e.abs() <= 1.0)
        .fold((0.0, 0.0), |(n, d), (e, v)| (n + v * e * e, d + e.powi(4)));
    num / den
}
