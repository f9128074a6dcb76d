//! Round evaluation and fixed-step integration.
//!
//! Every right-hand-side evaluation is one synchronous communication round:
//! all agents publish states, then errors, then `F̂`, then `Υ(F̂)`, each phase
//! completing for every agent before the next begins. Rounds run at every
//! Runge–Kutta stage, so the integrator sees the continuous-time closed loop.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::board::{Field, MessageBoard};
use super::probing::ProbingSignal;
use super::trace::{AgentMonitors, AgentRecord, MonitorReport, SimTrace, TraceLayout, TraceRow};
use super::{SimConfig, SimError, DIVERGENCE_LIMIT};
use crate::dynamics;
use crate::identifier::{IdentifierRates, IdentifierState};
use crate::integrate::{rk4_step, OdeState};
use crate::projection;
use crate::value::{self, ActorState, CriticInfo, CriticState};

/// Continuous state of one agent: plant, identifier, critic and actor.
///
/// The critic is integrated in information form; `critic.wc` and
/// `critic.gamma` are recovered from `info` after every step.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: DVector<f64>,
    pub ident: IdentifierState,
    pub critic: CriticState,
    pub info: CriticInfo,
    pub actor: ActorState,
}

impl OdeState for AgentState {
    fn add_scaled(&self, rate: &Self, h: f64) -> Self {
        let mut out = self.clone();
        out.x += &rate.x * h;
        out.ident.xhat += &rate.ident.xhat * h;
        out.ident.wf += &rate.ident.wf * h;
        out.ident.vf += &rate.ident.vf * h;
        out.ident.v += &rate.ident.v * h;
        out.info.p += &rate.info.p * h;
        out.info.zeta += &rate.info.zeta * h;
        out.actor.wa += &rate.actor.wa * h;
        out
    }
}

/// Quantities an agent computed in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSignals {
    pub e: DVector<f64>,
    pub u_policy: DVector<f64>,
    pub u_applied: DVector<f64>,
    pub f_hat: DVector<f64>,
    pub upsilon_f_hat: DVector<f64>,
    pub omega: DVector<f64>,
    pub delta: f64,
}

struct Partial {
    jacobians: Vec<DMatrix<f64>>,
    g: DMatrix<f64>,
    e: DVector<f64>,
    u_policy: DVector<f64>,
    u_applied: DVector<f64>,
    f_hat: DVector<f64>,
}

pub struct Simulation {
    config: SimConfig,
    probes: Vec<ProbingSignal>,
    board: MessageBoard,
    agents: Vec<AgentState>,
    step_index: usize,
    rows: Vec<TraceRow>,
    monitors: MonitorReport,
    pe_accum: Vec<DMatrix<f64>>,
    pe_window_steps: usize,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut agents = Vec::with_capacity(config.agents.len());
        let mut probes = Vec::with_capacity(config.agents.len());
        for (i, a) in config.agents.iter().enumerate() {
            let mut id_rng = ChaCha8Rng::seed_from_u64(config.seed);
            id_rng.set_stream(2 * i as u64);
            let mut probe_rng = ChaCha8Rng::seed_from_u64(config.seed);
            probe_rng.set_stream(2 * i as u64 + 1);
            let ident = IdentifierState::init(&a.identifier, &a.x0, &mut id_rng)
                .map_err(|e| SimError::identifier(0.0, i, e))?;
            let m = a.basis.len();
            let critic = CriticState {
                wc: a.wc0.clone(),
                gamma: DMatrix::identity(m, m) * a.critic.gamma0_scale,
                phi_c: a.critic.eta_c,
                nu: a.critic.nu,
                lambda: a.critic.lambda,
                gamma_cap: a.critic.gamma_cap,
            };
            let info = CriticInfo::from_critic(&critic).map_err(|e| SimError::value(0.0, i, e))?;
            agents.push(AgentState {
                x: a.x0.clone(),
                ident,
                critic,
                info,
                actor: ActorState { wa: a.wa0.clone(), phi_a2: a.actor.eta_a, bound: a.actor.bound },
            });
            probes.push(ProbingSignal::new(&config.probing, a.dynamics.input_dim(), &mut probe_rng));
        }
        let monitors = MonitorReport {
            agents: config
                .agents
                .iter()
                .map(|a| AgentMonitors::new(a.actor.bound, a.identifier.weight_bound))
                .collect(),
            ..Default::default()
        };
        let pe_accum = config.agents.iter().map(|a| DMatrix::zeros(a.basis.len(), a.basis.len())).collect();
        let pe_window_steps = ((config.pe_window / config.h).round() as usize).max(1);
        Ok(Self {
            board: MessageBoard::new(&config.topology),
            probes,
            agents,
            step_index: 0,
            rows: Vec::new(),
            monitors,
            pe_accum,
            pe_window_steps,
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.config.h
    }

    pub fn board(&self) -> &MessageBoard {
        &self.board
    }

    /// One communication round at time `t` on `states`, returning the rate
    /// of every continuous state and the signals each agent computed.
    pub fn evaluate(&mut self, t: f64, states: &[AgentState]) -> Result<(Vec<AgentState>, Vec<AgentSignals>), SimError> {
        round(&self.config, &self.probes, &mut self.board, t, states)
    }

    /// Advances one step of size `h`.
    pub fn step(&mut self) -> Result<(), SimError> {
        let t = self.time();
        let h = self.config.h;
        let mut first: Option<Vec<AgentSignals>> = None;
        let Self { config, probes, board, agents, .. } = self;
        let next = rk4_step(agents, t, h, |ts, ys: &Vec<AgentState>, stage| {
            let (rates, signals) = round(config, probes, board, ts, ys)?;
            if stage == 0 {
                first = Some(signals);
            }
            Ok::<_, SimError>(rates)
        })?;
        let signals = first.expect("stage 0 always runs");
        if self.step_index % self.config.log_every == 0 {
            let row = self.record(t, &signals);
            self.rows.push(row);
        }
        self.monitor(t, &signals);
        self.agents = next;
        self.step_index += 1;
        self.post_step()
    }

    /// Runs to the configured horizon. On divergence the error carries the
    /// partial trace.
    pub fn run(mut self) -> Result<SimTrace, SimError> {
        let steps = self.config.steps();
        while self.step_index < steps {
            if let Err(err) = self.step() {
                return Err(match err {
                    SimError::NumericalDivergence { t, agent, field, .. } => {
                        let partial = Box::new(self.into_trace(false));
                        SimError::NumericalDivergence { t, agent, field, partial }
                    }
                    other => other,
                });
            }
        }
        let t = self.time();
        let states = self.agents.clone();
        let (_, signals) = self.evaluate(t, &states)?;
        let row = self.record(t, &signals);
        self.rows.push(row);
        self.monitor(t, &signals);
        Ok(self.into_trace(true))
    }

    fn into_trace(self, completed: bool) -> SimTrace {
        let layout = TraceLayout {
            state_dim: self.config.topology.state_dim(),
            input_dims: self.config.agents.iter().map(|a| a.dynamics.input_dim()).collect(),
            basis_sizes: self.config.agents.iter().map(|a| a.basis.len()).collect(),
        };
        SimTrace { layout, rows: self.rows, access: self.board.log(), monitors: self.monitors, completed }
    }

    fn record(&self, t: f64, signals: &[AgentSignals]) -> TraceRow {
        let agents = self
            .agents
            .iter()
            .zip(signals)
            .map(|(s, sig)| {
                let (gamma_min, gamma_max) = eig_range(&s.critic.gamma);
                let psi = value::regressor(&sig.omega, &s.critic.gamma, s.critic.nu);
                AgentRecord {
                    x: s.x.clone(),
                    xhat: s.ident.xhat.clone(),
                    e: sig.e.clone(),
                    u: sig.u_applied.clone(),
                    u_policy: sig.u_policy.clone(),
                    omega: sig.omega.clone(),
                    delta: sig.delta,
                    wc: s.critic.wc.clone(),
                    wa: s.actor.wa.clone(),
                    gamma_min,
                    gamma_max,
                    psi_norm: psi.norm(),
                    xtilde_norm: s.ident.xtilde(&s.x).norm(),
                    wf_norm: s.ident.wf.norm(),
                    vf_norm: s.ident.vf.norm(),
                }
            })
            .collect();
        TraceRow { t, agents }
    }

    fn monitor(&mut self, t: f64, signals: &[AgentSignals]) {
        let toggles = self.config.monitors;
        let close_window = (self.step_index + 1) % self.pe_window_steps == 0;
        for (i, (s, sig)) in self.agents.iter().zip(signals).enumerate() {
            let mon = &mut self.monitors.agents[i];
            let (lo, hi) = eig_range(&s.critic.gamma);
            if mon.gamma_min_initial.is_nan() {
                mon.gamma_min_initial = lo;
                mon.gamma_max_initial = hi;
            }
            mon.gamma_min_min = mon.gamma_min_min.min(lo);
            mon.gamma_max_max = mon.gamma_max_max.max(hi);
            mon.delta_abs_max = mon.delta_abs_max.max(sig.delta.abs());
            let psi = value::regressor(&sig.omega, &s.critic.gamma, s.critic.nu);
            let ratio = if lo > 0.0 { psi.norm() * (s.critic.nu * lo).sqrt() } else { f64::INFINITY };
            mon.psi_ratio_max = mon.psi_ratio_max.max(ratio);
            let (wa, wf, vf) = (s.actor.wa.norm(), s.ident.wf.norm(), s.ident.vf.norm());
            mon.wa_norm_max = mon.wa_norm_max.max(wa);
            mon.wf_norm_max = mon.wf_norm_max.max(wf);
            mon.vf_norm_max = mon.vf_norm_max.max(vf);
            let (wa_bound, id_bound) = (mon.wa_bound, mon.identifier_bound);

            self.pe_accum[i] += &psi * psi.transpose() * self.config.h;
            if close_window {
                let min = eig_range(&self.pe_accum[i]).0;
                self.monitors.agents[i].pe_window_min_eig.push(min);
                self.pe_accum[i].fill(0.0);
            }

            if toggles.gamma && !(lo > 0.0) {
                self.monitors.breach(t, i, format!("gamma not positive definite (min eigenvalue {lo:e})"));
            }
            if toggles.psi && ratio > 1.0 + 1e-9 {
                self.monitors.breach(t, i, format!("regressor bound exceeded (ratio {ratio})"));
            }
            if toggles.weights {
                if wa > wa_bound * (1.0 + 1e-12) {
                    self.monitors.breach(t, i, format!("actor weight norm {wa} exceeds {wa_bound}"));
                }
                if wf > id_bound * (1.0 + 1e-12) || vf > id_bound * (1.0 + 1e-12) {
                    self.monitors.breach(t, i, format!("identifier weight norms ({wf}, {vf}) exceed {id_bound}"));
                }
            }
        }
    }

    fn post_step(&mut self) -> Result<(), SimError> {
        let t = self.time();
        for (i, (s, setup)) in self.agents.iter_mut().zip(&self.config.agents).enumerate() {
            s.info.symmetrize();
            s.info.recover_into(&mut s.critic).map_err(|e| SimError::value(t, i, e))?;
            projection::clamp_to_ball(s.actor.wa.as_mut_slice(), setup.actor.bound);
            projection::clamp_to_ball(s.ident.wf.as_mut_slice(), setup.identifier.weight_bound);
            projection::clamp_to_ball(s.ident.vf.as_mut_slice(), setup.identifier.weight_bound);
            let fields: [(&str, &[f64]); 7] = [
                ("x", s.x.as_slice()),
                ("xhat", s.ident.xhat.as_slice()),
                ("v", s.ident.v.as_slice()),
                ("Wc", s.critic.wc.as_slice()),
                ("gamma", s.critic.gamma.as_slice()),
                ("Wa", s.actor.wa.as_slice()),
                ("Wf", s.ident.wf.as_slice()),
            ];
            for (name, vals) in fields {
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(SimError::NonFinite { t, agent: i, field: name.to_string() });
                }
                if vals.iter().any(|v| v.abs() > DIVERGENCE_LIMIT) {
                    return Err(SimError::NumericalDivergence {
                        t,
                        agent: i,
                        field: name.to_string(),
                        partial: Box::default(),
                    });
                }
            }
        }
        Ok(())
    }
}

impl Default for SimTrace {
    fn default() -> Self {
        SimTrace {
            layout: TraceLayout { state_dim: 0, input_dims: Vec::new(), basis_sizes: Vec::new() },
            rows: Vec::new(),
            access: Default::default(),
            monitors: Default::default(),
            completed: false,
        }
    }
}

fn eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    (eig.min(), eig.max())
}

fn round(
    config: &SimConfig,
    probes: &[ProbingSignal],
    board: &mut MessageBoard,
    t: f64,
    states: &[AgentState],
) -> Result<(Vec<AgentState>, Vec<AgentSignals>), SimError> {
    let topo = &config.topology;
    let n_agents = states.len();
    board.clear();

    // Stage points may sit slightly outside a projection ball; the field
    // there is taken from the nearest point on the ball.
    let states: Vec<Cow<'_, AgentState>> = states
        .iter()
        .zip(&config.agents)
        .map(|(s, setup)| {
            let id_bound = setup.identifier.weight_bound;
            if s.actor.wa.norm() <= s.actor.bound && s.ident.wf.norm() <= id_bound && s.ident.vf.norm() <= id_bound {
                return Cow::Borrowed(s);
            }
            let mut c = s.clone();
            projection::clamp_to_ball(c.actor.wa.as_mut_slice(), c.actor.bound);
            projection::clamp_to_ball(c.ident.wf.as_mut_slice(), id_bound);
            projection::clamp_to_ball(c.ident.vf.as_mut_slice(), id_bound);
            Cow::Owned(c)
        })
        .collect();

    let critics = states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut c = s.critic.clone();
            s.info.recover_into(&mut c).map_err(|e| SimError::value(t, i, e))?;
            Ok(c)
        })
        .collect::<Result<Vec<_>, SimError>>()?;

    for (i, s) in states.iter().enumerate() {
        board.publish(i, Field::State, s.x.clone());
    }

    let mut errors = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let e = topo.upsilon_with(i, |j| board.read(i, Field::State, j).map_err(SimError::from))?;
        errors.push(e);
    }
    for (i, e) in errors.into_iter().enumerate() {
        board.publish(i, Field::Error, e);
    }

    let mut partials = Vec::with_capacity(n_agents);
    for (i, (s, setup)) in states.iter().zip(&config.agents).enumerate() {
        let participants = setup.basis.participants();
        let errs = participants
            .iter()
            .map(|&j| board.read(i, Field::Error, j).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        let jacobians = setup
            .basis
            .jacobians(&errs)
            .map_err(|e| SimError::ConfigInvalid(format!("agent {}: {e}", i + 1)))?;
        let l_sigma = value::l_sigma(topo, i, participants, &jacobians).map_err(|e| SimError::value(t, i, e))?;
        let g = dynamics::control_effectiveness(setup.dynamics.as_ref(), &s.x).map_err(|e| SimError::dynamics(t, i, e))?;
        let u_policy = value::control_policy(&s.actor.wa, setup.cost.r_inv(), &g, &l_sigma)
            .map_err(|e| SimError::value(t, i, e))?;
        let u_applied = &u_policy + probes[i].at(t);
        let f_hat = if config.exact_model {
            dynamics::drift(setup.dynamics.as_ref(), &s.x).map_err(|e| SimError::dynamics(t, i, e))? + &g * &u_policy
        } else {
            s.ident
                .f_hat_full(&setup.identifier, &s.x, &u_policy, &g)
                .map_err(|e| SimError::identifier(t, i, e))?
        };
        let e = board.read(i, Field::Error, i)?.clone();
        partials.push(Partial { jacobians, g, e, u_policy, u_applied, f_hat });
    }
    for (i, p) in partials.iter().enumerate() {
        board.publish(i, Field::FHat, p.f_hat.clone());
    }

    let mut upsilons = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let ups = topo.upsilon_with(i, |j| board.read(i, Field::FHat, j).map_err(SimError::from))?;
        upsilons.push(ups);
    }
    for (i, u) in upsilons.iter().enumerate() {
        board.publish(i, Field::UpsilonFHat, u.clone());
    }

    let mut rates = Vec::with_capacity(n_agents);
    let mut signals = Vec::with_capacity(n_agents);
    for (i, ((s, setup), p)) in states.iter().zip(&config.agents).zip(partials).enumerate() {
        let participants = setup.basis.participants();
        let ups = participants
            .iter()
            .map(|&j| board.read(i, Field::UpsilonFHat, j).map(|v| Some(v.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let omega = value::omega(topo, i, participants, &p.jacobians, &ups).map_err(|e| SimError::value(t, i, e))?;
        let neighbor_errors = topo
            .neighbors(i)
            .iter()
            .map(|&j| board.read(i, Field::Error, j).map(|e| (j, topo.weight(i, j), e)))
            .collect::<Result<Vec<_>, _>>()?;
        let delta = value::bellman_error(&setup.cost, &p.e, &neighbor_errors, &p.u_policy, &critics[i].wc, &omega)
            .map_err(|e| SimError::value(t, i, e))?;
        if !delta.is_finite() {
            return Err(SimError::NonFinite { t, agent: i, field: "delta".into() });
        }

        let f = dynamics::drift(setup.dynamics.as_ref(), &s.x).map_err(|e| SimError::dynamics(t, i, e))?;
        let x_dot = f + &p.g * &p.u_applied;
        let IdentifierRates { xhat, wf, vf, v } = s
            .ident
            .derivatives(&setup.identifier, &s.x, &p.u_applied, &p.g)
            .map_err(|e| SimError::identifier(t, i, e))?;
        let (p_dot, zeta_dot) = critics[i].info_rates(&s.info.p, &omega, delta).map_err(|e| SimError::value(t, i, e))?;
        let wa_dot = s.actor.rate(&critics[i].wc).map_err(|e| SimError::value(t, i, e))?;

        let mut rate = AgentState::clone(s);
        rate.x = x_dot;
        rate.ident.xhat = xhat;
        rate.ident.wf = wf;
        rate.ident.vf = vf;
        rate.ident.v = v;
        rate.info.p = p_dot;
        rate.info.zeta = zeta_dot;
        rate.actor.wa = wa_dot;
        rates.push(rate);

        signals.push(AgentSignals {
            e: p.e,
            u_policy: p.u_policy,
            u_applied: p.u_applied,
            f_hat: p.f_hat,
            upsilon_f_hat: upsilons[i].clone(),
            omega,
            delta,
        });
    }
    Ok((rates, signals))
}

/// Builds the simulation and runs it to completion.
pub fn run_simulation(config: SimConfig) -> Result<SimTrace, SimError> {
    Simulation::new(config)?.run()
}
