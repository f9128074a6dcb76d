//! Critic, actor and Bellman error for one agent.
//!
//! The value function is approximated as `V̂ = Ŵ_cᵀ σ(ℰ_i)` and the policy as
//! `u = −½ R⁻¹ gᵀ L_σ Ŵ_a`. The critic is trained on the Bellman error with
//! normalized recursive least squares and a forgetting factor; the actor
//! tracks the critic through a projected first-order filter.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::Topology;
use crate::projection::{self, smootherstep, ProjectionError};

/// Relative width of the band below `gamma_cap` over which forgetting is
/// switched off.
pub const GAMMA_CAP_BAND: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValueError {
    #[error("dimension mismatch in {0}")]
    DimensionMismatch(&'static str),
    #[error("matrix {0} is not symmetric positive definite")]
    NotPositiveDefinite(String),
    #[error("no Jacobian block for agent {0}")]
    MissingJacobianBlock(usize),
    #[error("no Υ(F̂) value for agent {0}")]
    MissingUpsilon(usize),
    #[error("no tracking error for neighbor {0}")]
    MissingNeighborError(usize),
    #[error("least-squares gain lost positive definiteness")]
    GammaNotPd,
    #[error("invalid gain: {0}")]
    InvalidGain(String),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

fn check_spd(name: &str, m: &DMatrix<f64>) -> Result<(), ValueError> {
    if !m.is_square() || (m - m.transpose()).amax() > 1e-12 || m.clone().cholesky().is_none() {
        return Err(ValueError::NotPositiveDefinite(name.to_string()));
    }
    Ok(())
}

/// `r_i = e_iᵀ Q_ii e_i + uᵀ R u + Σ_j a_ij e_jᵀ Q_ij e_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    q_ii: DMatrix<f64>,
    q_ij: BTreeMap<usize, DMatrix<f64>>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
}

impl CostSpec {
    pub fn new(q_ii: DMatrix<f64>, q_ij: BTreeMap<usize, DMatrix<f64>>, r: DMatrix<f64>) -> Result<Self, ValueError> {
        check_spd("Q_ii", &q_ii)?;
        for (j, q) in &q_ij {
            check_spd(&format!("Q_i{}", j + 1), q)?;
            if q.shape() != q_ii.shape() {
                return Err(ValueError::DimensionMismatch("Q_ij"));
            }
        }
        check_spd("R", &r)?;
        let r_inv = r.clone().cholesky().expect("checked above").inverse();
        Ok(Self { q_ii, q_ij, r, r_inv })
    }

    pub fn q_ii(&self) -> &DMatrix<f64> {
        &self.q_ii
    }

    pub fn q_ij(&self) -> &BTreeMap<usize, DMatrix<f64>> {
        &self.q_ij
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticState {
    pub wc: DVector<f64>,
    /// Least-squares gain matrix `γ`.
    pub gamma: DMatrix<f64>,
    /// `φ_c` (listed as `η_c` in parameter tables).
    pub phi_c: f64,
    pub nu: f64,
    /// Forgetting factor in (0, 1).
    pub lambda: f64,
    /// Frobenius-norm ceiling on `γ`; forgetting fades out as it is
    /// approached. `None` leaves the update law unmodified.
    pub gamma_cap: Option<f64>,
}

impl CriticState {
    pub fn validate(&self) -> Result<(), ValueError> {
        if !(self.phi_c > 0.0) || !(self.nu > 0.0) {
            return Err(ValueError::InvalidGain("eta_c and nu must be positive".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(ValueError::InvalidGain(format!("lambda = {} must lie in (0, 1)", self.lambda)));
        }
        if self.gamma.shape() != (self.wc.len(), self.wc.len()) {
            return Err(ValueError::DimensionMismatch("gamma"));
        }
        if let Some(cap) = self.gamma_cap {
            if !(cap > self.gamma.norm()) {
                return Err(ValueError::InvalidGain(format!(
                    "gamma_cap {cap} must exceed the initial gain norm {}",
                    self.gamma.norm()
                )));
            }
        }
        check_spd("gamma", &self.gamma)
    }

    /// `(Ŵ_c', γ')`:
    ///
    /// ```text
    /// Ŵ_c' = −φ_c γ ω δ / (1 + ν ωᵀγω)
    /// γ'   = −φ_c (−λ γ + γ ωωᵀ γ / (1 + ν ωᵀγω))
    /// ```
    pub fn rates(&self, omega: &DVector<f64>, delta: f64) -> Result<(DVector<f64>, DMatrix<f64>), ValueError> {
        if omega.len() != self.wc.len() {
            return Err(ValueError::DimensionMismatch("omega"));
        }
        if self.gamma.clone().cholesky().is_none() {
            return Err(ValueError::GammaNotPd);
        }
        let g_omega = &self.gamma * omega;
        let rho = 1.0 + self.nu * omega.dot(&g_omega);
        let wc_dot = &g_omega * (-self.phi_c * delta / rho);
        let forgetting = self.lambda * self.forgetting_scale();
        let gamma_dot = (&self.gamma * forgetting - &g_omega * g_omega.transpose() / rho) * self.phi_c;
        Ok((wc_dot, gamma_dot))
    }

    fn forgetting_scale(&self) -> f64 {
        match self.gamma_cap {
            None => 1.0,
            Some(cap) => smootherstep((cap - self.gamma.norm()) / (GAMMA_CAP_BAND * cap)),
        }
    }

    pub fn symmetrize(&mut self) {
        self.gamma = (&self.gamma + self.gamma.transpose()) * 0.5;
    }
}

/// Information-form coordinates of a critic: `P = γ⁻¹` and `ζ = P Ŵ_c`.
///
/// Along solutions of the critic update these obey
///
/// ```text
/// P' = φ_c (−λ c P + ωωᵀ/ρ)
/// ζ' = −φ_c λ c ζ − φ_c ω (δ − Ŵ_cᵀω)/ρ
/// ```
///
/// with `ρ = 1 + ν ωᵀγω` and `c` the cap factor on forgetting. In the
/// original coordinates `Ŵ_c` relaxes at rates up to `φ_c/ν`; here nothing
/// does, so an explicit integrator can use the plant's step size.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticInfo {
    pub p: DMatrix<f64>,
    pub zeta: DVector<f64>,
}

impl CriticInfo {
    pub fn from_critic(critic: &CriticState) -> Result<Self, ValueError> {
        let chol = critic.gamma.clone().cholesky().ok_or(ValueError::GammaNotPd)?;
        let p = chol.inverse();
        let zeta = &p * &critic.wc;
        Ok(Self { p, zeta })
    }

    /// Writes `γ = P⁻¹` and `Ŵ_c = P⁻¹ζ` into `critic`.
    pub fn recover_into(&self, critic: &mut CriticState) -> Result<(), ValueError> {
        if self.p.shape() != critic.gamma.shape() || self.zeta.len() != critic.wc.len() {
            return Err(ValueError::DimensionMismatch("critic information form"));
        }
        let chol = self.p.clone().cholesky().ok_or(ValueError::GammaNotPd)?;
        critic.wc = chol.solve(&self.zeta);
        critic.gamma = chol.inverse();
        Ok(())
    }

    pub fn symmetrize(&mut self) {
        self.p = (&self.p + self.p.transpose()) * 0.5;
    }
}

impl CriticState {
    /// `(P', ζ')` for the information form, given `P = γ⁻¹`.
    pub fn info_rates(
        &self,
        p: &DMatrix<f64>,
        omega: &DVector<f64>,
        delta: f64,
    ) -> Result<(DMatrix<f64>, DVector<f64>), ValueError> {
        if omega.len() != self.wc.len() || p.shape() != self.gamma.shape() {
            return Err(ValueError::DimensionMismatch("omega"));
        }
        let rho = 1.0 + self.nu * omega.dot(&(&self.gamma * omega));
        if !(rho > 0.0) {
            return Err(ValueError::GammaNotPd);
        }
        let forgetting = self.lambda * self.forgetting_scale();
        let zeta = p * &self.wc;
        let cost = delta - self.wc.dot(omega);
        let p_dot = (omega * omega.transpose() / rho - p * forgetting) * self.phi_c;
        let zeta_dot = (zeta * forgetting + omega * (cost / rho)) * (-self.phi_c);
        Ok((p_dot, zeta_dot))
    }
}

/// Normalized regressor `ψ = ω / √(1 + ν ωᵀγω)`.
pub fn regressor(omega: &DVector<f64>, gamma: &DMatrix<f64>, nu: f64) -> DVector<f64> {
    let rho = 1.0 + nu * omega.dot(&(gamma * omega));
    omega / rho.sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorState {
    pub wa: DVector<f64>,
    /// `φ_a2` (listed as `η_a` in parameter tables).
    pub phi_a2: f64,
    pub bound: f64,
}

impl ActorState {
    /// `Ŵ_a' = proj{−φ_a2 (Ŵ_a − Ŵ_c)}`.
    pub fn rate(&self, wc: &DVector<f64>) -> Result<DVector<f64>, ValueError> {
        if wc.len() != self.wa.len() {
            return Err(ValueError::DimensionMismatch("actor/critic weights"));
        }
        let raw = (&self.wa - wc) * (-self.phi_a2);
        Ok(projection::project_vector(&self.wa, &raw, self.bound)?)
    }
}

fn block<'a>(participants: &[usize], blocks: &'a [DMatrix<f64>], agent: usize) -> Result<&'a DMatrix<f64>, ValueError> {
    participants
        .iter()
        .position(|&p| p == agent)
        .and_then(|slot| blocks.get(slot))
        .ok_or(ValueError::MissingJacobianBlock(agent))
}

/// `L_σi = (a_i0 + d_i)(∂σ/∂e_i)ᵀ − Σ_{j∈N_i} a_ji (∂σ/∂e_j)ᵀ`, an `n × M` matrix.
///
/// `a_ji` is the weight of the edge `i -> j`, exactly as in the closed-form
/// policy; it is zero unless `i` is also an in-neighbor of `j`.
pub fn l_sigma(
    topology: &Topology,
    i: usize,
    participants: &[usize],
    jacobians: &[DMatrix<f64>],
) -> Result<DMatrix<f64>, ValueError> {
    let own = block(participants, jacobians, i)?;
    let mut out = own.transpose() * (topology.pinning(i) + topology.in_degree(i));
    for &j in topology.neighbors(i) {
        let jac = block(participants, jacobians, j)?;
        let a_ji = topology.weight(j, i);
        if a_ji != 0.0 {
            out -= jac.transpose() * a_ji;
        }
    }
    Ok(out)
}

/// `u = −½ R⁻¹ gᵀ L_σ Ŵ_a`.
pub fn control_policy(
    wa: &DVector<f64>,
    r_inv: &DMatrix<f64>,
    g: &DMatrix<f64>,
    l_sigma: &DMatrix<f64>,
) -> Result<DVector<f64>, ValueError> {
    if l_sigma.ncols() != wa.len() || g.nrows() != l_sigma.nrows() || r_inv.nrows() != g.ncols() {
        return Err(ValueError::DimensionMismatch("control policy"));
    }
    Ok(r_inv * g.transpose() * (l_sigma * wa) * -0.5)
}

/// `ω_i = Σ_{j∈{i}∪N_i} (∂σ_i/∂e_j) Υ_j(F̂)`, with `upsilon_f_hat` in
/// participant order.
pub fn omega(
    topology: &Topology,
    i: usize,
    participants: &[usize],
    jacobians: &[DMatrix<f64>],
    upsilon_f_hat: &[Option<DVector<f64>>],
) -> Result<DVector<f64>, ValueError> {
    let m = jacobians.first().map_or(0, |j| j.nrows());
    let mut out = DVector::zeros(m);
    for &j in std::iter::once(&i).chain(topology.neighbors(i)) {
        let slot = participants.iter().position(|&p| p == j).ok_or(ValueError::MissingJacobianBlock(j))?;
        let jac = jacobians.get(slot).ok_or(ValueError::MissingJacobianBlock(j))?;
        let ups = upsilon_f_hat
            .get(slot)
            .and_then(|u| u.as_ref())
            .ok_or(ValueError::MissingUpsilon(j))?;
        if jac.ncols() != ups.len() || jac.nrows() != m {
            return Err(ValueError::DimensionMismatch("omega"));
        }
        out += jac * ups;
    }
    Ok(out)
}

/// A neighbor's contribution to the running cost: `(j, a_ij, e_j)`.
pub type NeighborError<'a> = (usize, f64, &'a DVector<f64>);

/// `δ_i = e_iᵀ Q_ii e_i + uᵀ R u + Σ_j a_ij e_jᵀ Q_ij e_j + Ŵ_cᵀ ω_i`.
///
/// Only measurable quantities enter: `ω` is built from `F̂`, never from the
/// true drift.
pub fn bellman_error(
    cost: &CostSpec,
    e_i: &DVector<f64>,
    neighbors: &[NeighborError<'_>],
    u: &DVector<f64>,
    wc: &DVector<f64>,
    omega: &DVector<f64>,
) -> Result<f64, ValueError> {
    if wc.len() != omega.len() || u.len() != cost.r.nrows() || e_i.len() != cost.q_ii.nrows() {
        return Err(ValueError::DimensionMismatch("bellman error"));
    }
    let mut delta = quad(e_i, &cost.q_ii) + quad(u, &cost.r) + wc.dot(omega);
    for (&j, q) in &cost.q_ij {
        let &(_, a_ij, e_j) = neighbors
            .iter()
            .find(|(k, _, _)| *k == j)
            .ok_or(ValueError::MissingNeighborError(j))?;
        delta += a_ij * quad(e_j, q);
    }
    Ok(delta)
}

fn quad(v: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    v.dot(&(m * v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisSet, MonomialSpec};
    use crate::graph::Edge;
    use nalgebra::dvector;

    fn one(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar_critic(gamma: f64, lambda: f64) -> CriticState {
        CriticState {
            wc: dvector![0.0],
            gamma: one(gamma),
            phi_c: 1.0,
            nu: 1.0,
            lambda,
            gamma_cap: None,
        }
    }

    #[test]
    fn critic_scalar_hand_values() {
        let c = scalar_critic(2.0, 0.5);
        let (wc, g) = c.rates(&dvector![1.0], 3.0).unwrap();
        assert!((wc[0] + 2.0).abs() < 1e-15);
        assert!((g[(0, 0)] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn critic_zero_delta_and_zero_omega() {
        let c = scalar_critic(2.0, 0.5);
        let (wc, _) = c.rates(&dvector![1.0], 0.0).unwrap();
        assert_eq!(wc, dvector![0.0]);
        let (wc, g) = c.rates(&dvector![0.0], 5.0).unwrap();
        assert_eq!(wc, dvector![0.0]);
        assert_eq!(g, one(1.0));
    }

    #[test]
    fn critic_rejects_indefinite_gain() {
        let c = scalar_critic(-1.0, 0.5);
        assert_eq!(c.rates(&dvector![1.0], 1.0), Err(ValueError::GammaNotPd));
    }

    #[test]
    fn gamma_cap_switches_off_forgetting() {
        let mut c = scalar_critic(10.0, 0.5);
        c.gamma_cap = Some(100.0);
        assert_eq!(c.rates(&dvector![0.0], 0.0).unwrap().1, one(5.0));
        c.gamma = one(100.0);
        assert_eq!(c.rates(&dvector![0.0], 0.0).unwrap().1, one(0.0));
        c.gamma = one(95.0);
        let g = c.rates(&dvector![0.0], 0.0).unwrap().1[(0, 0)];
        assert!(g > 0.0 && g < 47.5);
    }

    #[test]
    fn regressor_values_and_bound() {
        assert_eq!(regressor(&dvector![0.0, 0.0], &DMatrix::identity(2, 2), 1.0), dvector![0.0, 0.0]);
        let psi = regressor(&dvector![1.0], &one(2.0), 1.0);
        assert!((psi[0] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn actor_rates() {
        let a = ActorState { wa: dvector![1.0, 2.0], phi_a2: 0.5, bound: 10.0 };
        assert_eq!(a.rate(&dvector![1.0, 2.0]).unwrap(), dvector![0.0, 0.0]);
        assert_eq!(a.rate(&dvector![3.0, 0.0]).unwrap(), dvector![1.0, -1.0]);
        let a = ActorState { wa: dvector![10.0, 0.0], phi_a2: 1.0, bound: 10.0 };
        let r = a.rate(&dvector![20.0, 3.0]).unwrap();
        assert!(r[0].abs() < 1e-15);
        assert_eq!(r[1], 3.0);
    }

    #[test]
    fn bellman_error_simple_cases() {
        let cost = CostSpec::new(one(1.0), BTreeMap::new(), one(1.0)).unwrap();
        let z = dvector![0.0];
        assert_eq!(bellman_error(&cost, &z, &[], &z, &z, &z).unwrap(), 0.0);
        assert_eq!(bellman_error(&cost, &dvector![1.0], &[], &z, &z, &z).unwrap(), 1.0);

        let mut q_ij = BTreeMap::new();
        q_ij.insert(2, DMatrix::identity(2, 2) * 0.5);
        let cost = CostSpec::new(DMatrix::identity(2, 2), q_ij, one(1.0)).unwrap();
        let e1 = dvector![1.0, 0.0];
        let e3 = dvector![0.0, 2.0];
        let d = bellman_error(&cost, &e1, &[(2, 1.0, &e3)], &dvector![1.0], &dvector![1.0], &dvector![-0.5]).unwrap();
        assert!((d - (1.0 + 1.0 + 2.0 - 0.5)).abs() < 1e-15);
        assert_eq!(
            bellman_error(&cost, &e1, &[], &dvector![1.0], &dvector![1.0], &dvector![0.0]),
            Err(ValueError::MissingNeighborError(2))
        );
    }

    #[test]
    fn cost_requires_spd() {
        assert!(CostSpec::new(one(-1.0), BTreeMap::new(), one(1.0)).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(CostSpec::new(asym, BTreeMap::new(), one(1.0)).is_err());
    }

    #[test]
    fn scalar_policy_is_linear_feedback() {
        let t = Topology::build(1, 1, &[], &[(0, 1.0)]).unwrap();
        let basis = BasisSet::quadratic(&[0], 1, &MonomialSpec::All).unwrap();
        let e = 0.7;
        let jac = basis.jacobians(&[dvector![e]]).unwrap();
        let l = l_sigma(&t, 0, basis.participants(), &jac).unwrap();
        assert!((l[(0, 0)] - 2.0 * e).abs() < 1e-15);
        let p = 0.4;
        let u = control_policy(&dvector![p], &one(1.0), &one(1.0), &l).unwrap();
        assert!((u[0] + p * e).abs() < 1e-15);
        assert_eq!(control_policy(&dvector![0.0], &one(1.0), &one(1.0), &l).unwrap(), dvector![0.0]);

        let w = omega(&t, 0, basis.participants(), &jac, &[Some(dvector![1.5])]).unwrap();
        assert!((w[0] - 2.0 * e * 1.5).abs() < 1e-15);
    }

    #[test]
    fn l_sigma_uses_outgoing_edge_weights() {
        // N_1 = {3}, and agent 1 also feeds agent 3 with weight 0.25
        let t = Topology::build(3, 1, &[Edge::new(2, 0, 1.0), Edge::new(0, 2, 0.25)], &[(0, 2.0)]).unwrap();
        let basis = BasisSet::quadratic(&[0, 2], 1, &MonomialSpec::All).unwrap();
        let errs = [dvector![0.5], dvector![-1.0]];
        let jac = basis.jacobians(&errs).unwrap();
        let l = l_sigma(&t, 0, basis.participants(), &jac).unwrap();
        let expected = jac[0].transpose() * 3.0 - jac[1].transpose() * 0.25;
        assert_eq!(l, expected);

        // agent 2 of a graph where nobody listens to it beyond pinning
        let t = Topology::build(2, 1, &[Edge::new(0, 1, 1.0)], &[(0, 1.0)]).unwrap();
        let basis = BasisSet::quadratic(&[1, 0], 1, &MonomialSpec::All).unwrap();
        let jac = basis.jacobians(&[dvector![0.3], dvector![0.1]]).unwrap();
        let l = l_sigma(&t, 1, basis.participants(), &jac).unwrap();
        assert_eq!(l, jac[0].transpose());
    }

    #[test]
    fn zero_error_gives_zero_policy_and_omega() {
        let t = Topology::build(3, 2, &[Edge::new(2, 0, 1.0), Edge::new(0, 2, 1.0)], &[(0, 1.0)]).unwrap();
        let basis = BasisSet::quadratic(&[0, 2], 2, &MonomialSpec::All).unwrap();
        let z = [DVector::zeros(2), DVector::zeros(2)];
        let jac = basis.jacobians(&z).unwrap();
        let l = l_sigma(&t, 0, basis.participants(), &jac).unwrap();
        let g = DMatrix::from_column_slice(2, 1, &[0.0, 3.0]);
        let u = control_policy(&DVector::from_element(10, 1.0), &one(1.0), &g, &l).unwrap();
        assert_eq!(u, dvector![0.0]);
        let ups = vec![Some(dvector![4.0, -2.0]), Some(dvector![1.0, 1.0])];
        assert_eq!(omega(&t, 0, basis.participants(), &jac, &ups).unwrap(), DVector::zeros(10));
        assert_eq!(
            omega(&t, 0, basis.participants(), &jac, &[Some(dvector![1.0, 1.0]), None]),
            Err(ValueError::MissingUpsilon(2))
        );
    }

    #[test]
    fn information_form_matches_chain_rule() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -0.1, 0.0, 1.0, 0.4, 0.2, 0.0, 1.5]);
        for cap in [None, Some(60.0)] {
            let critic = CriticState {
                wc: DVector::from_vec(vec![0.7, -1.2, 2.0]),
                gamma: &a * a.transpose() * 3.0,
                phi_c: 20.0,
                nu: 0.005,
                lambda: 0.5,
                gamma_cap: cap,
            };
            let omega = DVector::from_vec(vec![1.5, -0.4, 3.0]);
            let delta = 0.8;
            let info = CriticInfo::from_critic(&critic).unwrap();
            let (wc_dot, gamma_dot) = critic.rates(&omega, delta).unwrap();
            let (p_dot, zeta_dot) = critic.info_rates(&info.p, &omega, delta).unwrap();
            let p_expect = -(&info.p * &gamma_dot * &info.p);
            let zeta_expect = &p_expect * &critic.wc + &info.p * &wc_dot;
            assert!((&p_dot - &p_expect).amax() < 1e-9 * p_expect.amax());
            assert!((&zeta_dot - &zeta_expect).amax() < 1e-9 * zeta_expect.amax());

            let mut back = critic.clone();
            back.wc.fill(0.0);
            info.recover_into(&mut back).unwrap();
            assert!((&back.wc - &critic.wc).amax() < 1e-12);
            assert!((&back.gamma - &critic.gamma).amax() < 1e-10);
        }
    }

    #[test]
    fn information_form_rejects_indefinite() {
        let mut critic = scalar_critic(2.0, 0.5);
        let info = CriticInfo { p: one(-1.0), zeta: DVector::from_element(1, 1.0) };
        assert_eq!(info.recover_into(&mut critic), Err(ValueError::GammaNotPd));
    }
}
