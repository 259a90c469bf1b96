//! Incremental minimization of the time-discrete viscoelastic problem.
//!
//! Step `k` minimizes
//! `M(v) + τ⁻¹ R(∇u^{k-1}, ∇v − ∇u^{k-1}) − ⟨l^k, v⟩`
//! over deformations equal to the identity on the Dirichlet faces. The
//! mechanical energy is `M(v) = ∫ W(y, ∇v) + H(y, ∇²v)`, and `l^k` is the
//! load averaged over `((k−1)τ, kτ)`, evaluated at the midpoint.

use crate::c1grid::{C1Field, C1Space, ElementBasis, Jet2, QpInfo};
use crate::exec::ExecPolicy;
use crate::geometry::{FacetTag, PerforatedDomain, Rational};
use crate::materials::{MaterialBundle, MaterialError};
use crate::solver::{Discretization, FactorCache, NewtonOptions, PointEnergy, PointOutput, SolveError};
use crate::tensor::{Mat2, Tens3};
use nalgebra::Matrix4;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MicroError {
    #[error("det ∇u = {det:e} is not positive at ({x:?})")]
    NonPositiveDet { det: f64, x: [f64; 2] },
    #[error("T/τ must be a positive integer (T = {t}, τ = {tau})")]
    InvalidTimeGrid { t: String, tau: String },
    #[error("step {step}: {source}")]
    Step { step: usize, source: SolveError },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("space: {0}")]
    Space(String),
}

/// Pointwise constitutive response used by the incremental functional.
///
/// Implemented by [`MaterialBundle`] for the heterogeneous problem and by the
/// homogenized law for the macroscopic one.
pub trait ConstitutiveLaw: Sync {
    fn elastic(&self, info: &QpInfo, f: &Mat2) -> Result<(f64, Mat2), MaterialError>;
    fn elastic_curvature(&self, info: &QpInfo, f: &Mat2) -> Result<Matrix4<f64>, MaterialError>;
    /// `(H, ∂_G H, ∂²_G H)`; the curvature may be zero when not requested.
    fn gradient(&self, info: &QpInfo, g: &Tens3, curvature: bool) -> Result<(f64, Tens3, [[f64; 8]; 8]), SolveError>;
    fn dissipation(&self, info: &QpInfo, f: &Mat2, fdot: &Mat2) -> (f64, Mat2);
    fn dissipation_curvature(&self, info: &QpInfo, f: &Mat2) -> Matrix4<f64>;
}

impl ConstitutiveLaw for MaterialBundle {
    fn elastic(&self, info: &QpInfo, f: &Mat2) -> Result<(f64, Mat2), MaterialError> {
        self.elastic.eval(info.y, f)
    }

    fn elastic_curvature(&self, info: &QpInfo, f: &Mat2) -> Result<Matrix4<f64>, MaterialError> {
        self.elastic.curvature(info.y, f)
    }

    fn gradient(&self, info: &QpInfo, g: &Tens3, curvature: bool) -> Result<(f64, Tens3, [[f64; 8]; 8]), SolveError> {
        let (h, dh) = self.gradient.eval(info.y, g);
        let c = if curvature {
            self.gradient.curvature(info.y, g)
        } else {
            [[0.0; 8]; 8]
        };
        Ok((h, dh, c))
    }

    fn dissipation(&self, info: &QpInfo, f: &Mat2, fdot: &Mat2) -> (f64, Mat2) {
        self.dissipation.eval(info.y, f, fdot)
    }

    fn dissipation_curvature(&self, info: &QpInfo, f: &Mat2) -> Matrix4<f64> {
        self.dissipation.curvature(info.y, f)
    }
}

/// Spatially uniform load `base + t · rate`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub base: [f64; 2],
    pub rate: [f64; 2],
}

impl LoadProfile {
    pub fn at(&self, t: f64) -> [f64; 2] {
        [self.base[0] + t * self.rate[0], self.base[1] + t * self.rate[1]]
    }

    pub fn is_zero(&self) -> bool {
        self.base == [0.0; 2] && self.rate == [0.0; 2]
    }
}

/// Body force `f` on `Ω_ε` and traction `g` on the hole boundaries `Γ_ε`.
///
/// The traction is given in cell units: the applied surface density on
/// `Γ_ε` is `ε g`, whose `L²(Γ_ε)` norm is of order `√ε`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Loads {
    pub body: LoadProfile,
    pub traction: LoadProfile,
}

impl Loads {
    pub fn zero() -> Self {
        Self::default()
    }

    /// `f(t) = t · rate`, no traction.
    pub fn ramp(rate: [f64; 2]) -> Self {
        Self {
            body: LoadProfile { base: [0.0; 2], rate },
            traction: LoadProfile::default(),
        }
    }
}

/// Uniform time grid with `τ · N = T` exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeGrid {
    t_final: Rational,
    tau: Rational,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: Rational, tau: Rational) -> Result<Self, MicroError> {
        let err = || MicroError::InvalidTimeGrid {
            t: t_final.to_string(),
            tau: tau.to_string(),
        };
        if tau <= Rational::zero() || t_final <= Rational::zero() {
            return Err(err());
        }
        let n = t_final / tau;
        if !n.is_integer() {
            return Err(err());
        }
        Ok(Self {
            t_final,
            tau,
            n_steps: n.to_integer() as usize,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau.to_f64().unwrap_or(f64::NAN)
    }

    pub fn tau_exact(&self) -> Rational {
        self.tau
    }

    pub fn t_final(&self) -> Rational {
        self.t_final
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// `t_k = k τ`
    pub fn time(&self, k: usize) -> f64 {
        (self.tau * Rational::from_integer(k as i64)).to_f64().unwrap_or(f64::NAN)
    }

    /// Midpoint of `((k−1)τ, kτ)`.
    pub fn midpoint(&self, k: usize) -> f64 {
        (self.tau * Rational::new(2 * k as i64 - 1, 2)).to_f64().unwrap_or(f64::NAN)
    }

    /// Grid with `τ / factor`.
    pub fn refined(&self, factor: i64) -> Self {
        Self::new(self.t_final, self.tau / Rational::from_integer(factor)).expect("refinement keeps T/τ integral")
    }
}

/// Diagnostics of one accepted step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub k: usize,
    pub time: f64,
    /// `M(u^k)`
    pub energy: f64,
    /// `M(u^{k-1})`
    pub energy_prev: f64,
    /// `τ⁻¹ R(u^{k-1}, u^k − u^{k-1})`
    pub dissipation: f64,
    /// `⟨l^k, u^k⟩`
    pub load_work: f64,
    /// `⟨l^k, u^{k-1}⟩`
    pub load_work_prev: f64,
    /// `τ ‖δ_τ ∇u^k‖²_{L²}`
    pub rate_norm_sq: f64,
    pub det_min: f64,
    pub newton_iters: usize,
    pub residual_norm: f64,
    /// Objective at `u^{k-1}` minus objective at `u^k`.
    pub objective_drop: f64,
}

impl StepReport {
    /// Slack of the per-step minimization inequality; non-negative when it
    /// holds at relative tolerance `rel`.
    pub fn inequality_slack(&self, rel: f64) -> f64 {
        let lhs = self.energy + self.dissipation - self.load_work;
        let rhs = self.energy_prev - self.load_work_prev + rel * (1.0 + self.energy_prev.abs());
        rhs - lhs
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<C1Field>,
    pub reports: Vec<StepReport>,
}

impl Trajectory {
    pub fn final_state(&self) -> &C1Field {
        self.states.last().expect("trajectory has an initial state")
    }

    /// `Σ_k τ ‖δ_τ ∇u^k‖²`
    pub fn dissipation_sum(&self) -> f64 {
        self.reports.iter().map(|r| r.rate_norm_sq).sum()
    }

    pub fn det_min(&self) -> f64 {
        self.reports.iter().map(|r| r.det_min).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOptions {
    pub newton: NewtonOptions,
    pub det_floor: f64,
    /// Relative tolerance of the per-step inequality.
    pub tol_step: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions::default(),
            det_floor: 1e-3,
            tol_step: 1e-8,
        }
    }
}

/// Density of the incremental functional at one quadrature point.
pub struct IncrementalDensity<'a, L: ConstitutiveLaw> {
    pub law: &'a L,
    /// `∇u^{k-1}` per quadrature point, indexed `slot * n_qp + q`.
    pub f_prev: &'a [Mat2],
    pub n_qp: usize,
    pub inv_tau: f64,
    pub det_floor: f64,
}

impl<L: ConstitutiveLaw> PointEnergy for IncrementalDensity<'_, L> {
    fn eval(&self, info: &QpInfo, jet: &Jet2, curvature: bool) -> Result<PointOutput, SolveError> {
        let f = &jet.grad;
        let det = f.determinant();
        if !(det >= self.det_floor) {
            return Err(SolveError::DetFloor { det, x: info.x });
        }
        let fp = &self.f_prev[info.slot * self.n_qp + info.q];
        let (w, dw) = self.law.elastic(info, f)?;
        let (h, dh, ch) = self.law.gradient(info, &jet.hess, curvature)?;
        let (r, dr) = self.law.dissipation(info, fp, &(f - fp));
        let mut out = PointOutput {
            e: w + h + self.inv_tau * r,
            df: dw + self.inv_tau * dr,
            dg: dh,
            ..PointOutput::zero()
        };
        if curvature {
            out.cf = self.law.elastic_curvature(info, f)? + self.inv_tau * self.law.dissipation_curvature(info, fp);
            out.cg = ch;
        }
        Ok(out)
    }
}

struct MechanicalDensity<'a, L: ConstitutiveLaw>(&'a L);

impl<L: ConstitutiveLaw> PointEnergy for MechanicalDensity<'_, L> {
    fn eval(&self, info: &QpInfo, jet: &Jet2, _: bool) -> Result<PointOutput, SolveError> {
        let det = jet.grad.determinant();
        if !(det > 0.0) {
            return Err(SolveError::DetFloor { det, x: info.x });
        }
        let (w, _) = self.0.elastic(info, &jet.grad)?;
        let (h, _, _) = self.0.gradient(info, &jet.hess, false)?;
        Ok(PointOutput {
            e: w + h,
            ..PointOutput::zero()
        })
    }
}

/// Gradients of a field at every quadrature point, indexed `slot * n_qp + q`.
pub fn qp_gradients(u: &C1Field, policy: &ExecPolicy) -> Vec<Mat2> {
    let sp = u.space();
    policy
        .map(sp.n_elements(), |slot| u.element_jets(slot).into_iter().map(|j| j.grad).collect::<Vec<_>>())
        .into_iter()
        .flatten()
        .collect()
}

/// Load vector of `⟨l, v⟩ = ∫ f·v + ∫_{Γ_ε} ε g·v dσ` for uniform `f`, `g`.
/// Surface terms are added only when `domain` is given.
pub fn load_vector(space: &C1Space, body: [f64; 2], traction: Option<(&PerforatedDomain, [f64; 2])>) -> Vec<f64> {
    let mut out = vec![0.0; space.n_dofs()];
    if body != [0.0; 2] {
        for slot in 0..space.n_elements() {
            let dofs = space.element_dofs(slot);
            for (q, b) in space.basis().iter().enumerate() {
                let w = space.quad_weight(q);
                for c in 0..2 {
                    for s in 0..16 {
                        out[dofs[c * 16 + s]] += w * body[c] * b.val[s];
                    }
                }
            }
        }
    }
    if let Some((domain, g)) = traction {
        if g != [0.0; 2] {
            let eps = domain.eps_f64();
            let h = space.h();
            let (gx, gw) = crate::c1grid::gauss_legendre(space.quad_order());
            for facet in domain.facets().iter().filter(|f| f.tag == FacetTag::GammaEps) {
                let [ex, ey] = facet.solid_element;
                let Some(slot) = space.slot(ex, ey) else { continue };
                let dofs = space.element_dofs(slot);
                for (&t, &wt) in gx.iter().zip(&gw) {
                    let (s, tt) = if facet.vertical {
                        ((facet.node[0] - ex) as f64, t)
                    } else {
                        (t, (facet.node[1] - ey) as f64)
                    };
                    let b = ElementBasis::at(s, tt, h);
                    for c in 0..2 {
                        for sidx in 0..16 {
                            out[dofs[c * 16 + sidx]] += wt * h * eps * g[c] * b.val[sidx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `M(u) = ∫ W(y,∇u) + H(y,∇²u)`.
pub fn mechanical_energy<L: ConstitutiveLaw>(law: &L, u: &C1Field, policy: &ExecPolicy) -> Result<f64, MicroError> {
    let sp = u.space();
    let dens = MechanicalDensity(law);
    let parts = policy.map(sp.n_elements(), |slot| {
        let c = u.element_coeffs(slot);
        let mut acc = 0.0;
        for (q, b) in sp.basis().iter().enumerate() {
            let info = sp.qp_info(slot, q);
            let jet = C1Space::jet_from_local(b, &c);
            match dens.eval(&info, &jet, false) {
                Ok(p) => acc += info.weight * p.e,
                Err(SolveError::DetFloor { det, x }) => return Err((det, x)),
                Err(_) => return Err((f64::NAN, info.x)),
            }
        }
        Ok(acc)
    });
    let mut worst: Option<(f64, [f64; 2])> = None;
    let mut total = 0.0;
    for p in parts {
        match p {
            Ok(v) => total += v,
            Err((det, x)) => {
                if worst.is_none_or(|(d, _)| det < d || d.is_nan()) {
                    worst = Some((det, x));
                }
            }
        }
    }
    if let Some((det, x)) = worst {
        return Err(MicroError::NonPositiveDet { det, x });
    }
    Ok(total)
}

/// Minimum of `det ∇u` over all quadrature points.
pub fn det_min(u: &C1Field, policy: &ExecPolicy) -> f64 {
    u.det_min(policy)
}

/// Incremental problem on a fixed space with Dirichlet data of the identity.
pub struct IncrementalProblem<'a, L: ConstitutiveLaw> {
    pub disc: Discretization,
    pub law: &'a L,
    pub opts: StepOptions,
    pub policy: ExecPolicy,
    /// Domain providing `Γ_ε` for traction loads, if any.
    pub domain: Option<&'a PerforatedDomain>,
    /// Multiplier applied to the body force, `|Y_s|` for averaged loads.
    pub body_scale: f64,
    /// Body-force equivalent per unit traction, `|Γ|` for averaged loads.
    pub traction_as_body: f64,
    factors: FactorCache,
}

impl<'a, L: ConstitutiveLaw> IncrementalProblem<'a, L> {
    /// Heterogeneous problem on `Ω_ε`.
    pub fn on_domain(domain: &'a PerforatedDomain, law: &'a L, opts: StepOptions, policy: ExecPolicy) -> Result<Self, MicroError> {
        let space = C1Space::on_domain(domain);
        Self::with_space(space, law, opts, policy, Some(domain), 1.0, 0.0)
    }

    pub fn with_space(
        space: Arc<C1Space>,
        law: &'a L,
        opts: StepOptions,
        policy: ExecPolicy,
        domain: Option<&'a PerforatedDomain>,
        body_scale: f64,
        traction_as_body: f64,
    ) -> Result<Self, MicroError> {
        let map = space.dirichlet_map().map_err(|e| MicroError::Space(e.to_string()))?;
        let disc = Discretization::new(space, map, &policy)?;
        Ok(Self {
            disc,
            law,
            opts,
            policy,
            domain,
            body_scale,
            traction_as_body,
            factors: FactorCache::default(),
        })
    }

    pub fn space(&self) -> &Arc<C1Space> {
        &self.disc.space
    }

    /// `l^k` as a DOF vector, loads evaluated at time `t`.
    pub fn load_at(&self, loads: &Loads, t: f64) -> Vec<f64> {
        let f = loads.body.at(t);
        let g = loads.traction.at(t);
        let body = [
            self.body_scale * f[0] + self.traction_as_body * g[0],
            self.body_scale * f[1] + self.traction_as_body * g[1],
        ];
        load_vector(&self.disc.space, body, self.domain.map(|d| (d, g)))
    }

    pub fn identity(&self) -> C1Field {
        C1Field::identity(&self.disc.space)
    }

    fn density<'b>(&'b self, f_prev: &'b [Mat2], tau: f64) -> IncrementalDensity<'b, L> {
        IncrementalDensity {
            law: self.law,
            f_prev,
            n_qp: self.disc.space.n_qp(),
            inv_tau: 1.0 / tau,
            det_floor: self.opts.det_floor,
        }
    }

    /// One step from `u_prev`; `k` and `time` only label the report.
    pub fn step(&self, u_prev: &C1Field, tau: f64, load: &[f64], k: usize, time: f64) -> Result<(C1Field, StepReport), SolveError> {
        let f_prev = qp_gradients(u_prev, &self.policy);
        let dens = self.density(&f_prev, tau);
        let out = self
            .disc
            .minimize(&dens, load, u_prev.coeffs.clone(), &self.policy, &self.opts.newton, Some(&self.factors))?;
        let u_next = C1Field::from_coeffs(&self.disc.space, out.coeffs).expect("same space");
        let energy = mechanical_energy(self.law, &u_next, &self.policy).map_err(to_solve)?;
        let energy_prev = mechanical_energy(self.law, u_prev, &self.policy).map_err(to_solve)?;
        let dissipation = self.dissipation_term(&f_prev, &u_next, tau);
        let load_work = work(load, &u_next.coeffs);
        let load_work_prev = work(load, &u_prev.coeffs);
        let rate_norm_sq = {
            let mut diff = u_next.clone();
            for (d, p) in diff.coeffs.iter_mut().zip(&u_prev.coeffs) {
                *d -= p;
            }
            diff.norms_sq(&self.policy)[1] / tau
        };
        let obj_prev = energy_prev - load_work_prev;
        let obj_next = energy + dissipation - load_work;
        let report = StepReport {
            k,
            time,
            energy,
            energy_prev,
            dissipation,
            load_work,
            load_work_prev,
            rate_norm_sq,
            det_min: u_next.det_min(&self.policy),
            newton_iters: out.iters,
            residual_norm: out.residual,
            objective_drop: obj_prev - obj_next,
        };
        Ok((u_next, report))
    }

    /// `τ⁻¹ ∫ R(y, ∇u^{k-1}, ∇u^k − ∇u^{k-1})`.
    fn dissipation_term(&self, f_prev: &[Mat2], u: &C1Field, tau: f64) -> f64 {
        let sp = &self.disc.space;
        let nq = sp.n_qp();
        let parts = self.policy.map(sp.n_elements(), |slot| {
            let jets = u.element_jets(slot);
            let mut acc = 0.0;
            for (q, j) in jets.iter().enumerate() {
                let info = sp.qp_info(slot, q);
                let fp = &f_prev[slot * nq + q];
                acc += info.weight * self.law.dissipation(&info, fp, &(j.grad - fp)).0;
            }
            acc
        });
        parts.iter().sum::<f64>() / tau
    }

    /// Dual norm of the discrete Euler–Lagrange residual of step `k` at `u_k`.
    pub fn weak_residual(&self, u_k: &C1Field, u_prev: &C1Field, tau: f64, load: &[f64]) -> Result<f64, SolveError> {
        let f_prev = qp_gradients(u_prev, &self.policy);
        let dens = IncrementalDensity {
            det_floor: f64::MIN_POSITIVE,
            ..self.density(&f_prev, tau)
        };
        Ok(self.disc.residual(&dens, &u_k.coeffs, load, &self.policy)?.1)
    }

    /// Runs all steps of `grid` from `u_init`.
    pub fn run(&self, loads: &Loads, grid: &TimeGrid, u_init: C1Field) -> Result<Trajectory, MicroError> {
        let tau = grid.tau();
        let mut states = vec![u_init];
        let mut reports = Vec::with_capacity(grid.n_steps());
        for k in 1..=grid.n_steps() {
            let load = self.load_at(loads, grid.midpoint(k));
            let (u, r) = self
                .step(states.last().unwrap(), tau, &load, k, grid.time(k))
                .map_err(|source| MicroError::Step { step: k, source })?;
            states.push(u);
            reports.push(r);
        }
        Ok(Trajectory {
            grid: *grid,
            states,
            reports,
        })
    }
}

fn to_solve(e: MicroError) -> SolveError {
    match e {
        MicroError::NonPositiveDet { det, x } => SolveError::DetFloor { det, x },
        MicroError::Solve(s) => s,
        other => SolveError::Cell(other.to_string()),
    }
}

fn work(load: &[f64], c: &[f64]) -> f64 {
    load.iter().zip(c).map(|(l, c)| l * c).sum()
}

/// Heterogeneous incremental step on `Ω_ε`.
pub fn incremental_step(
    domain: &PerforatedDomain,
    bundle: &MaterialBundle,
    u_prev: &C1Field,
    tau: f64,
    load: &[f64],
    opts: StepOptions,
    policy: ExecPolicy,
) -> Result<(C1Field, StepReport), MicroError> {
    let p = IncrementalProblem::with_space(u_prev.space().clone(), bundle, opts, policy, Some(domain), 1.0, 0.0)?;
    Ok(p.step(u_prev, tau, load, 1, tau)?)
}

/// Trajectory of the heterogeneous problem from `u_init` (identity when `None`).
pub fn run_trajectory(
    domain: &PerforatedDomain,
    bundle: &MaterialBundle,
    loads: &Loads,
    grid: &TimeGrid,
    u_init: Option<C1Field>,
    opts: StepOptions,
    policy: ExecPolicy,
) -> Result<Trajectory, MicroError> {
    let p = IncrementalProblem::on_domain(domain, bundle, opts, policy)?;
    let u0 = u_init.unwrap_or_else(|| p.identity());
    p.run(loads, grid, u0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Face, Rect, UnitCell};

    fn domain(eps: Rational) -> PerforatedDomain {
        let cell = UnitCell::build(Some(Rect::square(Rational::new(1, 4), Rational::new(3, 4))), 8).unwrap();
        PerforatedDomain::build(cell, eps, &[Face::X1Lo]).unwrap()
    }

    #[test]
    fn time_grid_validation() {
        let g = TimeGrid::new(Rational::new(1, 10), Rational::new(1, 100)).unwrap();
        assert_eq!(g.n_steps(), 10);
        assert!((g.midpoint(1) - 0.005).abs() < 1e-18);
        assert!(TimeGrid::new(Rational::new(1, 10), Rational::new(3, 100)).is_err());
    }

    #[test]
    fn identity_energy_and_stationarity() {
        let d = domain(Rational::new(1, 2));
        let p = ExecPolicy::default();
        let unit = MaterialBundle::unit(4.0, 4.0);
        let prob = IncrementalProblem::on_domain(&d, &unit, StepOptions::default(), p).unwrap();
        let id = prob.identity();
        let m = mechanical_energy(&unit, &id, &p).unwrap();
        assert!((m - 3.75).abs() < 1e-12);
        let zero = vec![0.0; id.coeffs.len()];
        let (u, r) = prob.step(&id, 0.01, &zero, 1, 0.01).unwrap();
        assert!(r.newton_iters <= 1);
        assert!(r.residual_norm <= 1e-10);
        assert!((u.det_min(&p) - 1.0).abs() < 1e-12);
        assert!(prob.weak_residual(&u, &id, 0.01, &zero).unwrap() <= 1e-10);
    }

    #[test]
    fn nonpositive_det_is_reported() {
        let d = domain(Rational::new(1, 2));
        let sp = C1Space::on_domain(&d);
        let mut u = C1Field::identity(&sp);
        for n in 0..sp.n_nodes() {
            // reflect x1
            u.coeffs[C1Space::dof(n, 0, 0)] *= -1.0;
            u.coeffs[C1Space::dof(n, 0, 1)] *= -1.0;
        }
        let err = mechanical_energy(&MaterialBundle::default(), &u, &ExecPolicy::default()).unwrap_err();
        assert!(matches!(err, MicroError::NonPositiveDet { .. }));
    }

    #[test]
    fn ramp_step_decreases_objective() {
        let d = domain(Rational::new(1, 2));
        let p = ExecPolicy::default();
        let bundle = MaterialBundle::default();
        let prob = IncrementalProblem::on_domain(&d, &bundle, StepOptions::default(), p).unwrap();
        let id = prob.identity();
        let load = prob.load_at(&Loads::ramp([0.01, 0.0]), 0.005);
        let (u, r) = prob.step(&id, 0.01, &load, 1, 0.01).unwrap();
        assert!(r.objective_drop >= -1e-8 * (1.0 + r.energy_prev.abs()));
        assert!(r.inequality_slack(1e-8) >= 0.0);
        let res = prob.weak_residual(&u, &id, 0.01, &load).unwrap();
        assert!(res <= 1e-9, "{res}");
    }

    #[test]
    fn traction_load_total_force() {
        // ∫_{Γ_ε} ε g dσ = ε |Γ_ε| g = |Γ| g for unit area
        let d = domain(Rational::new(1, 4));
        let sp = C1Space::on_domain(&d);
        let l = load_vector(&sp, [0.0; 2], Some((&d, [1.0, 0.0])));
        let ones = C1Field::constant(&sp, [1.0, 0.0]);
        let total: f64 = l.iter().zip(&ones.coeffs).map(|(a, b)| a * b).sum();
        assert!((total - 2.0).abs() < 1e-12);
    }
}
