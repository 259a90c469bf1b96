//! Cell problems and the homogenized model.
//!
//! The homogenized strain-gradient potential is
//! `H_hom(G) = min_v ∫_{Y_s} H(y, G + ∇²_y v) dy` over periodic `v` on the
//! solid part of the cell. Constants are the only periodic fields with zero
//! second gradient, so one value DOF per component is pinned during the solve
//! and the mean over `Y_s` is removed afterwards.
//!
//! The averaged elastic and dissipation laws are cell integrals of separable
//! laws and reduce to the laws with their coefficient replaced by its
//! integral over `Y_s`.

use crate::c1grid::{C1Field, C1Space, Jet2, QpInfo, SpaceSource};
use crate::exec::ExecPolicy;
use crate::geometry::{Face, GeometryError, PerforatedDomain, Rational, UnitCell};
use crate::linalg::{dot, DofMap};
use crate::materials::{Coefficient, DissipationLaw, ElasticLaw, MaterialBundle, MaterialError, StrainGradientLaw};
use crate::micro::{ConstitutiveLaw, IncrementalProblem, Loads, MicroError, StepOptions, TimeGrid, Trajectory};
use crate::solver::{factor_with_shift, Discretization, NewtonOptions, PointEnergy, PointOutput, SolveError};
use crate::tensor::{sym_basis, sym_coords, Mat2, Tens3};
use nalgebra::{DMatrix, DVector, Matrix4, Matrix6};
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomogError {
    #[error("the homogenized tensor needs p = 2, got p = {0}")]
    NotQuadratic(f64),
    #[error("homogenized tensor is not positive definite")]
    NotPositiveDefinite,
    #[error("macroscopic domain must be unperforated")]
    PerforatedMacroDomain,
    #[error("cell solve: {0}")]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Micro(#[from] MicroError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("space: {0}")]
    Space(String),
}

/// Minimizer of one cell problem.
#[derive(Clone, Debug)]
pub struct CellSolution {
    pub g: Tens3,
    /// Corrector with zero mean over `Y_s`.
    pub u2: C1Field,
    /// `H_hom(G)`.
    pub value: f64,
    /// `∫_{Y_s} ∂_G H(y, G + ∇²u₂) dy`.
    pub hstress: Tens3,
    pub residual_norm: f64,
    pub newton_iters: usize,
}

struct CellDensity<'a> {
    law: &'a StrainGradientLaw,
    g: Tens3,
}

impl PointEnergy for CellDensity<'_> {
    fn eval(&self, info: &QpInfo, jet: &Jet2, curvature: bool) -> Result<PointOutput, SolveError> {
        let gt = self.g + jet.hess;
        let (h, dh) = self.law.eval(info.y, &gt);
        let mut out = PointOutput {
            e: h,
            dg: dh,
            ..PointOutput::zero()
        };
        if curvature {
            out.cg = self.law.curvature(info.y, &gt);
        }
        Ok(out)
    }
}

/// `∂²H(G + ∇²v) ⋮ dir`: assembling its gradient gives the mixed
/// derivative of the cell residual with respect to `G` in direction `dir`.
struct DirectionalStress<'a> {
    law: &'a StrainGradientLaw,
    g: Tens3,
    dir: Tens3,
}

impl PointEnergy for DirectionalStress<'_> {
    fn eval(&self, info: &QpInfo, jet: &Jet2, _: bool) -> Result<PointOutput, SolveError> {
        let c = self.law.curvature(info.y, &(self.g + jet.hess));
        let mut dg = Tens3::ZERO;
        for (i, row) in c.iter().enumerate() {
            dg[i] = row.iter().zip(self.dir.0).map(|(a, b)| a * b).sum();
        }
        Ok(PointOutput {
            dg,
            ..PointOutput::zero()
        })
    }
}

/// The periodic cell problem for one strain-gradient law.
pub struct CellProblem {
    law: StrainGradientLaw,
    disc: Discretization,
    solid_area: f64,
    pub opts: NewtonOptions,
    pub policy: ExecPolicy,
}

impl CellProblem {
    pub fn new(cell: &UnitCell, law: StrainGradientLaw, policy: ExecPolicy) -> Result<Self, HomogError> {
        let space = C1Space::build(SpaceSource::Cell(cell), true, 4).map_err(|e| HomogError::Space(e.to_string()))?;
        // node 0 is the cell corner, which is always solid
        let map = DofMap::new(space.n_dofs(), &[C1Space::dof(0, 0, 0), C1Space::dof(0, 1, 0)]);
        let disc = Discretization::new(space, map, &policy)?;
        Ok(Self {
            law,
            disc,
            solid_area: cell.solid_area().to_f64().unwrap_or(f64::NAN),
            opts: NewtonOptions::default(),
            policy,
        })
    }

    pub fn space(&self) -> &Arc<C1Space> {
        &self.disc.space
    }

    pub fn law(&self) -> &StrainGradientLaw {
        &self.law
    }

    pub fn dof_map(&self) -> &DofMap {
        &self.disc.map
    }

    /// Minimizes the cell functional at `g`, starting from `warm` if given.
    pub fn solve(&self, g: &Tens3, warm: Option<&C1Field>) -> Result<CellSolution, HomogError> {
        let sp = self.space();
        let start = match warm {
            Some(w) if Arc::ptr_eq(w.space(), sp) => w.coeffs.clone(),
            _ => vec![0.0; sp.n_dofs()],
        };
        let dens = CellDensity { law: &self.law, g: *g };
        let out = self.disc.minimize(&dens, &vec![0.0; sp.n_dofs()], start, &self.policy, &self.opts, None)?;
        let u2 = self.mean_free(C1Field::from_coeffs(sp, out.coeffs).expect("cell space"));
        let (value, hstress) = self.integrals(g, &u2)?;
        Ok(CellSolution {
            g: *g,
            u2,
            value,
            hstress,
            residual_norm: out.residual,
            newton_iters: out.iters,
        })
    }

    /// Shifts value DOFs so that each component has zero mean over `Y_s`.
    pub fn mean_free(&self, mut u: C1Field) -> C1Field {
        for c in 0..2 {
            let mean = u
                .integrate(&self.policy, |_, j| j.value[c])
                .expect("finite corrector")
                / self.solid_area;
            for n in 0..u.space().n_nodes() {
                u.coeffs[C1Space::dof(n, c, 0)] -= mean;
            }
        }
        u
    }

    /// `(∫ H, ∫ ∂_G H)` at `G + ∇²u`.
    fn integrals(&self, g: &Tens3, u: &C1Field) -> Result<(f64, Tens3), HomogError> {
        let sp = self.space();
        let parts = self.policy.map(sp.n_elements(), |slot| {
            let mut e = 0.0;
            let mut s = Tens3::ZERO;
            for (q, j) in u.element_jets(slot).iter().enumerate() {
                let info = sp.qp_info(slot, q);
                let (h, dh) = self.law.eval(info.y, &(*g + j.hess));
                e += info.weight * h;
                s += dh * info.weight;
            }
            (e, s)
        });
        let mut e = 0.0;
        let mut s = Tens3::ZERO;
        for (pe, ps) in parts {
            e += pe;
            s += ps;
        }
        if !e.is_finite() || !s.is_finite() {
            return Err(SolveError::NonFinite("cell integrals").into());
        }
        Ok((e, s))
    }

    /// Dual norm of the cell residual at `u` for macroscopic `g`.
    pub fn stationarity(&self, g: &Tens3, u: &C1Field) -> Result<f64, HomogError> {
        let dens = CellDensity { law: &self.law, g: *g };
        let zero = vec![0.0; u.coeffs.len()];
        Ok(self.disc.residual(&dens, &u.coeffs, &zero, &self.policy)?.1)
    }

    /// `∫_{Y_s} H(y, G) dy`, the value of the admissible field `v = 0`.
    pub fn unrelaxed_value(&self, g: &Tens3) -> Result<f64, HomogError> {
        Ok(self.integrals(g, &C1Field::zeros(self.space()))?.0)
    }

    /// Second derivative of `H_hom` at the solution, in the coordinates of
    /// [`sym_basis`]: `∫ E_a:C:E_b − b_aᵀ K⁻¹ b_b` with `K` the cell Hessian
    /// and `b_a` the mixed derivative of the cell residual.
    pub fn tangent(&self, sol: &CellSolution) -> Result<Matrix6<f64>, HomogError> {
        let seq = ExecPolicy::SEQUENTIAL;
        let dens = CellDensity { law: &self.law, g: sol.g };
        let (_, _, k) = self.disc.assemble(&dens, &sol.u2.coeffs, &seq, true)?;
        let factor = factor_with_shift(k.expect("requested Hessian"))?;
        let basis = sym_basis();
        let mut b = Vec::with_capacity(6);
        let mut x = Vec::with_capacity(6);
        for e in basis {
            let dir = DirectionalStress {
                law: &self.law,
                g: sol.g,
                dir: e,
            };
            let (_, ba, _) = self.disc.assemble(&dir, &sol.u2.coeffs, &seq, false)?;
            x.push(factor.solve(&ba));
            b.push(ba);
        }
        let sp = self.space();
        let mut t = Matrix6::zeros();
        for slot in 0..sp.n_elements() {
            for (q, j) in sol.u2.element_jets(slot).iter().enumerate() {
                let info = sp.qp_info(slot, q);
                let c = self.law.curvature(info.y, &(sol.g + j.hess));
                for (a, ea) in basis.iter().enumerate() {
                    for (bb, eb) in basis.iter().enumerate() {
                        let mut acc = 0.0;
                        for i in 0..8 {
                            for l in 0..8 {
                                acc += ea[i] * c[i][l] * eb[l];
                            }
                        }
                        t[(a, bb)] += info.weight * acc;
                    }
                }
            }
        }
        for a in 0..6 {
            for c in 0..6 {
                t[(a, c)] -= dot(&b[a], &x[c]);
            }
        }
        Ok(0.5 * (t + t.transpose()))
    }

    /// Free-DOF matrix and right-hand side of the cell problem linearized at
    /// zero, `K x = −r`. For `p = 2` this is the whole discrete problem.
    pub fn linear_system(&self, g: &Tens3) -> Result<(DMatrix<f64>, DVector<f64>), HomogError> {
        let dens = CellDensity { law: &self.law, g: *g };
        let zero = vec![0.0; self.space().n_dofs()];
        let (_, r, k) = self.disc.assemble(&dens, &zero, &self.policy, true)?;
        let k = k.expect("requested Hessian");
        let n = r.len();
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                dense[(i, j)] = k.get(i, j);
            }
        }
        Ok((dense, DVector::from_vec(r)))
    }
}

/// Solves the cell problem for one `G`.
pub fn solve_cell(
    cell: &UnitCell,
    law: &StrainGradientLaw,
    g: &Tens3,
    warm_start: Option<&C1Field>,
) -> Result<CellSolution, HomogError> {
    CellProblem::new(cell, *law, ExecPolicy::default())?.solve(g, warm_start)
}

/// Cell solutions at the six [`sym_basis`] tensors. For `p = 2` the
/// corrector of `G` is `Σ_a g_a u_a` with `g = sym_coords(G)`.
pub fn basis_correctors(problem: &CellProblem) -> Result<Vec<CellSolution>, HomogError> {
    sym_basis().iter().map(|e| problem.solve(e, None)).collect()
}

/// Matrix of the quadratic form `G ↦ 2 H_hom(G)` on [`sym_basis`]
/// coordinates, `𝕄_ab = ∫ β (E_a + ∇²u_a) ⋮ (E_b + ∇²u_b)`.
pub fn homogenized_tensor(problem: &CellProblem) -> Result<Matrix6<f64>, HomogError> {
    let law = problem.law();
    if !law.is_quadratic() {
        return Err(HomogError::NotQuadratic(law.p));
    }
    let basis = sym_basis();
    let sols = basis_correctors(problem)?;
    let sp = problem.space();
    let parts = problem.policy.map(sp.n_elements(), |slot| {
        let jets: Vec<Vec<Jet2>> = sols.iter().map(|s| s.u2.element_jets(slot)).collect();
        let mut m = Matrix6::zeros();
        for q in 0..sp.n_qp() {
            let info = sp.qp_info(slot, q);
            let beta = law.beta.at(info.y);
            let full: Vec<Tens3> = (0..6).map(|a| basis[a] + jets[a][q].hess).collect();
            for a in 0..6 {
                for b in 0..6 {
                    m[(a, b)] += info.weight * beta * full[a].dot(&full[b]);
                }
            }
        }
        m
    });
    let m = parts.into_iter().fold(Matrix6::zeros(), |acc, p| acc + p);
    if m.cholesky().is_none() {
        return Err(HomogError::NotPositiveDefinite);
    }
    Ok(m)
}

/// `∫_{Y_s} c(y) dy` by Gauss quadrature of order 8 on the solid elements.
pub fn cell_average(cell: &UnitCell, c: &Coefficient) -> f64 {
    let sp = C1Space::build(SpaceSource::Cell(cell), false, 8).expect("valid quadrature order");
    C1Field::zeros(&sp)
        .integrate(&ExecPolicy::SEQUENTIAL, |info, _| c.at(info.y))
        .expect("finite coefficient")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HomMode {
    Quadratic,
    Nested,
}

struct CacheEntry {
    /// Normalized `G / |G|` the entry was solved at.
    g_hat: [u64; 8],
    sol: CellSolution,
    tangent: Option<Matrix6<f64>>,
}

struct NestedModel {
    problem: CellProblem,
    cache: Mutex<HashMap<(usize, usize), CacheEntry>>,
    zero_tangent: OnceLock<Matrix6<f64>>,
    solves: AtomicUsize,
    hits: AtomicUsize,
}

enum GradientModel {
    Quadratic(Box<Matrix6<f64>>),
    Nested(Box<NestedModel>),
}

/// Averaged laws of the macroscopic problem.
pub struct HomogenizedLaw {
    /// `W̄`: the elastic law with coefficient `∫_{Y_s} α`.
    pub elastic: ElasticLaw,
    /// `R̄`: the dissipation law with coefficient `∫_{Y_s} δ`.
    pub dissipation: DissipationLaw,
    pub gradient_exponent: f64,
    pub solid_fraction: f64,
    /// `|Γ|`, the hole perimeter in cell units.
    pub gamma_length: f64,
    model: GradientModel,
}

/// Builds the averaged laws of `bundle` on `cell`.
pub fn averaged_laws(
    bundle: &MaterialBundle,
    cell: &UnitCell,
    mode: HomMode,
    policy: ExecPolicy,
) -> Result<HomogenizedLaw, HomogError> {
    let problem = CellProblem::new(cell, bundle.gradient, policy)?;
    let model = match mode {
        HomMode::Quadratic => GradientModel::Quadratic(Box::new(homogenized_tensor(&problem)?)),
        HomMode::Nested => GradientModel::Nested(Box::new(NestedModel {
            problem: CellProblem {
                policy: ExecPolicy::SEQUENTIAL,
                ..problem
            },
            cache: Mutex::new(HashMap::new()),
            zero_tangent: OnceLock::new(),
            solves: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
        })),
    };
    let mean = |c: &Coefficient| Coefficient::constant(cell_average(cell, c));
    Ok(HomogenizedLaw {
        elastic: ElasticLaw {
            alpha: mean(&bundle.elastic.alpha),
            ..bundle.elastic
        },
        dissipation: DissipationLaw {
            delta: mean(&bundle.dissipation.delta),
        },
        gradient_exponent: bundle.gradient.p,
        solid_fraction: cell.solid_area().to_f64().unwrap_or(f64::NAN),
        gamma_length: cell.gamma_length().to_f64().unwrap_or(f64::NAN),
        model,
    })
}

/// Maps a tensor on [`sym_basis`] coordinates to the flat 8×8 index.
fn lift(t: &Matrix6<f64>) -> [[f64; 8]; 8] {
    let basis = sym_basis();
    let mut out = [[0.0; 8]; 8];
    for a in 0..6 {
        for b in 0..6 {
            let v = t[(a, b)];
            if v == 0.0 {
                continue;
            }
            for (i, row) in out.iter_mut().enumerate() {
                if basis[a][i] == 0.0 {
                    continue;
                }
                for (j, o) in row.iter_mut().enumerate() {
                    *o += basis[a][i] * v * basis[b][j];
                }
            }
        }
    }
    out
}

fn from_coords(c: &[f64; 6]) -> Tens3 {
    crate::tensor::from_sym_coords(c)
}

impl HomogenizedLaw {
    pub fn mode(&self) -> HomMode {
        match self.model {
            GradientModel::Quadratic(_) => HomMode::Quadratic,
            GradientModel::Nested(_) => HomMode::Nested,
        }
    }

    /// The precomputed tensor in quadratic mode.
    pub fn tensor(&self) -> Option<&Matrix6<f64>> {
        match &self.model {
            GradientModel::Quadratic(m) => Some(m),
            GradientModel::Nested(_) => None,
        }
    }

    /// `(cell solves, cache hits)` of the nested model.
    pub fn cache_stats(&self) -> (usize, usize) {
        match &self.model {
            GradientModel::Quadratic(_) => (0, 0),
            GradientModel::Nested(n) => (n.solves.load(Ordering::Relaxed), n.hits.load(Ordering::Relaxed)),
        }
    }

    pub fn clear_cache(&self) {
        if let GradientModel::Nested(n) = &self.model {
            n.cache.lock().expect("cell cache poisoned").clear();
        }
    }

    /// `(H_hom(G), ∂H_hom(G))` without caching.
    pub fn h_hom(&self, g: &Tens3) -> Result<(f64, Tens3), HomogError> {
        match &self.model {
            GradientModel::Quadratic(m) => {
                let c = sym_coords(g);
                let v = nalgebra::Vector6::from_row_slice(&c);
                let mv = **m * v;
                let s: [f64; 6] = mv.into();
                Ok((0.5 * v.dot(&mv), from_coords(&s)))
            }
            GradientModel::Nested(n) => {
                let sol = n.problem.solve(g, None)?;
                Ok((sol.value, sol.hstress))
            }
        }
    }

    fn nested_eval(
        &self,
        n: &NestedModel,
        info: &QpInfo,
        g: &Tens3,
        curvature: bool,
    ) -> Result<(f64, Tens3, [[f64; 8]; 8]), HomogError> {
        let p = self.gradient_exponent;
        let s = g.norm();
        if s == 0.0 {
            let c = if curvature && p == 2.0 {
                let t = match n.zero_tangent.get() {
                    Some(t) => *t,
                    None => {
                        let sol = n.problem.solve(&Tens3::ZERO, None)?;
                        *n.zero_tangent.get_or_init(|| n.problem.tangent(&sol).expect("tangent at zero"))
                    }
                };
                lift(&t)
            } else {
                [[0.0; 8]; 8]
            };
            return Ok((0.0, Tens3::ZERO, c));
        }
        let g_hat = *g * (1.0 / s);
        let bits = g_hat.0.map(f64::to_bits);
        let key = (info.slot, info.q);
        let cached = {
            let cache = n.cache.lock().expect("cell cache poisoned");
            match cache.get(&key) {
                Some(e) if e.g_hat == bits && (!curvature || e.tangent.is_some()) => {
                    Some((e.sol.value, e.sol.hstress, e.tangent))
                }
                _ => None,
            }
        };
        let (v, hs, t) = match cached {
            Some(hit) => {
                n.hits.fetch_add(1, Ordering::Relaxed);
                hit
            }
            None => {
                let warm = n.cache.lock().expect("cell cache poisoned").get(&key).map(|e| e.sol.u2.clone());
                let sol = n.problem.solve(&g_hat, warm.as_ref())?;
                let tangent = if curvature { Some(n.problem.tangent(&sol)?) } else { None };
                n.solves.fetch_add(1, Ordering::Relaxed);
                let out = (sol.value, sol.hstress, tangent);
                n.cache.lock().expect("cell cache poisoned").insert(
                    key,
                    CacheEntry {
                        g_hat: bits,
                        sol,
                        tangent,
                    },
                );
                out
            }
        };
        // H_hom is positively homogeneous of degree p
        let c = match (curvature, t) {
            (true, Some(t)) => lift(&(t * s.powf(p - 2.0))),
            _ => [[0.0; 8]; 8],
        };
        Ok((v * s.powf(p), hs * s.powf(p - 1.0), c))
    }
}

impl ConstitutiveLaw for HomogenizedLaw {
    fn elastic(&self, info: &QpInfo, f: &Mat2) -> Result<(f64, Mat2), MaterialError> {
        self.elastic.eval(info.y, f)
    }

    fn elastic_curvature(&self, info: &QpInfo, f: &Mat2) -> Result<Matrix4<f64>, MaterialError> {
        self.elastic.curvature(info.y, f)
    }

    fn gradient(&self, info: &QpInfo, g: &Tens3, curvature: bool) -> Result<(f64, Tens3, [[f64; 8]; 8]), SolveError> {
        match &self.model {
            GradientModel::Quadratic(m) => {
                let (v, s) = self.h_hom(g).map_err(|e| SolveError::Cell(e.to_string()))?;
                Ok((v, s, if curvature { lift(m) } else { [[0.0; 8]; 8] }))
            }
            GradientModel::Nested(n) => self
                .nested_eval(n, info, g, curvature)
                .map_err(|e| SolveError::Cell(e.to_string())),
        }
    }

    fn dissipation(&self, info: &QpInfo, f: &Mat2, fdot: &Mat2) -> (f64, Mat2) {
        self.dissipation.eval(info.y, f, fdot)
    }

    fn dissipation_curvature(&self, info: &QpInfo, f: &Mat2) -> Matrix4<f64> {
        self.dissipation.curvature(info.y, f)
    }
}

/// Unperforated `(0,1)²` with `n × n` elements, for the macroscopic problem.
pub fn macro_domain(n: usize, dirichlet: &[Face]) -> Result<PerforatedDomain, HomogError> {
    Ok(PerforatedDomain::build(UnitCell::full(n)?, Rational::from_integer(1), dirichlet)?)
}

/// Macroscopic incremental problem with loads `f̄₀ = |Y_s| f` and
/// `ḡ₀ = |Γ| g`, the latter applied as a body force.
pub fn macro_problem<'a>(
    domain: &'a PerforatedDomain,
    law: &'a HomogenizedLaw,
    opts: StepOptions,
    policy: ExecPolicy,
) -> Result<IncrementalProblem<'a, HomogenizedLaw>, HomogError> {
    if domain.cell().hole().is_some() {
        return Err(HomogError::PerforatedMacroDomain);
    }
    let space = C1Space::on_domain(domain);
    Ok(IncrementalProblem::with_space(
        space,
        law,
        opts,
        policy,
        None,
        law.solid_fraction,
        law.gamma_length,
    )?)
}

/// Trajectory of the macroscopic problem from `u_init` (identity when `None`).
pub fn run_macro(
    domain: &PerforatedDomain,
    law: &HomogenizedLaw,
    loads: &Loads,
    grid: &TimeGrid,
    u_init: Option<C1Field>,
    opts: StepOptions,
    policy: ExecPolicy,
) -> Result<Trajectory, HomogError> {
    let p = macro_problem(domain, law, opts, policy)?;
    let u0 = u_init.unwrap_or_else(|| p.identity());
    Ok(p.run(loads, grid, u0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn holed() -> UnitCell {
        let r = |n, d| Rational::new(n, d);
        UnitCell::build(Some(Rect::square(r(1, 4), r(3, 4))), 8).unwrap()
    }

    fn random_g(rng: &mut ChaCha8Rng) -> Tens3 {
        let mut c = [0.0; 6];
        for v in c.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        from_coords(&c)
    }

    fn law(p: f64) -> StrainGradientLaw {
        StrainGradientLaw {
            beta: Coefficient::default(),
            p,
        }
    }

    #[test]
    fn zero_g_has_zero_corrector() {
        let cp = CellProblem::new(&holed(), law(4.0), ExecPolicy::SEQUENTIAL).unwrap();
        let s = cp.solve(&Tens3::ZERO, None).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(s.u2.coeffs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn full_cell_needs_no_corrector() {
        let cell = UnitCell::full(8).unwrap();
        let l = StrainGradientLaw {
            beta: Coefficient::constant(1.3),
            p: 4.0,
        };
        let cp = CellProblem::new(&cell, l, ExecPolicy::SEQUENTIAL).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_g(&mut rng);
        let s = cp.solve(&g, None).unwrap();
        let h = s.u2.norms_sq(&ExecPolicy::SEQUENTIAL);
        assert!(h.iter().all(|v| v.sqrt() <= 1e-6), "{h:?}");
        let bar = cp.unrelaxed_value(&g).unwrap();
        assert!((s.value - bar).abs() <= 1e-10 * bar);
    }

    #[test]
    fn oscillating_beta_relaxes_even_without_hole() {
        // ∫ β(y) ∂H(G) ⋮ ∇²v ≠ 0 when β varies, so v = 0 is not stationary
        let cell = UnitCell::full(8).unwrap();
        let cp = CellProblem::new(&cell, law(4.0), ExecPolicy::SEQUENTIAL).unwrap();
        let g = random_g(&mut ChaCha8Rng::seed_from_u64(3));
        let s = cp.solve(&g, None).unwrap();
        assert!(s.value < cp.unrelaxed_value(&g).unwrap());
        assert!(s.u2.norms_sq(&ExecPolicy::SEQUENTIAL)[2] > 1e-6);
    }

    #[test]
    fn holed_cell_relaxes_and_is_stationary() {
        let cp = CellProblem::new(&holed(), law(4.0), ExecPolicy::SEQUENTIAL).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3 {
            let g = random_g(&mut rng);
            let s = cp.solve(&g, None).unwrap();
            assert!(s.residual_norm <= 1e-9);
            assert!(cp.stationarity(&g, &s.u2).unwrap() <= 1e-9);
            assert!(s.value >= 0.0 && s.value <= cp.unrelaxed_value(&g).unwrap());
            let mean = s.u2.integrate(&ExecPolicy::SEQUENTIAL, |_, j| j.value[0]).unwrap();
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn p_homogeneity() {
        let cp = CellProblem::new(&holed(), law(4.0), ExecPolicy::SEQUENTIAL).unwrap();
        let g = random_g(&mut ChaCha8Rng::seed_from_u64(9));
        let base = cp.solve(&g, None).unwrap().value;
        for s in [2.0, 0.5] {
            let v = cp.solve(&(g * s), None).unwrap().value;
            let expect = base * f64::powf(s, 4.0);
            assert!((v - expect).abs() <= 1e-6 * expect, "s={s}: {v} vs {expect}");
        }
    }

    #[test]
    fn full_cell_tensor_is_unit_gram() {
        let cell = UnitCell::full(8).unwrap();
        let l = StrainGradientLaw {
            beta: Coefficient::constant(1.0),
            p: 2.0,
        };
        let cp = CellProblem::new(&cell, l, ExecPolicy::SEQUENTIAL).unwrap();
        let m = homogenized_tensor(&cp).unwrap();
        assert!((m - Matrix6::identity()).abs().max() < 1e-10, "{m}");
    }

    #[test]
    fn tensor_matches_polarization_and_tangent() {
        let cp = CellProblem::new(&holed(), law(2.0), ExecPolicy::SEQUENTIAL).unwrap();
        let m = homogenized_tensor(&cp).unwrap();
        assert!((m - m.transpose()).abs().max() <= 1e-10);
        let basis = sym_basis();
        let val = |g: Tens3| cp.solve(&g, None).unwrap().value;
        let pol = val(basis[0] + basis[4]) - val(basis[0]) - val(basis[4]);
        assert!((pol - m[(0, 4)]).abs() < 1e-9, "{pol} vs {}", m[(0, 4)]);
        let s = cp.solve(&basis[1], None).unwrap();
        let t = cp.tangent(&s).unwrap();
        assert!((t - m).abs().max() < 1e-8);
        let full = CellProblem::new(&UnitCell::full(8).unwrap(), law(2.0), ExecPolicy::SEQUENTIAL).unwrap();
        let m_full = homogenized_tensor(&full).unwrap();
        let ev = m.symmetric_eigenvalues();
        let ev_full = m_full.symmetric_eigenvalues();
        let mut a: Vec<f64> = ev.iter().copied().collect();
        let mut b: Vec<f64> = ev_full.iter().copied().collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!(*x > 0.0 && x <= y);
        }
    }

    #[test]
    fn tangent_matches_stress_differences() {
        let cp = CellProblem::new(&holed(), law(4.0), ExecPolicy::SEQUENTIAL).unwrap();
        let g = random_g(&mut ChaCha8Rng::seed_from_u64(17));
        let s = cp.solve(&g, None).unwrap();
        let t = cp.tangent(&s).unwrap();
        let basis = sym_basis();
        let h = 1e-5;
        for b in 0..6 {
            let sp = cp.solve(&(g + basis[b] * h), Some(&s.u2)).unwrap().hstress;
            let sm = cp.solve(&(g - basis[b] * h), Some(&s.u2)).unwrap().hstress;
            let d = sym_coords(&((sp - sm) * (0.5 / h)));
            for a in 0..6 {
                assert!((d[a] - t[(a, b)]).abs() < 1e-5 * (1.0 + t[(a, b)].abs()), "{a},{b}");
            }
        }
    }

    #[test]
    fn envelope_consistency() {
        let cp = CellProblem::new(&holed(), law(2.0), ExecPolicy::SEQUENTIAL).unwrap();
        let m = homogenized_tensor(&cp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g = random_g(&mut rng);
        let dir = random_g(&mut rng);
        let s = cp.solve(&g, None).unwrap();
        let gv = nalgebra::Vector6::from_row_slice(&sym_coords(&g));
        let dv = nalgebra::Vector6::from_row_slice(&sym_coords(&dir));
        let from_tensor = dv.dot(&(m * gv));
        assert!((from_tensor - s.hstress.dot(&dir)).abs() < 1e-7);
    }

    #[test]
    fn averaged_laws_values() {
        let bundle = MaterialBundle::unit(2.0, 4.0);
        let hl = averaged_laws(&bundle, &holed(), HomMode::Quadratic, ExecPolicy::SEQUENTIAL).unwrap();
        let info = QpInfo {
            slot: 0,
            q: 0,
            x: [0.0; 2],
            y: [0.3, 0.3],
            weight: 1.0,
        };
        let (w, _) = hl.elastic(&info, &Mat2::identity()).unwrap();
        assert!((w - 3.75).abs() < 1e-12);
        let (r, _) = hl.dissipation(&info, &Mat2::identity(), &Mat2::identity());
        assert!((r - 3.0).abs() < 1e-12);
        let osc = Coefficient::oscillating(0.5);
        // sin(2πy₁) sin(2πy₂) integrates to zero over the symmetric hole
        assert!((cell_average(&holed(), &osc) - 0.75).abs() < 1e-13);
    }

    #[test]
    fn nested_and_quadratic_agree_pointwise() {
        let bundle = MaterialBundle::new(0.5, 2.0, 4.0, true);
        let q = averaged_laws(&bundle, &holed(), HomMode::Quadratic, ExecPolicy::SEQUENTIAL).unwrap();
        let n = averaged_laws(&bundle, &holed(), HomMode::Nested, ExecPolicy::SEQUENTIAL).unwrap();
        let g = random_g(&mut ChaCha8Rng::seed_from_u64(31));
        let info = QpInfo {
            slot: 2,
            q: 1,
            x: [0.0; 2],
            y: [0.0; 2],
            weight: 1.0,
        };
        let (vq, sq, cq) = q.gradient(&info, &g, true).unwrap();
        let (vn, sn, cn) = n.gradient(&info, &g, true).unwrap();
        assert!((vq - vn).abs() < 1e-10 * vq);
        assert!((sq - sn).max_abs() < 1e-9);
        for i in 0..8 {
            for j in 0..8 {
                assert!((cq[i][j] - cn[i][j]).abs() < 1e-9);
            }
        }
        n.gradient(&info, &g, false).unwrap();
        assert_eq!(n.cache_stats(), (1, 1));
    }
}
