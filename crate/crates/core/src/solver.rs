//! Newton minimization of integral functionals on a [`C1Space`].
//!
//! A functional is described pointwise by a [`PointEnergy`], a density of the
//! gradient `F` and the second gradient `G` of the unknown field. The
//! minimizer uses a backtracking line search that rejects trial states where
//! the density reports an inadmissible point (for instance a determinant
//! below the floor) and measures convergence by the dual norm of the residual
//! with respect to the `H²` Gram matrix of the free DOFs.

use crate::c1grid::{C1Space, ElementBasis, Jet2, QpInfo, ELEM_DOFS};
use crate::exec::ExecPolicy;
use crate::linalg::{dot, CholeskyFactor, DofMap, LinalgError, SkylineMatrix, SkylinePattern};
use crate::materials::MaterialError;
use crate::tensor::{flat, t3, Mat2, Tens3};
use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("det ∇u = {det:e} below the floor at ({x:?})")]
    DetFloor { det: f64, x: [f64; 2] },
    #[error("line search failed: {0}")]
    LineSearchFailed(String),
    #[error("Newton did not converge in {iters} iterations (residual {residual:e})")]
    MaxItersExceeded { iters: usize, residual: f64 },
    #[error("singular or indefinite system: {0}")]
    SingularSystem(String),
    #[error("non-finite value in the {0}")]
    NonFinite(&'static str),
    #[error("material: {0}")]
    Material(#[from] MaterialError),
    #[error("cell problem: {0}")]
    Cell(String),
}

/// Density value with its first derivatives and curvature.
#[derive(Clone, Copy, Debug)]
pub struct PointOutput {
    pub e: f64,
    pub df: Mat2,
    pub dg: Tens3,
    pub cf: Matrix4<f64>,
    pub cg: [[f64; 8]; 8],
}

impl PointOutput {
    pub fn zero() -> Self {
        Self {
            e: 0.0,
            df: Mat2::zeros(),
            dg: Tens3::ZERO,
            cf: Matrix4::zeros(),
            cg: [[0.0; 8]; 8],
        }
    }
}

pub trait PointEnergy: Sync {
    /// Evaluates the density at one quadrature point. Curvature fields may be
    /// left zero when `curvature` is false.
    fn eval(&self, info: &QpInfo, jet: &Jet2, curvature: bool) -> Result<PointOutput, SolveError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Residual dual-norm tolerance.
    pub tol: f64,
    pub max_iters: usize,
    pub max_halvings: usize,
    pub armijo: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 60,
            max_halvings: 40,
            armijo: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub coeffs: Vec<f64>,
    pub iters: usize,
    pub residual: f64,
    /// Energy part of the objective at the solution (without the linear term).
    pub energy: f64,
}

/// A functional on one space with a fixed split into free and constrained
/// DOFs, plus the cached `H²` Gram factorization used for residual norms.
pub struct Discretization {
    pub space: Arc<C1Space>,
    pub map: DofMap,
    pub pattern: Arc<SkylinePattern>,
    gram: CholeskyFactor,
}

struct ElemResult {
    e: f64,
    g: [f64; ELEM_DOFS],
    k: Option<Vec<f64>>,
}

impl Discretization {
    pub fn new(space: Arc<C1Space>, map: DofMap, policy: &ExecPolicy) -> Result<Self, SolveError> {
        let pattern = Arc::new(space.pattern(&map));
        let ke = space.reference_gram(1.0, 1.0, 1.0);
        let gram = space
            .assemble_matrix(&map, pattern.clone(), policy, |_| ke.clone())
            .factor()
            .map_err(|e| SolveError::SingularSystem(format!("H2 Gram: {e}")))?;
        Ok(Self {
            space,
            map,
            pattern,
            gram,
        })
    }

    pub fn gram(&self) -> &CholeskyFactor {
        &self.gram
    }

    /// Dual norm of a free-DOF vector.
    pub fn dual_norm(&self, r: &[f64]) -> f64 {
        self.gram.dual_norm(r)
    }

    fn element<E: PointEnergy>(&self, energy: &E, coeffs: &[f64], slot: usize, hess: bool) -> Result<ElemResult, SolveError> {
        let sp = &self.space;
        let c = sp.gather_element(slot, coeffs);
        let mut out = ElemResult {
            e: 0.0,
            g: [0.0; ELEM_DOFS],
            k: hess.then(|| vec![0.0; ELEM_DOFS * ELEM_DOFS]),
        };
        for (q, b) in sp.basis().iter().enumerate() {
            let info = sp.qp_info(slot, q);
            let jet = C1Space::jet_from_local(b, &c);
            let p = energy.eval(&info, &jet, hess)?;
            let w = info.weight;
            out.e += w * p.e;
            accumulate_gradient(b, &p, w, &mut out.g);
            if let Some(k) = out.k.as_mut() {
                accumulate_curvature(b, &p, w, k);
            }
        }
        Ok(out)
    }

    /// Energy, free gradient and (optionally) free Hessian at `coeffs`.
    pub fn assemble<E: PointEnergy>(
        &self,
        energy: &E,
        coeffs: &[f64],
        policy: &ExecPolicy,
        hess: bool,
    ) -> Result<(f64, Vec<f64>, Option<SkylineMatrix>), SolveError> {
        let sp = &self.space;
        let parts = policy.try_map(sp.n_elements(), |slot| self.element(energy, coeffs, slot, hess))?;
        let mut e = 0.0;
        let mut g = vec![0.0; self.map.n_free()];
        let mut k = hess.then(|| SkylineMatrix::zeros(self.pattern.clone()));
        for (slot, part) in parts.iter().enumerate() {
            e += part.e;
            let dofs = sp.element_dofs(slot).map(|d| self.map.free_index(d));
            for (a, fi) in dofs.iter().enumerate() {
                if let Some(i) = fi {
                    g[*i] += part.g[a];
                }
            }
            if let (Some(k), Some(ke)) = (k.as_mut(), part.k.as_ref()) {
                k.add_block(&dofs, ke);
            }
        }
        if !e.is_finite() {
            return Err(SolveError::NonFinite("energy"));
        }
        Ok((e, g, k))
    }

    /// Energy only; the line search uses this.
    pub fn energy<E: PointEnergy>(&self, energy: &E, coeffs: &[f64], policy: &ExecPolicy) -> Result<f64, SolveError> {
        let sp = &self.space;
        let parts = policy.try_map(sp.n_elements(), |slot| {
            let c = sp.gather_element(slot, coeffs);
            let mut acc = 0.0;
            for (q, b) in sp.basis().iter().enumerate() {
                let info = sp.qp_info(slot, q);
                let jet = C1Space::jet_from_local(b, &c);
                acc += info.weight * energy.eval(&info, &jet, false)?.e;
            }
            Ok::<f64, SolveError>(acc)
        })?;
        let e: f64 = parts.iter().sum();
        if !e.is_finite() {
            return Err(SolveError::NonFinite("energy"));
        }
        Ok(e)
    }

    /// Free residual `∇E − load` and its dual norm.
    pub fn residual<E: PointEnergy>(
        &self,
        energy: &E,
        coeffs: &[f64],
        load: &[f64],
        policy: &ExecPolicy,
    ) -> Result<(Vec<f64>, f64), SolveError> {
        let (_, mut g, _) = self.assemble(energy, coeffs, policy, false)?;
        for (gi, &d) in g.iter_mut().zip(self.map.free_dofs()) {
            *gi -= load[d];
        }
        let n = self.dual_norm(&g);
        Ok((g, n))
    }

    /// Minimizes `E(c) − load·c` over the free DOFs starting from `start`.
    /// Constrained DOFs keep their values from `start`.
    ///
    /// With a [`FactorCache`] the Hessian factorization is kept across
    /// iterations and calls, and refreshed only when the residual contracts
    /// by less than a factor of four per iteration or the line search has to
    /// shorten a step. Without one every iteration is a full Newton step.
    pub fn minimize<E: PointEnergy>(
        &self,
        energy: &E,
        load: &[f64],
        start: Vec<f64>,
        policy: &ExecPolicy,
        opts: &NewtonOptions,
        cache: Option<&FactorCache>,
    ) -> Result<NewtonOutcome, SolveError> {
        let free = self.map.free_dofs();
        let mut c = start;
        let lin = |c: &[f64]| free.iter().map(|&d| load[d] * c[d]).sum::<f64>();
        let local = FactorCache::default();
        let cache = cache.unwrap_or(&local);
        let always_fresh = std::ptr::eq(cache, &local);
        let mut stale = cache.is_empty();
        let mut prev_residual = f64::INFINITY;
        let mut iters = 0;
        loop {
            let want_hess = always_fresh || stale;
            let (mut e, mut g, mut k) = self.assemble(energy, &c, policy, want_hess)?;
            sub_load(&mut g, load, free);
            let residual = self.dual_norm(&g);
            if !residual.is_finite() {
                return Err(SolveError::NonFinite("residual"));
            }
            if residual <= opts.tol {
                return Ok(NewtonOutcome {
                    coeffs: c,
                    iters,
                    residual,
                    energy: e,
                });
            }
            if iters >= opts.max_iters {
                return Err(SolveError::MaxItersExceeded { iters, residual });
            }
            if k.is_none() && residual > 0.25 * prev_residual {
                (e, g, k) = self.assemble(energy, &c, policy, true)?;
                sub_load(&mut g, load, free);
            }
            if let Some(k) = k {
                cache.store(factor_with_shift(k)?);
            }
            stale = false;
            prev_residual = residual;
            iters += 1;
            let mut d = g.iter().map(|v| -v).collect::<Vec<_>>();
            cache.solve_in_place(&mut d);
            let slope = dot(&g, &d);
            let phi0 = e - lin(&c);
            let slack = 1e-14 * (1.0 + phi0.abs());
            let mut alpha = 1.0;
            let mut accepted = None;
            let mut last_err = String::new();
            for _ in 0..=opts.max_halvings {
                let mut trial = c.clone();
                for (di, &f) in d.iter().zip(free) {
                    trial[f] += alpha * di;
                }
                match self.energy(energy, &trial, policy) {
                    Ok(et) => {
                        let phi = et - lin(&trial);
                        if phi <= phi0 + opts.armijo * alpha * slope + slack {
                            accepted = Some(trial);
                            break;
                        }
                        last_err = format!("no sufficient decrease (phi {phi:e} vs {phi0:e})");
                    }
                    Err(SolveError::DetFloor { det, x }) => {
                        last_err = format!("det floor violated ({det:e} at {x:?})");
                    }
                    Err(SolveError::Material(m)) => last_err = m.to_string(),
                    Err(SolveError::NonFinite(w)) => last_err = format!("non-finite {w}"),
                    Err(other) => return Err(other),
                }
                alpha *= 0.5;
            }
            match accepted {
                Some(t) => c = t,
                None => {
                    return Err(SolveError::LineSearchFailed(format!(
                        "iteration {iters}: {last_err}"
                    )))
                }
            }
            if alpha < 1.0 {
                stale = true;
            }
        }
    }
}

fn sub_load(g: &mut [f64], load: &[f64], free: &[usize]) {
    for (gi, &d) in g.iter_mut().zip(free) {
        *gi -= load[d];
    }
}

/// Hessian factorization shared between Newton iterations and solves.
#[derive(Default)]
pub struct FactorCache {
    inner: Mutex<Option<CholeskyFactor>>,
}

impl FactorCache {
    pub fn is_empty(&self) -> bool {
        self.inner.lock().expect("factor cache poisoned").is_none()
    }

    pub fn store(&self, f: CholeskyFactor) {
        *self.inner.lock().expect("factor cache poisoned") = Some(f);
    }

    pub fn clear(&self) {
        *self.inner.lock().expect("factor cache poisoned") = None;
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        self.inner
            .lock()
            .expect("factor cache poisoned")
            .as_ref()
            .expect("factor stored before use")
            .solve_in_place(b);
    }
}

/// Cholesky factorization with Levenberg shifts on failure.
pub fn factor_with_shift(k: SkylineMatrix) -> Result<CholeskyFactor, SolveError> {
    let diag = k.diagonal();
    let scale = diag.iter().map(|v| v.abs()).sum::<f64>() / diag.len().max(1) as f64;
    match k.clone().factor() {
        Ok(f) => return Ok(f),
        Err(LinalgError::NotPositiveDefinite { .. }) => {}
        Err(e) => return Err(SolveError::SingularSystem(e.to_string())),
    }
    let mut shift = 1e-10 * scale.max(f64::MIN_POSITIVE);
    for _ in 0..12 {
        let mut ks = k.clone();
        ks.add_diagonal(shift);
        if let Ok(f) = ks.factor() {
            return Ok(f);
        }
        shift *= 10.0;
    }
    Err(SolveError::SingularSystem("shifted factorization failed".into()))
}

/// `g_e += w (∂_F e : ∇φ + ∂_G e ⋮ ∇²φ)` for all local basis functions.
#[inline]
pub fn accumulate_gradient(b: &ElementBasis, p: &PointOutput, w: f64, g: &mut [f64; ELEM_DOFS]) {
    let df = flat(&p.df);
    for c in 0..2 {
        let f0 = df[2 * c];
        let f1 = df[2 * c + 1];
        let h0 = p.dg[t3(c, 0, 0)];
        let h1 = p.dg[t3(c, 0, 1)] + p.dg[t3(c, 1, 0)];
        let h2 = p.dg[t3(c, 1, 1)];
        for s in 0..16 {
            g[c * 16 + s] += w
                * (f0 * b.grad[s][0] + f1 * b.grad[s][1] + h0 * b.hess[s][0] + h1 * b.hess[s][1] + h2 * b.hess[s][2]);
        }
    }
}

/// `K_e += w (Bᵀ C_F B + Bᵀ C_G B)` for all pairs of local basis functions.
#[inline]
pub fn accumulate_curvature(b: &ElementBasis, p: &PointOutput, w: f64, k: &mut [f64]) {
    let hs = |s: usize| [b.hess[s][0], b.hess[s][1], b.hess[s][1], b.hess[s][2]];
    for c in 0..2 {
        for s in 0..16 {
            let gs = b.grad[s];
            let hs_s = hs(s);
            // row of C_F and C_G contracted with basis function (c, s)
            let mut rf = [0.0; 4];
            let mut rg = [0.0; 8];
            for (col, r) in rf.iter_mut().enumerate() {
                *r = p.cf[(2 * c, col)] * gs[0] + p.cf[(2 * c + 1, col)] * gs[1];
            }
            for (col, r) in rg.iter_mut().enumerate() {
                let mut acc = 0.0;
                for a in 0..4 {
                    acc += p.cg[c * 4 + a][col] * hs_s[a];
                }
                *r = acc;
            }
            let row = (c * 16 + s) * ELEM_DOFS;
            for d in 0..2 {
                let (f0, f1) = (rf[2 * d], rf[2 * d + 1]);
                let g4 = &rg[d * 4..d * 4 + 4];
                let gh1 = g4[1] + g4[2];
                for t in 0..16 {
                    let v = f0 * b.grad[t][0]
                        + f1 * b.grad[t][1]
                        + g4[0] * b.hess[t][0]
                        + gh1 * b.hess[t][1]
                        + g4[3] * b.hess[t][2];
                    k[row + d * 16 + t] += w * v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::c1grid::C1Field;
    use crate::geometry::{Face, PerforatedDomain, UnitCell};
    use crate::geometry::Rational;

    /// `½|∇u − A|² + ½|∇²u|²` with `A` constant: minimizer is affine with
    /// gradient `A` when unconstrained.
    struct Quad(Mat2);

    impl PointEnergy for Quad {
        fn eval(&self, _: &QpInfo, jet: &Jet2, _: bool) -> Result<PointOutput, SolveError> {
            let d = jet.grad - self.0;
            let mut cg = [[0.0; 8]; 8];
            for (i, r) in cg.iter_mut().enumerate() {
                r[i] = 1.0;
            }
            Ok(PointOutput {
                e: 0.5 * d.norm_squared() + 0.5 * jet.hess.norm_sq(),
                df: d,
                dg: jet.hess,
                cf: Matrix4::identity(),
                cg,
            })
        }
    }

    #[test]
    fn newton_finds_affine_minimizer_in_one_step() {
        let cell = UnitCell::full(4).unwrap();
        let d = PerforatedDomain::build(cell, Rational::new(1, 1), &[Face::X1Lo]).unwrap();
        let sp = C1Space::on_domain(&d);
        // pin only the value DOFs of one node so the problem is well posed
        let map = DofMap::new(sp.n_dofs(), &[0, 4]);
        let p = ExecPolicy::default();
        let disc = Discretization::new(sp.clone(), map, &p).unwrap();
        let a = Mat2::new(1.2, 0.3, -0.1, 0.8);
        let load = vec![0.0; sp.n_dofs()];
        let out = disc
            .minimize(&Quad(a), &load, vec![0.0; sp.n_dofs()], &p, &NewtonOptions::default(), None)
            .unwrap();
        assert!(out.iters <= 2);
        let u = C1Field::from_coeffs(&sp, out.coeffs).unwrap();
        let j = u.eval_jet_at([0.6, 0.3]).unwrap();
        assert!((j.grad - a).abs().max() < 1e-10);
    }

    #[test]
    fn curvature_assembly_matches_gradient_differences() {
        let cell = UnitCell::full(4).unwrap();
        let d = PerforatedDomain::build(cell, Rational::new(1, 1), &[Face::X1Lo]).unwrap();
        let sp = C1Space::on_domain(&d);
        let map = sp.dirichlet_map().unwrap();
        let p = ExecPolicy::SEQUENTIAL;
        let disc = Discretization::new(sp.clone(), map, &p).unwrap();
        let e = Quad(Mat2::new(0.5, 0.0, 0.2, 1.0));
        let u = C1Field::random(&sp, 5);
        let (_, g0, k) = disc.assemble(&e, &u.coeffs, &p, true).unwrap();
        let k = k.unwrap();
        let dir: Vec<f64> = (0..disc.map.n_free()).map(|i| ((i * 7 % 13) as f64 - 6.0) / 13.0).collect();
        let mut c1 = u.coeffs.clone();
        disc.map.scatter_add(&dir, 1.0, &mut c1);
        let (_, g1, _) = disc.assemble(&e, &c1, &p, false).unwrap();
        let kd = k.matvec(&dir);
        for i in 0..kd.len() {
            assert!((g1[i] - g0[i] - kd[i]).abs() < 1e-12);
        }
    }
}
