//! Extension operator and Korn and Poincaré constants on perforated grids.
//!
//! The extension works cell by cell: subtract the affine map `m_u` with the
//! mean gradient and mean value of `u` on the cell's solid part, fill the hole
//! with the discrete minimizer of `∫_hole |∇²w|²` matching the jets on its
//! boundary, and add `m_u` back. DOFs on the solid closure are copied.
//!
//! Constants are `λ_min^{-1/2}` of generalized eigenproblems `K x = λ M x`
//! over the space with homogeneous Dirichlet data on `Γ^D`, computed by block
//! inverse iteration with Rayleigh–Ritz.

use crate::c1grid::{C1Field, C1Space, DOFS_PER_NODE, ELEM_DOFS};
use crate::exec::ExecPolicy;
use crate::geometry::PerforatedDomain;
use crate::linalg::{dot, DofMap, LinalgError, SkylineMatrix};
use crate::tensor::Mat2;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunIneqError {
    #[error("hole fill system is singular")]
    SingularFill,
    #[error("field is not on the perforated space of this domain")]
    FieldSpace,
    #[error("no Dirichlet DOFs: the constant is infinite")]
    ZeroDirichletSet,
    #[error("eigen iteration stalled at residual {residual:e} after {iters} iterations")]
    EigenNoConvergence { iters: usize, residual: f64 },
    #[error("det A has minimum {0:e} on the certification grid")]
    NotCertified(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Affine map `x ↦ F x + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMap {
    pub f: Mat2,
    pub b: [f64; 2],
}

impl AffineMap {
    pub fn at(&self, x: [f64; 2]) -> [f64; 2] {
        [
            self.f[(0, 0)] * x[0] + self.f[(0, 1)] * x[1] + self.b[0],
            self.f[(1, 0)] * x[0] + self.f[(1, 1)] * x[1] + self.b[1],
        ]
    }
}

/// Scalar biharmonic fill of one cell's hole: maps boundary-node DOFs to
/// interior-node DOFs.
struct HoleFill {
    /// Grid nodes relative to the cell origin.
    interior: Vec<[usize; 2]>,
    boundary: Vec<[usize; 2]>,
    /// `−K_II⁻¹ K_IB`, `4·|I| × 4·|B|`.
    map: DMatrix<f64>,
}

impl HoleFill {
    fn build(domain: &PerforatedDomain, filled: &C1Space) -> Result<Option<Self>, FunIneqError> {
        let cell = domain.cell();
        let m = cell.m();
        let void: Vec<[usize; 2]> = (0..m)
            .flat_map(|ey| (0..m).map(move |ex| [ex, ey]))
            .filter(|&[ex, ey]| !cell.is_solid(ex, ey))
            .collect();
        if void.is_empty() {
            return Ok(None);
        }
        let is_void = |ex: isize, ey: isize| {
            (0..m as isize).contains(&ex) && (0..m as isize).contains(&ey) && !cell.is_solid(ex as usize, ey as usize)
        };
        let mut nodes: Vec<[usize; 2]> = void
            .iter()
            .flat_map(|&[ex, ey]| (0..4).map(move |a| [ex + (a & 1), ey + (a >> 1)]))
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        let (interior, boundary): (Vec<_>, Vec<_>) = nodes.iter().partition(|&&[i, j]| {
            let (i, j) = (i as isize, j as isize);
            is_void(i - 1, j - 1) && is_void(i, j - 1) && is_void(i - 1, j) && is_void(i, j)
        });
        let local = |n: [usize; 2]| -> usize {
            interior
                .iter()
                .position(|&x| x == n)
                .unwrap_or_else(|| interior.len() + boundary.iter().position(|&x| x == n).expect("hole node"))
        };
        let ke = filled.reference_gram(0.0, 0.0, 1.0);
        let n = 4 * nodes.len();
        let mut k = DMatrix::zeros(n, n);
        for &[ex, ey] in &void {
            let ids: Vec<usize> = (0..4).map(|a| local([ex + (a & 1), ey + (a >> 1)])).collect();
            for s in 0..16 {
                for t in 0..16 {
                    let (i, j) = (4 * ids[s / 4] + s % 4, 4 * ids[t / 4] + t % 4);
                    k[(i, j)] += ke[s * ELEM_DOFS + t];
                }
            }
        }
        let ni = 4 * interior.len();
        let kii = k.view((0, 0), (ni, ni)).into_owned();
        let kib = k.view((0, ni), (ni, n - ni)).into_owned();
        let chol = kii.cholesky().ok_or(FunIneqError::SingularFill)?;
        let map = -chol.solve(&kib);
        Ok(Some(Self {
            interior,
            boundary,
            map,
        }))
    }
}

/// Mean gradient and mean value of `u` on the solid part of cell `k`, as the
/// affine map with those means.
pub fn cell_affine_part(domain: &PerforatedDomain, u: &C1Field, k: [i64; 2]) -> AffineMap {
    let sp = u.space();
    let m = domain.cell().m();
    let inv = domain.inv_eps() as i64;
    let o = [
        ((k[0] - domain.lo()[0] * inv) as usize) * m,
        ((k[1] - domain.lo()[1] * inv) as usize) * m,
    ];
    let (mut vol, mut f, mut ub, mut xb) = (0.0, Mat2::zeros(), [0.0; 2], [0.0; 2]);
    for ey in 0..m {
        for ex in 0..m {
            if !domain.cell().is_solid(ex, ey) {
                continue;
            }
            let Some(slot) = sp.slot(o[0] + ex, o[1] + ey) else { continue };
            for (q, j) in u.element_jets(slot).iter().enumerate() {
                let info = sp.qp_info(slot, q);
                let w = info.weight;
                vol += w;
                f += j.grad * w;
                for c in 0..2 {
                    ub[c] += w * j.value[c];
                    xb[c] += w * info.x[c];
                }
            }
        }
    }
    let f = f / vol;
    let ub = ub.map(|v| v / vol);
    let xb = xb.map(|v| v / vol);
    let fx = [f[(0, 0)] * xb[0] + f[(0, 1)] * xb[1], f[(1, 0)] * xb[0] + f[(1, 1)] * xb[1]];
    AffineMap {
        f,
        b: [ub[0] - fx[0], ub[1] - fx[1]],
    }
}

/// Extends a field on `Ω_ε` to the filled grid on `Ω`.
pub fn extend_field(domain: &PerforatedDomain, u: &C1Field, policy: &ExecPolicy) -> Result<C1Field, FunIneqError> {
    let sp = u.space();
    let solid_count = domain.solid_mask().iter().filter(|s| **s).count();
    if sp.is_periodic() || sp.n_elem() != domain.n_elem() || sp.n_elements() != solid_count || sp.h() != domain.h() {
        return Err(FunIneqError::FieldSpace);
    }
    let filled = C1Space::on_filled_domain(domain);
    let mut out = C1Field::zeros(&filled);
    for (n, &[i, j]) in filled.nodes().iter().enumerate() {
        if let Some(src) = sp.node_index(i, j) {
            let (a, b) = (n * DOFS_PER_NODE, src * DOFS_PER_NODE);
            out.coeffs[a..a + DOFS_PER_NODE].copy_from_slice(&u.coeffs[b..b + DOFS_PER_NODE]);
        }
    }
    let Some(fill) = HoleFill::build(domain, &filled)? else {
        return Ok(out);
    };
    let m = domain.cell().m();
    let inv = domain.inv_eps() as i64;
    let cells = domain.cells();
    let writes = policy.map(cells.len(), |ci| {
        let k = cells[ci];
        let o = [
            ((k[0] - domain.lo()[0] * inv) as usize) * m,
            ((k[1] - domain.lo()[1] * inv) as usize) * m,
        ];
        let aff = cell_affine_part(domain, u, k);
        let h = sp.h();
        let coord = |[i, j]: [usize; 2]| [sp.lo()[0] + i as f64 * h, sp.lo()[1] + j as f64 * h];
        let mut w = Vec::new();
        for c in 0..2 {
            let mut xb = Vec::with_capacity(4 * fill.boundary.len());
            for &[i, j] in &fill.boundary {
                let g = [o[0] + i, o[1] + j];
                let node = sp.node_index(g[0], g[1]).expect("hole boundary node is solid");
                let d = |kk| u.coeffs[C1Space::dof(node, c, kk)];
                xb.push(d(0) - aff.at(coord(g))[c]);
                xb.push(d(1) - aff.f[(c, 0)]);
                xb.push(d(2) - aff.f[(c, 1)]);
                xb.push(d(3));
            }
            let xi = &fill.map * nalgebra::DVector::from_vec(xb);
            for (l, &[i, j]) in fill.interior.iter().enumerate() {
                let g = [o[0] + i, o[1] + j];
                let node = filled.node_index(g[0], g[1]).expect("filled grid node");
                w.push((C1Space::dof(node, c, 0), xi[4 * l] + aff.at(coord(g))[c]));
                w.push((C1Space::dof(node, c, 1), xi[4 * l + 1] + aff.f[(c, 0)]));
                w.push((C1Space::dof(node, c, 2), xi[4 * l + 2] + aff.f[(c, 1)]));
                w.push((C1Space::dof(node, c, 3), xi[4 * l + 3]));
            }
        }
        w
    });
    for (d, v) in writes.into_iter().flatten() {
        out.coeffs[d] = v;
    }
    Ok(out)
}

/// Restriction of a filled-grid field to the perforated space.
pub fn restrict_field(domain: &PerforatedDomain, u: &C1Field) -> C1Field {
    let sp = C1Space::on_domain(domain);
    let src = u.space();
    let mut out = C1Field::zeros(&sp);
    for (n, &[i, j]) in sp.nodes().iter().enumerate() {
        let s = src.node_index(i, j).expect("filled grid contains every node");
        let (a, b) = (n * DOFS_PER_NODE, s * DOFS_PER_NODE);
        out.coeffs[a..a + DOFS_PER_NODE].copy_from_slice(&u.coeffs[b..b + DOFS_PER_NODE]);
    }
    out
}

/// Ratios `(‖Eu‖ / (‖u‖ + ε‖∇u‖), ‖∇Eu‖ / ‖∇u‖, ‖∇²Eu‖ / ‖∇²u‖)`.
pub fn extension_ratios(domain: &PerforatedDomain, u: &C1Field, policy: &ExecPolicy) -> Result<[f64; 3], FunIneqError> {
    let e = extend_field(domain, u, policy)?;
    let a = u.norms_sq(policy).map(f64::sqrt);
    let b = e.norms_sq(policy).map(f64::sqrt);
    Ok([b[0] / (a[0] + domain.eps_f64() * a[1]), b[1] / a[1], b[2] / a[2]])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientKind {
    Identity,
    /// `∇φ` for `φ(x) = x + a (sin πx₂, sin πx₁)`.
    Deformation { amplitude: f64 },
    /// Rotation by `θ(x) = a sin πx₁ sin πx₂`.
    Rotation { amplitude: f64 },
}

/// A continuous coefficient field `A` with a certified bound `det A ≥ μ₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    pub kind: CoefficientKind,
    pub scale: f64,
    pub mu0: f64,
    /// Points per axis of the certification grid.
    pub certification_grid: usize,
}

impl CoefficientField {
    /// Certifies `c · A_kind` on `domain`'s rectangle with an `n × n` grid.
    ///
    /// `μ₀` is the sampled minimum of `det A` minus the largest change of
    /// `det A` between neighbouring grid points.
    pub fn certify(kind: CoefficientKind, scale: f64, domain: &PerforatedDomain, n: usize) -> Result<Self, FunIneqError> {
        let mut f = Self {
            kind,
            scale,
            mu0: 0.0,
            certification_grid: n,
        };
        let (lo, hi) = (domain.lo(), domain.hi());
        let det = |i: usize, j: usize| {
            let x = [
                lo[0] as f64 + (hi[0] - lo[0]) as f64 * i as f64 / (n - 1) as f64,
                lo[1] as f64 + (hi[1] - lo[1]) as f64 * j as f64 / (n - 1) as f64,
            ];
            f.at(x).determinant()
        };
        let mut min = f64::INFINITY;
        let mut jump: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                let d = det(i, j);
                min = min.min(d);
                if i + 1 < n {
                    jump = jump.max((det(i + 1, j) - d).abs());
                }
                if j + 1 < n {
                    jump = jump.max((det(i, j + 1) - d).abs());
                }
            }
        }
        let mu0 = min - jump;
        if !(mu0 > 0.0) {
            return Err(FunIneqError::NotCertified(min));
        }
        f.mu0 = mu0;
        Ok(f)
    }

    /// Identity, smooth deformation gradient and rotation field.
    pub fn defaults(domain: &PerforatedDomain) -> Result<Vec<Self>, FunIneqError> {
        [
            CoefficientKind::Identity,
            CoefficientKind::Deformation { amplitude: 0.1 },
            CoefficientKind::Rotation { amplitude: 0.5 },
        ]
        .into_iter()
        .map(|k| Self::certify(k, 1.0, domain, 65))
        .collect()
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            CoefficientKind::Identity => "identity",
            CoefficientKind::Deformation { .. } => "deformation",
            CoefficientKind::Rotation { .. } => "rotation",
        }
    }

    pub fn at(&self, x: [f64; 2]) -> Mat2 {
        let a = match self.kind {
            CoefficientKind::Identity => Mat2::identity(),
            CoefficientKind::Deformation { amplitude: a } => {
                Mat2::new(1.0, a * PI * (PI * x[1]).cos(), a * PI * (PI * x[0]).cos(), 1.0)
            }
            CoefficientKind::Rotation { amplitude: a } => {
                let t = a * (PI * x[0]).sin() * (PI * x[1]).sin();
                Mat2::new(t.cos(), -t.sin(), t.sin(), t.cos())
            }
        };
        a * self.scale
    }
}

/// Estimate of an inequality constant from a generalized eigenproblem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    /// `λ_min^{-1/2}`.
    pub value: f64,
    pub eigenvalue: f64,
    /// `‖K x − λ M x‖_{K⁻¹} / √λ` for `M`-normalized `x`.
    pub eigen_residual: f64,
    pub dof_count: usize,
    pub eps: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    pub block: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            block: 8,
            tol: 1e-10,
            max_iters: 500,
            seed: 0x5eed,
        }
    }
}

/// Smallest eigenpair of `K x = λ M x` for SPD `K`, `M` on one pattern.
/// Returns `(λ, x, residual, iterations)`.
pub fn smallest_eigenpair(
    k: SkylineMatrix,
    m: &SkylineMatrix,
    opts: &EigenOptions,
) -> Result<(f64, Vec<f64>, f64, usize), FunIneqError> {
    let n = k.n();
    let b = opts.block.min(n).max(1);
    let kf = k.factor()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = (0..b).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut mx: Vec<Vec<f64>> = x.iter().map(|v| m.matvec(v)).collect();
    let mut last = f64::INFINITY;
    for it in 1..=opts.max_iters {
        let y: Vec<Vec<f64>> = mx.iter().map(|v| kf.solve(v)).collect();
        let my: Vec<Vec<f64>> = y.iter().map(|v| m.matvec(v)).collect();
        // K Y = M X
        let mut kr = DMatrix::zeros(b, b);
        let mut mr = DMatrix::zeros(b, b);
        for i in 0..b {
            for j in 0..=i {
                let kv = 0.5 * (dot(&y[i], &mx[j]) + dot(&y[j], &mx[i]));
                let mv = 0.5 * (dot(&y[i], &my[j]) + dot(&y[j], &my[i]));
                kr[(i, j)] = kv;
                kr[(j, i)] = kv;
                mr[(i, j)] = mv;
                mr[(j, i)] = mv;
            }
        }
        let l = mr
            .cholesky()
            .ok_or(FunIneqError::EigenNoConvergence { iters: it, residual: last })?
            .l();
        let linv = l.clone().try_inverse().ok_or(FunIneqError::EigenNoConvergence { iters: it, residual: last })?;
        let c = &linv * &kr * linv.transpose();
        let c = 0.5 * (&c + c.transpose());
        let eig = SymmetricEigen::new(c);
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let v = linv.transpose() * &eig.eigenvectors;
        let combine = |src: &[Vec<f64>], col: usize| {
            let mut out = vec![0.0; n];
            for (r, s) in src.iter().enumerate() {
                let a = v[(r, col)];
                for (o, si) in out.iter_mut().zip(s) {
                    *o += a * si;
                }
            }
            out
        };
        let kx0 = combine(&mx, order[0]);
        x = order.iter().map(|&c| combine(&y, c)).collect();
        mx = order.iter().map(|&c| combine(&my, c)).collect();
        let theta = eig.eigenvalues[order[0]];
        let r: Vec<f64> = kx0.iter().zip(&mx[0]).map(|(a, b)| a - theta * b).collect();
        let res = (dot(&r, &kf.solve(&r)).max(0.0) / theta).sqrt();
        last = res;
        if res <= opts.tol {
            return Ok((theta, x.swap_remove(0), res, it));
        }
    }
    Err(FunIneqError::EigenNoConvergence {
        iters: opts.max_iters,
        residual: last,
    })
}

fn constrained_space(domain: &PerforatedDomain) -> Result<(Arc<C1Space>, DofMap), FunIneqError> {
    let sp = C1Space::on_domain(domain);
    let fixed = sp.dirichlet_dofs().map_err(|_| FunIneqError::ZeroDirichletSet)?;
    if fixed.is_empty() {
        return Err(FunIneqError::ZeroDirichletSet);
    }
    let map = DofMap::new(sp.n_dofs(), &fixed);
    Ok((sp, map))
}

/// `K_e = ⟨e_A(v), e_A(w)⟩_{L²(Ω_ε)}` and the `H¹` Gram matrix on the
/// constrained space.
pub fn korn_matrices(
    domain: &PerforatedDomain,
    a: &CoefficientField,
    policy: &ExecPolicy,
) -> Result<(SkylineMatrix, SkylineMatrix, DofMap), FunIneqError> {
    let (sp, map) = constrained_space(domain)?;
    let pattern = Arc::new(sp.pattern(&map));
    let k = sp.assemble_matrix(&map, pattern.clone(), policy, |slot| {
        let mut ke = vec![0.0; ELEM_DOFS * ELEM_DOFS];
        for (q, bq) in sp.basis().iter().enumerate() {
            let info = sp.qp_info(slot, q);
            let am = a.at(info.x);
            // sym(A ∇φ) for φ = N_s e_c: (A ∇φ)_ij = A_ic ∂_j N_s
            let mut e = [[0.0; 4]; ELEM_DOFS];
            for c in 0..2 {
                for s in 0..16 {
                    let g = bq.grad[s];
                    let bm = [am[(0, c)] * g[0], am[(0, c)] * g[1], am[(1, c)] * g[0], am[(1, c)] * g[1]];
                    let off = 0.5 * (bm[1] + bm[2]);
                    e[c * 16 + s] = [bm[0], off, off, bm[3]];
                }
            }
            for i in 0..ELEM_DOFS {
                for j in 0..ELEM_DOFS {
                    let v = e[i][0] * e[j][0] + e[i][1] * e[j][1] + e[i][2] * e[j][2] + e[i][3] * e[j][3];
                    ke[i * ELEM_DOFS + j] += info.weight * v;
                }
            }
        }
        ke
    });
    let me = sp.reference_gram(1.0, 1.0, 0.0);
    let m = sp.assemble_matrix(&map, pattern, policy, |_| me.clone());
    Ok((k, m, map))
}

/// Korn constant `C_A` with `‖v‖_{H¹(Ω_ε)} ≤ C_A ‖e_A(v)‖_{L²(Ω_ε)}`.
pub fn korn_constant(
    domain: &PerforatedDomain,
    a: &CoefficientField,
    opts: &EigenOptions,
    policy: &ExecPolicy,
) -> Result<ConstantEstimate, FunIneqError> {
    let (k, m, map) = korn_matrices(domain, a, policy)?;
    estimate(domain, k, &m, map.n_free(), opts)
}

/// Stiffness and `L²` Gram matrices on the constrained space.
pub fn poincare_matrices(domain: &PerforatedDomain, policy: &ExecPolicy) -> Result<(SkylineMatrix, SkylineMatrix, DofMap), FunIneqError> {
    let (sp, map) = constrained_space(domain)?;
    let pattern = Arc::new(sp.pattern(&map));
    let se = sp.reference_gram(0.0, 1.0, 0.0);
    let me = sp.reference_gram(1.0, 0.0, 0.0);
    let k = sp.assemble_matrix(&map, pattern.clone(), policy, |_| se.clone());
    let m = sp.assemble_matrix(&map, pattern, policy, |_| me.clone());
    Ok((k, m, map))
}

/// Poincaré constant `C` with `‖v‖_{L²(Ω_ε)} ≤ C ‖∇v‖_{L²(Ω_ε)}`.
pub fn poincare_constant(domain: &PerforatedDomain, opts: &EigenOptions, policy: &ExecPolicy) -> Result<ConstantEstimate, FunIneqError> {
    let (k, m, map) = poincare_matrices(domain, policy)?;
    estimate(domain, k, &m, map.n_free(), opts)
}

fn estimate(
    domain: &PerforatedDomain,
    k: SkylineMatrix,
    m: &SkylineMatrix,
    dofs: usize,
    opts: &EigenOptions,
) -> Result<ConstantEstimate, FunIneqError> {
    let (lambda, _, res, iters) = smallest_eigenpair(k, m, opts)?;
    Ok(ConstantEstimate {
        value: 1.0 / lambda.sqrt(),
        eigenvalue: lambda,
        eigen_residual: res,
        dof_count: dofs,
        eps: domain.eps_f64(),
        iterations: iters,
    })
}
