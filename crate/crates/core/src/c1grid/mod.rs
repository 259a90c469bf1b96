//! C1-conforming bicubic Hermite spaces on the structured grid.
//!
//! Every active node carries four DOFs per vector component: the value, the
//! two first derivatives and the mixed derivative `∂12`. Global DOF
//! `node * 8 + comp * 4 + k`; element-local DOF `comp * 16 + a * 4 + k` with
//! the local node order `(0,0), (1,0), (0,1), (1,1)`.

mod hermite;

pub use hermite::{gauss_legendre, hermite_1d, ElementBasis};

use crate::exec::ExecPolicy;
use crate::geometry::{Face, PerforatedDomain, UnitCell};
use crate::linalg::{DofMap, SkylineMatrix, SkylinePattern};
use crate::tensor::{t3, Mat2, Tens3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

pub const DOFS_PER_NODE: usize = 8;
pub const ELEM_DOFS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum C1Error {
    #[error("periodic spaces are only available on a unit cell")]
    PeriodicOnMacroDomain,
    #[error("quadrature order must be at least 3, got {0}")]
    QuadOrder(usize),
    #[error("point ({0}, {1}) does not lie in a solid element")]
    PointInVoid(f64, f64),
    #[error("density is not finite at quadrature point ({0}, {1})")]
    NonFiniteDensity(f64, f64),
    #[error("Dirichlet data cannot be applied on a periodic space")]
    PeriodicSpace,
    #[error("field length {got} does not match the space ({expected})")]
    Length { expected: usize, got: usize },
}

/// What a space is built on.
#[derive(Clone, Copy)]
pub enum SpaceSource<'a> {
    /// `Ω_ε`, DOFs on the solid closure.
    Domain(&'a PerforatedDomain),
    /// All of `Ω` on the same grid as the perforated domain; used for extensions.
    FilledDomain(&'a PerforatedDomain),
    /// The reference cell `Y`, DOFs on the closure of `Y_s`.
    Cell(&'a UnitCell),
}

/// Quadrature point data handed to density callbacks.
#[derive(Clone, Copy, Debug)]
pub struct QpInfo {
    /// Position of the element in [`C1Space::elements`].
    pub slot: usize,
    /// Quadrature point index inside the element.
    pub q: usize,
    pub x: [f64; 2],
    /// Cell coordinate `x/ε mod 1`.
    pub y: [f64; 2],
    pub weight: f64,
}

/// Value, gradient and second gradient of a vector field at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2 {
    pub value: [f64; 2],
    pub grad: Mat2,
    pub hess: Tens3,
}

impl Jet2 {
    pub const ZERO: Jet2 = Jet2 {
        value: [0.0; 2],
        grad: Mat2::new(0.0, 0.0, 0.0, 0.0),
        hess: Tens3::ZERO,
    };

    /// Jet of the identity map at `x`.
    pub fn identity(x: [f64; 2]) -> Jet2 {
        Jet2 {
            value: x,
            grad: Mat2::identity(),
            hess: Tens3::ZERO,
        }
    }
}

#[derive(Debug)]
pub struct C1Space {
    lo: [f64; 2],
    h: f64,
    n_elem: [usize; 2],
    /// Elements per cell side, used to compute the cell coordinate.
    m: usize,
    periodic: bool,
    /// Elements carrying DOFs and quadrature.
    included: Vec<bool>,
    /// Solid elements (`Ω_ε` or `Y_s`).
    solid: Vec<bool>,
    elements: Vec<[usize; 2]>,
    slot_of: Vec<usize>,
    nodes: Vec<[usize; 2]>,
    node_of: Vec<usize>,
    dirichlet: Vec<Face>,
    quad_order: usize,
    qpts: Vec<[f64; 2]>,
    qwts: Vec<f64>,
    basis: Vec<ElementBasis>,
    elem_nodes: Vec<[usize; 4]>,
}

const NONE: usize = usize::MAX;

impl C1Space {
    pub fn build(source: SpaceSource<'_>, periodic: bool, quad_order: usize) -> Result<Arc<Self>, C1Error> {
        if quad_order < 3 {
            return Err(C1Error::QuadOrder(quad_order));
        }
        let (lo, h, n_elem, m, solid, included, dirichlet) = match source {
            SpaceSource::Domain(d) | SpaceSource::FilledDomain(d) => {
                if periodic {
                    return Err(C1Error::PeriodicOnMacroDomain);
                }
                let solid = d.solid_mask().to_vec();
                let included = match source {
                    SpaceSource::FilledDomain(_) => vec![true; solid.len()],
                    _ => solid.clone(),
                };
                (
                    [d.lo()[0] as f64, d.lo()[1] as f64],
                    d.h(),
                    d.n_elem(),
                    d.cell().m(),
                    solid,
                    included,
                    d.dirichlet_faces().to_vec(),
                )
            }
            SpaceSource::Cell(c) => {
                let solid = c.solid_mask().to_vec();
                (
                    [0.0, 0.0],
                    c.element_size(),
                    [c.m(), c.m()],
                    c.m(),
                    solid.clone(),
                    solid,
                    Vec::new(),
                )
            }
        };
        let [nx, ny] = n_elem;
        let (nnx, nny) = if periodic { (nx, ny) } else { (nx + 1, ny + 1) };
        let mut used = vec![false; nnx * nny];
        let mut elements = Vec::new();
        let mut slot_of = vec![NONE; nx * ny];
        for ey in 0..ny {
            for ex in 0..nx {
                if included[ey * nx + ex] {
                    slot_of[ey * nx + ex] = elements.len();
                    elements.push([ex, ey]);
                    for a in 0..4 {
                        let (i, j) = ((ex + (a & 1)) % nnx, (ey + (a >> 1)) % nny);
                        used[j * nnx + i] = true;
                    }
                }
            }
        }
        let mut node_of = vec![NONE; nnx * nny];
        let mut nodes = Vec::new();
        for j in 0..nny {
            for i in 0..nnx {
                if used[j * nnx + i] {
                    node_of[j * nnx + i] = nodes.len();
                    nodes.push([i, j]);
                }
            }
        }
        let elem_nodes = elements
            .iter()
            .map(|&[ex, ey]| {
                let mut out = [0; 4];
                for (a, o) in out.iter_mut().enumerate() {
                    let (i, j) = ((ex + (a & 1)) % nnx, (ey + (a >> 1)) % nny);
                    *o = node_of[j * nnx + i];
                }
                out
            })
            .collect();
        let (gx, gw) = gauss_legendre(quad_order);
        let mut qpts = Vec::new();
        let mut qwts = Vec::new();
        let mut basis = Vec::new();
        for (jy, &t) in gx.iter().enumerate() {
            for (jx, &s) in gx.iter().enumerate() {
                qpts.push([s, t]);
                qwts.push(gw[jx] * gw[jy] * h * h);
                basis.push(ElementBasis::at(s, t, h));
            }
        }
        Ok(Arc::new(Self {
            lo,
            h,
            n_elem,
            m,
            periodic,
            included,
            solid,
            elements,
            slot_of,
            nodes,
            node_of,
            dirichlet,
            quad_order,
            qpts,
            qwts,
            basis,
            elem_nodes,
        }))
    }

    pub fn on_domain(domain: &PerforatedDomain) -> Arc<Self> {
        Self::build(SpaceSource::Domain(domain), false, 4).expect("valid default space")
    }

    pub fn on_filled_domain(domain: &PerforatedDomain) -> Arc<Self> {
        Self::build(SpaceSource::FilledDomain(domain), false, 4).expect("valid default space")
    }

    pub fn on_cell(cell: &UnitCell, periodic: bool) -> Arc<Self> {
        Self::build(SpaceSource::Cell(cell), periodic, 4).expect("valid default space")
    }

    pub fn n_dofs(&self) -> usize {
        self.nodes.len() * DOFS_PER_NODE
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lo(&self) -> [f64; 2] {
        self.lo
    }

    pub fn n_elem(&self) -> [usize; 2] {
        self.n_elem
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    pub fn n_qp(&self) -> usize {
        self.qwts.len()
    }

    /// Included elements as grid indices, in DOF-assembly order.
    pub fn elements(&self) -> &[[usize; 2]] {
        &self.elements
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn slot(&self, ex: usize, ey: usize) -> Option<usize> {
        let s = self.slot_of[ey * self.n_elem[0] + ex];
        (s != NONE).then_some(s)
    }

    pub fn is_solid_element(&self, slot: usize) -> bool {
        let [ex, ey] = self.elements[slot];
        self.solid[ey * self.n_elem[0] + ex]
    }

    pub fn is_included(&self, ex: usize, ey: usize) -> bool {
        self.included[ey * self.n_elem[0] + ex]
    }

    pub fn nodes(&self) -> &[[usize; 2]] {
        &self.nodes
    }

    pub fn node_index(&self, i: usize, j: usize) -> Option<usize> {
        let nnx = self.node_cols();
        let n = self.node_of.get(j * nnx + i).copied().unwrap_or(NONE);
        (n != NONE).then_some(n)
    }

    fn node_cols(&self) -> usize {
        if self.periodic {
            self.n_elem[0]
        } else {
            self.n_elem[0] + 1
        }
    }

    pub fn node_coord(&self, node: usize) -> [f64; 2] {
        let [i, j] = self.nodes[node];
        [self.lo[0] + i as f64 * self.h, self.lo[1] + j as f64 * self.h]
    }

    #[inline]
    pub fn dof(node: usize, comp: usize, k: usize) -> usize {
        node * DOFS_PER_NODE + comp * 4 + k
    }

    /// Global DOFs of an element in local order.
    pub fn element_dofs(&self, slot: usize) -> [usize; ELEM_DOFS] {
        let nodes = &self.elem_nodes[slot];
        let mut out = [0; ELEM_DOFS];
        for c in 0..2 {
            for (a, &n) in nodes.iter().enumerate() {
                for k in 0..4 {
                    out[c * 16 + a * 4 + k] = Self::dof(n, c, k);
                }
            }
        }
        out
    }

    /// Basis tables at the quadrature points of the reference element.
    pub fn basis(&self) -> &[ElementBasis] {
        &self.basis
    }

    pub fn quad_weight(&self, q: usize) -> f64 {
        self.qwts[q]
    }

    pub fn quad_point_local(&self, q: usize) -> [f64; 2] {
        self.qpts[q]
    }

    pub fn qp_info(&self, slot: usize, q: usize) -> QpInfo {
        let [ex, ey] = self.elements[slot];
        let [s, t] = self.qpts[q];
        self.point_info(slot, ex, ey, s, t, self.qwts[q], q)
    }

    #[allow(clippy::too_many_arguments)]
    fn point_info(&self, slot: usize, ex: usize, ey: usize, s: f64, t: f64, weight: f64, q: usize) -> QpInfo {
        let m = self.m as f64;
        QpInfo {
            slot,
            q,
            x: [
                self.lo[0] + (ex as f64 + s) * self.h,
                self.lo[1] + (ey as f64 + t) * self.h,
            ],
            y: [((ex % self.m) as f64 + s) / m, ((ey % self.m) as f64 + t) / m],
            weight,
        }
    }

    /// Locates the element containing `x` and its local coordinates.
    pub fn locate(&self, x: [f64; 2]) -> Result<(usize, [f64; 2]), C1Error> {
        let mut loc = [0usize; 2];
        let mut st = [0.0; 2];
        for d in 0..2 {
            let mut r = (x[d] - self.lo[d]) / self.h;
            let n = self.n_elem[d];
            if self.periodic {
                r = r.rem_euclid(n as f64);
            } else if !(-1e-12..=n as f64 + 1e-12).contains(&r) {
                return Err(C1Error::PointInVoid(x[0], x[1]));
            }
            let e = (r.floor().max(0.0) as usize).min(n - 1);
            loc[d] = e;
            st[d] = (r - e as f64).clamp(0.0, 1.0);
        }
        let slot = self.slot(loc[0], loc[1]).ok_or(C1Error::PointInVoid(x[0], x[1]))?;
        // points on the boundary of a void element may belong to a solid neighbour
        Ok((slot, st))
    }

    /// Like [`Self::locate`] but also accepts points on the closure of a
    /// solid element that borders a void one.
    fn locate_closure(&self, x: [f64; 2]) -> Result<(usize, [f64; 2]), C1Error> {
        if let Ok(r) = self.locate(x) {
            return Ok(r);
        }
        let tol = 1e-12;
        for dx in [-1i64, 0, 1] {
            for dy in [-1i64, 0, 1] {
                let ex = ((x[0] - self.lo[0]) / self.h).floor() as i64 + dx;
                let ey = ((x[1] - self.lo[1]) / self.h).floor() as i64 + dy;
                if ex < 0 || ey < 0 || ex >= self.n_elem[0] as i64 || ey >= self.n_elem[1] as i64 {
                    continue;
                }
                let (ex, ey) = (ex as usize, ey as usize);
                if let Some(slot) = self.slot(ex, ey) {
                    let s = (x[0] - self.lo[0]) / self.h - ex as f64;
                    let t = (x[1] - self.lo[1]) / self.h - ey as f64;
                    if (-tol..=1.0 + tol).contains(&s) && (-tol..=1.0 + tol).contains(&t) {
                        return Ok((slot, [s.clamp(0.0, 1.0), t.clamp(0.0, 1.0)]));
                    }
                }
            }
        }
        Err(C1Error::PointInVoid(x[0], x[1]))
    }

    /// Nodes lying on `face` of the outer rectangle.
    pub fn face_nodes(&self, face: Face) -> Vec<usize> {
        let [nx, ny] = self.n_elem;
        (0..self.nodes.len())
            .filter(|&n| {
                let [i, j] = self.nodes[n];
                match face {
                    Face::X1Lo => i == 0,
                    Face::X1Hi => i == nx,
                    Face::X2Lo => j == 0,
                    Face::X2Hi => j == ny,
                }
            })
            .collect()
    }

    /// DOFs fixed by a Dirichlet condition on `Γ^D`: values and the
    /// tangential derivative, for both components. Sorted and deduplicated.
    pub fn dirichlet_dofs(&self) -> Result<Vec<usize>, C1Error> {
        if self.periodic {
            return Err(C1Error::PeriodicSpace);
        }
        let mut out = Vec::new();
        for &face in &self.dirichlet {
            let tangential = if face.normal_axis() == 0 { 2 } else { 1 };
            for n in self.face_nodes(face) {
                for c in 0..2 {
                    out.push(Self::dof(n, c, 0));
                    out.push(Self::dof(n, c, tangential));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn dirichlet_faces(&self) -> &[Face] {
        &self.dirichlet
    }

    /// DOF map with the Dirichlet DOFs constrained.
    pub fn dirichlet_map(&self) -> Result<DofMap, C1Error> {
        Ok(DofMap::new(self.n_dofs(), &self.dirichlet_dofs()?))
    }

    /// Skyline envelope of element couplings among free DOFs.
    pub fn pattern(&self, map: &DofMap) -> SkylinePattern {
        let blocks: Vec<Vec<usize>> = (0..self.elements.len())
            .map(|s| self.element_dofs(s).iter().filter_map(|&g| map.free_index(g)).collect())
            .collect();
        SkylinePattern::from_blocks(map.n_free(), blocks.iter().map(|b| b.as_slice()))
    }

    /// Assembles `sum_e K_e` over included elements into the free-DOF
    /// skyline matrix. Element matrices are `32 x 32`, row-major, in local
    /// DOF order.
    pub fn assemble_matrix<F>(&self, map: &DofMap, pattern: Arc<SkylinePattern>, policy: &ExecPolicy, elem: F) -> SkylineMatrix
    where
        F: Fn(usize) -> Vec<f64> + Sync + Send,
    {
        let mats = policy.map(self.elements.len(), &elem);
        let mut a = SkylineMatrix::zeros(pattern);
        for (slot, ke) in mats.iter().enumerate() {
            let dofs = self.element_dofs(slot).map(|g| map.free_index(g));
            a.add_block(&dofs, ke);
        }
        a
    }

    /// Element matrix of `c0 ∫ v·w + c1 ∫ ∇v:∇w + c2 ∫ ∇²v ⋮ ∇²w` on a
    /// single element (identical on every element of a uniform grid).
    pub fn reference_gram(&self, c0: f64, c1: f64, c2: f64) -> Vec<f64> {
        let mut ke = vec![0.0; ELEM_DOFS * ELEM_DOFS];
        for (q, b) in self.basis.iter().enumerate() {
            let w = self.qwts[q];
            for s in 0..16 {
                for t in 0..16 {
                    let v = c0 * b.val[s] * b.val[t]
                        + c1 * (b.grad[s][0] * b.grad[t][0] + b.grad[s][1] * b.grad[t][1])
                        + c2 * (b.hess[s][0] * b.hess[t][0]
                            + 2.0 * b.hess[s][1] * b.hess[t][1]
                            + b.hess[s][2] * b.hess[t][2]);
                    for c in 0..2 {
                        ke[(c * 16 + s) * ELEM_DOFS + c * 16 + t] += w * v;
                    }
                }
            }
        }
        ke
    }

    /// Gram matrix of the `H²` inner product on the free DOFs.
    pub fn h2_gram(&self, map: &DofMap, policy: &ExecPolicy) -> SkylineMatrix {
        let ke = self.reference_gram(1.0, 1.0, 1.0);
        let pattern = Arc::new(self.pattern(map));
        self.assemble_matrix(map, pattern, policy, |_| ke.clone())
    }

    /// Jet at local coordinates of an element from element coefficients.
    #[inline]
    pub fn jet_from_local(b: &ElementBasis, c: &[f64; ELEM_DOFS]) -> Jet2 {
        let mut value = [0.0; 2];
        let mut grad = [0.0; 4];
        let mut hess = Tens3::ZERO;
        for comp in 0..2 {
            let cc = &c[comp * 16..comp * 16 + 16];
            let (mut v, mut g0, mut g1, mut h0, mut h1, mut h2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for s in 0..16 {
                let x = cc[s];
                v += x * b.val[s];
                g0 += x * b.grad[s][0];
                g1 += x * b.grad[s][1];
                h0 += x * b.hess[s][0];
                h1 += x * b.hess[s][1];
                h2 += x * b.hess[s][2];
            }
            value[comp] = v;
            grad[2 * comp] = g0;
            grad[2 * comp + 1] = g1;
            hess[t3(comp, 0, 0)] = h0;
            hess[t3(comp, 0, 1)] = h1;
            hess[t3(comp, 1, 0)] = h1;
            hess[t3(comp, 1, 1)] = h2;
        }
        Jet2 {
            value,
            grad: Mat2::new(grad[0], grad[1], grad[2], grad[3]),
            hess,
        }
    }

    pub fn gather_element(&self, slot: usize, coeffs: &[f64]) -> [f64; ELEM_DOFS] {
        self.element_dofs(slot).map(|g| coeffs[g])
    }
}

/// A vector field in a [`C1Space`].
#[derive(Clone, Debug)]
pub struct C1Field {
    space: Arc<C1Space>,
    pub coeffs: Vec<f64>,
}

impl PartialEq for C1Field {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.space, &other.space) && self.coeffs == other.coeffs
    }
}

impl C1Field {
    pub fn zeros(space: &Arc<C1Space>) -> Self {
        Self {
            coeffs: vec![0.0; space.n_dofs()],
            space: space.clone(),
        }
    }

    pub fn from_coeffs(space: &Arc<C1Space>, coeffs: Vec<f64>) -> Result<Self, C1Error> {
        if coeffs.len() != space.n_dofs() {
            return Err(C1Error::Length {
                expected: space.n_dofs(),
                got: coeffs.len(),
            });
        }
        Ok(Self {
            space: space.clone(),
            coeffs,
        })
    }

    pub fn space(&self) -> &Arc<C1Space> {
        &self.space
    }

    /// Nodal interpolation of a smooth map given by its jet. Uses the value,
    /// gradient and mixed second derivative at each node.
    pub fn interpolate(space: &Arc<C1Space>, f: impl Fn([f64; 2]) -> Jet2) -> Self {
        let mut out = Self::zeros(space);
        for n in 0..space.n_nodes() {
            let j = f(space.node_coord(n));
            for c in 0..2 {
                out.coeffs[C1Space::dof(n, c, 0)] = j.value[c];
                out.coeffs[C1Space::dof(n, c, 1)] = j.grad[(c, 0)];
                out.coeffs[C1Space::dof(n, c, 2)] = j.grad[(c, 1)];
                out.coeffs[C1Space::dof(n, c, 3)] = j.hess[t3(c, 0, 1)];
            }
        }
        out
    }

    pub fn identity(space: &Arc<C1Space>) -> Self {
        Self::interpolate(space, Jet2::identity)
    }

    pub fn constant(space: &Arc<C1Space>, c: [f64; 2]) -> Self {
        Self::interpolate(space, |_| Jet2 {
            value: c,
            ..Jet2::ZERO
        })
    }

    /// Field with independent uniform DOFs in `[-1, 1]`, derivative DOFs
    /// scaled by `h` and mixed DOFs by `h²` so that every DOF type contributes
    /// at the same order.
    pub fn random(space: &Arc<C1Space>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = space.h();
        let scale = [1.0, h, h, h * h];
        let coeffs = (0..space.n_dofs())
            .map(|g| rng.gen_range(-1.0..=1.0) * scale[g % 4])
            .collect();
        Self {
            space: space.clone(),
            coeffs,
        }
    }

    /// Sets value and tangential-derivative DOFs on `Γ^D` to those of the
    /// identity and returns the constrained DOF set.
    pub fn apply_dirichlet_id(&mut self) -> Result<Vec<usize>, C1Error> {
        let dofs = self.space.dirichlet_dofs()?;
        for &g in &dofs {
            let node = g / DOFS_PER_NODE;
            let comp = (g / 4) % 2;
            let k = g % 4;
            let x = self.space.node_coord(node);
            self.coeffs[g] = match k {
                0 => x[comp],
                1 => (comp == 0) as i32 as f64,
                2 => (comp == 1) as i32 as f64,
                _ => 0.0,
            };
        }
        Ok(dofs)
    }

    pub fn element_coeffs(&self, slot: usize) -> [f64; ELEM_DOFS] {
        self.space.gather_element(slot, &self.coeffs)
    }

    /// Jets at all quadrature points of one element.
    pub fn element_jets(&self, slot: usize) -> Vec<Jet2> {
        let c = self.element_coeffs(slot);
        self.space.basis().iter().map(|b| C1Space::jet_from_local(b, &c)).collect()
    }

    pub fn eval_jet_at(&self, x: [f64; 2]) -> Result<Jet2, C1Error> {
        let (slot, [s, t]) = self.space.locate_closure(x)?;
        let b = ElementBasis::at(s, t, self.space.h());
        Ok(C1Space::jet_from_local(&b, &self.element_coeffs(slot)))
    }

    pub fn eval_jet(&self, points: &[[f64; 2]]) -> Result<Vec<Jet2>, C1Error> {
        points.iter().map(|&x| self.eval_jet_at(x)).collect()
    }

    /// Quadrature of `density` over all included elements.
    pub fn integrate<F>(&self, policy: &ExecPolicy, density: F) -> Result<f64, C1Error>
    where
        F: Fn(&QpInfo, &Jet2) -> f64 + Sync + Send,
    {
        self.integrate_where(policy, |_| true, density)
    }

    /// Quadrature restricted to elements accepted by `filter(slot)`.
    pub fn integrate_where<P, F>(&self, policy: &ExecPolicy, filter: P, density: F) -> Result<f64, C1Error>
    where
        P: Fn(usize) -> bool + Sync + Send,
        F: Fn(&QpInfo, &Jet2) -> f64 + Sync + Send,
    {
        let sp = &self.space;
        let parts = policy.try_map(sp.n_elements(), |slot| {
            if !filter(slot) {
                return Ok(0.0);
            }
            let c = self.element_coeffs(slot);
            let mut acc = 0.0;
            for (q, b) in sp.basis().iter().enumerate() {
                let info = sp.qp_info(slot, q);
                let jet = C1Space::jet_from_local(b, &c);
                let v = density(&info, &jet);
                if !v.is_finite() {
                    return Err(C1Error::NonFiniteDensity(info.x[0], info.x[1]));
                }
                acc += info.weight * v;
            }
            Ok(acc)
        })?;
        if policy.parallel && !policy.deterministic {
            return Ok(policy.sum(parts.len(), |i| parts[i]));
        }
        Ok(parts.iter().sum())
    }

    /// `‖u‖²_{L²}`, `‖∇u‖²_{L²}` and `‖∇²u‖²_{L²}` over elements accepted by `filter`.
    pub fn norms_sq_where<P>(&self, policy: &ExecPolicy, filter: P) -> [f64; 3]
    where
        P: Fn(usize) -> bool + Sync + Send,
    {
        let sp = &self.space;
        let parts = policy.map(sp.n_elements(), |slot| {
            let mut acc = [0.0; 3];
            if !filter(slot) {
                return acc;
            }
            let c = self.element_coeffs(slot);
            for (q, b) in sp.basis().iter().enumerate() {
                let w = sp.quad_weight(q);
                let j = C1Space::jet_from_local(b, &c);
                acc[0] += w * (j.value[0] * j.value[0] + j.value[1] * j.value[1]);
                acc[1] += w * j.grad.norm_squared();
                acc[2] += w * j.hess.norm_sq();
            }
            acc
        });
        parts.iter().fold([0.0; 3], |a, p| [a[0] + p[0], a[1] + p[1], a[2] + p[2]])
    }

    pub fn norms_sq(&self, policy: &ExecPolicy) -> [f64; 3] {
        self.norms_sq_where(policy, |_| true)
    }

    /// Flat rows `(node, component, k, value)` for persistence.
    pub fn rows(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(g, &v)| (g / DOFS_PER_NODE, (g / 4) % 2, g % 4, v))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }

    /// Minimum of `det ∇u` over all quadrature points.
    pub fn det_min(&self, policy: &ExecPolicy) -> f64 {
        let sp = &self.space;
        let parts = policy.map(sp.n_elements(), |slot| {
            let c = self.element_coeffs(slot);
            sp.basis()
                .iter()
                .map(|b| C1Space::jet_from_local(b, &c).grad.determinant())
                .fold(f64::INFINITY, f64::min)
        });
        parts.into_iter().fold(f64::INFINITY, f64::min)
    }
}
