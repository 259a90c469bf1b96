//! Unfolding, local averages and two-scale distances.
//!
//! The unfolding of a field `u` on `Ω_ε` is `𝒯_ε(u)(x, y) = u(ε[x/ε] + εy)`.
//! It is constant in `x` on each cell `ε(k + Y)`, so samples are stored per
//! cell index `k` and per micro quadrature point `y`. With cell weight `εⁿ`
//! and Gauss weights in `y`, sums over samples are quadratures over `Ω × Y_s`
//! (or `Ω × Y` for fields defined on all of `Ω`).

use crate::c1grid::{gauss_legendre, C1Error, C1Field, C1Space, ElementBasis, Jet2};
use crate::exec::ExecPolicy;
use crate::geometry::{FacetTag, PerforatedDomain, UnitCell};
use crate::homog::CellSolution;
use crate::tensor::{flat, sym_coords, Tens3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwoScaleError {
    #[error(transparent)]
    Field(#[from] C1Error),
    #[error("field is not defined on all of Ω; extend it first")]
    FieldNotGlobal,
    #[error("second-order distance needs a corrector (use Corrector::Zero for none)")]
    MissingCorrector,
    #[error("basis corrector needs 6 cell solutions, got {0}")]
    CorrectorCount(usize),
    #[error("sample {0} is in a void element of the field's space")]
    PointInVoid(usize),
}

/// Which derivative of a field is sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Value,
    Grad,
    Hess,
}

impl Order {
    pub fn dim(self) -> usize {
        match self {
            Order::Value => 2,
            Order::Grad => 4,
            Order::Hess => 8,
        }
    }

    fn components(self, j: &Jet2) -> Vec<f64> {
        match self {
            Order::Value => j.value.to_vec(),
            Order::Grad => flat(&j.grad).to_vec(),
            Order::Hess => j.hess.0.to_vec(),
        }
    }
}

/// Micro sampling region in the reference cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    /// `Y_s` only.
    Solid,
    /// All of `Y`; the field must be defined on `Ω`.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub region: Region,
    /// Gauss points per axis and cell element.
    pub order: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            region: Region::Solid,
            order: 5,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct MicroPoint {
    elem: [usize; 2],
    st: [f64; 2],
    y: [f64; 2],
    weight: f64,
}

fn micro_rule(cell: &UnitCell, sampling: &Sampling) -> Vec<MicroPoint> {
    let m = cell.m();
    let hy = 1.0 / m as f64;
    let (gx, gw) = gauss_legendre(sampling.order);
    let mut out = Vec::new();
    for ey in 0..m {
        for ex in 0..m {
            if sampling.region == Region::Solid && !cell.is_solid(ex, ey) {
                continue;
            }
            for (jy, &t) in gx.iter().enumerate() {
                for (jx, &s) in gx.iter().enumerate() {
                    out.push(MicroPoint {
                        elem: [ex, ey],
                        st: [s, t],
                        y: [(ex as f64 + s) * hy, (ey as f64 + t) * hy],
                        weight: gw[jx] * gw[jy] * hy * hy,
                    });
                }
            }
        }
    }
    out
}

/// Unfolded samples, `values[(cell · n_micro + micro) · dim + component]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoScaleSamples {
    pub eps: f64,
    pub cells: Vec<[i64; 2]>,
    pub micro_points: Vec<[f64; 2]>,
    pub micro_weights: Vec<f64>,
    /// `εⁿ`, the measure of one macro cell.
    pub cell_measure: f64,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl TwoScaleSamples {
    pub fn n_micro(&self) -> usize {
        self.micro_points.len()
    }

    pub fn value(&self, cell: usize, micro: usize) -> &[f64] {
        let i = (cell * self.n_micro() + micro) * self.dim;
        &self.values[i..i + self.dim]
    }

    /// Sum of all sample weights, `|Ω| · |Y_s|` for solid sampling.
    pub fn total_weight(&self) -> f64 {
        self.cell_measure * self.cells.len() as f64 * self.micro_weights.iter().sum::<f64>()
    }

    /// `‖𝒯_ε u‖²_{L²(Ω × Y_s)}` by the sample quadrature.
    pub fn norm_sq(&self) -> f64 {
        let nm = self.n_micro();
        let mut total = 0.0;
        for c in 0..self.cells.len() {
            let mut acc = 0.0;
            for j in 0..nm {
                acc += self.micro_weights[j] * self.value(c, j).iter().map(|v| v * v).sum::<f64>();
            }
            total += acc;
        }
        self.cell_measure * total
    }

    /// Rows `(k1, k2, y1, y2, components...)` for persistence.
    pub fn rows(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let nm = self.n_micro();
        (0..self.cells.len()).flat_map(move |c| {
            (0..nm).map(move |j| {
                let k = self.cells[c];
                let y = self.micro_points[j];
                let mut r = vec![k[0] as f64, k[1] as f64, y[0], y[1]];
                r.extend_from_slice(self.value(c, j));
                r
            })
        })
    }
}

/// Jet of `u` at local coordinates `st` of global element `elem`, or `None`
/// if that element carries no DOFs in `u`'s space.
fn jet_in_element(u: &C1Field, elem: [usize; 2], st: [f64; 2]) -> Option<Jet2> {
    let sp = u.space();
    let slot = sp.slot(elem[0], elem[1])?;
    let b = ElementBasis::at(st[0], st[1], sp.h());
    Some(C1Space::jet_from_local(&b, &u.element_coeffs(slot)))
}

fn cell_origin(domain: &PerforatedDomain, k: [i64; 2]) -> [usize; 2] {
    let inv = domain.inv_eps() as i64;
    let m = domain.cell().m() as i64;
    [
        ((k[0] - domain.lo()[0] * inv) * m) as usize,
        ((k[1] - domain.lo()[1] * inv) * m) as usize,
    ]
}

fn sample(
    domain: &PerforatedDomain,
    u: &C1Field,
    order: Order,
    rule: &[MicroPoint],
    policy: &ExecPolicy,
) -> Result<TwoScaleSamples, TwoScaleError> {
    let cells = domain.cells().to_vec();
    let per_cell = policy.try_map(cells.len(), |c| {
        let o = cell_origin(domain, cells[c]);
        let mut vals = Vec::with_capacity(rule.len() * order.dim());
        for (j, p) in rule.iter().enumerate() {
            let jet = jet_in_element(u, [o[0] + p.elem[0], o[1] + p.elem[1]], p.st)
                .ok_or(TwoScaleError::PointInVoid(c * rule.len() + j))?;
            vals.extend(order.components(&jet));
        }
        Ok::<_, TwoScaleError>(vals)
    })?;
    let eps = domain.eps_f64();
    Ok(TwoScaleSamples {
        eps,
        cells,
        micro_points: rule.iter().map(|p| p.y).collect(),
        micro_weights: rule.iter().map(|p| p.weight).collect(),
        cell_measure: eps * eps,
        dim: order.dim(),
        values: per_cell.concat(),
    })
}

/// Jet of the unfolded field at cell `k` and micro point `y ∈ Y`.
pub fn unfold_point(domain: &PerforatedDomain, u: &C1Field, k: [i64; 2], y: [f64; 2]) -> Result<Jet2, TwoScaleError> {
    let eps = domain.eps_f64();
    Ok(u.eval_jet_at([eps * (k[0] as f64 + y[0]), eps * (k[1] as f64 + y[1])])?)
}

/// Samples `D^order u` on every cell and micro quadrature point.
pub fn unfold(
    domain: &PerforatedDomain,
    u: &C1Field,
    order: Order,
    sampling: &Sampling,
    policy: &ExecPolicy,
) -> Result<TwoScaleSamples, TwoScaleError> {
    let rule = micro_rule(domain.cell(), sampling);
    sample(domain, u, order, &rule, policy)
}

/// Boundary unfolding on `Γ`: samples `u(ε(k + y))` for `y` on the hole
/// boundary with weights `εⁿ · dσ_y`, so that the sample norm equals
/// `ε ‖u‖²_{L²(Γ_ε)}`.
pub fn unfold_boundary(
    domain: &PerforatedDomain,
    u: &C1Field,
    order: Order,
    gauss: usize,
    policy: &ExecPolicy,
) -> Result<TwoScaleSamples, TwoScaleError> {
    let cell = domain.cell();
    let m = cell.m();
    let hy = 1.0 / m as f64;
    let (gx, gw) = gauss_legendre(gauss);
    // Γ facets of the reference cell: (solid element, local coordinates along the facet)
    let mut rule: Vec<MicroPoint> = Vec::new();
    let solid = |ex: isize, ey: isize| {
        ex >= 0 && ey >= 0 && (ex as usize) < m && (ey as usize) < m && cell.is_solid(ex as usize, ey as usize)
    };
    for ey in 0..m as isize {
        for ex in 0..m as isize {
            if !solid(ex, ey) {
                continue;
            }
            let sides: [([isize; 2], bool, f64); 4] = [
                ([-1, 0], true, 0.0),
                ([1, 0], true, 1.0),
                ([0, -1], false, 0.0),
                ([0, 1], false, 1.0),
            ];
            for (d, vertical, at) in sides {
                let (nx, ny) = (ex + d[0], ey + d[1]);
                let inside = (0..m as isize).contains(&nx) && (0..m as isize).contains(&ny);
                if !inside || solid(nx, ny) {
                    continue;
                }
                for (&t, &w) in gx.iter().zip(&gw) {
                    let st = if vertical { [at, t] } else { [t, at] };
                    rule.push(MicroPoint {
                        elem: [ex as usize, ey as usize],
                        st,
                        y: [(ex as f64 + st[0]) * hy, (ey as f64 + st[1]) * hy],
                        weight: w * hy,
                    });
                }
            }
        }
    }
    sample(domain, u, order, &rule, policy)
}

/// `ε ∫_{Γ_ε} |D^order u|² dσ` by facet quadrature on the physical grid.
pub fn boundary_norm_sq(domain: &PerforatedDomain, u: &C1Field, order: Order, gauss: usize) -> Result<f64, TwoScaleError> {
    let h = domain.h();
    let (gx, gw) = gauss_legendre(gauss);
    let mut total = 0.0;
    for f in domain.facets().iter().filter(|f| f.tag == FacetTag::GammaEps) {
        let [ex, ey] = f.solid_element;
        for (&t, &w) in gx.iter().zip(&gw) {
            let st = if f.vertical {
                [(f.node[0] - ex) as f64, t]
            } else {
                [t, (f.node[1] - ey) as f64]
            };
            let jet = jet_in_element(u, [ex, ey], st).ok_or(TwoScaleError::FieldNotGlobal)?;
            total += w * h * order.components(&jet).iter().map(|v| v * v).sum::<f64>();
        }
    }
    Ok(domain.eps_f64() * total)
}

/// `ℳ_ε(u)`: the mean of `𝒯_ε(u)(x, ·)` over `Y`, one value per cell.
/// `u` must live on the filled grid (see [`crate::funineq::extend_field`]).
pub fn local_average(domain: &PerforatedDomain, u: &C1Field, policy: &ExecPolicy) -> Result<Vec<[f64; 2]>, TwoScaleError> {
    let [nx, ny] = domain.n_elem();
    if u.space().n_elements() != nx * ny {
        return Err(TwoScaleError::FieldNotGlobal);
    }
    let s = unfold(
        domain,
        u,
        Order::Value,
        &Sampling {
            region: Region::Full,
            order: 4,
        },
        policy,
    )?;
    let nm = s.n_micro();
    Ok((0..s.cells.len())
        .map(|c| {
            let mut acc = [0.0; 2];
            for j in 0..nm {
                let v = s.value(c, j);
                acc[0] += s.micro_weights[j] * v[0];
                acc[1] += s.micro_weights[j] * v[1];
            }
            acc
        })
        .collect())
}

/// Corrector added to the macroscopic second gradient.
#[derive(Clone, Copy, Debug)]
pub enum Corrector<'a> {
    /// `u₂ = 0`.
    Zero,
    /// One solution, used for every `x`.
    Single(&'a CellSolution),
    /// Correctors of the six symmetric unit tensors, superposed with the
    /// coordinates of `∇²u₀(x)`. Exact for `p = 2`.
    Basis(&'a [CellSolution]),
}

/// `‖𝒯_ε(D^order u_ε) − D^order u₀ [− ∇²_y u₂]‖_{L²(Ω × Y_s)}` with the macro
/// field evaluated at the physical point `ε(k + y)`.
pub fn two_scale_distance(
    domain: &PerforatedDomain,
    micro: &C1Field,
    macro_field: &C1Field,
    corrector: Option<Corrector<'_>>,
    order: Order,
    sampling: &Sampling,
    policy: &ExecPolicy,
) -> Result<f64, TwoScaleError> {
    if order == Order::Hess && corrector.is_none() {
        return Err(TwoScaleError::MissingCorrector);
    }
    if let Some(Corrector::Basis(b)) = corrector {
        if b.len() != 6 {
            return Err(TwoScaleError::CorrectorCount(b.len()));
        }
    }
    let rule = micro_rule(domain.cell(), sampling);
    let eps = domain.eps_f64();
    let cells = domain.cells();
    let corr_jet = |sol: &CellSolution, p: &MicroPoint| {
        jet_in_element(&sol.u2, p.elem, p.st).map(|j| j.hess).unwrap_or(Tens3::ZERO)
    };
    let parts = policy.try_map(cells.len(), |c| {
        let k = cells[c];
        let o = cell_origin(domain, k);
        let mut acc = 0.0;
        for (j, p) in rule.iter().enumerate() {
            let jm = jet_in_element(micro, [o[0] + p.elem[0], o[1] + p.elem[1]], p.st)
                .ok_or(TwoScaleError::PointInVoid(c * rule.len() + j))?;
            let x = [eps * (k[0] as f64 + p.y[0]), eps * (k[1] as f64 + p.y[1])];
            let j0 = macro_field.eval_jet_at(x)?;
            let a = order.components(&jm);
            let mut b = order.components(&j0);
            if order == Order::Hess {
                let extra = match corrector.expect("checked above") {
                    Corrector::Zero => Tens3::ZERO,
                    Corrector::Single(s) => corr_jet(s, p),
                    Corrector::Basis(sols) => {
                        let g = sym_coords(&j0.hess.sym());
                        let mut t = Tens3::ZERO;
                        for (ga, s) in g.iter().zip(sols) {
                            t += corr_jet(s, p) * *ga;
                        }
                        t
                    }
                };
                for (bi, e) in b.iter_mut().zip(extra.0) {
                    *bi += e;
                }
            }
            acc += p.weight * a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        Ok::<f64, TwoScaleError>(acc)
    })?;
    Ok((eps * eps * parts.iter().sum::<f64>()).sqrt())
}
