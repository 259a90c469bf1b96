//! Periodic unit cell with a rectangular perforation and the scaled
//! perforated domain built from it.
//!
//! Holes are axis-aligned and aligned to the `m x m` element partition of the
//! cell, so every element is either fully solid or fully void. Only strictly
//! interior holes are supported, which keeps the complement of the solid
//! disconnected and makes the Dirichlet part of the solid boundary coincide
//! with the chosen faces of the outer rectangle.

use num_rational::Rational64;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub type Rational = Rational64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("hole closure touches the cell boundary")]
    HoleTouchesBoundary,
    #[error("hole corner {0} does not lie on the {1}-grid")]
    MisalignedHole(String, usize),
    #[error("hole rectangle is empty or inverted")]
    EmptyHole,
    #[error("elements per cell side must be at least 4, got {0}")]
    InvalidResolution(usize),
    #[error("1/eps must be a positive integer, got eps = {0}")]
    NonIntegerInverseEps(String),
    #[error("solid region is not connected")]
    DisconnectedSolid,
    #[error("at least one Dirichlet face is required")]
    EmptyDirichlet,
    #[error("macroscopic extent must have integer corners with lo < hi")]
    InvalidExtent,
    #[error("unknown boundary tag '{0}'")]
    UnknownTag(String),
    #[error("unknown face '{0}' (expected x1=0, x1=1, x2=0 or x2=1)")]
    UnknownFace(String),
}

/// Axis-aligned rectangle `(x0, x1) x (y0, y1)` with rational corners.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x0: Rational,
    pub y0: Rational,
    pub x1: Rational,
    pub y1: Rational,
}

impl Rect {
    pub fn new(x0: Rational, y0: Rational, x1: Rational, y1: Rational) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Square `(a, b)^2`.
    pub fn square(a: Rational, b: Rational) -> Self {
        Self::new(a, a, b, b)
    }

    pub fn area(&self) -> Rational {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn perimeter(&self) -> Rational {
        (self.x1 - self.x0 + self.y1 - self.y0) * 2
    }
}

/// Reference cell `Y = (0,1)^2` discretized by `m x m` elements.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitCell {
    hole: Option<Rect>,
    m: usize,
    /// `solid_mask[ey * m + ex]`
    solid_mask: Vec<bool>,
}

impl UnitCell {
    pub fn build(hole: Option<Rect>, m: usize) -> Result<Self, GeometryError> {
        if m < 4 {
            return Err(GeometryError::InvalidResolution(m));
        }
        let mut solid_mask = vec![true; m * m];
        if let Some(r) = hole {
            if r.x0 >= r.x1 || r.y0 >= r.y1 {
                return Err(GeometryError::EmptyHole);
            }
            let zero = Rational::zero();
            let one = Rational::from_integer(1);
            if r.x0 <= zero || r.y0 <= zero || r.x1 >= one || r.y1 >= one {
                return Err(GeometryError::HoleTouchesBoundary);
            }
            let mr = Rational::from_integer(m as i64);
            let mut idx = [0usize; 4];
            for (slot, c) in [r.x0, r.y0, r.x1, r.y1].into_iter().enumerate() {
                let scaled = c * mr;
                if !scaled.is_integer() {
                    return Err(GeometryError::MisalignedHole(c.to_string(), m));
                }
                idx[slot] = scaled.to_integer() as usize;
            }
            for ey in idx[1]..idx[3] {
                for ex in idx[0]..idx[2] {
                    solid_mask[ey * m + ex] = false;
                }
            }
        }
        let cell = Self {
            hole,
            m,
            solid_mask,
        };
        if !flood_fill_connected(m, m, |ex, ey| cell.is_solid(ex, ey)) {
            return Err(GeometryError::DisconnectedSolid);
        }
        Ok(cell)
    }

    /// Cell without perforation (`Y_s = Y`).
    pub fn full(m: usize) -> Result<Self, GeometryError> {
        Self::build(None, m)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn hole(&self) -> Option<Rect> {
        self.hole
    }

    pub fn is_solid(&self, ex: usize, ey: usize) -> bool {
        self.solid_mask[ey * self.m + ex]
    }

    pub fn solid_mask(&self) -> &[bool] {
        &self.solid_mask
    }

    /// Element index ranges `[ex0, ex1) x [ey0, ey1)` covered by the hole.
    pub fn hole_elements(&self) -> Option<[usize; 4]> {
        self.hole.map(|r| {
            let m = Rational::from_integer(self.m as i64);
            [r.x0, r.y0, r.x1, r.y1].map(|c| (c * m).to_integer() as usize)
        })
    }

    /// `|Y_s|`
    pub fn solid_area(&self) -> Rational {
        Rational::from_integer(1) - self.hole.map(|r| r.area()).unwrap_or_else(Rational::zero)
    }

    /// Length of `Γ = ∂Y_s \ ∂Y`.
    pub fn gamma_length(&self) -> Rational {
        self.hole.map(|r| r.perimeter()).unwrap_or_else(Rational::zero)
    }

    pub fn element_size(&self) -> f64 {
        1.0 / self.m as f64
    }
}

/// A face of the outer rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Face {
    /// `x1 = a1`
    X1Lo,
    /// `x1 = b1`
    X1Hi,
    /// `x2 = a2`
    X2Lo,
    /// `x2 = b2`
    X2Hi,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::X1Lo, Face::X1Hi, Face::X2Lo, Face::X2Hi];

    /// Axis normal to the face (0 or 1).
    pub fn normal_axis(&self) -> usize {
        match self {
            Face::X1Lo | Face::X1Hi => 0,
            Face::X2Lo | Face::X2Hi => 1,
        }
    }
}

impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Face::X1Lo => "x1=0",
            Face::X1Hi => "x1=1",
            Face::X2Lo => "x2=0",
            Face::X2Hi => "x2=1",
        };
        f.write_str(s)
    }
}

impl FromStr for Face {
    type Err = GeometryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace(' ', "").as_str() {
            "x1=0" | "x1=lo" => Ok(Face::X1Lo),
            "x1=1" | "x1=hi" => Ok(Face::X1Hi),
            "x2=0" | "x2=lo" => Ok(Face::X2Lo),
            "x2=1" | "x2=hi" => Ok(Face::X2Hi),
            _ => Err(GeometryError::UnknownFace(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FacetTag {
    /// Boundary of the perforations, `Γ_ε`.
    GammaEps,
    GammaD,
    GammaN,
    Interior,
}

impl FromStr for FacetTag {
    type Err = GeometryError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "GammaEps" | "gamma_eps" => Ok(FacetTag::GammaEps),
            "GammaD" | "gamma_d" => Ok(FacetTag::GammaD),
            "GammaN" | "gamma_n" => Ok(FacetTag::GammaN),
            "Interior" | "interior" => Ok(FacetTag::Interior),
            _ => Err(GeometryError::UnknownTag(s.to_string())),
        }
    }
}

/// An element edge of the global grid that borders at least one solid element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Facet {
    /// `true` for an edge parallel to x2 (constant x1).
    pub vertical: bool,
    /// Grid node index of the lower/left end point.
    pub node: [usize; 2],
    pub tag: FacetTag,
    /// Solid element on the side the outward normal points away from.
    pub solid_element: [usize; 2],
    /// Outward unit normal of the solid element across this facet.
    pub normal: [f64; 2],
}

/// `Ω_ε`: union of scaled solid cells tiling an integer rectangle.
#[derive(Clone, Debug)]
pub struct PerforatedDomain {
    cell: UnitCell,
    eps: Rational,
    lo: [i64; 2],
    hi: [i64; 2],
    dirichlet: Vec<Face>,
    n_elem: [usize; 2],
    solid: Vec<bool>,
    cells: Vec<[i64; 2]>,
    facets: Vec<Facet>,
}

pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    if let Ok(r) = Rational::from_str(s) {
        return Some(r);
    }
    // decimal literal, e.g. "0.25"
    let v: f64 = s.parse().ok()?;
    rational_from_f64(v)
}

/// Exact rational for decimals with at most 12 fractional digits.
pub fn rational_from_f64(v: f64) -> Option<Rational> {
    if !v.is_finite() {
        return None;
    }
    let den: i64 = 1_000_000_000_000;
    let num = (v * den as f64).round();
    if (num / den as f64 - v).abs() > 1e-15 * v.abs().max(1.0) {
        return None;
    }
    Some(Rational::new(num as i64, den))
}

/// Validates `eps` and returns `1/eps`.
pub fn inverse_eps(eps: Rational) -> Result<usize, GeometryError> {
    if eps <= Rational::zero() {
        return Err(GeometryError::NonIntegerInverseEps(eps.to_string()));
    }
    let inv = eps.recip();
    if !inv.is_integer() {
        return Err(GeometryError::NonIntegerInverseEps(eps.to_string()));
    }
    Ok(inv.to_integer() as usize)
}

impl PerforatedDomain {
    /// Domain over the default extent `(0,1)^2`.
    pub fn build(cell: UnitCell, eps: Rational, dirichlet: &[Face]) -> Result<Self, GeometryError> {
        Self::build_on(cell, eps, [0, 0], [1, 1], dirichlet)
    }

    pub fn build_on(
        cell: UnitCell,
        eps: Rational,
        lo: [i64; 2],
        hi: [i64; 2],
        dirichlet: &[Face],
    ) -> Result<Self, GeometryError> {
        let n_inv = inverse_eps(eps)? as i64;
        if lo[0] >= hi[0] || lo[1] >= hi[1] {
            return Err(GeometryError::InvalidExtent);
        }
        let mut dirichlet: Vec<Face> = dirichlet.to_vec();
        dirichlet.sort();
        dirichlet.dedup();
        if dirichlet.is_empty() {
            return Err(GeometryError::EmptyDirichlet);
        }
        let m = cell.m();
        let ncell = [
            ((hi[0] - lo[0]) * n_inv) as usize,
            ((hi[1] - lo[1]) * n_inv) as usize,
        ];
        let n_elem = [ncell[0] * m, ncell[1] * m];
        let mut cells = Vec::with_capacity(ncell[0] * ncell[1]);
        for ky in 0..ncell[1] {
            for kx in 0..ncell[0] {
                cells.push([lo[0] * n_inv + kx as i64, lo[1] * n_inv + ky as i64]);
            }
        }
        let mut solid = vec![false; n_elem[0] * n_elem[1]];
        for ey in 0..n_elem[1] {
            for ex in 0..n_elem[0] {
                solid[ey * n_elem[0] + ex] = cell.is_solid(ex % m, ey % m);
            }
        }
        let mut domain = Self {
            cell,
            eps,
            lo,
            hi,
            dirichlet,
            n_elem,
            solid,
            cells,
            facets: Vec::new(),
        };
        if !flood_fill_connected(n_elem[0], n_elem[1], |ex, ey| domain.is_solid(ex, ey)) {
            return Err(GeometryError::DisconnectedSolid);
        }
        domain.facets = domain.classify_facets();
        Ok(domain)
    }

    fn classify_facets(&self) -> Vec<Facet> {
        let [nx, ny] = self.n_elem;
        let mut out = Vec::new();
        let solid_at = |ex: isize, ey: isize| -> bool {
            ex >= 0 && ey >= 0 && (ex as usize) < nx && (ey as usize) < ny && self.is_solid(ex as usize, ey as usize)
        };
        // vertical edges: x-index i, row ey
        for ey in 0..ny {
            for i in 0..=nx {
                let left = solid_at(i as isize - 1, ey as isize);
                let right = solid_at(i as isize, ey as isize);
                if !left && !right {
                    continue;
                }
                let (tag, solid_element, normal) = match (left, right) {
                    (true, true) => (FacetTag::Interior, [i - 1, ey], [1.0, 0.0]),
                    (true, false) => {
                        let tag = if i == nx { self.face_tag(Face::X1Hi) } else { FacetTag::GammaEps };
                        (tag, [i - 1, ey], [1.0, 0.0])
                    }
                    (false, true) => {
                        let tag = if i == 0 { self.face_tag(Face::X1Lo) } else { FacetTag::GammaEps };
                        (tag, [i, ey], [-1.0, 0.0])
                    }
                    (false, false) => unreachable!(),
                };
                out.push(Facet {
                    vertical: true,
                    node: [i, ey],
                    tag,
                    solid_element,
                    normal,
                });
            }
        }
        // horizontal edges: y-index j, column ex
        for j in 0..=ny {
            for ex in 0..nx {
                let below = solid_at(ex as isize, j as isize - 1);
                let above = solid_at(ex as isize, j as isize);
                if !below && !above {
                    continue;
                }
                let (tag, solid_element, normal) = match (below, above) {
                    (true, true) => (FacetTag::Interior, [ex, j - 1], [0.0, 1.0]),
                    (true, false) => {
                        let tag = if j == ny { self.face_tag(Face::X2Hi) } else { FacetTag::GammaEps };
                        (tag, [ex, j - 1], [0.0, 1.0])
                    }
                    (false, true) => {
                        let tag = if j == 0 { self.face_tag(Face::X2Lo) } else { FacetTag::GammaEps };
                        (tag, [ex, j], [0.0, -1.0])
                    }
                    (false, false) => unreachable!(),
                };
                out.push(Facet {
                    vertical: false,
                    node: [ex, j],
                    tag,
                    solid_element,
                    normal,
                });
            }
        }
        out
    }

    fn face_tag(&self, face: Face) -> FacetTag {
        if self.dirichlet.contains(&face) {
            FacetTag::GammaD
        } else {
            FacetTag::GammaN
        }
    }

    pub fn cell(&self) -> &UnitCell {
        &self.cell
    }

    pub fn eps(&self) -> Rational {
        self.eps
    }

    pub fn eps_f64(&self) -> f64 {
        self.eps.to_f64().unwrap_or(f64::NAN)
    }

    pub fn inv_eps(&self) -> usize {
        self.eps.recip().to_integer() as usize
    }

    pub fn lo(&self) -> [i64; 2] {
        self.lo
    }

    pub fn hi(&self) -> [i64; 2] {
        self.hi
    }

    pub fn dirichlet_faces(&self) -> &[Face] {
        &self.dirichlet
    }

    /// Number of elements along each axis of the global grid.
    pub fn n_elem(&self) -> [usize; 2] {
        self.n_elem
    }

    pub fn element_size(&self) -> Rational {
        self.eps / Rational::from_integer(self.cell.m() as i64)
    }

    pub fn h(&self) -> f64 {
        self.element_size().to_f64().unwrap_or(f64::NAN)
    }

    pub fn is_solid(&self, ex: usize, ey: usize) -> bool {
        self.solid[ey * self.n_elem[0] + ex]
    }

    pub fn solid_mask(&self) -> &[bool] {
        &self.solid
    }

    pub fn cells(&self) -> &[[i64; 2]] {
        &self.cells
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    /// Physical coordinates of grid node `(i, j)`.
    pub fn node_coord(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.h();
        [self.lo[0] as f64 + i as f64 * h, self.lo[1] as f64 + j as f64 * h]
    }

    /// `|Ω|`
    pub fn macro_area(&self) -> Rational {
        Rational::from_integer((self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1]))
    }

    /// `|Ω_ε|` by element counting.
    pub fn solid_area(&self) -> Rational {
        let h = self.element_size();
        let n = self.solid.iter().filter(|s| **s).count() as i64;
        h * h * n
    }

    /// Total length of facets carrying `tag`.
    pub fn boundary_measure(&self, tag: FacetTag) -> f64 {
        self.boundary_measure_exact(tag).to_f64().unwrap_or(f64::NAN)
    }

    pub fn boundary_measure_exact(&self, tag: FacetTag) -> Rational {
        let n = self.facets.iter().filter(|f| f.tag == tag).count() as i64;
        self.element_size() * n
    }

    /// Lookup by textual tag name.
    pub fn boundary_measure_named(&self, tag: &str) -> Result<f64, GeometryError> {
        Ok(self.boundary_measure(tag.parse()?))
    }

    /// Cell coordinate `y = x/ε mod 1`.
    pub fn cell_coord(&self, x: [f64; 2]) -> [f64; 2] {
        let inv = self.inv_eps() as f64;
        [frac(x[0] * inv), frac(x[1] * inv)]
    }
}

#[inline]
pub fn frac(v: f64) -> f64 {
    v - v.floor()
}

fn flood_fill_connected(nx: usize, ny: usize, solid: impl Fn(usize, usize) -> bool) -> bool {
    let total = (0..ny).flat_map(|y| (0..nx).map(move |x| (x, y))).filter(|&(x, y)| solid(x, y)).count();
    if total == 0 {
        return false;
    }
    let start = (0..ny)
        .flat_map(|y| (0..nx).map(move |x| (x, y)))
        .find(|&(x, y)| solid(x, y))
        .unwrap();
    let mut seen = vec![false; nx * ny];
    let mut stack = vec![start];
    seen[start.1 * nx + start.0] = true;
    let mut count = 0;
    while let Some((x, y)) = stack.pop() {
        count += 1;
        let mut push = |xx: usize, yy: usize| {
            if solid(xx, yy) && !seen[yy * nx + xx] {
                seen[yy * nx + xx] = true;
                stack.push((xx, yy));
            }
        };
        if x > 0 {
            push(x - 1, y);
        }
        if x + 1 < nx {
            push(x + 1, y);
        }
        if y > 0 {
            push(x, y - 1);
        }
        if y + 1 < ny {
            push(x, y + 1);
        }
    }
    count == total
}
