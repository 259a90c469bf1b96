//! Elastic, strain-gradient and dissipation laws.
//!
//! All three laws are separable: a periodic scalar coefficient of the cell
//! variable `y` times a function of the kinematic argument. This keeps the
//! cell averages of the elastic and dissipation laws closed-form multiples of
//! the coefficient averages.

use crate::tensor::{flat, unflat, Mat2, Tens3};
use nalgebra::{Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum MaterialError {
    #[error("det F = {0:e} is not positive")]
    NonPositiveDet(f64),
}

/// `c(y) = mean · (1 + amplitude · sin(2π y1) sin(2π y2))`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub mean: f64,
    pub amplitude: f64,
}

impl Coefficient {
    pub const fn constant(v: f64) -> Self {
        Self {
            mean: v,
            amplitude: 0.0,
        }
    }

    pub const fn oscillating(amplitude: f64) -> Self {
        Self { mean: 1.0, amplitude }
    }

    #[inline]
    pub fn at(&self, y: [f64; 2]) -> f64 {
        if self.amplitude == 0.0 {
            return self.mean;
        }
        self.mean * (1.0 + self.amplitude * (2.0 * PI * y[0]).sin() * (2.0 * PI * y[1]).sin())
    }

    pub fn min(&self) -> f64 {
        self.mean * (1.0 - self.amplitude.abs())
    }

    pub fn max(&self) -> f64 {
        self.mean * (1.0 + self.amplitude.abs())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            mean: self.mean * s,
            amplitude: self.amplitude,
        }
    }
}

impl Default for Coefficient {
    fn default() -> Self {
        Self::oscillating(0.5)
    }
}

/// `W(y,F) = α(y) w(F)`, `w(F) = |F|² + det^{-q} [+ (q-2) det]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticLaw {
    pub alpha: Coefficient,
    pub q: f64,
    pub stress_free_id: bool,
}

impl ElasticLaw {
    /// `(w(F), ∂w/∂F)` without the coefficient.
    pub fn density(&self, f: &Mat2) -> Result<(f64, Mat2), MaterialError> {
        let det = f.determinant();
        if !(det > 0.0) {
            return Err(MaterialError::NonPositiveDet(det));
        }
        // cof(F) = det F · F^{-T}
        let cof = Mat2::new(f[(1, 1)], -f[(1, 0)], -f[(0, 1)], f[(0, 0)]);
        let dq = det.powf(-self.q);
        let mut w = f.norm_squared() + dq;
        let mut dw = 2.0 * f - (self.q * dq / det) * cof;
        if self.stress_free_id {
            w += (self.q - 2.0) * det;
            dw += (self.q - 2.0) * cof;
        }
        Ok((w, dw))
    }

    pub fn eval(&self, y: [f64; 2], f: &Mat2) -> Result<(f64, Mat2), MaterialError> {
        let a = self.alpha.at(y);
        let (w, dw) = self.density(f)?;
        Ok((a * w, a * dw))
    }

    /// Curvature of `w` by central differences of `∂w/∂F`, symmetrized and
    /// projected onto the positive semidefinite cone. Row-major flat indices.
    pub fn density_curvature(&self, f: &Mat2) -> Result<Matrix4<f64>, MaterialError> {
        let step = 1e-6 * f.abs().max().max(1.0);
        let mut c = Matrix4::zeros();
        let base = flat(f);
        for col in 0..4 {
            let mut p = base;
            let mut m = base;
            p[col] += step;
            m[col] -= step;
            let (_, dp) = self.density(&unflat(&p))?;
            let (_, dm) = self.density(&unflat(&m))?;
            let d = flat(&((dp - dm) / (2.0 * step)));
            for row in 0..4 {
                c[(row, col)] = d[row];
            }
        }
        Ok(psd_projection(&(0.5 * (c + c.transpose()))))
    }

    pub fn curvature(&self, y: [f64; 2], f: &Mat2) -> Result<Matrix4<f64>, MaterialError> {
        Ok(self.alpha.at(y) * self.density_curvature(f)?)
    }

    /// `(c₀, C₀)` of the coercivity bound `W ≥ c₀(|F|² + det^{-q}) − C₀`.
    pub fn growth_constants(&self) -> (f64, f64) {
        (self.alpha.min(), 0.0)
    }
}

/// `H(y,G) = β(y)/p |G|^p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrainGradientLaw {
    pub beta: Coefficient,
    pub p: f64,
}

impl StrainGradientLaw {
    pub fn is_quadratic(&self) -> bool {
        self.p == 2.0
    }

    pub fn eval(&self, y: [f64; 2], g: &Tens3) -> (f64, Tens3) {
        let b = self.beta.at(y);
        let n2 = g.norm_sq();
        if n2 == 0.0 {
            return (0.0, Tens3::ZERO);
        }
        let np2 = if self.p == 2.0 { 1.0 } else { n2.powf(0.5 * (self.p - 2.0)) };
        (b / self.p * np2 * n2, *g * (b * np2))
    }

    /// Exact Hessian `β(|G|^{p-2} I + (p-2)|G|^{p-4} G⊗G)` on the flat index.
    pub fn curvature(&self, y: [f64; 2], g: &Tens3) -> [[f64; 8]; 8] {
        let b = self.beta.at(y);
        let mut out = [[0.0; 8]; 8];
        if self.p == 2.0 {
            for (i, row) in out.iter_mut().enumerate() {
                row[i] = b;
            }
            return out;
        }
        let n2 = g.norm_sq();
        if n2 == 0.0 {
            return out;
        }
        let a = b * n2.powf(0.5 * (self.p - 2.0));
        let c = b * (self.p - 2.0) * n2.powf(0.5 * (self.p - 4.0));
        for i in 0..8 {
            for j in 0..8 {
                out[i][j] = c * g[i] * g[j];
            }
            out[i][i] += a;
        }
        out
    }

    /// `c₀` of `c₀|G|^p ≤ H(y,G)` and `C₀` of `H ≤ C₀(1 + |G|^p)`.
    pub fn growth_constants(&self) -> (f64, f64) {
        (self.beta.min() / self.p, self.beta.max() / self.p)
    }
}

/// `R(y,F,Ḟ) = ½ δ(y) |Ċ|²` with `Ċ = ḞᵀF + FᵀḞ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationLaw {
    pub delta: Coefficient,
}

impl DissipationLaw {
    #[inline]
    pub fn c_dot(f: &Mat2, fdot: &Mat2) -> Mat2 {
        fdot.transpose() * f + f.transpose() * fdot
    }

    /// `(½|Ċ|², 2FĊ)` without the coefficient.
    #[inline]
    pub fn density(f: &Mat2, fdot: &Mat2) -> (f64, Mat2) {
        let cd = Self::c_dot(f, fdot);
        (0.5 * cd.norm_squared(), 2.0 * f * cd)
    }

    pub fn eval(&self, y: [f64; 2], f: &Mat2, fdot: &Mat2) -> (f64, Mat2) {
        let d = self.delta.at(y);
        let (r, dr) = Self::density(f, fdot);
        (d * r, d * dr)
    }

    /// `∂²R/∂Ḟ²`, independent of `Ḟ`.
    pub fn density_curvature(f: &Mat2) -> Matrix4<f64> {
        let mut c = Matrix4::zeros();
        for col in 0..4 {
            let mut e = [0.0; 4];
            e[col] = 1.0;
            let (_, d) = Self::density(f, &unflat(&e));
            let d = flat(&d);
            for row in 0..4 {
                c[(row, col)] = d[row];
            }
        }
        c
    }

    pub fn curvature(&self, y: [f64; 2], f: &Mat2) -> Matrix4<f64> {
        self.delta.at(y) * Self::density_curvature(f)
    }

    /// `Ċ : D Ċ = δ|Ċ|²` is bounded by `δ_min|Ċ|²` and `δ_max|Ċ|²`.
    pub fn bounds(&self) -> (f64, f64) {
        (self.delta.min(), self.delta.max())
    }
}

/// The three laws of one material.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialBundle {
    pub elastic: ElasticLaw,
    pub gradient: StrainGradientLaw,
    pub dissipation: DissipationLaw,
}

impl MaterialBundle {
    /// Oscillating coefficients with the given amplitude, exponents `p`, `q`.
    pub fn new(amplitude: f64, p: f64, q: f64, stress_free_id: bool) -> Self {
        let c = Coefficient::oscillating(amplitude);
        Self {
            elastic: ElasticLaw {
                alpha: c,
                q,
                stress_free_id,
            },
            gradient: StrainGradientLaw { beta: c, p },
            dissipation: DissipationLaw { delta: c },
        }
    }

    /// All coefficients identically one.
    pub fn unit(p: f64, q: f64) -> Self {
        Self::new(0.0, p, q, true)
    }

    /// `p > n` holds for the planar problem.
    pub fn gradient_exponent_admissible(&self) -> bool {
        self.gradient.p > 2.0
    }
}

impl Default for MaterialBundle {
    fn default() -> Self {
        Self::new(0.5, 4.0, 4.0, true)
    }
}

/// Projects a symmetric 4x4 matrix onto the positive semidefinite cone.
pub fn psd_projection(m: &Matrix4<f64>) -> Matrix4<f64> {
    let e = SymmetricEigen::new(*m);
    if e.eigenvalues.iter().all(|&l| l >= 0.0) {
        return *m;
    }
    let mut d = e.eigenvalues;
    d.iter_mut().for_each(|l| *l = l.max(0.0));
    let v = e.eigenvectors;
    v * Matrix4::from_diagonal(&d) * v.transpose()
}

/// `A : B` for flat curvature contractions, `aᵀ C b`.
pub fn quad_form4(c: &Matrix4<f64>, a: &Mat2, b: &Mat2) -> f64 {
    let (fa, fb) = (flat(a), flat(b));
    let mut s = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            s += fa[i] * c[(i, j)] * fb[j];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> MaterialBundle {
        MaterialBundle::unit(4.0, 4.0)
    }

    #[test]
    fn elastic_at_identity() {
        let m = unit();
        let (w, dw) = m.elastic.eval([0.3, 0.1], &Mat2::identity()).unwrap();
        assert_eq!(w, 5.0);
        assert!(dw.abs().max() < 1e-15);
        let mut e = m.elastic;
        e.stress_free_id = false;
        let (w, dw) = e.eval([0.3, 0.1], &Mat2::identity()).unwrap();
        assert_eq!(w, 3.0);
        assert!((dw + 2.0 * Mat2::identity()).abs().max() < 1e-15);
        let bad = Mat2::new(1.0, 0.0, 0.0, -1.0);
        assert!(matches!(e.eval([0.0, 0.0], &bad), Err(MaterialError::NonPositiveDet(_))));
    }

    #[test]
    fn gradient_law_values() {
        let m = unit();
        assert_eq!(m.gradient.eval([0.0, 0.0], &Tens3::ZERO), (0.0, Tens3::ZERO));
        let mut g = Tens3::ZERO;
        g[3] = 1.0;
        let (h, dh) = m.gradient.eval([0.2, 0.2], &g);
        assert!((h - 0.25).abs() < 1e-15);
        assert!((dh.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dissipation_values() {
        let m = unit();
        let (r, dr) = m.dissipation.eval([0.0, 0.0], &Mat2::identity(), &Mat2::identity());
        assert_eq!(r, 4.0);
        assert!((dr - 4.0 * Mat2::identity()).abs().max() < 1e-15);
        let skew = Mat2::new(0.0, 0.7, -0.7, 0.0);
        let (r, dr) = m.dissipation.eval([0.0, 0.0], &Mat2::identity(), &skew);
        assert_eq!(r, 0.0);
        assert_eq!(dr, Mat2::zeros());
    }

    #[test]
    fn coefficient_range() {
        let c = Coefficient::default();
        assert_eq!(c.at([0.25, 0.25]), 1.5);
        assert_eq!(c.at([0.75, 0.25]), 0.5);
        assert_eq!((c.min(), c.max()), (0.5, 1.5));
    }

    #[test]
    fn psd_projection_clamps_negative_modes() {
        let m = Matrix4::from_diagonal(&nalgebra::Vector4::new(2.0, -1.0, 0.5, 3.0));
        let p = psd_projection(&m);
        assert!((p[(1, 1)]).abs() < 1e-15);
        assert!((p[(3, 3)] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn elastic_curvature_matches_second_differences() {
        let e = unit().elastic;
        let f = Mat2::new(1.1, 0.05, -0.02, 0.95);
        let c = e.density_curvature(&f).unwrap();
        let h = 1e-4;
        let dir = Mat2::new(0.3, -0.1, 0.2, 0.4);
        let wp = e.density(&(f + h * dir)).unwrap().0;
        let wm = e.density(&(f - h * dir)).unwrap().0;
        let w0 = e.density(&f).unwrap().0;
        let fd = (wp - 2.0 * w0 + wm) / (h * h);
        assert!((fd - quad_form4(&c, &dir, &dir)).abs() < 1e-5 * fd.abs().max(1.0));
    }

    fn mat() -> impl Strategy<Value = Mat2> {
        prop::array::uniform4(-0.4f64..0.4).prop_map(|a| Mat2::identity() + unflat(&a))
    }

    proptest! {
        #[test]
        fn rigid_rates_do_not_dissipate(f in mat(), s in -3.0f64..3.0) {
            let skew = Mat2::new(0.0, s, -s, 0.0);
            let (r, dr) = unit().dissipation.eval([0.1, 0.7], &f, &(skew * f));
            prop_assert!(r.abs() < 1e-24 * (1.0 + f.norm_squared().powi(2)) + 1e-28);
            prop_assert!(dr.abs().max() < 1e-12);
        }

        #[test]
        fn strain_gradient_energy_is_midpoint_convex(
            a in prop::array::uniform8(-2.0f64..2.0),
            b in prop::array::uniform8(-2.0f64..2.0),
        ) {
            let law = MaterialBundle::default().gradient;
            let (ga, gb) = (Tens3(a), Tens3(b));
            let y = [0.3, 0.6];
            let mid = law.eval(y, &((ga + gb) * 0.5)).0;
            let avg = 0.5 * (law.eval(y, &ga).0 + law.eval(y, &gb).0);
            prop_assert!(mid <= avg + 1e-12);
        }

        #[test]
        fn elastic_lower_growth_bound(f in mat(), y in prop::array::uniform2(0.0f64..1.0)) {
            let law = MaterialBundle::default().elastic;
            if f.determinant() > 0.0 {
                let (w, _) = law.eval(y, &f).unwrap();
                let (c0, cc0) = law.growth_constants();
                let det = f.determinant();
                prop_assert!(w >= c0 * (f.norm_squared() + det.powf(-law.q)) - cc0);
            }
        }

        #[test]
        fn dissipation_bounds(f in mat(), fd in prop::array::uniform4(-1.0f64..1.0), y in prop::array::uniform2(0.0f64..1.0)) {
            let law = MaterialBundle::default().dissipation;
            let fdot = unflat(&fd);
            let cd = DissipationLaw::c_dot(&f, &fdot);
            let form = law.delta.at(y) * cd.norm_squared();
            let (lo, hi) = law.bounds();
            prop_assert!(lo * cd.norm_squared() <= form + 1e-14);
            prop_assert!(form <= hi * cd.norm_squared() + 1e-14);
        }
    }
}
