//! Small fixed-size tensors used at quadrature points.
//!
//! `Mat2` is a deformation gradient, `F[(i, j)] = ∂_j u_i`. `Tens3` is a
//! second gradient, `G[i][j][k] = ∂_jk u_i`, stored flat in row-major order.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

pub type Mat2 = Matrix2<f64>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tens3(pub [f64; 8]);

#[inline]
pub const fn t3(i: usize, j: usize, k: usize) -> usize {
    i * 4 + j * 2 + k
}

impl Tens3 {
    pub const ZERO: Tens3 = Tens3([0.0; 8]);

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Triple contraction `A ⋮ B`.
    pub fn dot(&self, other: &Tens3) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Symmetrize in the last two indices.
    pub fn sym(&self) -> Tens3 {
        let mut out = *self;
        for i in 0..2 {
            let m = 0.5 * (self[t3(i, 0, 1)] + self[t3(i, 1, 0)]);
            out[t3(i, 0, 1)] = m;
            out[t3(i, 1, 0)] = m;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<usize> for Tens3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Tens3 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for Tens3 {
    type Output = Tens3;
    fn add(mut self, rhs: Tens3) -> Tens3 {
        self += rhs;
        self
    }
}

impl AddAssign for Tens3 {
    fn add_assign(&mut self, rhs: Tens3) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

impl Sub for Tens3 {
    type Output = Tens3;
    fn sub(mut self, rhs: Tens3) -> Tens3 {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a -= b;
        }
        self
    }
}

impl Mul<f64> for Tens3 {
    type Output = Tens3;
    fn mul(mut self, s: f64) -> Tens3 {
        for a in self.0.iter_mut() {
            *a *= s;
        }
        self
    }
}

/// Orthonormal basis of the six-dimensional space of tensors symmetric in the
/// last two indices. Ordering: `(i, 11), (i, 12), (i, 22)` for `i = 1, 2`.
pub fn sym_basis() -> [Tens3; 6] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = [Tens3::ZERO; 6];
    for i in 0..2 {
        out[3 * i][t3(i, 0, 0)] = 1.0;
        out[3 * i + 1][t3(i, 0, 1)] = s;
        out[3 * i + 1][t3(i, 1, 0)] = s;
        out[3 * i + 2][t3(i, 1, 1)] = 1.0;
    }
    out
}

/// Labels for [`sym_basis`], used as CSV headers.
pub const SYM_BASIS_LABELS: [&str; 6] = ["G1_11", "G1_12s", "G1_22", "G2_11", "G2_12s", "G2_22"];

/// Coordinates of a symmetric `G` in [`sym_basis`].
pub fn sym_coords(g: &Tens3) -> [f64; 6] {
    let basis = sym_basis();
    let mut c = [0.0; 6];
    for (a, e) in basis.iter().enumerate() {
        c[a] = g.dot(e);
    }
    c
}

pub fn from_sym_coords(c: &[f64; 6]) -> Tens3 {
    let basis = sym_basis();
    let mut g = Tens3::ZERO;
    for (a, e) in basis.iter().enumerate() {
        g += *e * c[a];
    }
    g
}

/// Frobenius contraction `A : B`.
#[inline]
pub fn ddot(a: &Mat2, b: &Mat2) -> f64 {
    a.component_mul(b).sum()
}

/// Flatten a 2x2 matrix row-major: index `2 i + j`.
#[inline]
pub fn flat(m: &Mat2) -> [f64; 4] {
    [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]
}

#[inline]
pub fn unflat(v: &[f64; 4]) -> Mat2 {
    Mat2::new(v[0], v[1], v[2], v[3])
}
