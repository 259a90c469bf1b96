//! One-dimensional cubic Hermite shape functions and Gauss–Legendre rules.

/// Values and first/second derivatives (with respect to the physical
/// coordinate) of the four cubic Hermite functions on an interval of length
/// `h`, at local coordinate `t ∈ [0, 1]`.
///
/// Ordering: `[N0, M0, N1, M1]` where `N` interpolates values and `M`
/// derivatives at the left (0) and right (1) end.
#[inline]
pub fn hermite_1d(t: f64, h: f64) -> [[f64; 4]; 3] {
    let t2 = t * t;
    let t3 = t2 * t;
    let v = [
        1.0 - 3.0 * t2 + 2.0 * t3,
        h * (t - 2.0 * t2 + t3),
        3.0 * t2 - 2.0 * t3,
        h * (-t2 + t3),
    ];
    let d = [
        (-6.0 * t + 6.0 * t2) / h,
        1.0 - 4.0 * t + 3.0 * t2,
        (6.0 * t - 6.0 * t2) / h,
        -2.0 * t + 3.0 * t2,
    ];
    let dd = [
        (-6.0 + 12.0 * t) / (h * h),
        (-4.0 + 6.0 * t) / h,
        (6.0 - 12.0 * t) / (h * h),
        (-2.0 + 6.0 * t) / h,
    ];
    [v, d, dd]
}

/// Scalar tensor-product basis on one element, 16 functions in the order
/// `s = 4 a + k`, node `a ∈ {(0,0), (1,0), (0,1), (1,1)}` and
/// `k ∈ {value, ∂1, ∂2, ∂12}`.
#[derive(Clone, Copy, Debug)]
pub struct ElementBasis {
    pub val: [f64; 16],
    /// `[∂1, ∂2]`
    pub grad: [[f64; 2]; 16],
    /// `[∂11, ∂12, ∂22]`
    pub hess: [[f64; 3]; 16],
}

/// Index into the 1D function list for node side `side` and derivative flag.
#[inline]
fn idx(side: usize, deriv: bool) -> usize {
    2 * side + deriv as usize
}

impl ElementBasis {
    pub fn at(s: f64, t: f64, h: f64) -> Self {
        let bx = hermite_1d(s, h);
        let by = hermite_1d(t, h);
        let mut out = ElementBasis {
            val: [0.0; 16],
            grad: [[0.0; 2]; 16],
            hess: [[0.0; 3]; 16],
        };
        for a in 0..4 {
            let (ax, ay) = (a & 1, a >> 1);
            for k in 0..4 {
                let ix = idx(ax, k == 1 || k == 3);
                let iy = idx(ay, k == 2 || k == 3);
                let n = 4 * a + k;
                out.val[n] = bx[0][ix] * by[0][iy];
                out.grad[n] = [bx[1][ix] * by[0][iy], bx[0][ix] * by[1][iy]];
                out.hess[n] = [
                    bx[2][ix] * by[0][iy],
                    bx[1][ix] * by[1][iy],
                    bx[0][ix] * by[2][iy],
                ];
            }
        }
        out
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(z), p0 = P_{n-1}(z)
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wi;
        w[n - 1 - i] = 0.5 * wi;
    }
    (x, w)
}
