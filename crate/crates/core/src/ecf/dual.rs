//! Second-order forward-mode dual numbers over `N` seed directions.
//!
//! Used for the small nonlinear local functions of the formulation so that
//! gradients and Hessians come from one evaluation.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual2<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
    pub h: [[f64; N]; N],
}

impl<const N: usize> Dual2<N> {
    pub fn constant(v: f64) -> Self {
        Self {
            v,
            g: [0.0; N],
            h: [[0.0; N]; N],
        }
    }

    /// Independent variable `k` with value `v`.
    pub fn var(v: f64, k: usize) -> Self {
        let mut d = Self::constant(v);
        d.g[k] = 1.0;
        d
    }

    /// Seeds all `N` variables at once.
    pub fn vars(values: [f64; N]) -> [Self; N] {
        std::array::from_fn(|k| Self::var(values[k], k))
    }

    pub fn recip(self) -> Self {
        // d(1/u) = -u'/u^2, d2(1/u) = 2 u' u'^T / u^3 - u''/u^2
        let inv = 1.0 / self.v;
        let inv2 = inv * inv;
        let mut out = Self::constant(inv);
        for i in 0..N {
            out.g[i] = -self.g[i] * inv2;
            for j in 0..N {
                out.h[i][j] = 2.0 * self.g[i] * self.g[j] * inv2 * inv - self.h[i][j] * inv2;
            }
        }
        out
    }

    pub fn scale(self, c: f64) -> Self {
        let mut out = self;
        out.v *= c;
        for i in 0..N {
            out.g[i] *= c;
            for j in 0..N {
                out.h[i][j] *= c;
            }
        }
        out
    }
}

impl<const N: usize> Add for Dual2<N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut out = self;
        out.v += o.v;
        for i in 0..N {
            out.g[i] += o.g[i];
            for j in 0..N {
                out.h[i][j] += o.h[i][j];
            }
        }
        out
    }
}

impl<const N: usize> Sub for Dual2<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<const N: usize> Neg for Dual2<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const N: usize> Mul for Dual2<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut out = Self::constant(self.v * o.v);
        for i in 0..N {
            out.g[i] = self.g[i] * o.v + self.v * o.g[i];
            for j in 0..=i {
                let v = self.h[i][j] * o.v
                    + self.g[i] * o.g[j]
                    + self.g[j] * o.g[i]
                    + self.v * o.h[i][j];
                out.h[i][j] = v;
                out.h[j][i] = v;
            }
        }
        out
    }
}

impl<const N: usize> Div for Dual2<N> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<const N: usize> Mul<f64> for Dual2<N> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.scale(c)
    }
}

impl<const N: usize> Add<f64> for Dual2<N> {
    type Output = Self;
    fn add(self, c: f64) -> Self {
        let mut out = self;
        out.v += c;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quotient_derivatives() {
        // f(x, y) = x / y at (2, 4)
        let [x, y] = Dual2::<2>::vars([2.0, 4.0]);
        let f = x / y;
        assert!((f.v - 0.5).abs() < 1e-15);
        assert!((f.g[0] - 0.25).abs() < 1e-15);
        assert!((f.g[1] + 2.0 / 16.0).abs() < 1e-15);
        assert!((f.h[0][0]).abs() < 1e-15);
        assert!((f.h[0][1] + 1.0 / 16.0).abs() < 1e-15);
        assert!((f.h[1][0] - f.h[0][1]).abs() < 1e-15);
        assert!((f.h[1][1] - 2.0 * 2.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn product_hessian_symmetric() {
        let [x, y, z] = Dual2::<3>::vars([1.3, -0.7, 2.1]);
        let f = x * y * z + x * x;
        assert!((f.h[0][1] - z.v).abs() < 1e-15);
        assert!((f.h[0][0] - 2.0).abs() < 1e-15);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(f.h[i][j], f.h[j][i]);
            }
        }
    }
}
