//! Scalar fields with analytic first and second derivatives.
//!
//! Everything downstream (level sets, densities, test functions) is a
//! [`ScalarField`]. Derivatives are carried in second-order jets so that
//! gradients and Hessians are exact, never finite differences.

use std::fmt::Debug;
use std::sync::Arc;

use crate::linalg::{Matrix, Vector, MAX_DIM};

/// Value, gradient and Hessian of a scalar field at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Vector,
    pub hess: Matrix,
}

impl Jet {
    pub fn constant(value: f64) -> Self {
        Jet {
            value,
            grad: Vector::ZERO,
            hess: Matrix::ZERO,
        }
    }

    /// The coordinate function `x ↦ x[i]`.
    pub fn coordinate(x: &Vector, i: usize) -> Self {
        Jet {
            value: x[i],
            grad: Vector::unit(i),
            hess: Matrix::ZERO,
        }
    }

    pub fn add(&self, o: &Jet) -> Jet {
        Jet {
            value: self.value + o.value,
            grad: self.grad + o.grad,
            hess: self.hess + o.hess,
        }
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        Jet {
            value: self.value - o.value,
            grad: self.grad - o.grad,
            hess: self.hess - o.hess,
        }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            value: self.value * s,
            grad: self.grad * s,
            hess: self.hess * s,
        }
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let cross = self.grad.outer(&o.grad);
        Jet {
            value: self.value * o.value,
            grad: self.grad * o.value + o.grad * self.value,
            hess: self.hess * o.value + o.hess * self.value + cross + cross.transpose(),
        }
    }

    pub fn div(&self, o: &Jet) -> Jet {
        self.mul(&o.recip())
    }

    pub fn recip(&self) -> Jet {
        let v = self.value;
        self.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }

    /// Applies a univariate function given its value and first two
    /// derivatives at `self.value`.
    pub fn chain(&self, f: f64, df: f64, d2f: f64) -> Jet {
        Jet {
            value: f,
            grad: self.grad * df,
            hess: self.grad.outer(&self.grad) * d2f + self.hess * df,
        }
    }

    pub fn exp(&self) -> Jet {
        let e = self.value.exp();
        self.chain(e, e, e)
    }

    pub fn ln(&self) -> Jet {
        let v = self.value;
        self.chain(v.ln(), 1.0 / v, -1.0 / (v * v))
    }

    pub fn sqrt(&self) -> Jet {
        let s = self.value.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.value))
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn tanh(&self) -> Jet {
        let t = self.value.tanh();
        let d = 1.0 - t * t;
        self.chain(t, d, -2.0 * t * d)
    }

    /// Power with a constant exponent. Integer exponents are evaluated
    /// exactly so that negative bases stay valid.
    pub fn powf(&self, p: f64) -> Jet {
        let v = self.value;
        if p == 0.0 {
            return Jet::constant(1.0);
        }
        if p.fract() == 0.0 && p.abs() <= 64.0 {
            let n = p as i32;
            let f = v.powi(n);
            let df = p * v.powi(n - 1);
            let d2f = p * (p - 1.0) * v.powi(n - 2);
            return self.chain(f, df, d2f);
        }
        self.chain(v.powf(p), p * v.powf(p - 1.0), p * (p - 1.0) * v.powf(p - 2.0))
    }

    /// Power with a field-valued exponent, `exp(o · ln self)`.
    pub fn pow(&self, o: &Jet) -> Jet {
        if o.grad == Vector::ZERO && o.hess == Matrix::ZERO {
            return self.powf(o.value);
        }
        o.mul(&self.ln()).exp()
    }

    pub fn laplacian(&self) -> f64 {
        self.hess.trace()
    }
}

/// A C² scalar field on R^d.
pub trait ScalarField: Send + Sync + Debug {
    fn value(&self, x: &Vector) -> f64;

    fn jet(&self, x: &Vector) -> Jet;

    fn gradient(&self, x: &Vector) -> Vector {
        self.jet(x).grad
    }

    fn hessian(&self, x: &Vector) -> Matrix {
        self.jet(x).hess
    }

    /// Returns `Some(c)` if the field is identically `c`.
    fn constant_value(&self) -> Option<f64> {
        None
    }
}

pub type SharedField = Arc<dyn ScalarField>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantField(pub f64);

impl ScalarField for ConstantField {
    fn value(&self, _x: &Vector) -> f64 {
        self.0
    }

    fn jet(&self, _x: &Vector) -> Jet {
        Jet::constant(self.0)
    }

    fn constant_value(&self) -> Option<f64> {
        Some(self.0)
    }
}

/// `Σ ((x_i − c_i)/a_i)² − 1` over the active coordinates: intervals,
/// disks, balls, ellipses and ellipsoids.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadric {
    pub center: Vector,
    pub semi_axes: Vector,
    pub dim: usize,
}

impl Quadric {
    pub fn new(center: Vector, semi_axes: &[f64]) -> Self {
        assert!(!semi_axes.is_empty() && semi_axes.len() <= MAX_DIM);
        assert!(semi_axes.iter().all(|a| *a > 0.0));
        Quadric {
            center,
            semi_axes: Vector::from_slice(semi_axes),
            dim: semi_axes.len(),
        }
    }
}

impl ScalarField for Quadric {
    #[inline]
    fn value(&self, x: &Vector) -> f64 {
        let mut acc = -1.0;
        for i in 0..self.dim {
            let u = (x[i] - self.center[i]) / self.semi_axes[i];
            acc += u * u;
        }
        acc
    }

    #[inline]
    fn gradient(&self, x: &Vector) -> Vector {
        let mut g = Vector::ZERO;
        for i in 0..self.dim {
            let a = self.semi_axes[i];
            g[i] = 2.0 * (x[i] - self.center[i]) / (a * a);
        }
        g
    }

    fn jet(&self, x: &Vector) -> Jet {
        let mut hess = Matrix::ZERO;
        for i in 0..self.dim {
            let a = self.semi_axes[i];
            hess.0[i][i] = 2.0 / (a * a);
        }
        Jet {
            value: self.value(x),
            grad: self.gradient(x),
            hess,
        }
    }
}

/// `Σ (x_i/r)^4 − 1`: a box with rounded corners.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothBox {
    pub half_width: f64,
    pub dim: usize,
}

impl ScalarField for SmoothBox {
    fn value(&self, x: &Vector) -> f64 {
        (0..self.dim).map(|i| (x[i] / self.half_width).powi(4)).sum::<f64>() - 1.0
    }

    fn jet(&self, x: &Vector) -> Jet {
        let r4 = self.half_width.powi(4);
        let mut jet = Jet::constant(self.value(x));
        for i in 0..self.dim {
            jet.grad[i] = 4.0 * x[i].powi(3) / r4;
            jet.hess.0[i][i] = 12.0 * x[i] * x[i] / r4;
        }
        jet
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_hessian_is_symmetric() {
        let x = Vector::from_slice(&[0.3, -0.7, 1.1]);
        let a = Jet::coordinate(&x, 0).exp();
        let b = Jet::coordinate(&x, 1).mul(&Jet::coordinate(&x, 2));
        let p = a.mul(&b);
        assert!((p.hess - p.hess.transpose()).max_abs() < 1e-15);
        // ∂²(e^{x} y z)/∂x∂y = e^{x} z
        assert!((p.hess.0[0][1] - 0.3_f64.exp() * 1.1).abs() < 1e-14);
    }

    #[test]
    fn quadric_jet_matches_unit_circle() {
        let q = Quadric::new(Vector::ZERO, &[1.0, 1.0]);
        let x = Vector::from_slice(&[1.0, 0.0]);
        let j = q.jet(&x);
        assert_eq!(j.value, 0.0);
        assert_eq!(j.grad, Vector::from_slice(&[2.0, 0.0]));
        assert_eq!(j.hess.trace(), 4.0);
    }

    #[test]
    fn integer_power_of_negative_base() {
        let x = Vector::from_slice(&[-2.0]);
        let j = Jet::coordinate(&x, 0).powf(3.0);
        assert_eq!(j.value, -8.0);
        assert_eq!(j.grad[0], 12.0);
        assert_eq!(j.hess.0[0][0], -12.0);
    }
}
