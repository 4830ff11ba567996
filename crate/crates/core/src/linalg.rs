//! Fixed-capacity vectors and matrices for points in R^d, d ≤ 3.
//!
//! Components beyond the active dimension are kept at zero, so every
//! operation can run over the full capacity without consulting `d`.
//! The only dimension-aware constructor is [`Matrix::identity`].

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vector(pub [f64; MAX_DIM]);

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Matrix(pub [[f64; MAX_DIM]; MAX_DIM]);

impl Vector {
    pub const ZERO: Vector = Vector([0.0; MAX_DIM]);

    /// Builds a vector from a slice of at most [`MAX_DIM`] entries.
    pub fn from_slice(xs: &[f64]) -> Self {
        assert!(xs.len() <= MAX_DIM, "dimension {} exceeds {}", xs.len(), MAX_DIM);
        let mut v = [0.0; MAX_DIM];
        v[..xs.len()].copy_from_slice(xs);
        Vector(v)
    }

    /// Unit vector along axis `i`.
    pub fn unit(i: usize) -> Self {
        let mut v = Self::ZERO;
        v.0[i] = 1.0;
        v
    }

    #[inline]
    pub fn dot(&self, other: &Vector) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    #[inline]
    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn outer(&self, other: &Vector) -> Matrix {
        let mut m = Matrix::ZERO;
        for i in 0..MAX_DIM {
            for j in 0..MAX_DIM {
                m.0[i][j] = self.0[i] * other.0[j];
            }
        }
        m
    }

    pub fn as_slice(&self, dim: usize) -> &[f64] {
        &self.0[..dim]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for Vector {
    type Output = Vector;
    #[inline]
    fn add(self, o: Vector) -> Vector {
        Vector([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl AddAssign for Vector {
    #[inline]
    fn add_assign(&mut self, o: Vector) {
        *self = *self + o;
    }
}

impl Sub for Vector {
    type Output = Vector;
    #[inline]
    fn sub(self, o: Vector) -> Vector {
        Vector([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl SubAssign for Vector {
    #[inline]
    fn sub_assign(&mut self, o: Vector) {
        *self = *self - o;
    }
}

impl Neg for Vector {
    type Output = Vector;
    #[inline]
    fn neg(self) -> Vector {
        Vector([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl Mul<f64> for Vector {
    type Output = Vector;
    #[inline]
    fn mul(self, s: f64) -> Vector {
        Vector([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

impl Mul<Vector> for f64 {
    type Output = Vector;
    #[inline]
    fn mul(self, v: Vector) -> Vector {
        v * self
    }
}

impl Matrix {
    pub const ZERO: Matrix = Matrix([[0.0; MAX_DIM]; MAX_DIM]);

    /// Identity on the first `dim` coordinates, zero elsewhere.
    pub fn identity(dim: usize) -> Self {
        let mut m = Self::ZERO;
        for i in 0..dim {
            m.0[i][i] = 1.0;
        }
        m
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn transpose(&self) -> Matrix {
        let mut m = Self::ZERO;
        for i in 0..MAX_DIM {
            for j in 0..MAX_DIM {
                m.0[i][j] = self.0[j][i];
            }
        }
        m
    }

    #[inline]
    pub fn mul_vec(&self, v: &Vector) -> Vector {
        let mut out = Vector::ZERO;
        for i in 0..MAX_DIM {
            out.0[i] = self.0[i][0] * v.0[0] + self.0[i][1] * v.0[1] + self.0[i][2] * v.0[2];
        }
        out
    }

    pub fn mul_mat(&self, other: &Matrix) -> Matrix {
        let mut m = Self::ZERO;
        for i in 0..MAX_DIM {
            for j in 0..MAX_DIM {
                m.0[i][j] = (0..MAX_DIM).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        m
    }

    /// Frobenius inner product, i.e. `Tr(selfᵀ other)`.
    pub fn frobenius_dot(&self, other: &Matrix) -> f64 {
        let mut acc = 0.0;
        for i in 0..MAX_DIM {
            for j in 0..MAX_DIM {
                acc += self.0[i][j] * other.0[i][j];
            }
        }
        acc
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

impl Add for Matrix {
    type Output = Matrix;
    fn add(self, o: Matrix) -> Matrix {
        let mut m = self;
        for i in 0..MAX_DIM {
            for j in 0..MAX_DIM {
                m.0[i][j] += o.0[i][j];
            }
        }
        m
    }
}

impl Sub for Matrix {
    type Output = Matrix;
    fn sub(self, o: Matrix) -> Matrix {
        self + o * -1.0
    }
}

impl Mul<f64> for Matrix {
    type Output = Matrix;
    fn mul(self, s: f64) -> Matrix {
        let mut m = self;
        m.0.iter_mut().flatten().for_each(|x| *x *= s);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_respects_dimension() {
        assert_eq!(Matrix::identity(2).trace(), 2.0);
        assert_eq!(Matrix::identity(3).mul_vec(&Vector::unit(2)), Vector::unit(2));
        assert_eq!(Matrix::identity(2).mul_vec(&Vector::unit(2)), Vector::ZERO);
    }

    #[test]
    fn outer_product_of_unit_vector_is_projector() {
        let n = Vector::from_slice(&[0.6, 0.8]);
        let q = n.outer(&n);
        let qq = q.mul_mat(&q);
        assert!((qq - q).max_abs() < 1e-15);
        assert!((q.trace() - 1.0).abs() < 1e-15);
    }
}
