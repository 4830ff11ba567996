//! Volume and surface quadrature on level-set domains.
//!
//! Star-shaped domains use polar rules: Gauss–Legendre in the radius
//! along each direction and a spherical rule over directions (trapezoid in
//! 2D, Gauss–Legendre in cos φ times trapezoid in θ in 3D). The boundary
//! point `y = c + R(u)u` carries the surface weight `R^{d−1}/(u·n)`.
//! Other domains fall back to a masked tensor rule on the bounding box and
//! a co-area rule for the surface (`dσ = |∇F| δ(F) dλ`, mollified).

use std::f64::consts::PI;
use std::num::NonZero;

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::geometry::{DomainGeometry, Shape};
use crate::linalg::Vector;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Gauss–Legendre nodes along each ray (or per axis for tensor rules).
    pub radial: usize,
    /// Directions in 2D; azimuthal nodes in 3D (polar nodes are half).
    pub angular: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { radial: 24, angular: 128 }
    }
}

impl QuadratureSpec {
    pub fn refined(&self) -> Self {
        QuadratureSpec {
            radial: self.radial * 2,
            angular: self.angular * 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub point: Vector,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct DomainRule {
    pub volume: Vec<Node>,
    pub surface: Vec<Node>,
    pub spec: QuadratureSpec,
    pub kind: RuleKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleKind {
    Polar,
    MaskedTensor,
}

/// Gauss–Legendre nodes and weights mapped to `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZero::new(n.max(1)).expect("n ≥ 1"));
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.iter().map(|(x, w)| (mid + half * x, half * w)).collect()
}

/// Directions with weights summing to |S^{d−1}| (2 for d = 1).
pub fn sphere_rule(dim: usize, angular: usize) -> Vec<(Vector, f64)> {
    match dim {
        1 => vec![(Vector::from_slice(&[-1.0]), 1.0), (Vector::from_slice(&[1.0]), 1.0)],
        2 => (0..angular)
            .map(|k| {
                let t = 2.0 * PI * (k as f64 + 0.5) / angular as f64;
                (Vector::from_slice(&[t.cos(), t.sin()]), 2.0 * PI / angular as f64)
            })
            .collect(),
        3 => {
            let polar = gauss_legendre((angular / 2).max(2), -1.0, 1.0);
            let mut out = Vec::with_capacity(polar.len() * angular);
            for (c, wc) in polar {
                let s = (1.0 - c * c).max(0.0).sqrt();
                for k in 0..angular {
                    let t = 2.0 * PI * (k as f64 + 0.5) / angular as f64;
                    out.push((Vector::from_slice(&[s * t.cos(), s * t.sin(), c]), wc * 2.0 * PI / angular as f64));
                }
            }
            out
        }
        _ => unreachable!("dimension {dim} unsupported"),
    }
}

impl DomainRule {
    pub fn build(geom: &DomainGeometry, spec: QuadratureSpec) -> Result<Self> {
        match &geom.shape {
            Shape::Star { center } => Self::polar(geom, *center, spec),
            Shape::General => Ok(Self::masked_tensor(geom, spec)),
        }
    }

    fn polar(geom: &DomainGeometry, center: Vector, spec: QuadratureSpec) -> Result<Self> {
        let dim = geom.dim;
        let radial = gauss_legendre(spec.radial, 0.0, 1.0);
        let mut volume = Vec::new();
        let mut surface = Vec::new();
        for (u, wu) in sphere_rule(dim, spec.angular) {
            let r = geom.ray_boundary_distance(&center, &u)?;
            for &(s, ws) in &radial {
                let rho = r * s;
                volume.push(Node {
                    point: center + u * rho,
                    weight: wu * ws * r * rho.powi(dim as i32 - 1),
                });
            }
            let y = geom.project_to_boundary(&(center + u * r))?;
            let n = geom.normal_field(&y);
            surface.push(Node {
                point: y,
                weight: wu * r.powi(dim as i32 - 1) / u.dot(&n),
            });
        }
        Ok(DomainRule {
            volume,
            surface,
            spec,
            kind: RuleKind::Polar,
        })
    }

    fn masked_tensor(geom: &DomainGeometry, spec: QuadratureSpec) -> Self {
        let dim = geom.dim;
        let per_axis: Vec<Vec<(f64, f64)>> = (0..dim)
            .map(|i| {
                // Composite rule: `angular` panels of `radial/4` nodes.
                let panels = spec.angular.max(4);
                let order = (spec.radial / 4).max(2);
                let (lo, hi) = (geom.bbox_lo[i], geom.bbox_hi[i]);
                let h = (hi - lo) / panels as f64;
                (0..panels)
                    .flat_map(|p| gauss_legendre(order, lo + p as f64 * h, lo + (p + 1) as f64 * h))
                    .collect()
            })
            .collect();
        let cell = (0..dim)
            .map(|i| (geom.bbox_hi[i] - geom.bbox_lo[i]) / spec.angular.max(4) as f64)
            .fold(f64::INFINITY, f64::min);
        let width = cell;
        let mut volume = Vec::new();
        let mut surface = Vec::new();
        let mut idx = vec![0usize; dim];
        'outer: loop {
            let mut x = Vector::ZERO;
            let mut w = 1.0;
            for i in 0..dim {
                let (xi, wi) = per_axis[i][idx[i]];
                x[i] = xi;
                w *= wi;
            }
            let jet = geom.level.jet(&x);
            if jet.value < 0.0 {
                volume.push(Node { point: x, weight: w });
            }
            // Mollified co-area weight with a Gaussian of width `width` in
            // signed-distance units.
            let gnorm = jet.grad.norm();
            if gnorm > 0.0 {
                let dist = jet.value / gnorm;
                if dist.abs() < 6.0 * width {
                    let bump = (-0.5 * (dist / width).powi(2)).exp() / (width * (2.0 * PI).sqrt());
                    if let Ok(y) = geom.project_to_boundary(&x) {
                        surface.push(Node {
                            point: y,
                            weight: w * bump,
                        });
                    }
                }
            }
            for i in 0..dim {
                idx[i] += 1;
                if idx[i] < per_axis[i].len() {
                    continue 'outer;
                }
                idx[i] = 0;
            }
            break;
        }
        DomainRule {
            volume,
            surface,
            spec,
            kind: RuleKind::MaskedTensor,
        }
    }

    pub fn integrate_volume(&self, f: impl Fn(&Vector) -> f64) -> f64 {
        self.volume.iter().map(|n| n.weight * f(&n.point)).sum()
    }

    pub fn integrate_surface(&self, f: impl Fn(&Vector) -> f64) -> f64 {
        self.surface.iter().map(|n| n.weight * f(&n.point)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_area_and_perimeter() {
        let g = DomainGeometry::zoo("disk").unwrap();
        let rule = DomainRule::build(&g, QuadratureSpec::default()).unwrap();
        assert!((rule.integrate_volume(|_| 1.0) - PI).abs() < 1e-12);
        assert!((rule.integrate_surface(|_| 1.0) - 2.0 * PI).abs() < 1e-12);
        assert!((rule.integrate_volume(|x| x.norm_squared()) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ball_volume_and_area() {
        let g = DomainGeometry::zoo("ball3").unwrap();
        let rule = DomainRule::build(&g, QuadratureSpec { radial: 8, angular: 32 }).unwrap();
        assert!((rule.integrate_volume(|_| 1.0) - 4.0 * PI / 3.0).abs() < 1e-10);
        assert!((rule.integrate_surface(|_| 1.0) - 4.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn ellipse_perimeter_matches_series() {
        // Perimeter of x²/4 + y² = 1: 9.688448220547675 (complete elliptic integral).
        let g = DomainGeometry::zoo("ellipse(2,1)").unwrap();
        let rule = DomainRule::build(&g, QuadratureSpec::default()).unwrap();
        assert!((rule.integrate_surface(|_| 1.0) - 9.688448220547675).abs() < 1e-9);
        assert!((rule.integrate_volume(|_| 1.0) - 2.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn interval_counts_endpoints() {
        let g = DomainGeometry::zoo("interval").unwrap();
        let rule = DomainRule::build(&g, QuadratureSpec::default()).unwrap();
        assert!((rule.integrate_volume(|_| 1.0) - 1.0).abs() < 1e-13);
        assert!((rule.integrate_surface(|_| 1.0) - 2.0).abs() < 1e-13);
        let xs: Vec<f64> = rule.surface.iter().map(|n| n.point[0]).collect();
        assert!(xs.iter().any(|x| x.abs() < 1e-12) && xs.iter().any(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn masked_tensor_rule_is_roughly_right() {
        let g = DomainGeometry::from_expression(
            "x^2 + y^2 - 1",
            2,
            Vector::from_slice(&[-1.2, -1.2]),
            Vector::from_slice(&[1.2, 1.2]),
            None,
        )
        .unwrap();
        let rule = DomainRule::build(&g, QuadratureSpec { radial: 16, angular: 64 }).unwrap();
        assert_eq!(rule.kind, RuleKind::MaskedTensor);
        assert!((rule.integrate_volume(|_| 1.0) - PI).abs() < 2e-2);
        assert!((rule.integrate_surface(|_| 1.0) - 2.0 * PI).abs() < 2e-2);
    }
}
