//! The generator `L` in compact form `½Tr(A∇²f) + (b, ∇f)` and in split
//! interior/boundary form, the Wentzell boundary residual, and energy
//! and symmetry quadratures.

use std::sync::Arc;

use crate::expr::Expr;
use crate::field::{Jet, SharedField};
use crate::geometry::DomainGeometry;
use crate::linalg::{Matrix, Vector};
use crate::measures::ReferenceMeasure;
use crate::{Error, Result};

/// Densities at or below this value count as vanishing.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// A `C²` test function with analytic derivatives.
#[derive(Clone, Debug)]
pub struct TestFunction {
    pub field: SharedField,
    pub label: String,
}

impl TestFunction {
    pub fn new(field: SharedField, label: impl Into<String>) -> Self {
        TestFunction {
            field,
            label: label.into(),
        }
    }

    pub fn parse(src: &str) -> Result<Self> {
        Ok(Self::new(Arc::new(Expr::parse(src)?), src))
    }

    #[inline]
    pub fn value(&self, x: &Vector) -> f64 {
        self.field.value(x)
    }

    #[inline]
    pub fn jet(&self, x: &Vector) -> Jet {
        self.field.jet(x)
    }
}

/// Coordinates, quadratics, `|x|²`, exponentials and bump products.
pub fn test_bank(dim: usize) -> Vec<TestFunction> {
    let names = ["x", "y", "z"];
    let mut srcs: Vec<String> = Vec::new();
    srcs.push("1".into());
    for v in names.iter().take(dim) {
        srcs.push(v.to_string());
    }
    for i in 0..dim {
        for j in i..dim {
            srcs.push(format!("{}*{}", names[i], names[j]));
        }
    }
    let r2 = names[..dim].iter().map(|v| format!("{v}^2")).collect::<Vec<_>>().join(" + ");
    srcs.push(r2.clone());
    for v in names.iter().take(dim) {
        srcs.push(format!("exp(0.7*{v})"));
    }
    srcs.push(format!("{}*exp(-({r2}))", names[0]));
    srcs.push(format!("({}) * exp(-2*({r2}))", names[..dim].join(" + ")));
    srcs.into_iter()
        .map(|s| TestFunction::parse(&s).expect("bank expressions parse"))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Interior,
    Boundary,
}

/// `A`, `b`, δ and the region classifier bundled for one scenario.
#[derive(Clone, Copy, Debug)]
pub struct CoefficientField<'a> {
    pub geom: &'a DomainGeometry,
    pub pair: &'a crate::measures::DensityPair,
    pub delta: u8,
}

impl CoefficientField<'_> {
    /// `|F(x)| ≤ ε_Γ` counts as boundary.
    pub fn region(&self, x: &Vector) -> Region {
        if self.geom.is_on_boundary(x) {
            Region::Boundary
        } else {
            Region::Interior
        }
    }

    pub fn a(&self, x: &Vector) -> Matrix {
        self.a_in(x, self.region(x))
    }

    pub fn a_in(&self, x: &Vector, region: Region) -> Matrix {
        match region {
            Region::Interior => Matrix::identity(self.geom.dim),
            Region::Boundary if self.delta == 1 => self.geom.projection_field(x),
            Region::Boundary => Matrix::ZERO,
        }
    }

    pub fn b(&self, x: &Vector) -> Result<Vector> {
        self.b_in(x, self.region(x))
    }

    pub fn b_in(&self, x: &Vector, region: Region) -> Result<Vector> {
        let pair = self.pair;
        match region {
            Region::Interior => {
                if pair.alpha(x) <= DENSITY_FLOOR {
                    return Err(Error::ZeroAlpha(*x));
                }
                Ok(pair.grad_log_alpha(x) * 0.5)
            }
            Region::Boundary => {
                let beta = pair.beta(x);
                if beta <= DENSITY_FLOOR {
                    return Err(Error::ZeroBeta(*x));
                }
                let n = self.geom.normal_field(x);
                let mut b = n * (-pair.alpha(x) / beta);
                if self.delta == 1 {
                    let p = self.geom.projection_field(x);
                    b += p.mul_vec(&pair.grad_log_beta(x)) - n * self.geom.curvature_field(x);
                }
                Ok(b * 0.5)
            }
        }
    }

    /// Compact form `½Tr(A∇²f) + (b, ∇f)`.
    pub fn apply(&self, f: &Jet, x: &Vector, region: Region) -> Result<f64> {
        let a = self.a_in(x, region);
        Ok(0.5 * a.frobenius_dot(&f.hess) + self.b_in(x, region)?.dot(&f.grad))
    }

    /// Split form: `½(Δf + (∇ln α, ∇f))` inside, `½(δΔ_Γf + δ(∇_Γ ln β, ∇_Γ f) − (α/β)(n, ∇f))` on `Γ`.
    pub fn apply_split(&self, f: &Jet, x: &Vector, region: Region) -> Result<f64> {
        let pair = self.pair;
        match region {
            Region::Interior => {
                if pair.alpha(x) <= DENSITY_FLOOR {
                    return Err(Error::ZeroAlpha(*x));
                }
                Ok(0.5 * (f.laplacian() + pair.grad_log_alpha(x).dot(&f.grad)))
            }
            Region::Boundary => {
                let beta = pair.beta(x);
                if beta <= DENSITY_FLOOR {
                    return Err(Error::ZeroBeta(*x));
                }
                let n = self.geom.normal_field(x);
                let normal = pair.alpha(x) / beta * n.dot(&f.grad);
                if self.delta == 0 {
                    return Ok(-0.5 * normal);
                }
                let p = self.geom.projection_field(x);
                let lb = p.frobenius_dot(&f.hess) - self.geom.curvature_field(x) * n.dot(&f.grad);
                let tangential = p.mul_vec(&pair.grad_log_beta(x)).dot(&p.mul_vec(&f.grad));
                Ok(0.5 * (lb + tangential - normal))
            }
        }
    }
}

/// Drift `b(x)`, classified by region.
pub fn drift_b(pair: &crate::measures::DensityPair, geom: &DomainGeometry, x: &Vector, delta: u8) -> Result<Vector> {
    CoefficientField { geom, pair, delta }.b(x)
}

/// `Lf(x)` in compact form, checked against the split form in debug builds.
pub fn apply_l(f: &TestFunction, pair: &crate::measures::DensityPair, geom: &DomainGeometry, x: &Vector, delta: u8) -> Result<f64> {
    let c = CoefficientField { geom, pair, delta };
    let region = c.region(x);
    let jet = f.jet(x);
    let compact = c.apply(&jet, x, region)?;
    debug_assert!({
        let split = c.apply_split(&jet, x, region)?;
        (compact - split).abs() <= 1e-10 * (1.0 + compact.abs())
    });
    Ok(compact)
}

/// `Δu + (∇ln α, ∇u) − δΔ_Γu − δ(∇_Γ ln β, ∇_Γ u) + (α/β)(n, ∇u)` at a
/// boundary point.
pub fn wentzell_residual(
    u: &TestFunction,
    pair: &crate::measures::DensityPair,
    geom: &DomainGeometry,
    x: &Vector,
    delta: u8,
) -> Result<f64> {
    let level = geom.level_value(x);
    if level.abs() > geom.tol.on_boundary {
        return Err(Error::NotOnBoundary { point: *x, level });
    }
    let beta = pair.beta(x);
    if beta <= DENSITY_FLOOR {
        return Err(Error::ZeroBeta(*x));
    }
    let j = u.jet(x);
    let n = geom.normal_field(x);
    let mut r = j.laplacian() + pair.grad_log_alpha(x).dot(&j.grad) + pair.alpha(x) / beta * n.dot(&j.grad);
    if delta == 1 {
        let p = geom.projection_field(x);
        let lb = p.frobenius_dot(&j.hess) - geom.curvature_field(x) * n.dot(&j.grad);
        r -= lb + p.mul_vec(&pair.grad_log_beta(x)).dot(&p.mul_vec(&j.grad));
    }
    Ok(r)
}

/// Itô correction `½((P∇)ᵀP) = −½κn` of the Stratonovich boundary SDE.
pub fn stratonovich_to_ito_drift(geom: &DomainGeometry, x: &Vector) -> Result<Vector> {
    let frame = geom.frame(x)?;
    Ok(frame.normal * (-0.5 * frame.curvature))
}

/// `ℰ(f, g) = ½∫_Ω(∇f,∇g)α dλ + (δ/2)∫_Γ(∇_Γf,∇_Γg)β dσ`.
pub fn energy(f: &TestFunction, g: &TestFunction, measure: &ReferenceMeasure, delta: u8) -> f64 {
    let pair = &measure.pair;
    let geom = &measure.geom;
    let vol = measure.rule.integrate_volume(|x| f.jet(x).grad.dot(&g.jet(x).grad) * pair.alpha(x));
    let surf = if delta == 1 {
        measure.rule.integrate_surface(|x| {
            let p = geom.projection_field(x);
            p.mul_vec(&f.jet(x).grad).dot(&p.mul_vec(&g.jet(x).grad)) * pair.beta(x)
        })
    } else {
        0.0
    };
    0.5 * (vol + surf)
}

/// `∫ Lf·g dμ` by quadrature.
pub fn integrate_lf_g(f: &TestFunction, g: &TestFunction, measure: &ReferenceMeasure, delta: u8) -> Result<f64> {
    let c = CoefficientField {
        geom: &measure.geom,
        pair: &measure.pair,
        delta,
    };
    let mut vol = 0.0;
    for node in &measure.rule.volume {
        let x = &node.point;
        vol += node.weight * c.apply(&f.jet(x), x, Region::Interior)? * g.value(x) * measure.pair.alpha(x);
    }
    let mut surf = 0.0;
    for node in &measure.rule.surface {
        let x = &node.point;
        surf += node.weight * c.apply(&f.jet(x), x, Region::Boundary)? * g.value(x) * measure.pair.beta(x);
    }
    Ok(vol + surf)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryCheck {
    pub lf_g: f64,
    pub f_lg: f64,
    pub minus_energy: f64,
}

impl SymmetryCheck {
    pub fn max_error(&self) -> f64 {
        (self.lf_g - self.minus_energy).abs().max((self.f_lg - self.minus_energy).abs())
    }
}

pub fn symmetry_check(f: &TestFunction, g: &TestFunction, measure: &ReferenceMeasure, delta: u8) -> Result<SymmetryCheck> {
    Ok(SymmetryCheck {
        lf_g: integrate_lf_g(f, g, measure, delta)?,
        f_lg: integrate_lf_g(g, f, measure, delta)?,
        minus_energy: -energy(f, g, measure, delta),
    })
}

/// Largest |compact − split| over points and bank functions.
pub fn compact_split_max_gap(c: &CoefficientField<'_>, points: &[(Vector, Region)], bank: &[TestFunction]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (x, region) in points {
        for f in bank {
            let j = f.jet(x);
            let gap = (c.apply(&j, x, *region)? - c.apply_split(&j, x, *region)?).abs() / (1.0 + j.grad.norm() + j.hess.max_abs());
            worst = worst.max(gap);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::DensityPair;
    use crate::quadrature::QuadratureSpec;

    fn disk() -> DomainGeometry {
        DomainGeometry::zoo("disk").unwrap()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_slice(xs)
    }

    #[test]
    fn drift_examples() {
        let g = disk();
        let ones = DensityPair::constant(1.0, 1.0);
        assert_eq!(drift_b(&ones, &g, &v(&[0.3, 0.1]), 1).unwrap(), Vector::ZERO);
        let x = v(&[0.6, 0.8]);
        assert!((drift_b(&ones, &g, &x, 1).unwrap() + x).norm() < 1e-14);
        assert!((drift_b(&ones, &g, &x, 0).unwrap() + x * 0.5).norm() < 1e-14);
    }

    #[test]
    fn apply_examples() {
        let g = disk();
        let ones = DensityPair::constant(1.0, 1.0);
        let one = TestFunction::parse("1").unwrap();
        let r2 = TestFunction::parse("x^2 + y^2").unwrap();
        let x1 = TestFunction::parse("x").unwrap();
        assert_eq!(apply_l(&one, &ones, &g, &v(&[0.2, 0.2]), 1).unwrap(), 0.0);
        assert_eq!(apply_l(&one, &ones, &g, &v(&[1.0, 0.0]), 1).unwrap(), 0.0);
        assert!((apply_l(&r2, &ones, &g, &v(&[0.2, -0.4]), 1).unwrap() - 2.0).abs() < 1e-14);
        assert!((apply_l(&x1, &ones, &g, &v(&[1.0, 0.0]), 1).unwrap() + 1.0).abs() < 1e-14);
        let b3 = DomainGeometry::zoo("ball3").unwrap();
        let r2_3 = TestFunction::parse("x^2 + y^2 + z^2").unwrap();
        assert!((apply_l(&r2_3, &ones, &b3, &v(&[0.1, 0.2, 0.3]), 1).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn zero_densities_are_errors() {
        let g = disk();
        let p = DensityPair::constant(1.0, 0.0);
        assert!(matches!(drift_b(&p, &g, &v(&[1.0, 0.0]), 1), Err(Error::ZeroBeta(_))));
        let p = DensityPair::from_specs("x^2", "1").unwrap();
        assert!(matches!(drift_b(&p, &g, &v(&[0.0, 0.5]), 1), Err(Error::ZeroAlpha(_))));
    }

    #[test]
    fn wentzell_examples() {
        let g = disk();
        let ones = DensityPair::constant(1.0, 1.0);
        let one = TestFunction::parse("1").unwrap();
        let r2 = TestFunction::parse("x^2 + y^2").unwrap();
        let x = v(&[0.6, -0.8]);
        assert_eq!(wentzell_residual(&one, &ones, &g, &x, 1).unwrap(), 0.0);
        assert!((wentzell_residual(&r2, &ones, &g, &x, 1).unwrap() - 6.0).abs() < 1e-12);
        // Scaling β by c scales only the normal term; β·residual → Neumann form.
        for c in [1.0, 1e-2, 1e-4, 1e-8] {
            let scaled = ones.scale_beta(c);
            let r = wentzell_residual(&r2, &scaled, &g, &x, 1).unwrap();
            assert!((r - (4.0 + 2.0 / c)).abs() < 1e-9 * (1.0 + 2.0 / c));
            assert!((c * r - (4.0 * c + 2.0)).abs() < 1e-9);
        }
        assert!(matches!(
            wentzell_residual(&r2, &ones, &g, &v(&[0.5, 0.0]), 1),
            Err(Error::NotOnBoundary { .. })
        ));
    }

    #[test]
    fn ito_correction_examples() {
        let s = DomainGeometry::zoo("ball3").unwrap();
        let x = v(&[0.0, 0.6, 0.8]);
        assert!((stratonovich_to_ito_drift(&s, &x).unwrap() + x).norm() < 1e-12);
        let c = disk();
        let x = v(&[0.6, 0.8]);
        assert!((stratonovich_to_ito_drift(&c, &x).unwrap() + x * 0.5).norm() < 1e-12);
        let bx = DomainGeometry::zoo("smoothbox(1)").unwrap();
        let flat = bx.project_to_boundary(&v(&[0.0, 1.1])).unwrap();
        assert!(stratonovich_to_ito_drift(&bx, &flat).unwrap().norm() < 1e-12);
    }

    #[test]
    fn a_is_idempotent() {
        let g = DomainGeometry::zoo("ellipse(2,1)").unwrap();
        let pair = DensityPair::constant(1.0, 1.0);
        for delta in [0, 1] {
            let c = CoefficientField {
                geom: &g,
                pair: &pair,
                delta,
            };
            for x in [v(&[0.3, 0.2]), g.project_to_boundary(&v(&[1.0, 1.0])).unwrap()] {
                let a = c.a(&x);
                assert!((a.mul_mat(&a) - a).max_abs() < 1e-10);
                assert!((a.mul_mat(&a.transpose()) - a).max_abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bank_derivatives_match_finite_differences() {
        let h = 1e-5 * 2.0 * 2f64.sqrt();
        for f in test_bank(3) {
            for x in [v(&[0.1, -0.3, 0.2]), v(&[0.5, 0.4, -0.1])] {
                let j = f.jet(&x);
                for i in 0..3 {
                    let e = Vector::unit(i) * h;
                    let fd = (f.value(&(x + e)) - f.value(&(x - e))) / (2.0 * h);
                    assert!((fd - j.grad[i]).abs() < 1e-6, "{}", f.label);
                    let gfd = (f.jet(&(x + e)).grad - f.jet(&(x - e)).grad) * (0.5 / h);
                    for k in 0..3 {
                        assert!((gfd[k] - j.hess.0[k][i]).abs() < 1e-4, "{}", f.label);
                    }
                }
                assert!((j.hess - j.hess.transpose()).max_abs() < 1e-14);
            }
        }
    }

    #[test]
    fn symmetry_on_disk_with_nonconstant_densities() {
        let g = disk();
        let pair = DensityPair::from_specs("exp(-0.5*(x^2+y^2)) * (1 + 0.3*x)", "1 + 0.25*y^2").unwrap();
        let m = ReferenceMeasure::new(pair, g, QuadratureSpec::default()).unwrap();
        let bank = test_bank(2);
        for delta in [0, 1] {
            for (i, j) in [(1, 2), (3, 5), (6, 7), (8, 9), (2, 6), (1, 1)] {
                let s = symmetry_check(&bank[i], &bank[j], &m, delta).unwrap();
                assert!(s.max_error() < 1e-3, "{} {} {s:?}", bank[i].label, bank[j].label);
            }
        }
    }
}
