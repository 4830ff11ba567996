//! Level-set domains and the differential geometry of their boundary.
//!
//! A domain is `Ω = {F < 0}` with boundary `Γ = {F = 0}` for one smooth
//! function `F`. The unit normal `n = ∇F/|∇F|` is defined in a whole
//! neighbourhood of `Γ`, which makes `∇n`, the mean curvature
//! `κ = Tr(P∇n)` and the identity `(P∇)ᵀP = −κn` computable everywhere.
//!
//! In one dimension `Γ` is the two endpoints, `P = 0` and `κ = 0`.

use std::sync::Arc;

use rand::Rng;

use crate::expr::Expr;
use crate::field::{ConstantField, Quadric, ScalarField, SharedField, SmoothBox};
use crate::linalg::{Matrix, Vector};
use crate::{Error, Result};

const GRADIENT_FLOOR: f64 = 1e-12;

/// Tolerances that depend on the size of the domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryTolerances {
    /// `|F(x)| ≤ on_boundary` classifies `x` as a boundary point.
    pub on_boundary: f64,
    /// Finite-difference step used by the cross-checks.
    pub fd_step: f64,
    /// Newton projection is only attempted for `|F| < projection_basin`.
    pub projection_basin: f64,
    pub max_newton: usize,
}

impl GeometryTolerances {
    pub fn for_diameter(diam: f64) -> Self {
        GeometryTolerances {
            on_boundary: 1e-9 * diam,
            fd_step: 1e-4 * diam,
            projection_basin: f64::INFINITY,
            max_newton: 60,
        }
    }
}

/// Shape information used to pick quadrature rules.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    /// Star-shaped with respect to `center`: every ray from the center
    /// crosses `Γ` exactly once.
    Star { center: Vector },
    /// No structural information; only generic rules apply.
    General,
}

#[derive(Clone, Debug)]
pub struct DomainGeometry {
    pub name: String,
    pub level: SharedField,
    pub dim: usize,
    pub bbox_lo: Vector,
    pub bbox_hi: Vector,
    pub shape: Shape,
    pub tol: GeometryTolerances,
}

/// Normal, tangent projection and mean curvature at a boundary point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryFrame {
    pub point: Vector,
    pub normal: Vector,
    pub projection: Matrix,
    pub curvature: f64,
}

/// Largest violation of each frame invariant.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameViolations {
    pub normal_length: f64,
    pub projection_kills_normal: f64,
    pub idempotence: f64,
    pub symmetry: f64,
    pub trace: f64,
}

impl FrameViolations {
    pub fn max(&self) -> f64 {
        [
            self.normal_length,
            self.projection_kills_normal,
            self.idempotence,
            self.symmetry,
            self.trace,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn merge(&mut self, o: &FrameViolations) {
        self.normal_length = self.normal_length.max(o.normal_length);
        self.projection_kills_normal = self.projection_kills_normal.max(o.projection_kills_normal);
        self.idempotence = self.idempotence.max(o.idempotence);
        self.symmetry = self.symmetry.max(o.symmetry);
        self.trace = self.trace.max(o.trace);
    }
}

impl BoundaryFrame {
    pub fn violations(&self, dim: usize) -> FrameViolations {
        let p = self.projection;
        FrameViolations {
            normal_length: (self.normal.norm() - 1.0).abs(),
            projection_kills_normal: p.mul_vec(&self.normal).norm(),
            idempotence: (p.mul_mat(&p) - p).max_abs(),
            symmetry: (p - p.transpose()).max_abs(),
            trace: (p.trace() - (dim as f64 - 1.0)).abs(),
        }
    }
}

fn finite_level(g: &DomainGeometry, x: &Vector) -> f64 {
    let v = g.level.value(x);
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

fn parse_args(spec: &str) -> Result<(String, Vec<f64>)> {
    let spec = spec.trim();
    let Some(open) = spec.find('(') else {
        return Ok((spec.to_string(), Vec::new()));
    };
    if !spec.ends_with(')') {
        return Err(Error::Validation(format!("malformed shape `{spec}`")));
    }
    let args = spec[open + 1..spec.len() - 1]
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("bad number `{s}` in shape `{spec}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((spec[..open].trim().to_string(), args))
}

impl DomainGeometry {
    /// Builds a domain from an arbitrary level-set field.
    pub fn new(name: impl Into<String>, level: SharedField, dim: usize, bbox_lo: Vector, bbox_hi: Vector, shape: Shape) -> Self {
        assert!((1..=crate::MAX_DIM).contains(&dim));
        let diam = (bbox_hi - bbox_lo).norm();
        DomainGeometry {
            name: name.into(),
            level,
            dim,
            bbox_lo,
            bbox_hi,
            shape,
            tol: GeometryTolerances::for_diameter(diam),
        }
    }

    fn quadric(name: String, center: Vector, axes: &[f64]) -> Self {
        let q = Quadric::new(center, axes);
        let half = Vector::from_slice(axes);
        Self::new(name, Arc::new(q), axes.len(), center - half, center + half, Shape::Star { center })
    }

    /// Looks up a built-in domain: `interval`, `interval(a,b)`, `disk`,
    /// `disk(r)`, `ball3`, `ball3(r)`, `ellipse(a,b)`, `ellipsoid(a,b,c)`,
    /// `smoothbox(r)` (2D) and `smoothbox(r,d)`.
    pub fn zoo(spec: &str) -> Result<Self> {
        let (name, args) = parse_args(spec)?;
        let bad = || Error::Validation(format!("wrong arguments for shape `{spec}`"));
        let positive = |xs: &[f64]| xs.iter().all(|v| *v > 0.0 && v.is_finite());
        let canonical = spec.replace(' ', "");
        match (name.as_str(), args.as_slice()) {
            ("interval", []) => Ok(Self::quadric(canonical, Vector::from_slice(&[0.5]), &[0.5])),
            ("interval", [a, b]) if b > a => Ok(Self::quadric(canonical, Vector::from_slice(&[0.5 * (a + b)]), &[0.5 * (b - a)])),
            ("disk", []) => Ok(Self::quadric(canonical, Vector::ZERO, &[1.0, 1.0])),
            ("disk", [r]) if positive(&[*r]) => Ok(Self::quadric(canonical, Vector::ZERO, &[*r, *r])),
            ("ball3", []) => Ok(Self::quadric(canonical, Vector::ZERO, &[1.0, 1.0, 1.0])),
            ("ball3", [r]) if positive(&[*r]) => Ok(Self::quadric(canonical, Vector::ZERO, &[*r, *r, *r])),
            ("ellipse", [a, b]) if positive(&[*a, *b]) => Ok(Self::quadric(canonical, Vector::ZERO, &[*a, *b])),
            ("ellipsoid", [a, b, c]) if positive(&[*a, *b, *c]) => Ok(Self::quadric(canonical, Vector::ZERO, &[*a, *b, *c])),
            ("smoothbox", [r]) | ("smoothbox", [r, _]) if positive(&[*r]) => {
                let dim = match args.get(1) {
                    None => 2,
                    Some(d) if *d == 2.0 || *d == 3.0 => *d as usize,
                    Some(_) => return Err(bad()),
                };
                let level = SmoothBox { half_width: *r, dim };
                let half = Vector::from_slice(&vec![*r; dim]);
                Ok(Self::new(
                    canonical,
                    Arc::new(level),
                    dim,
                    -half,
                    half,
                    Shape::Star { center: Vector::ZERO },
                ))
            }
            ("interval" | "disk" | "ball3" | "ellipse" | "ellipsoid" | "smoothbox", _) => Err(bad()),
            _ => Err(Error::Validation(format!("unknown shape `{spec}`"))),
        }
    }

    /// A domain from an expression in the small expression language.
    pub fn from_expression(source: &str, dim: usize, bbox_lo: Vector, bbox_hi: Vector, star_center: Option<Vector>) -> Result<Self> {
        let expr = Expr::parse(source)?;
        if expr.min_dim() > dim {
            return Err(Error::Validation(format!(
                "level set `{source}` uses coordinates beyond dimension {dim}"
            )));
        }
        let shape = star_center.map_or(Shape::General, |center| Shape::Star { center });
        Ok(Self::new(source, Arc::new(expr), dim, bbox_lo, bbox_hi, shape))
    }

    pub fn diameter(&self) -> f64 {
        (self.bbox_hi - self.bbox_lo).norm()
    }

    #[inline]
    pub fn level_value(&self, x: &Vector) -> f64 {
        self.level.value(x)
    }

    #[inline]
    pub fn is_on_boundary(&self, x: &Vector) -> bool {
        self.level.value(x).abs() <= self.tol.on_boundary
    }

    /// `F(x) ≤ ε_Γ`.
    #[inline]
    pub fn contains(&self, x: &Vector) -> bool {
        self.level.value(x) <= self.tol.on_boundary
    }

    fn check_boundary(&self, x: &Vector) -> Result<Vector> {
        let level = self.level.value(x);
        if level.abs() > self.tol.on_boundary {
            return Err(Error::NotOnBoundary { point: *x, level });
        }
        let g = self.level.gradient(x);
        if g.norm() < GRADIENT_FLOOR {
            return Err(Error::DegenerateGradient(*x));
        }
        Ok(g)
    }

    /// `∇F/|∇F|` without the on-boundary check.
    #[inline]
    pub fn normal_field(&self, x: &Vector) -> Vector {
        let g = self.level.gradient(x);
        g * (1.0 / g.norm())
    }

    /// `E − nnᵀ` for the extended normal field.
    pub fn projection_field(&self, x: &Vector) -> Matrix {
        let n = self.normal_field(x);
        Matrix::identity(self.dim) - n.outer(&n)
    }

    /// Mean curvature of the level set through `x`, `Tr(P∇n)`.
    pub fn curvature_field(&self, x: &Vector) -> f64 {
        if self.dim == 1 {
            return 0.0;
        }
        let jet = self.level.jet(x);
        let gnorm = jet.grad.norm();
        let n = jet.grad * (1.0 / gnorm);
        let p = Matrix::identity(self.dim) - n.outer(&n);
        // ∇n = P H / |∇F| and P² = P, so Tr(P∇n) = Tr(P H)/|∇F|.
        p.frobenius_dot(&jet.hess) / gnorm
    }

    /// Extended normal, tangent projection and curvature from one jet.
    pub fn local_frame(&self, x: &Vector) -> (Vector, Matrix, f64) {
        let jet = self.level.jet(x);
        let gnorm = jet.grad.norm();
        let n = jet.grad * (1.0 / gnorm);
        let p = Matrix::identity(self.dim) - n.outer(&n);
        let kappa = if self.dim == 1 { 0.0 } else { p.frobenius_dot(&jet.hess) / gnorm };
        (n, p, kappa)
    }

    pub fn outward_normal(&self, x: &Vector) -> Result<Vector> {
        let g = self.check_boundary(x)?;
        Ok(g * (1.0 / g.norm()))
    }

    pub fn tangent_projection(&self, x: &Vector) -> Result<Matrix> {
        let n = self.outward_normal(x)?;
        Ok(Matrix::identity(self.dim) - n.outer(&n))
    }

    pub fn mean_curvature(&self, x: &Vector) -> Result<f64> {
        self.check_boundary(x)?;
        Ok(self.curvature_field(x))
    }

    pub fn frame(&self, x: &Vector) -> Result<BoundaryFrame> {
        let normal = self.outward_normal(x)?;
        Ok(BoundaryFrame {
            point: *x,
            normal,
            projection: Matrix::identity(self.dim) - normal.outer(&normal),
            curvature: self.curvature_field(x),
        })
    }

    /// `P∇f` at a boundary point.
    pub fn surface_gradient(&self, f: &dyn ScalarField, x: &Vector) -> Result<Vector> {
        let p = self.tangent_projection(x)?;
        Ok(p.mul_vec(&f.gradient(x)))
    }

    /// `Tr(P∇²f) − κ(n, ∇f)` at a boundary point.
    pub fn laplace_beltrami(&self, f: &dyn ScalarField, x: &Vector) -> Result<f64> {
        let frame = self.frame(x)?;
        let jet = f.jet(x);
        Ok(frame.projection.frobenius_dot(&jet.hess) - frame.curvature * frame.normal.dot(&jet.grad))
    }

    /// Tangential divergence `Tr(P∇Φ)` of a vector field given by its
    /// component fields.
    pub fn surface_divergence(&self, components: &[&dyn ScalarField], x: &Vector) -> Result<f64> {
        let p = self.tangent_projection(x)?;
        let mut jac = Matrix::ZERO;
        for (i, c) in components.iter().enumerate() {
            let g = c.gradient(x);
            jac.0[i] = g.0;
        }
        Ok(p.frobenius_dot(&jac.transpose()))
    }

    /// `((P∇)ᵀP) + κn`, with the first term from fourth-order central
    /// differences of the extended projection field. Vanishes up to the FD
    /// error.
    pub fn curvature_identity_residual(&self, x: &Vector) -> Result<Vector> {
        self.curvature_identity_residual_with_step(x, self.tol.fd_step)
    }

    pub fn curvature_identity_residual_with_step(&self, x: &Vector, h: f64) -> Result<Vector> {
        let n = self.outward_normal(x)?;
        let kappa = self.curvature_field(x);
        let p = self.projection_field(x);
        // dp[j] = ∂_j P
        let mut dp = [Matrix::ZERO; crate::MAX_DIM];
        for (j, slot) in dp.iter_mut().enumerate().take(self.dim) {
            let e = Vector::unit(j) * h;
            let pf = |s: f64| self.projection_field(&(*x + e * s));
            *slot = ((pf(1.0) - pf(-1.0)) * 8.0 - (pf(2.0) - pf(-2.0))) * (1.0 / (12.0 * h));
        }
        let mut out = n * kappa;
        for i in 0..self.dim {
            for (j, dpj) in dp.iter().enumerate().take(self.dim) {
                for k in 0..self.dim {
                    out[i] += p.0[j][k] * dpj.0[i][k];
                }
            }
        }
        Ok(out)
    }

    /// `Tr(P · J)` with `J` the central-difference Jacobian of the normal
    /// field; an independent route to the mean curvature.
    pub fn mean_curvature_fd(&self, x: &Vector, h: f64) -> Result<f64> {
        let p = self.tangent_projection(x)?;
        if self.dim == 1 {
            return Ok(0.0);
        }
        let mut jac = Matrix::ZERO;
        for j in 0..self.dim {
            let e = Vector::unit(j) * h;
            let dn = (self.normal_field(&(*x + e)) - self.normal_field(&(*x - e))) * (0.5 / h);
            for i in 0..self.dim {
                jac.0[i][j] = dn[i];
            }
        }
        Ok(p.frobenius_dot(&jac.transpose()))
    }

    /// Newton iteration along `∇F` onto `Γ`.
    pub fn project_to_boundary(&self, x: &Vector) -> Result<Vector> {
        let target = self.tol.on_boundary * 1e-3;
        let mut y = *x;
        let mut level = self.level.value(&y);
        if level.abs() >= self.tol.projection_basin {
            return Err(Error::ProjectionDiverged(*x));
        }
        for _ in 0..self.tol.max_newton {
            if level.abs() <= target {
                return Ok(y);
            }
            let g = self.level.gradient(&y);
            let g2 = g.norm_squared();
            if g2 < GRADIENT_FLOOR * GRADIENT_FLOOR {
                return Err(Error::ProjectionDiverged(*x));
            }
            let next = y - g * (level / g2);
            let next_level = finite_level(self, &next);
            if !(next_level.abs() < level.abs()) {
                // No further progress at rounding level.
                return if level.abs() <= self.tol.on_boundary {
                    Ok(y)
                } else {
                    Err(Error::ProjectionDiverged(*x))
                };
            }
            y = next;
            level = next_level;
        }
        if level.abs() <= target {
            Ok(y)
        } else {
            Err(Error::ProjectionDiverged(*x))
        }
    }

    /// Draws a point uniformly on the level set by radial search from the
    /// star center; only for star-shaped domains. Not uniform in σ.
    pub fn random_boundary_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vector> {
        let Shape::Star { center } = self.shape else {
            return Err(Error::Validation(format!("domain `{}` is not star-shaped", self.name)));
        };
        let dir = random_direction(rng, self.dim);
        self.ray_boundary_point(&center, &dir)
    }

    /// Point where the ray `center + s·dir`, s > 0, crosses `Γ`.
    pub fn ray_boundary_point(&self, center: &Vector, dir: &Vector) -> Result<Vector> {
        let radius = self.ray_boundary_distance(center, dir)?;
        self.project_to_boundary(&(*center + *dir * radius))
    }

    /// Distance along a unit ray from an interior point to `Γ`, by
    /// bracketing and bisection.
    pub fn ray_boundary_distance(&self, center: &Vector, dir: &Vector) -> Result<f64> {
        let f = |s: f64| self.level.value(&(*center + *dir * s));
        if f(0.0) >= 0.0 {
            return Err(Error::Validation(format!("ray origin {center:?} is not interior")));
        }
        let mut hi = self.diameter().max(1e-300);
        let mut grow = 0;
        while f(hi) <= 0.0 {
            hi *= 2.0;
            grow += 1;
            if grow > 60 {
                return Err(Error::Validation("ray never leaves the domain".into()));
            }
        }
        let mut lo = 0.0;
        let resolution = 1e-15 * self.diameter();
        while hi - lo > resolution {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Sampled check of the structural invariants: non-degenerate gradient
    /// near `Γ`, symmetric Hessian consistent with FD of the gradient, and
    /// `{F ≤ 0}` inside the bounding box.
    pub fn validate<R: Rng + ?Sized>(&self, rng: &mut R, samples: usize) -> Result<()> {
        let span = self.bbox_hi - self.bbox_lo;
        let h = 1e-5 * self.diameter();
        for _ in 0..samples {
            let mut x = self.bbox_lo;
            for i in 0..self.dim {
                x[i] += span[i] * rng.random::<f64>();
            }
            let jet = self.level.jet(&x);
            if (jet.hess - jet.hess.transpose()).max_abs() > 1e-9 * (1.0 + jet.hess.max_abs()) {
                return Err(Error::Validation(format!("Hessian of `{}` not symmetric at {x:?}", self.name)));
            }
            for j in 0..self.dim {
                let e = Vector::unit(j) * h;
                let fd = (self.level.gradient(&(x + e)) - self.level.gradient(&(x - e))) * (0.5 / h);
                for i in 0..self.dim {
                    let scale = 1.0 + jet.hess.0[i][j].abs();
                    if (fd[i] - jet.hess.0[i][j]).abs() > 1e-4 * scale {
                        return Err(Error::Validation(format!(
                            "Hessian of `{}` disagrees with finite differences at {x:?}",
                            self.name
                        )));
                    }
                }
            }
        }
        // Bounding box faces must lie in {F > 0} (up to the tolerance) and
        // the level set must be non-degenerate near Γ.
        for _ in 0..samples {
            let mut x = self.bbox_lo;
            for i in 0..self.dim {
                x[i] += span[i] * rng.random::<f64>();
            }
            let axis = rng.random_range(0..self.dim);
            let pad = 1e-6 * self.diameter();
            x[axis] = if rng.random::<bool>() {
                self.bbox_hi[axis] + pad
            } else {
                self.bbox_lo[axis] - pad
            };
            if self.level.value(&x) < -self.tol.on_boundary {
                return Err(Error::Validation(format!(
                    "domain `{}` leaks out of its bounding box at {x:?}",
                    self.name
                )));
            }
        }
        if let Shape::Star { .. } = self.shape {
            for _ in 0..samples {
                let y = self.random_boundary_point(rng)?;
                if self.level.gradient(&y).norm() < 1e-8 {
                    return Err(Error::DegenerateGradient(y));
                }
            }
        }
        Ok(())
    }
}

/// Uniform direction on the unit sphere in R^dim.
pub fn random_direction<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vector {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let mut v = Vector::ZERO;
        for i in 0..dim {
            v[i] = StandardNormal.sample(rng);
        }
        let n = v.norm();
        if n > 1e-12 {
            return v * (1.0 / n);
        }
    }
}

/// A level-set field that is constant; handy for tests of degenerate input.
pub fn flat_level(value: f64) -> SharedField {
    Arc::new(ConstantField(value))
}
