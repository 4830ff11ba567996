//! Densities `α`, `β`, the reference measure `μ = αλ + βσ`, screening of
//! the structural conditions on the densities, and the analytic
//! occupation-fraction prediction `μ(G∩Γ)/μ(G)`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::field::{ConstantField, ScalarField, SharedField};
use crate::geometry::{random_direction, DomainGeometry, Shape};
use crate::linalg::Vector;
use crate::quadrature::{gauss_legendre, sphere_rule, DomainRule, QuadratureSpec};
use crate::{Error, Result};

/// Densities on `Ω̄` (α) and on `Γ` extended to `Ω̄` (β).
#[derive(Clone, Debug)]
pub struct DensityPair {
    pub alpha: SharedField,
    pub beta: SharedField,
    pub alpha_label: String,
    pub beta_label: String,
    /// Upper bounds used as rejection envelopes.
    pub alpha_max: Option<f64>,
    pub beta_max: Option<f64>,
    alpha_const: Option<f64>,
    beta_const: Option<f64>,
}

impl DensityPair {
    pub fn new(alpha: SharedField, alpha_label: impl Into<String>, beta: SharedField, beta_label: impl Into<String>) -> Self {
        let alpha_const = alpha.constant_value();
        let beta_const = beta.constant_value();
        DensityPair {
            alpha,
            beta,
            alpha_label: alpha_label.into(),
            beta_label: beta_label.into(),
            alpha_max: alpha_const,
            beta_max: beta_const,
            alpha_const,
            beta_const,
        }
    }

    pub fn constant(alpha: f64, beta: f64) -> Self {
        Self::new(
            Arc::new(ConstantField(alpha)),
            alpha.to_string(),
            Arc::new(ConstantField(beta)),
            beta.to_string(),
        )
    }

    /// Parses a density: `uniform`, `gibbs:<V>` for `exp(−V)`, or a raw
    /// expression.
    pub fn parse_density(spec: &str) -> Result<(SharedField, String)> {
        let spec = spec.trim();
        if spec == "uniform" {
            return Ok((Arc::new(ConstantField(1.0)), "uniform".into()));
        }
        if let Some(v) = spec.strip_prefix("gibbs:") {
            let expr = Expr::parse(&format!("exp(-({v}))"))?;
            return Ok((Arc::new(expr), spec.to_string()));
        }
        let expr = Expr::parse(spec)?;
        match expr.constant_value() {
            Some(c) => Ok((Arc::new(ConstantField(c)), spec.to_string())),
            None => Ok((Arc::new(expr), spec.to_string())),
        }
    }

    pub fn from_specs(alpha: &str, beta: &str) -> Result<Self> {
        let (a, al) = Self::parse_density(alpha)?;
        let (b, bl) = Self::parse_density(beta)?;
        Ok(Self::new(a, al, b, bl))
    }

    pub fn with_bounds(mut self, alpha_max: Option<f64>, beta_max: Option<f64>) -> Self {
        if alpha_max.is_some() {
            self.alpha_max = alpha_max;
        }
        if beta_max.is_some() {
            self.beta_max = beta_max;
        }
        self
    }

    /// Same pair with `β` multiplied by `c`.
    pub fn scale_beta(&self, c: f64) -> Self {
        let beta: SharedField = match self.beta_const {
            Some(b) => Arc::new(ConstantField(b * c)),
            None => Arc::new(Scaled(self.beta.clone(), c)),
        };
        let mut out = Self::new(
            self.alpha.clone(),
            self.alpha_label.clone(),
            beta,
            format!("{}*({})", c, self.beta_label),
        );
        out.alpha_max = self.alpha_max;
        out.beta_max = self.beta_max.map(|m| m * c);
        out
    }

    #[inline]
    pub fn alpha(&self, x: &Vector) -> f64 {
        match self.alpha_const {
            Some(c) => c,
            None => self.alpha.value(x),
        }
    }

    #[inline]
    pub fn beta(&self, x: &Vector) -> f64 {
        match self.beta_const {
            Some(c) => c,
            None => self.beta.value(x),
        }
    }

    pub fn alpha_is_constant(&self) -> bool {
        self.alpha_const.is_some()
    }

    pub fn beta_is_constant(&self) -> bool {
        self.beta_const.is_some()
    }

    /// `∇ln α`; zero for constant α.
    #[inline]
    pub fn grad_log_alpha(&self, x: &Vector) -> Vector {
        if self.alpha_const.is_some() {
            return Vector::ZERO;
        }
        let j = self.alpha.jet(x);
        j.grad * (1.0 / j.value)
    }

    /// Full-space `∇ln β`; zero for constant β.
    #[inline]
    pub fn grad_log_beta(&self, x: &Vector) -> Vector {
        if self.beta_const.is_some() {
            return Vector::ZERO;
        }
        let j = self.beta.jet(x);
        j.grad * (1.0 / j.value)
    }

    #[inline]
    pub fn grad_beta(&self, x: &Vector) -> Vector {
        if self.beta_const.is_some() {
            return Vector::ZERO;
        }
        self.beta.gradient(x)
    }
}

#[derive(Debug)]
struct Scaled(SharedField, f64);

impl ScalarField for Scaled {
    fn value(&self, x: &Vector) -> f64 {
        self.1 * self.0.value(x)
    }

    fn jet(&self, x: &Vector) -> crate::field::Jet {
        self.0.jet(x).scale(self.1)
    }
}

/// Primitive shapes making up a declared zero set `{ϱ = 0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ZeroSetPart {
    Point {
        at: Vec<f64>,
    },
    /// `{x : (normal, x) = offset}`.
    Hyperplane {
        normal: Vec<f64>,
        offset: f64,
    },
}

impl ZeroSetPart {
    pub fn distance(&self, x: &Vector) -> f64 {
        match self {
            ZeroSetPart::Point { at } => (*x - Vector::from_slice(at)).norm(),
            ZeroSetPart::Hyperplane { normal, offset } => {
                let n = Vector::from_slice(normal);
                (n.dot(x) - offset).abs() / n.norm()
            }
        }
    }

    /// Signed side of a hyperplane; `None` for points.
    pub fn side(&self, x: &Vector) -> Option<f64> {
        match self {
            ZeroSetPart::Point { .. } => None,
            ZeroSetPart::Hyperplane { normal, offset } => Some(Vector::from_slice(normal).dot(x) - offset),
        }
    }
}

/// Distance from `x` to the union of zero-set parts.
pub fn zero_set_distance(zero_set: &[ZeroSetPart], x: &Vector) -> f64 {
    zero_set.iter().map(|z| z.distance(x)).fold(f64::INFINITY, f64::min)
}

/// A connected component `G` of `{ϱ > 0}`, described as the region on a
/// chosen side of every declared hyperplane.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// `(hyperplane index, sign)` pairs; empty means all of `Ω̄`.
    pub sides: Vec<(usize, f64)>,
}

impl Component {
    pub fn whole() -> Self {
        Component::default()
    }

    /// The component containing `x` with respect to the declared hyperplanes.
    pub fn containing(zero_set: &[ZeroSetPart], x: &Vector) -> Self {
        let sides = zero_set
            .iter()
            .enumerate()
            .filter_map(|(i, z)| z.side(x).map(|s| (i, s.signum())))
            .collect();
        Component { sides }
    }

    pub fn contains(&self, zero_set: &[ZeroSetPart], x: &Vector) -> bool {
        self.sides
            .iter()
            .all(|(i, sign)| zero_set[*i].side(x).is_some_and(|s| s * sign > 0.0))
    }
}

#[derive(Clone, Debug)]
pub struct ReferenceMeasure {
    pub pair: DensityPair,
    pub geom: DomainGeometry,
    pub volume_mass: f64,
    pub surface_mass: f64,
    pub volume_error: f64,
    pub surface_error: f64,
    pub spec: QuadratureSpec,
    pub rule: DomainRule,
}

/// Relative disagreement between refinement levels above which masses are
/// rejected.
const MASS_REL_TOL: f64 = 1e-3;

impl ReferenceMeasure {
    pub fn new(pair: DensityPair, geom: DomainGeometry, spec: QuadratureSpec) -> Result<Self> {
        let rule = DomainRule::build(&geom, spec)?;
        let fine = DomainRule::build(&geom, spec.refined())?;
        let masses = |r: &DomainRule| (r.integrate_volume(|x| pair.alpha(x)), r.integrate_surface(|x| pair.beta(x)));
        let (v0, s0) = masses(&rule);
        let (v1, s1) = masses(&fine);
        let (volume_error, surface_error) = ((v1 - v0).abs(), (s1 - s0).abs());
        for (what, m, e) in [("volume", v1, volume_error), ("surface", s1, surface_error)] {
            if !m.is_finite() || m <= 0.0 {
                return Err(Error::Validation(format!("{what} mass of μ is not finite and positive ({m})")));
            }
            if e > MASS_REL_TOL * m {
                return Err(Error::QuadratureNotConverged(format!(
                    "{what} mass {m} changes by {e:e} under refinement"
                )));
            }
        }
        Ok(ReferenceMeasure {
            pair,
            geom,
            volume_mass: v1,
            surface_mass: s1,
            volume_error,
            surface_error,
            spec,
            rule: fine,
        })
    }

    /// `(μ(Ω), μ(Γ))`.
    pub fn mu_masses(&self) -> (f64, f64) {
        (self.volume_mass, self.surface_mass)
    }

    pub fn total_mass(&self) -> f64 {
        self.volume_mass + self.surface_mass
    }

    /// `∫ f dμ` over `G`.
    pub fn integrate(&self, f: impl Fn(&Vector) -> f64, component: &Component, zero_set: &[ZeroSetPart]) -> f64 {
        let inside = |x: &Vector| component.contains(zero_set, x);
        self.rule
            .integrate_volume(|x| if inside(x) { f(x) * self.pair.alpha(x) } else { 0.0 })
            + self
                .rule
                .integrate_surface(|x| if inside(x) { f(x) * self.pair.beta(x) } else { 0.0 })
    }

    /// `∫ f dμ / μ(Ω̄)`.
    pub fn average(&self, f: impl Fn(&Vector) -> f64) -> f64 {
        self.integrate(f, &Component::whole(), &[]) / self.total_mass()
    }

    /// Long-run fraction of time on `Γ` for a start in `G`,
    /// `μ(G∩Γ)/μ(G)`; for `G = Ω̄` this is `μ(Γ)/μ(Ω̄)`.
    pub fn predicted_occupation_fraction(&self, component: &Component, zero_set: &[ZeroSetPart]) -> f64 {
        if component.sides.is_empty() {
            return self.surface_mass / self.total_mass();
        }
        let inside = |x: &Vector| component.contains(zero_set, x);
        let surf = self.rule.integrate_surface(|x| if inside(x) { self.pair.beta(x) } else { 0.0 });
        let vol = self.rule.integrate_volume(|x| if inside(x) { self.pair.alpha(x) } else { 0.0 });
        surf / (surf + vol)
    }

    /// Rejection envelope for boundary proposals along rays: the largest
    /// Jacobian `R^{d−1}/(u·n)`.
    fn surface_jacobian_bound(&self, center: &Vector) -> Result<f64> {
        let mut m: f64 = 0.0;
        for (u, _) in sphere_rule(self.geom.dim, 512) {
            let r = self.geom.ray_boundary_distance(center, &u)?;
            let y = *center + u * r;
            m = m.max(r.powi(self.geom.dim as i32 - 1) / u.dot(&self.geom.normal_field(&y)));
        }
        Ok(1.1 * m)
    }

    /// I.i.d. draws from `μ/μ(Ω̄)`, labelled by whether they lie on `Γ`.
    pub fn sample_invariant<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Vec<LabeledPoint>> {
        let alpha_max = self
            .pair
            .alpha_max
            .ok_or_else(|| Error::EnvelopeUnknown(self.pair.alpha_label.clone()))?;
        let beta_max = self
            .pair
            .beta_max
            .ok_or_else(|| Error::EnvelopeUnknown(self.pair.beta_label.clone()))?;
        let p_surface = self.surface_mass / self.total_mass();
        let dim = self.geom.dim;
        let star = match self.geom.shape {
            Shape::Star { center } => Some((center, self.surface_jacobian_bound(&center)?)),
            Shape::General => None,
        };
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if rng.random::<f64>() < p_surface {
                out.push(LabeledPoint {
                    point: self.sample_surface(rng, beta_max, star)?,
                    on_boundary: true,
                });
            } else {
                let span = self.geom.bbox_hi - self.geom.bbox_lo;
                loop {
                    let mut x = self.geom.bbox_lo;
                    for i in 0..dim {
                        x[i] += span[i] * rng.random::<f64>();
                    }
                    if self.geom.level_value(&x) < 0.0 && rng.random::<f64>() * alpha_max < self.pair.alpha(&x) {
                        out.push(LabeledPoint {
                            point: x,
                            on_boundary: false,
                        });
                        break;
                    }
                }
            }
        }
        Ok(out)
    }

    fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R, beta_max: f64, star: Option<(Vector, f64)>) -> Result<Vector> {
        let dim = self.geom.dim;
        if dim == 1 {
            let ends = &self.rule.surface;
            let w: Vec<f64> = ends.iter().map(|n| self.pair.beta(&n.point)).collect();
            let pick = rng.random::<f64>() * (w[0] + w[1]);
            return Ok(if pick < w[0] { ends[0].point } else { ends[1].point });
        }
        match star {
            Some((center, jac_max)) => loop {
                let u = random_direction(rng, dim);
                let r = self.geom.ray_boundary_distance(&center, &u)?;
                let y = self.geom.project_to_boundary(&(center + u * r))?;
                let jac = r.powi(dim as i32 - 1) / u.dot(&self.geom.normal_field(&y));
                if rng.random::<f64>() * jac_max * beta_max < jac * self.pair.beta(&y) {
                    return Ok(y);
                }
            },
            None => {
                // Weighted resampling of the co-area point cloud.
                let nodes = &self.rule.surface;
                let total: f64 = nodes.iter().map(|n| n.weight * self.pair.beta(&n.point)).sum();
                let mut pick = rng.random::<f64>() * total;
                for n in nodes {
                    pick -= n.weight * self.pair.beta(&n.point);
                    if pick <= 0.0 {
                        return Ok(n.point);
                    }
                }
                Ok(nodes[nodes.len() - 1].point)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub point: Vector,
    pub on_boundary: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationLevel {
    Construction,
    Analysis,
    Feller,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotCheckable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub condition: String,
    pub status: CheckStatus,
    pub evidence: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub level: ValidationLevel,
    pub checks: Vec<ConditionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn first_failure(&self) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.status == CheckStatus::Fail)
    }

    pub fn get(&self, prefix: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.condition.starts_with(prefix))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{:?}\t{}\t{}", c.status, c.condition, c.evidence)?;
        }
        Ok(())
    }
}

/// Options for [`validate_conditions`].
#[derive(Clone, Debug)]
pub struct ValidationOptions<'a> {
    pub level: ValidationLevel,
    pub delta: u8,
    pub zero_set: &'a [ZeroSetPart],
    /// Exponent for the local `L^p` screen.
    pub p: f64,
    pub spec: QuadratureSpec,
}

impl Default for ValidationOptions<'_> {
    fn default() -> Self {
        ValidationOptions {
            level: ValidationLevel::Construction,
            delta: 1,
            zero_set: &[],
            p: 2.0,
            spec: QuadratureSpec::default(),
        }
    }
}

fn check(condition: &str, ok: bool, evidence: String) -> ConditionCheck {
    ConditionCheck {
        condition: condition.to_string(),
        status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        evidence,
    }
}

/// Screens the density conditions numerically. Report-only: a failing
/// check is recorded, never raised.
pub fn validate_conditions(pair: &DensityPair, geom: &DomainGeometry, opts: &ValidationOptions<'_>) -> ValidationReport {
    let mut checks = Vec::new();
    let rule = match DomainRule::build(geom, opts.spec) {
        Ok(r) => r,
        Err(e) => {
            checks.push(ConditionCheck {
                condition: "quadrature".into(),
                status: CheckStatus::Fail,
                evidence: e.to_string(),
            });
            return ValidationReport { level: opts.level, checks };
        }
    };

    // Positivity a.e. and integrability.
    let bad_alpha = rule.volume.iter().filter(|n| !(pair.alpha(&n.point) > 0.0)).count();
    let bad_beta = rule.surface.iter().filter(|n| !(pair.beta(&n.point) > 0.0)).count();
    let vol = rule.integrate_volume(|x| pair.alpha(x));
    let surf = rule.integrate_surface(|x| pair.beta(x));
    checks.push(check(
        "positivity: α > 0 λ-a.e.",
        bad_alpha == 0,
        format!("{bad_alpha} of {} volume nodes with α ≤ 0", rule.volume.len()),
    ));
    checks.push(check(
        "positivity: β > 0 σ-a.e.",
        bad_beta == 0,
        format!("{bad_beta} of {} surface nodes with β ≤ 0", rule.surface.len()),
    ));
    checks.push(check(
        "integrability: α ∈ L¹(Ω), β ∈ L¹(Γ)",
        vol.is_finite() && surf.is_finite() && vol > 0.0 && surf > 0.0,
        format!("∫α dλ = {vol:.6e}, ∫β dσ = {surf:.6e}"),
    ));
    checks.push(hamza_screen(pair, geom, opts));

    if opts.level >= ValidationLevel::Analysis {
        checks.push(continuity_screen("continuity of α on Ω̄", geom, |x| pair.alpha(x), false));
        if opts.delta == 1 {
            checks.push(continuity_screen("continuity of β on Γ", geom, |x| pair.beta(x), true));
        }
        checks.push(sqrt_energy_screen(pair, geom, opts.spec));
    }
    if opts.level >= ValidationLevel::Feller {
        checks.push(lp_screen(pair, geom, opts));
    }
    ValidationReport { level: opts.level, checks }
}

/// Local integral of `1/ρ` over `B_r(z) ∩ Ω` by a polar rule centered at
/// `z`, or over the boundary arc for boundary points.
fn local_inverse_integral(geom: &DomainGeometry, density: impl Fn(&Vector) -> f64, z: &Vector, r: f64) -> f64 {
    let dim = geom.dim;
    let mut acc = 0.0;
    for (u, wu) in sphere_rule(dim, 64) {
        for (s, ws) in gauss_legendre(32, 0.0, r) {
            let x = *z + u * s;
            if geom.level_value(&x) < 0.0 {
                acc += wu * ws * s.powi(dim as i32 - 1) / density(&x);
            }
        }
    }
    acc
}

fn growth_exponent(radii: &[f64], values: &[f64]) -> f64 {
    // Least-squares slope of log v against log r.
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(r, v)| (r.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn hamza_screen(pair: &DensityPair, geom: &DomainGeometry, opts: &ValidationOptions<'_>) -> ConditionCheck {
    let points: Vec<Vector> = opts
        .zero_set
        .iter()
        .filter_map(|z| match z {
            ZeroSetPart::Point { at } => Some(Vector::from_slice(at)),
            ZeroSetPart::Hyperplane { .. } => None,
        })
        .collect();
    if points.is_empty() {
        return ConditionCheck {
            condition: "Hamza: α = 0 a.e. off the regular set".into(),
            status: CheckStatus::Pass,
            evidence: "no isolated zeros declared; 1/α is locally bounded away from declared null sets".into(),
        };
    }
    let radii = [0.1, 0.05, 0.025, 0.0125].map(|r| r * geom.diameter());
    let mut notes = Vec::new();
    for z in &points {
        let vals: Vec<f64> = radii
            .iter()
            .map(|r| local_inverse_integral(geom, |x| pair.alpha(x), z, *r))
            .collect();
        let k = growth_exponent(&radii, &vals);
        let integrable = k > 0.25;
        notes.push(format!(
            "at {:?}: ∫_(B_r) 1/α ~ r^{k:.2} ({}); the singular set is a point, hence λ-null",
            z.as_slice(geom.dim),
            if integrable {
                "locally integrable"
            } else {
                "not locally integrable"
            }
        ));
    }
    ConditionCheck {
        condition: "Hamza: α = 0 a.e. off the regular set".into(),
        status: CheckStatus::Pass,
        evidence: notes.join("; "),
    }
}

/// Compares the largest neighbour difference on a grid at spacings `h` and
/// `h/4`: continuous data shrinks it, a jump does not.
fn continuity_screen(name: &str, geom: &DomainGeometry, f: impl Fn(&Vector) -> f64, surface_only: bool) -> ConditionCheck {
    let diam = geom.diameter();
    let max_jump = |h: f64| -> f64 {
        let mut worst: f64 = 0.0;
        let mut rng_state = 0x9e3779b97f4a7c15_u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..4000 {
            let mut x = geom.bbox_lo;
            for i in 0..geom.dim {
                x[i] += (geom.bbox_hi[i] - geom.bbox_lo[i]) * next();
            }
            if surface_only {
                match geom.project_to_boundary(&x) {
                    Ok(y) => x = y,
                    Err(_) => continue,
                }
            } else if geom.level_value(&x) > 0.0 {
                continue;
            }
            for j in 0..geom.dim {
                let mut y = x + Vector::unit(j) * h;
                if surface_only {
                    match geom.project_to_boundary(&y) {
                        Ok(p) => y = p,
                        Err(_) => continue,
                    }
                } else if geom.level_value(&y) > 0.0 {
                    continue;
                }
                worst = worst.max((f(&x) - f(&y)).abs());
            }
        }
        worst
    };
    // Probe along the coarse grid lines of the jumps too.
    let h = 1e-2 * diam;
    let coarse = max_jump(h);
    let fine = max_jump(h / 4.0);
    let ok = fine <= 0.5 * coarse || coarse < 1e-12;
    ConditionCheck {
        condition: name.to_string(),
        status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        evidence: format!("max neighbour difference {coarse:.3e} at h, {fine:.3e} at h/4"),
    }
}

fn sqrt_energy_screen(pair: &DensityPair, geom: &DomainGeometry, spec: QuadratureSpec) -> ConditionCheck {
    let energy = |s: QuadratureSpec| -> Option<f64> {
        let rule = DomainRule::build(geom, s).ok()?;
        Some(rule.integrate_volume(|x| {
            let j = pair.alpha.jet(x);
            if j.value > 0.0 {
                j.grad.norm_squared() / (4.0 * j.value)
            } else {
                0.0
            }
        }))
    };
    match (energy(spec), energy(spec.refined())) {
        (Some(a), Some(b)) if a.is_finite() && b.is_finite() => {
            let ok = (a - b).abs() <= 0.05 * b.abs().max(1e-12);
            check("√α ∈ H^{1,2}(Ω)", ok, format!("∫|∇√α|² dλ ≈ {b:.6e} (coarse {a:.6e})"))
        }
        _ => ConditionCheck {
            condition: "√α ∈ H^{1,2}(Ω)".into(),
            status: CheckStatus::NotCheckable,
            evidence: "quadrature unavailable".into(),
        },
    }
}

fn lp_screen(pair: &DensityPair, geom: &DomainGeometry, opts: &ValidationOptions<'_>) -> ConditionCheck {
    let cut = 0.05 * geom.diameter();
    let away = |x: &Vector| zero_set_distance(opts.zero_set, x) > cut;
    let p = opts.p;
    let norm = |s: QuadratureSpec| -> Option<f64> {
        let rule = DomainRule::build(geom, s).ok()?;
        let vol = rule.integrate_volume(|x| {
            if away(x) {
                pair.grad_log_alpha(x).norm().powf(p) * pair.alpha(x)
            } else {
                0.0
            }
        });
        let surf = if opts.delta == 1 {
            rule.integrate_surface(|x| {
                if away(x) {
                    let n = geom.normal_field(x);
                    let g = pair.grad_log_beta(x);
                    (g - n * n.dot(&g)).norm().powf(p) * pair.beta(x)
                } else {
                    0.0
                }
            })
        } else {
            0.0
        };
        Some(vol + surf)
    };
    let ok_p = p >= 2.0 && p > geom.dim as f64 / 2.0;
    match (norm(opts.spec), norm(opts.spec.refined())) {
        (Some(a), Some(b)) if a.is_finite() && b.is_finite() => check(
            "|∇α|/α, |∇β|/β ∈ L^p_loc",
            ok_p && (a - b).abs() <= 0.05 * b.abs().max(1e-12),
            format!("p = {p}: ∫ over compacts avoiding {{ϱ=0}} ≈ {b:.6e} (coarse {a:.6e})"),
        ),
        _ => ConditionCheck {
            condition: "|∇α|/α, |∇β|/β ∈ L^p_loc".into(),
            status: CheckStatus::NotCheckable,
            evidence: "quadrature unavailable".into(),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub radii: Vec<f64>,
    pub masses: Vec<f64>,
    pub exponent: f64,
    pub consistent: bool,
}

/// Estimates `μ(B_r(Z))` on a decreasing grid of radii and fits the growth
/// exponent; consistent with `μ(B_r(Z)) ≤ C r²` iff the exponent is ≥ 2
/// (within a 0.1 fitting allowance).
pub fn capacity_screen(measure: &ReferenceMeasure, zero_set: &[ZeroSetPart]) -> Result<CapacityReport> {
    if zero_set.is_empty() {
        return Ok(CapacityReport {
            radii: Vec::new(),
            masses: Vec::new(),
            exponent: f64::INFINITY,
            consistent: true,
        });
    }
    let geom = &measure.geom;
    let diam = geom.diameter();
    let radii: Vec<f64> = (0..5).map(|k| 0.1 * diam * 0.5_f64.powi(k)).collect();
    let fine_surface = DomainRule::build(geom, QuadratureSpec { radial: 4, angular: 8192 })?;
    let tensor = DomainRule::build(geom, QuadratureSpec { radial: 64, angular: 256 })?;
    let masses: Vec<f64> = radii
        .iter()
        .map(|&r| {
            let mut vol = 0.0;
            for part in zero_set {
                match part {
                    ZeroSetPart::Point { at } => {
                        let z = Vector::from_slice(at);
                        for (u, wu) in sphere_rule(geom.dim, 128) {
                            for (s, ws) in gauss_legendre(32, 0.0, r) {
                                let x = z + u * s;
                                if geom.level_value(&x) < 0.0 {
                                    vol += wu * ws * s.powi(geom.dim as i32 - 1) * measure.pair.alpha(&x);
                                }
                            }
                        }
                    }
                    ZeroSetPart::Hyperplane { .. } => {
                        vol += tensor.integrate_volume(|x| if part.distance(x) < r { measure.pair.alpha(x) } else { 0.0 });
                    }
                }
            }
            let surf = fine_surface.integrate_surface(|x| {
                if zero_set_distance(zero_set, x) < r {
                    measure.pair.beta(x)
                } else {
                    0.0
                }
            });
            vol + surf
        })
        .collect();
    let exponent = growth_exponent(&radii, &masses);
    Ok(CapacityReport {
        consistent: exponent >= 1.9,
        radii,
        masses,
        exponent,
    })
}
