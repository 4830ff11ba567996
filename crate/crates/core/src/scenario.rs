//! Scenario files.
//!
//! A scenario is a TOML document with the tables `[domain]`, `[densities]`,
//! `[process]`, `[run]`, `[validation]`, `[analysis]` and `[tolerances]`.
//! Only `[domain]` is required:
//!
//! ```toml
//! name = "disk_uniform"
//!
//! [domain]
//! shape = "disk"
//!
//! [densities]
//! alpha = "uniform"
//! beta = "uniform"
//!
//! [process]
//! delta = 1
//! start = [0.0, 0.0]
//!
//! [run]
//! scheme = "time_change"
//! dt = 1e-3
//! horizon = 2000.0
//! paths = 16
//! ```
//!
//! Loading is fail-fast: structural rules, sampled geometry checks and the
//! density screen all run before anything is simulated.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::DomainGeometry;
use crate::linalg::Vector;
use crate::measures::{
    validate_conditions, DensityPair, ReferenceMeasure, ValidationLevel, ValidationOptions, ValidationReport, ZeroSetPart,
};
use crate::quadrature::QuadratureSpec;
use crate::schemes::{Scenario, SchemeKind, StartSpec};
use crate::{Error, Result, MAX_DIM};

/// Number of random points used by the geometry self-check on load.
pub const GEOMETRY_SAMPLES: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_name")]
    pub name: String,
    pub domain: DomainSection,
    #[serde(default)]
    pub densities: DensitySection,
    #[serde(default)]
    pub process: ProcessSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub validation: ValidationSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_name() -> String {
    "scenario".into()
}

/// Either a built-in `shape` or a level-set expression `level` with `dim`
/// and a bounding box.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox_lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox_hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub star_center: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    #[serde(default = "uniform")]
    pub alpha: String,
    #[serde(default = "uniform")]
    pub beta: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_set: Vec<ZeroSetPart>,
}

fn uniform() -> String {
    "uniform".into()
}

impl Default for DensitySection {
    fn default() -> Self {
        DensitySection {
            alpha: uniform(),
            beta: uniform(),
            alpha_max: None,
            beta_max: None,
            zero_set: Vec::new(),
        }
    }
}

fn check_zero_set(z: &ZeroSetPart, dim: usize) -> Result<()> {
    match z {
        ZeroSetPart::Point { at } => {
            vector(at, dim, "zero_set.at")?;
        }
        ZeroSetPart::Hyperplane { normal, offset } => {
            if !(vector(normal, dim, "zero_set.normal")?.norm() > 0.0) || !offset.is_finite() {
                return Err(Error::Validation(
                    "zero_set hyperplane needs a nonzero normal and a finite offset".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Start point: coordinates, `"center"` or `"invariant"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartField {
    Point(Vec<f64>),
    Named(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSection {
    #[serde(default = "one")]
    pub delta: u8,
    #[serde(default = "center")]
    pub start: StartField,
}

fn one() -> u8 {
    1
}

fn center() -> StartField {
    StartField::Named("center".into())
}

impl Default for ProcessSection {
    fn default() -> Self {
        ProcessSection { delta: 1, start: center() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub scheme: SchemeKind,
    #[serde(default = "RunSection::default_dt")]
    pub dt: f64,
    #[serde(default = "RunSection::default_horizon")]
    pub horizon: f64,
    #[serde(default = "RunSection::default_dt_out")]
    pub dt_out: f64,
    #[serde(default = "RunSection::default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// Discarded initial stretch for time averages.
    #[serde(default)]
    pub burn_in: f64,
    #[serde(default = "RunSection::default_budget")]
    pub budget_factor: f64,
    #[serde(default = "RunSection::default_batches")]
    pub batches: usize,
}

impl RunSection {
    fn default_dt() -> f64 {
        1e-3
    }
    fn default_horizon() -> f64 {
        1.0
    }
    fn default_dt_out() -> f64 {
        1e-2
    }
    fn default_paths() -> usize {
        1
    }
    fn default_budget() -> f64 {
        1000.0
    }
    fn default_batches() -> usize {
        crate::observables::DEFAULT_BATCHES
    }
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            scheme: SchemeKind::default(),
            dt: Self::default_dt(),
            horizon: Self::default_horizon(),
            dt_out: Self::default_dt_out(),
            paths: Self::default_paths(),
            seed: 0,
            burn_in: 0.0,
            budget_factor: Self::default_budget(),
            batches: Self::default_batches(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    #[serde(default = "construction")]
    pub level: ValidationLevel,
    #[serde(default = "two")]
    pub p: f64,
}

fn construction() -> ValidationLevel {
    ValidationLevel::Construction
}

fn two() -> f64 {
    2.0
}

impl Default for ValidationSection {
    fn default() -> Self {
        ValidationSection {
            level: construction(),
            p: 2.0,
        }
    }
}

/// Inputs for the analysis subcommands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Functions for ergodic averages and residual checks; empty means the
    /// built-in bank.
    #[serde(default)]
    pub functions: Vec<String>,
    #[serde(default = "AnalysisSection::default_h")]
    pub martingale_h: f64,
    /// Index pairs into `functions` for the symmetry check.
    #[serde(default)]
    pub symmetry_pairs: Vec<[usize; 2]>,
    /// Marginal times for oracle comparisons.
    #[serde(default = "AnalysisSection::default_times")]
    pub times: Vec<f64>,
    /// Points per shape for the geometry suite.
    #[serde(default = "AnalysisSection::default_points")]
    pub points: usize,
}

impl AnalysisSection {
    fn default_h() -> f64 {
        0.01
    }
    fn default_times() -> Vec<f64> {
        vec![0.5, 1.0]
    }
    fn default_points() -> usize {
        10_000
    }
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            functions: Vec::new(),
            martingale_h: Self::default_h(),
            symmetry_pairs: Vec::new(),
            times: Self::default_times(),
            points: Self::default_points(),
        }
    }
}

/// Pass thresholds used by the subcommands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Width of statistical verdicts in standard errors.
    pub sigma: f64,
    /// Absolute tolerance of the occupation fraction against its prediction.
    pub occupation: f64,
    pub ks_time_change: f64,
    pub ks_direct: f64,
    /// Lower confidence bound required for a "sticky" verdict.
    pub sticky_lower_bound: f64,
    pub frame: f64,
    pub curvature_identity: f64,
    pub surface_radius: f64,
    pub surface_moment: f64,
    pub compact_split: f64,
    pub symmetry_quadrature: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            sigma: crate::observables::DEFAULT_SIGMA,
            occupation: 0.02,
            ks_time_change: 0.02,
            ks_direct: 0.03,
            sticky_lower_bound: 0.0,
            frame: 1e-12,
            curvature_identity: 1e-5,
            surface_radius: 1e-6,
            surface_moment: 0.01,
            compact_split: 1e-10,
            symmetry_quadrature: 1e-3,
        }
    }
}

/// Command-line overrides applied on top of a file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub paths: Option<usize>,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub scheme: Option<SchemeKind>,
    pub sigma: Option<f64>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
            Error::Parse {
                line,
                column,
                message: e.message().trim().to_string(),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario files serialize")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.paths {
            self.run.paths = v;
        }
        if let Some(v) = o.horizon {
            self.run.horizon = v;
        }
        if let Some(v) = o.dt {
            self.run.dt = v;
        }
        if let Some(v) = o.seed {
            self.run.seed = v;
        }
        if let Some(v) = o.scheme {
            self.run.scheme = v;
        }
        if let Some(v) = o.sigma {
            self.tolerances.sigma = v;
        }
    }

    pub fn geometry(&self) -> Result<DomainGeometry> {
        let d = &self.domain;
        match (&d.shape, &d.level) {
            (Some(shape), None) => {
                let g = DomainGeometry::zoo(shape)?;
                if let Some(dim) = d.dim {
                    if dim != g.dim {
                        return Err(Error::Validation(format!("shape `{shape}` has dimension {}, not {dim}", g.dim)));
                    }
                }
                Ok(g)
            }
            (None, Some(level)) => {
                let dim = d.dim.ok_or_else(|| Error::Validation("domain.level needs domain.dim".into()))?;
                if !(1..=MAX_DIM).contains(&dim) {
                    return Err(Error::Validation(format!("dimension {dim} outside 1..={MAX_DIM}")));
                }
                let lo = d
                    .bbox_lo
                    .as_ref()
                    .ok_or_else(|| Error::Validation("domain.level needs domain.bbox_lo".into()))?;
                let hi = d
                    .bbox_hi
                    .as_ref()
                    .ok_or_else(|| Error::Validation("domain.level needs domain.bbox_hi".into()))?;
                let lo = vector(lo, dim, "domain.bbox_lo")?;
                let hi = vector(hi, dim, "domain.bbox_hi")?;
                if (0..dim).any(|i| !(hi[i] > lo[i])) {
                    return Err(Error::Validation("domain.bbox_hi must exceed domain.bbox_lo".into()));
                }
                let star = d.star_center.as_ref().map(|c| vector(c, dim, "domain.star_center")).transpose()?;
                DomainGeometry::from_expression(level, dim, lo, hi, star)
            }
            (Some(_), Some(_)) => Err(Error::Validation("domain: give either shape or level, not both".into())),
            (None, None) => Err(Error::Validation("domain: one of shape or level is required".into())),
        }
    }

    /// Builds and validates the scenario. Nothing is simulated here.
    pub fn build(&self) -> Result<LoadedScenario> {
        let geom = self.geometry()?;
        let dim = geom.dim;
        let mut check_rng = ChaCha8Rng::seed_from_u64(self.run.seed);
        geom.validate(&mut check_rng, GEOMETRY_SAMPLES)?;

        let ds = &self.densities;
        let pair = DensityPair::from_specs(&ds.alpha, &ds.beta)?.with_bounds(ds.alpha_max, ds.beta_max);
        for z in &ds.zero_set {
            check_zero_set(z, dim)?;
        }
        let zero_set = ds.zero_set.clone();

        let start_point = match &self.process.start {
            StartField::Point(p) => Some(vector(p, dim, "process.start")?),
            StartField::Named(s) if s == "center" => Some(match geom.shape {
                crate::geometry::Shape::Star { center } => center,
                crate::geometry::Shape::General => (geom.bbox_lo + geom.bbox_hi) * 0.5,
            }),
            StartField::Named(s) if s == "invariant" => None,
            StartField::Named(s) => {
                return Err(Error::Validation(format!(
                    "process.start must be a point, \"center\" or \"invariant\", got `{s}`"
                )));
            }
        };

        let mut scn = Scenario::new(
            self.name.clone(),
            geom,
            pair,
            self.process.delta,
            start_point.unwrap_or(Vector::ZERO),
        );
        scn.scheme = self.run.scheme;
        scn.dt = self.run.dt;
        scn.horizon = self.run.horizon;
        scn.dt_out = self.run.dt_out;
        scn.n_paths = self.run.paths;
        scn.seed = self.run.seed;
        scn.zero_set = zero_set;
        scn.budget_factor = self.run.budget_factor;
        if !(self.run.burn_in >= 0.0 && self.run.burn_in < self.run.horizon) {
            return Err(Error::Validation(format!(
                "run.burn_in {} must lie in [0, horizon)",
                self.run.burn_in
            )));
        }
        if self.tolerances.sigma <= 0.0 {
            return Err(Error::Validation("tolerances.sigma must be positive".into()));
        }
        scn.validate()?;

        let validation = validate_conditions(
            &scn.pair,
            &scn.geom,
            &ValidationOptions {
                level: self.validation.level,
                delta: scn.delta,
                zero_set: &scn.zero_set,
                p: self.validation.p,
                spec: QuadratureSpec::default(),
            },
        );
        if let Some(c) = validation.first_failure() {
            return Err(Error::Validation(format!("condition `{}` fails: {}", c.condition, c.evidence)));
        }

        let mut measure = None;
        if start_point.is_none() {
            let m = Arc::new(ReferenceMeasure::new(
                scn.pair.clone(),
                scn.geom.clone(),
                QuadratureSpec::default(),
            )?);
            scn.start = StartSpec::Invariant(m.clone());
            measure = Some(m);
        }
        Ok(LoadedScenario {
            file: self.clone(),
            scenario: scn,
            validation,
            measure,
        })
    }
}

/// A validated scenario together with the file it came from.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub file: ScenarioFile,
    pub scenario: Scenario,
    pub validation: ValidationReport,
    measure: Option<Arc<ReferenceMeasure>>,
}

impl LoadedScenario {
    /// The reference measure, built on first use.
    pub fn measure(&mut self) -> Result<Arc<ReferenceMeasure>> {
        if let Some(m) = &self.measure {
            return Ok(m.clone());
        }
        let m = Arc::new(ReferenceMeasure::new(
            self.scenario.pair.clone(),
            self.scenario.geom.clone(),
            QuadratureSpec::default(),
        )?);
        self.measure = Some(m.clone());
        Ok(m)
    }
}

pub fn parse_scenario(text: &str) -> Result<LoadedScenario> {
    ScenarioFile::parse(text)?.build()
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<LoadedScenario> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

fn vector(xs: &[f64], dim: usize, what: &str) -> Result<Vector> {
    if xs.len() != dim {
        return Err(Error::Validation(format!("{what} has {} components, expected {dim}", xs.len())));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation(format!("{what} has non-finite components")));
    }
    Ok(Vector::from_slice(xs))
}

/// One-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let s = parse_scenario("[domain]\nshape = \"disk\"\n").unwrap();
        assert_eq!(s.scenario.delta, 1);
        assert_eq!(s.scenario.geom.dim, 2);
        assert_eq!(s.scenario.scheme, SchemeKind::TimeChange);
        assert!(matches!(s.scenario.start, StartSpec::Point(p) if p == Vector::ZERO));
    }

    #[test]
    fn parse_error_has_position() {
        let err = ScenarioFile::parse("[domain]\nshape = \"disk\"\n\n[run]\ndt = = 3\n").unwrap_err();
        match err {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 5);
                assert!(column >= 5, "column {column}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        let err = ScenarioFile::parse("[domain]\nshape = \"disk\"\ncolour = 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn tangential_diffusion_needs_two_dimensions() {
        let err = parse_scenario("[domain]\nshape = \"interval\"\n[process]\ndelta = 1\nstart = [0.5]\n").unwrap_err();
        assert!(err.to_string().contains("d ≥ 2"), "{err}");
        parse_scenario("[domain]\nshape = \"interval\"\n[process]\ndelta = 0\nstart = [0.5]\n").unwrap();
    }

    #[test]
    fn zero_beta_is_rejected() {
        let err = parse_scenario("[domain]\nshape = \"disk\"\n[densities]\nbeta = \"0\"\n").unwrap_err();
        assert!(err.to_string().contains("β > 0 σ-a.e."), "{err}");
    }

    #[test]
    fn expression_domain_and_zero_set() {
        let text = r#"
[domain]
level = "x^2 + y^2 - 1"
dim = 2
bbox_lo = [-1, -1]
bbox_hi = [1, 1]
star_center = [0, 0]

[densities]
alpha = "x^2"
alpha_max = 1.0
zero_set = [{ kind = "hyperplane", normal = [2, 0], offset = 0 }]

[process]
start = [0.5, 0.0]
"#;
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.scenario.zero_set.len(), 1);
        assert!(matches!(s.scenario.zero_set[0], ZeroSetPart::Hyperplane { .. }));
        let bad = text.replace("normal = [2, 0]", "normal = [0, 0]");
        assert!(parse_scenario(&bad).is_err());
    }

    #[test]
    fn overrides_and_round_trip() {
        let mut f = ScenarioFile::parse("name = \"d\"\n[domain]\nshape = \"disk\"\n[process]\nstart = \"invariant\"\n").unwrap();
        f.apply(&Overrides {
            paths: Some(7),
            seed: Some(3),
            scheme: Some(SchemeKind::DirectSticky),
            ..Default::default()
        });
        let back = ScenarioFile::parse(&f.to_toml()).unwrap();
        assert_eq!(back, f);
        let s = back.build().unwrap();
        assert_eq!(s.scenario.n_paths, 7);
        assert_eq!(s.scenario.seed, 3);
        assert!(matches!(s.scenario.start, StartSpec::Invariant(_)));
    }

    #[test]
    fn start_outside_is_rejected() {
        assert!(parse_scenario("[domain]\nshape = \"disk\"\n[process]\nstart = [2.0, 0.0]\n").is_err());
        assert!(parse_scenario("[domain]\nshape = \"disk\"\n[process]\nstart = [0.0]\n").is_err());
    }
}
