//! Path integrators.
//!
//! * Time change: the distorted Brownian motion reflected at `Γ` by a
//!   mirror step, with its boundary local time `ℓ` (Skorokhod push). The
//!   sticky path is its time change by `A = t + ∫ 2(β/α) dℓ`: every
//!   reflection opens a stuck interval of physical length `2(β/α)·push`
//!   spent at the contact point, during which the boundary diffusion acts
//!   when δ = 1. The factor 2/α converts the push into the local time
//!   that is Revuz-dual to `σ` for the measure `αλ`.
//! * Direct sticky: Euler inside; after a crossing the path sits on `Γ`
//!   and leaves after an exponential clock of rate `(α/β)/h`, with
//!   `h = √(2π dt)` matching the mean stuck time per reflection above.
//! * Surface only: Brownian motion on `Γ`, `dX = P dB − ½κn dt`,
//!   projected back after every step.
//!
//! Schemes emit constant-state segments of physical time to a
//! [`PathObserver`]; [`Recorder`] turns them into a [`Trajectory`] on a
//! uniform output grid.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::DomainGeometry;
use crate::linalg::Vector;
use crate::measures::{zero_set_distance, DensityPair, ReferenceMeasure, ZeroSetPart};
use crate::rng::{gaussian_vector, RngStream};
use crate::{Error, Result};

/// Halvings allowed for a single step before the path is aborted.
pub const MAX_HALVINGS: u32 = 10;

/// Cap on boundary sub-steps inside one stuck interval.
pub const MAX_STUCK_SUBSTEPS: usize = 4096;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    #[default]
    TimeChange,
    DirectSticky,
    SurfaceOnly,
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time_change" => Ok(SchemeKind::TimeChange),
            "direct_sticky" => Ok(SchemeKind::DirectSticky),
            "surface_only" => Ok(SchemeKind::SurfaceOnly),
            _ => Err(Error::Validation(format!("unknown scheme `{s}`"))),
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchemeKind::TimeChange => "time_change",
            SchemeKind::DirectSticky => "direct_sticky",
            SchemeKind::SurfaceOnly => "surface_only",
        })
    }
}

#[derive(Clone, Debug)]
pub enum StartSpec {
    Point(Vector),
    /// A fresh draw from `μ/μ(Ω̄)` per path.
    Invariant(Arc<ReferenceMeasure>),
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub geom: DomainGeometry,
    pub pair: DensityPair,
    pub delta: u8,
    pub start: StartSpec,
    pub scheme: SchemeKind,
    pub dt: f64,
    pub horizon: f64,
    /// Spacing of the recorded physical-time grid.
    pub dt_out: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub zero_set: Vec<ZeroSetPart>,
    /// Internal time allowed, as a multiple of the horizon.
    pub budget_factor: f64,
}

impl Scenario {
    pub fn new(name: impl Into<String>, geom: DomainGeometry, pair: DensityPair, delta: u8, start: Vector) -> Self {
        Scenario {
            name: name.into(),
            geom,
            pair,
            delta,
            start: StartSpec::Point(start),
            scheme: SchemeKind::TimeChange,
            dt: 1e-3,
            horizon: 1.0,
            dt_out: 1e-2,
            n_paths: 1,
            seed: 0,
            zero_set: Vec::new(),
            budget_factor: 1000.0,
        }
    }

    /// Structural checks that do not need quadrature.
    pub fn validate(&self) -> Result<()> {
        if self.delta > 1 {
            return Err(Error::Validation(format!("delta must be 0 or 1, got {}", self.delta)));
        }
        if self.delta == 1 && self.geom.dim < 2 {
            return Err(Error::Validation(
                "delta = 1 requires dimension d ≥ 2 (tangential diffusion needs a boundary of positive dimension)".into(),
            ));
        }
        if self.scheme == SchemeKind::SurfaceOnly && self.geom.dim < 2 {
            return Err(Error::Validation("surface_only requires dimension d ≥ 2".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Validation(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt) {
            return Err(Error::Validation(format!(
                "horizon {} is shorter than dt {}",
                self.horizon, self.dt
            )));
        }
        if !(self.dt_out > 0.0) {
            return Err(Error::Validation(format!("dt_out must be positive, got {}", self.dt_out)));
        }
        if self.n_paths == 0 {
            return Err(Error::Validation("n_paths must be at least 1".into()));
        }
        if let StartSpec::Point(x) = &self.start {
            self.check_start(x)?;
        }
        Ok(())
    }

    /// `ϱ(start) > 0`: inside `Ω̄`, off the declared zero set and with a
    /// positive density where it sits.
    pub fn check_start(&self, x: &Vector) -> Result<()> {
        let level = self.geom.level_value(x);
        if level > self.geom.tol.on_boundary {
            return Err(Error::Validation(format!(
                "start {:?} lies outside the domain",
                x.as_slice(self.geom.dim)
            )));
        }
        if zero_set_distance(&self.zero_set, x) == 0.0 {
            return Err(Error::Validation(format!(
                "start {:?} lies in {{ϱ = 0}}",
                x.as_slice(self.geom.dim)
            )));
        }
        let on_boundary = self.geom.is_on_boundary(x);
        if self.scheme == SchemeKind::SurfaceOnly && !on_boundary {
            return Err(Error::Validation("surface_only needs a start on the boundary".into()));
        }
        let density = if on_boundary { self.pair.beta(x) } else { self.pair.alpha(x) };
        if !(density > 0.0) {
            return Err(Error::Validation(format!(
                "start {:?} has vanishing density (ϱ(start) = 0)",
                x.as_slice(self.geom.dim)
            )));
        }
        Ok(())
    }

    pub fn stream(&self, path: u64) -> RngStream {
        RngStream::new(self.seed, path)
    }

    fn start_point(&self, rng: &mut ChaCha8Rng) -> Result<Vector> {
        match &self.start {
            StartSpec::Point(x) => Ok(*x),
            StartSpec::Invariant(m) => Ok(m.sample_invariant(rng, 1)?[0].point),
        }
    }
}

/// A constant-state piece of the physical-time path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub state: Vector,
    pub on_boundary: bool,
    pub duration: f64,
}

/// One internal step as seen in physical time.
#[derive(Clone, Copy, Debug)]
pub struct StepRecord<'a> {
    /// Physical time at the start of the step.
    pub t: f64,
    /// Internal (reflected-process) time at the start and its increment.
    pub internal: f64,
    pub internal_dt: f64,
    pub segments: &'a [Segment],
    /// Local-time increment of the step (Skorokhod units).
    pub push: f64,
}

pub trait PathObserver {
    fn record(&mut self, step: &StepRecord<'_>);
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    pub steps: u64,
    pub halvings: u64,
    pub internal_time: f64,
    /// Largest `F(state)` seen; at most `ε_Γ`.
    pub max_level: f64,
}

/// Result of [`reflected_step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reflection {
    pub state: Vector,
    /// Local-time increment `dL` (zero without contact).
    pub push: f64,
    pub contact: Option<Vector>,
}

/// Euler step of `dX = dB + ½∇ln α dt`.
#[inline]
pub fn step_interior(state: &Vector, pair: &DensityPair, dt: f64, noise: &Vector) -> Result<Vector> {
    Ok(*state + *noise * dt.sqrt() + interior_drift(state, pair)? * dt)
}

#[inline]
fn interior_drift(x: &Vector, pair: &DensityPair) -> Result<Vector> {
    if pair.alpha_is_constant() {
        return Ok(Vector::ZERO);
    }
    if !(pair.alpha(x) > 0.0) {
        return Err(Error::ZeroAlpha(*x));
    }
    Ok(pair.grad_log_alpha(x) * 0.5)
}

/// Mirror step of the reflected process: an Euler proposal `y`; if it
/// leaves `Ω̄`, `c = proj(y)` and the state becomes `2c − y` with push
/// `2|y − c|`.
pub fn reflected_step(state: &Vector, pair: &DensityPair, geom: &DomainGeometry, dt: f64, noise: &Vector) -> Result<Reflection> {
    reflect_increment(state, pair, geom, dt, &(*noise * dt.sqrt()))
}

#[inline]
fn reflect_increment(x: &Vector, pair: &DensityPair, geom: &DomainGeometry, dt: f64, dw: &Vector) -> Result<Reflection> {
    let y = *x + *dw + interior_drift(x, pair)? * dt;
    if geom.level_value(&y) <= 0.0 {
        return Ok(Reflection {
            state: y,
            push: 0.0,
            contact: None,
        });
    }
    let c = geom.project_to_boundary(&y)?;
    let mirrored = c * 2.0 - y;
    if geom.level_value(&mirrored) > geom.tol.on_boundary {
        return Err(Error::ProjectionDiverged(y));
    }
    Ok(Reflection {
        state: mirrored,
        push: 2.0 * (y - c).norm(),
        contact: Some(c),
    })
}

fn side_changed(zero_set: &[ZeroSetPart], a: &Vector, b: &Vector) -> bool {
    zero_set
        .iter()
        .any(|z| matches!((z.side(a), z.side(b)), (Some(s), Some(t)) if s * t <= 0.0))
}

struct Engine<'a, O: PathObserver> {
    scn: &'a Scenario,
    rng: ChaCha8Rng,
    obs: &'a mut O,
    t: f64,
    internal: f64,
    stats: PathStats,
    segs: Vec<Segment>,
}

impl<O: PathObserver> Engine<'_, O> {
    fn emit(&mut self, internal_dt: f64, push: f64) {
        let record = StepRecord {
            t: self.t,
            internal: self.internal,
            internal_dt,
            segments: &self.segs,
            push,
        };
        self.obs.record(&record);
        for s in &self.segs {
            self.t += s.duration;
            let level = self.scn.geom.level_value(&s.state);
            if level > self.stats.max_level {
                self.stats.max_level = level;
            }
        }
        self.internal += internal_dt;
        self.stats.steps += 1;
        self.segs.clear();
    }

    fn check_budget(&self) -> Result<()> {
        if self.internal > self.scn.budget_factor * self.scn.horizon {
            return Err(Error::HorizonNotReached(self.scn.horizon));
        }
        Ok(())
    }

    /// Splits `dw` over two halves with a Brownian-bridge midpoint.
    fn bridge_split(&mut self, dt: f64, dw: &Vector) -> (Vector, Vector) {
        let dim = self.scn.geom.dim;
        let w1 = *dw * 0.5 + gaussian_vector(&mut self.rng, dim) * (0.25 * dt).sqrt();
        (w1, *dw - w1)
    }

    // Time change.

    fn time_change_step(&mut self, x: Vector, dt: f64, dw: Vector, depth: u32) -> Result<Vector> {
        let scn = self.scn;
        let attempt = reflect_increment(&x, &scn.pair, &scn.geom, dt, &dw).and_then(|r| {
            if side_changed(&scn.zero_set, &x, &r.state) {
                Err(Error::Validation("step crosses a declared zero set".into()))
            } else {
                Ok(r)
            }
        });
        match attempt {
            Ok(r) => self.finish_time_change_step(x, dt, r),
            Err(e @ (Error::ProjectionDiverged(_) | Error::Validation(_))) => {
                if depth >= MAX_HALVINGS {
                    return Err(e);
                }
                self.stats.halvings += 1;
                let (w1, w2) = self.bridge_split(dt, &dw);
                let mid = self.time_change_step(x, 0.5 * dt, w1, depth + 1)?;
                self.time_change_step(mid, 0.5 * dt, w2, depth + 1)
            }
            Err(e) => Err(e),
        }
    }

    fn finish_time_change_step(&mut self, x: Vector, dt: f64, r: Reflection) -> Result<Vector> {
        let scn = self.scn;
        self.segs.push(Segment {
            state: x,
            on_boundary: false,
            duration: dt,
        });
        let Some(c) = r.contact else {
            self.emit(dt, 0.0);
            return Ok(r.state);
        };
        let alpha = scn.pair.alpha(&c);
        if !(alpha > 0.0) {
            return Err(Error::ZeroAlpha(c));
        }
        let beta = scn.pair.beta(&c);
        let stuck = 2.0 * beta / alpha * r.push;
        if scn.delta == 0 || stuck == 0.0 {
            self.segs.push(Segment {
                state: c,
                on_boundary: true,
                duration: stuck,
            });
            self.emit(dt, r.push);
            return Ok(r.state);
        }
        // Boundary diffusion over the stuck interval in sub-steps no longer
        // than dt, so samples taken mid-interval see the tangential motion.
        let n_sub = ((stuck / scn.dt).ceil() as usize).clamp(1, MAX_STUCK_SUBSTEPS);
        let ds = stuck / n_sub as f64;
        let mut cur = c;
        for _ in 0..n_sub {
            self.segs.push(Segment {
                state: cur,
                on_boundary: true,
                duration: ds,
            });
            let next = self.boundary_move(&cur, ds)?;
            if !side_changed(&scn.zero_set, &cur, &next) {
                cur = next;
            }
        }
        self.emit(dt, r.push);
        // Back to the reflected state's depth.
        let inside = cur - scn.geom.normal_field(&cur) * (0.5 * r.push);
        if scn.geom.level_value(&inside) > 0.0 || side_changed(&scn.zero_set, &c, &cur) {
            return Ok(r.state);
        }
        Ok(inside)
    }

    /// One Euler step of `dX = P dB + ½(P∇ln β − κn) ds` on `Γ`, projected.
    fn boundary_move(&mut self, c: &Vector, s: f64) -> Result<Vector> {
        let geom = &self.scn.geom;
        let (n, p, kappa) = geom.local_frame(c);
        let xi = gaussian_vector(&mut self.rng, geom.dim);
        let mut drift = n * (-kappa);
        if !self.scn.pair.beta_is_constant() {
            drift += p.mul_vec(&self.scn.pair.grad_log_beta(c));
        }
        geom.project_to_boundary(&(*c + p.mul_vec(&xi) * s.sqrt() + drift * (0.5 * s)))
    }

    fn run_time_change(&mut self, start: Vector) -> Result<()> {
        let dim = self.scn.geom.dim;
        let dt = self.scn.dt;
        let sq = dt.sqrt();
        let mut x = start;
        while self.t <= self.scn.horizon {
            self.check_budget()?;
            let dw = gaussian_vector(&mut self.rng, dim) * sq;
            x = self.time_change_step(x, dt, dw, 0)?;
        }
        Ok(())
    }

    // Direct sticky.

    fn run_direct(&mut self, start: Vector) -> Result<()> {
        let scn = self.scn;
        let geom = &scn.geom;
        let dim = geom.dim;
        let dt = scn.dt;
        let sq = dt.sqrt();
        let h_stick = (2.0 * std::f64::consts::PI * dt).sqrt();
        let mut x = start;
        let mut on_boundary = geom.is_on_boundary(&x);
        if on_boundary {
            x = geom.project_to_boundary(&x)?;
        }
        while self.t <= scn.horizon {
            self.check_budget()?;
            if on_boundary {
                let alpha = scn.pair.alpha(&x);
                let beta = scn.pair.beta(&x);
                if !(beta > 0.0) {
                    return Err(Error::ZeroBeta(x));
                }
                self.segs.push(Segment {
                    state: x,
                    on_boundary: true,
                    duration: dt,
                });
                self.emit(dt, alpha * dt / (2.0 * beta));
                if scn.delta == 1 {
                    let moved = self.boundary_move(&x, dt)?;
                    if !side_changed(&scn.zero_set, &x, &moved) {
                        x = moved;
                    }
                }
                let rate = scn.pair.alpha(&x) / scn.pair.beta(&x) / h_stick;
                if self.rng.random::<f64>() < -(-rate * dt).exp_m1() {
                    let u: f64 = self.rng.random();
                    let v: f64 = 1.0 - self.rng.random::<f64>();
                    let depth = u * (-2.0 * dt * v.ln()).sqrt();
                    let inside = x - geom.normal_field(&x) * depth;
                    if geom.level_value(&inside) <= 0.0 {
                        x = inside;
                        on_boundary = false;
                    }
                }
            } else {
                let dw = gaussian_vector(&mut self.rng, dim) * sq;
                let (next, hit) = self.direct_interior_step(x, dt, dw, 0)?;
                x = next;
                on_boundary = hit;
            }
        }
        Ok(())
    }

    /// Interior Euler step; a crossing ends on `Γ` at the projection.
    fn direct_interior_step(&mut self, x: Vector, dt: f64, dw: Vector, depth: u32) -> Result<(Vector, bool)> {
        let scn = self.scn;
        let attempt = (|| -> Result<(Vector, bool)> {
            let y = x + dw + interior_drift(&x, &scn.pair)? * dt;
            let (next, hit) = if scn.geom.level_value(&y) <= 0.0 {
                (y, false)
            } else {
                (scn.geom.project_to_boundary(&y)?, true)
            };
            if side_changed(&scn.zero_set, &x, &next) {
                return Err(Error::Validation("step crosses a declared zero set".into()));
            }
            Ok((next, hit))
        })();
        match attempt {
            Ok(out) => {
                self.segs.push(Segment {
                    state: x,
                    on_boundary: false,
                    duration: dt,
                });
                self.emit(dt, 0.0);
                Ok(out)
            }
            Err(e @ (Error::ProjectionDiverged(_) | Error::Validation(_))) => {
                if depth >= MAX_HALVINGS {
                    return Err(e);
                }
                self.stats.halvings += 1;
                let (w1, w2) = self.bridge_split(dt, &dw);
                let (mid, hit) = self.direct_interior_step(x, 0.5 * dt, w1, depth + 1)?;
                if hit {
                    // The remaining half is spent on Γ by the boundary mode.
                    return Ok((mid, true));
                }
                self.direct_interior_step(mid, 0.5 * dt, w2, depth + 1)
            }
            Err(e) => Err(e),
        }
    }

    // Surface only.

    fn run_surface(&mut self, start: Vector) -> Result<()> {
        let dt = self.scn.dt;
        let mut x = self.scn.geom.project_to_boundary(&start)?;
        while self.t <= self.scn.horizon {
            self.segs.push(Segment {
                state: x,
                on_boundary: true,
                duration: dt,
            });
            self.emit(dt, 0.0);
            x = surface_step(&self.scn.geom, &x, dt, &gaussian_vector(&mut self.rng, self.scn.geom.dim), true)?;
        }
        Ok(())
    }
}

/// One step of `dX = P dB − ½κn dt` on `Γ`; with `project` the result is
/// pulled back onto `Γ`.
pub fn surface_step(geom: &DomainGeometry, x: &Vector, dt: f64, noise: &Vector, project: bool) -> Result<Vector> {
    let (n, p, kappa) = geom.local_frame(x);
    let y = *x + p.mul_vec(noise) * dt.sqrt() - n * (0.5 * kappa * dt);
    if project {
        geom.project_to_boundary(&y)
    } else {
        Ok(y)
    }
}

/// Runs one path, feeding every step to `obs`.
pub fn run_path<O: PathObserver>(scn: &Scenario, path: u64, obs: &mut O) -> Result<PathStats> {
    let mut rng = scn.stream(path).rng();
    let start = scn.start_point(&mut rng)?;
    let mut engine = Engine {
        scn,
        rng,
        obs,
        t: 0.0,
        internal: 0.0,
        stats: PathStats {
            max_level: f64::NEG_INFINITY,
            ..Default::default()
        },
        segs: Vec::with_capacity(2),
    };
    let outcome = match scn.scheme {
        SchemeKind::TimeChange => engine.run_time_change(start),
        SchemeKind::DirectSticky => engine.run_direct(start),
        SchemeKind::SurfaceOnly => engine.run_surface(start),
    };
    outcome.map_err(|e| match e {
        Error::HorizonNotReached(_) => e,
        other => Error::PathAborted {
            path,
            reason: other.to_string(),
        },
    })?;
    engine.stats.internal_time = engine.internal;
    Ok(engine.stats)
}

/// Runs `n_paths` paths in parallel; results are in path order.
pub fn run_ensemble<O, F>(scn: &Scenario, make: F) -> Result<Vec<(O, PathStats)>>
where
    O: PathObserver + Send,
    F: Fn(u64) -> O + Sync,
{
    scn.validate()?;
    (0..scn.n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut obs = make(path);
            let stats = run_path(scn, path, &mut obs)?;
            Ok((obs, stats))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub path_id: u64,
    pub dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub on_boundary: Vec<bool>,
    /// Cumulative local time; it only moves at boundary samples, so pushes
    /// from stuck intervals shorter than the grid spacing show up at the
    /// next boundary sample.
    pub local_time: Vec<f64>,
    pub clock_map: Option<Vec<f64>>,
    pub stats: PathStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<(Vector, bool)> {
        Some((*self.states.last()?, *self.on_boundary.last()?))
    }
}

/// Samples the path on the grid `j·dt_out`, `0 ≤ j·dt_out ≤ horizon`.
#[derive(Clone, Debug)]
pub struct Recorder {
    dt_out: f64,
    n_samples: usize,
    pushes: f64,
    shown: f64,
    with_clock: bool,
    traj: Trajectory,
}

impl Recorder {
    pub fn new(scn: &Scenario, path: u64) -> Self {
        let n_samples = (scn.horizon / scn.dt_out + 1e-9).floor() as usize + 1;
        let with_clock = scn.scheme == SchemeKind::TimeChange;
        Recorder {
            dt_out: scn.dt_out,
            n_samples,
            pushes: 0.0,
            shown: 0.0,
            with_clock,
            traj: Trajectory {
                path_id: path,
                dim: scn.geom.dim,
                times: Vec::with_capacity(n_samples),
                states: Vec::with_capacity(n_samples),
                on_boundary: Vec::with_capacity(n_samples),
                local_time: Vec::with_capacity(n_samples),
                clock_map: with_clock.then(|| Vec::with_capacity(n_samples)),
                stats: PathStats::default(),
            },
        }
    }

    pub fn finish(mut self, stats: PathStats) -> Trajectory {
        self.traj.stats = stats;
        self.traj
    }
}

impl PathObserver for Recorder {
    fn record(&mut self, step: &StepRecord<'_>) {
        let total: f64 = step.segments.iter().map(|s| s.duration).sum();
        let end = step.t + total;
        let mut seg_start = step.t;
        let mut k = 0;
        self.pushes += step.push;
        loop {
            let j = self.traj.times.len();
            if j >= self.n_samples {
                return;
            }
            let tau = j as f64 * self.dt_out;
            if tau >= end {
                return;
            }
            while k + 1 < step.segments.len() && tau >= seg_start + step.segments[k].duration {
                seg_start += step.segments[k].duration;
                k += 1;
            }
            let seg = &step.segments[k];
            if seg.on_boundary {
                self.shown = self.pushes;
            }
            self.traj.times.push(tau);
            self.traj.states.push(seg.state);
            self.traj.on_boundary.push(seg.on_boundary);
            self.traj.local_time.push(self.shown);
            if let Some(cm) = self.traj.clock_map.as_mut() {
                let frac = if total > 0.0 { (tau - step.t) / total } else { 0.0 };
                cm.push(step.internal + frac * step.internal_dt);
            }
            debug_assert!(self.with_clock == self.traj.clock_map.is_some());
        }
    }
}

/// Simulates all paths and records their trajectories.
pub fn simulate(scn: &Scenario) -> Result<Vec<Trajectory>> {
    Ok(run_ensemble(scn, |path| Recorder::new(scn, path))?
        .into_iter()
        .map(|(rec, stats)| rec.finish(stats))
        .collect())
}

/// Single-path convenience wrappers.
pub fn run_time_change(scn: &Scenario, path: u64) -> Result<Trajectory> {
    run_single(scn, SchemeKind::TimeChange, path)
}

pub fn run_direct_sticky(scn: &Scenario, path: u64) -> Result<Trajectory> {
    run_single(scn, SchemeKind::DirectSticky, path)
}

pub fn run_surface_only(scn: &Scenario, path: u64) -> Result<Trajectory> {
    run_single(scn, SchemeKind::SurfaceOnly, path)
}

fn run_single(scn: &Scenario, scheme: SchemeKind, path: u64) -> Result<Trajectory> {
    let mut scn = scn.clone();
    scn.scheme = scheme;
    scn.validate()?;
    let mut rec = Recorder::new(&scn, path);
    let stats = run_path(&scn, path, &mut rec)?;
    Ok(rec.finish(stats))
}

/// Observer keeping only the state at the horizon.
#[derive(Clone, Copy, Debug)]
pub struct FinalState {
    pub horizon: f64,
    pub state: Option<(Vector, bool)>,
}

impl FinalState {
    pub fn new(horizon: f64) -> Self {
        FinalState { horizon, state: None }
    }
}

impl PathObserver for FinalState {
    fn record(&mut self, step: &StepRecord<'_>) {
        let mut t = step.t;
        for s in step.segments {
            if self.state.is_none() && self.horizon >= t && self.horizon < t + s.duration {
                self.state = Some((s.state, s.on_boundary));
            }
            t += s.duration;
        }
    }
}

/// Final state of every path at the scenario horizon.
pub fn final_states(scn: &Scenario) -> Result<Vec<(Vector, bool)>> {
    Ok(run_ensemble(scn, |_| FinalState::new(scn.horizon))?
        .into_iter()
        .map(|(o, _)| o.state.expect("paths run past the horizon"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_se;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_slice(xs)
    }

    fn disk_scn(scheme: SchemeKind) -> Scenario {
        let mut s = Scenario::new(
            "disk",
            DomainGeometry::zoo("disk").unwrap(),
            DensityPair::constant(1.0, 1.0),
            1,
            v(&[0.0, 0.0]),
        );
        s.scheme = scheme;
        s
    }

    #[test]
    fn interior_step_examples() {
        let ones = DensityPair::constant(1.0, 1.0);
        let x = v(&[0.2, 0.3]);
        assert_eq!(step_interior(&x, &ones, 0.01, &Vector::ZERO).unwrap(), x);
        let gauss = DensityPair::from_specs("exp(-(x^2 + y^2))", "1").unwrap();
        let got = step_interior(&x, &gauss, 0.01, &Vector::ZERO).unwrap();
        assert!((got - (x - x * 0.01)).norm() < 1e-15);
    }

    #[test]
    fn reflected_step_examples() {
        let ones = DensityPair::constant(1.0, 1.0);
        let line = DomainGeometry::zoo("interval(0,100)").unwrap();
        let r = reflected_step(&v(&[0.5]), &ones, &line, 0.01, &v(&[1.0])).unwrap();
        assert_eq!(r.push, 0.0);
        assert!(r.contact.is_none());
        // y = 0.01 − 0.05 = −0.04 → 0.04 with dL = 0.08.
        let noise = v(&[-0.05 / 0.01f64.sqrt()]);
        let r = reflected_step(&v(&[0.01]), &ones, &line, 0.01, &noise).unwrap();
        assert!((r.state[0] - 0.04).abs() < 1e-9 && (r.push - 0.08).abs() < 1e-9);
        let disk = DomainGeometry::zoo("disk").unwrap();
        let r = reflected_step(&v(&[0.95, 0.0]), &ones, &disk, 0.01, &v(&[1.0, 0.5])).unwrap();
        let c = r.contact.unwrap();
        assert!(disk.level_value(&c).abs() <= disk.tol.on_boundary);
        assert!(disk.level_value(&r.state) <= disk.tol.on_boundary);
    }

    #[test]
    fn validation_rules() {
        let mut s = Scenario::new(
            "line",
            DomainGeometry::zoo("interval").unwrap(),
            DensityPair::constant(1.0, 1.0),
            1,
            v(&[0.5]),
        );
        assert!(matches!(s.validate(), Err(Error::Validation(m)) if m.contains("d ≥ 2")));
        s.delta = 0;
        assert!(s.validate().is_ok());
        s.start = StartSpec::Point(v(&[1.5]));
        assert!(s.validate().is_err());
        s.start = StartSpec::Point(v(&[0.5]));
        s.dt = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn trajectories_are_deterministic_and_inside() {
        for scheme in [SchemeKind::TimeChange, SchemeKind::DirectSticky] {
            let mut s = disk_scn(scheme);
            s.horizon = 5.0;
            s.n_paths = 3;
            s.seed = 11;
            let a = simulate(&s).unwrap();
            let b = simulate(&s).unwrap();
            assert_eq!(a, b);
            for t in &a {
                assert_eq!(t.len(), 501);
                assert!(t.stats.max_level <= s.geom.tol.on_boundary);
                for w in t.local_time.windows(2) {
                    assert!(w[1] >= w[0]);
                }
                for i in 1..t.len() {
                    if !t.on_boundary[i] {
                        assert_eq!(t.local_time[i], t.local_time[i - 1]);
                    }
                }
                if let Some(cm) = &t.clock_map {
                    assert!(cm.windows(2).all(|w| w[1] > w[0]));
                }
            }
        }
    }

    #[test]
    fn more_paths_do_not_change_earlier_ones() {
        let mut s = disk_scn(SchemeKind::TimeChange);
        s.horizon = 1.0;
        s.n_paths = 2;
        let a = simulate(&s).unwrap();
        s.n_paths = 4;
        let b = simulate(&s).unwrap();
        assert_eq!(a[..], b[..2]);
    }

    #[test]
    fn tiny_beta_is_the_reflected_process() {
        let mut s = disk_scn(SchemeKind::TimeChange);
        s.pair = DensityPair::constant(1.0, 1e-12);
        s.horizon = 2.0;
        let t = run_time_change(&s, 0).unwrap();
        let cm = t.clock_map.unwrap();
        for (tau, time) in cm.iter().zip(&t.times) {
            assert!((tau - time).abs() < 1e-6);
        }
    }

    #[test]
    fn surface_motion_stays_on_sphere() {
        let mut s = Scenario::new(
            "sphere",
            DomainGeometry::zoo("ball3").unwrap(),
            DensityPair::constant(1.0, 1.0),
            1,
            v(&[0.0, 0.0, 1.0]),
        );
        s.scheme = SchemeKind::SurfaceOnly;
        s.dt = 1e-4;
        s.horizon = 1.0;
        s.dt_out = 1e-3;
        let t = run_surface_only(&s, 0).unwrap();
        assert!(t.on_boundary.iter().all(|b| *b));
        for x in &t.states {
            assert!((x.norm() - 1.0).abs() < 1e-6);
        }
        // Without projection the radius drifts by O(dt) per step.
        let g = &s.geom;
        let x = v(&[0.0, 0.0, 1.0]);
        let y = surface_step(g, &x, 1e-4, &v(&[1.0, 0.0, 0.0]), false).unwrap();
        assert!((y.norm() - 1.0).abs() > 1e-5);
    }

    #[test]
    fn brownian_moment_in_a_huge_box() {
        let mut s = Scenario::new(
            "big",
            DomainGeometry::zoo("disk(1000)").unwrap(),
            DensityPair::constant(1.0, 1.0),
            1,
            v(&[0.0, 0.0]),
        );
        s.horizon = 1.0;
        s.dt = 1e-2;
        s.n_paths = 4000;
        let ends = final_states(&s).unwrap();
        let sq: Vec<f64> = ends.iter().map(|(x, _)| x.norm_squared()).collect();
        let (m, se) = mean_se(&sq);
        assert!((m - 2.0).abs() < 4.0 * se, "{m} ± {se}");
    }

    #[test]
    fn hyperplane_zero_set_is_never_crossed() {
        let geom = DomainGeometry::zoo("ellipse(2,1)").unwrap();
        let pair = DensityPair::from_specs("x^2", "x^2").unwrap().with_bounds(Some(4.0), Some(4.0));
        let mut s = Scenario::new("split", geom, pair, 1, v(&[0.5, 0.0]));
        s.zero_set = vec![ZeroSetPart::Hyperplane {
            normal: vec![1.0, 0.0],
            offset: 0.0,
        }];
        s.horizon = 3.0;
        s.dt = 1e-3;
        s.n_paths = 8;
        for t in simulate(&s).unwrap() {
            assert!(t.states.iter().all(|x| x[0] > 0.0));
        }
    }
}
