//! Time averages over trajectories, Monte Carlo residual checks and their
//! verdicts.
//!
//! Boundary time is read from the scheme's flags, never from a distance
//! test. Standard errors of time averages come from batch means; pooled
//! ensemble estimates average the per-path estimates.

use serde::{Deserialize, Serialize};

use crate::generator::{wentzell_residual, CoefficientField, Region, TestFunction};
use crate::linalg::Vector;
use crate::measures::ReferenceMeasure;
use crate::schemes::{run_ensemble, PathObserver, PathStats, Scenario, StepRecord, Trajectory};
use crate::stats::{batch_means, mean_se};
use crate::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 4.0;
pub const DEFAULT_BATCHES: usize = 50;
pub const DEFAULT_BURN_IN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// No target to judge against.
    Info,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub value: f64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableReport {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub n_effective: f64,
    pub target: Option<Target>,
    pub sigma: f64,
    /// Absolute tolerance added to `sigma·std_error` when judging.
    pub tolerance: f64,
    pub verdict: Verdict,
}

impl ObservableReport {
    pub fn new(name: impl Into<String>, estimate: f64, std_error: f64, n_effective: f64) -> Self {
        ObservableReport {
            name: name.into(),
            estimate,
            std_error,
            n_effective,
            target: None,
            sigma: DEFAULT_SIGMA,
            tolerance: 0.0,
            verdict: Verdict::Info,
        }
    }

    /// Judges `|estimate − target| ≤ sigma·std_error + tolerance`.
    pub fn with_target(mut self, value: f64, note: impl Into<String>, sigma: f64) -> Self {
        self.target = Some(Target { value, note: note.into() });
        self.sigma = sigma;
        self.judge();
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self.judge();
        self
    }

    fn judge(&mut self) {
        if let Some(t) = &self.target {
            let ok = (self.estimate - t.value).abs() <= self.sigma * self.std_error + self.tolerance;
            self.verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }

    /// A report judged by an explicit predicate instead of a target.
    pub fn judged(mut self, ok: bool) -> Self {
        self.verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        self
    }
}

/// `[t₀, t₁]` in physical time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Self {
        Window { start, end }
    }

    /// Default burn-in of 5% of the horizon.
    pub fn after_burn_in(horizon: f64) -> Self {
        Window::new(DEFAULT_BURN_IN * horizon, horizon)
    }
}

fn window_values<T>(traj: &Trajectory, window: Window, f: impl Fn(usize) -> T) -> Result<Vec<T>> {
    if !(window.end > window.start) {
        return Err(Error::WindowTooShort(format!("empty window [{}, {}]", window.start, window.end)));
    }
    let last = traj.times.last().copied().unwrap_or(0.0);
    if window.end > last + 1e-9 * last.max(1.0) {
        return Err(Error::WindowTooShort(format!(
            "window ends at {} past the horizon {last}",
            window.end
        )));
    }
    Ok(traj
        .times
        .iter()
        .enumerate()
        .filter(|(_, t)| **t >= window.start && **t <= window.end)
        .map(|(i, _)| f(i))
        .collect())
}

/// Fraction of recorded samples in the window that are on `Γ`.
pub fn occupation_fraction(traj: &Trajectory, window: Window) -> Result<ObservableReport> {
    let xs = window_values(traj, window, |i| if traj.on_boundary[i] { 1.0 } else { 0.0 })?;
    let bm = batch_means(&xs, DEFAULT_BATCHES)?;
    Ok(ObservableReport::new("occupation_fraction", bm.mean, bm.std_error, bm.n_effective))
}

/// Time average of `f` over the window.
pub fn ergodic_average(traj: &Trajectory, f: &TestFunction, window: Window) -> Result<ObservableReport> {
    let xs = window_values(traj, window, |i| f.value(&traj.states[i]))?;
    let bm = batch_means(&xs, DEFAULT_BATCHES)?;
    Ok(ObservableReport::new(
        format!("ergodic_average[{}]", f.label),
        bm.mean,
        bm.std_error,
        bm.n_effective,
    ))
}

/// Mean of per-path estimates with `SE = √(Σ se²)/n`.
pub fn pool(name: impl Into<String>, reports: &[ObservableReport]) -> ObservableReport {
    let n = reports.len() as f64;
    let estimate = reports.iter().map(|r| r.estimate).sum::<f64>() / n;
    let se = reports.iter().map(|r| r.std_error.powi(2)).sum::<f64>().sqrt() / n;
    let n_eff = reports.iter().map(|r| r.n_effective).sum();
    ObservableReport::new(name, estimate, se, n_eff)
}

pub fn pooled_occupation(trajs: &[Trajectory], window: Window) -> Result<ObservableReport> {
    let per: Vec<ObservableReport> = trajs.iter().map(|t| occupation_fraction(t, window)).collect::<Result<_>>()?;
    Ok(pool("occupation_fraction", &per))
}

pub fn pooled_ergodic_average(trajs: &[Trajectory], f: &TestFunction, window: Window) -> Result<ObservableReport> {
    let per: Vec<ObservableReport> = trajs.iter().map(|t| ergodic_average(t, f, window)).collect::<Result<_>>()?;
    Ok(pool(format!("ergodic_average[{}]", f.label), &per))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StickinessReport {
    pub occupation: ObservableReport,
    pub lower_bound: f64,
    pub threshold: f64,
    /// Longest run of consecutive boundary samples, in time units.
    pub max_sojourn: f64,
    pub sticky: bool,
}

/// Sticky iff the lower confidence bound of the pooled occupation fraction
/// exceeds `threshold`.
pub fn stickiness_verdict(trajs: &[Trajectory], window: Window, threshold: f64, sigma: f64) -> Result<StickinessReport> {
    let mut occupation = pooled_occupation(trajs, window)?;
    occupation.name = "stickiness".into();
    occupation.sigma = sigma;
    let lower_bound = occupation.estimate - sigma * occupation.std_error;
    let mut max_sojourn: f64 = 0.0;
    for t in trajs {
        let mut run_start: Option<f64> = None;
        for (i, &b) in t.on_boundary.iter().enumerate() {
            match (b, run_start) {
                (true, None) => run_start = Some(t.times[i]),
                (false, Some(s)) => {
                    max_sojourn = max_sojourn.max(t.times[i] - s);
                    run_start = None;
                }
                _ => {}
            }
        }
        if let (Some(s), Some(end)) = (run_start, t.times.last()) {
            max_sojourn = max_sojourn.max(end - s);
        }
    }
    let sticky = lower_bound > threshold;
    occupation.verdict = if sticky { Verdict::Pass } else { Verdict::Fail };
    Ok(StickinessReport {
        occupation,
        lower_bound,
        threshold,
        max_sojourn,
        sticky,
    })
}

/// Accumulates `f(X_h) − f(X_0) − ∫₀ʰ Lf(X_s) ds` along one path for each
/// function of a bank.
struct MartingaleObserver<'a> {
    fs: &'a [TestFunction],
    coeff: CoefficientField<'a>,
    h: f64,
    started: bool,
    finished: bool,
    increments: Vec<f64>,
    error: Option<Error>,
}

impl PathObserver for MartingaleObserver<'_> {
    fn record(&mut self, step: &StepRecord<'_>) {
        let mut t = step.t;
        for s in step.segments {
            if !self.started {
                self.started = true;
                for (acc, f) in self.increments.iter_mut().zip(self.fs) {
                    *acc -= f.value(&s.state);
                }
            }
            if t > self.h || self.finished || self.error.is_some() {
                return;
            }
            let covered = (self.h.min(t + s.duration) - t).max(0.0);
            if covered > 0.0 {
                let region = if s.on_boundary { Region::Boundary } else { Region::Interior };
                for (acc, f) in self.increments.iter_mut().zip(self.fs) {
                    match self.coeff.apply(&f.jet(&s.state), &s.state, region) {
                        Ok(lf) => *acc -= lf * covered,
                        Err(e) => {
                            self.error = Some(e);
                            return;
                        }
                    }
                }
            }
            if self.h >= t && self.h < t + s.duration {
                self.finished = true;
                for (acc, f) in self.increments.iter_mut().zip(self.fs) {
                    *acc += f.value(&s.state);
                }
            }
            t += s.duration;
        }
    }
}

/// Ensemble means of the martingale increments over `[0, h]`, one report
/// per function, all from the same paths. Target 0.
pub fn martingale_residuals(scn: &Scenario, fs: &[TestFunction], h: f64) -> Result<Vec<ObservableReport>> {
    let mut s = scn.clone();
    s.horizon = h;
    s.dt_out = h;
    let coeff = CoefficientField {
        geom: &s.geom,
        pair: &s.pair,
        delta: s.delta,
    };
    let runs = run_ensemble(&s, |_| MartingaleObserver {
        fs,
        coeff,
        h,
        started: false,
        finished: false,
        increments: vec![0.0; fs.len()],
        error: None,
    })?;
    let mut columns = vec![Vec::with_capacity(runs.len()); fs.len()];
    for (o, _) in runs {
        if let Some(e) = o.error {
            return Err(e);
        }
        assert!(o.finished, "horizon reached");
        for (col, x) in columns.iter_mut().zip(o.increments) {
            col.push(x);
        }
    }
    Ok(fs
        .iter()
        .zip(columns)
        .map(|(f, xs)| {
            let (m, se) = mean_se(&xs);
            ObservableReport::new(format!("martingale_residual[{}]", f.label), m, se, xs.len() as f64).with_target(
                0.0,
                "martingale",
                DEFAULT_SIGMA,
            )
        })
        .collect())
}

pub fn martingale_residual(scn: &Scenario, f: &TestFunction, h: f64) -> Result<ObservableReport> {
    Ok(martingale_residuals(scn, std::slice::from_ref(f), h)?.remove(0))
}

/// Keeps the start and the state at the horizon.
#[derive(Clone, Copy, Debug)]
pub struct Endpoints {
    pub horizon: f64,
    pub start: Option<Vector>,
    pub end: Option<Vector>,
}

impl PathObserver for Endpoints {
    fn record(&mut self, step: &StepRecord<'_>) {
        let mut t = step.t;
        for s in step.segments {
            if self.start.is_none() {
                self.start = Some(s.state);
            }
            if self.end.is_none() && self.horizon >= t && self.horizon < t + s.duration {
                self.end = Some(s.state);
            }
            t += s.duration;
        }
    }
}

pub fn endpoints(scn: &Scenario) -> Result<Vec<(Vector, Vector)>> {
    Ok(run_ensemble(scn, |_| Endpoints {
        horizon: scn.horizon,
        start: None,
        end: None,
    })?
    .into_iter()
    .map(|(o, _)| (o.start.expect("path started"), o.end.expect("horizon reached")))
    .collect())
}

/// States and boundary flags at a list of increasing times.
#[derive(Clone, Debug)]
pub struct Snapshots {
    times: Vec<f64>,
    next: usize,
    pub values: Vec<(Vector, bool)>,
}

impl Snapshots {
    pub fn new(times: Vec<f64>) -> Self {
        Snapshots {
            values: Vec::with_capacity(times.len()),
            times,
            next: 0,
        }
    }
}

impl PathObserver for Snapshots {
    fn record(&mut self, step: &StepRecord<'_>) {
        let mut t = step.t;
        for s in step.segments {
            while self.next < self.times.len() && self.times[self.next] >= t && self.times[self.next] < t + s.duration {
                self.values.push((s.state, s.on_boundary));
                self.next += 1;
            }
            t += s.duration;
        }
    }
}

/// Per path, the state and boundary flag at each requested time.
pub type SnapshotTable = Vec<Vec<(Vector, bool)>>;

/// Per path, the state at each of `times`; the horizon is raised to the
/// last time.
pub fn snapshots(scn: &Scenario, times: &[f64]) -> Result<(SnapshotTable, Vec<PathStats>)> {
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] < 0.0 {
        return Err(Error::Validation("snapshot times must be increasing and non-negative".into()));
    }
    let mut s = scn.clone();
    s.horizon = *times.last().expect("nonempty");
    s.dt_out = s.horizon;
    let runs = run_ensemble(&s, |_| Snapshots::new(times.to_vec()))?;
    let mut values = Vec::with_capacity(runs.len());
    let mut stats = Vec::with_capacity(runs.len());
    for (o, st) in runs {
        assert_eq!(o.values.len(), times.len(), "all snapshot times reached");
        values.push(o.values);
        stats.push(st);
    }
    Ok((values, stats))
}

/// `E f(X_T)` under `μ`-distributed starts against `∫f dμ/μ(Ω̄)`.
pub fn invariance_report(ends: &[(Vector, Vector)], f: &TestFunction, measure: &ReferenceMeasure) -> ObservableReport {
    let xs: Vec<f64> = ends.iter().map(|(_, e)| f.value(e)).collect();
    let (m, se) = mean_se(&xs);
    ObservableReport::new(format!("invariance[{}]", f.label), m, se, xs.len() as f64).with_target(
        measure.average(|x| f.value(x)),
        "quadrature ∫f dμ/μ(Ω̄)",
        DEFAULT_SIGMA,
    )
}

/// `E[g(X_0)f(X_T) − f(X_0)g(X_T)]` under `μ`-distributed starts, target 0.
pub fn symmetry_report(ends: &[(Vector, Vector)], f: &TestFunction, g: &TestFunction) -> ObservableReport {
    let xs: Vec<f64> = ends
        .iter()
        .map(|(s, e)| g.value(s) * f.value(e) - f.value(s) * g.value(e))
        .collect();
    let (m, se) = mean_se(&xs);
    ObservableReport::new(format!("symmetry[{},{}]", f.label, g.label), m, se, xs.len() as f64).with_target(
        0.0,
        "μ-symmetry",
        DEFAULT_SIGMA,
    )
}

/// Options for [`residual_suite`].
#[derive(Clone, Debug)]
pub struct SuiteOptions {
    /// Martingale window.
    pub h: f64,
    /// Horizon for the invariance and symmetry runs.
    pub horizon: f64,
    pub paths: usize,
    pub symmetry_pairs: Vec<(usize, usize)>,
}

/// Martingale residuals for the bank (fixed start of `scn`), invariance and
/// symmetry with `μ`-distributed starts, and Wentzell residuals of
/// constants at boundary points.
pub fn residual_suite(
    scn: &Scenario,
    bank: &[TestFunction],
    measure: &std::sync::Arc<ReferenceMeasure>,
    opts: &SuiteOptions,
) -> Result<Vec<ObservableReport>> {
    let mut out = Vec::new();
    let mut fixed = scn.clone();
    fixed.n_paths = opts.paths;
    out.extend(martingale_residuals(&fixed, bank, opts.h)?);
    let mut stationary = scn.clone();
    stationary.start = crate::schemes::StartSpec::Invariant(measure.clone());
    stationary.horizon = opts.horizon;
    stationary.dt_out = opts.horizon;
    stationary.n_paths = opts.paths;
    let ends = endpoints(&stationary)?;
    for f in bank {
        out.push(invariance_report(&ends, f, measure));
    }
    for &(i, j) in &opts.symmetry_pairs {
        out.push(symmetry_report(&ends, &bank[i], &bank[j]));
    }
    let one = TestFunction::parse("1")?;
    let mut worst: f64 = 0.0;
    for node in measure.rule.surface.iter().step_by((measure.rule.surface.len() / 16).max(1)) {
        worst = worst.max(wentzell_residual(&one, &scn.pair, &scn.geom, &node.point, scn.delta)?.abs());
    }
    out.push(ObservableReport::new("wentzell_residual[1]", worst, 0.0, 0.0).with_target(0.0, "constants are stationary", DEFAULT_SIGMA));
    Ok(out)
}
