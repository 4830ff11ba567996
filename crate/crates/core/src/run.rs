//! Subcommands: each runs one analysis of a loaded scenario, writes
//! `report.csv`, its own tables and `manifest.json`, and returns the
//! verdicts.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::export::{self, RunManifest, StepAccounting, Timing, VerdictRow};
use crate::generator::{compact_split_max_gap, symmetry_check, test_bank, wentzell_residual, CoefficientField, Region, TestFunction};
use crate::geometry::{DomainGeometry, Shape};
use crate::linalg::{Matrix, Vector};
use crate::measures::{Component, ReferenceMeasure};
use crate::observables::{pooled_ergodic_average, pooled_occupation, snapshots, stickiness_verdict, ObservableReport, Verdict, Window};
use crate::oracle::StickyMarginal;
use crate::rng::gaussian_vector;
use crate::scenario::{LoadedScenario, ScenarioFile};
use crate::schemes::{run_ensemble, simulate, surface_step, PathObserver, Scenario, SchemeKind, StartSpec, StepRecord, Trajectory};
use crate::stats::{ks_one_sample, ks_two_sample};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Occupation,
    Ergodic,
    VerifyGeometry,
    VerifyGenerator,
    CompareSchemes,
    SurfaceBm,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Simulate,
        Command::Occupation,
        Command::Ergodic,
        Command::VerifyGeometry,
        Command::VerifyGenerator,
        Command::CompareSchemes,
        Command::SurfaceBm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Occupation => "occupation",
            Command::Ergodic => "ergodic",
            Command::VerifyGeometry => "verify-geometry",
            Command::VerifyGenerator => "verify-generator",
            Command::CompareSchemes => "compare-schemes",
            Command::SurfaceBm => "surface-bm",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown subcommand `{s}`")))
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub reports: Vec<ObservableReport>,
    pub manifest: RunManifest,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(ObservableReport::passed)
    }

    pub fn first_failure(&self) -> Option<&ObservableReport> {
        self.reports.iter().find(|r| !r.passed())
    }
}

/// What a subcommand hands back to the driver.
#[derive(Default)]
struct Produced {
    reports: Vec<ObservableReport>,
    accounting: StepAccounting,
    outputs: Vec<String>,
}

/// Runs `cmd` and writes its outputs into `out`.
pub fn run(cmd: Command, loaded: &mut LoadedScenario, out: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(out)?;
    let clock = Instant::now();
    let mut produced = match cmd {
        Command::Simulate => run_simulate(loaded, out)?,
        Command::Occupation => run_occupation(loaded, out)?,
        Command::Ergodic => run_ergodic(loaded)?,
        Command::VerifyGeometry => run_verify_geometry(loaded, out)?,
        Command::VerifyGenerator => run_verify_generator(loaded)?,
        Command::CompareSchemes => run_compare_schemes(loaded)?,
        Command::SurfaceBm => run_surface_bm(loaded)?,
    };
    export::write_report(&out.join(export::REPORT), &loaded.file, &produced.reports)?;
    produced.outputs.insert(0, export::REPORT.into());

    let mut manifest = RunManifest::new(cmd.name(), &loaded.file);
    manifest.accounting = produced.accounting;
    manifest.verdicts = produced
        .reports
        .iter()
        .map(|r| VerdictRow {
            name: r.name.clone(),
            verdict: r.verdict,
        })
        .collect();
    manifest.outputs = produced.outputs;
    manifest.write(out)?;
    Timing {
        subcommand: cmd.name().into(),
        seconds: clock.elapsed().as_secs_f64(),
        workers: rayon::current_num_threads(),
    }
    .write(out)?;
    Ok(RunOutcome {
        reports: produced.reports,
        manifest,
    })
}

/// Re-runs the subcommand recorded in a manifest.
pub fn replay(manifest: &Path, out: &Path) -> Result<RunOutcome> {
    let m = RunManifest::read(manifest)?;
    let cmd: Command = m.subcommand.parse()?;
    let mut loaded = m.scenario.build()?;
    run(cmd, &mut loaded, out)
}

fn window(file: &ScenarioFile, trajs: &[Trajectory]) -> Window {
    let end = trajs.first().and_then(|t| t.times.last().copied()).unwrap_or(0.0);
    Window::new(file.run.burn_in, end)
}

fn accounting_of(trajs: &[Trajectory]) -> StepAccounting {
    let mut acc = StepAccounting::default();
    for t in trajs {
        acc.add(&t.stats);
    }
    acc
}

fn conservativeness(scn: &Scenario, acc: &StepAccounting) -> ObservableReport {
    ObservableReport::new("max_level", acc.max_level, 0.0, acc.paths as f64).judged(acc.max_level <= scn.geom.tol.on_boundary)
}

/// Component of the start point; the whole domain for invariant starts.
fn start_component(scn: &Scenario) -> Component {
    match &scn.start {
        StartSpec::Point(x) => Component::containing(&scn.zero_set, x),
        StartSpec::Invariant(_) => Component::whole(),
    }
}

fn analysis_functions(file: &ScenarioFile, dim: usize) -> Result<Vec<TestFunction>> {
    if file.analysis.functions.is_empty() {
        Ok(test_bank(dim))
    } else {
        file.analysis.functions.iter().map(|s| TestFunction::parse(s)).collect()
    }
}

fn run_simulate(loaded: &mut LoadedScenario, out: &Path) -> Result<Produced> {
    let scn = &loaded.scenario;
    let trajs = simulate(scn)?;
    export::write_trajectories(&out.join(export::TRAJECTORIES), &loaded.file, &trajs)?;
    let accounting = accounting_of(&trajs);
    let mut reports = vec![conservativeness(scn, &accounting)];
    if let Ok(r) = pooled_occupation(&trajs, window(&loaded.file, &trajs)) {
        reports.push(r);
    }
    Ok(Produced {
        reports,
        accounting,
        outputs: vec![export::TRAJECTORIES.into()],
    })
}

/// Occupation fraction against its prediction, and the stickiness verdict.
pub fn occupation_reports(loaded: &mut LoadedScenario, trajs: &[Trajectory]) -> Result<Vec<ObservableReport>> {
    let measure = loaded.measure()?;
    let scn = &loaded.scenario;
    let tol = &loaded.file.tolerances;
    let w = window(&loaded.file, trajs);
    let predicted = measure.predicted_occupation_fraction(&start_component(scn), &scn.zero_set);
    let mut occ = pooled_occupation(trajs, w)?;
    occ.target = Some(crate::observables::Target {
        value: predicted,
        note: "μ(G∩Γ)/μ(G)".into(),
    });
    occ.sigma = 0.0;
    occ.tolerance = tol.occupation;
    let ok = (occ.estimate - predicted).abs() <= tol.occupation;
    let occ = occ.judged(ok);
    let sticky = stickiness_verdict(trajs, w, tol.sticky_lower_bound, tol.sigma)?;
    let mut lower = ObservableReport::new("stickiness_lower_bound", sticky.lower_bound, 0.0, sticky.occupation.n_effective);
    lower.tolerance = tol.sticky_lower_bound;
    let lower = lower.judged(sticky.sticky);
    let sojourn = ObservableReport::new("max_sojourn", sticky.max_sojourn, 0.0, trajs.len() as f64);
    Ok(vec![occ, lower, sojourn])
}

fn run_occupation(loaded: &mut LoadedScenario, out: &Path) -> Result<Produced> {
    let trajs = simulate(&loaded.scenario)?;
    let accounting = accounting_of(&trajs);
    let mut reports = vec![conservativeness(&loaded.scenario, &accounting)];
    reports.extend(occupation_reports(loaded, &trajs)?);
    let w = window(&loaded.file, &trajs);
    let rows: Vec<Vec<String>> = trajs
        .iter()
        .map(|t| {
            let r = crate::observables::occupation_fraction(t, w)?;
            Ok(vec![t.path_id.to_string(), r.estimate.to_string(), r.std_error.to_string()])
        })
        .collect::<Result<_>>()?;
    export::write_table(
        &out.join("occupation.csv"),
        &loaded.file,
        &["path_id", "fraction", "std_error"],
        &rows,
    )?;
    Ok(Produced {
        reports,
        accounting,
        outputs: vec!["occupation.csv".into()],
    })
}

fn run_ergodic(loaded: &mut LoadedScenario) -> Result<Produced> {
    let measure = loaded.measure()?;
    let scn = &loaded.scenario;
    let trajs = simulate(scn)?;
    let accounting = accounting_of(&trajs);
    let w = window(&loaded.file, &trajs);
    let component = start_component(scn);
    let mass = measure.integrate(|_| 1.0, &component, &scn.zero_set);
    let mut reports = vec![conservativeness(scn, &accounting)];
    for f in analysis_functions(&loaded.file, scn.geom.dim)? {
        let target = measure.integrate(|x| f.value(x), &component, &scn.zero_set) / mass;
        reports.push(pooled_ergodic_average(&trajs, &f, w)?.with_target(target, "∫_G f dμ / μ(G)", loaded.file.tolerances.sigma));
    }
    Ok(Produced {
        reports,
        accounting,
        outputs: Vec::new(),
    })
}

/// `n` points on `Γ`: radial search for star-shaped domains, projected
/// random box points otherwise.
pub fn boundary_points<R: Rng + ?Sized>(geom: &DomainGeometry, n: usize, rng: &mut R) -> Result<Vec<Vector>> {
    let mut out = Vec::with_capacity(n);
    if let Shape::Star { .. } = geom.shape {
        for _ in 0..n {
            out.push(geom.random_boundary_point(rng)?);
        }
        return Ok(out);
    }
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 100 * n.max(1) {
            return Err(Error::Validation(format!("could not find boundary points of `{}`", geom.name)));
        }
        if let Ok(y) = geom.project_to_boundary(&random_box_point(geom, rng)) {
            out.push(y);
        }
    }
    Ok(out)
}

fn random_box_point<R: Rng + ?Sized>(geom: &DomainGeometry, rng: &mut R) -> Vector {
    let mut x = geom.bbox_lo;
    for i in 0..geom.dim {
        x[i] += (geom.bbox_hi[i] - geom.bbox_lo[i]) * rng.random::<f64>();
    }
    x
}

/// Largest violation of `|n| = 1`, `P² = P`, `Pn = 0` and `tr P = d − 1`.
pub fn frame_defect(geom: &DomainGeometry, x: &Vector) -> Result<f64> {
    let f = geom.frame(x)?;
    let p: &Matrix = &f.projection;
    let d = geom.dim as f64;
    Ok((f.normal.norm() - 1.0)
        .abs()
        .max((p.mul_mat(p) - *p).max_abs())
        .max(p.mul_vec(&f.normal).norm())
        .max((p.trace() - (d - 1.0)).abs()))
}

/// Frame invariants and the curvature identity at `n` boundary points.
pub fn geometry_reports(
    geom: &DomainGeometry,
    n: usize,
    seed: u64,
    frame_tol: f64,
    identity_tol: f64,
) -> Result<(Vec<ObservableReport>, Vec<Vec<String>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = boundary_points(geom, n, &mut rng)?;
    let mut worst_frame: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    let mut rows = Vec::with_capacity(points.len());
    for x in &points {
        let fd = frame_defect(geom, x)?;
        let res = geom.curvature_identity_residual(x)?.norm();
        worst_frame = worst_frame.max(fd);
        worst_identity = worst_identity.max(res);
        let mut row: Vec<String> = x.as_slice(geom.dim).iter().map(f64::to_string).collect();
        row.push(geom.curvature_field(x).to_string());
        row.push(fd.to_string());
        row.push(res.to_string());
        rows.push(row);
    }
    let name = &geom.name;
    let mut frame = ObservableReport::new(format!("frame_invariants[{name}]"), worst_frame, 0.0, points.len() as f64);
    frame.tolerance = frame_tol;
    let mut identity = ObservableReport::new(format!("curvature_identity[{name}]"), worst_identity, 0.0, points.len() as f64);
    identity.tolerance = identity_tol;
    Ok((
        vec![
            frame.judged(worst_frame <= frame_tol),
            identity.judged(worst_identity <= identity_tol),
        ],
        rows,
    ))
}

fn run_verify_geometry(loaded: &mut LoadedScenario, out: &Path) -> Result<Produced> {
    let geom = &loaded.scenario.geom;
    let tol = &loaded.file.tolerances;
    let (reports, rows) = geometry_reports(
        geom,
        loaded.file.analysis.points,
        loaded.file.run.seed,
        tol.frame,
        tol.curvature_identity,
    )?;
    let names = ["x1", "x2", "x3"];
    let mut header: Vec<&str> = names[..geom.dim].to_vec();
    header.extend(["kappa", "frame_defect", "identity_residual"]);
    export::write_table(&out.join("geometry.csv"), &loaded.file, &header, &rows)?;
    Ok(Produced {
        reports,
        accounting: StepAccounting::default(),
        outputs: vec!["geometry.csv".into()],
    })
}

/// Default symmetry pairs as indices into the bank of [`test_bank`].
pub fn default_symmetry_pairs(bank_len: usize) -> Vec<[usize; 2]> {
    [[1, 2], [1, 4], [2, 5], [3, 6], [6, 7], [9, 10]]
        .into_iter()
        .filter(|p| p[0] < bank_len && p[1] < bank_len)
        .collect()
}

/// Compact against split form on random interior and boundary points, and
/// quadrature symmetry `∫Lf·g dμ = −ℰ(f,g)` for index pairs of `bank`.
#[allow(clippy::too_many_arguments)]
pub fn generator_reports(
    scn: &Scenario,
    measure: &ReferenceMeasure,
    bank: &[TestFunction],
    pairs: &[[usize; 2]],
    n_points: usize,
    seed: u64,
    gap_tol: f64,
    sym_tol: f64,
) -> Result<Vec<ObservableReport>> {
    let geom = &scn.geom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_points);
    for x in boundary_points(geom, n_points / 2, &mut rng)? {
        points.push((x, Region::Boundary));
    }
    while points.len() < n_points {
        let x = random_box_point(geom, &mut rng);
        if geom.level_value(&x) < -geom.tol.on_boundary {
            points.push((x, Region::Interior));
        }
    }
    let coeff = CoefficientField {
        geom,
        pair: &scn.pair,
        delta: scn.delta,
    };
    let gap = compact_split_max_gap(&coeff, &points, bank)?;
    let mut gap_report = ObservableReport::new("compact_vs_split", gap, 0.0, (points.len() * bank.len()) as f64);
    gap_report.tolerance = gap_tol;
    let mut reports = vec![gap_report.judged(gap <= gap_tol)];
    for &[i, j] in pairs {
        let (f, g) = (&bank[i], &bank[j]);
        let check = symmetry_check(f, g, measure, scn.delta)?;
        let err = check.max_error();
        let mut r = ObservableReport::new(format!("quadrature_symmetry[{},{}]", f.label, g.label), err, 0.0, 0.0);
        r.tolerance = sym_tol;
        reports.push(r.judged(err <= sym_tol));
    }
    let one = TestFunction::parse("1")?;
    let mut worst: f64 = 0.0;
    for node in measure.rule.surface.iter().step_by((measure.rule.surface.len() / 16).max(1)) {
        worst = worst.max(wentzell_residual(&one, &scn.pair, geom, &node.point, scn.delta)?.abs());
    }
    reports.push(ObservableReport::new("wentzell_residual[1]", worst, 0.0, 0.0).judged(worst == 0.0));
    Ok(reports)
}

fn run_verify_generator(loaded: &mut LoadedScenario) -> Result<Produced> {
    let measure = loaded.measure()?;
    let file = &loaded.file;
    let bank = analysis_functions(file, loaded.scenario.geom.dim)?;
    let pairs = if file.analysis.symmetry_pairs.is_empty() {
        default_symmetry_pairs(bank.len())
    } else {
        file.analysis.symmetry_pairs.clone()
    };
    if let Some(p) = pairs.iter().find(|p| p[0] >= bank.len() || p[1] >= bank.len()) {
        return Err(Error::Validation(format!(
            "symmetry pair {p:?} out of range for {} functions",
            bank.len()
        )));
    }
    let tol = &file.tolerances;
    let reports = generator_reports(
        &loaded.scenario,
        &measure,
        &bank,
        &pairs,
        1000,
        file.run.seed,
        tol.compact_split,
        tol.symmetry_quadrature,
    )?;
    Ok(Produced {
        reports,
        accounting: StepAccounting::default(),
        outputs: Vec::new(),
    })
}

/// KS distance of one scheme's marginals against the exact sticky law on
/// the half-line; the scenario must be one-dimensional, reflecting in the
/// tangential sense (`δ = 0`), with constant densities and a start at the
/// left end.
pub fn oracle_reports(scn: &Scenario, times: &[f64], tol: f64) -> Result<(Vec<ObservableReport>, Vec<Vec<f64>>, StepAccounting)> {
    let (alpha, beta) = oracle_parameters(scn)?;
    let lo = scn.geom.bbox_lo[0];
    let (values, stats) = snapshots(scn, times)?;
    let mut acc = StepAccounting::default();
    for s in &stats {
        acc.add(s);
    }
    let theta = 2.0 * beta / alpha;
    let mut reports = Vec::new();
    let mut columns = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let xs: Vec<f64> = values.iter().map(|v| if v[k].1 { 0.0 } else { v[k].0[0] - lo }).collect();
        let m = StickyMarginal::new(theta, t);
        let d = ks_one_sample(&xs, |x| m.cdf(x), |x| m.cdf_left(x));
        let mut r = ObservableReport::new(format!("ks[{},T={t}]", scn.scheme), d, 0.0, xs.len() as f64);
        r.tolerance = tol;
        reports.push(r.judged(d < tol));
        let atom = xs.iter().filter(|x| **x == 0.0).count() as f64 / xs.len() as f64;
        let se = (m.atom() * (1.0 - m.atom()) / xs.len() as f64).sqrt();
        reports.push(
            ObservableReport::new(format!("atom[{},T={t}]", scn.scheme), atom, se, xs.len() as f64).with_target(
                m.atom(),
                "exact atom at 0",
                crate::observables::DEFAULT_SIGMA,
            ),
        );
        columns.push(xs);
    }
    Ok((reports, columns, acc))
}

fn oracle_parameters(scn: &Scenario) -> Result<(f64, f64)> {
    if scn.geom.dim != 1 || scn.delta != 0 {
        return Err(Error::Validation("the exact comparison needs d = 1 and δ = 0".into()));
    }
    let (Some(alpha), Some(beta)) = (scn.pair.alpha.constant_value(), scn.pair.beta.constant_value()) else {
        return Err(Error::Validation("the exact comparison needs constant densities".into()));
    };
    match &scn.start {
        StartSpec::Point(x) if (x[0] - scn.geom.bbox_lo[0]).abs() <= scn.geom.tol.on_boundary => Ok((alpha, beta)),
        _ => Err(Error::Validation(
            "the exact comparison needs a start at the left end of the interval".into(),
        )),
    }
}

fn run_compare_schemes(loaded: &mut LoadedScenario) -> Result<Produced> {
    let file = loaded.file.clone();
    let tol = &file.tolerances;
    let mut reports = Vec::new();
    let mut accounting = StepAccounting::default();
    let schemes = [
        (SchemeKind::TimeChange, tol.ks_time_change),
        (SchemeKind::DirectSticky, tol.ks_direct),
    ];
    if loaded.scenario.geom.dim == 1 {
        let mut columns = Vec::new();
        for (kind, ks_tol) in schemes {
            let mut scn = loaded.scenario.clone();
            scn.scheme = kind;
            let (r, c, acc) = oracle_reports(&scn, &file.analysis.times, ks_tol)?;
            reports.extend(r);
            columns.push(c);
            merge(&mut accounting, &acc);
        }
        for (k, t) in file.analysis.times.iter().enumerate() {
            let d = ks_two_sample(&columns[0][k], &columns[1][k]);
            reports.push(ObservableReport::new(
                format!("ks[time_change vs direct_sticky,T={t}]"),
                d,
                0.0,
                columns[0][k].len() as f64,
            ));
        }
    } else {
        let mut occ = Vec::new();
        for (kind, _) in schemes {
            let mut scn = loaded.scenario.clone();
            scn.scheme = kind;
            let trajs = simulate(&scn)?;
            merge(&mut accounting, &accounting_of(&trajs));
            let mut r = pooled_occupation(&trajs, window(&file, &trajs))?;
            r.name = format!("occupation_fraction[{kind}]");
            occ.push(r);
        }
        let diff = occ[0].estimate - occ[1].estimate;
        let se = occ[0].std_error.hypot(occ[1].std_error);
        let d = ObservableReport::new("occupation_difference", diff, se, occ[0].n_effective.min(occ[1].n_effective)).with_target(
            0.0,
            "scheme independence",
            tol.sigma,
        );
        reports.extend(occ);
        reports.push(d);
    }
    Ok(Produced {
        reports,
        accounting,
        outputs: Vec::new(),
    })
}

fn merge(into: &mut StepAccounting, other: &StepAccounting) {
    into.paths += other.paths;
    into.steps += other.steps;
    into.halvings += other.halvings;
    into.internal_time += other.internal_time;
    into.max_level = into.max_level.max(other.max_level);
}

/// Largest `|F|/|∇F|` over every step, and the time average of the
/// squared last coordinate after `burn_in`.
struct SurfaceWatch<'a> {
    geom: &'a DomainGeometry,
    burn_in: f64,
    max_distance: f64,
    moment: f64,
    time: f64,
}

impl PathObserver for SurfaceWatch<'_> {
    fn record(&mut self, step: &StepRecord<'_>) {
        let mut t = step.t;
        let last = self.geom.dim - 1;
        for s in step.segments {
            let g = self.geom.level.gradient(&s.state);
            self.max_distance = self.max_distance.max(self.geom.level_value(&s.state).abs() / g.norm());
            let covered = (t + s.duration - t.max(self.burn_in)).max(0.0);
            self.moment += s.state[last] * s.state[last] * covered;
            self.time += covered;
            t += s.duration;
        }
    }
}

/// Surface Brownian motion checks: distance from `Γ` along every step and
/// the time-averaged second moment of the last coordinate against its
/// surface average.
pub fn surface_reports(
    scn: &Scenario,
    measure: &ReferenceMeasure,
    burn_in: f64,
    radius_tol: f64,
    moment_tol: f64,
) -> Result<(Vec<ObservableReport>, StepAccounting)> {
    let mut scn = scn.clone();
    scn.scheme = SchemeKind::SurfaceOnly;
    scn.validate()?;
    let geom = &scn.geom;
    let runs = run_ensemble(&scn, |_| SurfaceWatch {
        geom,
        burn_in,
        max_distance: 0.0,
        moment: 0.0,
        time: 0.0,
    })?;
    let mut acc = StepAccounting::default();
    let mut worst: f64 = 0.0;
    let mut per_path = Vec::with_capacity(runs.len());
    for (o, st) in &runs {
        acc.add(st);
        worst = worst.max(o.max_distance);
        per_path.push(o.moment / o.time);
    }
    let last = geom.dim - 1;
    let nodes = &measure.rule.surface;
    let area: f64 = nodes.iter().map(|n| n.weight).sum();
    let target = nodes.iter().map(|n| n.weight * n.point[last] * n.point[last]).sum::<f64>() / area;
    let (m, se) = crate::stats::mean_se(&per_path);
    let mut radius = ObservableReport::new("surface_distance", worst, 0.0, acc.steps as f64);
    radius.tolerance = radius_tol;
    let mut moment = ObservableReport::new(format!("surface_moment[x{}^2]", last + 1), m, se, per_path.len() as f64);
    moment.target = Some(crate::observables::Target {
        value: target,
        note: "uniform surface measure".into(),
    });
    moment.sigma = 0.0;
    moment.tolerance = moment_tol;
    let moment_ok = (m - target).abs() <= moment_tol;
    let mut reports = vec![radius.judged(worst <= radius_tol), moment.judged(moment_ok)];

    // The same steps without projection drift off Γ by O(dt) per step.
    if let StartSpec::Point(x0) = scn.start {
        let mut rng = scn.stream(u64::MAX).rng();
        let mut x = x0;
        let n = ((scn.horizon / scn.dt) as usize).min(1000);
        for _ in 0..n {
            x = surface_step(geom, &x, scn.dt, &gaussian_vector(&mut rng, geom.dim), false)?;
        }
        let drift = geom.level_value(&x).abs() / geom.level.gradient(&x).norm();
        reports.push(ObservableReport::new(
            "unprojected_drift_per_step",
            drift / n.max(1) as f64,
            0.0,
            n as f64,
        ));
    }
    Ok((reports, acc))
}

fn run_surface_bm(loaded: &mut LoadedScenario) -> Result<Produced> {
    let measure = loaded.measure()?;
    let tol = &loaded.file.tolerances;
    let (reports, accounting) = surface_reports(
        &loaded.scenario,
        &measure,
        loaded.file.run.burn_in,
        tol.surface_radius,
        tol.surface_moment,
    )?;
    Ok(Produced {
        reports,
        accounting,
        outputs: Vec::new(),
    })
}

/// Names the first failed verdict, for error messages and exit codes.
pub fn failure_summary(outcome: &RunOutcome) -> Option<String> {
    outcome.first_failure().map(|r| {
        debug_assert_eq!(r.verdict, Verdict::Fail);
        format!(
            "{}: estimate {} (target {:?}, tolerance {})",
            r.name,
            r.estimate,
            r.target.as_ref().map(|t| t.value),
            r.tolerance
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert!("nope".parse::<Command>().is_err());
    }

    #[test]
    fn frame_defect_is_tiny_on_ellipse() {
        let g = DomainGeometry::zoo("ellipse(2,1)").unwrap();
        let (reports, rows) = geometry_reports(&g, 200, 1, 1e-12, 1e-5).unwrap();
        assert_eq!(rows.len(), 200);
        assert!(reports.iter().all(|r| r.passed()), "{reports:?}");
    }

    #[test]
    fn simulate_writes_outputs_and_replays_identically() {
        let dir = tempfile::tempdir().unwrap();
        let text = "name = \"small\"\n[domain]\nshape = \"disk\"\n[run]\nhorizon = 0.2\npaths = 3\nseed = 5\n";
        let mut loaded = parse_scenario(text).unwrap();
        let a = dir.path().join("a");
        let outcome = run(Command::Simulate, &mut loaded, &a).unwrap();
        assert!(outcome.passed());
        let b = dir.path().join("b");
        replay(&a.join(export::MANIFEST), &b).unwrap();
        for f in [export::TRAJECTORIES, export::REPORT, export::MANIFEST] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
        }
        let text = std::fs::read_to_string(a.join(export::TRAJECTORIES)).unwrap();
        let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header, "path_id,t,x1,x2,on_boundary,L_t");
        // 21 samples per path.
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3 * 21);
    }

    #[test]
    fn oracle_needs_left_end_start() {
        let loaded = parse_scenario("[domain]\nshape = \"interval(0,10)\"\n[process]\ndelta = 0\nstart = [1.0]\n").unwrap();
        assert!(oracle_reports(&loaded.scenario, &[0.5], 0.02).is_err());
    }
}
