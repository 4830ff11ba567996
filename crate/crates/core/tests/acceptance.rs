//! Acceptance criteria 1 to 11, one pass/fail line each.
//!
//! `cargo test -p sticky-core --test acceptance` runs them in order; the
//! process exits non-zero when any criterion fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use sticky_core::generator::test_bank;
use sticky_core::generator::TestFunction;
use sticky_core::geometry::DomainGeometry;
use sticky_core::observables::{endpoints, invariance_report, martingale_residuals, symmetry_report, ObservableReport, Verdict};
use sticky_core::run::{default_symmetry_pairs, generator_reports, geometry_reports, replay, run, Command, RunOutcome};
use sticky_core::scenario::{LoadedScenario, ScenarioFile, StartField};
use sticky_core::{Error, Result};

const OCCUPATION_TOL: f64 = 0.02;
const KS_TIME_CHANGE: f64 = 0.02;
const KS_DIRECT: f64 = 0.03;
const FRAME_TOL: f64 = 1e-12;
const IDENTITY_TOL: f64 = 1e-5;
const GEOMETRY_POINTS: usize = 10_000;
const SURFACE_RADIUS_TOL: f64 = 1e-6;
const SURFACE_MOMENT_TOL: f64 = 0.01;
const COMPACT_SPLIT_TOL: f64 = 1e-10;
const SYMMETRY_QUADRATURE_TOL: f64 = 1e-3;
const SIGMA: f64 = 4.0;
const MARTINGALE_PATHS: usize = 100_000;
const MARTINGALE_H: f64 = 0.01;
/// Step for the martingale check; the boundary bias shrinks roughly like dt.
const MARTINGALE_DT: f64 = 5e-6;
const STICKY_LOWER_BOUND: f64 = 0.5;
const NOT_STICKY_FRACTION: f64 = 0.01;

struct Check {
    ok: bool,
    detail: String,
}

impl Check {
    fn new(ok: bool, detail: impl Into<String>) -> Self {
        Check { ok, detail: detail.into() }
    }
}

/// Run directories and results shared between criteria.
struct Ctx {
    dir: PathBuf,
    runs: Vec<PathBuf>,
    disk_occupation: Option<RunOutcome>,
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn read_file(name: &str) -> Result<ScenarioFile> {
    ScenarioFile::parse(&std::fs::read_to_string(scenario_path(name))?)
}

fn load(name: &str) -> Result<LoadedScenario> {
    read_file(name)?.build()
}

impl Ctx {
    fn run_file(&mut self, name: &str, cmd: Command) -> Result<RunOutcome> {
        let mut loaded = load(name)?;
        let out = self.dir.join(format!("{}-{}", name.trim_end_matches(".scn"), cmd.name()));
        let outcome = run(cmd, &mut loaded, &out)?;
        self.runs.push(out);
        Ok(outcome)
    }
}

fn report<'a>(reports: &'a [ObservableReport], name: &str) -> Result<&'a ObservableReport> {
    reports
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::Validation(format!("no report named `{name}`")))
}

fn occupation(ctx: &mut Ctx, file: &str, want: f64) -> Result<(Check, RunOutcome)> {
    let outcome = ctx.run_file(file, Command::Occupation)?;
    let occ = report(&outcome.reports, "occupation_fraction")?;
    let level = report(&outcome.reports, "max_level")?;
    let gap = (occ.estimate - want).abs();
    let check = Check::new(
        gap <= OCCUPATION_TOL && level.passed(),
        format!(
            "fraction {:.4} ± {:.4}, target {want:.4}, |gap| {gap:.4} ≤ {OCCUPATION_TOL}",
            occ.estimate, occ.std_error
        ),
    );
    Ok((check, outcome))
}

fn criterion_1(ctx: &mut Ctx) -> Result<Check> {
    let (check, outcome) = occupation(ctx, "disk_uniform.scn", 2.0 / 3.0)?;
    ctx.disk_occupation = Some(outcome);
    Ok(check)
}

fn criterion_2(ctx: &mut Ctx) -> Result<Check> {
    Ok(occupation(ctx, "interval_unit.scn", 2.0 / 3.0)?.0)
}

fn criterion_3(ctx: &mut Ctx) -> Result<Check> {
    Ok(occupation(ctx, "disk_half_beta.scn", 0.5)?.0)
}

fn criterion_4(ctx: &mut Ctx) -> Result<Check> {
    let outcome = ctx.run_file("interval_sticky.scn", Command::CompareSchemes)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (scheme, tol) in [("time_change", KS_TIME_CHANGE), ("direct_sticky", KS_DIRECT)] {
        for t in [0.5, 1.0] {
            let d = report(&outcome.reports, &format!("ks[{scheme},T={t}]"))?.estimate;
            ok &= d < tol;
            parts.push(format!("{scheme} T={t}: {d:.4} < {tol}"));
        }
    }
    Ok(Check::new(ok, parts.join(", ")))
}

fn criterion_5(_: &mut Ctx) -> Result<Check> {
    let mut ok = true;
    let mut frame: f64 = 0.0;
    let mut identity: f64 = 0.0;
    let shapes = [
        "disk",
        "ball3",
        "ellipse(2,1)",
        "ellipsoid(1.5,1,0.75)",
        "smoothbox(1)",
        "smoothbox(1,3)",
    ];
    for (k, shape) in shapes.iter().enumerate() {
        let geom = DomainGeometry::zoo(shape)?;
        let (reports, _) = geometry_reports(&geom, GEOMETRY_POINTS, k as u64, FRAME_TOL, IDENTITY_TOL)?;
        frame = frame.max(reports[0].estimate);
        identity = identity.max(reports[1].estimate);
        ok &= reports[0].estimate <= FRAME_TOL && reports[1].estimate < IDENTITY_TOL;
    }
    Ok(Check::new(
        ok,
        format!(
            "{} shapes × {GEOMETRY_POINTS} points, frame {frame:.1e} ≤ {FRAME_TOL:.0e}, identity {identity:.1e} < {IDENTITY_TOL:.0e}",
            shapes.len()
        ),
    ))
}

fn criterion_6(ctx: &mut Ctx) -> Result<Check> {
    let outcome = ctx.run_file("sphere_surface.scn", Command::SurfaceBm)?;
    let dist = report(&outcome.reports, "surface_distance")?.estimate;
    let moment = report(&outcome.reports, "surface_moment[x3^2]")?;
    let gap = (moment.estimate - 1.0 / 3.0).abs();
    let steps = outcome.manifest.accounting.steps;
    Ok(Check::new(
        dist < SURFACE_RADIUS_TOL && gap <= SURFACE_MOMENT_TOL && steps >= 100_000,
        format!(
            "{steps} steps, max distance {dist:.1e} < {SURFACE_RADIUS_TOL:.0e}, moment {:.4} ± {:.4} vs 1/3 within {SURFACE_MOMENT_TOL}",
            moment.estimate, moment.std_error
        ),
    ))
}

fn criterion_7(_: &mut Ctx) -> Result<Check> {
    let mut loaded = load("disk_weighted.scn")?;
    let measure = loaded.measure()?;
    let bank = test_bank(2);
    let pairs = default_symmetry_pairs(bank.len());
    let reports = generator_reports(
        &loaded.scenario,
        &measure,
        &bank,
        &pairs,
        1000,
        3,
        COMPACT_SPLIT_TOL,
        SYMMETRY_QUADRATURE_TOL,
    )?;
    let gap = report(&reports, "compact_vs_split")?.estimate;
    let sym: Vec<f64> = reports
        .iter()
        .filter(|r| r.name.starts_with("quadrature_symmetry"))
        .map(|r| r.estimate)
        .collect();
    let worst = sym.iter().copied().fold(0.0, f64::max);
    Ok(Check::new(
        gap < COMPACT_SPLIT_TOL && sym.len() == 6 && worst <= SYMMETRY_QUADRATURE_TOL,
        format!("compact vs split {gap:.1e} < {COMPACT_SPLIT_TOL:.0e} over 1000 points × {} functions, symmetry {worst:.1e} ≤ {SYMMETRY_QUADRATURE_TOL:.0e} for {} pairs", bank.len(), sym.len()),
    ))
}

fn criterion_8(_: &mut Ctx) -> Result<Check> {
    let mut file = read_file("disk_uniform.scn")?;
    file.process.start = StartField::Point(vec![0.3f64.cos(), 0.3f64.sin()]);
    file.run.dt = MARTINGALE_DT;
    file.run.paths = MARTINGALE_PATHS;
    let loaded = file.build()?;
    let fs: Vec<TestFunction> = ["x", "x^2 + y^2", "x*y"]
        .iter()
        .map(|s| TestFunction::parse(s))
        .collect::<Result<_>>()?;
    let reports = martingale_residuals(&loaded.scenario, &fs, MARTINGALE_H)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for r in &reports {
        let z = r.estimate / r.std_error;
        ok &= z.abs() <= SIGMA;
        parts.push(format!("{} {:.1e} ({z:+.2} SE)", r.name, r.estimate));
    }
    Ok(Check::new(
        ok,
        format!(
            "N={MARTINGALE_PATHS}, h={MARTINGALE_H}, dt={MARTINGALE_DT:.0e}: {}",
            parts.join(", ")
        ),
    ))
}

fn criterion_9(_: &mut Ctx) -> Result<Check> {
    let mut loaded = load("disk_weighted.scn")?;
    let measure = loaded.measure()?;
    let ends = endpoints(&loaded.scenario)?;
    let bank = test_bank(2);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for f in &bank {
        let r = invariance_report(&ends, f, &measure);
        let gap = (r.estimate - r.target.as_ref().map_or(f64::NAN, |t| t.value)).abs();
        // Constants have zero spread; allow rounding.
        ok &= gap <= SIGMA * r.std_error + 1e-12;
        if r.std_error > 0.0 {
            worst = worst.max(gap / r.std_error);
        }
    }
    let mut sym = Vec::new();
    for &[i, j] in &loaded.file.analysis.symmetry_pairs {
        let r = symmetry_report(&ends, &bank[i], &bank[j]);
        let z = r.estimate / r.std_error;
        ok &= z.abs() <= SIGMA;
        sym.push(format!("{z:+.2}"));
    }
    Ok(Check::new(
        ok && sym.len() == 2,
        format!(
            "N={}, worst invariance {worst:.2} SE over {} functions, symmetry {} SE",
            ends.len(),
            bank.len(),
            sym.join(" / ")
        ),
    ))
}

fn criterion_10(ctx: &mut Ctx) -> Result<Check> {
    let disk = ctx
        .disk_occupation
        .take()
        .ok_or_else(|| Error::Validation("criterion 1 did not run".into()))?;
    let lower = report(&disk.reports, "stickiness_lower_bound")?;
    let sticky = lower.estimate > STICKY_LOWER_BOUND && lower.verdict == Verdict::Pass;
    let outcome = ctx.run_file("disk_nearly_reflecting.scn", Command::Occupation)?;
    let frac = report(&outcome.reports, "occupation_fraction")?.estimate;
    let degenerate = report(&outcome.reports, "stickiness_lower_bound")?;
    let not_sticky = frac < NOT_STICKY_FRACTION && degenerate.verdict == Verdict::Fail;
    Ok(Check::new(
        sticky && not_sticky,
        format!(
            "disk lower bound {:.4} > {STICKY_LOWER_BOUND} ({}), β=1e-4 fraction {frac:.1e} < {NOT_STICKY_FRACTION} ({})",
            lower.estimate,
            if sticky { "sticky" } else { "not sticky" },
            if degenerate.verdict == Verdict::Fail {
                "not sticky"
            } else {
                "sticky"
            }
        ),
    ))
}

fn criterion_11(ctx: &mut Ctx) -> Result<Check> {
    let mut compared = 0usize;
    let mut mismatches = Vec::new();
    for dir in &ctx.runs {
        let again = dir.with_extension("replay");
        let outcome = replay(&dir.join("manifest.json"), &again)?;
        let mut files = outcome.manifest.outputs.clone();
        files.push("manifest.json".into());
        for f in files {
            compared += 1;
            if std::fs::read(dir.join(&f))? != std::fs::read(again.join(&f))? {
                mismatches.push(format!("{}/{f}", dir.file_name().unwrap_or_default().to_string_lossy()));
            }
        }
    }
    Ok(Check::new(
        mismatches.is_empty() && compared > 0,
        format!(
            "{} runs replayed, {compared} files compared, mismatches: {:?}",
            ctx.runs.len(),
            mismatches
        ),
    ))
}

type Criterion = fn(&mut Ctx) -> Result<Check>;

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut ctx = Ctx {
        dir: tmp.path().to_path_buf(),
        runs: Vec::new(),
        disk_occupation: None,
    };
    let criteria: [(&str, Criterion); 11] = [
        ("occupation law on the disk", criterion_1),
        ("occupation law on the interval", criterion_2),
        ("occupation scales with β", criterion_3),
        ("one-dimensional exact law", criterion_4),
        ("boundary geometry", criterion_5),
        ("Brownian motion on the sphere", criterion_6),
        ("generator algebra", criterion_7),
        ("martingale residuals", criterion_8),
        ("invariance and symmetry", criterion_9),
        ("stickiness control pair", criterion_10),
        ("reproducibility", criterion_11),
    ];
    let mut failed = 0;
    for (k, (title, f)) in criteria.iter().enumerate() {
        let clock = Instant::now();
        let check = f(&mut ctx).unwrap_or_else(|e| Check::new(false, format!("error: {e}")));
        failed += usize::from(!check.ok);
        println!(
            "criterion {:>2} {}  {title}: {} [{:.1} s]",
            k + 1,
            if check.ok { "PASS" } else { "FAIL" },
            check.detail,
            clock.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
