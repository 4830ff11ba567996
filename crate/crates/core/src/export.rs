//! Output files and the run manifest.
//!
//! Every output is a deterministic function of the scenario: numbers are
//! written in shortest round-trip form and wall-clock times go to a separate
//! `timing.json`, so two runs of the same manifest give identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::observables::{ObservableReport, Verdict};
use crate::scenario::ScenarioFile;
use crate::schemes::{PathStats, Trajectory};
use crate::{Error, Result};

pub const TRAJECTORIES: &str = "trajectories.csv";
pub const REPORT: &str = "report.csv";
pub const MANIFEST: &str = "manifest.json";
pub const TIMING: &str = "timing.json";

/// Trajectory rows: `path_id,t,x1..xd,on_boundary,L_t`, preceded by the
/// scenario as `#` comment lines.
pub fn write_trajectories(path: &Path, scenario: &ScenarioFile, trajs: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_echo(&mut w, scenario)?;
    let dim = trajs.first().map_or(0, |t| t.dim);
    write!(w, "path_id,t")?;
    for i in 1..=dim {
        write!(w, ",x{i}")?;
    }
    writeln!(w, ",on_boundary,L_t")?;
    for traj in trajs {
        for j in 0..traj.len() {
            write!(w, "{},{}", traj.path_id, traj.times[j])?;
            for x in traj.states[j].as_slice(dim) {
                write!(w, ",{x}")?;
            }
            writeln!(w, ",{},{}", u8::from(traj.on_boundary[j]), traj.local_time[j])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_echo(w: &mut impl Write, scenario: &ScenarioFile) -> Result<()> {
    for line in scenario.to_toml().lines() {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

pub fn write_report(path: &Path, scenario: &ScenarioFile, reports: &[ObservableReport]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_echo(&mut w, scenario)?;
    writeln!(w, "name,estimate,std_error,n_effective,target,sigma,tolerance,verdict,note")?;
    for r in reports {
        let (target, note) = r
            .target
            .as_ref()
            .map_or((String::new(), ""), |t| (t.value.to_string(), t.note.as_str()));
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            csv_field(&r.name),
            r.estimate,
            r.std_error,
            r.n_effective,
            target,
            r.sigma,
            r.tolerance,
            verdict_str(r.verdict),
            csv_field(note)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Plain table with a header row; used for per-path and per-point outputs.
pub fn write_table(path: &Path, scenario: &ScenarioFile, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_echo(&mut w, scenario)?;
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| csv_field(c)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Info => "info",
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Platform {
    pub os: String,
    pub arch: String,
    pub family: String,
    pub pointer_width: u32,
}

impl Platform {
    pub fn current() -> Self {
        Platform {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            family: std::env::consts::FAMILY.into(),
            pointer_width: usize::BITS,
        }
    }
}

/// How per-path random streams are derived from the master seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedScheme {
    pub generator: String,
    pub master_seed: u64,
    /// Path `i` uses stream `i` for `i` in `0..paths`.
    pub paths: u64,
}

impl SeedScheme {
    pub fn new(master_seed: u64, paths: u64) -> Self {
        SeedScheme {
            generator: "ChaCha8Rng::seed_from_u64(master_seed), set_stream(path)".into(),
            master_seed,
            paths,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepAccounting {
    pub paths: u64,
    pub steps: u64,
    pub halvings: u64,
    pub internal_time: f64,
    pub max_level: f64,
}

impl StepAccounting {
    pub fn add(&mut self, s: &PathStats) {
        self.paths += 1;
        self.steps += s.steps;
        self.halvings += s.halvings;
        self.internal_time += s.internal_time;
        self.max_level = self.max_level.max(s.max_level);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub name: String,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub scenario: ScenarioFile,
    pub software: String,
    pub version: String,
    pub platform: Platform,
    pub seeds: SeedScheme,
    pub accounting: StepAccounting,
    pub verdicts: Vec<VerdictRow>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, scenario: &ScenarioFile) -> Self {
        RunManifest {
            subcommand: subcommand.into(),
            scenario: scenario.clone(),
            software: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            platform: Platform::current(),
            seeds: SeedScheme::new(scenario.run.seed, scenario.run.paths as u64),
            accounting: StepAccounting::default(),
            verdicts: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST);
        std::fs::write(&path, self.to_json() + "\n")?;
        Ok(path)
    }
}

/// Wall-clock accounting, kept apart from the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub subcommand: String,
    pub seconds: f64,
    pub workers: usize,
}

impl Timing {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(
            dir.join(TIMING),
            serde_json::to_string_pretty(self).expect("timing serializes") + "\n",
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioFile;

    fn file() -> ScenarioFile {
        ScenarioFile::parse("name = \"t\"\n[domain]\nshape = \"disk\"\n[run]\npaths = 3\nseed = 9\n").unwrap()
    }

    #[test]
    fn manifest_round_trips() {
        let mut m = RunManifest::new("simulate", &file());
        m.accounting.steps = 17;
        m.accounting.internal_time = 0.1 + 0.2;
        m.verdicts.push(VerdictRow {
            name: "occupation_fraction".into(),
            verdict: Verdict::Pass,
        });
        m.outputs.push(REPORT.into());
        let back = RunManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.seeds.master_seed, 9);
        assert_eq!(back.seeds.paths, 3);
    }

    #[test]
    fn report_quotes_commas() {
        let dir = tempfile::tempdir().unwrap();
        let r = ObservableReport::new("symmetry[x,y]", 0.25, 0.1, 10.0).with_target(0.0, "μ", 4.0);
        write_report(&dir.path().join(REPORT), &file(), &[r]).unwrap();
        let text = std::fs::read_to_string(dir.path().join(REPORT)).unwrap();
        let last = text.lines().last().unwrap();
        assert!(last.starts_with("\"symmetry[x,y]\",0.25,0.1,10,0,4,0,pass,μ"), "{last}");
        assert!(text.starts_with("# name = \"t\""));
    }
}
