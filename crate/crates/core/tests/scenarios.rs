//! The bundled scenario files load, validate and describe what they claim.

use std::path::PathBuf;

use sticky_core::measures::Component;
use sticky_core::scenario::load_scenario;
use sticky_core::schemes::SchemeKind;

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn every_bundled_scenario_builds() {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(scenario_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "scn") {
            let loaded = load_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(loaded.validation.passed(), "{}", path.display());
            names.push(loaded.file.name.clone());
        }
    }
    names.sort();
    assert_eq!(names.len(), 9, "{names:?}");
}

#[test]
fn predictions_of_the_occupation_scenarios() {
    for (file, want) in [
        ("disk_uniform.scn", 2.0 / 3.0),
        ("disk_half_beta.scn", 0.5),
        ("interval_unit.scn", 2.0 / 3.0),
        ("disk_nearly_reflecting.scn", 2e-4 / (1.0 + 2e-4)),
    ] {
        let mut loaded = load_scenario(scenario_dir().join(file)).unwrap();
        let measure = loaded.measure().unwrap();
        let p = measure.predicted_occupation_fraction(&Component::whole(), &[]);
        assert!((p - want).abs() < 1e-9, "{file}: {p} vs {want}");
        assert_eq!(loaded.scenario.scheme, SchemeKind::TimeChange);
    }
}
