//! Property tests over randomly drawn inputs.

use proptest::prelude::*;
use sticky_core::generator::TestFunction;
use sticky_core::geometry::DomainGeometry;
use sticky_core::measures::DensityPair;
use sticky_core::observables::{ergodic_average, occupation_fraction, Window};
use sticky_core::scenario::{Overrides, ScenarioFile};
use sticky_core::schemes::{reflected_step, simulate, Scenario, SchemeKind, Trajectory};
use sticky_core::{Matrix, Vector};

fn disk_path(horizon: f64, seed: u64) -> Trajectory {
    let geom = DomainGeometry::zoo("disk").unwrap();
    let mut s = Scenario::new("disk", geom, DensityPair::constant(1.0, 1.0), 1, Vector::ZERO);
    s.horizon = horizon;
    s.seed = seed;
    simulate(&s).unwrap().remove(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ellipse_frame_matches_closed_form(a in 0.3f64..3.0, b in 0.3f64..3.0, t in 0.0f64..std::f64::consts::TAU) {
        let geom = DomainGeometry::zoo(&format!("ellipse({a},{b})")).unwrap();
        let x = Vector::from_slice(&[a * t.cos(), b * t.sin()]);
        let frame = geom.frame(&x).unwrap();
        let g = Vector::from_slice(&[x.0[0] / (a * a), x.0[1] / (b * b)]);
        let n = g * (1.0 / g.norm());
        prop_assert!((frame.normal - n).norm() < 1e-12);
        let p = Matrix::identity(2) - n.outer(&n);
        prop_assert!((frame.projection - p).max_abs() < 1e-12);
        let (s, c) = t.sin_cos();
        let kappa = a * b / (a * a * s * s + b * b * c * c).powf(1.5);
        prop_assert!((frame.curvature - kappa).abs() < 1e-10 * kappa.max(1.0));
        prop_assert!(frame.violations(2).max() < 1e-12);
    }

    #[test]
    fn reflected_step_stays_in_closure(theta in 0.0f64..std::f64::consts::TAU, r in 0.0f64..1.0, nx in -4.0f64..4.0, ny in -4.0f64..4.0, dt in 1e-5f64..1e-2) {
        let geom = DomainGeometry::zoo("ellipse(1.5,0.75)").unwrap();
        let pair = DensityPair::constant(1.0, 1.0);
        let x = Vector::from_slice(&[1.5 * r * theta.cos(), 0.75 * r * theta.sin()]);
        let step = reflected_step(&x, &pair, &geom, dt, &Vector::from_slice(&[nx, ny])).unwrap();
        prop_assert!(geom.level_value(&step.state) <= geom.tol.on_boundary);
        prop_assert!(step.push >= 0.0);
        prop_assert_eq!(step.push > 0.0, step.contact.is_some());
    }

    #[test]
    fn scenario_round_trips(paths in 1usize..10_000, seed in any::<u64>(), dt in 1e-6f64..1e-1, horizon in 1.0f64..1e4, direct in any::<bool>()) {
        let mut file = ScenarioFile::parse(include_str!("../../../scenarios/disk_uniform.scn")).unwrap();
        file.apply(&Overrides {
            paths: Some(paths),
            horizon: Some(horizon),
            dt: Some(dt),
            seed: Some(seed),
            scheme: Some(if direct { SchemeKind::DirectSticky } else { SchemeKind::TimeChange }),
            sigma: None,
        });
        let back = ScenarioFile::parse(&file.to_toml()).unwrap();
        prop_assert_eq!(back, file);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ergodic_average_is_linear(c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, split in 5.0f64..45.0) {
        let traj = disk_path(50.0, 2);
        let w = Window::new(split, 50.0);
        let f = TestFunction::parse("x").unwrap();
        let g = TestFunction::parse("x*y").unwrap();
        let h = TestFunction::parse(&format!("({c1})*x + ({c2})*x*y")).unwrap();
        let lhs = ergodic_average(&traj, &h, w).unwrap().estimate;
        let rhs = c1 * ergodic_average(&traj, &f, w).unwrap().estimate + c2 * ergodic_average(&traj, &g, w).unwrap().estimate;
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn occupation_splits_over_adjacent_windows(split in 5.0f64..45.0) {
        let traj = disk_path(50.0, 3);
        let split = (split * 100.0).round() / 100.0;
        let whole = occupation_fraction(&traj, Window::new(0.0, 50.0)).unwrap().estimate;
        let left = occupation_fraction(&traj, Window::new(0.0, split)).unwrap().estimate;
        let right = occupation_fraction(&traj, Window::new(split, 50.0)).unwrap().estimate;
        let mixed = (left * split + right * (50.0 - split)) / 50.0;
        prop_assert!((whole - mixed).abs() < 1e-3, "{} vs {}", whole, mixed);
    }
}

#[test]
fn path_streams_do_not_depend_on_ensemble_size() {
    let geom = DomainGeometry::zoo("disk").unwrap();
    let mut s = Scenario::new("disk", geom, DensityPair::constant(1.0, 1.0), 1, Vector::ZERO);
    s.horizon = 5.0;
    s.seed = 11;
    s.n_paths = 3;
    let small = simulate(&s).unwrap();
    s.n_paths = 7;
    let large = simulate(&s).unwrap();
    assert_eq!(small[..], large[..3]);
    assert_ne!(large[0].states, large[1].states);
}
