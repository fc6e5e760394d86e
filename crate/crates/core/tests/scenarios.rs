//! Configuration files: loading, validation and hashing.

mod common;

use adaptive_cbc::reference::builtin_signal;
use adaptive_cbc::scenario::{Expectation, Scenario};
use adaptive_cbc::simulator::Mode;
use common::{config_path, scenario};

const MINIMAL: &str = r#"
initial_state = [0.0, -1.0]
periods = 4
[plant]
builtin = "duffing"
[excitation]
omega = 2.515
amplitude = [0.15]
[reference]
kind = "builtin"
refine = false
[controller]
k = 1.0
kappa = 1.0
epsilon = 1.0
gamma = 0.1
lambda = [1.0]
s_diag = 2.0
"#;

#[test]
fn shipped_configs_resolve() {
    let dir = config_path("x").parent().unwrap().to_path_buf();
    let mut names: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    names.sort();
    assert!(names.len() >= 10);
    for path in names {
        let sc = Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let r = sc.resolve().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(r.sim.steps > 0);
        if sc.branch.is_some() {
            assert_eq!(r.sim.mode, Mode::OpenLoop, "{}", path.display());
            assert!(r.orbit.is_some(), "{}: branch needs a refined seed", path.display());
        }
    }
}

#[test]
fn defaults_fill_in_timing_and_thresholds() {
    let r = Scenario::from_toml(MINIMAL).unwrap().resolve().unwrap();
    let period = 2.0 * std::f64::consts::PI / 2.515;
    assert!((r.sim.dt - period / 2000.0).abs() < 1e-15);
    assert_eq!(r.sim.steps, 8000);
    assert_eq!(r.harmonics, 7);
    assert!((r.thresholds.tol_noninv - 1.5e-4).abs() < 1e-18);
    assert!((r.thresholds.floor_inv - 1.5e-3).abs() < 1e-17);
    assert_eq!(r.thresholds.expect, Expectation::Noninvasive);
    assert_eq!(r.sim.mode, Mode::ClosedLoop);
    assert!(r.orbit.is_none());
    assert_eq!(r.sim.reference.as_ref().unwrap().signal(), &builtin_signal("duffing").unwrap());
}

#[test]
fn bad_configs_are_rejected() {
    let cases = [
        MINIMAL.replace("periods = 4", "periods = 4\ndt = 0.0"),
        MINIMAL.replace("periods = 4", "periods = 4\ndt = -0.01"),
        MINIMAL.replace("periods = 4", "periods = 4\nbogus = 1"),
        MINIMAL.replace("k = 1.0", "k = -1.0"),
        MINIMAL.replace("lambda = [1.0]", "lambda = [-1.0]"),
        MINIMAL.replace("lambda = [1.0]", "lambda = [1.0, 2.0]"),
        MINIMAL.replace("s_diag = 2.0", ""),
        MINIMAL.replace("initial_state = [0.0, -1.0]", "initial_state = [0.0]"),
        MINIMAL.replace("builtin = \"duffing\"", "builtin = \"pendulum\""),
        MINIMAL.replace("omega = 2.515", "omega = -2.515"),
        MINIMAL.replace("[controller]", "[unused]"),
    ];
    for (i, text) in cases.iter().enumerate() {
        let result = Scenario::from_toml(text).and_then(|s| s.resolve());
        assert!(result.is_err(), "case {i} was accepted");
    }
}

#[test]
fn hash_is_stable_and_sensitive() {
    let a = scenario("duffing_invasive");
    assert_eq!(a.hash(), scenario("duffing_invasive").hash());
    assert_eq!(a.hash().len(), 64);
    let b = a.clone().with_seed(2);
    assert_ne!(a.hash(), b.hash());
    let r = a.resolve().unwrap();
    assert_eq!(r.sim.hash, a.hash());
    assert_eq!(r.sim.run().unwrap().meta.scenario_hash, a.hash());
}

#[test]
fn seed_changes_the_perturbed_reference() {
    let a = scenario("duffing_invasive").resolve().unwrap();
    let b = scenario("duffing_invasive").with_seed(2).resolve().unwrap();
    let c = scenario("duffing_invasive").resolve().unwrap();
    let coeffs = |r: &adaptive_cbc::scenario::Resolved| r.sim.reference.as_ref().unwrap().signal().to_coefficients(7);
    assert_ne!(coeffs(&a), coeffs(&b));
    assert_eq!(coeffs(&a), coeffs(&c));
}

#[test]
fn toml_and_json_round_trip() {
    let sc = scenario("cross_beam_partial");
    let back = Scenario::from_toml(&sc.to_toml().unwrap()).unwrap();
    assert_eq!(back.hash(), sc.hash());
    let json = serde_json::to_string(&sc).unwrap();
    assert_eq!(Scenario::from_json(&json).unwrap().hash(), sc.hash());
}

#[test]
fn reference_files_resolve_relative_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ref.json"), builtin_signal("duffing").unwrap().to_json().unwrap()).unwrap();
    let text = MINIMAL.replace("kind = \"builtin\"\nrefine = false", "kind = \"file\"\npath = \"ref.json\"");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, text).unwrap();
    let r = Scenario::load(&cfg).unwrap().resolve().unwrap();
    assert_eq!(r.sim.reference.unwrap().signal(), &builtin_signal("duffing").unwrap());
}

#[test]
fn json_configs_load() {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario::from_toml(MINIMAL).unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&sc).unwrap()).unwrap();
    assert_eq!(Scenario::load(&path).unwrap().hash(), sc.hash());
}
