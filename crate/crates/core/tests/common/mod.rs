#![allow(dead_code)]

use std::path::PathBuf;

use adaptive_cbc::scenario::{Resolved, Scenario};

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(&config_path(name)).unwrap_or_else(|e| panic!("loading {name}: {e}"))
}

pub fn resolved(name: &str) -> Resolved {
    scenario(name).resolve().unwrap_or_else(|e| panic!("resolving {name}: {e}"))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
