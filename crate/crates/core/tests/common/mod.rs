#![allow(dead_code)]

use std::path::PathBuf;

use elnet::scenario::{load_scenario, Scenario};

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn load(name: &str) -> Scenario {
    load_scenario(scenarios_dir().join(format!("{name}.json"))).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn shipped() -> Vec<Scenario> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(scenarios_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_scenario(p).unwrap()).collect()
}

/// Composite trapezoidal rule.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}
