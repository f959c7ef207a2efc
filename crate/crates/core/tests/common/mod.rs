//! Shared fixtures for the integration tests: bundled scenarios, cached
//! solves and the per-criterion report line.

#![allow(dead_code)]

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use lieplex::optimizer::{solve, transcribe, SolveResult, TranscribedNlp};
use lieplex::scenario::Scenario;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::from_path(scenario_path(name)).expect("bundled scenario parses")
}

pub const BUNDLED: [&str; 6] = [
    "trivial",
    "single_satellite",
    "satellites_smoke",
    "satellites",
    "vehicles_smoke",
    "vehicles",
];

pub struct Solved {
    pub scenario: Scenario,
    pub nlp: TranscribedNlp,
    pub result: SolveResult,
    pub elapsed: Duration,
}

/// Tests that time solves hold this lock, so that wall-clock figures are not
/// inflated by sibling tests sharing the machine.
pub fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Solves a bundled scenario once per test binary.
pub fn solved(name: &str) -> &'static Solved {
    static CACHE: OnceLock<Mutex<HashMap<String, &'static Solved>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(s) = cache.lock().unwrap().get(name) {
        return s;
    }
    let scenario = scenario(name);
    let nlp = transcribe(&scenario).expect("transcription");
    let start = Instant::now();
    let result = solve(&nlp, &scenario.solver).expect("solver runs");
    let elapsed = start.elapsed();
    let entry: &'static Solved = Box::leak(Box::new(Solved {
        scenario,
        nlp,
        result,
        elapsed,
    }));
    *cache.lock().unwrap().entry(name.to_string()).or_insert(entry)
}

/// Writes one result line past the test harness's output capture.
pub fn report(criterion: usize, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {criterion:>2} {verdict}  {title}: {detail}");
}
