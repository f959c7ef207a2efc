use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lieplex"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn summary(dir: &Path) -> toml::Table {
    fs::read_to_string(dir.join("summary.toml")).unwrap().parse().unwrap()
}

fn float(table: &toml::Table, key: &str) -> f64 {
    table[key].as_float().unwrap_or_else(|| panic!("{key} is not a float"))
}

/// Parses a CSV file into its header and numeric rows; blank cells become NaN.
fn csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    fs::write(&path, text).unwrap();
    path
}

const PAIR: &str = r#"
name = "pair"
horizon = 20
step = 0.1

[[plant]]
kind = "satellite"
torque_bound = 0.05
momentum_bound = 0.1
initial = { angle = 0.3, momentum = 0.0 }

[[plant]]
kind = "satellite"
torque_bound = 0.05
momentum_bound = 0.1
initial = { angle = -1.0, momentum = 0.002 }
"#;

fn controls_file(dir: &Path, rows: impl Iterator<Item = (f64, f64)>) -> PathBuf {
    let mut text = String::from("t,tau1,tau2\n");
    for (t, (a, b)) in rows.enumerate() {
        text.push_str(&format!("{t},{a},{b}\n"));
    }
    let path = dir.join("controls.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn trivial_scenario_solves_verifies_and_replays() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("solve");
    let s = scenario("trivial");
    let solved = run(&["solve", arg(&s), "--out", arg(&out)]);
    assert_eq!(code(&solved), 0, "{}", String::from_utf8_lossy(&solved.stderr));
    let sum = summary(&out);
    assert_eq!(sum["status"].as_str(), Some("converged"));
    assert!(float(&sum, "objective") <= 1e-20);
    assert_eq!(fs::read_to_string(out.join("scenario.toml")).unwrap(), fs::read_to_string(&s).unwrap());

    let report = tmp.path().join("report.toml");
    let verified = run(&["verify", arg(&s), arg(&out.join("trajectory.csv")), "--report", arg(&report)]);
    assert_eq!(code(&verified), 0);
    let report: toml::Table = fs::read_to_string(report).unwrap().parse().unwrap();
    assert_eq!(report["verdict"].as_bool(), Some(true));

    let sim = tmp.path().join("sim");
    let replay = run(&["simulate", arg(&s), arg(&out.join("controls.csv")), "--out", arg(&sim)]);
    assert_eq!(code(&replay), 0);
    assert_eq!(fs::read(sim.join("trajectory.csv")).unwrap(), fs::read(out.join("trajectory.csv")).unwrap());
}

#[test]
fn solve_is_deterministic_and_replays_exactly() {
    let tmp = TempDir::new().unwrap();
    let s = scenario("satellites_smoke");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        assert_eq!(code(&run(&["solve", arg(&s), "--out", arg(dir), "--seed", "5"])), 0);
    }
    for file in ["trajectory.csv", "controls.csv", "summary.toml"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file} differs");
    }
    let sum = summary(&a);
    assert!(float(&sum, "multiplexing_residual") <= 1e-8);
    assert_eq!(sum["best_seed"].as_integer().map(|s| s >= 5), Some(true));

    let sim = tmp.path().join("sim");
    assert_eq!(code(&run(&["simulate", arg(&s), arg(&a.join("controls.csv")), "--out", arg(&sim)])), 0);
    assert_eq!(fs::read(sim.join("trajectory.csv")).unwrap(), fs::read(a.join("trajectory.csv")).unwrap());
    let sim_sum = summary(&sim);
    assert_eq!(sim_sum["multiplexed"].as_bool(), Some(true));
    assert_eq!(sim_sum["nonzero_w"].as_bool(), Some(false));
}

#[test]
fn vehicle_smoke_respects_every_control_bound() {
    let tmp = TempDir::new().unwrap();
    let s = scenario("vehicles_smoke");
    assert_eq!(code(&run(&["solve", arg(&s), "--out", arg(tmp.path())])), 0);
    let (header, rows) = csv(&tmp.path().join("trajectory.csv"));
    let bounds = [("tau", 0.025), ("phi", 0.05)];
    let mut checked = 0;
    for (c, name) in header.iter().enumerate() {
        if let Some((_, bound)) = bounds.iter().find(|(p, _)| name.starts_with(p)) {
            checked += 1;
            for row in &rows[..rows.len() - 1] {
                assert!(row[c].abs() <= bound + 1e-12, "{name} = {}", row[c]);
            }
        }
    }
    assert_eq!(checked, 6);
    assert!(float(&summary(tmp.path()), "multiplexing_residual") <= 1e-8);
}

#[test]
fn verify_rejects_a_perturbed_control() {
    let tmp = TempDir::new().unwrap();
    let s = scenario("single_satellite");
    let out = tmp.path().join("solve");
    assert_eq!(code(&run(&["solve", arg(&s), "--out", arg(&out)])), 0);
    let traj = out.join("trajectory.csv");
    assert_eq!(code(&run(&["verify", arg(&s), arg(&traj)])), 0);

    // Perturb an interior control by +0.01 and replay to keep the file consistent.
    let text = fs::read_to_string(out.join("controls.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let row = 50;
    let mut cells: Vec<String> = lines[row + 1].split(',').map(String::from).collect();
    let tau: f64 = cells[1].parse().unwrap();
    cells[1] = format!("{:.16e}", tau + 0.01);
    lines[row + 1] = cells.join(",");
    let controls = tmp.path().join("perturbed.csv");
    fs::write(&controls, lines.join("\n") + "\n").unwrap();
    let sim = tmp.path().join("sim");
    assert_eq!(code(&run(&["simulate", arg(&s), arg(&controls), "--out", arg(&sim)])), 0);

    let report = tmp.path().join("report.toml");
    let verified = run(&["verify", arg(&s), arg(&sim.join("trajectory.csv")), "--report", arg(&report)]);
    assert_eq!(code(&verified), 4);
    assert!(String::from_utf8_lossy(&verified.stderr).contains("stationarity"));
    let report: toml::Table = fs::read_to_string(report).unwrap().parse().unwrap();
    assert_eq!(report["verdict"].as_bool(), Some(false));
}

#[test]
fn verify_reports_mismatched_trajectory() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("solve");
    assert_eq!(code(&run(&["solve", arg(&scenario("trivial")), "--out", arg(&out)])), 0);
    let traj = out.join("trajectory.csv");
    assert_eq!(code(&run(&["verify", arg(&scenario("single_satellite")), arg(&traj)])), 2);
    fs::write(tmp.path().join("junk.csv"), "not,a,trajectory\n").unwrap();
    assert_eq!(code(&run(&["verify", arg(&scenario("trivial")), arg(&tmp.path().join("junk.csv"))])), 2);
    assert_eq!(code(&run(&["verify", arg(&scenario("trivial")), arg(&traj), "--tol-scale", "0"])), 2);
}

#[test]
fn invalid_scenario_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    let bad = write_scenario(tmp.path(), "name = \"x\"\nhorizon = 0\nstep = 0.1\n[[plant]]\nkind = \"satellite\"\n");
    assert_eq!(code(&run(&["solve", arg(&bad), "--out", arg(&tmp.path().join("o"))])), 2);
    let missing = tmp.path().join("missing.toml");
    assert_ne!(code(&run(&["solve", arg(&missing), "--out", arg(&tmp.path().join("o"))])), 0);
}

#[test]
fn unreachable_target_exits_with_three_and_still_writes() {
    let tmp = TempDir::new().unwrap();
    let s = write_scenario(
        tmp.path(),
        r#"
name = "too-far"
horizon = 10
step = 0.1

[[plant]]
kind = "satellite"
torque_bound = 0.05
momentum_bound = 0.1
initial = { angle_deg = 0.0 }
terminal = { angle_deg = 60.0 }

[solver]
starts = 1
outer_iterations = 8
"#,
    );
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["solve", arg(&s), "--out", arg(&out)])), 3);
    assert_eq!(summary(&out)["status"].as_str(), Some("not_converged"));
    assert!(out.join("trajectory.csv").exists());
}

#[test]
fn zero_controls_give_a_constant_trajectory() {
    let tmp = TempDir::new().unwrap();
    let s = write_scenario(tmp.path(), &PAIR.replace("momentum = 0.002", "momentum = 0.0"));
    let controls = controls_file(tmp.path(), std::iter::repeat_n((0.0, 0.0), 20));
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["simulate", arg(&s), arg(&controls), "--out", arg(&out)])), 0);
    let (header, rows) = csv(&out.join("trajectory.csv"));
    assert_eq!(rows.len(), 21);
    let state_columns = column(&header, "tau1");
    for row in &rows {
        assert_eq!(row[..state_columns][1..], rows[0][..state_columns][1..]);
    }
    assert_eq!(rows[0][column(&header, "angle1")], 0.3);
}

#[test]
fn constant_torque_ramps_momentum() {
    let tmp = TempDir::new().unwrap();
    let s = write_scenario(tmp.path(), PAIR);
    let controls = controls_file(tmp.path(), std::iter::repeat_n((0.01, 0.0), 20));
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["simulate", arg(&s), arg(&controls), "--out", arg(&out)])), 0);
    let (header, rows) = csv(&out.join("trajectory.csv"));
    let (m1, m2) = (column(&header, "momentum1"), column(&header, "momentum2"));
    for (t, row) in rows.iter().enumerate() {
        assert!((row[m1] - 0.1 * 0.01 * t as f64).abs() <= 1e-15);
        assert_eq!(row[m2], 0.002);
    }
    assert_eq!(summary(&out)["multiplexed"].as_bool(), Some(true));
}

#[test]
fn shared_channel_is_flagged() {
    let tmp = TempDir::new().unwrap();
    let s = write_scenario(tmp.path(), PAIR);
    let controls = controls_file(
        tmp.path(),
        (0..20).map(|t| if t == 7 { (0.01, 0.02) } else { (0.0, 0.0) }),
    );
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["simulate", arg(&s), arg(&controls), "--out", arg(&out)])), 0);
    let sum = summary(&out);
    assert_eq!(sum["multiplexed"].as_bool(), Some(false));
    assert_eq!(sum["nonzero_w"].as_bool(), Some(true));
    assert_eq!(sum["violating_steps"].as_array().unwrap().len(), 1);
    let (header, rows) = csv(&out.join("trajectory.csv"));
    let (w1, w2) = (column(&header, "w1"), column(&header, "w2"));
    assert_eq!(rows[7][w1], 0.0);
    assert!(rows[8][w1] != 0.0 && rows[8][w2] != 0.0);
    assert_eq!(rows[20][w1], rows[8][w1]);
}

#[test]
fn malformed_controls_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let s = write_scenario(tmp.path(), PAIR);
    let short = controls_file(tmp.path(), std::iter::repeat_n((0.0, 0.0), 19));
    assert_eq!(code(&run(&["simulate", arg(&s), arg(&short), "--out", arg(&tmp.path().join("o"))])), 2);
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "t,tau1,tau2\n0,x,0\n").unwrap();
    assert_eq!(code(&run(&["simulate", arg(&s), arg(&bad), "--out", arg(&tmp.path().join("o"))])), 2);
}

#[test]
fn chart_violation_writes_the_partial_trajectory() {
    let tmp = TempDir::new().unwrap();
    // Momentum bound far above the chart limit 1/h lets the torque push |hM| past one.
    let s = write_scenario(
        tmp.path(),
        r#"
name = "spin"
horizon = 20
step = 0.5

[[plant]]
kind = "satellite"
torque_bound = 2.0
momentum_bound = 1.99
initial = { momentum = 1.0 }
"#,
    );
    let controls = tmp.path().join("c.csv");
    let mut text = String::from("t,tau1\n");
    for t in 0..20 {
        text.push_str(&format!("{t},2.0\n"));
    }
    fs::write(&controls, text).unwrap();
    let out = tmp.path().join("o");
    let sim = run(&["simulate", arg(&s), arg(&controls), "--out", arg(&out)]);
    assert_eq!(code(&sim), 5, "{}", String::from_utf8_lossy(&sim.stderr));
    let (_, rows) = csv(&out.join("trajectory.csv"));
    assert!(rows.len() > 1 && rows.len() < 21);
    assert!(summary(&out)["chart_violation"].as_str().is_some());
}
