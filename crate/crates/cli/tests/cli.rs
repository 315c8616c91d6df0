use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios").join(name)
}

fn agcosim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agcosim")).args(args).output().expect("binary runs")
}

fn run_in(out: &Path, sub: &str, scn: &str, extra: &[&str]) -> Output {
    let scn = scenario(scn);
    let mut args = vec![sub, "--scenario", scn.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    agcosim(&args)
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap_or("").to_string()).collect()
}

#[test]
fn simulate_kinematic_demo_logs_one_row_per_period() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "simulate", "kinematic_demo.scn", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    // 20 s cap at 0.02 s periods, plus the initial row and the header.
    assert_eq!(trace.lines().count(), 1001 + 1);
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("termination = DurationCap"));
    assert!(fs::read_to_string(dir.path().join("path.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn malformed_unit_is_a_config_error_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("bad.scn");
    fs::write(&scn, "[vehicle]\nwheelbase = 1.2 m\nmass = 300 kgg\n").unwrap();
    let out = agcosim(&["simulate", "--scenario", scn.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn rollover_exits_with_fault_and_trace_ends_at_fault_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "simulate", "rollover.scn", &[]);
    assert_eq!(out.status.code(), Some(2));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let events = column(&trace, "event");
    assert!(events.last().unwrap().starts_with("fault:rollover"));
    assert!(events[..events.len() - 1].iter().all(|e| !e.contains("fault")));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(agcosim(&["simulate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "sweep", "aca_sweep.scn", &["--criterion", "fastest"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run_in(dir.path(), "sweep", "kinematic_demo.scn", &[]);
    assert_eq!(out.status.code(), Some(1));
    let out = run_in(dir.path(), "feeding-study", "kinematic_demo.scn", &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_output_is_byte_identical_across_invocations() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(run_in(d.path(), "ekf-demo", "feeding.scn", &["--seed", "5"]).status.code(), Some(0));
    }
    for f in ["trace.csv", "ekf.txt", "path.svg"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_writes_one_row_per_candidate_and_ignores_worker_count() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let crit = ["--criterion", "max-xte=0.3"];
    let out = run_in(a.path(), "sweep", "aca_sweep.scn", &[&crit[..], &["--workers", "1"]].concat());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run_in(b.path(), "sweep", "aca_sweep.scn", &[&crit[..], &["--workers", "4"]].concat());
    assert_eq!(out.status.code(), Some(0));

    let results = fs::read_to_string(a.path().join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 120 + 1);
    let viable = column(&results, "viable");
    let xte = column(&results, "max_xte");
    for (v, x) in viable.iter().zip(&xte) {
        assert_eq!(v == "true", x.parse::<f64>().unwrap() <= 0.3);
    }
    for f in ["results.csv", "boundary.txt", "boundary.svg", "paths.svg"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn refine_resweeps_speed_at_half_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "sweep", "aca_sweep.scn", &["--refine", "0.2"]);
    assert_eq!(out.status.code(), Some(0));
    let refined = fs::read_to_string(dir.path().join("results_refined.csv")).unwrap();
    let mut speeds: Vec<f64> = column(&refined, "speed").iter().map(|s| s.parse().unwrap()).collect();
    speeds.sort_by(f64::total_cmp);
    speeds.dedup();
    let steps: Vec<f64> = speeds.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(steps.iter().all(|s| (s - 0.1).abs() < 1e-9), "{speeds:?}");
}

#[test]
fn calibrate_demo_recovers_loaded_radius() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "calibrate-demo", "calibration.scn", &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("calibration.txt")).unwrap();
    let radii: Vec<f64> = text
        .lines()
        .filter_map(|l| l.split_whitespace().find_map(|f| f.strip_prefix("radius_m=")))
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(radii.len(), 3);
    for r in radii {
        assert!((r - 0.28).abs() <= 1e-3, "{r}");
    }
    assert!(text.contains("diagnostics = none"));
}

#[test]
fn dead_reckoning_belief_only_grows_uncertain_and_loses_to_full_ekf() {
    let (full, dr) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run_in(full.path(), "ekf-demo", "feeding.scn", &[]).status.code(), Some(0));
    assert_eq!(run_in(dr.path(), "ekf-demo", "feeding.scn", &["--dead-reckoning"]).status.code(), Some(0));

    // Without updates nothing ever shrinks the covariance.
    let trace = fs::read_to_string(dr.path().join("trace.csv")).unwrap();
    let p: Vec<f64> = column(&trace, "ekf_trace_P").iter().map(|s| s.parse().unwrap()).collect();
    assert!(p.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12)));

    let final_error = |d: &Path| -> f64 {
        let text = fs::read_to_string(d.join("ekf.txt")).unwrap();
        text.lines().find_map(|l| l.strip_prefix("final_position_error_m = ")).unwrap().parse().unwrap()
    };
    assert!(final_error(full.path()) < final_error(dr.path()));
}
