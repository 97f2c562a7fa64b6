use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dads_cli::{
    cmd_certify, cmd_compare, cmd_equilibria, cmd_simulate, cmd_sweep, cmd_verify, expand_sweep, parse_box, ExitStatus,
    RunManifest, SweepAxis, SweepSpec, VerifyOptions, MANIFEST_FILE, TRAJECTORY_FILE,
};
use serde_json::{json, Value};

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dads"))
}

fn short_foil(t_end: f64) -> Value {
    json!({
        "label": "foil_short",
        "plant": "scalar_3_7",
        "controller": {"type": "no_deadzone", "k1": 1.0, "k2": 1.0, "k3": 1.0, "k4": 1.0, "m": 1.0, "sigma": 1.0},
        "theta": [3.0],
        "x0": [1.0],
        "adapted0": [0.0],
        "t_end": t_end,
        "solver": {"method": "rk4_fixed", "dt": 1e-3},
        "outputs": {"stride": 1}
    })
}

fn short_dads(t_end: f64, gamma: f64) -> Value {
    let mut v: Value =
        serde_json::from_str(&fs::read_to_string(scenarios().join("example1_dads_free.json")).unwrap()).unwrap();
    v["t_end"] = json!(t_end);
    v["controller"]["gamma"] = json!(gamma);
    v["solver"] = json!({"method": "rk4_fixed", "dt": 1e-3});
    v
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

#[test]
fn exit_codes_are_stable() {
    assert_eq!(ExitStatus::Success.code(), 0);
    assert_eq!(ExitStatus::BoundFailure.code(), 2);
    assert_eq!(ExitStatus::Blowup.code(), 3);
    assert_eq!(ExitStatus::ConfigError.code(), 4);
}

#[test]
fn simulate_writes_trajectory_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = write(tmp.path(), "s.json", &short_foil(1.0));
    let out = tmp.path().join("run");
    let o = cmd_simulate(&scen, &out, None).unwrap();
    assert_eq!(o.status, ExitStatus::Success);
    let csv = fs::read_to_string(out.join(TRAJECTORY_FILE)).unwrap();
    assert!(csv.starts_with("t,x1,adapted1,rho,u,V,d\n"));
    assert_eq!(csv.lines().count(), 1 + 1001);
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m, o.manifest);
    assert_eq!(m.scenario_hash.as_deref().map(str::len), Some(64));
    assert_eq!(m.artifacts, vec![TRAJECTORY_FILE, MANIFEST_FILE]);
}

#[test]
fn simulate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = write(tmp.path(), "s.json", &short_dads(0.5, 20.0));
    cmd_simulate(&scen, &tmp.path().join("a"), None).unwrap();
    cmd_simulate(&scen, &tmp.path().join("b"), None).unwrap();
    for f in [TRAJECTORY_FILE, MANIFEST_FILE] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn seed_dt_applies_only_without_explicit_solver() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = short_foil(0.2);
    v.as_object_mut().unwrap().remove("solver");
    let scen = write(tmp.path(), "s.json", &v);
    let a = cmd_simulate(&scen, &tmp.path().join("a"), Some(1e-3)).unwrap();
    let b = cmd_simulate(&scen, &tmp.path().join("b"), Some(2e-3)).unwrap();
    assert_ne!(a.manifest.scenario_hash, b.manifest.scenario_hash);
    assert_eq!(a.manifest.details["solver"]["accepted_steps"], json!(200));
    assert_eq!(b.manifest.details["solver"]["accepted_steps"], json!(100));

    let explicit = write(tmp.path(), "e.json", &short_foil(0.2));
    let c = cmd_simulate(&explicit, &tmp.path().join("c"), Some(2e-3)).unwrap();
    assert_eq!(c.manifest.details["solver"]["accepted_steps"], json!(200));
}

#[test]
fn simulate_rejects_bad_scenarios_with_config_status() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = short_foil(1.0);
    v["x0"] = json!([1.0, 2.0]);
    let scen = write(tmp.path(), "s.json", &v);
    let err = cmd_simulate(&scen, &tmp.path().join("o"), None).unwrap_err();
    assert_eq!(err.status, ExitStatus::ConfigError);

    let mut v = short_foil(1.0);
    v["unknown_key"] = json!(1);
    let scen = write(tmp.path(), "u.json", &v);
    assert_eq!(
        cmd_simulate(&scen, &tmp.path().join("o"), None).unwrap_err().status,
        ExitStatus::ConfigError
    );
    assert_eq!(
        cmd_simulate(&tmp.path().join("missing.json"), &tmp.path().join("o"), None)
            .unwrap_err()
            .status,
        ExitStatus::ConfigError
    );
}

#[test]
fn simulate_reports_blowup_unless_counterexample() {
    let tmp = tempfile::tempdir().unwrap();
    // Quadratic regressor term with no estimate to cancel it escapes in finite time.
    let mut v = json!({
        "plant": "planar_3_1",
        "design": {"type": "builtin", "name": "example1"},
        "controller": {"type": "robust", "c": 0.3, "rho_bound": 0.0},
        "theta": [0.0, 0.0, 10.0],
        "x0": [5.0, 5.0],
        "adapted0": [],
        "t_end": 5.0,
        "solver": {"method": "rk4_fixed", "dt": 1e-3, "blowup_guard": 1e4}
    });
    let scen = write(tmp.path(), "s.json", &v);
    let o = cmd_simulate(&scen, &tmp.path().join("a"), None).unwrap();
    assert_eq!(o.status, ExitStatus::Blowup);
    assert_eq!(o.manifest.exit_status, 3);
    assert!(tmp.path().join("a").join(TRAJECTORY_FILE).exists());

    v["counterexample"] = json!(true);
    let scen = write(tmp.path(), "c.json", &v);
    let o = cmd_simulate(&scen, &tmp.path().join("b"), None).unwrap();
    assert_eq!(o.status, ExitStatus::Success);
    assert!(!o.manifest.notes.is_empty());
}

#[test]
fn verify_passes_bounds_on_short_dads_run() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = write(tmp.path(), "s.json", &short_dads(2.0, 20.0));
    let out = tmp.path().join("run");
    cmd_simulate(&scen, &out, None).unwrap();
    let bounds: Vec<String> = ["transient", "2.21", "deadzone"].map(String::from).to_vec();
    let reports = tmp.path().join("reports");
    let o = cmd_verify(
        &scen,
        &out.join(TRAJECTORY_FILE),
        &bounds,
        &VerifyOptions::default(),
        Some(&reports),
    )
    .unwrap();
    assert_eq!(o.status, ExitStatus::Success, "{:?}", o.manifest);
    assert_eq!(o.manifest.checks.len(), 3);
    assert!(reports.join("reports.json").exists());
    assert!(reports.join("margins_2_20.csv").exists());
}

#[test]
fn verify_fails_on_corrupted_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = write(tmp.path(), "s.json", &short_dads(1.0, 20.0));
    let out = tmp.path().join("run");
    cmd_simulate(&scen, &out, None).unwrap();
    let path = out.join(TRAJECTORY_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // Push the log-gain far above any admissible ceiling in the last row.
    let last = lines.len() - 1;
    let mut fields: Vec<String> = lines[last].split(',').map(String::from).collect();
    fields[3] = "5.0e1".into();
    lines[last] = fields.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = cmd_verify(&scen, &path, &["2.21".to_string()], &VerifyOptions::default(), None).unwrap();
    assert_eq!(o.status, ExitStatus::BoundFailure);
    assert!(!o.manifest.checks[0].passed);
}

#[test]
fn verify_rejects_mismatched_scenario_and_empty_bounds() {
    let tmp = tempfile::tempdir().unwrap();
    let scen = write(tmp.path(), "s.json", &short_dads(0.5, 20.0));
    let other = write(tmp.path(), "o.json", &short_dads(0.5, 10.0));
    let out = tmp.path().join("run");
    cmd_simulate(&scen, &out, None).unwrap();
    let traj = out.join(TRAJECTORY_FILE);
    let opts = VerifyOptions::default();
    let e = cmd_verify(&other, &traj, &["2.20".to_string()], &opts, None).unwrap_err();
    assert_eq!(e.status, ExitStatus::ConfigError);
    let e = cmd_verify(&scen, &traj, &[], &opts, None).unwrap_err();
    assert_eq!(e.status, ExitStatus::ConfigError);
    let e = cmd_verify(&scen, &traj, &["9.99".to_string()], &opts, None).unwrap_err();
    assert_eq!(e.status, ExitStatus::ConfigError);
    // Leakage check on a deadzone law is a configuration error.
    let e = cmd_verify(&scen, &traj, &["2.8".to_string()], &opts, None).unwrap_err();
    assert_eq!(e.status, ExitStatus::ConfigError);
}

#[test]
fn certify_reports_pass_and_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let design = scenarios().join("designs/example1_design.json");
    let o = cmd_certify(&design, "A", "5", 41, None, None, None, Some(tmp.path())).unwrap();
    assert_eq!(o.status, ExitStatus::Success);
    assert!(tmp.path().join("certificate.json").exists());

    let o = cmd_certify(&design, "2.17", "5", 41, None, Some(1.0), None, None).unwrap();
    assert_eq!(o.status, ExitStatus::Success);
    let o = cmd_certify(&design, "2.17", "5", 41, None, Some(3.0), None, None).unwrap();
    assert_eq!(o.status, ExitStatus::BoundFailure);
    let named = cmd_certify(&design, "quadratic-decrease", "5", 41, None, Some(3.0), None, None).unwrap();
    assert_eq!(named.manifest.details, o.manifest.details);

    let strong = scenarios().join("designs/example1_design_eta4.json");
    let o = cmd_certify(&strong, "B", "5", 41, None, None, Some(10.0), None).unwrap();
    assert_eq!(o.status, ExitStatus::BoundFailure);
    assert!(o.manifest.details.get("zeta_estimate").is_some());

    let e = cmd_certify(&design, "D", "5", 41, None, None, None, None).unwrap_err();
    assert_eq!(e.status, ExitStatus::ConfigError);
}

#[test]
fn bound_names_map_to_ids() {
    assert_eq!(dads_cli::canonical_bound_id("transient"), Some("2.20"));
    assert_eq!(dads_cli::canonical_bound_id("2.20"), Some("2.20"));
    assert_eq!(dads_cli::canonical_bound_id("2.13"), Some("2.12"));
    assert_eq!(dads_cli::canonical_bound_id("radius-limsup"), Some("2.22"));
    assert_eq!(dads_cli::canonical_bound_id("9.99"), None);
    for (id, name) in dads_cli::BOUND_NAMES {
        assert_eq!(dads_cli::canonical_bound_id(name), Some(id));
    }
}

#[test]
fn box_parsing() {
    let g = parse_box("2.5", 2, 11).unwrap();
    assert_eq!(g.lower, vec![-2.5, -2.5]);
    assert_eq!(g.upper, vec![2.5, 2.5]);
    let g = parse_box("-1:2, 0:3", 2, 11).unwrap();
    assert_eq!(g.lower, vec![-1.0, 0.0]);
    assert_eq!(g.upper, vec![2.0, 3.0]);
    assert!(parse_box("-1:2", 2, 11).is_err());
    assert!(parse_box("3:1,0:1", 2, 11).is_err());
    assert!(parse_box("-4", 2, 11).is_err());
    assert!(parse_box("a:b,0:1", 2, 11).is_err());
}

#[test]
fn compare_aligns_norms() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write(tmp.path(), "a.json", &short_dads(1.0, 20.0));
    let b = write(tmp.path(), "b.json", &short_dads(1.0, 5.0));
    let out = tmp.path().join("cmp");
    let o = cmd_compare(&a, &b, &out, 0.4, None).unwrap();
    assert_eq!(o.status, ExitStatus::Success);
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert!(csv.starts_with("t,norm_x_a,norm_x_b\n"));
    assert_eq!(csv.lines().count(), 1 + 101);
    let first: Vec<f64> = csv
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(first[0], 0.0);
    assert!((first[1] - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(first[1], first[2]);
    assert!(out.join("summary.json").exists());

    let c = write(tmp.path(), "c.json", &short_dads(2.0, 5.0));
    let e = cmd_compare(&a, &c, &tmp.path().join("x"), 0.4, None).unwrap_err();
    assert_eq!(e.status, ExitStatus::ConfigError);
}

#[test]
fn sweep_expansion_is_row_major() {
    let spec = SweepSpec {
        base: json!({}),
        axes: vec![
            SweepAxis {
                path: "controller.gamma".into(),
                values: vec![json!(1), json!(2)],
            },
            SweepAxis {
                path: "x0.1".into(),
                values: vec![json!(0.0), json!(0.5), json!(1.0)],
            },
        ],
    };
    let base = json!({"controller": {"gamma": 0}, "x0": [0.0, 0.0]});
    let cells = expand_sweep(&spec, &base).unwrap();
    assert_eq!(cells.len(), 6);
    assert_eq!(cells[0].1["controller"]["gamma"], json!(1));
    assert_eq!(cells[1].1["x0"], json!([0.0, 0.5]));
    assert_eq!(cells[5].1["controller"]["gamma"], json!(2));
    assert_eq!(cells[5].1["x0"], json!([0.0, 1.0]));

    let empty = SweepSpec {
        base: json!({}),
        axes: vec![SweepAxis {
            path: "t_end".into(),
            values: vec![],
        }],
    };
    assert!(expand_sweep(&empty, &base).is_err());
    let none = SweepSpec {
        base: json!({}),
        axes: vec![],
    };
    assert!(expand_sweep(&none, &base).is_err());
}

#[test]
fn sweep_runs_cells_in_parallel_with_identical_results() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = json!({
        "base": short_dads(0.5, 20.0),
        "axes": [
            {"path": "controller.gamma", "values": [5.0, 20.0]},
            {"path": "controller.lambda", "values": [0.0, 1.0]}
        ]
    });
    let spec_path = write(tmp.path(), "sweep.json", &spec);
    let serial = cmd_sweep(&spec_path, &tmp.path().join("s1"), 1, None).unwrap();
    let parallel = cmd_sweep(&spec_path, &tmp.path().join("s4"), 4, None).unwrap();
    assert_eq!(serial.manifest, parallel.manifest);
    // Half a second is too short for the tail limsup estimates, so the status follows the checks.
    let all_pass = serial.manifest.checks.iter().all(|c| c.passed);
    let expected = if all_pass {
        ExitStatus::Success
    } else {
        ExitStatus::BoundFailure
    };
    assert_eq!(serial.status, expected);
    assert_eq!(serial.manifest.checks.len(), 16);
    let a = fs::read_to_string(tmp.path().join("s1/sweep.csv")).unwrap();
    let b = fs::read_to_string(tmp.path().join("s4/sweep.csv")).unwrap();
    assert_eq!(a, b);
    let rows: Vec<Vec<&str>> = a.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(
        rows[0],
        vec![
            "cell",
            "controller.gamma",
            "controller.lambda",
            "tail_sup_norm_x",
            "final_rho",
            "regulation_threshold",
            "truncated",
            "passed"
        ]
    );
    assert_eq!(rows.len(), 5);
    // The threshold column is only filled when lambda > 0.
    assert_eq!(rows[1][5], "");
    let thr: f64 = rows[2][5].parse().unwrap();
    assert!(thr > 0.0);
    for cell in ["cell_000", "cell_003"] {
        for f in [TRAJECTORY_FILE, "report.json", MANIFEST_FILE] {
            assert!(tmp.path().join("s1").join(cell).join(f).exists());
        }
    }
}

#[test]
fn sweep_base_path_is_relative_to_spec() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "base.json", &short_foil(0.2));
    let spec_path = write(
        tmp.path(),
        "sweep.json",
        &json!({"base": "base.json", "axes": [{"path": "x0.0", "values": [0.5, 1.5]}]}),
    );
    let o = cmd_sweep(&spec_path, &tmp.path().join("o"), 2, None).unwrap();
    assert_eq!(o.status, ExitStatus::Success);
    let bad = write(tmp.path(), "bad.json", &json!({"base": "base.json", "axes": []}));
    assert_eq!(
        cmd_sweep(&bad, &tmp.path().join("p"), 1, None).unwrap_err().status,
        ExitStatus::ConfigError
    );
}

#[test]
fn equilibria_command() {
    let o = cmd_equilibria(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 3.0).unwrap();
    let d = &o.manifest.details;
    assert_eq!(d["origin_only"], json!(false));
    let rho = d["rho_star"].as_f64().unwrap();
    assert!((rho + rho * rho + rho.powi(3) - 2.0).abs() < 1e-12);
    let o = cmd_equilibria(2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
    assert_eq!(o.manifest.details["origin_only"], json!(true));
    assert_eq!(
        cmd_equilibria(0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap_err().status,
        ExitStatus::ConfigError
    );
}

#[test]
fn binary_exit_codes_and_env_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = short_foil(0.1);
    v.as_object_mut().unwrap().remove("solver");
    let scen = write(tmp.path(), "s.json", &v);
    let out = tmp.path().join("run");
    let status = bin()
        .args(["simulate", "--scenario"])
        .arg(&scen)
        .arg("--out")
        .arg(&out)
        .env("DADS_SEED_DT", "1e-2")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    let m: RunManifest = serde_json::from_slice(&status.stdout).unwrap();
    assert_eq!(m.details["solver"]["accepted_steps"], json!(10));

    let status = bin()
        .args(["verify", "--scenario"])
        .arg(&scen)
        .arg("--traj")
        .arg(out.join(TRAJECTORY_FILE))
        .args(["--bounds", "2.20"])
        .env("DADS_SEED_DT", "1e-2")
        .output()
        .unwrap();
    // The scalar plant under the no-deadzone law has no gain estimate to check.
    assert_eq!(status.status.code(), Some(4));

    let status = bin()
        .args(["certify", "--design"])
        .arg(scenarios().join("designs/example1_design.json"))
        .args([
            "--assumption",
            "2.17",
            "--box",
            "-5:5,-5:5",
            "--res",
            "41",
            "--eta",
            "3",
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    let status = bin()
        .args(["simulate", "--scenario", "/nonexistent.json", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(4));
}
