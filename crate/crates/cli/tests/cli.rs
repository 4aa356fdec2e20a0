use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use opengrape::environment::planck_density;
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_opengrape"))
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).arg("--quiet").output().unwrap()
}

fn run_config(cmd: &str, cfg: &Value, dir: &Path) -> Output {
    fs::create_dir_all(dir).unwrap();
    let path = dir.join("input.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    run(&[cmd, "--config", path.to_str().unwrap()], &dir.join("out"))
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

fn preset(name: &str) -> Value {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--preset", name], dir.path());
    assert!(o.status.success() || name.contains("spectrum"));
    json_file(&dir.path().join("config.json"))
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn reachable_preset_converges() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["optimize", "--preset", "fig3-reachable"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = json_file(&dir.path().join("summary.json"));
    assert_eq!(s["termination"], "ObjectiveBelowEps1");
    assert!(s["final_objective"].as_f64().unwrap() <= 1e-4);

    let trace = csv(&dir.path().join("trace.csv"));
    assert!(trace.windows(2).all(|w| w[1][1] < w[0][1]));
    let controls = csv(&dir.path().join("controls.csv"));
    assert_eq!(controls.len(), 10);
    for row in &controls {
        assert_eq!(row[4], row[3] * row[3]);
    }
}

#[test]
fn unreachable_preset_stops_on_gradient() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["optimize", "--preset", "fig4-unreachable-plus"], dir.path());
    assert_eq!(code(&o), 0);
    let s = json_file(&dir.path().join("summary.json"));
    assert_eq!(s["termination"], "GradientBelowEps2");
    let f = s["final_objective"].as_f64().unwrap();
    assert!((1e-4..=1e-2).contains(&f), "{f}");
}

#[test]
fn optimize_is_byte_stable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(code(&run(&["optimize", "--preset", "fig3-reachable-m100"], d.path())), 0);
    }
    for f in ["trace.csv", "controls.csv", "summary.json", "config.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn echoed_config_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["optimize", "--preset", "fig4-unreachable-minus"], &dir.path().join("a"))), 0);
    let echoed = dir.path().join("a/config.json");
    let o = run(&["optimize", "--config", echoed.to_str().unwrap()], &dir.path().join("b"));
    assert_eq!(code(&o), 0);
    for f in ["trace.csv", "controls.csv", "summary.json", "config.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn optimal_controls_replay_to_stored_state() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["optimize", "--preset", "fig3-reachable"], dir.path())), 0);
    let stored = json_file(&dir.path().join("summary.json"))["final_state"]["bloch"].clone();
    let controls = csv(&dir.path().join("controls.csv"));
    let mut cfg = preset("fig3-reachable");
    cfg["initial_guess"] = json!({
        "kind": "explicit",
        "u": controls.iter().map(|r| r[2]).collect::<Vec<_>>(),
        "w": controls.iter().map(|r| r[3]).collect::<Vec<_>>(),
    });
    assert_eq!(code(&run_config("simulate", &cfg, dir.path())), 0);
    let replay = json_file(&dir.path().join("out/trajectory.json"))["final_state"]["bloch"].clone();
    for k in 0..3 {
        let (a, b) = (stored[k].as_f64().unwrap(), replay[k].as_f64().unwrap());
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
}

#[test]
fn zero_control_decays_to_ground_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("fig3-reachable");
    cfg["initial_state"] = json!({ "bloch": [0.6, 0.0, -0.8] });
    cfg["grid"] = json!({ "uniform": { "total_time": 5000.0, "segments": 40 } });
    cfg["initial_guess"] = json!({ "kind": "constant", "u": 0.0, "w": 0.0 });
    assert_eq!(code(&run_config("simulate", &cfg, dir.path())), 0);
    let rows = csv(&dir.path().join("out/trajectory.csv"));
    assert_eq!(rows.len(), 41);
    assert!(rows.windows(2).all(|w| w[1][3] >= w[0][3]));
    let last = rows.last().unwrap();
    assert!((last[3] - 1.0).abs() < 1e-6 && last[1].hypot(last[2]) < 1e-6, "{last:?}");
}

#[test]
fn empty_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("fig3-reachable");
    cfg["grid"] = json!({ "uniform": { "total_time": 5.0, "segments": 0 } });
    let o = run_config("simulate", &cfg, dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("segments"));
}

#[test]
fn parse_errors_carry_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{\n  \"version\": 1,\n  \"seed\": oops\n}\n").unwrap();
    let o = run(&["simulate", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let mut cfg = preset("fig3-reachable");
    cfg["optimizer"]["stepsize"] = json!(1.0);
    let o = run_config("optimize", &cfg, dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stepsize"));
}

#[test]
fn max_iterations_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("fig3-reachable");
    cfg["optimizer"]["max_iters"] = json!(3);
    let o = run_config("optimize", &cfg, dir.path());
    assert_eq!(code(&o), 3);
    assert_eq!(json_file(&dir.path().join("out/summary.json"))["termination"], "MaxIters");
}

#[test]
fn gradcheck_passes_on_reference_parameters() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["gradcheck", "--preset", "fig3-reachable-m100"], dir.path())), 0);
    let r = json_file(&dir.path().join("gradcheck.json"));
    assert!(r["max_relative_error"].as_f64().unwrap() <= 1e-5);
    assert_eq!(r["components"], 200);
}

#[test]
fn corrupted_gradient_fails_gradcheck() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("fig3-reachable");
    cfg["test_hooks"]["corrupt_gradient"] = json!(true);
    assert_eq!(code(&run_config("gradcheck", &cfg, dir.path())), 4);
}

#[test]
fn zero_w_components_are_exact_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("fig3-reachable");
    cfg["initial_guess"] = json!({ "kind": "explicit", "u": [0.3, -1.0, 2.0, 0.5], "w": [0.0, 0.7, 0.0, 1.1] });
    cfg["grid"] = json!({ "uniform": { "total_time": 3.0, "segments": 4 } });
    assert_eq!(code(&run_config("gradcheck", &cfg, dir.path())), 0);
    let text = fs::read_to_string(dir.path().join("out/gradcheck.csv")).unwrap();
    for line in text.lines().filter(|l| l.contains(",w,0,") || l.contains(",w,2,")) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[3].parse::<f64>().unwrap(), 0.0, "{line}");
        assert_eq!(cols[4].parse::<f64>().unwrap(), 0.0, "{line}");
    }
}

#[test]
fn superoperator_backend_matches_bloch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("fig3-reachable");
    assert_eq!(code(&run_config("optimize", &cfg, &dir.path().join("a"))), 0);
    cfg["backend"] = json!("superoperator");
    assert_eq!(code(&run_config("optimize", &cfg, &dir.path().join("b"))), 0);
    let a = csv(&dir.path().join("a/out/trace.csv"));
    let b = csv(&dir.path().join("b/out/trace.csv"));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert!((x[1] - y[1]).abs() <= 1e-9 * (1.0 + x[1].abs()));
    }
}

#[test]
fn three_level_system_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "version": 1,
        "backend": "superoperator",
        "system": {
            "kind": "nlevel",
            "h0": [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.3]],
            "controls": [[[0.0, 0.1, 0.0], [0.1, 0.0, 0.1], [0.0, 0.1, 0.0]]],
            "einstein": [[0.0, 0.01, 0.002], [0.0, 0.0, 0.01], [0.0, 0.0, 0.0]]
        },
        "initial_state": { "diagonal": [1.0, 0.0, 0.0] },
        "objective": { "kind": "state_transfer", "target": { "diagonal": [0.2, 0.5, 0.3] } },
        "grid": { "uniform": { "total_time": 5.0, "segments": 6 } },
        "initial_guess": { "kind": "random", "u_max": 2.0, "w_max": 1.0 },
        "optimizer": { "max_iters": 20, "eps1": 1e-12, "eps2": 0.0 }
    });
    assert_eq!(code(&run_config("simulate", &cfg, &dir.path().join("s"))), 0);
    let rows = csv(&dir.path().join("s/out/trajectory.csv"));
    for r in &rows {
        // rho_00, rho_11, rho_22 real parts sit at columns 1, 9, 17.
        assert!((r[1] + r[9] + r[17] - 1.0).abs() < 1e-10);
    }
    assert_eq!(code(&run_config("gradcheck", &cfg, &dir.path().join("g"))), 0);
    let o = run_config("optimize", &cfg, &dir.path().join("o"));
    assert!(matches!(code(&o), 0 | 3));
    let header = fs::read_to_string(dir.path().join("o/out/controls.csv")).unwrap();
    assert!(header.starts_with("segment,t_left,u0,w_01,w_02,w_12,n_01,n_02,n_12\n"));
}

#[test]
fn seed_controls_random_guess() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("fig3-reachable");
    cfg["initial_guess"] = json!({ "kind": "random", "u_max": 1.0, "w_max": 1.0 });
    let path = dir.path().join("cfg.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let p = path.to_str().unwrap();
    for (sub, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        assert_eq!(code(&run(&["simulate", "--config", p, "--seed", seed], &dir.path().join(sub))), 0);
    }
    let read = |s: &str| fs::read(dir.path().join(s).join("trajectory.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn planck_spectrum_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["spectrum", "--preset", "planck-spectrum"], dir.path())), 0);
    let rows = csv(&dir.path().join("spectrum.csv"));
    assert_eq!(rows[0][0], 0.01);
    assert_eq!(rows.last().unwrap()[0], 12.0);
    for r in &rows {
        assert_eq!(r[1], planck_density(r[0], 1.0));
    }
}

#[test]
fn filtered_spectrum_peaks_at_lower_window() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["spectrum", "--preset", "fig1-spectrum"], dir.path())), 0);
    let rows = csv(&dir.path().join("spectrum.csv"));
    let near = |c: f64| rows.iter().filter(|r| (r[0] - c).abs() < 0.5).map(|r| r[1]).fold(0.0, f64::max);
    assert!(near(2.0) > near(6.0));
}

#[test]
fn negative_variance_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset("fig1-spectrum");
    cfg["spectrum"]["density"]["variance"] = json!(-0.5);
    assert_eq!(code(&run_config("spectrum", &cfg, dir.path())), 2);
}

#[test]
fn parallel_sweep_matches_single_runs() {
    let dir = tempfile::tempdir().unwrap();
    let names = ["fig3-reachable", "fig4-unreachable-plus", "fig4-unreachable-minus"];
    let mut args = vec!["optimize", "--jobs", "3"];
    for n in names {
        args.extend(["--preset", n]);
    }
    assert_eq!(code(&run(&args, &dir.path().join("sweep"))), 0);
    for n in names {
        let single = dir.path().join(n);
        assert_eq!(code(&run(&["optimize", "--preset", n], &single)), 0);
        assert_eq!(
            fs::read(single.join("trace.csv")).unwrap(),
            fs::read(dir.path().join("sweep").join(n).join("trace.csv")).unwrap()
        );
    }
}

#[test]
fn missing_source_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["simulate"], dir.path())), 2);
    assert_eq!(code(&run(&["simulate", "--preset", "nope"], dir.path())), 2);
}
