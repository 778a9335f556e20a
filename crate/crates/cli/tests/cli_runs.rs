//! Command-level behavior: exit codes, schema rejection, the noiseless
//! coincidence and reach checks for simulate, and the formation command's
//! convergence bookkeeping.

use std::process::Command;

use tempfile::TempDir;
use unpctl::commands::{cmd_formation, cmd_simulate, cmd_solve_dist, RunContext};
use unpctl::config::{config_hash, Scenario};

fn ctx_from(cfg: &str, out: &std::path::Path) -> RunContext {
    let scenario = Scenario::from_json(cfg).unwrap();
    RunContext {
        config_hash: config_hash(cfg),
        out_dir: out.to_path_buf(),
        scenario,
    }
}

fn read_csv(path: &std::path::Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|c| c.to_string()).collect())
        .collect()
}

fn col_index(rows: &[Vec<String>], name: &str) -> usize {
    rows[0].iter().position(|h| h == name).unwrap()
}

#[test]
fn bad_config_exits_2_and_names_field() {
    let bin = env!("CARGO_BIN_EXE_unpctl");
    let dir = TempDir::new().unwrap();
    let cfg_path = dir.path().join("bad.json");
    std::fs::write(
        &cfg_path,
        r#"{
            "system": {"preset": "double_integrator_2d", "ts": 1.0},
            "noise": {"sigma_u2": [-0.5, 0.5], "alphas": [0.4]}
        }"#,
    )
    .unwrap();
    let out = Command::new(bin)
        .args(["solve-dist"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("sigma_u2"), "stderr: {stderr}");
}

#[test]
fn missing_config_exits_2() {
    let bin = env!("CARGO_BIN_EXE_unpctl");
    let out = Command::new(bin)
        .args(["compare", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_dist_writes_artifacts_and_dumps() {
    let dir = TempDir::new().unwrap();
    let cfg = format!(
        r#"{{
            "system": {{"preset": "double_integrator_2d", "ts": 1.0}},
            "noise": {{"sigma_u2": [0.5, 0.5], "alphas": [0.4], "seed": 5}},
            "run": {{"out_dir": "{}"}}
        }}"#,
        dir.path().display()
    );
    let ctx = ctx_from(&cfg, dir.path());
    cmd_solve_dist(&ctx, true, Some(50)).unwrap();
    for name in [
        "dist_alpha_0p4.json",
        "dist_alpha_0p4.svg",
        "p3_alpha_0p4.lp.txt",
        "samples_alpha_0p4.csv",
    ] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }
    let lp_text = std::fs::read_to_string(dir.path().join("p3_alpha_0p4.lp.txt")).unwrap();
    assert!(lp_text.starts_with("objective"));
    let samples = read_csv(&dir.path().join("samples_alpha_0p4.csv"));
    assert_eq!(samples.len(), 51);
    // u_e reconstructs theta through B1 = 0.5 I: u_e = 2 theta
    let t0: f64 = samples[1][0].parse().unwrap();
    let u0: f64 = samples[1][2].parse().unwrap();
    assert!((u0 - 2.0 * t0).abs() < 1e-9);
}

fn simulate_cfg(dir: &std::path::Path, kind: &str, horizon: usize) -> String {
    format!(
        r#"{{
            "system": {{"preset": "double_integrator_2d", "ts": 1.0}},
            "noise": {{
                "kind": "{kind}",
                "sigma_u2": [0.5, 0.5],
                "alphas": [0.8],
                "seed": 31
            }},
            "attacker": {{"mode": "kalman"}},
            "controller": {{
                "kind": "lqr",
                "q_diag": [1.0, 1.0, 1.0, 1.0],
                "r_diag": [1.0, 1.0],
                "horizon": 40,
                "x0": [0.0, 0.0, 0.0, 0.0],
                "x_target": [20.0, 20.0, 0.0, 0.0],
                "sigma_scales": [0.25, 0.5, 1.0]
            }},
            "run": {{"horizon": {horizon}, "out_dir": "{}"}}
        }}"#,
        dir.display()
    )
}

#[test]
fn simulate_noise_off_trajectories_coincide() {
    let dir = TempDir::new().unwrap();
    let cfg = simulate_cfg(dir.path(), "none", 60);
    let ctx = ctx_from(&cfg, dir.path());
    cmd_simulate(&ctx).unwrap();
    // with u_e = 0 the closed loop retraces the plan: the noisy trajectory's
    // end state hits the target like the noiseless one
    let rows = read_csv(&dir.path().join("trajectory_scale_1.csv"));
    let x0 = col_index(&rows, "x0");
    let last = rows.last().unwrap();
    let x: f64 = last[x0].parse().unwrap();
    assert!((x - 20.0).abs() < 1e-3, "end x = {x}");
    let summary = read_csv(&dir.path().join("simulate_summary.csv"));
    let reach = col_index(&summary, "reach_error_noiseless");
    let r: f64 = summary[1][reach].parse().unwrap();
    assert!(r <= 1e-3);
    // the plant path is untouched by the attacker's measurement stream, so
    // every zero-noise run traces exactly the same states
    let a = read_csv(&dir.path().join("trajectory_scale_0p25.csv"));
    let b = read_csv(&dir.path().join("trajectory_scale_1.csv"));
    for (ra, rb) in a[1..].iter().zip(&b[1..]) {
        for col in [x0, x0 + 1, x0 + 2, x0 + 3] {
            assert_eq!(ra[col], rb[col], "state mismatch at row {}", ra[0]);
        }
    }
}

#[test]
fn simulate_reaches_target_and_error_monotone_in_covariance() {
    let dir = TempDir::new().unwrap();
    let cfg = simulate_cfg(dir.path(), "solved", 2000);
    let ctx = ctx_from(&cfg, dir.path());
    cmd_simulate(&ctx).unwrap();
    let summary = read_csv(&dir.path().join("simulate_summary.csv"));
    let reach = col_index(&summary, "reach_error_noiseless");
    let r: f64 = summary[1][reach].parse().unwrap();
    assert!(r <= 1e-3, "noiseless reach error {r}");
    let m = col_index(&summary, "mean_smoothed_s");
    let vals: Vec<f64> = (1..=3).map(|i| summary[i][m].parse().unwrap()).collect();
    assert!(
        vals[0] < vals[1] && vals[1] < vals[2],
        "smoothed error not monotone over covariance scales: {vals:?}"
    );
}

fn formation_cfg(dir: &std::path::Path, sigma_u2: f64, horizon: usize) -> String {
    format!(
        r#"{{
            "system": {{"preset": "double_integrator_2d", "ts": 1.0}},
            "noise": {{"kind": "solved", "sigma_u2": [0.05, 0.05], "alphas": [0.4], "seed": 77}},
            "controller": {{
                "kind": "cooperative",
                "preset": "formation5",
                "initial": [[2.0, 1.0], [-5.0, 3.0], [-4.0, -3.0], [1.0, -3.0], [0.0, 0.0]],
                "sigma_u2": {sigma_u2},
                "degradation_scales": [0.25, 0.5, 0.75, 1.0]
            }},
            "run": {{"horizon": {horizon}, "out_dir": "{}"}}
        }}"#,
        dir.display()
    )
}

#[test]
fn formation_noise_off_reaches_offsets() {
    let dir = TempDir::new().unwrap();
    let cfg = formation_cfg(dir.path(), 0.0, 400);
    let ctx = ctx_from(&cfg, dir.path());
    let outcome = cmd_formation(&ctx).unwrap();
    assert_eq!(outcome.delta_star, 0.0);
    let rows = read_csv(&dir.path().join("jco.csv"));
    let jn = col_index(&rows, "j_co_noisy");
    let last: f64 = rows.last().unwrap()[jn].parse().unwrap();
    assert!(last <= 1e-12, "J_co at horizon = {last}");
    // formation offsets met: each agent sits at anchor + offset
    let net_offsets = [[-2.0, 2.0], [-4.0, 0.0], [-3.0, -1.5], [-1.0, -1.5], [0.0, 0.0]];
    let a4 = read_csv(&dir.path().join("agent_4.csv"));
    let (x4, y4): (f64, f64) = (
        a4.last().unwrap()[1].parse().unwrap(),
        a4.last().unwrap()[2].parse().unwrap(),
    );
    for i in 0..5 {
        let ai = read_csv(&dir.path().join(format!("agent_{i}.csv")));
        let x: f64 = ai.last().unwrap()[1].parse().unwrap();
        let y: f64 = ai.last().unwrap()[2].parse().unwrap();
        let ex = x4 + net_offsets[i][0] - net_offsets[4][0];
        let ey = y4 + net_offsets[i][1] - net_offsets[4][1];
        assert!(
            (x - ex).abs() < 1e-6 && (y - ey).abs() < 1e-6,
            "agent {i} at ({x},{y}) vs formation ({ex},{ey})"
        );
    }
}

#[test]
fn formation_custom_network_from_config() {
    // three agents on a chain anchored at agent 2, custom offsets
    let dir = TempDir::new().unwrap();
    let cfg = format!(
        r#"{{
            "system": {{"preset": "double_integrator_2d", "ts": 1.0}},
            "noise": {{"kind": "gaussian", "sigma_u2": [0.02, 0.02], "alphas": [0.4], "seed": 3}},
            "controller": {{
                "kind": "cooperative",
                "preset": "formation5",
                "adjacency": [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]],
                "offsets": [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]],
                "leader": 2,
                "initial": [[3.0, 0.0], [0.0, -2.0], [0.0, 0.0]],
                "sigma_u2": 0.02,
                "degradation_scales": [0.5, 1.0]
            }},
            "run": {{"horizon": 3000, "out_dir": "{}"}}
        }}"#,
        dir.path().display()
    );
    let ctx = ctx_from(&cfg, dir.path());
    let outcome = cmd_formation(&ctx).unwrap();
    assert!(outcome.lyapunov_residual <= 1e-10);
    assert!(outcome.delta_star > 0.0);
    assert!((outcome.delta_running - outcome.delta_star).abs() / outcome.delta_star < 0.25);
    assert!(dir.path().join("agent_2.csv").exists());
}

#[test]
fn formation_degradation_sweep_monotone() {
    let dir = TempDir::new().unwrap();
    let cfg = formation_cfg(dir.path(), 0.05, 200);
    let ctx = ctx_from(&cfg, dir.path());
    cmd_formation(&ctx).unwrap();
    let rows = read_csv(&dir.path().join("degradation_sweep.csv"));
    let ds = col_index(&rows, "delta_star");
    let tr = col_index(&rows, "trace_lambda");
    let mut last = 0.0;
    let mut last_tr = 0.0;
    for row in &rows[1..] {
        let v: f64 = row[ds].parse().unwrap();
        let t: f64 = row[tr].parse().unwrap();
        assert!(v > last && t > last_tr, "sweep not monotone");
        last = v;
        last_tr = t;
    }
}
