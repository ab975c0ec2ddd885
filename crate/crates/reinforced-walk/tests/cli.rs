//! End-to-end checks of the command-line interface: exit codes, file
//! formats, determinism, config-file merging and worker-count invariance.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reinforced-walk"))
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// Everything except the header line (the line carrying the timestamp).
fn mask_header(text: &str) -> String {
    text.lines().skip(1).collect::<Vec<_>>().join("\n")
}

#[test]
fn simulate_is_reproducible_modulo_header() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let status = bin()
            .args([
                "simulate", "--d", "3", "--alpha", "10", "--delta", "0.05", "--steps", "20000",
                "--seed", "7", "--thinning", "500",
            ])
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    for name in ["trajectory.jsonl", "summary.csv"] {
        let a = mask_header(&read(&out1.join(name)));
        let b = mask_header(&read(&out2.join(name)));
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    // header carries command, version, seed, timestamp and the echoed config
    let head = read(&out1.join("trajectory.jsonl"))
        .lines()
        .next()
        .unwrap()
        .to_string();
    let head: serde_json::Value = serde_json::from_str(&head).unwrap();
    assert_eq!(head["command"], "simulate");
    assert_eq!(head["seed"], 7);
    assert!(head["timestamp"].is_number());
    assert_eq!(head["config"]["params"]["d"], 3);
}

#[test]
fn trajectory_record_fields_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "simulate", "--d", "3", "--alpha", "2", "--delta", "0.05", "--steps", "100",
            "--seed", "1", "--thinning", "50",
        ])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let text = read(&dir.path().join("trajectory.jsonl"));
    let first_record: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
    for key in ["n", "x", "y", "H", "in_s_delta"] {
        assert!(first_record.get(key).is_some(), "missing field {key}");
    }
    assert_eq!(first_record["x"].as_array().unwrap().len(), 3);
    let csv = read(&dir.path().join("summary.csv"));
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# {"));
    assert_eq!(
        lines.next().unwrap(),
        "seed,n_steps,final_H,trapped,dist_to_uniform,martingale_sup_tail"
    );
}

#[test]
fn invalid_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    // steps = 0
    let status = bin()
        .args(["simulate", "--steps", "0"])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    // delta outside (0, 1/d)
    let status = bin()
        .args(["simulate", "--d", "3", "--delta", "0.5", "--steps", "10"])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    // unknown subcommand/flag handled by the parser
    let status = bin().args(["simulate", "--bogus"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn config_file_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "d=3\nalpha=10\ndelta=0.05\nsteps=500\nseed=3\nthinning=100\n").unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["simulate", "--seed", "9"]) // flag overrides the file
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let head: serde_json::Value =
        serde_json::from_str(read(&out.join("trajectory.jsonl")).lines().next().unwrap()).unwrap();
    assert_eq!(head["config"]["seed"], 9);
    assert_eq!(head["config"]["steps"], 500);

    // unknown keys are rejected before any work
    std::fs::write(&cfg, "steps=500\nwalrus=1\n").unwrap();
    let status = bin()
        .args(["simulate"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn worker_count_never_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (label, workers) in [("w1", "1"), ("w2", "2")] {
        let out = dir.path().join(label);
        let status = bin()
            .args([
                "mc", "--d", "3", "--alpha", "10", "--delta", "0.05", "--runs", "6", "--steps",
                "20000", "--seed", "11", "--thinning", "1000", "--workers", workers,
            ])
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push((
            mask_header(&read(&out.join("mc_summary.csv"))),
            mask_header(&read(&out.join("mc_runs.csv"))),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);

    // the environment variable is honored the same way
    let out = dir.path().join("env");
    let status = bin()
        .args([
            "mc", "--d", "3", "--alpha", "10", "--delta", "0.05", "--runs", "6", "--steps",
            "20000", "--seed", "11", "--thinning", "1000",
        ])
        .env("REINFORCE_WALK_WORKERS", "2")
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        mask_header(&read(&out.join("mc_summary.csv"))),
        outputs[0].0
    );
}

#[test]
fn spectrum_reports_the_expected_eigenvalues() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["spectrum", "--d", "3", "--alpha", "2"])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let doc: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("spectrum.json"))).unwrap();
    let closed = doc["report"]["jacobian"]["closed_form"].as_array().unwrap();
    let pairs: Vec<(f64, u64)> = closed
        .iter()
        .map(|p| (p["value"].as_f64().unwrap(), p["multiplicity"].as_u64().unwrap()))
        .collect();
    assert_eq!(pairs, vec![(-3.0, 2), (-1.0, 2), (1.0, 2)]);
    assert_eq!(doc["report"]["stability"], "Unstable");
    assert!(doc["report"]["jacobian"]["max_discrepancy"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn lyapunov_scan_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "lyapunov-scan", "--d", "3", "--alpha", "10", "--delta", "0.01", "--resolution",
            "13", "--grid-floor", "0.005",
        ])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = read(&dir.path().join("lyapunov_scan.csv"));
    let mut lines = csv.lines();
    lines.next(); // header record
    assert_eq!(lines.next().unwrap(), "u_1,u_2,u_3,v_1,v_2,v_3,H,dH_dt,case");
    assert!(lines.next().unwrap().ends_with("case1"));
    let doc: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("lyapunov_summary.json"))).unwrap();
    assert_eq!(doc["report"]["violation_count"], 0);
    assert_eq!(doc["report"]["argmax_is_nearest_uniform"], true);
}

#[test]
fn unthresholded_scan_on_a_fine_grid_reports_violations() {
    // dH/dt > 0 exists in the small-joint-support region; exit code 1
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "lyapunov-scan", "--d", "3", "--alpha", "10", "--delta", "0.05", "--resolution",
            "100", "--grid-floor", "1e-6", "--no-threshold",
        ])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let doc: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("lyapunov_summary.json"))).unwrap();
    assert!(doc["report"]["violation_count"].as_u64().unwrap() > 0);
    assert!(doc["report"]["max_dh_dt"].as_f64().unwrap() > 0.0);
}

#[test]
fn verify_appendix_is_clean_at_strong_reinforcement() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "verify-appendix", "--d", "3", "--alpha", "10", "--delta", "0.05", "--resolution",
            "15", "--samples", "20000", "--seed", "1",
        ])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let doc: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("appendix_report.json"))).unwrap();
    assert_eq!(doc["report"]["violations_total"], 0);
    assert_eq!(doc["report"]["prop_a1"]["violation_count"], 0);
    assert_eq!(doc["report"]["g_positivity_applicable"], true);
}

#[test]
fn verify_appendix_margin_dump() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "verify-appendix", "--d", "3", "--alpha", "5", "--delta", "0.05", "--resolution",
            "12", "--samples", "2000", "--dump-margins",
        ])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = read(&dir.path().join("prop_a1_margins.csv"));
    // C(11,2) = 55 lattice points; 55^2 ordered pairs + header record + column row
    assert_eq!(csv.lines().count(), 2 + 55 * 55);
}

#[test]
fn gap_command_reports_bounded_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "gap", "--d", "3", "--alpha", "10", "--delta", "0.05", "--at", "200,400",
            "--horizon", "0.5", "--seed", "2",
        ])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = read(&dir.path().join("gap.csv"));
    let mut lines = csv.lines().skip(1);
    assert_eq!(
        lines.next().unwrap(),
        "n,t,horizon,gap,eps_sup,lipschitz,sigma_end,bound,bound_holds"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(r.ends_with("true"), "Gronwall bound failed in row: {r}");
    }
}

#[test]
fn flow_command_writes_trajectory_and_omega() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "flow", "--d", "3", "--alpha", "0.5", "--delta", "0.01", "--starts", "2", "--seed",
            "4", "--flow-time", "30", "--flow-step", "0.005",
        ])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_str(&read(&dir.path().join("omega.json"))).unwrap();
    let omegas = doc["report"].as_array().unwrap();
    assert_eq!(omegas.len(), 2);
    // attracting case: a single accumulation point near the uniform pair
    for o in omegas {
        let pts = o["estimate"]["points"].as_array().unwrap();
        assert_eq!(pts.len(), 1);
    }
    let traj = read(&dir.path().join("flow_trajectory.jsonl"));
    let rec: serde_json::Value = serde_json::from_str(traj.lines().nth(1).unwrap()).unwrap();
    for key in ["t", "x", "y", "H"] {
        assert!(rec.get(key).is_some());
    }
}
