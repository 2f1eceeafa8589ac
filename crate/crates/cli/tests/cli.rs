//! End-to-end checks of the binary: exit codes, report shapes, determinism.

use std::path::Path;
use std::process::{Command, Output};

fn dosreg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dosreg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

const PENDULUM_CFG: &str = "\
plant = pendulum
q_diag = 1000 1000 1000 1000 15
r = 1
dos_eta = 1
dos_tau_d = 15
dos_kappa = 40
dos_t = 10
dos_seed = 7
learn_horizon = 100
sim_horizon = 400
x0 = 0.5 0 0 0
z0 = 0
w0 = 1
out_dir = runs
";

const SCALAR_CFG: &str = "\
plant = inline
a_row = 0.5
b = 1
c = 1
d_row = 0.1
e_row = 1
f = -1
g2 = 0.5
q_diag = 1 1
dos_eta = 1.5
dos_tau_d = 10
dos_kappa = 5
dos_t = 4
dos_schedule_file = empty_schedule.txt
learn_horizon = 60
sim_horizon = 300
x0 = 0.4
z0 = 0
w0 = 1
out_dir = runs
";

fn read_report(dir: &Path, parent: &str, name: &str) -> (std::path::PathBuf, String) {
    let base = dir.join(parent);
    let run_dir = std::fs::read_dir(&base)
        .unwrap_or_else(|_| panic!("{} missing", base.display()))
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .find(|p| p.is_dir())
        .expect("one run directory");
    let text = std::fs::read_to_string(run_dir.join(name)).expect("report exists");
    (run_dir, text)
}

fn report_value<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("key {key} missing"))
}

#[test]
fn oracle_report_has_full_gain_and_value_vector() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "exp.cfg", PENDULUM_CFG);
    let out = dosreg(&["oracle", "--config", "exp.cfg"], tmp.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (_, report) = read_report(tmp.path(), "runs", "oracle_report.txt");
    assert_eq!(
        report_value(&report, "k_star").split_whitespace().count(),
        5
    );
    assert_eq!(
        report_value(&report, "vecs_p_star")
            .split_whitespace()
            .count(),
        15
    );
    let t_star: f64 = report_value(&report, "t_star").parse().unwrap();
    assert!(
        t_star > 1e5,
        "pendulum threshold should be large, got {t_star}"
    );
}

#[test]
fn oracle_matches_library_on_scalar_plant() {
    use dosreg_core::matrix_kit::{mat_from_rows, Mat};
    use dosreg_core::optimal_control::{hewer_policy_iteration, stabilizing_gain, CostWeights};
    use dosreg_core::plant::{build_augmented, InternalModel, LinearPlant};

    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "exp.cfg", SCALAR_CFG);
    write(tmp.path(), "empty_schedule.txt", "");
    let out = dosreg(&["oracle", "--config", "exp.cfg"], tmp.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (_, report) = read_report(tmp.path(), "runs", "oracle_report.txt");
    let k_cli: Vec<f64> = report_value(&report, "k_star")
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();

    let plant = LinearPlant::new(
        mat_from_rows(1, 1, &[0.5]).unwrap(),
        mat_from_rows(1, 1, &[1.0]).unwrap(),
        mat_from_rows(1, 1, &[1.0]).unwrap(),
        mat_from_rows(1, 1, &[0.1]).unwrap(),
        mat_from_rows(1, 1, &[1.0]).unwrap(),
        mat_from_rows(1, 1, &[-1.0]).unwrap(),
    )
    .unwrap();
    let im = InternalModel::new(&plant.e, mat_from_rows(1, 1, &[0.5]).unwrap()).unwrap();
    let aug = build_augmented(&plant, &im).unwrap();
    let cost = CostWeights::new(Mat::identity(2, 2), 1.0).unwrap();
    let sol = hewer_policy_iteration(&aug, &cost, &stabilizing_gain(&aug, &cost).unwrap()).unwrap();
    for (cli, lib) in k_cli.iter().zip(sol.k_star.iter()) {
        assert!((cli - lib).abs() < 1e-9, "cli {cli} vs lib {lib}");
    }
}

#[test]
fn non_stabilizable_plant_exits_with_validation_code() {
    let cfg = "\
plant = inline
a_row = 2
b = 0
c = 1
d_row = 0
e_row = 1
f = -1
g2 = 0.5
q_diag = 1 1
dos_eta = 1.5
dos_tau_d = 10
dos_kappa = 5
dos_t = 4
dos_seed = 1
x0 = 0.1
z0 = 0
w0 = 1
";
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "bad.cfg", cfg);
    let out = dosreg(&["oracle", "--config", "bad.cfg"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Assumption 1"), "stderr: {stderr}");
}

#[test]
fn learn_is_deterministic_and_accurate() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "exp.cfg", PENDULUM_CFG);
    let out = dosreg(&["learn", "--config", "exp.cfg", "--out", "a"], tmp.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = dosreg(&["learn", "--config", "exp.cfg", "--out", "b"], tmp.path());
    assert!(out.status.success());

    let (_, report) = read_report(tmp.path(), "a", "learn_report.txt");
    let rel: f64 = report_value(&report, "gain_error_rel").parse().unwrap();
    assert!(rel < 1e-3, "gain error {rel}");

    let (_, hist_a) = read_report(tmp.path(), "a", "learn_history.csv");
    let (_, hist_b) = read_report(tmp.path(), "b", "learn_history.csv");
    assert_eq!(hist_a, hist_b, "same seeds must give identical histories");
    assert!(hist_a
        .lines()
        .next()
        .unwrap()
        .starts_with("j,k_err,p_err,residual"));
}

#[test]
fn too_short_horizon_exits_with_excitation_code() {
    let cfg = PENDULUM_CFG.replace("learn_horizon = 100", "learn_horizon = 5");
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "exp.cfg", &cfg);
    let out = dosreg(&["learn", "--config", "exp.cfg"], tmp.path());
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_without_attacks_settles_and_dominates_envelope() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "exp.cfg", SCALAR_CFG);
    write(tmp.path(), "empty_schedule.txt", "");
    let out = dosreg(&["simulate", "--config", "exp.cfg"], tmp.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (run_dir, metrics) = read_report(tmp.path(), "runs", "metrics.txt");
    let final_e: f64 = report_value(&metrics, "max_abs_e_final_quarter")
        .parse()
        .unwrap();
    assert!(final_e < 1e-6, "final-quarter error {final_e}");
    assert_eq!(report_value(&metrics, "envelope_dominated"), "true");
    let trace = std::fs::read_to_string(run_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("k,x1,z1,w1,u,e,y_d,attacked,V,env_exact,env_relaxed"));
    assert_eq!(trace.lines().count(), 302); // header + 301 instants
}

#[test]
fn simulate_learned_gain_under_admissible_attacks_tracks_and_dominates() {
    // duration divisor chosen above the pendulum threshold (~8.7e6), so the
    // budget admits ~kappa attacked instants and the stability claim applies
    let cfg = PENDULUM_CFG
        .replace("dos_t = 10", "dos_t = 20000000")
        .replace("sim_horizon = 400", "sim_horizon = 1200");
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "exp.cfg", &cfg);
    let out = dosreg(
        &["simulate", "--config", "exp.cfg", "--gain", "learned"],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (run_dir, metrics) = read_report(tmp.path(), "runs", "metrics.txt");
    let final_e: f64 = report_value(&metrics, "max_abs_e_final_quarter")
        .parse()
        .unwrap();
    assert!(final_e < 1e-3, "final-quarter error {final_e}");
    assert_eq!(report_value(&metrics, "envelope_dominated"), "true");
    assert_eq!(report_value(&metrics, "t_exceeds_t_star"), "true");
    assert!(run_dir.join("learned_gain.txt").exists());
}

#[test]
fn bound_report_lists_rates_and_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "exp.cfg", PENDULUM_CFG);
    let out = dosreg(&["bound", "--config", "exp.cfg"], tmp.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (_, report) = read_report(tmp.path(), "runs", "bound_report.txt");
    for key in [
        "omega1",
        "omega2",
        "alpha1",
        "alpha2",
        "t_star",
        "envelope_coeff",
    ] {
        report_value(&report, key);
    }
    // T = 10 sits far below the pendulum threshold
    assert_eq!(report_value(&report, "condition_holds"), "false");
}

#[test]
fn simulate_rejects_wrong_dimension_gain_file() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "exp.cfg", PENDULUM_CFG);
    write(tmp.path(), "gain.txt", "1 2 3");
    let out = dosreg(
        &["simulate", "--config", "exp.cfg", "--gain", "gain.txt"],
        tmp.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn sweep_runs_each_seed_into_own_directory() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "exp.cfg", PENDULUM_CFG);
    let out = dosreg(
        &[
            "sweep", "--config", "exp.cfg", "--seeds", "3,4", "--out", "sweep",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dirs: Vec<_> = std::fs::read_dir(tmp.path().join("sweep"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .collect();
    assert_eq!(dirs.len(), 2, "one run directory per seed");
    for dir in dirs {
        assert!(dir.path().join("learn_history.csv").exists());
        assert!(dir.path().join("trace.csv").exists());
    }
}
