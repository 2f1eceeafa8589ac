//! The oracle / learn / simulate / bound / sweep entry points and their
//! report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dosreg_core::matrix_kit::{vecs, Mat};
use dosreg_core::sim::{trace_to_csv, tracking_metrics};
use dosreg_core::{Error, Result};

use crate::config::{ExperimentConfig, ScheduleSource};
use crate::pipeline::{run_dir, Workbench};

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn fmt_row(m: &Mat) -> String {
    m.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Create the run directory and drop the canonical config and the schedule
/// actually used, so every run is replayable from its own artifacts.
fn prepare_dir(bench: &Workbench, out: Option<&Path>) -> Result<PathBuf> {
    let dir = run_dir(&bench.config, out);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    write_file(&dir, "config.txt", &bench.config.to_text())?;
    write_file(&dir, "schedule.txt", &bench.sched.to_text())?;
    Ok(dir)
}

fn bound_report(bench: &Workbench) -> String {
    let b = &bench.bound;
    let mut out = String::new();
    let _ = writeln!(out, "omega1 = {}", b.omega1);
    let _ = writeln!(out, "omega2 = {}", b.omega2);
    let _ = writeln!(out, "alpha1 = {}", b.alpha1);
    let _ = writeln!(out, "alpha2 = {}", b.alpha2);
    let _ = writeln!(out, "t_star = {}", b.t_star);
    let _ = writeln!(out, "kappa = {}", b.kappa);
    let _ = writeln!(out, "t = {}", b.t);
    let _ = writeln!(out, "envelope_coeff = {}", b.envelope_coeff);
    let _ = writeln!(out, "ln_envelope_coeff = {}", b.ln_envelope_coeff());
    let _ = writeln!(out, "delta_at_t = {}", b.delta(b.t));
    let _ = writeln!(out, "omega1_boundary = {}", b.omega1_boundary);
    let _ = writeln!(out, "condition_holds = {}", b.condition_holds());
    out
}

pub fn cmd_oracle(bench: &Workbench, out: Option<&Path>) -> Result<PathBuf> {
    let dir = prepare_dir(bench, out)?;
    let mut report = String::new();
    let _ = writeln!(report, "n = {}", bench.aug.n);
    let _ = writeln!(report, "q = {}", bench.aug.q);
    let _ = writeln!(report, "k_star = {}", fmt_row(&bench.oracle.k_star));
    let _ = writeln!(
        report,
        "vecs_p_star = {}",
        vecs(&bench.oracle.p_star)?
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    );
    let _ = writeln!(report, "dare_residual = {}", bench.oracle.dare_residual);
    let _ = writeln!(report, "iterations = {}", bench.oracle.iterations);
    report.push_str(&bound_report(bench));
    let path = write_file(&dir, "oracle_report.txt", &report)?;
    println!("oracle report: {}", path.display());
    Ok(dir)
}

pub fn cmd_bound(bench: &Workbench, out: Option<&Path>) -> Result<PathBuf> {
    let dir = prepare_dir(bench, out)?;
    let path = write_file(&dir, "bound_report.txt", &bound_report(bench))?;
    println!("bound report: {}", path.display());
    Ok(dir)
}

pub fn cmd_learn(bench: &Workbench, out: Option<&Path>) -> Result<PathBuf> {
    let dir = prepare_dir(bench, out)?;
    let (_trace, log, result, k0) = bench.run_learning()?;

    let mut history = String::from("j,k_err,p_err,residual\n");
    for it in &result.iterates {
        let k_err = (&it.k - &bench.oracle.k_star).norm();
        let p_err = (&it.p - &bench.oracle.p_star).norm();
        let _ = writeln!(history, "{},{},{},{}", it.j, k_err, p_err, it.residual);
    }
    write_file(&dir, "learn_history.csv", &history)?;
    write_file(
        &dir,
        "learned_gain.txt",
        &format!("{}\n", fmt_row(&result.k_final)),
    )?;

    let k_err_abs = (&result.k_final - &bench.oracle.k_star).norm();
    let k_err_rel = k_err_abs / bench.oracle.k_star.norm();
    let mut report = String::new();
    let _ = writeln!(report, "samples = {}", log.samples().len());
    let _ = writeln!(report, "iterations = {}", result.iterates.len());
    let _ = writeln!(report, "k0 = {}", fmt_row(&k0));
    let _ = writeln!(report, "k_final = {}", fmt_row(&result.k_final));
    let _ = writeln!(report, "k_star = {}", fmt_row(&bench.oracle.k_star));
    let _ = writeln!(report, "gain_error_abs = {k_err_abs}");
    let _ = writeln!(report, "gain_error_rel = {k_err_rel}");
    let _ = writeln!(
        report,
        "p_error_rel = {}",
        (&result.p_final - &bench.oracle.p_star).norm() / bench.oracle.p_star.norm()
    );
    let path = write_file(&dir, "learn_report.txt", &report)?;
    println!(
        "learn report: {} (gain error {k_err_rel:.3e})",
        path.display()
    );
    Ok(dir)
}

/// Where the simulated gain comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GainSource {
    Oracle,
    Learned,
    File(PathBuf),
}

impl GainSource {
    pub fn parse(raw: &str) -> Self {
        match raw {
            "oracle" => Self::Oracle,
            "learned" => Self::Learned,
            other => Self::File(PathBuf::from(other)),
        }
    }
}

pub fn cmd_simulate(bench: &Workbench, source: &GainSource, out: Option<&Path>) -> Result<PathBuf> {
    let dir = prepare_dir(bench, out)?;
    let gain = match source {
        GainSource::Oracle => bench.oracle.k_star.clone(),
        GainSource::Learned => {
            let (_, _, result, _) = bench.run_learning()?;
            write_file(
                &dir,
                "learned_gain.txt",
                &format!("{}\n", fmt_row(&result.k_final)),
            )?;
            result.k_final
        }
        GainSource::File(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read gain {}: {e}", path.display())))?;
            let vals: Vec<f64> = text
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| Error::Config(format!("gain file: bad number `{tok}`")))
                })
                .collect::<Result<_>>()?;
            let dim = bench.aug.dim();
            if vals.len() != dim {
                return Err(Error::Dimension(format!(
                    "gain file holds {} values, the augmented system needs {dim}",
                    vals.len()
                )));
            }
            Mat::from_row_slice(1, dim, &vals)
        }
    };

    let trace = bench.run_regulation(&gain)?;
    write_file(&dir, "trace.csv", &trace_to_csv(&trace))?;

    let metrics = tracking_metrics(&trace, bench.config.metrics_e_tol)?;
    let mut report = String::new();
    let _ = writeln!(report, "gain = {}", fmt_row(&gain));
    let _ = writeln!(
        report,
        "max_abs_e_final_quarter = {}",
        metrics.max_abs_e_final_quarter
    );
    let _ = writeln!(
        report,
        "first_instant_below_tol = {}",
        metrics
            .first_instant_below
            .map_or("none".to_string(), |k| k.to_string())
    );
    let _ = writeln!(
        report,
        "peak_v_envelope_ratio = {}",
        metrics.peak_v_envelope_ratio
    );
    let _ = writeln!(
        report,
        "envelope_dominated = {}",
        metrics
            .envelope_dominated
            .map_or("n/a".to_string(), |b| b.to_string())
    );
    let _ = writeln!(
        report,
        "t_exceeds_t_star = {}",
        bench.bound.condition_holds()
    );
    let path = write_file(&dir, "metrics.txt", &report)?;
    println!(
        "trace + metrics: {} (final-quarter |e| {:.3e})",
        path.display(),
        metrics.max_abs_e_final_quarter
    );
    Ok(dir)
}

/// Fan independent seed overrides out to worker threads; each run writes to
/// its own hash-named directory.
pub fn cmd_sweep(
    base: &ExperimentConfig,
    config_dir: &Path,
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Argument("sweep needs at least one seed".into()));
    }
    let results: Vec<Result<PathBuf>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let config = override_seed(base, seed);
                let config_dir = config_dir.to_path_buf();
                let out = out.map(Path::to_path_buf);
                scope.spawn(move || -> Result<PathBuf> {
                    let bench = Workbench::build(config, &config_dir)?;
                    let dir = cmd_learn(&bench, out.as_deref())?;
                    cmd_simulate(&bench, &GainSource::Learned, out.as_deref())?;
                    Ok(dir)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut failures = 0;
    for (seed, result) in seeds.iter().zip(results) {
        match result {
            Ok(dir) => println!("seed {seed}: {}", dir.display()),
            Err(e) => {
                failures += 1;
                eprintln!("seed {seed}: {e}");
            }
        }
    }
    if failures > 0 {
        return Err(Error::Numerical(format!("{failures} sweep runs failed")));
    }
    Ok(())
}

/// A sweep varies the attack schedule and the exploration stream together,
/// keeping them on separate seeds.
pub fn override_seed(base: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut config = base.clone();
    config.schedule = ScheduleSource::Seed(seed);
    config.exploration_seed = seed.wrapping_add(1);
    config
}
