//! Shared assembly: config -> plant, oracle, bound, schedule, and the
//! learning/simulation runs the commands are built from.

use std::path::{Path, PathBuf};

use dosreg_core::dos::{generate_schedule, verify_assumptions, DoSParams, DoSSchedule};
use dosreg_core::learner::{run_algorithm_1, ExplorationSignal, LearnResult, TrajectoryLog};
use dosreg_core::matrix_kit::{Mat, Vector};
use dosreg_core::optimal_control::{
    compute_resilience_bound, hewer_policy_iteration, stabilizing_gain, CostWeights,
    ResilienceBound, RiccatiSolution,
};
use dosreg_core::plant::{
    build_augmented, check_assumptions, solve_regulator_equations, AugmentedSystem, InternalModel,
    LinearPlant,
};
use dosreg_core::sim::{simulate_learning, simulate_regulation, RegulationSetup, SimTrace};
use dosreg_core::{Error, Result};

use crate::config::{ExperimentConfig, ScheduleSource};

/// Everything derived from a config that more than one command needs.
pub struct Workbench {
    pub config: ExperimentConfig,
    pub plant: LinearPlant,
    pub im: InternalModel,
    pub aug: AugmentedSystem,
    pub cost: CostWeights,
    pub oracle: RiccatiSolution,
    pub bound: ResilienceBound,
    pub sched: DoSSchedule,
}

impl Workbench {
    pub fn build(config: ExperimentConfig, config_dir: &Path) -> Result<Self> {
        let (plant, im) = config.build_plant()?;

        let report = check_assumptions(&plant)?;
        if !report.stabilizable {
            return Err(Error::Validation(format!(
                "Assumption 1 fails: (A, B) is not stabilizable ({:?})",
                report.diagnostics
            )));
        }
        if !report.exosystem_simple_unit_modulus {
            return Err(Error::Validation(format!(
                "Assumption 1 fails: exosystem eigenvalues not simple on the unit circle ({:?})",
                report.diagnostics
            )));
        }
        if !report.transmission_rank_ok {
            return Err(Error::Validation(format!(
                "Assumption 2 fails: transmission rank condition violated ({:?})",
                report.diagnostics
            )));
        }

        let aug = build_augmented(&plant, &im)?;
        let cost = CostWeights::new(
            Mat::from_diagonal(&Vector::from_column_slice(&config.q_diag)),
            config.r,
        )?;
        let k_init = stabilizing_gain(&aug, &cost)?;
        let oracle = hewer_policy_iteration(&aug, &cost, &k_init)?;
        let params = DoSParams::new(
            config.dos_eta,
            config.dos_tau_d,
            config.dos_kappa,
            config.dos_t,
        )?;
        let bound = compute_resilience_bound(&oracle, &aug, &cost, &params)?;

        let horizon = config.learn_horizon.max(config.sim_horizon);
        let sched = match &config.schedule {
            ScheduleSource::Seed(seed) => generate_schedule(&params, horizon, *seed)?,
            ScheduleSource::File(rel) => {
                let path = config_dir.join(rel);
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    Error::Config(format!("cannot read schedule {}: {e}", path.display()))
                })?;
                let sched = DoSSchedule::from_text(&text)?;
                let verdict = verify_assumptions(&sched, &params, horizon)?;
                if !verdict.all_pass() {
                    return Err(Error::Validation(format!(
                        "schedule violates the attack budgets: frequency {:?}, duration {:?}",
                        verdict.first_frequency_violation, verdict.first_duration_violation
                    )));
                }
                sched
            }
        };

        Ok(Self {
            config,
            plant,
            im,
            aug,
            cost,
            oracle,
            bound,
            sched,
        })
    }

    /// Initial policy for learning: the configured one, or the oracle gain
    /// rounded to two significant digits (stabilizing but suboptimal).
    pub fn initial_gain(&self) -> Result<Mat> {
        let dim = self.aug.dim();
        let k0 = match &self.config.k0 {
            Some(vals) => Mat::from_row_slice(1, dim, vals),
            None => Mat::from_row_slice(
                1,
                dim,
                &self
                    .oracle
                    .k_star
                    .iter()
                    .map(|&v| round_two_significant(v))
                    .collect::<Vec<_>>(),
            ),
        };
        let rho = dosreg_core::matrix_kit::spectral_radius(&self.aug.closed_loop(&k0)?)?;
        if rho >= 1.0 {
            return Err(Error::NotSchur {
                spectral_radius: rho,
            });
        }
        Ok(k0)
    }

    pub fn exploration(&self) -> ExplorationSignal {
        ExplorationSignal::sinusoid_mix(
            self.config.exploration_seed,
            self.config.exploration_amplitude,
        )
    }

    pub fn initial_states(&self) -> (Vector, Vector, Vector) {
        (
            Vector::from_column_slice(&self.config.x0),
            Vector::from_column_slice(&self.config.z0),
            Vector::from_column_slice(&self.config.w0),
        )
    }

    /// Learning phase over `[0, learn_horizon]` followed by policy iteration
    /// on the collected log.
    pub fn run_learning(&self) -> Result<(SimTrace, TrajectoryLog, LearnResult, Mat)> {
        let k0 = self.initial_gain()?;
        let (x0, z0, w0) = self.initial_states();
        let (trace, log) = simulate_learning(
            &self.plant,
            &self.im,
            &self.sched,
            &k0,
            &self.exploration(),
            self.config.exploration_under_attack,
            &x0,
            &z0,
            &w0,
            self.config.learn_horizon,
        )?;
        let result = run_algorithm_1(&log, &self.cost, &k0, self.config.epsilon0)?;
        Ok((trace, log, result, k0))
    }

    /// Regulation run over `[0, sim_horizon]` with the given gain; error
    /// coordinates use the gain's own steady-state manifold, the Lyapunov
    /// weight is always the oracle's value matrix.
    pub fn run_regulation(&self, gain: &Mat) -> Result<SimTrace> {
        let reg = solve_regulator_equations(&self.plant, &self.im, Some(gain))?;
        let setup = RegulationSetup {
            gain,
            regulator: &reg,
            riccati: &self.oracle,
            bound: &self.bound,
        };
        let (x0, z0, w0) = self.initial_states();
        simulate_regulation(
            &self.plant,
            &self.im,
            &self.sched,
            &setup,
            &x0,
            &z0,
            &w0,
            self.config.sim_horizon,
        )
    }
}

pub fn round_two_significant(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = 10f64.powf(x.abs().log10().floor() - 1.0);
    (x / scale).round() * scale
}

/// Run directory: `<parent>/<16 hex chars of the canonical config hash>`.
pub fn run_dir(config: &ExperimentConfig, override_parent: Option<&Path>) -> PathBuf {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(config.to_text().as_bytes());
    let hash: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    let parent = override_parent.unwrap_or(&config.out_dir);
    parent.join(hash)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_two_significant_digits() {
        assert_eq!(round_two_significant(-156.94), -160.0);
        assert_eq!(round_two_significant(-2.6236), -2.6);
        assert_eq!(round_two_significant(0.0), 0.0);
        assert_eq!(round_two_significant(0.0123), 0.012);
    }
}
