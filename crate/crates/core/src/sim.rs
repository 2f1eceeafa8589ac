//! Closed-loop simulation under denial-of-service attacks: hold-last-value
//! control and internal-model updates, per-step trace capture, Lyapunov
//! envelopes and tracking metrics.

use crate::dos::DoSSchedule;
use crate::error::{Error, Result};
use crate::learner::{collect_log, ExplorationSignal, TrajectoryLog};
use crate::matrix_kit::{Mat, Vector};
use crate::optimal_control::{ResilienceBound, RiccatiSolution};
use crate::plant::{InternalModel, LinearPlant, RegulatorSolution};

/// Most recent state/error actually received by the controller.
#[derive(Debug, Clone)]
pub struct HeldValues {
    pub zeta_held: Vector,
    pub e_held: f64,
    pub last_update: u64,
}

/// One recorded instant of a closed-loop run.
#[derive(Debug, Clone)]
pub struct SimStep {
    pub k: u64,
    pub x: Vector,
    pub z: Vector,
    pub w: Vector,
    pub u: f64,
    pub e: f64,
    pub y_d: f64,
    pub attacked: bool,
    pub zeta_held: Vector,
    pub e_held: f64,
    /// `zeta - Xi w`; NaN-filled when no manifold is attached to the run.
    pub zeta_tilde: Vector,
    /// `zeta_tilde' P* zeta_tilde`; NaN without diagnostics.
    pub v: f64,
    /// Envelope from the schedule's own per-step factors; may be infinite.
    pub env_exact: f64,
    /// Budget-relaxed envelope `coeff * Delta(T)^k`; may be infinite.
    pub env_relaxed: f64,
}

/// Full trace of a run, one entry per instant `0..=horizon`.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub steps: Vec<SimStep>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Gain plus the model-based quantities the trace diagnostics are built from.
#[derive(Debug, Clone, Copy)]
pub struct RegulationSetup<'a> {
    pub gain: &'a Mat,
    pub regulator: &'a RegulatorSolution,
    pub riccati: &'a RiccatiSolution,
    pub bound: &'a ResilienceBound,
}

enum ControlLaw<'a> {
    /// `u = -K zeta_held`
    Feedback(&'a Mat),
    /// `u = -K0 zeta_held + eta_k`, with the exploration optionally frozen to
    /// zero while communication is denied.
    Exploring {
        gain: &'a Mat,
        signal: &'a ExplorationSignal,
        live_under_attack: bool,
    },
}

/// Closed-loop regulation run with the supplied gain; the trace carries the
/// Lyapunov value and both envelopes at every instant.
#[allow(clippy::too_many_arguments)]
pub fn simulate_regulation(
    plant: &LinearPlant,
    im: &InternalModel,
    sched: &DoSSchedule,
    setup: &RegulationSetup,
    x0: &Vector,
    z0: &Vector,
    w0: &Vector,
    horizon: u64,
) -> Result<SimTrace> {
    run_loop(
        plant,
        im,
        sched,
        ControlLaw::Feedback(setup.gain),
        Some(setup),
        x0,
        z0,
        w0,
        horizon,
    )
}

/// Learning-phase run: exploration on top of the initial policy, plus the
/// sample log restricted to instants whose successor was also received.
#[allow(clippy::too_many_arguments)]
pub fn simulate_learning(
    plant: &LinearPlant,
    im: &InternalModel,
    sched: &DoSSchedule,
    k0: &Mat,
    exploration: &ExplorationSignal,
    live_exploration_under_attack: bool,
    x0: &Vector,
    z0: &Vector,
    w0: &Vector,
    horizon: u64,
) -> Result<(SimTrace, TrajectoryLog)> {
    let trace = run_loop(
        plant,
        im,
        sched,
        ControlLaw::Exploring {
            gain: k0,
            signal: exploration,
            live_under_attack: live_exploration_under_attack,
        },
        None,
        x0,
        z0,
        w0,
        horizon,
    )?;
    let log = collect_log(&trace, sched)?;
    Ok((trace, log))
}

#[allow(clippy::too_many_arguments)]
fn run_loop(
    plant: &LinearPlant,
    im: &InternalModel,
    sched: &DoSSchedule,
    law: ControlLaw,
    setup: Option<&RegulationSetup>,
    x0: &Vector,
    z0: &Vector,
    w0: &Vector,
    horizon: u64,
) -> Result<SimTrace> {
    let n = plant.state_dim();
    let q = plant.exo_dim();
    if x0.len() != n || z0.len() != q || w0.len() != q {
        return Err(Error::Dimension(format!(
            "initial conditions must have lengths {n}/{q}/{q}, got {}/{}/{}",
            x0.len(),
            z0.len(),
            w0.len()
        )));
    }
    if horizon < 1 {
        return Err(Error::Argument("horizon must be at least 1".into()));
    }
    let gain = match &law {
        ControlLaw::Feedback(k) => *k,
        ControlLaw::Exploring { gain, .. } => *gain,
    };
    if gain.shape() != (1, n + q) {
        return Err(Error::Dimension(format!(
            "gain must be 1x{}, got {}x{}",
            n + q,
            gain.nrows(),
            gain.ncols()
        )));
    }

    let mut x = x0.clone();
    let mut z = z0.clone();
    let mut w = w0.clone();
    let mut held: Option<HeldValues> = None;
    // Envelopes accumulate per-step factors in log scale so that huge growth
    // rates degrade to infinity instead of poisoning the arithmetic.
    let mut ln_env_exact = f64::NAN;
    let mut ln_v0 = f64::NAN;
    let mut steps = Vec::with_capacity(horizon as usize + 1);

    for k in 0..=horizon {
        let attacked = sched.is_denied(k);
        let e = plant.output_error(&x, &w);
        let zeta = stack(&x, &z);
        // The hold refreshes before the control computation; an attack at
        // k = 0 still seeds the hold with the initial state, since the
        // controller has to start from something.
        match (&mut held, attacked) {
            (slot @ None, _) => {
                *slot = Some(HeldValues {
                    zeta_held: zeta.clone(),
                    e_held: e,
                    last_update: k,
                });
            }
            (Some(h), false) => {
                h.zeta_held = zeta.clone();
                h.e_held = e;
                h.last_update = k;
            }
            (Some(_), true) => {}
        }
        let held_now = held.as_ref().expect("hold seeded at k = 0");

        let u = match &law {
            ControlLaw::Feedback(k_mat) => -(*k_mat * &held_now.zeta_held)[(0, 0)],
            ControlLaw::Exploring {
                gain,
                signal,
                live_under_attack,
            } => {
                let eta = if attacked && !live_under_attack {
                    0.0
                } else {
                    signal.value(k)
                };
                -(*gain * &held_now.zeta_held)[(0, 0)] + eta
            }
        };

        let (zeta_tilde, v, env_exact, env_relaxed) = match setup {
            None => (
                Vector::from_element(n + q, f64::NAN),
                f64::NAN,
                f64::NAN,
                f64::NAN,
            ),
            Some(setup) => {
                let zt = &zeta - &setup.regulator.xi * &w;
                let v = (zt.transpose() * &setup.riccati.p_star * &zt)[(0, 0)];
                if k == 0 {
                    ln_v0 = v.ln(); // -inf for v = 0 is fine
                    ln_env_exact = ln_v0;
                }
                let env_exact = ln_env_exact.exp();
                let env_relaxed = setup.bound.ln_relaxed_envelope(ln_v0, k).exp();
                (zt, v, env_exact, env_relaxed)
            }
        };

        steps.push(SimStep {
            k,
            x: x.clone(),
            z: z.clone(),
            w: w.clone(),
            u,
            e,
            y_d: plant.reference(&w),
            attacked,
            zeta_held: held_now.zeta_held.clone(),
            e_held: held_now.e_held,
            zeta_tilde,
            v,
            env_exact,
            env_relaxed,
        });

        if k == horizon {
            break;
        }
        let (x_next, w_next, _) = plant.step(&x, u, &w)?;
        let z_next = &plant.e * &z + &im.g2 * held_now.e_held;
        if x_next.iter().chain(z_next.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k + 1 });
        }
        x = x_next;
        z = z_next;
        w = w_next;
        if let Some(setup) = setup {
            let factor = if attacked {
                setup.bound.omega2.ln_1p()
            } else {
                (-setup.bound.omega1).ln_1p()
            };
            ln_env_exact += factor;
        }
    }

    Ok(SimTrace { steps })
}

fn stack(x: &Vector, z: &Vector) -> Vector {
    let mut zeta = Vector::zeros(x.len() + z.len());
    zeta.rows_mut(0, x.len()).copy_from(x);
    zeta.rows_mut(x.len(), z.len()).copy_from(z);
    zeta
}

/// Summary scalars of a regulation trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMetrics {
    /// Largest `|e|` over the last quarter of the trace.
    pub max_abs_e_final_quarter: f64,
    /// First instant with `|e|` below the supplied tolerance.
    pub first_instant_below: Option<u64>,
    /// Largest `V / env_exact` over the trace (0 when `V` is identically 0).
    pub peak_v_envelope_ratio: f64,
    /// Whether `V <= env_exact * (1 + 1e-6)` held at every instant;
    /// `None` when the trace carries no diagnostics.
    pub envelope_dominated: Option<bool>,
}

/// Reduce a trace to tracking metrics; `e_tolerance` defines the settling
/// instant reported in `first_instant_below`.
pub fn tracking_metrics(trace: &SimTrace, e_tolerance: f64) -> Result<SimMetrics> {
    if trace.is_empty() {
        return Err(Error::Argument("metrics of an empty trace".into()));
    }
    let len = trace.len();
    let quarter_start = len - len / 4;
    let max_abs_e_final_quarter = trace.steps[quarter_start.min(len - 1)..]
        .iter()
        .map(|s| s.e.abs())
        .fold(0.0_f64, f64::max);
    let first_instant_below = trace
        .steps
        .iter()
        .find(|s| s.e.abs() < e_tolerance)
        .map(|s| s.k);

    let has_diag = trace.steps.iter().all(|s| !s.v.is_nan());
    let (peak_v_envelope_ratio, envelope_dominated) = if has_diag {
        let v0 = trace.steps[0].v;
        let tol_abs = 1e-12 * (1.0 + v0);
        let mut peak: f64 = 0.0;
        let mut dominated = true;
        for s in &trace.steps {
            if s.env_exact > 0.0 && s.env_exact.is_finite() {
                peak = peak.max(s.v / s.env_exact);
            }
            if s.v > s.env_exact * (1.0 + 1e-6) + tol_abs {
                dominated = false;
            }
        }
        (peak, Some(dominated))
    } else {
        (f64::NAN, None)
    };

    Ok(SimMetrics {
        max_abs_e_final_quarter,
        first_instant_below,
        peak_v_envelope_ratio,
        envelope_dominated,
    })
}

/// CSV encoding of a trace:
/// `k,x1..xn,z1..zq,w1..wq,u,e,y_d,attacked,V,env_exact,env_relaxed`.
pub fn trace_to_csv(trace: &SimTrace) -> String {
    let mut out = String::new();
    if let Some(first) = trace.steps.first() {
        out.push('k');
        for i in 1..=first.x.len() {
            out.push_str(&format!(",x{i}"));
        }
        for i in 1..=first.z.len() {
            out.push_str(&format!(",z{i}"));
        }
        for i in 1..=first.w.len() {
            out.push_str(&format!(",w{i}"));
        }
        out.push_str(",u,e,y_d,attacked,V,env_exact,env_relaxed\n");
    }
    for s in &trace.steps {
        out.push_str(&format!("{}", s.k));
        for v in s.x.iter().chain(s.z.iter()).chain(s.w.iter()) {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(
            ",{},{},{},{},{},{},{}\n",
            s.u,
            s.e,
            s.y_d,
            u8::from(s.attacked),
            s.v,
            s.env_exact,
            s.env_relaxed
        ));
    }
    out
}
