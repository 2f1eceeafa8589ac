//! Model-based ground truth: policy iteration on the discrete-time algebraic
//! Riccati equation for the augmented system, plus the closed-form resilience
//! bound on the tolerable denial-of-service duration.

use crate::dos::{DoSParams, DoSSchedule};
use crate::error::{Error, Result};
use crate::matrix_kit::{
    induced_two_norm, solve_discrete_lyapunov, spectral_radius, symmetric_eigenvalues, Mat,
};
use crate::plant::AugmentedSystem;

/// State weight for the quadratic cost; the input weight is the scalar `r`.
///
/// The gain and Riccati formulas hardwire a unit input penalty, so internally
/// the weight acting in them is `Q / r`.
#[derive(Debug, Clone)]
pub struct CostWeights {
    pub q: Mat,
    pub r: f64,
}

impl CostWeights {
    pub fn new(q: Mat, r: f64) -> Result<Self> {
        if r.is_nan() || r <= 0.0 || !r.is_finite() {
            return Err(Error::Validation(format!(
                "input weight must be positive, got {r}"
            )));
        }
        let eigs = symmetric_eigenvalues(&q)?;
        if eigs[0] <= 0.0 {
            return Err(Error::Validation(format!(
                "state weight must be positive definite, smallest eigenvalue {}",
                eigs[0]
            )));
        }
        Ok(Self { q, r })
    }

    /// The weight entering the unit-input-penalty Riccati formulas.
    pub fn effective_q(&self) -> Mat {
        &self.q / self.r
    }
}

/// Stabilizing solution of the Riccati equation together with the optimal gain.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p_star: Mat,
    pub k_star: Mat,
    pub dare_residual: f64,
    pub iterations: usize,
}

/// `K = (1 + Bbar^T P Bbar)^{-1} Bbar^T P Abar`.
pub fn gain_from_value(aug: &AugmentedSystem, p: &Mat) -> Mat {
    let den = 1.0 + (aug.bbar.transpose() * p * &aug.bbar)[(0, 0)];
    aug.bbar.transpose() * p * &aug.abar / den
}

/// Policy evaluation: solve `Aj^T P Aj - P + Q + K^T K = 0` for the value of
/// the fixed policy `K`, with `Aj = Abar - Bbar K`.
pub fn policy_evaluation(aug: &AugmentedSystem, effective_q: &Mat, k: &Mat) -> Result<Mat> {
    let aj = aug.closed_loop(k)?;
    solve_discrete_lyapunov(&aj, &(effective_q + k.transpose() * k))
}

/// A stabilizing gain found by value iteration, stopped at the first iterate
/// whose closed loop is Schur with margin. Deliberately not run to
/// convergence: the result is a valid but suboptimal starting policy.
pub fn stabilizing_gain(aug: &AugmentedSystem, cost: &CostWeights) -> Result<Mat> {
    let q = cost.effective_q();
    if q.nrows() != aug.dim() {
        return Err(Error::Dimension(format!(
            "state weight is {}x{} but the augmented system has dimension {}",
            q.nrows(),
            q.ncols(),
            aug.dim()
        )));
    }
    let mut p = q.clone();
    let cap = 100_000;
    for _ in 0..cap {
        let k = gain_from_value(aug, &p);
        let rho = spectral_radius(&aug.closed_loop(&k)?)?;
        if rho < 1.0 - 1e-6 {
            return Ok(k);
        }
        let den = 1.0 + (aug.bbar.transpose() * &p * &aug.bbar)[(0, 0)];
        let cross = aug.abar.transpose() * &p * &aug.bbar;
        p = aug.abar.transpose() * &p * &aug.abar - &cross * cross.transpose() / den + &q;
        p = (&p + p.transpose()) * 0.5;
    }
    Err(Error::Convergence {
        iterations: cap,
        context: "value iteration never produced a stabilizing gain".into(),
    })
}

/// Policy iteration from a stabilizing initial gain: alternate policy
/// evaluation and improvement until the value matrix settles.
pub fn hewer_policy_iteration(
    aug: &AugmentedSystem,
    cost: &CostWeights,
    k0: &Mat,
) -> Result<RiccatiSolution> {
    let q = cost.effective_q();
    if q.nrows() != aug.dim() {
        return Err(Error::Dimension(format!(
            "state weight is {}x{} but the augmented system has dimension {}",
            q.nrows(),
            q.ncols(),
            aug.dim()
        )));
    }
    let rho = spectral_radius(&aug.closed_loop(k0)?)?;
    if rho >= 1.0 {
        return Err(Error::NotSchur {
            spectral_radius: rho,
        });
    }

    let cap = 500;
    let mut k = k0.clone();
    let mut p_prev: Option<Mat> = None;
    for j in 1..=cap {
        let p = policy_evaluation(aug, &q, &k)?;
        k = gain_from_value(aug, &p);
        if let Some(prev) = &p_prev {
            // The threshold is relative: at desk scale the iterates settle to
            // within rounding of each other, a few ulps of |P|.
            if (&p - prev).norm() <= 1e-12 * (1.0 + p.norm()) {
                let residual = dare_residual(&p, aug, cost);
                return Ok(RiccatiSolution {
                    p_star: p,
                    k_star: k,
                    dare_residual: residual,
                    iterations: j,
                });
            }
        }
        p_prev = Some(p);
    }
    Err(Error::Convergence {
        iterations: cap,
        context: "policy iteration did not settle".into(),
    })
}

/// Frobenius norm of the Riccati equation left-hand side at `P`.
pub fn dare_residual(p: &Mat, aug: &AugmentedSystem, cost: &CostWeights) -> f64 {
    let q = cost.effective_q();
    let den = 1.0 + (aug.bbar.transpose() * p * &aug.bbar)[(0, 0)];
    let cross = aug.abar.transpose() * p * &aug.bbar;
    (aug.abar.transpose() * p * &aug.abar - p + &q - &cross * cross.transpose() / den).norm()
}

/// The duration threshold `T* = 1 + log(1+omega2) / (-log(1-omega1))`.
pub fn t_star_from_omegas(omega1: f64, omega2: f64) -> f64 {
    1.0 + omega2.ln_1p() / -(-omega1).ln_1p()
}

/// Per-step decay factor `Delta(T) = (1-omega1)^((T-1)/T) (1+omega2)^(1/T)`.
pub fn delta_from_omegas(omega1: f64, omega2: f64, t: f64) -> f64 {
    (((t - 1.0) / t) * (-omega1).ln_1p() + omega2.ln_1p() / t).exp()
}

/// Resilience bound: decay/growth rates of the Lyapunov function over allowed
/// and denied steps, the critical duration divisor, and the envelope
/// coefficients for the assumed budget `(kappa, T)`.
#[derive(Debug, Clone)]
pub struct ResilienceBound {
    pub omega1: f64,
    pub omega2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub t_star: f64,
    /// Duration offset copied from the attack budget.
    pub kappa: f64,
    /// Duration divisor copied from the attack budget.
    pub t: f64,
    /// `((1+omega2)/(1-omega1))^kappa`; may overflow to infinity, see
    /// [`ResilienceBound::ln_envelope_coeff`].
    pub envelope_coeff: f64,
    /// `lambda_max(P*) / lambda_min(P*)`, the norm-sandwich factor of the
    /// comparison-function bounds (1 for rate-only constructed bounds).
    pub lambda_ratio: f64,
    /// Induced 2-norm of the error output map `Cbar` (1 when unavailable).
    pub cbar_norm: f64,
    /// `omega1 == 1`: value decays to zero in a single allowed step and the
    /// threshold formula degenerates (`t_star` is reported as its limit 1).
    pub omega1_boundary: bool,
}

impl ResilienceBound {
    /// Build directly from the rates; the alphas are marked unavailable.
    pub fn from_omegas(omega1: f64, omega2: f64, kappa: f64, t: f64) -> Result<Self> {
        let in_range = omega1 > 0.0 && omega1 <= 1.0 && omega2 > 0.0;
        if !in_range || omega1.is_nan() || omega2.is_nan() {
            return Err(Error::Validation(format!(
                "rates out of range: omega1={omega1}, omega2={omega2}"
            )));
        }
        let boundary = omega1 >= 1.0;
        Ok(Self {
            omega1,
            omega2,
            alpha1: f64::NAN,
            alpha2: f64::NAN,
            t_star: if boundary {
                1.0
            } else {
                t_star_from_omegas(omega1, omega2)
            },
            kappa,
            t,
            envelope_coeff: ((1.0 + omega2) / (1.0 - omega1)).powf(kappa),
            lambda_ratio: 1.0,
            cbar_norm: 1.0,
            omega1_boundary: boundary,
        })
    }

    pub fn delta(&self, t: f64) -> f64 {
        delta_from_omegas(self.omega1, self.omega2, t)
    }

    /// Comparison-function bound on the error-state norm:
    /// `sqrt(coeff * lambda_ratio * Delta(T)^k) * r`, increasing in `r` and
    /// decaying to zero in `k` whenever `T > T*`.
    pub fn beta_zeta_tilde(&self, r: f64, k: u64) -> f64 {
        let ln_delta =
            ((self.t - 1.0) / self.t) * (-self.omega1).ln_1p() + self.omega2.ln_1p() / self.t;
        (0.5 * (self.ln_envelope_coeff() + self.lambda_ratio.ln() + k as f64 * ln_delta)).exp() * r
    }

    /// Comparison-function bound on the tracking error: `|Cbar|` times the
    /// state bound.
    pub fn beta_e(&self, r: f64, k: u64) -> f64 {
        self.cbar_norm * self.beta_zeta_tilde(r, k)
    }

    /// `kappa * (log(1+omega2) - log(1-omega1))`, finite unless at the boundary.
    pub fn ln_envelope_coeff(&self) -> f64 {
        self.kappa * (self.omega2.ln_1p() - (-self.omega1).ln_1p())
    }

    /// Whether the assumed duration divisor satisfies the stability condition.
    pub fn condition_holds(&self) -> bool {
        !self.omega1_boundary && self.t > self.t_star
    }

    /// Log of the exact envelope at step `k`: per-step factors accumulated
    /// over `[0, k)` using the schedule's own allowed/denied step counts.
    pub fn ln_exact_envelope(&self, sched: &DoSSchedule, ln_v0: f64, k: u64) -> Result<f64> {
        if k == 0 {
            return Ok(ln_v0);
        }
        let denied = sched.lambda_d(0, k - 1)? as f64;
        let allowed = k as f64 - denied;
        Ok(ln_v0 + allowed * (-self.omega1).ln_1p() + denied * self.omega2.ln_1p())
    }

    /// Log of the relaxed envelope `coeff * Delta(T)^k` at step `k`.
    pub fn ln_relaxed_envelope(&self, ln_v0: f64, k: u64) -> f64 {
        ln_v0
            + self.ln_envelope_coeff()
            + k as f64
                * (((self.t - 1.0) / self.t) * (-self.omega1).ln_1p()
                    + self.omega2.ln_1p() / self.t)
    }
}

/// Evaluate the alphas and rates of the resilience bound from the Riccati
/// solution. Matrix magnitudes use the induced 2-norm.
pub fn compute_resilience_bound(
    sol: &RiccatiSolution,
    aug: &AugmentedSystem,
    cost: &CostWeights,
    params: &DoSParams,
) -> Result<ResilienceBound> {
    let q = cost.effective_q();
    let bpb = (aug.bbar.transpose() * &sol.p_star * &aug.bbar)[(0, 0)];
    let kbpbk = sol.k_star.transpose() * bpb * &sol.k_star;
    let apa = aug.abar.transpose() * &sol.p_star * &aug.abar;
    let dpd = aug.dtilde.transpose() * &sol.p_star * &aug.dtilde;

    let kbpbk_norm = induced_two_norm(&kbpbk)?;
    let apa_norm = induced_two_norm(&apa)?;
    let dpd_norm = induced_two_norm(&dpd)?;

    let alpha1 = 1.0 + 2.0 * kbpbk_norm.powi(2) + 2.0 * apa_norm.powi(2);
    let alpha2 = 2.0 + 4.0 * kbpbk_norm.powi(2) + 4.0 * dpd_norm.powi(2);

    let q_eigs = symmetric_eigenvalues(&q)?;
    let p_eigs = symmetric_eigenvalues(&sol.p_star)?;
    let omega1 = q_eigs[0] / p_eigs[p_eigs.len() - 1];
    let omega2 = (alpha1 + 4.0 * alpha2) / p_eigs[0];

    if omega1 > 1.0 + 1e-9 {
        return Err(Error::Numerical(format!(
            "omega1 = {omega1} exceeds 1; the value matrix cannot dominate the state weight \
             for a Riccati solution"
        )));
    }
    let boundary = omega1 >= 1.0 - 1e-12;
    let omega1 = omega1.min(1.0);

    Ok(ResilienceBound {
        omega1,
        omega2,
        alpha1,
        alpha2,
        t_star: if boundary {
            1.0
        } else {
            t_star_from_omegas(omega1, omega2)
        },
        kappa: params.kappa,
        t: params.t,
        envelope_coeff: ((1.0 + omega2) / (1.0 - omega1)).powf(params.kappa),
        lambda_ratio: p_eigs[p_eigs.len() - 1] / p_eigs[0],
        cbar_norm: induced_two_norm(&aug.cbar)?,
        omega1_boundary: boundary,
    })
}

/// Exact and relaxed Lyapunov envelopes at step `k`, in linear scale.
/// Values may overflow to infinity for large rates; the log-space methods on
/// [`ResilienceBound`] are the ones used for dominance checks.
pub fn lyapunov_envelope(
    bound: &ResilienceBound,
    sched: &DoSSchedule,
    v0: f64,
    k: u64,
) -> Result<(f64, f64)> {
    if v0 < 0.0 || v0.is_nan() {
        return Err(Error::Argument(format!(
            "initial value must be nonnegative, got {v0}"
        )));
    }
    if v0 == 0.0 {
        return Ok((0.0, 0.0));
    }
    let exact = bound.ln_exact_envelope(sched, v0.ln(), k)?.exp();
    let relaxed = bound.ln_relaxed_envelope(v0.ln(), k).exp();
    Ok((exact, relaxed))
}
