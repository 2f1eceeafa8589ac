//! Model-free policy iteration from input/state data collected at
//! communication-allowed instants.
//!
//! Each iteration linearizes the policy-evaluation identity along recorded
//! trajectories, solves for the stacked unknown
//! `theta = [vecs(P); vec(Gamma1); vecs(Gamma2); vec(Theta1); vec(Theta2); vecs(Theta3)]`
//! in the least-squares sense, and improves the policy from the identified
//! `Gamma` blocks alone. No entry of `(A, B, D)` is touched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dos::DoSSchedule;
use crate::error::{Error, Result};
use crate::matrix_kit::{
    kron, rank, solve_least_squares, vec_cols, vecs_inverse, vecv, Mat, Vector,
};
use crate::optimal_control::CostWeights;
use crate::sim::SimTrace;

/// One usable sample: the state/input/exostate at a received instant whose
/// successor state was also received.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub k: u64,
    pub zeta: Vector,
    pub zeta_next: Vector,
    pub u: f64,
    pub w: Vector,
}

/// Ordered sample list feeding the identification.
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    samples: Vec<TrajectorySample>,
    state_dim: usize,
    exo_dim: usize,
}

impl TrajectoryLog {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Excitation("no communication-allowed sample pairs".into()))?;
        let state_dim = first.zeta.len();
        let exo_dim = first.w.len();
        let mut prev: Option<u64> = None;
        for s in &samples {
            if s.zeta.len() != state_dim || s.zeta_next.len() != state_dim || s.w.len() != exo_dim {
                return Err(Error::Dimension("inconsistent sample dimensions".into()));
            }
            if let Some(p) = prev {
                if s.k <= p {
                    return Err(Error::Validation(format!(
                        "sample instants must increase strictly; {} after {p}",
                        s.k
                    )));
                }
            }
            prev = Some(s.k);
        }
        Ok(Self {
            samples,
            state_dim,
            exo_dim,
        })
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn exo_dim(&self) -> usize {
        self.exo_dim
    }
}

/// Keep instant `k` iff both `k` and `k + 1` were communication-allowed, so
/// the successor state was actually received.
pub fn collect_log(trace: &SimTrace, sched: &DoSSchedule) -> Result<TrajectoryLog> {
    let mut samples = Vec::new();
    for pair in trace.steps.windows(2) {
        let (cur, next) = (&pair[0], &pair[1]);
        if sched.is_denied(cur.k) || sched.is_denied(next.k) {
            continue;
        }
        let mut zeta = Vector::zeros(cur.x.len() + cur.z.len());
        zeta.rows_mut(0, cur.x.len()).copy_from(&cur.x);
        zeta.rows_mut(cur.x.len(), cur.z.len()).copy_from(&cur.z);
        let mut zeta_next = Vector::zeros(next.x.len() + next.z.len());
        zeta_next.rows_mut(0, next.x.len()).copy_from(&next.x);
        zeta_next
            .rows_mut(next.x.len(), next.z.len())
            .copy_from(&next.z);
        samples.push(TrajectorySample {
            k: cur.k,
            zeta,
            zeta_next,
            u: cur.u,
            w: cur.w.clone(),
        });
    }
    TrajectoryLog::new(samples)
}

/// Column layout of the stacked unknown vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaLayout {
    /// Augmented state dimension (`n + q`).
    pub m: usize,
    /// Exosystem dimension.
    pub q: usize,
}

impl ThetaLayout {
    pub fn p_width(&self) -> usize {
        self.m * (self.m + 1) / 2
    }
    pub fn gamma1_width(&self) -> usize {
        self.m
    }
    pub fn gamma2_width(&self) -> usize {
        1
    }
    pub fn theta1_width(&self) -> usize {
        self.m * self.q
    }
    pub fn theta2_width(&self) -> usize {
        self.q
    }
    pub fn theta3_width(&self) -> usize {
        self.q * (self.q + 1) / 2
    }
    /// All widths before column reduction.
    pub fn total(&self) -> usize {
        self.p_width()
            + self.gamma1_width()
            + self.gamma2_width()
            + self.theta1_width()
            + self.theta2_width()
            + self.theta3_width()
    }
    /// First column of the exosystem-derived tail `[J_wz, J_wu, J_w]`; only
    /// columns from here on may be reduced away. Everything the policy
    /// improvement needs sits strictly before this offset.
    pub fn w_tail_offset(&self) -> usize {
        self.p_width() + self.gamma1_width() + self.gamma2_width()
    }
    pub fn w_tail_width(&self) -> usize {
        self.theta1_width() + self.theta2_width() + self.theta3_width()
    }
}

/// Data blocks assembled once per log and reused across iterations.
#[derive(Debug, Clone)]
pub struct DataMatrices {
    /// Rows `vecv(zeta_{k+1}) - vecv(zeta_k)`.
    pub xi_zeta: Mat,
    /// Rows `vecv(zeta_k)` (rank checks only).
    pub j_zeta: Mat,
    /// Rows `zeta_k (x) u_k`.
    pub j_zeta_u: Mat,
    /// Rows `zeta_k (x) zeta_k`.
    pub j_zeta_zeta: Mat,
    /// Rows `vecv(u_k) = u_k^2`.
    pub j_u: Mat,
    /// Rows `w_k (x) zeta_k`.
    pub j_w_zeta: Mat,
    /// Rows `w_k (x) u_k`.
    pub j_w_u: Mat,
    /// Rows `vecv(w_k)`.
    pub j_w: Mat,
    /// Raw states, one row per sample; policy-dependent columns are rebuilt
    /// from these each iteration.
    pub zeta_rows: Mat,
    pub layout: ThetaLayout,
}

impl DataMatrices {
    pub fn sample_count(&self) -> usize {
        self.zeta_rows.nrows()
    }
}

/// Assemble every data block in the frozen vectorization ordering.
pub fn build_data_matrices(log: &TrajectoryLog) -> Result<DataMatrices> {
    let m = log.state_dim();
    let q = log.exo_dim();
    let s = log.samples().len();
    let layout = ThetaLayout { m, q };

    let mut xi_zeta = Mat::zeros(s, layout.p_width());
    let mut j_zeta = Mat::zeros(s, layout.p_width());
    let mut j_zeta_u = Mat::zeros(s, m);
    let mut j_zeta_zeta = Mat::zeros(s, m * m);
    let mut j_u = Mat::zeros(s, 1);
    let mut j_w_zeta = Mat::zeros(s, q * m);
    let mut j_w_u = Mat::zeros(s, q);
    let mut j_w = Mat::zeros(s, layout.theta3_width());
    let mut zeta_rows = Mat::zeros(s, m);

    for (i, sample) in log.samples().iter().enumerate() {
        let vz = vecv(&sample.zeta)?;
        let vz_next = vecv(&sample.zeta_next)?;
        xi_zeta.row_mut(i).copy_from(&(&vz_next - &vz).transpose());
        j_zeta.row_mut(i).copy_from(&vz.transpose());
        j_zeta_u
            .row_mut(i)
            .copy_from(&(sample.zeta.transpose() * sample.u));
        let zz = kron(
            &Mat::from_column_slice(m, 1, sample.zeta.as_slice()),
            &Mat::from_column_slice(m, 1, sample.zeta.as_slice()),
        );
        j_zeta_zeta
            .row_mut(i)
            .copy_from(&Mat::from_column_slice(1, m * m, zz.as_slice()));
        j_u[(i, 0)] = sample.u * sample.u;
        let wz = kron(
            &Mat::from_column_slice(q, 1, sample.w.as_slice()),
            &Mat::from_column_slice(m, 1, sample.zeta.as_slice()),
        );
        j_w_zeta
            .row_mut(i)
            .copy_from(&Mat::from_column_slice(1, q * m, wz.as_slice()));
        j_w_u
            .row_mut(i)
            .copy_from(&(sample.w.transpose() * sample.u));
        j_w.row_mut(i).copy_from(&vecv(&sample.w)?.transpose());
        zeta_rows.row_mut(i).copy_from(&sample.zeta.transpose());
    }

    Ok(DataMatrices {
        xi_zeta,
        j_zeta,
        j_zeta_u,
        j_zeta_zeta,
        j_u,
        j_w_zeta,
        j_w_u,
        j_w,
        zeta_rows,
        layout,
    })
}

/// The regression matrix for policy `K_j` and its right-hand side:
/// `Psi = [Xi_zeta, -2 J_{zu} - 2 J_{zz}(I (x) K'), J_{Kz} - J_u, -2 J_{wz}, -2 J_{wu}, -J_w]`,
/// `rhs = -J_{zz} vec(Q + K'K)`.
pub fn build_psi(data: &DataMatrices, effective_q: &Mat, k_j: &Mat) -> Result<(Mat, Vector)> {
    let m = data.layout.m;
    let s = data.sample_count();
    if k_j.shape() != (1, m) {
        return Err(Error::Dimension(format!(
            "policy gain must be 1x{m}, got {}x{}",
            k_j.nrows(),
            k_j.ncols()
        )));
    }
    if effective_q.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "state weight must be {m}x{m}, got {}x{}",
            effective_q.nrows(),
            effective_q.ncols()
        )));
    }

    // The identity kron term needs dimension m = n + q so that it multiplies
    // the (m^2)-wide J_{zeta,zeta} block.
    let gamma1_block =
        -2.0 * (&data.j_zeta_u + &data.j_zeta_zeta * kron(&Mat::identity(m, m), &k_j.transpose()));

    let mut j_kzeta = Mat::zeros(s, 1);
    for i in 0..s {
        let kz = (k_j * data.zeta_rows.row(i).transpose())[(0, 0)];
        j_kzeta[(i, 0)] = kz * kz;
    }

    let layout = data.layout;
    let mut psi = Mat::zeros(s, layout.total());
    let mut col = 0;
    for block in [
        &data.xi_zeta,
        &gamma1_block,
        &(&j_kzeta - &data.j_u),
        &(-2.0 * &data.j_w_zeta),
        &(-2.0 * &data.j_w_u),
        &(-1.0 * &data.j_w),
    ] {
        psi.view_mut((0, col), (s, block.ncols())).copy_from(block);
        col += block.ncols();
    }
    debug_assert_eq!(col, layout.total());

    let q_j = effective_q + k_j.transpose() * k_j;
    let rhs = -(&data.j_zeta_zeta * vec_cols(&q_j));
    Ok((psi, Vector::from_column_slice(rhs.as_slice())))
}

/// Scale every column to unit norm (zero columns stay put). The regression
/// blocks mix monomials of very different magnitudes; without equilibration
/// the scale spread alone eats most of the rank threshold.
fn equilibrated(m: &Mat) -> (Mat, Vec<f64>) {
    let mut eq = m.clone();
    let mut scales = Vec::with_capacity(m.ncols());
    for mut col in eq.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        scales.push(norm);
    }
    (eq, scales)
}

/// Least squares with column equilibration; rank decisions and the solve act
/// on the scaled matrix, the solution is mapped back to raw coordinates.
fn solve_equilibrated_least_squares(m: &Mat, b: &Vector) -> Result<(Vector, f64)> {
    let (eq, scales) = equilibrated(m);
    let (mut theta, residual) = solve_least_squares(&eq, b)?;
    for (i, &s) in scales.iter().enumerate() {
        if s > 0.0 {
            theta[i] /= s;
        }
    }
    Ok((theta, residual))
}

/// Drop exosystem-derived columns that are linearly dependent on the rest, so
/// the regression matrix becomes full column rank. A rank deficiency in the
/// leading blocks is an excitation failure, not redundancy: those columns
/// carry the value matrix and improvement terms.
pub fn reduce_columns(psi: &Mat, layout: &ThetaLayout) -> Result<(Mat, Vec<usize>)> {
    let head_w = layout.w_tail_offset();
    let s = psi.nrows();
    let (psi_eq, _) = equilibrated(psi);
    let head_eq = psi_eq.view((0, 0), (s, head_w)).into_owned();
    let head_rank = rank(&head_eq)?;
    if head_rank < head_w {
        return Err(Error::Excitation(format!(
            "regression matrix is rank deficient outside the exosystem blocks \
             (rank {head_rank} of {head_w}); collect richer data"
        )));
    }
    let mut kept_eq = head_eq;
    let mut kept_cols: Vec<usize> = (0..head_w).collect();
    let mut dropped = Vec::new();
    for j in 0..layout.w_tail_width() {
        let col = psi_eq.column(head_w + j);
        let mut trial = Mat::zeros(s, kept_eq.ncols() + 1);
        trial
            .view_mut((0, 0), (s, kept_eq.ncols()))
            .copy_from(&kept_eq);
        trial.column_mut(kept_eq.ncols()).copy_from(&col);
        if rank(&trial)? == kept_eq.ncols() + 1 {
            kept_eq = trial;
            kept_cols.push(head_w + j);
        } else {
            dropped.push(head_w + j);
        }
    }

    // A drop is only harmless redundancy if the column sits in the span of
    // the kept exosystem columns: then the removed coefficient is absorbed
    // by other Theta entries and the value/improvement blocks stay exact. A
    // dependency that needs the leading columns would silently bias them.
    let kept_tail: Vec<usize> = kept_cols.iter().copied().filter(|&c| c >= head_w).collect();
    for &c in &dropped {
        let col = psi_eq.column(c).into_owned();
        if col.norm() == 0.0 {
            continue;
        }
        if kept_tail.is_empty() {
            return Err(Error::Excitation(format!(
                "column {c} depends on the identifying blocks; data manifold too degenerate"
            )));
        }
        let mut tail_mat = Mat::zeros(s, kept_tail.len());
        for (dst, &src) in kept_tail.iter().enumerate() {
            tail_mat.column_mut(dst).copy_from(&psi_eq.column(src));
        }
        let residual = match solve_least_squares(&tail_mat, &col) {
            Ok((_, residual)) => residual,
            Err(Error::RankDeficient { .. }) => f64::INFINITY,
            Err(other) => return Err(other),
        };
        if residual > 1e-6 * col.norm() {
            return Err(Error::Excitation(format!(
                "column {c} is dependent on the identifying blocks, not just the \
                 exosystem ones; collect richer data"
            )));
        }
    }

    let mut psi_bar = Mat::zeros(s, kept_cols.len());
    for (dst, &src) in kept_cols.iter().enumerate() {
        psi_bar.column_mut(dst).copy_from(&psi.column(src));
    }
    Ok((psi_bar, dropped))
}

/// Verdict of the persistent-excitation rank condition on the raw data blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankReport {
    pub satisfied: bool,
    pub achieved: usize,
    pub required: usize,
    /// Internally dependent columns among the exosystem-derived blocks.
    pub jw_dependent: usize,
}

/// Evaluate `rank([J_zeta, J_{zeta,u}, J_u, J_{w,zeta}, J_{w,u}, J_w])`
/// against the full unknown count minus the internally dependent
/// exosystem-derived columns (a degenerate exosystem trajectory cannot excite
/// them, however long the record).
pub fn check_rank(data: &DataMatrices) -> Result<RankReport> {
    let layout = data.layout;
    let s = data.sample_count();
    let total = layout.total();
    let mut stacked = Mat::zeros(s, total);
    let mut col = 0;
    for block in [
        &data.j_zeta,
        &data.j_zeta_u,
        &data.j_u,
        &data.j_w_zeta,
        &data.j_w_u,
        &data.j_w,
    ] {
        stacked
            .view_mut((0, col), (s, block.ncols()))
            .copy_from(block);
        col += block.ncols();
    }
    let achieved = rank(&equilibrated(&stacked).0)?;

    let tail_w = layout.w_tail_width();
    let mut tail = Mat::zeros(s, tail_w);
    tail.view_mut((0, 0), (s, layout.theta1_width()))
        .copy_from(&data.j_w_zeta);
    tail.view_mut((0, layout.theta1_width()), (s, layout.theta2_width()))
        .copy_from(&data.j_w_u);
    tail.view_mut(
        (0, layout.theta1_width() + layout.theta2_width()),
        (s, layout.theta3_width()),
    )
    .copy_from(&data.j_w);
    let jw_dependent = tail_w - rank(&equilibrated(&tail).0)?;

    let required = total - jw_dependent;
    Ok(RankReport {
        satisfied: achieved == required,
        achieved,
        required,
        jw_dependent,
    })
}

/// One identified iterate: the value matrix, the improvement blocks, and the
/// disturbance cross terms.
#[derive(Debug, Clone)]
pub struct PIIterate {
    pub j: usize,
    /// Policy the iterate evaluates.
    pub k: Mat,
    pub p: Mat,
    pub gamma1: Mat,
    pub gamma2: f64,
    /// Disturbance cross terms; entries backed by dropped columns are NaN
    /// ("not identified"). Same convention for `theta2` and `theta3`.
    pub theta1: Mat,
    pub theta2: Mat,
    pub theta3: Mat,
    /// The reduced solution vector as solved.
    pub theta: Vector,
    /// Global column indices removed before solving (all in the `J_w` block).
    pub dropped_columns: Vec<usize>,
    pub residual: f64,
}

/// Least-squares solve of the reduced system and unpacking of the unknowns.
pub fn solve_iteration(
    psi_bar: &Mat,
    rhs: &Vector,
    layout: &ThetaLayout,
    dropped: &[usize],
    j: usize,
    k_j: &Mat,
) -> Result<PIIterate> {
    debug_assert!(dropped.iter().all(|&c| c >= layout.w_tail_offset()));
    let (theta_bar, residual) =
        solve_equilibrated_least_squares(psi_bar, rhs).map_err(|e| match e {
            Error::RankDeficient {
                required,
                found,
                context,
            } => Error::Excitation(format!(
                "reduced regression matrix still rank deficient ({found} of {required}, {context})"
            )),
            other => other,
        })?;

    // Re-expand to the full layout with NaN sentinels at dropped positions.
    let mut full = vec![f64::NAN; layout.total()];
    let mut src = 0;
    for (idx, slot) in full.iter_mut().enumerate() {
        if dropped.contains(&idx) {
            continue;
        }
        *slot = theta_bar[src];
        src += 1;
    }
    debug_assert_eq!(src, theta_bar.len());

    let m = layout.m;
    let q = layout.q;
    let mut off = 0;
    let p_vec = Vector::from_column_slice(&full[off..off + layout.p_width()]);
    off += layout.p_width();
    let gamma1 = Mat::from_row_slice(1, m, &full[off..off + m]);
    off += m;
    let gamma2 = full[off];
    off += 1;
    let theta1 = Mat::from_column_slice(m, q, &full[off..off + m * q]);
    off += m * q;
    let theta2 = Mat::from_row_slice(1, q, &full[off..off + q]);
    off += q;
    let theta3_vec = Vector::from_column_slice(&full[off..off + layout.theta3_width()]);
    let theta3 = vecs_inverse(&theta3_vec, q)?;

    let p = vecs_inverse(&p_vec, m)?;

    Ok(PIIterate {
        j,
        k: k_j.clone(),
        p,
        gamma1,
        gamma2,
        theta1,
        theta2,
        theta3,
        theta: theta_bar,
        dropped_columns: dropped.to_vec(),
        residual,
    })
}

/// `K_{j+1} = (1 + Gamma2)^{-1} Gamma1` from identified blocks only.
pub fn policy_improvement(iterate: &PIIterate) -> Result<Mat> {
    let den = 1.0 + iterate.gamma2;
    if den.is_nan() || den <= 0.0 {
        return Err(Error::Numerical(format!(
            "1 + Gamma2 = {den} is not positive; identification corrupted"
        )));
    }
    Ok(&iterate.gamma1 / den)
}

/// Outcome of the full online policy-iteration loop.
#[derive(Debug, Clone)]
pub struct LearnResult {
    pub k_final: Mat,
    pub p_final: Mat,
    pub iterates: Vec<PIIterate>,
}

/// Run policy iteration on recorded data until `|P_j - P_{j-1}| <= epsilon0`.
pub fn run_algorithm_1(
    log: &TrajectoryLog,
    cost: &CostWeights,
    k0: &Mat,
    epsilon0: f64,
) -> Result<LearnResult> {
    if epsilon0.is_nan() || epsilon0 <= 0.0 {
        return Err(Error::Argument(format!(
            "stopping threshold must be positive, got {epsilon0}"
        )));
    }
    let data = build_data_matrices(log)?;
    let rank_report = check_rank(&data)?;
    if !rank_report.satisfied {
        return Err(Error::Excitation(format!(
            "rank condition unsatisfied: achieved {} of required {} \
             (dependent exosystem columns: {}); extend the horizon or enrich exploration",
            rank_report.achieved, rank_report.required, rank_report.jw_dependent
        )));
    }
    let effective_q = cost.effective_q();

    let cap = 50;
    let mut k_j = k0.clone();
    let mut iterates: Vec<PIIterate> = Vec::new();
    for j in 0..cap {
        let (psi, rhs) = build_psi(&data, &effective_q, &k_j)?;
        let (psi_bar, dropped) = reduce_columns(&psi, &data.layout)?;
        let iterate = solve_iteration(&psi_bar, &rhs, &data.layout, &dropped, j, &k_j)?;
        let k_next = policy_improvement(&iterate)?;
        let done = iterates
            .last()
            .map(|prev| (&iterate.p - &prev.p).norm() <= epsilon0)
            .unwrap_or(false);
        iterates.push(iterate);
        k_j = k_next;
        if done {
            let last = iterates.last().expect("non-empty");
            return Ok(LearnResult {
                k_final: k_j,
                p_final: last.p.clone(),
                iterates,
            });
        }
    }
    Err(Error::Convergence {
        iterations: cap,
        context: "policy iteration on data did not settle".into(),
    })
}

/// Exploration input: a fixed mix of sinusoids with seeded frequencies in
/// `(0, pi)` rad/step and amplitudes summing to the requested level.
#[derive(Debug, Clone)]
pub struct ExplorationSignal {
    components: Vec<(f64, f64, f64)>, // (amplitude, frequency, phase)
}

impl ExplorationSignal {
    pub fn sinusoid_mix(seed: u64, level: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = 10;
        let mut freqs = Vec::with_capacity(count);
        let mut amps = Vec::with_capacity(count);
        let mut phases = Vec::with_capacity(count);
        for _ in 0..count {
            let mut f = 0.0;
            while f <= 0.0 || f >= std::f64::consts::PI {
                f = rng.random_range(0.0..std::f64::consts::PI);
            }
            freqs.push(f);
            amps.push(rng.random_range(0.1..1.0));
            phases.push(rng.random_range(0.0..std::f64::consts::TAU));
        }
        let total: f64 = amps.iter().sum();
        let components = (0..count)
            .map(|i| (amps[i] / total * level, freqs[i], phases[i]))
            .collect();
        Self { components }
    }

    pub fn zero() -> Self {
        Self {
            components: Vec::new(),
        }
    }

    pub fn value(&self, k: u64) -> f64 {
        self.components
            .iter()
            .map(|&(a, f, p)| a * (f * k as f64 + p).sin())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_kit::{mat_from_rows, solve_discrete_lyapunov, vecs};
    use approx::assert_relative_eq;

    /// Synthesize a log directly from known augmented matrices; the learner
    /// only ever sees the `(zeta, u, w)` stream.
    #[allow(clippy::too_many_arguments)]
    fn synth_log(
        abar: &Mat,
        bbar: &Mat,
        dbar: &Mat,
        e_exo: &Mat,
        zeta0: &[f64],
        w0: &[f64],
        k0: &Mat,
        expl_seed: u64,
        steps: usize,
    ) -> TrajectoryLog {
        let expl = ExplorationSignal::sinusoid_mix(expl_seed, 1.0);
        let mut zeta = Vector::from_column_slice(zeta0);
        let mut w = Vector::from_column_slice(w0);
        let mut samples = Vec::new();
        for k in 0..steps {
            let u = -(k0 * &zeta)[(0, 0)] + expl.value(k as u64);
            let zeta_next = abar * &zeta + bbar.column(0) * u + dbar * &w;
            samples.push(TrajectorySample {
                k: k as u64,
                zeta: zeta.clone(),
                zeta_next: zeta_next.clone(),
                u,
                w: w.clone(),
            });
            zeta = zeta_next;
            w = e_exo * &w;
        }
        TrajectoryLog::new(samples).unwrap()
    }

    /// Model-based unknown vector for a fixed policy: the oracle the
    /// data-driven identity is checked against.
    fn model_theta(
        abar: &Mat,
        bbar: &Mat,
        dbar: &Mat,
        effective_q: &Mat,
        k_j: &Mat,
    ) -> (Vector, Mat) {
        let aj = abar - bbar * k_j;
        let p = solve_discrete_lyapunov(&aj, &(effective_q + k_j.transpose() * k_j)).unwrap();
        let gamma1 = bbar.transpose() * &p * abar;
        let gamma2 = bbar.transpose() * &p * bbar;
        let theta1 = abar.transpose() * &p * dbar;
        let theta2 = bbar.transpose() * &p * dbar;
        let theta3 = dbar.transpose() * &p * dbar;
        let mut packed = Vec::new();
        packed.extend_from_slice(vecs(&p).unwrap().as_slice());
        packed.extend_from_slice(vec_cols(&gamma1).as_slice());
        packed.extend_from_slice(vecs(&gamma2).unwrap().as_slice());
        packed.extend_from_slice(vec_cols(&theta1).as_slice());
        packed.extend_from_slice(vec_cols(&theta2).as_slice());
        packed.extend_from_slice(vecs(&theta3).unwrap().as_slice());
        (Vector::from_vec(packed), p)
    }

    fn toy_world() -> (Mat, Mat, Mat, Mat) {
        // A stable two-state augmented system with a scalar exosystem channel.
        let abar = mat_from_rows(2, 2, &[0.6, 0.1, 0.2, 0.5]).unwrap();
        let bbar = mat_from_rows(2, 1, &[1.0, 0.3]).unwrap();
        let dbar = mat_from_rows(2, 1, &[0.05, -0.08]).unwrap();
        let e_exo = mat_from_rows(1, 1, &[1.0]).unwrap();
        (abar, bbar, dbar, e_exo)
    }

    #[test]
    fn collect_log_respects_successor_rule() {
        use crate::dos::DoSSchedule;
        use crate::optimal_control::{stabilizing_gain, CostWeights};
        use crate::plant::{build_augmented, pendulum_preset};

        let (plant, im) = pendulum_preset();
        let aug = build_augmented(&plant, &im).unwrap();
        let cost = CostWeights::new(Mat::identity(5, 5), 1.0).unwrap();
        let k0 = stabilizing_gain(&aug, &cost).unwrap();
        let sched = DoSSchedule::new(vec![(3, 2)]).unwrap();
        let (_, log) = crate::sim::simulate_learning(
            &plant,
            &im,
            &sched,
            &k0,
            &ExplorationSignal::sinusoid_mix(1, 1.0),
            true,
            &Vector::from_column_slice(&[0.5, 0.0, 0.0, 0.0]),
            &Vector::zeros(1),
            &Vector::from_column_slice(&[1.0]),
            10,
        )
        .unwrap();
        // attack on [3,5): k=2 loses its successor, k=3..4 denied, k=5..9 fine
        let instants: Vec<u64> = log.samples().iter().map(|s| s.k).collect();
        assert_eq!(instants, vec![0, 1, 5, 6, 7, 8, 9]);
    }

    #[test]
    fn fully_attacked_horizon_yields_excitation_error() {
        use crate::dos::DoSSchedule;
        let sched = DoSSchedule::new(vec![(0, 100)]).unwrap();
        let trace = SimTrace { steps: Vec::new() };
        assert!(collect_log(&trace, &sched).is_err());
    }

    #[test]
    fn single_sample_blocks() {
        let log = TrajectoryLog::new(vec![TrajectorySample {
            k: 0,
            zeta: Vector::from_column_slice(&[2.0]),
            zeta_next: Vector::from_column_slice(&[3.0]),
            u: 2.0,
            w: Vector::from_column_slice(&[1.0]),
        }])
        .unwrap();
        let data = build_data_matrices(&log).unwrap();
        assert_eq!(data.xi_zeta[(0, 0)], 5.0); // 9 - 4
        assert_eq!(data.j_u[(0, 0)], 4.0);
        assert_eq!(data.j_w_zeta[(0, 0)], 2.0);
        assert_eq!(data.j_w[(0, 0)], 1.0);
    }

    #[test]
    fn j_w_zeta_row_is_kron_of_w_and_zeta() {
        let log = TrajectoryLog::new(vec![TrajectorySample {
            k: 0,
            zeta: Vector::from_column_slice(&[1.0, 2.0]),
            zeta_next: Vector::from_column_slice(&[0.0, 0.0]),
            u: 0.5,
            w: Vector::from_column_slice(&[1.0]),
        }])
        .unwrap();
        let data = build_data_matrices(&log).unwrap();
        assert_eq!(data.j_w_zeta.row(0).transpose().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn psi_has_full_theta_width_before_reduction() {
        let (abar, bbar, dbar, e_exo) = toy_world();
        let k0 = Mat::zeros(1, 2);
        let log = synth_log(
            &abar,
            &bbar,
            &dbar,
            &e_exo,
            &[0.4, -0.2],
            &[1.0],
            &k0,
            3,
            40,
        );
        let data = build_data_matrices(&log).unwrap();
        let q = Mat::identity(2, 2);
        let (psi, _) = build_psi(&data, &q, &k0).unwrap();
        // 3 + 2 + 1 + 2 + 1 + 1
        assert_eq!(psi.ncols(), 10);
        assert_eq!(data.layout.total(), 10);
    }

    #[test]
    fn zero_gain_collapses_psi_blocks() {
        let (abar, bbar, dbar, e_exo) = toy_world();
        let k0 = Mat::zeros(1, 2);
        let log = synth_log(
            &abar,
            &bbar,
            &dbar,
            &e_exo,
            &[0.4, -0.2],
            &[1.0],
            &k0,
            3,
            12,
        );
        let data = build_data_matrices(&log).unwrap();
        let q = Mat::identity(2, 2);
        let (psi, rhs) = build_psi(&data, &q, &k0).unwrap();
        // Gamma1 block reduces to -2 J_{zeta,u}
        let got = psi.view((0, 3), (psi.nrows(), 2)).into_owned();
        assert!((got - (-2.0 * &data.j_zeta_u)).norm() < 1e-14);
        // Gamma2 block reduces to -J_u
        let got = psi.view((0, 5), (psi.nrows(), 1)).into_owned();
        assert!((got - (-1.0 * &data.j_u)).norm() < 1e-14);
        // rhs reduces to -J_{zeta,zeta} vec(Q)
        let expect = -(&data.j_zeta_zeta * vec_cols(&q));
        assert!((Vector::from_column_slice(expect.as_slice()) - rhs).norm() < 1e-14);
    }

    #[test]
    fn data_driven_identity_matches_model_theta() {
        // The sample-wise residual pins the sign and ordering of every block.
        let (abar, bbar, dbar, e_exo) = toy_world();
        let k0 = mat_from_rows(1, 2, &[0.2, 0.1]).unwrap();
        let log = synth_log(
            &abar,
            &bbar,
            &dbar,
            &e_exo,
            &[0.4, -0.2],
            &[1.0],
            &k0,
            7,
            60,
        );
        let data = build_data_matrices(&log).unwrap();
        let q = Mat::identity(2, 2);

        let mut k_j = k0.clone();
        for _ in 0..3 {
            let (theta_model, p) = model_theta(&abar, &bbar, &dbar, &q, &k_j);
            let (psi, rhs) = build_psi(&data, &q, &k_j).unwrap();
            let err = &psi * &theta_model - &rhs;
            let max_row = err.iter().map(|v| v.abs()).fold(0.0_f64, f64::max);
            assert!(max_row < 1e-9, "row-wise identity residual {max_row}");
            let den = 1.0 + (bbar.transpose() * &p * &bbar)[(0, 0)];
            k_j = bbar.transpose() * &p * &abar / den;
        }
    }

    #[test]
    fn reduce_keeps_full_rank_matrix_untouched() {
        let (abar, bbar, dbar, e_exo) = toy_world();
        // varying exosystem state keeps J_w independent
        let e_var = mat_from_rows(1, 1, &[-1.0]).unwrap();
        let k0 = Mat::zeros(1, 2);
        let log = synth_log(
            &abar,
            &bbar,
            &dbar,
            &e_var,
            &[0.4, -0.2],
            &[1.0],
            &k0,
            5,
            50,
        );
        let data = build_data_matrices(&log).unwrap();
        let q = Mat::identity(2, 2);
        let (psi, _) = build_psi(&data, &q, &k0).unwrap();
        let _ = e_exo;
        let (psi_bar, dropped) = reduce_columns(&psi, &data.layout).unwrap();
        if dropped.is_empty() {
            assert_eq!(psi_bar.ncols(), psi.ncols());
        } else {
            // any dropped column must come from the trailing block
            assert!(dropped.iter().all(|&c| c >= data.layout.w_tail_offset()));
        }
        assert_eq!(rank(&psi_bar).unwrap(), psi_bar.ncols());
    }

    #[test]
    fn duplicated_exosystem_state_drops_exactly_one_column() {
        // q = 2 with components of equal magnitude: vecv(w) then carries
        // identical squared entries, so exactly one J_w column is redundant
        // while the sign alternation keeps the cross blocks independent.
        let abar = mat_from_rows(2, 2, &[0.6, 0.1, 0.2, 0.5]).unwrap();
        let bbar = mat_from_rows(2, 1, &[1.0, 0.3]).unwrap();
        let dbar = mat_from_rows(2, 2, &[0.05, 0.02, -0.08, 0.03]).unwrap();
        let e_exo = mat_from_rows(2, 2, &[1.0, 0.0, 0.0, -1.0]).unwrap();
        let k0 = Mat::zeros(1, 2);
        let log = synth_log(
            &abar,
            &bbar,
            &dbar,
            &e_exo,
            &[0.4, -0.2],
            &[1.0, 1.0],
            &k0,
            11,
            80,
        );
        let data = build_data_matrices(&log).unwrap();
        let q = Mat::identity(2, 2);
        let (psi, rhs) = build_psi(&data, &q, &k0).unwrap();
        let (psi_bar, dropped) = reduce_columns(&psi, &data.layout).unwrap();
        assert!(!dropped.is_empty());
        assert!(dropped.iter().all(|&c| c >= data.layout.w_tail_offset()));
        assert_eq!(rank(&psi_bar).unwrap(), psi_bar.ncols());
        let report = check_rank(&data).unwrap();
        assert!(report.jw_dependent >= 1);

        // the reduced unknown vector shrinks by exactly the dropped count
        let it = solve_iteration(&psi_bar, &rhs, &data.layout, &dropped, 0, &k0).unwrap();
        assert_eq!(it.theta.len(), data.layout.total() - dropped.len());
        assert!(it.theta3.iter().any(|v| v.is_nan()));
    }

    #[test]
    fn rank_report_counts() {
        let (abar, bbar, dbar, e_exo) = toy_world();
        let k0 = Mat::zeros(1, 2);
        let log = synth_log(
            &abar,
            &bbar,
            &dbar,
            &e_exo,
            &[0.4, -0.2],
            &[1.0],
            &k0,
            13,
            60,
        );
        let data = build_data_matrices(&log).unwrap();
        let report = check_rank(&data).unwrap();
        assert!(report.satisfied, "{report:?}");
        assert_eq!(report.required, 10 - report.jw_dependent);

        // too few samples cannot reach the required rank
        let short = TrajectoryLog::new(log.samples()[..3].to_vec()).unwrap();
        let short_data = build_data_matrices(&short).unwrap();
        let report = check_rank(&short_data).unwrap();
        assert!(!report.satisfied);
    }

    #[test]
    fn solve_iteration_recovers_model_blocks() {
        let (abar, bbar, dbar, e_exo) = toy_world();
        let k_j = mat_from_rows(1, 2, &[0.2, 0.1]).unwrap();
        let log = synth_log(
            &abar,
            &bbar,
            &dbar,
            &e_exo,
            &[0.4, -0.2],
            &[1.0],
            &k_j,
            17,
            80,
        );
        let data = build_data_matrices(&log).unwrap();
        let q = Mat::identity(2, 2);
        let (psi, rhs) = build_psi(&data, &q, &k_j).unwrap();
        let (psi_bar, dropped) = reduce_columns(&psi, &data.layout).unwrap();
        let it = solve_iteration(&psi_bar, &rhs, &data.layout, &dropped, 0, &k_j).unwrap();
        assert!(it.residual < 1e-9, "residual {}", it.residual);

        let (_, p_model) = model_theta(&abar, &bbar, &dbar, &q, &k_j);
        assert!(
            (&it.p - &p_model).norm() < 1e-6,
            "P error {}",
            (&it.p - &p_model).norm()
        );
        let gamma1_model = bbar.transpose() * &p_model * &abar;
        assert!((&it.gamma1 - &gamma1_model).norm() < 1e-6);
        let k_next = policy_improvement(&it).unwrap();
        let den = 1.0 + (bbar.transpose() * &p_model * &bbar)[(0, 0)];
        let k_model = bbar.transpose() * &p_model * &abar / den;
        assert!((&k_next - &k_model).norm() < 1e-6);
    }

    #[test]
    fn zero_dynamics_iterate_recovers_bare_weights() {
        // With Abar = 0 and K = 0: P_0 = Q, Gamma1 = B'P A = 0, Gamma2 = B'QB.
        let abar = Mat::zeros(1, 1);
        let bbar = mat_from_rows(1, 1, &[1.0]).unwrap();
        let dbar = mat_from_rows(1, 1, &[0.3]).unwrap();
        let e_exo = mat_from_rows(1, 1, &[-1.0]).unwrap();
        let k0 = Mat::zeros(1, 1);
        let log = synth_log(&abar, &bbar, &dbar, &e_exo, &[0.4], &[1.0], &k0, 31, 50);
        let data = build_data_matrices(&log).unwrap();
        let q = mat_from_rows(1, 1, &[2.0]).unwrap();
        let (psi, rhs) = build_psi(&data, &q, &k0).unwrap();
        let (psi_bar, dropped) = reduce_columns(&psi, &data.layout).unwrap();
        let it = solve_iteration(&psi_bar, &rhs, &data.layout, &dropped, 0, &k0).unwrap();
        assert!(
            (&it.p - &q).norm() < 1e-9,
            "P should equal Q, err {}",
            (&it.p - &q).norm()
        );
        assert!(it.gamma1.norm() < 1e-9);
        let expected_gamma2 = (bbar.transpose() * &q * &bbar)[(0, 0)];
        assert!((it.gamma2 - expected_gamma2).abs() < 1e-9);
    }

    #[test]
    fn head_involving_dependency_is_rejected_not_absorbed() {
        // Zero dynamics in two dimensions confine the state to a line: the
        // exosystem columns then depend on the identifying blocks and a naive
        // reduction would bias the value matrix.
        let abar = Mat::zeros(2, 2);
        let bbar = mat_from_rows(2, 1, &[1.0, 0.5]).unwrap();
        let dbar = mat_from_rows(2, 1, &[0.2, -0.1]).unwrap();
        let e_exo = mat_from_rows(1, 1, &[-1.0]).unwrap();
        let k0 = Mat::zeros(1, 2);
        let log = synth_log(
            &abar,
            &bbar,
            &dbar,
            &e_exo,
            &[0.4, -0.2],
            &[1.0],
            &k0,
            31,
            60,
        );
        let data = build_data_matrices(&log).unwrap();
        let q = mat_from_rows(2, 2, &[2.0, 0.3, 0.3, 1.0]).unwrap();
        let (psi, _) = build_psi(&data, &q, &k0).unwrap();
        assert!(matches!(
            reduce_columns(&psi, &data.layout),
            Err(Error::Excitation(_))
        ));
    }

    #[test]
    fn head_rank_deficiency_is_an_excitation_error() {
        // three samples cannot excite the six leading unknowns
        let (abar, bbar, dbar, e_exo) = toy_world();
        let k0 = Mat::zeros(1, 2);
        let log = synth_log(
            &abar,
            &bbar,
            &dbar,
            &e_exo,
            &[0.4, -0.2],
            &[1.0],
            &k0,
            37,
            3,
        );
        let data = build_data_matrices(&log).unwrap();
        let q = Mat::identity(2, 2);
        let (psi, _) = build_psi(&data, &q, &k0).unwrap();
        assert!(matches!(
            reduce_columns(&psi, &data.layout),
            Err(Error::Excitation(_))
        ));
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let (abar, bbar, dbar, e_exo) = toy_world();
        let k0 = Mat::zeros(1, 2);
        let log = synth_log(
            &abar,
            &bbar,
            &dbar,
            &e_exo,
            &[0.4, -0.2],
            &[1.0],
            &k0,
            19,
            50,
        );
        let data = build_data_matrices(&log).unwrap();
        let q = Mat::identity(2, 2);
        let (psi, _) = build_psi(&data, &q, &k0).unwrap();
        let (psi_bar, dropped) = reduce_columns(&psi, &data.layout).unwrap();
        let it = solve_iteration(
            &psi_bar,
            &Vector::zeros(psi_bar.nrows()),
            &data.layout,
            &dropped,
            0,
            &k0,
        )
        .unwrap();
        assert!(it.theta.norm() < 1e-12);
    }

    #[test]
    fn policy_improvement_formula() {
        let base = PIIterate {
            j: 0,
            k: Mat::zeros(1, 2),
            p: Mat::identity(2, 2),
            gamma1: mat_from_rows(1, 2, &[2.0, 2.0]).unwrap(),
            gamma2: 1.0,
            theta1: Mat::zeros(2, 1),
            theta2: Mat::zeros(1, 1),
            theta3: Mat::zeros(1, 1),
            theta: Vector::zeros(1),
            dropped_columns: Vec::new(),
            residual: 0.0,
        };
        let k = policy_improvement(&base).unwrap();
        assert_eq!(k, mat_from_rows(1, 2, &[1.0, 1.0]).unwrap());

        let zero_gamma1 = PIIterate {
            gamma1: Mat::zeros(1, 2),
            ..base.clone()
        };
        assert!(policy_improvement(&zero_gamma1).unwrap().norm() == 0.0);

        let indefinite = PIIterate {
            gamma2: -2.0,
            ..base
        };
        assert!(policy_improvement(&indefinite).is_err());
    }

    #[test]
    fn algorithm_converges_to_oracle_on_clean_scalar_data() {
        // one-state plant without disturbance: the cleanest identification
        let abar = mat_from_rows(2, 2, &[0.9, 0.0, 0.3, 1.0]).unwrap();
        let bbar = mat_from_rows(2, 1, &[1.0, 0.0]).unwrap();
        let dbar = mat_from_rows(2, 1, &[0.0, 0.0]).unwrap();
        let e_exo = mat_from_rows(1, 1, &[1.0]).unwrap();
        let k0 = mat_from_rows(1, 2, &[0.5, 0.3]).unwrap();
        let log = synth_log(
            &abar,
            &bbar,
            &dbar,
            &e_exo,
            &[0.4, -0.2],
            &[0.0],
            &k0,
            23,
            80,
        );
        let cost = CostWeights::new(Mat::identity(2, 2), 1.0).unwrap();
        let result = run_algorithm_1(&log, &cost, &k0, 1e-10).unwrap();

        // oracle by model-based policy iteration on the same matrices
        let mut k = k0.clone();
        for _ in 0..200 {
            let p = solve_discrete_lyapunov(
                &(&abar - &bbar * &k),
                &(Mat::identity(2, 2) + k.transpose() * &k),
            )
            .unwrap();
            let den = 1.0 + (bbar.transpose() * &p * &bbar)[(0, 0)];
            k = bbar.transpose() * &p * &abar / den;
        }
        assert!(
            (&result.k_final - &k).norm() < 1e-8,
            "gain error {}",
            (&result.k_final - &k).norm()
        );

        // gain error must not increase once the iteration is underway
        let errs: Vec<f64> = result
            .iterates
            .iter()
            .map(|it| (&it.k - &k).norm())
            .collect();
        for pair in errs.windows(2).skip(1) {
            assert!(
                pair[1] <= pair[0] + 1e-9,
                "gain error increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn algorithm_handles_rotating_two_channel_exosystem() {
        let abar = mat_from_rows(3, 3, &[0.5, 0.1, 0.0, 0.0, 0.4, 0.2, 0.1, 0.0, 0.6]).unwrap();
        let bbar = mat_from_rows(3, 1, &[1.0, 0.5, -0.2]).unwrap();
        let dbar = mat_from_rows(3, 2, &[0.05, 0.01, -0.08, 0.02, 0.03, -0.04]).unwrap();
        let e_exo = mat_from_rows(2, 2, &[0.8, 0.6, -0.6, 0.8]).unwrap();
        let k0 = Mat::zeros(1, 3);
        let log = synth_log(
            &abar,
            &bbar,
            &dbar,
            &e_exo,
            &[0.3, 0.2, -0.1],
            &[1.0, -0.5],
            &k0,
            41,
            120,
        );
        let cost = CostWeights::new(Mat::identity(3, 3), 1.0).unwrap();
        let result = run_algorithm_1(&log, &cost, &k0, 1e-9).unwrap();

        let mut k = k0.clone();
        for _ in 0..200 {
            let p = solve_discrete_lyapunov(
                &(&abar - &bbar * &k),
                &(Mat::identity(3, 3) + k.transpose() * &k),
            )
            .unwrap();
            let den = 1.0 + (bbar.transpose() * &p * &bbar)[(0, 0)];
            k = bbar.transpose() * &p * &abar / den;
        }
        assert!(
            (&result.k_final - &k).norm() < 1e-7,
            "gain error {}",
            (&result.k_final - &k).norm()
        );
    }

    #[test]
    fn infinite_threshold_stops_at_first_comparison() {
        let (abar, bbar, dbar, e_exo) = toy_world();
        let k0 = mat_from_rows(1, 2, &[0.2, 0.1]).unwrap();
        let log = synth_log(
            &abar,
            &bbar,
            &dbar,
            &e_exo,
            &[0.4, -0.2],
            &[1.0],
            &k0,
            29,
            60,
        );
        let cost = CostWeights::new(Mat::identity(2, 2), 1.0).unwrap();
        let result = run_algorithm_1(&log, &cost, &k0, f64::INFINITY).unwrap();
        assert_eq!(result.iterates.len(), 2);
    }

    #[test]
    fn vecs_unpack_round_trip() {
        let p = mat_from_rows(3, 3, &[4.0, 1.0, 0.2, 1.0, 5.0, -0.7, 0.2, -0.7, 6.0]).unwrap();
        let packed = vecs(&p).unwrap();
        let back = vecs_inverse(&packed, 3).unwrap();
        assert!((back - p).norm() < 1e-14);
    }

    #[test]
    fn exploration_signal_is_deterministic_and_scaled() {
        let a = ExplorationSignal::sinusoid_mix(42, 1.0);
        let b = ExplorationSignal::sinusoid_mix(42, 1.0);
        for k in 0..50 {
            assert_eq!(a.value(k), b.value(k));
            assert!(a.value(k).abs() <= 1.0 + 1e-12);
        }
        assert_eq!(ExplorationSignal::zero().value(7), 0.0);
        let big = ExplorationSignal::sinusoid_mix(42, 2.0);
        assert_relative_eq!(big.value(3), 2.0 * a.value(3), max_relative = 1e-12);
    }
}
