//! Plant, exosystem and internal-model data, the augmented system built from
//! them, and the regulator equations defining the steady-state manifold.

use crate::error::{Error, Result};
use crate::matrix_kit::{
    complex_rank, eigenvalues, ensure_finite, kron, solve_least_squares, vec_cols, Mat, Vector,
};

/// Discrete-time cascade
/// `x+ = A x + B u + D w`, `w+ = E w`, `e = C x + F w`,
/// with scalar input `u` and scalar tracking error `e`.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub e: Mat,
    pub f: Mat,
}

impl LinearPlant {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat, e: Mat, f: Mat) -> Result<Self> {
        let n = a.nrows();
        let q = e.nrows();
        if n == 0 || q == 0 {
            return Err(Error::Dimension("plant dimensions must be positive".into()));
        }
        if a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A must be square, got {}x{}",
                n,
                a.ncols()
            )));
        }
        if b.shape() != (n, 1) {
            return Err(Error::Dimension(format!(
                "B must be {n}x1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if c.shape() != (1, n) {
            return Err(Error::Dimension(format!(
                "C must be 1x{n}, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if d.shape() != (n, q) {
            return Err(Error::Dimension(format!(
                "D must be {n}x{q}, got {}x{}",
                d.nrows(),
                d.ncols()
            )));
        }
        if e.ncols() != q {
            return Err(Error::Dimension(format!(
                "E must be square, got {}x{}",
                q,
                e.ncols()
            )));
        }
        if f.shape() != (1, q) {
            return Err(Error::Dimension(format!(
                "F must be 1x{q}, got {}x{}",
                f.nrows(),
                f.ncols()
            )));
        }
        for (name, m) in [
            ("A", &a),
            ("B", &b),
            ("C", &c),
            ("D", &d),
            ("E", &e),
            ("F", &f),
        ] {
            ensure_finite(m, name)?;
        }
        Ok(Self { a, b, c, d, e, f })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn exo_dim(&self) -> usize {
        self.e.nrows()
    }

    /// One exact step of the cascade; `e` is computed from the pre-update state.
    pub fn step(&self, x: &Vector, u: f64, w: &Vector) -> Result<(Vector, Vector, f64)> {
        if x.len() != self.state_dim() || w.len() != self.exo_dim() {
            return Err(Error::Dimension(format!(
                "plant step: state length {} (need {}), exostate length {} (need {})",
                x.len(),
                self.state_dim(),
                w.len(),
                self.exo_dim()
            )));
        }
        let e = self.output_error(x, w);
        let x_next = &self.a * x + self.b.column(0) * u + &self.d * w;
        let w_next = &self.e * w;
        Ok((x_next, w_next, e))
    }

    /// `e = C x + F w`.
    pub fn output_error(&self, x: &Vector, w: &Vector) -> f64 {
        (&self.c * x)[(0, 0)] + (&self.f * w)[(0, 0)]
    }

    /// Reference signal `y_d = -F w`.
    pub fn reference(&self, w: &Vector) -> f64 {
        -(&self.f * w)[(0, 0)]
    }
}

/// Dynamic compensator `z+ = G1 z + G2 e` replicating the exosystem (`G1 = E`).
#[derive(Debug, Clone)]
pub struct InternalModel {
    pub g1: Mat,
    pub g2: Mat,
}

impl InternalModel {
    /// Build with `G1 = E`; rejects pairs `(G1, G2)` that are not controllable.
    pub fn new(e: &Mat, g2: Mat) -> Result<Self> {
        let q = e.nrows();
        if g2.shape() != (q, 1) {
            return Err(Error::Dimension(format!(
                "G2 must be {q}x1, got {}x{}",
                g2.nrows(),
                g2.ncols()
            )));
        }
        ensure_finite(&g2, "G2")?;
        let mut ctrb = Mat::zeros(q, q);
        let mut col = g2.clone();
        for j in 0..q {
            ctrb.set_column(j, &col.column(0));
            col = e * &col;
        }
        let r = crate::matrix_kit::rank(&ctrb)?;
        if r != q {
            return Err(Error::Validation(format!(
                "(G1, G2) not controllable: controllability rank {r} of {q}"
            )));
        }
        Ok(Self { g1: e.clone(), g2 })
    }
}

/// Augmented system matrices over the stacked state `zeta = [x; z]`.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    pub abar: Mat,
    pub bbar: Mat,
    pub cbar: Mat,
    pub dbar: Mat,
    /// `[0; G2*Cbar]`, the injection channel the held-error mismatch enters through.
    pub dtilde: Mat,
    pub n: usize,
    pub q: usize,
}

impl AugmentedSystem {
    pub fn dim(&self) -> usize {
        self.n + self.q
    }

    /// `Abar - Bbar*K` for a `1 x (n+q)` gain.
    pub fn closed_loop(&self, k: &Mat) -> Result<Mat> {
        if k.shape() != (1, self.dim()) {
            return Err(Error::Dimension(format!(
                "gain must be 1x{}, got {}x{}",
                self.dim(),
                k.nrows(),
                k.ncols()
            )));
        }
        Ok(&self.abar - &self.bbar * k)
    }
}

/// Per-assumption verdicts with human-readable diagnostics.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub stabilizable: bool,
    pub exosystem_simple_unit_modulus: bool,
    pub transmission_rank_ok: bool,
    pub diagnostics: Vec<String>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.stabilizable && self.exosystem_simple_unit_modulus && self.transmission_rank_ok
    }
}

/// Eigenvalues of a defective matrix split numerically at the sqrt(eps) scale,
/// so simplicity is judged with a coarser separation than the unit-modulus check.
const EIG_UNIT_TOL: f64 = 1e-9;
const EIG_SEPARATION_TOL: f64 = 1e-6;

/// Check stabilizability of `(A, B)` (PBH on unstable eigenvalues), simplicity
/// and unit modulus of the exosystem spectrum, and the transmission rank
/// condition at every exosystem eigenvalue.
pub fn check_assumptions(plant: &LinearPlant) -> Result<AssumptionReport> {
    let n = plant.state_dim();
    let mut diagnostics = Vec::new();

    // PBH: rank [A - lambda I, B] = n for every |lambda| >= 1.
    let mut stabilizable = true;
    for (re, im) in eigenvalues(&plant.a)? {
        let modulus = (re * re + im * im).sqrt();
        if modulus < 1.0 - EIG_UNIT_TOL {
            continue;
        }
        let (mre, mim) = pbh_pencil(&plant.a, Some(&plant.b), None, re, im);
        if complex_rank(&mre, &mim)? != n {
            stabilizable = false;
            diagnostics.push(format!(
                "(A,B) PBH rank drop at eigenvalue {re}+{im}i (modulus {modulus:.6})"
            ));
        }
    }

    let exo_eigs = eigenvalues(&plant.e)?;
    let mut exo_ok = true;
    for &(re, im) in &exo_eigs {
        let modulus = (re * re + im * im).sqrt();
        if (modulus - 1.0).abs() > EIG_UNIT_TOL {
            exo_ok = false;
            diagnostics.push(format!(
                "exosystem eigenvalue {re}+{im}i has modulus {modulus:.9}"
            ));
        }
    }
    for i in 0..exo_eigs.len() {
        for j in (i + 1)..exo_eigs.len() {
            let dre = exo_eigs[i].0 - exo_eigs[j].0;
            let dim = exo_eigs[i].1 - exo_eigs[j].1;
            if (dre * dre + dim * dim).sqrt() < EIG_SEPARATION_TOL {
                exo_ok = false;
                diagnostics.push(format!(
                    "exosystem eigenvalue {}+{}i is repeated",
                    exo_eigs[i].0, exo_eigs[i].1
                ));
            }
        }
    }

    // rank [A - lambda I, B; C, 0] = n + 1 for every lambda in sigma(E).
    let mut transmission_ok = true;
    for &(re, im) in &exo_eigs {
        let (mre, mim) = pbh_pencil(&plant.a, Some(&plant.b), Some(&plant.c), re, im);
        let r = complex_rank(&mre, &mim)?;
        if r != n + 1 {
            transmission_ok = false;
            diagnostics.push(format!(
                "transmission rank at exosystem eigenvalue {re}+{im}i is {r}, need {}",
                n + 1
            ));
        }
    }

    Ok(AssumptionReport {
        stabilizable,
        exosystem_simple_unit_modulus: exo_ok,
        transmission_rank_ok: transmission_ok,
        diagnostics,
    })
}

/// Real and imaginary parts of `[A - lambda I, B]`, optionally extended by the
/// `[C, 0]` row block.
fn pbh_pencil(
    a: &Mat,
    b: Option<&Mat>,
    c: Option<&Mat>,
    lambda_re: f64,
    lambda_im: f64,
) -> (Mat, Mat) {
    let n = a.nrows();
    let bc = b.map_or(0, |b| b.ncols());
    let rows = n + c.map_or(0, |c| c.nrows());
    let mut re = Mat::zeros(rows, n + bc);
    let mut im = Mat::zeros(rows, n + bc);
    re.view_mut((0, 0), (n, n))
        .copy_from(&(a - Mat::identity(n, n) * lambda_re));
    im.view_mut((0, 0), (n, n))
        .copy_from(&(Mat::identity(n, n) * -lambda_im));
    if let Some(b) = b {
        re.view_mut((0, n), (n, bc)).copy_from(b);
    }
    if let Some(c) = c {
        re.view_mut((n, 0), (c.nrows(), n)).copy_from(c);
    }
    (re, im)
}

/// Assemble the augmented system; the internal model must carry `G1 = E`.
pub fn build_augmented(plant: &LinearPlant, im: &InternalModel) -> Result<AugmentedSystem> {
    if im.g1 != plant.e {
        return Err(Error::Config(
            "internal model G1 does not equal the exosystem matrix E".into(),
        ));
    }
    let n = plant.state_dim();
    let q = plant.exo_dim();
    let m = n + q;

    let mut abar = Mat::zeros(m, m);
    abar.view_mut((0, 0), (n, n)).copy_from(&plant.a);
    abar.view_mut((n, 0), (q, n))
        .copy_from(&(&im.g2 * &plant.c));
    abar.view_mut((n, n), (q, q)).copy_from(&plant.e);

    let mut bbar = Mat::zeros(m, 1);
    bbar.view_mut((0, 0), (n, 1)).copy_from(&plant.b);

    let mut cbar = Mat::zeros(1, m);
    cbar.view_mut((0, 0), (1, n)).copy_from(&plant.c);

    let mut dbar = Mat::zeros(m, q);
    dbar.view_mut((0, 0), (n, q)).copy_from(&plant.d);
    dbar.view_mut((n, 0), (q, q))
        .copy_from(&(&im.g2 * &plant.f));

    let mut dtilde = Mat::zeros(m, m);
    dtilde.view_mut((n, 0), (q, m)).copy_from(&(&im.g2 * &cbar));

    Ok(AugmentedSystem {
        abar,
        bbar,
        cbar,
        dbar,
        dtilde,
        n,
        q,
    })
}

/// Solution of the regulator equations: the steady-state manifold
/// `x = X w`, `u = U w` plus the internal-model component `z = Z w`.
#[derive(Debug, Clone)]
pub struct RegulatorSolution {
    pub x: Mat,
    pub u: Mat,
    pub z: Mat,
    /// `[X; Z]`, the full manifold map for `zeta`.
    pub xi: Mat,
}

/// Solve `XE = AX + BU + D`, `CX + F = 0` for the unique `(X, U)`.
///
/// `Z` completes the manifold for the augmented state. The pair of defining
/// equations is gain-dependent, so with a gain supplied `Z` comes from the
/// Sylvester equation `Xi E = (Abar - Bbar K) Xi + Dbar` (whose top block
/// reproduces `X`); without one, `Z = 0` is returned, which satisfies
/// `ZE = EZ + G2(CX + F)` since `CX + F = 0`.
pub fn solve_regulator_equations(
    plant: &LinearPlant,
    im: &InternalModel,
    gain: Option<&Mat>,
) -> Result<RegulatorSolution> {
    let report = check_assumptions(plant)?;
    if !report.all_pass() {
        return Err(Error::Validation(format!(
            "plant fails standing assumptions: {:?}",
            report.diagnostics
        )));
    }
    let n = plant.state_dim();
    let q = plant.exo_dim();

    // Unknowns [vec(X); vec(U)], equations: XE - AX - BU = D and CX = -F.
    let eye_n = Mat::identity(n, n);
    let eye_q = Mat::identity(q, q);
    let et = plant.e.transpose();
    let rows = n * q + q;
    let cols = n * q + q;
    let mut sys = Mat::zeros(rows, cols);
    sys.view_mut((0, 0), (n * q, n * q))
        .copy_from(&(kron(&et, &eye_n) - kron(&eye_q, &plant.a)));
    sys.view_mut((0, n * q), (n * q, q))
        .copy_from(&(-kron(&eye_q, &plant.b)));
    sys.view_mut((n * q, 0), (q, n * q))
        .copy_from(&kron(&eye_q, &plant.c));
    let mut rhs = Vector::zeros(rows);
    rhs.rows_mut(0, n * q).copy_from(&vec_cols(&plant.d));
    rhs.rows_mut(n * q, q).copy_from(&vec_cols(&(-&plant.f)));

    let (sol, _residual) = solve_least_squares(&sys, &rhs).map_err(|e| match e {
        Error::RankDeficient {
            required, found, ..
        } => Error::Validation(format!(
            "regulator equations are singular (rank {found} of {required}); \
             Assumption 2 fails in practice"
        )),
        other => other,
    })?;
    let x = Mat::from_column_slice(n, q, sol.rows(0, n * q).as_slice());
    let u = Mat::from_column_slice(1, q, sol.rows(n * q, q).as_slice());

    let z = match gain {
        None => Mat::zeros(q, q),
        Some(k) => {
            let aug = build_augmented(plant, im)?;
            let xi = solve_manifold(&aug, k)?;
            let x_hat = xi.view((0, 0), (n, q)).into_owned();
            if (&x_hat - &x).norm() > 1e-8 * (1.0 + x.norm()) {
                return Err(Error::Numerical(
                    "gain-dependent manifold disagrees with the regulator equations".into(),
                ));
            }
            xi.view((n, 0), (q, q)).into_owned()
        }
    };

    let mut xi = Mat::zeros(n + q, q);
    xi.view_mut((0, 0), (n, q)).copy_from(&x);
    xi.view_mut((n, 0), (q, q)).copy_from(&z);

    let sol = RegulatorSolution { x, u, z, xi };
    verify_regulator_residuals(plant, im, &sol)?;
    Ok(sol)
}

/// Solve `Xi E = (Abar - Bbar K) Xi + Dbar` for the closed-loop invariant
/// manifold. Unique because the closed loop is Schur while `E` lives on the
/// unit circle.
pub fn solve_manifold(aug: &AugmentedSystem, k: &Mat) -> Result<Mat> {
    let m = aug.dim();
    let q = aug.q;
    let ac = aug.closed_loop(k)?;
    let sys = kron(
        &aug.abar
            .view((aug.n, aug.n), (q, q))
            .transpose()
            .into_owned(),
        &Mat::identity(m, m),
    ) - kron(&Mat::identity(q, q), &ac);
    let rhs = vec_cols(&aug.dbar);
    let (sol, _res) = solve_least_squares(&sys, &rhs).map_err(|e| match e {
        Error::RankDeficient {
            required, found, ..
        } => Error::Numerical(format!(
            "closed-loop manifold equation is singular (rank {found} of {required})"
        )),
        other => other,
    })?;
    Ok(Mat::from_column_slice(m, q, sol.as_slice()))
}

fn verify_regulator_residuals(
    plant: &LinearPlant,
    im: &InternalModel,
    sol: &RegulatorSolution,
) -> Result<()> {
    let scale = 1.0 + plant.a.norm() + plant.d.norm();
    let r1 = (&sol.x * &plant.e - &plant.a * &sol.x - &plant.b * &sol.u - &plant.d).norm();
    let r2 = (&plant.c * &sol.x + &plant.f).norm();
    let r3 =
        (&sol.z * &plant.e - &plant.e * &sol.z - &im.g2 * (&plant.c * &sol.x + &plant.f)).norm();
    if r1 > 1e-10 * scale || r2 > 1e-10 * scale || r3 > 1e-10 * scale {
        return Err(Error::Numerical(format!(
            "regulator equation residuals too large: {r1:.3e}, {r2:.3e}, {r3:.3e}"
        )));
    }
    Ok(())
}

/// Inverted pendulum on a cart, discretized at 10 ms, with a constant-step
/// exosystem driving both the reference and the disturbance.
///
/// Physical parameters (cart mass 1 kg, pendulum mass 0.1 kg, friction
/// 0.1 N s/m, g = 9.8 m/s^2, arm 0.5 m) are this crate's choice.
pub fn pendulum_preset() -> (LinearPlant, InternalModel) {
    let cart_mass = 1.0;
    let pend_mass = 0.1;
    let friction = 0.1;
    let gravity = 9.8;
    let arm = 0.5;
    let ts = 0.01;

    let a = Mat::from_row_slice(
        4,
        4,
        &[
            1.0,
            ts,
            0.0,
            0.0,
            0.0,
            1.0 - friction * ts / cart_mass,
            -pend_mass * gravity * ts / cart_mass,
            0.0,
            0.0,
            0.0,
            1.0,
            ts,
            0.0,
            friction * ts / (arm * cart_mass),
            (cart_mass + pend_mass) * gravity * ts / (arm * cart_mass),
            1.0,
        ],
    );
    let b = Mat::from_column_slice(4, 1, &[0.0, ts / cart_mass, 0.0, -ts / (arm * cart_mass)]);
    let c = Mat::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]);
    let d = Mat::from_column_slice(4, 1, &[0.0, 0.01, 0.0, 0.01]);
    let e = Mat::from_row_slice(1, 1, &[1.0]);
    let f = Mat::from_row_slice(1, 1, &[-1.0]);

    let plant = LinearPlant::new(a, b, c, d, e, f).expect("preset dimensions are consistent");
    let im = InternalModel::new(&plant.e, Mat::from_column_slice(1, 1, &[0.5]))
        .expect("(1, 0.5) is controllable");
    (plant, im)
}
