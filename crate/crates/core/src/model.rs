//! Formation models: structure matrices, closed-loop assembly, and
//! structural stability checks for the single- and double-integrator
//! platoon models.
//!
//! The single-integrator closed loop is `A_cl = -(F_f C_f + F_b C_f^T)`;
//! the double-integrator closed loop stacks positions over velocities,
//! `A_cl = [[0, I], [-K_p, -F_v]]` with `K_p = F_f C_f + F_b C_f^T`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the max real part of closed-loop eigenvalues used by
/// [`check_structural_stability`]. The marginal average mode (eigenvalue at
/// exactly zero) is detected structurally before any eigensolve, so this
/// only discriminates stable from unstable spectra.
pub const TAU_STAB: f64 = 1e-8;

/// Vehicle dynamics order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    SingleIntegrator,
    DoubleIntegrator,
}

/// A formation design instance: size, model order, boundary configuration
/// and control penalty. Desired spacing and cruising velocity never enter
/// the deviation-coordinate computations; they are carried as metadata for
/// labeling simulation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationSpec {
    pub n_vehicles: usize,
    pub model: ModelKind,
    pub has_follower: bool,
    pub control_penalty_r: f64,
    pub desired_spacing: f64,
    pub desired_velocity: f64,
}

impl FormationSpec {
    pub fn new(
        n_vehicles: usize,
        model: ModelKind,
        has_follower: bool,
        control_penalty_r: f64,
    ) -> Result<Self> {
        if n_vehicles == 0 {
            return Err(Error::InvalidSpec("n_vehicles must be >= 1".into()));
        }
        if !(control_penalty_r > 0.0) || !control_penalty_r.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "control penalty r must be a positive real, got {control_penalty_r}"
            )));
        }
        Ok(Self {
            n_vehicles,
            model,
            has_follower,
            control_penalty_r,
            desired_spacing: 1.0,
            desired_velocity: 0.0,
        })
    }

    pub fn single(n: usize, has_follower: bool, r: f64) -> Result<Self> {
        Self::new(n, ModelKind::SingleIntegrator, has_follower, r)
    }

    pub fn double(n: usize, has_follower: bool, r: f64) -> Result<Self> {
        Self::new(n, ModelKind::DoubleIntegrator, has_follower, r)
    }

    /// State dimension: `N` for single-integrators, `2N` for double.
    pub fn state_dim(&self) -> usize {
        match self.model {
            ModelKind::SingleIntegrator => self.n_vehicles,
            ModelKind::DoubleIntegrator => 2 * self.n_vehicles,
        }
    }

    /// Number of free structured gain parameters (the hard zero `b_N` of a
    /// no-follower formation is not a parameter).
    pub fn gain_dim(&self) -> usize {
        let n = self.n_vehicles;
        let base = if self.has_follower { 2 * n } else { 2 * n - 1 };
        match self.model {
            ModelKind::SingleIntegrator => base,
            ModelKind::DoubleIntegrator => base + n,
        }
    }
}

/// Diagonals of the forward/backward (and velocity) feedback gain matrices.
/// The nearest-neighbor sparsity pattern is the type itself: `forward[n]`
/// couples vehicle `n+1` to the one ahead, `backward[n]` to the one behind,
/// and `velocity` is present exactly for double-integrator specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredGain {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
    pub velocity: Option<Vec<f64>>,
}

impl StructuredGain {
    pub fn single(forward: Vec<f64>, backward: Vec<f64>) -> Self {
        Self {
            forward,
            backward,
            velocity: None,
        }
    }

    pub fn double(forward: Vec<f64>, backward: Vec<f64>, velocity: Vec<f64>) -> Self {
        Self {
            forward,
            backward,
            velocity: Some(velocity),
        }
    }

    /// Spatially uniform symmetric gain `f_n = b_n = alpha` (with the hard
    /// zero `b_N = 0` when no follower is present) and, for double
    /// integrators, `g_n = beta`.
    pub fn uniform_symmetric(spec: &FormationSpec, alpha: f64, beta: f64) -> Self {
        let n = spec.n_vehicles;
        let mut backward = vec![alpha; n];
        if !spec.has_follower {
            backward[n - 1] = 0.0;
        }
        let velocity = match spec.model {
            ModelKind::SingleIntegrator => None,
            ModelKind::DoubleIntegrator => Some(vec![beta; n]),
        };
        Self {
            forward: vec![alpha; n],
            backward,
            velocity,
        }
    }

    /// Look-ahead strategy: `f_n = alpha`, `b_n = 0` (and `g_n = beta` for
    /// double integrators).
    pub fn look_ahead(spec: &FormationSpec, alpha: f64, beta: f64) -> Self {
        let n = spec.n_vehicles;
        let velocity = match spec.model {
            ModelKind::SingleIntegrator => None,
            ModelKind::DoubleIntegrator => Some(vec![beta; n]),
        };
        Self {
            forward: vec![alpha; n],
            backward: vec![0.0; n],
            velocity,
        }
    }

    pub fn n_vehicles(&self) -> usize {
        self.forward.len()
    }

    /// Check the gain against a spec: vector lengths, presence of velocity
    /// gains, and the exact structural zero `b_N = 0` without a follower.
    pub fn validate_for(&self, spec: &FormationSpec) -> Result<()> {
        let n = spec.n_vehicles;
        if self.forward.len() != n || self.backward.len() != n {
            return Err(Error::InvalidGain(format!(
                "gain vectors must have length {n} (got forward {}, backward {})",
                self.forward.len(),
                self.backward.len()
            )));
        }
        match (spec.model, &self.velocity) {
            (ModelKind::SingleIntegrator, Some(_)) => {
                return Err(Error::InvalidGain(
                    "velocity gains supplied for a single-integrator spec".into(),
                ));
            }
            (ModelKind::DoubleIntegrator, None) => {
                return Err(Error::InvalidGain(
                    "double-integrator spec requires velocity gains".into(),
                ));
            }
            (ModelKind::DoubleIntegrator, Some(v)) if v.len() != n => {
                return Err(Error::InvalidGain(format!(
                    "velocity gain vector must have length {n} (got {})",
                    v.len()
                )));
            }
            _ => {}
        }
        if !spec.has_follower && self.backward[n - 1] != 0.0 {
            return Err(Error::InvalidGain(format!(
                "b_N must be exactly zero without a fictitious follower (got {})",
                self.backward[n - 1]
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.forward)
            || !finite(&self.backward)
            || !self.velocity.as_deref().is_none_or(finite)
        {
            return Err(Error::NonFinite);
        }
        Ok(())
    }
}

/// Lower bidiagonal Toeplitz relative-measurement matrix: 1 on the main
/// diagonal, -1 on the first subdiagonal. `C_f p` is the vector of relative
/// position errors with respect to the vehicle ahead.
pub fn build_cf(n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidSpec("matrix order must be >= 1".into()));
    }
    let mut cf = DMatrix::<f64>::identity(n, n);
    for i in 1..n {
        cf[(i, i - 1)] = -1.0;
    }
    Ok(cf)
}

/// Symmetric tridiagonal Toeplitz matrix with 2 on the diagonal and -1 on
/// the off-diagonals; equals `C_f + C_f^T`.
pub fn build_t(n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidSpec("matrix order must be >= 1".into()));
    }
    let mut t = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        t[(i, i)] = 2.0;
        if i + 1 < n {
            t[(i, i + 1)] = -1.0;
            t[(i + 1, i)] = -1.0;
        }
    }
    Ok(t)
}

/// The position-gain matrix `K_p = F_f C_f + F_b C_f^T`, a structured
/// tridiagonal matrix assembled entrywise.
pub fn position_gain_matrix(gain: &StructuredGain) -> DMatrix<f64> {
    let n = gain.forward.len();
    let mut kp = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        kp[(i, i)] = gain.forward[i] + gain.backward[i];
        if i > 0 {
            kp[(i, i - 1)] = -gain.forward[i];
        }
        if i + 1 < n {
            kp[(i, i + 1)] = -gain.backward[i];
        }
    }
    kp
}

/// Assembled closed-loop system `A_cl = A - B2 F C` together with the input
/// matrix, the measurement stack, and the structured gain as a block row.
#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    pub a_cl: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub output_c: DMatrix<f64>,
    /// Block row `[F_f F_b]` or `[F_f F_b F_v]`.
    pub gain_flat: DMatrix<f64>,
    pub model: ModelKind,
    pub n_vehicles: usize,
    pub has_follower: bool,
    /// Cached `F C` (state-feedback form of the structured gain).
    fc: DMatrix<f64>,
}

impl ClosedLoopSystem {
    /// `F C`: `K_p` for single integrators, `[K_p  F_v]` for double.
    pub fn fc(&self) -> &DMatrix<f64> {
        &self.fc
    }

    pub fn state_dim(&self) -> usize {
        self.a_cl.nrows()
    }

    /// `B1 B1^T`: identity for single integrators, `blkdiag(0, I)` for double.
    pub fn b1_b1t(&self) -> DMatrix<f64> {
        let n = self.n_vehicles;
        match self.model {
            ModelKind::SingleIntegrator => DMatrix::identity(n, n),
            ModelKind::DoubleIntegrator => {
                let mut m = DMatrix::zeros(2 * n, 2 * n);
                for i in 0..n {
                    m[(n + i, n + i)] = 1.0;
                }
                m
            }
        }
    }

    /// `B2^T M`: the full matrix for single integrators, the bottom block
    /// row for double.
    pub fn b2t(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n_vehicles;
        match self.model {
            ModelKind::SingleIntegrator => m.clone(),
            ModelKind::DoubleIntegrator => m.rows(n, n).into_owned(),
        }
    }
}

/// Assemble the closed loop for a spec/gain pair.
pub fn assemble(spec: &FormationSpec, gain: &StructuredGain) -> Result<ClosedLoopSystem> {
    gain.validate_for(spec)?;
    let n = spec.n_vehicles;
    let cf = build_cf(n)?;
    let kp = position_gain_matrix(gain);

    match spec.model {
        ModelKind::SingleIntegrator => {
            let a_cl = -&kp;
            let b1 = DMatrix::identity(n, n);
            let mut output_c = DMatrix::zeros(2 * n, n);
            output_c.view_mut((0, 0), (n, n)).copy_from(&cf);
            output_c.view_mut((n, 0), (n, n)).copy_from(&cf.transpose());
            let mut gain_flat = DMatrix::zeros(n, 2 * n);
            for i in 0..n {
                gain_flat[(i, i)] = gain.forward[i];
                gain_flat[(i, n + i)] = gain.backward[i];
            }
            Ok(ClosedLoopSystem {
                a_cl,
                b1,
                output_c,
                gain_flat,
                model: spec.model,
                n_vehicles: n,
                has_follower: spec.has_follower,
                fc: kp,
            })
        }
        ModelKind::DoubleIntegrator => {
            let g = gain.velocity.as_ref().expect("validated above");
            let mut a_cl = DMatrix::zeros(2 * n, 2 * n);
            for i in 0..n {
                a_cl[(i, n + i)] = 1.0;
                a_cl[(n + i, n + i)] = -g[i];
            }
            for i in 0..n {
                for j in 0..n {
                    a_cl[(n + i, j)] = -kp[(i, j)];
                }
            }
            let mut b1 = DMatrix::zeros(2 * n, n);
            for i in 0..n {
                b1[(n + i, i)] = 1.0;
            }
            let mut output_c = DMatrix::zeros(3 * n, 2 * n);
            output_c.view_mut((0, 0), (n, n)).copy_from(&cf);
            output_c
                .view_mut((n, 0), (n, n))
                .copy_from(&cf.transpose());
            for i in 0..n {
                output_c[(2 * n + i, n + i)] = 1.0;
            }
            let mut gain_flat = DMatrix::zeros(n, 3 * n);
            for i in 0..n {
                gain_flat[(i, i)] = gain.forward[i];
                gain_flat[(i, n + i)] = gain.backward[i];
                gain_flat[(i, 2 * n + i)] = g[i];
            }
            let mut fc = DMatrix::zeros(n, 2 * n);
            fc.view_mut((0, 0), (n, n)).copy_from(&kp);
            for i in 0..n {
                fc[(i, n + i)] = g[i];
            }
            Ok(ClosedLoopSystem {
                a_cl,
                b1,
                output_c,
                gain_flat,
                model: spec.model,
                n_vehicles: n,
                has_follower: spec.has_follower,
                fc,
            })
        }
    }
}

/// Outcome of the structural stability check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilityVerdict {
    Stable,
    Unstable,
    /// `f_1 = b_N = 0`: the average mode sits at eigenvalue zero with
    /// eigenvector of all ones. Detected before any eigensolve so that the
    /// analytic zero cannot be misclassified by round-off.
    MarginalAverageMode,
}

/// Classify closed-loop stability for a spec/gain pair.
pub fn check_structural_stability(
    spec: &FormationSpec,
    gain: &StructuredGain,
) -> Result<StabilityVerdict> {
    gain.validate_for(spec)?;
    let n = spec.n_vehicles;
    if gain.forward[0] == 0.0 && gain.backward[n - 1] == 0.0 {
        return Ok(StabilityVerdict::MarginalAverageMode);
    }
    let sys = assemble(spec, gain)?;
    let max_re = sys
        .a_cl
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_re < -TAU_STAB {
        Ok(StabilityVerdict::Stable)
    } else {
        Ok(StabilityVerdict::Unstable)
    }
}

/// State performance weight selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    Global,
    Local,
    Custom,
}

/// A symmetric positive semidefinite state weight.
#[derive(Debug, Clone, PartialEq)]
pub struct StateWeight {
    pub kind: WeightKind,
    pub matrix: DMatrix<f64>,
}

impl StateWeight {
    /// Macroscopic weight: identity on positions (and velocities for the
    /// double-integrator model).
    pub fn global(spec: &FormationSpec) -> Self {
        Self {
            kind: WeightKind::Global,
            matrix: DMatrix::identity(spec.state_dim(), spec.state_dim()),
        }
    }

    /// Microscopic weight: the tridiagonal `T` on positions (plus identity
    /// on velocities for the double-integrator model).
    pub fn local(spec: &FormationSpec) -> Self {
        let n = spec.n_vehicles;
        let t = build_t(n).expect("n >= 1 by spec invariant");
        let matrix = match spec.model {
            ModelKind::SingleIntegrator => t,
            ModelKind::DoubleIntegrator => {
                let mut m = DMatrix::zeros(2 * n, 2 * n);
                m.view_mut((0, 0), (n, n)).copy_from(&t);
                for i in 0..n {
                    m[(n + i, n + i)] = 1.0;
                }
                m
            }
        };
        Self {
            kind: WeightKind::Local,
            matrix,
        }
    }

    /// A user-provided weight, validated to be symmetric and positive
    /// semidefinite (eigenvalues above `-1e-8 * ||Q||`).
    pub fn custom(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Dimension("state weight must be square".into()));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let sym_err = (&matrix - matrix.transpose()).norm();
        let scale = matrix.norm().max(1.0);
        if sym_err > 1e-10 * scale {
            return Err(Error::InvalidSpec(
                "state weight must be symmetric".into(),
            ));
        }
        let min_eig = matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-8 * scale {
            return Err(Error::NonPositiveDefinite);
        }
        Ok(Self {
            kind: WeightKind::Custom,
            matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}
