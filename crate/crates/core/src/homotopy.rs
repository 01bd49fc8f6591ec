//! Optimal non-symmetric structured gains via homotopy: inverse-optimal
//! initialization at one end of a parameterized family of problems,
//! first-order perturbation analysis for small parameter values, and a
//! Newton-type continuation that follows the optimal gain as the state
//! weight is morphed into the desired one.
//!
//! The state weight is `Q(eps) = Q0 + eps (Qd - Q0)`. At `eps = 0` the
//! spatially uniform gain is inversely optimal with respect to `Q0`; at
//! `eps = 1` the desired design is recovered.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{observability_rhs, SchurLyapunov};
use crate::model::{
    assemble, position_gain_matrix, ClosedLoopSystem, FormationSpec, ModelKind, StateWeight,
    StructuredGain, WeightKind,
};

/// Newton direction strategy for [`newton_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionMode {
    /// Inexact Newton step from conjugate gradients on Hessian-vector
    /// products (two auxiliary Lyapunov solves per product) with a
    /// trust-region safeguard.
    FullNewton,
    /// Dense BFGS approximation over the structured parameters.
    QuasiNewton,
}

/// Settings for the continuation and the per-stage Newton solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomotopySettings {
    /// Strictly increasing values in (0, 1] ending at exactly 1.
    pub epsilon_schedule: Vec<f64>,
    pub grad_tol: f64,
    pub max_newton_iters: usize,
    pub direction_mode: DirectionMode,
}

impl Default for HomotopySettings {
    fn default() -> Self {
        Self {
            epsilon_schedule: log_spaced_schedule(20, 1e-4, 1.0),
            grad_tol: 1e-6,
            max_newton_iters: 2_000,
            direction_mode: DirectionMode::QuasiNewton,
        }
    }
}

impl HomotopySettings {
    pub fn validate(&self) -> Result<()> {
        let s = &self.epsilon_schedule;
        if s.is_empty() {
            return Err(Error::InvalidSpec("epsilon schedule is empty".into()));
        }
        if s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSpec(
                "epsilon schedule must be strictly increasing".into(),
            ));
        }
        if s[0] <= 0.0 || *s.last().unwrap() != 1.0 {
            return Err(Error::InvalidSpec(
                "epsilon schedule must lie in (0, 1] and end at 1".into(),
            ));
        }
        if !(self.grad_tol > 0.0) || self.max_newton_iters == 0 {
            return Err(Error::InvalidSpec(
                "grad_tol must be positive and max_newton_iters nonzero".into(),
            ));
        }
        Ok(())
    }
}

/// Logarithmically spaced schedule from `lo` to `hi` (the last entry is set
/// to `hi` exactly).
pub fn log_spaced_schedule(count: usize, lo: f64, hi: f64) -> Vec<f64> {
    assert!(count >= 2 && lo > 0.0 && hi > lo);
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut v: Vec<f64> = (0..count)
        .map(|i| (llo + (lhi - llo) * i as f64 / (count - 1) as f64).exp())
        .collect();
    v[0] = lo;
    *v.last_mut().unwrap() = hi;
    v
}

/// Parameters of the spatially uniform base gain used at `eps = 0`. The
/// single-integrator base is the unit uniform symmetric gain; the
/// double-integrator base uses `alpha` on positions and `beta` on
/// velocities and requires `beta^2 > 8 alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformBase {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for UniformBase {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 3.0 }
    }
}

/// One converged continuation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomotopyRecord {
    pub epsilon: f64,
    pub gain: StructuredGain,
    pub objective_j: f64,
    pub grad_norm: f64,
    pub newton_iters: usize,
}

/// The continuation path: per-epsilon records of the converged gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomotopyTrace {
    pub records: Vec<HomotopyRecord>,
}

impl HomotopyTrace {
    pub fn final_record(&self) -> &HomotopyRecord {
        self.records.last().expect("trace has at least one stage")
    }

    pub fn final_gain(&self) -> &StructuredGain {
        &self.final_record().gain
    }
}

/// Base gain, first-order correction, and the matrices of the one-way
/// coupled cascade they solve.
#[derive(Debug, Clone)]
pub struct PerturbationResult {
    pub f0: StructuredGain,
    pub f1: StructuredGain,
    pub p0: DMatrix<f64>,
    pub l0: DMatrix<f64>,
    pub p1: DMatrix<f64>,
    pub l1: DMatrix<f64>,
    pub q0: StateWeight,
    /// First-order objective slope `trace(P1 B1 B1^T)` along the weight path.
    pub objective_slope: f64,
}

/// The inversely optimal pair at `eps = 0`: a spatially uniform structured
/// gain and the state weight for which it solves the design problem
/// exactly. For single integrators the gain is the unit uniform symmetric
/// one and the weight is `r K0^2`; for double integrators the weight is
/// `blkdiag(r Kp^2, r (beta^2 I - 2 Kp))` with `Kp = alpha (Cf + Cf^T)`
/// (last diagonal entry adjusted when no follower is present).
pub fn inverse_optimal_q0(
    spec: &FormationSpec,
    base: &UniformBase,
) -> Result<(StructuredGain, StateWeight)> {
    let n = spec.n_vehicles;
    let r = spec.control_penalty_r;
    match spec.model {
        ModelKind::SingleIntegrator => {
            let f0 = StructuredGain::uniform_symmetric(spec, 1.0, 0.0);
            let k0 = position_gain_matrix(&f0);
            let q0 = &k0 * &k0 * r;
            Ok((
                f0,
                StateWeight {
                    kind: WeightKind::Custom,
                    matrix: q0,
                },
            ))
        }
        ModelKind::DoubleIntegrator => {
            let (alpha, beta) = (base.alpha, base.beta);
            if !(alpha > 0.0 && beta > 0.0) {
                return Err(Error::InvalidSpec(
                    "uniform base gains must be positive".into(),
                ));
            }
            if beta * beta <= 8.0 * alpha {
                return Err(Error::StabilityMarginViolated {
                    beta_sq: beta * beta,
                    eight_alpha: 8.0 * alpha,
                });
            }
            let f0 = StructuredGain::uniform_symmetric(spec, alpha, beta);
            let kp = position_gain_matrix(&f0);
            let qp = &kp * &kp * r;
            let mut q0 = DMatrix::<f64>::zeros(2 * n, 2 * n);
            q0.view_mut((0, 0), (n, n)).copy_from(&qp);
            for i in 0..n {
                for j in 0..n {
                    q0[(n + i, n + j)] = -2.0 * r * kp[(i, j)];
                }
                q0[(n + i, n + i)] += r * beta * beta;
            }
            Ok((
                f0,
                StateWeight {
                    kind: WeightKind::Custom,
                    matrix: q0,
                },
            ))
        }
    }
}

/// `F C` for an arbitrary structured direction (not necessarily a feasible
/// gain): `Kp` for single integrators, `[Kp  diag(g)]` for double.
fn flat_fc(spec: &FormationSpec, gain: &StructuredGain) -> DMatrix<f64> {
    let n = spec.n_vehicles;
    let kp = position_gain_matrix(gain);
    match spec.model {
        ModelKind::SingleIntegrator => kp,
        ModelKind::DoubleIntegrator => {
            let g = gain.velocity.as_ref().expect("double gain has velocities");
            let mut fc = DMatrix::zeros(n, 2 * n);
            fc.view_mut((0, 0), (n, n)).copy_from(&kp);
            for i in 0..n {
                fc[(i, n + i)] = g[i];
            }
            fc
        }
    }
}

/// `B2 M` for an `N x state` matrix `M`: identity embedding for single
/// integrators, bottom block row for double.
fn b2_times(spec: &FormationSpec, m: &DMatrix<f64>) -> DMatrix<f64> {
    match spec.model {
        ModelKind::SingleIntegrator => m.clone(),
        ModelKind::DoubleIntegrator => {
            let n = spec.n_vehicles;
            let mut out = DMatrix::zeros(2 * n, 2 * n);
            out.view_mut((n, 0), (n, 2 * n)).copy_from(m);
            out
        }
    }
}

/// Diagonal of `M Cf^T`: `(M Cf^T)_nn = M_nn - M_{n,n-1}`.
fn diag_m_cft(m: &DMatrix<f64>, col0: usize, n: usize, out: &mut [f64]) {
    for i in 0..n {
        let mut v = m[(i, col0 + i)];
        if i > 0 {
            v -= m[(i, col0 + i - 1)];
        }
        out[i] = v;
    }
}

/// Diagonal of `M Cf`: `(M Cf)_nn = M_nn - M_{n,n+1}`.
fn diag_m_cf(m: &DMatrix<f64>, col0: usize, n: usize, out: &mut [f64]) {
    for i in 0..n {
        let mut v = m[(i, col0 + i)];
        if i + 1 < n {
            v -= m[(i, col0 + i + 1)];
        }
        out[i] = v;
    }
}

/// Project the unstructured gradient factor `G = (stuff) * L` (an `N x
/// state` matrix) onto the structured subspace: diagonals of `G Cf^T`,
/// `G Cf` and, for double integrators, the velocity block; the hard zero
/// at `b_N` is enforced for no-follower formations.
fn project_structured(spec: &FormationSpec, g: &DMatrix<f64>) -> StructuredGain {
    let n = spec.n_vehicles;
    let mut f = vec![0.0; n];
    let mut b = vec![0.0; n];
    diag_m_cft(g, 0, n, &mut f);
    diag_m_cf(g, 0, n, &mut b);
    if !spec.has_follower {
        b[n - 1] = 0.0;
    }
    match spec.model {
        ModelKind::SingleIntegrator => StructuredGain::single(f, b),
        ModelKind::DoubleIntegrator => {
            let v = (0..n).map(|i| g[(i, n + i)]).collect();
            StructuredGain::double(f, b, v)
        }
    }
}

/// Gradient of the H2 objective over the structured subspace:
/// `grad J(F) = 2 (r F C L C^T - B2^T P L C^T) (entrywise) I_S`.
pub fn structured_gradient(
    spec: &FormationSpec,
    gain: &StructuredGain,
    q: &StateWeight,
) -> Result<StructuredGain> {
    let sys = assemble(spec, gain)?;
    let schur = SchurLyapunov::new(&sys.a_cl)?;
    if !schur.is_hurwitz() {
        return Err(Error::NonHurwitz {
            max_re: schur.max_eig_real_part(),
        });
    }
    let r = spec.control_penalty_r;
    let p = schur.solve_transposed(&observability_rhs(&sys, q, r))?;
    let l = schur.solve(&sys.b1_b1t())?;
    Ok(gradient_from_gramians(spec, &sys, &p, &l))
}

fn gradient_from_gramians(
    spec: &FormationSpec,
    sys: &ClosedLoopSystem,
    p: &DMatrix<f64>,
    l: &DMatrix<f64>,
) -> StructuredGain {
    let r = spec.control_penalty_r;
    let lead = (sys.fc() * r - sys.b2t(p)) * l * 2.0;
    project_structured(spec, &lead)
}

/// Solve the diagonal-restricted linear system
/// `(r F1 C L0 C^T) o I_S = (B2^T P1 L0 C^T) o I_S`
/// for the structured `F1`. The restriction decouples vehicle by vehicle
/// into 2x2 (single) or 3x3 (double) systems; a rank-deficient block is
/// reported with its vehicle index.
fn extract_first_order_gain(
    spec: &FormationSpec,
    l0: &DMatrix<f64>,
    p1: &DMatrix<f64>,
) -> Result<StructuredGain> {
    let n = spec.n_vehicles;
    let r = spec.control_penalty_r;
    let cf = crate::model::build_cf(n)?;
    let cft = cf.transpose();
    match spec.model {
        ModelKind::SingleIntegrator => {
            let cf_l0 = &cf * l0;
            let cft_l0 = &cft * l0;
            let w = p1 * l0;
            let mut a_f = vec![0.0; n];
            let mut a_b = vec![0.0; n];
            let mut b_f = vec![0.0; n];
            let mut b_b = vec![0.0; n];
            let mut r1 = vec![0.0; n];
            let mut r2 = vec![0.0; n];
            diag_m_cft(&cf_l0, 0, n, &mut a_f);
            diag_m_cft(&cft_l0, 0, n, &mut a_b);
            diag_m_cf(&cf_l0, 0, n, &mut b_f);
            diag_m_cf(&cft_l0, 0, n, &mut b_b);
            diag_m_cft(&w, 0, n, &mut r1);
            diag_m_cf(&w, 0, n, &mut r2);
            let mut f = vec![0.0; n];
            let mut b = vec![0.0; n];
            for i in 0..n {
                if !spec.has_follower && i == n - 1 {
                    // Only the forward equation remains; b_N is a hard zero.
                    let denom = r * a_f[i];
                    if denom.abs() <= 1e-13 * (r * a_f[i].abs()).max(1.0) {
                        return Err(Error::SingularRestriction { index: i + 1 });
                    }
                    f[i] = r1[i] / denom;
                    b[i] = 0.0;
                } else {
                    let m00 = r * a_f[i];
                    let m01 = r * a_b[i];
                    let m10 = r * b_f[i];
                    let m11 = r * b_b[i];
                    let det = m00 * m11 - m01 * m10;
                    let scale = m00.abs().max(m01.abs()).max(m10.abs()).max(m11.abs());
                    if det.abs() <= 1e-13 * scale * scale {
                        return Err(Error::SingularRestriction { index: i + 1 });
                    }
                    f[i] = (m11 * r1[i] - m01 * r2[i]) / det;
                    b[i] = (m00 * r2[i] - m10 * r1[i]) / det;
                }
            }
            Ok(StructuredGain::single(f, b))
        }
        ModelKind::DoubleIntegrator => {
            let l11 = l0.view((0, 0), (n, n)).into_owned();
            let l12 = l0.view((0, n), (n, n)).into_owned();
            let l21 = l0.view((n, 0), (n, n)).into_owned();
            let l22 = l0.view((n, n), (n, n)).into_owned();
            let cf_l11 = &cf * &l11;
            let cft_l11 = &cft * &l11;
            let cf_l12 = &cf * &l12;
            let cft_l12 = &cft * &l12;
            // W = (bottom rows of P1) * L0, split into position/velocity cols.
            let p1_bot = p1.view((n, 0), (n, 2 * n));
            let w = p1_bot * l0;

            let col = |m: &DMatrix<f64>, which: u8| {
                let mut v = vec![0.0; n];
                match which {
                    0 => diag_m_cft(m, 0, n, &mut v),
                    1 => diag_m_cf(m, 0, n, &mut v),
                    _ => unreachable!(),
                }
                v
            };
            let a_f = col(&cf_l11, 0);
            let a_b = col(&cft_l11, 0);
            let b_f = col(&cf_l11, 1);
            let b_b = col(&cft_l11, 1);
            let c_f: Vec<f64> = (0..n).map(|i| cf_l12[(i, i)]).collect();
            let c_b: Vec<f64> = (0..n).map(|i| cft_l12[(i, i)]).collect();
            // Velocity-gain coefficients come from the L21/L22 blocks.
            let mut a_g = vec![0.0; n];
            diag_m_cft(&l21, 0, n, &mut a_g);
            let mut b_g = vec![0.0; n];
            diag_m_cf(&l21, 0, n, &mut b_g);
            let c_g: Vec<f64> = (0..n).map(|i| l22[(i, i)]).collect();

            let mut r1 = vec![0.0; n];
            let mut r2 = vec![0.0; n];
            diag_m_cft(&w, 0, n, &mut r1);
            diag_m_cf(&w, 0, n, &mut r2);
            let r3: Vec<f64> = (0..n).map(|i| w[(i, n + i)]).collect();

            let mut f = vec![0.0; n];
            let mut b = vec![0.0; n];
            let mut g = vec![0.0; n];
            for i in 0..n {
                if !spec.has_follower && i == n - 1 {
                    let m = [r * a_f[i], r * a_g[i], r * c_f[i], r * c_g[i]];
                    let det = m[0] * m[3] - m[1] * m[2];
                    let scale = m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
                    if det.abs() <= 1e-13 * scale * scale {
                        return Err(Error::SingularRestriction { index: i + 1 });
                    }
                    f[i] = (m[3] * r1[i] - m[1] * r3[i]) / det;
                    g[i] = (m[0] * r3[i] - m[2] * r1[i]) / det;
                    b[i] = 0.0;
                } else {
                    let m = [
                        r * a_f[i],
                        r * a_b[i],
                        r * a_g[i],
                        r * b_f[i],
                        r * b_b[i],
                        r * b_g[i],
                        r * c_f[i],
                        r * c_b[i],
                        r * c_g[i],
                    ];
                    let rhs = [r1[i], r2[i], r3[i]];
                    let sol = solve3(&m, &rhs).ok_or(Error::SingularRestriction { index: i + 1 })?;
                    f[i] = sol[0];
                    b[i] = sol[1];
                    g[i] = sol[2];
                }
            }
            Ok(StructuredGain::double(f, b, g))
        }
    }
}

/// 3x3 solve with partial pivoting; `None` on (near) singularity.
#[allow(clippy::needless_range_loop)]
fn solve3(m: &[f64; 9], rhs: &[f64; 3]) -> Option<[f64; 3]> {
    let mut a = [[m[0], m[1], m[2], rhs[0]], [m[3], m[4], m[5], rhs[1]], [m[6], m[7], m[8], rhs[2]]];
    let scale = m.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1e-300);
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        a.swap(col, piv);
        if a[col][col].abs() <= 1e-13 * scale {
            return None;
        }
        for row in (col + 1)..3 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut out = [0.0; 3];
    for col in (0..3).rev() {
        let mut acc = a[col][3];
        for k in (col + 1)..3 {
            acc -= a[col][k] * out[k];
        }
        out[col] = acc / a[col][col];
    }
    Some(out)
}

/// First-order perturbation analysis of the optimality conditions along
/// the weight path. Solves the order-one equations for the base Gramians,
/// the order-eps observability equation for `P1`, extracts `F1` from the
/// diagonal-restricted condition, and continues to `L1`.
pub fn perturbation_first_order(
    spec: &FormationSpec,
    q_d: &StateWeight,
    base: &UniformBase,
) -> Result<PerturbationResult> {
    if q_d.dim() != spec.state_dim() {
        return Err(Error::Dimension(
            "desired weight does not match the state dimension".into(),
        ));
    }
    let (f0, q0) = inverse_optimal_q0(spec, base)?;
    let sys0 = assemble(spec, &f0)?;
    let schur = SchurLyapunov::new(&sys0.a_cl)?;
    if !schur.is_hurwitz() {
        return Err(Error::NonHurwitz {
            max_re: schur.max_eig_real_part(),
        });
    }
    let r = spec.control_penalty_r;
    let p0 = schur.solve_transposed(&observability_rhs(&sys0, &q0, r))?;
    let l0 = schur.solve(&sys0.b1_b1t())?;
    let dq = &q_d.matrix - &q0.matrix;
    let p1 = schur.solve_transposed(&dq)?;
    let f1 = extract_first_order_gain(spec, &l0, &p1)?;
    // L1 solves A0 L1 + L1 A0^T = (B2 F1 C) L0 + L0 (B2 F1 C)^T.
    let b2f1c = b2_times(spec, &flat_fc(spec, &f1));
    let forcing = &b2f1c * &l0;
    let rhs_l1 = -(&forcing + forcing.transpose());
    let l1 = schur.solve(&rhs_l1)?;
    let objective_slope = match spec.model {
        ModelKind::SingleIntegrator => p1.trace(),
        ModelKind::DoubleIntegrator => {
            let n = spec.n_vehicles;
            (0..n).map(|i| p1[(n + i, n + i)]).sum()
        }
    };
    Ok(PerturbationResult {
        f0,
        f1,
        p0,
        l0,
        p1,
        l1,
        q0,
        objective_slope,
    })
}

// ---------------------------------------------------------------------------
// Structured parameter vector mapping.

pub(crate) fn gain_to_vec(spec: &FormationSpec, gain: &StructuredGain) -> DVector<f64> {
    let n = spec.n_vehicles;
    let nb = if spec.has_follower { n } else { n - 1 };
    let mut v = Vec::with_capacity(spec.gain_dim());
    v.extend_from_slice(&gain.forward);
    v.extend_from_slice(&gain.backward[..nb]);
    if let Some(g) = &gain.velocity {
        v.extend_from_slice(g);
    }
    DVector::from_vec(v)
}

pub(crate) fn vec_to_gain(spec: &FormationSpec, v: &DVector<f64>) -> StructuredGain {
    let n = spec.n_vehicles;
    let nb = if spec.has_follower { n } else { n - 1 };
    let forward = v.as_slice()[..n].to_vec();
    let mut backward = v.as_slice()[n..n + nb].to_vec();
    if !spec.has_follower {
        backward.push(0.0);
    }
    match spec.model {
        ModelKind::SingleIntegrator => StructuredGain::single(forward, backward),
        ModelKind::DoubleIntegrator => {
            let g = v.as_slice()[n + nb..n + nb + n].to_vec();
            StructuredGain::double(forward, backward, g)
        }
    }
}

// ---------------------------------------------------------------------------
// Newton-type solver for a fixed state weight.

struct PointEval {
    j: f64,
    sys: ClosedLoopSystem,
    schur: SchurLyapunov,
    p: DMatrix<f64>,
}

/// Objective-only evaluation (one Schur, one back-substitution).
fn eval_objective(spec: &FormationSpec, q: &StateWeight, theta: &DVector<f64>) -> Result<PointEval> {
    let gain = vec_to_gain(spec, theta);
    let sys = assemble(spec, &gain)?;
    let schur = SchurLyapunov::new(&sys.a_cl)?;
    if !schur.is_hurwitz() {
        return Err(Error::NonHurwitz {
            max_re: schur.max_eig_real_part(),
        });
    }
    let r = spec.control_penalty_r;
    let p = schur.solve_transposed(&observability_rhs(&sys, q, r))?;
    let n = spec.n_vehicles;
    let j = match spec.model {
        ModelKind::SingleIntegrator => p.trace(),
        ModelKind::DoubleIntegrator => (0..n).map(|i| p[(n + i, n + i)]).sum(),
    };
    if !j.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(PointEval { j, sys, schur, p })
}

/// Completes an objective evaluation with the controllability Gramian and
/// the structured gradient.
fn eval_gradient(spec: &FormationSpec, pe: &PointEval) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let l = pe.schur.solve(&pe.sys.b1_b1t())?;
    let grad_gain = gradient_from_gramians(spec, &pe.sys, &pe.p, &l);
    Ok((gain_to_vec(spec, &grad_gain), l))
}

/// Hessian-vector product along a structured direction, evaluated with two
/// auxiliary Lyapunov solves that reuse the Schur decomposition at the
/// current point.
fn hessian_vec(
    spec: &FormationSpec,
    pe: &PointEval,
    l: &DMatrix<f64>,
    dir: &DVector<f64>,
) -> Result<DVector<f64>> {
    let r = spec.control_penalty_r;
    let dir_gain = vec_to_gain(spec, dir);
    let fct = flat_fc(spec, &dir_gain);
    let fc = pe.sys.fc();
    let b2_ftc = b2_times(spec, &fct);
    // delta P: A^T dP + dP A = (B2 Ft C)^T P + P (B2 Ft C) - r (Ft C)^T (F C) - r (F C)^T (Ft C)
    let cross = fct.transpose() * fc;
    let pb = pe.p.clone() * &b2_ftc;
    let rhs_dp = (&cross + cross.transpose()) * r - (&pb + pb.transpose());
    let dp = pe.schur.solve_transposed(&rhs_dp)?;
    // delta L: A dL + dL A^T = (B2 Ft C) L + L (B2 Ft C)^T
    let fl = &b2_ftc * l;
    let rhs_dl = -(&fl + fl.transpose());
    let dl = pe.schur.solve(&rhs_dl)?;
    // dGrad = 2 [ r Ft C L + r F C dL - B2^T dP L - B2^T P dL ] C^T o I_S
    let lead = (&fct * l + fc * &dl) * r - pe.sys.b2t(&dp) * l - pe.sys.b2t(&pe.p) * &dl;
    Ok(gain_to_vec(spec, &project_structured(spec, &(lead * 2.0))))
}

/// Truncated conjugate-gradient (Steihaug) solve of `H d = -g` with trust
/// radius `delta`. Falls back to the steepest-descent direction on
/// immediate negative curvature.
fn newton_direction(
    spec: &FormationSpec,
    pe: &PointEval,
    l: &DMatrix<f64>,
    g: &DVector<f64>,
    delta: f64,
) -> Result<DVector<f64>> {
    let dim = g.len();
    let mut x = DVector::<f64>::zeros(dim);
    let mut res = -g.clone();
    let mut p = res.clone();
    let gnorm = g.norm();
    let tol = (gnorm * gnorm.sqrt().min(0.5)).max(1e-14);
    for _ in 0..(2 * dim) {
        if res.norm() <= tol {
            break;
        }
        let hp = hessian_vec(spec, pe, l, &p)?;
        let curv = p.dot(&hp);
        if curv <= 1e-14 * p.norm_squared() {
            // Negative curvature: follow the current direction to the
            // trust boundary (or fall back to steepest descent).
            if x.norm() < 1e-30 {
                return Ok(-g * (delta / gnorm.max(1e-30)).min(1.0));
            }
            break;
        }
        let alpha = res.norm_squared() / curv;
        let x_next = &x + &p * alpha;
        if x_next.norm() > delta {
            break;
        }
        let res_next = &res - hp * alpha;
        let beta = res_next.norm_squared() / res.norm_squared();
        x = x_next;
        p = &res_next + &p * beta;
        res = res_next;
    }
    if x.norm() < 1e-30 {
        x = -g * (delta / gnorm.max(1e-30)).min(1.0);
    }
    Ok(x)
}

struct SolveOutcome {
    gain: StructuredGain,
    objective_j: f64,
    grad_norm: f64,
    iters: usize,
}

/// Armijo constant for the Newton/BFGS line searches.
const ARMIJO_C: f64 = 1e-4;

fn line_search(
    spec: &FormationSpec,
    q: &StateWeight,
    theta: &DVector<f64>,
    j: f64,
    g: &DVector<f64>,
    dir: &DVector<f64>,
) -> Result<(DVector<f64>, PointEval, f64)> {
    let slope = g.dot(dir);
    let mut step = 1.0;
    let mut saw_instability = false;
    // Sufficient decrease, with a stability guard that shrinks the step
    // whenever the trial gain fails to stabilize the formation.
    while step * slope.abs() > 4.0 * f64::EPSILON * j.abs() {
        let trial = theta + dir * step;
        match eval_objective(spec, q, &trial) {
            Ok(pe) if pe.j <= j + ARMIJO_C * step * slope => return Ok((trial, pe, step)),
            Ok(_) => {}
            Err(Error::NonHurwitz { .. }) | Err(Error::NonFinite) => saw_instability = true,
            Err(e) => return Err(e),
        }
        step *= 0.5;
    }
    // Floating-point floor of the objective: accept on gradient-norm
    // decrease instead (the gradient is evaluated directly and keeps full
    // relative accuracy when differences of J are round-off).
    let gnorm = g.norm();
    loop {
        let trial = theta + dir * step;
        match eval_objective(spec, q, &trial) {
            Ok(pe) => {
                let (gt, _) = eval_gradient(spec, &pe)?;
                if gt.norm() < gnorm {
                    return Ok((trial, pe, step));
                }
            }
            Err(Error::NonHurwitz { .. }) | Err(Error::NonFinite) => saw_instability = true,
            Err(e) => return Err(e),
        }
        step *= 0.5;
        if step < 1e-300 {
            return Err(if saw_instability {
                Error::LostStability
            } else {
                Error::MaxItersExceeded {
                    max_iters: 0,
                    grad_norm: gnorm,
                    best: theta.as_slice().to_vec(),
                }
            });
        }
    }
}

fn solve_stationary(
    spec: &FormationSpec,
    q: &StateWeight,
    f_init: &StructuredGain,
    settings: &HomotopySettings,
) -> Result<SolveOutcome> {
    f_init.validate_for(spec)?;
    let dim = spec.gain_dim();
    let mut theta = gain_to_vec(spec, f_init);
    let mut pe = eval_objective(spec, q, &theta)?;
    let (mut g, mut l) = eval_gradient(spec, &pe)?;
    let mut h = DMatrix::<f64>::identity(dim, dim);
    let mut h_scaled = false;
    let mut delta = 1.0 + theta.norm();
    let mut best = (theta.clone(), f64::INFINITY);

    for iter in 0..settings.max_newton_iters {
        let gnorm = g.norm();
        if gnorm < best.1 {
            best = (theta.clone(), gnorm);
        }
        if gnorm <= settings.grad_tol {
            return Ok(SolveOutcome {
                gain: vec_to_gain(spec, &theta),
                objective_j: pe.j,
                grad_norm: gnorm,
                iters: iter,
            });
        }
        let dir = match settings.direction_mode {
            DirectionMode::QuasiNewton => {
                let mut d = -(&h * &g);
                if g.dot(&d) >= 0.0 {
                    h = DMatrix::identity(dim, dim);
                    h_scaled = false;
                    d = -g.clone();
                }
                d
            }
            DirectionMode::FullNewton => {
                let mut d = newton_direction(spec, &pe, &l, &g, delta)?;
                if g.dot(&d) >= 0.0 {
                    d = -g.clone();
                }
                d
            }
        };
        let (theta_next, pe_next, step) = line_search(spec, q, &theta, pe.j, &g, &dir)?;
        let (g_next, l_next) = eval_gradient(spec, &pe_next)?;
        match settings.direction_mode {
            DirectionMode::QuasiNewton => {
                let s = &theta_next - &theta;
                let y = &g_next - &g;
                let sy = s.dot(&y);
                if sy > 1e-12 * s.norm() * y.norm() {
                    if !h_scaled {
                        h *= sy / y.norm_squared().max(1e-300);
                        h_scaled = true;
                    }
                    // Inverse BFGS update.
                    let hy = &h * &y;
                    let yhy = y.dot(&hy);
                    let rho = 1.0 / sy;
                    // h += ((sy + yhy) rho^2) s s^T - rho (hy s^T + s hy^T)
                    let c1 = (sy + yhy) * rho * rho;
                    h.ger(c1, &s, &s, 1.0);
                    h.ger(-rho, &hy, &s, 1.0);
                    h.ger(-rho, &s, &hy, 1.0);
                }
            }
            DirectionMode::FullNewton => {
                if step >= 1.0 {
                    delta = delta.max(2.0 * dir.norm());
                } else if step < 0.25 {
                    delta = (dir.norm() * step).max(1e-6);
                }
            }
        }
        theta = theta_next;
        pe = pe_next;
        g = g_next;
        l = l_next;
    }
    let gnorm = g.norm();
    if gnorm < best.1 {
        best = (theta.clone(), gnorm);
    }
    Err(Error::MaxItersExceeded {
        max_iters: settings.max_newton_iters,
        grad_norm: best.1,
        best: best.0.as_slice().to_vec(),
    })
}

/// Descend from a stabilizing initial gain to a stationary structured gain
/// of the design problem with state weight `q`. The objective decreases
/// across iterations (Armijo backtracking with a stability guard) and the
/// returned gain satisfies the gradient tolerance in the settings.
pub fn newton_solve(
    spec: &FormationSpec,
    q: &StateWeight,
    f_init: &StructuredGain,
    settings: &HomotopySettings,
) -> Result<StructuredGain> {
    settings.validate()?;
    Ok(solve_stationary(spec, q, f_init, settings)?.gain)
}

/// Run the full continuation from the inversely optimal uniform gain to
/// the desired weight: the first stage is warm-started by `F0 + eps F1`
/// from the perturbation analysis, every later stage by the previous
/// optimum.
pub fn homotopy_continue(
    spec: &FormationSpec,
    q_d: &StateWeight,
    settings: &HomotopySettings,
    base: &UniformBase,
) -> Result<HomotopyTrace> {
    settings.validate()?;
    let pr = perturbation_first_order(spec, q_d, base)?;
    let mut records = Vec::with_capacity(settings.epsilon_schedule.len());
    let mut warm: Option<StructuredGain> = None;
    for &eps in &settings.epsilon_schedule {
        let q_eps = StateWeight {
            kind: WeightKind::Custom,
            matrix: &pr.q0.matrix + (&q_d.matrix - &pr.q0.matrix) * eps,
        };
        let init = match &warm {
            Some(gain) => gain.clone(),
            None => {
                let first = add_scaled(&pr.f0, &pr.f1, eps);
                if assemble(spec, &first)
                    .ok()
                    .and_then(|sys| SchurLyapunov::new(&sys.a_cl).ok())
                    .is_some_and(|s| s.is_hurwitz())
                {
                    first
                } else {
                    pr.f0.clone()
                }
            }
        };
        let outcome = solve_stationary(spec, &q_eps, &init, settings).map_err(|e| {
            Error::HomotopyStage {
                epsilon: eps,
                source: Box::new(e),
            }
        })?;
        warm = Some(outcome.gain.clone());
        records.push(HomotopyRecord {
            epsilon: eps,
            gain: outcome.gain,
            objective_j: outcome.objective_j,
            grad_norm: outcome.grad_norm,
            newton_iters: outcome.iters,
        });
    }
    Ok(HomotopyTrace { records })
}

/// `base + scale * dir` over all gain components, preserving the hard zero
/// at `b_N` when both operands carry one.
pub fn add_scaled(base: &StructuredGain, dir: &StructuredGain, scale: f64) -> StructuredGain {
    let comb = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + scale * y).collect()
    };
    StructuredGain {
        forward: comb(&base.forward, &dir.forward),
        backward: comb(&base.backward, &dir.backward),
        velocity: match (&base.velocity, &dir.velocity) {
            (Some(a), Some(b)) => Some(comb(a, b)),
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.iter().map(|y| scale * y).collect()),
            (None, None) => None,
        },
    }
}
