//! Dense Lyapunov solves and H2 performance evaluation.
//!
//! The solver is Schur-based (Bartels-Stewart): one real Schur
//! decomposition of the closed-loop matrix serves both the observability
//! and controllability equations via quasi-triangular back-substitution.
//! A singular Sylvester operator (eigenvalue sum near zero) is reported as
//! [`Error::NonHurwitz`] instead of returning garbage.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClosedLoopSystem, FormationSpec, ModelKind, StateWeight};

/// Relative residual tolerance for a Lyapunov solve: solutions with
/// `||A X + X A^T + RHS||_F > TAU_LYAP * max(1, ||RHS||_F)` raise
/// [`Error::LyapunovResidual`] rather than silently returning.
pub const TAU_LYAP: f64 = 1e-10;

/// Observability and controllability Gramians of a stable closed loop.
#[derive(Debug, Clone)]
pub struct GramianPair {
    pub observability_p: DMatrix<f64>,
    pub controllability_l: DMatrix<f64>,
}

/// Formation-size-normalized performance measures and the H2 objective for
/// one (spec, gain) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub pi_g: f64,
    pub pi_l: f64,
    pub pi_ctr: f64,
    pub objective_j: f64,
    pub n_vehicles: usize,
}

/// A real Schur decomposition `A = U S U^T` reused across several Lyapunov
/// right-hand sides for the same closed-loop matrix.
pub struct SchurLyapunov {
    u: DMatrix<f64>,
    s: DMatrix<f64>,
    /// Diagonal block layout of `S`: (start, size) with size 1 or 2.
    blocks: Vec<(usize, usize)>,
    max_re: f64,
}

impl SchurLyapunov {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension("Lyapunov matrix must be square".into()));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 0)
            .ok_or(Error::SchurFailed)?;
        let (u, s) = schur.unpack();
        let n = s.nrows();
        let mut blocks = Vec::with_capacity(n);
        let mut i = 0;
        while i < n {
            if i + 1 < n && s[(i + 1, i)] != 0.0 {
                blocks.push((i, 2));
                i += 2;
            } else {
                blocks.push((i, 1));
                i += 1;
            }
        }
        let max_re = blocks
            .iter()
            .map(|&(st, sz)| {
                if sz == 1 {
                    s[(st, st)]
                } else {
                    0.5 * (s[(st, st)] + s[(st + 1, st + 1)])
                }
            })
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { u, s, blocks, max_re })
    }

    /// Largest real part over the spectrum of `A`.
    pub fn max_eig_real_part(&self) -> f64 {
        self.max_re
    }

    pub fn is_hurwitz(&self) -> bool {
        self.max_re < 0.0
    }

    fn dim(&self) -> usize {
        self.s.nrows()
    }

    /// Solve `A X + X A^T + rhs = 0`.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if rhs.nrows() != n || rhs.ncols() != n {
            return Err(Error::Dimension("rhs dimension mismatch".into()));
        }
        // D = -U^T rhs U;  S Y + Y S^T = D.
        let mut d = -(self.u.transpose() * rhs * &self.u);
        let mut y = DMatrix::<f64>::zeros(n, n);
        let s = self.s.as_slice();
        let nb = self.blocks.len();

        for jb in (0..nb).rev() {
            let (cstart, cw) = self.blocks[jb];
            // Later-column contributions of Y S^T: subtract
            // sum_{l>j} Y[:, bl] * S[bj, bl]^T from columns bj of D.
            for lb in (jb + 1)..nb {
                let (lstart, lw) = self.blocks[lb];
                for c in 0..cw {
                    for lc in 0..lw {
                        let coeff = s[(lstart + lc) * n + (cstart + c)];
                        if coeff != 0.0 {
                            axpy_col(&mut d, &y, n, cstart + c, lstart + lc, coeff);
                        }
                    }
                }
            }
            // Row blocks bottom-up; after each solve, push S Y contributions
            // up into the remaining rows of the working columns.
            for ib in (0..nb).rev() {
                let (rstart, rw) = self.blocks[ib];
                let mut r = [0.0f64; 4];
                for c in 0..cw {
                    for rr in 0..rw {
                        r[c * rw + rr] = d[(rstart + rr, cstart + c)];
                    }
                }
                let sol = solve_small(&self.s, rstart, rw, cstart, cw, &r, false)?;
                for c in 0..cw {
                    for rr in 0..rw {
                        y[(rstart + rr, cstart + c)] = sol[c * rw + rr];
                    }
                }
                // d[0..rstart, bj] -= S[0..rstart, bi] * Y[bi, bj]
                let dsl = d.as_mut_slice();
                let ysl = y.as_slice();
                for c in 0..cw {
                    for rr in 0..rw {
                        let yv = ysl[(cstart + c) * n + rstart + rr];
                        if yv != 0.0 {
                            let scol = (rstart + rr) * n;
                            let dcol = (cstart + c) * n;
                            for t in 0..rstart {
                                dsl[dcol + t] -= yv * s[scol + t];
                            }
                        }
                    }
                }
            }
        }
        let mut x = &self.u * y * self.u.transpose();
        symmetrize(&mut x);
        Ok(x)
    }

    /// Solve `A^T X + X A + rhs = 0`.
    pub fn solve_transposed(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if rhs.nrows() != n || rhs.ncols() != n {
            return Err(Error::Dimension("rhs dimension mismatch".into()));
        }
        // D = -U^T rhs U;  S^T Y + Y S = D.
        let mut d = -(self.u.transpose() * rhs * &self.u);
        let mut y = DMatrix::<f64>::zeros(n, n);
        let s = self.s.as_slice();
        let nb = self.blocks.len();

        for jb in 0..nb {
            let (cstart, cw) = self.blocks[jb];
            // Earlier-column contributions of Y S: subtract
            // sum_{l<j} Y[:, bl] * S[bl, bj] from columns bj of D.
            for lb in 0..jb {
                let (lstart, lw) = self.blocks[lb];
                for c in 0..cw {
                    for lc in 0..lw {
                        let coeff = s[(cstart + c) * n + (lstart + lc)];
                        if coeff != 0.0 {
                            axpy_col(&mut d, &y, n, cstart + c, lstart + lc, coeff);
                        }
                    }
                }
            }
            // Row blocks top-down; accumulate S^T Y contributions from rows
            // above directly (contiguous column reads of S and Y).
            for ib in 0..nb {
                let (rstart, rw) = self.blocks[ib];
                let mut r = [0.0f64; 4];
                let dsl = d.as_slice();
                let ysl = y.as_slice();
                for c in 0..cw {
                    for rr in 0..rw {
                        let mut acc = dsl[(cstart + c) * n + rstart + rr];
                        let scol = (rstart + rr) * n;
                        let ycol = (cstart + c) * n;
                        for k in 0..rstart {
                            acc -= s[scol + k] * ysl[ycol + k];
                        }
                        r[c * rw + rr] = acc;
                    }
                }
                let sol = solve_small(&self.s, rstart, rw, cstart, cw, &r, true)?;
                for c in 0..cw {
                    for rr in 0..rw {
                        y[(rstart + rr, cstart + c)] = sol[c * rw + rr];
                    }
                }
            }
        }
        let mut x = &self.u * y * self.u.transpose();
        symmetrize(&mut x);
        Ok(x)
    }
}

fn symmetrize(x: &mut DMatrix<f64>) {
    let n = x.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (x[(i, j)] + x[(j, i)]);
            x[(i, j)] = v;
            x[(j, i)] = v;
        }
    }
}

/// `d[:, dcol] += coeff * (-1) * y[:, ycol]` over the full height.
fn axpy_col(d: &mut DMatrix<f64>, y: &DMatrix<f64>, n: usize, dcol: usize, ycol: usize, coeff: f64) {
    let dsl = d.as_mut_slice();
    let ysl = y.as_slice();
    let dbase = dcol * n;
    let ybase = ycol * n;
    for t in 0..n {
        dsl[dbase + t] -= coeff * ysl[ybase + t];
    }
}

/// Solve the small block equation arising in back-substitution:
/// `M Y + Y S_jj^T = R` (or `M^T Y + Y S_jj = R` when `transposed`), with
/// `M = S_ii`. Block sizes are at most 2, so the Kronecker system is at
/// most 4x4 and is solved in place with partial pivoting.
fn solve_small(
    s: &DMatrix<f64>,
    rstart: usize,
    rw: usize,
    cstart: usize,
    cw: usize,
    r: &[f64; 4],
    transposed: bool,
) -> Result<[f64; 4]> {
    let dim = rw * cw;
    if dim == 1 {
        let den = s[(rstart, rstart)] + s[(cstart, cstart)];
        let scale = s[(rstart, rstart)].abs() + s[(cstart, cstart)].abs();
        if den.abs() <= 1e-14 * scale + f64::MIN_POSITIVE {
            return Err(Error::NonHurwitz { max_re: 0.0 });
        }
        return Ok([r[0] / den, 0.0, 0.0, 0.0]);
    }
    // m = I_cw (x) S_ii + S_jj (x) I_rw, with optional transposes.
    let mut m = [0.0f64; 16];
    let mut scale = 0.0f64;
    for c in 0..cw {
        for r1 in 0..rw {
            for r2 in 0..rw {
                let v = if transposed {
                    s[(rstart + r2, rstart + r1)]
                } else {
                    s[(rstart + r1, rstart + r2)]
                };
                m[(c * rw + r1) * dim + (c * rw + r2)] += v;
                scale = scale.max(v.abs());
            }
        }
    }
    for c1 in 0..cw {
        for c2 in 0..cw {
            let v = if transposed {
                s[(cstart + c2, cstart + c1)]
            } else {
                s[(cstart + c1, cstart + c2)]
            };
            for r1 in 0..rw {
                m[(c1 * rw + r1) * dim + (c2 * rw + r1)] += v;
            }
            scale = scale.max(v.abs());
        }
    }
    let mut b = [0.0f64; 4];
    b[..dim].copy_from_slice(&r[..dim]);
    // Gaussian elimination with partial pivoting on the tiny dense system.
    let mut perm = [0usize, 1, 2, 3];
    for col in 0..dim {
        let mut piv = col;
        for row in (col + 1)..dim {
            if m[perm[row] * dim + col].abs() > m[perm[piv] * dim + col].abs() {
                piv = row;
            }
        }
        perm.swap(col, piv);
        let pval = m[perm[col] * dim + col];
        if pval.abs() <= 1e-14 * scale.max(1e-300) {
            return Err(Error::NonHurwitz { max_re: 0.0 });
        }
        for row in (col + 1)..dim {
            let factor = m[perm[row] * dim + col] / pval;
            if factor != 0.0 {
                for k in col..dim {
                    m[perm[row] * dim + k] -= factor * m[perm[col] * dim + k];
                }
                b[perm[row]] -= factor * b[perm[col]];
            }
        }
    }
    let mut out = [0.0f64; 4];
    for col in (0..dim).rev() {
        let mut acc = b[perm[col]];
        for k in (col + 1)..dim {
            acc -= m[perm[col] * dim + k] * out[k];
        }
        out[col] = acc / m[perm[col] * dim + col];
    }
    Ok(out)
}

/// Solve `a X + X a^T + rhs = 0` with a residual check at [`TAU_LYAP`].
pub fn solve_lyapunov(a: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let schur = SchurLyapunov::new(a)?;
    let x = schur.solve(rhs)?;
    check_residual(a, &x, rhs)?;
    Ok(x)
}

fn check_residual(a: &DMatrix<f64>, x: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<()> {
    let ax = a * x;
    let residual = (&ax + ax.transpose() + rhs).norm();
    let tol = TAU_LYAP * rhs.norm().max(1.0);
    if residual > tol {
        return Err(Error::LyapunovResidual { residual, tol });
    }
    Ok(())
}

/// Right-hand side of the observability equation: `Q + r C^T F^T F C`.
pub fn observability_rhs(sys: &ClosedLoopSystem, q: &StateWeight, r: f64) -> DMatrix<f64> {
    let fc = sys.fc();
    &q.matrix + fc.transpose() * fc * r
}

/// Closed-loop observability and controllability Gramians.
pub fn gramians(sys: &ClosedLoopSystem, q: &StateWeight, r: f64) -> Result<GramianPair> {
    if q.dim() != sys.state_dim() {
        return Err(Error::Dimension(format!(
            "state weight dim {} does not match state dim {}",
            q.dim(),
            sys.state_dim()
        )));
    }
    let schur = SchurLyapunov::new(&sys.a_cl)?;
    if !schur.is_hurwitz() {
        return Err(Error::NonHurwitz {
            max_re: schur.max_eig_real_part(),
        });
    }
    let rhs_p = observability_rhs(sys, q, r);
    let p = schur.solve_transposed(&rhs_p)?;
    check_residual(&sys.a_cl.transpose(), &p, &rhs_p)?;
    let rhs_l = sys.b1_b1t();
    let l = schur.solve(&rhs_l)?;
    check_residual(&sys.a_cl, &l, &rhs_l)?;
    Ok(GramianPair {
        observability_p: p,
        controllability_l: l,
    })
}

fn trace_b1_block(sys: &ClosedLoopSystem, p: &DMatrix<f64>) -> f64 {
    let n = sys.n_vehicles;
    match sys.model {
        ModelKind::SingleIntegrator => p.trace(),
        ModelKind::DoubleIntegrator => (0..n).map(|i| p[(n + i, n + i)]).sum(),
    }
}

/// The H2 objective `J = trace(P B1 B1^T)` for the given state weight and
/// control penalty.
pub fn objective_j(sys: &ClosedLoopSystem, q: &StateWeight, r: f64) -> Result<f64> {
    let schur = SchurLyapunov::new(&sys.a_cl)?;
    if !schur.is_hurwitz() {
        return Err(Error::NonHurwitz {
            max_re: schur.max_eig_real_part(),
        });
    }
    let rhs_p = observability_rhs(sys, q, r);
    let p = schur.solve_transposed(&rhs_p)?;
    Ok(trace_b1_block(sys, &p))
}

/// Formation-size-normalized performance of a stable closed loop. A single
/// controllability solve feeds all three traces; the objective uses the
/// trace identity `trace(P B1 B1^T) = trace(L (Q + r C^T F^T F C))`.
pub fn performance(sys: &ClosedLoopSystem, spec: &FormationSpec) -> Result<PerformanceReport> {
    let n = sys.n_vehicles;
    if spec.n_vehicles != n || spec.model != sys.model {
        return Err(Error::Dimension(
            "spec does not match the assembled system".into(),
        ));
    }
    let schur = SchurLyapunov::new(&sys.a_cl)?;
    if !schur.is_hurwitz() {
        return Err(Error::NonHurwitz {
            max_re: schur.max_eig_real_part(),
        });
    }
    let rhs_l = sys.b1_b1t();
    let l = schur.solve(&rhs_l)?;
    check_residual(&sys.a_cl, &l, &rhs_l)?;

    let nf = n as f64;
    let pi_g = l.trace() / nf;
    let t = crate::model::build_t(n)?;
    let pi_l = match sys.model {
        ModelKind::SingleIntegrator => (&t * &l).trace() / nf,
        ModelKind::DoubleIntegrator => {
            let lpp = l.view((0, 0), (n, n));
            let pos = (&t * lpp).trace();
            let vel: f64 = (0..n).map(|i| l[(n + i, n + i)]).sum();
            (pos + vel) / nf
        }
    };
    if sys.model == ModelKind::DoubleIntegrator {
        let pos: f64 = (0..n).map(|i| l[(i, i)]).sum();
        let vel: f64 = (0..n).map(|i| l[(n + i, n + i)]).sum();
        log::debug!(
            "double-integrator global measure split: position {:.6e}, velocity {:.6e}",
            pos / nf,
            vel / nf
        );
    }
    let fc = sys.fc();
    let fcl = fc * &l;
    let pi_ctr = fcl
        .iter()
        .zip(fc.iter())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / nf;
    let r = spec.control_penalty_r;
    let objective_j = nf * (pi_g + r * pi_ctr);
    Ok(PerformanceReport {
        pi_g,
        pi_l,
        pi_ctr,
        objective_j,
        n_vehicles: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{assemble, build_cf, build_t, FormationSpec, StructuredGain};
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    #[test]
    fn scalar_lyapunov() {
        let x = solve_lyapunov(&dmatrix![-1.0], &dmatrix![1.0]).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn uniform_symmetric_two_vehicle_gramian() {
        let t = build_t(2).unwrap();
        let x = solve_lyapunov(&(-&t), &DMatrix::identity(2, 2)).unwrap();
        let expected = dmatrix![1.0 / 3.0, 1.0 / 6.0; 1.0 / 6.0, 1.0 / 3.0];
        assert_abs_diff_eq!(x, expected, epsilon = 1e-12);
    }

    #[test]
    fn look_ahead_single_vehicle_gramian() {
        let cf = build_cf(1).unwrap();
        let x = solve_lyapunov(&(-&cf), &DMatrix::identity(1, 1)).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn non_hurwitz_detected() {
        // Marginal average mode: row sums of A_cl vanish.
        let a = dmatrix![-1.0, 1.0; 1.0, -1.0];
        let err = solve_lyapunov(&a, &DMatrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::NonHurwitz { .. }));
    }

    #[test]
    fn random_nonsymmetric_residuals() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in [3usize, 8, 17, 40] {
            // Stable nonsymmetric matrix: -T plus a small random tridiagonal part.
            let t = build_t(n).unwrap();
            let mut a = -&t;
            for i in 0..n {
                for j in 0..n {
                    if i.abs_diff(j) <= 1 {
                        a[(i, j)] += 0.3 * rng.random_range(-1.0..1.0);
                    }
                }
            }
            let mut rhs = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v = rng.random_range(-1.0..1.0);
                    rhs[(i, j)] = v;
                    rhs[(j, i)] = v;
                }
            }
            let schur = SchurLyapunov::new(&a).unwrap();
            if !schur.is_hurwitz() {
                continue;
            }
            let x = schur.solve(&rhs).unwrap();
            let ax = &a * &x;
            let res = (&ax + ax.transpose() + &rhs).norm();
            assert!(res <= 1e-10 * rhs.norm().max(1.0), "residual {res}");

            let y = schur.solve_transposed(&rhs).unwrap();
            let aty = a.transpose() * &y;
            let res_t = (&aty + aty.transpose() + &rhs).norm();
            assert!(res_t <= 1e-10 * rhs.norm().max(1.0), "residual {res_t}");
        }
    }

    #[test]
    fn complex_spectrum_solve() {
        // Rotational block with known solution: A = [[-1, 2], [-2, -1]];
        // A X + X A^T = -I has X = I/2 since A + A^T = -2 I.
        let a = dmatrix![-1.0, 2.0; -2.0, -1.0];
        let x = solve_lyapunov(&a, &DMatrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(x, DMatrix::identity(2, 2) * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn gramians_scalar_example() {
        let spec = FormationSpec::single(1, false, 1.0).unwrap();
        let gain = StructuredGain::single(vec![1.0], vec![0.0]);
        let sys = assemble(&spec, &gain).unwrap();
        let q = StateWeight::global(&spec);
        let g = gramians(&sys, &q, 1.0).unwrap();
        assert_abs_diff_eq!(g.observability_p[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.controllability_l[(0, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(objective_j(&sys, &q, 1.0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_symmetric_controllability_is_half_t_inverse() {
        let spec = FormationSpec::single(6, true, 1.0).unwrap();
        let gain = StructuredGain::uniform_symmetric(&spec, 1.0, 0.0);
        let sys = assemble(&spec, &gain).unwrap();
        let q = StateWeight::global(&spec);
        let g = gramians(&sys, &q, 1.0).unwrap();
        let t = build_t(6).unwrap();
        let expected = t.try_inverse().unwrap() * 0.5;
        assert_abs_diff_eq!(g.controllability_l, expected, epsilon = 1e-12);
    }

    #[test]
    fn performance_uniform_symmetric_ten_vehicles() {
        let spec = FormationSpec::single(10, true, 1.0).unwrap();
        let gain = StructuredGain::uniform_symmetric(&spec, 1.0, 0.0);
        let sys = assemble(&spec, &gain).unwrap();
        let rep = performance(&sys, &spec).unwrap();
        assert_abs_diff_eq!(rep.pi_g, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(rep.pi_l, 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(rep.pi_ctr, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn performance_double_look_ahead_single_vehicle() {
        let spec = FormationSpec::double(1, true, 1.0).unwrap();
        let gain = StructuredGain::look_ahead(&spec, 0.25, 1.0);
        let sys = assemble(&spec, &gain).unwrap();
        let rep = performance(&sys, &spec).unwrap();
        assert_abs_diff_eq!(rep.pi_g, 2.5, epsilon = 1e-10);
    }

    #[test]
    fn objective_matches_trace_identity() {
        let spec = FormationSpec::single(7, true, 2.0).unwrap();
        let gain = StructuredGain::single(
            vec![1.2, 0.8, 1.0, 0.9, 1.1, 1.3, 0.7],
            vec![0.5, 0.9, 1.4, 1.0, 0.6, 0.8, 1.2],
        );
        let sys = assemble(&spec, &gain).unwrap();
        let q = StateWeight::global(&spec);
        let j_p = objective_j(&sys, &q, 2.0).unwrap();
        let rep = performance(&sys, &spec).unwrap();
        assert_abs_diff_eq!(j_p, rep.objective_j, epsilon = 1e-9 * j_p.abs());
    }
}
