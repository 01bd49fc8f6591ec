//! Convex design of symmetric gains for the single-integrator model:
//! closed-form inverse entries of the induced tridiagonal gain matrix,
//! the analytic no-follower optimum, gradient descent with backtracking
//! for the general case, and the double-integrator convex restriction
//! (symmetric position gains with uniform velocity gain).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FormationSpec, ModelKind, StructuredGain};

/// Inter-vehicle symmetric gains `k_n = f_n = b_{n-1}`. With a fictitious
/// follower the vector has `N + 1` entries (`k_1 = f_1`, `k_{N+1} = b_N`);
/// without one it has `N` entries and `k_{N+1} = 0` is implied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricGainVector {
    pub k: Vec<f64>,
    pub has_follower: bool,
}

impl SymmetricGainVector {
    pub fn new(k: Vec<f64>, has_follower: bool) -> Self {
        Self { k, has_follower }
    }

    pub fn n_vehicles(&self) -> usize {
        if self.has_follower {
            self.k.len().saturating_sub(1)
        } else {
            self.k.len()
        }
    }

    fn check_len(&self, spec: &FormationSpec) -> Result<()> {
        let expect = if spec.has_follower {
            spec.n_vehicles + 1
        } else {
            spec.n_vehicles
        };
        if self.has_follower != spec.has_follower || self.k.len() != expect {
            return Err(Error::InvalidGain(format!(
                "symmetric gain vector length {} does not match spec (expected {expect})",
                self.k.len()
            )));
        }
        Ok(())
    }

    /// `k_{n}` for `n` in `1..=N+1`, with the implied trailing zero.
    fn entry(&self, n: usize) -> f64 {
        if n - 1 < self.k.len() {
            self.k[n - 1]
        } else {
            0.0
        }
    }

    /// The induced symmetric tridiagonal gain matrix with diagonal
    /// `k_n + k_{n+1}` and off-diagonal `-k_{n+1}`.
    pub fn induced_matrix(&self) -> DMatrix<f64> {
        let n = self.n_vehicles();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 1..=n {
            m[(i - 1, i - 1)] = self.entry(i) + self.entry(i + 1);
            if i < n {
                m[(i - 1, i)] = -self.entry(i + 1);
                m[(i, i - 1)] = -self.entry(i + 1);
            }
        }
        m
    }

    /// Positive definiteness of the induced matrix, tested by the tridiagonal
    /// Cholesky (LDL) recursion.
    pub fn is_positive_definite(&self) -> bool {
        let n = self.n_vehicles();
        let mut d_prev = 0.0;
        for i in 1..=n {
            let diag = self.entry(i) + self.entry(i + 1);
            let off = if i > 1 { -self.entry(i) } else { 0.0 };
            let d = if i == 1 { diag } else { diag - off * off / d_prev };
            if !(d > 0.0) || !d.is_finite() {
                return false;
            }
            d_prev = d;
        }
        true
    }

    /// Expand to the structured gain `f_n = k_n`, `b_n = k_{n+1}`.
    pub fn to_structured(&self) -> StructuredGain {
        let n = self.n_vehicles();
        let forward = (1..=n).map(|i| self.entry(i)).collect();
        let backward = (1..=n).map(|i| self.entry(i + 1)).collect();
        StructuredGain::single(forward, backward)
    }

    /// Cumulative reciprocal sums `gamma_i = sum_{n<=i} 1/k_n`, for
    /// `i = 1..=len`.
    fn gammas(&self) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.k.len());
        let mut acc = 0.0;
        for &kn in &self.k {
            acc += 1.0 / kn;
            g.push(acc);
        }
        g
    }
}

/// Backtracking gradient descent settings. The sufficient-decrease constant
/// must lie in (0, 0.5) and the backtracking factor in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientSettings {
    pub alpha_armijo: f64,
    pub beta_backtrack: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for GradientSettings {
    fn default() -> Self {
        Self {
            alpha_armijo: 0.3,
            beta_backtrack: 0.5,
            grad_tol: 1e-8,
            max_iters: 50_000,
        }
    }
}

impl GradientSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_armijo > 0.0 && self.alpha_armijo < 0.5) {
            return Err(Error::InvalidSpec(
                "alpha_armijo must lie in (0, 0.5)".into(),
            ));
        }
        if !(self.beta_backtrack > 0.0 && self.beta_backtrack < 1.0) {
            return Err(Error::InvalidSpec(
                "beta_backtrack must lie in (0, 1)".into(),
            ));
        }
        if !(self.grad_tol > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidSpec(
                "grad_tol must be positive and max_iters nonzero".into(),
            ));
        }
        Ok(())
    }
}

/// Entries of the inverse of the induced tridiagonal matrix, from the
/// cumulative sums: `(K^-1)_{ij} = gamma_i (gamma_{N+1} - gamma_j) /
/// gamma_{N+1}` for `j >= i` (follower case) and `(K^-1)_{ij} = gamma_i`
/// without a follower. An exact zero entry makes the cumulative sums
/// degenerate even when the induced matrix stays definite, so that case
/// falls back to a dense inverse.
pub fn tridiag_inverse_entries(k: &SymmetricGainVector) -> Result<DMatrix<f64>> {
    if !k.is_positive_definite() {
        return Err(Error::NonPositiveDefinite);
    }
    if k.k.contains(&0.0) {
        let chol = k
            .induced_matrix()
            .cholesky()
            .ok_or(Error::NonPositiveDefinite)?;
        return Ok(chol.inverse());
    }
    let n = k.n_vehicles();
    let g = k.gammas();
    let mut m = DMatrix::<f64>::zeros(n, n);
    if k.has_follower {
        let g_end = g[n];
        for i in 0..n {
            for j in i..n {
                let v = g[i] * (g_end - g[j]) / g_end;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
    } else {
        for i in 0..n {
            for j in i..n {
                m[(i, j)] = g[i];
                m[(j, i)] = g[i];
            }
        }
    }
    Ok(m)
}

/// The symmetric-design objective `J(K) = (1/2) trace(K^-1 + r K)` in its
/// cumulative-sum form (state weight fixed to identity). Defined as
/// `+infinity` whenever the induced matrix is not positive definite, which
/// is what lets the backtracking line search shrink infeasible steps.
pub fn objective_sg(k: &SymmetricGainVector, spec: &FormationSpec) -> f64 {
    if k.check_len(spec).is_err() || !k.is_positive_definite() {
        return f64::INFINITY;
    }
    let n = k.n_vehicles();
    let r = spec.control_penalty_r;
    let trace_kinv = if k.k.contains(&0.0) {
        // Degenerate cumulative sums; the dense route stays finite.
        match k.induced_matrix().cholesky() {
            Some(chol) => chol.inverse().trace(),
            None => return f64::INFINITY,
        }
    } else if k.has_follower {
        let g = k.gammas();
        let g_end = g[n];
        (0..n).map(|i| g[i] * (g_end - g[i]) / g_end).sum::<f64>()
    } else {
        k.gammas()[..n].iter().sum::<f64>()
    };
    let k_interior: f64 = k.k[1..n.min(k.k.len())].iter().sum();
    let boundary = 0.5 * (k.entry(1) + k.entry(n + 1));
    0.5 * trace_kinv + r * (boundary + k_interior)
}

/// Analytic global optimum of the symmetric design without a follower:
/// `k_1 = sqrt(N/r)`, `k_n = sqrt((N+1-n)/(2r))`.
pub fn analytic_symmetric_no_follower(spec: &FormationSpec) -> Result<SymmetricGainVector> {
    if spec.has_follower {
        return Err(Error::InvalidSpec(
            "analytic optimum applies to formations without a follower".into(),
        ));
    }
    let n = spec.n_vehicles;
    let r = spec.control_penalty_r;
    let mut k = Vec::with_capacity(n);
    k.push((n as f64 / r).sqrt());
    for i in 2..=n {
        k.push(((n + 1 - i) as f64 / (2.0 * r)).sqrt());
    }
    Ok(SymmetricGainVector::new(k, false))
}

/// Closed-form gradient of [`objective_sg`].
pub fn gradient_sg(k: &SymmetricGainVector, spec: &FormationSpec) -> Result<Vec<f64>> {
    k.check_len(spec)?;
    if !k.is_positive_definite() {
        return Err(Error::NonPositiveDefinite);
    }
    if k.k.contains(&0.0) {
        return Err(Error::InvalidGain(
            "gradient is evaluated away from exactly zero inter-vehicle gains".into(),
        ));
    }
    let n = k.n_vehicles();
    let r = spec.control_penalty_r;
    if !k.has_follower {
        let mut grad = Vec::with_capacity(n);
        grad.push(0.5 * r - (n as f64) / (2.0 * k.k[0] * k.k[0]));
        for i in 2..=n {
            let c = (n + 1 - i) as f64;
            grad.push(r - c / (2.0 * k.k[i - 1] * k.k[i - 1]));
        }
        return Ok(grad);
    }
    let g = k.gammas();
    let g_end = g[n];
    // Prefix sums of gamma_i^2 and suffix sums of (gamma_end - gamma_i)^2
    // over i = 1..=N give each partial derivative in O(1).
    let mut prefix = vec![0.0; n + 1];
    for i in 1..=n {
        prefix[i] = prefix[i - 1] + g[i - 1] * g[i - 1];
    }
    let mut suffix = vec![0.0; n + 2];
    for i in (1..=n).rev() {
        let d = g_end - g[i - 1];
        suffix[i] = suffix[i + 1] + d * d;
    }
    let mut grad = Vec::with_capacity(n + 1);
    for m in 1..=(n + 1) {
        let km = k.k[m - 1];
        let denom = 2.0 * km * km * g_end * g_end;
        let (rc, bracket) = if m == 1 {
            (0.5 * r, suffix[1])
        } else if m == n + 1 {
            (0.5 * r, prefix[n])
        } else {
            (r, prefix[m - 1] + suffix[m])
        };
        grad.push(rc - bracket / denom);
    }
    Ok(grad)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One accepted descent step, for convergence diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentStep {
    /// Objective before the step.
    pub objective: f64,
    /// Objective after the step.
    pub objective_next: f64,
    /// Gradient norm before the step.
    pub grad_norm: f64,
    /// Accepted step size.
    pub step: f64,
    /// Whether the step was accepted on the gradient-norm criterion after
    /// the sufficient-decrease test hit the floating-point floor of J.
    pub polish: bool,
}

/// Gradient descent with backtracking line search on the symmetric-design
/// objective. Starts from the spatially uniform gain (all ones) unless an
/// initial vector is supplied; infeasible trial points have infinite
/// objective, so backtracking shrinks the step until the iterate returns to
/// the positive definite cone.
pub fn gradient_descend(
    spec: &FormationSpec,
    settings: &GradientSettings,
    k0: Option<SymmetricGainVector>,
) -> Result<SymmetricGainVector> {
    gradient_descend_traced(spec, settings, k0).map(|(k, _)| k)
}

/// [`gradient_descend`] with the accepted-step history attached.
pub fn gradient_descend_traced(
    spec: &FormationSpec,
    settings: &GradientSettings,
    k0: Option<SymmetricGainVector>,
) -> Result<(SymmetricGainVector, Vec<DescentStep>)> {
    settings.validate()?;
    if spec.model != ModelKind::SingleIntegrator {
        return Err(Error::InvalidSpec(
            "symmetric design applies to the single-integrator model".into(),
        ));
    }
    let len = if spec.has_follower {
        spec.n_vehicles + 1
    } else {
        spec.n_vehicles
    };
    let mut k = match k0 {
        Some(k0) => {
            k0.check_len(spec)?;
            if !k0.is_positive_definite() {
                return Err(Error::NonPositiveDefinite);
            }
            k0
        }
        None => SymmetricGainVector::new(vec![1.0; len], spec.has_follower),
    };
    let mut j = objective_sg(&k, spec);
    let mut best = (k.clone(), f64::INFINITY);
    let mut last_step = 1.0;
    let mut trace = Vec::new();
    for _ in 0..settings.max_iters {
        let grad = gradient_sg(&k, spec)?;
        let gnorm = norm(&grad);
        if gnorm < best.1 {
            best = (k.clone(), gnorm);
        }
        if gnorm < settings.grad_tol {
            return Ok((k, trace));
        }
        let g2 = gnorm * gnorm;
        let mut step = 1.0;
        let mut accepted = false;
        // Armijo backtracking; the sufficient-decrease test loses meaning
        // once the decrease falls below the floating-point resolution of J,
        // so the floor is handed to the polish branch below.
        while step * g2 > 8.0 * f64::EPSILON * j.abs() {
            let trial = SymmetricGainVector::new(
                k.k.iter().zip(&grad).map(|(ki, gi)| ki - step * gi).collect(),
                k.has_follower,
            );
            let j_trial = objective_sg(&trial, spec);
            if j_trial < j - settings.alpha_armijo * step * g2 {
                trace.push(DescentStep {
                    objective: j,
                    objective_next: j_trial,
                    grad_norm: gnorm,
                    step,
                    polish: false,
                });
                k = trial;
                j = j_trial;
                last_step = step;
                accepted = true;
                break;
            }
            step *= settings.beta_backtrack;
        }
        if accepted {
            continue;
        }
        // Polish: descend on the gradient norm, which is evaluated directly
        // and stays accurate when differences of J are pure round-off.
        let mut step = last_step;
        loop {
            let trial = SymmetricGainVector::new(
                k.k.iter().zip(&grad).map(|(ki, gi)| ki - step * gi).collect(),
                k.has_follower,
            );
            if trial.is_positive_definite() {
                if let Ok(gt) = gradient_sg(&trial, spec) {
                    if norm(&gt) < gnorm {
                        let j_trial = objective_sg(&trial, spec);
                        trace.push(DescentStep {
                            objective: j,
                            objective_next: j_trial,
                            grad_norm: gnorm,
                            step,
                            polish: true,
                        });
                        k = trial;
                        j = j_trial;
                        last_step = step;
                        break;
                    }
                }
            }
            step *= settings.beta_backtrack;
            if step < 1e-300 {
                return Err(Error::MaxItersExceeded {
                    max_iters: settings.max_iters,
                    grad_norm: best.1,
                    best: best.0.k,
                });
            }
        }
    }
    Err(Error::MaxItersExceeded {
        max_iters: settings.max_iters,
        grad_norm: best.1,
        best: best.0.k,
    })
}

/// Objective of the double-integrator convex restriction: symmetric
/// positive definite position gain `K_p`, uniform velocity gain `beta`,
/// and block-diagonal state weight with components `q1`, `q2`:
/// `J = trace(K_p^-1 Q_1 + K_p + Q_2 + beta^2 I) / (2 beta)`.
pub fn double_symmetric_objective(
    kp: &DMatrix<f64>,
    beta: f64,
    q1: &DMatrix<f64>,
    q2: &DMatrix<f64>,
) -> Result<f64> {
    let n = kp.nrows();
    if kp.ncols() != n || q1.nrows() != n || q1.ncols() != n || q2.nrows() != n || q2.ncols() != n {
        return Err(Error::Dimension(
            "K_p, Q_1, Q_2 must be square with matching order".into(),
        ));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidSpec("beta must be positive".into()));
    }
    let chol = kp.clone().cholesky().ok_or(Error::NonPositiveDefinite)?;
    let kinv_q1 = chol.solve(q1);
    let j = kinv_q1.trace() + kp.trace() + q2.trace() + beta * beta * n as f64;
    Ok(j / (2.0 * beta))
}
