//! Formation-size sweeps over the four controller families, closed-form
//! performance predictions, and scaling-law fits.
//!
//! Closed forms follow the standard unit-intensity white-noise convention
//! in which the controllability Gramian solves
//! `A_cl L + L A_cl^T = -B1 B1^T`; every formula here is validated against
//! that numerical solve, so the look-ahead expressions carry `1/alpha`
//! where a gain-scaled convention would carry `alpha`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::homotopy::{homotopy_continue, HomotopySettings, UniformBase};
use crate::lyapunov::performance;
use crate::model::{assemble, FormationSpec, ModelKind, StateWeight, StructuredGain};
use crate::symmetric::{gradient_descend, GradientSettings};
use crate::{parallel, PerformanceReport};

/// Control-penalty schedule over the formation size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum PenaltyRule {
    /// `r(N) = r0`.
    Constant(f64),
    /// `r(N) = c N`.
    Linear(f64),
    /// `r(N) = c sqrt(N)`.
    SquareRoot(f64),
}

impl PenaltyRule {
    pub fn r_at(&self, n: usize) -> f64 {
        match *self {
            PenaltyRule::Constant(r0) => r0,
            PenaltyRule::Linear(c) => c * n as f64,
            PenaltyRule::SquareRoot(c) => c * (n as f64).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = match *self {
            PenaltyRule::Constant(c) | PenaltyRule::Linear(c) | PenaltyRule::SquareRoot(c) => c,
        };
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidSpec(
                "penalty coefficient must be a positive real".into(),
            ));
        }
        Ok(())
    }
}

/// The controller families whose size scaling the sweeps compare.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ControllerKind {
    /// `f_n = b_n = alpha` (velocity gain `beta` for double integrators).
    UniformSymmetric { alpha: f64, beta: Option<f64> },
    /// `f_n = alpha`, `b_n = 0` (velocity gain `beta` for double).
    LookAhead { alpha: f64, beta: Option<f64> },
    /// Convex symmetric design at the scheduled penalty.
    OptimalSymmetric,
    /// Homotopy design of the non-symmetric structured gain.
    OptimalNonSymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerFamily {
    #[serde(flatten)]
    pub kind: ControllerKind,
    #[serde(flatten)]
    pub penalty: PenaltyRule,
}

impl ControllerFamily {
    pub fn new(kind: ControllerKind, penalty: PenaltyRule) -> Result<Self> {
        penalty.validate()?;
        match kind {
            ControllerKind::UniformSymmetric { alpha, beta }
            | ControllerKind::LookAhead { alpha, beta } => {
                if !(alpha > 0.0) {
                    return Err(Error::InvalidSpec("alpha must be positive".into()));
                }
                if let Some(b) = beta {
                    if !(b > 0.0) {
                        return Err(Error::InvalidSpec("beta must be positive".into()));
                    }
                }
            }
            _ => {}
        }
        Ok(Self { kind, penalty })
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            ControllerKind::UniformSymmetric { .. } => "uniform-symmetric",
            ControllerKind::LookAhead { .. } => "look-ahead",
            ControllerKind::OptimalSymmetric => "optimal-symmetric",
            ControllerKind::OptimalNonSymmetric => "optimal-nonsymmetric",
        }
    }
}

/// Closed-form values where the family admits them; measures without a
/// closed form stay `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormPrediction {
    pub pi_g: f64,
    pub pi_l: Option<f64>,
    pub pi_ctr: Option<f64>,
}

fn gamma_ratio(a: f64, b: f64) -> f64 {
    (ln_gamma(a) - ln_gamma(b)).exp()
}

/// Diagonal of the look-ahead controllability Gramian,
/// `L_nn = Gamma(n + 1/2) / (alpha sqrt(pi) Gamma(n))`, evaluated with
/// log-Gamma differences so it stays finite for large `n`.
pub fn look_ahead_l_diag(alpha: f64, n: usize) -> f64 {
    let x = n as f64;
    gamma_ratio(x + 0.5, x) / (alpha * std::f64::consts::PI.sqrt())
}

/// Off-diagonal recursion for the look-ahead Gramian:
/// `L_{n,n+1} = L_{n+1,n+1} - 1/(2 alpha)`.
pub fn look_ahead_l_offdiag(alpha: f64, n: usize) -> f64 {
    look_ahead_l_diag(alpha, n + 1) - 1.0 / (2.0 * alpha)
}

fn look_ahead_single(alpha: f64, n: usize) -> ClosedFormPrediction {
    let x = n as f64;
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let pi_g = 2.0 * gamma_ratio(x + 1.5, x + 1.0) / (3.0 * alpha * sqrt_pi);
    let pi_l = 1.0 / alpha;
    let pi_ctr = alpha * (1.0 - gamma_ratio(x + 0.5, x) / (x * sqrt_pi));
    ClosedFormPrediction {
        pi_g,
        pi_l: Some(pi_l),
        pi_ctr: Some(pi_ctr),
    }
}

fn look_ahead_double_quarter(n: usize) -> ClosedFormPrediction {
    // alpha = 1/4, beta = 1 double-integrator look-ahead global measure.
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let nn = n as f64;
    let mut sum = 0.0;
    for i in 1..=n {
        let x = i as f64;
        let g1 = 8.0 * gamma_ratio(2.0 * x - 0.5, 2.0 * x);
        let g2 = gamma_ratio(2.0 * x - 1.5, 2.0 * x);
        sum += (nn - x + 1.0) / (2.0 * nn) * (g1 + g2);
    }
    ClosedFormPrediction {
        pi_g: sum / sqrt_pi,
        pi_l: None,
        pi_ctr: None,
    }
}

/// Closed-form performance prediction for families that admit one.
pub fn closed_form_performance(
    family: &ControllerFamily,
    spec: &FormationSpec,
) -> Result<ClosedFormPrediction> {
    let n = spec.n_vehicles;
    let nn = n as f64;
    let r = spec.control_penalty_r;
    match (family.kind, spec.model) {
        (ControllerKind::UniformSymmetric { alpha, .. }, ModelKind::SingleIntegrator) => {
            if spec.has_follower {
                Ok(ClosedFormPrediction {
                    pi_g: (nn + 2.0) / (12.0 * alpha),
                    pi_l: Some(1.0 / (2.0 * alpha)),
                    pi_ctr: Some(alpha),
                })
            } else {
                Ok(ClosedFormPrediction {
                    pi_g: (nn + 1.0) / (4.0 * alpha),
                    pi_l: Some(1.0 / alpha),
                    pi_ctr: Some(alpha * (2.0 * nn - 1.0) / (2.0 * nn)),
                })
            }
        }
        (ControllerKind::LookAhead { alpha, .. }, ModelKind::SingleIntegrator) => {
            Ok(look_ahead_single(alpha, n))
        }
        (ControllerKind::UniformSymmetric { alpha, beta }, ModelKind::DoubleIntegrator) => {
            let beta = beta.ok_or_else(|| {
                Error::InvalidSpec("double-integrator uniform family requires beta".into())
            })?;
            if !spec.has_follower {
                return Err(Error::Unavailable);
            }
            Ok(ClosedFormPrediction {
                pi_g: (nn + 2.0) / (12.0 * alpha * beta) + 1.0 / (2.0 * beta),
                pi_l: Some(1.0 / (2.0 * alpha * beta) + 1.0 / (2.0 * beta)),
                pi_ctr: Some(alpha / beta + beta / 2.0),
            })
        }
        (ControllerKind::LookAhead { alpha, beta }, ModelKind::DoubleIntegrator) => {
            let beta = beta.ok_or_else(|| {
                Error::InvalidSpec("double-integrator look-ahead family requires beta".into())
            })?;
            if (alpha - 0.25).abs() > 1e-12 || (beta - 1.0).abs() > 1e-12 {
                return Err(Error::Unavailable);
            }
            Ok(look_ahead_double_quarter(n))
        }
        (ControllerKind::OptimalSymmetric, ModelKind::SingleIntegrator) => {
            if spec.has_follower {
                return Err(Error::Unavailable);
            }
            let sum: f64 = (1..n).map(|i| (2.0 * i as f64).sqrt()).sum();
            let pi_g = r.sqrt() / (2.0 * nn) * (nn.sqrt() + sum);
            Ok(ClosedFormPrediction {
                pi_g,
                pi_l: None,
                pi_ctr: Some(pi_g / r),
            })
        }
        _ => Err(Error::Unavailable),
    }
}

/// One sweep row: measured performance at formation size `n` (plus the
/// closed-form prediction when the family admits one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub r: f64,
    pub pi_g: f64,
    pub pi_l: f64,
    pub pi_ctr: f64,
    pub objective_j: f64,
    pub wall_time_s: f64,
    pub closed_form: Option<ClosedFormPrediction>,
    pub gain: StructuredGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub n: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub family: ControllerFamily,
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

/// Designer tolerances used inside a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub gradient: GradientSettings,
    pub homotopy: HomotopySettings,
    pub base: UniformBase,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            gradient: GradientSettings {
                grad_tol: 1e-9,
                max_iters: 400_000,
                ..GradientSettings::default()
            },
            homotopy: HomotopySettings::default(),
            base: UniformBase::default(),
        }
    }
}

/// Default grid for families that require a full design per size.
pub fn default_optimal_grid() -> Vec<usize> {
    vec![10, 20, 30, 40, 50, 75, 100]
}

/// Default grid for closed-form/uniform families, extended to larger sizes
/// since each row costs one Lyapunov solve.
pub fn default_closed_form_grid() -> Vec<usize> {
    vec![10, 20, 30, 40, 50, 75, 100, 150, 200, 300, 400]
}

fn design_gain(
    family: &ControllerFamily,
    spec: &FormationSpec,
    settings: &SweepSettings,
) -> Result<StructuredGain> {
    match family.kind {
        ControllerKind::UniformSymmetric { alpha, beta } => {
            if spec.model == ModelKind::DoubleIntegrator && beta.is_none() {
                return Err(Error::InvalidSpec(
                    "double-integrator uniform family requires beta".into(),
                ));
            }
            Ok(StructuredGain::uniform_symmetric(
                spec,
                alpha,
                beta.unwrap_or(0.0),
            ))
        }
        ControllerKind::LookAhead { alpha, beta } => {
            if spec.model == ModelKind::DoubleIntegrator && beta.is_none() {
                return Err(Error::InvalidSpec(
                    "double-integrator look-ahead family requires beta".into(),
                ));
            }
            Ok(StructuredGain::look_ahead(spec, alpha, beta.unwrap_or(0.0)))
        }
        ControllerKind::OptimalSymmetric => {
            if spec.model != ModelKind::SingleIntegrator {
                return Err(Error::InvalidSpec(
                    "symmetric design applies to the single-integrator model".into(),
                ));
            }
            Ok(gradient_descend(spec, &settings.gradient, None)?.to_structured())
        }
        ControllerKind::OptimalNonSymmetric => {
            let q_d = StateWeight::global(spec);
            let trace = homotopy_continue(spec, &q_d, &settings.homotopy, &settings.base)?;
            Ok(trace.final_gain().clone())
        }
    }
}

fn sweep_row(
    family: &ControllerFamily,
    n: usize,
    template: &FormationSpec,
    settings: &SweepSettings,
) -> Result<SweepRow> {
    let start = std::time::Instant::now();
    let r = family.penalty.r_at(n);
    let spec = FormationSpec::new(n, template.model, template.has_follower, r)?;
    let gain = design_gain(family, &spec, settings)?;
    let sys = assemble(&spec, &gain)?;
    let rep: PerformanceReport = performance(&sys, &spec)?;
    let closed_form = closed_form_performance(family, &spec).ok();
    Ok(SweepRow {
        n,
        r,
        pi_g: rep.pi_g,
        pi_l: rep.pi_l,
        pi_ctr: rep.pi_ctr,
        objective_j: rep.objective_j,
        wall_time_s: start.elapsed().as_secs_f64(),
        closed_form,
        gain,
    })
}

/// Sweep formation sizes for one controller family. Rows run in parallel
/// (bounded by `PLATOON_H2_THREADS`) and per-size design failures are
/// recorded as row-level diagnostics without aborting the sweep.
pub fn sweep_with_settings(
    family: &ControllerFamily,
    n_values: &[usize],
    spec_template: &FormationSpec,
    settings: &SweepSettings,
) -> Result<SweepResult> {
    if n_values.is_empty() {
        return Err(Error::InvalidSpec("sweep grid is empty".into()));
    }
    if n_values.contains(&0) {
        return Err(Error::InvalidSpec("sweep sizes must be >= 1".into()));
    }
    family.penalty.validate()?;
    let mut grid = n_values.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let outcomes = parallel::map(grid, |n| (n, sweep_row(family, n, spec_template, settings)));
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (n, out) in outcomes {
        match out {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(SweepFailure {
                n,
                message: e.to_string(),
            }),
        }
    }
    Ok(SweepResult {
        family: *family,
        rows,
        failures,
    })
}

/// [`sweep_with_settings`] with default designer tolerances.
pub fn sweep(
    family: &ControllerFamily,
    n_values: &[usize],
    spec_template: &FormationSpec,
) -> Result<SweepResult> {
    sweep_with_settings(family, n_values, spec_template, &SweepSettings::default())
}

/// Which performance measure a fit targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    Global,
    Local,
    Control,
}

impl Measure {
    fn pick(&self, row: &SweepRow) -> f64 {
        match self {
            Measure::Global => row.pi_g,
            Measure::Local => row.pi_l,
            Measure::Control => row.pi_ctr,
        }
    }
}

/// Scaling-law model to fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "model")]
pub enum FitModel {
    /// `a N^p + b` with fixed exponent `p`; `a` and `b` fitted.
    PowerPlusConst { exponent: f64 },
    /// `a N^p` with the exponent fitted by log-log linear regression.
    FreeExponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "model")]
pub enum FitResult {
    PowerPlusConst {
        exponent: f64,
        scale: f64,
        offset: f64,
        rms_residual: f64,
    },
    FreeExponent {
        exponent: f64,
        scale: f64,
        rms_residual: f64,
    },
}

impl FitResult {
    pub fn scale(&self) -> f64 {
        match *self {
            FitResult::PowerPlusConst { scale, .. } | FitResult::FreeExponent { scale, .. } => {
                scale
            }
        }
    }

    pub fn exponent(&self) -> f64 {
        match *self {
            FitResult::PowerPlusConst { exponent, .. }
            | FitResult::FreeExponent { exponent, .. } => exponent,
        }
    }

    pub fn rms_residual(&self) -> f64 {
        match *self {
            FitResult::PowerPlusConst { rms_residual, .. }
            | FitResult::FreeExponent { rms_residual, .. } => rms_residual,
        }
    }
}

/// Least-squares fit of a scaling law to one measure of a sweep.
pub fn fit_scaling(result: &SweepResult, measure: Measure, model: FitModel) -> Result<FitResult> {
    let pts: Vec<(f64, f64)> = result
        .rows
        .iter()
        .map(|row| (row.n as f64, measure.pick(row)))
        .collect();
    fit_points(&pts, model)
}

/// Fit a scaling law to raw `(N, value)` points.
pub fn fit_points(pts: &[(f64, f64)], model: FitModel) -> Result<FitResult> {
    if pts.len() < 3 {
        return Err(Error::DegenerateData(format!(
            "need at least 3 rows, got {}",
            pts.len()
        )));
    }
    let n0 = pts[0].0;
    if pts.iter().all(|&(n, _)| n == n0) {
        return Err(Error::DegenerateData("all sizes equal".into()));
    }
    match model {
        FitModel::PowerPlusConst { exponent } => {
            // Linear least squares on the basis [N^p, 1].
            let (mut sxx, mut sx1, mut s11, mut sxy, mut s1y) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &(n, y) in pts {
                let x = n.powf(exponent);
                sxx += x * x;
                sx1 += x;
                s11 += 1.0;
                sxy += x * y;
                s1y += y;
            }
            let det = sxx * s11 - sx1 * sx1;
            if det.abs() <= 1e-12 * sxx.max(1.0) {
                return Err(Error::DegenerateData("singular normal equations".into()));
            }
            let scale = (sxy * s11 - sx1 * s1y) / det;
            let offset = (sxx * s1y - sx1 * sxy) / det;
            let rms = (pts
                .iter()
                .map(|&(n, y)| {
                    let e = scale * n.powf(exponent) + offset - y;
                    e * e
                })
                .sum::<f64>()
                / pts.len() as f64)
                .sqrt();
            Ok(FitResult::PowerPlusConst {
                exponent,
                scale,
                offset,
                rms_residual: rms,
            })
        }
        FitModel::FreeExponent => {
            if pts.iter().any(|&(_, y)| y <= 0.0) {
                return Err(Error::DegenerateData(
                    "free-exponent fit requires positive values".into(),
                ));
            }
            let logs: Vec<(f64, f64)> = pts.iter().map(|&(n, y)| (n.ln(), y.ln())).collect();
            let m = logs.len() as f64;
            let xbar = logs.iter().map(|p| p.0).sum::<f64>() / m;
            let ybar = logs.iter().map(|p| p.1).sum::<f64>() / m;
            let sxy: f64 = logs.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
            let sxx: f64 = logs.iter().map(|p| (p.0 - xbar) * (p.0 - xbar)).sum();
            let exponent = sxy / sxx;
            let scale = (ybar - exponent * xbar).exp();
            let rms = (pts
                .iter()
                .map(|&(n, y)| {
                    let e = scale * n.powf(exponent) - y;
                    e * e
                })
                .sum::<f64>()
                / pts.len() as f64)
                .sqrt();
            Ok(FitResult::FreeExponent {
                exponent,
                scale,
                rms_residual: rms,
            })
        }
    }
}
