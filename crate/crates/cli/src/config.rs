//! Run configuration: CLI flags merged over an optional JSON config file
//! (flags win), validated into a fully resolved command.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use platoon_h2::homotopy::{log_spaced_schedule, HomotopySettings, UniformBase};
use platoon_h2::scaling::{ControllerFamily, ControllerKind, PenaltyRule};
use platoon_h2::symmetric::GradientSettings;
use platoon_h2::{FormationSpec, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    DesignSymmetric,
    DesignHomotopy,
    Analyze,
    Sweep,
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// The resolved run configuration echoed into every output. Unknown keys in
/// a config file are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    pub command: CommandKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub follower: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub format: OutputFormat,
}

impl RunConfig {
    /// Overlay `self` (flag values) on top of `base` (config-file values):
    /// any field present here wins.
    pub fn merged_over(self, base: RunConfig) -> RunConfig {
        macro_rules! pick {
            ($field:ident) => {
                self.$field.or(base.$field)
            };
        }
        RunConfig {
            command: self.command,
            n: pick!(n),
            model: pick!(model),
            follower: pick!(follower),
            r: pick!(r),
            family: pick!(family),
            penalty: pick!(penalty),
            n_grid: pick!(n_grid),
            alpha: pick!(alpha),
            beta: pick!(beta),
            grad_tol: pick!(grad_tol),
            max_iters: pick!(max_iters),
            stages: pick!(stages),
            eps_min: pick!(eps_min),
            gains: pick!(gains),
            horizon: pick!(horizon),
            dt: pick!(dt),
            paths: pick!(paths),
            seed: self.seed,
            out: pick!(out),
            format: self.format,
        }
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        match self.model.as_deref().unwrap_or("single") {
            "single" => Ok(ModelKind::SingleIntegrator),
            "double" => Ok(ModelKind::DoubleIntegrator),
            other => bail!("unknown model '{other}' (expected single|double)"),
        }
    }

    pub fn spec(&self) -> Result<FormationSpec> {
        let n = self.n.ok_or_else(|| anyhow!("--n is required"))?;
        let spec = FormationSpec::new(
            n,
            self.model_kind()?,
            self.follower.unwrap_or(true),
            self.r.unwrap_or(1.0),
        )?;
        Ok(spec)
    }

    pub fn family(&self) -> Result<ControllerFamily> {
        let name = self
            .family
            .as_deref()
            .ok_or_else(|| anyhow!("--family is required"))?;
        let is_double = self.model_kind()? == ModelKind::DoubleIntegrator;
        let alpha = self.alpha.unwrap_or(1.0);
        let beta = if is_double {
            Some(self.beta.unwrap_or(3.0))
        } else {
            None
        };
        let kind = match name {
            "uniform-symmetric" => ControllerKind::UniformSymmetric { alpha, beta },
            "look-ahead" => ControllerKind::LookAhead { alpha, beta },
            "optimal-symmetric" => ControllerKind::OptimalSymmetric,
            "optimal-nonsymmetric" => ControllerKind::OptimalNonSymmetric,
            other => bail!(
                "unknown family '{other}' (expected uniform-symmetric|look-ahead|optimal-symmetric|optimal-nonsymmetric)"
            ),
        };
        let penalty = parse_penalty(self.penalty.as_deref().unwrap_or("constant:1"))?;
        Ok(ControllerFamily::new(kind, penalty)?)
    }

    pub fn grid(&self) -> Result<Vec<usize>> {
        let raw = self
            .n_grid
            .as_deref()
            .ok_or_else(|| anyhow!("--n-grid is required"))?;
        parse_grid(raw)
    }

    pub fn gradient_settings(&self) -> GradientSettings {
        let mut s = GradientSettings::default();
        if let Some(t) = self.grad_tol {
            s.grad_tol = t;
        }
        if let Some(m) = self.max_iters {
            s.max_iters = m;
        }
        s
    }

    pub fn homotopy_settings(&self) -> HomotopySettings {
        let mut s = HomotopySettings::default();
        if let Some(t) = self.grad_tol {
            s.grad_tol = t;
        }
        if let Some(m) = self.max_iters {
            s.max_newton_iters = m;
        }
        let stages = self.stages.unwrap_or(20).max(2);
        let eps_min = self.eps_min.unwrap_or(1e-4).clamp(1e-12, 0.5);
        s.epsilon_schedule = log_spaced_schedule(stages, eps_min, 1.0);
        s
    }

    pub fn uniform_base(&self) -> UniformBase {
        UniformBase {
            alpha: self.alpha.unwrap_or(1.0),
            beta: self.beta.unwrap_or(3.0),
        }
    }
}

/// `constant:v`, `linear:c`, or `sqrt:c`.
pub fn parse_penalty(s: &str) -> Result<PenaltyRule> {
    let (kind, value) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("penalty must look like constant:1, linear:0.08 or sqrt:0.175"))?;
    let v: f64 = value
        .parse()
        .with_context(|| format!("bad penalty coefficient '{value}'"))?;
    let rule = match kind {
        "constant" => PenaltyRule::Constant(v),
        "linear" => PenaltyRule::Linear(v),
        "sqrt" => PenaltyRule::SquareRoot(v),
        other => bail!("unknown penalty rule '{other}'"),
    };
    rule.validate()?;
    Ok(rule)
}

/// `start:stop:step` (inclusive) or a comma list `10,20,50`.
pub fn parse_grid(s: &str) -> Result<Vec<usize>> {
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            bail!("grid range must be start:stop:step");
        }
        let start: usize = parts[0].parse().context("bad grid start")?;
        let stop: usize = parts[1].parse().context("bad grid stop")?;
        let step: usize = parts[2].parse().context("bad grid step")?;
        if step == 0 || start == 0 || stop < start {
            bail!("grid range must satisfy start >= 1, stop >= start, step >= 1");
        }
        Ok((start..=stop).step_by(step).collect())
    } else {
        s.split(',')
            .map(|tok| {
                let n: usize = tok.trim().parse().with_context(|| format!("bad grid entry '{tok}'"))?;
                if n == 0 {
                    bail!("grid entries must be >= 1");
                }
                Ok(n)
            })
            .collect()
    }
}
