//! Output serialization: CSV tables for plotting/regression and JSON
//! envelopes that echo the resolved configuration.
//!
//! Floating-point values are printed with 17 significant digits so a
//! reload is bit-exact. CSV output carries no timestamp, which keeps it
//! byte-identical across runs with the same configuration and seed; the
//! JSON envelope timestamp honors `SOURCE_DATE_EPOCH` when set.

use anyhow::{Context, Result};
use serde::Serialize;

use platoon_h2::lyapunov::PerformanceReport;
use platoon_h2::scaling::SweepResult;
use platoon_h2::simulate::SimulatedPerformance;
use platoon_h2::StructuredGain;

use crate::config::RunConfig;

/// 17 significant digits, scientific notation: exact f64 round-trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Serialize)]
pub struct ResultEnvelope<'a, T: Serialize> {
    pub tool_version: &'static str,
    pub config_echo: &'a RunConfig,
    pub payload: T,
    pub timestamp: String,
}

pub fn timestamp_iso8601() -> String {
    let epoch = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse::<i64>().ok());
    let now = match epoch {
        Some(secs) => chrono::DateTime::from_timestamp(secs, 0).unwrap_or_default(),
        None => chrono::Utc::now(),
    };
    now.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn json_envelope<T: Serialize>(config: &RunConfig, payload: T) -> Result<String> {
    let env = ResultEnvelope {
        tool_version: env!("CARGO_PKG_VERSION"),
        config_echo: config,
        payload,
        timestamp: timestamp_iso8601(),
    };
    let mut s = serde_json::to_string_pretty(&env).context("serializing result envelope")?;
    s.push('\n');
    Ok(s)
}

fn config_comment(config: &RunConfig) -> Result<String> {
    Ok(format!(
        "# config {}\n",
        serde_json::to_string(config).context("serializing config echo")?
    ))
}

/// Gain profile table: `n,forward,backward[,velocity]`.
pub fn gain_csv(config: &RunConfig, gain: &StructuredGain) -> Result<String> {
    let mut out = config_comment(config)?;
    let has_velocity = gain.velocity.is_some();
    out.push_str(if has_velocity {
        "n,forward,backward,velocity\n"
    } else {
        "n,forward,backward\n"
    });
    for i in 0..gain.forward.len() {
        out.push_str(&format!(
            "{},{},{}",
            i + 1,
            fmt_f64(gain.forward[i]),
            fmt_f64(gain.backward[i])
        ));
        if let Some(v) = &gain.velocity {
            out.push(',');
            out.push_str(&fmt_f64(v[i]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Sweep table: `family,N,r,pi_g,pi_l,pi_ctr,objective_j`.
pub fn sweep_csv(config: &RunConfig, result: &SweepResult) -> Result<String> {
    let mut out = config_comment(config)?;
    out.push_str("family,N,r,pi_g,pi_l,pi_ctr,objective_j\n");
    let label = result.family.label();
    for row in &result.rows {
        out.push_str(&format!(
            "{label},{},{},{},{},{},{}\n",
            row.n,
            fmt_f64(row.r),
            fmt_f64(row.pi_g),
            fmt_f64(row.pi_l),
            fmt_f64(row.pi_ctr),
            fmt_f64(row.objective_j),
        ));
    }
    for failure in &result.failures {
        out.push_str(&format!("# failed N={}: {}\n", failure.n, failure.message));
    }
    Ok(out)
}

/// Performance report table, one row.
pub fn report_csv(config: &RunConfig, rep: &PerformanceReport) -> Result<String> {
    let mut out = config_comment(config)?;
    out.push_str("n_vehicles,pi_g,pi_l,pi_ctr,objective_j\n");
    out.push_str(&format!(
        "{},{},{},{},{}\n",
        rep.n_vehicles,
        fmt_f64(rep.pi_g),
        fmt_f64(rep.pi_l),
        fmt_f64(rep.pi_ctr),
        fmt_f64(rep.objective_j),
    ));
    Ok(out)
}

/// Monte-Carlo estimate table, one row.
pub fn simulation_csv(config: &RunConfig, est: &SimulatedPerformance) -> Result<String> {
    let mut out = config_comment(config)?;
    out.push_str("n_vehicles,pi_g,se_g,pi_l,se_l,pi_ctr,se_ctr,paths,dt,steps\n");
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{},{},{}\n",
        est.n_vehicles,
        fmt_f64(est.pi_g),
        fmt_f64(est.se_g),
        fmt_f64(est.pi_l),
        fmt_f64(est.se_l),
        fmt_f64(est.pi_ctr),
        fmt_f64(est.se_ctr),
        est.n_paths,
        fmt_f64(est.dt),
        est.steps,
    ));
    Ok(out)
}

/// Parse a gain profile CSV produced by [`gain_csv`] (comments and header
/// tolerated).
pub fn parse_gain_csv(text: &str) -> Result<StructuredGain> {
    let mut forward = Vec::new();
    let mut backward = Vec::new();
    let mut velocity: Vec<f64> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('n') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            anyhow::bail!("gain row needs n,forward,backward[,velocity]: '{line}'");
        }
        forward.push(cols[1].trim().parse::<f64>().context("bad forward gain")?);
        backward.push(cols[2].trim().parse::<f64>().context("bad backward gain")?);
        if cols.len() > 3 {
            velocity.push(cols[3].trim().parse::<f64>().context("bad velocity gain")?);
        }
    }
    if forward.is_empty() {
        anyhow::bail!("gain file contains no rows");
    }
    if !velocity.is_empty() && velocity.len() != forward.len() {
        anyhow::bail!("velocity column must be present on every row or none");
    }
    Ok(StructuredGain {
        forward,
        backward,
        velocity: if velocity.is_empty() { None } else { Some(velocity) },
    })
}

pub fn write_output(out: &Option<String>, content: &str) -> Result<u64> {
    match out {
        Some(path) => {
            std::fs::write(path, content).with_context(|| format!("writing {path}"))?;
        }
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(content.as_bytes())
                .context("writing stdout")?;
        }
    }
    Ok(content.len() as u64)
}
