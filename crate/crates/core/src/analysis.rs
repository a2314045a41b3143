//! Branching factors, expected final popularity and intensity traces.
//!
//! `n*` weights each thread by its reply intensity and mark at creation.
//! Replies that arrive later raise the actual weight, so when reply counts
//! grow the effective branching is larger than `n*` suggests.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::EventSpace;
use crate::intensity::{main_term_raw, reply_intensity_raw, ModelOptions, NestppParams, ReplyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingReport {
    pub n_star_main: f64,
    pub per_cascade_terms: Vec<f64>,
    pub regime: Regime,
    /// `1 / (1 - n*)`, only when subcritical.
    pub expected_final_size: Option<f64>,
    /// Terms computed with `(c - t_i)^η / η` in place of `c^{-η} / η`. Kept as
    /// a diagnostic; `None` where the base is negative and the power is not
    /// real.
    pub shifted_base_terms: Vec<Option<f64>>,
}

impl BranchingReport {
    /// Sums the terms and classifies the regime.
    pub fn from_terms(per_cascade_terms: Vec<f64>) -> Self {
        let n_star_main: f64 = per_cascade_terms.iter().sum();
        let regime = if n_star_main < 1.0 {
            Regime::Subcritical
        } else if n_star_main == 1.0 {
            Regime::Critical
        } else {
            Regime::Supercritical
        };
        let expected_final_size = (regime == Regime::Subcritical).then(|| 1.0 / (1.0 - n_star_main));
        Self {
            n_star_main,
            per_cascade_terms,
            regime,
            expected_final_size,
            shifted_base_terms: Vec::new(),
        }
    }
}

/// Influence weight `λ_reply^i(t_i) p_i(t_i)^γ` of thread `i`, with both
/// factors frozen at its creation time.
fn frozen_weight(params: &NestppParams, options: &ModelOptions, thread_time: f64, replies: &[f64]) -> f64 {
    let lr = reply_intensity_raw(&params.reply, thread_time, replies, thread_time, None);
    let count = replies.partition_point(|&r| r <= thread_time);
    lr * options.mark_factor(count, params.main.gamma)
}

/// Main-stream branching factor: `Σ_i λ_reply^i(t_i) p_i(t_i)^γ c^{-η} / η`,
/// the integral over `[t_i, ∞)` of each thread's frozen kernel.
pub fn branching_factor_main(
    params: &NestppParams,
    options: &ModelOptions,
    space: &EventSpace,
) -> Result<BranchingReport> {
    params.validate()?;
    if space.is_empty() {
        return Err(Error::validation("branching factor of an empty event space"));
    }
    let (c, eta) = (params.main.c, params.main.eta);
    let integral = c.powf(-eta) / eta;
    let weights: Vec<f64> = space
        .cascades()
        .iter()
        .map(|cs| frozen_weight(params, options, cs.thread_time, &cs.reply_times))
        .collect();
    let mut report = BranchingReport::from_terms(weights.iter().map(|w| w * integral).collect());
    report.shifted_base_terms = weights
        .iter()
        .zip(space.cascades())
        .map(|(w, cs)| {
            let v = w * (c - cs.thread_time).powf(eta) / eta;
            v.is_finite().then_some(v)
        })
        .collect();
    Ok(report)
}

/// Expected direct offspring of one new thread that has no replies yet.
pub fn fresh_thread_branching(params: &NestppParams, options: &ModelOptions) -> f64 {
    frozen_weight(params, options, 0.0, &[]) * params.main.c.powf(-params.main.eta) / params.main.eta
}

/// Reply-stream branching factor `α/β`, or `α/(β+δ)` with the thread-age
/// factor folded into the kernel.
pub fn branching_factor_reply(params: &ReplyParams, include_infectivity: bool) -> Result<f64> {
    params.validate()?;
    let rate = if include_infectivity {
        params.beta + params.delta
    } else {
        params.beta
    };
    Ok(params.alpha / rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub lambda_main: f64,
    /// Contribution of each thread to `λ_main(t) − μ_main`.
    pub shares: Vec<f64>,
    /// `λ_reply^i(t)`; `None` before the thread exists.
    pub reply: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityTrace {
    pub rows: Vec<TraceRow>,
}

impl IntensityTrace {
    /// CSV with columns `t, lambda_main, share_1..share_m, reply_1..reply_m`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let m = self.rows.first().map_or(0, |r| r.shares.len());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "lambda_main".to_string()];
        header.extend((1..=m).map(|i| format!("share_{i}")));
        header.extend((1..=m).map(|i| format!("reply_{i}")));
        out.write_record(&header).map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = vec![row.t.to_string(), row.lambda_main.to_string()];
            rec.extend(row.shares.iter().map(|v| v.to_string()));
            rec.extend(row.reply.iter().map(|v| v.map_or(String::new(), |x| x.to_string())));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Evaluates every intensity on `grid`.
pub fn intensity_trace(
    params: &NestppParams,
    options: &ModelOptions,
    space: &EventSpace,
    grid: &[f64],
) -> Result<IntensityTrace> {
    params.validate()?;
    if let Some(&t) = grid.iter().find(|&&t| !(t >= 0.0)) {
        return Err(Error::domain(format!("trace grid point {t} is before time 0")));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::validation("trace grid must be sorted"));
    }
    let rows = grid
        .iter()
        .map(|&t| {
            let shares: Vec<f64> = space
                .cascades()
                .iter()
                .map(|c| main_term_raw(params, options, c.thread_time, &c.reply_times, t))
                .collect();
            let reply = space
                .cascades()
                .iter()
                .map(|c| {
                    (t >= c.thread_time).then(|| reply_intensity_raw(&params.reply, c.thread_time, &c.reply_times, t, None))
                })
                .collect();
            TraceRow {
                t,
                lambda_main: params.main.mu_main + shares.iter().sum::<f64>(),
                shares,
                reply,
            }
        })
        .collect();
    Ok(IntensityTrace { rows })
}

/// Evenly spaced grid `0, step, 2·step, …` up to the horizon.
pub fn uniform_grid(horizon: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::validation(format!("grid step must be positive, got {step}")));
    }
    let n = (horizon / step).floor() as usize;
    Ok((0..=n).map(|k| k as f64 * step).collect())
}
