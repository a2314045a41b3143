//! Conditional intensities of the nested thread/reply model.
//!
//! Reply stream of thread `i` (exponential kernel, damped by thread age):
//!
//! ```text
//! λ_reply^i(t) = μ_reply + q_i(t) Σ_{t_ij < t} α e^{-β (t - t_ij)},   q_i(t) = e^{-δ (t - t_i)}
//! ```
//!
//! Main-thread stream (power-law kernel weighted by each thread's reply
//! activity and reply count `p_i`):
//!
//! ```text
//! λ_main(t) = μ_main + Σ_{t_i < t} λ_reply^i(t) · p_i^γ · (t - t_i + c)^{-(η+1)}
//! ```
//!
//! The decoupled variants drop the cross terms: the main stream uses a single
//! scalar weight `p` and the reply stream has no `q` factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Cascade, EventSpace};

/// Parameters of the reply streams (shared by every thread).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplyParams {
    pub mu_reply: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
}

/// Parameters of the main-thread stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MainParams {
    pub mu_main: f64,
    pub gamma: f64,
    pub c: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NestppParams {
    pub main: MainParams,
    pub reply: ReplyParams,
}

/// Power-law main stream without reply coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoupledMainParams {
    pub mu_main: f64,
    pub p: f64,
    pub c: f64,
    pub eta: f64,
}

/// Parameter names in vector order.
pub const PARAM_NAMES: [&str; 8] = [
    "mu_main", "gamma", "c", "eta", "mu_reply", "alpha", "beta", "delta",
];

fn check(name: &str, value: f64, strictly_positive: bool) -> Result<()> {
    let ok = value.is_finite() && if strictly_positive { value > 0.0 } else { value >= 0.0 };
    if ok {
        Ok(())
    } else {
        let req = if strictly_positive { "> 0" } else { ">= 0" };
        Err(Error::validation(format!("{name} must be finite and {req}, got {value}")))
    }
}

impl ReplyParams {
    pub fn new(mu_reply: f64, alpha: f64, beta: f64, delta: f64) -> Self {
        Self {
            mu_reply,
            alpha,
            beta,
            delta,
        }
    }

    /// `alpha = 0` is accepted so that excitation can be switched off.
    pub fn validate(&self) -> Result<()> {
        check("mu_reply", self.mu_reply, true)?;
        check("alpha", self.alpha, false)?;
        check("beta", self.beta, true)?;
        check("delta", self.delta, false)
    }
}

impl MainParams {
    pub fn new(mu_main: f64, gamma: f64, c: f64, eta: f64) -> Self {
        Self {
            mu_main,
            gamma,
            c,
            eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check("mu_main", self.mu_main, true)?;
        check("gamma", self.gamma, false)?;
        check("c", self.c, true)?;
        check("eta", self.eta, true)
    }
}

impl NestppParams {
    pub fn new(main: MainParams, reply: ReplyParams) -> Self {
        Self { main, reply }
    }

    pub fn validate(&self) -> Result<()> {
        self.main.validate()?;
        self.reply.validate()
    }

    /// `(μ_main, γ, c, η, μ_reply, α, β, δ)`.
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.main.mu_main,
            self.main.gamma,
            self.main.c,
            self.main.eta,
            self.reply.mu_reply,
            self.reply.alpha,
            self.reply.beta,
            self.reply.delta,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 8 {
            return Err(Error::validation(format!("expected 8 parameters, got {}", v.len())));
        }
        Ok(Self {
            main: MainParams::new(v[0], v[1], v[2], v[3]),
            reply: ReplyParams::new(v[4], v[5], v[6], v[7]),
        })
    }
}

impl DecoupledMainParams {
    pub fn new(mu_main: f64, p: f64, c: f64, eta: f64) -> Self {
        Self { mu_main, p, c, eta }
    }

    pub fn validate(&self) -> Result<()> {
        check("mu_main", self.mu_main, true)?;
        check("p", self.p, false)?;
        check("c", self.c, true)?;
        check("eta", self.eta, true)
    }
}

/// Evaluation conventions for the main-thread intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelOptions {
    /// Use `(p_i + 1)^γ` so threads without replies still contribute.
    pub mark_smoothing: bool,
    /// Freeze `p_i` at the thread's creation time instead of the query time.
    pub static_marks: bool,
    /// Ignore contributions older than this many seconds. Only used when
    /// evaluating intensities; the likelihood always uses the full history.
    pub history_window: Option<f64>,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            mark_smoothing: true,
            static_marks: false,
            history_window: None,
        }
    }
}

impl ModelOptions {
    #[inline]
    pub(crate) fn mark_factor(&self, count: usize, gamma: f64) -> f64 {
        let p = if self.mark_smoothing {
            count as f64 + 1.0
        } else {
            count as f64
        };
        p.powf(gamma)
    }

    /// Mark count `p_i` of `cascade` as seen at time `t`.
    pub fn mark_count(&self, thread_time: f64, replies: &[f64], t: f64) -> usize {
        let at = if self.static_marks { thread_time } else { t };
        replies.partition_point(|&r| r <= at)
    }

    #[inline]
    fn too_old(&self, age: f64) -> bool {
        matches!(self.history_window, Some(w) if age > w)
    }
}

/// Thread infectivity `q(t) = e^{-δ (t - t_0)}`.
pub fn infectivity(delta: f64, thread_time: f64, t: f64) -> Result<f64> {
    if t < thread_time {
        return Err(Error::domain(format!(
            "infectivity queried at {t}, before thread creation at {thread_time}"
        )));
    }
    Ok((-delta * (t - thread_time)).exp())
}

/// `Σ_{r < t} α e^{-β (t - r)}` over the given sorted times.
#[inline]
pub(crate) fn exp_kernel_sum(alpha: f64, beta: f64, times: &[f64], t: f64, window: Option<f64>) -> f64 {
    if alpha == 0.0 {
        return 0.0;
    }
    let end = times.partition_point(|&r| r < t);
    let start = match window {
        Some(w) => times[..end].partition_point(|&r| t - r > w),
        None => 0,
    };
    times[start..end]
        .iter()
        .map(|&r| (-beta * (t - r)).exp())
        .sum::<f64>()
        * alpha
}

/// Reply intensity from raw pieces; `t >= thread_time` is the caller's job.
#[inline]
pub(crate) fn reply_intensity_raw(
    p: &ReplyParams,
    thread_time: f64,
    replies: &[f64],
    t: f64,
    window: Option<f64>,
) -> f64 {
    let excitation = exp_kernel_sum(p.alpha, p.beta, replies, t, window);
    if excitation == 0.0 {
        p.mu_reply
    } else {
        p.mu_reply + (-p.delta * (t - thread_time)).exp() * excitation
    }
}

/// `λ_reply^i(t)` for one cascade. Replies at exactly `t` are not counted.
pub fn reply_intensity(params: &ReplyParams, cascade: &Cascade, t: f64) -> Result<f64> {
    reply_intensity_windowed(params, cascade, t, None)
}

pub fn reply_intensity_windowed(
    params: &ReplyParams,
    cascade: &Cascade,
    t: f64,
    window: Option<f64>,
) -> Result<f64> {
    params.validate()?;
    if t < cascade.thread_time {
        return Err(Error::domain(format!(
            "reply intensity of thread {} queried at {t}, before its creation at {}",
            cascade.thread_id, cascade.thread_time
        )));
    }
    Ok(reply_intensity_raw(
        params,
        cascade.thread_time,
        &cascade.reply_times,
        t,
        window,
    ))
}

/// Contribution of one earlier thread to `λ_main(t)`.
#[inline]
pub(crate) fn main_term_raw(
    params: &NestppParams,
    options: &ModelOptions,
    thread_time: f64,
    replies: &[f64],
    t: f64,
) -> f64 {
    let age = t - thread_time;
    if age <= 0.0 || options.too_old(age) {
        return 0.0;
    }
    let lr = reply_intensity_raw(&params.reply, thread_time, replies, t, options.history_window);
    let mark = options.mark_factor(options.mark_count(thread_time, replies, t), params.main.gamma);
    lr * mark * (age + params.main.c).powf(-(params.main.eta + 1.0))
}

/// Main intensity over any sequence of `(thread_time, replies)` pairs.
pub(crate) fn main_intensity_raw<'a, I>(
    params: &NestppParams,
    options: &ModelOptions,
    threads: I,
    t: f64,
) -> f64
where
    I: IntoIterator<Item = (f64, &'a [f64])>,
{
    params.main.mu_main
        + threads
            .into_iter()
            .map(|(ti, rs)| main_term_raw(params, options, ti, rs, t))
            .sum::<f64>()
}

/// `λ_main(t)` over the threads of `space` created strictly before `t`.
pub fn main_intensity(
    params: &NestppParams,
    options: &ModelOptions,
    space: &EventSpace,
    t: f64,
) -> Result<f64> {
    params.validate()?;
    Ok(main_intensity_raw(
        params,
        options,
        space
            .cascades()
            .iter()
            .map(|c| (c.thread_time, c.reply_times.as_slice())),
        t,
    ))
}

/// Per-thread contributions to `λ_main(t) - μ_main` (zero for threads not yet
/// created).
pub fn main_contributions(
    params: &NestppParams,
    options: &ModelOptions,
    space: &EventSpace,
    t: f64,
) -> Result<Vec<f64>> {
    params.validate()?;
    Ok(space
        .cascades()
        .iter()
        .map(|c| main_term_raw(params, options, c.thread_time, &c.reply_times, t))
        .collect())
}

/// Power-law main intensity without reply coupling.
pub fn decoupled_main_intensity(params: &DecoupledMainParams, thread_times: &[f64], t: f64) -> Result<f64> {
    params.validate()?;
    Ok(decoupled_main_raw(params, thread_times, t))
}

#[inline]
pub(crate) fn decoupled_main_raw(params: &DecoupledMainParams, thread_times: &[f64], t: f64) -> f64 {
    if params.p == 0.0 {
        return params.mu_main;
    }
    let end = thread_times.partition_point(|&ti| ti < t);
    params.mu_main
        + params.p
            * thread_times[..end]
                .iter()
                .map(|&ti| (t - ti + params.c).powf(-(params.eta + 1.0)))
                .sum::<f64>()
}

/// Exponential-kernel reply intensity without the thread-age factor; `delta`
/// is ignored.
pub fn decoupled_reply_intensity(params: &ReplyParams, reply_times: &[f64], t: f64) -> Result<f64> {
    params.validate()?;
    Ok(params.mu_reply + exp_kernel_sum(params.alpha, params.beta, reply_times, t, None))
}

/// Influence magnitude `λ_reply^i(t) p_i^γ` of one thread next to the bound
/// `η c^η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceMagnitude {
    pub thread_index: usize,
    pub magnitude: f64,
    pub bound: f64,
    pub within_bound: bool,
}

/// Reports, for every thread created before `t`, whether its influence
/// magnitude stays under `η c^η`. Nothing is enforced.
pub fn influence_magnitudes(
    params: &NestppParams,
    options: &ModelOptions,
    space: &EventSpace,
    t: f64,
) -> Result<Vec<InfluenceMagnitude>> {
    params.validate()?;
    let bound = params.main.eta * params.main.c.powf(params.main.eta);
    Ok(space
        .cascades()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.thread_time < t)
        .map(|(i, c)| {
            let lr = reply_intensity_raw(&params.reply, c.thread_time, &c.reply_times, t, None);
            let mark = options.mark_factor(
                options.mark_count(c.thread_time, &c.reply_times, t),
                params.main.gamma,
            );
            let magnitude = lr * mark;
            InfluenceMagnitude {
                thread_index: i,
                magnitude,
                bound,
                within_bound: magnitude < bound,
            }
        })
        .collect())
}
