//! Compensators and the joint log-likelihood of the nested model.
//!
//! ```text
//! l = Σ_i log λ_main(t_i) + Σ_i Σ_j log λ_reply^i(t_ij) − Λ_main(T) − Σ_i Λ_reply^i(T_i)
//! ```
//!
//! The reply compensator has a closed form even with the thread-age factor,
//! since `q(u) e^{-β(u - t_ij)} = e^{-δ(t_ij - t_i)} e^{-(β+δ)(u - t_ij)}`.
//! The main compensator comes in two flavours: the frozen closed form, which
//! holds `λ_reply^i` and `p_i` at their values at `t_i`, and the dynamic
//! integral of the intensity actually used in the log terms. The dynamic one
//! is integrated segment by segment between reply times; within a segment the
//! power-law part is closed form and the exponential-times-power part goes
//! through [`quadrature::exp_power_integral`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Cascade, EventSpace};
use crate::intensity::{
    decoupled_main_raw, DecoupledMainParams, ModelOptions, NestppParams, ReplyParams,
};
use crate::quadrature::{exp_power_integral, power_integral};

/// How the thread-age factor enters the reply compensator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyCompensatorMode {
    /// Exact integral of `q(u) e^{-β(u - t_ij)}`.
    #[default]
    Exact,
    /// `q` held at its value at the end of the integration range.
    FrozenInfectivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MainCompensatorMode {
    /// Closed form with `λ_reply^i` and `p_i` evaluated at `t_i`.
    #[default]
    Frozen,
    /// Integral of the fully time-varying main intensity.
    Dynamic,
}

/// Where an integration range ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationEnd {
    /// Observation horizon of the space.
    #[default]
    Horizon,
    /// Last observed event of the stream (last thread, or a thread's last
    /// reply).
    LastEvent,
}

/// How many times `log λ_main(t_i)` enters the sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MainLogTerm {
    /// Once per thread.
    #[default]
    PerThread,
    /// Once per reply of the thread, i.e. inside the double sum over `(i, j)`.
    PerReply,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LikelihoodOptions {
    pub model: ModelOptions,
    pub main_compensator: MainCompensatorMode,
    pub reply_compensator: ReplyCompensatorMode,
    pub main_end: IntegrationEnd,
    pub reply_end: IntegrationEnd,
    pub main_log_term: MainLogTerm,
}

impl Default for LikelihoodOptions {
    fn default() -> Self {
        Self {
            model: ModelOptions::default(),
            main_compensator: MainCompensatorMode::Dynamic,
            reply_compensator: ReplyCompensatorMode::Exact,
            main_end: IntegrationEnd::Horizon,
            reply_end: IntegrationEnd::Horizon,
            main_log_term: MainLogTerm::PerThread,
        }
    }
}

impl LikelihoodOptions {
    /// Frozen main compensator, frozen infectivity, stream-wise end points and
    /// the double sum over `log λ_main`.
    pub fn literal() -> Self {
        Self {
            model: ModelOptions::default(),
            main_compensator: MainCompensatorMode::Frozen,
            reply_compensator: ReplyCompensatorMode::FrozenInfectivity,
            main_end: IntegrationEnd::LastEvent,
            reply_end: IntegrationEnd::LastEvent,
            main_log_term: MainLogTerm::PerReply,
        }
    }
}

/// Log-likelihood and its parts.
///
/// `value = main_term + reply_term − main_compensator − Σ reply_compensators`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihood {
    pub value: f64,
    pub main_term: f64,
    pub reply_term: f64,
    pub main_compensator: f64,
    pub reply_compensators: Vec<f64>,
}

impl LogLikelihood {
    fn assemble(main_term: f64, reply_term: f64, main_compensator: f64, reply_compensators: Vec<f64>) -> Self {
        let value = main_term + reply_term - main_compensator - reply_compensators.iter().sum::<f64>();
        Self {
            value,
            main_term,
            reply_term,
            main_compensator,
            reply_compensators,
        }
    }
}

/// `∫ λ_reply^i(u) du` over `[thread_time, t_end]`.
pub fn reply_compensator(
    params: &ReplyParams,
    cascade: &Cascade,
    t_end: f64,
    mode: ReplyCompensatorMode,
) -> Result<f64> {
    params.validate()?;
    if t_end < cascade.thread_time {
        return Err(Error::domain(format!(
            "reply compensator of thread {} ends at {t_end}, before its creation at {}",
            cascade.thread_id, cascade.thread_time
        )));
    }
    Ok(reply_compensator_raw(
        params,
        cascade.thread_time,
        &cascade.reply_times,
        t_end,
        mode,
    ))
}

pub(crate) fn reply_compensator_raw(
    p: &ReplyParams,
    t0: f64,
    replies: &[f64],
    t_end: f64,
    mode: ReplyCompensatorMode,
) -> f64 {
    let base = p.mu_reply * (t_end - t0);
    if p.alpha == 0.0 {
        return base;
    }
    let n = replies.partition_point(|&r| r < t_end);
    let excitation = match mode {
        ReplyCompensatorMode::Exact => {
            let k = p.beta + p.delta;
            p.alpha / k
                * replies[..n]
                    .iter()
                    .map(|&r| (-p.delta * (r - t0)).exp() * -(-k * (t_end - r)).exp_m1())
                    .sum::<f64>()
        }
        ReplyCompensatorMode::FrozenInfectivity => {
            let q = (-p.delta * (t_end - t0)).exp();
            q * p.alpha / p.beta
                * replies[..n]
                    .iter()
                    .map(|&r| -(-p.beta * (t_end - r)).exp_m1())
                    .sum::<f64>()
        }
    };
    base + excitation
}

/// `∫_0^{t_end} λ_main(u) du`.
pub fn main_compensator(
    params: &NestppParams,
    options: &ModelOptions,
    space: &EventSpace,
    t_end: f64,
    mode: MainCompensatorMode,
) -> Result<f64> {
    params.validate()?;
    if let Some(last) = space.cascades().last() {
        if t_end < last.thread_time {
            return Err(Error::domain(format!(
                "main compensator ends at {t_end}, before the last thread at {}",
                last.thread_time
            )));
        }
    }
    Ok(main_compensator_raw(params, options, space.cascades(), t_end, mode))
}

fn main_compensator_raw(
    params: &NestppParams,
    options: &ModelOptions,
    cascades: &[Cascade],
    t_end: f64,
    mode: MainCompensatorMode,
) -> f64 {
    let base = params.main.mu_main * t_end;
    let kernel: f64 = cascades
        .iter()
        .filter(|c| c.thread_time < t_end)
        .map(|c| match mode {
            MainCompensatorMode::Frozen => frozen_kernel_integral(params, options, c, t_end),
            MainCompensatorMode::Dynamic => dynamic_kernel_integral(params, options, c, t_end),
        })
        .sum();
    base + kernel
}

/// `λ_reply^i(t_i) p_i(t_i)^γ [c^{-η} − (t_end − t_i + c)^{-η}] / η`.
pub(crate) fn frozen_kernel_integral(
    params: &NestppParams,
    options: &ModelOptions,
    c: &Cascade,
    t_end: f64,
) -> f64 {
    let ti = c.thread_time;
    let lr = crate::intensity::reply_intensity_raw(&params.reply, ti, &c.reply_times, ti, None);
    let mark = options.mark_factor(c.replies_up_to(ti), params.main.gamma);
    lr * mark * power_integral(params.main.c, t_end - ti, params.main.eta)
}

/// `∫_{t_i}^{t_end} λ_reply^i(u) p_i(u)^γ (u − t_i + c)^{-(η+1)} du`.
pub(crate) fn dynamic_kernel_integral(
    params: &NestppParams,
    options: &ModelOptions,
    c: &Cascade,
    t_end: f64,
) -> f64 {
    let MainParamsView { gamma, cc, eta } = MainParamsView::of(params);
    let rp = &params.reply;
    let ti = c.thread_time;
    let k = rp.beta + rp.delta;
    let static_count = c.replies_up_to(ti);

    let mut total = 0.0;
    // q(a) E(a) at the segment start.
    let mut s = 0.0;
    let mut a = ti;
    let mut j = 0;
    let reps = &c.reply_times;
    // Replies sitting exactly on the thread time open the first segment.
    while j < reps.len() && reps[j] <= a {
        s += rp.alpha * (-rp.delta * (reps[j] - ti)).exp();
        j += 1;
    }
    loop {
        let b = if j < reps.len() { reps[j].min(t_end) } else { t_end };
        if b > a {
            let count = if options.static_marks { static_count } else { j };
            let mark = options.mark_factor(count, gamma);
            let x0 = a - ti + cc;
            let len = b - a;
            let mut seg = rp.mu_reply * power_integral(x0, len, eta);
            if s > 1e-15 * rp.mu_reply {
                seg += s * exp_power_integral(k, x0, len, eta);
            }
            total += mark * seg;
        }
        if b >= t_end || j >= reps.len() {
            break;
        }
        // Advance to reply j at time b.
        s = s * (-k * (b - a)).exp() + rp.alpha * (-rp.delta * (b - ti)).exp();
        a = b;
        j += 1;
        while j < reps.len() && reps[j] <= a {
            s += rp.alpha * (-rp.delta * (reps[j] - ti)).exp();
            j += 1;
        }
    }
    total
}

struct MainParamsView {
    gamma: f64,
    cc: f64,
    eta: f64,
}

impl MainParamsView {
    fn of(p: &NestppParams) -> Self {
        Self {
            gamma: p.main.gamma,
            cc: p.main.c,
            eta: p.main.eta,
        }
    }
}

/// `λ_main` at every thread time, in thread order.
pub(crate) fn main_intensity_at_threads(
    params: &NestppParams,
    options: &ModelOptions,
    cascades: &[Cascade],
) -> Vec<f64> {
    let m = cascades.len();
    let mut lam = vec![params.main.mu_main; m];
    let rp = &params.reply;
    let k_decay = rp.beta + rp.delta;
    let power = -(params.main.eta + 1.0);
    for i in 0..m {
        let ci = &cascades[i];
        let ti = ci.thread_time;
        let reps = &ci.reply_times;
        let static_count = ci.replies_up_to(ti);
        // Replies strictly before the current target feed the excitation;
        // replies at or before it feed the mark.
        let mut lt = 0usize;
        let mut le = 0usize;
        let mut s = 0.0;
        let mut s_time = ti;
        let mut cached_count = usize::MAX;
        let mut mark = 0.0;
        for (k, ck) in cascades.iter().enumerate().skip(i + 1) {
            let t = ck.thread_time;
            while lt < reps.len() && reps[lt] < t {
                let r = reps[lt];
                s = s * (-k_decay * (r - s_time)).exp() + rp.alpha * (-rp.delta * (r - ti)).exp();
                s_time = r;
                lt += 1;
            }
            let mut qe = 0.0;
            if s != 0.0 {
                qe = s * (-k_decay * (t - s_time)).exp();
                if lt == reps.len() && qe < 1e-17 * rp.mu_reply {
                    s = 0.0;
                    qe = 0.0;
                }
            }
            let count = if options.static_marks {
                static_count
            } else {
                while le < reps.len() && reps[le] <= t {
                    le += 1;
                }
                le
            };
            if count != cached_count {
                cached_count = count;
                mark = options.mark_factor(count, params.main.gamma);
            }
            lam[k] += (rp.mu_reply + qe) * mark * (t - ti + params.main.c).powf(power);
        }
    }
    lam
}

/// `Σ_j log λ_reply^i(t_ij)` for one cascade.
fn reply_log_sum(p: &ReplyParams, c: &Cascade) -> std::result::Result<f64, (usize, f64)> {
    let ti = c.thread_time;
    let k = p.beta + p.delta;
    let mut s = 0.0;
    let mut s_time = ti;
    let mut acc = 0.0;
    let mut j = 0;
    while j < c.reply_times.len() {
        let r = c.reply_times[j];
        let qe = if s != 0.0 { s * (-k * (r - s_time)).exp() } else { 0.0 };
        let lam = p.mu_reply + qe;
        if !(lam > 0.0 && lam.is_finite()) {
            return Err((j, lam));
        }
        acc += lam.ln();
        s = qe + p.alpha * (-p.delta * (r - ti)).exp();
        s_time = r;
        j += 1;
    }
    Ok(acc)
}

/// Joint log-likelihood of `space` under `params`.
pub fn log_likelihood(
    params: &NestppParams,
    space: &EventSpace,
    options: &LikelihoodOptions,
) -> Result<LogLikelihood> {
    params.validate()?;
    if space.is_empty() {
        return Err(Error::validation("log-likelihood of an empty event space"));
    }
    log_likelihood_unchecked(params, space, options)
}

pub(crate) fn log_likelihood_unchecked(
    params: &NestppParams,
    space: &EventSpace,
    options: &LikelihoodOptions,
) -> Result<LogLikelihood> {
    let cascades = space.cascades();
    let lam = main_intensity_at_threads(params, &options.model, cascades);
    let mut main_term = 0.0;
    for (c, &l) in cascades.iter().zip(&lam) {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::numeric(format!(
                "main intensity {l} at thread {} (t = {})",
                c.thread_id, c.thread_time
            )));
        }
        let weight = match options.main_log_term {
            MainLogTerm::PerThread => 1.0,
            MainLogTerm::PerReply => c.n_replies() as f64,
        };
        main_term += weight * l.ln();
    }

    let mut reply_term = 0.0;
    let mut reply_comps = Vec::with_capacity(cascades.len());
    for c in cascades {
        reply_term += reply_log_sum(&params.reply, c).map_err(|(j, l)| {
            Error::numeric(format!(
                "reply intensity {l} at reply {} of thread {}",
                c.reply_ids[j], c.thread_id
            ))
        })?;
        let end = match options.reply_end {
            IntegrationEnd::Horizon => space.horizon(),
            IntegrationEnd::LastEvent => c.last_event_time(),
        };
        reply_comps.push(reply_compensator_raw(
            &params.reply,
            c.thread_time,
            &c.reply_times,
            end,
            options.reply_compensator,
        ));
    }

    let main_end = match options.main_end {
        IntegrationEnd::Horizon => space.horizon(),
        IntegrationEnd::LastEvent => cascades.last().map_or(0.0, |c| c.thread_time),
    };
    let main_comp = main_compensator_raw(
        params,
        &options.model,
        cascades,
        main_end,
        options.main_compensator,
    );

    let ll = LogLikelihood::assemble(main_term, reply_term, main_comp, reply_comps);
    if !ll.value.is_finite() {
        return Err(Error::numeric(format!("log-likelihood is {}", ll.value)));
    }
    Ok(ll)
}

/// Log-likelihood together with its exact gradient in the order
/// `(μ_main, γ, c, η, μ_reply, α, β, δ)`.
///
/// One pass over the data, at roughly the cost of a single evaluation. Used by
/// the estimator; [`log_likelihood_gradient`] remains the reference.
pub fn log_likelihood_with_gradient(
    params: &NestppParams,
    space: &EventSpace,
    options: &LikelihoodOptions,
) -> Result<(LogLikelihood, [f64; 8])> {
    params.validate()?;
    if space.is_empty() {
        return Err(Error::validation("log-likelihood of an empty event space"));
    }
    value_and_gradient_unchecked(params, space, options)
}

/// Running sums `A = Σ e^{-β(t - r)}` and `B = Σ (t - r) e^{-β(t - r)}` over
/// the replies absorbed so far, held at the time of the last one.
#[derive(Clone, Copy)]
struct ExpSums {
    a: f64,
    b: f64,
    at: f64,
}

impl ExpSums {
    fn new(t0: f64) -> Self {
        Self { a: 0.0, b: 0.0, at: t0 }
    }

    #[inline]
    fn absorb(&mut self, r: f64, beta: f64) {
        let d = r - self.at;
        let e = (-beta * d).exp();
        self.b = e * (self.b + d * self.a);
        self.a = e * self.a + 1.0;
        self.at = r;
    }

    /// `(A(t), B(t))` without absorbing anything.
    #[inline]
    fn at(&self, t: f64, beta: f64) -> (f64, f64) {
        let d = t - self.at;
        let e = (-beta * d).exp();
        (e * self.a, e * (self.b + d * self.a))
    }
}

const N_PARAMS: usize = 8;

pub(crate) fn value_and_gradient_unchecked(
    params: &NestppParams,
    space: &EventSpace,
    options: &LikelihoodOptions,
) -> Result<(LogLikelihood, [f64; 8])> {
    let cascades = space.cascades();
    let m = cascades.len();
    let NestppParams { main, reply: rp } = *params;
    let (gamma, cc, eta) = (main.gamma, main.c, main.eta);
    let (mu_r, alpha, beta, delta) = (rp.mu_reply, rp.alpha, rp.beta, rp.delta);
    let model = &options.model;
    let pw = eta + 1.0;
    let mut grad = [0.0; N_PARAMS];

    // Log main intensity at every thread.
    let mut lam = vec![main.mu_main; m];
    let mut dlam = vec![[0.0; N_PARAMS]; m];
    for i in 0..m {
        let ci = &cascades[i];
        let ti = ci.thread_time;
        let reps = &ci.reply_times;
        let static_count = ci.replies_up_to(ti);
        let mut sums = ExpSums::new(ti);
        let mut lt = 0usize;
        let mut le = 0usize;
        let mut cached_count = usize::MAX;
        let (mut mark, mut log_mark) = (0.0, 0.0);
        let mut dormant_until = f64::NEG_INFINITY;
        for k in i + 1..m {
            let t = cascades[k].thread_time;
            while lt < reps.len() && reps[lt] < t {
                sums.absorb(reps[lt], beta);
                lt += 1;
            }
            let count = if model.static_marks {
                static_count
            } else {
                while le < reps.len() && reps[le] <= t {
                    le += 1;
                }
                le
            };
            if count != cached_count {
                cached_count = count;
                mark = model.mark_factor(count, gamma);
                log_mark = if mark > 0.0 { model.mark_factor(count, 1.0).ln() } else { 0.0 };
            }
            if mark == 0.0 {
                continue;
            }
            let age = t - ti;
            let (mut qa, mut qb) = (0.0, 0.0);
            if sums.a != 0.0 && t >= dormant_until {
                let q = (-delta * age).exp();
                let (a, b) = sums.at(t, beta);
                qa = q * a;
                qb = q * b;
                if alpha * qa.max(qb) < 1e-17 * mu_r && beta * (t - sums.at) > 1.0 {
                    dormant_until = reps.get(lt).copied().unwrap_or(f64::INFINITY);
                    qa = 0.0;
                    qb = 0.0;
                }
            }
            let x = age + cc;
            let lx = x.ln();
            let p = (gamma * log_mark - pw * lx).exp();
            let exc = alpha * qa;
            let term = (mu_r + exc) * p;
            lam[k] += term;
            let d = &mut dlam[k];
            d[1] += term * log_mark;
            d[2] -= pw * term / x;
            d[3] -= term * lx;
            d[4] += p;
            d[5] += qa * p;
            d[6] -= alpha * qb * p;
            d[7] -= age * exc * p;
        }
    }
    let mut main_term = 0.0;
    for (k, c) in cascades.iter().enumerate() {
        let l = lam[k];
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::numeric(format!(
                "main intensity {l} at thread {} (t = {})",
                c.thread_id, c.thread_time
            )));
        }
        let w = match options.main_log_term {
            MainLogTerm::PerThread => 1.0,
            MainLogTerm::PerReply => c.n_replies() as f64,
        };
        if w == 0.0 {
            continue;
        }
        main_term += w * l.ln();
        grad[0] += w / l;
        for j in 1..N_PARAMS {
            grad[j] += w * dlam[k][j] / l;
        }
    }

    // Reply streams.
    let mut reply_term = 0.0;
    let mut reply_comps = Vec::with_capacity(m);
    for c in cascades {
        let t0 = c.thread_time;
        let mut sums = ExpSums::new(t0);
        for (j, &r) in c.reply_times.iter().enumerate() {
            let (a, b) = if j == 0 { (0.0, 0.0) } else { sums.at(r, beta) };
            let q = (-delta * (r - t0)).exp();
            let exc = alpha * q * a;
            let l = mu_r + exc;
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::numeric(format!(
                    "reply intensity {l} at reply {} of thread {}",
                    c.reply_ids[j], c.thread_id
                )));
            }
            reply_term += l.ln();
            grad[4] += 1.0 / l;
            grad[5] += q * a / l;
            grad[6] -= alpha * q * b / l;
            grad[7] -= (r - t0) * exc / l;
            sums.absorb(r, beta);
        }
        let end = match options.reply_end {
            IntegrationEnd::Horizon => space.horizon(),
            IntegrationEnd::LastEvent => c.last_event_time(),
        };
        let n = c.reply_times.partition_point(|&r| r < end);
        let mut comp = mu_r * (end - t0);
        grad[4] -= end - t0;
        match options.reply_compensator {
            ReplyCompensatorMode::Exact => {
                let k = beta + delta;
                let (mut s0, mut sk, mut sa) = (0.0, 0.0, 0.0);
                for &r in &c.reply_times[..n] {
                    let (a, d) = (r - t0, end - r);
                    let qd = (-delta * a).exp();
                    let ed = (-k * d).exp();
                    let em = -(-k * d).exp_m1();
                    let base = qd * em / k;
                    s0 += base;
                    sk += qd * (d * ed / k - em / (k * k));
                    sa += a * base;
                }
                comp += alpha * s0;
                grad[5] -= s0;
                grad[6] -= alpha * sk;
                grad[7] -= alpha * sk - alpha * sa;
            }
            ReplyCompensatorMode::FrozenInfectivity => {
                let q = (-delta * (end - t0)).exp();
                let (mut s0, mut sb) = (0.0, 0.0);
                for &r in &c.reply_times[..n] {
                    let d = end - r;
                    let em = -(-beta * d).exp_m1();
                    s0 += em;
                    sb += d * (-beta * d).exp() / beta - em / (beta * beta);
                }
                comp += q * alpha / beta * s0;
                grad[5] -= q / beta * s0;
                grad[6] -= q * alpha * sb;
                grad[7] += (end - t0) * q * alpha / beta * s0;
            }
        }
        reply_comps.push(comp);
    }

    // Main compensator.
    let main_end = match options.main_end {
        IntegrationEnd::Horizon => space.horizon(),
        IntegrationEnd::LastEvent => cascades.last().map_or(0.0, |c| c.thread_time),
    };
    let mut main_comp = main.mu_main * main_end;
    grad[0] -= main_end;
    let mut cg = [0.0; N_PARAMS];
    for ci in cascades.iter().filter(|c| c.thread_time < main_end) {
        match options.main_compensator {
            MainCompensatorMode::Frozen => {
                main_comp += frozen_term_with_gradient(params, model, ci, main_end, &mut cg);
            }
            MainCompensatorMode::Dynamic => {
                main_comp += dynamic_term_with_gradient(params, model, ci, main_end, &mut cg);
            }
        }
    }
    for j in 1..N_PARAMS {
        grad[j] -= cg[j];
    }

    let ll = LogLikelihood::assemble(main_term, reply_term, main_comp, reply_comps);
    if !ll.value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric(format!("log-likelihood is {}", ll.value)));
    }
    Ok((ll, grad))
}

/// `∫_0^L (x + x0)^{-(η+1)} dx` with its derivatives in `x0` and `η`.
#[inline]
fn power_integral_with_gradient(x0: f64, len: f64, eta: f64) -> (f64, f64, f64) {
    let w = (len / x0).ln_1p();
    let s = x0.powf(-eta);
    let v = s * -(-eta * w).exp_m1() / eta;
    let d_x0 = s / x0 * (-(eta + 1.0) * w).exp_m1();
    let d_eta = -x0.ln() * v + s * w * (-eta * w).exp() / eta - v / eta;
    (v, d_x0, d_eta)
}

fn frozen_term_with_gradient(
    params: &NestppParams,
    model: &ModelOptions,
    c: &Cascade,
    t_end: f64,
    g: &mut [f64; N_PARAMS],
) -> f64 {
    let ti = c.thread_time;
    let rp = &params.reply;
    let mut sums = ExpSums::new(ti);
    for &r in c.reply_times.iter().take_while(|&&r| r < ti) {
        sums.absorb(r, rp.beta);
    }
    let (a, b) = sums.at(ti, rp.beta);
    let lr = rp.mu_reply + rp.alpha * a;
    let count = c.replies_up_to(ti);
    let mark = model.mark_factor(count, params.main.gamma);
    if mark == 0.0 {
        return 0.0;
    }
    let log_mark = model.mark_factor(count, 1.0).ln();
    let (pi, d_x0, d_eta) = power_integral_with_gradient(params.main.c, t_end - ti, params.main.eta);
    let v = lr * mark * pi;
    g[1] += v * log_mark;
    g[2] += lr * mark * d_x0;
    g[3] += lr * mark * d_eta;
    g[4] += mark * pi;
    g[5] += a * mark * pi;
    g[6] -= rp.alpha * b * mark * pi;
    v
}

fn dynamic_term_with_gradient(
    params: &NestppParams,
    model: &ModelOptions,
    c: &Cascade,
    t_end: f64,
    g: &mut [f64; N_PARAMS],
) -> f64 {
    let rp = &params.reply;
    let (gamma, cc, eta) = (params.main.gamma, params.main.c, params.main.eta);
    let ti = c.thread_time;
    let k = rp.beta + rp.delta;
    let reps = &c.reply_times;
    let static_count = c.replies_up_to(ti);
    let mut sums = ExpSums::new(ti);
    let mut total = 0.0;
    let mut a = ti;
    let mut j = 0;
    while j < reps.len() && reps[j] <= a {
        sums.absorb(reps[j], rp.beta);
        j += 1;
    }
    loop {
        let b = if j < reps.len() { reps[j].min(t_end) } else { t_end };
        if b > a {
            let count = if model.static_marks { static_count } else { j };
            let mark = model.mark_factor(count, gamma);
            if mark > 0.0 {
                let log_mark = model.mark_factor(count, 1.0).ln();
                let x0 = a - ti + cc;
                let len = b - a;
                let (pi, pi_x0, pi_eta) = power_integral_with_gradient(x0, len, eta);
                let mut seg = rp.mu_reply * pi;
                let mut d_x0 = rp.mu_reply * pi_x0;
                let mut d_eta = rp.mu_reply * pi_eta;
                g[4] += mark * pi;
                let (ea, eb) = sums.at(a, rp.beta);
                let q = (-rp.delta * (a - ti)).exp();
                let s = rp.alpha * q * ea;
                if s > 1e-15 * rp.mu_reply {
                    let [jv, jln, jx] = crate::quadrature::exp_power_moments(k, x0, len, eta);
                    let j_x0 = k * jv + (-k * len).exp() * (x0 + len).powf(-(eta + 1.0)) - x0.powf(-(eta + 1.0));
                    seg += s * jv;
                    d_x0 += s * j_x0;
                    d_eta -= s * jln;
                    g[5] += mark * q * ea * jv;
                    g[6] += mark * (-rp.alpha * q * eb * jv - s * jx);
                    g[7] += mark * (-(a - ti) * s * jv - s * jx);
                }
                g[1] += mark * seg * log_mark;
                g[2] += mark * d_x0;
                g[3] += mark * d_eta;
                total += mark * seg;
            }
        }
        if b >= t_end || j >= reps.len() {
            break;
        }
        a = b;
        while j < reps.len() && reps[j] <= a {
            sums.absorb(reps[j], rp.beta);
            j += 1;
        }
    }
    total
}

/// Relative step used by the finite-difference gradient.
pub const FD_STEP: f64 = 1e-6;

/// Central finite-difference gradient of `f` with per-coordinate step
/// `scale · max(FD_STEP, FD_STEP·|θ_k|)`.
pub fn central_difference<const N: usize, F>(theta: &[f64; N], scale: f64, mut f: F) -> Result<[f64; N]>
where
    F: FnMut(&[f64; N]) -> Result<f64>,
{
    let mut grad = [0.0; N];
    let mut x = *theta;
    for k in 0..N {
        let h = scale * FD_STEP.max(FD_STEP * theta[k].abs());
        x[k] = theta[k] + h;
        let up = f(&x)?;
        x[k] = theta[k] - h;
        let down = f(&x)?;
        x[k] = theta[k];
        grad[k] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Finite-difference gradient of the log-likelihood in the order
/// `(μ_main, γ, c, η, μ_reply, α, β, δ)`.
pub fn log_likelihood_gradient(
    params: &NestppParams,
    space: &EventSpace,
    options: &LikelihoodOptions,
) -> Result<[f64; 8]> {
    log_likelihood_gradient_scaled(params, space, options, 1.0)
}

/// As [`log_likelihood_gradient`] with every step multiplied by `scale`.
pub fn log_likelihood_gradient_scaled(
    params: &NestppParams,
    space: &EventSpace,
    options: &LikelihoodOptions,
    scale: f64,
) -> Result<[f64; 8]> {
    params.validate()?;
    if space.is_empty() {
        return Err(Error::validation("log-likelihood of an empty event space"));
    }
    central_difference(&params.to_array(), scale, |x| {
        let p = NestppParams::from_slice(x)?;
        Ok(log_likelihood_unchecked(&p, space, options)?.value)
    })
}

/// Log-likelihood of the thread stream under the uncoupled power-law model,
/// observed on `[0, horizon]`.
pub fn decoupled_main_log_likelihood(
    params: &DecoupledMainParams,
    thread_times: &[f64],
    horizon: f64,
) -> Result<f64> {
    params.validate()?;
    decoupled_main_ll_unchecked(params, thread_times, horizon)
}

pub(crate) fn decoupled_main_ll_unchecked(
    params: &DecoupledMainParams,
    thread_times: &[f64],
    horizon: f64,
) -> Result<f64> {
    let mut ll = 0.0;
    for (k, &t) in thread_times.iter().enumerate() {
        let lam = decoupled_main_raw(params, &thread_times[..k], t);
        if !(lam > 0.0 && lam.is_finite()) {
            return Err(Error::numeric(format!("intensity {lam} at thread {k}")));
        }
        ll += lam.ln();
    }
    let comp = params.mu_main * horizon
        + params.p
            * thread_times
                .iter()
                .filter(|&&t| t < horizon)
                .map(|&t| power_integral(params.c, horizon - t, params.eta))
                .sum::<f64>();
    let v = ll - comp;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric(format!("log-likelihood is {v}")))
    }
}

/// Value and gradient in `(μ_main, p, c, η)` of the uncoupled main-stream
/// log-likelihood.
pub(crate) fn decoupled_main_value_and_gradient(
    params: &DecoupledMainParams,
    thread_times: &[f64],
    horizon: f64,
) -> Result<(f64, [f64; 4])> {
    let DecoupledMainParams { mu_main, p, c, eta } = *params;
    let mut g = [0.0; 4];
    let mut ll = 0.0;
    for (k, &t) in thread_times.iter().enumerate() {
        let end = thread_times[..k].partition_point(|&tj| tj < t);
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &tj in &thread_times[..end] {
            let x = t - tj + c;
            let lx = x.ln();
            let e = (-(eta + 1.0) * lx).exp();
            s0 += e;
            s1 += e / x;
            s2 += lx * e;
        }
        let lam = mu_main + p * s0;
        if !(lam > 0.0 && lam.is_finite()) {
            return Err(Error::numeric(format!("intensity {lam} at thread {k}")));
        }
        ll += lam.ln();
        g[0] += 1.0 / lam;
        g[1] += s0 / lam;
        g[2] -= p * (eta + 1.0) * s1 / lam;
        g[3] -= p * s2 / lam;
    }
    let mut comp = mu_main * horizon;
    g[0] -= horizon;
    for &tj in thread_times.iter().filter(|&&t| t < horizon) {
        let (pi, d_c, d_eta) = power_integral_with_gradient(c, horizon - tj, eta);
        comp += p * pi;
        g[1] -= pi;
        g[2] -= p * d_c;
        g[3] -= p * d_eta;
    }
    let v = ll - comp;
    if v.is_finite() && g.iter().all(|x| x.is_finite()) {
        Ok((v, g))
    } else {
        Err(Error::numeric(format!("log-likelihood is {v}")))
    }
}

/// Log-likelihood of every thread's reply stream under the uncoupled
/// exponential model (no thread-age factor), each integrated to the horizon.
pub fn decoupled_reply_log_likelihood(params: &ReplyParams, space: &EventSpace) -> Result<f64> {
    params.validate()?;
    decoupled_reply_ll_unchecked(params, space)
}

pub(crate) fn decoupled_reply_ll_unchecked(params: &ReplyParams, space: &EventSpace) -> Result<f64> {
    let p = ReplyParams { delta: 0.0, ..*params };
    let mut total = 0.0;
    for c in space.cascades() {
        total += reply_log_sum(&p, c)
            .map_err(|(j, l)| Error::numeric(format!("reply intensity {l} at reply {}", c.reply_ids[j])))?;
        total -= reply_compensator_raw(
            &p,
            c.thread_time,
            &c.reply_times,
            space.horizon(),
            ReplyCompensatorMode::Exact,
        );
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::numeric(format!("log-likelihood is {total}")))
    }
}
