//! Maximum-likelihood fitting with multi-start projected L-BFGS.
//!
//! Every model is optimized in log-parameter space: the box `[lo, hi]` becomes
//! `[ln lo, ln hi]` and parameters spanning several orders of magnitude get
//! comparable step sizes. The coupled model and the uncoupled main stream use
//! exact derivatives by default; the exponential reply model uses central
//! differences in the natural parameters (see [`central_difference`]). Either way the gradient is mapped through the
//! chain rule `∂l/∂ln θ = θ ∂l/∂θ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::EventSpace;
use crate::intensity::{DecoupledMainParams, NestppParams, ReplyParams};
use crate::likelihood::{
    central_difference, decoupled_main_ll_unchecked, decoupled_main_value_and_gradient, decoupled_reply_ll_unchecked, log_likelihood_unchecked,
    value_and_gradient_unchecked,
    LikelihoodOptions,
};
use crate::optimize::{minimize, LbfgsOptions, Objective, Termination};

pub const DEFAULT_LOWER: f64 = 1e-4;
pub const DEFAULT_UPPER: f64 = 1e2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub n_starts: usize,
    pub max_iterations: usize,
    /// Relative log-likelihood change below which a start stops.
    pub tolerance: f64,
    /// Projected-gradient level (log-parameter space) that counts as converged.
    pub gradient_tolerance: f64,
    /// One `[lo, hi]` pair for every parameter, or a single pair applied to
    /// all of them.
    pub bounds: Vec<[f64; 2]>,
    pub seed: u64,
    pub likelihood: LikelihoodOptions,
    /// How gradients are obtained for models that have exact ones.
    pub gradient: GradientMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Exact derivatives, computed alongside the value.
    #[default]
    Analytic,
    /// Central differences, 16 extra evaluations per gradient.
    FiniteDifference,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 8,
            max_iterations: 500,
            tolerance: 1e-6,
            gradient_tolerance: 1e-3,
            bounds: vec![[DEFAULT_LOWER, DEFAULT_UPPER]],
            seed: 0,
            likelihood: LikelihoodOptions::default(),
            gradient: GradientMode::Analytic,
        }
    }
}

impl FitConfig {
    /// Expands and checks the box for a model with `n` parameters.
    pub fn resolve_bounds(&self, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let pairs: Vec<[f64; 2]> = match self.bounds.len() {
            1 => vec![self.bounds[0]; n],
            k if k == n => self.bounds.clone(),
            k => {
                return Err(Error::validation(format!(
                    "expected 1 or {n} bound pairs, got {k}"
                )))
            }
        };
        for (i, [lo, hi]) in pairs.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && *lo > 0.0 && lo <= hi) {
                return Err(Error::validation(format!(
                    "bounds for parameter {i} must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok((pairs.iter().map(|p| p[0]).collect(), pairs.iter().map(|p| p[1]).collect()))
    }

    fn check(&self) -> Result<()> {
        if self.n_starts == 0 {
            return Err(Error::validation("n_starts must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::validation("max_iterations must be positive"));
        }
        if !(self.tolerance >= 0.0) || !(self.gradient_tolerance >= 0.0) {
            return Err(Error::validation("tolerances must be non-negative"));
        }
        Ok(())
    }
}

/// Outcome of one start of a multi-start fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartReport {
    pub initial: Vec<f64>,
    pub initial_log_likelihood: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub iterations: usize,
    pub projected_gradient: Option<f64>,
    pub termination: String,
}

/// Best start of a multi-start fit over a generic parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFit {
    pub theta: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub start_index: usize,
    pub starts: Vec<StartReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: NestppParams,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub start_index: usize,
    #[serde(default)]
    pub starts: Vec<StartReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoupledMainFit {
    pub params: DecoupledMainParams,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub start_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoupledReplyFit {
    /// `delta` is always 0: the uncoupled reply model has no thread-age factor.
    pub params: ReplyParams,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub start_index: usize,
}

/// Value and gradient of a log-likelihood in natural parameters.
pub type ValueGradient<'a> = dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync + 'a;

/// Negative log-likelihood in log-parameter space.
struct LogSpace<'a, F> {
    ll: &'a F,
    exact: Option<&'a ValueGradient<'a>>,
}

fn theta_of(z: &[f64]) -> Vec<f64> {
    z.iter().map(|v| v.exp()).collect()
}

/// `−∂l/∂ln θ` from `∂l/∂θ`.
fn to_log_space(g: &[f64], theta: &[f64]) -> Option<Vec<f64>> {
    let out: Vec<f64> = g.iter().zip(theta).map(|(gi, ti)| -gi * ti).collect();
    out.iter().all(|v| v.is_finite()).then_some(out)
}

impl<F: Fn(&[f64]) -> Result<f64>> Objective for LogSpace<'_, F> {
    fn value(&mut self, z: &[f64]) -> Option<f64> {
        (self.ll)(&theta_of(z)).ok().filter(|v| v.is_finite()).map(|v| -v)
    }

    fn gradient(&mut self, z: &[f64]) -> Option<Vec<f64>> {
        self.value_gradient(z).map(|(_, g)| g)
    }

    fn value_gradient(&mut self, z: &[f64]) -> Option<(f64, Vec<f64>)> {
        let theta = theta_of(z);
        let (v, g) = match self.exact {
            Some(vg) => vg(&theta).ok()?,
            None => ((self.ll)(&theta).ok()?, finite_gradient(&theta, self.ll).ok()?),
        };
        if !v.is_finite() {
            return None;
        }
        Some((-v, to_log_space(&g, &theta)?))
    }

    fn gradient_is_cheap(&self) -> bool {
        self.exact.is_some()
    }
}

fn finite_gradient<F: Fn(&[f64]) -> Result<f64>>(theta: &[f64], f: &F) -> Result<Vec<f64>> {
    macro_rules! fixed {
        ($n:literal) => {{
            let arr: [f64; $n] = theta.try_into().expect("length checked");
            central_difference(&arr, 1.0, |x| f(x)).map(|g| g.to_vec())
        }};
    }
    match theta.len() {
        3 => fixed!(3),
        4 => fixed!(4),
        8 => fixed!(8),
        n => {
            // Generic path, same step rule.
            let mut grad = vec![0.0; n];
            let mut x = theta.to_vec();
            for k in 0..n {
                let h = crate::likelihood::FD_STEP.max(crate::likelihood::FD_STEP * theta[k].abs());
                x[k] = theta[k] + h;
                let up = f(&x)?;
                x[k] = theta[k] - h;
                let down = f(&x)?;
                x[k] = theta[k];
                grad[k] = (up - down) / (2.0 * h);
            }
            Ok(grad)
        }
    }
}

/// Draws `n` starting points log-uniformly inside the box.
pub fn draw_starts(lo: &[f64], hi: &[f64], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            lo.iter()
                .zip(hi)
                .map(|(&l, &h)| if l == h { l } else { (l.ln() + rng.random::<f64>() * (h / l).ln()).exp() })
                .collect()
        })
        .collect()
}

/// Maximizes `ll` over the configured box from `config.n_starts` random
/// starts and returns the best one (lowest index on ties).
pub fn multi_start<F>(ll: F, n_params: usize, config: &FitConfig) -> Result<RawFit>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    multi_start_with(ll, None, n_params, config)
}

/// As [`multi_start`], with an optional exact value-and-gradient function.
pub fn multi_start_with<F>(
    ll: F,
    exact: Option<&ValueGradient<'_>>,
    n_params: usize,
    config: &FitConfig,
) -> Result<RawFit>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    config.check()?;
    let (lo, hi) = config.resolve_bounds(n_params)?;
    let starts = draw_starts(&lo, &hi, config.n_starts, config.seed);
    let zlo: Vec<f64> = lo.iter().map(|v| v.ln()).collect();
    let zhi: Vec<f64> = hi.iter().map(|v| v.ln()).collect();
    let opts = LbfgsOptions {
        max_iterations: config.max_iterations,
        f_tolerance: config.tolerance,
        g_tolerance: config.gradient_tolerance,
        ..LbfgsOptions::default()
    };

    let outcomes: Vec<(StartReport, Option<Vec<f64>>)> = starts
        .par_iter()
        .map(|theta0| {
            let mut obj = LogSpace { ll: &ll, exact };
            let z0: Vec<f64> = theta0.iter().map(|v| v.ln()).collect();
            let r = minimize(&mut obj, &z0, &zlo, &zhi, &opts);
            let feasible = r.termination != Termination::Infeasible && r.f.is_finite();
            let theta: Vec<f64> = r
                .x
                .iter()
                .zip(lo.iter().zip(&hi))
                .map(|(z, (&l, &h))| z.exp().clamp(l, h))
                .collect();
            let report = StartReport {
                initial: theta0.clone(),
                initial_log_likelihood: r.f_initial.is_finite().then_some(-r.f_initial),
                log_likelihood: feasible.then_some(-r.f),
                iterations: r.iterations,
                projected_gradient: r.projected_gradient.is_finite().then_some(r.projected_gradient),
                termination: format!("{:?}", r.termination),
            };
            (report, feasible.then_some(theta))
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, (rep, theta)) in outcomes.iter().enumerate() {
        if theta.is_none() {
            continue;
        }
        let v = rep.log_likelihood.expect("feasible start has a value");
        if best.is_none_or(|b| v > outcomes[b].0.log_likelihood.expect("feasible")) {
            best = Some(i);
        }
    }
    let starts: Vec<StartReport> = outcomes.iter().map(|o| o.0.clone()).collect();
    let Some(b) = best else {
        return Err(Error::Fit {
            message: format!("all {} starts failed", starts.len()),
            diagnostics: starts
                .iter()
                .enumerate()
                .map(|(i, s)| format!("start {i}: {} from {:?}", s.termination, s.initial))
                .collect(),
        });
    };
    let rep = &outcomes[b].0;
    Ok(RawFit {
        theta: outcomes[b].1.clone().expect("feasible"),
        log_likelihood: rep.log_likelihood.expect("feasible"),
        converged: rep.termination == format!("{:?}", Termination::Gradient),
        iterations: rep.iterations,
        start_index: b,
        starts,
    })
}

fn check_space(space: &EventSpace) -> Result<()> {
    if space.len() < 2 {
        return Err(Error::validation(format!(
            "fitting needs at least 2 threads, got {}",
            space.len()
        )));
    }
    if space.total_replies() == 0 {
        return Err(Error::validation("fitting needs at least one reply"));
    }
    Ok(())
}

/// Fits the coupled model. Parameter order is `(μ_main, γ, c, η, μ_reply, α, β, δ)`.
pub fn fit(space: &EventSpace, config: &FitConfig) -> Result<FitResult> {
    check_space(space)?;
    let opts = config.likelihood;
    let exact = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let p = NestppParams::from_slice(theta)?;
        let (ll, g) = value_and_gradient_unchecked(&p, space, &opts)?;
        Ok((ll.value, g.to_vec()))
    };
    let raw = multi_start_with(
        |theta| {
            let p = NestppParams::from_slice(theta)?;
            Ok(log_likelihood_unchecked(&p, space, &opts)?.value)
        },
        (config.gradient == GradientMode::Analytic).then_some(&exact as &ValueGradient<'_>),
        8,
        config,
    )?;
    Ok(FitResult {
        params: NestppParams::from_slice(&raw.theta)?,
        log_likelihood: raw.log_likelihood,
        converged: raw.converged,
        iterations: raw.iterations,
        start_index: raw.start_index,
        starts: raw.starts,
    })
}

/// Fits the uncoupled power-law model `(μ_main, p, c, η)` to thread times.
pub fn fit_decoupled_main(thread_times: &[f64], horizon: f64, config: &FitConfig) -> Result<DecoupledMainFit> {
    if thread_times.len() < 2 {
        return Err(Error::validation("fitting needs at least 2 threads"));
    }
    if thread_times.windows(2).any(|w| w[1] < w[0]) || thread_times.last().is_some_and(|&t| t > horizon) {
        return Err(Error::validation("thread times must be sorted and within the horizon"));
    }
    let exact = |t: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (v, g) =
            decoupled_main_value_and_gradient(&DecoupledMainParams::new(t[0], t[1], t[2], t[3]), thread_times, horizon)?;
        Ok((v, g.to_vec()))
    };
    let raw = multi_start_with(
        |t| decoupled_main_ll_unchecked(&DecoupledMainParams::new(t[0], t[1], t[2], t[3]), thread_times, horizon),
        (config.gradient == GradientMode::Analytic).then_some(&exact as &ValueGradient<'_>),
        4,
        config,
    )?;
    let t = &raw.theta;
    Ok(DecoupledMainFit {
        params: DecoupledMainParams::new(t[0], t[1], t[2], t[3]),
        log_likelihood: raw.log_likelihood,
        converged: raw.converged,
        iterations: raw.iterations,
        start_index: raw.start_index,
    })
}

/// Fits the uncoupled exponential reply model `(μ_reply, α, β)` shared by
/// all reply streams of the space.
pub fn fit_decoupled_reply(space: &EventSpace, config: &FitConfig) -> Result<DecoupledReplyFit> {
    if space.total_replies() == 0 {
        return Err(Error::validation("fitting needs at least one reply"));
    }
    let raw = multi_start(
        |t| decoupled_reply_ll_unchecked(&ReplyParams::new(t[0], t[1], t[2], 0.0), space),
        3,
        config,
    )?;
    let t = &raw.theta;
    Ok(DecoupledReplyFit {
        params: ReplyParams::new(t[0], t[1], t[2], 0.0),
        log_likelihood: raw.log_likelihood,
        converged: raw.converged,
        iterations: raw.iterations,
        start_index: raw.start_index,
    })
}
