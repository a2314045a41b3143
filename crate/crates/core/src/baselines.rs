//! Comparison models: a piecewise-constant Poisson process, a univariate
//! exponential Hawkes process and the SEISMIC popularity estimator.
//!
//! The Poisson and Hawkes models implement [`ThinningModel`], as does the
//! uncoupled power-law main stream, so the evaluation harness can sample them
//! all through the same thinning routine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{multi_start, FitConfig};
use crate::event::Cascade;
use crate::intensity::DecoupledMainParams;
use crate::simulation::ThinningModel;

pub const DEFAULT_POISSON_BINS: usize = 10;

/// Non-homogeneous Poisson process with a piecewise-constant rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonModel {
    /// `rates.len() + 1` increasing edges.
    pub bin_edges: Vec<f64>,
    pub rates: Vec<f64>,
}

impl PoissonModel {
    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() || self.bin_edges.len() != self.rates.len() + 1 {
            return Err(Error::validation(format!(
                "{} edges do not fit {} rates",
                self.bin_edges.len(),
                self.rates.len()
            )));
        }
        if !self.bin_edges.iter().all(|e| e.is_finite()) || self.bin_edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("bin edges must be finite and increasing"));
        }
        if !self.rates.iter().all(|r| r.is_finite() && *r >= 0.0) {
            return Err(Error::validation("rates must be finite and non-negative"));
        }
        Ok(())
    }

    fn start(&self) -> f64 {
        self.bin_edges[0]
    }

    fn end(&self) -> f64 {
        self.bin_edges[self.rates.len()]
    }

    /// Count over the whole window divided by its length. Used outside the
    /// fitted window, where the bins say nothing.
    pub fn overall_rate(&self) -> f64 {
        let mass: f64 = self
            .rates
            .iter()
            .zip(self.bin_edges.windows(2))
            .map(|(r, w)| r * (w[1] - w[0]))
            .sum();
        mass / (self.end() - self.start())
    }

    fn bin_of(&self, t: f64) -> Option<usize> {
        if t < self.start() || t > self.end() {
            return None;
        }
        let k = self.bin_edges.partition_point(|&e| e <= t);
        Some(k.saturating_sub(1).min(self.rates.len() - 1))
    }

    pub fn rate(&self, t: f64) -> f64 {
        match self.bin_of(t) {
            Some(k) => self.rates[k],
            None => self.overall_rate(),
        }
    }

    /// `∫_a^b λ(t) dt`.
    pub fn expected_count(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let outside = self.overall_rate()
            * ((b.min(self.start()) - a).max(0.0) + (b - a.max(self.end())).max(0.0));
        let inside: f64 = self
            .rates
            .iter()
            .zip(self.bin_edges.windows(2))
            .map(|(r, w)| r * (b.min(w[1]) - a.max(w[0])).max(0.0))
            .sum();
        outside + inside
    }
}

impl ThinningModel for PoissonModel {
    fn intensity(&self, t: f64, _history: &[f64]) -> f64 {
        self.rate(t)
    }

    fn bound(&self, t: f64, _history: &[f64]) -> (f64, f64) {
        if t < self.start() {
            return (self.overall_rate(), self.start());
        }
        match self.bin_of(t) {
            Some(k) if k + 1 < self.rates.len() => (self.rates[k], self.bin_edges[k + 1]),
            // The last bin is closed; its rate holds through the end point.
            Some(k) => (self.rates[k].max(self.overall_rate()), f64::INFINITY),
            None => (self.overall_rate(), f64::INFINITY),
        }
    }
}

/// Per-bin maximum-likelihood rates over `n_bins` equal-width bins spanning
/// `window`. The last bin is closed on the right.
pub fn fit_poisson(times: &[f64], n_bins: usize, window: (f64, f64)) -> Result<PoissonModel> {
    let (start, end) = window;
    if times.is_empty() {
        return Err(Error::validation("Poisson fit needs at least one event"));
    }
    if n_bins == 0 {
        return Err(Error::validation("Poisson fit needs at least one bin"));
    }
    if !(start.is_finite() && end.is_finite() && end > start) {
        return Err(Error::validation(format!("invalid window [{start}, {end}]")));
    }
    if let Some(t) = times.iter().find(|&&t| !(start..=end).contains(&t)) {
        return Err(Error::validation(format!("event at {t} lies outside [{start}, {end}]")));
    }
    let width = (end - start) / n_bins as f64;
    let mut bin_edges: Vec<f64> = (0..n_bins).map(|k| start + k as f64 * width).collect();
    bin_edges.push(end);
    let mut counts = vec![0usize; n_bins];
    for &t in times {
        let k = bin_edges.partition_point(|&e| e <= t).saturating_sub(1).min(n_bins - 1);
        counts[k] += 1;
    }
    let rates = counts
        .iter()
        .zip(bin_edges.windows(2))
        .map(|(&n, w)| n as f64 / (w[1] - w[0]))
        .collect();
    Ok(PoissonModel { bin_edges, rates })
}

/// Univariate Hawkes process with kernel `α e^{-β s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HawkesModel {
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl HawkesModel {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.mu, self.alpha, self.beta].iter().all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("Hawkes parameters must be positive, got {self:?}")))
        }
    }

    pub fn branching_ratio(&self) -> f64 {
        self.alpha / self.beta
    }

    /// Log-likelihood of sorted `times` observed on `[0, horizon]`.
    pub fn log_likelihood(&self, times: &[f64], horizon: f64) -> Result<f64> {
        self.validate()?;
        if times.windows(2).any(|w| w[1] < w[0]) || times.last().is_some_and(|&t| t > horizon) {
            return Err(Error::validation("times must be sorted and within the horizon"));
        }
        Ok(self.log_likelihood_unchecked(times, horizon))
    }

    fn log_likelihood_unchecked(&self, times: &[f64], horizon: f64) -> f64 {
        let Self { mu, alpha, beta } = *self;
        let mut a = 0.0;
        let mut prev: Option<f64> = None;
        let mut ll = 0.0;
        for &t in times {
            if let Some(p) = prev {
                a = (-beta * (t - p)).exp() * (1.0 + a);
            }
            ll += (mu + alpha * a).ln();
            prev = Some(t);
        }
        let comp = mu * horizon
            + alpha / beta * times.iter().map(|&t| -(-beta * (horizon - t)).exp_m1()).sum::<f64>();
        ll - comp
    }
}

impl ThinningModel for HawkesModel {
    fn intensity(&self, t: f64, history: &[f64]) -> f64 {
        let end = history.partition_point(|&s| s <= t);
        self.mu
            + self.alpha
                * history[..end]
                    .iter()
                    .map(|&s| (-self.beta * (t - s)).exp())
                    .sum::<f64>()
    }
}

impl ThinningModel for DecoupledMainParams {
    fn intensity(&self, t: f64, history: &[f64]) -> f64 {
        let end = history.partition_point(|&s| s <= t);
        self.mu_main
            + self.p
                * history[..end]
                    .iter()
                    .map(|&s| (t - s + self.c).powf(-(self.eta + 1.0)))
                    .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesFit {
    pub model: HawkesModel,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub start_index: usize,
}

/// Multi-start maximum likelihood for `(μ, α, β)`.
pub fn fit_hawkes(times: &[f64], horizon: f64, config: &FitConfig) -> Result<HawkesFit> {
    if times.len() < 2 {
        return Err(Error::validation("Hawkes fit needs at least 2 events"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.last().is_some_and(|&t| t > horizon) {
        return Err(Error::validation("times must be sorted and within the horizon"));
    }
    let raw = multi_start(
        |t| {
            let v = HawkesModel { mu: t[0], alpha: t[1], beta: t[2] }.log_likelihood_unchecked(times, horizon);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::numeric(format!("log-likelihood is {v}")))
            }
        },
        3,
        config,
    )?;
    let t = &raw.theta;
    Ok(HawkesFit {
        model: HawkesModel { mu: t[0], alpha: t[1], beta: t[2] },
        log_likelihood: raw.log_likelihood,
        converged: raw.converged,
        iterations: raw.iterations,
        start_index: raw.start_index,
    })
}

pub const SEISMIC_C: f64 = 6.26e-4;
pub const SEISMIC_THETA: f64 = 0.242;
/// Length of the flat head of the kernel, in time units.
pub const SEISMIC_S0: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkSource {
    /// An event's mark is one plus the number of replies its thread has at
    /// that moment, the event itself included.
    #[default]
    ReplyCounts,
}

/// SEISMIC with kernel `φ(s) = c` on `[0, s0]` and `c (s/s0)^{-(1+θ)}` after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeismicModel {
    pub c_hyper: f64,
    pub theta: f64,
    pub s0: f64,
    pub mark_source: MarkSource,
}

impl Default for SeismicModel {
    fn default() -> Self {
        Self {
            c_hyper: SEISMIC_C,
            theta: SEISMIC_THETA,
            s0: SEISMIC_S0,
            mark_source: MarkSource::ReplyCounts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeismicPrediction {
    pub observed: usize,
    pub infectivity: f64,
    pub mean_mark: f64,
    /// Expected final number of replies; absent when the estimated process
    /// is supercritical.
    pub predicted: Option<f64>,
}

impl SeismicModel {
    pub fn validate(&self) -> Result<()> {
        if [self.c_hyper, self.theta, self.s0].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::validation(format!("SEISMIC hyperparameters must be positive, got {self:?}")))
        }
    }

    pub fn kernel(&self, s: f64) -> f64 {
        if s < 0.0 {
            0.0
        } else if s <= self.s0 {
            self.c_hyper
        } else {
            self.c_hyper * (s / self.s0).powf(-(1.0 + self.theta))
        }
    }

    /// `∫_0^s φ`.
    pub fn kernel_integral(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else if s <= self.s0 {
            self.c_hyper * s
        } else {
            self.c_hyper * self.s0 * (1.0 - (s / self.s0).powf(-self.theta)) / self.theta + self.c_hyper * self.s0
        }
    }

    /// `∫_0^∞ φ`.
    pub fn kernel_mass(&self) -> f64 {
        self.c_hyper * self.s0 * (1.0 + 1.0 / self.theta)
    }

    /// Final-size estimate for `cascade` from what was seen up to `t_observe`.
    pub fn predict(&self, cascade: &Cascade, t_observe: f64) -> Result<SeismicPrediction> {
        self.validate()?;
        if !(t_observe >= cascade.thread_time && t_observe.is_finite()) {
            return Err(Error::domain(format!(
                "observation time {t_observe} precedes the thread at {}",
                cascade.thread_time
            )));
        }
        let r = cascade.replies_up_to(t_observe);
        if r == 0 {
            return Ok(SeismicPrediction {
                observed: 0,
                infectivity: 0.0,
                mean_mark: 1.0,
                predicted: Some(0.0),
            });
        }
        // Event 0 is the thread itself, event j its j-th reply.
        let times = std::iter::once(cascade.thread_time).chain(cascade.reply_times[..r].iter().copied());
        let mut exposure = 0.0;
        let mut remaining = 0.0;
        let mass = self.kernel_mass();
        for (j, t) in times.enumerate() {
            let mark = (j + 1) as f64;
            let seen = self.kernel_integral(t_observe - t);
            exposure += mark * seen;
            remaining += mark * (mass - seen);
        }
        let infectivity = r as f64 / exposure;
        let mean_mark = (r as f64 + 2.0) / 2.0;
        let branching = infectivity * mean_mark * mass;
        let predicted = (branching < 1.0).then(|| r as f64 + infectivity * remaining / (1.0 - branching));
        Ok(SeismicPrediction {
            observed: r,
            infectivity,
            mean_mark,
            predicted,
        })
    }
}

/// SEISMIC prediction with the given hyperparameters.
pub fn seismic_predict(model: &SeismicModel, cascade: &Cascade, t_observe: f64) -> Result<SeismicPrediction> {
    model.predict(cascade, t_observe)
}
