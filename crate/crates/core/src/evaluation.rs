//! Prediction metrics and the grouped experiment harness.
//!
//! An experiment picks groups of consecutive threads from a dataset. Each
//! group's last thread is its anchor: every model is conditioned on the
//! group's threads as seen at the anchor time, sampled `n_replications`
//! times, and the averaged prediction is scored against what followed.
//! Replication `r` of group `g` uses the same random stream for every model.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_hawkes, fit_poisson, HawkesModel, PoissonModel, DEFAULT_POISSON_BINS};
use crate::error::{Error, Result};
use crate::estimation::{fit, fit_decoupled_main, fit_decoupled_reply, FitConfig};
use crate::event::EventSpace;
use crate::intensity::{DecoupledMainParams, ModelOptions, NestppParams, ReplyParams};
use crate::simulation::{
    extend_reply_stream, replication_rng, sample_main_threads, thin, BoundMode, SimConfig, SimulationOutput,
    ThinningModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Positional error on the next `k` thread arrival times.
    #[default]
    MaeTime,
    /// Error on the number of replies that threads created inside the
    /// prediction window receive within it.
    MaeSize,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae_time" => Ok(Metric::MaeTime),
            "mae_size" => Ok(Metric::MaeSize),
            other => Err(Error::validation(format!("unknown metric `{other}`"))),
        }
    }
}

/// Mean absolute difference between the first `k` entries of both lists,
/// each sorted chronologically first.
pub fn mae_time(truth: &[f64], predicted: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::validation("k must be positive"));
    }
    if truth.len() < k || predicted.len() < k {
        return Err(Error::validation(format!(
            "need {k} times, got {} true and {} predicted",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.iter().chain(predicted).any(|t| !t.is_finite()) {
        return Err(Error::validation("times must be finite"));
    }
    let mut a = truth.to_vec();
    let mut b = predicted.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).take(k).map(|(x, y)| (x - y).abs()).sum::<f64>() / k as f64)
}

pub fn mae_size(truth_count: f64, predicted_count: f64) -> f64 {
    (truth_count - predicted_count).abs()
}

/// A fitted model in serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FittedModel {
    Nestpp {
        params: NestppParams,
        #[serde(default)]
        options: ModelOptions,
    },
    /// Power-law main stream and exponential reply streams, fitted apart.
    Decoupled { main: DecoupledMainParams, reply: ReplyParams },
    Hawkes {
        main: HawkesModel,
        /// Shared by every reply stream; needed only for size prediction.
        #[serde(default)]
        reply: Option<HawkesModel>,
    },
    Poisson {
        main: PoissonModel,
        /// Constant per-thread reply rate; needed only for size prediction.
        #[serde(default)]
        reply_rate: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Nestpp,
    Decoupled,
    Hawkes,
    Poisson,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nestpp" => Ok(ModelKind::Nestpp),
            "decoupled" => Ok(ModelKind::Decoupled),
            "hawkes" => Ok(ModelKind::Hawkes),
            "poisson" => Ok(ModelKind::Poisson),
            other => Err(Error::validation(format!("unknown model `{other}`"))),
        }
    }
}

/// Fitted model plus the fitting diagnostics, as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub fitted: FittedModel,
    pub diagnostics: serde_json::Value,
}

/// Fits `kind` to the whole of `space`.
pub fn fit_model(kind: ModelKind, space: &EventSpace, config: &FitConfig) -> Result<ModelFit> {
    let threads = space.thread_times();
    let horizon = space.horizon();
    Ok(match kind {
        ModelKind::Nestpp => {
            let f = fit(space, config)?;
            ModelFit {
                fitted: FittedModel::Nestpp {
                    params: f.params,
                    options: config.likelihood.model,
                },
                diagnostics: serde_json::to_value(&f)?,
            }
        }
        ModelKind::Decoupled => {
            let m = fit_decoupled_main(&threads, horizon, config)?;
            let r = fit_decoupled_reply(space, config)?;
            ModelFit {
                fitted: FittedModel::Decoupled {
                    main: m.params,
                    reply: r.params,
                },
                diagnostics: serde_json::json!({ "main": m, "reply": r }),
            }
        }
        ModelKind::Hawkes => {
            let m = fit_hawkes(&threads, horizon, config)?;
            let r = if space.total_replies() > 0 {
                Some(fit_decoupled_reply(space, config)?)
            } else {
                None
            };
            ModelFit {
                fitted: FittedModel::Hawkes {
                    main: m.model,
                    reply: r.as_ref().map(|r| HawkesModel {
                        mu: r.params.mu_reply,
                        alpha: r.params.alpha,
                        beta: r.params.beta,
                    }),
                },
                diagnostics: serde_json::json!({ "main": m, "reply": r }),
            }
        }
        ModelKind::Poisson => {
            let main = fit_poisson(&threads, DEFAULT_POISSON_BINS, (0.0, horizon))?;
            let exposure: f64 = threads.iter().map(|&t| horizon - t).sum();
            let reply_rate = (exposure > 0.0).then(|| space.total_replies() as f64 / exposure);
            ModelFit {
                fitted: FittedModel::Poisson { main, reply_rate },
                diagnostics: serde_json::json!({ "n_bins": DEFAULT_POISSON_BINS, "exposure": exposure }),
            }
        }
    })
}

/// Anything that can sample a continuation of an observed history.
pub trait Forecaster: Sync {
    fn label(&self) -> String;

    /// One continuation of `history` past its horizon. Stops after
    /// `config.n_threads` new threads or at `config.until`. Reply streams
    /// are required only when `config.until` is set, and must then be
    /// simulated through it.
    fn sample(&self, history: &EventSpace, config: &SimConfig, rng: &mut ChaCha8Rng) -> Result<SimulationOutput>;
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedModel::Nestpp { .. } => ModelKind::Nestpp,
            FittedModel::Decoupled { .. } => ModelKind::Decoupled,
            FittedModel::Hawkes { .. } => ModelKind::Hawkes,
            FittedModel::Poisson { .. } => ModelKind::Poisson,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FittedModel::Nestpp { params, .. } => params.validate(),
            FittedModel::Decoupled { main, reply } => {
                main.validate()?;
                reply.validate()
            }
            FittedModel::Hawkes { main, reply } => {
                main.validate()?;
                reply.as_ref().map_or(Ok(()), HawkesModel::validate)
            }
            FittedModel::Poisson { main, reply_rate } => {
                main.validate()?;
                match reply_rate {
                    Some(r) if !(r.is_finite() && *r > 0.0) => {
                        Err(Error::validation(format!("reply rate must be positive, got {r}")))
                    }
                    _ => Ok(()),
                }
            }
        }
    }

    fn reply_params(&self) -> Option<ReplyParams> {
        match self {
            FittedModel::Nestpp { params, .. } => Some(params.reply),
            FittedModel::Decoupled { reply, .. } => Some(ReplyParams { delta: 0.0, ..*reply }),
            FittedModel::Hawkes { reply, .. } => reply.map(|h| ReplyParams::new(h.mu, h.alpha, h.beta, 0.0)),
            FittedModel::Poisson { reply_rate, .. } => reply_rate.map(|r| ReplyParams::new(r, 0.0, 1.0, 0.0)),
        }
    }

    /// Thread times by generic thinning, then (with a time limit) every reply
    /// stream filled in independently.
    fn sample_unnested<M: ThinningModel + ?Sized>(
        &self,
        main: &M,
        history: &EventSpace,
        config: &SimConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<SimulationOutput> {
        let h = history.horizon();
        let mut times = history.thread_times();
        let end = config.until.unwrap_or(f64::INFINITY);
        thin(main, &mut times, h, end, config.n_threads, rng);
        let mut replies: Vec<Vec<f64>> = history.cascades().iter().map(|c| c.reply_times.clone()).collect();
        replies.resize(times.len(), Vec::new());
        if let Some(until) = config.until {
            let rp = self.reply_params().ok_or_else(|| {
                Error::validation(format!("{} model has no reply component", self.label()))
            })?;
            for (&t0, r) in times.iter().zip(replies.iter_mut()) {
                extend_reply_stream(&rp, t0, r, t0.max(h), until, config.reply_cap, rng)?;
            }
        }
        Ok(SimulationOutput {
            main_times: times,
            reply_times: replies,
            n_observed: history.len(),
            offset: history.offset(),
        })
    }
}

impl Forecaster for FittedModel {
    fn label(&self) -> String {
        match self.kind() {
            ModelKind::Nestpp => "nestpp",
            ModelKind::Decoupled => "decoupled",
            ModelKind::Hawkes => "hawkes",
            ModelKind::Poisson => "poisson",
        }
        .to_string()
    }

    fn sample(&self, history: &EventSpace, config: &SimConfig, rng: &mut ChaCha8Rng) -> Result<SimulationOutput> {
        match self {
            FittedModel::Nestpp { params, options } => {
                let cfg = SimConfig {
                    model: *options,
                    ..config.clone()
                };
                sample_main_threads(params, history, &cfg, rng)
            }
            FittedModel::Decoupled { main, .. } => self.sample_unnested(main, history, config, rng),
            FittedModel::Hawkes { main, .. } => self.sample_unnested(main, history, config, rng),
            FittedModel::Poisson { main, .. } => self.sample_unnested(main, history, config, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentProtocol {
    pub n_groups: usize,
    /// Threads each model is conditioned on.
    pub history: usize,
    /// Threads to predict (`mae_time`).
    pub horizon_threads: usize,
    /// Prediction window length (`mae_size`).
    pub window: f64,
    pub n_replications: usize,
    pub metric: Metric,
    pub seed: u64,
    /// Reply window `T`; defaults to 5 for `mae_time` and 100 for `mae_size`.
    pub reply_window: Option<f64>,
    pub reply_cap: usize,
    pub bound: BoundMode,
}

impl Default for ExperimentProtocol {
    fn default() -> Self {
        Self {
            n_groups: 10,
            history: 100,
            horizon_threads: 20,
            window: 100.0,
            n_replications: 100,
            metric: Metric::MaeTime,
            seed: 0,
            reply_window: None,
            reply_cap: 1000,
            bound: BoundMode::default(),
        }
    }
}

impl ExperimentProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.n_groups == 0 || self.history == 0 || self.n_replications == 0 {
            return Err(Error::validation("groups, history and replications must be positive"));
        }
        match self.metric {
            Metric::MaeTime if self.horizon_threads == 0 => {
                Err(Error::validation("horizon must be at least one thread"))
            }
            Metric::MaeSize if !(self.window > 0.0 && self.window.is_finite()) => {
                Err(Error::validation(format!("window must be positive, got {}", self.window)))
            }
            _ => Ok(()),
        }
    }

    pub fn effective_reply_window(&self) -> f64 {
        self.reply_window.unwrap_or(match self.metric {
            Metric::MaeTime => 5.0,
            Metric::MaeSize => 100.0,
        })
    }

    fn sim_config(&self, anchor_time: f64) -> SimConfig {
        let (n_threads, until) = match self.metric {
            Metric::MaeTime => (self.horizon_threads, None),
            Metric::MaeSize => (usize::MAX, Some(anchor_time + self.window)),
        };
        SimConfig {
            n_threads,
            until,
            reply_window: self.effective_reply_window(),
            reply_cap: self.reply_cap,
            n_replications: self.n_replications,
            bound: self.bound,
            seed: self.seed,
            ..SimConfig::default()
        }
    }
}

/// One group of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    /// Index of the last history thread.
    pub anchor: usize,
    pub anchor_time: f64,
}

impl Group {
    pub fn history_range(&self, history: usize) -> std::ops::Range<usize> {
        self.anchor + 1 - history..self.anchor + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub metric: Metric,
    /// Mean over scored groups.
    pub mean: f64,
    /// Sample standard deviation over scored groups (0 for fewer than two).
    pub std: f64,
    pub n_groups: usize,
    pub per_group: Vec<f64>,
    /// Anchors of the scored groups, aligned with `per_group`.
    pub anchors: Vec<usize>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    fn from_scores(model: String, metric: Metric, scored: Vec<(usize, f64)>, warnings: Vec<String>) -> Self {
        let n = scored.len();
        let per_group: Vec<f64> = scored.iter().map(|s| s.1).collect();
        let mean = if n > 0 { per_group.iter().sum::<f64>() / n as f64 } else { f64::NAN };
        let std = if n > 1 {
            (per_group.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            model,
            metric,
            mean,
            std,
            n_groups: n,
            per_group,
            anchors: scored.iter().map(|s| s.0).collect(),
            warnings,
        }
    }
}

/// Non-overlapping groups, drawn in random order and kept when their
/// prediction span clears every group already kept. Returns the groups in
/// anchor order and a warning for each one that could not be placed.
pub fn select_groups(space: &EventSpace, protocol: &ExperimentProtocol) -> Result<(Vec<Group>, Vec<String>)> {
    protocol.validate()?;
    let m = space.len();
    let times = space.thread_times();
    // Prediction span of an anchor, in thread indices or in time.
    let span = |a: usize| -> Option<(f64, f64)> {
        match protocol.metric {
            Metric::MaeTime => {
                (a + protocol.horizon_threads < m).then(|| ((a + 1) as f64, (a + protocol.horizon_threads) as f64))
            }
            Metric::MaeSize => {
                let end = times[a] + protocol.window;
                (end <= space.horizon()).then(|| (times[a], end))
            }
        }
    };
    let mut candidates: Vec<usize> = (protocol.history.saturating_sub(1)..m).filter(|&a| span(a).is_some()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    candidates.shuffle(&mut rng);
    let mut kept: Vec<(usize, (f64, f64))> = Vec::new();
    for a in candidates {
        if kept.len() == protocol.n_groups {
            break;
        }
        let (lo, hi) = span(a).expect("filtered");
        let clash = kept.iter().any(|&(_, (l, h))| match protocol.metric {
            Metric::MaeTime => lo <= h && l <= hi,
            Metric::MaeSize => lo < h && l < hi,
        });
        if !clash {
            kept.push((a, (lo, hi)));
        }
    }
    kept.sort_by_key(|k| k.0);
    let warnings = (kept.len()..protocol.n_groups)
        .map(|g| format!("group {g} skipped: not enough data for {} history threads and a free prediction span", protocol.history))
        .collect();
    let groups = kept
        .into_iter()
        .map(|(a, _)| Group {
            anchor: a,
            anchor_time: times[a],
        })
        .collect();
    Ok((groups, warnings))
}

/// What actually followed the anchor of `group`.
fn group_truth(space: &EventSpace, group: &Group, protocol: &ExperimentProtocol) -> Truth {
    match protocol.metric {
        Metric::MaeTime => Truth::Times(
            space.cascades()[group.anchor + 1..=group.anchor + protocol.horizon_threads]
                .iter()
                .map(|c| c.thread_time)
                .collect(),
        ),
        Metric::MaeSize => {
            let end = group.anchor_time + protocol.window;
            Truth::Count(
                space.cascades()[group.anchor + 1..]
                    .iter()
                    .take_while(|c| c.thread_time <= end)
                    .map(|c| c.replies_up_to(end))
                    .sum::<usize>() as f64,
            )
        }
    }
}

enum Truth {
    Times(Vec<f64>),
    Count(f64),
}

fn group_seed(seed: u64, group: usize) -> u64 {
    seed ^ (group as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn score_group(
    space: &EventSpace,
    model: &dyn Forecaster,
    group: &Group,
    g: usize,
    protocol: &ExperimentProtocol,
) -> Result<f64> {
    let history = space.window(group.history_range(protocol.history), group.anchor_time)?;
    let config = protocol.sim_config(group.anchor_time);
    let seed = group_seed(protocol.seed, g);
    let runs: Vec<SimulationOutput> = (0..protocol.n_replications)
        .into_par_iter()
        .map(|r| model.sample(&history, &config, &mut replication_rng(seed, r as u64)))
        .collect::<Result<_>>()?;
    match group_truth(space, group, protocol) {
        Truth::Times(truth) => {
            let k = protocol.horizon_threads;
            let mut sums = vec![0.0; k];
            for run in &runs {
                let new = run.new_main_times();
                if new.len() < k {
                    return Err(Error::numeric(format!(
                        "{} produced {} of {k} threads",
                        model.label(),
                        new.len()
                    )));
                }
                sums.iter_mut().zip(new).for_each(|(s, t)| *s += t);
            }
            let mean: Vec<f64> = sums.iter().map(|s| s / runs.len() as f64).collect();
            mae_time(&truth, &mean, k)
        }
        Truth::Count(truth) => {
            let end = group.anchor_time + protocol.window;
            let total: f64 = runs
                .iter()
                .map(|run| {
                    run.new_main_times()
                        .iter()
                        .zip(&run.reply_times[run.n_observed..])
                        .filter(|(&t, _)| t <= end)
                        .map(|(_, r)| r.partition_point(|&x| x <= end))
                        .sum::<usize>() as f64
                })
                .sum();
            Ok(mae_size(truth, total / runs.len() as f64))
        }
    }
}

/// Scores every model on the same groups. A group that fails for a model
/// is left out of that model's report with a warning.
pub fn run_experiment(
    space: &EventSpace,
    models: &[&dyn Forecaster],
    protocol: &ExperimentProtocol,
) -> Result<Vec<EvalReport>> {
    let (groups, skipped) = select_groups(space, protocol)?;
    for w in &skipped {
        log::warn!("{w}");
    }
    let mut reports = Vec::with_capacity(models.len());
    for model in models {
        let mut scored = Vec::with_capacity(groups.len());
        let mut warnings = skipped.clone();
        for (g, group) in groups.iter().enumerate() {
            match score_group(space, *model, group, g, protocol) {
                Ok(v) => scored.push((group.anchor, v)),
                Err(e) => {
                    let w = format!("group at thread {} skipped for {}: {e}", group.anchor, model.label());
                    log::warn!("{w}");
                    warnings.push(w);
                }
            }
        }
        reports.push(EvalReport::from_scores(model.label(), protocol.metric, scored, warnings));
    }
    Ok(reports)
}

/// Plain-text table, one row per model.
pub fn format_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>12}  {:>12}  {:>6}", "model", "metric", "mean", "std", "groups");
    for r in reports {
        let metric = match r.metric {
            Metric::MaeTime => "mae_time",
            Metric::MaeSize => "mae_size",
        };
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>12.4}  {:>12.4}  {:>6}",
            r.model, metric, r.mean, r.std, r.n_groups
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Cascade;
    use crate::intensity::MainParams;

    #[test]
    fn mae_time_examples() {
        assert_eq!(mae_time(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 3).unwrap(), 0.0);
        assert_eq!(mae_time(&[0.0, 2.0], &[1.0, 3.0], 2).unwrap(), 1.0);
        let v = mae_time(&[0.0, 1.0, 4.0], &[0.5, 2.0, 3.0], 3).unwrap();
        assert!((v - 2.5 / 3.0).abs() < 1e-15);
        // Sorted before matching.
        assert_eq!(mae_time(&[2.0, 0.0], &[3.0, 1.0], 2).unwrap(), 1.0);
        assert!(mae_time(&[1.0], &[1.0, 2.0], 2).is_err());
        assert!(mae_time(&[1.0], &[1.0], 0).is_err());
    }

    #[test]
    fn mae_size_examples() {
        assert_eq!(mae_size(10.0, 10.0), 0.0);
        assert_eq!(mae_size(10.0, 7.5), 2.5);
        assert_eq!(mae_size(3.0, 8.0), mae_size(8.0, 3.0));
    }

    /// Synthetic dataset: thread `i` at `i` with `i % 4` replies.
    fn dataset(m: usize) -> EventSpace {
        let cascades = (0..m)
            .map(|i| {
                let t = i as f64;
                Cascade::new(t, (0..i % 4).map(|j| t + 0.1 + 0.2 * j as f64).collect()).unwrap()
            })
            .collect();
        EventSpace::from_cascades(cascades, m as f64).unwrap()
    }

    /// Replays the dataset it was built from.
    struct Oracle(EventSpace);

    impl Forecaster for Oracle {
        fn label(&self) -> String {
            "oracle".into()
        }

        fn sample(&self, history: &EventSpace, config: &SimConfig, _rng: &mut ChaCha8Rng) -> Result<SimulationOutput> {
            let h = history.horizon();
            let end = config.until.unwrap_or(f64::INFINITY);
            let first = self.0.cascades().partition_point(|c| c.thread_time <= h);
            let future: Vec<&Cascade> = self.0.cascades()[first..]
                .iter()
                .take_while(|c| c.thread_time <= end)
                .take(config.n_threads)
                .collect();
            let mut main_times = history.thread_times();
            let mut reply_times: Vec<Vec<f64>> = history.cascades().iter().map(|c| c.reply_times.clone()).collect();
            for c in future {
                main_times.push(c.thread_time);
                reply_times.push(c.reply_times.iter().copied().filter(|&r| r <= end).collect());
            }
            Ok(SimulationOutput {
                main_times,
                reply_times,
                n_observed: history.len(),
                offset: 0.0,
            })
        }
    }

    fn protocol(metric: Metric) -> ExperimentProtocol {
        ExperimentProtocol {
            n_groups: 5,
            history: 10,
            horizon_threads: 4,
            window: 6.5,
            n_replications: 3,
            metric,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn oracle_scores_zero() {
        let space = dataset(80);
        let oracle = Oracle(space.clone());
        for metric in [Metric::MaeTime, Metric::MaeSize] {
            let r = run_experiment(&space, &[&oracle], &protocol(metric)).unwrap();
            assert_eq!(r[0].n_groups, 5, "{:?}", r[0].warnings);
            assert!(r[0].per_group.iter().all(|&v| v == 0.0), "{:?}", r[0]);
            assert_eq!(r[0].mean, 0.0);
        }
    }

    #[test]
    fn groups_do_not_overlap() {
        let space = dataset(80);
        for metric in [Metric::MaeTime, Metric::MaeSize] {
            let p = protocol(metric);
            let (groups, warnings) = select_groups(&space, &p).unwrap();
            assert_eq!(groups.len(), 5);
            assert!(warnings.is_empty());
            for w in groups.windows(2) {
                let gap = w[1].anchor - w[0].anchor;
                match metric {
                    Metric::MaeTime => assert!(gap >= p.horizon_threads),
                    Metric::MaeSize => assert!(w[1].anchor_time - w[0].anchor_time >= p.window),
                }
            }
            assert!(groups.iter().all(|g| g.anchor + 1 >= p.history));
        }
        // Too little data: groups are skipped with warnings.
        let small = dataset(14);
        let (groups, warnings) = select_groups(&small, &protocol(Metric::MaeTime)).unwrap();
        assert_eq!(groups.len() + warnings.len(), 5);
        assert!(groups.len() < 5);
    }

    fn nestpp() -> FittedModel {
        FittedModel::Nestpp {
            params: NestppParams::new(MainParams::new(0.5, 0.4, 0.5, 1.5), ReplyParams::new(0.3, 0.5, 2.0, 0.2)),
            options: ModelOptions::default(),
        }
    }

    #[test]
    fn identical_models_identical_reports() {
        let space = dataset(60);
        let a = nestpp();
        let b = nestpp();
        let p = protocol(Metric::MaeTime);
        let r = run_experiment(&space, &[&a, &b], &p).unwrap();
        assert_eq!(r[0], r[1]);
        assert_eq!(run_experiment(&space, &[&a], &p).unwrap()[0], r[0]);
        assert!(r[0].mean > 0.0);
    }

    #[test]
    fn every_model_kind_runs_both_metrics() {
        let space = dataset(60);
        let config = FitConfig {
            n_starts: 2,
            max_iterations: 50,
            ..Default::default()
        };
        let mut models = vec![nestpp()];
        for kind in [ModelKind::Decoupled, ModelKind::Hawkes, ModelKind::Poisson] {
            models.push(fit_model(kind, &space, &config).unwrap().fitted);
        }
        let refs: Vec<&dyn Forecaster> = models.iter().map(|m| m as &dyn Forecaster).collect();
        for metric in [Metric::MaeTime, Metric::MaeSize] {
            let reports = run_experiment(&space, &refs, &protocol(metric)).unwrap();
            for r in &reports {
                assert_eq!(r.n_groups, 5, "{} {:?}", r.model, r.warnings);
                assert!(r.mean.is_finite() && r.mean >= 0.0);
            }
            let table = format_table(&reports);
            assert_eq!(table.lines().count(), 5);
        }
    }

    #[test]
    fn missing_reply_component_skips_size_groups() {
        let space = dataset(60);
        let m = FittedModel::Poisson {
            main: fit_poisson(&space.thread_times(), 3, (0.0, 60.0)).unwrap(),
            reply_rate: None,
        };
        let r = run_experiment(&space, &[&m], &protocol(Metric::MaeSize)).unwrap();
        assert_eq!(r[0].n_groups, 0);
        assert_eq!(r[0].warnings.len(), 5);
        assert!(r[0].warnings[0].contains("no reply component"));
    }

    #[test]
    fn fitted_model_json_is_tagged() {
        let m = nestpp();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.starts_with(r#"{"model":"nestpp""#));
        assert_eq!(serde_json::from_str::<FittedModel>(&s).unwrap(), m);
        let h: FittedModel =
            serde_json::from_str(r#"{"model":"hawkes","main":{"mu":1.0,"alpha":0.5,"beta":2.0}}"#).unwrap();
        assert_eq!(h.kind(), ModelKind::Hawkes);
        assert!(h.validate().is_ok());
    }
}
