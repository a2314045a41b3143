//! Forward simulation by thinning.
//!
//! The nested sampler alternates two steps until `N` new threads exist:
//! every reply stream is extended a window `T` past the current main-stream
//! time, then one candidate thread is thinned against `λ_main`. Each thread
//! keeps a frontier, the time its reply stream has been simulated through, so
//! silence already sampled is never resampled. Observed threads start with
//! their frontier at the observation horizon.
//!
//! Two bound policies are offered for the main stream. `Verbatim` takes the
//! bound at the current time and accepts the candidate against it, as in the
//! textbook adaptive scheme; new replies landing between the two points can
//! push `λ_main` over the bound, in which case the candidate is simply
//! accepted. `Safe` inflates the bound and never lets a step cross the next
//! reply or an unsimulated region. Between replies `λ_main` is non-increasing,
//! so the safe policy is exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{branching_factor_main, fresh_thread_branching};
use crate::error::{Error, Result};
use crate::event::{Cascade, EventSpace};
use crate::intensity::{ModelOptions, NestppParams, ReplyParams};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BoundMode {
    #[default]
    Verbatim,
    Safe { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// New main threads to generate.
    pub n_threads: usize,
    /// Reply window `T`.
    pub reply_window: f64,
    /// Most simulated replies per thread.
    pub reply_cap: usize,
    pub seed: u64,
    pub n_replications: usize,
    pub bound: BoundMode,
    /// Accepted-event cap that, together with a supercritical branching
    /// factor, aborts a run.
    pub max_events: usize,
    pub model: ModelOptions,
    /// Stop at this time even if fewer than `n_threads` threads exist; every
    /// stream is then simulated exactly through it.
    pub until: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_threads: 20,
            reply_window: 5.0,
            reply_cap: 1000,
            seed: 0,
            n_replications: 100,
            bound: BoundMode::Verbatim,
            max_events: 1_000_000,
            model: ModelOptions::default(),
            until: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reply_window > 0.0 && self.reply_window.is_finite()) {
            return Err(Error::validation(format!(
                "reply window must be positive, got {}",
                self.reply_window
            )));
        }
        if self.until.is_some_and(|u| !u.is_finite()) {
            return Err(Error::validation("time limit must be finite"));
        }
        if let BoundMode::Safe { factor } = self.bound {
            if !(factor >= 1.0 && factor.is_finite()) {
                return Err(Error::validation(format!("bound factor must be >= 1, got {factor}")));
            }
        }
        Ok(())
    }
}

/// Observed plus simulated history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub main_times: Vec<f64>,
    pub reply_times: Vec<Vec<f64>>,
    /// Number of leading threads that came from the observed history.
    pub n_observed: usize,
    /// Time offset of the conditioning space, for serialization.
    pub offset: f64,
}

impl SimulationOutput {
    /// Threads created by the sampler.
    pub fn new_main_times(&self) -> &[f64] {
        &self.main_times[self.n_observed..]
    }

    pub fn total_replies(&self) -> usize {
        self.reply_times.iter().map(Vec::len).sum()
    }

    /// The output as an event space whose horizon is its last event.
    pub fn to_space(&self) -> Result<EventSpace> {
        let cascades = self
            .main_times
            .iter()
            .zip(&self.reply_times)
            .map(|(&t, r)| Cascade::new(t, r.clone()))
            .collect::<Result<Vec<_>>>()?;
        let horizon = cascades
            .iter()
            .map(Cascade::last_event_time)
            .fold(0.0, f64::max);
        Ok(EventSpace::from_cascades(cascades, horizon)?.with_offset(self.offset))
    }

    /// Same JSON-lines layout as a serialized event space.
    pub fn write_jsonl<W: std::io::Write>(&self, w: W) -> Result<()> {
        self.to_space()?.write_jsonl(w)
    }
}

fn uniform_open(rng: &mut ChaCha8Rng) -> f64 {
    // (0, 1]
    1.0 - rng.random::<f64>()
}

/// Reply-stream state of one thread.
#[derive(Debug, Clone)]
struct Stream {
    t0: f64,
    replies: Vec<f64>,
    /// Simulated through this time.
    frontier: f64,
    /// `Σ_{r <= frontier} α e^{-β (frontier - r)}` (no thread-age factor).
    e_front: f64,
    simulated: usize,
    // Cursor used by main-intensity evaluation: replies strictly before the
    // last query time, and the excitation at the last of them.
    cur_idx: usize,
    cur_e: f64,
    cur_time: f64,
}

impl Stream {
    fn new(p: &ReplyParams, t0: f64, replies: Vec<f64>, frontier: f64) -> Self {
        let e_front = replies
            .iter()
            .filter(|&&r| r <= frontier)
            .map(|&r| p.alpha * (-p.beta * (frontier - r)).exp())
            .sum();
        Self {
            t0,
            replies,
            frontier,
            e_front,
            simulated: 0,
            cur_idx: 0,
            cur_e: 0.0,
            cur_time: t0,
        }
    }

    /// Thinning of the reply stream from its frontier up to `until`. The
    /// bound is the right limit of the intensity at the current time, which
    /// cannot be exceeded before the next reply.
    fn extend(&mut self, p: &ReplyParams, until: f64, cap: usize, rng: &mut ChaCha8Rng) -> usize {
        let mut t = self.frontier;
        let mut e = self.e_front;
        let mut accepted = 0;
        while t < until {
            if self.simulated >= cap {
                // Stream closed for good.
                t = f64::INFINITY;
                break;
            }
            let bound = p.mu_reply + (-p.delta * (t - self.t0)).exp() * e;
            let s = t - uniform_open(rng).ln() / bound;
            if s > until {
                e *= (-p.beta * (until - t)).exp();
                t = until;
                break;
            }
            e *= (-p.beta * (s - t)).exp();
            t = s;
            let lam = p.mu_reply + (-p.delta * (t - self.t0)).exp() * e;
            if rng.random::<f64>() * bound < lam {
                self.replies.push(t);
                self.simulated += 1;
                accepted += 1;
                e += p.alpha;
            }
        }
        self.frontier = t;
        self.e_front = e;
        accepted
    }

    /// Contribution to `λ_main(u)`. With `inclusive`, replies at exactly `u`
    /// count as past (right limit). Queries must not go back in time.
    fn main_term(&mut self, params: &NestppParams, opts: &ModelOptions, u: f64, inclusive: bool) -> f64 {
        let age = u - self.t0;
        if age < 0.0 || (age == 0.0 && !inclusive) {
            return 0.0;
        }
        let rp = &params.reply;
        while self.cur_idx < self.replies.len() && self.replies[self.cur_idx] < u {
            let r = self.replies[self.cur_idx];
            self.cur_e = self.cur_e * (-rp.beta * (r - self.cur_time)).exp() + rp.alpha;
            self.cur_time = r;
            self.cur_idx += 1;
        }
        let mut e = self.cur_e * (-rp.beta * (u - self.cur_time)).exp();
        let mut at = 0;
        while self.cur_idx + at < self.replies.len() && self.replies[self.cur_idx + at] == u {
            at += 1;
        }
        if inclusive {
            e += rp.alpha * at as f64;
        }
        let count = if opts.static_marks {
            self.replies.partition_point(|&r| r <= self.t0)
        } else {
            self.cur_idx + at
        };
        let lr = rp.mu_reply + (-rp.delta * age).exp() * e;
        lr * opts.mark_factor(count, params.main.gamma) * (age + params.main.c).powf(-(params.main.eta + 1.0))
    }

    fn next_reply_after(&self, u: f64) -> Option<f64> {
        let k = self.replies.partition_point(|&r| r <= u);
        self.replies.get(k).copied()
    }
}

/// Extends every reply stream, each from its last event (or its thread time)
/// over a window of length `reply_window`, accepting at most `reply_cap` new
/// replies per thread.
pub fn sample_reply_streams(
    params: &ReplyParams,
    main_times: &[f64],
    reply_times: &mut [Vec<f64>],
    config: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    params.validate()?;
    config.validate()?;
    if main_times.len() != reply_times.len() {
        return Err(Error::validation(format!(
            "{} threads but {} reply lists",
            main_times.len(),
            reply_times.len()
        )));
    }
    for (&t0, replies) in main_times.iter().zip(reply_times.iter_mut()) {
        let start = replies.last().copied().unwrap_or(t0).max(t0);
        let mut s = Stream::new(params, t0, std::mem::take(replies), start);
        s.extend(params, start + config.reply_window, config.reply_cap, rng);
        *replies = s.replies;
    }
    Ok(())
}

/// Extends one reply stream over `(from, to]`, where `from` is the time it
/// has been simulated or observed through. Returns the number of new replies.
pub fn extend_reply_stream(
    params: &ReplyParams,
    thread_time: f64,
    replies: &mut Vec<f64>,
    from: f64,
    to: f64,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    params.validate()?;
    if !(from >= thread_time && from.is_finite()) {
        return Err(Error::domain(format!("stream of thread at {thread_time} cannot resume at {from}")));
    }
    if replies.last().is_some_and(|&r| r > from) {
        return Err(Error::domain(format!("stream already has replies after {from}")));
    }
    let mut s = Stream::new(params, thread_time, std::mem::take(replies), from);
    let n = s.extend(params, to, cap, rng);
    *replies = s.replies;
    Ok(n)
}

/// RNG for replication `replication` of a run seeded with `seed`.
pub fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// One run of the nested sampler conditioned on `space`.
pub fn sample_main_threads(
    params: &NestppParams,
    space: &EventSpace,
    config: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SimulationOutput> {
    params.validate()?;
    config.validate()?;
    let opts = &config.model;
    let horizon = space.horizon();
    let mut streams: Vec<Stream> = space
        .cascades()
        .iter()
        .map(|c| Stream::new(&params.reply, c.thread_time, c.reply_times.clone(), horizon))
        .collect();
    let n_observed = streams.len();
    let n_star = if space.is_empty() {
        fresh_thread_branching(params, opts)
    } else {
        branching_factor_main(params, opts, space)?.n_star_main
    };
    let window = config.reply_window;
    let limit_time = config.until.unwrap_or(f64::INFINITY);
    let reach = |t: f64| (t + window).min(limit_time);
    let mut t = horizon;
    let mut new_threads = 0;
    let mut accepted_events = 0usize;

    let lambda = |streams: &mut [Stream], u: f64, inclusive: bool| -> f64 {
        params.main.mu_main
            + streams
                .iter_mut()
                .map(|s| s.main_term(params, opts, u, inclusive))
                .sum::<f64>()
    };

    while new_threads < config.n_threads && t < limit_time {
        for s in streams.iter_mut() {
            if s.frontier < reach(t) {
                accepted_events += s.extend(&params.reply, reach(t), config.reply_cap, rng);
            }
        }
        if n_star > 1.0 && accepted_events > config.max_events {
            return Err(Error::Supercritical {
                n_star,
                accepted: accepted_events,
            });
        }
        match config.bound {
            BoundMode::Verbatim => {
                let bound = lambda(&mut streams, t, true);
                t -= uniform_open(rng).ln() / bound;
                if t > limit_time {
                    break;
                }
                let lam = lambda(&mut streams, t, false);
                if rng.random::<f64>() * bound < lam {
                    streams.push(Stream::new(&params.reply, t, Vec::new(), t));
                    new_threads += 1;
                    accepted_events += 1;
                }
            }
            BoundMode::Safe { factor } => {
                let bound = factor * lambda(&mut streams, t, true);
                let limit = streams
                    .iter()
                    .map(|s| s.next_reply_after(t).unwrap_or(s.frontier).min(s.frontier))
                    .fold(f64::INFINITY, f64::min);
                let s = t - uniform_open(rng).ln() / bound;
                if s > limit_time && limit >= limit_time {
                    break;
                }
                if s >= limit {
                    // Bound expires at the next reply; restart from there.
                    t = limit;
                    continue;
                }
                t = s;
                let lam = lambda(&mut streams, t, false);
                if lam > bound {
                    log::warn!("main intensity {lam} exceeded the safe bound {bound} at t = {t}");
                }
                if rng.random::<f64>() * bound < lam {
                    streams.push(Stream::new(&params.reply, t, Vec::new(), t));
                    new_threads += 1;
                    accepted_events += 1;
                }
            }
        }
    }
    // Leave every stream simulated through the last thread plus the window,
    // or exactly through the time limit.
    let end = config.until.unwrap_or(t + window);
    for s in streams.iter_mut() {
        if s.frontier < end {
            s.extend(&params.reply, end, config.reply_cap, rng);
        }
    }
    Ok(SimulationOutput {
        main_times: streams.iter().map(|s| s.t0).collect(),
        reply_times: streams.into_iter().map(|s| s.replies).collect(),
        n_observed,
        offset: space.offset(),
    })
}

/// `config.n_replications` independent runs, replication `r` drawing from
/// stream `r` of the seed.
pub fn simulate_replications(
    params: &NestppParams,
    space: &EventSpace,
    config: &SimConfig,
) -> Result<Vec<SimulationOutput>> {
    (0..config.n_replications)
        .into_par_iter()
        .map(|r| sample_main_threads(params, space, config, &mut replication_rng(config.seed, r as u64)))
        .collect()
}

/// Per-index mean of the first `k` new thread times across runs.
pub fn mean_new_times(runs: &[SimulationOutput], k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| {
            let v: Vec<f64> = runs.iter().filter_map(|r| r.new_main_times().get(i).copied()).collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        })
        .collect()
}

/// A univariate intensity with a local upper bound, for generic thinning.
pub trait ThinningModel {
    /// Intensity at `t` given `history`, all of whose events are `<= t` and
    /// count as past.
    fn intensity(&self, t: f64, history: &[f64]) -> f64;

    /// An upper bound on the intensity from `t` up to the returned time,
    /// with no new events. Defaults to the intensity at `t`, valid forever,
    /// which suits kernels that only decay between events.
    fn bound(&self, t: f64, history: &[f64]) -> (f64, f64) {
        (self.intensity(t, history), f64::INFINITY)
    }
}

/// Thinning over `[t_start, t_end]`, stopping early after `max_events`.
/// `history` holds earlier events and is extended in place; the newly
/// accepted times are returned.
pub fn thin<M: ThinningModel + ?Sized>(
    model: &M,
    history: &mut Vec<f64>,
    t_start: f64,
    t_end: f64,
    max_events: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let first_new = history.len();
    let mut t = t_start;
    while t < t_end && history.len() - first_new < max_events {
        let (bound, valid_until) = model.bound(t, history);
        if !(bound > 0.0) {
            if valid_until.is_finite() {
                t = valid_until;
                continue;
            }
            break;
        }
        let s = t - uniform_open(rng).ln() / bound;
        if s >= valid_until {
            t = valid_until;
            continue;
        }
        if s > t_end {
            break;
        }
        t = s;
        if rng.random::<f64>() * bound < model.intensity(t, history) {
            history.push(t);
        }
    }
    history[first_new..].to_vec()
}

struct FnModel<F>(F);

impl<F: Fn(f64, &[f64]) -> f64> ThinningModel for FnModel<F> {
    fn intensity(&self, t: f64, history: &[f64]) -> f64 {
        (self.0)(t, history)
    }
}

/// Standard thinning of a rate function on `[t_start, t_end]`, using the
/// rate at the current time as the bound.
pub fn sample_standard_thinning<F>(intensity: F, t_start: f64, t_end: f64, seed: u64) -> Vec<f64>
where
    F: Fn(f64, &[f64]) -> f64,
{
    let mut rng = replication_rng(seed, 0);
    thin(&FnModel(intensity), &mut Vec::new(), t_start, t_end, usize::MAX, &mut rng)
}
