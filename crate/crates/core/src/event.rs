//! Thread/reply event space.
//!
//! Raw events carry an id, an optional parent id and a timestamp. Events
//! without a parent are main threads; every other event is a reply attached
//! directly to its thread. [`build_event_space`] validates the raw list,
//! shifts times so the earliest event sits at zero and breaks exact ties.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default perturbation applied to exactly coincident timestamps.
pub const DEFAULT_TIE_EPSILON: f64 = 1e-6;

/// One raw forum event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedEvent {
    pub id: String,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(rename = "ts")]
    pub time: f64,
}

impl MarkedEvent {
    pub fn thread(id: impl Into<String>, time: f64) -> Self {
        Self {
            id: id.into(),
            parent: None,
            time,
        }
    }

    pub fn reply(id: impl Into<String>, parent: impl Into<String>, time: f64) -> Self {
        Self {
            id: id.into(),
            parent: Some(parent.into()),
            time,
        }
    }

    pub fn is_thread(&self) -> bool {
        self.parent.is_none()
    }
}

/// A main thread and its replies, in normalized time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    pub thread_id: String,
    pub thread_time: f64,
    pub reply_ids: Vec<String>,
    /// Strictly ascending, all `>= thread_time`.
    pub reply_times: Vec<f64>,
}

impl Cascade {
    /// Builds a cascade with generated ids. Reply times must already be
    /// strictly ascending and not earlier than the thread.
    pub fn new(thread_time: f64, reply_times: Vec<f64>) -> Result<Self> {
        let id = format!("t{}", thread_time);
        let reply_ids = (0..reply_times.len()).map(|j| format!("{id}-r{j}")).collect();
        let cascade = Self {
            thread_id: id,
            thread_time,
            reply_ids,
            reply_times,
        };
        cascade.validate()?;
        Ok(cascade)
    }

    pub fn n_replies(&self) -> usize {
        self.reply_times.len()
    }

    /// Replies with time `<= t`.
    pub fn replies_up_to(&self, t: f64) -> usize {
        self.reply_times.partition_point(|&r| r <= t)
    }

    /// Replies with time `< t`.
    pub fn replies_before(&self, t: f64) -> usize {
        self.reply_times.partition_point(|&r| r < t)
    }

    pub fn last_event_time(&self) -> f64 {
        self.reply_times.last().copied().unwrap_or(self.thread_time)
    }

    fn validate(&self) -> Result<()> {
        if !self.thread_time.is_finite() || self.thread_time < 0.0 {
            return Err(Error::validation(format!(
                "thread {} has invalid time {}",
                self.thread_id, self.thread_time
            )));
        }
        if self.reply_ids.len() != self.reply_times.len() {
            return Err(Error::validation(format!(
                "thread {}: {} reply ids for {} reply times",
                self.thread_id,
                self.reply_ids.len(),
                self.reply_times.len()
            )));
        }
        let mut prev = self.thread_time;
        for (j, &r) in self.reply_times.iter().enumerate() {
            let ordered = if j == 0 { r >= prev } else { r > prev };
            if !r.is_finite() || !ordered {
                return Err(Error::validation(format!(
                    "thread {}: reply {} at {} breaks ordering",
                    self.thread_id, self.reply_ids[j], r
                )));
            }
            prev = r;
        }
        Ok(())
    }
}

/// Ordered collection of cascades observed on `[0, horizon]`.
///
/// Immutable once built. `offset` is the raw timestamp that maps to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpace {
    cascades: Vec<Cascade>,
    horizon: f64,
    offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    /// Shift raw times so the earliest event is at zero.
    pub normalize: bool,
    /// Added to the later of two coincident timestamps.
    pub tie_epsilon: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            normalize: true,
            tie_epsilon: DEFAULT_TIE_EPSILON,
        }
    }
}

/// Builds a validated event space with default options.
///
/// `horizon` is in the same (raw) units as the event times and defaults to
/// the latest event.
pub fn build_event_space(events: &[MarkedEvent], horizon: Option<f64>) -> Result<EventSpace> {
    build_event_space_with(events, horizon, BuildOptions::default())
}

pub fn build_event_space_with(
    events: &[MarkedEvent],
    horizon: Option<f64>,
    options: BuildOptions,
) -> Result<EventSpace> {
    if !(options.tie_epsilon > 0.0 && options.tie_epsilon.is_finite()) {
        return Err(Error::validation("tie epsilon must be positive"));
    }
    for ev in events {
        if !ev.time.is_finite() {
            return Err(Error::validation(format!(
                "event {} has non-finite timestamp {}",
                ev.id, ev.time
            )));
        }
    }
    if let Some(h) = horizon {
        if !h.is_finite() {
            return Err(Error::validation("horizon must be finite"));
        }
    }

    let mut thread_index: HashMap<&str, usize> = HashMap::new();
    let mut threads: Vec<(usize, &MarkedEvent)> = Vec::new();
    for (pos, ev) in events.iter().enumerate() {
        if ev.is_thread() {
            if thread_index.insert(ev.id.as_str(), threads.len()).is_some() {
                return Err(Error::validation(format!("duplicate thread id {}", ev.id)));
            }
            threads.push((pos, ev));
        }
    }

    let mut replies: Vec<Vec<(usize, &MarkedEvent)>> = vec![Vec::new(); threads.len()];
    for (pos, ev) in events.iter().enumerate() {
        if let Some(parent) = &ev.parent {
            match thread_index.get(parent.as_str()) {
                Some(&k) => replies[k].push((pos, ev)),
                None => {
                    return Err(Error::validation(format!(
                        "event {} references unknown thread {}",
                        ev.id, parent
                    )))
                }
            }
        }
    }

    let offset = if options.normalize {
        events.iter().map(|e| e.time).fold(f64::INFINITY, f64::min)
    } else {
        0.0
    };
    let offset = if offset.is_finite() { offset } else { 0.0 };
    let raw_last = events.iter().map(|e| e.time).fold(f64::NEG_INFINITY, f64::max);
    if let Some(h) = horizon {
        if h < raw_last {
            return Err(Error::validation(format!(
                "horizon {h} precedes the last event at {raw_last}"
            )));
        }
    }

    // Sort threads by time, input order on ties.
    let mut order: Vec<usize> = (0..threads.len()).collect();
    order.sort_by(|&a, &b| {
        threads[a]
            .1
            .time
            .total_cmp(&threads[b].1.time)
            .then(threads[a].0.cmp(&threads[b].0))
    });

    let mut cascades = Vec::with_capacity(threads.len());
    let mut prev_thread = f64::NEG_INFINITY;
    for &k in &order {
        let ev = threads[k].1;
        let mut t = ev.time - offset;
        if t <= prev_thread {
            t = prev_thread + options.tie_epsilon;
        }
        prev_thread = t;

        let mut rs = replies[k].clone();
        rs.sort_by(|a, b| a.1.time.total_cmp(&b.1.time).then(a.0.cmp(&b.0)));
        let mut reply_ids = Vec::with_capacity(rs.len());
        let mut reply_times = Vec::with_capacity(rs.len());
        let mut prev = f64::NEG_INFINITY;
        for (_, r) in rs {
            if r.time < ev.time {
                return Err(Error::validation(format!(
                    "reply {} at {} precedes its thread {} at {}",
                    r.id, r.time, ev.id, ev.time
                )));
            }
            let mut rt = (r.time - offset).max(t);
            if rt <= prev {
                rt = prev + options.tie_epsilon;
            }
            prev = rt;
            reply_ids.push(r.id.clone());
            reply_times.push(rt);
        }
        cascades.push(Cascade {
            thread_id: ev.id.clone(),
            thread_time: t,
            reply_ids,
            reply_times,
        });
    }

    let last = cascades
        .iter()
        .map(Cascade::last_event_time)
        .fold(0.0_f64, f64::max);
    let horizon = match horizon {
        Some(h) => (h - offset).max(last),
        None => last,
    };
    Ok(EventSpace {
        cascades,
        horizon,
        offset,
    })
}

impl EventSpace {
    /// Assembles a space from already-normalized cascades.
    pub fn from_cascades(mut cascades: Vec<Cascade>, horizon: f64) -> Result<Self> {
        for c in &cascades {
            c.validate()?;
        }
        cascades.sort_by(|a, b| a.thread_time.total_cmp(&b.thread_time));
        for w in cascades.windows(2) {
            if w[1].thread_time <= w[0].thread_time {
                return Err(Error::validation(format!(
                    "threads {} and {} share time {}",
                    w[0].thread_id, w[1].thread_id, w[1].thread_time
                )));
            }
        }
        let last = cascades
            .iter()
            .map(Cascade::last_event_time)
            .fold(0.0_f64, f64::max);
        if !horizon.is_finite() || horizon < last {
            return Err(Error::validation(format!(
                "horizon {horizon} precedes the last event at {last}"
            )));
        }
        Ok(Self {
            cascades,
            horizon,
            offset: 0.0,
        })
    }

    pub fn empty() -> Self {
        Self {
            cascades: Vec::new(),
            horizon: 0.0,
            offset: 0.0,
        }
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn cascades(&self) -> &[Cascade] {
        &self.cascades
    }

    pub fn cascade(&self, i: usize) -> Option<&Cascade> {
        self.cascades.get(i)
    }

    /// Number of main threads.
    pub fn len(&self) -> usize {
        self.cascades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cascades.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn thread_times(&self) -> Vec<f64> {
        self.cascades.iter().map(|c| c.thread_time).collect()
    }

    pub fn total_replies(&self) -> usize {
        self.cascades.iter().map(Cascade::n_replies).sum()
    }

    pub fn last_event_time(&self) -> f64 {
        self.cascades
            .iter()
            .map(Cascade::last_event_time)
            .fold(0.0, f64::max)
    }

    /// Number of replies of thread `thread_index` at or before `t`.
    pub fn mark_count(&self, thread_index: usize, t: f64) -> Result<usize> {
        let c = self.cascades.get(thread_index).ok_or_else(|| {
            Error::domain(format!(
                "thread index {thread_index} out of range for {} threads",
                self.cascades.len()
            ))
        })?;
        Ok(c.replies_up_to(t))
    }

    /// Restriction to the threads in `threads` as observed up to `horizon`.
    /// Replies after `horizon` are dropped; times keep the parent's origin.
    pub fn window(&self, threads: std::ops::Range<usize>, horizon: f64) -> Result<Self> {
        if threads.end > self.cascades.len() || threads.start > threads.end {
            return Err(Error::domain(format!(
                "thread range {threads:?} out of bounds for {} threads",
                self.cascades.len()
            )));
        }
        let mut cascades = Vec::with_capacity(threads.len());
        for c in &self.cascades[threads] {
            if c.thread_time > horizon {
                return Err(Error::domain(format!(
                    "thread {} at {} is after the window horizon {horizon}",
                    c.thread_id, c.thread_time
                )));
            }
            let keep = c.replies_up_to(horizon);
            cascades.push(Cascade {
                thread_id: c.thread_id.clone(),
                thread_time: c.thread_time,
                reply_ids: c.reply_ids[..keep].to_vec(),
                reply_times: c.reply_times[..keep].to_vec(),
            });
        }
        Ok(Self {
            cascades,
            horizon,
            offset: self.offset,
        })
    }

    /// Flattens back to events in chronological order, times in the
    /// normalized frame. A thread precedes its replies on ties.
    pub fn to_events(&self) -> Vec<MarkedEvent> {
        let mut out: Vec<(f64, u8, usize, usize, MarkedEvent)> = Vec::new();
        for (i, c) in self.cascades.iter().enumerate() {
            out.push((
                c.thread_time,
                0,
                i,
                0,
                MarkedEvent::thread(c.thread_id.clone(), c.thread_time),
            ));
            for (j, (id, &t)) in c.reply_ids.iter().zip(&c.reply_times).enumerate() {
                out.push((
                    t,
                    1,
                    i,
                    j,
                    MarkedEvent::reply(id.clone(), c.thread_id.clone(), t),
                ));
            }
        }
        out.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        out.into_iter().map(|x| x.4).collect()
    }

    /// Writes the header line followed by one event per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = SpaceHeader {
            offset: self.offset,
            horizon: self.horizon,
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for ev in self.to_events() {
            serde_json::to_writer(&mut w, &ev)?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads either a serialized space (header line first, times already
    /// normalized) or a plain event file (raw times).
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let parsed = crate::ingest::parse_jsonl(r, true)?;
        Self::from_ingested(parsed)
    }

    /// Builds a space from parsed input, honouring a serialized header.
    pub fn from_ingested(parsed: crate::ingest::Ingested) -> Result<Self> {
        match parsed.header {
            Some(h) => {
                let opts = BuildOptions {
                    normalize: false,
                    ..BuildOptions::default()
                };
                let space = build_event_space_with(&parsed.events, Some(h.horizon), opts)?;
                Ok(space.with_offset(h.offset))
            }
            None => build_event_space(&parsed.events, None),
        }
    }
}

/// First line of a serialized [`EventSpace`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceHeader {
    pub offset: f64,
    pub horizon: f64,
}
