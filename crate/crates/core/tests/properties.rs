use proptest::prelude::*;
use threadcast::analysis::branching_factor_reply;
use threadcast::evaluation::mae_time;
use threadcast::ingest::{parse_jsonl, write_events_jsonl};
use threadcast::likelihood::{
    log_likelihood, main_compensator, reply_compensator, LikelihoodOptions, MainCompensatorMode,
    ReplyCompensatorMode,
};
use threadcast::simulation::{replication_rng, sample_main_threads, SimConfig};
use threadcast::{Cascade, EventSpace, MainParams, MarkedEvent, ModelOptions, NestppParams, ReplyParams};

fn positive() -> impl Strategy<Value = f64> {
    (-2.0f64..1.0).prop_map(|e| 10f64.powf(e))
}

fn params() -> impl Strategy<Value = NestppParams> {
    prop::array::uniform8(positive()).prop_map(|p| {
        NestppParams::new(MainParams::new(p[0], p[1], p[2], p[3]), ReplyParams::new(p[4], p[5], p[6], p[7]))
    })
}

/// Up to five threads in [0, 10) with a handful of replies each.
fn space() -> impl Strategy<Value = EventSpace> {
    prop::collection::vec((0.0f64..10.0, prop::collection::vec(0.0f64..5.0, 0..6)), 1..6).prop_map(|raw| {
        let mut threads: Vec<(f64, Vec<f64>)> = raw;
        threads.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut last = -1.0;
        let cascades = threads
            .into_iter()
            .map(|(t, gaps)| {
                let t = if t <= last { last + 1e-3 } else { t };
                last = t;
                let mut r: Vec<f64> = gaps.iter().map(|g| t + g + 1e-6).collect();
                r.sort_by(f64::total_cmp);
                r.dedup();
                Cascade::new(t, r).unwrap()
            })
            .collect::<Vec<_>>();
        let horizon = cascades.iter().map(Cascade::last_event_time).fold(0.0, f64::max) + 0.5;
        EventSpace::from_cascades(cascades, horizon).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mae_time_ignores_common_shift(
        truth in prop::collection::vec(0.0f64..100.0, 5),
        pred in prop::collection::vec(0.0f64..100.0, 5),
        shift in -50.0f64..50.0,
    ) {
        let base = mae_time(&truth, &pred, 5).unwrap();
        let a: Vec<f64> = truth.iter().map(|t| t + shift).collect();
        let b: Vec<f64> = pred.iter().map(|t| t + shift).collect();
        prop_assert!((mae_time(&a, &b, 5).unwrap() - base).abs() < 1e-9);
        prop_assert_eq!(mae_time(&pred, &truth, 5).unwrap(), base);
        prop_assert_eq!(mae_time(&truth, &truth, 5).unwrap(), 0.0);
    }

    #[test]
    fn event_lists_survive_jsonl(times in prop::collection::vec(-1e9f64..1e9, 1..30)) {
        let events: Vec<MarkedEvent> = times
            .iter()
            .enumerate()
            .map(|(i, &t)| if i % 3 == 0 {
                MarkedEvent::thread(format!("t{i}"), t)
            } else {
                MarkedEvent::reply(format!("r{i}"), format!("t{}", i - i % 3), t)
            })
            .collect();
        let mut buf = Vec::new();
        write_events_jsonl(&events, &mut buf).unwrap();
        let back = parse_jsonl(buf.as_slice(), true).unwrap();
        prop_assert_eq!(back.events, events);
    }

    #[test]
    fn spaces_survive_jsonl(s in space()) {
        let mut buf = Vec::new();
        s.write_jsonl(&mut buf).unwrap();
        prop_assert_eq!(EventSpace::read_jsonl(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn reply_compensator_grows_with_end(p in params(), s in space(), extra in 0.0f64..5.0) {
        let c = &s.cascades()[0];
        let end = c.last_event_time();
        for mode in [ReplyCompensatorMode::Exact, ReplyCompensatorMode::FrozenInfectivity] {
            let a = reply_compensator(&p.reply, c, end, mode).unwrap();
            let b = reply_compensator(&p.reply, c, end + extra + 1e-3, mode).unwrap();
            prop_assert!(a >= 0.0);
            if mode == ReplyCompensatorMode::Exact {
                prop_assert!(b >= a);
            }
        }
    }

    #[test]
    fn main_compensator_grows_with_end(p in params(), s in space(), extra in 0.0f64..5.0) {
        let opts = ModelOptions::default();
        for mode in [MainCompensatorMode::Frozen, MainCompensatorMode::Dynamic] {
            let a = main_compensator(&p, &opts, &s, s.horizon(), mode).unwrap();
            let b = main_compensator(&p, &opts, &s, s.horizon() + extra, mode).unwrap();
            prop_assert!(a > 0.0);
            prop_assert!(b >= a * (1.0 - 1e-12));
        }
    }

    #[test]
    fn log_likelihood_is_finite_and_adds_up(p in params(), s in space()) {
        let ll = log_likelihood(&p, &s, &LikelihoodOptions::default()).unwrap();
        prop_assert!(ll.value.is_finite());
        let sum = ll.main_term + ll.reply_term - ll.main_compensator - ll.reply_compensators.iter().sum::<f64>();
        prop_assert!((ll.value - sum).abs() <= 1e-12 * (1.0 + sum.abs()));
        prop_assert_eq!(ll.reply_compensators.len(), s.len());
    }

    #[test]
    fn infectivity_never_raises_reply_branching(r in prop::array::uniform4(positive())) {
        let p = ReplyParams::new(r[0], r[1], r[2], r[3]);
        prop_assert!(branching_factor_reply(&p, true).unwrap() <= branching_factor_reply(&p, false).unwrap());
    }

    #[test]
    fn windows_keep_selected_threads(s in space(), cut in 0usize..6) {
        let k = cut.min(s.len());
        if k > 0 {
            let t = s.cascades()[k - 1].thread_time;
            let w = s.window(0..k, t).unwrap();
            prop_assert_eq!(w.len(), k);
            prop_assert!(w.cascades().iter().all(|c| c.reply_times.iter().all(|&r| r <= t)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulation_is_seeded_and_ordered(s in space(), seed in 0u64..1000) {
        let p = NestppParams::new(MainParams::new(0.5, 0.3, 1.0, 1.5), ReplyParams::new(0.3, 0.5, 1.0, 0.2));
        let config = SimConfig { n_threads: 5, seed, ..SimConfig::default() };
        let a = sample_main_threads(&p, &s, &config, &mut replication_rng(seed, 0)).unwrap();
        let b = sample_main_threads(&p, &s, &config, &mut replication_rng(seed, 0)).unwrap();
        prop_assert_eq!(&a, &b);
        let new = a.new_main_times();
        prop_assert_eq!(new.len(), 5);
        prop_assert!(new[0] > s.horizon());
        prop_assert!(new.windows(2).all(|w| w[0] < w[1]));
        for (t, r) in a.main_times.iter().zip(&a.reply_times) {
            prop_assert!(r.iter().all(|x| x >= t));
            prop_assert!(r.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
