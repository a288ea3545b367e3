//! Randomized properties of the filtering and fuzzing pipeline, checked
//! against a brute-force sequential interpreter.

use fnf_core::analysis::{pearson, svm_train, LabeledVector, SvmParams};
use fnf_core::catalog::{merge_applets, Action, Applet, Catalog, Comparator, TriggerSpec, TriggerTable};
use fnf_core::filter::{Filter, FilterConfig, FilterDecision};
use fnf_core::fuzz::{PseudoSchedule, TargetDistribution};
use fnf_core::gateway::{FuzzSettings, Gateway, Pipeline, ReplayReport};
use fnf_core::model::{
    ActuatorVerb, Device, DeviceId, DeviceKind, DeviceRegistry, Event, StateRegistry, UserId, Value,
};
use fnf_core::ta::{evaluate_batch, TaPlatform};
use fnf_core::wire::{encode_events, WireEvent};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn id(s: &str) -> DeviceId {
    DeviceId::new(s).unwrap()
}

fn devices() -> DeviceRegistry {
    let d = |i: &str, attr: &str, kind: DeviceKind| Device {
        id: id(i),
        attribute: attr.into(),
        kind,
    };
    let onoff = || DeviceKind::discrete(["on", "off"]).unwrap();
    [
        d("M1", "motion", DeviceKind::discrete(["active", "inactive"]).unwrap()),
        d("M2", "motion", DeviceKind::discrete(["active", "inactive"]).unwrap()),
        d("D1", "contact", DeviceKind::discrete(["open", "closed"]).unwrap()),
        d("T1", "temperature", DeviceKind::numeric(-20, 80, "C").unwrap()),
        d("X1", "illuminance", DeviceKind::numeric(0, 1000, "lux").unwrap()),
        d("S1", "switch", onoff()),
        d("S2", "switch", onoff()),
        d("S3", "switch", onoff()),
        d("K1", "lock", DeviceKind::discrete(["locked", "unlocked"]).unwrap()),
        d("I1", "switch", onoff()),
    ]
    .into_iter()
    .collect::<Result<_, _>>()
    .unwrap()
}

fn trigger_strategy() -> impl Strategy<Value = (String, TriggerSpec)> {
    let discrete = prop_oneof![
        Just(("M1", "active")),
        Just(("M1", "inactive")),
        Just(("M2", "active")),
        Just(("D1", "open")),
        Just(("D1", "closed")),
        Just(("S1", "on")),
    ]
    .prop_map(|(d, v)| (d.to_string(), TriggerSpec::Discrete { value: v.into() }));
    let numeric = (
        prop_oneof![Just(("T1", -19i64, 79i64)), Just(("X1", 1, 999))],
        any::<bool>(),
        0.0..1.0f64,
    )
        .prop_map(|((d, lo, hi), above, frac)| {
            let threshold = lo + ((hi - lo) as f64 * frac) as i64;
            let comparator = if above { Comparator::Above } else { Comparator::Below };
            (d.to_string(), TriggerSpec::Numeric { comparator, threshold })
        });
    prop_oneof![discrete, numeric]
}

fn action_strategy() -> impl Strategy<Value = Action> {
    prop_oneof![
        4 => (prop_oneof![Just("S1"), Just("S2"), Just("S3")], any::<bool>()).prop_map(|(s, on)| Action::Actuate {
            actuator: id(s),
            verb: if on { ActuatorVerb::SwitchOn } else { ActuatorVerb::SwitchOff },
        }),
        1 => any::<bool>().prop_map(|l| Action::Actuate {
            actuator: id("K1"),
            verb: if l { ActuatorVerb::Lock } else { ActuatorVerb::Unlock },
        }),
        1 => Just(Action::External { description: "log it".into() }),
    ]
}

fn applets_strategy(max: usize) -> impl Strategy<Value = Vec<Applet>> {
    prop::collection::vec((trigger_strategy(), action_strategy()), 0..=max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, ((device, trigger), action))| Applet {
                id: format!("a{i}"),
                trigger_device: id(&device),
                trigger,
                action,
            })
            .collect()
    })
}

fn value_for(device: &Device, pick: u64) -> Value {
    match &device.kind {
        DeviceKind::Discrete { states } => Value::Label(states[pick as usize % states.len()].clone()),
        DeviceKind::Numeric { min, max, .. } => Value::Number(min + (pick % (max - min + 1) as u64) as i64),
    }
}

fn trace_strategy(max: usize) -> impl Strategy<Value = Vec<Event>> {
    let reg = devices();
    let names: Vec<Device> = reg.iter().cloned().collect();
    prop::collection::vec(
        (
            prop_oneof![Just(0u64), Just(0), Just(1), Just(3), Just(600), Just(5000)],
            0..2usize,
            0..names.len(),
            any::<u64>(),
        ),
        0..=max,
    )
    .prop_map(move |raw| {
        let mut ts = 0;
        raw.into_iter()
            .map(|(dt, user, dev, pick)| {
                ts += dt;
                let device = &names[dev];
                Event {
                    timestamp: ts,
                    user: UserId::new(["u1", "u2"][user]).unwrap(),
                    device: device.id.clone(),
                    attribute: device.attribute.clone(),
                    value: value_for(device, pick),
                    pseudo: false,
                }
            })
            .collect()
    })
}

fn fires(applet: &Applet, ev: &Event) -> bool {
    if applet.trigger_device != ev.device {
        return false;
    }
    match (&applet.trigger, &ev.value) {
        (TriggerSpec::Discrete { value }, Value::Label(l)) => value == l,
        (
            TriggerSpec::Numeric {
                comparator: Comparator::Above,
                threshold,
            },
            Value::Number(n),
        ) => n > threshold,
        (
            TriggerSpec::Numeric {
                comparator: Comparator::Below,
                threshold,
            },
            Value::Number(n),
        ) => n < threshold,
        _ => false,
    }
}

type Change = (u64, String, String, String);

/// Sequential reference: apply each report, then run every firing applet in
/// order, keeping the commands that change an actuator.
fn oracle(events: &[Event], applets: &[Applet]) -> Vec<Change> {
    let mut state: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut out = Vec::new();
    for ev in events {
        if applets
            .iter()
            .any(|a| matches!(&a.action, Action::Actuate { actuator, .. } if *actuator == ev.device))
        {
            state.insert((ev.user.to_string(), ev.device.to_string()), ev.value.to_string());
        }
        for a in applets.iter().filter(|a| fires(a, ev)) {
            if let Action::Actuate { actuator, verb } = &a.action {
                let key = (ev.user.to_string(), actuator.to_string());
                if state.get(&key).map(String::as_str) != Some(verb.state()) {
                    state.insert(key, verb.state().into());
                    out.push((
                        ev.timestamp,
                        ev.user.to_string(),
                        actuator.to_string(),
                        verb.command().into(),
                    ));
                }
            }
        }
    }
    out
}

fn run(events: &[Event], applets: &[Applet], pipeline: Pipeline, seed: u64) -> (ReplayReport, TaPlatform) {
    let reg = devices();
    let catalog = merge_applets(applets, &reg).unwrap();
    let mut gw = Gateway::new(
        &reg,
        &catalog,
        FilterConfig::default(),
        pipeline,
        TaPlatform::new(applets.to_vec()),
    );
    gw.replay(events, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let (ta, report) = gw.into_parts();
    (report, ta)
}

fn changes(report: &ReplayReport) -> Vec<Change> {
    report
        .state_changes()
        .map(|d| {
            let c = &d.command;
            (c.timestamp, c.user.to_string(), c.device.to_string(), c.command.clone())
        })
        .collect()
}

fn fuzz(per_device: bool) -> Pipeline {
    Pipeline::Fuzz(FuzzSettings {
        per_device,
        ..FuzzSettings::new(PseudoSchedule::Target {
            distribution: TargetDistribution::Uniform,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_mode_matches_sequential_interpreter(
        applets in applets_strategy(6),
        events in trace_strategy(300),
        seed in any::<u64>(),
    ) {
        let want = oracle(&events, &applets);
        for pipeline in [Pipeline::Baseline, Pipeline::Filter, fuzz(false), fuzz(true)] {
            let (report, _) = run(&events, &applets, pipeline, seed);
            prop_assert_eq!(&changes(&report), &want, "{:?}", pipeline);
            prop_assert_eq!(report.protocol_errors, 0);
        }
    }

    #[test]
    fn replay_is_deterministic(applets in applets_strategy(4), events in trace_strategy(200), seed in any::<u64>()) {
        let (a, la) = run(&events, &applets, fuzz(false), seed);
        let (b, lb) = run(&events, &applets, fuzz(false), seed);
        prop_assert_eq!(a, b);
        prop_assert_eq!(la.log(), lb.log());
    }

    #[test]
    fn forwarded_numbers_stay_in_their_sub_range(
        applets in applets_strategy(6),
        events in trace_strategy(300),
        seed in any::<u64>(),
    ) {
        let reg = devices();
        let catalog = merge_applets(&applets, &reg).unwrap();
        let filter = Filter::new(&catalog);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let empty = StateRegistry::new();
        for ev in &events {
            let Value::Number(orig) = ev.value else { continue };
            if let FilterDecision::Forward(fwd) = filter.decide(ev, &empty, &mut rng) {
                let Some(TriggerTable::Numeric(t)) = catalog.table(&ev.device) else {
                    return Err(TestCaseError::fail("numeric forward without table"));
                };
                prop_assert_eq!(t.range_index(orig), t.range_index(fwd.value.as_number().unwrap()));
            }
        }
    }

    #[test]
    fn numeric_ranges_partition_domain_and_agree_with_applets(applets in applets_strategy(6)) {
        let reg = devices();
        let catalog = merge_applets(&applets, &reg).unwrap();
        for t in catalog.numeric_tables() {
            prop_assert_eq!(t.ranges.first().unwrap().low, t.min);
            prop_assert_eq!(t.ranges.last().unwrap().high, t.max);
            for w in t.ranges.windows(2) {
                prop_assert_eq!(w[0].high + 1, w[1].low);
            }
            for v in t.min..=t.max {
                let ev = Event {
                    timestamp: 0,
                    user: UserId::new("u").unwrap(),
                    device: t.device.clone(),
                    attribute: String::new(),
                    value: Value::Number(v),
                    pseudo: false,
                };
                let want: Vec<&str> = applets.iter().filter(|a| fires(a, &ev)).map(|a| a.id.as_str()).collect();
                let got: Vec<&str> = catalog.lookup(&t.device, &ev.value).unwrap().actions.iter().map(|e| e.applet.as_str()).collect();
                prop_assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn removing_an_applet_only_grows_drops(
        applets in applets_strategy(6).prop_filter("non-empty", |a| !a.is_empty()),
        drop_index in any::<prop::sample::Index>(),
        events in trace_strategy(200),
        states in prop::collection::vec(any::<bool>(), 8),
    ) {
        let reg = devices();
        let full = merge_applets(&applets, &reg).unwrap();
        let mut fewer_applets = applets.clone();
        fewer_applets.remove(drop_index.index(applets.len()));
        let fewer = merge_applets(&fewer_applets, &reg).unwrap();
        let mut registry = StateRegistry::new();
        for (i, (dev, on, off)) in [("S1", "on", "off"), ("S2", "on", "off"), ("S3", "on", "off"), ("K1", "locked", "unlocked")].iter().enumerate() {
            for (j, user) in ["u1", "u2"].iter().enumerate() {
                let ev = Event {
                    timestamp: 0,
                    user: UserId::new(*user).unwrap(),
                    device: id(dev),
                    attribute: String::new(),
                    value: Value::label(if states[i * 2 + j] { *on } else { *off }),
                    pseudo: false,
                };
                registry.apply_event(&reg, &ev).unwrap();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for ev in &events {
            let a = Filter::new(&full).decide(ev, &registry, &mut rng);
            let b = Filter::new(&fewer).decide(ev, &registry, &mut rng);
            if a.forwarded().is_none() {
                prop_assert!(b.forwarded().is_none());
            }
        }
    }

    #[test]
    fn platform_is_stateless(applets in applets_strategy(6), events in trace_strategy(120), cut in 1usize..10) {
        let batches: Vec<Vec<WireEvent>> = events.chunks(cut).map(|c| c.iter().map(WireEvent::from).collect()).collect();
        let forward: Vec<_> = batches.iter().map(|b| evaluate_batch(b, &applets)).collect();
        let mut ta = TaPlatform::new(applets.clone());
        for (b, want) in batches.iter().zip(&forward).rev() {
            let reply = ta.handle(&serde_json::to_vec(b).unwrap()).unwrap();
            let got: Vec<fnf_core::wire::WireCommand> = serde_json::from_slice(&reply).unwrap();
            prop_assert_eq!(&got, want);
        }
    }

    #[test]
    fn wire_hides_pseudo_flag(events in trace_strategy(20)) {
        let flipped: Vec<Event> = events.iter().cloned().map(|mut e| { e.pseudo = !e.pseudo; e }).collect();
        prop_assert_eq!(encode_events(&events), encode_events(&flipped));
    }

    #[test]
    fn pearson_symmetric_and_scale_invariant(
        a in prop::collection::vec(-100.0..100.0f64, 3..30),
        seed in any::<u64>(),
        c in prop_oneof![-50.0..-0.1f64, 0.1..50.0f64],
        d in -50.0..50.0f64,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
        let (Ok(ab), Ok(ba)) = (pearson(&a, &b), pearson(&b, &a)) else { return Ok(()) };
        prop_assert!((ab - ba).abs() < 1e-12);
        let scaled: Vec<f64> = b.iter().map(|x| c * x + d).collect();
        let s = pearson(&a, &scaled).unwrap();
        prop_assert!((s - c.signum() * ab).abs() < 1e-9);
        prop_assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svm_ignores_uniform_duplication(
        points in prop::collection::vec((prop::collection::vec(-5.0..5.0f64, 3), any::<bool>()), 4..30),
        seed in any::<u64>(),
    ) {
        let set: Vec<LabeledVector> = points.into_iter().map(|(f, l)| LabeledVector::new(f, if l { "x" } else { "y" })).collect();
        let params = SvmParams { epochs: 20, seed, ..SvmParams::default() };
        let Ok(one) = svm_train(&set, &params) else { return Ok(()) };
        let doubled: Vec<LabeledVector> = set.iter().chain(set.iter()).cloned().collect();
        let two = svm_train(&doubled, &params).unwrap();
        for v in &set {
            prop_assert_eq!(one.decision(&v.features), two.decision(&v.features));
        }
    }
}

#[test]
fn pseudo_replies_never_reach_actuators() {
    // One motion applet and a user busy only in the morning; the uniform
    // target pads the rest of the day with pseudo motion events.
    let reg = devices();
    let applets = vec![Applet {
        id: "a".into(),
        trigger_device: id("M1"),
        trigger: TriggerSpec::Discrete { value: "active".into() },
        action: Action::Actuate {
            actuator: id("S1"),
            verb: ActuatorVerb::SwitchOn,
        },
    }];
    let mut events = Vec::new();
    for day in 0..20u64 {
        for k in 0..10u64 {
            let ts = day * 86_400 + 8 * 3600 + k * 120;
            for (dt, v) in [(0, "active"), (60, "inactive")] {
                events.push(Event {
                    timestamp: ts + dt,
                    user: UserId::new("u1").unwrap(),
                    device: id("M1"),
                    attribute: "motion".into(),
                    value: Value::label(v),
                    pseudo: false,
                });
            }
            events.push(Event {
                timestamp: ts + 90,
                user: UserId::new("u1").unwrap(),
                device: id("S1"),
                attribute: "switch".into(),
                value: Value::label("off"),
                pseudo: false,
            });
        }
    }
    let catalog: Catalog = merge_applets(&applets, &reg).unwrap();
    let mut gw = Gateway::new(
        &reg,
        &catalog,
        FilterConfig::default(),
        fuzz(false),
        TaPlatform::new(applets.clone()),
    );
    gw.replay(&events, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let (ta, report) = gw.into_parts();
    assert!(report.sent_pseudo > 1000, "{}", report.sent_pseudo);
    assert_eq!(report.discarded, report.sent_pseudo);
    assert_eq!(report.delivered.len() as u64, report.sent_real);
    assert!(report
        .delivered
        .iter()
        .all(|d| (d.command.timestamp % 86_400) / 3600 == 8));
    assert_eq!(changes(&report), oracle(&events, &applets));
    assert_eq!(ta.log().len() as u64, report.sent_real + report.sent_pseudo);
}
