mod support;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rescue_core::{
    reconcile, update_and_decide, Decision, EndpointUri, GraphName, MasterState, PollHistory, PollOutcome,
};
use support::{apply, random_event, Bookkeeper, Event, Kind};

/// Turns a proptest-supplied seed into a deterministic event stream.
fn events(seed: u64, len: usize) -> Vec<Event> {
    let mut x = seed | 1;
    let mut below = |n: u32| {
        // xorshift64*
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        ((x.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 32) % u64::from(n)) as u32
    };
    (0..len).map(|_| random_event(&mut below)).collect()
}

proptest! {
    #[test]
    fn replay_matches_bookkeeper(seed in any::<u64>(), len in 1usize..300) {
        let mut state = MasterState::new();
        let mut oracle = Bookkeeper::default();
        for event in events(seed, len) {
            let got = apply(&mut state, &event);
            let want = oracle.apply(&event);
            prop_assert_eq!(got, want, "return value of {:?}", event);
            prop_assert!(state.check_invariants().is_ok());
        }
        prop_assert_eq!(state, oracle.to_state());
    }

    #[test]
    fn version_only_moves_forward_and_queries_are_read_only(seed in any::<u64>(), len in 1usize..200) {
        let mut state = MasterState::new();
        for event in events(seed, len) {
            let before = state.clone();
            let v0 = state.version();
            apply(&mut state, &event);
            prop_assert!(state.version() >= v0);
            if state != before {
                prop_assert!(state.version() > v0, "mutation without bump: {:?}", event);
            }
            let v1 = state.version();
            let _ = state.system_state();
            let _ = state.topic_types();
            let _ = state.published_topics("");
            let _ = state.param_names();
            for node in before.nodes() {
                let _ = state.lookup_node(&node.name);
            }
            let _ = state.lookup_service(&GraphName::new("/s0").unwrap());
            prop_assert_eq!(state.version(), v1);
        }
    }

    #[test]
    fn register_then_unregister_restores_state(seed in any::<u64>(), len in 0usize..100, pick in 0u32..1000) {
        let mut state = MasterState::new();
        for event in events(seed, len) {
            apply(&mut state, &event);
        }
        let topic = GraphName::new(format!("/t{}", pick % 4)).unwrap();
        // a node that is not yet registered, so no supersession is involved
        let node = GraphName::new("/fresh").unwrap();
        let api = EndpointUri::new("http://localhost:1/").unwrap();
        let before = state.clone();
        let had_wildcard_type = state.topic(&topic).is_some_and(|t| t.datatype == "*");
        if pick % 3 == 0 {
            state.register_subscriber(&node, &api, &topic, "a/A").unwrap();
            prop_assert_eq!(state.unregister_subscriber(&node, &api, &topic).value, 1);
        } else if pick % 3 == 1 {
            state.register_publisher(&node, &api, &topic, "a/A").unwrap();
            prop_assert_eq!(state.unregister_publisher(&node, &api, &topic).value, 1);
        } else {
            let svc = GraphName::new("/fresh_srv").unwrap();
            let uri = EndpointUri::new("rosrpc://localhost:2").unwrap();
            state.register_service(&node, &api, &svc, &uri);
            prop_assert_eq!(state.unregister_service(&node, &svc, &uri).value, 1);
        }
        if had_wildcard_type && pick % 3 != 2 {
            // the first concrete registration fixes the type for the topic's lifetime
            for (a, b) in state.topics().zip(before.topics()) {
                prop_assert_eq!(&a.publishers, &b.publishers);
                prop_assert_eq!(&a.subscribers, &b.subscribers);
            }
        } else {
            prop_assert_eq!(state, before);
        }
    }

    #[test]
    fn equal_states_give_identical_query_results(seed in any::<u64>(), len in 0usize..150) {
        let evs = events(seed, len);
        let mut a = MasterState::new();
        let mut b = MasterState::new();
        for e in &evs {
            apply(&mut a, e);
        }
        for e in &evs {
            apply(&mut b, e);
        }
        prop_assert_eq!(format!("{:?}", a.system_state()), format!("{:?}", b.system_state()));
        prop_assert_eq!(a.topic_types(), b.topic_types());
        let sys = a.system_state();
        for list in [&sys.publishers, &sys.subscribers, &sys.services] {
            prop_assert!(list.windows(2).all(|w| w[0].0 < w[1].0));
            for (_, names) in list.iter() {
                prop_assert!(names.windows(2).all(|w| w[0] < w[1]));
            }
        }
        let names = a.param_names();
        prop_assert!(names.windows(2).all(|w| w[0] < w[1]));
    }

    /// reconcile(S, alive) equals re-registering only the surviving nodes'
    /// registrations into a fresh registry.
    #[test]
    fn reconcile_matches_rebuild(seed in any::<u64>(), len in 0usize..200, alive_mask in any::<u8>()) {
        // keep datatypes consistent per topic so registration order cannot
        // change the winning type
        let evs: Vec<Event> = events(seed, len)
            .into_iter()
            .map(|e| match e {
                Event::Register { kind, node, port, topic, .. } => Event::Register {
                    kind, node, port, datatype: format!("ty{}", &topic[2..]), topic,
                },
                other => other,
            })
            .collect();
        let mut state = MasterState::new();
        for e in &evs {
            apply(&mut state, e);
        }
        let is_alive = |name: &GraphName| {
            let idx: u32 = name.as_str()[2..].parse().unwrap();
            alive_mask & (1 << idx) != 0
        };
        let out = reconcile(&state, |node| is_alive(&node.name));

        let mut rebuilt = MasterState::new();
        for node in state.nodes().filter(|n| is_alive(&n.name)) {
            for topic in state.topics() {
                if topic.publishers.contains(&node.name) {
                    rebuilt.register_publisher(&node.name, &node.api_uri, &topic.name, &topic.datatype).unwrap();
                }
                if topic.subscribers.contains(&node.name) {
                    rebuilt.register_subscriber(&node.name, &node.api_uri, &topic.name, &topic.datatype).unwrap();
                }
            }
            for svc in state.services().filter(|s| s.provider == node.name) {
                rebuilt.register_service(&node.name, &node.api_uri, &svc.name, &svc.service_uri);
            }
        }
        for name in state.param_names() {
            let key = rescue_core::ParamKey::new(name).unwrap();
            rebuilt.set_param(&key, state.get_param(&key).unwrap()).unwrap();
        }
        prop_assert_eq!(&out.state, &rebuilt);
        out.state.check_invariants().unwrap();

        let dropped: BTreeSet<_> = out.dropped_nodes.iter().cloned().collect();
        let expected: BTreeSet<_> = state.nodes().filter(|n| !is_alive(&n.name)).map(|n| n.name.clone()).collect();
        prop_assert_eq!(dropped, expected);
        for topic in state.topics() {
            let after = out.state.topic(&topic.name).map(|t| t.publishers.clone()).unwrap_or_default();
            prop_assert_eq!(after != topic.publishers, out.changed_topics.contains(&topic.name));
        }
        // idempotent once everything left is alive
        let again = reconcile(&out.state, |node| is_alive(&node.name));
        prop_assert_eq!(again.state, out.state);
        prop_assert!(again.changed_topics.is_empty());
    }
}

/// The oracle's own definition: the last `k` outcomes are all failures.
fn brute_force_failed(outcomes: &[bool], k: usize) -> bool {
    outcomes.len() >= k && outcomes[outcomes.len() - k..].iter().all(|ok| !ok)
}

#[test]
fn decision_matches_brute_force_for_all_short_histories() {
    for k in 1..=3u32 {
        for len in 0..=8usize {
            for bits in 0u32..(1 << len) {
                let outcomes: Vec<bool> = (0..len).map(|i| bits & (1 << i) != 0).collect();
                let mut history = PollHistory::new(4);
                let mut decision = Decision::Healthy;
                for (i, ok) in outcomes.iter().enumerate() {
                    decision = update_and_decide(&mut history, PollOutcome { at_ms: i as u64, ok: *ok }, k);
                }
                let want = if brute_force_failed(&outcomes, k as usize) { Decision::Failed } else { Decision::Healthy };
                assert_eq!(decision, want, "k={k} outcomes={outcomes:?}");
                let trailing = outcomes.iter().rev().take_while(|ok| !**ok).count();
                assert_eq!(history.consecutive_failures() as usize, trailing);
            }
        }
    }
}

#[test]
fn flapping_never_fails_at_threshold_three() {
    let mut history = PollHistory::default();
    for i in 0..200 {
        let d = update_and_decide(&mut history, PollOutcome { at_ms: i, ok: i % 2 == 0 }, 3);
        assert_eq!(d, Decision::Healthy);
    }
}

#[test]
fn unregister_one_of_two_publishers_matches_rebuild() {
    let evs = [
        Event::Register { kind: Kind::Pub, node: "/n0".into(), port: 20_000, topic: "/t0".into(), datatype: "a/A".into() },
        Event::Register { kind: Kind::Pub, node: "/n1".into(), port: 20_010, topic: "/t0".into(), datatype: "a/A".into() },
        Event::Register { kind: Kind::Sub, node: "/n2".into(), port: 20_020, topic: "/t0".into(), datatype: "a/A".into() },
    ];
    let mut state = MasterState::new();
    for e in &evs {
        apply(&mut state, e);
    }
    let removal = Event::Unregister { kind: Kind::Pub, node: "/n0".into(), port: 20_000, topic: "/t0".into() };
    assert_eq!(apply(&mut state, &removal), 1);
    let mut rebuilt = MasterState::new();
    for e in &evs[1..] {
        apply(&mut rebuilt, e);
    }
    assert_eq!(state, rebuilt);
}
