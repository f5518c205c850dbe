//! Invariants checked over generated inputs.

use agentic_auv::agent::{validate, validate_reply, SafetyLimits};
use agentic_auv::bus::{Bus, Envelope, Message, Trace};
use agentic_auv::codesynth::{deploy, gen_tests, sandbox_run, template_def, Op, OpNode, SandboxError};
use agentic_auv::experiments::navrepair::averaging_requirement;
use agentic_auv::memory::{embed, window_slope, MemoryRecord, RecordKind, RingWindow, VectorStore};
use agentic_auv::planner::{astar, GridMap};
use agentic_auv::topics::{standard_registry, FILTERED_SCALAR, PLAN_PATH, RAW_SCALAR, SAFETY_EVENTS};
use proptest::prelude::*;
use serde_json::json;

fn raw(t: f64, v: f64) -> Envelope {
    Envelope {
        topic: RAW_SCALAR.into(),
        schema_id: "scalar".into(),
        seq: 0,
        stamp: t,
        publisher_id: "test".into(),
        payload: json!({ "value": v }),
    }
}

const TOPICS: [&str; 4] = [FILTERED_SCALAR, RAW_SCALAR, SAFETY_EVENTS, "nav/secret"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Whatever topic a definition publishes to, nothing leaves the sandbox
    /// outside its permission list.
    #[test]
    fn sandbox_output_stays_in_permissions(
        pub_topic in prop::sample::select(TOPICS.to_vec()),
        allowed in prop::collection::vec(prop::sample::select(TOPICS.to_vec()), 0..3),
        values in prop::collection::vec(-100.0f64..100.0, 1..20),
    ) {
        let mut def = template_def(&averaging_requirement()).unwrap();
        for n in &mut def.nodes {
            if let Op::Pub { topic, .. } = &mut n.op {
                *topic = pub_topic.to_string();
            }
        }
        def.permissions.publish = allowed.iter().map(|s| s.to_string()).collect();
        let inputs: Vec<Envelope> = values.iter().enumerate().map(|(k, v)| raw(k as f64 * 0.1, *v)).collect();
        match sandbox_run(&def, &inputs, None) {
            Ok(out) => {
                for e in &out {
                    prop_assert!(def.permissions.publish.contains(&e.topic));
                }
            }
            Err(SandboxError::Violation(v)) => prop_assert_eq!(v.kind(), "topic"),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    /// A definition is attached to the bus only when its whole suite passes.
    #[test]
    fn no_deploy_without_green_suite(gain in prop_oneof![Just(1.0f64), -3.0f64..3.0], window in 1u64..15) {
        let req = averaging_requirement();
        let mut def = template_def(&req).unwrap();
        let suite = gen_tests(&req, &def).unwrap();
        for n in &mut def.nodes {
            if let Op::Window { n } = &mut n.op {
                *n = window;
            }
        }
        let out = def.nodes.iter().position(|n| matches!(n.op, Op::Pub { .. })).unwrap();
        def.nodes.push(OpNode { id: "scale".into(), op: Op::Gain { k: gain } });
        for e in &mut def.edges {
            if e.1 == def.nodes[out].id {
                e.1 = "scale".into();
            }
        }
        def.edges.push(("scale".into(), def.nodes[out].id.clone()));

        let dir = tempfile::tempdir().unwrap();
        let mut bus = Bus::new(standard_registry(), 0);
        let report = deploy(&mut bus, "avg", &def, &suite, dir.path()).unwrap();
        let attached = bus.node_ids().iter().any(|n| n == "avg");
        prop_assert_eq!(report.deployed, attached);
        prop_assert_eq!(report.deployed, report.tests_passed == report.tests_total && report.tests_total > 0);
        prop_assert_eq!(report.artifact.is_some(), report.deployed);
    }

    /// Replaying a trace reproduces every subscriber's inbox digest.
    #[test]
    fn replay_reproduces_digests(
        kinds in prop::collection::vec(prop::sample::select(vec!["syntax", "schema", "limit"]), 1..30),
        late in 0usize..30,
    ) {
        let mut bus = Bus::new(standard_registry(), 3);
        bus.subscribe(SAFETY_EVENTS, "a").unwrap();
        for (k, kind) in kinds.iter().enumerate() {
            if k == late {
                bus.subscribe(SAFETY_EVENTS, "b").unwrap();
            }
            bus.publish(Message::new(SAFETY_EVENTS, "p", json!({"agent": "p", "kind": kind, "detail": k.to_string()}))).unwrap();
            bus.tick(0.1).unwrap();
        }
        let trace = Trace::read_jsonl(bus.trace().to_jsonl_bytes().as_slice()).unwrap();
        let mut again = Bus::new(standard_registry(), 3);
        again.replay_with(&trace, &bus.subscriptions()).unwrap();
        prop_assert_eq!(bus.inbox_digests(), again.inbox_digests());
    }

    /// Accepted replies always satisfy schema and limits; arbitrary text
    /// never panics the parser.
    #[test]
    fn safety_parser_accepts_only_valid(text in ".{0,200}", x in -50.0f64..50.0, speed in -2.0f64..5.0) {
        let reg = standard_registry();
        let schema = reg.topic_schema(PLAN_PATH).unwrap();
        let limits = SafetyLimits::tank(10.0, 6.0, 5.0, 1.0);
        let _ = validate_reply(&text, schema, &limits);
        let reply = format!(r#"{{"waypoints": [{{"x": 1, "y": 1, "z": 1}}, {{"x": {x}, "y": 2, "z": 1}}], "speed": {speed}}}"#);
        if let Ok(p) = validate_reply(&reply, schema, &limits) {
            prop_assert!(validate(&p, schema, &limits).is_ok());
            prop_assert!((0.0..=10.0).contains(&x) && (0.0..=1.0).contains(&speed), "accepted x={x} speed={speed}");
        }
    }

    /// A* paths stay on free inflated cells and never beat the octile bound.
    #[test]
    fn astar_paths_are_free_and_bounded(occ in prop::collection::vec(any::<bool>(), 144), sx in 0usize..12, gx in 0usize..12) {
        let mut m = GridMap::new(12, 12, 1.0).unwrap();
        for (i, o) in occ.iter().enumerate() {
            if *o && i % 3 == 0 {
                m.set((i % 12, i / 12), true);
            }
        }
        let (s, g) = ((sx, 0), (gx, 11));
        m.set(s, false);
        m.set(g, false);
        if let Ok(p) = astar(&m, s, g, 0, None) {
            prop_assert!(p.cells.iter().all(|c| m.is_free(*c)));
            let (dx, dy) = (sx.abs_diff(gx) as f64, 11.0);
            let octile = dx.max(dy) + (2f64.sqrt() - 1.0) * dx.min(dy);
            prop_assert!(p.cell_cost() >= octile - 1e-9);
        }
    }

    /// Nearest-neighbour results are ranked and the context fits its budget.
    #[test]
    fn retrieval_is_ranked_and_bounded(texts in prop::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,6}", 1..12), k in 1usize..6, budget in 1usize..30) {
        let mut store = VectorStore::new();
        for (i, t) in texts.iter().enumerate() {
            store.upsert(MemoryRecord::from_text(&format!("r{i}"), RecordKind::Observation, i as f64, t).unwrap());
        }
        let q = embed(&texts[0]).unwrap();
        let hits = store.knn(&q, k).unwrap();
        prop_assert!(hits.len() <= k);
        prop_assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
        let ctx = store.assemble_context(&q, k, budget).unwrap();
        prop_assert!(ctx.iter().map(|c| c.split_whitespace().count()).sum::<usize>() <= budget);
    }

    /// The window slope of a linear signal is its rate.
    #[test]
    fn window_slope_recovers_rate(rate in -1.0f64..1.0, offset in -5.0f64..5.0, n in 3usize..20) {
        let mut w = RingWindow::with_capacity(n).unwrap();
        for k in 0..n {
            let t = k as f64 * 0.25;
            w.push(t, offset + rate * t).unwrap();
        }
        prop_assert!((window_slope(&w).unwrap() - rate).abs() < 1e-9);
    }
}
