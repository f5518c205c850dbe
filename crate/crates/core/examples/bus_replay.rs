//! Publish on a lockstep bus, write the trace, replay it into a fresh bus and
//! compare per-subscriber inbox digests.

use agentic_auv::bus::{Bus, Message, Trace};
use agentic_auv::topics::{standard_registry, SAFETY_EVENTS};
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut bus = Bus::new(standard_registry(), 42);
    let early = bus.subscribe(SAFETY_EVENTS, "early")?;
    for k in 0..3 {
        let payload = json!({"agent": "demo", "kind": "limit", "detail": format!("event {k}")});
        bus.publish(Message::new(SAFETY_EVENTS, "demo", payload))?;
        bus.tick(0.1)?;
    }
    let late = bus.subscribe(SAFETY_EVENTS, "late")?;
    bus.publish(Message::new(
        SAFETY_EVENTS,
        "demo",
        json!({"agent": "demo", "kind": "schema", "detail": "late"}),
    ))?;
    bus.tick(0.1)?;
    println!(
        "early inbox {} messages, late inbox {}",
        bus.inbox(early)?.len(),
        bus.inbox(late)?.len()
    );

    let bytes = bus.trace().to_jsonl_bytes();
    println!("trace: {} entries, {} bytes", bus.trace().len(), bytes.len());
    let trace = Trace::read_jsonl(bytes.as_slice())?;

    let mut again = Bus::new(standard_registry(), 42);
    again.replay_with(&trace, &bus.subscriptions())?;
    let (a, b) = (bus.inbox_digests(), again.inbox_digests());
    for (sub, digest) in &a {
        println!(
            "{sub:<24} {}  {}",
            &digest[..16],
            if b.get(sub) == Some(digest) { "match" } else { "DIFFERS" }
        );
    }
    Ok(())
}
