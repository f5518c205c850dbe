//! Store experiences, retrieve neighbours for a query and assemble a
//! bounded context; then estimate a drift slope from a ring window.

use agentic_auv::memory::{embed, window_slope, MemoryRecord, RecordKind, RingWindow, VectorStore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut store = VectorStore::new();
    let notes = [
        (
            "e1",
            RecordKind::Experience,
            "strong current pushed auv0 east of the pipeline by 1.5 m",
        ),
        (
            "e2",
            RecordKind::Experience,
            "thruster 3 stalled during a sharp yaw turn",
        ),
        (
            "o1",
            RecordKind::Observation,
            "red ball spotted near goal 1 at 2 m range",
        ),
        (
            "k1",
            RecordKind::Knowledge,
            "recover lateral error by feeding forward the current estimate",
        ),
        (
            "s1",
            RecordKind::SimOutcome,
            "pipeline recovery took 14 s with memory, 22 s without",
        ),
    ];
    for (i, (id, kind, text)) in notes.iter().enumerate() {
        store.upsert(MemoryRecord::from_text(id, *kind, i as f64, text)?);
    }

    let q = embed("current pushed the vehicle off the pipeline, how to recover")?;
    for hit in store.knn(&q, 3)? {
        println!("{:.3}  {:<3} {}", hit.similarity, hit.record.id, hit.record.text());
    }
    let ctx = store.assemble_context(&q, 5, 24)?;
    println!("context ({} items within 24 tokens):", ctx.len());
    for line in &ctx {
        println!("  - {line}");
    }

    let mut buf = Vec::new();
    store.save_jsonl(&mut buf)?;
    let restored = VectorStore::load_jsonl(buf.as_slice())?;
    println!("round trip: {} records", restored.len());

    let mut w = RingWindow::default();
    for k in 0..10 {
        let t = k as f64 * 0.5;
        w.push(t, 0.2 + 0.05 * t)?;
    }
    println!("window slope {:.3} m/s", window_slope(&w)?);
    Ok(())
}
