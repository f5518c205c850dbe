//! Delivery traces in JSON Lines form.
//!
//! Line 1 is the header `{"seed":..,"config_digest":..}`; every following
//! line is one delivered envelope tagged with its tick index.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Envelope;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceLine {
    tick: u64,
    topic: String,
    schema: String,
    seq: u64,
    stamp: f64,
    #[serde(rename = "pub")]
    publisher: String,
    payload: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub entries: Vec<(u64, Envelope)>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("trace is empty (missing header)")]
    MissingHeader,
    #[error("trace line {0}: tick index decreases")]
    TickOrder(usize),
}

impl Trace {
    pub fn new(seed: u64, config_digest: String) -> Self {
        Self {
            header: TraceHeader { seed, config_digest },
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), TraceError> {
        serde_json::to_writer(&mut w, &self.header).map_err(|e| TraceError::Io(e.into()))?;
        w.write_all(b"\n")?;
        for (tick, env) in &self.entries {
            let line = TraceLine {
                tick: *tick,
                topic: env.topic.clone(),
                schema: env.schema_id.clone(),
                seq: env.seq,
                stamp: env.stamp,
                publisher: env.publisher_id.clone(),
                payload: env.payload.clone(),
            };
            serde_json::to_writer(&mut w, &line).map_err(|e| TraceError::Io(e.into()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        buf
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, TraceError> {
        let mut lines = r
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
        let (_, first) = lines.next().ok_or(TraceError::MissingHeader)?;
        let header: TraceHeader =
            serde_json::from_str(&first?).map_err(|source| TraceError::Parse { line: 1, source })?;
        let mut entries = Vec::new();
        let mut last_tick = 0;
        for (idx, line) in lines {
            let line = line?;
            let rec: TraceLine =
                serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: idx + 1, source })?;
            if rec.tick < last_tick {
                return Err(TraceError::TickOrder(idx + 1));
            }
            last_tick = rec.tick;
            entries.push((
                rec.tick,
                Envelope {
                    topic: rec.topic,
                    schema_id: rec.schema,
                    seq: rec.seq,
                    stamp: rec.stamp,
                    publisher_id: rec.publisher,
                    payload: rec.payload,
                },
            ));
        }
        Ok(Self { header, entries })
    }
}
