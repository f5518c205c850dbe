//! In-process typed publish/subscribe backbone.
//!
//! The bus runs in lockstep by default: `publish` queues an envelope and
//! `tick` delivers everything queued so far in `(topic, publisher_id, seq)`
//! order, then advances the simulation clock. Every delivery is appended to
//! a [`Trace`], which can be written as JSON Lines and replayed onto a fresh
//! bus with the same registry to reproduce all subscriber inboxes.
//!
//! Hosted nodes (see [`HostedNode`]) are attached directly to the scheduler.
//! They see deliveries on their topics at the end of each tick and their
//! outputs are queued for the next one.

mod schema;
mod trace;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub(crate) use schema::as_point;
pub use schema::{FieldKind, FieldSpec, Kinematic, RegistryError, SchemaRegistry, SchemaViolation, TopicSchema};
pub use trace::{Trace, TraceError, TraceHeader};

/// A delivered, sequence-numbered message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub topic: String,
    pub schema_id: String,
    pub seq: u64,
    pub stamp: f64,
    pub publisher_id: String,
    pub payload: Value,
}

/// A message before the bus has stamped and sequenced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub topic: String,
    pub publisher_id: String,
    pub payload: Value,
    pub seq: Option<u64>,
    pub stamp: Option<f64>,
}

impl Message {
    pub fn new(topic: &str, publisher_id: &str, payload: Value) -> Self {
        Self {
            topic: topic.to_string(),
            publisher_id: publisher_id.to_string(),
            payload,
            seq: None,
            stamp: None,
        }
    }

    pub fn with_stamp(mut self, stamp: f64) -> Self {
        self.stamp = Some(stamp);
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BusError {
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("schema mismatch on `{topic}`: {violation}")]
    SchemaMismatch { topic: String, violation: SchemaViolation },
    #[error("seq {seq} not greater than last seq {last} for ({topic}, {publisher})")]
    SeqNotIncreasing {
        topic: String,
        publisher: String,
        seq: u64,
        last: u64,
    },
    #[error("stamp {stamp} precedes last stamp {last} for publisher {publisher}")]
    StampRegression { publisher: String, stamp: f64, last: f64 },
    #[error("tick dt must be positive and finite, got {0}")]
    InvalidDt(f64),
    #[error("config digest mismatch: trace {expected}, bus {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("participant `{0}` already registered")]
    DuplicateParticipant(String),
    #[error("unknown subscription {0}")]
    UnknownSubscription(usize),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchedulingMode {
    #[default]
    Lockstep,
    /// Publishes are delivered immediately.
    FreeRunning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubscriptionId(usize);

struct Subscriber {
    id: String,
    topic: String,
    inbox: VecDeque<Envelope>,
    hasher: Sha256,
    delivered: u64,
    since: u64,
}

/// A subscription as recorded next to a trace, enough to rebuild it for
/// replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscriptionRecord {
    pub subscriber_id: String,
    pub topic: String,
    /// Tick index at which the subscription was made.
    pub since: u64,
}

/// A runtime node hosted by the scheduler.
pub trait HostedNode: Send {
    fn node_id(&self) -> &str;
    fn subscriptions(&self) -> Vec<String>;
    fn publications(&self) -> Vec<String>;
    /// Called once per tick with this tick's deliveries on the node's topics.
    fn on_deliver(&mut self, delivered: &[Envelope]) -> Result<Vec<Message>, String>;
}

/// A hosted node was removed after faulting.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFault {
    pub node_id: String,
    pub tick: u64,
    pub reason: String,
}

pub struct Bus {
    registry: SchemaRegistry,
    seed: u64,
    mode: SchedulingMode,
    clock: f64,
    tick_index: u64,
    pending: Vec<Envelope>,
    subscribers: Vec<Subscriber>,
    last_seq: HashMap<(String, String), u64>,
    last_stamp: HashMap<String, f64>,
    participants: BTreeSet<String>,
    nodes: BTreeMap<String, Box<dyn HostedNode>>,
    node_faults: Vec<NodeFault>,
    trace: Trace,
}

impl std::fmt::Debug for Bus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bus")
            .field("clock", &self.clock)
            .field("tick_index", &self.tick_index)
            .field("pending", &self.pending.len())
            .field("subscribers", &self.subscribers.len())
            .field("nodes", &self.nodes.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Bus {
    pub fn new(registry: SchemaRegistry, seed: u64) -> Self {
        let digest = registry.digest();
        Self {
            registry,
            seed,
            mode: SchedulingMode::Lockstep,
            clock: 0.0,
            tick_index: 0,
            pending: Vec::new(),
            subscribers: Vec::new(),
            last_seq: HashMap::new(),
            last_stamp: HashMap::new(),
            participants: BTreeSet::new(),
            nodes: BTreeMap::new(),
            node_faults: Vec::new(),
            trace: Trace::new(seed, digest),
        }
    }

    pub fn with_mode(mut self, mode: SchedulingMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn registry(&self) -> &SchemaRegistry {
        &self.registry
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn tick_index(&self) -> u64 {
        self.tick_index
    }

    pub fn config_digest(&self) -> &str {
        &self.trace.header.config_digest
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Reserves a unique participant id (agents and hosted nodes).
    pub fn register_participant(&mut self, id: &str) -> Result<(), BusError> {
        if !self.participants.insert(id.to_string()) {
            return Err(BusError::DuplicateParticipant(id.to_string()));
        }
        Ok(())
    }

    pub fn release_participant(&mut self, id: &str) {
        self.participants.remove(id);
    }

    pub fn subscribe(&mut self, topic: &str, subscriber_id: &str) -> Result<SubscriptionId, BusError> {
        if !self.registry.has_topic(topic) {
            return Err(BusError::UnknownTopic(topic.to_string()));
        }
        self.subscribers.push(Subscriber {
            id: subscriber_id.to_string(),
            topic: topic.to_string(),
            inbox: VecDeque::new(),
            hasher: Sha256::new(),
            delivered: 0,
            since: self.tick_index,
        });
        Ok(SubscriptionId(self.subscribers.len() - 1))
    }

    fn sub(&self, id: SubscriptionId) -> Result<&Subscriber, BusError> {
        self.subscribers.get(id.0).ok_or(BusError::UnknownSubscription(id.0))
    }

    pub fn inbox(&self, id: SubscriptionId) -> Result<&VecDeque<Envelope>, BusError> {
        self.sub(id).map(|s| &s.inbox)
    }

    pub fn drain(&mut self, id: SubscriptionId) -> Result<Vec<Envelope>, BusError> {
        let s = self
            .subscribers
            .get_mut(id.0)
            .ok_or(BusError::UnknownSubscription(id.0))?;
        Ok(s.inbox.drain(..).collect())
    }

    /// Hex digest over everything ever delivered to the subscription,
    /// independent of draining.
    pub fn delivery_digest(&self, id: SubscriptionId) -> Result<String, BusError> {
        self.sub(id).map(|s| hex::encode(s.hasher.clone().finalize()))
    }

    pub fn subscriptions(&self) -> Vec<SubscriptionRecord> {
        self.subscribers
            .iter()
            .map(|s| SubscriptionRecord {
                subscriber_id: s.id.clone(),
                topic: s.topic.clone(),
                since: s.since,
            })
            .collect()
    }

    /// `subscriber_id/topic#n` → delivery digest for every subscription.
    pub fn inbox_digests(&self) -> BTreeMap<String, String> {
        self.subscribers
            .iter()
            .enumerate()
            .map(|(i, s)| {
                (
                    format!("{}/{}#{}", s.id, s.topic, i),
                    format!("{}:{}", s.delivered, hex::encode(s.hasher.clone().finalize())),
                )
            })
            .collect()
    }

    fn validate(&self, topic: &str, payload: &Value) -> Result<String, BusError> {
        let schema = self
            .registry
            .topic_schema(topic)
            .ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
        schema.validate(payload).map_err(|violation| BusError::SchemaMismatch {
            topic: topic.to_string(),
            violation,
        })?;
        Ok(schema.schema_id.clone())
    }

    /// Validates, stamps and sequences `msg`. Returns the assigned seq.
    pub fn publish(&mut self, msg: Message) -> Result<u64, BusError> {
        let schema_id = self.validate(&msg.topic, &msg.payload)?;
        let key = (msg.topic.clone(), msg.publisher_id.clone());
        let last = self.last_seq.get(&key).copied();
        let seq = match (msg.seq, last) {
            (Some(s), Some(l)) if s <= l => {
                return Err(BusError::SeqNotIncreasing {
                    topic: msg.topic,
                    publisher: msg.publisher_id,
                    seq: s,
                    last: l,
                })
            }
            (Some(s), _) => s,
            (None, Some(l)) => l + 1,
            (None, None) => 0,
        };
        let stamp = msg.stamp.unwrap_or(self.clock);
        if let Some(&l) = self.last_stamp.get(&msg.publisher_id) {
            if !(stamp >= l) {
                return Err(BusError::StampRegression {
                    publisher: msg.publisher_id,
                    stamp,
                    last: l,
                });
            }
        }
        if !(stamp >= 0.0) || !stamp.is_finite() {
            return Err(BusError::StampRegression {
                publisher: msg.publisher_id,
                stamp,
                last: 0.0,
            });
        }
        self.last_seq.insert(key, seq);
        self.last_stamp.insert(msg.publisher_id.clone(), stamp);
        let env = Envelope {
            topic: msg.topic,
            schema_id,
            seq,
            stamp,
            publisher_id: msg.publisher_id,
            payload: msg.payload,
        };
        match self.mode {
            SchedulingMode::Lockstep => self.pending.push(env),
            SchedulingMode::FreeRunning => {
                self.deliver(vec![env]);
            }
        }
        Ok(seq)
    }

    fn deliver(&mut self, batch: Vec<Envelope>) -> usize {
        for env in &batch {
            let line = serde_json::to_vec(env).expect("envelope serializes");
            for s in self.subscribers.iter_mut().filter(|s| s.topic == env.topic) {
                s.hasher.update(&line);
                s.hasher.update(b"\n");
                s.delivered += 1;
                s.inbox.push_back(env.clone());
            }
            self.trace.entries.push((self.tick_index, env.clone()));
        }
        batch.len()
    }

    fn sort_batch(batch: &mut [Envelope]) {
        batch.sort_by(|a, b| (&a.topic, &a.publisher_id, a.seq).cmp(&(&b.topic, &b.publisher_id, b.seq)));
    }

    /// Delivers every envelope queued before this call, runs hosted nodes
    /// and advances the clock by `dt`.
    pub fn tick(&mut self, dt: f64) -> Result<usize, BusError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(BusError::InvalidDt(dt));
        }
        let mut batch = std::mem::take(&mut self.pending);
        Self::sort_batch(&mut batch);
        let delivered_now = batch.clone();
        let n = self.deliver(batch);
        self.run_nodes(&delivered_now);
        self.clock += dt;
        self.tick_index += 1;
        Ok(n)
    }

    fn run_nodes(&mut self, delivered: &[Envelope]) {
        let ids: Vec<String> = self.nodes.keys().cloned().collect();
        for id in ids {
            let mut node = self.nodes.remove(&id).expect("node present");
            let topics = node.subscriptions();
            let mine: Vec<Envelope> = delivered
                .iter()
                .filter(|e| topics.contains(&e.topic))
                .cloned()
                .collect();
            let outcome = node.on_deliver(&mine).and_then(|out| {
                let allowed = node.publications();
                for m in &out {
                    if !allowed.contains(&m.topic) {
                        return Err(format!("publication to undeclared topic `{}`", m.topic));
                    }
                }
                Ok(out)
            });
            match outcome {
                Ok(out) => {
                    let mut fault = None;
                    for mut m in out {
                        m.publisher_id = id.clone();
                        if let Err(e) = self.publish(m) {
                            fault = Some(e.to_string());
                            break;
                        }
                    }
                    match fault {
                        None => {
                            self.nodes.insert(id, node);
                        }
                        Some(reason) => self.fault_node(&id, reason),
                    }
                }
                Err(reason) => self.fault_node(&id, reason),
            }
        }
    }

    fn fault_node(&mut self, id: &str, reason: String) {
        self.participants.remove(id);
        self.node_faults.push(NodeFault {
            node_id: id.to_string(),
            tick: self.tick_index,
            reason,
        });
    }

    /// Attaches a hosted node. Takes effect at the next tick boundary.
    pub fn attach_node(&mut self, node: Box<dyn HostedNode>) -> Result<(), BusError> {
        for t in node.subscriptions().iter().chain(node.publications().iter()) {
            if !self.registry.has_topic(t) {
                return Err(BusError::UnknownTopic(t.clone()));
            }
        }
        let id = node.node_id().to_string();
        self.register_participant(&id)?;
        self.nodes.insert(id, node);
        Ok(())
    }

    pub fn detach_node(&mut self, id: &str) -> Option<Box<dyn HostedNode>> {
        let node = self.nodes.remove(id);
        if node.is_some() {
            self.participants.remove(id);
        }
        node
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.nodes.keys().cloned().collect()
    }

    pub fn node_faults(&self) -> &[NodeFault] {
        &self.node_faults
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Re-delivers a recorded trace onto this bus.
    ///
    /// The bus must be fresh (nothing delivered yet) and built from a
    /// registry with the same digest. Hosted nodes are not run: their
    /// outputs are already part of the trace.
    pub fn replay(&mut self, trace: &Trace) -> Result<usize, BusError> {
        self.replay_with(trace, &[])
    }

    /// [`Bus::replay`], re-creating `subs` at their recorded ticks so late
    /// subscribers see only what they saw originally.
    pub fn replay_with(&mut self, trace: &Trace, subs: &[SubscriptionRecord]) -> Result<usize, BusError> {
        if trace.header.config_digest != self.config_digest() {
            return Err(BusError::DigestMismatch {
                expected: trace.header.config_digest.clone(),
                actual: self.config_digest().to_string(),
            });
        }
        let mut i = 0;
        let mut next_sub = 0;
        let entries = &trace.entries;
        while i < entries.len() {
            let tick = entries[i].0;
            while next_sub < subs.len() && subs[next_sub].since <= tick {
                let r = &subs[next_sub];
                self.subscribe(&r.topic, &r.subscriber_id)?;
                self.subscribers.last_mut().expect("just pushed").since = r.since;
                next_sub += 1;
            }
            let mut j = i;
            while j < entries.len() && entries[j].0 == tick {
                j += 1;
            }
            let mut batch = Vec::with_capacity(j - i);
            for (_, env) in &entries[i..j] {
                self.validate(&env.topic, &env.payload)?;
                batch.push(env.clone());
            }
            self.tick_index = tick;
            if let Some(last) = batch.iter().map(|e| e.stamp).reduce(f64::max) {
                self.clock = self.clock.max(last);
            }
            self.deliver(batch);
            i = j;
        }
        for r in &subs[next_sub..] {
            self.subscribe(&r.topic, &r.subscriber_id)?;
            self.subscribers.last_mut().expect("just pushed").since = r.since;
        }
        Ok(entries.len())
    }
}
