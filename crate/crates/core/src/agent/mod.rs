//! Agentic nodes: constitution + reasoner + safety parser on the bus.
//!
//! One [`Agent::step`] assembles a query from the rendered constitution,
//! any retrieved context and the inbox, asks the reasoner, and passes the
//! reply through [`validate_reply`]. Only validated payloads reach the
//! outbox. Every block or backend failure becomes an event on
//! [`topics::SAFETY_EVENTS`](crate::topics::SAFETY_EVENTS).

mod constitution;
mod reasoner;
mod remote;
mod rules;
mod safety;

use serde_json::json;

pub(crate) use constitution::first_number;
pub use constitution::{Constitution, ConstitutionError};
pub use reasoner::{
    BackendFault, PlaybackBackend, Reasoner, ReasonerQuery, ReasonerReply, TemplateBackend, TemplateRule, NOOP,
};
pub use remote::{extract_path, RemoteBackend, RemoteConfig, ENDPOINT_ENV, MODEL_ENV};
pub use rules::{echo_rule, standard_rule};
pub use safety::{validate, validate_reply, LimitsError, SafetyLimits, Violation, ViolationKind, Workspace};

use crate::bus::{Bus, BusError, Envelope, Message, SchemaRegistry, SubscriptionId, TopicSchema};
use crate::topics::SAFETY_EVENTS;

/// How an agent's reasoner is provided.
#[derive(Debug, Clone, PartialEq)]
pub enum ReasonerBinding {
    /// Built-in template rule for the agent's role.
    Template,
    Playback(Vec<String>),
    Remote(RemoteConfig),
}

impl ReasonerBinding {
    pub fn build(&self, role: &str) -> Box<dyn Reasoner> {
        match self {
            ReasonerBinding::Template => Box::new(TemplateBackend::standard(role)),
            ReasonerBinding::Playback(t) => Box::new(PlaybackBackend::new(t.clone())),
            ReasonerBinding::Remote(cfg) => Box::new(RemoteBackend::new(cfg.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub agent_id: String,
    pub role: String,
    pub constitution: Constitution,
    pub subscriptions: Vec<String>,
    pub publications: Vec<String>,
    pub reasoner: ReasonerBinding,
    pub limits: SafetyLimits,
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("output schema `{0}` is not registered")]
    UnknownSchema(String),
    #[error("no publication carries output schema `{0}`")]
    NoOutputTopic(String),
    #[error("invalid constitution: {0}")]
    InvalidConstitution(String),
}

/// What a step produced: validated outputs plus safety/backend events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub outbox: Vec<Message>,
    pub events: Vec<Message>,
}

/// A running agent. Owns its reasoner and conversation history.
pub struct Agent {
    spec: AgentSpec,
    subscriptions: Vec<SubscriptionId>,
    backend: Box<dyn Reasoner>,
    output_topic: String,
    output_schema: TopicSchema,
    history: Vec<(ReasonerQuery, Result<ReasonerReply, BackendFault>)>,
    episode: u32,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("id", &self.spec.agent_id)
            .field("role", &self.spec.role)
            .field("backend", &self.backend.kind())
            .field("episode", &self.episode)
            .finish()
    }
}

fn resolve_output(
    registry: &SchemaRegistry,
    spec: &AgentSpec,
    constitution: &Constitution,
) -> Result<(String, TopicSchema), AgentError> {
    if constitution.core_directive.trim().is_empty() {
        return Err(AgentError::InvalidConstitution("empty core directive".into()));
    }
    let schema = registry
        .schema(&constitution.output_schema_id)
        .ok_or_else(|| AgentError::UnknownSchema(constitution.output_schema_id.clone()))?;
    let topic = spec
        .publications
        .iter()
        .find(|t| registry.topic_schema_id(t) == Some(schema.schema_id.as_str()))
        .ok_or_else(|| AgentError::NoOutputTopic(schema.schema_id.clone()))?;
    Ok((topic.clone(), schema.clone()))
}

/// Inbox rendered as `<topic> <compact json>` lines.
pub fn render_inbox(inbox: &[Envelope]) -> String {
    let mut out = String::new();
    for env in inbox {
        out.push_str(&env.topic);
        out.push(' ');
        out.push_str(&env.payload.to_string());
        out.push('\n');
    }
    out
}

impl Agent {
    /// Registers the agent on the bus using the backend named by its spec.
    pub fn instantiate(bus: &mut Bus, spec: AgentSpec) -> Result<Self, AgentError> {
        let backend = spec.reasoner.build(&spec.role);
        Self::instantiate_with(bus, spec, backend)
    }

    /// Registers the agent with an explicitly supplied backend.
    pub fn instantiate_with(bus: &mut Bus, spec: AgentSpec, backend: Box<dyn Reasoner>) -> Result<Self, AgentError> {
        for t in spec.subscriptions.iter().chain(spec.publications.iter()) {
            if !bus.registry().has_topic(t) {
                return Err(AgentError::UnknownTopic(t.clone()));
            }
        }
        if !bus.registry().has_topic(SAFETY_EVENTS) {
            return Err(AgentError::UnknownTopic(SAFETY_EVENTS.to_string()));
        }
        let (output_topic, output_schema) = resolve_output(bus.registry(), &spec, &spec.constitution)?;
        bus.register_participant(&spec.agent_id)?;
        let subscriptions = spec
            .subscriptions
            .iter()
            .map(|t| bus.subscribe(t, &spec.agent_id))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            spec,
            subscriptions,
            backend,
            output_topic,
            output_schema,
            history: Vec::new(),
            episode: 1,
        })
    }

    pub fn id(&self) -> &str {
        &self.spec.agent_id
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn constitution(&self) -> &Constitution {
        &self.spec.constitution
    }

    pub fn system_text(&self) -> String {
        self.spec.constitution.render()
    }

    pub fn episode(&self) -> u32 {
        self.episode
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn output_topic(&self) -> &str {
        &self.output_topic
    }

    pub fn subscription_ids(&self) -> &[SubscriptionId] {
        &self.subscriptions
    }

    pub fn build_query(&self, inbox: &[Envelope], rag_context: Option<&[String]>) -> ReasonerQuery {
        ReasonerQuery {
            system_text: self.system_text(),
            context: rag_context.map(<[String]>::to_vec).unwrap_or_default(),
            user_content: render_inbox(inbox),
        }
    }

    fn event(&self, kind: &str, detail: &str) -> Message {
        Message::new(
            SAFETY_EVENTS,
            &self.spec.agent_id,
            json!({"agent": self.spec.agent_id, "kind": kind, "detail": detail}),
        )
    }

    /// One reason–act cycle. Never panics on reasoner output.
    pub fn step(&mut self, inbox: &[Envelope], rag_context: Option<&[String]>) -> StepOutput {
        let query = self.build_query(inbox, rag_context);
        let reply = self.backend.infer(&query);
        let mut out = StepOutput::default();
        match &reply {
            Err(fault) => out.events.push(self.event("backend_fault", &fault.to_string())),
            Ok(r) if r.is_noop() => {}
            Ok(r) => match validate_reply(&r.content, &self.output_schema, &self.spec.limits) {
                Ok(payload) => out
                    .outbox
                    .push(Message::new(&self.output_topic, &self.spec.agent_id, payload)),
                Err(v) => out.events.push(self.event(v.kind.as_str(), &v.detail)),
            },
        }
        self.history.push((query, reply));
        out
    }

    /// Drains this agent's subscriptions, steps, and publishes the result.
    pub fn step_on_bus(&mut self, bus: &mut Bus, rag_context: Option<&[String]>) -> Result<StepOutput, AgentError> {
        let mut inbox = Vec::new();
        for sub in &self.subscriptions {
            inbox.extend(bus.drain(*sub)?);
        }
        let out = self.step(&inbox, rag_context);
        for m in out.outbox.iter().chain(out.events.iter()) {
            bus.publish(m.clone())?;
        }
        Ok(out)
    }

    /// Replaces the constitution, giving a fresh reasoner context.
    /// Subscriptions (and anything still queued in them) are kept.
    pub fn retune(mut self, registry: &SchemaRegistry, new_constitution: Constitution) -> Result<Self, AgentError> {
        let (output_topic, output_schema) = resolve_output(registry, &self.spec, &new_constitution)?;
        self.spec.constitution = new_constitution;
        self.output_topic = output_topic;
        self.output_schema = output_schema;
        self.history.clear();
        self.backend.reset();
        self.episode += 1;
        Ok(self)
    }

    pub fn retire(self, bus: &mut Bus) {
        bus.release_participant(&self.spec.agent_id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topics::{self, standard_registry};

    fn limits() -> SafetyLimits {
        SafetyLimits::tank(20.0, 20.0, 10.0, 1.0)
    }

    fn spec(id: &str, role: &str, schema: &str, pubs: &[&str], binding: ReasonerBinding) -> AgentSpec {
        AgentSpec {
            agent_id: id.into(),
            role: role.into(),
            constitution: Constitution::new("You are a test agent.", schema),
            subscriptions: vec![topics::PLAN_REQUEST.into()],
            publications: pubs.iter().map(|s| s.to_string()).collect(),
            reasoner: binding,
            limits: limits(),
        }
    }

    #[test]
    fn instantiate_minimal_echo() {
        let mut bus = Bus::new(standard_registry(), 0);
        let a = Agent::instantiate(
            &mut bus,
            spec(
                "e",
                "echo",
                "waypoint_list",
                &[topics::PLAN_PATH],
                ReasonerBinding::Template,
            ),
        )
        .unwrap();
        assert_eq!(a.history_len(), 0);
        assert!(bus.inbox(a.subscription_ids()[0]).unwrap().is_empty());
    }

    #[test]
    fn unregistered_publication_and_duplicate_id_rejected() {
        let mut bus = Bus::new(standard_registry(), 0);
        let bad = spec("a", "echo", "waypoint_list", &["no/such"], ReasonerBinding::Template);
        assert!(matches!(
            Agent::instantiate(&mut bus, bad),
            Err(AgentError::UnknownTopic(_))
        ));
        let ok = spec(
            "a",
            "echo",
            "waypoint_list",
            &[topics::PLAN_PATH],
            ReasonerBinding::Template,
        );
        Agent::instantiate(&mut bus, ok.clone()).unwrap();
        assert!(matches!(
            Agent::instantiate(&mut bus, ok),
            Err(AgentError::Bus(BusError::DuplicateParticipant(_)))
        ));
    }

    #[test]
    fn noop_yields_empty_outbox() {
        let mut bus = Bus::new(standard_registry(), 0);
        let mut a = Agent::instantiate(
            &mut bus,
            spec(
                "n",
                "noop",
                "waypoint_list",
                &[topics::PLAN_PATH],
                ReasonerBinding::Template,
            ),
        )
        .unwrap();
        let out = a.step(&[], None);
        assert!(out.outbox.is_empty() && out.events.is_empty());
    }

    #[test]
    fn over_limit_reply_blocked_with_event() {
        let mut bus = Bus::new(standard_registry(), 0);
        let reply = r#"{"speed": 2.5, "heading": 0.0, "depth": 1.0}"#;
        let mut a = Agent::instantiate(
            &mut bus,
            spec(
                "p",
                "pilot",
                "velocity_cmd",
                &[topics::CMD_VELOCITY],
                ReasonerBinding::Playback(vec![reply.into()]),
            ),
        )
        .unwrap();
        let out = a.step(&[], None);
        assert!(out.outbox.is_empty());
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.events[0].payload["kind"], "limit");
        assert_eq!(out.events[0].payload["detail"], "speed");
    }

    #[test]
    fn backend_fault_is_an_event_not_a_crash() {
        let mut bus = Bus::new(standard_registry(), 0);
        let mut a = Agent::instantiate(
            &mut bus,
            spec(
                "p",
                "pilot",
                "velocity_cmd",
                &[topics::CMD_VELOCITY],
                ReasonerBinding::Playback(vec![]),
            ),
        )
        .unwrap();
        let out = a.step(&[], None);
        assert!(out.outbox.is_empty());
        assert_eq!(out.events[0].payload["kind"], "backend_fault");
    }

    #[test]
    fn retune_keeps_inbox_clears_history() {
        let reg = standard_registry();
        let mut bus = Bus::new(reg.clone(), 0);
        let mut a = Agent::instantiate(
            &mut bus,
            spec(
                "e",
                "echo",
                "waypoint_list",
                &[topics::PLAN_PATH],
                ReasonerBinding::Template,
            ),
        )
        .unwrap();
        a.step(&[], None);
        assert_eq!(a.history_len(), 1);
        bus.publish(Message::new(
            topics::PLAN_REQUEST,
            "cmd",
            json!({"start": {"x":0.0,"y":0.0,"z":0.0}, "goal": {"x":1.0,"y":1.0,"z":0.0}, "avoid": false}),
        ))
        .unwrap();
        bus.tick(0.1).unwrap();
        let same = a.constitution().clone();
        let text_before = a.system_text();
        let b = a.retune(&reg, same).unwrap();
        assert_eq!(b.system_text(), text_before);
        assert_eq!(b.history_len(), 0);
        assert_eq!(b.episode(), 2);
        assert_eq!(bus.inbox(b.subscription_ids()[0]).unwrap().len(), 1);
    }

    #[test]
    fn retune_rejects_invalid_constitution() {
        let reg = standard_registry();
        let mut bus = Bus::new(reg.clone(), 0);
        let a = Agent::instantiate(
            &mut bus,
            spec(
                "e",
                "echo",
                "waypoint_list",
                &[topics::PLAN_PATH],
                ReasonerBinding::Template,
            ),
        )
        .unwrap();
        let bad = Constitution::new("x", "velocity_cmd");
        assert!(matches!(a.retune(&reg, bad), Err(AgentError::NoOutputTopic(_))));
    }

    #[test]
    fn rag_context_reaches_query() {
        let mut bus = Bus::new(standard_registry(), 0);
        let a = Agent::instantiate(
            &mut bus,
            spec(
                "e",
                "echo",
                "waypoint_list",
                &[topics::PLAN_PATH],
                ReasonerBinding::Template,
            ),
        )
        .unwrap();
        let ctx = vec!["past: current pushes east".to_string()];
        let q = a.build_query(&[], Some(&ctx));
        assert_eq!(q.context, ctx);
        assert!(q.system_text.starts_with("ROLE: You are a test agent."));
    }
}
