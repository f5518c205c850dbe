//! HTTP chat-completion backend.

use std::time::Duration;

use serde_json::{json, Value};

use super::reasoner::{BackendFault, Reasoner, ReasonerQuery, ReasonerReply};

pub const ENDPOINT_ENV: &str = "AGENTIC_AUV_ENDPOINT";
pub const MODEL_ENV: &str = "AGENTIC_AUV_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    /// Path to the reply text, e.g. `choices[0].message.content`.
    pub content_path: String,
    pub timeout: Duration,
    pub retries: u32,
}

impl RemoteConfig {
    pub fn new(endpoint: &str, model: &str) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            temperature: 0.0,
            content_path: "choices[0].message.content".to_string(),
            timeout: Duration::from_secs(10),
            retries: 2,
        }
    }

    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV).ok()?;
        let model = std::env::var(MODEL_ENV).unwrap_or_else(|_| "default".to_string());
        Some(Self::new(&endpoint, &model))
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .timeout_global(Some(config.timeout))
                .http_status_as_error(true)
                .build(),
        );
        Self { config, agent }
    }

    pub fn request_body(&self, query: &ReasonerQuery) -> Value {
        let mut messages = vec![json!({"role": "system", "content": query.system_text})];
        if !query.context.is_empty() {
            messages.push(json!({
                "role": "system",
                "content": format!("RETRIEVED CONTEXT:\n{}", query.context.join("\n"))
            }));
        }
        messages.push(json!({"role": "user", "content": query.user_content}));
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        })
    }

    fn attempt(&self, body: &str) -> Result<String, BackendFault> {
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(classify)?;
        resp.body_mut().read_to_string().map_err(classify)
    }
}

fn classify(e: ureq::Error) -> BackendFault {
    match e {
        ureq::Error::Timeout(_) => BackendFault::Timeout { attempts: 1 },
        other => BackendFault::Http(other.to_string()),
    }
}

/// Resolves `a.b[0].c`-style paths.
pub fn extract_path<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    let mut cur = value;
    for segment in path.split('.') {
        let (key, indices) = match segment.find('[') {
            Some(i) => (&segment[..i], &segment[i..]),
            None => (segment, ""),
        };
        if !key.is_empty() {
            cur = cur.get(key)?;
        }
        for idx in indices.split('[').filter(|s| !s.is_empty()) {
            let n: usize = idx.strip_suffix(']')?.parse().ok()?;
            cur = cur.get(n)?;
        }
    }
    Some(cur)
}

impl Reasoner for RemoteBackend {
    fn infer(&mut self, query: &ReasonerQuery) -> Result<ReasonerReply, BackendFault> {
        let body = self.request_body(query).to_string();
        let attempts = self.config.retries + 1;
        let mut last = BackendFault::Http("no attempt made".into());
        for _ in 0..attempts {
            match self.attempt(&body) {
                Ok(text) => {
                    let v: Value = serde_json::from_str(&text).map_err(|e| BackendFault::BadResponse(e.to_string()))?;
                    let content = extract_path(&v, &self.config.content_path)
                        .and_then(Value::as_str)
                        .ok_or_else(|| {
                            BackendFault::BadResponse(format!("no string at `{}`", self.config.content_path))
                        })?;
                    if content.trim().is_empty() {
                        return Err(BackendFault::BadResponse("empty content".into()));
                    }
                    return Ok(ReasonerReply::text(content));
                }
                Err(e) => last = e,
            }
        }
        Err(match last {
            BackendFault::Timeout { .. } => BackendFault::Timeout { attempts },
            other => other,
        })
    }

    fn kind(&self) -> &'static str {
        "remote"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_extraction() {
        let v = json!({"choices": [{"message": {"content": "hi"}}], "x": [[1, 2]]});
        assert_eq!(extract_path(&v, "choices[0].message.content"), Some(&json!("hi")));
        assert_eq!(extract_path(&v, "x[0][1]"), Some(&json!(2)));
        assert_eq!(extract_path(&v, "choices[1].message"), None);
    }

    #[test]
    fn body_layout() {
        let b = RemoteBackend::new(RemoteConfig::new("http://127.0.0.1:1", "m"));
        let q = ReasonerQuery {
            system_text: "sys".into(),
            context: vec!["c1".into()],
            user_content: "u".into(),
        };
        let body = b.request_body(&q);
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][2], json!({"role": "user", "content": "u"}));
        assert_eq!(body["temperature"], json!(0.0));
    }
}
