//! The HTTP backend against a local stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use agentic_auv::agent::{Agent, ReasonerBinding, RemoteConfig, SafetyLimits};
use agentic_auv::bus::Bus;
use agentic_auv::planner::planner_spec;
use agentic_auv::topics::standard_registry;
use serde_json::{json, Value};

/// Serves `responses` (status, body) in order, one per connection, and
/// sends each request body back over the channel.
fn stub(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<Value>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in responses {
            let Ok((mut stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let _ = tx.send(serde_json::from_slice(&buf).unwrap_or(Value::Null));
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), rx)
}

fn completion(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn agent(endpoint: &str, retries: u32) -> (Bus, Agent) {
    let mut cfg = RemoteConfig::new(endpoint, "stub-model");
    cfg.retries = retries;
    cfg.timeout = Duration::from_secs(5);
    let mut bus = Bus::new(standard_registry(), 0);
    let spec = planner_spec(
        "planner",
        ReasonerBinding::Remote(cfg),
        SafetyLimits::tank(10.0, 6.0, 5.0, 1.0),
        0.3,
    );
    let a = Agent::instantiate(&mut bus, spec).unwrap();
    (bus, a)
}

const VALID: &str = r#"{"waypoints": [{"x": 1, "y": 1, "z": 1}, {"x": 4, "y": 2, "z": 1}], "speed": 0.3}"#;

#[test]
fn valid_completion_is_published() {
    let (url, rx) = stub(vec![(200, completion(VALID))]);
    let (_bus, mut a) = agent(&url, 0);
    let out = a.step(&[], None);
    assert_eq!(out.outbox.len(), 1);
    assert!(out.events.is_empty());
    let req = rx.recv().unwrap();
    assert_eq!(req["model"], "stub-model");
    assert_eq!(req["messages"][0]["role"], "system");
}

#[test]
fn unsafe_completion_is_blocked() {
    let bad = r#"{"waypoints": [{"x": 1, "y": 1, "z": 1}], "speed": 7.0}"#;
    let (url, _rx) = stub(vec![(200, completion(bad))]);
    let (_bus, mut a) = agent(&url, 0);
    let out = a.step(&[], None);
    assert!(out.outbox.is_empty());
    assert_eq!(out.events.len(), 1);
    assert_eq!(out.events[0].payload["kind"], "limit");
}

#[test]
fn server_error_retries_then_faults() {
    let (url, rx) = stub(vec![(500, "{}".into()), (500, "{}".into())]);
    let (_bus, mut a) = agent(&url, 1);
    let out = a.step(&[], None);
    assert!(out.outbox.is_empty());
    assert_eq!(out.events[0].payload["kind"], "backend_fault");
    assert_eq!(rx.iter().take(2).count(), 2);
}

#[test]
fn malformed_response_faults() {
    let (url, _rx) = stub(vec![(200, r#"{"choices": []}"#.into())]);
    let (_bus, mut a) = agent(&url, 0);
    let out = a.step(&[], None);
    assert!(out.outbox.is_empty());
    assert_eq!(out.events[0].payload["kind"], "backend_fault");
}

#[test]
fn retry_recovers_after_one_failure() {
    let (url, _rx) = stub(vec![(503, "{}".into()), (200, completion(VALID))]);
    let (_bus, mut a) = agent(&url, 1);
    assert_eq!(a.step(&[], None).outbox.len(), 1);
}
