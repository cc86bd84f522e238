//! HTTP clients against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

use hierstream::describer::{DescribeRequest, Describer, HttpConfig, HttpDescriber, ImageEncoding};
use hierstream::memory::{FrameRef, RetrievalBundle};
use hierstream::metrics::{Embedder, HttpEmbedder, HttpEmbedderConfig};
use hierstream::model::{HierarchyLevel, Interval};
use hierstream::pipeline::{HttpLanguageModel, LanguageModel};
use hierstream::Error;

struct Stub {
    url: String,
    bodies: Arc<Mutex<Vec<Value>>>,
}

/// Serves one scripted `(status, body)` per connection, in order.
fn stub(script: Vec<(u16, String)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = bodies.clone();
    thread::spawn(move || {
        for (status, reply) in script {
            let Ok((stream, _)) = listener.accept() else { return };
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
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            seen.lock().unwrap().push(serde_json::from_slice(&body).unwrap_or(Value::Null));
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    Stub { url, bodies }
}

fn chat(content: &str) -> String {
    json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string()
}

const GOOD: &str = "Answer:\nshort form response: cut onion\nlong form response (before revision): the person cuts an onion\nlong form response (after revision): the person dices an onion";

fn config(url: &str) -> HttpConfig {
    HttpConfig { endpoint: url.into(), backoff_ms: 1, max_retries: 2, image_encoding: ImageEncoding::Url, ..Default::default() }
}

fn request() -> DescribeRequest {
    DescribeRequest { level: HierarchyLevel::Substep, prompt: "describe".into(), frame_handles: vec!["http://x/1.jpg".into()], empty_history: false }
}

#[test]
fn canned_answer_is_parsed() {
    let s = stub(vec![(200, chat(GOOD))]);
    let d = HttpDescriber::with_key(config(&s.url), Some("k".into()));
    let out = d.send(&request()).unwrap();
    assert_eq!(out.response.short_form, "cut onion");
    assert_eq!(out.response.long_form_after, "the person dices an onion");
    assert_eq!(out.retries, 0);
    let body = &s.bodies.lock().unwrap()[0];
    assert_eq!(body["messages"][0]["content"][0]["text"], "describe");
    assert_eq!(body["messages"][0]["content"][1]["image_url"]["url"], "http://x/1.jpg");
}

#[test]
fn server_errors_are_retried() {
    let s = stub(vec![(500, "{}".into()), (500, "{}".into()), (200, chat(GOOD))]);
    let d = HttpDescriber::with_key(config(&s.url), None);
    let out = d.send(&request()).unwrap();
    assert_eq!(out.retries, 2);
    assert_eq!(d.retries_total(), 2);
    assert_eq!(s.bodies.lock().unwrap().len(), 3);
}

#[test]
fn exhausted_retries_are_transport_errors() {
    let s = stub(vec![(503, "{}".into()); 3]);
    let d = HttpDescriber::with_key(config(&s.url), None);
    assert!(matches!(d.send(&request()), Err(Error::Transport(_))));
}

#[test]
fn client_errors_are_not_retried() {
    let s = stub(vec![(401, "{\"error\":\"bad key\"}".into())]);
    let d = HttpDescriber::with_key(config(&s.url), None);
    assert!(matches!(d.send(&request()), Err(Error::Transport(_))));
    assert_eq!(d.retries_total(), 0);
}

#[test]
fn malformed_text_is_a_parse_error() {
    let s = stub(vec![(200, chat("I cannot see anything.")); 3]);
    let d = HttpDescriber::with_key(config(&s.url), None);
    match d.send(&request()) {
        Err(Error::Parse { raw, .. }) => assert_eq!(raw, "I cannot see anything."),
        other => panic!("{other:?}"),
    }
}

#[test]
fn describer_trait_builds_the_level_prompt() {
    let s = stub(vec![(200, chat("Answer: make tea"))]);
    let d = HttpDescriber::with_key(config(&s.url), None);
    let bundle = RetrievalBundle {
        level: HierarchyLevel::Goal,
        interval: Interval { start: 0.0, end: 10.0 },
        frames: vec![FrameRef { timestamp: 5.0, member_levels: [HierarchyLevel::Step].into(), handle: "http://x/5.jpg".into() }],
        prior_predictions: vec!["boil water".into()],
    };
    assert_eq!(d.describe(&bundle).unwrap().short_form, "make tea");
    let text = s.bodies.lock().unwrap()[0]["messages"][0]["content"][0]["text"].as_str().unwrap().to_string();
    assert!(text.contains("boil water"));
}

#[test]
fn embedder_orders_by_index() {
    let reply = json!({ "data": [
        { "index": 1, "embedding": [0.0, 2.0] },
        { "index": 0, "embedding": [3.0, 4.0] },
    ]});
    let s = stub(vec![(200, reply.to_string())]);
    let e = HttpEmbedder::new(HttpEmbedderConfig { endpoint: s.url.clone(), ..Default::default() });
    let v = e.embed(&["a".into(), "b".into()]).unwrap();
    assert_eq!(v, vec![vec![0.6, 0.8], vec![0.0, 1.0]]);
    assert_eq!(s.bodies.lock().unwrap()[0]["input"], json!(["a", "b"]));
}

#[test]
fn language_model_returns_message_text() {
    let s = stub(vec![(500, "{}".into()), (200, chat("{\"steps\": []}"))]);
    let llm = HttpLanguageModel::new(config(&s.url));
    assert_eq!(llm.complete("group these").unwrap(), "{\"steps\": []}");
}

#[test]
fn unreachable_endpoint_exits_with_transport_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    assert_eq!(hierstream::cli::run(["hierstream", "simulate", "--out", out.to_str().unwrap(), "--videos", "1"]), 0);
    // a bound-then-dropped port refuses connections
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = json!({ "describer": { "endpoint": format!("http://127.0.0.1:{port}/v1"), "max_retries": 0, "image_encoding": "url" } });
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let code = hierstream::cli::run([
        "hierstream",
        "describe",
        "--scores",
        out.join("scores").to_str().unwrap(),
        "--out",
        dir.path().join("d.jsonl").to_str().unwrap(),
        "--describer",
        "http",
        "--config",
        cfg_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 3);
}
