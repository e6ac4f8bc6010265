use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use synthrank_core::llm::{self, DecodeParams, HttpLlm, LabelPair, Prompt};
use synthrank_core::retrieval::{embed, HttpEmbedder};
use synthrank_core::{Error, ErrorKind, HttpConfig};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    auth: Option<String>,
    body: serde_json::Value,
}

type Handler = dyn Fn(usize, &Seen) -> (u16, String, Duration) + Send + Sync;

/// Minimal HTTP/1.1 server; `handler` gets the request index and returns
/// status, JSON body and a delay before replying.
struct Server {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<Seen> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_string();
    let (mut len, mut auth) = (0usize, None);
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (name, value) = h.split_once(':')?;
        match name.to_ascii_lowercase().as_str() {
            "content-length" => len = value.trim().parse().ok()?,
            "authorization" => auth = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some(Seen { path, auth, body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null) })
}

impl Server {
    fn start(handler: Box<Handler>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        let handler: Arc<Handler> = Arc::from(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let log = Arc::clone(&log);
                let handler = Arc::clone(&handler);
                thread::spawn(move || {
                    let Some(req) = read_request(&mut stream) else { return };
                    let n = {
                        let mut l = log.lock().unwrap();
                        l.push(req.clone());
                        l.len() - 1
                    };
                    let (status, body, delay) = handler(n, &req);
                    thread::sleep(delay);
                    let resp = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                });
            }
        });
        Self { url, seen }
    }

    fn config(&self, retries: u32) -> HttpConfig {
        HttpConfig {
            base_url: self.url.clone(),
            timeout_secs: 5.0,
            max_retries: retries,
            initial_backoff_ms: 1,
            max_in_flight: 4,
        }
    }

    fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

fn prompt(text: &str) -> Prompt {
    Prompt { text: text.into(), bindings: BTreeMap::new() }
}

fn ok(body: &str) -> (u16, String, Duration) {
    (200, body.into(), Duration::ZERO)
}

#[test]
fn completion_sends_auth_and_decode_params() {
    let s = Server::start(Box::new(|_, _| ok(r#"{"text":"What is it?"}"#)));
    let llm = HttpLlm::with_token(s.config(0), Some("sekrit".into())).unwrap();
    let params = DecodeParams { max_tokens: 32, temperature: 0.0, rng_seed: 9 };
    assert_eq!(llm::complete(&llm, &prompt("passage"), &params).unwrap(), "What is it?");
    let r = &s.requests()[0];
    assert_eq!(r.path, "/v1/complete");
    assert_eq!(r.auth.as_deref(), Some("Bearer sekrit"));
    assert_eq!(r.body["prompt"], "passage");
    assert_eq!(r.body["seed"], 9);
    assert_eq!(r.body["max_tokens"], 32);
}

#[test]
fn label_logits_round_trip() {
    let s = Server::start(Box::new(|_, _| ok(r#"{"logits":{"Yes":1.5,"No":-0.5}}"#)));
    let llm = HttpLlm::with_token(s.config(0), None).unwrap();
    let l = llm::label_logits(&llm, &prompt("p"), &LabelPair::default()).unwrap();
    assert_eq!(l.get("Yes"), Some(1.5));
    assert_eq!(l.get("No"), Some(-0.5));
    assert_eq!(s.requests()[0].body["labels"], serde_json::json!(["Yes", "No"]));
    assert!(s.requests()[0].auth.is_none());
}

#[test]
fn missing_endpoint_is_capability_error() {
    let s = Server::start(Box::new(|_, _| (404, "{}".into(), Duration::ZERO)));
    let llm = HttpLlm::with_token(s.config(3), None).unwrap();
    let e = llm::label_logits(&llm, &prompt("p"), &LabelPair::default()).unwrap_err();
    assert!(matches!(e, Error::Capability(_)), "{e:?}");
    assert_eq!(e.kind(), ErrorKind::Backend);
    assert_eq!(s.requests().len(), 1);
}

#[test]
fn wrong_label_keys_are_capability_errors() {
    let s = Server::start(Box::new(|_, _| ok(r#"{"logits":{"yes":1.0,"no":0.0}}"#)));
    let llm = HttpLlm::with_token(s.config(0), None).unwrap();
    let e = llm::label_logits(&llm, &prompt("p"), &LabelPair::default()).unwrap_err();
    assert!(matches!(e, Error::Capability(_)), "{e:?}");
}

#[test]
fn transient_failures_are_retried() {
    let s =
        Server::start(Box::new(|n, _| if n < 2 { (503, "{}".into(), Duration::ZERO) } else { ok(r#"{"text":"ok"}"#) }));
    let llm = HttpLlm::with_token(s.config(3), None).unwrap();
    assert_eq!(llm::complete(&llm, &prompt("p"), &DecodeParams::default()).unwrap(), "ok");
    assert_eq!(s.requests().len(), 3);
}

#[test]
fn retries_are_bounded() {
    let s = Server::start(Box::new(|_, _| (429, "{}".into(), Duration::ZERO)));
    let llm = HttpLlm::with_token(s.config(2), None).unwrap();
    let e = llm::complete(&llm, &prompt("p"), &DecodeParams::default()).unwrap_err();
    assert!(matches!(e, Error::Gateway { retryable: true, .. }), "{e:?}");
    assert_eq!(s.requests().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let s = Server::start(Box::new(|_, _| (400, "{}".into(), Duration::ZERO)));
    let llm = HttpLlm::with_token(s.config(3), None).unwrap();
    let e = llm::complete(&llm, &prompt("p"), &DecodeParams::default()).unwrap_err();
    assert!(matches!(e, Error::Gateway { retryable: false, .. }), "{e:?}");
    assert_eq!(s.requests().len(), 1);
}

#[test]
fn slow_backend_times_out() {
    let s = Server::start(Box::new(|_, _| (200, r#"{"text":"late"}"#.into(), Duration::from_secs(3))));
    let mut cfg = s.config(0);
    cfg.timeout_secs = 0.3;
    let llm = HttpLlm::with_token(cfg, None).unwrap();
    let started = Instant::now();
    let e = llm::complete(&llm, &prompt("p"), &DecodeParams::default()).unwrap_err();
    assert!(matches!(e, Error::Gateway { .. }), "{e:?}");
    assert!(started.elapsed() < Duration::from_secs(2));
}

#[test]
fn empty_completion_is_generation_error() {
    let s = Server::start(Box::new(|_, _| ok(r#"{"text":"   "}"#)));
    let llm = HttpLlm::with_token(s.config(0), None).unwrap();
    assert!(matches!(llm::complete(&llm, &prompt("p"), &DecodeParams::default()), Err(Error::Generation(_))));
}

#[test]
fn unreachable_backend_is_backend_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = HttpConfig {
        base_url: format!("http://127.0.0.1:{port}"),
        max_retries: 1,
        initial_backoff_ms: 1,
        ..Default::default()
    };
    let llm = HttpLlm::with_token(cfg, None).unwrap();
    let e = llm::complete(&llm, &prompt("p"), &DecodeParams::default()).unwrap_err();
    assert_eq!(e.kind(), ErrorKind::Backend);
}

#[test]
fn http_embedder_checks_dimension() {
    let s = Server::start(Box::new(|_, req| {
        assert_eq!(req.path, "/v1/embed");
        ok(r#"{"vector":[0.5,0.5,0.0]}"#)
    }));
    let good = HttpEmbedder::new(s.config(0), 3).unwrap();
    assert_eq!(embed(&good, "text").unwrap().dim(), 3);
    let bad = HttpEmbedder::new(s.config(0), 4).unwrap();
    assert!(matches!(embed(&bad, "text"), Err(Error::Config(_))));
}
