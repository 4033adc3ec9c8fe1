//! Remote annotator over real HTTP against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use adstory_core::annotator::{
    Annotator, AnnotatorConfig, AnnotatorError, RemoteAnnotator, ReqwestTransport, Sleeper,
};
use adstory_core::segmentation::FunctionalUnit;
use adstory_core::taxonomy::Taxonomy;

#[derive(Debug, Clone, Default)]
struct Seen {
    authorization: Option<String>,
    body: String,
}

/// Serves one scripted (status, body) reply per connection, then stops.
fn scripted_server(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut req = Seen::default();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    match k.to_ascii_lowercase().as_str() {
                        "content-length" => length = v.trim().parse().unwrap(),
                        "authorization" => req.authorization = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            req.body = String::from_utf8(buf).unwrap();
            log.lock().unwrap().push(req);
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let mut stream = reader.into_inner();
            stream.write_all(reply.as_bytes()).unwrap();
            stream.flush().unwrap();
        }
    });
    (url, seen, handle)
}

#[derive(Default)]
struct Delays(Mutex<Vec<Duration>>);

impl Sleeper for Delays {
    fn sleep(&self, d: Duration) {
        self.0.lock().unwrap().push(d);
    }
}

fn chat(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn annotator(url: String, delays: Arc<Delays>) -> RemoteAnnotator {
    let cfg = AnnotatorConfig {
        kind: "remote".into(),
        endpoint_url: Some(url),
        timeout_s: 5.0,
        max_attempts: 3,
        backoff_base_s: 0.25,
        ..AnnotatorConfig::default()
    };
    RemoteAnnotator::new(cfg, Some("sekrit".into()), Arc::new(ReqwestTransport::new().unwrap()), delays).unwrap()
}

fn unit() -> FunctionalUnit {
    FunctionalUnit {
        video_id: "v".into(),
        index: 1,
        start_s: 2.0,
        end_s: 5.0,
        transcript_text: "Thousands of customers rated it five stars".into(),
        keyframe_indices: vec![50, 87, 124],
    }
}

#[test]
fn retries_rate_limits_over_http() {
    let (url, seen, server) = scripted_server(vec![
        (429, "{}".into()),
        (429, "{}".into()),
        (200, chat(r#"{"role_id":"social_proof","confidence":0.85,"rationale":"ratings"}"#)),
    ]);
    let delays = Arc::new(Delays::default());
    let ann = annotator(url, delays.clone()).classify_unit(&unit(), &Taxonomy::default()).unwrap();
    server.join().unwrap();
    assert_eq!(ann.role_id.as_str(), "social_proof");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert!(seen.iter().all(|s| s.authorization.as_deref() == Some("Bearer sekrit")));
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(body["model"], "llama-mllm-video");
    assert_eq!(*delays.0.lock().unwrap(), [Duration::from_millis(250), Duration::from_millis(500)]);
}

#[test]
fn server_errors_exhaust_attempts() {
    let (url, seen, server) = scripted_server((0..3).map(|_| (502, "bad gateway".to_string())).collect());
    let err = annotator(url, Arc::default()).classify_unit(&unit(), &Taxonomy::default()).unwrap_err();
    server.join().unwrap();
    assert!(matches!(err, AnnotatorError::AnnotatorUnavailable { attempts: 3, .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn malformed_reply_is_not_retried() {
    let (url, seen, server) = scripted_server(vec![(200, chat("social proof, I think"))]);
    let err = annotator(url, Arc::default()).classify_unit(&unit(), &Taxonomy::default()).unwrap_err();
    server.join().unwrap();
    assert!(matches!(err, AnnotatorError::MalformedModelOutput(_)), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}
