//! Chat-completions client.
//!
//! Requests are `{model, messages, temperature: 0}`; the assistant message
//! must be a single JSON object matching the call's schema. 429, 5xx and
//! transport failures are retried with `backoff_base_s * 2^k` delays; a 200
//! whose body does not parse fails immediately.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    Annotator, AnnotatorConfig, AnnotatorError, ClusterSummary, StoryVerdict, UnitAnnotation,
};
use crate::ingest::Transcript;
use crate::segmentation::FunctionalUnit;
use crate::taxonomy::{render_role_prompt, RoleId, Taxonomy};

pub const TOKEN_ENV: &str = "ADSTORY_ANNOTATOR_TOKEN";
pub const DEBUG_ENV: &str = "ADSTORY_DEBUG";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Connection-level failure (refused, reset, timed out).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportError(pub String);

pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, delay: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, delay: Duration) {
        std::thread::sleep(delay);
    }
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, AnnotatorError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| AnnotatorError::Config(format!("http client: {e}")))?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let mut req = self
            .client
            .post(url)
            .timeout(timeout)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Counting semaphore capping concurrent requests across all callers.
pub struct InFlightGate {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightPermit<'a> {
    gate: &'a InFlightGate,
}

impl InFlightGate {
    pub fn new(limit: usize) -> Self {
        InFlightGate {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        InFlightPermit { gate: self }
    }
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut active = self.gate.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.gate.freed.notify_one();
    }
}

/// Delay before retry number `retry` (0-based).
pub fn backoff_delay(base_s: f64, retry: u32) -> Duration {
    Duration::from_secs_f64(base_s * 2f64.powi(retry as i32))
}

#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub story: String,
    pub classify: String,
    pub summarize: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            story: include_str!("../../data/prompts/story_v1.txt").to_string(),
            classify: include_str!("../../data/prompts/classify_v1.txt").to_string(),
            summarize: include_str!("../../data/prompts/summarize_v1.txt").to_string(),
        }
    }
}

fn fill(template: &str, vars: &[(&str, String)]) -> String {
    vars.iter().fold(template.to_string(), |acc, (k, v)| {
        acc.replace(&format!("{{{{{k}}}}}"), v)
    })
}

#[derive(Deserialize)]
struct ChatEnvelope {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RoleReply {
    role_id: String,
    confidence: f64,
    rationale: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StoryReply {
    has_story: bool,
    rationale: String,
    signals: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NameReply {
    name: String,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<serde_json::Value>,
    temperature: u8,
}

pub struct RemoteAnnotator {
    config: AnnotatorConfig,
    endpoint: String,
    token: Option<String>,
    debug: bool,
    transport: Arc<dyn Transport>,
    sleeper: Arc<dyn Sleeper>,
    gate: InFlightGate,
    prompts: PromptTemplates,
}

impl RemoteAnnotator {
    pub fn new(
        config: AnnotatorConfig,
        token: Option<String>,
        transport: Arc<dyn Transport>,
        sleeper: Arc<dyn Sleeper>,
    ) -> Result<Self, AnnotatorError> {
        config.validate()?;
        let endpoint = config
            .endpoint_url
            .clone()
            .ok_or_else(|| AnnotatorError::Config("remote annotator requires endpoint_url".into()))?;
        Ok(RemoteAnnotator {
            gate: InFlightGate::new(config.max_in_flight),
            config,
            endpoint,
            token,
            debug: false,
            transport,
            sleeper,
            prompts: PromptTemplates::default(),
        })
    }

    /// Reads the bearer token and debug flag from the environment.
    pub fn from_env(
        config: AnnotatorConfig,
        transport: Arc<dyn Transport>,
        sleeper: Arc<dyn Sleeper>,
    ) -> Result<Self, AnnotatorError> {
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        let mut annotator = Self::new(config, token, transport, sleeper)?;
        annotator.debug = std::env::var(DEBUG_ENV).is_ok_and(|v| v == "1");
        Ok(annotator)
    }

    pub fn with_debug(mut self, debug: bool) -> Self {
        self.debug = debug;
        self
    }

    pub fn with_prompts(mut self, prompts: PromptTemplates) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn request_body(&self, system: &str, user: &str) -> String {
        let req = ChatRequest {
            model: &self.config.model_name,
            messages: vec![
                json!({"role": "system", "content": system}),
                json!({"role": "user", "content": user}),
            ],
            temperature: 0,
        };
        serde_json::to_string(&req).expect("request serializes")
    }

    /// Sends one prompt with retries and returns the assistant content.
    fn complete(&self, system: &str, user: &str) -> Result<String, AnnotatorError> {
        let body = self.request_body(system, user);
        let timeout = Duration::from_secs_f64(self.config.timeout_s);
        let max_attempts = self.config.max_attempts;
        let mut last_failure = String::new();
        for attempt in 1..=max_attempts {
            if self.debug {
                log::info!(
                    "annotator request #{attempt} to {} (Authorization: {}): {body}",
                    self.endpoint,
                    if self.token.is_some() { "Bearer <redacted>" } else { "none" }
                );
            }
            let result = {
                let _permit = self.gate.acquire();
                self.transport
                    .post_json(&self.endpoint, self.token.as_deref(), &body, timeout)
            };
            match result {
                Ok(resp) if resp.status == 200 => {
                    if self.debug {
                        log::info!("annotator response #{attempt}: {}", resp.body);
                    }
                    let envelope: ChatEnvelope = serde_json::from_str(&resp.body)
                        .map_err(|e| AnnotatorError::MalformedModelOutput(format!("envelope: {e}")))?;
                    return envelope
                        .choices
                        .into_iter()
                        .next()
                        .map(|c| c.message.content)
                        .ok_or_else(|| AnnotatorError::MalformedModelOutput("no choices".into()));
                }
                Ok(resp) if resp.status == 429 || (500..600).contains(&resp.status) => {
                    if self.debug {
                        log::info!("annotator response #{attempt}: HTTP {} {}", resp.status, resp.body);
                    }
                    last_failure = format!("HTTP {}", resp.status);
                }
                Ok(resp) => {
                    return Err(AnnotatorError::AnnotatorUnavailable {
                        attempts: attempt,
                        detail: format!("non-retryable HTTP {}: {}", resp.status, resp.body),
                    });
                }
                Err(TransportError(e)) => last_failure = e,
            }
            if attempt < max_attempts {
                self.sleeper
                    .sleep(backoff_delay(self.config.backoff_base_s, attempt - 1));
            }
        }
        Err(AnnotatorError::AnnotatorUnavailable {
            attempts: max_attempts,
            detail: last_failure,
        })
    }

    fn complete_as<T: DeserializeOwned>(&self, system: &str, user: &str) -> Result<T, AnnotatorError> {
        let content = self.complete(system, user)?;
        serde_json::from_str(content.trim())
            .map_err(|e| AnnotatorError::MalformedModelOutput(format!("{e}: {content}")))
    }
}

const SYSTEM_PROMPT: &str =
    "You are an advertising creative strategist. Answer with a single JSON object only.";

fn describe_units(units: &[FunctionalUnit]) -> String {
    units
        .iter()
        .map(|u| {
            format!(
                "Unit {} [{:.2}s-{:.2}s] keyframes {:?}: {}",
                u.index,
                u.start_s,
                u.end_s,
                u.keyframe_indices,
                if u.transcript_text.is_empty() { "(no speech)" } else { &u.transcript_text }
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

impl Annotator for RemoteAnnotator {
    fn kind(&self) -> &str {
        "remote"
    }

    fn detect_story(
        &self,
        video_id: &str,
        units: &[FunctionalUnit],
        transcript: &Transcript,
    ) -> Result<StoryVerdict, AnnotatorError> {
        if units.is_empty() {
            return Err(AnnotatorError::EmptyVideo);
        }
        let user = fill(
            &self.prompts.story,
            &[
                ("units", describe_units(units)),
                ("transcript", transcript.text()),
            ],
        );
        let reply: StoryReply = self.complete_as(SYSTEM_PROMPT, &user)?;
        Ok(StoryVerdict {
            video_id: video_id.to_string(),
            has_story: reply.has_story,
            rationale: reply.rationale,
            signals: reply.signals,
        })
    }

    fn classify_unit(
        &self,
        unit: &FunctionalUnit,
        taxonomy: &Taxonomy,
    ) -> Result<UnitAnnotation, AnnotatorError> {
        let user = fill(
            &self.prompts.classify,
            &[
                ("taxonomy", render_role_prompt(taxonomy)),
                ("unit_index", unit.index.to_string()),
                ("start_s", format!("{:.2}", unit.start_s)),
                ("end_s", format!("{:.2}", unit.end_s)),
                ("keyframes", format!("{:?}", unit.keyframe_indices)),
                (
                    "unit_text",
                    if unit.transcript_text.is_empty() {
                        "(no speech)".into()
                    } else {
                        unit.transcript_text.clone()
                    },
                ),
            ],
        );
        let reply: RoleReply = self.complete_as(SYSTEM_PROMPT, &user)?;
        if !(0.0..=1.0).contains(&reply.confidence) {
            return Err(AnnotatorError::MalformedModelOutput(format!(
                "confidence {} outside [0, 1]",
                reply.confidence
            )));
        }
        if !taxonomy.contains(&reply.role_id) {
            return Err(AnnotatorError::UnknownRoleReturned(reply.role_id));
        }
        Ok(UnitAnnotation {
            video_id: unit.video_id.clone(),
            unit_index: unit.index,
            role_id: RoleId::new(reply.role_id),
            confidence: reply.confidence,
            rationale: reply.rationale,
        })
    }

    fn propose_name(
        &self,
        summary: &ClusterSummary,
        taxonomy: &Taxonomy,
    ) -> Result<String, AnnotatorError> {
        let sequence = summary
            .representative
            .iter()
            .map(|r| format!("{} ({r})", taxonomy.display_name(r.as_str())))
            .collect::<Vec<_>>()
            .join(" -> ");
        let user = fill(
            &self.prompts.summarize,
            &[
                ("member_count", summary.member_count.to_string()),
                ("sequence", sequence),
            ],
        );
        let reply: NameReply = self.complete_as(SYSTEM_PROMPT, &user)?;
        if reply.name.trim().is_empty() {
            return Err(AnnotatorError::MalformedModelOutput("empty name".into()));
        }
        Ok(reply.name.trim().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Scripted {
        replies: Mutex<Vec<Result<HttpResponse, TransportError>>>,
        calls: AtomicUsize,
        bodies: Mutex<Vec<String>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<HttpResponse, TransportError>>) -> Arc<Self> {
            Arc::new(Scripted {
                replies: Mutex::new(replies.into_iter().rev().collect()),
                calls: AtomicUsize::new(0),
                bodies: Mutex::new(Vec::new()),
            })
        }
    }

    impl Transport for Scripted {
        fn post_json(&self, _: &str, _: Option<&str>, body: &str, _: Duration) -> Result<HttpResponse, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.bodies.lock().unwrap().push(body.to_string());
            self.replies.lock().unwrap().pop().expect("script exhausted")
        }
    }

    #[derive(Default)]
    struct Recorder(Mutex<Vec<Duration>>);

    impl Sleeper for Recorder {
        fn sleep(&self, d: Duration) {
            self.0.lock().unwrap().push(d);
        }
    }

    fn chat(content: &str) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status: 200,
            body: json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string(),
        })
    }

    fn status(code: u16) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status: code,
            body: "busy".into(),
        })
    }

    fn annotator(t: Arc<Scripted>, s: Arc<Recorder>) -> RemoteAnnotator {
        let cfg = AnnotatorConfig {
            kind: "remote".into(),
            endpoint_url: Some("http://fake/v1/chat/completions".into()),
            ..Default::default()
        };
        RemoteAnnotator::new(cfg, Some("secret".into()), t, s).unwrap()
    }

    fn unit() -> FunctionalUnit {
        FunctionalUnit {
            video_id: "v".into(),
            index: 2,
            start_s: 4.0,
            end_s: 6.5,
            transcript_text: "Only 50 left in stock".into(),
            keyframe_indices: vec![120, 157, 194],
        }
    }

    #[test]
    fn retries_rate_limits_with_geometric_backoff() {
        let t = Scripted::new(vec![
            status(429),
            status(429),
            chat(r#"{"role_id":"scarcity_trigger","confidence":0.9,"rationale":"stock"}"#),
        ]);
        let s = Arc::new(Recorder::default());
        let a = annotator(t.clone(), s.clone());
        let ann = a.classify_unit(&unit(), &Taxonomy::default()).unwrap();
        assert_eq!(ann.role_id.as_str(), "scarcity_trigger");
        assert_eq!(ann.unit_index, 2);
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
        assert_eq!(*s.0.lock().unwrap(), vec![Duration::from_millis(500), Duration::from_secs(1)]);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let t = Scripted::new((0..5).map(|_| status(503)).collect());
        let s = Arc::new(Recorder::default());
        let err = annotator(t.clone(), s.clone())
            .classify_unit(&unit(), &Taxonomy::default())
            .unwrap_err();
        assert!(matches!(err, AnnotatorError::AnnotatorUnavailable { attempts: 5, .. }));
        assert_eq!(t.calls.load(Ordering::SeqCst), 5);
        let delays: Vec<f64> = s.0.lock().unwrap().iter().map(|d| d.as_secs_f64()).collect();
        assert_eq!(delays, vec![0.5, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn transport_errors_are_retried() {
        let t = Scripted::new(vec![
            Err(TransportError("connection refused".into())),
            chat(r#"{"name":"Problem–Solution"}"#),
        ]);
        let s = Arc::new(Recorder::default());
        let summary = ClusterSummary {
            cluster_id: "c1".into(),
            representative: vec!["problem_setup".into(), "solution_reveal".into()],
            member_count: 4,
        };
        let name = annotator(t.clone(), s).propose_name(&summary, &Taxonomy::default()).unwrap();
        assert_eq!(name, "Problem–Solution");
        assert_eq!(t.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn malformed_body_fails_fast() {
        for reply in [
            Ok(HttpResponse { status: 200, body: "<html>".into() }),
            chat("Sure! The role is hook."),
            chat(r#"{"role_id":"hook","confidence":0.9}"#),
            chat(r#"{"role_id":"hook","confidence":0.9,"rationale":"x","extra":1}"#),
            chat(r#"{"role_id":"hook","confidence":1.5,"rationale":"x"}"#),
        ] {
            let t = Scripted::new(vec![reply]);
            let s = Arc::new(Recorder::default());
            let err = annotator(t.clone(), s.clone())
                .classify_unit(&unit(), &Taxonomy::default())
                .unwrap_err();
            assert!(matches!(err, AnnotatorError::MalformedModelOutput(_)), "{err:?}");
            assert_eq!(t.calls.load(Ordering::SeqCst), 1);
            assert!(s.0.lock().unwrap().is_empty());
        }
    }

    #[test]
    fn unknown_role_is_reported() {
        let t = Scripted::new(vec![chat(r#"{"role_id":"plot_twist","confidence":0.4,"rationale":"x"}"#)]);
        let err = annotator(t, Arc::new(Recorder::default()))
            .classify_unit(&unit(), &Taxonomy::default())
            .unwrap_err();
        assert_eq!(err, AnnotatorError::UnknownRoleReturned("plot_twist".into()));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = Scripted::new(vec![status(401)]);
        let err = annotator(t.clone(), Arc::new(Recorder::default()))
            .classify_unit(&unit(), &Taxonomy::default())
            .unwrap_err();
        assert!(matches!(err, AnnotatorError::AnnotatorUnavailable { attempts: 1, .. }));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn prompts_carry_definition_and_taxonomy() {
        let t = Scripted::new(vec![
            chat(r#"{"has_story":true,"rationale":"arc","signals":["dialogue"]}"#),
            chat(r#"{"role_id":"scarcity_trigger","confidence":0.9,"rationale":"stock"}"#),
        ]);
        let a = annotator(t.clone(), Arc::new(Recorder::default()));
        let v = a.detect_story("v", &[unit()], &Transcript::empty("v")).unwrap();
        assert!(v.has_story);
        assert_eq!(v.signals, ["dialogue"]);
        a.classify_unit(&unit(), &Taxonomy::default()).unwrap();

        let bodies = t.bodies.lock().unwrap();
        let story: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(story["temperature"], 0);
        assert_eq!(story["model"], "llama-mllm-video");
        let story_prompt = story["messages"][1]["content"].as_str().unwrap();
        assert!(story_prompt.contains(
            "an account of an event or a sequence of connected events that leads to a transition from an initial state to a later stage or outcome"
        ));
        let classify: serde_json::Value = serde_json::from_str(&bodies[1]).unwrap();
        let prompt = classify["messages"][1]["content"].as_str().unwrap();
        assert!(prompt.contains(&render_role_prompt(&Taxonomy::default())));
        assert!(prompt.contains("keyframes [120, 157, 194]"));
        assert!(!prompt.contains("{{"));
    }

    #[test]
    fn gate_caps_concurrency() {
        use rayon::prelude::*;
        struct Slow {
            active: AtomicUsize,
            peak: AtomicUsize,
        }
        impl Transport for Slow {
            fn post_json(&self, _: &str, _: Option<&str>, _: &str, _: Duration) -> Result<HttpResponse, TransportError> {
                let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                self.active.fetch_sub(1, Ordering::SeqCst);
                chat(r#"{"role_id":"hook","confidence":0.5,"rationale":"x"}"#)
            }
        }
        let slow = Arc::new(Slow {
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let cfg = AnnotatorConfig {
            kind: "remote".into(),
            endpoint_url: Some("http://fake".into()),
            max_in_flight: 2,
            ..Default::default()
        };
        let a = RemoteAnnotator::new(cfg, None, slow.clone(), Arc::new(ThreadSleeper)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        pool.install(|| {
            (0..32).into_par_iter().for_each(|_| {
                a.classify_unit(&unit(), &Taxonomy::default()).unwrap();
            })
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
        assert!(slow.peak.load(Ordering::SeqCst) >= 1);
    }
}
