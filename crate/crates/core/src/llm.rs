//! Chat-completion clients: an OpenAI-compatible HTTP client with retry,
//! and a deterministic mock for tests and offline pipeline runs.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::bm25::tokenize;
use crate::embedder::fnv1a64;
use crate::error::{Error, Result};
use crate::retry::{classify_ureq, with_retries, AttemptError, RetryPolicy};
use crate::toy::COMMON_WORDS;

/// One chat request; `system` may be empty.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
}

/// A synchronous chat-completion backend. Implementations must be safe to
/// call from several worker threads at once.
pub trait ChatClient: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse>;
}

/// Connection settings for an OpenAI-compatible chat endpoint.
#[derive(Debug, Clone)]
pub struct LlmEndpoint {
    /// Base URL up to but not including `/chat/completions`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub retry: RetryPolicy,
    pub timeout: Duration,
}

pub struct HttpChatClient {
    agent: ureq::Agent,
    endpoint: LlmEndpoint,
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl HttpChatClient {
    pub fn new(endpoint: LlmEndpoint) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .build();
        HttpChatClient {
            agent: config.into(),
            endpoint,
        }
    }
}

impl ChatClient for HttpChatClient {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let url = format!(
            "{}/chat/completions",
            self.endpoint.base_url.trim_end_matches('/')
        );
        let mut messages = Vec::new();
        if !request.system.is_empty() {
            messages.push(json!({"role": "system", "content": request.system}));
        }
        messages.push(json!({"role": "user", "content": request.user}));
        let body = json!({
            "model": self.endpoint.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });

        with_retries(&self.endpoint.retry, "chat completion", || {
            let mut req = self
                .agent
                .post(&url)
                .header("content-type", "application/json");
            if let Some(key) = &self.endpoint.api_key {
                req = req.header("authorization", &format!("Bearer {key}"));
            }
            let mut response = req.send_json(&body).map_err(classify_ureq)?;
            let parsed: ChatCompletionResponse = response
                .body_mut()
                .read_json()
                .map_err(|e| AttemptError::Fatal(Error::MalformedResponse(e.to_string())))?;
            let text = parsed
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .ok_or_else(|| {
                    AttemptError::Fatal(Error::MalformedResponse(
                        "response carried no completion text".to_string(),
                    ))
                })?;
            Ok(ChatResponse { text })
        })
    }
}

/// Deterministic offline chat client.
///
/// Two modes: `scripted` replays canned responses in call order (unit
/// tests); `simulator` deterministically emulates a user of a workplace
/// corpus — it writes persona-styled queries from a document prompt and
/// answers YES/NO verification prompts by lexical coverage. The simulator
/// understands the default prompt templates.
pub struct MockChatClient {
    mode: MockMode,
    calls: AtomicU64,
}

enum MockMode {
    Scripted(Mutex<VecDeque<String>>),
    Simulator,
}

impl MockChatClient {
    pub fn scripted<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MockChatClient {
            mode: MockMode::Scripted(Mutex::new(
                responses.into_iter().map(Into::into).collect(),
            )),
            calls: AtomicU64::new(0),
        }
    }

    pub fn simulator() -> Self {
        MockChatClient {
            mode: MockMode::Simulator,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for MockChatClient {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.mode {
            MockMode::Scripted(queue) => {
                let mut queue = queue.lock().unwrap();
                queue
                    .pop_front()
                    .map(|text| ChatResponse { text })
                    .ok_or_else(|| Error::Endpoint("mock script exhausted".to_string()))
            }
            MockMode::Simulator => Ok(ChatResponse {
                text: simulate(&request.user),
            }),
        }
    }
}

/// Words the simulated user adds for phrasing; stripped before judging
/// lexical coverage in verification.
const FUNCTION_WORDS: &[&str] = &[
    "what", "is", "known", "about", "find", "the", "a", "an", "for", "of", "to", "how", "who",
];

fn section_after<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.find(marker).map(|i| &text[i + marker.len()..])
}

fn simulate(user: &str) -> String {
    if user.contains("Answer YES or NO") {
        simulate_verification(user)
    } else {
        simulate_generation(user)
    }
}

fn simulate_verification(user: &str) -> String {
    let query = section_after(user, "Query: ")
        .and_then(|rest| rest.lines().next())
        .unwrap_or("");
    let mut document = section_after(user, "Document:\n").unwrap_or("");
    if let Some(cut) = document.rfind("\nDoes this document answer") {
        document = &document[..cut];
    }
    let doc_tokens = tokenize(document);
    let content: Vec<String> = tokenize(query)
        .into_iter()
        .filter(|t| !FUNCTION_WORDS.contains(&t.as_str()))
        .collect();
    let answers = !content.is_empty() && content.iter().all(|t| doc_tokens.contains(t));
    if answers { "YES" } else { "NO" }.to_string()
}

fn simulate_generation(user: &str) -> String {
    let document = match section_after(user, "Document:\n") {
        Some(d) => d,
        None => return "I cannot help with that.".to_string(),
    };
    let tokens = tokenize(document);
    if tokens.is_empty() {
        return "I cannot help with that.".to_string();
    }
    let instruction = user.lines().next().unwrap_or("").to_lowercase();
    let count = parse_requested_count(user).unwrap_or(1);

    let mut lines = Vec::with_capacity(count);
    for k in 0..count {
        let h = fnv1a64(document.as_bytes())
            ^ fnv1a64(instruction.as_bytes())
            ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let doc_at = |salt: u64| -> &str {
            let i = (h.wrapping_mul(salt) >> 7) as usize % tokens.len();
            tokens[i].as_str()
        };
        let common_at = |salt: u64| -> &str {
            let i = (h.wrapping_mul(salt) >> 9) as usize % COMMON_WORDS.len();
            COMMON_WORDS[i]
        };
        let query = if instruction.contains("keyword") {
            format!("{} {} {}", doc_at(3), doc_at(11), common_at(5))
        } else if instruction.contains("question") || instruction.contains("open") {
            format!(
                "what is known about {} {} {} {}",
                doc_at(7),
                doc_at(13),
                common_at(17),
                common_at(23)
            )
        } else if instruction.contains("task") {
            format!("find {} {} {}", doc_at(19), common_at(29), common_at(31))
        } else {
            format!("{} {} {}", doc_at(37), doc_at(41), common_at(43))
        };
        lines.push(format!("{}. {}", k + 1, query));
    }
    lines.join("\n")
}

fn parse_requested_count(user: &str) -> Option<usize> {
    let rest = section_after(user, "Write ")?;
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}
