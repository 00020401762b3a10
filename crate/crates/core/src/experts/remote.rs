use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ExpertError, ExpertQuery, ExpertResponse, QueryQuality};

/// Environment variable holding the bearer credential for remote experts.
pub const API_KEY_ENV: &str = "CORL_EXPERT_API_KEY";

/// A chat-completions endpoint acting as one expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteEndpoint {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub retries: u32,
    #[serde(default = "default_vocab")]
    pub answer_vocab: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_vocab() -> u32 {
    crate::taskgen::DEFAULT_ANSWER_VOCAB
}

fn default_temperature() -> f64 {
    1.0
}

impl RemoteEndpoint {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout_secs: default_timeout_secs(),
            retries: 0,
            answer_vocab: default_vocab(),
            temperature: default_temperature(),
        }
    }
}

/// Returns the last run of decimal digits in `reply` if it names an answer
/// in `[0, vocab)`.
pub fn extract_answer(reply: &str, vocab: u32) -> Option<u32> {
    static DIGITS: OnceLock<Regex> = OnceLock::new();
    let re = DIGITS.get_or_init(|| Regex::new(r"\d+").expect("static regex"));
    let last = re.find_iter(reply).last()?;
    last.as_str().parse::<u32>().ok().filter(|a| *a < vocab)
}

pub(crate) fn query_text(query: &ExpertQuery) -> String {
    let style = match query.quality {
        QueryQuality::Plain => "",
        QueryQuality::Refined => {
            " Work through the problem step by step, check each intermediate result, and only then commit."
        }
    };
    format!(
        "Solve problem #{} (difficulty {:.2}).{} Finish with the final answer as a single integer in [0, {}).",
        query.task_id,
        query.difficulty,
        style,
        query.answer_vocab
    )
}

fn usage_count(body: &Value, field: &'static str) -> Result<u32, ExpertError> {
    body.get("usage")
        .and_then(|u| u.get(field))
        .and_then(Value::as_u64)
        .and_then(|n| u32::try_from(n).ok())
        .ok_or(ExpertError::MissingUsage(field))
}

/// Sends one chat-completions request and maps the reply to an
/// [`ExpertResponse`]. The returned `expert_index` is 0; pools overwrite it.
pub fn remote_query(
    endpoint: &RemoteEndpoint,
    query_text: &str,
) -> Result<ExpertResponse, ExpertError> {
    let key = std::env::var(API_KEY_ENV).map_err(|_| ExpertError::MissingCredential(API_KEY_ENV))?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into();
    let request = json!({
        "model": endpoint.model,
        "messages": [{"role": "user", "content": query_text}],
        "temperature": endpoint.temperature,
    });
    let mut response = agent
        .post(&endpoint.endpoint)
        .header("Authorization", &format!("Bearer {key}"))
        .send_json(&request)
        .map_err(|e| ExpertError::Transport(e.to_string()))?;
    let status = response.status().as_u16();
    if !(200..300).contains(&status) {
        return Err(ExpertError::Status(status));
    }
    let body: Value = response
        .body_mut()
        .read_json()
        .map_err(|e| ExpertError::MalformedBody(e.to_string()))?;
    let content = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ExpertError::MalformedBody("missing choices[0].message.content".into()))?;
    let input_tokens = usage_count(&body, "prompt_tokens")?;
    let output_tokens = usage_count(&body, "completion_tokens")?;
    let proposed_answer =
        extract_answer(content, endpoint.answer_vocab).ok_or_else(|| ExpertError::UnparseableAnswer {
            reply: content.to_string(),
            vocab: endpoint.answer_vocab,
        })?;
    Ok(ExpertResponse {
        expert_index: 0,
        proposed_answer,
        input_tokens,
        output_tokens,
        response_tokens: vec![proposed_answer; output_tokens as usize],
    })
}
