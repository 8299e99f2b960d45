//! Blocking client for OpenAI-compatible chat-completion servers.
//!
//! Next-token distributions come from the `logprobs`/`top_logprobs` fields
//! and are capped at the server's logprob width, so FUDGE over a remote model
//! sees at most `top_logprobs_cap` candidates. A generation prefix is sent as
//! a trailing partial assistant message, which only servers that support
//! continuing the final message (`continue_final_message`) honour.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{Candidate, ChatContext, LanguageModel, LmError, NextTokenDistribution};

pub const DEFAULT_API_KEY_ENV: &str = "GRADECHAT_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Base URL up to and including the API version, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub model: String,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
    pub top_logprobs_cap: usize,
    /// Send `top_k`, `repetition_penalty` and prefix-continuation fields,
    /// which vLLM-style servers accept but the reference API rejects.
    pub extended_sampling: bool,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            model: model.into(),
            max_in_flight: 4,
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
            top_logprobs_cap: 20,
            extended_sampling: false,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    in_flight: Mutex<usize>,
    cv: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteChatClient {
    config: RemoteConfig,
    api_key: Option<String>,
    http: Client,
    gate: Gate,
    name: String,
}

impl RemoteChatClient {
    pub fn new(config: RemoteConfig, api_key: Option<String>) -> Result<Self, LmError> {
        if config.max_in_flight == 0 {
            return Err(LmError::InvalidConfig("max_in_flight must be at least 1".into()));
        }
        let http =
            Client::builder().timeout(config.timeout).build().map_err(|e| LmError::InvalidConfig(e.to_string()))?;
        Ok(RemoteChatClient {
            name: format!("remote:{}", config.model),
            gate: Gate { in_flight: Mutex::new(0), cv: Condvar::new(), limit: config.max_in_flight },
            config,
            api_key,
            http,
        })
    }

    /// Reads the credential from the named environment variable, if set.
    pub fn from_env(config: RemoteConfig, key_var: &str) -> Result<Self, LmError> {
        Self::new(config, std::env::var(key_var).ok().filter(|k| !k.is_empty()))
    }

    fn messages(&self, context: &ChatContext, prefix: Option<&str>) -> Vec<Value> {
        // The requested speaker is "assistant"; the other party is "user".
        let mut msgs = vec![json!({"role": "system", "content": context.system_prompt})];
        for turn in &context.turns {
            let role = if turn.role == context.speaker { "assistant" } else { "user" };
            msgs.push(json!({"role": role, "content": turn.text}));
        }
        if let Some(p) = prefix {
            msgs.push(json!({"role": "assistant", "content": p}));
        }
        msgs
    }

    fn body(&self, context: &ChatContext, prefix: Option<&str>) -> Value {
        let g = &context.generation;
        let mut body = json!({
            "model": self.config.model,
            "messages": self.messages(context, prefix),
            "temperature": g.temperature,
            "top_p": g.top_p,
            "max_tokens": g.max_tokens,
        });
        if let Some(seed) = g.seed {
            body["seed"] = json!(seed);
        }
        if self.config.extended_sampling {
            body["top_k"] = json!(g.top_k);
            body["repetition_penalty"] = json!(g.repetition_penalty);
            if prefix.is_some() {
                body["continue_final_message"] = json!(true);
                body["add_generation_prompt"] = json!(false);
            }
        }
        body
    }

    fn post(&self, body: &Value) -> Result<Value, LmError> {
        let _permit = self.gate.acquire();
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut req = self.http.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let err = match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<Value>().map_err(|e| LmError::Transport {
                            message: format!("malformed response: {e}"),
                            retryable: false,
                            attempts: attempt,
                            retry_after_ms: None,
                        });
                    }
                    let retry_after_ms = resp
                        .headers()
                        .get(reqwest::header::RETRY_AFTER)
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.trim().parse::<u64>().ok())
                        .map(|s| s * 1000);
                    let text = resp.text().unwrap_or_default();
                    if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
                        return Err(LmError::Auth(format!("{status}: {text}")));
                    }
                    let retryable = status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error();
                    LmError::Transport {
                        message: format!("{status}: {text}"),
                        retryable,
                        attempts: attempt,
                        retry_after_ms,
                    }
                }
                Err(e) => LmError::Transport {
                    message: e.to_string(),
                    retryable: true,
                    attempts: attempt,
                    retry_after_ms: None,
                },
            };
            let LmError::Transport { retryable, retry_after_ms, .. } = &err else {
                return Err(err);
            };
            if !retryable || attempt > self.config.max_retries {
                return Err(err);
            }
            let wait = retry_after_ms.map(Duration::from_millis).unwrap_or(backoff);
            log::warn!("request failed ({err}); retrying in {wait:?}");
            thread::sleep(wait);
            backoff *= 2;
        }
    }
}

fn capability(provider: &str) -> LmError {
    LmError::Capability { provider: provider.to_string() }
}

impl LanguageModel for RemoteChatClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports_distributions(&self) -> bool {
        true
    }

    fn next_distribution(
        &self,
        context: &ChatContext,
        prefix: &[String],
        k: usize,
    ) -> Result<NextTokenDistribution, LmError> {
        if k == 0 {
            return Err(LmError::InvalidConfig("k must be at least 1".into()));
        }
        let width = k.min(self.config.top_logprobs_cap);
        let joined = prefix.concat();
        let mut body = self.body(context, (!prefix.is_empty()).then_some(joined.as_str()));
        body["max_tokens"] = json!(1);
        body["temperature"] = json!(1.0);
        body["top_p"] = json!(1.0);
        body["logprobs"] = json!(true);
        body["top_logprobs"] = json!(width);
        let resp = self.post(&body)?;
        let top = resp
            .pointer("/choices/0/logprobs/content/0/top_logprobs")
            .and_then(Value::as_array)
            .ok_or_else(|| capability(&self.name))?;
        let candidates = top
            .iter()
            .enumerate()
            .filter_map(|(rank, entry)| {
                let text = entry.get("token")?.as_str()?.to_string();
                let log_prob = entry.get("logprob")?.as_f64()?;
                log_prob.is_finite().then_some(Candidate { token_id: rank as u32, text, log_prob })
            })
            .collect::<Vec<_>>();
        if candidates.is_empty() {
            return Err(capability(&self.name));
        }
        Ok(NextTokenDistribution::top_k(candidates, width))
    }

    fn complete(&self, context: &ChatContext) -> Result<String, LmError> {
        context.generation.validate()?;
        if context.is_empty() {
            return Err(LmError::EmptyContext);
        }
        let resp = self.post(&self.body(context, None))?;
        resp.pointer("/choices/0/message/content").and_then(Value::as_str).map(|s| s.trim().to_string()).ok_or_else(
            || LmError::Transport {
                message: "response has no message content".into(),
                retryable: false,
                attempts: 1,
                retry_after_ms: None,
            },
        )
    }
}
