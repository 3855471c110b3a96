//! Deterministic offline providers.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::Deserialize;

use super::{AgentRole, ChatProvider, ChatRequest, ProviderError, ProviderReply};
use crate::text::fnv1a;

/// Entry in the request log kept by [`ScriptedProvider`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRequest {
    pub tag: AgentRole,
    pub prompt: String,
    pub reply: String,
}

/// Replies from a table: exact prompt hashes first, then the first matching
/// regex rule, then the default. Every request is logged.
#[derive(Debug)]
pub struct ScriptedProvider {
    exact: HashMap<u64, String>,
    rules: Vec<(Regex, String)>,
    default: String,
    log: Mutex<Vec<LoggedRequest>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("reading script: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing script: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad pattern {pattern:?}: {source}")]
    Pattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
}

/// File form of a script: `{"rules": [{"pattern", "reply"}], "default"}`.
#[derive(Debug, Deserialize)]
pub struct ScriptFile {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    pub default: String,
}

#[derive(Debug, Deserialize)]
pub struct ScriptRule {
    pub pattern: String,
    pub reply: String,
}

pub fn prompt_hash(prompt: &str) -> u64 {
    fnv1a(0, prompt.as_bytes())
}

impl ScriptedProvider {
    pub fn new(default: impl Into<String>) -> Self {
        Self {
            exact: HashMap::new(),
            rules: Vec::new(),
            default: default.into(),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Add a regex rule matched against the whole prompt text.
    pub fn rule(mut self, pattern: &str, reply: impl Into<String>) -> Result<Self, ScriptError> {
        let re = Regex::new(pattern).map_err(|source| ScriptError::Pattern {
            pattern: pattern.to_string(),
            source,
        })?;
        self.rules.push((re, reply.into()));
        Ok(self)
    }

    /// Reply for one exact prompt, keyed by its hash.
    pub fn exact(mut self, prompt: &str, reply: impl Into<String>) -> Self {
        self.exact.insert(prompt_hash(prompt), reply.into());
        self
    }

    pub fn from_script(script: ScriptFile) -> Result<Self, ScriptError> {
        script
            .rules
            .into_iter()
            .try_fold(Self::new(script.default), |p, r| {
                p.rule(&r.pattern, r.reply)
            })
    }

    pub fn from_file(path: &Path) -> Result<Self, ScriptError> {
        let script: ScriptFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_script(script)
    }

    pub fn lookup(&self, prompt: &str) -> &str {
        if let Some(r) = self.exact.get(&prompt_hash(prompt)) {
            return r;
        }
        self.rules
            .iter()
            .find(|(re, _)| re.is_match(prompt))
            .map_or(self.default.as_str(), |(_, r)| r.as_str())
    }

    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.log.lock().expect("log lock").clone()
    }

    pub fn request_count(&self) -> usize {
        self.log.lock().expect("log lock").len()
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let prompt = request.prompt_text();
        let reply = self.lookup(&prompt).to_string();
        self.log.lock().expect("log lock").push(LoggedRequest {
            tag: request.tag,
            prompt,
            reply: reply.clone(),
        });
        Ok(ProviderReply::text(reply))
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<ProviderReply, ProviderError> + Send + Sync;

/// Provider backed by a closure.
pub struct FnProvider(Box<Responder>);

impl FnProvider {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<ProviderReply, ProviderError> + Send + Sync + 'static,
    {
        Self(Box::new(f))
    }
}

impl ChatProvider for FnProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        (self.0)(request)
    }
}
