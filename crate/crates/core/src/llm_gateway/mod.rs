//! Provider abstraction for the manager, worker and relevance roles.
//!
//! A [`Gateway`] routes each [`ChatRequest`] by its [`AgentRole`] tag to a
//! [`ChatProvider`], bounding in-flight requests per role, retrying transient
//! failures with exponential backoff and accounting tokens in a
//! [`UsageLedger`]. Offline providers live in [`scripted`] and [`sim`].

pub mod http;
pub mod scripted;
pub mod sim;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use http::HttpProvider;
pub use scripted::{FnProvider, ScriptedProvider};
pub use sim::SimulatedProvider;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Manager,
    Worker,
    Relevance,
}

impl AgentRole {
    pub const ALL: [AgentRole; 3] = [AgentRole::Manager, AgentRole::Worker, AgentRole::Relevance];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Manager => "manager",
            AgentRole::Worker => "worker",
            AgentRole::Relevance => "relevance",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: MessageRole,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    /// `None` uses the route's default temperature.
    pub temperature: Option<f64>,
    pub max_output_tokens: u32,
    pub tag: AgentRole,
}

impl ChatRequest {
    /// Single user-message request.
    pub fn user(tag: AgentRole, prompt: impl Into<String>) -> Self {
        Self {
            messages: vec![Message {
                role: MessageRole::User,
                content: prompt.into(),
            }],
            temperature: None,
            max_output_tokens: 2048,
            tag,
        }
    }

    /// All message contents joined with blank lines; what pattern rules match.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.input + self.output
    }

    /// Rough count for providers that do not report usage: ~4 chars per token.
    pub fn estimate(prompt: &str, reply: &str) -> Self {
        let est = |s: &str| (s.chars().count() as u64).div_ceil(4);
        Self {
            input: est(prompt),
            output: est(reply),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub text: String,
    pub usage: Option<TokenUsage>,
}

impl ProviderReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            usage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    /// Worth retrying: timeouts, rate limits, 5xx.
    #[error("transient: {0}")]
    Transient(String),
    #[error("fatal: {0}")]
    Fatal(String),
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for Arc<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteConfig {
    pub max_in_flight: usize,
    /// Retries after the first attempt.
    pub retry_cap: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub temperature: f64,
}

impl RouteConfig {
    pub fn for_role(role: AgentRole) -> Self {
        Self {
            max_in_flight: 8,
            retry_cap: 3,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            temperature: match role {
                AgentRole::Manager => 0.7,
                AgentRole::Worker | AgentRole::Relevance => 0.0,
            },
        }
    }

    /// No backoff sleeps; for offline providers and tests.
    pub fn immediate(mut self) -> Self {
        self.base_delay_ms = 0;
        self.max_delay_ms = 0;
        self
    }

    fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("no provider configured for role {0}")]
    NoRoute(AgentRole),
    #[error("request has no messages")]
    EmptyRequest,
    #[error("{role} request {correlation_id} failed after {} attempt(s): {}", attempts.len(), attempts.join("; "))]
    Transport {
        role: AgentRole,
        correlation_id: u64,
        attempts: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub correlation_id: u64,
    pub text: String,
    pub usage: TokenUsage,
    pub attempts: u32,
}

/// Per-role token counters. Counts only grow.
#[derive(Debug, Default)]
pub struct UsageLedger {
    inner: Mutex<BTreeMap<AgentRole, TokenUsage>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageReport {
    pub per_role: BTreeMap<AgentRole, TokenUsage>,
    pub total: TokenUsage,
}

impl UsageLedger {
    pub fn add(&self, role: AgentRole, usage: TokenUsage) {
        let mut m = self.inner.lock().expect("ledger lock");
        let e = m.entry(role).or_default();
        e.input += usage.input;
        e.output += usage.output;
    }

    pub fn report(&self) -> UsageReport {
        let per_role = self.inner.lock().expect("ledger lock").clone();
        let total = per_role
            .values()
            .fold(TokenUsage::default(), |acc, u| TokenUsage {
                input: acc.input + u.input,
                output: acc.output + u.output,
            });
        UsageReport { per_role, total }
    }
}

/// Counting semaphore bounding concurrent requests on one route.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    count: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            count: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.count.lock().expect("in-flight lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("in-flight lock");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

struct Route {
    provider: Arc<dyn ChatProvider>,
    config: RouteConfig,
    in_flight: InFlight,
}

/// Role-routed, rate-limited, retrying front door to the model providers.
/// Shareable across threads.
#[derive(Default)]
pub struct Gateway {
    routes: BTreeMap<AgentRole, Route>,
    ledger: UsageLedger,
    next_id: AtomicU64,
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_route(
        mut self,
        role: AgentRole,
        provider: Arc<dyn ChatProvider>,
        config: RouteConfig,
    ) -> Self {
        self.routes.insert(
            role,
            Route {
                provider,
                in_flight: InFlight::new(config.max_in_flight),
                config,
            },
        );
        self
    }

    /// Same provider on every role, with immediate retries.
    pub fn single(provider: Arc<dyn ChatProvider>) -> Self {
        AgentRole::ALL.iter().fold(Self::new(), |g, &r| {
            g.with_route(r, provider.clone(), RouteConfig::for_role(r).immediate())
        })
    }

    pub fn max_in_flight(&self, role: AgentRole) -> usize {
        self.routes.get(&role).map_or(1, |r| r.in_flight.limit)
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        if request.messages.is_empty() {
            return Err(GatewayError::EmptyRequest);
        }
        let route = self
            .routes
            .get(&request.tag)
            .ok_or(GatewayError::NoRoute(request.tag))?;
        let correlation_id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut req = request.clone();
        if req.temperature.is_none() {
            req.temperature = Some(route.config.temperature);
        }

        let mut attempts = Vec::new();
        for attempt in 0..=route.config.retry_cap {
            if attempt > 0 {
                std::thread::sleep(route.config.delay(attempt - 1));
            }
            let result = {
                let _permit = route.in_flight.acquire();
                route.provider.complete(&req)
            };
            match result {
                Ok(reply) => {
                    let usage = reply
                        .usage
                        .unwrap_or_else(|| TokenUsage::estimate(&req.prompt_text(), &reply.text));
                    self.ledger.add(req.tag, usage);
                    return Ok(Completion {
                        correlation_id,
                        text: reply.text,
                        usage,
                        attempts: attempt + 1,
                    });
                }
                Err(ProviderError::Transient(msg)) => {
                    log::debug!(
                        "{} request {correlation_id} attempt {}: {msg}",
                        req.tag,
                        attempt + 1
                    );
                    attempts.push(msg);
                }
                Err(ProviderError::Fatal(msg)) => {
                    attempts.push(msg);
                    break;
                }
            }
        }
        Err(GatewayError::Transport {
            role: req.tag,
            correlation_id,
            attempts,
        })
    }

    pub fn usage(&self) -> UsageReport {
        self.ledger.report()
    }
}
