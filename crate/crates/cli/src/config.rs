//! Run configuration: per-domain defaults, JSON overrides and validation.
//!
//! Resolution order, later wins: domain defaults, the run directory's
//! `config.json` snapshot, `--config <file>`, then command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use qcrit_core::evolution::EvolutionConfig;
use qcrit_core::llm_gateway::http::HttpEndpoint;
use qcrit_core::llm_gateway::{
    AgentRole, ChatProvider, Gateway, HttpProvider, RouteConfig, ScriptedProvider,
    SimulatedProvider,
};
use qcrit_core::prompts::Domain;
use qcrit_core::scorer::{Featurizer, TrainConfig};
use qcrit_core::selector::default_temperature;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub domain: Domain,
    /// Line-delimited `{"id", "text", "meta"}` records; read by `ingest`.
    pub corpus: Option<PathBuf>,
    /// Criteria seed records; the bundled knowledge base when unset.
    pub criteria_seeds: Option<PathBuf>,
    pub seed: u64,
    pub pairs: PairCounts,
    pub gold: GoldSource,
    /// Test pairs need this many unanimous annotators to keep a gold label.
    pub min_test_annotators: usize,
    pub evolution: EvolutionConfig,
    pub scorer: ScorerSettings,
    pub selection: SelectionSettings,
    pub providers: Providers,
    pub serve: ServeSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCounts {
    pub human: usize,
    pub test: usize,
    pub agent: usize,
    pub buckets: usize,
}

/// Where gold labels for the human and test splits come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldSource {
    /// `labels.jsonl`, written by `annotate-serve`.
    Labels,
    /// Simulated annotators that follow the offline provider's hidden quality
    /// function. For offline demos and tests only.
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerSettings {
    pub featurizer: Featurizer,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSettings {
    pub temperature: f64,
    /// Number of documents to keep; `fraction` of the corpus when unset.
    pub k: Option<usize>,
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Providers {
    pub manager: ProviderConfig,
    pub worker: ProviderConfig,
    pub relevance: ProviderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider: ProviderKind,
    pub route: RouteConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderKind {
    Http {
        base_url: String,
        model: String,
        /// Environment variable holding the API key.
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    Scripted {
        script: PathBuf,
    },
    Simulated {
        seed: u64,
    },
}

fn default_timeout() -> u64 {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServeSettings {
    pub addr: String,
    /// Shared annotation token; generated and printed when unset.
    pub token: Option<String>,
}

impl RunConfig {
    pub fn defaults(domain: Domain) -> Self {
        let provider = |role: AgentRole| ProviderConfig {
            provider: ProviderKind::Simulated { seed: 0 },
            route: RouteConfig::for_role(role),
        };
        Self {
            domain,
            corpus: None,
            criteria_seeds: None,
            seed: 0,
            pairs: PairCounts {
                human: 30,
                test: 30,
                agent: 300,
                buckets: 4,
            },
            gold: GoldSource::Labels,
            min_test_annotators: 3,
            evolution: EvolutionConfig::for_domain(domain),
            scorer: ScorerSettings {
                featurizer: Featurizer::default(),
                train: TrainConfig::default(),
            },
            selection: SelectionSettings {
                temperature: default_temperature(domain),
                k: None,
                fraction: 0.3,
                seed: 0,
            },
            providers: Providers {
                manager: provider(AgentRole::Manager),
                worker: provider(AgentRole::Worker),
                relevance: provider(AgentRole::Relevance),
            },
            serve: ServeSettings {
                addr: "127.0.0.1:8787".into(),
                token: None,
            },
        }
    }

    /// Apply `overrides` (in order) on top of the defaults for their domain.
    pub fn resolve(overrides: &[Value]) -> Result<Self, CliError> {
        let mut merged = Value::Object(Map::new());
        for o in overrides {
            if !o.is_object() {
                return Err(CliError::Config(
                    "config overrides must be JSON objects".into(),
                ));
            }
            merge_into(&mut merged, o.clone(), "", false)?;
        }
        let domain = match merged.get("domain") {
            None => Domain::Code,
            Some(Value::String(s)) => s.parse().map_err(|e| CliError::Config(format!("{e}")))?,
            Some(other) => {
                return Err(CliError::Config(format!(
                    "domain must be a string, got {other}"
                )))
            }
        };
        let mut base = serde_json::to_value(Self::defaults(domain)).expect("defaults serialize");
        merge_into(&mut base, merged, "", true)?;
        let cfg: Self =
            serde_json::from_value(base).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Value, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.evolution.validate()?;
        self.scorer.train.validate()?;
        self.scorer
            .featurizer
            .validate()
            .map_err(CliError::Config)?;
        let p = &self.pairs;
        if p.human == 0 || p.agent == 0 || p.buckets == 0 {
            return bad("pairs.human, pairs.agent and pairs.buckets must be positive".into());
        }
        if self.min_test_annotators == 0 {
            return bad("min_test_annotators must be positive".into());
        }
        let s = &self.selection;
        if !(s.temperature > 0.0 && s.temperature.is_finite()) {
            return bad(format!(
                "selection.temperature must be positive, got {}",
                s.temperature
            ));
        }
        if s.k.is_none() && !(s.fraction > 0.0 && s.fraction <= 1.0) {
            return bad(format!(
                "selection.fraction must lie in (0, 1], got {}",
                s.fraction
            ));
        }
        for path in [&self.corpus, &self.criteria_seeds].into_iter().flatten() {
            if !path.exists() {
                return bad(format!("{} does not exist", path.display()));
            }
        }
        for (role, pc) in self.providers.iter() {
            if pc.route.max_in_flight == 0 {
                return bad(format!(
                    "providers.{role}.route.max_in_flight must be positive"
                ));
            }
            match &pc.provider {
                ProviderKind::Scripted { script } if !script.exists() => {
                    return bad(format!(
                        "providers.{role}: script {} does not exist",
                        script.display()
                    ));
                }
                ProviderKind::Http {
                    base_url, model, ..
                } if base_url.is_empty() || model.is_empty() => {
                    return bad(format!("providers.{role}: base_url and model are required"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Number of documents `select` keeps from a corpus of `n`.
    pub fn select_k(&self, n: usize) -> usize {
        self.selection
            .k
            .unwrap_or_else(|| ((n as f64 * self.selection.fraction).round() as usize).max(1))
    }

    /// Build the gateway. Simulated providers answer for the run's domain.
    pub fn gateway(&self) -> Result<Gateway, CliError> {
        let mut g = Gateway::new();
        for (role, pc) in self.providers.iter() {
            let provider: Arc<dyn ChatProvider> = match &pc.provider {
                ProviderKind::Http {
                    base_url,
                    model,
                    api_key_env,
                    timeout_secs,
                } => {
                    let api_key = match api_key_env {
                        Some(var) => Some(std::env::var(var).map_err(|_| {
                            CliError::Config(format!(
                                "providers.{role}: environment variable {var} is not set"
                            ))
                        })?),
                        None => None,
                    };
                    Arc::new(HttpProvider::new(HttpEndpoint {
                        base_url: base_url.clone(),
                        model: model.clone(),
                        api_key,
                        timeout_secs: *timeout_secs,
                    }))
                }
                ProviderKind::Scripted { script } => Arc::new(
                    ScriptedProvider::from_file(script)
                        .map_err(|e| CliError::Config(format!("providers.{role}: {e}")))?,
                ),
                ProviderKind::Simulated { seed } => {
                    Arc::new(SimulatedProvider::new(self.domain, *seed))
                }
            };
            g = g.with_route(role, provider, pc.route.clone());
        }
        Ok(g)
    }
}

impl Providers {
    pub fn iter(&self) -> impl Iterator<Item = (AgentRole, &ProviderConfig)> {
        [
            (AgentRole::Manager, &self.manager),
            (AgentRole::Worker, &self.worker),
            (AgentRole::Relevance, &self.relevance),
        ]
        .into_iter()
    }
}

/// Deep-merge `over` into `base`. With `strict`, keys absent from `base` are
/// rejected; an object whose `kind` differs from the base replaces it whole.
fn merge_into(base: &mut Value, over: Value, path: &str, strict: bool) -> Result<(), CliError> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let here = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() && same_kind(slot, &v) => {
                        merge_into(slot, v, &here, strict)?
                    }
                    Some(slot) => *slot = v,
                    None if strict => {
                        return Err(CliError::Config(format!("unknown config field `{here}`")))
                    }
                    None => {
                        b.insert(k, v);
                    }
                }
            }
            Ok(())
        }
        (b, o) => {
            *b = o;
            Ok(())
        }
    }
}

fn same_kind(a: &Value, b: &Value) -> bool {
    match (a.get("kind"), b.get("kind")) {
        (Some(x), Some(y)) => x == y,
        _ => true,
    }
}

/// Turn `a.b.c=<json>` into a nested override object. Values that do not
/// parse as JSON are taken as strings.
pub fn parse_set(assignment: &str) -> Result<Value, CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {assignment:?}")))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("bad --set key {path:?}")));
    }
    let leaf = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(path.rsplit('.').fold(leaf, |acc, key| {
        Value::Object(Map::from_iter([(key.to_string(), acc)]))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn code_defaults() {
        let c = RunConfig::resolve(&[]).unwrap();
        let e = &c.evolution;
        assert_eq!(c.domain, Domain::Code);
        assert_eq!(
            (e.n_criteria, e.iterations, e.t_high, e.t_low, e.t_final),
            (20, 3, 0.9, 0.8, 0.9)
        );
        assert_eq!(c.scorer.train.learning_rate, 2e-5);
    }

    #[test]
    fn domain_picks_its_defaults() {
        let c = RunConfig::resolve(&[json!({"domain": "logic"})]).unwrap();
        assert_eq!(c.evolution.iterations, 3);
        assert_eq!(c.evolution.t_final, 0.8);
        assert_eq!(c.selection.temperature, 0.5);
    }

    #[test]
    fn later_overrides_win_and_nest() {
        let c = RunConfig::resolve(&[
            json!({"evolution": {"iterations": 7}, "seed": 3}),
            json!({"evolution": {"t_final": 0.95}}),
            parse_set("seed=9").unwrap(),
        ])
        .unwrap();
        assert_eq!(c.evolution.iterations, 7);
        assert_eq!(c.evolution.t_final, 0.95);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn provider_kind_switch_replaces_object() {
        let c = RunConfig::resolve(&[json!({"providers": {"worker": {"provider": {
            "kind": "http", "base_url": "http://localhost:1", "model": "m",
            "api_key_env": null, "timeout_secs": 5
        }}}})])
        .unwrap();
        assert!(matches!(
            c.providers.worker.provider,
            ProviderKind::Http { .. }
        ));
    }

    #[test]
    fn unknown_fields_and_bad_values_are_config_errors() {
        let e = RunConfig::resolve(&[json!({"evolution": {"iters": 2}})]).unwrap_err();
        assert!(e.to_string().contains("evolution.iters"), "{e}");
        assert_eq!(e.exit_code(), crate::error::EXIT_CONFIG);
        let e = RunConfig::resolve(&[json!({"domain": "poetry"})]).unwrap_err();
        assert_eq!(e.exit_code(), crate::error::EXIT_CONFIG);
        let e = RunConfig::resolve(&[json!({"corpus": "/no/such/file"})]).unwrap_err();
        assert_eq!(e.exit_code(), crate::error::EXIT_CONFIG);
    }

    #[test]
    fn set_parses_paths_and_strings() {
        assert_eq!(parse_set("a.b=3").unwrap(), json!({"a": {"b": 3}}));
        assert_eq!(parse_set("domain=math").unwrap(), json!({"domain": "math"}));
        assert!(parse_set("novalue").is_err());
    }
}
