//! Domain grounding for tool synthesis: an encyclopedic summary plus
//! structured facts about the domain entity.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("cannot parse context: {0}")]
    Parse(String),
    #[error("context invariant: {0}")]
    Invariant(String),
    #[error("I/O: {0}")]
    Io(String),
    #[error("no entity and no summary found for domain {0:?}")]
    Unresolvable(String),
    #[error("knowledge source: {0}")]
    Source(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub relation: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainContext {
    pub domain: String,
    #[serde(default)]
    pub entity_id: String,
    #[serde(default)]
    pub wiki_summary: String,
    #[serde(default)]
    pub facts: Vec<Fact>,
}

impl DomainContext {
    pub fn check(&self) -> Result<(), KnowledgeError> {
        if self.domain.trim().is_empty() {
            return Err(KnowledgeError::Invariant("domain is empty".into()));
        }
        if self.wiki_summary.trim().is_empty() && self.facts.is_empty() {
            return Err(KnowledgeError::Invariant(format!(
                "context for {:?} has neither summary nor facts",
                self.domain
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, KnowledgeError> {
        if text.trim().is_empty() {
            return Err(KnowledgeError::Parse("empty document".into()));
        }
        let ctx: DomainContext = serde_json::from_str(text).map_err(|e| KnowledgeError::Parse(e.to_string()))?;
        ctx.check()?;
        Ok(ctx)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("context serializes")
    }

    /// Compact form used inside prompts.
    pub fn prompt_value(&self) -> Value {
        serde_json::json!({
            "domain": self.domain,
            "summary": self.wiki_summary,
            "facts": self.facts,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextBudget {
    pub max_facts: usize,
    pub max_summary_chars: usize,
}

impl Default for ContextBudget {
    fn default() -> Self {
        ContextBudget { max_facts: 50, max_summary_chars: 2000 }
    }
}

/// A fact as delivered by a source; `value_entity` allows one hop of
/// subclass expansion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFact {
    pub relation: String,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_entity: Option<String>,
}

pub trait KnowledgeSource: Send + Sync {
    fn resolve(&self, domain: &str) -> Result<Option<String>, KnowledgeError>;
    fn summary(&self, domain: &str) -> Result<Option<String>, KnowledgeError>;
    fn facts(&self, entity_id: &str) -> Result<Vec<RawFact>, KnowledgeError>;
}

fn truncate_chars(text: &str, max: usize) -> String {
    if text.chars().count() <= max {
        return text.to_string();
    }
    let cut: String = text.chars().take(max).collect();
    match cut.rfind(' ') {
        Some(sp) if sp > max / 2 => cut[..sp].to_string(),
        _ => cut,
    }
}

fn is_subclass_link(rel: &str) -> bool {
    rel == "has subclass"
}

/// Resolves the domain, fetches summary and facts, expands subclasses by one
/// hop and applies the budget. A missing entity degrades to a summary-only
/// context; a domain with neither is an error.
pub fn build_domain_context(
    domain: &str,
    source: &dyn KnowledgeSource,
    budget: ContextBudget,
) -> Result<DomainContext, KnowledgeError> {
    let entity = source.resolve(domain).unwrap_or_else(|e| {
        log::warn!("entity resolution for {domain:?} failed: {e}");
        None
    });
    let summary = source.summary(domain).unwrap_or_else(|e| {
        log::warn!("summary lookup for {domain:?} failed: {e}");
        None
    });
    let mut facts: Vec<Fact> = Vec::new();
    let push = |f: Fact, facts: &mut Vec<Fact>| {
        if !facts.contains(&f) {
            facts.push(f);
        }
    };
    if let Some(qid) = &entity {
        let direct = source.facts(qid).unwrap_or_else(|e| {
            log::warn!("fact lookup for {qid} failed: {e}");
            Vec::new()
        });
        let mut children = Vec::new();
        for f in &direct {
            push(Fact { relation: f.relation.clone(), value: f.value.clone() }, &mut facts);
            if let (true, Some(child)) = (is_subclass_link(&f.relation), &f.value_entity) {
                children.push((f.value.clone(), child.clone()));
            }
        }
        for (label, child) in children {
            for f in source.facts(&child).unwrap_or_default() {
                push(Fact { relation: format!("{label}: {}", f.relation), value: f.value }, &mut facts);
            }
        }
    }
    facts.truncate(budget.max_facts);
    let ctx = DomainContext {
        domain: domain.to_string(),
        entity_id: entity.unwrap_or_default(),
        wiki_summary: truncate_chars(summary.as_deref().unwrap_or_default().trim(), budget.max_summary_chars),
        facts,
    };
    if ctx.wiki_summary.is_empty() && ctx.facts.is_empty() {
        return Err(KnowledgeError::Unresolvable(domain.to_string()));
    }
    Ok(ctx)
}

pub fn load_fixture_context(path: &Path) -> Result<DomainContext, KnowledgeError> {
    let text = std::fs::read_to_string(path).map_err(|e| KnowledgeError::Io(format!("{}: {e}", path.display())))?;
    DomainContext::from_json(&text)
}

macro_rules! bundled {
    ($($name:literal => $file:literal),* $(,)?) => {
        /// Domain contexts shipped with the crate.
        pub const BUNDLED_DOMAINS: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../fixtures/domains/", $file)))),*
        ];
    };
}

bundled! {
    "Agriculture" => "agriculture.json",
    "Customer Support" => "customer_support.json",
    "Cybersecurity" => "cybersecurity.json",
    "E-commerce" => "e_commerce.json",
    "Education" => "education.json",
    "Energy" => "energy.json",
    "Film Industry" => "film_industry.json",
    "Human Resources" => "human_resources.json",
    "Insurance" => "insurance.json",
    "Legal Services" => "legal_services.json",
    "Logistics" => "logistics.json",
    "Manufacturing" => "manufacturing.json",
    "Marketing" => "marketing.json",
    "Online Banking" => "online_banking.json",
    "Real Estate" => "real_estate.json",
    "Retail" => "retail.json",
    "Supply Chain" => "supply_chain.json",
    "Telecommunications" => "telecommunications.json",
    "Tourism" => "tourism.json",
    "Transportation" => "transportation.json",
}

/// Shipped context for `domain` (case-insensitive).
pub fn bundled_context(domain: &str) -> Option<DomainContext> {
    BUNDLED_DOMAINS
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(domain.trim()))
        .map(|(_, text)| DomainContext::from_json(text).expect("bundled fixtures are valid"))
}

/// Recorded source answers, keyed by domain or entity id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceRecording {
    #[serde(default)]
    pub resolve: BTreeMap<String, Option<String>>,
    #[serde(default)]
    pub summary: BTreeMap<String, Option<String>>,
    #[serde(default)]
    pub facts: BTreeMap<String, Vec<RawFact>>,
}

impl SourceRecording {
    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        let text = std::fs::read_to_string(path).map_err(|e| KnowledgeError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| KnowledgeError::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), KnowledgeError> {
        let text = serde_json::to_string_pretty(self).expect("recording serializes");
        std::fs::write(path, text + "\n").map_err(|e| KnowledgeError::Io(e.to_string()))
    }
}

/// Answers only from a recording; anything unrecorded is a source error.
pub struct ReplaySource(pub SourceRecording);

impl KnowledgeSource for ReplaySource {
    fn resolve(&self, domain: &str) -> Result<Option<String>, KnowledgeError> {
        self.0
            .resolve
            .get(domain)
            .cloned()
            .ok_or_else(|| KnowledgeError::Source(format!("no recorded resolution for {domain:?}")))
    }

    fn summary(&self, domain: &str) -> Result<Option<String>, KnowledgeError> {
        self.0
            .summary
            .get(domain)
            .cloned()
            .ok_or_else(|| KnowledgeError::Source(format!("no recorded summary for {domain:?}")))
    }

    fn facts(&self, entity_id: &str) -> Result<Vec<RawFact>, KnowledgeError> {
        self.0
            .facts
            .get(entity_id)
            .cloned()
            .ok_or_else(|| KnowledgeError::Source(format!("no recorded facts for {entity_id}")))
    }
}

/// Wraps a live source and keeps every answer for later replay.
pub struct RecordingSource<S> {
    inner: S,
    log: Mutex<SourceRecording>,
}

impl<S: KnowledgeSource> RecordingSource<S> {
    pub fn new(inner: S) -> Self {
        RecordingSource { inner, log: Mutex::new(SourceRecording::default()) }
    }

    pub fn recording(&self) -> SourceRecording {
        self.log.lock().unwrap().clone()
    }
}

impl<S: KnowledgeSource> KnowledgeSource for RecordingSource<S> {
    fn resolve(&self, domain: &str) -> Result<Option<String>, KnowledgeError> {
        let r = self.inner.resolve(domain)?;
        self.log.lock().unwrap().resolve.insert(domain.into(), r.clone());
        Ok(r)
    }

    fn summary(&self, domain: &str) -> Result<Option<String>, KnowledgeError> {
        let r = self.inner.summary(domain)?;
        self.log.lock().unwrap().summary.insert(domain.into(), r.clone());
        Ok(r)
    }

    fn facts(&self, entity_id: &str) -> Result<Vec<RawFact>, KnowledgeError> {
        let r = self.inner.facts(entity_id)?;
        self.log.lock().unwrap().facts.insert(entity_id.into(), r.clone());
        Ok(r)
    }
}

/// Wikidata properties kept as facts.
const PROPERTIES: [(&str, &str); 7] = [
    ("P31", "instance of"),
    ("P279", "subclass of"),
    ("P527", "has part"),
    ("P2283", "uses"),
    ("P1056", "product or material produced"),
    ("P3095", "practiced by"),
    ("P1269", "facet of"),
];

/// Live Wikipedia + Wikidata client.
pub struct WikiSource {
    agent: ureq::Agent,
    pub wikidata_api: String,
    pub wikipedia_rest: String,
    pub max_subclasses: usize,
}

impl Default for WikiSource {
    fn default() -> Self {
        WikiSource::new("https://www.wikidata.org/w/api.php", "https://en.wikipedia.org/api/rest_v1")
    }
}

impl WikiSource {
    pub fn new(wikidata_api: &str, wikipedia_rest: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .user_agent("toolweave/0.1")
            .build()
            .into();
        WikiSource {
            agent,
            wikidata_api: wikidata_api.into(),
            wikipedia_rest: wikipedia_rest.trim_end_matches('/').into(),
            max_subclasses: 10,
        }
    }

    fn get(&self, url: &str, query: &[(&str, &str)]) -> Result<Option<Value>, KnowledgeError> {
        let mut req = self.agent.get(url);
        for (k, v) in query {
            req = req.query(*k, *v);
        }
        let mut resp = req.call().map_err(|e| KnowledgeError::Source(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 404 {
            return Ok(None);
        }
        if !(200..300).contains(&status) {
            return Err(KnowledgeError::Source(format!("HTTP {status} from {url}")));
        }
        resp.body_mut().read_json::<Value>().map(Some).map_err(|e| KnowledgeError::Source(e.to_string()))
    }

    fn labels(&self, ids: &[String]) -> Result<BTreeMap<String, String>, KnowledgeError> {
        let mut out = BTreeMap::new();
        for chunk in ids.chunks(50) {
            let joined = chunk.join("|");
            let v = self.get(
                &self.wikidata_api,
                &[
                    ("action", "wbgetentities"),
                    ("ids", &joined),
                    ("props", "labels"),
                    ("languages", "en"),
                    ("format", "json"),
                ],
            )?;
            if let Some(entities) = v.as_ref().and_then(|v| v.get("entities")).and_then(Value::as_object) {
                for (id, e) in entities {
                    if let Some(l) = e.pointer("/labels/en/value").and_then(Value::as_str) {
                        out.insert(id.clone(), l.to_string());
                    }
                }
            }
        }
        Ok(out)
    }
}

impl KnowledgeSource for WikiSource {
    fn resolve(&self, domain: &str) -> Result<Option<String>, KnowledgeError> {
        let v = self.get(
            &self.wikidata_api,
            &[
                ("action", "wbsearchentities"),
                ("search", domain),
                ("language", "en"),
                ("limit", "1"),
                ("format", "json"),
            ],
        )?;
        Ok(v.and_then(|v| v.pointer("/search/0/id").and_then(Value::as_str).map(str::to_string)))
    }

    fn summary(&self, domain: &str) -> Result<Option<String>, KnowledgeError> {
        let title = domain.trim().replace(' ', "_");
        let v = self.get(&format!("{}/page/summary/{title}", self.wikipedia_rest), &[])?;
        Ok(v.and_then(|v| v.get("extract").and_then(Value::as_str).map(str::to_string))
            .filter(|s| !s.trim().is_empty()))
    }

    fn facts(&self, entity_id: &str) -> Result<Vec<RawFact>, KnowledgeError> {
        let v = self.get(
            &self.wikidata_api,
            &[("action", "wbgetentities"), ("ids", entity_id), ("props", "claims"), ("format", "json")],
        )?;
        let claims = v
            .as_ref()
            .and_then(|v| v.pointer(&format!("/entities/{entity_id}/claims")))
            .cloned()
            .unwrap_or(Value::Null);
        let mut pending: Vec<(String, String)> = Vec::new();
        for (pid, rel) in PROPERTIES {
            for c in claims.get(pid).and_then(Value::as_array).into_iter().flatten() {
                if let Some(id) = c.pointer("/mainsnak/datavalue/value/id").and_then(Value::as_str) {
                    pending.push((rel.to_string(), id.to_string()));
                }
            }
        }
        let query = format!("haswbstatement:P279={entity_id}");
        let limit = self.max_subclasses.to_string();
        let subs = self.get(
            &self.wikidata_api,
            &[("action", "query"), ("list", "search"), ("srsearch", &query), ("srlimit", &limit), ("format", "json")],
        )?;
        for hit in
            subs.as_ref().and_then(|v| v.pointer("/query/search")).and_then(Value::as_array).into_iter().flatten()
        {
            if let Some(t) = hit.get("title").and_then(Value::as_str) {
                pending.push(("has subclass".into(), t.to_string()));
            }
        }
        let ids: Vec<String> = pending.iter().map(|(_, id)| id.clone()).collect();
        let labels = if ids.is_empty() { BTreeMap::new() } else { self.labels(&ids)? };
        Ok(pending
            .into_iter()
            .filter_map(|(relation, id)| {
                let value = labels.get(&id)?.clone();
                Some(RawFact { value_entity: (relation == "has subclass").then(|| id.clone()), relation, value })
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn replay() -> ReplaySource {
        ReplaySource(
            SourceRecording::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/knowledge/source_replay.json"))
                .unwrap(),
        )
    }

    #[test]
    fn customer_support_from_recorded_source() {
        let ctx = build_domain_context("Customer Support", &replay(), ContextBudget::default()).unwrap();
        assert!(!ctx.wiki_summary.is_empty());
        assert!(!ctx.facts.is_empty());
        // One hop of subclass expansion, not two.
        assert!(ctx.facts.iter().any(|f| f.value == "remote session"));
        assert!(!ctx.facts.iter().any(|f| f.value == "root cause analysis"));
    }

    #[test]
    fn empty_property_list_degrades_to_summary_only() {
        let ctx = build_domain_context("Help Desk Archive", &replay(), ContextBudget::default()).unwrap();
        assert!(ctx.facts.is_empty());
        assert!(!ctx.wiki_summary.is_empty());
    }

    #[test]
    fn unresolvable_domain_is_an_error() {
        assert!(matches!(
            build_domain_context("Xqzv Plorth Wibble", &replay(), ContextBudget::default()),
            Err(KnowledgeError::Unresolvable(_))
        ));
    }

    #[test]
    fn budget_truncates() {
        let budget = ContextBudget { max_facts: 3, max_summary_chars: 40 };
        let ctx = build_domain_context("Customer Support", &replay(), budget).unwrap();
        assert_eq!(ctx.facts.len(), 3);
        assert!(ctx.wiki_summary.chars().count() <= 40);
    }

    #[test]
    fn recording_source_replays_identically() {
        let rec = RecordingSource::new(replay());
        let live = build_domain_context("Customer Support", &rec, ContextBudget::default()).unwrap();
        let again =
            build_domain_context("Customer Support", &ReplaySource(rec.recording()), ContextBudget::default()).unwrap();
        assert_eq!(live, again);
    }

    #[test]
    fn fixtures_load() {
        assert_eq!(BUNDLED_DOMAINS.len(), 20);
        for (name, _) in BUNDLED_DOMAINS {
            let ctx = bundled_context(name).unwrap();
            assert_eq!(&ctx.domain, name);
            let back = DomainContext::from_json(&ctx.to_json()).unwrap();
            assert_eq!(back, ctx);
        }
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.json");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(load_fixture_context(&empty), Err(KnowledgeError::Parse(_))));
        let facts_only = dir.path().join("f.json");
        std::fs::write(&facts_only, r#"{"domain":"X","facts":[{"relation":"has part","value":"y"}]}"#).unwrap();
        assert!(load_fixture_context(&facts_only).is_ok());
        let e = load_fixture_context(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/domains/e_commerce.json"))
            .unwrap();
        assert_eq!(e.domain, "E-commerce");
    }
}
