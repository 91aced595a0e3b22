//! Relevance and text-generation backends.
//!
//! The auction core only sees numbers: a relevance `q_i` per ad (or `q_{A,i}`
//! per set member) and one text segment per auction. Everything that talks to
//! an embedding model or an LLM lives behind the traits in this module, so the
//! mechanisms can be exercised with static tables and a deterministic stub.

mod embedding;
mod generator;

use std::collections::HashMap;

use crate::analytic::set_relevance_heuristic;
use crate::error::ProviderError;
use crate::types::{Ad, Composition, Scenario};

pub use embedding::{
    cosine, embedding_relevance, output_similarity, EmbeddingClient, EmbeddingConfig, EmbeddingRelevance,
    EmbeddingTransport, HttpEmbeddingTransport, MockEmbeddingTransport,
};
pub use generator::{
    remote_generator, stub_generator, ChatMessage, ChatTransport, HttpChatTransport, PromptTemplates,
    RecordedChatTransport, RemoteGenerator, RemoteGeneratorConfig, StubGenerator,
};

/// What a provider may know about the output produced so far.
#[derive(Debug, Clone, Copy)]
pub struct SegmentContext<'a> {
    /// Zero-based index of the segment being auctioned.
    pub segment: usize,
    /// Text of the segments already generated, in order.
    pub previous: &'a [String],
}

impl<'a> SegmentContext<'a> {
    pub fn new(segment: usize, previous: &'a [String]) -> Self {
        SegmentContext { segment, previous }
    }

    pub fn first() -> SegmentContext<'static> {
        SegmentContext { segment: 0, previous: &[] }
    }
}

/// Source of per-ad relevance `q_i^(t)`.
///
/// Implementations must be deterministic for identical inputs within one
/// session and safe to call from several worker threads.
pub trait RelevanceProvider: Send + Sync {
    /// Relevance of `ad` (at roster position `index`) to `query` in `ctx`.
    fn relevance(&self, query: &str, ad: &Ad, index: usize, ctx: &SegmentContext<'_>) -> Result<f64, ProviderError>;
}

/// Source of the in-set relevance `q_{A,i}` for combinatorial auctions.
pub trait SetRelevanceProvider: Send + Sync {
    /// Relevance of `set[member]` when the ads of `set` are shown together.
    fn member_relevance(
        &self,
        query: &str,
        ads: &[Ad],
        set: &[usize],
        member: usize,
        ctx: &SegmentContext<'_>,
    ) -> Result<f64, ProviderError>;
}

/// One request to write a segment.
#[derive(Debug, Clone)]
pub struct GenerationRequest<'a> {
    pub query: &'a str,
    pub previous: &'a [String],
    /// Winning ads in score order.
    pub winners: Vec<&'a Ad>,
    pub composition: Composition,
}

/// Writes segment text around the winning ads.
pub trait GeneratorAdapter: Send + Sync {
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, ProviderError>;
}

/// Tabulated relevance, optionally decayed per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticRelevance {
    q: Vec<f64>,
    delta: Option<Vec<f64>>,
}

impl StaticRelevance {
    pub fn new(q: Vec<f64>) -> Self {
        StaticRelevance { q, delta: None }
    }

    /// Multiplies `q_i` by `delta[t]` in segment `t`.
    pub fn with_delta(mut self, delta: Vec<f64>) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    fn factor(&self, segment: usize) -> f64 {
        self.delta.as_ref().and_then(|d| d.get(segment).copied()).unwrap_or(1.0)
    }
}

impl RelevanceProvider for StaticRelevance {
    fn relevance(&self, _query: &str, _ad: &Ad, index: usize, ctx: &SegmentContext<'_>) -> Result<f64, ProviderError> {
        let q = self.q.get(index).ok_or(ProviderError::MissingRelevance)?;
        Ok(q * self.factor(ctx.segment))
    }
}

/// Serves the scenario's relevance vector, ignoring query and context.
pub fn static_relevance(scenario: &Scenario) -> Result<StaticRelevance, ProviderError> {
    let q = scenario.static_q().ok_or(ProviderError::MissingRelevance)?;
    let provider = StaticRelevance::new(q.to_vec());
    Ok(match &scenario.relevance.delta {
        Some(delta) => provider.with_delta(delta.clone()),
        None => provider,
    })
}

/// `q_{A,i}` from the additive-plus-pairwise heuristic over fixed solo scores.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicSetRelevance {
    q: Vec<f64>,
    pairwise: Option<Vec<Vec<f64>>>,
    alpha: f64,
    beta: f64,
    delta: Option<Vec<f64>>,
}

impl HeuristicSetRelevance {
    pub fn new(q: Vec<f64>, pairwise: Option<Vec<Vec<f64>>>, alpha: f64, beta: f64) -> Self {
        HeuristicSetRelevance { q, pairwise, alpha, beta, delta: None }
    }

    pub fn with_delta(mut self, delta: Option<Vec<f64>>) -> Self {
        self.delta = delta;
        self
    }
}

impl SetRelevanceProvider for HeuristicSetRelevance {
    fn member_relevance(
        &self,
        _query: &str,
        _ads: &[Ad],
        set: &[usize],
        member: usize,
        ctx: &SegmentContext<'_>,
    ) -> Result<f64, ProviderError> {
        let rel = set_relevance_heuristic(&self.q, self.pairwise.as_deref(), self.alpha, self.beta, set);
        let factor = self.delta.as_ref().and_then(|d| d.get(ctx.segment).copied()).unwrap_or(1.0);
        Ok(rel.members[member] * factor)
    }
}

/// Explicit `q_{A,i}` table keyed by sorted ad-index sets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TableSetRelevance {
    table: HashMap<Vec<usize>, Vec<f64>>,
}

impl TableSetRelevance {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `q` for the members of `set` (given in ascending order).
    pub fn insert(&mut self, set: Vec<usize>, q: Vec<f64>) {
        self.table.insert(set, q);
    }
}

impl SetRelevanceProvider for TableSetRelevance {
    fn member_relevance(
        &self,
        _query: &str,
        _ads: &[Ad],
        set: &[usize],
        member: usize,
        _ctx: &SegmentContext<'_>,
    ) -> Result<f64, ProviderError> {
        self.table.get(set).and_then(|q| q.get(member).copied()).ok_or(ProviderError::MissingRelevance)
    }
}

/// Builds the set-relevance provider described by a scenario's
/// `combinatorial` block: an explicit table when `set_scores` is given,
/// otherwise the heuristic over the static relevance vector.
pub fn scenario_set_relevance(scenario: &Scenario) -> Result<Box<dyn SetRelevanceProvider>, ProviderError> {
    let config = scenario.combinatorial_config();
    if let Some(entries) = &config.set_scores {
        let mut table = TableSetRelevance::new();
        for entry in entries {
            let mut members: Vec<(usize, f64)> = entry
                .set
                .iter()
                .zip(&entry.q)
                .map(|(id, &q)| {
                    scenario.ads.iter().position(|a| &a.id == id).map(|i| (i, q)).ok_or(ProviderError::MissingRelevance)
                })
                .collect::<Result<_, _>>()?;
            members.sort_by_key(|&(i, _)| i);
            table.insert(members.iter().map(|m| m.0).collect(), members.iter().map(|m| m.1).collect());
        }
        return Ok(Box::new(table));
    }
    let q = scenario.static_q().ok_or(ProviderError::MissingRelevance)?.to_vec();
    Ok(Box::new(
        HeuristicSetRelevance::new(q, config.pairwise.clone(), config.alpha, config.beta)
            .with_delta(scenario.relevance.delta.clone()),
    ))
}
