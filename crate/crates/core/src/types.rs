//! Domain types shared by every module, and scenario validation.

use std::collections::HashSet;
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ScenarioError, ValidationErrors};
use crate::sampling::NoiseDraw;

/// One advertiser's submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ad {
    pub id: String,
    /// Per-click bid.
    pub bid: f64,
    /// Private per-click value. Absent means truthful (`value == bid`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default)]
    pub document: String,
    #[serde(default)]
    pub link: String,
}

impl Ad {
    pub fn new(id: impl Into<String>, bid: f64) -> Self {
        Ad { id: id.into(), bid, value: None, document: String::new(), link: String::new() }
    }

    pub fn with_value(mut self, value: f64) -> Self {
        self.value = Some(value);
        self
    }

    pub fn with_document(mut self, document: impl Into<String>, link: impl Into<String>) -> Self {
        self.document = document.into();
        self.link = link.into();
        self
    }

    pub fn value(&self) -> f64 {
        self.value.unwrap_or(self.bid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceMode {
    #[default]
    Static,
    Embedding,
}

/// Where relevance scores come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RelevanceSpec {
    #[serde(default)]
    pub mode: RelevanceMode,
    /// Calibrated per-ad scores in [0, 1], roster order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    /// Per-segment click-propensity factors, positive and non-increasing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

impl RelevanceSpec {
    pub fn fixed(q: Vec<f64>) -> Self {
        RelevanceSpec { q: Some(q), ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    #[serde(alias = "single_with_replacement")]
    WithReplacement,
    #[serde(alias = "single_without_replacement")]
    WithoutReplacement,
    Naive1,
    Naive2,
    #[serde(alias = "multi_allocation")]
    Multi,
    Combinatorial,
}

impl Mechanism {
    pub const ALL: [Mechanism; 6] = [
        Mechanism::WithReplacement,
        Mechanism::WithoutReplacement,
        Mechanism::Naive1,
        Mechanism::Naive2,
        Mechanism::Multi,
        Mechanism::Combinatorial,
    ];

    /// The mechanisms compared in the experiment tables.
    pub const TABLE: [Mechanism; 4] =
        [Mechanism::WithReplacement, Mechanism::WithoutReplacement, Mechanism::Naive2, Mechanism::Multi];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::WithReplacement => "with_replacement",
            Mechanism::WithoutReplacement => "without_replacement",
            Mechanism::Naive1 => "naive1",
            Mechanism::Naive2 => "naive2",
            Mechanism::Multi => "multi",
            Mechanism::Combinatorial => "combinatorial",
        }
    }

    /// Single-winner mechanisms.
    pub fn is_single(self) -> bool {
        !matches!(self, Mechanism::Multi | Mechanism::Combinatorial)
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        Ok(match s.as_str() {
            "with_replacement" | "single_with_replacement" | "repl" => Mechanism::WithReplacement,
            "without_replacement" | "single_without_replacement" | "norepl" => Mechanism::WithoutReplacement,
            "naive1" | "naive_i" => Mechanism::Naive1,
            "naive2" | "naive_ii" => Mechanism::Naive2,
            "multi" | "multi_allocation" => Mechanism::Multi,
            "combinatorial" | "comb" => Mechanism::Combinatorial,
            other => return Err(format!("unknown mechanism `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NegativePaymentPolicy {
    Allow,
    #[default]
    #[serde(alias = "clamp_to_zero")]
    Clamp,
}

/// Explicit set relevance `q_{A,i}` for one candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetScoreEntry {
    /// Ad ids in the set.
    pub set: Vec<String>,
    /// Prominence-weighted relevance of each member, same order as `set`.
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinatorialConfig {
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub negative_payment: NegativePaymentPolicy,
    /// Pairwise ad relevance `rel(a_i, a_j)`, needed when `beta > 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairwise: Option<Vec<Vec<f64>>>,
    /// Explicit set scores; overrides the heuristic when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_scores: Option<Vec<SetScoreEntry>>,
}

fn one() -> f64 {
    1.0
}

impl Default for CombinatorialConfig {
    fn default() -> Self {
        CombinatorialConfig {
            alpha: 1.0,
            beta: 0.0,
            negative_payment: NegativePaymentPolicy::Clamp,
            pairwise: None,
            set_scores: None,
        }
    }
}

fn default_trials() -> u64 {
    500
}

/// An experiment: a query, an ad roster, relevance, and auction configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub query: String,
    pub ads: Vec<Ad>,
    pub relevance: RelevanceSpec,
    /// Number of segments.
    #[serde(rename = "T")]
    pub segments: usize,
    /// Winners per segment.
    pub k: usize,
    pub mechanism: Mechanism,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combinatorial: Option<CombinatorialConfig>,
}

impl Scenario {
    /// Static-relevance scenario with truthful values and defaults elsewhere.
    pub fn new(query: impl Into<String>, ads: Vec<Ad>, q: Vec<f64>, mechanism: Mechanism) -> Self {
        Scenario {
            query: query.into(),
            ads,
            relevance: RelevanceSpec::fixed(q),
            segments: 1,
            k: 1,
            mechanism,
            trials: default_trials(),
            seed: 0,
            combinatorial: None,
        }
    }

    /// Builds a scenario straight from bid and relevance vectors; ids are `ad0, ad1, ...`.
    pub fn from_vectors(bids: &[f64], q: &[f64], mechanism: Mechanism) -> Self {
        let ads = bids.iter().enumerate().map(|(i, &b)| Ad::new(format!("ad{i}"), b)).collect();
        Scenario::new("", ads, q.to_vec(), mechanism)
    }

    pub fn with_segments(mut self, segments: usize, k: usize) -> Self {
        self.segments = segments;
        self.k = k;
        self
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn n_ads(&self) -> usize {
        self.ads.len()
    }

    pub fn bids(&self) -> Vec<f64> {
        self.ads.iter().map(|a| a.bid).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.ads.iter().map(Ad::value).collect()
    }

    pub fn static_q(&self) -> Option<&[f64]> {
        self.relevance.q.as_deref()
    }

    /// δ^(t) for zero-based segment `t`; 1 when no factors are configured.
    pub fn segment_factor(&self, t: usize) -> f64 {
        self.relevance.delta.as_ref().and_then(|d| d.get(t).copied()).unwrap_or(1.0)
    }

    pub fn combinatorial_config(&self) -> CombinatorialConfig {
        self.combinatorial.clone().unwrap_or_default()
    }

    /// Total ad placements in a session.
    pub fn placements(&self) -> usize {
        self.segments * self.k
    }

    /// The scenario re-targeted at another mechanism.
    ///
    /// Switching a multi-segment single-slot scenario to `Multi` pools every
    /// placement into one segment (`T = 1`, `k = T·k`), the layout used to
    /// compare multi-allocation against per-segment auctions.
    pub fn for_mechanism(&self, mechanism: Mechanism) -> Scenario {
        let mut s = self.clone();
        if mechanism == Mechanism::Multi && self.mechanism != Mechanism::Multi && self.segments > 1 {
            s.k = self.segments * self.k;
            s.segments = 1;
            if let Some(d) = &mut s.relevance.delta {
                d.truncate(1);
            }
        }
        s.mechanism = mechanism;
        s
    }

    /// Checks every invariant; returns all violations at once.
    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut errs = Vec::new();
        let n = self.ads.len();
        if n == 0 {
            errs.push(ScenarioError::NoAds);
        }
        let mut seen = HashSet::new();
        for ad in &self.ads {
            if !seen.insert(ad.id.as_str()) {
                errs.push(ScenarioError::DuplicateAdId(ad.id.clone()));
            }
            if !(ad.bid >= 0.0 && ad.bid.is_finite()) {
                errs.push(ScenarioError::NegativeBid { id: ad.id.clone(), bid: ad.bid });
            }
            if let Some(v) = ad.value {
                if !(v >= 0.0 && v.is_finite()) {
                    errs.push(ScenarioError::NegativeValue { id: ad.id.clone(), value: v });
                }
            }
        }
        match (self.relevance.mode, &self.relevance.q) {
            (RelevanceMode::Static, None) => errs.push(ScenarioError::EmptyRelevance),
            (_, Some(q)) => {
                if q.len() != n {
                    errs.push(ScenarioError::RelevanceLengthMismatch { got: q.len(), ads: n });
                }
                for (index, &qi) in q.iter().enumerate() {
                    if !(0.0..=1.0).contains(&qi) {
                        errs.push(ScenarioError::RelevanceOutOfRange { index, q: qi });
                    }
                }
                if !q.iter().any(|&qi| qi > 0.0) {
                    errs.push(ScenarioError::EmptyRelevance);
                }
            }
            (RelevanceMode::Embedding, None) => {}
        }
        if let Some(delta) = &self.relevance.delta {
            let ok = delta.len() == self.segments
                && delta.iter().all(|&d| d > 0.0 && d.is_finite())
                && delta.windows(2).all(|w| w[1] <= w[0]);
            if !ok {
                errs.push(ScenarioError::InvalidSegmentFactors);
            }
        }
        if self.segments == 0 {
            errs.push(ScenarioError::ZeroSegments);
        }
        if self.k == 0 || self.k > n {
            errs.push(ScenarioError::SlotCountExceedsAds { k: self.k, ads: n });
        }
        if self.mechanism == Mechanism::WithoutReplacement && self.segments > n {
            errs.push(ScenarioError::WithoutReplacementInfeasible { segments: self.segments, ads: n });
        }
        if self.trials == 0 {
            errs.push(ScenarioError::ZeroTrials);
        }
        if self.mechanism == Mechanism::Combinatorial || self.combinatorial.is_some() {
            self.validate_combinatorial(&mut errs);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ValidationErrors(errs))
        }
    }

    fn validate_combinatorial(&self, errs: &mut Vec<ScenarioError>) {
        let cfg = self.combinatorial_config();
        let n = self.ads.len();
        let bad = |m: String| ScenarioError::Combinatorial(m);
        if !(cfg.alpha >= 0.0 && cfg.beta >= 0.0) {
            errs.push(bad("alpha and beta must be non-negative".into()));
        }
        if cfg.beta > 0.0 && cfg.set_scores.is_none() {
            match &cfg.pairwise {
                None => errs.push(bad("beta > 0 requires a pairwise relevance matrix".into())),
                Some(m) if m.len() != n || m.iter().any(|row| row.len() != n) => {
                    errs.push(bad(format!("pairwise matrix must be {n}x{n}")))
                }
                _ => {}
            }
        }
        if crate::analytic::binomial(n, self.k.min(n)) > 1_000_000 {
            errs.push(bad(format!("C({n}, {}) candidate sets is too many", self.k)));
        }
        if let Some(entries) = &cfg.set_scores {
            let ids: HashSet<&str> = self.ads.iter().map(|a| a.id.as_str()).collect();
            for e in entries {
                if e.set.len() != self.k || e.q.len() != self.k {
                    errs.push(bad(format!("set {:?} must list exactly k = {} ids and scores", e.set, self.k)));
                }
                if e.set.iter().any(|id| !ids.contains(id.as_str())) {
                    errs.push(bad(format!("set {:?} names an unknown ad", e.set)));
                }
                if e.q.iter().any(|&q| !(q >= 0.0 && q.is_finite())) {
                    errs.push(bad(format!("set {:?} has a negative score", e.set)));
                }
            }
        }
    }

    /// Consumes the scenario, returning it wrapped once every invariant holds.
    pub fn validated(self) -> Result<ValidScenario, ValidationErrors> {
        self.validate()?;
        let mut warnings = Vec::new();
        if self.mechanism == Mechanism::Multi && self.k == self.ads.len() {
            warnings.push(format!("k = n = {}: every ad wins each segment at price 0", self.k));
        }
        Ok(ValidScenario { inner: self, warnings })
    }
}

/// A scenario whose invariants have been checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidScenario {
    inner: Scenario,
    warnings: Vec<String>,
}

impl ValidScenario {
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn into_inner(self) -> Scenario {
        self.inner
    }
}

impl Deref for ValidScenario {
    type Target = Scenario;

    fn deref(&self) -> &Scenario {
        &self.inner
    }
}

/// How selected ads are composed into the segment text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    /// The generator weaves the ads into the segment.
    #[default]
    Integrated,
    /// Ad documents are appended after generation.
    Append,
}

/// Exact call counts against the relevance and generation oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueryCounters {
    pub relevance_calls: u64,
    pub generator_calls: u64,
}

impl std::ops::AddAssign for QueryCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.relevance_calls += rhs.relevance_calls;
        self.generator_calls += rhs.generator_calls;
    }
}

/// The result of one auction round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    /// Winning ad indices, highest perturbed score first.
    pub winners: Vec<usize>,
    /// Per-click price of each winner.
    pub prices: Vec<f64>,
    /// Click-through proxy of each winner in this segment (`q_i^(t)` or `q_{A,i}`).
    pub winner_relevance: Vec<f64>,
    /// Perturbed log-scores, per ad or per candidate set; `-inf` marks ineligible entries.
    pub log_scores: Vec<f64>,
    pub noise: NoiseDraw,
    /// Index of the winning candidate set (combinatorial only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winning_set: Option<usize>,
    pub composition: Composition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl SegmentRecord {
    /// Perturbed score `q b e^eps` of entry `i`.
    pub fn score(&self, i: usize) -> f64 {
        self.log_scores[i].exp()
    }

    pub fn price_of(&self, ad: usize) -> Option<f64> {
        self.winners.iter().position(|&w| w == ad).map(|p| self.prices[p])
    }
}

/// All segments of one session plus the oracle calls it made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub mechanism: Mechanism,
    pub segments: Vec<SegmentRecord>,
    pub counters: QueryCounters,
}

impl AuctionOutcome {
    pub fn winner_ids<'a>(&'a self, scenario: &'a Scenario) -> Vec<Vec<&'a str>> {
        self.segments.iter().map(|s| s.winners.iter().map(|&w| scenario.ads[w].id.as_str()).collect()).collect()
    }
}
