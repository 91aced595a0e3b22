use thiserror::Error;

/// A single violated scenario invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("scenario has no ads")]
    NoAds,
    #[error("duplicate ad id `{0}`")]
    DuplicateAdId(String),
    #[error("ad `{id}` has negative or non-finite bid {bid}")]
    NegativeBid { id: String, bid: f64 },
    #[error("ad `{id}` has negative or non-finite value {value}")]
    NegativeValue { id: String, value: f64 },
    #[error("relevance vector is missing or has no positive entry")]
    EmptyRelevance,
    #[error("relevance vector has {got} entries for {ads} ads")]
    RelevanceLengthMismatch { got: usize, ads: usize },
    #[error("relevance score {q} at index {index} is outside [0, 1]")]
    RelevanceOutOfRange { index: usize, q: f64 },
    #[error("segment factors must be positive and non-increasing with one entry per segment")]
    InvalidSegmentFactors,
    #[error("segment count T must be at least 1")]
    ZeroSegments,
    #[error("slot count k = {k} must satisfy 1 <= k <= {ads}")]
    SlotCountExceedsAds { k: usize, ads: usize },
    #[error("without-replacement needs T = {segments} <= {ads} ads")]
    WithoutReplacementInfeasible { segments: usize, ads: usize },
    #[error("trial count must be at least 1")]
    ZeroTrials,
    #[error("combinatorial configuration: {0}")]
    Combinatorial(String),
}

/// Every violation found while validating a scenario.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid scenario: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ValidationErrors(pub Vec<ScenarioError>);

impl ValidationErrors {
    pub fn contains(&self, pred: impl Fn(&ScenarioError) -> bool) -> bool {
        self.0.iter().any(pred)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuctionError {
    #[error("no ad has a positive score")]
    NoEligibleAds,
    #[error("need more than {k} eligible ads to fill and price {k} slots, found {eligible}")]
    NotEnoughCompetitors { k: usize, eligible: usize },
    #[error("missing relevance for set {0}")]
    MissingSetScore(usize),
    #[error("combinatorial auction needs at least one candidate set")]
    InsufficientSets,
    #[error("without-replacement session ran out of ads at segment {0}")]
    WithoutReplacementInfeasible(usize),
    #[error("noise draw has {got} entries, expected {expected}")]
    NoiseLength { got: usize, expected: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("all scores are zero; allocation is undefined")]
    DegenerateDenominator,
    #[error("set of size {0} exceeds the 20-element inclusion-exclusion limit")]
    TooManyAds(usize),
    #[error("invalid ad set: {0}")]
    InvalidSet(String),
    #[error("input vectors have mismatched lengths")]
    LengthMismatch,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("scenario carries no static relevance vector")]
    MissingRelevance,
    #[error("service unavailable after {attempts} attempts: {message}")]
    ServiceUnavailable { attempts: u32, message: String },
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("credential environment variable `{0}` is not set")]
    AuthMissing(String),
    #[error("template error: {0}")]
    Template(String),
}
