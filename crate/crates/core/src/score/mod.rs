//! Per-scope content scores: interest ι, bridging β, divisiveness δ,
//! balancing sets κ and the combined score ψ = ι·max(β, δ).
//!
//! A scope is either a community, whose blocs are its principal
//! subcommunities, or a citizen, whose blocs are the communities it belongs
//! to.

mod mf;
mod reactions;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::fabric::{FabricError, SocialFabric};
use crate::{AdvertiserId, CitizenId, CommunityId, ContentId, TopicId};

pub use mf::{bridging_mf, MfFit, MfParams};
pub use reactions::{Reaction, ReactionMatrix, ReactionRecord};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("at least two blocs are required, got {0}")]
    FewerThanTwoBlocs(usize),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("reaction by citizen {citizen} on content {content} without exposure")]
    InvalidRecord { citizen: CitizenId, content: ContentId },
    #[error("unknown bridging backend {0:?}; valid backends: gac_uniform, gac_penrose, mf")]
    UnknownBackend(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

pub type Result<T, E = ScoreError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Creator {
    Citizen(CitizenId),
    Advertiser(AdvertiserId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContentItem {
    pub id: ContentId,
    pub creator: Creator,
    pub topics: BTreeSet<TopicId>,
    pub created_round: u32,
    pub target_communities: BTreeSet<CommunityId>,
    /// Ground truth for the simulator. Scoring and ranking never read it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_position: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Community(CommunityId),
    Citizen(CitizenId),
}

impl Scope {
    pub fn kind(self) -> &'static str {
        match self {
            Scope::Community(_) => "community",
            Scope::Citizen(_) => "citizen",
        }
    }

    pub fn id(self) -> u32 {
        match self {
            Scope::Community(c) => c.0,
            Scope::Citizen(p) => p.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Bridging,
    Divisive,
    Neither,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Bridging => "bridging",
            Label::Divisive => "divisive",
            Label::Neither => "neither",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlocWeighting {
    Uniform,
    /// √n-proportional weights.
    Penrose,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgingBackend {
    GacUniform,
    #[default]
    GacPenrose,
    Mf,
}

impl BridgingBackend {
    pub const NAMES: [&'static str; 3] = ["gac_uniform", "gac_penrose", "mf"];

    pub fn name(self) -> &'static str {
        match self {
            BridgingBackend::GacUniform => "gac_uniform",
            BridgingBackend::GacPenrose => "gac_penrose",
            BridgingBackend::Mf => "mf",
        }
    }
}

impl FromStr for BridgingBackend {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gac_uniform" => Ok(BridgingBackend::GacUniform),
            "gac_penrose" => Ok(BridgingBackend::GacPenrose),
            "mf" => Ok(BridgingBackend::Mf),
            other => Err(ScoreError::UnknownBackend(other.to_string())),
        }
    }
}

/// Whether ψ rewards bridging/balancing or only raw interest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    #[default]
    Bridging,
    /// Popularity baseline: β is pinned to 1 and δ to 0, so ψ = ι.
    Engagement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreParams {
    pub backend: BridgingBackend,
    pub mode: ScoringMode,
    /// Laplace smoothing on bloc approval rates.
    pub alpha: f64,
    pub label_floor: f64,
    /// Interest half-life in rounds.
    pub half_life: f64,
    pub mf: MfParams,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            backend: BridgingBackend::default(),
            mode: ScoringMode::default(),
            alpha: 1.0,
            label_floor: 0.1,
            half_life: 4.0,
            mf: MfParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub content: ContentId,
    pub scope: Scope,
    pub iota: f64,
    pub beta: f64,
    pub delta: f64,
    pub psi: f64,
    /// Indices into the scope's blocs; empty unless the label is Divisive.
    pub characteristic_blocs: Vec<usize>,
    pub label: Label,
    /// β fell back to a single-bloc approval rate.
    pub low_confidence: bool,
}

/// Up/down votes cast by one bloc on one content.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlocTally {
    pub positive: u32,
    pub negative: u32,
    /// Number of citizens in the bloc.
    pub size: usize,
}

impl BlocTally {
    /// (#pos + α) / (#pos + #neg + 2α); 0.5 when nobody voted.
    pub fn rate(&self, alpha: f64) -> f64 {
        let votes = f64::from(self.positive) + f64::from(self.negative);
        if votes == 0.0 {
            return 0.5;
        }
        (f64::from(self.positive) + alpha) / (votes + 2.0 * alpha)
    }
}

pub fn tally(reactions: &ReactionMatrix, content: ContentId, bloc: &BTreeSet<CitizenId>) -> BlocTally {
    let mut t = BlocTally {
        size: bloc.len(),
        ..BlocTally::default()
    };
    for (p, rec) in reactions.records_for(content) {
        if !bloc.contains(&p) {
            continue;
        }
        match rec.reaction {
            Reaction::Up => t.positive += 1,
            Reaction::Down => t.negative += 1,
            Reaction::Neutral => {}
        }
    }
    t
}

/// Interest of a member set in a content: time-decayed exposures, with
/// explicit reactions counting 1.5, averaged over the members.
pub fn interest(
    reactions: &ReactionMatrix,
    content: ContentId,
    members: &BTreeSet<CitizenId>,
    current_round: u32,
    half_life: f64,
) -> f64 {
    assert!(half_life > 0.0, "half_life must be positive");
    if members.is_empty() {
        return 0.0;
    }
    let weight = |rec: &ReactionRecord| {
        if !rec.exposed {
            return 0.0;
        }
        let age = f64::from(current_round.saturating_sub(rec.round));
        let engaged = if rec.reaction.is_explicit() { 1.5 } else { 1.0 };
        (-age / half_life).exp2() * engaged
    };
    let total: f64 = if members.len() <= 8 {
        members
            .iter()
            .filter_map(|&p| reactions.get(p, content))
            .map(weight)
            .sum()
    } else {
        reactions
            .records_for(content)
            .filter(|(p, _)| members.contains(p))
            .map(|(_, r)| weight(r))
            .sum()
    };
    total / members.len() as f64
}

/// Group-aware consensus over bloc approval rates: a weighted geometric
/// mean, uniform or √n-weighted.
pub fn gac_from_rates(rates: &[f64], sizes: &[usize], weighting: BlocWeighting) -> f64 {
    debug_assert_eq!(rates.len(), sizes.len());
    let weights: Vec<f64> = match weighting {
        BlocWeighting::Uniform => vec![1.0 / rates.len() as f64; rates.len()],
        BlocWeighting::Penrose => {
            let roots: Vec<f64> = sizes.iter().map(|&n| (n as f64).sqrt()).collect();
            let total: f64 = roots.iter().sum();
            if total > 0.0 {
                roots.into_iter().map(|r| r / total).collect()
            } else {
                vec![1.0 / rates.len() as f64; rates.len()]
            }
        }
    };
    weighted_geometric_mean(rates, &weights)
}

pub(crate) fn weighted_geometric_mean(values: &[f64], weights: &[f64]) -> f64 {
    // Exact on consensus inputs: skip the log round trip.
    if let Some(&first) = values.first() {
        if values.iter().all(|&v| v == first) {
            return first;
        }
    }
    if values.iter().zip(weights).any(|(&v, &w)| v <= 0.0 && w > 0.0) {
        return 0.0;
    }
    values
        .iter()
        .zip(weights)
        .map(|(&v, &w)| if w > 0.0 { w * v.ln() } else { 0.0 })
        .sum::<f64>()
        .exp()
}

pub fn bridging_from_tallies(tallies: &[BlocTally], weighting: BlocWeighting, alpha: f64) -> Result<f64> {
    if tallies.len() < 2 {
        return Err(ScoreError::FewerThanTwoBlocs(tallies.len()));
    }
    let rates: Vec<f64> = tallies.iter().map(|t| t.rate(alpha)).collect();
    let sizes: Vec<usize> = tallies.iter().map(|t| t.size).collect();
    Ok(gac_from_rates(&rates, &sizes, weighting))
}

/// β for one content over the given blocs.
pub fn bridging_gac(
    reactions: &ReactionMatrix,
    content: ContentId,
    blocs: &[BTreeSet<CitizenId>],
    weighting: BlocWeighting,
    alpha: f64,
) -> Result<f64> {
    let tallies: Vec<BlocTally> = blocs.iter().map(|b| tally(reactions, content, b)).collect();
    bridging_from_tallies(&tallies, weighting, alpha)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Divisiveness {
    pub delta: f64,
    /// Blocs approving at rate ≥ 0.5.
    pub characteristic_blocs: Vec<usize>,
    /// Characteristic set is a non-empty strict subset of the blocs.
    pub strict: bool,
}

pub fn divisiveness_from_rates(rates: &[f64]) -> Result<Divisiveness> {
    if rates.len() < 2 {
        return Err(ScoreError::FewerThanTwoBlocs(rates.len()));
    }
    let max = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let characteristic_blocs: Vec<usize> = (0..rates.len()).filter(|&g| rates[g] >= 0.5).collect();
    let strict = !characteristic_blocs.is_empty() && characteristic_blocs.len() < rates.len();
    Ok(Divisiveness {
        delta: max - min,
        characteristic_blocs,
        strict,
    })
}

pub fn divisiveness(
    reactions: &ReactionMatrix,
    content: ContentId,
    blocs: &[BTreeSet<CitizenId>],
    alpha: f64,
) -> Result<Divisiveness> {
    let rates: Vec<f64> = blocs.iter().map(|b| tally(reactions, content, b).rate(alpha)).collect();
    divisiveness_from_rates(&rates)
}

/// ψ = ι·max(β, δ).
pub fn community_score(iota: f64, beta: f64, delta: f64) -> f64 {
    iota * beta.max(delta)
}

pub fn label_for(beta: f64, delta: f64, strict_divisive: bool, label_floor: f64) -> Label {
    if beta >= delta && beta >= label_floor {
        Label::Bridging
    } else if delta > beta && delta >= label_floor && strict_divisive {
        Label::Divisive
    } else {
        Label::Neither
    }
}

/// Assembles a card from the scope's bloc tallies. With fewer than two
/// blocs β falls back to the pooled approval rate and δ to 0.
pub fn card_from_tallies(
    content: ContentId,
    scope: Scope,
    iota: f64,
    tallies: &[BlocTally],
    mf_beta: Option<f64>,
    params: &ScoreParams,
) -> ScoreCard {
    if params.mode == ScoringMode::Engagement {
        return ScoreCard {
            content,
            scope,
            iota,
            beta: 1.0,
            delta: 0.0,
            psi: community_score(iota, 1.0, 0.0),
            characteristic_blocs: Vec::new(),
            label: Label::Neither,
            low_confidence: false,
        };
    }
    let weighting = match params.backend {
        BridgingBackend::GacUniform => BlocWeighting::Uniform,
        BridgingBackend::GacPenrose | BridgingBackend::Mf => BlocWeighting::Penrose,
    };
    let (beta, div, low_confidence) = match bridging_from_tallies(tallies, weighting, params.alpha) {
        Ok(gac) => {
            let rates: Vec<f64> = tallies.iter().map(|t| t.rate(params.alpha)).collect();
            let div = divisiveness_from_rates(&rates).expect("two or more blocs");
            match (params.backend, mf_beta) {
                (BridgingBackend::Mf, Some(b)) => (b, div, false),
                (BridgingBackend::Mf, None) => (gac, div, true),
                _ => (gac, div, false),
            }
        }
        Err(_) => {
            let pooled = tallies.iter().fold(BlocTally::default(), |acc, t| BlocTally {
                positive: acc.positive + t.positive,
                negative: acc.negative + t.negative,
                size: acc.size + t.size,
            });
            let div = Divisiveness {
                delta: 0.0,
                characteristic_blocs: Vec::new(),
                strict: false,
            };
            (mf_beta.unwrap_or(pooled.rate(params.alpha)), div, true)
        }
    };
    let label = label_for(beta, div.delta, div.strict, params.label_floor);
    ScoreCard {
        content,
        scope,
        iota,
        beta,
        delta: div.delta,
        psi: community_score(iota, beta, div.delta),
        characteristic_blocs: if label == Label::Divisive {
            div.characteristic_blocs
        } else {
            Vec::new()
        },
        label,
        low_confidence,
    }
}

/// Community-scope card. Blocs are σ(c); when σ is unset the whole
/// community counts as one bloc. `mf_beta` is the MF backend's value for
/// this content, if fitted.
pub fn score_in_community(
    content: ContentId,
    community: CommunityId,
    fabric: &SocialFabric,
    reactions: &ReactionMatrix,
    params: &ScoreParams,
    current_round: u32,
    mf_beta: Option<f64>,
) -> Result<ScoreCard> {
    let comm = fabric.community(community)?;
    let iota = interest(reactions, content, comm.members(), current_round, params.half_life);
    let tallies: Vec<BlocTally> = if comm.principal_subcommunities().len() >= 2 {
        comm.principal_subcommunities()
            .iter()
            .map(|b| tally(reactions, content, b))
            .collect()
    } else {
        vec![tally(reactions, content, comm.members())]
    };
    Ok(card_from_tallies(
        content,
        Scope::Community(community),
        iota,
        &tallies,
        mf_beta,
        params,
    ))
}

/// Citizen-scope card: the citizen's communities act as its blocs and ι
/// is the singleton-scope interest.
pub fn citizen_score(
    content: ContentId,
    citizen: CitizenId,
    fabric: &SocialFabric,
    reactions: &ReactionMatrix,
    params: &ScoreParams,
    current_round: u32,
) -> Result<ScoreCard> {
    let p = fabric.citizen(citizen)?;
    let tallies: Vec<BlocTally> = p
        .communities()
        .map(|c| tally(reactions, content, fabric.communities()[c.index()].members()))
        .collect();
    Ok(citizen_card_from_tallies(content, citizen, reactions, &tallies, params, current_round))
}

pub fn citizen_card_from_tallies(
    content: ContentId,
    citizen: CitizenId,
    reactions: &ReactionMatrix,
    community_tallies: &[BlocTally],
    params: &ScoreParams,
    current_round: u32,
) -> ScoreCard {
    let me: BTreeSet<CitizenId> = [citizen].into();
    let iota = interest(reactions, content, &me, current_round, params.half_life);
    let params = if params.backend == BridgingBackend::Mf {
        // MF is fitted per community; citizen scope uses √n-weighted GAC.
        ScoreParams {
            backend: BridgingBackend::GacPenrose,
            ..params.clone()
        }
    } else {
        params.clone()
    };
    card_from_tallies(content, Scope::Citizen(citizen), iota, community_tallies, None, &params)
}

/// κ(m̈): divisive counterparts of `target` in the same scope with similar δ,
/// disjoint characteristic blocs and (optionally) a shared topic; ordered by
/// ψ descending then id.
pub fn balancing_set<'a>(
    target: &ScoreCard,
    scope_cards: impl IntoIterator<Item = &'a ScoreCard>,
    contents: &BTreeMap<ContentId, ContentItem>,
    require_topic_overlap: bool,
    delta_tol: f64,
) -> Vec<ContentId> {
    if target.label != Label::Divisive {
        return Vec::new();
    }
    let own: BTreeSet<usize> = target.characteristic_blocs.iter().copied().collect();
    let topics = contents.get(&target.content).map(|m| &m.topics);
    let mut hits: Vec<&ScoreCard> = scope_cards
        .into_iter()
        .filter(|c| c.scope == target.scope && c.content != target.content)
        .filter(|c| c.label == Label::Divisive)
        .filter(|c| (c.delta - target.delta).abs() <= delta_tol)
        .filter(|c| c.characteristic_blocs.iter().all(|g| !own.contains(g)))
        .filter(|c| {
            !require_topic_overlap
                || match (topics, contents.get(&c.content)) {
                    (Some(a), Some(b)) => !a.is_disjoint(&b.topics),
                    _ => false,
                }
        })
        .collect();
    hits.sort_by(|a, b| b.psi.total_cmp(&a.psi).then(a.content.cmp(&b.content)));
    hits.into_iter().map(|c| c.content).collect()
}

/// All score cards for a round, keyed by scope and content.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreBook {
    cards: BTreeMap<(Scope, ContentId), ScoreCard>,
    overrides: BTreeMap<(CommunityId, ContentId), f64>,
}

impl ScoreBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, card: ScoreCard) {
        self.cards.insert((card.scope, card.content), card);
    }

    pub fn card(&self, scope: Scope, content: ContentId) -> Option<&ScoreCard> {
        self.cards.get(&(scope, content))
    }

    /// Seeded prominence replacing the organic community ψ.
    pub fn set_override(&mut self, community: CommunityId, content: ContentId, psi: f64) {
        self.overrides.insert((community, content), psi);
    }

    pub fn override_for(&self, community: CommunityId, content: ContentId) -> Option<f64> {
        self.overrides.get(&(community, content)).copied()
    }

    /// Effective ψ; missing cards count as 0.
    pub fn psi(&self, scope: Scope, content: ContentId) -> f64 {
        if let Scope::Community(c) = scope {
            if let Some(v) = self.override_for(c, content) {
                return v;
            }
        }
        self.card(scope, content).map_or(0.0, |c| c.psi)
    }

    pub fn scope_cards(&self, scope: Scope) -> impl Iterator<Item = &ScoreCard> {
        self.cards
            .range((scope, ContentId(0))..=(scope, ContentId(u32::MAX)))
            .map(|(_, c)| c)
    }

    pub fn cards(&self) -> impl Iterator<Item = &ScoreCard> {
        self.cards.values()
    }

    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }

    /// Writes the scorecard CSV, ordered by scope then content.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        write_cards_csv(self.cards.values(), writer)
    }
}

pub fn write_cards_csv<'a, W: io::Write>(cards: impl IntoIterator<Item = &'a ScoreCard>, writer: W) -> Result<()> {
    let csv_err = |e: csv::Error| ScoreError::Csv(e.to_string());
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "content_id",
        "scope_kind",
        "scope_id",
        "iota",
        "beta",
        "delta",
        "psi",
        "label",
        "characteristic_blocs",
    ])
    .map_err(csv_err)?;
    for c in cards {
        let blocs = c
            .characteristic_blocs
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(";");
        wtr.write_record([
            c.content.to_string(),
            c.scope.kind().to_string(),
            c.scope.id().to_string(),
            c.iota.to_string(),
            c.beta.to_string(),
            c.delta.to_string(),
            c.psi.to_string(),
            c.label.to_string(),
            blocs,
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| ScoreError::Csv(e.to_string()))?;
    Ok(())
}
