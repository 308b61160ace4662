//! Attention allocation and feed assembly.
//!
//! Each citizen's attention is split across the candidate pool by
//!
//! ```text
//! e(m;p) = [λ(p)ψ(m;p) + Σ_{c∈C(p)} d(c;p)λ(c)ψ(m;c)] / Σ_{m'} [same numerator for m']
//! ```
//!
//! falling back to a uniform split when every numerator is zero.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::econ::StandingAllowances;
use crate::fabric::{Citizen, FabricError, SocialFabric};
use crate::rng;
use crate::score::{balancing_set, ContentItem, Creator, Label, ScoreBook, Scope};
use crate::{CitizenId, CommunityId, ContentId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RankError {
    #[error("insufficient standing to stake {stake} in community {community}")]
    InsufficientStanding { community: CommunityId, stake: f64 },
    #[error("stake must be finite and non-negative, got {0}")]
    InvalidStake(f64),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedParams {
    /// Feed length before exploration slots.
    pub k: usize,
    /// Share of attention reserved for exploration.
    pub epsilon: f64,
    pub exploration_slots: usize,
    /// ψ override per unit of staked standing.
    pub stake_scale: f64,
    /// Rounds a seeded override stays in force.
    pub seed_rounds: u32,
    pub require_topic_overlap: bool,
    /// Max δ gap between a divisive item and its balancing counterparts.
    pub delta_tol: f64,
    /// Number of balancing items shown alongside a divisive tag.
    pub balancing_peek: usize,
}

impl Default for FeedParams {
    fn default() -> Self {
        Self {
            k: 10,
            epsilon: 0.05,
            exploration_slots: 2,
            stake_scale: 10.0,
            seed_rounds: 2,
            require_topic_overlap: false,
            delta_tol: 0.1,
            balancing_peek: 3,
        }
    }
}

/// Additive pieces of one content's exposure numerator.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NumeratorTerms {
    /// λ(p)·ψ(m;p)
    pub citizen: f64,
    /// d(c;p)·λ(c)·ψ(m;c), per community of the citizen.
    pub communities: Vec<(CommunityId, f64)>,
}

impl NumeratorTerms {
    pub fn total(&self) -> f64 {
        self.citizen + self.communities.iter().map(|(_, t)| t).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExposureTable {
    pub citizen: CitizenId,
    pub weights: BTreeMap<ContentId, f64>,
    pub terms: BTreeMap<ContentId, NumeratorTerms>,
    /// Every numerator was zero and attention was split evenly.
    pub uniform_fallback: bool,
}

pub fn numerator_terms(citizen: &Citizen, fabric: &SocialFabric, book: &ScoreBook, content: ContentId) -> NumeratorTerms {
    let communities = citizen
        .communities()
        .map(|c| {
            let devotion = citizen.devotion(c).expect("member");
            let lambda = fabric.communities()[c.index()].lambda;
            (c, devotion * lambda * book.psi(Scope::Community(c), content))
        })
        .collect();
    NumeratorTerms {
        citizen: citizen.lambda * book.psi(Scope::Citizen(citizen.id), content),
        communities,
    }
}

pub fn exposure_table(
    citizen: CitizenId,
    fabric: &SocialFabric,
    book: &ScoreBook,
    pool: &[ContentId],
) -> Result<ExposureTable, RankError> {
    let p = fabric.citizen(citizen)?;
    let pool: BTreeSet<ContentId> = pool.iter().copied().collect();
    let terms: BTreeMap<ContentId, NumeratorTerms> =
        pool.iter().map(|&m| (m, numerator_terms(p, fabric, book, m))).collect();
    let totals: BTreeMap<ContentId, f64> = terms.iter().map(|(&m, t)| (m, t.total())).collect();
    let denominator: f64 = totals.values().sum();
    let uniform_fallback = !(denominator > 0.0);
    let weights = if uniform_fallback {
        let share = 1.0 / pool.len().max(1) as f64;
        pool.iter().map(|&m| (m, share)).collect()
    } else {
        totals.into_iter().map(|(m, t)| (m, t / denominator)).collect()
    };
    Ok(ExposureTable {
        citizen,
        weights,
        terms,
        uniform_fallback,
    })
}

/// e(m;p) over the pool. Shares sum to 1 for a non-empty pool.
pub fn exposure_weights(
    citizen: CitizenId,
    fabric: &SocialFabric,
    book: &ScoreBook,
    pool: &[ContentId],
) -> Result<BTreeMap<ContentId, f64>, RankError> {
    Ok(exposure_table(citizen, fabric, book, pool)?.weights)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceTag {
    pub scope: Scope,
    pub kind: Label,
    pub balancing_peek: Vec<ContentId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedEntry {
    pub content: ContentId,
    pub exposure_share: f64,
    pub provenance: Vec<ProvenanceTag>,
    pub rank_position: usize,
    /// Filled from an exploration slot rather than the top-k.
    pub exploration: bool,
}

fn by_weight_desc(a: &(ContentId, f64), b: &(ContentId, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Top-k by weight share `1 − ε` of attention in proportion to their
/// weights; ε is split evenly over a seeded sample of the remaining pool.
/// Entries come back ordered by share (ties by content id).
pub fn build_feed(
    weights: &BTreeMap<ContentId, f64>,
    k: usize,
    epsilon: f64,
    exploration_slots: usize,
    seed: u64,
) -> Vec<FeedEntry> {
    assert!(k >= 1, "feed size must be at least 1");
    assert!((0.0..1.0).contains(&epsilon), "epsilon must lie in [0, 1)");
    let mut ranked: Vec<(ContentId, f64)> = weights.iter().map(|(&m, &w)| (m, w)).collect();
    ranked.sort_by(by_weight_desc);
    let rest: Vec<ContentId> = if ranked.len() > k {
        let mut r: Vec<ContentId> = ranked[k..].iter().map(|e| e.0).collect();
        r.sort();
        r
    } else {
        Vec::new()
    };
    ranked.truncate(k);

    let explore: Vec<ContentId> = if epsilon > 0.0 && exploration_slots > 0 && !rest.is_empty() {
        let mut rng = rng::seeded(seed);
        let mut picked: Vec<ContentId> = rest
            .choose_multiple(&mut rng, exploration_slots.min(rest.len()))
            .copied()
            .collect();
        picked.sort();
        picked
    } else {
        Vec::new()
    };
    let exploit = if explore.is_empty() { 1.0 } else { 1.0 - epsilon };

    let top_total: f64 = ranked.iter().map(|e| e.1).sum();
    let mut entries: Vec<(ContentId, f64, bool)> = ranked
        .iter()
        .map(|&(m, w)| {
            let share = if top_total > 0.0 {
                exploit * w / top_total
            } else {
                exploit / ranked.len() as f64
            };
            (m, share, false)
        })
        .collect();
    let each = if explore.is_empty() { 0.0 } else { epsilon / explore.len() as f64 };
    entries.extend(explore.into_iter().map(|m| (m, each, true)));
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    entries
        .into_iter()
        .enumerate()
        .map(|(rank_position, (content, exposure_share, exploration))| FeedEntry {
            content,
            exposure_share,
            provenance: Vec::new(),
            rank_position,
            exploration,
        })
        .collect()
}

/// Tags every entry with each scope (the citizen's communities, then the
/// citizen itself) where its label is Bridging or Divisive. Divisive tags
/// carry the head of that scope's balancing set.
pub fn attach_provenance(
    feed: &mut [FeedEntry],
    citizen: &Citizen,
    book: &ScoreBook,
    contents: &BTreeMap<ContentId, ContentItem>,
    params: &FeedParams,
) {
    let scopes: Vec<Scope> = citizen
        .communities()
        .map(Scope::Community)
        .chain(std::iter::once(Scope::Citizen(citizen.id)))
        .collect();
    for entry in feed.iter_mut() {
        entry.provenance.clear();
        for &scope in &scopes {
            let Some(card) = book.card(scope, entry.content) else {
                continue;
            };
            match card.label {
                Label::Bridging => entry.provenance.push(ProvenanceTag {
                    scope,
                    kind: Label::Bridging,
                    balancing_peek: Vec::new(),
                }),
                Label::Divisive => {
                    let mut peek = balancing_set(
                        card,
                        book.scope_cards(scope),
                        contents,
                        params.require_topic_overlap,
                        params.delta_tol,
                    );
                    peek.truncate(params.balancing_peek);
                    entry.provenance.push(ProvenanceTag {
                        scope,
                        kind: Label::Divisive,
                        balancing_peek: peek,
                    });
                }
                Label::Neither => {}
            }
        }
    }
}

/// Linear stake → ψ map.
pub fn stake_to_psi(stake: f64, params: &FeedParams) -> f64 {
    stake * params.stake_scale
}

/// Time-limited ψ overrides bought by staking standing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeedOverrides {
    /// (community, content) → (ψ, first round in which it no longer applies)
    entries: BTreeMap<(CommunityId, ContentId), (f64, u32)>,
}

impl SeedOverrides {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, community: CommunityId, content: ContentId, psi: f64, expires: u32) {
        self.entries.insert((community, content), (psi, expires));
    }

    pub fn active(&self, round: u32) -> impl Iterator<Item = (CommunityId, ContentId, f64)> + '_ {
        self.entries
            .iter()
            .filter(move |(_, &(_, exp))| round < exp)
            .map(|(&(c, m), &(psi, _))| (c, m, psi))
    }

    /// Copies the overrides active in `round` into the book and forgets
    /// expired ones.
    pub fn apply(&mut self, book: &mut ScoreBook, round: u32) {
        self.entries.retain(|_, &mut (_, exp)| round < exp);
        for (&(c, m), &(psi, _)) in &self.entries {
            book.set_override(c, m, psi);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Spends `stake` of the creator's standing in `community` (or of an
/// advertiser's purchased allowance) to give `content` an initial ψ for
/// `seed_rounds` rounds starting at `round`. Returns the override, if any.
#[allow(clippy::too_many_arguments)]
pub fn seed_content(
    content: &ContentItem,
    community: CommunityId,
    stake: f64,
    fabric: &mut SocialFabric,
    allowances: &mut StandingAllowances,
    overrides: &mut SeedOverrides,
    params: &FeedParams,
    round: u32,
) -> Result<Option<f64>, RankError> {
    if !(stake.is_finite() && stake >= 0.0) {
        return Err(RankError::InvalidStake(stake));
    }
    fabric.community(community)?;
    if stake == 0.0 {
        return Ok(None);
    }
    let insufficient = RankError::InsufficientStanding { community, stake };
    match content.creator {
        Creator::Citizen(p) => {
            if !fabric.citizen(p)?.is_member(community) {
                return Err(insufficient);
            }
            fabric
                .update_standing(p, community, -stake)
                .map_err(|e| match e {
                    FabricError::InsufficientStanding { .. } => insufficient.clone(),
                    other => RankError::Fabric(other),
                })?;
        }
        Creator::Advertiser(a) => {
            if !allowances.spend(a, community, stake) {
                return Err(insufficient);
            }
        }
    }
    let psi = stake_to_psi(stake, params);
    overrides.insert(community, content.id, psi, round + params.seed_rounds);
    Ok(Some(psi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::ScoreCard;
    use crate::TopicId;

    fn card(scope: Scope, content: u32, psi: f64, label: Label) -> ScoreCard {
        ScoreCard {
            content: ContentId(content),
            scope,
            iota: 1.0,
            beta: psi,
            delta: 0.0,
            psi,
            characteristic_blocs: Vec::new(),
            label,
            low_confidence: false,
        }
    }

    fn single_community(lambda: f64) -> (SocialFabric, CitizenId, CommunityId) {
        let mut f = SocialFabric::new();
        let p = f.add_citizen();
        let c = f.add_community();
        f.community_mut(c).unwrap().lambda = lambda;
        f.add_membership(p, c, 1.0, 1.0).unwrap();
        (f, p, c)
    }

    #[test]
    fn exposure_single_community() {
        let (f, p, c) = single_community(1.0);
        let mut book = ScoreBook::new();
        book.insert(card(Scope::Community(c), 0, 0.3, Label::Bridging));
        book.insert(card(Scope::Community(c), 1, 0.1, Label::Bridging));
        let w = exposure_weights(p, &f, &book, &[ContentId(0), ContentId(1)]).unwrap();
        assert!((w[&ContentId(0)] - 0.75).abs() < 1e-12);
        assert!((w[&ContentId(1)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn equal_psi_and_zero_numerators_are_uniform() {
        let (f, p, c) = single_community(1.0);
        let mut book = ScoreBook::new();
        for m in 0..4 {
            book.insert(card(Scope::Community(c), m, 0.2, Label::Bridging));
        }
        let pool: Vec<_> = (0..4).map(ContentId).collect();
        let w = exposure_weights(p, &f, &book, &pool).unwrap();
        assert!(w.values().all(|&x| (x - 0.25).abs() < 1e-12));

        let (f0, p0, _) = single_community(0.0);
        let t = exposure_table(p0, &f0, &book, &pool).unwrap();
        assert!(t.uniform_fallback);
        assert!(t.weights.values().all(|&x| (x - 0.25).abs() < 1e-12));
    }

    #[test]
    fn exposure_two_communities_devotion_weighted() {
        let mut f = SocialFabric::new();
        let p = f.add_citizen();
        let c1 = f.add_community();
        let c2 = f.add_community();
        for c in [c1, c2] {
            f.community_mut(c).unwrap().lambda = 1.0;
            f.add_membership(p, c, 1.0, 1.0).unwrap();
        }
        let mut book = ScoreBook::new();
        book.insert(card(Scope::Community(c1), 0, 0.8, Label::Bridging));
        book.insert(card(Scope::Community(c2), 0, 0.0, Label::Neither));
        book.insert(card(Scope::Community(c1), 1, 0.4, Label::Bridging));
        book.insert(card(Scope::Community(c2), 1, 0.4, Label::Bridging));
        let t = exposure_table(p, &f, &book, &[ContentId(0), ContentId(1)]).unwrap();
        assert!((t.terms[&ContentId(0)].total() - 0.4).abs() < 1e-12);
        assert!((t.terms[&ContentId(1)].total() - 0.4).abs() < 1e-12);
        assert!((t.weights[&ContentId(0)] - 0.5).abs() < 1e-12);
    }

    fn weights(ws: &[f64]) -> BTreeMap<ContentId, f64> {
        let total: f64 = ws.iter().sum();
        ws.iter().enumerate().map(|(i, &w)| (ContentId(i as u32), w / total)).collect()
    }

    #[test]
    fn feed_without_exploration_is_top_k() {
        let w = weights(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        let feed = build_feed(&w, 3, 0.0, 2, 1);
        let ids: Vec<u32> = feed.iter().map(|e| e.content.0).collect();
        assert_eq!(ids, vec![0, 4, 2]);
        assert!((feed[0].exposure_share - 5.0 / 12.0).abs() < 1e-12);
        assert!((feed.iter().map(|e| e.exposure_share).sum::<f64>() - 1.0).abs() < 1e-12);

        let all = build_feed(&w, 10, 0.0, 2, 1);
        for e in &all {
            assert!((e.exposure_share - w[&e.content]).abs() < 1e-15);
        }
        assert_eq!(all.iter().map(|e| e.rank_position).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn exploration_budget_split() {
        let w = weights(&[10.0, 9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        let feed = build_feed(&w, 3, 0.1, 2, 42);
        let exploit: f64 = feed.iter().filter(|e| !e.exploration).map(|e| e.exposure_share).sum();
        let explore: f64 = feed.iter().filter(|e| e.exploration).map(|e| e.exposure_share).sum();
        assert!((exploit - 0.9).abs() < 1e-12);
        assert!((explore - 0.1).abs() < 1e-12);
        assert_eq!(feed.iter().filter(|e| e.exploration).count(), 2);
        assert!(feed.iter().filter(|e| e.exploration).all(|e| e.content.0 >= 3));
        assert_eq!(feed, build_feed(&w, 3, 0.1, 2, 42));
    }

    #[test]
    fn ties_order_by_content_id() {
        let w = weights(&[1.0, 1.0, 1.0]);
        let feed = build_feed(&w, 2, 0.0, 0, 0);
        assert_eq!(feed[0].content, ContentId(0));
        assert_eq!(feed[1].content, ContentId(1));
    }

    fn content(id: u32, creator: Creator, c: CommunityId) -> ContentItem {
        ContentItem {
            id: ContentId(id),
            creator,
            topics: [TopicId(0)].into(),
            created_round: 0,
            target_communities: [c].into(),
            latent_position: None,
        }
    }

    #[test]
    fn staking() {
        let mut f = SocialFabric::new();
        let c = f.add_community();
        f.community_mut(c).unwrap().lambda = 1.0;
        let creators: Vec<_> = (0..3).map(|_| f.add_citizen()).collect();
        for &p in &creators[..2] {
            f.add_membership(p, c, 1.0, 1.0).unwrap();
        }
        let outsider = f.add_community();
        f.add_membership(creators[2], outsider, 1.0, 1.0).unwrap();

        let mut allow = StandingAllowances::default();
        let mut ov = SeedOverrides::new();
        let params = FeedParams::default();

        let zero = content(0, Creator::Citizen(creators[0]), c);
        assert_eq!(seed_content(&zero, c, 0.0, &mut f, &mut allow, &mut ov, &params, 0).unwrap(), None);
        assert!(ov.is_empty());

        let a = content(1, Creator::Citizen(creators[0]), c);
        let b = content(2, Creator::Citizen(creators[1]), c);
        seed_content(&a, c, 0.1, &mut f, &mut allow, &mut ov, &params, 0).unwrap();
        seed_content(&b, c, 0.2, &mut f, &mut allow, &mut ov, &params, 0).unwrap();
        let mut book = ScoreBook::new();
        ov.apply(&mut book, 0);
        let w = exposure_weights(creators[0], &f, &book, &[a.id, b.id]).unwrap();
        assert!((w[&b.id] / w[&a.id] - 2.0).abs() < 1e-12);

        let mut later = ScoreBook::new();
        ov.apply(&mut later, params.seed_rounds);
        assert_eq!(later.override_for(c, a.id), None);

        let stranger = content(3, Creator::Citizen(creators[2]), c);
        assert!(matches!(
            seed_content(&stranger, c, 0.1, &mut f, &mut allow, &mut ov, &params, 0),
            Err(RankError::InsufficientStanding { .. })
        ));
        let greedy = content(4, Creator::Citizen(creators[0]), c);
        assert!(matches!(
            seed_content(&greedy, c, 5.0, &mut f, &mut allow, &mut ov, &params, 0),
            Err(RankError::InsufficientStanding { .. })
        ));
    }

    #[test]
    fn provenance_tags_divisive_with_balancing() {
        let (f, p, c) = single_community(1.0);
        let scope = Scope::Community(c);
        let mut book = ScoreBook::new();
        let mut d0 = card(scope, 0, 0.5, Label::Divisive);
        d0.delta = 0.8;
        d0.beta = 0.05;
        d0.characteristic_blocs = vec![0];
        let mut d1 = d0.clone();
        d1.content = ContentId(1);
        d1.characteristic_blocs = vec![1];
        book.insert(d0);
        book.insert(d1);
        book.insert(card(scope, 2, 0.4, Label::Bridging));
        let w = weights(&[1.0, 1.0, 1.0]);
        let mut feed = build_feed(&w, 3, 0.0, 0, 0);
        attach_provenance(&mut feed, f.citizen(p).unwrap(), &book, &BTreeMap::new(), &FeedParams::default());
        let tag0 = &feed.iter().find(|e| e.content.0 == 0).unwrap().provenance[0];
        assert_eq!(tag0.kind, Label::Divisive);
        assert_eq!(tag0.balancing_peek, vec![ContentId(1)]);
        let tag2 = &feed.iter().find(|e| e.content.0 == 2).unwrap().provenance[0];
        assert_eq!(tag2.kind, Label::Bridging);
        assert!(tag2.balancing_peek.is_empty());
    }
}
