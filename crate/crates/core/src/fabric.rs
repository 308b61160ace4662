//! The social fabric: a hypergraph whose nodes are citizens and whose
//! hyperedges are (possibly intersecting) communities.
//!
//! Standing `s(p;c)` and devotion `d(c;p)` are stored as raw positive weights
//! and normalized on read: standings over a community's members, devotions
//! over a citizen's memberships. Both therefore always sum to one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{CitizenId, CommunityId};

/// Lower bound on any raw standing. Keeps every normalized standing strictly
/// inside (0, 1).
pub const STANDING_FLOOR: f64 = 1e-6;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Entity {
    Citizen(CitizenId),
    Community(CommunityId),
    Membership(CitizenId, CommunityId),
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Citizen(p) => write!(f, "citizen {p}"),
            Entity::Community(c) => write!(f, "community {c}"),
            Entity::Membership(p, c) => write!(f, "membership of citizen {p} in community {c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FabricError {
    #[error("{0} not found")]
    NotFound(Entity),
    #[error("citizen {0} is already a member of community {1}")]
    AlreadyMember(CitizenId, CommunityId),
    #[error("raw weight must be positive and finite, got {0}")]
    InvalidWeight(f64),
    #[error(
        "insufficient standing for citizen {citizen} in community {community}: \
         raw {available}, requested change {delta}"
    )]
    InsufficientStanding {
        citizen: CitizenId,
        community: CommunityId,
        available: f64,
        delta: f64,
    },
    #[error("invalid principal subcommunities for community {0}: {1}")]
    InvalidSubcommunities(CommunityId, String),
    #[error("community {0} is an intersection; its members follow its parents")]
    DerivedCommunity(CommunityId),
    #[error("malformed fabric document: {0}")]
    Document(String),
    #[error("fabric audit failed: {0}")]
    Inconsistent(String),
}

pub type Result<T, E = FabricError> = std::result::Result<T, E>;

/// Raw weights of one citizen-community edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipEdge {
    pub raw_standing: f64,
    pub raw_devotion: f64,
    pub opted_in: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Citizen {
    pub id: CitizenId,
    memberships: BTreeMap<CommunityId, MembershipEdge>,
    raw_devotion_total: f64,
    /// Personal algorithmic weight λ(p).
    pub lambda: f64,
    pub subscriber: bool,
    pub accepts_personal_ads: bool,
}

impl Citizen {
    fn new(id: CitizenId) -> Self {
        Self {
            id,
            memberships: BTreeMap::new(),
            raw_devotion_total: 0.0,
            lambda: 0.0,
            subscriber: false,
            accepts_personal_ads: false,
        }
    }

    pub fn memberships(&self) -> &BTreeMap<CommunityId, MembershipEdge> {
        &self.memberships
    }

    pub fn communities(&self) -> impl Iterator<Item = CommunityId> + '_ {
        self.memberships.keys().copied()
    }

    pub fn is_member(&self, community: CommunityId) -> bool {
        self.memberships.contains_key(&community)
    }

    /// Normalized devotion d(c;p); `None` when not a member.
    pub fn devotion(&self, community: CommunityId) -> Option<f64> {
        self.memberships
            .get(&community)
            .map(|e| e.raw_devotion / self.raw_devotion_total)
    }

    fn refresh_total(&mut self) {
        self.raw_devotion_total = self.memberships.values().map(|e| e.raw_devotion).sum();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Community {
    pub id: CommunityId,
    members: BTreeSet<CitizenId>,
    raw_standing_total: f64,
    /// Algorithmic weight λ(c).
    pub lambda: f64,
    principal_subcommunities: Vec<BTreeSet<CitizenId>>,
    pub admin_registered: bool,
    derived_from: Option<(CommunityId, CommunityId)>,
}

impl Community {
    fn new(id: CommunityId) -> Self {
        Self {
            id,
            members: BTreeSet::new(),
            raw_standing_total: 0.0,
            lambda: 0.0,
            principal_subcommunities: Vec::new(),
            admin_registered: false,
            derived_from: None,
        }
    }

    pub fn members(&self) -> &BTreeSet<CitizenId> {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// σ(c). Empty until detection has run (or when it could not split).
    pub fn principal_subcommunities(&self) -> &[BTreeSet<CitizenId>] {
        &self.principal_subcommunities
    }

    pub fn derived_from(&self) -> Option<(CommunityId, CommunityId)> {
        self.derived_from
    }
}

/// Hypergraph of citizens and intersecting communities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SocialFabric {
    citizens: Vec<Citizen>,
    communities: Vec<Community>,
    intersection_cache: BTreeMap<(CommunityId, CommunityId), Option<CommunityId>>,
}

fn check_weight(w: f64) -> Result<()> {
    if w.is_finite() && w > 0.0 {
        Ok(())
    } else {
        Err(FabricError::InvalidWeight(w))
    }
}

impl SocialFabric {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_citizen(&mut self) -> CitizenId {
        let id = CitizenId::from_index(self.citizens.len());
        self.citizens.push(Citizen::new(id));
        id
    }

    pub fn add_community(&mut self) -> CommunityId {
        let id = CommunityId::from_index(self.communities.len());
        self.communities.push(Community::new(id));
        id
    }

    pub fn citizens(&self) -> &[Citizen] {
        &self.citizens
    }

    pub fn communities(&self) -> &[Community] {
        &self.communities
    }

    pub fn citizen(&self, id: CitizenId) -> Result<&Citizen> {
        self.citizens
            .get(id.index())
            .ok_or(FabricError::NotFound(Entity::Citizen(id)))
    }

    pub fn citizen_mut(&mut self, id: CitizenId) -> Result<&mut Citizen> {
        self.citizens
            .get_mut(id.index())
            .ok_or(FabricError::NotFound(Entity::Citizen(id)))
    }

    pub fn community(&self, id: CommunityId) -> Result<&Community> {
        self.communities
            .get(id.index())
            .ok_or(FabricError::NotFound(Entity::Community(id)))
    }

    pub fn community_mut(&mut self, id: CommunityId) -> Result<&mut Community> {
        self.communities
            .get_mut(id.index())
            .ok_or(FabricError::NotFound(Entity::Community(id)))
    }

    fn edge(&self, citizen: CitizenId, community: CommunityId) -> Result<&MembershipEdge> {
        self.community(community)?;
        self.citizen(citizen)?
            .memberships
            .get(&community)
            .ok_or(FabricError::NotFound(Entity::Membership(citizen, community)))
    }

    fn edge_mut(&mut self, citizen: CitizenId, community: CommunityId) -> Result<&mut MembershipEdge> {
        self.community(community)?;
        self.citizen_mut(citizen)?
            .memberships
            .get_mut(&community)
            .ok_or(FabricError::NotFound(Entity::Membership(citizen, community)))
    }

    pub fn membership(&self, citizen: CitizenId, community: CommunityId) -> Result<MembershipEdge> {
        self.edge(citizen, community).copied()
    }

    /// Normalized standing s(p;c).
    pub fn standing(&self, citizen: CitizenId, community: CommunityId) -> Result<f64> {
        let raw = self.edge(citizen, community)?.raw_standing;
        Ok(raw / self.communities[community.index()].raw_standing_total)
    }

    /// Normalized devotion d(c;p).
    pub fn devotion(&self, citizen: CitizenId, community: CommunityId) -> Result<f64> {
        let raw = self.edge(citizen, community)?.raw_devotion;
        Ok(raw / self.citizens[citizen.index()].raw_devotion_total)
    }

    /// Joins `citizen` to `community`. Intersection communities cannot be
    /// joined directly; they follow their parents.
    pub fn add_membership(
        &mut self,
        citizen: CitizenId,
        community: CommunityId,
        raw_standing: f64,
        raw_devotion: f64,
    ) -> Result<()> {
        if self.community(community)?.derived_from.is_some() {
            return Err(FabricError::DerivedCommunity(community));
        }
        self.join(citizen, community, raw_standing, raw_devotion)
    }

    fn join(&mut self, citizen: CitizenId, community: CommunityId, raw_standing: f64, raw_devotion: f64) -> Result<()> {
        self.community(community)?;
        if self.citizen(citizen)?.is_member(community) {
            return Err(FabricError::AlreadyMember(citizen, community));
        }
        check_weight(raw_standing)?;
        check_weight(raw_devotion)?;
        let raw_standing = raw_standing.max(STANDING_FLOOR);

        let p = &mut self.citizens[citizen.index()];
        p.memberships.insert(
            community,
            MembershipEdge {
                raw_standing,
                raw_devotion,
                opted_in: true,
            },
        );
        p.refresh_total();
        self.communities[community.index()].members.insert(citizen);
        self.refresh_standing_total(community);
        self.close_over(citizen, community)
    }

    /// Keeps intersections exact after `citizen` joins `community`: derived
    /// communities gain the citizen once it sits in both parents, and cached
    /// answers that were not materialized are dropped.
    fn close_over(&mut self, citizen: CitizenId, community: CommunityId) -> Result<()> {
        let derived: Vec<CommunityId> = self
            .intersection_cache
            .iter()
            .filter(|(&(a, b), _)| a == community || b == community)
            .filter_map(|(&key, &hit)| hit.filter(|&d| self.communities[d.index()].derived_from == Some(key)))
            .collect();
        self.intersection_cache.retain(|&(a, b), hit| {
            let touched = a == community || b == community;
            !touched || hit.is_some_and(|d| self.communities[d.index()].derived_from == Some((a, b)))
        });
        for d in derived {
            let (a, b) = self.communities[d.index()].derived_from.expect("derived");
            let p = &self.citizens[citizen.index()];
            if p.is_member(a) && p.is_member(b) && !p.is_member(d) {
                let raw_standing = (self.standing(citizen, a)? * self.standing(citizen, b)?).sqrt();
                let raw_devotion = self.edge(citizen, a)?.raw_devotion.min(self.edge(citizen, b)?.raw_devotion);
                self.join(citizen, d, raw_standing, raw_devotion)?;
            }
        }
        Ok(())
    }

    fn refresh_standing_total(&mut self, community: CommunityId) {
        let total = self.communities[community.index()]
            .members
            .iter()
            .map(|p| self.citizens[p.index()].memberships[&community].raw_standing)
            .sum();
        self.communities[community.index()].raw_standing_total = total;
    }

    /// Replaces the raw devotion of one membership; all of the citizen's
    /// devotions renormalize.
    pub fn update_devotion(&mut self, citizen: CitizenId, community: CommunityId, new_raw: f64) -> Result<()> {
        check_weight(new_raw)?;
        self.edge_mut(citizen, community)?.raw_devotion = new_raw;
        self.citizens[citizen.index()].refresh_total();
        Ok(())
    }

    /// Adds `delta_raw` (possibly negative, e.g. a stake being spent) to the
    /// raw standing of one membership. Refuses to go below [`STANDING_FLOOR`].
    pub fn update_standing(&mut self, citizen: CitizenId, community: CommunityId, delta_raw: f64) -> Result<()> {
        if !delta_raw.is_finite() {
            return Err(FabricError::InvalidWeight(delta_raw));
        }
        let edge = self.edge_mut(citizen, community)?;
        let next = edge.raw_standing + delta_raw;
        if next < STANDING_FLOOR {
            return Err(FabricError::InsufficientStanding {
                citizen,
                community,
                available: edge.raw_standing,
                delta: delta_raw,
            });
        }
        if delta_raw == 0.0 {
            return Ok(());
        }
        edge.raw_standing = next;
        self.refresh_standing_total(community);
        Ok(())
    }

    /// The community whose members are exactly `a ∩ b`, materializing it on
    /// first request. Returns `None` for an empty intersection.
    ///
    /// If a community with that member set already exists (e.g. `a ⊆ b`) it
    /// is returned instead of creating a duplicate.
    pub fn intersect_communities(&mut self, a: CommunityId, b: CommunityId) -> Result<Option<CommunityId>> {
        self.community(a)?;
        self.community(b)?;
        if a == b {
            return Ok(Some(a));
        }
        let key = (a.min(b), a.max(b));
        if let Some(&hit) = self.intersection_cache.get(&key) {
            return Ok(hit);
        }

        let members: BTreeSet<CitizenId> = self.communities[a.index()]
            .members
            .intersection(&self.communities[b.index()].members)
            .copied()
            .collect();

        let result = if members.is_empty() {
            None
        } else if let Some(existing) = self.communities.iter().find(|c| c.members == members) {
            Some(existing.id)
        } else {
            Some(self.materialize_intersection(key, &members)?)
        };
        self.intersection_cache.insert(key, result);
        Ok(result)
    }

    fn materialize_intersection(
        &mut self,
        (a, b): (CommunityId, CommunityId),
        members: &BTreeSet<CitizenId>,
    ) -> Result<CommunityId> {
        let id = self.add_community();
        self.communities[id.index()].derived_from = Some((a, b));
        for &p in members {
            // Geometric mean of the parent standings; the weaker parent devotion.
            let raw_standing = (self.standing(p, a)? * self.standing(p, b)?).sqrt();
            let raw_devotion = self.edge(p, a)?.raw_devotion.min(self.edge(p, b)?.raw_devotion);
            self.join(p, id, raw_standing, raw_devotion)?;
        }
        Ok(id)
    }

    /// Stores σ(c). Accepts an empty vector (clears) or 2..=7 non-empty
    /// subsets of the member set.
    pub fn set_principal_subcommunities(
        &mut self,
        community: CommunityId,
        blocs: Vec<BTreeSet<CitizenId>>,
    ) -> Result<()> {
        let c = self.community(community)?;
        validate_blocs(c, &blocs)?;
        self.communities[community.index()].principal_subcommunities = blocs;
        Ok(())
    }

    /// Full consistency check: id density, membership symmetry, simplex
    /// sums, σ shape and intersection closure of derived communities.
    pub fn audit(&self) -> Result<()> {
        let fail = |msg: String| Err(FabricError::Inconsistent(msg));
        for (i, p) in self.citizens.iter().enumerate() {
            if p.id.index() != i {
                return fail(format!("citizen at slot {i} has id {}", p.id));
            }
            if !(p.lambda.is_finite() && p.lambda >= 0.0) {
                return fail(format!("citizen {} has lambda {}", p.id, p.lambda));
            }
            for (&c, edge) in &p.memberships {
                let Some(comm) = self.communities.get(c.index()) else {
                    return fail(format!("citizen {} lists unknown community {c}", p.id));
                };
                if !comm.members.contains(&p.id) {
                    return fail(format!("citizen {} lists community {c} which does not list it", p.id));
                }
                if !(edge.raw_standing >= STANDING_FLOOR && edge.raw_devotion > 0.0) {
                    return fail(format!("bad raw weights on edge ({}, {c})", p.id));
                }
            }
            if !p.memberships.is_empty() {
                let sum: f64 = p.memberships.keys().map(|&c| p.devotion(c).unwrap()).sum();
                if (sum - 1.0).abs() > SIMPLEX_TOL {
                    return fail(format!("devotions of citizen {} sum to {sum}", p.id));
                }
            }
        }
        for (j, c) in self.communities.iter().enumerate() {
            if c.id.index() != j {
                return fail(format!("community at slot {j} has id {}", c.id));
            }
            if !(c.lambda.is_finite() && c.lambda >= 0.0) {
                return fail(format!("community {} has lambda {}", c.id, c.lambda));
            }
            for &p in &c.members {
                match self.citizens.get(p.index()) {
                    Some(citizen) if citizen.memberships.contains_key(&c.id) => {}
                    _ => return fail(format!("community {} lists citizen {p} asymmetrically", c.id)),
                }
            }
            if !c.members.is_empty() {
                let sum: f64 = c.members.iter().map(|&p| self.standing(p, c.id).unwrap()).sum();
                if (sum - 1.0).abs() > SIMPLEX_TOL {
                    return fail(format!("standings of community {} sum to {sum}", c.id));
                }
            }
            validate_blocs(c, &c.principal_subcommunities)?;
            if let Some((a, b)) = c.derived_from {
                let (Ok(ca), Ok(cb)) = (self.community(a), self.community(b)) else {
                    return fail(format!("community {} derived from unknown parents", c.id));
                };
                let expected: BTreeSet<_> = ca.members.intersection(&cb.members).copied().collect();
                if expected != c.members {
                    return fail(format!("intersection community {} drifted from its parents", c.id));
                }
            }
        }
        Ok(())
    }

    pub fn to_document(&self) -> FabricDocument {
        let citizens = self
            .citizens
            .iter()
            .map(|p| CitizenRecord {
                id: p.id,
                lambda: p.lambda,
                subscriber: p.subscriber,
                accepts_personal_ads: p.accepts_personal_ads,
            })
            .collect();
        let communities = self
            .communities
            .iter()
            .map(|c| CommunityRecord {
                id: c.id,
                lambda: c.lambda,
                admin_registered: c.admin_registered,
                derived_from: c.derived_from,
                principal_subcommunities: c
                    .principal_subcommunities
                    .iter()
                    .map(|g| g.iter().copied().collect())
                    .collect(),
            })
            .collect();
        let memberships = self
            .citizens
            .iter()
            .flat_map(|p| {
                p.memberships.iter().map(move |(&c, e)| MembershipRecord {
                    citizen: p.id,
                    community: c,
                    raw_standing: e.raw_standing,
                    raw_devotion: e.raw_devotion,
                    opted_in: e.opted_in,
                })
            })
            .collect();
        FabricDocument {
            citizens,
            communities,
            memberships,
        }
    }

    pub fn from_document(doc: &FabricDocument) -> Result<Self> {
        let mut fabric = SocialFabric::new();
        for (i, rec) in doc.citizens.iter().enumerate() {
            if rec.id.index() != i {
                return Err(FabricError::Document(format!("citizen ids must be dense; slot {i} has {}", rec.id)));
            }
            let id = fabric.add_citizen();
            let p = &mut fabric.citizens[id.index()];
            p.lambda = rec.lambda;
            p.subscriber = rec.subscriber;
            p.accepts_personal_ads = rec.accepts_personal_ads;
        }
        for (j, rec) in doc.communities.iter().enumerate() {
            if rec.id.index() != j {
                return Err(FabricError::Document(format!("community ids must be dense; slot {j} has {}", rec.id)));
            }
            let id = fabric.add_community();
            let c = &mut fabric.communities[id.index()];
            c.lambda = rec.lambda;
            c.admin_registered = rec.admin_registered;
            c.derived_from = rec.derived_from;
        }
        for m in &doc.memberships {
            fabric.join(m.citizen, m.community, m.raw_standing, m.raw_devotion)?;
            fabric.edge_mut(m.citizen, m.community)?.opted_in = m.opted_in;
        }
        for rec in &doc.communities {
            let blocs = rec
                .principal_subcommunities
                .iter()
                .map(|g| g.iter().copied().collect())
                .collect();
            fabric.set_principal_subcommunities(rec.id, blocs)?;
            if let Some((a, b)) = rec.derived_from {
                fabric.intersection_cache.insert((a.min(b), a.max(b)), Some(rec.id));
            }
        }
        fabric.audit()?;
        Ok(fabric)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("fabric document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FabricDocument =
            serde_json::from_str(text).map_err(|e| FabricError::Document(e.to_string()))?;
        Self::from_document(&doc)
    }
}

fn validate_blocs(c: &Community, blocs: &[BTreeSet<CitizenId>]) -> Result<()> {
    if blocs.is_empty() {
        return Ok(());
    }
    let bad = |msg: String| Err(FabricError::InvalidSubcommunities(c.id, msg));
    if !(2..=7).contains(&blocs.len()) {
        return bad(format!("expected 2 to 7 blocs, got {}", blocs.len()));
    }
    for (g, bloc) in blocs.iter().enumerate() {
        if bloc.is_empty() {
            return bad(format!("bloc {g} is empty"));
        }
        if !bloc.is_subset(&c.members) {
            return bad(format!("bloc {g} contains non-members"));
        }
    }
    Ok(())
}

/// JSON interchange form of a [`SocialFabric`]. Field names are stable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FabricDocument {
    pub citizens: Vec<CitizenRecord>,
    pub communities: Vec<CommunityRecord>,
    pub memberships: Vec<MembershipRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CitizenRecord {
    pub id: CitizenId,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub subscriber: bool,
    #[serde(default)]
    pub accepts_personal_ads: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommunityRecord {
    pub id: CommunityId,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub admin_registered: bool,
    #[serde(default)]
    pub derived_from: Option<(CommunityId, CommunityId)>,
    #[serde(default)]
    pub principal_subcommunities: Vec<Vec<CitizenId>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipRecord {
    pub citizen: CitizenId,
    pub community: CommunityId,
    pub raw_standing: f64,
    pub raw_devotion: f64,
    #[serde(default = "default_true")]
    pub opted_in: bool,
}

fn default_true() -> bool {
    true
}
