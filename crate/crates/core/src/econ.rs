//! Sponsorship economy: λ policies, pay-per-impression settlement through a
//! double-entry ledger, advertiser deals and standing dynamics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};

use crate::fabric::{FabricError, SocialFabric};
use crate::rank::{ExposureTable, FeedEntry, NumeratorTerms};
use crate::score::{ContentItem, Creator, ScoreBook, Scope};
use crate::{AdvertiserId, CitizenId, CommunityId, ContentId};

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EconError {
    #[error("insufficient funds for {owner}: needs {needed}, has {available}")]
    InsufficientFunds { owner: Owner, needed: f64, available: f64 },
    #[error("{0} has no accepted advertiser deal")]
    NoAcceptedDeal(Owner),
    #[error("community {0} has no registered administrator")]
    Unregistered(CommunityId),
    #[error("invalid amount {0}")]
    InvalidAmount(f64),
    #[error("{0} cannot hold a λ policy")]
    NotASponsor(Owner),
    #[error("ledger audit failed: {0}")]
    Audit(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

pub type Result<T, E = EconError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    Citizen(CitizenId),
    Community(CommunityId),
    Advertiser(AdvertiserId),
    Platform,
    /// Undistributed creator revenue held for a community.
    CreatorPool(CommunityId),
}

impl Owner {
    pub fn kind(self) -> &'static str {
        match self {
            Owner::Citizen(_) => "citizen",
            Owner::Community(_) => "community",
            Owner::Advertiser(_) => "advertiser",
            Owner::Platform => "platform",
            Owner::CreatorPool(_) => "creator_pool",
        }
    }

    /// Empty for the platform.
    pub fn id_string(self) -> String {
        match self {
            Owner::Citizen(p) => p.to_string(),
            Owner::Community(c) | Owner::CreatorPool(c) => c.to_string(),
            Owner::Advertiser(a) => a.to_string(),
            Owner::Platform => String::new(),
        }
    }
}

impl From<Creator> for Owner {
    fn from(c: Creator) -> Self {
        match c {
            Creator::Citizen(p) => Owner::Citizen(p),
            Creator::Advertiser(a) => Owner::Advertiser(a),
        }
    }
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Owner::Platform => f.write_str("platform"),
            other => write!(f, "{} {}", other.kind(), other.id_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    ImpressionSponsorship,
    Subscription,
    AdImpression,
    CreatorReward,
    PlatformFee,
    StandingPurchase,
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reason::ImpressionSponsorship => "impression_sponsorship",
            Reason::Subscription => "subscription",
            Reason::AdImpression => "ad_impression",
            Reason::CreatorReward => "creator_reward",
            Reason::PlatformFee => "platform_fee",
            Reason::StandingPurchase => "standing_purchase",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: u32,
    pub from: Owner,
    pub to: Owner,
    pub amount: f64,
    pub reason: Reason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LedgerEvent {
    /// Sponsor ran dry; its λ drops to 0 from the next round.
    LambdaClamped { round: u32, owner: Owner },
    AdBudgetExhausted { round: u32, advertiser: AdvertiserId },
}

/// Append-only double-entry book. Accounts are opened with an endowment
/// and only change through balanced transfers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ledger {
    entries: Vec<LedgerEntry>,
    balances: BTreeMap<Owner, f64>,
    opening: BTreeMap<Owner, f64>,
    events: Vec<LedgerEvent>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundTotals {
    pub round: u32,
    pub debits: f64,
    pub credits: f64,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn endow(&mut self, owner: Owner, amount: f64) -> Result<()> {
        if !(amount.is_finite() && amount >= 0.0) {
            return Err(EconError::InvalidAmount(amount));
        }
        *self.opening.entry(owner).or_default() += amount;
        *self.balances.entry(owner).or_default() += amount;
        Ok(())
    }

    pub fn balance(&self, owner: Owner) -> f64 {
        self.balances.get(&owner).copied().unwrap_or(0.0)
    }

    pub fn balances(&self) -> &BTreeMap<Owner, f64> {
        &self.balances
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn log(&mut self, event: LedgerEvent) {
        self.events.push(event);
    }

    pub fn transfer(&mut self, round: u32, from: Owner, to: Owner, amount: f64, reason: Reason) -> Result<()> {
        if !(amount.is_finite() && amount > 0.0) {
            return Err(EconError::InvalidAmount(amount));
        }
        let available = self.balance(from);
        if amount > available + EPS {
            return Err(EconError::InsufficientFunds {
                owner: from,
                needed: amount,
                available,
            });
        }
        let amount = amount.min(available);
        *self.balances.entry(from).or_default() -= amount;
        *self.balances.entry(to).or_default() += amount;
        self.entries.push(LedgerEntry {
            round,
            from,
            to,
            amount,
            reason,
        });
        Ok(())
    }

    /// Moves up to `amount`; returns what actually moved.
    fn transfer_available(&mut self, round: u32, from: Owner, to: Owner, amount: f64, reason: Reason) -> f64 {
        let moved = amount.min(self.balance(from));
        if moved > 0.0 {
            self.transfer(round, from, to, moved, reason).expect("covered by balance");
            moved
        } else {
            0.0
        }
    }

    pub fn credits_to(&self, owner: Owner, round: u32) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.round == round && e.to == owner)
            .map(|e| e.amount)
            .sum()
    }

    pub fn round_totals(&self) -> Vec<RoundTotals> {
        let mut by_round: BTreeMap<u32, RoundTotals> = BTreeMap::new();
        for e in &self.entries {
            let t = by_round.entry(e.round).or_insert(RoundTotals {
                round: e.round,
                debits: 0.0,
                credits: 0.0,
            });
            t.debits += e.amount;
            t.credits += e.amount;
        }
        by_round.into_values().collect()
    }

    /// Replays every entry from the opening balances and checks that the
    /// result matches the live balances, that no account ever went negative
    /// and that per-round debits equal credits.
    pub fn audit(&self) -> Result<Vec<RoundTotals>> {
        let mut replay = self.opening.clone();
        let mut per_round: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            if !(e.amount > 0.0) {
                return Err(EconError::Audit(format!("entry {i} has non-positive amount")));
            }
            let from = replay.entry(e.from).or_default();
            *from -= e.amount;
            if *from < -1e-9 {
                return Err(EconError::Audit(format!("{} negative after entry {i}", e.from)));
            }
            *replay.entry(e.to).or_default() += e.amount;
            let t = per_round.entry(e.round).or_default();
            // debit side (sum over from-accounts) and credit side (to-accounts)
            t.0 += e.amount;
            t.1 += e.amount;
        }
        for (owner, &bal) in &self.balances {
            let expected = replay.get(owner).copied().unwrap_or(0.0);
            if (bal - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
                return Err(EconError::Audit(format!("{owner}: balance {bal} but replay gives {expected}")));
            }
            if bal < -1e-9 {
                return Err(EconError::Audit(format!("{owner} has negative balance {bal}")));
            }
        }
        let opening: f64 = self.opening.values().sum();
        let closing: f64 = self.balances.values().sum();
        if (opening - closing).abs() > 1e-9 * (1.0 + opening.abs()) {
            return Err(EconError::Audit(format!("money not conserved: {opening} → {closing}")));
        }
        let totals: Vec<RoundTotals> = per_round
            .into_iter()
            .map(|(round, (debits, credits))| RoundTotals { round, debits, credits })
            .collect();
        if let Some(t) = totals.iter().find(|t| (t.debits - t.credits).abs() > 1e-9) {
            return Err(EconError::Audit(format!("round {} unbalanced", t.round)));
        }
        Ok(totals)
    }

    /// `round,from_kind,from_id,to_kind,to_id,amount,reason`, one row per
    /// entry in append order.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let err = |e: csv::Error| EconError::Csv(e.to_string());
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["round", "from_kind", "from_id", "to_kind", "to_id", "amount", "reason"])
            .map_err(err)?;
        for e in &self.entries {
            wtr.write_record([
                e.round.to_string(),
                e.from.kind().to_string(),
                e.from.id_string(),
                e.to.kind().to_string(),
                e.to.id_string(),
                e.amount.to_string(),
                e.reason.to_string(),
            ])
            .map_err(err)?;
        }
        wtr.flush().map_err(|e| EconError::Csv(e.to_string()))?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deal {
    pub community: CommunityId,
    pub price_per_impression: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Advertiser {
    pub id: AdvertiserId,
    pub budget: f64,
    pub deals: Vec<Deal>,
    /// May target citizens who accept personal ads.
    pub citizen_targeting: bool,
    pub personal_price: f64,
}

impl Advertiser {
    pub fn accepted_deal(&self, community: CommunityId) -> Option<&Deal> {
        self.deals.iter().find(|d| d.accepted && d.community == community)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Funding {
    #[default]
    SelfPaid,
    AdFunded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaPolicy {
    pub owner: Owner,
    pub lambda: f64,
    pub funding: Funding,
    pub price_per_lambda_impression: f64,
}

pub fn has_accepted_deal(owner: Owner, advertisers: &[Advertiser], fabric: &SocialFabric) -> bool {
    match owner {
        Owner::Community(c) => advertisers.iter().any(|a| a.accepted_deal(c).is_some()),
        Owner::Citizen(p) => {
            fabric.citizen(p).is_ok_and(|c| c.accepts_personal_ads) && advertisers.iter().any(|a| a.citizen_targeting)
        }
        _ => false,
    }
}

/// Active λ policies plus changes queued for the next round boundary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LambdaPolicies {
    active: BTreeMap<Owner, LambdaPolicy>,
    pending: BTreeMap<Owner, LambdaPolicy>,
    default_price: f64,
}

impl LambdaPolicies {
    pub fn new(default_price: f64) -> Self {
        Self {
            default_price,
            ..Self::default()
        }
    }

    /// Queues a λ change; it takes effect at the next [`begin_round`].
    ///
    /// [`begin_round`]: LambdaPolicies::begin_round
    pub fn set_lambda(
        &mut self,
        owner: Owner,
        lambda: f64,
        funding: Funding,
        advertisers: &[Advertiser],
        fabric: &SocialFabric,
    ) -> Result<()> {
        if !matches!(owner, Owner::Citizen(_) | Owner::Community(_)) {
            return Err(EconError::NotASponsor(owner));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(EconError::InvalidAmount(lambda));
        }
        if funding == Funding::AdFunded && !has_accepted_deal(owner, advertisers, fabric) {
            return Err(EconError::NoAcceptedDeal(owner));
        }
        let price = self.price_for(owner);
        self.pending.insert(
            owner,
            LambdaPolicy {
                owner,
                lambda,
                funding,
                price_per_lambda_impression: price,
            },
        );
        Ok(())
    }

    pub fn set_price(&mut self, owner: Owner, price: f64) {
        if let Some(p) = self.active.get_mut(&owner) {
            p.price_per_lambda_impression = price;
        }
        if let Some(p) = self.pending.get_mut(&owner) {
            p.price_per_lambda_impression = price;
        }
    }

    pub fn policy(&self, owner: Owner) -> Option<&LambdaPolicy> {
        self.active.get(&owner)
    }

    pub fn price_for(&self, owner: Owner) -> f64 {
        self.pending
            .get(&owner)
            .or_else(|| self.active.get(&owner))
            .map_or(self.default_price, |p| p.price_per_lambda_impression)
    }

    fn clamp(&mut self, owner: Owner) {
        let price = self.price_for(owner);
        let funding = self.active.get(&owner).map(|p| p.funding).unwrap_or_default();
        self.pending.insert(
            owner,
            LambdaPolicy {
                owner,
                lambda: 0.0,
                funding,
                price_per_lambda_impression: price,
            },
        );
    }

    /// Applies queued changes and writes every active λ into the fabric.
    pub fn begin_round(&mut self, fabric: &mut SocialFabric) -> Result<()> {
        let pending = std::mem::take(&mut self.pending);
        self.active.extend(pending);
        for (owner, policy) in &self.active {
            match *owner {
                Owner::Citizen(p) => fabric.citizen_mut(p)?.lambda = policy.lambda,
                Owner::Community(c) => fabric.community_mut(c)?.lambda = policy.lambda,
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EconParams {
    pub platform_fee: f64,
    pub creator_share: f64,
    pub price_per_lambda_impression: f64,
    /// Raw standing gained per unit of ψ.
    pub reward_rate: f64,
}

impl Default for EconParams {
    fn default() -> Self {
        Self {
            platform_fee: 0.3,
            creator_share: 0.7,
            price_per_lambda_impression: 1.0,
            reward_rate: 0.1,
        }
    }
}

/// Purchased standing that advertisers may stake in a community.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StandingAllowances {
    grants: BTreeMap<(AdvertiserId, CommunityId), f64>,
}

impl StandingAllowances {
    pub fn grant(&mut self, advertiser: AdvertiserId, community: CommunityId, amount: f64) {
        *self.grants.entry((advertiser, community)).or_default() += amount;
    }

    pub fn available(&self, advertiser: AdvertiserId, community: CommunityId) -> f64 {
        self.grants.get(&(advertiser, community)).copied().unwrap_or(0.0)
    }

    /// Deducts `amount` if covered.
    pub fn spend(&mut self, advertiser: AdvertiserId, community: CommunityId, amount: f64) -> bool {
        match self.grants.get_mut(&(advertiser, community)) {
            Some(left) if *left + EPS >= amount => {
                *left = (*left - amount).max(0.0);
                true
            }
            _ => false,
        }
    }
}

/// Splits an impression among the sponsors whose terms produced it, in
/// proportion to each term. Fractions sum to 1 when any term is positive.
pub fn attribution(citizen: CitizenId, terms: &NumeratorTerms) -> Vec<(Owner, f64)> {
    let total = terms.total();
    if !(total > 0.0) {
        return Vec::new();
    }
    std::iter::once((Owner::Citizen(citizen), terms.citizen))
        .chain(terms.communities.iter().map(|&(c, t)| (Owner::Community(c), t)))
        .filter(|&(_, t)| t > 0.0)
        .map(|(o, t)| (o, t / total))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SettlementReport {
    pub sponsor_spend: f64,
    pub ad_spend: f64,
    pub clamped: Vec<Owner>,
}

/// One citizen's settled feed for a round.
pub struct SettledFeed<'a> {
    pub table: &'a ExposureTable,
    pub feed: &'a [FeedEntry],
}

/// Charges every sponsor for the attention its λ-terms bought this round
/// and routes the money to the platform, the creators and the creator
/// pools; then bills advertisers for ad impressions.
#[allow(clippy::too_many_arguments)]
pub fn settle_round(
    round: u32,
    feeds: &[SettledFeed<'_>],
    contents: &BTreeMap<ContentId, ContentItem>,
    fabric: &SocialFabric,
    policies: &mut LambdaPolicies,
    advertisers: &[Advertiser],
    params: &EconParams,
    ledger: &mut Ledger,
) -> Result<SettlementReport> {
    if !(params.platform_fee >= 0.0 && params.creator_share >= 0.0 && params.platform_fee + params.creator_share <= 1.0 + EPS)
    {
        return Err(EconError::InvalidAmount(params.platform_fee + params.creator_share));
    }
    let mut report = SettlementReport::default();
    let mut dry: BTreeSet<Owner> = BTreeSet::new();
    let mut dry_advertisers: BTreeSet<AdvertiserId> = BTreeSet::new();

    // Ad revenue first, so ad-funded sponsors can spend it this round.
    for f in feeds {
        let citizen = fabric.citizen(f.table.citizen)?;
        for entry in f.feed {
            let Some(item) = contents.get(&entry.content) else { continue };
            let Creator::Advertiser(a) = item.creator else { continue };
            let Some(adv) = advertisers.iter().find(|x| x.id == a) else { continue };
            if dry_advertisers.contains(&a) {
                continue;
            }
            let recipients: Vec<(Owner, f64)> = citizen
                .communities()
                .filter(|c| item.target_communities.contains(c))
                .filter_map(|c| adv.accepted_deal(c).map(|d| (Owner::Community(c), d.price_per_impression)))
                .collect();
            let payouts: Vec<(Owner, f64)> = if !recipients.is_empty() {
                let n = recipients.len() as f64;
                recipients.into_iter().map(|(o, price)| (o, price * entry.exposure_share / n)).collect()
            } else if citizen.accepts_personal_ads && adv.citizen_targeting {
                vec![(Owner::Citizen(citizen.id), adv.personal_price * entry.exposure_share)]
            } else {
                Vec::new()
            };
            for (to, amount) in payouts {
                if amount <= 0.0 {
                    continue;
                }
                let moved = ledger.transfer_available(round, Owner::Advertiser(a), to, amount, Reason::AdImpression);
                report.ad_spend += moved;
                if moved + EPS < amount {
                    dry_advertisers.insert(a);
                    ledger.log(LedgerEvent::AdBudgetExhausted { round, advertiser: a });
                    break;
                }
            }
        }
    }

    for f in feeds {
        let p = f.table.citizen;
        for entry in f.feed {
            let Some(terms) = f.table.terms.get(&entry.content) else { continue };
            let Some(item) = contents.get(&entry.content) else { continue };
            let creator = Owner::from(item.creator);
            let pool = Owner::CreatorPool(
                item.target_communities.iter().next().copied().unwrap_or(CommunityId(0)),
            );
            for (sponsor, fraction) in attribution(p, terms) {
                if dry.contains(&sponsor) {
                    continue;
                }
                let charge = policies.price_for(sponsor) * entry.exposure_share * fraction;
                if charge <= 0.0 {
                    continue;
                }
                let available = ledger.balance(sponsor);
                let paid = charge.min(available);
                if paid > 0.0 {
                    let reason = match sponsor {
                        Owner::Citizen(_) => Reason::Subscription,
                        _ => Reason::ImpressionSponsorship,
                    };
                    let fee = paid * params.platform_fee;
                    let share = paid * params.creator_share;
                    let rest = paid - fee - share;
                    if fee > 0.0 {
                        ledger.transfer(round, sponsor, Owner::Platform, fee, Reason::PlatformFee)?;
                    }
                    if share > 0.0 {
                        ledger.transfer(round, sponsor, creator, share, Reason::CreatorReward)?;
                    }
                    if rest > EPS {
                        ledger.transfer(round, sponsor, pool, rest, reason)?;
                    }
                    report.sponsor_spend += paid;
                }
                if paid + EPS < charge {
                    dry.insert(sponsor);
                    policies.clamp(sponsor);
                    report.clamped.push(sponsor);
                    ledger.log(LedgerEvent::LambdaClamped { round, owner: sponsor });
                }
            }
        }
    }
    Ok(report)
}

/// Raises each citizen creator's raw standing in every targeted community
/// it belongs to by `reward_rate × ψ(m;c)`. Returns the number of updates.
pub fn reward_standing<'a>(
    contents: impl IntoIterator<Item = &'a ContentItem>,
    book: &ScoreBook,
    fabric: &mut SocialFabric,
    reward_rate: f64,
) -> Result<usize> {
    if !(reward_rate.is_finite() && reward_rate >= 0.0) {
        return Err(EconError::InvalidAmount(reward_rate));
    }
    let mut updates = 0;
    for item in contents {
        let Creator::Citizen(p) = item.creator else { continue };
        for &c in &item.target_communities {
            if !fabric.citizen(p)?.is_member(c) {
                continue;
            }
            let psi = book.card(Scope::Community(c), item.id).map_or(0.0, |card| card.psi);
            let delta = reward_rate * psi;
            if delta > 0.0 {
                fabric.update_standing(p, c, delta)?;
                updates += 1;
            }
        }
    }
    Ok(updates)
}

/// A registered community sells `amount` of seeding allowance to an
/// advertiser for `price`.
#[allow(clippy::too_many_arguments)]
pub fn sell_standing(
    advertiser: AdvertiserId,
    community: CommunityId,
    amount: f64,
    price: f64,
    round: u32,
    ledger: &mut Ledger,
    fabric: &SocialFabric,
    allowances: &mut StandingAllowances,
) -> Result<()> {
    if !fabric.community(community)?.admin_registered {
        return Err(EconError::Unregistered(community));
    }
    if !(amount.is_finite() && amount > 0.0) {
        return Err(EconError::InvalidAmount(amount));
    }
    ledger.transfer(
        round,
        Owner::Advertiser(advertiser),
        Owner::Community(community),
        price,
        Reason::StandingPurchase,
    )?;
    allowances.grant(advertiser, community, amount);
    Ok(())
}
