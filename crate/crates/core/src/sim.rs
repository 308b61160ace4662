//! Agent-based harness that closes the create → score → rank → react loop.
//!
//! Citizens carry a latent ideology; content carries a latent position.
//! Attitude is `logistic(−‖x − pos‖² / T)`, citizen belief is attitude
//! times cumulative exposure, and community belief is aggregated from
//! member beliefs (see [`aggregate_belief`]).

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{self, AttitudeMatrix, DetectError, DetectParams};
use crate::econ::{
    self, Advertiser, Deal, EconError, EconParams, Funding, LambdaPolicies, Ledger, Owner, SettledFeed,
    SettlementReport, StandingAllowances,
};
use crate::fabric::{FabricError, SocialFabric};
use crate::rank::{self, FeedEntry, FeedParams, RankError, SeedOverrides};
use crate::rng::{self, Stream};
use crate::score::{
    self, weighted_geometric_mean, BlocTally, BlocWeighting, BridgingBackend, ContentItem, Creator, Reaction,
    ReactionMatrix, ScoreBook, ScoreError, ScoreParams, ScoringMode, Scope,
};
use crate::{AdvertiserId, CitizenId, CommunityId, ContentId, TopicId};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    /// Location inside the scenario document, e.g. `population.blocs[1].spread`.
    pub path: String,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(#[from] ConfigError),
    #[error("cannot aggregate belief over an empty member set")]
    EmptyCommunity,
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Econ(#[from] EconError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlocTemplate {
    pub center: Vec<f64>,
    pub spread: f64,
    /// Relative share of the population.
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub citizens: usize,
    pub dim: usize,
    pub blocs: Vec<BlocTemplate>,
    pub subscriber_fraction: f64,
    /// λ(p) for subscribers.
    pub citizen_lambda: f64,
    /// Opening balance for subscribers.
    pub citizen_balance: f64,
    pub personal_ads_fraction: f64,
    /// Add the pairwise intersections of template communities.
    pub close_intersections: bool,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            citizens: 0,
            dim: 1,
            blocs: Vec::new(),
            subscriber_fraction: 0.0,
            citizen_lambda: 0.0,
            citizen_balance: 0.0,
            personal_ads_fraction: 0.0,
            close_intersections: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommunityTemplate {
    /// Planted blocs this community recruits from.
    pub blocs: Vec<usize>,
    pub join_prob: f64,
    pub lambda: f64,
    pub balance: f64,
    pub admin_registered: bool,
    pub funding: Funding,
}

impl Default for CommunityTemplate {
    fn default() -> Self {
        Self {
            blocs: Vec::new(),
            join_prob: 1.0,
            lambda: 1.0,
            balance: 0.0,
            admin_registered: false,
            funding: Funding::SelfPaid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandingPurchase {
    pub community: usize,
    pub amount: f64,
    pub price: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvertiserConfig {
    pub budget: f64,
    /// `community` indexes the community templates.
    pub deals: Vec<Deal>,
    pub citizen_targeting: bool,
    pub personal_price: f64,
    pub position: Vec<f64>,
    pub items_per_round: usize,
    /// Bought at round 0.
    pub standing: Option<StandingPurchase>,
    /// Staked per item in each deal community while the allowance lasts.
    pub stake: f64,
}

impl Default for AdvertiserConfig {
    fn default() -> Self {
        Self {
            budget: 0.0,
            deals: Vec::new(),
            citizen_targeting: false,
            personal_price: 0.0,
            position: Vec::new(),
            items_per_round: 0,
            standing: None,
            stake: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentConfig {
    pub creators_per_round: usize,
    /// Std-dev of the noise added to each post's position.
    pub position_noise: f64,
    /// Probability that a creator stakes standing on a post.
    pub stake_prob: f64,
    /// Stakes are uniform on [0, stake_max] raw standing.
    pub stake_max: f64,
    pub topics: u32,
    pub advertisers: Vec<AdvertiserConfig>,
}

impl Default for ContentConfig {
    fn default() -> Self {
        Self {
            creators_per_round: 10,
            position_noise: 0.1,
            stake_prob: 0.5,
            stake_max: 0.2,
            topics: 4,
            advertisers: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub threshold: f64,
    pub k_max: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            k_max: 4,
            restarts: 2,
            max_iters: 150,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub rounds: u32,
    /// Re-detect σ every this many rounds; 0 disables detection.
    pub refresh_interval: u32,
    /// Attitude relaxation toward community belief.
    pub gamma: f64,
    pub temperature: f64,
    /// Multiplies the exposure share before it is clipped to an engagement
    /// probability.
    pub engagement_scale: f64,
    /// Rounds a post stays in candidate pools; 0 keeps it forever.
    pub content_lifetime: u32,
    pub devotion_adaptation: bool,
    pub devotion_rate: f64,
    pub metric_top: usize,
    pub coherence_top: usize,
    pub detect: DetectConfig,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            rounds: 30,
            refresh_interval: 5,
            gamma: 0.1,
            temperature: 1.0,
            engagement_scale: 1.0,
            content_lifetime: 10,
            devotion_adaptation: false,
            devotion_rate: 0.1,
            metric_top: 10,
            coherence_top: 5,
            detect: DetectConfig::default(),
        }
    }
}

/// Variant settings for paired bridging-vs-baseline comparisons.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Scoring mode of the baseline arm; the other arm uses `scoring.mode`.
    pub baseline_mode: BaselineMode,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    #[default]
    Engagement,
    Bridging,
}

impl From<BaselineMode> for ScoringMode {
    fn from(m: BaselineMode) -> Self {
        match m {
            BaselineMode::Engagement => ScoringMode::Engagement,
            BaselineMode::Bridging => ScoringMode::Bridging,
        }
    }
}

/// Full declarative description of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub communities: Vec<CommunityTemplate>,
    #[serde(default)]
    pub content: ContentConfig,
    #[serde(default)]
    pub scoring: ScoreParams,
    #[serde(default)]
    pub ranking: FeedParams,
    #[serde(default)]
    pub econ: EconParams,
    #[serde(default)]
    pub sim: SimParams,
    #[serde(default)]
    pub compare: CompareConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            population: PopulationConfig::default(),
            communities: Vec::new(),
            content: ContentConfig::default(),
            scoring: ScoreParams::default(),
            ranking: FeedParams::default(),
            econ: EconParams::default(),
            sim: SimParams::default(),
            compare: CompareConfig::default(),
        }
    }
}

struct Checker {
    errors: Vec<ConfigError>,
}

impl Checker {
    fn check(&mut self, ok: bool, path: impl Into<String>, message: impl Into<String>) {
        if !ok && self.errors.is_empty() {
            self.errors.push(ConfigError {
                path: path.into(),
                message: message.into(),
            });
        }
    }

    fn unit(&mut self, v: f64, path: impl Into<String>) {
        self.check((0.0..=1.0).contains(&v), path, format!("must lie in [0, 1], got {v}"));
    }

    fn non_negative(&mut self, v: f64, path: impl Into<String>) {
        self.check(v.is_finite() && v >= 0.0, path, format!("must be finite and ≥ 0, got {v}"));
    }

    fn positive(&mut self, v: f64, path: impl Into<String>) {
        self.check(v.is_finite() && v > 0.0, path, format!("must be finite and > 0, got {v}"));
    }
}

impl ScenarioConfig {
    /// Checks every numeric range; the error names the offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut c = Checker { errors: Vec::new() };
        c.check(
            self.schema_version == SCHEMA_VERSION,
            "schema_version",
            format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
        );

        let pop = &self.population;
        c.check(pop.dim >= 1, "population.dim", "must be at least 1");
        c.check(
            pop.citizens == 0 || !pop.blocs.is_empty(),
            "population.blocs",
            "a non-empty population needs at least one bloc",
        );
        for (i, b) in pop.blocs.iter().enumerate() {
            let at = format!("population.blocs[{i}]");
            c.check(
                b.center.len() == pop.dim,
                format!("{at}.center"),
                format!("has {} coordinates, population.dim is {}", b.center.len(), pop.dim),
            );
            for (j, x) in b.center.iter().enumerate() {
                c.check(x.is_finite(), format!("{at}.center[{j}]"), "must be finite");
            }
            c.non_negative(b.spread, format!("{at}.spread"));
            c.positive(b.weight, format!("{at}.weight"));
        }
        c.unit(pop.subscriber_fraction, "population.subscriber_fraction");
        c.unit(pop.personal_ads_fraction, "population.personal_ads_fraction");
        c.non_negative(pop.citizen_lambda, "population.citizen_lambda");
        c.non_negative(pop.citizen_balance, "population.citizen_balance");

        for (i, t) in self.communities.iter().enumerate() {
            let at = format!("communities[{i}]");
            for (j, &b) in t.blocs.iter().enumerate() {
                c.check(
                    b < pop.blocs.len(),
                    format!("{at}.blocs[{j}]"),
                    format!("bloc {b} does not exist"),
                );
            }
            c.unit(t.join_prob, format!("{at}.join_prob"));
            c.non_negative(t.lambda, format!("{at}.lambda"));
            c.non_negative(t.balance, format!("{at}.balance"));
            if t.funding == Funding::AdFunded {
                let has_deal = self
                    .content
                    .advertisers
                    .iter()
                    .any(|a| a.deals.iter().any(|d| d.accepted && d.community.index() == i));
                c.check(has_deal, format!("{at}.funding"), "ad_funded requires an accepted advertiser deal");
            }
        }

        let ct = &self.content;
        c.non_negative(ct.position_noise, "content.position_noise");
        c.unit(ct.stake_prob, "content.stake_prob");
        c.non_negative(ct.stake_max, "content.stake_max");
        c.check(ct.topics >= 1, "content.topics", "must be at least 1");
        for (i, a) in ct.advertisers.iter().enumerate() {
            let at = format!("content.advertisers[{i}]");
            c.non_negative(a.budget, format!("{at}.budget"));
            c.non_negative(a.personal_price, format!("{at}.personal_price"));
            c.non_negative(a.stake, format!("{at}.stake"));
            c.check(
                a.items_per_round == 0 || a.position.len() == pop.dim,
                format!("{at}.position"),
                format!("has {} coordinates, population.dim is {}", a.position.len(), pop.dim),
            );
            for (j, d) in a.deals.iter().enumerate() {
                c.check(
                    d.community.index() < self.communities.len(),
                    format!("{at}.deals[{j}].community"),
                    format!("community {} does not exist", d.community),
                );
                c.non_negative(d.price_per_impression, format!("{at}.deals[{j}].price_per_impression"));
            }
            if let Some(s) = &a.standing {
                c.check(
                    s.community < self.communities.len(),
                    format!("{at}.standing.community"),
                    format!("community {} does not exist", s.community),
                );
                c.positive(s.amount, format!("{at}.standing.amount"));
                c.non_negative(s.price, format!("{at}.standing.price"));
            }
        }

        let sc = &self.scoring;
        c.non_negative(sc.alpha, "scoring.alpha");
        c.unit(sc.label_floor, "scoring.label_floor");
        c.positive(sc.half_life, "scoring.half_life");
        c.non_negative(sc.mf.reg, "scoring.mf.reg");
        c.positive(sc.mf.lr, "scoring.mf.lr");
        c.check(sc.mf.epochs >= 1, "scoring.mf.epochs", "must be at least 1");
        c.non_negative(sc.mf.init_scale, "scoring.mf.init_scale");

        let rk = &self.ranking;
        c.check(rk.k >= 1, "ranking.k", "must be at least 1");
        c.check(
            (0.0..1.0).contains(&rk.epsilon),
            "ranking.epsilon",
            format!("must lie in [0, 1), got {}", rk.epsilon),
        );
        c.non_negative(rk.stake_scale, "ranking.stake_scale");
        c.non_negative(rk.delta_tol, "ranking.delta_tol");

        let ec = &self.econ;
        c.unit(ec.platform_fee, "econ.platform_fee");
        c.unit(ec.creator_share, "econ.creator_share");
        c.check(
            ec.platform_fee + ec.creator_share <= 1.0 + 1e-12,
            "econ.creator_share",
            "platform_fee + creator_share must not exceed 1",
        );
        c.non_negative(ec.price_per_lambda_impression, "econ.price_per_lambda_impression");
        c.non_negative(ec.reward_rate, "econ.reward_rate");

        let sm = &self.sim;
        c.unit(sm.gamma, "sim.gamma");
        c.positive(sm.temperature, "sim.temperature");
        c.non_negative(sm.engagement_scale, "sim.engagement_scale");
        c.non_negative(sm.devotion_rate, "sim.devotion_rate");
        c.check(sm.metric_top >= 1, "sim.metric_top", "must be at least 1");
        c.check(sm.coherence_top >= 1, "sim.coherence_top", "must be at least 1");
        c.check(
            sm.detect.threshold > 0.0 && sm.detect.threshold < 1.0,
            "sim.detect.threshold",
            "must lie in (0, 1)",
        );
        c.check(
            (2..=7).contains(&sm.detect.k_max),
            "sim.detect.k_max",
            "must lie in 2..=7",
        );
        c.check(sm.detect.restarts >= 1, "sim.detect.restarts", "must be at least 1");
        c.check(sm.detect.max_iters >= 1, "sim.detect.max_iters", "must be at least 1");
        c.positive(sm.detect.tol, "sim.detect.tol");

        match c.errors.into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Latent state of one citizen. Vectors are indexed by content id.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub citizen: CitizenId,
    pub ideology: Vec<f64>,
    /// a(m;p)
    pub attitudes: Vec<f64>,
    /// Cumulative exposure, clamped to [0, 1].
    pub exposure: Vec<f64>,
    /// b(m;p) = a(m;p) × exposure
    pub beliefs: Vec<f64>,
}

impl AgentState {
    fn push_content(&mut self, attitude: f64) {
        self.attitudes.push(attitude);
        self.exposure.push(0.0);
        self.beliefs.push(0.0);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub fabric: SocialFabric,
    pub agents: Vec<AgentState>,
    /// Planted bloc of each citizen, by citizen index.
    pub planted: Vec<usize>,
}

/// Draws the citizens, their ideologies and memberships. Bloc sizes follow
/// the template weights (largest remainder), assignments are shuffled.
pub fn gen_population(config: &ScenarioConfig, seed: u64) -> Result<Population> {
    config.validate()?;
    let pop = &config.population;
    let mut rng = rng::stream(seed, Stream::Population, 0, 0);
    let mut fabric = SocialFabric::new();

    for t in &config.communities {
        let c = fabric.add_community();
        let comm = fabric.community_mut(c)?;
        comm.lambda = t.lambda;
        comm.admin_registered = t.admin_registered;
    }

    let mut planted = bloc_sizes(&pop.blocs, pop.citizens)
        .into_iter()
        .enumerate()
        .flat_map(|(b, n)| std::iter::repeat_n(b, n))
        .collect::<Vec<_>>();
    planted.shuffle(&mut rng);

    let mut agents = Vec::with_capacity(pop.citizens);
    for &b in &planted {
        let p = fabric.add_citizen();
        let tpl = &pop.blocs[b];
        let ideology: Vec<f64> = tpl
            .center
            .iter()
            .map(|&mu| {
                if tpl.spread > 0.0 {
                    Normal::new(mu, tpl.spread).expect("validated spread").sample(&mut rng)
                } else {
                    mu
                }
            })
            .collect();
        let mut joined = Vec::new();
        let eligible: Vec<usize> = config
            .communities
            .iter()
            .enumerate()
            .filter(|(_, t)| t.blocs.contains(&b))
            .map(|(i, _)| i)
            .collect();
        for &i in &eligible {
            if rng.random::<f64>() < config.communities[i].join_prob {
                joined.push(i);
            }
        }
        if joined.is_empty() {
            if let Some(&i) = eligible.choose(&mut rng) {
                joined.push(i);
            }
        }
        for i in joined {
            fabric.add_membership(p, CommunityId::from_index(i), 1.0, 1.0)?;
        }
        let subscriber = rng.random::<f64>() < pop.subscriber_fraction;
        let ads = rng.random::<f64>() < pop.personal_ads_fraction;
        let citizen = fabric.citizen_mut(p)?;
        citizen.subscriber = subscriber;
        citizen.lambda = if subscriber { pop.citizen_lambda } else { 0.0 };
        citizen.accepts_personal_ads = ads;
        agents.push(AgentState {
            citizen: p,
            ideology,
            attitudes: Vec::new(),
            exposure: Vec::new(),
            beliefs: Vec::new(),
        });
    }

    if pop.close_intersections {
        let n = config.communities.len();
        for a in 0..n {
            for b in a + 1..n {
                fabric.intersect_communities(CommunityId::from_index(a), CommunityId::from_index(b))?;
            }
        }
    }
    Ok(Population {
        fabric,
        agents,
        planted,
    })
}

fn bloc_sizes(blocs: &[BlocTemplate], n: usize) -> Vec<usize> {
    let total: f64 = blocs.iter().map(|b| b.weight).sum();
    if blocs.is_empty() || n == 0 {
        return vec![0; blocs.len()];
    }
    let exact: Vec<f64> = blocs.iter().map(|b| b.weight / total * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..blocs.len()).collect();
    order.sort_by(|&i, &j| (exact[j] - exact[j].floor()).total_cmp(&(exact[i] - exact[i].floor())).then(i.cmp(&j)));
    let short = n - sizes.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        sizes[i] += 1;
    }
    sizes
}

/// logistic(−‖ideology − position‖² / temperature)
pub fn attitude(ideology: &[f64], position: &[f64], temperature: f64) -> f64 {
    let d2: f64 = ideology.iter().zip(position).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 / (1.0 + (d2 / temperature).exp())
}

/// A Bernoulli(`engagement_prob`) gate, then up with probability
/// `attitude`, down otherwise.
pub fn react<R: Rng + ?Sized>(attitude: f64, engagement_prob: f64, rng: &mut R) -> Reaction {
    if rng.random::<f64>() >= engagement_prob {
        return Reaction::Neutral;
    }
    if rng.random::<f64>() < attitude {
        Reaction::Up
    } else {
        Reaction::Down
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemberBelief {
    pub citizen: CitizenId,
    pub belief: f64,
    pub standing: f64,
}

fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    if let Some(&first) = values.first() {
        if values.iter().all(|&v| v == first) {
            return first;
        }
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// √n-weighted geometric mean of bloc means.
pub fn combine_blocs(means: &[f64], sizes: &[usize]) -> f64 {
    score::gac_from_rates(means, sizes, BlocWeighting::Penrose)
}

/// Common belief of a scope. With two or more non-empty `blocs`: the
/// standing-weighted mean within each bloc, combined across blocs by
/// [`combine_blocs`]. Otherwise a standing-weighted geometric mean over
/// all members.
pub fn aggregate_belief(members: &[MemberBelief], blocs: Option<&[BTreeSet<CitizenId>]>) -> Result<f64> {
    if members.is_empty() {
        return Err(SimError::EmptyCommunity);
    }
    if let Some(blocs) = blocs {
        let mut means = Vec::new();
        let mut sizes = Vec::new();
        for bloc in blocs {
            let inside: Vec<&MemberBelief> = members.iter().filter(|m| bloc.contains(&m.citizen)).collect();
            if inside.is_empty() {
                continue;
            }
            let values: Vec<f64> = inside.iter().map(|m| m.belief).collect();
            let weights: Vec<f64> = inside.iter().map(|m| m.standing).collect();
            means.push(weighted_mean(&values, &weights));
            sizes.push(inside.len());
        }
        if means.len() >= 2 {
            return Ok(combine_blocs(&means, &sizes));
        }
    }
    let values: Vec<f64> = members.iter().map(|m| m.belief).collect();
    let total: f64 = members.iter().map(|m| m.standing).sum();
    let weights: Vec<f64> = if total > 0.0 {
        members.iter().map(|m| m.standing / total).collect()
    } else {
        vec![1.0 / members.len() as f64; members.len()]
    };
    Ok(weighted_geometric_mean(&values, &weights))
}

/// Gini coefficient of non-negative values; 0 for an all-zero input.
pub fn gini(values: &[f64]) -> f64 {
    let n = values.len();
    let total: f64 = values.iter().sum();
    if n == 0 || !(total > 0.0) {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let ranked: f64 = sorted.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x).sum();
    (2.0 * ranked / (n as f64 * total) - (n + 1) as f64 / n as f64).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: u32,
    /// Mean over communities of the cross-bloc common belief of each
    /// community's most exposed contents.
    pub mean_common_belief_top_bridging: f64,
    pub polarization_index: f64,
    pub attention_gini: f64,
    pub platform_revenue: f64,
    pub coherence: BTreeMap<CommunityId, f64>,
}

/// One row per round; coherence columns follow in community order.
pub fn write_metrics_csv<W: io::Write>(metrics: &[RoundMetrics], communities: usize, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = [
        "round",
        "mean_common_belief_top_bridging",
        "polarization_index",
        "attention_gini",
        "platform_revenue",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..communities).map(|c| format!("coherence_{c}")));
    wtr.write_record(&header).map_err(csv_io)?;
    for m in metrics {
        let mut row = vec![
            m.round.to_string(),
            m.mean_common_belief_top_bridging.to_string(),
            m.polarization_index.to_string(),
            m.attention_gini.to_string(),
            m.platform_revenue.to_string(),
        ];
        row.extend((0..communities).map(|c| {
            m.coherence
                .get(&CommunityId::from_index(c))
                .map_or_else(String::new, |v| v.to_string())
        }));
        wtr.write_record(&row).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> SimError {
    SimError::Io(io::Error::other(e.to_string()))
}

#[derive(Serialize)]
struct FeedRecord<'a> {
    round: u32,
    citizen: CitizenId,
    rank_position: usize,
    content: ContentId,
    exposure_share: f64,
    exploration: bool,
    provenance: &'a [rank::ProvenanceTag],
}

/// One JSON object per (round, citizen, rank position).
pub fn write_feeds_jsonl<W: io::Write>(round: u32, feeds: &[(CitizenId, Vec<FeedEntry>)], mut writer: W) -> Result<()> {
    for (citizen, feed) in feeds {
        for e in feed {
            let rec = FeedRecord {
                round,
                citizen: *citizen,
                rank_position: e.rank_position,
                content: e.content,
                exposure_share: e.exposure_share,
                exploration: e.exploration,
                provenance: &e.provenance,
            };
            serde_json::to_writer(&mut writer, &rec).map_err(io::Error::other)?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub struct RoundReport {
    pub metrics: RoundMetrics,
    pub feeds: Vec<(CitizenId, Vec<FeedEntry>)>,
    pub settlement: SettlementReport,
}

/// A run in progress. [`Simulation::step`] advances one round.
pub struct Simulation {
    pub config: ScenarioConfig,
    pub fabric: SocialFabric,
    pub agents: Vec<AgentState>,
    pub planted: Vec<usize>,
    pub contents: BTreeMap<ContentId, ContentItem>,
    pub reactions: ReactionMatrix,
    pub ledger: Ledger,
    pub policies: LambdaPolicies,
    pub advertisers: Vec<Advertiser>,
    pub allowances: StandingAllowances,
    pub overrides: SeedOverrides,
    pub book: ScoreBook,
    pub metrics: Vec<RoundMetrics>,
    /// Cumulative exposure per community and content.
    community_exposure: Vec<Vec<f64>>,
    /// Planted blocs restricted to each community's members.
    planted_blocs: Vec<Vec<BTreeSet<CitizenId>>>,
    round: u32,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let Population {
            mut fabric,
            agents,
            planted,
        } = gen_population(&config, config.seed)?;

        let advertisers: Vec<Advertiser> = config
            .content
            .advertisers
            .iter()
            .enumerate()
            .map(|(i, a)| Advertiser {
                id: AdvertiserId::from_index(i),
                budget: a.budget,
                deals: a.deals.clone(),
                citizen_targeting: a.citizen_targeting,
                personal_price: a.personal_price,
            })
            .collect();

        let mut ledger = Ledger::new();
        let mut policies = LambdaPolicies::new(config.econ.price_per_lambda_impression);
        for (i, t) in config.communities.iter().enumerate() {
            let c = CommunityId::from_index(i);
            ledger.endow(Owner::Community(c), t.balance)?;
            policies.set_lambda(Owner::Community(c), t.lambda, t.funding, &advertisers, &fabric)?;
        }
        for citizen in fabric.citizens() {
            if citizen.subscriber {
                ledger.endow(Owner::Citizen(citizen.id), config.population.citizen_balance)?;
                policies.set_lambda(
                    Owner::Citizen(citizen.id),
                    citizen.lambda,
                    Funding::SelfPaid,
                    &advertisers,
                    &fabric,
                )?;
            }
        }
        let mut allowances = StandingAllowances::default();
        for (a, cfg) in advertisers.iter().zip(&config.content.advertisers) {
            ledger.endow(Owner::Advertiser(a.id), a.budget)?;
            if let Some(s) = &cfg.standing {
                econ::sell_standing(
                    a.id,
                    CommunityId::from_index(s.community),
                    s.amount,
                    s.price,
                    0,
                    &mut ledger,
                    &fabric,
                    &mut allowances,
                )?;
            }
        }
        policies.begin_round(&mut fabric)?;

        let planted_blocs = fabric
            .communities()
            .iter()
            .map(|c| {
                let mut blocs = vec![BTreeSet::new(); config.population.blocs.len()];
                for &p in c.members() {
                    blocs[planted[p.index()]].insert(p);
                }
                blocs.retain(|b| !b.is_empty());
                blocs
            })
            .collect();
        let n_comm = fabric.communities().len();

        Ok(Self {
            config,
            fabric,
            agents,
            planted,
            contents: BTreeMap::new(),
            reactions: ReactionMatrix::new(),
            ledger,
            policies,
            advertisers,
            allowances,
            overrides: SeedOverrides::new(),
            book: ScoreBook::new(),
            metrics: Vec::new(),
            community_exposure: vec![Vec::new(); n_comm],
            planted_blocs,
            round: 0,
        })
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn is_done(&self) -> bool {
        self.round >= self.config.sim.rounds
    }

    fn is_live(&self, item: &ContentItem, round: u32) -> bool {
        let life = self.config.sim.content_lifetime;
        life == 0 || round < item.created_round + life
    }

    /// Advances one round through create, detect, score, rank, react,
    /// believe, settle, reward and measure.
    pub fn step(&mut self) -> Result<RoundReport> {
        let round = self.round;
        self.policies.begin_round(&mut self.fabric)?;
        self.create_content(round)?;
        if self.config.sim.refresh_interval > 0 && round > 0 && round.is_multiple_of(self.config.sim.refresh_interval) {
            self.detect(round)?;
        }
        self.score(round)?;
        let (feeds, tables) = self.rank(round)?;
        self.react(round, &feeds);
        self.update_beliefs(&feeds)?;
        let settled: Vec<SettledFeed<'_>> = tables
            .iter()
            .zip(&feeds)
            .map(|(table, (_, feed))| SettledFeed { table, feed })
            .collect();
        let settlement = econ::settle_round(
            round,
            &settled,
            &self.contents,
            &self.fabric,
            &mut self.policies,
            &self.advertisers,
            &self.config.econ,
            &mut self.ledger,
        )?;
        let live: Vec<&ContentItem> = self.contents.values().filter(|m| self.is_live(m, round)).collect();
        econ::reward_standing(live, &self.book, &mut self.fabric, self.config.econ.reward_rate)?;
        let coherence = self.coherence()?;
        if self.config.sim.devotion_adaptation {
            self.adapt_devotion(&coherence)?;
        }
        let metrics = self.measure(round, &feeds, coherence)?;
        self.metrics.push(metrics.clone());
        self.round += 1;
        Ok(RoundReport {
            metrics,
            feeds,
            settlement,
        })
    }

    /// Steps until the configured round count, handing each report to `f`.
    pub fn run_with(&mut self, mut f: impl FnMut(&Self, &RoundReport) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let report = self.step()?;
            f(self, &report)?;
        }
        Ok(())
    }

    fn create_content(&mut self, round: u32) -> Result<()> {
        let cfg = self.config.content.clone();
        let mut rng = rng::stream(self.config.seed, Stream::Content, u64::from(round), 0);
        let centroid = self.centroid();
        let eligible: Vec<CitizenId> = self
            .fabric
            .citizens()
            .iter()
            .filter(|c| c.communities().next().is_some())
            .map(|c| c.id)
            .collect();
        let mut creators: Vec<CitizenId> = eligible
            .choose_multiple(&mut rng, cfg.creators_per_round.min(eligible.len()))
            .copied()
            .collect();
        creators.sort();

        let mut fresh: Vec<(ContentItem, f64)> = Vec::new();
        for p in creators {
            let ideology = &self.agents[p.index()].ideology;
            let w: f64 = rng.random();
            let position: Vec<f64> = ideology
                .iter()
                .zip(&centroid)
                .map(|(&x, &c)| (1.0 - w) * x + w * c + noise(&mut rng, cfg.position_noise))
                .collect();
            let stake = if rng.random::<f64>() < cfg.stake_prob {
                rng.random::<f64>() * cfg.stake_max
            } else {
                0.0
            };
            let item = ContentItem {
                id: ContentId::from_index(self.contents.len() + fresh.len()),
                creator: Creator::Citizen(p),
                topics: [TopicId(rng.random_range(0..cfg.topics))].into(),
                created_round: round,
                target_communities: self.fabric.citizen(p)?.communities().collect(),
                latent_position: Some(position),
            };
            fresh.push((item, stake));
        }
        for (i, a) in cfg.advertisers.iter().enumerate() {
            let adv = &self.advertisers[i];
            let targets: BTreeSet<CommunityId> =
                adv.deals.iter().filter(|d| d.accepted).map(|d| d.community).collect();
            if targets.is_empty() && !adv.citizen_targeting {
                continue;
            }
            for _ in 0..a.items_per_round {
                let position: Vec<f64> = a.position.iter().map(|&x| x + noise(&mut rng, cfg.position_noise)).collect();
                let item = ContentItem {
                    id: ContentId::from_index(self.contents.len() + fresh.len()),
                    creator: Creator::Advertiser(adv.id),
                    topics: [TopicId(rng.random_range(0..cfg.topics))].into(),
                    created_round: round,
                    target_communities: targets.clone(),
                    latent_position: Some(position),
                };
                fresh.push((item, a.stake));
            }
        }

        let temperature = self.config.sim.temperature;
        for (item, stake) in fresh {
            for &c in &item.target_communities {
                match rank::seed_content(
                    &item,
                    c,
                    stake,
                    &mut self.fabric,
                    &mut self.allowances,
                    &mut self.overrides,
                    &self.config.ranking,
                    round,
                ) {
                    Ok(_) | Err(RankError::InsufficientStanding { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            let position = item.latent_position.clone().expect("generated with a position");
            self.agents
                .par_iter_mut()
                .for_each(|a| a.push_content(attitude(&a.ideology, &position, temperature)));
            for e in &mut self.community_exposure {
                e.push(0.0);
            }
            self.contents.insert(item.id, item);
        }
        Ok(())
    }

    fn centroid(&self) -> Vec<f64> {
        let blocs = &self.config.population.blocs;
        let total: f64 = blocs.iter().map(|b| b.weight).sum();
        (0..self.config.population.dim)
            .map(|d| {
                if total > 0.0 {
                    blocs.iter().map(|b| b.weight * b.center[d]).sum::<f64>() / total
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn detect(&mut self, round: u32) -> Result<()> {
        let citizens: Vec<CitizenId> = self.fabric.citizens().iter().map(|c| c.id).collect();
        let matrix = AttitudeMatrix::from_reactions(&self.reactions, &citizens);
        let d = &self.config.sim.detect;
        for c in 0..self.fabric.communities().len() {
            let community = CommunityId::from_index(c);
            let params = DetectParams {
                min_size: 1,
                threshold: d.threshold,
                k_range: 2..=d.k_max,
                seed: rng::derive_seed(self.config.seed, &[Stream::Detect as u64, u64::from(round), c as u64]),
                fuzzifier: 2.0,
                max_iters: d.max_iters,
                tol: d.tol,
                restarts: d.restarts,
            };
            match detect::principal_subcommunities(&mut self.fabric, community, &matrix, &params) {
                Ok(_) | Err(DetectError::TooSmall(_)) | Err(DetectError::DegenerateInput(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    fn score(&mut self, round: u32) -> Result<()> {
        let params = &self.config.scoring;
        let live: Vec<ContentId> = self
            .contents
            .values()
            .filter(|m| self.is_live(m, round))
            .map(|m| m.id)
            .collect();
        let n_comm = self.fabric.communities().len();

        let mf_betas: Vec<BTreeMap<ContentId, f64>> = if params.backend == BridgingBackend::Mf
            && params.mode == ScoringMode::Bridging
        {
            (0..n_comm)
                .into_par_iter()
                .map(|c| {
                    let raters: BTreeSet<CitizenId> =
                        self.fabric.communities()[c].members().iter().copied().collect();
                    let mf = score::MfParams {
                        seed: rng::derive_seed(self.config.seed, &[Stream::Score as u64, u64::from(round), c as u64]),
                        ..params.mf.clone()
                    };
                    score::bridging_mf(&self.reactions, &raters, &mf).map_or_else(|_| BTreeMap::new(), |f| f.beta_raw)
                })
                .collect()
        } else {
            vec![BTreeMap::new(); n_comm]
        };

        let pairs: Vec<(usize, ContentId)> =
            (0..n_comm).flat_map(|c| live.iter().map(move |&m| (c, m))).collect();
        let scored: Vec<(score::ScoreCard, BlocTally)> = pairs
            .par_iter()
            .map(|&(c, m)| {
                let community = CommunityId::from_index(c);
                let card = score::score_in_community(
                    m,
                    community,
                    &self.fabric,
                    &self.reactions,
                    params,
                    round,
                    mf_betas[c].get(&m).copied(),
                )?;
                let whole = score::tally(&self.reactions, m, self.fabric.communities()[c].members());
                Ok((card, whole))
            })
            .collect::<Result<_, ScoreError>>()?;
        let mut book = ScoreBook::new();
        let mut member_tally: BTreeMap<(CommunityId, ContentId), BlocTally> = BTreeMap::new();
        for (card, whole) in scored {
            let Scope::Community(c) = card.scope else { unreachable!() };
            member_tally.insert((c, card.content), whole);
            book.insert(card);
        }

        let sponsors: Vec<CitizenId> = self
            .fabric
            .citizens()
            .iter()
            .filter(|c| c.lambda > 0.0)
            .map(|c| c.id)
            .collect();
        let (fabric, contents, reactions) = (&self.fabric, &self.contents, &self.reactions);
        let member_tally = &member_tally;
        let live = &live;
        let citizen_cards: Vec<score::ScoreCard> = sponsors
            .par_iter()
            .flat_map_iter(|&p| {
                let citizen = &fabric.citizens()[p.index()];
                let comms: Vec<CommunityId> = citizen.communities().collect();
                live.iter()
                    .filter(move |m| {
                        let item = &contents[m];
                        comms.iter().any(|c| item.target_communities.contains(c))
                    })
                    .map(move |&m| {
                        let tallies: Vec<BlocTally> = citizen.communities().map(|c| member_tally[&(c, m)]).collect();
                        score::citizen_card_from_tallies(m, p, reactions, &tallies, params, round)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        for card in citizen_cards {
            book.insert(card);
        }
        self.overrides.apply(&mut book, round);
        self.book = book;
        Ok(())
    }

    fn pool(&self, citizen: CitizenId, live: &[&ContentItem]) -> Vec<ContentId> {
        let p = &self.fabric.citizens()[citizen.index()];
        live.iter()
            .filter(|m| {
                let targeted = p.communities().any(|c| m.target_communities.contains(&c));
                let personal = match m.creator {
                    Creator::Advertiser(a) => p.accepts_personal_ads && self.advertisers[a.index()].citizen_targeting,
                    Creator::Citizen(_) => false,
                };
                (targeted || personal) && !self.reactions.has_reacted(citizen, m.id)
            })
            .map(|m| m.id)
            .collect()
    }

    #[allow(clippy::type_complexity)]
    fn rank(&self, round: u32) -> Result<(Vec<(CitizenId, Vec<FeedEntry>)>, Vec<rank::ExposureTable>)> {
        let live: Vec<&ContentItem> = self.contents.values().filter(|m| self.is_live(m, round)).collect();
        let params = &self.config.ranking;
        let out: Vec<((CitizenId, Vec<FeedEntry>), rank::ExposureTable)> = self
            .fabric
            .citizens()
            .par_iter()
            .map(|citizen| {
                let pool = self.pool(citizen.id, &live);
                let table = rank::exposure_table(citizen.id, &self.fabric, &self.book, &pool)?;
                let seed = rng::derive_seed(
                    self.config.seed,
                    &[Stream::Feed as u64, u64::from(round), u64::from(citizen.id.0)],
                );
                let mut feed = rank::build_feed(&table.weights, params.k, params.epsilon, params.exploration_slots, seed);
                rank::attach_provenance(&mut feed, citizen, &self.book, &self.contents, params);
                Ok(((citizen.id, feed), table))
            })
            .collect::<Result<_, RankError>>()?;
        Ok(out.into_iter().unzip())
    }

    fn react(&mut self, round: u32, feeds: &[(CitizenId, Vec<FeedEntry>)]) {
        let scale = self.config.sim.engagement_scale;
        let seed = self.config.seed;
        let agents = &self.agents;
        let drawn: Vec<Vec<(ContentId, Reaction)>> = feeds
            .par_iter()
            .map(|(p, feed)| {
                let mut rng = rng::stream(seed, Stream::React, u64::from(round), u64::from(p.0));
                let agent = &agents[p.index()];
                feed.iter()
                    .map(|e| {
                        let prob = (e.exposure_share * scale).clamp(0.0, 1.0);
                        (e.content, react(agent.attitudes[e.content.index()], prob, &mut rng))
                    })
                    .collect()
            })
            .collect();
        for ((p, _), reactions) in feeds.iter().zip(drawn) {
            for (m, r) in reactions {
                self.reactions.record_exposure(*p, m, round, r);
            }
        }
    }

    fn member_beliefs(&self, community: CommunityId, content: ContentId) -> Result<Vec<MemberBelief>> {
        let comm = self.fabric.community(community)?;
        comm.members()
            .iter()
            .map(|&p| {
                Ok(MemberBelief {
                    citizen: p,
                    belief: self.agents[p.index()].beliefs[content.index()],
                    standing: self.fabric.standing(p, community)?,
                })
            })
            .collect()
    }

    /// b(m;c) under the community's detected σ.
    pub fn community_belief(&self, community: CommunityId, content: ContentId) -> Result<f64> {
        let members = self.member_beliefs(community, content)?;
        let sigma = self.fabric.community(community)?.principal_subcommunities();
        aggregate_belief(&members, (sigma.len() >= 2).then_some(sigma))
    }

    fn update_beliefs(&mut self, feeds: &[(CitizenId, Vec<FeedEntry>)]) -> Result<()> {
        for (p, feed) in feeds {
            let agent = &mut self.agents[p.index()];
            for e in feed {
                let i = e.content.index();
                agent.exposure[i] = (agent.exposure[i] + e.exposure_share).min(1.0);
                agent.beliefs[i] = agent.attitudes[i] * agent.exposure[i];
            }
            for c in self.fabric.citizens()[p.index()].communities() {
                for e in feed {
                    self.community_exposure[c.index()][e.content.index()] += e.exposure_share;
                }
            }
        }

        let gamma = self.config.sim.gamma;
        if gamma > 0.0 {
            let round = self.round;
            let live: Vec<ContentId> = self
                .contents
                .values()
                .filter(|m| self.is_live(m, round))
                .map(|m| m.id)
                .collect();
            let n_comm = self.fabric.communities().len();
            let pairs: Vec<(usize, ContentId)> =
                (0..n_comm).flat_map(|c| live.iter().map(move |&m| (c, m))).collect();
            let beliefs: Vec<Option<f64>> = pairs
                .par_iter()
                .map(|&(c, m)| {
                    let c = CommunityId::from_index(c);
                    if self.fabric.community(c)?.members().is_empty() {
                        return Ok(None);
                    }
                    self.community_belief(c, m).map(Some)
                })
                .collect::<Result<_>>()?;
            let table: BTreeMap<(CommunityId, ContentId), f64> = pairs
                .iter()
                .zip(beliefs)
                .filter_map(|(&(c, m), b)| b.map(|b| ((CommunityId::from_index(c), m), b)))
                .collect();
            let fabric = &self.fabric;
            let contents = &self.contents;
            self.agents.par_iter_mut().for_each(|agent| {
                let citizen = &fabric.citizens()[agent.citizen.index()];
                let comms: Vec<(CommunityId, f64)> = citizen
                    .communities()
                    .map(|c| (c, citizen.devotion(c).expect("member")))
                    .collect();
                if comms.is_empty() {
                    return;
                }
                for &m in &live {
                    if !comms.iter().any(|(c, _)| contents[&m].target_communities.contains(c)) {
                        continue;
                    }
                    let target: f64 = comms.iter().map(|&(c, d)| d * table[&(c, m)]).sum();
                    let i = m.index();
                    agent.attitudes[i] = (1.0 - gamma) * agent.attitudes[i] + gamma * target;
                    agent.beliefs[i] = agent.attitudes[i] * agent.exposure[i];
                }
            });
        }
        Ok(())
    }

    fn top_by<F: Fn(ContentId) -> f64>(&self, live: &[ContentId], n: usize, key: F) -> Vec<ContentId> {
        let mut ranked: Vec<(ContentId, f64)> = live.iter().map(|&m| (m, key(m))).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.into_iter().take(n).map(|(m, _)| m).collect()
    }

    fn live_ids(&self) -> Vec<ContentId> {
        let round = self.round;
        self.contents
            .values()
            .filter(|m| self.is_live(m, round))
            .map(|m| m.id)
            .collect()
    }

    /// Mean b(·;c) over each community's top-ψ contents.
    fn coherence(&self) -> Result<BTreeMap<CommunityId, f64>> {
        let live = self.live_ids();
        let n = self.config.sim.coherence_top;
        let mut out = BTreeMap::new();
        for comm in self.fabric.communities() {
            if comm.members().is_empty() || live.is_empty() {
                out.insert(comm.id, 0.0);
                continue;
            }
            let top = self.top_by(&live, n, |m| {
                self.book.card(Scope::Community(comm.id), m).map_or(0.0, |c| c.psi)
            });
            let mut total = 0.0;
            for &m in &top {
                total += self.community_belief(comm.id, m)?;
            }
            out.insert(comm.id, total / top.len() as f64);
        }
        Ok(out)
    }

    fn adapt_devotion(&mut self, coherence: &BTreeMap<CommunityId, f64>) -> Result<()> {
        let rate = self.config.sim.devotion_rate;
        for p in 0..self.fabric.citizens().len() {
            let p = CitizenId::from_index(p);
            let comms: Vec<CommunityId> = self.fabric.citizen(p)?.communities().collect();
            for c in comms {
                let raw = self.fabric.membership(p, c)?.raw_devotion;
                let boost = 1.0 + rate * coherence.get(&c).copied().unwrap_or(0.0);
                self.fabric.update_devotion(p, c, raw * boost)?;
            }
        }
        Ok(())
    }

    fn measure(
        &self,
        round: u32,
        feeds: &[(CitizenId, Vec<FeedEntry>)],
        coherence: BTreeMap<CommunityId, f64>,
    ) -> Result<RoundMetrics> {
        let live = self.live_ids();
        let n = self.config.sim.metric_top;

        let mut shares: BTreeMap<ContentId, f64> = live.iter().map(|&m| (m, 0.0)).collect();
        for (_, feed) in feeds {
            for e in feed {
                if let Some(s) = shares.get_mut(&e.content) {
                    *s += e.exposure_share;
                }
            }
        }
        let attention_gini = gini(&shares.values().copied().collect::<Vec<_>>());

        let mut polarization = Vec::new();
        let mut common = Vec::new();
        for (c, blocs) in self.planted_blocs.iter().enumerate() {
            let comm = &self.fabric.communities()[c];
            if comm.derived_from().is_some() || blocs.len() < 2 || live.is_empty() {
                continue;
            }
            let exposure = &self.community_exposure[c];
            let top = self.top_by(&live, n, |m| exposure[m.index()]);
            let mut spread = 0.0;
            let mut belief = 0.0;
            for &m in &top {
                let approvals: Vec<f64> = blocs
                    .iter()
                    .map(|b| b.iter().map(|p| self.agents[p.index()].attitudes[m.index()]).sum::<f64>() / b.len() as f64)
                    .collect();
                let hi = approvals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = approvals.iter().copied().fold(f64::INFINITY, f64::min);
                spread += hi - lo;
                let members = self.member_beliefs(comm.id, m)?;
                belief += aggregate_belief(&members, Some(blocs))?;
            }
            polarization.push(spread / top.len() as f64);
            common.push(belief / top.len() as f64);
        }
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };

        Ok(RoundMetrics {
            round,
            mean_common_belief_top_bridging: mean(&common),
            polarization_index: mean(&polarization),
            attention_gini,
            platform_revenue: self.ledger.credits_to(Owner::Platform, round),
            coherence,
        })
    }
}

fn noise<R: Rng + ?Sized>(rng: &mut R, sd: f64) -> f64 {
    if sd > 0.0 {
        Normal::new(0.0, sd).expect("validated noise").sample(rng)
    } else {
        0.0
    }
}

/// Runs a scenario to completion.
pub fn run(config: ScenarioConfig) -> Result<Simulation> {
    let mut sim = Simulation::new(config)?;
    sim.run_with(|_, _| Ok(()))?;
    Ok(sim)
}

/// The stock scenario: 200 citizens in two blocs, two overlapping
/// communities recruiting from both, 30 rounds.
pub fn demo_scenario() -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        seed: 1,
        population: PopulationConfig {
            citizens: 200,
            dim: 1,
            blocs: vec![
                BlocTemplate {
                    center: vec![-0.5],
                    spread: 0.1,
                    weight: 1.0,
                },
                BlocTemplate {
                    center: vec![0.5],
                    spread: 0.1,
                    weight: 1.0,
                },
            ],
            subscriber_fraction: 0.2,
            citizen_lambda: 0.5,
            citizen_balance: 20.0,
            personal_ads_fraction: 0.0,
            close_intersections: false,
        },
        communities: vec![
            CommunityTemplate {
                blocs: vec![0, 1],
                join_prob: 0.6,
                lambda: 1.0,
                balance: 1000.0,
                admin_registered: true,
                funding: Funding::SelfPaid,
            },
            CommunityTemplate {
                blocs: vec![0, 1],
                join_prob: 0.6,
                lambda: 1.0,
                balance: 1000.0,
                admin_registered: true,
                funding: Funding::SelfPaid,
            },
        ],
        content: ContentConfig {
            stake_max: 0.02,
            ..ContentConfig::default()
        },
        scoring: ScoreParams::default(),
        ranking: FeedParams::default(),
        econ: EconParams::default(),
        sim: SimParams {
            engagement_scale: 10.0,
            ..SimParams::default()
        },
        compare: CompareConfig::default(),
    }
}
