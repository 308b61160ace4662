//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's numeric code paths.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use plural::econ::{Deal, Funding, Owner};
use plural::fabric::SocialFabric;
use plural::score::{Label, Reaction, ReactionMatrix, ScoreBook, ScoreCard, Scope};
use plural::sim::{self, AdvertiserConfig, ScenarioConfig, Simulation, StandingPurchase};
use plural::{CitizenId, CommunityId, ContentId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    if union == 0.0 {
        1.0
    } else {
        inter / union
    }
}

/// Best Jaccard match in `found` for every planted set.
pub fn best_matches<T: Ord>(planted: &[BTreeSet<T>], found: &[BTreeSet<T>]) -> Vec<f64> {
    planted
        .iter()
        .map(|p| found.iter().map(|f| jaccard(p, f)).fold(0.0, f64::max))
        .collect()
}

pub fn card(scope: Scope, content: ContentId, psi: f64) -> ScoreCard {
    ScoreCard {
        content,
        scope,
        iota: 1.0,
        beta: psi,
        delta: 0.0,
        psi,
        characteristic_blocs: Vec::new(),
        label: Label::Neither,
        low_confidence: false,
    }
}

/// A random small exposure instance, kept alongside the raw numbers it was
/// built from so the oracle never has to read the fabric back.
pub struct ExposureInstance {
    pub fabric: SocialFabric,
    pub book: ScoreBook,
    pub pool: Vec<ContentId>,
    pub citizen_lambda: Vec<f64>,
    pub community_lambda: Vec<f64>,
    /// raw devotion per (citizen, community)
    pub raw_devotion: BTreeMap<(u32, u32), f64>,
    pub psi_citizen: BTreeMap<(u32, u32), f64>,
    pub psi_community: BTreeMap<(u32, u32), f64>,
}

pub fn exposure_instance(seed: u64) -> ExposureInstance {
    let mut r = rng(seed);
    let n_cit = r.random_range(1..=10usize);
    let n_comm = r.random_range(1..=3usize);
    let n_content = r.random_range(1..=12u32);
    let mut fabric = SocialFabric::new();
    let citizens: Vec<CitizenId> = (0..n_cit).map(|_| fabric.add_citizen()).collect();
    let communities: Vec<CommunityId> = (0..n_comm).map(|_| fabric.add_community()).collect();

    let community_lambda: Vec<f64> = (0..n_comm)
        .map(|_| if r.random_bool(0.2) { 0.0 } else { r.random_range(0.0..3.0) })
        .collect();
    let citizen_lambda: Vec<f64> = (0..n_cit)
        .map(|_| if r.random_bool(0.5) { 0.0 } else { r.random_range(0.0..2.0) })
        .collect();
    for (i, &c) in communities.iter().enumerate() {
        fabric.community_mut(c).unwrap().lambda = community_lambda[i];
    }
    for (i, &p) in citizens.iter().enumerate() {
        fabric.citizen_mut(p).unwrap().lambda = citizen_lambda[i];
    }

    let mut raw_devotion = BTreeMap::new();
    for &p in &citizens {
        for &c in &communities {
            if r.random_bool(0.6) {
                let d = r.random_range(0.1..5.0);
                fabric.add_membership(p, c, r.random_range(0.1..5.0), d).unwrap();
                raw_devotion.insert((p.0, c.0), d);
            }
        }
    }

    let pool: Vec<ContentId> = (0..n_content).map(ContentId).collect();
    let mut book = ScoreBook::new();
    let mut psi_citizen = BTreeMap::new();
    let mut psi_community = BTreeMap::new();
    for &m in &pool {
        for &c in &communities {
            if r.random_bool(0.8) {
                let psi = if r.random_bool(0.1) { 0.0 } else { r.random_range(0.0..2.0) };
                book.insert(card(Scope::Community(c), m, psi));
                psi_community.insert((c.0, m.0), psi);
            }
        }
        for &p in &citizens {
            if r.random_bool(0.5) {
                let psi = r.random_range(0.0..2.0);
                book.insert(card(Scope::Citizen(p), m, psi));
                psi_citizen.insert((p.0, m.0), psi);
            }
        }
    }
    ExposureInstance {
        fabric,
        book,
        pool,
        citizen_lambda,
        community_lambda,
        raw_devotion,
        psi_citizen,
        psi_community,
    }
}

/// e(m;p) evaluated straight from the displayed equation.
pub fn exposure_oracle(inst: &ExposureInstance, p: u32) -> BTreeMap<ContentId, f64> {
    let mine: Vec<(u32, f64)> = inst
        .raw_devotion
        .iter()
        .filter(|((q, _), _)| *q == p)
        .map(|(&(_, c), &d)| (c, d))
        .collect();
    let total_devotion: f64 = mine.iter().map(|x| x.1).sum();
    let numerator = |m: u32| {
        let mut n = inst.citizen_lambda[p as usize] * inst.psi_citizen.get(&(p, m)).copied().unwrap_or(0.0);
        for &(c, d) in &mine {
            let psi = inst.psi_community.get(&(c, m)).copied().unwrap_or(0.0);
            n += (d / total_devotion) * inst.community_lambda[c as usize] * psi;
        }
        n
    };
    let nums: Vec<(ContentId, f64)> = inst.pool.iter().map(|&m| (m, numerator(m.0))).collect();
    let denominator: f64 = nums.iter().map(|x| x.1).sum();
    nums.into_iter()
        .map(|(m, n)| {
            let e = if denominator > 0.0 {
                n / denominator
            } else {
                1.0 / inst.pool.len() as f64
            };
            (m, e)
        })
        .collect()
}

/// Two rater blocs of ten and six items. Item 0 is the bridging item (nine
/// of ten in each bloc approve), items 1–2 are approved only by bloc A,
/// 3–4 only by bloc B, item 5 by three of ten in each bloc. `seed` picks
/// which raters dissent.
pub fn planted_mf_instance(seed: u64) -> ReactionMatrix {
    let mut r = rng(seed ^ 0x5eed);
    let mut reactions = ReactionMatrix::new();
    let dissent_a = r.random_range(0..10u32);
    let dissent_b = 10 + r.random_range(0..10u32);
    let mut unpopular: BTreeSet<u32> = BTreeSet::new();
    for bloc in [0u32, 10] {
        while unpopular.iter().filter(|&&u| (bloc..bloc + 10).contains(&u)).count() < 3 {
            unpopular.insert(bloc + r.random_range(0..10u32));
        }
    }
    for u in 0..20u32 {
        let in_a = u < 10;
        let votes = [
            u != dissent_a && u != dissent_b,
            in_a,
            in_a,
            !in_a,
            !in_a,
            unpopular.contains(&u),
        ];
        for (m, &up) in votes.iter().enumerate() {
            let reaction = if up { Reaction::Up } else { Reaction::Down };
            reactions.record_exposure(CitizenId(u), ContentId(m as u32), 0, reaction);
        }
    }
    reactions
}

/// Full-batch gradient descent on
/// ½ Σ (r − μ − b_u − b_i − f_u f_i)² + ½ reg Σ (b_u² + b_i² + f_u² + f_i²),
/// returning clamp(μ + b_i, 0, 1) per item.
pub fn mf_oracle(reactions: &ReactionMatrix, reg: f64) -> BTreeMap<ContentId, f64> {
    let mut users: BTreeMap<CitizenId, usize> = BTreeMap::new();
    let mut items: BTreeMap<ContentId, usize> = BTreeMap::new();
    let mut obs = Vec::new();
    for m in reactions.contents() {
        for (p, rec) in reactions.records_for(m) {
            if !rec.reaction.is_explicit() {
                continue;
            }
            let nu = users.len();
            let u = *users.entry(p).or_insert(nu);
            let ni = items.len();
            let i = *items.entry(m).or_insert(ni);
            obs.push((u, i, if rec.reaction == Reaction::Up { 1.0 } else { 0.0 }));
        }
    }
    let (nu, ni) = (users.len(), items.len());
    let mut mu = 0.5;
    let mut bu = vec![0.0; nu];
    let mut bi = vec![0.0; ni];
    let mut fu: Vec<f64> = (0..nu).map(|k| 0.1 * ((k as f64) * 1.7 + 0.3).sin()).collect();
    let mut fi: Vec<f64> = (0..ni).map(|k| 0.1 * ((k as f64) * 2.3 + 0.9).cos()).collect();
    let lr = 0.005;
    for _ in 0..60_000 {
        let mut g_mu = 0.0;
        let mut g_bu: Vec<f64> = bu.iter().map(|b| reg * b).collect();
        let mut g_bi: Vec<f64> = bi.iter().map(|b| reg * b).collect();
        let mut g_fu: Vec<f64> = fu.iter().map(|f| reg * f).collect();
        let mut g_fi: Vec<f64> = fi.iter().map(|f| reg * f).collect();
        for &(u, i, r) in &obs {
            let e = mu + bu[u] + bi[i] + fu[u] * fi[i] - r;
            g_mu += e;
            g_bu[u] += e;
            g_bi[i] += e;
            g_fu[u] += e * fi[i];
            g_fi[i] += e * fu[u];
        }
        mu -= lr * g_mu;
        for k in 0..nu {
            bu[k] -= lr * g_bu[k];
            fu[k] -= lr * g_fu[k];
        }
        for k in 0..ni {
            bi[k] -= lr * g_bi[k];
            fi[k] -= lr * g_fi[k];
        }
    }
    items
        .into_iter()
        .map(|(m, i)| (m, (mu + bi[i]).clamp(0.0, 1.0)))
        .collect()
}

/// Three well separated Gaussian clusters in four dimensions (centres
/// pairwise ≥ 0.84 apart, σ = 0.1 per axis, so separation ≥ 8σ), values
/// clipped to [−1, 1]. Returns rows and planted labels.
pub fn planted_three_blocs(seed: u64, per_bloc: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    use rand_distr::{Distribution, Normal};
    let centers: [[f64; 4]; 3] = [[0.6, 0.0, 0.0, 0.0], [-0.6, 0.0, 0.0, 0.0], [0.0, 0.6, 0.0, 0.6]];
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut r = rng(seed);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (g, c) in centers.iter().enumerate() {
        for _ in 0..per_bloc {
            rows.push(c.iter().map(|&x| (x + noise.sample(&mut r)).clamp(-1.0, 1.0)).collect());
            labels.push(g);
        }
    }
    // Interleave so input order carries no label information.
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    use rand::seq::SliceRandom;
    idx.shuffle(&mut r);
    (
        idx.iter().map(|&i| rows[i].clone()).collect(),
        idx.iter().map(|&i| labels[i]).collect(),
    )
}

/// Newman modularity of a partition of a weighted undirected graph.
pub fn modularity(n: usize, edges: &[(usize, usize, f64)], label: &[usize], resolution: f64) -> f64 {
    let mut degree = vec![0.0; n];
    let mut m2 = 0.0;
    for &(a, b, w) in edges {
        degree[a] += w;
        degree[b] += w;
        m2 += 2.0 * w;
    }
    let mut q = 0.0;
    for &(a, b, w) in edges {
        if label[a] == label[b] {
            q += 2.0 * w;
        }
    }
    for i in 0..n {
        for j in 0..n {
            if label[i] == label[j] {
                q -= resolution * degree[i] * degree[j] / m2;
            }
        }
    }
    q / m2
}

/// Highest modularity over every set partition of `n` nodes (restricted
/// growth strings), with one optimal labelling.
pub fn brute_force_modularity(n: usize, edges: &[(usize, usize, f64)], resolution: f64) -> (f64, Vec<usize>) {
    fn rec(
        i: usize,
        max_label: usize,
        label: &mut Vec<usize>,
        n: usize,
        edges: &[(usize, usize, f64)],
        res: f64,
        best: &mut (f64, Vec<usize>),
    ) {
        if i == n {
            let q = modularity(n, edges, label, res);
            if q > best.0 {
                *best = (q, label.clone());
            }
            return;
        }
        for l in 0..=max_label + 1 {
            label[i] = l;
            rec(i + 1, max_label.max(l), label, n, edges, res, best);
        }
    }
    let mut label = vec![0; n];
    let mut best = (f64::NEG_INFINITY, Vec::new());
    if n > 0 {
        rec(1, 0, &mut label, n, edges, resolution, &mut best);
    }
    best
}

/// Two 5-cliques joined by a single edge.
pub fn two_cliques() -> Vec<(usize, usize, f64)> {
    let mut edges = Vec::new();
    for base in [0, 5] {
        for a in 0..5 {
            for b in a + 1..5 {
                edges.push((base + a, base + b, 1.0));
            }
        }
    }
    edges.push((4, 5, 1.0));
    edges
}

/// Random vector and a doubly-stochastic average of it: `x` majorizes `y`.
pub fn majorization_pair<R: Rng>(r: &mut R, n: usize) -> (Vec<f64>, Vec<f64>) {
    use rand::seq::SliceRandom;
    let x: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
    let mixes = r.random_range(1..=3);
    let mut weights: Vec<f64> = (0..mixes).map(|_| r.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let mut y = vec![0.0; n];
    for w in weights {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(r);
        for (k, &j) in perm.iter().enumerate() {
            y[k] += w * x[j];
        }
    }
    (x, y)
}

#[derive(Clone, Debug)]
pub enum Op {
    AddCitizen,
    AddCommunity,
    Join { p: usize, c: usize, s: f64, d: f64 },
    Devote { p: usize, c: usize, d: f64 },
    Stand { p: usize, c: usize, delta: f64 },
    Intersect { a: usize, b: usize },
}

/// Applies one mutation, ignoring the ones the fabric rightly refuses.
pub fn apply(fabric: &mut SocialFabric, op: &Op) {
    let n_p = fabric.citizens().len();
    let n_c = fabric.communities().len();
    let pick = |i: usize, n: usize| (n > 0).then(|| i % n);
    match *op {
        Op::AddCitizen => {
            fabric.add_citizen();
        }
        Op::AddCommunity => {
            fabric.add_community();
        }
        Op::Join { p, c, s, d } => {
            if let (Some(p), Some(c)) = (pick(p, n_p), pick(c, n_c)) {
                let _ = fabric.add_membership(CitizenId(p as u32), CommunityId(c as u32), s, d);
            }
        }
        Op::Devote { p, c, d } => {
            if let (Some(p), Some(c)) = (pick(p, n_p), pick(c, n_c)) {
                let _ = fabric.update_devotion(CitizenId(p as u32), CommunityId(c as u32), d);
            }
        }
        Op::Stand { p, c, delta } => {
            if let (Some(p), Some(c)) = (pick(p, n_p), pick(c, n_c)) {
                let _ = fabric.update_standing(CitizenId(p as u32), CommunityId(c as u32), delta);
            }
        }
        Op::Intersect { a, b } => {
            if let (Some(a), Some(b)) = (pick(a, n_c), pick(b, n_c)) {
                if a != b {
                    let _ = fabric.intersect_communities(CommunityId(a as u32), CommunityId(b as u32));
                }
            }
        }
    }
}

pub fn simplex_ok(fabric: &SocialFabric) -> Result<(), String> {
    for p in fabric.citizens() {
        let comms: Vec<_> = p.communities().collect();
        if comms.is_empty() {
            continue;
        }
        let total: f64 = comms.iter().map(|&c| fabric.devotion(p.id, c).unwrap()).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("devotion of {} sums to {total}", p.id));
        }
    }
    for c in fabric.communities() {
        if c.is_empty() {
            continue;
        }
        let total: f64 = c.members().iter().map(|&p| fabric.standing(p, c.id).unwrap()).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("standing in {} sums to {total}", c.id));
        }
        for &p in c.members() {
            let s = fabric.standing(p, c.id).unwrap();
            if !(s > 0.0 && s <= 1.0) {
                return Err(format!("standing {s} out of range"));
            }
        }
    }
    Ok(())
}


pub fn random_op<R: Rng>(r: &mut R) -> Op {
    match r.random_range(0..6) {
        0 => Op::AddCitizen,
        1 => Op::AddCommunity,
        2 => Op::Join {
            p: r.random_range(0..40),
            c: r.random_range(0..12),
            s: r.random_range(0.01..10.0),
            d: r.random_range(0.01..10.0),
        },
        3 => Op::Devote {
            p: r.random_range(0..40),
            c: r.random_range(0..12),
            d: r.random_range(0.0..10.0),
        },
        4 => Op::Stand {
            p: r.random_range(0..40),
            c: r.random_range(0..12),
            delta: r.random_range(-2.0..2.0),
        },
        _ => Op::Intersect {
            a: r.random_range(0..12),
            b: r.random_range(0..12),
        },
    }
}

/// Replays the ledger from scratch and checks every round balances and no
/// account ever dips below zero.
pub fn check_ledger(sim: &Simulation) -> Result<(), String> {
    let entries = sim.ledger.entries();
    let mut net: BTreeMap<Owner, f64> = BTreeMap::new();
    for e in entries {
        *net.entry(e.from).or_default() -= e.amount;
        *net.entry(e.to).or_default() += e.amount;
    }
    let mut running: BTreeMap<Owner, f64> = sim
        .ledger
        .balances()
        .iter()
        .map(|(&o, &b)| (o, b - net.get(&o).copied().unwrap_or(0.0)))
        .collect();
    for (&o, &b) in &running {
        if b < -1e-9 {
            return Err(format!("{o} opened negative: {b}"));
        }
    }
    let mut per_round: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for e in entries {
        if !(e.amount > 0.0) {
            return Err(format!("non-positive entry in round {}", e.round));
        }
        let from = running.entry(e.from).or_default();
        *from -= e.amount;
        if *from < -1e-9 {
            return Err(format!("{} negative in round {}", e.from, e.round));
        }
        *running.entry(e.to).or_default() += e.amount;
        let t = per_round.entry(e.round).or_default();
        t.0 += e.amount;
        t.1 += e.amount;
    }
    for (round, (debits, credits)) in per_round {
        if (debits - credits).abs() > 1e-9 {
            return Err(format!("round {round}: debits {debits} credits {credits}"));
        }
    }
    for (o, b) in sim.ledger.balances() {
        if *b < -1e-9 {
            return Err(format!("{o} closed at {b}"));
        }
    }
    sim.ledger.audit().map(|_| ()).map_err(|e| e.to_string())
}

pub fn short_demo(seed: u64, rounds: u32) -> ScenarioConfig {
    let mut c = sim::demo_scenario();
    c.seed = seed;
    c.sim.rounds = rounds;
    c
}

/// Two communities with tiny treasuries: both run dry within a few rounds.
pub fn exhaustion_scenario() -> ScenarioConfig {
    let mut c = short_demo(5, 8);
    for t in &mut c.communities {
        t.balance = 3.0;
    }
    c
}

/// One ad-funded community selling seeding standing to an advertiser.
pub fn advertiser_scenario() -> ScenarioConfig {
    let mut c = short_demo(9, 10);
    c.population.personal_ads_fraction = 0.3;
    c.communities[0].funding = Funding::AdFunded;
    c.communities[0].balance = 20.0;
    c.content.advertisers = vec![
        AdvertiserConfig {
            budget: 40.0,
            deals: vec![Deal {
                community: CommunityId(0),
                price_per_impression: 0.5,
                accepted: true,
            }],
            citizen_targeting: true,
            personal_price: 0.2,
            position: vec![0.0],
            items_per_round: 2,
            standing: Some(StandingPurchase {
                community: 0,
                amount: 0.5,
                price: 5.0,
            }),
            stake: 0.02,
        },
        AdvertiserConfig {
            budget: 3.0,
            deals: vec![Deal {
                community: CommunityId(1),
                price_per_impression: 2.0,
                accepted: true,
            }],
            position: vec![0.4],
            items_per_round: 3,
            ..AdvertiserConfig::default()
        },
    ];
    c
}

