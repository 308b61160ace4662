//! Allocates one citizen's attention over a content pool with the exposure
//! equation, cuts it into a feed with exploration slots and tags each entry
//! with its provenance. Ends by seeding a new item with staked standing.

use std::collections::{BTreeMap, BTreeSet};

use plural::econ::StandingAllowances;
use plural::fabric::SocialFabric;
use plural::rank::{self, FeedParams, SeedOverrides};
use plural::score::{ContentItem, Creator, Label, ScoreBook, ScoreCard, Scope};
use plural::{ContentId, TopicId};

fn card(content: ContentId, scope: Scope, psi: f64, label: Label, blocs: Vec<usize>) -> ScoreCard {
    ScoreCard {
        content,
        scope,
        iota: 1.0,
        beta: psi,
        delta: if label == Label::Divisive { 0.6 } else { 0.0 },
        psi,
        characteristic_blocs: blocs,
        label,
        low_confidence: false,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut fabric = SocialFabric::new();
    let reader = fabric.add_citizen();
    let author = fabric.add_citizen();
    let science = fabric.add_community();
    let local = fabric.add_community();
    fabric.add_membership(reader, science, 1.0, 3.0)?;
    fabric.add_membership(reader, local, 1.0, 1.0)?;
    fabric.add_membership(author, science, 5.0, 1.0)?;
    fabric.community_mut(science)?.lambda = 1.0;
    fabric.community_mut(local)?.lambda = 2.0;
    fabric.citizen_mut(reader)?.lambda = 0.5;

    let pool: Vec<ContentId> = (0..8).map(ContentId).collect();
    let contents: BTreeMap<ContentId, ContentItem> = pool
        .iter()
        .map(|&m| {
            let item = ContentItem {
                id: m,
                creator: Creator::Citizen(author),
                topics: BTreeSet::from([TopicId(m.0 % 2)]),
                created_round: 0,
                target_communities: BTreeSet::from([science]),
                latent_position: None,
            };
            (m, item)
        })
        .collect();

    let mut book = ScoreBook::new();
    for &m in &pool {
        let x = f64::from(m.0 + 1) / 10.0;
        book.insert(card(m, Scope::Community(science), x, Label::Bridging, vec![]));
        book.insert(card(m, Scope::Community(local), 0.8 - x, Label::Neither, vec![]));
    }
    book.insert(card(pool[0], Scope::Citizen(reader), 0.9, Label::Bridging, vec![]));
    // A divisive pair so provenance can point at a balancing counterpart.
    book.insert(card(pool[6], Scope::Community(local), 0.5, Label::Divisive, vec![0]));
    book.insert(card(pool[7], Scope::Community(local), 0.4, Label::Divisive, vec![1]));

    let table = rank::exposure_table(reader, &fabric, &book, &pool)?;
    println!("exposure shares for {reader}:");
    for (m, w) in &table.weights {
        let t = &table.terms[m];
        println!("  {m}: {w:.4}  (citizen term {:.3}, community terms {:?})", t.citizen, t.communities);
    }

    let params = FeedParams {
        k: 4,
        ..FeedParams::default()
    };
    let mut feed = rank::build_feed(&table.weights, params.k, params.epsilon, params.exploration_slots, 11);
    rank::attach_provenance(&mut feed, fabric.citizen(reader)?, &book, &contents, &params);
    println!("feed:");
    for e in &feed {
        let tags: Vec<String> = e
            .provenance
            .iter()
            .map(|t| format!("{:?}@{}{} peek {:?}", t.kind, t.scope.kind(), t.scope.id(), t.balancing_peek))
            .collect();
        let slot = if e.exploration { "explore" } else { "top" };
        println!("  #{} {} share {:.3} {slot} {}", e.rank_position, e.content, e.exposure_share, tags.join("; "));
    }

    // The author stakes standing to launch a fresh item in science.
    let fresh = ContentItem {
        id: ContentId(8),
        creator: Creator::Citizen(author),
        topics: BTreeSet::new(),
        created_round: 3,
        target_communities: BTreeSet::from([science]),
        latent_position: None,
    };
    let mut overrides = SeedOverrides::new();
    let before = fabric.standing(author, science)?;
    let psi = rank::seed_content(
        &fresh,
        science,
        0.5,
        &mut fabric,
        &mut StandingAllowances::default(),
        &mut overrides,
        &params,
        3,
    )?;
    overrides.apply(&mut book, 3);
    println!(
        "seeded {} with psi {:?}; standing {before:.3} -> {:.3}; psi in round 3 = {}",
        fresh.id,
        psi,
        fabric.standing(author, science)?,
        book.psi(Scope::Community(science), fresh.id)
    );
    Ok(())
}
