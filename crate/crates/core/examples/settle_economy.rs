//! Settles two rounds of sponsored attention through the ledger. The
//! community sponsor can only afford the first round, so the second one
//! drains it and clamps its λ to zero. Prints the ledger as CSV.

use std::collections::{BTreeMap, BTreeSet};

use plural::econ::{self, EconParams, Funding, Ledger, LambdaPolicies, Owner, SettledFeed};
use plural::fabric::SocialFabric;
use plural::rank;
use plural::score::{ContentItem, Creator, Label, ScoreBook, ScoreCard, Scope};
use plural::ContentId;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut fabric = SocialFabric::new();
    let viewer = fabric.add_citizen();
    let creator = fabric.add_citizen();
    let club = fabric.add_community();
    fabric.add_membership(viewer, club, 1.0, 1.0)?;
    fabric.add_membership(creator, club, 1.0, 1.0)?;

    let item = ContentItem {
        id: ContentId(0),
        creator: Creator::Citizen(creator),
        topics: BTreeSet::new(),
        created_round: 0,
        target_communities: BTreeSet::from([club]),
        latent_position: None,
    };
    let contents = BTreeMap::from([(item.id, item.clone())]);
    let mut book = ScoreBook::new();
    for scope in [Scope::Community(club), Scope::Citizen(viewer)] {
        book.insert(ScoreCard {
            content: item.id,
            scope,
            iota: 1.0,
            beta: 0.5,
            delta: 0.0,
            psi: 0.5,
            characteristic_blocs: Vec::new(),
            label: Label::Bridging,
            low_confidence: false,
        });
    }

    let params = EconParams::default();
    let mut ledger = Ledger::new();
    ledger.endow(Owner::Community(club), 1.0)?;
    ledger.endow(Owner::Citizen(viewer), 10.0)?;
    let mut policies = LambdaPolicies::new(params.price_per_lambda_impression);
    policies.set_lambda(Owner::Community(club), 3.0, Funding::SelfPaid, &[], &fabric)?;
    policies.set_lambda(Owner::Citizen(viewer), 1.0, Funding::SelfPaid, &[], &fabric)?;

    for round in 0..3 {
        policies.begin_round(&mut fabric)?;
        let table = rank::exposure_table(viewer, &fabric, &book, &[item.id])?;
        let feed = rank::build_feed(&table.weights, 1, 0.0, 0, 0);
        let shares = econ::attribution(viewer, &table.terms[&item.id]);
        let report = econ::settle_round(
            round,
            &[SettledFeed { table: &table, feed: &feed }],
            &contents,
            &fabric,
            &mut policies,
            &[],
            &params,
            &mut ledger,
        )?;
        println!(
            "round {round}: λ(club) = {}, attribution {shares:?}, spent {:.3}, clamped {:?}",
            fabric.community(club)?.lambda,
            report.sponsor_spend,
            report.clamped
        );
    }

    let totals = ledger.audit()?;
    for t in &totals {
        println!("round {} debits {:.3} = credits {:.3}", t.round, t.debits, t.credits);
    }
    println!("events: {:?}", ledger.events());
    println!();
    ledger.write_csv(std::io::stdout().lock())?;
    Ok(())
}
