//! Plants two opinion blocs inside one community, lets them vote on a batch
//! of content and recovers the blocs with fuzzy c-means. Also clusters a
//! small friendship graph with Louvain.

use std::collections::BTreeSet;

use plural::detect::{self, AttitudeMatrix, DetectParams};
use plural::fabric::SocialFabric;
use plural::rng;
use plural::score::{Reaction, ReactionMatrix};
use plural::{CitizenId, ContentId};
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut fabric = SocialFabric::new();
    let c = fabric.add_community();
    let citizens: Vec<CitizenId> = (0..40).map(|_| fabric.add_citizen()).collect();
    for &p in &citizens {
        fabric.add_membership(p, c, 1.0, 1.0)?;
    }

    // Even ids lean left, odd ids lean right. Content 0..10 is left-coded,
    // 10..20 right-coded; each vote agrees with the lean 85% of the time.
    let mut rng = rng::seeded(7);
    let mut reactions = ReactionMatrix::new();
    for &p in &citizens {
        let left = p.index() % 2 == 0;
        for m in 0..20u32 {
            if rng.random::<f64>() > 0.7 {
                continue;
            }
            let likes = (m < 10) == left;
            let agree = rng.random::<f64>() < 0.85;
            let r = if likes == agree { Reaction::Up } else { Reaction::Down };
            reactions.record_exposure(p, ContentId(m), 0, r);
        }
    }

    let matrix = AttitudeMatrix::from_reactions(&reactions, &citizens);
    let params = DetectParams {
        seed: 3,
        ..DetectParams::default()
    };
    let blocs = detect::principal_subcommunities(&mut fabric, c, &matrix, &params)?;
    for (g, bloc) in blocs.iter().enumerate() {
        let even = bloc.iter().filter(|p| p.index() % 2 == 0).count();
        println!("bloc {g}: {} members, {even} of them even", bloc.len());
    }

    let detection = detect::detect_communities(&matrix, &params)?;
    println!(
        "chose K = {} (partition coefficient {:.3}, {} FCM iterations)",
        detection.k, detection.partition_coefficient, detection.partition.iterations
    );

    // Two triangles joined by one weak edge.
    let id = CitizenId;
    let edges = vec![
        (id(0), id(1), 1.0),
        (id(1), id(2), 1.0),
        (id(0), id(2), 1.0),
        (id(3), id(4), 1.0),
        (id(4), id(5), 1.0),
        (id(3), id(5), 1.0),
        (id(2), id(3), 0.1),
    ];
    let clusters: Vec<BTreeSet<CitizenId>> = detect::graph_cluster(&edges, 1.0, 0);
    println!("louvain clusters: {clusters:?}");
    Ok(())
}
