//! Scores three pieces of content in a two-bloc community: one both blocs
//! like, one only the left likes, one nobody likes. Compares the uniform,
//! √n-weighted and matrix-factorization bridging backends.

use std::collections::BTreeSet;

use plural::fabric::SocialFabric;
use plural::score::{self, BridgingBackend, Reaction, ReactionMatrix, ScoreParams};
use plural::{CitizenId, ContentId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut fabric = SocialFabric::new();
    let c = fabric.add_community();
    let members: Vec<CitizenId> = (0..12).map(|_| fabric.add_citizen()).collect();
    for &p in &members {
        fabric.add_membership(p, c, 1.0, 1.0)?;
    }
    // Unequal blocs: 8 on the left, 4 on the right.
    let left: BTreeSet<CitizenId> = members[..8].iter().copied().collect();
    let right: BTreeSet<CitizenId> = members[8..].iter().copied().collect();
    fabric.set_principal_subcommunities(c, vec![left.clone(), right.clone()])?;

    let (common, partisan, dud) = (ContentId(0), ContentId(1), ContentId(2));
    let mut reactions = ReactionMatrix::new();
    for &p in &members {
        let is_left = left.contains(&p);
        reactions.record_exposure(p, common, 1, Reaction::Up);
        let r = if is_left { Reaction::Up } else { Reaction::Down };
        reactions.record_exposure(p, partisan, 1, r);
        reactions.record_exposure(p, dud, 1, Reaction::Down);
    }

    let raters: BTreeSet<CitizenId> = members.iter().copied().collect();
    let mf = score::bridging_mf(&reactions, &raters, &Default::default())?;

    println!("backend      content  iota   beta   delta  psi    label");
    for backend in [BridgingBackend::GacUniform, BridgingBackend::GacPenrose, BridgingBackend::Mf] {
        let params = ScoreParams {
            backend,
            ..ScoreParams::default()
        };
        for m in [common, partisan, dud] {
            let mf_beta = mf.beta_raw.get(&m).copied();
            let card = score::score_in_community(m, c, &fabric, &reactions, &params, 1, mf_beta)?;
            println!(
                "{:<12} {:<8} {:.3}  {:.3}  {:.3}  {:.3}  {}",
                backend.name(),
                m.to_string(),
                card.iota,
                card.beta,
                card.delta,
                card.psi,
                card.label
            );
        }
    }

    let alone = score::citizen_score(common, members[0], &fabric, &reactions, &ScoreParams::default(), 1)?;
    println!("citizen-scope card for {}: psi {:.3}", members[0], alone.psi);
    Ok(())
}
