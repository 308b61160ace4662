//! Builds a small social fabric, reads normalized standing and devotion,
//! derives an intersection community and round-trips the whole thing
//! through JSON.

use plural::fabric::SocialFabric;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut fabric = SocialFabric::new();
    let citizens: Vec<_> = (0..5).map(|_| fabric.add_citizen()).collect();
    let chess = fabric.add_community();
    let town = fabric.add_community();

    // Raw weights are arbitrary positive numbers; reads are normalized.
    for (i, &p) in citizens[..4].iter().enumerate() {
        fabric.add_membership(p, chess, 1.0 + i as f64, 2.0)?;
    }
    for &p in &citizens[2..] {
        fabric.add_membership(p, town, 3.0, 1.0)?;
    }

    println!("standing in chess:");
    for &p in &citizens[..4] {
        println!("  {p}: {:.3}", fabric.standing(p, chess)?);
    }
    let p = citizens[3];
    println!(
        "devotion of {p}: chess {:.3}, town {:.3}",
        fabric.devotion(p, chess)?,
        fabric.devotion(p, town)?
    );

    fabric.update_standing(citizens[0], chess, 4.0)?;
    println!("after a reward, {} has standing {:.3}", citizens[0], fabric.standing(citizens[0], chess)?);

    if let Some(both) = fabric.intersect_communities(chess, town)? {
        let c = fabric.community(both)?;
        println!("intersection {both} = {:?}, derived from {:?}", c.members(), c.derived_from());
    }
    fabric.audit()?;

    let json = fabric.to_json();
    let back = SocialFabric::from_json(&json)?;
    assert_eq!(back.to_json(), json);
    println!("json round trip ok ({} bytes)", json.len());
    Ok(())
}
