//! Runs a scenario end to end and prints per-round metrics.
//!
//! ```text
//! cargo run --release --example simulate [scenario.json]
//! ```
//! Without an argument the built-in demo scenario is used.

use plural::cli::load_scenario;
use plural::sim::{demo_scenario, Simulation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = match std::env::args().nth(1) {
        Some(path) => load_scenario(path.as_ref())?,
        None => demo_scenario(),
    };
    let mut sim = Simulation::new(config)?;
    println!(
        "{} citizens, {} communities, {} rounds",
        sim.fabric.citizens().len(),
        sim.fabric.communities().len(),
        sim.config.sim.rounds
    );
    println!("round  belief  polarization  gini   revenue");
    sim.run_with(|_, report| {
        let m = &report.metrics;
        println!(
            "{:>5}  {:.4}  {:.4}        {:.3}  {:.3}",
            m.round, m.mean_common_belief_top_bridging, m.polarization_index, m.attention_gini, m.platform_revenue
        );
        Ok(())
    })?;

    for c in sim.fabric.communities() {
        let sigma = c.principal_subcommunities();
        let sizes: Vec<usize> = sigma.iter().map(|b| b.len()).collect();
        println!("community {} detected blocs {:?}", c.id.index(), sizes);
    }
    let rounds = sim.ledger.audit()?;
    let moved: f64 = rounds.iter().map(|t| t.debits).sum();
    println!("ledger: {} entries, {moved:.3} moved, audit clean", sim.ledger.entries().len());
    Ok(())
}
