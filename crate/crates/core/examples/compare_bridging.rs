//! Paired-seed comparison of bridging ranking against the engagement-only
//! baseline on the demo scenario.

use plural::score::ScoringMode;
use plural::sim::{demo_scenario, run};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args().nth(1).map_or(Ok(10), |s| s.parse())?;
    let (mut belief_wins, mut polar_wins) = (0, 0);
    for seed in 0..seeds {
        let mut bridging = demo_scenario();
        bridging.seed = seed;
        let mut baseline = bridging.clone();
        baseline.scoring.mode = ScoringMode::Engagement;
        let b = run(bridging)?;
        let e = run(baseline)?;
        let (bm, em) = (b.metrics.last().unwrap(), e.metrics.last().unwrap());
        println!(
            "seed {seed}: belief {:.4} vs {:.4}, polarization {:.4} vs {:.4}, gini {:.3} vs {:.3}",
            bm.mean_common_belief_top_bridging,
            em.mean_common_belief_top_bridging,
            bm.polarization_index,
            em.polarization_index,
            bm.attention_gini,
            em.attention_gini,
        );
        belief_wins += usize::from(bm.mean_common_belief_top_bridging > em.mean_common_belief_top_bridging);
        polar_wins += usize::from(bm.polarization_index < em.polarization_index);
    }
    println!("bridging ahead on common belief in {belief_wins}/{seeds} seeds, on polarization in {polar_wins}/{seeds}");
    Ok(())
}
