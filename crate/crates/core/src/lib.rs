//! Communitarian feed ranking on a hypergraph social fabric.
//!
//! Citizens belong to overlapping communities with weighted standing and
//! devotion. Content is scored per community (and per citizen) on interest,
//! bridging and divisiveness across the community's principal
//! subcommunities; feeds allocate each citizen's fixed attention budget
//! through a λ-weighted exposure equation; sponsors pay per impression
//! through an append-only double-entry ledger. The [`sim`] module closes the
//! loop with a seeded agent-based harness.
//!
//! Every capability has a runnable example under `examples/`:
//!
//! | example              | shows                                              |
//! |----------------------|----------------------------------------------------|
//! | `fabric_basics`      | memberships, normalized weights, intersections     |
//! | `detect_communities` | FCM bloc recovery, Louvain graph clustering         |
//! | `score_content`      | ι, β, δ, ψ and labels under each bridging backend   |
//! | `build_feeds`        | exposure shares, exploration, provenance, seeding   |
//! | `settle_economy`     | sponsorship charges, clamping, ledger audit         |
//! | `simulate`           | a full scenario run with per-round metrics          |
//! | `compare_bridging`   | paired seeds, bridging ranking vs engagement        |
//!
//! ```bash
//! cargo run --release --example simulate -- scenarios/demo.json
//! ```

pub mod cli;
pub mod detect;
pub mod econ;
pub mod fabric;
mod ids;
pub mod rank;
pub mod rng;
pub mod score;
pub mod sim;

pub use ids::{AdvertiserId, CitizenId, CommunityId, ContentId, TopicId};
