//! Subcommands behind the `plural` binary: `run`, `score` and `compare`.
//!
//! Configuration problems exit with status 2, runtime failures with 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::fabric::SocialFabric;
use crate::score::{self, BridgingBackend, ReactionMatrix, ScoreBook, ScoreParams, ScoringMode};
use crate::sim::{self, RoundMetrics, ScenarioConfig, Simulation};
use crate::CitizenId;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input or configuration; exit status 2.
    #[error("{0}")]
    Config(String),
    /// Failure while running; exit status 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Sizes the global worker pool from `PLURAL_THREADS`, if set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("PLURAL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Config(format!("PLURAL_THREADS must be a positive integer, got {raw:?}")))?;
    // A second initialization (tests, embedding) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses and validates a scenario. Errors carry the file path and, for
/// malformed documents, the JSON path, line and column.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read scenario {}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|msg| CliError::Config(format!("{}: {msg}", path.display())))
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        format!("at {path} (line {}, column {}): {inner}", inner.line(), inner.column())
    })?;
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

#[derive(Clone, Debug, Default)]
pub struct RunArgs {
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub rounds: Option<u32>,
}

/// Runs a scenario and writes metrics.csv, feeds.jsonl, ledger.csv,
/// fabric.json and scorecards.csv into `out`, plus reactions.csv so the
/// run can be rescored offline.
pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let mut config = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(rounds) = args.rounds {
        config.sim.rounds = rounds;
    }
    fs::create_dir_all(&args.out).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;

    let mut sim = Simulation::new(config).map_err(|e| match e {
        sim::SimError::Config(c) => CliError::Config(c.to_string()),
        other => runtime(other),
    })?;
    let mut feeds = write_file(&args.out.join("feeds.jsonl"))?;
    sim.run_with(|_, report| sim::write_feeds_jsonl(report.metrics.round, &report.feeds, &mut feeds))
        .map_err(runtime)?;
    feeds.flush().map_err(runtime)?;

    sim.ledger.audit().map_err(runtime)?;
    let n_comm = sim.fabric.communities().len();
    let mut metrics = write_file(&args.out.join("metrics.csv"))?;
    sim::write_metrics_csv(&sim.metrics, n_comm, &mut metrics).map_err(runtime)?;
    metrics.flush().map_err(runtime)?;

    let mut ledger = write_file(&args.out.join("ledger.csv"))?;
    sim.ledger.write_csv(&mut ledger).map_err(runtime)?;
    ledger.flush().map_err(runtime)?;

    let mut fabric = write_file(&args.out.join("fabric.json"))?;
    fabric.write_all(sim.fabric.to_json().as_bytes()).map_err(runtime)?;
    fabric.write_all(b"\n").map_err(runtime)?;
    fabric.flush().map_err(runtime)?;

    let mut cards = write_file(&args.out.join("scorecards.csv"))?;
    sim.book.write_csv(&mut cards).map_err(runtime)?;
    cards.flush().map_err(runtime)?;

    let mut reactions = write_file(&args.out.join("reactions.csv"))?;
    sim.reactions.write_csv(&mut reactions).map_err(runtime)?;
    reactions.flush().map_err(runtime)?;
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct ScoreArgs {
    pub reactions: PathBuf,
    pub fabric: PathBuf,
    pub backend: String,
    pub out: PathBuf,
}

/// Scores every content in the reactions log in every community of the
/// fabric, as of the log's latest round.
pub fn score_offline(
    fabric: &SocialFabric,
    reactions: &ReactionMatrix,
    params: &ScoreParams,
) -> Result<ScoreBook, score::ScoreError> {
    let round = reactions.max_round();
    let mut book = ScoreBook::new();
    for comm in fabric.communities() {
        let mf_beta: BTreeMap<_, f64> = if params.backend == BridgingBackend::Mf {
            let raters: BTreeSet<CitizenId> = comm.members().iter().copied().collect();
            score::bridging_mf(reactions, &raters, &params.mf).map_or_else(|_| BTreeMap::new(), |f| f.beta_raw)
        } else {
            BTreeMap::new()
        };
        for m in reactions.contents() {
            let card = score::score_in_community(m, comm.id, fabric, reactions, params, round, mf_beta.get(&m).copied())?;
            book.insert(card);
        }
    }
    Ok(book)
}

pub fn cmd_score(args: &ScoreArgs) -> Result<(), CliError> {
    let backend: BridgingBackend = args.backend.parse().map_err(|e: score::ScoreError| CliError::Config(e.to_string()))?;
    let fabric_text = fs::read_to_string(&args.fabric)
        .map_err(|e| CliError::Config(format!("cannot read fabric {}: {e}", args.fabric.display())))?;
    let fabric = SocialFabric::from_json(&fabric_text)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.fabric.display())))?;
    let file = File::open(&args.reactions)
        .map_err(|e| CliError::Config(format!("cannot read reactions {}: {e}", args.reactions.display())))?;
    let reactions = ReactionMatrix::read_csv(file)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.reactions.display())))?;
    for m in reactions.contents() {
        for (p, _) in reactions.records_for(m) {
            if p.index() >= fabric.citizens().len() {
                return Err(CliError::Config(format!(
                    "{}: citizen {p} is not in the fabric",
                    args.reactions.display()
                )));
            }
        }
    }
    let params = ScoreParams {
        backend,
        ..ScoreParams::default()
    };
    let book = score_offline(&fabric, &reactions, &params).map_err(runtime)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(runtime)?;
    }
    let mut out = write_file(&args.out)?;
    book.write_csv(&mut out).map_err(runtime)?;
    out.flush().map_err(runtime)?;
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct CompareArgs {
    pub scenario: PathBuf,
    pub seeds: u64,
    pub out: PathBuf,
}

/// Final-round metrics compared between the two arms.
pub const COMPARED: [&str; 4] = [
    "mean_common_belief_top_bridging",
    "polarization_index",
    "attention_gini",
    "platform_revenue",
];

fn compared(m: &RoundMetrics) -> [f64; 4] {
    [
        m.mean_common_belief_top_bridging,
        m.polarization_index,
        m.attention_gini,
        m.platform_revenue,
    ]
}

/// One paired run: (treatment final metrics, baseline final metrics).
pub fn paired_run(config: &ScenarioConfig, seed: u64) -> Result<([f64; 4], [f64; 4]), sim::SimError> {
    let mut treatment = config.clone();
    treatment.seed = seed;
    let mut baseline = treatment.clone();
    baseline.scoring.mode = ScoringMode::from(config.compare.baseline_mode);
    let last = |c: ScenarioConfig| -> Result<[f64; 4], sim::SimError> {
        let sim = sim::run(c)?;
        Ok(sim.metrics.last().map_or([0.0; 4], compared))
    };
    Ok((last(treatment)?, last(baseline)?))
}

/// Runs the scenario and its baseline arm on seeds `seed .. seed + n`
/// and writes comparison.csv: per-seed deltas (treatment − baseline) and a
/// summary row of `+wins/-losses/=ties` per metric.
pub fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let config = load_scenario(&args.scenario)?;
    if args.seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    fs::create_dir_all(&args.out).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    let mut rows = Vec::new();
    for i in 0..args.seeds {
        let seed = config.seed.wrapping_add(i);
        let (t, b) = paired_run(&config, seed).map_err(runtime)?;
        let delta: Vec<f64> = t.iter().zip(&b).map(|(x, y)| x - y).collect();
        rows.push((seed, delta));
    }
    let mut out = write_file(&args.out.join("comparison.csv"))?;
    write_comparison(&rows, &mut out).map_err(runtime)?;
    out.flush().map_err(runtime)?;
    Ok(())
}

pub fn write_comparison<W: Write>(rows: &[(u64, Vec<f64>)], writer: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["seed".to_string()];
    header.extend(COMPARED.iter().map(|m| format!("delta_{m}")));
    wtr.write_record(&header)?;
    for (seed, delta) in rows {
        let mut row = vec![seed.to_string()];
        row.extend(delta.iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    let mut summary = vec!["summary".to_string()];
    for k in 0..COMPARED.len() {
        let pos = rows.iter().filter(|r| r.1[k] > 0.0).count();
        let neg = rows.iter().filter(|r| r.1[k] < 0.0).count();
        summary.push(format!("+{pos}/-{neg}/={}", rows.len() - pos - neg));
    }
    wtr.write_record(&summary)?;
    wtr.flush()?;
    Ok(())
}
