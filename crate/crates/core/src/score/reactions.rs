//! Sparse citizen × content interaction log.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use serde::{Deserialize, Serialize};

use super::ScoreError;
use crate::{CitizenId, ContentId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reaction {
    Down,
    #[default]
    Neutral,
    Up,
}

impl Reaction {
    pub fn value(self) -> i8 {
        match self {
            Reaction::Down => -1,
            Reaction::Neutral => 0,
            Reaction::Up => 1,
        }
    }

    pub fn from_value(v: i64) -> Option<Self> {
        match v {
            -1 => Some(Reaction::Down),
            0 => Some(Reaction::Neutral),
            1 => Some(Reaction::Up),
            _ => None,
        }
    }

    pub fn is_explicit(self) -> bool {
        self != Reaction::Neutral
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactionRecord {
    pub exposed: bool,
    pub reaction: Reaction,
    /// Round of the most recent interaction.
    pub round: u32,
}

/// Exposures and signed reactions, indexed by content.
///
/// One record per (citizen, content): repeated exposures refresh the round,
/// and an explicit reaction sticks once given.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReactionMatrix {
    by_content: BTreeMap<ContentId, BTreeMap<CitizenId, ReactionRecord>>,
    reacted: BTreeMap<CitizenId, BTreeSet<ContentId>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    citizen_id: u32,
    content_id: u32,
    round: u32,
    exposed: u8,
    reaction: i64,
}

impl ReactionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.by_content.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_content.is_empty()
    }

    /// Overwrites the record for `(citizen, content)`.
    pub fn insert(&mut self, citizen: CitizenId, content: ContentId, record: ReactionRecord) -> Result<(), ScoreError> {
        if record.reaction.is_explicit() && !record.exposed {
            return Err(ScoreError::InvalidRecord { citizen, content });
        }
        self.by_content.entry(content).or_default().insert(citizen, record);
        if record.reaction.is_explicit() {
            self.reacted.entry(citizen).or_default().insert(content);
        } else if let Some(set) = self.reacted.get_mut(&citizen) {
            set.remove(&content);
            if set.is_empty() {
                self.reacted.remove(&citizen);
            }
        }
        Ok(())
    }

    /// Merges an exposure (and optional reaction) observed in `round`.
    pub fn record_exposure(&mut self, citizen: CitizenId, content: ContentId, round: u32, reaction: Reaction) {
        let rec = self
            .by_content
            .entry(content)
            .or_default()
            .entry(citizen)
            .or_insert(ReactionRecord {
                exposed: true,
                reaction: Reaction::Neutral,
                round,
            });
        rec.exposed = true;
        rec.round = rec.round.max(round);
        if reaction.is_explicit() {
            rec.reaction = reaction;
            self.reacted.entry(citizen).or_default().insert(content);
        }
    }

    pub fn get(&self, citizen: CitizenId, content: ContentId) -> Option<&ReactionRecord> {
        self.by_content.get(&content)?.get(&citizen)
    }

    pub fn records_for(&self, content: ContentId) -> impl Iterator<Item = (CitizenId, &ReactionRecord)> {
        self.by_content
            .get(&content)
            .into_iter()
            .flat_map(|m| m.iter().map(|(&p, r)| (p, r)))
    }

    pub fn contents(&self) -> impl Iterator<Item = ContentId> + '_ {
        self.by_content.keys().copied()
    }

    pub fn has_reacted(&self, citizen: CitizenId, content: ContentId) -> bool {
        self.reacted.get(&citizen).is_some_and(|s| s.contains(&content))
    }

    /// Contents this citizen reacted to explicitly.
    pub fn reacted_by(&self, citizen: CitizenId) -> impl Iterator<Item = ContentId> + '_ {
        self.reacted.get(&citizen).into_iter().flatten().copied()
    }

    pub fn max_round(&self) -> u32 {
        self.by_content
            .values()
            .flat_map(|m| m.values().map(|r| r.round))
            .max()
            .unwrap_or(0)
    }

    /// Reads the `citizen_id,content_id,round,exposed,reaction` CSV format.
    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self, ScoreError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut out = ReactionMatrix::new();
        for (line, row) in rdr.deserialize::<CsvRow>().enumerate() {
            let row = row.map_err(|e| ScoreError::Csv(e.to_string()))?;
            let reaction = Reaction::from_value(row.reaction).ok_or_else(|| {
                ScoreError::Csv(format!("record {}: reaction must be -1, 0 or 1", line + 1))
            })?;
            let exposed = match row.exposed {
                0 => false,
                1 => true,
                other => {
                    return Err(ScoreError::Csv(format!(
                        "record {}: exposed must be 0 or 1, got {other}",
                        line + 1
                    )))
                }
            };
            out.insert(
                CitizenId(row.citizen_id),
                ContentId(row.content_id),
                ReactionRecord {
                    exposed,
                    reaction,
                    round: row.round,
                },
            )?;
        }
        Ok(out)
    }

    /// Writes rows ordered by (content, citizen).
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), ScoreError> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        wtr.write_record(["citizen_id", "content_id", "round", "exposed", "reaction"])
            .map_err(|e| ScoreError::Csv(e.to_string()))?;
        for (&m, recs) in &self.by_content {
            for (&p, r) in recs {
                wtr.serialize(CsvRow {
                    citizen_id: p.0,
                    content_id: m.0,
                    round: r.round,
                    exposed: r.exposed as u8,
                    reaction: r.reaction.value() as i64,
                })
                .map_err(|e| ScoreError::Csv(e.to_string()))?;
            }
        }
        wtr.flush().map_err(|e| ScoreError::Csv(e.to_string()))?;
        Ok(())
    }
}
