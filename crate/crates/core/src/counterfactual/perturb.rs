use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingFile, Session, SourceSentence};
use crate::encoder::EncodedTranscript;
use crate::error::{Error, Result};
use crate::topic::TopicAssignment;

/// One candidate replacement sentence from the external corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub id: String,
    pub text: String,
    pub topic: usize,
    /// `None` fits any transcript session.
    pub session: Option<Session>,
    pub embedding: Vec<f64>,
}

/// Replacement sentences indexed by topic.
#[derive(Clone, Debug, Default)]
pub struct ReplacementPool {
    entries: Vec<PoolEntry>,
    by_id: HashMap<String, usize>,
    by_topic: BTreeMap<usize, Vec<usize>>,
}

impl ReplacementPool {
    pub fn new(entries: Vec<PoolEntry>) -> Result<Self> {
        let mut by_id = HashMap::new();
        let mut by_topic: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if by_id.insert(e.id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate replacement id {}", e.id)));
            }
            by_topic.entry(e.topic).or_default().push(i);
        }
        Ok(Self { entries, by_id, by_topic })
    }

    /// Joins sources with their topic assignments and embeddings. Sources
    /// assigned to `no_topic` are left out.
    pub fn from_sources(
        sources: &[SourceSentence],
        assignments: &[TopicAssignment],
        embeddings: &EmbeddingFile,
        no_topic: usize,
    ) -> Result<Self> {
        let topics: HashMap<&str, usize> = assignments.iter().map(|a| (a.sentence_id.as_str(), a.topic)).collect();
        let missing = embeddings.missing(sources.iter().map(|s| s.id.as_str()));
        if !missing.is_empty() {
            return Err(Error::MissingEmbeddings(missing));
        }
        let mut entries = Vec::new();
        for s in sources {
            let topic = *topics
                .get(s.id.as_str())
                .ok_or_else(|| Error::invalid(format!("source {} has no topic assignment", s.id)))?;
            if topic == no_topic {
                continue;
            }
            entries.push(PoolEntry {
                id: s.id.clone(),
                text: s.text.clone(),
                topic,
                session: s.session,
                embedding: embeddings.get_f64(&s.id).expect("checked above"),
            });
        }
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, index: usize) -> &PoolEntry {
        &self.entries[index]
    }

    pub fn by_id(&self, id: &str) -> Option<&PoolEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    /// Pool indices with `topic` whose session fits `session`.
    pub fn compatible(&self, topic: usize, session: Session) -> Vec<usize> {
        self.by_topic
            .get(&topic)
            .map(|v| {
                v.iter()
                    .copied()
                    .filter(|&i| self.entries[i].session.map_or(true, |s| s == session))
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Up to `n_c` compatible replacements for a sentence of `topic`, drawn
/// without replacement and returned in pool order.
pub fn generate_perturbations<R: Rng + ?Sized>(
    pool: &ReplacementPool,
    topic: usize,
    session: Session,
    n_c: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let candidates = pool.compatible(topic, session);
    if candidates.is_empty() {
        log::warn!("no replacement sentences for topic {topic} in session {session}");
        return Ok(Vec::new());
    }
    let mut picked: Vec<usize> = if n_c >= candidates.len() {
        candidates
    } else {
        sample(rng, candidates.len(), n_c).into_iter().map(|i| candidates[i]).collect()
    };
    picked.sort_unstable();
    for &i in &picked {
        let found = pool.entry(i).topic;
        if found != topic {
            return Err(Error::TopicMismatch { expected: topic, candidate: pool.entry(i).id.clone(), found });
        }
    }
    Ok(picked)
}

/// Indices of the `k_p` highest and `k_n` lowest scores, ties broken by
/// lower index first. Negatives are listed most negative first and never
/// overlap the positives.
pub fn select_augmentations(scores: &[f64], k_p: usize, k_n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let kp = k_p.min(order.len());
    let start = order.len().saturating_sub(k_n).max(kp);
    let positives = order[..kp].to_vec();
    let negatives = order[start..].iter().rev().copied().collect();
    (positives, negatives)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// Rounds to the six decimals records are stored with.
pub fn round6(x: f64) -> f64 {
    format!("{x:.6}").parse().expect("formatted float parses")
}

mod six_decimals {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        let raw = serde_json::value::RawValue::from_string(format!("{x:.6}")).map_err(serde::ser::Error::custom)?;
        serde::Serialize::serialize(&raw, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d)
    }
}

/// One selected counterfactual augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub transcript_id: String,
    pub sentence_index: usize,
    pub replacement_id: String,
    pub topic: usize,
    #[serde(with = "six_decimals")]
    pub score: f64,
    pub polarity: Polarity,
    /// Soft label the perturbed transcript is trained towards.
    pub target: Vec<f64>,
}

impl PerturbationRecord {
    pub fn key(&self) -> String {
        format!("{}#{}#{}", self.transcript_id, self.sentence_index, self.replacement_id)
    }

    /// The original transcript with this record's replacement swapped in.
    pub fn apply(&self, x: &EncodedTranscript, pool: &ReplacementPool) -> Result<EncodedTranscript> {
        let entry = pool
            .by_id(&self.replacement_id)
            .ok_or_else(|| Error::MissingEmbeddings(vec![self.replacement_id.clone()]))?;
        x.with_sentence(self.sentence_index, &entry.embedding)
    }
}

pub fn write_records<W: Write>(w: &mut W, records: &[PerturbationRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<PerturbationRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(r);
    }
    Ok(out)
}
