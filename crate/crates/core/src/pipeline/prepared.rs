use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::counterfactual::{AugmentItem, ReplacementPool};
use crate::data::{
    chronological_split, read_sources, read_transcripts, write_sources, write_transcripts, EmbeddingFile, SourceSentence,
    Split, TranscriptRecord,
};
use crate::encoder::EncodedTranscript;
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::topic::{fit_topic_model, read_assignments, write_assignments, TopicAssignment, TopicModel, TopicSet};
use crate::training::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        })
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(Error::invalid(format!("unknown split {other}"))),
        }
    }
}

pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const SOURCES_FILE: &str = "sources.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.memb";
pub const TOPIC_MODEL_FILE: &str = "topic_model.json";
pub const ASSIGNMENTS_FILE: &str = "assignments.tsv";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Serialize, Deserialize)]
struct SplitIds {
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
}

/// Labeled transcripts with embeddings, a chronological split, sentence
/// topics and the replacement pool.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub records: Vec<TranscriptRecord>,
    pub sources: Vec<SourceSentence>,
    pub embeddings: EmbeddingFile,
    pub split: Split,
    pub encoded: Vec<EncodedTranscript>,
    /// Topic of every sentence of every transcript.
    pub sentence_topics: Vec<Vec<usize>>,
    pub topic_model: TopicModel,
    /// Transcript sentences first, then sources.
    pub assignments: Vec<TopicAssignment>,
    pub pool: ReplacementPool,
    index: HashMap<String, usize>,
}

fn rows(embeddings: &EmbeddingFile, ids: &[String]) -> Vec<Vec<f64>> {
    ids.iter().map(|id| embeddings.get_f64(id).expect("checked for missing ids")).collect()
}

impl PreparedData {
    /// Validates the inputs, splits chronologically, fits the topic model on
    /// the sources plus the training transcripts and assigns every sentence.
    pub fn prepare(
        records: Vec<TranscriptRecord>,
        embeddings: EmbeddingFile,
        sources: Vec<SourceSentence>,
        topics: &TopicSet,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        Self::check_inputs(&records, &embeddings, &sources, cfg)?;
        let split = chronological_split(&records);
        let mut texts: Vec<String> = sources.iter().map(|s| s.text.clone()).collect();
        let mut ids: Vec<String> = sources.iter().map(|s| s.id.clone()).collect();
        for &i in &split.train {
            let r = &records[i];
            texts.extend(r.sentences.iter().cloned());
            ids.extend((0..r.sentences.len()).map(|s| r.sentence_id(s)));
        }
        let model = fit_topic_model(topics, &texts, &rows(&embeddings, &ids), &cfg.topic, derive_seed(cfg.train.seed, &[3]))?;
        let mut all_ids: Vec<String> = records.iter().flat_map(|r| (0..r.sentences.len()).map(|s| r.sentence_id(s))).collect();
        all_ids.extend(sources.iter().map(|s| s.id.clone()));
        let assignments = model
            .assign_all(&rows(&embeddings, &all_ids))?
            .into_iter()
            .zip(all_ids)
            .map(|((topic, confidence), sentence_id)| TopicAssignment { sentence_id, topic, confidence })
            .collect();
        Self::assemble(records, embeddings, sources, model, assignments, cfg)
    }

    fn check_inputs(records: &[TranscriptRecord], embeddings: &EmbeddingFile, sources: &[SourceSentence], cfg: &PipelineConfig) -> Result<()> {
        cfg.validate()?;
        if records.is_empty() {
            return Err(Error::Empty("transcripts"));
        }
        if let Some(r) = records.iter().find(|r| r.label.is_none()) {
            return Err(Error::invalid(format!("transcript {} has no label", r.id)));
        }
        if embeddings.dim() != cfg.encoder.d {
            return Err(Error::shape("prepare", format!("embeddings have width {} but d = {}", embeddings.dim(), cfg.encoder.d)));
        }
        let wanted: Vec<String> = records
            .iter()
            .flat_map(|r| (0..r.sentences.len()).map(|s| r.sentence_id(s)))
            .chain(sources.iter().map(|s| s.id.clone()))
            .collect();
        let missing = embeddings.missing(wanted.iter().map(String::as_str));
        if !missing.is_empty() {
            return Err(Error::MissingEmbeddings(missing));
        }
        Ok(())
    }

    /// Builds the prepared state from already computed topic assignments.
    pub fn assemble(
        records: Vec<TranscriptRecord>,
        embeddings: EmbeddingFile,
        sources: Vec<SourceSentence>,
        topic_model: TopicModel,
        assignments: Vec<TopicAssignment>,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        Self::check_inputs(&records, &embeddings, &sources, cfg)?;
        let split = chronological_split(&records);
        let topic_of: HashMap<&str, usize> = assignments.iter().map(|a| (a.sentence_id.as_str(), a.topic)).collect();
        let mut encoded = Vec::with_capacity(records.len());
        let mut sentence_topics = Vec::with_capacity(records.len());
        for r in &records {
            let ids: Vec<String> = (0..r.sentences.len()).map(|s| r.sentence_id(s)).collect();
            encoded.push(EncodedTranscript::from_sentences(&rows(&embeddings, &ids), &cfg.encoder)?);
            sentence_topics.push(
                ids.iter()
                    .map(|id| topic_of.get(id.as_str()).copied().ok_or_else(|| Error::invalid(format!("sentence {id} has no topic"))))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let pool = ReplacementPool::from_sources(&sources, &assignments, &embeddings, topic_model.topics.no_topic())?;
        let index = records.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        Ok(Self { records, sources, embeddings, split, encoded, sentence_topics, topic_model, assignments, pool, index })
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::invalid(format!("unknown transcript {id}")))
    }

    pub fn label(&self, i: usize) -> Result<usize> {
        self.records[i].label.ok_or_else(|| Error::invalid(format!("transcript {} has no label", self.records[i].id)))
    }

    pub fn split_indices(&self, split: SplitName) -> &[usize] {
        match split {
            SplitName::Train => &self.split.train,
            SplitName::Val => &self.split.val,
            SplitName::Test => &self.split.test,
        }
    }

    pub fn samples(&self, split: SplitName, classes: usize) -> Result<Vec<Sample>> {
        self.split_indices(split)
            .iter()
            .map(|&i| Ok(Sample::labeled(self.records[i].id.clone(), self.encoded[i].clone(), self.label(i)?, classes)))
            .collect()
    }

    pub fn augment_items(&self, split: SplitName) -> Result<Vec<AugmentItem>> {
        Ok(self
            .split_indices(split)
            .iter()
            .map(|&i| AugmentItem {
                id: self.records[i].id.clone(),
                x: self.encoded[i].clone(),
                topics: self.sentence_topics[i].clone(),
                session: self.records[i].session,
            })
            .collect())
    }

    /// Writes the prepared state under `dir` with fixed file names.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut buf = Vec::new();
        write_transcripts(&mut buf, &self.records)?;
        fs::write(dir.join(TRANSCRIPTS_FILE), &buf)?;
        buf.clear();
        write_sources(&mut buf, &self.sources)?;
        fs::write(dir.join(SOURCES_FILE), &buf)?;
        fs::write(dir.join(EMBEDDINGS_FILE), self.embeddings.to_bytes())?;
        fs::write(dir.join(TOPIC_MODEL_FILE), serde_json::to_string(&self.topic_model)? + "\n")?;
        buf.clear();
        write_assignments(&mut buf, &self.assignments)?;
        fs::write(dir.join(ASSIGNMENTS_FILE), &buf)?;
        let ids = |v: &[usize]| v.iter().map(|&i| self.records[i].id.clone()).collect();
        let split = SplitIds { train: ids(&self.split.train), val: ids(&self.split.val), test: ids(&self.split.test) };
        fs::write(dir.join(SPLIT_FILE), serde_json::to_string_pretty(&split)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path, cfg: &PipelineConfig) -> Result<Self> {
        let open = |name: &str| -> Result<BufReader<fs::File>> { Ok(BufReader::new(fs::File::open(dir.join(name))?)) };
        let (records, _) = read_transcripts(open(TRANSCRIPTS_FILE)?, cfg.encoder.max_len, cfg.encoder.num_classes)?;
        let sources = read_sources(open(SOURCES_FILE)?)?;
        let embeddings = EmbeddingFile::read(&mut open(EMBEDDINGS_FILE)?)?;
        let topic_model: TopicModel = serde_json::from_reader(open(TOPIC_MODEL_FILE)?)?;
        let assignments = read_assignments(open(ASSIGNMENTS_FILE)?)?;
        let data = Self::assemble(records, embeddings, sources, topic_model, assignments, cfg)?;
        let stored: SplitIds = serde_json::from_reader(open(SPLIT_FILE)?)?;
        let ids = |v: &[usize]| -> Vec<String> { v.iter().map(|&i| data.records[i].id.clone()).collect() };
        if stored.train != ids(&data.split.train) || stored.val != ids(&data.split.val) || stored.test != ids(&data.split.test) {
            return Err(Error::Format("stored split disagrees with the transcripts".into()));
        }
        Ok(data)
    }
}
