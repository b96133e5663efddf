use std::collections::HashMap;
use std::io::{BufRead, Write};

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{hash_embed_or_zero, sentence_id, EmbeddingFile, Session, SourceSentence, TranscriptRecord};
use crate::error::{Error, Result};
use crate::seed::stream;
use crate::topic::{Topic, TopicSet};

/// Name recorded in the header of generated embedding files.
pub const HASH_ENCODER: &str = "hash-embed-v1";

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Parameters of the planted-signal corpus.
///
/// Each transcript has one decisive sentence under the signal topic whose
/// cue words fix the label; a few sentences belong to filler topics and the
/// rest is topic-free chatter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub transcripts: usize,
    pub sentences: usize,
    /// Probability that a transcript's label is replaced by another class.
    pub noise: f64,
    pub seed: u64,
    /// Width of the generated hash embeddings.
    pub d: usize,
    pub embed_seed: u64,
    pub topical_per_transcript: usize,
    pub sources_per_topic: usize,
    pub signal_sources_per_label: usize,
    pub chatter_sources: usize,
    pub signal_topic: Topic,
    /// Cue words per class; the decisive sentence draws from its label's list.
    pub cues: Vec<Vec<String>>,
    pub filler_topics: Vec<Topic>,
    pub glue: Vec<String>,
    pub chatter: Vec<String>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let topic = |name: &str, terms: &[&str]| Topic { name: name.into(), terms: words(terms) };
        Self {
            transcripts: 600,
            sentences: 20,
            noise: 0.1,
            seed: 0,
            d: 32,
            embed_seed: 0,
            topical_per_transcript: 2,
            sources_per_topic: 30,
            signal_sources_per_label: 40,
            chatter_sources: 40,
            signal_topic: topic("outlook", &["outlook", "guidance", "forecast", "visibility", "expectations"]),
            cues: vec![
                words(&["stable", "predictable", "steady", "consistent", "resilient", "durable", "secure", "comfortable"]),
                words(&["moderate", "balanced", "measured", "gradual", "mixed", "modest", "tempered", "cautious"]),
                words(&["uncertain", "turbulent", "volatile", "erratic", "unpredictable", "shaky", "precarious", "chaotic"]),
            ],
            filler_topics: vec![
                topic("revenue", &["revenue", "sales", "bookings", "billings", "turnover"]),
                topic("costs", &["costs", "expenses", "spending", "overhead", "opex"]),
                topic("products", &["product", "launch", "platform", "roadmap", "features"]),
                topic("capital", &["buyback", "dividend", "repurchase", "capital", "cash"]),
                topic("hiring", &["hiring", "headcount", "talent", "workforce", "employees"]),
                topic("supply", &["supply", "inventory", "logistics", "shipping", "suppliers"]),
            ],
            glue: words(&["we", "our", "the", "this", "quarter", "year", "team", "continue", "see", "remain", "very", "with", "for", "and", "into", "across"]),
            chatter: words(&[
                "thank", "you", "everyone", "joining", "call", "operator", "next", "question", "please", "good", "morning",
                "afternoon", "hello", "great", "appreciate", "open", "welcome", "thanks", "okay", "sure",
            ]),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::invalid(format!("noise must be in [0, 0.5), got {}", self.noise)));
        }
        if self.d == 0 {
            return Err(Error::invalid("embedding width must be positive"));
        }
        if self.cues.len() < 2 || self.cues.iter().any(|c| c.len() < 2) {
            return Err(Error::invalid("need cue lists of ≥ 2 words for ≥ 2 classes"));
        }
        if self.transcripts > 0 && (self.sentences == 0 || self.topical_per_transcript >= self.sentences) {
            return Err(Error::invalid("sentences must exceed topical_per_transcript"));
        }
        if self.filler_topics.is_empty() && self.topical_per_transcript > 0 {
            return Err(Error::invalid("topical sentences need filler topics"));
        }
        if self.glue.len() < 4 || self.chatter.len() < 5 || self.signal_topic.terms.len() < 2 {
            return Err(Error::invalid("word lists too short"));
        }
        if self.filler_topics.iter().any(|t| t.terms.len() < 2) {
            return Err(Error::invalid("filler topics need ≥ 2 terms"));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.cues.len()
    }

    /// Filler topics first, then the signal topic.
    pub fn topic_set(&self) -> Result<TopicSet> {
        let mut t = self.filler_topics.clone();
        t.push(self.signal_topic.clone());
        TopicSet::new(t)
    }

    pub fn signal_topic_id(&self) -> usize {
        self.filler_topics.len()
    }
}

/// The decisive sentence and clean label of one synthetic transcript.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    pub transcript: String,
    pub sentence: usize,
    pub label: usize,
}

pub fn write_ground_truth<W: Write>(w: &mut W, rows: &[GroundTruth]) -> Result<()> {
    for r in rows {
        writeln!(w, "{}\t{}\t{}", r.transcript, r.sentence, r.label)?;
    }
    Ok(())
}

pub fn read_ground_truth<R: BufRead>(reader: R) -> Result<Vec<GroundTruth>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = || Error::Parse { line: i + 1, msg: "expected transcript<TAB>sentence<TAB>label".into() };
        let f: Vec<&str> = line.split('\t').collect();
        let [t, s, l] = f[..] else { return Err(err()) };
        out.push(GroundTruth {
            transcript: t.to_string(),
            sentence: s.parse().map_err(|_| err())?,
            label: l.parse().map_err(|_| err())?,
        });
    }
    Ok(out)
}

/// Everything [`synth_generate`] produces.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub transcripts: Vec<TranscriptRecord>,
    pub sources: Vec<SourceSentence>,
    pub topics: TopicSet,
    pub embeddings: EmbeddingFile,
    pub ground_truth: Vec<GroundTruth>,
    /// Planted topic of every transcript and source sentence.
    pub planted_topics: HashMap<String, usize>,
}

fn sentence<R: Rng>(rng: &mut R, parts: &[(&[String], usize)]) -> String {
    let mut w: Vec<&str> = Vec::new();
    for (list, n) in parts {
        w.extend(list.choose_multiple(rng, *n).map(String::as_str));
    }
    w.shuffle(rng);
    let mut s = w.join(" ");
    if let Some(first) = s.get(..1) {
        s.replace_range(..1, &first.to_uppercase());
    }
    s + "."
}

pub fn synth_generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let topics = spec.topic_set()?;
    let no_topic = topics.no_topic();
    let signal = spec.signal_topic_id();
    let classes = spec.num_classes();
    let mut rng = stream(spec.seed, &[0x5157]);
    let mut planted = HashMap::new();

    let signal_sentence = |rng: &mut rand_chacha::ChaCha8Rng, label: usize| {
        sentence(rng, &[(&spec.signal_topic.terms, 2), (&spec.cues[label], 3), (&spec.glue, 2)])
    };
    let filler_sentence = |rng: &mut rand_chacha::ChaCha8Rng, t: usize| {
        sentence(rng, &[(&spec.filler_topics[t].terms, 2), (&spec.glue, 4)])
    };
    let chatter_sentence = |rng: &mut rand_chacha::ChaCha8Rng| sentence(rng, &[(&spec.chatter, 5), (&spec.glue, 1)]);

    let start = NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date");
    let mut transcripts = Vec::with_capacity(spec.transcripts);
    let mut ground_truth = Vec::with_capacity(spec.transcripts);
    for i in 0..spec.transcripts {
        let id = format!("ec{i:05}");
        let clean = rng.gen_range(0..classes);
        let positions: Vec<usize> = rand::seq::index::sample(&mut rng, spec.sentences, 1 + spec.topical_per_transcript).into_vec();
        let decisive = positions[0];
        let mut sentences = Vec::with_capacity(spec.sentences);
        for s in 0..spec.sentences {
            let (text, topic) = if s == decisive {
                (signal_sentence(&mut rng, clean), signal)
            } else if positions[1..].contains(&s) {
                let t = rng.gen_range(0..spec.filler_topics.len());
                (filler_sentence(&mut rng, t), t)
            } else {
                (chatter_sentence(&mut rng), no_topic)
            };
            planted.insert(sentence_id(&id, s), topic);
            sentences.push(text);
        }
        let label = if rng.gen::<f64>() < spec.noise {
            let shift = rng.gen_range(1..classes);
            (clean + shift) % classes
        } else {
            clean
        };
        transcripts.push(TranscriptRecord {
            id: id.clone(),
            ticker: format!("TK{:02}", i % 12),
            date: start + Days::new(3 * i as u64),
            session: if rng.gen_bool(0.5) { Session::Opening } else { Session::QuestionAnswer },
            sentences,
            label: Some(label),
        });
        ground_truth.push(GroundTruth { transcript: id, sentence: decisive, label: clean });
    }

    let mut drafts: Vec<(String, usize)> = Vec::new();
    for t in 0..spec.filler_topics.len() {
        for _ in 0..spec.sources_per_topic {
            drafts.push((filler_sentence(&mut rng, t), t));
        }
    }
    for label in 0..classes {
        for _ in 0..spec.signal_sources_per_label {
            drafts.push((signal_sentence(&mut rng, label), signal));
        }
    }
    for _ in 0..spec.chatter_sources {
        drafts.push((chatter_sentence(&mut rng), no_topic));
    }
    drafts.shuffle(&mut rng);
    let sources: Vec<SourceSentence> = drafts
        .into_iter()
        .enumerate()
        .map(|(k, (text, topic))| {
            let id = format!("news{k:05}");
            planted.insert(id.clone(), topic);
            SourceSentence { id, text, session: None }
        })
        .collect();

    let mut embeddings = EmbeddingFile::new(HASH_ENCODER, spec.d)?;
    for r in &transcripts {
        for (i, s) in r.sentences.iter().enumerate() {
            embeddings.push_f64(r.sentence_id(i), &hash_embed_or_zero(s, spec.d, spec.embed_seed).0)?;
        }
    }
    for s in &sources {
        embeddings.push_f64(s.id.clone(), &hash_embed_or_zero(&s.text, spec.d, spec.embed_seed).0)?;
    }
    Ok(SyntheticCorpus { transcripts, sources, topics, embeddings, ground_truth, planted_topics: planted })
}
