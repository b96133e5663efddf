//! BM25 retrieval, distant supervision and the linear topic head.

mod bm25;
mod head;

pub use bm25::{term_score, Bm25Params, InvertedIndex};
pub use head::{build_distant_supervision, train_topic_head, DistantSamples, TopicHead};

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::stream;
use crate::tensor::Tensor;

/// Lowercased alphanumeric runs of at least two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub name: String,
    pub terms: Vec<String>,
}

/// Expert topics; label `len()` is "no topic".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TopicSet {
    topics: Vec<Topic>,
}

impl TopicSet {
    pub fn new(topics: Vec<Topic>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &topics {
            if t.name.trim().is_empty() || t.name.contains(['\t', '\n']) {
                return Err(Error::invalid(format!("bad topic name {:?}", t.name)));
            }
            if !seen.insert(t.name.as_str()) {
                return Err(Error::invalid(format!("duplicate topic {}", t.name)));
            }
            if t.terms.is_empty() {
                return Err(Error::invalid(format!("topic {} has no query terms", t.name)));
            }
        }
        Ok(Self { topics })
    }

    /// Parses `name<TAB>term, term, ...` lines; blank lines and `#` comments are skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut topics = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, terms) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: "expected name<TAB>terms".into() })?;
            let terms: Vec<String> = terms.split(',').flat_map(tokenize).collect();
            if terms.is_empty() {
                return Err(Error::Parse { line: i + 1, msg: format!("topic {name} has no usable terms") });
            }
            topics.push(Topic { name: name.trim().to_string(), terms });
        }
        Self::new(topics).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        for t in &self.topics {
            writeln!(w, "{}\t{}", t.name, t.terms.join(","))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    pub fn no_topic(&self) -> usize {
        self.topics.len()
    }

    pub fn num_labels(&self) -> usize {
        self.topics.len() + 1
    }

    pub fn get(&self, id: usize) -> Option<&Topic> {
        self.topics.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Topic> {
        self.topics.iter()
    }

    pub fn name(&self, id: usize) -> &str {
        self.topics.get(id).map_or("none", |t| t.name.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicConfig {
    /// Positives (and negatives) per topic.
    pub n_t: usize,
    pub epochs: usize,
    pub lr: f64,
    pub k1: f64,
    pub b: f64,
}

impl Default for TopicConfig {
    fn default() -> Self {
        Self { n_t: 10, epochs: 300, lr: 0.5, k1: 1.2, b: 0.75 }
    }
}

/// Topics plus the trained head that labels sentence embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub topics: TopicSet,
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl TopicModel {
    pub fn new(topics: TopicSet, head: &TopicHead) -> Result<Self> {
        if head.num_labels() != topics.num_labels() {
            return Err(Error::invalid("head label count differs from topics + 1"));
        }
        let d = head.dim();
        let weight = head.weight().data().chunks(d).map(<[f64]>::to_vec).collect();
        Ok(Self { topics, weight, bias: head.bias().to_vec() })
    }

    pub fn head(&self) -> Result<TopicHead> {
        TopicHead::from_parts(Tensor::from_rows(&self.weight)?, self.bias.clone())
    }

    pub fn dim(&self) -> usize {
        self.weight.first().map_or(0, Vec::len)
    }

    /// Labels every embedding; ties go to the lowest label.
    pub fn assign_all(&self, embeddings: &[Vec<f64>]) -> Result<Vec<(usize, f64)>> {
        let head = self.head()?;
        embeddings.iter().map(|e| head.assign(e)).collect()
    }
}

/// Trains the topic head by distant supervision over `texts` (with matching
/// `embeddings`). Documents matching any topic query are never used as
/// "no topic" negatives unless nothing else is left.
pub fn fit_topic_model(
    topics: &TopicSet,
    texts: &[String],
    embeddings: &[Vec<f64>],
    cfg: &TopicConfig,
    seed: u64,
) -> Result<TopicModel> {
    if texts.len() != embeddings.len() {
        return Err(Error::shape("fit_topic_model", "texts and embeddings differ in count"));
    }
    if topics.is_empty() {
        return Err(Error::Empty("topic set"));
    }
    let index = InvertedIndex::build(texts);
    let params = Bm25Params { k1: cfg.k1, b: cfg.b };
    let mut positives: Vec<(usize, usize)> = Vec::new();
    let mut negatives: Vec<usize> = Vec::new();
    let mut matched: HashSet<usize> = HashSet::new();
    for (t, topic) in topics.iter().enumerate() {
        let ranking = index.rank(&topic.terms, params);
        matched.extend(ranking.iter().map(|r| r.0));
        if ranking.is_empty() {
            log::warn!("topic {} matches no sentence", topic.name);
            continue;
        }
        let ds = build_distant_supervision(&ranking, texts.len(), cfg.n_t, &mut stream(seed, &[t as u64]))?;
        positives.extend(ds.positives.into_iter().map(|p| (p, t)));
        negatives.extend(ds.negatives);
    }
    negatives.sort_unstable();
    negatives.dedup();
    // Sentences matching any topic query make poor "no topic" examples.
    let clean: Vec<usize> = negatives.iter().copied().filter(|d| !matched.contains(d)).collect();
    let negatives = if clean.is_empty() {
        let positive_docs: HashSet<usize> = positives.iter().map(|p| p.0).collect();
        negatives.into_iter().filter(|d| !positive_docs.contains(d)).collect()
    } else {
        clean
    };
    let mut samples: Vec<(Vec<f64>, usize)> = positives.iter().map(|&(d, t)| (embeddings[d].clone(), t)).collect();
    samples.extend(negatives.into_iter().map(|d| (embeddings[d].clone(), topics.no_topic())));
    let head = train_topic_head(&samples, topics.num_labels(), cfg.epochs, cfg.lr)?;
    TopicModel::new(topics.clone(), &head)
}

/// One line of the topic-assignment file.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicAssignment {
    pub sentence_id: String,
    pub topic: usize,
    pub confidence: f64,
}

pub fn write_assignments<W: Write>(w: &mut W, rows: &[TopicAssignment]) -> Result<()> {
    for r in rows {
        writeln!(w, "{}\t{}\t{:.6}", r.sentence_id, r.topic, r.confidence)?;
    }
    Ok(())
}

pub fn read_assignments<R: BufRead>(reader: R) -> Result<Vec<TopicAssignment>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, topic, conf] = fields[..] else { return Err(err("expected sentence_id<TAB>topic<TAB>confidence")) };
        let topic = topic.parse().map_err(|_| err("bad topic id"))?;
        let confidence: f64 = conf.parse().map_err(|_| err("bad confidence"))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(err("confidence outside [0, 1]"));
        }
        out.push(TopicAssignment { sentence_id: id.to_string(), topic, confidence });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::hash_embed;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Q3 EPS: up 5%, a-ok!"), vec!["q3", "eps", "up", "ok"]);
        assert!(tokenize("a . b").is_empty());
    }

    #[test]
    fn topic_file_round_trip() {
        let text = "# comment\nrevenue\tRevenue, sales,top line\n\ncosts\tcost,expenses\n";
        let t = TopicSet::read(text.as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.no_topic(), 2);
        assert_eq!(t.get(0).unwrap().terms, vec!["revenue", "sales", "top", "line"]);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(TopicSet::read(buf.as_slice()).unwrap(), t);
        assert!(TopicSet::read("dup\tx\ndup\ty\n".as_bytes()).is_err());
        assert!(TopicSet::read("nameonly\n".as_bytes()).is_err());
    }

    #[test]
    fn assignment_round_trip() {
        let rows = vec![
            TopicAssignment { sentence_id: "a:0".into(), topic: 3, confidence: 0.5 },
            TopicAssignment { sentence_id: "n7".into(), topic: 0, confidence: 0.123457 },
        ];
        let mut buf = Vec::new();
        write_assignments(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "a:0\t3\t0.500000\nn7\t0\t0.123457\n");
        assert_eq!(read_assignments(buf.as_slice()).unwrap(), rows);
        assert!(read_assignments("a\tb\t0.1\n".as_bytes()).is_err());
        assert!(read_assignments("a\t1\t1.5\n".as_bytes()).is_err());
    }

    #[test]
    fn planted_topics_are_retrieved_and_learned() {
        let topics = TopicSet::new(vec![
            Topic { name: "energy".into(), terms: vec!["oil".into(), "barrel".into()] },
            Topic { name: "labor".into(), terms: vec!["wages".into(), "hiring".into()] },
        ])
        .unwrap();
        let mut rng = stream(5, &[]);
        use rand::seq::SliceRandom;
        let filler = ["the", "we", "said", "quarter", "today", "very", "much", "team", "call", "thanks"];
        let mut texts = Vec::new();
        let mut planted = Vec::new();
        for i in 0..100 {
            let mut words: Vec<&str> = filler.choose_multiple(&mut rng, 5).copied().collect();
            let t = i % 4;
            match t {
                0 => words.extend(["oil", "barrel"]),
                1 => words.extend(["wages", "hiring"]),
                _ => {}
            }
            words.shuffle(&mut rng);
            texts.push(words.join(" "));
            planted.push(if t < 2 { t } else { 2 });
        }
        let emb: Vec<Vec<f64>> = texts.iter().map(|t| hash_embed(t, 32, 0).unwrap()).collect();
        let index = InvertedIndex::build(&texts);
        let ranking = index.rank(&topics.get(0).unwrap().terms, Bm25Params::default());
        let top: Vec<usize> = ranking.iter().take(10).map(|r| r.0).collect();
        assert!(top.iter().filter(|&&d| planted[d] == 0).count() >= 9);

        let model = fit_topic_model(&topics, &texts, &emb, &TopicConfig::default(), 1).unwrap();
        let agree = model.assign_all(&emb).unwrap().iter().zip(&planted).filter(|(a, p)| a.0 == **p).count();
        assert!(agree >= 90, "agreement {agree}/100");
        let json = serde_json::to_string(&model).unwrap();
        assert_eq!(serde_json::from_str::<TopicModel>(&json).unwrap(), model);
    }
}
