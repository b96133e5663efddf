use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::TranscriptRecord;
use crate::encoder::{EncodedTranscript, Encoder};
use crate::error::{Error, Result};
use crate::topic::tokenize;

use super::perturb::{round6, PerturbationRecord, Polarity, ReplacementPool};

/// Token-set Jaccard similarity; two empty sentences count as identical.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let sa: HashSet<String> = tokenize(a).into_iter().collect();
    let sb: HashSet<String> = tokenize(b).into_iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub sentence_index: usize,
    pub original: String,
    pub replacement_id: String,
    pub replacement: String,
    pub topic: usize,
    pub score: f64,
    pub perturbed_label: usize,
    /// Jaccard similarity between the original and replacement sentences.
    pub closeness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub transcript_id: String,
    pub true_label: Option<usize>,
    pub predicted_label: usize,
    /// Most negative score first.
    pub entries: Vec<Explanation>,
}

impl ExplanationReport {
    /// Sentence index of the most influential flip, if any.
    pub fn top_sentence(&self) -> Option<usize> {
        self.entries.first().map(|e| e.sentence_index)
    }
}

/// Negative counterfactuals that flip a correct prediction. Without a true
/// label the original prediction stands in for it.
pub fn explain(
    transcript: &TranscriptRecord,
    x: &EncodedTranscript,
    encoder: &Encoder,
    records: &[PerturbationRecord],
    pool: &ReplacementPool,
) -> Result<ExplanationReport> {
    let predicted = encoder.predict_label(x)?;
    let mut report = ExplanationReport {
        transcript_id: transcript.id.clone(),
        true_label: transcript.label,
        predicted_label: predicted,
        entries: Vec::new(),
    };
    if transcript.label.is_some_and(|l| l != predicted) {
        return Ok(report);
    }
    for r in records.iter().filter(|r| r.polarity == Polarity::Negative && r.transcript_id == transcript.id) {
        let original = transcript
            .sentences
            .get(r.sentence_index)
            .ok_or_else(|| Error::OutOfRange(format!("sentence {} of {}", r.sentence_index, transcript.id)))?;
        let perturbed_label = encoder.predict_label(&r.apply(x, pool)?)?;
        if perturbed_label == predicted {
            continue;
        }
        let replacement = pool.by_id(&r.replacement_id).expect("apply found it").text.clone();
        report.entries.push(Explanation {
            sentence_index: r.sentence_index,
            closeness: round6(jaccard(original, &replacement)),
            original: original.clone(),
            replacement_id: r.replacement_id.clone(),
            replacement,
            topic: r.topic,
            score: r.score,
            perturbed_label,
        });
    }
    report
        .entries
        .sort_by(|a, b| a.score.total_cmp(&b.score).then(a.sentence_index.cmp(&b.sentence_index)));
    Ok(report)
}

pub fn write_reports<W: Write>(w: &mut W, reports: &[ExplanationReport]) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut *w, r)?;
        writeln!(w)?;
    }
    Ok(())
}
