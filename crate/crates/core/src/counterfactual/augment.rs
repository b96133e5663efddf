use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Session;
use crate::encoder::{argmax, EncodedTranscript, Encoder};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, stream};
use crate::training::CheckpointTrace;

use super::influence::TracInScorer;
use super::model::{EncoderModel, GradientSubset};
use super::perturb::{generate_perturbations, round6, select_augmentations, PerturbationRecord, Polarity, ReplacementPool};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Candidate replacements scored per sentence.
    pub n_c: usize,
    pub k_p: usize,
    pub k_n: usize,
    pub subset: GradientSubset,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { n_c: 10_000, k_p: 1, k_n: 1, subset: GradientSubset::HeadAndProjection, seed: 0 }
    }
}

/// A transcript prepared for augmentation.
#[derive(Clone, Debug)]
pub struct AugmentItem {
    pub id: String,
    pub x: EncodedTranscript,
    /// Topic of every valid sentence.
    pub topics: Vec<usize>,
    pub session: Session,
}

/// Scores every topical sentence replacement of one transcript and keeps
/// the selected records.
pub fn augment_item(
    encoder: &Encoder,
    trace: &CheckpointTrace,
    pool: &ReplacementPool,
    item: &AugmentItem,
    no_topic: usize,
    cfg: &AugmentConfig,
) -> Result<Vec<PerturbationRecord>> {
    if item.topics.len() != item.x.valid_len() {
        return Err(Error::shape("augment", format!("{} topics for {} sentences", item.topics.len(), item.x.valid_len())));
    }
    let model = EncoderModel::new(encoder.config().clone(), cfg.subset);
    let y = encoder.predict_label(&item.x)?;
    let scorer = TracInScorer::new(&model, trace.params(), &item.x, y)?;
    let classes = encoder.config().num_classes;
    let base = derive_seed(cfg.seed, &[crate::data::hash_embed::fnv1a(item.id.as_bytes())]);
    let mut out = Vec::new();
    for (s, &topic) in item.topics.iter().enumerate() {
        if topic == no_topic {
            continue;
        }
        let mut rng = stream(base, &[s as u64]);
        let candidates = generate_perturbations(pool, topic, item.session, cfg.n_c, &mut rng)?;
        if candidates.is_empty() {
            continue;
        }
        let perturbed = candidates
            .iter()
            .map(|&c| item.x.with_sentence(s, &pool.entry(c).embedding))
            .collect::<Result<Vec<_>>>()?;
        let scores = perturbed.iter().map(|xp| scorer.score(xp)).collect::<Result<Vec<_>>>()?;
        let (pos, neg) = select_augmentations(&scores, cfg.k_p, cfg.k_n);
        let mut push = |i: usize, polarity: Polarity| -> Result<()> {
            let target = match polarity {
                Polarity::Positive => {
                    let mut t = vec![0.0; classes];
                    t[argmax(&encoder.logits(&perturbed[i])?)] = 1.0;
                    t
                }
                Polarity::Negative => vec![1.0 / classes as f64; classes],
            };
            out.push(PerturbationRecord {
                transcript_id: item.id.clone(),
                sentence_index: s,
                replacement_id: pool.entry(candidates[i]).id.clone(),
                topic,
                score: round6(scores[i]),
                polarity,
                target,
            });
            Ok(())
        };
        for i in pos {
            push(i, Polarity::Positive)?;
        }
        for i in neg {
            push(i, Polarity::Negative)?;
        }
    }
    Ok(out)
}

/// [`augment_item`] over many transcripts in parallel, output in input order.
pub fn augment_all(
    encoder: &Encoder,
    trace: &CheckpointTrace,
    pool: &ReplacementPool,
    items: &[AugmentItem],
    no_topic: usize,
    cfg: &AugmentConfig,
) -> Result<Vec<PerturbationRecord>> {
    trace.check_layout(encoder.params())?;
    let per: Vec<Vec<PerturbationRecord>> = items
        .par_iter()
        .map(|item| augment_item(encoder, trace, pool, item, no_topic, cfg))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Drops records repeating an earlier (transcript, sentence, replacement).
pub fn dedup_records(records: Vec<PerturbationRecord>) -> Vec<PerturbationRecord> {
    let mut seen = HashSet::new();
    records.into_iter().filter(|r| seen.insert(r.key())).collect()
}
