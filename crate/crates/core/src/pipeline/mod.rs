//! Preparation, multi-round training with counterfactual augmentation,
//! evaluation and explanation, with every artifact persisted.

mod prepared;

pub use prepared::{PreparedData, SplitName};

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::config::PipelineConfig;
use crate::counterfactual::{
    augment_all, dedup_records, explain, read_records, write_records, write_reports, AugmentConfig,
    ExplanationReport, PerturbationRecord, Polarity,
};
use crate::data::GroundTruth;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::eval::{random_baseline, ticker_following_baseline, EvalReport};
use crate::seed::{derive_seed, stream};
use crate::training::{train_round, CheckpointTrace, MetricRecord, Sample};

pub const MODEL_FILE: &str = "model.mtca";
pub const TRACE_DIR: &str = "trace";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";

/// Result of the training rounds.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub encoder: Encoder,
    /// One trace per completed round.
    pub traces: Vec<CheckpointTrace>,
    pub metrics: Vec<MetricRecord>,
    /// Augmentation records accumulated into the pool.
    pub records: Vec<PerturbationRecord>,
}

impl TrainOutput {
    pub fn last_trace(&self) -> &CheckpointTrace {
        self.traces.last().expect("at least one round")
    }
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?);
        }
    }
    Ok(out)
}

fn last_accuracy(metrics: &[MetricRecord], round: usize, split: &str) -> Option<f64> {
    metrics.iter().rev().find(|m| m.round == round && m.split == split).map(|m| m.accuracy)
}

fn augment_config(cfg: &PipelineConfig, round: usize) -> AugmentConfig {
    AugmentConfig { seed: derive_seed(cfg.augment.seed, &[round as u64]), ..cfg.augment.clone() }
}

/// Samples for `records`, each the original transcript with one sentence swapped.
pub fn record_samples(data: &PreparedData, records: &[PerturbationRecord]) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| {
            let i = data.index_of(&r.transcript_id)?;
            let key = format!("{}#{}", r.key(), if r.polarity == Polarity::Positive { "pos" } else { "neg" });
            Ok(Sample { key, x: r.apply(&data.encoded[i], &data.pool)?, target: r.target.clone() })
        })
        .collect()
}

fn round_dir(out: &Path, round: usize) -> std::path::PathBuf {
    out.join(format!("round{round}"))
}

/// Loads a model file and checks it against the configured encoder.
pub fn load_encoder(path: &Path, cfg: &PipelineConfig) -> Result<Encoder> {
    let encoder = Encoder::load(&mut BufReader::new(fs::File::open(path)?), cfg.encoder.dropout)?;
    if encoder.config() != &cfg.encoder {
        return Err(Error::invalid(format!("{} was trained with a different encoder configuration", path.display())));
    }
    Ok(encoder)
}

/// Augmentation records for a split's transcripts, seeded as in round `round`.
pub fn augment_split(
    encoder: &Encoder,
    trace: &CheckpointTrace,
    data: &PreparedData,
    split: SplitName,
    cfg: &PipelineConfig,
    round: usize,
) -> Result<Vec<PerturbationRecord>> {
    let items = data.augment_items(split)?;
    augment_all(encoder, trace, &data.pool, &items, data.topic_model.topics.no_topic(), &augment_config(cfg, round))
}

fn load_round(dir: &Path, cfg: &PipelineConfig) -> Result<(Encoder, CheckpointTrace, Vec<MetricRecord>)> {
    let encoder = load_encoder(&dir.join(MODEL_FILE), cfg)?;
    let trace = CheckpointTrace::load(&dir.join(TRACE_DIR))?;
    trace.check_layout(encoder.params())?;
    Ok((encoder, trace, read_metrics(&dir.join(METRICS_FILE))?))
}

/// Runs `cfg.train.rounds` rounds: round 1 on the training transcripts, each
/// later round on the originals plus augmentations scored against the
/// previous round's trace. With `out` set, each round is written to
/// `out/round{r}`; with `resume` also set, an existing round-1 directory is
/// loaded instead of retrained.
pub fn train_pipeline(data: &PreparedData, cfg: &PipelineConfig, out: Option<&Path>, resume: bool) -> Result<TrainOutput> {
    cfg.validate()?;
    let classes = cfg.encoder.num_classes;
    let originals = data.samples(SplitName::Train, classes)?;
    let val = data.samples(SplitName::Val, classes)?;
    let mut encoder = Encoder::new(cfg.encoder.clone(), derive_seed(cfg.train.seed, &[4]))?;
    let mut traces: Vec<CheckpointTrace> = Vec::new();
    let mut metrics = Vec::new();
    let mut records: Vec<PerturbationRecord> = Vec::new();

    for round in 1..=cfg.train.rounds {
        let dir = out.map(|o| round_dir(o, round));
        if round == 1 && resume {
            if let Some(d) = dir.as_deref().filter(|d| d.join(MODEL_FILE).exists()) {
                log::info!("resuming from {}", d.display());
                let (e, t, m) = load_round(d, cfg)?;
                encoder = e;
                traces.push(t);
                metrics.extend(m);
                continue;
            }
        }
        let mut pool = originals.clone();
        if round > 1 {
            let prev = traces.last().expect("previous round");
            let fresh = augment_split(&encoder, prev, data, SplitName::Train, cfg, round)?;
            log::info!("round {round}: {} new augmentation records", fresh.len());
            records = dedup_records(records.into_iter().chain(fresh).collect());
            pool.extend(record_samples(data, &records)?);
        }
        let result = train_round(&mut encoder, &pool, &val, &cfg.train, round)?;
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
            fs::write(d.join(MODEL_FILE), encoder.to_bytes())?;
            result.trace.save(&d.join(TRACE_DIR), &cfg.encoder)?;
            write_jsonl(&d.join(METRICS_FILE), &result.metrics)?;
            let mut buf = Vec::new();
            write_records(&mut buf, &records)?;
            fs::write(d.join(RECORDS_FILE), buf)?;
        }
        traces.push(result.trace);
        metrics.extend(result.metrics);
        if cfg.train.early_stop && round > 1 && !val.is_empty() {
            let (before, now) = (last_accuracy(&metrics, round - 1, "val"), last_accuracy(&metrics, round, "val"));
            if let (Some(b), Some(n)) = (before, now) {
                if n - b < 1e-3 {
                    log::info!("early stop after round {round}: validation accuracy {b:.4} -> {n:.4}");
                    break;
                }
            }
        }
    }
    if let Some(o) = out {
        fs::create_dir_all(o)?;
        fs::write(o.join(MODEL_FILE), encoder.to_bytes())?;
        traces.last().expect("rounds >= 1").save(&o.join(TRACE_DIR), &cfg.encoder)?;
        write_jsonl(&o.join(METRICS_FILE), &metrics)?;
    }
    Ok(TrainOutput { encoder, traces, metrics, records })
}

/// Accuracy report on one split, with the random and ticker-following
/// baselines computed on the same transcripts.
pub fn evaluate_split(encoder: &Encoder, data: &PreparedData, split: SplitName, seed: u64) -> Result<EvalReport> {
    let idx = data.split_indices(split);
    let classes = encoder.config().num_classes;
    let labels = idx.iter().map(|&i| data.label(i)).collect::<Result<Vec<_>>>()?;
    let preds = idx.iter().map(|&i| encoder.predict_label(&data.encoded[i])).collect::<Result<Vec<_>>>()?;
    let mut report = EvalReport::new(split.to_string(), &preds, &labels, classes)?;
    report.random_baseline = Some(random_baseline(&labels, classes, &mut stream(seed, &[7]))?);
    let history: Vec<(&str, usize)> = idx.iter().zip(&labels).map(|(&i, &l)| (data.records[i].ticker.as_str(), l)).collect();
    report.ticker_following = ticker_following_baseline(&history);
    Ok(report)
}

/// Negative augmentations of a split's transcripts under `trace`.
pub fn negative_records(
    encoder: &Encoder,
    trace: &CheckpointTrace,
    data: &PreparedData,
    split: SplitName,
    cfg: &PipelineConfig,
) -> Result<Vec<PerturbationRecord>> {
    let items = data.augment_items(split)?;
    let acfg = AugmentConfig { k_p: 0, ..augment_config(cfg, 0) };
    augment_all(encoder, trace, &data.pool, &items, data.topic_model.topics.no_topic(), &acfg)
}

/// Explanation reports for a split from its negative records.
pub fn explain_split(
    encoder: &Encoder,
    data: &PreparedData,
    split: SplitName,
    records: &[PerturbationRecord],
) -> Result<Vec<ExplanationReport>> {
    let mut by_id: HashMap<&str, Vec<PerturbationRecord>> = HashMap::new();
    for r in records {
        by_id.entry(r.transcript_id.as_str()).or_default().push(r.clone());
    }
    data.split_indices(split)
        .iter()
        .map(|&i| {
            let rec = &data.records[i];
            let mine = by_id.get(rec.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            explain(rec, &data.encoded[i], encoder, mine, &data.pool)
        })
        .collect()
}

/// Share of correctly classified transcripts whose top explanation is the
/// ground-truth decisive sentence. `None` when none is correctly classified.
pub fn localization_rate(reports: &[ExplanationReport], truth: &[GroundTruth]) -> Option<f64> {
    let decisive: HashMap<&str, usize> = truth.iter().map(|g| (g.transcript.as_str(), g.sentence)).collect();
    let correct: Vec<&ExplanationReport> =
        reports.iter().filter(|r| r.true_label == Some(r.predicted_label) && decisive.contains_key(r.transcript_id.as_str())).collect();
    if correct.is_empty() {
        return None;
    }
    let hits = correct.iter().filter(|r| r.top_sentence() == decisive.get(r.transcript_id.as_str()).copied()).count();
    Some(hits as f64 / correct.len() as f64)
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub train: TrainOutput,
    pub eval: EvalReport,
    pub explain_records: Vec<PerturbationRecord>,
    pub explanations: Vec<ExplanationReport>,
}

pub const EVAL_FILE: &str = "eval.json";
pub const TABLE_FILE: &str = "eval.txt";
pub const EXPLAIN_RECORDS_FILE: &str = "explain_records.jsonl";
pub const EXPLANATIONS_FILE: &str = "explanations.jsonl";

/// Training rounds, then evaluation and explanation on the test split.
pub fn run_pipeline(data: &PreparedData, cfg: &PipelineConfig, out: Option<&Path>, resume: bool) -> Result<PipelineOutput> {
    let train = train_pipeline(data, cfg, out, resume)?;
    let eval = evaluate_split(&train.encoder, data, SplitName::Test, cfg.train.seed)?;
    let explain_records = negative_records(&train.encoder, train.last_trace(), data, SplitName::Test, cfg)?;
    let explanations = explain_split(&train.encoder, data, SplitName::Test, &explain_records)?;
    if let Some(o) = out {
        fs::write(o.join(EVAL_FILE), serde_json::to_string_pretty(&eval)? + "\n")?;
        fs::write(o.join(TABLE_FILE), eval.table("MTCA"))?;
        let mut buf = Vec::new();
        write_records(&mut buf, &explain_records)?;
        fs::write(o.join(EXPLAIN_RECORDS_FILE), buf)?;
        let mut buf = Vec::new();
        write_reports(&mut buf, &explanations)?;
        fs::write(o.join(EXPLANATIONS_FILE), buf)?;
    }
    Ok(PipelineOutput { train, eval, explain_records, explanations })
}

/// Reads a records file written by this module.
pub fn load_records(path: &Path) -> Result<Vec<PerturbationRecord>> {
    read_records(BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests;
