use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use mtca_core::config::PipelineConfig;
use mtca_core::counterfactual::{write_records, write_reports};
use mtca_core::data::{
    label_from_prices, read_ground_truth, read_sources, read_transcripts, synth_generate, write_ground_truth,
    write_sources, write_transcripts, EmbeddingFile, PriceTable, SyntheticSpec,
};
use mtca_core::pipeline::{
    augment_split, evaluate_split, explain_split, load_encoder, load_records, localization_rate, train_pipeline,
    PreparedData, SplitName, EVAL_FILE, EXPLANATIONS_FILE, RECORDS_FILE, TABLE_FILE,
};
use mtca_core::topic::TopicSet;
use mtca_core::training::CheckpointTrace;

use crate::error::{CliError, Result};
use crate::manifest::{verify_upstream, ManifestBuilder, RunManifest};

pub const SYNTH_TRANSCRIPTS: &str = "transcripts.jsonl";
pub const SYNTH_SOURCES: &str = "sources.jsonl";
pub const SYNTH_EMBEDDINGS: &str = "embeddings.memb";
pub const SYNTH_TOPICS: &str = "topics.tsv";
pub const SYNTH_TRUTH: &str = "ground_truth.tsv";
pub const SYNTH_SPEC: &str = "spec.json";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const LOCALIZATION_FILE: &str = "localization.json";

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    Ok(BufReader::new(fs::File::open(path).map_err(|e| CliError::io(path, e))?))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

/// The pipeline configuration from `path`, or the defaults.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let cfg = match path {
        Some(p) => PipelineConfig::parse_str(&fs::read_to_string(p).map_err(|e| CliError::io(p, e))?)?,
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn builder(command: &str, cfg: &PipelineConfig, config_path: Option<&Path>) -> Result<ManifestBuilder> {
    let mut b = ManifestBuilder::new(command)
        .config_kv(&cfg.to_kv())
        .seed("train", cfg.train.seed)
        .seed("augment", cfg.augment.seed);
    if let Some(p) = config_path {
        b.input(p)?;
    }
    Ok(b)
}

pub struct SynthArgs {
    pub spec: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

pub fn synth(a: &SynthArgs) -> Result<RunManifest> {
    let mut spec: SyntheticSpec = match &a.spec {
        Some(p) => serde_json::from_reader(open(p)?)?,
        None => SyntheticSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let corpus = synth_generate(&spec)?;
    create_out(&a.out)?;
    let mut buf = Vec::new();
    write_transcripts(&mut buf, &corpus.transcripts)?;
    write(&a.out.join(SYNTH_TRANSCRIPTS), &buf)?;
    buf.clear();
    write_sources(&mut buf, &corpus.sources)?;
    write(&a.out.join(SYNTH_SOURCES), &buf)?;
    write(&a.out.join(SYNTH_EMBEDDINGS), corpus.embeddings.to_bytes())?;
    buf.clear();
    corpus.topics.write(&mut buf)?;
    write(&a.out.join(SYNTH_TOPICS), &buf)?;
    buf.clear();
    write_ground_truth(&mut buf, &corpus.ground_truth)?;
    write(&a.out.join(SYNTH_TRUTH), &buf)?;
    write(&a.out.join(SYNTH_SPEC), serde_json::to_string_pretty(&spec)? + "\n")?;
    log::info!("synthesized {} transcripts and {} sources", corpus.transcripts.len(), corpus.sources.len());
    let mut b = ManifestBuilder::new("synth").seed("synth", spec.seed).seed("embed", spec.embed_seed);
    if let Some(p) = &a.spec {
        b.input(p)?;
    }
    b.finish(&a.out)
}

pub struct PrepareArgs {
    pub transcripts: PathBuf,
    pub embeddings: PathBuf,
    pub topics: PathBuf,
    pub prices: Option<PathBuf>,
    pub sources: Option<PathBuf>,
    pub horizon: usize,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn prepare(a: &PrepareArgs) -> Result<RunManifest> {
    let cfg = load_config(a.config.as_deref())?;
    let mut b = builder("prepare", &cfg, a.config.as_deref())?;
    for p in [&a.transcripts, &a.embeddings, &a.topics].into_iter().chain(&a.prices).chain(&a.sources) {
        verify_upstream(p)?;
        b.input(p)?;
    }
    let (mut records, _) = read_transcripts(open(&a.transcripts)?, cfg.encoder.max_len, cfg.encoder.num_classes)?;
    let embeddings = EmbeddingFile::read(&mut open(&a.embeddings)?)?;
    let topics = TopicSet::read(open(&a.topics)?)?;
    let sources = match &a.sources {
        Some(p) => read_sources(open(p)?)?,
        None => Vec::new(),
    };
    let thresholds = match &a.prices {
        Some(p) => Some(label_from_prices(&mut records, &PriceTable::read(open(p)?)?, a.horizon)?),
        None => None,
    };
    let data = PreparedData::prepare(records, embeddings, sources, &topics, &cfg)?;
    data.save(&a.out)?;
    if let Some(t) = thresholds {
        write(&a.out.join(THRESHOLDS_FILE), serde_json::to_string_pretty(&t)? + "\n")?;
    }
    log::info!(
        "split {}/{}/{}; replacement pool of {}",
        data.split.train.len(),
        data.split.val.len(),
        data.split.test.len(),
        data.pool.len()
    );
    b.finish(&a.out)
}

fn load_data(dir: &Path, cfg: &PipelineConfig, b: &mut ManifestBuilder) -> Result<PreparedData> {
    verify_upstream(dir)?;
    b.input(dir)?;
    Ok(PreparedData::load(dir, cfg)?)
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub out: PathBuf,
    pub resume: bool,
}

pub fn train(a: &TrainArgs) -> Result<RunManifest> {
    let cfg = load_config(a.config.as_deref())?;
    let mut b = builder("train", &cfg, a.config.as_deref())?;
    let data = load_data(&a.data, &cfg, &mut b)?;
    if a.resume {
        if let Some(m) = RunManifest::read(&a.out)? {
            m.verify(&a.out)?;
        }
    }
    create_out(&a.out)?;
    let out = train_pipeline(&data, &cfg, Some(&a.out), a.resume)?;
    if let Some(m) = out.metrics.iter().rev().find(|m| m.split == "val") {
        log::info!("round {} validation accuracy {:.4}", m.round, m.accuracy);
    }
    b.finish(&a.out)
}

pub struct AugmentArgs {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub model: PathBuf,
    pub trace: PathBuf,
    pub split: SplitName,
    pub round: usize,
    pub out: PathBuf,
}

pub fn augment(a: &AugmentArgs) -> Result<RunManifest> {
    let cfg = load_config(a.config.as_deref())?;
    let mut b = builder("augment", &cfg, a.config.as_deref())?.seed("round", a.round as u64);
    let data = load_data(&a.data, &cfg, &mut b)?;
    for p in [&a.model, &a.trace] {
        verify_upstream(p)?;
        b.input(p)?;
    }
    let encoder = load_encoder(&a.model, &cfg)?;
    let trace = CheckpointTrace::load(&a.trace)?;
    trace.check_layout(encoder.params())?;
    if data.pool.is_empty() {
        log::warn!("replacement pool is empty; no augmentations possible");
    }
    let records = augment_split(&encoder, &trace, &data, a.split, &cfg, a.round)?;
    create_out(&a.out)?;
    let mut buf = Vec::new();
    write_records(&mut buf, &records)?;
    write(&a.out.join(RECORDS_FILE), &buf)?;
    log::info!("{} augmentation records", records.len());
    b.finish(&a.out)
}

pub struct ExplainArgs {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub model: PathBuf,
    pub records: PathBuf,
    pub split: SplitName,
    pub ground_truth: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn explain(a: &ExplainArgs) -> Result<RunManifest> {
    let cfg = load_config(a.config.as_deref())?;
    let mut b = builder("explain", &cfg, a.config.as_deref())?;
    let data = load_data(&a.data, &cfg, &mut b)?;
    for p in [&a.model, &a.records].into_iter().chain(&a.ground_truth) {
        verify_upstream(p)?;
        b.input(p)?;
    }
    let encoder = load_encoder(&a.model, &cfg)?;
    let records = load_records(&a.records)?;
    let reports = explain_split(&encoder, &data, a.split, &records)?;
    create_out(&a.out)?;
    let mut buf = Vec::new();
    write_reports(&mut buf, &reports)?;
    write(&a.out.join(EXPLANATIONS_FILE), &buf)?;
    if let Some(p) = &a.ground_truth {
        let truth = read_ground_truth(open(p)?)?;
        let rate = localization_rate(&reports, &truth);
        write(&a.out.join(LOCALIZATION_FILE), serde_json::to_string_pretty(&serde_json::json!({ "localization": rate }))? + "\n")?;
        log::info!("top-1 localization {rate:?}");
    }
    b.finish(&a.out)
}

pub struct EvaluateArgs {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub model: PathBuf,
    pub split: SplitName,
    pub out: PathBuf,
}

pub fn evaluate(a: &EvaluateArgs) -> Result<RunManifest> {
    let cfg = load_config(a.config.as_deref())?;
    let mut b = builder("evaluate", &cfg, a.config.as_deref())?;
    let data = load_data(&a.data, &cfg, &mut b)?;
    verify_upstream(&a.model)?;
    b.input(&a.model)?;
    let encoder = load_encoder(&a.model, &cfg)?;
    let report = evaluate_split(&encoder, &data, a.split, cfg.train.seed)?;
    create_out(&a.out)?;
    write(&a.out.join(EVAL_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    let table = report.table("MTCA");
    write(&a.out.join(TABLE_FILE), &table)?;
    print!("{table}");
    b.finish(&a.out)
}
