use super::*;
use crate::data::{synth_generate, SyntheticSpec};

fn small_cfg() -> PipelineConfig {
    PipelineConfig::parse_str(
        "d = 16\nmax_len = 8\nheads = 2\nn_e = 3\ndropout = 0.1\nlr = 0.003\nbatch = 16\nepochs_per_round = 3\n\
         checkpoint_every = 1\nn_c = 4\nn_t = 8\ntopic_epochs = 100\nseed = 5\n",
    )
    .unwrap()
}

fn small_data(cfg: &PipelineConfig) -> (PreparedData, Vec<GroundTruth>) {
    let spec = SyntheticSpec {
        transcripts: 60,
        sentences: 8,
        d: 16,
        seed: 2,
        sources_per_topic: 6,
        signal_sources_per_label: 6,
        chatter_sources: 6,
        ..SyntheticSpec::default()
    };
    let c = synth_generate(&spec).unwrap();
    let data = PreparedData::prepare(c.transcripts, c.embeddings, c.sources, &c.topics, cfg).unwrap();
    (data, c.ground_truth)
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn prepare_splits_and_round_trips() {
    let cfg = small_cfg();
    let (data, _) = small_data(&cfg);
    assert_eq!((data.split.train.len(), data.split.val.len(), data.split.test.len()), (48, 6, 6));
    assert_eq!(data.sentence_topics.iter().map(Vec::len).sum::<usize>(), 60 * 8);
    assert!(!data.pool.is_empty());
    let dir = tempfile::tempdir().unwrap();
    data.save(dir.path()).unwrap();
    let back = PreparedData::load(dir.path(), &cfg).unwrap();
    assert_eq!(back.records, data.records);
    assert_eq!(back.sentence_topics, data.sentence_topics);
    assert_eq!(back.encoded, data.encoded);
    assert_eq!(back.pool.len(), data.pool.len());
}

#[test]
fn missing_embeddings_are_listed() {
    let cfg = small_cfg();
    let (data, _) = small_data(&cfg);
    let mut emb = crate::data::EmbeddingFile::new("x", 16).unwrap();
    for id in data.embeddings.ids().iter().filter(|id| id.as_str() != "ec00003:2" && id.as_str() != "ec00007:0") {
        emb.push(id.clone(), data.embeddings.get(id).unwrap()).unwrap();
    }
    match PreparedData::prepare(data.records.clone(), emb, data.sources.clone(), &data.topic_model.topics, &cfg) {
        Err(Error::MissingEmbeddings(ids)) => assert_eq!(ids, vec!["ec00003:2", "ec00007:0"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn single_round_is_plain_supervision() {
    let cfg = PipelineConfig { train: crate::training::TrainConfig { rounds: 1, ..small_cfg().train }, ..small_cfg() };
    let (data, _) = small_data(&cfg);
    let out = train_pipeline(&data, &cfg, None, false).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.traces.len(), 1);
    let mut enc = Encoder::new(cfg.encoder.clone(), derive_seed(cfg.train.seed, &[4])).unwrap();
    let pool = data.samples(SplitName::Train, 3).unwrap();
    let val = data.samples(SplitName::Val, 3).unwrap();
    train_round(&mut enc, &pool, &val, &cfg.train, 1).unwrap();
    assert_eq!(enc.to_bytes(), out.encoder.to_bytes());
}

#[test]
fn pipeline_is_deterministic_and_resumable() {
    let cfg = small_cfg();
    let (data, truth) = small_data(&cfg);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out = run_pipeline(&data, &cfg, Some(a.path()), false).unwrap();
    run_pipeline(&data, &cfg, Some(b.path()), false).unwrap();
    let files = tree_bytes(a.path());
    assert_eq!(files, tree_bytes(b.path()));
    for name in ["model.mtca", "metrics.jsonl", "eval.json", "explanations.jsonl", "round2/records.jsonl", "round1/trace/trace.json"] {
        assert!(files.iter().any(|(n, _)| n == name), "{name} missing");
    }

    assert!(!out.train.records.is_empty());
    assert!(out.train.records.iter().all(|r| r.polarity == Polarity::Positive || r.target.iter().all(|&t| t == 1.0 / 3.0)));
    assert_eq!(out.eval.confusion.iter().flatten().sum::<usize>(), data.split.test.len());
    if let Some(rate) = localization_rate(&out.explanations, &truth) {
        assert!((0.0..=1.0).contains(&rate));
    }

    // drop everything but round 1 and resume
    fs::remove_dir_all(a.path().join("round2")).unwrap();
    for f in ["model.mtca", "metrics.jsonl", "eval.json"] {
        fs::remove_file(a.path().join(f)).unwrap();
    }
    run_pipeline(&data, &cfg, Some(a.path()), true).unwrap();
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
}
