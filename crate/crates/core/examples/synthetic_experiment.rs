//! Augmented versus single-round accuracy on the synthetic corpus.
//!
//! Usage: synthetic_experiment CONFIG [SEED...]

use std::time::Instant;

use mtca_core::config::PipelineConfig;
use mtca_core::data::{synth_generate, SyntheticSpec};
use mtca_core::pipeline::{localization_rate, run_pipeline, PreparedData};
use mtca_core::training::TrainConfig;

fn main() -> mtca_core::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let path = args.next().expect("config path");
    let base = PipelineConfig::parse_str(&std::fs::read_to_string(path)?)?;
    let seeds: Vec<u64> = args.map(|a| a.parse().expect("seed")).collect();
    for seed in if seeds.is_empty() { vec![0, 1, 2] } else { seeds } {
        let start = Instant::now();
        let spec = SyntheticSpec { seed, d: base.encoder.d, ..SyntheticSpec::default() };
        let corpus = synth_generate(&spec)?;
        let cfg = PipelineConfig { train: TrainConfig { seed, ..base.train.clone() }, ..base.clone() };
        let data = PreparedData::prepare(corpus.transcripts, corpus.embeddings, corpus.sources, &corpus.topics, &cfg)?;
        let one = PipelineConfig { train: TrainConfig { rounds: 1, ..cfg.train.clone() }, ..cfg.clone() };
        let single = run_pipeline(&data, &one, None, false)?;
        let t1 = start.elapsed().as_secs_f64();
        let full = run_pipeline(&data, &cfg, None, false)?;
        println!(
            "seed {seed}: 1-round {:.4} 2-round {:.4} gain {:+.4} localization {:?} records {} ({t1:.0}s / {:.0}s)",
            single.eval.accuracy,
            full.eval.accuracy,
            full.eval.accuracy - single.eval.accuracy,
            localization_rate(&full.explanations, &corpus.ground_truth),
            full.train.records.len(),
            start.elapsed().as_secs_f64(),
        );
    }
    Ok(())
}
