//! Experiments shared by the acceptance target and the integration tests.
#![allow(dead_code)]

use mtca_core::config::PipelineConfig;
use mtca_core::counterfactual::{pc_at, spearman, tracin_plus, LossModel, SoftmaxRegression};
use mtca_core::data::{synth_generate, GroundTruth, SyntheticSpec};
use mtca_core::encoder::{argmax, ParamStore};
use mtca_core::pipeline::{localization_rate, run_pipeline, PreparedData};
use mtca_core::training::TrainConfig;
use mtca_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SYNTHETIC_CONFIG: &str = include_str!("../../../../configs/synthetic.kv");

pub fn synthetic_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::parse_str(SYNTHETIC_CONFIG).expect("bundled config parses");
    cfg.train.seed = seed;
    cfg.augment.seed = seed;
    cfg
}

pub fn synthetic_data(spec: &SyntheticSpec, cfg: &PipelineConfig) -> Result<(PreparedData, Vec<GroundTruth>)> {
    let c = synth_generate(spec)?;
    let data = PreparedData::prepare(c.transcripts, c.embeddings, c.sources, &c.topics, cfg)?;
    Ok((data, c.ground_truth))
}

/// Test accuracy of the single-round ablation and of the full run, plus the
/// full run's localization rate.
pub struct GainRun {
    pub single: f64,
    pub full: f64,
    pub localization: Option<f64>,
}

pub fn gain_run(seed: u64) -> Result<GainRun> {
    let cfg = synthetic_config(seed);
    let spec = SyntheticSpec { seed, d: cfg.encoder.d, ..SyntheticSpec::default() };
    let (data, truth) = synthetic_data(&spec, &cfg)?;
    let one = PipelineConfig { train: TrainConfig { rounds: 1, ..cfg.train.clone() }, ..cfg.clone() };
    let single = run_pipeline(&data, &one, None, false)?;
    let full = run_pipeline(&data, &cfg, None, false)?;
    Ok(GainRun {
        single: single.eval.accuracy,
        full: full.eval.accuracy,
        localization: localization_rate(&full.explanations, &truth),
    })
}

/// A 27-parameter logistic model trained by full-batch gradient descent with
/// a checkpoint after every step.
pub struct LogisticSetup {
    pub model: SoftmaxRegression,
    pub train: Vec<(Vec<f64>, usize)>,
    pub trace: Vec<ParamStore>,
    pub lr: f64,
}

pub fn logistic_setup(seed: u64) -> LogisticSetup {
    let model = SoftmaxRegression { classes: 3, dim: 8 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..3).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let train: Vec<(Vec<f64>, usize)> = (0..60)
        .map(|i| {
            let y = i % 3;
            (centers[y].iter().map(|c| c + rng.gen_range(-0.8..0.8)).collect(), y)
        })
        .collect();
    let lr = 0.5;
    let names = model.tracked(&model.zeros());
    let mut params = model.zeros();
    let mut trace = Vec::new();
    for _ in 0..25 {
        let mut grad = vec![0.0; model.num_params()];
        for (x, y) in &train {
            let (_, g) = model.loss_grad(&params, x, *y).expect("valid shapes");
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b / train.len() as f64);
        }
        let theta: Vec<f64> = params.flatten(&names).unwrap().iter().zip(&grad).map(|(t, g)| t - lr * g).collect();
        params.assign(&names, &theta).unwrap();
        trace.push(params.clone());
    }
    LogisticSetup { model, train, trace, lr }
}

/// Spearman correlation between TracIn+ and the retraining oracle over 20
/// perturbations of one input: from each checkpoint, one step on the
/// perturbed instance versus no step, measuring the drop in pc.
pub fn influence_correlation(seed: u64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let s = logistic_setup(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let e: Vec<f64> = s.train[0].0.iter().map(|v| v + 0.3).collect();
    let y = argmax(&s.model.log_probs(s.trace.last().unwrap(), &e)?);
    let names = s.model.tracked(&s.trace[0]);
    let ckpts: Vec<&ParamStore> = s.trace.iter().collect();
    let mut scores = Vec::new();
    let mut oracle = Vec::new();
    for _ in 0..20 {
        let ep: Vec<f64> = e.iter().map(|v| v + rng.gen_range(-1.5..1.5)).collect();
        scores.push(tracin_plus(&s.model, ckpts.clone(), &e, &ep, y)?);
        let mut delta = 0.0;
        for p in &s.trace {
            let before = pc_at(&s.model, p, &e, &ep, y)?;
            let (_, g) = s.model.loss_grad(p, &ep, y)?;
            let theta: Vec<f64> = p.flatten(&names)?.iter().zip(&g).map(|(t, g)| t - s.lr * g).collect();
            let mut stepped = p.clone();
            stepped.assign(&names, &theta)?;
            delta += pc_at(&s.model, &stepped, &e, &ep, y)? - before;
        }
        oracle.push(delta);
    }
    Ok((spearman(&scores, &oracle)?, scores, oracle))
}
