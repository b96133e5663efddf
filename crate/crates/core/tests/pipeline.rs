mod common;

use mtca_core::counterfactual::Polarity;
use mtca_core::data::SyntheticSpec;
use mtca_core::pipeline::{run_pipeline, SplitName};

#[test]
fn tracin_ranks_track_the_retraining_oracle() {
    for seed in 0..4 {
        let (rho, scores, oracle) = common::influence_correlation(seed).unwrap();
        assert_eq!(scores.len(), 20);
        assert_eq!(oracle.len(), 20);
        assert!(rho >= 0.6, "seed {seed}: rho {rho}");
    }
}

#[test]
fn small_pipeline_respects_record_and_report_invariants() {
    let mut cfg = common::synthetic_config(11);
    cfg.train.epochs_per_round = 8;
    cfg.train.augmented_epochs = 2;
    cfg.train.checkpoint_every = 4;
    let spec = SyntheticSpec { transcripts: 100, seed: 11, d: cfg.encoder.d, ..SyntheticSpec::default() };
    let (data, _) = common::synthetic_data(&spec, &cfg).unwrap();
    let out = run_pipeline(&data, &cfg, None, false).unwrap();

    assert_eq!(out.train.traces.len(), 2);
    assert!(!out.train.records.is_empty());
    let third = 1.0 / 3.0;
    for r in out.train.records.iter().chain(&out.explain_records) {
        let i = data.index_of(&r.transcript_id).unwrap();
        assert_eq!(data.sentence_topics[i][r.sentence_index], r.topic);
        assert_eq!(data.pool.by_id(&r.replacement_id).unwrap().topic, r.topic);
        match r.polarity {
            Polarity::Negative => assert_eq!(r.target, vec![third; 3]),
            Polarity::Positive => {
                assert_eq!(r.target.iter().filter(|&&t| t == 1.0).count(), 1);
                assert_eq!(r.target.iter().sum::<f64>(), 1.0);
            }
        }
    }
    assert!(out.explain_records.iter().all(|r| r.polarity == Polarity::Negative));

    let test = data.split_indices(SplitName::Test);
    assert_eq!(out.explanations.len(), test.len());
    for rep in &out.explanations {
        for e in &rep.entries {
            assert_ne!(e.perturbed_label, rep.predicted_label);
        }
        assert!(rep.entries.windows(2).all(|w| w[0].score <= w[1].score));
    }
    assert_eq!(out.eval.confusion.iter().flatten().sum::<usize>(), test.len());
}
