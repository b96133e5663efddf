//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use mtca_core::counterfactual::{
    exact_influence, tracin_from_grads, tracin_plus, EncoderModel, GradientSubset, LossModel,
};
use mtca_core::data::SyntheticSpec;
use mtca_core::encoder::attention::{dense_attention, probsparse_attention, sparsity_score};
use mtca_core::encoder::{forward_with, param_leaves, EncodedTranscript, Encoder, EncoderConfig, Mode};
use mtca_core::eval::{random_baseline, ticker_following_baseline};
use mtca_core::pipeline::run_pipeline;
use mtca_core::seed::stream;
use mtca_core::training::{cross_entropy, kl_regularized_loss, logits_cross_entropy};
use mtca_core::{Tape, Tensor};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_RTOL: f64 = 1e-4;
const GRAD_ATOL: f64 = 1e-9;
const ATTENTION_TOL: f64 = 1e-10;
const SPEARMAN_MIN: f64 = 0.6;
const INFLUENCE_TOL: f64 = 1e-6;
const LN3_TOL: f64 = 1e-12;
const GAIN_MIN: f64 = 0.02;
const LOCALIZATION_MIN: f64 = 0.8;
const RB_TOL: f64 = 0.01;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(start: Instant, limit: Duration, detail: String) -> Outcome {
    let t = start.elapsed();
    if t > limit {
        return Err(format!("{detail}; took {:.1}s, limit {}s", t.as_secs_f64(), limit.as_secs()));
    }
    Ok(format!("{detail}; {:.1}s", t.as_secs_f64()))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cfg = EncoderConfig { d: 16, max_len: 6, heads: 2, n_e: 3, num_classes: 3, dropout: 0.0, stacked_layers: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let x = EncodedTranscript::from_sentences(&rows, &cfg).map_err(|e| e.to_string())?;
    let enc = Encoder::new(cfg.clone(), 9).map_err(|e| e.to_string())?;
    let model = EncoderModel::new(cfg, GradientSubset::All);
    let names = model.tracked(enc.params());
    let theta = enc.params().flatten(&names).map_err(|e| e.to_string())?;
    let (_, analytic) = model.loss_grad(enc.params(), &x, 1).map_err(|e| e.to_string())?;
    let mut work = enc.params().clone();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for j in 0..theta.len() {
        let mut t = theta.clone();
        t[j] += h;
        work.assign(&names, &t).unwrap();
        let up = model.loss_grad(&work, &x, 1).unwrap().0;
        t[j] -= 2.0 * h;
        work.assign(&names, &t).unwrap();
        let down = model.loss_grad(&work, &x, 1).unwrap().0;
        let fd = (up - down) / (2.0 * h);
        let err = (fd - analytic[j]).abs() / (GRAD_RTOL * fd.abs().max(analytic[j].abs()) + GRAD_ATOL);
        worst = worst.max(err);
    }
    let detail = format!("{} parameters, worst error {:.3} of tolerance", theta.len(), worst);
    if worst > 1.0 {
        return Err(detail);
    }
    within(start, Duration::from_secs(60), detail)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn attention_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f64;
    let mut selection_ok = 0;
    for _ in 0..100 {
        let l = rng.gen_range(1..=32);
        let dh = rng.gen_range(1..=8);
        let valid = rng.gen_range(1..=l);
        let mask: Vec<bool> = (0..l).map(|i| i < valid).collect();
        let (q, k, v) = (random_matrix(&mut rng, l, dh), random_matrix(&mut rng, l, dh), random_matrix(&mut rng, l, dh));
        let mut tape = Tape::new();
        let (qv, kv, vv) = (tape.constant(q.clone()).unwrap(), tape.constant(k.clone()).unwrap(), tape.constant(v.clone()).unwrap());
        let (out, _) = probsparse_attention(&mut tape, qv, kv, vv, valid, &mask).map_err(|e| e.to_string())?;
        let dense = dense_attention(&q, &k, &v, &mask).map_err(|e| e.to_string())?;
        for (a, b) in tape.value(out).data().iter().zip(dense.data()) {
            worst = worst.max((a - b).abs());
        }

        let n_e = rng.gen_range(1..=valid);
        let (_, selected) = probsparse_attention(&mut tape, qv, kv, vv, n_e, &mask).map_err(|e| e.to_string())?;
        let keys: Vec<Vec<f64>> = (0..valid).map(|j| k.row(j).to_vec()).collect();
        let scores: Vec<f64> = (0..valid).map(|i| sparsity_score(q.row(i), &keys, (dh as f64).sqrt()).unwrap()).collect();
        let mut order: Vec<usize> = (0..valid).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let brute: Vec<bool> = (0..l).map(|i| order[..n_e].contains(&i)).collect();
        selection_ok += usize::from(brute == selected);
    }
    check(
        worst <= ATTENTION_TOL && selection_ok == 100,
        format!("max deviation {worst:.2e}, selection agreed on {selection_ok}/100"),
    )
}

fn tracin_identities() -> Outcome {
    let cfg = EncoderConfig { d: 8, max_len: 6, heads: 2, n_e: 2, num_classes: 3, dropout: 0.0, stacked_layers: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let x = EncodedTranscript::from_sentences(&rows, &cfg).map_err(|e| e.to_string())?;
    let (a, b) = (Encoder::new(cfg.clone(), 1).unwrap(), Encoder::new(cfg.clone(), 2).unwrap());
    let mut zero = true;
    for subset in [GradientSubset::HeadAndProjection, GradientSubset::All] {
        let m = EncoderModel::new(cfg.clone(), subset);
        for y in 0..3 {
            zero &= tracin_plus(&m, vec![a.params(), b.params()], &x, &x, y).map_err(|e| e.to_string())? == 0.0;
        }
    }
    let hand = tracin_from_grads(&[(vec![3.0, 0.0], vec![1.0, 0.0])]).map_err(|e| e.to_string())?;
    check(zero && hand == 2.0, format!("self score exactly zero: {zero}; hand example {hand}"))
}

fn influence_oracle() -> Outcome {
    let start = Instant::now();
    let (rho, _, _) = common::influence_correlation(3).map_err(|e| e.to_string())?;

    let s = common::logistic_setup(3);
    let params = s.trace.last().unwrap();
    let train: Vec<(&[f64], usize)> = s.train.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
    let e: Vec<f64> = s.train[1].0.clone();
    let ep: Vec<f64> = s.train[2].0.clone();
    let lambda = 1e-3;
    let got = exact_influence(&s.model, params, &e[..], &ep[..], 0, &train, lambda).map_err(|e| e.to_string())?;
    let n = s.model.num_params();
    let idx = |c: usize, j: usize| if j < 8 { c * 8 + j } else { 24 + c };
    let mut h = DMatrix::<f64>::zeros(n, n);
    for (x, _) in &train {
        let p: Vec<f64> = s.model.log_probs(params, x).unwrap().iter().map(|v| v.exp()).collect();
        let z: Vec<f64> = x.iter().copied().chain([1.0]).collect();
        for c in 0..3 {
            for c2 in 0..3 {
                let a = if c == c2 { p[c] } else { 0.0 } - p[c] * p[c2];
                for j in 0..9 {
                    for j2 in 0..9 {
                        h[(idx(c, j), idx(c2, j2))] += a * z[j] * z[j2] / train.len() as f64;
                    }
                }
            }
        }
    }
    h += DMatrix::identity(n, n) * lambda;
    let g = s.model.loss_grad(params, &e, 0).unwrap().1;
    let gp = s.model.loss_grad(params, &ep, 0).unwrap().1;
    let rhs = DVector::from_iterator(n, g.iter().zip(&gp).map(|(a, b)| a - b));
    let want = h.lu().solve(&rhs).ok_or("reference solve failed")?;
    let scale = want.amax().max(1.0);
    let dev = got.iter().zip(want.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
    let detail = format!("{n} parameters, Spearman {rho:.4}, exact influence relative deviation {dev:.2e}");
    if rho < SPEARMAN_MIN || dev > INFLUENCE_TOL {
        return Err(detail);
    }
    within(start, Duration::from_secs(300), detail)
}

fn kl_regularization() -> Outcome {
    let cfg = EncoderConfig { d: 8, max_len: 6, heads: 2, n_e: 2, num_classes: 3, dropout: 0.0, stacked_layers: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let x = EncodedTranscript::from_sentences(&rows, &cfg).map_err(|e| e.to_string())?;
    let enc = Encoder::new(cfg.clone(), 3).unwrap();
    let target = [0.0, 1.0, 0.0];

    let mut tape = Tape::new();
    let pv = param_leaves(&mut tape, enc.params(), true).unwrap();
    let terms = kl_regularized_loss(&mut tape, &cfg, &pv, &x, &target, 0.3, false, &mut stream(1, &[])).map_err(|e| e.to_string())?;
    let kl_zero = terms.kl == 0.0;

    let dropped = EncoderConfig { dropout: 0.3, ..cfg };
    let mut tape = Tape::new();
    let pv = param_leaves(&mut tape, enc.params(), true).unwrap();
    let reg = kl_regularized_loss(&mut tape, &dropped, &pv, &x, &target, 0.0, false, &mut stream(2, &[])).unwrap();
    let reg = tape.value(reg.total).data()[0];
    let mut tape = Tape::new();
    let pv = param_leaves(&mut tape, enc.params(), true).unwrap();
    let f = forward_with(&mut tape, &dropped, pv, &x, Mode::Train(&mut stream(2, &[]))).unwrap();
    let ce = logits_cross_entropy(&mut tape, f.logits, &target).unwrap();
    let plain = tape.value(ce).data()[0];
    let bitwise = reg.to_bits() == plain.to_bits();

    let u = [1.0 / 3.0; 3];
    let ln3 = cross_entropy(&u, &u).map_err(|e| e.to_string())?;
    let ln3_ok = (ln3 - 1.098_612_288_668_109_691_4).abs() <= LN3_TOL;
    check(kl_zero && bitwise && ln3_ok, format!("KL at dropout 0: {}; alpha 0 bitwise: {bitwise}; uniform CE {ln3:.15}", terms.kl))
}

fn synthetic_runs() -> Result<(Vec<common::GainRun>, Duration), String> {
    let start = Instant::now();
    let runs = (0..3).map(common::gain_run).collect::<mtca_core::Result<Vec<_>>>().map_err(|e| e.to_string())?;
    Ok((runs, start.elapsed()))
}

fn synthetic_gain(runs: &[common::GainRun], took: Duration) -> Outcome {
    let per: Vec<String> = runs.iter().map(|r| format!("{:.4}->{:.4}", r.single, r.full)).collect();
    let gain = runs.iter().map(|r| r.full - r.single).sum::<f64>() / runs.len() as f64;
    let detail = format!("mean gain {:+.4} over seeds [{}]; {:.0}s", gain, per.join(", "), took.as_secs_f64());
    check(gain >= GAIN_MIN && took <= Duration::from_secs(900), detail)
}

fn localization(runs: &[common::GainRun]) -> Outcome {
    let rates: Vec<f64> = runs.iter().filter_map(|r| r.localization).collect();
    if rates.is_empty() {
        return Err("no correctly classified test transcripts".into());
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let per: Vec<String> = rates.iter().map(|r| format!("{r:.3}")).collect();
    check(mean >= LOCALIZATION_MIN, format!("mean top-1 localization {mean:.4} over seeds [{}]", per.join(", ")))
}

fn baselines() -> Outcome {
    let labels: Vec<usize> = (0..30_000).map(|i| i % 3).collect();
    let rb = random_baseline(&labels, 3, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| e.to_string())?;
    let constant: Vec<(&str, usize)> = (0..50).map(|_| ("TK", 1)).collect();
    let alternating: Vec<(&str, usize)> = (0..50).map(|i| ("TK", i % 2)).collect();
    let (c, a) = (ticker_following_baseline(&constant), ticker_following_baseline(&alternating));
    check(
        (rb - 1.0 / 3.0).abs() <= RB_TOL && c == Some(1.0) && a == Some(0.0),
        format!("RB {rb:.4}; TFB constant {c:?}, alternating {a:?}"),
    )
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let mut cfg = common::synthetic_config(7);
    cfg.train.epochs_per_round = 6;
    cfg.train.checkpoint_every = 2;
    let spec = SyntheticSpec { transcripts: 120, seed: 7, d: cfg.encoder.d, ..SyntheticSpec::default() };
    let (data, _) = common::synthetic_data(&spec, &cfg).map_err(|e| e.to_string())?;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_pipeline(&data, &cfg, Some(d.path()), false).map_err(|e| e.to_string())?;
    }
    let (a, b) = (tree(dirs[0].path()), tree(dirs[1].path()));
    let kinds = ["ckpt-", "records.jsonl", "metrics.jsonl"];
    let covered = kinds.iter().all(|k| a.iter().any(|(n, _)| n.contains(k)));
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    check(
        a.len() == b.len() && differing.is_empty() && covered,
        format!("{} artifacts compared, differing {:?}", a.len(), differing),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, outcome: Outcome| match outcome {
        Ok(d) => println!("PASS {name}: {d}"),
        Err(d) => {
            failed += 1;
            println!("FAIL {name}: {d}");
        }
    };
    report("gradient correctness", gradient_correctness());
    report("attention equivalence", attention_equivalence());
    report("tracin identities", tracin_identities());
    report("influence oracle correlation", influence_oracle());
    report("kl regularization", kl_regularization());
    match synthetic_runs() {
        Ok((runs, took)) => {
            report("synthetic end-to-end gain", synthetic_gain(&runs, took));
            report("explanation localization", localization(&runs));
        }
        Err(e) => {
            report("synthetic end-to-end gain", Err(e.clone()));
            report("explanation localization", Err(e));
        }
    }
    report("baselines", baselines());
    report("determinism", determinism());
    if failed > 0 {
        std::process::exit(1);
    }
}
