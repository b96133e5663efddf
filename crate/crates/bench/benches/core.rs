use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use mtca_core::counterfactual::{tracin_plus, EncoderModel, GradientSubset};
use mtca_core::encoder::attention::probsparse_attention;
use mtca_core::encoder::{EncodedTranscript, Encoder, EncoderConfig};
use mtca_core::topic::{tokenize, Bm25Params, InvertedIndex};
use mtca_core::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("probsparse_attention");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for l in [32, 128] {
        let (q, k, v) = (random(&mut rng, l, 16), random(&mut rng, l, 16), random(&mut rng, l, 16));
        let mask = vec![true; l];
        group.bench_with_input(BenchmarkId::from_parameter(l), &l, |b, _| {
            b.iter(|| {
                let mut tape = Tape::new();
                let (qv, kv, vv) = (tape.constant(q.clone()).unwrap(), tape.constant(k.clone()).unwrap(), tape.constant(v.clone()).unwrap());
                black_box(probsparse_attention(&mut tape, qv, kv, vv, 5, &mask).unwrap());
            })
        });
    }
    group.finish();
}

fn encoder_forward(c: &mut Criterion) {
    let cfg = EncoderConfig { d: 32, max_len: 20, heads: 4, n_e: 10, num_classes: 3, dropout: 0.0, stacked_layers: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let x = EncodedTranscript::from_sentences(&rows, &cfg).unwrap();
    let enc = Encoder::new(cfg, 3).unwrap();
    c.bench_function("encoder_logits", |b| b.iter(|| black_box(enc.logits(&x).unwrap())));
}

fn tracin(c: &mut Criterion) {
    let cfg = EncoderConfig { d: 32, max_len: 20, heads: 4, n_e: 10, num_classes: 3, dropout: 0.0, stacked_layers: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let x = EncodedTranscript::from_sentences(&rows, &cfg).unwrap();
    let swapped: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let xp = x.with_sentence(4, &swapped).unwrap();
    let ckpts: Vec<Encoder> = (0..4).map(|s| Encoder::new(cfg.clone(), s).unwrap()).collect();
    let model = EncoderModel::new(cfg, GradientSubset::HeadAndProjection);
    c.bench_function("tracin_plus_4_checkpoints", |b| {
        b.iter(|| black_box(tracin_plus(&model, ckpts.iter().map(Encoder::params).collect(), &x, &xp, 1).unwrap()))
    });
}

fn bm25(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let vocab: Vec<String> = (0..2000).map(|i| format!("w{i}")).collect();
    let docs: Vec<String> =
        (0..5000).map(|_| (0..15).map(|_| vocab[rng.gen_range(0..vocab.len())].as_str()).collect::<Vec<_>>().join(" ")).collect();
    let index = InvertedIndex::build(&docs);
    let query = tokenize("w1 w2 w3 w4 w5");
    c.bench_function("bm25_build_5000", |b| b.iter(|| black_box(InvertedIndex::build(&docs))));
    c.bench_function("bm25_rank_5000", |b| b.iter(|| black_box(index.rank(&query, Bm25Params::default()))));
}

criterion_group!(benches, attention, encoder_forward, tracin, bm25);
criterion_main!(benches);
