use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::topic::tokenize;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Pseudo-random unit vector for one token.
pub fn token_vector(token: &str, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ seed);
    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);
    v
}

/// Deterministic stand-in sentence encoder: the normalized mean of the
/// token vectors. Returns `None` when the sentence has no tokens.
pub fn hash_embed(text: &str, d: usize, seed: u64) -> Option<Vec<f64>> {
    let tokens = tokenize(text);
    if tokens.is_empty() || d == 0 {
        return None;
    }
    let mut acc = vec![0.0; d];
    for t in &tokens {
        for (a, v) in acc.iter_mut().zip(token_vector(t, d, seed)) {
            *a += v;
        }
    }
    normalize(&mut acc);
    Some(acc)
}

/// [`hash_embed`] with the zero vector for empty sentences, plus a flag
/// telling whether the sentence had tokens.
pub fn hash_embed_or_zero(text: &str, d: usize, seed: u64) -> (Vec<f64>, bool) {
    match hash_embed(text, d, seed) {
        Some(v) => (v, true),
        None => (vec![0.0; d], false),
    }
}
