use std::collections::HashMap;

use super::tokenize;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Postings over a corpus of short documents, addressed by position.
#[derive(Clone, Debug, Default)]
pub struct InvertedIndex {
    postings: HashMap<String, Vec<(usize, u32)>>,
    lengths: Vec<usize>,
    avg_len: f64,
}

impl InvertedIndex {
    pub fn build<S: AsRef<str>>(docs: &[S]) -> Self {
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut lengths = Vec::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            let tokens = tokenize(doc.as_ref());
            lengths.push(tokens.len());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, c) in tf {
                postings.entry(t).or_default().push((i, c));
            }
        }
        for p in postings.values_mut() {
            p.sort_unstable();
        }
        let total: usize = lengths.iter().sum();
        let avg_len = if lengths.is_empty() { 0.0 } else { total as f64 / lengths.len() as f64 };
        Self { postings, lengths, avg_len }
    }

    pub fn num_docs(&self) -> usize {
        self.lengths.len()
    }

    pub fn doc_len(&self, doc: usize) -> usize {
        self.lengths[doc]
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// `ln(1 + (N − n + 0.5)/(n + 0.5))`, which stays positive for common terms.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_freq(term) as f64;
        (1.0 + (self.num_docs() as f64 - n + 0.5) / (n + 0.5)).ln()
    }

    /// Documents with a positive score for the query, best first, ties by
    /// position. Unknown terms contribute nothing.
    pub fn rank(&self, query: &[String], params: Bm25Params) -> Vec<(usize, f64)> {
        let mut scores: HashMap<usize, f64> = HashMap::new();
        let mut terms: Vec<&String> = query.iter().collect();
        terms.sort();
        terms.dedup();
        for t in terms {
            let Some(post) = self.postings.get(t.as_str()) else { continue };
            let idf = self.idf(t);
            for &(doc, tf) in post {
                *scores.entry(doc).or_default() += term_score(idf, f64::from(tf), self.lengths[doc] as f64, self.avg_len, params);
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().filter(|s| s.1 > 0.0).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }
}

/// One term's BM25 contribution.
pub fn term_score(idf: f64, tf: f64, len: f64, avg_len: f64, p: Bm25Params) -> f64 {
    idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * len / avg_len))
}
