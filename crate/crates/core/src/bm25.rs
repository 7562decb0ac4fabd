//! Okapi BM25 over pre-tokenized documents, the lexical baseline.
//!
//! `idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))`, which is never negative,
//! and query terms are deduplicated (no query-side term frequency).

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{select_top_k, Hit, RankedList, ScoredDoc};

/// Defaults follow the common Lucene/pyserini setting.
pub const DEFAULT_K1: f64 = 0.9;
pub const DEFAULT_B: f64 = 0.4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenDoc {
    pub id: String,
    pub tokens: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct Bm25Index {
    k1: f64,
    b: f64,
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    avg_len: f64,
    /// term -> (ordinal, tf), ordinals ascending
    postings: HashMap<u32, Vec<(u32, u32)>>,
}

pub fn build_bm25<I>(corpus: I, k1: f64, b: f64) -> Result<Bm25Index>
where
    I: IntoIterator<Item = TokenDoc>,
{
    if !(k1.is_finite() && k1 >= 0.0) || !(0.0..=1.0).contains(&b) {
        return Err(Error::invalid(format!("invalid BM25 parameters k1={k1}, b={b}")));
    }
    let mut seen = HashSet::new();
    let mut doc_ids = Vec::new();
    let mut doc_len = Vec::new();
    let mut postings: HashMap<u32, Vec<(u32, u32)>> = HashMap::new();
    let mut tf: HashMap<u32, u32> = HashMap::new();
    for doc in corpus {
        if !seen.insert(doc.id.clone()) {
            return Err(Error::DuplicateId(doc.id));
        }
        let ord = doc_ids.len() as u32;
        tf.clear();
        for &t in &doc.tokens {
            *tf.entry(t).or_default() += 1;
        }
        let mut terms: Vec<(u32, u32)> = tf.iter().map(|(&t, &c)| (t, c)).collect();
        terms.sort_unstable();
        for (t, c) in terms {
            postings.entry(t).or_default().push((ord, c));
        }
        doc_len.push(doc.tokens.len() as u32);
        doc_ids.push(doc.id);
    }
    let avg_len = if doc_len.is_empty() {
        0.0
    } else {
        doc_len.iter().map(|&l| l as f64).sum::<f64>() / doc_len.len() as f64
    };
    Ok(Bm25Index {
        k1,
        b,
        doc_ids,
        doc_len,
        avg_len,
        postings,
    })
}

impl Bm25Index {
    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn df(&self, term: u32) -> usize {
        self.postings.get(&term).map_or(0, Vec::len)
    }

    pub fn doc_len(&self, ord: u32) -> u32 {
        self.doc_len[ord as usize]
    }

    pub fn params(&self) -> (f64, f64) {
        (self.k1, self.b)
    }

    pub fn idf(&self, term: u32) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Scores every document containing a query term and returns the top `k`.
    pub fn search(&self, query_id: &str, query_tokens: &[u32], k: usize) -> Result<RankedList> {
        if k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        let start = Instant::now();
        let mut terms = query_tokens.to_vec();
        terms.sort_unstable();
        terms.dedup();
        let mut acc: HashMap<u32, f64> = HashMap::new();
        let mut dense: Vec<f64> = Vec::new();
        let use_dense = terms.iter().map(|&t| self.df(t)).sum::<usize>() * 4 > self.doc_count();
        if use_dense {
            dense = vec![f64::NAN; self.doc_count()];
        }
        for &t in &terms {
            let Some(list) = self.postings.get(&t) else {
                continue;
            };
            let idf = self.idf(t);
            for &(d, tf) in list {
                let s = self.term_score(idf, tf, self.doc_len[d as usize]);
                if use_dense {
                    let slot = &mut dense[d as usize];
                    *slot = if slot.is_nan() { s } else { *slot + s };
                } else {
                    *acc.entry(d).or_insert(0.0) += s;
                }
            }
        }
        let cands: Vec<ScoredDoc> = if use_dense {
            dense
                .iter()
                .enumerate()
                .filter(|(_, s)| !s.is_nan())
                .map(|(d, &s)| ScoredDoc {
                    ord: d as u32,
                    score: s as f32,
                })
                .collect()
        } else {
            acc.into_iter()
                .map(|(d, s)| ScoredDoc {
                    ord: d,
                    score: s as f32,
                })
                .collect()
        };
        let top = select_top_k(&self.doc_ids, cands, k);
        Ok(RankedList {
            query_id: query_id.to_string(),
            hits: top
                .iter()
                .map(|s| Hit {
                    doc_id: self.doc_ids[s.ord as usize].clone(),
                    score: s.score,
                })
                .collect(),
            latency_ns: start.elapsed().as_nanos() as u64,
        })
    }

    fn term_score(&self, idf: f64, tf: u32, len: u32) -> f64 {
        let tf = tf as f64;
        let norm = if self.avg_len > 0.0 {
            1.0 - self.b + self.b * len as f64 / self.avg_len
        } else {
            1.0
        };
        idf * tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
    }
}

pub fn bm25_search(idx: &Bm25Index, query_tokens: &[u32], k: usize) -> Result<RankedList> {
    idx.search("", query_tokens, k)
}

/// 32-bit FNV-1a, used to map whitespace tokens to ids.
pub fn fnv1a32(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in bytes {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

pub fn hash_tokens(text: &str) -> Vec<u32> {
    text.split_whitespace().map(|w| fnv1a32(w.as_bytes())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: &str, tokens: &[u32]) -> TokenDoc {
        TokenDoc {
            id: id.into(),
            tokens: tokens.to_vec(),
        }
    }

    /// Closed form evaluated independently of the index.
    fn oracle(docs: &[TokenDoc], query: &[u32], k1: f64, b: f64) -> Vec<(String, f64)> {
        let n = docs.len() as f64;
        let avg = docs.iter().map(|d| d.tokens.len() as f64).sum::<f64>() / n;
        let mut q = query.to_vec();
        q.sort_unstable();
        q.dedup();
        let mut out = Vec::new();
        for d in docs {
            let mut s = 0.0;
            let mut hit = false;
            for &t in &q {
                let tf = d.tokens.iter().filter(|&&x| x == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                hit = true;
                let df = docs.iter().filter(|d| d.tokens.contains(&t)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let len = d.tokens.len() as f64;
                s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
            }
            if hit {
                out.push((d.id.clone(), s));
            }
        }
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    #[test]
    fn empty_corpus() {
        let idx = build_bm25(Vec::new(), DEFAULT_K1, DEFAULT_B).unwrap();
        assert_eq!(idx.doc_count(), 0);
        assert!(idx.search("q", &[1], 10).unwrap().hits.is_empty());
    }

    #[test]
    fn counts_df_and_avg_len() {
        let idx = build_bm25(vec![doc("a", &[1, 1, 2]), doc("b", &[2])], DEFAULT_K1, DEFAULT_B).unwrap();
        assert_eq!((idx.df(1), idx.df(2), idx.df(3)), (1, 2, 0));
        assert_eq!(idx.avg_len(), 2.0);
        let one = build_bm25(vec![doc("a", &[5, 6, 7])], DEFAULT_K1, DEFAULT_B).unwrap();
        assert_eq!(one.avg_len(), 3.0);
    }

    #[test]
    fn rejects_duplicate_ids() {
        let r = build_bm25(vec![doc("a", &[1]), doc("a", &[2])], DEFAULT_K1, DEFAULT_B);
        assert!(matches!(r, Err(Error::DuplicateId(_))));
    }

    #[test]
    fn hand_evaluated_single_term() {
        // N=3, df(7)=2, avg_len=3; idf = ln(1 + 1.5/2.5) = ln 1.6
        let docs = vec![doc("a", &[7, 7, 1, 2]), doc("b", &[7, 3]), doc("c", &[4, 5, 6])];
        let idx = build_bm25(docs, 0.9, 0.4).unwrap();
        let r = idx.search("q", &[7], 10).unwrap();
        let idf = 1.6f64.ln();
        // a: tf=2, len=4 ; b: tf=1, len=2
        let a = idf * 2.0 * (0.9 + 1.0) / (2.0 + 0.9 * (1.0 - 0.4 + 0.4 * 4.0 / 3.0));
        let b = idf * 1.0 * (0.9 + 1.0) / (1.0 + 0.9 * (1.0 - 0.4 + 0.4 * 2.0 / 3.0));
        assert_eq!(r.hits.len(), 2);
        assert_eq!(r.hits[0].doc_id, "a");
        assert_eq!(r.hits[0].score, a as f32);
        assert_eq!(r.hits[1].score, b as f32);
    }

    #[test]
    fn unknown_and_duplicate_query_terms() {
        let idx = build_bm25(vec![doc("a", &[1, 2]), doc("b", &[2, 3])], DEFAULT_K1, DEFAULT_B).unwrap();
        assert!(idx.search("q", &[99], 5).unwrap().hits.is_empty());
        let once = idx.search("q", &[1, 2], 5).unwrap();
        let twice = idx.search("q", &[2, 1, 2, 1], 5).unwrap();
        assert!(once.same_results(&twice));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a32(b""), 0x811c9dc5);
        assert_eq!(fnv1a32(b"a"), 0xe40c292c);
        assert_eq!(fnv1a32(b"foobar"), 0xbf9cf968);
        assert_eq!(hash_tokens("  a foobar "), vec![0xe40c292c, 0xbf9cf968]);
    }

    fn arb_docs() -> impl Strategy<Value = Vec<Vec<u32>>> {
        prop::collection::vec(prop::collection::vec(0u32..12, 0..15), 1..12)
    }

    proptest! {
        #[test]
        fn matches_closed_form(docs in arb_docs(), query in prop::collection::vec(0u32..14, 1..6)) {
            let docs: Vec<TokenDoc> = docs.iter().enumerate().map(|(i, t)| doc(&format!("d{i:02}"), t)).collect();
            let idx = build_bm25(docs.clone(), DEFAULT_K1, DEFAULT_B).unwrap();
            for t in 0..14 {
                prop_assert!(idx.idf(t) >= 0.0);
            }
            let got = idx.search("q", &query, 100).unwrap();
            let want = oracle(&docs, &query, DEFAULT_K1, DEFAULT_B);
            prop_assert_eq!(got.hits.len(), want.len());
            for (h, (id, s)) in got.hits.iter().zip(&want) {
                prop_assert!((h.score as f64 - s).abs() <= 1e-5 * s.abs().max(1.0));
                // ties in f32 may reorder equal f64 scores only when they round together
                if h.doc_id != *id {
                    prop_assert_eq!(h.score, *s as f32);
                }
            }
        }

        #[test]
        fn irrelevant_doc_only_moves_scores_through_statistics(
            docs in arb_docs(), query in prop::collection::vec(0u32..12, 1..5)
        ) {
            let mut docs: Vec<TokenDoc> = docs.iter().enumerate().map(|(i, t)| doc(&format!("d{i:02}"), t)).collect();
            docs.push(doc("zz", &[100, 101, 102]));
            let idx = build_bm25(docs.clone(), DEFAULT_K1, DEFAULT_B).unwrap();
            let got = idx.search("q", &query, 100).unwrap();
            let want = oracle(&docs, &query, DEFAULT_K1, DEFAULT_B);
            prop_assert!(got.hits.iter().all(|h| h.doc_id != "zz"));
            prop_assert_eq!(got.hits.len(), want.len());
        }
    }
}
