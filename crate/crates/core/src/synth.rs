//! Deterministic synthetic corpora for desk-scale retrieval experiments.
//!
//! Term ids are Zipf-distributed by rank (term `t` has rank `t + 1`), so low
//! ids behave like frequent tokens. Weights shrink for frequent terms, as in
//! learned sparse encoders. Every query gets `relevant_per_query` relevant
//! documents that share the query's `ceil(overlap_strength * mean_query_nnz)`
//! heaviest terms at boosted weights.
//!
//! Randomness comes from xoshiro256++ seeded through SplitMix64
//! (`Xoshiro256PlusPlus::seed_from_u64`). Token corpora use a second stream
//! seeded with `seed ^ TOKEN_STREAM`, so vectors do not depend on whether
//! tokens are generated.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::bm25::TokenDoc;
use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::sparse::{SparseVector, TermId};

const TOKEN_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Boosted weights of shared query terms in relevant documents lie in
/// `[BOOST_MIN, BOOST_MIN + BOOST_SPAN)`, above every background weight.
const BOOST_MIN: f32 = 2.0;
const BOOST_SPAN: f32 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub vocab_size: u32,
    pub doc_count: usize,
    pub mean_doc_nnz: usize,
    pub query_count: usize,
    pub mean_query_nnz: usize,
    pub relevant_per_query: usize,
    pub overlap_strength: f64,
    pub zipf_exponent: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            vocab_size: 100_000,
            doc_count: 10_000,
            mean_doc_nnz: 400,
            query_count: 100,
            mean_query_nnz: 100,
            relevant_per_query: 1,
            overlap_strength: 0.3,
            zipf_exponent: 1.1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size as usize),
            ("doc_count", self.doc_count),
            ("mean_doc_nnz", self.mean_doc_nnz),
            ("query_count", self.query_count),
            ("mean_query_nnz", self.mean_query_nnz),
            ("relevant_per_query", self.relevant_per_query),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be >= 1")));
        }
        if !(self.overlap_strength > 0.0 && self.overlap_strength <= 1.0) {
            return Err(Error::invalid(format!(
                "overlap_strength must be in (0, 1], got {}",
                self.overlap_strength
            )));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent > 0.0) {
            return Err(Error::invalid("zipf_exponent must be positive"));
        }
        if self.relevant_per_query > self.doc_count {
            return Err(Error::invalid(format!(
                "relevant_per_query ({}) exceeds doc_count ({})",
                self.relevant_per_query, self.doc_count
            )));
        }
        Ok(())
    }

    /// Number of query terms planted in each relevant document.
    pub fn shared_terms(&self) -> usize {
        (self.overlap_strength * self.mean_query_nnz as f64).ceil() as usize
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub vocab_size: u32,
    pub docs: Vec<(String, SparseVector)>,
    pub queries: Vec<(String, SparseVector)>,
    pub qrels: Qrels,
    pub token_docs: Vec<TokenDoc>,
    pub query_tokens: Vec<TokenDoc>,
}

/// Sparse half of a synthetic corpus.
#[derive(Clone, Debug)]
pub struct SynthVectors {
    pub vocab_size: u32,
    pub docs: Vec<(String, SparseVector)>,
    pub queries: Vec<(String, SparseVector)>,
    pub qrels: Qrels,
}

pub fn doc_id(ord: usize, count: usize) -> String {
    format!("d{ord:0w$}", w = digits(count))
}

pub fn query_id(ord: usize, count: usize) -> String {
    format!("q{ord:0w$}", w = digits(count))
}

fn digits(count: usize) -> usize {
    count.saturating_sub(1).max(1).to_string().len()
}

/// Inverse-CDF sampler over ranks `1..=n` with `P(r) ∝ r^-s`.
struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    fn new(n: u32, s: f64) -> Self {
        let mut acc = 0.0;
        let cdf = (1..=n)
            .map(|r| {
                acc += (r as f64).powf(-s);
                acc
            })
            .collect();
        Self { cdf }
    }

    /// Zero-based rank.
    fn sample(&self, rng: &mut Xoshiro256PlusPlus) -> u32 {
        let total = *self.cdf.last().unwrap();
        let u = rng.random::<f64>() * total;
        (self.cdf.partition_point(|&c| c <= u) as u32).min(self.cdf.len() as u32 - 1)
    }
}

struct TermDrawer {
    zipf: Zipf,
    stamp: Vec<u32>,
    generation: u32,
    vocab_size: u32,
    log_vocab: f32,
}

impl TermDrawer {
    fn new(vocab_size: u32, exponent: f64) -> Self {
        Self {
            zipf: Zipf::new(vocab_size, exponent),
            stamp: vec![0; vocab_size as usize],
            generation: 0,
            vocab_size,
            log_vocab: ((vocab_size as f32) + 1.0).ln(),
        }
    }

    fn nnz_around(&self, mean: usize, rng: &mut Xoshiro256PlusPlus) -> usize {
        let n = (mean as f64 * (0.5 + rng.random::<f64>())).round() as usize;
        n.clamp(1, self.vocab_size as usize)
    }

    /// Background weight: frequent (low-id) terms get smaller weights.
    fn weight(&self, term: TermId, rng: &mut Xoshiro256PlusPlus) -> f32 {
        let specificity = 0.4 + 0.6 * ((term as f32) + 2.0).ln() / self.log_vocab;
        (0.2 + 1.8 * rng.random::<f32>()) * specificity.min(1.0)
    }

    /// `n` distinct Zipf-distributed terms with background weights.
    fn draw(&mut self, n: usize, rng: &mut Xoshiro256PlusPlus) -> Vec<(TermId, f32)> {
        self.generation += 1;
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while out.len() < n {
            // the tail is huge, but fall back to uniform if the head saturates
            let t = if attempts < 64 * n {
                self.zipf.sample(rng)
            } else {
                rng.random_range(0..self.vocab_size)
            };
            attempts += 1;
            if self.stamp[t as usize] != self.generation {
                self.stamp[t as usize] = self.generation;
                out.push((t, self.weight(t, rng)));
            }
        }
        out
    }
}

/// Sparse vectors, queries and qrels.
pub fn generate_vectors(spec: &SynthSpec) -> Result<SynthVectors> {
    spec.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let mut drawer = TermDrawer::new(spec.vocab_size, spec.zipf_exponent);
    let vocab = spec.vocab_size;

    let mut queries = Vec::with_capacity(spec.query_count);
    let mut planted: Vec<Vec<(TermId, f32)>> = Vec::with_capacity(spec.query_count);
    for qi in 0..spec.query_count {
        let n = drawer.nnz_around(spec.mean_query_nnz, &mut rng);
        let entries = drawer.draw(n, &mut rng);
        let mut by_weight = entries.clone();
        by_weight.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        by_weight.truncate(spec.shared_terms());
        planted.push(by_weight);
        queries.push((
            query_id(qi, spec.query_count),
            SparseVector::from_unsorted(vocab, entries)?,
        ));
    }

    let mut relevant_to: Vec<Vec<u32>> = vec![Vec::new(); spec.doc_count];
    let mut qrels = Qrels::new();
    for (qi, (qid, _)) in queries.iter().enumerate() {
        let mut chosen: Vec<usize> = Vec::with_capacity(spec.relevant_per_query);
        while chosen.len() < spec.relevant_per_query {
            let d = rng.random_range(0..spec.doc_count);
            if !chosen.contains(&d) {
                chosen.push(d);
            }
        }
        for d in chosen {
            relevant_to[d].push(qi as u32);
            qrels.insert(qid, &doc_id(d, spec.doc_count), 1)?;
        }
    }

    let mut docs = Vec::with_capacity(spec.doc_count);
    for (d, rel) in relevant_to.iter().enumerate() {
        let n = drawer.nnz_around(spec.mean_doc_nnz, &mut rng);
        let mut entries = drawer.draw(n, &mut rng);
        if !rel.is_empty() {
            entries.sort_unstable_by_key(|e| e.0);
            for &qi in rel {
                for &(t, _) in &planted[qi as usize] {
                    let boosted = BOOST_MIN + BOOST_SPAN * rng.random::<f32>();
                    match entries.binary_search_by_key(&t, |e| e.0) {
                        Ok(i) => entries[i].1 = entries[i].1.max(boosted),
                        Err(i) => entries.insert(i, (t, boosted)),
                    }
                }
            }
        }
        docs.push((doc_id(d, spec.doc_count), SparseVector::from_unsorted(vocab, entries)?));
    }

    Ok(SynthVectors {
        vocab_size: vocab,
        docs,
        queries,
        qrels,
    })
}

/// Token sequences consistent with each vector's support: every active term
/// occurs at least once, heavier terms more often, in shuffled order.
pub fn derive_token_docs(vectors: &[(String, SparseVector)], seed: u64, repeat: bool) -> Vec<TokenDoc> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ TOKEN_STREAM);
    vectors
        .iter()
        .map(|(id, v)| {
            let mut tokens = Vec::with_capacity(v.nnz() * 2);
            for (t, w) in v.iter() {
                let extra = if repeat {
                    (w * rng.random::<f32>() * 2.0) as usize
                } else {
                    0
                };
                tokens.extend(std::iter::repeat_n(t, 1 + extra));
            }
            for i in (1..tokens.len()).rev() {
                let j = rng.random_range(0..=i);
                tokens.swap(i, j);
            }
            TokenDoc { id: id.clone(), tokens }
        })
        .collect()
}

/// Vectors, queries, qrels and the matching token corpora.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthCorpus> {
    let v = generate_vectors(spec)?;
    let token_docs = derive_token_docs(&v.docs, spec.seed, true);
    let query_tokens = derive_token_docs(&v.queries, spec.seed.wrapping_add(1), false);
    Ok(SynthCorpus {
        vocab_size: v.vocab_size,
        docs: v.docs,
        queries: v.queries,
        qrels: v.qrels,
        token_docs,
        query_tokens,
    })
}
