//! Exact, approximate and two-step retrieval over an [`InvertedIndex`].
//!
//! Exact search accumulates every posting of every query term. Approximate
//! search keeps only the `query_cut` heaviest query terms, visits them in
//! descending `q_t * max_impact(t)` order and stops scanning a list once
//! `q_t * impact < theta`, where `theta` is the current k-th best
//! accumulated score divided by `heap_factor`. Candidates whose partial score
//! reaches the final `theta` are rescored against the forward store, so every
//! returned score is an exact dot product.

use std::cmp::Ordering;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::InvertedIndex;
use crate::sparse::{dot, prune, PruneConfig, ScatteredQuery, SparseVector, TermId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    Exact,
    Approximate,
    TwoStep,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub k: usize,
    pub query_cut: usize,
    /// Early-termination slack; `f64::INFINITY` scans every list fully.
    pub heap_factor: f64,
    pub mode: SearchMode,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            k: 1000,
            query_cut: 500,
            heap_factor: 2.5,
            mode: SearchMode::Approximate,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if self.query_cut == 0 {
            return Err(Error::invalid("query_cut must be >= 1"));
        }
        if self.heap_factor.is_nan() || self.heap_factor < 1.0 {
            return Err(Error::invalid(format!(
                "heap_factor must be >= 1, got {}",
                self.heap_factor
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStepConfig {
    /// Pruning of the candidate-generation stage; `k_d` must match the
    /// stage-one index.
    pub stage1: PruneConfig,
    pub stage1_k: usize,
    pub stage2_k_q: usize,
    pub heap_factor: f64,
}

impl Default for TwoStepConfig {
    fn default() -> Self {
        Self {
            stage1: PruneConfig { k_q: 10, k_d: 100 },
            stage1_k: 1000,
            stage2_k_q: 500,
            heap_factor: 2.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<Hit>,
    pub latency_ns: u64,
}

impl RankedList {
    /// Equality of ids and score bits, ignoring latency.
    pub fn same_results(&self, other: &RankedList) -> bool {
        self.query_id == other.query_id
            && self.hits.len() == other.hits.len()
            && self
                .hits
                .iter()
                .zip(&other.hits)
                .all(|(a, b)| a.doc_id == b.doc_id && a.score.to_bits() == b.score.to_bits())
    }
}

/// A candidate identified by internal ordinal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredDoc {
    pub ord: u32,
    pub score: f32,
}

fn check_vocab(idx: &InvertedIndex, q: &SparseVector) -> Result<()> {
    if q.vocab_size() != idx.vocab_size() {
        return Err(Error::VocabMismatch {
            left: idx.vocab_size(),
            right: q.vocab_size(),
        });
    }
    Ok(())
}

/// Orders by descending score, then ascending external id.
fn rank_cmp(ids: &[String], a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| ids[a.ord as usize].cmp(&ids[b.ord as usize]))
}

/// Top `k` of `cands` in final ranking order.
pub(crate) fn select_top_k(ids: &[String], mut cands: Vec<ScoredDoc>, k: usize) -> Vec<ScoredDoc> {
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, |a, b| rank_cmp(ids, a, b));
        cands.truncate(k);
    }
    cands.sort_unstable_by(|a, b| rank_cmp(ids, a, b));
    cands
}

const ABSENT: u32 = u32::MAX;

/// Min-heap over the k largest accumulators. Keys only grow, so an update
/// to a member is a sift-down.
struct TopKTracker {
    k: usize,
    heap: Vec<u32>,
    pos: Vec<u32>,
}

impl TopKTracker {
    fn new(doc_count: usize) -> Self {
        Self {
            k: 1,
            heap: Vec::new(),
            pos: vec![ABSENT; doc_count],
        }
    }

    fn reset(&mut self, k: usize) {
        for &d in &self.heap {
            self.pos[d as usize] = ABSENT;
        }
        self.heap.clear();
        self.k = k;
    }

    fn kth(&self, acc: &[f32]) -> Option<f32> {
        (self.heap.len() == self.k).then(|| acc[self.heap[0] as usize])
    }

    fn offer(&mut self, d: u32, acc: &[f32]) {
        let p = self.pos[d as usize];
        if p != ABSENT {
            self.sift_down(p as usize, acc);
        } else if self.heap.len() < self.k {
            self.heap.push(d);
            let i = self.heap.len() - 1;
            self.pos[d as usize] = i as u32;
            self.sift_up(i, acc);
        } else if acc[d as usize] > acc[self.heap[0] as usize] {
            self.pos[self.heap[0] as usize] = ABSENT;
            self.heap[0] = d;
            self.pos[d as usize] = 0;
            self.sift_down(0, acc);
        }
    }

    fn swap(&mut self, i: usize, j: usize) {
        self.heap.swap(i, j);
        self.pos[self.heap[i] as usize] = i as u32;
        self.pos[self.heap[j] as usize] = j as u32;
    }

    fn sift_up(&mut self, mut i: usize, acc: &[f32]) {
        while i > 0 {
            let parent = (i - 1) / 2;
            if acc[self.heap[i] as usize] < acc[self.heap[parent] as usize] {
                self.swap(i, parent);
                i = parent;
            } else {
                break;
            }
        }
    }

    fn sift_down(&mut self, mut i: usize, acc: &[f32]) {
        let n = self.heap.len();
        loop {
            let (l, r) = (2 * i + 1, 2 * i + 2);
            let mut smallest = i;
            if l < n && acc[self.heap[l] as usize] < acc[self.heap[smallest] as usize] {
                smallest = l;
            }
            if r < n && acc[self.heap[r] as usize] < acc[self.heap[smallest] as usize] {
                smallest = r;
            }
            if smallest == i {
                break;
            }
            self.swap(i, smallest);
            i = smallest;
        }
    }
}

/// Per-query scratch bound to one index. The index is shared read-only;
/// each thread should own its own `Searcher`.
pub struct Searcher<'a> {
    idx: &'a InvertedIndex,
    acc: Vec<f32>,
    touched_flag: Vec<bool>,
    touched: Vec<u32>,
    scattered: ScatteredQuery,
    tracker: TopKTracker,
}

impl<'a> Searcher<'a> {
    pub fn new(idx: &'a InvertedIndex) -> Self {
        let n = idx.doc_count();
        Self {
            idx,
            acc: vec![0.0; n],
            touched_flag: vec![false; n],
            touched: Vec::new(),
            scattered: ScatteredQuery::new(idx.vocab_size()),
            tracker: TopKTracker::new(n),
        }
    }

    pub fn index(&self) -> &'a InvertedIndex {
        self.idx
    }

    fn clear(&mut self) {
        for &d in &self.touched {
            self.acc[d as usize] = 0.0;
            self.touched_flag[d as usize] = false;
        }
        self.touched.clear();
    }

    #[inline]
    fn touch(&mut self, d: u32) {
        let flag = &mut self.touched_flag[d as usize];
        if !*flag {
            *flag = true;
            self.touched.push(d);
        }
    }

    /// Exhaustive term-at-a-time scoring. Query terms are processed in
    /// ascending id order so each accumulator sums its products in the same
    /// order as a forward-store dot product.
    pub fn exact_ords(&mut self, q: &SparseVector, k: usize) -> Result<Vec<ScoredDoc>> {
        check_vocab(self.idx, q)?;
        if k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        for (t, qw) in q.iter() {
            let (docs, impacts) = self.idx.postings(t);
            for (&d, &w) in docs.iter().zip(impacts) {
                self.touch(d);
                self.acc[d as usize] += qw * w;
            }
        }
        let cands = self
            .touched
            .iter()
            .map(|&d| ScoredDoc {
                ord: d,
                score: self.acc[d as usize],
            })
            .collect();
        self.clear();
        Ok(select_top_k(self.idx.doc_ids(), cands, k))
    }

    /// Approximate search; see the module docs for the termination rule.
    pub fn approx_ords(&mut self, q: &SparseVector, params: &SearchParams) -> Result<Vec<ScoredDoc>> {
        check_vocab(self.idx, q)?;
        params.validate()?;
        let qp = prune(q, params.query_cut);
        let mut order: Vec<(TermId, f32, f32)> = qp
            .iter()
            .map(|(t, w)| (t, w, w * self.idx.max_impact(t)))
            .filter(|&(_, _, bound)| bound > 0.0)
            .collect();
        order.sort_unstable_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));

        self.tracker.reset(params.k);
        let mut theta = 0.0f64;
        for &(t, qw, _) in &order {
            let (docs, impacts) = self.idx.postings(t);
            for (&d, &w) in docs.iter().zip(impacts) {
                let contrib = qw * w;
                if f64::from(contrib) < theta {
                    break;
                }
                self.touch(d);
                self.acc[d as usize] += contrib;
                self.tracker.offer(d, &self.acc);
                if let Some(kth) = self.tracker.kth(&self.acc) {
                    theta = f64::from(kth) / params.heap_factor;
                }
            }
        }

        self.scattered.set(&qp)?;
        let mut cands = Vec::new();
        for &d in &self.touched {
            if f64::from(self.acc[d as usize]) >= theta {
                cands.push(ScoredDoc {
                    ord: d,
                    score: self.scattered.dot(self.idx.forward(d)),
                });
            }
        }
        self.scattered.clear();
        self.tracker.reset(1);
        self.clear();
        Ok(select_top_k(self.idx.doc_ids(), cands, params.k))
    }

    pub fn to_ranked(&self, query_id: &str, docs: &[ScoredDoc], latency_ns: u64) -> RankedList {
        RankedList {
            query_id: query_id.to_string(),
            hits: docs
                .iter()
                .map(|s| Hit {
                    doc_id: self.idx.doc_id(s.ord).to_string(),
                    score: s.score,
                })
                .collect(),
            latency_ns,
        }
    }

    pub fn search_exact(&mut self, query_id: &str, q: &SparseVector, k: usize) -> Result<RankedList> {
        let start = Instant::now();
        let docs = self.exact_ords(q, k)?;
        let ns = start.elapsed().as_nanos() as u64;
        Ok(self.to_ranked(query_id, &docs, ns))
    }

    pub fn search_approx(&mut self, query_id: &str, q: &SparseVector, params: &SearchParams) -> Result<RankedList> {
        let start = Instant::now();
        let docs = self.approx_ords(q, params)?;
        let ns = start.elapsed().as_nanos() as u64;
        Ok(self.to_ranked(query_id, &docs, ns))
    }

    /// Dispatches on `params.mode`. Two-step search needs a second index and
    /// goes through [`TwoStepSearcher`].
    pub fn search(&mut self, query_id: &str, q: &SparseVector, params: &SearchParams) -> Result<RankedList> {
        match params.mode {
            SearchMode::Exact => {
                params.validate()?;
                self.search_exact(query_id, q, params.k)
            }
            SearchMode::Approximate => self.search_approx(query_id, q, params),
            SearchMode::TwoStep => Err(Error::invalid(
                "two-step search needs a stage-one index; use TwoStepSearcher",
            )),
        }
    }
}

pub fn search_exact(idx: &InvertedIndex, q: &SparseVector, k: usize) -> Result<RankedList> {
    Searcher::new(idx).search_exact("", q, k)
}

pub fn search_approx(idx: &InvertedIndex, q: &SparseVector, params: &SearchParams) -> Result<RankedList> {
    Searcher::new(idx).search_approx("", q, params)
}

/// Candidate generation on an aggressively pruned index followed by exact
/// rescoring of those candidates on the main index.
pub struct TwoStepSearcher<'a> {
    stage1: Searcher<'a>,
    main: &'a InvertedIndex,
    cfg: TwoStepConfig,
    scattered: ScatteredQuery,
}

impl<'a> TwoStepSearcher<'a> {
    pub fn new(stage1: &'a InvertedIndex, main: &'a InvertedIndex, cfg: TwoStepConfig) -> Result<Self> {
        if stage1.vocab_size() != main.vocab_size() {
            return Err(Error::VocabMismatch {
                left: stage1.vocab_size(),
                right: main.vocab_size(),
            });
        }
        if stage1.doc_ids() != main.doc_ids() {
            return Err(Error::invalid(
                "stage-one and main indexes were built over different corpora",
            ));
        }
        if stage1.k_d() as usize != cfg.stage1.k_d {
            return Err(Error::invalid(format!(
                "stage-one index has k_d={} but the config asks for {}",
                stage1.k_d(),
                cfg.stage1.k_d
            )));
        }
        if cfg.stage1_k == 0 || cfg.stage2_k_q == 0 {
            return Err(Error::invalid("stage1_k and stage2_k_q must be >= 1"));
        }
        Ok(Self {
            stage1: Searcher::new(stage1),
            main,
            cfg,
            scattered: ScatteredQuery::new(main.vocab_size()),
        })
    }

    pub fn config(&self) -> &TwoStepConfig {
        &self.cfg
    }

    /// Returns the final top-`k` and the stage-one candidate ordinals.
    pub fn search_ords(&mut self, q: &SparseVector, k: usize) -> Result<(Vec<ScoredDoc>, Vec<u32>)> {
        if k == 0 || k > self.cfg.stage1_k {
            return Err(Error::invalid(format!(
                "k must be in 1..={} (stage1_k), got {k}",
                self.cfg.stage1_k
            )));
        }
        let params = SearchParams {
            k: self.cfg.stage1_k,
            query_cut: self.cfg.stage1.k_q,
            heap_factor: self.cfg.heap_factor,
            mode: SearchMode::Approximate,
        };
        let candidates: Vec<u32> = self
            .stage1
            .approx_ords(q, &params)?
            .into_iter()
            .map(|s| s.ord)
            .collect();

        let q2 = prune(q, self.cfg.stage2_k_q);
        self.scattered.set(&q2)?;
        let rescored = candidates
            .iter()
            .map(|&ord| ScoredDoc {
                ord,
                score: self.scattered.dot(self.main.forward(ord)),
            })
            .collect();
        self.scattered.clear();
        Ok((select_top_k(self.main.doc_ids(), rescored, k), candidates))
    }

    pub fn search(&mut self, query_id: &str, q: &SparseVector, k: usize) -> Result<RankedList> {
        let start = Instant::now();
        let (docs, _) = self.search_ords(q, k)?;
        let ns = start.elapsed().as_nanos() as u64;
        Ok(RankedList {
            query_id: query_id.to_string(),
            hits: docs
                .iter()
                .map(|s| Hit {
                    doc_id: self.main.doc_id(s.ord).to_string(),
                    score: s.score,
                })
                .collect(),
            latency_ns: ns,
        })
    }
}

pub fn search_two_step(
    stage1: &InvertedIndex,
    main: &InvertedIndex,
    q: &SparseVector,
    cfg: &TwoStepConfig,
    k: usize,
) -> Result<RankedList> {
    TwoStepSearcher::new(stage1, main, *cfg)?.search("", q, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TermContribution {
    pub term: TermId,
    pub q_weight: f32,
    pub d_weight: f32,
    pub contribution: f32,
}

/// Per-term products of a query/document pair, largest first. The full
/// (untruncated) list sums to `dot(q, d)`.
pub fn explain_match(q: &SparseVector, d: &SparseVector, top_n: usize) -> Result<Vec<TermContribution>> {
    dot(q, d)?;
    let mut out: Vec<TermContribution> = q
        .iter()
        .filter_map(|(t, qw)| {
            d.weight(t).map(|dw| TermContribution {
                term: t,
                q_weight: qw,
                d_weight: dw,
                contribution: qw * dw,
            })
        })
        .collect();
    out.sort_by(|a, b| b.contribution.total_cmp(&a.contribution).then(a.term.cmp(&b.term)));
    out.truncate(top_n);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_index;

    fn sv(vocab: u32, entries: &[(u32, f32)]) -> SparseVector {
        SparseVector::new(vocab, entries.to_vec()).unwrap()
    }

    fn toy() -> InvertedIndex {
        build_index(
            8,
            100,
            vec![
                ("d0", sv(8, &[(0, 1.0), (1, 0.5)])),
                ("d1", sv(8, &[(1, 2.0), (2, 1.0)])),
                ("d2", sv(8, &[(2, 3.0), (3, 0.25)])),
            ],
        )
        .unwrap()
    }

    fn brute_force(idx: &InvertedIndex, q: &SparseVector, k: usize) -> Vec<(String, f32)> {
        let mut all: Vec<(String, f32)> = (0..idx.doc_count() as u32)
            .filter_map(|d| {
                let s = dot(q, &idx.forward_vector(d)).unwrap();
                let shares = idx.forward(d).terms.iter().any(|&t| q.weight(t).is_some());
                shares.then(|| (idx.doc_id(d).to_string(), s))
            })
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    fn pairs(r: &RankedList) -> Vec<(String, f32)> {
        r.hits.iter().map(|h| (h.doc_id.clone(), h.score)).collect()
    }

    #[test]
    fn empty_query_returns_nothing() {
        let idx = toy();
        assert!(search_exact(&idx, &SparseVector::empty(8), 10).unwrap().hits.is_empty());
        assert!(search_approx(&idx, &SparseVector::empty(8), &SearchParams::default())
            .unwrap()
            .hits
            .is_empty());
    }

    #[test]
    fn exact_matches_brute_force_on_toy() {
        let idx = toy();
        let q = sv(8, &[(0, 1.0), (1, 1.0), (2, 1.0)]);
        let r = search_exact(&idx, &q, 10).unwrap();
        assert_eq!(pairs(&r), brute_force(&idx, &q, 10));
        assert_eq!(r.hits.len(), 3);
        assert_eq!(r.hits[0].doc_id, "d1");
    }

    #[test]
    fn ties_broken_by_external_id() {
        let idx = build_index(
            4,
            10,
            vec![
                ("b", sv(4, &[(0, 1.0)])),
                ("a", sv(4, &[(0, 1.0)])),
                ("c", sv(4, &[(0, 1.0)])),
            ],
        )
        .unwrap();
        let r = search_exact(&idx, &sv(4, &[(0, 1.0)]), 2).unwrap();
        let ids: Vec<_> = r.hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn vocab_mismatch_is_rejected() {
        let idx = toy();
        let q = SparseVector::empty(9);
        assert!(matches!(search_exact(&idx, &q, 1), Err(Error::VocabMismatch { .. })));
        assert!(matches!(
            search_approx(&idx, &q, &SearchParams::default()),
            Err(Error::VocabMismatch { .. })
        ));
    }

    #[test]
    fn invalid_params_are_rejected() {
        let idx = toy();
        let q = sv(8, &[(0, 1.0)]);
        for p in [
            SearchParams {
                k: 0,
                ..Default::default()
            },
            SearchParams {
                query_cut: 0,
                ..Default::default()
            },
            SearchParams {
                heap_factor: 0.5,
                ..Default::default()
            },
            SearchParams {
                heap_factor: f64::NAN,
                ..Default::default()
            },
        ] {
            assert!(search_approx(&idx, &q, &p).is_err());
        }
    }

    #[test]
    fn unbounded_heap_factor_equals_exact() {
        let idx = toy();
        let q = sv(8, &[(0, 0.5), (1, 1.0), (2, 2.0), (3, 1.0)]);
        let p = SearchParams {
            k: 2,
            query_cut: 100,
            heap_factor: f64::INFINITY,
            mode: SearchMode::Approximate,
        };
        let a = search_approx(&idx, &q, &p).unwrap();
        let e = search_exact(&idx, &q, 2).unwrap();
        assert!(a.same_results(&e));
    }

    #[test]
    fn query_cut_one_uses_heaviest_term() {
        let idx = toy();
        let q = sv(8, &[(1, 0.5), (2, 2.0)]);
        let p = SearchParams {
            k: 10,
            query_cut: 1,
            heap_factor: f64::INFINITY,
            mode: SearchMode::Approximate,
        };
        let a = search_approx(&idx, &q, &p).unwrap();
        let e = search_exact(&idx, &prune(&q, 1), 10).unwrap();
        assert!(a.same_results(&e));
        assert_eq!(pairs(&a), vec![("d2".to_string(), 6.0), ("d1".to_string(), 2.0)]);
    }

    #[test]
    fn k_saturates_at_matching_docs() {
        let idx = toy();
        let r = search_exact(&idx, &sv(8, &[(1, 1.0)]), 100).unwrap();
        assert_eq!(r.hits.len(), 2);
    }

    #[test]
    fn tracker_keeps_k_largest() {
        let mut acc = vec![0.0f32; 6];
        let mut t = TopKTracker::new(6);
        t.reset(3);
        for (d, v) in [(0, 1.0), (1, 5.0), (2, 2.0), (3, 0.5), (4, 3.0)] {
            acc[d] = v;
            t.offer(d as u32, &acc);
        }
        assert_eq!(t.kth(&acc), Some(2.0));
        acc[2] += 10.0;
        t.offer(2, &acc);
        assert_eq!(t.kth(&acc), Some(3.0));
        acc[0] += 3.5;
        t.offer(0, &acc);
        assert_eq!(t.kth(&acc), Some(4.5));
    }

    #[test]
    fn two_step_flips_stage_one_order() {
        // stage-one query keeps term 0 only; d_x wins there, d_y wins on the full query
        let docs = vec![
            ("d_x", sv(4, &[(0, 3.0), (1, 0.5)])),
            ("d_y", sv(4, &[(0, 2.0), (1, 4.0)])),
            ("d_z", sv(4, &[(0, 1.0)])),
        ];
        let stage1 = build_index(4, 1, docs.clone()).unwrap();
        let main = build_index(4, 10, docs).unwrap();
        let q = sv(4, &[(0, 1.0), (1, 0.5)]);
        let cfg = TwoStepConfig {
            stage1: PruneConfig { k_q: 1, k_d: 1 },
            stage1_k: 3,
            stage2_k_q: 10,
            heap_factor: f64::INFINITY,
        };
        // stage-one index: d_x {(0,3.0)}, d_y {(1,4.0)}, d_z {(0,1.0)}
        // stage-one scores with q'={(0,1.0)}: d_x 3.0, d_z 1.0
        // stage two: d_x 3.0+0.25=3.25, d_z 1.0
        let r = search_two_step(&stage1, &main, &q, &cfg, 2).unwrap();
        assert_eq!(pairs(&r), vec![("d_x".to_string(), 3.25), ("d_z".to_string(), 1.0)]);

        // with stage-one query cut 2, d_y enters through term 1: 0.5*4.0=2.0 < d_x 3.0,
        // but on the main index d_y = 2.0 + 2.0 = 4.0 > d_x 3.25
        let cfg = TwoStepConfig {
            stage1: PruneConfig { k_q: 2, k_d: 1 },
            ..cfg
        };
        let s1 = search_approx(
            &stage1,
            &q,
            &SearchParams {
                k: 3,
                query_cut: 2,
                heap_factor: f64::INFINITY,
                mode: SearchMode::Approximate,
            },
        )
        .unwrap();
        assert_eq!(s1.hits[0].doc_id, "d_x");
        let r = search_two_step(&stage1, &main, &q, &cfg, 3).unwrap();
        assert_eq!(
            pairs(&r),
            vec![
                ("d_y".to_string(), 4.0),
                ("d_x".to_string(), 3.25),
                ("d_z".to_string(), 1.0)
            ]
        );
    }

    #[test]
    fn degenerate_two_step_equals_single_stage() {
        let idx = toy();
        let q = sv(8, &[(0, 0.5), (1, 1.0), (2, 2.0)]);
        let cfg = TwoStepConfig {
            stage1: PruneConfig { k_q: 2, k_d: 100 },
            stage1_k: 2,
            stage2_k_q: 2,
            heap_factor: 2.5,
        };
        let two = search_two_step(&idx, &idx, &q, &cfg, 2).unwrap();
        let one = search_approx(
            &idx,
            &q,
            &SearchParams {
                k: 2,
                query_cut: 2,
                heap_factor: 2.5,
                mode: SearchMode::Approximate,
            },
        )
        .unwrap();
        assert!(two.same_results(&one));
    }

    #[test]
    fn two_step_rejects_mismatched_corpora() {
        let a = toy();
        let b = build_index(8, 100, vec![("other", sv(8, &[(0, 1.0)]))]).unwrap();
        let cfg = TwoStepConfig {
            stage1: PruneConfig { k_q: 1, k_d: 100 },
            ..Default::default()
        };
        assert!(TwoStepSearcher::new(&a, &b, cfg).is_err());
        let wrong_kd = TwoStepConfig {
            stage1: PruneConfig { k_q: 1, k_d: 50 },
            ..cfg
        };
        assert!(TwoStepSearcher::new(&a, &a, wrong_kd).is_err());
        let mut s = TwoStepSearcher::new(&a, &a, TwoStepConfig { stage1_k: 2, ..cfg }).unwrap();
        assert!(s.search("q", &sv(8, &[(0, 1.0)]), 3).is_err());
    }

    #[test]
    fn explain_examples() {
        let q = sv(4, &[(1, 2.0), (2, 1.0)]);
        let d = sv(4, &[(1, 1.0), (2, 3.0)]);
        let e = explain_match(&q, &d, 10).unwrap();
        assert_eq!(
            e.iter().map(|c| (c.term, c.contribution)).collect::<Vec<_>>(),
            vec![(2, 3.0), (1, 2.0)]
        );
        let total: f32 = e.iter().map(|c| c.contribution).sum();
        assert_eq!(total, dot(&q, &d).unwrap());
        assert_eq!(explain_match(&q, &d, 1).unwrap().len(), 1);
        assert!(explain_match(&q, &sv(4, &[(0, 1.0), (3, 1.0)]), 10).unwrap().is_empty());
        assert!(explain_match(&q, &SparseVector::empty(5), 10).is_err());
    }

    #[test]
    fn concurrent_readers_agree() {
        let idx = toy();
        let q = sv(8, &[(0, 1.0), (2, 0.5)]);
        let want = search_exact(&idx, &q, 3).unwrap();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..4)
                .map(|_| {
                    s.spawn(|| {
                        let mut searcher = Searcher::new(&idx);
                        (0..50)
                            .map(|_| searcher.search_exact("", &q, 3).unwrap())
                            .all(|r| r.same_results(&want))
                    })
                })
                .collect();
            assert!(handles.into_iter().all(|h| h.join().unwrap()));
        });
    }
}
