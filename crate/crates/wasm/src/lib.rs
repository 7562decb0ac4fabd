//! Browser bindings for the demo page in `www/`.
//!
//! Every export takes and returns plain strings (JSON or TREC text) so the
//! page needs no generated glue beyond `wasm-bindgen`'s. The functions are
//! also callable natively, which is how they are tested.

use std::cell::RefCell;
use std::io::Cursor;

use lsr_core::eval::{ndcg_at_k, recall_vs_exact, Qrels, RunFile};
use lsr_core::index::{build_index, InvertedIndex};
use lsr_core::retrieval::{RankedList, SearchMode, SearchParams, Searcher};
use lsr_core::sparse::{aggregate, prune, LogitMatrix};
use lsr_core::synth::{generate_vectors, SynthSpec, SynthVectors};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_js<T>(r: Result<T, String>) -> Result<T, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Term {
    term: u32,
    weight: f32,
}

/// Max-pools `log(1 + relu(z))` over the rows of a JSON matrix such as
/// `[[0, 1, -2], [3, -1, 0.5]]` and keeps the `top_k` largest weights
/// (0 keeps everything).
pub fn aggregate_json(rows_json: &str, top_k: usize) -> Result<String, String> {
    let rows: Vec<Vec<f32>> = serde_json::from_str(rows_json).map_err(|e| format!("matrix: {e}"))?;
    let m = LogitMatrix::from_rows(&rows).map_err(|e| e.to_string())?;
    let mut v = aggregate(&m).map_err(|e| e.to_string())?;
    if top_k > 0 {
        v = prune(&v, top_k);
    }
    let terms: Vec<Term> = v.iter().map(|(term, weight)| Term { term, weight }).collect();
    json(&terms)
}

#[wasm_bindgen(js_name = aggregateLogits)]
pub fn aggregate_logits(rows_json: &str, top_k: usize) -> Result<String, JsValue> {
    to_js(aggregate_json(rows_json, top_k))
}

#[derive(Serialize)]
struct NdcgOut {
    mean: f64,
    evaluated: usize,
    skipped_missing_qrels: usize,
    per_query: std::collections::BTreeMap<String, f64>,
}

/// nDCG@k of a TREC run (`qid Q0 doc rank score tag`) against TREC qrels
/// (`qid 0 doc grade`).
pub fn ndcg_text(run: &str, qrels: &str, k: usize) -> Result<String, String> {
    let run = RunFile::parse(Cursor::new(run)).map_err(|e| format!("run: {e}"))?;
    let qrels = Qrels::parse(Cursor::new(qrels)).map_err(|e| format!("qrels: {e}"))?;
    let r = ndcg_at_k(&run, &qrels, k).map_err(|e| e.to_string())?;
    json(&NdcgOut {
        mean: r.mean,
        evaluated: r.evaluated,
        skipped_missing_qrels: r.skipped_missing_qrels,
        per_query: r.per_query,
    })
}

#[wasm_bindgen(js_name = ndcgAtK)]
pub fn ndcg(run: &str, qrels: &str, k: usize) -> Result<String, JsValue> {
    to_js(ndcg_text(run, qrels, k))
}

const DEMO_K: usize = 10;

struct DemoCorpus {
    seed: u64,
    vectors: SynthVectors,
    exact: RunFile,
    indexes: Vec<(usize, InvertedIndex)>,
}

thread_local! {
    static DEMO: RefCell<Option<DemoCorpus>> = const { RefCell::new(None) };
}

fn demo_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        seed,
        vocab_size: 5_000,
        doc_count: 2_000,
        mean_doc_nnz: 120,
        query_count: 30,
        mean_query_nnz: 40,
        relevant_per_query: 3,
        overlap_strength: 0.3,
        zipf_exponent: 1.1,
    }
}

fn ranked(s: &Searcher<'_>, id: &str, docs: &[lsr_core::retrieval::ScoredDoc]) -> RankedList {
    s.to_ranked(id, docs, 0)
}

fn load_demo(seed: u64) -> Result<DemoCorpus, String> {
    let vectors = generate_vectors(&demo_spec(seed)).map_err(|e| e.to_string())?;
    let full = build_index(vectors.vocab_size, usize::MAX, vectors.docs.iter().cloned()).map_err(|e| e.to_string())?;
    let mut s = Searcher::new(&full);
    let mut lists = Vec::new();
    for (id, q) in &vectors.queries {
        let docs = s.exact_ords(q, DEMO_K).map_err(|e| e.to_string())?;
        lists.push(ranked(&s, id, &docs));
    }
    let exact = RunFile::from_ranked(&lists);
    Ok(DemoCorpus {
        seed,
        vectors,
        exact,
        indexes: Vec::new(),
    })
}

#[derive(Serialize)]
struct TradeoffOut {
    docs: usize,
    queries: usize,
    k_q: usize,
    k_d: usize,
    heap_factor: f64,
    postings: usize,
    recall_at_10: f64,
    ndcg_at_10: f64,
    exact_ndcg_at_10: f64,
}

/// Approximate search on a cached synthetic corpus: prunes documents to
/// `k_d` terms and queries to `k_q`, then reports recall@10 against exact
/// search and nDCG@10 of both. A `heap_factor` of 0 means "no early
/// termination".
pub fn tradeoff_json(seed: u64, k_q: usize, k_d: usize, heap_factor: f64) -> Result<String, String> {
    if k_q == 0 || k_d == 0 {
        return Err("k_q and k_d must be >= 1".into());
    }
    let heap_factor = if heap_factor == 0.0 { f64::INFINITY } else { heap_factor };
    DEMO.with(|cell| {
        let mut slot = cell.borrow_mut();
        if slot.as_ref().is_none_or(|d| d.seed != seed) {
            *slot = Some(load_demo(seed)?);
        }
        let demo = slot.as_mut().expect("demo corpus loaded");
        if !demo.indexes.iter().any(|(kd, _)| *kd == k_d) {
            let idx = build_index(demo.vectors.vocab_size, k_d, demo.vectors.docs.iter().cloned())
                .map_err(|e| e.to_string())?;
            demo.indexes.push((k_d, idx));
        }
        let idx = &demo.indexes.iter().find(|(kd, _)| *kd == k_d).expect("index built").1;
        let params = SearchParams {
            k: DEMO_K,
            query_cut: k_q,
            heap_factor,
            mode: SearchMode::Approximate,
        };
        let mut s = Searcher::new(idx);
        let mut lists = Vec::new();
        for (id, q) in &demo.vectors.queries {
            let docs = s.approx_ords(q, &params).map_err(|e| e.to_string())?;
            lists.push(ranked(&s, id, &docs));
        }
        let run = RunFile::from_ranked(&lists);
        let qrels = &demo.vectors.qrels;
        json(&TradeoffOut {
            docs: idx.doc_count(),
            queries: lists.len(),
            k_q,
            k_d,
            heap_factor: params.heap_factor,
            postings: idx.total_postings(),
            recall_at_10: recall_vs_exact(&run, &demo.exact, DEMO_K).map_err(|e| e.to_string())?,
            ndcg_at_10: ndcg_at_k(&run, qrels, DEMO_K).map_err(|e| e.to_string())?.mean,
            exact_ndcg_at_10: ndcg_at_k(&demo.exact, qrels, DEMO_K).map_err(|e| e.to_string())?.mean,
        })
    })
}

#[wasm_bindgen(js_name = exploreTradeoff)]
pub fn explore_tradeoff(seed: u64, k_q: usize, k_d: usize, heap_factor: f64) -> Result<String, JsValue> {
    to_js(tradeoff_json(seed, k_q, k_d, heap_factor))
}
