//! Run evaluation: TREC qrels/run files, nDCG@k, recall against an exact
//! run, expansion-term analysis and latency benchmarking.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::index::InvertedIndex;
use crate::retrieval::{RankedList, SearchParams, Searcher};
use crate::sparse::{prune, SparseVector, TermId};

/// Graded relevance judgments, `qid -> docid -> grade`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: &str, docid: &str, grade: u32) -> Result<()> {
        let q = self.judgments.entry(qid.to_string()).or_default();
        if q.insert(docid.to_string(), grade).is_some() {
            return Err(Error::DuplicateId(format!("qrels pair ({qid}, {docid})")));
        }
        Ok(())
    }

    pub fn grade(&self, qid: &str, docid: &str) -> u32 {
        self.judgments.get(qid).and_then(|q| q.get(docid)).copied().unwrap_or(0)
    }

    pub fn query(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(qid)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn num_queries(&self) -> usize {
        self.judgments.len()
    }

    pub fn num_judgments(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    /// Parses `qid iter docid grade` lines. Blank lines are skipped.
    pub fn parse<R: BufRead>(r: R) -> Result<Self> {
        let mut qrels = Self::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = format!("qrels line {}", i + 1);
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 4 {
                return Err(Error::parse(lineno, format!("expected 4 fields, got {}", fields.len())));
            }
            let grade: i64 = fields[3]
                .parse()
                .map_err(|_| Error::parse(&lineno, format!("bad grade {:?}", fields[3])))?;
            if grade < 0 {
                return Err(Error::parse(&lineno, "negative grade"));
            }
            qrels
                .insert(fields[0], fields[2], grade as u32)
                .map_err(|e| Error::parse(&lineno, e.to_string()))?;
        }
        Ok(qrels)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for (q, docs) in &self.judgments {
            for (d, g) in docs {
                writeln!(w, "{q} 0 {d} {g}")?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunEntry {
    pub doc_id: String,
    pub rank: usize,
    pub score: f32,
}

/// Ranked output per query, ranks contiguous from 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunFile {
    queries: BTreeMap<String, Vec<RunEntry>>,
}

impl RunFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ranked<'a>(lists: impl IntoIterator<Item = &'a RankedList>) -> Self {
        let mut run = Self::new();
        for l in lists {
            run.add_ranked(l);
        }
        run
    }

    pub fn add_ranked(&mut self, l: &RankedList) {
        let entries = l
            .hits
            .iter()
            .enumerate()
            .map(|(i, h)| RunEntry {
                doc_id: h.doc_id.clone(),
                rank: i + 1,
                score: h.score,
            })
            .collect();
        self.queries.insert(l.query_id.clone(), entries);
    }

    pub fn query(&self, qid: &str) -> Option<&[RunEntry]> {
        self.queries.get(qid).map(Vec::as_slice)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    /// Parses `qid Q0 docid rank score tag` lines and checks that ranks are
    /// contiguous from 1 and scores non-increasing.
    pub fn parse<R: BufRead>(r: R) -> Result<Self> {
        let mut raw: BTreeMap<String, Vec<(RunEntry, usize)>> = BTreeMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let loc = format!("run line {lineno}");
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 6 {
                return Err(Error::parse(loc, format!("expected 6 fields, got {}", fields.len())));
            }
            let rank: usize = fields[3]
                .parse()
                .map_err(|_| Error::parse(&loc, format!("bad rank {:?}", fields[3])))?;
            let score: f32 = fields[4]
                .parse()
                .map_err(|_| Error::parse(&loc, format!("bad score {:?}", fields[4])))?;
            raw.entry(fields[0].to_string()).or_default().push((
                RunEntry {
                    doc_id: fields[2].to_string(),
                    rank,
                    score,
                },
                lineno,
            ));
        }
        let mut run = Self::new();
        for (qid, mut entries) in raw {
            entries.sort_by_key(|(e, _)| e.rank);
            let mut seen = HashSet::new();
            for (pos, (e, lineno)) in entries.iter().enumerate() {
                let loc = format!("run line {lineno}");
                if e.rank != pos + 1 {
                    return Err(Error::parse(
                        loc,
                        format!(
                            "query {qid}: ranks not contiguous from 1 (found {} at position {})",
                            e.rank,
                            pos + 1
                        ),
                    ));
                }
                if pos > 0 && e.score > entries[pos - 1].0.score {
                    return Err(Error::parse(
                        loc,
                        format!("query {qid}: score increases at rank {}", e.rank),
                    ));
                }
                if !seen.insert(e.doc_id.as_str()) {
                    return Err(Error::parse(
                        loc,
                        format!("query {qid}: document {} listed twice", e.doc_id),
                    ));
                }
            }
            run.queries.insert(qid, entries.into_iter().map(|(e, _)| e).collect());
        }
        Ok(run)
    }

    pub fn write<W: Write>(&self, mut w: W, tag: &str) -> Result<()> {
        for (q, entries) in &self.queries {
            for e in entries {
                writeln!(w, "{q} Q0 {} {} {} {tag}", e.doc_id, e.rank, e.score)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NdcgReport {
    pub k: usize,
    pub per_query: BTreeMap<String, f64>,
    /// Mean over evaluated queries; 0 when none were evaluated.
    pub mean: f64,
    pub evaluated: usize,
    /// Run queries absent from the qrels, excluded from the mean.
    pub skipped_missing_qrels: usize,
    /// Evaluated queries without any positive judgment (scored 0).
    pub no_relevant: usize,
}

/// Exponential-gain nDCG@k with a log2 rank discount.
pub fn ndcg_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<NdcgReport> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let mut per_query = BTreeMap::new();
    let (mut skipped, mut no_relevant) = (0, 0);
    for (qid, entries) in &run.queries {
        let Some(judged) = qrels.query(qid) else {
            skipped += 1;
            continue;
        };
        let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
        if ideal.is_empty() {
            no_relevant += 1;
            per_query.insert(qid.clone(), 0.0);
            continue;
        }
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let dcg: f64 = entries
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, e)| gain(judged.get(&e.doc_id).copied().unwrap_or(0)) / discount(i))
            .sum();
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain(g) / discount(i))
            .sum();
        per_query.insert(qid.clone(), dcg / idcg);
    }
    let evaluated = per_query.len();
    let mean = if evaluated == 0 {
        0.0
    } else {
        per_query.values().sum::<f64>() / evaluated as f64
    };
    Ok(NdcgReport {
        k,
        per_query,
        mean,
        evaluated,
        skipped_missing_qrels: skipped,
        no_relevant,
    })
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

/// `log2(i + 2)` for the zero-based position `i`.
fn discount(i: usize) -> f64 {
    ((i + 2) as f64).log2()
}

/// Fraction of each query's exact top-k that the approximate top-k recovers,
/// averaged over queries. When the exact list holds fewer than `k` hits the
/// denominator is its length, so a run always scores 1 against itself.
pub fn recall_vs_exact(approx: &RunFile, exact: &RunFile, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if !approx.queries.keys().eq(exact.queries.keys()) {
        return Err(Error::invalid("approximate and exact runs cover different queries"));
    }
    if exact.queries.is_empty() {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for (qid, ex) in &exact.queries {
        let truth: HashSet<&str> = ex.iter().take(k).map(|e| e.doc_id.as_str()).collect();
        if truth.is_empty() {
            total += 1.0;
            continue;
        }
        let found = approx.queries[qid]
            .iter()
            .take(k)
            .filter(|e| truth.contains(e.doc_id.as_str()))
            .count();
        total += found as f64 / truth.len() as f64;
    }
    Ok(total / exact.queries.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExpansionRatio {
    pub input_fraction: f64,
    pub expansion_fraction: f64,
    /// Number of active terms inspected (`min(top_n, nnz)`).
    pub considered: usize,
    /// Set when the vector had no active terms; both fractions are then 0.
    pub empty: bool,
}

/// Splits the `top_n` heaviest active terms into those present in the input
/// and expansion terms.
pub fn expansion_ratio(input_terms: &HashSet<TermId>, v: &SparseVector, top_n: usize) -> Result<ExpansionRatio> {
    if top_n == 0 {
        return Err(Error::invalid("top_n must be >= 1"));
    }
    if v.is_empty() {
        return Ok(ExpansionRatio {
            input_fraction: 0.0,
            expansion_fraction: 0.0,
            considered: 0,
            empty: true,
        });
    }
    let top = prune(v, top_n);
    let n = top.nnz();
    let inside = top.terms().iter().filter(|t| input_terms.contains(t)).count();
    Ok(ExpansionRatio {
        input_fraction: inside as f64 / n as f64,
        expansion_fraction: (n - inside) as f64 / n as f64,
        considered: n,
        empty: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    /// Single thread; samples are per-query wall times.
    Latency,
    /// Several threads; `qps` is the meaningful figure.
    Throughput,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyReport {
    pub label: String,
    pub mode: BenchMode,
    pub params: Option<SearchParams>,
    pub queries: usize,
    pub repetitions: usize,
    pub samples_ns: Vec<u64>,
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p95_ns: u64,
    pub p99_ns: u64,
    pub qps: f64,
}

impl LatencyReport {
    pub fn from_samples(
        label: impl Into<String>,
        mode: BenchMode,
        queries: usize,
        repetitions: usize,
        samples_ns: Vec<u64>,
        wall_ns: u64,
    ) -> Result<Self> {
        if samples_ns.is_empty() {
            return Err(Error::invalid("latency report needs at least one sample"));
        }
        let mut sorted = samples_ns.clone();
        sorted.sort_unstable();
        let mean_ns = samples_ns.iter().map(|&s| s as f64).sum::<f64>() / samples_ns.len() as f64;
        Ok(Self {
            label: label.into(),
            mode,
            params: None,
            queries,
            repetitions,
            p50_ns: nearest_rank(&sorted, 50.0),
            p95_ns: nearest_rank(&sorted, 95.0),
            p99_ns: nearest_rank(&sorted, 99.0),
            qps: samples_ns.len() as f64 / (wall_ns.max(1) as f64 * 1e-9),
            mean_ns,
            samples_ns,
        })
    }

    pub fn with_params(mut self, params: SearchParams) -> Self {
        self.params = Some(params);
        self
    }

    pub fn mean_ms(&self) -> f64 {
        self.mean_ns * 1e-6
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[u64], pct: f64) -> u64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Times `f` on every query: one untimed warm-up sweep, then `repetitions`
/// timed sweeps. One sample per call.
pub fn bench_fn<Q, F>(label: &str, queries: &[Q], repetitions: usize, mut f: F) -> Result<LatencyReport>
where
    F: FnMut(&Q) -> Result<()>,
{
    if queries.is_empty() {
        return Err(Error::invalid("benchmark needs at least one query"));
    }
    if repetitions == 0 {
        return Err(Error::invalid("repetitions must be >= 1"));
    }
    for q in queries {
        f(q)?;
    }
    let mut samples = Vec::with_capacity(queries.len() * repetitions);
    let wall = Instant::now();
    for _ in 0..repetitions {
        for q in queries {
            let t = Instant::now();
            f(q)?;
            samples.push(t.elapsed().as_nanos() as u64);
        }
    }
    let wall_ns = wall.elapsed().as_nanos() as u64;
    LatencyReport::from_samples(label, BenchMode::Latency, queries.len(), repetitions, samples, wall_ns)
}

/// Single-threaded latency of exact or approximate search (per
/// `params.mode`). Query encoding is not part of the measurement.
pub fn bench_search(
    idx: &InvertedIndex,
    queries: &[(String, SparseVector)],
    params: &SearchParams,
    repetitions: usize,
) -> Result<LatencyReport> {
    params.validate()?;
    let mut searcher = Searcher::new(idx);
    let label = format!("{:?}", params.mode).to_lowercase();
    bench_fn(&label, queries, repetitions, |(id, q)| {
        searcher.search(id, q, params).map(drop)
    })
    .map(|r| r.with_params(*params))
}

/// Throughput mode: queries are split across `threads` workers, each with
/// its own scratch, sharing the index.
pub fn bench_search_parallel(
    idx: &InvertedIndex,
    queries: &[(String, SparseVector)],
    params: &SearchParams,
    repetitions: usize,
    threads: usize,
) -> Result<LatencyReport> {
    params.validate()?;
    if queries.is_empty() {
        return Err(Error::invalid("benchmark needs at least one query"));
    }
    let threads = threads.clamp(1, queries.len());
    let chunk = queries.len().div_ceil(threads);
    let wall = Instant::now();
    let per_thread: Vec<Result<Vec<u64>>> = std::thread::scope(|s| {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    let mut searcher = Searcher::new(idx);
                    let mut samples = Vec::with_capacity(part.len() * repetitions);
                    for (id, q) in part {
                        searcher.search(id, q, params)?;
                    }
                    for _ in 0..repetitions {
                        for (id, q) in part {
                            let t = Instant::now();
                            searcher.search(id, q, params)?;
                            samples.push(t.elapsed().as_nanos() as u64);
                        }
                    }
                    Ok(samples)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench worker panicked"))
            .collect()
    });
    let wall_ns = wall.elapsed().as_nanos() as u64;
    let mut samples = Vec::new();
    for part in per_thread {
        samples.extend(part?);
    }
    let label = format!("{:?}-x{threads}", params.mode).to_lowercase();
    LatencyReport::from_samples(
        label,
        BenchMode::Throughput,
        queries.len(),
        repetitions,
        samples,
        wall_ns,
    )
    .map(|r| r.with_params(*params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::Hit;

    fn run_of(lists: &[(&str, &[&str])]) -> RunFile {
        let ranked: Vec<RankedList> = lists
            .iter()
            .map(|(q, docs)| RankedList {
                query_id: q.to_string(),
                hits: docs
                    .iter()
                    .enumerate()
                    .map(|(i, d)| Hit {
                        doc_id: d.to_string(),
                        score: 100.0 - i as f32,
                    })
                    .collect(),
                latency_ns: 0,
            })
            .collect();
        RunFile::from_ranked(&ranked)
    }

    #[test]
    fn ndcg_perfect_single_relevant() {
        let mut qrels = Qrels::new();
        qrels.insert("q", "d1", 1).unwrap();
        let r = ndcg_at_k(&run_of(&[("q", &["d1", "d2"])]), &qrels, 10).unwrap();
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn ndcg_hand_fixture() {
        let mut qrels = Qrels::new();
        qrels.insert("q", "d1", 2).unwrap();
        qrels.insert("q", "d2", 1).unwrap();
        let r = ndcg_at_k(&run_of(&[("q", &["d2", "d1", "d3"])]), &qrels, 10).unwrap();
        // DCG = 1/1 + 3/log2(3), IDCG = 3/1 + 1/log2(3)
        let dcg = 1.0 + 3.0 / 3f64.log2();
        let idcg = 3.0 + 1.0 / 3f64.log2();
        assert!((r.mean - dcg / idcg).abs() < 1e-15);
        assert_eq!(format!("{:.4}", r.mean), "0.7967");
    }

    #[test]
    fn ndcg_zero_and_skips() {
        let mut qrels = Qrels::new();
        qrels.insert("q", "rel", 1).unwrap();
        qrels.insert("empty", "x", 0).unwrap();
        let docs: Vec<String> = (0..12).map(|i| format!("n{i}")).collect();
        let mut ranked: Vec<&str> = docs.iter().map(String::as_str).collect();
        ranked.push("rel"); // rank 13, outside the cutoff
        let run = run_of(&[("q", &ranked), ("empty", &["x"]), ("unjudged", &["a"])]);
        let r = ndcg_at_k(&run, &qrels, 10).unwrap();
        assert_eq!(r.per_query["q"], 0.0);
        assert_eq!(r.per_query["empty"], 0.0);
        assert_eq!(r.evaluated, 2);
        assert_eq!(r.no_relevant, 1);
        assert_eq!(r.skipped_missing_qrels, 1);
    }

    #[test]
    fn recall_examples() {
        let a = run_of(&[("q1", &["a", "b"]), ("q2", &["c", "d"])]);
        assert_eq!(recall_vs_exact(&a, &a, 2).unwrap(), 1.0);
        let b = run_of(&[("q1", &["x", "y"]), ("q2", &["z", "w"])]);
        assert_eq!(recall_vs_exact(&b, &a, 2).unwrap(), 0.0);
        let half = run_of(&[("q1", &["a", "y"]), ("q2", &["z", "d"])]);
        assert_eq!(recall_vs_exact(&half, &a, 2).unwrap(), 0.5);
        let other = run_of(&[("q1", &["a"])]);
        assert!(recall_vs_exact(&other, &a, 2).is_err());
        let short = run_of(&[("q1", &["a"]), ("q2", &[])]);
        assert_eq!(recall_vs_exact(&short, &short, 10).unwrap(), 1.0);
    }

    #[test]
    fn expansion_examples() {
        let v = SparseVector::new(10, vec![(1, 0.5), (2, 0.4), (3, 0.3), (4, 0.2)]).unwrap();
        let all: HashSet<u32> = [1, 2, 3, 4].into();
        assert_eq!(expansion_ratio(&all, &v, 25).unwrap().input_fraction, 1.0);
        let one: HashSet<u32> = [3].into();
        let r = expansion_ratio(&one, &v, 4).unwrap();
        assert_eq!((r.input_fraction, r.expansion_fraction), (0.25, 0.75));
        // only the two heaviest terms count
        let r = expansion_ratio(&[1].into(), &v, 2).unwrap();
        assert_eq!((r.input_fraction, r.considered), (0.5, 2));
        let e = expansion_ratio(&one, &SparseVector::empty(10), 25).unwrap();
        assert!(e.empty && e.input_fraction == 0.0 && e.expansion_fraction == 0.0);
    }

    #[test]
    fn trec_files_round_trip_and_validate() {
        let run = run_of(&[("q1", &["a", "b", "c"]), ("q2", &["d"])]);
        let mut buf = Vec::new();
        run.write(&mut buf, "tag").unwrap();
        assert_eq!(RunFile::parse(&buf[..]).unwrap(), run);

        let gap = "q 0 a 1 2.0 t\nq Q0 b 3 1.0 t\n";
        assert!(matches!(RunFile::parse(gap.as_bytes()), Err(Error::Parse { .. })));
        let rising = "q Q0 a 1 1.0 t\nq Q0 b 2 2.0 t\n";
        assert!(RunFile::parse(rising.as_bytes()).is_err());
        assert!(RunFile::parse("q Q0 a 1\n".as_bytes()).is_err());

        let text = "q1 0 d1 2\nq1 0 d2 0\n\nq2 0 d3 1\n";
        let qrels = Qrels::parse(text.as_bytes()).unwrap();
        assert_eq!(qrels.num_judgments(), 3);
        assert_eq!(qrels.grade("q1", "d1"), 2);
        let mut out = Vec::new();
        qrels.write(&mut out).unwrap();
        assert_eq!(Qrels::parse(&out[..]).unwrap(), qrels);
        assert!(Qrels::parse("q 0 d -1\n".as_bytes()).is_err());
        assert!(Qrels::parse("q 0 d 1\nq 0 d 2\n".as_bytes()).is_err());
    }

    #[test]
    fn percentiles_are_order_statistics() {
        let samples: Vec<u64> = (1..=100).rev().collect();
        let r = LatencyReport::from_samples("t", BenchMode::Latency, 100, 1, samples, 1000).unwrap();
        assert_eq!((r.p50_ns, r.p95_ns, r.p99_ns), (50, 95, 99));
        assert_eq!(r.mean_ns, 50.5);
        assert_eq!(nearest_rank(&[7], 99.0), 7);
        assert!(LatencyReport::from_samples("t", BenchMode::Latency, 0, 1, vec![], 1).is_err());
    }

    #[test]
    fn bench_rejects_empty_query_set() {
        let idx = crate::index::build_index::<_, String>(4, 10, Vec::new()).unwrap();
        assert!(bench_search(&idx, &[], &SearchParams::default(), 3).is_err());
    }
}
