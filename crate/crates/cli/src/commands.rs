use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use lsr_core::bm25::{build_bm25, DEFAULT_B, DEFAULT_K1};
use lsr_core::eval::{
    bench_fn, bench_search, bench_search_parallel, ndcg_at_k, recall_vs_exact, LatencyReport, Qrels, RunFile,
};
use lsr_core::formats::{
    read_teacher_scores, read_token_docs, read_vectors, teacher_batch, write_token_docs, write_vector_jsonl,
    LogitReader, Spv1Writer, VectorFormat, VectorRecord,
};
use lsr_core::index::{IndexBuilder, InvertedIndex};
use lsr_core::objectives::{kld_loss, toy_corpus, toy_distill, LossConfig, ToyConfig, ToySpec};
use lsr_core::retrieval::{
    explain_match, RankedList, SearchMode, SearchParams, Searcher, TwoStepConfig, TwoStepSearcher,
};
use lsr_core::sparse::{aggregate, density_stats, dot, prune, PruneConfig, SparseVector};
use lsr_core::synth::generate_synthetic;
use serde::Serialize;
use serde_json::json;

use crate::config::FileConfig;
use crate::{
    usage, AggregateArgs, BenchArgs, Cli, CliError, CliResult, Command, EvalArgs, ExplainArgs, IndexArgs, LossArgs,
    ParamOpts, QueryOpts, SearchArgs, SynthArgs, THREADS_ENV,
};

pub(crate) fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    let json = cli.json;
    match &cli.command {
        Command::Aggregate(a) => aggregate_cmd(a, json, out),
        Command::Index(a) => index_cmd(a, &cfg, json, out),
        Command::Search(a) => search_cmd(a, &cfg, json, out, err),
        Command::Eval(a) => eval_cmd(a, json, out),
        Command::Bench(a) => bench_cmd(a, &cfg, json, out, err),
        Command::Synth(a) => synth_cmd(a, &cfg, json, out),
        Command::Explain(a) => explain_cmd(a, json, out),
        Command::Loss(a) => loss_cmd(a, &cfg, json, out),
    }
}

trait AtPath<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T, E: Into<lsr_core::Error>> AtPath<T> for std::result::Result<T, E> {
    /// Prefixes errors with the file they concern.
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| {
            let p = path.display();
            CliError::Core(match e.into() {
                lsr_core::Error::Io(io) => std::io::Error::new(io.kind(), format!("{p}: {io}")).into(),
                lsr_core::Error::Parse { location, message } => lsr_core::Error::Parse {
                    location: format!("{p}: {location}"),
                    message,
                },
                lsr_core::Error::Format(m) => lsr_core::Error::Format(format!("{p}: {m}")),
                lsr_core::Error::Truncated(m) => lsr_core::Error::Truncated(format!("{p}: {m}")),
                other => other,
            })
        })
    }
}

fn emit_json(out: &mut dyn Write, value: &impl Serialize) -> CliResult<()> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| usage(format!("serializing output: {e}")))?;
    writeln!(out)?;
    Ok(())
}

fn emit_table(out: &mut dyn Write, rows: &[(&str, String)]) -> CliResult<()> {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in rows {
        writeln!(out, "{k:<width$}  {v}")?;
    }
    Ok(())
}

fn parse_format(s: Option<&str>) -> CliResult<Option<VectorFormat>> {
    s.map(|f| f.parse().map_err(|e: lsr_core::Error| usage(e.to_string())))
        .transpose()
}

fn load_queries(q: &QueryOpts, vocab_size: u32) -> CliResult<Vec<VectorRecord>> {
    let format = parse_format(q.query_format.as_deref())?;
    let stream = read_vectors(&q.queries, format, Some(vocab_size)).at(&q.queries)?;
    stream.collect::<lsr_core::Result<_>>().at(&q.queries)
}

fn aggregate_cmd(a: &AggregateArgs, json: bool, out: &mut dyn Write) -> CliResult<()> {
    let format = match parse_format(a.format.as_deref())? {
        Some(f) => f,
        None => match a.out.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json") => VectorFormat::Jsonl,
            _ => VectorFormat::Spv1,
        },
    };
    if a.prune == Some(0) {
        return Err(usage("--prune must be >= 1"));
    }
    let reader = LogitReader::new(BufReader::new(File::open(&a.logits).at(&a.logits)?)).at(&a.logits)?;
    let vocab = reader.vocab_size();
    let file = BufWriter::new(File::create(&a.out).at(&a.out)?);
    let (mut records, mut nnz) = (0usize, 0usize);
    let mut convert =
        |rec: lsr_core::Result<(String, lsr_core::sparse::LogitMatrix)>| -> CliResult<(String, SparseVector)> {
            let (id, m) = rec.at(&a.logits)?;
            let mut v = aggregate(&m)?;
            if let Some(k) = a.prune {
                v = prune(&v, k);
            }
            records += 1;
            nnz += v.nnz();
            Ok((id, v))
        };
    match format {
        VectorFormat::Spv1 => {
            let mut w = Spv1Writer::new(file, vocab)?;
            for rec in reader {
                let (id, v) = convert(rec)?;
                w.write(&id, &v)?;
            }
            w.finish()?;
        }
        VectorFormat::Jsonl => {
            let mut w = file;
            for rec in reader {
                let (id, v) = convert(rec)?;
                write_vector_jsonl(&mut w, &id, &v)?;
            }
            w.flush()?;
        }
    }
    let mean_nnz = if records == 0 { 0.0 } else { nnz as f64 / records as f64 };
    if json {
        emit_json(
            out,
            &json!({"records": records, "vocab_size": vocab, "mean_nnz": mean_nnz, "out": a.out}),
        )
    } else {
        emit_table(
            out,
            &[
                ("records", records.to_string()),
                ("vocab_size", vocab.to_string()),
                ("mean_nnz", format!("{mean_nnz:.2}")),
                ("out", a.out.display().to_string()),
            ],
        )
    }
}

fn index_cmd(a: &IndexArgs, cfg: &FileConfig, json: bool, out: &mut dyn Write) -> CliResult<()> {
    let k_d = a.k_d.or(cfg.index.k_d).unwrap_or(1000);
    if k_d == 0 {
        return Err(usage("--k-d must be >= 1"));
    }
    let stream = read_vectors(&a.vectors, parse_format(a.format.as_deref())?, a.vocab_size).at(&a.vectors)?;
    let mut builder = IndexBuilder::new(stream.vocab_size(), k_d)?;
    for rec in stream {
        let (id, v) = rec.at(&a.vectors)?;
        builder.add(id, &v).at(&a.vectors)?;
    }
    let idx = builder.finish();
    idx.save(&a.out).at(&a.out)?;
    if json {
        emit_json(
            out,
            &json!({
                "docs": idx.doc_count(),
                "vocab_size": idx.vocab_size(),
                "k_d": idx.k_d(),
                "postings": idx.total_postings(),
                "terms": idx.non_empty_terms(),
                "out": a.out,
            }),
        )
    } else {
        emit_table(
            out,
            &[
                ("docs", idx.doc_count().to_string()),
                ("vocab_size", idx.vocab_size().to_string()),
                ("k_d", idx.k_d().to_string()),
                ("postings", idx.total_postings().to_string()),
                ("terms", idx.non_empty_terms().to_string()),
                ("out", a.out.display().to_string()),
            ],
        )
    }
}

struct Resolved {
    params: SearchParams,
    two_step: Option<(PathBuf, TwoStepConfig)>,
    threads: usize,
}

fn resolve_threads(flag: Option<usize>, cfg: &FileConfig) -> CliResult<usize> {
    let env = match std::env::var(THREADS_ENV) {
        Ok(s) if !s.trim().is_empty() => Some(
            s.trim()
                .parse::<usize>()
                .map_err(|_| usage(format!("{THREADS_ENV}={s:?} is not a count")))?,
        ),
        _ => None,
    };
    let n = flag.or(env).or(cfg.threads).unwrap_or(1);
    if n == 0 {
        return Err(usage("thread count must be >= 1"));
    }
    Ok(n)
}

fn resolve(p: &ParamOpts, cfg: &FileConfig) -> CliResult<Resolved> {
    let s = &cfg.search;
    let mode_str = p.mode.clone().or_else(|| s.mode.clone());
    let (mode, mode_two_step) = match mode_str.as_deref() {
        None | Some("approximate" | "approx") => (SearchMode::Approximate, false),
        Some("exact") => (SearchMode::Exact, false),
        Some("two-step") => (SearchMode::Approximate, true),
        Some(other) => return Err(usage(format!("unknown mode {other:?} (expected exact or approximate)"))),
    };
    let two_step = p.two_step || mode_two_step;
    let params = SearchParams {
        k: p.k.or(s.k).unwrap_or(1000),
        query_cut: p.query_cut.or(s.query_cut).unwrap_or(500),
        heap_factor: p.heap_factor.or(s.heap_factor).unwrap_or(2.5),
        mode,
    };
    params.validate().map_err(|e| usage(e.to_string()))?;
    let two_step = if two_step {
        if mode == SearchMode::Exact {
            return Err(usage("--two-step cannot be combined with --mode exact"));
        }
        let path = p
            .stage1_index
            .clone()
            .ok_or_else(|| usage("--two-step requires --stage1-index"))?;
        let stage1 = match (p.stage1, &s.stage1) {
            (Some(c), _) => c,
            (None, Some(text)) => text.parse::<PruneConfig>().map_err(|e| usage(e.to_string()))?,
            (None, None) => PruneConfig { k_q: 10, k_d: 100 },
        };
        let cfg = TwoStepConfig {
            stage1,
            stage1_k: p.stage1_k.or(s.stage1_k).unwrap_or(1000),
            stage2_k_q: p.stage2_k_q.or(s.stage2_k_q).unwrap_or(500),
            heap_factor: params.heap_factor,
        };
        if cfg.stage1_k == 0 || cfg.stage2_k_q == 0 {
            return Err(usage("--stage1-k and --stage2-k-q must be >= 1"));
        }
        Some((path, cfg))
    } else {
        if p.stage1_index.is_some() || p.stage1.is_some() || p.stage1_k.is_some() || p.stage2_k_q.is_some() {
            return Err(usage("stage-one options require --two-step"));
        }
        None
    };
    Ok(Resolved {
        params,
        two_step,
        threads: resolve_threads(p.threads, cfg)?,
    })
}

fn run_queries(
    idx: &InvertedIndex,
    stage1: Option<(&InvertedIndex, TwoStepConfig)>,
    queries: &[VectorRecord],
    r: &Resolved,
) -> CliResult<Vec<RankedList>> {
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let chunk = queries.len().div_ceil(r.threads.min(queries.len()));
    let work = |part: &[VectorRecord]| -> lsr_core::Result<Vec<RankedList>> {
        match stage1 {
            Some((s1, cfg)) => {
                let mut ts = TwoStepSearcher::new(s1, idx, cfg)?;
                part.iter().map(|(id, q)| ts.search(id, q, r.params.k)).collect()
            }
            None => {
                let mut s = Searcher::new(idx);
                part.iter().map(|(id, q)| s.search(id, q, &r.params)).collect()
            }
        }
    };
    let parts: Vec<lsr_core::Result<Vec<RankedList>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .map(|part| scope.spawn(move || work(part)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("search worker panicked"))
            .collect()
    });
    let mut lists = Vec::with_capacity(queries.len());
    for p in parts {
        lists.extend(p?);
    }
    Ok(lists)
}

#[derive(Serialize)]
struct JsonHits<'a> {
    query_id: &'a str,
    hits: &'a [lsr_core::retrieval::Hit],
}

fn search_cmd(a: &SearchArgs, cfg: &FileConfig, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let r = resolve(&a.params, cfg)?;
    let idx = InvertedIndex::load(&a.index).at(&a.index)?;
    let stage1 = match &r.two_step {
        Some((path, c)) => Some((InvertedIndex::load(path).at(path)?, *c)),
        None => None,
    };
    let queries = load_queries(&a.queries, idx.vocab_size())?;
    let t = Instant::now();
    let lists = run_queries(&idx, stage1.as_ref().map(|(i, c)| (i, *c)), &queries, &r)?;
    let elapsed = t.elapsed();
    let mean_ms = lists.iter().map(|l| l.latency_ns as f64).sum::<f64>() / lists.len().max(1) as f64 / 1e6;
    writeln!(
        err,
        "searched {} queries in {:.3}s (mean {mean_ms:.3} ms/query, {} thread(s))",
        lists.len(),
        elapsed.as_secs_f64(),
        r.threads
    )?;
    let run = RunFile::from_ranked(&lists);
    let mode = if r.two_step.is_some() {
        "two-step".to_string()
    } else {
        format!("{:?}", r.params.mode).to_lowercase()
    };
    match &a.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).at(path)?);
            run.write(&mut w, &a.tag).at(path)?;
            w.flush().at(path)?;
            let hits: usize = lists.iter().map(|l| l.hits.len()).sum();
            if json {
                emit_json(
                    out,
                    &json!({
                        "queries": lists.len(),
                        "hits": hits,
                        "mode": mode,
                        "params": r.params,
                        "two_step": r.two_step.as_ref().map(|(_, c)| c),
                        "out": path,
                    }),
                )
            } else {
                emit_table(
                    out,
                    &[
                        ("queries", lists.len().to_string()),
                        ("hits", hits.to_string()),
                        ("mode", mode),
                        ("out", path.display().to_string()),
                    ],
                )
            }
        }
        None if json => {
            let payload: Vec<JsonHits> = lists
                .iter()
                .map(|l| JsonHits {
                    query_id: &l.query_id,
                    hits: &l.hits,
                })
                .collect();
            emit_json(out, &payload)
        }
        None => {
            run.write(&mut *out, &a.tag)?;
            Ok(())
        }
    }
}

fn parse_metric(m: &str) -> CliResult<(&str, usize)> {
    let (name, k) = m
        .split_once('@')
        .ok_or_else(|| usage(format!("metric {m:?} must look like ndcg@10")))?;
    let k: usize = k.parse().map_err(|_| usage(format!("bad cutoff in metric {m:?}")))?;
    if k == 0 {
        return Err(usage("metric cutoff must be >= 1"));
    }
    match name {
        "ndcg" | "recall" => Ok((name, k)),
        _ => Err(usage(format!("unknown metric {name:?} (expected ndcg or recall)"))),
    }
}

fn read_run(path: &Path) -> CliResult<RunFile> {
    RunFile::parse(BufReader::new(File::open(path).at(path)?)).at(path)
}

fn eval_cmd(a: &EvalArgs, json: bool, out: &mut dyn Write) -> CliResult<()> {
    let (metric, k) = parse_metric(&a.metric)?;
    match metric {
        "ndcg" => {
            let qrels_path = a.qrels.as_ref().ok_or_else(|| usage("ndcg requires --qrels"))?;
            let run = read_run(&a.run)?;
            let qrels = Qrels::parse(BufReader::new(File::open(qrels_path).at(qrels_path)?)).at(qrels_path)?;
            let report = ndcg_at_k(&run, &qrels, k)?;
            if json {
                emit_json(
                    out,
                    &json!({"metric": a.metric, "value": report.mean, "report": report}),
                )
            } else {
                writeln!(out, "{:.4}", report.mean)?;
                Ok(())
            }
        }
        _ => {
            let reference = a
                .reference
                .as_ref()
                .ok_or_else(|| usage("recall requires --reference"))?;
            let value = recall_vs_exact(&read_run(&a.run)?, &read_run(reference)?, k)?;
            if json {
                emit_json(out, &json!({"metric": a.metric, "value": value}))
            } else {
                writeln!(out, "{value:.4}")?;
                Ok(())
            }
        }
    }
}

fn latency_rows(r: &LatencyReport) -> Vec<(&'static str, String)> {
    vec![
        ("label", r.label.clone()),
        ("queries", r.queries.to_string()),
        ("repetitions", r.repetitions.to_string()),
        ("mean_ms", format!("{:.4}", r.mean_ns / 1e6)),
        ("p50_ms", format!("{:.4}", r.p50_ns as f64 / 1e6)),
        ("p95_ms", format!("{:.4}", r.p95_ns as f64 / 1e6)),
        ("p99_ms", format!("{:.4}", r.p99_ns as f64 / 1e6)),
        ("qps", format!("{:.1}", r.qps)),
    ]
}

fn bench_cmd(a: &BenchArgs, cfg: &FileConfig, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let reps = a.repetitions.or(cfg.bench.repetitions).unwrap_or(3);
    if reps == 0 {
        return Err(usage("--repetitions must be >= 1"));
    }
    let report = match a.engine.as_str() {
        "sparse" => {
            let path = a.index.as_ref().ok_or_else(|| usage("sparse bench requires --index"))?;
            if a.docs.is_some() {
                return Err(usage("--docs applies only to --engine bm25"));
            }
            let r = resolve(&a.params, cfg)?;
            let idx = InvertedIndex::load(path).at(path)?;
            let queries = load_queries(
                &QueryOpts {
                    queries: a.queries.clone(),
                    query_format: a.query_format.clone(),
                },
                idx.vocab_size(),
            )?;
            if queries.is_empty() {
                return Err(usage("query file is empty"));
            }
            match &r.two_step {
                Some((p1, c)) => {
                    let s1 = InvertedIndex::load(p1).at(p1)?;
                    let mut ts = TwoStepSearcher::new(&s1, &idx, *c)?;
                    bench_fn("two-step", &queries, reps, |(id, q)| {
                        ts.search(id, q, r.params.k).map(drop)
                    })?
                }
                None if r.threads > 1 => bench_search_parallel(&idx, &queries, &r.params, reps, r.threads)?,
                None => bench_search(&idx, &queries, &r.params, reps)?,
            }
        }
        "bm25" => {
            let docs_path = a.docs.as_ref().ok_or_else(|| usage("bm25 bench requires --docs"))?;
            if a.index.is_some() {
                return Err(usage("--index applies only to --engine sparse"));
            }
            let k = a.params.k.or(cfg.search.k).unwrap_or(1000);
            if k == 0 {
                return Err(usage("--k must be >= 1"));
            }
            let bm = build_bm25(read_token_docs(docs_path, None).at(docs_path)?, DEFAULT_K1, DEFAULT_B)?;
            let queries = read_token_docs(&a.queries, None).at(&a.queries)?;
            if queries.is_empty() {
                return Err(usage("query file is empty"));
            }
            writeln!(err, "bm25: {} docs, mean length {:.1}", bm.doc_count(), bm.avg_len())?;
            bench_fn("bm25", &queries, reps, |q| bm.search(&q.id, &q.tokens, k).map(drop))?
        }
        other => return Err(usage(format!("unknown engine {other:?} (expected sparse or bm25)"))),
    };
    if json {
        emit_json(out, &report)
    } else {
        emit_table(out, &latency_rows(&report))
    }
}

fn synth_cmd(a: &SynthArgs, cfg: &FileConfig, json: bool, out: &mut dyn Write) -> CliResult<()> {
    let mut spec = cfg.synth.clone().unwrap_or_default();
    macro_rules! set {
        ($flag:expr, $field:ident) => {
            if let Some(v) = $flag {
                spec.$field = v;
            }
        };
    }
    set!(a.seed, seed);
    set!(a.vocab_size, vocab_size);
    set!(a.docs, doc_count);
    set!(a.queries, query_count);
    set!(a.doc_nnz, mean_doc_nnz);
    set!(a.query_nnz, mean_query_nnz);
    set!(a.relevant, relevant_per_query);
    set!(a.overlap, overlap_strength);
    set!(a.zipf, zipf_exponent);
    let format: VectorFormat = a.format.parse().map_err(|e: lsr_core::Error| usage(e.to_string()))?;
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let corpus = generate_synthetic(&spec)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let ext = match format {
        VectorFormat::Spv1 => "spv1",
        VectorFormat::Jsonl => "jsonl",
    };
    let docs_path = a.out_dir.join(format!("docs.{ext}"));
    let queries_path = a.out_dir.join(format!("queries.{ext}"));
    let qrels_path = a.out_dir.join("qrels.txt");
    let doc_tokens_path = a.out_dir.join("doc_tokens.jsonl");
    let query_tokens_path = a.out_dir.join("query_tokens.jsonl");
    lsr_core::formats::write_vectors(&docs_path, format, corpus.vocab_size, &corpus.docs)?;
    lsr_core::formats::write_vectors(&queries_path, format, corpus.vocab_size, &corpus.queries)?;
    let mut w = BufWriter::new(File::create(&qrels_path)?);
    corpus.qrels.write(&mut w)?;
    w.flush()?;
    write_token_docs(BufWriter::new(File::create(&doc_tokens_path)?), &corpus.token_docs)?;
    write_token_docs(BufWriter::new(File::create(&query_tokens_path)?), &corpus.query_tokens)?;
    let docs: Vec<SparseVector> = corpus.docs.iter().map(|(_, v)| v.clone()).collect();
    let stats = density_stats(&docs)?;
    if json {
        emit_json(
            out,
            &json!({
                "spec": spec,
                "doc_density": stats,
                "files": {
                    "docs": docs_path,
                    "queries": queries_path,
                    "qrels": qrels_path,
                    "doc_tokens": doc_tokens_path,
                    "query_tokens": query_tokens_path,
                },
            }),
        )
    } else {
        emit_table(
            out,
            &[
                ("docs", format!("{} -> {}", corpus.docs.len(), docs_path.display())),
                (
                    "queries",
                    format!("{} -> {}", corpus.queries.len(), queries_path.display()),
                ),
                ("qrels", qrels_path.display().to_string()),
                ("doc_tokens", doc_tokens_path.display().to_string()),
                ("query_tokens", query_tokens_path.display().to_string()),
                ("doc_mean_nnz", format!("{:.1}", stats.mean_nnz)),
            ],
        )
    }
}

fn explain_cmd(a: &ExplainArgs, json: bool, out: &mut dyn Write) -> CliResult<()> {
    let idx = InvertedIndex::load(&a.index).at(&a.index)?;
    let ord = idx
        .doc_ids()
        .iter()
        .position(|d| *d == a.doc_id)
        .ok_or_else(|| lsr_core::Error::InvalidInput(format!("document {:?} is not in the index", a.doc_id)))?;
    let query = load_queries(&a.queries, idx.vocab_size())?
        .into_iter()
        .find(|(id, _)| *id == a.query_id)
        .map(|(_, v)| v)
        .ok_or_else(|| lsr_core::Error::InvalidInput(format!("query {:?} is not in the query file", a.query_id)))?;
    let doc = idx.forward_vector(ord as u32);
    let score = dot(&query, &doc)?;
    let terms = explain_match(&query, &doc, a.top)?;
    if json {
        emit_json(
            out,
            &json!({"query_id": a.query_id, "doc_id": a.doc_id, "score": score, "terms": terms}),
        )
    } else {
        writeln!(out, "score {score}")?;
        writeln!(
            out,
            "{:>10}  {:>12}  {:>12}  {:>12}",
            "term", "q_weight", "d_weight", "contribution"
        )?;
        for t in &terms {
            writeln!(
                out,
                "{:>10}  {:>12.6}  {:>12.6}  {:>12.6}",
                t.term, t.q_weight, t.d_weight, t.contribution
            )?;
        }
        Ok(())
    }
}

fn loss_cmd(a: &LossArgs, cfg: &FileConfig, json: bool, out: &mut dyn Write) -> CliResult<()> {
    let base = cfg.loss.unwrap_or_default();
    match (&a.teacher, a.toy) {
        (Some(_), true) => Err(usage("--teacher and --toy are mutually exclusive")),
        (None, false) => Err(usage("loss needs --teacher FILE or --toy")),
        (Some(path), false) => {
            let tau = a.temperature.unwrap_or(base.temperature);
            let records = read_teacher_scores(path).at(path)?;
            if records.is_empty() {
                return Err(lsr_core::Error::InvalidInput("teacher file has no records".into()).into());
            }
            let out_loss = kld_loss(&teacher_batch(&records, tau).map_err(|e| usage(e.to_string()))?)?;
            let grad_norm = out_loss.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if json {
                emit_json(
                    out,
                    &json!({"queries": records.len(), "temperature": tau, "kld": out_loss.loss, "grad_norm": grad_norm}),
                )
            } else {
                emit_table(
                    out,
                    &[
                        ("queries", records.len().to_string()),
                        ("temperature", tau.to_string()),
                        ("kld", format!("{:.6}", out_loss.loss)),
                        ("grad_norm", format!("{grad_norm:.6e}")),
                    ],
                )
            }
        }
        (None, true) => {
            if !(a.lambda_scale.is_finite() && a.lambda_scale > 0.0) {
                return Err(usage("--lambda-scale must be positive"));
            }
            let defaults = ToyConfig::default();
            let loss = LossConfig {
                lambda_q: defaults.loss.lambda_q * a.lambda_scale,
                lambda_d: defaults.loss.lambda_d * a.lambda_scale,
                temperature: a.temperature.unwrap_or(defaults.loss.temperature),
                ..defaults.loss
            };
            let toy_cfg = ToyConfig {
                loss,
                learning_rate: a.learning_rate.unwrap_or(defaults.learning_rate),
                seed: a.seed.unwrap_or(defaults.seed),
                ..defaults
            };
            let corpus = toy_corpus(&ToySpec::default())?;
            let r = toy_distill(&corpus, a.epochs, &toy_cfg).map_err(|e| match e {
                lsr_core::Error::InvalidInput(m) => usage(m),
                other => other.into(),
            })?;
            let summary = json!({
                "steps": r.steps,
                "initial_loss": r.loss_history.first(),
                "final_loss": r.loss_history.last(),
                "initial_flops": r.initial_flops,
                "final_flops": r.final_flops,
                "initial_heldout_kld": r.initial_heldout_kld,
                "final_heldout_kld": r.final_heldout_kld,
                "initial_mean_nnz": r.initial_mean_nnz,
                "final_mean_nnz": r.final_mean_nnz,
            });
            if json {
                emit_json(out, &summary)
            } else {
                emit_table(
                    out,
                    &[
                        ("steps", r.steps.to_string()),
                        ("flops", format!("{:.4} -> {:.4}", r.initial_flops, r.final_flops)),
                        (
                            "heldout_kld",
                            format!("{:.4} -> {:.4}", r.initial_heldout_kld, r.final_heldout_kld),
                        ),
                        (
                            "mean_nnz",
                            format!("{:.2} -> {:.2}", r.initial_mean_nnz, r.final_mean_nnz),
                        ),
                    ],
                )
            }
        }
    }
}
