//! On-disk formats for vectors, logits, token corpora and teacher scores.
//!
//! Binary layouts are little-endian:
//!
//! ```text
//! SPV1  "SPV1" u32 version=1 u32 vocab_size u64 record_count
//!       record_count x { u32 id_len, id bytes, u32 nnz, nnz x (u32 term, f32 weight) }
//! LGT1  "LGT1" u32 vocab_size
//!       until EOF { u32 id_len, id bytes, u32 n_rows, n_rows*vocab_size x f32 }
//! ```
//!
//! Vector JSONL lines look like `{"id": "d1", "vector": {"17": 0.5}}`. Weights
//! are parsed directly as `f32` from their decimal text, so writing with the
//! shortest round-trip representation and reading back is lossless.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::value::RawValue;

use crate::binio::{read_pairs, LeReader, LeWriter};
use crate::bm25::{hash_tokens, TokenDoc};
use crate::error::{Error, Result};
use crate::objectives::ScoreBatch;
use crate::sparse::{LogitMatrix, SparseVector, TermId};

pub const SPV1_MAGIC: &[u8; 4] = b"SPV1";
pub const SPV1_VERSION: u32 = 1;
pub const LGT1_MAGIC: &[u8; 4] = b"LGT1";

const MAX_ID_LEN: u32 = 1 << 20;

pub type VectorRecord = (String, SparseVector);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VectorFormat {
    Jsonl,
    Spv1,
}

impl VectorFormat {
    /// `.spv1`/`.spv` map to SPV1, `.jsonl`/`.json` to JSONL; otherwise the
    /// first four bytes of an existing file are inspected.
    pub fn detect(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("spv1" | "spv") => return Ok(Self::Spv1),
            Some("jsonl" | "json") => return Ok(Self::Jsonl),
            _ => {}
        }
        let mut magic = [0u8; 4];
        let mut f = File::open(path)?;
        let n = f.read(&mut magic)?;
        Ok(if n == 4 && &magic == SPV1_MAGIC {
            Self::Spv1
        } else {
            Self::Jsonl
        })
    }
}

impl std::str::FromStr for VectorFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(Self::Jsonl),
            "spv1" | "spv" | "binary" => Ok(Self::Spv1),
            other => Err(Error::invalid(format!(
                "unknown vector format {other:?} (expected jsonl or spv1)"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// SPV1

pub struct Spv1Reader<R> {
    r: LeReader<R>,
    vocab_size: u32,
    record_count: u64,
    read: u64,
    done: bool,
}

impl<R: Read> Spv1Reader<R> {
    pub fn new(inner: R) -> Result<Self> {
        let mut r = LeReader::new(inner);
        let magic: [u8; 4] = r.array("magic")?;
        if &magic != SPV1_MAGIC {
            return Err(Error::Format(format!("not an SPV1 file (magic {magic:?})")));
        }
        let version = r.u32("version")?;
        if version != SPV1_VERSION {
            return Err(Error::Format(format!("unsupported SPV1 version {version}")));
        }
        let vocab_size = r.u32("vocab_size")?;
        if vocab_size == 0 {
            return Err(Error::Format("SPV1 vocab_size is 0".into()));
        }
        let record_count = r.u64("record_count")?;
        Ok(Self {
            r,
            vocab_size,
            record_count,
            read: 0,
            done: false,
        })
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn record_count(&self) -> u64 {
        self.record_count
    }

    fn next_record(&mut self) -> Result<Option<VectorRecord>> {
        if self.read == self.record_count {
            if self.r.has_more()? {
                return Err(Error::Format(format!(
                    "trailing bytes after {} records at byte {}",
                    self.record_count,
                    self.r.offset() - 1
                )));
            }
            return Ok(None);
        }
        let at = self.r.offset();
        let id_len = self.r.u32("record id length")?;
        if id_len > MAX_ID_LEN {
            return Err(Error::parse(
                format!("byte {at}"),
                format!("id length {id_len} too large"),
            ));
        }
        let mut id = vec![0u8; id_len as usize];
        self.r.fill(&mut id, "record id")?;
        let id = String::from_utf8(id).map_err(|_| Error::parse(format!("byte {at}"), "id is not UTF-8"))?;
        let nnz = self.r.u32("nnz")?;
        if nnz > self.vocab_size {
            return Err(Error::parse(
                format!("byte {at}"),
                format!("nnz {nnz} exceeds vocab_size {}", self.vocab_size),
            ));
        }
        let (mut terms, mut weights) = (Vec::with_capacity(nnz as usize), Vec::with_capacity(nnz as usize));
        read_pairs(&mut self.r, nnz as usize, &mut terms, &mut weights, "record entries")?;
        let v = SparseVector::new(self.vocab_size, terms.into_iter().zip(weights).collect())
            .map_err(|e| Error::parse(format!("byte {at} (record {id:?})"), e.to_string()))?;
        self.read += 1;
        Ok(Some((id, v)))
    }
}

impl<R: Read> Iterator for Spv1Reader<R> {
    type Item = Result<VectorRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let out = self.next_record().transpose();
        if !matches!(out, Some(Ok(_))) {
            self.done = true;
        }
        out
    }
}

fn write_spv1_record<W: Write>(w: &mut LeWriter<W>, vocab_size: u32, id: &str, v: &SparseVector) -> Result<()> {
    if v.vocab_size() != vocab_size {
        return Err(Error::VocabMismatch {
            left: vocab_size,
            right: v.vocab_size(),
        });
    }
    w.str(id)?;
    w.u32(v.nnz() as u32)?;
    w.pairs(v.terms(), v.weights())?;
    Ok(())
}

fn write_spv1_header<W: Write>(w: &mut LeWriter<W>, vocab_size: u32, count: u64) -> Result<()> {
    w.bytes(SPV1_MAGIC)?;
    w.u32(SPV1_VERSION)?;
    w.u32(vocab_size)?;
    w.u64(count)?;
    Ok(())
}

/// Streaming SPV1 writer; the record count is patched on [`finish`](Self::finish).
pub struct Spv1Writer<W: Write + Seek> {
    w: LeWriter<W>,
    vocab_size: u32,
    count: u64,
}

impl<W: Write + Seek> Spv1Writer<W> {
    pub fn new(inner: W, vocab_size: u32) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::invalid("vocab_size must be positive"));
        }
        let mut w = LeWriter::new(inner);
        write_spv1_header(&mut w, vocab_size, 0)?;
        Ok(Self {
            w,
            vocab_size,
            count: 0,
        })
    }

    pub fn write(&mut self, id: &str, v: &SparseVector) -> Result<()> {
        write_spv1_record(&mut self.w, self.vocab_size, id, v)?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<W> {
        let mut inner = self.w.into_inner();
        let end = inner.stream_position()?;
        inner.seek(SeekFrom::Start(12))?;
        inner.write_all(&self.count.to_le_bytes())?;
        inner.seek(SeekFrom::Start(end))?;
        inner.flush()?;
        Ok(inner)
    }
}

/// Writes a complete SPV1 stream to any writer.
pub fn write_spv1<W: Write>(w: W, vocab_size: u32, records: &[VectorRecord]) -> Result<()> {
    let mut w = LeWriter::new(w);
    write_spv1_header(&mut w, vocab_size, records.len() as u64)?;
    for (id, v) in records {
        write_spv1_record(&mut w, vocab_size, id, v)?;
    }
    w.into_inner().flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Vector JSONL

/// Term map parsed with exact `f32` weights; duplicate keys are kept so the
/// vector constructor can reject them.
struct TermMap(Vec<(TermId, f32)>);

impl<'de> Deserialize<'de> for TermMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = TermMap;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping term ids to weights")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> std::result::Result<TermMap, A::Error> {
                let mut out = Vec::new();
                while let Some((k, raw)) = m.next_entry::<std::borrow::Cow<'de, str>, &'de RawValue>()? {
                    let t: TermId = k
                        .parse()
                        .map_err(|_| de::Error::custom(format!("term id {k:?} is not a u32")))?;
                    let w: f32 = raw
                        .get()
                        .parse()
                        .map_err(|_| de::Error::custom(format!("weight {} for term {t} is not a number", raw.get())))?;
                    out.push((t, w));
                }
                Ok(TermMap(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonVectorLine<'a> {
    #[serde(borrow)]
    id: std::borrow::Cow<'a, str>,
    vector: TermMap,
}

fn parse_vector_line(line: &str, vocab_size: u32, lineno: usize) -> Result<VectorRecord> {
    let rec: JsonVectorLine =
        serde_json::from_str(line).map_err(|e| Error::parse(format!("line {lineno}"), e.to_string()))?;
    let mut entries = rec.vector.0;
    entries.sort_by_key(|&(t, _)| t);
    if let Some(p) = entries.windows(2).find(|p| p[0].0 == p[1].0) {
        return Err(Error::parse(
            format!("line {lineno}"),
            format!("duplicate term {}", p[0].0),
        ));
    }
    // zero weights carry no information and are dropped
    entries.retain(|&(_, w)| w != 0.0);
    let v =
        SparseVector::new(vocab_size, entries).map_err(|e| Error::parse(format!("line {lineno}"), e.to_string()))?;
    Ok((rec.id.into_owned(), v))
}

pub struct JsonlVectorReader<R> {
    r: R,
    vocab_size: u32,
    line: String,
    lineno: usize,
    done: bool,
}

impl<R: BufRead> JsonlVectorReader<R> {
    pub fn new(r: R, vocab_size: u32) -> Self {
        Self {
            r,
            vocab_size,
            line: String::new(),
            lineno: 0,
            done: false,
        }
    }
}

impl<R: BufRead> Iterator for JsonlVectorReader<R> {
    type Item = Result<VectorRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.line.clear();
            self.lineno += 1;
            match self.r.read_line(&mut self.line) {
                Ok(0) => self.done = true,
                Ok(_) if self.line.trim().is_empty() => continue,
                Ok(_) => {
                    let out = parse_vector_line(self.line.trim_end(), self.vocab_size, self.lineno);
                    self.done = out.is_err();
                    return Some(out);
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            }
        }
        None
    }
}

pub fn write_vector_jsonl<W: Write>(mut w: W, id: &str, v: &SparseVector) -> Result<()> {
    let mut line = String::with_capacity(16 + v.nnz() * 16);
    line.push_str("{\"id\":");
    line.push_str(&serde_json::to_string(id).map_err(|e| Error::Format(e.to_string()))?);
    line.push_str(",\"vector\":{");
    for (i, (t, wt)) in v.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        use fmt::Write as _;
        // Debug prints the shortest representation that parses back exactly
        let _ = write!(line, "\"{t}\":{wt:?}");
    }
    line.push_str("}}\n");
    w.write_all(line.as_bytes())?;
    Ok(())
}

pub fn write_jsonl_vectors<W: Write>(mut w: W, records: &[VectorRecord]) -> Result<()> {
    for (id, v) in records {
        write_vector_jsonl(&mut w, id, v)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Path-level helpers

/// A stream of vector records from either format.
pub struct VectorStream {
    vocab_size: u32,
    inner: Box<dyn Iterator<Item = Result<VectorRecord>>>,
}

impl VectorStream {
    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }
}

impl Iterator for VectorStream {
    type Item = Result<VectorRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.inner.next()
    }
}

/// Opens a vector file. JSONL files carry no vocabulary size, so
/// `vocab_size` must be given for them; for SPV1 it is checked when given.
pub fn read_vectors(path: &Path, format: Option<VectorFormat>, vocab_size: Option<u32>) -> Result<VectorStream> {
    let format = match format {
        Some(f) => f,
        None => VectorFormat::detect(path)?,
    };
    let file = BufReader::new(File::open(path)?);
    match format {
        VectorFormat::Spv1 => {
            let r = Spv1Reader::new(file)?;
            if let Some(expected) = vocab_size {
                if expected != r.vocab_size() {
                    return Err(Error::VocabMismatch {
                        left: expected,
                        right: r.vocab_size(),
                    });
                }
            }
            Ok(VectorStream {
                vocab_size: r.vocab_size(),
                inner: Box::new(r),
            })
        }
        VectorFormat::Jsonl => {
            let vocab_size = vocab_size.ok_or_else(|| {
                Error::invalid(format!("{}: JSONL vectors need an explicit vocab size", path.display()))
            })?;
            if vocab_size == 0 {
                return Err(Error::invalid("vocab_size must be positive"));
            }
            Ok(VectorStream {
                vocab_size,
                inner: Box::new(JsonlVectorReader::new(file, vocab_size)),
            })
        }
    }
}

pub fn read_all_vectors(
    path: &Path,
    format: Option<VectorFormat>,
    vocab_size: Option<u32>,
) -> Result<(u32, Vec<VectorRecord>)> {
    let s = read_vectors(path, format, vocab_size)?;
    let vocab = s.vocab_size();
    Ok((vocab, s.collect::<Result<_>>()?))
}

pub fn write_vectors(path: &Path, format: VectorFormat, vocab_size: u32, records: &[VectorRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        VectorFormat::Spv1 => write_spv1(&mut w, vocab_size, records)?,
        VectorFormat::Jsonl => write_jsonl_vectors(&mut w, records)?,
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// LGT1

pub struct LogitReader<R> {
    r: LeReader<R>,
    vocab_size: u32,
    done: bool,
}

impl<R: Read> LogitReader<R> {
    pub fn new(inner: R) -> Result<Self> {
        let mut r = LeReader::new(inner);
        let magic: [u8; 4] = r.array("magic")?;
        if &magic != LGT1_MAGIC {
            return Err(Error::Format(format!("not an LGT1 file (magic {magic:?})")));
        }
        let vocab_size = r.u32("vocab_size")?;
        if vocab_size == 0 {
            return Err(Error::Format("LGT1 vocab_size is 0".into()));
        }
        Ok(Self {
            r,
            vocab_size,
            done: false,
        })
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    fn next_record(&mut self) -> Result<Option<(String, LogitMatrix)>> {
        let at = self.r.offset();
        let Some(first) = self.r.try_byte()? else {
            return Ok(None);
        };
        let rest: [u8; 3] = self.r.array("record id length")?;
        let id_len = u32::from_le_bytes([first, rest[0], rest[1], rest[2]]);
        if id_len > MAX_ID_LEN {
            return Err(Error::parse(
                format!("byte {at}"),
                format!("id length {id_len} too large"),
            ));
        }
        let mut id = vec![0u8; id_len as usize];
        self.r.fill(&mut id, "record id")?;
        let id = String::from_utf8(id).map_err(|_| Error::parse(format!("byte {at}"), "id is not UTF-8"))?;
        let rows = self.r.u32("n_rows")? as usize;
        let cols = self.vocab_size as usize;
        let total = rows.checked_mul(cols).filter(|n| *n <= (1 << 31)).ok_or_else(|| {
            Error::parse(
                format!("byte {at}"),
                format!("{rows} rows of {cols} logits is too large"),
            )
        })?;
        let mut bytes = vec![0u8; total * 4];
        self.r.fill(&mut bytes, "logit rows")?;
        let values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let m = LogitMatrix::new(rows, cols, values)
            .map_err(|e| Error::parse(format!("byte {at} (record {id:?})"), e.to_string()))?;
        Ok(Some((id, m)))
    }
}

impl<R: Read> Iterator for LogitReader<R> {
    type Item = Result<(String, LogitMatrix)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let out = self.next_record().transpose();
        if !matches!(out, Some(Ok(_))) {
            self.done = true;
        }
        out
    }
}

pub struct LogitWriter<W: Write> {
    w: LeWriter<W>,
    vocab_size: u32,
}

impl<W: Write> LogitWriter<W> {
    pub fn new(inner: W, vocab_size: u32) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::invalid("vocab_size must be positive"));
        }
        let mut w = LeWriter::new(inner);
        w.bytes(LGT1_MAGIC)?;
        w.u32(vocab_size)?;
        Ok(Self { w, vocab_size })
    }

    pub fn write(&mut self, id: &str, m: &LogitMatrix) -> Result<()> {
        if m.cols() != self.vocab_size as usize {
            return Err(Error::VocabMismatch {
                left: self.vocab_size,
                right: m.cols() as u32,
            });
        }
        self.w.str(id)?;
        self.w.u32(m.rows() as u32)?;
        let mut buf = Vec::with_capacity(m.values().len() * 4);
        for v in m.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.w.bytes(&buf)?;
        Ok(())
    }

    pub fn finish(self) -> Result<W> {
        let mut inner = self.w.into_inner();
        inner.flush()?;
        Ok(inner)
    }
}

pub fn read_logits(path: &Path) -> Result<LogitReader<BufReader<File>>> {
    LogitReader::new(BufReader::new(File::open(path)?))
}

// ---------------------------------------------------------------------------
// Token corpora

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenFormat {
    /// `{"id": "...", "tokens": [1, 2, 3]}` per line.
    Jsonl,
    /// `id<TAB>whitespace separated text` per line, hashed with FNV-1a.
    Text,
}

impl TokenFormat {
    pub fn detect(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json") => Self::Jsonl,
            _ => Self::Text,
        }
    }
}

pub fn parse_token_docs<R: BufRead>(r: R, format: TokenFormat) -> Result<Vec<TokenDoc>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = || format!("line {}", i + 1);
        let doc = match format {
            TokenFormat::Jsonl => {
                serde_json::from_str::<TokenDoc>(&line).map_err(|e| Error::parse(loc(), e.to_string()))?
            }
            TokenFormat::Text => {
                let (id, text) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::parse(loc(), "expected id<TAB>text"))?;
                if id.is_empty() {
                    return Err(Error::parse(loc(), "empty id"));
                }
                TokenDoc {
                    id: id.to_string(),
                    tokens: hash_tokens(text),
                }
            }
        };
        out.push(doc);
    }
    Ok(out)
}

pub fn read_token_docs(path: &Path, format: Option<TokenFormat>) -> Result<Vec<TokenDoc>> {
    let format = format.unwrap_or_else(|| TokenFormat::detect(path));
    parse_token_docs(BufReader::new(File::open(path)?), format)
}

pub fn write_token_docs<W: Write>(mut w: W, docs: &[TokenDoc]) -> Result<()> {
    for d in docs {
        serde_json::to_writer(&mut w, d).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Teacher scores

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherRecord {
    pub qid: String,
    pub docids: Vec<String>,
    pub teacher: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student_init: Option<Vec<f64>>,
}

pub fn parse_teacher_scores<R: BufRead>(r: R) -> Result<Vec<TeacherRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("line {}", i + 1);
        let rec: TeacherRecord = serde_json::from_str(&line).map_err(|e| Error::parse(&loc, e.to_string()))?;
        if rec.docids.is_empty() || rec.docids.len() != rec.teacher.len() {
            return Err(Error::parse(
                &loc,
                format!("{} docids but {} teacher scores", rec.docids.len(), rec.teacher.len()),
            ));
        }
        if let Some(s) = &rec.student_init {
            if s.len() != rec.docids.len() {
                return Err(Error::parse(
                    &loc,
                    format!("{} docids but {} student scores", rec.docids.len(), s.len()),
                ));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_teacher_scores(path: &Path) -> Result<Vec<TeacherRecord>> {
    parse_teacher_scores(BufReader::new(File::open(path)?))
}

/// Stacks teacher records into a score batch. Records without
/// `student_init` use zero student scores.
pub fn teacher_batch(records: &[TeacherRecord], temperature: f64) -> Result<ScoreBatch> {
    let cols = records.first().map_or(0, |r| r.docids.len());
    let (mut student, mut teacher) = (Vec::new(), Vec::new());
    for r in records {
        if r.docids.len() != cols {
            return Err(Error::invalid(format!(
                "query {} has {} candidates, expected {cols}",
                r.qid,
                r.docids.len()
            )));
        }
        teacher.extend_from_slice(&r.teacher);
        match &r.student_init {
            Some(s) => student.extend_from_slice(s),
            None => student.extend(std::iter::repeat_n(0.0, cols)),
        }
    }
    ScoreBatch::new(records.len(), cols, student, teacher, temperature)
}
