//! Impact-ordered inverted index with a forward store of pruned documents.
//!
//! Postings for each term are sorted by descending impact (ties by ascending
//! document ordinal), which lets approximate search stop scanning a list as
//! soon as the remaining impacts are too small to matter. The forward store
//! holds the same `k_d`-pruned vectors and is used to rescore candidates.
//!
//! On-disk layout (all integers little-endian):
//!
//! ```text
//! "LSRI" u32 version=1 u32 vocab_size u32 doc_count u32 k_d
//! doc_count x (u32 len, UTF-8 id)
//! u32 term_count, term_count x (u32 term_id, u32 len, len x (u32 doc_ord, f32 impact))
//! doc_count x (u32 nnz, nnz x (u32 term, f32 weight))
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{read_pairs, LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::sparse::{prune, SparseVector, SparseView, TermId};

pub const INDEX_MAGIC: &[u8; 4] = b"LSRI";
pub const INDEX_VERSION: u32 = 1;

/// Largest vocabulary an index accepts; per-term tables are dense.
pub const MAX_INDEX_VOCAB: u32 = 1 << 26;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Posting {
    pub doc_ord: u32,
    pub impact: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvertedIndex {
    vocab_size: u32,
    k_d: u32,
    doc_ids: Vec<String>,
    // CSR postings, indexed by term id
    post_offsets: Vec<usize>,
    post_docs: Vec<u32>,
    post_impacts: Vec<f32>,
    max_impact: Vec<f32>,
    // CSR forward store, indexed by doc ordinal
    fwd_offsets: Vec<usize>,
    fwd_terms: Vec<TermId>,
    fwd_weights: Vec<f32>,
}

/// Accumulates documents in ingestion order; ordinals are assigned as
/// documents arrive.
pub struct IndexBuilder {
    vocab_size: u32,
    k_d: usize,
    doc_ids: Vec<String>,
    seen: HashSet<String>,
    fwd_offsets: Vec<usize>,
    fwd_terms: Vec<TermId>,
    fwd_weights: Vec<f32>,
}

impl IndexBuilder {
    pub fn new(vocab_size: u32, k_d: usize) -> Result<Self> {
        if vocab_size == 0 || vocab_size > MAX_INDEX_VOCAB {
            return Err(Error::invalid(format!(
                "index vocab_size must be in 1..={MAX_INDEX_VOCAB}, got {vocab_size}"
            )));
        }
        if k_d == 0 {
            return Err(Error::invalid("k_d must be >= 1"));
        }
        Ok(Self {
            vocab_size,
            k_d,
            doc_ids: Vec::new(),
            seen: HashSet::new(),
            fwd_offsets: vec![0],
            fwd_terms: Vec::new(),
            fwd_weights: Vec::new(),
        })
    }

    pub fn add(&mut self, doc_id: impl Into<String>, v: &SparseVector) -> Result<u32> {
        let doc_id = doc_id.into();
        if v.vocab_size() != self.vocab_size {
            return Err(Error::VocabMismatch {
                left: self.vocab_size,
                right: v.vocab_size(),
            });
        }
        if !self.seen.insert(doc_id.clone()) {
            return Err(Error::DuplicateId(doc_id));
        }
        let ord =
            u32::try_from(self.doc_ids.len()).map_err(|_| Error::invalid("too many documents for u32 ordinals"))?;
        let p = prune(v, self.k_d);
        self.fwd_terms.extend_from_slice(p.terms());
        self.fwd_weights.extend_from_slice(p.weights());
        self.fwd_offsets.push(self.fwd_terms.len());
        self.doc_ids.push(doc_id);
        Ok(ord)
    }

    pub fn finish(self) -> InvertedIndex {
        let vocab = self.vocab_size as usize;
        let mut counts = vec![0usize; vocab + 1];
        for &t in &self.fwd_terms {
            counts[t as usize + 1] += 1;
        }
        for t in 0..vocab {
            counts[t + 1] += counts[t];
        }
        let post_offsets = counts;
        let total = self.fwd_terms.len();
        let mut cursor = post_offsets.clone();
        let mut post_docs = vec![0u32; total];
        let mut post_impacts = vec![0f32; total];
        for d in 0..self.doc_ids.len() {
            for i in self.fwd_offsets[d]..self.fwd_offsets[d + 1] {
                let t = self.fwd_terms[i] as usize;
                post_docs[cursor[t]] = d as u32;
                post_impacts[cursor[t]] = self.fwd_weights[i];
                cursor[t] += 1;
            }
        }
        let mut max_impact = vec![0f32; vocab];
        let mut scratch: Vec<(u32, f32)> = Vec::new();
        for t in 0..vocab {
            let (lo, hi) = (post_offsets[t], post_offsets[t + 1]);
            if lo == hi {
                continue;
            }
            scratch.clear();
            scratch.extend(
                post_docs[lo..hi]
                    .iter()
                    .copied()
                    .zip(post_impacts[lo..hi].iter().copied()),
            );
            // ordinals are already ascending, so a stable sort keeps ties in order
            scratch.sort_by(|a, b| b.1.total_cmp(&a.1));
            for (k, &(d, w)) in scratch.iter().enumerate() {
                post_docs[lo + k] = d;
                post_impacts[lo + k] = w;
            }
            max_impact[t] = scratch[0].1;
        }
        InvertedIndex {
            vocab_size: self.vocab_size,
            k_d: u32::try_from(self.k_d).unwrap_or(u32::MAX),
            doc_ids: self.doc_ids,
            post_offsets,
            post_docs,
            post_impacts,
            max_impact,
            fwd_offsets: self.fwd_offsets,
            fwd_terms: self.fwd_terms,
            fwd_weights: self.fwd_weights,
        }
    }
}

/// Prunes every document to `k_d` terms and inverts the result.
pub fn build_index<I, S>(vocab_size: u32, k_d: usize, corpus: I) -> Result<InvertedIndex>
where
    I: IntoIterator<Item = (S, SparseVector)>,
    S: Into<String>,
{
    let mut b = IndexBuilder::new(vocab_size, k_d)?;
    for (id, v) in corpus {
        b.add(id, &v)?;
    }
    Ok(b.finish())
}

impl InvertedIndex {
    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn k_d(&self) -> u32 {
        self.k_d
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_id(&self, ord: u32) -> &str {
        &self.doc_ids[ord as usize]
    }

    /// Postings for `term` as parallel (ordinal, impact) slices in
    /// descending impact order. Out-of-range terms have no postings.
    pub fn postings(&self, term: TermId) -> (&[u32], &[f32]) {
        let t = term as usize;
        if t >= self.max_impact.len() {
            return (&[], &[]);
        }
        let (lo, hi) = (self.post_offsets[t], self.post_offsets[t + 1]);
        (&self.post_docs[lo..hi], &self.post_impacts[lo..hi])
    }

    pub fn posting_list(&self, term: TermId) -> Vec<Posting> {
        let (docs, impacts) = self.postings(term);
        docs.iter()
            .zip(impacts)
            .map(|(&doc_ord, &impact)| Posting { doc_ord, impact })
            .collect()
    }

    /// Largest impact in the list for `term`; 0 for an empty list.
    pub fn max_impact(&self, term: TermId) -> f32 {
        self.max_impact.get(term as usize).copied().unwrap_or(0.0)
    }

    pub fn forward(&self, ord: u32) -> SparseView<'_> {
        let d = ord as usize;
        let (lo, hi) = (self.fwd_offsets[d], self.fwd_offsets[d + 1]);
        SparseView {
            terms: &self.fwd_terms[lo..hi],
            weights: &self.fwd_weights[lo..hi],
        }
    }

    pub fn forward_vector(&self, ord: u32) -> SparseVector {
        let v = self.forward(ord);
        SparseVector::from_parts_unchecked(self.vocab_size, v.terms.to_vec(), v.weights.to_vec())
    }

    pub fn total_postings(&self) -> usize {
        self.post_docs.len()
    }

    pub fn non_empty_terms(&self) -> usize {
        self.post_offsets.windows(2).filter(|w| w[1] > w[0]).count()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = LeWriter::new(w);
        w.bytes(INDEX_MAGIC)?;
        w.u32(INDEX_VERSION)?;
        w.u32(self.vocab_size)?;
        w.u32(self.doc_ids.len() as u32)?;
        w.u32(self.k_d)?;
        for id in &self.doc_ids {
            w.str(id)?;
        }
        w.u32(self.non_empty_terms() as u32)?;
        for t in 0..self.vocab_size {
            let (docs, impacts) = self.postings(t);
            if docs.is_empty() {
                continue;
            }
            w.u32(t)?;
            w.u32(docs.len() as u32)?;
            w.pairs(docs, impacts)?;
        }
        for d in 0..self.doc_ids.len() {
            let f = self.forward(d as u32);
            w.u32(f.nnz() as u32)?;
            w.pairs(f.terms, f.weights)?;
        }
        Ok(())
    }

    /// Parses and validates an index stream. Structural problems are
    /// reported as [`Error::Format`], short input as [`Error::Truncated`].
    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = LeReader::new(r);
        let magic = r.array::<4>("magic")?;
        if &magic != INDEX_MAGIC {
            return Err(Error::Format(format!("bad index magic {magic:?}")));
        }
        let version = r.u32("version")?;
        if version != INDEX_VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let vocab_size = r.u32("vocab_size")?;
        if vocab_size == 0 || vocab_size > MAX_INDEX_VOCAB {
            return Err(Error::Format(format!("invalid vocab_size {vocab_size}")));
        }
        let doc_count = r.u32("doc_count")? as usize;
        let k_d = r.u32("k_d")?;

        let mut doc_ids = Vec::with_capacity(doc_count.min(1 << 20));
        let mut seen = HashSet::with_capacity(doc_count.min(1 << 20));
        for _ in 0..doc_count {
            let id = r.str("doc id")?;
            if !seen.insert(id.clone()) {
                return Err(Error::Format(format!("duplicate doc id {id:?}")));
            }
            doc_ids.push(id);
        }
        drop(seen);

        let vocab = vocab_size as usize;
        let term_count = r.u32("term_count")? as usize;
        let mut post_offsets = vec![0usize; vocab + 1];
        let mut post_docs = Vec::new();
        let mut post_impacts = Vec::new();
        let mut max_impact = vec![0f32; vocab];
        let mut prev_term: Option<u32> = None;
        for _ in 0..term_count {
            let t = r.u32("term id")?;
            if t >= vocab_size || prev_term.is_some_and(|p| t <= p) {
                return Err(Error::Format(format!("postings term {t} out of order or range")));
            }
            let len = r.u32("postings length")? as usize;
            let start = post_docs.len();
            read_pairs(&mut r, len, &mut post_docs, &mut post_impacts, "postings")?;
            for i in start..post_docs.len() {
                let (d, w) = (post_docs[i], post_impacts[i]);
                if d as usize >= doc_count || !(w > 0.0 && w.is_finite()) {
                    return Err(Error::Format(format!("invalid posting ({d}, {w}) for term {t}")));
                }
                if i > start {
                    let (pd, pw) = (post_docs[i - 1], post_impacts[i - 1]);
                    if w > pw || (w == pw && d <= pd) {
                        return Err(Error::Format(format!("postings for term {t} not impact-ordered")));
                    }
                }
            }
            if len > 0 {
                max_impact[t as usize] = post_impacts[start];
            }
            let from = prev_term.map_or(0, |p| p as usize + 1);
            for o in &mut post_offsets[from + 1..=t as usize] {
                *o = start;
            }
            post_offsets[t as usize + 1] = post_docs.len();
            prev_term = Some(t);
        }
        let from = prev_term.map_or(0, |p| p as usize + 1);
        for o in &mut post_offsets[from + 1..] {
            *o = post_docs.len();
        }

        let mut fwd_offsets = Vec::with_capacity(doc_count + 1);
        fwd_offsets.push(0);
        let mut fwd_terms = Vec::with_capacity(post_docs.len());
        let mut fwd_weights = Vec::with_capacity(post_docs.len());
        for d in 0..doc_count {
            let nnz = r.u32("forward nnz")? as usize;
            let start = fwd_terms.len();
            read_pairs(&mut r, nnz, &mut fwd_terms, &mut fwd_weights, "forward entries")?;
            for i in start..fwd_terms.len() {
                let (t, w) = (fwd_terms[i], fwd_weights[i]);
                let ordered = i == start || fwd_terms[i - 1] < t;
                if t >= vocab_size || !ordered || !(w > 0.0 && w.is_finite()) {
                    return Err(Error::Format(format!("invalid forward entry ({t}, {w}) in doc {d}")));
                }
            }
            fwd_offsets.push(fwd_terms.len());
        }
        if fwd_terms.len() != post_docs.len() {
            return Err(Error::Format(format!(
                "forward store has {} entries but postings have {}",
                fwd_terms.len(),
                post_docs.len()
            )));
        }
        if r.has_more()? {
            return Err(Error::Format("trailing bytes after forward section".into()));
        }
        Ok(Self {
            vocab_size,
            k_d,
            doc_ids,
            post_offsets,
            post_docs,
            post_impacts,
            max_impact,
            fwd_offsets,
            fwd_terms,
            fwd_weights,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(vocab: u32, entries: &[(u32, f32)]) -> SparseVector {
        SparseVector::new(vocab, entries.to_vec()).unwrap()
    }

    #[test]
    fn empty_corpus() {
        let idx = build_index::<_, String>(8, 10, Vec::new()).unwrap();
        assert_eq!(idx.doc_count(), 0);
        assert_eq!(idx.total_postings(), 0);
        for t in 0..8 {
            assert!(idx.postings(t).0.is_empty());
            assert_eq!(idx.max_impact(t), 0.0);
        }
    }

    #[test]
    fn prunes_before_inverting() {
        let idx = build_index(
            4,
            1,
            vec![("a", sv(4, &[(1, 2.0)])), ("b", sv(4, &[(1, 1.0), (3, 5.0)]))],
        )
        .unwrap();
        assert_eq!(
            idx.posting_list(1),
            vec![Posting {
                doc_ord: 0,
                impact: 2.0
            }]
        );
        assert_eq!(
            idx.posting_list(3),
            vec![Posting {
                doc_ord: 1,
                impact: 5.0
            }]
        );
        assert_eq!(idx.max_impact(3), 5.0);
        assert_eq!(idx.total_postings(), 2);
    }

    #[test]
    fn postings_ordered_by_impact_then_ordinal() {
        let docs = vec![
            ("a", sv(3, &[(0, 1.0)])),
            ("b", sv(3, &[(0, 3.0)])),
            ("c", sv(3, &[(0, 1.0), (2, 1.0)])),
        ];
        let idx = build_index(3, 10, docs).unwrap();
        let (d, w) = idx.postings(0);
        assert_eq!(d, &[1, 0, 2]);
        assert_eq!(w, &[3.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_duplicates_and_vocab_mismatch() {
        let dup = build_index(3, 10, vec![("a", sv(3, &[(0, 1.0)])), ("a", sv(3, &[(1, 1.0)]))]);
        assert!(matches!(dup, Err(Error::DuplicateId(id)) if id == "a"));
        let mismatch = build_index(3, 10, vec![("a", sv(4, &[(0, 1.0)]))]);
        assert!(matches!(mismatch, Err(Error::VocabMismatch { .. })));
    }

    #[test]
    fn round_trips_and_rejects_corruption() {
        let idx = build_index(
            6,
            2,
            vec![
                ("x", sv(6, &[(0, 0.5), (2, 1.5), (5, 0.25)])),
                ("y", sv(6, &[(2, 2.0)])),
                ("z", SparseVector::empty(6)),
            ],
        )
        .unwrap();
        let bytes = idx.to_bytes();
        assert_eq!(InvertedIndex::read_from(&bytes[..]).unwrap(), idx);

        let empty = build_index::<_, String>(6, 2, Vec::new()).unwrap();
        assert_eq!(InvertedIndex::read_from(&empty.to_bytes()[..]).unwrap(), empty);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(InvertedIndex::read_from(&bad[..]), Err(Error::Format(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(InvertedIndex::read_from(&bad[..]), Err(Error::Format(_))));

        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                InvertedIndex::read_from(&bytes[..cut]),
                Err(Error::Truncated(_))
            ));
        }

        let mut trailing = bytes;
        trailing.push(0);
        assert!(matches!(InvertedIndex::read_from(&trailing[..]), Err(Error::Format(_))));
    }
}
