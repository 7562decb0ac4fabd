//! Sparse vocabulary-indexed vectors and the primitives built on them:
//! log-saturated max pooling from logits, top-k pruning and dot products.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TermId = u32;

/// A sparse non-negative vector over a vocabulary of `vocab_size` terms.
///
/// Entries are stored as parallel arrays sorted strictly ascending by term.
/// Weights are always finite and strictly positive; a zero weight is
/// represented by absence.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVector {
    vocab_size: u32,
    terms: Vec<TermId>,
    weights: Vec<f32>,
}

/// Borrowed form of a sparse vector, used for forward-store entries.
#[derive(Clone, Copy, Debug)]
pub struct SparseView<'a> {
    pub terms: &'a [TermId],
    pub weights: &'a [f32],
}

impl<'a> SparseView<'a> {
    pub fn nnz(&self) -> usize {
        self.terms.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TermId, f32)> + 'a {
        self.terms.iter().copied().zip(self.weights.iter().copied())
    }
}

impl SparseVector {
    pub fn empty(vocab_size: u32) -> Self {
        Self {
            vocab_size,
            terms: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Builds a vector from entries already sorted by term. Fails on any
    /// invariant violation; zero weights are rejected rather than dropped.
    pub fn new(vocab_size: u32, entries: Vec<(TermId, f32)>) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::invalid("vocab_size must be positive"));
        }
        let mut terms = Vec::with_capacity(entries.len());
        let mut weights = Vec::with_capacity(entries.len());
        for (i, (t, w)) in entries.into_iter().enumerate() {
            check_entry(vocab_size, t, w)?;
            if let Some(&prev) = terms.last() {
                if t <= prev {
                    return Err(Error::invalid(format!(
                        "entry {i}: term {t} not strictly greater than previous term {prev}"
                    )));
                }
            }
            terms.push(t);
            weights.push(w);
        }
        Ok(Self {
            vocab_size,
            terms,
            weights,
        })
    }

    /// Builds a vector from entries in any order. Zero weights are dropped,
    /// repeated terms are an error.
    pub fn from_unsorted(vocab_size: u32, mut entries: Vec<(TermId, f32)>) -> Result<Self> {
        entries.retain(|&(_, w)| w != 0.0);
        entries.sort_unstable_by_key(|&(t, _)| t);
        if let Some(pair) = entries.windows(2).find(|p| p[0].0 == p[1].0) {
            return Err(Error::invalid(format!("duplicate term {}", pair[0].0)));
        }
        Self::new(vocab_size, entries)
    }

    /// Gathers the non-zero entries of a dense slice.
    pub fn from_dense(dense: &[f32]) -> Result<Self> {
        let vocab_size = u32::try_from(dense.len()).map_err(|_| Error::invalid("dense vector longer than u32::MAX"))?;
        let entries = dense
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(t, &w)| (t as TermId, w))
            .collect();
        Self::new(vocab_size, entries)
    }

    pub(crate) fn from_parts_unchecked(vocab_size: u32, terms: Vec<TermId>, weights: Vec<f32>) -> Self {
        debug_assert_eq!(terms.len(), weights.len());
        debug_assert!(terms.windows(2).all(|p| p[0] < p[1]));
        debug_assert!(weights.iter().all(|&w| w > 0.0 && w.is_finite()));
        Self {
            vocab_size,
            terms,
            weights,
        }
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn nnz(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[TermId] {
        &self.terms
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn view(&self) -> SparseView<'_> {
        SparseView {
            terms: &self.terms,
            weights: &self.weights,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (TermId, f32)> + '_ {
        self.view().iter()
    }

    pub fn weight(&self, term: TermId) -> Option<f32> {
        self.terms.binary_search(&term).ok().map(|i| self.weights[i])
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut dense = vec![0.0; self.vocab_size as usize];
        for (t, w) in self.iter() {
            dense[t as usize] = w;
        }
        dense
    }
}

fn check_entry(vocab_size: u32, t: TermId, w: f32) -> Result<()> {
    if t >= vocab_size {
        return Err(Error::invalid(format!(
            "term {t} out of range for vocab_size {vocab_size}"
        )));
    }
    if !w.is_finite() || w <= 0.0 {
        return Err(Error::invalid(format!(
            "term {t}: weight {w} is not a positive finite number"
        )));
    }
    Ok(())
}

/// Dense row-major `rows x cols` matrix of per-position vocabulary logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl LogitMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "logit matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::invalid(format!(
                "expected {} values for a {rows}x{cols} matrix, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite logit at row {}, col {}",
                i / cols,
                i % cols
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged logit rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// `log(1 + max(z, 0))`.
#[inline]
pub fn saturate(z: f32) -> f32 {
    if z > 0.0 {
        z.ln_1p()
    } else {
        0.0
    }
}

/// Running max-pool over logit rows. Rows can be pushed one at a time, so
/// callers never need the whole sequence in memory.
#[derive(Clone, Debug)]
pub struct Aggregator {
    pooled: Vec<f32>,
    rows_seen: usize,
}

impl Aggregator {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            pooled: vec![0.0; vocab_size],
            rows_seen: 0,
        }
    }

    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.pooled.len() {
            return Err(Error::invalid(format!(
                "row has {} logits, expected {}",
                row.len(),
                self.pooled.len()
            )));
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite logit at row {}, col {c}",
                self.rows_seen
            )));
        }
        for (acc, &z) in self.pooled.iter_mut().zip(row) {
            let a = saturate(z);
            if a > *acc {
                *acc = a;
            }
        }
        self.rows_seen += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<SparseVector> {
        if self.rows_seen == 0 || self.pooled.is_empty() {
            return Err(Error::invalid("cannot aggregate an empty logit sequence"));
        }
        SparseVector::from_dense(&self.pooled)
    }
}

/// Max-pools `log(1 + relu(z))` over sequence positions, one weight per
/// vocabulary term. Terms whose pooled weight is zero are omitted.
pub fn aggregate(logits: &LogitMatrix) -> Result<SparseVector> {
    let mut agg = Aggregator::new(logits.cols());
    for i in 0..logits.rows() {
        agg.push_row(logits.row(i))?;
    }
    agg.finish()
}

/// Query/document pruning budgets `(k_q, k_d)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub k_q: usize,
    pub k_d: usize,
}

impl PruneConfig {
    pub fn new(k_q: usize, k_d: usize) -> Result<Self> {
        if k_q == 0 || k_d == 0 {
            return Err(Error::invalid(format!(
                "pruning budgets must be >= 1, got ({k_q},{k_d})"
            )));
        }
        Ok(Self { k_q, k_d })
    }
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { k_q: 500, k_d: 1000 }
    }
}

impl std::fmt::Display for PruneConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.k_q, self.k_d)
    }
}

impl std::str::FromStr for PruneConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_start_matches('(').trim_end_matches(')');
        let (q, d) = s
            .split_once(',')
            .ok_or_else(|| Error::invalid(format!("expected k_q,k_d, got {s:?}")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<usize>()
                .map_err(|e| Error::invalid(format!("bad pruning budget {x:?}: {e}")))
        };
        Self::new(parse(q)?, parse(d)?)
    }
}

/// Keeps the `k` heaviest entries; ties go to the smaller term id.
pub fn prune(v: &SparseVector, k: usize) -> SparseVector {
    prune_view(v.view(), v.vocab_size, k)
}

pub(crate) fn prune_view(v: SparseView<'_>, vocab_size: u32, k: usize) -> SparseVector {
    if v.nnz() <= k {
        return SparseVector::from_parts_unchecked(vocab_size, v.terms.to_vec(), v.weights.to_vec());
    }
    let mut order: Vec<usize> = (0..v.nnz()).collect();
    let heavier = |&a: &usize, &b: &usize| v.weights[b].total_cmp(&v.weights[a]).then(v.terms[a].cmp(&v.terms[b]));
    if k > 0 {
        order.select_nth_unstable_by(k - 1, heavier);
    }
    order.truncate(k);
    order.sort_unstable();
    let terms = order.iter().map(|&i| v.terms[i]).collect();
    let weights = order.iter().map(|&i| v.weights[i]).collect();
    SparseVector::from_parts_unchecked(vocab_size, terms, weights)
}

/// Inner product over shared terms.
pub fn dot(u: &SparseVector, v: &SparseVector) -> Result<f32> {
    if u.vocab_size != v.vocab_size {
        return Err(Error::VocabMismatch {
            left: u.vocab_size,
            right: v.vocab_size,
        });
    }
    Ok(dot_view(u.view(), v.view()))
}

/// Merge-join inner product. Products are summed in ascending term order;
/// the exact search path relies on this order to produce identical bits.
#[inline]
pub fn dot_view(u: SparseView<'_>, v: SparseView<'_>) -> f32 {
    let (mut i, mut j) = (0, 0);
    let mut s = 0.0f32;
    while i < u.terms.len() && j < v.terms.len() {
        let (a, b) = (u.terms[i], v.terms[j]);
        if a == b {
            s += u.weights[i] * v.weights[j];
            i += 1;
            j += 1;
        } else if a < b {
            i += 1;
        } else {
            j += 1;
        }
    }
    s
}

/// Inner product of a sparse vector with a dense one, summed in ascending
/// term order. Gives the same bits as [`dot_view`] when `dense` is the
/// scattered form of a sparse vector.
#[inline]
pub fn dot_dense(dense: &[f32], v: SparseView<'_>) -> f32 {
    const LANES: usize = 8;
    let mut s = 0.0f32;
    let mut terms = v.terms.chunks_exact(LANES);
    let mut weights = v.weights.chunks_exact(LANES);
    // Most blocks miss the query entirely; test a whole block with
    // independent loads before touching the weights.
    for (tb, wb) in (&mut terms).zip(&mut weights) {
        let mut any = 0u32;
        for &t in tb {
            any |= dense[t as usize].to_bits();
        }
        if any != 0 {
            s = accumulate(dense, tb, wb, s);
        }
    }
    accumulate(dense, terms.remainder(), weights.remainder(), s)
}

#[inline(always)]
fn accumulate(dense: &[f32], terms: &[TermId], weights: &[f32], mut s: f32) -> f32 {
    for (&t, &w) in terms.iter().zip(weights) {
        let q = dense[t as usize];
        if q != 0.0 {
            s += q * w;
        }
    }
    s
}

/// A query scattered over the vocabulary for scoring many documents: dense
/// weights plus a one-bit-per-term membership mask. The mask (12.5 KB for a
/// 100k vocabulary) stays in L1, so document blocks that miss the query are
/// rejected without touching the dense weights. Scores are bit-identical to
/// [`dot_dense`] and [`dot_view`].
#[derive(Clone, Debug)]
#[cfg_attr(not(target_arch = "x86_64"), allow(dead_code))]
pub struct ScatteredQuery {
    dense: Vec<f32>,
    mask: Vec<u32>,
    terms: Vec<TermId>,
    simd: bool,
}

impl ScatteredQuery {
    pub fn new(vocab_size: u32) -> Self {
        Self {
            dense: vec![0.0; vocab_size as usize],
            mask: vec![0; (vocab_size as usize).div_ceil(32).max(1)],
            terms: Vec::new(),
            simd: avx2_available(),
        }
    }

    pub fn vocab_size(&self) -> u32 {
        self.dense.len() as u32
    }

    /// Replaces the current query with `q`.
    pub fn set(&mut self, q: &SparseVector) -> Result<()> {
        if q.vocab_size() != self.vocab_size() {
            return Err(Error::VocabMismatch {
                left: q.vocab_size(),
                right: self.vocab_size(),
            });
        }
        self.clear();
        for (t, w) in q.iter() {
            self.dense[t as usize] = w;
            self.mask[(t >> 5) as usize] |= 1 << (t & 31);
        }
        self.terms.extend_from_slice(q.terms());
        Ok(())
    }

    pub fn clear(&mut self) {
        for &t in &self.terms {
            self.dense[t as usize] = 0.0;
            self.mask[(t >> 5) as usize] = 0;
        }
        self.terms.clear();
    }

    pub fn dense(&self) -> &[f32] {
        &self.dense
    }

    /// Inner product with `v`, summed in ascending term order.
    ///
    /// # Panics
    /// If `v` holds a term outside the vocabulary.
    #[inline]
    pub fn dot(&self, v: SparseView<'_>) -> f32 {
        #[cfg(target_arch = "x86_64")]
        if self.simd {
            // SAFETY: `simd` is only set when AVX2 was detected at runtime.
            return unsafe { dot_masked_avx2(&self.dense, &self.mask, v) };
        }
        dot_dense(&self.dense, v)
    }
}

fn avx2_available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// Tests eight terms at a time against the mask with one gather; only blocks
/// with a hit fall through to the scalar sum.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_masked_avx2(dense: &[f32], mask: &[u32], v: SparseView<'_>) -> f32 {
    use std::arch::x86_64::*;

    const LANES: usize = 8;
    let n = v.terms.len().min(v.weights.len()) / LANES * LANES;
    // Word indexes are clamped so the gather stays inside `mask`; terms past
    // the vocabulary are caught by the check after the loop.
    let last_word = _mm256_set1_epi32(mask.len() as i32 - 1);
    let low_bits = _mm256_set1_epi32(31);
    let one = _mm256_set1_epi32(1);
    let mut seen_max = _mm256_setzero_si256();
    let mut s = 0.0f32;
    let mut i = 0;
    while i < n {
        let idx = _mm256_loadu_si256(v.terms.as_ptr().add(i).cast());
        seen_max = _mm256_max_epu32(seen_max, idx);
        let word = _mm256_min_epu32(_mm256_srli_epi32::<5>(idx), last_word);
        let bits = _mm256_i32gather_epi32::<4>(mask.as_ptr().cast(), word);
        let hit = _mm256_and_si256(_mm256_srlv_epi32(bits, _mm256_and_si256(idx, low_bits)), one);
        if _mm256_testz_si256(hit, hit) == 0 {
            s = accumulate(dense, &v.terms[i..i + LANES], &v.weights[i..i + LANES], s);
        }
        i += LANES;
    }
    let mut lanes = [0u32; LANES];
    _mm256_storeu_si256(lanes.as_mut_ptr().cast(), seen_max);
    let max_term = lanes.into_iter().max().unwrap_or(0);
    assert!(
        n == 0 || (max_term as usize) < dense.len(),
        "term {max_term} out of range for vocab_size {}",
        dense.len()
    );
    accumulate(dense, &v.terms[n..], &v.weights[n..], s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DensityStats {
    pub mean_nnz: f64,
    pub max_nnz: usize,
    /// Mean over all stored entries; 0 when there are none.
    pub mean_weight: f64,
}

pub fn density_stats(vs: &[SparseVector]) -> Result<DensityStats> {
    if vs.is_empty() {
        return Err(Error::invalid("density_stats needs at least one vector"));
    }
    let total: usize = vs.iter().map(SparseVector::nnz).sum();
    let weight_sum: f64 = vs.iter().flat_map(|v| v.weights.iter()).map(|&w| f64::from(w)).sum();
    Ok(DensityStats {
        mean_nnz: total as f64 / vs.len() as f64,
        max_nnz: vs.iter().map(SparseVector::nnz).max().unwrap_or(0),
        mean_weight: if total == 0 { 0.0 } else { weight_sum / total as f64 },
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use proptest::prelude::*;

    fn sv(vocab: u32, entries: &[(u32, f32)]) -> SparseVector {
        SparseVector::new(vocab, entries.to_vec()).unwrap()
    }

    #[test]
    fn aggregate_nonpositive_logits_is_empty() {
        let m = LogitMatrix::from_rows(&[vec![-1.0, 0.0, -3.5], vec![0.0, -0.1, 0.0]]).unwrap();
        let v = aggregate(&m).unwrap();
        assert!(v.is_empty());
        assert_eq!(v.vocab_size(), 3);
    }

    #[test]
    fn aggregate_hand_example() {
        let m = LogitMatrix::from_rows(&[vec![1.0, -1.0, 0.0], vec![0.0, 2.0, -3.0]]).unwrap();
        let v = aggregate(&m).unwrap();
        assert_eq!(v.terms(), &[0, 1]);
        assert!((v.weights()[0] - std::f32::consts::LN_2).abs() < 1e-6);
        assert!((v.weights()[1] - 3.0f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn aggregate_rejects_empty_and_nonfinite() {
        assert!(LogitMatrix::new(0, 3, vec![]).is_err());
        assert!(LogitMatrix::new(2, 0, vec![]).is_err());
        assert!(LogitMatrix::new(1, 2, vec![1.0, f32::NAN]).is_err());
        assert!(Aggregator::new(3).finish().is_err());
    }

    #[test]
    fn prune_examples() {
        let v = sv(10, &[(3, 1.0), (7, 2.0)]);
        assert_eq!(prune(&v, 5), v);

        let v = sv(10, &[(1, 0.5), (2, 0.9), (9, 0.9)]);
        assert_eq!(prune(&v, 2), sv(10, &[(2, 0.9), (9, 0.9)]));
        // tie at 0.9 goes to the smaller term
        assert_eq!(prune(&v, 1), sv(10, &[(2, 0.9)]));

        assert!(prune(&SparseVector::empty(10), 10).is_empty());
    }

    #[test]
    fn dot_examples() {
        let e = SparseVector::empty(10);
        let u = sv(10, &[(1, 2.0), (4, 1.0)]);
        let v = sv(10, &[(1, 0.5), (5, 9.0)]);
        assert_eq!(dot(&e, &u).unwrap(), 0.0);
        assert_eq!(dot(&u, &v).unwrap(), 1.0);
        assert!(matches!(
            dot(&u, &SparseVector::empty(11)),
            Err(Error::VocabMismatch { .. })
        ));
    }

    #[test]
    fn density_examples() {
        let e = SparseVector::empty(4);
        assert_eq!(density_stats(&[e.clone(), e]).unwrap().mean_nnz, 0.0);

        let s = density_stats(&[sv(4, &[(0, 1.0)]), sv(4, &[(0, 1.0), (1, 3.0)])]).unwrap();
        assert_eq!(s.mean_nnz, 1.5);
        assert_eq!(s.max_nnz, 2);
        assert!((s.mean_weight - 5.0 / 3.0).abs() < 1e-12);

        let big = SparseVector::new(1000, (0..400).map(|t| (t, 1.0)).collect()).unwrap();
        assert_eq!(density_stats(&[big]).unwrap().mean_nnz, 400.0);

        assert!(density_stats(&[]).is_err());
    }

    #[test]
    fn constructor_rejects_bad_entries() {
        assert!(SparseVector::new(5, vec![(5, 1.0)]).is_err());
        assert!(SparseVector::new(5, vec![(1, 0.0)]).is_err());
        assert!(SparseVector::new(5, vec![(1, -1.0)]).is_err());
        assert!(SparseVector::new(5, vec![(2, 1.0), (1, 1.0)]).is_err());
        assert!(SparseVector::new(5, vec![(1, 1.0), (1, 2.0)]).is_err());
        assert!(SparseVector::from_unsorted(5, vec![(1, 1.0), (1, 2.0)]).is_err());
        let v = SparseVector::from_unsorted(5, vec![(3, 1.0), (1, 2.0), (2, 0.0)]).unwrap();
        assert_eq!(v.terms(), &[1, 3]);
    }

    #[test]
    fn prune_config_parses() {
        assert_eq!(
            "10,100".parse::<PruneConfig>().unwrap(),
            PruneConfig::new(10, 100).unwrap()
        );
        assert_eq!("(500, 1000)".parse::<PruneConfig>().unwrap(), PruneConfig::default());
        assert!("0,5".parse::<PruneConfig>().is_err());
        assert!("5".parse::<PruneConfig>().is_err());
    }

    fn arb_vector(vocab: u32, max_nnz: usize) -> impl Strategy<Value = SparseVector> {
        prop::collection::btree_map(0..vocab, 0.01f32..10.0, 0..max_nnz)
            .prop_map(move |m| SparseVector::new(vocab, m.into_iter().collect()).unwrap())
    }

    fn arb_matrix() -> impl Strategy<Value = Vec<Vec<f32>>> {
        (1usize..6, 1usize..12)
            .prop_flat_map(|(n, cols)| prop::collection::vec(prop::collection::vec(-3.0f32..3.0, cols), n))
    }

    proptest! {
        #[test]
        fn aggregate_is_nonnegative_and_matches_cellwise_max(rows in arb_matrix()) {
            let v = aggregate(&LogitMatrix::from_rows(&rows).unwrap()).unwrap();
            prop_assert!(v.weights().iter().all(|&w| w > 0.0));
            for t in 0..rows[0].len() {
                let want = rows.iter().map(|r| saturate(r[t])).fold(0.0f32, f32::max);
                prop_assert_eq!(v.weight(t as u32).unwrap_or(0.0), want);
            }
        }

        #[test]
        fn aggregate_ignores_row_order(rows in arb_matrix(), seed in any::<u64>()) {
            let mut shuffled = rows.clone();
            let n = shuffled.len();
            shuffled.rotate_left((seed as usize) % n);
            let a = aggregate(&LogitMatrix::from_rows(&rows).unwrap()).unwrap();
            let b = aggregate(&LogitMatrix::from_rows(&shuffled).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn extra_row_dominates(rows in arb_matrix(), extra in prop::collection::vec(-3.0f32..3.0, 12)) {
            let cols = rows[0].len();
            let base = aggregate(&LogitMatrix::from_rows(&rows).unwrap()).unwrap().to_dense();
            let mut more = rows.clone();
            more.push(extra[..cols].to_vec());
            let grown = aggregate(&LogitMatrix::from_rows(&more).unwrap()).unwrap().to_dense();
            prop_assert!(base.iter().zip(&grown).all(|(a, b)| b >= a));
        }

        #[test]
        fn prune_is_idempotent_and_bounded(v in arb_vector(200, 60), k in 1usize..80) {
            let p = prune(&v, k);
            prop_assert!(p.nnz() <= k);
            prop_assert_eq!(prune(&p, k), p.clone());
            // every kept weight is at least every dropped one
            let min_kept = p.weights().iter().copied().fold(f32::INFINITY, f32::min);
            for (t, w) in v.iter() {
                if p.weight(t).is_none() {
                    prop_assert!(w <= min_kept);
                }
            }
        }

        #[test]
        fn pruning_never_raises_scores(u in arb_vector(100, 40), v in arb_vector(100, 40),
                                       kq in 1usize..40, kd in 1usize..40) {
            let full = dot(&u, &v).unwrap();
            let pruned = dot(&prune(&u, kq), &prune(&v, kd)).unwrap();
            prop_assert!(pruned <= full);
        }

        #[test]
        fn dense_dot_is_bit_identical(u in arb_vector(100, 40), v in arb_vector(100, 40)) {
            let dense = u.to_dense();
            prop_assert_eq!(dot_dense(&dense, v.view()).to_bits(), dot(&u, &v).unwrap().to_bits());
        }

        #[test]
        fn scattered_dot_is_bit_identical(
            vocab in 1u32..700,
            seeds in prop::collection::vec((0.01f32..10.0, 0usize..150), 3),
        ) {
            let make = |(w, n): (f32, usize), salt: u32| {
                let entries = (0..n as u32)
                    .map(|i| (i.wrapping_mul(2654435761).wrapping_add(salt) % vocab, w + i as f32 * 0.37))
                    .collect::<BTreeMap<_, _>>();
                SparseVector::new(vocab, entries.into_iter().collect()).unwrap()
            };
            let mut sq = ScatteredQuery::new(vocab);
            // reuse one scatter for several queries, as the searchers do
            for (i, &seed) in seeds.iter().enumerate() {
                let q = make(seed, i as u32);
                sq.set(&q).unwrap();
                for (j, &other) in seeds.iter().enumerate() {
                    let d = make(other, 7 + j as u32);
                    prop_assert_eq!(sq.dot(d.view()).to_bits(), dot(&q, &d).unwrap().to_bits());
                }
            }
            sq.clear();
            prop_assert!(sq.dense().iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn scattered_query_checks_vocab() {
        let mut sq = ScatteredQuery::new(64);
        assert!(matches!(
            sq.set(&SparseVector::empty(65)),
            Err(Error::VocabMismatch { left: 65, right: 64 })
        ));
        let q = SparseVector::new(64, vec![(3, 1.0)]).unwrap();
        sq.set(&q).unwrap();
        let terms: Vec<u32> = (0..16).collect();
        let weights = vec![1.0; 16];
        assert_eq!(
            sq.dot(SparseView {
                terms: &terms,
                weights: &weights
            }),
            1.0
        );
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn scattered_dot_rejects_foreign_terms() {
        let mut sq = ScatteredQuery::new(40);
        sq.set(&SparseVector::new(40, vec![(1, 1.0)]).unwrap()).unwrap();
        let terms: Vec<u32> = (100..116).collect();
        let weights = vec![1.0; 16];
        sq.dot(SparseView {
            terms: &terms,
            weights: &weights,
        });
    }
}
