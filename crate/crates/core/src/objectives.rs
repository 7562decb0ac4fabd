//! Distillation and sparsity objectives with analytic gradients.
//!
//! * KL distillation: per query row, `T = softmax(teacher / tau)`,
//!   `S = softmax(student / tau)` and `loss = mean_rows sum_i T_i ln(T_i / S_i)`.
//!   The gradient with respect to a student score is `(S_j - T_j) / (tau * B)`.
//! * FLOPs penalty: `a_t = mean_i u_{i,t}`, `loss = sum_t a_t^2`,
//!   `d loss / d u_{i,t} = 2 a_t / B`.
//!
//! [`toy_distill`] trains a tiny bag-of-tokens encoder with both objectives
//! to show the regularizer at work.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{aggregate, density_stats, LogitMatrix, SparseVector};

/// Teacher and student scores for `rows` queries with `cols` candidates each
/// (one positive plus negatives), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreBatch {
    rows: usize,
    cols: usize,
    student: Vec<f64>,
    teacher: Vec<f64>,
    temperature: f64,
}

impl ScoreBatch {
    pub fn new(rows: usize, cols: usize, student: Vec<f64>, teacher: Vec<f64>, temperature: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("score batch must be non-empty"));
        }
        if student.len() != rows * cols || teacher.len() != rows * cols {
            return Err(Error::invalid(format!(
                "expected {} scores per side, got student={} teacher={}",
                rows * cols,
                student.len(),
                teacher.len()
            )));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if student.iter().chain(&teacher).any(|v| !v.is_finite()) {
            return Err(Error::invalid("scores must be finite"));
        }
        Ok(Self {
            rows,
            cols,
            student,
            teacher,
            temperature,
        })
    }

    pub fn from_rows(student: &[Vec<f64>], teacher: &[Vec<f64>], temperature: f64) -> Result<Self> {
        let cols = student.first().map_or(0, Vec::len);
        if student.len() != teacher.len() || student.iter().chain(teacher).any(|r| r.len() != cols) {
            return Err(Error::invalid("student and teacher rows must share one shape"));
        }
        Self::new(student.len(), cols, student.concat(), teacher.concat(), temperature)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn student(&self) -> &[f64] {
        &self.student
    }

    pub fn teacher(&self) -> &[f64] {
        &self.teacher
    }

    pub fn with_student(&self, student: Vec<f64>) -> Result<Self> {
        Self::new(self.rows, self.cols, student, self.teacher.clone(), self.temperature)
    }

    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.student.clone(),
            self.teacher.clone(),
            temperature,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Log-softmax of `xs / tau`, shifted by the max for stability.
fn log_softmax(xs: &[f64], tau: f64, out: &mut Vec<f64>) {
    out.clear();
    let max = xs.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x / tau));
    let lse = xs.iter().map(|&x| (x / tau - max).exp()).sum::<f64>().ln() + max;
    out.extend(xs.iter().map(|&x| x / tau - lse));
}

pub fn kld_loss(batch: &ScoreBatch) -> Result<LossAndGrad> {
    let (b, c, tau) = (batch.rows, batch.cols, batch.temperature);
    let mut loss = 0.0;
    let mut grad = vec![0.0; b * c];
    let (mut log_t, mut log_s) = (Vec::with_capacity(c), Vec::with_capacity(c));
    for r in 0..b {
        let span = r * c..(r + 1) * c;
        log_softmax(&batch.teacher[span.clone()], tau, &mut log_t);
        log_softmax(&batch.student[span.clone()], tau, &mut log_s);
        for j in 0..c {
            let t = log_t[j].exp();
            if t > 0.0 {
                loss += t * (log_t[j] - log_s[j]);
            }
            grad[span.start + j] = (log_s[j].exp() - t) / (tau * b as f64);
        }
    }
    let loss = loss / b as f64;
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("KL loss is {loss}")));
    }
    Ok(LossAndGrad { loss, grad })
}

/// Non-negative activations for `rows` inputs over `cols` vocabulary terms.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationBatch {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ActivationBatch {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::invalid(format!(
                "activation batch {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!(
                "activation at row {}, col {} is {} (must be finite and >= 0)",
                i / cols,
                i % cols,
                values[i]
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged activation rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_sparse(vs: &[SparseVector]) -> Result<Self> {
        let cols = vs.first().map_or(0, |v| v.vocab_size() as usize);
        let mut values = vec![0.0; vs.len() * cols];
        for (r, v) in vs.iter().enumerate() {
            if v.vocab_size() as usize != cols {
                return Err(Error::invalid("activation vectors must share vocab_size"));
            }
            for (t, w) in v.iter() {
                values[r * cols + t as usize] = f64::from(w);
            }
        }
        Self::new(vs.len(), cols, values)
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn flops_penalty(acts: &ActivationBatch) -> LossAndGrad {
    let (b, n) = (acts.rows, acts.cols);
    let mut mean = vec![0.0; n];
    for row in acts.values.chunks_exact(n) {
        for (m, &u) in mean.iter_mut().zip(row) {
            *m += u;
        }
    }
    for m in &mut mean {
        *m /= b as f64;
    }
    let loss = mean.iter().map(|a| a * a).sum();
    let row_grad: Vec<f64> = mean.iter().map(|a| 2.0 * a / b as f64).collect();
    let mut grad = Vec::with_capacity(b * n);
    for _ in 0..b {
        grad.extend_from_slice(&row_grad);
    }
    LossAndGrad { loss, grad }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub kld_weight: f64,
    /// FLOPs weights are held constant for the whole run (no warm-up ramp).
    pub lambda_q: f64,
    pub lambda_d: f64,
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kld_weight: 0.5,
            lambda_q: 1e-4,
            lambda_d: 1e-4,
            temperature: 300.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kld_weight", self.kld_weight),
            ("lambda_q", self.lambda_q),
            ("lambda_d", self.lambda_d),
            ("temperature", self.temperature),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub kld: f64,
    pub flops_q: f64,
    pub flops_d: f64,
    pub total: f64,
}

/// `kld_weight * KL + lambda_q * FLOPs(q) + lambda_d * FLOPs(d)`, with the KL
/// term evaluated at `cfg.temperature`.
pub fn combined_loss(
    batch: &ScoreBatch,
    q_acts: &ActivationBatch,
    d_acts: &ActivationBatch,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    if q_acts.cols != d_acts.cols {
        return Err(Error::invalid("query and document activations differ in width"));
    }
    let kld = kld_loss(&batch.with_temperature(cfg.temperature)?)?.loss;
    let flops_q = flops_penalty(q_acts).loss;
    let flops_d = flops_penalty(d_acts).loss;
    Ok(LossBreakdown {
        kld,
        flops_q,
        flops_d,
        total: cfg.kld_weight * kld + cfg.lambda_q * flops_q + cfg.lambda_d * flops_d,
    })
}

// ---------------------------------------------------------------------------
// Toy distillation

/// One training query with its candidates; candidate 0 is the positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyExample {
    pub query: Vec<u32>,
    pub docs: Vec<Vec<u32>>,
    pub teacher: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpus {
    pub vocab_size: usize,
    pub train: Vec<ToyExample>,
    pub heldout: Vec<ToyExample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub seed: u64,
    pub vocab_size: usize,
    /// Tokens `t` and `t'` share a concept when `t % concepts == t' % concepts`.
    pub concepts: usize,
    pub concepts_per_text: usize,
    pub text_len: usize,
    pub negatives: usize,
    pub train: usize,
    pub heldout: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            seed: 1,
            vocab_size: 48,
            concepts: 12,
            concepts_per_text: 2,
            text_len: 6,
            negatives: 7,
            train: 64,
            heldout: 16,
        }
    }
}

/// Queries and documents are drawn from small concept sets; the teacher
/// scores a pair by the fraction of query concepts the document covers.
pub fn toy_corpus(spec: &ToySpec) -> Result<ToyCorpus> {
    if spec.concepts == 0
        || spec.vocab_size < spec.concepts
        || spec.concepts_per_text == 0
        || spec.concepts_per_text > spec.concepts
        || spec.text_len == 0
    {
        return Err(Error::invalid("inconsistent toy corpus spec"));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let per_concept = spec.vocab_size / spec.concepts;
    let pick_concepts = |rng: &mut Xoshiro256PlusPlus| {
        let mut cs = Vec::with_capacity(spec.concepts_per_text);
        while cs.len() < spec.concepts_per_text {
            let c = rng.random_range(0..spec.concepts);
            if !cs.contains(&c) {
                cs.push(c);
            }
        }
        cs
    };
    let text = |rng: &mut Xoshiro256PlusPlus, cs: &[usize]| -> Vec<u32> {
        (0..spec.text_len)
            .map(|i| {
                let c = cs[i % cs.len()];
                (c + spec.concepts * rng.random_range(0..per_concept)) as u32
            })
            .collect()
    };
    let make = |n: usize, rng: &mut Xoshiro256PlusPlus| {
        (0..n)
            .map(|_| {
                let qc = pick_concepts(rng);
                let query = text(rng, &qc);
                let mut docs = vec![text(rng, &qc)];
                let mut teacher = vec![10.0];
                for _ in 0..spec.negatives {
                    let dc = pick_concepts(rng);
                    let shared = qc.iter().filter(|c| dc.contains(c)).count();
                    teacher.push(10.0 * shared as f64 / qc.len() as f64);
                    docs.push(text(rng, &dc));
                }
                ToyExample { query, docs, teacher }
            })
            .collect::<Vec<_>>()
    };
    let train = make(spec.train, &mut rng);
    let heldout = make(spec.heldout, &mut rng);
    Ok(ToyCorpus {
        vocab_size: spec.vocab_size,
        train,
        heldout,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Standard deviation of the initial logit noise.
    pub init_noise: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig {
                temperature: 1.0,
                ..LossConfig::default()
            },
            learning_rate: 0.5,
            batch_size: 8,
            seed: 7,
            init_noise: 0.5,
        }
    }
}

/// Token-to-logit table: a text's logits at position i are row `x_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub vocab_size: usize,
    pub weights: Vec<f64>,
}

impl ToyModel {
    pub fn init(vocab_size: usize, noise: f64, seed: u64) -> Self {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(vocab_size * vocab_size);
        for x in 0..vocab_size {
            for t in 0..vocab_size {
                // Box-Muller
                let (u1, u2): (f64, f64) = (rng.random::<f64>().max(1e-300), rng.random());
                let g = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                let identity = if x == t { 1.0 } else { 0.0 };
                weights.push(identity + noise * g);
            }
        }
        Self { vocab_size, weights }
    }

    fn row(&self, x: u32) -> &[f64] {
        let n = self.vocab_size;
        &self.weights[x as usize * n..(x as usize + 1) * n]
    }

    /// Pooled activations plus, per term, the position that won the max
    /// (None when the activation is zero).
    fn forward(&self, text: &[u32]) -> (Vec<f64>, Vec<Option<usize>>) {
        let n = self.vocab_size;
        let mut act = vec![0.0; n];
        let mut arg = vec![None; n];
        for (i, &x) in text.iter().enumerate() {
            for (t, &z) in self.row(x).iter().enumerate() {
                let a = if z > 0.0 { z.ln_1p() } else { 0.0 };
                if a > act[t] {
                    act[t] = a;
                    arg[t] = Some(i);
                }
            }
        }
        (act, arg)
    }

    /// Sparse encoding through the production aggregation path.
    pub fn encode(&self, text: &[u32]) -> Result<SparseVector> {
        let values: Vec<f32> = text
            .iter()
            .flat_map(|&x| self.row(x).iter().map(|&w| w as f32))
            .collect();
        aggregate(&LogitMatrix::new(text.len(), self.vocab_size, values)?)
    }

    /// Backpropagates `d_act` through max pooling and `log(1 + relu)`.
    fn backward(&self, text: &[u32], arg: &[Option<usize>], d_act: &[f64], grad: &mut [f64]) {
        let n = self.vocab_size;
        for (t, pos) in arg.iter().enumerate() {
            if let Some(i) = *pos {
                let x = text[i] as usize;
                let z = self.weights[x * n + t];
                grad[x * n + t] += d_act[t] / (1.0 + z);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyReport {
    pub model: ToyModel,
    pub steps: usize,
    pub loss_history: Vec<f64>,
    pub initial_flops: f64,
    pub final_flops: f64,
    pub initial_heldout_kld: f64,
    pub final_heldout_kld: f64,
    pub initial_mean_nnz: f64,
    pub final_mean_nnz: f64,
}

struct BatchEval {
    loss: LossBreakdown,
    grad: Vec<f64>,
}

fn dot_dense(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn evaluate(model: &ToyModel, batch: &[&ToyExample], cfg: &LossConfig, want_grad: bool) -> Result<BatchEval> {
    let n = model.vocab_size;
    let cols = batch[0].docs.len();
    let mut q_fw = Vec::with_capacity(batch.len());
    let mut d_fw = Vec::with_capacity(batch.len() * cols);
    let (mut student, mut teacher) = (Vec::new(), Vec::new());
    for ex in batch {
        if ex.docs.len() != cols || ex.teacher.len() != cols {
            return Err(Error::invalid("toy examples must have equal candidate counts"));
        }
        let q = model.forward(&ex.query);
        for d in &ex.docs {
            let dv = model.forward(d);
            student.push(dot_dense(&q.0, &dv.0));
            d_fw.push(dv);
        }
        teacher.extend_from_slice(&ex.teacher);
        q_fw.push(q);
    }
    let scores = ScoreBatch::new(batch.len(), cols, student, teacher, cfg.temperature)?;
    let q_acts = ActivationBatch::new(batch.len(), n, q_fw.iter().flat_map(|f| f.0.iter().copied()).collect())?;
    let d_acts = ActivationBatch::new(d_fw.len(), n, d_fw.iter().flat_map(|f| f.0.iter().copied()).collect())?;
    let kld = kld_loss(&scores)?;
    let fq = flops_penalty(&q_acts);
    let fd = flops_penalty(&d_acts);
    let loss = LossBreakdown {
        kld: kld.loss,
        flops_q: fq.loss,
        flops_d: fd.loss,
        total: cfg.kld_weight * kld.loss + cfg.lambda_q * fq.loss + cfg.lambda_d * fd.loss,
    };
    if !loss.total.is_finite() {
        return Err(Error::Diverged(format!("toy loss became {}", loss.total)));
    }
    let mut grad = Vec::new();
    if want_grad {
        grad = vec![0.0; n * n];
        for (r, ex) in batch.iter().enumerate() {
            let (q_act, q_arg) = &q_fw[r];
            let mut d_q: Vec<f64> = fq.grad[r * n..(r + 1) * n].iter().map(|g| cfg.lambda_q * g).collect();
            for j in 0..cols {
                let k = r * cols + j;
                let (d_act, d_arg) = &d_fw[k];
                let ds = cfg.kld_weight * kld.grad[k];
                let d_d: Vec<f64> = (0..n)
                    .map(|t| ds * q_act[t] + cfg.lambda_d * fd.grad[k * n + t])
                    .collect();
                for t in 0..n {
                    d_q[t] += ds * d_act[t];
                }
                model.backward(&ex.docs[j], d_arg, &d_d, &mut grad);
            }
            model.backward(&ex.query, q_arg, &d_q, &mut grad);
        }
    }
    Ok(BatchEval { loss, grad })
}

fn mean_nnz(model: &ToyModel, examples: &[ToyExample]) -> Result<f64> {
    let mut vs = Vec::new();
    for ex in examples {
        vs.push(model.encode(&ex.query)?);
        for d in &ex.docs {
            vs.push(model.encode(d)?);
        }
    }
    Ok(density_stats(&vs)?.mean_nnz)
}

/// Plain minibatch gradient descent on the combined objective.
pub fn toy_distill(corpus: &ToyCorpus, epochs: usize, cfg: &ToyConfig) -> Result<ToyReport> {
    cfg.loss.validate()?;
    if corpus.train.is_empty() || corpus.heldout.is_empty() {
        return Err(Error::invalid("toy corpus needs training and held-out examples"));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate.is_finite() && cfg.learning_rate >= 0.0) {
        return Err(Error::invalid(
            "batch_size must be >= 1 and learning_rate finite and >= 0",
        ));
    }
    let mut model = ToyModel::init(corpus.vocab_size, cfg.init_noise, cfg.seed);
    let all_train: Vec<&ToyExample> = corpus.train.iter().collect();
    let heldout: Vec<&ToyExample> = corpus.heldout.iter().collect();
    let initial = evaluate(&model, &all_train, &cfg.loss, false)?.loss;
    let initial_heldout = evaluate(&model, &heldout, &cfg.loss, false)?.loss;
    let initial_mean_nnz = mean_nnz(&model, &corpus.heldout)?;

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..corpus.train.len()).collect();
    let mut history = Vec::new();
    for _ in 0..epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ToyExample> = chunk.iter().map(|&i| &corpus.train[i]).collect();
            let eval = evaluate(&model, &batch, &cfg.loss, true)?;
            history.push(eval.loss.total);
            for (w, g) in model.weights.iter_mut().zip(&eval.grad) {
                *w -= cfg.learning_rate * g;
            }
        }
    }

    let fin = evaluate(&model, &all_train, &cfg.loss, false)?.loss;
    let fin_heldout = evaluate(&model, &heldout, &cfg.loss, false)?.loss;
    let final_mean_nnz = mean_nnz(&model, &corpus.heldout)?;
    Ok(ToyReport {
        steps: history.len(),
        loss_history: history,
        initial_flops: initial.flops_q + initial.flops_d,
        final_flops: fin.flops_q + fin.flops_d,
        initial_heldout_kld: initial_heldout.kld,
        final_heldout_kld: fin_heldout.kld,
        initial_mean_nnz,
        final_mean_nnz,
        model,
    })
}
