//! SGD training of word, context, and topic embeddings under the
//! negative-sampling objective, with the compositional target from the
//! mixture module.

// Indexed loops here walk several parallel slices at once, and the SGD
// kernels genuinely take many scalars; the clippy rewrites read worse.
#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Barrier;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::lda::{infer_doc_topics, TopicModel};
use crate::matrix::Matrix;
use crate::mixture::MixtureWeights;

const LR_FLOOR_FRACTION: f32 = 1e-4;
const NEGATIVE_RESAMPLE_ATTEMPTS: usize = 100;

/// Which compositional target is used during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    SkipGram,
    Mswe1,
    Mswe2,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::SkipGram => "skipgram",
            Variant::Mswe1 => "mswe1",
            Variant::Mswe2 => "mswe2",
        }
    }

    pub fn uses_topics(&self) -> bool {
        !matches!(self, Variant::SkipGram)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skipgram" => Ok(Variant::SkipGram),
            "mswe1" => Ok(Variant::Mswe1),
            "mswe2" => Ok(Variant::Mswe2),
            other => Err(Error::InvalidConfig(format!("unknown variant: {other}"))),
        }
    }
}

/// All training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub dim: usize,
    /// Context window size k (fixed, no shrinking).
    pub window: usize,
    /// Negative samples K per positive pair.
    pub negatives: usize,
    /// Initial learning rate; decays linearly to lr0 * 1e-4.
    pub lr0: f32,
    pub epochs: usize,
    pub seed: u64,
    pub threads: usize,
    pub variant: Variant,
    /// Frequent-word subsampling threshold; None disables it.
    pub subsample: Option<f64>,
    /// Test hook: force every mixture weight to zero, reducing MSWE
    /// training to plain skip-gram arithmetic.
    pub zero_lambda: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            dim: 300,
            window: 5,
            negatives: 10,
            lr0: 0.01,
            epochs: 5,
            seed: 1,
            threads: 1,
            variant: Variant::SkipGram,
            subsample: None,
            zero_lambda: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 || self.window < 1 || self.negatives < 1 || self.epochs < 1 {
            return Err(Error::InvalidConfig(
                "dim, window, negatives, and epochs must all be >= 1".into(),
            ));
        }
        if self.lr0.is_nan() || self.lr0 <= 0.0 {
            return Err(Error::InvalidConfig("lr0 must be > 0".into()));
        }
        Ok(())
    }
}

/// Target, context, and topic embedding matrices.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    target: Matrix<f32>,
    context: Matrix<f32>,
    topic: Matrix<f32>,
    variant: Variant,
}

impl EmbeddingModel {
    pub fn new(
        target: Matrix<f32>,
        context: Matrix<f32>,
        topic: Matrix<f32>,
        variant: Variant,
    ) -> Self {
        assert_eq!(target.rows(), context.rows());
        assert_eq!(target.cols(), context.cols());
        assert!(topic.rows() == 0 || topic.cols() == target.cols());
        EmbeddingModel {
            target,
            context,
            topic,
            variant,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.target.rows()
    }

    pub fn topic_count(&self) -> usize {
        self.topic.rows()
    }

    pub fn dim(&self) -> usize {
        self.target.cols()
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn target(&self) -> &Matrix<f32> {
        &self.target
    }

    pub fn context(&self) -> &Matrix<f32> {
        &self.context
    }

    pub fn topic(&self) -> &Matrix<f32> {
        &self.topic
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, m) in [
            ("target", &self.target),
            ("context", &self.context),
            ("topic", &self.topic),
        ] {
            if m.as_slice().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(())
    }

    /// Text model file: header "V T dim variant", V target lines
    /// "token f1 .. f_dim", then "#context" and V rows, then "#topics" and
    /// T rows (omitted when T = 0). 9 significant digits: exact for f32.
    pub fn save(&self, vocab: &Vocabulary, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let v = self.vocab_size();
        let t = self.topic_count();
        writeln!(w, "{} {} {} {}", v, t, self.dim(), self.variant)
            .map_err(|e| Error::io(path, e))?;
        for i in 0..v {
            write!(w, "{}", vocab.token(i as u32)).map_err(|e| Error::io(path, e))?;
            write_row(&mut w, self.target.row(i), path)?;
        }
        writeln!(w, "#context").map_err(|e| Error::io(path, e))?;
        for i in 0..v {
            write_bare_row(&mut w, self.context.row(i), path)?;
        }
        if t > 0 {
            writeln!(w, "#topics").map_err(|e| Error::io(path, e))?;
            for i in 0..t {
                write_bare_row(&mut w, self.topic.row(i), path)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Load a model file. Returns the model together with the token column
    /// of the target section, in file order.
    pub fn load(path: &Path) -> Result<(Self, Vec<String>)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::CorruptBundle("empty model file".into()))?
            .map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::CorruptBundle(
                "model header must be: V T dim variant".into(),
            ));
        }
        let v: usize = fields[0]
            .parse()
            .map_err(|_| Error::CorruptBundle("bad V in model header".into()))?;
        let t: usize = fields[1]
            .parse()
            .map_err(|_| Error::CorruptBundle("bad T in model header".into()))?;
        let dim: usize = fields[2]
            .parse()
            .map_err(|_| Error::CorruptBundle("bad dim in model header".into()))?;
        let variant: Variant = fields[3].parse()?;

        let mut tokens = Vec::with_capacity(v);
        let mut target = Vec::with_capacity(v * dim);
        for i in 0..v {
            let line = lines
                .next()
                .ok_or_else(|| {
                    Error::CorruptBundle(format!("target matrix: expected {v} rows, found {i}"))
                })?
                .map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let token = parts.next().ok_or_else(|| {
                Error::CorruptBundle(format!("target row {i}: missing token"))
            })?;
            tokens.push(token.to_string());
            parse_floats(&mut target, parts, dim, &format!("target row {i}"))?;
        }
        expect_marker(&mut lines, path, "#context", v, "context")?;
        let mut context = Vec::with_capacity(v * dim);
        for i in 0..v {
            let line = lines
                .next()
                .ok_or_else(|| {
                    Error::CorruptBundle(format!("context matrix: expected {v} rows, found {i}"))
                })?
                .map_err(|e| Error::io(path, e))?;
            parse_floats(
                &mut context,
                line.split_whitespace(),
                dim,
                &format!("context row {i}"),
            )?;
        }
        let mut topic = Vec::with_capacity(t * dim);
        if t > 0 {
            expect_marker(&mut lines, path, "#topics", t, "topic")?;
            for i in 0..t {
                let line = lines
                    .next()
                    .ok_or_else(|| {
                        Error::CorruptBundle(format!("topic matrix: expected {t} rows, found {i}"))
                    })?
                    .map_err(|e| Error::io(path, e))?;
                parse_floats(
                    &mut topic,
                    line.split_whitespace(),
                    dim,
                    &format!("topic row {i}"),
                )?;
            }
        }
        Ok((
            EmbeddingModel::new(
                Matrix::from_vec(target, v, dim),
                Matrix::from_vec(context, v, dim),
                Matrix::from_vec(topic, t, dim),
                variant,
            ),
            tokens,
        ))
    }

    /// Word-vectors-only export: first line "V dim", then one token and its
    /// target vector per line.
    pub fn export_word_vectors(&self, vocab: &Vocabulary, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{} {}", self.vocab_size(), self.dim()).map_err(|e| Error::io(path, e))?;
        for i in 0..self.vocab_size() {
            write!(w, "{}", vocab.token(i as u32)).map_err(|e| Error::io(path, e))?;
            write_row(&mut w, self.target.row(i), path)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn write_row<W: Write>(w: &mut W, row: &[f32], path: &Path) -> Result<()> {
    let mut line = String::with_capacity(row.len() * 18);
    for x in row {
        line.push(' ');
        line.push_str(&format!("{x:.8e}"));
    }
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}

fn write_bare_row<W: Write>(w: &mut W, row: &[f32], path: &Path) -> Result<()> {
    let mut line = String::with_capacity(row.len() * 18);
    for (i, x) in row.iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        line.push_str(&format!("{x:.8e}"));
    }
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}

fn parse_floats<'a>(
    out: &mut Vec<f32>,
    parts: impl Iterator<Item = &'a str>,
    expected: usize,
    what: &str,
) -> Result<()> {
    let before = out.len();
    for p in parts {
        let x: f32 = p
            .parse()
            .map_err(|_| Error::CorruptBundle(format!("{what}: bad float {p:?}")))?;
        out.push(x);
    }
    let found = out.len() - before;
    if found != expected {
        return Err(Error::CorruptBundle(format!(
            "{what}: expected {expected} values, found {found}"
        )));
    }
    Ok(())
}

fn expect_marker(
    lines: &mut impl Iterator<Item = std::io::Result<String>>,
    path: &Path,
    marker: &str,
    rows: usize,
    what: &str,
) -> Result<()> {
    let line = lines
        .next()
        .ok_or_else(|| {
            Error::CorruptBundle(format!("{what} matrix: expected {rows} rows, found 0"))
        })?
        .map_err(|e| Error::io(path, e))?;
    if line.trim() != marker {
        return Err(Error::CorruptBundle(format!(
            "expected {marker} marker, found {line:?}"
        )));
    }
    Ok(())
}

/// Alias-method sampler over the vocabulary, proportional to count^0.75.
/// Zero-count entries (an untruncated UNK) are floored to count 1 so every
/// entry keeps strictly positive probability.
pub struct NoiseTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
    weights: Vec<f64>,
}

impl NoiseTable {
    pub fn build(vocab: &Vocabulary) -> Self {
        let weights: Vec<f64> = vocab
            .counts()
            .iter()
            .map(|&c| (c.max(1) as f64).powf(0.75))
            .collect();
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();

        // Vose alias construction.
        let n = probs.len();
        let mut prob = vec![0.0f64; n];
        let mut alias = vec![0u32; n];
        let mut small = Vec::new();
        let mut large = Vec::new();
        let mut scaled: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
        for (i, &p) in scaled.iter().enumerate() {
            if p < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(s), Some(l)) = (small.pop(), large.pop()) {
            prob[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                small.push(l);
            } else {
                large.push(l);
            }
        }
        for i in large.into_iter().chain(small) {
            prob[i] = 1.0;
        }

        NoiseTable {
            prob,
            alias,
            weights: probs,
        }
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    /// Normalized sampling probabilities, for inspection and tests.
    pub fn probabilities(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        let i = rng.gen_range(0..self.prob.len());
        if rng.gen::<f64>() < self.prob[i] {
            i as u32
        } else {
            self.alias[i]
        }
    }
}

fn sigmoid32(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

// ln(1 + e^x), overflow-safe.
fn softplus32(x: f32) -> f32 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// -O = -log sigma(pos . s) - sum_i log sigma(-neg_i . s). Always >= 0.
pub fn negative_sampling_loss(s: &[f64], positive: &[f64], negatives: &[Vec<f64>]) -> f64 {
    let loss = grad::softplus64(-crate::matrix::dot_f64(positive, s));
    negatives.iter().fold(loss, |acc, n| {
        acc + grad::softplus64(crate::matrix::dot_f64(n, s))
    })
}

/// 64-bit reference path for the composed objective and its exact
/// gradients. Mirrors the 32-bit training arithmetic and is checked against
/// central finite differences in the test suite.
pub mod grad {
    use super::Variant;
    use crate::matrix::{dot_f64, Matrix};

    pub fn sigmoid64(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    pub fn softplus64(x: f64) -> f64 {
        if x > 35.0 {
            x
        } else if x < -35.0 {
            x.exp()
        } else {
            x.exp().ln_1p()
        }
    }

    /// Composed target vector for a variant given per-topic weights.
    pub fn compose(
        variant: Variant,
        v_w: &[f64],
        topics: &Matrix<f64>,
        lambda: &[f64],
    ) -> Vec<f64> {
        match variant {
            Variant::SkipGram => v_w.to_vec(),
            Variant::Mswe1 => {
                let mut best = 0;
                for (i, &l) in lambda.iter().enumerate().skip(1) {
                    if l > lambda[best] {
                        best = i;
                    }
                }
                let l = lambda[best];
                v_w.iter()
                    .zip(topics.row(best))
                    .map(|(&w, &t)| (w + l * t) / (1.0 + l))
                    .collect()
            }
            Variant::Mswe2 => {
                let sum: f64 = lambda.iter().sum();
                let mut s = v_w.to_vec();
                for (t, &l) in lambda.iter().enumerate() {
                    if l != 0.0 {
                        for (acc, &v) in s.iter_mut().zip(topics.row(t)) {
                            *acc += l * v;
                        }
                    }
                }
                for x in &mut s {
                    *x /= 1.0 + sum;
                }
                s
            }
        }
    }

    /// Loss and exact gradients of the composed negative-sampling objective.
    pub struct ComposedGradients {
        pub loss: f64,
        pub d_target: Vec<f64>,
        /// (topic index, gradient) for every topic that receives one.
        pub d_topics: Vec<(usize, Vec<f64>)>,
        pub d_positive: Vec<f64>,
        pub d_negatives: Vec<Vec<f64>>,
    }

    pub fn loss_and_gradients(
        variant: Variant,
        v_w: &[f64],
        topics: &Matrix<f64>,
        lambda: &[f64],
        positive: &[f64],
        negatives: &[Vec<f64>],
    ) -> ComposedGradients {
        let s = compose(variant, v_w, topics, lambda);
        let dim = s.len();

        let mut loss = 0.0;
        let mut d_s = vec![0.0f64; dim];

        let dot_p = dot_f64(positive, &s);
        loss += softplus64(-dot_p);
        let g_p = sigmoid64(dot_p) - 1.0;
        for (acc, &p) in d_s.iter_mut().zip(positive) {
            *acc += g_p * p;
        }
        let d_positive: Vec<f64> = s.iter().map(|&x| g_p * x).collect();

        let mut d_negatives = Vec::with_capacity(negatives.len());
        for neg in negatives {
            let dot_n = dot_f64(neg, &s);
            loss += softplus64(dot_n);
            let g_n = sigmoid64(dot_n);
            for (acc, &nv) in d_s.iter_mut().zip(neg) {
                *acc += g_n * nv;
            }
            d_negatives.push(s.iter().map(|&x| g_n * x).collect());
        }

        // Chain rule through the composition: d s / d v_w = 1/(1+sum),
        // d s / d v_t = lambda_t/(1+sum), where for MSWE-1 the sum runs over
        // the argmax topic only.
        let (denom, topic_coeffs): (f64, Vec<(usize, f64)>) = match variant {
            Variant::SkipGram => (1.0, Vec::new()),
            Variant::Mswe1 => {
                let mut best = 0;
                for (i, &l) in lambda.iter().enumerate().skip(1) {
                    if l > lambda[best] {
                        best = i;
                    }
                }
                (1.0 + lambda[best], vec![(best, lambda[best])])
            }
            Variant::Mswe2 => {
                let sum: f64 = lambda.iter().sum();
                (
                    1.0 + sum,
                    lambda
                        .iter()
                        .enumerate()
                        .filter(|(_, &l)| l != 0.0)
                        .map(|(t, &l)| (t, l))
                        .collect(),
                )
            }
        };

        let d_target: Vec<f64> = d_s.iter().map(|&g| g / denom).collect();
        let d_topics = topic_coeffs
            .into_iter()
            .map(|(t, l)| (t, d_s.iter().map(|&g| g * l / denom).collect()))
            .collect();

        ComposedGradients {
            loss,
            d_target,
            d_topics,
            d_positive,
            d_negatives,
        }
    }
}

// ---------------------------------------------------------------------------
// Hogwild training internals. Embedding rows are updated through raw
// pointers; concurrent threads race benignly on individual rows. All
// bit-exactness guarantees hold for threads = 1 only.

struct RawMat {
    ptr: *mut f32,
    cols: usize,
}

impl RawMat {
    fn of(m: &mut Matrix<f32>) -> Self {
        RawMat {
            ptr: m.as_mut_slice().as_mut_ptr(),
            cols: m.cols(),
        }
    }

    #[inline]
    unsafe fn row(&self, i: usize) -> *mut f32 {
        self.ptr.add(i * self.cols)
    }
}

struct SharedParams {
    target: RawMat,
    context: RawMat,
    topic: RawMat,
}

unsafe impl Send for SharedParams {}
unsafe impl Sync for SharedParams {}

#[inline]
unsafe fn dot_ptr(a: *const f32, b: *const f32, n: usize) -> f32 {
    let mut acc = 0.0f32;
    for d in 0..n {
        acc += *a.add(d) * *b.add(d);
    }
    acc
}

// y += a * x
#[inline]
unsafe fn axpy_ptr(y: *mut f32, a: f32, x: *const f32, n: usize) {
    for d in 0..n {
        *y.add(d) += a * *x.add(d);
    }
}

/// Per-token mixture weights in the 32-bit training representation.
#[derive(Clone)]
struct LambdaEntry {
    lambda: Box<[f32]>,
    sum: f32,
    argmax: u32,
}

enum StepWeights<'a> {
    Plain,
    Mswe1 { topic: usize, lambda: f32 },
    Mswe2(&'a LambdaEntry),
}

struct Scratch {
    s: Vec<f32>,
    grad_s: Vec<f32>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Scratch {
            s: vec![0.0; dim],
            grad_s: vec![0.0; dim],
        }
    }
}

/// One SGD step on one (target, positive-context) pair: compose the target,
/// sample K negatives, apply exact gradients. Returns the step loss.
unsafe fn step_raw<R: Rng>(
    params: &SharedParams,
    scratch: &mut Scratch,
    dim: usize,
    target: usize,
    positive: usize,
    weights: &StepWeights,
    lr: f32,
    negatives: usize,
    noise: &NoiseTable,
    rng: &mut R,
) -> f64 {
    let s = scratch.s.as_mut_ptr();
    let grad_s = scratch.grad_s.as_mut_ptr();
    let tgt = params.target.row(target);

    // Compose s per variant. With all-zero weights this reduces bitwise to
    // the plain target row: x + 0 = x and x / 1 = x exactly in f32.
    let denom: f32 = match weights {
        StepWeights::Plain => {
            for d in 0..dim {
                *s.add(d) = *tgt.add(d);
            }
            1.0
        }
        StepWeights::Mswe1 { topic, lambda } => {
            let tv = params.topic.row(*topic);
            let norm = 1.0 + lambda;
            for d in 0..dim {
                *s.add(d) = (*tgt.add(d) + lambda * *tv.add(d)) / norm;
            }
            norm
        }
        StepWeights::Mswe2(entry) => {
            for d in 0..dim {
                *s.add(d) = *tgt.add(d);
            }
            for (t, &l) in entry.lambda.iter().enumerate() {
                if l != 0.0 {
                    axpy_ptr(s, l, params.topic.row(t), dim);
                }
            }
            let norm = 1.0 + entry.sum;
            for d in 0..dim {
                *s.add(d) /= norm;
            }
            norm
        }
    };

    for d in 0..dim {
        *grad_s.add(d) = 0.0;
    }
    let mut loss = 0.0f64;

    // Positive pair. Gradients are evaluated at the pre-update values.
    let pos_row = params.context.row(positive);
    let dot = dot_ptr(pos_row, s, dim);
    loss += softplus32(-dot) as f64;
    let g = sigmoid32(dot) - 1.0;
    axpy_ptr(grad_s, g, pos_row, dim);
    axpy_ptr(pos_row, -lr * g, s, dim);

    // Negatives: resample a collision with the positive id, skip after 100
    // failed attempts.
    for _ in 0..negatives {
        let mut sampled = None;
        for _ in 0..NEGATIVE_RESAMPLE_ATTEMPTS {
            let c = noise.sample(rng) as usize;
            if c != positive {
                sampled = Some(c);
                break;
            }
        }
        let Some(neg) = sampled else { continue };
        let neg_row = params.context.row(neg);
        let dot = dot_ptr(neg_row, s, dim);
        loss += softplus32(dot) as f64;
        let g = sigmoid32(dot);
        axpy_ptr(grad_s, g, neg_row, dim);
        axpy_ptr(neg_row, -lr * g, s, dim);
    }

    // Chain rule into the word vector and any weighted topic vectors.
    axpy_ptr(tgt, -lr / denom, grad_s, dim);
    match weights {
        StepWeights::Plain => {}
        StepWeights::Mswe1 { topic, lambda } => {
            if *lambda != 0.0 {
                axpy_ptr(params.topic.row(*topic), -lr * lambda / denom, grad_s, dim);
            }
        }
        StepWeights::Mswe2(entry) => {
            for (t, &l) in entry.lambda.iter().enumerate() {
                if l != 0.0 {
                    axpy_ptr(params.topic.row(t), -lr * l / denom, grad_s, dim);
                }
            }
        }
    }

    loss
}

/// Single SGD step on a mutable model, for API use and tests. The hot
/// training loop uses the same kernel through shared raw views.
pub fn sgd_step<R: Rng>(
    model: &mut EmbeddingModel,
    target_id: u32,
    context_id: u32,
    weights: &MixtureWeights,
    lr: f32,
    negatives: usize,
    noise: &NoiseTable,
    rng: &mut R,
) -> f64 {
    let dim = model.dim();
    let entry = LambdaEntry {
        lambda: weights.lambda().iter().map(|&l| l as f32).collect(),
        sum: weights.sum() as f32,
        argmax: weights.argmax_topic() as u32,
    };
    let step_weights = match model.variant {
        Variant::SkipGram => StepWeights::Plain,
        Variant::Mswe1 => StepWeights::Mswe1 {
            topic: entry.argmax as usize,
            lambda: entry.lambda[entry.argmax as usize],
        },
        Variant::Mswe2 => StepWeights::Mswe2(&entry),
    };
    let params = SharedParams {
        target: RawMat::of(&mut model.target),
        context: RawMat::of(&mut model.context),
        topic: RawMat::of(&mut model.topic),
    };
    let mut scratch = Scratch::new(dim);
    unsafe {
        step_raw(
            &params,
            &mut scratch,
            dim,
            target_id as usize,
            context_id as usize,
            &step_weights,
            lr,
            negatives,
            noise,
            rng,
        )
    }
}

fn thread_seed(seed: u64, thread: usize) -> u64 {
    seed.wrapping_add((thread as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

struct WorkerArgs<'a> {
    params: &'a SharedParams,
    docs: &'a [Vec<u32>],
    range: std::ops::Range<usize>,
    thetas: Option<&'a [Vec<f64>]>,
    topics: Option<&'a TopicModel>,
    noise: &'a NoiseTable,
    config: &'a TrainingConfig,
    counts: &'a [u64],
    total_corpus_tokens: u64,
    processed: &'a AtomicU64,
    total_updates: u64,
    barrier: &'a Barrier,
    thread: usize,
}

/// Per-epoch (loss sum, pair count) for one worker.
fn run_worker(args: WorkerArgs) -> Vec<(f64, u64)> {
    let cfg = args.config;
    let dim = cfg.dim;
    let k = cfg.window;
    let mut rng = ChaCha8Rng::seed_from_u64(thread_seed(cfg.seed, args.thread));
    let mut scratch = Scratch::new(dim);
    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut lambda_cache: HashMap<u32, LambdaEntry> = HashMap::new();

    for _epoch in 0..cfg.epochs {
        let mut loss = 0.0f64;
        let mut pairs = 0u64;
        for doc_idx in args.range.clone() {
            let doc = &args.docs[doc_idx];
            let base = args.processed.load(Ordering::Relaxed);
            if doc.len() >= 2 {
                if cfg.variant.uses_topics() {
                    build_lambda_cache(
                        &mut lambda_cache,
                        doc,
                        args.topics.expect("topics checked in train"),
                        &args.thetas.expect("thetas precomputed")[doc_idx],
                        cfg.zero_lambda,
                    );
                }
                for m in 0..doc.len() {
                    let done = base + m as u64;
                    let remaining = 1.0 - done as f32 / args.total_updates as f32;
                    let lr = cfg.lr0 * remaining.max(LR_FLOOR_FRACTION);
                    let target = doc[m] as usize;

                    if let Some(threshold) = cfg.subsample {
                        let freq =
                            args.counts[target] as f64 / args.total_corpus_tokens as f64;
                        let keep = ((threshold / freq).sqrt() + threshold / freq).min(1.0);
                        if rng.gen::<f64>() >= keep {
                            continue;
                        }
                    }

                    let weights = match cfg.variant {
                        Variant::SkipGram => StepWeights::Plain,
                        Variant::Mswe1 => {
                            let entry = &lambda_cache[&doc[m]];
                            StepWeights::Mswe1 {
                                topic: entry.argmax as usize,
                                lambda: entry.lambda[entry.argmax as usize],
                            }
                        }
                        Variant::Mswe2 => StepWeights::Mswe2(&lambda_cache[&doc[m]]),
                    };

                    let lo = m.saturating_sub(k);
                    let hi = (m + k).min(doc.len() - 1);
                    for j in lo..=hi {
                        if j == m {
                            continue;
                        }
                        loss += unsafe {
                            step_raw(
                                args.params,
                                &mut scratch,
                                dim,
                                target,
                                doc[j] as usize,
                                &weights,
                                lr,
                                cfg.negatives,
                                args.noise,
                                &mut rng,
                            )
                        };
                        pairs += 1;
                    }
                }
            }
            args.processed.fetch_add(doc.len() as u64, Ordering::Relaxed);
        }
        stats.push((loss, pairs));
        args.barrier.wait();
    }
    stats
}

fn build_lambda_cache(
    cache: &mut HashMap<u32, LambdaEntry>,
    doc: &[u32],
    topics: &TopicModel,
    theta: &[f64],
    zero_lambda: bool,
) {
    cache.clear();
    let t_count = topics.topics();
    for &w in doc {
        cache.entry(w).or_insert_with(|| {
            if zero_lambda {
                return LambdaEntry {
                    lambda: vec![0.0; t_count].into_boxed_slice(),
                    sum: 0.0,
                    argmax: 0,
                };
            }
            let mut lambda = Vec::with_capacity(t_count);
            let mut sum = 0.0f64;
            let mut argmax = 0usize;
            let mut best = f64::MIN;
            for t in 0..t_count {
                let l = topics.word_given_topic(t, w) * theta[t];
                if l > best {
                    best = l;
                    argmax = t;
                }
                sum += l;
                lambda.push(l as f32);
            }
            LambdaEntry {
                lambda: lambda.into_boxed_slice(),
                sum: sum as f32,
                argmax: argmax as u32,
            }
        });
    }
}

/// Train an embedding model. MSWE variants require a topic model over the
/// same vocabulary; document-topic distributions are inferred once up front
/// and held fixed across epochs.
pub fn train(
    corpus: &EncodedCorpus,
    vocab: &Vocabulary,
    topics: Option<&TopicModel>,
    config: &TrainingConfig,
) -> Result<EmbeddingModel> {
    train_with_stats(corpus, vocab, topics, config).map(|(model, _)| model)
}

/// As `train`, additionally returning the mean per-pair loss of each epoch.
/// Loss accounting is approximate when threads > 1.
pub fn train_with_stats(
    corpus: &EncodedCorpus,
    vocab: &Vocabulary,
    topics: Option<&TopicModel>,
    config: &TrainingConfig,
) -> Result<(EmbeddingModel, Vec<f64>)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let topics = if config.variant.uses_topics() {
        let tm = topics.ok_or_else(|| {
            Error::InvalidConfig(format!(
                "variant {} requires a topic model",
                config.variant
            ))
        })?;
        if tm.vocab_size() != vocab.size() {
            return Err(Error::VocabularyTopicMismatch {
                model_vocab: tm.vocab_size(),
                vocab: vocab.size(),
            });
        }
        Some(tm)
    } else {
        None
    };

    let v = vocab.size();
    let dim = config.dim;
    let t_count = topics.map_or(0, TopicModel::topics);

    // Target and topic vectors start uniform in [-0.5/dim, 0.5/dim];
    // context vectors start at zero. The target matrix is drawn first so
    // its initialization is identical across variants for the same seed.
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let half = 0.5 / dim as f32;
    let target_data: Vec<f32> = (0..v * dim)
        .map(|_| init_rng.gen_range(-half..half))
        .collect();
    let topic_data: Vec<f32> = (0..t_count * dim)
        .map(|_| init_rng.gen_range(-half..half))
        .collect();
    let mut model = EmbeddingModel::new(
        Matrix::from_vec(target_data, v, dim),
        Matrix::zeros(v, dim),
        Matrix::from_vec(topic_data, t_count, dim),
        config.variant,
    );

    // Fixed document-topic distributions, inferred once.
    let thetas: Option<Vec<Vec<f64>>> = topics.map(|tm| infer_all_thetas(corpus, tm, config.threads));

    let noise = NoiseTable::build(vocab);
    let total_positions: u64 = corpus.total_tokens();
    let total_updates = total_positions * config.epochs as u64;
    let processed = AtomicU64::new(0);

    let params = SharedParams {
        target: RawMat::of(&mut model.target),
        context: RawMat::of(&mut model.context),
        topic: RawMat::of(&mut model.topic),
    };

    let threads = config.threads.max(1).min(corpus.doc_count());
    let barrier = Barrier::new(threads);
    let docs = corpus.documents();
    let chunk = docs.len().div_ceil(threads);

    let per_thread_stats: Vec<Vec<(f64, u64)>> = if threads == 1 {
        vec![run_worker(WorkerArgs {
            params: &params,
            docs,
            range: 0..docs.len(),
            thetas: thetas.as_deref(),
            topics,
            noise: &noise,
            config,
            counts: vocab.counts(),
            total_corpus_tokens: total_positions,
            processed: &processed,
            total_updates,
            barrier: &barrier,
            thread: 0,
        })]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|i| {
                    let args = WorkerArgs {
                        params: &params,
                        docs,
                        range: i * chunk..((i + 1) * chunk).min(docs.len()),
                        thetas: thetas.as_deref(),
                        topics,
                        noise: &noise,
                        config,
                        counts: vocab.counts(),
                        total_corpus_tokens: total_positions,
                        processed: &processed,
                        total_updates,
                        barrier: &barrier,
                        thread: i,
                    };
                    scope.spawn(move || run_worker(args))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    };

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (loss, pairs) = per_thread_stats
            .iter()
            .map(|s| s[epoch])
            .fold((0.0, 0u64), |(l, p), (dl, dp)| (l + dl, p + dp));
        epoch_losses.push(if pairs > 0 { loss / pairs as f64 } else { 0.0 });
    }

    model.check_finite()?;
    Ok((model, epoch_losses))
}

fn infer_all_thetas(corpus: &EncodedCorpus, tm: &TopicModel, threads: usize) -> Vec<Vec<f64>> {
    let docs = corpus.documents();
    let threads = threads.max(1).min(docs.len().max(1));
    if threads == 1 {
        return docs.iter().map(|d| infer_doc_topics(tm, d).theta).collect();
    }
    let chunk = docs.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = docs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|d| infer_doc_topics(tm, d).theta)
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect()
    })
}
