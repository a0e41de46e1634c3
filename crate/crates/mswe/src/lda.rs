//! Online variational Bayes LDA: topic-to-word and document-to-topic
//! distributions used to weight topic vectors during embedding training
//! and contextual evaluation.

// The E-step loops index the topic axis across several matrices at once;
// iterator chains there would obscure the math.
#![allow(clippy::needless_range_loop)]

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::corpus::EncodedCorpus;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAX_INFER_ITERS: usize = 100;
const FOLD_IN_TOL: f64 = 1e-6;
const ESTEP_TOL: f64 = 1e-3;

/// Hyperparameters for online variational training.
#[derive(Debug, Clone)]
pub struct LdaConfig {
    pub topics: usize,
    /// Symmetric document prior; defaults to 1/T.
    pub alpha: Option<f64>,
    /// Symmetric topic prior; defaults to 1/T.
    pub eta: Option<f64>,
    pub tau0: f64,
    pub kappa: f64,
    pub batch_size: usize,
    pub passes: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            topics: 50,
            alpha: None,
            eta: None,
            tau0: 1.0,
            kappa: 0.5,
            batch_size: 2048,
            passes: 1,
            seed: 1,
            threads: 1,
        }
    }
}

/// Trained topic model: row-stochastic T x V matrix of Pr(w|t).
#[derive(Debug, Clone)]
pub struct TopicModel {
    phi: Matrix<f64>,
    alpha: f64,
    eta: f64,
}

/// Document-to-topic distribution Pr(t|d).
#[derive(Debug, Clone)]
pub struct DocTopics {
    pub theta: Vec<f64>,
}

impl TopicModel {
    pub fn new(phi: Matrix<f64>, alpha: f64, eta: f64) -> Result<Self> {
        let model = TopicModel { phi, alpha, eta };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.topics() < 2 || self.vocab_size() < 2 {
            return Err(Error::InvalidConfig(
                "topic model requires T >= 2 and V >= 2".into(),
            ));
        }
        // NaN must fail this check, hence the explicit test.
        if self.alpha.is_nan() || self.alpha <= 0.0 || self.eta.is_nan() || self.eta <= 0.0 {
            return Err(Error::InvalidConfig("alpha and eta must be > 0".into()));
        }
        for (t, row) in self.phi.iter_rows().enumerate() {
            if row.iter().any(|&p| p.is_nan() || p < 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "phi row {t} has a negative or NaN entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "phi row {t} sums to {sum}, not 1"
                )));
            }
        }
        Ok(())
    }

    pub fn topics(&self) -> usize {
        self.phi.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.phi.cols()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Pr(w|t).
    pub fn word_given_topic(&self, topic: usize, word: u32) -> f64 {
        self.phi.row(topic)[word as usize]
    }

    pub fn phi_row(&self, topic: usize) -> &[f64] {
        self.phi.row(topic)
    }

    /// Header "T V alpha eta", then T lines of V probabilities. 17
    /// significant digits so values round-trip exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(
            w,
            "{} {} {:.16e} {:.16e}",
            self.topics(),
            self.vocab_size(),
            self.alpha,
            self.eta
        )
        .map_err(|e| Error::io(path, e))?;
        for row in self.phi.iter_rows() {
            let mut line = String::with_capacity(row.len() * 24);
            for (i, p) in row.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{p:.16e}"));
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut header = String::new();
        reader
            .read_line(&mut header)
            .map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(path, 1, "expected header: T V alpha eta"));
        }
        let t: usize = fields[0]
            .parse()
            .map_err(|e| Error::parse(path, 1, format!("bad T: {e}")))?;
        let v: usize = fields[1]
            .parse()
            .map_err(|e| Error::parse(path, 1, format!("bad V: {e}")))?;
        let alpha: f64 = fields[2]
            .parse()
            .map_err(|e| Error::parse(path, 1, format!("bad alpha: {e}")))?;
        let eta: f64 = fields[3]
            .parse()
            .map_err(|e| Error::parse(path, 1, format!("bad eta: {e}")))?;
        let mut data = Vec::with_capacity(t * v);
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let before = data.len();
            for field in line.split_whitespace() {
                let p: f64 = field
                    .parse()
                    .map_err(|e| Error::parse(path, i + 2, format!("bad probability: {e}")))?;
                data.push(p);
            }
            if data.len() - before != v {
                return Err(Error::parse(
                    path,
                    i + 2,
                    format!("expected {v} probabilities, found {}", data.len() - before),
                ));
            }
        }
        if data.len() != t * v {
            return Err(Error::CorruptBundle(format!(
                "topic model: expected {t} rows, found {}",
                data.len() / v.max(1)
            )));
        }
        TopicModel::new(Matrix::from_vec(data, t, v), alpha, eta)
    }
}

fn digamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut x = x;
    let mut result = 0.0;
    while x < 10.0 {
        result -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    result + x.ln() - 0.5 * inv
        - inv2
            * (1.0 / 12.0
                - inv2
                    * (1.0 / 120.0
                        - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))))
}

fn bag_of_words(doc: &[u32]) -> (Vec<u32>, Vec<f64>) {
    let mut pairs: Vec<(u32, f64)> = Vec::new();
    let mut sorted = doc.to_vec();
    sorted.sort_unstable();
    for &w in &sorted {
        match pairs.last_mut() {
            Some((id, n)) if *id == w => *n += 1.0,
            _ => pairs.push((w, 1.0)),
        }
    }
    pairs.into_iter().unzip()
}

fn exp_elog_theta(gamma: &[f64]) -> Vec<f64> {
    let psi_sum = digamma(gamma.iter().sum());
    gamma.iter().map(|&g| (digamma(g) - psi_sum).exp()).collect()
}

/// Variational fold-in with topic-word probabilities held fixed.
/// Deterministic: bounded fixed-point iteration on the document parameter.
pub fn infer_doc_topics(model: &TopicModel, doc: &[u32]) -> DocTopics {
    let t = model.topics();
    let alpha = model.alpha;
    if doc.is_empty() {
        return DocTopics {
            theta: vec![1.0 / t as f64; t],
        };
    }
    let (ids, counts) = bag_of_words(doc);
    let mut gamma = vec![alpha + doc.len() as f64 / t as f64; t];
    for _ in 0..MAX_INFER_ITERS {
        let etheta = exp_elog_theta(&gamma);
        let mut gnew = vec![alpha; t];
        for (&w, &n) in ids.iter().zip(&counts) {
            let mut phinorm = 1e-100;
            for k in 0..t {
                phinorm += etheta[k] * model.phi.row(k)[w as usize];
            }
            let scale = n / phinorm;
            for k in 0..t {
                gnew[k] += etheta[k] * model.phi.row(k)[w as usize] * scale;
            }
        }
        let change: f64 = gamma
            .iter()
            .zip(&gnew)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / t as f64;
        gamma = gnew;
        if change < FOLD_IN_TOL {
            break;
        }
    }
    let sum: f64 = gamma.iter().sum();
    DocTopics {
        theta: gamma.into_iter().map(|g| g / sum).collect(),
    }
}

/// Online variational Bayes state. One `fit_pass` is one sweep over the
/// corpus in minibatches with decayed global updates.
#[derive(Debug)]
pub struct OnlineLda {
    lambda: Matrix<f64>,
    exp_elog_beta: Matrix<f64>,
    alpha: f64,
    eta: f64,
    tau0: f64,
    kappa: f64,
    batch_size: usize,
    total_docs: usize,
    update_count: u64,
    threads: usize,
}

impl OnlineLda {
    pub fn new(vocab_size: usize, total_docs: usize, config: &LdaConfig) -> Result<Self> {
        let t = config.topics;
        if t < 2 {
            return Err(Error::InvalidConfig("need at least 2 topics".into()));
        }
        if t > vocab_size {
            return Err(Error::MoreTopicsThanVocabulary {
                topics: t,
                vocab: vocab_size,
            });
        }
        let alpha = config.alpha.unwrap_or(1.0 / t as f64);
        let eta = config.eta.unwrap_or(1.0 / t as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let gamma_dist = Gamma::new(100.0, 0.01).expect("valid gamma parameters");
        let data: Vec<f64> = (0..t * vocab_size)
            .map(|_| gamma_dist.sample(&mut rng))
            .collect();
        let mut lda = OnlineLda {
            lambda: Matrix::from_vec(data, t, vocab_size),
            exp_elog_beta: Matrix::zeros(t, vocab_size),
            alpha,
            eta,
            tau0: config.tau0,
            kappa: config.kappa,
            batch_size: config.batch_size.max(1),
            total_docs,
            update_count: 0,
            threads: config.threads.max(1),
        };
        lda.refresh_exp_elog_beta();
        Ok(lda)
    }

    fn refresh_exp_elog_beta(&mut self) {
        for t in 0..self.lambda.rows() {
            let row = self.lambda.row(t);
            let psi_sum = digamma(row.iter().sum());
            let out = self.exp_elog_beta.row_mut(t);
            for (o, &l) in out.iter_mut().zip(row) {
                *o = (digamma(l) - psi_sum).exp();
            }
        }
    }

    /// E-step for one document against the current expected topics.
    /// Returns (ids, per-word contribution rows) for the sufficient stats.
    fn e_step_doc(&self, doc: &[u32], sstats: &mut Matrix<f64>) {
        if doc.is_empty() {
            return;
        }
        let t = self.lambda.rows();
        let (ids, counts) = bag_of_words(doc);
        let mut gamma = vec![1.0; t];
        let mut etheta = exp_elog_theta(&gamma);
        for _ in 0..MAX_INFER_ITERS {
            let mut gnew = vec![self.alpha; t];
            for (&w, &n) in ids.iter().zip(&counts) {
                let mut phinorm = 1e-100;
                for k in 0..t {
                    phinorm += etheta[k] * self.exp_elog_beta.row(k)[w as usize];
                }
                let scale = n / phinorm;
                for k in 0..t {
                    gnew[k] += etheta[k] * self.exp_elog_beta.row(k)[w as usize] * scale;
                }
            }
            let change: f64 = gamma
                .iter()
                .zip(&gnew)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / t as f64;
            gamma = gnew;
            etheta = exp_elog_theta(&gamma);
            if change < ESTEP_TOL {
                break;
            }
        }
        for (&w, &n) in ids.iter().zip(&counts) {
            let mut phinorm = 1e-100;
            for k in 0..t {
                phinorm += etheta[k] * self.exp_elog_beta.row(k)[w as usize];
            }
            let scale = n / phinorm;
            for k in 0..t {
                sstats.row_mut(k)[w as usize] += etheta[k] * scale;
            }
        }
    }

    fn update_batch(&mut self, docs: &[Vec<u32>]) {
        let t = self.lambda.rows();
        let v = self.lambda.cols();
        let mut sstats = Matrix::zeros(t, v);
        if self.threads <= 1 || docs.len() < 2 {
            for doc in docs {
                self.e_step_doc(doc, &mut sstats);
            }
        } else {
            let chunk = docs.len().div_ceil(self.threads);
            let partials: Vec<Matrix<f64>> = std::thread::scope(|scope| {
                let handles: Vec<_> = docs
                    .chunks(chunk)
                    .map(|part| {
                        let this = &*self;
                        scope.spawn(move || {
                            let mut local = Matrix::zeros(t, v);
                            for doc in part {
                                this.e_step_doc(doc, &mut local);
                            }
                            local
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            // Merge in chunk order for a deterministic sum.
            for part in partials {
                for (acc, x) in sstats.as_mut_slice().iter_mut().zip(part.as_slice()) {
                    *acc += x;
                }
            }
        }
        // sstats currently holds expElogTheta * n / phinorm; finish the
        // expectation by multiplying with expElogBeta.
        for (s, &b) in sstats
            .as_mut_slice()
            .iter_mut()
            .zip(self.exp_elog_beta.as_slice())
        {
            *s *= b;
        }
        let rho = (self.tau0 + self.update_count as f64).powf(-self.kappa);
        let scale = self.total_docs as f64 / docs.len() as f64;
        for (l, &s) in self.lambda.as_mut_slice().iter_mut().zip(sstats.as_slice()) {
            *l = (1.0 - rho) * *l + rho * (self.eta + scale * s);
        }
        self.update_count += 1;
        self.refresh_exp_elog_beta();
    }

    /// One full sweep over the corpus in minibatches.
    pub fn fit_pass(&mut self, corpus: &EncodedCorpus) {
        for batch in corpus.documents().chunks(self.batch_size) {
            self.update_batch(batch);
        }
    }

    /// Point estimate of Pr(w|t): normalized variational topic rows.
    pub fn to_topic_model(&self) -> TopicModel {
        let t = self.lambda.rows();
        let v = self.lambda.cols();
        let mut phi = Matrix::zeros(t, v);
        for k in 0..t {
            let sum: f64 = self.lambda.row(k).iter().sum();
            let out = phi.row_mut(k);
            for (o, &l) in out.iter_mut().zip(self.lambda.row(k)) {
                *o = l / sum;
            }
        }
        TopicModel::new(phi, self.alpha, self.eta).expect("normalized rows are valid")
    }
}

/// Train online variational LDA over the encoded corpus.
pub fn train_online_lda(
    corpus: &EncodedCorpus,
    vocab_size: usize,
    config: &LdaConfig,
) -> Result<TopicModel> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut lda = OnlineLda::new(vocab_size, corpus.doc_count(), config)?;
    for _ in 0..config.passes.max(1) {
        lda.fit_pass(corpus);
    }
    Ok(lda.to_topic_model())
}

/// Left-to-right held-out estimate: per-word mean log-likelihood where each
/// position is scored with topics inferred from its prefix only.
pub fn left_to_right_log_likelihood(model: &TopicModel, docs: &[Vec<u32>]) -> f64 {
    let mut ll = 0.0;
    let mut n = 0u64;
    for doc in docs {
        for i in 0..doc.len() {
            let theta = infer_doc_topics(model, &doc[..i]).theta;
            let mut p = 0.0;
            for (k, &th) in theta.iter().enumerate() {
                p += th * model.word_given_topic(k, doc[i]);
            }
            ll += (p + 1e-300).ln();
            n += 1;
        }
    }
    ll / n as f64
}
