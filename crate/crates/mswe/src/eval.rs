//! Word-similarity scoring (GlobalSim, AvgSim, AvgSimC) with Spearman
//! correlation, and the word-analogy task.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Serialize;

use crate::corpus::{preprocess_text, Vocabulary};
use crate::error::{Error, Result};
use crate::lda::TopicModel;
use crate::mixture::{context_vector, sense_vector};
use crate::trainer::EmbeddingModel;

/// Clamp for the inverse-cosine-distance likelihood at cos = 1.
pub const DELTA_EPSILON: f64 = 1e-4;

/// The likelihood that a sense fits a context. The default reads "inverse
/// of the cosine distance" as 1/(1-cos), clamped; `Cosine` is the
/// alternative reading, plain cosine similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaMode {
    InverseCosineDistance,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityMetric {
    Global,
    Avg,
    AvgC,
}

impl std::str::FromStr for SimilarityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(SimilarityMetric::Global),
            "avg" => Ok(SimilarityMetric::Avg),
            "avgc" => Ok(SimilarityMetric::AvgC),
            other => Err(Error::InvalidConfig(format!("unknown metric: {other}"))),
        }
    }
}

fn cosine_flagged(a: &[f32], b: &[f32]) -> (f64, bool) {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return (0.0, true);
    }
    ((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0), false)
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    cosine_flagged(a, b).0
}

fn delta(u: &[f32], v: &[f32], mode: DeltaMode) -> f64 {
    let c = cosine(u, v);
    match mode {
        DeltaMode::InverseCosineDistance => 1.0 / (1.0 - c).max(DELTA_EPSILON),
        DeltaMode::Cosine => c,
    }
}

/// Cosine of the two target vectors; OOV words use the UNK vector.
pub fn global_sim(model: &EmbeddingModel, vocab: &Vocabulary, w1: &str, w2: &str) -> (f64, bool) {
    let a = model.target().row(vocab.id(w1) as usize);
    let b = model.target().row(vocab.id(w2) as usize);
    cosine_flagged(a, b)
}

fn all_sense_vectors(
    model: &EmbeddingModel,
    topics: &TopicModel,
    word_id: u32,
) -> Vec<Vec<f32>> {
    let v_w = model.target().row(word_id as usize);
    (0..topics.topics())
        .map(|t| {
            sense_vector(
                v_w,
                model.topic().row(t),
                topics.word_given_topic(t, word_id),
            )
        })
        .collect()
}

fn require_topics(model: &EmbeddingModel) -> Result<()> {
    if model.topic_count() == 0 {
        return Err(Error::MissingTopics);
    }
    Ok(())
}

/// Mean cosine over all T^2 sense-vector pairs.
pub fn avg_sim(
    model: &EmbeddingModel,
    topics: &TopicModel,
    vocab: &Vocabulary,
    w1: &str,
    w2: &str,
) -> Result<(f64, bool)> {
    require_topics(model)?;
    let senses1 = all_sense_vectors(model, topics, vocab.id(w1));
    let senses2 = all_sense_vectors(model, topics, vocab.id(w2));
    let mut sum = 0.0;
    let mut flagged = false;
    for a in &senses1 {
        for b in &senses2 {
            let (c, f) = cosine_flagged(a, b);
            sum += c;
            flagged |= f;
        }
    }
    let t2 = (senses1.len() * senses2.len()) as f64;
    Ok((sum / t2, flagged))
}

/// Context-weighted mean over all T^2 sense-vector pairs. Contexts are
/// id sequences (already preprocessed, OOV dropped).
#[allow(clippy::too_many_arguments)]
pub fn avg_sim_c(
    model: &EmbeddingModel,
    topics: &TopicModel,
    vocab: &Vocabulary,
    w1: &str,
    ctx1: &[u32],
    w2: &str,
    ctx2: &[u32],
    mode: DeltaMode,
) -> Result<(f64, bool)> {
    require_topics(model)?;
    if ctx1.is_empty() || ctx2.is_empty() {
        return Err(Error::EmptyContext);
    }
    let vc1 = context_vector(ctx1, model, topics)?;
    let vc2 = context_vector(ctx2, model, topics)?;
    let senses1 = all_sense_vectors(model, topics, vocab.id(w1));
    let senses2 = all_sense_vectors(model, topics, vocab.id(w2));
    let d1: Vec<f64> = senses1.iter().map(|s| delta(s, &vc1, mode)).collect();
    let d2: Vec<f64> = senses2.iter().map(|s| delta(s, &vc2, mode)).collect();
    let mut sum = 0.0;
    let mut flagged = false;
    for (a, da) in senses1.iter().zip(&d1) {
        for (b, db) in senses2.iter().zip(&d2) {
            let (c, f) = cosine_flagged(a, b);
            sum += da * db * c;
            flagged |= f;
        }
    }
    let t2 = (senses1.len() * senses2.len()) as f64;
    Ok((sum / t2, flagged))
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite scores"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Average rank for the tie group, 1-based.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average-ranked data.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("length mismatch or fewer than 2 points"));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in rx.iter().zip(&ry) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant sequence"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// One scored word pair, optionally with sentential contexts.
#[derive(Debug, Clone)]
pub struct SimilarityPair {
    pub word1: String,
    pub word2: String,
    pub human_score: f64,
    pub context1: Option<String>,
    pub context2: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SimilarityDataset {
    pub name: String,
    pub pairs: Vec<SimilarityPair>,
}

impl SimilarityDataset {
    /// Parse either plain "word1<TAB>word2<TAB>score" (whitespace accepted)
    /// or the SCWS layout: id, words with POS, <b>-marked contexts, then
    /// score fields.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string());
        let mut pairs = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let tab_fields: Vec<&str> = line.split('\t').collect();
            if tab_fields.len() >= 8 {
                // SCWS: id w1 pos1 w2 pos2 ctx1 ctx2 avg_score ratings...
                let score: f64 = tab_fields[7].trim().parse().map_err(|e| {
                    Error::parse(path, lineno + 1, format!("bad score: {e}"))
                })?;
                pairs.push(SimilarityPair {
                    word1: tab_fields[1].trim().to_lowercase(),
                    word2: tab_fields[3].trim().to_lowercase(),
                    human_score: score,
                    context1: Some(tab_fields[5].to_string()),
                    context2: Some(tab_fields[6].to_string()),
                });
            } else {
                let fields: Vec<&str> = if tab_fields.len() == 3 {
                    tab_fields
                } else {
                    trimmed.split_whitespace().collect()
                };
                if fields.len() != 3 {
                    return Err(Error::parse(
                        path,
                        lineno + 1,
                        "expected word1 word2 score",
                    ));
                }
                let score: f64 = fields[2].trim().parse().map_err(|e| {
                    Error::parse(path, lineno + 1, format!("bad score: {e}"))
                })?;
                pairs.push(SimilarityPair {
                    word1: fields[0].trim().to_lowercase(),
                    word2: fields[1].trim().to_lowercase(),
                    human_score: score,
                    context1: None,
                    context2: None,
                });
            }
        }
        if pairs.is_empty() {
            return Err(Error::parse(path, 0, "no pairs in dataset"));
        }
        Ok(SimilarityDataset { name, pairs })
    }

    pub fn has_contexts(&self) -> bool {
        self.pairs
            .iter()
            .all(|p| p.context1.is_some() && p.context2.is_some())
    }
}

/// Preprocess a raw SCWS context: strip the <b>..</b> target markers, run
/// the training pipeline, drop OOV words.
pub fn encode_context(raw: &str, vocab: &Vocabulary) -> Vec<u32> {
    let stripped = raw.replace("<b>", " ").replace("</b>", " ");
    preprocess_text(&stripped)
        .iter()
        .filter_map(|t| vocab.lookup(t))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PairResult {
    pub word1: String,
    pub word2: String,
    pub human_score: f64,
    pub model_score: f64,
    /// True when a zero vector forced the score to 0.
    pub zero_vector: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimilarityReport {
    pub dataset: String,
    pub metric: String,
    pub pair_count: usize,
    /// Spearman's rho scaled by 100.
    pub rho_times_100: f64,
    pub zero_vector_pairs: usize,
    pub pairs: Vec<PairResult>,
}

/// Score every pair with the chosen metric, then Spearman against the
/// human judgments.
pub fn run_similarity_eval(
    model: &EmbeddingModel,
    topics: Option<&TopicModel>,
    vocab: &Vocabulary,
    dataset: &SimilarityDataset,
    metric: SimilarityMetric,
    delta_mode: DeltaMode,
) -> Result<SimilarityReport> {
    if metric == SimilarityMetric::AvgC && !dataset.has_contexts() {
        return Err(Error::MissingContexts);
    }
    if metric != SimilarityMetric::Global {
        require_topics(model)?;
    }
    let topics = match metric {
        SimilarityMetric::Global => None,
        _ => Some(topics.ok_or(Error::MissingTopics)?),
    };

    let mut results = Vec::with_capacity(dataset.pairs.len());
    for pair in &dataset.pairs {
        let (score, flagged) = match metric {
            SimilarityMetric::Global => global_sim(model, vocab, &pair.word1, &pair.word2),
            SimilarityMetric::Avg => avg_sim(
                model,
                topics.unwrap(),
                vocab,
                &pair.word1,
                &pair.word2,
            )?,
            SimilarityMetric::AvgC => {
                let ctx1 = encode_context(pair.context1.as_ref().unwrap(), vocab);
                let ctx2 = encode_context(pair.context2.as_ref().unwrap(), vocab);
                avg_sim_c(
                    model,
                    topics.unwrap(),
                    vocab,
                    &pair.word1,
                    &ctx1,
                    &pair.word2,
                    &ctx2,
                    delta_mode,
                )?
            }
        };
        results.push(PairResult {
            word1: pair.word1.clone(),
            word2: pair.word2.clone(),
            human_score: pair.human_score,
            model_score: score,
            zero_vector: flagged,
        });
    }

    let xs: Vec<f64> = results.iter().map(|r| r.model_score).collect();
    let ys: Vec<f64> = results.iter().map(|r| r.human_score).collect();
    let rho = spearman(&xs, &ys)?;
    Ok(SimilarityReport {
        dataset: dataset.name.clone(),
        metric: match metric {
            SimilarityMetric::Global => "global",
            SimilarityMetric::Avg => "avg",
            SimilarityMetric::AvgC => "avgc",
        }
        .to_string(),
        pair_count: results.len(),
        rho_times_100: rho * 100.0,
        zero_vector_pairs: results.iter().filter(|r| r.zero_vector).count(),
        pairs: results,
    })
}

#[derive(Debug, Clone)]
pub struct AnalogyQuestion {
    pub a: String,
    pub b: String,
    pub c: String,
    pub gold: String,
    pub category: String,
}

#[derive(Debug, Clone)]
pub struct AnalogyDataset {
    pub questions: Vec<AnalogyQuestion>,
}

impl AnalogyDataset {
    /// Category header lines start with ":", questions are 4 words.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut questions = Vec::new();
        let mut category = String::from("uncategorized");
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix(':') {
                category = rest.trim().to_string();
                continue;
            }
            let words: Vec<&str> = trimmed.split_whitespace().collect();
            if words.len() != 4 {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("expected 4 words, found {}", words.len()),
                ));
            }
            questions.push(AnalogyQuestion {
                a: words[0].to_lowercase(),
                b: words[1].to_lowercase(),
                c: words[2].to_lowercase(),
                gold: words[3].to_lowercase(),
                category: category.clone(),
            });
        }
        if questions.is_empty() {
            return Err(Error::parse(path, 0, "no questions in dataset"));
        }
        Ok(AnalogyDataset { questions })
    }

    pub fn semantic_syntactic_counts(&self) -> (usize, usize) {
        let syntactic = self
            .questions
            .iter()
            .filter(|q| q.category.starts_with("gram"))
            .count();
        (self.questions.len() - syntactic, syntactic)
    }
}

/// Closest vocabulary word to v_b - v_a + v_c under cosine, excluding
/// a, b, c, and UNK.
pub fn analogy_answer(
    model: &EmbeddingModel,
    vocab: &Vocabulary,
    a: &str,
    b: &str,
    c: &str,
) -> Result<String> {
    if vocab.size() < 4 {
        return Err(Error::VocabularyTooSmall);
    }
    let ids = [vocab.id(a), vocab.id(b), vocab.id(c)];
    let dim = model.dim();
    let mut query = vec![0.0f32; dim];
    let va = model.target().row(ids[0] as usize);
    let vb = model.target().row(ids[1] as usize);
    let vc = model.target().row(ids[2] as usize);
    for d in 0..dim {
        query[d] = vb[d] - va[d] + vc[d];
    }
    let mut best: Option<(u32, f64)> = None;
    for x in 0..vocab.size() as u32 {
        if ids.contains(&x) || x == vocab.unk_id() {
            continue;
        }
        let score = cosine(model.target().row(x as usize), &query);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((x, score));
        }
    }
    let (id, _) = best.ok_or(Error::VocabularyTooSmall)?;
    Ok(vocab.token(id).to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct CategoryAccuracy {
    pub category: String,
    pub correct: usize,
    pub total: usize,
    pub oov_gold: usize,
    pub accuracy_percent: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalogyReport {
    pub total: usize,
    pub correct: usize,
    pub oov_gold: usize,
    pub accuracy_percent: f64,
    pub categories: Vec<CategoryAccuracy>,
}

/// Exact-match accuracy; questions whose gold answer is OOV count as
/// incorrect and are also reported separately.
pub fn run_analogy_eval(
    model: &EmbeddingModel,
    vocab: &Vocabulary,
    dataset: &AnalogyDataset,
) -> Result<AnalogyReport> {
    let mut categories: Vec<CategoryAccuracy> = Vec::new();
    let mut correct = 0usize;
    let mut oov_gold = 0usize;
    for q in &dataset.questions {
        let cat = match categories.iter_mut().find(|c| c.category == q.category) {
            Some(c) => c,
            None => {
                categories.push(CategoryAccuracy {
                    category: q.category.clone(),
                    correct: 0,
                    total: 0,
                    oov_gold: 0,
                    accuracy_percent: 0.0,
                });
                categories.last_mut().unwrap()
            }
        };
        cat.total += 1;
        if vocab.lookup(&q.gold).is_none() {
            oov_gold += 1;
            cat.oov_gold += 1;
            continue;
        }
        let answer = analogy_answer(model, vocab, &q.a, &q.b, &q.c)?;
        if answer == q.gold {
            correct += 1;
            cat.correct += 1;
        }
    }
    for cat in &mut categories {
        cat.accuracy_percent = 100.0 * cat.correct as f64 / cat.total as f64;
    }
    let total = dataset.questions.len();
    Ok(AnalogyReport {
        total,
        correct,
        oov_gold,
        accuracy_percent: 100.0 * correct as f64 / total as f64,
        categories,
    })
}
