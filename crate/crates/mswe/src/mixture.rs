//! Per-token mixture weights and the compositional target vectors that mix
//! a word vector with topic vectors.

use crate::error::{Error, Result};
use crate::lda::{infer_doc_topics, TopicModel};
use crate::matrix::Matrix;
use crate::trainer::EmbeddingModel;

/// Mixture weights for one token occurrence: one lambda per topic,
/// each the product Pr(w|t) * Pr(t|d).
#[derive(Debug, Clone)]
pub struct MixtureWeights {
    lambda: Vec<f64>,
}

impl MixtureWeights {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        for &l in &lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::InvalidProbability(l));
            }
        }
        Ok(MixtureWeights { lambda })
    }

    /// All-zero weights: the skip-gram reduction.
    pub fn zeros(topics: usize) -> Self {
        MixtureWeights {
            lambda: vec![0.0; topics],
        }
    }

    /// Weights for one token of one document, from the trained topic model.
    pub fn for_token(topics: &TopicModel, theta: &[f64], word: u32) -> Result<Self> {
        let lambda = (0..topics.topics())
            .map(|t| mixture_weight(topics.word_given_topic(t, word), theta[t]))
            .collect::<Result<Vec<f64>>>()?;
        Ok(MixtureWeights { lambda })
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn sum(&self) -> f64 {
        self.lambda.iter().sum()
    }

    /// Index of the largest weight; ties go to the smallest index.
    pub fn argmax_topic(&self) -> usize {
        let mut best = 0;
        for (i, &l) in self.lambda.iter().enumerate().skip(1) {
            if l > self.lambda[best] {
                best = i;
            }
        }
        best
    }
}

/// lambda = Pr(w|t) * Pr(t|d).
pub fn mixture_weight(p_w_given_t: f64, p_t_given_d: f64) -> Result<f64> {
    for p in [p_w_given_t, p_t_given_d] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
    }
    Ok(p_w_given_t * p_t_given_d)
}

fn check_dims(v_w: &[f32], topic_vectors: &Matrix<f32>, weights: &MixtureWeights) -> Result<()> {
    if topic_vectors.rows() != weights.lambda.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.lambda.len(),
            found: topic_vectors.rows(),
        });
    }
    if topic_vectors.rows() > 0 && topic_vectors.cols() != v_w.len() {
        return Err(Error::DimensionMismatch {
            expected: v_w.len(),
            found: topic_vectors.cols(),
        });
    }
    Ok(())
}

/// s = (v_w + lambda_t' * v_t') / (1 + lambda_t') with t' the argmax topic.
pub fn compose_mswe1(
    v_w: &[f32],
    topic_vectors: &Matrix<f32>,
    weights: &MixtureWeights,
) -> Result<Vec<f32>> {
    check_dims(v_w, topic_vectors, weights)?;
    if weights.lambda.is_empty() {
        return Ok(v_w.to_vec());
    }
    let t = weights.argmax_topic();
    let l = weights.lambda[t] as f32;
    let norm = 1.0 + l;
    Ok(v_w
        .iter()
        .zip(topic_vectors.row(t))
        .map(|(&w, &v)| (w + l * v) / norm)
        .collect())
}

/// s = (v_w + sum_t lambda_t * v_t) / (1 + sum_t lambda_t).
pub fn compose_mswe2(
    v_w: &[f32],
    topic_vectors: &Matrix<f32>,
    weights: &MixtureWeights,
) -> Result<Vec<f32>> {
    check_dims(v_w, topic_vectors, weights)?;
    let mut s = v_w.to_vec();
    let mut sum = 0.0f32;
    for (t, &l) in weights.lambda.iter().enumerate() {
        let l = l as f32;
        if l != 0.0 {
            for (acc, &v) in s.iter_mut().zip(topic_vectors.row(t)) {
                *acc += l * v;
            }
            sum += l;
        }
    }
    let norm = 1.0 + sum;
    for x in &mut s {
        *x /= norm;
    }
    Ok(s)
}

/// Sense vector v_{w,t} = v_w concatenated with Pr(w|t) * v_t.
pub fn sense_vector(v_w: &[f32], v_t: &[f32], p_w_given_t: f64) -> Vec<f32> {
    let p = p_w_given_t as f32;
    v_w.iter()
        .copied()
        .chain(v_t.iter().map(|&v| p * v))
        .collect()
}

/// Context vector: mean word vector concatenated with the
/// theta-weighted topic-vector sum, theta inferred by treating the
/// context as a document.
pub fn context_vector(
    context_words: &[u32],
    model: &EmbeddingModel,
    topics: &TopicModel,
) -> Result<Vec<f32>> {
    if context_words.is_empty() {
        return Err(Error::EmptyContext);
    }
    let dim = model.dim();
    let mut mean = vec![0.0f32; dim];
    for &w in context_words {
        for (acc, &v) in mean.iter_mut().zip(model.target().row(w as usize)) {
            *acc += v;
        }
    }
    let inv = 1.0 / context_words.len() as f32;
    for x in &mut mean {
        *x *= inv;
    }
    let theta = infer_doc_topics(topics, context_words).theta;
    let mut topic_part = vec![0.0f32; dim];
    for (t, &th) in theta.iter().enumerate() {
        let th = th as f32;
        for (acc, &v) in topic_part.iter_mut().zip(model.topic().row(t)) {
            *acc += th * v;
        }
    }
    mean.extend(topic_part);
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(lambda: &[f64]) -> MixtureWeights {
        MixtureWeights::new(lambda.to_vec()).unwrap()
    }

    #[test]
    fn mixture_weight_is_product() {
        assert_eq!(mixture_weight(0.02, 0.5).unwrap(), 0.01);
        assert_eq!(mixture_weight(0.0, 0.9).unwrap(), 0.0);
        assert_eq!(mixture_weight(1.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn mixture_weight_rejects_out_of_range() {
        assert!(matches!(
            mixture_weight(1.5, 0.5),
            Err(Error::InvalidProbability(_))
        ));
        assert!(matches!(
            mixture_weight(0.5, -0.1),
            Err(Error::InvalidProbability(_))
        ));
    }

    #[test]
    fn mswe1_zero_lambda_is_identity() {
        let topics = Matrix::from_vec(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        let v_w = [0.5f32, -0.25];
        let s = compose_mswe1(&v_w, &topics, &weights(&[0.0, 0.0])).unwrap();
        assert_eq!(s, v_w.to_vec());
    }

    #[test]
    fn mswe1_arithmetic() {
        let topics = Matrix::from_vec(vec![0.0, 1.0], 1, 2);
        let s = compose_mswe1(&[1.0, 0.0], &topics, &weights(&[1.0])).unwrap();
        assert_eq!(s, vec![0.5, 0.5]);
    }

    #[test]
    fn mswe1_tie_breaks_to_lowest_index() {
        let topics = Matrix::from_vec(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let s = compose_mswe1(&[0.0, 0.0], &topics, &weights(&[0.5, 0.5])).unwrap();
        // Topic 0 is (1, 0): composition leans on the first axis.
        assert!(s[0] > 0.0 && s[1] == 0.0);
        assert_eq!(weights(&[0.5, 0.5]).argmax_topic(), 0);
    }

    #[test]
    fn mswe2_zero_lambda_is_identity() {
        let topics = Matrix::from_vec(vec![9.0, 9.0], 1, 2);
        let v_w = [1.25f32, -3.5];
        let s = compose_mswe2(&v_w, &topics, &weights(&[0.0])).unwrap();
        assert_eq!(s, v_w.to_vec());
    }

    #[test]
    fn mswe2_arithmetic() {
        let topics = Matrix::from_vec(vec![0.0, 2.0], 1, 2);
        let s = compose_mswe2(&[2.0, 0.0], &topics, &weights(&[1.0])).unwrap();
        assert_eq!(s, vec![1.0, 1.0]);

        let topics = Matrix::from_vec(vec![0.0, 1.0, 1.0, 0.0], 2, 2);
        let s = compose_mswe2(&[1.0, 0.0], &topics, &weights(&[0.5, 0.5])).unwrap();
        assert_eq!(s, vec![0.75, 0.25]);
    }

    #[test]
    fn compositions_agree_with_single_nonzero_lambda() {
        let topics = Matrix::from_vec(vec![1.0, -2.0, 0.0, 3.0], 2, 2);
        let w = weights(&[0.0, 0.3]);
        let a = compose_mswe1(&[0.4, 0.8], &topics, &w).unwrap();
        let b = compose_mswe2(&[0.4, 0.8], &topics, &w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let topics = Matrix::from_vec(vec![1.0, 2.0, 3.0], 1, 3);
        assert!(matches!(
            compose_mswe1(&[1.0, 2.0], &topics, &weights(&[0.5])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            compose_mswe2(&[1.0, 2.0], &topics, &weights(&[0.5])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sense_vector_concatenates_and_scales() {
        assert_eq!(
            sense_vector(&[1.0, 2.0], &[3.0, 4.0], 0.5),
            vec![1.0, 2.0, 1.5, 2.0]
        );
        assert_eq!(
            sense_vector(&[1.0, 2.0], &[3.0, 4.0], 0.0),
            vec![1.0, 2.0, 0.0, 0.0]
        );
        assert_eq!(sense_vector(&[1.0; 7], &[2.0; 7], 0.3).len(), 14);
    }

    #[test]
    fn compositions_are_convex_combinations() {
        // Coefficients 1/(1+sum) and lambda_t/(1+sum) are non-negative and
        // sum to at most 1 (exactly 1 when v_w carries weight 1/(1+sum)).
        let lam = [0.2, 0.05, 0.4];
        let w = weights(&lam);
        let sum: f64 = lam.iter().sum();
        let coeff_w = 1.0 / (1.0 + sum);
        let coeffs: Vec<f64> = lam.iter().map(|l| l / (1.0 + sum)).collect();
        let total: f64 = coeff_w + coeffs.iter().sum::<f64>();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(coeff_w > 0.0 && coeffs.iter().all(|&c| c >= 0.0));

        // Sup-norm bound on the composed vector.
        let topics = Matrix::from_vec(vec![1.0, -1.0, 0.5, 0.25, -0.75, 0.1], 3, 2);
        let v_w = [0.9f32, -0.6];
        for compose in [compose_mswe1, compose_mswe2] {
            let s = compose(&v_w, &topics, &w).unwrap();
            let bound = v_w
                .iter()
                .chain(topics.as_slice())
                .map(|x| x.abs())
                .fold(0.0f32, f32::max);
            assert!(s.iter().all(|x| x.abs() <= bound + 1e-6));
        }
    }

    #[test]
    fn lambda_scaled_to_zero_approaches_v_w() {
        let topics = Matrix::from_vec(vec![5.0, -5.0, 2.0, 2.0], 2, 2);
        let v_w = [0.3f32, 0.7];
        let alpha = 1e-9;
        let w = weights(&[0.6 * alpha, 0.4 * alpha]);
        for compose in [compose_mswe1, compose_mswe2] {
            let s = compose(&v_w, &topics, &w).unwrap();
            for (a, b) in s.iter().zip(&v_w) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
