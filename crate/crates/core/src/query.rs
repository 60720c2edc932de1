//! Query scores for unlabeled target samples and the top-B selection step.
//!
//! All scores are "higher means more worth labeling". Scores are computed from
//! softmax probabilities, never from raw logits.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{softmax, top2, LinearClassifier, ProbVector};
use crate::counters::OpCounters;
use crate::error::{Error, Result};
use crate::losses::{margin_loss_grad_logits, Margin};
use crate::math;

/// Gradient norms below this make the cosine term zero.
pub const COSINE_NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Random,
    Entropy,
    Confidence,
    Margin,
    /// Margin score plus the gradient-direction consistency term.
    SdmG,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Random,
        Strategy::Entropy,
        Strategy::Confidence,
        Strategy::Margin,
        Strategy::SdmG,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::Confidence => "confidence",
            Strategy::Margin => "margin",
            Strategy::SdmG => "sdm_g",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryConfig {
    pub strategy: Strategy,
    /// Weight of the cosine term in the `sdm_g` score.
    pub lambda: f64,
    pub margin: Margin,
    /// Seed of the random strategy.
    pub seed: u64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Margin,
            lambda: 0.01,
            margin: Margin::default(),
            seed: 0,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                value: self.lambda,
            });
        }
        Ok(())
    }
}

/// Score of one target-pool sample; `sample_index` is its pool index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryScore {
    pub sample_index: usize,
    pub score: f64,
}

fn top2_of(probs: &ProbVector) -> (usize, usize) {
    // ProbVector guarantees at least two entries
    top2(probs).expect("probability vectors have at least two classes")
}

/// Margin sampling score `1 - (p_1* - p_2*)`, in `(0, 1]`; exactly 1 when the
/// top two probabilities tie.
pub fn q_margin(probs: &ProbVector) -> f64 {
    let (i1, i2) = top2_of(probs);
    1.0 - (probs[i1] - probs[i2])
}

/// Shannon entropy `-sum p ln p`, with `0 ln 0 = 0`.
pub fn q_entropy(probs: &ProbVector) -> f64 {
    -probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * math::ln(*p))
        .sum::<f64>()
}

/// Least-confidence score `1 - p_1*`.
pub fn q_confidence(probs: &ProbVector) -> f64 {
    let (i1, _) = top2_of(probs);
    1.0 - probs[i1]
}

/// Deterministic uniform value in `[0, 1)` for `(seed, index)`.
pub fn q_random(seed: u64, index: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.random::<f64>()
}

/// Coefficients `c` with `grad_f Q = sum_i c_i w_i`.
fn query_grad_coefficients(probs: &[f64], i1: usize, i2: usize) -> Vec<f64> {
    let (p1, p2) = (probs[i1], probs[i2]);
    let mut c: Vec<f64> = probs.iter().map(|p| -(p2 - p1) * p).collect();
    c[i2] += p2;
    c[i1] -= p1;
    c
}

/// Coefficients `e` with `p_1* grad_f L_m(x, 1*) + p_2* grad_f L_m(x, 2*) = sum_i e_i w_i`.
fn estimated_loss_coefficients(
    logits: &[f64],
    probs: &[f64],
    i1: usize,
    i2: usize,
    m: Margin,
) -> Result<Vec<f64>> {
    let mut e = vec![0.0; logits.len()];
    for y in [i1, i2] {
        let g = margin_loss_grad_logits(logits, y, m)?;
        math::axpy(probs[y], &g, &mut e);
    }
    Ok(e)
}

/// `grad_f Q = p_2* w_2* - p_1* w_1* - (p_2* - p_1*) sum_i p_i w_i`.
///
/// `probs` must be `softmax(clf.classify(f))`.
pub fn grad_f_query(f: &[f64], clf: &LinearClassifier, probs: &ProbVector) -> Result<Vec<f64>> {
    clf.check_dim(f.len())?;
    check_classes(clf, probs)?;
    let (i1, i2) = top2_of(probs);
    clf.combine_rows(&query_grad_coefficients(probs, i1, i2))
}

/// Label-free estimate of the loss gradient:
/// `p_1* grad_f L_m(x, 1*) + p_2* grad_f L_m(x, 2*)`.
pub fn estimated_loss_grad(
    f: &[f64],
    clf: &LinearClassifier,
    probs: &ProbVector,
    m: Margin,
) -> Result<Vec<f64>> {
    check_classes(clf, probs)?;
    let logits = clf.classify(f)?;
    let (i1, i2) = top2_of(probs);
    clf.combine_rows(&estimated_loss_coefficients(&logits, probs, i1, i2, m)?)
}

fn check_classes(clf: &LinearClassifier, probs: &ProbVector) -> Result<()> {
    if probs.len() != clf.classes() {
        return Err(Error::DimensionMismatch {
            expected: clf.classes(),
            found: probs.len(),
        });
    }
    Ok(())
}

/// Cosine similarity, zero when either vector is (nearly) zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (math::norm(a), math::norm(b));
    if na < COSINE_NORM_FLOOR || nb < COSINE_NORM_FLOOR {
        0.0
    } else {
        math::dot(a, b) / (na * nb)
    }
}

/// Gradient-consistency score
/// `q_margin + lambda * cos(estimated_loss_grad, grad_f_query)`, bounded in
/// `(-lambda, 1 + lambda]`.
pub fn q_sdm_g(f: &[f64], clf: &LinearClassifier, m: Margin, lambda: f64) -> Result<f64> {
    let mut counters = OpCounters::default();
    let logits = clf.classify_counted(f, &mut counters)?;
    sdm_g_score(clf, &logits, m, lambda, &mut counters)
}

fn sdm_g_score(
    clf: &LinearClassifier,
    logits: &[f64],
    m: Margin,
    lambda: f64,
    counters: &mut OpCounters,
) -> Result<f64> {
    let probs = softmax(logits);
    let q = q_margin(&probs);
    if lambda == 0.0 {
        return Ok(q);
    }
    let (i1, i2) = top2_of(&probs);
    let grad_q = clf.combine_rows(&query_grad_coefficients(&probs, i1, i2))?;
    let grad_l = clf.combine_rows(&estimated_loss_coefficients(logits, &probs, i1, i2, m)?)?;
    let (k, d) = (clf.classes() as u64, clf.dim() as u64);
    counters.weight_mul_adds += 2 * k * d;
    // dot product and two squared norms
    counters.vector_mul_adds += 3 * d;
    Ok(q + lambda * cosine(&grad_l, &grad_q))
}

/// Scores every sample of an unlabeled pool, in pool order.
///
/// The pool yields `(pool_index, features)` pairs only; labels never reach
/// this function.
pub fn score_pool<'a, I>(
    pool: I,
    clf: &LinearClassifier,
    config: &QueryConfig,
) -> Result<(Vec<QueryScore>, OpCounters)>
where
    I: IntoIterator<Item = (usize, &'a [f64])>,
{
    config.validate()?;
    let mut counters = OpCounters::default();
    let mut scores = Vec::new();
    for (sample_index, f) in pool {
        let score = match config.strategy {
            Strategy::Random => {
                clf.check_dim(f.len())?;
                q_random(config.seed, sample_index)
            }
            Strategy::Entropy => q_entropy(&softmax(&clf.classify_counted(f, &mut counters)?)),
            Strategy::Confidence => {
                q_confidence(&softmax(&clf.classify_counted(f, &mut counters)?))
            }
            Strategy::Margin => q_margin(&softmax(&clf.classify_counted(f, &mut counters)?)),
            Strategy::SdmG => {
                let logits = clf.classify_counted(f, &mut counters)?;
                sdm_g_score(clf, &logits, config.margin, config.lambda, &mut counters)?
            }
        };
        scores.push(QueryScore {
            sample_index,
            score,
        });
    }
    if scores.is_empty() {
        return Err(Error::Empty("pool"));
    }
    Ok((scores, counters))
}

fn rank_order(a: &QueryScore, b: &QueryScore) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.sample_index.cmp(&b.sample_index))
}

/// Pool indices of the `b` highest scores, best first; equal scores are
/// ordered by lower pool index.
pub fn select_top_b(scores: &[QueryScore], b: usize) -> Result<Vec<usize>> {
    select_top_b_counted(scores, b, &mut OpCounters::default())
}

/// [`select_top_b`] that also records the number of score comparisons made by
/// the sort.
pub fn select_top_b_counted(
    scores: &[QueryScore],
    b: usize,
    counters: &mut OpCounters,
) -> Result<Vec<usize>> {
    if b > scores.len() {
        return Err(Error::BudgetExceedsPool {
            requested: b,
            available: scores.len(),
        });
    }
    let mut ranked = scores.to_vec();
    let mut comparisons = 0u64;
    ranked.sort_by(|a, b| {
        comparisons += 1;
        rank_order(a, b)
    });
    counters.comparisons += comparisons;
    Ok(ranked[..b].iter().map(|s| s.sample_index).collect())
}
