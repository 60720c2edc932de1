//! Feature vectors, the bias-free linear classifier and its softmax readout.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use crate::counters::OpCounters;
use crate::error::{Error, Result};
use crate::math;

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// A D-dimensional feature `f = g(x)`. Non-empty and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("feature vector"));
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Unnormalized class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewClasses(values.len()));
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Logits {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Class probabilities: at least two entries, each in `[0, 1]`, summing to one
/// within `1e-9`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewClasses(values.len()));
        }
        let in_range = values.iter().all(|p| (0.0..=1.0).contains(p));
        let sum: f64 = values.iter().sum();
        if !in_range || (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidProbabilities);
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// K x D weight matrix, row `k` is the class-k weight `w_k`. No bias term: a
/// constant-one feature plays that role when needed.
///
/// In the binary setting row 0 is `w_+` and row 1 is `w_-`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    weights: Vec<f64>,
    classes: usize,
    dim: usize,
}

impl LinearClassifier {
    pub fn zeros(classes: usize, dim: usize) -> Result<Self> {
        Self::from_flat(classes, dim, vec![0.0; classes * dim])
    }

    /// Builds a classifier from row-major weights of length `classes * dim`.
    pub fn from_flat(classes: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::TooFewClasses(classes));
        }
        if dim == 0 {
            return Err(Error::Empty("feature dimension"));
        }
        if weights.len() != classes * dim {
            return Err(Error::DimensionMismatch {
                expected: classes * dim,
                found: weights.len(),
            });
        }
        check_finite(&weights)?;
        Ok(Self {
            weights,
            classes,
            dim,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(rows.len(), dim, flat)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks_exact(self.dim)
    }

    /// Row-major weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }

    /// `logits[k] = w_k . f`
    pub fn classify(&self, f: &[f64]) -> Result<Logits> {
        self.check_dim(f.len())?;
        Ok(Logits(self.rows().map(|w| math::dot(w, f)).collect()))
    }

    /// Same as [`classify`](Self::classify), recording K dot products of length D.
    pub fn classify_counted(&self, f: &[f64], counters: &mut OpCounters) -> Result<Logits> {
        let logits = self.classify(f)?;
        counters.dot_products += self.classes as u64;
        counters.weight_mul_adds += (self.classes * self.dim) as u64;
        Ok(logits)
    }

    /// `sum_k coeffs[k] * w_k`, i.e. `W^T coeffs`.
    pub fn combine_rows(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.classes {
            return Err(Error::DimensionMismatch {
                expected: self.classes,
                found: coeffs.len(),
            });
        }
        let mut out = vec![0.0; self.dim];
        for (c, w) in coeffs.iter().zip(self.rows()) {
            math::axpy(*c, w, &mut out);
        }
        Ok(out)
    }

    /// Plain gradient step `W -= lr * grad` with `grad` in row-major K x D layout.
    pub fn descend(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: grad.len(),
            });
        }
        math::axpy(-lr, grad, &mut self.weights);
        Ok(())
    }
}

/// Max-shifted softmax; never overflows for finite input.
pub fn softmax(logits: &[f64]) -> ProbVector {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| math::exp(l - max)).collect();
    let sum: f64 = p.iter().sum();
    for v in &mut p {
        *v /= sum;
    }
    ProbVector(p)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Indices of the largest and second-largest entries (`1*`, `2*`).
///
/// Ties go to the lowest index, so for `(0.5, 0.5)` the answer is `(0, 1)`.
pub fn top2(v: &[f64]) -> Result<(usize, usize)> {
    if v.len() < 2 {
        return Err(Error::TooFewClasses(v.len()));
    }
    let (mut first, mut second) = if v[1] > v[0] { (1, 0) } else { (0, 1) };
    for (i, x) in v.iter().enumerate().skip(2) {
        if *x > v[first] {
            second = first;
            first = i;
        } else if *x > v[second] {
            second = i;
        }
    }
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::vec::Vec;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
    }

    #[test]
    fn zero_classifier_gives_zero_logits() {
        let clf = LinearClassifier::zeros(4, 3).unwrap();
        assert_eq!(&*clf.classify(&[1.0, -2.0, 7.0]).unwrap(), &[0.0; 4]);
    }

    #[test]
    fn binary_dot_products() {
        let clf = LinearClassifier::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(&*clf.classify(&[3.0, 5.0]).unwrap(), &[3.0, 5.0]);
    }

    #[test]
    fn classify_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (k, d) = (5, 16);
        let w = random_vec(&mut rng, k * d);
        let f = random_vec(&mut rng, d);
        let clf = LinearClassifier::from_flat(k, d, w.clone()).unwrap();
        let logits = clf.classify(&f).unwrap();
        for class in 0..k {
            let mut acc = 0.0;
            for j in 0..d {
                acc += w[class * d + j] * f[j];
            }
            assert!((logits[class] - acc).abs() <= 1e-12);
        }
    }

    #[test]
    fn classify_rejects_wrong_dimension() {
        let clf = LinearClassifier::zeros(3, 4).unwrap();
        assert_eq!(
            clf.classify(&[1.0; 5]),
            Err(Error::DimensionMismatch { expected: 4, found: 5 })
        );
    }

    #[test]
    fn construction_errors() {
        assert_eq!(LinearClassifier::zeros(1, 3), Err(Error::TooFewClasses(1)));
        assert!(LinearClassifier::from_flat(2, 2, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(FeatureVector::new(vec![]).is_err());
        assert_eq!(FeatureVector::new(vec![1.0, f64::INFINITY]), Err(Error::NonFinite(1)));
    }

    #[test]
    fn softmax_cases() {
        let uniform = softmax(&[2.5; 4]);
        assert!(uniform.iter().all(|p| (p - 0.25).abs() < 1e-15));

        let extreme = softmax(&[1000.0, 0.0]);
        assert!((extreme[0] - 1.0).abs() < 1e-15 && extreme[1] >= 0.0 && extreme[1] < 1e-300);

        // reference values evaluated at 40 digits
        let p = softmax(&[1.0, 2.0, 3.0]);
        let expected = [0.090030573170380457998, 0.24472847105479765247, 0.66524095577482188953];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn top2_cases() {
        assert_eq!(top2(&[0.7, 0.2, 0.1]), Ok((0, 1)));
        assert_eq!(top2(&[0.5, 0.5]), Ok((0, 1)));
        assert_eq!(top2(&[0.1, 0.3, 0.3, 0.2]), Ok((1, 2)));
        assert_eq!(top2(&[1.0]), Err(Error::TooFewClasses(1)));
    }

    #[test]
    fn top2_agrees_with_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            // coarse grid so that ties show up
            let v: Vec<f64> = (0..10).map(|_| f64::from(rng.random_range(0..6u8))).collect();
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
            assert_eq!(top2(&v).unwrap(), (idx[0], idx[1]));
        }
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(l in proptest::collection::vec(-1e4f64..1e4, 2..12)) {
            let p = softmax(&l);
            prop_assert!(ProbVector::new(p.into_inner()).is_ok());
        }

        #[test]
        fn softmax_shift_invariant(
            l in proptest::collection::vec(-50.0f64..50.0, 2..10),
            c in -100.0f64..100.0,
        ) {
            let shifted: Vec<f64> = l.iter().map(|x| x + c).collect();
            let (a, b) = (softmax(&l), softmax(&shifted));
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn classify_is_linear(
            w in proptest::collection::vec(-2.0f64..2.0, 12),
            f1 in proptest::collection::vec(-2.0f64..2.0, 4),
            f2 in proptest::collection::vec(-2.0f64..2.0, 4),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let clf = LinearClassifier::from_flat(3, 4, w).unwrap();
            let mix: Vec<f64> = f1.iter().zip(&f2).map(|(x, y)| a * x + b * y).collect();
            let lhs = clf.classify(&mix).unwrap();
            let (l1, l2) = (clf.classify(&f1).unwrap(), clf.classify(&f2).unwrap());
            for k in 0..3 {
                prop_assert!((lhs[k] - (a * l1[k] + b * l2[k])).abs() <= 1e-9);
            }
        }

        #[test]
        fn top2_survives_softmax(l in proptest::collection::vec(-20.0f64..20.0, 2..10)) {
            prop_assert_eq!(top2(&l).unwrap(), top2(&softmax(&l)).unwrap());
        }
    }
}
