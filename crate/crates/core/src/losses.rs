//! Training objectives with closed-form gradients.
//!
//! Hinge activations use a strict inequality: a term with
//! `m - logits[y] + logits[i]` exactly zero contributes neither loss nor
//! gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::classifier::{softmax, LinearClassifier};
use crate::error::{Error, Result};
use crate::math;

/// Probability floor applied before the log in the cross-entropy.
pub const CE_CLAMP: f64 = 1e-12;

/// Margin width `m`, finite and positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margin(f64);

impl Margin {
    pub const DEFAULT: Margin = Margin(1.0);

    pub fn new(m: f64) -> Result<Self> {
        if m.is_finite() && m > 0.0 {
            Ok(Self(m))
        } else {
            Err(Error::InvalidParameter { name: "m", value: m })
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Margin {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Loss value plus its gradients. `grad_features` is only filled by callers
/// that also have the classifier at hand.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad_logits: Vec<f64>,
    pub grad_features: Option<Vec<f64>>,
}

fn check_label(logits: &[f64], y: usize) -> Result<()> {
    if y >= logits.len() {
        return Err(Error::InvalidClass {
            index: y,
            classes: logits.len(),
        });
    }
    Ok(())
}

/// Hinge arguments `m - logits[y] + logits[i]` for every `i != y` (the entry
/// at `y` is left at zero).
fn hinge_args(logits: &[f64], y: usize, m: Margin) -> Vec<f64> {
    logits
        .iter()
        .enumerate()
        .map(|(i, l)| if i == y { 0.0 } else { m.0 - logits[y] + l })
        .collect()
}

/// `sum_{i != y} [m - logits[y] + logits[i]]_+`
pub fn margin_loss(logits: &[f64], y: usize, m: Margin) -> Result<f64> {
    check_label(logits, y)?;
    Ok(hinge_args(logits, y, m)
        .iter()
        .enumerate()
        .filter(|&(i, a)| i != y && *a > 0.0)
        .map(|(_, a)| a)
        .sum())
}

pub fn margin_loss_grad_logits(logits: &[f64], y: usize, m: Margin) -> Result<Vec<f64>> {
    check_label(logits, y)?;
    let mut g = vec![0.0; logits.len()];
    for (i, a) in hinge_args(logits, y, m).into_iter().enumerate() {
        if i != y && a > 0.0 {
            g[i] = 1.0;
            g[y] -= 1.0;
        }
    }
    Ok(g)
}

/// `sum_{i != y} delta(m > w_y.f - w_i.f) (w_i - w_y)`, computed as
/// `W^T grad_logits`.
pub fn margin_loss_grad_features(
    f: &[f64],
    clf: &LinearClassifier,
    y: usize,
    m: Margin,
) -> Result<Vec<f64>> {
    let logits = clf.classify(f)?;
    let g = margin_loss_grad_logits(&logits, y, m)?;
    clf.combine_rows(&g)
}

/// Dynamic margin loss:
/// `sum_{i != y} alpha_i [m - logits[y] + logits[i]]_+ - logits[y]` with
/// `alpha_i = 1 - (logits[y] - logits[i]) / m`.
pub fn dynamic_margin_loss(logits: &[f64], y: usize, m: Margin) -> Result<f64> {
    check_label(logits, y)?;
    let mut total = -logits[y];
    for (i, a) in hinge_args(logits, y, m).into_iter().enumerate() {
        if i != y && a > 0.0 {
            let alpha = 1.0 - (logits[y] - logits[i]) / m.0;
            total += alpha * a;
        }
    }
    Ok(total)
}

/// Gradient of the dynamic margin loss with every `alpha_i` held constant.
pub fn dynamic_margin_loss_grad_logits(logits: &[f64], y: usize, m: Margin) -> Result<Vec<f64>> {
    check_label(logits, y)?;
    let mut g = vec![0.0; logits.len()];
    for (i, a) in hinge_args(logits, y, m).into_iter().enumerate() {
        if i != y && a > 0.0 {
            let alpha = 1.0 - (logits[y] - logits[i]) / m.0;
            g[i] = alpha;
            g[y] -= alpha;
        }
    }
    g[y] -= 1.0;
    Ok(g)
}

/// `-log p_y` (with `p_y` clamped at [`CE_CLAMP`]) and its logit gradient
/// `p - onehot(y)`.
pub fn cross_entropy(probs: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
    check_label(probs, y)?;
    let value = -math::ln(probs[y].max(CE_CLAMP));
    let mut grad = probs.to_vec();
    grad[y] -= 1.0;
    Ok((value, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginVariant {
    Margin,
    DynamicMargin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Margin,
    DynamicMargin,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// Per-sample training objective: an optional margin term plus a weighted
/// auxiliary cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub margin_term: Option<MarginVariant>,
    pub ce_weight: f64,
    pub margin: Margin,
    pub reduction: Reduction,
}

impl Objective {
    /// A single loss with sum reduction.
    pub fn single(kind: LossKind, margin: Margin) -> Self {
        let (margin_term, ce_weight) = match kind {
            LossKind::Margin => (Some(MarginVariant::Margin), 0.0),
            LossKind::DynamicMargin => (Some(MarginVariant::DynamicMargin), 0.0),
            LossKind::CrossEntropy => (None, 1.0),
        };
        Self {
            margin_term,
            ce_weight,
            margin,
            reduction: Reduction::Sum,
        }
    }

    pub fn evaluate(&self, logits: &[f64], y: usize) -> Result<LossValue> {
        check_label(logits, y)?;
        let (mut value, mut grad_logits) = match self.margin_term {
            Some(MarginVariant::Margin) => (
                margin_loss(logits, y, self.margin)?,
                margin_loss_grad_logits(logits, y, self.margin)?,
            ),
            Some(MarginVariant::DynamicMargin) => (
                dynamic_margin_loss(logits, y, self.margin)?,
                dynamic_margin_loss_grad_logits(logits, y, self.margin)?,
            ),
            None => (0.0, vec![0.0; logits.len()]),
        };
        if self.ce_weight != 0.0 {
            let (ce, ce_grad) = cross_entropy(&softmax(logits), y)?;
            value += self.ce_weight * ce;
            math::axpy(self.ce_weight, &ce_grad, &mut grad_logits);
        }
        Ok(LossValue {
            value,
            grad_logits,
            grad_features: None,
        })
    }

    /// Reduced loss over a labeled batch.
    pub fn batch_loss(&self, batch: &[(&[f64], usize)], clf: &LinearClassifier) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut total = 0.0;
        for (f, y) in batch {
            total += self.evaluate(&clf.classify(f)?, *y)?.value;
        }
        Ok(self.reduce(total, batch.len()))
    }

    fn reduce(&self, total: f64, n: usize) -> f64 {
        match self.reduction {
            Reduction::Sum => total,
            Reduction::Mean => total / n as f64,
        }
    }
}

/// Gradient of the reduced batch loss w.r.t. the K x D weights (row-major):
/// `sum_samples grad_logits ⊗ f`, accumulated in batch order.
///
/// For two classes and the plain margin loss this is exactly the δ-gated sums
/// over positives and negatives.
pub fn weight_gradient(
    batch: &[(&[f64], usize)],
    clf: &LinearClassifier,
    objective: &Objective,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let d = clf.dim();
    let mut grad = vec![0.0; clf.classes() * d];
    for (f, y) in batch {
        let loss = objective.evaluate(&clf.classify(f)?, *y)?;
        for (row, g) in grad.chunks_exact_mut(d).zip(&loss.grad_logits) {
            if *g != 0.0 {
                math::axpy(*g, f, row);
            }
        }
    }
    if objective.reduction == Reduction::Mean {
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::vec::Vec;

    const M: Margin = Margin(1.0);
    const EXAMPLE: [f64; 3] = [2.0, 0.5, 1.5];

    fn naive_margin_loss(l: &[f64], y: usize, m: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..l.len() {
            if i != y {
                let t = m - l[y] + l[i];
                if t > 0.0 {
                    acc += t;
                }
            }
        }
        acc
    }

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        let mut p = x.to_vec();
        for j in 0..x.len() {
            p[j] = x[j] + h;
            let up = f(&p);
            p[j] = x[j] - h;
            let down = f(&p);
            p[j] = x[j];
            out.push((up - down) / (2.0 * h));
        }
        out
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let scale = math::norm(a).max(math::norm(b));
        if scale < 1e-12 {
            0.0
        } else {
            diff / scale
        }
    }

    fn away_from_kinks(l: &[f64], y: usize, m: f64) -> bool {
        (0..l.len()).all(|i| i == y || (m - l[y] + l[i]).abs() > 1e-3)
    }

    #[test]
    fn margin_loss_example() {
        assert_eq!(margin_loss(&EXAMPLE, 0, M), Ok(0.5));
        assert_eq!(margin_loss_grad_logits(&EXAMPLE, 0, M), Ok(vec![-1.0, 0.0, 1.0]));
        assert_eq!(margin_loss(&[5.0, 3.0, 1.0], 0, M), Ok(0.0));
        assert_eq!(margin_loss_grad_logits(&[5.0, 3.0, 1.0], 0, M), Ok(vec![0.0; 3]));
        assert_eq!(
            margin_loss(&EXAMPLE, 3, M),
            Err(Error::InvalidClass { index: 3, classes: 3 })
        );
    }

    #[test]
    fn hinge_at_kink_is_inactive() {
        // logits[y] - logits[1] == m exactly
        assert_eq!(margin_loss_grad_logits(&[1.0, 0.0], 0, M), Ok(vec![0.0, 0.0]));
    }

    #[test]
    fn margin_loss_matches_term_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let l: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y = rng.random_range(0..8);
            let m = rng.random_range(0.1..3.0);
            let got = margin_loss(&l, y, Margin::new(m).unwrap()).unwrap();
            assert!((got - naive_margin_loss(&l, y, m)).abs() <= 1e-12);
        }
    }

    #[test]
    fn margin_grad_logits_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut checked = 0;
        while checked < 200 {
            let l: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = rng.random_range(0..6);
            if !away_from_kinks(&l, y, 1.0) {
                continue;
            }
            let fd = central_diff(|x| naive_margin_loss(x, y, 1.0), &l, 1e-5);
            let g = margin_loss_grad_logits(&l, y, M).unwrap();
            assert!(rel_err(&g, &fd) <= 1e-6);
            checked += 1;
        }
    }

    #[test]
    fn feature_gradient_cases() {
        // only class 2 violates the margin for y = 0
        let clf = LinearClassifier::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 0.25],
            vec![0.0, 0.75],
        ])
        .unwrap();
        let f = [2.0, 2.0]; // logits (2, 0.5, 1.5)
        let g = margin_loss_grad_features(&f, &clf, 0, M).unwrap();
        assert_eq!(g, vec![-1.0, 0.75]);

        let far = [10.0, 0.0];
        assert_eq!(margin_loss_grad_features(&far, &clf, 0, M).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn feature_gradient_matches_term_sum_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (k, d) = (5, 7);
        let mut checked = 0;
        while checked < 200 {
            let w: Vec<f64> = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = rng.random_range(0..k);
            let clf = LinearClassifier::from_flat(k, d, w).unwrap();
            let logits = clf.classify(&f).unwrap();
            if !away_from_kinks(&logits, y, 1.0) {
                continue;
            }
            let g = margin_loss_grad_features(&f, &clf, y, M).unwrap();

            // literal delta-gated sum over (w_i - w_y)
            let mut term_sum = vec![0.0; d];
            for i in 0..k {
                if i != y && 1.0 > logits[y] - logits[i] {
                    for j in 0..d {
                        term_sum[j] += clf.row(i)[j] - clf.row(y)[j];
                    }
                }
            }
            for j in 0..d {
                assert!((g[j] - term_sum[j]).abs() <= 1e-12);
            }

            let fd = central_diff(
                |x| naive_margin_loss(&clf.classify(x).unwrap(), y, 1.0),
                &f,
                1e-5,
            );
            assert!(rel_err(&g, &fd) <= 1e-6);
            checked += 1;
        }
    }

    #[test]
    fn dynamic_margin_examples() {
        assert!((dynamic_margin_loss(&EXAMPLE, 0, M).unwrap() - (-1.75)).abs() < 1e-15);
        assert_eq!(
            dynamic_margin_loss_grad_logits(&EXAMPLE, 0, M),
            Ok(vec![-1.5, 0.0, 0.5])
        );
        let easy = [4.0, 1.0, 0.0];
        assert_eq!(dynamic_margin_loss(&easy, 0, M), Ok(-4.0));
        assert_eq!(dynamic_margin_loss_grad_logits(&easy, 0, M), Ok(vec![-1.0, 0.0, 0.0]));
    }

    #[test]
    fn dynamic_surrogate_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut checked = 0;
        while checked < 200 {
            let l: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = rng.random_range(0..6);
            let m = rng.random_range(0.5..2.0);
            if !away_from_kinks(&l, y, m) {
                continue;
            }
            let alpha: Vec<f64> = (0..6).map(|i| 1.0 - (l[y] - l[i]) / m).collect();
            let surrogate = |x: &[f64]| {
                let mut v = -x[y];
                for i in 0..x.len() {
                    let t = m - x[y] + x[i];
                    if i != y && t > 0.0 {
                        v += alpha[i] * t;
                    }
                }
                v
            };
            let fd = central_diff(surrogate, &l, 1e-5);
            let g = dynamic_margin_loss_grad_logits(&l, y, Margin::new(m).unwrap()).unwrap();
            assert!(rel_err(&g, &fd) <= 1e-6);
            checked += 1;
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let (v, g) = cross_entropy(&[0.0, 1.0], 1).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
        let (v, _) = cross_entropy(&[0.25; 4], 2).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-15);
        let (v, _) = cross_entropy(&[1.0, 0.0], 1).unwrap();
        assert!((v - (-CE_CLAMP.ln())).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let l: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y = rng.random_range(0..5);
            let (_, g) = cross_entropy(&softmax(&l), y).unwrap();
            let fd = central_diff(|x| -softmax(x)[y].ln(), &l, 1e-5);
            assert!(rel_err(&g, &fd) <= 1e-6);
        }
    }

    #[test]
    fn binary_hard_positive_weight_gradient() {
        let clf = LinearClassifier::zeros(2, 3).unwrap();
        let xp = [1.0, -2.0, 0.5];
        let batch = [(&xp[..], 0usize)];
        let g = weight_gradient(&batch, &clf, &Objective::single(LossKind::Margin, M)).unwrap();
        assert_eq!(g, vec![-1.0, 2.0, -0.5, 1.0, -2.0, 0.5]);
    }

    #[test]
    fn satisfied_batch_has_zero_weight_gradient() {
        let clf = LinearClassifier::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let a = [3.0, 0.0];
        let b = [0.0, 3.0];
        let batch = [(&a[..], 0usize), (&b[..], 1usize)];
        let g = weight_gradient(&batch, &clf, &Objective::single(LossKind::Margin, M)).unwrap();
        assert_eq!(g, vec![0.0; 4]);
        assert_eq!(
            weight_gradient(&[], &clf, &Objective::single(LossKind::Margin, M)),
            Err(Error::Empty("batch"))
        );
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (k, d, n) = (5, 4, 6);
        for kind in [LossKind::Margin, LossKind::CrossEntropy] {
            let mut checked = 0;
            while checked < 40 {
                let w: Vec<f64> = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let feats: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
                let batch: Vec<(&[f64], usize)> =
                    feats.iter().map(Vec::as_slice).zip(labels.iter().copied()).collect();
                let clf = LinearClassifier::from_flat(k, d, w.clone()).unwrap();
                let kinky = batch.iter().any(|(f, y)| {
                    !away_from_kinks(&clf.classify(f).unwrap(), *y, 1.0)
                });
                if kinky {
                    continue;
                }
                let objective = Objective::single(kind, M);
                let g = weight_gradient(&batch, &clf, &objective).unwrap();
                let fd = central_diff(
                    |x| {
                        let c = LinearClassifier::from_flat(k, d, x.to_vec()).unwrap();
                        objective.batch_loss(&batch, &c).unwrap()
                    },
                    &w,
                    1e-5,
                );
                assert!(rel_err(&g, &fd) <= 1e-6, "{kind:?}");
                checked += 1;
            }
        }
    }

    #[test]
    fn mean_reduction_scales_sum() {
        let clf = LinearClassifier::zeros(3, 2).unwrap();
        let a = [1.0, 2.0];
        let b = [-1.0, 0.5];
        let batch = [(&a[..], 0usize), (&b[..], 2usize)];
        let mut objective = Objective::single(LossKind::Margin, M);
        let sum = weight_gradient(&batch, &clf, &objective).unwrap();
        objective.reduction = Reduction::Mean;
        let mean = weight_gradient(&batch, &clf, &objective).unwrap();
        for (s, m) in sum.iter().zip(&mean) {
            assert_eq!(*m, s / 2.0);
        }
    }

    proptest! {
        #[test]
        fn margin_loss_nonnegative(
            l in proptest::collection::vec(-1e3f64..1e3, 2..10),
            m in 0.01f64..10.0,
            y_seed in 0usize..100,
        ) {
            let y = y_seed % l.len();
            prop_assert!(margin_loss(&l, y, Margin::new(m).unwrap()).unwrap() >= 0.0);
        }

        #[test]
        fn dynamic_value_is_squared_hinge_identity(
            l in proptest::collection::vec(-20.0f64..20.0, 2..10),
            m in 0.05f64..5.0,
            y_seed in 0usize..100,
        ) {
            let y = y_seed % l.len();
            let got = dynamic_margin_loss(&l, y, Margin::new(m).unwrap()).unwrap();
            let mut want = -l[y];
            for i in 0..l.len() {
                let h = (m - l[y] + l[i]).max(0.0);
                if i != y {
                    want += h * h / m;
                }
            }
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }

        #[test]
        fn satisfied_samples_contribute_nothing(
            w in proptest::collection::vec(-1.0f64..1.0, 12),
            f in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let clf = LinearClassifier::from_flat(3, 4, w).unwrap();
            let logits = clf.classify(&f).unwrap();
            let y = crate::classifier::argmax(&logits);
            let lead = (0..3).filter(|&i| i != y).map(|i| logits[y] - logits[i]).fold(f64::INFINITY, f64::min);
            prop_assume!(lead > 0.0);
            let m = Margin::new(lead * 0.999).unwrap();
            let g = weight_gradient(&[(&f[..], y)], &clf, &Objective::single(LossKind::Margin, m)).unwrap();
            prop_assert!(g.iter().all(|v| *v == 0.0));
        }
    }
}
