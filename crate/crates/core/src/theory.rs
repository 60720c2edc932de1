//! Binary linear model used to check how one gradient step on a batch moves
//! the margin query of a probe sample, plus the source margin fraction.
//!
//! With positives `S+`, negatives `S-` and margin `m`, the signed local
//! similarity indicator of a probe `x` is
//!
//! ```text
//! I(x; S) = sum_{x_p in S+} δ(m > w+.x_p - w-.x_p) x_p.x
//!         - sum_{x_n in S-} δ(m > w-.x_n - w+.x_n) x_n.x
//! ```
//!
//! One full-batch step of the binary margin loss with learning rate `η` moves
//! the probe logits to `w+.x + ηI` and `w-.x - ηI`, so the post-step margin
//! query is a function of `I` alone. [`closed_form_post_query`] evaluates it
//! and [`verify_prop1`] checks it against the directly simulated step and
//! checks its monotonicity in `I`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::classifier::{softmax, LinearClassifier};
use crate::error::{Error, Result};
use crate::losses::{weight_gradient, LossKind, Margin, Objective};
use crate::math;
use crate::query::q_margin;

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryLinearModel {
    pub w_plus: Vec<f64>,
    pub w_minus: Vec<f64>,
}

impl BinaryLinearModel {
    pub fn new(w_plus: Vec<f64>, w_minus: Vec<f64>) -> Result<Self> {
        if w_plus.len() != w_minus.len() {
            return Err(Error::DimensionMismatch {
                expected: w_plus.len(),
                found: w_minus.len(),
            });
        }
        if w_plus.is_empty() {
            return Err(Error::Empty("weight vector"));
        }
        if let Some(i) = w_plus.iter().chain(&w_minus).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { w_plus, w_minus })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![0.0; dim])
    }

    /// Restricts a multiclass classifier to the pair `(positive, negative)`.
    pub fn from_classifier(clf: &LinearClassifier, positive: usize, negative: usize) -> Result<Self> {
        for class in [positive, negative] {
            if class >= clf.classes() {
                return Err(Error::InvalidClass {
                    index: class,
                    classes: clf.classes(),
                });
            }
        }
        Self::new(clf.row(positive).to_vec(), clf.row(negative).to_vec())
    }

    pub fn dim(&self) -> usize {
        self.w_plus.len()
    }

    /// Two-class classifier with row 0 = `w+` and row 1 = `w-`.
    pub fn to_classifier(&self) -> LinearClassifier {
        let mut flat = self.w_plus.clone();
        flat.extend_from_slice(&self.w_minus);
        LinearClassifier::from_flat(2, self.dim(), flat).expect("model invariants hold")
    }

    /// `w+.x - w-.x`
    pub fn score_gap(&self, x: &[f64]) -> f64 {
        math::dot(&self.w_plus, x) - math::dot(&self.w_minus, x)
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingBatch {
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_dim(&self, model: &BinaryLinearModel) -> Result<()> {
        self.positives
            .iter()
            .chain(&self.negatives)
            .try_for_each(|x| model.check_dim(x.len()))
    }

    /// Positives whose margin is violated (`δ(m > w+.x_p - w-.x_p)`).
    pub fn hard_positives<'a>(
        &'a self,
        model: &'a BinaryLinearModel,
        m: Margin,
    ) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.positives
            .iter()
            .filter(move |x| m.get() > model.score_gap(x))
            .map(Vec::as_slice)
    }

    /// Negatives whose margin is violated (`δ(m > w-.x_n - w+.x_n)`).
    pub fn hard_negatives<'a>(
        &'a self,
        model: &'a BinaryLinearModel,
        m: Margin,
    ) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.negatives
            .iter()
            .filter(move |x| m.get() > -model.score_gap(x))
            .map(Vec::as_slice)
    }
}

/// Signed local similarity indicator `I(x; S)`.
pub fn similarity_indicator(
    x: &[f64],
    batch: &TrainingBatch,
    model: &BinaryLinearModel,
    m: Margin,
) -> Result<f64> {
    model.check_dim(x.len())?;
    batch.check_dim(model)?;
    let pos: f64 = batch.hard_positives(model, m).map(|p| math::dot(p, x)).sum();
    let neg: f64 = batch.hard_negatives(model, m).map(|n| math::dot(n, x)).sum();
    Ok(pos - neg)
}

/// Summed binary margin loss of the batch.
pub fn batch_margin_loss(batch: &TrainingBatch, model: &BinaryLinearModel, m: Margin) -> Result<f64> {
    batch.check_dim(model)?;
    let pos: f64 = batch
        .positives
        .iter()
        .map(|x| (m.get() - model.score_gap(x)).max(0.0))
        .sum();
    let neg: f64 = batch
        .negatives
        .iter()
        .map(|x| (m.get() + model.score_gap(x)).max(0.0))
        .sum();
    Ok(pos + neg)
}

/// `(grad_{w+} L, grad_{w-} L)` of the summed binary margin loss.
pub fn binary_margin_gradient(
    batch: &TrainingBatch,
    model: &BinaryLinearModel,
    m: Margin,
) -> Result<(Vec<f64>, Vec<f64>)> {
    batch.check_dim(model)?;
    let mut grad_plus = vec![0.0; model.dim()];
    let mut grad_minus = vec![0.0; model.dim()];
    for x_p in batch.hard_positives(model, m) {
        math::axpy(-1.0, x_p, &mut grad_plus);
        math::axpy(1.0, x_p, &mut grad_minus);
    }
    for x_n in batch.hard_negatives(model, m) {
        math::axpy(1.0, x_n, &mut grad_plus);
        math::axpy(-1.0, x_n, &mut grad_minus);
    }
    Ok((grad_plus, grad_minus))
}

/// One full-batch gradient-descent step of the summed binary margin loss.
pub fn one_step_update(
    model: &BinaryLinearModel,
    batch: &TrainingBatch,
    eta: f64,
    m: Margin,
) -> Result<BinaryLinearModel> {
    check_eta(eta)?;
    let (grad_plus, grad_minus) = binary_margin_gradient(batch, model, m)?;
    let mut next = model.clone();
    math::axpy(-eta, &grad_plus, &mut next.w_plus);
    math::axpy(-eta, &grad_minus, &mut next.w_minus);
    Ok(next)
}

fn check_eta(eta: f64) -> Result<()> {
    if eta.is_finite() && eta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "eta",
            value: eta,
        })
    }
}

/// Post-step logit gap `z = (w+.x + ηI) - (w-.x - ηI)`.
fn post_step_gap(indicator: f64, x: &[f64], model: &BinaryLinearModel, eta: f64) -> f64 {
    model.score_gap(x) + 2.0 * eta * indicator
}

/// Margin query of `x` after one step, as a function of the indicator:
/// `2 e^{w-.x} e^{-ηI} / (e^{w+.x} e^{ηI} + e^{w-.x} e^{-ηI})` when the step
/// leaves `p+ > p-`, and the mirrored expression otherwise.
///
/// Both branches equal `2 / (1 + e^{|z|})` with `z` the post-step logit gap,
/// which is how it is evaluated.
pub fn closed_form_post_query(
    indicator: f64,
    x: &[f64],
    model: &BinaryLinearModel,
    eta: f64,
) -> Result<f64> {
    model.check_dim(x.len())?;
    let z = post_step_gap(indicator, x, model, eta);
    Ok(2.0 / (1.0 + math::exp(z.abs())))
}

/// `dQ/dI`: `η[(1 - Q)^2 - 1]` on the `p+ > p-` branch, its negation on the
/// other. Evaluated as `∓η Q (2 - Q)` so the sign survives `Q` near zero.
pub fn closed_form_derivative(
    indicator: f64,
    x: &[f64],
    model: &BinaryLinearModel,
    eta: f64,
) -> Result<f64> {
    let q = closed_form_post_query(indicator, x, model, eta)?;
    let magnitude = eta * q * (2.0 - q);
    if post_step_gap(indicator, x, model, eta) > 0.0 {
        Ok(-magnitude)
    } else {
        Ok(magnitude)
    }
}

/// Margin query of `x` under the model, computed through the softmax path.
pub fn direct_query(x: &[f64], model: &BinaryLinearModel) -> Result<f64> {
    let logits = model.to_classifier().classify(x)?;
    Ok(q_margin(&softmax(&logits)))
}

/// Fraction of samples with `|w+.x - w-.x| >= m`.
pub fn margin_divergence_fraction<'a, I>(samples: I, model: &BinaryLinearModel, m: Margin) -> Result<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut total = 0usize;
    let mut outside = 0usize;
    for x in samples {
        model.check_dim(x.len())?;
        total += 1;
        if model.score_gap(x).abs() >= m.get() {
            outside += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("source set"));
    }
    Ok(outside as f64 / total as f64)
}

/// Full-batch gradient descent on the binary margin loss until the loss is
/// zero or `max_steps` is reached. Returns the number of steps taken.
pub fn train_binary_margin(
    model: &mut BinaryLinearModel,
    batch: &TrainingBatch,
    eta: f64,
    m: Margin,
    max_steps: usize,
) -> Result<usize> {
    check_eta(eta)?;
    for step in 0..max_steps {
        if batch_margin_loss(batch, model, m)? == 0.0 {
            return Ok(step);
        }
        *model = one_step_update(model, batch, eta, m)?;
    }
    Ok(max_steps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prop1Config {
    pub trials: usize,
    pub dim: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub margin: Margin,
    pub seed: u64,
    pub sweep_points: usize,
}

impl Default for Prop1Config {
    fn default() -> Self {
        Self {
            trials: 200,
            dim: 8,
            batch_size: 16,
            eta: 0.01,
            margin: Margin::default(),
            seed: 0,
            sweep_points: 12,
        }
    }
}

/// Outcome of [`verify_prop1`]. Violations are counted, never dropped.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prop1Report {
    pub trials: usize,
    pub sweep_points: usize,
    /// Largest `|closed form - simulated post-step query|` seen.
    pub max_closed_form_error: f64,
    pub monotonicity_violations: usize,
    pub derivative_sign_violations: usize,
}

impl Prop1Report {
    pub const EQUIVALENCE_TOLERANCE: f64 = 1e-9;
    pub const ORDER_SLACK: f64 = 1e-12;

    pub fn passed(&self) -> bool {
        self.max_closed_form_error <= Self::EQUIVALENCE_TOLERANCE
            && self.monotonicity_violations == 0
            && self.derivative_sign_violations == 0
    }

    /// Associative merge of two partial reports.
    pub fn merge(&self, other: &Self) -> Self {
        Self {
            trials: self.trials + other.trials,
            sweep_points: self.sweep_points + other.sweep_points,
            max_closed_form_error: self.max_closed_form_error.max(other.max_closed_form_error),
            monotonicity_violations: self.monotonicity_violations + other.monotonicity_violations,
            derivative_sign_violations: self.derivative_sign_violations
                + other.derivative_sign_violations,
        }
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Randomized check of the post-step query identity and its monotonicity.
///
/// Each trial draws a model, a batch and a probe `x_t`, then
///
/// 1. compares the closed form at `I(x_t; S)` with the margin query of the
///    actually updated model;
/// 2. sweeps `I` over `sweep_points` values by adding one synthetic positive
///    `s u` with `u ⊥ (w+ - w-)`. Its gate is active for every scale `s`, and
///    the gates of the original batch are untouched, so only `I` moves. The
///    sweep stays on one side of `p+ = p-` and the simulated query must be
///    strictly monotone with the direction set by that side;
/// 3. checks the sign of the analytic derivative at every sweep point.
pub fn verify_prop1(config: &Prop1Config) -> Result<Prop1Report> {
    check_eta(config.eta)?;
    if config.trials == 0 {
        return Err(Error::Empty("trials"));
    }
    if config.dim < 2 {
        // a direction orthogonal to w+ - w- needs two dimensions
        return Err(Error::InvalidParameter {
            name: "dim",
            value: config.dim as f64,
        });
    }
    if config.sweep_points < 2 {
        return Err(Error::InvalidParameter {
            name: "sweep_points",
            value: config.sweep_points as f64,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = Prop1Report::default();
    for _ in 0..config.trials {
        let trial = run_trial(config, &mut rng)?;
        report = report.merge(&trial);
    }
    Ok(report)
}

fn run_trial(config: &Prop1Config, rng: &mut ChaCha8Rng) -> Result<Prop1Report> {
    let (d, eta, m) = (config.dim, config.eta, config.margin);
    let weight_scale = 1.0 / math::sqrt(d as f64);
    let model = BinaryLinearModel::new(
        gaussian_vec(rng, d, weight_scale),
        gaussian_vec(rng, d, weight_scale),
    )?;
    let mut batch = TrainingBatch::default();
    for i in 0..config.batch_size {
        let x = gaussian_vec(rng, d, 1.0);
        if i % 2 == 0 {
            batch.positives.push(x);
        } else {
            batch.negatives.push(x);
        }
    }

    // probe with a usable component orthogonal to w+ - w-
    let diff: Vec<f64> = model
        .w_plus
        .iter()
        .zip(&model.w_minus)
        .map(|(a, b)| a - b)
        .collect();
    let diff_sq = math::dot(&diff, &diff);
    let (probe, ortho) = loop {
        let x = gaussian_vec(rng, d, 1.0);
        let mut u = x.clone();
        if diff_sq > 0.0 {
            math::axpy(-math::dot(&x, &diff) / diff_sq, &diff, &mut u);
        }
        if math::dot(&u, &u) > 1e-6 {
            break (x, u);
        }
    };

    let mut report = Prop1Report {
        trials: 1,
        ..Prop1Report::default()
    };
    let mut check_point = |batch: &TrainingBatch| -> Result<(f64, f64, f64)> {
        let indicator = similarity_indicator(&probe, batch, &model, m)?;
        let updated = one_step_update(&model, batch, eta, m)?;
        let direct = direct_query(&probe, &updated)?;
        let closed = closed_form_post_query(indicator, &probe, &model, eta)?;
        let err = (direct - closed).abs();
        if err > report.max_closed_form_error || err.is_nan() {
            report.max_closed_form_error = if err.is_nan() { f64::INFINITY } else { err };
        }
        let derivative = closed_form_derivative(indicator, &probe, &model, eta)?;
        Ok((indicator, direct, derivative))
    };

    let (base_indicator, _, _) = check_point(&batch)?;
    let base_gap = post_step_gap(base_indicator, &probe, &model, eta);
    let side = if base_gap >= 0.0 { 1.0 } else { -1.0 };
    let spread = base_gap.abs().max(0.5);
    let along = math::dot(&ortho, &probe);

    let mut points = Vec::with_capacity(config.sweep_points);
    for j in 0..config.sweep_points {
        let target_gap = side * 0.2 * (j as f64 + 1.0) * spread;
        let delta_indicator = (target_gap - base_gap) / (2.0 * eta);
        let scale = delta_indicator / along;
        let mut swept = batch.clone();
        swept.positives.push(ortho.iter().map(|v| scale * v).collect());
        points.push(check_point(&swept)?);
    }
    report.sweep_points = points.len();

    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    for pair in points.windows(2) {
        let (prev, next) = (pair[0].1, pair[1].1);
        let ordered = if side > 0.0 {
            next < prev + Prop1Report::ORDER_SLACK
        } else {
            next > prev - Prop1Report::ORDER_SLACK
        };
        if !ordered {
            report.monotonicity_violations += 1;
        }
    }
    for (_, _, derivative) in &points {
        let signed_ok = if side > 0.0 { *derivative < 0.0 } else { *derivative > 0.0 };
        if !signed_ok {
            report.derivative_sign_violations += 1;
        }
    }
    Ok(report)
}

/// Outcome of [`check_selectivity`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SelectivityReport {
    pub satisfied_batches: usize,
    /// Satisfied batches whose update changed any weight.
    pub nonzero_updates: usize,
    pub mixed_batches: usize,
    /// Mixed batches where the general weight gradient and the δ-gated binary
    /// sums differ in any bit.
    pub formula_mismatches: usize,
}

impl SelectivityReport {
    pub fn passed(&self) -> bool {
        self.satisfied_batches > 0
            && self.mixed_batches > 0
            && self.nonzero_updates == 0
            && self.formula_mismatches == 0
    }
}

fn gap_clear_of_kinks(model: &BinaryLinearModel, x: &[f64], m: f64) -> bool {
    let gap = model.score_gap(x);
    (m - gap).abs() > 1e-9 && (m + gap).abs() > 1e-9
}

/// Checks that only margin-violating samples move the weights.
///
/// Each trial builds a batch where every sample clears the margin and
/// requires both update paths (the binary step and the general weight
/// gradient) to leave the model bit-for-bit unchanged; then a random mixed
/// batch whose general gradient must equal the δ-gated binary sums bit for
/// bit. Class 0 is the positive class.
pub fn check_selectivity(trials: usize, seed: u64) -> Result<SelectivityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let mut report = SelectivityReport::default();
    for _ in 0..trials {
        let d = 2 + (rng.next_u32() % 8) as usize;
        let m = Margin::new(0.5 + 1.5 * unit(&mut rng))?;
        let model = BinaryLinearModel::new(
            gaussian_vec(&mut rng, d, 1.0 / math::sqrt(d as f64)),
            gaussian_vec(&mut rng, d, 1.0 / math::sqrt(d as f64)),
        )?;
        let diff: Vec<f64> = model.w_plus.iter().zip(&model.w_minus).map(|(a, b)| a - b).collect();
        let diff_sq = math::dot(&diff, &diff);
        if diff_sq < 1e-6 {
            continue;
        }
        let objective = Objective::single(LossKind::Margin, m);
        let clf = model.to_classifier();

        // every sample at least 0.1 past the margin on its own side
        let mut satisfied = TrainingBatch::default();
        for i in 0..2 + (rng.next_u32() % 10) as usize {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            let mut x = gaussian_vec(&mut rng, d, 1.0);
            let want = m.get() + 0.1 + unit(&mut rng);
            let have = side * model.score_gap(&x);
            if have < want {
                math::axpy(side * (want - have) / diff_sq, &diff, &mut x);
            }
            if side > 0.0 {
                satisfied.positives.push(x);
            } else {
                satisfied.negatives.push(x);
            }
        }
        report.satisfied_batches += 1;
        let stepped = one_step_update(&model, &satisfied, 0.01, m)?;
        let mut general = clf.clone();
        general.descend(&weight_gradient(&labeled(&satisfied), &clf, &objective)?, 0.01)?;
        if !bits_equal(&stepped.to_classifier(), &clf) || !bits_equal(&general, &clf) {
            report.nonzero_updates += 1;
        }

        let mut mixed = TrainingBatch::default();
        while mixed.len() < 2 + (rng.next_u32() % 14) as usize {
            let x = gaussian_vec(&mut rng, d, 1.5);
            if !gap_clear_of_kinks(&model, &x, m.get()) {
                continue;
            }
            if rng.next_u32() % 2 == 0 {
                mixed.positives.push(x);
            } else {
                mixed.negatives.push(x);
            }
        }
        report.mixed_batches += 1;
        let (plus, minus) = binary_margin_gradient(&mixed, &model, m)?;
        let grad = weight_gradient(&labeled(&mixed), &clf, &objective)?;
        let same = grad[..d].iter().chain(&grad[d..]).zip(plus.iter().chain(&minus)).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            report.formula_mismatches += 1;
        }
    }
    Ok(report)
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Positives labeled 0, then negatives labeled 1.
fn labeled(batch: &TrainingBatch) -> Vec<(&[f64], usize)> {
    batch
        .positives
        .iter()
        .map(|x| (x.as_slice(), 0))
        .chain(batch.negatives.iter().map(|x| (x.as_slice(), 1)))
        .collect()
}

fn bits_equal(a: &LinearClassifier, b: &LinearClassifier) -> bool {
    a.weights().iter().zip(b.weights()).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Outcome of [`check_divergence_monotonicity`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MonotonicityReport {
    pub configurations: usize,
    pub margins_per_configuration: usize,
    pub violations: usize,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.configurations > 0 && self.violations == 0
    }
}

/// Evaluates [`margin_divergence_fraction`] on an increasing grid of margins
/// for random models and sample sets and counts every increase.
pub fn check_divergence_monotonicity(configurations: usize, seed: u64) -> Result<MonotonicityReport> {
    const MARGINS: usize = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    let mut report = MonotonicityReport {
        configurations,
        margins_per_configuration: MARGINS,
        violations: 0,
    };
    for _ in 0..configurations {
        let d = 1 + (rng.next_u32() % 10) as usize;
        let model = BinaryLinearModel::new(gaussian_vec(&mut rng, d, 1.0), gaussian_vec(&mut rng, d, 1.0))?;
        let spread = 0.2 + 3.0 * unit(&mut rng);
        let samples: Vec<Vec<f64>> = (0..20 + rng.next_u32() % 180)
            .map(|_| gaussian_vec(&mut rng, d, spread))
            .collect();
        let mut margins: Vec<f64> = (0..MARGINS).map(|_| 1e-3 + 4.0 * unit(&mut rng)).collect();
        margins.sort_by(f64::total_cmp);
        let mut previous = f64::INFINITY;
        for m in margins {
            let f = margin_divergence_fraction(samples.iter().map(Vec::as_slice), &model, Margin::new(m)?)?;
            if f > previous {
                report.violations += 1;
            }
            previous = f;
        }
    }
    Ok(report)
}
