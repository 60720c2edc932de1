//! Central finite-difference checks of every analytic gradient.
//!
//! Each suite draws random instances, skips the ones that sit within
//! [`GradCheckConfig::kink_distance`] of a hinge or top-2 switch (the functions
//! are not differentiable there), and records the worst relative error
//! `|g - fd| / max(|g|, |fd|)` over the accepted instances.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{softmax, LinearClassifier};
use crate::error::Result;
use crate::losses::{
    cross_entropy, dynamic_margin_loss, dynamic_margin_loss_grad_logits, margin_loss,
    margin_loss_grad_features, margin_loss_grad_logits, weight_gradient, LossKind, Margin,
    Objective,
};
use crate::math;
use crate::query::{grad_f_query, q_margin};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    pub kink_distance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            instances: 200,
            step: 1e-5,
            tolerance: 1e-6,
            kink_distance: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub instances: usize,
    /// Draws rejected for being too close to a kink.
    pub skipped: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.instances > 0 && self.max_relative_error <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub instances: usize,
    pub max_abs_error: f64,
    pub tolerance: f64,
}

impl IdentityReport {
    pub const TOLERANCE: f64 = 1e-12;

    pub fn passed(&self) -> bool {
        self.instances > 0 && self.max_abs_error <= self.tolerance
    }
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let up = f(&probe);
        probe[j] = x[j] - h;
        let down = f(&probe);
        probe[j] = x[j];
        out.push((up - down) / (2.0 * h));
    }
    out
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = math::norm(analytic).max(math::norm(numeric));
    if scale < 1e-12 {
        math::norm(&diff)
    } else {
        math::norm(&diff) / scale
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-half_width..half_width)).collect()
}

fn hinges_clear(logits: &[f64], y: usize, m: f64, gap: f64) -> bool {
    (0..logits.len()).all(|i| i == y || (m - logits[y] + logits[i]).abs() > gap)
}

struct Suite {
    cfg: GradCheckConfig,
    rng: ChaCha8Rng,
    report: SuiteReport,
}

impl Suite {
    fn new(name: &'static str, cfg: &GradCheckConfig, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        Self {
            cfg: *cfg,
            rng,
            report: SuiteReport {
                name,
                instances: 0,
                skipped: 0,
                max_relative_error: 0.0,
                tolerance: cfg.tolerance,
            },
        }
    }

    /// Calls `draw` until `instances` draws were accepted. `draw` returns
    /// `None` to reject a draw, else the analytic and numeric gradients.
    fn run(
        mut self,
        mut draw: impl FnMut(&mut ChaCha8Rng, &GradCheckConfig) -> Result<Option<(Vec<f64>, Vec<f64>)>>,
    ) -> Result<SuiteReport> {
        while self.report.instances < self.cfg.instances {
            match draw(&mut self.rng, &self.cfg)? {
                Some((analytic, numeric)) => {
                    let e = relative_error(&analytic, &numeric);
                    self.report.max_relative_error = self.report.max_relative_error.max(e);
                    self.report.instances += 1;
                }
                None => self.report.skipped += 1,
            }
        }
        Ok(self.report)
    }
}

fn margin_of(rng: &mut ChaCha8Rng) -> Margin {
    Margin::new(rng.random_range(0.5..2.0)).expect("positive margin")
}

pub fn check_margin_logits(cfg: &GradCheckConfig) -> Result<SuiteReport> {
    Suite::new("margin_loss_logits", cfg, 1).run(|rng, c| {
        let k = rng.random_range(2..8);
        let l = uniform(rng, k, 2.0);
        let y = rng.random_range(0..k);
        let m = margin_of(rng);
        if !hinges_clear(&l, y, m.get(), c.kink_distance) {
            return Ok(None);
        }
        let g = margin_loss_grad_logits(&l, y, m)?;
        let fd = central_difference(|x| margin_loss(x, y, m).unwrap_or(f64::NAN), &l, c.step);
        Ok(Some((g, fd)))
    })
}

pub fn check_margin_features(cfg: &GradCheckConfig) -> Result<SuiteReport> {
    Suite::new("margin_loss_features", cfg, 2).run(|rng, c| {
        let (k, d) = (rng.random_range(2..7), rng.random_range(1..9));
        let clf = LinearClassifier::from_flat(k, d, uniform(rng, k * d, 1.0))?;
        let f = uniform(rng, d, 2.0);
        let y = rng.random_range(0..k);
        let m = margin_of(rng);
        if !hinges_clear(&clf.classify(&f)?, y, m.get(), c.kink_distance) {
            return Ok(None);
        }
        let g = margin_loss_grad_features(&f, &clf, y, m)?;
        let fd = central_difference(
            |x| {
                clf.classify(x)
                    .and_then(|l| margin_loss(&l, y, m))
                    .unwrap_or(f64::NAN)
            },
            &f,
            c.step,
        );
        Ok(Some((g, fd)))
    })
}

fn weight_suite(
    name: &'static str,
    kind: LossKind,
    cfg: &GradCheckConfig,
    stream: u64,
) -> Result<SuiteReport> {
    Suite::new(name, cfg, stream).run(move |rng, c| {
        let (k, d, n) = (rng.random_range(2..6), rng.random_range(1..6), rng.random_range(1..7));
        let w = uniform(rng, k * d, 1.0);
        let clf = LinearClassifier::from_flat(k, d, w.clone())?;
        let feats: Vec<Vec<f64>> = (0..n).map(|_| uniform(rng, d, 1.5)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let batch: Vec<(&[f64], usize)> = feats
            .iter()
            .map(Vec::as_slice)
            .zip(labels.iter().copied())
            .collect();
        let m = Margin::DEFAULT;
        for (f, y) in &batch {
            if !hinges_clear(&clf.classify(f)?, *y, m.get(), c.kink_distance) {
                return Ok(None);
            }
        }
        let objective = Objective::single(kind, m);
        let g = weight_gradient(&batch, &clf, &objective)?;
        let fd = central_difference(
            |x| {
                LinearClassifier::from_flat(k, d, x.to_vec())
                    .and_then(|cl| objective.batch_loss(&batch, &cl))
                    .unwrap_or(f64::NAN)
            },
            &w,
            c.step,
        );
        Ok(Some((g, fd)))
    })
}

pub fn check_margin_weights(cfg: &GradCheckConfig) -> Result<SuiteReport> {
    weight_suite("margin_loss_weights", LossKind::Margin, cfg, 3)
}

pub fn check_cross_entropy_weights(cfg: &GradCheckConfig) -> Result<SuiteReport> {
    weight_suite("cross_entropy_weights", LossKind::CrossEntropy, cfg, 4)
}

/// The dynamic margin gradient against the surrogate in which every
/// `alpha_i` is frozen at its value at the evaluation point.
pub fn check_dynamic_surrogate(cfg: &GradCheckConfig) -> Result<SuiteReport> {
    Suite::new("dynamic_margin_surrogate", cfg, 5).run(|rng, c| {
        let k = rng.random_range(2..8);
        let l = uniform(rng, k, 2.0);
        let y = rng.random_range(0..k);
        let m = margin_of(rng);
        if !hinges_clear(&l, y, m.get(), c.kink_distance) {
            return Ok(None);
        }
        let alpha: Vec<f64> = l.iter().map(|li| 1.0 - (l[y] - li) / m.get()).collect();
        let surrogate = |x: &[f64]| {
            let mut v = -x[y];
            for i in 0..x.len() {
                let t = m.get() - x[y] + x[i];
                if i != y && t > 0.0 {
                    v += alpha[i] * t;
                }
            }
            v
        };
        let g = dynamic_margin_loss_grad_logits(&l, y, m)?;
        Ok(Some((g, central_difference(surrogate, &l, c.step))))
    })
}

/// Cross-entropy logit gradient `p - onehot(y)` against differences of
/// `-log softmax(l)_y`.
pub fn check_cross_entropy(cfg: &GradCheckConfig) -> Result<SuiteReport> {
    Suite::new("cross_entropy_logits", cfg, 6).run(|rng, c| {
        let k = rng.random_range(2..8);
        let l = uniform(rng, k, 3.0);
        let y = rng.random_range(0..k);
        let (_, g) = cross_entropy(&softmax(&l), y)?;
        let fd = central_difference(
            |x| cross_entropy(&softmax(x), y).map(|v| v.0).unwrap_or(f64::NAN),
            &l,
            c.step,
        );
        Ok(Some((g, fd)))
    })
}

/// Feature gradient of the margin sampling score, away from ties among the
/// top three logits.
pub fn check_query_features(cfg: &GradCheckConfig) -> Result<SuiteReport> {
    Suite::new("margin_query_features", cfg, 7).run(|rng, c| {
        let (k, d) = (rng.random_range(2..7), rng.random_range(1..9));
        let clf = LinearClassifier::from_flat(k, d, uniform(rng, k * d, 1.0))?;
        let f = uniform(rng, d, 2.0);
        let logits = clf.classify(&f)?;
        let mut sorted = logits.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let tied = sorted.windows(2).take(2).any(|w| w[0] - w[1] < c.kink_distance);
        if tied {
            return Ok(None);
        }
        let g = grad_f_query(&f, &clf, &softmax(&logits))?;
        let fd = central_difference(
            |x| {
                clf.classify(x)
                    .map(|l| q_margin(&softmax(&l)))
                    .unwrap_or(f64::NAN)
            },
            &f,
            c.step,
        );
        Ok(Some((g, fd)))
    })
}

/// Every gradient suite, in a fixed order.
pub fn run_all(cfg: &GradCheckConfig) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        check_margin_logits(cfg)?,
        check_margin_features(cfg)?,
        check_margin_weights(cfg)?,
        check_dynamic_surrogate(cfg)?,
        check_cross_entropy(cfg)?,
        check_cross_entropy_weights(cfg)?,
        check_query_features(cfg)?,
    ])
}

/// Checks `dynamic_margin_loss = sum_{i != y} hinge_i^2 / m - logits[y]`
/// on random instances.
pub fn check_dynamic_identity(instances: usize, seed: u64) -> Result<IdentityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(8);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let k = rng.random_range(2..10);
        let l = uniform(&mut rng, k, 3.0);
        let y = rng.random_range(0..k);
        let m = margin_of(&mut rng);
        let mut want = -l[y];
        for (i, li) in l.iter().enumerate() {
            let h = (m.get() - l[y] + li).max(0.0);
            if i != y {
                want += h * h / m.get();
            }
        }
        worst = worst.max((dynamic_margin_loss(&l, y, m)? - want).abs());
    }
    Ok(IdentityReport {
        instances,
        max_abs_error: worst,
        tolerance: IdentityReport::TOLERANCE,
    })
}
