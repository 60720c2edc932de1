//! Domain datasets, the shifted-Gaussian generator and the oracle annotator.
//!
//! Target-pool labels are private to [`DomainDataset`]. They come out through
//! [`DomainDataset::oracle_annotate`], one sample at a time, and through
//! [`DomainDataset::export_rows`] for serialization; the query path only ever
//! sees [`DomainDataset::unlabeled`], which yields features without labels.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::classifier::FeatureVector;
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
    TargetTest,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
            Domain::TargetTest => "target_test",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Domain::Source, Domain::Target, Domain::TargetTest]
            .into_iter()
            .find(|d| d.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: FeatureVector,
    pub label: usize,
}

impl LabeledSample {
    pub fn new(features: FeatureVector, label: usize) -> Self {
        Self { features, label }
    }

    pub fn as_pair(&self) -> (&[f64], usize) {
        (self.features.as_slice(), self.label)
    }
}

/// A target sample that went through the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTarget {
    pub pool_index: usize,
    pub features: FeatureVector,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum PoolSlot {
    Unlabeled(FeatureVector),
    /// Position in `labeled_target`.
    Labeled(usize),
}

/// One row of the serialized dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExportRow<'a> {
    pub domain: Domain,
    pub label: usize,
    pub features: &'a [f64],
    /// Target-pool index, for `Domain::Target` rows.
    pub pool_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    classes: usize,
    dim: usize,
    source: Vec<LabeledSample>,
    pool: Vec<PoolSlot>,
    hidden_labels: Vec<usize>,
    labeled_target: Vec<LabeledTarget>,
    target_test: Vec<LabeledSample>,
}

impl DomainDataset {
    /// `target` becomes the unlabeled pool; its labels are hidden from here on.
    pub fn new(
        classes: usize,
        dim: usize,
        source: Vec<LabeledSample>,
        target: Vec<LabeledSample>,
        target_test: Vec<LabeledSample>,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::TooFewClasses(classes));
        }
        if dim == 0 {
            return Err(Error::Empty("feature dimension"));
        }
        for s in source.iter().chain(&target).chain(&target_test) {
            if s.features.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.features.dim(),
                });
            }
            if s.label >= classes {
                return Err(Error::InvalidClass {
                    index: s.label,
                    classes,
                });
            }
        }
        let (pool, hidden_labels) = target
            .into_iter()
            .map(|s| (PoolSlot::Unlabeled(s.features), s.label))
            .unzip();
        Ok(Self {
            classes,
            dim,
            source,
            pool,
            hidden_labels,
            labeled_target: Vec::new(),
            target_test,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> &[LabeledSample] {
        &self.source
    }

    pub fn target_test(&self) -> &[LabeledSample] {
        &self.target_test
    }

    pub fn labeled_target(&self) -> &[LabeledTarget] {
        &self.labeled_target
    }

    /// Original target-pool size `|D_t|`.
    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn unlabeled_count(&self) -> usize {
        self.pool.len() - self.labeled_target.len()
    }

    pub fn is_annotated(&self, pool_index: usize) -> bool {
        matches!(self.pool.get(pool_index), Some(PoolSlot::Labeled(_)))
    }

    /// `(pool_index, features)` of every sample still waiting for a label,
    /// in pool order.
    pub fn unlabeled(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.pool.iter().enumerate().filter_map(|(i, slot)| match slot {
            PoolSlot::Unlabeled(f) => Some((i, f.as_slice())),
            PoolSlot::Labeled(_) => None,
        })
    }

    /// `D_s ∪ D̃_t` as `(features, label)` pairs: source first, then labeled
    /// target in annotation order.
    pub fn training_set(&self) -> Vec<(&[f64], usize)> {
        self.source
            .iter()
            .map(LabeledSample::as_pair)
            .chain(
                self.labeled_target
                    .iter()
                    .map(|t| (t.features.as_slice(), t.label)),
            )
            .collect()
    }

    /// Reveals the label of an unlabeled pool sample and moves it into the
    /// labeled target set.
    pub fn oracle_annotate(&mut self, pool_index: usize) -> Result<usize> {
        let len = self.pool.len();
        let slot = self
            .pool
            .get_mut(pool_index)
            .ok_or(Error::PoolIndexOutOfRange {
                index: pool_index,
                len,
            })?;
        if matches!(slot, PoolSlot::Labeled(_)) {
            return Err(Error::AlreadyAnnotated(pool_index));
        }
        let position = self.labeled_target.len();
        let PoolSlot::Unlabeled(features) = core::mem::replace(slot, PoolSlot::Labeled(position))
        else {
            unreachable!()
        };
        let label = self.hidden_labels[pool_index];
        self.labeled_target.push(LabeledTarget {
            pool_index,
            features,
            label,
        });
        Ok(label)
    }

    /// Every row with its true label, for writing the dataset out. Source
    /// rows first, then the whole target pool in pool order, then the test set.
    pub fn export_rows(&self) -> impl Iterator<Item = ExportRow<'_>> + '_ {
        let source = self.source.iter().map(|s| ExportRow {
            domain: Domain::Source,
            label: s.label,
            features: s.features.as_slice(),
            pool_index: None,
        });
        let target = self.pool.iter().enumerate().map(|(i, slot)| {
            let features = match slot {
                PoolSlot::Unlabeled(f) => f.as_slice(),
                PoolSlot::Labeled(pos) => self.labeled_target[*pos].features.as_slice(),
            };
            ExportRow {
                domain: Domain::Target,
                label: self.hidden_labels[i],
                features,
                pool_index: Some(i),
            }
        });
        let test = self.target_test.iter().map(|s| ExportRow {
            domain: Domain::TargetTest,
            label: s.label,
            features: s.features.as_slice(),
            pool_index: None,
        });
        source.chain(target).chain(test)
    }
}

/// Shifted Gaussian clusters. Source class `k` is `N(mu_k, std^2 I)` with
/// `|mu_k| = class_separation`; the target clusters are the source means
/// rotated by `rotation_angle` in a random 2-plane and then translated by
/// `shift_magnitude` along a random unit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub dim: usize,
    pub per_class_source: usize,
    pub per_class_target: usize,
    pub per_class_test: usize,
    pub cluster_std: f64,
    pub class_separation: f64,
    pub shift_magnitude: f64,
    pub rotation_angle: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self::shifted_preset()
    }
}

impl SyntheticConfig {
    /// Bundled preset: 10 classes in 32 dimensions, 1000-sample target pool,
    /// shifted so that a source-only classifier lands at roughly 60-75%
    /// target accuracy.
    pub fn shifted_preset() -> Self {
        Self {
            classes: 10,
            dim: 32,
            per_class_source: 100,
            per_class_target: 100,
            per_class_test: 100,
            cluster_std: 1.2,
            class_separation: 4.0,
            shift_magnitude: 4.0,
            rotation_angle: 2.5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::TooFewClasses(self.classes));
        }
        if self.dim == 0 {
            return Err(Error::Empty("feature dimension"));
        }
        if self.dim == 1 && self.classes > 2 {
            return Err(Error::InvalidParameter {
                name: "classes",
                value: self.classes as f64,
            });
        }
        if self.dim == 1 && self.rotation_angle != 0.0 {
            return Err(Error::InvalidParameter {
                name: "rotation_angle",
                value: self.rotation_angle,
            });
        }
        for (name, count) in [
            ("per_class_source", self.per_class_source),
            ("per_class_target", self.per_class_target),
            ("per_class_test", self.per_class_test),
        ] {
            if count == 0 {
                return Err(Error::InvalidParameter { name, value: 0.0 });
            }
        }
        let positive = [
            ("cluster_std", self.cluster_std),
            ("class_separation", self.class_separation),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter { name, value });
            }
        }
        for (name, value) in [
            ("shift_magnitude", self.shift_magnitude),
            ("rotation_angle", self.rotation_angle),
        ] {
            if !value.is_finite() {
                return Err(Error::InvalidParameter { name, value });
            }
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| normal(rng)).collect()
}

/// `count` orthonormal vectors from Gram-Schmidt on Gaussian draws.
fn orthonormal_frame(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(count);
    while frame.len() < count {
        let mut v = gaussian(rng, dim);
        for q in &frame {
            let c = math::dot(&v, q);
            math::axpy(-c, q, &mut v);
        }
        let n = math::norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            frame.push(v);
        }
    }
    frame
}

fn class_means(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let (k, d, r) = (cfg.classes, cfg.dim, cfg.class_separation);
    if d >= k {
        orthonormal_frame(rng, d, k)
            .into_iter()
            .map(|q| q.into_iter().map(|x| r * x).collect())
            .collect()
    } else if d == 1 {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        alloc::vec![alloc::vec![sign * r], alloc::vec![-sign * r]]
    } else {
        // evenly spaced on a circle in a random plane
        let plane = orthonormal_frame(rng, d, 2);
        let phase = rng.random_range(0.0..core::f64::consts::TAU);
        (0..k)
            .map(|c| {
                let angle = phase + core::f64::consts::TAU * c as f64 / k as f64;
                let (s, co) = (math::sin(angle), math::cos(angle));
                (0..d)
                    .map(|j| r * (co * plane[0][j] + s * plane[1][j]))
                    .collect()
            })
            .collect()
    }
}

/// Rotation by `angle` inside the plane spanned by orthonormal `a`, `b`.
fn rotate_in_plane(x: &[f64], a: &[f64], b: &[f64], angle: f64) -> Vec<f64> {
    let (xa, xb) = (math::dot(x, a), math::dot(x, b));
    let (c, s) = (math::cos(angle), math::sin(angle));
    let mut out = x.to_vec();
    math::axpy((c - 1.0) * xa - s * xb, a, &mut out);
    math::axpy(s * xa + (c - 1.0) * xb, b, &mut out);
    out
}

fn draw_cluster(
    rng: &mut ChaCha8Rng,
    means: &[Vec<f64>],
    per_class: usize,
    std: f64,
) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::with_capacity(means.len() * per_class);
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let f = mean.iter().map(|m| m + std * normal(rng)).collect();
            out.push(LabeledSample::new(FeatureVector::new(f)?, label));
        }
    }
    Ok(out)
}

/// Generates a source/target dataset with a controlled covariate shift.
/// Deterministic in `cfg.seed`; classes are exactly balanced.
pub fn generate_shifted_gaussians(cfg: &SyntheticConfig) -> Result<DomainDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means = class_means(cfg, &mut rng);
    let shift_dir = orthonormal_frame(&mut rng, cfg.dim, 1).remove(0);
    let plane = if cfg.dim >= 2 {
        orthonormal_frame(&mut rng, cfg.dim, 2)
    } else {
        Vec::new()
    };

    let target_means: Vec<Vec<f64>> = means
        .iter()
        .map(|mu| {
            let mut t = if plane.is_empty() {
                mu.clone()
            } else {
                rotate_in_plane(mu, &plane[0], &plane[1], cfg.rotation_angle)
            };
            math::axpy(cfg.shift_magnitude, &shift_dir, &mut t);
            t
        })
        .collect();

    let source = draw_cluster(&mut rng, &means, cfg.per_class_source, cfg.cluster_std)?;
    let target = draw_cluster(&mut rng, &target_means, cfg.per_class_target, cfg.cluster_std)?;
    let test = draw_cluster(&mut rng, &target_means, cfg.per_class_test, cfg.cluster_std)?;
    DomainDataset::new(cfg.classes, cfg.dim, source, target, test)
}
