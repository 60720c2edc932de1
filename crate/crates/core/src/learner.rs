//! Minibatch SGD on the linear head and the budgeted active learning loop.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::classifier::{argmax, LinearClassifier};
use crate::counters::OpCounters;
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::losses::{weight_gradient, Margin, MarginVariant, Objective, Reduction};
use crate::query::{score_pool, select_top_b_counted, QueryConfig, Strategy};
use crate::theory::{margin_divergence_fraction, BinaryLinearModel};

const TRAIN_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum WeightInit {
    #[default]
    Zeros,
    /// i.i.d. `N(0, std^2)` entries drawn from the run seed.
    Gaussian { std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub loss: MarginVariant,
    /// Weight of the auxiliary cross-entropy, applied to every labeled sample.
    pub ce_weight: f64,
    pub margin: Margin,
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub initial_epochs: usize,
    pub epochs_between_samplings: usize,
    pub budget_fraction: f64,
    pub step_fraction: f64,
    pub strategy: Strategy,
    pub reduction: Reduction,
    pub init: WeightInit,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            loss: MarginVariant::Margin,
            ce_weight: 1.0,
            margin: Margin::DEFAULT,
            lambda: 0.01,
            lr: 0.01,
            batch_size: 72,
            initial_epochs: 10,
            epochs_between_samplings: 2,
            budget_fraction: 0.05,
            step_fraction: 0.01,
            strategy: Strategy::Margin,
            reduction: Reduction::Sum,
            init: WeightInit::Zeros,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// A budget of 0 disables sampling, in which case `step_fraction` only has
    /// to lie in `(0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let invalid = |name, value| Err(Error::InvalidParameter { name, value });
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return invalid("lr", self.lr);
        }
        if !(self.ce_weight.is_finite() && self.ce_weight >= 0.0) {
            return invalid("ce_weight", self.ce_weight);
        }
        if self.batch_size == 0 {
            return invalid("batch_size", 0.0);
        }
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return invalid("budget_fraction", self.budget_fraction);
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return invalid("step_fraction", self.step_fraction);
        }
        if self.budget_fraction > 0.0 && self.step_fraction > self.budget_fraction {
            return invalid("step_fraction", self.step_fraction);
        }
        if let WeightInit::Gaussian { std } = self.init {
            if !(std.is_finite() && std >= 0.0) {
                return invalid("init_std", std);
            }
        }
        self.query_config().validate()
    }

    pub fn objective(&self) -> Objective {
        Objective {
            margin_term: Some(self.loss),
            ce_weight: self.ce_weight,
            margin: self.margin,
            reduction: self.reduction,
        }
    }

    pub fn query_config(&self) -> QueryConfig {
        QueryConfig {
            strategy: self.strategy,
            lambda: self.lambda,
            margin: self.margin,
            seed: self.seed,
        }
    }

    pub fn initial_classifier(&self, classes: usize, dim: usize) -> Result<LinearClassifier> {
        let mut clf = LinearClassifier::zeros(classes, dim)?;
        if let WeightInit::Gaussian { std } = self.init {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(INIT_STREAM);
            for w in clf.weights_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = std * z;
            }
        }
        Ok(clf)
    }

    /// The shuffling RNG of a run.
    pub fn training_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(TRAIN_STREAM);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    /// 0 is the source-only model, before any sampling.
    pub round_index: usize,
    pub labeled_target_count: usize,
    pub target_test_accuracy: f64,
    /// For two-class runs, the fraction of source samples whose score gap is
    /// at least the margin.
    pub source_margin_fraction: Option<f64>,
    /// Seconds spent in scoring and selection, as reported by the clock.
    pub query_wall_time: f64,
    pub op_counters: OpCounters,
    /// Pool indices annotated in this round, best-ranked first.
    pub selected: Vec<usize>,
}

/// Monotonic time source for the query timings. The core crate has no clock
/// of its own.
pub trait Clock {
    fn seconds(&mut self) -> f64;
}

/// Reports every timing as 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&mut self) -> f64 {
        0.0
    }
}

/// `round(n * fraction)` with halves rounded up, and at least 1 whenever the
/// fraction is positive.
pub fn round_half_up(n: usize, fraction: f64) -> usize {
    if fraction <= 0.0 || n == 0 {
        return 0;
    }
    let scaled = n as f64 * fraction;
    let rounded = crate::math::floor(scaled + 0.5) as usize;
    rounded.clamp(1, n)
}

/// `epochs` passes of minibatch SGD over `set`, reshuffled each epoch from
/// `rng`. The last minibatch of an epoch may be short.
pub fn train_epochs(
    clf: &mut LinearClassifier,
    set: &[(&[f64], usize)],
    cfg: &ExperimentConfig,
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if epochs == 0 {
        return Ok(());
    }
    if set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let objective = cfg.objective();
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| set[i]));
            let grad = weight_gradient(&batch, clf, &objective)?;
            clf.descend(&grad, cfg.lr)?;
        }
    }
    Ok(())
}

/// Top-1 accuracy; ties in the logits go to the lowest class index.
pub fn evaluate_accuracy<'a, I>(clf: &LinearClassifier, set: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [f64], usize)>,
{
    let mut total = 0usize;
    let mut correct = 0usize;
    for (f, y) in set {
        total += 1;
        if argmax(&clf.classify(f)?) == y {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    Ok(correct as f64 / total as f64)
}

/// The loop driven one round at a time.
///
/// [`ActiveLearner::new`] trains the source-only model; each
/// [`ActiveLearner::step`] scores the pool, annotates one round's selection and
/// fine-tunes.
pub struct ActiveLearner<'d> {
    cfg: ExperimentConfig,
    dataset: &'d mut DomainDataset,
    clf: LinearClassifier,
    rng: ChaCha8Rng,
    budget: usize,
    step: usize,
    rounds: usize,
}

impl<'d> ActiveLearner<'d> {
    pub fn new(cfg: &ExperimentConfig, dataset: &'d mut DomainDataset) -> Result<Self> {
        cfg.validate()?;
        if dataset.target_test().is_empty() {
            return Err(Error::Empty("target test set"));
        }
        let budget = round_half_up(dataset.pool_len(), cfg.budget_fraction);
        if cfg.budget_fraction > 0.0 && budget == 0 {
            return Err(Error::Empty("target pool"));
        }
        let step = round_half_up(dataset.pool_len(), cfg.step_fraction);
        let mut clf = cfg.initial_classifier(dataset.classes(), dataset.dim())?;
        let mut rng = cfg.training_rng();
        train_epochs(
            &mut clf,
            &dataset.training_set(),
            cfg,
            cfg.initial_epochs,
            &mut rng,
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            dataset,
            clf,
            rng,
            budget,
            step,
            rounds: 0,
        })
    }

    pub fn classifier(&self) -> &LinearClassifier {
        &self.clf
    }

    pub fn dataset(&self) -> &DomainDataset {
        self.dataset
    }

    /// Total number of samples the run will annotate.
    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn per_round(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.dataset.labeled_target().len() >= self.budget
    }

    /// Metrics of the current model.
    pub fn metrics(&self, query_wall_time: f64, op_counters: OpCounters, selected: Vec<usize>) -> Result<RoundMetrics> {
        let accuracy = evaluate_accuracy(
            &self.clf,
            self.dataset.target_test().iter().map(|s| s.as_pair()),
        )?;
        let source_margin_fraction = if self.clf.classes() == 2 && !self.dataset.source().is_empty() {
            let model = BinaryLinearModel::from_classifier(&self.clf, 1, 0)?;
            Some(margin_divergence_fraction(
                self.dataset.source().iter().map(|s| s.features.as_slice()),
                &model,
                self.cfg.margin,
            )?)
        } else {
            None
        };
        Ok(RoundMetrics {
            round_index: self.rounds,
            labeled_target_count: self.dataset.labeled_target().len(),
            target_test_accuracy: accuracy,
            source_margin_fraction,
            query_wall_time,
            op_counters,
            selected,
        })
    }

    /// One sampling round, or `None` once the budget is spent.
    pub fn step(&mut self, clock: &mut impl Clock) -> Result<Option<RoundMetrics>> {
        if self.is_done() {
            return Ok(None);
        }
        let b = self
            .step
            .min(self.budget - self.dataset.labeled_target().len())
            .min(self.dataset.unlabeled_count());
        let start = clock.seconds();
        let (scores, mut counters) =
            score_pool(self.dataset.unlabeled(), &self.clf, &self.cfg.query_config())?;
        let selected = select_top_b_counted(&scores, b, &mut counters)?;
        let elapsed = clock.seconds() - start;
        for &i in &selected {
            self.dataset.oracle_annotate(i)?;
        }
        train_epochs(
            &mut self.clf,
            &self.dataset.training_set(),
            &self.cfg,
            self.cfg.epochs_between_samplings,
            &mut self.rng,
        )?;
        self.rounds += 1;
        self.metrics(elapsed, counters, selected).map(Some)
    }
}

/// Runs the whole loop: source-only training, then sampling rounds until the
/// budget is spent. The first entry is round 0, the source-only model.
pub fn active_learning_loop(
    cfg: &ExperimentConfig,
    dataset: &mut DomainDataset,
    clock: &mut impl Clock,
) -> Result<Vec<RoundMetrics>> {
    let mut learner = ActiveLearner::new(cfg, dataset)?;
    let mut out = Vec::new();
    out.push(learner.metrics(0.0, OpCounters::default(), Vec::new())?);
    while let Some(m) = learner.step(clock)? {
        out.push(m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{softmax, FeatureVector};
    use crate::data::{generate_shifted_gaussians, LabeledSample, SyntheticConfig};
    use crate::query::q_margin;
    use rand::Rng;
    use std::collections::BTreeSet;
    use std::vec;

    fn small_data(seed: u64) -> DomainDataset {
        generate_shifted_gaussians(&SyntheticConfig {
            classes: 4,
            dim: 6,
            per_class_source: 30,
            per_class_target: 50,
            per_class_test: 25,
            seed,
            ..SyntheticConfig::shifted_preset()
        })
        .unwrap()
    }

    fn cfg() -> ExperimentConfig {
        ExperimentConfig {
            batch_size: 16,
            initial_epochs: 5,
            budget_fraction: 0.2,
            step_fraction: 0.05,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn rounding_is_half_up_with_floor_one() {
        assert_eq!(round_half_up(1000, 0.05), 50);
        assert_eq!(round_half_up(10, 0.25), 3);
        assert_eq!(round_half_up(10, 0.24), 2);
        assert_eq!(round_half_up(10, 0.01), 1);
        assert_eq!(round_half_up(10, 0.0), 0);
        assert_eq!(round_half_up(0, 0.5), 0);
        assert_eq!(round_half_up(7, 1.0), 7);
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = [
            ExperimentConfig { lr: 0.0, ..cfg() },
            ExperimentConfig { lr: -0.01, ..cfg() },
            ExperimentConfig { batch_size: 0, ..cfg() },
            ExperimentConfig { budget_fraction: 1.5, ..cfg() },
            ExperimentConfig { step_fraction: 0.0, ..cfg() },
            ExperimentConfig { step_fraction: 0.3, ..cfg() },
            ExperimentConfig { lambda: -1.0, ..cfg() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(ExperimentConfig { budget_fraction: 0.0, ..cfg() }.validate().is_ok());
    }

    #[test]
    fn zero_epochs_leave_weights_alone() {
        let ds = small_data(1);
        let mut clf = LinearClassifier::from_flat(4, 6, vec![0.5; 24]).unwrap();
        let before = clf.clone();
        train_epochs(&mut clf, &ds.training_set(), &cfg(), 0, &mut cfg().training_rng()).unwrap();
        assert_eq!(clf, before);
    }

    #[test]
    fn separable_source_converges() {
        let ds = generate_shifted_gaussians(&SyntheticConfig {
            classes: 3,
            dim: 5,
            per_class_source: 60,
            per_class_target: 1,
            per_class_test: 1,
            cluster_std: 0.3,
            class_separation: 4.0,
            seed: 2,
            ..SyntheticConfig::shifted_preset()
        })
        .unwrap();
        let c = ExperimentConfig { ce_weight: 0.0, ..cfg() };
        let mut clf = c.initial_classifier(3, 5).unwrap();
        let set = ds.training_set();
        train_epochs(&mut clf, &set, &c, 200, &mut c.training_rng()).unwrap();
        assert!(evaluate_accuracy(&clf, set.iter().copied()).unwrap() >= 0.99);
        let grad = weight_gradient(&set, &clf, &c.objective()).unwrap();
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = small_data(3);
        let run = || {
            let mut clf = cfg().initial_classifier(4, 6).unwrap();
            train_epochs(&mut clf, &ds.training_set(), &cfg(), 3, &mut cfg().training_rng()).unwrap();
            clf
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn accuracy_oracles() {
        let set: Vec<(Vec<f64>, usize)> = (0..40).map(|i| (vec![i as f64 - 20.0, 1.0], i % 4)).collect();
        let view: Vec<(&[f64], usize)> = set.iter().map(|(f, y)| (f.as_slice(), *y)).collect();
        let zero = LinearClassifier::zeros(4, 2).unwrap();
        assert_eq!(evaluate_accuracy(&zero, view.iter().copied()).unwrap(), 0.25);
        assert!(evaluate_accuracy(&zero, core::iter::empty()).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let w = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let clf = LinearClassifier::from_flat(4, 2, w).unwrap();
            let mut hits = 0;
            for (f, y) in &view {
                let l = clf.classify(f).unwrap();
                let mut best = 0;
                for k in 1..4 {
                    if l[k] > l[best] {
                        best = k;
                    }
                }
                hits += usize::from(best == *y);
            }
            assert_eq!(evaluate_accuracy(&clf, view.iter().copied()).unwrap(), hits as f64 / 40.0);
        }
        let perfect = LinearClassifier::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let easy = [(&[2.0, 0.0][..], 0), (&[-2.0, 0.0][..], 1)];
        assert_eq!(evaluate_accuracy(&perfect, easy).unwrap(), 1.0);
    }

    #[test]
    fn zero_budget_is_source_only() {
        let mut ds = small_data(4);
        let c = ExperimentConfig { budget_fraction: 0.0, ..cfg() };
        let rounds = active_learning_loop(&c, &mut ds, &mut NoClock).unwrap();
        assert_eq!(rounds.len(), 1);
        assert_eq!(rounds[0].labeled_target_count, 0);

        let fresh = small_data(4);
        let mut clf = c.initial_classifier(4, 6).unwrap();
        train_epochs(&mut clf, &fresh.training_set(), &c, c.initial_epochs, &mut c.training_rng()).unwrap();
        let base = evaluate_accuracy(&clf, fresh.target_test().iter().map(|s| s.as_pair())).unwrap();
        assert_eq!(rounds[0].target_test_accuracy, base);
    }

    #[test]
    fn loop_respects_budget_and_never_repeats() {
        let mut ds = small_data(5);
        let pool = ds.pool_len();
        let rounds = active_learning_loop(&cfg(), &mut ds, &mut NoClock).unwrap();
        let budget = round_half_up(pool, 0.2);
        let step = round_half_up(pool, 0.05);
        assert_eq!(rounds.len(), 1 + budget.div_ceil(step));
        let mut seen = BTreeSet::new();
        for (r, m) in rounds.iter().enumerate() {
            assert_eq!(m.round_index, r);
            assert!((0.0..=1.0).contains(&m.target_test_accuracy));
            if r > 0 {
                assert_eq!(m.selected.len(), step);
                assert!(m.labeled_target_count >= rounds[r - 1].labeled_target_count);
            }
            for &i in &m.selected {
                assert!(seen.insert(i));
            }
        }
        assert_eq!(seen.len(), budget);
        assert_eq!(ds.labeled_target().len(), budget);
    }

    #[test]
    fn last_round_is_clipped() {
        let mut ds = small_data(6);
        // 200 pool samples: budget 15, steps of 4
        let c = ExperimentConfig { budget_fraction: 0.075, step_fraction: 0.02, ..cfg() };
        let rounds = active_learning_loop(&c, &mut ds, &mut NoClock).unwrap();
        let sizes: Vec<usize> = rounds[1..].iter().map(|m| m.selected.len()).collect();
        assert_eq!(sizes, vec![4, 4, 4, 3]);
    }

    #[test]
    fn full_budget_single_step_matches_supervised_training() {
        let c = ExperimentConfig { budget_fraction: 1.0, step_fraction: 1.0, ..cfg() };
        let mut ds = small_data(7);
        let rounds = active_learning_loop(&c, &mut ds, &mut NoClock).unwrap();
        assert_eq!(rounds.len(), 2);
        assert_eq!(rounds[1].labeled_target_count, ds.pool_len());

        // same schedule replayed by hand on the union of everything
        let fresh = small_data(7);
        let rows: Vec<(Vec<f64>, usize)> = fresh.export_rows().map(|r| (r.features.to_vec(), r.label)).collect();
        let mut clf = c.initial_classifier(4, 6).unwrap();
        let mut rng = c.training_rng();
        let source: Vec<(&[f64], usize)> = fresh.source().iter().map(|s| s.as_pair()).collect();
        train_epochs(&mut clf, &source, &c, c.initial_epochs, &mut rng).unwrap();
        let n_src = fresh.source().len();
        let order = &rounds[1].selected;
        let mut union = source.clone();
        union.extend(order.iter().map(|&i| (rows[n_src + i].0.as_slice(), rows[n_src + i].1)));
        train_epochs(&mut clf, &union, &c, c.epochs_between_samplings, &mut rng).unwrap();
        let acc = evaluate_accuracy(&clf, fresh.target_test().iter().map(|s| s.as_pair())).unwrap();
        assert_eq!(acc, rounds[1].target_test_accuracy);
    }

    #[test]
    fn trajectories_are_reproducible() {
        let run = || {
            let mut ds = small_data(8);
            let c = ExperimentConfig { strategy: Strategy::SdmG, ..cfg() };
            let metrics = active_learning_loop(&c, &mut ds, &mut NoClock).unwrap();
            (metrics, ds)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn selections_dominate_unselected_scores() {
        let mut ds = small_data(9);
        let c = cfg();
        let mut learner = ActiveLearner::new(&c, &mut ds).unwrap();
        while !learner.is_done() {
            let clf = learner.classifier().clone();
            let before: Vec<(usize, f64)> = learner
                .dataset()
                .unlabeled()
                .map(|(i, f)| (i, q_margin(&softmax(&clf.classify(f).unwrap()))))
                .collect();
            let m = learner.step(&mut NoClock).unwrap().unwrap();
            let chosen: BTreeSet<usize> = m.selected.iter().copied().collect();
            let worst_chosen = before.iter().filter(|(i, _)| chosen.contains(i)).map(|p| p.1).fold(f64::INFINITY, f64::min);
            let best_other = before.iter().filter(|(i, _)| !chosen.contains(i)).map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            assert!(worst_chosen >= best_other);
        }
    }

    #[test]
    fn binary_runs_report_margin_fraction() {
        let mut ds = generate_shifted_gaussians(&SyntheticConfig {
            classes: 2,
            dim: 3,
            per_class_source: 20,
            per_class_target: 20,
            per_class_test: 10,
            ..SyntheticConfig::shifted_preset()
        })
        .unwrap();
        let rounds = active_learning_loop(&cfg(), &mut ds, &mut NoClock).unwrap();
        assert!(rounds.iter().all(|m| matches!(m.source_margin_fraction, Some(f) if (0.0..=1.0).contains(&f))));
        let mut multi = small_data(1);
        let rounds = active_learning_loop(&cfg(), &mut multi, &mut NoClock).unwrap();
        assert!(rounds.iter().all(|m| m.source_margin_fraction.is_none()));
    }

    /// Plain pool-based margin sampling written without the library loop.
    fn minimal_margin_al(
        source: &[(Vec<f64>, usize)],
        pool: &[(Vec<f64>, usize)],
        test: &[(Vec<f64>, usize)],
        c: &ExperimentConfig,
    ) -> Vec<(Vec<usize>, f64)> {
        let mut clf = LinearClassifier::zeros(2, 2).unwrap();
        let mut rng = c.training_rng();
        let mut labeled: Vec<(&[f64], usize)> = source.iter().map(|(f, y)| (f.as_slice(), *y)).collect();
        train_epochs(&mut clf, &labeled, c, c.initial_epochs, &mut rng).unwrap();
        let budget = (pool.len() as f64 * c.budget_fraction + 0.5).floor() as usize;
        let step = (pool.len() as f64 * c.step_fraction + 0.5).floor() as usize;
        let mut taken = vec![false; pool.len()];
        let mut out = Vec::new();
        let mut count = 0;
        while count < budget {
            let mut cand: Vec<(f64, usize)> = (0..pool.len())
                .filter(|&i| !taken[i])
                .map(|i| {
                    let l = clf.classify(&pool[i].0).unwrap();
                    let (a, b) = (l[0].max(l[1]), l[0].min(l[1]));
                    let p_hi = 1.0 / (1.0 + (b - a).exp());
                    let p_lo = 1.0 - p_hi;
                    (1.0 - (p_hi - p_lo), i)
                })
                .collect();
            cand.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
            let take: Vec<usize> = cand.iter().take(step.min(budget - count)).map(|c| c.1).collect();
            for &i in &take {
                taken[i] = true;
                labeled.push((pool[i].0.as_slice(), pool[i].1));
            }
            count += take.len();
            train_epochs(&mut clf, &labeled, c, c.epochs_between_samplings, &mut rng).unwrap();
            let acc = test.iter().filter(|(f, y)| {
                let l = clf.classify(f).unwrap();
                usize::from(l[1] > l[0]) == *y
            }).count() as f64 / test.len() as f64;
            out.push((take, acc));
        }
        out
    }

    #[test]
    fn zero_shift_loop_matches_minimal_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut draw = |n: usize| -> Vec<(Vec<f64>, usize)> {
            (0..n)
                .map(|i| {
                    let y = i % 2;
                    let c = if y == 0 { -1.0 } else { 1.0 };
                    (vec![c + rng.random_range(-1.5..1.5), 0.5 * c + rng.random_range(-1.5..1.5)], y)
                })
                .collect()
        };
        let (source, pool, test) = (draw(60), draw(100), draw(50));
        let wrap = |rows: &[(Vec<f64>, usize)]| -> Vec<LabeledSample> {
            rows.iter().map(|(f, y)| LabeledSample::new(FeatureVector::new(f.clone()).unwrap(), *y)).collect()
        };
        let mut ds = DomainDataset::new(2, 2, wrap(&source), wrap(&pool), wrap(&test)).unwrap();
        let c = ExperimentConfig { budget_fraction: 0.3, step_fraction: 0.08, batch_size: 8, ..cfg() };
        let rounds = active_learning_loop(&c, &mut ds, &mut NoClock).unwrap();
        let reference = minimal_margin_al(&source, &pool, &test, &c);
        assert_eq!(rounds.len() - 1, reference.len());
        for (m, (sel, acc)) in rounds[1..].iter().zip(&reference) {
            assert_eq!(&m.selected, sel);
            assert_eq!(m.target_test_accuracy, *acc);
        }
    }

    #[test]
    fn margin_sampling_beats_random_on_average() {
        let mut margin = 0.0;
        let mut random = 0.0;
        for seed in 0..20 {
            let data_cfg = SyntheticConfig {
                classes: 4,
                dim: 8,
                per_class_source: 40,
                per_class_target: 100,
                per_class_test: 50,
                seed: 100 + seed,
                ..SyntheticConfig::shifted_preset()
            };
            for (strategy, acc) in [(Strategy::Margin, &mut margin), (Strategy::Random, &mut random)] {
                let mut ds = generate_shifted_gaussians(&data_cfg).unwrap();
                let c = ExperimentConfig { strategy, seed, batch_size: 16, budget_fraction: 0.1, step_fraction: 0.02, ..ExperimentConfig::default() };
                let rounds = active_learning_loop(&c, &mut ds, &mut NoClock).unwrap();
                *acc += rounds.last().unwrap().target_test_accuracy / 20.0;
            }
        }
        assert!(margin >= random, "margin {margin} random {random}");
    }
}
