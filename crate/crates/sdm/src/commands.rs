//! The subcommands, callable without going through the argument parser.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context as _};
use rayon::prelude::*;
use serde::Serialize;

use sdm_core::data::generate_shifted_gaussians;
use sdm_core::gradcheck::{self, GradCheckConfig, IdentityReport, SuiteReport};
use sdm_core::learner::{active_learning_loop, ActiveLearner, Clock, NoClock};
use sdm_core::theory::{
    check_divergence_monotonicity, check_selectivity, verify_prop1, MonotonicityReport,
    Prop1Config, Prop1Report, SelectivityReport,
};
use sdm_core::{DomainDataset, Margin, RoundMetrics, Strategy};

use crate::bench::{bench_markdown, bench_point, fit_scaling, BenchRow, ScalingFit};
use crate::config::{parse_strategy, DatasetSpec, LossName, RunConfig};
use crate::features::{features_to_bytes, load_feature_csv};
use crate::reports::{csv_bytes, json_bytes, rounds_csv, write_atomic, RunManifest};

/// Options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    /// When false every wall time is written as 0, which makes all outputs
    /// byte-reproducible.
    pub timing: bool,
}

impl Context {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            seed: None,
            config: None,
            out: out.into(),
            timing: true,
        }
    }

    pub fn run_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> anyhow::Result<&Path> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating output directory {}", self.out.display()))?;
        Ok(&self.out)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.out_dir()?.join(name);
        write_atomic(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

struct WallClock(Instant);

impl Clock for WallClock {
    fn seconds(&mut self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

fn run_loop(
    cfg: &sdm_core::ExperimentConfig,
    dataset: &mut DomainDataset,
    timing: bool,
) -> anyhow::Result<Vec<RoundMetrics>> {
    let metrics = if timing {
        active_learning_loop(cfg, dataset, &mut WallClock(Instant::now()))?
    } else {
        active_learning_loop(cfg, dataset, &mut NoClock)?
    };
    Ok(metrics)
}

/// Dataset named by the config, or the CSV at `override_path`. Relative CSV
/// paths in a config file resolve against the working directory.
pub fn build_dataset(cfg: &RunConfig, override_path: Option<&Path>) -> anyhow::Result<DomainDataset> {
    if let Some(path) = override_path {
        return load_feature_csv(path).with_context(|| format!("loading {}", path.display()));
    }
    match &cfg.dataset {
        DatasetSpec::Synthetic(spec) => Ok(generate_shifted_gaussians(&spec.to_config(cfg.seed))?),
        DatasetSpec::Csv { path } => {
            load_feature_csv(path).with_context(|| format!("loading {}", path.display()))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub metrics: Vec<RoundMetrics>,
    pub rounds_csv: PathBuf,
    pub manifest: PathBuf,
}

pub fn simulate(ctx: &Context, dataset_path: Option<&Path>) -> anyhow::Result<SimulateOutput> {
    let mut cfg = ctx.run_config()?;
    if let Some(path) = dataset_path {
        cfg.dataset = DatasetSpec::Csv { path: path.to_path_buf() };
    }
    let cfg = cfg.pinned();
    let experiment = cfg.experiment()?;
    let original = build_dataset(&cfg, None)?;
    let mut dataset = original.clone();
    let metrics = run_loop(&experiment, &mut dataset, ctx.timing)?;
    let rounds = ctx.write("rounds.csv", &rounds_csv(&metrics)?)?;
    let manifest = RunManifest::new(cfg, &original, &metrics);
    let manifest_path = ctx.write("manifest.json", &json_bytes(&manifest)?)?;
    Ok(SimulateOutput {
        metrics,
        rounds_csv: rounds,
        manifest: manifest_path,
    })
}

/// A compared method: a query strategy, optionally with its own training
/// loss. Written `strategy` or `strategy:loss`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arm {
    pub strategy: Strategy,
    pub loss: Option<LossName>,
}

impl Arm {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let (name, loss) = match text.split_once(':') {
            Some((s, l)) => (s, Some(l)),
            None => (text, None),
        };
        let strategy = parse_strategy(name.trim())?;
        let loss = match loss {
            None => None,
            Some(l) => match LossName::from_name(l.trim()) {
                Some(l) => Some(l),
                None => bail!("unknown loss `{l}` (valid: margin, dynamic_margin)"),
            },
        };
        Ok(Self { strategy, loss })
    }

    pub fn label(&self) -> String {
        match self.loss {
            Some(l) => format!("{}:{}", self.strategy.name(), l.name()),
            None => self.strategy.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub strategy: String,
    pub loss: String,
    pub budget_fraction: f64,
    pub seed: u64,
    pub source_only_accuracy: f64,
    pub final_accuracy: f64,
    pub labeled_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub loss: String,
    pub budget_fraction: f64,
    pub seeds: usize,
    pub mean_final_accuracy: f64,
    pub std_final_accuracy: f64,
    pub mean_source_only_accuracy: f64,
}

/// Mean and standard error of `b - a` over matching seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedRow {
    pub baseline: String,
    pub baseline_budget: f64,
    pub candidate: String,
    pub candidate_budget: f64,
    pub seeds: usize,
    pub mean_difference: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOutput {
    pub runs: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
    pub paired: Vec<PairedRow>,
}

impl CompareOutput {
    pub fn summary_for(&self, label: &str, budget: f64) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|s| s.strategy == label && s.budget_fraction == budget)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Runs every `(arm, budget, seed)` cell. Seed `i` uses run seed
/// `base + i` and, for synthetic data, dataset seed `dataset_base + i`, so all
/// arms of one seed see the same dataset. The step fraction is capped at each
/// budget.
pub fn compare(
    ctx: &Context,
    arms: &[Arm],
    seeds: usize,
    budgets: Option<&[f64]>,
) -> anyhow::Result<CompareOutput> {
    if arms.is_empty() {
        bail!("at least one strategy is required");
    }
    if seeds == 0 {
        bail!("at least one seed is required");
    }
    let base = ctx.run_config()?;
    base.experiment()?;
    let budgets: Vec<f64> = budgets.map_or_else(|| vec![base.budget_fraction], <[f64]>::to_vec);
    let mut cells = Vec::new();
    for arm in arms {
        for &budget in &budgets {
            for i in 0..seeds as u64 {
                cells.push((*arm, budget, i));
            }
        }
    }
    let runs: Vec<RunRow> = cells
        .par_iter()
        .map(|&(arm, budget, i)| -> anyhow::Result<RunRow> {
            let mut cfg = base.clone();
            cfg.seed = base.seed.wrapping_add(i);
            if let DatasetSpec::Synthetic(spec) = &mut cfg.dataset {
                spec.seed = Some(spec.seed.unwrap_or(base.seed).wrapping_add(i));
            }
            cfg.strategy = arm.strategy.name().to_string();
            if let Some(loss) = arm.loss {
                cfg.loss = loss;
            }
            cfg.budget_fraction = budget;
            if budget > 0.0 {
                cfg.step_fraction = cfg.step_fraction.min(budget);
            }
            let experiment = cfg.experiment()?;
            let mut dataset = build_dataset(&cfg, None)?;
            let metrics = run_loop(&experiment, &mut dataset, false)?;
            let last = metrics.last().expect("loop emits round 0");
            Ok(RunRow {
                strategy: arm.label(),
                loss: cfg.loss.name().to_string(),
                budget_fraction: budget,
                seed: cfg.seed,
                source_only_accuracy: metrics[0].target_test_accuracy,
                final_accuracy: last.target_test_accuracy,
                labeled_count: last.labeled_target_count,
            })
        })
        .collect::<anyhow::Result<_>>()?;

    let group = |a: usize, b: usize| -> &[RunRow] {
        let start = (a * budgets.len() + b) * seeds;
        &runs[start..start + seeds]
    };
    let mut summary = Vec::new();
    for (a, arm) in arms.iter().enumerate() {
        for (b, &budget) in budgets.iter().enumerate() {
            let rows = group(a, b);
            let finals: Vec<f64> = rows.iter().map(|r| r.final_accuracy).collect();
            let sources: Vec<f64> = rows.iter().map(|r| r.source_only_accuracy).collect();
            let (mean, std) = mean_std(&finals);
            summary.push(SummaryRow {
                strategy: arm.label(),
                loss: rows[0].loss.clone(),
                budget_fraction: budget,
                seeds,
                mean_final_accuracy: mean,
                std_final_accuracy: std,
                mean_source_only_accuracy: mean_std(&sources).0,
            });
        }
    }

    let paired_row = |a0: usize, b0: usize, a1: usize, b1: usize| {
        let diffs: Vec<f64> = group(a0, b0)
            .iter()
            .zip(group(a1, b1))
            .map(|(x, y)| y.final_accuracy - x.final_accuracy)
            .collect();
        let (mean, std) = mean_std(&diffs);
        PairedRow {
            baseline: arms[a0].label(),
            baseline_budget: budgets[b0],
            candidate: arms[a1].label(),
            candidate_budget: budgets[b1],
            seeds,
            mean_difference: mean,
            std_error: std / (seeds as f64).sqrt(),
        }
    };
    let mut paired = Vec::new();
    for b in 0..budgets.len() {
        for a in 1..arms.len() {
            paired.push(paired_row(a - 1, b, a, b));
        }
    }
    for a in 0..arms.len() {
        for b in 1..budgets.len() {
            paired.push(paired_row(a, b - 1, a, b));
        }
    }

    let out = CompareOutput { runs, summary, paired };
    ctx.write("runs.csv", &csv_bytes(&out.runs)?)?;
    ctx.write("compare.csv", &csv_bytes(&out.summary)?)?;
    ctx.write("paired.csv", &csv_bytes(&out.paired)?)?;
    ctx.write("compare.md", compare_markdown(&out).as_bytes())?;
    Ok(out)
}

pub fn compare_markdown(out: &CompareOutput) -> String {
    let mut s = String::from(
        "| strategy | loss | budget | seeds | final accuracy | source-only |\n|---|---|---|---|---|---|\n",
    );
    for r in &out.summary {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {:.4} ± {:.4} | {:.4} |\n",
            r.strategy,
            r.loss,
            r.budget_fraction,
            r.seeds,
            r.mean_final_accuracy,
            r.std_final_accuracy,
            r.mean_source_only_accuracy
        ));
    }
    if !out.paired.is_empty() {
        s.push_str("\nPaired differences (candidate - baseline, same seeds):\n\n| baseline | candidate | mean difference | std. error |\n|---|---|---|---|\n");
        for p in &out.paired {
            s.push_str(&format!(
                "| {} @ {} | {} @ {} | {:+.4} | {:.4} |\n",
                p.baseline,
                p.baseline_budget,
                p.candidate,
                p.candidate_budget,
                p.mean_difference,
                p.std_error
            ));
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Record {
    pub trials: usize,
    pub sweep_points: usize,
    pub max_closed_form_error: f64,
    pub monotonicity_violations: usize,
    pub derivative_sign_violations: usize,
    pub passed: bool,
}

impl From<Prop1Report> for Prop1Record {
    fn from(r: Prop1Report) -> Self {
        Self {
            trials: r.trials,
            sweep_points: r.sweep_points,
            max_closed_form_error: r.max_closed_form_error,
            monotonicity_violations: r.monotonicity_violations,
            derivative_sign_violations: r.derivative_sign_violations,
            passed: r.passed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientRecord {
    pub name: &'static str,
    pub instances: usize,
    pub skipped: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl From<&SuiteReport> for GradientRecord {
    fn from(r: &SuiteReport) -> Self {
        Self {
            name: r.name,
            instances: r.instances,
            skipped: r.skipped,
            max_relative_error: r.max_relative_error,
            tolerance: r.tolerance,
            passed: r.passed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityRecord {
    pub instances: usize,
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectivityRecord {
    pub satisfied_batches: usize,
    pub nonzero_updates: usize,
    pub mixed_batches: usize,
    pub formula_mismatches: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityRecord {
    pub configurations: usize,
    pub margins_per_configuration: usize,
    pub violations: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub eta: f64,
    pub prop1: Prop1Record,
    pub gradients: Vec<GradientRecord>,
    pub dynamic_identity: IdentityRecord,
    pub selectivity: SelectivityRecord,
    pub divergence_monotonicity: MonotonicityRecord,
    pub passed: bool,
}

pub const IDENTITY_INSTANCES: usize = 10_000;
pub const SELECTIVITY_TRIALS: usize = 200;
pub const MONOTONICITY_CONFIGURATIONS: usize = 100;

/// Runs every property suite and writes `verify.json`. The returned report
/// says whether all of them passed; an invalid `eta` is an error.
pub fn verify(ctx: &Context, trials: usize, eta: f64) -> anyhow::Result<VerifyReport> {
    if trials == 0 {
        bail!("--trials must be at least 1");
    }
    if !(eta.is_finite() && eta > 0.0) {
        bail!("--eta (learning rate) must be positive, got {eta}");
    }
    let seed = ctx.seed.unwrap_or(0);
    let prop1 = verify_prop1(&Prop1Config {
        trials,
        eta,
        seed,
        margin: Margin::DEFAULT,
        ..Prop1Config::default()
    })?;
    let gradients = gradcheck::run_all(&GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    })?;
    let identity: IdentityReport = gradcheck::check_dynamic_identity(IDENTITY_INSTANCES, seed)?;
    let selectivity: SelectivityReport = check_selectivity(SELECTIVITY_TRIALS, seed)?;
    let monotonicity: MonotonicityReport =
        check_divergence_monotonicity(MONOTONICITY_CONFIGURATIONS, seed)?;

    let passed = prop1.passed()
        && !gradients.is_empty()
        && gradients.iter().all(SuiteReport::passed)
        && identity.passed()
        && selectivity.passed()
        && monotonicity.passed();
    let report = VerifyReport {
        seed,
        eta,
        prop1: prop1.into(),
        gradients: gradients.iter().map(GradientRecord::from).collect(),
        dynamic_identity: IdentityRecord {
            instances: identity.instances,
            max_abs_error: identity.max_abs_error,
            tolerance: identity.tolerance,
            passed: identity.passed(),
        },
        selectivity: SelectivityRecord {
            satisfied_batches: selectivity.satisfied_batches,
            nonzero_updates: selectivity.nonzero_updates,
            mixed_batches: selectivity.mixed_batches,
            formula_mismatches: selectivity.formula_mismatches,
            passed: selectivity.passed(),
        },
        divergence_monotonicity: MonotonicityRecord {
            configurations: monotonicity.configurations,
            margins_per_configuration: monotonicity.margins_per_configuration,
            violations: monotonicity.violations,
            passed: monotonicity.passed(),
        },
        passed,
    };
    ctx.write("verify.json", &json_bytes(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutput {
    pub rows: Vec<BenchRow>,
    pub fit: ScalingFit,
}

pub fn bench(
    ctx: &Context,
    ns: &[usize],
    k: usize,
    d: usize,
    strategy: Strategy,
    repeats: usize,
) -> anyhow::Result<BenchOutput> {
    if ns.is_empty() {
        bail!("the N list is empty");
    }
    if ns.contains(&0) || k < 2 || d == 0 {
        bail!("need N >= 1, K >= 2 and D >= 1");
    }
    let seed = ctx.seed.unwrap_or(0);
    let rows = ns
        .iter()
        .map(|&n| bench_point(n, k, d, strategy, seed, repeats, ctx.timing))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let fit = fit_scaling(&rows);
    ctx.write("bench.csv", &csv_bytes(&rows)?)?;
    ctx.write("bench_fit.json", &json_bytes(&fit)?)?;
    ctx.write("bench.md", bench_markdown(&rows, &fit).as_bytes())?;
    Ok(BenchOutput { rows, fit })
}

/// Writes the dataset with a `selected_round` column after running `rounds`
/// sampling rounds (0 means none, every row gets -1). Returns the column,
/// indexed by target-pool position.
pub fn dump_features(
    ctx: &Context,
    dataset_path: Option<&Path>,
    output: &Path,
    rounds: usize,
) -> anyhow::Result<Vec<i64>> {
    let cfg = ctx.run_config()?.pinned();
    let experiment = cfg.experiment()?;
    let original = build_dataset(&cfg, dataset_path)?;
    let mut selected = vec![-1i64; original.pool_len()];
    if rounds > 0 {
        let mut dataset = original.clone();
        let mut learner = ActiveLearner::new(&experiment, &mut dataset)?;
        for r in 1..=rounds {
            let Some(m) = learner.step(&mut NoClock)? else {
                break;
            };
            for i in m.selected {
                selected[i] = r as i64;
            }
        }
    }
    let bytes = features_to_bytes(&original, Some(&selected))?;
    write_atomic(output, &bytes).with_context(|| format!("writing {}", output.display()))?;
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arm_parsing() {
        assert_eq!(Arm::parse("margin").unwrap(), Arm { strategy: Strategy::Margin, loss: None });
        let ag = Arm::parse("sdm_g:dynamic_margin").unwrap();
        assert_eq!(ag.label(), "sdm_g:dynamic_margin");
        let err = Arm::parse("badge").unwrap_err().to_string();
        assert!(err.contains("random") && err.contains("sdm_g"), "{err}");
        assert!(Arm::parse("margin:hinge").is_err());
    }

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
