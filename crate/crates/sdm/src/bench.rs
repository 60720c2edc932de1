//! Query-cost benchmark: scoring plus top-B selection over a grid of pool
//! sizes, and a least-squares fit of wall time against `N K D` and
//! `N log2 N`.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use sdm_core::learner::round_half_up;
use sdm_core::query::{score_pool, select_top_b_counted};
use sdm_core::{LinearClassifier, OpCounters, QueryConfig, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub strategy: String,
    /// Fastest of the repeats; 0 when timing is off.
    pub wall_time_s: f64,
    pub dot_products: u64,
    pub weight_mul_adds: u64,
    pub vector_mul_adds: u64,
    pub comparisons: u64,
    pub mul_adds: u64,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Random pool and classifier of the given shape, scored and ranked
/// `repeats` times. Counters are identical across repeats.
pub fn bench_point(
    n: usize,
    k: usize,
    d: usize,
    strategy: Strategy,
    seed: u64,
    repeats: usize,
    timing: bool,
) -> anyhow::Result<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clf = LinearClassifier::from_flat(k, d, gaussian(&mut rng, k * d, 1.0 / (d as f64).sqrt()))?;
    let pool = gaussian(&mut rng, n * d, 1.0);
    let cfg = QueryConfig {
        strategy,
        seed,
        ..QueryConfig::default()
    };
    let b = round_half_up(n, 0.01);
    let mut best = f64::INFINITY;
    let mut counters = OpCounters::default();
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let (scores, mut c) = score_pool(pool.chunks_exact(d).enumerate(), &clf, &cfg)?;
        let picked = select_top_b_counted(&scores, b, &mut c)?;
        let elapsed = start.elapsed().as_secs_f64();
        std::hint::black_box(picked);
        best = best.min(elapsed);
        counters = c;
    }
    Ok(BenchRow {
        n,
        k,
        d,
        strategy: strategy.name().to_string(),
        wall_time_s: if timing { best } else { 0.0 },
        dot_products: counters.dot_products,
        weight_mul_adds: counters.weight_mul_adds,
        vector_mul_adds: counters.vector_mul_adds,
        comparisons: counters.comparisons,
        mul_adds: counters.mul_adds(),
    })
}

/// `t ≈ a N K D + b N log2 N`, without intercept. `r_squared` is the usual
/// centred coefficient of determination; it is absent when the times have no
/// spread (timing off) or the system is singular.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub coefficient_nkd: f64,
    pub coefficient_nlogn: f64,
    pub r_squared: Option<f64>,
    pub points: usize,
}

pub fn fit_scaling(rows: &[BenchRow]) -> ScalingFit {
    let xs: Vec<[f64; 2]> = rows
        .iter()
        .map(|r| {
            let n = r.n as f64;
            [n * r.k as f64 * r.d as f64, n * n.max(1.0).log2()]
        })
        .collect();
    let ts: Vec<f64> = rows.iter().map(|r| r.wall_time_s).collect();
    let (a, b) = least_squares_2(&xs, &ts).unwrap_or((f64::NAN, f64::NAN));

    let mean = ts.iter().sum::<f64>() / ts.len().max(1) as f64;
    let ss_tot: f64 = ts.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ts)
        .map(|(x, t)| (t - a * x[0] - b * x[1]).powi(2))
        .sum();
    let r_squared = (ss_tot > 0.0 && a.is_finite()).then(|| 1.0 - ss_res / ss_tot);
    ScalingFit {
        coefficient_nkd: if a.is_finite() { a } else { 0.0 },
        coefficient_nlogn: if b.is_finite() { b } else { 0.0 },
        r_squared,
        points: rows.len(),
    }
}

/// Two-regressor least squares through the origin. Columns are rescaled to
/// unit norm before solving the normal equations.
fn least_squares_2(xs: &[[f64; 2]], ts: &[f64]) -> Option<(f64, f64)> {
    let norm = |j: usize| xs.iter().map(|x| x[j] * x[j]).sum::<f64>().sqrt();
    let (s0, s1) = (norm(0), norm(1));
    if s0 == 0.0 || s1 == 0.0 {
        return None;
    }
    let (mut g00, mut g01, mut g11, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, t) in xs.iter().zip(ts) {
        let (u, v) = (x[0] / s0, x[1] / s1);
        g00 += u * u;
        g01 += u * v;
        g11 += v * v;
        r0 += u * t;
        r1 += v * t;
    }
    let det = g00 * g11 - g01 * g01;
    if det.abs() < 1e-14 {
        return None;
    }
    let a = (g11 * r0 - g01 * r1) / det;
    let b = (g00 * r1 - g01 * r0) / det;
    Some((a / s0, b / s1))
}

pub fn bench_markdown(rows: &[BenchRow], fit: &ScalingFit) -> String {
    let mut s = String::from("| N | K | D | strategy | time (s) | mul-adds | comparisons |\n|---|---|---|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {:.6} | {} | {} |\n",
            r.n, r.k, r.d, r.strategy, r.wall_time_s, r.mul_adds, r.comparisons
        ));
    }
    s.push_str(&format!(
        "\nFit `t = a*N*K*D + b*N*log2(N)`: a = {:.4e}, b = {:.4e}, R^2 = {}\n",
        fit.coefficient_nkd,
        fit.coefficient_nlogn,
        fit.r_squared.map_or("n/a".to_string(), |r| format!("{r:.4}"))
    ));
    s
}
