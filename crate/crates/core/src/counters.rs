//! Exact operation counters used as complexity evidence.

use core::ops::{Add, AddAssign};

/// Counts of the scalar work done while scoring and ranking a pool.
///
/// `weight_mul_adds` counts multiply-adds that touch a class weight row
/// (logits and the weighted row sums behind both feature gradients), so it is
/// a multiple of `N * K * D`. `vector_mul_adds` counts per-sample work on
/// D-vectors that does not involve the weights (the cosine). `comparisons` are
/// the score comparisons made by the ranking sort.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub dot_products: u64,
    pub weight_mul_adds: u64,
    pub vector_mul_adds: u64,
    pub comparisons: u64,
}

impl OpCounters {
    /// Total scalar multiply-adds.
    pub fn mul_adds(&self) -> u64 {
        self.weight_mul_adds + self.vector_mul_adds
    }
}

impl AddAssign for OpCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.dot_products += rhs.dot_products;
        self.weight_mul_adds += rhs.weight_mul_adds;
        self.vector_mul_adds += rhs.vector_mul_adds;
        self.comparisons += rhs.comparisons;
    }
}

impl Add for OpCounters {
    type Output = Self;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}
