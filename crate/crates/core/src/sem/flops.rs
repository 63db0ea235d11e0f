use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

/// Counted real arithmetic of the numerical kernels.
///
/// Kernels add their operation counts in bulk from loop bounds; the counts
/// are checked against an operation-by-operation reference in the tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCounter {
    pub additions: u64,
    pub multiplications: u64,
    pub divisions: u64,
}

impl FlopCounter {
    pub const fn new() -> Self {
        Self {
            additions: 0,
            multiplications: 0,
            divisions: 0,
        }
    }

    pub const fn total(&self) -> u64 {
        self.additions + self.multiplications + self.divisions
    }

    pub fn reset(&mut self) {
        *self = Self::new();
    }

    #[inline]
    pub fn add(&mut self, n: u64) {
        self.additions += n;
    }

    #[inline]
    pub fn mul(&mut self, n: u64) {
        self.multiplications += n;
    }

    #[inline]
    pub fn div(&mut self, n: u64) {
        self.divisions += n;
    }

    /// `n` fused multiply-accumulate terms, counted as one multiply and one add each.
    #[inline]
    pub fn mul_add(&mut self, n: u64) {
        self.additions += n;
        self.multiplications += n;
    }
}

impl AddAssign for FlopCounter {
    fn add_assign(&mut self, rhs: Self) {
        self.additions += rhs.additions;
        self.multiplications += rhs.multiplications;
        self.divisions += rhs.divisions;
    }
}

impl std::iter::Sum for FlopCounter {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::new(), |mut a, b| {
            a += b;
            a
        })
    }
}
