//! Cartesian block partitioning of the element grid and interface-volume accounting.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sem::CaseConfig;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PartitionError {
    #[error("cannot place {ranks} ranks on {elements} elements: every rank needs at least one element")]
    OverDecomposition { ranks: usize, elements: usize },
    #[error("rank count must be at least 1")]
    NoRanks,
    #[error("{ranks} ranks admit no block factorization within element grid {elements:?}")]
    NoBlockFactorization { ranks: usize, elements: [usize; 3] },
    #[error("undefined application profile: zero flops and zero words")]
    UndefinedProfile,
}

/// An element face whose two neighbours live on different ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutFace {
    /// Face normal direction (0 = x).
    pub axis: usize,
    /// Element on the low side of the face.
    pub lower: [usize; 3],
    /// Rank owning `lower`.
    pub rank_a: usize,
    /// Rank owning the element on the high side.
    pub rank_b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub ranks: usize,
    /// Rank grid `(p_x, p_y, p_z)`.
    pub dims: [usize; 3],
    pub elements: [usize; 3],
    /// Elements of each rank, lexicographic with x fastest.
    pub rank_elements: Vec<Vec<[usize; 3]>>,
    pub cut_faces: Vec<CutFace>,
}

/// Split `n` items into `parts` contiguous chunks whose sizes differ by at most one.
fn split(n: usize, parts: usize) -> Vec<Range<usize>> {
    let base = n / parts;
    let extra = n % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Rank-grid factor `(p_x, p_y, p_z)` with the smallest cut area in grid
/// points; ties prefer larger `p_z`, then larger `p_y`.
fn choose_dims(config: &CaseConfig, ranks: usize) -> Option<[usize; 3]> {
    let e = config.elements;
    let mut best: Option<(u64, [usize; 3])> = None;
    for px in 1..=ranks.min(e[0]) {
        if ranks % px != 0 {
            continue;
        }
        let rest = ranks / px;
        for py in 1..=rest.min(e[1]) {
            if rest % py != 0 {
                continue;
            }
            let pz = rest / py;
            if pz > e[2] {
                continue;
            }
            let dims = [px, py, pz];
            let area: u64 = (0..3)
                .map(|d| {
                    let planes = (dims[d] - 1) as u64;
                    let faces = (e[(d + 1) % 3] * e[(d + 2) % 3]) as u64;
                    planes * faces * config.face_points(d) as u64
                })
                .sum();
            let better = match best {
                None => true,
                Some((a, b)) => area < a || (area == a && (pz, py) > (b[2], b[1])),
            };
            if better {
                best = Some((area, dims));
            }
        }
    }
    best.map(|(_, d)| d)
}

impl PartitionPlan {
    /// Rank owning element `e`.
    pub fn owner(&self, e: [usize; 3]) -> usize {
        let c = self.block_coords_of_element(e);
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    fn ranges(&self, axis: usize) -> Vec<Range<usize>> {
        split(self.elements[axis], self.dims[axis])
    }

    fn block_coords_of_element(&self, e: [usize; 3]) -> [usize; 3] {
        [0, 1, 2].map(|d| {
            self.ranges(d)
                .iter()
                .position(|r| r.contains(&e[d]))
                .expect("element inside grid")
        })
    }

    /// Position of `rank` in the rank grid.
    pub fn block_coords(&self, rank: usize) -> [usize; 3] {
        [
            rank % self.dims[0],
            (rank / self.dims[0]) % self.dims[1],
            rank / (self.dims[0] * self.dims[1]),
        ]
    }

    pub fn rank_at(&self, coords: [usize; 3]) -> usize {
        coords[0] + self.dims[0] * (coords[1] + self.dims[1] * coords[2])
    }

    /// Element ranges `[lo, hi)` per axis owned by `rank`.
    pub fn block_ranges(&self, rank: usize) -> [Range<usize>; 3] {
        let c = self.block_coords(rank);
        [0, 1, 2].map(|d| self.ranges(d)[c[d]].clone())
    }

    /// Face-neighbour ranks of `rank` along `axis`: `[minus, plus]`.
    pub fn axis_neighbors(&self, rank: usize, axis: usize) -> [Option<usize>; 2] {
        let c = self.block_coords(rank);
        let minus = (c[axis] > 0).then(|| {
            let mut m = c;
            m[axis] -= 1;
            self.rank_at(m)
        });
        let plus = (c[axis] + 1 < self.dims[axis]).then(|| {
            let mut p = c;
            p[axis] += 1;
            self.rank_at(p)
        });
        [minus, plus]
    }

    /// Number of distinct face-neighbour ranks of `rank`.
    pub fn neighbor_count(&self, rank: usize) -> usize {
        (0..3)
            .map(|d| self.axis_neighbors(rank, d).iter().flatten().count())
            .sum()
    }

    pub fn max_neighbor_count(&self) -> usize {
        (0..self.ranks).map(|r| self.neighbor_count(r)).max().unwrap_or(0)
    }

    /// Sum of face-neighbour counts over all ranks (messages per exchange).
    pub fn total_neighbor_links(&self) -> usize {
        (0..self.ranks).map(|r| self.neighbor_count(r)).sum()
    }

    /// Cut faces between `a` and `b`, counted from either side.
    pub fn faces_between(&self, a: usize, b: usize) -> usize {
        self.cut_faces
            .iter()
            .filter(|f| (f.rank_a == a && f.rank_b == b) || (f.rank_a == b && f.rank_b == a))
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Cartesian block decomposition of `config`'s element grid over `ranks` ranks.
pub fn partition_elements(config: &CaseConfig, ranks: usize) -> Result<PartitionPlan, PartitionError> {
    if ranks == 0 {
        return Err(PartitionError::NoRanks);
    }
    let total = config.total_elements();
    if ranks > total {
        return Err(PartitionError::OverDecomposition { ranks, elements: total });
    }
    let dims = choose_dims(config, ranks).ok_or(PartitionError::NoBlockFactorization {
        ranks,
        elements: config.elements,
    })?;
    let e = config.elements;
    let ranges: [Vec<Range<usize>>; 3] = [0, 1, 2].map(|d| split(e[d], dims[d]));
    // owner lookup per axis
    let owner_axis: [Vec<usize>; 3] = [0, 1, 2].map(|d| {
        let mut v = vec![0; e[d]];
        for (b, r) in ranges[d].iter().enumerate() {
            for i in r.clone() {
                v[i] = b;
            }
        }
        v
    });
    let owner = |el: [usize; 3]| owner_axis[0][el[0]] + dims[0] * (owner_axis[1][el[1]] + dims[1] * owner_axis[2][el[2]]);

    let mut rank_elements = vec![Vec::new(); ranks];
    let mut cut_faces = Vec::new();
    for k in 0..e[2] {
        for j in 0..e[1] {
            for i in 0..e[0] {
                let el = [i, j, k];
                let r = owner(el);
                rank_elements[r].push(el);
                for axis in 0..3 {
                    if el[axis] + 1 < e[axis] {
                        let mut up = el;
                        up[axis] += 1;
                        let rb = owner(up);
                        if rb != r {
                            cut_faces.push(CutFace {
                                axis,
                                lower: el,
                                rank_a: r,
                                rank_b: rb,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(PartitionPlan {
        ranks,
        dims,
        elements: e,
        rank_elements,
        cut_faces,
    })
}

/// Words on the wire per step: each cut face carries `face points * n_v`
/// words in each direction on every exchange.
pub fn words_per_step(plan: &PartitionPlan, config: &CaseConfig, exchanges_per_step: u64) -> u64 {
    let per_exchange: u64 = plan
        .cut_faces
        .iter()
        .map(|f| 2 * (config.face_points(f.axis) * config.fields) as u64)
        .sum();
    per_exchange * exchanges_per_step
}

/// Words sent by each rank per step.
pub fn words_sent_per_rank(plan: &PartitionPlan, config: &CaseConfig, exchanges_per_step: u64) -> Vec<u64> {
    let mut v = vec![0u64; plan.ranks];
    for f in &plan.cut_faces {
        let w = (config.face_points(f.axis) * config.fields) as u64 * exchanges_per_step;
        v[f.rank_a] += w;
        v[f.rank_b] += w;
    }
    v
}

/// Sentinel for a communication-free application intensity.
pub const SATURATED: f64 = f64::INFINITY;

/// Application intensity `gamma_a = flops / words`; [`SATURATED`] when no words move.
pub fn compute_gamma_a(flops: u64, words: u64) -> Result<f64, PartitionError> {
    match (flops, words) {
        (0, 0) => Err(PartitionError::UndefinedProfile),
        (_, 0) => Ok(SATURATED),
        (f, w) => Ok(f as f64 / w as f64),
    }
}

/// Operation and traffic volume of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppProfile {
    pub flops_per_step: u64,
    pub words_per_step: u64,
    #[serde(with = "crate::serde_ratio")]
    pub gamma_a: f64,
}

impl AppProfile {
    pub fn new(flops_per_step: u64, words_per_step: u64) -> Result<Self, PartitionError> {
        Ok(Self {
            flops_per_step,
            words_per_step,
            gamma_a: compute_gamma_a(flops_per_step, words_per_step)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force count of element faces whose neighbours have different owners.
    fn brute_cut_faces(plan: &PartitionPlan) -> usize {
        let e = plan.elements;
        let mut n = 0;
        for k in 0..e[2] {
            for j in 0..e[1] {
                for i in 0..e[0] {
                    for (di, dj, dk) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
                        let (a, b, c) = (i + di, j + dj, k + dk);
                        if a < e[0] && b < e[1] && c < e[2] && plan.owner([i, j, k]) != plan.owner([a, b, c]) {
                            n += 1;
                        }
                    }
                }
            }
        }
        n
    }

    #[test]
    fn single_rank_has_no_cuts() {
        let c = CaseConfig::cube(8, 8);
        let p = partition_elements(&c, 1).unwrap();
        assert_eq!(p.dims, [1, 1, 1]);
        assert!(p.cut_faces.is_empty());
        assert_eq!(p.rank_elements[0].len(), 512);
        assert_eq!(words_per_step(&p, &c, 5), 0);
    }

    #[test]
    fn two_element_split() {
        let c = CaseConfig::cube(1, 8).with_elements([2, 1, 1]);
        let p = partition_elements(&c, 2).unwrap();
        assert_eq!(p.cut_faces.len(), 1);
        assert_eq!(words_per_step(&p, &c, 1), 162);
        assert_eq!(words_sent_per_rank(&p, &c, 1), vec![81, 81]);
    }

    #[test]
    fn eight_ranks_on_eight_cubed() {
        let c = CaseConfig::cube(8, 8);
        let p = partition_elements(&c, 8).unwrap();
        assert_eq!(p.dims, [2, 2, 2]);
        assert_eq!(p.cut_faces.len(), 192);
        assert_eq!(brute_cut_faces(&p), 192);
        assert_eq!(words_per_step(&p, &c, 1), 31_104);
    }

    #[test]
    fn tie_break_prefers_z_then_y() {
        let c = CaseConfig::cube(8, 8);
        assert_eq!(partition_elements(&c, 2).unwrap().dims, [1, 1, 2]);
        assert_eq!(partition_elements(&c, 4).unwrap().dims, [1, 2, 2]);
        assert_eq!(partition_elements(&c, 16).unwrap().dims, [2, 2, 4]);
        assert_eq!(partition_elements(&c, 32).unwrap().dims, [2, 4, 4]);
    }

    #[test]
    fn over_decomposition_is_rejected() {
        let c = CaseConfig::cube(8, 8);
        assert_eq!(
            partition_elements(&c, 1000),
            Err(PartitionError::OverDecomposition { ranks: 1000, elements: 512 })
        );
        assert_eq!(partition_elements(&c, 0), Err(PartitionError::NoRanks));
        // 11 is prime and larger than every axis
        assert!(matches!(
            partition_elements(&c, 11),
            Err(PartitionError::NoBlockFactorization { .. })
        ));
    }

    #[test]
    fn uneven_blocks_differ_by_at_most_one() {
        let c = CaseConfig::cube(1, 2).with_elements([7, 5, 3]);
        let p = partition_elements(&c, 6).unwrap();
        for d in 0..3 {
            let lens: Vec<usize> = split(c.elements[d], p.dims[d]).iter().map(|r| r.len()).collect();
            let max = *lens.iter().max().unwrap();
            let min = *lens.iter().min().unwrap();
            assert!(max - min <= 1);
        }
        assert_eq!(brute_cut_faces(&p), p.cut_faces.len());
    }

    #[test]
    fn gamma_a_cases() {
        assert_eq!(compute_gamma_a(1_000_000_000, 1_000_000).unwrap(), 1000.0);
        assert_eq!(compute_gamma_a(5, 0).unwrap(), SATURATED);
        assert_eq!(compute_gamma_a(0, 0), Err(PartitionError::UndefinedProfile));
    }

    #[test]
    fn plan_json_roundtrip() {
        let c = CaseConfig::cube(4, 3);
        let p = partition_elements(&c, 8).unwrap();
        let back = PartitionPlan::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn neighbor_counts() {
        let c = CaseConfig::cube(8, 8);
        let p = partition_elements(&c, 8).unwrap();
        assert!((0..8).all(|r| p.neighbor_count(r) == 3));
        let p = partition_elements(&c, 32).unwrap();
        assert_eq!(p.max_neighbor_count(), 5);
        let p = partition_elements(&c, 1).unwrap();
        assert_eq!(p.max_neighbor_count(), 0);
    }
}
