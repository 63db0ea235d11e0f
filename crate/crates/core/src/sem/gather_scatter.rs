//! Direct-stiffness summation over redundantly stored element nodes.
//!
//! Each rank first sums the copies of a node held by its own elements, then
//! runs three exchange stages (x, y, z). In stage `d` a rank sends the
//! current partial sums on its `d`-faces to its face neighbours along `d`
//! and adds what it receives. Edge and corner nodes ride inside face
//! messages and reach diagonal neighbours through the later stages. Every
//! combination step adds exactly two operands, so all copies of a node end
//! up bitwise identical on every rank.
//!
//! Messages carry one `(N_a+1)(N_b+1)` block per cut element face, in a
//! canonical order both sides derive from the global geometry. A node on an
//! edge between two cut faces travels once per face; the receiver keeps the
//! first occurrence.

use crate::partition::PartitionPlan;
use crate::transport::{Transport, TransportError};

use super::case::CaseConfig;

#[derive(Debug, Clone)]
struct Exchange {
    peer: usize,
    /// Unique-node index of every word of one field's block.
    nodes: Vec<u32>,
    /// Whether the word is the first occurrence of its node in the message.
    first: Vec<bool>,
}

/// Per-rank gather-scatter plan and buffers.
#[derive(Debug, Clone)]
pub struct GatherScatter {
    rank: usize,
    degree: [usize; 3],
    global_points: [usize; 3],
    /// Global grid coordinates of each local point.
    local_coords: Vec<[u32; 3]>,
    local_to_unique: Vec<u32>,
    unique_count: usize,
    stages: [Vec<Exchange>; 3],
    boundary: Vec<u32>,
    buffers: Vec<Vec<f64>>,
}

impl GatherScatter {
    pub fn new(config: &CaseConfig, plan: &PartitionPlan, rank: usize) -> Self {
        let n = config.degree;
        let pts = config.points();
        let g = [
            config.elements[0] * n[0] + 1,
            config.elements[1] * n[1] + 1,
            config.elements[2] * n[2] + 1,
        ];
        let gid = |c: [usize; 3]| (c[0] + g[0] * (c[1] + g[1] * c[2])) as u64;

        let mut local_coords = Vec::with_capacity(plan.rank_elements[rank].len() * config.points_per_element());
        for e in &plan.rank_elements[rank] {
            for c in 0..pts[2] {
                for b in 0..pts[1] {
                    for a in 0..pts[0] {
                        local_coords.push([
                            (e[0] * n[0] + a) as u32,
                            (e[1] * n[1] + b) as u32,
                            (e[2] * n[2] + c) as u32,
                        ]);
                    }
                }
            }
        }
        let to_usize = |c: [u32; 3]| [c[0] as usize, c[1] as usize, c[2] as usize];
        let mut unique_ids: Vec<u64> = local_coords.iter().map(|&c| gid(to_usize(c))).collect();
        unique_ids.sort_unstable();
        unique_ids.dedup();
        let lookup = |id: u64| unique_ids.binary_search(&id).expect("node is local") as u32;
        let local_to_unique: Vec<u32> = local_coords.iter().map(|&c| lookup(gid(to_usize(c)))).collect();

        let ranges = plan.block_ranges(rank);
        let mut stages: [Vec<Exchange>; 3] = Default::default();
        for (d, stage) in stages.iter_mut().enumerate() {
            let [minus, plus] = plan.axis_neighbors(rank, d);
            // tangential axes in increasing order, lower one fastest
            let (t0, t1) = match d {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            for (peer, plane_elem) in [(minus, ranges[d].start), (plus, ranges[d].end)] {
                let Some(peer) = peer else { continue };
                let plane = plane_elem * n[d];
                let mut nodes = Vec::new();
                let mut first = Vec::new();
                let mut seen = std::collections::HashSet::new();
                for e1 in ranges[t1].clone() {
                    for e0 in ranges[t0].clone() {
                        for b in 0..pts[t1] {
                            for a in 0..pts[t0] {
                                let mut c = [0usize; 3];
                                c[d] = plane;
                                c[t0] = e0 * n[t0] + a;
                                c[t1] = e1 * n[t1] + b;
                                let u = lookup(gid(c));
                                first.push(seen.insert(u));
                                nodes.push(u);
                            }
                        }
                    }
                }
                stage.push(Exchange { peer, nodes, first });
            }
        }

        let boundary: Vec<u32> = unique_ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| {
                let id = id as usize;
                let c = [id % g[0], (id / g[0]) % g[1], id / (g[0] * g[1])];
                (0..3).any(|d| c[d] == 0 || c[d] == g[d] - 1)
            })
            .map(|(i, _)| i as u32)
            .collect();

        Self {
            rank,
            degree: n,
            global_points: g,
            local_coords,
            local_to_unique,
            unique_count: unique_ids.len(),
            stages,
            boundary,
            buffers: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn local_len(&self) -> usize {
        self.local_to_unique.len()
    }

    pub fn unique_len(&self) -> usize {
        self.unique_count
    }

    /// Global grid coordinates of every local point.
    pub fn local_coords(&self) -> &[[u32; 3]] {
        &self.local_coords
    }

    /// Global node id of every local point.
    pub fn global_ids(&self) -> Vec<u64> {
        let g = self.global_points;
        self.local_coords
            .iter()
            .map(|c| (c[0] as usize + g[0] * (c[1] as usize + g[1] * c[2] as usize)) as u64)
            .collect()
    }

    /// Whether the local point lies on the outer boundary of the domain.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let g = self.global_points;
        self.local_coords
            .iter()
            .map(|c| (0..3).any(|d| c[d] == 0 || c[d] as usize == g[d] - 1))
            .collect()
    }

    /// Number of element copies of each local point across the whole mesh.
    pub fn multiplicity(&self) -> Vec<u32> {
        let g = self.global_points;
        let n = self.degree;
        self.local_coords
            .iter()
            .map(|c| {
                (0..3)
                    .map(|d| {
                        let x = c[d] as usize;
                        if x % n[d] == 0 && x > 0 && x < g[d] - 1 {
                            2
                        } else {
                            1
                        }
                    })
                    .product()
            })
            .collect()
    }

    /// Assembled sum of an element-local array that is identical on every
    /// element, evaluated without communication. Contributions are added
    /// in a fixed order, so all ranks agree bitwise.
    pub fn assemble_uniform(&self, element_values: &[f64]) -> Vec<f64> {
        let g = self.global_points;
        let n = self.degree;
        let nx = n[0] + 1;
        let ny = n[1] + 1;
        self.local_coords
            .iter()
            .map(|c| {
                let choices: [Vec<usize>; 3] = [0, 1, 2].map(|d| {
                    let x = c[d] as usize;
                    if x == g[d] - 1 {
                        vec![n[d]]
                    } else if x % n[d] == 0 && x > 0 {
                        vec![n[d], 0]
                    } else {
                        vec![x % n[d]]
                    }
                });
                let mut acc = 0.0;
                for &k in &choices[2] {
                    for &j in &choices[1] {
                        for &i in &choices[0] {
                            acc += element_values[i + nx * (j + ny * k)];
                        }
                    }
                }
                acc
            })
            .collect()
    }

    /// Sums all copies of every node across elements and ranks and writes
    /// the sum back into each copy. With `mask_boundary`, outer-boundary
    /// nodes are zeroed afterwards.
    pub fn apply<T: Transport + ?Sized>(
        &mut self,
        fields: &mut [Vec<f64>],
        mask_boundary: bool,
        transport: &mut T,
    ) -> Result<(), TransportError> {
        let nf = fields.len();
        self.buffers.resize_with(nf, Vec::new);
        for (buf, local) in self.buffers.iter_mut().zip(fields.iter()) {
            buf.clear();
            buf.resize(self.unique_count, 0.0);
            for (&u, &v) in self.local_to_unique.iter().zip(local.iter()) {
                buf[u as usize] += v;
            }
        }

        for stage in &self.stages {
            for ex in stage {
                let mut msg = Vec::with_capacity(ex.nodes.len() * nf);
                for buf in &self.buffers {
                    msg.extend(ex.nodes.iter().map(|&u| buf[u as usize]));
                }
                transport.send(ex.peer, msg)?;
            }
            for ex in stage {
                let msg = transport.receive(ex.peer)?;
                let len = ex.nodes.len();
                assert_eq!(msg.len(), len * nf, "gather-scatter message size mismatch");
                for (f, buf) in self.buffers.iter_mut().enumerate() {
                    let block = &msg[f * len..(f + 1) * len];
                    for ((&u, &first), &v) in ex.nodes.iter().zip(&ex.first).zip(block) {
                        if first {
                            buf[u as usize] += v;
                        }
                    }
                }
            }
        }

        for (buf, local) in self.buffers.iter_mut().zip(fields.iter_mut()) {
            if mask_boundary {
                for &b in &self.boundary {
                    buf[b as usize] = 0.0;
                }
            }
            for (v, &u) in local.iter_mut().zip(&self.local_to_unique) {
                *v = buf[u as usize];
            }
        }
        Ok(())
    }

    /// Words this rank sends per field and exchange.
    pub fn words_per_exchange(&self) -> usize {
        self.stages.iter().flatten().map(|e| e.nodes.len()).sum()
    }

    /// Messages this rank sends per exchange.
    pub fn messages_per_exchange(&self) -> usize {
        self.stages.iter().map(|s| s.len()).sum()
    }
}
