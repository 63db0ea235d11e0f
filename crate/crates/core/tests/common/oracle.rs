//! Operation-by-operation flop reference.
//!
//! `Counted` wraps `f64` and records every addition, subtraction,
//! multiplication and division in a thread-local tally. The kernels below
//! are written out point by point over that type, so their tallies are the
//! true operation counts of the algorithm, independent of the bulk
//! accounting in the library.

#![allow(dead_code)]

use std::cell::Cell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Sub, SubAssign};

use semperf::partition::PartitionPlan;
use semperf::sem::{Boundary, CaseConfig, IterationMode, SpectralBasis, WorkUnitOptions};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub add: u64,
    pub mul: u64,
    pub div: u64,
}

impl Counts {
    pub fn total(&self) -> u64 {
        self.add + self.mul + self.div
    }
}

thread_local! {
    static TALLY: Cell<Counts> = const { Cell::new(Counts { add: 0, mul: 0, div: 0 }) };
}

fn bump(f: impl FnOnce(&mut Counts)) {
    TALLY.with(|t| {
        let mut c = t.get();
        f(&mut c);
        t.set(c);
    });
}

/// Runs `f` with the tally set to `counts` and stores the updated tally back.
pub fn tallied<R>(counts: &mut Counts, f: impl FnOnce() -> R) -> R {
    let saved = TALLY.with(|t| t.replace(*counts));
    let r = f();
    *counts = TALLY.with(|t| t.replace(saved));
    r
}

#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd)]
pub struct Counted(pub f64);

impl Add for Counted {
    type Output = Counted;
    fn add(self, o: Counted) -> Counted {
        bump(|c| c.add += 1);
        Counted(self.0 + o.0)
    }
}

impl Sub for Counted {
    type Output = Counted;
    fn sub(self, o: Counted) -> Counted {
        bump(|c| c.add += 1);
        Counted(self.0 - o.0)
    }
}

impl Mul for Counted {
    type Output = Counted;
    fn mul(self, o: Counted) -> Counted {
        bump(|c| c.mul += 1);
        Counted(self.0 * o.0)
    }
}

impl Div for Counted {
    type Output = Counted;
    fn div(self, o: Counted) -> Counted {
        bump(|c| c.div += 1);
        Counted(self.0 / o.0)
    }
}

impl AddAssign for Counted {
    fn add_assign(&mut self, o: Counted) {
        *self = *self + o;
    }
}

impl SubAssign for Counted {
    fn sub_assign(&mut self, o: Counted) {
        *self = *self - o;
    }
}

impl MulAssign for Counted {
    fn mul_assign(&mut self, o: Counted) {
        *self = *self * o;
    }
}

fn c(v: f64) -> Counted {
    Counted(v)
}

/// Differentiation matrices and quadrature of a reference hexahedron.
pub struct Reference {
    pub shape: [usize; 3],
    pub diff: [Vec<f64>; 3],
    pub weights: [Vec<f64>; 3],
    pub nodes: [Vec<f64>; 3],
}

impl Reference {
    pub fn new(degree: [usize; 3]) -> Self {
        let b = degree.map(|n| SpectralBasis::gll(n).unwrap());
        Self {
            shape: degree.map(|n| n + 1),
            diff: [0, 1, 2].map(|d| b[d].diff_matrix().to_vec()),
            weights: [0, 1, 2].map(|d| b[d].weights().to_vec()),
            nodes: [0, 1, 2].map(|d| b[d].nodes().to_vec()),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    fn index(&self, i: [usize; 3]) -> usize {
        i[0] + self.shape[0] * (i[1] + self.shape[1] * i[2])
    }

    fn point(&self, p: usize) -> [usize; 3] {
        let [nx, ny, _] = self.shape;
        [p % nx, (p / nx) % ny, p / (nx * ny)]
    }
}

/// `out += D u` along `axis`, or `out += D^T u` when `transpose`, one
/// output point at a time.
pub fn derivative_into(r: &Reference, u: &[Counted], axis: usize, transpose: bool, out: &mut [Counted]) {
    let n = r.shape[axis];
    let d = &r.diff[axis];
    for (p, o) in out.iter_mut().enumerate() {
        let idx = r.point(p);
        let mut acc = *o;
        for m in 0..n {
            let mut j = idx;
            j[axis] = m;
            let coef = if transpose { d[m * n + idx[axis]] } else { d[idx[axis] * n + m] };
            acc += c(coef) * u[r.index(j)];
        }
        *o = acc;
    }
}

pub fn derivative(r: &Reference, u: &[Counted], axis: usize) -> Vec<Counted> {
    let mut out = vec![c(0.0); r.len()];
    derivative_into(r, u, axis, false, &mut out);
    out
}

/// Element geometric factors `(2/h_d)^2 J w` and mass `J w`.
pub fn geometry(r: &Reference, size: [f64; 3]) -> ([Vec<f64>; 3], Vec<f64>) {
    let jac = size[0] * size[1] * size[2] / 8.0;
    let mass: Vec<f64> = (0..r.len())
        .map(|p| {
            let i = r.point(p);
            jac * (r.weights[0][i[0]] * r.weights[1][i[1]] * r.weights[2][i[2]])
        })
        .collect();
    let g = [0, 1, 2].map(|d| {
        let s = (2.0 / size[d]) * (2.0 / size[d]);
        mass.iter().map(|m| s * m).collect()
    });
    (g, mass)
}

/// `sum_d D_d^T G_d D_d u + lambda B u` on one element.
pub fn laplacian(r: &Reference, size: [f64; 3], lambda: f64, u: &[Counted]) -> Vec<Counted> {
    let (g, mass) = geometry(r, size);
    let mut out = vec![c(0.0); r.len()];
    for d in 0..3 {
        let mut s = derivative(r, u, d);
        for (sp, gp) in s.iter_mut().zip(&g[d]) {
            *sp *= c(*gp);
        }
        derivative_into(r, &s, d, true, &mut out);
    }
    if lambda != 0.0 {
        for ((o, m), v) in out.iter_mut().zip(&mass).zip(u) {
            *o += c(lambda * m) * *v;
        }
    }
    out
}

pub struct CgOutcome {
    pub counts: Vec<Counts>,
    pub iterations: usize,
    pub relative_residual: f64,
    /// Final first-field iterate by global node id.
    pub solution: HashMap<u64, f64>,
}

struct Rank {
    ids: Vec<u64>,
    inv_mult: Vec<f64>,
    masked: Vec<bool>,
    precond: Vec<f64>,
    elements: usize,
    counts: Counts,
}

/// Jacobi-preconditioned CG of the work unit, counted per rank.
///
/// Direct stiffness summation and the combination of reduction partial
/// sums are done in plain `f64`: they are communication, not rank compute.
pub fn work_unit_cg(config: &CaseConfig, plan: &PartitionPlan, options: &WorkUnitOptions) -> CgOutcome {
    let r = Reference::new(config.degree);
    let size = config.element_size();
    let n = config.degree;
    let gpts = [0, 1, 2].map(|d| config.elements[d] * n[d] + 1);
    let ppe = r.len();
    let nf = config.fields;
    let dirichlet = options.boundary == Boundary::Dirichlet;
    let projects = options.boundary == (Boundary::Neumann { project_mean: true });
    let lambda = options.lambda;

    // plain-f64 element matrix diagonal from unit-vector products
    let mut scratch = Counts::default();
    let diag_e: Vec<f64> = tallied(&mut scratch, || {
        (0..ppe)
            .map(|p| {
                let mut e = vec![c(0.0); ppe];
                e[p] = c(1.0);
                laplacian(&r, size, lambda, &e)[p].0
            })
            .collect()
    });
    let (_, mass_e) = geometry(&r, size);

    let mut mult: HashMap<u64, u32> = HashMap::new();
    let mut diag: HashMap<u64, f64> = HashMap::new();
    let mut mass: HashMap<u64, f64> = HashMap::new();
    let mut coords: HashMap<u64, [f64; 3]> = HashMap::new();
    let mut ranks: Vec<Rank> = Vec::new();
    for els in &plan.rank_elements {
        let mut ids = Vec::with_capacity(els.len() * ppe);
        for e in els {
            for p in 0..ppe {
                let i = r.point(p);
                let gc = [0, 1, 2].map(|d| e[d] * n[d] + i[d]);
                let id = (gc[0] + gpts[0] * (gc[1] + gpts[1] * gc[2])) as u64;
                *mult.entry(id).or_default() += 1;
                *diag.entry(id).or_default() += diag_e[p];
                *mass.entry(id).or_default() += mass_e[p];
                coords.insert(id, [0, 1, 2].map(|d| (e[d] as f64 + (r.nodes[d][i[d]] + 1.0) / 2.0) * size[d]));
                ids.push(id);
            }
        }
        ranks.push(Rank {
            ids,
            inv_mult: Vec::new(),
            masked: Vec::new(),
            precond: Vec::new(),
            elements: els.len(),
            counts: Counts::default(),
        });
    }
    let on_boundary = |id: u64| {
        let id = id as usize;
        let g = [id % gpts[0], (id / gpts[0]) % gpts[1], id / (gpts[0] * gpts[1])];
        (0..3).any(|d| g[d] == 0 || g[d] == gpts[d] - 1)
    };
    let exact = |id: u64| {
        let x = coords[&id];
        if dirichlet {
            (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin()
        } else {
            (PI * x[0]).cos() * (PI * x[1]).cos() * (PI * x[2]).cos()
        }
    };
    let forcing = 3.0 * PI * PI + lambda;
    let global_unique = (gpts[0] * gpts[1] * gpts[2]) as f64;

    let mut rhs: Vec<Vec<f64>> = Vec::new();
    for rk in ranks.iter_mut() {
        rk.inv_mult = rk.ids.iter().map(|id| 1.0 / mult[id] as f64).collect();
        rk.masked = rk.ids.iter().map(|&id| dirichlet && on_boundary(id)).collect();
        rk.precond = rk.ids.iter().zip(&rk.masked).map(|(id, &m)| if m { 0.0 } else { 1.0 / diag[id] }).collect();
        rhs.push(
            rk.ids
                .iter()
                .zip(&rk.masked)
                .map(|(&id, &m)| if m { 0.0 } else { mass[&id] * forcing * exact(id) })
                .collect(),
        );
    }

    // direct stiffness summation over all copies, then the boundary mask
    let dss = |v: &mut [Vec<Vec<Counted>>], ranks: &[Rank]| {
        for f in 0..nf {
            let mut sums: HashMap<u64, f64> = HashMap::new();
            for (rk, vr) in ranks.iter().zip(v.iter()) {
                for (id, x) in rk.ids.iter().zip(&vr[f]) {
                    *sums.entry(*id).or_default() += x.0;
                }
            }
            for (rk, vr) in ranks.iter().zip(v.iter_mut()) {
                for ((id, x), &m) in rk.ids.iter().zip(vr[f].iter_mut()).zip(&rk.masked) {
                    *x = c(if m && dirichlet { 0.0 } else { sums[id] });
                }
            }
        }
    };
    let dot = |a: &[Counted], b: &[Counted], w: &[f64]| {
        let mut acc = c(0.0);
        for ((x, y), m) in a.iter().zip(b).zip(w) {
            acc += *x * *y * c(*m);
        }
        acc
    };
    let project = |v: &mut [Vec<Vec<Counted>>], ranks: &mut [Rank]| {
        let mut partial = vec![0.0; nf];
        for (rk, vr) in ranks.iter_mut().zip(v.iter()) {
            let inv = rk.inv_mult.clone();
            tallied(&mut rk.counts, || {
                for f in 0..nf {
                    let mut acc = c(0.0);
                    for (x, m) in vr[f].iter().zip(&inv) {
                        acc += *x * c(*m);
                    }
                    partial[f] += acc.0;
                }
            });
        }
        for (rk, vr) in ranks.iter_mut().zip(v.iter_mut()) {
            tallied(&mut rk.counts, || {
                for f in 0..nf {
                    let mean = c(partial[f]) / c(global_unique);
                    for x in vr[f].iter_mut() {
                        *x -= mean;
                    }
                }
            });
        }
    };

    if projects {
        let mut b: Vec<Vec<Vec<Counted>>> = rhs.iter().map(|v| vec![v.iter().map(|&x| c(x)).collect()]).collect();
        // the setup projection of the right-hand side is not part of the step
        {
            let mut partial = 0.0;
            for (rk, vr) in ranks.iter().zip(&b) {
                for (x, m) in vr[0].iter().zip(&rk.inv_mult) {
                    partial += x.0 * m;
                }
            }
            let mean = partial / global_unique;
            for vr in b.iter_mut() {
                for x in vr[0].iter_mut() {
                    x.0 -= mean;
                }
            }
        }
        rhs = b.into_iter().map(|v| v[0].iter().map(|x| x.0).collect()).collect();
    }

    let budget = match options.mode {
        IterationMode::FixedBudget => config.cg_iters_per_step,
        IterationMode::ToTolerance { max_iterations, .. } => max_iterations,
    };
    let tolerance = match options.mode {
        IterationMode::FixedBudget => None,
        IterationMode::ToTolerance { tolerance, .. } => Some(tolerance),
    };

    let zeros = |rk: &Rank| vec![vec![c(0.0); rk.ids.len()]; nf];
    let mut x: Vec<Vec<Vec<Counted>>> = ranks.iter().map(zeros).collect();
    let mut res: Vec<Vec<Vec<Counted>>> =
        rhs.iter().map(|v| vec![v.iter().map(|&a| c(a)).collect::<Vec<_>>(); nf]).collect();
    let mut z: Vec<Vec<Vec<Counted>>> = ranks.iter().map(zeros).collect();
    let mut w: Vec<Vec<Vec<Counted>>> = ranks.iter().map(zeros).collect();

    let precondition = |rk: &mut Rank, rv: &[Vec<Counted>], zv: &mut [Vec<Counted>]| {
        let m = rk.precond.clone();
        tallied(&mut rk.counts, || {
            for (zf, rf) in zv.iter_mut().zip(rv) {
                for ((zi, ri), mi) in zf.iter_mut().zip(rf).zip(&m) {
                    *zi = c(*mi) * *ri;
                }
            }
        });
    };
    let rz_rr = |ranks: &mut [Rank], res: &[Vec<Vec<Counted>>], z: &[Vec<Vec<Counted>>]| {
        let mut rz = vec![0.0; nf];
        let mut rr = vec![0.0; nf];
        for ((rk, rv), zv) in ranks.iter_mut().zip(res).zip(z) {
            let inv = rk.inv_mult.clone();
            tallied(&mut rk.counts, || {
                for f in 0..nf {
                    rz[f] += dot(&rv[f], &zv[f], &inv).0;
                    rr[f] += dot(&rv[f], &rv[f], &inv).0;
                }
            });
        }
        (rz, rr)
    };

    for (rk, (rv, zv)) in ranks.iter_mut().zip(res.iter().zip(z.iter_mut())) {
        precondition(rk, rv, zv);
    }
    if projects {
        project(&mut z, &mut ranks);
    }
    let (mut rz, rr0) = rz_rr(&mut ranks, &res, &z);
    let mut rr = rr0.clone();
    let mut p = z.clone();
    let converged = |rr: &[f64]| match tolerance {
        Some(tol) => rr.iter().zip(&rr0).all(|(a, b)| *a <= tol * tol * b),
        None => rr.iter().all(|&a| a == 0.0),
    };

    let mut iterations = 0;
    while iterations < budget && !converged(&rr) {
        for ((rk, pv), wv) in ranks.iter_mut().zip(&p).zip(w.iter_mut()) {
            let elements = rk.elements;
            tallied(&mut rk.counts, || {
                for f in 0..nf {
                    for e in 0..elements {
                        let range = e * ppe..(e + 1) * ppe;
                        let out = laplacian(&r, size, lambda, &pv[f][range.clone()]);
                        wv[f][range].copy_from_slice(&out);
                    }
                }
            });
        }
        dss(&mut w, &ranks);
        let mut pw = vec![0.0; nf];
        for ((rk, pv), wv) in ranks.iter_mut().zip(&p).zip(&w) {
            let inv = rk.inv_mult.clone();
            tallied(&mut rk.counts, || {
                for f in 0..nf {
                    pw[f] += dot(&pv[f], &wv[f], &inv).0;
                }
            });
        }
        for (rk, ((xv, rv), (pv, wv))) in ranks.iter_mut().zip(x.iter_mut().zip(res.iter_mut()).zip(p.iter().zip(&w))) {
            tallied(&mut rk.counts, || {
                for f in 0..nf {
                    let alpha = c(rz[f]) / c(pw[f]);
                    for ((xi, pi), (ri, wi)) in xv[f].iter_mut().zip(&pv[f]).zip(rv[f].iter_mut().zip(&wv[f])) {
                        *xi += alpha * *pi;
                        *ri -= alpha * *wi;
                    }
                }
            });
        }
        for (rk, (rv, zv)) in ranks.iter_mut().zip(res.iter().zip(z.iter_mut())) {
            precondition(rk, rv, zv);
        }
        if projects {
            project(&mut z, &mut ranks);
        }
        let (rz_new, rr_new) = rz_rr(&mut ranks, &res, &z);
        for (rk, (pv, zv)) in ranks.iter_mut().zip(p.iter_mut().zip(&z)) {
            tallied(&mut rk.counts, || {
                for f in 0..nf {
                    let beta = c(rz_new[f]) / c(rz[f]);
                    for (pi, zi) in pv[f].iter_mut().zip(&zv[f]) {
                        *pi = *zi + beta * *pi;
                    }
                }
            });
        }
        rz = rz_new;
        rr = rr_new;
        iterations += 1;
        if rz.iter().any(|&v| v == 0.0) {
            break;
        }
    }

    let relative_residual = rr
        .iter()
        .zip(&rr0)
        .map(|(a, b)| if *b > 0.0 { (a / b).sqrt() } else { 0.0 })
        .fold(0.0, f64::max);
    let mut solution = HashMap::new();
    for (rk, xv) in ranks.iter().zip(&x) {
        for (id, v) in rk.ids.iter().zip(&xv[0]) {
            solution.insert(*id, v.0);
        }
    }
    CgOutcome {
        counts: ranks.iter().map(|r| r.counts).collect(),
        iterations,
        relative_residual,
        solution,
    }
}
