//! The instrumented work unit: a Jacobi-preconditioned CG solve of the
//! Poisson/Helmholtz problem on the unit cube, distributed over ranks.
//!
//! Vectors live in redundant element-local storage. Each operator
//! application is followed by one gather-scatter; inner products weight
//! every local copy by its inverse multiplicity and are combined with one
//! all-reduce. The diagonal and the right-hand side are assembled
//! analytically, so the only neighbour traffic is one exchange per CG
//! iteration.
//!
//! Flop accounting charges the element operator, the vector updates, the
//! inner products and the scalar divisions. The gather-scatter additions,
//! the all-reduce additions, setup and error evaluation are not charged.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::partition::PartitionPlan;
use crate::transport::{loopback_transport, Transport, TransportCounters};

use super::case::CaseConfig;
use super::flops::FlopCounter;
use super::gather_scatter::GatherScatter;
use super::operators::{ElementOperator, ReferenceElement};
use super::SemError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Homogeneous Dirichlet on the whole outer boundary.
    Dirichlet,
    /// Natural boundary; `project_mean` removes the constant mode each
    /// iteration so the singular pure-Neumann Laplacian stays solvable.
    Neumann { project_mean: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationMode {
    /// Exactly `cg_iters_per_step` iterations.
    FixedBudget,
    /// Iterate until `||r|| < tolerance * ||r_0||`.
    ToTolerance { tolerance: f64, max_iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkUnitOptions {
    pub boundary: Boundary,
    /// Helmholtz coefficient; `0` gives the Poisson problem.
    pub lambda: f64,
    pub mode: IterationMode,
    /// Keep every local copy of the first field's solution in the report.
    pub collect_solution: bool,
}

impl Default for WorkUnitOptions {
    fn default() -> Self {
        Self {
            boundary: Boundary::Dirichlet,
            lambda: 0.0,
            mode: IterationMode::FixedBudget,
            collect_solution: false,
        }
    }
}

impl WorkUnitOptions {
    pub fn to_tolerance(tolerance: f64, max_iterations: usize) -> Self {
        Self {
            mode: IterationMode::ToTolerance {
                tolerance,
                max_iterations,
            },
            ..Self::default()
        }
    }

    fn projects(&self) -> bool {
        matches!(self.boundary, Boundary::Neumann { project_mean: true })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankStepReport {
    pub rank: usize,
    pub flops: FlopCounter,
    pub words_sent: u64,
    pub words_received: u64,
    pub messages_sent: u64,
    pub reductions: u64,
    pub wall_seconds: f64,
    pub transport_seconds: f64,
    /// Largest nodal deviation from the manufactured solution on this rank.
    pub max_error: f64,
    /// `(global node id, value)` for every local copy, when requested.
    pub solution: Option<Vec<(u64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub iterations: usize,
    /// Largest `||r|| / ||r_0||` over the fields.
    pub relative_residual: f64,
    pub max_error: f64,
    pub ranks: Vec<RankStepReport>,
}

impl StepReport {
    pub fn total_flops(&self) -> u64 {
        self.ranks.iter().map(|r| r.flops.total()).sum()
    }

    pub fn total_words_sent(&self) -> u64 {
        self.ranks.iter().map(|r| r.words_sent).sum()
    }

    pub fn wall_seconds(&self) -> f64 {
        self.ranks.iter().map(|r| r.wall_seconds).fold(0.0, f64::max)
    }
}

/// Result of [`run_work_unit`]: per-step reports and final transport counters.
#[derive(Debug, Clone)]
pub struct WorkUnitRun {
    pub steps: Vec<StepReport>,
    pub counters: Vec<TransportCounters>,
}

fn manufactured(boundary: Boundary, x: [f64; 3]) -> f64 {
    match boundary {
        Boundary::Dirichlet => (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin(),
        Boundary::Neumann { .. } => (PI * x[0]).cos() * (PI * x[1]).cos() * (PI * x[2]).cos(),
    }
}

struct RankWorker {
    options: WorkUnitOptions,
    fields: usize,
    ppe: usize,
    elements: usize,
    global_unique: f64,
    gs: GatherScatter,
    op: ElementOperator,
    inv_mult: Vec<f64>,
    precond: Vec<f64>,
    rhs: Vec<f64>,
    exact: Vec<f64>,
}

impl RankWorker {
    fn new<T: Transport + ?Sized>(
        config: &CaseConfig,
        plan: &PartitionPlan,
        options: WorkUnitOptions,
        transport: &mut T,
    ) -> Result<Self, SemError> {
        let rank = transport.rank();
        let reference = ReferenceElement::new(config.degree)?;
        let op = ElementOperator::new(reference.clone(), config.element_size(), options.lambda)?;
        let gs = GatherScatter::new(config, plan, rank);
        let n = config.degree;
        let h = config.element_size();
        let nodes = [0, 1, 2].map(|d| reference.basis(super::Axis::from_index(d).unwrap()).nodes().to_vec());

        let dirichlet = options.boundary == Boundary::Dirichlet;
        let on_boundary = gs.boundary_mask();
        let inv_mult: Vec<f64> = gs.multiplicity().iter().map(|&m| 1.0 / m as f64).collect();
        let diag = gs.assemble_uniform(&op.diagonal());
        let mass = gs.assemble_uniform(op.mass());

        let coord = |g: u32, d: usize| {
            let g = g as usize;
            let (e, a) = if g == config.elements[d] * n[d] { (config.elements[d] - 1, n[d]) } else { (g / n[d], g % n[d]) };
            (e as f64 + (nodes[d][a] + 1.0) / 2.0) * h[d]
        };
        let mut precond = Vec::with_capacity(gs.local_len());
        let mut rhs = Vec::with_capacity(gs.local_len());
        let mut exact = Vec::with_capacity(gs.local_len());
        let forcing = 3.0 * PI * PI + options.lambda;
        for (p, c) in gs.local_coords().iter().enumerate() {
            let x = [coord(c[0], 0), coord(c[1], 1), coord(c[2], 2)];
            let u = manufactured(options.boundary, x);
            let masked = dirichlet && on_boundary[p];
            exact.push(u);
            precond.push(if masked { 0.0 } else { 1.0 / diag[p] });
            rhs.push(if masked { 0.0 } else { mass[p] * forcing * u });
        }

        let global_unique = (config.elements[0] * n[0] + 1) as f64
            * (config.elements[1] * n[1] + 1) as f64
            * (config.elements[2] * n[2] + 1) as f64;
        let mut worker = Self {
            options,
            fields: config.fields,
            ppe: config.points_per_element(),
            elements: plan.rank_elements[rank].len(),
            global_unique,
            gs,
            op,
            inv_mult,
            precond,
            rhs,
            exact,
        };
        if options.projects() {
            let mut b = vec![std::mem::take(&mut worker.rhs)];
            let mut scratch = FlopCounter::new();
            worker.project(&mut b, transport, &mut scratch)?;
            worker.rhs = b.pop().expect("one field");
        }
        Ok(worker)
    }

    /// Weighted inner products `sum u_i v_i / mult_i`, one per field pair.
    fn local_dot(&self, u: &[f64], v: &[f64], counter: &mut FlopCounter) -> f64 {
        let mut acc = 0.0;
        for ((a, b), w) in u.iter().zip(v).zip(&self.inv_mult) {
            acc += a * b * w;
        }
        counter.mul(2 * u.len() as u64);
        counter.add(u.len() as u64);
        acc
    }

    /// Removes the global nodal mean from every field.
    fn project<T: Transport + ?Sized>(
        &self,
        v: &mut [Vec<f64>],
        transport: &mut T,
        counter: &mut FlopCounter,
    ) -> Result<(), SemError> {
        let t = self.inv_mult.len() as u64;
        let sums: Vec<f64> = v
            .iter()
            .map(|f| {
                let mut acc = 0.0;
                for (a, w) in f.iter().zip(&self.inv_mult) {
                    acc += a * w;
                }
                acc
            })
            .collect();
        counter.mul(t * v.len() as u64);
        counter.add(t * v.len() as u64);
        let sums = transport.all_reduce_sum(&sums)?;
        for (f, s) in v.iter_mut().zip(sums) {
            let mean = s / self.global_unique;
            for a in f.iter_mut() {
                *a -= mean;
            }
        }
        counter.div(v.len() as u64);
        counter.add(t * v.len() as u64);
        Ok(())
    }

    fn precondition(&self, r: &[Vec<f64>], z: &mut [Vec<f64>], counter: &mut FlopCounter) {
        for (zf, rf) in z.iter_mut().zip(r) {
            for ((zi, ri), m) in zf.iter_mut().zip(rf).zip(&self.precond) {
                *zi = m * ri;
            }
        }
        counter.mul((self.inv_mult.len() * r.len()) as u64);
    }

    fn step<T: Transport + ?Sized>(
        &mut self,
        budget: usize,
        transport: &mut T,
        counter: &mut FlopCounter,
    ) -> Result<(usize, f64, Vec<Vec<f64>>), SemError> {
        let nf = self.fields;
        let t = self.inv_mult.len();
        let mask = self.options.boundary == Boundary::Dirichlet;
        let tolerance = match self.options.mode {
            IterationMode::FixedBudget => None,
            IterationMode::ToTolerance { tolerance, .. } => Some(tolerance),
        };

        let mut x = vec![vec![0.0; t]; nf];
        let mut r = vec![self.rhs.clone(); nf];
        let mut z = vec![vec![0.0; t]; nf];
        let mut w = vec![vec![0.0; t]; nf];
        self.precondition(&r, &mut z, counter);
        if self.options.projects() {
            self.project(&mut z, transport, counter)?;
        }
        let mut local = Vec::with_capacity(2 * nf);
        for f in 0..nf {
            local.push(self.local_dot(&r[f], &z[f], counter));
            local.push(self.local_dot(&r[f], &r[f], counter));
        }
        let reduced = transport.all_reduce_sum(&local)?;
        let mut rz: Vec<f64> = (0..nf).map(|f| reduced[2 * f]).collect();
        let rr0: Vec<f64> = (0..nf).map(|f| reduced[2 * f + 1]).collect();
        let mut rr = rr0.clone();
        let mut p = z.clone();

        let converged = |rr: &[f64]| match tolerance {
            Some(tol) => rr.iter().zip(&rr0).all(|(a, b)| *a <= tol * tol * b),
            None => rr.iter().all(|&a| a == 0.0),
        };

        let mut iterations = 0;
        while iterations < budget && !converged(&rr) {
            for f in 0..nf {
                for e in 0..self.elements {
                    let range = e * self.ppe..(e + 1) * self.ppe;
                    self.op.apply(&p[f][range.clone()], &mut w[f][range], counter);
                }
            }
            self.gs.apply(&mut w, mask, transport)?;

            let local: Vec<f64> = (0..nf).map(|f| self.local_dot(&p[f], &w[f], counter)).collect();
            let pw = transport.all_reduce_sum(&local)?;
            for f in 0..nf {
                if !(pw[f] > 0.0) {
                    return Err(SemError::Divergence(format!(
                        "non-positive curvature p.Ap = {} at iteration {}",
                        pw[f], iterations
                    )));
                }
                let alpha = rz[f] / pw[f];
                for ((xi, pi), (ri, wi)) in x[f].iter_mut().zip(&p[f]).zip(r[f].iter_mut().zip(&w[f])) {
                    *xi += alpha * pi;
                    *ri -= alpha * wi;
                }
            }
            counter.div(nf as u64);
            counter.mul(2 * (t * nf) as u64);
            counter.add(2 * (t * nf) as u64);

            self.precondition(&r, &mut z, counter);
            if self.options.projects() {
                self.project(&mut z, transport, counter)?;
            }
            let mut local = Vec::with_capacity(2 * nf);
            for f in 0..nf {
                local.push(self.local_dot(&r[f], &z[f], counter));
                local.push(self.local_dot(&r[f], &r[f], counter));
            }
            let reduced = transport.all_reduce_sum(&local)?;
            for f in 0..nf {
                let rz_new = reduced[2 * f];
                rr[f] = reduced[2 * f + 1];
                if !rr[f].is_finite() {
                    return Err(SemError::Divergence(format!("residual is not finite at iteration {iterations}")));
                }
                let beta = rz_new / rz[f];
                rz[f] = rz_new;
                for (pi, zi) in p[f].iter_mut().zip(&z[f]) {
                    *pi = zi + beta * *pi;
                }
            }
            counter.div(nf as u64);
            counter.mul((t * nf) as u64);
            counter.add((t * nf) as u64);
            iterations += 1;
            // an exactly zero residual has nothing left to reduce
            if rz.iter().any(|&v| v == 0.0) {
                break;
            }
        }

        let relative = rr
            .iter()
            .zip(&rr0)
            .map(|(a, b)| if *b > 0.0 { (a / b).sqrt() } else { 0.0 })
            .fold(0.0, f64::max);
        Ok((iterations, relative, x))
    }
}

/// Runs `config.steps` steps of the work unit on the given transports (one
/// per rank, index = rank). Every step restarts the solve from zero.
pub fn execute_work_unit<T: Transport + Send>(
    config: &CaseConfig,
    plan: &PartitionPlan,
    transports: Vec<T>,
    options: WorkUnitOptions,
) -> Result<(Vec<StepReport>, Vec<TransportCounters>), SemError> {
    config.validate()?;
    if transports.len() != plan.ranks {
        return Err(SemError::InvalidConfig(format!(
            "{} transports for a {}-rank partition",
            transports.len(),
            plan.ranks
        )));
    }
    if plan.elements != config.elements {
        return Err(SemError::InvalidConfig("partition was built for a different mesh".into()));
    }
    if options.boundary == (Boundary::Neumann { project_mean: false }) && options.lambda == 0.0 {
        return Err(SemError::Divergence(
            "pure Neumann Laplacian is singular; enable mean projection or set lambda > 0".into(),
        ));
    }
    let budget = match options.mode {
        IterationMode::FixedBudget => config.cg_iters_per_step,
        IterationMode::ToTolerance { max_iterations, .. } => max_iterations,
    };

    type RankResult = Result<(Vec<(usize, f64, RankStepReport)>, TransportCounters), SemError>;
    let results: Vec<RankResult> = std::thread::scope(|s| {
        let handles: Vec<_> = transports
            .into_iter()
            .map(|mut tr| {
                s.spawn(move || -> RankResult {
                    let mut worker = RankWorker::new(config, plan, options, &mut tr)?;
                    let ids = options.collect_solution.then(|| worker.gs.global_ids());
                    let mut out = Vec::with_capacity(config.steps);
                    for _ in 0..config.steps {
                        tr.barrier();
                        let before = tr.counters().clone();
                        let busy = tr.time_in_transport();
                        let start = Instant::now();
                        let mut counter = FlopCounter::new();
                        let (iters, relative, x) = worker.step(budget, &mut tr, &mut counter)?;
                        let wall = start.elapsed().as_secs_f64();
                        let after = tr.counters();
                        let max_error = x[0]
                            .iter()
                            .zip(&worker.exact)
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0, f64::max);
                        let report = RankStepReport {
                            rank: tr.rank(),
                            flops: counter,
                            words_sent: after.total_words_sent() - before.total_words_sent(),
                            words_received: after.total_words_received() - before.total_words_received(),
                            messages_sent: after.messages_sent - before.messages_sent,
                            reductions: after.reductions - before.reductions,
                            wall_seconds: wall,
                            transport_seconds: (tr.time_in_transport() - busy).as_secs_f64(),
                            max_error,
                            solution: ids.as_ref().map(|ids| ids.iter().copied().zip(x[0].iter().copied()).collect()),
                        };
                        out.push((iters, relative, report));
                    }
                    tr.barrier();
                    Ok((out, tr.counters().clone()))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or(Err(SemError::WorkerPanic)))
            .collect()
    });

    let mut per_rank = Vec::with_capacity(results.len());
    let mut counters = Vec::with_capacity(results.len());
    for r in results {
        let (steps, c) = r?;
        per_rank.push(steps);
        counters.push(c);
    }
    let mut reports = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (iterations, relative_residual, _) = per_rank[0][step];
        let ranks: Vec<RankStepReport> = per_rank.iter().map(|s| s[step].2.clone()).collect();
        let max_error = ranks.iter().map(|r| r.max_error).fold(0.0, f64::max);
        reports.push(StepReport {
            step,
            iterations,
            relative_residual,
            max_error,
            ranks,
        });
    }
    Ok((reports, counters))
}

/// One step of the work unit over the given transports.
pub fn cg_work_unit<T: Transport + Send>(
    config: &CaseConfig,
    plan: &PartitionPlan,
    transports: Vec<T>,
    options: WorkUnitOptions,
) -> Result<StepReport, SemError> {
    let one = config.with_steps(1);
    let (mut steps, _) = execute_work_unit(&one, plan, transports, options)?;
    Ok(steps.pop().expect("one step"))
}

/// Runs the work unit on a fresh loopback transport group.
pub fn run_work_unit(
    config: &CaseConfig,
    plan: &PartitionPlan,
    options: WorkUnitOptions,
    seed: Option<u64>,
) -> Result<WorkUnitRun, SemError> {
    let (steps, counters) = execute_work_unit(config, plan, loopback_transport(plan.ranks, seed), options)?;
    Ok(WorkUnitRun { steps, counters })
}

/// Flops each rank performs in one step of `iterations` CG iterations,
/// derived from the problem shape alone.
pub fn work_unit_flops(
    config: &CaseConfig,
    plan: &PartitionPlan,
    options: &WorkUnitOptions,
    iterations: u64,
) -> Result<Vec<FlopCounter>, SemError> {
    let reference = ReferenceElement::new(config.degree)?;
    let op = ElementOperator::new(reference, config.element_size(), options.lambda)?;
    let per_element = op.flops_per_apply();
    let ppe = config.points_per_element() as u64;
    let nf = config.fields as u64;
    let projects = options.projects();
    Ok(plan
        .rank_elements
        .iter()
        .map(|els| {
            let ne = els.len() as u64;
            let t = ne * ppe * nf;
            let mut c = FlopCounter::new();
            // z = M r, then r.z and r.r
            c.mul(t + 4 * t);
            c.add(2 * t);
            let mut iter = FlopCounter::new();
            for _ in 0..ne * nf {
                iter += per_element;
            }
            // p.w, x and r updates, z = M r, r.z and r.r, p update
            iter.mul(2 * t + 2 * t + t + 4 * t + t);
            iter.add(t + 2 * t + 2 * t + t);
            iter.div(2 * nf);
            if projects {
                c.mul(t);
                c.add(2 * t);
                c.div(nf);
                iter.mul(t);
                iter.add(2 * t);
                iter.div(nf);
            }
            for _ in 0..iterations {
                c += iter;
            }
            c
        })
        .collect())
}
