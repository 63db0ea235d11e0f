//! Benchmark campaigns over the work unit: strong scaling, weak scaling,
//! degree sweeps and fixed wall-clock budgets.
//!
//! In simulated mode every number follows from the partition and the
//! machine profile through [`predict_time`]; nothing is executed. In
//! executed mode the work unit runs on a loopback transport and the
//! record holds measured wall clocks and real counters.

mod records;

pub use records::{read_summary_csv, records_to_csv, records_to_json, summary_table, CsvRow};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gamma::{gamma_from_times, predict_time, GammaError, MachineProfile, TimeDecomposition, DEFAULT_WINDOW_SECONDS};
use crate::partition::{compute_gamma_a, partition_elements, words_per_step, AppProfile, PartitionError, PartitionPlan};
use crate::sem::{run_work_unit, work_unit_flops, CaseConfig, SemError, WorkUnitOptions};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{context}: {source}")]
    Partition {
        context: String,
        #[source]
        source: PartitionError,
    },
    #[error("{context}: {source}")]
    Kernel {
        context: String,
        #[source]
        source: SemError,
    },
    #[error(transparent)]
    Model(#[from] GammaError),
    #[error("invalid campaign: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulated,
    Executed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignKind {
    Strong,
    Weak,
    DegreeSweep,
    TimeBudget,
}

/// One point of a weak-scaling sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub elements: [usize; 3],
    pub ranks: usize,
}

pub const DEFAULT_JITTER: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub name: String,
    pub kind: CampaignKind,
    pub case: CaseConfig,
    pub machine: MachineProfile,
    pub mode: Mode,
    pub seed: u64,
    /// Rank counts (strong); the first entry is used by degree sweeps and budgets.
    pub ranks: Vec<usize>,
    /// Weak-scaling points.
    pub scale: Vec<ScalePoint>,
    /// Degree-sweep values.
    pub degrees: Vec<usize>,
    /// Wall-clock budget for time-budget campaigns [s].
    pub budget_seconds: Option<f64>,
    /// Half-width of the uniform noise added to usage samples.
    pub jitter: f64,
    pub window_seconds: f64,
    pub work: WorkUnitOptions,
}

impl CampaignSpec {
    pub fn new(name: &str, kind: CampaignKind, case: CaseConfig, machine: MachineProfile) -> Self {
        Self {
            name: name.to_string(),
            kind,
            case,
            machine,
            mode: Mode::Simulated,
            seed: 0,
            ranks: vec![1],
            scale: Vec::new(),
            degrees: Vec::new(),
            budget_seconds: None,
            jitter: DEFAULT_JITTER,
            window_seconds: DEFAULT_WINDOW_SECONDS,
            work: WorkUnitOptions::default(),
        }
    }

    pub fn with_ranks(mut self, ranks: Vec<usize>) -> Self {
        self.ranks = ranks;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_scale(mut self, scale: Vec<ScalePoint>) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_degrees(mut self, degrees: Vec<usize>) -> Self {
        self.degrees = degrees;
        self
    }

    pub fn with_budget(mut self, seconds: f64) -> Self {
        self.budget_seconds = Some(seconds);
        self
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(format!("{}: {m}", self.name)));
        self.machine.validate()?;
        if let Err(e) = self.case.validate() {
            return bad(e.to_string());
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return bad(format!("jitter must lie in [0, 1], got {}", self.jitter));
        }
        if !(self.window_seconds > 0.0) {
            return bad(format!("window length must be positive, got {}", self.window_seconds));
        }
        match self.kind {
            CampaignKind::Strong | CampaignKind::DegreeSweep | CampaignKind::TimeBudget if self.ranks.is_empty() => {
                bad("no rank counts given".into())
            }
            CampaignKind::Weak if self.scale.is_empty() => bad("no scale points given".into()),
            CampaignKind::DegreeSweep if self.degrees.is_empty() => bad("no degrees given".into()),
            CampaignKind::TimeBudget => match self.budget_seconds {
                Some(b) if b > 0.0 && b.is_finite() => Ok(()),
                other => bad(format!("budget must be positive, got {other:?}")),
            },
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub dims: [usize; 3],
    pub cut_faces: usize,
    pub max_neighbors: usize,
    pub min_elements_per_rank: usize,
    pub max_elements_per_rank: usize,
}

impl PartitionSummary {
    fn of(plan: &PartitionPlan) -> Self {
        let sizes = plan.rank_elements.iter().map(|r| r.len());
        Self {
            dims: plan.dims,
            cut_faces: plan.cut_faces.len(),
            max_neighbors: plan.max_neighbor_count(),
            min_elements_per_rank: sizes.clone().min().unwrap_or(0),
            max_elements_per_rank: sizes.max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub iterations: usize,
    /// `T = T_P + T_C + T_L` [s].
    pub walltime: f64,
    pub compute_time: f64,
    pub communication_time: f64,
    pub latency_time: f64,
    pub flops: u64,
    /// Words sent by all ranks.
    pub words: u64,
    /// Point-to-point messages sent by all ranks.
    pub messages: u64,
    /// All-reduce operations per rank.
    pub reductions: u64,
}

impl StepRecord {
    fn times(&self) -> TimeDecomposition {
        TimeDecomposition {
            total: self.walltime,
            compute: self.compute_time,
            communication: self.communication_time,
            latency: self.latency_time,
        }
    }
}

/// Aggregates of the reference step of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub walltime: f64,
    pub compute_time: f64,
    pub communication_time: f64,
    pub latency_time: f64,
    pub flops: u64,
    pub words: u64,
    pub messages: u64,
    /// Sustained aggregate rate `flops / T` [GFlop/s].
    pub gflops: f64,
    /// Sustained rate per rank [MFlop/s].
    pub mflops_per_rank: f64,
    /// Rate per rank while computing, `flops / (P T_P)` [MFlop/s].
    pub compute_mflops_per_rank: f64,
    #[serde(with = "crate::serde_ratio")]
    pub gamma: f64,
    #[serde(with = "crate::serde_ratio")]
    pub gamma_a: f64,
    pub efficiency: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub campaign: String,
    pub kind: CampaignKind,
    pub mode: Mode,
    pub seed: u64,
    pub config: CaseConfig,
    pub ranks: usize,
    pub partition: PartitionSummary,
    pub machine: MachineProfile,
    pub steps: Vec<StepRecord>,
    pub steps_completed: usize,
    /// Index into `steps` of the step the summary describes.
    pub reference_step: usize,
    pub summary: RunSummary,
    pub window_seconds: f64,
    /// Per-window efficiency samples.
    pub usage_samples: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Index of the canonical step: the fourth, skipping warm-up, or the last
/// one of shorter runs.
pub fn reference_step_index(steps: usize) -> usize {
    steps.saturating_sub(1).min(3)
}

/// Messages on one rank's critical path per step: one per face neighbour
/// and exchange, plus a reduce and a broadcast for every all-reduce.
pub fn latency_messages_per_step(plan: &PartitionPlan, exchanges: u64, reductions: u64) -> u64 {
    if plan.ranks == 1 {
        0
    } else {
        exchanges * plan.max_neighbor_count() as u64 + 2 * reductions
    }
}

/// All-reduces per step of the work unit with `iterations` CG iterations.
pub fn reductions_per_step(options: &WorkUnitOptions, iterations: u64) -> u64 {
    let per_iter = if matches!(options.boundary, crate::sem::Boundary::Neumann { project_mean: true }) {
        3
    } else {
        2
    };
    let setup = if per_iter == 3 { 2 } else { 1 };
    setup + per_iter * iterations
}

fn partition(config: &CaseConfig, ranks: usize, spec: &CampaignSpec) -> Result<PartitionPlan, HarnessError> {
    partition_elements(config, ranks).map_err(|source| HarnessError::Partition {
        context: format!("campaign {:?}, run with P={ranks}", spec.name),
        source,
    })
}

fn kernel_err(spec: &CampaignSpec, ranks: usize) -> impl Fn(SemError) -> HarnessError + '_ {
    move |source| HarnessError::Kernel {
        context: format!("campaign {:?}, run with P={ranks}", spec.name),
        source,
    }
}

/// Predicted step of the work unit on `machine`.
pub fn simulate_step(
    config: &CaseConfig,
    plan: &PartitionPlan,
    machine: &MachineProfile,
    options: &WorkUnitOptions,
) -> Result<(StepRecord, AppProfile), HarnessError> {
    let k = config.cg_iters_per_step as u64;
    let flops: u64 = work_unit_flops(config, plan, options, k)
        .map_err(|source| HarnessError::Kernel {
            context: "flop model".into(),
            source,
        })?
        .iter()
        .map(|c| c.total())
        .sum();
    let words = words_per_step(plan, config, k);
    let app = AppProfile::new(flops, words).map_err(|source| HarnessError::Partition {
        context: "application profile".into(),
        source,
    })?;
    let reductions = if plan.ranks > 1 { reductions_per_step(options, k) } else { 0 };
    let t = predict_time(machine, &app, plan.ranks, latency_messages_per_step(plan, k, reductions))?;
    let messages = k * (0..plan.ranks).map(|r| plan.neighbor_count(r) as u64).sum::<u64>();
    Ok((
        StepRecord {
            step: 0,
            iterations: config.cg_iters_per_step,
            walltime: t.total,
            compute_time: t.compute,
            communication_time: t.communication,
            latency_time: t.latency,
            flops,
            words,
            messages,
            reductions: reductions_per_step(options, k),
        },
        app,
    ))
}

/// Noisy per-window efficiency samples over `total_seconds` of running.
fn usage_samples(efficiency: f64, total_seconds: f64, spec: &CampaignSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if !(total_seconds > 0.0) {
        return Vec::new();
    }
    let windows = (total_seconds / spec.window_seconds).ceil().max(1.0) as usize;
    (0..windows)
        .map(|_| {
            let noise = if spec.jitter > 0.0 {
                rng.gen_range(-spec.jitter..=spec.jitter)
            } else {
                0.0
            };
            (efficiency + noise).clamp(0.0, 1.0)
        })
        .collect()
}

fn summarize(steps: &[StepRecord], ranks: usize, reference: usize) -> RunSummary {
    let s = &steps[reference];
    let gamma = gamma_from_times(&s.times()).value();
    let efficiency = if s.walltime > 0.0 { s.compute_time / s.walltime } else { 1.0 };
    let p = ranks as f64;
    RunSummary {
        walltime: s.walltime,
        compute_time: s.compute_time,
        communication_time: s.communication_time,
        latency_time: s.latency_time,
        flops: s.flops,
        words: s.words,
        messages: s.messages,
        gflops: s.flops as f64 / s.walltime / 1e9,
        mflops_per_rank: s.flops as f64 / p / s.walltime / 1e6,
        compute_mflops_per_rank: s.flops as f64 / p / s.compute_time / 1e6,
        gamma,
        gamma_a: compute_gamma_a(s.flops, s.words).unwrap_or(f64::NAN),
        efficiency,
        speedup: efficiency * p,
    }
}

/// Runs one configuration in the spec's mode and returns its record.
/// `index` decorrelates the noise of the records within one campaign.
fn run_point(
    spec: &CampaignSpec,
    config: &CaseConfig,
    ranks: usize,
    machine: &MachineProfile,
    index: u64,
) -> Result<RunRecord, HarnessError> {
    let plan = partition(config, ranks, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    let steps: Vec<StepRecord> = match spec.mode {
        Mode::Simulated => {
            let (step, _) = simulate_step(config, &plan, machine, &spec.work)?;
            (0..config.steps).map(|i| StepRecord { step: i, ..step.clone() }).collect()
        }
        Mode::Executed => execute_steps(spec, config, &plan)?,
    };
    let reference = reference_step_index(steps.len());
    let summary = summarize(&steps, ranks, reference);
    let total: f64 = steps.iter().map(|s| s.walltime).sum();
    let usage = match spec.mode {
        Mode::Simulated => usage_samples(summary.efficiency, total, spec, &mut rng),
        Mode::Executed => steps.iter().map(|s| if s.walltime > 0.0 { s.compute_time / s.walltime } else { 1.0 }).collect(),
    };
    Ok(RunRecord {
        campaign: spec.name.clone(),
        kind: spec.kind,
        mode: spec.mode,
        seed: spec.seed,
        config: *config,
        ranks,
        partition: PartitionSummary::of(&plan),
        machine: machine.clone(),
        steps_completed: steps.len(),
        steps,
        reference_step: reference,
        summary,
        window_seconds: spec.window_seconds,
        usage_samples: usage,
        warnings: Vec::new(),
    })
}

/// Runs the work unit for real and converts the measured steps.
fn execute_steps(spec: &CampaignSpec, config: &CaseConfig, plan: &PartitionPlan) -> Result<Vec<StepRecord>, HarnessError> {
    let run = run_work_unit(config, plan, spec.work, Some(spec.seed)).map_err(kernel_err(spec, plan.ranks))?;
    Ok(run
        .steps
        .iter()
        .map(|s| {
            let wall = s.wall_seconds();
            let comm = s.ranks.iter().map(|r| r.transport_seconds).fold(0.0, f64::max).min(wall);
            StepRecord {
                step: s.step,
                iterations: s.iterations,
                walltime: wall,
                compute_time: wall - comm,
                communication_time: comm,
                latency_time: 0.0,
                flops: s.total_flops(),
                words: s.total_words_sent(),
                messages: s.ranks.iter().map(|r| r.messages_sent).sum(),
                reductions: s.ranks.first().map_or(0, |r| r.reductions),
            }
        })
        .collect())
}

/// Fixed problem size, growing rank count. Efficiency is `T_1 / (P T_P)`
/// against the single-rank run.
pub fn run_strong_scaling(spec: &CampaignSpec) -> Result<Vec<RunRecord>, HarnessError> {
    spec.validate()?;
    let mut records = Vec::with_capacity(spec.ranks.len());
    for (i, &p) in spec.ranks.iter().enumerate() {
        records.push(run_point(spec, &spec.case, p, &spec.machine, i as u64)?);
    }
    let t1 = match records.iter().find(|r| r.ranks == 1) {
        Some(r) => r.summary.walltime,
        None => run_point(spec, &spec.case, 1, &spec.machine, u64::MAX)?.summary.walltime,
    };
    for r in records.iter_mut() {
        let p = r.ranks as f64;
        r.summary.speedup = t1 / r.summary.walltime;
        r.summary.efficiency = r.summary.speedup / p;
        // S = E P by construction
        r.summary.speedup = r.summary.efficiency * p;
    }
    Ok(records)
}

/// Problem size grows with the rank count at a constant number of elements
/// per rank.
pub fn run_weak_scaling(spec: &CampaignSpec) -> Result<Vec<RunRecord>, HarnessError> {
    spec.validate()?;
    let mut per_rank = None;
    let mut records = Vec::with_capacity(spec.scale.len());
    for (i, point) in spec.scale.iter().enumerate() {
        let config = spec.case.with_elements(point.elements);
        let plan = partition(&config, point.ranks, spec)?;
        let sizes: Vec<usize> = plan.rank_elements.iter().map(|r| r.len()).collect();
        let load = sizes[0];
        if sizes.iter().any(|&s| s != load) {
            return Err(HarnessError::InvalidSpec(format!(
                "{}: {:?} elements on {} ranks do not split evenly",
                spec.name, point.elements, point.ranks
            )));
        }
        match per_rank {
            None => per_rank = Some(load),
            Some(l) if l != load => {
                return Err(HarnessError::InvalidSpec(format!(
                    "{}: weak scaling needs a constant load per rank, got {l} and {load} elements",
                    spec.name
                )))
            }
            _ => {}
        }
        records.push(run_point(spec, &config, point.ranks, &spec.machine, i as u64)?);
    }
    Ok(records)
}

/// Fixed mesh and rank count, varying polynomial degree. The compute rate
/// comes from the machine's degree model when it has one.
pub fn run_degree_sweep(spec: &CampaignSpec) -> Result<Vec<RunRecord>, HarnessError> {
    spec.validate()?;
    let ranks = spec.ranks[0];
    let mut records = Vec::with_capacity(spec.degrees.len());
    for (i, &n) in spec.degrees.iter().enumerate() {
        let config = spec.case.with_degree(n);
        config.validate().map_err(kernel_err(spec, ranks))?;
        let machine = MachineProfile {
            core_rate_mflops: spec.machine.rate_for_degree(n),
            ..spec.machine.clone()
        };
        records.push(run_point(spec, &config, ranks, &machine, i as u64)?);
    }
    Ok(records)
}

/// Upper bound on the steps of one time-budget record.
pub const MAX_BUDGET_STEPS: usize = 1_000_000;

/// Steps that fit into the wall-clock budget, with per-window usage samples.
pub fn run_time_budget(spec: &CampaignSpec) -> Result<RunRecord, HarnessError> {
    spec.validate()?;
    let budget = spec.budget_seconds.expect("validated");
    let ranks = spec.ranks[0];
    let one_step = spec.case.with_steps(1);
    let mut record = run_point(spec, &one_step, ranks, &spec.machine, 0)?;
    let step = record.steps[0].clone();
    let mut steps = Vec::new();
    match spec.mode {
        Mode::Simulated => {
            // tolerate rounding in budget / T for exact multiples
            let n = (budget / step.walltime * (1.0 + 1e-12)).floor();
            if n > MAX_BUDGET_STEPS as f64 {
                return Err(HarnessError::InvalidSpec(format!(
                    "{}: budget allows {n} steps, more than the {MAX_BUDGET_STEPS} a record holds",
                    spec.name
                )));
            }
            let n = n as usize;
            steps.extend((0..n).map(|i| StepRecord { step: i, ..step.clone() }));
        }
        Mode::Executed => {
            let mut elapsed = 0.0;
            let mut last = step;
            while elapsed + last.walltime <= budget {
                elapsed += last.walltime;
                steps.push(StepRecord { step: steps.len(), ..last.clone() });
                let plan = partition(&one_step, ranks, spec)?;
                last = execute_steps(spec, &one_step, &plan)?.remove(0);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    record.warnings.clear();
    if steps.is_empty() {
        record.warnings.push(format!(
            "budget of {budget} s is shorter than one step ({} s)",
            record.steps[0].walltime
        ));
        record.usage_samples = Vec::new();
    } else {
        let total: f64 = steps.iter().map(|s| s.walltime).sum();
        record.usage_samples = match spec.mode {
            Mode::Simulated => usage_samples(record.summary.efficiency, total, spec, &mut rng),
            Mode::Executed => steps.iter().map(|s| s.compute_time / s.walltime).collect(),
        };
        record.reference_step = reference_step_index(steps.len());
        record.summary = summarize(&steps, ranks, record.reference_step);
    }
    record.config = spec.case.with_steps(steps.len().max(1));
    record.steps_completed = steps.len();
    record.steps = steps;
    Ok(record)
}

/// Dispatches on the campaign kind.
pub fn run_campaign(spec: &CampaignSpec) -> Result<Vec<RunRecord>, HarnessError> {
    match spec.kind {
        CampaignKind::Strong => run_strong_scaling(spec),
        CampaignKind::Weak => run_weak_scaling(spec),
        CampaignKind::DegreeSweep => run_degree_sweep(spec),
        CampaignKind::TimeBudget => run_time_budget(spec).map(|r| vec![r]),
    }
}

/// CG iterations per step that make one step of the `8^3`, degree-8 case
/// perform about 155.4 GFlop.
pub const REFERENCE_ITERATIONS: usize = 3278;
/// Single-rank step time of the fixed-size reference run [s].
pub const REFERENCE_SINGLE_RANK_SECONDS: f64 = 243.59;
/// Effective per-rank link bandwidth fitted to the reference efficiencies [MB/s].
pub const REFERENCE_LINK_MBS: f64 = 51.44;
/// Per-message latency fitted alongside [`REFERENCE_LINK_MBS`] [s].
pub const REFERENCE_LATENCY_S: f64 = 70.9e-6;

/// The `8^3`, degree-8 strong-scaling case (four steps) and a GbE Xeon
/// profile whose compute rate makes the single-rank step last 243.59 s.
pub fn fixed_size_reference() -> (CaseConfig, MachineProfile) {
    let case = CaseConfig::cube(8, 8).with_iterations(REFERENCE_ITERATIONS).with_steps(4);
    let plan = partition_elements(&case, 1).expect("one rank always fits");
    let flops: u64 = work_unit_flops(&case, &plan, &WorkUnitOptions::default(), REFERENCE_ITERATIONS as u64)
        .expect("valid reference case")
        .iter()
        .map(|c| c.total())
        .sum();
    let rate = flops as f64 / REFERENCE_SINGLE_RANK_SECONDS / 1e6;
    let machine = MachineProfile::new("pleiades2-fixed-size", rate, REFERENCE_LINK_MBS, REFERENCE_LATENCY_S);
    (case, machine)
}
