//! JSON and CSV forms of run records.

use serde::{Deserialize, Serialize};

use super::{CampaignKind, Mode, RunRecord};

/// One flat CSV row: a step of a run, or the run's summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub campaign: String,
    pub kind: CampaignKind,
    pub mode: Mode,
    pub seed: u64,
    pub ranks: usize,
    pub elements_x: usize,
    pub elements_y: usize,
    pub elements_z: usize,
    pub degree_x: usize,
    pub degree_y: usize,
    pub degree_z: usize,
    pub fields: usize,
    /// `step` or `summary`.
    pub row: String,
    pub step: usize,
    pub iterations: usize,
    pub walltime: f64,
    #[serde(rename = "T_P")]
    pub compute_time: f64,
    #[serde(rename = "T_C")]
    pub communication_time: f64,
    #[serde(rename = "T_L")]
    pub latency_time: f64,
    pub flops: u64,
    pub words: u64,
    pub messages: u64,
    pub gflops: f64,
    pub mflops_per_rank: f64,
    pub efficiency: f64,
    pub speedup: f64,
    #[serde(with = "crate::serde_ratio")]
    pub gamma: f64,
}

fn rows(record: &RunRecord) -> Vec<CsvRow> {
    let c = &record.config;
    let p = record.ranks as f64;
    let base = |row: &str| CsvRow {
        campaign: record.campaign.clone(),
        kind: record.kind,
        mode: record.mode,
        seed: record.seed,
        ranks: record.ranks,
        elements_x: c.elements[0],
        elements_y: c.elements[1],
        elements_z: c.elements[2],
        degree_x: c.degree[0],
        degree_y: c.degree[1],
        degree_z: c.degree[2],
        fields: c.fields,
        row: row.to_string(),
        step: 0,
        iterations: 0,
        walltime: 0.0,
        compute_time: 0.0,
        communication_time: 0.0,
        latency_time: 0.0,
        flops: 0,
        words: 0,
        messages: 0,
        gflops: 0.0,
        mflops_per_rank: 0.0,
        efficiency: 0.0,
        speedup: 0.0,
        gamma: 0.0,
    };
    let mut out: Vec<CsvRow> = record
        .steps
        .iter()
        .map(|s| {
            let e = if s.walltime > 0.0 { s.compute_time / s.walltime } else { 1.0 };
            CsvRow {
                step: s.step,
                iterations: s.iterations,
                walltime: s.walltime,
                compute_time: s.compute_time,
                communication_time: s.communication_time,
                latency_time: s.latency_time,
                flops: s.flops,
                words: s.words,
                messages: s.messages,
                gflops: s.flops as f64 / s.walltime / 1e9,
                mflops_per_rank: s.flops as f64 / p / s.walltime / 1e6,
                efficiency: e,
                speedup: e * p,
                gamma: super::gamma_from_times(&s.times()).value(),
                ..base("step")
            }
        })
        .collect();
    if let Some(s) = record.steps.get(record.reference_step) {
        let m = &record.summary;
        out.push(CsvRow {
            step: s.step,
            iterations: s.iterations,
            walltime: m.walltime,
            compute_time: m.compute_time,
            communication_time: m.communication_time,
            latency_time: m.latency_time,
            flops: m.flops,
            words: m.words,
            messages: m.messages,
            gflops: m.gflops,
            mflops_per_rank: m.mflops_per_rank,
            efficiency: m.efficiency,
            speedup: m.speedup,
            gamma: m.gamma,
            ..base("summary")
        });
    }
    out
}

/// All records as CSV: one row per step, then one summary row per run.
pub fn records_to_csv(records: &[RunRecord]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        for row in rows(r) {
            w.serialize(row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Parses CSV written by [`records_to_csv`].
pub fn read_summary_csv(text: &str) -> Result<Vec<CsvRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

pub fn records_to_json(records: &[RunRecord]) -> Result<String, serde_json::Error> {
    let mut s = serde_json::to_string_pretty(records)?;
    s.push('\n');
    Ok(s)
}

/// Fixed-width text table of the run summaries.
pub fn summary_table(records: &[RunRecord]) -> String {
    let mut out = format!(
        "{:>5} {:>10} {:>4} {:>10} {:>12} {:>12} {:>6} {:>7}\n",
        "P", "elements", "N", "GFlops", "MFlops/rank", "walltime[s]", "E", "S"
    );
    for r in records {
        let e = r.config.elements;
        let m = &r.summary;
        out.push_str(&format!(
            "{:>5} {:>10} {:>4} {:>10.3} {:>12.1} {:>12.2} {:>6.3} {:>7.2}\n",
            r.ranks,
            format!("{}x{}x{}", e[0], e[1], e[2]),
            r.config.degree[0],
            m.gflops,
            m.mflops_per_rank,
            m.walltime,
            m.efficiency,
            m.speedup
        ));
    }
    out
}
