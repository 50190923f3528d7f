//! Result tables (CSV), run summaries (JSON) and control-message traces.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiments::{summarize_trend, ExperimentResult, TrendSummary};
use crate::network::RunCounters;
use crate::stats::RegressionFit;

pub const CSV_HEADER: [&str; 12] = [
    "sweep_kind",
    "total_distance_km",
    "router_count",
    "bsm_count",
    "hop_km",
    "attempts",
    "e_count",
    "failures",
    "mean_f_e2e",
    "parity",
    "odd_subclass",
    "seed",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unexpected header: {0}")]
    Header(String),
}

/// `printf("%g")` with six significant digits.
pub fn format_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    const P: i32 = 6;
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One CSV row: a single replicate of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_kind: String,
    pub total_distance_km: f64,
    pub router_count: usize,
    pub bsm_count: usize,
    pub hop_km: f64,
    pub attempts: usize,
    pub e_count: usize,
    pub failures: usize,
    pub mean_f_e2e: Option<f64>,
    pub parity: String,
    pub odd_subclass: String,
    pub seed: u64,
}

impl From<&ExperimentResult> for ResultRow {
    fn from(r: &ExperimentResult) -> Self {
        ResultRow {
            sweep_kind: r.kind.label().to_string(),
            total_distance_km: r.total_distance_km,
            router_count: r.router_count,
            bsm_count: r.bsm_count,
            hop_km: r.hop_km(),
            attempts: r.attempts,
            e_count: r.e_count,
            failures: r.failures(),
            mean_f_e2e: r.mean_f_e2e,
            parity: if r.is_even() { "even" } else { "odd" }.to_string(),
            odd_subclass: match (r.is_even(), r.odd_subclass) {
                (true, _) => String::new(),
                (false, Some(b)) => b.label().to_string(),
                (false, None) => "mixed".to_string(),
            },
            seed: r.seed,
        }
    }
}

impl ResultRow {
    fn record(&self) -> [String; 12] {
        [
            self.sweep_kind.clone(),
            format_g(self.total_distance_km),
            self.router_count.to_string(),
            self.bsm_count.to_string(),
            format_g(self.hop_km),
            self.attempts.to_string(),
            self.e_count.to_string(),
            self.failures.to_string(),
            self.mean_f_e2e.map(format_g).unwrap_or_default(),
            self.parity.clone(),
            self.odd_subclass.clone(),
            self.seed.to_string(),
        ]
    }
}

/// Rows ordered by distance then router count; replicates keep their order.
pub fn rows_from_results(results: &[ExperimentResult]) -> Vec<ResultRow> {
    let mut rows: Vec<ResultRow> = results.iter().map(ResultRow::from).collect();
    rows.sort_by(|a, b| {
        a.total_distance_km
            .total_cmp(&b.total_distance_km)
            .then(a.router_count.cmp(&b.router_count))
    });
    rows
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[ResultRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

pub fn write_results(results: &[ExperimentResult], path: &Path) -> Result<(), ReportError> {
    let file = BufWriter::new(File::create(path)?);
    write_csv(&rows_from_results(results), file)
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>, ReportError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(ReportError::Header(header.join(",")));
    }
    r.deserialize()
        .collect::<Result<Vec<ResultRow>, _>>()
        .map_err(ReportError::from)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, ReportError> {
    read_csv(File::open(path)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub name: String,
    pub sweep_kind: String,
    pub profile: String,
    pub rows: usize,
    pub seed: u64,
    pub total_attempts: usize,
    pub total_successes: usize,
    pub trend: TrendSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_repeaters_fit: Option<RegressionFit>,
    pub invariant_violations: u64,
    pub errors: Vec<String>,
    pub counters: RunCounters,
}

impl SweepSummary {
    pub fn new(name: &str, base_seed: u64, results: &[ExperimentResult]) -> Self {
        let mut counters = RunCounters::default();
        for r in results {
            add_counters(&mut counters, &r.counters);
        }
        SweepSummary {
            name: name.to_string(),
            sweep_kind: results
                .first()
                .map(|r| r.kind.label().to_string())
                .unwrap_or_default(),
            profile: results.first().map(|r| r.profile.clone()).unwrap_or_default(),
            rows: results.len(),
            seed: base_seed,
            total_attempts: results.iter().map(|r| r.attempts).sum(),
            total_successes: results.iter().map(|r| r.e_count).sum(),
            trend: summarize_trend(results),
            min_repeaters_fit: None,
            invariant_violations: counters.violations(),
            errors: results.iter().filter_map(|r| r.error.clone()).collect(),
            counters,
        }
    }
}

fn add_counters(acc: &mut RunCounters, c: &RunCounters) {
    acc.pairs_created += c.pairs_created;
    acc.pairs_produced_by_swap += c.pairs_produced_by_swap;
    acc.pairs_consumed_by_swap += c.pairs_consumed_by_swap;
    acc.pairs_destroyed_by_failure += c.pairs_destroyed_by_failure;
    acc.pairs_delivered += c.pairs_delivered;
    acc.bsm_successes += c.bsm_successes;
    acc.corrections_applied += c.corrections_applied;
    acc.corrections_voided += c.corrections_voided;
    acc.swaps_performed += c.swaps_performed;
    acc.conservation_violations += c.conservation_violations;
    acc.slot_leaks += c.slot_leaks;
    acc.correction_mismatches += c.correction_mismatches;
    acc.causality_violations += c.causality_violations;
    acc.station_reuse_violations += c.station_reuse_violations;
}

pub fn write_summary(summary: &SweepSummary, path: &Path) -> Result<(), ReportError> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, summary).map_err(std::io::Error::from)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

/// Writes every traced control message as JSON lines, one run after another.
pub fn write_trace(results: &[ExperimentResult], path: &Path) -> Result<(), ReportError> {
    let mut f = BufWriter::new(File::create(path)?);
    for line in results.iter().flat_map(|r| r.trace.iter()) {
        writeln!(f, "{line}")?;
    }
    f.flush()?;
    Ok(())
}
