//! Sweep harness: expands a sweep into configurations, runs them in parallel
//! and aggregates the per-configuration outcomes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hardware::HardwareProfile;
use crate::network::{
    simulate, AttemptOutcome, AttemptRecord, BiasPolicy, FailureReason, RootBias, RunConfig,
    RunCounters, TopologySpec,
};
use crate::sim::SimTime;
use crate::stats::{fit_linear, mean, RegressionFit};

/// Largest chain the sweeps consider: 17 repeaters between the end routers.
pub const DEFAULT_MAX_ROUTERS: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepKind {
    HomogeneousScaling,
    FixedDistanceNodeSweep,
    CrossDistance,
    MinRepeaterSearch,
    FixedNodesDistanceSweep,
}

impl SweepKind {
    pub fn label(self) -> &'static str {
        match self {
            SweepKind::HomogeneousScaling => "homogeneous_scaling",
            SweepKind::FixedDistanceNodeSweep => "fixed_distance_node_sweep",
            SweepKind::CrossDistance => "cross_distance",
            SweepKind::MinRepeaterSearch => "min_repeater_search",
            SweepKind::FixedNodesDistanceSweep => "fixed_nodes_distance_sweep",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [
            SweepKind::HomogeneousScaling,
            SweepKind::FixedDistanceNodeSweep,
            SweepKind::CrossDistance,
            SweepKind::MinRepeaterSearch,
            SweepKind::FixedNodesDistanceSweep,
        ]
        .into_iter()
        .find(|k| k.label() == s)
    }
}

/// A fully resolved sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub name: String,
    pub kind: SweepKind,
    pub profile: String,
    pub hardware: HardwareProfile,
    /// Total end-to-end distances. Unused by `HomogeneousScaling`.
    pub distances_km: Vec<f64>,
    /// Router counts. `FixedNodesDistanceSweep` uses the first entry (the
    /// starting count when `auto_step` is set).
    pub routers: Vec<usize>,
    /// Hop length for `HomogeneousScaling`.
    pub hop_km: Option<f64>,
    pub attempts: usize,
    /// Independent seeds per configuration.
    pub replicates: usize,
    pub base_seed: u64,
    pub f_threshold: f64,
    pub retry_budget: u32,
    pub horizon: SimTime,
    pub bias: BiasPolicy,
    /// Step the router count up whenever delivered fidelity drops below the
    /// threshold (distance sweeps only).
    pub auto_step: bool,
    pub max_routers: usize,
    pub trace: bool,
}

impl SweepSpec {
    pub fn new(kind: SweepKind, profile: &str, hardware: HardwareProfile) -> Self {
        SweepSpec {
            name: kind.label().to_string(),
            kind,
            profile: profile.to_string(),
            hardware,
            distances_km: Vec::new(),
            routers: Vec::new(),
            hop_km: None,
            attempts: 20,
            replicates: 1,
            base_seed: 0,
            f_threshold: 0.5,
            retry_budget: 10,
            horizon: SimTime::from_secs_f64(3600.0).expect("fits"),
            bias: BiasPolicy::default(),
            auto_step: false,
            max_routers: DEFAULT_MAX_ROUTERS,
            trace: false,
        }
    }

    /// `(total_distance_km, router_count)` pairs, before replication.
    pub fn configurations(&self) -> Vec<(f64, usize)> {
        match self.kind {
            SweepKind::HomogeneousScaling => {
                let hop = self.hop_km.unwrap_or(0.0);
                self.routers.iter().map(|&n| (hop * (n - 1) as f64, n)).collect()
            }
            SweepKind::FixedDistanceNodeSweep => {
                let d = self.distances_km.first().copied().unwrap_or(0.0);
                self.routers.iter().map(|&n| (d, n)).collect()
            }
            SweepKind::CrossDistance => self
                .distances_km
                .iter()
                .flat_map(|&d| self.routers.iter().map(move |&n| (d, n)))
                .collect(),
            SweepKind::FixedNodesDistanceSweep => {
                let n = self.routers.first().copied().unwrap_or(2);
                self.distances_km.iter().map(|&d| (d, n)).collect()
            }
            SweepKind::MinRepeaterSearch => self
                .distances_km
                .iter()
                .flat_map(|&d| (2..=self.max_routers).map(move |n| (d, n)))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.attempts == 0 {
            return Err("attempts must be >= 1".into());
        }
        if self.replicates == 0 {
            return Err("replicates must be >= 1".into());
        }
        if let Some(&n) = self
            .routers
            .iter()
            .find(|&&n| n < 2 || n > self.max_routers)
        {
            return Err(format!(
                "router count {n} outside [2, {}]",
                self.max_routers
            ));
        }
        if let Some(&d) = self.distances_km.iter().find(|&&d| !(d > 0.0)) {
            return Err(format!("distance {d} km must be > 0"));
        }
        let needs_routers = !matches!(self.kind, SweepKind::MinRepeaterSearch);
        if needs_routers && self.routers.is_empty() {
            return Err("routers must not be empty".into());
        }
        let needs_distances = !matches!(self.kind, SweepKind::HomogeneousScaling);
        if needs_distances && self.distances_km.is_empty() {
            return Err("distances_km must not be empty".into());
        }
        if self.kind == SweepKind::HomogeneousScaling && !self.hop_km.is_some_and(|h| h > 0.0) {
            return Err("hop_km must be > 0".into());
        }
        Ok(())
    }
}

/// Stable 64-bit digest of a configuration, independent of process and
/// platform.
pub fn configuration_hash(spec: &SweepSpec, distance_km: f64, routers: usize, replicate: usize) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    eat(spec.kind.label().as_bytes());
    eat(&[0]);
    eat(spec.profile.as_bytes());
    eat(&[0]);
    eat(&distance_km.to_bits().to_le_bytes());
    eat(&(routers as u64).to_le_bytes());
    eat(&(spec.attempts as u64).to_le_bytes());
    eat(&(replicate as u64).to_le_bytes());
    eat(&spec.f_threshold.to_bits().to_le_bytes());
    eat(&spec.retry_budget.to_le_bytes());
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn configuration_seed(spec: &SweepSpec, distance_km: f64, routers: usize, replicate: usize) -> u64 {
    spec.base_seed ^ configuration_hash(spec, distance_km, routers, replicate)
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub kind: SweepKind,
    pub profile: String,
    pub total_distance_km: f64,
    pub router_count: usize,
    pub bsm_count: usize,
    pub attempts: usize,
    pub e_count: usize,
    pub mean_f_e2e: Option<f64>,
    pub records: Vec<AttemptRecord>,
    pub seed: u64,
    pub replicate: usize,
    /// Root side for odd router counts under a fixed-per-configuration policy.
    pub odd_subclass: Option<RootBias>,
    pub counters: RunCounters,
    pub error: Option<String>,
    pub trace: Vec<String>,
}

impl ExperimentResult {
    pub fn failures(&self) -> usize {
        self.attempts - self.e_count
    }

    pub fn hop_km(&self) -> f64 {
        self.total_distance_km / (self.router_count.max(2) - 1) as f64
    }

    pub fn is_even(&self) -> bool {
        self.router_count % 2 == 0
    }

    pub fn success_rate(&self) -> f64 {
        self.e_count as f64 / self.attempts as f64
    }

    /// Fidelities of every delivered end-to-end pair, including those that
    /// fell short of the threshold.
    pub fn delivered_fidelities(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().filter_map(|r| r.outcome.fidelity())
    }

    pub fn failures_by(&self, reason: FailureReason) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r.outcome, AttemptOutcome::Failure { reason: x, .. } if x == reason))
            .count()
    }

    /// Mean simulated duration of the attempts, in seconds.
    pub fn mean_attempt_duration_s(&self) -> f64 {
        let ds: Vec<f64> = self
            .records
            .iter()
            .map(|r| r.duration().as_secs_f64())
            .collect();
        mean(&ds).unwrap_or(0.0)
    }
}

pub fn run_configuration(
    spec: &SweepSpec,
    distance_km: f64,
    routers: usize,
    replicate: usize,
) -> ExperimentResult {
    let seed = configuration_seed(spec, distance_km, routers, replicate);
    let config = RunConfig {
        topology: TopologySpec::homogeneous(routers, distance_km, &spec.hardware),
        attempts: spec.attempts,
        retry_budget: spec.retry_budget,
        f_threshold: spec.f_threshold,
        horizon: spec.horizon,
        seed,
        trace: spec.trace,
        bias: spec.bias,
    };
    let odd_subclass = match spec.bias {
        BiasPolicy::PerRouterCount => RootBias::for_router_count(routers),
        BiasPolicy::PerRequest => None,
    };
    let mut result = ExperimentResult {
        kind: spec.kind,
        profile: spec.profile.clone(),
        total_distance_km: distance_km,
        router_count: routers,
        bsm_count: routers.saturating_sub(1),
        attempts: spec.attempts,
        e_count: 0,
        mean_f_e2e: None,
        records: Vec::new(),
        seed,
        replicate,
        odd_subclass,
        counters: RunCounters::default(),
        error: None,
        trace: Vec::new(),
    };
    match simulate(&config) {
        Ok(out) => {
            result.e_count = out.successes();
            result.mean_f_e2e = out.mean_success_fidelity();
            result.bsm_count = out.bsm_count;
            result.records = out.attempts;
            result.counters = out.counters;
            result.trace = out.trace;
        }
        Err(e) => result.error = Some(e.to_string()),
    }
    result
}

fn sort_results(results: &mut [ExperimentResult]) {
    results.sort_by(|a, b| {
        a.total_distance_km
            .total_cmp(&b.total_distance_km)
            .then(a.router_count.cmp(&b.router_count))
            .then(a.replicate.cmp(&b.replicate))
    });
}

/// Runs every configuration of the sweep. A configuration whose simulation
/// faults is reported with `error` set; the rest of the sweep continues.
pub fn run_sweep(spec: &SweepSpec) -> Vec<ExperimentResult> {
    let mut results = match spec.kind {
        SweepKind::MinRepeaterSearch => spec
            .distances_km
            .par_iter()
            .flat_map_iter(|&d| {
                (0..spec.replicates).map(move |rep| min_repeaters(spec, d, rep).result)
            })
            .collect(),
        SweepKind::FixedNodesDistanceSweep if spec.auto_step => threshold_stepping_sweep(spec),
        _ => {
            let jobs: Vec<(f64, usize, usize)> = spec
                .configurations()
                .into_iter()
                .flat_map(|(d, n)| (0..spec.replicates).map(move |r| (d, n, r)))
                .collect();
            jobs.par_iter()
                .map(|&(d, n, r)| run_configuration(spec, d, n, r))
                .collect()
        }
    };
    sort_results(&mut results);
    results
}

#[derive(Debug, Clone)]
pub struct MinRepeaters {
    pub distance_km: f64,
    /// Intermediate router count, `None` when no chain up to the limit works.
    pub repeaters: Option<usize>,
    /// Run at the returned count, or at the limit when none worked.
    pub result: ExperimentResult,
}

/// Smallest number of intermediate routers for which at least one of the
/// attempts succeeds. Each candidate count has its own fixed seed.
pub fn min_repeaters(spec: &SweepSpec, distance_km: f64, replicate: usize) -> MinRepeaters {
    let mut last = None;
    for routers in 2..=spec.max_routers {
        let r = run_configuration(spec, distance_km, routers, replicate);
        if r.e_count >= 1 {
            return MinRepeaters {
                distance_km,
                repeaters: Some(routers - 2),
                result: r,
            };
        }
        last = Some(r);
    }
    MinRepeaters {
        distance_km,
        repeaters: None,
        result: last.expect("max_routers >= 2"),
    }
}

/// Fits `repeaters = slope * distance + intercept` on the mean minimum count
/// per distance; `1 / slope` reads as kilometres gained per added repeater.
/// Unreachable distances are left out.
pub fn fit_min_repeaters(found: &[MinRepeaters]) -> Result<RegressionFit, crate::stats::StatsError> {
    let mut by_distance: Vec<(f64, Vec<f64>)> = Vec::new();
    for m in found {
        let Some(r) = m.repeaters else { continue };
        match by_distance.iter_mut().find(|(d, _)| *d == m.distance_km) {
            Some((_, v)) => v.push(r as f64),
            None => by_distance.push((m.distance_km, vec![r as f64])),
        }
    }
    let pts: Vec<(f64, f64)> = by_distance
        .iter()
        .map(|(d, v)| (*d, mean(v).expect("non-empty")))
        .collect();
    fit_linear(&pts)
}

/// Mean fidelity over every delivered pair in `rows`, successes or not.
pub fn pooled_delivered_fidelity(rows: &[ExperimentResult]) -> Option<f64> {
    let fs: Vec<f64> = rows.iter().flat_map(|r| r.delivered_fidelities()).collect();
    mean(&fs)
}

/// Mean fidelity over the successful attempts of `rows`.
pub fn pooled_success_fidelity(rows: &[ExperimentResult]) -> Option<f64> {
    let fs: Vec<f64> = rows
        .iter()
        .flat_map(|r| {
            r.records.iter().filter_map(|a| match a.outcome {
                AttemptOutcome::Success { fidelity } => Some(fidelity),
                _ => None,
            })
        })
        .collect();
    mean(&fs)
}

/// Distance sweep over a growing chain: whenever the delivered fidelity at
/// the current router count falls below the threshold (or nothing is
/// delivered), the following distances run with one more router.
pub fn threshold_stepping_sweep(spec: &SweepSpec) -> Vec<ExperimentResult> {
    let mut routers = spec.routers.first().copied().unwrap_or(2);
    let mut out = Vec::new();
    let mut distances = spec.distances_km.clone();
    distances.sort_by(f64::total_cmp);
    for d in distances {
        let rows: Vec<ExperimentResult> = (0..spec.replicates)
            .into_par_iter()
            .map(|r| run_configuration(spec, d, routers, r))
            .collect();
        let crossed = pooled_delivered_fidelity(&rows).is_none_or(|f| f < spec.f_threshold);
        out.extend(rows);
        if crossed && routers < spec.max_routers {
            routers += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassSummary {
    pub rows: usize,
    pub mean_e_count: f64,
    /// OLS slope of E_count against router count; absent with a single
    /// router count.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrendSummary {
    pub overall_slope: Option<f64>,
    pub slope_sign: i8,
    pub even: Option<ClassSummary>,
    pub odd: Option<ClassSummary>,
    pub odd_left: Option<ClassSummary>,
    pub odd_right: Option<ClassSummary>,
}

fn class_summary<'a>(rows: impl Iterator<Item = &'a ExperimentResult>) -> Option<ClassSummary> {
    let pts: Vec<(f64, f64)> = rows
        .map(|r| (r.router_count as f64, r.e_count as f64))
        .collect();
    if pts.is_empty() {
        return None;
    }
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    Some(ClassSummary {
        rows: pts.len(),
        mean_e_count: mean(&ys).expect("non-empty"),
        slope: fit_linear(&pts).ok().map(|f| f.slope),
    })
}

/// Partitions node-sweep rows by router-count parity and odd sub-class.
pub fn summarize_trend(results: &[ExperimentResult]) -> TrendSummary {
    let overall = class_summary(results.iter());
    let overall_slope = overall.and_then(|c| c.slope);
    let slope_sign = match overall_slope {
        Some(s) if s > 1e-12 => 1,
        Some(s) if s < -1e-12 => -1,
        _ => 0,
    };
    TrendSummary {
        overall_slope,
        slope_sign,
        even: class_summary(results.iter().filter(|r| r.is_even())),
        odd: class_summary(results.iter().filter(|r| !r.is_even())),
        odd_left: class_summary(
            results
                .iter()
                .filter(|r| r.odd_subclass == Some(RootBias::Left)),
        ),
        odd_right: class_summary(
            results
                .iter()
                .filter(|r| r.odd_subclass == Some(RootBias::Right)),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardware::{BsmSpec, MemorySpec};

    fn perfect() -> HardwareProfile {
        HardwareProfile {
            memory: MemorySpec {
                slots: 4,
                tau_coh: SimTime::from_secs_f64(1.0e3).unwrap(),
                f_init: 1.0,
                emit_frequency_hz: 1.0e6,
            },
            attenuation_db_per_km: 0.0,
            light_speed_km_per_s: 2.0e5,
            classical_extra_delay: SimTime::ZERO,
            bsm: BsmSpec {
                intrinsic_success: 1.0,
                detector_efficiency: 1.0,
            },
            bsm_fraction: 0.5,
            swap_success: 1.0,
        }
    }

    fn synthetic(n: usize, e: usize) -> ExperimentResult {
        ExperimentResult {
            kind: SweepKind::FixedDistanceNodeSweep,
            profile: "x".into(),
            total_distance_km: 100.0,
            router_count: n,
            bsm_count: n - 1,
            attempts: 20,
            e_count: e,
            mean_f_e2e: None,
            records: vec![],
            seed: 0,
            replicate: 0,
            odd_subclass: RootBias::for_router_count(n),
            counters: RunCounters::default(),
            error: None,
            trace: vec![],
        }
    }

    #[test]
    fn node_sweep_has_one_row_per_count() {
        let mut spec = SweepSpec::new(SweepKind::FixedDistanceNodeSweep, "p", perfect());
        spec.distances_km = vec![1000.0];
        spec.routers = (2..=19).collect();
        let rows = run_sweep(&spec);
        assert_eq!(rows.len(), 18);
        assert!(rows.iter().all(|r| r.e_count == 20 && r.failures() == 0));
        assert!(rows.windows(2).all(|w| w[0].router_count < w[1].router_count));
    }

    #[test]
    fn seeds_do_not_depend_on_sweep_order() {
        let mut spec = SweepSpec::new(SweepKind::CrossDistance, "p", {
            let mut hw = perfect();
            hw.bsm.intrinsic_success = 0.5;
            hw.attenuation_db_per_km = 0.02;
            hw
        });
        spec.distances_km = vec![100.0, 300.0];
        spec.routers = vec![2, 3, 4];
        let a = run_sweep(&spec);
        spec.distances_km.reverse();
        spec.routers.reverse();
        let b = run_sweep(&spec);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.seed, y.seed);
            assert_eq!(x.e_count, y.e_count);
            assert_eq!(x.mean_f_e2e, y.mean_f_e2e);
        }
    }

    #[test]
    fn seed_changes_with_configuration() {
        let spec = SweepSpec::new(SweepKind::CrossDistance, "p", perfect());
        let s = configuration_seed(&spec, 100.0, 3, 0);
        assert_ne!(s, configuration_seed(&spec, 100.0, 4, 0));
        assert_ne!(s, configuration_seed(&spec, 101.0, 3, 0));
        assert_ne!(s, configuration_seed(&spec, 100.0, 3, 1));
        assert_eq!(s, configuration_seed(&spec, 100.0, 3, 0));
    }

    #[test]
    fn lossless_chains_need_no_repeaters() {
        let mut spec = SweepSpec::new(SweepKind::MinRepeaterSearch, "p", perfect());
        for d in [10.0, 1000.0, 20000.0] {
            assert_eq!(min_repeaters(&spec, d, 0).repeaters, Some(0));
        }
        spec.distances_km = vec![500.0, 5000.0];
        let rows = run_sweep(&spec);
        assert!(rows.iter().all(|r| r.router_count == 2));
    }

    #[test]
    fn trend_of_flat_rows_is_flat() {
        let rows: Vec<_> = (2..=9).map(|n| synthetic(n, 7)).collect();
        let t = summarize_trend(&rows);
        assert_eq!(t.overall_slope, Some(0.0));
        assert_eq!(t.slope_sign, 0);
        assert_eq!(t.even.unwrap().slope, Some(0.0));
        assert_eq!(t.odd.unwrap().slope, Some(0.0));
    }

    #[test]
    fn trend_parity_means() {
        let rows: Vec<_> = (2..=9)
            .map(|n| synthetic(n, if n % 2 == 0 { 15 } else { 5 }))
            .collect();
        let t = summarize_trend(&rows);
        assert_eq!(t.even.unwrap().mean_e_count - t.odd.unwrap().mean_e_count, 10.0);
        assert_eq!(t.odd_left.unwrap().rows + t.odd_right.unwrap().rows, 4);
    }

    #[test]
    fn empty_partitions_are_omitted() {
        let rows = vec![synthetic(4, 3), synthetic(6, 2)];
        let t = summarize_trend(&rows);
        assert!(t.odd.is_none() && t.odd_left.is_none());
        assert!(t.even.is_some());
    }

    #[test]
    fn validation_messages() {
        let mut spec = SweepSpec::new(SweepKind::FixedDistanceNodeSweep, "p", perfect());
        spec.distances_km = vec![100.0];
        spec.routers = vec![1];
        assert!(spec.validate().unwrap_err().contains("router count 1"));
        spec.routers = vec![2];
        spec.attempts = 0;
        assert!(spec.validate().unwrap_err().contains("attempts"));
    }
}
