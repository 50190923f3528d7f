//! Linear chain topology, swap planning and the network manager that serves
//! end-to-end entanglement requests between the first and last router.
//!
//! Routers `r0..r{N-1}` are joined hop by hop; hop `i` links `r{i}` and
//! `r{i+1}` through station `b{i}`. The manager serves one request at a time:
//! every attempt launches generation on the links named by the swap plan,
//! swaps operands as they become usable, and measures the end-to-end pair.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hardware::{
    bsm_outcome, propagation_delay, BsmOutcome, BsmSpec, ClassicalChannelSpec, HardwareProfile,
    Memory, QuantumChannelSpec, SlotState,
};
use crate::protocols::{
    ControlMessage, GenState, GenStep, GenerationSession, MessageKind, SessionId, SwapSession,
    SwapState, TraceLine,
};
use crate::sim::{Event, EventHandle, Fault, Handler, NodeId, SimError, SimTime, Timeline};
use crate::state::{fidelity_of, swap_compose, werner_of, Endpoint, PairId, WernerPair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("a chain needs at least 2 routers, got {0}")]
    TooFewRouters(usize),
    #[error("hop {index} has non-positive length {length_km} km")]
    BadHop { index: usize, length_km: f64 },
    #[error("invalid hardware parameter: {0}")]
    BadHardware(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologySpec {
    pub hop_distances_km: Vec<f64>,
    pub hardware: HardwareProfile,
}

impl TopologySpec {
    pub fn homogeneous(routers: usize, total_km: f64, hardware: &HardwareProfile) -> Self {
        let hops = routers.saturating_sub(1).max(1);
        TopologySpec {
            hop_distances_km: vec![total_km / hops as f64; routers.saturating_sub(1)],
            hardware: hardware.clone(),
        }
    }

    pub fn router_count(&self) -> usize {
        self.hop_distances_km.len() + 1
    }

    pub fn total_km(&self) -> f64 {
        self.hop_distances_km.iter().sum()
    }
}

/// One router-station-router hop.
#[derive(Debug, Clone)]
pub struct Hop {
    pub left: QuantumChannelSpec,
    pub right: QuantumChannelSpec,
    pub classical_left: ClassicalChannelSpec,
    pub classical_right: ClassicalChannelSpec,
    pub bsm: BsmSpec,
}

impl Hop {
    pub fn arm_delay(&self) -> (SimTime, SimTime) {
        (propagation_delay(&self.left), propagation_delay(&self.right))
    }

    pub fn classical_delay(&self) -> SimTime {
        SimTime(self.classical_left.delay.as_ps() + self.classical_right.delay.as_ps())
    }
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub routers: Vec<Memory>,
    pub hops: Vec<Hop>,
    pub swap_success: f64,
    classical_prefix: Vec<u64>,
}

impl Chain {
    pub fn router_count(&self) -> usize {
        self.routers.len()
    }

    pub fn bsm_count(&self) -> usize {
        self.hops.len()
    }

    /// Classical latency between two routers along the chain.
    pub fn classical_delay(&self, a: usize, b: usize) -> SimTime {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        SimTime(self.classical_prefix[hi] - self.classical_prefix[lo])
    }

    pub fn all_memories_free(&self) -> bool {
        self.routers.iter().all(Memory::all_free)
    }
}

fn check_probability(name: &str, p: f64, allow_zero: bool) -> Result<(), NetworkError> {
    let lower_ok = if allow_zero { p >= 0.0 } else { p > 0.0 };
    if !(lower_ok && p <= 1.0) {
        return Err(NetworkError::BadHardware(format!("{name} = {p}")));
    }
    Ok(())
}

pub fn build_chain(spec: &TopologySpec) -> Result<Chain, NetworkError> {
    let n = spec.router_count();
    if spec.hop_distances_km.is_empty() {
        return Err(NetworkError::TooFewRouters(n.min(1)));
    }
    let hw = &spec.hardware;
    check_probability("bsm.intrinsic_success", hw.bsm.intrinsic_success, false)?;
    check_probability("bsm.detector_efficiency", hw.bsm.detector_efficiency, false)?;
    check_probability("swap_success", hw.swap_success, true)?;
    if !(0.0..=1.0).contains(&hw.bsm_fraction) {
        return Err(NetworkError::BadHardware(format!(
            "bsm_fraction = {}",
            hw.bsm_fraction
        )));
    }
    if hw.memory.slots < 2 && n > 2 {
        return Err(NetworkError::BadHardware(
            "interior routers need at least 2 memory slots".into(),
        ));
    }
    if !(hw.light_speed_km_per_s > 0.0) || hw.attenuation_db_per_km < 0.0 {
        return Err(NetworkError::BadHardware("channel parameters".into()));
    }
    let mut hops = Vec::with_capacity(n - 1);
    for (index, &length_km) in spec.hop_distances_km.iter().enumerate() {
        if !(length_km > 0.0) || !length_km.is_finite() {
            return Err(NetworkError::BadHop { index, length_km });
        }
        let arm = |len: f64| QuantumChannelSpec {
            length_km: len,
            attenuation_db_per_km: hw.attenuation_db_per_km,
            light_speed_km_per_s: hw.light_speed_km_per_s,
        };
        let left = arm(length_km * hw.bsm_fraction);
        let right = arm(length_km * (1.0 - hw.bsm_fraction));
        let classical = |chan: &QuantumChannelSpec| ClassicalChannelSpec {
            delay: SimTime(
                propagation_delay(chan).as_ps() + hw.classical_extra_delay.as_ps(),
            )
            .max(SimTime(1)),
        };
        hops.push(Hop {
            classical_left: classical(&left),
            classical_right: classical(&right),
            left,
            right,
            bsm: hw.bsm,
        });
    }
    let mut classical_prefix = Vec::with_capacity(n);
    classical_prefix.push(0u64);
    for hop in &hops {
        let last = *classical_prefix.last().unwrap();
        classical_prefix.push(last + hop.classical_delay().as_ps());
    }
    let routers = (0..n)
        .map(|i| Memory::new(NodeId::Router(i), hw.memory.clone()))
        .collect();
    Ok(Chain {
        routers,
        hops,
        swap_success: hw.swap_success,
        classical_prefix,
    })
}

/// Which side of the chain gets the shorter segment when an even number of
/// links has no central station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RootBias {
    Left,
    Right,
}

impl RootBias {
    /// Alternation over a running index: even indices lean left.
    pub fn alternating(index: usize) -> Self {
        if index % 2 == 0 {
            RootBias::Left
        } else {
            RootBias::Right
        }
    }

    /// Alternation over consecutive odd router counts (3 → left, 5 → right,
    /// 7 → left, ...). `None` for even counts, which have a central station.
    pub fn for_router_count(routers: usize) -> Option<Self> {
        if routers < 3 || routers % 2 == 0 {
            None
        } else {
            Some(Self::alternating((routers - 3) / 2))
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RootBias::Left => "left",
            RootBias::Right => "right",
        }
    }
}

/// Order in which elementary links are joined into the end-to-end pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SwapTree {
    Link(usize),
    /// Two sub-chains built concurrently and swapped at router `at`.
    Merge {
        at: usize,
        left: Box<SwapTree>,
        right: Box<SwapTree>,
    },
    /// A central link flanked by sub-chains. The link's pair is swapped with
    /// each side as soon as both are usable. With `source_first`, the right
    /// side is only requested once the left side has been joined.
    Pivot {
        link: usize,
        left: Option<Box<SwapTree>>,
        right: Option<Box<SwapTree>>,
        source_first: bool,
    },
}

impl SwapTree {
    pub fn leaf_count(&self) -> usize {
        match self {
            SwapTree::Link(_) => 1,
            SwapTree::Merge { left, right, .. } => left.leaf_count() + right.leaf_count(),
            SwapTree::Pivot { left, right, .. } => {
                1 + left.as_ref().map_or(0, |t| t.leaf_count())
                    + right.as_ref().map_or(0, |t| t.leaf_count())
            }
        }
    }

    pub fn swap_count(&self) -> usize {
        match self {
            SwapTree::Link(_) => 0,
            SwapTree::Merge { left, right, .. } => 1 + left.swap_count() + right.swap_count(),
            SwapTree::Pivot { left, right, .. } => {
                left.as_ref().map_or(0, |t| 1 + t.swap_count())
                    + right.as_ref().map_or(0, |t| 1 + t.swap_count())
            }
        }
    }

    /// Links in left-to-right order.
    pub fn links(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_links(&mut out);
        out
    }

    fn collect_links(&self, out: &mut Vec<usize>) {
        match self {
            SwapTree::Link(i) => out.push(*i),
            SwapTree::Merge { left, right, .. } => {
                left.collect_links(out);
                right.collect_links(out);
            }
            SwapTree::Pivot {
                link, left, right, ..
            } => {
                if let Some(l) = left {
                    l.collect_links(out);
                }
                out.push(*link);
                if let Some(r) = right {
                    r.collect_links(out);
                }
            }
        }
    }

    /// Routers at which a swap takes place.
    pub fn swap_routers(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_swaps(&mut out);
        out.sort_unstable();
        out
    }

    fn collect_swaps(&self, out: &mut Vec<usize>) {
        match self {
            SwapTree::Link(_) => {}
            SwapTree::Merge { at, left, right } => {
                out.push(*at);
                left.collect_swaps(out);
                right.collect_swaps(out);
            }
            SwapTree::Pivot {
                link, left, right, ..
            } => {
                if let Some(l) = left {
                    out.push(*link);
                    l.collect_swaps(out);
                }
                if let Some(r) = right {
                    out.push(link + 1);
                    r.collect_swaps(out);
                }
            }
        }
    }

    /// Router at which the last swap of the plan happens, seen from the root.
    pub fn root_router(&self) -> Option<usize> {
        match self {
            SwapTree::Link(_) => None,
            SwapTree::Merge { at, .. } => Some(*at),
            SwapTree::Pivot { link, right, .. } => {
                if right.is_some() {
                    Some(link + 1)
                } else {
                    Some(*link)
                }
            }
        }
    }
}

/// Balanced, symmetric plan over links `[lo, hi)`: odd spans pivot on their
/// central link, even spans split at their central router.
fn balanced(lo: usize, hi: usize) -> SwapTree {
    let k = hi - lo;
    debug_assert!(k >= 1);
    if k == 1 {
        return SwapTree::Link(lo);
    }
    if k % 2 == 1 {
        let p = lo + k / 2;
        SwapTree::Pivot {
            link: p,
            left: Some(Box::new(balanced(lo, p))),
            right: Some(Box::new(balanced(p + 1, hi))),
            source_first: false,
        }
    } else {
        let mid = lo + k / 2;
        SwapTree::Merge {
            at: mid,
            left: Box::new(balanced(lo, mid)),
            right: Box::new(balanced(mid, hi)),
        }
    }
}

/// Swap plan for an end-to-end request across `routers` routers.
///
/// With an even router count the link count is odd and the central station
/// is the natural meeting point: both halves are built concurrently around
/// the central link. With an odd router count there is no central station;
/// the root pivots on a link one step off centre (toward `bias`) and the
/// destination-side segment is only requested after the source side has been
/// joined to the pivot.
pub fn plan_swap_order(routers: usize, bias: RootBias) -> SwapTree {
    assert!(routers >= 2, "a chain has at least 2 routers");
    let links = routers - 1;
    if links % 2 == 1 {
        return balanced(0, links);
    }
    let pivot = match bias {
        RootBias::Left => links / 2 - 1,
        RootBias::Right => links / 2,
    };
    SwapTree::Pivot {
        link: pivot,
        left: (pivot > 0).then(|| Box::new(balanced(0, pivot))),
        right: (pivot + 1 < links).then(|| Box::new(balanced(pivot + 1, links))),
        source_first: true,
    }
}

/// Chooses the root bias for each end-to-end request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BiasPolicy {
    /// Fixed per configuration, alternating over consecutive odd router counts.
    #[default]
    PerRouterCount,
    /// Alternates from one request to the next.
    PerRequest,
}

impl BiasPolicy {
    pub fn bias(self, routers: usize, request_index: usize) -> RootBias {
        match self {
            BiasPolicy::PerRouterCount => {
                RootBias::for_router_count(routers).unwrap_or(RootBias::Left)
            }
            BiasPolicy::PerRequest => RootBias::alternating(request_index),
        }
    }
}

/// Next-hop map and swap plan for the chain's single end-to-end flow.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    pub next_hop: Vec<Option<usize>>,
    pub plan: SwapTree,
}

impl RoutingTable {
    pub fn for_chain(routers: usize, bias: RootBias) -> Self {
        let next_hop = (0..routers)
            .map(|i| (i + 1 < routers).then_some(i + 1))
            .collect();
        RoutingTable {
            next_hop,
            plan: plan_swap_order(routers, bias),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntanglementRequest {
    pub src: usize,
    pub dst: usize,
    pub deadline: SimTime,
    pub f_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureReason {
    Generation,
    Swap,
    Fidelity,
    Horizon,
    Resource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttemptOutcome {
    Success { fidelity: f64 },
    Failure {
        reason: FailureReason,
        fidelity: Option<f64>,
    },
}

impl AttemptOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, AttemptOutcome::Success { .. })
    }

    pub fn fidelity(&self) -> Option<f64> {
        match self {
            AttemptOutcome::Success { fidelity } => Some(*fidelity),
            AttemptOutcome::Failure { fidelity, .. } => *fidelity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttemptRecord {
    pub index: usize,
    pub bias: RootBias,
    pub outcome: AttemptOutcome,
    pub started_at: SimTime,
    pub finished_at: SimTime,
}

impl AttemptRecord {
    pub fn duration(&self) -> SimTime {
        self.finished_at.saturating_sub(self.started_at)
    }
}

/// Bookkeeping used to verify resource safety and pair conservation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct RunCounters {
    pub pairs_created: u64,
    pub pairs_produced_by_swap: u64,
    pub pairs_consumed_by_swap: u64,
    pub pairs_destroyed_by_failure: u64,
    pub pairs_delivered: u64,
    pub bsm_successes: u64,
    pub corrections_applied: u64,
    pub corrections_voided: u64,
    pub swaps_performed: u64,
    pub conservation_violations: u64,
    pub slot_leaks: u64,
    pub correction_mismatches: u64,
    pub causality_violations: u64,
    pub station_reuse_violations: u64,
}

impl RunCounters {
    pub fn violations(&self) -> u64 {
        self.conservation_violations
            + self.slot_leaks
            + self.correction_mismatches
            + self.causality_violations
            + self.station_reuse_violations
    }

    fn expected_live(&self) -> i64 {
        self.pairs_created as i64 + self.pairs_produced_by_swap as i64
            - self.pairs_consumed_by_swap as i64
            - self.pairs_destroyed_by_failure as i64
            - self.pairs_delivered as i64
    }
}

#[derive(Debug, Clone)]
pub enum Payload {
    StartAttempt,
    BsmWindow { session: SessionId },
    Deliver(ControlMessage),
}

#[derive(Debug, Clone)]
enum PlanKind {
    Leaf {
        link: usize,
    },
    Merge {
        at: usize,
        left: usize,
        right: usize,
    },
    Pivot {
        pivot: usize,
        left: Option<usize>,
        right: Option<usize>,
        source_first: bool,
    },
}

#[derive(Debug, Clone)]
struct PlanNode {
    kind: PlanKind,
    parent: Option<usize>,
    ready: Option<PairId>,
    // pivot bookkeeping
    core: Option<PairId>,
    busy: bool,
    left_joined: bool,
    right_joined: bool,
    right_requested: bool,
}

fn flatten(tree: &SwapTree, parent: Option<usize>, out: &mut Vec<PlanNode>) -> usize {
    let idx = out.len();
    out.push(PlanNode {
        kind: PlanKind::Leaf { link: 0 },
        parent,
        ready: None,
        core: None,
        busy: false,
        left_joined: false,
        right_joined: false,
        right_requested: false,
    });
    let kind = match tree {
        SwapTree::Link(link) => PlanKind::Leaf { link: *link },
        SwapTree::Merge { at, left, right } => PlanKind::Merge {
            at: *at,
            left: flatten(left, Some(idx), out),
            right: flatten(right, Some(idx), out),
        },
        SwapTree::Pivot {
            link,
            left,
            right,
            source_first,
        } => {
            let pivot = flatten(&SwapTree::Link(*link), Some(idx), out);
            PlanKind::Pivot {
                pivot,
                left: left.as_ref().map(|t| flatten(t, Some(idx), out)),
                right: right.as_ref().map(|t| flatten(t, Some(idx), out)),
                source_first: *source_first,
            }
        }
    };
    out[idx].kind = kind;
    idx
}

/// Which part of a plan node a swap session serves.
#[derive(Debug, Clone, Copy)]
struct SwapRole {
    node: usize,
    side: Side,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
    Whole,
}

/// Parameters for one simulated request (a configuration run).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub topology: TopologySpec,
    pub attempts: usize,
    pub retry_budget: u32,
    pub f_threshold: f64,
    pub horizon: SimTime,
    pub seed: u64,
    pub trace: bool,
    pub bias: BiasPolicy,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub attempts: Vec<AttemptRecord>,
    pub counters: RunCounters,
    pub trace: Vec<String>,
    pub end_time: SimTime,
    pub router_count: usize,
    pub bsm_count: usize,
}

impl RunOutput {
    pub fn successes(&self) -> usize {
        self.attempts
            .iter()
            .filter(|a| a.outcome.is_success())
            .count()
    }

    pub fn mean_success_fidelity(&self) -> Option<f64> {
        let fs: Vec<f64> = self
            .attempts
            .iter()
            .filter_map(|a| match a.outcome {
                AttemptOutcome::Success { fidelity } => Some(fidelity),
                _ => None,
            })
            .collect();
        (!fs.is_empty()).then(|| fs.iter().sum::<f64>() / fs.len() as f64)
    }
}

/// The network manager: owns the chain, live sessions and pairs, and serves
/// the end-to-end request one attempt at a time.
pub struct Manager {
    chain: Chain,
    request: EntanglementRequest,
    attempts_wanted: usize,
    retry_budget: u32,
    bias_policy: BiasPolicy,
    w_init: f64,

    router_rng: Vec<ChaCha8Rng>,
    bsm_rng: Vec<ChaCha8Rng>,

    next_session: SessionId,
    next_pair: u64,
    gens: BTreeMap<SessionId, GenerationSession>,
    swaps: BTreeMap<SessionId, SwapSession>,
    pairs: BTreeMap<PairId, WernerPair>,
    owners: HashMap<SessionId, usize>,
    swap_roles: HashMap<SessionId, SwapRole>,

    plan: Vec<PlanNode>,
    stations_used: Vec<bool>,
    in_progress: bool,
    current_bias: RootBias,
    attempt_started: SimTime,
    handles: Vec<EventHandle>,

    records: Vec<AttemptRecord>,
    counters: RunCounters,
    trace: Option<Vec<String>>,
}

impl Manager {
    pub fn new<P>(
        chain: Chain,
        config: &RunConfig,
        timeline: &Timeline<P>,
    ) -> Result<Self, SimError> {
        let routers = chain.router_count();
        let w_init = werner_of(chain.routers[0].spec.f_init)
            .map_err(|e| SimError::Config(e.to_string()))?;
        let router_rng = (0..routers).map(|i| timeline.fork_rng(i as u64)).collect();
        let bsm_rng = (0..chain.bsm_count())
            .map(|i| timeline.fork_rng((1u64 << 32) + i as u64))
            .collect();
        let stations = chain.bsm_count();
        Ok(Manager {
            request: EntanglementRequest {
                src: 0,
                dst: routers - 1,
                deadline: timeline.horizon(),
                f_threshold: config.f_threshold,
            },
            attempts_wanted: config.attempts,
            retry_budget: config.retry_budget,
            bias_policy: config.bias,
            w_init,
            router_rng,
            bsm_rng,
            next_session: 0,
            next_pair: 0,
            gens: BTreeMap::new(),
            swaps: BTreeMap::new(),
            pairs: BTreeMap::new(),
            owners: HashMap::new(),
            swap_roles: HashMap::new(),
            plan: Vec::new(),
            stations_used: vec![false; stations],
            in_progress: false,
            current_bias: RootBias::Left,
            attempt_started: SimTime::ZERO,
            handles: Vec::new(),
            records: Vec::new(),
            counters: RunCounters::default(),
            trace: config.trace.then(Vec::new),
            chain,
        })
    }

    pub fn request(&self) -> &EntanglementRequest {
        &self.request
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    fn tau(&self) -> SimTime {
        self.chain.routers[0].spec.tau_coh
    }

    fn schedule(
        &mut self,
        tl: &mut Timeline<Payload>,
        delay: SimTime,
        target: NodeId,
        payload: Payload,
    ) -> Result<(), Fault> {
        let h = tl
            .schedule(delay, target, payload)
            .map_err(|e| Fault::new(e.to_string()))?;
        self.handles.push(h);
        Ok(())
    }

    fn send(
        &mut self,
        tl: &mut Timeline<Payload>,
        kind: MessageKind,
        session: SessionId,
        from: NodeId,
        to: NodeId,
        delay: SimTime,
    ) -> Result<(), Fault> {
        let msg = ControlMessage {
            kind,
            session,
            sent_at: tl.now(),
            from,
            to,
        };
        if let Some(trace) = self.trace.as_mut() {
            trace.push(
                serde_json::to_string(&TraceLine::from(&msg)).expect("trace line serializes"),
            );
        }
        self.schedule(tl, delay, to, Payload::Deliver(msg))
    }

    fn new_session_id(&mut self) -> SessionId {
        let id = self.next_session;
        self.next_session += 1;
        id
    }

    // ---- attempt lifecycle -------------------------------------------------

    fn start_attempt(&mut self, tl: &mut Timeline<Payload>) -> Result<(), Fault> {
        if self.records.len() >= self.attempts_wanted {
            return Ok(());
        }
        let index = self.records.len();
        self.current_bias = self
            .bias_policy
            .bias(self.chain.router_count(), index);
        let table = RoutingTable::for_chain(self.chain.router_count(), self.current_bias);
        self.plan.clear();
        flatten(&table.plan, None, &mut self.plan);
        self.stations_used.iter_mut().for_each(|u| *u = false);
        self.in_progress = true;
        self.attempt_started = tl.now();
        self.handles.clear();
        self.activate(tl, 0)
    }

    fn finish_attempt(
        &mut self,
        tl: &mut Timeline<Payload>,
        outcome: AttemptOutcome,
    ) -> Result<(), Fault> {
        self.abort_live(tl);
        self.in_progress = false;
        self.records.push(AttemptRecord {
            index: self.records.len(),
            bias: self.current_bias,
            outcome,
            started_at: self.attempt_started,
            finished_at: tl.now(),
        });
        if self.records.len() < self.attempts_wanted {
            self.schedule(tl, SimTime::ZERO, NodeId::Manager, Payload::StartAttempt)?;
        }
        Ok(())
    }

    /// Cancels outstanding events and tears down every live session and pair.
    fn abort_live(&mut self, tl: &mut Timeline<Payload>) {
        for h in self.handles.drain(..) {
            tl.cancel(h);
        }
        let gens = std::mem::take(&mut self.gens);
        for (_, mut s) in gens {
            if s.state == GenState::Done {
                continue;
            }
            if s.abort() {
                self.counters.corrections_voided += 1;
            }
            // slots bound to a heralded pair are released with the pair below
            for (router, slot) in [(s.router_a, s.slot_a), (s.router_b, s.slot_b)] {
                if let Some(SlotState::Reserved { session }) = self.chain.routers[router].slot(slot)
                {
                    if session == s.id {
                        self.chain.routers[router].release(slot);
                    }
                }
            }
        }
        let swaps = std::mem::take(&mut self.swaps);
        for (_, mut s) in swaps {
            if s.abort() {
                self.counters.corrections_voided += 1;
            }
        }
        let pairs = std::mem::take(&mut self.pairs);
        for (_, pair) in pairs {
            self.counters.pairs_destroyed_by_failure += 1;
            self.release_endpoint(pair.end_a);
            self.release_endpoint(pair.end_b);
        }
        self.owners.clear();
        self.swap_roles.clear();
        if !self.chain.all_memories_free() {
            self.counters.slot_leaks += 1;
        }
    }

    fn release_endpoint(&mut self, end: Endpoint) {
        if let NodeId::Router(r) = end.node {
            self.chain.routers[r].release(end.slot);
        }
    }

    // ---- plan execution ----------------------------------------------------

    fn activate(&mut self, tl: &mut Timeline<Payload>, node: usize) -> Result<(), Fault> {
        match self.plan[node].kind.clone() {
            PlanKind::Leaf { link } => self.start_generation(tl, node, link),
            PlanKind::Merge { left, right, .. } => {
                self.activate(tl, left)?;
                self.activate(tl, right)
            }
            PlanKind::Pivot {
                pivot,
                left,
                right,
                source_first,
            } => {
                if let Some(l) = left {
                    self.activate(tl, l)?;
                }
                self.activate(tl, pivot)?;
                if let Some(r) = right {
                    if !source_first {
                        self.plan[node].right_requested = true;
                        self.activate(tl, r)?;
                    }
                }
                Ok(())
            }
        }
    }

    fn node_ready(
        &mut self,
        tl: &mut Timeline<Payload>,
        node: usize,
        pair: PairId,
    ) -> Result<(), Fault> {
        self.plan[node].ready = Some(pair);
        let Some(parent) = self.plan[node].parent else {
            return self.deliver_end_to_end(tl, pair);
        };
        match self.plan[parent].kind.clone() {
            PlanKind::Leaf { .. } => Err(Fault::new("leaf cannot be a parent")),
            PlanKind::Merge { at, left, right } => {
                if let (Some(l), Some(r)) = (self.plan[left].ready, self.plan[right].ready) {
                    self.start_swap(
                        tl,
                        l,
                        r,
                        at,
                        SwapRole {
                            node: parent,
                            side: Side::Whole,
                        },
                    )?;
                }
                Ok(())
            }
            PlanKind::Pivot { pivot, .. } => {
                if node == pivot {
                    self.plan[parent].core = Some(pair);
                }
                self.advance_pivot(tl, parent)
            }
        }
    }

    fn advance_pivot(&mut self, tl: &mut Timeline<Payload>, node: usize) -> Result<(), Fault> {
        let PlanKind::Pivot {
            left,
            right,
            source_first,
            ..
        } = self.plan[node].kind.clone()
        else {
            return Err(Fault::new("advance on a non-pivot node"));
        };
        if self.plan[node].busy {
            return Ok(());
        }
        let Some(core) = self.plan[node].core else {
            return Ok(());
        };
        let left_done = left.is_none() || self.plan[node].left_joined;
        if let Some(l) = left {
            if !self.plan[node].left_joined {
                if let Some(lp) = self.plan[l].ready {
                    let at = self.pair_span(core)?.0;
                    self.plan[node].busy = true;
                    return self.start_swap(tl, lp, core, at, SwapRole { node, side: Side::Left });
                }
            }
        }
        if let Some(r) = right {
            if source_first && left_done && !self.plan[node].right_requested {
                self.plan[node].right_requested = true;
                self.activate(tl, r)?;
            }
            if !self.plan[node].right_joined {
                if let Some(rp) = self.plan[r].ready {
                    if !source_first || left_done {
                        let at = self.pair_span(core)?.1;
                        self.plan[node].busy = true;
                        return self.start_swap(
                            tl,
                            core,
                            rp,
                            at,
                            SwapRole {
                                node,
                                side: Side::Right,
                            },
                        );
                    }
                }
            }
        }
        let right_done = right.is_none() || self.plan[node].right_joined;
        if left_done && right_done {
            return self.node_ready(tl, node, core);
        }
        Ok(())
    }

    fn pair_span(&self, id: PairId) -> Result<(usize, usize), Fault> {
        let p = self
            .pairs
            .get(&id)
            .ok_or_else(|| Fault::new(format!("pair {id:?} is not live")))?;
        match (p.end_a.node, p.end_b.node) {
            (NodeId::Router(a), NodeId::Router(b)) => Ok((a, b)),
            _ => Err(Fault::new("pair endpoint is not a router")),
        }
    }

    fn deliver_end_to_end(&mut self, tl: &mut Timeline<Payload>, id: PairId) -> Result<(), Fault> {
        let tau = self.tau();
        let mut pair = self
            .pairs
            .remove(&id)
            .ok_or_else(|| Fault::new("end-to-end pair missing"))?;
        let w = pair.refresh(tl.now(), tau);
        let fidelity = fidelity_of(w).map_err(|e| Fault::new(e.to_string()))?;
        self.counters.pairs_delivered += 1;
        self.release_endpoint(pair.end_a);
        self.release_endpoint(pair.end_b);
        let outcome = if fidelity >= self.request.f_threshold {
            AttemptOutcome::Success { fidelity }
        } else {
            AttemptOutcome::Failure {
                reason: FailureReason::Fidelity,
                fidelity: Some(fidelity),
            }
        };
        self.finish_attempt(tl, outcome)
    }

    // ---- generation --------------------------------------------------------

    fn start_generation(
        &mut self,
        tl: &mut Timeline<Payload>,
        node: usize,
        link: usize,
    ) -> Result<(), Fault> {
        if self.stations_used[link] {
            self.counters.station_reuse_violations += 1;
        }
        self.stations_used[link] = true;
        let id = self.new_session_id();
        let slot_a = self.chain.routers[link].reserve(id);
        let slot_b = self.chain.routers[link + 1].reserve(id);
        let (slot_a, slot_b) = match (slot_a, slot_b) {
            (Ok(a), Ok(b)) => (a, b),
            (a, b) => {
                if let Ok(a) = a {
                    self.chain.routers[link].release(a);
                }
                if let Ok(b) = b {
                    self.chain.routers[link + 1].release(b);
                }
                return self.finish_attempt(
                    tl,
                    AttemptOutcome::Failure {
                        reason: FailureReason::Resource,
                        fidelity: None,
                    },
                );
            }
        };
        let mut session = GenerationSession::new(id, link, slot_a, slot_b, self.retry_budget);
        session.start()?;
        self.gens.insert(id, session);
        self.owners.insert(id, node);
        self.send(
            tl,
            MessageKind::EmitNow,
            id,
            NodeId::Manager,
            NodeId::Router(link),
            SimTime::ZERO,
        )
    }

    fn emit(&mut self, tl: &mut Timeline<Payload>, id: SessionId) -> Result<(), Fault> {
        let (link, slot_a, slot_b) = {
            let s = self.session(id)?;
            (s.link, s.slot_a, s.slot_b)
        };
        let now = tl.now();
        let pa = self.chain.routers[link]
            .try_emit(slot_a, now)
            .map_err(|e| Fault::new(e.to_string()))?;
        let pb = self.chain.routers[link + 1]
            .try_emit(slot_b, now)
            .map_err(|e| Fault::new(e.to_string()))?;
        let emitted_at = pa.emitted_at.max(pb.emitted_at);
        self.session_mut(id)?.emitted(emitted_at)?;
        let (da, db) = self.chain.hops[link].arm_delay();
        let window = SimTime((emitted_at.as_ps() - now.as_ps()) + da.max(db).as_ps());
        self.schedule(tl, window, NodeId::Bsm(link), Payload::BsmWindow { session: id })
    }

    fn bsm_window(&mut self, tl: &mut Timeline<Payload>, id: SessionId) -> Result<(), Fault> {
        let link = self.session(id)?.link;
        let hop = self.chain.hops[link].clone();
        let rng = &mut self.bsm_rng[link];
        let present_a = rng.gen_bool(crate::hardware::photon_survival(&hop.left));
        let present_b = rng.gen_bool(crate::hardware::photon_survival(&hop.right));
        let outcome = bsm_outcome(present_a, present_b, &hop.bsm, rng);
        if matches!(outcome, BsmOutcome::Success { .. }) {
            self.counters.bsm_successes += 1;
        }
        self.session_mut(id)?.measured(outcome)?;
        let kind = MessageKind::BsmResult(match outcome {
            BsmOutcome::Success { bell_index } => Some(bell_index),
            BsmOutcome::Failure => None,
        });
        let from = NodeId::Bsm(link);
        self.send(
            tl,
            kind,
            id,
            from,
            NodeId::Router(link),
            hop.classical_left.delay,
        )?;
        self.send(
            tl,
            kind,
            id,
            from,
            NodeId::Router(link + 1),
            hop.classical_right.delay,
        )
    }

    fn bsm_result(
        &mut self,
        tl: &mut Timeline<Payload>,
        id: SessionId,
        router: usize,
    ) -> Result<(), Fault> {
        let step = self.session_mut(id)?.result_delivered(router)?;
        if router == self.session(id)?.router_b
            && matches!(step, GenStep::Heralded | GenStep::Wait)
            && self.session(id)?.state == GenState::AwaitingCorrection
        {
            self.counters.corrections_applied += 1;
        }
        match step {
            GenStep::Wait => Ok(()),
            GenStep::Heralded => {
                let s = self.session(id)?.clone();
                let pair_id = PairId(self.next_pair);
                self.next_pair += 1;
                let mut pair = WernerPair::new(
                    pair_id,
                    Endpoint {
                        node: NodeId::Router(s.router_a),
                        slot: s.slot_a,
                    },
                    Endpoint {
                        node: NodeId::Router(s.router_b),
                        slot: s.slot_b,
                    },
                    self.w_init,
                    s.emitted_at,
                )
                .map_err(|e| Fault::new(e.to_string()))?;
                pair.refresh(tl.now(), self.tau());
                self.chain.routers[s.router_a]
                    .bind(s.slot_a, pair_id)
                    .map_err(|e| Fault::new(e.to_string()))?;
                self.chain.routers[s.router_b]
                    .bind(s.slot_b, pair_id)
                    .map_err(|e| Fault::new(e.to_string()))?;
                self.pairs.insert(pair_id, pair);
                self.counters.pairs_created += 1;
                self.send(
                    tl,
                    MessageKind::CorrectionAck,
                    id,
                    NodeId::Router(s.router_b),
                    NodeId::Manager,
                    SimTime::ZERO,
                )
            }
            GenStep::Retry => {
                let s = self.session(id)?;
                let (link, emitted_at) = (s.link, s.emitted_at);
                let period = self.chain.routers[link].spec.emit_period();
                let next = emitted_at.checked_add(period).unwrap_or(SimTime(u64::MAX));
                let delay = next.saturating_sub(tl.now());
                self.send(
                    tl,
                    MessageKind::EmitNow,
                    id,
                    NodeId::Manager,
                    NodeId::Router(link),
                    delay,
                )
            }
            GenStep::Exhausted => {
                let s = self.gens.remove(&id).expect("session exists");
                self.chain.routers[s.router_a].release(s.slot_a);
                self.chain.routers[s.router_b].release(s.slot_b);
                self.finish_attempt(
                    tl,
                    AttemptOutcome::Failure {
                        reason: FailureReason::Generation,
                        fidelity: None,
                    },
                )
            }
        }
    }

    fn generation_acknowledged(
        &mut self,
        tl: &mut Timeline<Payload>,
        id: SessionId,
    ) -> Result<(), Fault> {
        let mut s = self
            .gens
            .remove(&id)
            .ok_or_else(|| Fault::new(format!("ack for unknown session {id}")))?;
        s.acknowledged()?;
        let node = self
            .owners
            .remove(&id)
            .ok_or_else(|| Fault::new("generation session without plan node"))?;
        let pair = self
            .pairs
            .iter()
            .find(|(_, p)| {
                p.end_a.node == NodeId::Router(s.router_a)
                    && p.end_a.slot == s.slot_a
                    && p.end_b.node == NodeId::Router(s.router_b)
            })
            .map(|(id, _)| *id)
            .ok_or_else(|| Fault::new("heralded pair missing"))?;
        self.node_ready(tl, node, pair)
    }

    fn session(&self, id: SessionId) -> Result<&GenerationSession, Fault> {
        self.gens
            .get(&id)
            .ok_or_else(|| Fault::new(format!("unknown generation session {id}")))
    }

    fn session_mut(&mut self, id: SessionId) -> Result<&mut GenerationSession, Fault> {
        self.gens
            .get_mut(&id)
            .ok_or_else(|| Fault::new(format!("unknown generation session {id}")))
    }

    // ---- swapping ----------------------------------------------------------

    fn start_swap(
        &mut self,
        tl: &mut Timeline<Payload>,
        left: PairId,
        right: PairId,
        at: usize,
        role: SwapRole,
    ) -> Result<(), Fault> {
        let id = self.new_session_id();
        let tau = self.tau();
        let now = tl.now();
        let mut lp = self
            .pairs
            .remove(&left)
            .ok_or_else(|| Fault::new(format!("swap operand {left:?} already consumed")))?;
        let mut rp = self
            .pairs
            .remove(&right)
            .ok_or_else(|| Fault::new(format!("swap operand {right:?} already consumed")))?;
        if lp.end_b.node != NodeId::Router(at) || rp.end_a.node != NodeId::Router(at) {
            return Err(Fault::new(format!(
                "swap operands do not meet at r{at}"
            )));
        }
        let wl = lp.refresh(now, tau);
        let wr = rp.refresh(now, tau);
        let outer = match (lp.end_a.node, rp.end_b.node) {
            (NodeId::Router(a), NodeId::Router(b)) => (a, b),
            _ => return Err(Fault::new("swap outer endpoint is not a router")),
        };
        let mut session = SwapSession::new(id, left, right, at, outer);
        self.chain.routers[at].release(lp.end_b.slot);
        self.chain.routers[at].release(rp.end_a.slot);
        self.counters.swaps_performed += 1;

        let rng = &mut self.router_rng[at];
        let success = rng.gen_bool(self.chain.swap_success);
        let outcome = if success {
            BsmOutcome::Success {
                bell_index: if rng.gen_bool(0.5) { 2 } else { 3 },
            }
        } else {
            BsmOutcome::Failure
        };

        let BsmOutcome::Success { bell_index } = outcome else {
            self.counters.pairs_destroyed_by_failure += 2;
            self.release_endpoint(lp.end_a);
            self.release_endpoint(rp.end_b);
            session.measured(outcome, None)?;
            return self.finish_attempt(
                tl,
                AttemptOutcome::Failure {
                    reason: FailureReason::Swap,
                    fidelity: None,
                },
            );
        };
        self.counters.bsm_successes += 1;
        self.counters.pairs_consumed_by_swap += 2;

        let w = swap_compose(wl, wr);
        let out_id = PairId(self.next_pair);
        self.next_pair += 1;
        let out = WernerPair::new(out_id, lp.end_a, rp.end_b, w, now)
            .map_err(|e| Fault::new(e.to_string()))?;
        if out.fidelity() > lp.fidelity().min(rp.fidelity()) + 1e-12 {
            self.counters.causality_violations += 1;
        }
        self.chain.routers[outer.0]
            .rebind(lp.end_a.slot, out_id)
            .map_err(|e| Fault::new(e.to_string()))?;
        self.chain.routers[outer.1]
            .rebind(rp.end_b.slot, out_id)
            .map_err(|e| Fault::new(e.to_string()))?;
        self.pairs.insert(out_id, out);
        self.counters.pairs_produced_by_swap += 1;
        session.measured(outcome, Some(out_id))?;
        self.swaps.insert(id, session);
        self.swap_roles.insert(id, role);

        let kind = MessageKind::SwapResult(Some(bell_index));
        let from = NodeId::Router(at);
        let d0 = self.chain.classical_delay(at, outer.0);
        let d1 = self.chain.classical_delay(at, outer.1);
        self.send(tl, kind, id, from, NodeId::Router(outer.0), d0)?;
        self.send(tl, kind, id, from, NodeId::Router(outer.1), d1)
    }

    fn swap_result(
        &mut self,
        tl: &mut Timeline<Payload>,
        id: SessionId,
        router: usize,
    ) -> Result<(), Fault> {
        let session = self
            .swaps
            .get_mut(&id)
            .ok_or_else(|| Fault::new(format!("unknown swap session {id}")))?;
        let corrected_here = router == session.outer.1;
        let complete = session.result_delivered(router)?;
        if corrected_here {
            self.counters.corrections_applied += 1;
        }
        if complete {
            let outer_right = session.outer.1;
            self.send(
                tl,
                MessageKind::CorrectionAck,
                id,
                NodeId::Router(outer_right),
                NodeId::Manager,
                SimTime::ZERO,
            )?;
        }
        Ok(())
    }

    fn swap_acknowledged(&mut self, tl: &mut Timeline<Payload>, id: SessionId) -> Result<(), Fault> {
        let mut s = self
            .swaps
            .remove(&id)
            .ok_or_else(|| Fault::new(format!("ack for unknown swap {id}")))?;
        s.acknowledged()?;
        debug_assert_eq!(s.state, SwapState::Done);
        let out = s.output.ok_or_else(|| Fault::new("swap without output"))?;
        let role = self
            .swap_roles
            .remove(&id)
            .ok_or_else(|| Fault::new("swap without plan role"))?;
        match role.side {
            Side::Whole => self.node_ready(tl, role.node, out),
            Side::Left | Side::Right => {
                let n = &mut self.plan[role.node];
                n.core = Some(out);
                n.busy = false;
                if role.side == Side::Left {
                    n.left_joined = true;
                } else {
                    n.right_joined = true;
                }
                self.advance_pivot(tl, role.node)
            }
        }
    }

    fn check_invariants(&mut self) {
        if self.pairs.len() as i64 != self.counters.expected_live() {
            self.counters.conservation_violations += 1;
        }
    }

    /// Closes the run: an attempt still open at the horizon fails, as do the
    /// attempts that never started.
    pub fn finalize(mut self, tl: &mut Timeline<Payload>) -> RunOutput {
        if self.in_progress {
            self.abort_live(tl);
            self.in_progress = false;
            self.records.push(AttemptRecord {
                index: self.records.len(),
                bias: self.current_bias,
                outcome: AttemptOutcome::Failure {
                    reason: FailureReason::Horizon,
                    fidelity: None,
                },
                started_at: self.attempt_started,
                finished_at: tl.horizon(),
            });
        }
        while self.records.len() < self.attempts_wanted {
            let index = self.records.len();
            self.records.push(AttemptRecord {
                index,
                bias: self.bias_policy.bias(self.chain.router_count(), index),
                outcome: AttemptOutcome::Failure {
                    reason: FailureReason::Horizon,
                    fidelity: None,
                },
                started_at: tl.horizon(),
                finished_at: tl.horizon(),
            });
        }
        if !self.chain.all_memories_free() {
            self.counters.slot_leaks += 1;
        }
        if self.counters.corrections_applied + self.counters.corrections_voided
            != self.counters.bsm_successes
        {
            self.counters.correction_mismatches += 1;
        }
        self.check_invariants();
        RunOutput {
            router_count: self.chain.router_count(),
            bsm_count: self.chain.bsm_count(),
            attempts: self.records,
            counters: self.counters,
            trace: self.trace.unwrap_or_default(),
            end_time: tl.now(),
        }
    }
}

impl Handler<Payload> for Manager {
    fn handle(&mut self, tl: &mut Timeline<Payload>, event: Event<Payload>) -> Result<(), Fault> {
        match event.payload {
            Payload::StartAttempt => self.start_attempt(tl)?,
            Payload::BsmWindow { session } => self.bsm_window(tl, session)?,
            Payload::Deliver(msg) => match (msg.kind, msg.to) {
                (MessageKind::EmitNow, NodeId::Router(_)) => self.emit(tl, msg.session)?,
                (MessageKind::BsmResult(_), NodeId::Router(r)) => {
                    self.bsm_result(tl, msg.session, r)?
                }
                (MessageKind::SwapResult(_), NodeId::Router(r)) => {
                    self.swap_result(tl, msg.session, r)?
                }
                (MessageKind::CorrectionAck, NodeId::Manager) => {
                    if self.gens.contains_key(&msg.session) {
                        self.generation_acknowledged(tl, msg.session)?
                    } else {
                        self.swap_acknowledged(tl, msg.session)?
                    }
                }
                (kind, to) => {
                    return Err(Fault::new(format!("{kind:?} misrouted to {to}")));
                }
            },
        }
        self.check_invariants();
        Ok(())
    }
}

/// Runs one configuration: `attempts` serial end-to-end attempts on a freshly
/// built chain.
pub fn simulate(config: &RunConfig) -> Result<RunOutput, SimError> {
    let chain = build_chain(&config.topology).map_err(|e| SimError::Config(e.to_string()))?;
    if !(0.0..=1.0).contains(&config.f_threshold) {
        return Err(SimError::Config(format!(
            "f_threshold {} outside [0, 1]",
            config.f_threshold
        )));
    }
    if config.retry_budget == 0 {
        return Err(SimError::Config("retry budget must be >= 1".into()));
    }
    let mut tl = Timeline::new(config.horizon, config.seed);
    let mut manager = Manager::new(chain, config, &tl)?;
    if config.attempts > 0 {
        tl.schedule(SimTime::ZERO, NodeId::Manager, Payload::StartAttempt)?;
    }
    tl.run(&mut manager)?;
    Ok(manager.finalize(&mut tl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardware::MemorySpec;

    pub(crate) fn ideal_hw() -> HardwareProfile {
        HardwareProfile {
            memory: MemorySpec {
                slots: 50,
                tau_coh: SimTime::from_secs_f64(1.0).unwrap(),
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

    fn config(routers: usize, km: f64, hw: HardwareProfile) -> RunConfig {
        RunConfig {
            topology: TopologySpec::homogeneous(routers, km, &hw),
            attempts: 20,
            retry_budget: 10,
            f_threshold: 0.5,
            horizon: SimTime::from_secs_f64(100.0).unwrap(),
            seed: 7,
            trace: false,
            bias: BiasPolicy::default(),
        }
    }

    #[test]
    fn build_chain_midpoint_stations() {
        let chain = build_chain(&TopologySpec::homogeneous(2, 100.0, &ideal_hw())).unwrap();
        assert_eq!(chain.bsm_count(), 1);
        assert_eq!(chain.hops[0].left.length_km, 50.0);
        assert_eq!(chain.hops[0].right.length_km, 50.0);

        let spec = TopologySpec {
            hop_distances_km: vec![400.0, 600.0],
            hardware: ideal_hw(),
        };
        let chain = build_chain(&spec).unwrap();
        assert_eq!(chain.bsm_count(), 2);
        assert_eq!(chain.hops[0].left.length_km, 200.0);
        assert_eq!(chain.hops[1].left.length_km, 300.0);
        // 4 quantum segments, matching classical ones
        assert_eq!(chain.hops.len() * 2, 4);
    }

    #[test]
    fn homogeneous_eleven_routers_over_1000_km() {
        let spec = TopologySpec::homogeneous(11, 1000.0, &ideal_hw());
        assert_eq!(spec.hop_distances_km.len(), 10);
        assert!(spec.hop_distances_km.iter().all(|&d| (d - 100.0).abs() < 1e-9));
        assert_eq!(build_chain(&spec).unwrap().router_count(), 11);
    }

    #[test]
    fn build_chain_rejects_bad_specs() {
        let spec = TopologySpec {
            hop_distances_km: vec![],
            hardware: ideal_hw(),
        };
        assert!(matches!(build_chain(&spec), Err(NetworkError::TooFewRouters(_))));
        let spec = TopologySpec {
            hop_distances_km: vec![10.0, -1.0],
            hardware: ideal_hw(),
        };
        assert!(matches!(
            build_chain(&spec),
            Err(NetworkError::BadHop { index: 1, .. })
        ));
    }

    #[test]
    fn plan_shapes() {
        assert_eq!(plan_swap_order(2, RootBias::Left), SwapTree::Link(0));
        for n in 2..=19 {
            for bias in [RootBias::Left, RootBias::Right] {
                let t = plan_swap_order(n, bias);
                assert_eq!(t.leaf_count(), n - 1);
                assert_eq!(t.swap_count(), n - 2);
                assert_eq!(t.links(), (0..n - 1).collect::<Vec<_>>());
                let swaps = t.swap_routers();
                assert_eq!(swaps, (1..n - 1).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn even_router_counts_pivot_on_the_central_station() {
        // 4 routers, 3 links: central station b1
        let t = plan_swap_order(4, RootBias::Left);
        assert_eq!(t, plan_swap_order(4, RootBias::Right));
        match t {
            SwapTree::Pivot {
                link,
                left,
                right,
                source_first,
            } => {
                assert_eq!(link, 1);
                assert!(!source_first);
                assert_eq!(left.unwrap().leaf_count(), right.unwrap().leaf_count());
            }
            other => panic!("unexpected root {other:?}"),
        }
    }

    #[test]
    fn odd_router_counts_alternate_the_root() {
        // 5 routers, 4 links
        let left = plan_swap_order(5, RootBias::Left);
        let right = plan_swap_order(5, RootBias::Right);
        let pivot = |t: &SwapTree| match t {
            SwapTree::Pivot {
                link, source_first, ..
            } => {
                assert!(source_first);
                *link
            }
            other => panic!("unexpected root {other:?}"),
        };
        assert_eq!(pivot(&left), 1);
        assert_eq!(pivot(&right), 2);
        assert_eq!(RootBias::for_router_count(3), Some(RootBias::Left));
        assert_eq!(RootBias::for_router_count(5), Some(RootBias::Right));
        assert_eq!(RootBias::for_router_count(7), Some(RootBias::Left));
        assert_eq!(RootBias::for_router_count(6), None);
    }

    #[test]
    fn two_router_ideal_request_succeeds_every_time() {
        let out = simulate(&config(2, 100.0, ideal_hw())).unwrap();
        assert_eq!(out.successes(), 20);
        // one round: 250 us to the station, 250 us back; f_init = 1
        let expected = fidelity_of((-(5.0e-4f64) / 1.0).exp()).unwrap();
        for a in &out.attempts {
            let f = a.outcome.fidelity().unwrap();
            assert!((f - expected).abs() < 1e-12, "{f} vs {expected}");
        }
        assert_eq!(out.counters.violations(), 0);
    }

    #[test]
    fn dead_link_never_succeeds() {
        let mut hw = ideal_hw();
        hw.attenuation_db_per_km = 1.0e4;
        let out = simulate(&config(3, 100.0, hw)).unwrap();
        assert_eq!(out.successes(), 0);
        assert!(out.attempts.iter().all(|a| matches!(
            a.outcome,
            AttemptOutcome::Failure {
                reason: FailureReason::Generation,
                ..
            }
        )));
        assert_eq!(out.counters.violations(), 0);
    }

    #[test]
    fn failed_swaps_destroy_operands_and_release_slots() {
        let mut hw = ideal_hw();
        hw.swap_success = 0.0;
        let out = simulate(&config(3, 100.0, hw)).unwrap();
        assert_eq!(out.successes(), 0);
        assert!(out.counters.pairs_destroyed_by_failure >= 40);
        assert_eq!(out.counters.violations(), 0);
    }

    #[test]
    fn trace_is_deterministic_and_ordered() {
        let mut c = config(5, 500.0, {
            let mut hw = ideal_hw();
            hw.bsm.intrinsic_success = 0.5;
            hw.attenuation_db_per_km = 0.01;
            hw
        });
        c.trace = true;
        let a = simulate(&c).unwrap();
        let b = simulate(&c).unwrap();
        assert_eq!(a.trace, b.trace);
        assert!(!a.trace.is_empty());
        let first: serde_json::Value = serde_json::from_str(&a.trace[0]).unwrap();
        let keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
        for k in ["t", "from", "to", "kind", "session"] {
            assert!(keys.contains(&k.to_string()));
        }
        let times: Vec<u64> = a
            .trace
            .iter()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["t"].as_u64().unwrap())
            .collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn horizon_fails_the_open_attempt() {
        let mut c = config(2, 100.0, ideal_hw());
        // shorter than one generation round
        c.horizon = SimTime::from_secs_f64(1.0e-4).unwrap();
        let out = simulate(&c).unwrap();
        assert_eq!(out.attempts.len(), 20);
        assert!(out.attempts.iter().all(|a| matches!(
            a.outcome,
            AttemptOutcome::Failure {
                reason: FailureReason::Horizon,
                ..
            }
        )));
        assert_eq!(out.counters.violations(), 0);
    }

    #[test]
    fn single_slot_interior_router_is_a_config_error() {
        let mut hw = ideal_hw();
        hw.memory.slots = 1;
        assert!(matches!(
            simulate(&config(3, 10.0, hw)),
            Err(SimError::Config(_))
        ));
    }
}
