//! Session state machines for heralded entanglement generation and
//! entanglement swapping, plus the classical control messages they exchange.

use serde::Serialize;

use crate::hardware::{photon_survival, BsmOutcome, BsmSpec, QuantumChannelSpec};
use crate::sim::{Fault, NodeId, SimTime};
use crate::state::{apply_correction, CorrectionFrame, PairId};

pub type SessionId = u64;

/// Success probability of one emission round on a link: both photons must
/// survive their fiber arm and the station must herald a Bell outcome.
pub fn generation_attempt_probability(
    chan_a: &QuantumChannelSpec,
    chan_b: &QuantumChannelSpec,
    bsm: &BsmSpec,
) -> f64 {
    bsm.effective_success() * photon_survival(chan_a) * photon_survival(chan_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    EmitNow,
    /// `None` is a failed measurement.
    BsmResult(Option<u8>),
    CorrectionAck,
    SwapResult(Option<u8>),
}

impl MessageKind {
    pub fn label(&self) -> String {
        match self {
            MessageKind::EmitNow => "EmitNow".to_string(),
            MessageKind::BsmResult(Some(i)) => format!("BsmResult:{i}"),
            MessageKind::BsmResult(None) => "BsmResult:failure".to_string(),
            MessageKind::CorrectionAck => "CorrectionAck".to_string(),
            MessageKind::SwapResult(Some(i)) => format!("SwapResult:{i}"),
            MessageKind::SwapResult(None) => "SwapResult:failure".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlMessage {
    pub kind: MessageKind,
    pub session: SessionId,
    pub sent_at: SimTime,
    pub from: NodeId,
    pub to: NodeId,
}

/// One line of the debug message trace.
#[derive(Debug, Serialize)]
pub struct TraceLine {
    pub t: u64,
    pub from: String,
    pub to: String,
    pub kind: String,
    pub session: SessionId,
}

impl From<&ControlMessage> for TraceLine {
    fn from(m: &ControlMessage) -> Self {
        TraceLine {
            t: m.sent_at.as_ps(),
            from: m.from.to_string(),
            to: m.to.to_string(),
            kind: m.kind.label(),
            session: m.session,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenState {
    Idle,
    Emitting,
    AwaitingBsm,
    AwaitingCorrection,
    Done,
    Failed,
}

impl GenState {
    pub fn is_terminal(self) -> bool {
        matches!(self, GenState::Done | GenState::Failed)
    }
}

/// What the owner must do after a BSM result has reached a router.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenStep {
    /// Still waiting on the other router.
    Wait,
    /// Heralded; the pair exists and its correction has been applied.
    Heralded,
    /// Failed round with budget left.
    Retry,
    /// Retry budget exhausted.
    Exhausted,
}

#[derive(Debug, Clone)]
pub struct GenerationSession {
    pub id: SessionId,
    pub link: usize,
    pub router_a: usize,
    pub router_b: usize,
    pub slot_a: usize,
    pub slot_b: usize,
    pub state: GenState,
    pub attempt: u32,
    pub max_attempts: u32,
    pub emitted_at: SimTime,
    outcome: Option<BsmOutcome>,
    frame: Option<CorrectionFrame>,
    results_pending: u8,
}

impl GenerationSession {
    pub fn new(
        id: SessionId,
        link: usize,
        slot_a: usize,
        slot_b: usize,
        max_attempts: u32,
    ) -> Self {
        GenerationSession {
            id,
            link,
            router_a: link,
            router_b: link + 1,
            slot_a,
            slot_b,
            state: GenState::Idle,
            attempt: 0,
            max_attempts,
            emitted_at: SimTime::ZERO,
            outcome: None,
            frame: None,
            results_pending: 0,
        }
    }

    fn transition(&mut self, to: GenState) -> Result<(), Fault> {
        use GenState::*;
        let ok = matches!(
            (self.state, to),
            (Idle, Emitting)
                | (Emitting, AwaitingBsm)
                | (AwaitingBsm, Emitting)
                | (AwaitingBsm, AwaitingCorrection)
                | (AwaitingCorrection, Done)
        ) || (!self.state.is_terminal() && to == Failed);
        if !ok {
            return Err(Fault::new(format!(
                "generation session {}: illegal transition {:?} -> {:?}",
                self.id, self.state, to
            )));
        }
        self.state = to;
        Ok(())
    }

    pub fn start(&mut self) -> Result<(), Fault> {
        self.transition(GenState::Emitting)
    }

    pub fn emitted(&mut self, at: SimTime) -> Result<(), Fault> {
        if self.attempt >= self.max_attempts {
            return Err(Fault::new(format!(
                "generation session {} emitted beyond its budget",
                self.id
            )));
        }
        self.transition(GenState::AwaitingBsm)?;
        self.attempt += 1;
        self.emitted_at = at;
        Ok(())
    }

    /// Records the station's verdict; two result messages are now in flight.
    pub fn measured(&mut self, outcome: BsmOutcome) -> Result<(), Fault> {
        if self.state != GenState::AwaitingBsm || self.outcome.is_some() {
            return Err(Fault::new(format!(
                "generation session {}: unexpected BSM outcome",
                self.id
            )));
        }
        self.outcome = Some(outcome);
        if let BsmOutcome::Success { bell_index } = outcome {
            self.frame = Some(CorrectionFrame::from_bell_index(bell_index));
        }
        self.results_pending = 2;
        Ok(())
    }

    /// Handles arrival of a result message at `router`. The far router
    /// (`router_b`) applies the Pauli correction.
    pub fn result_delivered(&mut self, router: usize) -> Result<GenStep, Fault> {
        if self.results_pending == 0 {
            return Err(Fault::new(format!(
                "generation session {}: duplicate BSM result",
                self.id
            )));
        }
        self.results_pending -= 1;
        let outcome = self.outcome.expect("measured before delivery");
        if let BsmOutcome::Success { .. } = outcome {
            if self.state == GenState::AwaitingBsm {
                self.transition(GenState::AwaitingCorrection)?;
            }
            if router == self.router_b {
                let frame = self.frame.take().ok_or_else(|| {
                    Fault::new(format!("generation session {}: correction replayed", self.id))
                })?;
                apply_correction(frame).map_err(|e| Fault::new(e.to_string()))?;
            }
        }
        if self.results_pending > 0 {
            return Ok(GenStep::Wait);
        }
        self.outcome = None;
        match outcome {
            BsmOutcome::Success { .. } => Ok(GenStep::Heralded),
            BsmOutcome::Failure if self.attempt < self.max_attempts => {
                self.transition(GenState::Emitting)?;
                Ok(GenStep::Retry)
            }
            BsmOutcome::Failure => {
                self.transition(GenState::Failed)?;
                Ok(GenStep::Exhausted)
            }
        }
    }

    pub fn acknowledged(&mut self) -> Result<(), Fault> {
        self.transition(GenState::Done)
    }

    /// Aborts the session. Returns true if a heralded correction was discarded.
    pub fn abort(&mut self) -> bool {
        if !self.state.is_terminal() {
            self.state = GenState::Failed;
        }
        self.frame.take().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwapState {
    Ready,
    Measured,
    Corrected,
    Done,
    Failed,
}

#[derive(Debug, Clone)]
pub struct SwapSession {
    pub id: SessionId,
    pub left: PairId,
    pub right: PairId,
    /// Router holding the two inner endpoints.
    pub at: usize,
    /// Routers holding the outer endpoints.
    pub outer: (usize, usize),
    pub state: SwapState,
    pub output: Option<PairId>,
    frame: Option<CorrectionFrame>,
    results_pending: u8,
}

impl SwapSession {
    pub fn new(id: SessionId, left: PairId, right: PairId, at: usize, outer: (usize, usize)) -> Self {
        SwapSession {
            id,
            left,
            right,
            at,
            outer,
            state: SwapState::Ready,
            output: None,
            frame: None,
            results_pending: 0,
        }
    }

    pub fn measured(&mut self, outcome: BsmOutcome, output: Option<PairId>) -> Result<(), Fault> {
        if self.state != SwapState::Ready {
            return Err(Fault::new(format!(
                "swap session {}: operands already consumed",
                self.id
            )));
        }
        match outcome {
            BsmOutcome::Success { bell_index } => {
                self.state = SwapState::Measured;
                self.frame = Some(CorrectionFrame::from_bell_index(bell_index));
                self.output = output;
                self.results_pending = 2;
            }
            BsmOutcome::Failure => self.state = SwapState::Failed,
        }
        Ok(())
    }

    /// Result arrival at an outer router; the right-hand end corrects.
    /// Returns true once both ends are informed and corrected.
    pub fn result_delivered(&mut self, router: usize) -> Result<bool, Fault> {
        if self.state != SwapState::Measured || self.results_pending == 0 {
            return Err(Fault::new(format!(
                "swap session {}: unexpected result delivery",
                self.id
            )));
        }
        self.results_pending -= 1;
        if router == self.outer.1 {
            let frame = self.frame.take().ok_or_else(|| {
                Fault::new(format!("swap session {}: correction replayed", self.id))
            })?;
            apply_correction(frame).map_err(|e| Fault::new(e.to_string()))?;
        }
        if self.results_pending == 0 {
            self.state = SwapState::Corrected;
            return Ok(true);
        }
        Ok(false)
    }

    pub fn acknowledged(&mut self) -> Result<(), Fault> {
        if self.state != SwapState::Corrected {
            return Err(Fault::new(format!(
                "swap session {}: acknowledged before correction",
                self.id
            )));
        }
        self.state = SwapState::Done;
        Ok(())
    }

    pub fn abort(&mut self) -> bool {
        if !matches!(self.state, SwapState::Done | SwapState::Failed) {
            self.state = SwapState::Failed;
        }
        self.frame.take().is_some()
    }
}
