//! Physical-layer models: memories, fiber segments, classical links and
//! Bell-state-measurement stations.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{NodeId, SimTime};
use crate::state::PairId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HardwareError {
    #[error("slot {slot} on {node} is not reserved for emission")]
    Unreserved { node: NodeId, slot: usize },
    #[error("slot {slot} on {node} is already in use")]
    Busy { node: NodeId, slot: usize },
    #[error("{node} has no free memory slot")]
    Exhausted { node: NodeId },
    #[error("slot {slot} out of range on {node}")]
    NoSuchSlot { node: NodeId, slot: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySpec {
    pub slots: usize,
    pub tau_coh: SimTime,
    pub f_init: f64,
    pub emit_frequency_hz: f64,
}

impl MemorySpec {
    pub fn emit_period(&self) -> SimTime {
        SimTime::from_secs_f64(1.0 / self.emit_frequency_hz).unwrap_or(SimTime(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumChannelSpec {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    pub light_speed_km_per_s: f64,
}

pub fn photon_survival(chan: &QuantumChannelSpec) -> f64 {
    10f64.powf(-chan.attenuation_db_per_km * chan.length_km / 10.0)
}

pub fn propagation_delay(chan: &QuantumChannelSpec) -> SimTime {
    SimTime::from_secs_f64(chan.length_km / chan.light_speed_km_per_s)
        .expect("validated channel length")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalChannelSpec {
    pub delay: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsmSpec {
    pub intrinsic_success: f64,
    pub detector_efficiency: f64,
}

impl Default for BsmSpec {
    fn default() -> Self {
        BsmSpec {
            intrinsic_success: 0.5,
            detector_efficiency: 1.0,
        }
    }
}

impl BsmSpec {
    pub fn effective_success(&self) -> f64 {
        self.intrinsic_success * self.detector_efficiency * self.detector_efficiency
    }
}

/// Complete physical parameter set applied uniformly to a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub memory: MemorySpec,
    pub attenuation_db_per_km: f64,
    pub light_speed_km_per_s: f64,
    /// Added to the light-travel time of every classical segment.
    pub classical_extra_delay: SimTime,
    pub bsm: BsmSpec,
    /// Position of each station along its hop, as a fraction from the left router.
    pub bsm_fraction: f64,
    /// Success probability of the local Bell measurement performed by a
    /// router when it swaps.
    pub swap_success: f64,
}

/// Heralded outcome of a Bell-state measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsmOutcome {
    Success { bell_index: u8 },
    Failure,
}

/// Only the two Ψ states produce a distinguishable two-click pattern with
/// linear optics.
const HERALDED_BELL_STATES: [u8; 2] = [2, 3];

pub fn bsm_outcome<R: Rng + ?Sized>(
    photon_a: bool,
    photon_b: bool,
    spec: &BsmSpec,
    rng: &mut R,
) -> BsmOutcome {
    if !(photon_a && photon_b) {
        return BsmOutcome::Failure;
    }
    if rng.gen_bool(spec.effective_success().clamp(0.0, 1.0)) {
        let bell_index = HERALDED_BELL_STATES[rng.gen_range(0..HERALDED_BELL_STATES.len())];
        BsmOutcome::Success { bell_index }
    } else {
        BsmOutcome::Failure
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotState {
    Free,
    Reserved { session: u64 },
    Holding { pair: PairId },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photon {
    pub source: NodeId,
    pub slot: usize,
    pub emitted_at: SimTime,
    pub session: u64,
}

/// Quantum memory bank of one router.
#[derive(Debug, Clone)]
pub struct Memory {
    pub node: NodeId,
    pub spec: MemorySpec,
    slots: Vec<SlotState>,
    last_emit: Vec<Option<SimTime>>,
}

impl Memory {
    pub fn new(node: NodeId, spec: MemorySpec) -> Self {
        let n = spec.slots;
        Memory {
            node,
            spec,
            slots: vec![SlotState::Free; n],
            last_emit: vec![None; n],
        }
    }

    pub fn slot(&self, slot: usize) -> Option<SlotState> {
        self.slots.get(slot).copied()
    }

    pub fn reserve(&mut self, session: u64) -> Result<usize, HardwareError> {
        let slot = self
            .slots
            .iter()
            .position(|s| *s == SlotState::Free)
            .ok_or(HardwareError::Exhausted { node: self.node })?;
        self.slots[slot] = SlotState::Reserved { session };
        Ok(slot)
    }

    /// Binds a reserved slot to the pair it now holds.
    pub fn bind(&mut self, slot: usize, pair: PairId) -> Result<(), HardwareError> {
        match self.slots.get(slot) {
            Some(SlotState::Reserved { .. }) => {
                self.slots[slot] = SlotState::Holding { pair };
                Ok(())
            }
            Some(_) => Err(HardwareError::Busy {
                node: self.node,
                slot,
            }),
            None => Err(HardwareError::NoSuchSlot {
                node: self.node,
                slot,
            }),
        }
    }

    /// Re-points a holding slot at a new pair (after a swap extends it).
    pub fn rebind(&mut self, slot: usize, pair: PairId) -> Result<(), HardwareError> {
        match self.slots.get(slot) {
            Some(SlotState::Holding { .. }) => {
                self.slots[slot] = SlotState::Holding { pair };
                Ok(())
            }
            _ => Err(HardwareError::Unreserved {
                node: self.node,
                slot,
            }),
        }
    }

    pub fn release(&mut self, slot: usize) {
        if let Some(s) = self.slots.get_mut(slot) {
            *s = SlotState::Free;
            self.last_emit[slot] = None;
        }
    }

    pub fn free_slots(&self) -> usize {
        self.slots.iter().filter(|s| **s == SlotState::Free).count()
    }

    pub fn all_free(&self) -> bool {
        self.free_slots() == self.slots.len()
    }

    /// Emits a photon entangled with the qubit in `slot`. Emission is spaced
    /// at least one excitation period after the previous one from that slot.
    pub fn try_emit(&mut self, slot: usize, now: SimTime) -> Result<Photon, HardwareError> {
        let session = match self.slots.get(slot) {
            Some(SlotState::Reserved { session }) => *session,
            Some(_) => {
                return Err(HardwareError::Unreserved {
                    node: self.node,
                    slot,
                })
            }
            None => {
                return Err(HardwareError::NoSuchSlot {
                    node: self.node,
                    slot,
                })
            }
        };
        let period = self.spec.emit_period();
        let emitted_at = match self.last_emit[slot] {
            Some(prev) => now.max(prev.checked_add(period).unwrap_or(SimTime(u64::MAX))),
            None => now,
        };
        self.last_emit[slot] = Some(emitted_at);
        Ok(Photon {
            source: self.node,
            slot,
            emitted_at,
            session,
        })
    }
}
