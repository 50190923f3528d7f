//! Werner-parameter model of entangled pair quality.
//!
//! A pair is summarised by its Werner parameter `w`: the state is
//! `w |Φ⁺⟩⟨Φ⁺| + (1 - w) I/4`, so fidelity is `(1 + 3w) / 4`. Storage decays
//! `w` exponentially toward the maximally mixed state and swapping multiplies
//! the parameters of the two operands.

use thiserror::Error;

use crate::sim::{NodeId, SimTime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("Werner parameter {0} outside [0, 1]")]
    Domain(f64),
    #[error("fidelity {0} outside [0.25, 1]")]
    FidelityDomain(f64),
    #[error("correction frame already cleared")]
    DoubleCorrection,
}

pub const FIDELITY_FLOOR: f64 = 0.25;

pub fn fidelity_of(w: f64) -> Result<f64, StateError> {
    if !(0.0..=1.0).contains(&w) {
        return Err(StateError::Domain(w));
    }
    Ok((1.0 + 3.0 * w) / 4.0)
}

/// Inverse of [`fidelity_of`].
pub fn werner_of(fidelity: f64) -> Result<f64, StateError> {
    if !(FIDELITY_FLOOR..=1.0).contains(&fidelity) {
        return Err(StateError::FidelityDomain(fidelity));
    }
    Ok((4.0 * fidelity - 1.0) / 3.0)
}

pub fn decay(w: f64, elapsed: SimTime, tau_coh: SimTime) -> f64 {
    debug_assert!(tau_coh.as_ps() > 0);
    let ratio = elapsed.as_ps() as f64 / tau_coh.as_ps() as f64;
    (w * (-ratio).exp()).clamp(0.0, 1.0)
}

pub fn swap_compose(w1: f64, w2: f64) -> f64 {
    (w1 * w2).clamp(0.0, 1.0)
}

/// Pauli corrections still owed on a freshly heralded pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrectionFrame {
    pub pending_x: bool,
    pub pending_z: bool,
}

impl CorrectionFrame {
    /// Frame for a heralded Bell outcome, indices ordered Φ⁺, Φ⁻, Ψ⁺, Ψ⁻.
    pub fn from_bell_index(index: u8) -> Self {
        CorrectionFrame {
            pending_x: index & 0b10 != 0,
            pending_z: index & 0b01 != 0,
        }
    }

    pub fn is_clear(&self) -> bool {
        !self.pending_x && !self.pending_z
    }
}

pub fn apply_correction(frame: CorrectionFrame) -> Result<CorrectionFrame, StateError> {
    if frame.is_clear() {
        return Err(StateError::DoubleCorrection);
    }
    Ok(CorrectionFrame {
        pending_x: false,
        pending_z: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairId(pub u64);

/// One end of a pair: a memory slot on a router.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Endpoint {
    pub node: NodeId,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WernerPair {
    pub id: PairId,
    pub end_a: Endpoint,
    pub end_b: Endpoint,
    w: f64,
    pub created_at: SimTime,
    pub last_touched: SimTime,
}

impl WernerPair {
    pub fn new(
        id: PairId,
        end_a: Endpoint,
        end_b: Endpoint,
        w: f64,
        created_at: SimTime,
    ) -> Result<Self, StateError> {
        if !(0.0..=1.0).contains(&w) {
            return Err(StateError::Domain(w));
        }
        debug_assert_ne!(end_a, end_b);
        Ok(WernerPair {
            id,
            end_a,
            end_b,
            w,
            created_at,
            last_touched: created_at,
        })
    }

    /// Brings `w` forward to `now` and returns it.
    pub fn refresh(&mut self, now: SimTime, tau_coh: SimTime) -> f64 {
        let elapsed = now.saturating_sub(self.last_touched);
        self.w = decay(self.w, elapsed, tau_coh);
        self.last_touched = self.last_touched.max(now);
        self.w
    }

    /// Werner parameter as of `last_touched`.
    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn fidelity(&self) -> f64 {
        (1.0 + 3.0 * self.w) / 4.0
    }
}
