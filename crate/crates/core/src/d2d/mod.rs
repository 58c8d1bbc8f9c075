//! Device-to-device operation without base station or core: beacon-based
//! discovery, random-access association, peer reservations and teardown.

pub mod connectivity;
pub mod protocol;

use alloc::vec::Vec;

use thiserror::Error;

use crate::engine::SimTime;
use crate::traffic::UeId;

pub const FRAME_MS: u64 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum D2dError {
    #[error("beacon interval {0} ms is not a positive multiple of the 10 ms radio frame")]
    BeaconIntervalOffGrid(u64),
    #[error("beacon overhead {0} must lie in (0, 1] and the beacon must fit in one radio frame")]
    BeaconOverhead(f64),
    #[error("at least one preamble is required")]
    NoPreambles,
    #[error("max_attempts must be at least 1")]
    NoAttempts,
    #[error("(1 - phi) * M = {value} is not an integer (phi = {phi}, M = {m})")]
    NonIntegralCandidates { m: usize, phi: f64, value: f64 },
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("parameter out of range: {0}")]
    Param(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct D2dConfig {
    pub toi_ms: u64,
    /// Beacon interval T_D.
    pub td_ms: u64,
    /// Beacon duration as a fraction of T_D.
    pub beacon_overhead: f64,
    pub preambles: u32,
    pub max_attempts: u32,
    /// Backoff window cap, in beacon intervals.
    pub backoff_cap_periods: u32,
    pub rotation: bool,
    /// Beacons a b-UE sends before handing the role over.
    pub rotation_periods: u32,
    /// Optional proximity cap on the budget-derived decode range.
    pub range_cap_m: Option<f64>,
    /// Optional cap on the PBCH detection range.
    pub pbch_range_cap_m: Option<f64>,
    pub scan_period_ms: u64,
    /// Extra listening, uniform in `0..=listen_jitter_frames` frames, drawn
    /// each time a UE listens again after falling out of a network.
    pub listen_jitter_frames: u32,
    /// A b-UE that has admitted nobody after this many of its own beacons
    /// gives up and listens again; 0 disables.
    pub lonely_periods: u32,
    pub missed_beacon_limit: u32,
    pub reserved_pusch_slots: u32,
    pub data_pusch_slots: u32,
    pub slot_bytes: u32,
    /// Capture effect: the strongest of colliding beacons is decoded when it
    /// exceeds the runner-up by this margin. Off by default.
    pub capture_threshold_db: Option<f64>,
}

impl Default for D2dConfig {
    fn default() -> Self {
        D2dConfig {
            toi_ms: 200,
            td_ms: 80,
            beacon_overhead: 0.1,
            preambles: 64,
            max_attempts: 8,
            backoff_cap_periods: 16,
            rotation: false,
            rotation_periods: 50,
            range_cap_m: None,
            pbch_range_cap_m: None,
            scan_period_ms: 1000,
            listen_jitter_frames: 8,
            lonely_periods: 8,
            missed_beacon_limit: 2,
            reserved_pusch_slots: 2,
            data_pusch_slots: 6,
            slot_bytes: 700,
            capture_threshold_db: None,
        }
    }
}

impl D2dConfig {
    pub fn validate(&self) -> Result<(), D2dError> {
        if self.td_ms == 0 || self.td_ms % FRAME_MS != 0 {
            return Err(D2dError::BeaconIntervalOffGrid(self.td_ms));
        }
        let beacon_ms = self.beacon_overhead * self.td_ms as f64;
        if !(self.beacon_overhead > 0.0 && self.beacon_overhead <= 1.0) || beacon_ms > FRAME_MS as f64 {
            return Err(D2dError::BeaconOverhead(self.beacon_overhead));
        }
        if self.preambles == 0 {
            return Err(D2dError::NoPreambles);
        }
        if self.max_attempts == 0 {
            return Err(D2dError::NoAttempts);
        }
        if self.backoff_cap_periods == 0 {
            return Err(D2dError::Param("backoff_cap_periods"));
        }
        if self.scan_period_ms == 0 {
            return Err(D2dError::Param("scan_period_ms"));
        }
        if self.missed_beacon_limit == 0 {
            return Err(D2dError::Param("missed_beacon_limit"));
        }
        if self.reserved_pusch_slots == 0 {
            return Err(D2dError::Param("reserved_pusch_slots"));
        }
        if self.data_pusch_slots == 0 || self.data_pusch_slots > 32 {
            return Err(D2dError::Param("data_pusch_slots"));
        }
        if self.rotation && self.rotation_periods == 0 {
            return Err(D2dError::Param("rotation_periods"));
        }
        if self.range_cap_m.is_some_and(|r| !(r > 0.0)) || self.pbch_range_cap_m.is_some_and(|r| !(r > 0.0)) {
            return Err(D2dError::Param("range cap"));
        }
        Ok(())
    }

    pub fn frames_per_period(&self) -> u64 {
        self.td_ms / FRAME_MS
    }

    pub fn td(&self) -> SimTime {
        SimTime::from_ms(self.td_ms)
    }

    pub fn beacon_duration(&self) -> SimTime {
        SimTime(libm::round(self.beacon_overhead * self.td_ms as f64 * 1000.0) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum D2dRole {
    CellAttached,
    ToiWait,
    Listening,
    /// Four-way handshake toward a network in progress.
    Joining,
    BUe,
    Member,
    /// Left D2D operation on request.
    Inactive,
}

impl D2dRole {
    pub fn in_d2d(self) -> bool {
        matches!(self, D2dRole::Listening | D2dRole::Joining | D2dRole::BUe | D2dRole::Member)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    Pucch,
    Prach,
    ReservedPusch,
    Pusch,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Pucch => "PUCCH",
            Channel::Prach => "PRACH",
            Channel::ReservedPusch => "reserved-PUSCH",
            Channel::Pusch => "PUSCH",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum D2dMessageKind {
    DBeacon,
    RaPreamble,
    RaResponse,
    AssociationRequest,
    /// Contention resolution carrying the member id (msg4).
    AssociationResponse,
    ReservationRequest,
    ReservationResponse,
    Disassociation,
    Data,
}

impl D2dMessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            D2dMessageKind::DBeacon => "DBeacon",
            D2dMessageKind::RaPreamble => "RaPreamble",
            D2dMessageKind::RaResponse => "RaResponse",
            D2dMessageKind::AssociationRequest => "AssociationRequest",
            D2dMessageKind::AssociationResponse => "AssociationResponse",
            D2dMessageKind::ReservationRequest => "ReservationRequest",
            D2dMessageKind::ReservationResponse => "ReservationResponse",
            D2dMessageKind::Disassociation => "Disassociation",
            D2dMessageKind::Data => "Data",
        }
    }
}

/// The channel each protocol message is assigned to.
pub fn assigned_channel(kind: D2dMessageKind) -> Channel {
    match kind {
        D2dMessageKind::DBeacon | D2dMessageKind::RaResponse | D2dMessageKind::AssociationResponse => Channel::Pucch,
        D2dMessageKind::RaPreamble => Channel::Prach,
        D2dMessageKind::AssociationRequest
        | D2dMessageKind::ReservationRequest
        | D2dMessageKind::ReservationResponse
        | D2dMessageKind::Disassociation => Channel::ReservedPusch,
        D2dMessageKind::Data => Channel::Pusch,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditEntry {
    pub time: SimTime,
    pub ue: UeId,
    pub kind: D2dMessageKind,
    pub channel: Channel,
}

/// Entries whose channel differs from the assignment.
pub fn audit_violations(log: &[AuditEntry]) -> Vec<AuditEntry> {
    log.iter().filter(|e| assigned_channel(e.kind) != e.channel).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = D2dConfig::default();
        c.validate().unwrap();
        assert_eq!(c.frames_per_period(), 8);
        assert_eq!(c.beacon_duration(), SimTime::from_ms(8));
    }

    #[test]
    fn off_grid_interval_rejected() {
        let c = D2dConfig { td_ms: 85, ..D2dConfig::default() };
        assert_eq!(c.validate(), Err(D2dError::BeaconIntervalOffGrid(85)));
        let c = D2dConfig { td_ms: 200, beacon_overhead: 0.1, ..D2dConfig::default() };
        assert!(matches!(c.validate(), Err(D2dError::BeaconOverhead(_))));
    }

    #[test]
    fn audit_flags_wrong_channel() {
        let ok = AuditEntry { time: SimTime::ZERO, ue: 1, kind: D2dMessageKind::DBeacon, channel: Channel::Pucch };
        let bad = AuditEntry { channel: Channel::Pusch, ..ok };
        assert_eq!(audit_violations(&[ok, bad]), [bad]);
    }
}
