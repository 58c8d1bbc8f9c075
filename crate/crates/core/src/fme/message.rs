//! Control messages exchanged between FME units, UEs and the physical EPC.

use core::fmt;

use super::routing::BhNode;
use crate::traffic::UeId;

pub type CorrelationId = u64;
pub type BearerId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Unit {
    Rrc,
    Tmu,
    Rmu,
    Lmu,
    MmeA,
    GwA,
    D2dA,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Rrc => "rrc",
            Unit::Tmu => "tmu",
            Unit::Rmu => "rmu",
            Unit::Lmu => "lmu",
            Unit::MmeA => "mme-a",
            Unit::GwA => "gw-a",
            Unit::D2dA => "d2d-a",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Ue(UeId),
    Henb(BhNode, Unit),
    Epc,
}

impl Endpoint {
    /// Backhaul node hosting this endpoint; UEs have none.
    pub fn bh_node(self) -> Option<BhNode> {
        match self {
            Endpoint::Ue(_) => None,
            Endpoint::Henb(h, _) => Some(h),
            Endpoint::Epc => Some(super::routing::EPC_NODE),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Ue(u) => write!(f, "ue{u}"),
            Endpoint::Henb(h, unit) => write!(f, "henb{h}/{}", unit.as_str()),
            Endpoint::Epc => f.write_str("epc"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakeLeg {
    Challenge,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmeMessage {
    InterlayerDiscovery,
    RouteActivationRequest,
    RouteActivationResponse,
    InterlayerUpdate,
    UeAttachRequest { ue: UeId },
    AttachRequestToMmeA { ue: UeId },
    AttachHandshake { ue: UeId, leg: HandshakeLeg },
    CreateSessionRequest { ue: UeId },
    CreateSessionUpdate { ue: UeId },
    CreateSessionResponse { ue: UeId },
    BearerCreated { ue: UeId, bearer: BearerId },
    UeNotify { ue: UeId, bearer: BearerId },
    ContextSync { ue: UeId, henb: BhNode },
    ContextSyncAck { ue: UeId, henb: BhNode },
    DetachRequest { ue: UeId },
    DetachAccept { ue: UeId },
}

impl FmeMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            FmeMessage::InterlayerDiscovery => "InterlayerDiscovery",
            FmeMessage::RouteActivationRequest => "RouteActivationRequest",
            FmeMessage::RouteActivationResponse => "RouteActivationResponse",
            FmeMessage::InterlayerUpdate => "InterlayerUpdate",
            FmeMessage::UeAttachRequest { .. } => "UeAttachRequest",
            FmeMessage::AttachRequestToMmeA { .. } => "AttachRequestToMmeA",
            FmeMessage::AttachHandshake { .. } => "AttachHandshake",
            FmeMessage::CreateSessionRequest { .. } => "CreateSessionRequest",
            FmeMessage::CreateSessionUpdate { .. } => "CreateSessionUpdate",
            FmeMessage::CreateSessionResponse { .. } => "CreateSessionResponse",
            FmeMessage::BearerCreated { .. } => "BearerCreated",
            FmeMessage::UeNotify { .. } => "UeNotify",
            FmeMessage::ContextSync { .. } => "ContextSync",
            FmeMessage::ContextSyncAck { .. } => "ContextSyncAck",
            FmeMessage::DetachRequest { .. } => "DetachRequest",
            FmeMessage::DetachAccept { .. } => "DetachAccept",
        }
    }

    pub fn ue(&self) -> Option<UeId> {
        match *self {
            FmeMessage::UeAttachRequest { ue }
            | FmeMessage::AttachRequestToMmeA { ue }
            | FmeMessage::AttachHandshake { ue, .. }
            | FmeMessage::CreateSessionRequest { ue }
            | FmeMessage::CreateSessionUpdate { ue }
            | FmeMessage::CreateSessionResponse { ue }
            | FmeMessage::BearerCreated { ue, .. }
            | FmeMessage::UeNotify { ue, .. }
            | FmeMessage::ContextSync { ue, .. }
            | FmeMessage::ContextSyncAck { ue, .. }
            | FmeMessage::DetachRequest { ue }
            | FmeMessage::DetachAccept { ue } => Some(ue),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Envelope {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub corr: CorrelationId,
    pub msg: FmeMessage,
}
