//! Per-node FME state: HeNB agents and units, UE contexts, bearers, and the
//! physical EPC's view.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use super::gateway::GwFunction;
use super::message::{BearerId, CorrelationId};
use super::routing::{BhNode, RouteTable, EPC_NODE};
use super::tunnel::{Tunnel, TunnelKind};
use super::BhFrame;
use crate::engine::SimTime;
use crate::traffic::UeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectivityMode {
    ConnectedToEpc,
    Standalone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttachState {
    Detached,
    Attaching,
    Attached,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BearerScope {
    Local,
    EndToEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BearerState {
    Creating,
    Active,
    Released,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bearer {
    pub id: BearerId,
    pub ue: UeId,
    pub qos_bps: f64,
    pub scope: BearerScope,
    pub state: BearerState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncState {
    NotSent,
    InFlight { since: SimTime },
    Acked,
}

/// What MME-A stores about a UE. Identity and security fields are opaque
/// placeholders; authentication always succeeds.
#[derive(Debug, Clone, PartialEq)]
pub struct UeContext {
    pub ue: UeId,
    pub serving: BhNode,
    pub state: AttachState,
    pub imsi: u64,
    pub security_key: u64,
    pub tracking_area: u32,
    pub bearers: Vec<BearerId>,
    pub epc_synced: bool,
    pub sync: SyncState,
    pub attach_corr: CorrelationId,
}

#[derive(Debug, Clone)]
pub struct HenbNode {
    pub id: BhNode,
    pub(crate) mode: ConnectivityMode,
    pub(crate) routes: RouteTable,
    /// TMU's last view of directly reachable backhaul neighbours.
    pub(crate) neighbors: Vec<BhNode>,
    /// Keyed by peer; the vS1 tunnel is the one whose peer is the EPC.
    pub(crate) tunnels: BTreeMap<BhNode, Tunnel<BhFrame>>,
    pub(crate) contexts: BTreeMap<UeId, UeContext>,
    pub(crate) bearers: BTreeMap<BearerId, Bearer>,
    pub(crate) next_bearer: u32,
    pub(crate) functions: BTreeSet<GwFunction>,
    pub(crate) bootstraps_completed: u32,
}

impl HenbNode {
    pub(crate) fn new(id: BhNode, functions: &[GwFunction]) -> Self {
        HenbNode {
            id,
            mode: ConnectivityMode::Standalone,
            routes: RouteTable::empty(id),
            neighbors: Vec::new(),
            tunnels: BTreeMap::new(),
            contexts: BTreeMap::new(),
            bearers: BTreeMap::new(),
            next_bearer: 0,
            functions: functions.iter().copied().collect(),
            bootstraps_completed: 0,
        }
    }

    pub fn mode(&self) -> ConnectivityMode {
        self.mode
    }

    pub fn routes(&self) -> &RouteTable {
        &self.routes
    }

    pub fn neighbors(&self) -> &[BhNode] {
        &self.neighbors
    }

    pub fn tunnels(&self) -> impl Iterator<Item = &Tunnel<BhFrame>> {
        self.tunnels.values()
    }

    pub fn vs1(&self) -> Option<&Tunnel<BhFrame>> {
        self.tunnels.get(&EPC_NODE)
    }

    pub fn vx2(&self, peer: BhNode) -> Option<&Tunnel<BhFrame>> {
        self.tunnels.get(&peer).filter(|t| t.kind == TunnelKind::VX2)
    }

    pub fn context(&self, ue: UeId) -> Option<&UeContext> {
        self.contexts.get(&ue)
    }

    pub fn contexts(&self) -> impl Iterator<Item = &UeContext> {
        self.contexts.values()
    }

    pub fn bearer(&self, id: BearerId) -> Option<&Bearer> {
        self.bearers.get(&id)
    }

    pub fn bearers(&self) -> impl Iterator<Item = &Bearer> {
        self.bearers.values()
    }

    pub fn has_function(&self, f: GwFunction) -> bool {
        self.functions.contains(&f)
    }

    pub fn bootstraps_completed(&self) -> u32 {
        self.bootstraps_completed
    }

    /// The UE's active bearer, if it is attached here.
    pub fn active_bearer(&self, ue: UeId) -> Option<&Bearer> {
        let ctx = self.contexts.get(&ue)?;
        if ctx.state != AttachState::Attached {
            return None;
        }
        ctx.bearers
            .iter()
            .filter_map(|b| self.bearers.get(b))
            .find(|b| b.state == BearerState::Active)
    }

    pub(crate) fn allocate_bearer_id(&mut self) -> BearerId {
        let id = (u64::from(self.id) << 32) | u64::from(self.next_bearer);
        self.next_bearer += 1;
        id
    }
}

/// The physical EPC: keeps vS1 tunnel ends toward HeNBs and the contexts
/// HeNBs have synchronized.
#[derive(Debug, Clone)]
pub struct EpcNode {
    pub(crate) routes: RouteTable,
    pub(crate) tunnels: BTreeMap<BhNode, Tunnel<BhFrame>>,
    pub(crate) synced: BTreeMap<UeId, BhNode>,
}

impl EpcNode {
    pub(crate) fn new() -> Self {
        EpcNode { routes: RouteTable::empty(EPC_NODE), tunnels: BTreeMap::new(), synced: BTreeMap::new() }
    }

    pub fn routes(&self) -> &RouteTable {
        &self.routes
    }

    pub fn tunnel_to(&self, henb: BhNode) -> Option<&Tunnel<BhFrame>> {
        self.tunnels.get(&henb)
    }

    pub fn tunnels(&self) -> impl Iterator<Item = &Tunnel<BhFrame>> {
        self.tunnels.values()
    }

    pub fn synced_contexts(&self) -> &BTreeMap<UeId, BhNode> {
        &self.synced
    }
}
