//! The FME control and user plane across all HeNBs, the physical EPC and the
//! backhaul between them.
//!
//! `FmeNetwork` is sans-IO: it never owns a clock. Callers hand it the current
//! time and an event, and it leaves follow-up events, notices, user-plane
//! deliveries and drops in its [`Outbox`]. [`FmeNetwork::drive`] runs it on an
//! [`EventQueue`] when nothing else shares the queue.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;
use core::convert::Infallible;

use thiserror::Error;

use super::gateway::{gw_a_prioritize, FunctionRequest, GwFunction};
use super::message::{BearerId, CorrelationId, Endpoint, Envelope, FmeMessage, HandshakeLeg, Unit};
use super::node::{
    AttachState, Bearer, BearerScope, BearerState, ConnectivityMode, EpcNode, HenbNode, SyncState, UeContext,
};
use super::routing::{rmu_recompute, BhNode, LinkStateGraph, RouteTable, EPC_NODE};
use super::trace::TraceRecord;
use super::tunnel::{dma_transition, LinkEvent, Offer, Tunnel, TunnelKind};
use crate::engine::{EventQueue, SimTime};
use crate::radio::{rx_power_dbm, LinkClass, LinkClassParams};
use crate::traffic::{Packet, UeId};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FmeConfig {
    /// Latency between units inside one HeNB.
    pub unit_latency_us: u64,
    /// One-way UE to HeNB latency for control messages.
    pub air_latency_us: u64,
    pub resync_period_ms: u64,
    pub control_bytes: u32,
    pub backhaul_capacity_bps: f64,
    pub per_hop_delay_us: u64,
    pub dma_capacity_bytes: u64,
    pub dma_enabled: bool,
    /// GW-A resource budget; every function costs 1 by default.
    pub gw_budget: u32,
    pub bearer_qos_bps: f64,
}

impl Default for FmeConfig {
    fn default() -> Self {
        FmeConfig {
            unit_latency_us: 100,
            air_latency_us: 1000,
            resync_period_ms: 1000,
            control_bytes: 200,
            backhaul_capacity_bps: 20e6,
            per_hop_delay_us: 2000,
            dma_capacity_bytes: 16_000_000,
            dma_enabled: true,
            gw_budget: 16,
            bearer_qos_bps: 384_000.0,
        }
    }
}

/// Where a user-plane frame is headed once it leaves the tunnel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserDst {
    /// Downlink into the cell of this HeNB, to `ue`.
    Cell { henb: BhNode, ue: UeId },
    /// The external server behind the physical EPC.
    Server,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserFrame {
    pub pkt: Packet,
    pub dst: UserDst,
    pub tunnel: TunnelKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BhBody {
    Control(Envelope),
    User(UserFrame),
}

/// One frame on the backhaul, addressed node to node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BhFrame {
    pub src: BhNode,
    pub dst: BhNode,
    pub bytes: u32,
    pub body: BhBody,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FmeEvent {
    Deliver(Envelope),
    BhArrive { node: BhNode, frame: BhFrame },
    Resync { henb: BhNode },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Notice {
    Bootstrapped { henb: BhNode, mode: ConnectivityMode },
    AttachComplete { ue: UeId, henb: BhNode, bearer: BearerId },
    Synced { ue: UeId, henb: BhNode },
    DetachComplete { ue: UeId, henb: BhNode },
    TunnelChanged { local: BhNode, peer: BhNode, up: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    SourceNotAttached,
    DestinationNotAttached,
    NotEndToEnd,
    NoRoute,
    DmaOverflow,
    FunctionInactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserDelivery {
    pub node: BhNode,
    pub frame: UserFrame,
}

#[derive(Debug, Default)]
pub struct Outbox {
    pub events: Vec<(SimTime, FmeEvent)>,
    pub notices: Vec<Notice>,
    pub deliveries: Vec<UserDelivery>,
    pub drops: Vec<(Packet, DropReason)>,
}

impl Outbox {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty() && self.notices.is_empty() && self.deliveries.is_empty() && self.drops.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttachOutcome {
    Started(CorrelationId),
    InProgress(CorrelationId),
    AlreadyAttached(BearerId),
    /// Queued behind a detach still in progress.
    Queued,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AttachError {
    #[error("unknown HeNB {0}")]
    UnknownHenb(BhNode),
    #[error("UE {ue} out of radio range of HeNB {henb}")]
    OutOfRange { ue: UeId, henb: BhNode },
    #[error("UE {ue} is served by HeNB {serving}")]
    ServedElsewhere { ue: UeId, serving: BhNode },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetachOutcome {
    Started(CorrelationId),
    /// Runs once the attach in progress completes.
    Deferred,
    AlreadyDetached,
    InProgress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncOutcome {
    Sent(CorrelationId),
    Deferred,
    AlreadySynced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PromoteError {
    #[error("UE {0} has no active bearer at this HeNB")]
    NotActive(UeId),
    #[error("UE {0} context not synchronized with the EPC")]
    NotSynced(UeId),
    #[error("no route to the physical EPC")]
    NoRoute,
    #[error("external gateway function inactive")]
    GatewayFunctionInactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Forwarding {
    /// Switched inside the serving HeNB; deliver on the downlink of `henb`.
    Local { henb: BhNode },
    /// Handed to a tunnel that is up.
    Tunneled { hops: u32 },
    /// Held by the DMA of a disrupted tunnel.
    Buffered,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invariant violated: {what} (ue {ue})")]
pub struct InvariantViolation {
    pub what: &'static str,
    pub ue: UeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UeSide {
    Detached,
    Attaching { henb: BhNode, corr: CorrelationId },
    Attached { henb: BhNode, bearer: BearerId },
    Detaching { henb: BhNode, corr: CorrelationId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pending {
    None,
    Attach(BhNode),
    Detach,
}

#[derive(Debug, Clone, Copy)]
struct UeAgent {
    side: UeSide,
    pending: Pending,
}

#[derive(Debug)]
pub struct FmeNetwork {
    cfg: FmeConfig,
    access_link: LinkClassParams,
    graph: LinkStateGraph,
    henbs: BTreeMap<BhNode, HenbNode>,
    epc: EpcNode,
    ues: BTreeMap<UeId, UeAgent>,
    link_free: BTreeMap<(BhNode, BhNode), SimTime>,
    transit: BTreeMap<BhNode, VecDeque<BhFrame>>,
    next_corr: CorrelationId,
    trace: Vec<TraceRecord>,
    record_trace: bool,
    out: Outbox,
}

impl FmeNetwork {
    /// `graph` must contain the EPC as node 0 and the HeNBs as every other
    /// node. Nothing happens until [`FmeNetwork::start`].
    pub fn new(cfg: FmeConfig, graph: LinkStateGraph) -> Self {
        let requests: Vec<FunctionRequest> = GwFunction::ALL.iter().map(|&f| FunctionRequest::default_for(f)).collect();
        let functions = gw_a_prioritize(&requests, cfg.gw_budget);
        let henbs = graph.nodes().filter(|&n| n != EPC_NODE).map(|n| (n, HenbNode::new(n, &functions))).collect();
        FmeNetwork {
            cfg,
            access_link: LinkClassParams::default_for(LinkClass::LteUl),
            graph,
            henbs,
            epc: EpcNode::new(),
            ues: BTreeMap::new(),
            link_free: BTreeMap::new(),
            transit: BTreeMap::new(),
            next_corr: 1,
            trace: Vec::new(),
            record_trace: true,
            out: Outbox::default(),
        }
    }

    pub fn with_access_link(mut self, link: LinkClassParams) -> Self {
        self.access_link = link;
        self
    }

    pub fn set_record_trace(&mut self, on: bool) {
        self.record_trace = on;
    }

    pub fn config(&self) -> &FmeConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &LinkStateGraph {
        &self.graph
    }

    pub fn henb(&self, id: BhNode) -> Option<&HenbNode> {
        self.henbs.get(&id)
    }

    pub fn henbs(&self) -> impl Iterator<Item = &HenbNode> {
        self.henbs.values()
    }

    pub fn epc(&self) -> &EpcNode {
        &self.epc
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn take_outbox(&mut self) -> Outbox {
        core::mem::take(&mut self.out)
    }

    /// Frames held at intermediate nodes waiting for a usable next hop.
    pub fn transit_held(&self) -> usize {
        self.transit.values().map(VecDeque::len).sum()
    }

    pub fn serving_henb(&self, ue: UeId) -> Option<BhNode> {
        match self.ues.get(&ue)?.side {
            UeSide::Attached { henb, .. } => Some(henb),
            _ => None,
        }
    }

    pub fn attach_state(&self, ue: UeId) -> AttachState {
        match self.ues.get(&ue).map(|a| a.side) {
            None | Some(UeSide::Detached) => AttachState::Detached,
            Some(UeSide::Attaching { .. }) => AttachState::Attaching,
            Some(UeSide::Attached { .. }) | Some(UeSide::Detaching { .. }) => AttachState::Attached,
        }
    }

    fn corr(&mut self) -> CorrelationId {
        let c = self.next_corr;
        self.next_corr += 1;
        c
    }

    fn unit_latency(&self) -> SimTime {
        SimTime(self.cfg.unit_latency_us)
    }

    fn air_latency(&self) -> SimTime {
        SimTime(self.cfg.air_latency_us)
    }

    fn emit(&mut self, at: SimTime, ev: FmeEvent) {
        self.out.events.push((at, ev));
    }

    /// Sends a control message. Messages inside one HeNB take the unit
    /// latency, UE legs the air latency, and HeNB/EPC messages ride the
    /// backhaul.
    fn send(&mut self, now: SimTime, src: Endpoint, dst: Endpoint, corr: CorrelationId, msg: FmeMessage) {
        let env = Envelope { src, dst, corr, msg };
        match (src.bh_node(), dst.bh_node()) {
            (Some(a), Some(b)) if a != b => {
                let frame = BhFrame { src: a, dst: b, bytes: self.cfg.control_bytes, body: BhBody::Control(env) };
                self.transmit(now, a, frame);
            }
            (Some(_), Some(_)) => {
                let at = now + self.unit_latency();
                self.emit(at, FmeEvent::Deliver(env));
            }
            _ => {
                let at = now + self.air_latency();
                self.emit(at, FmeEvent::Deliver(env));
            }
        }
    }

    /// Bootstraps every HeNB and arms the periodic context re-sync.
    pub fn start(&mut self, now: SimTime) {
        self.epc.routes = rmu_recompute(&self.graph, &self.epc.routes);
        self.refresh_epc_tunnels(now);
        let ids: Vec<BhNode> = self.henbs.keys().copied().collect();
        for h in ids {
            self.henb_bootstrap(now, h);
            let at = now + SimTime::from_ms(self.cfg.resync_period_ms);
            self.emit(at, FmeEvent::Resync { henb: h });
        }
    }

    /// Starts the 1→2→3 exchange at `henb`; tunnels and mode change when the
    /// interlayer update reaches the LMU.
    pub fn henb_bootstrap(&mut self, now: SimTime, henb: BhNode) {
        let corr = self.corr();
        self.send(now, Endpoint::Henb(henb, Unit::Lmu), Endpoint::Henb(henb, Unit::Tmu), corr, FmeMessage::InterlayerDiscovery);
    }

    /// Applies a backhaul link change. The EPC reroutes at once; every HeNB
    /// reruns its bootstrap exchange.
    pub fn set_link(&mut self, now: SimTime, a: BhNode, b: BhNode, up: bool) -> bool {
        if !self.graph.set_link_up(a, b, up) {
            return false;
        }
        self.epc.routes = rmu_recompute(&self.graph, &self.epc.routes);
        self.refresh_epc_tunnels(now);
        self.release_transit(now, EPC_NODE);
        let ids: Vec<BhNode> = self.henbs.keys().copied().collect();
        for h in ids {
            self.henb_bootstrap(now, h);
        }
        true
    }

    pub fn handle_event(&mut self, now: SimTime, ev: FmeEvent) {
        match ev {
            FmeEvent::Deliver(env) => self.deliver(now, env),
            FmeEvent::BhArrive { node, frame } => self.bh_arrive(now, node, frame),
            FmeEvent::Resync { henb } => self.resync(now, henb),
        }
    }

    /// Runs the network alone on `queue` until `t_end`, collecting everything
    /// but the scheduled events into the returned outbox.
    pub fn drive(&mut self, queue: &mut EventQueue<FmeEvent>, t_end: SimTime) -> Outbox {
        let mut collected = Outbox::default();
        loop {
            let out = self.take_outbox();
            for (at, ev) in out.events {
                queue.schedule(at, 0, ev).expect("FME never schedules in the past");
            }
            collected.notices.extend(out.notices);
            collected.deliveries.extend(out.deliveries);
            collected.drops.extend(out.drops);
            let Some(ev) = queue.pop_until(t_end) else { break };
            self.handle_event(ev.fire_time, ev.payload);
        }
        let _ = queue.run_until(t_end, &mut NoEvents);
        collected
    }

    fn deliver(&mut self, now: SimTime, env: Envelope) {
        if self.record_trace {
            self.trace.push(TraceRecord::delivered(now, &env));
        }
        let corr = env.corr;
        match (env.dst, env.msg) {
            (Endpoint::Henb(h, Unit::Tmu), FmeMessage::InterlayerDiscovery) => {
                if let Some(n) = self.henbs.get_mut(&h) {
                    n.neighbors = self.graph.up_neighbors(h);
                }
                self.send(now, env.dst, Endpoint::Henb(h, Unit::Rmu), corr, FmeMessage::RouteActivationRequest);
            }
            (Endpoint::Henb(h, Unit::Rmu), FmeMessage::RouteActivationRequest) => {
                if let Some(n) = self.henbs.get_mut(&h) {
                    n.routes = rmu_recompute(&self.graph, &n.routes);
                }
                self.send(now, env.dst, Endpoint::Henb(h, Unit::Tmu), corr, FmeMessage::RouteActivationResponse);
            }
            (Endpoint::Henb(h, Unit::Tmu), FmeMessage::RouteActivationResponse) => {
                self.send(now, env.dst, Endpoint::Henb(h, Unit::Lmu), corr, FmeMessage::InterlayerUpdate);
            }
            (Endpoint::Henb(h, Unit::Lmu), FmeMessage::InterlayerUpdate) => self.lmu_update(now, h),
            (Endpoint::Henb(h, Unit::Rrc), FmeMessage::UeAttachRequest { ue }) => {
                self.send(now, env.dst, Endpoint::Henb(h, Unit::MmeA), corr, FmeMessage::AttachRequestToMmeA { ue });
            }
            (Endpoint::Henb(h, Unit::MmeA), FmeMessage::AttachRequestToMmeA { ue }) => {
                if let Some(n) = self.henbs.get_mut(&h) {
                    n.contexts.insert(
                        ue,
                        UeContext {
                            ue,
                            serving: h,
                            state: AttachState::Attaching,
                            imsi: 0x0010_1000_0000_0000 | u64::from(ue),
                            security_key: u64::from(ue).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                            tracking_area: h,
                            bearers: Vec::new(),
                            epc_synced: false,
                            sync: SyncState::NotSent,
                            attach_corr: corr,
                        },
                    );
                }
                let msg = FmeMessage::AttachHandshake { ue, leg: HandshakeLeg::Challenge };
                self.send(now, env.dst, Endpoint::Ue(ue), corr, msg);
            }
            (Endpoint::Ue(ue), FmeMessage::AttachHandshake { leg: HandshakeLeg::Challenge, .. }) => {
                let msg = FmeMessage::AttachHandshake { ue, leg: HandshakeLeg::Response };
                self.send(now, env.dst, env.src, corr, msg);
            }
            (Endpoint::Henb(h, Unit::MmeA), FmeMessage::AttachHandshake { ue, leg: HandshakeLeg::Response }) => {
                self.send(now, env.dst, Endpoint::Henb(h, Unit::GwA), corr, FmeMessage::CreateSessionRequest { ue });
            }
            (Endpoint::Henb(h, Unit::GwA), FmeMessage::CreateSessionRequest { ue }) => {
                self.send(now, env.dst, Endpoint::Henb(h, Unit::MmeA), corr, FmeMessage::CreateSessionUpdate { ue });
            }
            (Endpoint::Henb(h, Unit::MmeA), FmeMessage::CreateSessionUpdate { ue }) => {
                self.send(now, env.dst, Endpoint::Henb(h, Unit::GwA), corr, FmeMessage::CreateSessionResponse { ue });
            }
            (Endpoint::Henb(h, Unit::GwA), FmeMessage::CreateSessionResponse { ue }) => {
                let qos_bps = self.cfg.bearer_qos_bps;
                let Some(n) = self.henbs.get_mut(&h) else { return };
                let bearer = n.allocate_bearer_id();
                n.bearers.insert(
                    bearer,
                    Bearer { id: bearer, ue, qos_bps, scope: BearerScope::Local, state: BearerState::Creating },
                );
                if let Some(ctx) = n.contexts.get_mut(&ue) {
                    ctx.bearers.push(bearer);
                }
                self.send(now, env.dst, Endpoint::Henb(h, Unit::Rrc), corr, FmeMessage::BearerCreated { ue, bearer });
            }
            (Endpoint::Henb(_, Unit::Rrc), FmeMessage::BearerCreated { ue, bearer }) => {
                self.send(now, env.dst, Endpoint::Ue(ue), corr, FmeMessage::UeNotify { ue, bearer });
            }
            (Endpoint::Ue(ue), FmeMessage::UeNotify { bearer, .. }) => {
                let Some(h) = env.src.bh_node() else { return };
                self.complete_attach(now, ue, h, bearer);
            }
            (Endpoint::Epc, FmeMessage::ContextSync { ue, henb }) => {
                self.epc.synced.insert(ue, henb);
                self.send(now, Endpoint::Epc, Endpoint::Henb(henb, Unit::MmeA), corr, FmeMessage::ContextSyncAck { ue, henb });
            }
            (Endpoint::Henb(h, Unit::MmeA), FmeMessage::ContextSyncAck { ue, .. }) => {
                let Some(n) = self.henbs.get_mut(&h) else { return };
                if let Some(ctx) = n.contexts.get_mut(&ue) {
                    if ctx.state == AttachState::Attached && !ctx.epc_synced {
                        ctx.epc_synced = true;
                        ctx.sync = SyncState::Acked;
                        self.out.notices.push(Notice::Synced { ue, henb: h });
                    }
                }
            }
            (Endpoint::Henb(h, Unit::MmeA), FmeMessage::DetachRequest { ue }) => {
                if let Some(n) = self.henbs.get_mut(&h) {
                    if let Some(ctx) = n.contexts.remove(&ue) {
                        for b in ctx.bearers {
                            n.bearers.remove(&b);
                        }
                    }
                }
                self.epc.synced.remove(&ue);
                self.send(now, env.dst, Endpoint::Ue(ue), corr, FmeMessage::DetachAccept { ue });
            }
            (Endpoint::Ue(ue), FmeMessage::DetachAccept { .. }) => {
                let Some(h) = env.src.bh_node() else { return };
                let Some(agent) = self.ues.get_mut(&ue) else { return };
                agent.side = UeSide::Detached;
                let pending = core::mem::replace(&mut agent.pending, Pending::None);
                self.out.notices.push(Notice::DetachComplete { ue, henb: h });
                if let Pending::Attach(target) = pending {
                    self.start_attach(now, ue, target);
                }
            }
            _ => {}
        }
    }

    fn complete_attach(&mut self, now: SimTime, ue: UeId, h: BhNode, bearer: BearerId) {
        if let Some(n) = self.henbs.get_mut(&h) {
            if let Some(b) = n.bearers.get_mut(&bearer) {
                b.state = BearerState::Active;
            }
            if let Some(ctx) = n.contexts.get_mut(&ue) {
                ctx.state = AttachState::Attached;
            }
        }
        let pending = match self.ues.get_mut(&ue) {
            Some(agent) => {
                agent.side = UeSide::Attached { henb: h, bearer };
                core::mem::replace(&mut agent.pending, Pending::None)
            }
            None => Pending::None,
        };
        self.out.notices.push(Notice::AttachComplete { ue, henb: h, bearer });
        self.sync_context_to_epc(now, h, ue);
        if pending == Pending::Detach {
            self.detach_ue(now, ue);
        }
    }

    fn start_attach(&mut self, now: SimTime, ue: UeId, henb: BhNode) -> CorrelationId {
        let corr = self.corr();
        self.ues.insert(ue, UeAgent { side: UeSide::Attaching { henb, corr }, pending: Pending::None });
        self.send(now, Endpoint::Ue(ue), Endpoint::Henb(henb, Unit::Rrc), corr, FmeMessage::UeAttachRequest { ue });
        corr
    }

    /// Starts the 4→11 attach exchange. `distance_m` is the UE to HeNB
    /// distance, checked against the access link budget.
    pub fn attach_ue(&mut self, now: SimTime, ue: UeId, henb: BhNode, distance_m: f64) -> Result<AttachOutcome, AttachError> {
        if !self.henbs.contains_key(&henb) {
            return Err(AttachError::UnknownHenb(henb));
        }
        if !rx_power_dbm(&self.access_link, distance_m, 0.0).link_up {
            return Err(AttachError::OutOfRange { ue, henb });
        }
        let side = self.ues.get(&ue).map_or(UeSide::Detached, |a| a.side);
        match side {
            UeSide::Detached => Ok(AttachOutcome::Started(self.start_attach(now, ue, henb))),
            UeSide::Attached { henb: h, bearer } if h == henb => Ok(AttachOutcome::AlreadyAttached(bearer)),
            UeSide::Attaching { henb: h, corr } if h == henb => Ok(AttachOutcome::InProgress(corr)),
            UeSide::Attached { henb: h, .. } | UeSide::Attaching { henb: h, .. } => {
                Err(AttachError::ServedElsewhere { ue, serving: h })
            }
            UeSide::Detaching { .. } => {
                if let Some(a) = self.ues.get_mut(&ue) {
                    a.pending = Pending::Attach(henb);
                }
                Ok(AttachOutcome::Queued)
            }
        }
    }

    pub fn detach_ue(&mut self, now: SimTime, ue: UeId) -> DetachOutcome {
        let Some(agent) = self.ues.get_mut(&ue) else { return DetachOutcome::AlreadyDetached };
        match agent.side {
            UeSide::Detached => {
                if agent.pending != Pending::None {
                    agent.pending = Pending::None;
                }
                DetachOutcome::AlreadyDetached
            }
            UeSide::Detaching { .. } => {
                agent.pending = Pending::None;
                DetachOutcome::InProgress
            }
            UeSide::Attaching { .. } => {
                agent.pending = Pending::Detach;
                DetachOutcome::Deferred
            }
            UeSide::Attached { henb, .. } => {
                let corr = self.next_corr;
                self.next_corr += 1;
                agent.side = UeSide::Detaching { henb, corr };
                self.send(now, Endpoint::Ue(ue), Endpoint::Henb(henb, Unit::MmeA), corr, FmeMessage::DetachRequest { ue });
                DetachOutcome::Started(corr)
            }
        }
    }

    /// Sends the UE context to the physical EPC over vS1, or leaves it for
    /// the periodic re-sync when vS1 is missing or disrupted.
    pub fn sync_context_to_epc(&mut self, now: SimTime, henb: BhNode, ue: UeId) -> SyncOutcome {
        let Some(n) = self.henbs.get(&henb) else { return SyncOutcome::Deferred };
        let Some(ctx) = n.contexts.get(&ue) else { return SyncOutcome::Deferred };
        if ctx.state != AttachState::Attached {
            return SyncOutcome::Deferred;
        }
        if ctx.epc_synced {
            return SyncOutcome::AlreadySynced;
        }
        if !n.vs1().is_some_and(Tunnel::is_up) {
            return SyncOutcome::Deferred;
        }
        let corr = self.corr();
        if let Some(ctx) = self.henbs.get_mut(&henb).and_then(|n| n.contexts.get_mut(&ue)) {
            ctx.sync = SyncState::InFlight { since: now };
        }
        self.send(now, Endpoint::Henb(henb, Unit::MmeA), Endpoint::Epc, corr, FmeMessage::ContextSync { ue, henb });
        SyncOutcome::Sent(corr)
    }

    fn resync(&mut self, now: SimTime, henb: BhNode) {
        let period = SimTime::from_ms(self.cfg.resync_period_ms);
        let due: Vec<UeId> = match self.henbs.get(&henb) {
            Some(n) => n
                .contexts
                .values()
                .filter(|c| c.state == AttachState::Attached && !c.epc_synced)
                .filter(|c| match c.sync {
                    SyncState::NotSent => true,
                    SyncState::InFlight { since } => now.saturating_sub(since) >= period,
                    SyncState::Acked => false,
                })
                .map(|c| c.ue)
                .collect(),
            None => return,
        };
        for ue in due {
            self.sync_context_to_epc(now, henb, ue);
        }
        self.emit(now + period, FmeEvent::Resync { henb });
    }

    pub fn promote_bearer_e2e(&mut self, henb: BhNode, ue: UeId) -> Result<BearerId, PromoteError> {
        let n = self.henbs.get_mut(&henb).ok_or(PromoteError::NotActive(ue))?;
        let bearer = n.active_bearer(ue).map(|b| b.id).ok_or(PromoteError::NotActive(ue))?;
        if !n.has_function(GwFunction::ExternalGateway) {
            return Err(PromoteError::GatewayFunctionInactive);
        }
        if !n.contexts.get(&ue).is_some_and(|c| c.epc_synced) {
            return Err(PromoteError::NotSynced(ue));
        }
        if !n.vs1().is_some_and(Tunnel::is_up) {
            return Err(PromoteError::NoRoute);
        }
        if let Some(b) = n.bearers.get_mut(&bearer) {
            b.scope = BearerScope::EndToEnd;
        }
        Ok(bearer)
    }

    fn lmu_update(&mut self, now: SimTime, h: BhNode) {
        let dma_cap = self.cfg.dma_capacity_bytes;
        let dma_on = self.cfg.dma_enabled;
        let Some(n) = self.henbs.get_mut(&h) else { return };
        let reachable: Vec<BhNode> = n.routes.routes.keys().copied().collect();
        for &peer in &reachable {
            let kind = if peer == EPC_NODE { TunnelKind::VS1 } else { TunnelKind::VX2 };
            n.tunnels.entry(peer).or_insert_with(|| {
                let mut t = Tunnel::new(peer, kind, h, peer, dma_cap);
                t.set_dma_enabled(dma_on);
                t
            });
        }
        let mut flush: Vec<BhFrame> = Vec::new();
        let mut changes = Vec::new();
        for (&peer, t) in n.tunnels.iter_mut() {
            let event = if reachable.contains(&peer) { LinkEvent::Up } else { LinkEvent::Down };
            let was_up = t.is_up();
            let (_, frames) = dma_transition(t, event);
            flush.extend(frames.into_iter().map(|(f, _)| f));
            if was_up != t.is_up() {
                changes.push(Notice::TunnelChanged { local: h, peer, up: t.is_up() });
            }
        }
        n.mode = if n.vs1().is_some_and(Tunnel::is_up) {
            ConnectivityMode::ConnectedToEpc
        } else {
            ConnectivityMode::Standalone
        };
        n.bootstraps_completed += 1;
        let mode = n.mode;
        self.out.notices.extend(changes);
        self.out.notices.push(Notice::Bootstrapped { henb: h, mode });
        self.release_transit(now, h);
        for f in flush {
            self.transmit(now, h, f);
        }
    }

    fn refresh_epc_tunnels(&mut self, now: SimTime) {
        let dma_cap = self.cfg.dma_capacity_bytes;
        let dma_on = self.cfg.dma_enabled;
        let reachable: Vec<BhNode> = self.epc.routes.routes.keys().copied().collect();
        for &h in &reachable {
            self.epc.tunnels.entry(h).or_insert_with(|| {
                let mut t = Tunnel::new(h, TunnelKind::VS1, EPC_NODE, h, dma_cap);
                t.set_dma_enabled(dma_on);
                t
            });
        }
        let mut flush = Vec::new();
        for (&h, t) in self.epc.tunnels.iter_mut() {
            let ev = if reachable.contains(&h) { LinkEvent::Up } else { LinkEvent::Down };
            let (_, frames) = dma_transition(t, ev);
            flush.extend(frames.into_iter().map(|(f, _)| f));
        }
        for f in flush {
            self.transmit(now, EPC_NODE, f);
        }
    }

    fn routes_of(&self, node: BhNode) -> Option<&RouteTable> {
        if node == EPC_NODE {
            Some(&self.epc.routes)
        } else {
            self.henbs.get(&node).map(|n| &n.routes)
        }
    }

    /// Puts `frame` on the next hop from `from`, or holds it at `from` while
    /// that hop is unusable.
    fn transmit(&mut self, now: SimTime, from: BhNode, frame: BhFrame) {
        if from == frame.dst {
            self.bh_arrive(now, from, frame);
            return;
        }
        let next = self.routes_of(from).and_then(|t| t.get(frame.dst)).map(|r| r.next_hop);
        let Some(next) = next.filter(|&nh| self.graph.is_up(from, nh)) else {
            self.transit.entry(from).or_default().push_back(frame);
            return;
        };
        let free = self.link_free.entry((from, next)).or_insert(SimTime::ZERO);
        let depart = (*free).max(now);
        let tx_us = libm::ceil(f64::from(frame.bytes) * 8.0 * 1e6 / self.cfg.backhaul_capacity_bps) as u64;
        *free = depart + SimTime(tx_us);
        let at = *free + SimTime(self.cfg.per_hop_delay_us);
        self.emit(at, FmeEvent::BhArrive { node: next, frame });
    }

    fn release_transit(&mut self, now: SimTime, node: BhNode) {
        if let Some(q) = self.transit.remove(&node) {
            for f in q {
                self.transmit(now, node, f);
            }
        }
    }

    fn bh_arrive(&mut self, now: SimTime, node: BhNode, frame: BhFrame) {
        if node != frame.dst {
            self.transmit(now, node, frame);
            return;
        }
        match frame.body {
            BhBody::Control(env) => self.deliver(now, env),
            BhBody::User(uf) => self.out.deliveries.push(UserDelivery { node, frame: uf }),
        }
    }

    fn offer_to_tunnel(&mut self, now: SimTime, local: BhNode, peer: BhNode, uf: UserFrame) -> Result<Forwarding, DropReason> {
        let frame = BhFrame { src: local, dst: peer, bytes: uf.pkt.bytes, body: BhBody::User(uf) };
        let cost = self.routes_of(local).and_then(|t| t.get(peer)).map(|r| r.cost);
        let tunnel = if local == EPC_NODE {
            self.epc.tunnels.get_mut(&peer)
        } else {
            self.henbs.get_mut(&local).and_then(|n| n.tunnels.get_mut(&peer))
        };
        let Some(tunnel) = tunnel else { return Err(DropReason::NoRoute) };
        match tunnel.offer(frame, uf.pkt.bytes) {
            Offer::Send(frame) => {
                self.transmit(now, local, frame);
                Ok(Forwarding::Tunneled { hops: cost.unwrap_or(0) })
            }
            Offer::Buffered { evicted } => {
                let mut self_evicted = false;
                for f in evicted {
                    if let BhBody::User(e) = f.body {
                        if e.pkt == uf.pkt {
                            self_evicted = true;
                        } else {
                            self.out.drops.push((e.pkt, DropReason::DmaOverflow));
                        }
                    }
                }
                if self_evicted {
                    Err(DropReason::DmaOverflow)
                } else {
                    Ok(Forwarding::Buffered)
                }
            }
        }
    }

    /// Forwards a packet that arrived on the uplink of `henb` from `src_ue`.
    /// `dst_ue = None` addresses the external server. Drops are returned as
    /// errors, never pushed to the outbox; frames evicted from a DMA buffer
    /// to make room are pushed to the outbox.
    pub fn route_user_packet(
        &mut self,
        now: SimTime,
        henb: BhNode,
        src_ue: UeId,
        dst_ue: Option<UeId>,
        pkt: Packet,
    ) -> Result<Forwarding, DropReason> {
        let n = self.henbs.get(&henb).ok_or(DropReason::SourceNotAttached)?;
        let bearer = n.active_bearer(src_ue).ok_or(DropReason::SourceNotAttached)?;
        let scope = bearer.scope;
        match dst_ue {
            Some(d) => {
                let dst_henb = self.serving_henb(d).ok_or(DropReason::DestinationNotAttached)?;
                if dst_henb == henb {
                    if !n.has_function(GwFunction::LocalSwitching) {
                        return Err(DropReason::FunctionInactive);
                    }
                    return Ok(Forwarding::Local { henb });
                }
                if !n.has_function(GwFunction::IntercellForwarding) {
                    return Err(DropReason::FunctionInactive);
                }
                if scope != BearerScope::EndToEnd {
                    return Err(DropReason::NotEndToEnd);
                }
                let uf = UserFrame { pkt, dst: UserDst::Cell { henb: dst_henb, ue: d }, tunnel: TunnelKind::VX2 };
                self.offer_to_tunnel(now, henb, dst_henb, uf)
            }
            None => {
                if scope != BearerScope::EndToEnd {
                    return Err(DropReason::NotEndToEnd);
                }
                let uf = UserFrame { pkt, dst: UserDst::Server, tunnel: TunnelKind::VS1 };
                self.offer_to_tunnel(now, henb, EPC_NODE, uf)
            }
        }
    }

    /// Sends a packet from the external server to `dst_ue` over the EPC's
    /// vS1 tunnel end toward the UE's serving HeNB.
    pub fn send_from_server(&mut self, now: SimTime, dst_ue: UeId, pkt: Packet) -> Result<Forwarding, DropReason> {
        let henb = self.serving_henb(dst_ue).ok_or(DropReason::DestinationNotAttached)?;
        let scope = self.henbs.get(&henb).and_then(|n| n.active_bearer(dst_ue)).map(|b| b.scope);
        if scope != Some(BearerScope::EndToEnd) {
            return Err(DropReason::NotEndToEnd);
        }
        let uf = UserFrame { pkt, dst: UserDst::Cell { henb, ue: dst_ue }, tunnel: TunnelKind::VS1 };
        self.offer_to_tunnel(now, EPC_NODE, henb, uf)
    }

    /// Cross-node consistency checks meant to run after every event.
    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        for n in self.henbs.values() {
            for b in n.bearers.values() {
                let attached = n.contexts.get(&b.ue).is_some_and(|c| c.state != AttachState::Detached);
                if b.state == BearerState::Active && !attached {
                    return Err(InvariantViolation { what: "active bearer for a detached UE", ue: b.ue });
                }
            }
            for c in n.contexts.values() {
                if c.epc_synced && c.sync != SyncState::Acked {
                    return Err(InvariantViolation { what: "synced without ack", ue: c.ue });
                }
            }
        }
        for (&ue, agent) in &self.ues {
            if let UeSide::Attached { henb, bearer } = agent.side {
                let serving: Vec<BhNode> = self
                    .henbs
                    .values()
                    .filter(|n| n.contexts.get(&ue).is_some_and(|c| c.state == AttachState::Attached))
                    .map(|n| n.id)
                    .collect();
                if serving != [henb] {
                    return Err(InvariantViolation { what: "attached UE without exactly one serving HeNB", ue });
                }
                if self.henbs[&henb].bearer(bearer).map(|b| b.state) != Some(BearerState::Active) {
                    return Err(InvariantViolation { what: "attached UE without its active bearer", ue });
                }
            }
        }
        Ok(())
    }
}

struct NoEvents;

impl crate::engine::Handler<FmeEvent> for NoEvents {
    type Error = Infallible;

    fn handle(&mut self, _q: &mut EventQueue<FmeEvent>, _ev: crate::engine::Event<FmeEvent>) -> Result<(), Infallible> {
        Ok(())
    }
}
