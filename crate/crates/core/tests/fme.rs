use std::collections::BTreeMap;

use fmesim_core::engine::{EventQueue, SimTime};
use fmesim_core::fme::message::Endpoint;
use fmesim_core::fme::network::{
    AttachError, AttachOutcome, DropReason, Forwarding, Notice, PromoteError, SyncOutcome, UserDst,
};
use fmesim_core::fme::node::{AttachState, BearerScope, BearerState, ConnectivityMode};
use fmesim_core::fme::routing::{forwarding_path, rmu_recompute, LinkStateGraph, RouteTable, EPC_NODE};
use fmesim_core::fme::trace::validate_handshake_trace;
use fmesim_core::fme::tunnel::TunnelKind;
use fmesim_core::fme::{FmeConfig, FmeEvent, FmeNetwork, Outbox};
use fmesim_core::radio::{max_range_m, LinkClass, LinkClassParams};
use fmesim_core::topology::Position;
use fmesim_core::traffic::Packet;

fn chain() -> LinkStateGraph {
    let mut g = LinkStateGraph::new();
    g.add_link(3, 2);
    g.add_link(2, 1);
    g.add_link(1, EPC_NODE);
    g
}

struct Sim {
    net: FmeNetwork,
    q: EventQueue<FmeEvent>,
    seen: Outbox,
}

impl Sim {
    fn new(graph: LinkStateGraph) -> Self {
        let mut net = FmeNetwork::new(FmeConfig::default(), graph);
        net.start(SimTime::ZERO);
        Sim { net, q: EventQueue::new(), seen: Outbox::default() }
    }

    fn run_to(&mut self, t: SimTime) {
        let out = self.net.drive(&mut self.q, t);
        self.seen.notices.extend(out.notices);
        self.seen.deliveries.extend(out.deliveries);
        self.seen.drops.extend(out.drops);
        self.net.check_invariants().unwrap();
    }

    fn run_for_ms(&mut self, ms: u64) {
        let t = self.q.now() + SimTime::from_ms(ms);
        self.run_to(t);
    }

    fn now(&self) -> SimTime {
        self.q.now()
    }
}

fn pkt(seq: u64, at: SimTime) -> Packet {
    Packet { flow: 7, seq, bytes: 1200, created_at: at }
}

#[test]
fn chain_bootstrap_gives_henb3_a_two_relay_vs1() {
    let mut s = Sim::new(chain());
    s.run_for_ms(10);
    let h3 = s.net.henb(3).unwrap();
    assert_eq!(h3.mode(), ConnectivityMode::ConnectedToEpc);
    let vs1 = h3.vs1().unwrap();
    assert_eq!(vs1.kind, TunnelKind::VS1);
    assert!(vs1.is_up());
    let tables: BTreeMap<_, _> = (0..=3).map(|n| (n, rmu_recompute(&chain(), &RouteTable::empty(n)))).collect();
    // Two HeNB relays (2 and 1) between HeNB-3 and the EPC.
    assert_eq!(forwarding_path(&tables, 3, EPC_NODE).unwrap(), [3, 2, 1, 0]);
    assert_eq!(h3.routes().get(EPC_NODE).unwrap().cost, 3);
    assert_eq!(h3.tunnels().filter(|t| t.kind == TunnelKind::VX2).count(), 2);
    assert!(validate_handshake_trace(s.net.trace()).is_ok());
    let kinds: Vec<&str> = s.net.trace().iter().filter(|r| r.corr == 1).map(|r| r.kind).collect();
    assert_eq!(kinds, ["InterlayerDiscovery", "RouteActivationRequest", "RouteActivationResponse", "InterlayerUpdate"]);
}

#[test]
fn isolated_henb_is_standalone_without_tunnels() {
    let mut g = LinkStateGraph::new();
    g.add_node(EPC_NODE);
    g.add_node(1);
    let mut s = Sim::new(g);
    s.run_for_ms(10);
    let h = s.net.henb(1).unwrap();
    assert_eq!(h.mode(), ConnectivityMode::Standalone);
    assert_eq!(h.tunnels().count(), 0);
    assert!(s.seen.notices.contains(&Notice::Bootstrapped { henb: 1, mode: ConnectivityMode::Standalone }));
}

#[test]
fn full_mesh_has_direct_tunnels() {
    let nodes = [
        (EPC_NODE, Position::new(0.0, 0.0)),
        (1, Position::new(500.0, 0.0)),
        (2, Position::new(0.0, 500.0)),
        (3, Position::new(500.0, 500.0)),
    ];
    let wifi = LinkClassParams::default_for(LinkClass::WifiBackhaul);
    assert!(max_range_m(&wifi) > 800.0);
    let g = LinkStateGraph::from_positions(&nodes, &wifi, None);
    let mut s = Sim::new(g);
    s.run_for_ms(10);
    for h in s.net.henbs() {
        assert_eq!(h.tunnels().filter(|t| t.kind == TunnelKind::VX2).count(), 2);
        assert_eq!(h.tunnels().filter(|t| t.kind == TunnelKind::VS1).count(), 1);
        assert!(h.routes().routes.values().all(|r| r.cost == 1));
    }
}

#[test]
fn standalone_attach_serves_local_bearer() {
    let mut g = LinkStateGraph::new();
    g.add_node(EPC_NODE);
    g.add_node(1);
    let mut s = Sim::new(g);
    s.run_for_ms(5);
    let t = s.now();
    assert!(matches!(s.net.attach_ue(t, 10, 1, 100.0), Ok(AttachOutcome::Started(_))));
    s.run_for_ms(50);
    let h = s.net.henb(1).unwrap();
    let b = *h.active_bearer(10).unwrap();
    assert_eq!(b.scope, BearerScope::Local);
    assert_eq!(b.state, BearerState::Active);
    assert_eq!(s.net.attach_state(10), AttachState::Attached);
    // Sync stays deferred forever without an EPC route.
    s.run_for_ms(5000);
    assert!(!s.net.henb(1).unwrap().context(10).unwrap().epc_synced);
    assert!(s.net.trace().iter().all(|r| r.kind != "ContextSync"));
    assert_eq!(s.net.promote_bearer_e2e(1, 10), Err(PromoteError::NotSynced(10)));
    // Intracell switching still works.
    let t = s.now();
    assert!(matches!(s.net.attach_ue(t, 11, 1, 100.0), Ok(AttachOutcome::Started(_))));
    s.run_for_ms(50);
    let t = s.now();
    assert_eq!(s.net.route_user_packet(t, 1, 10, Some(11), pkt(0, t)), Ok(Forwarding::Local { henb: 1 }));
    assert_eq!(s.net.route_user_packet(t, 1, 10, None, pkt(1, t)), Err(DropReason::NotEndToEnd));
}

#[test]
fn attach_is_idempotent_and_range_checked() {
    let mut s = Sim::new(chain());
    s.run_for_ms(5);
    let t = s.now();
    let AttachOutcome::Started(c) = s.net.attach_ue(t, 1, 1, 200.0).unwrap() else { panic!() };
    assert_eq!(s.net.attach_ue(t, 1, 1, 200.0), Ok(AttachOutcome::InProgress(c)));
    assert_eq!(s.net.attach_ue(t, 1, 2, 200.0), Err(AttachError::ServedElsewhere { ue: 1, serving: 1 }));
    s.run_for_ms(50);
    let bearer = s.net.henb(1).unwrap().active_bearer(1).unwrap().id;
    let before = s.net.trace().len();
    let t = s.now();
    assert_eq!(s.net.attach_ue(t, 1, 1, 200.0), Ok(AttachOutcome::AlreadyAttached(bearer)));
    s.run_for_ms(1);
    assert_eq!(s.net.trace().len(), before);
    assert_eq!(s.net.attach_ue(t, 2, 1, 1e12), Err(AttachError::OutOfRange { ue: 2, henb: 1 }));
    assert_eq!(s.net.attach_ue(t, 2, 9, 1.0), Err(AttachError::UnknownHenb(9)));
}

#[test]
fn attach_trace_follows_handshake_order() {
    let mut s = Sim::new(chain());
    s.run_for_ms(5);
    let t = s.now();
    let AttachOutcome::Started(c) = s.net.attach_ue(t, 4, 2, 100.0).unwrap() else { panic!() };
    s.run_for_ms(100);
    let kinds: Vec<&str> = s.net.trace().iter().filter(|r| r.corr == c).map(|r| r.kind).collect();
    assert_eq!(
        kinds,
        [
            "UeAttachRequest",
            "AttachRequestToMmeA",
            "AttachHandshake",
            "AttachHandshake",
            "CreateSessionRequest",
            "CreateSessionUpdate",
            "CreateSessionResponse",
            "BearerCreated",
            "UeNotify"
        ]
    );
    let recv: Vec<Endpoint> = s.net.trace().iter().filter(|r| r.corr == c).map(|r| r.node).collect();
    assert_eq!(recv[0].to_string(), "henb2/rrc");
    assert_eq!(recv[8], Endpoint::Ue(4));
}

#[test]
fn many_sequential_attaches_get_distinct_bearers() {
    let mut s = Sim::new(chain());
    s.run_for_ms(5);
    for ue in 0..250 {
        let t = s.now();
        s.net.attach_ue(t, ue, 1 + ue % 3, 100.0).unwrap();
        s.run_for_ms(10);
    }
    s.run_for_ms(2000);
    let mut ids = std::collections::BTreeSet::new();
    for h in s.net.henbs() {
        for b in h.bearers() {
            assert!(ids.insert(b.id));
        }
    }
    assert_eq!(ids.len(), 250);
    let r = validate_handshake_trace(s.net.trace());
    assert!(r.is_ok(), "{:?}", r.violations.first());
    assert!(r.incomplete.is_empty());
    assert_eq!(s.net.epc().synced_contexts().len(), 250);
}

#[test]
fn sync_then_promote_then_external_traffic_buffers_through_cut() {
    let mut s = Sim::new(chain());
    s.run_for_ms(5);
    let t = s.now();
    s.net.attach_ue(t, 1, 3, 100.0).unwrap();
    assert_eq!(s.net.promote_bearer_e2e(3, 1), Err(PromoteError::NotActive(1)));
    s.run_for_ms(100);
    let ctx = s.net.henb(3).unwrap().context(1).unwrap();
    assert!(ctx.epc_synced, "one backhaul round trip suffices");
    assert!(s.seen.notices.iter().any(|n| matches!(n, Notice::Synced { ue: 1, henb: 3 })));
    let bearer = s.net.promote_bearer_e2e(3, 1).unwrap();
    assert_eq!(s.net.henb(3).unwrap().bearer(bearer).unwrap().scope, BearerScope::EndToEnd);

    let t = s.now();
    assert_eq!(s.net.route_user_packet(t, 3, 1, None, pkt(0, t)), Ok(Forwarding::Tunneled { hops: 3 }));
    s.run_for_ms(50);
    assert_eq!(s.seen.deliveries.len(), 1);
    assert_eq!(s.seen.deliveries[0].node, EPC_NODE);
    assert_eq!(s.seen.deliveries[0].frame.dst, UserDst::Server);

    // Cut the EPC link; after the bootstrap round vS1 is disrupted and
    // external packets sit in the DMA buffer.
    let t = s.now();
    assert!(s.net.set_link(t, 1, EPC_NODE, false));
    s.run_for_ms(5);
    assert!(!s.net.henb(3).unwrap().vs1().unwrap().is_up());
    assert_eq!(s.net.henb(3).unwrap().mode(), ConnectivityMode::Standalone);
    for seq in 1..=100 {
        let t = s.now();
        assert_eq!(s.net.route_user_packet(t, 3, 1, None, pkt(seq, t)), Ok(Forwarding::Buffered));
        s.run_for_ms(25);
    }
    assert_eq!(s.net.henb(3).unwrap().vs1().unwrap().dma().len(), 100);
    let t = s.now();
    s.net.set_link(t, 1, EPC_NODE, true);
    s.run_for_ms(200);
    let seqs: Vec<u64> = s.seen.deliveries.iter().map(|d| d.frame.pkt.seq).collect();
    assert_eq!(seqs, (0..=100).collect::<Vec<_>>());
    assert!(s.seen.drops.is_empty());
    assert_eq!(s.net.transit_held(), 0);
}

#[test]
fn deferred_sync_completes_within_one_period_of_recovery() {
    let mut g = chain();
    g.set_link_up(1, EPC_NODE, false);
    let mut s = Sim::new(g);
    s.run_for_ms(5);
    let t = s.now();
    s.net.attach_ue(t, 5, 2, 100.0).unwrap();
    s.run_for_ms(50);
    let t = s.now();
    assert_eq!(s.net.sync_context_to_epc(t, 2, 5), SyncOutcome::Deferred);
    s.run_to(SimTime::from_secs(5));
    let t = s.now();
    s.net.set_link(t, 1, EPC_NODE, true);
    s.run_to(SimTime::from_secs(6) + SimTime::from_ms(100));
    assert!(s.net.henb(2).unwrap().context(5).unwrap().epc_synced);
    let t = s.now();
    assert_eq!(s.net.sync_context_to_epc(t, 2, 5), SyncOutcome::AlreadySynced);
}

#[test]
fn intercell_packet_uses_one_vx2_hop() {
    let mut s = Sim::new(chain());
    s.run_for_ms(5);
    let t = s.now();
    s.net.attach_ue(t, 1, 1, 100.0).unwrap();
    s.net.attach_ue(t, 2, 2, 100.0).unwrap();
    s.run_for_ms(100);
    let t = s.now();
    assert_eq!(s.net.route_user_packet(t, 1, 1, Some(2), pkt(0, t)), Err(DropReason::NotEndToEnd));
    s.net.promote_bearer_e2e(1, 1).unwrap();
    assert_eq!(s.net.route_user_packet(t, 1, 1, Some(2), pkt(0, t)), Ok(Forwarding::Tunneled { hops: 1 }));
    s.run_for_ms(10);
    assert_eq!(s.seen.deliveries.last().unwrap().frame.dst, UserDst::Cell { henb: 2, ue: 2 });
    assert_eq!(s.seen.deliveries.last().unwrap().node, 2);
}

#[test]
fn detach_releases_bearer_and_deferred_detach_waits_for_attach() {
    let mut s = Sim::new(chain());
    s.run_for_ms(5);
    let t = s.now();
    s.net.attach_ue(t, 1, 1, 100.0).unwrap();
    assert_eq!(s.net.detach_ue(t, 1), fmesim_core::fme::network::DetachOutcome::Deferred);
    s.run_for_ms(100);
    assert_eq!(s.net.attach_state(1), AttachState::Detached);
    assert!(s.net.henb(1).unwrap().bearers().next().is_none());
    let r = validate_handshake_trace(s.net.trace());
    assert!(r.is_ok() && r.incomplete.is_empty());
    // Attach requested while detaching runs afterwards.
    let t = s.now();
    s.net.attach_ue(t, 1, 1, 100.0).unwrap();
    s.run_for_ms(100);
    let t = s.now();
    s.net.detach_ue(t, 1);
    assert_eq!(s.net.attach_ue(t, 1, 1, 100.0), Ok(AttachOutcome::Queued));
    s.run_for_ms(100);
    assert_eq!(s.net.attach_state(1), AttachState::Attached);
}

#[test]
fn zero_gateway_budget_still_attaches() {
    let cfg = FmeConfig { gw_budget: 0, ..FmeConfig::default() };
    let mut net = FmeNetwork::new(cfg, chain());
    let mut q = EventQueue::new();
    net.start(SimTime::ZERO);
    net.drive(&mut q, SimTime::from_ms(5));
    net.attach_ue(q.now(), 1, 1, 100.0).unwrap();
    net.drive(&mut q, SimTime::from_ms(200));
    assert!(net.henb(1).unwrap().active_bearer(1).is_some());
    assert_eq!(net.promote_bearer_e2e(1, 1), Err(PromoteError::GatewayFunctionInactive));
}

#[test]
fn server_reaches_promoted_ue_before_any_link_change() {
    let mut s = Sim::new(chain());
    s.run_for_ms(5);
    let t = s.now();
    s.net.attach_ue(t, 1, 3, 100.0).unwrap();
    s.run_for_ms(100);
    s.net.promote_bearer_e2e(3, 1).unwrap();
    let t = s.now();
    assert_eq!(s.net.send_from_server(t, 1, pkt(0, t)), Ok(Forwarding::Tunneled { hops: 3 }));
    s.run_for_ms(50);
    assert_eq!(s.seen.deliveries.len(), 1);
    assert_eq!(s.seen.deliveries[0].frame.dst, UserDst::Cell { henb: 3, ue: 1 });
}
