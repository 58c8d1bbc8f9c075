use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use super::cell::{CellRadio, RadioJob};
use super::{WorldConfig, WorldError};
use crate::engine::{EventQueue, SimTime};
use crate::fme::network::{Forwarding, Notice, UserDst};
use crate::fme::routing::{BhNode, LinkStateGraph, EPC_NODE};
use crate::fme::trace::{validate_handshake_trace, TraceRecord, ValidationReport};
use crate::fme::{FmeEvent, FmeNetwork};
use crate::radio::{tdd_cell_capacity_bps, Direction, LinkClass, LinkClassParams};
use crate::rng::RngStream;
use crate::topology::{random_waypoint_step, MobilityState, Region};
use crate::traffic::{
    start_video_stream, start_voice_call, AppFlow, FlowCounters, FlowEnd, FlowId, Packet, UeId,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FlowClass {
    Intracell,
    Intercell,
    VideoUl,
    VideoDl,
}

impl FlowClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowClass::Intracell => "intracell",
            FlowClass::Intercell => "intercell",
            FlowClass::VideoUl => "video_ul",
            FlowClass::VideoDl => "video_dl",
        }
    }

    fn needs_end_to_end(self) -> bool {
        self != FlowClass::Intracell
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowReport {
    pub id: FlowId,
    pub class: FlowClass,
    pub nominal_bps: f64,
    /// `None` if the flow never got its bearers.
    pub start: Option<SimTime>,
    pub stop: SimTime,
    pub counters: FlowCounters,
}

impl FlowReport {
    pub fn goodput_bps(&self) -> f64 {
        match self.start {
            Some(s) if self.stop > s => self.counters.delivered_bytes as f64 * 8.0 / (self.stop - s).as_secs_f64(),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub cell: BhNode,
    /// Mean served rate over the measurement window, per direction.
    pub ul_bps: f64,
    pub dl_bps: f64,
    /// UEs of this cell that are an endpoint of at least one flow.
    pub n_users: usize,
    pub offered_ul_bps: f64,
    pub offered_dl_bps: f64,
    pub capacity_ul_bps: f64,
    pub capacity_dl_bps: f64,
    /// Bytes sent over the air in each whole second of the run.
    pub air_bytes_ul: Vec<u64>,
    pub air_bytes_dl: Vec<u64>,
    pub radio_drops: u64,
}

impl CellReport {
    pub fn per_user_bps(&self, dir: Direction) -> f64 {
        if self.n_users == 0 {
            return 0.0;
        }
        let total = match dir {
            Direction::Ul => self.ul_bps,
            Direction::Dl => self.dl_bps,
        };
        total / self.n_users as f64
    }

    pub fn max_bin_bps(&self, dir: Direction) -> f64 {
        let bins = match dir {
            Direction::Ul => &self.air_bytes_ul,
            Direction::Dl => &self.air_bytes_dl,
        };
        bins.iter().copied().max().unwrap_or(0) as f64 * 8.0
    }
}

#[derive(Debug, Clone)]
pub struct RoundReport {
    pub cells: Vec<CellReport>,
    pub flows: Vec<FlowReport>,
    /// Intracell bytes delivered in each whole second of the run.
    pub intracell_delivered_bytes: Vec<u64>,
    pub handshake: ValidationReport,
    /// Every control message delivered during the round.
    pub trace: Vec<TraceRecord>,
    pub invariant_violations: u64,
    pub ues_attached: usize,
    pub events: u64,
}

impl RoundReport {
    pub fn cell(&self, id: BhNode) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.cell == id)
    }

    /// Relative shortfall of intracell goodput during `[from_s, to_s)`
    /// against the `baseline_s` seconds before it. Negative means a gain.
    pub fn intracell_dip(&self, from_s: usize, to_s: usize, baseline_s: usize) -> f64 {
        let bins = &self.intracell_delivered_bytes;
        let mean = |a: usize, b: usize| {
            let s = &bins[a.min(bins.len())..b.min(bins.len())];
            if s.is_empty() {
                0.0
            } else {
                s.iter().sum::<u64>() as f64 / s.len() as f64
            }
        };
        let base = mean(from_s.saturating_sub(baseline_s), from_s);
        if base == 0.0 {
            return 0.0;
        }
        1.0 - mean(from_s, to_s) / base
    }
}

#[derive(Debug, Clone)]
enum WorldEvent {
    Fme(FmeEvent),
    Subframe,
    Emit(FlowId),
    Mobility,
    Link { a: BhNode, b: BhNode, up: bool },
    Attach(UeId),
}

#[derive(Debug, Clone)]
struct FlowState {
    app: AppFlow,
    class: FlowClass,
    active: bool,
    counters: FlowCounters,
}

#[derive(Debug, Clone)]
struct Ue {
    cell: BhNode,
    mobility: MobilityState,
}

/// Three (or more) HeNB cells with their UEs, driven subframe by subframe.
/// Uplink packets leave the UE queue on uplink subframes, cross the FME
/// network, and reach their receiver on downlink subframes.
pub struct CellularSim {
    cfg: WorldConfig,
    net: FmeNetwork,
    queue: EventQueue<WorldEvent>,
    radios: BTreeMap<BhNode, CellRadio>,
    regions: BTreeMap<BhNode, Region>,
    ues: BTreeMap<UeId, Ue>,
    flows: Vec<FlowState>,
    pending: BTreeSet<FlowId>,
    attached: BTreeSet<UeId>,
    end_to_end: BTreeSet<UeId>,
    completed: Vec<(BhNode, Direction, RadioJob)>,
    air: BTreeMap<BhNode, [Vec<u64>; 2]>,
    intracell_bins: Vec<u64>,
    violations: u64,
    mobility_rng: RngStream,
    end: SimTime,
}

fn dir_index(dir: Direction) -> usize {
    match dir {
        Direction::Ul => 0,
        Direction::Dl => 1,
    }
}

impl CellularSim {
    pub fn new(cfg: WorldConfig, seed: u64) -> Result<Self, WorldError> {
        cfg.validate()?;
        let root = RngStream::new(seed, "world");
        let mut place = root.substream("placement");
        let mut apps = root.substream("apps");
        let mut attach = root.substream("attach");
        let mobility_rng = root.substream("mobility");

        let mut nodes = vec![(EPC_NODE, cfg.epc)];
        nodes.extend(cfg.cell_ids().zip(cfg.henbs.iter().copied()));
        let graph = LinkStateGraph::from_positions(
            &nodes,
            &LinkClassParams::default_for(LinkClass::WifiBackhaul),
            cfg.backhaul_range_cap_m,
        );
        let mut net = FmeNetwork::new(cfg.fme.clone(), graph);
        net.set_record_trace(true);

        let end = SimTime::from_ms(cfg.duration_ms);
        let n_bins = cfg.duration_ms.div_ceil(1000) as usize;
        let mut radios = BTreeMap::new();
        let mut regions = BTreeMap::new();
        let mut air = BTreeMap::new();
        let mut ues = BTreeMap::new();
        let mut by_cell: BTreeMap<BhNode, Vec<UeId>> = BTreeMap::new();
        let mut next_ue: UeId = 1;
        for (cell, centre) in cfg.cell_ids().zip(cfg.henbs.iter()) {
            let region = Region::Disc { cx: centre.x_m, cy: centre.y_m, radius: cfg.cell_radius_m };
            let ids = by_cell.entry(cell).or_default();
            for _ in 0..cfg.ues_per_cell {
                let pos = region.sample(&mut place);
                let mobility = MobilityState::new(pos, &region, &cfg.speeds, &mut place);
                ues.insert(next_ue, Ue { cell, mobility });
                ids.push(next_ue);
                next_ue += 1;
            }
            radios.insert(cell, CellRadio::new(cfg.cell, cfg.radio_queue_bytes));
            regions.insert(cell, region);
            air.insert(cell, [vec![0; n_bins], vec![0; n_bins]]);
        }

        // Endpoints are taken in placement order, which is already random.
        let mut free: BTreeMap<BhNode, core::slice::Iter<'_, UeId>> =
            by_cell.iter().map(|(&c, v)| (c, v.iter())).collect();
        let mut take = |cell: BhNode| -> UeId { *free.get_mut(&cell).and_then(Iterator::next).expect("validated") };
        let mut flows: Vec<FlowState> = Vec::new();
        let jitter = cfg.apps.start_jitter_ms.max(1) * 1000;
        let start = |apps: &mut RngStream| SimTime(apps.below(jitter));
        let push = |flows: &mut Vec<FlowState>, app: AppFlow, class| {
            flows.push(FlowState { app, class, active: false, counters: FlowCounters::default() })
        };
        for cell in cfg.cell_ids() {
            for _ in 0..cfg.apps.intracell_calls_per_cell {
                let (a, b) = (take(cell), take(cell));
                let id = flows.len() as FlowId;
                let [f, g] = start_voice_call((id, id + 1), a, b, start(&mut apps), end);
                push(&mut flows, f, FlowClass::Intracell);
                push(&mut flows, g, FlowClass::Intracell);
            }
            for _ in 0..cfg.apps.video_ues_per_cell {
                let u = take(cell);
                let t = start(&mut apps);
                let id = flows.len() as FlowId;
                push(&mut flows, start_video_stream(id, u, true, t, end), FlowClass::VideoUl);
                push(&mut flows, start_video_stream(id + 1, u, false, t, end), FlowClass::VideoDl);
            }
        }
        for &(ca, cb) in &cfg.apps.intercell_pairs {
            for _ in 0..cfg.apps.intercell_calls_per_pair {
                let (a, b) = (take(ca), take(cb));
                let id = flows.len() as FlowId;
                let [f, g] = start_voice_call((id, id + 1), a, b, start(&mut apps), end);
                push(&mut flows, f, FlowClass::Intercell);
                push(&mut flows, g, FlowClass::Intercell);
            }
        }
        drop(take);

        let mut queue = EventQueue::new();
        net.start(SimTime::ZERO);
        let window = cfg.attach_window_ms.max(1) * 1000;
        for &ue in ues.keys() {
            queue.schedule(SimTime(attach.below(window)), 0, WorldEvent::Attach(ue)).expect("future");
        }
        queue.schedule(SimTime::ZERO, 0, WorldEvent::Subframe).expect("future");
        queue.schedule(SimTime::from_ms(cfg.mobility_tick_ms), 0, WorldEvent::Mobility).expect("future");
        for o in &cfg.outages {
            let (a, b) = (o.a, o.b);
            queue.schedule(SimTime::from_ms(o.at_ms), 0, WorldEvent::Link { a, b, up: false }).expect("future");
            let back = SimTime::from_ms(o.at_ms + o.duration_ms);
            queue.schedule(back, 0, WorldEvent::Link { a, b, up: true }).expect("future");
        }

        let pending = (0..flows.len() as FlowId).collect();
        let mut sim = CellularSim {
            cfg,
            net,
            queue,
            radios,
            regions,
            ues,
            flows,
            pending,
            attached: BTreeSet::new(),
            end_to_end: BTreeSet::new(),
            completed: Vec::new(),
            air,
            intracell_bins: vec![0; n_bins],
            violations: 0,
            mobility_rng,
            end,
        };
        sim.drain_outbox(SimTime::ZERO);
        Ok(sim)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn network(&self) -> &FmeNetwork {
        &self.net
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn run(mut self) -> RoundReport {
        while let Some(ev) = self.queue.pop_until(self.end) {
            let now = ev.fire_time;
            // User-plane events never touch UE contexts or bearers.
            let control = matches!(ev.payload, WorldEvent::Fme(_) | WorldEvent::Link { .. } | WorldEvent::Attach(_));
            self.handle(now, ev.payload);
            self.drain_outbox(now);
            if control && self.net.check_invariants().is_err() {
                self.violations += 1;
            }
        }
        self.report()
    }

    fn handle(&mut self, now: SimTime, ev: WorldEvent) {
        match ev {
            WorldEvent::Fme(e) => self.net.handle_event(now, e),
            WorldEvent::Subframe => self.subframe(now),
            WorldEvent::Emit(f) => self.emit(now, f),
            WorldEvent::Mobility => {
                self.move_ues();
                self.try_promote(now);
                self.activate_ready(now);
                self.schedule(now + SimTime::from_ms(self.cfg.mobility_tick_ms), WorldEvent::Mobility);
            }
            WorldEvent::Link { a, b, up } => {
                self.net.set_link(now, a, b, up);
            }
            WorldEvent::Attach(ue) => {
                let u = &self.ues[&ue];
                let henb_pos = self.cfg.henbs[(u.cell - 1) as usize];
                let d = u.mobility.position.distance(&henb_pos);
                // Out-of-range UEs simply stay detached; their flows never start.
                let _ = self.net.attach_ue(now, ue, u.cell, d);
            }
        }
    }

    fn schedule(&mut self, at: SimTime, ev: WorldEvent) {
        if at < self.end {
            self.queue.schedule(at, 0, ev).expect("scheduled in the future");
        }
    }

    fn move_ues(&mut self) {
        let dt = self.cfg.mobility_tick_ms as f64 / 1000.0;
        for u in self.ues.values_mut() {
            let region = &self.regions[&u.cell];
            u.mobility = random_waypoint_step(&u.mobility, dt, region, &self.cfg.speeds, &mut self.mobility_rng);
        }
    }

    fn drain_outbox(&mut self, now: SimTime) {
        loop {
            let out = self.net.take_outbox();
            if out.is_empty() {
                return;
            }
            for (at, ev) in out.events {
                self.queue.schedule(at, 0, WorldEvent::Fme(ev)).expect("FME schedules forward");
            }
            let mut changed = false;
            for n in out.notices {
                match n {
                    Notice::AttachComplete { ue, .. } => {
                        self.attached.insert(ue);
                        changed = true;
                    }
                    Notice::Synced { .. } | Notice::TunnelChanged { .. } => changed = true,
                    Notice::DetachComplete { ue, .. } => {
                        self.attached.remove(&ue);
                        self.end_to_end.remove(&ue);
                    }
                    Notice::Bootstrapped { .. } => {}
                }
            }
            for d in out.deliveries {
                match d.frame.dst {
                    UserDst::Server => self.delivered(now, d.frame.pkt),
                    UserDst::Cell { henb, ue } => self.to_downlink(henb, ue, d.frame.pkt),
                }
            }
            for (pkt, _) in out.drops {
                self.flows[pkt.flow as usize].counters.on_dropped();
            }
            if changed {
                self.try_promote(now);
                self.activate_ready(now);
            }
        }
    }

    fn try_promote(&mut self, _now: SimTime) {
        let want: BTreeSet<UeId> = self
            .pending
            .iter()
            .map(|&f| &self.flows[f as usize])
            .filter(|f| f.class.needs_end_to_end())
            .flat_map(|f| [f.app.src.ue(), f.app.dst.ue()])
            .flatten()
            .filter(|u| self.attached.contains(u) && !self.end_to_end.contains(u))
            .collect();
        for ue in want {
            let cell = self.ues[&ue].cell;
            if self.net.promote_bearer_e2e(cell, ue).is_ok() {
                self.end_to_end.insert(ue);
            }
        }
    }

    fn ready(&self, f: &FlowState) -> bool {
        [f.app.src.ue(), f.app.dst.ue()].into_iter().flatten().all(|u| {
            self.attached.contains(&u) && (!f.class.needs_end_to_end() || self.end_to_end.contains(&u))
        })
    }

    fn activate_ready(&mut self, now: SimTime) {
        let ready: Vec<FlowId> = self.pending.iter().copied().filter(|&f| self.ready(&self.flows[f as usize])).collect();
        for id in ready {
            self.pending.remove(&id);
            let f = &mut self.flows[id as usize];
            f.active = true;
            if now > f.app.start {
                f.app.start = now;
            }
            if let Some(p) = f.app.next_packet(f.app.start) {
                self.schedule(p.created_at, WorldEvent::Emit(id));
            }
        }
    }

    fn emit(&mut self, now: SimTime, id: FlowId) {
        let f = &mut self.flows[id as usize];
        let Some(pkt) = f.app.next_packet(now) else { return };
        debug_assert_eq!(pkt.created_at, now);
        f.counters.on_sent();
        let app = f.app.clone();
        match app.src {
            FlowEnd::Ue(u) => {
                let cell = self.ues[&u].cell;
                if !self.radios.get_mut(&cell).expect("cell").ul.push(RadioJob { flow: id, ue: u, pkt }) {
                    self.flows[id as usize].counters.on_dropped();
                }
            }
            FlowEnd::Server => {
                let dst = app.dst.ue().expect("server flows end at a UE");
                if self.net.send_from_server(now, dst, pkt).is_err() {
                    self.flows[id as usize].counters.on_dropped();
                }
            }
        }
        if let Some(next) = app.next_packet(now + SimTime(1)) {
            self.schedule(next.created_at, WorldEvent::Emit(id));
        }
    }

    fn to_downlink(&mut self, henb: BhNode, ue: UeId, pkt: Packet) {
        let taken = match self.radios.get_mut(&henb) {
            Some(r) => r.dl.push(RadioJob { flow: pkt.flow, ue, pkt }),
            None => false,
        };
        if !taken {
            self.flows[pkt.flow as usize].counters.on_dropped();
        }
    }

    fn delivered(&mut self, now: SimTime, pkt: Packet) {
        let f = &mut self.flows[pkt.flow as usize];
        f.counters.on_delivered(&pkt, now);
        if f.class == FlowClass::Intracell {
            if let Some(b) = self.intracell_bins.get_mut((now.0 / 1_000_000) as usize) {
                *b += u64::from(pkt.bytes);
            }
        }
    }

    fn subframe(&mut self, now: SimTime) {
        // Jobs that finished in the previous subframe land now.
        for (cell, dir, job) in core::mem::take(&mut self.completed) {
            match dir {
                Direction::Ul => self.uplink_done(now, cell, job),
                Direction::Dl => self.delivered(now, job.pkt),
            }
        }
        let index = ((now.0 / 1000) % 10) as usize;
        let bin = (now.0 / 1_000_000) as usize;
        for (&cell, radio) in self.radios.iter_mut() {
            for dir in [Direction::Ul, Direction::Dl] {
                if let Some((sent, done)) = radio.subframe(index, dir) {
                    if let Some(b) = self.air.get_mut(&cell).and_then(|a| a[dir_index(dir)].get_mut(bin)) {
                        *b += u64::from(sent);
                    }
                    self.completed.extend(done.into_iter().map(|j| (cell, dir, j)));
                }
            }
        }
        self.schedule(now + SimTime::SUBFRAME, WorldEvent::Subframe);
    }

    fn uplink_done(&mut self, now: SimTime, cell: BhNode, job: RadioJob) {
        let dst = self.flows[job.flow as usize].app.dst.ue();
        match self.net.route_user_packet(now, cell, job.ue, dst, job.pkt) {
            Ok(Forwarding::Local { henb }) => {
                let d = dst.expect("local switching has a UE receiver");
                self.to_downlink(henb, d, job.pkt);
            }
            Ok(Forwarding::Tunneled { .. } | Forwarding::Buffered) => {}
            Err(_) => self.flows[job.flow as usize].counters.on_dropped(),
        }
    }

    fn report(self) -> RoundReport {
        let secs = self.cfg.duration_ms as f64 / 1000.0;
        let warm = (self.cfg.warmup_ms / 1000) as usize;
        let mut cells = Vec::new();
        for (&cell, radio) in &self.radios {
            let in_cell = |u: Option<UeId>| u.is_some_and(|u| self.ues[&u].cell == cell);
            let mut users = BTreeSet::new();
            let (mut off_ul, mut off_dl) = (0.0, 0.0);
            for f in &self.flows {
                if in_cell(f.app.src.ue()) {
                    users.insert(f.app.src.ue());
                    off_ul += f.app.rate_bps();
                }
                if in_cell(f.app.dst.ue()) {
                    users.insert(f.app.dst.ue());
                    off_dl += f.app.rate_bps();
                }
            }
            let [ul, dl] = self.air[&cell].clone();
            let mean = |bins: &[u64]| {
                let s = &bins[warm.min(bins.len())..];
                let full = (secs - warm as f64).max(f64::MIN_POSITIVE);
                s.iter().sum::<u64>() as f64 * 8.0 / full
            };
            cells.push(CellReport {
                cell,
                ul_bps: mean(&ul),
                dl_bps: mean(&dl),
                n_users: users.len(),
                offered_ul_bps: off_ul,
                offered_dl_bps: off_dl,
                capacity_ul_bps: tdd_cell_capacity_bps(&radio.cfg, Direction::Ul),
                capacity_dl_bps: tdd_cell_capacity_bps(&radio.cfg, Direction::Dl),
                air_bytes_ul: ul,
                air_bytes_dl: dl,
                radio_drops: radio.ul.dropped + radio.dl.dropped,
            });
        }
        let flows = self
            .flows
            .iter()
            .map(|f| FlowReport {
                id: f.app.id,
                class: f.class,
                nominal_bps: f.app.rate_bps(),
                start: f.active.then_some(f.app.start),
                stop: f.app.stop,
                counters: f.counters,
            })
            .collect();
        RoundReport {
            cells,
            flows,
            intracell_delivered_bytes: self.intracell_bins,
            handshake: validate_handshake_trace(self.net.trace()),
            trace: self.net.trace().to_vec(),
            invariant_violations: self.violations,
            ues_attached: self.attached.len(),
            events: self.queue.delivered_count(),
        }
    }
}
