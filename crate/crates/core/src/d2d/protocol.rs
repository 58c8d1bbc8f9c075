//! Frame-level simulation of the D2D protocol.
//!
//! Everything happens on the 10 ms radio-frame grid. Within one frame the
//! order is: coverage and PBCH scans, listening decisions, b-UE rotation,
//! D-beacons (PUCCH), missed-beacon bookkeeping, association responses
//! (PUCCH), association requests (reserved PUSCH), preambles and random
//! access responses (PRACH, PUCCH), peer reservations (reserved PUSCH), and
//! finally data (PUSCH).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use thiserror::Error;

use super::{assigned_channel, AuditEntry, Channel, D2dConfig, D2dError, D2dMessageKind, D2dRole, FRAME_MS};
use crate::engine::{EventQueue, SimTime};
use crate::radio::{max_range_m, path_loss_db, LinkClass, LinkClassParams};
use crate::rng::RngStream;
use crate::topology::Position;
use crate::traffic::UeId;

/// High bits: founding UE; low 16 bits: that UE's founding count.
pub type NetworkId = u64;
pub type ReservationId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DBeacon {
    pub network: NetworkId,
    pub bue: UeId,
    pub members: Vec<UeId>,
    pub seq: u64,
    pub duration: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeaconRecord {
    pub time: SimTime,
    pub beacon: DBeacon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoleChange {
    pub time: SimTime,
    pub ue: UeId,
    pub from: D2dRole,
    pub to: D2dRole,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct D2dNetwork {
    pub id: NetworkId,
    pub bue: UeId,
    /// UE to member id.
    pub members: BTreeMap<UeId, u32>,
    /// Unordered pair `(min, max)` to bound PUSCH slot mask.
    pub reservations: BTreeMap<(UeId, UeId), u32>,
    pub created: SimTime,
    /// Messages the b-UE sent or received other than beacons.
    pub bue_messages: u64,
    next_member_id: u32,
    anchor_frame: u64,
    seq: u64,
    served: BTreeSet<UeId>,
    tenure_beacons: u32,
    lonely: u32,
    booked: BTreeMap<u64, u32>,
    msg4_due: Vec<(u64, UeId)>,
}

impl D2dNetwork {
    pub fn founder(&self) -> UeId {
        (self.id >> 16) as UeId
    }

    fn bound_slots(&self) -> u32 {
        self.reservations.values().fold(0, |m, s| m | s)
    }

    /// Books one reserved-PUSCH slot at or after `frame`.
    fn book(&mut self, frame: u64, per_frame: u32) -> u64 {
        let mut f = frame;
        loop {
            let used = self.booked.entry(f).or_insert(0);
            if *used < per_frame {
                *used += 1;
                return f;
            }
            f += 1;
        }
    }

    fn beacons_at(&self, frame: u64, k: u64) -> bool {
        frame >= self.anchor_frame && (frame - self.anchor_frame) % k == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageMode {
    /// eNB presence follows UE positions and the configured eNB sites.
    Geometry,
    /// eNB presence only changes through `on_enb_signal_change`.
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotRequest {
    /// Lowest free slots in the requester's view of the network table.
    Count(u32),
    Mask(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReservationState {
    Pending,
    Granted { slots: u32 },
    Failed,
    Released,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ReserveError {
    #[error("UE {0} is not a member of a D2D network")]
    NotMember(UeId),
    #[error("UEs {0} and {1} belong to different networks")]
    DifferentNetworks(UeId, UeId),
    #[error("invalid slot request")]
    BadRequest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ResvStage {
    SendRequest { not_before: u64 },
    AwaitResponse { frame: u64, slots: u32 },
    Done,
}

#[derive(Debug, Clone, Copy)]
struct Reservation {
    a: UeId,
    b: UeId,
    network: NetworkId,
    request: SlotRequest,
    attempts: u32,
    stage: ResvStage,
    state: ReservationState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JoinStage {
    Prach { next: u64 },
    Msg3 { frame: u64 },
    Msg4,
}

#[derive(Debug, Clone)]
struct UeState {
    role: D2dRole,
    signal: bool,
    toi_token: u64,
    decide_frame: u64,
    heard: Vec<NetworkId>,
    network: Option<NetworkId>,
    /// Beacon grid of the network this UE follows: anchor frame.
    grid_anchor: u64,
    missed: u32,
    attempt: u32,
    join: JoinStage,
    next_scan: SimTime,
    foundings: u16,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct D2dStats {
    pub beacons_sent: u64,
    pub beacons_decoded: u64,
    pub beacon_collisions: u64,
    pub preambles_sent: u64,
    pub preamble_collisions: u64,
    pub admitted: u64,
    pub merges: u64,
    pub lonely_abdications: u64,
    pub rotations: u64,
    pub scans: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ToiExpiry {
    ue: UeId,
    token: u64,
}

#[derive(Debug)]
pub struct D2dSim {
    cfg: D2dConfig,
    d2d_link: LinkClassParams,
    range_m: f64,
    pbch_range_m: f64,
    positions: Vec<Position>,
    in_range: Vec<Vec<bool>>,
    enbs: Vec<Position>,
    coverage: CoverageMode,
    ues: Vec<UeState>,
    networks: BTreeMap<NetworkId, D2dNetwork>,
    reservations: Vec<Reservation>,
    data_queue: BTreeMap<(UeId, UeId), u64>,
    data_delivered: BTreeMap<(UeId, UeId), u64>,
    timers: EventQueue<ToiExpiry>,
    now: SimTime,
    frame: u64,
    rng: RngStream,
    audit: Vec<AuditEntry>,
    beacons: Vec<BeaconRecord>,
    roles: Vec<RoleChange>,
    stats: D2dStats,
}

impl D2dSim {
    /// UEs are numbered by their index in `positions`. With no `enbs` every
    /// UE is out of coverage and enters listening after the ToI.
    pub fn new(cfg: D2dConfig, positions: Vec<Position>, enbs: Vec<Position>, rng: RngStream) -> Result<Self, D2dError> {
        cfg.validate()?;
        let d2d_link = LinkClassParams::default_for(LinkClass::D2d);
        let pbch_link = LinkClassParams::default_for(LinkClass::LteDl);
        let mut range_m = max_range_m(&d2d_link);
        if let Some(cap) = cfg.range_cap_m {
            range_m = range_m.min(cap);
        }
        let mut pbch_range_m = max_range_m(&pbch_link);
        if let Some(cap) = cfg.pbch_range_cap_m {
            pbch_range_m = pbch_range_m.min(cap);
        }
        let n = positions.len();
        let mut sim = D2dSim {
            cfg,
            d2d_link,
            range_m,
            pbch_range_m,
            positions,
            in_range: Vec::new(),
            enbs,
            coverage: CoverageMode::Geometry,
            ues: Vec::with_capacity(n),
            networks: BTreeMap::new(),
            reservations: Vec::new(),
            data_queue: BTreeMap::new(),
            data_delivered: BTreeMap::new(),
            timers: EventQueue::new(),
            now: SimTime::ZERO,
            frame: 0,
            rng,
            audit: Vec::new(),
            beacons: Vec::new(),
            roles: Vec::new(),
            stats: D2dStats::default(),
        };
        sim.rebuild_range();
        for ue in 0..n {
            let covered = sim.covered(ue);
            sim.ues.push(UeState {
                role: D2dRole::CellAttached,
                signal: covered,
                toi_token: 0,
                decide_frame: 0,
                heard: Vec::new(),
                network: None,
                grid_anchor: 0,
                missed: 0,
                attempt: 0,
                join: JoinStage::Prach { next: 0 },
                next_scan: SimTime::ZERO,
                foundings: 0,
            });
            if !covered {
                sim.enter_toi_wait(ue as UeId);
            }
        }
        Ok(sim)
    }

    pub fn config(&self) -> &D2dConfig {
        &self.cfg
    }

    pub fn set_coverage_mode(&mut self, mode: CoverageMode) {
        self.coverage = mode;
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn decode_range_m(&self) -> f64 {
        self.range_m
    }

    pub fn pbch_range_m(&self) -> f64 {
        self.pbch_range_m
    }

    pub fn ue_count(&self) -> usize {
        self.ues.len()
    }

    pub fn role(&self, ue: UeId) -> D2dRole {
        self.ues[ue as usize].role
    }

    pub fn network_of(&self, ue: UeId) -> Option<NetworkId> {
        let u = &self.ues[ue as usize];
        match u.role {
            D2dRole::BUe | D2dRole::Member => u.network,
            _ => None,
        }
    }

    pub fn networks(&self) -> impl Iterator<Item = &D2dNetwork> {
        self.networks.values()
    }

    pub fn network(&self, id: NetworkId) -> Option<&D2dNetwork> {
        self.networks.get(&id)
    }

    pub fn bues(&self) -> Vec<UeId> {
        (0..self.ues.len() as UeId).filter(|&u| self.role(u) == D2dRole::BUe).collect()
    }

    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn beacon_log(&self) -> &[BeaconRecord] {
        &self.beacons
    }

    pub fn role_log(&self) -> &[RoleChange] {
        &self.roles
    }

    pub fn stats(&self) -> D2dStats {
        self.stats
    }

    pub fn position(&self, ue: UeId) -> Position {
        self.positions[ue as usize]
    }

    pub fn set_position(&mut self, ue: UeId, pos: Position) {
        self.positions[ue as usize] = pos;
        self.rebuild_range();
    }

    pub fn in_range(&self, a: UeId, b: UeId) -> bool {
        self.in_range[a as usize][b as usize]
    }

    pub fn reservation(&self, id: ReservationId) -> ReservationState {
        self.reservations[id as usize].state
    }

    pub fn data_delivered(&self, from: UeId, to: UeId) -> u64 {
        self.data_delivered.get(&(from, to)).copied().unwrap_or(0)
    }

    fn rebuild_range(&mut self) {
        let n = self.positions.len();
        self.in_range = (0..n)
            .map(|i| (0..n).map(|j| i != j && self.positions[i].distance(&self.positions[j]) <= self.range_m).collect())
            .collect();
    }

    fn covered(&self, ue: usize) -> bool {
        let p = self.positions[ue];
        self.enbs.iter().any(|e| e.distance(&p) <= self.pbch_range_m)
    }

    fn frame_time(frame: u64) -> SimTime {
        SimTime::from_ms(frame * FRAME_MS)
    }

    fn set_role(&mut self, ue: UeId, to: D2dRole) {
        let t = self.now();
        let u = &mut self.ues[ue as usize];
        if u.role != to {
            self.roles.push(RoleChange { time: t, ue, from: u.role, to });
            u.role = to;
        }
    }

    fn log(&mut self, ue: UeId, kind: D2dMessageKind, channel: Channel) {
        let time = self.now();
        self.audit.push(AuditEntry { time, ue, kind, channel });
    }

    fn enter_toi_wait(&mut self, ue: UeId) {
        let token = {
            let u = &mut self.ues[ue as usize];
            u.toi_token += 1;
            u.toi_token
        };
        self.set_role(ue, D2dRole::ToiWait);
        let at = self.now + SimTime::from_ms(self.cfg.toi_ms);
        self.timers.schedule(at, ue, ToiExpiry { ue, token }).expect("own clock never trails the queue");
    }

    /// The first listen after the ToI is exact; later ones add jitter so
    /// that UEs which fell back together do not decide together again.
    fn start_listening(&mut self, ue: UeId, relisten: bool) {
        let now = self.now();
        let earliest = now + self.cfg.td() + self.cfg.td();
        let base = earliest.ceil_to(SimTime::from_ms(FRAME_MS)).0 / (FRAME_MS * 1000);
        let jitter = if relisten && self.cfg.listen_jitter_frames > 0 {
            self.rng.below(u64::from(self.cfg.listen_jitter_frames) + 1)
        } else {
            0
        };
        let scan = now + SimTime::from_ms(self.cfg.scan_period_ms);
        let u = &mut self.ues[ue as usize];
        if !relisten {
            u.next_scan = scan;
        }
        u.decide_frame = base + jitter;
        u.heard.clear();
        u.network = None;
        u.missed = 0;
        u.attempt = 0;
        self.set_role(ue, D2dRole::Listening);
    }

    /// eNB signal presence for `ue` changed at the current time.
    pub fn on_enb_signal_change(&mut self, ue: UeId, present: bool) {
        self.ues[ue as usize].signal = present;
        match (self.role(ue), present) {
            (D2dRole::CellAttached, false) => self.enter_toi_wait(ue),
            (D2dRole::ToiWait, true) => {
                self.ues[ue as usize].toi_token += 1;
                self.set_role(ue, D2dRole::CellAttached);
            }
            _ => {}
        }
    }

    pub fn run_until(&mut self, t_end: SimTime) {
        loop {
            let frame_t = Self::frame_time(self.frame);
            let next_timer = self.timers.peek_time();
            match next_timer {
                Some(tt) if tt <= frame_t && tt <= t_end => {
                    let ev = self.timers.pop_until(tt).expect("peeked");
                    self.now = tt;
                    self.on_toi_expiry(ev.payload);
                }
                _ => {
                    if frame_t > t_end {
                        break;
                    }
                    self.now = frame_t;
                    self.process_frame();
                    self.frame += 1;
                }
            }
        }
        while let Some(ev) = self.timers.pop_until(t_end) {
            self.now = ev.fire_time;
            self.on_toi_expiry(ev.payload);
        }
        self.now = self.now.max(t_end);
    }

    fn on_toi_expiry(&mut self, ev: ToiExpiry) {
        let u = &self.ues[ev.ue as usize];
        if u.role == D2dRole::ToiWait && u.toi_token == ev.token {
            self.start_listening(ev.ue, false);
        }
    }

    fn k(&self) -> u64 {
        self.cfg.frames_per_period()
    }

    fn process_frame(&mut self) {
        let f = self.frame;
        let t = self.now();
        let n = self.ues.len() as UeId;

        if self.coverage == CoverageMode::Geometry {
            for ue in 0..n {
                if matches!(self.role(ue), D2dRole::CellAttached | D2dRole::ToiWait) {
                    let c = self.covered(ue as usize);
                    if c != self.ues[ue as usize].signal {
                        self.on_enb_signal_change(ue, c);
                    }
                }
            }
        }

        // PBCH scans.
        for ue in 0..n {
            if self.role(ue).in_d2d() && self.ues[ue as usize].next_scan <= t {
                self.ues[ue as usize].next_scan = t + SimTime::from_ms(self.cfg.scan_period_ms);
                self.stats.scans += 1;
                if self.periodic_enb_scan(ue) {
                    self.disassociate_to(ue, D2dRole::CellAttached);
                }
            }
        }

        // Listening decisions.
        for ue in 0..n {
            if self.role(ue) == D2dRole::Listening && self.ues[ue as usize].decide_frame <= f {
                let pick = self.ues[ue as usize].heard.iter().copied().find(|id| self.networks.contains_key(id));
                match pick {
                    Some(id) => self.start_join(ue, id),
                    None => self.become_bue(ue),
                }
            }
        }

        self.beacon_phase(f);
        self.association_phase(f);
        self.prach_phase(f);
        self.reservation_phase(f);
        self.data_phase();
    }

    /// True when the eNB's broadcast channel is decodable at the UE.
    pub fn periodic_enb_scan(&mut self, ue: UeId) -> bool {
        match self.coverage {
            CoverageMode::Geometry => self.covered(ue as usize),
            CoverageMode::Manual => self.ues[ue as usize].signal,
        }
    }

    fn become_bue(&mut self, ue: UeId) {
        let f = self.frame;
        let t = self.now();
        let u = &mut self.ues[ue as usize];
        u.foundings = u.foundings.wrapping_add(1);
        let id = (u64::from(ue) << 16) | u64::from(u.foundings);
        u.network = Some(id);
        u.grid_anchor = f;
        let mut served = BTreeSet::new();
        served.insert(ue);
        self.networks.insert(
            id,
            D2dNetwork {
                id,
                bue: ue,
                members: BTreeMap::new(),
                reservations: BTreeMap::new(),
                created: t,
                bue_messages: 0,
                next_member_id: 1,
                anchor_frame: f,
                seq: 0,
                served,
                tenure_beacons: 0,
                lonely: 0,
                booked: BTreeMap::new(),
                msg4_due: Vec::new(),
            },
        );
        self.set_role(ue, D2dRole::BUe);
    }

    fn start_join(&mut self, ue: UeId, network: NetworkId) {
        let anchor = self.networks.get(&network).map_or(0, |n| n.anchor_frame);
        let f = self.frame;
        let u = &mut self.ues[ue as usize];
        u.network = Some(network);
        u.grid_anchor = anchor;
        u.missed = 0;
        u.attempt = 0;
        u.join = JoinStage::Prach { next: f + 1 };
        self.set_role(ue, D2dRole::Joining);
    }

    fn rotate_if_due(&mut self, id: NetworkId) {
        if !self.cfg.rotation {
            return;
        }
        let due = self.networks.get(&id).is_some_and(|n| n.tenure_beacons >= self.cfg.rotation_periods);
        if due {
            self.rotate_bue(id);
        }
    }

    /// Hands the b-UE role to the lowest member id not yet served in this
    /// epoch; returns the new b-UE. A network without members is left alone.
    pub fn rotate_bue(&mut self, id: NetworkId) -> Option<UeId> {
        let net = self.networks.get_mut(&id)?;
        if net.members.is_empty() {
            return None;
        }
        let mut by_id: Vec<(u32, UeId)> = net.members.iter().map(|(&u, &m)| (m, u)).collect();
        by_id.sort_unstable();
        let next = match by_id.iter().find(|(_, u)| !net.served.contains(u)) {
            Some(&(_, u)) => u,
            None => {
                net.served.clear();
                by_id[0].1
            }
        };
        let old = net.bue;
        net.members.remove(&next);
        let mid = net.next_member_id;
        net.next_member_id += 1;
        net.members.insert(old, mid);
        net.bue = next;
        net.served.insert(next);
        net.tenure_beacons = 0;
        let anchor = net.anchor_frame;
        self.stats.rotations += 1;
        {
            let o = &mut self.ues[old as usize];
            o.grid_anchor = anchor;
            o.missed = 0;
        }
        {
            let nu = &mut self.ues[next as usize];
            nu.network = Some(id);
        }
        self.set_role(old, D2dRole::Member);
        self.set_role(next, D2dRole::BUe);
        Some(next)
    }

    fn beacon_phase(&mut self, f: u64) {
        let k = self.k();
        let ids: Vec<NetworkId> = self.networks.values().filter(|n| n.beacons_at(f, k)).map(|n| n.id).collect();
        for &id in &ids {
            self.rotate_if_due(id);
        }
        let t = self.now();
        let mut tx: Vec<(UeId, DBeacon)> = Vec::new();
        for &id in &ids {
            let Some(net) = self.networks.get_mut(&id) else { continue };
            net.seq += 1;
            net.tenure_beacons += 1;
            let beacon = DBeacon {
                network: id,
                bue: net.bue,
                members: net.members.keys().copied().collect(),
                seq: net.seq,
                duration: self.cfg.beacon_duration(),
            };
            tx.push((net.bue, beacon));
        }
        for (bue, b) in &tx {
            self.stats.beacons_sent += 1;
            self.log(*bue, D2dMessageKind::DBeacon, Channel::Pucch);
            self.beacons.push(BeaconRecord { time: t, beacon: b.clone() });
        }

        // Receptions against the snapshot of transmitters.
        let n = self.ues.len() as UeId;
        let mut decoded: Vec<Option<usize>> = alloc::vec![None; n as usize];
        for r in 0..n {
            if !self.role(r).in_d2d() || tx.iter().any(|(b, _)| *b == r) {
                continue;
            }
            let heard: Vec<usize> = (0..tx.len()).filter(|&i| self.in_range(tx[i].0, r)).collect();
            match heard.len() {
                0 => {}
                1 => decoded[r as usize] = Some(heard[0]),
                _ => match self.capture(r, &heard, &tx) {
                    Some(i) => decoded[r as usize] = Some(i),
                    None => self.stats.beacon_collisions += 1,
                },
            }
        }

        for r in 0..n {
            let got = decoded[r as usize].map(|i| &tx[i].1);
            if got.is_some() {
                self.stats.beacons_decoded += 1;
            }
            match self.role(r) {
                D2dRole::Listening => {
                    if let Some(b) = got {
                        let u = &mut self.ues[r as usize];
                        if !u.heard.contains(&b.network) {
                            u.heard.push(b.network);
                        }
                    }
                }
                D2dRole::BUe => {
                    let own = self.ues[r as usize].network;
                    if let (Some(b), Some(own)) = (got, own) {
                        if b.network < own && !tx.iter().any(|(u, _)| *u == r) {
                            let target = b.network;
                            self.stats.merges += 1;
                            self.dissolve(own);
                            self.start_join(r, target);
                        }
                    }
                }
                D2dRole::Member | D2dRole::Joining => {
                    let u = &self.ues[r as usize];
                    let Some(own) = u.network else { continue };
                    let expected = f >= u.grid_anchor && (f - u.grid_anchor) % k == 0;
                    match got {
                        Some(b) if b.network == own => {
                            let listed = b.members.contains(&r);
                            let u = &mut self.ues[r as usize];
                            u.missed = 0;
                            if u.role == D2dRole::Member && !listed {
                                self.leave_network(r);
                                self.start_listening(r, true);
                            }
                        }
                        _ if expected => {
                            let limit = self.cfg.missed_beacon_limit;
                            let u = &mut self.ues[r as usize];
                            u.missed += 1;
                            if u.missed >= limit {
                                self.leave_network(r);
                                self.start_listening(r, true);
                            }
                        }
                        _ => {}
                    }
                }
                _ => {}
            }
        }

        // b-UEs nobody has joined eventually give up.
        if self.cfg.lonely_periods > 0 {
            for (bue, b) in &tx {
                let joining = (0..n).any(|u| self.role(u) == D2dRole::Joining && self.ues[u as usize].network == Some(b.network));
                let Some(net) = self.networks.get_mut(&b.network) else { continue };
                if net.bue != *bue {
                    continue;
                }
                if net.members.is_empty() && !joining {
                    net.lonely += 1;
                    if net.lonely >= self.cfg.lonely_periods {
                        self.stats.lonely_abdications += 1;
                        self.dissolve(b.network);
                        self.start_listening(*bue, true);
                    }
                } else {
                    net.lonely = 0;
                }
            }
        }
    }

    fn capture(&self, r: UeId, heard: &[usize], tx: &[(UeId, DBeacon)]) -> Option<usize> {
        let margin = self.cfg.capture_threshold_db?;
        let mut rx: Vec<(f64, usize)> = heard
            .iter()
            .map(|&i| {
                let d = self.positions[r as usize].distance(&self.positions[tx[i].0 as usize]);
                let pl = path_loss_db(&self.d2d_link, d).unwrap_or(f64::INFINITY);
                (-pl, i)
            })
            .collect();
        rx.sort_by(|a, b| b.0.total_cmp(&a.0));
        (rx[0].0 - rx[1].0 >= margin).then_some(rx[0].1)
    }

    /// Removes a network; its members notice through missed beacons.
    fn dissolve(&mut self, id: NetworkId) {
        if self.networks.remove(&id).is_some() {
            for r in self.reservations.iter_mut().filter(|r| r.network == id) {
                if r.state != ReservationState::Failed {
                    r.state = if matches!(r.state, ReservationState::Granted { .. }) {
                        ReservationState::Released
                    } else {
                        ReservationState::Failed
                    };
                    r.stage = ResvStage::Done;
                }
            }
        }
    }

    /// Drops `ue` from its network's member list and frees its reservations.
    fn leave_network(&mut self, ue: UeId) {
        let Some(id) = self.ues[ue as usize].network else { return };
        if let Some(net) = self.networks.get_mut(&id) {
            net.members.remove(&ue);
            net.reservations.retain(|&(a, b), _| a != ue && b != ue);
            net.msg4_due.retain(|&(_, u)| u != ue);
        }
        for r in self.reservations.iter_mut().filter(|r| r.network == id && (r.a == ue || r.b == ue)) {
            r.state = match r.state {
                ReservationState::Granted { .. } => ReservationState::Released,
                ReservationState::Pending => ReservationState::Failed,
                s => s,
            };
            r.stage = ResvStage::Done;
        }
        self.ues[ue as usize].network = None;
    }

    /// Leaves D2D operation. A b-UE hands over first when rotation is on and
    /// it has members; otherwise its network stops beaconing.
    pub fn disassociate(&mut self, ue: UeId) {
        self.disassociate_to(ue, D2dRole::Inactive);
    }

    fn disassociate_to(&mut self, ue: UeId, to: D2dRole) {
        match self.role(ue) {
            D2dRole::BUe => {
                let Some(id) = self.ues[ue as usize].network else { return };
                let handed = self.cfg.rotation && self.rotate_bue(id).is_some();
                if handed {
                    self.log(ue, D2dMessageKind::Disassociation, Channel::ReservedPusch);
                    self.leave_network(ue);
                } else {
                    self.dissolve(id);
                    self.ues[ue as usize].network = None;
                }
            }
            D2dRole::Member => {
                self.log(ue, D2dMessageKind::Disassociation, Channel::ReservedPusch);
                self.leave_network(ue);
            }
            D2dRole::Joining => self.ues[ue as usize].network = None,
            _ => {}
        }
        self.set_role(ue, to);
        if to == D2dRole::CellAttached {
            self.ues[ue as usize].signal = true;
        }
    }

    fn association_phase(&mut self, f: u64) {
        // msg4 on PUCCH: admission.
        let ids: Vec<NetworkId> = self.networks.keys().copied().collect();
        for id in &ids {
            let due: Vec<UeId> = {
                let Some(net) = self.networks.get_mut(id) else { continue };
                let (now, later): (Vec<_>, Vec<_>) = net.msg4_due.iter().partition(|(fr, _)| *fr <= f);
                net.msg4_due = later;
                now.into_iter().map(|(_, u)| u).collect()
            };
            for ue in due {
                if self.role(ue) != D2dRole::Joining || self.ues[ue as usize].network != Some(*id) {
                    continue;
                }
                let Some(net) = self.networks.get_mut(id) else { break };
                let mid = net.next_member_id;
                net.next_member_id += 1;
                net.members.insert(ue, mid);
                net.bue_messages += 1;
                net.lonely = 0;
                let bue = net.bue;
                let anchor = net.anchor_frame;
                self.stats.admitted += 1;
                self.log(bue, D2dMessageKind::AssociationResponse, Channel::Pucch);
                let u = &mut self.ues[ue as usize];
                u.grid_anchor = anchor;
                u.missed = 0;
                self.set_role(ue, D2dRole::Member);
            }
        }
        // msg3 in reserved PUSCH.
        let n = self.ues.len() as UeId;
        for ue in 0..n {
            if self.role(ue) != D2dRole::Joining {
                continue;
            }
            let JoinStage::Msg3 { frame } = self.ues[ue as usize].join else { continue };
            if frame != f {
                continue;
            }
            self.log(ue, D2dMessageKind::AssociationRequest, Channel::ReservedPusch);
            let id = self.ues[ue as usize].network;
            let net = id.and_then(|id| self.networks.get_mut(&id));
            match net {
                Some(net) if self.in_range[ue as usize][net.bue as usize] => {
                    net.bue_messages += 1;
                    net.msg4_due.push((f + 1, ue));
                    self.ues[ue as usize].join = JoinStage::Msg4;
                }
                _ => self.backoff(ue),
            }
        }
    }

    fn backoff(&mut self, ue: UeId) {
        let f = self.frame;
        let k = self.k();
        let cap = self.cfg.backoff_cap_periods;
        let max = self.cfg.max_attempts;
        let attempt = {
            let u = &mut self.ues[ue as usize];
            u.attempt += 1;
            u.attempt
        };
        if attempt >= max {
            self.ues[ue as usize].network = None;
            self.start_listening(ue, true);
            return;
        }
        let window_periods = u64::from((1u32 << (attempt - 1).min(31)).min(cap));
        let wait = 1 + self.rng.below(window_periods * k);
        self.ues[ue as usize].join = JoinStage::Prach { next: f + wait };
    }

    fn prach_phase(&mut self, f: u64) {
        let n = self.ues.len() as UeId;
        let mut by_net: BTreeMap<NetworkId, Vec<(UeId, u64)>> = BTreeMap::new();
        for ue in 0..n {
            if self.role(ue) != D2dRole::Joining {
                continue;
            }
            let JoinStage::Prach { next } = self.ues[ue as usize].join else { continue };
            if next > f {
                continue;
            }
            let preamble = self.rng.below(u64::from(self.cfg.preambles));
            self.stats.preambles_sent += 1;
            self.log(ue, D2dMessageKind::RaPreamble, Channel::Prach);
            let id = self.ues[ue as usize].network.unwrap_or(NetworkId::MAX);
            by_net.entry(id).or_default().push((ue, preamble));
        }
        let per_frame = self.cfg.reserved_pusch_slots;
        for (id, sent) in by_net {
            let bue = self.networks.get(&id).map(|n| n.bue);
            for &(ue, p) in &sent {
                let clash = sent.iter().filter(|(_, q)| *q == p).count() > 1;
                let heard = bue.is_some_and(|b| self.in_range[ue as usize][b as usize]);
                if clash {
                    self.stats.preamble_collisions += 1;
                }
                if clash || !heard {
                    self.backoff(ue);
                    continue;
                }
                let net = self.networks.get_mut(&id).expect("b-UE exists");
                net.bue_messages += 1;
                let slot_frame = net.book(f + 1, per_frame);
                let b = net.bue;
                self.log(b, D2dMessageKind::RaResponse, Channel::Pucch);
                self.ues[ue as usize].join = JoinStage::Msg3 { frame: slot_frame };
            }
        }
    }

    /// Asks for PUSCH slots between two members of the same network. The
    /// exchange runs peer to peer in reserved PUSCH slots.
    pub fn reserve_peer_link(&mut self, a: UeId, b: UeId, request: SlotRequest) -> Result<ReservationId, ReserveError> {
        let na = self.network_of(a).ok_or(ReserveError::NotMember(a))?;
        let nb = self.network_of(b).ok_or(ReserveError::NotMember(b))?;
        if na != nb {
            return Err(ReserveError::DifferentNetworks(a, b));
        }
        let all = (1u32 << self.cfg.data_pusch_slots) - 1;
        match request {
            SlotRequest::Count(c) if c == 0 || c > self.cfg.data_pusch_slots => return Err(ReserveError::BadRequest),
            SlotRequest::Mask(m) if m == 0 || m & !all != 0 => return Err(ReserveError::BadRequest),
            _ => {}
        }
        let id = self.reservations.len() as ReservationId;
        self.reservations.push(Reservation {
            a,
            b,
            network: na,
            request,
            attempts: 0,
            stage: ResvStage::SendRequest { not_before: self.frame },
            state: ReservationState::Pending,
        });
        Ok(id)
    }

    /// Frees a granted reservation.
    pub fn release_reservation(&mut self, id: ReservationId) {
        let r = self.reservations[id as usize];
        if let ReservationState::Granted { .. } = r.state {
            if let Some(net) = self.networks.get_mut(&r.network) {
                net.reservations.remove(&(r.a.min(r.b), r.a.max(r.b)));
            }
            self.reservations[id as usize].state = ReservationState::Released;
        }
    }

    fn reservation_phase(&mut self, f: u64) {
        let per_frame = self.cfg.reserved_pusch_slots;
        let k = self.k();
        for i in 0..self.reservations.len() {
            let r = self.reservations[i];
            match r.stage {
                ResvStage::SendRequest { not_before } if not_before <= f => {
                    let Some(net) = self.networks.get_mut(&r.network) else { continue };
                    let booked = net.book(f, per_frame);
                    if booked != f {
                        self.reservations[i].stage = ResvStage::SendRequest { not_before: booked };
                        continue;
                    }
                    let free = !net.bound_slots() & ((1u32 << self.cfg.data_pusch_slots) - 1);
                    let slots = match r.request {
                        SlotRequest::Mask(m) => m,
                        SlotRequest::Count(c) => lowest_bits(free, c),
                    };
                    let resp_frame = net.book(f + 1, per_frame);
                    self.log(r.a, D2dMessageKind::ReservationRequest, Channel::ReservedPusch);
                    self.reservations[i].stage = ResvStage::AwaitResponse { frame: resp_frame, slots };
                }
                ResvStage::AwaitResponse { frame, slots } if frame <= f => {
                    self.log(r.b, D2dMessageKind::ReservationResponse, Channel::ReservedPusch);
                    let Some(net) = self.networks.get_mut(&r.network) else { continue };
                    let pair = (r.a.min(r.b), r.a.max(r.b));
                    let taken = net.bound_slots() & slots;
                    if slots.count_ones() > 0 && taken == 0 && !net.reservations.contains_key(&pair) {
                        net.reservations.insert(pair, slots);
                        self.reservations[i].stage = ResvStage::Done;
                        self.reservations[i].state = ReservationState::Granted { slots };
                    } else {
                        let attempts = r.attempts + 1;
                        self.reservations[i].attempts = attempts;
                        if attempts >= self.cfg.max_attempts {
                            self.reservations[i].stage = ResvStage::Done;
                            self.reservations[i].state = ReservationState::Failed;
                        } else {
                            let wait = 1 + self.rng.below(k);
                            self.reservations[i].stage = ResvStage::SendRequest { not_before: f + wait };
                        }
                    }
                }
                _ => {}
            }
        }
    }

    /// Queues `bytes` of application data from `from` to `to`; it moves
    /// only over a granted reservation.
    pub fn send_data(&mut self, from: UeId, to: UeId, bytes: u64) {
        *self.data_queue.entry((from, to)).or_insert(0) += bytes;
    }

    fn data_phase(&mut self) {
        let mut moves = Vec::new();
        for net in self.networks.values() {
            for (&(a, b), &slots) in &net.reservations {
                let mut budget = u64::from(slots.count_ones()) * u64::from(self.cfg.slot_bytes);
                for dir in [(a, b), (b, a)] {
                    let queued = self.data_queue.get(&dir).copied().unwrap_or(0);
                    let take = queued.min(budget);
                    if take > 0 {
                        budget -= take;
                        moves.push((dir, take));
                    }
                }
            }
        }
        for (dir, take) in moves {
            *self.data_queue.get_mut(&dir).expect("queued") -= take;
            *self.data_delivered.entry(dir).or_insert(0) += take;
            self.log(dir.0, D2dMessageKind::Data, assigned_channel(D2dMessageKind::Data));
        }
    }
}

fn lowest_bits(mask: u32, count: u32) -> u32 {
    let mut out = 0;
    let mut m = mask;
    for _ in 0..count {
        if m == 0 {
            break;
        }
        let bit = m & m.wrapping_neg();
        out |= bit;
        m &= !bit;
    }
    out
}
