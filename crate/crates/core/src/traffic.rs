//! Constant-bit-rate application flows: EVS voice calls and video streams.

use crate::engine::SimTime;

pub type UeId = u32;
pub type FlowId = u32;

pub const VOICE_PAYLOAD_BYTES: u32 = 160;
pub const VOICE_INTERVAL: SimTime = SimTime(20_000);
pub const VIDEO_PAYLOAD_BYTES: u32 = 1200;
pub const VIDEO_INTERVAL: SimTime = SimTime(25_000);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum AppKind {
    VoiceCall,
    VideoStream,
}

/// A flow endpoint: a UE, or the video server behind the physical EPC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FlowEnd {
    Ue(UeId),
    Server,
}

impl FlowEnd {
    pub fn ue(self) -> Option<UeId> {
        match self {
            FlowEnd::Ue(u) => Some(u),
            FlowEnd::Server => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppFlow {
    pub id: FlowId,
    pub kind: AppKind,
    pub src: FlowEnd,
    pub dst: FlowEnd,
    pub payload_bytes: u32,
    pub interval: SimTime,
    pub start: SimTime,
    /// Exclusive: a packet due exactly at `stop` is not sent.
    pub stop: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub flow: FlowId,
    pub seq: u64,
    pub bytes: u32,
    pub created_at: SimTime,
}

impl AppFlow {
    pub fn rate_bps(&self) -> f64 {
        f64::from(self.payload_bytes) * 8.0 * 1e6 / self.interval.0 as f64
    }

    /// Emission time of packet `seq`, if the flow is still running then.
    pub fn emission_time(&self, seq: u64) -> Option<SimTime> {
        let t = self.start.0.checked_add(seq.checked_mul(self.interval.0)?)?;
        (t < self.stop.0).then_some(SimTime(t))
    }

    /// The first packet emitted at or after `t`.
    pub fn next_packet(&self, t: SimTime) -> Option<Packet> {
        let seq = if t <= self.start { 0 } else { (t.0 - self.start.0).div_ceil(self.interval.0) };
        let created_at = self.emission_time(seq)?;
        Some(Packet { flow: self.id, seq, bytes: self.payload_bytes, created_at })
    }

    /// Number of packets emitted in `[t0, t1)`.
    pub fn packets_in(&self, t0: SimTime, t1: SimTime) -> u64 {
        let count_before = |t: SimTime| -> u64 {
            let end = t.min(self.stop);
            if end <= self.start {
                0
            } else {
                (end.0 - self.start.0).div_ceil(self.interval.0)
            }
        };
        count_before(t1).saturating_sub(count_before(t0))
    }

    /// Moves the flow's start, keeping its duration. Used when a flow has to
    /// wait for its bearer.
    pub fn deferred_to(&self, start: SimTime) -> AppFlow {
        let mut f = self.clone();
        if start > f.start {
            let len = f.stop.saturating_sub(f.start);
            f.start = start;
            f.stop = start + len;
        }
        f
    }
}

/// Both directions of a voice call between two UEs.
pub fn start_voice_call(ids: (FlowId, FlowId), a: UeId, b: UeId, start: SimTime, stop: SimTime) -> [AppFlow; 2] {
    let flow = |id, src, dst| AppFlow {
        id,
        kind: AppKind::VoiceCall,
        src: FlowEnd::Ue(src),
        dst: FlowEnd::Ue(dst),
        payload_bytes: VOICE_PAYLOAD_BYTES,
        interval: VOICE_INTERVAL,
        start,
        stop,
    };
    [flow(ids.0, a, b), flow(ids.1, b, a)]
}

/// A video stream between `ue` and the external server. `uplink` means the
/// UE is the sender.
pub fn start_video_stream(id: FlowId, ue: UeId, uplink: bool, start: SimTime, stop: SimTime) -> AppFlow {
    let (src, dst) = if uplink { (FlowEnd::Ue(ue), FlowEnd::Server) } else { (FlowEnd::Server, FlowEnd::Ue(ue)) };
    AppFlow {
        id,
        kind: AppKind::VideoStream,
        src,
        dst,
        payload_bytes: VIDEO_PAYLOAD_BYTES,
        interval: VIDEO_INTERVAL,
        start,
        stop,
    }
}

/// Per-flow accounting. `sent = delivered + in_flight + dropped` holds
/// whenever the owner updates it consistently.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlowCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub delivered_bytes: u64,
    pub latency_sum_us: u64,
    pub max_latency_us: u64,
    /// Highest sequence number delivered so far.
    pub last_seq: Option<u64>,
    /// Deliveries whose sequence number did not exceed `last_seq`.
    pub reordered: u64,
}

impl FlowCounters {
    pub fn in_flight(&self) -> u64 {
        self.sent - self.delivered - self.dropped
    }

    pub fn on_sent(&mut self) {
        self.sent += 1;
    }

    pub fn on_dropped(&mut self) {
        self.dropped += 1;
    }

    pub fn on_delivered(&mut self, pkt: &Packet, at: SimTime) {
        self.delivered += 1;
        self.delivered_bytes += u64::from(pkt.bytes);
        let lat = at.saturating_sub(pkt.created_at).0;
        self.latency_sum_us += lat;
        self.max_latency_us = self.max_latency_us.max(lat);
        match self.last_seq {
            Some(last) if pkt.seq <= last => self.reordered += 1,
            _ => self.last_seq = Some(pkt.seq),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_rates() {
        let [a, _] = start_voice_call((0, 1), 1, 2, SimTime::ZERO, SimTime::from_secs(1));
        assert_eq!(a.rate_bps(), 64_000.0);
        let v = start_video_stream(2, 1, false, SimTime::ZERO, SimTime::from_secs(1));
        assert_eq!(v.rate_bps(), 384_000.0);
        assert_eq!(v.src, FlowEnd::Server);
    }

    #[test]
    fn schedule_sequence() {
        let start = SimTime::from_ms(3);
        let [f, _] = start_voice_call((0, 1), 1, 2, start, SimTime::from_secs(10));
        assert_eq!(f.next_packet(start + SimTime::from_ms(40)).unwrap().seq, 2);
        assert_eq!(f.next_packet(start + SimTime::from_ms(41)).unwrap().seq, 3);
        assert_eq!(f.next_packet(SimTime::ZERO).unwrap().seq, 0);
        assert!(f.next_packet(SimTime::from_secs(10)).is_none());
    }

    #[test]
    fn six_hundred_seconds_of_voice() {
        let [f, _] = start_voice_call((0, 1), 1, 2, SimTime::ZERO, SimTime::from_secs(600));
        assert_eq!(f.packets_in(SimTime::ZERO, SimTime::from_secs(600)), 30_000);
        assert_eq!(f.packets_in(SimTime::ZERO, SimTime::from_secs(1000)), 30_000);
    }

    #[test]
    fn one_second_windows_carry_nominal_rate() {
        let v = start_video_stream(0, 1, true, SimTime::from_us(1234), SimTime::from_secs(100));
        for s in 1..90 {
            let n = v.packets_in(SimTime::from_secs(s), SimTime::from_secs(s + 1));
            assert_eq!(n * u64::from(v.payload_bytes) * 8, 384_000);
        }
    }

    #[test]
    fn deferral_keeps_duration() {
        let [f, _] = start_voice_call((0, 1), 1, 2, SimTime::from_secs(1), SimTime::from_secs(11));
        let g = f.deferred_to(SimTime::from_secs(3));
        assert_eq!(g.start, SimTime::from_secs(3));
        assert_eq!(g.stop, SimTime::from_secs(13));
        assert_eq!(f.deferred_to(SimTime::ZERO), f);
    }

    #[test]
    fn counters_track_reordering() {
        let mut c = FlowCounters::default();
        let p = |seq| Packet { flow: 0, seq, bytes: 10, created_at: SimTime::ZERO };
        for _ in 0..3 {
            c.on_sent();
        }
        c.on_delivered(&p(0), SimTime::from_ms(5));
        c.on_delivered(&p(2), SimTime::from_ms(6));
        c.on_delivered(&p(1), SimTime::from_ms(7));
        assert_eq!(c.reordered, 1);
        assert_eq!(c.in_flight(), 0);
        assert_eq!(c.max_latency_us, 7000);
    }
}
