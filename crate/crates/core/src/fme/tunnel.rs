//! LMU tunnels (vS1 / vX2) and the disruption management agent's buffer.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use super::routing::BhNode;

pub type TunnelId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TunnelKind {
    /// HeNB to physical EPC.
    VS1,
    /// HeNB to HeNB.
    VX2,
}

impl TunnelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TunnelKind::VS1 => "vS1",
            TunnelKind::VX2 => "vX2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TunnelState {
    Up,
    Disrupted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkEvent {
    Down,
    Up,
}

/// Byte-bounded FIFO; overflow evicts the oldest frames.
#[derive(Debug, Clone)]
pub struct DmaBuffer<F> {
    frames: VecDeque<(F, u32)>,
    capacity_bytes: u64,
    used_bytes: u64,
    dropped_frames: u64,
    dropped_bytes: u64,
    peak_bytes: u64,
}

impl<F> DmaBuffer<F> {
    pub fn new(capacity_bytes: u64) -> Self {
        DmaBuffer {
            frames: VecDeque::new(),
            capacity_bytes,
            used_bytes: 0,
            dropped_frames: 0,
            dropped_bytes: 0,
            peak_bytes: 0,
        }
    }

    /// Appends a frame and returns whatever had to be evicted to respect the
    /// capacity. A frame larger than the whole buffer is itself dropped.
    pub fn push(&mut self, frame: F, bytes: u32) -> Vec<F> {
        let mut evicted = Vec::new();
        if u64::from(bytes) > self.capacity_bytes {
            self.dropped_frames += 1;
            self.dropped_bytes += u64::from(bytes);
            evicted.push(frame);
            return evicted;
        }
        while self.used_bytes + u64::from(bytes) > self.capacity_bytes {
            let Some((old, b)) = self.frames.pop_front() else { break };
            self.used_bytes -= u64::from(b);
            self.dropped_frames += 1;
            self.dropped_bytes += u64::from(b);
            evicted.push(old);
        }
        self.used_bytes += u64::from(bytes);
        self.peak_bytes = self.peak_bytes.max(self.used_bytes);
        self.frames.push_back((frame, bytes));
        evicted
    }

    pub fn drain(&mut self) -> impl Iterator<Item = (F, u32)> + '_ {
        self.used_bytes = 0;
        self.frames.drain(..)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    pub fn dropped_frames(&self) -> u64 {
        self.dropped_frames
    }

    pub fn dropped_bytes(&self) -> u64 {
        self.dropped_bytes
    }

    pub fn peak_bytes(&self) -> u64 {
        self.peak_bytes
    }
}

/// What happened to a frame offered to a tunnel.
#[derive(Debug, PartialEq)]
pub enum Offer<F> {
    /// Tunnel is up: the caller transmits the frame now.
    Send(F),
    /// Held by the DMA; `evicted` lists frames pushed out to make room.
    Buffered { evicted: Vec<F> },
}

/// One endpoint's view of a tunnel. Each side buffers its own outgoing
/// direction.
#[derive(Debug, Clone)]
pub struct Tunnel<F> {
    pub id: TunnelId,
    pub kind: TunnelKind,
    pub local: BhNode,
    pub peer: BhNode,
    state: TunnelState,
    dma: DmaBuffer<F>,
    dma_enabled: bool,
    transitions: u32,
}

impl<F> Tunnel<F> {
    pub fn new(id: TunnelId, kind: TunnelKind, local: BhNode, peer: BhNode, dma_capacity_bytes: u64) -> Self {
        Tunnel {
            id,
            kind,
            local,
            peer,
            state: TunnelState::Up,
            dma: DmaBuffer::new(dma_capacity_bytes),
            dma_enabled: true,
            transitions: 0,
        }
    }

    pub fn state(&self) -> TunnelState {
        self.state
    }

    pub fn is_up(&self) -> bool {
        self.state == TunnelState::Up
    }

    pub fn dma(&self) -> &DmaBuffer<F> {
        &self.dma
    }

    pub fn set_dma_enabled(&mut self, on: bool) {
        self.dma_enabled = on;
    }

    pub fn dma_enabled(&self) -> bool {
        self.dma_enabled
    }

    pub fn transitions(&self) -> u32 {
        self.transitions
    }

    pub fn offer(&mut self, frame: F, bytes: u32) -> Offer<F> {
        match self.state {
            TunnelState::Up => Offer::Send(frame),
            TunnelState::Disrupted if self.dma_enabled => Offer::Buffered { evicted: self.dma.push(frame, bytes) },
            TunnelState::Disrupted => {
                self.dma.dropped_frames += 1;
                self.dma.dropped_bytes += u64::from(bytes);
                Offer::Buffered { evicted: alloc::vec![frame] }
            }
        }
    }
}

/// Applies a path up/down event. Going down starts buffering; coming back up
/// returns the buffered frames in arrival order for the caller to transmit
/// (it paces them at backhaul rate) and marks the tunnel up.
pub fn dma_transition<F>(tunnel: &mut Tunnel<F>, event: LinkEvent) -> (TunnelState, Vec<(F, u32)>) {
    match event {
        LinkEvent::Down => {
            if tunnel.state == TunnelState::Up {
                tunnel.transitions += 1;
            }
            tunnel.state = TunnelState::Disrupted;
            (tunnel.state, Vec::new())
        }
        LinkEvent::Up => {
            if tunnel.state == TunnelState::Disrupted {
                tunnel.transitions += 1;
            }
            let flushed: Vec<(F, u32)> = tunnel.dma.drain().collect();
            tunnel.state = TunnelState::Up;
            (tunnel.state, flushed)
        }
    }
}
