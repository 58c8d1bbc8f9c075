//! Per-cell TDD air interface: one FIFO per direction, drained by whole
//! data subframes.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::radio::{CellConfig, Direction};
use crate::traffic::{FlowId, Packet, UeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RadioJob {
    pub flow: FlowId,
    pub ue: UeId,
    pub pkt: Packet,
}

#[derive(Debug, Clone)]
pub struct AirQueue {
    jobs: VecDeque<(RadioJob, u32)>,
    queued_bytes: u64,
    limit_bytes: u64,
    pub dropped: u64,
}

impl AirQueue {
    pub fn new(limit_bytes: u64) -> Self {
        AirQueue { jobs: VecDeque::new(), queued_bytes: 0, limit_bytes, dropped: 0 }
    }

    /// Tail-drops when the queue is full; returns whether the job was taken.
    pub fn push(&mut self, job: RadioJob) -> bool {
        let b = u64::from(job.pkt.bytes);
        if self.queued_bytes + b > self.limit_bytes {
            self.dropped += 1;
            return false;
        }
        self.queued_bytes += b;
        self.jobs.push_back((job, job.pkt.bytes));
        true
    }

    pub fn queued_bytes(&self) -> u64 {
        self.queued_bytes
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    /// Sends up to `budget` bytes. Returns the bytes sent and the jobs whose
    /// last byte went out.
    pub fn serve(&mut self, budget: u32) -> (u32, Vec<RadioJob>) {
        let mut left = budget;
        let mut done = Vec::new();
        while left > 0 {
            let Some((job, remaining)) = self.jobs.front_mut() else { break };
            let take = (*remaining).min(left);
            *remaining -= take;
            left -= take;
            self.queued_bytes -= u64::from(take);
            if *remaining == 0 {
                done.push(*job);
                self.jobs.pop_front();
            }
        }
        (budget - left, done)
    }
}

#[derive(Debug, Clone)]
pub struct CellRadio {
    pub cfg: CellConfig,
    pub bytes_per_subframe: u32,
    pub ul: AirQueue,
    pub dl: AirQueue,
}

impl CellRadio {
    pub fn new(cfg: CellConfig, queue_limit_bytes: u64) -> Self {
        let bytes_per_subframe = libm::floor(cfg.bits_per_subframe() / 8.0) as u32;
        CellRadio { cfg, bytes_per_subframe, ul: AirQueue::new(queue_limit_bytes), dl: AirQueue::new(queue_limit_bytes) }
    }

    pub fn queue(&mut self, dir: Direction) -> &mut AirQueue {
        match dir {
            Direction::Ul => &mut self.ul,
            Direction::Dl => &mut self.dl,
        }
    }

    /// Runs subframe `index` (0..10 within the radio frame).
    pub fn subframe(&mut self, index: usize, dir: Direction) -> Option<(u32, Vec<RadioJob>)> {
        if !self.cfg.carries(index, dir) {
            return None;
        }
        let budget = self.bytes_per_subframe;
        Some(self.queue(dir).serve(budget))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::SimTime;

    fn job(seq: u64, bytes: u32) -> RadioJob {
        RadioJob { flow: 0, ue: 1, pkt: Packet { flow: 0, seq, bytes, created_at: SimTime::ZERO } }
    }

    #[test]
    fn default_subframe_carries_1400_bytes() {
        let c = CellRadio::new(CellConfig::default(), 1 << 20);
        assert_eq!(c.bytes_per_subframe, 1400);
    }

    #[test]
    fn fragments_across_subframes_in_order() {
        let mut q = AirQueue::new(10_000);
        for s in 0..3 {
            assert!(q.push(job(s, 1000)));
        }
        let (sent, done) = q.serve(1400);
        assert_eq!(sent, 1400);
        assert_eq!(done.iter().map(|j| j.pkt.seq).collect::<Vec<_>>(), [0]);
        let (sent, done) = q.serve(1400);
        assert_eq!(sent, 1400);
        assert_eq!(done.iter().map(|j| j.pkt.seq).collect::<Vec<_>>(), [1]);
        let (sent, done) = q.serve(1400);
        assert_eq!(sent, 200);
        assert_eq!(done.iter().map(|j| j.pkt.seq).collect::<Vec<_>>(), [2]);
        assert!(q.is_empty());
    }

    #[test]
    fn tail_drop_at_limit() {
        let mut q = AirQueue::new(1500);
        assert!(q.push(job(0, 1000)));
        assert!(!q.push(job(1, 1000)));
        assert_eq!(q.dropped, 1);
        assert_eq!(q.queued_bytes(), 1000);
    }

    #[test]
    fn only_matching_subframes_serve() {
        let mut c = CellRadio::new(CellConfig::default(), 1 << 20);
        c.ul.push(job(0, 100));
        let served: Vec<usize> = (0..10).filter(|&i| c.clone().subframe(i, Direction::Ul).is_some()).collect();
        assert_eq!(served, [2, 3, 7, 8]);
        let served: Vec<usize> = (0..10).filter(|&i| c.clone().subframe(i, Direction::Dl).is_some()).collect();
        assert_eq!(served, [0, 4, 5, 9]);
    }
}
