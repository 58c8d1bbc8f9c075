//! The multi-cell scenario: HeNBs with their UEs, application flows over the
//! FME network, and per-cell throughput accounting.

pub mod cell;
pub mod sim;

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::fme::routing::BhNode;
use crate::fme::FmeConfig;
use crate::radio::{CellConfig, RadioError};
use crate::topology::{Position, SpeedRange};

pub use sim::{CellReport, CellularSim, FlowClass, FlowReport, RoundReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("scenario has no cells")]
    NoCells,
    #[error("cell {cell} needs {needed} UEs for its flows but has {have}")]
    NotEnoughUes { cell: BhNode, needed: usize, have: usize },
    #[error("unknown cell {0}")]
    UnknownCell(BhNode),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error("parameter out of range: {0}")]
    Param(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AppMix {
    pub intracell_calls_per_cell: usize,
    /// Each video UE runs one uplink and one downlink stream.
    pub video_ues_per_cell: usize,
    pub intercell_calls_per_pair: usize,
    pub intercell_pairs: Vec<(BhNode, BhNode)>,
    /// Flow start times are uniform in `[0, start_jitter_ms)`.
    pub start_jitter_ms: u64,
}

impl Default for AppMix {
    fn default() -> Self {
        AppMix {
            intracell_calls_per_cell: 8,
            video_ues_per_cell: 1,
            intercell_calls_per_pair: 4,
            intercell_pairs: vec![(1, 2), (2, 3)],
            start_jitter_ms: 5000,
        }
    }
}

impl AppMix {
    pub fn paper_scale() -> Self {
        AppMix {
            intracell_calls_per_cell: 40,
            video_ues_per_cell: 5,
            intercell_calls_per_pair: 20,
            ..AppMix::default()
        }
    }
}

/// A backhaul link cut between two nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Outage {
    pub a: BhNode,
    pub b: BhNode,
    pub at_ms: u64,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct WorldConfig {
    /// HeNB `i + 1` sits at `henbs[i]`; node 0 is the physical EPC.
    pub henbs: Vec<Position>,
    pub epc: Position,
    pub cell_radius_m: f64,
    pub ues_per_cell: usize,
    pub speeds: SpeedRange,
    pub mobility_tick_ms: u64,
    /// Backhaul links exist where the WiFi budget closes and, if set, the
    /// nodes are at most this far apart.
    pub backhaul_range_cap_m: Option<f64>,
    pub cell: CellConfig,
    pub fme: FmeConfig,
    pub apps: AppMix,
    pub duration_ms: u64,
    /// Cell means skip this leading part of the run.
    pub warmup_ms: u64,
    /// Initial attaches are spread uniformly over this window.
    pub attach_window_ms: u64,
    pub radio_queue_bytes: u64,
    pub outages: Vec<Outage>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            henbs: vec![Position::new(0.0, 0.0), Position::new(1000.0, 0.0), Position::new(2000.0, 0.0)],
            epc: Position::new(-1500.0, 0.0),
            cell_radius_m: 500.0,
            ues_per_cell: 50,
            speeds: SpeedRange::default(),
            mobility_tick_ms: 100,
            backhaul_range_cap_m: Some(1600.0),
            cell: CellConfig::default(),
            fme: FmeConfig::default(),
            apps: AppMix::default(),
            duration_ms: 60_000,
            warmup_ms: 10_000,
            attach_window_ms: 1000,
            radio_queue_bytes: 1_000_000,
            outages: Vec::new(),
        }
    }
}

impl WorldConfig {
    pub fn paper_scale() -> Self {
        WorldConfig { ues_per_cell: 250, apps: AppMix::paper_scale(), duration_ms: 600_000, ..WorldConfig::default() }
    }

    pub fn cell_ids(&self) -> impl Iterator<Item = BhNode> + '_ {
        (1..=self.henbs.len() as BhNode).map(|i| i as BhNode)
    }

    /// UEs each cell needs as flow endpoints.
    pub fn required_ues(&self) -> Vec<usize> {
        let mut need: Vec<usize> = self
            .henbs
            .iter()
            .map(|_| 2 * self.apps.intracell_calls_per_cell + self.apps.video_ues_per_cell)
            .collect();
        for &(a, b) in &self.apps.intercell_pairs {
            for c in [a, b] {
                if let Some(n) = need.get_mut((c as usize).wrapping_sub(1)) {
                    *n += self.apps.intercell_calls_per_pair;
                }
            }
        }
        need
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.henbs.is_empty() {
            return Err(WorldError::NoCells);
        }
        self.cell.validate()?;
        let n = self.henbs.len() as BhNode;
        for &(a, b) in &self.apps.intercell_pairs {
            for c in [a, b] {
                if c == 0 || c > n {
                    return Err(WorldError::UnknownCell(c));
                }
            }
            if a == b {
                return Err(WorldError::Param("intercell pair must join two different cells"));
            }
        }
        for o in &self.outages {
            for c in [o.a, o.b] {
                if c > n {
                    return Err(WorldError::UnknownCell(c));
                }
            }
        }
        for (i, &needed) in self.required_ues().iter().enumerate() {
            if needed > self.ues_per_cell {
                return Err(WorldError::NotEnoughUes { cell: i as BhNode + 1, needed, have: self.ues_per_cell });
            }
        }
        if !(self.cell_radius_m > 0.0) {
            return Err(WorldError::Param("cell_radius_m"));
        }
        if self.mobility_tick_ms == 0 {
            return Err(WorldError::Param("mobility_tick_ms"));
        }
        if self.duration_ms == 0 || self.warmup_ms >= self.duration_ms {
            return Err(WorldError::Param("duration_ms"));
        }
        if !(self.speeds.min_mps >= 0.0 && self.speeds.min_mps <= self.speeds.max_mps) {
            return Err(WorldError::Param("speeds"));
        }
        if !(self.fme.backhaul_capacity_bps > 0.0) {
            return Err(WorldError::Param("fme.backhaul_capacity_bps"));
        }
        Ok(())
    }
}
