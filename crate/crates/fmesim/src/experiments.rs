//! The two canonical experiments: multi-round cell throughput, and the
//! beacon-reception Monte Carlo. Rounds and drops run in parallel; results
//! are collected in index order so output never depends on scheduling.

use fmesim_core::d2d::connectivity::{candidate_count, oracle_success, run_drop, DropOutcome, DropParams};
use fmesim_core::d2d::D2dError;
use fmesim_core::radio::Direction;
use fmesim_core::rng::RngStream;
use fmesim_core::topology::Region;
use fmesim_core::world::{CellularSim, FlowClass, RoundReport, WorldConfig, WorldError};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Fig7Config;
use crate::stats::{summarize_ci, Ci};

pub const CI_LEVEL: f64 = 0.95;

pub fn round_seed(seed: u64, round: usize) -> u64 {
    RngStream::new(seed, "fig6").substream(&format!("round-{round}")).below(u64::MAX)
}

pub fn run_fig6(world: &WorldConfig, rounds: usize, seed: u64) -> Result<Vec<RoundReport>, WorldError> {
    (0..rounds)
        .into_par_iter()
        .map(|r| {
            log::info!("fig6 round {r} starting");
            let report = CellularSim::new(world.clone(), round_seed(seed, r))?.run();
            log::info!("fig6 round {r} done, {} events", report.events);
            Ok(report)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputRow {
    pub round: usize,
    pub cell_id: u32,
    pub direction: &'static str,
    pub avg_bps: f64,
    pub per_user_avg_bps: f64,
    pub n_users: usize,
}

pub fn throughput_rows(rounds: &[RoundReport]) -> Vec<ThroughputRow> {
    let mut rows = Vec::new();
    for (round, r) in rounds.iter().enumerate() {
        for c in &r.cells {
            for dir in [Direction::Ul, Direction::Dl] {
                rows.push(ThroughputRow {
                    round,
                    cell_id: c.cell,
                    direction: dir.as_str(),
                    avg_bps: match dir {
                        Direction::Ul => c.ul_bps,
                        Direction::Dl => c.dl_bps,
                    },
                    per_user_avg_bps: c.per_user_bps(dir),
                    n_users: c.n_users,
                });
            }
        }
    }
    rows
}

/// Mean with its interval; the interval is absent below two samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci: Option<Ci>,
}

impl Estimate {
    pub fn of(samples: &[f64]) -> Estimate {
        let mean = if samples.is_empty() { 0.0 } else { samples.iter().sum::<f64>() / samples.len() as f64 };
        Estimate { mean, ci: summarize_ci(samples, CI_LEVEL).ok() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell_id: u32,
    pub direction: &'static str,
    pub avg_bps: Estimate,
    pub per_user_avg_bps: Estimate,
    pub n_users: usize,
    pub offered_bps: f64,
    pub capacity_bps: f64,
    pub max_bin_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSummary {
    pub class: &'static str,
    pub flows: usize,
    pub never_started: usize,
    /// Lowest goodput over nominal rate among flows that ran.
    pub min_goodput_ratio: f64,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub reordered: u64,
    pub max_latency_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HandshakeSummary {
    pub transactions: usize,
    pub violations: usize,
    pub incomplete: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig6Summary {
    pub rounds: usize,
    pub cells: Vec<CellSummary>,
    pub flows: Vec<FlowSummary>,
    pub handshake: HandshakeSummary,
    pub invariant_violations: u64,
    pub capacity_respected: bool,
}

pub fn summarize_fig6(rounds: &[RoundReport]) -> Fig6Summary {
    let mut cells = Vec::new();
    if let Some(first) = rounds.first() {
        for c in &first.cells {
            for dir in [Direction::Ul, Direction::Dl] {
                let per_round: Vec<_> = rounds.iter().filter_map(|r| r.cell(c.cell)).collect();
                let pick = |x: &fmesim_core::world::CellReport| match dir {
                    Direction::Ul => (x.ul_bps, x.offered_ul_bps, x.capacity_ul_bps),
                    Direction::Dl => (x.dl_bps, x.offered_dl_bps, x.capacity_dl_bps),
                };
                let avg: Vec<f64> = per_round.iter().map(|x| pick(x).0).collect();
                let per_user: Vec<f64> = per_round.iter().map(|x| x.per_user_bps(dir)).collect();
                cells.push(CellSummary {
                    cell_id: c.cell,
                    direction: dir.as_str(),
                    avg_bps: Estimate::of(&avg),
                    per_user_avg_bps: Estimate::of(&per_user),
                    n_users: c.n_users,
                    offered_bps: pick(c).1,
                    capacity_bps: pick(c).2,
                    max_bin_bps: per_round.iter().map(|x| x.max_bin_bps(dir)).fold(0.0, f64::max),
                });
            }
        }
    }
    let classes = [FlowClass::Intracell, FlowClass::Intercell, FlowClass::VideoUl, FlowClass::VideoDl];
    let flows = classes
        .iter()
        .map(|&class| {
            let all: Vec<_> = rounds.iter().flat_map(|r| &r.flows).filter(|f| f.class == class).collect();
            FlowSummary {
                class: class.as_str(),
                flows: all.len(),
                never_started: all.iter().filter(|f| f.start.is_none()).count(),
                min_goodput_ratio: all
                    .iter()
                    .filter(|f| f.start.is_some())
                    .map(|f| f.goodput_bps() / f.nominal_bps)
                    .fold(f64::INFINITY, f64::min)
                    .min(f64::MAX),
                sent: all.iter().map(|f| f.counters.sent).sum(),
                delivered: all.iter().map(|f| f.counters.delivered).sum(),
                dropped: all.iter().map(|f| f.counters.dropped).sum(),
                reordered: all.iter().map(|f| f.counters.reordered).sum(),
                max_latency_us: all.iter().map(|f| f.counters.max_latency_us).max().unwrap_or(0),
            }
        })
        .collect();
    Fig6Summary {
        rounds: rounds.len(),
        cells,
        flows,
        handshake: HandshakeSummary {
            transactions: rounds.iter().map(|r| r.handshake.transactions).sum(),
            violations: rounds.iter().map(|r| r.handshake.violations.len()).sum(),
            incomplete: rounds.iter().map(|r| r.handshake.incomplete.len()).sum(),
        },
        invariant_violations: rounds.iter().map(|r| r.invariant_violations).sum(),
        capacity_respected: rounds.iter().flat_map(|r| &r.cells).all(|c| {
            c.max_bin_bps(Direction::Ul) <= c.capacity_ul_bps && c.max_bin_bps(Direction::Dl) <= c.capacity_dl_bps
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig7Row {
    pub phi: f64,
    pub q: f64,
    pub p_beacon: f64,
    pub p_lo: f64,
    pub p_hi: f64,
    pub delay_ms: f64,
    pub delay_lo: f64,
    pub delay_hi: f64,
    pub drops: usize,
    pub capped_fraction: f64,
}

fn drop_params(cfg: &Fig7Config, phi: f64, q: f64) -> DropParams {
    DropParams {
        m: cfg.m,
        phi,
        q,
        region: Region::square_of_area(cfg.area_m2),
        range_m: cfg.decode_range_m(),
        td_ms: cfg.td_ms,
    }
}

pub fn run_fig7(cfg: &Fig7Config, seed: u64) -> Result<Vec<Fig7Row>, D2dError> {
    let points: Vec<(f64, f64)> = cfg.phi.iter().flat_map(|&phi| cfg.q.iter().map(move |&q| (phi, q))).collect();
    let root = RngStream::new(seed, "fig7");
    let outcomes: Vec<DropOutcome> = (0..points.len() * cfg.drops)
        .into_par_iter()
        .map(|i| {
            let (phi, q) = points[i / cfg.drops];
            let drop = i % cfg.drops;
            let mut rng = root.substream(&format!("phi={phi}/q={q}/drop={drop}"));
            run_drop(&drop_params(cfg, phi, q), &mut rng)
        })
        .collect::<Result<_, _>>()?;
    Ok(points
        .iter()
        .zip(outcomes.chunks(cfg.drops))
        .map(|(&(phi, q), chunk)| {
            let success: Vec<f64> = chunk.iter().map(|o| o.success).collect();
            let delay: Vec<f64> = chunk.iter().map(|o| o.delay_ms).collect();
            let (p, d) = (Estimate::of(&success), Estimate::of(&delay));
            let (p_ci, d_ci) = (p.ci.unwrap_or(Ci { mean: p.mean, lo: p.mean, hi: p.mean }), d.ci.unwrap_or(Ci { mean: d.mean, lo: d.mean, hi: d.mean }));
            let regular: usize = chunk.iter().map(|o| o.regular).sum();
            let capped: usize = chunk.iter().map(|o| o.capped).sum();
            Fig7Row {
                phi,
                q,
                p_beacon: p.mean,
                p_lo: p_ci.lo,
                p_hi: p_ci.hi,
                delay_ms: d.mean,
                delay_lo: d_ci.lo,
                delay_hi: d_ci.hi,
                drops: chunk.len(),
                capped_fraction: if regular == 0 { 0.0 } else { capped as f64 / regular as f64 },
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig7Curve {
    pub phi: f64,
    pub candidates: usize,
    pub argmax_success_q: f64,
    pub max_success: f64,
    pub argmin_delay_q: f64,
    pub min_delay_ms: f64,
    /// Largest |simulated - closed form| over the grid.
    pub max_oracle_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig7Summary {
    /// Every UE can decode every other UE anywhere in the drop area.
    pub all_in_range: bool,
    pub curves: Vec<Fig7Curve>,
}

pub fn summarize_fig7(cfg: &Fig7Config, rows: &[Fig7Row]) -> Fig7Summary {
    let diagonal = (2.0 * cfg.area_m2).sqrt();
    let curves = cfg
        .phi
        .iter()
        .map(|&phi| {
            let curve: Vec<&Fig7Row> = rows.iter().filter(|r| r.phi == phi).collect();
            let n_b = candidate_count(cfg.m, phi).unwrap_or(0);
            // first index wins on ties, so the result is order-stable
            let best = curve.iter().fold(curve[0], |a, &b| if b.p_beacon > a.p_beacon { b } else { a });
            let fastest = curve.iter().fold(curve[0], |a, &b| if b.delay_ms < a.delay_ms { b } else { a });
            Fig7Curve {
                phi,
                candidates: n_b,
                argmax_success_q: best.q,
                max_success: best.p_beacon,
                argmin_delay_q: fastest.q,
                min_delay_ms: fastest.delay_ms,
                max_oracle_error: curve.iter().map(|r| (r.p_beacon - oracle_success(n_b, r.q)).abs()).fold(0.0, f64::max),
            }
        })
        .collect();
    Fig7Summary { all_in_range: cfg.decode_range_m() >= diagonal, curves }
}
