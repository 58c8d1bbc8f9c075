//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::time::{Duration, Instant};

use fmesim::config::{Fig7Config, ScenarioConfig};
use fmesim::experiments::{run_fig6, run_fig7, summarize_fig7};
use fmesim_core::d2d::connectivity::{candidate_count, oracle_success};
use fmesim_core::d2d::protocol::{D2dSim, ReservationState, SlotRequest};
use fmesim_core::d2d::{audit_violations, D2dConfig, D2dRole};
use fmesim_core::engine::{EventQueue, SimTime};
use fmesim_core::fme::routing::{LinkStateGraph, EPC_NODE};
use fmesim_core::fme::trace::{validate_handshake_trace, TraceRecord};
use fmesim_core::fme::{FmeConfig, FmeEvent, FmeNetwork};
use fmesim_core::radio::Direction;
use fmesim_core::rng::RngStream;
use fmesim_core::topology::{
    place_point_process, place_uniform, random_waypoint_step, MobilityState, PointProcess, Position, Region, SpeedRange,
};
use fmesim_core::world::{CellularSim, FlowClass, Outage, RoundReport, WorldConfig};

const SEED: u64 = 20_240_601;
/// A1: cell means of UL and DL agree within this relative margin.
const UL_DL_REL_TOL: f64 = 0.10;
const A1_BUDGET: Duration = Duration::from_secs(120);
/// A2: every flow reaches this share of its nominal rate.
const GOODPUT_SHARE: f64 = 0.95;
/// A3: absolute agreement with the closed form at every grid point.
const ORACLE_TOL: f64 = 0.02;
const A3_BUDGET: Duration = Duration::from_secs(300);
/// A4: largest tolerated intracell goodput dip during the cut.
const DIP_TOL: f64 = 0.01;
const A4_CUT_AT_S: u64 = 30;
const A4_CUT_S: u64 = 5;

struct Verdict {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: &'static str, checks: &[(bool, String)]) -> Verdict {
    let pass = checks.iter().all(|c| c.0);
    let detail = checks
        .iter()
        .map(|(ok, s)| if *ok { s.clone() } else { format!("FAILED {s}") })
        .collect::<Vec<_>>()
        .join("; ");
    Verdict { id, pass, detail }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn per_user(rounds: &[RoundReport], cell: u32, dir: Direction) -> f64 {
    mean(rounds.iter().map(|r| r.cell(cell).unwrap().per_user_bps(dir)))
}

fn cell_mean(rounds: &[RoundReport], cell: u32, dir: Direction) -> f64 {
    mean(rounds.iter().map(|r| {
        let c = r.cell(cell).unwrap();
        match dir {
            Direction::Ul => c.ul_bps,
            Direction::Dl => c.dl_bps,
        }
    }))
}

fn a1(rounds: &[RoundReport], elapsed: Duration) -> Verdict {
    let mut checks = Vec::new();
    for dir in [Direction::Ul, Direction::Dl] {
        let (c1, c2, c3) = (per_user(rounds, 1, dir), per_user(rounds, 2, dir), per_user(rounds, 3, dir));
        checks.push((c2 < c1 && c2 < c3, format!("{} per-user c1={c1:.0} c2={c2:.0} c3={c3:.0} b/s", dir.as_str())));
    }
    for cell in 1..=3 {
        let (ul, dl) = (cell_mean(rounds, cell, Direction::Ul), cell_mean(rounds, cell, Direction::Dl));
        let rel = (ul - dl).abs() / ul.max(dl);
        checks.push((rel <= UL_DL_REL_TOL, format!("cell{cell} UL/DL gap {:.2}%", rel * 100.0)));
    }
    checks.push((elapsed < A1_BUDGET, format!("runtime {:.1}s", elapsed.as_secs_f64())));
    verdict("A1", &checks)
}

fn a2(rounds: &[RoundReport]) -> Verdict {
    let mut checks = Vec::new();
    let within_capacity = rounds
        .iter()
        .flat_map(|r| &r.cells)
        .all(|c| c.offered_ul_bps <= c.capacity_ul_bps && c.offered_dl_bps <= c.capacity_dl_bps);
    checks.push((within_capacity, "offered load within capacity".to_string()));
    for class in [FlowClass::Intracell, FlowClass::VideoUl, FlowClass::VideoDl] {
        let ratios: Vec<f64> = rounds
            .iter()
            .flat_map(|r| &r.flows)
            .filter(|f| f.class == class)
            .map(|f| if f.start.is_some() { f.goodput_bps() / f.nominal_bps } else { 0.0 })
            .collect();
        let worst = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push((worst >= GOODPUT_SHARE, format!("{} worst goodput {:.3} of nominal over {} flows", class.as_str(), worst, ratios.len())));
    }
    // Capacity bound, including a deliberately overloaded run.
    let mut over = WorldConfig { duration_ms: 8_000, warmup_ms: 2_000, ues_per_cell: 200, ..WorldConfig::default() };
    over.apps.intracell_calls_per_cell = 60;
    over.apps.video_ues_per_cell = 10;
    over.apps.start_jitter_ms = 500;
    let overloaded = CellularSim::new(over, SEED).unwrap().run();
    let all: Vec<_> = rounds.iter().chain(std::iter::once(&overloaded)).flat_map(|r| &r.cells).collect();
    let worst_share = all
        .iter()
        .flat_map(|c| [c.max_bin_bps(Direction::Ul) / c.capacity_ul_bps, c.max_bin_bps(Direction::Dl) / c.capacity_dl_bps])
        .fold(0.0, f64::max);
    checks.push((worst_share <= 1.0, format!("busiest 1 s bin at {:.4} of capacity (overloaded run included)", worst_share)));
    verdict("A2", &checks)
}

fn a3() -> Verdict {
    let cfg = Fig7Config::default();
    let t0 = Instant::now();
    let rows = run_fig7(&cfg, SEED).unwrap();
    let elapsed = t0.elapsed();
    let summary = summarize_fig7(&cfg, &rows);
    let mut checks = vec![(summary.all_in_range, format!("all in range (decode range {:.0} m)", cfg.decode_range_m()))];
    for curve in &summary.curves {
        // The curve starts at zero for q = 0 and ends at zero for q = 1 with
        // two or more candidates, so the maximum is interior when it beats
        // both ends.
        let pts: Vec<_> = rows.iter().filter(|r| r.phi == curve.phi).collect();
        let last = pts.last().unwrap().p_beacon;
        let interior = curve.max_success > last && curve.max_success > 0.0 && curve.argmax_success_q < 1.0;
        checks.push((interior, format!("phi={} interior max {:.3} at q={}", curve.phi, curve.max_success, curve.argmax_success_q)));
        checks.push((curve.max_oracle_error <= ORACLE_TOL, format!("phi={} max |sim-oracle| {:.4}", curve.phi, curve.max_oracle_error)));
        let step = cfg.q[1] - cfg.q[0];
        let gap = (curve.argmin_delay_q - curve.argmax_success_q).abs();
        checks.push((gap <= step + 1e-9, format!("phi={} delay argmin q={} vs success argmax q={}", curve.phi, curve.argmin_delay_q, curve.argmax_success_q)));
    }
    let q_of = |phi: f64| summary.curves.iter().find(|c| c.phi == phi).unwrap().argmax_success_q;
    checks.push((q_of(0.92) > q_of(0.8), format!("optimum shifts right: {} > {}", q_of(0.92), q_of(0.8))));
    // Sanity of the oracle itself at the grid argmax.
    let n_b = candidate_count(cfg.m, 0.8).unwrap();
    checks.push((n_b == 15 && (oracle_success(15, 1.0 / 15.0) - 0.3801).abs() < 1e-3, "oracle N_b=15 peak 0.380".into()));
    checks.push((elapsed < A3_BUDGET, format!("runtime {:.1}s", elapsed.as_secs_f64())));
    verdict("A3", &checks)
}

fn a4() -> Verdict {
    let cfg = WorldConfig {
        outages: vec![Outage { a: 1, b: 2, at_ms: A4_CUT_AT_S * 1000, duration_ms: A4_CUT_S * 1000 }],
        ..WorldConfig::default()
    };
    let dma = cfg.fme.dma_capacity_bytes;
    let r = CellularSim::new(cfg, SEED).unwrap().run();
    let offered_bytes = r.flows.iter().map(|f| f.nominal_bps).sum::<f64>() / 8.0 * A4_CUT_S as f64;
    let dip = r.intracell_dip(A4_CUT_AT_S as usize, (A4_CUT_AT_S + A4_CUT_S) as usize, 10);
    let drops: u64 = r.flows.iter().map(|f| f.counters.dropped).sum();
    let reordered: u64 = r.flows.iter().map(|f| f.counters.reordered).sum();
    let waited = r.flows.iter().filter(|f| f.class == FlowClass::Intercell).map(|f| f.counters.max_latency_us).max().unwrap_or(0);
    verdict(
        "A4",
        &[
            (dma as f64 >= offered_bytes, format!("DMA {dma} B >= outage x offered {offered_bytes:.0} B")),
            (dip < DIP_TOL, format!("intracell dip {:.3}%", dip * 100.0)),
            (drops == 0, format!("drops {drops}")),
            (reordered == 0, format!("out-of-order deliveries {reordered}")),
            (waited >= (A4_CUT_S - 1) * 1_000_000, format!("intercell frames held up to {:.2}s", waited as f64 / 1e6)),
            (r.flows.iter().all(|f| f.start.is_some()), "all flows running".into()),
        ],
    )
}

fn cluster(n: usize, seed: u64) -> Vec<Position> {
    place_uniform(n, &Region::Disc { cx: 0.0, cy: 0.0, radius: 20.0 }, &mut RngStream::new(seed, "cluster"))
}

fn settled(sim: &mut D2dSim, limit: SimTime) -> Option<SimTime> {
    let n = sim.ue_count() as u32;
    let mut t = sim.now();
    while t < limit {
        t = t + SimTime::from_ms(10);
        sim.run_until(t);
        let members = (0..n).filter(|&u| sim.role(u) == D2dRole::Member).count();
        if sim.bues().len() == 1 && members + 1 == n as usize {
            return Some(t);
        }
    }
    None
}

fn a5() -> Verdict {
    let cfg = D2dConfig::default();
    let mut checks = Vec::new();
    let mut s = D2dSim::new(cfg.clone(), cluster(8, 21), Vec::new(), RngStream::new(SEED, "a5")).unwrap();
    let cycle = settled(&mut s, SimTime::from_secs(60)).and_then(|_| {
        let net = s.network_of(s.bues()[0])?;
        let m: Vec<u32> = s.network(net)?.members.keys().copied().collect();
        let r = s.reserve_peer_link(m[0], m[1], SlotRequest::Count(1)).ok()?;
        s.run_until(s.now() + SimTime::from_ms(50));
        if !matches!(s.reservation(r), ReservationState::Granted { .. }) {
            return None;
        }
        s.send_data(m[1], m[0], 5000);
        s.run_until(s.now() + SimTime::from_ms(200));
        Some(s.data_delivered(m[1], m[0]))
    });
    checks.push((cycle == Some(5000), format!("discover/associate/reserve/data with zero HeNB/EPC: {cycle:?} B delivered")));
    let mut audited = s.audit_log().len();
    let mut violations = audit_violations(s.audit_log()).len();
    let mut unique = true;
    for (n, seed) in [(5, 1), (10, 2), (25, 3), (50, 4)] {
        let mut s = D2dSim::new(cfg.clone(), cluster(n, seed), Vec::new(), RngStream::new(seed, "a5-cluster")).unwrap();
        let ok = settled(&mut s, SimTime::from_secs(60)).is_some_and(|t| {
            let from = t + SimTime(cfg.td().0 * 10);
            s.run_until(from + SimTime::from_secs(5));
            let after: Vec<_> = s.beacon_log().iter().filter(|b| b.time >= from).collect();
            !after.is_empty() && after.iter().all(|b| b.beacon.bue == after[0].beacon.bue) && s.bues().len() == 1
        });
        unique &= ok;
        audited += s.audit_log().len();
        violations += audit_violations(s.audit_log()).len();
    }
    checks.push((violations == 0, format!("channel audit {violations} violations in {audited} transmissions")));
    checks.push((unique, "single b-UE after 10 beacon intervals in clusters of 5/10/25/50".into()));
    verdict("A5", &checks)
}

enum Op {
    Attach { ue: u32, henb: u32 },
    Detach { ue: u32 },
    Wait { us: u64 },
}

fn interleaving(rng: &mut RngStream) -> Vec<Op> {
    (0..1 + rng.below(40))
        .map(|_| match rng.below(3) {
            0 => Op::Attach { ue: rng.below(6) as u32, henb: 1 + rng.below(3) as u32 },
            1 => Op::Detach { ue: rng.below(6) as u32 },
            _ => Op::Wait { us: rng.below(20_000) },
        })
        .collect()
}

fn run_ops(ops: &[Op]) -> Vec<TraceRecord> {
    let mut g = LinkStateGraph::new();
    g.add_link(3, 2);
    g.add_link(2, 1);
    g.add_link(1, EPC_NODE);
    let mut net = FmeNetwork::new(FmeConfig::default(), g);
    let mut q: EventQueue<FmeEvent> = EventQueue::new();
    net.start(SimTime::ZERO);
    net.drive(&mut q, SimTime::from_ms(50));
    for op in ops {
        let now = q.now();
        match *op {
            Op::Attach { ue, henb } => {
                let _ = net.attach_ue(now, ue, henb, 10.0);
            }
            Op::Detach { ue } => {
                net.detach_ue(now, ue);
            }
            Op::Wait { us } => {
                net.drive(&mut q, now + SimTime(us));
            }
        }
    }
    let end = q.now() + SimTime::from_ms(500);
    net.drive(&mut q, end);
    net.trace().to_vec()
}

fn a6() -> Verdict {
    let mut rng = RngStream::new(SEED, "a6");
    let (mut violations, mut incomplete, mut transactions) = (0, 0, 0);
    for _ in 0..100 {
        let report = validate_handshake_trace(&run_ops(&interleaving(&mut rng)));
        violations += report.violations.len();
        incomplete += report.incomplete.len();
        transactions += report.transactions;
    }
    let mut trace = run_ops(&[Op::Attach { ue: 1, henb: 3 }, Op::Wait { us: 100_000 }]);
    let i = trace.iter().position(|r| r.kind == "CreateSessionResponse").unwrap();
    let j = trace.iter().position(|r| r.corr == trace[i].corr && r.kind == "BearerCreated").unwrap();
    trace.swap(i, j);
    let injected = validate_handshake_trace(&trace);
    verdict(
        "A6",
        &[
            (violations == 0 && incomplete == 0, format!("100 interleavings, {transactions} transactions, {violations} violations, {incomplete} incomplete")),
            (injected.violations.len() == 1, format!("injected swap flagged at {:?}", injected.violations.first().map(|v| v.kind))),
        ],
    )
}

fn a7() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let outs = [dir.path().join("a"), dir.path().join("b")];
    let seed = SEED.to_string();
    let mut codes = Vec::new();
    for out in &outs {
        let args = ["fmesim", "run", "--seed", &seed, "--out", out.to_str().unwrap()];
        codes.push(fmesim::cli::main_with_args(args));
    }
    let mut checks = vec![(codes == [0, 0], format!("exit codes {codes:?}"))];
    for f in ["throughput.csv", "d2d.csv", "summary.json"] {
        let (a, b) = (std::fs::read(outs[0].join(f)), std::fs::read(outs[1].join(f)));
        let same = matches!((&a, &b), (Ok(x), Ok(y)) if x == y && !x.is_empty());
        checks.push((same, format!("{f} identical ({} bytes)", a.map(|v| v.len()).unwrap_or(0))));
    }
    verdict("A7", &checks)
}

fn a8() -> Verdict {
    let trials = 10_000;
    let region = Region::square_of_area(1e6);
    let expect = 75.0;
    let mut rng = RngStream::new(SEED, "a8-ppp");
    let counts: Vec<f64> = (0..trials)
        .map(|_| place_point_process(PointProcess::Poisson { intensity_per_m2: expect / region.area() }, &region, &mut rng).len() as f64)
        .collect();
    let m = mean(counts.iter().copied());
    let sigma = (expect / trials as f64).sqrt();

    let disc = Region::Disc { cx: 0.0, cy: 0.0, radius: 500.0 };
    let speeds = SpeedRange::default();
    let mut rng = RngStream::new(SEED, "a8-rwp");
    let mut bad = 0;
    for _ in 0..trials {
        let start = disc.sample(&mut rng);
        let mut s = MobilityState::new(start, &disc, &speeds, &mut rng);
        for _ in 0..5 {
            let next = random_waypoint_step(&s, 100.0, &disc, &speeds, &mut rng);
            let ok = disc.contains(&next.position)
                && (speeds.min_mps..=speeds.max_mps).contains(&next.speed_mps)
                && next.position.distance(&s.position) <= speeds.max_mps * 100.0 + 1e-9;
            bad += usize::from(!ok);
            s = next;
        }
    }
    verdict(
        "A8",
        &[
            ((m - expect).abs() <= 3.0 * sigma, format!("Poisson mean count {m:.3} vs {expect} (3 sigma {:.3})", 3.0 * sigma)),
            (bad == 0, format!("random waypoint: {bad} of {} steps out of bounds", trials * 5)),
        ],
    )
}

fn main() {
    let desk = ScenarioConfig::default();
    let t0 = Instant::now();
    let rounds = run_fig6(&desk.world, desk.rounds, SEED).expect("desk scenario is valid");
    let a1_time = t0.elapsed();
    let verdicts = [a1(&rounds, a1_time), a2(&rounds), a3(), a4(), a5(), a6(), a7(), a8()];
    let mut failed = 0;
    for v in &verdicts {
        println!("{} {}: {}", v.id, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
