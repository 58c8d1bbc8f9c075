use fmesim_core::radio::{tdd_cell_capacity_bps, CellConfig, Direction};
use fmesim_core::traffic::{VIDEO_INTERVAL, VIDEO_PAYLOAD_BYTES, VOICE_INTERVAL, VOICE_PAYLOAD_BYTES};
use fmesim_core::world::{CellularSim, FlowClass, Outage, WorldConfig, WorldError};

fn rate(bytes: u32, interval_us: u64) -> f64 {
    f64::from(bytes) * 8.0 * 1e6 / interval_us as f64
}

#[test]
fn cell_rates_match_offered_load_once_flows_run() {
    let cfg = WorldConfig { duration_ms: 20_000, warmup_ms: 8_000, ..WorldConfig::default() };
    let r = CellularSim::new(cfg, 3).unwrap().run();
    let voice = rate(VOICE_PAYLOAD_BYTES, VOICE_INTERVAL.0);
    let video = rate(VIDEO_PAYLOAD_BYTES, VIDEO_INTERVAL.0);
    // Each direction of a cell carries one voice leg per call endpoint in it
    // and one video stream per video UE.
    let expect = [16.0 * voice + video + 4.0 * voice, 16.0 * voice + video + 8.0 * voice, 16.0 * voice + video + 4.0 * voice];
    for (c, want) in r.cells.iter().zip(expect) {
        for got in [c.ul_bps, c.dl_bps] {
            assert!((got - want).abs() / want < 0.01, "cell {} got {got} want {want}", c.cell);
        }
    }
    assert_eq!(r.cells.iter().map(|c| c.n_users).collect::<Vec<_>>(), [21, 25, 21]);
}

#[test]
fn overload_never_exceeds_air_capacity() {
    let mut cfg = WorldConfig { duration_ms: 6_000, warmup_ms: 2_000, ues_per_cell: 200, ..WorldConfig::default() };
    cfg.apps.intracell_calls_per_cell = 60;
    cfg.apps.video_ues_per_cell = 10;
    cfg.apps.start_jitter_ms = 500;
    let r = CellularSim::new(cfg, 4).unwrap().run();
    let cap = tdd_cell_capacity_bps(&CellConfig::default(), Direction::Ul);
    for c in &r.cells {
        assert!(c.offered_ul_bps > cap);
        assert!(c.max_bin_bps(Direction::Ul) <= cap);
        assert!(c.max_bin_bps(Direction::Dl) <= cap);
        assert!(c.max_bin_bps(Direction::Ul) > 0.95 * cap, "saturated cell should fill its subframes");
    }
}

#[test]
fn backhaul_cut_keeps_intracell_and_loses_nothing() {
    let cfg = WorldConfig {
        duration_ms: 30_000,
        warmup_ms: 8_000,
        outages: vec![Outage { a: 1, b: 2, at_ms: 15_000, duration_ms: 5_000 }],
        ..WorldConfig::default()
    };
    let r = CellularSim::new(cfg, 5).unwrap().run();
    assert!(r.intracell_dip(15, 20, 5).abs() < 0.01);
    for f in &r.flows {
        assert!(f.start.is_some());
        assert_eq!(f.counters.dropped, 0, "flow {} {:?}", f.id, f.class);
        assert_eq!(f.counters.reordered, 0, "flow {} {:?}", f.id, f.class);
    }
    // Cross-cut traffic waited in the DMA buffers.
    let worst = r.flows.iter().filter(|f| f.class == FlowClass::Intercell).map(|f| f.counters.max_latency_us).max();
    assert!(worst.unwrap() > 4_000_000);
    assert!(r.handshake.is_ok());
}

#[test]
fn identical_seed_identical_round() {
    let cfg = WorldConfig { duration_ms: 8_000, warmup_ms: 2_000, ..WorldConfig::default() };
    let a = CellularSim::new(cfg.clone(), 9).unwrap().run();
    let b = CellularSim::new(cfg.clone(), 9).unwrap().run();
    let c = CellularSim::new(cfg, 10).unwrap().run();
    assert_eq!(a.cells, b.cells);
    assert_eq!(a.flows, b.flows);
    assert_ne!(a.flows, c.flows);
}

#[test]
fn bad_config_rejected() {
    let cfg = WorldConfig { henbs: vec![], ..WorldConfig::default() };
    assert!(matches!(CellularSim::new(cfg, 1), Err(WorldError::NoCells)));
    let mut cfg = WorldConfig::default();
    cfg.apps.intercell_pairs = vec![(1, 7)];
    assert!(matches!(CellularSim::new(cfg, 1), Err(WorldError::UnknownCell(7))));
}

#[test]
fn downlink_air_bytes_reconcile_with_flow_counters() {
    let cfg = WorldConfig { duration_ms: 10_000, warmup_ms: 4_000, ..WorldConfig::default() };
    let r = CellularSim::new(cfg, 6).unwrap().run();
    let air: u64 = r.cells.iter().flat_map(|c| c.air_bytes_dl.iter()).sum();
    let delivered: u64 = r
        .flows
        .iter()
        .filter(|f| f.class != FlowClass::VideoUl)
        .map(|f| f.counters.delivered_bytes)
        .sum();
    // Air bytes also cover the jobs still finishing when the run stops: at
    // most one subframe of completions and one partial packet per cell.
    assert!(air >= delivered);
    assert!(air - delivered <= r.cells.len() as u64 * (1400 + 1200), "air {air} delivered {delivered}");
}

#[test]
fn uncongested_intracell_calls_get_nominal_rate() {
    let cfg = WorldConfig { duration_ms: 15_000, warmup_ms: 6_000, ..WorldConfig::default() };
    let r = CellularSim::new(cfg, 7).unwrap().run();
    let voice = rate(VOICE_PAYLOAD_BYTES, VOICE_INTERVAL.0);
    for f in r.flows.iter().filter(|f| f.class == FlowClass::Intracell) {
        assert!((f.goodput_bps() - voice).abs() / voice < 0.01, "flow {} at {}", f.id, f.goodput_bps());
    }
}
