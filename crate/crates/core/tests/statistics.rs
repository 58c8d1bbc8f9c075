use fmesim_core::engine::SimTime;
use fmesim_core::radio::FadingState;
use fmesim_core::rng::RngStream;
use fmesim_core::topology::{
    place_point_process, place_uniform, random_waypoint_step, MobilityState, PointProcess, Position, Region, SpeedRange,
};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, DiscreteCDF, Poisson};

#[test]
fn sibling_streams_uncorrelated() {
    let root = RngStream::new(42, "root");
    let (mut a, mut b) = (root.substream("a"), root.substream("b"));
    let n = 10_000;
    let xs: Vec<f64> = (0..n).map(|_| a.uniform()).collect();
    let ys: Vec<f64> = (0..n).map(|_| b.uniform()).collect();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    assert!((cov / (vx * vy).sqrt()).abs() < 0.05);
}

#[test]
fn uniform_mean_within_clt_bound() {
    let mut r = RngStream::new(7, "u");
    let n = 100_000;
    let mean = (0..n).map(|_| r.uniform()).sum::<f64>() / n as f64;
    let sigma = (1.0 / 12.0 / n as f64).sqrt();
    assert!((mean - 0.5).abs() < 3.0 * sigma);
}

#[test]
fn uniform_placement_mean_within_clt_bound() {
    let mut r = RngStream::new(8, "place");
    let pts = place_uniform(10_000, &Region::Rect { x0: 0.0, y0: 0.0, width: 1.0, height: 1.0 }, &mut r);
    let mean = pts.iter().map(|p| p.x_m).sum::<f64>() / pts.len() as f64;
    assert!((mean - 0.5).abs() < 3.0 * (1.0 / 12.0 / 1e4f64).sqrt());
}

#[test]
fn fading_power_averages_to_zero_db() {
    let mut r = RngStream::new(9, "fading");
    // Long time average over several independent realizations.
    let (states, per_state) = (10, 100_000u64);
    let mut sum = 0.0;
    for _ in 0..states {
        let f = FadingState::new(2.0, &mut r);
        sum += (0..per_state).map(|k| f.power(SimTime(k * 1000))).sum::<f64>();
    }
    let mean_db = 10.0 * (sum / (states as f64 * per_state as f64)).log10();
    assert!(mean_db.abs() < 0.5, "mean power {mean_db} dB");
}

/// Asymptotic one-sample KS critical value for significance 0.01.
const KS_CRIT_001: f64 = 1.6276;

#[test]
fn fading_envelope_is_rayleigh() {
    let mut r = RngStream::new(10, "fading");
    let n = 10_000;
    let mut amps: Vec<f64> = (0..n)
        .map(|_| {
            let f = FadingState::new(2.0, &mut r);
            let t = SimTime((r.uniform() * 1e9) as u64);
            f.power(t).sqrt()
        })
        .collect();
    amps.sort_by(f64::total_cmp);
    // Unit mean power: F(r) = 1 - exp(-r^2).
    let d = amps
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let cdf = 1.0 - (-a * a).exp();
            (cdf - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - cdf).abs())
        })
        .fold(0.0, f64::max);
    assert!((n as f64).sqrt() * d < KS_CRIT_001, "KS statistic {d}");
}

#[test]
fn poisson_mean_count_within_three_sigma() {
    let region = Region::square_of_area(1e6);
    let intensity = 75.0 / region.area();
    let mut r = RngStream::new(11, "ppp");
    let trials = 10_000;
    let counts: Vec<usize> = (0..trials)
        .map(|_| place_point_process(PointProcess::Poisson { intensity_per_m2: intensity }, &region, &mut r).len())
        .collect();
    let mean = counts.iter().sum::<usize>() as f64 / trials as f64;
    assert!((mean - 75.0).abs() <= 3.0 * 75f64.sqrt() / 100.0, "mean {mean}");

    // Chi-square against Poisson(75), pooling sparse tails.
    let dist = Poisson::new(75.0).unwrap();
    let mut bins: Vec<(u64, u64, f64)> = Vec::new();
    let (lo, hi) = (55u64, 95u64);
    bins.push((0, lo - 1, dist.cdf(lo - 1)));
    for k in lo..=hi {
        bins.push((k, k, dist.pmf(k)));
    }
    bins.push((hi + 1, u64::MAX, 1.0 - dist.cdf(hi)));
    let chi: f64 = bins
        .iter()
        .map(|&(a, b, p)| {
            let obs = counts.iter().filter(|&&c| (c as u64) >= a && (c as u64) <= b).count() as f64;
            let exp = p * trials as f64;
            (obs - exp).powi(2) / exp
        })
        .sum();
    let df = (bins.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(df).unwrap().cdf(chi);
    assert!(p > 0.01, "chi2 {chi} p {p}");
}

#[test]
fn waypoint_walkers_stay_inside_with_bounded_speed() {
    let region = Region::Disc { cx: 0.0, cy: 0.0, radius: 500.0 };
    let speeds = SpeedRange::default();
    let mut r = RngStream::new(12, "rwp");
    for _ in 0..10_000 {
        let start = region.sample(&mut r);
        let mut s = MobilityState::new(start, &region, &speeds, &mut r);
        for _ in 0..5 {
            let next = random_waypoint_step(&s, 100.0, &region, &speeds, &mut r);
            assert!(region.contains(&next.position));
            assert!(next.speed_mps >= speeds.min_mps && next.speed_mps <= speeds.max_mps);
            assert!(next.position.distance(&s.position) <= speeds.max_mps * 100.0 + 1e-9);
            s = next;
        }
    }
}

#[test]
fn fixed_process_places_exact_count_inside() {
    let region = Region::Disc { cx: 10.0, cy: -5.0, radius: 30.0 };
    let mut r = RngStream::new(13, "fixed");
    let pts = place_point_process(PointProcess::Fixed { count: 75 }, &region, &mut r);
    assert_eq!(pts.len(), 75);
    assert!(pts.iter().all(|p| region.contains(p) && p.distance(&Position::new(10.0, -5.0)) <= 30.0));
}
