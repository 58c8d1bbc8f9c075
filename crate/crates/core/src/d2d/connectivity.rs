//! Beacon-reception Monte Carlo: per drop, place M UEs, pick the b-UE
//! candidates, and let each candidate beacon with probability q in every
//! period. A regular UE succeeds in a period when exactly one active
//! candidate is within decode range.

use alloc::vec::Vec;

use super::D2dError;
use crate::rng::RngStream;
use crate::topology::{place_point_process, PointProcess, Region};

/// Beacon intervals a UE listens before the first counted period.
pub const LISTEN_PERIODS: u32 = 2;
/// Delay samples are capped at this many beacon intervals.
pub const DELAY_CAP_PERIODS: u32 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct DropParams {
    pub m: usize,
    pub phi: f64,
    pub q: f64,
    pub region: Region,
    pub range_m: f64,
    pub td_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropOutcome {
    /// Fraction of (regular UE, period) pairs with a decodable beacon.
    pub success: f64,
    /// Mean first-reception delay over regular UEs, ms.
    pub delay_ms: f64,
    /// Regular UEs whose delay hit the cap.
    pub capped: usize,
    pub regular: usize,
}

/// Number of b-UE candidates, `(1 - phi) * m`, which must be integral.
pub fn candidate_count(m: usize, phi: f64) -> Result<usize, D2dError> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(D2dError::Probability(phi));
    }
    let value = (1.0 - phi) * m as f64;
    let rounded = libm::round(value);
    if libm::fabs(value - rounded) > 1e-9 {
        return Err(D2dError::NonIntegralCandidates { m, phi, value });
    }
    Ok(rounded as usize)
}

/// Closed-form per-period success with every node in range of every other.
pub fn oracle_success(n_b: usize, q: f64) -> f64 {
    if n_b == 0 {
        return 0.0;
    }
    n_b as f64 * q * libm::pow(1.0 - q, (n_b - 1) as f64)
}

/// Expected capped delay in beacon intervals for a per-period success
/// probability `p` under the same listen and cap rules as [`run_drop`].
pub fn oracle_delay_periods(p: f64) -> f64 {
    let horizon = DELAY_CAP_PERIODS - LISTEN_PERIODS;
    let mut e = 0.0;
    let mut miss = 1.0;
    for n in 1..=horizon {
        e += miss * p * f64::from(LISTEN_PERIODS + n);
        miss *= 1.0 - p;
    }
    e + miss * f64::from(DELAY_CAP_PERIODS)
}

pub fn run_drop(params: &DropParams, rng: &mut RngStream) -> Result<DropOutcome, D2dError> {
    if !(0.0..=1.0).contains(&params.q) {
        return Err(D2dError::Probability(params.q));
    }
    let n_b = candidate_count(params.m, params.phi)?;
    if n_b > 128 {
        return Err(D2dError::Param("at most 128 b-UE candidates per drop"));
    }
    let pos = place_point_process(PointProcess::Fixed { count: params.m }, &params.region, rng);
    // The first n_b placed UEs are the candidates; placement is exchangeable.
    let masks: Vec<u128> = pos[n_b..]
        .iter()
        .map(|p| {
            pos[..n_b]
                .iter()
                .enumerate()
                .filter(|(_, c)| p.distance(c) <= params.range_m)
                .fold(0u128, |m, (i, _)| m | (1u128 << i))
        })
        .collect();
    let regular = masks.len();
    let horizon = DELAY_CAP_PERIODS - LISTEN_PERIODS;
    let mut first: Vec<Option<u32>> = alloc::vec![None; regular];
    let mut successes = 0u64;
    for period in 1..=horizon {
        let mut active = 0u128;
        for i in 0..n_b {
            if rng.bernoulli(params.q) {
                active |= 1u128 << i;
            }
        }
        for (r, mask) in masks.iter().enumerate() {
            if (active & mask).count_ones() == 1 {
                successes += 1;
                first[r].get_or_insert(period);
            }
        }
    }
    let td = params.td_ms as f64;
    let mut capped = 0;
    let mut delay_sum = 0.0;
    for f in &first {
        match f {
            Some(n) => delay_sum += f64::from(LISTEN_PERIODS + n) * td,
            None => {
                capped += 1;
                delay_sum += f64::from(DELAY_CAP_PERIODS) * td;
            }
        }
    }
    let denom = (regular as u64 * u64::from(horizon)).max(1) as f64;
    Ok(DropOutcome {
        success: successes as f64 / denom,
        delay_ms: if regular == 0 { f64::from(DELAY_CAP_PERIODS) * td } else { delay_sum / regular as f64 },
        capped,
        regular,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(phi: f64, q: f64) -> DropParams {
        DropParams { m: 75, phi, q, region: Region::square_of_area(2e6), range_m: 1e9, td_ms: 80 }
    }

    #[test]
    fn candidate_counts() {
        assert_eq!(candidate_count(75, 0.8), Ok(15));
        assert_eq!(candidate_count(75, 0.92), Ok(6));
        assert!(matches!(candidate_count(75, 0.5), Err(D2dError::NonIntegralCandidates { .. })));
    }

    #[test]
    fn oracle_maximum_at_one_over_nb() {
        let best = (1..1000).map(|i| i as f64 / 1000.0).fold((0.0, 0.0), |acc, q| {
            let v = oracle_success(15, q);
            if v > acc.1 {
                (q, v)
            } else {
                acc
            }
        });
        assert!((best.0 - 1.0 / 15.0).abs() < 0.001);
    }

    #[test]
    fn permanent_collision_at_q_one() {
        let mut rng = RngStream::new(1, "t");
        let out = run_drop(&params(0.8, 1.0), &mut rng).unwrap();
        assert_eq!(out.success, 0.0);
        assert_eq!(out.capped, out.regular);
        assert_eq!(out.delay_ms, 8000.0);
    }

    #[test]
    fn single_candidate_always_on_always_succeeds() {
        let mut rng = RngStream::new(1, "t");
        let p = DropParams { m: 10, phi: 0.9, q: 1.0, ..params(0.9, 1.0) };
        let out = run_drop(&p, &mut rng).unwrap();
        assert_eq!(out.success, 1.0);
        assert_eq!(out.delay_ms, 240.0);
        assert!((oracle_delay_periods(1.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_never_succeeds() {
        let mut rng = RngStream::new(1, "t");
        let p = DropParams { range_m: 0.0, ..params(0.8, 0.1) };
        let out = run_drop(&p, &mut rng).unwrap();
        assert_eq!(out.success, 0.0);
    }
}
