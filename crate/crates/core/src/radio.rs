//! Link budgets, log-distance path loss, Clarke/Jakes fading and the TDD-LTE
//! cell capacity model.

use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{cos, log10, pow, sin, sqrt};
use thiserror::Error;

use crate::engine::SimTime;
use crate::rng::RngStream;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Number of sinusoids in the Clarke/Jakes fading sum.
pub const FADING_PATHS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadioError {
    #[error("distance must be finite, got {0}")]
    NonFiniteDistance(f64),
    #[error("path-loss exponent must be >= 2, got {0}")]
    Alpha(f64),
    #[error("carrier frequency must be positive, got {0}")]
    Carrier(f64),
    #[error("link parameter {0} is not finite")]
    NonFinite(&'static str),
    #[error("{n_rb} resource blocks do not match a {bandwidth_mhz} MHz channel")]
    ResourceBlocks { bandwidth_mhz: f64, n_rb: u32 },
    #[error("unknown TDD uplink/downlink configuration {0}")]
    TddConfig(u8),
    #[error("cell parameter out of range: {0}")]
    Cell(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum LinkClass {
    LteUl,
    LteDl,
    D2d,
    WifiBackhaul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum FadingModel {
    None,
    Clarke20,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct LinkClassParams {
    pub class: LinkClass,
    pub alpha: f64,
    pub tx_power_dbm: f64,
    pub tx_gain_db: f64,
    pub rx_gain_db: f64,
    pub rx_sensitivity_dbm: f64,
    pub carrier_hz: f64,
    pub fading: FadingModel,
    /// Stored for completeness; no SINR computation consumes it.
    pub noise_floor_dbm: f64,
}

impl LinkClassParams {
    /// Channel table defaults for each link class.
    pub fn default_for(class: LinkClass) -> Self {
        match class {
            LinkClass::LteUl => LinkClassParams {
                class,
                alpha: 2.2,
                tx_power_dbm: 23.0,
                tx_gain_db: 3.0,
                rx_gain_db: 3.0,
                rx_sensitivity_dbm: -123.4,
                carrier_hz: 700e6,
                fading: FadingModel::Clarke20,
                noise_floor_dbm: -118.4,
            },
            LinkClass::LteDl => LinkClassParams {
                class,
                alpha: 2.2,
                tx_power_dbm: 30.0,
                tx_gain_db: 3.0,
                rx_gain_db: 3.0,
                rx_sensitivity_dbm: -107.5,
                carrier_hz: 700e6,
                fading: FadingModel::Clarke20,
                noise_floor_dbm: -104.5,
            },
            // -174 dBm/Hz integrated over 10 MHz.
            LinkClass::D2d => LinkClassParams {
                class,
                alpha: 2.1,
                tx_power_dbm: 23.0,
                tx_gain_db: 0.0,
                rx_gain_db: 0.0,
                rx_sensitivity_dbm: -107.5,
                carrier_hz: 700e6,
                fading: FadingModel::None,
                noise_floor_dbm: -104.0,
            },
            LinkClass::WifiBackhaul => LinkClassParams {
                class,
                alpha: 2.0,
                tx_power_dbm: 23.0,
                tx_gain_db: 3.0,
                rx_gain_db: 3.0,
                rx_sensitivity_dbm: -85.0,
                carrier_hz: 5e9,
                fading: FadingModel::None,
                noise_floor_dbm: -110.0,
            },
        }
    }

    pub fn validate(&self) -> Result<(), RadioError> {
        let fields = [
            ("alpha", self.alpha),
            ("tx_power_dbm", self.tx_power_dbm),
            ("tx_gain_db", self.tx_gain_db),
            ("rx_gain_db", self.rx_gain_db),
            ("rx_sensitivity_dbm", self.rx_sensitivity_dbm),
            ("carrier_hz", self.carrier_hz),
            ("noise_floor_dbm", self.noise_floor_dbm),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(RadioError::NonFinite(name));
            }
        }
        if self.alpha < 2.0 {
            return Err(RadioError::Alpha(self.alpha));
        }
        if self.carrier_hz <= 0.0 {
            return Err(RadioError::Carrier(self.carrier_hz));
        }
        Ok(())
    }

    /// Transmit power plus antenna gains minus receiver sensitivity.
    pub fn budget_db(&self) -> f64 {
        self.tx_power_dbm + self.tx_gain_db + self.rx_gain_db - self.rx_sensitivity_dbm
    }
}

/// Free-space loss at the 1 m reference distance.
pub fn reference_loss_db(carrier_hz: f64) -> f64 {
    20.0 * log10(4.0 * PI * carrier_hz / SPEED_OF_LIGHT)
}

/// Log-distance path loss; distances below 1 m are clamped to 1 m.
pub fn path_loss_db(params: &LinkClassParams, distance_m: f64) -> Result<f64, RadioError> {
    if !distance_m.is_finite() {
        return Err(RadioError::NonFiniteDistance(distance_m));
    }
    let d = distance_m.max(1.0);
    Ok(reference_loss_db(params.carrier_hz) + 10.0 * params.alpha * log10(d))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxPower {
    pub rx_dbm: f64,
    pub link_up: bool,
}

/// Received power at `distance_m` with an additive fading term.
///
/// Infinite distance is accepted and yields `-inf` (link down); NaN is not.
pub fn rx_power_dbm(link: &LinkClassParams, distance_m: f64, fading_db: f64) -> RxPower {
    let rx_dbm = if distance_m == f64::INFINITY {
        f64::NEG_INFINITY
    } else {
        match path_loss_db(link, distance_m) {
            Ok(pl) => link.tx_power_dbm + link.tx_gain_db + link.rx_gain_db - pl + fading_db,
            Err(_) => f64::NAN,
        }
    };
    RxPower { rx_dbm, link_up: rx_dbm >= link.rx_sensitivity_dbm }
}

/// Largest distance whose unfaded received power still meets sensitivity.
/// Returns 0 when the budget does not close even at the 1 m reference.
pub fn max_range_m(link: &LinkClassParams) -> f64 {
    let margin = link.budget_db() - reference_loss_db(link.carrier_hz);
    if margin < 0.0 {
        return 0.0;
    }
    pow(10.0, margin / (10.0 * link.alpha))
}

pub fn doppler_hz(speed_mps: f64, carrier_hz: f64) -> f64 {
    speed_mps * carrier_hz / SPEED_OF_LIGHT
}

/// Sum-of-sinusoids Rayleigh fading process (Clarke model, Jakes-style
/// arrival angles with a random rotation).
#[derive(Debug, Clone)]
pub struct FadingState {
    doppler_hz: f64,
    /// Per-path Doppler shift `f_d * cos(angle)`.
    shifts_hz: Vec<f64>,
    phases: Vec<f64>,
}

impl FadingState {
    pub fn new(doppler_hz: f64, rng: &mut RngStream) -> Self {
        let n = FADING_PATHS as f64;
        let rotation = rng.uniform_range(-PI, PI);
        let mut shifts_hz = Vec::with_capacity(FADING_PATHS);
        let mut phases = Vec::with_capacity(FADING_PATHS);
        for k in 1..=FADING_PATHS {
            let angle = (2.0 * PI * k as f64 - PI + rotation) / n;
            shifts_hz.push(doppler_hz * cos(angle));
            phases.push(rng.uniform_range(-PI, PI));
        }
        FadingState { doppler_hz, shifts_hz, phases }
    }

    pub fn doppler_hz(&self) -> f64 {
        self.doppler_hz
    }

    pub fn n_paths(&self) -> usize {
        self.shifts_hz.len()
    }

    /// Complex envelope `(i, q)` at time `t`, normalized to unit mean power.
    pub fn envelope(&self, t: SimTime) -> (f64, f64) {
        let secs = t.as_secs_f64();
        let (mut i, mut q) = (0.0, 0.0);
        for (f, phi) in self.shifts_hz.iter().zip(&self.phases) {
            let arg = 2.0 * PI * f * secs + phi;
            i += cos(arg);
            q += sin(arg);
        }
        let norm = 1.0 / sqrt(self.shifts_hz.len() as f64);
        (i * norm, q * norm)
    }

    pub fn power(&self, t: SimTime) -> f64 {
        let (i, q) = self.envelope(t);
        i * i + q * q
    }

    pub fn gain_db(&self, t: SimTime) -> f64 {
        10.0 * log10(self.power(t))
    }
}

pub fn fading_gain_db(state: &FadingState, t: SimTime) -> f64 {
    state.gain_db(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ul,
    Dl,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Ul => "UL",
            Direction::Dl => "DL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SpecialSubframePolicy {
    Exclude,
    CountAsDl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubframeKind {
    Downlink,
    Special,
    Uplink,
}

/// Uplink/downlink subframe patterns for TDD configurations 0 through 6.
pub fn tdd_pattern(config: u8) -> Result<[SubframeKind; 10], RadioError> {
    use SubframeKind::{Downlink as D, Special as S, Uplink as U};
    Ok(match config {
        0 => [D, S, U, U, U, D, S, U, U, U],
        1 => [D, S, U, U, D, D, S, U, U, D],
        2 => [D, S, U, D, D, D, S, U, D, D],
        3 => [D, S, U, U, U, D, D, D, D, D],
        4 => [D, S, U, U, D, D, D, D, D, D],
        5 => [D, S, U, D, D, D, D, D, D, D],
        6 => [D, S, U, U, U, D, S, U, U, D],
        other => return Err(RadioError::TddConfig(other)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct CellConfig {
    pub bandwidth_mhz: f64,
    pub n_rb: u32,
    pub tdd_config: u8,
    pub bits_per_symbol: u32,
    pub code_rate: f64,
    pub special_subframe_policy: SpecialSubframePolicy,
    pub control_overhead_fraction: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            bandwidth_mhz: 10.0,
            n_rb: 50,
            tdd_config: 1,
            bits_per_symbol: 4,
            code_rate: 1.0 / 3.0,
            special_subframe_policy: SpecialSubframePolicy::Exclude,
            control_overhead_fraction: 0.0,
        }
    }
}

const SUBCARRIERS_PER_RB: f64 = 12.0;
const SYMBOLS_PER_SUBFRAME: f64 = 14.0;

impl CellConfig {
    pub fn validate(&self) -> Result<(), RadioError> {
        let expected = match self.bandwidth_mhz {
            b if b == 1.4 => 6,
            b if b == 3.0 => 15,
            b if b == 5.0 => 25,
            b if b == 10.0 => 50,
            b if b == 15.0 => 75,
            b if b == 20.0 => 100,
            _ => 0,
        };
        if expected != self.n_rb {
            return Err(RadioError::ResourceBlocks { bandwidth_mhz: self.bandwidth_mhz, n_rb: self.n_rb });
        }
        tdd_pattern(self.tdd_config)?;
        if self.bits_per_symbol == 0 {
            return Err(RadioError::Cell("bits_per_symbol must be positive"));
        }
        if !(self.code_rate > 0.0 && self.code_rate <= 1.0) {
            return Err(RadioError::Cell("code_rate must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.control_overhead_fraction) {
            return Err(RadioError::Cell("control_overhead_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Whether subframe `index` (0..10) carries data in `dir`.
    pub fn carries(&self, index: usize, dir: Direction) -> bool {
        let Ok(pattern) = tdd_pattern(self.tdd_config) else {
            return false;
        };
        match (pattern[index % 10], dir) {
            (SubframeKind::Downlink, Direction::Dl) | (SubframeKind::Uplink, Direction::Ul) => true,
            (SubframeKind::Special, Direction::Dl) => self.special_subframe_policy == SpecialSubframePolicy::CountAsDl,
            _ => false,
        }
    }

    pub fn data_subframes_per_frame(&self, dir: Direction) -> usize {
        (0..10).filter(|&i| self.carries(i, dir)).count()
    }

    /// Coded bits one data subframe carries with full allocation.
    pub fn bits_per_subframe(&self) -> f64 {
        self.n_rb as f64
            * SUBCARRIERS_PER_RB
            * SYMBOLS_PER_SUBFRAME
            * self.bits_per_symbol as f64
            * self.code_rate
            * (1.0 - self.control_overhead_fraction)
    }
}

pub fn tdd_cell_capacity_bps(cfg: &CellConfig, dir: Direction) -> f64 {
    // bits per subframe × data subframes per 10 ms frame × 100 frames/s
    cfg.bits_per_subframe() * cfg.data_subframes_per_frame(dir) as f64 * 100.0
}
