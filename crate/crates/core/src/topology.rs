//! Node placement, random-waypoint mobility and range queries.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{cos, floor, hypot, sin, sqrt};
use rand_distr::{Distribution, Poisson};

use crate::rng::RngStream;

const CONTAIN_EPS_M: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Position {
    pub x_m: f64,
    pub y_m: f64,
}

impl Position {
    pub const fn new(x_m: f64, y_m: f64) -> Self {
        Position { x_m, y_m }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        hypot(self.x_m - other.x_m, self.y_m - other.y_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "shape", rename_all = "kebab-case"))]
pub enum Region {
    Rect { x0: f64, y0: f64, width: f64, height: f64 },
    Disc { cx: f64, cy: f64, radius: f64 },
}

impl Region {
    /// Axis-aligned square of the given area centred on the origin.
    pub fn square_of_area(area_m2: f64) -> Self {
        let side = sqrt(area_m2);
        Region::Rect { x0: -side / 2.0, y0: -side / 2.0, width: side, height: side }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Region::Rect { width, height, .. } => width * height,
            Region::Disc { radius, .. } => PI * radius * radius,
        }
    }

    pub fn is_valid(&self) -> bool {
        let finite = match *self {
            Region::Rect { x0, y0, width, height } => [x0, y0, width, height].iter().all(|v| v.is_finite()),
            Region::Disc { cx, cy, radius } => [cx, cy, radius].iter().all(|v| v.is_finite()),
        };
        finite && self.area() > 0.0
    }

    pub fn contains(&self, p: &Position) -> bool {
        match *self {
            Region::Rect { x0, y0, width, height } => {
                p.x_m >= x0 - CONTAIN_EPS_M
                    && p.x_m <= x0 + width + CONTAIN_EPS_M
                    && p.y_m >= y0 - CONTAIN_EPS_M
                    && p.y_m <= y0 + height + CONTAIN_EPS_M
            }
            Region::Disc { cx, cy, radius } => hypot(p.x_m - cx, p.y_m - cy) <= radius + CONTAIN_EPS_M,
        }
    }

    pub fn center(&self) -> Position {
        match *self {
            Region::Rect { x0, y0, width, height } => Position::new(x0 + width / 2.0, y0 + height / 2.0),
            Region::Disc { cx, cy, .. } => Position::new(cx, cy),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Position {
        match *self {
            Region::Rect { x0, y0, width, height } => {
                Position::new(x0 + width * rng.uniform(), y0 + height * rng.uniform())
            }
            Region::Disc { cx, cy, radius } => {
                let r = radius * sqrt(rng.uniform());
                let theta = 2.0 * PI * rng.uniform();
                Position::new(cx + r * cos(theta), cy + r * sin(theta))
            }
        }
    }
}

pub fn place_uniform(n: usize, region: &Region, rng: &mut RngStream) -> Vec<Position> {
    (0..n).map(|_| region.sample(rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PointProcess {
    /// Homogeneous Poisson process; count ~ Poisson(intensity * area).
    Poisson { intensity_per_m2: f64 },
    /// Binomial process with exactly `count` points.
    Fixed { count: usize },
}

pub fn place_point_process(process: PointProcess, region: &Region, rng: &mut RngStream) -> Vec<Position> {
    let n = match process {
        PointProcess::Fixed { count } => count,
        PointProcess::Poisson { intensity_per_m2 } => {
            let mean = intensity_per_m2 * region.area();
            if !(mean > 0.0) {
                0
            } else {
                match Poisson::new(mean) {
                    Ok(dist) => {
                        let draw: f64 = dist.sample(rng);
                        draw as usize
                    }
                    Err(_) => 0,
                }
            }
        }
    };
    place_uniform(n, region, rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SpeedRange {
    pub min_mps: f64,
    pub max_mps: f64,
}

impl Default for SpeedRange {
    fn default() -> Self {
        SpeedRange { min_mps: 0.2, max_mps: 0.7 }
    }
}

impl SpeedRange {
    pub fn draw(&self, rng: &mut RngStream) -> f64 {
        rng.uniform_range(self.min_mps, self.max_mps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityState {
    pub position: Position,
    pub waypoint: Position,
    pub speed_mps: f64,
    /// Always zero with the default model; kept so pauses can be added.
    pub pause_remaining_s: f64,
}

impl MobilityState {
    pub fn new(position: Position, region: &Region, speeds: &SpeedRange, rng: &mut RngStream) -> Self {
        MobilityState {
            position,
            waypoint: region.sample(rng),
            speed_mps: speeds.draw(rng),
            pause_remaining_s: 0.0,
        }
    }
}

/// Advances a random-waypoint walker by `dt_s` seconds. Arrival at a
/// waypoint immediately draws a new waypoint and speed (zero pause), and the
/// leftover time is spent on the new leg.
pub fn random_waypoint_step(
    state: &MobilityState,
    dt_s: f64,
    region: &Region,
    speeds: &SpeedRange,
    rng: &mut RngStream,
) -> MobilityState {
    let mut s = *state;
    if dt_s <= 0.0 {
        return s;
    }
    let mut time_left = dt_s;
    // bounded so a degenerate zero-length leg cannot spin forever
    for _ in 0..64 {
        let dist = s.position.distance(&s.waypoint);
        let reach = s.speed_mps * time_left;
        if reach < dist {
            let f = reach / dist;
            s.position = Position::new(
                s.position.x_m + f * (s.waypoint.x_m - s.position.x_m),
                s.position.y_m + f * (s.waypoint.y_m - s.position.y_m),
            );
            return s;
        }
        time_left -= if s.speed_mps > 0.0 { dist / s.speed_mps } else { time_left };
        s.position = s.waypoint;
        s.waypoint = region.sample(rng);
        s.speed_mps = speeds.draw(rng);
        if time_left <= 0.0 {
            break;
        }
    }
    s
}

/// Uniform-grid spatial index for repeated range queries.
#[derive(Debug, Clone)]
pub struct SpatialGrid<'a> {
    nodes: &'a [Position],
    cell_m: f64,
    cells: BTreeMap<(i64, i64), Vec<usize>>,
}

impl<'a> SpatialGrid<'a> {
    pub fn new(nodes: &'a [Position], cell_m: f64) -> Self {
        let cell_m = if cell_m.is_finite() && cell_m > 0.0 { cell_m } else { f64::INFINITY };
        let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, p) in nodes.iter().enumerate() {
            cells.entry(Self::key(p, cell_m)).or_default().push(i);
        }
        SpatialGrid { nodes, cell_m, cells }
    }

    fn key(p: &Position, cell_m: f64) -> (i64, i64) {
        if cell_m.is_infinite() {
            return (0, 0);
        }
        (floor(p.x_m / cell_m) as i64, floor(p.y_m / cell_m) as i64)
    }

    /// Indices `j != node` with `distance(node, j) <= range_m`, ascending.
    pub fn neighbors(&self, node: usize, range_m: f64) -> Vec<usize> {
        let origin = self.nodes[node];
        let mut out = Vec::new();
        let span = if self.cell_m.is_infinite() { 0 } else { libm::ceil(range_m / self.cell_m) as i64 };
        let (cx, cy) = Self::key(&origin, self.cell_m);
        if span > 64 || self.cell_m.is_infinite() {
            for (j, p) in self.nodes.iter().enumerate() {
                if j != node && origin.distance(p) <= range_m {
                    out.push(j);
                }
            }
            return out;
        }
        for gx in cx - span..=cx + span {
            for gy in cy - span..=cy + span {
                if let Some(bucket) = self.cells.get(&(gx, gy)) {
                    for &j in bucket {
                        if j != node && origin.distance(&self.nodes[j]) <= range_m {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

pub fn in_range_neighbors(node: usize, nodes: &[Position], range_m: f64) -> Vec<usize> {
    if range_m < 0.0 || node >= nodes.len() {
        return Vec::new();
    }
    SpatialGrid::new(nodes, range_m.max(1.0)).neighbors(node, range_m)
}
