//! Scenario files: TOML, every key optional, unknown keys rejected.

use std::path::Path;

use fmesim_core::d2d::connectivity::candidate_count;
use fmesim_core::d2d::D2dConfig;
use fmesim_core::radio::{max_range_m, LinkClass, LinkClassParams};
use fmesim_core::world::WorldConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{file}:{line}:{col}: {msg}{}", key_suffix(.key))]
    Parse { file: String, line: usize, col: usize, key: String, msg: String },
    #[error("{file}: {0}", file = .1)]
    Invalid(String, String),
    #[error("cannot read {file}: {source}")]
    Io { file: String, source: std::io::Error },
}

fn key_suffix(key: &str) -> String {
    if key.is_empty() || key == "." {
        String::new()
    } else {
        format!(" (at `{key}`)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig7Config {
    pub m: usize,
    pub phi: Vec<f64>,
    pub q: Vec<f64>,
    pub drops: usize,
    /// Side of the square the UEs are dropped in is `sqrt(area_m2)`.
    pub area_m2: f64,
    /// Beacon decode range; defaults to the D2D link budget range.
    pub range_m: Option<f64>,
    pub td_ms: u64,
}

impl Default for Fig7Config {
    fn default() -> Self {
        Fig7Config {
            m: 75,
            phi: vec![0.8, 0.92],
            q: q_grid(0.05, 1.0, 0.05).expect("static grid"),
            drops: 2000,
            area_m2: 2e6,
            range_m: None,
            td_ms: D2dConfig::default().td_ms,
        }
    }
}

impl Fig7Config {
    pub fn decode_range_m(&self) -> f64 {
        self.range_m.unwrap_or_else(|| max_range_m(&LinkClassParams::default_for(LinkClass::D2d)))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.m == 0 {
            return Err("d2d.m must be positive".into());
        }
        if self.phi.is_empty() || self.q.is_empty() {
            return Err("d2d.phi and d2d.q must not be empty".into());
        }
        for &phi in &self.phi {
            if !(phi > 0.0 && phi < 1.0) {
                return Err(format!("d2d.phi = {phi} must lie in (0, 1)"));
            }
            candidate_count(self.m, phi).map_err(|e| format!("d2d.phi = {phi}: {e}"))?;
        }
        for &q in &self.q {
            if !(q > 0.0 && q <= 1.0) {
                return Err(format!("d2d.q = {q} must lie in (0, 1]"));
            }
        }
        if self.drops == 0 {
            return Err("d2d.drops must be positive".into());
        }
        if !(self.area_m2 > 0.0) {
            return Err("d2d.area_m2 must be positive".into());
        }
        if self.range_m.is_some_and(|r| !(r >= 0.0)) {
            return Err("d2d.range_m must be non-negative".into());
        }
        D2dConfig { td_ms: self.td_ms, ..D2dConfig::default() }.validate().map_err(|e| format!("d2d.td_ms: {e}"))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub rounds: usize,
    pub world: WorldConfig,
    pub d2d: Fig7Config,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig { rounds: 3, world: WorldConfig::default(), d2d: Fig7Config::default() }
    }
}

impl ScenarioConfig {
    pub fn paper_scale() -> Self {
        ScenarioConfig { rounds: 10, world: WorldConfig::paper_scale(), d2d: Fig7Config::default() }
    }

    pub fn base(paper_scale: bool) -> Self {
        if paper_scale {
            Self::paper_scale()
        } else {
            Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.rounds == 0 {
            return Err("rounds must be positive".into());
        }
        self.world.validate().map_err(|e| format!("world: {e}"))?;
        self.d2d.validate()
    }

    /// Parses `text` on top of the desk-scale or paper-scale defaults.
    pub fn from_toml(text: &str, file: &str, paper_scale: bool) -> Result<Self, ConfigError> {
        // Schema check against the raw file first, so errors point into it.
        let de = toml::Deserializer::parse(text).map_err(|e| parse_error(file, text, String::new(), &e))?;
        let parsed: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            parse_error(file, text, key, e.inner())
        })?;
        let cfg = if paper_scale {
            let mut base = toml::Table::try_from(Self::paper_scale()).expect("config serializes");
            let overlay: toml::Table = toml::from_str(text).expect("already parsed");
            merge(&mut base, overlay);
            base.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string(), file.into()))?
        } else {
            parsed
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e, file.into()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, paper_scale: bool) -> Result<Self, ConfigError> {
        let file = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { file: file.clone(), source })?;
        Self::from_toml(&text, &file, paper_scale)
    }

    /// Every key with its default, one `dotted.key = value` per line.
    pub fn documented_keys(paper_scale: bool) -> Vec<String> {
        let table = toml::Table::try_from(Self::base(paper_scale)).expect("config serializes");
        let mut out = Vec::new();
        flatten("", &toml::Value::Table(table), &mut out);
        out
    }
}

fn parse_error(file: &str, text: &str, key: String, e: &toml::de::Error) -> ConfigError {
    let (line, col) = match e.span() {
        Some(span) => line_col(text, span.start),
        None => (1, 1),
    };
    ConfigError::Parse { file: file.into(), line, col, key, msg: e.message().trim().to_string() }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}

/// `start, start + step, ...` up to and including `stop`, rounded to 1e-9 so
/// printed values stay clean.
pub fn q_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>, String> {
    if !(step > 0.0) || !(stop >= start) {
        return Err(format!("bad grid {start}:{stop}:{step}"));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect())
}

/// Accepts `a:b:step` or a comma list.
pub fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    match parts.as_slice() {
        [a, b, step] => q_grid(num(a)?, num(b)?, num(step)?),
        [_] => s.split(',').map(num).collect(),
        _ => Err(format!("`{s}` is neither a:b:step nor a comma list")),
    }
}
