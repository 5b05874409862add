//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;

use distphase::model::{BoxDomain, Mode, PhysicalConstants, SweepConfig};
use distphase::propagator::{Gauge, Truncation};
use distphase::trajectory::{LoopConfig, LoopKind};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Sweep,
    Loop,
    BoundCheck,
    Convergence,
    PhaseMap,
    Recurrence,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Loop => "loop",
            ExperimentKind::BoundCheck => "bound-check",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::PhaseMap => "phase-map",
            ExperimentKind::Recurrence => "recurrence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaugeChoice {
    Coulomb,
    Vector,
    Both,
}

impl GaugeChoice {
    pub fn gauges(&self) -> Vec<Gauge> {
        match self {
            GaugeChoice::Coulomb => vec![Gauge::Coulomb],
            GaugeChoice::Vector => vec![Gauge::Vector],
            GaugeChoice::Both => vec![Gauge::Coulomb, Gauge::Vector],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            GaugeChoice::Coulomb => "coulomb",
            GaugeChoice::Vector => "vector",
            GaugeChoice::Both => "both",
        }
    }
}

impl std::str::FromStr for GaugeChoice {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "coulomb" => Ok(GaugeChoice::Coulomb),
            "vector" => Ok(GaugeChoice::Vector),
            "both" => Ok(GaugeChoice::Both),
            other => Err(CliError::config("gauge", format!("expected vector|coulomb|both, got `{other}`"))),
        }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub sweep: SweepConfig,
    pub side: f64,
    pub mode: Mode,
    pub truncation: Truncation,
    /// Fixed step; `None` resolves the kernel transit with 400 steps.
    pub dt: Option<f64>,
    pub gauge: GaugeChoice,
    pub grid: (usize, usize),
    pub sample_dt: f64,
    pub cycles: u32,
    pub recurrence_p: u32,
    pub recurrence_q: u32,
    pub levels: u32,
    pub mask_eps: f64,
    pub tol_phase: f64,
    pub tol_overlap: f64,
    pub tol_norm: f64,
    pub tol_residual: f64,
    pub tol_recurrence: f64,
    pub recurrence_margin: f64,
    pub out: PathBuf,
}

const KEYS: &[&str] = &[
    "X", "Y", "alpha", "v", "Ys", "w", "hbar", "m", "e", "c", "L", "Mx", "My", "mode_x", "mode_y", "dt", "gauge",
    "grid_x", "grid_y", "sample_dt", "cycles", "recurrence_p", "recurrence_q", "levels", "mask_eps", "tol_phase",
    "tol_overlap", "tol_norm", "tol_residual", "tol_recurrence", "recurrence_margin",
];

/// Parses a real number, accepting multiples and fractions of `pi`
/// (`pi`, `-pi/2`, `2pi/3`, `2*pi/3`).
pub fn parse_real(key: &str, raw: &str) -> Result<f64, CliError> {
    let s: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || CliError::config(key, format!("expected a number, got `{raw}`"));
    let value = if let Some(pos) = s.find("pi") {
        let (num, rest) = s.split_at(pos);
        let rest = &rest[2..];
        let num = num.trim_end_matches('*');
        let coef = match num {
            "" | "+" => 1.0,
            "-" => -1.0,
            n => n.parse::<f64>().map_err(|_| bad())?,
        };
        let denom = match rest {
            "" => 1.0,
            r => r
                .strip_prefix('/')
                .ok_or_else(bad)?
                .parse::<f64>()
                .map_err(|_| bad())?,
        };
        coef * PI / denom
    } else {
        s.parse::<f64>().map_err(|_| bad())?
    };
    if !value.is_finite() {
        return Err(bad());
    }
    Ok(value)
}

fn parse_count(key: &str, raw: &str) -> Result<usize, CliError> {
    raw.trim()
        .parse::<usize>()
        .map_err(|_| CliError::config(key, format!("expected a non-negative integer, got `{raw}`")))
}

/// Collects `key = value` pairs, rejecting unknown keys.
fn collect_pairs(text: &str, overrides: &[String]) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    let mut insert = |line: &str, origin: &str| -> Result<(), CliError> {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{origin}: expected `key = value`, got `{line}`")))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(CliError::Config(format!("{origin}: unknown key `{k}`")));
        }
        map.insert(k.to_string(), v.trim().to_string());
        Ok(())
    };
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if !line.is_empty() {
            insert(line, &format!("line {}", n + 1))?;
        }
    }
    for o in overrides {
        insert(o, "--set")?;
    }
    Ok(map)
}

/// Builds a validated configuration from file text plus `--set` overrides.
/// A `gauge` flag, when given, wins over the `gauge` key.
pub fn parse_config(
    kind: ExperimentKind,
    text: &str,
    overrides: &[String],
    gauge_flag: Option<GaugeChoice>,
    out: PathBuf,
) -> Result<ExperimentConfig, CliError> {
    let map = collect_pairs(text, overrides)?;
    let real = |k: &str, default: f64| -> Result<f64, CliError> {
        map.get(k).map_or(Ok(default), |v| parse_real(k, v))
    };
    let count = |k: &str, default: usize| -> Result<usize, CliError> {
        map.get(k).map_or(Ok(default), |v| parse_count(k, v))
    };

    let domain = BoxDomain::new(real("X", 1.0)?, real("Y", 1.0)?).map_err(CliError::from_config)?;
    let consts = PhysicalConstants::new(real("hbar", 1.0)?, real("m", 1.0)?, real("e", 1.0)?, real("c", 1.0)?)
        .map_err(CliError::from_config)?;
    let recurrence_p = count("recurrence_p", 1)? as u32;
    let recurrence_q = count("recurrence_q", 3)? as u32;
    if recurrence_p == 0 || recurrence_q == 0 {
        return Err(CliError::config("recurrence_q", "positive integers required"));
    }
    let mut alpha = real("alpha", PI)?;
    if kind == ExperimentKind::Recurrence {
        alpha = 2.0 * PI * recurrence_p as f64 / recurrence_q as f64;
    }
    let sweep = SweepConfig::new(
        real("v", -0.01)?,
        real("Ys", 0.5)?,
        real("w", 0.05)?,
        alpha,
        domain,
        consts,
    )
    .map_err(CliError::from_config)?;
    let side = real("L", 10.0)?;
    LoopConfig::new(sweep, side, LoopKind::SquareLoop).map_err(CliError::from_config)?;
    let truncation = Truncation::new(count("Mx", 10)?, count("My", 10)?).map_err(CliError::from_config)?;
    let mode = Mode::new(count("mode_x", 1)?, count("mode_y", 1)?).map_err(CliError::from_config)?;
    if truncation.index(mode).is_none() {
        return Err(CliError::config("mode_x", "mode must lie inside the truncation"));
    }
    let dt = match map.get("dt").map(|s| s.as_str()) {
        None | Some("auto") => None,
        Some(v) => {
            let dt = parse_real("dt", v)?;
            if dt <= 0.0 {
                return Err(CliError::config("dt", "dt > 0 required"));
            }
            Some(dt)
        }
    };
    let gauge = match gauge_flag {
        Some(g) => g,
        None => map.get("gauge").map_or(Ok(GaugeChoice::Coulomb), |v| v.parse())?,
    };
    let grid = (count("grid_x", 101)?, count("grid_y", 101)?);
    if grid.0 < 2 || grid.1 < 2 {
        return Err(CliError::config("grid_x", "at least 2 points per direction required"));
    }
    let positive = |k: &str, default: f64| -> Result<f64, CliError> {
        let v = real(k, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(CliError::config(k, format!("{k} > 0 required")))
        }
    };
    let default_cycles = if kind == ExperimentKind::Recurrence {
        recurrence_q as usize
    } else {
        1
    };
    let cycles = count("cycles", default_cycles)? as u32;
    if cycles == 0 {
        return Err(CliError::config("cycles", "cycles >= 1 required"));
    }
    let levels = count("levels", 3)? as u32;
    if levels < 2 {
        return Err(CliError::config("levels", "levels >= 2 required"));
    }
    let mask_eps = real("mask_eps", distphase::analysis::MASK_EPS)?;
    if !(mask_eps > 0.0 && mask_eps < 1.0) {
        return Err(CliError::config("mask_eps", "0 < mask_eps < 1 required"));
    }
    Ok(ExperimentConfig {
        kind,
        sweep,
        side,
        mode,
        truncation,
        dt,
        gauge,
        grid,
        sample_dt: positive("sample_dt", 1.0)?,
        cycles,
        recurrence_p,
        recurrence_q,
        levels,
        mask_eps,
        tol_phase: positive("tol_phase", 1e-2)?,
        tol_overlap: positive("tol_overlap", 1e-3)?,
        tol_norm: positive("tol_norm", 1e-10)?,
        tol_residual: positive("tol_residual", 5e-3)?,
        tol_recurrence: positive("tol_recurrence", 1e-2)?,
        recurrence_margin: positive("recurrence_margin", 0.05)?,
        out,
    })
}

impl ExperimentConfig {
    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            sweep: self.sweep,
            side: self.side,
            kind: LoopKind::SquareLoop,
        }
    }

    /// Every setting, one `key = value` per line, in a form `parse_config` reads back.
    pub fn resolved(&self) -> String {
        let s = &self.sweep;
        let mut out = String::new();
        let _ = writeln!(out, "# experiment: {}", self.kind.name());
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let f = |v: f64| format!("{v:.16e}");
        kv("X", f(s.domain.x_len));
        kv("Y", f(s.domain.y_len));
        kv("alpha", f(s.alpha));
        kv("v", f(s.velocity));
        kv("Ys", f(s.entry_height));
        kv("w", f(s.half_width));
        kv("hbar", f(s.consts.hbar));
        kv("m", f(s.consts.mass));
        kv("e", f(s.consts.charge));
        kv("c", f(s.consts.light_speed));
        kv("L", f(self.side));
        kv("Mx", self.truncation.mx.to_string());
        kv("My", self.truncation.my.to_string());
        kv("mode_x", self.mode.nx.to_string());
        kv("mode_y", self.mode.ny.to_string());
        kv("dt", self.dt.map_or("auto".to_string(), f));
        kv("gauge", self.gauge.name().to_string());
        kv("grid_x", self.grid.0.to_string());
        kv("grid_y", self.grid.1.to_string());
        kv("sample_dt", f(self.sample_dt));
        kv("cycles", self.cycles.to_string());
        kv("recurrence_p", self.recurrence_p.to_string());
        kv("recurrence_q", self.recurrence_q.to_string());
        kv("levels", self.levels.to_string());
        kv("mask_eps", f(self.mask_eps));
        kv("tol_phase", f(self.tol_phase));
        kv("tol_overlap", f(self.tol_overlap));
        kv("tol_norm", f(self.tol_norm));
        kv("tol_residual", f(self.tol_residual));
        kv("tol_recurrence", f(self.tol_recurrence));
        kv("recurrence_margin", f(self.recurrence_margin));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, sets: &[&str]) -> Result<ExperimentConfig, CliError> {
        let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
        parse_config(ExperimentKind::Sweep, text, &sets, None, PathBuf::from("out"))
    }

    #[test]
    fn pi_expressions() {
        assert_eq!(parse_real("a", "pi").unwrap(), PI);
        assert_eq!(parse_real("a", "-pi").unwrap(), -PI);
        assert!((parse_real("a", "2pi/3").unwrap() - 2.0 * PI / 3.0).abs() < 1e-15);
        assert!((parse_real("a", "2 * pi / 3").unwrap() - 2.0 * PI / 3.0).abs() < 1e-15);
        assert_eq!(parse_real("a", "0.25").unwrap(), 0.25);
        assert!(parse_real("a", "pie").is_err());
        assert!(parse_real("a", "nan").is_err());
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = parse("# box\nX = 2 # wide\nv = -0.02\n", &["v=-0.03"]).unwrap();
        assert_eq!(cfg.sweep.domain.x_len, 2.0);
        assert_eq!(cfg.sweep.velocity, -0.03);
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = parse("alpha = 2pi/3\nMx = 6\ndt = 0.01\n", &[]).unwrap();
        let text = cfg.resolved();
        let again = parse(&text, &[]).unwrap();
        assert_eq!(again.sweep, cfg.sweep);
        assert_eq!(again.truncation, cfg.truncation);
        assert_eq!(again.dt, cfg.dt);
        assert_eq!(again.resolved(), text);
    }

    #[test]
    fn malformed_lines_name_the_problem() {
        let err = parse("alpha\n", &[]).unwrap_err();
        assert!(err.to_string().contains("line 1"));
        let err = parse("", &["Mx=1"]).unwrap_err();
        assert!(err.to_string().contains("Mx"));
    }
}
