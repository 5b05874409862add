//! Analytic adiabatic solution: the eigenstate dressed with the gauge phase,
//! the open-path phase it accumulates, its sharp-kernel closed form, and the
//! bound on the off-diagonal couplings that certifies adiabaticity.

use std::f64::consts::PI;

use nalgebra::Complex;

use crate::error::{Error, Result};
use crate::model::{eigenenergy, eigenfunction, wall_mode, Kernel, Mode, PhaseTerms, SourceMotion, SweepConfig};
use crate::propagator::{schedule, Truncation};
use crate::quadrature::{integrate_adaptive, GaussLegendre};

/// Default absolute tolerance of the open-path phase quadrature.
pub const PHASE_TOLERANCE: f64 = 1e-10;

/// The eigenstate `mode` carried along adiabatically by `motion`.
#[derive(Clone, Copy)]
pub struct AdiabaticState<'a> {
    pub mode: Mode,
    pub motion: &'a dyn SourceMotion,
}

impl std::fmt::Debug for AdiabaticState<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdiabaticState")
            .field("mode", &self.mode)
            .field("phase_origin", &self.phase_origin())
            .finish()
    }
}

impl<'a> AdiabaticState<'a> {
    pub fn new(mode: Mode, motion: &'a dyn SourceMotion) -> Result<Self> {
        motion.sweep().validate()?;
        Mode::new(mode.nx, mode.ny)?;
        Ok(Self { mode, motion })
    }

    /// Time at which the state is prepared; dynamic and geometric phases start here.
    pub fn phase_origin(&self) -> f64 {
        self.motion.start_time()
    }

    pub fn energy(&self) -> f64 {
        let cfg = self.motion.sweep();
        eigenenergy(self.mode, &cfg.domain, &cfg.consts)
    }

    /// `<n| (e/c) dF/dt |n>` at time `t`.
    pub fn phase_rate_expectation(&self, t: f64) -> f64 {
        let cfg = self.motion.sweep();
        let s = self.motion.source_state(t);
        if s.vx == 0.0 {
            return 0.0;
        }
        let kernel = cfg.kernel();
        let ix = delta_expectation(self.mode.nx, cfg.domain.x_len, &kernel, s.x);
        if ix == 0.0 {
            return 0.0;
        }
        let iy = step_expectation(self.mode.ny, cfg.domain.y_len, &kernel, s.y);
        cfg.alpha * cfg.consts.hbar * s.vx * ix * iy
    }

    /// `gamma(t) = -(1/hbar) int_{t0}^{t} <n| (e/c) dF/dt' |n> dt'`.
    pub fn open_path_phase(&self, t: f64) -> Result<f64> {
        self.open_path_phase_with_tolerance(t, PHASE_TOLERANCE)
    }

    pub fn open_path_phase_with_tolerance(&self, t: f64, abs_tol: f64) -> Result<f64> {
        let t0 = self.phase_origin();
        if t <= t0 {
            return Ok(0.0);
        }
        if let Some(tau) = self.motion.period() {
            let k = ((t - t0) / tau).floor();
            if k >= 1.0 {
                let cycle = self.integrate_phase(t0, t0 + tau, abs_tol / 2.0)?;
                let rest = self.integrate_phase(t0, t - k * tau, abs_tol / 2.0)?;
                return Ok(k * cycle + rest);
            }
        }
        self.integrate_phase(t0, t, abs_tol)
    }

    fn integrate_phase(&self, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
        let cfg = self.motion.sweep();
        let (w, x_len) = (cfg.half_width, cfg.domain.x_len);
        let windows: Vec<_> = schedule(self.motion, a, b)?.into_iter().filter(|s| s.active).collect();
        if windows.is_empty() {
            return Ok(0.0);
        }
        let tol = abs_tol / windows.len() as f64;
        let mut total = 0.0;
        for seg in windows {
            // Times at which the kernel support meets a wall.
            let tm = 0.5 * (seg.start + seg.end);
            let s = self.motion.source_state(tm);
            let seams: Vec<f64> = [w, x_len - w]
                .iter()
                .map(|&x| tm + (x - s.x) / s.vx)
                .collect();
            let est = integrate_adaptive(|t| self.phase_rate_expectation(t), seg.start, seg.end, &seams, tol)
                .map_err(|e| match e {
                    Error::NumericFailure { achieved, tolerance, .. } => Error::NumericFailure {
                        context: "open-path phase",
                        achieved,
                        tolerance,
                    },
                    other => other,
                })?;
            total += est.value;
        }
        Ok(-total / cfg.consts.hbar)
    }

    /// Non-dynamic phase data at time `t`.
    pub fn prediction(&self, t: f64) -> Result<PhasePrediction> {
        let cfg = self.motion.sweep();
        Ok(PhasePrediction {
            t,
            gamma: self.open_path_phase(t)?,
            dynamic: -self.energy() * (t - self.phase_origin()) / cfg.consts.hbar,
            scale: cfg.consts.e_over_c() / cfg.consts.hbar,
            terms: self.motion.phase_terms(t),
            kernel: cfg.kernel(),
        })
    }

    /// `e^{-iE(t-t0)/hbar} e^{i gamma(t)} e^{i(e/hbar c)F} chi eta`.
    pub fn adiabatic_amplitude(&self, x: f64, y: f64, t: f64) -> Result<Complex<f64>> {
        let p = self.prediction(t)?;
        Ok(p.amplitude(self.mode, &self.motion.sweep().domain, x, y))
    }

    /// `gamma(t) + (e/hbar c) F(x, y, t)`.
    pub fn predicted_phase_map(&self, x: f64, y: f64, t: f64) -> Result<f64> {
        Ok(self.prediction(t)?.phase(x, y))
    }
}

/// Phases of the adiabatic state at one instant.
#[derive(Debug, Clone)]
pub struct PhasePrediction {
    pub t: f64,
    pub gamma: f64,
    /// `-E (t - t0) / hbar`.
    pub dynamic: f64,
    scale: f64,
    terms: PhaseTerms,
    kernel: Kernel,
}

impl PhasePrediction {
    /// `(e/hbar c) F(x, y, t)`.
    pub fn local(&self, x: f64, y: f64) -> f64 {
        self.scale * self.terms.value(&self.kernel, x, y)
    }

    /// `gamma + (e/hbar c) F`.
    pub fn phase(&self, x: f64, y: f64) -> f64 {
        self.gamma + self.local(x, y)
    }

    pub fn amplitude(&self, mode: Mode, domain: &crate::model::BoxDomain, x: f64, y: f64) -> Complex<f64> {
        Complex::from_polar(eigenfunction(mode, domain, x, y), self.dynamic + self.phase(x, y))
    }

    pub fn terms(&self) -> &PhaseTerms {
        &self.terms
    }
}

/// `int chi_n(x)^2 delta_w(x - a) dx` over the box.
pub fn delta_expectation(n: usize, len: f64, kernel: &Kernel, a: f64) -> f64 {
    let w = kernel.half_width();
    let (lo, hi) = ((a - w).max(0.0), (a + w).min(len));
    if !(hi > lo) {
        return 0.0;
    }
    let rule = GaussLegendre::new(16);
    let f = |x: f64| wall_mode(n, len, x).powi(2) * kernel.delta(x - a);
    let mid = a.clamp(lo, hi);
    rule.integrate(lo, mid, f) + rule.integrate(mid, hi, f)
}

/// `int eta_n(y)^2 Theta_w(y - b) dy` over the box.
pub fn step_expectation(n: usize, len: f64, kernel: &Kernel, b: f64) -> f64 {
    let w = kernel.half_width();
    let (lo, hi) = ((b - w).max(0.0), (b + w).min(len));
    let rule = GaussLegendre::new(16);
    let f = |y: f64| wall_mode(n, len, y).powi(2) * kernel.step(y - b);
    let ramp = if hi > lo {
        let mid = b.clamp(lo, hi);
        rule.integrate(lo, mid, f) + rule.integrate(mid, hi, f)
    } else {
        0.0
    };
    let plateau_start = (b + w).clamp(0.0, len);
    ramp + upper_mass(n, len, plateau_start)
}

/// `int_a^len eta_n^2 = (len - a)/len + sin(2 n pi a / len) / (2 n pi)`.
fn upper_mass(n: usize, len: f64, a: f64) -> f64 {
    if a >= len {
        return 0.0;
    }
    let k = 2.0 * n as f64 * PI;
    (len - a) / len + (k * a / len).sin() / k
}

/// Sharp-kernel phase after a full straight sweep:
/// `alpha [(Y - Ys)/Y + sin(2 n_y pi Ys / Y) / (2 n_y pi)]`.
///
/// Heights outside the box clamp: a source passing below collects the full
/// `alpha`, one passing above collects nothing.
pub fn berry_phase_closed_form(mode: Mode, cfg: &SweepConfig) -> f64 {
    let y = cfg.domain.y_len;
    let ys = cfg.entry_height.clamp(0.0, y);
    cfg.alpha * upper_mass(mode.ny, y, ys)
}

/// `|4 e v Phi / (c X)| (Y - Ys) / Y`, the bound on every off-diagonal Coulomb
/// coupling during a sweep.
pub fn nondiagonal_bound(cfg: &SweepConfig) -> f64 {
    let y = cfg.domain.y_len;
    let ys = cfg.entry_height.clamp(0.0, y);
    (4.0 * cfg.alpha * cfg.consts.hbar * cfg.velocity / cfg.domain.x_len).abs() * (y - ys) / y
}

/// Smallest non-zero level spacing between `mode` and any other mode of the
/// truncated basis.
pub fn minimum_gap(cfg: &SweepConfig, mode: Mode, truncation: Truncation) -> Result<f64> {
    let tr = Truncation::new(truncation.mx, truncation.my)?;
    tr.index(mode)
        .ok_or_else(|| Error::invalid("mode", format!("mode {mode} lies outside the truncation")))?;
    let e = eigenenergy(mode, &cfg.domain, &cfg.consts);
    let scale = e.abs().max(1.0);
    tr.modes()
        .map(|m| (eigenenergy(m, &cfg.domain, &cfg.consts) - e).abs())
        .filter(|&g| g > 1e-12 * scale)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::DegenerateInput("no non-degenerate level in the truncation".into()))
}

/// `nondiagonal_bound / minimum_gap`; much less than one in the adiabatic regime.
pub fn adiabaticity_ratio(cfg: &SweepConfig, mode: Mode, truncation: Truncation) -> Result<f64> {
    Ok(nondiagonal_bound(cfg) / minimum_gap(cfg, mode, truncation)?)
}
