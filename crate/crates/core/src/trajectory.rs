//! Closed square-loop motion of the source tip.
//!
//! The tip enters from the right at `(X, Ys)`, sweeps left through the box to
//! `x = -L/2`, climbs to `Ys + L`, crosses over to `x = L/2`, drops back to
//! `Ys` and returns to its starting point, all at constant speed `|v|`. One
//! cycle takes `tau = 4L/|v|`.
//!
//! The gauge function is tracked as the region swept to the right of the
//! moving boundary: only horizontal tip motion changes it, so it is continuous
//! in time and grows by `-Phi Theta_w(y - Ys)` inside the box every cycle.

use crate::error::{Error, Result};
use crate::model::{Kernel, PhaseTerms, SourceMotion, SourceState, SweepConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopKind {
    /// Full square loop, repeated indefinitely.
    SquareLoop,
    /// Only the first horizontal sweep; the return path is not modeled.
    SweepOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConfig {
    pub sweep: SweepConfig,
    /// Side of the square frame; the perimeter is `4 * side`.
    pub side: f64,
    pub kind: LoopKind,
}

impl LoopConfig {
    pub fn new(sweep: SweepConfig, side: f64, kind: LoopKind) -> Result<Self> {
        sweep.validate()?;
        if !side.is_finite() || side <= sweep.domain.x_len {
            return Err(Error::invalid(
                "L",
                format!("L > X = {} required so the breakpoints stay ordered", sweep.domain.x_len),
            ));
        }
        Ok(Self { sweep, side, kind })
    }

    pub fn sweep_only(sweep: SweepConfig) -> Result<Self> {
        sweep.validate()?;
        Ok(Self {
            sweep,
            side: f64::INFINITY,
            kind: LoopKind::SweepOnly,
        })
    }

    pub fn speed(&self) -> f64 {
        self.sweep.velocity.abs()
    }

    /// `4L / |v|`; infinite for a sweep-only configuration.
    pub fn period(&self) -> f64 {
        4.0 * self.side / self.speed()
    }

    /// `{-X, L/2, 3L/2, 5L/2, 7L/2, 4L - X} / |v|`
    pub fn breakpoint_times(&self) -> [f64; 6] {
        let (x, l, s) = (self.sweep.domain.x_len, self.side, self.speed());
        [
            -x / s,
            0.5 * l / s,
            1.5 * l / s,
            2.5 * l / s,
            3.5 * l / s,
            (4.0 * l - x) / s,
        ]
    }

    /// Tip position at each breakpoint; the last equals the first.
    pub fn corners(&self) -> [(f64, f64); 6] {
        let (x, l, ys) = (self.sweep.domain.x_len, self.side, self.sweep.entry_height);
        [
            (x, ys),
            (-0.5 * l, ys),
            (-0.5 * l, ys + l),
            (0.5 * l, ys + l),
            (0.5 * l, ys),
            (x, ys),
        ]
    }

    /// Cycles completed by time `t`.
    pub fn winding_number(&self, t: f64) -> u64 {
        if self.kind == LoopKind::SweepOnly {
            return 0;
        }
        let t0 = self.sweep.start_time();
        if t <= t0 {
            return 0;
        }
        ((t - t0) / self.period()).floor() as u64
    }

    /// Reduces `t` into the first cycle, returning `(k, t - k tau)`.
    fn reduce(&self, t: f64) -> (u64, f64) {
        let t0 = self.sweep.start_time();
        let t = t.max(t0);
        let k = self.winding_number(t);
        let s = t - k as f64 * self.period();
        (k, s.clamp(t0, t0 + self.period()))
    }

    /// Leg containing the first-cycle time `s`, in `0..5`.
    fn leg(&self, s: f64) -> usize {
        let tb = self.breakpoint_times();
        (0..5).rev().find(|&i| s >= tb[i]).unwrap_or(0)
    }

    /// Direction signs of leg `i`: the tip moves by `-(sx, sy) |v|` per unit time.
    fn leg_signs(i: usize) -> (f64, f64) {
        let sign = |k: usize| if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        let parity = sign(i);
        let dx = 0.5 * (1.0 + parity) * sign(i / 2);
        let dy = 0.5 * (1.0 - parity) * sign(i.div_ceil(2));
        (dx, dy)
    }

    /// Piecewise-linear tip position; times before `t0` clamp to the start.
    pub fn source_position(&self, t: f64) -> (f64, f64) {
        let s = self.source_state(t);
        (s.x, s.y)
    }

    /// `F(x, y, t)`, continuous in `t` across legs and cycles.
    pub fn loop_phase_function(&self, x: f64, y: f64, t: f64) -> f64 {
        self.phase_terms(t).value(&self.sweep.kernel(), x, y)
    }

    /// Gauge function gained over one full cycle.
    pub fn cycle_increment(&self) -> PhaseTerms {
        let phi = self.sweep.flux();
        let mut terms = PhaseTerms::new();
        let c = self.corners();
        for leg in [0, 2, 4] {
            push_horizontal(&mut terms, phi, c[leg].0, c[leg + 1].0, c[leg].1);
        }
        terms
    }
}

/// Boundary swept from `xa` to `xb` at height `h`.
fn push_horizontal(terms: &mut PhaseTerms, phi: f64, xa: f64, xb: f64, h: f64) {
    terms.push(-phi, xb, h);
    terms.push(phi, xa, h);
}

impl SourceMotion for LoopConfig {
    fn sweep(&self) -> &SweepConfig {
        &self.sweep
    }

    fn source_state(&self, t: f64) -> SourceState {
        if self.kind == LoopKind::SweepOnly {
            return self.sweep.source_state(t);
        }
        let (k, s) = self.reduce(t);
        let i = self.leg(s);
        if k == 0 && i == 0 {
            return self.sweep.source_state(t);
        }
        let tb = self.breakpoint_times();
        let (x0, y0) = self.corners()[i];
        let (sx, sy) = Self::leg_signs(i);
        let speed = self.speed();
        let dt = s - tb[i];
        SourceState {
            x: x0 - sx * speed * dt,
            y: y0 - sy * speed * dt,
            vx: -sx * speed,
            vy: -sy * speed,
        }
    }

    fn phase_terms(&self, t: f64) -> PhaseTerms {
        if self.kind == LoopKind::SweepOnly {
            return self.sweep.phase_terms(t);
        }
        let phi = self.sweep.flux();
        let c = self.corners();
        let (k, s) = self.reduce(t);
        let mut terms = PhaseTerms::single(-phi, c[0].0, c[0].1);
        if k > 0 {
            terms.extend_scaled(&self.cycle_increment(), k as f64);
        }
        let current = self.leg(s);
        for leg in [0, 2, 4] {
            let h = c[leg].1;
            if leg < current {
                push_horizontal(&mut terms, phi, c[leg].0, c[leg + 1].0, h);
            } else if leg == current {
                let tip = self.source_state(t);
                push_horizontal(&mut terms, phi, c[leg].0, tip.x, h);
            }
        }
        terms
    }

    fn kinks(&self, t_start: f64, t_end: f64) -> Vec<f64> {
        if self.kind == LoopKind::SweepOnly || !(t_end > t_start) {
            return Vec::new();
        }
        let tb = self.breakpoint_times();
        let tau = self.period();
        let t0 = tb[0];
        let first = ((t_start - t0) / tau).floor().max(0.0) as u64;
        let mut out = Vec::new();
        let mut k = first;
        loop {
            let offset = k as f64 * tau;
            if tb[0] + offset >= t_end {
                break;
            }
            for &b in &tb[1..] {
                let tk = b + offset;
                if tk > t_start && tk < t_end {
                    out.push(tk);
                }
            }
            k += 1;
        }
        out
    }

    fn period(&self) -> Option<f64> {
        (self.kind == LoopKind::SquareLoop).then(|| LoopConfig::period(self))
    }

    fn winding(&self, t: f64) -> u64 {
        self.winding_number(t)
    }
}

/// Restriction of a phase function to what matters inside `domain`.
///
/// Terms whose step is saturated at 1 across the box lose that factor; terms
/// that vanish on the box are dropped. Returns `(coef, x_edge, y_edge)` with
/// `None` marking a saturated edge.
pub fn box_relevant_terms(
    terms: &PhaseTerms,
    domain: &crate::model::BoxDomain,
    kernel: &Kernel,
) -> Vec<(f64, Option<f64>, Option<f64>)> {
    let w = kernel.half_width();
    terms
        .restricted_to(domain, kernel)
        .terms()
        .iter()
        .map(|t| {
            let xe = (t.x_edge + w > 0.0).then_some(t.x_edge);
            let ye = (t.y_edge + w > 0.0).then_some(t.y_edge);
            (t.coef, xe, ye)
        })
        .collect()
}
