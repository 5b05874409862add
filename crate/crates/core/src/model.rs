//! Analytic primitives: box eigenstates, broadened step/delta kernels, the
//! phase function, its potentials in both gauges, the induced electric field
//! and the charge/current densities that source it.
//!
//! Units are Gaussian with `hbar = m = e = c = 1` by default, in which case the
//! dimensionless flux strength `alpha = e*Phi/(hbar*c)` coincides with `Phi`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Rectangular hard-wall confinement `(0, X) x (0, Y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    pub x_len: f64,
    pub y_len: f64,
}

impl BoxDomain {
    pub fn new(x_len: f64, y_len: f64) -> Result<Self> {
        if !(x_len > 0.0 && x_len.is_finite()) {
            return Err(Error::invalid("X", "X > 0 required"));
        }
        if !(y_len > 0.0 && y_len.is_finite()) {
            return Err(Error::invalid("Y", "Y > 0 required"));
        }
        Ok(Self { x_len, y_len })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x > 0.0 && x < self.x_len && y > 0.0 && y < self.y_len
    }
}

impl Default for BoxDomain {
    fn default() -> Self {
        Self {
            x_len: 1.0,
            y_len: 1.0,
        }
    }
}

/// Quantum numbers `(n_x, n_y)` of a box eigenstate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mode {
    pub nx: usize,
    pub ny: usize,
}

impl Mode {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 {
            return Err(Error::invalid("nx", "nx >= 1 required"));
        }
        if ny == 0 {
            return Err(Error::invalid("ny", "ny >= 1 required"));
        }
        Ok(Self { nx, ny })
    }

    pub const GROUND: Mode = Mode { nx: 1, ny: 1 };
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.nx, self.ny)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub mass: f64,
    pub charge: f64,
    pub light_speed: f64,
}

impl PhysicalConstants {
    pub fn new(hbar: f64, mass: f64, charge: f64, light_speed: f64) -> Result<Self> {
        if !(hbar > 0.0) {
            return Err(Error::invalid("hbar", "hbar > 0 required"));
        }
        if !(mass > 0.0) {
            return Err(Error::invalid("mass", "mass > 0 required"));
        }
        if !(light_speed > 0.0) {
            return Err(Error::invalid("c", "c > 0 required"));
        }
        if !(charge.is_finite() && charge != 0.0) {
            return Err(Error::invalid("e", "finite non-zero charge required"));
        }
        Ok(Self {
            hbar,
            mass,
            charge,
            light_speed,
        })
    }

    pub fn e_over_c(&self) -> f64 {
        self.charge / self.light_speed
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            hbar: 1.0,
            mass: 1.0,
            charge: 1.0,
            light_speed: 1.0,
        }
    }
}

/// `(hbar^2 pi^2 / 2m) [(nx/X)^2 + (ny/Y)^2]`
pub fn eigenenergy(mode: Mode, domain: &BoxDomain, consts: &PhysicalConstants) -> f64 {
    let kx = mode.nx as f64 / domain.x_len;
    let ky = mode.ny as f64 / domain.y_len;
    consts.hbar * consts.hbar * PI * PI / (2.0 * consts.mass) * (kx * kx + ky * ky)
}

/// One-dimensional hard-wall eigenfunction `sqrt(2/len) sin(n pi s / len)` on
/// the open interval, zero outside.
#[inline]
pub fn wall_mode(n: usize, len: f64, s: f64) -> f64 {
    if s <= 0.0 || s >= len {
        return 0.0;
    }
    (2.0 / len).sqrt() * (n as f64 * PI * s / len).sin()
}

/// Derivative of [`wall_mode`] inside the interval.
#[inline]
pub fn wall_mode_derivative(n: usize, len: f64, s: f64) -> f64 {
    if s <= 0.0 || s >= len {
        return 0.0;
    }
    let k = n as f64 * PI / len;
    (2.0 / len).sqrt() * k * (k * s).cos()
}

/// `chi_nx(x) * eta_ny(y)`; zero outside the open rectangle.
pub fn eigenfunction(mode: Mode, domain: &BoxDomain, x: f64, y: f64) -> f64 {
    wall_mode(mode.nx, domain.x_len, x) * wall_mode(mode.ny, domain.y_len, y)
}

/// Broadened step/delta pair of half-width `w`.
///
/// The step is the septic smoothstep `35u^4 - 84u^5 + 70u^6 - 20u^7` in
/// `u = (s + w) / 2w`, clamped to 0 and 1 outside `[-w, w]`. It is C3, so the
/// delta and its first two derivatives are continuous and vanish at `+-w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    half_width: f64,
}

impl Kernel {
    pub fn new(half_width: f64) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::invalid("w", "w > 0 required"));
        }
        Ok(Self { half_width })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    #[inline]
    fn reduced(&self, s: f64) -> Option<f64> {
        let u = (s + self.half_width) / (2.0 * self.half_width);
        if u <= 0.0 || u >= 1.0 {
            None
        } else {
            Some(u)
        }
    }

    #[inline]
    pub fn step(&self, s: f64) -> f64 {
        if s <= -self.half_width {
            return 0.0;
        }
        if s >= self.half_width {
            return 1.0;
        }
        let u = (s + self.half_width) / (2.0 * self.half_width);
        let u2 = u * u;
        u2 * u2 * (35.0 + u * (-84.0 + u * (70.0 - 20.0 * u)))
    }

    /// `d/ds step`, closed form.
    #[inline]
    pub fn delta(&self, s: f64) -> f64 {
        match self.reduced(s) {
            None => 0.0,
            Some(u) => {
                let q = u * (1.0 - u);
                140.0 * q * q * q / (2.0 * self.half_width)
            }
        }
    }

    /// `d^2/ds^2 step`.
    #[inline]
    pub fn delta_prime(&self, s: f64) -> f64 {
        match self.reduced(s) {
            None => 0.0,
            Some(u) => {
                let q = u * (1.0 - u);
                let h = 2.0 * self.half_width;
                420.0 * q * q * (1.0 - 2.0 * u) / (h * h)
            }
        }
    }

    /// `d^3/ds^3 step`.
    #[inline]
    pub fn delta_second(&self, s: f64) -> f64 {
        match self.reduced(s) {
            None => 0.0,
            Some(u) => {
                let q = u * (1.0 - u);
                let h = 2.0 * self.half_width;
                840.0 * q * (1.0 - 5.0 * u + 5.0 * u * u) / (h * h * h)
            }
        }
    }

    /// Derivative of order `order + 1` of the step (`order` in 0..=2).
    pub fn delta_order(&self, s: f64, order: u8) -> Result<f64> {
        match order {
            0 => Ok(self.delta(s)),
            1 => Ok(self.delta_prime(s)),
            2 => Ok(self.delta_second(s)),
            _ => Err(Error::invalid("order", "order must be 0, 1 or 2")),
        }
    }
}

pub fn smooth_step(s: f64, w: f64) -> Result<f64> {
    Ok(Kernel::new(w)?.step(s))
}

pub fn smooth_delta(s: f64, w: f64, order: u8) -> Result<f64> {
    Kernel::new(w)?.delta_order(s, order)
}

/// Straight sweep of the source tip along `y = Ys`, entering the box from the
/// right at `t0 = X / v` and leaving through `x = 0` at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub velocity: f64,
    pub entry_height: f64,
    pub half_width: f64,
    pub alpha: f64,
    pub domain: BoxDomain,
    pub consts: PhysicalConstants,
}

impl SweepConfig {
    pub fn new(
        velocity: f64,
        entry_height: f64,
        half_width: f64,
        alpha: f64,
        domain: BoxDomain,
        consts: PhysicalConstants,
    ) -> Result<Self> {
        let cfg = Self {
            velocity,
            entry_height,
            half_width,
            alpha,
            domain,
            consts,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.velocity < 0.0 && self.velocity.is_finite()) {
            return Err(Error::invalid("v", "v < 0 required"));
        }
        if !self.entry_height.is_finite() {
            return Err(Error::invalid("Ys", "finite entry height required"));
        }
        if !self.alpha.is_finite() {
            return Err(Error::invalid("alpha", "finite flux strength required"));
        }
        Kernel::new(self.half_width)?;
        let limit = 0.25 * self.domain.x_len.min(self.domain.y_len);
        if self.half_width > limit {
            return Err(Error::invalid(
                "w",
                format!("w <= min(X, Y)/4 = {limit} required (broadening must be narrow)"),
            ));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Kernel {
        Kernel {
            half_width: self.half_width,
        }
    }

    /// `Phi = alpha * hbar * c / e`.
    pub fn flux(&self) -> f64 {
        self.alpha * self.consts.hbar / self.consts.e_over_c()
    }

    /// Entry time `X / v` (negative).
    pub fn start_time(&self) -> f64 {
        self.domain.x_len / self.velocity
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            velocity: -0.01,
            entry_height: 0.5,
            half_width: 0.05,
            alpha: PI,
            domain: BoxDomain::default(),
            consts: PhysicalConstants::default(),
        }
    }
}

/// Instantaneous tip position and velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

/// `coef * Theta_w(x - x_edge) * Theta_w(y - y_edge)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepProduct {
    pub coef: f64,
    pub x_edge: f64,
    pub y_edge: f64,
}

/// A phase function written as a sum of step products.
///
/// The straight sweep needs a single quadrant term; the accumulated gauge
/// function of a closed loop needs a handful.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseTerms {
    terms: Vec<StepProduct>,
}

impl PhaseTerms {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(coef: f64, x_edge: f64, y_edge: f64) -> Self {
        let mut t = Self::new();
        t.push(coef, x_edge, y_edge);
        t
    }

    /// Adds a term, merging it with an existing term on the same edges.
    pub fn push(&mut self, coef: f64, x_edge: f64, y_edge: f64) {
        if coef == 0.0 {
            return;
        }
        if let Some(pos) = self
            .terms
            .iter()
            .position(|t| t.x_edge == x_edge && t.y_edge == y_edge)
        {
            let merged = self.terms[pos].coef + coef;
            if merged == 0.0 {
                self.terms.remove(pos);
            } else {
                self.terms[pos].coef = merged;
            }
        } else {
            self.terms.push(StepProduct {
                coef,
                x_edge,
                y_edge,
            });
        }
    }

    pub fn extend_scaled(&mut self, other: &PhaseTerms, scale: f64) {
        for t in &other.terms {
            self.push(scale * t.coef, t.x_edge, t.y_edge);
        }
    }

    pub fn terms(&self) -> &[StepProduct] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn value(&self, kernel: &Kernel, x: f64, y: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * kernel.step(x - t.x_edge) * kernel.step(y - t.y_edge))
            .sum()
    }

    pub fn gradient(&self, kernel: &Kernel, x: f64, y: f64) -> (f64, f64) {
        self.terms.iter().fold((0.0, 0.0), |(gx, gy), t| {
            let (sx, sy) = (x - t.x_edge, y - t.y_edge);
            (
                gx + t.coef * kernel.delta(sx) * kernel.step(sy),
                gy + t.coef * kernel.step(sx) * kernel.delta(sy),
            )
        })
    }

    /// Terms that are not identically zero on the box.
    pub fn restricted_to(&self, domain: &BoxDomain, kernel: &Kernel) -> PhaseTerms {
        let w = kernel.half_width();
        let terms = self
            .terms
            .iter()
            .copied()
            .filter(|t| t.x_edge - w < domain.x_len && t.y_edge - w < domain.y_len)
            .collect();
        PhaseTerms { terms }
    }
}

/// Kinematics of the field source: where the tip is, and the gauge function
/// it has imprinted so far.
pub trait SourceMotion {
    fn sweep(&self) -> &SweepConfig;

    /// Time at which the tip sits at `(X, Ys)` and the state is prepared.
    fn start_time(&self) -> f64 {
        self.sweep().start_time()
    }

    fn source_state(&self, t: f64) -> SourceState;

    /// Phase function `F(x, y, t)` (units of flux) as a sum of step products.
    fn phase_terms(&self, t: f64) -> PhaseTerms;

    /// Times in `(t_start, t_end)` where the tip velocity changes.
    fn kinks(&self, t_start: f64, t_end: f64) -> Vec<f64>;

    /// Repeat period of the motion, if it is periodic.
    fn period(&self) -> Option<f64> {
        None
    }

    /// Completed cycles at time `t` (zero for open trajectories).
    fn winding(&self, _t: f64) -> u64 {
        0
    }
}

impl SourceMotion for SweepConfig {
    fn sweep(&self) -> &SweepConfig {
        self
    }

    fn source_state(&self, t: f64) -> SourceState {
        let t = t.max(self.start_time());
        SourceState {
            x: self.velocity * t,
            y: self.entry_height,
            vx: self.velocity,
            vy: 0.0,
        }
    }

    fn phase_terms(&self, t: f64) -> PhaseTerms {
        let s = self.source_state(t);
        PhaseTerms::single(-self.flux(), s.x, s.y)
    }

    fn kinks(&self, _t_start: f64, _t_end: f64) -> Vec<f64> {
        Vec::new()
    }
}

/// `F = -Phi Theta_w(x - Xs) Theta_w(y - Ys)` for a tip at `source`.
pub fn phase_function(x: f64, y: f64, source: (f64, f64), cfg: &SweepConfig) -> f64 {
    let k = cfg.kernel();
    -cfg.flux() * k.step(x - source.0) * k.step(y - source.1)
}

/// `(A_x, A_y) = grad F`, in closed form.
pub fn vector_potential(x: f64, y: f64, source: (f64, f64), cfg: &SweepConfig) -> (f64, f64) {
    let k = cfg.kernel();
    let (sx, sy) = (x - source.0, y - source.1);
    let phi = cfg.flux();
    (-phi * k.delta(sx) * k.step(sy), -phi * k.step(sx) * k.delta(sy))
}

/// Analytic curl `dA_y/dx - dA_x/dy`; both mixed terms are `-Phi delta delta`.
pub fn vector_potential_curl(x: f64, y: f64, source: (f64, f64), cfg: &SweepConfig) -> f64 {
    let k = cfg.kernel();
    let (sx, sy) = (x - source.0, y - source.1);
    let phi = cfg.flux();
    let day_dx = -phi * k.delta(sx) * k.delta(sy);
    let dax_dy = -phi * k.delta(sx) * k.delta(sy);
    day_dx - dax_dy
}

/// `dF/dt` at `(x, y)`. Only horizontal tip motion sweeps the phase boundary.
pub fn phase_rate<M: SourceMotion + ?Sized>(x: f64, y: f64, t: f64, motion: &M) -> f64 {
    let s = motion.source_state(t);
    if s.vx == 0.0 {
        return 0.0;
    }
    let cfg = motion.sweep();
    let k = cfg.kernel();
    cfg.flux() * s.vx * k.delta(x - s.x) * k.step(y - s.y)
}

/// Coulomb-gauge scalar potential `phi_C = (1/c) dF/dt`.
pub fn coulomb_scalar_potential<M: SourceMotion + ?Sized>(x: f64, y: f64, t: f64, motion: &M) -> f64 {
    phase_rate(x, y, t, motion) / motion.sweep().consts.light_speed
}

/// `E = -grad(dF/dt) / c`.
pub fn electric_field<M: SourceMotion + ?Sized>(x: f64, y: f64, t: f64, motion: &M) -> (f64, f64) {
    let s = motion.source_state(t);
    let cfg = motion.sweep();
    if s.vx == 0.0 {
        return (0.0, 0.0);
    }
    let k = cfg.kernel();
    let pre = -cfg.flux() * s.vx / cfg.consts.light_speed;
    let (sx, sy) = (x - s.x, y - s.y);
    (
        pre * k.delta_prime(sx) * k.step(sy),
        pre * k.delta(sx) * k.delta(sy),
    )
}

/// Charge and current densities `(rho, J_x, J_y)` that generate the field of a
/// uniformly moving tip. There is no `J_z`: the sources are uniform along z.
pub fn source_densities<M: SourceMotion + ?Sized>(
    x: f64,
    y: f64,
    t: f64,
    motion: &M,
) -> (f64, f64, f64) {
    let s = motion.source_state(t);
    let cfg = motion.sweep();
    if s.vx == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let k = cfg.kernel();
    let c = cfg.consts.light_speed;
    let phi = cfg.flux();
    let (sx, sy) = (x - s.x, y - s.y);
    let rho_pre = -s.vx * phi / (4.0 * PI * c);
    let j_pre = -s.vx * s.vx * phi / (4.0 * PI * c);
    let rho = rho_pre * (k.delta_second(sx) * k.step(sy) + k.delta(sx) * k.delta_prime(sy));
    let jx = j_pre * k.delta_second(sx) * k.step(sy);
    let jy = j_pre * k.delta_prime(sx) * k.delta(sy);
    (rho, jx, jy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{composite_points, GaussLegendre};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit() -> (BoxDomain, PhysicalConstants) {
        (BoxDomain::default(), PhysicalConstants::default())
    }

    #[test]
    fn ground_energy_of_unit_box() {
        let (b, c) = unit();
        assert_abs_diff_eq!(eigenenergy(Mode::GROUND, &b, &c), PI * PI, epsilon = 1e-14);
        let wide = BoxDomain::new(2.0, 1.0).unwrap();
        assert_abs_diff_eq!(
            eigenenergy(Mode::new(2, 1).unwrap(), &wide, &c),
            PI * PI,
            epsilon = 1e-14
        );
        assert_eq!(
            eigenenergy(Mode::new(1, 2).unwrap(), &b, &c),
            eigenenergy(Mode::new(2, 1).unwrap(), &b, &c)
        );
    }

    #[test]
    fn eigenfunction_values() {
        let (b, _) = unit();
        assert_abs_diff_eq!(eigenfunction(Mode::GROUND, &b, 0.5, 0.5), 2.0, epsilon = 1e-14);
        assert_eq!(eigenfunction(Mode::new(3, 2).unwrap(), &b, -0.1, 0.5), 0.0);
        assert_abs_diff_eq!(
            eigenfunction(Mode::new(2, 1).unwrap(), &b, 0.5, 0.3),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(Mode::new(0, 1).is_err());
        assert!(BoxDomain::new(-1.0, 1.0).is_err());
        assert!(matches!(smooth_step(0.0, 0.0), Err(Error::InvalidParameter { name: "w", .. })));
        assert!(smooth_delta(0.0, -1.0, 0).is_err());
        assert!(smooth_delta(0.0, 0.1, 3).is_err());
        let cfg = SweepConfig {
            velocity: 0.01,
            ..SweepConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn modes_are_orthonormal() {
        let (b, _) = unit();
        let rule = GaussLegendre::new(20);
        let pts = composite_points(&rule, 0.0, 1.0, &[], 0.1);
        let n = 6;
        for mx in 1..=n {
            for nx in 1..=n {
                let sx: f64 = pts
                    .iter()
                    .map(|&(x, w)| w * wall_mode(mx, b.x_len, x) * wall_mode(nx, b.x_len, x))
                    .sum();
                let expected = if mx == nx { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(sx, expected, epsilon = 1e-12);
            }
        }
        // 2D normalization as a product of 1D integrals on a tensor grid.
        for (mx, my) in [(1, 1), (2, 3), (5, 4)] {
            let mode = Mode::new(mx, my).unwrap();
            let mut norm = 0.0;
            for &(x, wx) in &pts {
                for &(y, wy) in &pts {
                    norm += wx * wy * eigenfunction(mode, &b, x, y).powi(2);
                }
            }
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn kernel_saturates_and_is_centered() {
        let w = 0.05;
        assert_eq!(smooth_step(-w, w).unwrap(), 0.0);
        assert_eq!(smooth_step(w, w).unwrap(), 1.0);
        assert_abs_diff_eq!(smooth_step(0.0, w).unwrap(), 0.5, epsilon = 1e-15);
        for order in 0..3u8 {
            assert_eq!(smooth_delta(w, w, order).unwrap(), 0.0);
            assert_eq!(smooth_delta(-w, w, order).unwrap(), 0.0);
            // just inside the support the values are still negligible
            assert!(smooth_delta(w * (1.0 - 1e-9), w, order).unwrap().abs() < 1e-3);
        }
    }

    #[test]
    fn delta_integrates_to_one() {
        let w = 0.05;
        let k = Kernel::new(w).unwrap();
        let rule = GaussLegendre::new(8);
        let integral = rule.integrate(-w, w, |s| k.delta(s));
        assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn kernel_derivatives_match_centered_differences() {
        // Finite-difference oracle: error must fall by ~4 per halving of h.
        let k = Kernel::new(0.05).unwrap();
        let samples: Vec<f64> = (0..41).map(|i| -0.049 + 0.098 * i as f64 / 40.0).collect();
        let fd_err = |h: f64, f: &dyn Fn(f64) -> f64, df: &dyn Fn(f64) -> f64| -> f64 {
            samples
                .iter()
                .map(|&s| ((f(s + h) - f(s - h)) / (2.0 * h) - df(s)).abs())
                .fold(0.0, f64::max)
        };
        type Profile<'a> = &'a dyn Fn(f64) -> f64;
        let pairs: [(Profile, Profile); 3] = [
            (&|s| k.step(s), &|s| k.delta(s)),
            (&|s| k.delta(s), &|s| k.delta_prime(s)),
            (&|s| k.delta_prime(s), &|s| k.delta_second(s)),
        ];
        for (f, df) in pairs {
            let e1 = fd_err(1e-4, f, df);
            let e2 = fd_err(5e-5, f, df);
            assert!(e1 / e2 > 3.5 && e1 / e2 < 4.5, "ratio {}", e1 / e2);
        }
    }

    #[test]
    fn phase_function_limits() {
        let cfg = SweepConfig::default();
        let phi = cfg.flux();
        assert_abs_diff_eq!(phase_function(0.9, 0.9, (0.5, 0.5), &cfg), -phi, epsilon = 1e-15);
        assert_eq!(phase_function(0.9, 0.4, (0.5, 0.5), &cfg), 0.0);
        assert_abs_diff_eq!(phase_function(0.5, 0.9, (0.5, 0.5), &cfg), -phi / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn vector_potential_support_and_line_integral() {
        let cfg = SweepConfig::default();
        let src = (0.5, 0.3);
        assert_eq!(vector_potential(0.6, 0.9, src, &cfg).0, 0.0);
        let rule = GaussLegendre::new(12);
        let line = rule.integrate(0.5 - 0.05, 0.5 + 0.05, |x| vector_potential(x, 0.8, src, &cfg).0);
        assert_abs_diff_eq!(line, -cfg.flux(), epsilon = 1e-13);
    }

    #[test]
    fn coulomb_potential_sign_and_support() {
        let cfg = SweepConfig::default();
        let t = -50.0; // tip at x = 0.5
        assert_eq!(coulomb_scalar_potential(0.9, 0.8, t, &cfg), 0.0);
        assert!(coulomb_scalar_potential(0.5, 0.8, t, &cfg) < 0.0);
    }

    #[test]
    fn coulomb_potential_is_time_derivative_of_phase() {
        // Centered time difference of F/c converges at O(dt^2).
        let cfg = SweepConfig::default();
        let t = -50.3;
        let pts = [(0.497, 0.8), (0.52, 0.52), (0.48, 0.47), (0.5, 0.5)];
        let err = |dt: f64| {
            pts.iter()
                .map(|&(x, y)| {
                    let f = |tt: f64| phase_function(x, y, (cfg.velocity * tt, 0.5), &cfg);
                    let fd = (f(t + dt) - f(t - dt)) / (2.0 * dt);
                    (fd - coulomb_scalar_potential(x, y, t, &cfg)).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.02), err(0.01));
        assert!(e1 < 1e-3 && e1 / e2 > 3.5, "e1={e1} e2={e2}");
    }

    #[test]
    fn electric_field_is_minus_gradient_of_scalar_potential() {
        let cfg = SweepConfig::default();
        let t = -50.0;
        assert_eq!(electric_field(0.1, 0.1, t, &cfg), (0.0, 0.0));
        let pts = [(0.49, 0.53), (0.51, 0.48), (0.47, 0.8)];
        let err = |h: f64| {
            pts.iter()
                .map(|&(x, y)| {
                    let p = |xx: f64, yy: f64| coulomb_scalar_potential(xx, yy, t, &cfg);
                    let ex = -(p(x + h, y) - p(x - h, y)) / (2.0 * h);
                    let ey = -(p(x, y + h) - p(x, y - h)) / (2.0 * h);
                    let (ax, ay) = electric_field(x, y, t, &cfg);
                    (ex - ax).abs().max((ey - ay).abs())
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(1e-3), err(5e-4));
        assert!(e1 / e2 > 3.5 && e1 / e2 < 4.5, "ratio {}", e1 / e2);
        // linear in v
        let mut fast = cfg;
        fast.velocity *= 2.0;
        let t_fast = t / 2.0; // same tip position
        let (a, b) = (electric_field(0.49, 0.53, t, &cfg), electric_field(0.49, 0.53, t_fast, &fast));
        assert_abs_diff_eq!(b.0, 2.0 * a.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.1, 2.0 * a.1, epsilon = 1e-12);
    }

    #[test]
    fn sources_vanish_away_from_the_band() {
        let cfg = SweepConfig::default();
        assert_eq!(source_densities(0.1, 0.9, -50.0, &cfg), (0.0, 0.0, 0.0));
    }

    #[test]
    fn analytic_curl_is_exactly_zero() {
        let cfg = SweepConfig::default();
        for i in 0..50 {
            for j in 0..50 {
                let (x, y) = (0.4 + 0.004 * i as f64, 0.4 + 0.004 * j as f64);
                assert_eq!(vector_potential_curl(x, y, (0.5, 0.5), &cfg), 0.0);
            }
        }
    }

    #[test]
    fn phase_terms_merge_and_restrict() {
        let mut t = PhaseTerms::single(-1.0, 0.3, 0.5);
        t.push(1.0, 0.3, 0.5);
        assert!(t.is_empty());
        t.push(-2.0, 5.0, 0.5);
        t.push(-1.0, -5.0, 0.5);
        let k = Kernel::new(0.05).unwrap();
        let r = t.restricted_to(&BoxDomain::default(), &k);
        assert_eq!(r.terms().len(), 1);
        assert_eq!(r.terms()[0].x_edge, -5.0);
    }

    proptest! {
        #[test]
        fn step_is_monotone_and_bounded(a in -0.2f64..0.2, b in -0.2f64..0.2) {
            let k = Kernel::new(0.05).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(k.step(lo) <= k.step(hi));
            prop_assert!((0.0..=1.0).contains(&k.step(a)));
            prop_assert!(k.delta(a) >= 0.0);
        }

        #[test]
        fn step_is_odd_about_center(s in -0.06f64..0.06) {
            let k = Kernel::new(0.05).unwrap();
            prop_assert!((k.step(s) + k.step(-s) - 1.0).abs() < 1e-14);
        }

        #[test]
        fn gradient_identity_for_vector_potential(
            x in 0.0f64..1.0, y in 0.0f64..1.0, xs in 0.2f64..0.8, ys in 0.2f64..0.8
        ) {
            let cfg = SweepConfig::default();
            let h = 1e-5;
            let f = |xx: f64, yy: f64| phase_function(xx, yy, (xs, ys), &cfg);
            let gx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
            let gy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
            let (ax, ay) = vector_potential(x, y, (xs, ys), &cfg);
            // |f'''| <= Phi * max|delta''| ~ 3e4; h^2/6 * that ~ 5e-6
            prop_assert!((gx - ax).abs() < 1e-5);
            prop_assert!((gy - ay).abs() < 1e-5);
        }

        #[test]
        fn numerical_curl_is_within_discretization_error(
            x in 0.4f64..0.6, y in 0.4f64..0.6
        ) {
            let cfg = SweepConfig::default();
            let h = 1e-5;
            let a = |xx: f64, yy: f64| vector_potential(xx, yy, (0.5, 0.5), &cfg);
            let curl = (a(x + h, y).1 - a(x - h, y).1) / (2.0 * h)
                - (a(x, y + h).0 - a(x, y - h).0) / (2.0 * h);
            prop_assert!(curl.abs() < 1e-3);
        }
    }
}
