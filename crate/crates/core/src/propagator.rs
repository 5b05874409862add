//! Time-dependent Schrodinger evolution in the truncated box eigenbasis.
//!
//! The Hamiltonian is `H0 + W(t)` with `H0` diagonal. In the Coulomb gauge `W`
//! is the scalar coupling `(e/c) dF/dt`; in the vector gauge it collects the
//! minimal-coupling terms of `(p - eA/c)^2 / 2m`. Each step applies the exact
//! exponential of the Hamiltonian at the step midpoint.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::basis::{Factor, TensorGrid, WallBasis};
use crate::error::{Error, Result};
use crate::model::{eigenenergy, BoxDomain, Mode, PhaseTerms, SourceMotion};

pub type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gauge {
    /// `A = 0`, scalar potential `(1/c) dF/dt`.
    Coulomb,
    /// `phi = 0`, `A = grad F`.
    Vector,
}

impl std::str::FromStr for Gauge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coulomb" => Ok(Gauge::Coulomb),
            "vector" => Ok(Gauge::Vector),
            other => Err(Error::invalid("gauge", format!("expected vector|coulomb, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for Gauge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Gauge::Coulomb => "coulomb",
            Gauge::Vector => "vector",
        })
    }
}

/// Number of basis modes kept in each direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Truncation {
    pub mx: usize,
    pub my: usize,
}

impl Truncation {
    pub fn new(mx: usize, my: usize) -> Result<Self> {
        if mx < 2 {
            return Err(Error::invalid("Mx", "Mx >= 2 required"));
        }
        if my < 2 {
            return Err(Error::invalid("My", "My >= 2 required"));
        }
        Ok(Self { mx, my })
    }

    pub fn dim(&self) -> usize {
        self.mx * self.my
    }

    pub fn index(&self, mode: Mode) -> Option<usize> {
        (mode.nx <= self.mx && mode.ny <= self.my).then(|| (mode.nx - 1) * self.my + (mode.ny - 1))
    }

    pub fn mode(&self, index: usize) -> Mode {
        Mode {
            nx: index / self.my + 1,
            ny: index % self.my + 1,
        }
    }

    pub fn modes(&self) -> impl Iterator<Item = Mode> + '_ {
        (0..self.dim()).map(|i| self.mode(i))
    }
}

impl Default for Truncation {
    fn default() -> Self {
        Self { mx: 10, my: 10 }
    }
}

/// State vector in the mode basis at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCoefficients {
    pub amplitudes: DVector<C64>,
    pub t: f64,
    pub truncation: Truncation,
}

impl ModeCoefficients {
    pub fn single(mode: Mode, t: f64, truncation: Truncation) -> Result<Self> {
        let idx = truncation
            .index(mode)
            .ok_or_else(|| Error::invalid("mode", format!("mode {mode} lies outside the truncation")))?;
        let mut amplitudes = DVector::zeros(truncation.dim());
        amplitudes[idx] = C64::new(1.0, 0.0);
        Ok(Self {
            amplitudes,
            t,
            truncation,
        })
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// Coefficients as an `Mx x My` matrix.
    pub fn as_grid(&self) -> DMatrix<C64> {
        let tr = self.truncation;
        DMatrix::from_fn(tr.mx, tr.my, |i, j| self.amplitudes[i * tr.my + j])
    }
}

/// Interaction part `W = real + i * imag` of the Hamiltonian at time `t`.
///
/// `real` is symmetric and `imag` antisymmetric, so `W` is Hermitian by
/// construction. `imag` is identically zero in the Coulomb gauge.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    pub t: f64,
    pub gauge: Gauge,
    pub real: DMatrix<f64>,
    pub imag: DMatrix<f64>,
}

impl CouplingMatrix {
    fn zero(t: f64, gauge: Gauge, dim: usize) -> Self {
        Self {
            t,
            gauge,
            real: DMatrix::zeros(dim, dim),
            imag: DMatrix::zeros(dim, dim),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.real.iter().all(|&v| v == 0.0) && self.imag.iter().all(|&v| v == 0.0)
    }

    pub fn diagonal(&self, index: usize) -> f64 {
        self.real[(index, index)]
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        C64::new(self.real[(i, j)], self.imag[(i, j)])
    }

    /// Largest `|W_mn|` with `m != n`.
    pub fn max_offdiag(&self) -> f64 {
        let n = self.real.nrows();
        let mut best = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    best = best.max(self.entry(i, j).norm());
                }
            }
        }
        best
    }

    /// `max |W - W^dagger|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let r = (&self.real - self.real.transpose()).amax();
        let i = (&self.imag + self.imag.transpose()).amax();
        r.max(i)
    }

    pub fn to_complex(&self) -> DMatrix<C64> {
        self.real.zip_map(&self.imag, C64::new)
    }
}

/// A stretch of the schedule between kinematic breakpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    /// Whether the Hamiltonian changes inside the segment.
    pub active: bool,
}

/// Time-step control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPolicy {
    /// Largest step inside an active segment.
    pub dt_max: f64,
}

impl StepPolicy {
    /// Resolves the transit of a kernel across a point with 400 steps.
    pub fn for_sweep(half_width: f64, speed: f64) -> Self {
        Self {
            dt_max: 2.0 * half_width / speed / 400.0,
        }
    }

    pub fn fixed(dt_max: f64) -> Result<Self> {
        if !(dt_max > 0.0 && dt_max.is_finite()) {
            return Err(Error::invalid("dt", "dt > 0 required"));
        }
        Ok(Self { dt_max })
    }
}

/// What a propagation run reports after every step.
pub struct StepEvent<'a> {
    pub t_mid: f64,
    pub dt: f64,
    /// Coupling used for the step (at `t_mid`).
    pub coupling: &'a CouplingMatrix,
    pub state: &'a ModeCoefficients,
}

pub trait Observer {
    fn on_step(&mut self, event: &StepEvent<'_>);
}

impl Observer for () {
    fn on_step(&mut self, _event: &StepEvent<'_>) {}
}

impl<F: FnMut(&StepEvent<'_>)> Observer for F {
    fn on_step(&mut self, event: &StepEvent<'_>) {
        self(event)
    }
}

/// Samples of a propagation run.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub samples: Vec<ModeCoefficients>,
}

impl Trajectory {
    pub fn last(&self) -> &ModeCoefficients {
        self.samples.last().expect("a trajectory always holds its initial state")
    }
}

/// TDSE solver for a given source motion, gauge and truncation.
pub struct Propagator<'a> {
    motion: &'a dyn SourceMotion,
    gauge: Gauge,
    truncation: Truncation,
    x_basis: WallBasis,
    y_basis: WallBasis,
    energies: DVector<f64>,
}

impl<'a> Propagator<'a> {
    pub fn new(motion: &'a dyn SourceMotion, gauge: Gauge, truncation: Truncation) -> Result<Self> {
        let cfg = motion.sweep();
        cfg.validate()?;
        Truncation::new(truncation.mx, truncation.my)?;
        let energies = DVector::from_iterator(
            truncation.dim(),
            truncation.modes().map(|m| eigenenergy(m, &cfg.domain, &cfg.consts)),
        );
        Ok(Self {
            motion,
            gauge,
            truncation,
            x_basis: WallBasis::new(cfg.domain.x_len, truncation.mx),
            y_basis: WallBasis::new(cfg.domain.y_len, truncation.my),
            energies,
        })
    }

    pub fn motion(&self) -> &dyn SourceMotion {
        self.motion
    }

    pub fn gauge(&self) -> Gauge {
        self.gauge
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn energies(&self) -> &DVector<f64> {
        &self.energies
    }

    fn domain(&self) -> &BoxDomain {
        &self.motion.sweep().domain
    }

    /// Interaction matrix at time `t`.
    pub fn coupling_matrix(&self, t: f64) -> CouplingMatrix {
        match self.gauge {
            Gauge::Coulomb => self.coulomb_coupling(t),
            Gauge::Vector => self.vector_coupling(t),
        }
    }

    fn coulomb_coupling(&self, t: f64) -> CouplingMatrix {
        let cfg = self.motion.sweep();
        let dim = self.truncation.dim();
        let s = self.motion.source_state(t);
        let kernel = cfg.kernel();
        let w = kernel.half_width();
        let d = &cfg.domain;
        if s.vx == 0.0 || s.x - w >= d.x_len || s.x + w <= 0.0 || s.y - w >= d.y_len {
            return CouplingMatrix::zero(t, Gauge::Coulomb, dim);
        }
        // (e/c) Phi = alpha hbar
        let pre = cfg.alpha * cfg.consts.hbar * s.vx;
        let ix = self.x_basis.weighted(&kernel, &[Factor::Delta(s.x)], false);
        let iy = self.y_basis.weighted(&kernel, &[Factor::Step(s.y)], false);
        let real = symmetrize(ix.kronecker(&iy) * pre);
        CouplingMatrix {
            t,
            gauge: Gauge::Coulomb,
            real,
            imag: DMatrix::zeros(dim, dim),
        }
    }

    /// Dimensionless phase `theta = (e / hbar c) F` as step products, reduced to
    /// the terms that are not identically zero or constant on the box.
    fn box_phase(&self, t: f64) -> Vec<(f64, f64, f64)> {
        let cfg = self.motion.sweep();
        let kernel = cfg.kernel();
        let scale = cfg.consts.e_over_c() / cfg.consts.hbar;
        self.motion
            .phase_terms(t)
            .restricted_to(&cfg.domain, &kernel)
            .terms()
            .iter()
            .map(|p| (scale * p.coef, p.x_edge, p.y_edge))
            .collect()
    }

    fn vector_coupling(&self, t: f64) -> CouplingMatrix {
        let cfg = self.motion.sweep();
        let kernel = cfg.kernel();
        let dim = self.truncation.dim();
        let terms = self.box_phase(t);
        let (bx, by) = (&self.x_basis, &self.y_basis);
        let mut k = DMatrix::<f64>::zeros(dim, dim);
        let mut a2 = DMatrix::<f64>::zeros(dim, dim);
        for &(c, a, b) in &terms {
            // theta_x d/dx + theta_y d/dy with theta_x = c delta(x-a) Theta(y-b), ...
            let dx = bx.weighted(&kernel, &[Factor::Delta(a)], true);
            if dx.amax() > 0.0 {
                let gy = by.weighted(&kernel, &[Factor::Step(b)], false);
                k += dx.kronecker(&gy) * c;
            }
            let dy = by.weighted(&kernel, &[Factor::Delta(b)], true);
            if dy.amax() > 0.0 {
                let gx = bx.weighted(&kernel, &[Factor::Step(a)], false);
                k += gx.kronecker(&dy) * c;
            }
        }
        for (i, &(ci, ai, bi)) in terms.iter().enumerate() {
            for &(cj, aj, bj) in &terms[i..] {
                let mult = if (ai, bi) == (aj, bj) { 1.0 } else { 2.0 };
                let c = ci * cj * mult;
                let ddx = bx.weighted(&kernel, &[Factor::Delta(ai), Factor::Delta(aj)], false);
                if ddx.amax() > 0.0 {
                    let ssy = by.weighted(&kernel, &[Factor::Step(bi), Factor::Step(bj)], false);
                    a2 += ddx.kronecker(&ssy) * c;
                }
                let ddy = by.weighted(&kernel, &[Factor::Delta(bi), Factor::Delta(bj)], false);
                if ddy.amax() > 0.0 {
                    let ssx = bx.weighted(&kernel, &[Factor::Step(ai), Factor::Step(aj)], false);
                    a2 += ssx.kronecker(&ddy) * c;
                }
            }
        }
        let unit = cfg.consts.hbar * cfg.consts.hbar / (2.0 * cfg.consts.mass);
        // -(e/2mc)(p.A + A.p) = i (hbar^2/2m)(K - K^T) in terms of theta
        let imag = (&k - k.transpose()) * unit;
        let real = symmetrize(a2 * unit);
        CouplingMatrix {
            t,
            gauge: Gauge::Vector,
            real,
            imag,
        }
    }

    /// Prepared state at `t0`: the bare eigenstate in the Coulomb gauge, and
    /// its image `e^{i theta(t0)} chi eta` under the gauge map otherwise.
    pub fn initial_state(&self, mode: Mode) -> Result<ModeCoefficients> {
        let t0 = self.motion.start_time();
        let tr = self.truncation;
        match self.gauge {
            Gauge::Coulomb => ModeCoefficients::single(mode, t0, tr),
            Gauge::Vector => {
                tr.index(mode)
                    .ok_or_else(|| Error::invalid("mode", format!("mode {mode} lies outside the truncation")))?;
                let cfg = self.motion.sweep();
                let kernel = cfg.kernel();
                let phase = self.motion.phase_terms(t0);
                let grid = TensorGrid::for_phases(&cfg.domain, &kernel, &[&phase]);
                let scale = cfg.consts.e_over_c() / cfg.consts.hbar;
                let d = cfg.domain;
                let c = grid.project(&d, tr.mx, tr.my, |x, y| {
                    let th = scale * phase.value(&kernel, x, y);
                    C64::from_polar(crate::model::eigenfunction(mode, &d, x, y), th)
                });
                let amplitudes = DVector::from_iterator(tr.dim(), c.transpose().iter().copied());
                Ok(ModeCoefficients {
                    amplitudes,
                    t: t0,
                    truncation: tr,
                })
            }
        }
    }

    /// Splits `[t_start, t_end]` at kinks and at the times the tip enters or
    /// leaves the band where it couples to the box.
    pub fn schedule(&self, t_start: f64, t_end: f64) -> Result<Vec<Segment>> {
        schedule(self.motion, t_start, t_end)
    }

    fn hamiltonian_eigen(&self, coupling: &CouplingMatrix) -> Eigen {
        let dim = self.truncation.dim();
        if coupling.imag.iter().all(|&v| v == 0.0) {
            let mut h = coupling.real.clone();
            for i in 0..dim {
                h[(i, i)] += self.energies[i];
            }
            let e = SymmetricEigen::new(h);
            Eigen::Real(e.eigenvectors, e.eigenvalues)
        } else {
            let mut h = coupling.to_complex();
            for i in 0..dim {
                h[(i, i)] += C64::new(self.energies[i], 0.0);
            }
            let e = SymmetricEigen::new(h);
            Eigen::Complex(e.eigenvectors, e.eigenvalues)
        }
    }

    /// One exponential-midpoint step of length `dt` from `state.t`.
    ///
    /// The step must not straddle a kink of the source motion.
    pub fn step(&self, state: &ModeCoefficients, dt: f64) -> Result<ModeCoefficients> {
        Ok(self.step_with_coupling(state, dt)?.0)
    }

    fn step_with_coupling(&self, state: &ModeCoefficients, dt: f64) -> Result<(ModeCoefficients, CouplingMatrix)> {
        if !(dt > 0.0) {
            return Err(Error::invalid("dt", "dt > 0 required"));
        }
        if state.truncation != self.truncation {
            return Err(Error::Contract("state truncation differs from the propagator's".into()));
        }
        let (a, b) = (state.t, state.t + dt);
        let tol = 1e-12 * b.abs().max(1.0);
        if let Some(k) = self.motion.kinks(a, b).into_iter().find(|&k| k > a + tol && k < b - tol) {
            return Err(Error::Contract(format!(
                "step [{a}, {b}] straddles the breakpoint at t = {k}; split the step"
            )));
        }
        let coupling = self.coupling_matrix(a + 0.5 * dt);
        let next = self.apply_exponential(state, &coupling, dt);
        Ok((next, coupling))
    }

    fn apply_exponential(&self, state: &ModeCoefficients, coupling: &CouplingMatrix, dt: f64) -> ModeCoefficients {
        let hbar = self.motion.sweep().consts.hbar;
        let amplitudes = if coupling.is_zero() {
            let mut c = state.amplitudes.clone();
            for (i, v) in c.iter_mut().enumerate() {
                *v *= C64::from_polar(1.0, -self.energies[i] * dt / hbar);
            }
            c
        } else {
            self.hamiltonian_eigen(coupling).evolve(&state.amplitudes, dt / hbar)
        };
        ModeCoefficients {
            amplitudes,
            t: state.t + dt,
            truncation: state.truncation,
        }
    }

    /// Evolves `initial` to `t_end`, sampling every `sample_interval` time
    /// units (at step resolution) plus the first and last state.
    pub fn propagate(
        &self,
        initial: &ModeCoefficients,
        t_end: f64,
        policy: StepPolicy,
        sample_interval: Option<f64>,
        observer: &mut dyn Observer,
    ) -> Result<Trajectory> {
        if initial.truncation != self.truncation {
            return Err(Error::Contract("state truncation differs from the propagator's".into()));
        }
        let segments = self.schedule(initial.t, t_end)?;
        let hbar = self.motion.sweep().consts.hbar;
        let mut out = Trajectory {
            samples: vec![initial.clone()],
        };
        let mut next_sample = sample_interval.map(|s| initial.t + s);
        let mut state = initial.clone();
        for seg in segments {
            if seg.active {
                let n = ((seg.end - seg.start) / policy.dt_max).ceil().max(1.0) as usize;
                let dt = (seg.end - seg.start) / n as f64;
                for i in 0..n {
                    let t_a = seg.start + i as f64 * dt;
                    let t_b = if i + 1 == n { seg.end } else { t_a + dt };
                    state.t = t_a;
                    let coupling = self.coupling_matrix(0.5 * (t_a + t_b));
                    state = self.apply_exponential(&state, &coupling, t_b - t_a);
                    state.t = t_b;
                    observer.on_step(&StepEvent {
                        t_mid: 0.5 * (t_a + t_b),
                        dt: t_b - t_a,
                        coupling: &coupling,
                        state: &state,
                    });
                    record(&mut out, &state, &mut next_sample, sample_interval);
                }
            } else {
                // Hamiltonian is constant: evolve exactly, stopping at sample times.
                let coupling = self.coupling_matrix(0.5 * (seg.start + seg.end));
                let eigen = (!coupling.is_zero()).then(|| self.hamiltonian_eigen(&coupling));
                let base = state.clone();
                let mut stops = Vec::new();
                if let (Some(mut ts), Some(iv)) = (next_sample, sample_interval) {
                    while ts < seg.end {
                        stops.push(ts);
                        ts += iv;
                    }
                }
                stops.push(seg.end);
                let mut prev = seg.start;
                for stop in stops {
                    let span = stop - seg.start;
                    let amplitudes = match &eigen {
                        None => DVector::from_iterator(
                            base.amplitudes.len(),
                            base.amplitudes
                                .iter()
                                .enumerate()
                                .map(|(i, &v)| v * C64::from_polar(1.0, -self.energies[i] * span / hbar)),
                        ),
                        Some(e) => e.evolve(&base.amplitudes, span / hbar),
                    };
                    state = ModeCoefficients {
                        amplitudes,
                        t: stop,
                        truncation: base.truncation,
                    };
                    observer.on_step(&StepEvent {
                        t_mid: 0.5 * (prev + stop),
                        dt: stop - prev,
                        coupling: &coupling,
                        state: &state,
                    });
                    record(&mut out, &state, &mut next_sample, sample_interval);
                    prev = stop;
                }
            }
        }
        if out.last().t != state.t {
            out.samples.push(state);
        }
        Ok(out)
    }

    /// Evaluates the mode sum on a uniform `nx x ny` grid including the walls.
    pub fn render_to_grid(&self, state: &ModeCoefficients, nx: usize, ny: usize) -> Result<RenderedField> {
        render_to_grid(state, self.domain(), nx, ny)
    }

    /// `theta = (e / hbar c) F` on the box at time `t`.
    pub fn phase_terms(&self, t: f64) -> PhaseTerms {
        self.motion.phase_terms(t)
    }
}

/// Splits `[t_start, t_end]` at the kinks of `motion` and at the times the
/// tip enters or leaves the horizontal band `(-w, X + w)` in which it couples
/// to the box. Outside active segments the Hamiltonian is constant.
pub fn schedule(motion: &dyn SourceMotion, t_start: f64, t_end: f64) -> Result<Vec<Segment>> {
    let t0 = motion.start_time();
    if t_start < t0 - 1e-9 * t0.abs().max(1.0) {
        return Err(Error::invalid("t_start", format!("t_start >= t0 = {t0} required")));
    }
    if !(t_end >= t_start) {
        return Err(Error::invalid("t_end", "t_end >= t_start required"));
    }
    let cfg = motion.sweep();
    let w = cfg.half_width;
    let d = cfg.domain;
    let mut cuts = vec![t_start];
    cuts.extend(motion.kinks(t_start, t_end));
    cuts.push(t_end);
    let mut out: Vec<Segment> = Vec::new();
    let mut push = |start: f64, end: f64, active: bool| {
        if end > start {
            out.push(Segment { start, end, active });
        }
    };
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let tm = 0.5 * (a + b);
        let s = motion.source_state(tm);
        if s.vx == 0.0 || s.y - w >= d.y_len {
            push(a, b, false);
            continue;
        }
        let enter = tm + (if s.vx < 0.0 { d.x_len + w } else { -w } - s.x) / s.vx;
        let leave = tm + (if s.vx < 0.0 { -w } else { d.x_len + w } - s.x) / s.vx;
        let (lo, hi) = (enter.clamp(a, b), leave.clamp(a, b));
        push(a, lo, false);
        push(lo, hi, true);
        push(hi, b, false);
    }
    Ok(out)
}

fn record(out: &mut Trajectory, state: &ModeCoefficients, next: &mut Option<f64>, interval: Option<f64>) {
    if let (Some(ts), Some(iv)) = (*next, interval) {
        if state.t >= ts - 1e-9 * iv {
            out.samples.push(state.clone());
            let mut n = ts;
            while n <= state.t + 1e-9 * iv {
                n += iv;
            }
            *next = Some(n);
        }
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

enum Eigen {
    Real(DMatrix<f64>, DVector<f64>),
    Complex(DMatrix<C64>, DVector<f64>),
}

impl Eigen {
    /// `V e^{-i lambda tau} V^dagger c`, with `tau = dt / hbar`.
    fn evolve(&self, c: &DVector<C64>, tau: f64) -> DVector<C64> {
        match self {
            Eigen::Real(v, lambda) => {
                let re = c.map(|z| z.re);
                let im = c.map(|z| z.im);
                let pr = v.tr_mul(&re);
                let pi = v.tr_mul(&im);
                let n = lambda.len();
                let mut qr = DVector::zeros(n);
                let mut qi = DVector::zeros(n);
                for k in 0..n {
                    let (s, co) = (-lambda[k] * tau).sin_cos();
                    qr[k] = co * pr[k] - s * pi[k];
                    qi[k] = s * pr[k] + co * pi[k];
                }
                let out_r = v * qr;
                let out_i = v * qi;
                out_r.zip_map(&out_i, C64::new)
            }
            Eigen::Complex(v, lambda) => {
                let mut p = v.ad_mul(c);
                for k in 0..lambda.len() {
                    p[k] *= C64::from_polar(1.0, -lambda[k] * tau);
                }
                v * p
            }
        }
    }
}

/// Mode sum sampled on a uniform grid.
#[derive(Debug, Clone)]
pub struct RenderedField {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `values[(i, j)] = psi(xs[i], ys[j])`.
    pub values: DMatrix<C64>,
    pub warning: Option<String>,
}

/// Evaluates `sum c_mn chi_m(x) eta_n(y)` on a uniform `nx x ny` grid.
pub fn render_to_grid(state: &ModeCoefficients, domain: &BoxDomain, nx: usize, ny: usize) -> Result<RenderedField> {
    if nx < 2 || ny < 2 {
        return Err(Error::invalid("grid", "at least 2 points per direction required"));
    }
    let tr = state.truncation;
    let xs: Vec<f64> = (0..nx).map(|i| domain.x_len * i as f64 / (nx - 1) as f64).collect();
    let ys: Vec<f64> = (0..ny).map(|j| domain.y_len * j as f64 / (ny - 1) as f64).collect();
    let values = render_points(state, domain, &xs, &ys);
    let warning = (nx - 1 < tr.mx || ny - 1 < tr.my).then(|| {
        format!(
            "grid {nx}x{ny} samples fewer than 2 points per shortest wavelength of a {}x{} basis",
            tr.mx, tr.my
        )
    });
    Ok(RenderedField {
        xs,
        ys,
        values,
        warning,
    })
}

/// Evaluates the mode sum on the tensor product of arbitrary abscissae.
pub fn render_points(state: &ModeCoefficients, domain: &BoxDomain, xs: &[f64], ys: &[f64]) -> DMatrix<C64> {
    let tr = state.truncation;
    let px: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 1.0)).collect();
    let py: Vec<(f64, f64)> = ys.iter().map(|&y| (y, 1.0)).collect();
    let bx = TensorGrid::mode_table(&px, domain.x_len, tr.mx).map(|v| C64::new(v, 0.0));
    let by = TensorGrid::mode_table(&py, domain.y_len, tr.my).map(|v| C64::new(v, 0.0));
    bx * state.as_grid() * by.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adiabatic::AdiabaticState;
    use crate::model::SweepConfig;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn small() -> Truncation {
        Truncation::new(4, 4).unwrap()
    }

    #[test]
    fn truncation_indexing_round_trips() {
        let tr = Truncation::new(3, 5).unwrap();
        assert_eq!(tr.index(Mode { nx: 2, ny: 4 }), Some(8));
        for i in 0..tr.dim() {
            assert_eq!(tr.index(tr.mode(i)), Some(i));
        }
        assert!(Truncation::new(1, 4).is_err());
        assert_eq!(tr.index(Mode { nx: 4, ny: 1 }), None);
    }

    #[test]
    fn coupling_vanishes_outside_the_margin() {
        let cfg = SweepConfig::default();
        let p = Propagator::new(&cfg, Gauge::Coulomb, small()).unwrap();
        // tip at x = -w exactly and beyond
        assert!(p.coupling_matrix(5.0).is_zero());
        assert!(p.coupling_matrix(30.0).is_zero());
        assert!(!p.coupling_matrix(-50.0).is_zero());
    }

    #[test]
    fn couplings_are_hermitian() {
        let cfg = SweepConfig::default();
        for gauge in [Gauge::Coulomb, Gauge::Vector] {
            let p = Propagator::new(&cfg, gauge, small()).unwrap();
            let w = p.coupling_matrix(-50.3);
            assert_eq!(w.hermiticity_defect(), 0.0);
            if gauge == Gauge::Coulomb {
                assert!(w.imag.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn coulomb_diagonal_matches_closed_form_integrand() {
        // W_nn = alpha hbar v <chi^2 delta> <eta^2 Theta>; at a tip position
        // far from the walls the x-factor tends to chi(Xs)^2 as w -> 0.
        let cfg = SweepConfig {
            half_width: 1e-3,
            ..SweepConfig::default()
        };
        let tr = small();
        let p = Propagator::new(&cfg, Gauge::Coulomb, tr).unwrap();
        let t = -30.0; // tip at 0.3
        let w = p.coupling_matrix(t);
        let chi2 = 2.0 * (std::f64::consts::PI * 0.3).sin().powi(2);
        let expected = cfg.alpha * cfg.velocity * chi2 * 0.5;
        assert_abs_diff_eq!(w.diagonal(0), expected, epsilon = 1e-6);
    }

    #[test]
    fn vector_coupling_matches_brute_force_quadrature() {
        // i (hbar^2/2m) int (phi_m g.grad phi_n - phi_n g.grad phi_m)
        //   + (hbar^2/2m) int |g|^2 phi_m phi_n, with g = grad theta taken
        // by central differences on a uniform Gauss grid.
        use crate::model::{eigenfunction, wall_mode, wall_mode_derivative};
        use crate::quadrature::GaussLegendre;
        let cfg = SweepConfig::default();
        let tr = Truncation::new(3, 3).unwrap();
        let t = -50.3;
        let p = Propagator::new(&cfg, Gauge::Vector, tr).unwrap();
        let w = p.coupling_matrix(t);
        let terms = cfg.phase_terms(t);
        let kernel = cfg.kernel();
        let scale = cfg.consts.e_over_c() / cfg.consts.hbar;
        let h = 1e-6;
        let rule = GaussLegendre::new(4);
        let panels = 400;
        let nodes: Vec<(f64, f64)> = (0..panels)
            .flat_map(|k| {
                let a = k as f64 / panels as f64;
                rule.mapped(a, a + 1.0 / panels as f64).collect::<Vec<_>>()
            })
            .collect();
        let d = cfg.domain;
        let pref = cfg.consts.hbar * cfg.consts.hbar / (2.0 * cfg.consts.mass);
        for (i, j) in [(0, 0), (0, 1), (1, 3), (2, 7), (4, 8)] {
            let (mi, mj) = (tr.mode(i), tr.mode(j));
            let (mut cross, mut sq) = (0.0, 0.0);
            for &(x, wx) in &nodes {
                for &(y, wy) in &nodes {
                    let th = |x: f64, y: f64| scale * terms.value(&kernel, x, y);
                    let gx = (th(x + h, y) - th(x - h, y)) / (2.0 * h);
                    let gy = (th(x, y + h) - th(x, y - h)) / (2.0 * h);
                    if gx == 0.0 && gy == 0.0 {
                        continue;
                    }
                    let grad = |m: Mode| {
                        (
                            wall_mode_derivative(m.nx, d.x_len, x) * wall_mode(m.ny, d.y_len, y),
                            wall_mode(m.nx, d.x_len, x) * wall_mode_derivative(m.ny, d.y_len, y),
                        )
                    };
                    let (fi, fj) = (eigenfunction(mi, &d, x, y), eigenfunction(mj, &d, x, y));
                    let (gi, gj) = (grad(mi), grad(mj));
                    let wt = wx * wy;
                    cross += wt * (fi * (gx * gj.0 + gy * gj.1) - fj * (gx * gi.0 + gy * gi.1));
                    sq += wt * (gx * gx + gy * gy) * fi * fj;
                }
            }
            let expected = C64::new(pref * sq, pref * cross);
            let got = w.entry(i, j);
            assert!((got - expected).norm() < 1e-5, "({i},{j}): {got} vs {expected}");
        }
    }

    #[test]
    fn free_evolution_is_diagonal_phase() {
        let cfg = SweepConfig {
            alpha: 0.0,
            ..SweepConfig::default()
        };
        let tr = small();
        let p = Propagator::new(&cfg, Gauge::Coulomb, tr).unwrap();
        let mode = Mode { nx: 2, ny: 1 };
        let init = p.initial_state(mode).unwrap();
        let end = p
            .propagate(&init, 0.0, StepPolicy::fixed(0.5).unwrap(), None, &mut ())
            .unwrap();
        let fin = end.last();
        let e = p.energies()[tr.index(mode).unwrap()];
        let expected = C64::from_polar(1.0, -e * 100.0);
        let got = fin.amplitudes[tr.index(mode).unwrap()];
        assert_abs_diff_eq!((got - expected).norm(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fin.norm(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn step_is_unitary() {
        let cfg = SweepConfig::default();
        for gauge in [Gauge::Coulomb, Gauge::Vector] {
            let p = Propagator::new(&cfg, gauge, small()).unwrap();
            let mut s = p.initial_state(Mode::GROUND).unwrap();
            let n0 = s.norm();
            for _ in 0..20 {
                s = p.step(&s, 0.5).unwrap();
            }
            assert_abs_diff_eq!(s.norm(), n0, epsilon = 1e-12);
        }
    }

    #[test]
    fn step_refuses_to_straddle_a_breakpoint() {
        let lc = crate::trajectory::LoopConfig::new(
            SweepConfig::default(),
            10.0,
            crate::trajectory::LoopKind::SquareLoop,
        )
        .unwrap();
        let p = Propagator::new(&lc, Gauge::Coulomb, small()).unwrap();
        let mut s = p.initial_state(Mode::GROUND).unwrap();
        s.t = 499.0;
        assert!(matches!(p.step(&s, 2.0), Err(Error::Contract(_))));
        assert!(p.step(&s, 1.0).is_ok());
    }

    #[test]
    fn half_steps_agree_to_third_order() {
        // Local error of the midpoint exponential is O(dt^3) once dt resolves
        // the largest level spacing of the basis.
        let cfg = SweepConfig::default();
        let p = Propagator::new(&cfg, Gauge::Coulomb, small()).unwrap();
        let mut s = p.initial_state(Mode::GROUND).unwrap();
        s.t = -50.0;
        let diff = |dt: f64| {
            let one = p.step(&s, dt).unwrap();
            let half = p.step(&p.step(&s, dt / 2.0).unwrap(), dt / 2.0).unwrap();
            (one.amplitudes - half.amplitudes).norm()
        };
        let (d1, d2) = (diff(0.004), diff(0.002));
        let order = (d1 / d2).log2();
        assert!(order > 2.7 && order < 3.3, "observed local order {order}");
    }

    #[test]
    fn schedule_isolates_the_active_window() {
        let cfg = SweepConfig::default();
        let p = Propagator::new(&cfg, Gauge::Coulomb, small()).unwrap();
        let segs = p.schedule(-100.0, 20.0).unwrap();
        assert_eq!(segs.len(), 2);
        assert!(segs[0].active);
        assert_abs_diff_eq!(segs[0].end, 5.0, epsilon = 1e-9);
        assert!(!segs[1].active);
        assert!(p.schedule(-200.0, 0.0).is_err());
    }

    #[test]
    fn diagonal_coupling_integral_reproduces_open_path_phase() {
        let cfg = SweepConfig::default();
        let tr = small();
        let p = Propagator::new(&cfg, Gauge::Coulomb, tr).unwrap();
        let init = p.initial_state(Mode::GROUND).unwrap();
        let mut acc = 0.0;
        let mut obs = |e: &StepEvent<'_>| acc -= e.coupling.diagonal(0) * e.dt;
        p.propagate(&init, 5.0, StepPolicy::fixed(0.025).unwrap(), None, &mut obs)
            .unwrap();
        let gamma = AdiabaticState::new(Mode::GROUND, &cfg)
            .unwrap()
            .open_path_phase(5.0)
            .unwrap();
        assert_abs_diff_eq!(acc, gamma, epsilon = 1e-6);
    }

    #[test]
    fn render_single_mode_and_walls() {
        let d = BoxDomain::default();
        let s = ModeCoefficients::single(Mode { nx: 2, ny: 3 }, 0.0, small()).unwrap();
        let f = render_to_grid(&s, &d, 11, 11).unwrap();
        assert!(f.warning.is_none());
        for i in 0..11 {
            for j in 0..11 {
                let expected = crate::model::eigenfunction(Mode { nx: 2, ny: 3 }, &d, f.xs[i], f.ys[j]);
                assert_abs_diff_eq!(f.values[(i, j)].re, expected, epsilon = 1e-12);
            }
        }
        assert!(f.values.row(0).iter().all(|v| v.norm() == 0.0));
        assert!(render_to_grid(&s, &d, 3, 11).unwrap().warning.is_some());
    }

    #[test]
    fn render_satisfies_parseval() {
        let d = BoxDomain::default();
        let tr = small();
        let mut s = ModeCoefficients::single(Mode::GROUND, 0.0, tr).unwrap();
        s.amplitudes[5] = C64::new(0.3, -0.4);
        let grid = TensorGrid::new(&d, &[], &[], 0.1, 12);
        let xs: Vec<f64> = grid.x.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = grid.y.iter().map(|p| p.0).collect();
        let v = render_points(&s, &d, &xs, &ys);
        let n = grid.inner(&v, &v, |_, _| C64::new(1.0, 0.0));
        assert_abs_diff_eq!(n.re, s.norm().powi(2), epsilon = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn step_preserves_norm_for_random_states(
            re in proptest::collection::vec(-1.0f64..1.0, 16),
            im in proptest::collection::vec(-1.0f64..1.0, 16),
            t in -100.0f64..5.0,
            dt in 0.01f64..2.0,
        ) {
            let cfg = SweepConfig::default();
            let tr = small();
            let p = Propagator::new(&cfg, Gauge::Vector, tr).unwrap();
            let amps = DVector::from_iterator(16, re.iter().zip(&im).map(|(&a, &b)| C64::new(a, b)));
            let n0 = amps.norm();
            prop_assume!(n0 > 1e-3);
            let s = ModeCoefficients { amplitudes: amps.unscale(n0), t, truncation: tr };
            let next = p.step(&s, dt).unwrap();
            prop_assert!((next.norm() - 1.0).abs() < 1e-12);
        }
    }
}
