//! Observables extracted from propagated states: local phase maps, overlaps,
//! energies, the co-degeneracy residual and the rational-flux recurrence.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::adiabatic::{adiabaticity_ratio, AdiabaticState, PhasePrediction};
use crate::basis::TensorGrid;
use crate::error::{Error, Result};
use crate::model::{eigenfunction, BoxDomain, Mode, PhaseTerms, SourceMotion, SweepConfig};
use crate::propagator::{
    render_points, CouplingMatrix, Gauge, ModeCoefficients, Propagator, StepPolicy, Truncation, C64,
};
use crate::trajectory::{LoopConfig, LoopKind};

/// Default fraction of the peak reference amplitude below which the phase is
/// not reported.
pub const MASK_EPS: f64 = 1e-3;

/// Largest adiabaticity ratio at which recurrence experiments are meaningful.
pub const ADIABATIC_LIMIT: f64 = 0.05;

/// Phase of a rendered state relative to the bare eigenstate.
#[derive(Debug, Clone)]
pub struct PhaseMap {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Unwrapped phase; meaningless where `valid` is false.
    pub phase: DMatrix<f64>,
    pub valid: DMatrix<bool>,
}

impl PhaseMap {
    /// `(x, y, phase)` of every valid sample.
    pub fn valid_points(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.xs.len()).flat_map(move |i| {
            (0..self.ys.len())
                .filter(move |&j| self.valid[(i, j)])
                .map(move |j| (self.xs[i], self.ys[j], self.phase[(i, j)]))
        })
    }
}

/// `arg(psi / (e^{-iE(t-t0)/hbar} chi eta))` on the grid `xs x ys`.
///
/// Points where `|chi eta|` falls below `mask_eps` times its maximum are
/// masked. The branch is chosen nearest to the prediction.
pub fn local_phase_map(
    values: &DMatrix<C64>,
    xs: &[f64],
    ys: &[f64],
    mode: Mode,
    domain: &BoxDomain,
    prediction: &PhasePrediction,
    mask_eps: f64,
) -> Result<PhaseMap> {
    if !(mask_eps > 0.0 && mask_eps < 1.0) {
        return Err(Error::invalid("mask_eps", "0 < mask_eps < 1 required"));
    }
    if values.nrows() != xs.len() || values.ncols() != ys.len() {
        return Err(Error::Contract("field shape differs from the grid".into()));
    }
    let reference = DMatrix::from_fn(xs.len(), ys.len(), |i, j| eigenfunction(mode, domain, xs[i], ys[j]));
    let peak = reference.amax();
    let cut = mask_eps * peak;
    let dynamic = C64::from_polar(1.0, -prediction.dynamic);
    let mut phase = DMatrix::zeros(xs.len(), ys.len());
    let mut valid = DMatrix::from_element(xs.len(), ys.len(), false);
    let mut any = false;
    for i in 0..xs.len() {
        for j in 0..ys.len() {
            let r = reference[(i, j)];
            let psi = values[(i, j)];
            if r == 0.0 || r.abs() < cut || psi.norm() == 0.0 {
                continue;
            }
            let raw = (psi * dynamic * r.signum()).arg();
            let expected = prediction.phase(xs[i], ys[j]);
            phase[(i, j)] = raw + 2.0 * PI * ((expected - raw) / (2.0 * PI)).round();
            valid[(i, j)] = true;
            any = true;
        }
    }
    if !any {
        return Err(Error::DegenerateInput("every sample of the phase map is masked".into()));
    }
    Ok(PhaseMap {
        xs: xs.to_vec(),
        ys: ys.to_vec(),
        phase,
        valid,
    })
}

/// Mode-space inner product `sum conj(a) b`.
pub fn overlap(a: &ModeCoefficients, b: &ModeCoefficients) -> Result<C64> {
    if a.truncation != b.truncation {
        return Err(Error::Contract(format!(
            "overlap of states with truncations {}x{} and {}x{}",
            a.truncation.mx, a.truncation.my, b.truncation.mx, b.truncation.my
        )));
    }
    Ok(a.amplitudes.dotc(&b.amplitudes))
}

/// `int conj(e^{i theta_a} psi_a) e^{i theta_b} psi_b` with `theta = (e/hbar c) F`.
///
/// Maps two states to a common gauge before comparing them; with empty phase
/// terms this reduces to the plain overlap.
pub fn gauge_mapped_overlap(
    a: &ModeCoefficients,
    phase_a: &PhaseTerms,
    b: &ModeCoefficients,
    phase_b: &PhaseTerms,
    cfg: &SweepConfig,
) -> Result<C64> {
    let kernel = cfg.kernel();
    let grid = TensorGrid::for_phases(&cfg.domain, &kernel, &[phase_a, phase_b]);
    let xs: Vec<f64> = grid.x.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = grid.y.iter().map(|p| p.0).collect();
    let va = render_points(a, &cfg.domain, &xs, &ys);
    let vb = render_points(b, &cfg.domain, &xs, &ys);
    let scale = cfg.consts.e_over_c() / cfg.consts.hbar;
    Ok(grid.inner(&va, &vb, |x, y| {
        let d = phase_b.value(&kernel, x, y) - phase_a.value(&kernel, x, y);
        C64::from_polar(1.0, scale * d)
    }))
}

/// `|<chi eta| e^{i (theta_b - theta_a)} |chi eta>|`: the overlap two exactly
/// adiabatic states would have.
pub fn predicted_overlap(mode: Mode, phase_a: &PhaseTerms, phase_b: &PhaseTerms, cfg: &SweepConfig) -> f64 {
    let kernel = cfg.kernel();
    let grid = TensorGrid::for_phases(&cfg.domain, &kernel, &[phase_a, phase_b]);
    let scale = cfg.consts.e_over_c() / cfg.consts.hbar;
    let mut acc = C64::new(0.0, 0.0);
    for &(x, wx) in &grid.x {
        for &(y, wy) in &grid.y {
            let f = eigenfunction(mode, &cfg.domain, x, y);
            let d = phase_b.value(&kernel, x, y) - phase_a.value(&kernel, x, y);
            acc += C64::from_polar(wx * wy * f * f, scale * d);
        }
    }
    acc.norm()
}

/// `<c| H0 + W |c>` as a complex number; its imaginary part measures the
/// Hermiticity of the assembled Hamiltonian.
pub fn quadratic_form(state: &ModeCoefficients, energies: &DVector<f64>, coupling: &CouplingMatrix) -> C64 {
    let c = &state.amplitudes;
    let w = coupling.to_complex();
    let hc = w * c + c.component_mul(&energies.map(|e| C64::new(e, 0.0)));
    c.dotc(&hc)
}

/// `<H(t)>` at the state's own time.
pub fn energy_expectation(state: &ModeCoefficients, propagator: &Propagator<'_>) -> Result<f64> {
    if state.truncation != propagator.truncation() {
        return Err(Error::Contract("state truncation differs from the propagator's".into()));
    }
    let w = propagator.coupling_matrix(state.t);
    Ok(quadratic_form(state, propagator.energies(), &w).re)
}

/// `|| (H(t_ref) - E_mode) c || / || c ||`: how far `state` is from being an
/// eigenstate of the Hamiltonian at `t_ref` with the original eigenvalue.
pub fn codegeneracy_residual(
    state: &ModeCoefficients,
    t_ref: f64,
    mode: Mode,
    propagator: &Propagator<'_>,
) -> Result<f64> {
    let tr = propagator.truncation();
    if state.truncation != tr {
        return Err(Error::Contract("state truncation differs from the propagator's".into()));
    }
    let idx = tr
        .index(mode)
        .ok_or_else(|| Error::invalid("mode", format!("mode {mode} lies outside the truncation")))?;
    let e = propagator.energies()[idx];
    let w = propagator.coupling_matrix(t_ref).to_complex();
    let c = &state.amplitudes;
    let shifted = propagator.energies().map(|en| C64::new(en - e, 0.0));
    let r = w * c + c.component_mul(&shifted);
    Ok(r.norm() / c.norm())
}

/// Geometric phase carried by a propagated state, in `(-pi, pi]`: the phase of
/// its projection on the adiabatic state with `gamma` set to zero.
pub fn extract_open_path_phase(
    state: &ModeCoefficients,
    gauge: Gauge,
    adiabatic: &AdiabaticState<'_>,
) -> Result<f64> {
    let tr = state.truncation;
    let cfg = adiabatic.motion.sweep();
    let idx = tr
        .index(adiabatic.mode)
        .ok_or_else(|| Error::invalid("mode", "mode lies outside the truncation"))?;
    let dynamic = -adiabatic.energy() * (state.t - adiabatic.phase_origin()) / cfg.consts.hbar;
    let projection = match gauge {
        Gauge::Coulomb => state.amplitudes[idx],
        Gauge::Vector => {
            let bare = ModeCoefficients::single(adiabatic.mode, state.t, tr)?;
            let terms = adiabatic.motion.phase_terms(state.t);
            gauge_mapped_overlap(&bare, &terms, state, &PhaseTerms::new(), cfg)?
        }
    };
    if projection.norm() == 0.0 {
        return Err(Error::DegenerateInput("state has no weight on the tracked mode".into()));
    }
    Ok(wrap(projection.arg() - dynamic))
}

/// Maps an angle into `(-pi, pi]`.
pub fn wrap(a: f64) -> f64 {
    let r = a - 2.0 * PI * (a / (2.0 * PI)).round();
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Removes `2 pi` jumps between consecutive samples.
pub fn unwrap_series(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut offset = 0.0;
    for (i, &v) in values.iter().enumerate() {
        if i > 0 {
            let prev = values[i - 1];
            offset += 2.0 * PI * ((prev - v) / (2.0 * PI)).round();
        }
        out.push(v + offset);
    }
    out
}

/// Everything an experiment reports about one run.
#[derive(Debug, Clone, Default)]
pub struct PhaseReport {
    pub phase_map: Option<PhaseMap>,
    pub times: Vec<f64>,
    pub gamma_history: Vec<f64>,
    pub overlap_history: Vec<C64>,
    pub energy_history: Vec<f64>,
    pub codegeneracy_residual: Option<f64>,
    pub winding: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceRow {
    pub cycle: u64,
    /// `|<Psi(t0)|Psi(t0 + k tau)>|` from the propagated state.
    pub overlap: f64,
    /// The same magnitude for exactly adiabatic states.
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceReport {
    pub alpha: f64,
    pub rows: Vec<RecurrenceRow>,
    pub adiabaticity_ratio: f64,
    /// Whether the final cycle reaches `1 - tol`.
    pub returned: bool,
    /// Whether every earlier cycle stays at least `margin` below the final one.
    pub separated: bool,
    pub tolerance: f64,
    pub margin: f64,
}

/// Settings of a recurrence experiment.
#[derive(Debug, Clone, Copy)]
pub struct RecurrenceSettings {
    pub truncation: Truncation,
    pub policy: StepPolicy,
    pub tolerance: f64,
    pub margin: f64,
}

/// Runs `cycles` loops at flux `alpha = 2 pi p / q` and reports the overlap
/// with the initial state after each one, in the gauge where the accumulated
/// phase is carried by the wave function.
pub fn recurrence_check(
    base: &LoopConfig,
    p: u32,
    q: u32,
    cycles: u32,
    mode: Mode,
    settings: RecurrenceSettings,
) -> Result<RecurrenceReport> {
    if p == 0 || q == 0 || gcd(p, q) != 1 {
        return Err(Error::invalid("alpha", "alpha = 2 pi p/q with coprime positive p, q required"));
    }
    if base.kind != LoopKind::SquareLoop {
        return Err(Error::invalid("loop", "recurrence needs a closed loop"));
    }
    let alpha = 2.0 * PI * p as f64 / q as f64;
    let lc = LoopConfig {
        sweep: SweepConfig { alpha, ..base.sweep },
        ..*base
    };
    let ratio = adiabaticity_ratio(&lc.sweep, mode, settings.truncation)?;
    if ratio > ADIABATIC_LIMIT {
        return Err(Error::DegenerateInput(format!(
            "adiabaticity ratio {ratio:.3e} exceeds {ADIABATIC_LIMIT}; overlaps would mix excitation with phase geometry"
        )));
    }
    let prop = Propagator::new(&lc, Gauge::Coulomb, settings.truncation)?;
    let initial = prop.initial_state(mode)?;
    let t0 = initial.t;
    let tau = lc.period();
    let phase0 = lc.phase_terms(t0);
    let mut state = initial.clone();
    let mut rows = Vec::new();
    for k in 1..=cycles as u64 {
        let t_k = t0 + k as f64 * tau;
        state = prop.propagate(&state, t_k, settings.policy, None, &mut ())?.last().clone();
        let phase_k = lc.phase_terms(t_k);
        let ov = gauge_mapped_overlap(&initial, &phase0, &state, &phase_k, &lc.sweep)?;
        rows.push(RecurrenceRow {
            cycle: k,
            overlap: ov.norm(),
            predicted: predicted_overlap(mode, &phase0, &phase_k, &lc.sweep),
        });
    }
    let last = rows.last().map(|r| r.overlap).unwrap_or(0.0);
    let returned = last >= 1.0 - settings.tolerance;
    let separated = rows[..rows.len().saturating_sub(1)]
        .iter()
        .all(|r| r.overlap <= last - settings.margin);
    Ok(RecurrenceReport {
        alpha,
        rows,
        adiabaticity_ratio: ratio,
        returned,
        separated,
        tolerance: settings.tolerance,
        margin: settings.margin,
    })
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tr() -> Truncation {
        Truncation::new(4, 4).unwrap()
    }

    #[test]
    fn overlap_basics() {
        let a = ModeCoefficients::single(Mode::GROUND, 0.0, tr()).unwrap();
        let b = ModeCoefficients::single(Mode { nx: 2, ny: 1 }, 0.0, tr()).unwrap();
        assert_eq!(overlap(&a, &a).unwrap(), C64::new(1.0, 0.0));
        assert_eq!(overlap(&a, &b).unwrap(), C64::new(0.0, 0.0));
        let c = ModeCoefficients::single(Mode::GROUND, 0.0, Truncation::new(3, 3).unwrap()).unwrap();
        assert!(matches!(overlap(&a, &c), Err(Error::Contract(_))));
    }

    #[test]
    fn gauge_mapped_overlap_without_phases_is_plain_overlap() {
        let cfg = SweepConfig::default();
        let mut a = ModeCoefficients::single(Mode::GROUND, 0.0, tr()).unwrap();
        a.amplitudes[3] = C64::new(0.2, 0.1);
        let b = ModeCoefficients::single(Mode { nx: 1, ny: 4 }, 0.0, tr()).unwrap();
        let none = PhaseTerms::new();
        let g = gauge_mapped_overlap(&a, &none, &b, &none, &cfg).unwrap();
        let p = overlap(&a, &b).unwrap();
        assert_abs_diff_eq!((g - p).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn predicted_overlap_after_one_semifluxon_cycle() {
        // Sharp-step oracle: |int eta^2 e^{-i pi H(y - 1/2)}| = |1/2 - 1/2| = 0;
        // broadening leaves a small residue. A uniform phase leaves it at 1.
        let lc = LoopConfig::new(SweepConfig::default(), 10.0, LoopKind::SquareLoop).unwrap();
        let t0 = lc.sweep.start_time();
        let p = predicted_overlap(Mode::GROUND, &lc.phase_terms(t0), &lc.phase_terms(t0 + lc.period()), &lc.sweep);
        assert!(p > 0.0 && p < 0.1, "{p}");
        let uniform = PhaseTerms::single(-1.3, -5.0, -5.0);
        let one = predicted_overlap(Mode::GROUND, &PhaseTerms::new(), &uniform, &lc.sweep);
        assert_abs_diff_eq!(one, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn energy_of_free_single_mode_is_exact() {
        let cfg = SweepConfig {
            alpha: 0.0,
            ..SweepConfig::default()
        };
        let p = Propagator::new(&cfg, Gauge::Coulomb, tr()).unwrap();
        let s = p.initial_state(Mode { nx: 2, ny: 3 }).unwrap();
        let e = energy_expectation(&s, &p).unwrap();
        assert_abs_diff_eq!(e, PI * PI * 13.0 / 2.0, epsilon = 1e-12);
        assert_eq!(codegeneracy_residual(&s, s.t, Mode { nx: 2, ny: 3 }, &p).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_form_is_real_in_both_gauges() {
        let cfg = SweepConfig::default();
        for gauge in [Gauge::Coulomb, Gauge::Vector] {
            let p = Propagator::new(&cfg, gauge, tr()).unwrap();
            let mut s = p.initial_state(Mode::GROUND).unwrap();
            s.amplitudes[5] += C64::new(0.3, -0.7);
            let w = p.coupling_matrix(-50.2);
            let q = quadratic_form(&s, p.energies(), &w);
            assert!(q.im.abs() <= 1e-12 * q.re.abs(), "{q}");
        }
    }

    #[test]
    fn phase_map_of_initial_state_vanishes() {
        let cfg = SweepConfig::default();
        let st = AdiabaticState::new(Mode::GROUND, &cfg).unwrap();
        let pred = st.prediction(cfg.start_time()).unwrap();
        let s = ModeCoefficients::single(Mode::GROUND, cfg.start_time(), tr()).unwrap();
        let xs: Vec<f64> = (0..21).map(|i| i as f64 / 20.0).collect();
        let v = render_points(&s, &cfg.domain, &xs, &xs);
        let map = local_phase_map(&v, &xs, &xs, Mode::GROUND, &cfg.domain, &pred, MASK_EPS).unwrap();
        let mut n = 0;
        for (x, _, ph) in map.valid_points() {
            n += 1;
            // the quadrant term sits on the right wall at t0
            if x < 0.9 {
                assert_abs_diff_eq!(ph, 0.0, epsilon = 1e-12);
            }
        }
        assert_eq!(n, 19 * 19);
    }

    #[test]
    fn fully_masked_map_is_rejected() {
        let cfg = SweepConfig::default();
        let st = AdiabaticState::new(Mode::GROUND, &cfg).unwrap();
        let pred = st.prediction(cfg.start_time()).unwrap();
        let xs = vec![0.0, 1.0];
        let v = DMatrix::from_element(2, 2, C64::new(1.0, 0.0));
        let err = local_phase_map(&v, &xs, &xs, Mode::GROUND, &cfg.domain, &pred, MASK_EPS).unwrap_err();
        assert!(matches!(err, Error::DegenerateInput(_)));
    }

    #[test]
    fn recurrence_refuses_fast_sources() {
        let fast = SweepConfig {
            velocity: -5.0,
            ..SweepConfig::default()
        };
        let lc = LoopConfig::new(fast, 10.0, LoopKind::SquareLoop).unwrap();
        let settings = RecurrenceSettings {
            truncation: tr(),
            policy: StepPolicy::fixed(0.01).unwrap(),
            tolerance: 1e-2,
            margin: 0.05,
        };
        assert!(matches!(
            recurrence_check(&lc, 1, 3, 3, Mode::GROUND, settings),
            Err(Error::DegenerateInput(_))
        ));
        assert!(recurrence_check(&lc, 2, 4, 3, Mode::GROUND, settings).is_err());
    }

    #[test]
    fn extraction_reads_the_tracked_coefficient() {
        let cfg = SweepConfig::default();
        let st = AdiabaticState::new(Mode::GROUND, &cfg).unwrap();
        let mut s = ModeCoefficients::single(Mode::GROUND, -40.0, tr()).unwrap();
        let e = st.energy();
        s.amplitudes[0] = C64::from_polar(1.0, 0.7 - e * 60.0);
        assert_abs_diff_eq!(extract_open_path_phase(&s, Gauge::Coulomb, &st).unwrap(), 0.7, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn wrap_lands_in_half_open_interval(a in -50.0f64..50.0) {
            let w = wrap(a);
            prop_assert!(w > -PI && w <= PI);
            prop_assert!(((a - w) / (2.0 * PI) - ((a - w) / (2.0 * PI)).round()).abs() < 1e-9);
        }

        #[test]
        fn overlap_is_bounded_by_one(
            re in proptest::collection::vec(-1.0f64..1.0, 32),
        ) {
            let t = tr();
            let a = DVector::from_iterator(16, re[..16].iter().zip(&re[16..]).map(|(&x, &y)| C64::new(x, y)));
            let b = DVector::from_iterator(16, re[16..].iter().zip(&re[..16]).map(|(&x, &y)| C64::new(y, -x)));
            prop_assume!(a.norm() > 1e-3 && b.norm() > 1e-3);
            let sa = ModeCoefficients { amplitudes: a.normalize(), t: 0.0, truncation: t };
            let sb = ModeCoefficients { amplitudes: b.normalize(), t: 0.0, truncation: t };
            prop_assert!(overlap(&sa, &sb).unwrap().norm() <= 1.0 + 1e-12);
        }
    }
}
