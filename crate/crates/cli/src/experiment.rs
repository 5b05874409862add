//! Experiment runners and their on-disk artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use distphase::adiabatic::{
    adiabaticity_ratio, berry_phase_closed_form, nondiagonal_bound, AdiabaticState,
};
use distphase::analysis::{
    codegeneracy_residual, energy_expectation, extract_open_path_phase, gauge_mapped_overlap, local_phase_map,
    overlap, predicted_overlap, recurrence_check, unwrap_series, PhaseMap, RecurrenceSettings,
};
use distphase::model::{eigenenergy, PhaseTerms, SourceMotion, SweepConfig};
use distphase::propagator::{
    render_points, Gauge, ModeCoefficients, Propagator, StepEvent, StepPolicy, Truncation, C64,
};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::CliError;

/// One line of `report.txt`. `pass: None` is informational.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub pass: Option<bool>,
    pub detail: String,
}

impl Check {
    fn verdict(name: impl Into<String>, pass: bool, detail: String) -> Self {
        Check {
            name: name.into(),
            pass: Some(pass),
            detail,
        }
    }

    fn info(name: impl Into<String>, detail: String) -> Self {
        Check {
            name: name.into(),
            pass: None,
            detail,
        }
    }
}

/// What a finished experiment reports back to the caller.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass != Some(false))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = match c.pass {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "INFO",
            };
            let _ = writeln!(out, "{tag} {}: {}", c.name, c.detail);
        }
        let _ = writeln!(out, "overall: {}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }
}

struct Row {
    t: f64,
    norm: f64,
    energy: f64,
    gamma: f64,
    overlap: C64,
    max_offdiag: f64,
    winding: u64,
}

struct GaugeRun {
    gauge: Gauge,
    initial: ModeCoefficients,
    last: ModeCoefficients,
    rows: Vec<Row>,
    max_offdiag: f64,
    /// Largest deviation of the norm from its initial value.
    max_norm_error: f64,
    /// `(t_mid, max |W_ij|)` for every integration step.
    offdiag_trace: Vec<(f64, f64)>,
    /// States at the end of each completed cycle (loops only).
    cycle_states: Vec<ModeCoefficients>,
}

fn numeric(module: &'static str) -> impl Fn(distphase::Error) -> CliError {
    move |source| CliError::numeric(module, source)
}

fn policy(cfg: &ExperimentConfig) -> Result<StepPolicy, CliError> {
    match cfg.dt {
        Some(dt) => StepPolicy::fixed(dt).map_err(CliError::from_config),
        None => Ok(StepPolicy::for_sweep(cfg.sweep.half_width, cfg.sweep.velocity.abs())),
    }
}

/// Time at which the kernel has fully left the box on the far wall.
fn sweep_end(sweep: &SweepConfig) -> f64 {
    sweep.half_width / sweep.velocity.abs()
}

/// Propagates from the motion's start to each of `stops` in turn and
/// collects the time series.
fn run_gauge(
    cfg: &ExperimentConfig,
    motion: &dyn SourceMotion,
    gauge: Gauge,
    truncation: Truncation,
    policy: StepPolicy,
    stops: &[f64],
) -> Result<GaugeRun, CliError> {
    let prop = Propagator::new(motion, gauge, truncation).map_err(numeric("propagator"))?;
    let initial = prop.initial_state(cfg.mode).map_err(numeric("propagator"))?;
    // The vector-gauge start is a truncated projection, so drift is measured
    // from its own norm.
    let norm0 = initial.norm();
    let mut max_norm_error = 0.0f64;
    let mut max_offdiag = 0.0f64;
    let mut offdiag_trace = Vec::new();
    let mut samples = Vec::new();
    let mut cycle_states = Vec::new();
    let mut state = initial.clone();
    for &stop in stops {
        let mut observer = |ev: &StepEvent<'_>| {
            max_norm_error = max_norm_error.max((ev.state.norm() - norm0).abs());
            let m = ev.coupling.max_offdiag();
            max_offdiag = max_offdiag.max(m);
            offdiag_trace.push((ev.t_mid, m));
        };
        let traj = prop
            .propagate(&state, stop, policy, Some(cfg.sample_dt), &mut observer)
            .map_err(numeric("propagator"))?;
        let skip = usize::from(!samples.is_empty());
        state = traj.last().clone();
        samples.extend(traj.samples.into_iter().skip(skip));
        cycle_states.push(state.clone());
    }

    let adiabatic = AdiabaticState::new(cfg.mode, motion).map_err(numeric("adiabatic"))?;
    let mut raw_gamma = Vec::with_capacity(samples.len());
    let mut rows = Vec::with_capacity(samples.len());
    for s in &samples {
        raw_gamma.push(extract_open_path_phase(s, gauge, &adiabatic).map_err(numeric("analysis"))?);
        rows.push(Row {
            t: s.t,
            norm: s.norm(),
            energy: energy_expectation(s, &prop).map_err(numeric("analysis"))?,
            gamma: 0.0,
            overlap: overlap(&initial, s).map_err(numeric("analysis"))?,
            max_offdiag: prop.coupling_matrix(s.t).max_offdiag(),
            winding: motion.winding(s.t),
        });
    }
    for (row, g) in rows.iter_mut().zip(unwrap_series(&raw_gamma)) {
        row.gamma = g;
    }
    Ok(GaugeRun {
        gauge,
        initial,
        last: state,
        rows,
        max_norm_error,
        max_offdiag,
        offdiag_trace,
        cycle_states,
    })
}

fn write_timeseries(path: &Path, rows: &[Row]) -> Result<(), CliError> {
    let mut out = String::from("t,norm,energy,gamma,overlap_re,overlap_im,max_offdiag_W,winding\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.t, r.norm, r.energy, r.gamma, r.overlap.re, r.overlap.im, r.max_offdiag, r.winding
        );
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// `mask = 1` marks points where the reference amplitude is too small for a
/// meaningful phase; their phase column is written as 0.
fn write_phase_map(path: &Path, map: &PhaseMap) -> Result<(), CliError> {
    let mut out = String::from("x,y,phase,mask\n");
    for (i, &x) in map.xs.iter().enumerate() {
        for (j, &y) in map.ys.iter().enumerate() {
            let valid = map.valid[(i, j)];
            let phase = if valid { map.phase[(i, j)] } else { 0.0 };
            let _ = writeln!(out, "{x:.16e},{y:.16e},{phase:.16e},{}", u8::from(!valid));
        }
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

fn uniform(n: usize, len: f64) -> Vec<f64> {
    (0..n).map(|i| len * i as f64 / (n - 1) as f64).collect()
}

/// Phase map of a finished run, taken in the gauge where the phase lives in
/// the wave function.
fn phase_map(cfg: &ExperimentConfig, motion: &dyn SourceMotion, run: &GaugeRun) -> Result<PhaseMap, CliError> {
    let sweep = motion.sweep();
    let t = run.last.t;
    let xs = uniform(cfg.grid.0, sweep.domain.x_len);
    let ys = uniform(cfg.grid.1, sweep.domain.y_len);
    let values = render_points(&run.last, &sweep.domain, &xs, &ys);
    let values = match run.gauge {
        Gauge::Vector => values,
        Gauge::Coulomb => {
            let kernel = sweep.kernel();
            let scale = sweep.consts.e_over_c() / sweep.consts.hbar;
            let terms = motion.phase_terms(t);
            values.map_with_location(|i, j, v| v * C64::from_polar(1.0, scale * terms.value(&kernel, xs[i], ys[j])))
        }
    };
    let adiabatic = AdiabaticState::new(cfg.mode, motion).map_err(numeric("adiabatic"))?;
    let prediction = adiabatic.prediction(t).map_err(numeric("adiabatic"))?;
    local_phase_map(&values, &xs, &ys, cfg.mode, &sweep.domain, &prediction, cfg.mask_eps)
        .map_err(numeric("analysis"))
}

/// Checks that the map shows `gamma - alpha` above the band and `gamma` below it.
fn phase_map_checks(cfg: &ExperimentConfig, map: &PhaseMap, gamma: f64, label: &str) -> Vec<Check> {
    let s = &cfg.sweep;
    let margin = 2.0 * s.half_width;
    let (mut above, mut below, mut n_above, mut n_below) = (0.0f64, 0.0f64, 0usize, 0usize);
    for (_, y, ph) in map.valid_points() {
        if y >= s.entry_height + margin {
            above = above.max((ph - gamma + s.alpha).abs());
            n_above += 1;
        } else if y <= s.entry_height - margin {
            below = below.max((ph - gamma).abs());
            n_below += 1;
        }
    }
    let mut checks = Vec::new();
    let tol = cfg.tol_phase;
    if n_above > 0 {
        checks.push(Check::verdict(
            format!("{label}phase map above entry height"),
            above <= tol,
            format!("max|phase - gamma + alpha| = {above:.3e} over {n_above} points (tol {tol:.1e})"),
        ));
    }
    if n_below > 0 {
        checks.push(Check::verdict(
            format!("{label}phase map below entry height"),
            below <= tol,
            format!("max|phase - gamma| = {below:.3e} over {n_below} points (tol {tol:.1e})"),
        ));
    }
    checks
}

fn norm_check(cfg: &ExperimentConfig, run: &GaugeRun, label: &str) -> Check {
    Check::verdict(
        format!("{label}unitarity"),
        run.max_norm_error <= cfg.tol_norm,
        format!("max|norm - norm(t0)| = {:.3e} (tol {:.1e})", run.max_norm_error, cfg.tol_norm),
    )
}

fn label(gauges: &[Gauge], gauge: Gauge) -> String {
    if gauges.len() > 1 {
        format!("[{gauge}] ")
    } else {
        String::new()
    }
}

fn output_dir(cfg: &ExperimentConfig, gauges: &[Gauge], gauge: Gauge) -> Result<std::path::PathBuf, CliError> {
    let dir = if gauges.len() > 1 {
        cfg.out.join(gauge.to_string())
    } else {
        cfg.out.clone()
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn common_info(cfg: &ExperimentConfig) -> Result<Vec<Check>, CliError> {
    let ratio = adiabaticity_ratio(&cfg.sweep, cfg.mode, cfg.truncation).map_err(numeric("adiabatic"))?;
    Ok(vec![Check::info(
        "adiabaticity ratio",
        format!("bound / minimum gap = {ratio:.3e}"),
    )])
}

fn sweep_like(cfg: &ExperimentConfig, with_phase_checks: bool) -> Result<Outcome, CliError> {
    let motion = cfg.sweep;
    let gauges = cfg.gauge.gauges();
    let policy = policy(cfg)?;
    let mut checks = common_info(cfg)?;
    let closed = berry_phase_closed_form(cfg.mode, &cfg.sweep);
    let limit = nondiagonal_bound(&cfg.sweep) * (1.0 + 5.0 * cfg.sweep.half_width / cfg.sweep.domain.y_len);
    let mut runs = Vec::new();
    for &gauge in &gauges {
        let lbl = label(&gauges, gauge);
        let dir = output_dir(cfg, &gauges, gauge)?;
        let run = run_gauge(cfg, &motion, gauge, cfg.truncation, policy, &[sweep_end(&cfg.sweep)])?;
        write_timeseries(&dir.join("timeseries.csv"), &run.rows)?;
        let map = phase_map(cfg, &motion, &run)?;
        write_phase_map(&dir.join("phase_map.csv"), &map)?;
        let gamma = run.rows.last().map(|r| r.gamma).unwrap_or(0.0);
        if with_phase_checks {
            checks.push(norm_check(cfg, &run, &lbl));
            checks.push(Check::verdict(
                format!("{lbl}open-path phase"),
                (gamma - closed).abs() <= cfg.tol_phase,
                format!("gamma = {gamma:.6e}, closed form {closed:.6e} (tol {:.1e})", cfg.tol_phase),
            ));
            if gauge == Gauge::Coulomb {
                checks.push(Check::verdict(
                    "off-diagonal coupling bound",
                    run.max_offdiag <= limit,
                    format!("max|W_ij| = {:.4e}, bound with kernel allowance {limit:.4e}", run.max_offdiag),
                ));
            }
        }
        checks.extend(phase_map_checks(cfg, &map, gamma, &lbl));
        runs.push(run);
    }
    if let [c, v] = runs.as_slice() {
        let t = c.last.t;
        let terms = motion.phase_terms(t);
        let fidelity = gauge_mapped_overlap(&c.last, &terms, &v.last, &PhaseTerms::new(), &cfg.sweep)
            .map_err(numeric("analysis"))?
            .norm();
        checks.push(Check::verdict(
            "gauge agreement",
            fidelity >= 1.0 - cfg.tol_overlap,
            format!("|<U psi_coulomb|psi_vector>| = {fidelity:.6} (tol {:.1e})", cfg.tol_overlap),
        ));
    }
    Ok(Outcome { checks })
}

fn run_loop(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let lc = cfg.loop_config();
    let gauges = cfg.gauge.gauges();
    let policy = policy(cfg)?;
    let t0 = lc.sweep.start_time();
    let tau = lc.period();
    let stops: Vec<f64> = (1..=cfg.cycles).map(|k| t0 + k as f64 * tau).collect();
    let mut checks = common_info(cfg)?;
    let phase0 = lc.phase_terms(t0);
    let energy = eigenenergy(cfg.mode, &cfg.sweep.domain, &cfg.sweep.consts);
    for &gauge in &gauges {
        let lbl = label(&gauges, gauge);
        let dir = output_dir(cfg, &gauges, gauge)?;
        let run = run_gauge(cfg, &lc, gauge, cfg.truncation, policy, &stops)?;
        write_timeseries(&dir.join("timeseries.csv"), &run.rows)?;
        checks.push(norm_check(cfg, &run, &lbl));
        let prop = Propagator::new(&lc, gauge, cfg.truncation).map_err(numeric("propagator"))?;
        let residual =
            codegeneracy_residual(&run.last, run.last.t, cfg.mode, &prop).map_err(numeric("analysis"))?;
        checks.push(Check::verdict(
            format!("{lbl}return to the starting eigenspace"),
            residual <= cfg.tol_residual * energy,
            format!(
                "||(H - E) psi|| = {residual:.3e} (tol {:.1e} x E = {:.3e})",
                cfg.tol_residual,
                cfg.tol_residual * energy
            ),
        ));
        let winding = lc.winding(run.last.t);
        checks.push(Check::verdict(
            format!("{lbl}winding number"),
            winding == u64::from(cfg.cycles),
            format!("{winding} completed cycles, expected {}", cfg.cycles),
        ));
        for (k, state) in run.cycle_states.iter().enumerate() {
            let phase_k = lc.phase_terms(state.t);
            let (phase_a, phase_b) = match gauge {
                Gauge::Coulomb => (&phase0, &phase_k),
                Gauge::Vector => (&PhaseTerms::new(), &PhaseTerms::new()),
            };
            let ov = gauge_mapped_overlap(&run.initial, phase_a, state, phase_b, &lc.sweep)
                .map_err(numeric("analysis"))?
                .norm();
            let predicted = predicted_overlap(cfg.mode, &phase0, &phase_k, &lc.sweep);
            checks.push(Check::info(
                format!("{lbl}cycle {}", k + 1),
                format!("|<psi(t0)|psi(t0 + k tau)>| = {ov:.6}, adiabatic {predicted:.6}"),
            ));
        }
    }
    Ok(Outcome { checks })
}

fn run_bound_check(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let motion = cfg.sweep;
    let policy = policy(cfg)?;
    let mut checks = common_info(cfg)?;
    if cfg.gauge.gauges() != [Gauge::Coulomb] {
        checks.push(Check::info("gauge", "the bound concerns the Coulomb coupling; running Coulomb only".into()));
    }
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let run = run_gauge(cfg, &motion, Gauge::Coulomb, cfg.truncation, policy, &[sweep_end(&cfg.sweep)])?;
    write_timeseries(&cfg.out.join("timeseries.csv"), &run.rows)?;
    let bound = nondiagonal_bound(&cfg.sweep);
    let limit = bound * (1.0 + 5.0 * cfg.sweep.half_width / cfg.sweep.domain.y_len);
    let mut csv = String::from("t,max_offdiag_W,bound,limit\n");
    let mut violations = 0usize;
    for &(t, m) in &run.offdiag_trace {
        violations += usize::from(m > limit);
        let _ = writeln!(csv, "{t:.16e},{m:.16e},{bound:.16e},{limit:.16e}");
    }
    let path = cfg.out.join("bound_check.csv");
    fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;
    checks.push(Check::verdict(
        "off-diagonal coupling bound",
        violations == 0,
        format!(
            "{violations} of {} steps exceed {limit:.4e}; max|W_ij| = {:.4e}, bound {bound:.4e}",
            run.offdiag_trace.len(),
            run.max_offdiag
        ),
    ));
    Ok(Outcome { checks })
}

/// Copies `state` into a larger truncation, padding with zeros.
fn embed(state: &ModeCoefficients, target: Truncation) -> ModeCoefficients {
    let mut amps = nalgebra::DVector::from_element(target.dim(), C64::new(0.0, 0.0));
    for (i, mode) in state.truncation.modes().enumerate() {
        if let Some(j) = target.index(mode) {
            amps[j] = state.amplitudes[i];
        }
    }
    ModeCoefficients {
        amplitudes: amps,
        t: state.t,
        truncation: target,
    }
}

fn run_convergence(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let motion = cfg.sweep;
    let base = policy(cfg)?;
    let gauge = cfg.gauge.gauges()[0];
    let mut checks = common_info(cfg)?;
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let mut csv = String::from("level,Mx,My,dt,gamma,norm_error,fidelity_delta\n");
    let mut previous: Option<ModeCoefficients> = None;
    let mut deltas = Vec::new();
    for level in 0..cfg.levels {
        let shift = cfg.levels - 1 - level;
        let tr = Truncation::new(
            (cfg.truncation.mx >> shift).max(2),
            (cfg.truncation.my >> shift).max(2),
        )
        .map_err(CliError::from_config)?;
        if tr.index(cfg.mode).is_none() {
            return Err(CliError::config("levels", format!("mode {} falls outside level {level}", cfg.mode)));
        }
        let dt = base.dt_max * f64::from(1u32 << shift);
        let policy = StepPolicy::fixed(dt).map_err(CliError::from_config)?;
        let run = run_gauge(cfg, &motion, gauge, tr, policy, &[sweep_end(&cfg.sweep)])?;
        let gamma = run.rows.last().map(|r| r.gamma).unwrap_or(0.0);
        let delta = match &previous {
            Some(p) => {
                let coarse = embed(p, tr);
                let f = overlap(&coarse, &run.last).map_err(numeric("analysis"))?.norm();
                deltas.push(1.0 - f);
                1.0 - f
            }
            None => f64::NAN,
        };
        let delta_text = if delta.is_nan() { "n/a".to_string() } else { format!("{delta:.3e}") };
        let _ = writeln!(
            csv,
            "{level},{},{},{dt:.16e},{gamma:.16e},{:.16e},{delta:.16e}",
            tr.mx, tr.my, run.max_norm_error
        );
        checks.push(Check::info(
            format!("level {level}"),
            format!("{}x{} modes, dt {dt:.4e}: gamma = {gamma:.6e}, 1 - fidelity to previous = {delta_text}", tr.mx, tr.my),
        ));
        previous = Some(run.last);
    }
    let path = cfg.out.join("convergence.csv");
    fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;
    if deltas.len() >= 2 {
        let shrinking = deltas.windows(2).all(|w| w[1] < w[0]);
        checks.push(Check::verdict(
            "refinement converges",
            shrinking,
            format!(
                "successive infidelities [{}] shrink monotonically",
                deltas.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join(", ")
            ),
        ));
    }
    Ok(Outcome { checks })
}

fn run_recurrence(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let settings = RecurrenceSettings {
        truncation: cfg.truncation,
        policy: policy(cfg)?,
        tolerance: cfg.tol_recurrence,
        margin: cfg.recurrence_margin,
    };
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let report = recurrence_check(
        &cfg.loop_config(),
        cfg.recurrence_p,
        cfg.recurrence_q,
        cfg.cycles,
        cfg.mode,
        settings,
    )
    .map_err(numeric("analysis"))?;
    let mut csv = String::from("cycle,overlap,predicted\n");
    let mut checks = vec![Check::info(
        "adiabaticity ratio",
        format!("bound / minimum gap = {:.3e}", report.adiabaticity_ratio),
    )];
    for r in &report.rows {
        let _ = writeln!(csv, "{},{:.16e},{:.16e}", r.cycle, r.overlap, r.predicted);
        checks.push(Check::info(
            format!("cycle {}", r.cycle),
            format!("|overlap| = {:.6}, adiabatic {:.6}", r.overlap, r.predicted),
        ));
    }
    let path = cfg.out.join("recurrence.csv");
    fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;
    let last = report.rows.last().map_or(0.0, |r| r.overlap);
    checks.push(Check::verdict(
        "return after the final cycle",
        report.returned,
        format!("|overlap| = {last:.6} (need >= {:.4})", 1.0 - report.tolerance),
    ));
    checks.push(Check::verdict(
        "earlier cycles separated",
        report.separated,
        format!("every earlier cycle at least {:.3} below the final one", report.margin),
    ));
    Ok(Outcome { checks })
}

/// Runs the configured experiment, writing its artifacts and `report.txt`
/// under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let resolved = cfg.out.join("config.resolved");
    fs::write(&resolved, cfg.resolved()).map_err(|e| CliError::io(&resolved, e))?;
    let outcome = match cfg.kind {
        ExperimentKind::Sweep => sweep_like(cfg, true)?,
        ExperimentKind::PhaseMap => sweep_like(cfg, false)?,
        ExperimentKind::Loop => run_loop(cfg)?,
        ExperimentKind::BoundCheck => run_bound_check(cfg)?,
        ExperimentKind::Convergence => run_convergence(cfg)?,
        ExperimentKind::Recurrence => run_recurrence(cfg)?,
    };
    let report = cfg.out.join("report.txt");
    fs::write(&report, outcome.render()).map_err(|e| CliError::io(&report, e))?;
    Ok(outcome)
}
