//! Experiment drivers: time-refinement convergence tables, energy-evolution
//! sweeps, disk-shrinkage tracking, power-law slope fits, and a brute-force
//! reference integrator for desk-scale validation.

use std::io::Write as IoWrite;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sav::{energy, init_consistent, ModelSpec, Potential, SavState};
use crate::spectral::{fft, inner, norm_h, Field};
use crate::stepper::{integrate, Method, ObserverEntry, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2h,
    Max,
}

fn field_norm(diff: &Field, norm: NormKind) -> f64 {
    match norm {
        NormKind::L2h => norm_h(diff),
        NormKind::Max => diff.max_abs(),
    }
}

/// Error reference for a refinement study.
#[derive(Debug, Clone)]
pub enum Reference {
    /// Differences between runs at adjacent time steps.
    Cauchy,
    /// Errors against the run at the smallest dt in the list.
    FinestDt,
    /// Errors against a supplied exact solution at t_end.
    Analytic(Field),
}

impl Reference {
    fn label(&self) -> &'static str {
        match self {
            Reference::Cauchy => "cauchy",
            Reference::FinestDt => "finest_dt",
            Reference::Analytic(_) => "analytic",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvergenceRow {
    pub dt: f64,
    pub error: f64,
    /// log(e_prev/e)/log(dt_prev/dt); absent on the first row.
    pub observed_order: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    pub method: Method,
    pub rows: Vec<ConvergenceRow>,
    pub norm: NormKind,
    pub reference: String,
}

impl ConvergenceTable {
    /// Observed orders of the last `n` refinement pairs whose errors sit
    /// above `floor` (errors at rounding level carry no order information).
    pub fn last_orders_above_floor(&self, n: usize, floor: f64) -> Vec<f64> {
        let orders: Vec<f64> = self
            .rows
            .windows(2)
            .filter(|w| w[0].error >= floor && w[1].error >= floor)
            .filter_map(|w| w[1].observed_order)
            .collect();
        orders.iter().rev().take(n).rev().cloned().collect()
    }

    pub fn error_at(&self, dt: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| (r.dt - dt).abs() <= 1e-12 * dt)
            .map(|r| r.error)
    }
}

fn check_dt_list(dt_list: &[f64], t_end: f64) -> Result<()> {
    if dt_list.len() < 2 {
        return Err(Error::InvalidParameter(
            "refinement needs at least two step sizes".into(),
        ));
    }
    for pair in dt_list.windows(2) {
        if pair[1] >= pair[0] {
            return Err(Error::InvalidParameter(format!(
                "dt list must be strictly decreasing, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    for &dt in dt_list {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let steps = t_end / dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "dt = {dt} does not divide t_end = {t_end}"
            )));
        }
    }
    Ok(())
}

/// Runs the model at every dt in `dt_list` and tabulates errors at `t_end`
/// against the chosen reference, with observed orders attached.
pub fn refinement_study(
    model: &ModelSpec,
    method: Method,
    phi0: &Field,
    dt_list: &[f64],
    t_end: f64,
    reference: Reference,
    norm: NormKind,
    cfg: &SolverConfig,
) -> Result<ConvergenceTable> {
    check_dt_list(dt_list, t_end)?;
    let finals: Vec<Result<Field>> = dt_list
        .par_iter()
        .map(|&dt| {
            let state = init_consistent(phi0.clone(), model)?;
            let out = integrate(state, model, method, dt, t_end, &mut [], cfg)?;
            Ok(out.phi)
        })
        .collect();
    let mut fields = Vec::with_capacity(finals.len());
    for (f, &dt) in finals.into_iter().zip(dt_list.iter()) {
        fields.push(f.map_err(|e| Error::StepFailed {
            step: 0,
            time: dt,
            source: Box::new(e),
        })?);
    }

    let mut rows: Vec<ConvergenceRow> = Vec::new();
    let errors: Vec<(f64, f64)> = match &reference {
        Reference::Cauchy => dt_list
            .windows(2)
            .zip(fields.windows(2))
            .map(|(dts, fs)| {
                let mut diff = fs[0].clone();
                diff.scaled_add(-1.0, &fs[1]);
                (dts[0], field_norm(&diff, norm))
            })
            .collect(),
        Reference::FinestDt => {
            let target = fields.last().expect("nonempty");
            dt_list[..dt_list.len() - 1]
                .iter()
                .zip(fields[..fields.len() - 1].iter())
                .map(|(&dt, f)| {
                    let mut diff = f.clone();
                    diff.scaled_add(-1.0, target);
                    (dt, field_norm(&diff, norm))
                })
                .collect()
        }
        Reference::Analytic(target) => dt_list
            .iter()
            .zip(fields.iter())
            .map(|(&dt, f)| {
                let mut diff = f.clone();
                diff.scaled_add(-1.0, target);
                (dt, field_norm(&diff, norm))
            })
            .collect(),
    };
    for (i, &(dt, err)) in errors.iter().enumerate() {
        let observed_order = if i == 0 {
            None
        } else {
            let (dt_prev, err_prev) = errors[i - 1];
            Some((err_prev / err).ln() / (dt_prev / dt).ln())
        };
        rows.push(ConvergenceRow {
            dt,
            error: err,
            observed_order,
        });
    }
    Ok(ConvergenceTable {
        method,
        rows,
        norm,
        reference: reference.label().to_string(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct EnergySample {
    pub t: f64,
    pub modified: f64,
    pub raw: f64,
    pub q: f64,
}

/// Time series of (t, E_h, F_h, q) for one run.
#[derive(Debug, Clone)]
pub struct EnergyTrace {
    pub method: Method,
    pub dt: f64,
    pub samples: Vec<EnergySample>,
}

impl EnergyTrace {
    /// Largest positive step-to-step increase of the modified energy,
    /// normalized by 1 + |E|; zero for a perfectly monotone trace.
    pub fn max_relative_energy_increase(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].modified - w[0].modified) / (1.0 + w[0].modified.abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug)]
pub struct SweepRun {
    pub method: Method,
    pub dt: f64,
    pub result: Result<EnergyTrace>,
}

fn run_energy_trace(
    model: &ModelSpec,
    method: Method,
    dt: f64,
    t_end: f64,
    stride: usize,
    phi0: &Field,
    cfg: &SolverConfig,
) -> Result<EnergyTrace> {
    let state = init_consistent(phi0.clone(), model)?;
    let e0 = energy(&state, model)?;
    let mut samples = vec![EnergySample {
        t: state.t,
        modified: e0.modified,
        raw: e0.raw,
        q: state.q,
    }];
    let mut sample_err: Option<Error> = None;
    {
        let mut obs = [ObserverEntry::every(stride, |_, st: &SavState, _| {
            match energy(st, model) {
                Ok(e) => samples.push(EnergySample {
                    t: st.t,
                    modified: e.modified,
                    raw: e.raw,
                    q: st.q,
                }),
                Err(e) => sample_err = Some(e),
            }
        })];
        integrate(state, model, method, dt, t_end, &mut obs, cfg)?;
    }
    if let Some(e) = sample_err {
        return Err(e);
    }
    Ok(EnergyTrace {
        method,
        dt,
        samples,
    })
}

/// One energy trace per (method, dt). Individual failures are recorded and
/// the sweep continues.
pub fn energy_sweep(
    model: &ModelSpec,
    methods: &[Method],
    dt_list: &[f64],
    t_end: f64,
    stride: usize,
    phi0: &Field,
    cfg: &SolverConfig,
) -> Vec<SweepRun> {
    let runs: Vec<(Method, f64)> = methods
        .iter()
        .flat_map(|&m| dt_list.iter().map(move |&dt| (m, dt)))
        .collect();
    runs.par_iter()
        .map(|&(method, dt)| SweepRun {
            method,
            dt,
            result: run_energy_trace(model, method, dt, t_end, stride, phi0, cfg),
        })
        .collect()
}

/// Sharp-counted area of the positive phase, hx*hy*#{phi > 0}.
pub fn disk_volume(f: &Field) -> f64 {
    f.grid().cell_area() * f.values().iter().filter(|&&v| v > 0.0).count() as f64
}

#[derive(Debug, Clone)]
pub struct DiskTrace {
    pub method: Method,
    pub dt: f64,
    /// (t, volume) samples; volume lies in [0, |Omega|] by construction.
    pub samples: Vec<(f64, f64)>,
}

#[derive(Debug)]
pub struct DiskRun {
    pub method: Method,
    pub dt: f64,
    pub result: Result<DiskTrace>,
}

/// Least-squares line fit y = intercept + slope * x; returns
/// (intercept, slope, rms residual).
pub fn fit_line(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let n = points.len();
    if n < 2 {
        return Err(Error::FitFailure(format!("need >= 2 points, got {n}")));
    }
    let nf = n as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let det = nf * sxx - sx * sx;
    if det.abs() < 1e-300 {
        return Err(Error::FitFailure("degenerate abscissae".into()));
    }
    let slope = (nf * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / nf;
    let ss: f64 = points
        .iter()
        .map(|&(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok((intercept, slope, (ss / nf).sqrt()))
}

/// Volume-vs-time traces of the shrinking disk for each (method, dt).
pub fn disk_benchmark(
    model: &ModelSpec,
    phi0: &Field,
    methods: &[Method],
    dt_list: &[f64],
    t_end: f64,
    stride: usize,
    cfg: &SolverConfig,
) -> Vec<DiskRun> {
    let runs: Vec<(Method, f64)> = methods
        .iter()
        .flat_map(|&m| dt_list.iter().map(move |&dt| (m, dt)))
        .collect();
    runs.par_iter()
        .map(|&(method, dt)| {
            let result = (|| {
                let state = init_consistent(phi0.clone(), model)?;
                let mut samples = vec![(0.0, disk_volume(&state.phi))];
                {
                    let mut obs = [ObserverEntry::every(stride, |_, st: &SavState, _| {
                        samples.push((st.t, disk_volume(&st.phi)));
                    })];
                    integrate(state, model, method, dt, t_end, &mut obs, cfg)?;
                }
                Ok(DiskTrace {
                    method,
                    dt,
                    samples,
                })
            })();
            DiskRun { method, dt, result }
        })
        .collect()
}

/// Least-squares dV/dt over the fit window.
pub fn fit_disk_rate(trace: &DiskTrace, window: (f64, f64)) -> Result<(f64, f64, f64)> {
    let pts: Vec<(f64, f64)> = trace
        .samples
        .iter()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .cloned()
        .collect();
    fit_line(&pts)
}

#[derive(Debug, Clone, Copy)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub fit_window: (f64, f64),
    /// RMS residual of the log-log fit.
    pub residual: f64,
}

/// Log-log least squares of the energy over `window`. The model's
/// `energy_shift` is subtracted first so the fit sees the physical energy;
/// `use_raw` selects F_h instead of E_h.
pub fn fit_power_law(
    trace: &EnergyTrace,
    window: (f64, f64),
    shift: f64,
    use_raw: bool,
) -> Result<PowerLawFit> {
    let mut pts = Vec::new();
    for s in &trace.samples {
        if s.t < window.0 || s.t > window.1 || s.t <= 0.0 {
            continue;
        }
        let e = if use_raw { s.raw } else { s.modified } - shift;
        if e <= 0.0 {
            return Err(Error::FitFailure(format!(
                "non-positive energy {e} at t = {} inside the fit window",
                s.t
            )));
        }
        pts.push((s.t.ln(), e.ln()));
    }
    if pts.len() < 5 {
        return Err(Error::FitFailure(format!(
            "only {} samples in window [{}, {}]; need >= 5",
            pts.len(),
            window.0,
            window.1
        )));
    }
    let (intercept, slope, residual) = fit_line(&pts)?;
    Ok(PowerLawFit {
        slope,
        intercept,
        fit_window: window,
        residual,
    })
}

#[derive(Debug)]
pub struct PowerLawStudy {
    pub fit: PowerLawFit,
    pub trace: EnergyTrace,
}

/// Coarsening run plus a log-log slope fit of the modified energy over
/// `window` (defaulting to [10, t_end] if `window` is None).
pub fn power_law_study(
    model: &ModelSpec,
    method: Method,
    dt: f64,
    t_end: f64,
    window: Option<(f64, f64)>,
    stride: usize,
    phi0: &Field,
    cfg: &SolverConfig,
) -> Result<PowerLawStudy> {
    let window = window.unwrap_or((10.0, t_end));
    let trace = run_energy_trace(model, method, dt, t_end, stride, phi0, cfg)?;
    let fit = fit_power_law(&trace, window, model.energy_shift(), false)?;
    Ok(PowerLawStudy { fit, trace })
}

// ---------------------------------------------------------------------------
// Brute-force references.

/// Budget guard: the oracle refuses absurdly long runs.
const ORACLE_MAX_STEPS: f64 = 2e6;

/// Brute-force reference on a tiny grid: the same semi-discrete system
/// integrated by implicit midpoint with a plain fixed-point solve at a tiny
/// reference step. Shares only the `spectral` primitives and the model's
/// potential definitions with the production stepper; none of the stage
/// solver is reused.
pub fn oracle_reference(
    model: &ModelSpec,
    phi0: &Field,
    t_end: f64,
    dt_ref: f64,
) -> Result<Field> {
    let grid = *model.grid();
    if grid.nx() > 16 || grid.ny() > 16 {
        return Err(Error::InvalidParameter(format!(
            "oracle grids are capped at 16x16, got {}x{}",
            grid.nx(),
            grid.ny()
        )));
    }
    if !(dt_ref > 0.0) || t_end < 0.0 {
        return Err(Error::InvalidParameter("oracle needs dt_ref > 0, t_end >= 0".into()));
    }
    if t_end / dt_ref > ORACLE_MAX_STEPS {
        return Err(Error::InvalidParameter(format!(
            "oracle budget exceeded: {} steps requested",
            (t_end / dt_ref).round()
        )));
    }
    let state = init_consistent(phi0.clone(), model)?;
    let mut phi = state.phi;
    let mut q = state.q;
    let n_steps = (t_end / dt_ref).round() as usize;
    let sig_g = model.mobility().values();
    let sig_l = model.linear().values();

    for _ in 0..n_steps {
        // Implicit midpoint by fixed point on (phi^{n+1}, q^{n+1}).
        let mut phi_next = phi.clone();
        let mut q_next = q;
        for _ in 0..60 {
            let mut phi_mid = phi.clone();
            phi_mid.scaled_add(1.0, &phi_next);
            phi_mid.scale(0.5);
            let q_mid = 0.5 * (q + q_next);

            let r = model.radicand(&phi_mid)?;
            let gp = model.potential().variation(&phi_mid)?;
            // mu = L phi_mid + q_mid g' / sqrt(r), k = G mu, via the raw
            // transforms rather than the stepper helpers.
            let mut mu_hat = phi_mid.forward();
            let gp_hat = gp.forward();
            let coeff = q_mid / r.sqrt();
            for ((m, g), (sl, sg)) in mu_hat
                .iter_mut()
                .zip(gp_hat.iter())
                .zip(sig_l.iter().zip(sig_g.iter()))
            {
                *m = (*m * *sl + g * coeff) * *sg;
            }
            let mut buf: Vec<Complex64> = mu_hat;
            fft::fft2(&mut buf, grid.nx(), grid.ny(), false);
            let k = Field::from_complex(grid, &buf);

            let l = inner(&gp, &k)? / (2.0 * r.sqrt());
            let mut cand = phi.clone();
            cand.scaled_add(dt_ref, &k);
            let q_cand = q + dt_ref * l;

            let mut delta: f64 = (q_cand - q_next).abs();
            for (a, b) in cand.values().iter().zip(phi_next.values().iter()) {
                delta = delta.max((a - b).abs());
            }
            phi_next = cand;
            q_next = q_cand;
            if delta <= 1e-14 * (1.0 + phi_next.max_abs()) {
                break;
            }
        }
        phi = phi_next;
        q = q_next;
    }
    Ok(phi)
}

/// Exact per-mode exponential solution of the linear flow (g = 0):
/// phi_hat(t) = exp(sigma t) phi_hat(0).
pub fn linear_reference(model: &ModelSpec, phi0: &Field, t_end: f64) -> Result<Field> {
    if !matches!(model.potential(), Potential::Zero) {
        return Err(Error::InvalidParameter(
            "analytic reference only exists for the pure linear flow".into(),
        ));
    }
    let grid = *model.grid();
    let mut hat = phi0.forward();
    let sig_g = model.mobility().values();
    let sig_l = model.linear().values();
    for (v, (g, l)) in hat.iter_mut().zip(sig_g.iter().zip(sig_l.iter())) {
        *v *= (g * l * t_end).exp();
    }
    fft::fft2(&mut hat, grid.nx(), grid.ny(), false);
    Ok(Field::from_complex(grid, &hat))
}

// ---------------------------------------------------------------------------
// CSV emission (comma-separated, '.' decimals, '#' comments, LF endings).

pub fn write_energy_csv(
    w: &mut impl IoWrite,
    trace: &EnergyTrace,
    manifest: &str,
) -> std::io::Result<()> {
    writeln!(w, "# manifest: {manifest}")?;
    writeln!(w, "# method: {}, dt: {}", trace.method, trace.dt)?;
    writeln!(w, "t,E_modified,E_raw,q")?;
    for s in &trace.samples {
        writeln!(w, "{},{},{},{}", s.t, s.modified, s.raw, s.q)?;
    }
    Ok(())
}

pub fn write_convergence_csv(
    w: &mut impl IoWrite,
    table: &ConvergenceTable,
    manifest: &str,
) -> std::io::Result<()> {
    writeln!(w, "# manifest: {manifest}")?;
    writeln!(
        w,
        "# method: {}, reference: {}, norm: {}",
        table.method,
        table.reference,
        match table.norm {
            NormKind::L2h => "l2_h",
            NormKind::Max => "max",
        }
    )?;
    writeln!(w, "dt,error,order")?;
    for r in &table.rows {
        match r.observed_order {
            Some(o) => writeln!(w, "{},{},{}", r.dt, r.error, o)?,
            None => writeln!(w, "{},{},", r.dt, r.error)?,
        }
    }
    Ok(())
}

pub fn write_disk_csv(
    w: &mut impl IoWrite,
    trace: &DiskTrace,
    manifest: &str,
) -> std::io::Result<()> {
    writeln!(w, "# manifest: {manifest}")?;
    writeln!(w, "# method: {}, dt: {}", trace.method, trace.dt)?;
    writeln!(w, "t,volume")?;
    for (t, v) in &trace.samples {
        writeln!(w, "{t},{v}")?;
    }
    Ok(())
}
