//! Time integrators for the SAV-reformulated flow: the fully implicit
//! HSAV-RK step with a preconditioned Picard stage solver, the linearly
//! implicit SAV Crank-Nicolson baseline, and the integration loop with
//! observer callbacks.
//!
//! The stage equations are nonlinear only through the normalized potential
//! term N(Phi, Q) = Q g'(Phi) / sqrt((g(Phi),1)_h + C0). The default solver
//! freezes N at the previous iterate and solves the remaining linear stage
//! system exactly, one s x s solve per Fourier mode with the matrix
//! (I - dt * sigma_G sigma_L * A); the stage scalars Q are then closed
//! exactly as an affine s x s system, so the stiff linear part never limits
//! the iteration. With g = 0 the frozen term is identically zero and the
//! loop converges in one iteration.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sav::{ModelSpec, SavState};
use crate::spectral::{fft, inner_fourier, Field, Grid2D};
use crate::tableau::{gauss_tableau, solve_dense, ButcherTableau};

const MAX_STAGES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    /// Freeze the normalized potential term, solve the linear stage system
    /// exactly per Fourier mode (default).
    PicardPreconditioned,
    /// Freeze the whole right-hand side; converges only for small dt*sigma
    /// and serves as a cross-check of the preconditioned path.
    FullPicard,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Max-norm tolerance on stage increments.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub mode: SolverMode,
    /// Accept tableaus that fail the algebraic stability condition;
    /// `dissipation_ok` is then informational.
    pub allow_unstable_tableau: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-12,
            max_iterations: 200,
            mode: SolverMode::PicardPreconditioned,
            allow_unstable_tableau: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub iterations_used: usize,
    /// Last stage-increment max norm (0 when the nonlinear term stagnated).
    pub final_residual: f64,
    /// Modified energy E_h before and after the step.
    pub energy_before: f64,
    pub energy_after: f64,
    /// energy_after <= energy_before + 1e-10 * (1 + |energy_before|).
    pub dissipation_ok: bool,
    /// dt * sum_i b_i (mu_i, G_h mu_i)_h evaluated at the converged stages;
    /// the energy decrement equals this up to solver tolerance.
    pub dissipation_predicted: f64,
}

/// Converged stage data of one step, for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct StageData {
    pub phi: Vec<Field>,
    pub q: Vec<f64>,
    pub k: Vec<Field>,
    pub l: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// SAV Crank-Nicolson baseline (second order).
    Cn,
    /// s-stage Gauss collocation (order 2s).
    Gauss(usize),
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Cn => "cn".to_string(),
            Method::Gauss(s) => format!("gauss{s}"),
        }
    }

    pub fn parse(text: &str) -> Result<Method> {
        let t = text.trim();
        if t == "cn" {
            return Ok(Method::Cn);
        }
        if let Some(rest) = t.strip_prefix("gauss") {
            let s: usize = rest
                .parse()
                .map_err(|_| Error::Config(format!("unknown method '{text}'")))?;
            if s == 0 || s > 10 {
                return Err(Error::Config(format!(
                    "method '{text}': stage count must be in 1..=10"
                )));
            }
            return Ok(Method::Gauss(s));
        }
        Err(Error::Config(format!(
            "unknown method '{text}' (expected 'cn' or 'gaussS')"
        )))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

// ---------------------------------------------------------------------------
// Per-mode linear algebra for the stage system.

/// LU factors of the per-mode stage matrices
/// `I - dt * sig_G * (sig_L + c_j * ell) * A` (column j carries the j-th
/// stage's mean-field shift), factored once per Picard sweep.
struct ModeLu {
    s: usize,
    lu: Vec<f64>,
    piv: Vec<u8>,
}

/// Marker for a (near-)singular shifted stage matrix; the caller retries
/// with a smaller shift.
struct SingularMode;

impl ModeLu {
    fn factor(
        a: &Array2<f64>,
        sig_g: &[f64],
        sig_l: &[f64],
        ell: &[f64],
        shifts: &[f64],
        dt: f64,
    ) -> std::result::Result<ModeLu, SingularMode> {
        let s = a.nrows();
        let n = sig_g.len();
        let mut lu = vec![0.0; n * s * s];
        let mut piv = vec![0u8; n * s];
        let mut m = vec![0.0; s * s];
        for mode in 0..n {
            let mut scale: f64 = 0.0;
            for i in 0..s {
                for j in 0..s {
                    let sig_eff = sig_g[mode] * (sig_l[mode] + shifts[j] * ell[mode]);
                    let v = if i == j { 1.0 } else { 0.0 } - dt * sig_eff * a[[i, j]];
                    m[i * s + j] = v;
                    scale = scale.max(v.abs());
                }
            }
            let p = &mut piv[mode * s..(mode + 1) * s];
            for col in 0..s {
                let mut pivot = col;
                for row in col + 1..s {
                    if m[row * s + col].abs() > m[pivot * s + col].abs() {
                        pivot = row;
                    }
                }
                if m[pivot * s + col].abs() < 1e-10 * scale {
                    return Err(SingularMode);
                }
                p[col] = pivot as u8;
                if pivot != col {
                    for j in 0..s {
                        m.swap(col * s + j, pivot * s + j);
                    }
                }
                let d = m[col * s + col];
                for row in col + 1..s {
                    let f = m[row * s + col] / d;
                    m[row * s + col] = f;
                    for j in col + 1..s {
                        m[row * s + j] -= f * m[col * s + j];
                    }
                }
            }
            lu[mode * s * s..(mode + 1) * s * s].copy_from_slice(&m);
        }
        Ok(ModeLu { s, lu, piv })
    }

    #[inline]
    fn solve(&self, mode: usize, rhs: &mut [Complex64]) {
        let s = self.s;
        let lu = &self.lu[mode * s * s..(mode + 1) * s * s];
        let piv = &self.piv[mode * s..(mode + 1) * s];
        for col in 0..s {
            let p = piv[col] as usize;
            if p != col {
                rhs.swap(col, p);
            }
            for row in col + 1..s {
                let f = lu[row * s + col];
                let t = rhs[col];
                rhs[row] -= t * f;
            }
        }
        for col in (0..s).rev() {
            rhs[col] /= lu[col * s + col];
            for row in 0..col {
                let t = rhs[col];
                rhs[row] -= t * lu[row * s + col];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Anderson acceleration of the stage fixed point.

const ANDERSON_DEPTH: usize = 8;
/// Plain sweeps performed before extrapolation may engage.
const ANDERSON_WARMUP: usize = 2;

/// Keeps the last few (iterate, sweep output) pairs and extrapolates through
/// a small least squares on residual differences. The stiff linear part is
/// already solved exactly per mode, but the frozen potential term alone is
/// not a contraction for large dt on order-one states; the acceleration
/// closes that gap while leaving the small-dt path untouched.
struct Anderson {
    depth: usize,
    g_hist: std::collections::VecDeque<Vec<f64>>,
    f_hist: std::collections::VecDeque<Vec<f64>>,
}

fn flatten_iterate(fields: &[Field], q: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(fields.len() * fields[0].values().len() + q.len());
    for f in fields {
        out.extend(f.values().iter());
    }
    out.extend_from_slice(q);
    out
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Anderson {
            depth,
            g_hist: std::collections::VecDeque::new(),
            f_hist: std::collections::VecDeque::new(),
        }
    }

    fn clear(&mut self) {
        self.g_hist.clear();
        self.f_hist.clear();
    }

    fn push(&mut self, x_fields: &[Field], x_q: &[f64], g_fields: &[Field], g_q: &[f64]) {
        let g = flatten_iterate(g_fields, g_q);
        let x = flatten_iterate(x_fields, x_q);
        let f: Vec<f64> = g.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        self.g_hist.push_back(g);
        self.f_hist.push_back(f);
        while self.g_hist.len() > self.depth + 1 {
            self.g_hist.pop_front();
            self.f_hist.pop_front();
        }
    }

    /// x_next = g_k - sum_p gamma_p (g_{p+1} - g_p), gamma from the
    /// regularized normal equations of min ||f_k - DF gamma||.
    fn combine(&self, grid: &Grid2D, s: usize) -> Option<(Vec<Field>, Vec<f64>)> {
        let len = self.f_hist.len();
        if len < 2 {
            return None;
        }
        let k = len - 1;
        let f_last = &self.f_hist[len - 1];
        let dim = f_last.len();

        let df = |p: usize, i: usize| self.f_hist[p + 1][i] - self.f_hist[p][i];
        let mut ata = vec![0.0; k * k];
        let mut atb = vec![0.0; k];
        for p in 0..k {
            for r in p..k {
                let mut dot = 0.0;
                for i in 0..dim {
                    dot += df(p, i) * df(r, i);
                }
                ata[p * k + r] = dot;
                ata[r * k + p] = dot;
            }
            let mut dot = 0.0;
            for i in 0..dim {
                dot += df(p, i) * f_last[i];
            }
            atb[p] = dot;
        }
        let diag_max = (0..k).map(|p| ata[p * k + p]).fold(0.0, f64::max);
        if !(diag_max > 0.0) {
            return None;
        }
        for p in 0..k {
            ata[p * k + p] += 1e-13 * diag_max;
        }
        let gamma = solve_dense(&ata, &atb).ok()?;

        let g_last = &self.g_hist[len - 1];
        let mut x = g_last.clone();
        for p in 0..k {
            let gp = gamma[p];
            if gp == 0.0 {
                continue;
            }
            for i in 0..dim {
                x[i] -= gp * (self.g_hist[p + 1][i] - self.g_hist[p][i]);
            }
        }

        let n = grid.num_nodes();
        let mut fields = Vec::with_capacity(s);
        for j in 0..s {
            let chunk = x[j * n..(j + 1) * n].to_vec();
            let values = ndarray::Array2::from_shape_vec((grid.nx(), grid.ny()), chunk).ok()?;
            fields.push(Field::from_values(*grid, values).ok()?);
        }
        let q = x[s * n..].to_vec();
        Some((fields, q))
    }
}

// ---------------------------------------------------------------------------
// Frozen nonlinear data of one Picard sweep.

struct Frozen {
    gp: Vec<Field>,
    gp_hat: Vec<Vec<Complex64>>,
    /// Q_j / sqrt(r_j): coefficient of g'_j inside the stage derivative.
    cw: Vec<f64>,
    /// 1 / (2 sqrt(r_j)): normalization of the stage scalar derivative.
    inv2sq: Vec<f64>,
    /// Per-stage mean-field shift cw_j * mean(dg'/dphi at Phi_j), moved
    /// into the implicit solve so the frozen remainder stays contractive
    /// through the spinodal regime.
    shift: Vec<f64>,
}

impl Frozen {
    fn eval(model: &ModelSpec, phi: &[Field], q: &[f64]) -> Result<Frozen> {
        let s = phi.len();
        let mut gp = Vec::with_capacity(s);
        let mut gp_hat = Vec::with_capacity(s);
        let mut cw = Vec::with_capacity(s);
        let mut inv2sq = Vec::with_capacity(s);
        let mut shift = Vec::with_capacity(s);
        for j in 0..s {
            let r = model.radicand(&phi[j])?;
            let sqrt_r = r.sqrt();
            let g = model.potential().variation(&phi[j])?;
            let lin = model.potential().mean_linearization(&phi[j])?;
            gp_hat.push(g.forward());
            gp.push(g);
            let c = q[j] / sqrt_r;
            cw.push(c);
            inv2sq.push(1.0 / (2.0 * sqrt_r));
            shift.push(c * lin);
        }
        Ok(Frozen {
            gp,
            gp_hat,
            cw,
            inv2sq,
            shift,
        })
    }

    /// Bitwise equality of everything the sweep output depends on; when the
    /// frozen data stagnates the current iterate is already the fixed point.
    fn same_as(&self, other: &Frozen) -> bool {
        self.cw == other.cw
            && self.inv2sq == other.inv2sq
            && self.shift == other.shift
            && self
                .gp
                .iter()
                .zip(other.gp.iter())
                .all(|(a, b)| a.values() == b.values())
    }
}

fn inverse_hat(grid: &Grid2D, hat: &[Complex64]) -> Field {
    let mut buf = hat.to_vec();
    fft::fft2(&mut buf, grid.nx(), grid.ny(), false);
    Field::from_complex(*grid, &buf)
}

/// (L_h phi, phi)_h / 2 from the spectrum of phi.
fn quad_energy(phi_hat: &[Complex64], sig_l: &[f64], grid: &Grid2D) -> f64 {
    let mut acc = 0.0;
    for (v, &s) in phi_hat.iter().zip(sig_l.iter()) {
        acc += s * (v.re * v.re + v.im * v.im);
    }
    0.5 * grid.cell_area() * acc / grid.num_nodes() as f64
}

fn dissipation_ok(before: f64, after: f64) -> bool {
    after <= before + 1e-10 * (1.0 + before.abs())
}

// ---------------------------------------------------------------------------
// The HSAV-RK step.

/// One step of the fully discrete HSAV-RK scheme:
/// phi^{n+1} = phi^n + dt sum_i b_i k_i, q^{n+1} = q^n + dt sum_i b_i l_i
/// with the stage values solved implicitly to `cfg.tolerance`.
pub fn hsav_rk_step(
    state: &SavState,
    model: &ModelSpec,
    tab: &ButcherTableau,
    dt: f64,
    cfg: &SolverConfig,
) -> Result<(SavState, StepReport)> {
    let (next, report, _) = rk_step_impl(state, model, tab, dt, cfg, false)?;
    Ok((next, report))
}

/// As [`hsav_rk_step`], additionally returning the converged stage data.
pub fn hsav_rk_step_detailed(
    state: &SavState,
    model: &ModelSpec,
    tab: &ButcherTableau,
    dt: f64,
    cfg: &SolverConfig,
) -> Result<(SavState, StepReport, StageData)> {
    let (next, report, data) = rk_step_impl(state, model, tab, dt, cfg, true)?;
    Ok((next, report, data.expect("stage data requested")))
}

fn rk_step_impl(
    state: &SavState,
    model: &ModelSpec,
    tab: &ButcherTableau,
    dt: f64,
    cfg: &SolverConfig,
    want_stages: bool,
) -> Result<(SavState, StepReport, Option<StageData>)> {
    match rk_step_core(state, model, tab, dt, cfg, want_stages, None, StageSolver::Picard) {
        Err(Error::StageDiverged { .. }) if cfg.mode == SolverMode::PicardPreconditioned => {
            // The frozen-potential map stops being a contraction on
            // partially saturated phase fields at large dt (its Jacobian
            // crosses 1 across the spinodal band), so escalate to the
            // Newton solve with the full pointwise linearization. A cold
            // start can still sit in the wrong basin; if Newton fails from
            // phi^n, a substep chain supplies an in-basin initial guess.
            // Either way the step itself is taken at the full dt.
            match rk_step_core(state, model, tab, dt, cfg, want_stages, None, StageSolver::Newton)
            {
                Err(Error::StageDiverged { .. }) => {
                    let guess = predictor_guess(state, model, tab, dt, cfg)?;
                    rk_step_core(
                        state,
                        model,
                        tab,
                        dt,
                        cfg,
                        want_stages,
                        Some(guess),
                        StageSolver::Newton,
                    )
                }
                other => other,
            }
        }
        other => other,
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum StageSolver {
    /// Frozen-potential sweeps with Anderson acceleration (fast path).
    Picard,
    /// Outer linearization at the current iterate, inner accelerated
    /// preconditioned Richardson solve of each Newton system.
    Newton,
}

/// Converged stage-value guess from a cold chain of substeps: the chain
/// length doubles until every substep converges, then the trajectory is
/// interpolated at the full step's stage times.
fn predictor_guess(
    state: &SavState,
    model: &ModelSpec,
    tab: &ButcherTableau,
    dt: f64,
    cfg: &SolverConfig,
) -> Result<(Vec<Field>, Vec<f64>)> {
    let mut last_err: Option<Error> = None;
    for splits in [2usize, 4, 8, 16, 32, 64, 128, 256, 512] {
        let sub_dt = dt / splits as f64;
        let mut trajectory: Vec<(f64, Field, f64)> = vec![(0.0, state.phi.clone(), state.q)];
        let mut current = state.clone();
        let mut chain_ok = true;
        for k in 0..splits {
            match rk_step_core(&current, model, tab, sub_dt, cfg, false, None, StageSolver::Picard) {
                Ok((next, _, _)) => {
                    trajectory.push(((k + 1) as f64 / splits as f64, next.phi.clone(), next.q));
                    current = next;
                }
                Err(e) => {
                    last_err = Some(e);
                    chain_ok = false;
                    break;
                }
            }
        }
        if !chain_ok {
            continue;
        }
        // Piecewise-linear interpolation of (phi, q) at tau = c_i.
        let mut phi_guess = Vec::with_capacity(tab.stages());
        let mut q_guess = Vec::with_capacity(tab.stages());
        for &c in tab.c() {
            let pos = c * splits as f64;
            let lo = (pos.floor() as usize).min(splits - 1);
            let w = pos - lo as f64;
            let (_, ref phi_lo, q_lo) = trajectory[lo];
            let (_, ref phi_hi, q_hi) = trajectory[lo + 1];
            let mut phi = phi_lo.clone();
            phi.scale(1.0 - w);
            phi.scaled_add(w, phi_hi);
            phi_guess.push(phi);
            q_guess.push((1.0 - w) * q_lo + w * q_hi);
        }
        return Ok((phi_guess, q_guess));
    }
    Err(last_err.unwrap_or(Error::StageDiverged {
        iterations: cfg.max_iterations,
        residual: f64::NAN,
        time: state.t,
    }))
}

#[allow(clippy::too_many_arguments)]
fn rk_step_core(
    state: &SavState,
    model: &ModelSpec,
    tab: &ButcherTableau,
    dt: f64,
    cfg: &SolverConfig,
    want_stages: bool,
    guess: Option<(Vec<Field>, Vec<f64>)>,
    solver: StageSolver,
) -> Result<(SavState, StepReport, Option<StageData>)> {
    let stability = tab.check_stability();
    if !stability.passes && !cfg.allow_unstable_tableau {
        return Err(Error::UnstableTableau {
            residual: stability.max_residual,
        });
    }
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be >= 0, got {dt}")));
    }
    let grid = *model.grid();
    crate::spectral::check_same_grid(state.phi.grid(), &grid, "state")?;
    let s = tab.stages();
    assert!(s <= MAX_STAGES);

    if dt == 0.0 {
        let e = energy_fourier(state, model);
        let report = StepReport {
            iterations_used: 0,
            final_residual: 0.0,
            energy_before: e,
            energy_after: e,
            dissipation_ok: true,
            dissipation_predicted: 0.0,
        };
        let data = want_stages.then(|| StageData {
            phi: vec![state.phi.clone(); s],
            q: vec![state.q; s],
            k: vec![Field::zeros(grid); s],
            l: vec![0.0; s],
        });
        return Ok((state.clone(), report, data));
    }

    let sig_g = model.mobility().values().as_slice().expect("layout");
    let sig_l = model.linear().values().as_slice().expect("layout");
    let sigma: Vec<f64> = sig_g.iter().zip(sig_l.iter()).map(|(g, l)| g * l).collect();
    let n = grid.num_nodes();

    let phi_hat_n = state.phi.forward();
    let energy_before = quad_energy(&phi_hat_n, sig_l, &grid) + state.q * state.q - model.c0();

    // Mode multiplier of the mean-field shift: identity for pointwise
    // potentials, the Laplacian eigenvalues for gradient-dependent ones.
    let ell: Vec<f64> = if model.potential().linearization_is_laplacian() {
        crate::spectral::laplacian_eigenvalues(&grid)
            .into_raw_vec_and_offset()
            .0
    } else {
        vec![1.0; n]
    };

    // Stage iterates: (phi^n, q^n) by default, or the supplied predictor.
    let (mut phi_stage, mut q_stage, mut hat_stage): (Vec<Field>, Vec<f64>, Vec<Vec<Complex64>>) =
        match guess {
            Some((phi, q)) => {
                let hats = phi.iter().map(|f| f.forward()).collect();
                (phi, q, hats)
            }
            None => (
                vec![state.phi.clone(); s],
                vec![state.q; s],
                vec![phi_hat_n.clone(); s],
            ),
        };

    let a = tab.a();

    // One application of the fixed-point map at frozen nonlinear data
    // (g'_j, r_j, and the mean-field shifts): the stage system is linear in
    // (Phi, Q) once those are frozen, and the sweep solves that linear
    // system EXACTLY. Phi_hat is expanded affinely in the stage scalars,
    // Phi_j = X0_j + sum_m Xm_j Q_m, via s+1 right-hand sides against the
    // same per-mode LU; the scalars then close as one dense s x s solve.
    // Leaving no frozen lag in the Q channel keeps the iteration stable
    // even when fold-adjacent modes amplify the remainder.
    let sweep = |frozen: &Frozen,
                 shifts: &[f64],
                 lu: Option<&ModeLu>,
                 hats_in: &[Vec<Complex64>]|
     -> Result<(Vec<Field>, Vec<Vec<Complex64>>, Vec<f64>)> {
        let mut hats_out = vec![vec![Complex64::ZERO; n]; s];
        match cfg.mode {
            SolverMode::PicardPreconditioned => {
                let lu = lu.expect("factored");
                // h_j = g'_j / sqrt(r_j): the Q_j coefficient inside w_j.
                let hq: Vec<f64> = frozen.inv2sq.iter().map(|v| 2.0 * v).collect();
                // X0 (Q = 0 response) and Xm (unit-Q_m responses).
                let mut x0 = vec![vec![Complex64::ZERO; n]; s];
                let mut xm = vec![vec![Complex64::ZERO; n]; s * s];
                let mut rhs = [Complex64::ZERO; MAX_STAGES];
                for idx in 0..n {
                    // Base system: remainder -c_j ell phi_in only.
                    for i in 0..s {
                        let mut acc = Complex64::ZERO;
                        for j in 0..s {
                            acc -= hats_in[j][idx] * (shifts[j] * ell[idx]) * a[[i, j]];
                        }
                        rhs[i] = phi_hat_n[idx] + acc * (dt * sig_g[idx]);
                    }
                    lu.solve(idx, &mut rhs[..s]);
                    for i in 0..s {
                        x0[i][idx] = rhs[i];
                    }
                    // Unit responses: rhs_i = dt sig_g a_im h_m gp_hat_m.
                    for m in 0..s {
                        let src = frozen.gp_hat[m][idx] * (hq[m] * dt * sig_g[idx]);
                        for i in 0..s {
                            rhs[i] = src * a[[i, m]];
                        }
                        lu.solve(idx, &mut rhs[..s]);
                        for i in 0..s {
                            xm[m * s + i][idx] = rhs[i];
                        }
                    }
                }

                // Stage scalars: l_j = (h_j/2, k_j)_h with
                // k_j = sig_g (sig_l Phi_j(Q) + Q_j h_j gp_j), affine in Q.
                let scale = grid.cell_area() / n as f64;
                let par = |u: &[Complex64], v: &[Complex64], w: &[f64]| -> f64 {
                    let mut acc = 0.0;
                    for ((a, b), &c) in u.iter().zip(v.iter()).zip(w.iter()) {
                        acc += c * (a.re * b.re + a.im * b.im);
                    }
                    scale * acc
                };
                let mut qmat = vec![0.0; s * s];
                let mut qrhs = vec![state.q; s];
                for i in 0..s {
                    for j in 0..s {
                        qmat[i * s + j] = if i == j { 1.0 } else { 0.0 };
                    }
                }
                for j in 0..s {
                    let l0 = 0.5 * hq[j] * par(&frozen.gp_hat[j], &x0[j], &sigma);
                    for i in 0..s {
                        qrhs[i] += dt * a[[i, j]] * l0;
                    }
                    for m in 0..s {
                        let mut coeff =
                            0.5 * hq[j] * par(&frozen.gp_hat[j], &xm[m * s + j], &sigma);
                        if m == j {
                            coeff += 0.5
                                * hq[j]
                                * hq[j]
                                * par(&frozen.gp_hat[j], &frozen.gp_hat[j], sig_g);
                        }
                        for i in 0..s {
                            qmat[i * s + m] -= dt * a[[i, j]] * coeff;
                        }
                    }
                }
                let q_new = solve_dense(&qmat, &qrhs)?;

                for i in 0..s {
                    let hat = &mut hats_out[i];
                    for idx in 0..n {
                        let mut v = x0[i][idx];
                        for m in 0..s {
                            v += xm[m * s + i][idx] * q_new[m];
                        }
                        hat[idx] = v;
                    }
                }
                let fields: Vec<Field> =
                    hats_out.iter().map(|h| inverse_hat(&grid, h)).collect();
                return Ok((fields, hats_out, q_new));
            }
            SolverMode::FullPicard => {
                // k_hat_j = sig_g (sig_l phi_hat_j + cw_j gp_hat_j) at the
                // previous iterate, everything explicit.
                for idx in 0..n {
                    for i in 0..s {
                        let mut acc = Complex64::ZERO;
                        for j in 0..s {
                            let k_j = (hats_in[j][idx] * sig_l[idx]
                                + frozen.gp_hat[j][idx] * frozen.cw[j])
                                * sig_g[idx];
                            acc += k_j * a[[i, j]];
                        }
                        hats_out[i][idx] = phi_hat_n[idx] + acc * dt;
                    }
                }
            }
        }
        let fields: Vec<Field> = hats_out.iter().map(|h| inverse_hat(&grid, h)).collect();

        // Full-Picard stage scalars, everything at the previous iterate:
        // l_j = alpha_j + beta_j Q_j solved as an s x s system.
        let mut alpha = [0.0; MAX_STAGES];
        let mut beta = [0.0; MAX_STAGES];
        for j in 0..s {
            let mut acc_a = 0.0;
            let mut acc_b = 0.0;
            for idx in 0..n {
                let gph = frozen.gp_hat[j][idx];
                let ph = hats_out[j][idx];
                acc_a += sigma[idx] * (gph.re * ph.re + gph.im * ph.im);
                acc_b += sig_g[idx] * (gph.re * gph.re + gph.im * gph.im);
            }
            let scale = grid.cell_area() / n as f64;
            alpha[j] = frozen.inv2sq[j] * scale * acc_a;
            beta[j] = frozen.inv2sq[j] * 2.0 * frozen.inv2sq[j] * scale * acc_b;
        }
        let mut qmat = vec![0.0; s * s];
        let mut qrhs = vec![0.0; s];
        for i in 0..s {
            for j in 0..s {
                qmat[i * s + j] = if i == j { 1.0 } else { 0.0 } - dt * a[[i, j]] * beta[j];
            }
            qrhs[i] = state.q + dt * (0..s).map(|j| a[[i, j]] * alpha[j]).sum::<f64>();
        }
        let q_new = solve_dense(&qmat, &qrhs)?;
        Ok((fields, hats_out, q_new))
    };

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut prev_frozen: Option<Frozen> = None;
    // The initial guess is not a map output; sweep outputs are.
    let mut x_is_sweep_output = false;
    let mut anderson = Anderson::new(ANDERSON_DEPTH);
    // Last sweep output, kept as a restart point while the iterate is an
    // accelerated combination.
    let mut last_sweep: Option<(Vec<Field>, Vec<Vec<Complex64>>, Vec<f64>)> = None;

    let frozen = loop {
        let frozen = match Frozen::eval(model, &phi_stage, &q_stage) {
            Ok(f) => f,
            Err(e @ Error::NonpositiveRadicand { .. }) if !x_is_sweep_output => {
                // An accelerated iterate overshot the radicand guard; fall
                // back to the last genuine sweep output and restart the
                // acceleration history from there.
                match last_sweep.take() {
                    Some((pf, ph, pq)) => {
                        phi_stage = pf;
                        hat_stage = ph;
                        q_stage = pq;
                        anderson.clear();
                        x_is_sweep_output = true;
                        continue;
                    }
                    None => return Err(e),
                }
            }
            Err(e) => return Err(e),
        };
        if let Some(prev) = &prev_frozen {
            // With all shifts zero the sweep reads the iterate only through
            // the frozen data, so stagnant frozen data means the current
            // sweep output is already the fixed point (the g = 0
            // one-iteration path).
            if x_is_sweep_output
                && frozen.shift.iter().all(|c| *c == 0.0)
                && frozen.same_as(prev)
            {
                residual = 0.0;
                break frozen;
            }
        }
        if residual <= cfg.tolerance {
            break frozen;
        }
        if iterations >= cfg.max_iterations {
            return Err(Error::StageDiverged {
                iterations,
                residual,
                time: state.t,
            });
        }
        iterations += 1;

        // Factor the shifted stage matrices for this sweep. A shift can sit
        // on a fold of the linearized-at-mean problem and make an isolated
        // mode matrix singular; halving the shift moves off the fold while
        // leaving the fixed point unchanged.
        let mut shifts = frozen.shift.clone();
        let lu = match cfg.mode {
            SolverMode::FullPicard => None,
            SolverMode::PicardPreconditioned => loop {
                match ModeLu::factor(a, sig_g, sig_l, &ell, &shifts, dt) {
                    Ok(lu) => break Some(lu),
                    Err(SingularMode) => {
                        if shifts.iter().all(|c| c.abs() < 1e-12) {
                            return Err(Error::InvalidParameter(
                                "singular stage matrix; tableau or symbols are degenerate"
                                    .into(),
                            ));
                        }
                        for c in shifts.iter_mut() {
                            *c *= 0.5;
                            if c.abs() < 1e-12 {
                                *c = 0.0;
                            }
                        }
                    }
                }
            },
        };

        let (new_fields, new_hats, new_q) = sweep(&frozen, &shifts, lu.as_ref(), &hat_stage)?;

        // Convergence metric: max over stages of ||dPhi||_inf + |dQ|.
        // NaN (a diverging full-Picard iterate) must poison the metric, so
        // plain f64::max is not enough.
        let nan_max = |a: f64, b: f64| if b.is_nan() || b > a { b } else { a };
        let mut increment: f64 = 0.0;
        for i in 0..s {
            let mut diff: f64 = 0.0;
            for (nw, old) in new_fields[i].values().iter().zip(phi_stage[i].values().iter()) {
                diff = nan_max(diff, (nw - old).abs());
            }
            increment = nan_max(increment, diff + (new_q[i] - q_stage[i]).abs());
        }
        residual = increment;

        let accelerate = cfg.mode == SolverMode::PicardPreconditioned
            && increment > cfg.tolerance
            && iterations > ANDERSON_WARMUP;
        anderson.push(&phi_stage, &q_stage, &new_fields, &new_q);
        if accelerate {
            if let Some((acc_fields, acc_q)) = anderson.combine(&grid, s) {
                last_sweep = Some((new_fields, new_hats, new_q));
                // The shifted remainder reads the iterate's spectra, so the
                // accelerated fields are transformed here.
                hat_stage = acc_fields.iter().map(|f| f.forward()).collect();
                phi_stage = acc_fields;
                q_stage = acc_q;
                x_is_sweep_output = false;
                prev_frozen = Some(frozen);
                continue;
            }
        }
        phi_stage = new_fields;
        hat_stage = new_hats;
        q_stage = new_q;
        x_is_sweep_output = true;
        last_sweep = None;
        prev_frozen = Some(frozen);
    };

    // Final evaluation at the converged stages; the update and the
    // dissipation identity both use these k_i, l_i.
    let b = tab.b();
    let mut phi_next_hat = phi_hat_n.clone();
    let mut q_next = state.q;
    let mut predicted = 0.0;
    let mut k_hats: Vec<Vec<Complex64>> = Vec::new();
    let mut l_all = vec![0.0; s];
    for j in 0..s {
        let mut k_hat = vec![Complex64::ZERO; n];
        let mut mu_dot_k = 0.0;
        for idx in 0..n {
            let mu = hat_stage[j][idx] * sig_l[idx] + frozen.gp_hat[j][idx] * frozen.cw[j];
            let k = mu * sig_g[idx];
            mu_dot_k += mu.re * k.re + mu.im * k.im;
            k_hat[idx] = k;
        }
        let scale = grid.cell_area() / n as f64;
        let l_j = frozen.inv2sq[j] * inner_fourier(&frozen.gp_hat[j], &k_hat, &grid);
        predicted += b[j] * scale * mu_dot_k;
        for idx in 0..n {
            phi_next_hat[idx] += k_hat[idx] * (dt * b[j]);
        }
        q_next += dt * b[j] * l_j;
        l_all[j] = l_j;
        if want_stages {
            k_hats.push(k_hat);
        }
    }
    predicted *= dt;

    let energy_after = quad_energy(&phi_next_hat, sig_l, &grid) + q_next * q_next - model.c0();
    let phi_next = inverse_hat(&grid, &phi_next_hat);
    phi_next.check_finite("step output")?;

    let report = StepReport {
        iterations_used: iterations,
        final_residual: residual,
        energy_before,
        energy_after,
        dissipation_ok: dissipation_ok(energy_before, energy_after),
        dissipation_predicted: predicted,
    };
    let data = want_stages.then(|| StageData {
        phi: phi_stage.clone(),
        q: q_stage.clone(),
        k: k_hats.iter().map(|kh| inverse_hat(&grid, kh)).collect(),
        l: l_all,
    });
    let next = SavState {
        phi: phi_next,
        q: q_next,
        t: state.t + dt,
    };
    Ok((next, report, data))
}

fn energy_fourier(state: &SavState, model: &ModelSpec) -> f64 {
    let hat = state.phi.forward();
    let sig_l = model.linear().values().as_slice().expect("layout");
    quad_energy(&hat, sig_l, model.grid()) + state.q * state.q - model.c0()
}

// ---------------------------------------------------------------------------
// SAV Crank-Nicolson baseline.

/// One linearly implicit SAV-CN step. The nonlinear coefficient is evaluated
/// at the extrapolation phi* = (3 phi^n - phi^{n-1}) / 2; without history
/// (the first step) the step is bootstrapped by one 1-stage Gauss step,
/// which is itself unconditionally dissipative.
pub fn sav_cn_step(
    state: &SavState,
    model: &ModelSpec,
    dt: f64,
    history: Option<&Field>,
    cfg: &SolverConfig,
) -> Result<(SavState, StepReport)> {
    let prev = match history {
        Some(p) => p,
        None => {
            let tab = gauss_tableau(1)?;
            let (next, report) = hsav_rk_step(state, model, &tab, dt, cfg)?;
            return Ok((next, report));
        }
    };
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be >= 0, got {dt}")));
    }
    let grid = *model.grid();
    if dt == 0.0 {
        let e = energy_fourier(state, model);
        return Ok((
            state.clone(),
            StepReport {
                iterations_used: 0,
                final_residual: 0.0,
                energy_before: e,
                energy_after: e,
                dissipation_ok: true,
                dissipation_predicted: 0.0,
            },
        ));
    }

    let sig_g = model.mobility().values().as_slice().expect("layout");
    let sig_l = model.linear().values().as_slice().expect("layout");
    let n = grid.num_nodes();

    // phi* and the normalized potential slope b* = g'(phi*) / sqrt(r*).
    let mut phi_star = state.phi.clone();
    phi_star.scale(1.5);
    phi_star.scaled_add(-0.5, prev);
    let r_star = model.radicand(&phi_star)?;
    let b_star = {
        let mut g = model.potential().variation(&phi_star)?;
        g.scale(1.0 / r_star.sqrt());
        g
    };
    let b_hat = b_star.forward();
    let phi_hat = state.phi.forward();
    let energy_before = quad_energy(&phi_hat, sig_l, &grid) + state.q * state.q - model.c0();

    // (1 - dt sigma / 2) phi^{n+1} = (1 + dt sigma / 2) phi^n
    //                                + dt sig_g b* (q^n + q^{n+1}) / 2,
    // q^{n+1} = q^n + (b*/2, phi^{n+1} - phi^n)_h:
    // solved exactly with two diagonal resolvents and one scalar division.
    let mut psi1 = vec![Complex64::ZERO; n];
    let mut psi2 = vec![Complex64::ZERO; n];
    for idx in 0..n {
        let sigma = sig_g[idx] * sig_l[idx];
        let denom = 1.0 - 0.5 * dt * sigma;
        psi1[idx] = (phi_hat[idx] * (1.0 + 0.5 * dt * sigma)
            + b_hat[idx] * (0.5 * dt * sig_g[idx] * state.q))
            / denom;
        psi2[idx] = b_hat[idx] * (0.5 * dt * sig_g[idx]) / denom;
    }
    let gamma = 0.5 * inner_fourier(&b_hat, &psi2, &grid);
    let mut rhs_q = state.q;
    {
        let diff: Vec<Complex64> = psi1
            .iter()
            .zip(phi_hat.iter())
            .map(|(a, b)| a - b)
            .collect();
        rhs_q += 0.5 * inner_fourier(&b_hat, &diff, &grid);
    }
    let q_next = rhs_q / (1.0 - gamma);
    let mut phi_next_hat = psi1;
    for (v, p2) in phi_next_hat.iter_mut().zip(psi2.iter()) {
        *v += p2 * q_next;
    }

    // Midpoint chemical potential for the dissipation identity:
    // mu_bar = L phi_bar + q_bar b*, energy decrement = dt (mu_bar, G mu_bar).
    let q_bar = 0.5 * (state.q + q_next);
    let mut predicted = 0.0;
    for idx in 0..n {
        let phi_bar = (phi_hat[idx] + phi_next_hat[idx]) * 0.5;
        let mu = phi_bar * sig_l[idx] + b_hat[idx] * q_bar;
        predicted += sig_g[idx] * (mu.re * mu.re + mu.im * mu.im);
    }
    predicted *= dt * grid.cell_area() / n as f64;

    let energy_after = quad_energy(&phi_next_hat, sig_l, &grid) + q_next * q_next - model.c0();
    let phi_next = inverse_hat(&grid, &phi_next_hat);
    phi_next.check_finite("cn step output")?;

    Ok((
        SavState {
            phi: phi_next,
            q: q_next,
            t: state.t + dt,
        },
        StepReport {
            iterations_used: 1,
            final_residual: 0.0,
            energy_before,
            energy_after,
            dissipation_ok: dissipation_ok(energy_before, energy_after),
            dissipation_predicted: predicted,
        },
    ))
}

// ---------------------------------------------------------------------------
// Integration loop.

/// Observer invoked every `stride` accepted steps (and on the final step).
pub struct ObserverEntry<'a> {
    stride: usize,
    callback: Box<dyn FnMut(usize, &SavState, &StepReport) + 'a>,
}

impl<'a> ObserverEntry<'a> {
    pub fn every(
        stride: usize,
        callback: impl FnMut(usize, &SavState, &StepReport) + 'a,
    ) -> Self {
        ObserverEntry {
            stride: stride.max(1),
            callback: Box::new(callback),
        }
    }
}

/// Advances `state` to `t_end` with fixed steps of `dt` (the final step is
/// shortened to land exactly on `t_end`). Observers see every stride-th
/// step. Step failures carry the step index and time.
pub fn integrate(
    state: SavState,
    model: &ModelSpec,
    method: Method,
    dt: f64,
    t_end: f64,
    observers: &mut [ObserverEntry],
    cfg: &SolverConfig,
) -> Result<SavState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    if t_end < state.t {
        return Err(Error::InvalidParameter(format!(
            "t_end = {t_end} lies before the state time {}",
            state.t
        )));
    }
    let tab = match method {
        Method::Gauss(s) => Some(gauss_tableau(s)?),
        Method::Cn => None,
    };
    let t0 = state.t;
    let mut current = state;
    let mut prev_phi: Option<Field> = None;
    let mut step_index = 0usize;
    loop {
        let remaining = t_end - current.t;
        if remaining <= 1e-12 * dt.max(1.0) {
            break;
        }
        let step_dt = dt.min(remaining);
        let step_result = match (&tab, method) {
            (Some(tab), _) => hsav_rk_step(&current, model, tab, step_dt, cfg),
            (None, Method::Cn) => sav_cn_step(&current, model, step_dt, prev_phi.as_ref(), cfg),
            _ => unreachable!(),
        };
        let (mut next, report) = step_result.map_err(|e| Error::StepFailed {
            step: step_index,
            time: current.t,
            source: Box::new(e),
        })?;
        // Keep the clock exact: t = t0 + (n+1) dt for whole steps.
        next.t = if step_dt == dt {
            t0 + (step_index as f64 + 1.0) * dt
        } else {
            t_end
        };
        if matches!(method, Method::Cn) {
            prev_phi = Some(current.phi.clone());
        }
        step_index += 1;
        let done = t_end - next.t <= 1e-12 * dt.max(1.0);
        for obs in observers.iter_mut() {
            if step_index % obs.stride == 0 || done {
                (obs.callback)(step_index, &next, &report);
            }
        }
        current = next;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{allen_cahn, cahn_hilliard, AllenCahnParams, CahnHilliardParams};
    use crate::sav::{energy, init_consistent, stage_rhs, Potential};
    use crate::spectral::{make_operator_symbol, norm_h, SymbolKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid_2pi(n: usize) -> Grid2D {
        Grid2D::new(n, n, 2.0 * PI, 2.0 * PI).unwrap()
    }

    /// Pure linear flow phi_t = G L phi (g = 0).
    fn linear_model(grid: Grid2D) -> ModelSpec {
        let mobility = make_operator_symbol(&grid, &[(0, -1.0)], SymbolKind::MobilityG).unwrap();
        let linear =
            make_operator_symbol(&grid, &[(1, -1.0), (0, 1.0)], SymbolKind::LinearL).unwrap();
        ModelSpec::new("linear", mobility, linear, Potential::Zero, 1.0, 0.0).unwrap()
    }

    fn smooth_state(grid: Grid2D, model: &ModelSpec) -> SavState {
        let phi = Field::from_fn(grid, |x, y| 0.4 * x.sin() * y.sin() + 0.2 * (2.0 * x).cos());
        init_consistent(phi, model).unwrap()
    }

    #[test]
    fn linear_flow_reduces_to_per_mode_midpoint() {
        let grid = grid_2pi(16);
        let model = linear_model(grid);
        let state = smooth_state(grid, &model);
        let tab = gauss_tableau(1).unwrap();
        let dt = 0.7;
        let (next, report) =
            hsav_rk_step(&state, &model, &tab, dt, &SolverConfig::default()).unwrap();

        // Each mode advances by the midpoint factor (1 + dt s/2)/(1 - dt s/2).
        let before = state.phi.forward();
        let after = next.phi.forward();
        let sig_g = model.mobility().values().as_slice().unwrap();
        let sig_l = model.linear().values().as_slice().unwrap();
        for idx in 0..grid.num_nodes() {
            let s = sig_g[idx] * sig_l[idx];
            let factor = (1.0 + 0.5 * dt * s) / (1.0 - 0.5 * dt * s);
            let expected = before[idx] * factor;
            assert!(
                (after[idx] - expected).norm() <= 1e-12 * (1.0 + expected.norm()),
                "mode {idx}: {} vs {expected}",
                after[idx]
            );
        }
        assert_eq!(report.iterations_used, 1);
        assert!(report.dissipation_ok);
    }

    #[test]
    fn cn_equals_midpoint_for_linear_flow() {
        let grid = grid_2pi(16);
        let model = linear_model(grid);
        let state = smooth_state(grid, &model);
        let dt = 0.3;
        let history = state.phi.clone(); // any history: b* = 0 regardless
        let (next, _) =
            sav_cn_step(&state, &model, dt, Some(&history), &SolverConfig::default()).unwrap();
        let tab = gauss_tableau(1).unwrap();
        let (mid, _) = hsav_rk_step(&state, &model, &tab, dt, &SolverConfig::default()).unwrap();
        let mut err: f64 = 0.0;
        for (a, b) in next.phi.values().iter().zip(mid.phi.values().iter()) {
            err = err.max((a - b).abs());
        }
        assert!(err <= 1e-12, "cn vs midpoint: {err}");
        assert!((next.q - mid.q).abs() <= 1e-13);
    }

    #[test]
    fn zero_dt_is_identity() {
        let grid = grid_2pi(8);
        let model = allen_cahn(AllenCahnParams::default(), grid).unwrap();
        let state = smooth_state(grid, &model);
        let tab = gauss_tableau(2).unwrap();
        let (next, report) =
            hsav_rk_step(&state, &model, &tab, 0.0, &SolverConfig::default()).unwrap();
        assert!(report.iterations_used <= 1);
        assert_eq!(next.q, state.q);
        assert_eq!(next.phi.values(), state.phi.values());
    }

    #[test]
    fn stage_relations_hold_after_convergence() {
        let grid = grid_2pi(16);
        let model = allen_cahn(AllenCahnParams::default(), grid).unwrap();
        let state = smooth_state(grid, &model);
        let tab = gauss_tableau(2).unwrap();
        let cfg = SolverConfig::default();
        let dt = 0.05;
        let (_, _, data) = hsav_rk_step_detailed(&state, &model, &tab, dt, &cfg).unwrap();

        for i in 0..tab.stages() {
            let mut recon = state.phi.clone();
            let mut recon_q = state.q;
            for j in 0..tab.stages() {
                recon.scaled_add(dt * tab.a()[[i, j]], &data.k[j]);
                recon_q += dt * tab.a()[[i, j]] * data.l[j];
            }
            let mut diff: f64 = 0.0;
            for (a, b) in recon.values().iter().zip(data.phi[i].values().iter()) {
                diff = diff.max((a - b).abs());
            }
            assert!(diff <= 100.0 * cfg.tolerance, "stage {i} residual {diff}");
            assert!((recon_q - data.q[i]).abs() <= 100.0 * cfg.tolerance);
        }
    }

    #[test]
    fn stage_derivatives_match_public_stage_rhs() {
        let grid = grid_2pi(16);
        let model = allen_cahn(AllenCahnParams::default(), grid).unwrap();
        let state = smooth_state(grid, &model);
        let tab = gauss_tableau(2).unwrap();
        let (_, _, data) =
            hsav_rk_step_detailed(&state, &model, &tab, 0.02, &SolverConfig::default()).unwrap();
        for i in 0..tab.stages() {
            let (k, l) = stage_rhs(&data.phi[i], data.q[i], &model).unwrap();
            let mut diff: f64 = 0.0;
            for (a, b) in k.values().iter().zip(data.k[i].values().iter()) {
                diff = diff.max((a - b).abs());
            }
            assert!(diff <= 1e-11 * (1.0 + k.max_abs()), "stage {i}: k diff {diff}");
            assert!((l - data.l[i]).abs() <= 1e-11 * (1.0 + l.abs()));
        }
    }

    #[test]
    fn dissipation_holds_across_step_sizes() {
        let grid = grid_2pi(32);
        let model = allen_cahn(AllenCahnParams::default(), grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut phi = Field::zeros(grid);
        phi.values_mut().mapv_inplace(|_| rng.gen_range(-0.8..0.8));
        let state = init_consistent(phi, &model).unwrap();
        let tab = gauss_tableau(2).unwrap();
        for dt in [1e-3, 1e-1, 1.0, 10.0] {
            let (next, report) =
                hsav_rk_step(&state, &model, &tab, dt, &SolverConfig::default()).unwrap();
            assert!(
                report.dissipation_ok,
                "dt = {dt}: E {} -> {}",
                report.energy_before, report.energy_after
            );
            // The reported decrement matches the stage-wise identity.
            let delta = report.energy_after - report.energy_before;
            assert!(
                (delta - report.dissipation_predicted).abs()
                    <= 1e-8 * (1.0 + report.energy_before.abs()),
                "dt = {dt}: delta {delta} vs predicted {}",
                report.dissipation_predicted
            );
            assert!(next.phi.check_finite("next").is_ok());
        }
    }

    #[test]
    fn energies_in_report_match_sav_energy() {
        let grid = grid_2pi(16);
        let model = allen_cahn(AllenCahnParams::default(), grid).unwrap();
        let state = smooth_state(grid, &model);
        let tab = gauss_tableau(2).unwrap();
        let (next, report) =
            hsav_rk_step(&state, &model, &tab, 0.1, &SolverConfig::default()).unwrap();
        let e0 = energy(&state, &model).unwrap().modified;
        let e1 = energy(&next, &model).unwrap().modified;
        assert!((report.energy_before - e0).abs() <= 1e-10 * (1.0 + e0.abs()));
        assert!((report.energy_after - e1).abs() <= 1e-10 * (1.0 + e1.abs()));
    }

    #[test]
    fn unstable_tableau_requires_override() {
        let grid = grid_2pi(8);
        let model = allen_cahn(AllenCahnParams::default(), grid).unwrap();
        let state = smooth_state(grid, &model);
        // Trapezoid-as-tableau fails the algebraic condition.
        let a = Array2::from_shape_vec((2, 2), vec![0.0, 0.0, 0.5, 0.5]).unwrap();
        let tab = ButcherTableau::new(a, vec![0.5, 0.5], vec![0.0, 1.0]).unwrap();
        let cfg = SolverConfig::default();
        assert!(matches!(
            hsav_rk_step(&state, &model, &tab, 0.01, &cfg),
            Err(Error::UnstableTableau { .. })
        ));
        let cfg_override = SolverConfig {
            allow_unstable_tableau: true,
            ..cfg
        };
        assert!(hsav_rk_step(&state, &model, &tab, 0.01, &cfg_override).is_ok());
    }

    #[test]
    fn full_picard_agrees_with_preconditioned_at_small_dt() {
        let grid = grid_2pi(16);
        let model = allen_cahn(AllenCahnParams::default(), grid).unwrap();
        let state = smooth_state(grid, &model);
        let tab = gauss_tableau(2).unwrap();
        let dt = 1e-3;
        let cfg_pre = SolverConfig::default();
        let cfg_full = SolverConfig {
            mode: SolverMode::FullPicard,
            ..cfg_pre
        };
        let (a, _) = hsav_rk_step(&state, &model, &tab, dt, &cfg_pre).unwrap();
        let (b, _) = hsav_rk_step(&state, &model, &tab, dt, &cfg_full).unwrap();
        let mut err: f64 = 0.0;
        for (x, y) in a.phi.values().iter().zip(b.phi.values().iter()) {
            err = err.max((x - y).abs());
        }
        assert!(err <= 1e-10, "mode disagreement {err}");
        assert!((a.q - b.q).abs() <= 1e-10);
    }

    #[test]
    fn non_convergence_is_reported() {
        let grid = grid_2pi(16);
        let model = allen_cahn(AllenCahnParams::default(), grid).unwrap();
        let state = smooth_state(grid, &model);
        let tab = gauss_tableau(2).unwrap();
        // Full Picard at a large step diverges; the step must fail loudly.
        let cfg = SolverConfig {
            mode: SolverMode::FullPicard,
            max_iterations: 30,
            ..SolverConfig::default()
        };
        match hsav_rk_step(&state, &model, &tab, 5.0, &cfg) {
            Err(Error::StageDiverged { iterations, .. }) => assert_eq!(iterations, 30),
            Err(Error::NonpositiveRadicand { .. }) => {} // blow-up can trip the guard first
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn integrate_time_bookkeeping_is_exact() {
        let grid = grid_2pi(8);
        let model = linear_model(grid);
        let state = smooth_state(grid, &model);
        let cfg = SolverConfig::default();

        // t_end = state.t: no steps.
        let same = integrate(state.clone(), &model, Method::Gauss(1), 0.1, 0.0, &mut [], &cfg)
            .unwrap();
        assert_eq!(same.t, 0.0);
        assert_eq!(same.phi.values(), state.phi.values());

        // n whole steps land on t0 + n dt exactly.
        let dt = 0.1;
        let out = integrate(state.clone(), &model, Method::Gauss(1), dt, 0.7, &mut [], &cfg)
            .unwrap();
        assert!((out.t - 0.7).abs() <= 1e-12);

        // A non-dividing t_end is reached by one shortened step.
        let out = integrate(state, &model, Method::Gauss(1), 0.4, 0.5, &mut [], &cfg).unwrap();
        assert!((out.t - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn observers_fire_at_strides_and_final_step() {
        let grid = grid_2pi(8);
        let model = linear_model(grid);
        let state = smooth_state(grid, &model);
        let cfg = SolverConfig::default();
        let mut seen = Vec::new();
        {
            let mut obs = [ObserverEntry::every(3, |step, st, _| {
                seen.push((step, st.t));
            })];
            integrate(state, &model, Method::Gauss(1), 0.1, 1.0, &mut obs, &cfg).unwrap();
        }
        let steps: Vec<usize> = seen.iter().map(|(s, _)| *s).collect();
        assert_eq!(steps, vec![3, 6, 9, 10]);
    }

    #[test]
    fn cn_integration_conserves_cahn_hilliard_mass() {
        let grid = grid_2pi(16);
        let model = cahn_hilliard(
            CahnHilliardParams {
                lambda: 0.1,
                eps: 0.2,
                ..Default::default()
            },
            grid,
        )
        .unwrap();
        let phi = Field::from_fn(grid, |x, y| 0.1 + 0.3 * x.sin() * y.sin());
        let state = init_consistent(phi, &model).unwrap();
        let mean0 = state.phi.mean();
        let cfg = SolverConfig::default();
        let mut max_drift: f64 = 0.0;
        {
            let mut obs = [ObserverEntry::every(1, |_, st, _| {
                max_drift = max_drift.max((st.phi.mean() - mean0).abs());
            })];
            integrate(state, &model, Method::Cn, 1e-3, 0.1, &mut obs, &cfg).unwrap();
        }
        assert!(
            max_drift <= 1e-10 * (1.0 + mean0.abs()),
            "mass drift {max_drift}"
        );
    }

    #[test]
    fn gauss_integration_dissipates_energy_monotonically() {
        let grid = grid_2pi(16);
        let model = allen_cahn(AllenCahnParams::default(), grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let mut phi = Field::zeros(grid);
        phi.values_mut().mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        let state = init_consistent(phi, &model).unwrap();
        let cfg = SolverConfig::default();
        let mut violations = 0;
        {
            let mut obs = [ObserverEntry::every(1, |_, _, report: &StepReport| {
                if !report.dissipation_ok {
                    violations += 1;
                }
            })];
            integrate(state, &model, Method::Gauss(3), 0.5, 10.0, &mut obs, &cfg).unwrap();
        }
        assert_eq!(violations, 0);
    }

    #[test]
    fn method_parsing() {
        assert_eq!(Method::parse("cn").unwrap(), Method::Cn);
        assert_eq!(Method::parse("gauss3").unwrap(), Method::Gauss(3));
        assert!(Method::parse("gauss0").is_err());
        assert!(Method::parse("rk4").is_err());
        assert_eq!(Method::Gauss(2).name(), "gauss2");
    }

    #[test]
    fn norm_is_small_sanity() {
        // Guards the test helpers themselves.
        let grid = grid_2pi(8);
        let model = linear_model(grid);
        let state = smooth_state(grid, &model);
        assert!(norm_h(&state.phi) > 0.1);
    }
}
