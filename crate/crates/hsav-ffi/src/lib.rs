//! C ABI for the hsav solver library: opaque handles, integer status codes,
//! and a thread-local last-error message. The header is generated by
//! cbindgen into `include/hsav.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use hsav::models::{
    allen_cahn, cahn_hilliard, mbe, AllenCahnParams, CahnHilliardParams, MbeParams,
};
use hsav::sav::{energy, init_consistent};
use hsav::spectral::snapshot;
use hsav::stepper::{hsav_rk_step, integrate, Method, SolverConfig};
use hsav::tableau::gauss_tableau;
use hsav::{Error, Field, Grid2D, ModelSpec, SavState};

/// Status codes returned by every fallible call.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsavStatus {
    Ok = 0,
    /// Invalid argument or configuration.
    InvalidArgument = 1,
    /// Numerical failure (non-convergence, radicand loss, instability).
    Numerical = 2,
    /// I/O or file-format failure.
    Io = 3,
    /// A required pointer was null.
    NullPointer = 4,
    /// A panic crossed the boundary; the library state is still valid.
    Panic = 5,
}

/// Opaque periodic grid.
pub struct HsavGrid(Grid2D);
/// Opaque gradient-flow model.
pub struct HsavModel(ModelSpec);
/// Opaque solver state (phi, q, t).
pub struct HsavState(SavState);

/// Per-step diagnostics mirrored from the solver.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HsavStepReport {
    pub iterations_used: u64,
    pub final_residual: f64,
    pub energy_before: f64,
    pub energy_after: f64,
    /// 1 when the modified energy did not increase beyond solver noise.
    pub dissipation_ok: i32,
    pub dissipation_predicted: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> HsavStatus {
    match err.exit_code() {
        1 => HsavStatus::InvalidArgument,
        3 => HsavStatus::Io,
        _ => HsavStatus::Numerical,
    }
}

fn fail(err: Error) -> HsavStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

fn guarded(f: impl FnOnce() -> HsavStatus) -> HsavStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            HsavStatus::Panic
        }
    }
}

/// Last error message for this thread; valid until the next failing call.
#[no_mangle]
pub extern "C" fn hsav_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn hsav_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ---------------------------------------------------------------------------
// Grid

/// Creates a periodic nx x ny grid on [0, lx) x [0, ly).
///
/// # Safety
/// `out` must be a valid pointer; the result must be freed with
/// `hsav_grid_free`.
#[no_mangle]
pub unsafe extern "C" fn hsav_grid_new(
    nx: u32,
    ny: u32,
    lx: f64,
    ly: f64,
    out: *mut *mut HsavGrid,
) -> HsavStatus {
    if out.is_null() {
        return HsavStatus::NullPointer;
    }
    guarded(|| match Grid2D::new(nx as usize, ny as usize, lx, ly) {
        Ok(grid) => {
            *out = Box::into_raw(Box::new(HsavGrid(grid)));
            HsavStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// # Safety
/// `grid` must come from `hsav_grid_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hsav_grid_free(grid: *mut HsavGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of nodes nx * ny, or 0 for a null grid.
///
/// # Safety
/// `grid` must be a live grid handle.
#[no_mangle]
pub unsafe extern "C" fn hsav_grid_num_nodes(grid: *const HsavGrid) -> u64 {
    if grid.is_null() {
        return 0;
    }
    (*grid).0.num_nodes() as u64
}

// ---------------------------------------------------------------------------
// Models

unsafe fn model_out(
    out: *mut *mut HsavModel,
    build: impl FnOnce() -> hsav::Result<ModelSpec>,
) -> HsavStatus {
    if out.is_null() {
        return HsavStatus::NullPointer;
    }
    match build() {
        Ok(model) => {
            *out = Box::into_raw(Box::new(HsavModel(model)));
            HsavStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Allen-Cahn model: phi_t = -m (-eps^2 lap phi + phi^3 - phi).
///
/// # Safety
/// `grid` must be a live grid handle; `out` must be valid and later freed
/// with `hsav_model_free`.
#[no_mangle]
pub unsafe extern "C" fn hsav_model_allen_cahn(
    grid: *const HsavGrid,
    m: f64,
    eps: f64,
    gamma0: f64,
    c0: f64,
    out: *mut *mut HsavModel,
) -> HsavStatus {
    if grid.is_null() {
        return HsavStatus::NullPointer;
    }
    let g = (*grid).0;
    guarded(|| model_out(out, || allen_cahn(AllenCahnParams { m, eps, gamma0, c0 }, g)))
}

/// Cahn-Hilliard model: phi_t = lambda lap (-eps^2 lap phi + phi^3 - phi).
///
/// # Safety
/// As `hsav_model_allen_cahn`.
#[no_mangle]
pub unsafe extern "C" fn hsav_model_cahn_hilliard(
    grid: *const HsavGrid,
    lambda: f64,
    eps: f64,
    gamma0: f64,
    c0: f64,
    out: *mut *mut HsavModel,
) -> HsavStatus {
    if grid.is_null() {
        return HsavStatus::NullPointer;
    }
    let g = (*grid).0;
    guarded(|| {
        model_out(out, || {
            cahn_hilliard(
                CahnHilliardParams {
                    lambda,
                    eps,
                    gamma0,
                    c0,
                },
                g,
            )
        })
    })
}

/// Thin-film (MBE) model with slope selection.
///
/// # Safety
/// As `hsav_model_allen_cahn`.
#[no_mangle]
pub unsafe extern "C" fn hsav_model_mbe(
    grid: *const HsavGrid,
    m: f64,
    eps2: f64,
    gamma0: f64,
    c0: f64,
    out: *mut *mut HsavModel,
) -> HsavStatus {
    if grid.is_null() {
        return HsavStatus::NullPointer;
    }
    let g = (*grid).0;
    guarded(|| model_out(out, || mbe(MbeParams { m, eps2, gamma0, c0 }, g)))
}

/// # Safety
/// `model` must come from a model constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hsav_model_free(model: *mut HsavModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---------------------------------------------------------------------------
// State

/// Builds a state from nodal values (row-major, x index outermost) with the
/// consistent q initialization at t = 0.
///
/// # Safety
/// `values` must point to nx*ny doubles matching the model's grid; `out`
/// must be valid and later freed with `hsav_state_free`.
#[no_mangle]
pub unsafe extern "C" fn hsav_state_init(
    model: *const HsavModel,
    values: *const f64,
    len: u64,
    out: *mut *mut HsavState,
) -> HsavStatus {
    if model.is_null() || values.is_null() || out.is_null() {
        return HsavStatus::NullPointer;
    }
    let model = &(*model).0;
    let grid = *model.grid();
    if len as usize != grid.num_nodes() {
        set_error("value buffer length does not match the grid");
        return HsavStatus::InvalidArgument;
    }
    let slice = std::slice::from_raw_parts(values, len as usize);
    guarded(|| {
        let array = match ndarray::Array2::from_shape_vec((grid.nx(), grid.ny()), slice.to_vec())
        {
            Ok(a) => a,
            Err(e) => {
                set_error(&e.to_string());
                return HsavStatus::InvalidArgument;
            }
        };
        let field = match Field::from_values(grid, array) {
            Ok(f) => f,
            Err(e) => return fail(e),
        };
        match init_consistent(field, model) {
            Ok(state) => {
                *out = Box::into_raw(Box::new(HsavState(state)));
                HsavStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `state` must come from `hsav_state_init` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hsav_state_free(state: *mut HsavState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// # Safety
/// `state` must be a live state handle.
#[no_mangle]
pub unsafe extern "C" fn hsav_state_time(state: *const HsavState) -> f64 {
    if state.is_null() {
        return f64::NAN;
    }
    (*state).0.t
}

/// # Safety
/// `state` must be a live state handle.
#[no_mangle]
pub unsafe extern "C" fn hsav_state_q(state: *const HsavState) -> f64 {
    if state.is_null() {
        return f64::NAN;
    }
    (*state).0.q
}

/// Copies the nodal values into `buffer` (row-major, x index outermost).
///
/// # Safety
/// `buffer` must hold at least `len` doubles and `len` must equal nx*ny.
#[no_mangle]
pub unsafe extern "C" fn hsav_state_values(
    state: *const HsavState,
    buffer: *mut f64,
    len: u64,
) -> HsavStatus {
    if state.is_null() || buffer.is_null() {
        return HsavStatus::NullPointer;
    }
    let phi = &(*state).0.phi;
    if len as usize != phi.grid().num_nodes() {
        set_error("buffer length does not match the grid");
        return HsavStatus::InvalidArgument;
    }
    let out = std::slice::from_raw_parts_mut(buffer, len as usize);
    for (dst, src) in out.iter_mut().zip(phi.values().iter()) {
        *dst = *src;
    }
    HsavStatus::Ok
}

/// Modified energy E_h and raw energy F_h of the state.
///
/// # Safety
/// All pointers must be valid; `state` and `model` must share a grid.
#[no_mangle]
pub unsafe extern "C" fn hsav_state_energy(
    model: *const HsavModel,
    state: *const HsavState,
    out_modified: *mut f64,
    out_raw: *mut f64,
) -> HsavStatus {
    if model.is_null() || state.is_null() || out_modified.is_null() || out_raw.is_null() {
        return HsavStatus::NullPointer;
    }
    guarded(|| match energy(&(*state).0, &(*model).0) {
        Ok(pair) => {
            *out_modified = pair.modified;
            *out_raw = pair.raw;
            HsavStatus::Ok
        }
        Err(e) => fail(e),
    })
}

// ---------------------------------------------------------------------------
// Stepping

/// One s-stage Gauss collocation step of size dt; the state is advanced in
/// place and `report`, when non-null, receives the step diagnostics.
///
/// # Safety
/// `state` and `model` must be live handles sharing a grid.
#[no_mangle]
pub unsafe extern "C" fn hsav_step_gauss(
    state: *mut HsavState,
    model: *const HsavModel,
    stages: u32,
    dt: f64,
    report: *mut HsavStepReport,
) -> HsavStatus {
    if state.is_null() || model.is_null() {
        return HsavStatus::NullPointer;
    }
    guarded(|| {
        let tab = match gauss_tableau(stages as usize) {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        match hsav_rk_step(&(*state).0, &(*model).0, &tab, dt, &SolverConfig::default()) {
            Ok((next, rep)) => {
                (*state).0 = next;
                if !report.is_null() {
                    *report = HsavStepReport {
                        iterations_used: rep.iterations_used as u64,
                        final_residual: rep.final_residual,
                        energy_before: rep.energy_before,
                        energy_after: rep.energy_after,
                        dissipation_ok: rep.dissipation_ok as i32,
                        dissipation_predicted: rep.dissipation_predicted,
                    };
                }
                HsavStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Integrates the state to `t_end` with fixed steps of `dt`. `stages` = 0
/// selects the SAV Crank-Nicolson baseline, otherwise the s-stage Gauss
/// method.
///
/// # Safety
/// `state` and `model` must be live handles sharing a grid.
#[no_mangle]
pub unsafe extern "C" fn hsav_integrate(
    state: *mut HsavState,
    model: *const HsavModel,
    stages: u32,
    dt: f64,
    t_end: f64,
) -> HsavStatus {
    if state.is_null() || model.is_null() {
        return HsavStatus::NullPointer;
    }
    guarded(|| {
        let method = if stages == 0 {
            Method::Cn
        } else {
            Method::Gauss(stages as usize)
        };
        let current = (*state).0.clone();
        match integrate(
            current,
            &(*model).0,
            method,
            dt,
            t_end,
            &mut [],
            &SolverConfig::default(),
        ) {
            Ok(next) => {
                (*state).0 = next;
                HsavStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

// ---------------------------------------------------------------------------
// Snapshots

unsafe fn path_from<'a>(raw: *const c_char) -> Option<&'a Path> {
    if raw.is_null() {
        return None;
    }
    CStr::from_ptr(raw).to_str().ok().map(Path::new)
}

/// Writes the state's field in the raw snapshot format (magic "HSAVFLD1").
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn hsav_state_write_snapshot(
    state: *const HsavState,
    path: *const c_char,
) -> HsavStatus {
    if state.is_null() {
        return HsavStatus::NullPointer;
    }
    let Some(path) = path_from(path) else {
        set_error("path is null or not UTF-8");
        return HsavStatus::InvalidArgument;
    };
    guarded(|| match snapshot::write_field(path, &(*state).0.phi) {
        Ok(()) => HsavStatus::Ok,
        Err(e) => fail(e),
    })
}

/// Reads a snapshot's dimensions without copying the values.
///
/// # Safety
/// Pointers must be valid; `path` as in `hsav_state_write_snapshot`.
#[no_mangle]
pub unsafe extern "C" fn hsav_snapshot_dims(
    path: *const c_char,
    nx: *mut u32,
    ny: *mut u32,
    lx: *mut f64,
    ly: *mut f64,
) -> HsavStatus {
    if nx.is_null() || ny.is_null() || lx.is_null() || ly.is_null() {
        return HsavStatus::NullPointer;
    }
    let Some(path) = path_from(path) else {
        set_error("path is null or not UTF-8");
        return HsavStatus::InvalidArgument;
    };
    guarded(|| match snapshot::read_field(path) {
        Ok(field) => {
            *nx = field.grid().nx() as u32;
            *ny = field.grid().ny() as u32;
            *lx = field.grid().lx();
            *ly = field.grid().ly();
            HsavStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// Reads a snapshot's values into `buffer` (length nx*ny).
///
/// # Safety
/// `buffer` must hold `len` doubles; `path` as above.
#[no_mangle]
pub unsafe extern "C" fn hsav_snapshot_read(
    path: *const c_char,
    buffer: *mut f64,
    len: u64,
) -> HsavStatus {
    if buffer.is_null() {
        return HsavStatus::NullPointer;
    }
    let Some(path) = path_from(path) else {
        set_error("path is null or not UTF-8");
        return HsavStatus::InvalidArgument;
    };
    guarded(|| match snapshot::read_field(path) {
        Ok(field) => {
            if len as usize != field.grid().num_nodes() {
                set_error("buffer length does not match the snapshot");
                return HsavStatus::InvalidArgument;
            }
            let out = std::slice::from_raw_parts_mut(buffer, len as usize);
            for (dst, src) in out.iter_mut().zip(field.values().iter()) {
                *dst = *src;
            }
            HsavStatus::Ok
        }
        Err(e) => fail(e),
    })
}
