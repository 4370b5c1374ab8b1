//! Periodic 2D Fourier pseudospectral discretization: grid and field types,
//! differentiation through eigenvalue multipliers, discrete inner products,
//! and Fourier-diagonal operator symbols.
//!
//! Derivative multipliers follow the standard DFT frequency layout
//! (0, 1, ..., N/2-1, +-N/2, -N/2+1, ..., -1). The Nyquist mode is zeroed
//! for odd derivative orders and retained for even orders, which keeps the
//! odd-order differentiation matrices antisymmetric and the even-order ones
//! symmetric, so discrete integration by parts holds exactly.

pub mod fft;
pub mod snapshot;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Uniform periodic grid on `[0, Lx) x [0, Ly)` with even node counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 4 || ny < 4 || nx % 2 != 0 || ny % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "node counts must be even and >= 4, got {nx} x {ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "domain lengths must be positive and finite, got {lx} x {ly}"
            )));
        }
        Ok(Grid2D { nx, ny, lx, ly })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }
    /// Fundamental wavenumber 2*pi/Lx.
    pub fn mu_x(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.lx
    }
    pub fn mu_y(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.ly
    }
    /// Domain area |Omega|.
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }
    /// Quadrature weight hx*hy of one node.
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }
    pub fn num_nodes(&self) -> usize {
        self.nx * self.ny
    }
    /// Node coordinate x_j = j*hx.
    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.hx()
    }
    pub fn y(&self, k: usize) -> f64 {
        k as f64 * self.hy()
    }
}

pub(crate) fn check_same_grid(a: &Grid2D, b: &Grid2D, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch(format!(
            "{what}: {}x{} on {}x{} vs {}x{} on {}x{}",
            a.nx, a.ny, a.lx, a.ly, b.nx, b.ny, b.lx, b.ly
        )));
    }
    Ok(())
}

/// Real-valued grid function; row index is x, column index is y, so the node
/// `(x_j, y_k) = (j*hx, k*hy)` lives at `values[[j, k]]`.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Grid2D,
    values: Array2<f64>,
}

impl Field {
    pub fn zeros(grid: Grid2D) -> Self {
        Field {
            grid,
            values: Array2::zeros((grid.nx, grid.ny)),
        }
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Field {
            grid,
            values: Array2::from_elem((grid.nx, grid.ny), c),
        }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn((grid.nx, grid.ny), |(j, k)| f(grid.x(j), grid.y(k)));
        Field { grid, values }
    }

    pub fn from_values(grid: Grid2D, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.nx, grid.ny) {
            return Err(Error::GridMismatch(format!(
                "array shape {:?} does not match grid {}x{}",
                values.dim(),
                grid.nx,
                grid.ny
            )));
        }
        let field = Field { grid, values };
        field.check_finite("field values")?;
        Ok(field)
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Discrete mean (1, phi)_h / |Omega|.
    pub fn mean(&self) -> f64 {
        self.values.sum() / self.grid.num_nodes() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// self += a * other (same grid assumed; used by integrators).
    pub fn scaled_add(&mut self, a: f64, other: &Field) {
        debug_assert_eq!(self.grid, other.grid);
        self.values.zip_mut_with(&other.values, |s, o| *s += a * o);
    }

    pub fn scale(&mut self, a: f64) {
        self.values.mapv_inplace(|v| a * v);
    }

    /// Pointwise product with another field, in place.
    pub fn mul_pointwise(&mut self, other: &Field) {
        debug_assert_eq!(self.grid, other.grid);
        self.values.zip_mut_with(&other.values, |s, o| *s *= o);
    }

    pub(crate) fn to_complex(&self) -> Vec<Complex64> {
        fft::real_to_complex(self.values.as_slice().expect("standard layout"))
    }

    pub(crate) fn from_complex(grid: Grid2D, buf: &[Complex64]) -> Self {
        let values = Array2::from_shape_vec((grid.nx, grid.ny), fft::complex_to_real(buf))
            .expect("buffer length matches grid");
        Field { grid, values }
    }

    /// Forward DFT of the field, flat row-major layout.
    pub(crate) fn forward(&self) -> Vec<Complex64> {
        let mut buf = self.to_complex();
        fft::fft2(&mut buf, self.grid.nx, self.grid.ny, true);
        buf
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Per-axis eigenvalue vector of the s-th pseudospectral differentiation
/// matrix, in DFT frequency order.
#[derive(Debug, Clone)]
pub struct SpectralMultiplier {
    order: usize,
    values: Vec<Complex64>,
}

impl SpectralMultiplier {
    pub fn order(&self) -> usize {
        self.order
    }
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
}

/// Eigenvalues of the s-th derivative along one axis: `(i*mu*m)^s` with the
/// Nyquist frequency zeroed when s is odd and kept at +N/2 when s is even.
pub fn make_multiplier(grid: &Grid2D, axis: Axis, s: usize) -> SpectralMultiplier {
    let (n, mu) = match axis {
        Axis::X => (grid.nx, grid.mu_x()),
        Axis::Y => (grid.ny, grid.mu_y()),
    };
    let values = (0..n)
        .map(|i| {
            let m = if i < n / 2 {
                i as f64
            } else if i == n / 2 {
                if s % 2 == 0 {
                    (n / 2) as f64
                } else {
                    0.0
                }
            } else {
                i as f64 - n as f64
            };
            if s == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, mu * m).powu(s as u32)
            }
        })
        .collect();
    SpectralMultiplier { order: s, values }
}

/// Mixed pseudospectral derivative d^sx/dx^sx d^sy/dy^sy of the trigonometric
/// interpolant, evaluated at the nodes.
pub fn apply_derivative(f: &Field, sx: usize, sy: usize) -> Result<Field> {
    f.check_finite("apply_derivative input")?;
    let grid = f.grid;
    let mx = make_multiplier(&grid, Axis::X, sx);
    let my = make_multiplier(&grid, Axis::Y, sy);
    let mut buf = f.to_complex();
    fft::fft2(&mut buf, grid.nx, grid.ny, true);
    for j in 0..grid.nx {
        for k in 0..grid.ny {
            buf[j * grid.ny + k] *= mx.values[j] * my.values[k];
        }
    }
    fft::fft2(&mut buf, grid.nx, grid.ny, false);
    Ok(Field::from_complex(grid, &buf))
}

/// Discrete inner product (f, g)_h = hx*hy * sum f_jk g_jk.
pub fn inner(f: &Field, g: &Field) -> Result<f64> {
    check_same_grid(&f.grid, &g.grid, "inner product")?;
    let mut acc = 0.0;
    for (a, b) in f.values.iter().zip(g.values.iter()) {
        acc += a * b;
    }
    Ok(f.grid.cell_area() * acc)
}

/// Discrete norm ||f||_h = sqrt((f, f)_h).
pub fn norm_h(f: &Field) -> f64 {
    inner(f, f).expect("same grid").sqrt()
}

/// Discrete integral (f, 1)_h.
pub fn integral_h(f: &Field) -> f64 {
    f.grid.cell_area() * f.values.sum()
}

/// Inner product evaluated from forward-DFT coefficients (Parseval form).
/// Both spectra must come from real fields on `grid`.
pub(crate) fn inner_fourier(fhat: &[Complex64], ghat: &[Complex64], grid: &Grid2D) -> f64 {
    let mut acc = 0.0;
    for (a, b) in fhat.iter().zip(ghat.iter()) {
        acc += a.re * b.re + a.im * b.im;
    }
    grid.cell_area() * acc / grid.num_nodes() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolKind {
    /// Self-adjoint linear operator L_h (real symbol).
    LinearL,
    /// Negative semi-definite mobility G_h (real symbol, entries <= 0).
    MobilityG,
}

/// Fourier-space multiplier sigma(kx, ky) of a constant-coefficient operator
/// that is polynomial in the Laplacian.
#[derive(Debug, Clone)]
pub struct OperatorSymbol {
    kind: SymbolKind,
    grid: Grid2D,
    values: Array2<f64>,
}

impl OperatorSymbol {
    pub fn kind(&self) -> SymbolKind {
        self.kind
    }
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
    /// Symbol entry at the zero mode (acts on constants).
    pub fn zero_mode(&self) -> f64 {
        self.values[[0, 0]]
    }
}

/// Eigenvalues of the discrete Laplacian, mode by mode (all <= 0). Uses the
/// even-order multiplier convention, so the Nyquist mode is retained.
pub fn laplacian_eigenvalues(grid: &Grid2D) -> Array2<f64> {
    let mx = make_multiplier(grid, Axis::X, 2);
    let my = make_multiplier(grid, Axis::Y, 2);
    Array2::from_shape_fn((grid.nx, grid.ny), |(j, k)| {
        mx.values[j].re + my.values[k].re
    })
}

/// Builds a symbol from `terms`, a list of (laplacian power, coefficient):
/// sigma = sum_p c_p * (Delta_hat)^p. Power 0 is the identity. Mobility
/// symbols are checked for negative semi-definiteness at construction.
pub fn make_operator_symbol(
    grid: &Grid2D,
    terms: &[(u32, f64)],
    kind: SymbolKind,
) -> Result<OperatorSymbol> {
    let lap = laplacian_eigenvalues(grid);
    let values = lap.mapv(|ev| {
        terms
            .iter()
            .map(|&(p, c)| c * ev.powi(p as i32))
            .sum::<f64>()
    });
    if kind == SymbolKind::MobilityG {
        let scale = values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for ((j, k), &v) in values.indexed_iter() {
            if v > 1e-12 * scale {
                return Err(Error::MobilitySign {
                    value: v,
                    kx: j,
                    ky: k,
                });
            }
        }
    }
    Ok(OperatorSymbol {
        kind,
        grid: *grid,
        values,
    })
}

/// Applies a Fourier-diagonal operator: inverse DFT of sigma * DFT(f).
pub fn apply_symbol(sym: &OperatorSymbol, f: &Field) -> Result<Field> {
    check_same_grid(&sym.grid, &f.grid, "apply_symbol")?;
    let grid = f.grid;
    let mut buf = f.to_complex();
    fft::fft2(&mut buf, grid.nx, grid.ny, true);
    let sv = sym.values.as_slice().expect("standard layout");
    for (v, s) in buf.iter_mut().zip(sv.iter()) {
        *v *= *s;
    }
    fft::fft2(&mut buf, grid.nx, grid.ny, false);
    Ok(Field::from_complex(grid, &buf))
}
