//! Thin wrapper over rustfft: 2D transforms on flat row-major buffers with
//! per-thread plan caching.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry((n, forward))
            .or_insert_with(|| {
                let dir = if forward {
                    FftDirection::Forward
                } else {
                    FftDirection::Inverse
                };
                FftPlanner::new().plan_fft(n, dir)
            })
            .clone()
    })
}

fn transform_rows(buf: &mut [Complex64], rows: usize, cols: usize, forward: bool) {
    let fft = plan(cols, forward);
    let mut scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
    for r in 0..rows {
        fft.process_with_scratch(&mut buf[r * cols..(r + 1) * cols], &mut scratch);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// 2D DFT of a flat row-major (nx rows, ny columns) buffer, in place.
/// Forward is unnormalized; the inverse divides by nx*ny, so a round trip
/// is the identity.
pub fn fft2(buf: &mut Vec<Complex64>, nx: usize, ny: usize, forward: bool) {
    assert_eq!(buf.len(), nx * ny);
    transform_rows(buf, nx, ny, forward);
    let mut tmp = vec![Complex64::ZERO; buf.len()];
    transpose(buf, &mut tmp, nx, ny);
    transform_rows(&mut tmp, ny, nx, forward);
    transpose(&tmp, buf, ny, nx);
    if !forward {
        let norm = 1.0 / (nx * ny) as f64;
        for v in buf.iter_mut() {
            *v *= norm;
        }
    }
}

pub fn real_to_complex(values: &[f64]) -> Vec<Complex64> {
    values.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Extracts real parts after an inverse transform. In debug builds asserts
/// the imaginary residue is negligible relative to the field scale, which
/// catches symbols that break Hermitian symmetry (those leave residues at
/// the field scale itself). The threshold is deliberately loose: stiff
/// symbols and wild solver transients push unnormalized spectra to ~1e9,
/// whose benign rounding alone leaves ~1e-7 relative residue.
pub fn complex_to_real(buf: &[Complex64]) -> Vec<f64> {
    #[cfg(debug_assertions)]
    {
        let scale = buf.iter().map(|v| v.re.abs()).fold(1.0, f64::max);
        let max_im = buf.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        // A non-finite buffer (a diverging solver iterate) says nothing
        // about symmetry; the solver's own guards deal with it.
        debug_assert!(
            !max_im.is_finite() || !scale.is_finite() || max_im <= 1e-6 * scale,
            "imaginary residue {max_im:.3e} exceeds 1e-6 * {scale:.3e} after inverse transform"
        );
    }
    buf.iter().map(|v| v.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_identity() {
        let (nx, ny) = (8, 6);
        let values: Vec<f64> = (0..nx * ny).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut buf = real_to_complex(&values);
        fft2(&mut buf, nx, ny, true);
        fft2(&mut buf, nx, ny, false);
        let back = complex_to_real(&buf);
        for (a, b) in values.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn single_mode_lands_in_one_bin() {
        // f(x,y) = exp(i*(2x + y)) on a 2pi x 2pi grid has a single nonzero
        // coefficient at (2, 1) of magnitude nx*ny.
        let (nx, ny) = (8, 8);
        let mut buf = vec![Complex64::ZERO; nx * ny];
        for j in 0..nx {
            for k in 0..ny {
                let x = 2.0 * std::f64::consts::PI * j as f64 / nx as f64;
                let y = 2.0 * std::f64::consts::PI * k as f64 / ny as f64;
                buf[j * ny + k] = Complex64::new(0.0, 2.0 * x + y).exp();
            }
        }
        fft2(&mut buf, nx, ny, true);
        for j in 0..nx {
            for k in 0..ny {
                let expected = if (j, k) == (2, 1) { (nx * ny) as f64 } else { 0.0 };
                assert!(
                    (buf[j * ny + k] - Complex64::new(expected, 0.0)).norm() < 1e-10,
                    "bin ({j},{k}) = {}",
                    buf[j * ny + k]
                );
            }
        }
    }
}
