//! Thin 2D FFT wrapper.
//!
//! Fixes the discrete-transform contract used across the crate: unnormalized
//! forward transform, 1/n² on the inverse, zero frequency at index 0. The
//! backend (rustfft) is an implementation detail; anything honoring the same
//! contract can be swapped in.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

fn transform_rows(data: &mut Array2<Complex64>, direction: FftDirection) {
    let (rows, cols) = data.dim();
    let fft = plan(cols, direction);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let slice = data.as_slice_mut().expect("contiguous row-major array");
    for row in slice.chunks_exact_mut(cols) {
        fft.process_with_scratch(row, &mut scratch);
    }
    let _ = rows;
}

/// In-place unnormalized 2D DFT.
pub fn fft2(data: &mut Array2<Complex64>) {
    transform_rows(data, FftDirection::Forward);
    let mut t = data.t().as_standard_layout().into_owned();
    transform_rows(&mut t, FftDirection::Forward);
    data.assign(&t.t());
}

/// In-place 2D inverse DFT with 1/n² normalization.
pub fn ifft2(data: &mut Array2<Complex64>) {
    transform_rows(data, FftDirection::Inverse);
    let mut t = data.t().as_standard_layout().into_owned();
    transform_rows(&mut t, FftDirection::Inverse);
    let norm = 1.0 / (data.len() as f64);
    data.assign(&t.t());
    data.mapv_inplace(|v| v * norm);
}

/// Forward DFT of a real array.
pub fn fft2_real(data: &ndarray::ArrayView2<'_, f64>) -> Array2<Complex64> {
    let mut c = data.mapv(|v| Complex64::new(v, 0.0));
    fft2(&mut c);
    c
}

/// Real part of the inverse DFT (spectrum assumed Hermitian up to round-off).
pub fn ifft2_real(spectrum: &Array2<Complex64>) -> Array2<f64> {
    let mut c = spectrum.clone();
    ifft2(&mut c);
    c.mapv(|v| v.re)
}

/// In-place 1D unnormalized forward DFT.
pub fn fft1(data: &mut [Complex64]) {
    plan(data.len(), FftDirection::Forward).process(data);
}

/// In-place 1D inverse DFT with 1/n normalization.
pub fn ifft1(data: &mut [Complex64]) {
    plan(data.len(), FftDirection::Inverse).process(data);
    let norm = 1.0 / (data.len() as f64);
    for v in data {
        *v *= norm;
    }
}
