//! Closed-form spectral inversions: WTIE, TIE-HOM, multi-distance CTF and
//! CTF pure phase.
//!
//! All four act on flat-corrected stacks, regularize with an additive
//! Tikhonov term in the denominator, and pin the zero-frequency phase to 0
//! (phase maps are mean-free; the data carries no DC phase information).

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fourier::{fft2, ifft2};
use crate::propagator::{frequency_grid, IntensityImage};

use super::{default_crossover, IntensityStack, RetrievalParams, RetrievalResult};

const PI: f64 = std::f64::consts::PI;

/// Floor applied to the TIE-HOM filter output before the logarithm.
const EPS_LOG: f64 = 1e-10;

/// DFT of the contrast I - 1 of a flat-corrected image.
fn contrast_spectrum(img: &IntensityImage) -> Array2<Complex64> {
    let mut c = img.values.mapv(|v| Complex64::new(v - 1.0, 0.0));
    fft2(&mut c);
    c
}

/// Squared-frequency map |f|² on the DFT grid.
fn freq_sq(grid: crate::propagator::Grid) -> Array2<f64> {
    let (fx, fy) = frequency_grid(grid);
    Array2::from_shape_fn((grid.n, grid.n), |(i, j)| fx[j] * fx[j] + fy[i] * fy[i])
}

/// Weak-object TIE inversion from a single distance:
/// phi_hat(f) = DFT[I - 1](f) / (2 pi lambda D |f|² + alpha), phi_hat(0) = 0.
pub fn wtie(stack: &IntensityStack, params: &RetrievalParams) -> Result<RetrievalResult> {
    params.validate()?;
    if stack.images.len() != 1 {
        return Err(Error::InsufficientData(format!(
            "wtie takes exactly one distance, got {}",
            stack.images.len()
        )));
    }
    let img = &stack.images[0];
    let d = img.distance;
    if d <= 0.0 {
        return Err(Error::DegenerateGeometry(
            "wtie needs D > 0; the contact plane carries no phase contrast".into(),
        ));
    }
    let grid = img.grid;
    let lambda = stack.wavelength;
    let cross = default_crossover(lambda, d);
    let f2 = freq_sq(grid);
    let mut spectrum = contrast_spectrum(img);
    for ((i, j), v) in spectrum.indexed_iter_mut() {
        if (i, j) == (0, 0) {
            *v = Complex64::new(0.0, 0.0);
            continue;
        }
        let q = f2[[i, j]];
        *v /= 2.0 * PI * lambda * d * q + params.alpha.at(q, cross);
    }
    ifft2(&mut spectrum);
    Ok(RetrievalResult::from_phi(spectrum.mapv(|v| v.re)))
}

/// Single-distance homogeneous-object (Paganin-style) inversion:
/// T = -(1/mu) ln( IDFT[ DFT[I](f) / (1 + pi lambda D (delta/beta) |f|²) ] )
/// with mu = 4 pi beta / lambda. Without `params.delta` the attenuation
/// thickness mu*T is returned instead of meters; the phase map
/// phi = -(delta/beta)/2 * mu*T needs only the ratio and is always produced.
pub fn tie_hom(
    img: &IntensityImage,
    wavelength: f64,
    params: &RetrievalParams,
) -> Result<RetrievalResult> {
    params.validate()?;
    let d = img.distance;
    if d < 0.0 {
        return Err(Error::Domain(format!("tie_hom needs D >= 0, got {d}")));
    }
    let grid = img.grid;
    let f2 = freq_sq(grid);
    let mut spectrum = img.values.mapv(|v| Complex64::new(v, 0.0));
    fft2(&mut spectrum);
    for (idx, v) in spectrum.indexed_iter_mut() {
        *v /= 1.0 + PI * wavelength * d * params.delta_beta * f2[idx];
    }
    ifft2(&mut spectrum);

    let mut clamped = 0usize;
    let mu_t = spectrum.mapv(|v| {
        let x = v.re;
        if x < EPS_LOG {
            clamped += 1;
            -(EPS_LOG.ln())
        } else {
            -x.ln()
        }
    });
    if clamped > 0 {
        log::warn!("tie_hom clamped {clamped} non-positive filtered pixels before the log");
    }

    let phi = mu_t.mapv(|m| -0.5 * params.delta_beta * m);
    let thickness = match params.delta {
        Some(delta) => {
            let beta = delta / params.delta_beta;
            let mu = 4.0 * PI * beta / wavelength;
            mu_t.mapv(|m| m / mu)
        }
        None => mu_t.clone(),
    };
    let absorption = mu_t.mapv(|m| 0.5 * m);
    Ok(RetrievalResult {
        phi,
        absorption: Some(absorption),
        thickness: Some(thickness),
        residual_history: Vec::new(),
        clamped_log_pixels: clamped,
        pure_phase_fallback_bins: 0,
    })
}

/// Multi-distance pure-phase CTF inversion:
/// phi_hat(f) = sum_D sin chi_D * I~_D(f) / (2 sum_D sin² chi_D + alpha).
pub fn ctf_pure_phase(stack: &IntensityStack, params: &RetrievalParams) -> Result<RetrievalResult> {
    params.validate()?;
    let grid = stack.grid();
    let lambda = stack.wavelength;
    let d_min = stack.images[0].distance;
    let cross = default_crossover(lambda, d_min);
    let f2 = freq_sq(grid);

    let mut numerator = Array2::<Complex64>::zeros((grid.n, grid.n));
    let mut denominator = Array2::<f64>::zeros((grid.n, grid.n));
    for img in &stack.images {
        let spectrum = contrast_spectrum(img);
        let scale = PI * lambda * img.distance;
        for (idx, v) in spectrum.indexed_iter() {
            let s = (scale * f2[idx]).sin();
            numerator[idx] += s * v;
            denominator[idx] += 2.0 * s * s;
        }
    }
    let mut phi_hat = numerator;
    for (idx, v) in phi_hat.indexed_iter_mut() {
        if idx == (0, 0) {
            *v = Complex64::new(0.0, 0.0);
            continue;
        }
        let q = f2[idx];
        let den = denominator[idx] + params.alpha.at(q, cross);
        // den = 0 means every sin chi vanished there: no phase information.
        *v = if den > 0.0 { *v / den } else { Complex64::new(0.0, 0.0) };
    }
    ifft2(&mut phi_hat);
    Ok(RetrievalResult::from_phi(phi_hat.mapv(|v| v.re)))
}

/// Determinant floor below which the per-frequency 2x2 CTF system falls back
/// to the pure-phase formula.
const DET_FLOOR: f64 = 1e-15;

/// Multi-distance CTF inversion recovering phase and absorption. Per
/// frequency, with s_D = 2 sin chi_D and c_D = -2 cos chi_D, solves the
/// regularized normal equations of I~_D = s_D phi_hat + c_D B_hat by the
/// 2x2 closed form.
pub fn ctf(stack: &IntensityStack, params: &RetrievalParams) -> Result<RetrievalResult> {
    params.validate()?;
    if stack.images.len() < 2 {
        return Err(Error::InsufficientData(
            "ctf needs at least two distances; one distance makes the 2x2 system rank-1".into(),
        ));
    }
    let grid = stack.grid();
    let lambda = stack.wavelength;
    let d_min = stack.images[0].distance;
    let cross = default_crossover(lambda, d_min);
    let f2 = freq_sq(grid);
    let n_images = stack.images.len() as f64;

    let spectra: Vec<Array2<Complex64>> = stack.images.iter().map(contrast_spectrum).collect();

    let mut phi_hat = Array2::<Complex64>::zeros((grid.n, grid.n));
    let mut b_hat = Array2::<Complex64>::zeros((grid.n, grid.n));
    let mut fallback = 0usize;

    for i in 0..grid.n {
        for j in 0..grid.n {
            if (i, j) == (0, 0) {
                continue;
            }
            let q = f2[[i, j]];
            let alpha = params.alpha.at(q, cross);
            let mut ss = 0.0;
            let mut cc = 0.0;
            let mut sc = 0.0;
            let mut rhs_s = Complex64::new(0.0, 0.0);
            let mut rhs_c = Complex64::new(0.0, 0.0);
            for (img, spectrum) in stack.images.iter().zip(&spectra) {
                let chi = PI * lambda * img.distance * q;
                let s = 2.0 * chi.sin();
                let c = -2.0 * chi.cos();
                ss += s * s;
                cc += c * c;
                sc += s * c;
                let v = spectrum[[i, j]];
                rhs_s += s * v;
                rhs_c += c * v;
            }
            let a11 = ss + alpha;
            let a22 = cc + alpha;
            let det = a11 * a22 - sc * sc;
            if det < DET_FLOOR {
                // Rank-deficient even after regularization: keep the
                // pure-phase estimate and zero absorption at this bin.
                fallback += 1;
                let denom = ss + alpha;
                phi_hat[[i, j]] = if denom > 0.0 { rhs_s / denom } else { Complex64::new(0.0, 0.0) };
                continue;
            }
            phi_hat[[i, j]] = (a22 * rhs_s - sc * rhs_c) / det;
            b_hat[[i, j]] = (a11 * rhs_c - sc * rhs_s) / det;
        }
    }
    // DC terms: phase is mean-free; absorption mean from the contrast mean.
    let mean_contrast: Complex64 =
        spectra.iter().map(|s| s[[0, 0]]).sum::<Complex64>() / n_images;
    b_hat[[0, 0]] = -0.5 * mean_contrast;

    if fallback > 0 {
        log::warn!("ctf fell back to the pure-phase formula on {fallback} frequency bins");
    }
    ifft2(&mut phi_hat);
    ifft2(&mut b_hat);
    Ok(RetrievalResult {
        phi: phi_hat.mapv(|v| v.re),
        absorption: Some(b_hat.mapv(|v| v.re)),
        thickness: None,
        residual_history: Vec::new(),
        clamped_log_pixels: 0,
        pure_phase_fallback_bins: fallback,
    })
}
