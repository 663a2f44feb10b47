//! Fresnel propagation and its linearizations.
//!
//! Sign conventions, fixed once for the whole crate: refractive index
//! n = 1 - delta + i*beta, exit wave u = exp(-B + i*phi) with
//! phi = -(2*pi*delta/lambda)*T <= 0 and B = (2*pi*beta/lambda)*T >= 0.
//! The transfer function is H(f) = exp(-i*chi(f)) with chi = pi*lambda*D*|f|².
//!
//! `propagate` is the plain spectral operator u_D = IDFT[H * DFT[u]], which is
//! circular at the image boundary. [`Propagator`] adds edge-replication
//! padding around it to suppress wrap-around fringes on non-periodic data.

use ndarray::{Array2, Zip};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fourier::{fft2, ifft2};

/// Square sample raster with a physical pixel size in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    /// Side length in pixels.
    pub n: usize,
    /// Effective pixel size in meters.
    pub pixel: f64,
}

impl Grid {
    pub fn new(n: usize, pixel: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!("grid side must be >= 2, got {n}")));
        }
        if !(pixel > 0.0) || !pixel.is_finite() {
            return Err(Error::Domain(format!("pixel size must be > 0, got {pixel}")));
        }
        Ok(Self { n, pixel })
    }

    /// Physical side length in meters.
    pub fn extent(&self) -> f64 {
        self.n as f64 * self.pixel
    }

    /// Nyquist frequency 1/(2*pixel) in cycles/m.
    pub fn nyquist(&self) -> f64 {
        0.5 / self.pixel
    }
}

/// Complex field sampled on a [`Grid`].
#[derive(Debug, Clone)]
pub struct WaveField {
    pub grid: Grid,
    /// Wavelength in meters.
    pub wavelength: f64,
    pub values: Array2<Complex64>,
}

impl WaveField {
    pub fn new(grid: Grid, wavelength: f64, values: Array2<Complex64>) -> Result<Self> {
        if values.dim() != (grid.n, grid.n) {
            return Err(Error::Shape(format!(
                "wavefield values {:?} do not match grid {}x{}",
                values.dim(),
                grid.n,
                grid.n
            )));
        }
        if !(wavelength > 0.0) {
            return Err(Error::Domain(format!("wavelength must be > 0, got {wavelength}")));
        }
        Ok(Self { grid, wavelength, values })
    }

    /// Uniform unit-amplitude field.
    pub fn plane(grid: Grid, wavelength: f64) -> Self {
        Self {
            grid,
            wavelength,
            values: Array2::from_elem((grid.n, grid.n), Complex64::new(1.0, 0.0)),
        }
    }

    /// Total energy sum |u|².
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Real non-negative intensity image with its effective propagation distance.
#[derive(Debug, Clone)]
pub struct IntensityImage {
    pub grid: Grid,
    /// Effective propagation distance in meters.
    pub distance: f64,
    pub values: Array2<f64>,
}

impl IntensityImage {
    pub fn new(grid: Grid, distance: f64, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.n, grid.n) {
            return Err(Error::Shape(format!(
                "intensity values {:?} do not match grid {}x{}",
                values.dim(),
                grid.n,
                grid.n
            )));
        }
        if values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Domain("intensity must be finite and >= 0".into()));
        }
        Ok(Self { grid, distance, values })
    }

    pub fn mean(&self) -> f64 {
        self.values.sum() / self.values.len() as f64
    }
}

/// Fresnel spectral phase chi(f) = pi*lambda*D*|f|² on the DFT frequency grid.
#[derive(Debug, Clone)]
pub struct SpectralPhase {
    pub chi: Array2<f64>,
}

impl SpectralPhase {
    /// Requires D >= 0 so that chi >= 0 and chi(0) = 0 hold.
    pub fn new(wavelength: f64, distance: f64, grid: Grid) -> Result<Self> {
        if distance < 0.0 {
            return Err(Error::Domain(format!(
                "spectral phase defined for D >= 0, got {distance}"
            )));
        }
        Ok(Self { chi: chi_map(wavelength, distance, grid) })
    }
}

/// chi(f) over the DFT grid, signed for negative D (back-propagation).
fn chi_map(wavelength: f64, distance: f64, grid: Grid) -> Array2<f64> {
    let (fx, fy) = frequency_grid(grid);
    let scale = std::f64::consts::PI * wavelength * distance;
    Array2::from_shape_fn((grid.n, grid.n), |(i, j)| {
        scale * (fx[j] * fx[j] + fy[i] * fy[i])
    })
}

/// DFT spatial frequencies f_k = k/(n*pixel), k in {-n/2, .., n/2-1}, in the
/// standard order with zero frequency at index 0. Returns (f_x, f_y); the
/// row index of an image varies f_y, the column index f_x.
pub fn frequency_grid(grid: Grid) -> (Vec<f64>, Vec<f64>) {
    let n = grid.n as i64;
    let step = 1.0 / (grid.n as f64 * grid.pixel);
    let freqs: Vec<f64> = (0..n)
        .map(|k| {
            let k = if k < (n + 1) / 2 { k } else { k - n };
            k as f64 * step
        })
        .collect();
    (freqs.clone(), freqs)
}

/// Fresnel transfer function H(f) = exp(-i*chi(f)). Negative D yields the
/// conjugate filter (back-propagation).
pub fn fresnel_transfer(wavelength: f64, distance: f64, grid: Grid) -> Array2<Complex64> {
    let chi = chi_map(wavelength, distance, grid);
    chi.mapv(|x| Complex64::from_polar(1.0, -x))
}

/// Largest chi increment between adjacent samples at the Nyquist edge,
/// normalized by pi. Values above 1 mean the transfer function is
/// undersampled there; advisory only.
pub fn aliasing_ratio(wavelength: f64, distance: f64, grid: Grid) -> f64 {
    let f_nyq = grid.nyquist();
    let df = 1.0 / (grid.n as f64 * grid.pixel);
    // d(chi)/df = 2*pi*lambda*D*f, evaluated at the Nyquist edge.
    (2.0 * std::f64::consts::PI * wavelength * distance.abs() * f_nyq * df) / std::f64::consts::PI
}

/// Spectral Fresnel step u_D = IDFT[H(f) * DFT[u]]; grid and wavelength are
/// unchanged. Circular at the boundary; see [`Propagator`] for padding.
/// Negative distances back-propagate.
pub fn propagate(wave: &WaveField, distance: f64) -> WaveField {
    if aliasing_ratio(wave.wavelength, distance, wave.grid) > 1.0 {
        log::warn!(
            "transfer function undersampled near Nyquist (chi step > pi) at D = {distance} m"
        );
    }
    let filter = fresnel_transfer(wave.wavelength, distance, wave.grid);
    let mut spectrum = wave.values.clone();
    fft2(&mut spectrum);
    Zip::from(&mut spectrum).and(&filter).for_each(|s, h| *s *= h);
    ifft2(&mut spectrum);
    WaveField {
        grid: wave.grid,
        wavelength: wave.wavelength,
        values: spectrum,
    }
}

/// I(x) = |u(x)|². The stored distance is 0; callers propagating first should
/// overwrite it with the actual effective distance.
pub fn intensity(wave: &WaveField) -> IntensityImage {
    IntensityImage {
        grid: wave.grid,
        distance: 0.0,
        values: wave.values.mapv(|v| v.norm_sqr()),
    }
}

/// Boundary handling for [`Propagator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Plain circular spectral propagation.
    None,
    /// Edge-replicate by the given width on each side, propagate, crop back.
    Edge(usize),
    /// Edge-replicate to twice the side length (width n/2 per side).
    EdgeDouble,
}

/// Fresnel propagator with configurable boundary padding. The default pads
/// to twice the side length, which suppresses wrap-around fringes on
/// non-periodic images.
#[derive(Debug, Clone, Copy)]
pub struct Propagator {
    pub pad: PadMode,
}

impl Default for Propagator {
    fn default() -> Self {
        Self { pad: PadMode::EdgeDouble }
    }
}

impl Propagator {
    pub fn new(pad: PadMode) -> Self {
        Self { pad }
    }

    pub fn propagate(&self, wave: &WaveField, distance: f64) -> WaveField {
        let width = match self.pad {
            PadMode::None => return propagate(wave, distance),
            PadMode::Edge(width) => width,
            PadMode::EdgeDouble => wave.grid.n / 2,
        };
        if width == 0 {
            return propagate(wave, distance);
        }
        let padded = pad_edge(wave, width);
        let out = propagate(&padded, distance);
        crop_center(&out, wave.grid)
    }
}

fn pad_edge(wave: &WaveField, width: usize) -> WaveField {
    let n = wave.grid.n;
    let m = n + 2 * width;
    let values = Array2::from_shape_fn((m, m), |(i, j)| {
        let si = i.saturating_sub(width).min(n - 1);
        let sj = j.saturating_sub(width).min(n - 1);
        wave.values[[si, sj]]
    });
    WaveField {
        grid: Grid { n: m, pixel: wave.grid.pixel },
        wavelength: wave.wavelength,
        values,
    }
}

fn crop_center(wave: &WaveField, target: Grid) -> WaveField {
    let off = (wave.grid.n - target.n) / 2;
    let values = Array2::from_shape_fn((target.n, target.n), |(i, j)| {
        wave.values[[i + off, j + off]]
    });
    WaveField {
        grid: target,
        wavelength: wave.wavelength,
        values,
    }
}

/// Weak-object contrast-transfer forward model. Spectrally,
/// DFT[I_D - 1](f) = 2 sin(chi) DFT[phi](f) - 2 cos(chi) DFT[B](f);
/// at f = 0 this preserves the mean 1 - 2*mean(B).
pub fn ctf_forward(
    phi: &Array2<f64>,
    absorption: &Array2<f64>,
    wavelength: f64,
    distance: f64,
    grid: Grid,
) -> Result<IntensityImage> {
    if phi.dim() != (grid.n, grid.n) || absorption.dim() != phi.dim() {
        return Err(Error::Shape("ctf_forward inputs must match the grid".into()));
    }
    let chi = chi_map(wavelength, distance, grid);
    let mut phi_hat = phi.mapv(|v| Complex64::new(v, 0.0));
    fft2(&mut phi_hat);
    let mut b_hat = absorption.mapv(|v| Complex64::new(v, 0.0));
    fft2(&mut b_hat);

    let mut spectrum = Array2::<Complex64>::zeros((grid.n, grid.n));
    Zip::from(&mut spectrum)
        .and(&chi)
        .and(&phi_hat)
        .and(&b_hat)
        .for_each(|s, &x, &p, &b| {
            *s = 2.0 * x.sin() * p - 2.0 * x.cos() * b;
        });
    ifft2(&mut spectrum);
    let values = spectrum.mapv(|v| 1.0 + v.re);
    Ok(IntensityImage { grid, distance, values })
}

/// Transport-of-intensity forward model
/// I_D = I0 - (lambda*D / 2*pi) div(I0 grad phi), gradients spectral.
/// For I0 = 1 this is I_D = 1 - (lambda*D / 2*pi) laplacian(phi).
pub fn tie_forward(
    phi: &Array2<f64>,
    i0: &Array2<f64>,
    wavelength: f64,
    distance: f64,
    grid: Grid,
) -> Result<IntensityImage> {
    if phi.dim() != (grid.n, grid.n) || i0.dim() != phi.dim() {
        return Err(Error::Shape("tie_forward inputs must match the grid".into()));
    }
    let (fx, fy) = frequency_grid(grid);
    let two_pi = 2.0 * std::f64::consts::PI;

    let mut phi_hat = phi.mapv(|v| Complex64::new(v, 0.0));
    fft2(&mut phi_hat);

    // grad phi via i*2*pi*f multipliers.
    let mut gx = Array2::<Complex64>::zeros((grid.n, grid.n));
    let mut gy = Array2::<Complex64>::zeros((grid.n, grid.n));
    for ((i, j), v) in phi_hat.indexed_iter() {
        gx[[i, j]] = Complex64::new(0.0, two_pi * fx[j]) * v;
        gy[[i, j]] = Complex64::new(0.0, two_pi * fy[i]) * v;
    }
    ifft2(&mut gx);
    ifft2(&mut gy);

    // flux = I0 * grad phi, then spectral divergence.
    let mut fx_flux = Array2::<Complex64>::zeros((grid.n, grid.n));
    let mut fy_flux = Array2::<Complex64>::zeros((grid.n, grid.n));
    Zip::from(&mut fx_flux).and(&gx).and(i0).for_each(|o, g, w| *o = g * *w);
    Zip::from(&mut fy_flux).and(&gy).and(i0).for_each(|o, g, w| *o = g * *w);
    fft2(&mut fx_flux);
    fft2(&mut fy_flux);
    let mut div_hat = Array2::<Complex64>::zeros((grid.n, grid.n));
    for ((i, j), v) in div_hat.indexed_iter_mut() {
        *v = Complex64::new(0.0, two_pi * fx[j]) * fx_flux[[i, j]]
            + Complex64::new(0.0, two_pi * fy[i]) * fy_flux[[i, j]];
    }
    ifft2(&mut div_hat);

    let scale = wavelength * distance / two_pi;
    let values = Zip::from(i0)
        .and(&div_hat)
        .map_collect(|&w, d| w - scale * d.re);
    Ok(IntensityImage { grid, distance, values })
}
