//! Synthetic phantoms and multi-distance acquisition simulation.
//!
//! Binary phantoms are anti-aliased by 4x4 subpixel area sampling; exit waves
//! follow the projection approximation u = exp(-(2*pi/lambda)(beta + i*delta)T.
//! Physical pixel coordinates are taken at pixel centers, with the grid center
//! at index n/2 in pixel units.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::geometry::{effective_geometry, AcquisitionGeometry, EffectiveGeometry};
use crate::propagator::{intensity, propagate, Grid, IntensityImage, WaveField};

/// Complex refractive index n = 1 - delta + i*beta of a single material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub delta: f64,
    pub beta: f64,
}

impl Material {
    pub fn new(delta: f64, beta: f64) -> Result<Self> {
        if delta < 0.0 || beta < 0.0 || (delta == 0.0 && beta == 0.0) {
            return Err(Error::Domain(format!(
                "material needs delta >= 0, beta >= 0, not both zero; got delta={delta}, beta={beta}"
            )));
        }
        Ok(Self { delta, beta })
    }

    pub fn delta_beta(&self) -> f64 {
        self.delta / self.beta
    }
}

/// Projected thickness T(x) >= 0 in meters on a [`Grid`].
#[derive(Debug, Clone)]
pub struct ThicknessMap {
    pub grid: Grid,
    pub values: Array2<f64>,
}

impl ThicknessMap {
    pub fn new(grid: Grid, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.n, grid.n) {
            return Err(Error::Shape("thickness map does not match grid".into()));
        }
        if values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Domain("thickness must be finite and >= 0".into()));
        }
        Ok(Self { grid, values })
    }
}

const SUBSAMPLES: usize = 4;

/// Anti-aliased indicator integration: fraction of a pixel's 4x4 subsample
/// points for which `inside(x, y)` holds, with (x, y) physical coordinates
/// relative to the grid center.
fn coverage(grid: Grid, i: usize, j: usize, inside: &dyn Fn(f64, f64) -> bool) -> f64 {
    let c = grid.n as f64 / 2.0;
    let mut hits = 0usize;
    for si in 0..SUBSAMPLES {
        for sj in 0..SUBSAMPLES {
            let y = (i as f64 + (si as f64 + 0.5) / SUBSAMPLES as f64 - c) * grid.pixel;
            let x = (j as f64 + (sj as f64 + 0.5) / SUBSAMPLES as f64 - c) * grid.pixel;
            if inside(x, y) {
                hits += 1;
            }
        }
    }
    hits as f64 / (SUBSAMPLES * SUBSAMPLES) as f64
}

/// Siemens star: `spokes` material sectors alternating with gaps of equal
/// angular width pi/spokes, restricted to the annulus [r_inner, r_outer].
pub fn siemens_star(
    grid: Grid,
    spokes: usize,
    r_inner: f64,
    r_outer: f64,
    thickness: f64,
) -> Result<ThicknessMap> {
    siemens_star_rotated(grid, spokes, r_inner, r_outer, thickness, 0.0)
}

/// [`siemens_star`] with the sector pattern rotated by `angle0` radians.
pub fn siemens_star_rotated(
    grid: Grid,
    spokes: usize,
    r_inner: f64,
    r_outer: f64,
    thickness: f64,
    angle0: f64,
) -> Result<ThicknessMap> {
    if spokes < 4 || spokes % 2 != 0 {
        return Err(Error::Domain(format!("spokes must be even and >= 4, got {spokes}")));
    }
    if !(0.0 <= r_inner && r_inner <= r_outer && r_outer <= grid.extent() / 2.0) {
        return Err(Error::Domain(format!(
            "radii must satisfy 0 <= r_inner <= r_outer <= {}, got [{r_inner}, {r_outer}]",
            grid.extent() / 2.0
        )));
    }
    if !(thickness >= 0.0) {
        return Err(Error::Domain(format!("thickness must be >= 0, got {thickness}")));
    }
    let sector = std::f64::consts::PI / spokes as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let inside = move |x: f64, y: f64| {
        let r = (x * x + y * y).sqrt();
        if r < r_inner || r >= r_outer {
            return false;
        }
        let theta = (y.atan2(x) - angle0).rem_euclid(two_pi);
        (theta / sector).floor() as i64 % 2 == 0
    };
    let values = Array2::from_shape_fn((grid.n, grid.n), |(i, j)| {
        thickness * coverage(grid, i, j, &inside)
    });
    ThicknessMap::new(grid, values)
}

/// Sum of anti-aliased disks; overlapping thicknesses add.
/// Centers are physical (x, y) offsets from the grid center, in meters.
pub fn disk_phantom(grid: Grid, disks: &[(f64, f64, f64, f64)]) -> Result<ThicknessMap> {
    let mut values = Array2::<f64>::zeros((grid.n, grid.n));
    for &(cx, cy, radius, thickness) in disks {
        if !(radius > 0.0) {
            return Err(Error::Domain(format!("disk radius must be > 0, got {radius}")));
        }
        let inside = move |x: f64, y: f64| {
            let (dx, dy) = (x - cx, y - cy);
            dx * dx + dy * dy <= radius * radius
        };
        for ((i, j), v) in values.indexed_iter_mut() {
            *v += thickness * coverage(grid, i, j, &inside);
        }
    }
    ThicknessMap::new(grid, values)
}

/// Exit wave plus its ground-truth phase and absorption maps.
#[derive(Debug, Clone)]
pub struct ExitWave {
    pub wave: WaveField,
    /// phi = -(2*pi*delta/lambda) T, nonpositive.
    pub phi: Array2<f64>,
    /// B = (2*pi*beta/lambda) T, nonnegative.
    pub absorption: Array2<f64>,
}

/// Projection-approximation exit wave u = exp(-B + i*phi).
pub fn exit_wave(map: &ThicknessMap, material: Material, wavelength: f64) -> Result<ExitWave> {
    if !(wavelength > 0.0) {
        return Err(Error::Domain(format!("wavelength must be > 0, got {wavelength}")));
    }
    let k = 2.0 * std::f64::consts::PI / wavelength;
    let phi = map.values.mapv(|t| -k * material.delta * t);
    let absorption = map.values.mapv(|t| k * material.beta * t);
    let values = ndarray::Zip::from(&phi)
        .and(&absorption)
        .map_collect(|&p, &b| Complex64::from_polar((-b).exp(), p));
    let wave = WaveField::new(map.grid, wavelength, values)?;
    Ok(ExitWave { wave, phi, absorption })
}

/// Simulated multi-distance stack with per-image geometry and ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedStack {
    pub images: Vec<IntensityImage>,
    pub geometries: Vec<EffectiveGeometry>,
    pub phi: Array2<f64>,
    pub absorption: Array2<f64>,
}

/// Simulate one stack: per position, map (z1, z2) to effective geometry,
/// build the exit wave at the finest effective pixel size, propagate by the
/// effective distance and record the intensity. Positions must yield strictly
/// increasing effective distances.
///
/// All positions share the common grid of `map` resampled (if needed) to the
/// finest effective pixel; per-position geometry is kept in the output.
pub fn acquire_stack(
    map: &ThicknessMap,
    material: Material,
    geometry: &AcquisitionGeometry,
    positions: &[(f64, f64)],
) -> Result<SimulatedStack> {
    if positions.is_empty() {
        return Err(Error::Domain("acquire_stack needs at least one position".into()));
    }
    let wavelength = geometry.energy.wavelength_m();
    let mut effs = Vec::with_capacity(positions.len());
    for &(z1, z2) in positions {
        let g = AcquisitionGeometry::new(geometry.energy, z1, z2, geometry.detector_pixel)?;
        effs.push(effective_geometry(&g));
    }
    for pair in effs.windows(2) {
        if pair[1].effective_distance <= pair[0].effective_distance {
            return Err(Error::Domain(
                "positions must be ordered by strictly increasing effective distance".into(),
            ));
        }
    }
    let finest = effs
        .iter()
        .map(|e| e.effective_pixel)
        .fold(f64::INFINITY, f64::min);

    let sim_map = if (map.grid.pixel - finest).abs() / finest > 1e-12 {
        resample_map(map, finest)?
    } else {
        map.clone()
    };

    let exit = exit_wave(&sim_map, material, wavelength)?;
    let mut images = Vec::with_capacity(effs.len());
    for eff in &effs {
        let propagated = propagate(&exit.wave, eff.effective_distance);
        let mut img = intensity(&propagated);
        img.distance = eff.effective_distance;
        images.push(img);
    }
    Ok(SimulatedStack {
        images,
        geometries: effs,
        phi: exit.phi,
        absorption: exit.absorption,
    })
}

/// Bilinear resampling of a thickness map onto the same n at a new pixel size,
/// about the grid center; out-of-range samples clamp to the edge.
fn resample_map(map: &ThicknessMap, new_pixel: f64) -> Result<ThicknessMap> {
    let n = map.grid.n;
    let c = n as f64 / 2.0;
    let ratio = new_pixel / map.grid.pixel;
    let values = Array2::from_shape_fn((n, n), |(i, j)| {
        let y = c + (i as f64 + 0.5 - c) * ratio - 0.5;
        let x = c + (j as f64 + 0.5 - c) * ratio - 0.5;
        bilinear_clamped(&map.values, y, x)
    });
    ThicknessMap::new(Grid { n, pixel: new_pixel }, values)
}

pub(crate) fn bilinear_clamped(data: &Array2<f64>, y: f64, x: f64) -> f64 {
    let (rows, cols) = data.dim();
    let yc = y.clamp(0.0, (rows - 1) as f64);
    let xc = x.clamp(0.0, (cols - 1) as f64);
    let (i0, j0) = (yc.floor() as usize, xc.floor() as usize);
    let (i1, j1) = ((i0 + 1).min(rows - 1), (j0 + 1).min(cols - 1));
    let (fy, fx) = (yc - i0 as f64, xc - j0 as f64);
    data[[i0, j0]] * (1.0 - fy) * (1.0 - fx)
        + data[[i0, j1]] * (1.0 - fy) * fx
        + data[[i1, j0]] * fy * (1.0 - fx)
        + data[[i1, j1]] * fy * fx
}

/// Per-pixel Poisson noise at the given photon count, deterministic in `seed`.
pub fn add_noise(img: &IntensityImage, photons_per_pixel: f64, seed: u64) -> Result<IntensityImage> {
    if !(photons_per_pixel > 0.0) {
        return Err(Error::Domain(format!(
            "photons_per_pixel must be > 0, got {photons_per_pixel}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = img.values.clone();
    for v in values.iter_mut() {
        let mean = photons_per_pixel * *v;
        *v = if mean > 0.0 {
            Poisson::new(mean)
                .map_err(|e| Error::Domain(format!("invalid Poisson mean {mean}: {e}")))?
                .sample(&mut rng)
                / photons_per_pixel
        } else {
            0.0
        };
    }
    IntensityImage::new(img.grid, img.distance, values)
}
