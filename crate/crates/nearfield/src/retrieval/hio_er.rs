//! Fienup-style alternating projections on a single acquired image.
//!
//! One iteration: propagate the object-plane field to the detector, replace
//! the magnitude by the measured sqrt(I), propagate back, then apply the
//! object constraint -- ER projects onto it, HIO feeds back with constant
//! beta where the proposal leaves the constraint set.
//!
//! The constraint set Omega is the sector {|u| <= 1, arg(u) in [-phi_max, 0]}
//! (unit transmission, nonpositive phase). `sector_project` is the exact
//! metric projection onto that set -- this is what makes the ER residual
//! provably non-increasing -- and the HIO membership test uses the same
//! predicate pointwise.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fourier::{fft2, ifft2};
use crate::propagator::{fresnel_transfer, IntensityImage, WaveField};

use super::{IterMethod, RestartMode, RetrievalParams, RetrievalResult};

/// Detector magnitudes below this are treated as zero phase carriers.
const EPS_MAG: f64 = 1e-12;
/// Slack on the membership predicate so projected points test as members.
const EPS_MEMBER: f64 = 1e-12;

/// Exact metric projection of z onto {|z| <= 1, arg(z) in [-phi_max, 0]}
/// for 0 < phi_max <= pi. Points inside the phase wedge are radially
/// clamped; points outside project onto the nearer wedge boundary ray
/// (or its apex), then clamp.
pub fn sector_project(z: Complex64, phi_max: f64) -> Complex64 {
    let r = z.norm();
    if r == 0.0 {
        return z;
    }
    let theta = z.arg();
    if (-phi_max..=0.0).contains(&theta) {
        return if r > 1.0 { z / r } else { z };
    }
    // Project onto the convex cone spanned by the rays arg = 0 and
    // arg = -phi_max, then clamp the magnitude.
    let e0 = Complex64::new(1.0, 0.0);
    let e1 = Complex64::from_polar(1.0, -phi_max);
    let a0 = z.re; // <z, e0>
    let a1 = (z * e1.conj()).re; // <z, e1>
    let c0 = e0 * a0.max(0.0);
    let c1 = e1 * a1.max(0.0);
    let p = if (z - c0).norm_sqr() <= (z - c1).norm_sqr() { c0 } else { c1 };
    let pr = p.norm();
    if pr > 1.0 {
        p / pr
    } else {
        p
    }
}

fn in_sector(z: Complex64, phi_max: f64) -> bool {
    let r = z.norm();
    if r == 0.0 {
        return true;
    }
    if r > 1.0 + EPS_MEMBER {
        return false;
    }
    let theta = z.arg();
    -phi_max - EPS_MEMBER <= theta && theta <= EPS_MEMBER
}

struct DetectorPlane {
    forward: Array2<Complex64>,
    backward: Array2<Complex64>,
    sqrt_i: Array2<f64>,
}

impl DetectorPlane {
    fn apply(&self, u: &Array2<Complex64>, filter: &Array2<Complex64>) -> Array2<Complex64> {
        let mut s = u.clone();
        fft2(&mut s);
        Zip::from(&mut s).and(filter).for_each(|v, h| *v *= h);
        ifft2(&mut s);
        s
    }

    /// Magnitude projection plus the residual ||u_D| - sqrt(I)||_2.
    fn project_magnitude(&self, u_d: &Array2<Complex64>) -> (Array2<Complex64>, f64) {
        let mut residual_sq = 0.0;
        let projected = Zip::from(u_d)
            .and(&self.sqrt_i)
            .map_collect(|v, &m| {
                let r = v.norm();
                residual_sq += (r - m) * (r - m);
                if r < EPS_MAG {
                    Complex64::new(m, 0.0)
                } else {
                    v * (m / r)
                }
            });
        (projected, residual_sq.sqrt())
    }
}

/// HIO/ER schedule on one image. `init` defaults to a unit-magnitude field
/// with uniformly random phase in [-phi_max, 0], seeded by `params.seed`.
/// With `params.cycles > 1` the schedule repeats and the returned (phi, B)
/// is the pixelwise mean over cycle endpoints; `params.restart` picks
/// whether cycles chain or restart from fresh random fields.
pub fn hio_er(
    img: &IntensityImage,
    init: Option<&WaveField>,
    wavelength: f64,
    params: &RetrievalParams,
) -> Result<RetrievalResult> {
    params.validate()?;
    if params.schedule.is_empty() || params.schedule.iter().all(|(_, n)| *n == 0) {
        return Err(Error::Domain("hio_er needs a non-empty schedule".into()));
    }
    if img.values.iter().any(|v| *v < 0.0) {
        return Err(Error::Domain("intensity must be nonnegative".into()));
    }
    let grid = img.grid;
    if let Some(w) = init {
        if w.grid.n != grid.n {
            return Err(Error::Shape("init wavefield does not match the image grid".into()));
        }
    }
    let cycles = params.cycles.max(1);

    let plane = DetectorPlane {
        forward: fresnel_transfer(wavelength, img.distance, grid),
        backward: fresnel_transfer(wavelength, -img.distance, grid),
        sqrt_i: img.values.mapv(f64::sqrt),
    };

    let random_field = |seed: u64| -> Array2<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((grid.n, grid.n), |_| {
            Complex64::from_polar(1.0, -rng.gen::<f64>() * params.phi_max)
        })
    };

    let mut u = match init {
        Some(w) => w.values.clone(),
        None => random_field(params.seed),
    };

    let mut history = Vec::new();
    let mut phi_sum = Array2::<f64>::zeros((grid.n, grid.n));
    let mut b_sum = Array2::<f64>::zeros((grid.n, grid.n));

    for cycle in 0..cycles {
        if cycle > 0 && params.restart == RestartMode::Independent {
            u = match init {
                Some(w) => w.values.clone(),
                None => random_field(params.seed.wrapping_add(cycle as u64)),
            };
        }
        for &(method, count) in &params.schedule {
            for _ in 0..count {
                let u_d = plane.apply(&u, &plane.forward);
                let (u_d_proj, residual) = plane.project_magnitude(&u_d);
                history.push(residual);
                let proposal = plane.apply(&u_d_proj, &plane.backward);
                match method {
                    IterMethod::Er => {
                        u = proposal.mapv(|z| sector_project(z, params.phi_max));
                    }
                    IterMethod::Hio => {
                        Zip::from(&mut u).and(&proposal).for_each(|cur, &p| {
                            *cur = if in_sector(p, params.phi_max) {
                                p
                            } else {
                                *cur - params.hio_beta * p
                            };
                        });
                    }
                }
            }
        }
        // endpoint maps for this cycle; B clamps at 0 where HIO left |u| > 1
        Zip::from(&mut phi_sum).and(&u).for_each(|s, z| *s += endpoint_phase(*z));
        Zip::from(&mut b_sum).and(&u).for_each(|s, z| {
            *s += (-z.norm().max(EPS_MAG).ln()).max(0.0);
        });
    }
    // final residual so the effect of the last update is observable
    let u_d = plane.apply(&u, &plane.forward);
    let (_, residual) = plane.project_magnitude(&u_d);
    history.push(residual);

    let inv = 1.0 / cycles as f64;
    Ok(RetrievalResult {
        phi: phi_sum.mapv(|v| v * inv),
        absorption: Some(b_sum.mapv(|v| v * inv)),
        thickness: None,
        residual_history: history,
        clamped_log_pixels: 0,
        pure_phase_fallback_bins: 0,
    })
}

fn endpoint_phase(z: Complex64) -> f64 {
    if z.norm() < EPS_MAG {
        0.0
    } else {
        z.arg()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagator::{intensity, propagate, Grid};
    use crate::retrieval::RestartMode;

    const PI: f64 = std::f64::consts::PI;

    #[test]
    fn sector_projection_is_idempotent_and_matches_brute_force() {
        let phi_max = 2.0;
        let mut worst = 0.0f64;
        // Brute-force oracle: dense sampling of the sector.
        let samples: Vec<Complex64> = (0..200)
            .flat_map(|ir| {
                let r = ir as f64 / 199.0;
                (0..400).map(move |it| {
                    let t = -phi_max * (it as f64 / 399.0);
                    Complex64::from_polar(r, t)
                })
            })
            .collect();
        for &(re, im) in &[
            (0.5, 0.5),
            (-0.7, 0.9),
            (1.5, -0.4),
            (-1.2, -1.2),
            (0.0, 1.0),
            (0.3, -0.1),
            (-0.5, 0.0),
            (2.0, 2.0),
        ] {
            let z = Complex64::new(re, im);
            let p = sector_project(z, phi_max);
            // idempotence
            assert!((sector_project(p, phi_max) - p).norm() < 1e-12);
            // member
            assert!(in_sector(p, phi_max));
            // no sector sample is closer
            let best = samples
                .iter()
                .map(|s| (z - s).norm())
                .fold(f64::INFINITY, f64::min);
            let got = (z - p).norm();
            worst = worst.max(got - best);
            assert!(got <= best + 1e-2, "projection of {z} not optimal: {got} vs {best}");
        }
        assert!(worst < 5e-3, "worst gap {worst}");
    }

    #[test]
    fn sector_projection_half_disk_cases() {
        // phi_max = pi: the sector is the closed lower half disk.
        let p = sector_project(Complex64::new(0.0, 0.5), PI);
        assert!((p - Complex64::new(0.0, 0.0)).norm() < 1e-12);
        let p = sector_project(Complex64::new(0.6, 0.8), PI);
        assert!((p - Complex64::new(0.6, 0.0)).norm() < 1e-12);
        let p = sector_project(Complex64::new(3.0, -4.0), PI);
        assert!((p.norm() - 1.0).abs() < 1e-12 && p.im < 0.0);
    }

    fn consistent_image(grid: Grid, lambda: f64, d: f64) -> (WaveField, IntensityImage) {
        // Weak pure-phase object inside the constraint set.
        let phi = Array2::from_shape_fn((grid.n, grid.n), |(i, j)| {
            let x = (j as f64 - grid.n as f64 / 2.0) / grid.n as f64;
            let y = (i as f64 - grid.n as f64 / 2.0) / grid.n as f64;
            -0.4 * (-(x * x + y * y) * 60.0).exp()
        });
        let wave = WaveField::new(grid, lambda, phi.mapv(|p| Complex64::from_polar(1.0, p)))
            .unwrap();
        let mut img = intensity(&propagate(&wave, d));
        img.distance = d;
        (wave, img)
    }

    #[test]
    fn true_field_is_er_fixed_point() {
        let grid = Grid::new(32, 1e-7).unwrap();
        let lambda = 7.3e-11;
        let (wave, img) = consistent_image(grid, lambda, 6e-4);
        let mut params = RetrievalParams::default();
        params.schedule = vec![(IterMethod::Er, 3)];
        let out = hio_er(&img, Some(&wave), lambda, &params).unwrap();
        // consistent data: residual at machine-precision scale throughout
        for r in &out.residual_history {
            assert!(*r < 1e-9, "residual {r}");
        }
        let drift = out
            .phi
            .iter()
            .zip(wave.values.iter())
            .map(|(p, z)| (p - z.arg()).abs())
            .fold(0.0f64, f64::max);
        assert!(drift < 1e-9, "ER moved a fixed point by {drift}");
    }

    #[test]
    fn magnitude_projection_idempotent() {
        let grid = Grid::new(16, 1e-7).unwrap();
        let lambda = 7.3e-11;
        let (_, img) = consistent_image(grid, lambda, 4e-4);
        let plane = DetectorPlane {
            forward: fresnel_transfer(lambda, img.distance, grid),
            backward: fresnel_transfer(lambda, -img.distance, grid),
            sqrt_i: img.values.mapv(f64::sqrt),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = Array2::from_shape_fn((grid.n, grid.n), |_| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let (once, _) = plane.project_magnitude(&u);
        let (twice, r) = plane.project_magnitude(&once);
        assert!(r < 1e-13);
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn er_residual_non_increasing() {
        let grid = Grid::new(32, 1e-7).unwrap();
        let lambda = 7.3e-11;
        let (_, img) = consistent_image(grid, lambda, 6e-4);
        let mut params = RetrievalParams::default();
        params.schedule = vec![(IterMethod::Er, 30)];
        params.seed = 11;
        let out = hio_er(&img, None, lambda, &params).unwrap();
        for pair in out.residual_history.windows(2) {
            assert!(
                pair[1] <= pair[0] * (1.0 + 1e-12) + 1e-15,
                "ER residual increased: {pair:?}"
            );
        }
    }

    #[test]
    fn schedule_runs_and_reduces_residual() {
        let grid = Grid::new(64, 1e-7).unwrap();
        let lambda = 7.3e-11;
        let (_, img) = consistent_image(grid, lambda, 1e-3);
        let mut params = RetrievalParams::default();
        params.schedule = vec![(IterMethod::Hio, 20), (IterMethod::Er, 5)];
        params.cycles = 2;
        params.seed = 5;
        let out = hio_er(&img, None, lambda, &params).unwrap();
        assert_eq!(out.residual_history.len(), 2 * 25 + 1);
        let first = out.residual_history[0];
        let last = *out.residual_history.last().unwrap();
        assert!(last < first, "no progress: {first} -> {last}");
    }

    #[test]
    fn restart_modes_differ() {
        let grid = Grid::new(32, 1e-7).unwrap();
        let lambda = 7.3e-11;
        let (_, img) = consistent_image(grid, lambda, 6e-4);
        let mut params = RetrievalParams::default();
        params.schedule = vec![(IterMethod::Hio, 5), (IterMethod::Er, 2)];
        params.cycles = 3;
        params.seed = 9;
        params.restart = RestartMode::Sequential;
        let seq = hio_er(&img, None, lambda, &params).unwrap();
        params.restart = RestartMode::Independent;
        let ind = hio_er(&img, None, lambda, &params).unwrap();
        assert_ne!(seq.phi, ind.phi);
    }

    #[test]
    fn rejects_empty_schedule() {
        let grid = Grid::new(16, 1e-7).unwrap();
        let (_, img) = consistent_image(grid, 7.3e-11, 4e-4);
        let mut params = RetrievalParams::default();
        params.schedule = vec![];
        assert!(hio_er(&img, None, 7.3e-11, &params).is_err());
    }
}
