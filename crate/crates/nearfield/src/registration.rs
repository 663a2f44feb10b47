//! Multi-distance image registration: metadata-driven rescale plus a
//! translation search that survives contrast differences between distances.
//!
//! Contrast at different propagation distances is not comparable, which rules
//! out plain correlation in all but trivial cases; mutual information over a
//! 64-bin joint histogram is the default metric, phase correlation the cheap
//! alternative. Integer search is exhaustive in a window, refined per axis by
//! a 3-point parabola clamped to half a pixel.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fourier::{fft2, ifft2};
use crate::propagator::{Grid, IntensityImage};
use crate::simulator::bilinear_clamped;

/// Similarity metric for the translation search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    MutualInformation,
    PhaseCorrelation,
}

/// Outcome of registering one moving image against the reference.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    /// (dy, dx): the moving image content is displaced by this many pixels
    /// relative to the reference; shifting it back by (-dy, -dx) aligns it.
    pub shift: (f64, f64),
    /// Magnification ratio applied before the search.
    pub scale: f64,
    /// Metric value at the optimum.
    pub score: f64,
    pub metric: Metric,
}

const MI_BINS: usize = 64;
const MIN_OVERLAP_FRACTION: f64 = 0.25;

/// Resample an image about its center so its pixel size becomes
/// `target_pixel`, keeping the raster size. Factors far from 1 are rejected
/// as metadata mistakes.
pub fn rescale_to_common(img: &IntensityImage, target_pixel: f64) -> Result<IntensityImage> {
    if !(target_pixel > 0.0) {
        return Err(Error::Domain(format!("target pixel must be > 0, got {target_pixel}")));
    }
    let factor = img.grid.pixel / target_pixel;
    if !(0.125..=8.0).contains(&factor) {
        return Err(Error::Domain(format!(
            "suspicious rescale factor {factor}; expected within [1/8, 8]"
        )));
    }
    if (factor - 1.0).abs() < 1e-12 {
        let mut out = img.clone();
        out.grid = Grid { n: img.grid.n, pixel: target_pixel };
        return Ok(out);
    }
    let n = img.grid.n;
    let c = n as f64 / 2.0;
    let values = Array2::from_shape_fn((n, n), |(i, j)| {
        let y = c + (i as f64 + 0.5 - c) / factor - 0.5;
        let x = c + (j as f64 + 0.5 - c) / factor - 0.5;
        bilinear_clamped(&img.values, y, x)
    });
    Ok(IntensityImage {
        grid: Grid { n, pixel: target_pixel },
        distance: img.distance,
        values,
    })
}

/// Apply a real-valued shift (dy, dx) by bilinear interpolation with edge
/// replication: output(i, j) = input(i - dy, j - dx).
pub fn apply_shift(values: &Array2<f64>, dy: f64, dx: f64) -> Array2<f64> {
    let (rows, cols) = values.dim();
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        bilinear_clamped(values, i as f64 - dy, j as f64 - dx)
    })
}

/// Mutual information of the overlap region for an integer shift of `moving`
/// relative to `reference`. Returns None when the overlap is too small.
fn mutual_information(
    reference: &Array2<f64>,
    moving: &Array2<f64>,
    dy: i64,
    dx: i64,
) -> Option<f64> {
    let (rows, cols) = reference.dim();
    // moving displaced by (dy, dx): ref[i, j] pairs with moving[i + dy, j + dx]
    let i_lo = (-dy).max(0) as usize;
    let i_hi = ((rows as i64) - dy.max(0)) as usize;
    let j_lo = (-dx).max(0) as usize;
    let j_hi = ((cols as i64) - dx.max(0)) as usize;
    if i_hi <= i_lo || j_hi <= j_lo {
        return None;
    }
    let count = (i_hi - i_lo) * (j_hi - j_lo);
    if (count as f64) < MIN_OVERLAP_FRACTION * (rows * cols) as f64 {
        return None;
    }

    // Bin edges from the overlap's own range.
    let mut r_min = f64::INFINITY;
    let mut r_max = f64::NEG_INFINITY;
    let mut m_min = f64::INFINITY;
    let mut m_max = f64::NEG_INFINITY;
    for i in i_lo..i_hi {
        for j in j_lo..j_hi {
            let r = reference[[i, j]];
            let m = moving[[(i as i64 + dy) as usize, (j as i64 + dx) as usize]];
            r_min = r_min.min(r);
            r_max = r_max.max(r);
            m_min = m_min.min(m);
            m_max = m_max.max(m);
        }
    }
    if r_max <= r_min || m_max <= m_min {
        return Some(0.0);
    }
    let r_scale = MI_BINS as f64 / (r_max - r_min);
    let m_scale = MI_BINS as f64 / (m_max - m_min);
    let mut joint = vec![0u32; MI_BINS * MI_BINS];
    for i in i_lo..i_hi {
        for j in j_lo..j_hi {
            let r = reference[[i, j]];
            let m = moving[[(i as i64 + dy) as usize, (j as i64 + dx) as usize]];
            let br = (((r - r_min) * r_scale) as usize).min(MI_BINS - 1);
            let bm = (((m - m_min) * m_scale) as usize).min(MI_BINS - 1);
            joint[br * MI_BINS + bm] += 1;
        }
    }
    let total = count as f64;
    let mut pr = [0.0f64; MI_BINS];
    let mut pm = [0.0f64; MI_BINS];
    for br in 0..MI_BINS {
        for bm in 0..MI_BINS {
            let p = joint[br * MI_BINS + bm] as f64 / total;
            pr[br] += p;
            pm[bm] += p;
        }
    }
    let mut mi = 0.0;
    for br in 0..MI_BINS {
        for bm in 0..MI_BINS {
            let p = joint[br * MI_BINS + bm] as f64 / total;
            if p > 0.0 {
                mi += p * (p / (pr[br] * pm[bm])).ln();
            }
        }
    }
    Some(mi)
}

/// Phase-correlation surface via the normalized cross-power spectrum;
/// entry [(dy mod n, dx mod n)] scores the shift (dy, dx).
fn phase_correlation_surface(
    reference: &Array2<f64>,
    moving: &Array2<f64>,
) -> Array2<f64> {
    let mut fr = reference.mapv(|v| Complex64::new(v, 0.0));
    let mut fm = moving.mapv(|v| Complex64::new(v, 0.0));
    fft2(&mut fr);
    fft2(&mut fm);
    let mut cross = Array2::<Complex64>::zeros(reference.dim());
    ndarray::Zip::from(&mut cross)
        .and(&fr)
        .and(&fm)
        .for_each(|c, a, b| {
            let v = a.conj() * b;
            let n = v.norm();
            *c = if n > 1e-300 { v / n } else { Complex64::new(0.0, 0.0) };
        });
    ifft2(&mut cross);
    // conj(F(ref)) * F(moving) makes the surface peak at the displacement
    // of the moving image, so surface[dy mod n, dx mod n] scores (dy, dx).
    cross.mapv(|v| v.re)
}

/// 3-point parabolic sub-pixel refinement, clamped to half a pixel.
fn parabolic_offset(left: f64, center: f64, right: f64) -> f64 {
    let denom = left - 2.0 * center + right;
    if denom.abs() < 1e-300 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// Find the translation of `moving` relative to `reference` maximizing the
/// metric over integer shifts in [-radius, radius]², then refine per axis.
/// Ties break toward the smallest |shift|, then lexicographic (dy, dx).
pub fn register_translation(
    reference: &IntensityImage,
    moving: &IntensityImage,
    metric: Metric,
    radius: usize,
) -> Result<RegistrationResult> {
    if reference.grid.n != moving.grid.n {
        return Err(Error::Shape(format!(
            "register_translation needs equal grids, got {} vs {}",
            reference.grid.n, moving.grid.n
        )));
    }
    if radius < 1 {
        return Err(Error::Domain("search radius must be >= 1".into()));
    }
    let r = radius as i64;
    let n = reference.grid.n as i64;
    if 2 * r >= n {
        return Err(Error::Domain(format!(
            "search radius {radius} leaves no overlap on a {n}-pixel grid"
        )));
    }

    let score_at: Box<dyn Fn(i64, i64) -> Option<f64>> = match metric {
        Metric::MutualInformation => {
            let reference = reference.values.clone();
            let moving = moving.values.clone();
            Box::new(move |dy, dx| mutual_information(&reference, &moving, dy, dx))
        }
        Metric::PhaseCorrelation => {
            let surface = phase_correlation_surface(&reference.values, &moving.values);
            Box::new(move |dy, dx| {
                let i = dy.rem_euclid(n) as usize;
                let j = dx.rem_euclid(n) as usize;
                Some(surface[[i, j]])
            })
        }
    };

    let mut best: Option<(f64, i64, i64)> = None;
    let mut any_overlap = false;
    for dy in -r..=r {
        for dx in -r..=r {
            let Some(s) = score_at(dy, dx) else { continue };
            any_overlap = true;
            let better = match best {
                None => true,
                Some((bs, by, bx)) => {
                    s > bs
                        || (s == bs
                            && (dy * dy + dx * dx < by * by + bx * bx
                                || (dy * dy + dx * dx == by * by + bx * bx
                                    && (dy, dx) < (by, bx))))
                }
            };
            if better {
                best = Some((s, dy, dx));
            }
        }
    }
    if !any_overlap {
        return Err(Error::Quality(
            "registration overlap below 25% of pixels at every candidate shift".into(),
        ));
    }
    let (score, by, bx) = best.unwrap();

    // Parabolic refinement needs the neighbors; fall back to 0 offset at the
    // window edge or where the overlap gate trips.
    let neighbor = |dy: i64, dx: i64| score_at(dy, dx).unwrap_or(score);
    let off_y = if by > -r && by < r {
        parabolic_offset(neighbor(by - 1, bx), score, neighbor(by + 1, bx))
    } else {
        0.0
    };
    let off_x = if bx > -r && bx < r {
        parabolic_offset(neighbor(by, bx - 1), score, neighbor(by, bx + 1))
    } else {
        0.0
    };

    Ok(RegistrationResult {
        shift: (by as f64 + off_y, bx as f64 + off_x),
        scale: 1.0,
        score,
        metric,
    })
}

/// Which stack frame anchors the alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceFrame {
    /// Shortest distance (best resolution); the default.
    ShortestDistance,
    LongestDistance,
}

/// Align every image of a stack to the reference frame: rescale to the
/// reference pixel size, register, shift back. Returns the aligned images
/// and one result per non-reference image for audit output.
pub fn align_stack(
    images: &[IntensityImage],
    metric: Metric,
    radius: usize,
    reference: ReferenceFrame,
) -> Result<(Vec<IntensityImage>, Vec<RegistrationResult>)> {
    if images.is_empty() {
        return Err(Error::InsufficientData("align_stack needs at least one image".into()));
    }
    let ref_idx = match reference {
        ReferenceFrame::ShortestDistance => 0,
        ReferenceFrame::LongestDistance => images.len() - 1,
    };
    let ref_img = &images[ref_idx];
    let target_pixel = ref_img.grid.pixel;

    let mut aligned = Vec::with_capacity(images.len());
    let mut results = Vec::new();
    for (idx, img) in images.iter().enumerate() {
        if idx == ref_idx {
            aligned.push(img.clone());
            continue;
        }
        let scale = img.grid.pixel / target_pixel;
        let rescaled = rescale_to_common(img, target_pixel)?;
        let mut reg = register_translation(ref_img, &rescaled, metric, radius)?;
        reg.scale = scale;
        let shifted = apply_shift(&rescaled.values, -reg.shift.0, -reg.shift.1);
        aligned.push(IntensityImage {
            grid: rescaled.grid,
            distance: rescaled.distance,
            values: shifted,
        });
        results.push(reg);
    }
    Ok((aligned, results))
}
