//! Acquisition geometry: energy/wavelength conversion and the cone-beam
//! equivalence mapping.
//!
//! A sample at distance z1 from the focus and z2 from the detector is
//! equivalent to a parallel-beam setup with magnification M = (z1+z2)/z1,
//! effective distance D = z1*z2/(z1+z2) and effective pixel size
//! detector_pixel/M. A parallel beam is encoded as z1 = +inf.
//!
//! All lengths are meters; energies are keV. Conversions happen at I/O
//! boundaries only.

use crate::error::{Error, Result};

/// hc in keV·nm (CODATA).
pub const HC_KEV_NM: f64 = 1.23984198;

/// Photon energy in keV, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamEnergy {
    kev: f64,
}

impl BeamEnergy {
    pub fn new(kev: f64) -> Result<Self> {
        if !(kev > 0.0) || !kev.is_finite() {
            return Err(Error::Domain(format!("photon energy must be > 0 keV, got {kev}")));
        }
        Ok(Self { kev })
    }

    pub fn kev(&self) -> f64 {
        self.kev
    }

    /// Wavelength in meters, lambda = hc/E.
    pub fn wavelength_m(&self) -> f64 {
        self.wavelength_nm() * 1e-9
    }

    /// Wavelength in nanometers.
    pub fn wavelength_nm(&self) -> f64 {
        HC_KEV_NM / self.kev
    }
}

/// lambda = hc/E, in nanometers.
pub fn wavelength_from_energy(energy: BeamEnergy) -> f64 {
    energy.wavelength_nm()
}

/// Cone-beam acquisition geometry (Fig.-1 style focus/sample/detector layout).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionGeometry {
    pub energy: BeamEnergy,
    /// Focus-to-sample distance z1 in meters; +inf encodes a parallel beam.
    pub z_source_sample: f64,
    /// Sample-to-detector distance z2 in meters.
    pub z_sample_detector: f64,
    /// Physical detector pixel size in meters.
    pub detector_pixel: f64,
}

impl AcquisitionGeometry {
    pub fn new(
        energy: BeamEnergy,
        z_source_sample: f64,
        z_sample_detector: f64,
        detector_pixel: f64,
    ) -> Result<Self> {
        if z_source_sample <= 0.0 || z_source_sample.is_nan() {
            return Err(Error::DegenerateGeometry(format!(
                "z1 must be > 0 or +inf, got {z_source_sample}"
            )));
        }
        if !(z_sample_detector >= 0.0) || !z_sample_detector.is_finite() {
            return Err(Error::Domain(format!("z2 must be >= 0, got {z_sample_detector}")));
        }
        if !(detector_pixel > 0.0) || !detector_pixel.is_finite() {
            return Err(Error::Domain(format!(
                "detector pixel must be > 0, got {detector_pixel}"
            )));
        }
        Ok(Self {
            energy,
            z_source_sample,
            z_sample_detector,
            detector_pixel,
        })
    }

    pub fn effective(&self) -> EffectiveGeometry {
        effective_geometry(self)
    }
}

/// Parallel-beam equivalent of a cone-beam position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveGeometry {
    pub magnification: f64,
    /// Effective propagation distance D in meters.
    pub effective_distance: f64,
    /// Effective (demagnified) pixel size in meters.
    pub effective_pixel: f64,
}

/// M = (z1+z2)/z1, D = z1*z2/(z1+z2), effective pixel = detector_pixel/M.
/// For z1 = +inf the parallel-beam limit M = 1, D = z2 applies.
pub fn effective_geometry(g: &AcquisitionGeometry) -> EffectiveGeometry {
    let z1 = g.z_source_sample;
    let z2 = g.z_sample_detector;
    if z1.is_infinite() {
        return EffectiveGeometry {
            magnification: 1.0,
            effective_distance: z2,
            effective_pixel: g.detector_pixel,
        };
    }
    let magnification = (z1 + z2) / z1;
    EffectiveGeometry {
        magnification,
        effective_distance: z1 * z2 / (z1 + z2),
        effective_pixel: g.detector_pixel / magnification,
    }
}

/// Fresnel number F = a²/(lambda L) for a feature of size `a`.
pub fn fresnel_number(feature_size: f64, wavelength: f64, distance: f64) -> Result<f64> {
    if !(feature_size > 0.0 && wavelength > 0.0 && distance > 0.0) {
        return Err(Error::Domain(format!(
            "fresnel_number needs positive inputs, got a={feature_size}, lambda={wavelength}, L={distance}"
        )));
    }
    Ok(feature_size * feature_size / (wavelength * distance))
}

/// Propagation regime for a given Fresnel number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// F above threshold: phase contrast shows up as interface fringes.
    EdgeEnhancement,
    /// F well below 1: extended interference fringes dominate.
    Holographic,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::EdgeEnhancement => write!(f, "edge-enhancement"),
            Regime::Holographic => write!(f, "holographic"),
        }
    }
}

/// Default F threshold separating the regimes; advisory only.
pub const REGIME_THRESHOLD: f64 = 0.1;

pub fn regime_classify(fresnel: f64, threshold: f64) -> Result<Regime> {
    if !(fresnel > 0.0) {
        return Err(Error::Domain(format!("Fresnel number must be > 0, got {fresnel}")));
    }
    if fresnel >= threshold {
        Ok(Regime::EdgeEnhancement)
    } else {
        Ok(Regime::Holographic)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kev(e: f64) -> BeamEnergy {
        BeamEnergy::new(e).unwrap()
    }

    #[test]
    fn wavelength_matches_hc_over_e() {
        assert!((wavelength_from_energy(kev(1.0)) - 1.23984198).abs() < 1e-12);
        assert!((wavelength_from_energy(kev(12.3984198)) - 0.1).abs() < 1e-12);
        assert!((kev(1.0).wavelength_m() - 1.23984198e-9).abs() < 1e-21);
    }

    #[test]
    fn nonpositive_energy_rejected() {
        assert!(BeamEnergy::new(0.0).is_err());
        assert!(BeamEnergy::new(-3.0).is_err());
    }

    #[test]
    fn wavelength_decreasing_in_energy() {
        let mut prev = f64::INFINITY;
        for e in [0.5, 1.0, 5.0, 17.0, 60.0] {
            let w = wavelength_from_energy(kev(e));
            assert!(w < prev);
            prev = w;
        }
    }

    #[test]
    fn symmetric_cone_beam() {
        let g = AcquisitionGeometry::new(kev(17.0), 0.1, 0.1, 1e-6).unwrap();
        let eff = g.effective();
        assert!((eff.magnification - 2.0).abs() < 1e-15);
        assert!((eff.effective_distance - 0.05).abs() < 1e-15);
        assert!((eff.effective_pixel - 0.5e-6).abs() < 1e-21);
    }

    #[test]
    fn parallel_beam_limit() {
        let g = AcquisitionGeometry::new(kev(17.0), f64::INFINITY, 1.0, 1e-6).unwrap();
        let eff = g.effective();
        assert_eq!(eff.magnification, 1.0);
        assert_eq!(eff.effective_distance, 1.0);
        assert_eq!(eff.effective_pixel, 1e-6);
    }

    #[test]
    fn high_magnification_position() {
        let g = AcquisitionGeometry::new(kev(17.0), 0.01, 1.0, 10e-6).unwrap();
        let eff = g.effective();
        assert!((eff.magnification - 101.0).abs() < 1e-12);
        assert!((eff.effective_distance - 9.90099009900990e-3).abs() < 1e-15);
        assert!((eff.effective_pixel - 99.0099009900990e-9).abs() < 1e-19);
    }

    #[test]
    fn zero_z1_is_degenerate() {
        assert!(matches!(
            AcquisitionGeometry::new(kev(17.0), 0.0, 1.0, 1e-6),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn magnification_scale_invariant_distance_covariant() {
        let g = AcquisitionGeometry::new(kev(17.0), 0.3, 0.7, 1e-6).unwrap();
        let scaled = AcquisitionGeometry::new(kev(17.0), 3.0, 7.0, 1e-6).unwrap();
        let (a, b) = (g.effective(), scaled.effective());
        assert!((a.magnification - b.magnification).abs() < 1e-14);
        assert!((b.effective_distance - 10.0 * a.effective_distance).abs() < 1e-14);
    }

    #[test]
    fn effective_distance_bounded_by_min_leg() {
        for (z1, z2) in [(0.1, 0.9), (2.0, 0.01), (5.0, 5.0)] {
            let g = AcquisitionGeometry::new(kev(17.0), z1, z2, 1e-6).unwrap();
            assert!(g.effective().effective_distance <= z1.min(z2) + 1e-15);
        }
    }

    #[test]
    fn fresnel_number_examples() {
        assert!((fresnel_number(1e-6, 0.1e-9, 10e-3).unwrap() - 1.0).abs() < 1e-12);
        assert!((fresnel_number(100e-9, 0.1e-9, 10e-3).unwrap() - 0.01).abs() < 1e-14);
        // L = a^2/lambda gives F = 1 exactly.
        let (a, lambda) = (3.2e-7, 7e-11);
        assert!((fresnel_number(a, lambda, a * a / lambda).unwrap() - 1.0).abs() < 1e-12);
        assert!(fresnel_number(0.0, 1e-10, 1.0).is_err());
    }

    #[test]
    fn fresnel_number_times_l_independent_of_l() {
        let (a, lambda) = (5e-7, 7.3e-11);
        let p1 = fresnel_number(a, lambda, 0.01).unwrap() * 0.01;
        let p2 = fresnel_number(a, lambda, 2.5).unwrap() * 2.5;
        assert!((p1 - p2).abs() / p1 < 1e-12);
    }

    #[test]
    fn regime_boundaries() {
        assert_eq!(regime_classify(1.0, REGIME_THRESHOLD).unwrap(), Regime::EdgeEnhancement);
        assert_eq!(regime_classify(0.001, REGIME_THRESHOLD).unwrap(), Regime::Holographic);
        // Boundary convention: F == threshold classifies as edge enhancement.
        assert_eq!(
            regime_classify(REGIME_THRESHOLD, REGIME_THRESHOLD).unwrap(),
            Regime::EdgeEnhancement
        );
        assert!(regime_classify(0.0, REGIME_THRESHOLD).is_err());
    }
}
