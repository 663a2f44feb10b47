//! Phase-retrieval algorithms.
//!
//! Linear one-shot inversions (WTIE, TIE-HOM, CTF, CTF pure phase) and
//! iterative refinements (gradient descent, HIO/ER). All of them consume
//! flat-corrected, aligned stacks; dataset handling stays upstream.

mod gradient;
mod hio_er;
mod linear;

pub use gradient::gradient_descent;
pub use hio_er::{hio_er, sector_project};
pub use linear::{ctf, ctf_pure_phase, tie_hom, wtie};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::propagator::{Grid, IntensityImage};
use crate::simulator::SimulatedStack;

/// Registered, flat-corrected intensity images with known effective
/// distances, all on one grid, distances strictly increasing.
#[derive(Debug, Clone)]
pub struct IntensityStack {
    pub images: Vec<IntensityImage>,
    /// Wavelength in meters.
    pub wavelength: f64,
    /// Whether the images went through flat/dark correction (or came out of
    /// the simulator already normalized).
    pub corrected: bool,
}

impl IntensityStack {
    pub fn new(images: Vec<IntensityImage>, wavelength: f64) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InsufficientData("intensity stack is empty".into()));
        }
        if !(wavelength > 0.0) {
            return Err(Error::Domain(format!("wavelength must be > 0, got {wavelength}")));
        }
        let grid = images[0].grid;
        for img in &images {
            if img.grid.n != grid.n {
                return Err(Error::Shape("stack images must share one grid size".into()));
            }
        }
        for pair in images.windows(2) {
            if pair[1].distance <= pair[0].distance {
                return Err(Error::Domain(
                    "stack distances must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self { images, wavelength, corrected: true })
    }

    pub fn from_simulated(sim: &SimulatedStack, wavelength: f64) -> Result<Self> {
        Self::new(sim.images.clone(), wavelength)
    }

    pub fn grid(&self) -> Grid {
        self.images[0].grid
    }

    pub fn distances(&self) -> Vec<f64> {
        self.images.iter().map(|i| i.distance).collect()
    }
}

/// Which iteration the HIO/ER schedule runs at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterMethod {
    Hio,
    Er,
}

/// How repeated HIO/ER cycles are chained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestartMode {
    /// Each cycle continues from the previous endpoint.
    Sequential,
    /// Each cycle restarts from a fresh random-phase field (seed + cycle).
    Independent,
}

/// Step-size policy for gradient descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    /// Armijo backtracking with halving, starting from tau0.
    Backtracking { tau0: f64 },
}

/// Tikhonov regularization, either one value or split at a crossover
/// frequency (defaults to the first zero of sin chi for the shortest
/// distance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    Single(f64),
    TwoBand { low: f64, high: f64, crossover: Option<f64> },
}

impl Alpha {
    /// Value at squared frequency |f|², given the default crossover in cycles/m.
    pub fn at(&self, f_sq: f64, default_crossover: f64) -> f64 {
        match *self {
            Alpha::Single(a) => a,
            Alpha::TwoBand { low, high, crossover } => {
                let cr = crossover.unwrap_or(default_crossover);
                if f_sq < cr * cr {
                    low
                } else {
                    high
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Alpha::Single(a) => a >= 0.0,
            Alpha::TwoBand { low, high, .. } => low >= 0.0 && high >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain("alpha must be >= 0".into()))
        }
    }
}

/// Parameters shared across the retrieval suite. Methods read only the
/// fields they need.
#[derive(Debug, Clone)]
pub struct RetrievalParams {
    pub alpha: Alpha,
    /// delta/beta ratio for TIE-HOM.
    pub delta_beta: f64,
    /// Refractive index decrement; enables physically scaled thickness.
    pub delta: Option<f64>,
    pub max_iter: usize,
    pub step_rule: StepRule,
    /// Fienup feedback constant (not the absorption index).
    pub hio_beta: f64,
    pub schedule: Vec<(IterMethod, usize)>,
    pub cycles: usize,
    pub restart: RestartMode,
    /// Object constraint: phase confined to [-phi_max, 0].
    pub phi_max: f64,
    /// Freeze absorption in gradient descent.
    pub pure_phase: bool,
    pub seed: u64,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            alpha: Alpha::Single(1e-8),
            delta_beta: 100.0,
            delta: None,
            max_iter: 20,
            step_rule: StepRule::Backtracking { tau0: 0.05 },
            hio_beta: 0.9,
            schedule: vec![(IterMethod::Hio, 45), (IterMethod::Er, 5)],
            cycles: 1,
            restart: RestartMode::Sequential,
            phi_max: std::f64::consts::PI,
            pure_phase: false,
            seed: 0,
        }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<()> {
        self.alpha.validate()?;
        if !(self.delta_beta > 0.0) {
            return Err(Error::Domain(format!(
                "delta/beta must be > 0, got {}",
                self.delta_beta
            )));
        }
        if !(self.hio_beta > 0.0 && self.hio_beta <= 1.0) {
            return Err(Error::Domain(format!(
                "hio feedback must be in (0, 1], got {}",
                self.hio_beta
            )));
        }
        if !(self.phi_max > 0.0 && self.phi_max <= std::f64::consts::PI) {
            return Err(Error::Domain(format!(
                "phi_max must be in (0, pi], got {}",
                self.phi_max
            )));
        }
        Ok(())
    }
}

/// Output of any retrieval: phase map (radians, nonpositive convention),
/// optional absorption and thickness, and the per-iteration data-fidelity
/// history for iterative methods.
#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub phi: Array2<f64>,
    pub absorption: Option<Array2<f64>>,
    /// Thickness map in meters when physically scaled, otherwise the
    /// attenuation thickness mu*T (see `tie_hom`).
    pub thickness: Option<Array2<f64>>,
    pub residual_history: Vec<f64>,
    /// TIE-HOM pixels clamped before the logarithm.
    pub clamped_log_pixels: usize,
    /// CTF frequency bins that fell back to the pure-phase formula.
    pub pure_phase_fallback_bins: usize,
}

impl RetrievalResult {
    pub fn from_phi(phi: Array2<f64>) -> Self {
        Self {
            phi,
            absorption: None,
            thickness: None,
            residual_history: Vec::new(),
            clamped_log_pixels: 0,
            pure_phase_fallback_bins: 0,
        }
    }
}

/// First zero of sin(chi) for the shortest stack distance, in cycles/m.
pub(crate) fn default_crossover(wavelength: f64, d_min: f64) -> f64 {
    if d_min <= 0.0 {
        return f64::INFINITY;
    }
    1.0 / (wavelength * d_min).sqrt()
}
