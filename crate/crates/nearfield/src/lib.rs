pub mod error;
pub mod fourier;
pub mod geometry;
pub mod propagator;
pub mod registration;
pub mod retrieval;
pub mod simulator;
