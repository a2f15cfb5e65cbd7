//! Signal-to-noise budgeting and photon-counting simulation for the
//! detection of a single quantum emitter, either through its red-shifted
//! fluorescence or through the extinction dip it imprints on a transmitted
//! laser beam.
//!
//! All optical powers are photon rates in counts per second (cps). Decay
//! rates and detunings are angular rates in rad/s.
//!
//! The analytic layers ([`model`], [`snr`], [`fitting`]) are generic over the
//! floating-point type through [`Scalar`]; the simulation and scenario layers
//! work in `f64`. The aliases at the crate root name the `f64` instantiations
//! used throughout the simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fitting;
pub mod model;
pub mod scenarios;
pub mod sim;
pub mod snr;

use num_traits::{Float, FloatConst};
use std::fmt::{Debug, Display};

pub use error::{Error, Result};

/// Floating-point scalar accepted by the analytic modules.
pub trait Scalar: Float + FloatConst + Debug + Display + Send + Sync + 'static {}

impl<T> Scalar for T where T: Float + FloatConst + Debug + Display + Send + Sync + 'static {}

/// Converts an `f64` literal into the working scalar type.
#[inline]
pub(crate) fn lit<T: Scalar>(x: f64) -> T {
    T::from(x).expect("literal representable in scalar type")
}

pub type Emitter = model::EmitterParams<f64>;
pub type Optics = model::OpticsParams<f64>;
pub type Detector = model::DetectorParams<f64>;
pub type Drive = model::DriveParams<f64>;
pub type Fit = fitting::FitResult<f64>;
pub type SnrPoint = snr::SnrPoint<f64>;

pub use sim::{Channel, ScanConfig, Spectrum};
