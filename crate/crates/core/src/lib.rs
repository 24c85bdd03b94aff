//! Channel synthesis and compressed channel estimation for time-varying
//! dual-wideband sub-THz massive MIMO-OFDM.
//!
//! The pipeline is: [`channel`] draws frames of multipath channels,
//! [`training`] probes them with random beams, and [`estimators`] recover the
//! channel from the combined pilot measurements using the grids and
//! dictionaries of [`codebook`].

pub mod channel;
pub mod codebook;
pub mod estimators;
pub mod numerics;
pub mod training;

pub use numerics::{CMatrix, CVector, C64};
