//! Trainable-frequency quantum neural networks on a dense statevector simulator.
//!
//! The crate is organised bottom-up:
//!
//! * [`qstate`]: statevector, gate kernels and the magnetization observable.
//! * [`circuits`]: feature maps, hardware-efficient layers, model layouts and
//!   spectral analysis of encoding generators.
//! * [`autodiff`]: shift rules, the generalized shift rule and an exact
//!   forward-mode tracker for input derivatives.
//! * [`training`]: cosine-series datasets, Adam and the supervised loop.
//! * [`pde`]: Navier-Stokes residuals on a stream-function/pressure pair of models.

pub mod autodiff;
pub mod circuits;
pub mod error;
pub mod pde;
pub mod qstate;
pub mod training;

pub use error::{Error, Result};
