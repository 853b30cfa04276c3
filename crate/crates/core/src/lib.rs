//! Noisy quantum kernel machines built on a driven-dissipative spin chain.
//!
//! Classical inputs are written into Gaussian drive pulses acting on a
//! disordered XYZ chain with on-site dephasing. The resulting mixed states
//! are read out as Pauli expectation values, which feed a centered feature
//! kernel and a closed-form least-squares classifier.
//!
//! Module map:
//!
//! * [`qcore`]: dense N-spin operator algebra, Pauli strings, purity,
//!   entropy and negativity.
//! * [`dynamics`]: disorder sampling, the driven Hamiltonian and a fixed-step
//!   RK4 Lindblad integrator.
//! * [`encode`]: IDX ingestion, downsampling, random projection, splits and
//!   synthetic fixtures.
//! * [`decode`]: tomography and time-multiplexed features, the channel
//!   transfer matrix, measurement noise.
//! * [`kernel`]: Gram matrices, centering, spectra, effective rank, alignment
//!   and the generalization bound.
//! * [`train`]: ridge solves with and without a regularized intercept,
//!   one-vs-rest classification and risk metrics.
//! * [`store`]: flat `f64` matrix files with JSON sidecars.

pub mod decode;
pub mod dynamics;
pub mod encode;
pub mod error;
pub mod kernel;
pub mod qcore;
pub mod store;
pub mod train;

pub use error::{Error, Result};
