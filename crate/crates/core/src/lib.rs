//! Co-evolutionary adversarial training engine.
//!
//! Generators are treated as pathogens and discriminators as hosts. Populations
//! of small dense learners are matched under one of several propagation
//! structures, scored by the Fréchet distance between Gaussian fits of real and
//! generated samples, and compared with order statistics and Student t-tests.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! parallel experiment orchestration live in the `pathogan` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adversarial;
pub mod data;
pub mod fitness;
pub mod gradcheck;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod propagation;
pub mod rng;
pub mod stats;

pub use linalg::Matrix;
pub use rng::SeededStream;
