//! Deterministic virtual-time simulation of federated averaging with
//! communication/computation overlap.
//!
//! The crate is organized bottom-up:
//!
//! * [`param`] — flat 64-bit parameter vectors and the handful of
//!   elementwise operations everything else is built from.
//! * [`model`] — a tiny zoo of differentiable models with hand-derived
//!   analytic gradients plus finite-difference and Hessian oracles.
//! * [`data`] — synthetic Gaussian-cluster corpora, IDX file loading, and
//!   two-level Dirichlet non-IID partitioning.
//! * [`aggregation`] — the server-side update pipeline: gradient
//!   restoration from uploaded weights, stale-gradient compensation via the
//!   gradient outer product, and Nesterov-accelerated application.
//! * [`sim`] — a discrete-event engine over virtual seconds that runs the
//!   synchronous baseline and the overlapped schedule.
//! * [`metrics`] — per-round records, CSV/JSON emission, and run-to-run
//!   comparison.
//! * [`config`] — strict experiment configuration, validation,
//!   fingerprinting, and the bundled presets.
//!
//! Every source of randomness flows from five named seeds (`data`,
//! `partition`, `init`, `sampling`, `jitter`); repeated runs of the same
//! configuration produce byte-identical output.

pub mod aggregation;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod param;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use param::ParamVector;
