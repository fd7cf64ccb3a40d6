//! Deterministic desk-scale laboratory for decentralized SGD with multiple
//! gossip steps (DSGD-MGS).
//!
//! The crate simulates round-synchronous decentralized SGD over a gossip
//! topology, runs coupled perturbed-dataset stability experiments, and
//! evaluates the closed-form stability / optimization / generalization /
//! consensus bounds that predict the measured quantities.
//!
//! Everything is seeded: runs are pure functions of their configuration, and
//! repeated runs are bit-identical regardless of how much parallelism the
//! caller uses.

pub mod bounds;
pub mod data;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod rng;
pub mod topology;

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar type for all core math: `f32` or `f64`.
///
/// The simulator and every bound evaluator are generic over this trait; the
/// concrete aliases below pin the 64-bit instantiation used by the CLI and
/// the test suites (the stated tolerances assume `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + std::iter::Sum<Self>
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` literal (tolerances, closed-form constants).
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + std::iter::Sum<T>
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Default scalar for the CLI and the acceptance suites.
pub type Real = f64;

pub type GossipMatrix64 = topology::GossipMatrix<f64>;
pub type SpectralReport64 = topology::SpectralReport<f64>;
pub type FederatedDataset64 = data::FederatedDataset<f64>;
pub type ModelSpec64 = model::ModelSpec<f64>;
pub type RunConfig64 = optimizer::RunConfig<f64>;
pub type BoundInputs64 = bounds::BoundInputs<f64>;
