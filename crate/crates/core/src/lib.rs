//! Biased growth dynamics on monotone lattice surfaces.
//!
//! A downset of a nice lattice region is a set of unit cubes closed under
//! taking axis-negative neighbors; its upper boundary is a monotone surface
//! (a staircase walk in 2D, a lozenge-tiling surface in 3D). The chain here
//! adds or removes one cube per step, biased toward adding, with the bias
//! allowed to vary by site. The crate provides:
//!
//! - the region/downset structure and its move calculus ([`region`]),
//! - the biased chain with deterministic counter-based draws ([`dynamics`]),
//! - exponential distance metrics and exact one-step drift ([`metrics`]),
//! - the shared-draw grand coupling and hitting-time harness ([`coupling`]),
//! - exact stationary laws, mixing times, and conductance ([`oracle`]),
//! - the fluctuating-bias bottleneck construction ([`slowmix`]).
//!
//! Simulation runs on `f64`; every asserted inequality is evaluated with
//! exact rational or quadratic-field arithmetic ([`numeric`]).

pub mod coupling;
pub mod dynamics;
pub mod metrics;
pub mod numeric;
pub mod oracle;
pub mod region;
pub mod rng;
pub mod slowmix;

pub use dynamics::{BiasField, ChainConfig, MoveDraw, StartSpec};
pub use region::{Downset, Region};
