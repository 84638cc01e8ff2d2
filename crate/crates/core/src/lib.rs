//! Cooperative localization of mobile agents via virtual convex hulls.
//!
//! Agents move in a bounded planar region, measure noisy ranges to whatever
//! node happens to pass within their communication radius, and keep tracking
//! the distance to each past contact point with nothing but a law-of-cosines
//! chain over their own motion. Once three such virtual points enclose the
//! agent, the agent rewrites its position estimate as a convex (barycentric)
//! combination of the estimates it collected at those contacts. With one
//! anchor in the network the resulting linear time-varying update provably
//! drives every estimate to the true location; the [`ltv`] module checks the
//! certificates (error recursion, slice decomposition, growth bound) on
//! realized runs.
//!
//! Module map:
//! - [`geometry`]: distance-only planar kernel (areas from the six pairwise
//!   distances, inclusion test, barycentric weights, distance tracking).
//! - [`motion`]: bounded-region waypoint mobility and measurement noise.
//! - [`agent`]: per-agent protocol state (visited set, bearing bookkeeping,
//!   triangulation search, gated update).
//! - [`ltv`]: analysis layer over the induced matrix chain.
//! - [`sim`]: the step loop, Monte Carlo batching, metrics and presets.

pub mod agent;
pub mod geometry;
pub mod ltv;
pub mod motion;
pub mod sim;
pub mod vec2;

pub use vec2::Vec2;
