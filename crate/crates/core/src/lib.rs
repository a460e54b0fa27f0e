//! Delay-QoS analysis for multi-hop wireless queueing systems.
//!
//! The pipeline: generate compound-Poisson traffic ([`traffic`]), draw per-slot
//! wireless service from a 3GPP-style path-loss + shadowing model ([`channel`]),
//! push both through a FIFO tandem of queues ([`tandem`]), and bound the
//! end-to-end delay tail with exponential (sliding-block martingale) machinery
//! ([`martingale`], [`bounds`]). The free parameter theta is solved under a
//! stability constraint with an occurrence-rate cap ([`solver`]), and the same
//! bound is inverted into a minimum service rate for a QoS target
//! ([`provision`]). [`montecarlo`] runs the bound-versus-simulation comparison
//! at scale; [`config`] and [`report`] cover the file formats around it.
//!
//! All queue arithmetic is in whole bits (integers), so conservation
//! identities hold exactly. Everything involving exponential moments runs in
//! log domain.

pub mod bounds;
pub mod channel;
pub mod config;
pub mod error;
pub mod martingale;
pub mod montecarlo;
pub mod provision;
pub mod report;
pub mod seed;
pub mod selftest;
pub mod solver;
pub mod stats;
pub mod tandem;
pub mod traffic;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
