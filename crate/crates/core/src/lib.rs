//! Delay-aware resource control for slotted wireless systems.
//!
//! Single-hop OFDMA uplinks are controlled by a CSI-only rate-constraint
//! policy, queue-weighted Lyapunov policies, or MDP policies learned per link;
//! multi-hop networks use backpressure routing and its delay-reducing variants.

pub mod alloc;
pub mod channel;
pub mod error;
pub mod lyapunov;
pub mod mdp;
pub mod model;
pub mod rate_constraint;
pub mod routing;
pub mod sim;
pub mod traffic;

pub use error::{Error, Result};
