//! Multi-server epsilon-private information retrieval.
//!
//! The crate generates client queries for every mechanism, answers them on
//! replicated databases, computes the analytic privacy bounds and costs, and
//! plays the adversary's distinguishing game to check those bounds.

pub mod analysis;
pub mod anonymity;
pub mod bitvec;
pub mod client;
pub mod error;
pub mod exec;
pub mod game;
pub mod mechanisms;
pub mod params;
pub mod parity;
pub mod record;
pub mod rng;
pub mod server;
pub mod service;

pub use analysis::{CostEstimate, PrivacyBound};
pub use bitvec::BitVector;
pub use error::{Error, Result};
pub use exec::Execution;
pub use mechanisms::{GenOptions, MechanismParams, QueryPlan, ServerRequest};
pub use params::SystemParams;
pub use record::{Database, Record};
pub use rng::RngStream;
pub use server::ServerResponse;
