//! Flexible Management Entity: virtualized core agents inside each HeNB.
//!
//! GW-A, MME-A and D2D-A run as units of a HeNB next to the topology (TMU),
//! routing (RMU) and link (LMU) units. Tunnels toward the physical EPC (vS1)
//! and toward other HeNBs (vX2) ride a multi-hop backhaul and buffer through
//! outages.

pub mod gateway;
pub mod message;
pub mod network;
pub mod node;
pub mod routing;
pub mod trace;
pub mod tunnel;

pub use network::{BhBody, BhFrame, FmeConfig, FmeEvent, FmeNetwork, Outbox, UserDst, UserFrame};
