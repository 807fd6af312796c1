//! Streaming wire protocol for the viewer endpoint.
//!
//! The client sends camera poses; for each answered pose the server sends
//! the difference between the client's resident set and the cut for that
//! pose. SPTs are streamed as whole cut prefixes keyed by `(spt_id,
//! prefix_len)`, so the client reproduces the per-SPT selection locally
//! from the record keys. Nodes outside SPTs are replaced wholesale by an
//! UpperSet whenever they change.

mod server;
mod session;
#[cfg(test)]
mod tests;
mod wire;

pub use server::{serve, serve_connection, SessionSummary};
pub use session::{hello, HudTotals, ResidentSet, ResidentSpt, ServeScene, ServeSession, PROTOCOL_VERSION};
pub use wire::*;
