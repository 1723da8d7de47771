//! Log service, monitor client, scripted scenarios and benchmarks around
//! `pkisn-core`.

pub mod api;
pub mod bench;
pub mod client;
pub mod clock;
pub mod config;
pub mod handshake;
pub mod node;
pub mod scenario;
pub mod store;
pub mod wire;
