//! Server-coordinated peer-to-peer video on demand over combined cellular
//! and ad-hoc Wi-Fi links.
//!
//! The server tracks who hears whom ([`model::ConnectivityMap`]), who
//! holds which pieces ([`model::ContentMap`]) and whom to trust
//! ([`trust::TrustState`]), and picks a source for every piece request
//! ([`scheduler::ServerState::schedule_piece`]). [`sim::run`] drives the
//! whole system through a deterministic discrete-event simulation and
//! returns a [`metrics::Report`].

pub mod cli;
pub mod client;
pub mod discovery;
pub mod error;
pub mod metrics;
pub mod model;
pub mod radio;
pub mod rng;
pub mod scenario;
pub mod scheduler;
pub mod sim;
pub mod trust;

pub use error::{MoviError, Result};
pub use metrics::Report;
pub use model::{NodeId, PieceId, Source, VideoSpec};
pub use scenario::{Mode, Scenario};
