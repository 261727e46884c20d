//! Session service for vfmchat: per-session persistence, an HTTP API, and
//! the pieces the `vfmchat` command line is built from.

pub mod config;
pub mod error;
pub mod http;
pub mod replay;
pub mod session;

pub use config::SessionConfig;
pub use error::ServiceError;
pub use session::{
    default_backend_factory, scripted_factory, BackendFactory, CreateSession, MessageResponse, Session,
    SessionStore, Shared, Upload,
};
