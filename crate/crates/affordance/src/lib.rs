//! IO, sessions, batch pipeline, HTTP service and CLI support for
//! [`affordance_core`].

pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod playback;
pub mod service;
pub mod session;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use pipeline::run_batch;
pub use session::{load_session, save_session, SessionState, Stage};
