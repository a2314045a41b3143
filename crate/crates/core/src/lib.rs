//! Nested point-process models for discussion forums: threads arrive on a
//! main stream whose intensity is driven by the reply activity inside earlier
//! threads.

pub mod analysis;
pub mod baselines;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod event;
pub mod ingest;
pub mod intensity;
pub mod likelihood;
pub mod optimize;
pub mod quadrature;
pub mod simulation;

pub use error::{Error, Result};
pub use event::{build_event_space, build_event_space_with, BuildOptions, Cascade, EventSpace, MarkedEvent};
pub use intensity::{DecoupledMainParams, MainParams, ModelOptions, NestppParams, ReplyParams};
