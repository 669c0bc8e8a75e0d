//! Entity-linked address detection on token transfer graphs, and liquidity
//! risk indicators computed before and after merging linked addresses.
//!
//! Pipeline: [`ingest`] → [`preprocess`] → [`detect`] → [`cluster`] →
//! [`metrics`] → [`report`], orchestrated by [`pipeline`]. [`synth`]
//! generates datasets with planted entities for testing.

pub mod cluster;
pub mod detect;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod synth;

pub use model::*;
