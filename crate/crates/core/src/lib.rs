//! Decision engine for heat and noise just-in-time adaptive interventions.
//!
//! Sensor, survey and weather records flow into an append-only [`store`];
//! the [`triggers`] engine evaluates threshold rules or per-participant
//! [`personalize`] plans at each tick, admits messages through a daily
//! budget, and hands them to a [`dispatch`] provider. [`sim`] replays whole
//! deployment phases against synthetic cohorts and [`spatial`] bins the
//! resulting messages into hexagons.

pub mod domain;
pub mod error;
pub mod dispatch;
pub mod personalize;
pub mod sim;
pub mod spatial;
pub mod store;
pub mod triggers;
pub mod weather;

pub use domain::*;
pub use error::{Error, Result, ValidationError};
