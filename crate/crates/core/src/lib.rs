//! Flexibility market for household demand: characterisation of consumption into
//! essential and flexible parts, an automatic market maker that prices scarcity, and
//! allocators that decide which flexible requests are served.

pub mod allocators;
pub mod amm;
pub mod characterizer;
pub mod data_io;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod ledger;
pub mod market;
pub mod reliability;
pub mod types;

pub use error::{Error, Result};
pub use grid::{TimeGrid, Timestamp};
pub use market::{MarketConfig, PriceCurve, PricingMode};
pub use types::{HouseholdId, HouseholdRecord, Offer, OfferId, Request, RequestId};
