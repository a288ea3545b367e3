//! Privacy gateway core: device model, applet catalog, event filtering,
//! pseudo-event fuzzing, the stateless trigger-action platform and the
//! adversary-side analysis.
//!
//! The crate is `no_std` with `alloc`. Enable `std` for `std::error::Error`
//! implementations on the error types.

#![cfg_attr(not(feature = "std"), no_std)]
extern crate alloc;

pub mod analysis;
pub mod catalog;
pub mod filter;
pub mod fuzz;
pub mod gateway;
pub mod model;
pub mod ta;
pub mod wire;
