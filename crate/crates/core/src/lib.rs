//! Reserve-price learning for repeated second-price auctions whose bidder
//! valuations evolve with a linear Markov decision process.
//!
//! The seller ([`seller::SellerState`]) learns personalized reserves and
//! which item to offer while bidders may misreport. [`oracle`] supplies the
//! informed benchmark and the regret ledger, [`harness`] runs experiments.

pub mod auction;
pub mod bidders;
pub mod env;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod oracle;
pub mod rng;
pub mod seller;
pub mod unknown;

pub use error::{ClubError, Result};
