//! Detection of region-scale website unavailability from multi-vantage crawl
//! logs, and a traceroute differential that separates server-side blocking
//! from on-path middleboxes.

pub mod aggregator;
pub mod blockpage;
pub mod campaign;
pub mod fetcher;
pub mod model;
pub mod netsim;
pub mod record;
pub mod report;
pub mod traceroute;

pub use model::*;
