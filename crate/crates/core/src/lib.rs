//! Strategic multi-agent path finding on grids: agents with private
//! incentives plan on potential maps and settle contested cells through a
//! turn-order auction.

pub mod auction;
pub mod cbs;
pub mod harness;
pub mod metrics;
pub mod planner;
pub mod potential;
pub mod world;
