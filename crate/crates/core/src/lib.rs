pub mod admin;
pub mod api;
pub mod clock;
pub mod config;
pub mod domain;
pub mod fleet;
pub mod projection;
pub mod scheduler;
pub mod sim;
pub mod store;
pub mod workflow;

pub use fleet::{Fleet, FleetClock, FleetError};
pub use scheduler::SchedulerConfig;
