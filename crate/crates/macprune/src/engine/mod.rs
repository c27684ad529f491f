//! Two-vector event-driven simulation and static timing analysis.

mod sim;
mod sta;

pub use sim::{settle, simulate_transition, Simulator, TransitionTrace};
pub use sta::{adder_bounds, combine_mac_delay, sta, DelayBound};
