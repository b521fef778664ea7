pub mod amp;
pub mod bp;
pub mod error;
pub mod sensing;
pub mod sim;
pub mod state_evolution;
pub mod tree_code;
