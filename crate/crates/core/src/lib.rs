//! Trust-aware multi-robot task allocation and symbolic motion planning.
pub mod allocation;
pub mod automata;
pub mod planner;
pub mod sim;
pub mod trust;
pub mod world;
