//! Hardware-free perception-to-actuation pipeline for tabletop manipulation:
//! simulated detection and pose estimation, a per-object tracking state
//! machine, a latest-value pose stream over HTTP, an IK trajectory planner,
//! a UDP joint-command bridge and a PD-controlled robot simulation.

pub mod bridge;
pub mod harness;
pub mod planner;
pub mod rng;
pub mod se3;
pub mod sim;
pub mod stream;
pub mod tracker;
