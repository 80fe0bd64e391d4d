//! Network-aware job placement for ML clusters.
//!
//! Periodic per-iteration bandwidth demands are laid out on a shared ring
//! (one circle per link, perimeter equal to the unified period); rotating a
//! job's demand corresponds to delaying its iteration start. The crates in
//! this workspace find rotations that interleave competing jobs' bursts on
//! every contended link, consolidate the per-link answers into one time-shift
//! per job through a bipartite affinity graph, rank candidate placements by
//! the achievable compatibility, and replay the result in a fluid-flow
//! cluster simulation.

pub mod affinity;
pub mod geometry;
pub mod optimizer;
pub mod profiles;
pub mod ranker;
pub mod report;
pub mod simulator;
