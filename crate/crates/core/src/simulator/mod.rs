//! Cluster simulation: topology and routing, fluid bandwidth sharing, job
//! traces, and the millisecond-stepped event loop.

pub mod engine;
pub mod fluid;
pub mod topology;
pub mod trace;

pub use engine::{run, AdjustmentEvent, SchedulerKind, SimConfig, SimError, SimReport};
pub use topology::{route, Rack, Server, Topology, TopologyError};
pub use trace::{
    generate_poisson_trace, JobSpec, PoissonTraceConfig, Trace, TraceError, TraceEvent,
    TraceEventKind,
};
