//! Job traces: arrival/departure/lease events, plus a Poisson generator that
//! thins arrivals to hold cluster load inside a target band.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::topology::Topology;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace event times must be non-decreasing (index {0})")]
    OutOfOrder(usize),
    #[error("arrival {0} requests zero workers")]
    ZeroWorkers(String),
    #[error("duplicate job id {0}")]
    DuplicateJob(String),
}

/// A job entering the cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub id: String,
    /// Profile key (model kind) naming the job's iteration profile.
    pub kind: String,
    pub workers: u32,
    /// Training duration in iterations.
    pub duration_iters: u32,
    /// Optional fixed placement (one server id per worker). When present the
    /// scheduler honors it instead of choosing servers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinned_servers: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEventKind {
    Arrival { job: JobSpec },
    Departure { job_id: String },
    LeaseExpiry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub at_ms: u64,
    #[serde(flatten)]
    pub event: TraceEventKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn validate(&self) -> Result<(), TraceError> {
        let mut seen = std::collections::BTreeSet::new();
        for (i, w) in self.events.windows(2).enumerate() {
            if w[1].at_ms < w[0].at_ms {
                return Err(TraceError::OutOfOrder(i + 1));
            }
        }
        for e in &self.events {
            if let TraceEventKind::Arrival { job } = &e.event {
                if job.workers == 0 {
                    return Err(TraceError::ZeroWorkers(job.id.clone()));
                }
                if !seen.insert(&job.id) {
                    return Err(TraceError::DuplicateJob(job.id.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Knobs for the Poisson trace generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoissonTraceConfig {
    /// Mean inter-arrival gap in ms before load thinning.
    pub mean_interarrival_ms: f64,
    /// Target busy-GPU fraction band; arrivals are dropped while occupancy
    /// (projected from worker counts) sits above the band's upper edge.
    pub load_min: f64,
    pub load_max: f64,
    pub horizon_ms: u64,
    /// Candidate model kinds, sampled uniformly.
    pub kinds: Vec<String>,
    pub min_workers: u32,
    pub max_workers: u32,
    pub min_duration_iters: u32,
    pub max_duration_iters: u32,
}

impl Default for PoissonTraceConfig {
    fn default() -> Self {
        PoissonTraceConfig {
            mean_interarrival_ms: 5_000.0,
            load_min: 0.8,
            load_max: 1.0,
            horizon_ms: 300_000,
            kinds: vec!["square-small".to_string()],
            min_workers: 1,
            max_workers: 12,
            min_duration_iters: 200,
            max_duration_iters: 1_000,
        }
    }
}

/// Draws Poisson arrivals and thins them so projected busy-GPU fraction stays
/// within the configured band. Departures are implicit (jobs run their
/// iteration budget); the generator only tracks a coarse occupancy estimate
/// to decide thinning.
pub fn generate_poisson_trace(
    cfg: &PoissonTraceConfig,
    topo: &Topology,
    seed: u64,
) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total_slots = topo.total_gpu_slots() as f64;
    let mut events = Vec::new();
    let mut t = 0f64;
    let mut busy_estimate = 0f64;
    let mut next_id = 0u32;
    // coarse per-arrival occupancy decay, assuming mean residency of half
    // the horizon
    let decay = (-2.0 * cfg.mean_interarrival_ms / cfg.horizon_ms as f64).exp();
    while (t as u64) < cfg.horizon_ms {
        let gap: f64 = -cfg.mean_interarrival_ms * rng.gen::<f64>().max(1e-12).ln();
        t += gap;
        if t as u64 >= cfg.horizon_ms {
            break;
        }
        busy_estimate *= decay;
        let workers = rng.gen_range(cfg.min_workers..=cfg.max_workers);
        let projected = (busy_estimate + workers as f64) / total_slots;
        if projected > cfg.load_max {
            continue; // thin: hold load inside the band
        }
        busy_estimate += workers as f64;
        let kind = cfg.kinds[rng.gen_range(0..cfg.kinds.len())].clone();
        let duration = rng.gen_range(cfg.min_duration_iters..=cfg.max_duration_iters);
        events.push(TraceEvent {
            at_ms: t as u64,
            event: TraceEventKind::Arrival {
                job: JobSpec {
                    id: format!("job{next_id:04}"),
                    kind,
                    workers,
                    duration_iters: duration,
                    pinned_servers: None,
                },
            },
        });
        next_id += 1;
    }
    Trace { events }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_catches_out_of_order() {
        let trace = Trace {
            events: vec![
                TraceEvent {
                    at_ms: 100,
                    event: TraceEventKind::LeaseExpiry,
                },
                TraceEvent {
                    at_ms: 50,
                    event: TraceEventKind::LeaseExpiry,
                },
            ],
        };
        assert!(matches!(trace.validate(), Err(TraceError::OutOfOrder(1))));
    }

    #[test]
    fn poisson_trace_is_deterministic_and_bounded() {
        let topo = Topology::default_testbed();
        let cfg = PoissonTraceConfig::default();
        let a = generate_poisson_trace(&cfg, &topo, 7);
        let b = generate_poisson_trace(&cfg, &topo, 7);
        assert_eq!(a, b);
        a.validate().unwrap();
        assert!(!a.events.is_empty());
        for e in &a.events {
            assert!(e.at_ms < cfg.horizon_ms);
            if let TraceEventKind::Arrival { job } = &e.event {
                assert!(job.workers >= 1 && job.workers <= 12);
                assert!((200..=1000).contains(&job.duration_iters));
            }
        }
    }

    #[test]
    fn trace_round_trips_through_json() {
        let trace = Trace {
            events: vec![TraceEvent {
                at_ms: 5,
                event: TraceEventKind::Arrival {
                    job: JobSpec {
                        id: "j1".into(),
                        kind: "vgg16".into(),
                        workers: 2,
                        duration_iters: 300,
                        pinned_servers: Some(vec!["s0".into(), "s1".into()]),
                    },
                },
            }],
        };
        let json = serde_json::to_string(&trace).unwrap();
        let back: Trace = serde_json::from_str(&json).unwrap();
        assert_eq!(trace, back);
    }
}
