//! Event-driven cluster simulation at 1 ms resolution.
//!
//! Jobs arrive from a trace, get placed on servers, and train in periodic
//! iterations whose bandwidth phases contend on shared links under max-min
//! fair sharing. The interleaving scheduler recomputes consolidated
//! time-shifts on every membership change and jobs realign their next
//! iteration start to the assigned phase; the baseline scheduler starts each
//! iteration as soon as the previous one ends.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use super::fluid::{self, Flow};
use super::topology::{route, Topology, TopologyError};
use super::trace::{JobSpec, Trace, TraceError, TraceEventKind};
use crate::optimizer::SolveConfig;
use crate::profiles::IterationProfile;
use crate::ranker::{self, CandidateEval, JobRequest, Placement, RankError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error("no profile for job kind {0}")]
    ProfileMissing(String),
    #[error("pinned servers for {job}: expected {want} entries, got {got}")]
    BadPinning { job: String, want: u32, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    /// Locality-first placement, iterations run back to back.
    Baseline,
    /// Compatibility-ranked placement with phase-aligned iteration starts.
    Cassini,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub horizon_ms: u64,
    /// Std dev of per-iteration timing noise, as a fraction of iteration time.
    pub drift_sigma_frac: f64,
    /// Fraction of accumulated error retained across an iteration.
    pub drift_retention: f64,
    /// Realign (and count an adjustment) when |error| exceeds this fraction
    /// of the iteration time.
    pub drift_threshold_frac: f64,
    /// Max candidate placements evaluated per arrival.
    pub n_max: usize,
    #[serde(skip)]
    pub solve: SolveConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            scheduler: SchedulerKind::Cassini,
            seed: 0,
            horizon_ms: 60_000,
            drift_sigma_frac: 0.0,
            drift_retention: 0.7,
            drift_threshold_frac: 0.05,
            n_max: 10,
            solve: SolveConfig::default(),
        }
    }
}

/// A job phase realignment triggered by accumulated timing drift.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustmentEvent {
    pub job_id: String,
    pub at_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub horizon_ms: u64,
    /// Wall-clock duration of each completed iteration, per job, in order.
    pub iteration_ms: BTreeMap<String, Vec<u32>>,
    pub iterations_completed: BTreeMap<String, u32>,
    /// Congested milliseconds per link (offered load strictly above capacity).
    pub congestion_ms: BTreeMap<String, u64>,
    pub congestion_total_ms: u64,
    /// Final consolidated time-shift per job (empty for the baseline).
    pub time_shifts: BTreeMap<String, u32>,
    pub placements: BTreeMap<String, Vec<String>>,
    pub adjustments: Vec<AdjustmentEvent>,
}

enum RunState {
    Running { iter_start_ms: u64 },
    /// Idle until the phase-aligned start time.
    Waiting { until_ms: u64 },
}

struct ActiveJob {
    spec: JobSpec,
    servers: Vec<String>,
    links: BTreeMap<String, u32>,
    bins: Vec<f64>,
    iter_ms: u32,
    pos: f64,
    state: RunState,
    iters_done: u32,
    durations: Vec<u32>,
    shift: u32,
    /// Time the current shift assignment was issued; alignment reference.
    shift_ref_ms: u64,
    /// Realign at the next iteration boundary (new shifts or a drift
    /// adjustment); between alignments iterations run back to back.
    needs_align: bool,
    drift_err_ms: f64,
}

impl ActiveJob {
    fn bin_at(&self, pos: f64) -> f64 {
        let base = pos as i64 + self.drift_err_ms.round() as i64;
        let idx = base.rem_euclid(self.iter_ms as i64) as usize;
        self.bins[idx]
    }

    /// Earliest start time >= `from` keeping the assigned phase.
    fn aligned_start(&self, from: u64) -> u64 {
        let iter = self.iter_ms as i64;
        let offset = (self.shift_ref_ms as i64 + self.shift as i64 - from as i64)
            .rem_euclid(iter);
        from + offset as u64
    }
}

pub fn run(
    trace: &Trace,
    topo: &Topology,
    profiles: &BTreeMap<String, IterationProfile>,
    cfg: &SimConfig,
) -> Result<SimReport, SimError> {
    trace.validate()?;
    topo.validate()?;

    let caps = topo.link_capacities();
    let mut free: BTreeMap<String, u32> = topo
        .servers
        .iter()
        .map(|s| (s.id.clone(), s.gpu_slots))
        .collect();
    let mut active: BTreeMap<String, ActiveJob> = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut report = SimReport {
        scheduler: cfg.scheduler,
        seed: cfg.seed,
        horizon_ms: cfg.horizon_ms,
        iteration_ms: BTreeMap::new(),
        iterations_completed: BTreeMap::new(),
        congestion_ms: BTreeMap::new(),
        congestion_total_ms: 0,
        time_shifts: BTreeMap::new(),
        placements: BTreeMap::new(),
        adjustments: Vec::new(),
    };

    let mut next_event = 0usize;
    let mut arrival_counter = 0u64;

    for now in 0..cfg.horizon_ms {
        // trace events due this millisecond
        let mut membership_changed = false;
        while next_event < trace.events.len() && trace.events[next_event].at_ms <= now {
            match &trace.events[next_event].event {
                TraceEventKind::Arrival { job } => {
                    arrival_counter += 1;
                    let placed = place_job(
                        job,
                        topo,
                        profiles,
                        &active,
                        &free,
                        cfg,
                        cfg.seed ^ arrival_counter,
                    )?;
                    if let Some(servers) = placed {
                        for s in &servers {
                            *free.get_mut(s).expect("placement uses known servers") -= 1;
                        }
                        let profile = profiles
                            .get(&job.kind)
                            .ok_or_else(|| SimError::ProfileMissing(job.kind.clone()))?;
                        let links = route(&servers, topo)?;
                        report.placements.insert(job.id.clone(), servers.clone());
                        active.insert(
                            job.id.clone(),
                            ActiveJob {
                                spec: job.clone(),
                                servers,
                                links,
                                bins: profile.demand_bins(),
                                iter_ms: profile.iter_time_ms,
                                pos: 0.0,
                                state: RunState::Waiting { until_ms: now },
                                iters_done: 0,
                                durations: Vec::new(),
                                shift: 0,
                                shift_ref_ms: now,
                                needs_align: false,
                                drift_err_ms: 0.0,
                            },
                        );
                        membership_changed = true;
                    }
                }
                TraceEventKind::Departure { job_id } => {
                    if let Some(j) = active.remove(job_id) {
                        for s in &j.servers {
                            *free.get_mut(s).expect("known server") += 1;
                        }
                        finish_job(&mut report, job_id, j);
                        membership_changed = true;
                    }
                }
                TraceEventKind::LeaseExpiry => membership_changed = true,
            }
            next_event += 1;
        }
        if membership_changed && cfg.scheduler == SchedulerKind::Cassini && !active.is_empty() {
            apply_shifts(&mut active, profiles, topo, cfg, now)?;
            for (id, j) in &active {
                report.time_shifts.insert(id.clone(), j.shift);
            }
        }

        // waiting jobs whose aligned start has come
        for j in active.values_mut() {
            if let RunState::Waiting { until_ms } = j.state {
                if now >= until_ms {
                    j.state = RunState::Running { iter_start_ms: now };
                    j.pos = 0.0;
                }
            }
        }

        // fluid step: flows for running jobs with positive demand this ms
        let mut flows: Vec<Flow> = Vec::new();
        for (id, j) in &active {
            if let RunState::Running { .. } = j.state {
                let demand = j.bin_at(j.pos);
                if demand > 1e-9 {
                    flows.push(Flow {
                        id: id.clone(),
                        demand_gbps: demand,
                        links: j.links.clone(),
                    });
                }
            }
        }
        for (link, load) in fluid::offered_load(&flows) {
            if load > caps[&link] + 1e-9 {
                *report.congestion_ms.entry(link).or_insert(0) += 1;
                report.congestion_total_ms += 1;
            }
        }
        let rates = fluid::max_min_rates(&flows, &caps);
        let rate_by_job: BTreeMap<String, (f64, f64)> = flows
            .iter()
            .zip(&rates)
            .map(|(f, &r)| (f.id.clone(), (f.demand_gbps, r)))
            .collect();

        // advance progress and close out finished iterations
        let mut departures: Vec<String> = Vec::new();
        for (id, j) in active.iter_mut() {
            let iter_start = match j.state {
                RunState::Running { iter_start_ms } => iter_start_ms,
                RunState::Waiting { .. } => continue,
            };
            j.pos += match rate_by_job.get(id) {
                Some(&(demand, rate)) => (rate / demand).min(1.0),
                None => 1.0,
            };
            if j.pos < j.iter_ms as f64 {
                continue;
            }
            let done_at = now + 1;
            j.durations.push((done_at - iter_start) as u32);
            j.iters_done += 1;
            if cfg.drift_sigma_frac > 0.0 {
                let sigma = cfg.drift_sigma_frac * j.iter_ms as f64;
                let noise = Normal::new(0.0, sigma)
                    .expect("sigma is positive")
                    .sample(&mut rng);
                j.drift_err_ms = cfg.drift_retention * j.drift_err_ms + noise;
                if j.drift_err_ms.abs() > cfg.drift_threshold_frac * j.iter_ms as f64 {
                    j.drift_err_ms = 0.0;
                    j.needs_align = true;
                    report.adjustments.push(AdjustmentEvent {
                        job_id: id.clone(),
                        at_ms: done_at,
                    });
                }
            }
            if j.iters_done >= j.spec.duration_iters {
                departures.push(id.clone());
                continue;
            }
            j.pos = 0.0;
            let realign = cfg.scheduler == SchedulerKind::Cassini && j.needs_align;
            j.state = if realign {
                j.needs_align = false;
                let s = j.aligned_start(done_at);
                if s == done_at {
                    RunState::Running { iter_start_ms: s }
                } else {
                    RunState::Waiting { until_ms: s }
                }
            } else {
                RunState::Running {
                    iter_start_ms: done_at,
                }
            };
        }
        let mut departed = false;
        for id in departures {
            let j = active.remove(&id).expect("departing job is active");
            for s in &j.servers {
                *free.get_mut(s).expect("known server") += 1;
            }
            finish_job(&mut report, &id, j);
            departed = true;
        }
        if departed && cfg.scheduler == SchedulerKind::Cassini && !active.is_empty() {
            apply_shifts(&mut active, profiles, topo, cfg, now + 1)?;
            for (id, j) in &active {
                report.time_shifts.insert(id.clone(), j.shift);
            }
        }
    }

    // jobs still running at the horizon keep their partial stats
    for (id, j) in std::mem::take(&mut active) {
        finish_job(&mut report, &id, j);
    }
    Ok(report)
}

fn finish_job(report: &mut SimReport, id: &str, job: ActiveJob) {
    report
        .iteration_ms
        .insert(id.to_string(), job.durations);
    report
        .iterations_completed
        .insert(id.to_string(), job.iters_done);
}

/// Chooses servers for an arriving job. Pinned placements are honored as-is;
/// otherwise candidates come from the greedy generator, and the interleaving
/// scheduler ranks them jointly with the jobs already running. Returns None
/// when no placement fits.
fn place_job(
    job: &JobSpec,
    topo: &Topology,
    profiles: &BTreeMap<String, IterationProfile>,
    active: &BTreeMap<String, ActiveJob>,
    free: &BTreeMap<String, u32>,
    cfg: &SimConfig,
    seed: u64,
) -> Result<Option<Vec<String>>, SimError> {
    if let Some(pinned) = &job.pinned_servers {
        if pinned.len() as u32 != job.workers {
            return Err(SimError::BadPinning {
                job: job.id.clone(),
                want: job.workers,
                got: pinned.len(),
            });
        }
        for s in pinned {
            if topo.server(s).is_none() {
                return Err(TopologyError::UnknownServer(s.clone()).into());
            }
        }
        return Ok(Some(pinned.clone()));
    }
    let request = [JobRequest {
        id: job.id.clone(),
        kind: job.kind.clone(),
        workers: job.workers,
    }];
    let candidates =
        match ranker::generate_candidates(&request, topo, free, cfg.n_max, seed) {
            Ok(c) => c,
            Err(RankError::InsufficientCapacity { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
    if cfg.scheduler == SchedulerKind::Baseline {
        return Ok(Some(candidates[0].assignment[&job.id].clone()));
    }
    // merge each candidate with the running jobs' fixed placements
    let kinds = kind_map(active, Some(job));
    let merged: Vec<Placement> = candidates
        .iter()
        .map(|c| {
            let mut assignment: BTreeMap<String, Vec<String>> = active
                .iter()
                .map(|(id, a)| (id.clone(), a.servers.clone()))
                .collect();
            assignment.insert(job.id.clone(), c.assignment[&job.id].clone());
            Placement {
                candidate_id: c.candidate_id,
                assignment,
            }
        })
        .collect();
    match ranker::rank(&merged, profiles, &kinds, topo, &cfg.solve) {
        Ok(result) => Ok(Some(result.top_placement.assignment[&job.id].clone())),
        // every candidate forms a loop: fall back to the locality-first pick
        Err(RankError::AllCandidatesCyclic) => {
            Ok(Some(candidates[0].assignment[&job.id].clone()))
        }
        Err(e) => Err(e.into()),
    }
}

/// Recomputes consolidated time-shifts for the running set and stores them on
/// each job together with the alignment reference time. Jobs pick the new
/// phase up at their next iteration boundary. A cyclic affinity graph (only
/// reachable through pinned placements) falls back to zero shifts.
fn apply_shifts(
    active: &mut BTreeMap<String, ActiveJob>,
    profiles: &BTreeMap<String, IterationProfile>,
    topo: &Topology,
    cfg: &SimConfig,
    now: u64,
) -> Result<(), SimError> {
    let placement = Placement {
        candidate_id: 0,
        assignment: active
            .iter()
            .map(|(id, a)| (id.clone(), a.servers.clone()))
            .collect(),
    };
    let kinds = kind_map(active, None);
    let shifts = match ranker::score_candidate(&placement, profiles, &kinds, topo, &cfg.solve)?
    {
        CandidateEval::Scored(scored) if !scored.graph.is_empty() => scored
            .graph
            .bfs_time_shifts()
            .expect("scored graphs are loop-free")
            .shifts,
        _ => BTreeMap::new(),
    };
    for (id, j) in active.iter_mut() {
        j.shift = shifts.get(id).copied().unwrap_or(0);
        j.shift_ref_ms = now;
        // jobs between iterations pick the new phase up immediately;
        // running jobs realign at their next boundary
        if matches!(j.state, RunState::Waiting { .. }) {
            j.needs_align = false;
            j.state = RunState::Waiting {
                until_ms: j.aligned_start(now),
            };
        } else {
            j.needs_align = true;
        }
    }
    Ok(())
}

fn kind_map(
    active: &BTreeMap<String, ActiveJob>,
    extra: Option<&JobSpec>,
) -> BTreeMap<String, String> {
    let mut kinds: BTreeMap<String, String> = active
        .iter()
        .map(|(id, a)| (id.clone(), a.spec.kind.clone()))
        .collect();
    if let Some(job) = extra {
        kinds.insert(job.id.clone(), job.kind.clone());
    }
    kinds
}
