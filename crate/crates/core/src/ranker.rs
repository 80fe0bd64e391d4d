//! Candidate placement ranking: build the affinity graph per candidate,
//! discard cyclic ones, score contended links with the rotation solver, pick
//! the best placement, and emit consolidated time-shifts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use crate::affinity::{self, AffinityGraph, TimeShiftAssignment};
use crate::optimizer::{self, LinkJobSet, OptimizerError, SolveConfig};
use crate::profiles::IterationProfile;
use crate::simulator::topology::{route, Topology, TopologyError};

#[derive(Debug, Error)]
pub enum RankError {
    #[error("no profile for job {job} (kind {kind})")]
    ProfileMissing { job: String, kind: String },
    #[error("every candidate placement has a cyclic affinity graph")]
    AllCandidatesCyclic,
    #[error("not enough free GPU slots: need {need}, have {have}")]
    InsufficientCapacity { need: u32, have: u32 },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

/// A candidate assignment of workers to servers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub candidate_id: u32,
    /// job id -> server id per worker.
    pub assignment: BTreeMap<String, Vec<String>>,
}

/// One job to place, with its profile key and worker count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRequest {
    pub id: String,
    pub kind: String,
    pub workers: u32,
}

/// Scores of one surviving candidate.
#[derive(Debug, Clone)]
pub struct CandidateScore {
    pub graph: AffinityGraph,
    /// score per (merged) contended link vertex
    pub per_link: BTreeMap<String, f64>,
    pub aggregate: f64,
}

/// Outcome of evaluating a single candidate.
#[derive(Debug, Clone)]
pub enum CandidateEval {
    Scored(CandidateScore),
    /// Affinity graph had a loop; candidate is dropped.
    Discarded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedResult {
    pub top_placement: Placement,
    pub per_link_scores: BTreeMap<String, f64>,
    pub aggregate_score: f64,
    pub time_shifts: TimeShiftAssignment,
}

/// Evaluates one candidate: routes jobs, builds the affinity graph, solves
/// the per-link rotation optimization, and fills in edge weights.
pub fn score_candidate(
    candidate: &Placement,
    profiles: &BTreeMap<String, IterationProfile>,
    kinds: &BTreeMap<String, String>,
    topo: &Topology,
    cfg: &SolveConfig,
) -> Result<CandidateEval, RankError> {
    let mut routes: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut mults: BTreeMap<(String, String), u32> = BTreeMap::new();
    let mut iter_times: BTreeMap<String, u32> = BTreeMap::new();
    for (job, servers) in &candidate.assignment {
        let profile = profile_for(job, profiles, kinds)?;
        iter_times.insert(job.clone(), profile.iter_time_ms);
        let r = route(servers, topo)?;
        for (l, m) in &r {
            mults.insert((job.clone(), l.clone()), *m);
        }
        routes.insert(job.clone(), r.into_keys().collect());
    }

    let mut graph = affinity::build_graph(&routes, &iter_times);
    if graph.has_loop() {
        return Ok(CandidateEval::Discarded);
    }
    if graph.is_empty() {
        // no competition anywhere: best possible placement by convention
        return Ok(CandidateEval::Scored(CandidateScore {
            graph,
            per_link: BTreeMap::new(),
            aggregate: 1.0,
        }));
    }

    let groups = affinity::link_groups(&routes);
    let caps = topo.link_capacities();
    let mut per_link = BTreeMap::new();
    let link_ids: Vec<String> = graph.links.iter().map(|l| l.id.clone()).collect();
    for link_id in link_ids {
        let members = &groups[&link_id];
        // the tightest physical link in the merged group bounds them all
        let capacity = members
            .iter()
            .map(|l| caps[l])
            .fold(f64::INFINITY, f64::min);
        let jobs_on_link: Vec<String> = graph
            .edges
            .iter()
            .filter(|e| e.link == link_id)
            .map(|e| e.job.clone())
            .collect();
        let mut link_jobs = Vec::new();
        for job in &jobs_on_link {
            let profile = profile_for(job, profiles, kinds)?;
            let mult = mults
                .get(&(job.clone(), link_id.clone()))
                .copied()
                .unwrap_or(1);
            link_jobs.push((job.clone(), scale_profile(profile, mult)));
        }
        let set = LinkJobSet {
            link_id: link_id.clone(),
            capacity_gbps: capacity,
            jobs: link_jobs,
        };
        let solution = optimizer::solve_rotations(&set, cfg)?;
        for job in &jobs_on_link {
            graph.set_weight(job, &link_id, solution.time_shifts[job]);
        }
        if let Some(v) = graph.links.iter_mut().find(|l| l.id == link_id) {
            v.perimeter_ms = solution.perimeter_ms;
        }
        per_link.insert(link_id.clone(), solution.score);
    }

    let aggregate = match cfg.aggregate {
        optimizer::ExcessAggregation::Mean => {
            per_link.values().sum::<f64>() / per_link.len() as f64
        }
        optimizer::ExcessAggregation::Tail => per_link
            .values()
            .fold(f64::INFINITY, |a, &b| a.min(b)),
    };
    Ok(CandidateEval::Scored(CandidateScore {
        graph,
        per_link,
        aggregate,
    }))
}

fn profile_for<'a>(
    job: &str,
    profiles: &'a BTreeMap<String, IterationProfile>,
    kinds: &BTreeMap<String, String>,
) -> Result<&'a IterationProfile, RankError> {
    let kind = kinds.get(job).cloned().unwrap_or_else(|| job.to_string());
    profiles
        .get(&kind)
        .or_else(|| profiles.get(job))
        .ok_or_else(|| RankError::ProfileMissing {
            job: job.to_string(),
            kind,
        })
}

/// Multiplies a profile's demand by the number of ring segments on the link.
fn scale_profile(profile: &IterationProfile, mult: u32) -> IterationProfile {
    if mult <= 1 {
        return profile.clone();
    }
    let mut p = profile.clone();
    for arc in &mut p.arcs {
        arc.demand_gbps *= mult as f64;
    }
    p
}

/// Ranks candidates by aggregate compatibility, discarding cyclic ones.
/// Ties break toward fewer contended links, then lower candidate id. The
/// winner's time-shifts are verified before returning.
pub fn rank(
    candidates: &[Placement],
    profiles: &BTreeMap<String, IterationProfile>,
    kinds: &BTreeMap<String, String>,
    topo: &Topology,
    cfg: &SolveConfig,
) -> Result<RankedResult, RankError> {
    assert!(!candidates.is_empty(), "rank needs at least one candidate");
    let evals: Vec<Result<CandidateEval, RankError>> = candidates
        .par_iter()
        .map(|c| score_candidate(c, profiles, kinds, topo, cfg))
        .collect();
    let mut scored: Vec<(usize, CandidateScore)> = Vec::new();
    for (i, e) in evals.into_iter().enumerate() {
        match e? {
            CandidateEval::Scored(s) => scored.push((i, s)),
            CandidateEval::Discarded => {}
        }
    }
    if scored.is_empty() {
        return Err(RankError::AllCandidatesCyclic);
    }
    scored.sort_by(|(ia, a), (ib, b)| {
        b.aggregate
            .partial_cmp(&a.aggregate)
            .expect("scores are finite")
            .then_with(|| a.graph.links.len().cmp(&b.graph.links.len()))
            .then_with(|| candidates[*ia].candidate_id.cmp(&candidates[*ib].candidate_id))
    });
    let (winner_idx, winner) = &scored[0];
    let time_shifts = if winner.graph.is_empty() {
        TimeShiftAssignment {
            shifts: BTreeMap::new(),
            reference_jobs: Vec::new(),
        }
    } else {
        winner
            .graph
            .bfs_time_shifts()
            .expect("loop-free graphs traverse")
    };
    let violations = winner.graph.verify_assignment(&time_shifts.shifts);
    assert!(
        violations.is_empty(),
        "consolidated shifts failed verification: {violations:?}"
    );
    Ok(RankedResult {
        top_placement: candidates[*winner_idx].clone(),
        per_link_scores: winner.per_link.clone(),
        aggregate_score: winner.aggregate,
        time_shifts,
    })
}

/// Locality-first greedy candidate generator.
///
/// Emits up to `n_max` distinct placements by permuting which racks absorb
/// the jobs, deterministic under `seed`. Stands in for the host scheduler's
/// candidate enumeration.
pub fn generate_candidates(
    jobs: &[JobRequest],
    topo: &Topology,
    free_slots: &BTreeMap<String, u32>,
    n_max: usize,
    seed: u64,
) -> Result<Vec<Placement>, RankError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let need: u32 = jobs.iter().map(|j| j.workers).sum();
    let have: u32 = free_slots.values().sum();
    if need > have {
        return Err(RankError::InsufficientCapacity { need, have });
    }
    let mut rack_ids: Vec<String> = topo.racks.iter().map(|r| r.id.clone()).collect();
    rack_ids.sort();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut attempt = 0u32;
    while out.len() < n_max && attempt < (n_max as u32) * 8 {
        let order = if attempt == 0 {
            rack_ids.clone()
        } else {
            let mut o = rack_ids.clone();
            o.shuffle(&mut rng);
            o
        };
        attempt += 1;
        if let Some(assignment) = pack(jobs, topo, free_slots, &order) {
            if seen.insert(assignment.clone()) {
                out.push(Placement {
                    candidate_id: out.len() as u32,
                    assignment,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(RankError::InsufficientCapacity { need, have });
    }
    Ok(out)
}

/// Packs each job onto servers following the rack preference order, filling
/// servers in id order within a rack.
fn pack(
    jobs: &[JobRequest],
    topo: &Topology,
    free_slots: &BTreeMap<String, u32>,
    rack_order: &[String],
) -> Option<BTreeMap<String, Vec<String>>> {
    let mut free: BTreeMap<&str, u32> = free_slots
        .iter()
        .map(|(k, &v)| (k.as_str(), v))
        .collect();
    let mut server_order: Vec<&crate::simulator::topology::Server> = Vec::new();
    for rack in rack_order {
        let mut in_rack: Vec<_> = topo.servers.iter().filter(|s| &s.rack == rack).collect();
        in_rack.sort_by(|a, b| a.id.cmp(&b.id));
        server_order.extend(in_rack);
    }
    let mut ordered_jobs: Vec<&JobRequest> = jobs.iter().collect();
    // biggest jobs first keeps fragments small
    ordered_jobs.sort_by(|a, b| b.workers.cmp(&a.workers).then(a.id.cmp(&b.id)));
    let mut assignment = BTreeMap::new();
    for job in ordered_jobs {
        let mut servers = Vec::new();
        for s in &server_order {
            while *free.get(s.id.as_str()).unwrap_or(&0) > 0
                && (servers.len() as u32) < job.workers
            {
                *free.get_mut(s.id.as_str()).unwrap() -= 1;
                servers.push(s.id.clone());
            }
            if servers.len() as u32 == job.workers {
                break;
            }
        }
        if (servers.len() as u32) < job.workers {
            return None;
        }
        assignment.insert(job.id.clone(), servers);
    }
    Some(assignment)
}

/// All-slots-free helper for standalone ranking.
pub fn all_free(topo: &Topology) -> BTreeMap<String, u32> {
    topo.servers
        .iter()
        .map(|s| (s.id.clone(), s.gpu_slots))
        .collect()
}
