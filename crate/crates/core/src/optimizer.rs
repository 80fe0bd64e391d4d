//! Rotation search: find per-job rotation angles on one link that maximize
//! the compatibility score, and convert rotations to time-shifts.
//!
//! The search works in the time domain. A rotation candidate for a job is a
//! whole-millisecond shift derived from a degree on the discretized grid; the
//! degree grid is bounded per job so the rotation stays within the first tiled
//! iteration (shifts beyond one iteration repeat the same demand function).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::TAU;
use thiserror::Error;

use crate::geometry::{
    self, overlay_shifted, tile, unified_perimeter, GeometryError, UnifiedCircle,
    DEFAULT_LCM_CAP_MS,
};
use crate::profiles::IterationProfile;

/// Grid precision matching the accuracy/runtime sweet spot.
pub const DEFAULT_PRECISION_DEG: u32 = 5;

/// Beyond this many jobs on one link, exhaustive search gives way to
/// coordinate descent.
pub const EXHAUSTIVE_JOB_LIMIT: usize = 3;

/// Default cap on jobs per link accepted by the solver.
pub const DEFAULT_MAX_JOBS: usize = 6;

const COORDINATE_DESCENT_RESTARTS: usize = 3;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("link has {got} jobs, above the configured maximum of {max}")]
    TooManyJobs { got: usize, max: usize },
    #[error("precision {0} does not divide 360")]
    BadPrecision(u32),
}

/// How per-bin excess is folded into the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExcessAggregation {
    /// 1 - (mean excess) / capacity.
    #[default]
    Mean,
    /// 1 - (max excess) / capacity.
    Tail,
}

/// Jobs competing on one link.
#[derive(Debug, Clone)]
pub struct LinkJobSet {
    pub link_id: String,
    pub capacity_gbps: f64,
    pub jobs: Vec<(String, IterationProfile)>,
}

/// Per-job demand multiplier on the link (ring segments crossing it).
/// Defaults to 1 for every job when built from profiles alone.
#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub precision_deg: u32,
    pub max_jobs: usize,
    pub lcm_cap_ms: u64,
    pub seed: u64,
    pub aggregate: ExcessAggregation,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            precision_deg: DEFAULT_PRECISION_DEG,
            max_jobs: DEFAULT_MAX_JOBS,
            lcm_cap_ms: DEFAULT_LCM_CAP_MS,
            seed: 0,
            aggregate: ExcessAggregation::Mean,
        }
    }
}

/// Best rotation vector found for one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationSolution {
    pub link_id: String,
    pub perimeter_ms: u32,
    pub score: f64,
    /// Rotation angle per job, radians in [0, 2*pi/r_j).
    pub rotations: BTreeMap<String, f64>,
    /// Time-shift per job, whole milliseconds in [0, iter_time_j).
    pub time_shifts: BTreeMap<String, u32>,
}

/// Bandwidth demand above capacity; zero when under.
pub fn excess(demand_gbps: f64, capacity_gbps: f64) -> f64 {
    (demand_gbps - capacity_gbps).max(0.0)
}

/// Converts a rotation on perimeter `p_ms` to the job's time-shift.
pub fn rotation_to_timeshift(delta_rad: f64, p_ms: u32, iter_time_ms: u32) -> u32 {
    geometry::shift_ms_for_rotation(delta_rad, p_ms) % iter_time_ms
}

/// Evaluates the compatibility score of a rotation assignment on the full
/// time grid.
pub fn score(
    link: &LinkJobSet,
    rotations: &BTreeMap<String, f64>,
    aggregate: ExcessAggregation,
    lcm_cap_ms: u64,
) -> Result<f64, OptimizerError> {
    let prepared = Prepared::build(link, lcm_cap_ms)?;
    let shifts: Vec<u32> = link
        .jobs
        .iter()
        .map(|(id, _)| {
            let rot = rotations.get(id).copied().unwrap_or(0.0);
            geometry::shift_ms_for_rotation(rot, prepared.p_ms)
        })
        .collect();
    Ok(prepared.score_for(&shifts, aggregate))
}

struct Prepared {
    p_ms: u32,
    capacity: f64,
    circles: Vec<UnifiedCircle>,
    iter_times: Vec<u32>,
}

impl Prepared {
    fn build(link: &LinkJobSet, lcm_cap_ms: u64) -> Result<Prepared, OptimizerError> {
        assert!(link.capacity_gbps > 0.0, "link capacity must be positive");
        assert!(!link.jobs.is_empty(), "link needs at least one job");
        let iter_times: Vec<u32> = link.jobs.iter().map(|(_, p)| p.iter_time_ms).collect();
        let perimeter = unified_perimeter(&iter_times, lcm_cap_ms)?;
        let mut circles = Vec::with_capacity(link.jobs.len());
        for (i, (_, profile)) in link.jobs.iter().enumerate() {
            let rounded = perimeter.iter_times_ms[i];
            let adjusted = if rounded == profile.iter_time_ms {
                profile.clone()
            } else {
                retime_profile(profile, rounded)
            };
            circles.push(tile(&adjusted, perimeter.p_ms)?);
        }
        Ok(Prepared {
            p_ms: perimeter.p_ms,
            capacity: link.capacity_gbps,
            circles,
            iter_times: perimeter.iter_times_ms,
        })
    }

    fn excess_sum_and_max(&self, shifts: &[u32]) -> (f64, f64) {
        let mut total = vec![0.0; self.p_ms as usize];
        for (c, &s) in self.circles.iter().zip(shifts) {
            overlay_shifted(&mut total, &c.demand, s);
        }
        let mut sum = 0.0;
        let mut max = 0.0f64;
        for &d in &total {
            let e = excess(d, self.capacity);
            sum += e;
            max = max.max(e);
        }
        (sum, max)
    }

    fn score_for(&self, shifts: &[u32], aggregate: ExcessAggregation) -> f64 {
        let (sum, max) = self.excess_sum_and_max(shifts);
        match aggregate {
            ExcessAggregation::Mean => 1.0 - sum / (self.p_ms as f64 * self.capacity),
            ExcessAggregation::Tail => 1.0 - max / self.capacity,
        }
    }

    /// Candidate shifts for one job: whole-ms shifts of the degree grid within
    /// the per-job rotation bound, deduplicated, ascending.
    fn candidate_shifts(&self, job: usize, precision_deg: u32) -> Vec<u32> {
        let r = self.circles[job].repetitions;
        let mut out = Vec::new();
        let mut deg = 0u32;
        while deg * r < 360 {
            let shift = ((deg as f64 / 360.0) * self.p_ms as f64).round() as u32
                % self.p_ms.max(1);
            if out.last() != Some(&shift) && !out.contains(&shift) {
                out.push(shift);
            }
            deg += precision_deg;
        }
        out
    }
}

/// Stretches or trims a profile's final arc so its iteration time matches a
/// rounded value from the perimeter fallback.
fn retime_profile(profile: &IterationProfile, new_iter_ms: u32) -> IterationProfile {
    let mut arcs = profile.arcs.clone();
    let old = profile.iter_time_ms;
    if new_iter_ms > old {
        let last = arcs.last_mut().expect("profile has at least one arc");
        last.duration_ms += new_iter_ms - old;
    } else {
        let mut cut = old - new_iter_ms;
        while cut > 0 {
            let last = arcs.last_mut().expect("cut exceeds profile length");
            if last.duration_ms > cut {
                last.duration_ms -= cut;
                cut = 0;
            } else {
                cut -= last.duration_ms;
                arcs.pop();
            }
        }
    }
    IterationProfile {
        job_kind: profile.job_kind.clone(),
        iter_time_ms: new_iter_ms,
        arcs,
    }
}

/// Finds the rotation vector maximizing the compatibility score on one link.
///
/// The first job is pinned at rotation 0 (global rotations leave the score
/// unchanged). Up to [`EXHAUSTIVE_JOB_LIMIT`] jobs the discretized rotation
/// box is searched exhaustively; beyond that, cyclic coordinate descent with
/// seeded random restarts. Equal scores break toward the lexicographically
/// smallest shift vector.
pub fn solve_rotations(
    link: &LinkJobSet,
    cfg: &SolveConfig,
) -> Result<RotationSolution, OptimizerError> {
    if cfg.precision_deg == 0 || 360 % cfg.precision_deg != 0 {
        return Err(OptimizerError::BadPrecision(cfg.precision_deg));
    }
    if link.jobs.len() > cfg.max_jobs {
        return Err(OptimizerError::TooManyJobs {
            got: link.jobs.len(),
            max: cfg.max_jobs,
        });
    }
    let prepared = Prepared::build(link, cfg.lcm_cap_ms)?;
    let n = link.jobs.len();

    let candidates: Vec<Vec<u32>> = (0..n)
        .map(|j| {
            if j == 0 {
                vec![0]
            } else {
                prepared.candidate_shifts(j, cfg.precision_deg)
            }
        })
        .collect();

    let best = if n <= EXHAUSTIVE_JOB_LIMIT {
        exhaustive_search(&prepared, &candidates, cfg.aggregate)
    } else {
        coordinate_descent(&prepared, &candidates, cfg.aggregate, cfg.seed)
    };

    let mut rotations = BTreeMap::new();
    let mut time_shifts = BTreeMap::new();
    for (i, (id, _)) in link.jobs.iter().enumerate() {
        let shift = best.shifts[i];
        rotations.insert(id.clone(), TAU * shift as f64 / prepared.p_ms as f64);
        time_shifts.insert(id.clone(), shift % prepared.iter_times[i]);
    }
    Ok(RotationSolution {
        link_id: link.link_id.clone(),
        perimeter_ms: prepared.p_ms,
        score: best.score,
        rotations,
        time_shifts,
    })
}

struct Best {
    score: f64,
    shifts: Vec<u32>,
}

fn exhaustive_search(
    prepared: &Prepared,
    candidates: &[Vec<u32>],
    aggregate: ExcessAggregation,
) -> Best {
    let n = candidates.len();
    let mut shifts = vec![0u32; n];
    let mut best = Best {
        score: f64::NEG_INFINITY,
        shifts: shifts.clone(),
    };
    let mut idx = vec![0usize; n];
    loop {
        for j in 0..n {
            shifts[j] = candidates[j][idx[j]];
        }
        let s = prepared.score_for(&shifts, aggregate);
        // strict improvement keeps the lexicographically smallest vector
        if s > best.score {
            best.score = s;
            best.shifts = shifts.clone();
        }
        // odometer over candidate lists, last job fastest
        let mut j = n;
        loop {
            if j == 0 {
                return best;
            }
            j -= 1;
            idx[j] += 1;
            if idx[j] < candidates[j].len() {
                break;
            }
            idx[j] = 0;
        }
    }
}

fn coordinate_descent(
    prepared: &Prepared,
    candidates: &[Vec<u32>],
    aggregate: ExcessAggregation,
    seed: u64,
) -> Best {
    let n = candidates.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut overall = Best {
        score: f64::NEG_INFINITY,
        shifts: vec![0; n],
    };
    for restart in 0..COORDINATE_DESCENT_RESTARTS {
        let mut shifts: Vec<u32> = if restart == 0 {
            candidates.iter().map(|c| c[0]).collect()
        } else {
            candidates
                .iter()
                .map(|c| c[rng.gen_range(0..c.len())])
                .collect()
        };
        let mut score = prepared.score_for(&shifts, aggregate);
        loop {
            let mut improved = false;
            for j in 1..n {
                let mut best_shift = shifts[j];
                let mut best_score = score;
                for &cand in &candidates[j] {
                    if cand == shifts[j] {
                        continue;
                    }
                    let saved = shifts[j];
                    shifts[j] = cand;
                    let s = prepared.score_for(&shifts, aggregate);
                    shifts[j] = saved;
                    if s > best_score
                        || (s == best_score && cand < best_shift && s > score)
                    {
                        best_score = s;
                        best_shift = cand;
                    }
                }
                if best_score > score {
                    score = best_score;
                    shifts[j] = best_shift;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        if score > overall.score || (score == overall.score && shifts < overall.shifts) {
            overall = Best { score, shifts };
        }
    }
    overall
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::IterationProfile;

    fn square(kind: &str, iter: u32, up_start: u32, up_len: u32, demand: f64) -> IterationProfile {
        // up phase at [up_start, up_start+up_len) within the iteration
        let mut segments = Vec::new();
        if up_start > 0 {
            segments.push((up_start, 0.0));
        }
        segments.push((up_len, demand));
        if up_start + up_len < iter {
            segments.push((iter - up_start - up_len, 0.0));
        }
        IterationProfile::from_segments(kind, &segments, 1.0)
    }

    fn link(capacity: f64, jobs: Vec<(&str, IterationProfile)>) -> LinkJobSet {
        LinkJobSet {
            link_id: "l0".into(),
            capacity_gbps: capacity,
            jobs: jobs.into_iter().map(|(a, b)| (a.to_string(), b)).collect(),
        }
    }

    /// The 40 ms / 60 ms pair: perimeter 120, full compatibility reachable by
    /// rotating the 40 ms job 30 degrees (10 ms).
    pub(crate) fn fig_fixture() -> LinkJobSet {
        link(
            50.0,
            vec![
                ("j2-60ms", square("sixty", 60, 0, 10, 40.0)),
                ("j1-40ms", square("forty", 40, 0, 8, 40.0)),
            ],
        )
    }

    #[test]
    fn excess_cases() {
        assert_eq!(excess(30.0, 50.0), 0.0);
        assert_eq!(excess(50.0, 50.0), 0.0);
        assert_eq!(excess(80.0, 50.0), 30.0);
    }

    #[test]
    fn single_job_under_capacity_scores_one() {
        let l = link(50.0, vec![("a", square("a", 100, 0, 40, 25.0))]);
        let sol = solve_rotations(&l, &SolveConfig::default()).unwrap();
        assert_eq!(sol.score, 1.0);
        assert_eq!(sol.rotations["a"], 0.0);
        assert_eq!(sol.time_shifts["a"], 0);
    }

    #[test]
    fn two_saturating_jobs_score_zero() {
        // each demands capacity over the full period -> excess == C everywhere
        let l = link(
            40.0,
            vec![
                ("a", square("a", 100, 0, 100, 40.0)),
                ("b", square("b", 100, 0, 100, 40.0)),
            ],
        );
        let sol = solve_rotations(&l, &SolveConfig::default()).unwrap();
        assert!((sol.score - 0.0).abs() < 1e-12);
    }

    #[test]
    fn fig_fixture_rotation_30_degrees() {
        let sol = solve_rotations(&fig_fixture(), &SolveConfig::default()).unwrap();
        assert!((sol.score - 1.0).abs() < 1e-9);
        assert_eq!(sol.time_shifts["j1-40ms"], 10);
        let deg = sol.rotations["j1-40ms"].to_degrees();
        assert!((deg - 30.0).abs() < 5.0 + 1e-9, "got {deg}");
        assert_eq!(sol.time_shifts["j2-60ms"], 0);
    }

    #[test]
    fn rotation_to_timeshift_cases() {
        assert_eq!(rotation_to_timeshift(30f64.to_radians(), 120, 40), 10);
        assert_eq!(rotation_to_timeshift(0.0, 120, 40), 0);
        assert_eq!(rotation_to_timeshift(TAU * 50.0 / 120.0, 120, 40), 10);
    }

    #[test]
    fn score_one_iff_no_excess() {
        let l = fig_fixture();
        let sol = solve_rotations(&l, &SolveConfig::default()).unwrap();
        let tail = score(
            &l,
            &sol.rotations,
            ExcessAggregation::Tail,
            DEFAULT_LCM_CAP_MS,
        )
        .unwrap();
        assert_eq!(tail, 1.0); // zero excess in every bin
    }

    #[test]
    fn capacity_monotonicity() {
        let jobs = vec![
            ("a", square("a", 40, 0, 20, 35.0)),
            ("b", square("b", 60, 0, 30, 35.0)),
        ];
        let mut prev = f64::NEG_INFINITY;
        for cap in [20.0, 35.0, 50.0, 80.0] {
            let l = link(cap, jobs.clone());
            let sol = solve_rotations(&l, &SolveConfig::default()).unwrap();
            assert!(sol.score >= prev - 1e-12);
            prev = sol.score;
        }
    }

    #[test]
    fn pinning_invariance_under_profile_offset() {
        // shifting every job's phase start by the same offset leaves the
        // optimal score unchanged
        let base = link(
            50.0,
            vec![
                ("a", square("a", 60, 0, 10, 40.0)),
                ("b", square("b", 40, 0, 8, 40.0)),
            ],
        );
        let offset = link(
            50.0,
            vec![
                ("a", square("a", 60, 7, 10, 40.0)),
                ("b", square("b", 40, 7, 8, 40.0)),
            ],
        );
        let cfg = SolveConfig {
            precision_deg: 1,
            ..SolveConfig::default()
        };
        let s0 = solve_rotations(&base, &cfg).unwrap().score;
        let s1 = solve_rotations(&offset, &cfg).unwrap().score;
        assert!((s0 - s1).abs() < 1e-12);
    }

    #[test]
    fn too_many_jobs_rejected() {
        let jobs: Vec<_> = (0..7)
            .map(|i| (format!("j{i}"), square("s", 40, 0, 5, 10.0)))
            .collect();
        let l = LinkJobSet {
            link_id: "l".into(),
            capacity_gbps: 50.0,
            jobs,
        };
        assert!(matches!(
            solve_rotations(&l, &SolveConfig::default()),
            Err(OptimizerError::TooManyJobs { .. })
        ));
    }

    #[test]
    fn coordinate_descent_runs_on_four_jobs() {
        let l = link(
            50.0,
            vec![
                ("a", square("a", 60, 0, 10, 30.0)),
                ("b", square("b", 60, 0, 10, 30.0)),
                ("c", square("c", 60, 0, 10, 30.0)),
                ("d", square("d", 60, 0, 10, 30.0)),
            ],
        );
        let sol = solve_rotations(&l, &SolveConfig::default()).unwrap();
        // four 10 ms bursts fit in 60 ms without overlap
        assert!((sol.score - 1.0).abs() < 1e-9, "score {}", sol.score);
    }

    #[test]
    fn bad_precision_rejected() {
        let err = solve_rotations(
            &fig_fixture(),
            &SolveConfig {
                precision_deg: 7,
                ..SolveConfig::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, OptimizerError::BadPrecision(7)));
    }
}
