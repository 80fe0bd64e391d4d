//! End-to-end acceptance gate. Each test covers one pinned criterion and
//! prints a single PASS line when it holds; run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use interleave_core::affinity::AffinityGraph;
use interleave_core::geometry;
use interleave_core::optimizer::{self, LinkJobSet, SolveConfig};
use interleave_core::profiles::IterationProfile;
use interleave_core::ranker::{self, Placement};
use interleave_core::report;
use interleave_core::simulator::{
    self, fluid, JobSpec, Rack, SchedulerKind, Server, SimConfig, Topology, Trace, TraceEvent,
    TraceEventKind,
};

fn square(kind: &str, iter: u32, up_start: u32, up_len: u32, demand: f64) -> IterationProfile {
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

/// Two square-wave jobs, 40 ms and 60 ms, on a 50 Gbps link: the canonical
/// pair whose unified perimeter is 120 ms and whose optimum rotates the 40 ms
/// job by 30 degrees.
fn canonical_pair() -> LinkJobSet {
    LinkJobSet {
        link_id: "l0".into(),
        capacity_gbps: 50.0,
        jobs: vec![
            ("j2-60ms".into(), square("sixty", 60, 0, 10, 40.0)),
            ("j1-40ms".into(), square("forty", 40, 0, 8, 40.0)),
        ],
    }
}

#[test]
fn criterion_1_geometry_and_optimizer_exactness() {
    let p = geometry::unified_perimeter(&[40, 60], geometry::DEFAULT_LCM_CAP_MS).unwrap();
    assert_eq!(p.p_ms, 120, "unified perimeter of 40 and 60 ms");

    let sol = optimizer::solve_rotations(&canonical_pair(), &SolveConfig::default()).unwrap();
    assert!((sol.score - 1.0).abs() <= 1e-9, "score {}", sol.score);
    let shift = sol.time_shifts["j1-40ms"] as i64;
    assert!((shift - 10).abs() <= 1, "time-shift {shift} ms");
    let deg = sol.rotations["j1-40ms"].to_degrees();
    assert!((deg - 30.0).abs() <= 5.0 + 1e-9, "rotation {deg} deg");
    println!("criterion 1 (geometry/optimizer exactness): PASS");
}

/// Independent score oracle: overlays tiled circles in job order, ascending
/// bins, then folds per-bin excess; mirrors the published definition without
/// touching the optimizer's internals.
fn oracle_score(circles: &[Vec<f64>], shifts: &[u32], capacity: f64) -> f64 {
    let p = circles[0].len();
    let mut total = vec![0.0f64; p];
    for (c, &s) in circles.iter().zip(shifts) {
        let s = s as usize % p;
        for (t, slot) in total.iter_mut().enumerate() {
            *slot += c[(t + p - s) % p];
        }
    }
    let mut sum = 0.0;
    for &d in &total {
        sum += (d - capacity).max(0.0);
    }
    1.0 - sum / (p as f64 * capacity)
}

/// Whole-ms shift candidates the degree grid reaches for a circle repeated
/// `r` times on perimeter `p`, at the given precision.
fn grid_shifts(p: u32, r: u32, precision_deg: u32) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::new();
    let mut deg = 0;
    while deg * r < 360 {
        let s = ((deg as f64 / 360.0) * p as f64).round() as u32 % p;
        if !out.contains(&s) {
            out.push(s);
        }
        deg += precision_deg;
    }
    out
}

#[test]
fn criterion_2_optimizer_matches_brute_force_oracle() {
    let pool = [20u32, 24, 30, 40, 50, 60];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut max_gap_5deg = 0.0f64;
    for case in 0..100 {
        let n = rng.gen_range(2..=3);
        let mut jobs = Vec::new();
        for j in 0..n {
            let iter = pool[rng.gen_range(0..pool.len())];
            let up_len = rng.gen_range(1..=iter / 2);
            let up_start = rng.gen_range(0..=iter - up_len);
            let demand = rng.gen_range(10.0..50.0);
            jobs.push((format!("j{j}"), square("sq", iter, up_start, up_len, demand)));
        }
        let capacity = rng.gen_range(30.0..60.0);
        let link = LinkJobSet {
            link_id: format!("case{case}"),
            capacity_gbps: capacity,
            jobs,
        };
        let iters: Vec<u32> = link.jobs.iter().map(|(_, p)| p.iter_time_ms).collect();
        let p = geometry::unified_perimeter(&iters, geometry::DEFAULT_LCM_CAP_MS)
            .unwrap()
            .p_ms;
        assert!(p <= 600);
        let circles: Vec<Vec<f64>> = link
            .jobs
            .iter()
            .map(|(_, prof)| geometry::tile(prof, p).unwrap().demand)
            .collect();

        // exhaustive brute force over the 1-degree grid, first job pinned
        let cands: Vec<Vec<u32>> = (0..n)
            .map(|j| {
                if j == 0 {
                    vec![0]
                } else {
                    grid_shifts(p, p / iters[j], 1)
                }
            })
            .collect();
        let mut best = f64::NEG_INFINITY;
        let mut idx = vec![0usize; n];
        'outer: loop {
            let shifts: Vec<u32> = (0..n).map(|j| cands[j][idx[j]]).collect();
            best = best.max(oracle_score(&circles, &shifts, capacity));
            let mut j = n;
            loop {
                if j == 0 {
                    break 'outer;
                }
                j -= 1;
                idx[j] += 1;
                if idx[j] < cands[j].len() {
                    break;
                }
                idx[j] = 0;
            }
        }

        let s1 = optimizer::solve_rotations(
            &link,
            &SolveConfig {
                precision_deg: 1,
                ..SolveConfig::default()
            },
        )
        .unwrap()
        .score;
        assert_eq!(s1, best, "case {case}: 1-degree solve vs oracle");

        let s5 = optimizer::solve_rotations(&link, &SolveConfig::default())
            .unwrap()
            .score;
        let gap = best - s5;
        assert!(gap <= 0.02 + 1e-12, "case {case}: 5-degree gap {gap}");
        max_gap_5deg = max_gap_5deg.max(gap);
    }
    println!(
        "criterion 2 (oracle equivalence, 100 instances, max 5-degree gap {max_gap_5deg:.4}): PASS"
    );
}

/// Random loop-free affinity forest: jobs join either through a fresh link to
/// an earlier job or by attaching to an existing link.
fn random_tree_graph(rng: &mut ChaCha8Rng) -> AffinityGraph {
    let n = rng.gen_range(2..=50usize);
    let mut g = AffinityGraph::new();
    for j in 0..n {
        g.add_job(&format!("j{j:02}"), rng.gen_range(10..=120));
    }
    let mut links = 0usize;
    for j in 1..n {
        if links > 0 && rng.gen_bool(0.3) {
            let l = rng.gen_range(0..links);
            g.add_edge(&format!("j{j:02}"), &format!("l{l}"), rng.gen_range(0..600))
                .unwrap();
        } else {
            let peer = rng.gen_range(0..j);
            g.add_link(&format!("l{links}"), 0);
            g.add_edge(&format!("j{peer:02}"), &format!("l{links}"), rng.gen_range(0..600))
                .unwrap();
            g.add_edge(&format!("j{j:02}"), &format!("l{links}"), rng.gen_range(0..600))
                .unwrap();
            links += 1;
        }
    }
    g
}

#[test]
fn criterion_3_consolidation_correctness_on_random_graphs() {
    let mut cyclic_checked = 0;
    for case in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let g = random_tree_graph(&mut rng);
        assert!(!g.has_loop(), "case {case}: generator must stay acyclic");
        let assignment = g.bfs_time_shifts().unwrap();
        let violations = g.verify_assignment(&assignment.shifts);
        assert!(violations.is_empty(), "case {case}: {violations:?}");

        // close a cycle with any absent job-link edge; the graph is connected,
        // so every added edge creates a loop
        let mut cyclic = g.clone();
        let extra = cyclic
            .jobs
            .iter()
            .flat_map(|j| cyclic.links.iter().map(move |l| (j.id.clone(), l.id.clone())))
            .find(|(j, l)| !cyclic.edges.iter().any(|e| &e.job == j && &e.link == l));
        if let Some((j, l)) = extra {
            cyclic.add_edge(&j, &l, 0).unwrap();
            assert!(cyclic.has_loop(), "case {case}: cycle undetected");
            assert!(cyclic.bfs_time_shifts().is_err());
            cyclic_checked += 1;
        }
    }
    assert!(cyclic_checked > 150, "only {cyclic_checked} cyclic graphs exercised");
    println!("criterion 3 (consolidation on 200 random graphs, {cyclic_checked} cyclic rejections): PASS");
}

fn two_rack_topo(uplink: f64) -> Topology {
    Topology {
        racks: vec![
            Rack {
                id: "rack0".into(),
                uplink_gbps: uplink,
            },
            Rack {
                id: "rack1".into(),
                uplink_gbps: uplink,
            },
        ],
        servers: (0..4)
            .map(|i| Server {
                id: format!("s{i}"),
                rack: format!("rack{}", i / 2),
                gpu_slots: 1,
                nic_gbps: 50.0,
            })
            .collect(),
    }
}

fn pinned_arrival(at: u64, id: &str, kind: &str, servers: [&str; 2]) -> TraceEvent {
    TraceEvent {
        at_ms: at,
        event: TraceEventKind::Arrival {
            job: JobSpec {
                id: id.into(),
                kind: kind.into(),
                workers: 2,
                duration_iters: u32::MAX,
                pinned_servers: Some(servers.iter().map(|s| s.to_string()).collect()),
            },
        },
    }
}

fn run_pair(
    profile: IterationProfile,
    offset_ms: u64,
    scheduler: SchedulerKind,
    horizon_ms: u64,
    seed: u64,
    drift_sigma_frac: f64,
) -> simulator::SimReport {
    let topo = two_rack_topo(45.0);
    let kind = profile.job_kind.clone();
    let trace = Trace {
        events: vec![
            pinned_arrival(0, "a", &kind, ["s0", "s2"]),
            pinned_arrival(offset_ms, "b", &kind, ["s1", "s3"]),
        ],
    };
    let profiles = BTreeMap::from([(kind, profile)]);
    let cfg = SimConfig {
        scheduler,
        seed,
        horizon_ms,
        drift_sigma_frac,
        ..SimConfig::default()
    };
    simulator::run(&trace, &topo, &profiles, &cfg).unwrap()
}

#[test]
fn criterion_4_interleaving_speedup_and_zero_congestion() {
    // two identical jobs, 255 ms iterations with a 66 ms burst at the uplink
    // capacity: synchronized they halve their burst rate, interleaved they
    // run at dedicated speed
    let profile = square("vgg-like", 255, 0, 66, 45.0);
    let baseline = run_pair(profile.clone(), 0, SchedulerKind::Baseline, 20_000, 7, 0.0);
    let cassini = run_pair(profile, 0, SchedulerKind::Cassini, 20_000, 7, 0.0);
    let cmp = report::compare(&baseline, &cassini);
    assert!(
        (1.15..=1.40).contains(&cmp.mean_p90_ratio),
        "p90 ratio {}",
        cmp.mean_p90_ratio
    );
    let shared_congestion: u64 = cassini
        .congestion_ms
        .iter()
        .filter(|(l, _)| l.contains("rack"))
        .map(|(_, &c)| c)
        .sum();
    assert_eq!(shared_congestion, 0, "congested ms on shared links");
    println!(
        "criterion 4 (p90 ratio {:.3} in [1.15, 1.40], shared-link congestion 0): PASS",
        cmp.mean_p90_ratio
    );
}

#[test]
fn criterion_5_partial_compatibility_trend() {
    // burst lengths 50/60/70 ms on a 100 ms iteration give link scores
    // 1.0/0.8/0.6; the third fixture arrives pre-separated so interleaving
    // has nothing left to win
    let cases = [(50u32, 0u64, 1.0), (60, 0, 0.8), (70, 50, 0.6)];
    let mut improvements = Vec::new();
    for &(up, offset, want_score) in &cases {
        let profile = square("snap", 100, 0, up, 45.0);
        let link = LinkJobSet {
            link_id: "uplink".into(),
            capacity_gbps: 45.0,
            jobs: vec![
                ("a".into(), profile.clone()),
                ("b".into(), profile.clone()),
            ],
        };
        let score = optimizer::solve_rotations(&link, &SolveConfig::default())
            .unwrap()
            .score;
        assert!(
            (score - want_score).abs() <= 0.05,
            "up {up}: score {score}, expected about {want_score}"
        );
        let baseline = run_pair(profile.clone(), offset, SchedulerKind::Baseline, 30_000, 3, 0.0);
        let cassini = run_pair(profile, offset, SchedulerKind::Cassini, 30_000, 3, 0.0);
        let ratio = report::compare(&baseline, &cassini).mean_p90_ratio;
        improvements.push((want_score, ratio));
    }
    assert!(
        improvements[0].1 > improvements[1].1 && improvements[1].1 > improvements[2].1,
        "improvements not monotone: {improvements:?}"
    );
    assert!(
        improvements[2].1 < 1.05,
        "score-0.6 fixture improved by {:.3}",
        improvements[2].1
    );
    println!(
        "criterion 5 (improvement {:.3} > {:.3} > {:.3}, last under 5%): PASS",
        improvements[0].1, improvements[1].1, improvements[2].1
    );
}

#[test]
fn criterion_6_fair_share_split() {
    let capacity = 45.0;
    let flows = [
        fluid::Flow {
            id: "a".into(),
            demand_gbps: capacity,
            links: BTreeMap::from([("l".to_string(), 1u32)]),
        },
        fluid::Flow {
            id: "b".into(),
            demand_gbps: capacity + 10.0,
            links: BTreeMap::from([("l".to_string(), 1u32)]),
        },
    ];
    let caps = BTreeMap::from([("l".to_string(), capacity)]);
    let rates = fluid::max_min_rates(&flows, &caps);
    for r in &rates {
        assert!((r - capacity / 2.0).abs() <= 1e-9, "rate {r}");
    }
    println!("criterion 6 (saturating flows split {capacity} Gbps evenly): PASS");
}

#[test]
fn criterion_7_drift_adjustment_rate() {
    // fully compatible pair, 1% iteration jitter, one simulated minute
    let mut total = 0usize;
    let seeds = 10u64;
    for seed in 0..seeds {
        let profile = square("snap", 100, 0, 50, 45.0);
        let report = run_pair(profile, 0, SchedulerKind::Cassini, 60_000, seed, 0.01);
        total += report.adjustments.len();
    }
    let per_minute = total as f64 / seeds as f64;
    assert!(per_minute < 2.0, "{per_minute} adjustments per minute");
    println!("criterion 7 (drift adjustments {per_minute:.2}/min < 2): PASS");
}

#[test]
fn criterion_8_simulation_determinism() {
    let topo = two_rack_topo(45.0);
    let profiles = BTreeMap::from([("snap".to_string(), square("snap", 100, 0, 60, 45.0))]);
    let trace = Trace {
        events: vec![
            pinned_arrival(0, "a", "snap", ["s0", "s2"]),
            pinned_arrival(500, "b", "snap", ["s1", "s3"]),
        ],
    };
    for scheduler in [SchedulerKind::Baseline, SchedulerKind::Cassini] {
        let cfg = SimConfig {
            scheduler,
            seed: 99,
            horizon_ms: 10_000,
            drift_sigma_frac: 0.01,
            ..SimConfig::default()
        };
        let r1 = simulator::run(&trace, &topo, &profiles, &cfg).unwrap();
        let r2 = simulator::run(&trace, &topo, &profiles, &cfg).unwrap();
        assert_eq!(
            serde_json::to_vec(&r1).unwrap(),
            serde_json::to_vec(&r2).unwrap(),
            "{scheduler:?} report bytes differ"
        );
    }
    println!("criterion 8 (byte-identical reports per seed): PASS");
}

#[test]
fn criterion_9_ranker_end_to_end() {
    // 3 racks x 3 servers; three 2-worker jobs with 40 ms bursts on 100 ms
    // iterations at uplink capacity: two jobs interleave perfectly on one
    // rack pair, three cannot, and the ring placement is cyclic
    let topo = Topology {
        racks: (0..3)
            .map(|r| Rack {
                id: format!("rack{r}"),
                uplink_gbps: 45.0,
            })
            .collect(),
        servers: (0..9)
            .map(|i| Server {
                id: format!("r{}s{}", i / 3, i % 3),
                rack: format!("rack{}", i / 3),
                gpu_slots: 1,
                nic_gbps: 50.0,
            })
            .collect(),
    };
    let profiles = BTreeMap::from([("burst".to_string(), square("burst", 100, 0, 40, 45.0))]);
    let kinds: BTreeMap<String, String> = ["x", "y", "z"]
        .iter()
        .map(|j| (j.to_string(), "burst".to_string()))
        .collect();
    let place = |id: u32, x: [&str; 2], y: [&str; 2], z: [&str; 2]| Placement {
        candidate_id: id,
        assignment: BTreeMap::from([
            ("x".to_string(), x.iter().map(|s| s.to_string()).collect()),
            ("y".to_string(), y.iter().map(|s| s.to_string()).collect()),
            ("z".to_string(), z.iter().map(|s| s.to_string()).collect()),
        ]),
    };
    let compatible = place(0, ["r0s0", "r1s0"], ["r0s1", "r1s1"], ["r2s0", "r2s1"]);
    let crowded = place(1, ["r0s0", "r1s0"], ["r0s1", "r1s1"], ["r0s2", "r1s2"]);
    let cyclic = place(2, ["r0s0", "r1s0"], ["r1s1", "r2s0"], ["r0s1", "r2s1"]);

    let cfg = SolveConfig::default();
    let cyclic_eval =
        ranker::score_candidate(&cyclic, &profiles, &kinds, &topo, &cfg).unwrap();
    assert!(matches!(cyclic_eval, ranker::CandidateEval::Discarded));

    let result = ranker::rank(
        &[crowded.clone(), cyclic.clone(), compatible.clone()],
        &profiles,
        &kinds,
        &topo,
        &cfg,
    )
    .unwrap();
    assert_eq!(result.top_placement.candidate_id, 0, "compatible candidate wins");
    assert!((result.aggregate_score - 1.0).abs() <= 1e-9);
    assert!(!result.time_shifts.shifts.is_empty());
    // x and y share the rack0/rack1 uplinks; their 40 ms bursts must not overlap
    let gap = (result.time_shifts.shifts["x"] as i64 - result.time_shifts.shifts["y"] as i64)
        .rem_euclid(100);
    assert!((40..=60).contains(&gap), "shift gap {gap}");
    println!("criterion 9 (cyclic discarded, compatible ranked first, shifts verified): PASS");
}
