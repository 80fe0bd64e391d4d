//! Summary statistics over simulation reports: per-job iteration-time
//! percentiles, congestion totals, and side-by-side scheduler comparison.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::simulator::SimReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStats {
    pub iterations: u32,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub jobs: BTreeMap<String, JobStats>,
    pub congestion_total_ms: u64,
    pub congestion_by_link: BTreeMap<String, u64>,
    pub adjustments: usize,
}

/// Ratio of baseline to interleaved iteration times per job, computed on a
/// chosen percentile. Values above 1 mean the interleaved run was faster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub per_job_p90_ratio: BTreeMap<String, f64>,
    pub mean_p90_ratio: f64,
    pub baseline_congestion_ms: u64,
    pub cassini_congestion_ms: u64,
}

/// Nearest-rank percentile of an unsorted sample, q in [0, 1].
pub fn percentile(samples: &[u32], q: f64) -> f64 {
    assert!((0.0..=1.0).contains(&q));
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut s: Vec<u32> = samples.to_vec();
    s.sort_unstable();
    let rank = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[rank - 1] as f64
}

pub fn summarize(report: &SimReport) -> Summary {
    let mut jobs = BTreeMap::new();
    for (id, durations) in &report.iteration_ms {
        if durations.is_empty() {
            continue;
        }
        let mean = durations.iter().map(|&d| d as f64).sum::<f64>() / durations.len() as f64;
        jobs.insert(
            id.clone(),
            JobStats {
                iterations: report.iterations_completed[id],
                mean_ms: mean,
                p50_ms: percentile(durations, 0.50),
                p90_ms: percentile(durations, 0.90),
                p99_ms: percentile(durations, 0.99),
            },
        );
    }
    Summary {
        jobs,
        congestion_total_ms: report.congestion_total_ms,
        congestion_by_link: report.congestion_ms.clone(),
        adjustments: report.adjustments.len(),
    }
}

/// Compares a baseline run against an interleaved run of the same trace.
/// Jobs present in only one report are skipped.
pub fn compare(baseline: &SimReport, cassini: &SimReport) -> Comparison {
    let b = summarize(baseline);
    let c = summarize(cassini);
    let mut ratios = BTreeMap::new();
    for (id, bs) in &b.jobs {
        if let Some(cs) = c.jobs.get(id) {
            if cs.p90_ms > 0.0 {
                ratios.insert(id.clone(), bs.p90_ms / cs.p90_ms);
            }
        }
    }
    let mean = if ratios.is_empty() {
        f64::NAN
    } else {
        ratios.values().sum::<f64>() / ratios.len() as f64
    };
    Comparison {
        per_job_p90_ratio: ratios,
        mean_p90_ratio: mean,
        baseline_congestion_ms: baseline.congestion_total_ms,
        cassini_congestion_ms: cassini.congestion_total_ms,
    }
}

/// One CSV row per job: id, iterations, mean, p50, p90, p99.
pub fn to_csv(summary: &Summary) -> String {
    let mut out = String::from("job,iterations,mean_ms,p50_ms,p90_ms,p99_ms\n");
    for (id, s) in &summary.jobs {
        out.push_str(&format!(
            "{},{},{:.3},{:.1},{:.1},{:.1}\n",
            id, s.iterations, s.mean_ms, s.p50_ms, s.p90_ms, s.p99_ms
        ));
    }
    out
}
