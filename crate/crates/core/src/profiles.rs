//! Iteration profile ingestion: fold a raw bandwidth time series into one
//! steady-state training iteration and segment it into Up/Down phase arcs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum normalized autocorrelation peak accepted as an iteration boundary.
pub const PERIOD_CONFIDENCE: f64 = 0.8;

/// Default cutoff between Up and Down phases, in Gbps.
pub const DEFAULT_UP_THRESHOLD_GBPS: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("empty series: need at least 2 samples")]
    EmptySeries,
    #[error("no periodicity detected (best autocorrelation {best:.3} < {confidence:.2}); pass an iteration-time hint")]
    NonPeriodic { best: f64, confidence: f64 },
    #[error("series spans {span_ms} ms, shorter than one iteration of {iter_time_ms} ms")]
    ShortSeries { span_ms: u32, iter_time_ms: u32 },
    #[error("sample times must be strictly increasing (index {index})")]
    NonMonotonicTime { index: usize },
    #[error("sample values must be finite and non-negative (index {index})")]
    InvalidSample { index: usize },
}

/// One point of a measured bandwidth-demand curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSample {
    pub t_ms: f64,
    pub bw_gbps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseKind {
    Up,
    Down,
}

/// A maximal run of high (Up) or near-zero (Down) demand within an iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseArc {
    pub start_ms: u32,
    pub duration_ms: u32,
    pub demand_gbps: f64,
    pub kind: PhaseKind,
}

/// One job's bandwidth demand over a single steady-state training iteration.
///
/// Arcs tile `[0, iter_time_ms)` exactly, in order, with no gaps or overlaps.
/// All times are quantized to 1 ms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationProfile {
    pub job_kind: String,
    pub iter_time_ms: u32,
    pub arcs: Vec<PhaseArc>,
}

impl IterationProfile {
    /// Total Down time per iteration.
    pub fn compute_time_ms(&self) -> u32 {
        self.arcs
            .iter()
            .filter(|a| a.kind == PhaseKind::Down)
            .map(|a| a.duration_ms)
            .sum()
    }

    /// Demand sampled on the 1 ms grid over one iteration.
    pub fn demand_bins(&self) -> Vec<f64> {
        let mut bins = vec![0.0; self.iter_time_ms as usize];
        for arc in &self.arcs {
            let start = arc.start_ms as usize;
            let end = start + arc.duration_ms as usize;
            for b in &mut bins[start..end] {
                *b = arc.demand_gbps;
            }
        }
        bins
    }

    /// Builds a profile directly from Up/Down durations and demands.
    /// Consecutive `(duration_ms, demand_gbps)` segments; a segment is Up when
    /// its demand is at or above `up_threshold`.
    pub fn from_segments(
        job_kind: &str,
        segments: &[(u32, f64)],
        up_threshold: f64,
    ) -> IterationProfile {
        let mut arcs = Vec::with_capacity(segments.len());
        let mut start = 0u32;
        for &(dur, demand) in segments {
            assert!(dur > 0, "segment duration must be positive");
            let kind = if demand >= up_threshold {
                PhaseKind::Up
            } else {
                PhaseKind::Down
            };
            arcs.push(PhaseArc {
                start_ms: start,
                duration_ms: dur,
                demand_gbps: demand,
                kind,
            });
            start += dur;
        }
        IterationProfile {
            job_kind: job_kind.to_string(),
            iter_time_ms: start,
            arcs,
        }
    }

    fn validate_tiling(&self) {
        debug_assert_eq!(
            self.arcs.iter().map(|a| a.duration_ms).sum::<u32>(),
            self.iter_time_ms
        );
    }
}

/// Parses a raw sample series into an iteration profile.
///
/// The iteration boundary is taken from `iter_time_hint` when given, otherwise
/// detected by normalized autocorrelation. Samples are resampled onto a 1 ms
/// grid (step interpolation), folded into one iteration, and segmented at
/// `up_threshold`.
pub fn parse_profile(
    job_kind: &str,
    samples: &[BandwidthSample],
    iter_time_hint: Option<u32>,
    up_threshold: f64,
) -> Result<IterationProfile, ProfileError> {
    if samples.len() < 2 {
        return Err(ProfileError::EmptySeries);
    }
    for (i, w) in samples.windows(2).enumerate() {
        if w[1].t_ms <= w[0].t_ms {
            return Err(ProfileError::NonMonotonicTime { index: i + 1 });
        }
    }
    for (i, s) in samples.iter().enumerate() {
        if !s.bw_gbps.is_finite() || s.bw_gbps < 0.0 || !s.t_ms.is_finite() || s.t_ms < 0.0 {
            return Err(ProfileError::InvalidSample { index: i });
        }
    }

    let series = resample_1ms(samples);
    let period = match iter_time_hint {
        Some(p) if p >= 1 => p,
        _ => detect_period(&series)?,
    };
    if (series.len() as u32) < period {
        return Err(ProfileError::ShortSeries {
            span_ms: series.len() as u32,
            iter_time_ms: period,
        });
    }

    let folded = fold(&series, period);
    let arcs = segment_phases(&folded, up_threshold);
    let profile = IterationProfile {
        job_kind: job_kind.to_string(),
        iter_time_ms: period,
        arcs,
    };
    profile.validate_tiling();
    Ok(profile)
}

/// Step-interpolates the samples onto a 1 ms grid spanning the series.
fn resample_1ms(samples: &[BandwidthSample]) -> Vec<f64> {
    let t0 = samples[0].t_ms.floor() as u64;
    let t1 = samples[samples.len() - 1].t_ms.floor() as u64;
    let n = (t1 - t0 + 1) as usize;
    let mut out = vec![0.0; n];
    let mut idx = 0usize;
    for (bin, slot) in out.iter_mut().enumerate() {
        let t = (t0 + bin as u64) as f64;
        while idx + 1 < samples.len() && samples[idx + 1].t_ms <= t {
            idx += 1;
        }
        *slot = samples[idx].bw_gbps;
    }
    out
}

/// Finds the iteration period as the lag maximizing the normalized
/// autocorrelation (Pearson correlation of the series against itself shifted).
/// Ties break toward the smallest lag so the fundamental period wins over its
/// multiples.
fn detect_period(series: &[f64]) -> Result<u32, ProfileError> {
    let n = series.len();
    let max_lag = n / 2;
    let mut best_lag = 0usize;
    let mut best_r = f64::NEG_INFINITY;
    for lag in 1..=max_lag {
        let m = n - lag;
        if m < 2 {
            break;
        }
        let a = &series[..m];
        let b = &series[lag..];
        let mean_a = a.iter().sum::<f64>() / m as f64;
        let mean_b = b.iter().sum::<f64>() / m as f64;
        let mut cov = 0.0;
        let mut var_a = 0.0;
        let mut var_b = 0.0;
        for i in 0..m {
            let da = a[i] - mean_a;
            let db = b[i] - mean_b;
            cov += da * db;
            var_a += da * da;
            var_b += db * db;
        }
        if var_a <= 0.0 || var_b <= 0.0 {
            continue; // constant window, correlation undefined
        }
        let r = cov / (var_a * var_b).sqrt();
        if r > best_r + 1e-12 {
            best_r = r;
            best_lag = lag;
        }
    }
    if best_lag == 0 || best_r < PERIOD_CONFIDENCE {
        return Err(ProfileError::NonPeriodic {
            best: if best_r.is_finite() { best_r } else { 0.0 },
            confidence: PERIOD_CONFIDENCE,
        });
    }
    Ok(best_lag as u32)
}

/// Averages the series across iteration copies, producing one period.
fn fold(series: &[f64], period: u32) -> Vec<f64> {
    let p = period as usize;
    let mut sums = vec![0.0; p];
    let mut counts = vec![0u32; p];
    for (i, &v) in series.iter().enumerate() {
        sums[i % p] += v;
        counts[i % p] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}

/// Segments a folded single-iteration series into alternating Up/Down arcs.
/// A bin is Up when its demand is at or above `up_threshold`; each arc carries
/// the mean demand of its bins.
pub fn segment_phases(folded: &[f64], up_threshold: f64) -> Vec<PhaseArc> {
    assert!(!folded.is_empty(), "folded series must cover one iteration");
    let mut arcs = Vec::new();
    let mut run_start = 0usize;
    let mut run_kind = kind_of(folded[0], up_threshold);
    for (i, &v) in folded.iter().enumerate().skip(1) {
        let k = kind_of(v, up_threshold);
        if k != run_kind {
            arcs.push(make_arc(folded, run_start, i, run_kind));
            run_start = i;
            run_kind = k;
        }
    }
    arcs.push(make_arc(folded, run_start, folded.len(), run_kind));
    arcs
}

fn kind_of(v: f64, up_threshold: f64) -> PhaseKind {
    if v >= up_threshold {
        PhaseKind::Up
    } else {
        PhaseKind::Down
    }
}

fn make_arc(folded: &[f64], start: usize, end: usize, kind: PhaseKind) -> PhaseArc {
    let mean = folded[start..end].iter().sum::<f64>() / (end - start) as f64;
    PhaseArc {
        start_ms: start as u32,
        duration_ms: (end - start) as u32,
        demand_gbps: mean,
        kind,
    }
}

/// Reconstructs the per-ms series of `copies` back-to-back iterations.
/// Used by tests and the debug CLI.
pub fn reconstruct_series(profile: &IterationProfile, copies: u32) -> Vec<BandwidthSample> {
    let bins = profile.demand_bins();
    let mut out = Vec::with_capacity(bins.len() * copies as usize);
    for c in 0..copies {
        for (i, &bw) in bins.iter().enumerate() {
            out.push(BandwidthSample {
                t_ms: (c as usize * bins.len() + i) as f64,
                bw_gbps: bw,
            });
        }
    }
    out
}
