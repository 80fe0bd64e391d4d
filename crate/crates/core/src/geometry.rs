//! Communication circles: periodic demand laid on a circle whose perimeter is
//! the iteration time, and unified circles tiling several iterations onto an
//! LCM perimeter. Demand is evaluated on the 1 ms time grid; angles are a
//! presentation-layer conversion (alpha = 2*pi*t/p).

use num_integer::Integer;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

use crate::profiles::IterationProfile;

/// Upper bound on a unified-circle perimeter before coarser rounding kicks in.
pub const DEFAULT_LCM_CAP_MS: u64 = 3_600_000;

/// Fallback quanta tried, in order, when the exact LCM exceeds the cap.
const FALLBACK_QUANTA_MS: [u32; 3] = [2, 5, 10];

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("unified perimeter exceeds cap of {cap_ms} ms even after rounding iteration times to 10 ms")]
    PerimeterOverflow { cap_ms: u64 },
    #[error("perimeter {p_ms} ms not divisible by iteration time {iter_time_ms} ms")]
    NotDivisible { p_ms: u32, iter_time_ms: u32 },
    #[error("circles have mismatched perimeters ({a} ms vs {b} ms)")]
    PerimeterMismatch { a: u32, b: u32 },
    #[error("iteration times must be positive")]
    ZeroIterationTime,
}

/// A job's demand on its own circle (perimeter = iteration time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommCircle {
    pub perimeter_ms: u32,
    pub demand: Vec<f64>,
}

impl CommCircle {
    pub fn from_profile(profile: &IterationProfile) -> CommCircle {
        CommCircle {
            perimeter_ms: profile.iter_time_ms,
            demand: profile.demand_bins(),
        }
    }
}

/// A job's demand tiled `repetitions` times onto a shared LCM perimeter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedCircle {
    pub perimeter_ms: u32,
    pub repetitions: u32,
    pub demand: Vec<f64>,
}

/// Discrete rotation grid over `[0, 2*pi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleGrid {
    pub bin_count: u32,
}

impl AngleGrid {
    /// One bin per time quantum on a perimeter of `p_ms`.
    pub fn for_perimeter(p_ms: u32) -> AngleGrid {
        AngleGrid { bin_count: p_ms }
    }

    pub fn angles(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.bin_count;
        (0..n).map(move |i| TAU * i as f64 / n as f64)
    }
}

/// Result of a perimeter computation, including any rounding that was applied
/// to keep the LCM under the cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedPerimeter {
    pub p_ms: u32,
    /// Quantum the iteration times were rounded to (1 = no rounding).
    pub quantum_ms: u32,
    /// Iteration times actually used, after rounding.
    pub iter_times_ms: Vec<u32>,
}

/// Least common multiple of the iteration times, with a coarser-quantum
/// fallback when the exact LCM exceeds `cap_ms`.
pub fn unified_perimeter(
    iter_times: &[u32],
    cap_ms: u64,
) -> Result<UnifiedPerimeter, GeometryError> {
    assert!(!iter_times.is_empty(), "need at least one iteration time");
    if iter_times.contains(&0) {
        return Err(GeometryError::ZeroIterationTime);
    }
    if let Some(p) = capped_lcm(iter_times, cap_ms) {
        return Ok(UnifiedPerimeter {
            p_ms: p,
            quantum_ms: 1,
            iter_times_ms: iter_times.to_vec(),
        });
    }
    for q in FALLBACK_QUANTA_MS {
        let rounded: Vec<u32> = iter_times
            .iter()
            .map(|&t| round_to_quantum(t, q))
            .collect();
        if let Some(p) = capped_lcm(&rounded, cap_ms) {
            return Ok(UnifiedPerimeter {
                p_ms: p,
                quantum_ms: q,
                iter_times_ms: rounded,
            });
        }
    }
    Err(GeometryError::PerimeterOverflow { cap_ms })
}

fn capped_lcm(times: &[u32], cap_ms: u64) -> Option<u32> {
    let mut acc: u64 = 1;
    for &t in times {
        acc = acc.lcm(&(t as u64));
        if acc > cap_ms {
            return None;
        }
    }
    Some(acc as u32)
}

fn round_to_quantum(t: u32, q: u32) -> u32 {
    let r = ((t + q / 2) / q) * q;
    r.max(q)
}

/// Lays `p_ms / iter_time` copies of the profile's demand end-to-end.
pub fn tile(profile: &IterationProfile, p_ms: u32) -> Result<UnifiedCircle, GeometryError> {
    let iter = profile.iter_time_ms;
    if iter == 0 {
        return Err(GeometryError::ZeroIterationTime);
    }
    if !p_ms.is_multiple_of(iter) {
        return Err(GeometryError::NotDivisible {
            p_ms,
            iter_time_ms: iter,
        });
    }
    let r = p_ms / iter;
    let one = profile.demand_bins();
    let mut demand = Vec::with_capacity(p_ms as usize);
    for _ in 0..r {
        demand.extend_from_slice(&one);
    }
    Ok(UnifiedCircle {
        perimeter_ms: p_ms,
        repetitions: r,
        demand,
    })
}

/// Converts a rotation angle to its time-domain shift on a perimeter.
pub fn shift_ms_for_rotation(alpha_rad: f64, p_ms: u32) -> u32 {
    let raw = alpha_rad.rem_euclid(TAU) / TAU * p_ms as f64;
    (raw.round() as u32) % p_ms
}

/// Demand at position `t_ms` after rotating the circle by `alpha_rad`
/// counter-clockwise: the value at `(t - shift) mod p`.
pub fn rotated_demand(circle: &UnifiedCircle, alpha_rad: f64, t_ms: u32) -> f64 {
    let p = circle.perimeter_ms;
    let shift = shift_ms_for_rotation(alpha_rad, p);
    let pos = (t_ms % p + p - shift) % p;
    circle.demand[pos as usize]
}

/// Pointwise sum of rotated demands across circles sharing one perimeter.
pub fn overlay(
    circles: &[&UnifiedCircle],
    rotations: &[f64],
) -> Result<Vec<f64>, GeometryError> {
    assert_eq!(circles.len(), rotations.len());
    let p = circles
        .first()
        .map(|c| c.perimeter_ms)
        .expect("overlay needs at least one circle");
    for c in circles {
        if c.perimeter_ms != p {
            return Err(GeometryError::PerimeterMismatch {
                a: p,
                b: c.perimeter_ms,
            });
        }
    }
    let mut total = vec![0.0; p as usize];
    for (c, &alpha) in circles.iter().zip(rotations) {
        let shift = shift_ms_for_rotation(alpha, p);
        overlay_shifted(&mut total, &c.demand, shift);
    }
    Ok(total)
}

/// Adds `demand` rotated by `shift_ms` into `total` in ascending bin order.
pub(crate) fn overlay_shifted(total: &mut [f64], demand: &[f64], shift_ms: u32) {
    let p = total.len();
    let s = shift_ms as usize % p;
    for (t, slot) in total.iter_mut().enumerate() {
        *slot += demand[(t + p - s) % p];
    }
}
