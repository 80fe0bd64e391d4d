//! Fluid bandwidth sharing: progressive-filling max-min allocation subject to
//! link capacities, with per-link flow multiplicities.

use std::collections::BTreeMap;

/// One job's aggregate traffic for the current millisecond.
#[derive(Debug, Clone)]
pub struct Flow {
    pub id: String,
    /// Per-segment demand (Gbps); the rate a single ring segment would drive.
    pub demand_gbps: f64,
    /// Directed links traversed, with the number of ring segments on each.
    pub links: BTreeMap<String, u32>,
}

/// Max-min fair rates by progressive filling.
///
/// All unfrozen flows rise at a common rate; a flow freezes when it reaches
/// its demand or when some link it traverses saturates. A link's constraint
/// counts each flow with its multiplicity. Returns one rate per input flow,
/// in order.
pub fn max_min_rates(flows: &[Flow], capacities: &BTreeMap<String, f64>) -> Vec<f64> {
    let n = flows.len();
    let mut rates = vec![0.0f64; n];
    let mut frozen = vec![false; n];
    let mut remaining: BTreeMap<&str, f64> = capacities
        .iter()
        .map(|(k, &v)| (k.as_str(), v))
        .collect();

    loop {
        // active multiplicity per link
        let mut active_mult: BTreeMap<&str, f64> = BTreeMap::new();
        for (i, f) in flows.iter().enumerate() {
            if frozen[i] {
                continue;
            }
            for (l, &m) in &f.links {
                *active_mult.entry(l.as_str()).or_insert(0.0) += m as f64;
            }
        }
        // smallest headroom: either a flow hits its demand or a link fills
        let mut step = f64::INFINITY;
        for (i, f) in flows.iter().enumerate() {
            if !frozen[i] {
                step = step.min(f.demand_gbps - rates[i]);
            }
        }
        for (l, &mult) in &active_mult {
            if mult > 0.0 {
                let cap_left = remaining.get(l).copied().unwrap_or(f64::INFINITY);
                step = step.min(cap_left / mult);
            }
        }
        if !step.is_finite() || step < 0.0 {
            step = 0.0;
        }
        // advance every unfrozen flow by the common step
        let mut any_active = false;
        for (i, f) in flows.iter().enumerate() {
            if frozen[i] {
                continue;
            }
            any_active = true;
            rates[i] += step;
            for (l, &m) in &f.links {
                if let Some(cap) = remaining.get_mut(l.as_str()) {
                    *cap -= step * m as f64;
                }
            }
        }
        if !any_active {
            break;
        }
        // freeze flows at demand or on saturated links
        let mut froze = false;
        for (i, f) in flows.iter().enumerate() {
            if frozen[i] {
                continue;
            }
            let at_demand = rates[i] >= f.demand_gbps - 1e-12;
            let on_full_link = f.links.keys().any(|l| {
                remaining
                    .get(l.as_str())
                    .map(|&c| c <= 1e-12)
                    .unwrap_or(false)
            });
            if at_demand || on_full_link {
                frozen[i] = true;
                froze = true;
            }
        }
        if !froze {
            break; // no progress possible
        }
    }
    rates
}

/// Offered load per link: sum of demand times multiplicity over flows.
pub fn offered_load(flows: &[Flow]) -> BTreeMap<String, f64> {
    let mut load = BTreeMap::new();
    for f in flows {
        for (l, &m) in &f.links {
            *load.entry(l.clone()).or_insert(0.0) += f.demand_gbps * m as f64;
        }
    }
    load
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(id: &str, demand: f64, links: &[(&str, u32)]) -> Flow {
        Flow {
            id: id.to_string(),
            demand_gbps: demand,
            links: links
                .iter()
                .map(|(l, m)| (l.to_string(), *m))
                .collect(),
        }
    }

    fn caps(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
        entries.iter().map(|(l, c)| (l.to_string(), *c)).collect()
    }

    #[test]
    fn single_flow_under_capacity() {
        let flows = [flow("a", 25.0, &[("l", 1)])];
        let rates = max_min_rates(&flows, &caps(&[("l", 50.0)]));
        assert!((rates[0] - 25.0).abs() < 1e-9);
    }

    #[test]
    fn two_saturating_flows_split_evenly() {
        let flows = [flow("a", 45.0, &[("l", 1)]), flow("b", 45.0, &[("l", 1)])];
        let rates = max_min_rates(&flows, &caps(&[("l", 45.0)]));
        assert!((rates[0] - 22.5).abs() < 1e-9);
        assert!((rates[1] - 22.5).abs() < 1e-9);
    }

    #[test]
    fn water_filling_three_flows() {
        // classic oracle: 10/20/40 on 45 -> 10, 17.5, 17.5
        let flows = [
            flow("a", 10.0, &[("l", 1)]),
            flow("b", 20.0, &[("l", 1)]),
            flow("c", 40.0, &[("l", 1)]),
        ];
        let rates = max_min_rates(&flows, &caps(&[("l", 45.0)]));
        assert!((rates[0] - 10.0).abs() < 1e-9);
        assert!((rates[1] - 17.5).abs() < 1e-9);
        assert!((rates[2] - 17.5).abs() < 1e-9);
    }

    #[test]
    fn multiplicity_counts_against_capacity() {
        // one flow crossing the link twice competes as two segments
        let flows = [flow("a", 30.0, &[("l", 2)]), flow("b", 30.0, &[("l", 1)])];
        let rates = max_min_rates(&flows, &caps(&[("l", 60.0)]));
        // fair share rises to 20 where 2a + b = 60
        assert!((rates[0] - 20.0).abs() < 1e-9);
        assert!((rates[1] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn work_conservation_on_congested_link() {
        let flows = [
            flow("a", 40.0, &[("l", 1)]),
            flow("b", 25.0, &[("l", 1)]),
            flow("c", 5.0, &[("l", 1)]),
        ];
        let rates = max_min_rates(&flows, &caps(&[("l", 50.0)]));
        let total: f64 = rates.iter().sum();
        assert!((total - 50.0).abs() < 1e-9);
        assert!((rates[2] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn bottleneck_cascade_across_links() {
        // a shares l1 with b; b's rate is capped by l2, releasing l1 headroom
        let flows = [
            flow("a", 40.0, &[("l1", 1)]),
            flow("b", 40.0, &[("l1", 1), ("l2", 1)]),
        ];
        let rates = max_min_rates(&flows, &caps(&[("l1", 50.0), ("l2", 10.0)]));
        assert!((rates[1] - 10.0).abs() < 1e-9);
        assert!((rates[0] - 40.0).abs() < 1e-9);
    }

    #[test]
    fn offered_load_sums_multiplicity() {
        let flows = [flow("a", 30.0, &[("l", 2)]), flow("b", 10.0, &[("l", 1)])];
        let load = offered_load(&flows);
        assert!((load["l"] - 70.0).abs() < 1e-12);
    }

    #[test]
    fn zero_demand_flow_gets_zero() {
        let flows = [flow("a", 0.0, &[("l", 1)])];
        let rates = max_min_rates(&flows, &caps(&[("l", 50.0)]));
        assert_eq!(rates[0], 0.0);
    }
}
