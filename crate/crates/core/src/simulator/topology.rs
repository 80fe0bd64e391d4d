//! Cluster topology: single-NIC servers under ToRs, ToR uplinks into one
//! aggregation tier, and deterministic ring routing over the tree.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("server {0} references unknown rack {1}")]
    UnknownRack(String, String),
    #[error("duplicate server id {0}")]
    DuplicateServer(String),
    #[error("duplicate rack id {0}")]
    DuplicateRack(String),
    #[error("unknown server {0} in placement")]
    UnknownServer(String),
    #[error("topology must have at least one server")]
    Empty,
    #[error("capacities must be positive")]
    BadCapacity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Server {
    pub id: String,
    pub rack: String,
    pub gpu_slots: u32,
    pub nic_gbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rack {
    pub id: String,
    /// Capacity of the rack's uplink into the aggregation tier, one direction.
    pub uplink_gbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub servers: Vec<Server>,
    pub racks: Vec<Rack>,
}

impl Topology {
    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.servers.is_empty() {
            return Err(TopologyError::Empty);
        }
        let mut rack_ids = std::collections::BTreeSet::new();
        for r in &self.racks {
            if !rack_ids.insert(&r.id) {
                return Err(TopologyError::DuplicateRack(r.id.clone()));
            }
            if r.uplink_gbps <= 0.0 {
                return Err(TopologyError::BadCapacity);
            }
        }
        let mut server_ids = std::collections::BTreeSet::new();
        for s in &self.servers {
            if !server_ids.insert(&s.id) {
                return Err(TopologyError::DuplicateServer(s.id.clone()));
            }
            if !rack_ids.contains(&s.rack) {
                return Err(TopologyError::UnknownRack(s.id.clone(), s.rack.clone()));
            }
            if s.nic_gbps <= 0.0 {
                return Err(TopologyError::BadCapacity);
            }
        }
        Ok(())
    }

    pub fn server(&self, id: &str) -> Option<&Server> {
        self.servers.iter().find(|s| s.id == id)
    }

    /// Directed link capacities, keyed by link id.
    pub fn link_capacities(&self) -> BTreeMap<String, f64> {
        let mut caps = BTreeMap::new();
        for s in &self.servers {
            caps.insert(format!("up:{}", s.id), s.nic_gbps);
            caps.insert(format!("down:{}", s.id), s.nic_gbps);
        }
        for r in &self.racks {
            caps.insert(format!("up:{}", r.id), r.uplink_gbps);
            caps.insert(format!("down:{}", r.id), r.uplink_gbps);
        }
        caps
    }

    pub fn total_gpu_slots(&self) -> u32 {
        self.servers.iter().map(|s| s.gpu_slots).sum()
    }

    /// The 24-server reference fixture: 6 racks of 4 single-GPU servers,
    /// 50 Gbps NICs, rack uplinks 2:1 oversubscribed (100 Gbps for 200 Gbps
    /// of downstream NICs).
    pub fn default_testbed() -> Topology {
        let racks: Vec<Rack> = (0..6)
            .map(|r| Rack {
                id: format!("rack{r}"),
                uplink_gbps: 100.0,
            })
            .collect();
        let servers: Vec<Server> = (0..24)
            .map(|i| Server {
                id: format!("srv{i:02}"),
                rack: format!("rack{}", i / 4),
                gpu_slots: 1,
                nic_gbps: 50.0,
            })
            .collect();
        Topology { servers, racks }
    }
}

/// Links traversed by a job placed on `workers` (server ids, one per worker),
/// as a multiset of directed link ids.
///
/// Workers are ordered in a ring by server id; each consecutive pair
/// contributes the unique tree path between its servers: up the source NIC,
/// across rack uplinks when racks differ, down the destination NIC.
pub fn route(
    workers: &[String],
    topo: &Topology,
) -> Result<BTreeMap<String, u32>, TopologyError> {
    let mut ring = workers.to_vec();
    ring.sort();
    let mut links: BTreeMap<String, u32> = BTreeMap::new();
    if ring.len() < 2 {
        return Ok(links);
    }
    for i in 0..ring.len() {
        let a = &ring[i];
        let b = &ring[(i + 1) % ring.len()];
        if a == b {
            continue;
        }
        let sa = topo
            .server(a)
            .ok_or_else(|| TopologyError::UnknownServer(a.clone()))?;
        let sb = topo
            .server(b)
            .ok_or_else(|| TopologyError::UnknownServer(b.clone()))?;
        *links.entry(format!("up:{}", sa.id)).or_insert(0) += 1;
        *links.entry(format!("down:{}", sb.id)).or_insert(0) += 1;
        if sa.rack != sb.rack {
            *links.entry(format!("up:{}", sa.rack)).or_insert(0) += 1;
            *links.entry(format!("down:{}", sb.rack)).or_insert(0) += 1;
        }
    }
    Ok(links)
}
