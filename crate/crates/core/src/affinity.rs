//! Bipartite job-link affinity graph: loop detection, the signed BFS
//! traversal that consolidates per-link time-shifts into one shift per job,
//! and verification of the resulting assignment.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AffinityError {
    #[error("affinity graph contains a loop; traversal refused")]
    LoopDetected,
    #[error("unknown vertex: {0}")]
    UnknownVertex(String),
    #[error("edge ({job}, {link}) already present")]
    DuplicateEdge { job: String, link: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobVertex {
    pub id: String,
    pub iter_time_ms: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkVertex {
    pub id: String,
    pub perimeter_ms: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffinityEdge {
    pub job: String,
    pub link: String,
    /// Per-link time-shift of the job, milliseconds.
    pub weight_ms: u32,
}

/// Bipartite graph between jobs that share links and links carrying more than
/// one job. Edge weights are per-link time-shifts from the rotation solver.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AffinityGraph {
    pub jobs: Vec<JobVertex>,
    pub links: Vec<LinkVertex>,
    pub edges: Vec<AffinityEdge>,
}

/// One consolidated time-shift per job, with the reference job of each
/// connected subgraph pinned to zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeShiftAssignment {
    pub shifts: BTreeMap<String, u32>,
    pub reference_jobs: Vec<String>,
}

/// A correctness violation: a job pair on a link whose relative shift differs
/// from the per-link solution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub link: String,
    pub job_a: String,
    pub job_b: String,
}

impl AffinityGraph {
    pub fn new() -> AffinityGraph {
        AffinityGraph::default()
    }

    pub fn add_job(&mut self, id: &str, iter_time_ms: u32) {
        debug_assert!(self.jobs.iter().all(|j| j.id != id));
        self.jobs.push(JobVertex {
            id: id.to_string(),
            iter_time_ms,
        });
    }

    pub fn add_link(&mut self, id: &str, perimeter_ms: u32) {
        debug_assert!(self.links.iter().all(|l| l.id != id));
        self.links.push(LinkVertex {
            id: id.to_string(),
            perimeter_ms,
        });
    }

    pub fn add_edge(&mut self, job: &str, link: &str, weight_ms: u32) -> Result<(), AffinityError> {
        if !self.jobs.iter().any(|j| j.id == job) {
            return Err(AffinityError::UnknownVertex(job.to_string()));
        }
        if !self.links.iter().any(|l| l.id == link) {
            return Err(AffinityError::UnknownVertex(link.to_string()));
        }
        if self.edges.iter().any(|e| e.job == job && e.link == link) {
            return Err(AffinityError::DuplicateEdge {
                job: job.to_string(),
                link: link.to_string(),
            });
        }
        self.edges.push(AffinityEdge {
            job: job.to_string(),
            link: link.to_string(),
            weight_ms,
        });
        Ok(())
    }

    pub fn set_weight(&mut self, job: &str, link: &str, weight_ms: u32) {
        for e in &mut self.edges {
            if e.job == job && e.link == link {
                e.weight_ms = weight_ms;
                return;
            }
        }
        panic!("set_weight on missing edge ({job}, {link})");
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    fn job_index(&self) -> BTreeMap<&str, usize> {
        self.jobs
            .iter()
            .enumerate()
            .map(|(i, j)| (j.id.as_str(), i))
            .collect()
    }

    fn link_index(&self) -> BTreeMap<&str, usize> {
        self.links
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id.as_str(), i))
            .collect()
    }

    /// Adjacency as (job index -> link indices) and (link index -> job indices).
    fn adjacency(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let jobs = self.job_index();
        let links = self.link_index();
        let mut job_adj = vec![Vec::new(); self.jobs.len()];
        let mut link_adj = vec![Vec::new(); self.links.len()];
        for e in &self.edges {
            let j = jobs[e.job.as_str()];
            let l = links[e.link.as_str()];
            job_adj[j].push(l);
            link_adj[l].push(j);
        }
        (job_adj, link_adj)
    }

    fn weight(&self, job: usize, link: usize) -> u32 {
        let jid = &self.jobs[job].id;
        let lid = &self.links[link].id;
        self.edges
            .iter()
            .find(|e| &e.job == jid && &e.link == lid)
            .map(|e| e.weight_ms)
            .expect("adjacency implies edge")
    }

    /// True iff any undirected cycle exists. Per connected component with
    /// n vertices, having >= n edges implies a cycle in an undirected graph.
    pub fn has_loop(&self) -> bool {
        let n = self.jobs.len() + self.links.len();
        let mut dsu = Dsu::new(n);
        for e in &self.edges {
            let j = self.job_index()[e.job.as_str()];
            let l = self.jobs.len() + self.link_index()[e.link.as_str()];
            if !dsu.union(j, l) {
                return true;
            }
        }
        false
    }

    /// Runs the signed BFS traversal over each connected subgraph.
    ///
    /// The reference job of a subgraph (the lowest job id) gets shift 0; a job
    /// k discovered from job j through link l gets
    /// `(t_j - w(j,l) + w(l,k)) mod iter_time_k` with Euclidean modulo.
    pub fn bfs_time_shifts(&self) -> Result<TimeShiftAssignment, AffinityError> {
        if self.has_loop() {
            return Err(AffinityError::LoopDetected);
        }
        let (job_adj, link_adj) = self.adjacency();
        let mut shifts: BTreeMap<String, u32> = BTreeMap::new();
        let mut reference_jobs = Vec::new();
        let mut visited = vec![false; self.jobs.len()];
        let mut t = vec![0i64; self.jobs.len()];

        // lowest job id first gives a deterministic reference per subgraph
        let mut order: Vec<usize> = (0..self.jobs.len()).collect();
        order.sort_by(|&a, &b| self.jobs[a].id.cmp(&self.jobs[b].id));

        for start in order {
            if visited[start] {
                continue;
            }
            visited[start] = true;
            t[start] = 0;
            reference_jobs.push(self.jobs[start].id.clone());
            let mut queue = VecDeque::new();
            queue.push_back(start);
            while let Some(j) = queue.pop_front() {
                for &l in &job_adj[j] {
                    for &k in &link_adj[l] {
                        if visited[k] {
                            continue;
                        }
                        visited[k] = true;
                        let w_jl = self.weight(j, l) as i64;
                        let w_lk = self.weight(k, l) as i64;
                        let iter_k = self.jobs[k].iter_time_ms as i64;
                        t[k] = (t[j] - w_jl + w_lk).rem_euclid(iter_k);
                        queue.push_back(k);
                    }
                }
            }
        }
        for (i, j) in self.jobs.iter().enumerate() {
            debug_assert!(visited[i] || job_adj[i].is_empty());
            shifts.insert(j.id.clone(), t[i] as u32);
        }
        Ok(TimeShiftAssignment {
            shifts,
            reference_jobs,
        })
    }

    /// Checks that every job pair sharing a link keeps the relative shift the
    /// per-link solution asked for.
    ///
    /// A job's shift only matters modulo its own iteration time, so the
    /// pairwise comparison is taken modulo gcd of the two iteration times:
    /// the relative phase of two periodic demands is defined exactly at that
    /// granularity. When both jobs iterate at the link's full perimeter this
    /// reduces to comparison modulo the perimeter.
    pub fn verify_assignment(&self, shifts: &BTreeMap<String, u32>) -> Vec<Violation> {
        let (_, link_adj) = self.adjacency();
        let mut violations = Vec::new();
        for (l, members) in link_adj.iter().enumerate() {
            for (ai, &a) in members.iter().enumerate() {
                for &b in &members[ai + 1..] {
                    let ta = shifts[&self.jobs[a].id] as i64;
                    let tb = shifts[&self.jobs[b].id] as i64;
                    let wa = self.weight(a, l) as i64;
                    let wb = self.weight(b, l) as i64;
                    let g = gcd(
                        self.jobs[a].iter_time_ms as i64,
                        self.jobs[b].iter_time_ms as i64,
                    );
                    if ((ta - tb) - (wa - wb)).rem_euclid(g) != 0 {
                        violations.push(Violation {
                            link: self.links[l].id.clone(),
                            job_a: self.jobs[a].id.clone(),
                            job_b: self.jobs[b].id.clone(),
                        });
                    }
                }
            }
        }
        violations
    }

    /// DOT-format dump for visual debugging.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph affinity {\n");
        for j in &self.jobs {
            out.push_str(&format!(
                "  \"{}\" [shape=ellipse, label=\"{}\\niter={}ms\"];\n",
                j.id, j.id, j.iter_time_ms
            ));
        }
        for l in &self.links {
            out.push_str(&format!(
                "  \"{}\" [shape=box, label=\"{}\\np={}ms\"];\n",
                l.id, l.id, l.perimeter_ms
            ));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "  \"{}\" -- \"{}\" [label=\"{}ms\"];\n",
                e.job, e.link, e.weight_ms
            ));
        }
        out.push_str("}\n");
        out
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    num_integer::Integer::gcd(&a, &b)
}

/// Builds the graph from routes: link vertices for links carrying >= 2 jobs,
/// job vertices for jobs sharing at least one such link. Weights start at 0.
///
/// Links whose traversing job set is identical are merged into one vertex
/// (named by the lexicographically smallest member); they constrain the same
/// job set identically, and keeping them separate would turn every shared
/// up/down link pair into a spurious loop.
pub fn build_graph(
    job_routes: &BTreeMap<String, BTreeSet<String>>,
    iter_times: &BTreeMap<String, u32>,
) -> AffinityGraph {
    let mut link_jobs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (job, links) in job_routes {
        for l in links {
            link_jobs.entry(l).or_default().insert(job);
        }
    }
    // group links by identical job set
    let mut groups: BTreeMap<Vec<&str>, Vec<&str>> = BTreeMap::new();
    for (link, jobs) in &link_jobs {
        if jobs.len() < 2 {
            continue;
        }
        groups
            .entry(jobs.iter().copied().collect())
            .or_default()
            .push(link);
    }
    let mut g = AffinityGraph::new();
    let mut shared_jobs: BTreeSet<&str> = BTreeSet::new();
    for jobs in groups.keys() {
        shared_jobs.extend(jobs.iter().copied());
    }
    for job in &shared_jobs {
        g.add_job(job, iter_times[*job]);
    }
    for (jobs, links) in &groups {
        let name = links.first().expect("group is non-empty");
        g.add_link(name, 0);
        for job in jobs {
            g.add_edge(job, name, 0).expect("vertices just added");
        }
    }
    g
}

/// Physical links represented by each merged link vertex, in the same
/// grouping order as [`build_graph`].
pub fn link_groups(
    job_routes: &BTreeMap<String, BTreeSet<String>>,
) -> BTreeMap<String, Vec<String>> {
    let mut link_jobs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (job, links) in job_routes {
        for l in links {
            link_jobs.entry(l).or_default().insert(job);
        }
    }
    let mut groups: BTreeMap<Vec<&str>, Vec<&str>> = BTreeMap::new();
    for (link, jobs) in &link_jobs {
        if jobs.len() < 2 {
            continue;
        }
        groups
            .entry(jobs.iter().copied().collect())
            .or_default()
            .push(link);
    }
    groups
        .into_values()
        .map(|links| {
            let name = links[0].to_string();
            (name, links.into_iter().map(|s| s.to_string()).collect())
        })
        .collect()
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Dsu {
        Dsu {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    /// Returns false when both are already in the same set (a cycle).
    fn union(&mut self, a: usize, b: usize) -> bool {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}
