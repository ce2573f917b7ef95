//! Teacher placement, placement validation, and delay accounting over computational paths.
//!
//! The teacher is a greedy chain-order placer with bounded backtracking. Instances are
//! taken in chain order (HSS, MME, SGW, PGW; replicas in index order). Each instance goes
//! to the feasible server with the smallest summed delay to its already-placed upstream
//! neighbours. Ties go to the server closest to the already-placed replicas of the same
//! type (they share every downstream neighbour), then to the lower server id. A dead end backtracks to the previous instance's
//! next candidate. The search is restarted once per possible server of the first
//! instance, each restart's result is polished by steepest-descent moves and swaps, and
//! the restart with the smallest total dependent-pair delay is kept.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net_model::{SfcSpec, Topology, VnfInstance, VnfType};

/// Server assignment per instance; `assignment[id]` is the server of instance `id`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub assignment: Vec<usize>,
}

impl Placement {
    pub fn new(assignment: Vec<usize>) -> Self {
        Placement { assignment }
    }

    pub fn server_of(&self, instance: usize) -> usize {
        self.assignment[instance]
    }
}

/// One replica per VNF type, in chain order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComputationalPath {
    pub instances: [usize; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Capacity,
    DelayTolerance,
    AntiLocation,
    Dependency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub instances: Vec<usize>,
    pub servers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        ValidationReport {
            valid: violations.is_empty(),
            violations,
        }
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

/// All dependent instance pairs: every replica of a type with every replica of the next.
pub fn dependent_pairs(sfc: &SfcSpec) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for w in VnfType::CHAIN.windows(2) {
        for a in sfc.instances_of(w[0]) {
            for b in sfc.instances_of(w[1]) {
                pairs.push((a.id, b.id));
            }
        }
    }
    pairs
}

pub fn enumerate_cps(sfc: &SfcSpec) -> Vec<ComputationalPath> {
    let hss = sfc.instances_of(VnfType::Hss);
    let mme = sfc.instances_of(VnfType::Mme);
    let sgw = sfc.instances_of(VnfType::Sgw);
    let pgw = sfc.instances_of(VnfType::Pgw);
    let mut paths = Vec::with_capacity(sfc.path_count());
    for a in hss {
        for b in mme {
            for c in sgw {
                for d in pgw {
                    paths.push(ComputationalPath {
                        instances: [a.id, b.id, c.id, d.id],
                    });
                }
            }
        }
    }
    paths
}

/// Sum of the 3 hop delays along `cp`.
pub fn cp_delay(topo: &Topology, p: &Placement, cp: &ComputationalPath) -> f64 {
    cp.instances
        .windows(2)
        .map(|w| topo.server_delay(p.server_of(w[0]), p.server_of(w[1])))
        .sum()
}

pub fn cp_delays(topo: &Topology, p: &Placement, sfc: &SfcSpec) -> Vec<f64> {
    enumerate_cps(sfc).iter().map(|cp| cp_delay(topo, p, cp)).collect()
}

/// Mean per-path delay over every computational path of the chain.
pub fn avg_cp_delay(topo: &Topology, p: &Placement, sfc: &SfcSpec) -> f64 {
    let delays = cp_delays(topo, p, sfc);
    delays.iter().sum::<f64>() / delays.len() as f64
}

/// Delay of each dependent pair, in [`dependent_pairs`] order.
pub fn pair_delays(topo: &Topology, p: &Placement, sfc: &SfcSpec) -> Vec<f64> {
    dependent_pairs(sfc)
        .into_iter()
        .map(|(a, b)| topo.server_delay(p.server_of(a), p.server_of(b)))
        .collect()
}

/// The teacher's minimisation target.
pub fn total_pair_delay(topo: &Topology, p: &Placement, sfc: &SfcSpec) -> f64 {
    pair_delays(topo, p, sfc).iter().sum()
}

/// Checks capacity, delay tolerance, anti-location and dependency, reporting every violation.
pub fn validate_placement(topo: &Topology, sfc: &SfcSpec, p: &Placement) -> ValidationReport {
    let n_servers = topo.n_servers();
    let mut violations = Vec::new();

    let placed = |id: usize| p.assignment.get(id).is_some_and(|&s| s < n_servers);
    let unplaced: Vec<usize> = (0..sfc.n_instances()).filter(|&id| !placed(id)).collect();
    if !unplaced.is_empty() || p.assignment.len() != sfc.n_instances() {
        violations.push(Violation {
            kind: ViolationKind::Dependency,
            instances: unplaced.clone(),
            servers: Vec::new(),
        });
    }

    // capacity
    let mut cpu = vec![0.0; n_servers];
    let mut mem = vec![0.0; n_servers];
    for inst in sfc.instances().iter().filter(|i| placed(i.id)) {
        let s = p.server_of(inst.id);
        cpu[s] += inst.cpu_demand;
        mem[s] += inst.mem_demand;
    }
    for server in topo.servers() {
        let s = server.id;
        if cpu[s] > server.cpu_capacity || mem[s] > server.mem_capacity {
            let instances = sfc
                .instances()
                .iter()
                .filter(|i| placed(i.id) && p.server_of(i.id) == s)
                .map(|i| i.id)
                .collect();
            violations.push(Violation {
                kind: ViolationKind::Capacity,
                instances,
                servers: vec![s],
            });
        }
    }

    // delay tolerance
    let hop_ok = |a: usize, b: usize, t: VnfType| {
        topo.server_delay(p.server_of(a), p.server_of(b)) <= sfc.tolerance_after(t)
    };
    for (a, b) in dependent_pairs(sfc) {
        if !(placed(a) && placed(b)) {
            continue;
        }
        if !hop_ok(a, b, sfc.instances()[a].vnf_type) {
            violations.push(Violation {
                kind: ViolationKind::DelayTolerance,
                instances: vec![a, b],
                servers: vec![p.server_of(a), p.server_of(b)],
            });
        }
    }

    // anti-location
    if sfc.anti_location() {
        for t in VnfType::CHAIN {
            let reps = sfc.instances_of(t);
            for (i, a) in reps.iter().enumerate() {
                for b in &reps[i + 1..] {
                    if !(placed(a.id) && placed(b.id)) {
                        continue;
                    }
                    let (sa, sb) = (p.server_of(a.id), p.server_of(b.id));
                    if topo.servers()[sa].host_group == topo.servers()[sb].host_group {
                        violations.push(Violation {
                            kind: ViolationKind::AntiLocation,
                            instances: vec![a.id, b.id],
                            servers: vec![sa, sb],
                        });
                    }
                }
            }
        }
    }

    // dependency: every computational path must be executable end to end
    for cp in enumerate_cps(sfc) {
        let ids = cp.instances;
        let executable = ids.iter().all(|&i| placed(i))
            && ids
                .windows(2)
                .all(|w| hop_ok(w[0], w[1], sfc.instances()[w[0]].vnf_type));
        if !executable {
            violations.push(Violation {
                kind: ViolationKind::Dependency,
                instances: ids.to_vec(),
                servers: ids.iter().filter(|&&i| placed(i)).map(|&i| p.server_of(i)).collect(),
            });
        }
    }

    ValidationReport::from_violations(violations)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherConfig {
    /// Search nodes allowed per restart before that restart is abandoned.
    pub backtrack_budget: usize,
    /// Polish each greedy result with single moves and pairwise swaps.
    pub local_search: bool,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            backtrack_budget: 1000,
            local_search: true,
        }
    }
}

pub fn place_teacher(topo: &Topology, sfc: &SfcSpec) -> Result<Placement> {
    place_teacher_with(topo, sfc, &TeacherConfig::default())
}

pub fn place_teacher_with(topo: &Topology, sfc: &SfcSpec, cfg: &TeacherConfig) -> Result<Placement> {
    let mut search = Search::new(topo, sfc);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut explored = 0;
    for start in 0..topo.n_servers() {
        search.reset(cfg.backtrack_budget);
        let found = search.descend(0, Some(start));
        explored += search.nodes;
        if !found {
            continue;
        }
        if cfg.local_search {
            search.improve();
        }
        let cost = search.cost();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, search.assignment.clone()));
        }
    }
    match best {
        Some((_, assignment)) => Ok(Placement::new(assignment)),
        None => Err(Error::Infeasible { explored }),
    }
}

/// Search state for one greedy restart.
///
/// Server loads are always re-summed in instance-id order so that feasibility decisions
/// agree bit for bit with [`validate_placement`].
struct Search<'a> {
    topo: &'a Topology,
    sfc: &'a SfcSpec,
    assignment: Vec<usize>,
    nodes: usize,
    budget: usize,
}

impl<'a> Search<'a> {
    fn new(topo: &'a Topology, sfc: &'a SfcSpec) -> Self {
        Search {
            topo,
            sfc,
            assignment: Vec::with_capacity(sfc.n_instances()),
            nodes: 0,
            budget: 0,
        }
    }

    fn reset(&mut self, budget: usize) {
        self.assignment.clear();
        self.nodes = 0;
        self.budget = budget;
    }

    fn neighbours(&self, id: usize) -> impl Iterator<Item = &'a VnfInstance> {
        let p = self.sfc.instances()[id].vnf_type.position();
        let up = if p > 0 { self.sfc.instances_of(VnfType::CHAIN[p - 1]) } else { &[] };
        let down = if p < 3 { self.sfc.instances_of(VnfType::CHAIN[p + 1]) } else { &[] };
        up.iter().chain(down)
    }

    /// Whether `server` can hold its current occupants with `moved` pulled out and `added` put in.
    fn fits(&self, server: usize, moved: &[usize], added: &[usize]) -> bool {
        let (mut cpu, mut mem) = (0.0, 0.0);
        for inst in self.sfc.instances() {
            let here = match self.assignment.get(inst.id) {
                Some(&s) => s == server && !moved.contains(&inst.id),
                None => false,
            };
            if here || added.contains(&inst.id) {
                cpu += inst.cpu_demand;
                mem += inst.mem_demand;
            }
        }
        let node = &self.topo.servers()[server];
        cpu <= node.cpu_capacity && mem <= node.mem_capacity
    }

    /// Delay cost of `id` sitting on `server` against placed neighbours, or `None` when a
    /// tolerance or anti-location rule fails. `at` overrides neighbour positions.
    fn local_cost(&self, id: usize, server: usize, at: &dyn Fn(usize) -> Option<usize>) -> Option<f64> {
        let inst = &self.sfc.instances()[id];
        if self.sfc.anti_location() {
            let group = self.topo.servers()[server].host_group;
            let clash = self.sfc.instances_of(inst.vnf_type).iter().any(|o| {
                o.id != id && at(o.id).is_some_and(|s| self.topo.servers()[s].host_group == group)
            });
            if clash {
                return None;
            }
        }
        let mut cost = 0.0;
        for n in self.neighbours(id) {
            let Some(ns) = at(n.id) else { continue };
            let d = self.topo.server_delay(server, ns);
            let upstream = if n.vnf_type < inst.vnf_type { n.vnf_type } else { inst.vnf_type };
            if d > self.sfc.tolerance_after(upstream) {
                return None;
            }
            cost += d;
        }
        Some(cost)
    }

    fn descend(&mut self, id: usize, forced: Option<usize>) -> bool {
        if id == self.sfc.n_instances() {
            return true;
        }
        let servers: Vec<usize> = match forced {
            Some(s) => vec![s],
            None => (0..self.topo.n_servers()).collect(),
        };
        let at = |i: usize| self.assignment.get(i).copied();
        let vnf_type = self.sfc.instances()[id].vnf_type;
        let sibling_delay = |s: usize| -> f64 {
            self.sfc
                .instances_of(vnf_type)
                .iter()
                .filter_map(|o| at(o.id))
                .map(|os| self.topo.server_delay(s, os))
                .sum()
        };
        let mut candidates: Vec<(f64, f64, usize)> = servers
            .into_iter()
            .filter(|&s| self.fits(s, &[], &[id]))
            .filter_map(|s| self.local_cost(id, s, &at).map(|c| (c, sibling_delay(s), s)))
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (_, _, server) in candidates {
            if self.nodes >= self.budget {
                return false;
            }
            self.nodes += 1;
            self.assignment.push(server);
            if self.descend(id + 1, None) {
                return true;
            }
            self.assignment.pop();
        }
        false
    }

    /// Steepest-descent over single-instance moves and pairwise swaps, keeping feasibility.
    fn improve(&mut self) {
        let v = self.sfc.n_instances();
        let n = self.topo.n_servers();
        loop {
            let mut best: Option<(f64, usize, usize, Option<usize>)> = None;
            let mut consider = |gain: f64, a: usize, b: usize, swap: Option<usize>| {
                if gain > 1e-9 && best.is_none_or(|(g, ..)| gain > g) {
                    best = Some((gain, a, b, swap));
                }
            };
            for i in 0..v {
                let cur = self.assignment[i];
                let at = |k: usize| Some(self.assignment[k]);
                let Some(before) = self.local_cost(i, cur, &at) else { continue };
                for s in (0..n).filter(|&s| s != cur) {
                    if let Some(after) = self.local_cost(i, s, &at) {
                        if self.fits(s, &[], &[i]) {
                            consider(before - after, i, s, None);
                        }
                    }
                }
            }
            for i in 0..v {
                for j in (i + 1)..v {
                    let (si, sj) = (self.assignment[i], self.assignment[j]);
                    if si == sj {
                        continue;
                    }
                    let swapped = |k: usize| {
                        Some(if k == i { sj } else if k == j { si } else { self.assignment[k] })
                    };
                    let current = |k: usize| Some(self.assignment[k]);
                    let (Some(bi), Some(bj)) = (self.local_cost(i, si, &current), self.local_cost(j, sj, &current)) else {
                        continue;
                    };
                    let (Some(ai), Some(aj)) = (self.local_cost(i, sj, &swapped), self.local_cost(j, si, &swapped)) else {
                        continue;
                    };
                    // a dependent i-j pair is counted twice on both sides, so it cancels
                    if self.fits(sj, &[j], &[i]) && self.fits(si, &[i], &[j]) {
                        consider((bi + bj) - (ai + aj), i, sj, Some(j));
                    }
                }
            }
            let Some((_, i, s, swap)) = best else { return };
            if let Some(j) = swap {
                self.assignment[j] = self.assignment[i];
            }
            self.assignment[i] = s;
        }
    }

    fn cost(&self) -> f64 {
        total_pair_delay(self.topo, &Placement::new(self.assignment.clone()), self.sfc)
    }
}

/// One persisted placement row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub topology_index: u64,
    pub assignment: Vec<usize>,
    pub valid: bool,
    pub cp_delays_us: Vec<f64>,
}

impl PlacementRecord {
    pub fn new(topo: &Topology, sfc: &SfcSpec, p: &Placement) -> Self {
        let valid = validate_placement(topo, sfc, p).valid;
        PlacementRecord {
            topology_index: topo.index(),
            assignment: p.assignment.clone(),
            valid,
            cp_delays_us: if valid { cp_delays(topo, p, sfc) } else { Vec::new() },
        }
    }
}
