//! Servers, topologies, the vEPC service chain, and seeded synthetic generation.
//!
//! Every random draw comes from a ChaCha8 stream keyed by `(base_seed, domain, index)`:
//! the 64-bit key is expanded with `SeedableRng::seed_from_u64` and the topology index
//! selects the ChaCha stream. Generation of index `i` therefore never depends on any
//! other index, and batches can be generated in any order or in parallel.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TOPOLOGY_DOMAIN: u64 = 0x746f_706f;
const SFC_DOMAIN: u64 = 0x7366_6321;

/// Derives an independent random stream for `(base_seed, domain, index)`.
pub fn stream(base_seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let key = base_seed ^ domain.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Core,
    Aggregation,
    Access,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerNode {
    pub id: usize,
    pub cpu_capacity: f64,
    pub mem_capacity: f64,
    pub tier: Tier,
    /// Physical host; replicas of one VNF type must not share it.
    pub host_group: usize,
}

/// Servers plus a symmetric inter-server delay matrix in microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyRecord", into = "TopologyRecord")]
pub struct Topology {
    servers: Vec<ServerNode>,
    delay: Vec<f64>,
    seed: u64,
    index: u64,
}

/// On-disk form of a [`Topology`]: the delay matrix is stored row-major.
#[derive(Serialize, Deserialize)]
struct TopologyRecord {
    index: u64,
    seed: u64,
    n_servers: usize,
    servers: Vec<ServerNode>,
    delay_us: Vec<f64>,
}

impl TryFrom<TopologyRecord> for Topology {
    type Error = Error;

    fn try_from(r: TopologyRecord) -> Result<Self> {
        if r.servers.len() != r.n_servers {
            return Err(Error::DimensionMismatch {
                what: "servers array",
                expected: r.n_servers,
                actual: r.servers.len(),
            });
        }
        Topology::new(r.servers, r.delay_us, r.seed, r.index)
    }
}

impl From<Topology> for TopologyRecord {
    fn from(t: Topology) -> Self {
        TopologyRecord {
            index: t.index,
            seed: t.seed,
            n_servers: t.servers.len(),
            servers: t.servers,
            delay_us: t.delay,
        }
    }
}

impl Topology {
    /// Builds a topology from a row-major delay matrix, checking every invariant.
    pub fn new(servers: Vec<ServerNode>, delay: Vec<f64>, seed: u64, index: u64) -> Result<Self> {
        let n = servers.len();
        if delay.len() != n * n {
            return Err(Error::DimensionMismatch {
                what: "delay matrix entries",
                expected: n * n,
                actual: delay.len(),
            });
        }
        for (pos, s) in servers.iter().enumerate() {
            if s.id != pos {
                return Err(Error::InvalidInput(format!(
                    "server at position {pos} has id {}",
                    s.id
                )));
            }
            if !(s.cpu_capacity >= 0.0 && s.mem_capacity >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "server {pos} has a negative capacity"
                )));
            }
        }
        for i in 0..n {
            if delay[i * n + i] != 0.0 {
                return Err(Error::InvalidInput(format!("delay[{i}][{i}] is not zero")));
            }
            for j in 0..n {
                let d = delay[i * n + j];
                if !(d >= 0.0 && d.is_finite()) || d != delay[j * n + i] {
                    return Err(Error::InvalidInput(format!(
                        "delay[{i}][{j}] = {d} breaks symmetry or non-negativity"
                    )));
                }
            }
        }
        Ok(Topology {
            servers,
            delay,
            seed,
            index,
        })
    }

    pub fn servers(&self) -> &[ServerNode] {
        &self.servers
    }

    pub fn n_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Row-major delay matrix.
    pub fn delay_matrix(&self) -> &[f64] {
        &self.delay
    }

    /// Delay between servers `a` and `b` in microseconds.
    ///
    /// Panics when either index is out of range.
    pub fn server_delay(&self, a: usize, b: usize) -> f64 {
        let n = self.servers.len();
        assert!(a < n && b < n, "server index out of range: ({a}, {b}) with {n} servers");
        self.delay[a * n + b]
    }
}

/// Free-function form of [`Topology::server_delay`].
pub fn server_delay(topo: &Topology, a: usize, b: usize) -> f64 {
    topo.server_delay(a, b)
}

/// The four vEPC functions in chain order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VnfType {
    Hss,
    Mme,
    Sgw,
    Pgw,
}

impl VnfType {
    pub const CHAIN: [VnfType; 4] = [VnfType::Hss, VnfType::Mme, VnfType::Sgw, VnfType::Pgw];

    /// Position in the chain, also used as the dependency level feature.
    pub fn position(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            VnfType::Hss => "HSS",
            VnfType::Mme => "MME",
            VnfType::Sgw => "SGW",
            VnfType::Pgw => "PGW",
        }
    }
}

impl fmt::Display for VnfType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReplicaCounts {
    pub hss: u32,
    pub mme: u32,
    pub sgw: u32,
    pub pgw: u32,
}

impl ReplicaCounts {
    pub const fn new(hss: u32, mme: u32, sgw: u32, pgw: u32) -> Self {
        ReplicaCounts { hss, mme, sgw, pgw }
    }

    pub fn get(&self, t: VnfType) -> u32 {
        match t {
            VnfType::Hss => self.hss,
            VnfType::Mme => self.mme,
            VnfType::Sgw => self.sgw,
            VnfType::Pgw => self.pgw,
        }
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.hss, self.mme, self.sgw, self.pgw]
    }

    pub fn total(&self) -> usize {
        self.as_array().iter().map(|&c| c as usize).sum()
    }

    /// Number of computational paths: one replica chosen per type.
    pub fn path_count(&self) -> usize {
        self.as_array().iter().map(|&c| c as usize).product()
    }

    pub fn validate(&self) -> Result<()> {
        for t in VnfType::CHAIN {
            if self.get(t) == 0 {
                return Err(Error::InvalidConfig(format!("replica count for {t} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VnfInstance {
    pub id: usize,
    pub vnf_type: VnfType,
    pub cpu_demand: f64,
    pub mem_demand: f64,
    pub replica_index: u32,
}

/// A vEPC service chain with its replicas and per-hop delay tolerances.
///
/// Instances are stored in chain order (all HSS replicas, then MME, SGW, PGW) and
/// instance ids equal their position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SfcRecord", into = "SfcRecord")]
pub struct SfcSpec {
    instances: Vec<VnfInstance>,
    replica_counts: ReplicaCounts,
    tolerance: [f64; 3],
    anti_location: bool,
    offsets: [usize; 5],
}

#[derive(Serialize, Deserialize)]
struct SfcRecord {
    replica_counts: ReplicaCounts,
    tolerance_us: [f64; 3],
    anti_location: bool,
    instances: Vec<VnfInstance>,
}

impl TryFrom<SfcRecord> for SfcSpec {
    type Error = Error;

    fn try_from(r: SfcRecord) -> Result<Self> {
        let sfc = SfcSpec::new(
            r.replica_counts,
            r.instances.iter().map(|i| (i.cpu_demand, i.mem_demand)).collect(),
            r.tolerance_us,
            r.anti_location,
        )?;
        if sfc.instances != r.instances {
            return Err(Error::InvalidInput(
                "instance list is not in chain order with sequential ids".into(),
            ));
        }
        Ok(sfc)
    }
}

impl From<SfcSpec> for SfcRecord {
    fn from(s: SfcSpec) -> Self {
        SfcRecord {
            replica_counts: s.replica_counts,
            tolerance_us: s.tolerance,
            anti_location: s.anti_location,
            instances: s.instances,
        }
    }
}

impl SfcSpec {
    /// `demands` holds `(cpu, mem)` per instance in chain order.
    pub fn new(
        replica_counts: ReplicaCounts,
        demands: Vec<(f64, f64)>,
        tolerance: [f64; 3],
        anti_location: bool,
    ) -> Result<Self> {
        replica_counts.validate()?;
        if demands.len() != replica_counts.total() {
            return Err(Error::DimensionMismatch {
                what: "instance demands",
                expected: replica_counts.total(),
                actual: demands.len(),
            });
        }
        if let Some(t) = tolerance.iter().find(|t| !(**t > 0.0)) {
            return Err(Error::InvalidInput(format!("tolerance {t} must be > 0")));
        }
        let mut offsets = [0usize; 5];
        let mut instances = Vec::with_capacity(demands.len());
        for t in VnfType::CHAIN {
            offsets[t.position() + 1] = offsets[t.position()] + replica_counts.get(t) as usize;
            for r in 0..replica_counts.get(t) {
                let id = instances.len();
                let (cpu, mem) = demands[id];
                if !(cpu >= 0.0 && mem >= 0.0) {
                    return Err(Error::InvalidInput(format!("instance {id} has a negative demand")));
                }
                instances.push(VnfInstance {
                    id,
                    vnf_type: t,
                    cpu_demand: cpu,
                    mem_demand: mem,
                    replica_index: r,
                });
            }
        }
        Ok(SfcSpec {
            instances,
            replica_counts,
            tolerance,
            anti_location,
            offsets,
        })
    }

    pub fn instances(&self) -> &[VnfInstance] {
        &self.instances
    }

    pub fn n_instances(&self) -> usize {
        self.instances.len()
    }

    pub fn replica_counts(&self) -> ReplicaCounts {
        self.replica_counts
    }

    /// Replicas of one type, in replica order.
    pub fn instances_of(&self, t: VnfType) -> &[VnfInstance] {
        &self.instances[self.offsets[t.position()]..self.offsets[t.position() + 1]]
    }

    /// Tolerances for HSS-MME, MME-SGW and SGW-PGW, in that order.
    pub fn tolerances(&self) -> [f64; 3] {
        self.tolerance
    }

    /// Maximum delay allowed between a `t` instance and its successor type.
    ///
    /// Panics for PGW, which has no successor.
    pub fn tolerance_after(&self, t: VnfType) -> f64 {
        self.tolerance[t.position()]
    }

    pub fn anti_location(&self) -> bool {
        self.anti_location
    }

    pub fn dependency_level(&self, t: VnfType) -> usize {
        t.position()
    }

    pub fn path_count(&self) -> usize {
        self.replica_counts.path_count()
    }
}

/// A non-negative sampling distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Uniform { lo: f64, hi: f64 },
    /// Normal truncated to `[0, inf)` by rejection.
    Normal { mean: f64, std: f64 },
}

impl Dist {
    pub const fn uniform(lo: f64, hi: f64) -> Self {
        Dist::Uniform { lo, hi }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Dist::Uniform { lo, hi } => lo >= 0.0 && hi >= lo && hi.is_finite(),
            Dist::Normal { mean, std } => std > 0.0 && std.is_finite() && mean.is_finite() && mean + 6.0 * std > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("distribution `{name}` has an invalid or negative support: {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::Uniform { lo, hi } => {
                if hi == lo {
                    lo
                } else {
                    rng.random_range(lo..hi)
                }
            }
            Dist::Normal { mean, std } => {
                let normal = Normal::new(mean, std).expect("validated normal parameters");
                // validate() guarantees noticeable mass above zero
                for _ in 0..1000 {
                    let x = normal.sample(rng);
                    if x >= 0.0 {
                        return x;
                    }
                }
                0.0
            }
        }
    }
}

/// Everything needed to generate a batch of topologies and service chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n_servers: usize,
    pub replica_counts: ReplicaCounts,
    pub server_cpu: Dist,
    pub server_mem: Dist,
    pub instance_cpu: Dist,
    pub instance_mem: Dist,
    pub intra_tier_delay: Dist,
    pub cross_tier_delay: Dist,
    pub tolerance: Dist,
    pub n_topologies: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_true")]
    pub anti_location: bool,
}

fn default_true() -> bool {
    true
}

impl Default for GenConfig {
    /// The 15-server, 6-instance setting with the shipped synthetic distributions.
    fn default() -> Self {
        GenConfig {
            n_servers: 15,
            replica_counts: ReplicaCounts::new(1, 2, 2, 1),
            server_cpu: Dist::uniform(8.0, 32.0),
            server_mem: Dist::uniform(16.0, 64.0),
            instance_cpu: Dist::uniform(1.0, 4.0),
            instance_mem: Dist::uniform(2.0, 8.0),
            intra_tier_delay: Dist::uniform(50.0, 200.0),
            cross_tier_delay: Dist::uniform(200.0, 1000.0),
            tolerance: Dist::uniform(800.0, 2000.0),
            n_topologies: 500,
            base_seed: 42,
            anti_location: true,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_servers < 3 {
            return Err(Error::InvalidConfig(format!(
                "n_servers = {} cannot form three tiers",
                self.n_servers
            )));
        }
        self.replica_counts.validate()?;
        if self.n_servers < self.replica_counts.total() {
            return Err(Error::InvalidConfig(format!(
                "n_servers = {} is smaller than the {} instances to place",
                self.n_servers,
                self.replica_counts.total()
            )));
        }
        for (name, d) in [
            ("server_cpu", &self.server_cpu),
            ("server_mem", &self.server_mem),
            ("instance_cpu", &self.instance_cpu),
            ("instance_mem", &self.instance_mem),
            ("intra_tier_delay", &self.intra_tier_delay),
            ("cross_tier_delay", &self.cross_tier_delay),
        ] {
            d.validate(name)?;
        }
        self.tolerance.validate("tolerance")?;
        if let Dist::Uniform { lo, .. } = self.tolerance {
            if lo <= 0.0 {
                return Err(Error::InvalidConfig("tolerance lower bound must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Tier of server `id` under the core:aggregation:access ~ 1:2:2 split by index.
pub fn tier_of(id: usize, n_servers: usize) -> Tier {
    let (core, agg) = tier_sizes(n_servers);
    if id < core {
        Tier::Core
    } else if id < core + agg {
        Tier::Aggregation
    } else {
        Tier::Access
    }
}

/// `(core, aggregation)` sizes; access gets the remainder.
fn tier_sizes(n: usize) -> (usize, usize) {
    ((n / 5).max(1), (2 * n / 5).max(1))
}

pub fn generate_topology(cfg: &GenConfig, index: u64) -> Result<Topology> {
    cfg.validate()?;
    let n = cfg.n_servers;
    let mut rng = stream(cfg.base_seed, TOPOLOGY_DOMAIN, index);

    let mut servers = Vec::with_capacity(n);
    for id in 0..n {
        let cpu = cfg.server_cpu.sample(&mut rng);
        let mem = cfg.server_mem.sample(&mut rng);
        servers.push(ServerNode {
            id,
            cpu_capacity: cpu,
            mem_capacity: mem,
            tier: tier_of(id, n),
            host_group: id,
        });
    }

    let mut delay = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = if servers[i].tier == servers[j].tier {
                &cfg.intra_tier_delay
            } else {
                &cfg.cross_tier_delay
            };
            let d = dist.sample(&mut rng);
            delay[i * n + j] = d;
            delay[j * n + i] = d;
        }
    }
    Topology::new(servers, delay, cfg.base_seed, index)
}

pub fn build_sfc(cfg: &GenConfig, index: u64) -> Result<SfcSpec> {
    cfg.validate()?;
    let mut rng = stream(cfg.base_seed, SFC_DOMAIN, index);
    let demands = (0..cfg.replica_counts.total())
        .map(|_| {
            let cpu = cfg.instance_cpu.sample(&mut rng);
            let mem = cfg.instance_mem.sample(&mut rng);
            (cpu, mem)
        })
        .collect();
    let tolerance = [
        cfg.tolerance.sample(&mut rng),
        cfg.tolerance.sample(&mut rng),
        cfg.tolerance.sample(&mut rng),
    ];
    SfcSpec::new(cfg.replica_counts, demands, tolerance, cfg.anti_location)
}
