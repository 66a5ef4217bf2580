//! Two-pod leaf-spine topology and equal-cost path enumeration.
//!
//! Nodes are stored densely; each node owns an ordered list of egress ports,
//! sorted by peer (tier first, then index) so that port indices are stable and
//! the ECMP `hash mod n` mapping is deterministic.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{secs_to_ns, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    Server,
    Tor,
    Aggregation,
    Core,
}

impl Tier {
    fn prefix(self) -> char {
        match self {
            Tier::Server => 'S',
            Tier::Tor => 'T',
            Tier::Aggregation => 'A',
            Tier::Core => 'C',
        }
    }
}

/// A node identified by its tier and ordinal within the tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub tier: Tier,
    pub index: u16,
}

impl NodeId {
    pub const fn new(tier: Tier, index: u16) -> Self {
        Self { tier, index }
    }

    pub const fn server(index: u16) -> Self {
        Self::new(Tier::Server, index)
    }

    pub fn is_server(&self) -> bool {
        self.tier == Tier::Server
    }
}

/// Prints the one-based label used in rack diagrams, e.g. `S1`, `T2`, `C1`.
impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.tier.prefix(), self.index + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub endpoints: (NodeId, NodeId),
    pub capacity_bps: f64,
}

/// Per-tier switch service times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceTimes {
    pub tor: f64,
    pub aggregation: f64,
    pub core: f64,
}

impl Default for ServiceTimes {
    fn default() -> Self {
        Self {
            tor: 3e-6,
            aggregation: 3e-6,
            core: 12e-6,
        }
    }
}

impl ServiceTimes {
    pub fn for_tier(&self, tier: Tier) -> f64 {
        match tier {
            Tier::Server => 0.0,
            Tier::Tor => self.tor,
            Tier::Aggregation => self.aggregation,
            Tier::Core => self.core,
        }
    }
}

/// How switch service and link transmission share an egress port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PortModel {
    /// Transmission of one packet overlaps service of the next; the port
    /// accepts a packet every `max(service, transmission)`.
    #[default]
    Pipelined,
    /// The port is busy for `service + transmission` per packet.
    Serial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyParams {
    pub pods: u16,
    pub tors_per_pod: u16,
    pub servers_per_tor: u16,
    pub aggs_per_pod: u16,
    pub cores: u16,
    pub link_rate_bps: f64,
    pub service_times: ServiceTimes,
    pub port_model: PortModel,
    /// Capacity of each class queue on a switch egress port, in bytes.
    pub queue_capacity_bytes: f64,
    pub packet_size_bytes: u32,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            pods: 2,
            tors_per_pod: 2,
            servers_per_tor: 2,
            aggs_per_pod: 2,
            cores: 2,
            link_rate_bps: 1e9,
            service_times: ServiceTimes::default(),
            port_model: PortModel::Pipelined,
            queue_capacity_bytes: 1.5e6,
            packet_size_bytes: 1500,
        }
    }
}

impl TopologyParams {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("topology.pods", self.pods),
            ("topology.tors_per_pod", self.tors_per_pod),
            ("topology.servers_per_tor", self.servers_per_tor),
            ("topology.aggs_per_pod", self.aggs_per_pod),
            ("topology.cores", self.cores),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.link_rate_bps > 0.0) {
            return Err(Error::config("topology.link_rate_bps", "must be positive"));
        }
        let st = &self.service_times;
        for (field, v) in [
            ("topology.service_times.tor", st.tor),
            ("topology.service_times.aggregation", st.aggregation),
            ("topology.service_times.core", st.core),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(field, "must be a finite non-negative number"));
            }
        }
        if self.packet_size_bytes == 0 {
            return Err(Error::config("topology.packet_size_bytes", "must be positive"));
        }
        if !(self.queue_capacity_bytes >= self.packet_size_bytes as f64) {
            return Err(Error::config(
                "topology.queue_capacity_bytes",
                "must hold at least one packet",
            ));
        }
        Ok(())
    }

    /// Per-class queue capacity in whole packets.
    pub fn queue_capacity_packets(&self) -> usize {
        (self.queue_capacity_bytes / self.packet_size_bytes as f64).floor() as usize
    }

    pub fn packet_bits(&self) -> f64 {
        self.packet_size_bytes as f64 * 8.0
    }

    pub fn transmission_time(&self) -> f64 {
        self.packet_bits() / self.link_rate_bps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Port {
    pub peer: usize,
    pub link: usize,
}

/// Immutable network graph.
#[derive(Debug, Clone)]
pub struct Topology {
    params: TopologyParams,
    nodes: Vec<NodeId>,
    ports: Vec<Vec<Port>>,
    links: Vec<Link>,
    servers: Vec<usize>,
    /// `next_hops[node][server ordinal]` = local egress ports on shortest paths.
    next_hops: Vec<Vec<Vec<u16>>>,
    /// Hop distance from every node to every server.
    dist: Vec<Vec<u32>>,
}

/// An ordered node sequence from a source server to a destination server.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    /// Number of forwarding (non-server) nodes.
    pub hop_count: u32,
    /// Single-packet delay through an empty network, in seconds.
    pub ideal_delay: f64,
    pub(crate) indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub src: NodeId,
    pub dst: NodeId,
    /// Sorted ascending by ideal delay, ties broken lexicographically.
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

pub fn build_reference_topology(params: TopologyParams) -> Result<Topology> {
    Topology::new(params)
}

impl Topology {
    pub fn new(params: TopologyParams) -> Result<Self> {
        params.validate()?;
        let mut nodes = Vec::new();
        let n_servers = params.pods * params.tors_per_pod * params.servers_per_tor;
        let n_tors = params.pods * params.tors_per_pod;
        let n_aggs = params.pods * params.aggs_per_pod;
        for (tier, count) in [
            (Tier::Server, n_servers),
            (Tier::Tor, n_tors),
            (Tier::Aggregation, n_aggs),
            (Tier::Core, params.cores),
        ] {
            nodes.extend((0..count).map(|i| NodeId::new(tier, i)));
        }
        let base = |tier: Tier| -> usize {
            match tier {
                Tier::Server => 0,
                Tier::Tor => n_servers as usize,
                Tier::Aggregation => (n_servers + n_tors) as usize,
                Tier::Core => (n_servers + n_tors + n_aggs) as usize,
            }
        };

        let mut edges = Vec::new();
        for s in 0..n_servers {
            edges.push((NodeId::server(s), NodeId::new(Tier::Tor, s / params.servers_per_tor)));
        }
        for t in 0..n_tors {
            let pod = t / params.tors_per_pod;
            for a in 0..params.aggs_per_pod {
                let agg = pod * params.aggs_per_pod + a;
                edges.push((NodeId::new(Tier::Tor, t), NodeId::new(Tier::Aggregation, agg)));
            }
        }
        for a in 0..n_aggs {
            for c in 0..params.cores {
                edges.push((NodeId::new(Tier::Aggregation, a), NodeId::new(Tier::Core, c)));
            }
        }

        let mut ports = vec![Vec::new(); nodes.len()];
        let mut links = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            let (ia, ib) = (base(a.tier) + a.index as usize, base(b.tier) + b.index as usize);
            let link = links.len();
            links.push(Link {
                endpoints: (a, b),
                capacity_bps: params.link_rate_bps,
            });
            ports[ia].push(Port { peer: ib, link });
            ports[ib].push(Port { peer: ia, link });
        }
        for p in &mut ports {
            p.sort_by_key(|port| nodes[port.peer]);
        }

        let servers: Vec<usize> = (0..n_servers as usize).collect();
        let mut topo = Self {
            params,
            nodes,
            ports,
            links,
            servers,
            next_hops: Vec::new(),
            dist: Vec::new(),
        };
        topo.compute_routes();
        Ok(topo)
    }

    fn compute_routes(&mut self) {
        let n = self.nodes.len();
        let mut dist = vec![vec![u32::MAX; self.servers.len()]; n];
        for (si, &s) in self.servers.iter().enumerate() {
            let mut queue = VecDeque::from([s]);
            dist[s][si] = 0;
            while let Some(v) = queue.pop_front() {
                // servers never transit traffic
                if v != s && self.nodes[v].is_server() {
                    continue;
                }
                for port in &self.ports[v] {
                    if dist[port.peer][si] == u32::MAX {
                        dist[port.peer][si] = dist[v][si] + 1;
                        queue.push_back(port.peer);
                    }
                }
            }
        }
        let mut next_hops = vec![vec![Vec::new(); self.servers.len()]; n];
        for v in 0..n {
            for (si, &s) in self.servers.iter().enumerate() {
                if v == s || dist[v][si] == u32::MAX {
                    continue;
                }
                next_hops[v][si] = self.ports[v]
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| {
                        dist[p.peer][si] + 1 == dist[v][si] && (p.peer == s || !self.nodes[p.peer].is_server())
                    })
                    .map(|(i, _)| i as u16)
                    .collect();
            }
        }
        self.dist = dist;
        self.next_hops = next_hops;
    }

    pub fn params(&self) -> &TopologyParams {
        &self.params
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> NodeId {
        self.nodes[idx]
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn ports(&self, node: usize) -> &[Port] {
        &self.ports[node]
    }

    pub fn server_count(&self) -> usize {
        self.servers.len()
    }

    pub fn servers(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.servers.iter().map(|&i| self.nodes[i])
    }

    /// Dense index of a node, if it exists in this topology.
    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| *n == id)
    }

    /// Servers occupy the first dense indices, so a server's ordinal is its index.
    pub fn server_index(&self, id: NodeId) -> Option<usize> {
        (id.is_server() && (id.index as usize) < self.servers.len()).then_some(id.index as usize)
    }

    pub fn tor_of(&self, server: usize) -> usize {
        self.ports[server][0].peer
    }

    pub fn pod_of_server(&self, server: usize) -> usize {
        server / (self.params.servers_per_tor as usize * self.params.tors_per_pod as usize)
    }

    /// Local egress ports of `node` on shortest paths toward `dst_server`.
    pub fn next_hops(&self, node: usize, dst_server: usize) -> &[u16] {
        &self.next_hops[node][dst_server]
    }

    pub fn distance(&self, node: usize, dst_server: usize) -> u32 {
        self.dist[node][dst_server]
    }

    pub fn service_time(&self, node: usize) -> f64 {
        self.params.service_times.for_tier(self.nodes[node].tier)
    }

    pub fn link_transmission_time(&self, link: usize) -> f64 {
        self.params.packet_bits() / self.links[link].capacity_bps
    }

    /// Time an egress port of `node` is busy with one packet on `port`.
    pub fn port_occupancy(&self, node: usize, port: usize) -> f64 {
        let (s, tx) = (
            self.service_time(node),
            self.link_transmission_time(self.ports[node][port].link),
        );
        match self.params.port_model {
            PortModel::Pipelined => s.max(tx),
            PortModel::Serial => s + tx,
        }
    }

    /// Delay from service start at `node` to arrival at the far end of `port`.
    pub fn port_latency(&self, node: usize, port: usize) -> f64 {
        self.service_time(node) + self.link_transmission_time(self.ports[node][port].link)
    }

    pub fn port_latency_ns(&self, node: usize, port: usize) -> SimTime {
        secs_to_ns(self.port_latency(node, port))
    }

    pub fn port_occupancy_ns(&self, node: usize, port: usize) -> SimTime {
        secs_to_ns(self.port_occupancy(node, port))
    }

    fn check_server(&self, id: NodeId) -> Result<usize> {
        self.server_index(id)
            .ok_or_else(|| Error::InvalidArgument(format!("{id} is not a server of this topology")))
    }

    /// All equal-cost shortest paths from `s` to `d`.
    pub fn enumerate_paths(&self, s: NodeId, d: NodeId) -> Result<PathSet> {
        let si = self.check_server(s)?;
        let di = self.check_server(d)?;
        if si == di {
            return Err(Error::InvalidArgument(format!("source and destination are both {s}")));
        }
        let mut out = Vec::new();
        let mut stack = vec![si];
        self.walk(si, di, &mut stack, &mut out);
        let mut paths: Vec<Path> = out
            .into_iter()
            .map(|indices| {
                let nodes: Vec<NodeId> = indices.iter().map(|&i| self.nodes[i]).collect();
                let mut p = Path {
                    hop_count: (indices.len() - 2) as u32,
                    nodes,
                    ideal_delay: 0.0,
                    indices,
                };
                p.ideal_delay = self.ideal_path_delay(&p, self.params.packet_bits());
                p
            })
            .collect();
        paths.sort_by(|a, b| {
            a.ideal_delay
                .total_cmp(&b.ideal_delay)
                .then_with(|| a.nodes.cmp(&b.nodes))
        });
        Ok(PathSet { src: s, dst: d, paths })
    }

    fn walk(&self, v: usize, d: usize, stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if v == d {
            out.push(stack.clone());
            return;
        }
        for &p in self.next_hops(v, d) {
            let peer = self.ports[v][p as usize].peer;
            stack.push(peer);
            self.walk(peer, d, stack, out);
            stack.pop();
        }
    }

    /// Local port index at `from` whose peer is `to`.
    pub fn port_towards(&self, from: usize, to: usize) -> Option<usize> {
        self.ports[from].iter().position(|p| p.peer == to)
    }

    /// Sum of per-hop transmission times plus each forwarding node's service
    /// time. No queuing term.
    pub fn ideal_path_delay(&self, path: &Path, packet_bits: f64) -> f64 {
        path.indices
            .windows(2)
            .map(|w| {
                let port = self.port_towards(w[0], w[1]).expect("path nodes are adjacent");
                let link = &self.links[self.ports[w[0]][port].link];
                packet_bits / link.capacity_bps + self.service_time(w[0])
            })
            .sum()
    }

    /// Per-stage (occupancy, width) along a set of equal-length paths: the
    /// minimum per-packet busy time of the egress ports at that stage and the
    /// number of distinct ports the set uses there.
    fn stages(&self, paths: &[&Path]) -> Vec<(f64, usize)> {
        let hops = paths[0].indices.len() - 1;
        (0..hops)
            .map(|k| {
                let mut used: Vec<(usize, usize)> = Vec::new();
                let mut occ = f64::INFINITY;
                for p in paths {
                    let (a, b) = (p.indices[k], p.indices[k + 1]);
                    let port = self.port_towards(a, b).expect("adjacent");
                    occ = occ.min(self.port_occupancy(a, port));
                    if !used.contains(&(a, port)) {
                        used.push((a, port));
                    }
                }
                (occ, used.len())
            })
            .collect()
    }

    /// Completion time of an `packets`-packet flow in an otherwise empty
    /// network when its packets may use any path of `paths`.
    ///
    /// For a single path this is the exact store-and-forward pipeline time:
    /// the first packet's delay plus `packets - 1` times the slowest stage.
    /// For several paths it is the pigeonhole lower bound: some port at each
    /// stage carries at least `ceil(packets / width)` packets.
    pub fn empty_network_fct(&self, paths: &[&Path], packets: u32) -> f64 {
        assert!(!paths.is_empty() && packets > 0);
        let first = paths.iter().map(|p| p.ideal_delay).fold(f64::INFINITY, f64::min);
        let extra = self
            .stages(paths)
            .into_iter()
            .map(|(occ, width)| (packets as usize).div_ceil(width).saturating_sub(1) as f64 * occ)
            .fold(0.0, f64::max);
        first + extra
    }

    /// Builds a `Path` from dense node indices.
    pub(crate) fn path_from_indices(&self, indices: Vec<usize>) -> Path {
        let nodes = indices.iter().map(|&i| self.nodes[i]).collect();
        let mut p = Path {
            hop_count: (indices.len() - 2) as u32,
            nodes,
            ideal_delay: 0.0,
            indices,
        };
        p.ideal_delay = self.ideal_path_delay(&p, self.params.packet_bits());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo() -> Topology {
        Topology::new(TopologyParams::default()).unwrap()
    }

    #[test]
    fn reference_shape() {
        let t = topo();
        assert_eq!(t.node_count(), 18);
        let count = |tier| t.nodes().iter().filter(|n| n.tier == tier).count();
        assert_eq!(count(Tier::Server), 8);
        assert_eq!(count(Tier::Tor), 4);
        assert_eq!(count(Tier::Aggregation), 4);
        assert_eq!(count(Tier::Core), 2);
        // ToR <-> aggregation links stay inside the pod
        for l in t.links() {
            if let (
                NodeId {
                    tier: Tier::Tor,
                    index: tor,
                },
                NodeId {
                    tier: Tier::Aggregation,
                    index: agg,
                },
            ) = l.endpoints
            {
                assert_eq!(tor / 2, agg / 2);
            }
        }
        assert_eq!(t.links().len(), 8 + 8 + 8);
    }

    #[test]
    fn queue_and_transmission_arithmetic() {
        let p = TopologyParams::default();
        assert_eq!(p.queue_capacity_packets(), 1000);
        assert!((p.transmission_time() - 12e-6).abs() < 1e-15);
    }

    #[test]
    fn path_counts() {
        let t = topo();
        let s = NodeId::server;
        assert_eq!(t.enumerate_paths(s(0), s(4)).unwrap().len(), 8);
        assert_eq!(t.enumerate_paths(s(0), s(2)).unwrap().len(), 2);
        assert_eq!(t.enumerate_paths(s(0), s(1)).unwrap().len(), 1);
    }

    #[test]
    fn enumerate_rejects_bad_endpoints() {
        let t = topo();
        assert!(t.enumerate_paths(NodeId::new(Tier::Tor, 0), NodeId::server(1)).is_err());
        assert!(t.enumerate_paths(NodeId::server(1), NodeId::server(1)).is_err());
        assert!(t.enumerate_paths(NodeId::server(0), NodeId::server(99)).is_err());
    }

    #[test]
    fn same_tor_delay() {
        let t = topo();
        let ps = t.enumerate_paths(NodeId::server(0), NodeId::server(1)).unwrap();
        let d = ps.paths[0].ideal_delay;
        assert!((d - 27e-6).abs() < 1e-12, "{d}");
    }

    #[test]
    fn transmission_only_delay() {
        let params = TopologyParams {
            service_times: ServiceTimes {
                tor: 0.0,
                aggregation: 0.0,
                core: 0.0,
            },
            ..Default::default()
        };
        let t = Topology::new(params).unwrap();
        for (dst, hops) in [(1u16, 1u32), (2, 3), (5, 5)] {
            let ps = t.enumerate_paths(NodeId::server(0), NodeId::server(dst)).unwrap();
            for p in &ps.paths {
                assert_eq!(p.hop_count, hops);
                let want = (hops + 1) as f64 * 12e-6;
                assert!((p.ideal_delay - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn inter_pod_slower_than_same_tor() {
        let t = topo();
        let far = t.enumerate_paths(NodeId::server(0), NodeId::server(7)).unwrap();
        let near = t.enumerate_paths(NodeId::server(0), NodeId::server(1)).unwrap();
        assert!(far.paths[0].ideal_delay > near.paths[0].ideal_delay);
        assert_eq!(far.paths[0].hop_count, 5);
    }

    #[test]
    fn empty_network_pipeline() {
        let t = topo();
        let ps = t.enumerate_paths(NodeId::server(0), NodeId::server(4)).unwrap();
        let p = &ps.paths[0];
        // 12 + 15 + 15 + 24 + 15 + 15 us for the first packet
        assert!((p.ideal_delay - 96e-6).abs() < 1e-12);
        let one = t.empty_network_fct(&[p], 1);
        assert!((one - p.ideal_delay).abs() < 1e-15);
        // pipelined ports all accept a packet every 12 us
        let ten = t.empty_network_fct(&[p], 10);
        assert!((ten - (96e-6 + 9.0 * 12e-6)).abs() < 1e-12);
        let all: Vec<&Path> = ps.paths.iter().collect();
        assert!((t.empty_network_fct(&all, 10) - ten).abs() < 1e-12);
    }

    #[test]
    fn empty_network_pipeline_serial_ports() {
        let t = Topology::new(TopologyParams {
            port_model: PortModel::Serial,
            ..TopologyParams::default()
        })
        .unwrap();
        let ps = t.enumerate_paths(NodeId::server(0), NodeId::server(4)).unwrap();
        let p = &ps.paths[0];
        assert!((p.ideal_delay - 96e-6).abs() < 1e-12);
        // core port (24 us) is the bottleneck on a single path
        let ten = t.empty_network_fct(&[p], 10);
        assert!((ten - (96e-6 + 9.0 * 24e-6)).abs() < 1e-12);
        // spraying over all eight paths leaves the last ToR port (15 us) as bottleneck
        let all: Vec<&Path> = ps.paths.iter().collect();
        let spray = t.empty_network_fct(&all, 10);
        assert!((spray - (96e-6 + 9.0 * 15e-6)).abs() < 1e-12);
    }
}
