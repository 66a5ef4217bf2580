//! Packet-level discrete-event simulation.
//!
//! Every switch egress port is a deterministic server fed by a short and a
//! long queue with tail drop. A packet reaches the next node one service time
//! plus one link transmission time after its service starts; how long the
//! port stays busy follows the topology's port model. Servers inject through
//! an unbounded FIFO at line rate. A dropped packet is re-injected at the back
//! of its source's FIFO one RTT after the drop. Propagation delay is zero.

mod queue;
pub mod single_port;
mod timeline;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control_plane::{
    activate_rps_at_tor, on_packet_at_tor, Advertisement, ControlParams, Controller, DetectionRecord, SampledPacket,
    Sampler, TorSprayState,
};
use crate::error::{Error, Result};
use crate::forwarding::{ecmp_select, rps_select, server_mac, switch_seed, Action, MacAddr, PacketHeader, RuleTable};
use crate::time::{ns_to_secs, secs_to_ns, SimTime};
use crate::topology::{NodeId, Path, PathSet, Tier, Topology};
use crate::traffic::{FlowClass, FlowSpec, Workload};

pub use queue::{ClassCounters, Packet, PortQueues, QueueSharing, Scheduling};
pub use timeline::Timeline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ecmp,
    Rps,
    #[serde(rename = "diffflow")]
    DiffFlow,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Ecmp, Scheme::Rps, Scheme::DiffFlow];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Ecmp => "ecmp",
            Scheme::Rps => "rps",
            Scheme::DiffFlow => "diffflow",
        }
    }

    /// Whether flows of `class` are sprayed (rather than pinned) under this scheme.
    pub fn sprays(self, class: FlowClass) -> bool {
        match self {
            Scheme::Ecmp => false,
            Scheme::Rps => true,
            Scheme::DiffFlow => class == FlowClass::Long,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ecmp" => Ok(Scheme::Ecmp),
            "rps" => Ok(Scheme::Rps),
            "diffflow" => Ok(Scheme::DiffFlow),
            other => Err(Error::InvalidArgument(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HashSeeding {
    /// Each switch hashes with its own seed derived from its id.
    #[default]
    PerSwitch,
    /// All switches share one seed.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineParams {
    pub scheduling: Scheduling,
    pub queue_sharing: QueueSharing,
    pub hash_seeding: HashSeeding,
    /// Per-packet retransmission limit; exceeding it aborts the flow.
    pub retransmit_cap: u16,
    /// Stop the run at this simulated time (seconds).
    pub max_sim_time: Option<f64>,
    pub max_events: Option<u64>,
    /// Keep the full executed-event list in the result.
    pub record_trace: bool,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            scheduling: Scheduling::RoundRobin,
            queue_sharing: QueueSharing::PerClass,
            hash_seeding: HashSeeding::PerSwitch,
            retransmit_cap: 100,
            max_sim_time: None,
            max_events: None,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub hash: u64,
    pub spray: u64,
}

impl Seeds {
    /// Engine seeds derived from one run seed.
    pub fn from_run_seed(seed: u64) -> Self {
        Self {
            hash: switch_seed(seed, 0x4543_4d50),
            spray: switch_seed(seed, 0x5250_5300),
        }
    }
}

pub struct Scenario<'a> {
    pub topology: &'a Topology,
    pub workload: &'a Workload,
    pub scheme: Scheme,
    pub control: ControlParams,
    pub engine: EngineParams,
    pub seeds: Seeds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceKind {
    FlowArrival,
    ServiceCompletion,
    LinkArrival,
    RuleInstall,
    RpsActivation,
    RetransmitTimer,
}

/// One executed event: (time, kind, subject id).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEntry {
    pub time: SimTime,
    pub kind: TraceKind,
    pub id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub spec: FlowSpec,
    pub first_departure: Option<f64>,
    pub last_arrival: Option<f64>,
    pub delivered_packets: u32,
    /// Dropped attempts.
    pub dropped_packets: u32,
    pub attempts: u32,
    pub retransmissions: u32,
    pub max_reorder: u32,
    /// Set once all packets have arrived.
    pub fct: Option<f64>,
    /// Completion time of the flow alone in an empty network under its
    /// forwarding behavior.
    pub ideal_fct: f64,
    /// Every delivered packet followed the same node sequence.
    pub single_path: bool,
    /// Delivered packets that took a random egress somewhere.
    pub sprayed_packets: u32,
    pub aborted: bool,
}

impl FlowRecord {
    pub fn is_complete(&self) -> bool {
        self.fct.is_some()
    }

    pub fn in_flight(&self) -> u32 {
        self.attempts - self.delivered_packets - self.dropped_packets
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub node: NodeId,
    pub counters: ClassCounters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scheme: Scheme,
    pub flows: Vec<FlowRecord>,
    pub nodes: Vec<NodeCounters>,
    pub detections: Vec<DetectionRecord>,
    pub truncated: bool,
    pub events: u64,
    pub end_time: f64,
    pub trace_hash: u64,
    pub trace: Option<Vec<TraceEntry>>,
    pub controller_messages: u64,
    pub rule_installations: u64,
}

impl RunResult {
    pub fn total_attempts(&self) -> u64 {
        self.flows.iter().map(|f| f.attempts as u64).sum()
    }

    pub fn total_drops(&self) -> u64 {
        self.flows.iter().map(|f| f.dropped_packets as u64).sum()
    }
}

enum Event {
    FlowArrival(u32),
    ServiceCompletion(u32),
    /// A packet reaches the far end of a port's link.
    LinkArrival(u32, Packet),
    InstallRules(u32),
    ActivateRps(u32),
    Retransmit(Packet),
}

enum NicEntry {
    Flow { flow: u32, next: u32, end: u32 },
    Retx(Packet),
}

enum Queueing {
    Nic(VecDeque<NicEntry>, Option<Packet>),
    Switch(PortQueues),
}

struct PortState {
    node: usize,
    peer: usize,
    /// Local index of this link at the peer, i.e. the peer's in-port.
    peer_port: u16,
    occupancy: SimTime,
    /// Link delay remaining after the port frees up.
    trailing: SimTime,
    q: Queueing,
}

struct FlowState {
    src: usize,
    dst: usize,
    src_mac: MacAddr,
    dst_mac: MacAddr,
    rtt: SimTime,
    first_departure: Option<SimTime>,
    last_arrival: SimTime,
    delivered: u32,
    dropped: u32,
    attempts: u32,
    originals_sent: u32,
    retransmissions: u32,
    highest_seq: Option<u32>,
    max_reorder: u32,
    path_sig: Option<u64>,
    single_path: bool,
    sprayed: u32,
    aborted: bool,
    detection: Option<usize>,
}

const SIG_PRIME: u64 = 0x0000_0100_0000_01b3;

#[inline]
fn extend_sig(sig: u64, node: usize) -> u64 {
    (sig ^ (node as u64 + 1)).wrapping_mul(SIG_PRIME)
}

struct Sim<'a> {
    topo: &'a Topology,
    flows_in: &'a [FlowSpec],
    scheme: Scheme,
    params: &'a EngineParams,
    timeline: Timeline<Event>,
    ports: Vec<PortState>,
    port_base: Vec<usize>,
    flows: Vec<FlowState>,
    hash_seeds: Vec<u64>,
    rng: ChaCha8Rng,
    samplers: Vec<Option<Sampler>>,
    tor_spray: Vec<TorSprayState>,
    tables: Vec<RuleTable>,
    fabric: Vec<usize>,
    controller: Controller,
    advertisements: Vec<Advertisement>,
    detections: Vec<DetectionRecord>,
    rule_installations: u64,
    events: u64,
    trace_hash: u64,
    trace: Option<Vec<TraceEntry>>,
}

/// Runs one scenario to completion (or until its budget is exhausted).
pub fn run(scenario: &Scenario<'_>) -> Result<RunResult> {
    scenario.control.validate()?;
    let topo = scenario.topology;
    let mut sim = Sim::new(scenario)?;
    let truncated = sim.run_loop()?;
    let end = sim.timeline.now();

    let path_sets = PathCache::new(topo);
    let flows = sim
        .flows
        .iter()
        .zip(scenario.workload.flows.iter())
        .map(|(st, spec)| {
            let complete = st.delivered == spec.size_packets && st.first_departure.is_some();
            let ideal_fct = ideal_fct_for(topo, &path_sets, spec, scenario.scheme, sim.hash_seeds.as_slice());
            FlowRecord {
                spec: spec.clone(),
                first_departure: st.first_departure.map(ns_to_secs),
                last_arrival: (st.delivered > 0).then(|| ns_to_secs(st.last_arrival)),
                delivered_packets: st.delivered,
                dropped_packets: st.dropped,
                attempts: st.attempts,
                retransmissions: st.retransmissions,
                max_reorder: st.max_reorder,
                fct: complete.then(|| ns_to_secs(st.last_arrival - st.first_departure.unwrap())),
                ideal_fct,
                single_path: st.single_path,
                sprayed_packets: st.sprayed,
                aborted: st.aborted,
            }
        })
        .collect();

    let nodes = topo
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| !n.is_server())
        .map(|(i, n)| {
            let mut c = ClassCounters::default();
            for p in &sim.ports[sim.port_base[i]..sim.port_base[i + 1]] {
                if let Queueing::Switch(q) = &p.q {
                    c.add(&q.counters);
                }
            }
            NodeCounters { node: *n, counters: c }
        })
        .collect();

    Ok(RunResult {
        scheme: scenario.scheme,
        flows,
        nodes,
        detections: sim.detections,
        truncated,
        events: sim.events,
        end_time: ns_to_secs(end),
        trace_hash: sim.trace_hash,
        trace: sim.trace,
        controller_messages: sim.controller.messages(),
        rule_installations: sim.rule_installations,
    })
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario<'a>) -> Result<Self> {
        let topo = sc.topology;
        let cap = topo.params().queue_capacity_packets();
        let mut ports = Vec::new();
        let mut port_base = Vec::with_capacity(topo.node_count() + 1);
        for v in 0..topo.node_count() {
            port_base.push(ports.len());
            for (local, p) in topo.ports(v).iter().enumerate() {
                let peer_port = topo.port_towards(p.peer, v).expect("links are symmetric") as u16;
                let q = if topo.node(v).is_server() {
                    Queueing::Nic(VecDeque::new(), None)
                } else {
                    Queueing::Switch(PortQueues::new(cap, sc.engine.queue_sharing, sc.engine.scheduling))
                };
                ports.push(PortState {
                    node: v,
                    peer: p.peer,
                    peer_port,
                    occupancy: topo.port_occupancy_ns(v, local),
                    trailing: topo.port_latency_ns(v, local) - topo.port_occupancy_ns(v, local),
                    q,
                });
            }
        }
        port_base.push(ports.len());

        let mut pairs = vec![None; topo.server_count() * topo.server_count()];
        let mut flows = Vec::with_capacity(sc.workload.flows.len());
        for f in &sc.workload.flows {
            let src = topo
                .server_index(f.src)
                .ok_or_else(|| Error::InvalidArgument(format!("flow {} source {} missing", f.flow_id, f.src)))?;
            let dst = topo
                .server_index(f.dst)
                .ok_or_else(|| Error::InvalidArgument(format!("flow {} destination {} missing", f.flow_id, f.dst)))?;
            if src == dst || f.size_packets == 0 {
                return Err(Error::InvalidArgument(format!("flow {} is degenerate", f.flow_id)));
            }
            let slot = &mut pairs[src * topo.server_count() + dst];
            let rtt = match *slot {
                Some(r) => r,
                None => {
                    let ps = topo.enumerate_paths(f.src, f.dst)?;
                    let r = secs_to_ns(2.0 * ps.paths[0].ideal_delay);
                    *slot = Some(r);
                    r
                }
            };
            flows.push(FlowState {
                src,
                dst,
                src_mac: server_mac(src as u16),
                dst_mac: server_mac(dst as u16),
                rtt,
                first_departure: None,
                last_arrival: 0,
                delivered: 0,
                dropped: 0,
                attempts: 0,
                originals_sent: 0,
                retransmissions: 0,
                highest_seq: None,
                max_reorder: 0,
                path_sig: None,
                single_path: true,
                sprayed: 0,
                aborted: false,
                detection: None,
            });
        }

        let hash_seeds = (0..topo.node_count())
            .map(|v| match sc.engine.hash_seeding {
                HashSeeding::PerSwitch => switch_seed(sc.seeds.hash, v),
                HashSeeding::Shared => sc.seeds.hash,
            })
            .collect();
        let samplers = topo
            .nodes()
            .iter()
            .map(|n| {
                (sc.scheme == Scheme::DiffFlow && n.tier == Tier::Tor).then(|| Sampler::new(*n, sc.control.sampling))
            })
            .collect();
        let fabric = topo
            .nodes()
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.tier, Tier::Aggregation | Tier::Core))
            .map(|(i, _)| i)
            .collect();

        let mut timeline = Timeline::new();
        if let Some(first) = sc.workload.flows.first() {
            timeline.schedule(first.arrival_ns, Event::FlowArrival(0));
        }
        Ok(Self {
            topo,
            flows_in: &sc.workload.flows,
            scheme: sc.scheme,
            params: &sc.engine,
            timeline,
            ports,
            port_base,
            flows,
            hash_seeds,
            rng: ChaCha8Rng::seed_from_u64(sc.seeds.spray),
            samplers,
            tor_spray: vec![TorSprayState::default(); topo.node_count()],
            tables: vec![RuleTable::new(); topo.node_count()],
            fabric,
            controller: Controller::new(&sc.control),
            advertisements: Vec::new(),
            detections: Vec::new(),
            rule_installations: 0,
            events: 0,
            trace_hash: 0xcbf2_9ce4_8422_2325,
            trace: sc.engine.record_trace.then(Vec::new),
        })
    }

    fn record(&mut self, time: SimTime, kind: TraceKind, id: u32) {
        let mut h = self.trace_hash;
        for word in [time, kind as u64, id as u64] {
            h = (h ^ word).wrapping_mul(SIG_PRIME);
            h ^= h >> 29;
        }
        self.trace_hash = h;
        if let Some(t) = &mut self.trace {
            t.push(TraceEntry { time, kind, id });
        }
    }

    /// Returns whether the run was cut short by its budget.
    fn run_loop(&mut self) -> Result<bool> {
        let max_time = self.params.max_sim_time.map(secs_to_ns);
        let max_events = self.params.max_events;
        while let Some((now, ev)) = self.timeline.pop() {
            if max_time.is_some_and(|m| now > m) || max_events.is_some_and(|m| self.events >= m) {
                let incomplete = self
                    .flows
                    .iter()
                    .zip(self.flows_in)
                    .any(|(st, spec)| st.delivered < spec.size_packets && !st.aborted);
                return Ok(incomplete);
            }
            self.events += 1;
            match ev {
                Event::FlowArrival(f) => {
                    self.record(now, TraceKind::FlowArrival, f);
                    self.on_flow_arrival(f, now);
                }
                Event::ServiceCompletion(p) => {
                    self.record(now, TraceKind::ServiceCompletion, p);
                    self.on_service_completion(p as usize, now);
                }
                Event::LinkArrival(p, pkt) => {
                    self.record(now, TraceKind::LinkArrival, p);
                    let (peer, in_port) = (self.ports[p as usize].peer, self.ports[p as usize].peer_port);
                    self.arrive(peer, in_port, pkt, now);
                }
                Event::InstallRules(a) => {
                    self.record(now, TraceKind::RuleInstall, a);
                    let adv = &self.advertisements[a as usize];
                    for (sw, rule) in &adv.installs {
                        self.tables[*sw].install(rule.clone());
                        self.rule_installations += 1;
                    }
                }
                Event::ActivateRps(a) => {
                    self.record(now, TraceKind::RpsActivation, a);
                    let adv = &self.advertisements[a as usize];
                    let fabric = self.fabric.iter().map(|&i| &self.tables[i]);
                    activate_rps_at_tor(&mut self.tor_spray[adv.tor], &adv.header, fabric)?;
                    let flow = adv.flow_id as usize;
                    if let Some(d) = self.flows[flow].detection {
                        self.detections[d].packets_sent_before_activation = Some(self.flows[flow].originals_sent);
                    }
                }
                Event::Retransmit(pkt) => {
                    self.record(now, TraceKind::RetransmitTimer, pkt.flow);
                    let src = self.flows[pkt.flow as usize].src;
                    let port = self.port_base[src];
                    if let Queueing::Nic(q, _) = &mut self.ports[port].q {
                        q.push_back(NicEntry::Retx(pkt));
                    }
                    self.try_start(port, now);
                }
            }
        }
        Ok(false)
    }

    fn on_flow_arrival(&mut self, f: u32, now: SimTime) {
        let spec = &self.flows_in[f as usize];
        let port = self.port_base[self.flows[f as usize].src];
        if let Queueing::Nic(q, _) = &mut self.ports[port].q {
            q.push_back(NicEntry::Flow {
                flow: f,
                next: 0,
                end: spec.size_packets,
            });
        }
        if let Some(next) = self.flows_in.get(f as usize + 1) {
            self.timeline.schedule(next.arrival_ns, Event::FlowArrival(f + 1));
        }
        self.try_start(port, now);
    }

    /// Starts service at an idle port with a non-empty queue.
    fn try_start(&mut self, port: usize, now: SimTime) {
        let occupancy = self.ports[port].occupancy;
        match &mut self.ports[port].q {
            Queueing::Switch(q) => {
                if q.start_service(now).is_some() {
                    self.timeline
                        .schedule(now + occupancy, Event::ServiceCompletion(port as u32));
                }
            }
            Queueing::Nic(q, in_service) => {
                if in_service.is_some() {
                    return;
                }
                let Some(front) = q.front_mut() else { return };
                let mut pkt = match front {
                    NicEntry::Flow { flow, next, end } => {
                        let f = *flow;
                        let spec = &self.flows_in[f as usize];
                        let pkt = Packet::new(f, *next, spec.class, now);
                        *next += 1;
                        if *next == *end {
                            q.pop_front();
                        }
                        pkt
                    }
                    NicEntry::Retx(_) => match q.pop_front() {
                        Some(NicEntry::Retx(mut p)) => {
                            p.created_at = now;
                            p.sprayed = false;
                            p
                        }
                        _ => unreachable!(),
                    },
                };
                let node = self.ports[port].node;
                pkt.path_sig = extend_sig(0, node);
                let st = &mut self.flows[pkt.flow as usize];
                st.first_departure.get_or_insert(now);
                st.attempts += 1;
                if pkt.retransmission_count == 0 {
                    st.originals_sent += 1;
                } else {
                    st.retransmissions += 1;
                }
                if let Queueing::Nic(_, in_service) = &mut self.ports[port].q {
                    *in_service = Some(pkt);
                }
                self.timeline
                    .schedule(now + occupancy, Event::ServiceCompletion(port as u32));
            }
        }
    }

    fn on_service_completion(&mut self, port: usize, now: SimTime) {
        let pkt = match &mut self.ports[port].q {
            Queueing::Switch(q) => q.finish_service(),
            Queueing::Nic(_, s) => s.take(),
        }
        .expect("service completion without a packet in service");
        let trailing = self.ports[port].trailing;
        if trailing == 0 {
            let (peer, in_port) = (self.ports[port].peer, self.ports[port].peer_port);
            self.arrive(peer, in_port, pkt, now);
        } else {
            self.timeline
                .schedule(now + trailing, Event::LinkArrival(port as u32, pkt));
        }
        self.try_start(port, now);
    }

    fn arrive(&mut self, node: usize, in_port: u16, mut pkt: Packet, now: SimTime) {
        pkt.path_sig = extend_sig(pkt.path_sig, node);
        let fi = pkt.flow as usize;
        if node == self.flows[fi].dst {
            self.deliver(pkt, now);
            return;
        }
        debug_assert!(!self.topo.node(node).is_server(), "servers do not forward");

        let header = PacketHeader {
            in_port,
            src_mac: self.flows[fi].src_mac,
            dst_mac: self.flows[fi].dst_mac,
            key: self.flows_in[fi].key,
        };
        if self.samplers[node].is_some() && self.topo.node(self.topo.ports(node)[in_port as usize].peer).is_server() {
            self.sample(node, fi, &header, now);
        }

        let (egress, sprayed) = self.choose_egress(node, fi, &header);
        pkt.sprayed |= sprayed;
        let port = self.port_base[node] + egress as usize;
        let Queueing::Switch(q) = &mut self.ports[port].q else {
            unreachable!("switch ports carry class queues")
        };
        match q.enqueue(pkt, now) {
            Ok(()) => self.try_start(port, now),
            Err(dropped) => self.on_drop(dropped, now),
        }
    }

    fn choose_egress(&mut self, node: usize, fi: usize, header: &PacketHeader) -> (u16, bool) {
        let dst = self.flows[fi].dst;
        let candidates = self.topo.next_hops(node, dst);
        let seed = self.hash_seeds[node];
        let spray = |rng: &mut ChaCha8Rng, c: &[u16]| (rps_select(c, rng), c.len() > 1);
        match self.scheme {
            Scheme::Ecmp => (ecmp_select(&header.key, candidates, seed), false),
            Scheme::Rps => spray(&mut self.rng, candidates),
            Scheme::DiffFlow => match self.topo.node(node).tier {
                Tier::Tor => {
                    if self.tor_spray[node].is_active(&header.key) {
                        spray(&mut self.rng, candidates)
                    } else {
                        (ecmp_select(&header.key, candidates, seed), false)
                    }
                }
                _ => match self.tables[node].lookup(header) {
                    Action::RandomEgress(ports) => spray(&mut self.rng, ports),
                    Action::FixedEgress(p) => (*p, false),
                    Action::Ecmp => (ecmp_select(&header.key, candidates, seed), false),
                },
            },
        }
    }

    fn sample(&mut self, tor: usize, fi: usize, header: &PacketHeader, now: SimTime) {
        let sampled = SampledPacket {
            flow_id: fi as u32,
            header: *header,
        };
        let sampler = self.samplers[tor].as_mut().expect("sampler present");
        let Some(event) = on_packet_at_tor(sampler, &sampled, now) else {
            return;
        };
        let st = &mut self.flows[fi];
        self.detections.push(DetectionRecord {
            time: ns_to_secs(now),
            flow_id: fi as u32,
            tor: self.topo.node(tor).to_string(),
            packets_sent_before_detection: st.originals_sent,
            packets_sent_before_activation: None,
        });
        st.detection = Some(self.detections.len() - 1);
        let dst = st.dst;
        if let Some(adv) = self.controller.advertise(self.topo, &event, dst) {
            let id = self.advertisements.len() as u32;
            let at = adv.at;
            self.advertisements.push(adv);
            self.timeline.schedule(at, Event::InstallRules(id));
            self.timeline.schedule(at, Event::ActivateRps(id));
        }
    }

    fn on_drop(&mut self, mut pkt: Packet, now: SimTime) {
        let st = &mut self.flows[pkt.flow as usize];
        st.dropped += 1;
        if pkt.retransmission_count >= self.params.retransmit_cap {
            st.aborted = true;
            return;
        }
        pkt.retransmission_count += 1;
        self.timeline.schedule(now + st.rtt, Event::Retransmit(pkt));
    }

    fn deliver(&mut self, pkt: Packet, now: SimTime) {
        let st = &mut self.flows[pkt.flow as usize];
        st.delivered += 1;
        st.sprayed += pkt.sprayed as u32;
        st.last_arrival = now;
        match st.highest_seq {
            Some(h) if pkt.seq < h => st.max_reorder = st.max_reorder.max(h - pkt.seq),
            _ => st.highest_seq = Some(pkt.seq),
        }
        match st.path_sig {
            None => st.path_sig = Some(pkt.path_sig),
            Some(s) if s != pkt.path_sig => st.single_path = false,
            _ => {}
        }
    }
}

/// Equal-cost path sets per server pair, built on demand.
pub struct PathCache<'a> {
    topo: &'a Topology,
    sets: std::cell::RefCell<Vec<Option<std::rc::Rc<PathSet>>>>,
}

impl<'a> PathCache<'a> {
    pub fn new(topo: &'a Topology) -> Self {
        let n = topo.server_count();
        Self {
            topo,
            sets: std::cell::RefCell::new(vec![None; n * n]),
        }
    }

    pub fn get(&self, src: usize, dst: usize) -> std::rc::Rc<PathSet> {
        let i = src * self.topo.server_count() + dst;
        if let Some(s) = &self.sets.borrow()[i] {
            return s.clone();
        }
        let set = std::rc::Rc::new(
            self.topo
                .enumerate_paths(NodeId::server(src as u16), NodeId::server(dst as u16))
                .expect("distinct servers"),
        );
        self.sets.borrow_mut()[i] = Some(set.clone());
        set
    }
}

/// Node sequence an ECMP-hashed flow follows with no rules installed.
pub fn ecmp_path(topo: &Topology, spec: &FlowSpec, hash_seeds: &[u64]) -> Path {
    let src = topo.server_index(spec.src).expect("server");
    let dst = topo.server_index(spec.dst).expect("server");
    let mut nodes = vec![src, topo.tor_of(src)];
    while *nodes.last().unwrap() != dst {
        let v = *nodes.last().unwrap();
        let port = ecmp_select(&spec.key, topo.next_hops(v, dst), hash_seeds[v]);
        nodes.push(topo.ports(v)[port as usize].peer);
    }
    topo.path_from_indices(nodes)
}

/// Ideal FCT reference: pinned flows use their own hashed path; sprayed
/// flows use the empty-network bound over the whole equal-cost set.
fn ideal_fct_for(topo: &Topology, cache: &PathCache<'_>, spec: &FlowSpec, scheme: Scheme, hash_seeds: &[u64]) -> f64 {
    if scheme.sprays(spec.class) {
        let set = cache.get(spec.src.index as usize, spec.dst.index as usize);
        let refs: Vec<&Path> = set.paths.iter().collect();
        topo.empty_network_fct(&refs, spec.size_packets)
    } else {
        let path = ecmp_path(topo, spec, hash_seeds);
        topo.empty_network_fct(&[&path], spec.size_packets)
    }
}
