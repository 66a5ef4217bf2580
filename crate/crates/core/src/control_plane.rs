//! Long-flow detection and advertisement.
//!
//! ToRs sample packets entering the network from their servers. A flow seen
//! in two samples is reported to the controller, which installs a spray rule
//! at every aggregation and core switch and then tells the reporting ToR to
//! start spraying the flow.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forwarding::{Action, ForwardingRule, PacketHeader, RuleMatch, RuleTable};
use crate::time::{secs_to_ns, SimTime};
use crate::topology::{NodeId, Tier, Topology};

/// Priority given to controller-installed rules.
pub const LONG_FLOW_RULE_PRIORITY: u16 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SamplingMode {
    /// At each sampling instant the next transiting packet is sampled; the
    /// following instant is one period after that sample.
    Periodic { period: f64 },
    /// Every n-th transiting packet is sampled.
    EveryNth { n: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlParams {
    pub sampling: SamplingMode,
    /// Delay from detection to rule installation and ToR activation (seconds).
    pub control_latency: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            sampling: SamplingMode::Periodic { period: 1e-3 },
            control_latency: 100e-6,
        }
    }
}

impl ControlParams {
    pub fn validate(&self) -> Result<()> {
        match self.sampling {
            SamplingMode::Periodic { period } if !(period >= 0.0) || !period.is_finite() => {
                return Err(Error::config(
                    "control.sampling.period",
                    "must be a finite non-negative number",
                ))
            }
            SamplingMode::EveryNth { n: 0 } => return Err(Error::config("control.sampling.n", "must be positive")),
            _ => {}
        }
        if !(self.control_latency >= 0.0) || !self.control_latency.is_finite() {
            return Err(Error::config(
                "control.control_latency",
                "must be a finite non-negative number",
            ));
        }
        Ok(())
    }
}

/// What a ToR reads from a sampled packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampledPacket {
    pub flow_id: u32,
    pub header: PacketHeader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionEvent {
    pub flow_id: u32,
    pub header: PacketHeader,
    pub tor: NodeId,
    pub time: SimTime,
}

#[derive(Debug, Clone)]
enum Clock {
    Periodic { period: SimTime, next: SimTime },
    EveryNth { n: u32, seen: u32 },
}

/// Sampling state of one ToR.
#[derive(Debug, Clone)]
pub struct Sampler {
    tor: NodeId,
    clock: Clock,
    counts: HashMap<crate::forwarding::FiveTuple, u32>,
    detected: HashSet<crate::forwarding::FiveTuple>,
    samples: u64,
}

impl Sampler {
    pub fn new(tor: NodeId, mode: SamplingMode) -> Self {
        let clock = match mode {
            SamplingMode::Periodic { period } => {
                let period = secs_to_ns(period);
                Clock::Periodic { period, next: period }
            }
            SamplingMode::EveryNth { n } => Clock::EveryNth { n, seen: 0 },
        };
        Self {
            tor,
            clock,
            counts: HashMap::new(),
            detected: HashSet::new(),
            samples: 0,
        }
    }

    pub fn tor(&self) -> NodeId {
        self.tor
    }

    pub fn samples_taken(&self) -> u64 {
        self.samples
    }

    pub fn is_detected(&self, key: &crate::forwarding::FiveTuple) -> bool {
        self.detected.contains(key)
    }

    pub fn detected_count(&self) -> usize {
        self.detected.len()
    }

    fn take_sample(&mut self, now: SimTime) -> bool {
        match &mut self.clock {
            Clock::Periodic { period, next } => {
                if now >= *next {
                    *next = now + *period;
                    true
                } else {
                    false
                }
            }
            Clock::EveryNth { n, seen } => {
                *seen += 1;
                if *seen >= *n {
                    *seen = 0;
                    true
                } else {
                    false
                }
            }
        }
    }
}

/// Runs the sampler for one packet transiting the ToR. Returns a detection
/// exactly when the packet's flow reaches its second sample.
pub fn on_packet_at_tor(sampler: &mut Sampler, packet: &SampledPacket, now: SimTime) -> Option<DetectionEvent> {
    if !sampler.take_sample(now) {
        return None;
    }
    sampler.samples += 1;
    let key = packet.header.key;
    let count = sampler.counts.entry(key).or_insert(0);
    *count += 1;
    if *count == 2 && sampler.detected.insert(key) {
        Some(DetectionEvent {
            flow_id: packet.flow_id,
            header: packet.header,
            tor: sampler.tor,
            time: now,
        })
    } else {
        None
    }
}

/// Rule installations and the ToR activation that follow one detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Advertisement {
    pub flow_id: u32,
    pub at: SimTime,
    /// (dense switch index, rule), in switch order.
    pub installs: Vec<(usize, ForwardingRule)>,
    pub tor: usize,
    pub header: PacketHeader,
}

#[derive(Debug, Clone)]
pub struct Controller {
    known: HashSet<crate::forwarding::FiveTuple>,
    latency: SimTime,
    messages: u64,
}

impl Controller {
    pub fn new(params: &ControlParams) -> Self {
        Self {
            known: HashSet::new(),
            latency: secs_to_ns(params.control_latency),
            messages: 0,
        }
    }

    pub fn messages(&self) -> u64 {
        self.messages
    }

    pub fn knows(&self, key: &crate::forwarding::FiveTuple) -> bool {
        self.known.contains(key)
    }

    /// Plans a spray rule at every aggregation and core switch for the
    /// detected flow. A repeated report for a known flow is a no-op.
    pub fn advertise(
        &mut self,
        topology: &Topology,
        event: &DetectionEvent,
        dst_server: usize,
    ) -> Option<Advertisement> {
        if !self.known.insert(event.header.key) {
            return None;
        }
        self.messages += 1;
        let matcher = RuleMatch::for_flow(event.header.key, event.header.src_mac, event.header.dst_mac);
        let installs = topology
            .nodes()
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.tier, Tier::Aggregation | Tier::Core))
            .map(|(i, _)| {
                let ports = topology.next_hops(i, dst_server).to_vec();
                (
                    i,
                    ForwardingRule {
                        matcher: matcher.clone(),
                        action: Action::RandomEgress(ports),
                        priority: LONG_FLOW_RULE_PRIORITY,
                    },
                )
            })
            .collect();
        let tor = topology.index_of(event.tor).expect("detecting ToR exists");
        Some(Advertisement {
            flow_id: event.flow_id,
            at: event.time + self.latency,
            installs,
            tor,
            header: event.header,
        })
    }
}

/// Flows a ToR currently sprays.
#[derive(Debug, Clone, Default)]
pub struct TorSprayState {
    active: HashSet<crate::forwarding::FiveTuple>,
}

impl TorSprayState {
    pub fn is_active(&self, key: &crate::forwarding::FiveTuple) -> bool {
        self.active.contains(key)
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }
}

/// Switches the flow to spraying at its ToR. Every aggregation and core
/// table must already carry the flow's rule.
pub fn activate_rps_at_tor<'a>(
    tor: &mut TorSprayState,
    header: &PacketHeader,
    fabric_tables: impl IntoIterator<Item = &'a RuleTable>,
) -> Result<()> {
    for table in fabric_tables {
        let installed = table
            .matching_rule(header)
            .is_some_and(|r| matches!(r.action, Action::RandomEgress(_)));
        if !installed {
            return Err(Error::Contract(format!(
                "spray activation for {} before rules were installed",
                header.key
            )));
        }
    }
    tor.active.insert(header.key);
    Ok(())
}

/// One row of the detection log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub time: f64,
    pub flow_id: u32,
    pub tor: String,
    pub packets_sent_before_detection: u32,
    pub packets_sent_before_activation: Option<u32>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forwarding::{server_mac, FiveTuple, PROTO_TCP};
    use crate::topology::TopologyParams;
    use std::net::Ipv4Addr;

    fn pkt(sport: u16) -> SampledPacket {
        SampledPacket {
            flow_id: sport as u32,
            header: PacketHeader {
                in_port: 0,
                src_mac: server_mac(3),
                dst_mac: server_mac(4),
                key: FiveTuple {
                    src_ip: Ipv4Addr::new(172, 16, 2, 2),
                    dst_ip: Ipv4Addr::new(172, 16, 3, 1),
                    src_port: sport,
                    dst_port: 1234,
                    protocol: PROTO_TCP,
                },
            },
        }
    }

    const TOR: NodeId = NodeId::new(Tier::Tor, 1);

    #[test]
    fn single_packet_flow_never_detected() {
        let mut s = Sampler::new(TOR, SamplingMode::Periodic { period: 0.0 });
        assert!(on_packet_at_tor(&mut s, &pkt(1), 10).is_none());
        assert!(on_packet_at_tor(&mut s, &pkt(2), 20).is_none());
    }

    #[test]
    fn zero_period_detects_second_packet() {
        let mut s = Sampler::new(TOR, SamplingMode::Periodic { period: 0.0 });
        assert!(on_packet_at_tor(&mut s, &pkt(1), 0).is_none());
        let ev = on_packet_at_tor(&mut s, &pkt(1), 12_000).unwrap();
        assert_eq!(ev.time, 12_000);
        // later samples of a detected flow do not re-report
        assert!(on_packet_at_tor(&mut s, &pkt(1), 24_000).is_none());
    }

    #[test]
    fn back_to_back_long_flow_detected_after_two_periods() {
        let mut s = Sampler::new(TOR, SamplingMode::Periodic { period: 3e-3 });
        let mut detected_at = None;
        for i in 0..1000u64 {
            // packet i reaches the ToR when its transmission completes
            let now = (i + 1) * 12_000;
            if on_packet_at_tor(&mut s, &pkt(9), now).is_some() {
                detected_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(detected_at, Some(500));
    }

    #[test]
    fn short_span_flow_cannot_be_sampled_twice() {
        let mut s = Sampler::new(TOR, SamplingMode::Periodic { period: 1e-3 });
        // ToR idle until just before an instant, then a 10-packet flow
        let start = 1_999_000;
        for i in 0..10u64 {
            assert!(on_packet_at_tor(&mut s, &pkt(5), start + i * 12_000).is_none());
        }
    }

    #[test]
    fn every_nth() {
        let mut s = Sampler::new(TOR, SamplingMode::EveryNth { n: 3 });
        let hits: Vec<bool> = (0..6).map(|i| on_packet_at_tor(&mut s, &pkt(1), i).is_some()).collect();
        assert_eq!(hits, [false, false, false, false, false, true]);
    }

    #[test]
    fn advertise_installs_everywhere_once() {
        let topo = Topology::new(TopologyParams::default()).unwrap();
        let mut c = Controller::new(&ControlParams::default());
        let ev = DetectionEvent {
            flow_id: 7,
            header: pkt(6543).header,
            tor: TOR,
            time: 1_000,
        };
        let adv = c.advertise(&topo, &ev, 4).unwrap();
        assert_eq!(adv.installs.len(), 6);
        assert_eq!(adv.at, 1_000 + 100_000);
        assert_eq!(topo.node(adv.tor), TOR);
        assert!(c.advertise(&topo, &ev, 4).is_none());
        assert_eq!(c.messages(), 1);
    }

    #[test]
    fn activation_requires_installed_rules() {
        let topo = Topology::new(TopologyParams::default()).unwrap();
        let mut c = Controller::new(&ControlParams::default());
        let header = pkt(6543).header;
        let ev = DetectionEvent {
            flow_id: 1,
            header,
            tor: TOR,
            time: 0,
        };
        let adv = c.advertise(&topo, &ev, 4).unwrap();
        let mut tables = vec![RuleTable::new(); 6];
        let mut tor = TorSprayState::default();
        assert!(matches!(
            activate_rps_at_tor(&mut tor, &header, &tables),
            Err(Error::Contract(_))
        ));
        assert!(!tor.is_active(&header.key));
        for (t, (_, rule)) in tables.iter_mut().zip(adv.installs) {
            t.install(rule);
        }
        activate_rps_at_tor(&mut tor, &header, &tables).unwrap();
        assert!(tor.is_active(&header.key));
    }

    #[test]
    fn distinct_flows_get_distinct_rules() {
        let topo = Topology::new(TopologyParams::default()).unwrap();
        let mut c = Controller::new(&ControlParams::default());
        let mut tables = vec![RuleTable::new(); topo.node_count()];
        for sport in [100, 200] {
            let ev = DetectionEvent {
                flow_id: sport as u32,
                header: pkt(sport).header,
                tor: TOR,
                time: 0,
            };
            for (sw, rule) in c.advertise(&topo, &ev, 4).unwrap().installs {
                tables[sw].install(rule);
            }
        }
        let a2 = topo.index_of(NodeId::new(Tier::Aggregation, 1)).unwrap();
        assert_eq!(tables[a2].len(), 2);
        let dump = tables[a2].dump(NodeId::new(Tier::Aggregation, 1));
        assert!(dump.contains(" 100 ") && dump.contains(" 200 "));
    }
}
