//! Per-packet egress selection and the exact-match rule table.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::net::Ipv4Addr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::topology::{NodeId, Topology};

pub const PROTO_TCP: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FiveTuple {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

impl FiveTuple {
    /// Canonical network-order encoding used for hashing.
    pub fn to_bytes(&self) -> [u8; 13] {
        let mut b = [0u8; 13];
        b[0..4].copy_from_slice(&self.src_ip.octets());
        b[4..8].copy_from_slice(&self.dst_ip.octets());
        b[8..10].copy_from_slice(&self.src_port.to_be_bytes());
        b[10..12].copy_from_slice(&self.dst_port.to_be_bytes());
        b[12] = self.protocol;
        b
    }
}

impl fmt::Display for FiveTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{} -> {}:{} proto {}",
            self.src_ip, self.src_port, self.dst_ip, self.dst_port, self.protocol
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MacAddr(pub [u8; 6]);

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

/// Addresses synthesized one-to-one from server ordinals.
pub fn server_mac(server: u16) -> MacAddr {
    let [hi, lo] = server.to_be_bytes();
    MacAddr([0x00, 0x11, 0x22, 0x01, hi, lo])
}

pub fn server_ip(topology: &Topology, server: u16) -> Ipv4Addr {
    let per_tor = topology.params().servers_per_tor;
    let tor = server / per_tor;
    let host = server % per_tor;
    let [t_hi, t_lo] = tor.to_be_bytes();
    Ipv4Addr::new(172, 16 + t_hi, t_lo + 1, (host + 1) as u8)
}

/// Header fields a switch can match on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketHeader {
    pub in_port: u16,
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    pub key: FiveTuple,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

/// Seeded 64-bit hash of a five-tuple: FNV-1a over the seed and the canonical
/// bytes, followed by a murmur3 finalizer to spread the low bits.
pub fn flow_hash(key: &FiveTuple, seed: u64) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().into_iter().chain(key.to_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    fmix64(h)
}

/// Derives a per-switch hash seed.
pub fn switch_seed(base: u64, node: usize) -> u64 {
    fmix64(base ^ (node as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

pub fn ecmp_select(key: &FiveTuple, candidates: &[u16], seed: u64) -> u16 {
    assert!(!candidates.is_empty(), "no egress candidates");
    candidates[(flow_hash(key, seed) % candidates.len() as u64) as usize]
}

pub fn rps_select<R: Rng + ?Sized>(candidates: &[u16], rng: &mut R) -> u16 {
    assert!(!candidates.is_empty(), "no egress candidates");
    if candidates.len() == 1 {
        return candidates[0];
    }
    candidates[rng.random_range(0..candidates.len())]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleMatch {
    pub in_port: Option<u16>,
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
}

impl RuleMatch {
    pub fn for_flow(key: FiveTuple, src_mac: MacAddr, dst_mac: MacAddr) -> Self {
        Self {
            in_port: None,
            src_mac,
            dst_mac,
            src_ip: key.src_ip,
            dst_ip: key.dst_ip,
            src_port: key.src_port,
            dst_port: key.dst_port,
        }
    }

    pub fn matches(&self, h: &PacketHeader) -> bool {
        self.in_port.is_none_or(|p| p == h.in_port)
            && self.src_mac == h.src_mac
            && self.dst_mac == h.dst_mac
            && self.src_ip == h.key.src_ip
            && self.dst_ip == h.key.dst_ip
            && self.src_port == h.key.src_port
            && self.dst_port == h.key.dst_port
    }

    fn index_key(&self) -> IndexKey {
        (self.src_ip, self.dst_ip, self.src_port, self.dst_port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    FixedEgress(u16),
    /// Spray uniformly over these ports.
    RandomEgress(Vec<u16>),
    /// Default behavior: hash the five-tuple over the shortest-path egresses.
    Ecmp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardingRule {
    pub matcher: RuleMatch,
    pub action: Action,
    pub priority: u16,
}

type IndexKey = (Ipv4Addr, Ipv4Addr, u16, u16);

/// Exact-match rules plus the ECMP default. Lookup is total.
#[derive(Debug, Clone, Default)]
pub struct RuleTable {
    rules: Vec<ForwardingRule>,
    index: HashMap<IndexKey, Vec<usize>>,
}

static DEFAULT_ACTION: Action = Action::Ecmp;

impl RuleTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> &[ForwardingRule] {
        &self.rules
    }

    pub fn install(&mut self, rule: ForwardingRule) {
        let k = rule.matcher.index_key();
        self.index.entry(k).or_default().push(self.rules.len());
        self.rules.push(rule);
    }

    /// Highest-priority matching rule; the earliest installed wins a tie.
    pub fn matching_rule(&self, header: &PacketHeader) -> Option<&ForwardingRule> {
        let k = (
            header.key.src_ip,
            header.key.dst_ip,
            header.key.src_port,
            header.key.dst_port,
        );
        let ids = self.index.get(&k)?;
        let mut best: Option<&ForwardingRule> = None;
        for &i in ids {
            let r = &self.rules[i];
            if r.matcher.matches(header) && best.is_none_or(|b| r.priority > b.priority) {
                best = Some(r);
            }
        }
        best
    }

    pub fn lookup(&self, header: &PacketHeader) -> &Action {
        self.matching_rule(header).map_or(&DEFAULT_ACTION, |r| &r.action)
    }

    /// Human-readable dump in the shape of a switch flow table.
    pub fn dump(&self, switch: NodeId) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "switch {switch}: {} rule(s), default ECMP", self.rules.len());
        let _ = writeln!(
            out,
            "{:<8} {:<18} {:<18} {:<15} {:<15} {:<7} {:<7} {:<5} action",
            "in_port", "src_mac", "dst_mac", "src_ip", "dst_ip", "sport", "dport", "prio"
        );
        for r in &self.rules {
            let m = &r.matcher;
            let action = match &r.action {
                Action::FixedEgress(p) => format!("output:{p}"),
                Action::RandomEgress(ps) => format!(
                    "random:[{}]",
                    ps.iter().map(u16::to_string).collect::<Vec<_>>().join(",")
                ),
                Action::Ecmp => "ecmp".to_owned(),
            };
            let _ = writeln!(
                out,
                "{:<8} {:<18} {:<18} {:<15} {:<15} {:<7} {:<7} {:<5} {}",
                m.in_port.map_or("*".to_owned(), |p| p.to_string()),
                m.src_mac.to_string(),
                m.dst_mac.to_string(),
                m.src_ip.to_string(),
                m.dst_ip.to_string(),
                m.src_port,
                m.dst_port,
                r.priority,
                action
            );
        }
        out
    }
}
