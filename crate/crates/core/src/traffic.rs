//! Flow workload generation: Poisson arrivals, Bernoulli short/long mix and
//! truncated-Poisson flow sizes.

use std::fmt::{self, Write as _};
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forwarding::{server_ip, FiveTuple, PROTO_TCP};
use crate::time::{ns_to_secs, secs_to_ns, SimTime};
use crate::topology::{NodeId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowClass {
    Short,
    Long,
}

impl FlowClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowClass::Short => "short",
            FlowClass::Long => "long",
        }
    }
}

impl fmt::Display for FlowClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FlowClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short" => Ok(FlowClass::Short),
            "long" => Ok(FlowClass::Long),
            other => Err(Error::InvalidArgument(format!("unknown flow class `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub flow_id: u32,
    pub key: FiveTuple,
    pub class: FlowClass,
    pub size_packets: u32,
    pub src: NodeId,
    pub dst: NodeId,
    pub arrival_ns: SimTime,
}

impl FlowSpec {
    pub fn arrival_time(&self) -> f64 {
        ns_to_secs(self.arrival_ns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "pairs")]
pub enum TrafficMatrix {
    /// Source uniform over servers, destination uniform over the others.
    Uniform,
    /// Each flow picks one of these (src, dst) server ordinals uniformly.
    Pairs(Vec<(u16, u16)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadParams {
    pub short_fraction: f64,
    pub mean_short: f64,
    pub mean_long: f64,
    pub short_range: (u32, u32),
    pub long_range: (u32, u32),
    /// Offered load per server access link, in Erlang.
    pub load: f64,
    pub flow_count: Option<usize>,
    /// Stop generating once arrivals pass this time (seconds).
    pub duration: Option<f64>,
    pub seed: u64,
    pub matrix: TrafficMatrix,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        Self {
            short_fraction: 0.9,
            mean_short: 6.0,
            mean_long: 666.0,
            short_range: (1, 10),
            long_range: (11, 1000),
            load: 0.5,
            flow_count: Some(50_000),
            duration: None,
            seed: 1,
            matrix: TrafficMatrix::Uniform,
        }
    }
}

impl WorkloadParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.short_fraction) {
            return Err(Error::config("workload.short_fraction", "must lie in [0, 1]"));
        }
        let (slo, shi) = self.short_range;
        let (llo, lhi) = self.long_range;
        if slo == 0 || slo > shi {
            return Err(Error::config(
                "workload.short_range",
                "must be a non-empty range starting at 1 or more",
            ));
        }
        if llo == 0 || llo > lhi {
            return Err(Error::config(
                "workload.long_range",
                "must be a non-empty range starting at 1 or more",
            ));
        }
        if !(self.mean_short >= slo as f64 && self.mean_short <= shi as f64) {
            return Err(Error::config("workload.mean_short", "must lie inside short_range"));
        }
        if !(self.mean_long >= llo as f64 && self.mean_long <= lhi as f64) {
            return Err(Error::config("workload.mean_long", "must lie inside long_range"));
        }
        if !(self.load > 0.0) || !self.load.is_finite() {
            return Err(Error::config("workload.load", "must be positive"));
        }
        if self.flow_count.is_none() && self.duration.is_none() {
            return Err(Error::config(
                "workload.flow_count",
                "either flow_count or duration must be set",
            ));
        }
        if let TrafficMatrix::Pairs(p) = &self.matrix {
            if p.is_empty() || p.iter().any(|(s, d)| s == d) {
                return Err(Error::config(
                    "workload.matrix",
                    "pairs must be non-empty with distinct endpoints",
                ));
            }
        }
        Ok(())
    }

    pub fn range(&self, class: FlowClass) -> (u32, u32) {
        match class {
            FlowClass::Short => self.short_range,
            FlowClass::Long => self.long_range,
        }
    }

    fn mean(&self, class: FlowClass) -> f64 {
        match class {
            FlowClass::Short => self.mean_short,
            FlowClass::Long => self.mean_long,
        }
    }

    /// Expected flow size in bits.
    pub fn mean_flow_bits(&self, packet_bits: f64) -> f64 {
        (self.short_fraction * self.mean_short + (1.0 - self.short_fraction) * self.mean_long) * packet_bits
    }
}

/// Draws Poisson(mean) for the class and redraws until the value lies in the
/// class range.
pub fn sample_flow_size<R: Rng + ?Sized>(class: FlowClass, params: &WorkloadParams, rng: &mut R) -> u32 {
    let (lo, hi) = params.range(class);
    let dist = Poisson::new(params.mean(class)).expect("mean validated positive");
    loop {
        let v: f64 = dist.sample(rng);
        let v = v as u32;
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
}

/// Flow arrivals per second at one source server so that its access link is
/// offered `load * link_rate` bits per second.
pub fn arrival_rate_for_load(params: &WorkloadParams, link_rate_bps: f64, packet_bits: f64) -> f64 {
    if params.load <= 0.0 {
        return 0.0;
    }
    params.load * link_rate_bps / params.mean_flow_bits(packet_bits)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const EPHEMERAL_BASE: u32 = 1024;
const EPHEMERAL_SPAN: u32 = 65536 - EPHEMERAL_BASE;

/// Five-tuple derived from the flow ordinal and seed. The port pair is an
/// injective function of `flow_id` for fewer than 2^32 flows, so keys are
/// unique within a run.
pub fn synthesize_key(topology: &Topology, flow_id: u32, seed: u64, src: u16, dst: u16) -> FiveTuple {
    let offset = splitmix(seed) % EPHEMERAL_SPAN as u64;
    let n = flow_id as u64 + offset;
    let span = EPHEMERAL_SPAN as u64;
    let hi_offset = splitmix(seed ^ 0x5555_5555) % span;
    FiveTuple {
        src_ip: server_ip(topology, src),
        dst_ip: server_ip(topology, dst),
        src_port: (EPHEMERAL_BASE as u64 + n % span) as u16,
        dst_port: (EPHEMERAL_BASE as u64 + (n / span + hi_offset) % span) as u16,
        protocol: PROTO_TCP,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub seed: u64,
    pub flows: Vec<FlowSpec>,
}

pub fn generate_workload<R: Rng + ?Sized>(
    params: &WorkloadParams,
    topology: &Topology,
    rng: &mut R,
) -> Result<Workload> {
    params.validate()?;
    let n_servers = topology.server_count();
    if n_servers < 2 {
        return Err(Error::InvalidArgument("workload needs at least two servers".into()));
    }
    let tp = topology.params();
    let per_server = arrival_rate_for_load(params, tp.link_rate_bps, tp.packet_bits());
    let aggregate = per_server * n_servers as f64;
    let gaps = Exp::new(aggregate).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut flows = Vec::new();
    let mut t = 0.0f64;
    loop {
        if params.flow_count.is_some_and(|n| flows.len() >= n) {
            break;
        }
        t += gaps.sample(rng);
        if params.duration.is_some_and(|d| t > d) {
            break;
        }
        let class = if rng.random_bool(params.short_fraction) {
            FlowClass::Short
        } else {
            FlowClass::Long
        };
        let size = sample_flow_size(class, params, rng);
        let (src, dst) = match &params.matrix {
            TrafficMatrix::Uniform => {
                let s = rng.random_range(0..n_servers);
                let mut d = rng.random_range(0..n_servers - 1);
                if d >= s {
                    d += 1;
                }
                (s as u16, d as u16)
            }
            TrafficMatrix::Pairs(pairs) => pairs[rng.random_range(0..pairs.len())],
        };
        if src as usize >= n_servers || dst as usize >= n_servers {
            return Err(Error::config("workload.matrix", "pair refers to a missing server"));
        }
        let flow_id = flows.len() as u32;
        flows.push(FlowSpec {
            flow_id,
            key: synthesize_key(topology, flow_id, params.seed, src, dst),
            class,
            size_packets: size,
            src: NodeId::server(src),
            dst: NodeId::server(dst),
            arrival_ns: secs_to_ns(t),
        });
    }
    Ok(Workload {
        seed: params.seed,
        flows,
    })
}

impl Workload {
    /// Generates with a ChaCha8 stream seeded from `params.seed`.
    pub fn generate(params: &WorkloadParams, topology: &Topology) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        generate_workload(params, topology, &mut rng)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# diffflow workload v1");
        let _ = writeln!(s, "# seed={}", self.seed);
        let _ = writeln!(s, "# flow_id arrival_time class size_packets src dst");
        for f in &self.flows {
            let _ = writeln!(
                s,
                "{} {}.{:09} {} {} {} {}",
                f.flow_id,
                f.arrival_ns / 1_000_000_000,
                f.arrival_ns % 1_000_000_000,
                f.class,
                f.size_packets,
                f.src.index,
                f.dst.index
            );
        }
        s
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    /// SHA-256 of the text dump; equal digests mean identical workloads.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Parses the line format written by [`Workload::to_text`]. Five-tuples
    /// are rebuilt from the recorded seed.
    pub fn read_text<R: BufRead>(reader: R, topology: &Topology, params: &WorkloadParams) -> Result<Self> {
        let mut seed = None;
        let mut flows: Vec<FlowSpec> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(comment) = trimmed.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("seed=") {
                    seed = Some(v.parse().map_err(|_| Error::parse(lineno, "bad seed"))?);
                }
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(Error::parse(lineno, format!("expected 6 fields, got {}", fields.len())));
            }
            let num = |s: &str, what: &str| -> Result<u64> {
                s.parse().map_err(|_| Error::parse(lineno, format!("bad {what} `{s}`")))
            };
            let flow_id = num(fields[0], "flow_id")? as u32;
            let arrival_ns = parse_seconds_ns(fields[1]).ok_or_else(|| Error::parse(lineno, "bad arrival_time"))?;
            let class: FlowClass = fields[2]
                .parse()
                .map_err(|e: Error| Error::parse(lineno, e.to_string()))?;
            let size = num(fields[3], "size_packets")? as u32;
            let src = num(fields[4], "src")? as u16;
            let dst = num(fields[5], "dst")? as u16;
            let (lo, hi) = params.range(class);
            if !(lo..=hi).contains(&size) {
                return Err(Error::parse(
                    lineno,
                    format!("{class} flow of {size} packets is out of range"),
                ));
            }
            if src == dst || src as usize >= topology.server_count() || dst as usize >= topology.server_count() {
                return Err(Error::parse(lineno, "bad endpoints"));
            }
            if flow_id as usize != flows.len() {
                return Err(Error::parse(lineno, "flow ids must be consecutive from 0"));
            }
            if flows.last().is_some_and(|p| p.arrival_ns > arrival_ns) {
                return Err(Error::parse(lineno, "arrival times must be nondecreasing"));
            }
            let seed = seed.ok_or_else(|| Error::parse(lineno, "missing `# seed=` header"))?;
            flows.push(FlowSpec {
                flow_id,
                key: synthesize_key(topology, flow_id, seed, src, dst),
                class,
                size_packets: size,
                src: NodeId::server(src),
                dst: NodeId::server(dst),
                arrival_ns,
            });
        }
        Ok(Workload {
            seed: seed.unwrap_or(0),
            flows,
        })
    }
}

fn parse_seconds_ns(s: &str) -> Option<SimTime> {
    let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
    if frac.len() > 9 || !frac.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let whole: u64 = whole.parse().ok()?;
    let frac_ns: u64 = if frac.is_empty() {
        0
    } else {
        frac.parse::<u64>().ok()? * 10u64.pow(9 - frac.len() as u32)
    };
    Some(whole * 1_000_000_000 + frac_ns)
}
