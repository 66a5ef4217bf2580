//! Normalized FCT and drop-based throughput, per flow and per group.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{FlowRecord, RunResult, Scheme};
use crate::error::{Error, Result};
use crate::traffic::FlowClass;

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassFilter {
    All,
    Short,
    Long,
}

impl ClassFilter {
    pub const ALL: [ClassFilter; 3] = [ClassFilter::All, ClassFilter::Short, ClassFilter::Long];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassFilter::All => "all",
            ClassFilter::Short => "short",
            ClassFilter::Long => "long",
        }
    }

    pub fn matches(self, class: FlowClass) -> bool {
        match self {
            ClassFilter::All => true,
            ClassFilter::Short => class == FlowClass::Short,
            ClassFilter::Long => class == FlowClass::Long,
        }
    }
}

impl fmt::Display for ClassFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ClassFilter::All),
            "short" => Ok(ClassFilter::Short),
            "long" => Ok(ClassFilter::Long),
            other => Err(Error::InvalidArgument(format!("unknown class `{other}`"))),
        }
    }
}

/// Measured over ideal FCT; `None` for incomplete flows.
pub fn normalized_fct(flow: &FlowRecord) -> Option<f64> {
    let fct = flow.fct?;
    (flow.ideal_fct > 0.0).then(|| fct / flow.ideal_fct)
}

/// `1 - dropped / attempts` over the given flows; `None` with no attempts.
pub fn normalized_throughput<'a>(flows: impl IntoIterator<Item = &'a FlowRecord>) -> Option<f64> {
    let (drops, attempts) = flows.into_iter().fold((0u64, 0u64), |(d, a), f| {
        (d + f.dropped_packets as u64, a + f.attempts as u64)
    });
    (attempts > 0).then(|| 1.0 - drops as f64 / attempts as f64)
}

/// Mean and normal-approximation 95% half-width.
pub fn mean_ci95(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, Z95 * (var / n as f64).sqrt()))
}

/// Nearest-rank percentile of sorted values, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// One line of the per-flow CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub flow_id: u32,
    pub class: FlowClass,
    pub size: u32,
    pub scheme: Scheme,
    pub load: f64,
    pub seed: u64,
    pub fct: Option<f64>,
    pub ideal_fct: f64,
    pub normalized_fct: Option<f64>,
    pub drops: u32,
    pub retransmissions: u32,
    pub max_reorder: u32,
    pub attempts: u32,
}

impl FlowRow {
    pub fn new(flow: &FlowRecord, scheme: Scheme, load: f64, seed: u64) -> Self {
        Self {
            flow_id: flow.spec.flow_id,
            class: flow.spec.class,
            size: flow.spec.size_packets,
            scheme,
            load,
            seed,
            fct: flow.fct,
            ideal_fct: flow.ideal_fct,
            normalized_fct: normalized_fct(flow),
            drops: flow.dropped_packets,
            retransmissions: flow.retransmissions,
            max_reorder: flow.max_reorder,
            attempts: flow.attempts,
        }
    }
}

pub fn flow_rows(result: &RunResult, load: f64, seed: u64) -> Vec<FlowRow> {
    result
        .flows
        .iter()
        .map(|f| FlowRow::new(f, result.scheme, load, seed))
        .collect()
}

/// One line of the aggregate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scheme: Scheme,
    pub load: f64,
    pub class: ClassFilter,
    pub mean_norm_fct: f64,
    pub ci95: f64,
    pub norm_throughput: Option<f64>,
    /// Completed flows contributing to the FCT mean.
    pub flows: u64,
    pub drops: u64,
    pub p50_norm_fct: f64,
    pub p99_norm_fct: f64,
    pub incomplete: u64,
}

/// Groups rows by (scheme, load, class) with `All`, `Short` and `Long`
/// groups. Groups without a completed flow are omitted.
pub fn aggregate(rows: &[FlowRow]) -> Vec<MetricsRecord> {
    #[derive(Default)]
    struct Acc {
        norm: Vec<f64>,
        drops: u64,
        attempts: u64,
        incomplete: u64,
    }
    let mut groups: BTreeMap<(Scheme, u64, ClassFilter), Acc> = BTreeMap::new();
    // loads sort by value: non-negative f64 bit patterns are ordered
    for r in rows {
        for filter in ClassFilter::ALL {
            if !filter.matches(r.class) {
                continue;
            }
            let g = groups.entry((r.scheme, r.load.to_bits(), filter)).or_default();
            g.drops += r.drops as u64;
            g.attempts += r.attempts as u64;
            match r.normalized_fct {
                Some(v) => g.norm.push(v),
                None => g.incomplete += 1,
            }
        }
    }
    groups
        .into_iter()
        .filter_map(|((scheme, load, class), mut g)| {
            let (mean, ci) = mean_ci95(&g.norm)?;
            g.norm.sort_by(f64::total_cmp);
            Some(MetricsRecord {
                scheme,
                load: f64::from_bits(load),
                class,
                mean_norm_fct: mean,
                ci95: ci,
                norm_throughput: (g.attempts > 0).then(|| 1.0 - g.drops as f64 / g.attempts as f64),
                flows: g.norm.len() as u64,
                drops: g.drops,
                p50_norm_fct: percentile(&g.norm, 0.5).unwrap_or(f64::NAN),
                p99_norm_fct: percentile(&g.norm, 0.99).unwrap_or(f64::NAN),
                incomplete: g.incomplete,
            })
        })
        .collect()
}

pub fn write_csv<T: Serialize, W: std::io::Write>(rows: &[T], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned, R: std::io::Read>(r: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(class: FlowClass, norm: Option<f64>, drops: u32, attempts: u32) -> FlowRow {
        FlowRow {
            flow_id: 0,
            class,
            size: 5,
            scheme: Scheme::Ecmp,
            load: 0.5,
            seed: 1,
            fct: norm.map(|n| n * 1e-4),
            ideal_fct: 1e-4,
            normalized_fct: norm,
            drops,
            retransmissions: drops,
            max_reorder: 0,
            attempts,
        }
    }

    #[test]
    fn quantum_delay_example() {
        let spec = crate::traffic::FlowSpec {
            flow_id: 0,
            key: crate::forwarding::FiveTuple {
                src_ip: [10, 0, 0, 1].into(),
                dst_ip: [10, 0, 0, 2].into(),
                src_port: 1,
                dst_port: 2,
                protocol: 6,
            },
            class: FlowClass::Short,
            size_packets: 1,
            src: crate::topology::NodeId::server(0),
            dst: crate::topology::NodeId::server(1),
            arrival_ns: 0,
        };
        let rec = FlowRecord {
            spec,
            first_departure: Some(0.0),
            last_arrival: Some(36e-6),
            delivered_packets: 1,
            dropped_packets: 0,
            attempts: 1,
            retransmissions: 0,
            max_reorder: 0,
            fct: Some(36e-6),
            ideal_fct: 24e-6,
            single_path: true,
            sprayed_packets: 0,
            aborted: false,
        };
        assert!((normalized_fct(&rec).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(normalized_throughput([&rec]), Some(1.0));
        assert_eq!(normalized_throughput([]), None);
    }

    #[test]
    fn single_and_identical_groups() {
        let out = aggregate(&[row(FlowClass::Short, Some(1.7), 0, 5)]);
        let all = out.iter().find(|m| m.class == ClassFilter::All).unwrap();
        assert_eq!((all.mean_norm_fct, all.ci95, all.flows), (1.7, 0.0, 1));
        assert!(out.iter().all(|m| m.class != ClassFilter::Long));
        let rows = vec![row(FlowClass::Long, Some(2.0), 1, 10); 4];
        let out = aggregate(&rows);
        assert!(out.iter().all(|m| m.ci95 == 0.0 && m.mean_norm_fct == 2.0));
        assert_eq!(out[0].norm_throughput, Some(0.9));
    }

    #[test]
    fn incomplete_counted_apart() {
        let rows = [
            row(FlowClass::Short, Some(1.0), 0, 5),
            row(FlowClass::Short, None, 5, 5),
        ];
        let out = aggregate(&rows);
        assert_eq!(out[0].flows, 1);
        assert_eq!(out[0].incomplete, 1);
        assert_eq!(out[0].norm_throughput, Some(0.5));
    }

    #[test]
    fn ci_shrinks_with_sample_count() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let draw =
            |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.random::<f64>()).collect() };
        let (_, w1) = mean_ci95(&draw(10_000, &mut rng)).unwrap();
        let (_, w4) = mean_ci95(&draw(40_000, &mut rng)).unwrap();
        assert!((w1 / w4 - 2.0).abs() < 0.1, "{}", w1 / w4);
    }

    #[test]
    fn csv_round_trip_reproduces_aggregate() {
        let rows: Vec<FlowRow> = (0..50)
            .map(|i| {
                let class = if i % 7 == 0 { FlowClass::Long } else { FlowClass::Short };
                row(class, Some(1.0 + (i as f64).sqrt() / 3.0), i % 3, 10)
            })
            .collect();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let back: Vec<FlowRow> = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_csv(&aggregate(&rows), &mut a).unwrap();
        write_csv(&aggregate(&back), &mut b).unwrap();
        assert_eq!(a, b);
        let header = String::from_utf8(a).unwrap();
        assert!(header.starts_with("scheme,load,class,mean_norm_fct,ci95,norm_throughput,flows,drops,"));
    }

    #[test]
    fn percentile_ranks() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), Some(50.0));
        assert_eq!(percentile(&v, 0.99), Some(99.0));
        assert_eq!(percentile(&v, 0.0), Some(1.0));
    }

    proptest! {
        #[test]
        fn all_group_within_class_envelope(
            shorts in prop::collection::vec(1.0f64..10.0, 1..30),
            longs in prop::collection::vec(1.0f64..10.0, 1..30),
        ) {
            let mut rows: Vec<FlowRow> = shorts.iter().map(|&v| row(FlowClass::Short, Some(v), 0, 1)).collect();
            rows.extend(longs.iter().map(|&v| row(FlowClass::Long, Some(v), 0, 1)));
            let out = aggregate(&rows);
            let get = |c| out.iter().find(|m| m.class == c).unwrap().mean_norm_fct;
            let (a, s, l) = (get(ClassFilter::All), get(ClassFilter::Short), get(ClassFilter::Long));
            let weighted = (s * shorts.len() as f64 + l * longs.len() as f64) / rows.len() as f64;
            prop_assert!((a - weighted).abs() < 1e-9);
            prop_assert!(a >= s.min(l) - 1e-12 && a <= s.max(l) + 1e-12);
        }

        #[test]
        fn throughput_in_unit_interval(drops in prop::collection::vec(0u32..10, 1..20)) {
            let rows: Vec<FlowRow> = drops.iter().map(|&d| row(FlowClass::Short, Some(1.0), d, d + 3)).collect();
            for m in aggregate(&rows) {
                let t = m.norm_throughput.unwrap();
                prop_assert!((0.0..=1.0).contains(&t));
            }
        }
    }
}
